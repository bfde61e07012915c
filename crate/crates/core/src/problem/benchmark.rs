//! Built-in benchmark problems.

use super::{DynamicsKind, GameDynamics, MarginFn, ProblemSpec, SolveMode};
use crate::error::{Error, Result};
use crate::grid::GridSpec;

pub const BENCHMARKS: [&str; 4] = ["di2d", "carts6d", "carts6d-viability", "carts6d-brs"];

const DT: f64 = 0.02;
const GAMMA: f64 = 0.99;

fn unknown(name: &str) -> Error {
    Error::UnknownBenchmark { name: name.to_string(), available: BENCHMARKS.join(", ") }
}

fn scalar_actions() -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    (vec![vec![-1.0], vec![1.0]], vec![vec![-0.5], vec![0.5]])
}

/// Keeps carts 2 and 3 at distance at least 2 from cart 1:
/// `min((x1 - 2)^2 + x2^2, (x1 + 2)^2 + x3^2) - 4`, state `[x1, v1, x2, v2, x3, v3]`.
fn cart_separation() -> MarginFn {
    MarginFn::min(vec![
        MarginFn::scale(-4.0, MarginFn::sphere_on(vec![0, 2], vec![2.0, 0.0], vec![2.0, 2.0])),
        MarginFn::scale(-4.0, MarginFn::sphere_on(vec![0, 4], vec![-2.0, 0.0], vec![2.0, 2.0])),
    ])
}

pub fn builtin_benchmark(name: &str) -> Result<ProblemSpec> {
    let (controls, disturbances) = scalar_actions();
    match name {
        "di2d" => ProblemSpec::new(
            GameDynamics::new(DynamicsKind::DoubleIntegrator2D, DT, controls, disturbances)?,
            MarginFn::sphere(vec![0.0, 0.0], vec![1.0, 1.0]),
            MarginFn::sphere(vec![2.0, 0.0], vec![1.5, 1.0]),
            GAMMA,
            SolveMode::ReachAvoid,
        ),
        "carts6d" | "carts6d-viability" | "carts6d-brs" => {
            let dynamics = GameDynamics::new(DynamicsKind::ThreeCart6D, DT, controls, disturbances)?;
            let (reward, constraint, mode) = match name {
                "carts6d" => (MarginFn::abs_slab(0, 0.0, 2.0), cart_separation(), SolveMode::ReachAvoid),
                "carts6d-viability" => (MarginFn::constant(-1.0), cart_separation(), SolveMode::ViabilityKernel),
                _ => (
                    MarginFn::min(vec![
                        MarginFn::abs_slab(0, 0.0, 2.0),
                        MarginFn::abs_slab(2, 0.0, 1.0),
                        MarginFn::abs_slab(4, 0.0, 1.0),
                    ]),
                    MarginFn::constant(1.0),
                    SolveMode::BackwardReach,
                ),
            };
            ProblemSpec::new(dynamics, reward, constraint, GAMMA, mode)
        }
        _ => Err(unknown(name)),
    }
}

/// Default solver grid for each benchmark.
pub fn default_grid(name: &str) -> Result<GridSpec> {
    match name {
        "di2d" => GridSpec::uniform(2, -3.0, 3.0, 41),
        "carts6d" | "carts6d-viability" | "carts6d-brs" => {
            GridSpec::new(vec![-4.0, -2.0, -4.0, -2.0, -4.0, -2.0], vec![4.0, 2.0, 4.0, 2.0, 4.0, 2.0], vec![9; 6])
        }
        _ => Err(unknown(name)),
    }
}

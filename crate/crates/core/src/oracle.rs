//! Brute-force finite-horizon game values on exact (non-gridded) states.
//!
//! [`tree_value`] evaluates the recursion
//! `W_0 = min(r, c)`, `W_{k+1}(x) = min{c(x), max{r(x), gamma * max_u min_d W_k(f(x, u, d))}}`
//! by explicit enumeration. [`literal_value`] instead enumerates every
//! action sequence and scores each path with the discounted sup/min payoff,
//! which checks the recursion itself. Neither shares code with the grid
//! solver.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::ValueField;
use crate::problem::ProblemSpec;

/// Largest number of leaves `(|U| |D|)^H` an evaluation may enumerate.
pub const ENUMERATION_BUDGET: f64 = 1e7;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OracleConfig {
    pub horizon: usize,
    /// Tail value `W_0`: the interpolated field when set, `min(r, c)` otherwise.
    pub tail_field: Option<ValueField>,
}

impl OracleConfig {
    pub fn new(horizon: usize) -> Self {
        Self { horizon, tail_field: None }
    }

    pub fn with_tail(mut self, field: ValueField) -> Self {
        self.tail_field = Some(field);
        self
    }

    pub fn use_interpolated_tail(&self) -> bool {
        self.tail_field.is_some()
    }

    fn check_budget(&self, spec: &ProblemSpec) -> Result<()> {
        let branching = (spec.dynamics.controls.len() * spec.dynamics.disturbances.len()) as f64;
        let required = branching.powf(self.horizon as f64);
        if required > ENUMERATION_BUDGET {
            return Err(Error::OracleBudget { required, budget: ENUMERATION_BUDGET });
        }
        Ok(())
    }
}

fn successor(spec: &ProblemSpec, x: &[f64], ui: usize, di: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    spec.dynamics.step_into(x, ui, di, &mut out);
    out
}

fn recurse(spec: &ProblemSpec, x: &[f64], k: usize, tail: Option<&ValueField>) -> f64 {
    let r = spec.reward_at(x);
    let c = spec.constraint_at(x);
    if k == 0 {
        return match tail {
            Some(field) => field.interpolate(x),
            None => r.min(c),
        };
    }
    let mut best = f64::NEG_INFINITY;
    for ui in 0..spec.dynamics.controls.len() {
        let mut worst = f64::INFINITY;
        for di in 0..spec.dynamics.disturbances.len() {
            worst = worst.min(recurse(spec, &successor(spec, x, ui, di), k - 1, tail));
        }
        best = best.max(worst);
    }
    c.min(r.max(spec.gamma * best))
}

/// `W_H(x)` by the recursion form. Margins follow the spec's solve mode.
pub fn tree_value(spec: &ProblemSpec, x: &[f64], config: &OracleConfig) -> Result<f64> {
    config.check_budget(spec)?;
    if x.len() != spec.state_dim() {
        return Err(Error::DimensionMismatch { expected: spec.state_dim(), got: x.len() });
    }
    let spec = spec.apply_mode();
    Ok(recurse(&spec, x, config.horizon, config.tail_field.as_ref()))
}

/// `gamma^t * v` as `t` successive multiplications.
fn discount(gamma: f64, t: usize, v: f64) -> f64 {
    (0..t).fold(v, |acc, _| gamma * acc)
}

/// `max_{t <= H} min{gamma^t r(x_t), min_{tau <= t} gamma^tau c(x_tau)}` for one path.
fn path_payoff(spec: &ProblemSpec, path: &[Vec<f64>]) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for t in 0..path.len() {
        let mut worst = discount(spec.gamma, t, spec.reward_at(&path[t]));
        for (tau, x) in path.iter().enumerate().take(t + 1) {
            worst = worst.min(discount(spec.gamma, tau, spec.constraint_at(x)));
        }
        best = best.max(worst);
    }
    best
}

fn alternate(spec: &ProblemSpec, path: &mut Vec<Vec<f64>>, remaining: usize) -> f64 {
    if remaining == 0 {
        return path_payoff(spec, path);
    }
    let x = path.last().cloned().unwrap_or_default();
    let mut best = f64::NEG_INFINITY;
    for ui in 0..spec.dynamics.controls.len() {
        let mut worst = f64::INFINITY;
        for di in 0..spec.dynamics.disturbances.len() {
            path.push(successor(spec, &x, ui, di));
            worst = worst.min(alternate(spec, path, remaining - 1));
            path.pop();
        }
        best = best.max(worst);
    }
    best
}

/// The game value `max_{u_0} min_{d_0} ... max_{u_{H-1}} min_{d_{H-1}}` of the
/// discounted sup/min payoff over full action sequences of length `H`.
/// Always uses the `min(r, c)` tail.
pub fn literal_value(spec: &ProblemSpec, x: &[f64], horizon: usize) -> Result<f64> {
    OracleConfig::new(horizon).check_budget(spec)?;
    if x.len() != spec.state_dim() {
        return Err(Error::DimensionMismatch { expected: spec.state_dim(), got: x.len() });
    }
    let spec = spec.apply_mode();
    Ok(alternate(&spec, &mut vec![x.to_vec()], horizon))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeGap {
    pub state: Vec<f64>,
    pub field_value: f64,
    pub oracle_value: f64,
    pub gap: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub horizon: usize,
    /// `gamma^H (max|r| + max|c|)` over the field's grid nodes.
    pub truncation_bound: f64,
    /// `2 h max(L_r, L_c)`, with `h` the widest cell.
    pub interpolation_allowance: f64,
    pub tolerance: f64,
    pub probes: Vec<ProbeGap>,
}

impl OracleReport {
    pub fn bound(&self) -> f64 {
        self.truncation_bound + self.interpolation_allowance + self.tolerance
    }

    pub fn flagged(&self) -> usize {
        self.probes.iter().filter(|p| p.flagged).count()
    }

    pub fn max_gap(&self) -> f64 {
        self.probes.iter().fold(0.0, |m, p| m.max(p.gap))
    }
}

/// Per-probe `|V_field(x) - W_H(x)|` for a field converged to `tolerance`.
pub fn compare_to_field(
    spec: &ProblemSpec,
    field: &ValueField,
    probes: &[Vec<f64>],
    config: &OracleConfig,
    tolerance: f64,
) -> Result<OracleReport> {
    config.check_budget(spec)?;
    let grid = field.grid();
    let applied = spec.apply_mode();
    let max_r = applied.reward.max_abs_on(grid);
    let max_c = applied.constraint.max_abs_on(grid);
    let truncation_bound = spec.gamma.powi(config.horizon as i32) * (max_r + max_c);
    let lips = applied.lipschitz_on(grid);
    let interpolation_allowance = 2.0 * grid.max_cell_width() * lips.value_bound();
    let bound = truncation_bound + interpolation_allowance + tolerance;
    let gaps = probes
        .par_iter()
        .map(|x| {
            let oracle_value = tree_value(spec, x, config)?;
            let field_value = field.interpolate(x);
            let gap = (field_value - oracle_value).abs();
            Ok(ProbeGap { state: x.clone(), field_value, oracle_value, gap, flagged: gap > bound })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(OracleReport { horizon: config.horizon, truncation_bound, interpolation_allowance, tolerance, probes: gaps })
}

/// One committed reference value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureRecord {
    pub benchmark: String,
    pub probe: Vec<f64>,
    pub horizon: usize,
    pub gamma: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fixture {
    #[serde(default)]
    pub record: Vec<FixtureRecord>,
}

impl Fixture {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backup::{value_iteration, Init, SolveConfig};
    use crate::grid::GridSpec;
    use crate::problem::{builtin_benchmark, DynamicsKind, GameDynamics, MarginFn, SolveMode};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn static_spec(gamma: f64) -> ProblemSpec {
        ProblemSpec::new(
            GameDynamics::stationary(1, vec![vec![0.0]], vec![vec![0.0]]).unwrap(),
            MarginFn::constant(-1.0),
            MarginFn::constant(1.0),
            gamma,
            SolveMode::ReachAvoid,
        )
        .unwrap()
    }

    #[test]
    fn base_case_is_min_rc() {
        let spec = builtin_benchmark("di2d").unwrap();
        for x in [[1.5, 0.0], [0.0, 0.0], [-2.0, 1.0]] {
            let expected = spec.reward_at(&x).min(spec.constraint_at(&x));
            assert_eq!(tree_value(&spec, &x, &OracleConfig::new(0)).unwrap(), expected);
        }
    }

    #[test]
    fn static_recursion_telescopes() {
        let gamma = 0.9;
        let spec = static_spec(gamma);
        for h in 0..8 {
            let w = tree_value(&spec, &[0.3], &OracleConfig::new(h)).unwrap();
            assert!((w + gamma.powi(h as i32)).abs() < 1e-15, "H={h}: {w}");
        }
    }

    #[test]
    fn frozen_double_integrator_values() {
        let spec = builtin_benchmark("di2d").unwrap().with_gamma(0.9);
        let w6 = tree_value(&spec, &[1.5, 0.0], &OracleConfig::new(6)).unwrap();
        assert!((w6 - -0.6607998828579604).abs() < 1e-12, "{w6}");
        let w4 = tree_value(&spec, &[1.5, 0.0], &OracleConfig::new(4)).unwrap();
        assert!((w4 - -0.8180271596160004).abs() < 1e-12, "{w4}");
    }

    #[test]
    fn budget_guard() {
        let spec = builtin_benchmark("di2d").unwrap();
        let err = tree_value(&spec, &[0.0, 0.0], &OracleConfig::new(12)).unwrap_err();
        assert!(matches!(err, Error::OracleBudget { required, .. } if required == 4f64.powi(12)));
        assert!(literal_value(&spec, &[0.0, 0.0], 12).is_err());
        assert!(OracleConfig::new(11).check_budget(&spec).is_ok());
    }

    #[test]
    fn literal_enumeration_matches_recursion_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for gamma in [0.5, 0.9, 0.99] {
            let spec = builtin_benchmark("di2d").unwrap().with_gamma(gamma);
            for h in 0..=4 {
                let x = [rng.gen_range(-2.5..2.5), rng.gen_range(-2.5..2.5)];
                let a = tree_value(&spec, &x, &OracleConfig::new(h)).unwrap();
                let b = literal_value(&spec, &x, h).unwrap();
                assert_eq!(a.to_bits(), b.to_bits(), "gamma={gamma} H={h} x={x:?}");
            }
        }
    }

    #[test]
    fn truncation_bound_holds() {
        let spec = builtin_benchmark("di2d").unwrap().with_gamma(0.9);
        let grid = GridSpec::uniform(2, -3.0, 3.0, 61).unwrap();
        let scale = spec.reward.max_abs_on(&grid) + spec.constraint.max_abs_on(&grid);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let x = [rng.gen_range(-2.5..2.5), rng.gen_range(-2.5..2.5)];
            for h in 0..6 {
                let a = tree_value(&spec, &x, &OracleConfig::new(h)).unwrap();
                let b = tree_value(&spec, &x, &OracleConfig::new(h + 1)).unwrap();
                assert!((a - b).abs() <= 0.9f64.powi(h as i32) * scale);
            }
        }
    }

    #[test]
    fn interpolated_tail_is_used() {
        let spec = static_spec(0.5);
        let grid = GridSpec::uniform(1, 0.0, 1.0, 3).unwrap();
        let tail = ValueField::constant(grid, 0.8);
        let cfg = OracleConfig::new(1).with_tail(tail);
        assert!(cfg.use_interpolated_tail());
        // min{1, max{-1, 0.5 * 0.8}}
        assert_eq!(tree_value(&spec, &[0.5], &cfg).unwrap(), 0.4);
    }

    /// Integer shifts with unit step keep grid nodes on grid nodes, so the
    /// solver sees no interpolation error and must agree with the oracle.
    #[test]
    fn lattice_closed_solver_agrees_with_oracle() {
        let dynamics = GameDynamics::new(
            DynamicsKind::LinearAffine {
                a: vec![vec![0.0]],
                b_u: vec![vec![1.0]],
                b_d: vec![vec![1.0]],
                bias: vec![0.0],
            },
            1.0,
            vec![vec![-1.0], vec![1.0]],
            vec![vec![-1.0], vec![0.0]],
        )
        .unwrap();
        let spec = ProblemSpec::new(
            dynamics,
            MarginFn::abs_slab(0, 36.0, 1.5),
            MarginFn::abs_slab(0, 30.0, 9.5),
            0.9,
            SolveMode::ReachAvoid,
        )
        .unwrap();
        // Dyadic spacing keeps every node coordinate an exact integer.
        let grid = GridSpec::new(vec![0.0], vec![64.0], vec![65]).unwrap();
        for h in [0usize, 1, 3, 6, 9] {
            let cfg = SolveConfig::default().with_max_iterations(h.max(1)).with_tolerance(f64::MIN_POSITIVE);
            let field = if h == 0 {
                ValueField::from_fn(grid.clone(), |x| spec.reward_at(x).min(spec.constraint_at(x)))
            } else {
                value_iteration(&spec, &grid, &cfg.with_init(Init::MinRc)).unwrap().field
            };
            // Stay 2H nodes clear of the clamped box edges.
            for i in 20..=44 {
                let x = [grid.node_coord(0, i)];
                let w = tree_value(&spec, &x, &OracleConfig::new(h)).unwrap();
                assert_eq!(field.interpolate(&x), w, "H={h} x={x:?}");
            }
        }
        let converged = value_iteration(&spec, &grid, &SolveConfig::default()).unwrap();
        let probes: Vec<Vec<f64>> = (22..31).map(|i| vec![i as f64]).collect();
        let report = compare_to_field(&spec, &converged.field, &probes, &OracleConfig::new(9), 1e-6).unwrap();
        assert_eq!(report.flagged(), 0);
    }

    #[test]
    fn static_field_gaps_within_tolerance() {
        let mut spec = static_spec(0.9);
        spec.reward = MarginFn::constant(0.5);
        let grid = GridSpec::uniform(1, -1.0, 1.0, 5).unwrap();
        let report = value_iteration(&spec, &grid, &SolveConfig::default()).unwrap();
        let probes = vec![vec![-0.5], vec![0.0], vec![0.25], vec![0.8]];
        for h in [0, 3, 10] {
            let out = compare_to_field(&spec, &report.field, &probes, &OracleConfig::new(h), 1e-6).unwrap();
            assert!(out.probes.iter().all(|p| p.gap <= 1e-6), "H={h}");
        }
    }

    #[test]
    fn fixture_round_trip() {
        let fixture = Fixture {
            record: vec![FixtureRecord {
                benchmark: "di2d".into(),
                probe: vec![1.5, 0.0],
                horizon: 6,
                gamma: 0.9,
                value: -0.6607998828579604,
            }],
        };
        let text = fixture.to_toml_string().unwrap();
        assert_eq!(Fixture::from_toml_str(&text).unwrap(), fixture);
    }
}

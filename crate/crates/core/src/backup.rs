//! Bellman backup, its conservative (CQL) variant, and value iteration.
//!
//! The backup is
//!
//! ```text
//! B[V](x) = min{ c(x), max{ r(x), gamma * max_u min_d V(f(x, u, d)) } }
//! ```
//!
//! and the conservative backup subtracts a constant penalty `lambda`. Both
//! are `gamma`-contractions in the sup norm, so value iteration converges
//! from any bounded start. Sweeps are Jacobi style: every node of sweep
//! `k + 1` reads only the frozen field of sweep `k`, which makes the result
//! independent of visit order and thread count.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{format_real, sup_norm_diff, GridSpec, ValueField};
use crate::problem::{ProblemSpec, SolveMode};

/// Starting field for value iteration.
#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    /// `V0(x) = min(r(x), c(x))`.
    MinRc,
    Zero,
    FromField(ValueField),
}

impl Init {
    pub fn name(&self) -> &'static str {
        match self {
            Init::MinRc => "min-rc",
            Init::Zero => "zero",
            Init::FromField(_) => "from-field",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveConfig {
    /// Stop once `||V(k+1) - V(k)||_inf <= tolerance`.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Penalty subtracted by the conservative backup; 0 gives the nominal backup.
    pub cql_lambda: f64,
    pub init: Init,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self { tolerance: 1e-6, max_iterations: 5000, cql_lambda: 0.0, init: Init::MinRc }
    }
}

impl SolveConfig {
    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.cql_lambda = lambda;
        self
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn with_max_iterations(mut self, max_iterations: usize) -> Self {
        self.max_iterations = max_iterations;
        self
    }

    pub fn with_init(mut self, init: Init) -> Self {
        self.init = init;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidConfig(format!("tolerance must be > 0, got {}", self.tolerance)));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be >= 1".into()));
        }
        if !(self.cql_lambda >= 0.0 && self.cql_lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!("lambda must be >= 0, got {}", self.cql_lambda)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub field: ValueField,
    /// Number of sweeps performed.
    pub iterations: usize,
    /// `||V(k+1) - V(k)||_inf` for every sweep.
    pub residuals: Vec<f64>,
    pub converged: bool,
    pub config: SolveConfig,
    pub gamma: f64,
    pub mode: SolveMode,
    pub max_abs_reward: f64,
    pub max_abs_constraint: f64,
    pub wall_time_seconds: f64,
}

#[derive(Serialize)]
struct ReportRecord<'a> {
    iterations: usize,
    converged: bool,
    final_residual: f64,
    residual_tail: Vec<String>,
    wall_time_seconds: f64,
    gamma: f64,
    mode: SolveMode,
    tolerance: f64,
    max_iterations: usize,
    lambda: f64,
    init: &'a str,
    max_abs_reward: f64,
    max_abs_constraint: f64,
    grid: &'a GridSpec,
}

impl SolveReport {
    pub fn final_residual(&self) -> f64 {
        self.residuals.last().copied().unwrap_or(f64::INFINITY)
    }

    /// Structured-text summary (TOML). The residual tail holds the last ten
    /// residuals printed with 17 significant digits.
    pub fn to_toml(&self) -> Result<String> {
        let tail_start = self.residuals.len().saturating_sub(10);
        let record = ReportRecord {
            iterations: self.iterations,
            converged: self.converged,
            final_residual: self.final_residual(),
            residual_tail: self.residuals[tail_start..].iter().map(|r| format_real(*r)).collect(),
            wall_time_seconds: self.wall_time_seconds,
            gamma: self.gamma,
            mode: self.mode,
            tolerance: self.config.tolerance,
            max_iterations: self.config.max_iterations,
            lambda: self.config.cql_lambda,
            init: self.config.init.name(),
            max_abs_reward: self.max_abs_reward,
            max_abs_constraint: self.max_abs_constraint,
            grid: self.field.grid(),
        };
        Ok(toml::to_string(&record)?)
    }
}

/// Max over controls of the min over disturbances of `score(u, d)`, with
/// ties going to the lowest declared index. Returns `(u_index, value)`.
#[inline]
pub(crate) fn argmax_min(
    n_controls: usize,
    n_disturbances: usize,
    mut score: impl FnMut(usize, usize) -> f64,
) -> (usize, f64) {
    let mut best_u = 0;
    let mut best = f64::NEG_INFINITY;
    for ui in 0..n_controls {
        let (_, worst) = argmin(n_disturbances, |di| score(ui, di));
        if ui == 0 || worst > best {
            best_u = ui;
            best = worst;
        }
    }
    (best_u, best)
}

/// Minimum of `score` over `0..n` with lowest-index tie breaking.
#[inline]
pub(crate) fn argmin(n: usize, mut score: impl FnMut(usize) -> f64) -> (usize, f64) {
    let mut best_i = 0;
    let mut best = f64::INFINITY;
    for i in 0..n {
        let v = score(i);
        if i == 0 || v < best {
            best_i = i;
            best = v;
        }
    }
    (best_i, best)
}

#[inline]
pub(crate) fn backup_formula(reward: f64, constraint: f64, gamma: f64, next: f64) -> f64 {
    constraint.min(reward.max(gamma * next))
}

fn maxmin_scratch(field: &ValueField, spec: &ProblemSpec, x: &[f64], succ: &mut [f64]) -> f64 {
    let dynamics = &spec.dynamics;
    let grid = field.grid();
    let values = field.values();
    argmax_min(dynamics.controls.len(), dynamics.disturbances.len(), |ui, di| {
        dynamics.step_into(x, ui, di, succ);
        grid.interpolate(values, succ)
    })
    .1
}

/// `max_u min_d V(f(x, u, d))` with `V` interpolated from `field`.
pub fn maxmin_next(field: &ValueField, spec: &ProblemSpec, x: &[f64]) -> f64 {
    let mut succ = vec![0.0; x.len()];
    maxmin_scratch(field, spec, x, &mut succ)
}

/// One application of the backup at a single state. Margins are taken from
/// `spec` as given; use [`ProblemSpec::apply_mode`] first for special modes.
pub fn bellman_backup(field: &ValueField, spec: &ProblemSpec, x: &[f64]) -> f64 {
    backup_formula(spec.reward_at(x), spec.constraint_at(x), spec.gamma, maxmin_next(field, spec, x))
}

/// The conservative backup: [`bellman_backup`] minus `lambda`.
pub fn cql_backup(field: &ValueField, spec: &ProblemSpec, x: &[f64], lambda: f64) -> f64 {
    bellman_backup(field, spec, x) - lambda
}

/// Margins evaluated once per node.
struct NodeMargins {
    reward: Vec<f64>,
    constraint: Vec<f64>,
}

impl NodeMargins {
    fn new(spec: &ProblemSpec, grid: &GridSpec) -> Self {
        let mut x = vec![0.0; grid.dim()];
        let mut reward = Vec::with_capacity(grid.total_nodes());
        let mut constraint = Vec::with_capacity(grid.total_nodes());
        for flat in 0..grid.total_nodes() {
            grid.node_state_into(flat, &mut x);
            reward.push(spec.reward_at(&x));
            constraint.push(spec.constraint_at(&x));
        }
        Self { reward, constraint }
    }
}

fn sweep_into(spec: &ProblemSpec, margins: &NodeMargins, current: &ValueField, lambda: f64, next: &mut [f64]) {
    let grid = current.grid();
    let n = grid.dim();
    next.par_iter_mut().enumerate().for_each_init(
        || (vec![0.0; n], vec![0.0; n]),
        |(x, succ), (flat, out)| {
            grid.node_state_into(flat, x);
            let m = maxmin_scratch(current, spec, x, succ);
            *out = backup_formula(margins.reward[flat], margins.constraint[flat], spec.gamma, m) - lambda;
        },
    );
}

fn check_dims(spec: &ProblemSpec, grid: &GridSpec) -> Result<()> {
    if grid.dim() != spec.state_dim() {
        return Err(Error::DimensionMismatch { expected: spec.state_dim(), got: grid.dim() });
    }
    Ok(())
}

/// One full sweep: the field `B[V] - lambda` at every node.
pub fn backup_sweep(field: &ValueField, spec: &ProblemSpec, lambda: f64) -> Result<ValueField> {
    check_dims(spec, field.grid())?;
    let margins = NodeMargins::new(spec, field.grid());
    let mut next = vec![0.0; field.grid().total_nodes()];
    sweep_into(spec, &margins, field, lambda, &mut next);
    ValueField::new(field.grid().clone(), next)
}

/// Runs value iteration for `spec` (after [`ProblemSpec::apply_mode`]) on `grid`.
pub fn value_iteration(spec: &ProblemSpec, grid: &GridSpec, config: &SolveConfig) -> Result<SolveReport> {
    let start = Instant::now();
    config.validate()?;
    let spec = spec.apply_mode();
    spec.validate()?;
    check_dims(&spec, grid)?;

    let margins = NodeMargins::new(&spec, grid);
    let initial: Vec<f64> = match &config.init {
        Init::MinRc => margins.reward.iter().zip(&margins.constraint).map(|(r, c)| r.min(*c)).collect(),
        Init::Zero => vec![0.0; grid.total_nodes()],
        Init::FromField(f) => {
            if f.grid() != grid {
                return Err(Error::GridMismatch);
            }
            f.values().to_vec()
        }
    };
    let mut current = ValueField::new(grid.clone(), initial)?;
    let mut next = current.clone();
    let mut residuals = Vec::new();
    let mut converged = false;

    for k in 0..config.max_iterations {
        sweep_into(&spec, &margins, &current, config.cql_lambda, next.values_mut());
        if let Some(node) = next.values().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { node, iteration: k + 1 });
        }
        let residual = sup_norm_diff(&next, &current)?;
        residuals.push(residual);
        std::mem::swap(&mut current, &mut next);
        if residual <= config.tolerance {
            converged = true;
            break;
        }
    }

    let max_abs = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    Ok(SolveReport {
        iterations: residuals.len(),
        residuals,
        converged,
        config: config.clone(),
        gamma: spec.gamma,
        mode: spec.mode,
        max_abs_reward: max_abs(&margins.reward),
        max_abs_constraint: max_abs(&margins.constraint),
        field: current,
        wall_time_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Reach-avoid membership: strictly positive interpolated value.
pub fn membership(field: &ValueField, x: &[f64]) -> bool {
    field.interpolate(x) > 0.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{builtin_benchmark, default_grid, GameDynamics, MarginFn};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn static_spec(reward: f64, constraint: f64, gamma: f64) -> ProblemSpec {
        ProblemSpec::new(
            GameDynamics::stationary(1, vec![vec![0.0]], vec![vec![0.0]]).unwrap(),
            MarginFn::constant(reward),
            MarginFn::constant(constraint),
            gamma,
            SolveMode::ReachAvoid,
        )
        .unwrap()
    }

    fn unit_grid() -> GridSpec {
        GridSpec::new(vec![0.0], vec![1.0], vec![5]).unwrap()
    }

    #[test]
    fn maxmin_degenerate_and_constant() {
        let spec = builtin_benchmark("di2d").unwrap();
        let grid = GridSpec::uniform(2, -1.0, 1.0, 3).unwrap();
        let field = ValueField::constant(grid.clone(), 0.7);
        assert_eq!(maxmin_next(&field, &spec, &[0.3, -0.2]), 0.7);

        let mut single = spec.clone();
        single.dynamics.controls.truncate(1);
        single.dynamics.disturbances.truncate(1);
        let field = ValueField::from_fn(grid, |x| x[0] * 2.0 + x[1]);
        let x = [0.1, 0.4];
        let succ = single.dynamics.step(&x, &[-1.0], &[-0.5]).unwrap();
        assert_eq!(maxmin_next(&field, &single, &x), field.interpolate(&succ));
    }

    #[test]
    fn maxmin_matches_hand_enumeration() {
        // Frozen from an independent enumeration of the four action pairs:
        // (-1,-0.5) -> 0.418, (-1,0.5) -> 0.406, (1,-0.5) -> 0.389, (1,0.5) -> 0.367.
        let spec = builtin_benchmark("di2d").unwrap();
        let grid = GridSpec::uniform(2, -1.0, 1.0, 3).unwrap();
        let values = vec![0.3, -0.2, 0.5, 1.0, 0.4, -0.7, 0.2, 0.9, -0.1];
        let field = ValueField::new(grid, values).unwrap();
        assert!((maxmin_next(&field, &spec, &[0.0, 0.0]) - 0.406).abs() < 1e-12);
    }

    #[test]
    fn backup_formula_examples() {
        assert_eq!(backup_formula(-1.0, 2.0, 0.9, 1.0), 0.9);
        assert_eq!(backup_formula(0.5, -1.0, 0.9, 1.0), -1.0);
        assert_eq!(backup_formula(-0.3, 2.0, 0.0, 123.0), 0.0);
        assert_eq!(backup_formula(0.4, 0.2, 0.0, -5.0), 0.2);
    }

    #[test]
    fn cql_backup_examples() {
        let spec = static_spec(-1.0, 2.0, 0.9);
        let field = ValueField::constant(unit_grid(), 1.0);
        assert_eq!(bellman_backup(&field, &spec, &[0.5]), 0.9);
        assert_eq!(cql_backup(&field, &spec, &[0.5], 0.0), 0.9);
        assert!((cql_backup(&field, &spec, &[0.5], 0.1) - 0.8).abs() < 1e-15);
        let spec = static_spec(-1.0, -1.0, 0.9);
        assert_eq!(cql_backup(&field, &spec, &[0.5], 0.5), -1.5);
    }

    #[test]
    fn static_fixed_points() {
        let report = value_iteration(&static_spec(-1.0, 1.0, 0.9), &unit_grid(), &SolveConfig::default()).unwrap();
        assert!(report.converged);
        assert!(report.field.values().iter().all(|v| v.abs() <= 1e-5));

        let report = value_iteration(&static_spec(0.5, 1.0, 0.9), &unit_grid(), &SolveConfig::default()).unwrap();
        assert!(report.converged);
        assert!(report.field.values().iter().all(|&v| v == 0.5));
        assert_eq!(report.iterations, 1);
    }

    #[test]
    fn viability_mode_applied_inside_solver() {
        let mut spec = static_spec(0.5, 1.0, 0.9);
        spec.mode = SolveMode::ViabilityKernel;
        let report = value_iteration(&spec, &unit_grid(), &SolveConfig::default()).unwrap();
        assert!(report.field.values().iter().all(|&v| v <= 0.0));
    }

    #[test]
    fn invalid_configs() {
        let spec = static_spec(0.5, 1.0, 0.9);
        let grid = unit_grid();
        for cfg in [
            SolveConfig::default().with_tolerance(0.0),
            SolveConfig::default().with_max_iterations(0),
            SolveConfig::default().with_lambda(-0.1),
        ] {
            assert!(matches!(value_iteration(&spec, &grid, &cfg), Err(Error::InvalidConfig(_))));
        }
        let other = GridSpec::uniform(2, 0.0, 1.0, 3).unwrap();
        assert!(value_iteration(&spec, &other, &SolveConfig::default()).is_err());
        let wrong = ValueField::constant(GridSpec::new(vec![0.0], vec![1.0], vec![4]).unwrap(), 0.0);
        let cfg = SolveConfig::default().with_init(Init::FromField(wrong));
        assert!(matches!(value_iteration(&spec, &grid, &cfg), Err(Error::GridMismatch)));
    }

    #[test]
    fn non_finite_values_abort() {
        // A tiny sphere scale overflows to -inf away from the center.
        let mut spec = static_spec(0.5, 1.0, 0.9);
        spec.constraint = MarginFn::sphere(vec![0.0], vec![1e-300]);
        let err = value_iteration(&spec, &unit_grid(), &SolveConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NonFiniteValue { node: 1, iteration: 1 }), "{err}");
    }

    #[test]
    fn residuals_contract() {
        let spec = builtin_benchmark("di2d").unwrap().with_gamma(0.9);
        let grid = GridSpec::uniform(2, -3.0, 3.0, 21).unwrap();
        let report = value_iteration(&spec, &grid, &SolveConfig::default()).unwrap();
        assert!(report.converged);
        let scale = report.field.max_abs();
        for w in report.residuals.windows(2) {
            assert!(w[1] <= spec.gamma * w[0] + 4.0 * f64::EPSILON * scale, "{w:?}");
        }
        let text = report.to_toml().unwrap();
        assert!(text.contains("converged = true"));
        assert!(text.contains("residual_tail"));
    }

    #[test]
    fn sweep_is_a_contraction() {
        let spec = builtin_benchmark("di2d").unwrap().with_gamma(0.9);
        let grid = GridSpec::uniform(2, -3.0, 3.0, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let a = ValueField::from_fn(grid.clone(), |_| rng.gen_range(-5.0..5.0));
            let b = ValueField::from_fn(grid.clone(), |_| rng.gen_range(-5.0..5.0));
            let d0 = sup_norm_diff(&a, &b).unwrap();
            let d1 =
                sup_norm_diff(&backup_sweep(&a, &spec, 0.0).unwrap(), &backup_sweep(&b, &spec, 0.0).unwrap()).unwrap();
            assert!(d1 <= 0.9 * d0 + 8.0 * f64::EPSILON * 5.0);
        }
    }

    #[test]
    fn sweep_matches_pointwise_backup() {
        let spec = builtin_benchmark("di2d").unwrap();
        let grid = GridSpec::uniform(2, -3.0, 3.0, 9).unwrap();
        let field = ValueField::from_fn(grid.clone(), |x| (x[0] - x[1]).sin());
        let swept = backup_sweep(&field, &spec, 0.25).unwrap();
        for flat in 0..grid.total_nodes() {
            let x = grid.node_state(flat);
            assert_eq!(swept.values()[flat], cql_backup(&field, &spec, &x, 0.25));
        }
    }

    #[test]
    fn membership_examples() {
        let spec = builtin_benchmark("di2d").unwrap();
        let grid = default_grid("di2d").unwrap();
        let report = value_iteration(&spec, &grid, &SolveConfig::default()).unwrap();
        // node (0.75, 0): r > 0 and c > 0
        assert!(membership(&report.field, &[0.75, 0.0]));
        // node (-3, 0): outside C
        assert!(!membership(&report.field, &[-3.0, 0.0]));
    }
}

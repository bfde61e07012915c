use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{loss_and_grad, max_min_heads, MLPParams, ReplayBuffer, Transition};
use crate::backup::{argmin, backup_formula};
use crate::error::{Error, Result};
use crate::grid::{format_real, GridSpec, ValueField};
use crate::problem::ProblemSpec;

/// Summed batch loss above which training is declared diverged.
pub const DIVERGENCE_LOSS: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub alpha: f64,
    pub epochs: usize,
    pub batch: usize,
    pub horizon: usize,
    pub lambda: f64,
    pub hidden: Vec<usize>,
    pub capacity: usize,
    /// Minibatch updates per epoch.
    pub updates_per_epoch: usize,
    pub seed: u64,
    /// Box the initial states are drawn from.
    pub sample_lower: Vec<f64>,
    pub sample_upper: Vec<f64>,
    /// Fixed states for the residual estimate in the log.
    pub probe_count: usize,
    /// Residual is logged every `log_every` epochs and at the last one.
    pub log_every: usize,
}

impl TrainConfig {
    /// Defaults with the sampling box set to `[lower, upper]`. The step size
    /// applies to the summed (not averaged) batch loss; 1e-3 diverges on di2d.
    pub fn for_box(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        Self {
            alpha: 5e-5,
            epochs: 2000,
            batch: 64,
            horizon: 100,
            lambda: 0.0,
            hidden: vec![64, 64],
            capacity: 100_000,
            updates_per_epoch: 4,
            seed: 0,
            sample_lower: lower,
            sample_upper: upper,
            probe_count: 256,
            log_every: 10,
        }
    }

    pub fn for_grid(grid: &GridSpec) -> Self {
        Self::for_box(grid.lower().to_vec(), grid.upper().to_vec())
    }

    pub fn validate(&self, state_dim: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be finite and >= 0, got {}", self.alpha));
        }
        if self.epochs == 0 || self.batch == 0 || self.horizon == 0 || self.updates_per_epoch == 0 {
            return bad("epochs, batch, horizon and updates_per_epoch must be >= 1".into());
        }
        if self.capacity == 0 || self.log_every == 0 {
            return bad("capacity and log_every must be >= 1".into());
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if self.hidden.contains(&0) {
            return bad("hidden widths must be positive".into());
        }
        if self.sample_lower.len() != state_dim || self.sample_upper.len() != state_dim {
            return bad(format!("sampling box must have {state_dim} coordinates"));
        }
        if self.sample_lower.iter().zip(&self.sample_upper).any(|(l, u)| !(l <= u) || !l.is_finite() || !u.is_finite())
        {
            return bad("sampling box needs finite lower <= upper".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Summed loss of the epoch's last minibatch.
    pub loss: f64,
    pub probe_residual: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: MLPParams,
    pub log: Vec<EpochLog>,
}

impl TrainOutcome {
    /// CSV with columns `epoch, loss, probe_residual` (empty when not computed).
    pub fn write_log_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "loss", "probe_residual"])?;
        for rec in &self.log {
            let residual = rec.probe_residual.map(format_real).unwrap_or_default();
            w.write_record([rec.epoch.to_string(), format_real(rec.loss), residual])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `y_j = min{c(x_j), max{r(x_j), gamma * V_frozen(x'_j)}}`. Margins are
/// taken from `spec` as given.
pub fn compute_targets(frozen: &MLPParams, batch: &[Transition], spec: &ProblemSpec) -> Vec<f64> {
    batch
        .iter()
        .map(|t| {
            backup_formula(
                spec.reward_at(&t.x),
                spec.constraint_at(&t.x),
                spec.gamma,
                frozen.value_unchecked(&t.x_next),
            )
        })
        .collect()
}

/// `max_x |V_theta(x) - B[V_theta](x)|` over `probes`.
pub fn probe_residual(params: &MLPParams, spec: &ProblemSpec, probes: &[Vec<f64>]) -> f64 {
    let dyn_ = &spec.dynamics;
    let mut succ = vec![0.0; spec.state_dim()];
    probes.iter().fold(0.0, |worst, x| {
        let (r, c) = (spec.reward_at(x), spec.constraint_at(x));
        let b = crate::backup::argmax_min(dyn_.controls.len(), dyn_.disturbances.len(), |ui, di| {
            dyn_.step_into(x, ui, di, &mut succ);
            backup_formula(r, c, spec.gamma, params.value_unchecked(&succ))
        })
        .1;
        worst.max((params.value_unchecked(x) - b).abs())
    })
}

fn uniform_in<R: Rng>(lower: &[f64], upper: &[f64], rng: &mut R) -> Vec<f64> {
    lower.iter().zip(upper).map(|(&l, &u)| if l < u { rng.gen_range(l..=u) } else { l }).collect()
}

/// Greedy data collection and minibatch updates against targets from the
/// epoch-start snapshot. Single-threaded and deterministic given the seed.
pub fn train(spec: &ProblemSpec, config: &TrainConfig) -> Result<TrainOutcome> {
    let spec = spec.apply_mode();
    spec.validate()?;
    let n = spec.state_dim();
    config.validate(n)?;
    let (n_u, n_d) = (spec.dynamics.controls.len(), spec.dynamics.disturbances.len());

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut widths = vec![n];
    widths.extend(&config.hidden);
    let mut params = MLPParams::random(&widths, n_u, n_d, &mut rng)?;
    let probes: Vec<Vec<f64>> =
        (0..config.probe_count).map(|_| uniform_in(&config.sample_lower, &config.sample_upper, &mut rng)).collect();
    let mut buffer = ReplayBuffer::new(config.capacity);
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let frozen = params.clone();
        let mut x = uniform_in(&config.sample_lower, &config.sample_upper, &mut rng);
        for _ in 0..config.horizon {
            let q = frozen.heads(&x);
            let u = max_min_heads(&q, n_u, n_d).0;
            let d = argmin(n_d, |j| q[u * n_d + j]).0;
            let mut x_next = vec![0.0; n];
            spec.dynamics.step_into(&x, u, d, &mut x_next);
            buffer.push(Transition { x, u, d, x_next: x_next.clone() });
            x = x_next;
        }

        let mut loss = 0.0;
        for _ in 0..config.updates_per_epoch {
            let batch = buffer.sample(config.batch, &mut rng);
            let targets = compute_targets(&frozen, &batch, &spec);
            let (l, grad) = loss_and_grad(&params, &batch, &targets, config.lambda)?;
            loss = l;
            if !loss.is_finite() || loss > DIVERGENCE_LOSS {
                return Err(Error::Diverged { epoch, loss });
            }
            params.add_scaled(-config.alpha, &grad);
            if params.check_finite().is_err() {
                return Err(Error::Diverged { epoch, loss });
            }
        }
        let log_now = epoch % config.log_every == 0 || epoch + 1 == config.epochs;
        let probe_residual = log_now.then(|| probe_residual(&params, &spec, &probes));
        log.push(EpochLog { epoch, loss, probe_residual });
    }
    Ok(TrainOutcome { params, log })
}

/// `V_theta` at every node of `grid`.
pub fn extract_learned_set(params: &MLPParams, grid: &GridSpec) -> Result<ValueField> {
    params.check_finite()?;
    if grid.dim() != params.input_dim() {
        return Err(Error::DimensionMismatch { expected: params.input_dim(), got: grid.dim() });
    }
    let values: Vec<f64> =
        (0..grid.total_nodes()).into_par_iter().map(|flat| params.value_unchecked(&grid.node_state(flat))).collect();
    ValueField::new(grid.clone(), values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{builtin_benchmark, default_grid};

    fn tiny_config(grid: &GridSpec) -> TrainConfig {
        TrainConfig {
            epochs: 20,
            batch: 8,
            horizon: 10,
            hidden: vec![8, 8],
            capacity: 500,
            probe_count: 16,
            log_every: 5,
            ..TrainConfig::for_grid(grid)
        }
    }

    #[test]
    fn targets_with_zero_discount_or_zero_net() {
        let spec = builtin_benchmark("di2d").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = MLPParams::random(&[2, 4], 2, 2, &mut rng).unwrap();
        let zero = MLPParams::zeros(&[2, 4], 2, 2).unwrap();
        let batch: Vec<Transition> = (0..6)
            .map(|k| {
                let x = vec![k as f64 * 0.4 - 1.0, 0.3];
                Transition { x_next: spec.dynamics.step(&x, &[1.0], &[0.5]).unwrap(), x, u: 1, d: 1 }
            })
            .collect();
        let expected: Vec<f64> =
            batch.iter().map(|t| spec.constraint_at(&t.x).min(spec.reward_at(&t.x).max(0.0))).collect();
        assert_eq!(compute_targets(&net, &batch, &spec.clone().with_gamma(0.0)), expected);
        assert_eq!(compute_targets(&zero, &batch, &spec), expected);
    }

    #[test]
    fn zero_stepsize_leaves_parameters_unchanged() {
        let spec = builtin_benchmark("di2d").unwrap();
        let grid = default_grid("di2d").unwrap();
        let cfg = TrainConfig { epochs: 1, batch: 1, alpha: 0.0, ..tiny_config(&grid) };
        let out = train(&spec, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let init = MLPParams::random(&[2, 8, 8], 2, 2, &mut rng).unwrap();
        assert_eq!(out.params, init);
    }

    #[test]
    fn training_is_reproducible() {
        let spec = builtin_benchmark("di2d").unwrap();
        let grid = default_grid("di2d").unwrap();
        let cfg = tiny_config(&grid);
        let a = train(&spec, &cfg).unwrap();
        let b = train(&spec, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.log, b.log);
        assert_eq!(a.log.len(), 20);
        assert!(a.log[0].probe_residual.is_some() && a.log[1].probe_residual.is_none());
        assert!(a.log[19].probe_residual.is_some());
        let c = train(&spec, &TrainConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a.params, c.params);
        let mut buf = Vec::new();
        a.write_log_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 21);
    }

    #[test]
    fn divergence_is_reported() {
        let spec = builtin_benchmark("di2d").unwrap();
        let grid = default_grid("di2d").unwrap();
        let cfg = TrainConfig { alpha: 10.0, epochs: 50, ..tiny_config(&grid) };
        match train(&spec, &cfg) {
            Err(Error::Diverged { epoch, .. }) => assert!(epoch < 50),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let spec = builtin_benchmark("di2d").unwrap();
        let grid = default_grid("di2d").unwrap();
        let base = tiny_config(&grid);
        for cfg in [
            TrainConfig { epochs: 0, ..base.clone() },
            TrainConfig { lambda: -1.0, ..base.clone() },
            TrainConfig { sample_lower: vec![0.0], ..base.clone() },
            TrainConfig { sample_lower: vec![4.0, 0.0], ..base.clone() },
        ] {
            assert!(matches!(train(&spec, &cfg), Err(Error::InvalidConfig(_))));
        }
    }

    #[test]
    fn zero_network_extracts_zero_field() {
        let grid = GridSpec::uniform(2, -1.0, 1.0, 5).unwrap();
        let field = extract_learned_set(&MLPParams::zeros(&[2, 3], 2, 2).unwrap(), &grid).unwrap();
        assert!(field.values().iter().all(|v| *v == 0.0));
        let wrong = GridSpec::uniform(3, -1.0, 1.0, 3).unwrap();
        assert!(extract_learned_set(&MLPParams::zeros(&[2, 3], 2, 2).unwrap(), &wrong).is_err());
    }
}

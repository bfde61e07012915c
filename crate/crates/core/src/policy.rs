//! Greedy policies from a value function, closed-loop rollouts and
//! Monte Carlo success rates.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backup::{argmax_min, argmin, backup_formula};
use crate::error::{Error, Result};
use crate::grid::{format_real, ValueField};
use crate::problem::ProblemSpec;

/// Proposals allowed per requested sample before rejection sampling gives up.
pub const PROPOSALS_PER_SAMPLE: usize = 10_000;

/// Default sampling margin for success-rate evaluation.
pub const DEFAULT_MARGIN: f64 = 0.05;

/// Anything that assigns a value to a state.
pub trait ValueFunction: Sync {
    fn value(&self, x: &[f64]) -> f64;
}

impl ValueFunction for ValueField {
    fn value(&self, x: &[f64]) -> f64 {
        self.interpolate(x)
    }
}

impl<V: ValueFunction + ?Sized> ValueFunction for &V {
    fn value(&self, x: &[f64]) -> f64 {
        (**self).value(x)
    }
}

#[inline]
#[allow(clippy::too_many_arguments)]
fn q_indexed<V: ValueFunction + ?Sized>(
    vf: &V,
    spec: &ProblemSpec,
    x: &[f64],
    r: f64,
    c: f64,
    ui: usize,
    di: usize,
    succ: &mut [f64],
) -> f64 {
    spec.dynamics.step_into(x, ui, di, succ);
    backup_formula(r, c, spec.gamma, vf.value(succ))
}

/// `Q(x, u, d) = min{c(x), max{r(x), gamma * V(f(x, u, d))}}`.
pub fn q_value<V: ValueFunction + ?Sized>(vf: &V, spec: &ProblemSpec, x: &[f64], u: &[f64], d: &[f64]) -> Result<f64> {
    let succ = spec.dynamics.step(x, u, d)?;
    Ok(backup_formula(spec.reward_at(x), spec.constraint_at(x), spec.gamma, vf.value(&succ)))
}

/// Index of `argmax_u min_d Q(x, u, d)`, lowest index on ties.
pub fn best_control<V: ValueFunction + ?Sized>(vf: &V, spec: &ProblemSpec, x: &[f64]) -> usize {
    let (r, c) = (spec.reward_at(x), spec.constraint_at(x));
    let mut succ = vec![0.0; x.len()];
    let dyn_ = &spec.dynamics;
    argmax_min(dyn_.controls.len(), dyn_.disturbances.len(), |ui, di| q_indexed(vf, spec, x, r, c, ui, di, &mut succ)).0
}

/// Index of `argmin_d Q(x, u, d)` for the control with index `ui`.
pub fn worst_disturbance<V: ValueFunction + ?Sized>(vf: &V, spec: &ProblemSpec, x: &[f64], ui: usize) -> usize {
    let (r, c) = (spec.reward_at(x), spec.constraint_at(x));
    let mut succ = vec![0.0; x.len()];
    argmin(spec.dynamics.disturbances.len(), |di| q_indexed(vf, spec, x, r, c, ui, di, &mut succ)).0
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DisturbanceMode {
    /// Greedy minimizer of Q given the chosen control.
    WorstCase,
    /// Disturbance indices, cycled.
    Fixed(Vec<usize>),
    /// The zero disturbance if it is in the set, otherwise the first one.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "step", rename_all = "kebab-case")]
pub enum RolloutOutcome {
    ReachedTarget(usize),
    ViolatedConstraint(usize),
    Timeout(usize),
}

impl RolloutOutcome {
    pub fn is_success(&self) -> bool {
        matches!(self, RolloutOutcome::ReachedTarget(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    pub disturbances: Vec<Vec<f64>>,
    pub outcome: RolloutOutcome,
}

#[derive(Serialize)]
struct VerdictRecord<'a> {
    outcome: &'a RolloutOutcome,
    steps: usize,
    initial_state: &'a [f64],
    final_state: &'a [f64],
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// CSV with columns `t, x0.., u0.., d0.., r, c`. The last row holds the
    /// terminal state and leaves the action columns empty.
    pub fn write_csv<W: Write>(&self, spec: &ProblemSpec, out: W) -> Result<()> {
        let n = self.states.first().map_or(0, Vec::len);
        let m = self.controls.first().map_or(spec.dynamics.controls[0].len(), Vec::len);
        let l = self.disturbances.first().map_or(spec.dynamics.disturbances[0].len(), Vec::len);
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((0..n).map(|i| format!("x{i}")));
        header.extend((0..m).map(|i| format!("u{i}")));
        header.extend((0..l).map(|i| format!("d{i}")));
        header.extend(["r".to_string(), "c".to_string()]);
        w.write_record(&header)?;
        for (t, x) in self.states.iter().enumerate() {
            let mut row = vec![t.to_string()];
            row.extend(x.iter().map(|v| format_real(*v)));
            match (self.controls.get(t), self.disturbances.get(t)) {
                (Some(u), Some(d)) => {
                    row.extend(u.iter().map(|v| format_real(*v)));
                    row.extend(d.iter().map(|v| format_real(*v)));
                }
                _ => row.extend(std::iter::repeat_n(String::new(), m + l)),
            }
            row.push(format_real(spec.reward_at(x)));
            row.push(format_real(spec.constraint_at(x)));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn verdict_toml(&self) -> Result<String> {
        let record = VerdictRecord {
            outcome: &self.outcome,
            steps: self.controls.len(),
            initial_state: &self.states[0],
            final_state: self.states.last().map_or(&[][..], Vec::as_slice),
        };
        Ok(toml::to_string(&record)?)
    }

    /// Writes `<stem>.csv` and `<stem>.toml` into `dir`.
    pub fn export(&self, spec: &ProblemSpec, dir: &Path, stem: &str) -> Result<()> {
        let file = std::fs::File::create(dir.join(format!("{stem}.csv")))?;
        self.write_csv(spec, std::io::BufWriter::new(file))?;
        std::fs::write(dir.join(format!("{stem}.toml")), self.verdict_toml()?)?;
        Ok(())
    }
}

fn passive_disturbance(spec: &ProblemSpec) -> usize {
    spec.dynamics.disturbances.iter().position(|d| d.iter().all(|v| *v == 0.0)).unwrap_or(0)
}

/// Closed-loop simulation under the greedy control. Margins follow the
/// spec's solve mode.
pub fn rollout<V: ValueFunction + ?Sized>(
    spec: &ProblemSpec,
    vf: &V,
    x0: &[f64],
    horizon: usize,
    mode: &DisturbanceMode,
) -> Result<Trajectory> {
    if horizon == 0 {
        return Err(Error::InvalidConfig("rollout horizon must be >= 1".into()));
    }
    if x0.len() != spec.state_dim() {
        return Err(Error::DimensionMismatch { expected: spec.state_dim(), got: x0.len() });
    }
    let n_dist = spec.dynamics.disturbances.len();
    if let DisturbanceMode::Fixed(seq) = mode {
        if seq.is_empty() || seq.iter().any(|&i| i >= n_dist) {
            return Err(Error::InvalidConfig(format!(
                "fixed disturbance sequence must be non-empty with indices below {n_dist}"
            )));
        }
    }
    let spec = spec.apply_mode();
    let passive = passive_disturbance(&spec);
    let mut traj = Trajectory {
        states: vec![x0.to_vec()],
        controls: vec![],
        disturbances: vec![],
        outcome: RolloutOutcome::Timeout(horizon),
    };
    let mut x = x0.to_vec();
    let mut next = vec![0.0; x.len()];
    for t in 0..=horizon {
        if spec.constraint_at(&x) <= 0.0 {
            traj.outcome = RolloutOutcome::ViolatedConstraint(t);
            break;
        }
        if spec.reward_at(&x) > 0.0 {
            traj.outcome = RolloutOutcome::ReachedTarget(t);
            break;
        }
        if t == horizon {
            break;
        }
        let ui = best_control(vf, &spec, &x);
        let di = match mode {
            DisturbanceMode::WorstCase => worst_disturbance(vf, &spec, &x, ui),
            DisturbanceMode::Fixed(seq) => seq[t % seq.len()],
            DisturbanceMode::None => passive,
        };
        spec.dynamics.step_into(&x, ui, di, &mut next);
        traj.controls.push(spec.dynamics.controls[ui].clone());
        traj.disturbances.push(spec.dynamics.disturbances[di].clone());
        std::mem::swap(&mut x, &mut next);
        traj.states.push(x.clone());
    }
    Ok(traj)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloReport {
    pub initial_states: Vec<Vec<f64>>,
    pub outcomes: Vec<RolloutOutcome>,
    pub proposals: usize,
}

impl MonteCarloReport {
    pub fn success_rate(&self) -> f64 {
        if self.outcomes.is_empty() {
            return 0.0;
        }
        self.outcomes.iter().filter(|o| o.is_success()).count() as f64 / self.outcomes.len() as f64
    }
}

/// Rejection-samples `sample_count` states uniformly from the box
/// `[lower, upper]` with value above `margin` (sample `i` uses seed
/// `seed + i`), then runs a worst-case rollout from each.
#[allow(clippy::too_many_arguments)]
pub fn monte_carlo_in_box<V: ValueFunction + ?Sized>(
    spec: &ProblemSpec,
    vf: &V,
    lower: &[f64],
    upper: &[f64],
    sample_count: usize,
    margin: f64,
    horizon: usize,
    seed: u64,
) -> Result<MonteCarloReport> {
    if !(margin >= 0.0) {
        return Err(Error::InvalidConfig(format!("margin must be >= 0, got {margin}")));
    }
    if lower.len() != spec.state_dim() || upper.len() != spec.state_dim() {
        return Err(Error::DimensionMismatch { expected: spec.state_dim(), got: lower.len() });
    }
    let draws: Vec<(Option<Vec<f64>>, usize)> = (0..sample_count)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            let mut x = vec![0.0; lower.len()];
            for attempt in 1..=PROPOSALS_PER_SAMPLE {
                for (k, xk) in x.iter_mut().enumerate() {
                    *xk = rng.gen_range(lower[k]..=upper[k]);
                }
                if vf.value(&x) > margin {
                    return (Some(x), attempt);
                }
            }
            (None, PROPOSALS_PER_SAMPLE)
        })
        .collect();
    let proposals: usize = draws.iter().map(|d| d.1).sum();
    let accepted = draws.iter().filter(|d| d.0.is_some()).count();
    if accepted < sample_count {
        return Err(Error::Sampling {
            wanted: sample_count,
            accepted,
            proposals,
            rate: accepted as f64 / proposals.max(1) as f64,
        });
    }
    let initial_states: Vec<Vec<f64>> = draws.into_iter().filter_map(|d| d.0).collect();
    let outcomes = initial_states
        .par_iter()
        .map(|x0| rollout(spec, vf, x0, horizon, &DisturbanceMode::WorstCase).map(|t| t.outcome))
        .collect::<Result<Vec<_>>>()?;
    Ok(MonteCarloReport { initial_states, outcomes, proposals })
}

/// [`monte_carlo_in_box`] over the field's own grid box.
pub fn monte_carlo(
    spec: &ProblemSpec,
    field: &ValueField,
    sample_count: usize,
    margin: f64,
    horizon: usize,
    seed: u64,
) -> Result<MonteCarloReport> {
    let g = field.grid();
    monte_carlo_in_box(spec, field, g.lower(), g.upper(), sample_count, margin, horizon, seed)
}

/// Fraction of sampled states whose worst-case rollout reaches the target.
pub fn monte_carlo_success(
    spec: &ProblemSpec,
    field: &ValueField,
    sample_count: usize,
    margin: f64,
    horizon: usize,
    seed: u64,
) -> Result<f64> {
    Ok(monte_carlo(spec, field, sample_count, margin, horizon, seed)?.success_rate())
}

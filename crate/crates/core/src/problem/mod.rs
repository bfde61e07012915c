//! Problem definitions: dynamics, margin functions, discount and solve mode.

mod benchmark;
mod config;
mod dynamics;
mod margin;

pub use benchmark::{builtin_benchmark, default_grid, BENCHMARKS};
pub use config::{DynamicsName, DynamicsSection, InitName, ProblemFile, RunFile, SolveSection, TrainSection};
pub use dynamics::{spectral_norm, DynamicsKind, GameDynamics, CART_DRIFT};
pub use margin::{MarginFn, MAX_DEPTH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SolveMode {
    #[default]
    ReachAvoid,
    /// Reward forced to `-1`: the zero level set is the viability kernel.
    ViabilityKernel,
    /// Constraint forced to `+1`: the super-zero set is the backward reachable set.
    BackwardReach,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LipschitzConstants {
    pub dynamics: f64,
    pub reward: f64,
    pub constraint: f64,
}

impl LipschitzConstants {
    /// `max(L_r, L_c)`, the Lipschitz constant of the value function when
    /// `gamma * L_f < 1`.
    pub fn value_bound(&self) -> f64 {
        self.reward.max(self.constraint)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub dynamics: GameDynamics,
    pub reward: MarginFn,
    pub constraint: MarginFn,
    pub gamma: f64,
    pub mode: SolveMode,
    pub lipschitz: Option<LipschitzConstants>,
}

impl ProblemSpec {
    pub fn new(
        dynamics: GameDynamics,
        reward: MarginFn,
        constraint: MarginFn,
        gamma: f64,
        mode: SolveMode,
    ) -> Result<Self> {
        let spec = Self { dynamics, reward, constraint, gamma, mode, lipschitz: None };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidProblem(format!("gamma must lie in [0, 1), got {}", self.gamma)));
        }
        self.dynamics.validate()?;
        let n = self.dynamics.state_dim();
        self.reward.validate(n)?;
        self.constraint.validate(n)?;
        if let Some(l) = &self.lipschitz {
            if [l.dynamics, l.reward, l.constraint].iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::InvalidProblem("Lipschitz constants must be finite and >= 0".into()));
            }
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        self.dynamics.state_dim()
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    /// Specializes the margins for the solve mode: viability replaces the
    /// reward with `-1`, backward reach replaces the constraint with `+1`.
    pub fn apply_mode(&self) -> ProblemSpec {
        let mut out = self.clone();
        match self.mode {
            SolveMode::ReachAvoid => {}
            SolveMode::ViabilityKernel => out.reward = MarginFn::constant(-1.0),
            SolveMode::BackwardReach => out.constraint = MarginFn::constant(1.0),
        }
        out
    }

    #[inline]
    pub fn reward_at(&self, x: &[f64]) -> f64 {
        self.reward.eval(x)
    }

    #[inline]
    pub fn constraint_at(&self, x: &[f64]) -> f64 {
        self.constraint.eval(x)
    }

    /// Declared constants, or estimates over `grid` (spectral norm of the
    /// dynamics Jacobian, largest adjacent-node slope of each margin).
    pub fn lipschitz_on(&self, grid: &GridSpec) -> LipschitzConstants {
        self.lipschitz.unwrap_or_else(|| LipschitzConstants {
            dynamics: self.dynamics.lipschitz(),
            reward: self.reward.estimate_lipschitz(grid),
            constraint: self.constraint.estimate_lipschitz(grid),
        })
    }

    /// Whether the value function is guaranteed `max(L_r, L_c)`-Lipschitz.
    pub fn value_is_lipschitz(&self, grid: &GridSpec) -> bool {
        self.gamma * self.lipschitz_on(grid).dynamics < 1.0
    }
}

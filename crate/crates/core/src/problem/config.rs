//! TOML problem/run configuration files.
//!
//! ```toml
//! gamma = 0.99
//! mode = "reach-avoid"            # or "viability-kernel", "backward-reach"
//!
//! [dynamics]
//! kind = "double-integrator-2d"   # or "three-cart-6d", "linear-affine"
//! dt = 0.02
//! controls = [[-1.0], [1.0]]
//! disturbances = [[-0.5], [0.5]]
//! # linear-affine only: a, b_u, b_d, bias
//!
//! [reward]
//! kind = "sphere"
//! center = [0.0, 0.0]
//! scales = [1.0, 1.0]
//!
//! [constraint]
//! kind = "sphere"
//! center = [2.0, 0.0]
//! scales = [1.5, 1.0]
//!
//! [grid]
//! lower = [-3.0, -3.0]
//! upper = [3.0, 3.0]
//! counts = [41, 41]
//! ```
//!
//! Optional `[lipschitz]`, `[solve]` and `[train]` sections are also
//! accepted. Unknown keys anywhere are rejected.

use serde::{Deserialize, Serialize};

use super::{DynamicsKind, GameDynamics, LipschitzConstants, MarginFn, ProblemSpec, SolveMode};
use crate::error::{Error, Result};
use crate::grid::GridSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DynamicsName {
    #[serde(rename = "double-integrator-2d")]
    DoubleIntegrator2d,
    #[serde(rename = "three-cart-6d")]
    ThreeCart6d,
    LinearAffine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsSection {
    pub kind: DynamicsName,
    pub dt: f64,
    pub controls: Vec<Vec<f64>>,
    pub disturbances: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_u: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_d: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<Vec<f64>>,
}

impl DynamicsSection {
    fn build(&self) -> Result<GameDynamics> {
        let linear_keys = self.a.is_some() || self.b_u.is_some() || self.b_d.is_some() || self.bias.is_some();
        let kind = match self.kind {
            DynamicsName::DoubleIntegrator2d | DynamicsName::ThreeCart6d if linear_keys => {
                return Err(Error::InvalidConfig(
                    "dynamics.a / b_u / b_d / bias only apply to kind = \"linear-affine\"".into(),
                ))
            }
            DynamicsName::DoubleIntegrator2d => DynamicsKind::DoubleIntegrator2D,
            DynamicsName::ThreeCart6d => DynamicsKind::ThreeCart6D,
            DynamicsName::LinearAffine => {
                let a = self
                    .a
                    .clone()
                    .ok_or_else(|| Error::InvalidConfig("linear-affine dynamics need dynamics.a".into()))?;
                let n = a.len();
                let m = self.controls.first().map_or(0, Vec::len);
                let l = self.disturbances.first().map_or(0, Vec::len);
                DynamicsKind::LinearAffine {
                    b_u: self.b_u.clone().unwrap_or_else(|| vec![vec![0.0; m]; n]),
                    b_d: self.b_d.clone().unwrap_or_else(|| vec![vec![0.0; l]; n]),
                    bias: self.bias.clone().unwrap_or_else(|| vec![0.0; n]),
                    a,
                }
            }
        };
        GameDynamics::new(kind, self.dt, self.controls.clone(), self.disturbances.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitName {
    MinRc,
    Zero,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveSection {
    pub tolerance: Option<f64>,
    pub max_iterations: Option<usize>,
    pub lambda: Option<f64>,
    pub init: Option<InitName>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub alpha: Option<f64>,
    pub epochs: Option<usize>,
    pub batch: Option<usize>,
    pub horizon: Option<usize>,
    pub lambda: Option<f64>,
    pub hidden: Option<Vec<usize>>,
    pub capacity: Option<usize>,
    pub updates_per_epoch: Option<usize>,
    pub seed: Option<u64>,
    pub sample_lower: Option<Vec<f64>>,
    pub sample_upper: Option<Vec<f64>>,
}

/// Everything a configuration file may carry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFile {
    pub gamma: f64,
    #[serde(default)]
    pub mode: SolveMode,
    pub dynamics: DynamicsSection,
    pub reward: MarginFn,
    pub constraint: MarginFn,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz: Option<LipschitzConstants>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solve: Option<SolveSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainSection>,
}

/// The problem-only subset of [`RunFile`].
pub type ProblemFile = RunFile;

impl RunFile {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn problem(&self) -> Result<ProblemSpec> {
        let spec = ProblemSpec {
            dynamics: self.dynamics.build()?,
            reward: self.reward.clone(),
            constraint: self.constraint.clone(),
            gamma: self.gamma,
            mode: self.mode,
            lipschitz: self.lipschitz,
        };
        spec.validate()?;
        if let Some(grid) = &self.grid {
            if grid.dim() != spec.state_dim() {
                return Err(Error::InvalidConfig(format!(
                    "grid has {} axes but the dynamics state has {}",
                    grid.dim(),
                    spec.state_dim()
                )));
            }
        }
        Ok(spec)
    }
}

//! Margin functions: analytic expression trees whose super-zero level sets
//! define target and constraint sets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;

pub const MAX_DEPTH: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MarginFn {
    Constant {
        value: f64,
    },
    /// `1 - sum(((x[axes[i]] - center[i]) / scales[i])^2)`. When `axes` is
    /// omitted the terms apply to axes `0..center.len()`.
    Sphere {
        center: Vec<f64>,
        scales: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        axes: Option<Vec<usize>>,
    },
    /// `half_width - |x[axis] - center|`.
    AbsSlab {
        axis: usize,
        #[serde(default)]
        center: f64,
        half_width: f64,
    },
    /// `weights . x + bias`, weights covering the leading coordinates.
    Affine {
        weights: Vec<f64>,
        #[serde(default)]
        bias: f64,
    },
    Scale {
        factor: f64,
        term: Box<MarginFn>,
    },
    Min {
        terms: Vec<MarginFn>,
    },
    Max {
        terms: Vec<MarginFn>,
    },
    Negate {
        term: Box<MarginFn>,
    },
}

impl MarginFn {
    pub fn constant(value: f64) -> Self {
        MarginFn::Constant { value }
    }

    pub fn sphere(center: Vec<f64>, scales: Vec<f64>) -> Self {
        MarginFn::Sphere { center, scales, axes: None }
    }

    pub fn sphere_on(axes: Vec<usize>, center: Vec<f64>, scales: Vec<f64>) -> Self {
        MarginFn::Sphere { center, scales, axes: Some(axes) }
    }

    pub fn abs_slab(axis: usize, center: f64, half_width: f64) -> Self {
        MarginFn::AbsSlab { axis, center, half_width }
    }

    pub fn scale(factor: f64, term: MarginFn) -> Self {
        MarginFn::Scale { factor, term: Box::new(term) }
    }

    pub fn min(terms: Vec<MarginFn>) -> Self {
        MarginFn::Min { terms }
    }

    pub fn max(terms: Vec<MarginFn>) -> Self {
        MarginFn::Max { terms }
    }

    pub fn negate(term: MarginFn) -> Self {
        MarginFn::Negate { term: Box::new(term) }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            MarginFn::Constant { value } => *value,
            MarginFn::Sphere { center, scales, axes } => {
                let mut sum = 0.0;
                for i in 0..center.len() {
                    let axis = axes.as_ref().map_or(i, |a| a[i]);
                    let z = (x[axis] - center[i]) / scales[i];
                    sum += z * z;
                }
                1.0 - sum
            }
            MarginFn::AbsSlab { axis, center, half_width } => half_width - (x[*axis] - center).abs(),
            MarginFn::Affine { weights, bias } => weights.iter().zip(x).fold(*bias, |acc, (w, xi)| acc + w * xi),
            MarginFn::Scale { factor, term } => factor * term.eval(x),
            MarginFn::Min { terms } => terms.iter().map(|t| t.eval(x)).fold(f64::INFINITY, f64::min),
            MarginFn::Max { terms } => terms.iter().map(|t| t.eval(x)).fold(f64::NEG_INFINITY, f64::max),
            MarginFn::Negate { term } => -term.eval(x),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            MarginFn::Scale { term, .. } | MarginFn::Negate { term } => 1 + term.depth(),
            MarginFn::Min { terms } | MarginFn::Max { terms } => {
                1 + terms.iter().map(MarginFn::depth).max().unwrap_or(0)
            }
            _ => 1,
        }
    }

    /// Structural checks against a state dimension.
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.depth() > MAX_DEPTH {
            return Err(Error::InvalidProblem(format!("margin expression deeper than {MAX_DEPTH} levels")));
        }
        self.validate_node(dim)
    }

    fn validate_node(&self, dim: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidProblem(msg));
        match self {
            MarginFn::Constant { value } if !value.is_finite() => bad("non-finite constant".into()),
            MarginFn::Sphere { center, scales, axes } => {
                if center.is_empty() || center.len() != scales.len() {
                    return bad("sphere needs matching non-empty center and scales".into());
                }
                if scales.iter().any(|s| !s.is_finite() || *s == 0.0) || center.iter().any(|c| !c.is_finite()) {
                    return bad("sphere center and scales must be finite, scales non-zero".into());
                }
                match axes {
                    Some(a) if a.len() != center.len() => bad("sphere axes must match the center length".into()),
                    Some(a) if a.iter().any(|&i| i >= dim) => {
                        bad(format!("sphere axis out of range for a {dim}-dimensional state"))
                    }
                    None if center.len() > dim => {
                        bad(format!("sphere has more terms than the {dim}-dimensional state"))
                    }
                    _ => Ok(()),
                }
            }
            MarginFn::AbsSlab { axis, center, half_width } => {
                if *axis >= dim {
                    bad(format!("slab axis {axis} out of range for a {dim}-dimensional state"))
                } else if !center.is_finite() || !half_width.is_finite() {
                    bad("slab parameters must be finite".into())
                } else {
                    Ok(())
                }
            }
            MarginFn::Affine { weights, bias } => {
                if weights.len() > dim {
                    bad(format!("affine margin has {} weights for dimension {dim}", weights.len()))
                } else if !bias.is_finite() || weights.iter().any(|w| !w.is_finite()) {
                    bad("affine coefficients must be finite".into())
                } else {
                    Ok(())
                }
            }
            MarginFn::Scale { factor, term } => {
                if !factor.is_finite() {
                    return bad("non-finite scale factor".into());
                }
                term.validate_node(dim)
            }
            MarginFn::Negate { term } => term.validate_node(dim),
            MarginFn::Min { terms } | MarginFn::Max { terms } => {
                if terms.is_empty() {
                    return bad("min/max needs at least one term".into());
                }
                terms.iter().try_for_each(|t| t.validate_node(dim))
            }
            MarginFn::Constant { .. } => Ok(()),
        }
    }

    /// Largest slope between axis-adjacent grid nodes. Used as a Lipschitz
    /// estimate over the grid box when no constant is declared.
    pub fn estimate_lipschitz(&self, grid: &GridSpec) -> f64 {
        let mut x = vec![0.0; grid.dim()];
        let mut y = vec![0.0; grid.dim()];
        let mut best = 0.0f64;
        for flat in 0..grid.total_nodes() {
            grid.node_state_into(flat, &mut x);
            let fx = self.eval(&x);
            let idx = grid.multi_index(flat);
            for axis in 0..grid.dim() {
                if idx[axis] + 1 == grid.counts()[axis] {
                    continue;
                }
                y.copy_from_slice(&x);
                y[axis] = grid.node_coord(axis, idx[axis] + 1);
                let slope = (self.eval(&y) - fx).abs() / (y[axis] - x[axis]);
                best = best.max(slope);
            }
        }
        best
    }

    /// Largest `|value|` over the grid nodes.
    pub fn max_abs_on(&self, grid: &GridSpec) -> f64 {
        let mut x = vec![0.0; grid.dim()];
        (0..grid.total_nodes()).fold(0.0, |m, flat| {
            grid.node_state_into(flat, &mut x);
            m.max(self.eval(&x).abs())
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disc_and_ellipse() {
        let target = MarginFn::sphere(vec![0.0, 0.0], vec![1.0, 1.0]);
        assert_eq!(target.eval(&[0.0, 0.0]), 1.0);
        assert_eq!(target.eval(&[0.6, 0.8]), 1.0 - (0.36 + 0.64));
        let ellipse = MarginFn::sphere(vec![2.0, 0.0], vec![1.5, 1.0]);
        assert_eq!(ellipse.eval(&[2.0, 0.0]), 1.0);
        assert!((ellipse.eval(&[3.5, 0.0])).abs() < 1e-15);
    }

    #[test]
    fn combinators() {
        let slab = MarginFn::abs_slab(1, 0.5, 2.0);
        assert_eq!(slab.eval(&[9.0, 1.5]), 1.0);
        let f = MarginFn::min(vec![MarginFn::constant(3.0), slab.clone()]);
        assert_eq!(f.eval(&[0.0, 0.5]), 2.0);
        let g = MarginFn::max(vec![MarginFn::constant(3.0), slab]);
        assert_eq!(g.eval(&[0.0, 0.5]), 3.0);
        assert_eq!(MarginFn::negate(MarginFn::constant(2.0)).eval(&[0.0]), -2.0);
        assert_eq!(MarginFn::scale(-4.0, MarginFn::constant(0.5)).eval(&[0.0]), -2.0);
        let a = MarginFn::Affine { weights: vec![1.0, -2.0], bias: 0.5 };
        assert_eq!(a.eval(&[1.0, 1.0, 100.0]), -0.5);
    }

    #[test]
    fn validation() {
        assert!(MarginFn::abs_slab(2, 0.0, 1.0).validate(2).is_err());
        assert!(MarginFn::min(vec![]).validate(2).is_err());
        assert!(MarginFn::sphere(vec![0.0], vec![0.0]).validate(1).is_err());
        assert!(MarginFn::sphere_on(vec![0, 5], vec![0.0, 0.0], vec![1.0, 1.0]).validate(3).is_err());
        let mut deep = MarginFn::constant(1.0);
        for _ in 0..MAX_DEPTH {
            deep = MarginFn::negate(deep);
        }
        assert!(deep.validate(1).is_err());
        assert!(MarginFn::sphere(vec![0.0, 0.0], vec![1.0, 1.0]).validate(2).is_ok());
    }

    #[test]
    fn lipschitz_estimate_of_affine_is_exact() {
        let grid = GridSpec::uniform(2, -1.0, 1.0, 5).unwrap();
        let f = MarginFn::Affine { weights: vec![3.0, -0.5], bias: 1.0 };
        assert!((f.estimate_lipschitz(&grid) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn toml_form() {
        let text = r#"
            kind = "min"
            terms = [
              { kind = "abs_slab", axis = 0, half_width = 2.0 },
              { kind = "sphere", center = [0.0], scales = [1.0], axes = [1] },
            ]
        "#;
        let f: MarginFn = toml::from_str(text).unwrap();
        assert_eq!(f.eval(&[1.0, 0.5]), 0.75);
        let bad = r#"
            kind = "abs_slab"
            axis = 0
            half_width = 1.0
            colour = "red"
        "#;
        assert!(toml::from_str::<MarginFn>(bad).is_err());
    }
}

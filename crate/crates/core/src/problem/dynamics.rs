//! Discrete-time game dynamics `x' = f(x, u, d)` with finite action sets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Drift added to the velocities of the two uncontrolled carts, per unit time.
pub const CART_DRIFT: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DynamicsKind {
    /// `(x, y) -> (x + dt*y, y + dt*(u + d))`.
    DoubleIntegrator2D,
    /// Three double-integrator carts, state `[x1, v1, x2, v2, x3, v3]`. Only
    /// the first cart is actuated; the other two drift.
    ThreeCart6D,
    /// Forward-Euler step of `dx/dt = A x + Bu u + Bd d + bias`:
    /// `x' = x + dt * (A x + Bu u + Bd d + bias)`.
    LinearAffine { a: Vec<Vec<f64>>, b_u: Vec<Vec<f64>>, b_d: Vec<Vec<f64>>, bias: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameDynamics {
    pub kind: DynamicsKind,
    pub dt: f64,
    pub controls: Vec<Vec<f64>>,
    pub disturbances: Vec<Vec<f64>>,
}

impl GameDynamics {
    pub fn new(kind: DynamicsKind, dt: f64, controls: Vec<Vec<f64>>, disturbances: Vec<Vec<f64>>) -> Result<Self> {
        let d = Self { kind, dt, controls, disturbances };
        d.validate()?;
        Ok(d)
    }

    /// Linear system with `A = 0`, `B = 0`: every action leaves the state where it is.
    pub fn stationary(dim: usize, controls: Vec<Vec<f64>>, disturbances: Vec<Vec<f64>>) -> Result<Self> {
        let m = controls.first().map_or(0, Vec::len);
        let l = disturbances.first().map_or(0, Vec::len);
        Self::new(
            DynamicsKind::LinearAffine {
                a: vec![vec![0.0; dim]; dim],
                b_u: vec![vec![0.0; m]; dim],
                b_d: vec![vec![0.0; l]; dim],
                bias: vec![0.0; dim],
            },
            1.0,
            controls,
            disturbances,
        )
    }

    pub fn state_dim(&self) -> usize {
        match &self.kind {
            DynamicsKind::DoubleIntegrator2D => 2,
            DynamicsKind::ThreeCart6D => 6,
            DynamicsKind::LinearAffine { a, .. } => a.len(),
        }
    }

    fn action_dims(&self) -> (usize, usize) {
        match &self.kind {
            DynamicsKind::DoubleIntegrator2D | DynamicsKind::ThreeCart6D => (1, 1),
            DynamicsKind::LinearAffine { b_u, b_d, .. } => {
                (b_u.first().map_or(0, Vec::len), b_d.first().map_or(0, Vec::len))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidProblem(m));
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if self.controls.is_empty() || self.disturbances.is_empty() {
            return bad("control and disturbance sets must be non-empty".into());
        }
        if let DynamicsKind::LinearAffine { a, b_u, b_d, bias } = &self.kind {
            let n = a.len();
            if n == 0 {
                return bad("linear dynamics need a non-empty state".into());
            }
            if a.iter().any(|row| row.len() != n) {
                return bad("A must be square".into());
            }
            if b_u.len() != n || b_d.len() != n || bias.len() != n {
                return bad("Bu, Bd and bias must have one row per state".into());
            }
            let m = b_u[0].len();
            let l = b_d[0].len();
            if b_u.iter().any(|r| r.len() != m) || b_d.iter().any(|r| r.len() != l) {
                return bad("ragged input matrix".into());
            }
            let all = a.iter().chain(b_u).chain(b_d).flatten().chain(bias);
            if all.into_iter().any(|v| !v.is_finite()) {
                return bad("non-finite coefficient in linear dynamics".into());
            }
        }
        let (m, l) = self.action_dims();
        for (name, set, width) in [("control", &self.controls, m), ("disturbance", &self.disturbances, l)] {
            for (i, v) in set.iter().enumerate() {
                if v.len() != width {
                    return bad(format!("{name} {i} has length {}, expected {width}", v.len()));
                }
                if v.iter().any(|c| !c.is_finite()) {
                    return bad(format!("{name} {i} is not finite"));
                }
                if set[..i].contains(v) {
                    return bad(format!("duplicate {name} {v:?}"));
                }
            }
        }
        Ok(())
    }

    pub fn control_index(&self, u: &[f64]) -> Result<usize> {
        self.controls
            .iter()
            .position(|c| c.as_slice() == u)
            .ok_or_else(|| Error::ActionNotInSet { kind: "control", value: u.to_vec() })
    }

    pub fn disturbance_index(&self, d: &[f64]) -> Result<usize> {
        self.disturbances
            .iter()
            .position(|c| c.as_slice() == d)
            .ok_or_else(|| Error::ActionNotInSet { kind: "disturbance", value: d.to_vec() })
    }

    /// Successor state; rejects actions outside the declared sets.
    pub fn step(&self, x: &[f64], u: &[f64], d: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.state_dim() {
            return Err(Error::DimensionMismatch { expected: self.state_dim(), got: x.len() });
        }
        let ui = self.control_index(u)?;
        let di = self.disturbance_index(d)?;
        let mut out = vec![0.0; x.len()];
        self.step_into(x, ui, di, &mut out);
        Ok(out)
    }

    /// Successor for action indices, written into `out`.
    #[inline]
    pub fn step_into(&self, x: &[f64], ui: usize, di: usize, out: &mut [f64]) {
        let u = &self.controls[ui];
        let d = &self.disturbances[di];
        let dt = self.dt;
        match &self.kind {
            DynamicsKind::DoubleIntegrator2D => {
                out[0] = x[0] + dt * x[1];
                out[1] = x[1] + dt * (u[0] + d[0]);
            }
            DynamicsKind::ThreeCart6D => {
                out[0] = x[0] + dt * x[1];
                out[1] = x[1] + dt * (u[0] + d[0]);
                out[2] = x[2] + dt * x[3];
                out[3] = x[3] + CART_DRIFT * dt;
                out[4] = x[4] + dt * x[5];
                out[5] = x[5] + CART_DRIFT * dt;
            }
            DynamicsKind::LinearAffine { a, b_u, b_d, bias } => {
                for i in 0..x.len() {
                    let mut rate = 0.0;
                    for (aij, xj) in a[i].iter().zip(x) {
                        rate += aij * xj;
                    }
                    for (bij, uj) in b_u[i].iter().zip(u) {
                        rate += bij * uj;
                    }
                    for (bij, dj) in b_d[i].iter().zip(d) {
                        rate += bij * dj;
                    }
                    rate += bias[i];
                    out[i] = x[i] + dt * rate;
                }
            }
        }
    }

    /// State Jacobian `df/dx`, constant for every supported kind.
    pub fn jacobian(&self) -> Vec<Vec<f64>> {
        let n = self.state_dim();
        let mut j: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|k| if i == k { 1.0 } else { 0.0 }).collect()).collect();
        match &self.kind {
            DynamicsKind::DoubleIntegrator2D | DynamicsKind::ThreeCart6D => {
                for cart in 0..n / 2 {
                    j[2 * cart][2 * cart + 1] = self.dt;
                }
            }
            DynamicsKind::LinearAffine { a, .. } => {
                for i in 0..n {
                    for k in 0..n {
                        j[i][k] += self.dt * a[i][k];
                    }
                }
            }
        }
        j
    }

    /// Lipschitz constant of `f` in `x` in the Euclidean norm: the spectral
    /// norm of the (constant) state Jacobian.
    pub fn lipschitz(&self) -> f64 {
        spectral_norm(&self.jacobian())
    }
}

/// Largest singular value by power iteration on `M^T M`.
pub fn spectral_norm(m: &[Vec<f64>]) -> f64 {
    let n = m.first().map_or(0, Vec::len);
    if n == 0 {
        return 0.0;
    }
    let mtm: Vec<Vec<f64>> =
        (0..n).map(|i| (0..n).map(|k| m.iter().map(|row| row[i] * row[k]).sum()).collect()).collect();
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * i as f64).collect();
    let mut eig = 0.0;
    for _ in 0..500 {
        let w: Vec<f64> = mtm.iter().map(|row| row.iter().zip(&v).map(|(a, b)| a * b).sum()).collect();
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let next: f64 = w.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() / v.iter().map(|x| x * x).sum::<f64>();
        v = w.into_iter().map(|x| x / norm).collect();
        if (next - eig).abs() <= 1e-15 * next.abs() {
            eig = next;
            break;
        }
        eig = next;
    }
    eig.sqrt()
}

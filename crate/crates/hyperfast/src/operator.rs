//! Finite-volume form of the radial Laplacian used by the implicit solvers.
//!
//! Node i owns the dual cell [r_{i-1/2}, r_{i+1/2}] with exact volume
//! ∫ (sinh r)^{N-1} dr; fluxes across cell faces use the face weight, so
//!
//!   vol_i (Lv)_i = a_i (v_{i+1} − v_i) − a_{i−1} (v_i − v_{i−1}),
//!   a_i = (sinh r_{i+1/2})^{N-1} / (r_{i+1} − r_i).
//!
//! This gives a symmetric negative semi-definite stiffness and an M-matrix
//! for every implicit step, which is what keeps the Newton iterates positive.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::{s_map, volume_weight, RadialGrid};
use crate::quad::gauss5;

/// Condition imposed at the truncation radius R.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OuterBoundary {
    /// v(R) = 0 (the ball approximants).
    DirichletZero,
    /// No artificial wall: the exterior is replaced by its decaying harmonic
    /// extension, i.e. the outgoing flux is v(R)/s(R).
    #[serde(alias = "open")]
    None,
}

#[derive(Clone, Debug)]
pub struct DiffusionOperator {
    dim: usize,
    vol: Vec<f64>,
    edge: Vec<f64>,
    outflow: f64,
    boundary: OuterBoundary,
}

impl DiffusionOperator {
    pub fn new(grid: &RadialGrid, boundary: OuterBoundary) -> Result<Self> {
        let r = grid.nodes();
        let n = r.len();
        let dim = grid.dim();
        let w = |x: f64| volume_weight(x, dim);
        let mut vol = vec![0.0; n];
        let mut edge = vec![0.0; n - 1];
        for i in 0..n - 1 {
            let mid = 0.5 * (r[i] + r[i + 1]);
            vol[i] += gauss5(w, r[i], mid);
            vol[i + 1] += gauss5(w, mid, r[i + 1]);
            edge[i] = w(mid) / (r[i + 1] - r[i]);
        }
        let outflow = match boundary {
            OuterBoundary::DirichletZero => 0.0,
            OuterBoundary::None => 1.0 / s_map(grid.radius(), dim)?,
        };
        Ok(Self { dim, vol, edge, outflow, boundary })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn len(&self) -> usize {
        self.vol.len()
    }
    pub fn is_empty(&self) -> bool {
        self.vol.is_empty()
    }
    pub fn boundary(&self) -> OuterBoundary {
        self.boundary
    }
    /// Dual-cell volumes (lumped mass).
    pub fn volumes(&self) -> &[f64] {
        &self.vol
    }
    /// Face coefficients a_i.
    pub fn edges(&self) -> &[f64] {
        &self.edge
    }
    /// Exterior coefficient 1/s(R) (zero for the Dirichlet wall).
    pub fn outflow(&self) -> f64 {
        self.outflow
    }

    /// Number of unknowns of an implicit solve (the Dirichlet node is fixed).
    pub fn unknowns(&self) -> usize {
        match self.boundary {
            OuterBoundary::DirichletZero => self.len() - 1,
            OuterBoundary::None => self.len(),
        }
    }

    /// vol_i·(Lv)_i, i.e. the net inward flux into each cell.
    pub fn apply_weighted(&self, v: &[f64]) -> Vec<f64> {
        let n = self.len();
        let mut out = vec![0.0; n];
        for i in 0..n - 1 {
            let f = self.edge[i] * (v[i + 1] - v[i]);
            out[i] += f;
            out[i + 1] -= f;
        }
        out[n - 1] -= self.outflow * v[n - 1];
        if self.boundary == OuterBoundary::DirichletZero {
            out[n - 1] = 0.0;
        }
        out
    }

    /// (Lv)_i.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = self.apply_weighted(v);
        for (o, vol) in out.iter_mut().zip(&self.vol) {
            *o /= vol;
        }
        out
    }

    /// Discrete Dirichlet energy Σ a_i (v_{i+1} − v_i)² + v(R)²/s(R); the last
    /// term is the energy of the harmonic exterior extension.
    pub fn dirichlet_energy(&self, v: &[f64]) -> f64 {
        let n = self.len();
        let inner: f64 = (0..n - 1)
            .map(|i| self.edge[i] * (v[i + 1] - v[i]).powi(2))
            .sum();
        inner + self.outflow * v[n - 1] * v[n - 1]
    }

    /// Σ vol_i |u_i|^p.
    pub fn integral_pow(&self, u: &[f64], p: f64) -> f64 {
        self.vol.iter().zip(u).map(|(q, x)| q * x.abs().powf(p)).sum()
    }

    /// Tridiagonal stiffness rows for the unknown block: K = −vol·L.
    /// Returns (lower, diag, upper).
    pub fn stiffness(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let k = self.unknowns();
        let n = self.len();
        let mut lower = vec![0.0; k];
        let mut diag = vec![0.0; k];
        let mut upper = vec![0.0; k];
        for i in 0..k {
            if i > 0 {
                lower[i] = -self.edge[i - 1];
                diag[i] += self.edge[i - 1];
            }
            if i < n - 1 {
                diag[i] += self.edge[i];
                if i + 1 < k {
                    upper[i] = -self.edge[i];
                }
            }
        }
        if k == n {
            diag[n - 1] += self.outflow;
        }
        (lower, diag, upper)
    }
}

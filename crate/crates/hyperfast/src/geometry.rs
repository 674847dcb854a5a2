//! Radial calculus on hyperbolic space H^N.
//!
//! Radial functions live on a 1-D grid over [0, R] carrying the volume weight
//! (sinh r)^{N-1}. The Laplace–Beltrami operator on radial functions is
//!
//!   Δf = f'' + (N-1) coth(r) f',
//!
//! with the regular limit Δf(0) = N f''(0) at the origin.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::fd_weights;
use crate::quad::adaptive_simpson;

/// The ambient space; only the dimension matters for radial problems.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HyperbolicSpace {
    dim: usize,
}

impl HyperbolicSpace {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(invalid("N", format!("dimension must be >= 2, got {dim}")));
        }
        Ok(Self { dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// m_s = (N-2)/(N+2).
    pub fn critical_exponent(&self) -> f64 {
        critical_exponent(self.dim)
    }

    pub fn volume_weight(&self, r: f64) -> f64 {
        volume_weight(r, self.dim)
    }
}

pub fn critical_exponent(dim: usize) -> f64 {
    (dim as f64 - 2.0) / (dim as f64 + 2.0)
}

/// (sinh r)^{N-1}.
pub fn volume_weight(r: f64, dim: usize) -> f64 {
    r.sinh().powi(dim as i32 - 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Stretching {
    Uniform,
    /// Cell widths grow by `ratio` from one cell to the next.
    Geometric { ratio: f64 },
}

/// Node set 0 = r_0 < r_1 < ... < r_M = R.
#[derive(Clone, Debug, PartialEq)]
pub struct RadialGrid {
    dim: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    stretching: Stretching,
}

impl RadialGrid {
    /// Uniform grid with `intervals` cells on [0, radius].
    pub fn uniform(dim: usize, radius: f64, intervals: usize) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(invalid("R", "radius must be positive"));
        }
        if intervals < 2 {
            return Err(Error::GridTooSmall { needed: 3, have: intervals + 1 });
        }
        let h = radius / intervals as f64;
        let mut nodes: Vec<f64> = (0..=intervals).map(|i| i as f64 * h).collect();
        nodes[intervals] = radius;
        Self::build(dim, nodes, Stretching::Uniform)
    }

    /// Geometrically stretched grid: cell i has width h0·ratio^i.
    pub fn geometric(dim: usize, radius: f64, intervals: usize, ratio: f64) -> Result<Self> {
        if !(ratio > 0.0) {
            return Err(invalid("ratio", "stretching ratio must be positive"));
        }
        if (ratio - 1.0).abs() < 1e-14 {
            return Self::uniform(dim, radius, intervals);
        }
        if intervals < 2 {
            return Err(Error::GridTooSmall { needed: 3, have: intervals + 1 });
        }
        let h0 = radius * (ratio - 1.0) / (ratio.powi(intervals as i32) - 1.0);
        let mut nodes = Vec::with_capacity(intervals + 1);
        let mut r = 0.0;
        let mut h = h0;
        nodes.push(0.0);
        for _ in 0..intervals {
            r += h;
            h *= ratio;
            nodes.push(r);
        }
        nodes[intervals] = radius;
        Self::build(dim, nodes, Stretching::Geometric { ratio })
    }

    /// Arbitrary strictly increasing nodes starting at 0.
    pub fn from_nodes(dim: usize, nodes: Vec<f64>) -> Result<Self> {
        Self::build(dim, nodes, Stretching::Uniform)
    }

    fn build(dim: usize, nodes: Vec<f64>, stretching: Stretching) -> Result<Self> {
        HyperbolicSpace::new(dim)?;
        if nodes.len() < 3 {
            return Err(Error::GridTooSmall { needed: 3, have: nodes.len() });
        }
        if nodes[0] != 0.0 {
            return Err(invalid("nodes", "first node must be exactly 0"));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("nodes", "nodes must be strictly increasing"));
        }
        let weights = nodes.iter().map(|&r| volume_weight(r, dim)).collect();
        Ok(Self { dim, nodes, weights, stretching })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }
    /// Pointwise volume weights (sinh r_i)^{N-1}.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn len(&self) -> usize {
        self.nodes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
    pub fn radius(&self) -> f64 {
        *self.nodes.last().unwrap()
    }
    pub fn stretching(&self) -> Stretching {
        self.stretching
    }

    /// Largest cell width.
    pub fn max_spacing(&self) -> f64 {
        self.nodes.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    /// Every cell bisected; nodes of `self` remain nodes of the result.
    pub fn refined(&self) -> RadialGrid {
        let mut nodes = Vec::with_capacity(2 * self.len() - 1);
        for w in self.nodes.windows(2) {
            nodes.push(w[0]);
            nodes.push(0.5 * (w[0] + w[1]));
        }
        nodes.push(self.radius());
        Self::build(self.dim, nodes, self.stretching).expect("refinement preserves validity")
    }

    /// The grid restricted to nodes `<= r_max` (with `r_max` snapped to a node).
    pub fn truncated(&self, r_max: f64) -> Result<RadialGrid> {
        let nodes: Vec<f64> = self
            .nodes
            .iter()
            .copied()
            .take_while(|&r| r <= r_max * (1.0 + 1e-12))
            .collect();
        Self::build(self.dim, nodes, self.stretching)
    }

    /// Index of the cell containing r (clamped), i.e. nodes[i] <= r <= nodes[i+1].
    pub fn locate(&self, r: f64) -> usize {
        match self.nodes.binary_search_by(|x| x.partial_cmp(&r).unwrap()) {
            Ok(i) => i.min(self.len() - 2),
            Err(0) => 0,
            Err(i) => (i - 1).min(self.len() - 2),
        }
    }

    /// Composite-trapezoid quadrature weights for ∫ f (sinh r)^{N-1} dr.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let n = self.len();
        let mut q = vec![0.0; n];
        for i in 0..n - 1 {
            let h = self.nodes[i + 1] - self.nodes[i];
            q[i] += 0.5 * h * self.weights[i];
            q[i + 1] += 0.5 * h * self.weights[i + 1];
        }
        q
    }

    /// Weighted volume of [0, R] by the trapezoid rule.
    pub fn volume(&self) -> f64 {
        self.trapezoid_weights().iter().sum()
    }
}

/// Node values of a radial function on a shared grid.
#[derive(Clone, Debug)]
pub struct RadialField {
    grid: Arc<RadialGrid>,
    values: Vec<f64>,
}

impl RadialField {
    pub fn new(grid: Arc<RadialGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(invalid(
                "values",
                format!("length {} does not match {} grid nodes", values.len(), grid.len()),
            ));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn<F: Fn(f64) -> f64>(grid: Arc<RadialGrid>, f: F) -> Self {
        let values = grid.nodes().iter().map(|&r| f(r)).collect();
        Self { grid, values }
    }

    pub fn zeros(grid: Arc<RadialGrid>) -> Self {
        let n = grid.len();
        Self { grid, values: vec![0.0; n] }
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.grid
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_nonnegative(&self) -> bool {
        self.values.iter().all(|&v| v >= 0.0)
    }

    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |a, &v| a.max(v.abs()))
    }

    fn check_finite(&self, context: &str) -> Result<()> {
        if self.values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite { context: context.to_string() })
        }
    }
}

/// Discrete Δf: 3-point central differences inside, N·f''(0) at the origin
/// (ghost node by even reflection) and one-sided second-order stencils at R.
pub fn laplacian_radial(f: &RadialField) -> Result<RadialField> {
    let g = f.grid();
    let n = g.len();
    if n < 4 {
        return Err(Error::GridTooSmall { needed: 4, have: n });
    }
    let r = g.nodes();
    let v = f.values();
    let nd = (g.dim() - 1) as f64;
    let mut out = vec![0.0; n];
    let h1 = r[1];
    out[0] = g.dim() as f64 * 2.0 * (v[1] - v[0]) / (h1 * h1);
    for i in 1..n - 1 {
        let xs = [r[i - 1], r[i], r[i + 1]];
        let w1 = fd_weights(r[i], &xs, 1);
        let w2 = fd_weights(r[i], &xs, 2);
        let d1 = w1[0] * v[i - 1] + w1[1] * v[i] + w1[2] * v[i + 1];
        let d2 = w2[0] * v[i - 1] + w2[1] * v[i] + w2[2] * v[i + 1];
        out[i] = d2 + nd / r[i].tanh() * d1;
    }
    let i = n - 1;
    let xs = [r[i - 3], r[i - 2], r[i - 1], r[i]];
    let w1 = fd_weights(r[i], &xs[1..], 1);
    let w2 = fd_weights(r[i], &xs, 2);
    let d1: f64 = w1.iter().zip(&v[i - 2..=i]).map(|(a, b)| a * b).sum();
    let d2: f64 = w2.iter().zip(&v[i - 3..=i]).map(|(a, b)| a * b).sum();
    out[i] = d2 + nd / r[i].tanh() * d1;
    RadialField::new(g.clone(), out)
}

/// k-th radial derivative by finite differences on a centred stencil of
/// k+2 (rounded up to odd) nodes, shifted one-sidedly near the ends so the
/// formal order stays at least two. Orders k >= 3 amplify noise quickly.
pub fn radial_derivative(f: &RadialField, k: usize) -> Result<RadialField> {
    if k == 0 {
        return Ok(f.clone());
    }
    let width = {
        let s = k + 2;
        if s.is_multiple_of(2) {
            s + 1
        } else {
            s
        }
    };
    let g = f.grid();
    let n = g.len();
    if n < width {
        return Err(Error::GridTooSmall { needed: width, have: n });
    }
    let r = g.nodes();
    let v = f.values();
    let half = width / 2;
    let mut out = vec![0.0; n];
    for i in 0..n {
        let start = i.saturating_sub(half).min(n - width);
        let xs = &r[start..start + width];
        let w = fd_weights(r[i], xs, k);
        out[i] = w.iter().zip(&v[start..start + width]).map(|(a, b)| a * b).sum();
    }
    RadialField::new(g.clone(), out)
}

/// Trapezoid approximation of ∫_0^R f (sinh r)^{N-1} dr.
pub fn weighted_integral(f: &RadialField) -> f64 {
    f.grid()
        .trapezoid_weights()
        .iter()
        .zip(f.values())
        .map(|(q, v)| q * v)
        .sum()
}

/// (∫ |f|^p (sinh r)^{N-1} dr)^{1/p} by the trapezoid rule.
pub fn weighted_lp_norm(f: &RadialField, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(invalid("p", format!("exponent must be >= 1, got {p}")));
    }
    f.check_finite("weighted_lp_norm")?;
    let s: f64 = f
        .grid()
        .trapezoid_weights()
        .iter()
        .zip(f.values())
        .map(|(q, v)| q * v.abs().powf(p))
        .sum();
    Ok(s.powf(1.0 / p))
}

/// (‖f‖₂² + ‖f'‖₂²)^{1/2} with f' from `radial_derivative`.
pub fn h1_norm(f: &RadialField) -> Result<f64> {
    let l2 = weighted_lp_norm(f, 2.0)?;
    let d = radial_derivative(f, 1)?;
    let d2 = weighted_lp_norm(&d, 2.0)?;
    Ok((l2 * l2 + d2 * d2).sqrt())
}

/// s(r) = ∫_r^∞ (sinh ω)^{-(N-1)} dω by adaptive quadrature.
pub fn s_map(r: f64, dim: usize) -> Result<f64> {
    HyperbolicSpace::new(dim)?;
    if !(r > 0.0) {
        return Err(invalid("r", "s(r) diverges for r <= 0"));
    }
    if r.is_infinite() {
        return Ok(0.0);
    }
    let k = (dim - 1) as f64;
    let integrand = |w: f64| w.sinh().powf(-k);
    // Panels of unit length out to where the integrand is below e^{-45} relative.
    let span = 45.0 / k;
    let mut total = 0.0;
    let mut a = r;
    // The first panel is split geometrically to follow the r^{-(N-1)} blow-up.
    if r < 1.0 {
        let mut lo = r;
        while lo < 1.0 {
            let hi = (2.0 * lo).min(1.0);
            total += adaptive_simpson(&integrand, lo, hi, 1e-13);
            lo = hi;
        }
        a = 1.0;
    }
    let end = r.max(1.0) + span;
    while a < end {
        let b = (a + 1.0).min(end);
        total += adaptive_simpson(&integrand, a, b, 1e-13);
        a = b;
    }
    // Remainder beyond `end`: (sinh ω)^{-k} ≈ 2^k e^{-kω}.
    total += 2f64.powf(k) * (-k * end).exp() / k;
    Ok(total)
}

/// Closed forms of s(r) for N = 2 (log coth(r/2)) and N = 3 (coth r − 1).
pub fn s_map_closed_form(r: f64, dim: usize) -> Option<f64> {
    match dim {
        // Written to avoid cancellation for large r.
        2 => Some((-r).exp().ln_1p() - (-(-r).exp()).ln_1p()),
        3 => Some(2.0 / (2.0 * r).exp_m1()),
        _ => None,
    }
}

/// Inverse of `s_map` by monotone bisection (absolute tolerance 1e-12 in r).
pub fn s_map_inverse(s: f64, dim: usize) -> Result<f64> {
    if !(s > 0.0) || !s.is_finite() {
        return Err(invalid("s", "inverse defined for finite s > 0"));
    }
    let mut lo = 1.0;
    while s_map(lo, dim)? < s {
        lo *= 0.5;
        if lo < 1e-300 {
            return Err(invalid("s", "value too large to invert"));
        }
    }
    let mut hi = 1.0;
    while s_map(hi, dim)? > s {
        hi *= 2.0;
        if hi > 1e4 {
            return Err(invalid("s", "value too small to invert"));
        }
    }
    while hi - lo > 1e-12 * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if s_map(mid, dim)? > s {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_and_critical_exponent() {
        assert_eq!(volume_weight(0.0, 3), 0.0);
        assert!((volume_weight(1.0, 2) - 1.1752011936438014).abs() < 1e-14);
        let h = HyperbolicSpace::new(3).unwrap();
        assert!((h.critical_exponent() - 0.2).abs() < 1e-15);
        assert!(HyperbolicSpace::new(1).is_err());
    }

    #[test]
    fn geometric_grid_ends_at_radius() {
        let g = RadialGrid::geometric(3, 15.0, 100, 1.01).unwrap();
        assert_eq!(g.nodes()[0], 0.0);
        assert_eq!(g.radius(), 15.0);
        assert!(g.nodes().windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn refinement_keeps_old_nodes() {
        let g = RadialGrid::uniform(2, 1.0, 4).unwrap();
        let f = g.refined();
        assert_eq!(f.len(), 9);
        for (i, r) in g.nodes().iter().enumerate() {
            assert_eq!(f.nodes()[2 * i], *r);
        }
    }

    #[test]
    fn s_map_rejects_nonpositive_radius() {
        assert!(s_map(0.0, 3).is_err());
        assert_eq!(s_map(f64::INFINITY, 3).unwrap(), 0.0);
    }
}

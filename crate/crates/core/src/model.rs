//! Domain geometry and coefficient fields of the backward operator.
//!
//! The generator of the characteristic diffusion is
//! `A v = Σ b_ij ∂_ij v + f·∇v + λ v`, with first-order noise operators
//! `B_i v = β_i·∇v`. The diffusion is completed with auxiliary directions
//! `β̃_j` so that `2b = Σ β_i β_iᵀ + Σ β̃_j β̃_jᵀ`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

/// `(x, t) -> scalar`.
pub type ScalarFn = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;
/// `(x, t, out)`: writes a vector (length n) or a row-major n×n matrix into `out`.
pub type FieldFn = Arc<dyn Fn(&[f64], f64, &mut [f64]) + Send + Sync>;

/// Absolute slack used when comparing a point against the boundary.
pub const BOUNDARY_TOL: f64 = 1e-12;
/// Relative eigenvalue clamp used by [`complete_diffusion`].
pub const CLAMP_REL_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("coefficient evaluation failed at x={x:?}, t={t}")]
    Evaluation { x: Vec<f64>, t: f64 },
    #[error("b is not symmetric at x={x:?}, t={t}")]
    NotSymmetric { x: Vec<f64>, t: f64 },
    #[error("2b - Σββᵀ has eigenvalue {eigenvalue:e} below tolerance at x={x:?}, t={t}")]
    NotPsd { x: Vec<f64>, t: f64, eigenvalue: f64 },
    #[error("probe grid is empty")]
    EmptyProbeGrid,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainKind {
    Interval,
    SphericalLayer,
}

/// Bounded region `r1 < x < r2` (interval) or `r1 < |x| < r2` (spherical layer).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Domain {
    kind: DomainKind,
    r1: f64,
    r2: f64,
    dim: usize,
}

impl Domain {
    pub fn interval(r1: f64, r2: f64) -> Result<Self, ModelError> {
        if !(r1.is_finite() && r2.is_finite() && r1 < r2) {
            return Err(ModelError::InvalidDomain(format!("interval needs r1 < r2, got ({r1}, {r2})")));
        }
        Ok(Self { kind: DomainKind::Interval, r1, r2, dim: 1 })
    }

    pub fn spherical_layer(dim: usize, r1: f64, r2: f64) -> Result<Self, ModelError> {
        if dim < 2 {
            return Err(ModelError::InvalidDomain("spherical layer needs dim >= 2".into()));
        }
        if !(r1.is_finite() && r2.is_finite() && 0.0 < r1 && r1 < r2) {
            return Err(ModelError::InvalidDomain(format!(
                "spherical layer needs 0 < r1 < r2, got ({r1}, {r2})"
            )));
        }
        Ok(Self { kind: DomainKind::SphericalLayer, r1, r2, dim })
    }

    pub fn kind(&self) -> DomainKind {
        self.kind
    }

    pub fn r1(&self) -> f64 {
        self.r1
    }

    pub fn r2(&self) -> f64 {
        self.r2
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The coordinate that the boundary is measured in: `x` or `|x|`.
    pub fn radial(&self, x: &[f64]) -> f64 {
        match self.kind {
            DomainKind::Interval => x[0],
            DomainKind::SphericalLayer => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
        }
    }

    /// Open-set membership.
    pub fn contains(&self, x: &[f64]) -> bool {
        let r = self.radial(x);
        self.r1 < r && r < self.r2
    }

    pub fn in_closure(&self, x: &[f64]) -> bool {
        let r = self.radial(x);
        self.r1 <= r && r <= self.r2
    }

    /// Euclidean distance to the boundary set.
    pub fn distance_to_boundary(&self, x: &[f64]) -> f64 {
        let r = self.radial(x);
        (r - self.r1).abs().min((self.r2 - r).abs())
    }

    /// Distances from an interior point to the inner and outer faces.
    pub(crate) fn face_distances(&self, x: &[f64]) -> (f64, f64) {
        let r = self.radial(x);
        (r - self.r1, self.r2 - r)
    }

    /// Unit outward normal of the face through the radial direction of `x`
    /// (for the inner face this points towards the origin).
    pub(crate) fn face_normal(&self, x: &[f64], outer: bool, out: &mut [f64]) {
        match self.kind {
            DomainKind::Interval => out[0] = if outer { 1.0 } else { -1.0 },
            DomainKind::SphericalLayer => {
                let r = self.radial(x);
                let sign = if outer { 1.0 } else { -1.0 };
                if r > 0.0 {
                    for (o, v) in out.iter_mut().zip(x) {
                        *o = sign * v / r;
                    }
                } else {
                    out.fill(0.0);
                    out[0] = sign;
                }
            }
        }
    }

    /// Point where the segment `inside → outside` first meets the boundary.
    pub(crate) fn project_exit(&self, inside: &[f64], outside: &[f64], out: &mut [f64]) {
        let r_out = self.radial(outside);
        let outer = r_out >= self.r2 || (r_out > self.r1 && self.r2 - r_out < r_out - self.r1);
        let target = if outer { self.r2 } else { self.r1 };
        let s = match self.kind {
            DomainKind::Interval => (target - inside[0]) / (outside[0] - inside[0]),
            DomainKind::SphericalLayer => {
                // |a + s(b - a)|² = target², smallest root in [0, 1].
                let (mut aa, mut ad, mut dd) = (0.0, 0.0, 0.0);
                for (a, b) in inside.iter().zip(outside) {
                    let d = b - a;
                    aa += a * a;
                    ad += a * d;
                    dd += d * d;
                }
                let c = aa - target * target;
                let disc = (ad * ad - dd * c).max(0.0).sqrt();
                let roots = [(-ad - disc) / dd, (-ad + disc) / dd];
                roots
                    .into_iter()
                    .filter(|s| (0.0..=1.0).contains(s))
                    .fold(f64::NAN, f64::min)
            }
        };
        let s = if s.is_finite() { s.clamp(0.0, 1.0) } else { 1.0 };
        for ((o, a), b) in out.iter_mut().zip(inside).zip(outside) {
            *o = a + s * (b - a);
        }
        // Land exactly on the face.
        let r = self.radial(out);
        match self.kind {
            DomainKind::Interval => out[0] = target,
            DomainKind::SphericalLayer if r > 0.0 => out.iter_mut().for_each(|v| *v *= target / r),
            DomainKind::SphericalLayer => {}
        }
    }

    /// Moves `x` radially onto the nearer face.
    pub(crate) fn snap_to_nearest_face(&self, x: &mut [f64]) {
        let (d1, d2) = self.face_distances(x);
        let target = if d1 <= d2 { self.r1 } else { self.r2 };
        match self.kind {
            DomainKind::Interval => x[0] = target,
            DomainKind::SphericalLayer => {
                let r = self.radial(x);
                if r > 0.0 {
                    x.iter_mut().for_each(|v| *v *= target / r);
                }
            }
        }
    }

    /// Maps a grid coordinate (position or radius) to a point: `(c, 0, …, 0)`.
    pub fn point_on_ray(&self, c: f64) -> Vec<f64> {
        let mut p = vec![0.0; self.dim];
        p[0] = c;
        p
    }
}

/// Points and times at which coefficient conditions are checked.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeGrid {
    pub points: Vec<Vec<f64>>,
    pub times: Vec<f64>,
}

impl ProbeGrid {
    pub const DEFAULT_SPACE: usize = 33;
    pub const DEFAULT_TIME: usize = 17;

    /// Tensor grid of `nx` radial levels (in every coordinate direction for a
    /// spherical layer) on the closed domain and `nt` times on `[0, horizon]`.
    pub fn tensor(domain: &Domain, horizon: f64, nx: usize, nt: usize) -> Self {
        let levels = linspace(domain.r1, domain.r2, nx);
        let points = match domain.kind {
            DomainKind::Interval => levels.into_iter().map(|v| vec![v]).collect(),
            DomainKind::SphericalLayer => {
                let mut pts = Vec::with_capacity(nx * 2 * domain.dim);
                for r in levels {
                    for axis in 0..domain.dim {
                        for sign in [1.0, -1.0] {
                            let mut p = vec![0.0; domain.dim];
                            p[axis] = sign * r;
                            pts.push(p);
                        }
                    }
                }
                pts
            }
        };
        Self { points, times: linspace(0.0, horizon, nt) }
    }

    pub fn default_for(domain: &Domain, horizon: f64) -> Self {
        Self::tensor(domain, horizon, Self::DEFAULT_SPACE, Self::DEFAULT_TIME)
    }

    /// Boundary points paired with the same times.
    pub fn boundary(domain: &Domain, horizon: f64, nt: usize) -> Self {
        let mut grid = Self::tensor(domain, horizon, 2, nt);
        grid.points.retain(|p| domain.distance_to_boundary(p) <= BOUNDARY_TOL);
        grid
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty() || self.times.is_empty()
    }
}

pub(crate) fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![a],
        _ => (0..n)
            .map(|i| if i == n - 1 { b } else { a + (b - a) * i as f64 / (n - 1) as f64 })
            .collect(),
    }
}

/// Coefficient fields of `A` and `B_i`, deterministic in `(x, t)`.
#[derive(Clone)]
pub struct CoefficientSet {
    n: usize,
    horizon: f64,
    b: FieldFn,
    drift: FieldFn,
    rate: ScalarFn,
    beta: Vec<FieldFn>,
    tilde_beta: Option<FieldFn>,
}

impl fmt::Debug for CoefficientSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientSet")
            .field("n", &self.n)
            .field("horizon", &self.horizon)
            .field("beta_count", &self.beta.len())
            .field("completed", &self.tilde_beta.is_some())
            .finish()
    }
}

impl CoefficientSet {
    /// Zero coefficients in dimension `n` on `[0, horizon]`.
    pub fn new(n: usize, horizon: f64) -> Self {
        assert!(n >= 1, "state dimension must be positive");
        assert!(horizon > 0.0, "horizon must be positive");
        let zero: FieldFn = Arc::new(|_, _, out| out.fill(0.0));
        Self {
            n,
            horizon,
            b: zero.clone(),
            drift: zero,
            rate: Arc::new(|_, _| 0.0),
            beta: Vec::new(),
            tilde_beta: None,
        }
    }

    pub fn with_b(mut self, b: FieldFn) -> Self {
        self.b = b;
        self.tilde_beta = None;
        self
    }

    pub fn with_drift(mut self, f: FieldFn) -> Self {
        self.drift = f;
        self
    }

    pub fn with_rate(mut self, lambda: ScalarFn) -> Self {
        self.rate = lambda;
        self
    }

    pub fn with_beta(mut self, beta: Vec<FieldFn>) -> Self {
        self.beta = beta;
        self.tilde_beta = None;
        self
    }

    /// Scalar convenience for `n = 1`.
    pub fn scalar_b(self, b: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.with_b(Arc::new(move |x, t, out| out[0] = b(x[0], t)))
    }

    pub fn scalar_drift(self, f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.with_drift(Arc::new(move |x, t, out| out[0] = f(x[0], t)))
    }

    pub fn scalar_beta(self, beta: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        let mut all = self.beta.clone();
        all.push(Arc::new(move |x, t, out| out[0] = beta(x[0], t)));
        self.with_beta(all)
    }

    pub fn constant_rate(self, lambda: f64) -> Self {
        self.with_rate(Arc::new(move |_, _| lambda))
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn beta_count(&self) -> usize {
        self.beta.len()
    }

    /// Number of auxiliary directions: `n` once completed, else 0.
    pub fn tilde_count(&self) -> usize {
        if self.tilde_beta.is_some() {
            self.n
        } else {
            0
        }
    }

    pub fn is_completed(&self) -> bool {
        self.tilde_beta.is_some()
    }

    pub fn eval_b(&self, x: &[f64], t: f64, out: &mut [f64]) {
        (self.b)(x, t, out)
    }

    pub fn eval_drift(&self, x: &[f64], t: f64, out: &mut [f64]) {
        (self.drift)(x, t, out)
    }

    pub fn eval_rate(&self, x: &[f64], t: f64) -> f64 {
        (self.rate)(x, t)
    }

    pub fn eval_beta(&self, i: usize, x: &[f64], t: f64, out: &mut [f64]) {
        (self.beta[i])(x, t, out)
    }

    /// Row-major n×n matrix whose column j is `β̃_j`. Zero if not completed.
    pub fn eval_tilde(&self, x: &[f64], t: f64, out: &mut [f64]) {
        match &self.tilde_beta {
            Some(tb) => tb(x, t, out),
            None => out.fill(0.0),
        }
    }

    /// `R = 2b − Σ β βᵀ`, row-major.
    fn remainder(&self, x: &[f64], t: f64) -> Vec<f64> {
        let n = self.n;
        let mut r = vec![0.0; n * n];
        self.eval_b(x, t, &mut r);
        r.iter_mut().for_each(|v| *v *= 2.0);
        let mut beta = vec![0.0; n];
        for i in 0..self.beta.len() {
            self.eval_beta(i, x, t, &mut beta);
            for a in 0..n {
                for c in 0..n {
                    r[a * n + c] -= beta[a] * beta[c];
                }
            }
        }
        r
    }

    fn eval_checked(&self, x: &[f64], t: f64) -> Result<(Vec<f64>, Vec<Vec<f64>>), ModelError> {
        let n = self.n;
        let fail = || ModelError::Evaluation { x: x.to_vec(), t };
        let mut b = vec![0.0; n * n];
        self.eval_b(x, t, &mut b);
        let mut f = vec![0.0; n];
        self.eval_drift(x, t, &mut f);
        let lambda = self.eval_rate(x, t);
        let mut betas = Vec::with_capacity(self.beta.len());
        for i in 0..self.beta.len() {
            let mut v = vec![0.0; n];
            self.eval_beta(i, x, t, &mut v);
            betas.push(v);
        }
        let finite = b.iter().chain(&f).chain(betas.iter().flatten()).all(|v| v.is_finite());
        if !finite || !lambda.is_finite() {
            return Err(fail());
        }
        for a in 0..n {
            for c in 0..a {
                let (u, v) = (b[a * n + c], b[c * n + a]);
                if (u - v).abs() > 1e-12 * (1.0 + u.abs().max(v.abs())) {
                    return Err(ModelError::NotSymmetric { x: x.to_vec(), t });
                }
            }
        }
        Ok((b, betas))
    }
}

/// Result of [`validate_coercivity`].
#[derive(Debug, Clone, PartialEq)]
pub struct CoercivityReport {
    pub rho_hat: f64,
    pub worst_point: (Vec<f64>, f64),
}

fn min_eigenvalue(n: usize, m: &[f64]) -> f64 {
    if n == 1 {
        return m[0];
    }
    let mat = DMatrix::from_row_slice(n, n, m);
    SymmetricEigen::new(mat).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Smallest eigenvalue of `b − ½ Σ β βᵀ` over the probe grid.
pub fn validate_coercivity(
    coeffs: &CoefficientSet,
    probe: &ProbeGrid,
) -> Result<CoercivityReport, ModelError> {
    if probe.is_empty() {
        return Err(ModelError::EmptyProbeGrid);
    }
    let n = coeffs.n;
    let mut best: Option<CoercivityReport> = None;
    for x in &probe.points {
        for &t in &probe.times {
            coeffs.eval_checked(x, t)?;
            let mut r = coeffs.remainder(x, t);
            r.iter_mut().for_each(|v| *v *= 0.5);
            let rho = min_eigenvalue(n, &r);
            if best.as_ref().is_none_or(|b| rho < b.rho_hat) {
                best = Some(CoercivityReport { rho_hat: rho, worst_point: (x.clone(), t) });
            }
        }
    }
    Ok(best.expect("probe grid is nonempty"))
}

/// Symmetric PSD square root with eigenvalues below `tol` clamped to zero.
/// Returns `Err(min_eigenvalue)` if an eigenvalue is below `-tol`.
fn psd_sqrt(n: usize, r: &[f64], scale: f64, out: &mut [f64]) -> Result<(), f64> {
    if n == 1 {
        let tol = CLAMP_REL_TOL * scale.max(r[0].abs());
        if r[0] < -tol {
            return Err(r[0]);
        }
        out[0] = if r[0] <= tol { 0.0 } else { r[0].sqrt() };
        return Ok(());
    }
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(n, n, r));
    let largest = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = CLAMP_REL_TOL * scale.max(largest);
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -tol {
        return Err(min);
    }
    let roots = eig.eigenvalues.map(|v| if v <= tol { 0.0 } else { v.sqrt() });
    let q = &eig.eigenvectors;
    for a in 0..n {
        for c in 0..n {
            out[a * n + c] = (0..n).map(|k| q[(a, k)] * roots[k] * q[(c, k)]).sum();
        }
    }
    Ok(())
}

/// Largest absolute eigenvalue of `2b`, the scale the clamp is relative to.
fn diffusion_scale(coeffs: &CoefficientSet, x: &[f64], t: f64) -> f64 {
    let n = coeffs.n;
    let mut b = vec![0.0; n * n];
    coeffs.eval_b(x, t, &mut b);
    if n == 1 {
        return 2.0 * b[0].abs();
    }
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(n, n, &b));
    2.0 * eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Populates `β̃` as the columns of the PSD square root of `2b − Σ β βᵀ`.
pub fn complete_diffusion(
    coeffs: &CoefficientSet,
    probe: &ProbeGrid,
) -> Result<CoefficientSet, ModelError> {
    if probe.is_empty() {
        return Err(ModelError::EmptyProbeGrid);
    }
    let n = coeffs.n;
    let mut scratch = vec![0.0; n * n];
    for x in &probe.points {
        for &t in &probe.times {
            coeffs.eval_checked(x, t)?;
            let r = coeffs.remainder(x, t);
            let scale = diffusion_scale(coeffs, x, t);
            psd_sqrt(n, &r, scale, &mut scratch).map_err(|eigenvalue| ModelError::NotPsd {
                x: x.clone(),
                t,
                eigenvalue,
            })?;
        }
    }
    let base = coeffs.clone();
    if n == 1 {
        let tilde: FieldFn = Arc::new(move |x, t, out| {
            let (mut b, mut v) = ([0.0], [0.0]);
            base.eval_b(x, t, &mut b);
            let mut r = 2.0 * b[0];
            for i in 0..base.beta.len() {
                base.eval_beta(i, x, t, &mut v);
                r -= v[0] * v[0];
            }
            let tol = CLAMP_REL_TOL * (2.0 * b[0].abs()).max(r.abs());
            out[0] = if r <= tol { 0.0 } else { r.sqrt() };
        });
        let mut completed = coeffs.clone();
        completed.tilde_beta = Some(tilde);
        return Ok(completed);
    }
    let tilde: FieldFn = Arc::new(move |x, t, out| {
        let r = base.remainder(x, t);
        let scale = diffusion_scale(&base, x, t);
        if psd_sqrt(base.n, &r, scale, out).is_err() {
            // Off the probe grid the remainder may dip below tolerance; clamp.
            let mut clamped = r.clone();
            for i in 0..base.n {
                clamped[i * base.n + i] = clamped[i * base.n + i].max(0.0);
            }
            if psd_sqrt(base.n, &clamped, f64::INFINITY, out).is_err() {
                out.fill(0.0);
            }
        }
    });
    let mut completed = coeffs.clone();
    completed.tilde_beta = Some(tilde);
    Ok(completed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryStatus {
    Pass,
    Warn,
}

/// Result of [`check_boundary_vanishing`].
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryReport {
    /// Maximum of `|β_i|` over the boundary samples, one entry per `β_i`.
    pub max_beta: Vec<f64>,
    pub status: BoundaryStatus,
}

/// Checks whether every `β_i` vanishes on the boundary. A violation is a
/// warning, not an error.
pub fn check_boundary_vanishing(
    coeffs: &CoefficientSet,
    domain: &Domain,
    samples: &ProbeGrid,
) -> Result<BoundaryReport, ModelError> {
    let n = coeffs.n;
    let mut max_beta = vec![0.0f64; coeffs.beta.len()];
    let mut v = vec![0.0; n];
    for x in &samples.points {
        if domain.distance_to_boundary(x) > 1e-9 * (1.0 + domain.r2.abs()) {
            return Err(ModelError::Dimension(format!("boundary sample {x:?} is not on the boundary")));
        }
        for &t in &samples.times {
            for (i, m) in max_beta.iter_mut().enumerate() {
                coeffs.eval_beta(i, x, t, &mut v);
                if v.iter().any(|c| !c.is_finite()) {
                    return Err(ModelError::Evaluation { x: x.clone(), t });
                }
                *m = m.max(v.iter().map(|c| c * c).sum::<f64>().sqrt());
            }
        }
    }
    let status = if max_beta.iter().all(|&m| m <= 1e-12) { BoundaryStatus::Pass } else { BoundaryStatus::Warn };
    Ok(BoundaryReport { max_beta, status })
}

/// Ready-made one-dimensional models.
pub mod presets {
    use super::*;

    /// Standard Brownian motion: `b = ½`, no first-order noise.
    pub fn brownian(horizon: f64) -> CoefficientSet {
        CoefficientSet::new(1, horizon).scalar_b(|_, _| 0.5)
    }

    /// Heat model `b = ½` with constant zeroth-order coefficient `lambda`.
    pub fn heat(horizon: f64, lambda: f64) -> CoefficientSet {
        brownian(horizon).constant_rate(lambda)
    }

    /// Fully degenerate geometric model `b = ½σ²x²`, `β = σx`.
    pub fn gbm(horizon: f64, sigma: f64) -> CoefficientSet {
        CoefficientSet::new(1, horizon)
            .scalar_b(move |x, _| 0.5 * sigma * sigma * x * x)
            .scalar_beta(move |x, _| sigma * x)
    }

    /// Brownian motion in `n` dimensions, `b = ½ I`.
    pub fn brownian_nd(n: usize, horizon: f64) -> CoefficientSet {
        CoefficientSet::new(n, horizon).with_b(Arc::new(move |_, _, out| {
            out.fill(0.0);
            for i in 0..n {
                out[i * n + i] = 0.5;
            }
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_interval() -> Domain {
        Domain::interval(0.0, 1.0).unwrap()
    }

    fn diag(d: Vec<f64>) -> FieldFn {
        let n = d.len();
        Arc::new(move |_, _, out| {
            out.fill(0.0);
            for i in 0..n {
                out[i * n + i] = d[i];
            }
        })
    }

    #[test]
    fn domain_validation() {
        assert!(Domain::interval(1.0, 1.0).is_err());
        assert!(Domain::spherical_layer(2, 0.0, 1.0).is_err());
        assert!(Domain::spherical_layer(1, 0.5, 1.0).is_err());
        let d = Domain::spherical_layer(3, 1.0, 2.0).unwrap();
        assert!(d.contains(&[0.0, 1.5, 0.0]));
        assert!(!d.contains(&[0.5, 0.0, 0.0]));
        assert_eq!(d.distance_to_boundary(&[0.0, 0.0, 2.0]), 0.0);
        assert!((d.distance_to_boundary(&[0.0, 0.0, 1.25]) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn coercivity_identity() {
        let c = CoefficientSet::new(2, 1.0).with_b(diag(vec![1.0, 1.0]));
        let d = Domain::spherical_layer(2, 1.0, 2.0).unwrap();
        let r = validate_coercivity(&c, &ProbeGrid::default_for(&d, 1.0)).unwrap();
        assert!((r.rho_hat - 1.0).abs() < 1e-12);
    }

    #[test]
    fn coercivity_degenerate_gbm() {
        let d = Domain::interval(1.0, 2.0).unwrap();
        let c = presets::gbm(1.0, 0.2);
        let r = validate_coercivity(&c, &ProbeGrid::default_for(&d, 1.0)).unwrap();
        assert!(r.rho_hat.abs() < 1e-15, "{}", r.rho_hat);
    }

    #[test]
    fn coercivity_diagonal() {
        let c = CoefficientSet::new(2, 1.0).with_b(diag(vec![1.0, 0.25]));
        let d = Domain::spherical_layer(2, 1.0, 2.0).unwrap();
        let r = validate_coercivity(&c, &ProbeGrid::default_for(&d, 1.0)).unwrap();
        assert!((r.rho_hat - 0.25).abs() < 1e-12);
    }

    #[test]
    fn coercivity_reports_evaluation_failure() {
        let c = CoefficientSet::new(1, 1.0).scalar_b(|x, _| x.ln());
        let d = Domain::interval(-1.0, 1.0).unwrap();
        assert!(matches!(
            validate_coercivity(&c, &ProbeGrid::default_for(&d, 1.0)),
            Err(ModelError::Evaluation { .. })
        ));
    }

    #[test]
    fn completion_of_gbm_is_zero() {
        let d = Domain::interval(1.0, 2.0).unwrap();
        let c = complete_diffusion(&presets::gbm(1.0, 0.2), &ProbeGrid::default_for(&d, 1.0)).unwrap();
        let mut out = [1.0];
        for x in [1.0, 1.3, 2.0] {
            c.eval_tilde(&[x], 0.3, &mut out);
            assert_eq!(out[0], 0.0);
        }
    }

    #[test]
    fn completion_of_half() {
        let d = unit_interval();
        let c = complete_diffusion(&presets::brownian(1.0), &ProbeGrid::default_for(&d, 1.0)).unwrap();
        let mut out = [0.0];
        c.eval_tilde(&[0.4], 0.0, &mut out);
        assert_eq!(out[0], 1.0);
        assert_eq!(c.tilde_count(), 1);
    }

    #[test]
    fn completion_of_diagonal() {
        let c = CoefficientSet::new(2, 1.0).with_b(diag(vec![1.0, 0.25]));
        let d = Domain::spherical_layer(2, 1.0, 2.0).unwrap();
        let c = complete_diffusion(&c, &ProbeGrid::default_for(&d, 1.0)).unwrap();
        let mut out = [0.0; 4];
        c.eval_tilde(&[1.5, 0.0], 0.0, &mut out);
        let expect = [2f64.sqrt(), 0.0, 0.0, 0.5f64.sqrt()];
        for (o, e) in out.iter().zip(expect) {
            assert!((o - e).abs() < 1e-12, "{out:?}");
        }
    }

    #[test]
    fn completion_rejects_non_psd() {
        let d = unit_interval();
        let c = CoefficientSet::new(1, 1.0).scalar_b(|_, _| 0.1).scalar_beta(|_, _| 1.0);
        assert!(matches!(
            complete_diffusion(&c, &ProbeGrid::default_for(&d, 1.0)),
            Err(ModelError::NotPsd { .. })
        ));
    }

    #[test]
    fn boundary_vanishing_cases() {
        let d = unit_interval();
        let samples = ProbeGrid::boundary(&d, 1.0, 5);
        let c = presets::brownian(1.0).scalar_beta(|x, _| (std::f64::consts::PI * x).sin() * 0.5);
        let r = check_boundary_vanishing(&c, &d, &samples).unwrap();
        assert_eq!(r.status, BoundaryStatus::Pass);
        assert!(r.max_beta[0] < 1e-12);

        let d2 = Domain::interval(1.0, 2.0).unwrap();
        let r = check_boundary_vanishing(&presets::gbm(1.0, 0.2), &d2, &ProbeGrid::boundary(&d2, 1.0, 5))
            .unwrap();
        assert_eq!(r.status, BoundaryStatus::Warn);
        assert!((r.max_beta[0] - 0.4).abs() < 1e-15);

        let r = check_boundary_vanishing(&presets::brownian(1.0), &d, &samples).unwrap();
        assert_eq!(r.status, BoundaryStatus::Pass);
        assert!(r.max_beta.is_empty());
    }

    #[test]
    fn exit_projection_lands_on_face() {
        let d = Domain::interval(0.0, 1.0).unwrap();
        let mut out = [0.0];
        d.project_exit(&[0.9], &[1.2], &mut out);
        assert_eq!(out[0], 1.0);
        let s = Domain::spherical_layer(2, 1.0, 2.0).unwrap();
        let mut p = [0.0; 2];
        s.project_exit(&[1.5, 0.0], &[1.5, 1.5], &mut p);
        assert!((s.radial(&p) - 2.0).abs() < 1e-12);
        assert!((p[0] - 1.5).abs() < 1e-12);
        s.project_exit(&[1.2, 0.0], &[0.8, 0.0], &mut p);
        assert!((p[0] - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn reconstruction_matches_remainder(
            d0 in 0.1f64..3.0, d1 in 0.1f64..3.0, off in -0.5f64..0.5,
            b0 in -0.5f64..0.5, b1 in -0.5f64..0.5,
        ) {
            // b = ½(M Mᵀ) + ½ββᵀ with M lower triangular is PSD after removing β.
            let m = [d0, 0.0, off, d1];
            let bmat = [
                0.5 * (m[0] * m[0] + b0 * b0),
                0.5 * (m[0] * m[2] + b0 * b1),
                0.5 * (m[0] * m[2] + b0 * b1),
                0.5 * (m[2] * m[2] + m[3] * m[3] + b1 * b1),
            ];
            let c = CoefficientSet::new(2, 1.0)
                .with_b(Arc::new(move |_, _, out| out.copy_from_slice(&bmat)))
                .with_beta(vec![Arc::new(move |_, _, out| { out[0] = b0; out[1] = b1; })]);
            let d = Domain::spherical_layer(2, 1.0, 2.0).unwrap();
            let probe = ProbeGrid::tensor(&d, 1.0, 3, 2);
            let c = complete_diffusion(&c, &probe).unwrap();
            for x in &probe.points {
                let mut s = [0.0; 4];
                c.eval_tilde(x, 0.0, &mut s);
                let r = c.remainder(x, 0.0);
                for a in 0..2 {
                    for k in 0..2 {
                        let rec: f64 = (0..2).map(|j| s[a * 2 + j] * s[k * 2 + j]).sum();
                        prop_assert!((rec - r[a * 2 + k]).abs() <= 1e-9 * (1.0 + r.iter().fold(0.0f64, |m, v| m.max(v.abs()))));
                    }
                }
            }
        }

        #[test]
        fn rho_is_permutation_invariant(a in -1.0f64..1.0, b in -1.0f64..1.0, c in -1.0f64..1.0) {
            let mk = |v: [f64; 3]| {
                let mut betas: Vec<FieldFn> = Vec::new();
                for w in v {
                    betas.push(Arc::new(move |x, _, out| out[0] = w * x[0]));
                }
                CoefficientSet::new(1, 1.0).scalar_b(|_, _| 2.0).with_beta(betas)
            };
            let d = Domain::interval(0.0, 1.0).unwrap();
            let probe = ProbeGrid::tensor(&d, 1.0, 5, 2);
            let r1 = validate_coercivity(&mk([a, b, c]), &probe).unwrap().rho_hat;
            let r2 = validate_coercivity(&mk([c, a, b]), &probe).unwrap().rho_hat;
            prop_assert!((r1 - r2).abs() < 1e-14);
        }

        #[test]
        fn distance_zero_iff_on_boundary(x in -0.5f64..2.5) {
            let d = Domain::interval(0.0, 2.0).unwrap();
            let on_boundary = !d.contains(&[x]) && d.in_closure(&[x]);
            prop_assert_eq!(d.distance_to_boundary(&[x]) == 0.0, on_boundary);
            for p in [[0.0], [2.0]] {
                prop_assert_eq!(d.distance_to_boundary(&p), 0.0);
            }
        }
    }
}

//! Finite-difference solver for the one-dimensional backward problem
//! `u_t + b u_xx + f u_x + λ u = 0`, `u = 0` at both ends, `u(·, T) = ξ`.

use thiserror::Error;

use crate::model::{CoefficientSet, Domain, DomainKind};
use crate::solver::{FieldMeta, GridSpec, SolutionField, SolverError, TerminalData};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("finite-difference oracle is one-dimensional on an interval")]
    Unsupported,
    #[error("b({x}, {t}) = {b:e} is below the ellipticity floor {floor:e}")]
    NotElliptic { x: f64, t: f64, b: f64, floor: f64 },
    #[error("non-finite value at t = {t}")]
    Instability { t: f64 },
    #[error("invalid finite-difference grid: {0}")]
    InvalidGrid(String),
    #[error("comparison grid is not covered by both fields")]
    GridMismatch,
    #[error(transparent)]
    Solver(#[from] SolverError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    CrankNicolson,
    ImplicitEuler,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdGrid {
    /// Interior node count.
    pub nx: usize,
    /// Time step count.
    pub nt: usize,
    pub scheme: Scheme,
    pub ellipticity_floor: f64,
}

impl FdGrid {
    pub fn new(nx: usize, nt: usize) -> Self {
        Self { nx, nt, scheme: Scheme::CrankNicolson, ellipticity_floor: 1e-10 }
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    fn validate(&self) -> Result<(), OracleError> {
        if self.nx < 3 || self.nt < 1 {
            return Err(OracleError::InvalidGrid(format!("need nx >= 3 and nt >= 1, got {} and {}", self.nx, self.nt)));
        }
        Ok(())
    }
}

/// Tridiagonal operator `L` on the interior nodes at one time.
struct Stencil {
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
}

impl Stencil {
    fn build(
        coeffs: &CoefficientSet,
        xs: &[f64],
        dx: f64,
        t: f64,
        floor: f64,
    ) -> Result<Self, OracleError> {
        let m = xs.len() - 2;
        let mut st = Stencil { lower: vec![0.0; m], diag: vec![0.0; m], upper: vec![0.0; m] };
        let (mut b, mut f) = ([0.0], [0.0]);
        for (k, &x) in xs.iter().enumerate() {
            coeffs.eval_b(&[x], t, &mut b);
            if !(b[0] >= floor) {
                return Err(OracleError::NotElliptic { x, t, b: b[0], floor });
            }
            if k == 0 || k == xs.len() - 1 {
                continue;
            }
            coeffs.eval_drift(&[x], t, &mut f);
            let lam = coeffs.eval_rate(&[x], t);
            let (diff, adv) = (b[0] / (dx * dx), f[0] / (2.0 * dx));
            let i = k - 1;
            st.lower[i] = diff - adv;
            st.diag[i] = -2.0 * diff + lam;
            st.upper[i] = diff + adv;
        }
        Ok(st)
    }

    /// `out = (I + w L) u` on interior nodes with zero boundary values.
    fn apply(&self, w: f64, u: &[f64], out: &mut [f64]) {
        let m = u.len();
        for i in 0..m {
            let mut v = u[i] + w * self.diag[i] * u[i];
            if i > 0 {
                v += w * self.lower[i] * u[i - 1];
            }
            if i + 1 < m {
                v += w * self.upper[i] * u[i + 1];
            }
            out[i] = v;
        }
    }

    fn dominant(&self, w: f64) -> bool {
        (0..self.diag.len()).all(|i| {
            let d = (1.0 - w * self.diag[i]).abs();
            d >= w * (self.lower[i].abs() + self.upper[i].abs())
        })
    }

    /// Solves `(I − w L) x = rhs` in place with the Thomas algorithm.
    fn solve(&self, w: f64, rhs: &mut [f64]) {
        let m = rhs.len();
        let mut c = vec![0.0; m];
        let mut denom = 1.0 - w * self.diag[0];
        c[0] = -w * self.upper[0] / denom;
        rhs[0] /= denom;
        for i in 1..m {
            let a = -w * self.lower[i];
            denom = 1.0 - w * self.diag[i] - a * c[i - 1];
            c[i] = -w * self.upper[i] / denom;
            rhs[i] = (rhs[i] - a * rhs[i - 1]) / denom;
        }
        for i in (0..m - 1).rev() {
            rhs[i] -= c[i] * rhs[i + 1];
        }
    }
}

struct Marcher<'a> {
    coeffs: &'a CoefficientSet,
    xs: Vec<f64>,
    dx: f64,
    floor: f64,
    tmp: Vec<f64>,
}

impl Marcher<'_> {
    fn stencil(&self, t: f64) -> Result<Stencil, OracleError> {
        Stencil::build(self.coeffs, &self.xs, self.dx, t, self.floor)
    }

    /// Implicit Euler from `t` down to `t − dt`, halving the step while the
    /// system is not diagonally dominant.
    fn implicit_euler(&mut self, u: &mut [f64], t: f64, dt: f64, depth: u32) -> Result<(), OracleError> {
        let st = self.stencil(t - dt)?;
        if !st.dominant(dt) {
            if depth >= 20 {
                return Err(OracleError::Instability { t });
            }
            self.implicit_euler(u, t, dt / 2.0, depth + 1)?;
            return self.implicit_euler(u, t - dt / 2.0, dt / 2.0, depth + 1);
        }
        st.solve(dt, u);
        Ok(())
    }

    fn crank_nicolson(&mut self, u: &mut [f64], t: f64, dt: f64) -> Result<(), OracleError> {
        let implicit = self.stencil(t - dt)?;
        if !implicit.dominant(dt / 2.0) {
            return self.implicit_euler(u, t, dt, 0);
        }
        let explicit = self.stencil(t)?;
        explicit.apply(dt / 2.0, u, &mut self.tmp);
        u.copy_from_slice(&self.tmp);
        implicit.solve(dt / 2.0, u);
        Ok(())
    }
}

/// Marches from `T` to `0` and returns the field resampled onto `on`.
pub fn solve_backward_pde(
    coeffs: &CoefficientSet,
    domain: &Domain,
    xi: &TerminalData,
    fd: &FdGrid,
    on: &GridSpec,
) -> Result<SolutionField, OracleError> {
    let native = solve_backward_pde_native(coeffs, domain, xi, fd)?;
    Ok(native.resample(on)?)
}

/// The solution on the finite-difference nodes themselves.
pub fn solve_backward_pde_native(
    coeffs: &CoefficientSet,
    domain: &Domain,
    xi: &TerminalData,
    fd: &FdGrid,
) -> Result<SolutionField, OracleError> {
    if coeffs.dim() != 1 || domain.kind() != DomainKind::Interval {
        return Err(OracleError::Unsupported);
    }
    fd.validate()?;
    let horizon = coeffs.horizon();
    let (a, b) = (domain.r1(), domain.r2());
    let dx = (b - a) / (fd.nx + 1) as f64;
    let xs: Vec<f64> = (0..fd.nx + 2)
        .map(|k| if k == fd.nx + 1 { b } else { a + k as f64 * dx })
        .collect();
    let dt = horizon / fd.nt as f64;
    let ts: Vec<f64> = (0..=fd.nt).map(|j| if j == fd.nt { horizon } else { j as f64 * dt }).collect();

    let mut levels = vec![vec![0.0; fd.nx]; fd.nt + 1];
    let mut u: Vec<f64> = xs[1..=fd.nx].iter().map(|&x| xi.eval(&[x])).collect();
    levels[fd.nt] = u.clone();
    let mut m = Marcher { coeffs, xs: xs.clone(), dx, floor: fd.ellipticity_floor, tmp: vec![0.0; fd.nx] };
    m.stencil(horizon)?;
    for j in (0..fd.nt).rev() {
        let t = ts[j + 1];
        let step = t - ts[j];
        let first = j + 1 == fd.nt;
        match fd.scheme {
            Scheme::CrankNicolson if !first => m.crank_nicolson(&mut u, t, step)?,
            _ => m.implicit_euler(&mut u, t, step, 0)?,
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(OracleError::Instability { t: ts[j] });
        }
        levels[j] = u.clone();
    }

    let ns = fd.nt + 1;
    let mut values = vec![0.0; xs.len() * ns];
    for (j, level) in levels.iter().enumerate() {
        for (i, v) in level.iter().enumerate() {
            values[(i + 1) * ns + j] = *v;
        }
    }
    let grid = GridSpec::new(xs, ts)?;
    let stderr = vec![0.0; values.len()];
    let meta = FieldMeta { path_count: 0, base_seed: 0, step_h: dt, c_lambda: 1.0 };
    Ok(SolutionField::from_parts(grid, values, stderr, meta))
}

/// Differences between two fields on a common grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldComparison {
    pub grid: GridSpec,
    /// `a − b` per node, x-major.
    pub diff: Vec<f64>,
    /// `diff / sqrt(se_a² + se_b²)`; zero-variance nodes give 0 when the
    /// difference is at rounding level and infinity otherwise.
    pub z: Vec<f64>,
    pub max_abs_diff: f64,
    pub rms_diff: f64,
    pub max_abs_z: f64,
}

const DETERMINISTIC_TOL: f64 = 1e-12;

pub fn compare_fields(a: &SolutionField, b: &SolutionField, on: &GridSpec) -> Result<FieldComparison, OracleError> {
    let covered = |f: &SolutionField| {
        on.x_nodes.iter().all(|&x| on.s_nodes.iter().all(|&s| f.covers(x, s)))
    };
    if !covered(a) || !covered(b) {
        return Err(OracleError::GridMismatch);
    }
    let (ra, rb) = (a.resample(on)?, b.resample(on)?);
    let mut diff = Vec::with_capacity(ra.values().len());
    let mut z = Vec::with_capacity(diff.capacity());
    for k in 0..ra.values().len() {
        let d = ra.values()[k] - rb.values()[k];
        let se = ra.stderrs()[k].hypot(rb.stderrs()[k]);
        diff.push(d);
        z.push(if se > 0.0 {
            d / se
        } else if d.abs() <= DETERMINISTIC_TOL * (1.0 + ra.values()[k].abs()) {
            0.0
        } else {
            f64::INFINITY.copysign(d)
        });
    }
    let max_abs_diff = diff.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let rms_diff = (diff.iter().map(|d| d * d).sum::<f64>() / diff.len() as f64).sqrt();
    let max_abs_z = z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(FieldComparison { grid: on.clone(), diff, z, max_abs_diff, rms_diff, max_abs_z })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::presets;
    use std::f64::consts::PI;

    fn unit() -> Domain {
        Domain::interval(0.0, 1.0).unwrap()
    }

    #[test]
    fn zero_terminal_is_zero() {
        let u = solve_backward_pde_native(&presets::heat(0.5, 0.0), &unit(), &TerminalData::zero(), &FdGrid::new(15, 10))
            .unwrap();
        assert!(u.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn heat_eigenfunction_is_accurate() {
        let xi = TerminalData::scalar(|x| (PI * x).sin());
        let u = solve_backward_pde_native(&presets::heat(0.5, 0.0), &unit(), &xi, &FdGrid::new(127, 128)).unwrap();
        let decay = (-PI * PI / 4.0).exp();
        let err = (0..u.grid.nx())
            .map(|i| (u.value(i, 0) - decay * (PI * u.grid.x_nodes[i]).sin()).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn rate_term_uses_plus_sign() {
        let xi = TerminalData::scalar(|x| (PI * x).sin());
        let u = solve_backward_pde_native(&presets::heat(0.5, -1.0), &unit(), &xi, &FdGrid::new(127, 128)).unwrap();
        let exact = ((-1.0 - PI * PI / 2.0) * 0.5).exp();
        assert!((u.interpolate(0.5, 0.0).unwrap() - exact).abs() < 1e-4);
    }

    #[test]
    fn implicit_euler_maximum_principle() {
        let xi = TerminalData::scalar(|x| if (0.3..0.6).contains(&x) { 1.0 } else { 0.0 });
        let fd = FdGrid::new(63, 20).with_scheme(Scheme::ImplicitEuler);
        let u = solve_backward_pde_native(&presets::heat(0.5, -0.5), &unit(), &xi, &fd).unwrap();
        assert!(u.max_abs() <= 1.0);
    }

    #[test]
    fn rejects_degenerate_diffusion() {
        let d = Domain::interval(0.0, 1.0).unwrap();
        let err = solve_backward_pde_native(&presets::gbm(1.0, 0.2), &d, &TerminalData::zero(), &FdGrid::new(7, 4));
        assert!(matches!(err, Err(OracleError::NotElliptic { .. })));
    }

    #[test]
    fn compare_identical_fields() {
        let xi = TerminalData::scalar(|x| (PI * x).sin());
        let u = solve_backward_pde_native(&presets::heat(0.5, 0.0), &unit(), &xi, &FdGrid::new(15, 8)).unwrap();
        let on = GridSpec::uniform(&unit(), 0.5, 5, 3).unwrap();
        let c = compare_fields(&u, &u, &on).unwrap();
        assert_eq!(c.max_abs_diff, 0.0);
        assert_eq!(c.max_abs_z, 0.0);
        let wide = GridSpec::uniform(&unit(), 1.0, 5, 3).unwrap();
        assert!(matches!(compare_fields(&u, &u, &wide), Err(OracleError::GridMismatch)));
    }
}

//! Non-local terminal conditions `u(·, T) − Γ u = ξ`.
//!
//! `Γ` reads the solution on `[0, θ]` and returns a function of `x`. With
//! `Q = Γ ∘ L_T`, where `L_T` maps terminal data to the solution, the terminal
//! value solves `Φ = ξ + Q Φ` and is found by Neumann iteration. The Monte
//! Carlo paths are simulated once and reused for every iterate, so the
//! discrete map is deterministic.

use std::fmt;
use std::io::{self, Write};
use std::sync::Arc;

use thiserror::Error;

use crate::csvfmt::fmt_sig;
use crate::model::{linspace, CoefficientSet, Domain, ProbeGrid};
use crate::solver::{CauchyEnsemble, GridSpec, SolutionField, SolverError, TerminalData};
use crate::characteristics::SimConfig;

/// Slack for comparing kernel budgets against 1.
pub const BUDGET_SLACK: f64 = 1e-9;
const QUADRATURE_INTERVALS: usize = 1024;

pub type TimeFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
/// `k(t, y, x)`.
pub type SpaceTimeFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NonlocalError {
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("rate λ({x:?}, {t}) = {lambda} is positive")]
    CondLViolated { x: Vec<f64>, t: f64, lambda: f64 },
    #[error("no convergence after {iterations} iterations (residual {residual:e}, noise floor {noise_floor:e})")]
    NoConvergence { iterations: usize, residual: f64, noise_floor: f64 },
    #[error("kernel reads time {t} outside the grid")]
    SupportOutsideGrid { t: f64 },
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// The operator `Γ`.
#[derive(Clone)]
pub enum GammaKernel {
    /// `κ u(·, t1)`.
    PointScaled { kappa: f64, t1: f64 },
    /// `α₁ u(·, t1) + α₂ u(·, t2)`.
    TwoPoint { alpha1: f64, t1: f64, alpha2: f64, t2: f64 },
    /// `∫₀^θ k(t) u(·, t) dt`.
    TimeKernel { k: TimeFn, theta: f64 },
    /// `∫₀^θ ∫_D k(t, y, x) u(y, t) dy dt`.
    SpaceTimeKernel { k: SpaceTimeFn, theta: f64 },
    /// Convex combination.
    Combo(Vec<(f64, GammaKernel)>),
}

impl GammaKernel {
    pub fn time_kernel(k: impl Fn(f64) -> f64 + Send + Sync + 'static, theta: f64) -> Self {
        Self::TimeKernel { k: Arc::new(k), theta }
    }

    pub fn space_time_kernel(k: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static, theta: f64) -> Self {
        Self::SpaceTimeKernel { k: Arc::new(k), theta }
    }

    /// Latest time at which `Γ` reads the solution.
    pub fn support(&self) -> f64 {
        match self {
            Self::PointScaled { t1, .. } => *t1,
            Self::TwoPoint { t1, t2, .. } => t1.max(*t2),
            Self::TimeKernel { theta, .. } | Self::SpaceTimeKernel { theta, .. } => *theta,
            Self::Combo(parts) => parts.iter().map(|(_, k)| k.support()).fold(0.0, f64::max),
        }
    }

    fn check_structure(&self, horizon: f64) -> Result<(), String> {
        let in_range = |t: f64| (0.0..horizon).contains(&t);
        match self {
            Self::PointScaled { kappa, t1 } => {
                if !kappa.is_finite() || !in_range(*t1) {
                    return Err(format!("point kernel needs finite κ and t1 in [0, {horizon})"));
                }
            }
            Self::TwoPoint { alpha1, t1, alpha2, t2 } => {
                if !alpha1.is_finite() || !alpha2.is_finite() || !in_range(*t1) || !in_range(*t2) {
                    return Err(format!("two-point kernel needs finite weights and times in [0, {horizon})"));
                }
            }
            Self::TimeKernel { theta, .. } | Self::SpaceTimeKernel { theta, .. } => {
                if !(*theta > 0.0 && *theta <= horizon) {
                    return Err(format!("θ = {theta} outside (0, {horizon}]"));
                }
            }
            Self::Combo(parts) => {
                if parts.is_empty() || parts.iter().any(|(w, _)| !(*w >= 0.0)) {
                    return Err("combination weights must be nonnegative".into());
                }
                let total: f64 = parts.iter().map(|(w, _)| w).sum();
                if (total - 1.0).abs() > BUDGET_SLACK {
                    return Err(format!("combination weights sum to {total}, not 1"));
                }
                for (_, k) in parts {
                    k.check_structure(horizon)?;
                }
            }
        }
        Ok(())
    }
}

impl fmt::Debug for GammaKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for GammaKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::PointScaled { kappa, t1 } => write!(f, "point_scaled(kappa={kappa}, t1={t1})"),
            Self::TwoPoint { alpha1, t1, alpha2, t2 } => {
                write!(f, "two_point(alpha1={alpha1}, t1={t1}, alpha2={alpha2}, t2={t2})")
            }
            Self::TimeKernel { theta, .. } => write!(f, "time_kernel(theta={theta})"),
            Self::SpaceTimeKernel { theta, .. } => write!(f, "space_time_kernel(theta={theta})"),
            Self::Combo(parts) => {
                write!(f, "combo(")?;
                for (i, (w, k)) in parts.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{w}*{k}")?;
                }
                write!(f, ")")
            }
        }
    }
}

/// Which contraction condition the kernel satisfies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// Budget at most 1 and `Γ` reads only `[0, θ]` with `θ < T`.
    SupportBeforeHorizon,
    /// Budget strictly below 1.
    StrictBudget,
    Invalid,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::SupportBeforeHorizon => "condG(i)",
            Regime::StrictBudget => "condG(ii)",
            Regime::Invalid => "invalid",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaBound {
    pub bound: f64,
    pub support: f64,
    pub regime: Regime,
    /// Set when the kernel is structurally malformed.
    pub problem: Option<String>,
}

/// Composite Simpson rule on `[a, b]` with `n` (rounded up to even) intervals.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = (n.max(2) + 1) & !1;
    let h = (b - a) / n as f64;
    let mut sum = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(a + i as f64 * h);
    }
    sum * h / 3.0
}

fn raw_bound(kernel: &GammaKernel, domain: &Domain) -> f64 {
    match kernel {
        GammaKernel::PointScaled { kappa, .. } => kappa.abs(),
        GammaKernel::TwoPoint { alpha1, alpha2, .. } => alpha1.abs() + alpha2.abs(),
        GammaKernel::TimeKernel { k, theta } => simpson(|t| k(t).abs(), 0.0, *theta, QUADRATURE_INTERVALS),
        GammaKernel::SpaceTimeKernel { k, theta } => {
            let (a, b) = (domain.r1(), domain.r2());
            linspace(a, b, 65)
                .into_iter()
                .map(|x| {
                    simpson(|t| simpson(|y| k(t, y, x).abs(), a, b, 128), 0.0, *theta, 128)
                })
                .fold(0.0, f64::max)
        }
        GammaKernel::Combo(parts) => parts.iter().map(|(w, k)| w * raw_bound(k, domain)).sum(),
    }
}

/// Norm bound of `Γ` in the sup norm and the resulting regime.
pub fn gamma_norm_bound(kernel: &GammaKernel, horizon: f64, domain: &Domain) -> GammaBound {
    let support = kernel.support();
    if let Err(problem) = kernel.check_structure(horizon) {
        return GammaBound { bound: f64::NAN, support, regime: Regime::Invalid, problem: Some(problem) };
    }
    let bound = raw_bound(kernel, domain);
    let regime = if bound <= 1.0 + BUDGET_SLACK && support < horizon {
        Regime::SupportBeforeHorizon
    } else if bound < 1.0 - BUDGET_SLACK {
        Regime::StrictBudget
    } else {
        Regime::Invalid
    };
    GammaBound { bound, support, regime, problem: None }
}

/// Trapezoid nodes and weights on `[0, θ]` using the grid times below `θ`.
fn time_weights(s_nodes: &[f64], theta: f64) -> Result<Vec<(f64, f64)>, NonlocalError> {
    if s_nodes[0] > 0.0 || theta > *s_nodes.last().unwrap() {
        return Err(NonlocalError::SupportOutsideGrid { t: theta });
    }
    let mut ts: Vec<f64> = s_nodes.iter().copied().filter(|&s| s < theta).collect();
    ts.push(theta);
    let mut out: Vec<(f64, f64)> = ts.iter().map(|&t| (t, 0.0)).collect();
    for i in 1..ts.len() {
        let h = 0.5 * (ts[i] - ts[i - 1]);
        out[i - 1].1 += h;
        out[i].1 += h;
    }
    Ok(out)
}

fn point_column(field: &SolutionField, t: f64) -> Result<Vec<f64>, NonlocalError> {
    let s = &field.grid.s_nodes;
    if t < s[0] || t > *s.last().unwrap() {
        return Err(NonlocalError::SupportOutsideGrid { t });
    }
    Ok(field.column_at_time(t)?)
}

/// `Γ u` on the field's space nodes.
pub fn apply_gamma(kernel: &GammaKernel, field: &SolutionField) -> Result<Vec<f64>, NonlocalError> {
    let nx = field.grid.nx();
    match kernel {
        GammaKernel::PointScaled { kappa, t1 } => {
            Ok(point_column(field, *t1)?.into_iter().map(|v| kappa * v).collect())
        }
        GammaKernel::TwoPoint { alpha1, t1, alpha2, t2 } => {
            let (a, b) = (point_column(field, *t1)?, point_column(field, *t2)?);
            Ok(a.iter().zip(&b).map(|(u, v)| alpha1 * u + alpha2 * v).collect())
        }
        GammaKernel::TimeKernel { k, theta } => {
            let mut out = vec![0.0; nx];
            for (t, w) in time_weights(&field.grid.s_nodes, *theta)? {
                let c = w * k(t);
                for (o, v) in out.iter_mut().zip(field.column_at_time(t)?) {
                    *o += c * v;
                }
            }
            Ok(out)
        }
        GammaKernel::SpaceTimeKernel { k, theta } => {
            let xs = &field.grid.x_nodes;
            let mut yw = vec![0.0; nx];
            for i in 1..nx {
                let h = 0.5 * (xs[i] - xs[i - 1]);
                yw[i - 1] += h;
                yw[i] += h;
            }
            let mut out = vec![0.0; nx];
            for (t, w) in time_weights(&field.grid.s_nodes, *theta)? {
                let col = field.column_at_time(t)?;
                for (o, &x) in out.iter_mut().zip(xs) {
                    let inner: f64 = xs.iter().zip(&yw).zip(&col).map(|((&y, &wy), &u)| wy * k(t, y, x) * u).sum();
                    *o += w * inner;
                }
            }
            Ok(out)
        }
        GammaKernel::Combo(parts) => {
            let mut out = vec![0.0; nx];
            for (w, k) in parts {
                for (o, v) in out.iter_mut().zip(apply_gamma(k, field)?) {
                    *o += w * v;
                }
            }
            Ok(out)
        }
    }
}

#[derive(Debug, Clone)]
pub struct NonlocalOptions {
    /// Defaults to `1e-3 · ‖ξ‖∞`.
    pub tol: Option<f64>,
    pub max_iter: usize,
    /// Starting iterate on the space nodes; defaults to `ξ`.
    pub initial: Option<Vec<f64>>,
}

impl Default for NonlocalOptions {
    fn default() -> Self {
        Self { tol: None, max_iter: 50, initial: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointReport {
    pub kernel: String,
    /// `u(·, T)` on the space nodes.
    pub phi_star: Vec<f64>,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    /// Largest ratio of successive residuals.
    pub contraction_estimate: f64,
    pub tol: f64,
    /// Three times the largest standard error of the inner solves.
    pub noise_floor: f64,
}

impl FixedPointReport {
    pub fn write_csv<W: Write>(&self, mut w: W, digits: usize) -> io::Result<()> {
        writeln!(w, "# kernel: {}", self.kernel)?;
        writeln!(w, "# contraction_estimate: {}", fmt_sig(self.contraction_estimate, digits))?;
        writeln!(w, "# tol: {}", fmt_sig(self.tol, digits))?;
        writeln!(w, "# noise_floor: {}", fmt_sig(self.noise_floor, digits))?;
        writeln!(w, "iter,residual")?;
        for (i, r) in self.residual_history.iter().enumerate() {
            writeln!(w, "{},{}", i + 1, fmt_sig(*r, digits))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct NonlocalSolution {
    pub field: SolutionField,
    pub report: FixedPointReport,
}

/// Fails if `λ > 0` anywhere on the default probe grid.
pub fn check_rate_nonpositive(coeffs: &CoefficientSet, domain: &Domain) -> Result<(), NonlocalError> {
    let probe = ProbeGrid::default_for(domain, coeffs.horizon());
    for x in &probe.points {
        for &t in &probe.times {
            let lambda = coeffs.eval_rate(x, t);
            if lambda > 0.0 {
                return Err(NonlocalError::CondLViolated { x: x.clone(), t, lambda });
            }
        }
    }
    Ok(())
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Solves `u(·, T) − Γ u = ξ` with `u` the representation solution.
pub fn solve_nonlocal(
    coeffs: &CoefficientSet,
    domain: &Domain,
    xi: &TerminalData,
    kernel: &GammaKernel,
    grid: &GridSpec,
    cfg: &SimConfig,
    opts: &NonlocalOptions,
) -> Result<NonlocalSolution, NonlocalError> {
    let horizon = coeffs.horizon();
    let bound = gamma_norm_bound(kernel, horizon, domain);
    if bound.regime == Regime::Invalid {
        let why = bound.problem.unwrap_or_else(|| {
            format!("budget {} with support {} does not give a contraction", bound.bound, bound.support)
        });
        return Err(NonlocalError::InvalidKernel(why));
    }
    check_rate_nonpositive(coeffs, domain)?;
    grid.check_against(domain, horizon)?;
    xi.check_boundary(domain, grid)?;
    let support = bound.support;
    if grid.s_nodes[0] > 0.0 || support > *grid.s_nodes.last().unwrap() {
        return Err(NonlocalError::SupportOutsideGrid { t: support });
    }

    let xs = &grid.x_nodes;
    let points: Vec<Vec<f64>> = xs.iter().map(|&c| domain.point_on_ray(c)).collect();
    let xi_nodes: Vec<f64> = points.iter().map(|p| xi.eval(p)).collect();
    let tol = opts.tol.unwrap_or(1e-3 * xi_nodes.iter().fold(0.0f64, |m, v| m.max(v.abs())));

    // One ensemble serves every iterate and the final field.
    let ensemble = CauchyEnsemble::simulate(coeffs, domain, grid, cfg)?;

    // Iterate on the correction g = Φ − ξ so that ξ itself is never interpolated.
    let mut g: Vec<f64> = match &opts.initial {
        Some(init) if init.len() == xs.len() => init.iter().zip(&xi_nodes).map(|(p, x)| p - x).collect(),
        Some(_) => return Err(SolverError::InvalidGrid("initial iterate length differs from x nodes".into()).into()),
        None => vec![0.0; xs.len()],
    };
    let terminal = |g: &[f64]| {
        TerminalData::combine(1.0, &TerminalData::from_nodes(domain, xs.clone(), g.to_vec()), xi)
    };
    let mut history = Vec::new();
    let mut noise_floor = 0.0f64;
    let mut converged = false;
    for _ in 0..opts.max_iter {
        let field = ensemble.evaluate(&terminal(&g));
        noise_floor = noise_floor.max(3.0 * field.max_stderr());
        let next = apply_gamma(kernel, &field)?;
        let residual = sup_diff(&next, &g);
        history.push(residual);
        g = next;
        if residual <= tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(NonlocalError::NoConvergence {
            iterations: history.len(),
            residual: history.last().copied().unwrap_or(f64::NAN),
            noise_floor,
        });
    }
    let contraction_estimate = history
        .windows(2)
        .filter(|w| w[0] > 0.0)
        .map(|w| w[1] / w[0])
        .fold(0.0, f64::max);

    let field = ensemble.evaluate(&terminal(&g));
    let phi: Vec<f64> = xi_nodes.iter().zip(&g).map(|(x, g)| x + g).collect();
    let report = FixedPointReport {
        kernel: kernel.to_string(),
        phi_star: phi,
        iterations: history.len(),
        residual_history: history,
        contraction_estimate,
        tol,
        noise_floor,
    };
    Ok(NonlocalSolution { field, report })
}

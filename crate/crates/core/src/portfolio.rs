//! Goal-achieving hedge with a double barrier and a wealth-dependent target.
//!
//! The stock follows `dS = σ(t) S dw` on `(s_L, s_U)`. The wealth must equal
//! `W_L` or `W_U` once a barrier is hit, and on survival must satisfy
//! `X(T) = ∫₀^θ k₁ X dt + E ∫₀^θ k₂ X dt + ζ(S(T))`. Writing `H = u + ℓ` with
//! `ℓ` affine through the barrier targets turns this into a non-local problem
//! for `u` with zero boundary values.

use std::io::{self, Write};
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::characteristics::{step_count, SimConfig, SimError};
use crate::csvfmt::fmt_sig;
use crate::model::{complete_diffusion, linspace, CoefficientSet, Domain, ModelError, ProbeGrid};
use crate::nonlocal::{
    apply_gamma, simpson, solve_nonlocal, GammaKernel, NonlocalError, NonlocalOptions, NonlocalSolution, TimeFn,
    BUDGET_SLACK,
};
use crate::rng::PathStream;
use crate::solver::{interp_linear, FieldMeta, GridSpec, SolutionField, SolverError, TerminalData, Welford};

/// Relative tolerance for the terminal target at the barriers.
pub const ZETA_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PortfolioError {
    #[error("invalid market: {0}")]
    InvalidMarket(String),
    #[error("ζ({barrier}) = {actual}, expected {expected}")]
    ZetaBoundaryViolation { barrier: f64, expected: f64, actual: f64 },
    #[error("kernel budget {budget} exceeds {limit}")]
    KernelBudgetExceeded { budget: f64, limit: f64 },
    #[error("({x}, {t}) outside the hedge fields")]
    FieldOutOfRange { x: f64, t: f64 },
    #[error(transparent)]
    Nonlocal(#[from] NonlocalError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Simulation(#[from] SimError),
}

pub type PriceFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct MarketSpec {
    pub sigma: TimeFn,
    pub s0: f64,
    pub s_l: f64,
    pub s_u: f64,
    pub w_l: f64,
    pub w_u: f64,
    pub horizon: f64,
    pub theta: f64,
    pub k1: TimeFn,
    pub k2: TimeFn,
    pub zeta: PriceFn,
}

impl std::fmt::Debug for MarketSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MarketSpec")
            .field("s0", &self.s0)
            .field("s_l", &self.s_l)
            .field("s_u", &self.s_u)
            .field("w_l", &self.w_l)
            .field("w_u", &self.w_u)
            .field("horizon", &self.horizon)
            .field("theta", &self.theta)
            .finish_non_exhaustive()
    }
}

impl MarketSpec {
    /// Constant volatility, no kernels, `ζ = ℓ`.
    pub fn constant(sigma: f64, s0: f64, s_l: f64, s_u: f64, w_l: f64, w_u: f64, horizon: f64) -> Self {
        let c1 = (w_u - w_l) / (s_u - s_l);
        Self {
            sigma: Arc::new(move |_| sigma),
            s0,
            s_l,
            s_u,
            w_l,
            w_u,
            horizon,
            theta: horizon,
            k1: Arc::new(|_| 0.0),
            k2: Arc::new(|_| 0.0),
            zeta: Arc::new(move |x| w_l + c1 * (x - s_l)),
        }
    }

    pub fn with_kernels(mut self, theta: f64, k1: TimeFn, k2: TimeFn) -> Self {
        self.theta = theta;
        self.k1 = k1;
        self.k2 = k2;
        self
    }

    pub fn with_zeta(mut self, zeta: PriceFn) -> Self {
        self.zeta = zeta;
        self
    }

    /// `ℓ(x) = c₁ x + c₀` with `ℓ(s_L) = W_L`, `ℓ(s_U) = W_U`.
    pub fn ell(&self) -> Affine {
        let c1 = (self.w_u - self.w_l) / (self.s_u - self.s_l);
        Affine { c1, c0: self.w_l - c1 * self.s_l }
    }

    /// `(κ₁, κ₂)`.
    pub fn kappas(&self) -> (f64, f64) {
        let (k1, k2) = (self.k1.clone(), self.k2.clone());
        (simpson(|t| k1(t), 0.0, self.theta, 1024), simpson(|t| k2(t), 0.0, self.theta, 1024))
    }

    fn budget(&self) -> f64 {
        let (k1, k2) = (self.k1.clone(), self.k2.clone());
        simpson(|t| k1(t).abs() + k2(t).abs(), 0.0, self.theta, 1024)
    }

    fn validate(&self) -> Result<(), PortfolioError> {
        let bad = |m: &str| Err(PortfolioError::InvalidMarket(m.into()));
        if !(self.s_l > 0.0 && self.s_l < self.s0 && self.s0 < self.s_u) {
            return bad("need 0 < s_L < S0 < s_U");
        }
        if !(self.horizon > 0.0 && self.theta > 0.0 && self.theta <= self.horizon) {
            return bad("need T > 0 and θ in (0, T]");
        }
        if !(self.w_l.is_finite() && self.w_u.is_finite()) {
            return bad("barrier targets must be finite");
        }
        for t in linspace(0.0, self.horizon, 65) {
            let s = (self.sigma)(t);
            if !(s > 0.0 && s.is_finite()) {
                return Err(PortfolioError::InvalidMarket(format!("σ({t}) = {s} must be positive and finite")));
            }
        }
        let budget = self.budget();
        let limit = if self.theta < self.horizon { 1.0 + BUDGET_SLACK } else { 1.0 - BUDGET_SLACK };
        let exceeded = if self.theta < self.horizon { budget > limit } else { budget >= limit };
        if exceeded {
            return Err(PortfolioError::KernelBudgetExceeded { budget, limit: 1.0 });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub c1: f64,
    pub c0: f64,
}

impl Affine {
    pub fn eval(&self, x: f64) -> f64 {
        self.c1 * x + self.c0
    }
}

/// The non-local problem for `u = H − ℓ`.
#[derive(Debug, Clone)]
pub struct GoalProblem {
    pub coeffs: CoefficientSet,
    pub domain: Domain,
    pub xi: TerminalData,
    pub kernel: GammaKernel,
    pub ell: Affine,
    pub kappa: f64,
}

pub fn build_goal_problem(market: &MarketSpec) -> Result<GoalProblem, PortfolioError> {
    market.validate()?;
    let ell = market.ell();
    let (k1, k2) = market.kappas();
    let kappa = k1 + k2;
    for (barrier, w) in [(market.s_l, market.w_l), (market.s_u, market.w_u)] {
        let expected = (1.0 - kappa) * w;
        let actual = (market.zeta)(barrier);
        if !((actual - expected).abs() <= ZETA_TOL * expected.abs().max(1.0)) {
            return Err(PortfolioError::ZetaBoundaryViolation { barrier, expected, actual });
        }
    }
    let domain = Domain::interval(market.s_l, market.s_u)?;
    let (sb, sf) = (market.sigma.clone(), market.sigma.clone());
    let coeffs = CoefficientSet::new(1, market.horizon)
        .scalar_b(move |x, t| 0.5 * sb(t).powi(2) * x * x)
        .scalar_beta(move |x, t| sf(t) * x);
    let coeffs = complete_diffusion(&coeffs, &ProbeGrid::default_for(&domain, market.horizon))?;
    let zeta = market.zeta.clone();
    let (sl, su) = (market.s_l, market.s_u);
    let xi = TerminalData::scalar(move |x| {
        // Exact zeros at the barriers; elsewhere ζ + κℓ − ℓ.
        if x == sl || x == su {
            0.0
        } else {
            zeta(x) - (1.0 - kappa) * ell.eval(x)
        }
    });
    let (ka, kb) = (market.k1.clone(), market.k2.clone());
    let kernel = GammaKernel::time_kernel(move |t| ka(t) + kb(t), market.theta);
    Ok(GoalProblem { coeffs, domain, xi, kernel, ell, kappa })
}

#[derive(Debug, Clone)]
pub struct HedgeSolution {
    pub problem: GoalProblem,
    pub nonlocal: NonlocalSolution,
    pub h_field: SolutionField,
    pub delta_field: SolutionField,
    pub x0: f64,
    /// Bilinear interpolation error bound for `H` from its discrete second differences.
    pub interpolation_bound: f64,
    pub tol: f64,
}

/// Central differences in `x`, one-sided at the ends.
fn delta_of(h: &SolutionField) -> SolutionField {
    let g = &h.grid;
    let (nx, ns) = (g.nx(), g.ns());
    let mut values = vec![0.0; nx * ns];
    for j in 0..ns {
        for i in 0..nx {
            let (a, b) = (i.saturating_sub(1), (i + 1).min(nx - 1));
            values[i * ns + j] = (h.value(b, j) - h.value(a, j)) / (g.x_nodes[b] - g.x_nodes[a]);
        }
    }
    SolutionField::from_parts(g.clone(), values, vec![0.0; nx * ns], h.meta)
}

fn max_second_difference(values: impl Fn(usize) -> f64, nodes: &[f64]) -> f64 {
    let mut m = 0.0f64;
    for i in 1..nodes.len().saturating_sub(1) {
        let (h0, h1) = (nodes[i] - nodes[i - 1], nodes[i + 1] - nodes[i]);
        let d2 = 2.0 * ((values(i + 1) - values(i)) / h1 - (values(i) - values(i - 1)) / h0) / (h0 + h1);
        m = m.max(d2.abs());
    }
    m
}

fn interpolation_bound(h: &SolutionField) -> f64 {
    let g = &h.grid;
    let spacing = |v: &[f64]| v.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    let hxx = (0..g.ns()).map(|j| max_second_difference(|i| h.value(i, j), &g.x_nodes)).fold(0.0, f64::max);
    let hss = (0..g.nx()).map(|i| max_second_difference(|j| h.value(i, j), &g.s_nodes)).fold(0.0, f64::max);
    spacing(&g.x_nodes).powi(2) / 8.0 * hxx + spacing(&g.s_nodes).powi(2) / 8.0 * hss
}

pub fn solve_hedge(
    market: &MarketSpec,
    grid: &GridSpec,
    cfg: &SimConfig,
    opts: &NonlocalOptions,
) -> Result<HedgeSolution, PortfolioError> {
    let problem = build_goal_problem(market)?;
    let nonlocal = solve_nonlocal(&problem.coeffs, &problem.domain, &problem.xi, &problem.kernel, grid, cfg, opts)?;
    let ell = problem.ell;
    let h_field = nonlocal.field.shifted_by(|x| ell.eval(x));
    let delta_field = delta_of(&h_field);
    let x0 = h_field.interpolate(market.s0, 0.0)?;
    let interpolation_bound = interpolation_bound(&h_field);
    let tol = nonlocal.report.tol;
    Ok(HedgeSolution { problem, nonlocal, h_field, delta_field, x0, interpolation_bound, tol })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathRecord {
    pub hit: bool,
    pub hit_time: f64,
    /// Barrier residual `X − W` on hit paths, the terminal residual otherwise.
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BarrierStats {
    pub count: usize,
    pub max_abs_residual: f64,
    pub mean_abs_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SurvivorStats {
    pub count: usize,
    /// `X(T) − ∫ k H(S(T), t) dt − ζ(S(T))`.
    pub max_abs_residual: f64,
    pub rms_residual: f64,
    /// `X(T) − ∫ k₁ X dt − E ∫ k₂ X dt − ζ(S(T))` along the simulated path.
    pub max_abs_pathwise: f64,
    pub rms_pathwise: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HedgeStats {
    pub max_abs_delta: f64,
    /// Mean over paths of `Σ |Δγ|`, including the initial position.
    pub turnover: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationReport {
    pub x0: f64,
    pub path_count: usize,
    pub step_h: f64,
    pub barrier: BarrierStats,
    pub survivors: SurvivorStats,
    pub hedge: HedgeStats,
    /// Mean and standard error of `X(T ∧ τ)`.
    pub wealth_mean: f64,
    pub wealth_stderr: f64,
    /// Mean of `E ∫ k₂ X dt` across paths.
    pub k2_expectation: f64,
    pub paths: Vec<PathRecord>,
}

impl ReplicationReport {
    pub fn write_csv<W: Write>(&self, mut w: W, digits: usize) -> io::Result<()> {
        let f = |v: f64| fmt_sig(v, digits);
        writeln!(w, "metric,value")?;
        let rows: [(&str, String); 16] = [
            ("x0", f(self.x0)),
            ("path_count", self.path_count.to_string()),
            ("step_h", f(self.step_h)),
            ("barrier_count", self.barrier.count.to_string()),
            ("barrier_max_abs_residual", f(self.barrier.max_abs_residual)),
            ("barrier_mean_abs_residual", f(self.barrier.mean_abs_residual)),
            ("survivor_count", self.survivors.count.to_string()),
            ("survivor_max_abs_residual", f(self.survivors.max_abs_residual)),
            ("survivor_rms_residual", f(self.survivors.rms_residual)),
            ("survivor_max_abs_pathwise", f(self.survivors.max_abs_pathwise)),
            ("survivor_rms_pathwise", f(self.survivors.rms_pathwise)),
            ("max_abs_delta", f(self.hedge.max_abs_delta)),
            ("turnover", f(self.hedge.turnover)),
            ("wealth_mean", f(self.wealth_mean)),
            ("wealth_stderr", f(self.wealth_stderr)),
            ("k2_expectation", f(self.k2_expectation)),
        ];
        for (k, v) in rows {
            writeln!(w, "{k},{v}")?;
        }
        Ok(())
    }

    pub fn write_summary<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "initial wealth      {:.10}", self.x0)?;
        writeln!(w, "paths               {} (step {})", self.path_count, self.step_h)?;
        writeln!(
            w,
            "barrier hits        {} (max |X - W| {:.3e}, mean {:.3e})",
            self.barrier.count, self.barrier.max_abs_residual, self.barrier.mean_abs_residual
        )?;
        writeln!(
            w,
            "survivors           {} (max residual {:.3e}, rms {:.3e})",
            self.survivors.count, self.survivors.max_abs_residual, self.survivors.rms_residual
        )?;
        writeln!(
            w,
            "pathwise residual   max {:.3e}, rms {:.3e}",
            self.survivors.max_abs_pathwise, self.survivors.rms_pathwise
        )?;
        writeln!(w, "wealth mean         {:.10} +- {:.3e}", self.wealth_mean, self.wealth_stderr)?;
        writeln!(w, "max |delta|         {:.6}", self.hedge.max_abs_delta)?;
        writeln!(w, "turnover            {:.6}", self.hedge.turnover)
    }

    /// `path_id,hit,hit_time,residual`; `hit_time` is empty for survivors.
    pub fn write_paths_csv<W: Write>(&self, mut w: W, digits: usize) -> io::Result<()> {
        writeln!(w, "path_id,hit,hit_time,residual")?;
        for (k, p) in self.paths.iter().enumerate() {
            let t = if p.hit { fmt_sig(p.hit_time, digits) } else { String::new() };
            writeln!(w, "{k},{},{t},{}", u8::from(p.hit), fmt_sig(p.residual, digits))?;
        }
        Ok(())
    }
}

struct PathRun {
    hit: Option<(f64, f64)>,
    s_end: f64,
    x_end: f64,
    k1_integral: f64,
    k2_integral: f64,
    turnover: f64,
    max_delta: f64,
}

/// Simulates `S` under the martingale measure and the self-financing wealth
/// `X(t_{m+1}) = X(t_m) + γ(t_m)(S(t_{m+1}) − S(t_m))` with `γ` read from
/// `delta_field`. On a barrier crossing the position is liquidated.
pub fn replicate(
    market: &MarketSpec,
    h_field: &SolutionField,
    delta_field: &SolutionField,
    cfg: &SimConfig,
) -> Result<ReplicationReport, PortfolioError> {
    cfg.validate(market.horizon)?;
    let (sl, su, horizon) = (market.s_l, market.s_u, market.horizon);
    for f in [h_field, delta_field] {
        for (x, t) in [(sl, 0.0), (su, horizon)] {
            if !f.covers(x, t) {
                return Err(PortfolioError::FieldOutOfRange { x, t });
            }
        }
    }
    let x0 = h_field.interpolate(market.s0, 0.0)?;
    let n_steps = step_count(horizon, cfg.step_h);
    let theta = market.theta;

    let runs: Vec<Result<PathRun, PortfolioError>> = (0..cfg.path_count as u64)
        .into_par_iter()
        .map(|k| {
            let mut stream = PathStream::new(cfg.base_seed, k, 0);
            let mut z = [0.0];
            let (mut s, mut x) = (market.s0, x0);
            let mut run = PathRun {
                hit: None,
                s_end: s,
                x_end: x,
                k1_integral: 0.0,
                k2_integral: 0.0,
                turnover: 0.0,
                max_delta: 0.0,
            };
            let mut prev_delta = 0.0;
            let mut t = 0.0;
            for m in 0..n_steps {
                let t_next = if m + 1 == n_steps { horizon } else { (m + 1) as f64 * cfg.step_h };
                let dt = t_next - t;
                let delta = delta_field.interpolate(s, t)?;
                run.turnover += (delta - prev_delta).abs();
                run.max_delta = run.max_delta.max(delta.abs());
                prev_delta = delta;
                stream.step(&mut z);
                let sig = (market.sigma)(t);
                let s_next = s * (sig * dt.sqrt() * z[0] - 0.5 * sig * sig * dt).exp();
                let x_next = x + delta * (s_next - s);
                accumulate_kernels(market, &mut run, t, t_next, x, x_next, theta);
                s = s_next;
                x = x_next;
                t = t_next;
                if s <= sl || s >= su {
                    let target = if s <= sl { market.w_l } else { market.w_u };
                    run.hit = Some((t, target));
                    run.turnover += delta.abs();
                    if t < theta {
                        accumulate_kernels(market, &mut run, t, theta, x, x, theta);
                    }
                    break;
                }
            }
            run.s_end = s;
            run.x_end = x;
            Ok(run)
        })
        .collect();
    let runs: Vec<PathRun> = runs.into_iter().collect::<Result<_, _>>()?;

    let k2_expectation = runs.iter().map(|r| r.k2_integral).sum::<f64>() / runs.len() as f64;
    let gamma_h = apply_gamma(&GammaKernel::TimeKernel {
        k: {
            let (a, b) = (market.k1.clone(), market.k2.clone());
            Arc::new(move |t| a(t) + b(t))
        },
        theta,
    }, h_field)?;

    let mut paths = Vec::with_capacity(runs.len());
    let mut barrier = BarrierStats::default();
    let mut survivors = SurvivorStats::default();
    let mut hedge = HedgeStats::default();
    let mut wealth = Welford::default();
    let (mut sum_sq, mut sum_sq_pw) = (0.0, 0.0);
    for r in &runs {
        wealth.push(r.x_end);
        hedge.max_abs_delta = hedge.max_abs_delta.max(r.max_delta);
        hedge.turnover += r.turnover / runs.len() as f64;
        match r.hit {
            Some((t, target)) => {
                let res = r.x_end - target;
                barrier.count += 1;
                barrier.max_abs_residual = barrier.max_abs_residual.max(res.abs());
                barrier.mean_abs_residual += res.abs();
                paths.push(PathRecord { hit: true, hit_time: t, residual: res });
            }
            None => {
                let zeta = (market.zeta)(r.s_end);
                let gh = interp_linear(&h_field.grid.x_nodes, &gamma_h, r.s_end);
                let res = r.x_end - gh - zeta;
                let pathwise = r.x_end - r.k1_integral - k2_expectation - zeta;
                survivors.count += 1;
                survivors.max_abs_residual = survivors.max_abs_residual.max(res.abs());
                survivors.max_abs_pathwise = survivors.max_abs_pathwise.max(pathwise.abs());
                sum_sq += res * res;
                sum_sq_pw += pathwise * pathwise;
                paths.push(PathRecord { hit: false, hit_time: f64::NAN, residual: res });
            }
        }
    }
    if barrier.count > 0 {
        barrier.mean_abs_residual /= barrier.count as f64;
    }
    if survivors.count > 0 {
        survivors.rms_residual = (sum_sq / survivors.count as f64).sqrt();
        survivors.rms_pathwise = (sum_sq_pw / survivors.count as f64).sqrt();
    }
    Ok(ReplicationReport {
        x0,
        path_count: runs.len(),
        step_h: cfg.step_h,
        barrier,
        survivors,
        hedge,
        wealth_mean: wealth.mean(),
        wealth_stderr: wealth.stderr(),
        k2_expectation,
        paths,
    })
}

/// Trapezoid contribution of `[t0, t1] ∩ [0, θ]` to `∫ k₁ X` and `∫ k₂ X`,
/// with `X` linear on the step.
fn accumulate_kernels(market: &MarketSpec, run: &mut PathRun, t0: f64, t1: f64, x0: f64, x1: f64, theta: f64) {
    if t0 >= theta {
        return;
    }
    let end = t1.min(theta);
    let x_end = if end < t1 { x0 + (x1 - x0) * (end - t0) / (t1 - t0) } else { x1 };
    let h = 0.5 * (end - t0);
    run.k1_integral += h * ((market.k1)(t0) * x0 + (market.k1)(end) * x_end);
    run.k2_integral += h * ((market.k2)(t0) * x0 + (market.k2)(end) * x_end);
}

/// Fields where `H = ℓ` exactly, for tests and the static hedge.
pub fn static_fields(market: &MarketSpec, grid: &GridSpec) -> (SolutionField, SolutionField) {
    let ell = market.ell();
    let (nx, ns) = (grid.nx(), grid.ns());
    let meta = FieldMeta { path_count: 0, base_seed: 0, step_h: 0.0, c_lambda: 1.0 };
    let mut h = vec![0.0; nx * ns];
    for (i, &x) in grid.x_nodes.iter().enumerate() {
        for j in 0..ns {
            h[i * ns + j] = ell.eval(x);
        }
    }
    let h = SolutionField::from_parts(grid.clone(), h, vec![0.0; nx * ns], meta);
    let d = SolutionField::from_parts(grid.clone(), vec![ell.c1; nx * ns], vec![0.0; nx * ns], meta);
    (h, d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn market() -> MarketSpec {
        MarketSpec::constant(0.2, 1.5, 1.0, 2.0, 1.0, 2.0, 1.0)
    }

    #[test]
    fn ell_interpolates_barriers() {
        let ell = market().ell();
        assert_eq!((ell.c1, ell.c0), (1.0, 0.0));
    }

    #[test]
    fn zero_kernels_give_zero_bound_and_plain_terminal() {
        let p = build_goal_problem(&market()).unwrap();
        assert_eq!(p.kappa, 0.0);
        assert!(p.coeffs.is_completed());
        for x in [1.0, 1.25, 1.5, 2.0] {
            assert_eq!(p.xi.eval(&[x]), 0.0);
        }
    }

    #[test]
    fn zeta_and_budget_are_validated() {
        let m = market().with_zeta(Arc::new(|x| x + 0.1));
        assert!(matches!(build_goal_problem(&m), Err(PortfolioError::ZetaBoundaryViolation { .. })));
        let m = market().with_kernels(1.0, Arc::new(|_| 1.0), Arc::new(|_| 0.0));
        assert!(matches!(build_goal_problem(&m), Err(PortfolioError::KernelBudgetExceeded { .. })));
        let m = MarketSpec { s0: 2.5, ..market() };
        assert!(matches!(build_goal_problem(&m), Err(PortfolioError::InvalidMarket(_))));
    }

    #[test]
    fn static_hedge_replicates() {
        let theta = 0.8;
        let m = market()
            .with_kernels(theta, Arc::new(move |_| 0.3 / theta), Arc::new(|_| 0.0))
            .with_zeta(Arc::new(|x| 0.7 * x));
        let grid = GridSpec::uniform(&Domain::interval(1.0, 2.0).unwrap(), 1.0, 11, 6).unwrap();
        let (h, d) = static_fields(&m, &grid);
        let r = replicate(&m, &h, &d, &SimConfig::new(1e-2, 500, 3)).unwrap();
        assert!(r.survivors.max_abs_residual <= 1e-10, "{}", r.survivors.max_abs_residual);
        assert_eq!(r.barrier.count + r.survivors.count, 500);
        let mut csv = Vec::new();
        r.write_paths_csv(&mut csv, 12).unwrap();
        assert!(String::from_utf8(csv).unwrap().starts_with("path_id,hit,hit_time,residual\n0,"));
    }
}

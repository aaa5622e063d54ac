//! Survival probabilities and exit-time couplings of the characteristic diffusion.

use std::io::{self, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::characteristics::{simulate_segment_with, simulate_until, Scratch, SimConfig, SimError};
use crate::csvfmt::fmt_sig;
use crate::model::{CoefficientSet, Domain};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExitStatsError {
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error("horizon s + θ = {end} exceeds T = {horizon}")]
    HorizonExceeded { end: f64, horizon: f64 },
    #[error("noise dimensions differ: {a} vs {b}")]
    DimensionMismatch { a: usize, b: usize },
}

/// `P(τ > s + θ)` with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurvivalEstimate {
    pub theta: f64,
    pub p_hat: f64,
    pub stderr: f64,
}

fn binomial(theta: f64, survivors: usize, m: usize) -> SurvivalEstimate {
    let p = survivors as f64 / m as f64;
    SurvivalEstimate { theta, p_hat: p, stderr: (p * (1.0 - p) / m as f64).sqrt() }
}

fn check_horizon(coeffs: &CoefficientSet, s: f64, theta: f64) -> Result<(), ExitStatsError> {
    let end = s + theta;
    if !(theta >= 0.0) || end > coeffs.horizon() * (1.0 + 1e-12) {
        return Err(ExitStatsError::HorizonExceeded { end, horizon: coeffs.horizon() });
    }
    Ok(())
}

pub fn estimate_survival(
    coeffs: &CoefficientSet,
    domain: &Domain,
    x: &[f64],
    s: f64,
    theta: f64,
    cfg: &SimConfig,
) -> Result<SurvivalEstimate, ExitStatsError> {
    Ok(estimate_survival_nested(coeffs, domain, x, s, &[theta], cfg)?.remove(0))
}

/// Survival at several horizons from one set of paths, so the estimates are
/// nonincreasing in `θ` path by path.
pub fn estimate_survival_nested(
    coeffs: &CoefficientSet,
    domain: &Domain,
    x: &[f64],
    s: f64,
    thetas: &[f64],
    cfg: &SimConfig,
) -> Result<Vec<SurvivalEstimate>, ExitStatsError> {
    let longest = thetas.iter().copied().fold(0.0, f64::max);
    for &theta in thetas {
        check_horizon(coeffs, s, theta)?;
    }
    let stop = (s + longest).min(coeffs.horizon());
    let paths = simulate_until(coeffs, domain, x, s, stop, cfg)?;
    Ok(thetas
        .iter()
        .map(|&theta| {
            let survivors = paths.iter().filter(|p| !p.exited || p.tau_t > s + theta).count();
            binomial(theta, survivors, paths.len())
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalEntry {
    pub x: Vec<f64>,
    pub theta: f64,
    pub p_hat: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalCurve {
    pub entries: Vec<SurvivalEntry>,
    /// Every start point survived with certainty: the dynamics do not move.
    pub degenerate: bool,
    radial: Vec<f64>,
}

impl SurvivalCurve {
    /// True if each estimate is at most the previous one plus `k` combined
    /// standard errors.
    pub fn is_monotone_decreasing(&self, k: f64) -> bool {
        self.entries.windows(2).all(|w| {
            w[1].p_hat <= w[0].p_hat + k * w[0].stderr.hypot(w[1].stderr)
        })
    }

    /// `x,theta,p_hat,stderr`, with `x` the radial coordinate.
    pub fn write_csv<W: Write>(&self, mut w: W, digits: usize) -> io::Result<()> {
        writeln!(w, "x,theta,p_hat,stderr")?;
        for (e, r) in self.entries.iter().zip(&self.radial) {
            writeln!(
                w,
                "{},{},{},{}",
                fmt_sig(*r, digits),
                fmt_sig(e.theta, digits),
                fmt_sig(e.p_hat, digits),
                fmt_sig(e.stderr, digits)
            )?;
        }
        Ok(())
    }
}

/// Survival at horizon `θ` for each start point in `xs`.
pub fn boundary_decay_curve(
    coeffs: &CoefficientSet,
    domain: &Domain,
    s: f64,
    theta: f64,
    xs: &[Vec<f64>],
    cfg: &SimConfig,
) -> Result<SurvivalCurve, ExitStatsError> {
    let mut entries = Vec::with_capacity(xs.len());
    for x in xs {
        let e = estimate_survival(coeffs, domain, x, s, theta, cfg)?;
        entries.push(SurvivalEntry { x: x.clone(), theta, p_hat: e.p_hat, stderr: e.stderr });
    }
    let degenerate = !entries.is_empty() && entries.iter().all(|e| e.p_hat == 1.0);
    let radial = xs.iter().map(|x| domain.radial(x)).collect();
    Ok(SurvivalCurve { entries, degenerate, radial })
}

/// Mean of `|τ_a − τ_b|` (capped at the horizon) under common random numbers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExitTimeDistance {
    pub d_hat: f64,
    pub stderr: f64,
}

fn noise_dim(c: &CoefficientSet) -> usize {
    c.beta_count() + c.tilde_count()
}

fn coupled_distance(
    a: (&CoefficientSet, &[f64]),
    b: (&CoefficientSet, &[f64]),
    domain: &Domain,
    s: f64,
    cfg: &SimConfig,
) -> Result<ExitTimeDistance, ExitStatsError> {
    let (na, nb) = (noise_dim(a.0), noise_dim(b.0));
    if na != nb || a.0.dim() != b.0.dim() {
        return Err(ExitStatsError::DimensionMismatch { a: na, b: nb });
    }
    // Validates start points and configuration for both sides.
    simulate_until(a.0, domain, a.1, s, s, &cfg.with_paths(1))?;
    simulate_until(b.0, domain, b.1, s, s, &cfg.with_paths(1))?;
    let diffs: Vec<Result<f64, SimError>> = (0..cfg.path_count as u64)
        .into_par_iter()
        .map_init(
            || (Scratch::new(a.0), Scratch::new(b.0)),
            |(sa, sb), k| {
                let pa = simulate_segment_with(a.0, domain, a.1, s, a.0.horizon(), cfg, k, 0, sa)?;
                let pb = simulate_segment_with(b.0, domain, b.1, s, b.0.horizon(), cfg, k, 0, sb)?;
                Ok((pa.tau_t - pb.tau_t).abs())
            },
        )
        .collect();
    let mut acc = crate::solver::Welford::default();
    for d in diffs {
        acc.push(d?);
    }
    Ok(ExitTimeDistance { d_hat: acc.mean(), stderr: acc.stderr() })
}

/// Two dynamics from the same start, driven by the same increments.
pub fn exit_time_l1_distance(
    coeffs_a: &CoefficientSet,
    coeffs_b: &CoefficientSet,
    domain: &Domain,
    x: &[f64],
    s: f64,
    cfg: &SimConfig,
) -> Result<ExitTimeDistance, ExitStatsError> {
    coupled_distance((coeffs_a, x), (coeffs_b, x), domain, s, cfg)
}

/// The same dynamics from two start points, driven by the same increments.
pub fn exit_time_l1_distance_starts(
    coeffs: &CoefficientSet,
    domain: &Domain,
    x_a: &[f64],
    x_b: &[f64],
    s: f64,
    cfg: &SimConfig,
) -> Result<ExitTimeDistance, ExitStatsError> {
    coupled_distance((coeffs, x_a), (coeffs, x_b), domain, s, cfg)
}

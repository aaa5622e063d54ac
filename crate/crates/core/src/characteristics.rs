//! Euler–Maruyama simulation of the characteristic diffusion, killed at the
//! first exit from the domain, with the accumulated discount factor.
//!
//! The discount along a path is `γ(t) = exp(∫_s^t λ(y(r), r) dr)`, evaluated
//! with the left endpoint of each step, so `u(x, s) = E[γ(T∧τ) ξ(y(T∧τ))]`
//! solves `u_t + A u = 0` with `A` carrying `+λ u`.

use rayon::prelude::*;
use thiserror::Error;

use crate::model::{CoefficientSet, Domain, BOUNDARY_TOL};
use crate::rng::PathStream;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("path {path_index} escaped the bound at t={t}")]
    NumericalBlowup { path_index: u64, t: f64 },
    #[error("start point {x:?} is outside the closed domain")]
    StartOutsideDomain { x: Vec<f64> },
    #[error("start time {s} outside [0, {horizon}]")]
    StartTimeOutOfRange { s: f64, horizon: f64 },
    #[error("coefficients have not been completed with the auxiliary diffusion")]
    NotCompleted,
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Monte Carlo settings shared by every simulation entry point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub step_h: f64,
    pub bridge_correction: bool,
    pub base_seed: u64,
    pub path_count: usize,
    /// `|y|` above this aborts the path with [`SimError::NumericalBlowup`].
    pub escape_bound: f64,
}

impl SimConfig {
    pub fn new(step_h: f64, path_count: usize, base_seed: u64) -> Self {
        Self { step_h, bridge_correction: false, base_seed, path_count, escape_bound: 1e8 }
    }

    pub fn with_bridge(mut self, on: bool) -> Self {
        self.bridge_correction = on;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.base_seed = seed;
        self
    }

    pub fn with_paths(mut self, m: usize) -> Self {
        self.path_count = m;
        self
    }

    pub fn with_step(mut self, h: f64) -> Self {
        self.step_h = h;
        self
    }

    pub fn validate(&self, horizon: f64) -> Result<(), SimError> {
        if !(self.step_h > 0.0 && self.step_h <= horizon) {
            return Err(SimError::InvalidConfig(format!(
                "step_h must lie in (0, {horizon}], got {}",
                self.step_h
            )));
        }
        if self.path_count == 0 {
            return Err(SimError::InvalidConfig("path_count must be at least 1".into()));
        }
        if !(self.escape_bound > 0.0) {
            return Err(SimError::InvalidConfig("escape_bound must be positive".into()));
        }
        Ok(())
    }
}

/// One simulated characteristic stopped at `stop ∧ τ`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathOutcome {
    /// Capped exit time.
    pub tau_t: f64,
    pub y_exit: Vec<f64>,
    pub discount: f64,
    pub exited: bool,
}

/// Reusable per-thread buffers.
pub(crate) struct Scratch {
    y: Vec<f64>,
    y_new: Vec<f64>,
    drift: Vec<f64>,
    vec: Vec<f64>,
    tilde: Vec<f64>,
    normals: Vec<f64>,
    normal_dir: Vec<f64>,
}

impl Scratch {
    pub(crate) fn new(coeffs: &CoefficientSet) -> Self {
        let n = coeffs.dim();
        Self {
            y: vec![0.0; n],
            y_new: vec![0.0; n],
            drift: vec![0.0; n],
            vec: vec![0.0; n],
            tilde: vec![0.0; n * n],
            normals: vec![0.0; coeffs.beta_count() + coeffs.tilde_count()],
            normal_dir: vec![0.0; n],
        }
    }
}

pub(crate) fn step_count(span: f64, h: f64) -> u64 {
    if span <= 0.0 {
        0
    } else {
        (span / h - 1e-9).ceil().max(1.0) as u64
    }
}

fn check_start(coeffs: &CoefficientSet, domain: &Domain, x: &[f64], s: f64) -> Result<(), SimError> {
    if !coeffs.is_completed() {
        return Err(SimError::NotCompleted);
    }
    if x.len() != coeffs.dim() || domain.dim() != coeffs.dim() {
        return Err(SimError::DimensionMismatch(format!(
            "point has {} coordinates, coefficients {}, domain {}",
            x.len(),
            coeffs.dim(),
            domain.dim()
        )));
    }
    if !domain.in_closure(x) {
        return Err(SimError::StartOutsideDomain { x: x.to_vec() });
    }
    if !(0.0..=coeffs.horizon()).contains(&s) {
        return Err(SimError::StartTimeOutOfRange { s, horizon: coeffs.horizon() });
    }
    Ok(())
}

/// Probability that a Brownian bridge from `y` to `y_new` touches a face,
/// given the variance rate `var` of the motion along the face normal.
fn bridge_probability(domain: &Domain, y: &[f64], y_new: &[f64], var: f64, dt: f64) -> f64 {
    if !(var > 0.0) {
        return 0.0;
    }
    let (a1, a2) = domain.face_distances(y);
    let (b1, b2) = domain.face_distances(y_new);
    let crossing = |a: f64, b: f64| {
        let e = 2.0 * a * b / (var * dt);
        // exp(-40) is below the resolution of the uniform.
        if e > 40.0 { 0.0 } else { (-e).exp() }
    };
    let (p1, p2) = (crossing(a1, b1), crossing(a2, b2));
    1.0 - (1.0 - p1) * (1.0 - p2)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Simulates from `(x, s)` until `stop ∧ τ`, with the first step drawing the
/// increments of global step `step_offset` of the path's stream.
#[allow(clippy::too_many_arguments)]
pub(crate) fn simulate_segment_with(
    coeffs: &CoefficientSet,
    domain: &Domain,
    x: &[f64],
    s: f64,
    stop: f64,
    cfg: &SimConfig,
    path_index: u64,
    step_offset: u64,
    sc: &mut Scratch,
) -> Result<PathOutcome, SimError> {
    if domain.distance_to_boundary(x) <= BOUNDARY_TOL {
        return Ok(PathOutcome { tau_t: s, y_exit: x.to_vec(), discount: 1.0, exited: true });
    }
    let n_steps = step_count(stop - s, cfg.step_h);
    let beta_n = coeffs.beta_count();
    let tilde_n = coeffs.tilde_count();
    let mut stream = PathStream::new(cfg.base_seed, path_index, step_offset);
    sc.y.copy_from_slice(x);
    let mut discount = 1.0;
    let n = coeffs.dim();
    for k in 0..n_steps {
        let t = s + k as f64 * cfg.step_h;
        let t_next = if k + 1 == n_steps { stop } else { s + (k + 1) as f64 * cfg.step_h };
        let dt = t_next - t;
        let sq = dt.sqrt();
        let u = stream.step(&mut sc.normals);

        if cfg.bridge_correction {
            domain.face_normal(&sc.y, true, &mut sc.normal_dir);
        }
        // Normal variance rate at the start state, for the bridge test.
        let mut var = 0.0;
        coeffs.eval_drift(&sc.y, t, &mut sc.drift);
        for a in 0..n {
            sc.y_new[a] = sc.y[a] + sc.drift[a] * dt;
        }
        for i in 0..beta_n {
            coeffs.eval_beta(i, &sc.y, t, &mut sc.vec);
            let dw = sc.normals[i] * sq;
            for a in 0..n {
                sc.y_new[a] += sc.vec[a] * dw;
            }
            if cfg.bridge_correction {
                var += dot(&sc.vec, &sc.normal_dir).powi(2);
            }
        }
        if tilde_n > 0 {
            coeffs.eval_tilde(&sc.y, t, &mut sc.tilde);
            for j in 0..tilde_n {
                let dw = sc.normals[beta_n + j] * sq;
                let mut proj = 0.0;
                for a in 0..n {
                    sc.y_new[a] += sc.tilde[a * n + j] * dw;
                    proj += sc.tilde[a * n + j] * sc.normal_dir[a];
                }
                var += proj * proj;
            }
        }
        let lambda = coeffs.eval_rate(&sc.y, t);
        if lambda != 0.0 {
            discount *= (lambda * dt).exp();
        }

        let norm2: f64 = sc.y_new.iter().map(|v| v * v).sum();
        if !norm2.is_finite() || norm2.sqrt() > cfg.escape_bound {
            return Err(SimError::NumericalBlowup { path_index, t: t_next });
        }
        if !domain.contains(&sc.y_new) || domain.distance_to_boundary(&sc.y_new) <= BOUNDARY_TOL {
            let mut y_exit = vec![0.0; n];
            domain.project_exit(&sc.y, &sc.y_new, &mut y_exit);
            return Ok(PathOutcome { tau_t: t_next, y_exit, discount, exited: true });
        }
        if cfg.bridge_correction && u < bridge_probability(domain, &sc.y, &sc.y_new, var, dt) {
            let mut y_exit = sc.y_new.clone();
            domain.snap_to_nearest_face(&mut y_exit);
            return Ok(PathOutcome { tau_t: t_next, y_exit, discount, exited: true });
        }
        std::mem::swap(&mut sc.y, &mut sc.y_new);
    }
    Ok(PathOutcome { tau_t: stop.max(s), y_exit: sc.y.clone(), discount, exited: false })
}

/// Simulates one path from `(x, s)` to `T ∧ τ`.
pub fn simulate_path(
    coeffs: &CoefficientSet,
    domain: &Domain,
    x: &[f64],
    s: f64,
    cfg: &SimConfig,
    path_index: u64,
) -> Result<PathOutcome, SimError> {
    simulate_path_segment(coeffs, domain, x, s, coeffs.horizon(), cfg, path_index, 0)
}

/// Simulates one path from `(x, s)` to `stop ∧ τ`, starting at global step
/// `step_offset` of the path's random stream (for checkpoint/restart).
#[allow(clippy::too_many_arguments)]
pub fn simulate_path_segment(
    coeffs: &CoefficientSet,
    domain: &Domain,
    x: &[f64],
    s: f64,
    stop: f64,
    cfg: &SimConfig,
    path_index: u64,
    step_offset: u64,
) -> Result<PathOutcome, SimError> {
    check_start(coeffs, domain, x, s)?;
    cfg.validate(coeffs.horizon())?;
    if stop < s || stop > coeffs.horizon() {
        return Err(SimError::StartTimeOutOfRange { s: stop, horizon: coeffs.horizon() });
    }
    let mut sc = Scratch::new(coeffs);
    simulate_segment_with(coeffs, domain, x, s, stop, cfg, path_index, step_offset, &mut sc)
}

/// Paths `0..cfg.path_count` from `(x, s)` to `stop ∧ τ`, in index order.
pub(crate) fn simulate_until(
    coeffs: &CoefficientSet,
    domain: &Domain,
    x: &[f64],
    s: f64,
    stop: f64,
    cfg: &SimConfig,
) -> Result<Vec<PathOutcome>, SimError> {
    check_start(coeffs, domain, x, s)?;
    cfg.validate(coeffs.horizon())?;
    let results: Vec<Result<PathOutcome, SimError>> = (0..cfg.path_count as u64)
        .into_par_iter()
        .map_init(
            || Scratch::new(coeffs),
            |sc, k| simulate_segment_with(coeffs, domain, x, s, stop, cfg, k, 0, sc),
        )
        .collect();
    results.into_iter().collect()
}

/// All `cfg.path_count` paths from `(x, s)` to `T ∧ τ`. The output does not
/// depend on the number of worker threads.
pub fn simulate_batch(
    coeffs: &CoefficientSet,
    domain: &Domain,
    x: &[f64],
    s: f64,
    cfg: &SimConfig,
) -> Result<Vec<PathOutcome>, SimError> {
    simulate_until(coeffs, domain, x, s, coeffs.horizon(), cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{complete_diffusion, presets, ProbeGrid};

    fn complete(c: CoefficientSet, d: &Domain) -> CoefficientSet {
        complete_diffusion(&c, &ProbeGrid::default_for(d, c.horizon())).unwrap()
    }

    #[test]
    fn zero_rate_gives_unit_discount() {
        let d = Domain::interval(0.0, 1.0).unwrap();
        let c = complete(presets::brownian(1.0), &d);
        let cfg = SimConfig::new(0.01, 50, 3);
        for p in simulate_batch(&c, &d, &[0.5], 0.0, &cfg).unwrap() {
            assert_eq!(p.discount, 1.0);
        }
    }

    #[test]
    fn frozen_dynamics_stay_put() {
        let d = Domain::interval(0.0, 1.0).unwrap();
        let c = complete(crate::model::CoefficientSet::new(1, 1.0), &d);
        let p = simulate_path(&c, &d, &[0.3], 0.2, &SimConfig::new(0.05, 1, 0).with_bridge(true), 0).unwrap();
        assert!(!p.exited);
        assert_eq!(p.tau_t, 1.0);
        assert_eq!(p.y_exit, vec![0.3]);
    }

    #[test]
    fn boundary_start_exits_immediately() {
        let d = Domain::interval(0.0, 1.0).unwrap();
        let c = complete(presets::brownian(1.0), &d);
        let p = simulate_path(&c, &d, &[1.0], 0.25, &SimConfig::new(0.01, 1, 0), 0).unwrap();
        assert!(p.exited);
        assert_eq!(p.tau_t, 0.25);
    }

    #[test]
    fn exit_states_lie_on_boundary() {
        let d = Domain::interval(-1.0, 1.0).unwrap();
        let c = complete(presets::brownian(1.0), &d);
        for bridge in [false, true] {
            let cfg = SimConfig::new(0.01, 500, 11).with_bridge(bridge);
            for p in simulate_batch(&c, &d, &[0.2], 0.0, &cfg).unwrap() {
                assert!(p.tau_t >= 0.0 && p.tau_t <= 1.0);
                assert!(d.in_closure(&p.y_exit));
                if p.exited {
                    assert!(d.distance_to_boundary(&p.y_exit) <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn spherical_layer_exit() {
        let d = Domain::spherical_layer(3, 1.0, 2.0).unwrap();
        let c = complete(presets::brownian_nd(3, 1.0), &d);
        let cfg = SimConfig::new(0.01, 200, 5).with_bridge(true);
        let out = simulate_batch(&c, &d, &[1.5, 0.0, 0.0], 0.0, &cfg).unwrap();
        assert!(out.iter().any(|p| p.exited));
        for p in out.iter().filter(|p| p.exited) {
            assert!(d.distance_to_boundary(&p.y_exit) <= 1e-12);
        }
    }

    #[test]
    fn discount_bounds_hold() {
        let d = Domain::interval(0.0, 1.0).unwrap();
        for lambda in [-1.0, 0.5] {
            let c = complete(presets::heat(1.0, lambda), &d);
            for p in simulate_batch(&c, &d, &[0.5], 0.1, &SimConfig::new(0.01, 200, 2)).unwrap() {
                let span = p.tau_t - 0.1;
                let upper = (span * f64::max(0.0, lambda)).exp();
                let lower = (-span * f64::max(0.0, -lambda)).exp();
                assert!(p.discount <= upper * (1.0 + 1e-12) && p.discount >= lower * (1.0 - 1e-12));
            }
        }
    }

    #[test]
    fn blowup_is_reported_with_path_index() {
        let d = Domain::interval(-1e12, 1e12).unwrap();
        let c = complete(presets::brownian(1.0).scalar_drift(|x, _| 1e3 * x), &d);
        let mut cfg = SimConfig::new(0.1, 3, 0);
        cfg.escape_bound = 1e3;
        let err = simulate_batch(&c, &d, &[1.0], 0.0, &cfg).unwrap_err();
        assert!(matches!(err, SimError::NumericalBlowup { path_index: 0, .. }));
    }

    #[test]
    fn batch_singleton_and_determinism() {
        let d = Domain::interval(0.0, 1.0).unwrap();
        let c = complete(presets::heat(1.0, -0.3), &d);
        let cfg = SimConfig::new(0.01, 1, 42).with_bridge(true);
        let one = simulate_batch(&c, &d, &[0.4], 0.0, &cfg).unwrap();
        assert_eq!(one, vec![simulate_path(&c, &d, &[0.4], 0.0, &cfg, 0).unwrap()]);

        let cfg = cfg.with_paths(300);
        let a = simulate_batch(&c, &d, &[0.4], 0.0, &cfg).unwrap();
        let b = simulate_batch(&c, &d, &[0.4], 0.0, &cfg).unwrap();
        assert_eq!(a, b);
        let pool = |k| rayon::ThreadPoolBuilder::new().num_threads(k).build().unwrap();
        let c1 = pool(1).install(|| simulate_batch(&c, &d, &[0.4], 0.0, &cfg).unwrap());
        let c8 = pool(8).install(|| simulate_batch(&c, &d, &[0.4], 0.0, &cfg).unwrap());
        assert_eq!(c1, a);
        assert_eq!(c8, a);
    }

    #[test]
    fn restart_reproduces_full_path() {
        let d = Domain::interval(-5.0, 5.0).unwrap();
        let c = complete(
            presets::brownian(1.0).with_rate(std::sync::Arc::new(|x: &[f64], t: f64| -0.3 * x[0] * x[0] + t)),
            &d,
        );
        let cfg = SimConfig::new(0.01, 1, 9);
        for k in 0..20 {
            let full = simulate_path(&c, &d, &[0.1], 0.0, &cfg, k).unwrap();
            let first = simulate_path_segment(&c, &d, &[0.1], 0.0, 0.4, &cfg, k, 0).unwrap();
            if first.exited {
                assert_eq!(first, full);
                continue;
            }
            let second = simulate_path_segment(&c, &d, &first.y_exit, 0.4, 1.0, &cfg, k, 40).unwrap();
            assert!((first.discount * second.discount - full.discount).abs() <= 1e-12 * full.discount);
            assert!((second.y_exit[0] - full.y_exit[0]).abs() <= 1e-12);
            assert_eq!(second.exited, full.exited);
        }
    }

    #[test]
    fn exited_paths_were_inside_before_exit() {
        // Re-simulating to just before the exit time must still be inside.
        let d = Domain::interval(0.0, 1.0).unwrap();
        let c = complete(presets::brownian(1.0), &d);
        let cfg = SimConfig::new(0.01, 1, 4);
        for k in 0..50 {
            let p = simulate_path(&c, &d, &[0.5], 0.0, &cfg, k).unwrap();
            if p.exited && p.tau_t > 0.015 {
                let prior = simulate_path_segment(&c, &d, &[0.5], 0.0, p.tau_t - 0.01, &cfg, k, 0).unwrap();
                assert!(!prior.exited && d.contains(&prior.y_exit));
            }
        }
    }
}

//! Fixed-point iteration and the barrier-portfolio hedge.

use std::f64::consts::PI;
use std::sync::Arc;

use bspde::exit_stats::estimate_survival;
use bspde::model::presets;
use bspde::portfolio::{replicate, solve_hedge, MarketSpec};
use bspde::{
    apply_gamma, complete_diffusion, gamma_norm_bound, solve_nonlocal, Domain, GammaKernel, GridSpec, NonlocalOptions,
    ProbeGrid, SimConfig, TerminalData,
};

#[test]
fn residuals_decay_geometrically_within_the_bound() {
    let d = Domain::interval(0.0, 1.0).unwrap();
    let horizon = 1.0;
    let c = complete_diffusion(&presets::heat(horizon, 0.0), &ProbeGrid::default_for(&d, horizon)).unwrap();
    let g = GridSpec::uniform(&d, horizon, 9, 6).unwrap();
    let cfg = SimConfig::new(2e-3, 4000, 5).with_bridge(true);
    let xi = TerminalData::scalar(|x| (PI * x).sin() + 0.5 * (3.0 * PI * x).sin());
    let theta = 0.6;
    let kernel = GammaKernel::time_kernel(move |_| 1.0 / theta, theta);
    let opts = NonlocalOptions { tol: Some(1e-9), ..Default::default() };
    let sol = solve_nonlocal(&c, &d, &xi, &kernel, &g, &cfg, &opts).unwrap();
    let r = &sol.report;
    let bound = gamma_norm_bound(&kernel, horizon, &d).bound;
    assert!(r.contraction_estimate <= bound + r.noise_floor);
    for (m, res) in r.residual_history.iter().enumerate() {
        assert!(*res <= r.residual_history[0] * r.contraction_estimate.powi(m as i32) * 1.1);
    }
    // Budget one on [0, θ]: the contraction comes from killing before T.
    let survival = estimate_survival(&c, &d, &[0.5], 0.0, horizon - theta, &cfg).unwrap();
    assert!(r.contraction_estimate <= (survival.p_hat + 3.0 * survival.stderr).sqrt() + r.noise_floor);
    let gamma = apply_gamma(&kernel, &sol.field).unwrap();
    for (i, &x) in g.x_nodes.iter().enumerate() {
        let residual = sol.field.value(i, g.ns() - 1) - gamma[i] - xi.eval(&[x]);
        assert!(residual.abs() <= 2.0 * r.tol);
    }
}

fn market() -> MarketSpec {
    let theta = 0.8;
    MarketSpec::constant(0.2, 1.5, 1.0, 2.0, 1.0, 2.0, 1.0)
        .with_kernels(theta, Arc::new(move |_| 0.3 / theta), Arc::new(|_| 0.0))
        .with_zeta(Arc::new(|x| 0.7 * x + 0.5 * (x - 1.0) * (2.0 - x)))
}

#[test]
fn hedge_field_is_pinned_and_wealth_is_a_martingale() {
    let m = market();
    let g = GridSpec::uniform(&Domain::interval(1.0, 2.0).unwrap(), 1.0, 9, 6).unwrap();
    let hedge = solve_hedge(&m, &g, &SimConfig::new(2e-3, 2000, 3).with_bridge(true), &NonlocalOptions::default()).unwrap();
    let h = &hedge.h_field;
    for j in 0..g.ns() {
        assert_eq!(h.value(0, j), m.w_l);
        assert_eq!(h.value(g.nx() - 1, j), m.w_u);
    }
    let gamma_h = apply_gamma(&hedge.problem.kernel, h).unwrap();
    for (i, &x) in g.x_nodes.iter().enumerate() {
        let residual = h.value(i, g.ns() - 1) - gamma_h[i] - (m.zeta)(x);
        assert!(residual.abs() <= 2.0 * hedge.tol, "x={x}: {residual}");
    }
    let report = replicate(&m, h, &hedge.delta_field, &SimConfig::new(2e-3, 4000, 9)).unwrap();
    assert!((report.wealth_mean - report.x0).abs() <= 3.0 * report.wealth_stderr);
}

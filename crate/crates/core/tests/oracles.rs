//! Solvers against closed forms and independently computed reference values.

use std::f64::consts::PI;

use bspde::exit_stats::estimate_survival_nested;
use bspde::pde_oracle::solve_backward_pde_native;
use bspde::{
    complete_diffusion, model::presets, solve_backward_pde, solve_cauchy, CoefficientSet, Domain, FdGrid,
    GridSpec, ProbeGrid, SimConfig, TerminalData,
};
use statrs::distribution::{ContinuousCDF, Normal};

fn complete(c: CoefficientSet, d: &Domain) -> CoefficientSet {
    complete_diffusion(&c, &ProbeGrid::default_for(d, c.horizon())).unwrap()
}

/// Brownian survival on `(a, b)` by the sine series of the killed heat kernel.
fn survival_series(x: f64, a: f64, b: f64, theta: f64) -> f64 {
    let l = b - a;
    (0..200)
        .map(|j| {
            let k = (2 * j + 1) as f64;
            4.0 / (k * PI) * (k * PI * (x - a) / l).sin() * (-k * k * PI * PI * theta / (2.0 * l * l)).exp()
        })
        .sum()
}

/// The same probability by the method of images.
fn survival_images(x: f64, a: f64, b: f64, theta: f64) -> f64 {
    let n = Normal::standard();
    let l = b - a;
    let st = theta.sqrt();
    let mass = |c: f64| n.cdf((b - c) / st) - n.cdf((a - c) / st);
    (-50..=50)
        .map(|m| {
            let shift = 2.0 * m as f64 * l;
            mass(x + shift) - mass(2.0 * a - x + shift)
        })
        .sum()
}

#[test]
fn survival_series_and_images_agree() {
    for &(x, theta) in &[(0.0, 0.25), (0.0, 0.5), (0.0, 1.0), (0.6, 0.1), (-0.9, 2.0)] {
        let s = survival_series(x, -1.0, 1.0, theta);
        let i = survival_images(x, -1.0, 1.0, theta);
        assert!((s - i).abs() < 1e-10, "x={x} θ={theta}: {s} vs {i}");
    }
    // Frozen from both expansions.
    assert!((survival_series(0.0, -1.0, 1.0, 1.0) - 0.370777429800).abs() < 1e-12);
}

#[test]
fn monte_carlo_survival_matches_series() {
    let d = Domain::interval(-1.0, 1.0).unwrap();
    let c = complete(presets::brownian(1.0), &d);
    let cfg = SimConfig::new(1e-3, 20_000, 11).with_bridge(true);
    let thetas = [0.25, 0.5, 1.0];
    for x in [0.0, 0.5] {
        let est = estimate_survival_nested(&c, &d, &[x], 0.0, &thetas, &cfg).unwrap();
        for e in est {
            let exact = survival_series(x, -1.0, 1.0, e.theta);
            assert!((e.p_hat - exact).abs() <= 4.0 * e.stderr, "x={x} θ={}: {} vs {exact}", e.theta, e.p_hat);
        }
    }
}

#[test]
fn heat_eigenfunction_with_negative_rate() {
    let (horizon, lambda) = (0.5, -1.0);
    let d = Domain::interval(0.0, 1.0).unwrap();
    let c = complete(presets::heat(horizon, lambda), &d);
    let grid = GridSpec::uniform(&d, horizon, 5, 3).unwrap();
    let xi = TerminalData::scalar(|x| (PI * x).sin());
    let u = solve_cauchy(&c, &d, &xi, &grid, &SimConfig::new(1e-3, 20_000, 5).with_bridge(true)).unwrap();
    for (i, &x) in grid.x_nodes.iter().enumerate() {
        for (j, &s) in grid.s_nodes.iter().enumerate() {
            let exact = ((lambda - PI * PI / 2.0) * (horizon - s)).exp() * (PI * x).sin();
            let se = u.stderr(i, j);
            assert!((u.value(i, j) - exact).abs() <= 4.0 * se + 1e-12, "({x}, {s}): {} vs {exact}", u.value(i, j));
        }
    }
}

#[test]
fn finite_differences_converge_at_second_order() {
    let (horizon, lambda) = (0.5, -0.5);
    let d = Domain::interval(0.0, 1.0).unwrap();
    let c = complete(presets::heat(horizon, lambda), &d);
    let xi = TerminalData::scalar(|x| (PI * x).sin());
    let error = |cells: usize| {
        let f = solve_backward_pde_native(&c, &d, &xi, &FdGrid::new(cells - 1, cells)).unwrap();
        let decay = ((lambda - PI * PI / 2.0) * horizon).exp();
        f.grid
            .x_nodes
            .iter()
            .enumerate()
            .map(|(i, &x)| (f.value(i, 0) - decay * (PI * x).sin()).abs())
            .fold(0.0, f64::max)
    };
    let errs: Vec<f64> = [20, 40, 80].iter().map(|&n| error(n)).collect();
    for w in errs.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!(order >= 1.9, "order {order} from {errs:?}");
    }
}

#[test]
fn degenerate_geometric_model_richardson_ratio() {
    let horizon = 1.0;
    let d = Domain::interval(1.0, 2.0).unwrap();
    let c = complete(presets::gbm(horizon, 0.2), &d);
    let xi = TerminalData::scalar(|x| (x - 1.0) * (2.0 - x) * x);
    let on = GridSpec::new(vec![1.25, 1.5, 1.75], vec![0.0, 0.5]).unwrap();
    let solve = |cells: usize| solve_backward_pde(&c, &d, &xi, &FdGrid::new(cells - 1, cells), &on).unwrap();
    let (a, b, e) = (solve(40), solve(80), solve(160));
    for k in 0..a.values().len() {
        let ratio = (a.values()[k] - b.values()[k]) / (b.values()[k] - e.values()[k]);
        assert!((ratio - 4.0).abs() < 0.4, "node {k}: ratio {ratio}");
    }
}

#[test]
fn monte_carlo_matches_finite_differences_on_degenerate_model() {
    let horizon = 1.0;
    let d = Domain::interval(1.0, 2.0).unwrap();
    let c = complete(presets::gbm(horizon, 0.2), &d);
    let xi = TerminalData::scalar(|x| (x - 1.0) * (2.0 - x) * x);
    let grid = GridSpec::uniform(&d, horizon, 5, 2).unwrap();
    let fd = solve_backward_pde(&c, &d, &xi, &FdGrid::new(399, 400), &grid).unwrap();
    let mc = solve_cauchy(&c, &d, &xi, &grid, &SimConfig::new(1e-3, 10_000, 8).with_bridge(true)).unwrap();
    let cmp = bspde::compare_fields(&mc, &fd, &grid).unwrap();
    assert!(cmp.max_abs_z <= 4.0, "max |z| {}", cmp.max_abs_z);
}

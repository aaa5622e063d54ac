//! Command dispatch and artifact output.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use bspde::csvfmt::fmt_sig;
use bspde::exit_stats::{
    boundary_decay_curve, estimate_survival_nested, exit_time_l1_distance_starts,
};
use bspde::model::BoundaryStatus;
use bspde::portfolio::{replicate, solve_hedge};
use bspde::{
    check_boundary_vanishing, compare_fields, complete_diffusion, solve_backward_pde, solve_cauchy,
    solve_nonlocal, CoefficientSet, ProbeGrid,
};

use crate::config::{Command, ModelSpec, RunConfig};
use crate::error::CliError;
use crate::manifest::{self, MANIFEST_NAME};

pub const DIAGNOSTICS_NAME: &str = "diagnostics.txt";

/// An output file held in memory until the run succeeds.
pub type Artifact = (String, Vec<u8>);

fn artifact(name: &str, write: impl FnOnce(&mut Vec<u8>) -> io::Result<()>) -> Result<Artifact, CliError> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok((name.to_string(), buf))
}

fn completed(m: &ModelSpec) -> Result<CoefficientSet, CliError> {
    let probe = ProbeGrid::default_for(&m.domain, m.horizon);
    let c = complete_diffusion(&m.coeffs, &probe)?;
    let boundary = ProbeGrid::boundary(&m.domain, m.horizon, ProbeGrid::DEFAULT_TIME);
    if !boundary.is_empty() {
        let report = check_boundary_vanishing(&c, &m.domain, &boundary)?;
        if report.status == BoundaryStatus::Warn {
            eprintln!("warning: first-order noise does not vanish on the boundary (max |β| = {:?})", report.max_beta);
        }
    }
    Ok(c)
}

fn model(cfg: &RunConfig) -> &ModelSpec {
    cfg.model.as_ref().expect("model section is parsed for this command")
}

fn xi(m: &ModelSpec) -> &bspde::TerminalData {
    m.xi.as_ref().expect("xi is required for this command")
}

/// Runs the command and returns its artifacts without touching the disk.
pub fn execute(cfg: &RunConfig) -> Result<Vec<Artifact>, CliError> {
    let digits = cfg.precision;
    let sim = &cfg.sim;
    match cfg.command {
        Command::Solve => {
            let m = model(cfg);
            let c = completed(m)?;
            let grid = cfg.grid.as_ref().expect("grid");
            let u = solve_cauchy(&c, &m.domain, xi(m), grid, sim)?;
            println!("max |u| {:.6e}, max stderr {:.3e}", u.max_abs(), u.max_stderr());
            Ok(vec![artifact("u.csv", |w| u.write_csv(w, digits))?])
        }
        Command::Nonlocal => {
            let m = model(cfg);
            let k = cfg.kernel.as_ref().expect("kernel");
            let grid = cfg.grid.as_ref().expect("grid");
            let c = completed(m)?;
            let sol = solve_nonlocal(&c, &m.domain, xi(m), &k.kernel, grid, sim, &k.options)?;
            println!(
                "converged in {} iterations, contraction estimate {:.4}",
                sol.report.iterations, sol.report.contraction_estimate
            );
            Ok(vec![
                artifact("u.csv", |w| sol.field.write_csv(w, digits))?,
                artifact("fixed_point.csv", |w| sol.report.write_csv(w, digits))?,
            ])
        }
        Command::OracleCompare => {
            let m = model(cfg);
            let grid = cfg.grid.as_ref().expect("grid");
            let fd = cfg.oracle.as_ref().expect("oracle");
            let c = completed(m)?;
            // The oracle runs first: it is cheap and rejects unsupported models.
            let exact = solve_backward_pde(&c, &m.domain, xi(m), fd, grid)?;
            let mc = solve_cauchy(&c, &m.domain, xi(m), grid, sim)?;
            let cmp = compare_fields(&mc, &exact, grid)?;
            println!("max |z| {:.3}, max |diff| {:.3e}", cmp.max_abs_z, cmp.max_abs_diff);
            let comparison = artifact("comparison.csv", |w| {
                writeln!(w, "x,s,u_mc,stderr,u_fd,diff,z")?;
                let ns = grid.ns();
                for (i, &x) in grid.x_nodes.iter().enumerate() {
                    for (j, &s) in grid.s_nodes.iter().enumerate() {
                        let k = i * ns + j;
                        writeln!(
                            w,
                            "{},{},{},{},{},{},{}",
                            fmt_sig(x, digits),
                            fmt_sig(s, digits),
                            fmt_sig(mc.value(i, j), digits),
                            fmt_sig(mc.stderr(i, j), digits),
                            fmt_sig(exact.value(i, j), digits),
                            fmt_sig(cmp.diff[k], digits),
                            fmt_sig(cmp.z[k], digits)
                        )?;
                    }
                }
                Ok(())
            })?;
            Ok(vec![
                artifact("u.csv", |w| mc.write_csv(w, digits))?,
                artifact("u_fd.csv", |w| exact.write_csv(w, digits))?,
                comparison,
            ])
        }
        Command::ExitStats => {
            let m = model(cfg);
            let e = cfg.exit.as_ref().expect("exit");
            let c = completed(m)?;
            let d = &m.domain;
            let start = d.point_on_ray(e.x);
            let survival = estimate_survival_nested(&c, d, &start, e.s, &e.thetas, sim)?;
            let points: Vec<Vec<f64>> = e.decay_points.iter().map(|&r| d.point_on_ray(r)).collect();
            let curve = boundary_decay_curve(&c, d, e.s, e.decay_theta, &points, sim)?;
            if curve.degenerate {
                eprintln!("warning: every start point survived; the dynamics do not move");
            }
            let mut out = vec![
                artifact("survival.csv", |w| {
                    writeln!(w, "x,theta,p_hat,stderr")?;
                    for est in &survival {
                        writeln!(
                            w,
                            "{},{},{},{}",
                            fmt_sig(e.x, digits),
                            fmt_sig(est.theta, digits),
                            fmt_sig(est.p_hat, digits),
                            fmt_sig(est.stderr, digits)
                        )?;
                    }
                    Ok(())
                })?,
                artifact("decay.csv", |w| curve.write_csv(w, digits))?,
            ];
            if !e.deltas.is_empty() {
                let mut rows = Vec::with_capacity(e.deltas.len());
                for &delta in &e.deltas {
                    let other = d.point_on_ray(e.x + delta);
                    rows.push((delta, exit_time_l1_distance_starts(&c, d, &start, &other, e.s, sim)?));
                }
                out.push(artifact("distance.csv", |w| {
                    writeln!(w, "delta,d_hat,stderr")?;
                    for (delta, r) in &rows {
                        writeln!(w, "{},{},{}", fmt_sig(*delta, digits), fmt_sig(r.d_hat, digits), fmt_sig(r.stderr, digits))?;
                    }
                    Ok(())
                })?);
            }
            Ok(out)
        }
        Command::Replicate => {
            let h = cfg.hedge.as_ref().expect("market");
            let grid = cfg.grid.as_ref().expect("grid");
            let hedge = solve_hedge(&h.market, grid, sim, &h.options)?;
            let report = replicate(&h.market, &hedge.h_field, &hedge.delta_field, &h.replication)?;
            report.write_summary(io::stdout().lock())?;
            println!(
                "field tol {:.3e}, interpolation bound {:.3e}",
                hedge.tol, hedge.interpolation_bound
            );
            Ok(vec![
                artifact("hedge.csv", |w| hedge.h_field.write_csv(w, digits))?,
                artifact("delta.csv", |w| hedge.delta_field.write_csv(w, digits))?,
                artifact("fixed_point.csv", |w| hedge.nonlocal.report.write_csv(w, digits))?,
                artifact("replication.csv", |w| {
                    report.write_csv(&mut *w, digits)?;
                    writeln!(w, "field_tol,{}", fmt_sig(hedge.tol, digits))?;
                    writeln!(w, "interpolation_bound,{}", fmt_sig(hedge.interpolation_bound, digits))
                })?,
                artifact("paths.csv", |w| report.write_paths_csv(w, digits))?,
            ])
        }
    }
}

/// Runs the command, writes its artifacts and the manifest into the output
/// directory, and returns the artifact names.
pub fn run(cfg: &RunConfig) -> Result<Vec<String>, CliError> {
    let artifacts = execute(cfg)?;
    fs::create_dir_all(&cfg.out_dir)?;
    for (name, bytes) in &artifacts {
        fs::write(cfg.out_dir.join(name), bytes)?;
    }
    fs::write(cfg.out_dir.join(MANIFEST_NAME), manifest::render(&cfg.resolved_ini(), &artifacts))?;
    let stale = cfg.out_dir.join(DIAGNOSTICS_NAME);
    if stale.exists() {
        fs::remove_file(stale)?;
    }
    Ok(artifacts.into_iter().map(|(n, _)| n).collect())
}

/// Records a failed run in `dir/diagnostics.txt`.
pub fn write_diagnostics(dir: &Path, command: &str, error: &CliError) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    let mut text = format!(
        "command: {command}\nexit_code: {}\nclass: {:?}\nerror: {error}\n",
        error.exit_code(),
        error.class()
    );
    let mut source = std::error::Error::source(error);
    while let Some(e) = source {
        text.push_str(&format!("caused by: {e}\n"));
        source = e.source();
    }
    fs::write(dir.join(DIAGNOSTICS_NAME), text)
}

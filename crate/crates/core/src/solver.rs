//! Representation-sense solution `u(x, s) = E[γ(T∧τ) ξ(y(T∧τ))]` on a
//! space–time grid, and the martingale check of the discounted process.

use std::io::{self, Write};
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::characteristics::{simulate_segment_with, simulate_until, Scratch, SimConfig, SimError};
use crate::csvfmt::fmt_sig;
use crate::model::{linspace, CoefficientSet, Domain, ModelError, ProbeGrid, BOUNDARY_TOL};

/// Relative tolerance for the boundary-vanishing check on terminal data.
pub const TERMINAL_BOUNDARY_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("terminal data does not vanish on the boundary: |ξ({x:?})| = {value:e}")]
    InvalidTerminal { x: Vec<f64>, value: f64 },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("({x}, {s}) lies outside the grid hull")]
    InterpolationOutOfRange { x: f64, s: f64 },
    #[error("checkpoint {t} outside [{s}, {horizon}]")]
    InvalidCheckpoint { t: f64, s: f64, horizon: f64 },
}

/// Space–time nodes. For a spherical layer the space coordinate is the radius
/// along the first axis.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub x_nodes: Vec<f64>,
    pub s_nodes: Vec<f64>,
}

fn strictly_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[0] < w[1]) && v.iter().all(|x| x.is_finite())
}

impl GridSpec {
    pub const DEFAULT_X: usize = 65;
    pub const DEFAULT_S: usize = 33;

    pub fn new(x_nodes: Vec<f64>, s_nodes: Vec<f64>) -> Result<Self, SolverError> {
        if x_nodes.len() < 2 || s_nodes.is_empty() {
            return Err(SolverError::InvalidGrid("need at least two x nodes and one s node".into()));
        }
        if !strictly_increasing(&x_nodes) || !strictly_increasing(&s_nodes) {
            return Err(SolverError::InvalidGrid("nodes must be strictly increasing".into()));
        }
        Ok(Self { x_nodes, s_nodes })
    }

    /// `nx` equispaced space nodes on the closed domain, `ns` times on `[0, horizon]`.
    pub fn uniform(domain: &Domain, horizon: f64, nx: usize, ns: usize) -> Result<Self, SolverError> {
        Self::new(linspace(domain.r1(), domain.r2(), nx), linspace(0.0, horizon, ns.max(1)))
    }

    /// Checks that the boundary nodes are present and times stay in `[0, T]`.
    pub fn check_against(&self, domain: &Domain, horizon: f64) -> Result<(), SolverError> {
        let (first, last) = (self.x_nodes[0], *self.x_nodes.last().unwrap());
        if first != domain.r1() || last != domain.r2() {
            return Err(SolverError::InvalidGrid(format!(
                "x nodes must start at {} and end at {}",
                domain.r1(),
                domain.r2()
            )));
        }
        let (s0, s1) = (self.s_nodes[0], *self.s_nodes.last().unwrap());
        if s0 < 0.0 || s1 > horizon {
            return Err(SolverError::InvalidGrid(format!("s nodes must lie in [0, {horizon}]")));
        }
        Ok(())
    }

    pub fn nx(&self) -> usize {
        self.x_nodes.len()
    }

    pub fn ns(&self) -> usize {
        self.s_nodes.len()
    }
}

type XiFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Terminal function `ξ`, expected to vanish on the boundary.
#[derive(Clone)]
pub struct TerminalData {
    xi: XiFn,
}

impl std::fmt::Debug for TerminalData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("TerminalData")
    }
}

impl TerminalData {
    pub fn new(xi: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self { xi: Arc::new(xi) }
    }

    pub fn scalar(xi: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self::new(move |x| xi(x[0]))
    }

    pub fn zero() -> Self {
        Self::new(|_| 0.0)
    }

    /// Piecewise-linear interpolant of nodal values in the domain's radial coordinate.
    pub fn from_nodes(domain: &Domain, nodes: Vec<f64>, values: Vec<f64>) -> Self {
        assert_eq!(nodes.len(), values.len());
        let domain = *domain;
        Self::new(move |x| interp_linear(&nodes, &values, domain.radial(x)))
    }

    /// `α ξ₁ + ξ₂`.
    pub fn combine(alpha: f64, a: &TerminalData, b: &TerminalData) -> Self {
        let (fa, fb) = (a.xi.clone(), b.xi.clone());
        Self::new(move |x| alpha * fa(x) + fb(x))
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.xi)(x)
    }

    /// Maximum of `|ξ|` over the grid's space nodes.
    pub fn sup_norm(&self, domain: &Domain, grid: &GridSpec) -> f64 {
        grid.x_nodes
            .iter()
            .map(|&c| self.eval(&domain.point_on_ray(c)).abs())
            .fold(0.0, f64::max)
    }

    /// Rejects data that does not vanish on the boundary.
    pub fn check_boundary(&self, domain: &Domain, grid: &GridSpec) -> Result<(), SolverError> {
        let scale = self.sup_norm(domain, grid).max(1.0);
        let probe = ProbeGrid::boundary(domain, 1.0, 1);
        for x in &probe.points {
            let value = self.eval(x);
            if !(value.abs() <= TERMINAL_BOUNDARY_TOL * scale) {
                return Err(SolverError::InvalidTerminal { x: x.clone(), value });
            }
        }
        Ok(())
    }
}

pub(crate) fn interp_linear(nodes: &[f64], values: &[f64], x: f64) -> f64 {
    let n = nodes.len();
    if x <= nodes[0] {
        return values[0];
    }
    if x >= nodes[n - 1] {
        return values[n - 1];
    }
    let i = nodes.partition_point(|&v| v <= x).clamp(1, n - 1);
    let (x0, x1) = (nodes[i - 1], nodes[i]);
    let w = (x - x0) / (x1 - x0);
    values[i - 1] * (1.0 - w) + values[i] * w
}

/// Bracketing index and weight for `v` in `nodes` (`v` inside the hull).
fn bracket(nodes: &[f64], v: f64) -> (usize, usize, f64) {
    let n = nodes.len();
    if n == 1 || v <= nodes[0] {
        return (0, 0, 0.0);
    }
    if v >= nodes[n - 1] {
        return (n - 1, n - 1, 0.0);
    }
    let i = nodes.partition_point(|&x| x <= v).clamp(1, n - 1);
    let w = (v - nodes[i - 1]) / (nodes[i] - nodes[i - 1]);
    (i - 1, i, w)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldMeta {
    /// Zero for deterministic (finite-difference) fields.
    pub path_count: usize,
    pub base_seed: u64,
    pub step_h: f64,
    pub c_lambda: f64,
}

/// `u` sampled on a grid, with Monte Carlo standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionField {
    pub grid: GridSpec,
    values: Vec<f64>,
    stderr: Vec<f64>,
    pub meta: FieldMeta,
}

impl SolutionField {
    pub fn from_parts(grid: GridSpec, values: Vec<f64>, stderr: Vec<f64>, meta: FieldMeta) -> Self {
        assert_eq!(values.len(), grid.nx() * grid.ns());
        assert_eq!(stderr.len(), values.len());
        Self { grid, values, stderr, meta }
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        i * self.grid.ns() + j
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[self.idx(i, j)]
    }

    pub fn stderr(&self, i: usize, j: usize) -> f64 {
        self.stderr[self.idx(i, j)]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn stderrs(&self) -> &[f64] {
        &self.stderr
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn max_stderr(&self) -> f64 {
        self.stderr.iter().fold(0.0f64, |m, v| m.max(*v))
    }

    /// Values over the space nodes at time index `j`.
    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.grid.nx()).map(|i| self.value(i, j)).collect()
    }

    pub fn covers(&self, x: f64, s: f64) -> bool {
        let g = &self.grid;
        let tol = 1e-12;
        x >= g.x_nodes[0] - tol
            && x <= g.x_nodes[g.nx() - 1] + tol
            && s >= g.s_nodes[0] - tol
            && s <= g.s_nodes[g.ns() - 1] + tol
    }

    fn bilinear(&self, data: &[f64], x: f64, s: f64) -> Result<f64, SolverError> {
        if !self.covers(x, s) {
            return Err(SolverError::InterpolationOutOfRange { x, s });
        }
        let (i0, i1, wx) = bracket(&self.grid.x_nodes, x);
        let (j0, j1, ws) = bracket(&self.grid.s_nodes, s);
        let ns = self.grid.ns();
        let at = |i: usize, j: usize| data[i * ns + j];
        let lo = at(i0, j0) * (1.0 - ws) + at(i0, j1) * ws;
        let hi = at(i1, j0) * (1.0 - ws) + at(i1, j1) * ws;
        Ok(lo * (1.0 - wx) + hi * wx)
    }

    /// Bilinear interpolation in `(x, s)`.
    pub fn interpolate(&self, x: f64, s: f64) -> Result<f64, SolverError> {
        self.bilinear(&self.values, x, s)
    }

    pub fn interpolate_stderr(&self, x: f64, s: f64) -> Result<f64, SolverError> {
        self.bilinear(&self.stderr, x, s)
    }

    /// Values at every time node, linearly interpolated in space at `x`.
    pub fn time_slice_at(&self, x: f64) -> Result<Vec<f64>, SolverError> {
        self.grid.s_nodes.iter().map(|&s| self.interpolate(x, s)).collect()
    }

    /// Space column at an arbitrary time `s`, linear in time between nodes.
    pub fn column_at_time(&self, s: f64) -> Result<Vec<f64>, SolverError> {
        self.grid.x_nodes.iter().map(|&x| self.interpolate(x, s)).collect()
    }

    /// Resamples onto another grid (values and standard errors).
    pub fn resample(&self, on: &GridSpec) -> Result<SolutionField, SolverError> {
        let mut values = Vec::with_capacity(on.nx() * on.ns());
        let mut stderr = Vec::with_capacity(values.capacity());
        for &x in &on.x_nodes {
            for &s in &on.s_nodes {
                values.push(self.interpolate(x, s)?);
                stderr.push(self.interpolate_stderr(x, s)?);
            }
        }
        Ok(SolutionField::from_parts(on.clone(), values, stderr, self.meta))
    }

    /// `self + c(x)` applied to every time column; standard errors unchanged.
    pub fn shifted_by(&self, shift: impl Fn(f64) -> f64) -> SolutionField {
        let mut out = self.clone();
        let ns = self.grid.ns();
        for (i, &x) in self.grid.x_nodes.iter().enumerate() {
            let c = shift(x);
            for j in 0..ns {
                out.values[i * ns + j] += c;
            }
        }
        out
    }

    /// Writes the `x,s,u,stderr` table, one row per node, x-major.
    pub fn write_csv<W: Write>(&self, mut w: W, digits: usize) -> io::Result<()> {
        writeln!(w, "x,s,u,stderr")?;
        for (i, &x) in self.grid.x_nodes.iter().enumerate() {
            for (j, &s) in self.grid.s_nodes.iter().enumerate() {
                writeln!(
                    w,
                    "{},{},{},{}",
                    fmt_sig(x, digits),
                    fmt_sig(s, digits),
                    fmt_sig(self.value(i, j), digits),
                    fmt_sig(self.stderr(i, j), digits)
                )?;
            }
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf, 12).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }
}

/// `C_λ = exp(T · sup max(0, λ))` over the default probe grid.
pub fn c_lambda(coeffs: &CoefficientSet, domain: &Domain) -> f64 {
    let probe = ProbeGrid::default_for(domain, coeffs.horizon());
    let mut sup = 0.0f64;
    for x in &probe.points {
        for &t in &probe.times {
            sup = sup.max(coeffs.eval_rate(x, t));
        }
    }
    (coeffs.horizon() * sup).exp()
}

/// Single-pass mean and variance.
#[derive(Debug, Clone, Copy, Default)]
pub struct Welford {
    count: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn push(&mut self, v: f64) {
        self.count += 1;
        let delta = v - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (v - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn sample_variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.m2 / (self.count - 1) as f64).max(0.0)
        }
    }

    /// Standard error of the mean.
    pub fn stderr(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.sample_variance() / self.count as f64).sqrt()
        }
    }
}

/// Survivors of one grid node, in path-index order.
#[derive(Debug, Clone, Default)]
pub(crate) struct NodeSample {
    indices: Vec<u32>,
    weights: Vec<f64>,
    states: Vec<f64>,
}

impl NodeSample {
    fn simulate(
        coeffs: &CoefficientSet,
        domain: &Domain,
        x: &[f64],
        s: f64,
        cfg: &SimConfig,
    ) -> Result<Self, SolverError> {
        let n = coeffs.dim();
        let horizon = coeffs.horizon();
        const CHUNK: u64 = 1024;
        let m = cfg.path_count as u64;
        let chunks: Vec<Result<NodeSample, SimError>> = (0..m.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut sc = Scratch::new(coeffs);
                let mut part = NodeSample::default();
                for k in c * CHUNK..((c + 1) * CHUNK).min(m) {
                    let p = simulate_segment_with(coeffs, domain, x, s, horizon, cfg, k, 0, &mut sc)?;
                    if !p.exited {
                        part.indices.push(k as u32);
                        part.weights.push(p.discount);
                        part.states.extend_from_slice(&p.y_exit);
                    }
                }
                Ok(part)
            })
            .collect();
        let mut out = NodeSample::default();
        for part in chunks {
            let part = part?;
            out.indices.extend(part.indices);
            out.weights.extend(part.weights);
            out.states.extend(part.states);
        }
        debug_assert_eq!(out.states.len(), out.indices.len() * n);
        Ok(out)
    }

    /// Welford statistics of `γ ξ(y)` over all `m` paths (exited paths give 0).
    fn statistics(&self, xi: &TerminalData, n: usize, m: usize) -> Welford {
        let mut acc = Welford::default();
        let mut next = 0;
        for k in 0..m as u32 {
            if next < self.indices.len() && self.indices[next] == k {
                let y = &self.states[next * n..(next + 1) * n];
                acc.push(self.weights[next] * xi.eval(y));
                next += 1;
            } else {
                acc.push(0.0);
            }
        }
        acc
    }
}

#[derive(Debug, Clone)]
enum NodeKind {
    Boundary,
    Terminal,
    Paths(NodeSample),
    Skipped,
}

/// Simulated characteristics for every grid node, kept so that the solution
/// operator can be applied to many terminal functions under common random
/// numbers without re-simulating.
#[derive(Debug, Clone)]
pub struct CauchyEnsemble {
    grid: GridSpec,
    domain: Domain,
    n: usize,
    nodes: Vec<NodeKind>,
    meta: FieldMeta,
}

impl CauchyEnsemble {
    /// Simulates the nodes whose time index satisfies `keep_time`; the others
    /// evaluate to zero.
    pub fn simulate_where(
        coeffs: &CoefficientSet,
        domain: &Domain,
        grid: &GridSpec,
        cfg: &SimConfig,
        keep_time: impl Fn(f64) -> bool,
    ) -> Result<Self, SolverError> {
        grid.check_against(domain, coeffs.horizon())?;
        cfg.validate(coeffs.horizon())?;
        if !coeffs.is_completed() {
            return Err(SimError::NotCompleted.into());
        }
        let horizon = coeffs.horizon();
        let mut nodes = Vec::with_capacity(grid.nx() * grid.ns());
        for &xc in &grid.x_nodes {
            let x = domain.point_on_ray(xc);
            for &s in &grid.s_nodes {
                let kind = if domain.distance_to_boundary(&x) <= BOUNDARY_TOL {
                    NodeKind::Boundary
                } else if s >= horizon {
                    NodeKind::Terminal
                } else if keep_time(s) {
                    NodeKind::Paths(NodeSample::simulate(coeffs, domain, &x, s, cfg)?)
                } else {
                    NodeKind::Skipped
                };
                nodes.push(kind);
            }
        }
        let meta = FieldMeta {
            path_count: cfg.path_count,
            base_seed: cfg.base_seed,
            step_h: cfg.step_h,
            c_lambda: c_lambda(coeffs, domain),
        };
        Ok(Self { grid: grid.clone(), domain: *domain, n: coeffs.dim(), nodes, meta })
    }

    pub fn simulate(
        coeffs: &CoefficientSet,
        domain: &Domain,
        grid: &GridSpec,
        cfg: &SimConfig,
    ) -> Result<Self, SolverError> {
        Self::simulate_where(coeffs, domain, grid, cfg, |_| true)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// The solution field for terminal data `xi`.
    pub fn evaluate(&self, xi: &TerminalData) -> SolutionField {
        let m = self.meta.path_count;
        let stats: Vec<(f64, f64)> = self
            .nodes
            .par_iter()
            .enumerate()
            .map(|(k, node)| match node {
                NodeKind::Boundary | NodeKind::Skipped => (0.0, 0.0),
                NodeKind::Terminal => {
                    let xc = self.grid.x_nodes[k / self.grid.ns()];
                    (xi.eval(&self.domain.point_on_ray(xc)), 0.0)
                }
                NodeKind::Paths(sample) => {
                    let w = sample.statistics(xi, self.n, m);
                    (w.mean(), w.stderr())
                }
            })
            .collect();
        let (values, stderr) = stats.into_iter().unzip();
        SolutionField::from_parts(self.grid.clone(), values, stderr, self.meta)
    }
}

/// Solves the terminal problem `u(·, T) = ξ`, `u = 0` on the boundary.
/// Path `k` uses the same random stream at every grid node.
pub fn solve_cauchy(
    coeffs: &CoefficientSet,
    domain: &Domain,
    xi: &TerminalData,
    grid: &GridSpec,
    cfg: &SimConfig,
) -> Result<SolutionField, SolverError> {
    grid.check_against(domain, coeffs.horizon())?;
    cfg.validate(coeffs.horizon())?;
    xi.check_boundary(domain, grid)?;
    if !coeffs.is_completed() {
        return Err(SimError::NotCompleted.into());
    }
    let horizon = coeffs.horizon();
    let n = coeffs.dim();
    let ns = grid.ns();
    let mut values = vec![0.0; grid.nx() * ns];
    let mut stderr = vec![0.0; values.len()];
    for (i, &xc) in grid.x_nodes.iter().enumerate() {
        let x = domain.point_on_ray(xc);
        if domain.distance_to_boundary(&x) <= BOUNDARY_TOL {
            continue;
        }
        for (j, &s) in grid.s_nodes.iter().enumerate() {
            if s >= horizon {
                values[i * ns + j] = xi.eval(&x);
                continue;
            }
            let sample = NodeSample::simulate(coeffs, domain, &x, s, cfg)?;
            let w = sample.statistics(xi, n, cfg.path_count);
            values[i * ns + j] = w.mean();
            stderr[i * ns + j] = w.stderr();
        }
    }
    let meta = FieldMeta {
        path_count: cfg.path_count,
        base_seed: cfg.base_seed,
        step_h: cfg.step_h,
        c_lambda: c_lambda(coeffs, domain),
    };
    Ok(SolutionField::from_parts(grid.clone(), values, stderr, meta))
}

/// One checkpoint of [`martingale_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointDrift {
    pub t: f64,
    /// Estimate of `E[γ(t∧τ) u(y(t∧τ), t∧τ)]`.
    pub estimate: f64,
    pub estimate_stderr: f64,
    /// `estimate − u(x, s)`.
    pub deviation: f64,
    /// Standard error of the deviation, including the field's own noise.
    pub combined_stderr: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleReport {
    pub u_start: f64,
    pub checkpoints: Vec<CheckpointDrift>,
    pub max_abs_drift: f64,
    pub max_abs_z: f64,
}

/// Estimates the drift of `γ(t∧τ) u(y(t∧τ), t∧τ)` between `s` and each
/// checkpoint, with `u` interpolated from `field`.
pub fn martingale_check(
    coeffs: &CoefficientSet,
    domain: &Domain,
    x: &[f64],
    s: f64,
    checkpoints: &[f64],
    field: &SolutionField,
    cfg: &SimConfig,
) -> Result<MartingaleReport, SolverError> {
    let horizon = coeffs.horizon();
    let xr = domain.radial(x);
    let u_start = field.interpolate(xr, s)?;
    let se_start = field.interpolate_stderr(xr, s)?;
    let field_noise = se_start + field.max_stderr();
    let mut out = Vec::with_capacity(checkpoints.len());
    for &t in checkpoints {
        if t < s || t > horizon {
            return Err(SolverError::InvalidCheckpoint { t, s, horizon });
        }
        let paths = simulate_until(coeffs, domain, x, s, t, cfg)?;
        let mut acc = Welford::default();
        for p in &paths {
            let u = field.interpolate(domain.radial(&p.y_exit), p.tau_t)?;
            acc.push(p.discount * u);
        }
        let deviation = acc.mean() - u_start;
        let combined = if t == s { 0.0 } else { (acc.stderr().powi(2) + field_noise.powi(2)).sqrt() };
        let z = if combined > 0.0 { deviation / combined } else { 0.0 };
        out.push(CheckpointDrift {
            t,
            estimate: acc.mean(),
            estimate_stderr: acc.stderr(),
            deviation,
            combined_stderr: combined,
            z,
        });
    }
    let max_abs_drift = out.iter().fold(0.0f64, |m, c| m.max(c.deviation.abs()));
    let max_abs_z = out.iter().fold(0.0f64, |m, c| m.max(c.z.abs()));
    Ok(MartingaleReport { u_start, checkpoints: out, max_abs_drift, max_abs_z })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{complete_diffusion, presets};
    use std::f64::consts::PI;

    fn heat(horizon: f64, lambda: f64) -> (CoefficientSet, Domain) {
        let d = Domain::interval(0.0, 1.0).unwrap();
        let c = presets::heat(horizon, lambda);
        (complete_diffusion(&c, &ProbeGrid::default_for(&d, horizon)).unwrap(), d)
    }

    fn sine() -> TerminalData {
        TerminalData::scalar(|x| (PI * x).sin())
    }

    #[test]
    fn zero_terminal_gives_zero_field() {
        let (c, d) = heat(0.5, 0.0);
        let g = GridSpec::uniform(&d, 0.5, 5, 3).unwrap();
        let u = solve_cauchy(&c, &d, &TerminalData::zero(), &g, &SimConfig::new(0.01, 100, 1)).unwrap();
        assert!(u.values().iter().all(|&v| v == 0.0));
        assert!(u.stderrs().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn boundary_and_terminal_nodes_are_exact() {
        let (c, d) = heat(0.5, 0.0);
        let g = GridSpec::uniform(&d, 0.5, 5, 3).unwrap();
        let u = solve_cauchy(&c, &d, &sine(), &g, &SimConfig::new(0.01, 100, 1)).unwrap();
        for j in 0..3 {
            assert_eq!(u.value(0, j), 0.0);
            assert_eq!(u.value(4, j), 0.0);
        }
        for (i, &x) in g.x_nodes.iter().enumerate().take(4).skip(1) {
            assert_eq!(u.value(i, 2), (PI * x).sin());
        }
    }

    #[test]
    fn rejects_terminal_data_not_vanishing_on_boundary() {
        let (c, d) = heat(0.5, 0.0);
        let g = GridSpec::uniform(&d, 0.5, 5, 3).unwrap();
        let err = solve_cauchy(&c, &d, &TerminalData::scalar(|x| x), &g, &SimConfig::new(0.01, 10, 1));
        assert!(matches!(err, Err(SolverError::InvalidTerminal { .. })));
    }

    #[test]
    fn heat_eigenfunction_with_rate() {
        // u = exp((λ − π²/2)(T − s)) sin(πx) for A = ½∂² + λ.
        for lambda in [0.0, -1.0] {
            let (c, d) = heat(0.5, lambda);
            let g = GridSpec::new(vec![0.0, 0.25, 0.5, 0.75, 1.0], vec![0.0, 0.5]).unwrap();
            let cfg = SimConfig::new(1e-3, 20_000, 17).with_bridge(true);
            let u = solve_cauchy(&c, &d, &sine(), &g, &cfg).unwrap();
            for i in 1..4 {
                let exact = ((lambda - PI * PI / 2.0) * 0.5).exp() * (PI * g.x_nodes[i]).sin();
                let z = (u.value(i, 0) - exact) / u.stderr(i, 0);
                assert!(z.abs() < 4.0, "lambda={lambda} i={i} z={z}");
            }
        }
    }

    #[test]
    fn interpolation_and_resampling() {
        let g = GridSpec::new(vec![0.0, 1.0], vec![0.0, 1.0]).unwrap();
        let meta = FieldMeta { path_count: 0, base_seed: 0, step_h: 0.0, c_lambda: 1.0 };
        let f = SolutionField::from_parts(g, vec![0.0, 1.0, 2.0, 3.0], vec![0.0; 4], meta);
        assert_eq!(f.interpolate(0.5, 0.5).unwrap(), 1.5);
        assert_eq!(f.interpolate(1.0, 0.0).unwrap(), 2.0);
        assert!(matches!(f.interpolate(1.5, 0.0), Err(SolverError::InterpolationOutOfRange { .. })));
        let r = f.resample(&GridSpec::new(vec![0.0, 0.5, 1.0], vec![0.0, 1.0]).unwrap()).unwrap();
        assert_eq!(r.column(1), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn csv_schema() {
        let (c, d) = heat(0.5, 0.0);
        let g = GridSpec::uniform(&d, 0.5, 3, 2).unwrap();
        let u = solve_cauchy(&c, &d, &sine(), &g, &SimConfig::new(0.01, 50, 1)).unwrap();
        let csv = u.to_csv_string();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "x,s,u,stderr");
        assert_eq!(lines.len(), 1 + 6);
        assert_eq!(lines[1], "0,0,0,0");
        assert_eq!(lines[4], "0.5,0.5,1,0");
    }

    #[test]
    fn ensemble_matches_direct_solve() {
        let (c, d) = heat(0.5, -0.2);
        let g = GridSpec::uniform(&d, 0.5, 6, 3).unwrap();
        let cfg = SimConfig::new(0.01, 500, 8).with_bridge(true);
        let direct = solve_cauchy(&c, &d, &sine(), &g, &cfg).unwrap();
        let ens = CauchyEnsemble::simulate(&c, &d, &g, &cfg).unwrap();
        assert_eq!(ens.evaluate(&sine()), direct);
    }

    #[test]
    fn martingale_at_start_and_terminal() {
        let (c, d) = heat(0.5, 0.0);
        let g = GridSpec::uniform(&d, 0.5, 17, 9).unwrap();
        let cfg = SimConfig::new(1e-3, 2000, 5);
        let u = solve_cauchy(&c, &d, &sine(), &g, &cfg).unwrap();
        let r = martingale_check(&c, &d, &[0.5], 0.0, &[0.0, 0.5], &u, &cfg).unwrap();
        assert_eq!(r.checkpoints[0].deviation, 0.0);
        // Same seed: only the spatial interpolation of ξ separates the two.
        let interp_bound = (1.0f64 / 16.0).powi(2) / 8.0 * PI * PI;
        assert!(r.checkpoints[1].deviation.abs() <= interp_bound, "{:?}", r.checkpoints[1]);
        assert!(matches!(
            martingale_check(&c, &d, &[0.5], 0.1, &[0.05], &u, &cfg),
            Err(SolverError::InvalidCheckpoint { .. })
        ));
    }

    #[test]
    fn welford_matches_two_pass() {
        let data = [1.0, 4.0, 2.5, -3.0, 7.25];
        let mut w = Welford::default();
        data.iter().for_each(|&v| w.push(v));
        let mean = data.iter().sum::<f64>() / 5.0;
        let var = data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert!((w.mean() - mean).abs() < 1e-14);
        assert!((w.sample_variance() - var).abs() < 1e-12);
    }
}

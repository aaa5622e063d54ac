//! Run configuration: an INI file plus command-line overrides.
//!
//! Numbers may be written as literals or as constant expressions over the
//! `[constants]` section. Function-valued keys are expressions in `x` (or
//! `x1`..`xn`) and `t`; space-time kernels use `t`, `y` and `x`.

use std::collections::BTreeSet;
use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;

use bspde::characteristics::SimConfig;
use bspde::expr::{parse_expr, Bindings, CompiledExpr};
use bspde::model::{presets, FieldFn, ScalarFn};
use bspde::nonlocal::NonlocalOptions;
use bspde::pde_oracle::Scheme;
use bspde::portfolio::MarketSpec;
use bspde::{CoefficientSet, Domain, FdGrid, GammaKernel, GridSpec, TerminalData};
use ini::Ini;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Solve,
    Nonlocal,
    OracleCompare,
    ExitStats,
    Replicate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::Solve => "solve",
            Self::Nonlocal => "nonlocal",
            Self::OracleCompare => "oracle-compare",
            Self::ExitStats => "exit-stats",
            Self::Replicate => "replicate",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

const KNOWN_SECTIONS: [&str; 11] =
    ["constants", "model", "grid", "sim", "kernel", "oracle", "exit", "market", "hedge", "output", "run"];

/// Values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Vars {
    /// `(x, t)` in the state dimension.
    Space,
    /// `t` only.
    Time,
    /// A price `x`, one-dimensional.
    Price,
    /// `(t, y, x)`, radial.
    SpaceTime,
}

#[derive(Debug, Clone)]
struct ExprEntry {
    section: String,
    key: String,
    expr: CompiledExpr,
    vars: Vars,
}

/// The model section, ready for the library.
#[derive(Clone)]
pub struct ModelSpec {
    pub domain: Domain,
    pub horizon: f64,
    /// Not yet completed with the auxiliary diffusion.
    pub coeffs: CoefficientSet,
    pub xi: Option<TerminalData>,
}

#[derive(Clone)]
pub struct KernelSpec {
    pub kernel: GammaKernel,
    pub options: NonlocalOptions,
}

#[derive(Debug, Clone)]
pub struct ExitSpec {
    pub x: f64,
    pub s: f64,
    pub thetas: Vec<f64>,
    pub decay_theta: f64,
    pub decay_points: Vec<f64>,
    pub deltas: Vec<f64>,
}

#[derive(Clone)]
pub struct HedgeSpec {
    pub market: MarketSpec,
    pub options: NonlocalOptions,
    /// Settings for the replication paths.
    pub replication: SimConfig,
}

#[derive(Clone)]
pub struct RunConfig {
    pub command: Command,
    pub model: Option<ModelSpec>,
    pub grid: Option<GridSpec>,
    pub sim: SimConfig,
    pub kernel: Option<KernelSpec>,
    pub oracle: Option<FdGrid>,
    pub exit: Option<ExitSpec>,
    pub hedge: Option<HedgeSpec>,
    pub out_dir: PathBuf,
    pub precision: usize,
    resolved: Vec<(String, Vec<(String, String)>)>,
}

impl RunConfig {
    pub fn from_str(command: Command, text: &str, overrides: &Overrides) -> Result<Self, CliError> {
        let ini = Ini::load_from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        Parser::new(&ini).parse(command, overrides)
    }

    pub fn from_file(command: Command, path: &std::path::Path, overrides: &Overrides) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_str(command, &text, overrides)
    }

    /// The configuration with every default filled in, as INI text.
    pub fn resolved_ini(&self) -> String {
        let mut s = String::new();
        for (section, entries) in &self.resolved {
            s.push_str(&format!("[{section}]\n"));
            for (k, v) in entries {
                s.push_str(&format!("{k} = {v}\n"));
            }
            s.push('\n');
        }
        s
    }
}

struct Parser<'a> {
    ini: &'a Ini,
    bindings: Bindings,
    used: BTreeSet<(String, String)>,
    resolved: Vec<(String, Vec<(String, String)>)>,
    exprs: Vec<ExprEntry>,
}

fn err<T>(msg: impl Into<String>) -> Result<T, CliError> {
    Err(CliError::Config(msg.into()))
}

impl<'a> Parser<'a> {
    fn new(ini: &'a Ini) -> Self {
        Self { ini, bindings: Bindings::default(), used: BTreeSet::new(), resolved: Vec::new(), exprs: Vec::new() }
    }

    fn raw(&mut self, section: &str, key: &str) -> Option<String> {
        let v = self.ini.section(Some(section))?.get(key)?.trim().to_string();
        self.used.insert((section.to_string(), key.to_string()));
        Some(v)
    }

    fn record(&mut self, section: &str, key: &str, value: String) {
        match self.resolved.iter_mut().find(|(s, _)| s == section) {
            Some((_, entries)) => match entries.iter_mut().find(|(k, _)| k == key) {
                Some(e) => e.1 = value,
                None => entries.push((key.to_string(), value)),
            },
            None => self.resolved.push((section.to_string(), vec![(key.to_string(), value)])),
        }
    }

    fn keys(&self, section: &str) -> Vec<String> {
        self.ini.section(Some(section)).map(|p| p.iter().map(|(k, _)| k.to_string()).collect()).unwrap_or_default()
    }

    fn number(&self, section: &str, key: &str, text: &str) -> Result<f64, CliError> {
        if let Ok(v) = text.parse::<f64>() {
            return Ok(v);
        }
        let expr = parse_expr(text)
            .and_then(|e| e.bind(&self.bindings))
            .map_err(|source| CliError::Expr { section: section.into(), key: key.into(), source })?;
        let v = expr.eval_raw(&[], f64::NAN);
        if expr.dimension_used() > 0 || !v.is_finite() {
            return err(format!("[{section}] {key}: `{text}` is not a finite constant"));
        }
        Ok(v)
    }

    fn opt_f64(&mut self, section: &str, key: &str) -> Result<Option<f64>, CliError> {
        match self.raw(section, key) {
            Some(text) => {
                let v = self.number(section, key, &text)?;
                self.record(section, key, text);
                Ok(Some(v))
            }
            None => Ok(None),
        }
    }

    fn f64_or(&mut self, section: &str, key: &str, default: f64) -> Result<f64, CliError> {
        match self.opt_f64(section, key)? {
            Some(v) => Ok(v),
            None => {
                self.record(section, key, default.to_string());
                Ok(default)
            }
        }
    }

    fn f64_req(&mut self, section: &str, key: &str) -> Result<f64, CliError> {
        match self.opt_f64(section, key)? {
            Some(v) => Ok(v),
            None => err(format!("[{section}] {key} is required")),
        }
    }

    fn count_or(&mut self, section: &str, key: &str, default: u64) -> Result<u64, CliError> {
        match self.raw(section, key) {
            Some(text) => {
                let v = match text.parse::<u64>() {
                    Ok(v) => v,
                    Err(_) => {
                        let f = self.number(section, key, &text)?;
                        if !(f >= 0.0 && f.fract() == 0.0 && f <= u64::MAX as f64) {
                            return err(format!("[{section}] {key}: `{text}` is not a nonnegative integer"));
                        }
                        f as u64
                    }
                };
                self.record(section, key, v.to_string());
                Ok(v)
            }
            None => {
                self.record(section, key, default.to_string());
                Ok(default)
            }
        }
    }

    fn bool_or(&mut self, section: &str, key: &str, default: bool) -> Result<bool, CliError> {
        let v = match self.raw(section, key) {
            Some(text) => match text.to_ascii_lowercase().as_str() {
                "true" | "yes" | "on" | "1" => true,
                "false" | "no" | "off" | "0" => false,
                _ => return err(format!("[{section}] {key}: `{text}` is not a boolean")),
            },
            None => default,
        };
        self.record(section, key, v.to_string());
        Ok(v)
    }

    fn word_or(&mut self, section: &str, key: &str, default: &str, allowed: &[&str]) -> Result<String, CliError> {
        let v = self.raw(section, key).unwrap_or_else(|| default.to_string());
        if !allowed.contains(&v.as_str()) {
            return err(format!("[{section}] {key}: `{v}` is not one of {}", allowed.join(", ")));
        }
        self.record(section, key, v.clone());
        Ok(v)
    }

    fn list(&mut self, section: &str, key: &str) -> Result<Option<Vec<f64>>, CliError> {
        let Some(text) = self.raw(section, key) else { return Ok(None) };
        let values = text
            .split(',')
            .map(|p| self.number(section, key, p.trim()))
            .collect::<Result<Vec<_>, _>>()?;
        self.record(section, key, text);
        Ok(Some(values))
    }

    fn expr(&mut self, section: &str, key: &str, vars: Vars) -> Result<Option<CompiledExpr>, CliError> {
        let Some(text) = self.raw(section, key) else { return Ok(None) };
        let wrap = |source| CliError::Expr { section: section.into(), key: key.into(), source };
        let parsed = parse_expr(&text).map_err(wrap)?;
        let expr = match vars {
            Vars::SpaceTime => parsed.bind_vars(&self.bindings, &["y", "x"]),
            _ => parsed.bind(&self.bindings),
        }
        .map_err(wrap)?;
        self.record(section, key, text);
        self.exprs.push(ExprEntry { section: section.into(), key: key.into(), expr: expr.clone(), vars });
        Ok(Some(expr))
    }

    fn constants(&mut self) -> Result<(), CliError> {
        for key in self.keys("constants") {
            let text = self.raw("constants", &key).unwrap_or_default();
            let v = self.number("constants", &key, &text)?;
            if matches!(key.as_str(), "x" | "t" | "y") || key.starts_with('x') && key[1..].parse::<usize>().is_ok() {
                return err(format!("[constants] `{key}` is a variable name"));
            }
            self.bindings.insert(&key, v);
            self.record("constants", &key, text);
        }
        Ok(())
    }

    fn parse(mut self, command: Command, overrides: &Overrides) -> Result<RunConfig, CliError> {
        for (section, _) in self.ini.iter() {
            match section {
                Some(s) if !KNOWN_SECTIONS.contains(&s) => return err(format!("unknown section [{s}]")),
                None if !self.ini.general_section().is_empty() => {
                    return err("keys before the first section header");
                }
                _ => {}
            }
        }
        self.record("run", "command", command.name().to_string());
        self.constants()?;

        let mut checked = vec!["constants", "sim", "output"];
        let model = match command {
            Command::Replicate => None,
            _ => {
                checked.push("model");
                Some(self.model(command != Command::ExitStats)?)
            }
        };
        let horizon = match (&model, command) {
            (Some(m), _) => m.horizon,
            _ => self.f64_req("market", "horizon")?,
        };
        let mut sim = self.sim("sim", None)?;
        if let Some(seed) = overrides.seed {
            sim.base_seed = seed;
            self.record("sim", "seed", seed.to_string());
        }
        let domain = model.as_ref().map(|m| m.domain);

        let grid = match command {
            Command::ExitStats => None,
            _ => {
                checked.push("grid");
                let nx = self.count_or("grid", "nx", GridSpec::DEFAULT_X as u64)? as usize;
                let ns = self.count_or("grid", "ns", GridSpec::DEFAULT_S as u64)? as usize;
                let domain = match domain {
                    Some(d) => d,
                    None => self.market_domain()?,
                };
                Some(GridSpec::uniform(&domain, horizon, nx, ns)?)
            }
        };
        let kernel = if command == Command::Nonlocal {
            checked.push("kernel");
            Some(self.kernel(horizon)?)
        } else {
            None
        };
        let oracle = if command == Command::OracleCompare {
            checked.push("oracle");
            let nx = self.count_or("oracle", "nx", 400)? as usize;
            let nt = self.count_or("oracle", "nt", 400)? as usize;
            let scheme = match self.word_or("oracle", "scheme", "crank_nicolson", &["crank_nicolson", "implicit_euler"])?
                .as_str()
            {
                "implicit_euler" => Scheme::ImplicitEuler,
                _ => Scheme::CrankNicolson,
            };
            Some(FdGrid::new(nx, nt).with_scheme(scheme))
        } else {
            None
        };
        let exit = if command == Command::ExitStats {
            checked.push("exit");
            Some(self.exit(domain.expect("model is read for exit-stats"), horizon)?)
        } else {
            None
        };
        let hedge = if command == Command::Replicate {
            checked.extend(["market", "hedge"]);
            Some(self.hedge(&sim, overrides.seed)?)
        } else {
            None
        };

        let dir = self.raw("output", "dir").unwrap_or_else(|| "out".to_string());
        let out_dir = overrides.out.clone().unwrap_or_else(|| PathBuf::from(&dir));
        self.record("output", "dir", out_dir.display().to_string());
        let precision = self.count_or("output", "precision", 12)? as usize;
        if !(1..=17).contains(&precision) {
            return err("[output] precision must be between 1 and 17");
        }

        for section in checked {
            for key in self.keys(section) {
                if !self.used.contains(&(section.to_string(), key.clone())) {
                    return err(format!("[{section}] unknown key `{key}` for {command}"));
                }
            }
        }
        self.smoke_test(domain, horizon, hedge.as_ref().map(|h| h.market.s0))?;
        Ok(RunConfig {
            command,
            model,
            grid,
            sim,
            kernel,
            oracle,
            exit,
            hedge,
            out_dir,
            precision,
            resolved: self.resolved,
        })
    }

    /// Every expression must be finite at the middle of the domain at `t = 0`.
    fn smoke_test(&self, domain: Option<Domain>, horizon: f64, s0: Option<f64>) -> Result<(), CliError> {
        let mid = domain.map(|d| 0.5 * (d.r1() + d.r2()));
        let dim = domain.map_or(1, |d| d.dim());
        for e in &self.exprs {
            let (point, limit) = match e.vars {
                Vars::Space => (domain.map(|d| d.point_on_ray(0.5 * (d.r1() + d.r2()))).unwrap_or_default(), dim),
                Vars::Time => (vec![], 0),
                Vars::Price => (vec![s0.unwrap_or(0.0)], 1),
                Vars::SpaceTime => (vec![mid.unwrap_or(0.0); 2], 2),
            };
            if e.expr.dimension_used() > limit {
                return err(format!(
                    "[{}] {} reads coordinate {} but only {limit} are available",
                    e.section,
                    e.key,
                    e.expr.dimension_used()
                ));
            }
            for t in [0.0, 0.5 * horizon] {
                if e.expr.eval(&point, t).is_err() {
                    return Err(CliError::Smoke { section: e.section.clone(), key: e.key.clone(), x: point, t });
                }
            }
        }
        Ok(())
    }

    fn sim(&mut self, section: &str, base: Option<&SimConfig>) -> Result<SimConfig, CliError> {
        let paths = self.count_or(section, "paths", base.map_or(10_000, |b| b.path_count as u64))?;
        let step = self.f64_or(section, "step", base.map_or(1e-3, |b| b.step_h))?;
        let seed = self.count_or(section, "seed", base.map_or(0, |b| b.base_seed))?;
        let bridge = self.bool_or(section, "bridge", base.is_none_or(|b| b.bridge_correction))?;
        Ok(SimConfig::new(step, paths as usize, seed).with_bridge(bridge))
    }

    fn domain(&mut self) -> Result<(Domain, f64), CliError> {
        let kind = self.word_or("model", "domain", "interval", &["interval", "spherical_layer"])?;
        let r1 = self.f64_req("model", "r1")?;
        let r2 = self.f64_req("model", "r2")?;
        let horizon = self.f64_req("model", "horizon")?;
        if !(horizon > 0.0 && horizon.is_finite()) {
            return err("[model] horizon must be positive");
        }
        let domain = if kind == "interval" {
            let dim = self.count_or("model", "dim", 1)?;
            if dim != 1 {
                return err("[model] an interval has dim = 1");
            }
            Domain::interval(r1, r2)?
        } else {
            let dim = self.count_or("model", "dim", 2)? as usize;
            Domain::spherical_layer(dim, r1, r2)?
        };
        Ok((domain, horizon))
    }

    fn model(&mut self, needs_xi: bool) -> Result<ModelSpec, CliError> {
        let preset = self.word_or("model", "preset", "custom", &["brownian", "heat", "gbm", "custom"])?;
        let (domain, horizon) = self.domain()?;
        let n = domain.dim();
        if preset != "custom" && n != 1 {
            return err(format!("[model] preset `{preset}` is one-dimensional"));
        }
        let coeffs = match preset.as_str() {
            "brownian" => presets::brownian(horizon),
            "heat" => presets::heat(horizon, self.f64_or("model", "lambda", 0.0)?),
            "gbm" => presets::gbm(horizon, self.f64_or("model", "sigma", 0.2)?),
            _ => self.custom_coefficients(n, horizon)?,
        };
        let xi = match self.expr("model", "xi", Vars::Space)? {
            Some(e) => Some(TerminalData::new(move |x| e.eval_raw(x, 0.0))),
            None if needs_xi => return err("[model] xi is required"),
            None => None,
        };
        Ok(ModelSpec { domain, horizon, coeffs, xi })
    }

    fn custom_coefficients(&mut self, n: usize, horizon: f64) -> Result<CoefficientSet, CliError> {
        let mut coeffs = CoefficientSet::new(n, horizon);
        // b
        let mut b: Vec<Option<CompiledExpr>> = vec![None; n * n];
        if n == 1 {
            b[0] = self.expr("model", "b", Vars::Space)?;
        } else {
            for i in 0..n {
                for j in 0..n {
                    b[i * n + j] = self.expr("model", &format!("b{}_{}", i + 1, j + 1), Vars::Space)?;
                }
            }
            for i in 0..n {
                for j in 0..i {
                    match (b[i * n + j].is_some(), b[j * n + i].is_some()) {
                        (true, false) => b[j * n + i] = b[i * n + j].clone(),
                        (false, true) => b[i * n + j] = b[j * n + i].clone(),
                        _ => {}
                    }
                }
            }
        }
        if b.iter().all(Option::is_none) {
            return err("[model] a custom model needs b");
        }
        coeffs = coeffs.with_b(field_fn(b));

        let drift: Vec<Option<CompiledExpr>> = if n == 1 {
            vec![self.expr("model", "drift", Vars::Space)?]
        } else {
            (0..n).map(|i| self.expr("model", &format!("drift{}", i + 1), Vars::Space)).collect::<Result<_, _>>()?
        };
        if drift.iter().any(Option::is_some) {
            coeffs = coeffs.with_drift(field_fn(drift));
        }
        if let Some(rate) = self.expr("model", "rate", Vars::Space)? {
            let f: ScalarFn = Arc::new(move |x, t| rate.eval_raw(x, t));
            coeffs = coeffs.with_rate(f);
        }

        let beta_count = self
            .keys("model")
            .iter()
            .filter_map(|k| k.strip_prefix("beta"))
            .filter_map(|rest| rest.split('_').next()?.parse::<usize>().ok())
            .max()
            .unwrap_or(0);
        let mut beta = Vec::with_capacity(beta_count);
        for k in 1..=beta_count {
            let comps: Vec<Option<CompiledExpr>> = if n == 1 {
                vec![self.expr("model", &format!("beta{k}"), Vars::Space)?]
            } else {
                (0..n).map(|i| self.expr("model", &format!("beta{k}_{}", i + 1), Vars::Space)).collect::<Result<_, _>>()?
            };
            beta.push(field_fn(comps));
        }
        if !beta.is_empty() {
            coeffs = coeffs.with_beta(beta);
        }
        Ok(coeffs)
    }

    fn kernel(&mut self, horizon: f64) -> Result<KernelSpec, CliError> {
        let s = "kernel";
        let kind = self.word_or(s, "type", "point_scaled", &["point_scaled", "two_point", "time", "space_time"])?;
        let kernel = match kind.as_str() {
            "point_scaled" => GammaKernel::PointScaled { kappa: self.f64_req(s, "kappa")?, t1: self.f64_or(s, "t1", 0.0)? },
            "two_point" => GammaKernel::TwoPoint {
                alpha1: self.f64_req(s, "alpha1")?,
                t1: self.f64_req(s, "t1")?,
                alpha2: self.f64_req(s, "alpha2")?,
                t2: self.f64_req(s, "t2")?,
            },
            "time" => {
                let theta = self.f64_or(s, "theta", horizon)?;
                let Some(k) = self.expr(s, "k", Vars::Time)? else { return err("[kernel] k is required") };
                GammaKernel::time_kernel(move |t| k.eval_raw(&[], t), theta)
            }
            _ => {
                let theta = self.f64_or(s, "theta", horizon)?;
                let Some(k) = self.expr(s, "k", Vars::SpaceTime)? else { return err("[kernel] k is required") };
                GammaKernel::space_time_kernel(move |t, y, x| k.eval_raw(&[y, x], t), theta)
            }
        };
        Ok(KernelSpec { kernel, options: self.iteration_options(s)? })
    }

    fn iteration_options(&mut self, section: &str) -> Result<NonlocalOptions, CliError> {
        let tol = self.opt_f64(section, "tol")?;
        let max_iter = self.count_or(section, "max_iter", NonlocalOptions::default().max_iter as u64)? as usize;
        Ok(NonlocalOptions { tol, max_iter, initial: None })
    }

    fn exit(&mut self, domain: Domain, horizon: f64) -> Result<ExitSpec, CliError> {
        let s = "exit";
        let (r1, r2) = (domain.r1(), domain.r2());
        let x = self.f64_or(s, "x", 0.5 * (r1 + r2))?;
        let start = self.f64_or(s, "s", 0.0)?;
        let Some(thetas) = self.list(s, "thetas")? else { return err("[exit] thetas is required") };
        let decay_theta = self.f64_or(s, "decay_theta", thetas[0])?;
        let decay_points = match self.list(s, "decay_points")? {
            Some(p) => p,
            None => {
                // Approach the outer face geometrically.
                let p: Vec<f64> = (1..=6).map(|j| r2 - 0.5 * (r2 - r1) * 0.5f64.powi(j - 1)).collect();
                self.record(s, "decay_points", join(&p));
                p
            }
        };
        let deltas = self.list(s, "deltas")?.unwrap_or_default();
        if start < 0.0 || start > horizon {
            return err(format!("[exit] s must lie in [0, {horizon}]"));
        }
        Ok(ExitSpec { x, s: start, thetas, decay_theta, decay_points, deltas })
    }

    fn market_domain(&mut self) -> Result<Domain, CliError> {
        let s_l = self.f64_req("market", "s_l")?;
        let s_u = self.f64_req("market", "s_u")?;
        Ok(Domain::interval(s_l, s_u)?)
    }

    fn hedge(&mut self, sim: &SimConfig, seed_override: Option<u64>) -> Result<HedgeSpec, CliError> {
        let s = "market";
        let domain = self.market_domain()?;
        let (s_l, s_u) = (domain.r1(), domain.r2());
        let horizon = self.f64_req(s, "horizon")?;
        let s0 = self.f64_req(s, "s0")?;
        let w_l = self.f64_req(s, "w_l")?;
        let w_u = self.f64_req(s, "w_u")?;
        let mut market = MarketSpec::constant(0.2, s0, s_l, s_u, w_l, w_u, horizon);
        match self.expr(s, "sigma", Vars::Time)? {
            Some(e) => market.sigma = Arc::new(move |t| e.eval_raw(&[], t)),
            None => self.record(s, "sigma", "0.2".into()),
        }
        let theta = self.f64_or(s, "theta", horizon)?;
        let k1 = self.expr(s, "k1", Vars::Time)?;
        let k2 = self.expr(s, "k2", Vars::Time)?;
        let as_fn = |e: Option<CompiledExpr>| -> bspde::nonlocal::TimeFn {
            match e {
                Some(e) => Arc::new(move |t| e.eval_raw(&[], t)),
                None => Arc::new(|_| 0.0),
            }
        };
        market = market.with_kernels(theta, as_fn(k1), as_fn(k2));
        if let Some(z) = self.expr(s, "zeta", Vars::Price)? {
            market = market.with_zeta(Arc::new(move |x| z.eval_raw(&[x], 0.0)));
        }
        let options = self.iteration_options(s)?;
        let mut replication = self.sim("hedge", Some(sim))?;
        if let Some(seed) = seed_override {
            replication.base_seed = seed;
            self.record("hedge", "seed", seed.to_string());
        }
        Ok(HedgeSpec { market, options, replication })
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

fn field_fn(entries: Vec<Option<CompiledExpr>>) -> FieldFn {
    Arc::new(move |x, t, out| {
        for (o, e) in out.iter_mut().zip(&entries) {
            *o = e.as_ref().map_or(0.0, |e| e.eval_raw(x, t));
        }
    })
}

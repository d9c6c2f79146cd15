//! Builds a scenario from a [`Config`], runs it and collects the artifacts.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pfcontrol::closed_loop::{lyapunov_trace, lyapunov_violation, run_adaptive, run_theorem1};
use pfcontrol::controller::{sigma_estimate, AdaptiveConfig, Controller, ControllerConfig};
use pfcontrol::gains::{bump_schedule_with, check_pe, BumpShape, GainSignal, PeSpec};
use pfcontrol::lti::{canonical_transform_with, CanonicalData, CanonicalOptions, PlantModel, DEFAULT_RANK_TOL};
use pfcontrol::observer::{observer_transform, MeasurementTable, Observer, ObserverSystem, ReplaySystem};
use pfcontrol::sim::{fit_decay_rate, integrate_strided, Trajectory};
use pfcontrol::spacecraft::{self, SpacecraftParams, SpacecraftState};
use pfcontrol::Error;

use crate::builtins;
use crate::config::{Config, ConfigError};

/// Why a run did not succeed; each maps to an exit status.
#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("numeric failure in {module}{}: {error}", at_time(.error))]
    Numeric { module: &'static str, error: Error },
    #[error("io error: {0}")]
    Io(String),
    #[error("assertion failed: {}", .0.join("; "))]
    Assertion(Vec<String>),
}

fn at_time(e: &Error) -> String {
    match e {
        Error::NonFiniteState { time, .. } => format!(" at t = {time}"),
        _ => " during setup".into(),
    }
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) | Failure::Io(_) => 2,
            Failure::Numeric { .. } => 3,
            Failure::Assertion(_) => 4,
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

/// Module a core error originates from.
fn module_of(e: &Error) -> &'static str {
    match e {
        Error::InvalidPlant(_) | Error::NotControllable { .. } | Error::IllConditioned { .. } => "lti_model",
        Error::NotObservable { .. } => "observer",
        Error::OrderUnavailable { .. } | Error::BadSchedule(_) | Error::NotPe { .. } => "gains",
        Error::NotDivisible { .. } | Error::MissingDownstreamControl { .. } | Error::UnsupportedCoupling { .. } => {
            "augmentation"
        }
        Error::NonPositiveRate { .. } => "controller",
        Error::NonFiniteState { .. } | Error::DegenerateFit { .. } => "simulator",
        _ => "pfcontrol",
    }
}

fn numeric(module: &'static str) -> impl Fn(Error) -> Failure {
    move |e| {
        let m = match module_of(&e) {
            "pfcontrol" => module,
            m => m,
        };
        Failure::Numeric { module: m, error: e }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Theorem1,
    Adaptive,
    Observer,
    Spacecraft,
}

impl Mode {
    fn parse(cfg: &Config) -> Result<Self, ConfigError> {
        match cfg.require("mode")? {
            "theorem1" => Ok(Mode::Theorem1),
            "adaptive" => Ok(Mode::Adaptive),
            "observer" => Ok(Mode::Observer),
            "spacecraft" => Ok(Mode::Spacecraft),
            other => Err(cfg.err("mode", format!("unknown mode `{other}` (theorem1, adaptive, observer, spacecraft)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Theorem1 => "theorem1",
            Mode::Adaptive => "adaptive",
            Mode::Observer => "observer",
            Mode::Spacecraft => "spacecraft",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

fn check(name: &str, pass: bool, detail: String) -> Check {
    Check { name: name.into(), pass, detail }
}

/// Everything a run produces, before it is written out.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub mode: Mode,
    /// `(name, description)` of each CSV column.
    pub columns: Vec<(String, String)>,
    pub rows: Vec<Vec<f64>>,
    pub manifest: Vec<(String, String)>,
    pub summary: Vec<(String, String)>,
    pub checks: Vec<Check>,
}

impl RunResult {
    pub fn failed_checks(&self) -> Vec<String> {
        self.checks.iter().filter(|c| !c.pass).map(|c| format!("{} ({})", c.name, c.detail)).collect()
    }
}

struct Common {
    horizon: f64,
    dt: f64,
    stride: usize,
    seed: u64,
    pe_window: Option<f64>,
    final_ratio: Option<f64>,
}

fn fmt_vec(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(", ")
}

fn fmt_matrix(m: &DMatrix<f64>) -> String {
    (0..m.nrows()).map(|i| fmt_vec(&m.row(i).iter().copied().collect::<Vec<_>>())).collect::<Vec<_>>().join("; ")
}

fn resolve(base: &Path, file: &str) -> PathBuf {
    let p = Path::new(file);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Core errors raised while reading user files are config errors.
fn file_error(cfg: &Config, key: &str, e: Error) -> Failure {
    match e {
        Error::Parse { line, msg } => {
            Failure::Config(cfg.err(key, format!("line {line} of the referenced file: {msg}")))
        }
        Error::Io(m) => Failure::Config(cfg.err(key, m)),
        other => numeric("lti_model")(other),
    }
}

/// `[plant]`: `builtin = name`, `file = path`, or inline `a`, `b` rows.
fn load_plant(cfg: &Config, base: &Path, observer: bool) -> Result<PlantModel, Failure> {
    let sources = ["plant.builtin", "plant.file", "plant.a"].iter().filter(|k| cfg.has(k)).count();
    if sources != 1 {
        return Err(ConfigError::new(None, "[plant] needs exactly one of `builtin`, `file` or `a`").into());
    }
    if let Some(name) = cfg.raw("plant.builtin") {
        return builtins::plant(name).ok_or_else(|| cfg.err("plant.builtin", format!("unknown plant `{name}`")).into());
    }
    if let Some(file) = cfg.raw("plant.file") {
        return PlantModel::from_file(resolve(base, file)).map_err(|e| file_error(cfg, "plant.file", e));
    }
    let to_matrix =
        |key: &str| matrix(cfg, key)?.ok_or_else(|| Failure::from(ConfigError::new(None, format!("missing `{key}`"))));
    let a = to_matrix("plant.a")?;
    let b = if observer { to_matrix("plant.c")?.transpose() } else { to_matrix("plant.b")? };
    PlantModel::new(a, b).map_err(|e| Failure::Config(ConfigError::new(cfg.line("plant.a"), e.to_string())))
}

/// `;`-separated rows of equal length.
fn matrix(cfg: &Config, key: &str) -> Result<Option<DMatrix<f64>>, ConfigError> {
    let Some(rows) = cfg.rows(key)? else { return Ok(None) };
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(cfg.err(key, "rows have different lengths"));
    }
    Ok(Some(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j])))
}

type GainOptions<'a> = (Vec<(&'a str, f64)>, BumpShape);

/// `name=value` options after the gain kind, plus the bump shape.
fn gain_options<'a>(cfg: &Config, key: &str, toks: &[&'a str]) -> Result<GainOptions<'a>, ConfigError> {
    let mut shape = BumpShape::Cosine;
    let mut opts = Vec::new();
    for t in toks {
        let (k, v) = t.split_once('=').ok_or_else(|| cfg.err(key, format!("expected `name=value`, got `{t}`")))?;
        if k == "shape" {
            shape = match v {
                "cosine" => BumpShape::Cosine,
                "mollifier" => BumpShape::Mollifier,
                _ => return Err(cfg.err(key, "shape must be `cosine` or `mollifier`")),
            };
            continue;
        }
        let v = v.parse::<f64>().map_err(|_| cfg.err(key, format!("`{v}` is not a number")))?;
        opts.push((k, v));
    }
    Ok((opts, shape))
}

fn option(opts: &[(&str, f64)], name: &str, default: f64) -> f64 {
    opts.iter().find(|(k, _)| *k == name).map_or(default, |(_, v)| *v)
}

/// Parses one gain declaration, e.g. `sine`, `constant 2`,
/// `sinusoid offset=1 amplitude=0.5 omega=2`, `bump start=0 width=1 period=3`,
/// `schedule1 on1=1.8 gap=0.4 on2=1.8 period=4`, `table gain.txt`.
pub fn parse_gain(cfg: &Config, key: &str, base: &Path) -> Result<GainSignal, Failure> {
    let spec = cfg.require(key)?;
    let toks: Vec<&str> = spec.split_whitespace().collect();
    let bad = |msg: String| -> Failure { cfg.err(key, msg).into() };
    let allow = |opts: &[(&str, f64)], names: &[&str]| -> Result<(), Failure> {
        match opts.iter().find(|(k, _)| !names.contains(k)) {
            Some((k, _)) => Err(bad(format!("unknown option `{k}` for `{}`", toks[0]))),
            None => Ok(()),
        }
    };
    let kind = *toks.first().ok_or_else(|| bad("empty gain".into()))?;
    let gain = match kind {
        "sine" if toks.len() == 1 => GainSignal::sine(),
        "constant" if toks.len() == 2 => {
            GainSignal::constant(toks[1].parse().map_err(|_| bad(format!("`{}` is not a number", toks[1])))?)
        }
        "sinusoid" => {
            let (o, _) = gain_options(cfg, key, &toks[1..])?;
            allow(&o, &["offset", "amplitude", "omega", "phase"])?;
            GainSignal::sinusoid(
                option(&o, "offset", 0.0),
                option(&o, "amplitude", 1.0),
                option(&o, "omega", 1.0),
                option(&o, "phase", 0.0),
            )
        }
        "bump" => {
            let (o, shape) = gain_options(cfg, key, &toks[1..])?;
            allow(&o, &["start", "width", "period", "amplitude"])?;
            let period = o.iter().find(|(k, _)| *k == "period").map(|(_, v)| *v);
            GainSignal::bump(
                shape,
                option(&o, "start", 0.0),
                option(&o, "width", 1.0),
                period,
                option(&o, "amplitude", 1.0),
            )
            .map_err(|e| bad(e.to_string()))?
        }
        "schedule1" | "schedule2" => {
            let (o, shape) = gain_options(cfg, key, &toks[1..])?;
            allow(&o, &["on1", "gap", "on2", "period"])?;
            let (g1, g2) = bump_schedule_with(
                shape,
                option(&o, "on1", 1.8),
                option(&o, "gap", 0.4),
                option(&o, "on2", 1.8),
                option(&o, "period", 4.0),
            )
            .map_err(|e| bad(e.to_string()))?;
            if kind == "schedule1" {
                g1
            } else {
                g2
            }
        }
        "table" if toks.len() == 2 => {
            GainSignal::tabulated_from_file(resolve(base, toks[1])).map_err(|e| file_error(cfg, key, e))?
        }
        _ => return Err(bad(format!("cannot read gain `{spec}`"))),
    };
    Ok(gain)
}

fn gains(cfg: &Config, count: usize, base: &Path) -> Result<Vec<GainSignal>, Failure> {
    (1..=count).map(|i| parse_gain(cfg, &format!("gains.g{i}"), base)).collect()
}

/// `x0 = list` or `x0 = random` (uniform in [-1, 1], drawn from the seed).
fn initial_state(cfg: &Config, key: &str, n: usize, seed: u64) -> Result<Vec<f64>, ConfigError> {
    match cfg.raw(key) {
        Some("random") => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok((0..n).map(|_| rng.random_range(-1.0..=1.0)).collect())
        }
        Some(_) => {
            let v = cfg.list(key)?.unwrap_or_default();
            if v.len() != n {
                return Err(cfg.err(key, format!("needs {n} values, got {}", v.len())));
            }
            Ok(v)
        }
        None => Err(ConfigError::new(None, format!("missing required key `{key}`"))),
    }
}

/// PE certificate of each gain over one period (or `pe.window`).
fn pe_lines(c: &Common, gains: &[GainSignal], summary: &mut Vec<(String, String)>) -> Result<(), Failure> {
    for (i, g) in gains.iter().enumerate() {
        let window = c.pe_window.or(g.period()).unwrap_or(2.0 * std::f64::consts::PI);
        let rep = check_pe(g, &PeSpec::for_period(window)).map_err(numeric("gains"))?;
        summary.push((
            format!("pe.g{}", i + 1),
            format!("window {window}, eps_hat {:.6e}, pe {}", rep.eps_hat, rep.is_pe),
        ));
    }
    Ok(())
}

fn final_ratio(norms: &[f64]) -> f64 {
    norms[norms.len() - 1] / norms[0]
}

fn ratio_check(c: &Common, default: Option<f64>, ratio: f64, checks: &mut Vec<Check>) {
    if let Some(limit) = c.final_ratio.or(default) {
        checks.push(check("final_ratio", ratio < limit, format!("final/initial norm {ratio:.3e}, limit {limit:e}")));
    }
}

fn finite_controls(traj: &Trajectory, checks: &mut Vec<Check>) {
    let bad = traj.nonfinite_controls();
    checks.push(check("finite_controls", bad == 0, format!("{bad} non-finite control samples")));
}

/// Columns `t, x.., u.., rest of state.., diagnostics..`; `lead` state
/// entries go before the controls.
fn table(traj: &Trajectory, state_names: &[(String, String)], lead: usize) -> (Vec<(String, String)>, Vec<Vec<f64>>) {
    let mut cols = vec![("t".to_string(), "time [s]".to_string())];
    cols.extend_from_slice(&state_names[..lead]);
    cols.extend((1..=traj.control_dim).map(|i| (format!("u{i}"), format!("control input {i}"))));
    cols.extend_from_slice(&state_names[lead..]);
    cols.extend(traj.diagnostic_names.iter().map(|d| (d.clone(), "diagnostic".to_string())));
    let rows = (0..traj.len())
        .map(|i| {
            let s = traj.state(i);
            let mut row = Vec::with_capacity(cols.len());
            row.push(traj.times[i]);
            row.extend_from_slice(&s[..lead]);
            row.extend_from_slice(traj.control(i));
            row.extend_from_slice(&s[lead..]);
            row.extend_from_slice(traj.diagnostic_row(i));
            row
        })
        .collect();
    (cols, rows)
}

fn named(prefix: &str, n: usize, desc: &str) -> Vec<(String, String)> {
    (1..=n).map(|i| (format!("{prefix}{i}"), format!("{desc} {i}"))).collect()
}

/// `[controller]` keys, read before the unused-key check.
struct ControllerKeys {
    rank_tol: f64,
    slack: f64,
    lambdas: Option<Vec<f64>>,
}

impl ControllerKeys {
    fn read(cfg: &Config) -> Result<Self, ConfigError> {
        Ok(Self {
            rank_tol: cfg.positive("controller.rank_tol", DEFAULT_RANK_TOL)?,
            slack: cfg.positive("controller.slack", 1.0)?,
            lambdas: cfg.list("controller.lambdas")?,
        })
    }

    fn canonical(&self, plant: &PlantModel) -> Result<CanonicalData, Failure> {
        let opts = CanonicalOptions { rank_tol: self.rank_tol, ..CanonicalOptions::default() };
        canonical_transform_with(plant, opts).map_err(numeric("lti_model"))
    }

    fn config(&self, cfg: &Config, cd: &CanonicalData) -> Result<ControllerConfig, Failure> {
        match &self.lambdas {
            Some(l) => ControllerConfig::with_lambdas(cd, l.clone())
                .map_err(|e| Failure::Config(cfg.err("controller.lambdas", e))),
            None => pfcontrol::controller::select_lambdas(cd, self.slack).map_err(numeric("controller")),
        }
    }
}

fn describe_controller(ctrl: &Controller, manifest: &mut Vec<(String, String)>) {
    let cd = &ctrl.cd;
    manifest.push(("canonical.r".into(), format!("{:?}", cd.r)));
    manifest.push((
        "canonical.block_inputs".into(),
        format!("{:?}", cd.block_inputs.iter().map(|i| i + 1).collect::<Vec<_>>()),
    ));
    manifest.push(("canonical.T".into(), fmt_matrix(&cd.t)));
    manifest.push(("controller.k".into(), ctrl.config.k.to_string()));
    manifest.push(("controller.lambdas".into(), fmt_vec(&ctrl.config.lambdas)));
    manifest.push(("controller.lambda_star".into(), fmt_vec(&ctrl.config.lambda_star)));
    manifest.push(("controller.coupling".into(), fmt_vec(&ctrl.config.coupling)));
    for (i, g) in ctrl.gains.iter().enumerate() {
        manifest.push((format!("gain.g{}", i + 1), g.to_string()));
    }
}

fn run_theorem1_mode(cfg: &Config, base: &Path, c: &Common, res: &mut RunResult) -> Result<(), Failure> {
    let plant = load_plant(cfg, base, false)?;
    let gains = gains(cfg, plant.m(), base)?;
    let x0 = initial_state(cfg, "plant.x0", plant.n(), c.seed)?;
    let r0 = cfg.positive("plant.r0", 1.0)?;
    let keys = ControllerKeys::read(cfg)?;
    cfg.check_unused()?;
    let cd = keys.canonical(&plant)?;
    let config = keys.config(cfg, &cd)?;
    let ctrl = Controller::new(cd, gains.clone(), config).map_err(numeric("controller"))?;
    let sigma = sigma_estimate(&ctrl.config, &ctrl.cd);
    describe_controller(&ctrl, &mut res.manifest);
    res.manifest.push(("plant.A".into(), fmt_matrix(plant.a())));
    res.manifest.push(("plant.B".into(), fmt_matrix(plant.b())));
    res.manifest.push(("plant.x0".into(), fmt_vec(&x0)));
    let run = run_theorem1(&plant, &ctrl, &x0, r0, c.horizon, c.dt, c.stride).map_err(numeric("simulator"))?;
    let traj = &run.traj;
    let n = plant.n();
    let mut names = named("x", n, "plant state");
    names.extend(named("R", ctrl.p(), "persistence filter"));
    let (mut cols, mut rows) = table(traj, &names, n);
    let norms = traj.norms(0..n);
    let trace = lyapunov_trace(traj, &ctrl).map_err(numeric("simulator"))?;
    cols.push(("x_norm".into(), "Euclidean norm of x".into()));
    cols.push(("V".into(), "combined Lyapunov function".into()));
    for (i, row) in rows.iter_mut().enumerate() {
        row.push(norms[i]);
        row.push(trace.v[i]);
    }
    res.columns = cols;
    res.rows = rows;
    pe_lines(c, &gains, &mut res.summary)?;
    finite_controls(traj, &mut res.checks);
    let fit = fit_decay_rate(&traj.times, &norms, 0.5).map_err(numeric("simulator"))?;
    res.summary.push(("fit.rate".into(), format!("{:.6}", fit.rate)));
    res.summary.push(("fit.r2".into(), format!("{:.6}", fit.r2)));
    res.summary.push(("final_ratio".into(), format!("{:.6e}", final_ratio(&norms))));
    match sigma {
        Ok(s) => {
            res.manifest.push(("controller.sigma".into(), s.to_string()));
            res.summary.push(("sigma".into(), format!("{s:.6}")));
            let need = 0.375 * s;
            res.checks.push(check(
                "decay_rate",
                fit.rate >= need,
                format!("fitted {:.4}, need sigma/2 * 0.75 = {need:.4}", fit.rate),
            ));
            let worst = [1, 10, 100].map(|lag| lyapunov_violation(&trace, s, lag)).into_iter().fold(0.0, f64::max);
            res.checks.push(check("lyapunov_bound", worst <= 1e-3, format!("worst relative excess {worst:.3e}")));
        }
        Err(e) => res.summary.push(("sigma".into(), format!("unavailable: {e}"))),
    }
    ratio_check(c, None, final_ratio(&norms), &mut res.checks);
    Ok(())
}

fn run_adaptive_mode(cfg: &Config, base: &Path, c: &Common, res: &mut RunResult) -> Result<(), Failure> {
    let plant = load_plant(cfg, base, false)?;
    let gains = gains(cfg, plant.m(), base)?;
    let x0 = initial_state(cfg, "plant.x0", plant.n(), c.seed)?;
    let r0 = cfg.positive("plant.r0", 1.0)?;
    let nu = cfg.positive("adaptive.nu", 0.1)?;
    let eta = cfg.positive("adaptive.eta", 1.0)?;
    let lambda_hat0 = cfg.positive("adaptive.lambda_hat0", 1.0)?;
    let alpha_hat0: f64 = cfg.get_or("adaptive.alpha_hat0", 0.0)?;
    let lambda_ceiling: Option<f64> = cfg.get("adaptive.lambda_ceiling")?;
    let rank_tol = cfg.positive("controller.rank_tol", DEFAULT_RANK_TOL)?;
    cfg.check_unused()?;
    let cd = ControllerKeys { rank_tol, slack: 1.0, lambdas: None }.canonical(&plant)?;
    let p = cd.p();
    let mut config = ControllerConfig::with_lambdas(&cd, vec![lambda_hat0; p]).map_err(numeric("controller"))?;
    config.adaptive = Some(AdaptiveConfig {
        nu: vec![nu; p],
        eta: cd.r.iter().map(|&r| vec![eta; r]).collect(),
        lambda_hat0: vec![lambda_hat0; p],
        alpha_hat0: cd.r.iter().map(|&r| vec![alpha_hat0; r]).collect(),
        lambda_ceiling,
    });
    let ctrl = Controller::new(cd, gains.clone(), config).map_err(numeric("controller"))?;
    describe_controller(&ctrl, &mut res.manifest);
    let z0 = &ctrl.cd.t * DVector::from_column_slice(&x0);
    res.manifest.push(("plant.A".into(), fmt_matrix(plant.a())));
    res.manifest.push(("plant.B".into(), fmt_matrix(plant.b())));
    res.manifest.push(("plant.x0".into(), fmt_vec(&x0)));
    res.manifest.push(("adaptive.z0".into(), fmt_vec(z0.as_slice())));
    res.manifest.push(("adaptive.true_alpha".into(), format!("{:?}", ctrl.cd.alpha)));
    let traj = run_adaptive(&ctrl, z0.as_slice(), r0, c.horizon, c.dt, c.stride).map_err(numeric("simulator"))?;
    let n = ctrl.cd.n();
    let mut names = named("z", n, "canonical state");
    names.extend(named("R", p, "persistence filter"));
    names.extend(named("lambda_hat", p, "adaptive filter rate of block"));
    for (j, &r) in ctrl.cd.r.iter().enumerate() {
        for m in 1..=r {
            names.push((format!("alpha_hat_{}_{m}", j + 1), format!("estimate of alpha_{},{m}", j + 1)));
        }
    }
    let (cols, rows) = table(&traj, &names, n);
    res.columns = cols;
    res.rows = rows;
    pe_lines(c, &gains, &mut res.summary)?;
    finite_controls(&traj, &mut res.checks);
    let norms = traj.norms(0..n);
    let ratio = final_ratio(&norms);
    res.summary.push(("final_ratio".into(), format!("{ratio:.6e}")));
    let mut mono = true;
    for j in 0..p {
        let lh = traj.component(n + p + j);
        mono &= lh.windows(2).all(|w| w[1] >= w[0]) && lh.iter().all(|v| v.is_finite());
        res.summary.push((format!("lambda_hat{}", j + 1), format!("{} -> {}", lh[0], lh[lh.len() - 1])));
    }
    res.checks.push(check("lambda_hat_monotone", mono, "lambda_hat nondecreasing and finite".into()));
    ratio_check(c, Some(1e-3), ratio, &mut res.checks);
    Ok(())
}

fn run_observer_mode(cfg: &Config, base: &Path, c: &Common, res: &mut RunResult) -> Result<(), Failure> {
    let plant = load_plant(cfg, base, true)?;
    let (a, ct) = (plant.a().clone(), plant.b().clone());
    let cmat = ct.transpose();
    let n = a.nrows();
    let gains = gains(cfg, cmat.nrows(), base)?;
    let slack = cfg.positive("observer.slack", 1.0)?;
    let x_hat0 = match cfg.list("observer.x_hat0")? {
        Some(v) if v.len() == n => v,
        Some(v) => return Err(cfg.err("observer.x_hat0", format!("needs {n} values, got {}", v.len())).into()),
        None => vec![0.0; n],
    };
    let replay = match cfg.raw("observer.measurements") {
        Some(f) => {
            let text = std::fs::read_to_string(resolve(base, f)).map_err(|e| cfg.err("observer.measurements", e))?;
            Some(MeasurementTable::from_text(&text).map_err(|e| file_error(cfg, "observer.measurements", e))?)
        }
        None => None,
    };
    let x0 = if replay.is_none() { Some(initial_state(cfg, "plant.x0", n, c.seed)?) } else { None };
    let b = matrix(cfg, "observer.b")?;
    match (&b, &replay) {
        (Some(_), None) => return Err(cfg.err("observer.b", "only used with `measurements`").into()),
        (Some(b), Some(t)) if b.nrows() != n || t.inputs.first().is_none_or(|u| u.len() != b.ncols()) => {
            return Err(cfg
                .err(
                    "observer.b",
                    format!("needs {n} rows and one column per `[inputs]` value in the measurement file"),
                )
                .into())
        }
        (None, Some(t)) if !t.inputs.is_empty() => {
            return Err(cfg.err("observer.measurements", "file has `[inputs]` but `[observer] b` is not set").into())
        }
        _ => {}
    }
    let rank_tol = cfg.positive("observer.rank_tol", DEFAULT_RANK_TOL)?;
    cfg.check_unused()?;
    let od = observer_transform(&a, &cmat, rank_tol).map_err(numeric("observer"))?;
    let obs = Observer::new(od, gains.clone(), slack, c.horizon).map_err(numeric("observer"))?;
    res.manifest.push(("plant.A".into(), fmt_matrix(&a)));
    res.manifest.push(("plant.C".into(), fmt_matrix(&cmat)));
    res.manifest.push(("observer.r".into(), format!("{:?}", obs.data.dual.r)));
    res.manifest.push(("observer.T".into(), fmt_matrix(&obs.data.t)));
    res.manifest.push(("observer.lambdas".into(), fmt_vec(&obs.lambdas())));
    res.manifest.push(("observer.x_hat0".into(), fmt_vec(&x_hat0)));
    for (i, g) in gains.iter().enumerate() {
        res.manifest.push((format!("gain.g{}", i + 1), g.to_string()));
    }
    pe_lines(c, &gains, &mut res.summary)?;
    if let Some(table_) = &replay {
        if table_.output(0.0).len() != cmat.nrows() {
            return Err(cfg.err("observer.measurements", format!("rows need {} outputs", cmat.nrows())).into());
        }
        let sys = ReplaySystem { obs: &obs, table: table_, b: b.as_ref() };
        let traj = integrate_strided(&sys, &x_hat0, 0.0, c.horizon, c.dt, c.stride).map_err(numeric("simulator"))?;
        let (cols, rows) = table(&traj, &named("x_hat", n, "state estimate"), n);
        res.columns = cols;
        res.rows = rows;
        res.summary.push(("final_estimate".into(), fmt_vec(traj.last_state())));
        return Ok(());
    }
    let x0 = x0.expect("synchronous run has x0");
    res.manifest.push(("plant.x0".into(), fmt_vec(&x0)));
    let sys = ObserverSystem { obs: &obs, input: None };
    let traj = integrate_strided(&sys, &sys.initial_state(&x0, &x_hat0), 0.0, c.horizon, c.dt, c.stride)
        .map_err(numeric("simulator"))?;
    let mut names = named("x", n, "plant state");
    names.extend(named("x_hat", n, "state estimate"));
    let (cols, rows) = table(&traj, &names, 2 * n);
    res.columns = cols;
    res.rows = rows;
    let err = traj.diagnostic("err_norm").expect("observer diagnostics");
    let fit = fit_decay_rate(&traj.times, &err, 0.5).map_err(numeric("simulator"))?;
    let ratio = final_ratio(&err);
    res.summary.push(("fit.slope".into(), format!("{:.6}", fit.slope)));
    res.summary.push(("final_ratio".into(), format!("{ratio:.6e}")));
    res.checks.push(check("error_decay", fit.slope < 0.0, format!("tail slope of log error {:.4}", fit.slope)));
    ratio_check(c, Some(1e-4), ratio, &mut res.checks);
    Ok(())
}

fn run_spacecraft_mode(cfg: &Config, c: &Common, res: &mut RunResult) -> Result<(), Failure> {
    let mut params = SpacecraftParams::reference();
    let mut init = SpacecraftState::reference_initial();
    if let Some(j) = cfg.list("spacecraft.inertia")? {
        params.j = <[f64; 3]>::try_from(j.as_slice()).map_err(|_| cfg.err("spacecraft.inertia", "needs 3 values"))?;
    }
    params.lambda1 = cfg.positive("spacecraft.lambda1", params.lambda1)?;
    params.gamma = cfg.get_or("spacecraft.gamma", params.gamma)?;
    if let Some(s) = cfg.list("spacecraft.schedule")? {
        let [on1, gap, on2, period] = <[f64; 4]>::try_from(s.as_slice())
            .map_err(|_| cfg.err("spacecraft.schedule", "needs on1, gap, on2, period"))?;
        let (g1, g2) = bump_schedule_with(BumpShape::Cosine, on1, gap, on2, period)
            .map_err(|e| cfg.err("spacecraft.schedule", e))?;
        params.g1 = g1;
        params.g2 = g2;
    }
    match cfg.raw("spacecraft.third_axis") {
        None | Some("shared") => {}
        Some("dedicated") => params.g3 = Some(GainSignal::constant(1.0)),
        Some(o) => {
            return Err(cfg.err("spacecraft.third_axis", format!("`{o}` is not `shared` or `dedicated`")).into())
        }
    }
    if let Some(deg) = cfg.get::<f64>("spacecraft.angle_deg")? {
        let axis = cfg.list("spacecraft.axis")?.unwrap_or(vec![1.0, 1.0, 1.0]);
        let norm = axis.iter().map(|v| v * v).sum::<f64>().sqrt();
        if axis.len() != 3 || norm == 0.0 {
            return Err(cfg.err("spacecraft.axis", "needs 3 values, not all zero").into());
        }
        let half = (deg / 2.0).to_radians();
        init.q0 = half.cos();
        init.qv = [0, 1, 2].map(|i| half.sin() * axis[i] / norm);
    } else if cfg.has("spacecraft.axis") {
        return Err(cfg.err("spacecraft.axis", "only used together with `angle_deg`").into());
    }
    if let Some(w) = cfg.list("spacecraft.w0")? {
        init.w = <[f64; 3]>::try_from(w.as_slice()).map_err(|_| cfg.err("spacecraft.w0", "needs 3 values"))?;
    }
    init.lambda_hat2 = cfg.positive("spacecraft.lambda_hat0", init.lambda_hat2)?;
    cfg.check_unused()?;
    params.validate().map_err(|e| Failure::Config(ConfigError::new(None, e.to_string())))?;
    res.manifest.push(("spacecraft.inertia".into(), fmt_vec(&params.j)));
    res.manifest.push(("spacecraft.lambda1".into(), params.lambda1.to_string()));
    res.manifest.push(("spacecraft.gamma".into(), params.gamma.to_string()));
    res.manifest.push(("gain.g1".into(), params.g1.to_string()));
    res.manifest.push(("gain.g2".into(), params.g2.to_string()));
    res.manifest.push(("gain.g3".into(), params.gain3().to_string()));
    res.manifest.push(("spacecraft.initial_state".into(), fmt_vec(&init.to_vec())));
    let gains_ = [params.g1.clone(), params.g2.clone()];
    let traj = spacecraft::run_scenario(params, &init, c.horizon, c.dt, c.stride).map_err(numeric("spacecraft"))?;
    let names: Vec<(String, String)> = [
        ("q0", "Euler parameter q0"),
        ("q1", "Euler parameter q1"),
        ("q2", "Euler parameter q2"),
        ("q3", "Euler parameter q3"),
        ("w1", "body rate 1 [rad/s]"),
        ("w2", "body rate 2 [rad/s]"),
        ("w3", "body rate 3 [rad/s]"),
        ("R1", "axis-1 persistence filter"),
        ("R2", "axis-2 persistence filter"),
        ("lambda_hat2", "adaptive filter rate"),
        ("R3", "axis-3 persistence filter"),
    ]
    .iter()
    .map(|(a, b)| (a.to_string(), b.to_string()))
    .collect();
    let (mut cols, rows) = table(&traj, &names, 7);
    for col in cols.iter_mut().filter(|c| c.0.starts_with('u')) {
        col.1 = format!("torque {} [N m]", &col.0[1..]);
    }
    res.columns = cols;
    res.rows = rows;
    pe_lines(c, &gains_, &mut res.summary)?;
    finite_controls(&traj, &mut res.checks);
    let states: Vec<SpacecraftState> = (0..traj.len()).map(|i| SpacecraftState::from_slice(traj.state(i))).collect();
    let norm3 = |v: &[f64; 3]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let drift =
        traj.diagnostic("qnorm_err").unwrap().iter().chain(&traj.corrections).fold(0.0f64, |m, v| m.max(v.abs()));
    res.checks.push(check("quaternion_norm", drift < 1e-6, format!("max norm drift {drift:.3e}")));
    let mono = states.windows(2).all(|w| w[1].lambda_hat2 >= w[0].lambda_hat2);
    res.checks.push(check(
        "lambda_hat2_monotone",
        mono,
        format!("{} -> {}", states[0].lambda_hat2, states[states.len() - 1].lambda_hat2),
    ));
    let g1 = traj.diagnostic("g1").unwrap();
    let off =
        traj.control_component(0).iter().zip(&g1).filter(|(_, g)| **g == 0.0).fold(0.0f64, |m, (u, _)| m.max(u.abs()));
    res.checks.push(check("axis1_idle_when_g1_off", off < 1e-12, format!("max |u1| with g1 = 0: {off:.3e}")));
    let (s0, sf) = (&states[0], &states[states.len() - 1]);
    let ratio = (norm3(&sf.qv) / norm3(&s0.qv)).max(norm3(&sf.w) / norm3(&s0.w));
    res.summary.push(("qv_ratio".into(), format!("{:.6e}", norm3(&sf.qv) / norm3(&s0.qv))));
    res.summary.push(("w_ratio".into(), format!("{:.6e}", norm3(&sf.w) / norm3(&s0.w))));
    let w1: Vec<f64> = states.iter().map(|s| s.w[0].abs()).collect();
    if let Ok(fit) = fit_decay_rate(&traj.times, &w1, 0.5) {
        res.summary.push(("w1_log_slope".into(), format!("{:.6}", fit.slope)));
    }
    ratio_check(c, Some(1e-2), ratio, &mut res.checks);
    Ok(())
}

/// Parses, runs and checks one scenario. `base` resolves relative paths.
pub fn run(cfg: &Config, base: &Path) -> Result<RunResult, Failure> {
    let mode = Mode::parse(cfg)?;
    let default_horizon = if mode == Mode::Spacecraft { spacecraft::REFERENCE_HORIZON } else { 60.0 };
    let c = Common {
        horizon: cfg.positive("horizon", default_horizon)?,
        dt: cfg.positive("dt", 1e-3)?,
        stride: cfg.get_or("stride", 10usize)?.max(1),
        seed: cfg.get_or("seed", 0u64)?,
        pe_window: cfg.get("pe.window")?,
        final_ratio: cfg.get("assert.final_ratio")?,
    };
    if c.dt > c.horizon {
        return Err(cfg.err("dt", format!("step {} exceeds the horizon {}", c.dt, c.horizon)).into());
    }
    let mut res = RunResult {
        mode,
        columns: Vec::new(),
        rows: Vec::new(),
        manifest: vec![
            ("version".into(), env!("CARGO_PKG_VERSION").into()),
            ("mode".into(), mode.name().into()),
            ("horizon".into(), c.horizon.to_string()),
            ("dt".into(), c.dt.to_string()),
            ("stride".into(), c.stride.to_string()),
            ("seed".into(), c.seed.to_string()),
        ],
        summary: Vec::new(),
        checks: Vec::new(),
    };
    match mode {
        Mode::Theorem1 => run_theorem1_mode(cfg, base, &c, &mut res)?,
        Mode::Adaptive => run_adaptive_mode(cfg, base, &c, &mut res)?,
        Mode::Observer => run_observer_mode(cfg, base, &c, &mut res)?,
        Mode::Spacecraft => run_spacecraft_mode(cfg, &c, &mut res)?,
    }
    Ok(res)
}

//! Batch front end. A run reads an optional JSON config
//! `{"model": {...}, "<command>": {...}}`, executes one subcommand, writes its
//! artifacts into the output directory and always leaves a `summary.json`.
//!
//! Exit codes: 0 success, 2 validation error, 3 numerical failure.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::control::{self, ControlKind};
use crate::dynamics::{self, ModalBasis, QuadratureConfig, SpectralState, Subspace};
use crate::error::{Error, Result};
use crate::model::{self, FluidParams};
use crate::observability;
use crate::output::{self, Field};
use crate::spectral::{self, ModeEigenSystem, SpectralTolerances};
use crate::stabilize;

#[derive(Parser, Debug)]
#[command(name = "maxwell-ns", version, about = "Spectral control toolkit for linearized compressible flow with Maxwell's law")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
    /// JSON config with a "model" block and at most one command block.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Overrides the seed of randomized inputs.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for the parallel parts.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmd {
    /// Eigenvalues per mode: spectrum.csv, eigenvalues.svg.
    Spectrum,
    /// Free evolution of a random state: trajectory.csv, snapshots.
    Simulate,
    /// Exact control synthesis: control.csv.
    Control,
    /// Observability constant: observability.json.
    Observability,
    /// Frame bounds of the exponential family: ingham.json.
    Ingham,
    /// Small-time lack of controllability sweep: lack.csv.
    Lack,
    /// Gramian feedback: stabilize.json, trajectory.csv.
    Stabilize,
}

impl Cmd {
    pub fn name(self) -> &'static str {
        match self {
            Cmd::Spectrum => "spectrum",
            Cmd::Simulate => "simulate",
            Cmd::Control => "control",
            Cmd::Observability => "observability",
            Cmd::Ingham => "ingham",
            Cmd::Lack => "lack",
            Cmd::Stabilize => "stabilize",
        }
    }

    const ALL: [Cmd; 7] = [
        Cmd::Spectrum,
        Cmd::Simulate,
        Cmd::Control,
        Cmd::Observability,
        Cmd::Ingham,
        Cmd::Lack,
        Cmd::Stabilize,
    ];
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumConfig {
    pub n_max: usize,
    pub tol_mult: f64,
    pub tol_psi: f64,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        let t = SpectralTolerances::default();
        SpectrumConfig { n_max: 30, tol_mult: t.tol_mult, tol_psi: t.tol_psi }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub big_n: usize,
    pub t_end: f64,
    pub records: usize,
    pub subspace: Subspace,
    pub seed: u64,
    /// Times at which physical snapshots are written.
    pub snapshots: Vec<f64>,
    pub grid: usize,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            big_n: 16,
            t_end: 5.0,
            records: 100,
            subspace: Subspace::Zmm,
            seed: 7,
            snapshots: vec![0.0, 5.0],
            grid: 128,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlConfig {
    pub kind: ControlKind,
    pub big_n: usize,
    /// Horizon; defaults to 1 for everywhere control and 1.2·T0 otherwise.
    pub t: Option<f64>,
    pub seed: u64,
    /// Steer to a second random state drawn from seed + 1.
    pub two_point: bool,
    pub interval: (f64, f64),
    pub zero_mean: bool,
    pub samples: usize,
    pub quadrature: QuadratureConfig,
}

impl Default for ControlConfig {
    fn default() -> Self {
        ControlConfig {
            kind: ControlKind::EverywhereDensity,
            big_n: 32,
            t: None,
            seed: 7,
            two_point: false,
            interval: (0.0, PI),
            zero_mean: true,
            samples: 201,
            quadrature: QuadratureConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservabilityConfig {
    pub big_n: usize,
    /// Horizon; defaults to 1.2·T0.
    pub t: Option<f64>,
    /// Boundary kind, or localized_density for the interior constant on `interval`.
    pub kind: ControlKind,
    pub interval: (f64, f64),
}

impl Default for ObservabilityConfig {
    fn default() -> Self {
        ObservabilityConfig { big_n: 8, t: None, kind: ControlKind::BoundaryDensity, interval: (0.0, PI) }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InghamConfig {
    pub big_n: usize,
    /// Horizon; defaults to 1.1·T0.
    pub t: Option<f64>,
}

impl Default for InghamConfig {
    fn default() -> Self {
        InghamConfig { big_n: 12, t: None }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LackConfig {
    pub n_list: Vec<usize>,
    pub t: f64,
    pub interval: (f64, f64),
    pub panels_per_unit: usize,
    pub tail_drop: f64,
}

impl Default for LackConfig {
    fn default() -> Self {
        let o = observability::LackOptions::default();
        LackConfig {
            n_list: vec![4, 8, 16, 32],
            t: 2.0,
            interval: (0.0, PI),
            panels_per_unit: o.panels_per_unit,
            tail_drop: o.tail_drop,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilizeConfig {
    pub big_n: usize,
    pub omega: f64,
    pub kind: ControlKind,
    pub t_end: f64,
    /// Defaults to 0.1/max|λ|.
    pub dt: Option<f64>,
    pub stride: usize,
    pub seed: u64,
    /// Also run at 2N and report the change of nu_fit.
    pub spillover: bool,
}

impl Default for StabilizeConfig {
    fn default() -> Self {
        StabilizeConfig {
            big_n: 8,
            omega: 2.0,
            kind: ControlKind::BoundaryDensity,
            t_end: 10.0,
            dt: None,
            stride: 10,
            seed: 7,
            spillover: false,
        }
    }
}

/// A parsed configuration: the model and the block of one command.
#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub model: FluidParams,
    pub block: Value,
}

/// Parses a config document for `cmd`. Missing blocks take defaults.
pub fn parse_config(text: Option<&str>, cmd: Cmd) -> Result<RunConfig> {
    let doc: Value = match text {
        Some(t) => serde_json::from_str(t).map_err(|e| Error::Validation(vec![format!("config: {e}")]))?,
        None => json!({}),
    };
    let obj = doc
        .as_object()
        .ok_or_else(|| Error::Validation(vec!["config must be a JSON object".into()]))?;
    let mut errs = Vec::new();
    let mut blocks = Vec::new();
    for key in obj.keys() {
        if key == "model" {
            continue;
        }
        if Cmd::ALL.iter().any(|c| c.name() == key) {
            blocks.push(key.clone());
        } else {
            errs.push(format!("unknown config key '{key}'"));
        }
    }
    if blocks.len() > 1 {
        errs.push(format!("exactly one command block allowed, found {}", blocks.join(", ")));
    }
    if let Some(b) = blocks.first() {
        if b != cmd.name() {
            errs.push(format!("config block '{b}' does not match command '{}'", cmd.name()));
        }
    }
    if !errs.is_empty() {
        return Err(Error::Validation(errs));
    }
    let model = match obj.get("model") {
        Some(m) => serde_json::from_value(m.clone()).map_err(|e| Error::Validation(vec![format!("model: {e}")]))?,
        None => FluidParams::unit(),
    };
    let v = model::validate(&model);
    if !v.is_empty() {
        return Err(Error::Validation(v));
    }
    let block = obj.get(cmd.name()).cloned().unwrap_or_else(|| json!({}));
    if !block.is_object() {
        return Err(Error::Validation(vec![format!("'{}' block must be an object", cmd.name())]));
    }
    Ok(RunConfig { model, block })
}

fn block<T: DeserializeOwned + Serialize>(cfg: &RunConfig, name: &str) -> Result<T> {
    serde_json::from_value(cfg.block.clone()).map_err(|e| Error::Validation(vec![format!("{name}: {e}")]))
}

fn positive(errs: &mut Vec<String>, name: &str, v: f64) {
    if !(v > 0.0 && v.is_finite()) {
        errs.push(format!("{name} must be positive"));
    }
}

fn check(errs: Vec<String>) -> Result<()> {
    if errs.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(errs))
    }
}

/// A finished command: key scalars, the echoed block and files to write.
struct Outcome {
    echo: Value,
    results: Value,
    files: Vec<(String, Vec<u8>)>,
}

fn csv(name: &str, header: &[&str], rows: &[Vec<Field>]) -> (String, Vec<u8>) {
    (name.to_string(), output::csv_string(header, rows).into_bytes())
}

fn json_file(name: &str, v: &Value) -> Result<(String, Vec<u8>)> {
    let s = serde_json::to_string_pretty(v).map_err(|e| Error::Io(e.to_string()))?;
    Ok((name.to_string(), (s + "\n").into_bytes()))
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn run_spectrum(p: &FluidParams, c: SpectrumConfig) -> Result<Outcome> {
    let mut errs = Vec::new();
    positive(&mut errs, "tol_mult", c.tol_mult);
    positive(&mut errs, "tol_psi", c.tol_psi);
    if c.n_max == 0 {
        errs.push("n_max must be at least 1".into());
    }
    check(errs)?;
    let tol = SpectralTolerances { tol_mult: c.tol_mult, tol_psi: c.tol_psi };
    let roots = spectral::solve_beta_cubic(p)?;
    let nn = c.n_max as i64;
    let mut rows = Vec::new();
    let mut pts = Vec::new();
    let mut edge = [0.0f64; 3];
    for n in -nn..=nn {
        if n == 0 {
            rows.push(vec![Field::Int(0), Field::Int(0), 0.0.into(), 0.0.into(), (2.0 * PI * p.b()).sqrt().into(), 1.0.into(), 0.0.into(), Field::Int(0)]);
            pts.push((0.0, 0.0));
            continue;
        }
        let sys = ModeEigenSystem::compute_with(p, &roots, n, &tol)?;
        for l in 0..3 {
            let z = sys.lambdas[l];
            rows.push(vec![
                Field::Int(n),
                Field::Int(l as i64 + 1),
                z.re.into(),
                z.im.into(),
                sys.theta[l].into(),
                sys.psi[l].re.into(),
                sys.psi[l].im.into(),
                sys.multiplicity_flag.into(),
            ]);
            pts.push((z.re, z.im));
            if n.unsigned_abs() as usize == c.n_max {
                edge[l] += 0.5 * z.re;
            }
        }
    }
    let svg = output::svg_scatter(&pts, &format!("eigenvalues, |n| <= {}", c.n_max))?;
    let header = ["n", "branch", "re_lambda", "im_lambda", "theta", "re_psi", "im_psi", "mult_flag"];
    let dev: Vec<f64> = (0..3).map(|j| (edge[j] + roots.omega[j]).abs()).collect();
    Ok(Outcome {
        echo: serde_json::to_value(&c).unwrap_or(Value::Null),
        results: json!({
            "beta": roots.beta,
            "omega": roots.omega,
            "edge_real_means": edge,
            "edge_deviation_from_minus_omega": dev,
            "T0": observability::minimal_time_from_roots(&roots),
            "points": pts.len(),
        }),
        files: vec![csv("spectrum.csv", &header, &rows), ("eigenvalues.svg".into(), svg.into_bytes())],
    })
}

fn run_simulate(p: &FluidParams, c: SimulateConfig) -> Result<Outcome> {
    let mut errs = Vec::new();
    positive(&mut errs, "t_end", c.t_end);
    if c.records == 0 {
        errs.push("records must be at least 1".into());
    }
    if c.snapshots.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
        errs.push("snapshot times must be nonnegative".into());
    }
    check(errs)?;
    let basis = ModalBasis::new(p, c.big_n)?;
    let z0 = SpectralState::random(c.big_n, c.subspace, &mut rng(c.seed));
    let (rec, fin) = dynamics::evolve(&basis, &z0, c.t_end, None, c.records, QuadratureConfig::default());
    let (h, rows) = output::trajectory_table(&rec);
    let mut files = vec![csv("trajectory.csv", &h, &rows)];
    for &t in &c.snapshots {
        let s = basis.propagate(&z0, t);
        let samples = dynamics::synthesize_physical(&s, c.grid)?;
        let rows: Vec<Vec<Field>> = samples
            .iter()
            .enumerate()
            .map(|(j, v)| {
                let x = 2.0 * PI * j as f64 / c.grid as f64;
                vec![x.into(), v[0].re.into(), v[1].re.into(), v[2].re.into()]
            })
            .collect();
        files.push(csv(&format!("snapshot_t{t}.csv"), &["x", "rho", "u", "S"], &rows));
    }
    let e0 = rec.energies[0];
    let ef = dynamics::energy_norm(&fin, p).powi(2);
    let emax = rec.energies.iter().copied().fold(0.0, f64::max);
    Ok(Outcome {
        echo: serde_json::to_value(&c).unwrap_or(Value::Null),
        results: json!({ "energy_initial": e0, "energy_final": ef, "energy_max_over_initial": emax / e0 }),
        files,
    })
}

fn run_control(p: &FluidParams, c: ControlConfig) -> Result<Outcome> {
    let t0 = observability::minimal_time(p)?;
    let t = c.t.unwrap_or(if c.kind == ControlKind::EverywhereDensity { 1.0 } else { 1.2 * t0 });
    let mut errs = Vec::new();
    positive(&mut errs, "t", t);
    if c.samples < 2 {
        errs.push("samples must be at least 2".into());
    }
    check(errs)?;
    let basis = ModalBasis::new(p, c.big_n)?;
    let sub = if c.kind.is_boundary() { Subspace::Zmm } else { Subspace::Zm };
    let z0 = SpectralState::random(c.big_n, sub, &mut rng(c.seed));
    let target = c.two_point.then(|| SpectralState::random(c.big_n, sub, &mut rng(c.seed.wrapping_add(1))));
    let tg = target.as_ref();
    let times: Vec<f64> = (0..c.samples).map(|k| t * k as f64 / (c.samples - 1) as f64).collect();
    let nn = c.big_n as i64;
    let coeff_rows = |f: &dyn Fn(i64, f64) -> crate::C64| -> Vec<Vec<Field>> {
        let mut rows = Vec::new();
        for &s in &times {
            for n in -nn..=nn {
                let v = f(n, s);
                rows.push(vec![s.into(), Field::Int(n), v.re.into(), v.im.into()]);
            }
        }
        rows
    };
    let (residual, norm, cond, file) = match c.kind {
        ControlKind::EverywhereDensity => {
            let ctl = control::synthesize_everywhere_control(&basis, &z0, tg, t)?;
            let r = control::everywhere_residual(&basis, &z0, tg, &ctl, c.quadrature);
            let rows = coeff_rows(&|n, s| ctl.coefficient(n, s));
            (r, ctl.norm(), ctl.max_cond, csv("control.csv", &["t", "n", "re_f", "im_f"], &rows))
        }
        ControlKind::LocalizedDensity => {
            let ctl = control::synthesize_localized_control(&basis, &z0, tg, t, c.interval)?;
            let r = control::localized_residual(&basis, &z0, tg, &ctl, c.quadrature);
            let rows = coeff_rows(&|n, s| ctl.localized_coefficient(p, n, s));
            (r, ctl.norm, ctl.cond, csv("control.csv", &["t", "n", "re_f", "im_f"], &rows))
        }
        kind => {
            let ctl = control::synthesize_boundary_control(&basis, &z0, tg, t, kind, c.zero_mean)?;
            let r = control::boundary_residual(&basis, &z0, tg, &ctl, c.quadrature);
            let rows: Vec<Vec<Field>> = times
                .iter()
                .map(|&s| {
                    let q = ctl.boundary_value(s);
                    vec![s.into(), q.re.into(), q.im.into()]
                })
                .collect();
            (r, ctl.norm, ctl.cond, csv("control.csv", &["t", "re_q", "im_q"], &rows))
        }
    };
    let mut echo = serde_json::to_value(&c).unwrap_or(Value::Null);
    echo["t"] = json!(t);
    Ok(Outcome {
        echo,
        results: json!({ "residual": residual, "control_norm": norm, "gramian_cond": cond, "T0": t0 }),
        files: vec![file],
    })
}

fn run_observability(p: &FluidParams, c: ObservabilityConfig) -> Result<Outcome> {
    let t0 = observability::minimal_time(p)?;
    let t = c.t.unwrap_or(1.2 * t0);
    let report = match c.kind {
        k if k.is_boundary() => observability::boundary_observability_constant(p, c.big_n, t, k)?,
        ControlKind::LocalizedDensity => observability::interior_observability_constant(p, c.big_n, t, c.interval)?,
        ControlKind::EverywhereDensity => observability::interior_observability_constant(p, c.big_n, t, (0.0, 2.0 * PI))?,
        _ => unreachable!(),
    };
    let mut v = json!({
        "N": report.big_n,
        "T": report.horizon,
        "lambda_min": report.lambda_min,
        "lambda_max": report.lambda_max,
        "cond": report.cond,
    });
    if c.kind.is_boundary() {
        v["kind"] = serde_json::to_value(c.kind).unwrap_or(Value::Null);
    } else {
        v["O"] = json!(report.label);
    }
    let mut echo = serde_json::to_value(&c).unwrap_or(Value::Null);
    echo["t"] = json!(t);
    Ok(Outcome { echo, results: v.clone(), files: vec![json_file("observability.json", &v)?] })
}

fn run_ingham(p: &FluidParams, c: InghamConfig) -> Result<Outcome> {
    let t0 = observability::minimal_time(p)?;
    let t = c.t.unwrap_or(1.1 * t0);
    let (lo, hi) = observability::ingham_frame_bounds(p, c.big_n, t)?;
    let v = json!({ "N": c.big_n, "T": t, "T0": t0, "c1_hat": lo, "c2_hat": hi, "cond": hi / lo });
    let mut echo = serde_json::to_value(&c).unwrap_or(Value::Null);
    echo["t"] = json!(t);
    Ok(Outcome { echo, results: v.clone(), files: vec![json_file("ingham.json", &v)?] })
}

fn run_lack(p: &FluidParams, c: LackConfig) -> Result<Outcome> {
    let mut errs = Vec::new();
    positive(&mut errs, "t", c.t);
    positive(&mut errs, "tail_drop", c.tail_drop);
    if c.n_list.len() < 2 {
        errs.push("n_list needs at least two truncations".into());
    }
    if c.panels_per_unit == 0 {
        errs.push("panels_per_unit must be at least 1".into());
    }
    check(errs)?;
    let roots = spectral::solve_beta_cubic(p)?;
    let bump = observability::admissible_profile(&roots, c.t, c.interval)?;
    let opts = observability::LackOptions { panels_per_unit: c.panels_per_unit, tail_drop: c.tail_drop };
    let r = observability::lack_experiment_with(p, &c.n_list, c.t, c.interval, bump, opts)?;
    let rows: Vec<Vec<Field>> = r
        .n_list
        .iter()
        .zip(&r.ratios)
        .map(|(n, q)| vec![Field::from(*n), (*q).into(), r.slope.into()])
        .collect();
    Ok(Outcome {
        echo: serde_json::to_value(&c).unwrap_or(Value::Null),
        results: json!({ "slope": r.slope, "ratios": r.ratios, "branch": r.branch + 1, "support": r.support, "truncation": r.truncation }),
        files: vec![csv("lack.csv", &["N", "ratio", "slope"], &rows)],
    })
}

fn run_stabilize(p: &FluidParams, c: StabilizeConfig) -> Result<Outcome> {
    let mut errs = Vec::new();
    positive(&mut errs, "t_end", c.t_end);
    if let Some(dt) = c.dt {
        positive(&mut errs, "dt", dt);
    }
    check(errs)?;
    let mut warnings = Vec::new();
    if c.big_n > 16 {
        warnings.push(format!("N = {} above 16: the weighted Gramian degrades quickly", c.big_n));
    }
    let fit = |n: usize| -> Result<(stabilize::FeedbackLaw, dynamics::TrajectoryRecord, f64)> {
        let law = stabilize::build_feedback(p, n, c.omega, c.kind)?;
        let z0 = SpectralState::random(n, Subspace::Zmm, &mut rng(c.seed));
        let dt = c.dt.unwrap_or_else(|| stabilize::default_step(&law));
        let tr = stabilize::closed_loop_simulate(&law, &z0, c.t_end, dt, c.stride)?;
        let nu = stabilize::fit_decay_rate(&tr)?;
        Ok((law, tr, nu))
    };
    let (law, tr, nu) = fit(c.big_n)?;
    let mut v = json!({
        "omega": c.omega,
        "N": c.big_n,
        "kind": serde_json::to_value(c.kind).unwrap_or(Value::Null),
        "nu_fit": nu,
        "closed_loop_abscissa": law.closed_loop_abscissa(),
        "cond_M": law.cond_m,
        "target_abscissa": law.target_abscissa(),
        "growth_threshold": law.growth,
        "gain_bound": law.gain_bound(),
        "energy_final_over_initial": tr.energies.last().copied().unwrap_or(f64::NAN) / tr.energies[0],
    });
    if c.spillover {
        let (_, _, nu2) = fit(2 * c.big_n)?;
        v["nu_fit_2N"] = json!(nu2);
        v["spillover"] = json!(nu2 - nu);
    }
    let (h, rows) = output::trajectory_table(&tr);
    let mut results = v.clone();
    results["warnings"] = json!(warnings);
    Ok(Outcome {
        echo: serde_json::to_value(&c).unwrap_or(Value::Null),
        results,
        files: vec![json_file("stabilize.json", &v)?, csv("trajectory.csv", &h, &rows)],
    })
}

fn execute(cmd: Cmd, cfg: &RunConfig, seed: Option<u64>) -> Result<Outcome> {
    let p = &cfg.model;
    macro_rules! with_seed {
        ($t:ty, $name:expr) => {{
            let mut c: $t = block(cfg, $name)?;
            if let Some(s) = seed {
                c.seed = s;
            }
            c
        }};
    }
    match cmd {
        Cmd::Spectrum => run_spectrum(p, block(cfg, "spectrum")?),
        Cmd::Simulate => run_simulate(p, with_seed!(SimulateConfig, "simulate")),
        Cmd::Control => run_control(p, with_seed!(ControlConfig, "control")),
        Cmd::Observability => run_observability(p, block(cfg, "observability")?),
        Cmd::Ingham => run_ingham(p, block(cfg, "ingham")?),
        Cmd::Lack => run_lack(p, block(cfg, "lack")?),
        Cmd::Stabilize => run_stabilize(p, with_seed!(StabilizeConfig, "stabilize")),
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_validation() {
        2
    } else {
        3
    }
}

/// Runs one command and writes all artifacts; returns the exit code.
pub fn run(cli: &Cli) -> i32 {
    if let Some(k) = cli.threads {
        if k == 0 {
            return finish(cli, None, Err(Error::Validation(vec!["threads must be at least 1".into()])));
        }
        // A second global pool in the same process is an error we can ignore.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
    }
    let text = match &cli.config {
        Some(path) => match fs::read_to_string(path) {
            Ok(t) => Some(t),
            Err(e) => return finish(cli, None, Err(Error::Validation(vec![format!("cannot read config {}: {e}", path.display())]))),
        },
        None => None,
    };
    let cfg = match parse_config(text.as_deref(), cli.command) {
        Ok(c) => c,
        Err(e) => return finish(cli, None, Err(e)),
    };
    let res = execute(cli.command, &cfg, cli.seed);
    finish(cli, Some(&cfg), res)
}

fn finish(cli: &Cli, cfg: Option<&RunConfig>, res: Result<Outcome>) -> i32 {
    let out = &cli.out;
    if let Err(e) = fs::create_dir_all(out) {
        eprintln!("cannot create output directory {}: {e}", out.display());
        return 2;
    }
    let mut summary = json!({
        "command": cli.command.name(),
        "seed_override": cli.seed,
        "threads": cli.threads,
        "model": cfg.map(|c| serde_json::to_value(c.model).unwrap_or(Value::Null)),
    });
    let code = match res {
        Ok(o) => match write_files(out, &o.files) {
            Ok(names) => {
                summary["inputs"] = o.echo;
                summary["results"] = o.results;
                summary["artifacts"] = json!(names);
                summary["status"] = json!("ok");
                0
            }
            Err(e) => {
                summary["status"] = json!("error");
                summary["error"] = json!(e.to_string());
                exit_code(&e)
            }
        },
        Err(e) => {
            summary["status"] = json!("error");
            summary["error"] = json!(e.to_string());
            eprintln!("{e}");
            exit_code(&e)
        }
    };
    summary["exit_code"] = json!(code);
    if let Err(e) = output::write_json(&out.join("summary.json"), &summary) {
        eprintln!("{e}");
        return 2;
    }
    code
}

fn write_files(dir: &Path, files: &[(String, Vec<u8>)]) -> Result<Vec<String>> {
    for (name, bytes) in files {
        fs::write(dir.join(name), bytes)?;
    }
    Ok(files.iter().map(|f| f.0.clone()).collect())
}

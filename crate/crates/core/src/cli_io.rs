//! Run configuration, initial-data presets, orchestration and output files.
//!
//! # Configuration grammar
//!
//! A configuration is UTF-8 text made of `key = value` lines. `#` starts a
//! comment. `[section]` lines open a section; every key has one home
//! section and may be written either before any header or inside that
//! section. Unknown keys, misplaced keys and duplicates are errors, and all
//! errors are reported together.
//!
//! | section        | keys |
//! |----------------|------|
//! | `[run]`        | `mode`, `dim`, `n`, `t_end`, `seed`, `output_dir`, `record_stride`, `state_stride` |
//! | `[numerics]`   | `cfl`, `dt`, `formulation` |
//! | `[model]`      | `kernel`, `scenario`, `amplitude`, `rho0`, `u0`, `u1` |
//! | `[diagnostics]`| `sigma`, `sigma_scan`, `sobolev_s`, `fit_window` |
//! | `[particles]`  | `n_particles`, `particle_dt` |
//! | `[kinetic]`    | `eps`, `seeds`, `moment_n`, `relax_n`, `dt_factor` |
//! | `[sweep]`      | `parameter`, `values`, `sweep_mode` |
//!
//! Lists are comma separated. `rho0`, `u0`, `u1` are arithmetic
//! expressions in `x` and `y` that replace the scenario.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::{json, Map, Number, Value};
use thiserror::Error;

use crate::diagnostics::{equivalence_scan, fit_decay_rate, DecayFit, DiagnosticsRecord};
use crate::dynamics::{Closure, FluidState, Formulation};
use crate::grid::{make_grid, Field, PeriodicGrid, VectorField};
use crate::integrator::{run, RunSpec, Termination, Trajectory, DEFAULT_CFL};
use crate::kernel::{build_kernel, Kernel, KernelSpec};
use crate::particles::{
    cs_step, langevin_dt_limit, langevin_step, maxwellian_velocities, moments, random_ensemble,
    relative_entropy_gap, restrict, stratified_positions, velocity_diameter, EntropyGap,
    ParticleEnsemble,
};

pub const VERSION: &str = concat!("euler-align ", env!("CARGO_PKG_VERSION"));

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Fluid,
    Pressureless,
    Particles,
    Kinetic,
    Sweep,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Fluid => "fluid",
            Mode::Pressureless => "pressureless",
            Mode::Particles => "particles",
            Mode::Kinetic => "kinetic",
            Mode::Sweep => "sweep",
        }
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "fluid" => Mode::Fluid,
            "pressureless" => Mode::Pressureless,
            "particles" => Mode::Particles,
            "kinetic" => Mode::Kinetic,
            "sweep" => Mode::Sweep,
            _ => return Err(format!("unknown mode `{s}`")),
        })
    }
}

/// Named initial data.
///
/// * `small_perturbation`: `ρ = 1 + A cos 2πx`, `u = A sin 2πx` in 1D;
///   `ρ = 1 + A cos 2πx cos 2πy`, `u = (A sin 2πx, A sin 2πy)` in 2D.
///   `A = 0.05` by default.
/// * `two_bump_density`: `ρ ∝ e^{κ cos 2π(x−¼)} + e^{κ cos 2π(x−¾)}` with
///   unit mass, `u = 0`; `κ = amplitude`, default 2.
/// * `shear_velocity_2d`: `ρ = 1`, `u = (A sin 2πy, 0.1 A sin 2πx)`.
/// * `counterflow_particles`: uniform random positions, half the agents
///   moving with velocity `+e₁`, half with `−e₁`.
/// * `random_particles`: uniform positions and velocities in `[−1, 1]^d`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scenario {
    SmallPerturbation,
    TwoBumpDensity,
    ShearVelocity2d,
    CounterflowParticles,
    RandomParticles,
}

impl Scenario {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scenario::SmallPerturbation => "small_perturbation",
            Scenario::TwoBumpDensity => "two_bump_density",
            Scenario::ShearVelocity2d => "shear_velocity_2d",
            Scenario::CounterflowParticles => "counterflow_particles",
            Scenario::RandomParticles => "random_particles",
        }
    }

    fn is_particle_only(&self) -> bool {
        matches!(self, Scenario::CounterflowParticles | Scenario::RandomParticles)
    }

    fn default_amplitude(&self) -> f64 {
        match self {
            Scenario::TwoBumpDensity => 2.0,
            _ => 0.05,
        }
    }
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "small_perturbation" => Scenario::SmallPerturbation,
            "two_bump_density" => Scenario::TwoBumpDensity,
            "shear_velocity_2d" => Scenario::ShearVelocity2d,
            "counterflow_particles" => Scenario::CounterflowParticles,
            "random_particles" => Scenario::RandomParticles,
            _ => return Err(format!("unknown scenario `{s}`")),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub dim: usize,
    pub n: usize,
    pub t_end: f64,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub record_stride: usize,
    pub state_stride: usize,
    pub cfl: f64,
    pub dt: Option<f64>,
    pub formulation: Formulation,
    pub kernel: KernelSpec,
    pub scenario: Option<Scenario>,
    pub amplitude: Option<f64>,
    pub rho0: Option<String>,
    pub u0: Option<String>,
    pub u1: Option<String>,
    pub sigma: f64,
    pub sigma_scan: Vec<f64>,
    pub sobolev_s: f64,
    pub fit_window: Option<(f64, f64)>,
    pub n_particles: usize,
    pub particle_dt: Option<f64>,
    pub eps: Vec<f64>,
    pub seeds: usize,
    pub moment_n: usize,
    pub relax_n: usize,
    pub dt_factor: f64,
    pub parameter: Option<String>,
    pub values: Vec<String>,
    pub sweep_mode: Mode,
}

const KEYS: &[(&str, &str)] = &[
    ("mode", "run"),
    ("dim", "run"),
    ("n", "run"),
    ("t_end", "run"),
    ("seed", "run"),
    ("output_dir", "run"),
    ("record_stride", "run"),
    ("state_stride", "run"),
    ("cfl", "numerics"),
    ("dt", "numerics"),
    ("formulation", "numerics"),
    ("kernel", "model"),
    ("scenario", "model"),
    ("amplitude", "model"),
    ("rho0", "model"),
    ("u0", "model"),
    ("u1", "model"),
    ("sigma", "diagnostics"),
    ("sigma_scan", "diagnostics"),
    ("sobolev_s", "diagnostics"),
    ("fit_window", "diagnostics"),
    ("n_particles", "particles"),
    ("particle_dt", "particles"),
    ("eps", "kinetic"),
    ("seeds", "kinetic"),
    ("moment_n", "kinetic"),
    ("relax_n", "kinetic"),
    ("dt_factor", "kinetic"),
    ("parameter", "sweep"),
    ("values", "sweep"),
    ("sweep_mode", "sweep"),
];

fn home_section(key: &str) -> Option<&'static str> {
    KEYS.iter().find(|(k, _)| *k == key).map(|(_, s)| *s)
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid configuration:\n  {}", .errors.join("\n  "))]
pub struct ConfigError {
    pub errors: Vec<String>,
}

#[derive(Debug, Error)]
pub enum AppError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{0}")]
    Run(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> AppError + '_ {
    move |source| AppError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',')
        .map(|p| p.trim().to_string())
        .filter(|p| !p.is_empty())
        .collect()
}

fn format_list(xs: &[f64]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

/// Splits text into raw `key → value` pairs, checking sections.
fn raw_entries(text: &str, errors: &mut Vec<String>) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut section: Option<String> = None;
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = match line.find('#') {
            Some(i) => &line[..i],
            None => line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            match rest.strip_suffix(']') {
                Some(name) => {
                    let name = name.trim();
                    if KEYS.iter().any(|(_, s)| *s == name) {
                        section = Some(name.to_string());
                    } else {
                        errors.push(format!("line {lineno}: unknown section [{name}]"));
                        section = Some(name.to_string());
                    }
                }
                None => errors.push(format!("line {lineno}: malformed section header")),
            }
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            errors.push(format!("line {lineno}: expected `key = value`"));
            continue;
        };
        let (key, value) = (key.trim(), value.trim());
        match home_section(key) {
            None => errors.push(format!("line {lineno}: unknown key `{key}`")),
            Some(home) => {
                if let Some(s) = &section {
                    if s != home {
                        errors.push(format!(
                            "line {lineno}: key `{key}` belongs in [{home}], not [{s}]"
                        ));
                        continue;
                    }
                }
                if out.insert(key.to_string(), value.to_string()).is_some() {
                    errors.push(format!("line {lineno}: duplicate key `{key}`"));
                }
            }
        }
    }
    out
}

/// Parses a configuration; see the module documentation for the grammar.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    parse_config_with(text, &[])
}

/// Like [`parse_config`], with `overrides` replacing values from the text.
pub fn parse_config_with(text: &str, overrides: &[(String, String)]) -> Result<RunConfig, ConfigError> {
    let mut errors = Vec::new();
    let mut raw = raw_entries(text, &mut errors);
    for (k, v) in overrides {
        if home_section(k).is_none() {
            errors.push(format!("unknown key `{k}`"));
        } else {
            raw.insert(k.clone(), v.clone());
        }
    }
    let cfg = build(&raw, &mut errors);
    if errors.is_empty() {
        Ok(cfg.expect("config is complete when no errors were recorded"))
    } else {
        Err(ConfigError { errors })
    }
}

struct Fields<'a> {
    raw: &'a BTreeMap<String, String>,
    errors: &'a mut Vec<String>,
}

impl Fields<'_> {
    fn get<T: FromStr>(&mut self, key: &str) -> Option<T> {
        let v = self.raw.get(key)?;
        match v.parse::<T>() {
            Ok(x) => Some(x),
            Err(_) => {
                self.errors.push(format!("`{key}`: cannot parse `{v}`"));
                None
            }
        }
    }

    fn or<T: FromStr>(&mut self, key: &str, default: T) -> T {
        if self.raw.contains_key(key) {
            self.get(key).unwrap_or(default)
        } else {
            default
        }
    }

    fn list(&mut self, key: &str, default: &[f64]) -> Vec<f64> {
        match self.raw.get(key) {
            None => default.to_vec(),
            Some(v) => {
                let mut out = Vec::new();
                for p in split_list(v) {
                    match p.parse::<f64>() {
                        Ok(x) => out.push(x),
                        Err(_) => self.errors.push(format!("`{key}`: cannot parse `{p}`")),
                    }
                }
                out
            }
        }
    }

    fn check(&mut self, ok: bool, msg: impl Into<String>) {
        if !ok {
            self.errors.push(msg.into());
        }
    }
}

fn check_expression(key: &str, src: &str, errors: &mut Vec<String>) {
    match meval::Expr::from_str(src) {
        Err(e) => errors.push(format!("`{key}`: {e}")),
        Ok(expr) => {
            if let Err(e) = expr.bind2("x", "y") {
                errors.push(format!("`{key}`: {e}"));
            }
        }
    }
}

fn build(raw: &BTreeMap<String, String>, errors: &mut Vec<String>) -> Option<RunConfig> {
    let mut f = Fields { raw, errors };
    let mode: Option<Mode> = match raw.get("mode") {
        None => {
            f.errors.push("missing required key `mode`".into());
            None
        }
        Some(v) => v.parse().map_err(|e: String| f.errors.push(e)).ok(),
    };
    let dim = f.or("dim", 1usize);
    f.check(dim == 1 || dim == 2, format!("dim must be 1 or 2, got {dim}"));
    let n = f.or("n", 128usize);
    f.check(
        n.is_power_of_two() && n >= 8,
        format!("n must be a power of two >= 8, got {n}"),
    );
    let t_end: Option<f64> = f.get("t_end");
    if let Some(t) = t_end {
        f.check(t >= 0.0 && t.is_finite(), format!("t_end must be >= 0, got {t}"));
    }
    let seed = f.or("seed", 0u64);
    let output_dir = PathBuf::from(raw.get("output_dir").map(String::as_str).unwrap_or("out"));
    let record_stride = f.or("record_stride", 10usize);
    f.check(record_stride >= 1, "record_stride must be >= 1");
    let state_stride = f.or("state_stride", 100usize);
    f.check(state_stride >= 1, "state_stride must be >= 1");
    let cfl = f.or("cfl", DEFAULT_CFL);
    f.check(cfl > 0.0 && cfl <= 1.0, format!("cfl must lie in (0, 1], got {cfl}"));
    let dt: Option<f64> = f.get("dt");
    if let Some(dt) = dt {
        f.check(dt > 0.0 && dt.is_finite(), format!("dt must be positive, got {dt}"));
    }
    let formulation = match raw.get("formulation").map(String::as_str) {
        None | Some("conservative") => Formulation::Conservative,
        Some("log") => Formulation::Log,
        Some(other) => {
            f.errors.push(format!("unknown formulation `{other}`"));
            Formulation::Conservative
        }
    };
    let kernel = match raw.get("kernel") {
        None => {
            f.errors.push("missing required key `kernel`".into());
            None
        }
        Some(v) => v
            .parse::<KernelSpec>()
            .map_err(|e| f.errors.push(format!("`kernel`: {e}")))
            .ok(),
    };
    let scenario: Option<Scenario> = raw
        .get("scenario")
        .and_then(|v| v.parse().map_err(|e: String| f.errors.push(e)).ok());
    let amplitude: Option<f64> = f.get("amplitude");
    let rho0 = raw.get("rho0").cloned();
    let u0 = raw.get("u0").cloned();
    let u1 = raw.get("u1").cloned();
    for (key, src) in [("rho0", &rho0), ("u0", &u0), ("u1", &u1)] {
        if let Some(src) = src {
            check_expression(key, src, f.errors);
        }
    }
    let sigma = f.or("sigma", 0.05);
    f.check(sigma >= 0.0, format!("sigma must be >= 0, got {sigma}"));
    let sigma_scan = f.list("sigma_scan", &[0.01, 0.02, 0.05, 0.1, 0.2]);
    f.check(
        sigma_scan.iter().all(|s| *s >= 0.0),
        "sigma_scan entries must be >= 0",
    );
    let sobolev_s = f.or("sobolev_s", 3.0);
    f.check(sobolev_s >= 0.0, "sobolev_s must be >= 0");
    let fit_window = match raw.get("fit_window") {
        None => None,
        Some(_) => {
            let w = f.list("fit_window", &[]);
            if w.len() == 2 && w[1] > w[0] {
                Some((w[0], w[1]))
            } else {
                f.errors.push("fit_window must be `t0, t1` with t1 > t0".into());
                None
            }
        }
    };
    let n_particles = f.or("n_particles", 64usize);
    f.check(n_particles >= 2, "n_particles must be >= 2");
    let particle_dt: Option<f64> = f.get("particle_dt");
    if let Some(dt) = particle_dt {
        f.check(dt > 0.0, "particle_dt must be positive");
    }
    let eps = f.list("eps", &[0.4, 0.2, 0.1, 0.05]);
    f.check(
        !eps.is_empty() && eps.iter().all(|e| *e > 0.0 && e.is_finite()),
        "eps entries must be positive",
    );
    let seeds = f.or("seeds", 4usize);
    f.check(seeds >= 1, "seeds must be >= 1");
    let moment_n = f.or("moment_n", 16usize);
    f.check(
        moment_n.is_power_of_two() && moment_n >= 8,
        format!("moment_n must be a power of two >= 8, got {moment_n}"),
    );
    let relax_n = f.or("relax_n", 64usize);
    f.check(
        relax_n.is_power_of_two() && relax_n >= 8,
        format!("relax_n must be a power of two >= 8, got {relax_n}"),
    );
    let dt_factor = f.or("dt_factor", 0.025);
    f.check(
        dt_factor > 0.0 && dt_factor <= 0.1,
        format!("dt_factor must lie in (0, 0.1], got {dt_factor}"),
    );
    let parameter = raw.get("parameter").cloned();
    let values = raw.get("values").map(|v| split_list(v)).unwrap_or_default();
    let sweep_mode: Mode = match raw.get("sweep_mode") {
        None => Mode::Fluid,
        Some(v) => v.parse().unwrap_or_else(|e: String| {
            f.errors.push(e);
            Mode::Fluid
        }),
    };

    let (mode, kernel) = (mode?, kernel);
    let effective = if mode == Mode::Sweep { sweep_mode } else { mode };
    if t_end.is_none() {
        f.errors.push(format!("missing required key `t_end` for mode {}", mode.as_str()));
    }
    let has_expr = rho0.is_some() || u0.is_some() || u1.is_some();
    match (scenario, has_expr) {
        (None, false) => f.errors.push(format!(
            "mode {} needs `scenario` or explicit `rho0`/`u0`",
            mode.as_str()
        )),
        (Some(_), true) => f
            .errors
            .push("`scenario` and explicit initial data are mutually exclusive".into()),
        _ => {}
    }
    if has_expr {
        if effective != Mode::Particles && rho0.is_none() {
            f.errors.push("explicit initial data needs `rho0`".into());
        }
        if u0.is_none() {
            f.errors.push("explicit initial data needs `u0`".into());
        }
        if dim == 2 && u1.is_none() {
            f.errors.push("explicit 2D initial data needs `u1`".into());
        }
        if dim == 1 && u1.is_some() {
            f.errors.push("`u1` is only valid for dim = 2".into());
        }
    }
    if let Some(s) = scenario {
        match effective {
            Mode::Fluid | Mode::Pressureless | Mode::Kinetic if s.is_particle_only() => f
                .errors
                .push(format!("scenario {} is only available in particles mode", s.as_str())),
            Mode::Particles if !s.is_particle_only() && dim == 2 => f.errors.push(format!(
                "scenario {} can seed particles only in 1D",
                s.as_str()
            )),
            _ => {}
        }
        if s == Scenario::ShearVelocity2d && dim != 2 {
            f.errors.push("scenario shear_velocity_2d requires dim = 2".into());
        }
    }
    if effective == Mode::Kinetic {
        if dim != 1 {
            f.errors.push("kinetic mode supports dim = 1 only".into());
        }
        if moment_n > n {
            f.errors.push("moment_n must not exceed n".into());
        }
    }
    if effective == Mode::Particles && has_expr && dim == 2 {
        f.errors.push("explicit particle initial data is supported in 1D only".into());
    }
    if mode == Mode::Sweep {
        match &parameter {
            None => f.errors.push("sweep mode needs `parameter`".into()),
            Some(p) => match home_section(p) {
                None => f.errors.push(format!("sweep parameter `{p}` is not a config key")),
                Some(home) if home == "sweep" || p == "mode" || p == "output_dir" => {
                    f.errors.push(format!("`{p}` cannot be swept"))
                }
                _ => {}
            },
        }
        if values.is_empty() {
            f.errors.push("sweep mode needs a nonempty `values` list".into());
        }
        if matches!(sweep_mode, Mode::Sweep | Mode::Kinetic) {
            f.errors.push("sweep_mode must be fluid, pressureless or particles".into());
        }
    }
    Some(RunConfig {
        mode,
        dim,
        n,
        t_end: t_end?,
        seed,
        output_dir,
        record_stride,
        state_stride,
        cfl,
        dt,
        formulation,
        kernel: kernel?,
        scenario,
        amplitude,
        rho0,
        u0,
        u1,
        sigma,
        sigma_scan,
        sobolev_s,
        fit_window,
        n_particles,
        particle_dt,
        eps,
        seeds,
        moment_n,
        relax_n,
        dt_factor,
        parameter,
        values,
        sweep_mode,
    })
}

impl RunConfig {
    /// Every set key with its textual value, in canonical order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let mut e: Vec<(&'static str, String)> = vec![
            ("mode", self.mode.as_str().into()),
            ("dim", self.dim.to_string()),
            ("n", self.n.to_string()),
            ("t_end", self.t_end.to_string()),
            ("seed", self.seed.to_string()),
            ("output_dir", self.output_dir.display().to_string()),
            ("record_stride", self.record_stride.to_string()),
            ("state_stride", self.state_stride.to_string()),
            ("cfl", self.cfl.to_string()),
        ];
        if let Some(dt) = self.dt {
            e.push(("dt", dt.to_string()));
        }
        e.push(("formulation", self.formulation.as_str().into()));
        e.push(("kernel", self.kernel.to_string()));
        if let Some(s) = self.scenario {
            e.push(("scenario", s.as_str().into()));
        }
        if let Some(a) = self.amplitude {
            e.push(("amplitude", a.to_string()));
        }
        for (k, v) in [("rho0", &self.rho0), ("u0", &self.u0), ("u1", &self.u1)] {
            if let Some(v) = v {
                e.push((k, v.clone()));
            }
        }
        e.push(("sigma", self.sigma.to_string()));
        e.push(("sigma_scan", format_list(&self.sigma_scan)));
        e.push(("sobolev_s", self.sobolev_s.to_string()));
        if let Some((a, b)) = self.fit_window {
            e.push(("fit_window", format_list(&[a, b])));
        }
        e.push(("n_particles", self.n_particles.to_string()));
        if let Some(dt) = self.particle_dt {
            e.push(("particle_dt", dt.to_string()));
        }
        e.push(("eps", format_list(&self.eps)));
        e.push(("seeds", self.seeds.to_string()));
        e.push(("moment_n", self.moment_n.to_string()));
        e.push(("relax_n", self.relax_n.to_string()));
        e.push(("dt_factor", self.dt_factor.to_string()));
        if let Some(p) = &self.parameter {
            e.push(("parameter", p.clone()));
        }
        if !self.values.is_empty() {
            e.push(("values", self.values.join(", ")));
        }
        e.push(("sweep_mode", self.sweep_mode.as_str().into()));
        e
    }

    /// Canonical text form; `parse_config(&c.to_text()) == Ok(c)`.
    pub fn to_text(&self) -> String {
        let entries = self.entries();
        let mut out = String::new();
        let mut sections: Vec<&str> = Vec::new();
        for (_, s) in KEYS {
            if !sections.contains(s) {
                sections.push(s);
            }
        }
        for s in sections {
            let keys: Vec<_> = entries
                .iter()
                .filter(|(k, _)| home_section(k) == Some(s))
                .collect();
            if keys.is_empty() {
                continue;
            }
            out.push_str(&format!("[{s}]\n"));
            for (k, v) in keys {
                out.push_str(&format!("{k} = {v}\n"));
            }
            out.push('\n');
        }
        out
    }

    fn amplitude_or_default(&self) -> f64 {
        self.amplitude
            .unwrap_or_else(|| self.scenario.map_or(0.05, |s| s.default_amplitude()))
    }

    pub fn fit_window_or_default(&self) -> (f64, f64) {
        self.fit_window.unwrap_or(if self.t_end > 2.0 {
            (2.0, self.t_end)
        } else {
            (0.0, self.t_end)
        })
    }
}

type Profile = Box<dyn Fn(f64, f64) -> f64>;

fn expression(src: &str) -> Result<Profile, AppError> {
    let expr = meval::Expr::from_str(src).map_err(|e| AppError::Run(e.to_string()))?;
    let f = expr.bind2("x", "y").map_err(|e| AppError::Run(e.to_string()))?;
    Ok(Box::new(f))
}

/// `(ρ₀, u₀)` as functions of position.
fn initial_profiles(cfg: &RunConfig) -> Result<(Profile, Vec<Profile>), AppError> {
    use std::f64::consts::PI;
    let tau = 2.0 * PI;
    let a = cfg.amplitude_or_default();
    let dim = cfg.dim;
    let Some(scenario) = cfg.scenario else {
        let rho = match &cfg.rho0 {
            Some(s) => expression(s)?,
            None => Box::new(|_, _| 1.0),
        };
        let mut u = vec![expression(cfg.u0.as_deref().unwrap_or("0"))?];
        if dim == 2 {
            u.push(expression(cfg.u1.as_deref().unwrap_or("0"))?);
        }
        return Ok((rho, u));
    };
    let zero = || -> Profile { Box::new(|_, _| 0.0) };
    Ok(match (scenario, dim) {
        (Scenario::SmallPerturbation, 1) => (
            Box::new(move |x, _| 1.0 + a * (tau * x).cos()),
            vec![Box::new(move |x, _| a * (tau * x).sin())],
        ),
        (Scenario::SmallPerturbation, _) => (
            Box::new(move |x, y| 1.0 + a * (tau * x).cos() * (tau * y).cos()),
            vec![
                Box::new(move |x, _| a * (tau * x).sin()),
                Box::new(move |_, y| a * (tau * y).sin()),
            ],
        ),
        (Scenario::TwoBumpDensity, _) => {
            let bumps = move |x: f64| {
                (a * (tau * (x - 0.25)).cos()).exp() + (a * (tau * (x - 0.75)).cos()).exp()
            };
            let m = 4096;
            let mass = (0..m).map(|i| bumps(i as f64 / m as f64)).sum::<f64>() / m as f64;
            (
                Box::new(move |x, _| bumps(x) / mass),
                (0..dim).map(|_| zero()).collect(),
            )
        }
        (Scenario::ShearVelocity2d, _) => (
            Box::new(|_, _| 1.0),
            vec![
                Box::new(move |_, y| a * (tau * y).sin()),
                Box::new(move |x, _| 0.1 * a * (tau * x).sin()),
            ],
        ),
        (s, _) => {
            return Err(AppError::Run(format!(
                "scenario {} has no fluid profile",
                s.as_str()
            )))
        }
    })
}

/// Initial fluid state on `grid`. Preset densities are rescaled to unit
/// discrete mass.
pub fn initial_fluid_state(cfg: &RunConfig, grid: &PeriodicGrid) -> Result<FluidState, AppError> {
    let (rho, u) = initial_profiles(cfg)?;
    let mut rho = Field::from_fn(grid, |x| rho(x[0], x[1]));
    if cfg.scenario.is_some() {
        let mass = rho.integral();
        rho = rho.scale(1.0 / mass);
    }
    let u = VectorField::new(u.iter().map(|f| Field::from_fn(grid, |x| f(x[0], x[1]))).collect())
        .map_err(|e| AppError::Run(e.to_string()))?;
    FluidState::from_primitive(cfg.formulation, rho, u, 0.0).map_err(|e| AppError::Run(e.to_string()))
}

/// Initial agents for particles mode.
pub fn initial_ensemble(cfg: &RunConfig) -> Result<ParticleEnsemble, AppError> {
    let count = cfg.n_particles;
    let run_err = |e: crate::particles::ParticleError| AppError::Run(e.to_string());
    match cfg.scenario {
        Some(Scenario::RandomParticles) => random_ensemble(cfg.dim, count, cfg.seed).map_err(run_err),
        Some(Scenario::CounterflowParticles) => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let dim = cfg.dim;
            let pos = (0..count)
                .map(|_| {
                    let x = rng.random::<f64>();
                    let y = if dim == 2 { rng.random::<f64>() } else { 0.0 };
                    [x, y]
                })
                .collect();
            let vel = (0..count)
                .map(|i| [if i < count / 2 { 1.0 } else { -1.0 }, 0.0])
                .collect();
            ParticleEnsemble::new(dim, pos, vel, cfg.seed).map_err(run_err)
        }
        _ => {
            let (rho, u) = initial_profiles(cfg)?;
            let xs = stratified_positions(|x| rho(x, 0.0).max(0.0), count);
            let vel = xs.iter().map(|&x| [u[0](x, 0.0), 0.0]).collect();
            let pos = xs.iter().map(|&x| [x, 0.0]).collect();
            ParticleEnsemble::new(1, pos, vel, cfg.seed).map_err(run_err)
        }
    }
}

fn make_kernel(cfg: &RunConfig, grid: &PeriodicGrid) -> Result<Kernel, AppError> {
    build_kernel(&cfg.kernel, grid).map_err(|e| AppError::Run(e.to_string()))
}

/// 17 significant digits, `null` for non-finite values.
pub fn num(x: f64) -> Value {
    if x.is_finite() {
        Value::Number(Number::from_str(&format!("{x:.16e}")).expect("formatted float is a JSON number"))
    } else {
        Value::Null
    }
}

fn fit_json(fit: Option<DecayFit>) -> Value {
    match fit {
        Some(f) => json!({"c_hat": num(f.c_hat), "r_squared": num(f.r_squared), "samples": f.samples}),
        None => Value::Null,
    }
}

pub fn records_header(dim: usize) -> String {
    let mc = if dim == 2 { "mcx,mcy" } else { "mcx" };
    format!("t,mass,{mc},E,F,D,kinetic_entropy,rel_entropy,E_sigma,D_sigma,min_rho,max_speed,hs_norm")
}

fn fmt_num(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_records(records: &[DiagnosticsRecord], dim: usize, mut out: impl Write) -> io::Result<()> {
    writeln!(out, "{}", records_header(dim))?;
    for r in records {
        let mut cols = vec![fmt_num(r.t), fmt_num(r.mass)];
        cols.extend(r.m_c.iter().map(|m| fmt_num(*m)));
        cols.extend(
            [
                r.energy,
                r.fluctuation,
                r.dissipation,
                r.kinetic_entropy,
                r.rel_entropy,
                r.e_sigma,
                r.d_sigma,
                r.min_rho,
                r.max_speed,
                r.hs_norm,
            ]
            .map(fmt_num),
        );
        writeln!(out, "{}", cols.join(","))?;
    }
    Ok(())
}

fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<fs::File>) -> io::Result<()>) -> Result<(), AppError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    body(&mut w).and_then(|_| w.flush()).map_err(io_err(path))
}

fn write_json(path: &Path, value: &Value) -> Result<(), AppError> {
    write_file(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value).map_err(io::Error::other)?;
        writeln!(w)
    })
}

fn config_echo(cfg: &RunConfig) -> Value {
    let mut m = Map::new();
    for (k, v) in cfg.entries() {
        m.insert(k.to_string(), Value::String(v));
    }
    Value::Object(m)
}

/// Result of one fluid run with its fitted summaries.
#[derive(Clone, Debug)]
pub struct FluidOutcome {
    pub trajectory: Trajectory,
    pub summary: Value,
}

pub fn run_fluid(cfg: &RunConfig) -> Result<FluidOutcome, AppError> {
    let grid = make_grid(cfg.dim, cfg.n).map_err(|e| AppError::Run(e.to_string()))?;
    let psi = make_kernel(cfg, &grid)?;
    let state = initial_fluid_state(cfg, &grid)?;
    let closure = match cfg.mode == Mode::Pressureless
        || (cfg.mode == Mode::Sweep && cfg.sweep_mode == Mode::Pressureless)
    {
        true => Closure::Pressureless,
        false => Closure::Isothermal,
    };
    let spec = RunSpec {
        t_end: cfg.t_end,
        cfl: cfg.cfl,
        dt: cfg.dt,
        closure,
        record_stride: cfg.record_stride,
        state_stride: cfg.state_stride,
        sigma: cfg.sigma,
        sobolev_s: cfg.sobolev_s,
    };
    let trajectory = run(&state, &psi, &spec).map_err(|e| AppError::Run(e.to_string()))?;
    let summary = fluid_summary(cfg, &trajectory, closure);
    Ok(FluidOutcome { trajectory, summary })
}

fn fluid_summary(cfg: &RunConfig, t: &Trajectory, closure: Closure) -> Value {
    let window = cfg.fit_window_or_default();
    let recs = &t.records;
    let series = |f: &dyn Fn(&DiagnosticsRecord) -> f64| -> Vec<(f64, f64)> {
        recs.iter().map(|r| (r.t, f(r))).collect()
    };
    let fit_f = fit_decay_rate(&series(&|r| r.fluctuation), window).ok();
    let mut fits = vec![json!({"series": "F", "sigma": Value::Null, "fit": fit_json(fit_f)})];
    let mut equivalence = Vec::new();
    for &s in &cfg.sigma_scan {
        let fit = fit_decay_rate(&series(&|r| r.lyapunov.e_sigma(s)), window).ok();
        fits.push(json!({"series": "E_sigma", "sigma": num(s), "fit": fit_json(fit)}));
        let eq = match equivalence_scan(recs, s) {
            Ok(c) => json!({
                "sigma": num(s), "c3": num(c.c3), "c4": num(c.c4),
                "c5": num(c.c5), "c6": num(c.c6), "all_positive": c.all_positive()
            }),
            Err(e) => json!({"sigma": num(s), "error": e.to_string()}),
        };
        equivalence.push(eq);
    }
    let first = &recs[0];
    let max_of = |f: &dyn Fn(&DiagnosticsRecord) -> f64| recs.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
    let mass_drift = max_of(&|r| (r.mass - first.mass).abs());
    let momentum_drift = max_of(&|r| {
        r.m_c
            .iter()
            .zip(&first.m_c)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    });
    json!({
        "version": VERSION,
        "mode": cfg.mode.as_str(),
        "closure": match closure { Closure::Isothermal => "isothermal", Closure::Pressureless => "pressureless" },
        "termination": t.termination.as_str(),
        "dt": num(t.dt),
        "steps": t.steps,
        "restarts": t.restarts,
        "fit_window": [num(window.0), num(window.1)],
        "fits": fits,
        "equivalence": equivalence,
        "monitors": {
            "max_mass_drift": num(mass_drift),
            "max_momentum_drift": num(momentum_drift),
            "energy_ratio": num(max_of(&|r| r.energy) / first.energy),
            "hs_ratio": num(max_of(&|r| r.hs_norm) / first.hs_norm),
            "min_rho": num(recs.iter().map(|r| r.min_rho).fold(f64::INFINITY, f64::min)),
        },
        "config": config_echo(cfg),
    })
}

fn write_state(state: &FluidState, mut out: impl Write) -> io::Result<()> {
    let grid = state.grid();
    let dim = grid.dim();
    writeln!(out, "{}", if dim == 2 { "x,y,rho,ux,uy" } else { "x,rho,ux" })?;
    let rho = state.rho();
    for j in 0..grid.len() {
        let x = grid.node(j);
        let mut cols: Vec<String> = x[..dim].iter().map(|c| fmt_num(*c)).collect();
        cols.push(fmt_num(rho.values()[j]));
        cols.extend(state.velocity().components().iter().map(|c| fmt_num(c.values()[j])));
        writeln!(out, "{}", cols.join(","))?;
    }
    Ok(())
}

pub fn emit_fluid(cfg: &RunConfig, outcome: &FluidOutcome, dir: &Path) -> Result<(), AppError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_file(&dir.join("records.csv"), |w| write_records(&outcome.trajectory.records, cfg.dim, w))?;
    if let Some(last) = outcome.trajectory.states.last() {
        write_file(&dir.join("final_state.csv"), |w| write_state(last, w))?;
    }
    write_json(&dir.join("summary.json"), &outcome.summary)
}

/// Velocity-diameter series of a Cucker–Smale run.
#[derive(Clone, Debug)]
pub struct ParticleOutcome {
    pub times: Vec<f64>,
    pub diameters: Vec<f64>,
    pub mean_velocity: Vec<[f64; 2]>,
    pub final_ensemble: ParticleEnsemble,
    pub summary: Value,
}

pub fn run_particles(cfg: &RunConfig) -> Result<ParticleOutcome, AppError> {
    let grid = make_grid(cfg.dim, 32).map_err(|e| AppError::Run(e.to_string()))?;
    let psi = make_kernel(cfg, &grid)?;
    let mut ens = initial_ensemble(cfg)?;
    let limit = 0.1 / psi.sup_norm();
    let dt0 = cfg.particle_dt.unwrap_or(0.01).min(limit);
    let steps = if cfg.t_end > 0.0 {
        ((cfg.t_end / dt0) - 1e-9).ceil().max(1.0) as usize
    } else {
        0
    };
    let dt = if steps > 0 { cfg.t_end / steps as f64 } else { dt0 };
    let mut times = vec![0.0];
    let mut diameters = vec![velocity_diameter(&ens)];
    let mut mean_velocity = vec![ens.mean_velocity()];
    for k in 1..=steps {
        ens = cs_step(&ens, &psi, dt).map_err(|e| AppError::Run(e.to_string()))?;
        if k % cfg.record_stride == 0 || k == steps {
            times.push(k as f64 * dt);
            diameters.push(velocity_diameter(&ens));
            mean_velocity.push(ens.mean_velocity());
        }
    }
    let pairs: Vec<(f64, f64)> = times.iter().copied().zip(diameters.iter().copied()).collect();
    let fit = fit_decay_rate(&pairs, cfg.fit_window.unwrap_or((0.0, cfg.t_end.max(1e-300)))).ok();
    let summary = json!({
        "version": VERSION,
        "mode": "particles",
        "termination": "completed",
        "dt": num(dt),
        "steps": steps,
        "psi_m": num(psi.psi_m()),
        "initial_diameter": num(diameters[0]),
        "final_diameter": num(*diameters.last().unwrap()),
        "diameter_fit": fit_json(fit),
        "config": config_echo(cfg),
    });
    Ok(ParticleOutcome {
        times,
        diameters,
        mean_velocity,
        final_ensemble: ens,
        summary,
    })
}

pub fn emit_particles(cfg: &RunConfig, outcome: &ParticleOutcome, dir: &Path) -> Result<(), AppError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_file(&dir.join("particles.csv"), |w| {
        writeln!(w, "{}", if cfg.dim == 2 { "t,diameter,mean_vx,mean_vy" } else { "t,diameter,mean_vx" })?;
        for ((t, d), m) in outcome.times.iter().zip(&outcome.diameters).zip(&outcome.mean_velocity) {
            let mut cols = vec![fmt_num(*t), fmt_num(*d), fmt_num(m[0])];
            if cfg.dim == 2 {
                cols.push(fmt_num(m[1]));
            }
            writeln!(w, "{}", cols.join(","))?;
        }
        Ok(())
    })?;
    write_file(&dir.join("ensemble.csv"), |w| outcome.final_ensemble.write_csv(w))?;
    write_json(&dir.join("summary.json"), &outcome.summary)
}

/// Relative-entropy gap of one Langevin run against the fluid reference.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KineticSample {
    pub eps: f64,
    pub seed: u64,
    pub gap: EntropyGap,
}

#[derive(Clone, Debug)]
pub struct KineticOutcome {
    pub samples: Vec<KineticSample>,
    /// `(eps, mean total gap)` in configuration order.
    pub means: Vec<(f64, f64)>,
    pub summary: Value,
}

/// Langevin particles at every `eps`, `seeds` runs each, compared at
/// `t_end` with the isothermal fluid solution on the moment grid.
/// The local velocity in the relaxation term is deposited on a separate
/// `relax_n` grid.
///
/// All `eps` share initial agents and noise streams for a given seed.
pub fn run_kinetic(cfg: &RunConfig) -> Result<KineticOutcome, AppError> {
    let fine = make_grid(1, cfg.n).map_err(|e| AppError::Run(e.to_string()))?;
    let coarse = make_grid(1, cfg.moment_n).map_err(|e| AppError::Run(e.to_string()))?;
    let relax = make_grid(1, cfg.relax_n).map_err(|e| AppError::Run(e.to_string()))?;
    let psi = make_kernel(cfg, &fine)?;
    let mut fluid_cfg = cfg.clone();
    fluid_cfg.formulation = Formulation::Conservative;
    let initial = initial_fluid_state(&fluid_cfg, &fine)?;
    let spec = RunSpec {
        t_end: cfg.t_end,
        cfl: cfg.cfl,
        sigma: cfg.sigma,
        sobolev_s: cfg.sobolev_s,
        record_stride: usize::MAX,
        state_stride: usize::MAX,
        ..RunSpec::default()
    };
    let traj = run(&initial, &psi, &spec).map_err(|e| AppError::Run(e.to_string()))?;
    if traj.termination != Termination::Completed {
        return Err(AppError::Run(format!(
            "fluid reference terminated: {}",
            traj.termination.as_str()
        )));
    }
    let reference = restrict(traj.states.last().expect("final state"), &coarse)
        .map_err(|e| AppError::Run(e.to_string()))?;
    let (rho, u) = initial_profiles(&fluid_cfg)?;
    let xs = stratified_positions(|x| rho(x, 0.0).max(0.0), cfg.n_particles);
    let ux: Vec<f64> = xs.iter().map(|&x| u[0](x, 0.0)).collect();
    let jobs: Vec<(f64, u64)> = cfg
        .eps
        .iter()
        .flat_map(|&e| (0..cfg.seeds as u64).map(move |s| (e, s)))
        .collect();
    let pos: Vec<[f64; 2]> = xs.iter().map(|&x| [x, 0.0]).collect();
    let samples = jobs
        .par_iter()
        .map(|&(eps, s)| {
            let seed = cfg.seed.wrapping_add(s);
            let vel = maxwellian_velocities(seed, xs.len())
                .iter()
                .zip(&ux)
                .map(|(xi, u)| [u + xi[0], 0.0])
                .collect();
            let mut ens = ParticleEnsemble::new(1, pos.clone(), vel, seed)
                .map_err(|e| AppError::Run(e.to_string()))?;
            let dt0 = (cfg.dt_factor * eps).min(langevin_dt_limit(&psi, eps));
            let steps = ((cfg.t_end / dt0) - 1e-9).ceil().max(0.0) as usize;
            let dt = if steps > 0 { cfg.t_end / steps as f64 } else { dt0 };
            for _ in 0..steps {
                ens = langevin_step(&ens, &psi, eps, dt, &relax).map_err(|e| AppError::Run(e.to_string()))?;
            }
            let (rho_eps, u_eps) = moments(&ens, &coarse).map_err(|e| AppError::Run(e.to_string()))?;
            let gap = relative_entropy_gap(&rho_eps, &u_eps, &reference)
                .map_err(|e| AppError::Run(e.to_string()))?;
            Ok(KineticSample { eps, seed, gap })
        })
        .collect::<Result<Vec<_>, AppError>>()?;
    let means: Vec<(f64, f64)> = cfg
        .eps
        .iter()
        .map(|&e| {
            let totals: Vec<f64> = samples.iter().filter(|s| s.eps == e).map(|s| s.gap.total()).collect();
            (e, totals.iter().sum::<f64>() / totals.len() as f64)
        })
        .collect();
    let mut sorted = means.clone();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let monotone = sorted.windows(2).all(|w| w[1].1 <= w[0].1);
    let ratio = sorted.last().unwrap().1 / sorted[0].1;
    let summary = json!({
        "version": VERSION,
        "mode": "kinetic",
        "termination": "completed",
        "t_end": num(cfg.t_end),
        "mean_gap": means.iter().map(|(e, g)| json!({"eps": num(*e), "total": num(*g)})).collect::<Vec<_>>(),
        "monotone_in_eps": monotone,
        "smallest_to_largest_eps_ratio": num(ratio),
        "empty_nodes": samples.iter().map(|s| s.gap.empty_nodes).sum::<usize>(),
        "config": config_echo(cfg),
    });
    Ok(KineticOutcome { samples, means, summary })
}

pub fn emit_kinetic(outcome: &KineticOutcome, dir: &Path) -> Result<(), AppError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_file(&dir.join("kinetic.csv"), |w| {
        writeln!(w, "eps,seed,velocity_part,density_part,total,empty_nodes")?;
        for s in &outcome.samples {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                fmt_num(s.eps),
                s.seed,
                fmt_num(s.gap.velocity_part),
                fmt_num(s.gap.density_part),
                fmt_num(s.gap.total()),
                s.gap.empty_nodes
            )?;
        }
        Ok(())
    })?;
    write_json(&dir.join("summary.json"), &outcome.summary)
}

/// One row of `sweep.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub value: String,
    pub status: String,
    pub final_value: f64,
    pub fit: Option<DecayFit>,
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}

/// Runs every sweep point concurrently, each into its own subdirectory,
/// then writes `sweep.csv`. Returns the worst termination seen.
pub fn run_sweep(cfg: &RunConfig, dir: &Path) -> Result<(Vec<SweepPoint>, Termination), AppError> {
    let parameter = cfg.parameter.clone().expect("validated sweep config");
    let base = cfg.to_text();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let points = cfg
        .values
        .par_iter()
        .enumerate()
        .map(|(i, value)| -> Result<(SweepPoint, Termination), AppError> {
            let sub = dir.join(format!("{i:03}_{}_{}", sanitize(&parameter), sanitize(value)));
            let overrides = vec![
                (parameter.clone(), value.clone()),
                ("mode".to_string(), cfg.sweep_mode.as_str().to_string()),
                ("output_dir".to_string(), sub.display().to_string()),
            ];
            let point = parse_config_with(&base, &overrides)?;
            match point.mode {
                Mode::Particles => {
                    let o = run_particles(&point)?;
                    emit_particles(&point, &o, &sub)?;
                    let pairs: Vec<(f64, f64)> = o.times.iter().copied().zip(o.diameters.iter().copied()).collect();
                    let fit = fit_decay_rate(&pairs, point.fit_window.unwrap_or((0.0, point.t_end))).ok();
                    Ok((
                        SweepPoint {
                            value: value.clone(),
                            status: "completed".into(),
                            final_value: *o.diameters.last().unwrap(),
                            fit,
                        },
                        Termination::Completed,
                    ))
                }
                _ => {
                    let o = run_fluid(&point)?;
                    emit_fluid(&point, &o, &sub)?;
                    let recs = &o.trajectory.records;
                    let pairs: Vec<(f64, f64)> = recs.iter().map(|r| (r.t, r.fluctuation)).collect();
                    let fit = fit_decay_rate(&pairs, point.fit_window_or_default()).ok();
                    Ok((
                        SweepPoint {
                            value: value.clone(),
                            status: o.trajectory.termination.as_str().into(),
                            final_value: recs.last().unwrap().fluctuation,
                            fit,
                        },
                        o.trajectory.termination,
                    ))
                }
            }
        })
        .collect::<Result<Vec<_>, AppError>>()?;
    let worst = points
        .iter()
        .map(|(_, t)| *t)
        .find(|t| *t != Termination::Completed)
        .unwrap_or(Termination::Completed);
    let rows: Vec<SweepPoint> = points.into_iter().map(|(p, _)| p).collect();
    let final_name = if cfg.sweep_mode == Mode::Particles { "final_diameter" } else { "final_F" };
    write_file(&dir.join("sweep.csv"), |w| {
        writeln!(w, "index,{parameter},status,{final_name},c_hat,r_squared")?;
        for (i, p) in rows.iter().enumerate() {
            let (c, r) = p.fit.map_or((f64::NAN, f64::NAN), |f| (f.c_hat, f.r_squared));
            writeln!(
                w,
                "{i},{},{},{},{},{}",
                p.value,
                p.status,
                fmt_num(p.final_value),
                fmt_num(c),
                fmt_num(r)
            )?;
        }
        Ok(())
    })?;
    Ok((rows, worst))
}

/// Reads the `t` and `F` columns of a `records.csv` file.
pub fn read_fluctuation_series(text: &str) -> Result<Vec<(f64, f64)>, AppError> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| AppError::Run("empty records file".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    let find = |name: &str| {
        cols.iter()
            .position(|c| c.trim() == name)
            .ok_or_else(|| AppError::Run(format!("records file has no `{name}` column")))
    };
    let (ti, fi) = (find("t")?, find("F")?);
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            let parts: Vec<&str> = l.split(',').collect();
            let get = |j: usize| {
                parts
                    .get(j)
                    .and_then(|p| p.trim().parse::<f64>().ok())
                    .ok_or_else(|| AppError::Run(format!("bad value on data row {}", i + 1)))
            };
            Ok((get(ti)?, get(fi)?))
        })
        .collect()
}

/// Dispatches a parsed configuration and writes its outputs. Returns the
/// termination status used for the exit code.
pub fn execute(cfg: &RunConfig) -> Result<Termination, AppError> {
    let dir = cfg.output_dir.clone();
    match cfg.mode {
        Mode::Fluid | Mode::Pressureless => {
            let o = run_fluid(cfg)?;
            emit_fluid(cfg, &o, &dir)?;
            Ok(o.trajectory.termination)
        }
        Mode::Particles => {
            let o = run_particles(cfg)?;
            emit_particles(cfg, &o, &dir)?;
            Ok(Termination::Completed)
        }
        Mode::Kinetic => {
            let o = run_kinetic(cfg)?;
            emit_kinetic(&o, &dir)?;
            Ok(Termination::Completed)
        }
        Mode::Sweep => Ok(run_sweep(cfg, &dir)?.1),
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "mode = fluid\ndim = 1\nn = 128\nt_end = 20\nscenario = small_perturbation\nkernel = cosine 1 0.5\n";

    #[test]
    fn minimal_fluid_config() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.mode, Mode::Fluid);
        assert_eq!(c.n, 128);
        assert_eq!(c.kernel, KernelSpec::Cosine { a: 1.0, b: 0.5 });
        assert_eq!(c.cfl, 0.4);
        assert_eq!(c.record_stride, 10);
        assert_eq!(c.fit_window_or_default(), (2.0, 20.0));
    }

    #[test]
    fn errors_are_collected() {
        let text = MINIMAL.replace("n = 128", "n = 100").replace("cosine 1 0.5", "cosine 1 2") + "colour = red\n";
        let e = parse_config(&text).unwrap_err();
        let all = e.errors.join("\n");
        assert!(all.contains("n must be a power of two"), "{all}");
        assert!(all.contains("kernel not positive"), "{all}");
        assert!(all.contains("unknown key `colour`"), "{all}");
        assert_eq!(e.errors.len(), 3);
    }

    #[test]
    fn sections_are_checked() {
        let ok = "[run]\nmode = fluid\nt_end = 1\n[model]\nkernel = constant 1\nscenario = small_perturbation\n";
        assert!(parse_config(ok).is_ok());
        let bad = "[model]\nmode = fluid\n";
        let e = parse_config(bad).unwrap_err();
        assert!(e.errors[0].contains("belongs in [run]"));
    }

    #[test]
    fn missing_keys_reported() {
        let e = parse_config("mode = fluid\n").unwrap_err();
        let all = e.errors.join("\n");
        assert!(all.contains("`kernel`"));
        assert!(all.contains("`t_end`"));
        assert!(all.contains("scenario"));
    }

    #[test]
    fn text_round_trip() {
        let text = MINIMAL.to_string()
            + "dt = 0.001\nfit_window = 1.5, 9\nrho0 = 1\n"
            + "sigma_scan = 0.01, 0.3\n";
        let text = text.replace("scenario = small_perturbation\n", "u0 = 0.1*sin(2*pi*x)\n");
        let c = parse_config(&text).unwrap();
        assert_eq!(parse_config(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn overrides_replace_values() {
        let c = parse_config_with(MINIMAL, &[("n".into(), "32".into())]).unwrap();
        assert_eq!(c.n, 32);
        assert!(parse_config_with(MINIMAL, &[("bogus".into(), "1".into())]).is_err());
    }

    #[test]
    fn number_format_has_seventeen_digits() {
        assert_eq!(num(0.1).to_string(), "1.0000000000000001e-1");
        assert_eq!(num(f64::NAN), Value::Null);
    }

    #[test]
    fn header_matches_dimension() {
        assert!(records_header(1).starts_with("t,mass,mcx,E,"));
        assert!(records_header(2).starts_with("t,mass,mcx,mcy,E,"));
    }
}

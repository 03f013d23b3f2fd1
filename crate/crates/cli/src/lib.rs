//! Batch front end: turns flags or a JSON config into ensemble runs and
//! writes CSV/JSON series.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use nmqsd::algebra::BellState;
use nmqsd::ensemble::{
    compare_modes_with, default_workers, run_ensemble_with, sweep_with, EnsembleConfig,
    EnsembleResult, Failure, DEFAULT_TRAJECTORIES,
};
use nmqsd::entanglement::ConcurrenceSeries;
use nmqsd::error::QsdError;
use nmqsd::integrator::{
    integrate_nonlinear, seeded_noise, OperatorMode, QsdSystem, Scheme, SimulationConfig,
};
use nmqsd::noise::{sample_path, CorrelationKernel, SeedSpec};
use nmqsd::ooperator::{CoefficientTable, Model, ModelParams};
use nmqsd::oracles::OracleKind;
use nmqsd::presets::{preset, ExperimentPreset, PresetKind, PresetName, DEFAULT_T_MAX};
use serde::{Deserialize, Serialize};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Runtime(_) => EXIT_RUNTIME,
            CliError::Io { .. } => EXIT_IO,
        }
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Runtime(m) => write!(f, "run aborted: {m}"),
            CliError::Io { path, source } => write!(f, "{}: {source}", path.display()),
        }
    }
}

impl std::error::Error for CliError {}

fn runtime(e: QsdError) -> CliError {
    CliError::Runtime(e.to_string())
}

fn config(e: QsdError) -> CliError {
    CliError::Config(e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(Debug, Clone, Parser)]
#[command(
    name = "nmqsd",
    version,
    about = "Non-Markovian QSD ensembles of two-qubit entanglement"
)]
pub struct Cli {
    /// Named figure configuration (fig1a … fig5b).
    #[arg(long, conflicts_with = "config")]
    pub preset: Option<PresetName>,
    /// JSON ensemble configuration (the `config` object of a JSON output is accepted too).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// dissipative or dephasing.
    #[arg(long, conflicts_with_all = ["preset", "config"])]
    pub model: Option<Model>,
    /// exact or post_markov.
    #[arg(long = "operator-mode", conflicts_with_all = ["preset", "config"])]
    pub operator_mode: Option<OperatorMode>,
    /// Relative coupling of qubit B, in [0, 1].
    #[arg(long, conflicts_with_all = ["preset", "config"])]
    pub kappa: Option<f64>,
    /// Inverse bath memory time.
    #[arg(long, conflicts_with_all = ["preset", "config"])]
    pub gamma: Option<f64>,
    /// Qubit frequency (both qubits).
    #[arg(long, conflicts_with_all = ["preset", "config"])]
    pub omega: Option<f64>,
    /// psi+, psi-, phi+ or phi-.
    #[arg(long, conflicts_with_all = ["preset", "config"])]
    pub state: Option<BellState>,
    #[arg(long, conflicts_with = "config")]
    pub tmax: Option<f64>,
    /// Time step; defaults to the resolution rule for γ and ω.
    #[arg(long, conflicts_with_all = ["preset", "config"])]
    pub dt: Option<f64>,
    /// euler_maruyama or heun.
    #[arg(long, conflicts_with = "config")]
    pub scheme: Option<Scheme>,
    /// Number of trajectories.
    #[arg(long, conflicts_with = "config")]
    pub n: Option<usize>,
    #[arg(long, conflicts_with = "config")]
    pub seed: Option<u64>,
    /// pseudomode, dephasing_exact, markov or none; defaults to the exact reference for the model.
    #[arg(long, conflicts_with = "config")]
    pub oracle: Option<OracleKind>,
    /// Output file (single run; stdout if omitted) or directory (presets).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Write the noise path of stream 0 as CSV (t, re, im).
    #[arg(long, conflicts_with = "preset")]
    pub dump_noise: Option<PathBuf>,
    /// Write the dissipative O-operator coefficients as CSV.
    #[arg(long, conflicts_with = "preset")]
    pub dump_coefficients: Option<PathBuf>,
    /// Write trajectory 0 as CSV (t, C, amplitudes).
    #[arg(long, conflicts_with = "preset")]
    pub dump_trajectory: Option<PathBuf>,
}

/// What a command line asks for.
#[derive(Debug, Clone, PartialEq)]
pub enum Request {
    Single(EnsembleConfig),
    Preset(ExperimentPreset),
}

fn default_oracle(model: Model) -> OracleKind {
    match model {
        Model::Dissipative => OracleKind::Pseudomode,
        Model::Dephasing => OracleKind::DephasingExact,
    }
}

/// Validated request from flags, a preset, or a config file.
pub fn parse_config(cli: &Cli) -> Result<Request, CliError> {
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        return parse_config_json(&text)
            .map(Request::Single)
            .map_err(|e| match e {
                CliError::Config(m) => CliError::Config(format!("{}:{m}", path.display())),
                other => other,
            });
    }
    if let Some(name) = cli.preset {
        let mut p = preset(name).map_err(config)?;
        if let Some(t_max) = cli.tmax {
            let dt = p.base.sim.grid.dt;
            p.base.sim = p
                .base
                .sim
                .with_grid(nmqsd::noise::TimeGrid::spanning(t_max, dt).map_err(config)?)
                .map_err(config)?;
        }
        apply_common(cli, &mut p.base);
        p.base.validate().map_err(config)?;
        return Ok(Request::Preset(p));
    }
    let model = cli.model.unwrap_or(Model::Dissipative);
    let params = ModelParams::new(
        cli.kappa.unwrap_or(1.0),
        cli.gamma.unwrap_or(1.0),
        cli.omega.unwrap_or(1.0),
    )
    .map_err(config)?;
    let mode = cli.operator_mode.unwrap_or(OperatorMode::Exact);
    let state = cli.state.unwrap_or(BellState::PsiPlus);
    let t_max = cli.tmax.unwrap_or(DEFAULT_T_MAX);
    let mut sim = SimulationConfig::new(model, mode, params, state, t_max).map_err(config)?;
    if let Some(dt) = cli.dt {
        let grid = nmqsd::noise::TimeGrid::spanning(t_max, dt).map_err(config)?;
        sim = sim.with_grid(grid).map_err(config)?;
    }
    let mut cfg = EnsembleConfig::new(sim).with_oracle(default_oracle(model));
    apply_common(cli, &mut cfg);
    cfg.validate().map_err(config)?;
    Ok(Request::Single(cfg))
}

fn apply_common(cli: &Cli, cfg: &mut EnsembleConfig) {
    if let Some(scheme) = cli.scheme {
        cfg.sim.scheme = scheme;
    }
    cfg.n_trajectories = cli.n.unwrap_or(DEFAULT_TRAJECTORIES);
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    if let Some(oracle) = cli.oracle {
        cfg.oracle = oracle;
    }
}

/// Parses an [`EnsembleConfig`], or the `config` member of a JSON output.
/// Errors carry `line:column`.
pub fn parse_config_json(text: &str) -> Result<EnsembleConfig, CliError> {
    let located =
        |e: serde_json::Error| CliError::Config(format!("{}:{}: {e}", e.line(), e.column()));
    let value: serde_json::Value = serde_json::from_str(text).map_err(located)?;
    let cfg: EnsembleConfig = match value.get("config") {
        Some(inner) if value.get("series").is_some() => EnsembleConfig::deserialize(inner)
            .map_err(|e| CliError::Config(format!(" in `config`: {e}")))?,
        _ => serde_json::from_str(text).map_err(located)?,
    };
    cfg.validate()
        .map_err(|e| CliError::Config(format!(" {e}")))?;
    Ok(cfg)
}

/// CSV with header `t,mean_c,stderr_c,c_rho`; `c_rho` is empty without an oracle.
pub fn emit_csv(series: &ConcurrenceSeries) -> String {
    let mut out = String::from("t,mean_c,stderr_c,c_rho\n");
    for k in 0..series.len() {
        let c_rho = series
            .oracle_c
            .as_ref()
            .map(|c| format!("{:.16e}", c[k]))
            .unwrap_or_default();
        writeln!(
            out,
            "{:.16e},{:.16e},{:.16e},{c_rho}",
            series.times[k], series.mean_c[k], series.stderr_c[k]
        )
        .expect("write to string");
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesJson {
    pub t: Vec<f64>,
    pub mean_c: Vec<f64>,
    pub stderr_c: Vec<f64>,
    pub c_rho: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputJson {
    pub config: EnsembleConfig,
    pub seed: u64,
    pub completed: usize,
    pub failures: Vec<Failure>,
    pub series: SeriesJson,
}

pub fn emit_json(cfg: &EnsembleConfig, result: &EnsembleResult) -> String {
    let doc = OutputJson {
        config: *cfg,
        seed: cfg.master_seed,
        completed: result.completed,
        failures: result.failures.clone(),
        series: SeriesJson {
            t: result.series.times.clone(),
            mean_c: result.series.mean_c.clone(),
            stderr_c: result.series.stderr_c.clone(),
            c_rho: result.series.oracle_c.clone(),
        },
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("serializable output");
    s.push('\n');
    s
}

pub fn emit(cfg: &EnsembleConfig, result: &EnsembleResult, format: Format) -> String {
    match format {
        Format::Csv => emit_csv(&result.series),
        Format::Json => emit_json(cfg, result),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn csv_row(values: &[f64]) -> String {
    let mut row = values
        .iter()
        .map(|v| format!("{v:.16e}"))
        .collect::<Vec<_>>()
        .join(",");
    row.push('\n');
    row
}

fn dump_noise(cfg: &EnsembleConfig, path: &Path) -> Result<(), CliError> {
    let k = CorrelationKernel::new(cfg.sim.params.gamma).map_err(config)?;
    let p = sample_path(&k, &cfg.sim.grid, SeedSpec::new(cfg.master_seed, 0)).map_err(runtime)?;
    let mut out = String::from("t,re,im\n");
    for (t, x) in p.times().iter().zip(&p.samples) {
        out += &csv_row(&[*t, x.re, x.im]);
    }
    write_file(path, &out)
}

fn dump_coefficients(cfg: &EnsembleConfig, path: &Path) -> Result<(), CliError> {
    if cfg.sim.model != Model::Dissipative {
        return Err(CliError::Config(
            "--dump-coefficients applies to the dissipative model only".into(),
        ));
    }
    let table = CoefficientTable::compute(&cfg.sim.params, &cfg.sim.grid).map_err(runtime)?;
    let mut out = String::from("t,re_a,im_a,re_b,im_b,re_f,im_f,re_g,im_g,re_q,im_q,re_log_e\n");
    for (t, c) in cfg.sim.grid.times().iter().zip(&table.values) {
        out += &csv_row(&[
            *t, c.a.re, c.a.im, c.b.re, c.b.im, c.f.re, c.f.im, c.g.re, c.g.im, c.q.re, c.q.im,
            c.log_e.re,
        ]);
    }
    write_file(path, &out)
}

fn dump_trajectory(cfg: &EnsembleConfig, path: &Path) -> Result<(), CliError> {
    let system = QsdSystem::new(&cfg.sim).map_err(runtime)?;
    let noise = seeded_noise(&system, SeedSpec::new(cfg.master_seed, 0)).map_err(runtime)?;
    let times = system.grid().times();
    let mut out = String::from("t,c,re_0,im_0,re_1,im_1,re_2,im_2,re_3,im_3\n");
    integrate_nonlinear(&system, noise, |n, psi| {
        let mut row = vec![
            times[n],
            nmqsd::entanglement::concurrence_pure(psi).unwrap_or(f64::NAN),
        ];
        for z in psi.amplitudes() {
            row.extend([z.re, z.im]);
        }
        out += &csv_row(&row);
    })
    .map_err(runtime)?;
    write_file(path, &out)
}

fn write_output(path: Option<&Path>, contents: &str) -> Result<(), CliError> {
    match path {
        Some(p) => write_file(p, contents),
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            lock.write_all(contents.as_bytes())
                .map_err(|e| CliError::io(Path::new("<stdout>"), e))
        }
    }
}

fn file_label(value: f64) -> String {
    format!("{value}")
}

/// Runs a request and writes its outputs. Returns the files written.
pub fn execute(cli: &Cli, request: &Request) -> Result<Vec<PathBuf>, CliError> {
    let workers = cli.workers.unwrap_or_else(default_workers).max(1);
    let mut written = Vec::new();
    match request {
        Request::Single(cfg) => {
            for (flag, path, dump) in [
                (
                    &cli.dump_noise,
                    "noise",
                    dump_noise as fn(&EnsembleConfig, &Path) -> Result<(), CliError>,
                ),
                (&cli.dump_coefficients, "coefficients", dump_coefficients),
                (&cli.dump_trajectory, "trajectory", dump_trajectory),
            ] {
                if let Some(p) = flag {
                    dump(cfg, p).map_err(|e| match e {
                        CliError::Runtime(m) => CliError::Runtime(format!("{path} dump: {m}")),
                        other => other,
                    })?;
                    written.push(p.clone());
                }
            }
            let result = run_ensemble_with(cfg, workers).map_err(runtime)?;
            write_output(cli.out.as_deref(), &emit(cfg, &result, cli.format))?;
            written.extend(cli.out.clone());
        }
        Request::Preset(p) => {
            let dir = cli
                .out
                .clone()
                .unwrap_or_else(|| PathBuf::from(p.name.label()));
            fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
            let ext = cli.format.extension();
            for &state in &p.states {
                let cfg = p.for_state(state);
                let stem = format!("{}_{}", p.name.label(), state.label());
                let mut outputs: Vec<(String, EnsembleConfig, EnsembleResult)> = Vec::new();
                match &p.kind {
                    PresetKind::CompareModes => {
                        let cmp = compare_modes_with(&cfg, workers).map_err(runtime)?;
                        let mut pm_cfg = cfg;
                        pm_cfg.sim.operator_mode = OperatorMode::PostMarkov;
                        pm_cfg.oracle = OracleKind::None;
                        outputs.push((format!("{stem}_exact"), cfg, cmp.exact));
                        outputs.push((format!("{stem}_post_markov"), pm_cfg, cmp.post_markov));
                    }
                    PresetKind::Sweep { parameter, values } => {
                        let name = match parameter {
                            nmqsd::ensemble::SweepParameter::Kappa => "kappa",
                            nmqsd::ensemble::SweepParameter::Gamma => "gamma",
                        };
                        for pt in sweep_with(&cfg, *parameter, values, workers).map_err(runtime)? {
                            outputs.push((
                                format!("{stem}_{name}={}", file_label(pt.value)),
                                pt.cfg,
                                pt.result,
                            ));
                        }
                    }
                }
                for (file_stem, cfg, result) in outputs {
                    let path = dir.join(format!("{file_stem}.{ext}"));
                    write_file(&path, &emit(&cfg, &result, cli.format))?;
                    written.push(path);
                }
            }
        }
    }
    Ok(written)
}

/// Parses, runs and writes; the error carries the exit code.
pub fn run(cli: &Cli) -> Result<Vec<PathBuf>, CliError> {
    let request = parse_config(cli)?;
    execute(cli, &request)
}

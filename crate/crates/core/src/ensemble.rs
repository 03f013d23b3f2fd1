//! Ensembles of unravellings with deterministic aggregation.
//!
//! Trajectory `i` always uses `SeedSpec(master_seed, i)`. Trajectories are
//! integrated in batches (in parallel when the `parallel` feature is on) and
//! reduced strictly in index order, so results do not depend on the number
//! of workers.

use serde::{Deserialize, Serialize};

use crate::algebra::DensityMatrix;
use crate::algebra::{Operator, PureState};
use crate::entanglement::{
    concurrence_pure_unchecked, jackknife_concurrence, ConcurrenceSeries, SeriesAccumulator,
};
use crate::error::{QsdError, Result};
use crate::integrator::{
    default_dt, integrate_nonlinear, seeded_noise, trajectory_error, OperatorMode, QsdSystem,
    SimulationConfig, TrajectoryOutput,
};
use crate::noise::{SeedSpec, TimeGrid};
use crate::ooperator::Model;
use crate::oracles::{run_oracle, OracleKind, OracleRun};

/// Default number of trajectories per ensemble.
pub const DEFAULT_TRAJECTORIES: usize = 1000;
/// Default decimation of the grid for `ρ_t` snapshots.
pub const DEFAULT_SNAPSHOT_STRIDE: usize = 10;
/// Number of jackknife blocks for the error of `C(ρ_t)`.
pub const JACKKNIFE_BLOCKS: usize = 20;
/// Largest tolerated fraction of aborted trajectories.
pub const MAX_FAILURE_FRACTION: f64 = 0.01;

const BATCH: usize = 256;

fn default_stride() -> usize {
    DEFAULT_SNAPSHOT_STRIDE
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub sim: SimulationConfig,
    pub n_trajectories: usize,
    pub master_seed: u64,
    pub store_states: bool,
    pub oracle: OracleKind,
    #[serde(default = "default_stride")]
    pub snapshot_stride: usize,
}

impl EnsembleConfig {
    pub fn new(sim: SimulationConfig) -> Self {
        Self {
            sim,
            n_trajectories: DEFAULT_TRAJECTORIES,
            master_seed: 0,
            store_states: false,
            oracle: OracleKind::None,
            snapshot_stride: DEFAULT_SNAPSHOT_STRIDE,
        }
    }

    pub fn with_trajectories(mut self, n: usize) -> Self {
        self.n_trajectories = n;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.master_seed = seed;
        self
    }

    pub fn with_oracle(mut self, oracle: OracleKind) -> Self {
        self.oracle = oracle;
        self
    }

    pub fn with_states(mut self, store: bool) -> Self {
        self.store_states = store;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        if self.n_trajectories < 2 {
            return Err(QsdError::TooFewSamples {
                needed: 2,
                got: self.n_trajectories,
            });
        }
        if self.snapshot_stride == 0 {
            return Err(QsdError::InvalidConfig(
                "snapshot_stride must be positive".into(),
            ));
        }
        if self.oracle == OracleKind::DephasingExact && self.sim.model != Model::Dephasing {
            return Err(QsdError::InvalidConfig(
                "the dephasing_exact oracle applies to the dephasing model only".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub stream_index: u64,
    pub time_index: usize,
    pub reason: String,
}

/// Ensemble-averaged `ρ_t` on the decimated grid `indices`.
#[derive(Debug, Clone, PartialEq)]
pub struct RhoSnapshots {
    pub indices: Vec<usize>,
    pub times: Vec<f64>,
    pub rho: Vec<DensityMatrix>,
    pub c_rho: Vec<f64>,
    /// Jackknife standard error of `c_rho`.
    pub c_rho_stderr: Vec<f64>,
    pub oracle_rho: Option<Vec<DensityMatrix>>,
}

impl RhoSnapshots {
    /// Largest trace distance to the oracle over snapshots with `t ≤ t_max`.
    pub fn max_oracle_distance(&self, t_max: f64) -> Option<f64> {
        let oracle = self.oracle_rho.as_ref()?;
        Some(
            self.rho
                .iter()
                .zip(oracle)
                .zip(&self.times)
                .filter(|(_, &t)| t <= t_max + 1e-12)
                .map(|((a, b), _)| a.trace_distance(b))
                .fold(0.0, f64::max),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleResult {
    pub series: ConcurrenceSeries,
    pub rho_snapshots: Option<RhoSnapshots>,
    pub failures: Vec<Failure>,
    pub completed: usize,
    /// Per-trajectory outputs in stream order, kept when `store_states` is set.
    pub trajectories: Option<Vec<TrajectoryOutput>>,
}

struct Sample {
    concurrence: Vec<f64>,
    snapshots: Vec<PureState>,
    states: Option<Vec<PureState>>,
    mean_norm_deviation: f64,
}

fn simulate_one(
    system: &QsdSystem,
    seed: SeedSpec,
    stride: usize,
    store_states: bool,
) -> Result<Sample> {
    let len = system.grid().len();
    let mut concurrence = Vec::with_capacity(len);
    let mut snapshots = Vec::with_capacity(len / stride + 1);
    let mut states = store_states.then(|| Vec::with_capacity(len));
    let noise = seeded_noise(system, seed)?;
    let mean_norm_deviation = integrate_nonlinear(system, noise, |n, psi| {
        concurrence.push(concurrence_pure_unchecked(psi));
        if n % stride == 0 {
            snapshots.push(*psi);
        }
        if let Some(s) = states.as_mut() {
            s.push(*psi);
        }
    })?;
    Ok(Sample {
        concurrence,
        snapshots,
        states,
        mean_norm_deviation,
    })
}

#[cfg(feature = "parallel")]
fn map_batch<F>(streams: std::ops::Range<u64>, workers: usize, f: F) -> Vec<Result<Sample>>
where
    F: Fn(u64) -> Result<Sample> + Sync + Send,
{
    use rayon::prelude::*;
    if workers <= 1 {
        return streams.map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("thread pool");
    pool.install(|| streams.into_par_iter().map(f).collect())
}

#[cfg(not(feature = "parallel"))]
fn map_batch<F>(streams: std::ops::Range<u64>, _workers: usize, f: F) -> Vec<Result<Sample>>
where
    F: Fn(u64) -> Result<Sample>,
{
    streams.map(f).collect()
}

/// Worker count used by [`run_ensemble`].
pub fn default_workers() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

pub fn run_ensemble(cfg: &EnsembleConfig) -> Result<EnsembleResult> {
    run_ensemble_with(cfg, default_workers())
}

/// Runs the ensemble on `workers` threads; the result is identical for any
/// worker count.
pub fn run_ensemble_with(cfg: &EnsembleConfig, workers: usize) -> Result<EnsembleResult> {
    cfg.validate()?;
    let system = QsdSystem::new(&cfg.sim)?;
    let grid = *system.grid();
    let len = grid.len();
    let stride = cfg.snapshot_stride;
    let indices: Vec<usize> = (0..len).step_by(stride).collect();
    let n = cfg.n_trajectories;
    let blocks = JACKKNIFE_BLOCKS.min(n);

    let mut acc = SeriesAccumulator::new(len);
    let mut block_sums = vec![vec![Operator::zeros(); indices.len()]; blocks];
    let mut block_counts = vec![0usize; blocks];
    let mut failures = Vec::new();
    let mut trajectories = cfg.store_states.then(|| Vec::with_capacity(n));

    let mut start = 0u64;
    while (start as usize) < n {
        let end = (start + BATCH as u64).min(n as u64);
        let batch = map_batch(start..end, workers, |stream| {
            let seed = SeedSpec::new(cfg.master_seed, stream);
            simulate_one(&system, seed, stride, cfg.store_states)
                .map_err(|e| trajectory_error(seed, e))
        });
        for (offset, outcome) in batch.into_iter().enumerate() {
            let stream = start + offset as u64;
            match outcome {
                Ok(sample) => {
                    acc.push(&sample.concurrence)?;
                    let b = (stream % blocks as u64) as usize;
                    for (slot, psi) in block_sums[b].iter_mut().zip(&sample.snapshots) {
                        *slot += psi.projector();
                    }
                    block_counts[b] += 1;
                    if let Some(store) = trajectories.as_mut() {
                        store.push(TrajectoryOutput {
                            times: grid.times(),
                            concurrence: sample.concurrence,
                            states: sample.states,
                            mean_norm_deviation: sample.mean_norm_deviation,
                        });
                    }
                }
                Err(QsdError::Trajectory {
                    stream_index,
                    time_index,
                    reason,
                }) => failures.push(Failure {
                    stream_index,
                    time_index,
                    reason,
                }),
                Err(other) => return Err(other),
            }
        }
        start = end;
    }

    if failures.len() as f64 > MAX_FAILURE_FRACTION * n as f64 {
        return Err(QsdError::TooManyFailures {
            failed: failures.len(),
            total: n,
        });
    }
    let completed = acc.count();
    if completed < 2 {
        return Err(QsdError::TooFewSamples {
            needed: 2,
            got: completed,
        });
    }

    let oracle = run_oracle(
        cfg.oracle,
        cfg.sim.model,
        &cfg.sim.params,
        &system.initial_state(),
        &grid,
    )?;
    let mut series = acc.into_series(grid.times());
    series.oracle_c = oracle.as_ref().map(|o| o.concurrence.clone());

    let snapshots = build_snapshots(&grid, &indices, &block_sums, &block_counts, oracle.as_ref())?;
    Ok(EnsembleResult {
        series,
        rho_snapshots: Some(snapshots),
        failures,
        completed,
        trajectories,
    })
}

fn build_snapshots(
    grid: &TimeGrid,
    indices: &[usize],
    block_sums: &[Vec<Operator>],
    block_counts: &[usize],
    oracle: Option<&OracleRun>,
) -> Result<RhoSnapshots> {
    let total: usize = block_counts.iter().sum();
    let mut rho = Vec::with_capacity(indices.len());
    let mut c_rho = Vec::with_capacity(indices.len());
    let mut c_rho_stderr = Vec::with_capacity(indices.len());
    for k in 0..indices.len() {
        let sums: Vec<Operator> = block_sums.iter().map(|b| b[k]).collect();
        let mean: Operator =
            sums.iter().sum::<Operator>() / crate::algebra::C64::from(total as f64);
        rho.push(DensityMatrix::from_operator(&mean));
        let (c, se) = jackknife_concurrence(&sums, block_counts)?;
        c_rho.push(c);
        c_rho_stderr.push(se);
    }
    Ok(RhoSnapshots {
        indices: indices.to_vec(),
        times: indices.iter().map(|&n| grid.time(n)).collect(),
        rho,
        c_rho,
        c_rho_stderr,
        oracle_rho: oracle.map(|o| indices.iter().map(|&n| o.rho[n].clone()).collect()),
    })
}

/// Exact and post-Markov ensembles on common random numbers, with the
/// pseudomode reference.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeComparison {
    pub exact: EnsembleResult,
    pub post_markov: EnsembleResult,
    pub oracle_c: Vec<f64>,
}

pub fn compare_modes(cfg: &EnsembleConfig) -> Result<ModeComparison> {
    compare_modes_with(cfg, default_workers())
}

pub fn compare_modes_with(cfg: &EnsembleConfig, workers: usize) -> Result<ModeComparison> {
    if cfg.sim.model != Model::Dissipative {
        return Err(QsdError::InvalidConfig(
            "mode comparison applies to the dissipative model only".into(),
        ));
    }
    let oracle = match cfg.oracle {
        OracleKind::None => OracleKind::Pseudomode,
        other => other,
    };
    let mut exact_cfg = *cfg;
    exact_cfg.sim.operator_mode = OperatorMode::Exact;
    exact_cfg.oracle = oracle;
    let mut pm_cfg = exact_cfg;
    pm_cfg.sim.operator_mode = OperatorMode::PostMarkov;
    pm_cfg.oracle = OracleKind::None;
    let exact = run_ensemble_with(&exact_cfg, workers)?;
    let mut post_markov = run_ensemble_with(&pm_cfg, workers)?;
    let oracle_c = exact.series.oracle_c.clone().expect("oracle requested");
    post_markov.series.oracle_c = Some(oracle_c.clone());
    Ok(ModeComparison {
        exact,
        post_markov,
        oracle_c,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    Kappa,
    Gamma,
}

impl std::str::FromStr for SweepParameter {
    type Err = QsdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kappa" => Ok(SweepParameter::Kappa),
            "gamma" => Ok(SweepParameter::Gamma),
            other => Err(QsdError::InvalidConfig(format!(
                "unknown sweep parameter `{other}` (expected kappa or gamma)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    pub cfg: EnsembleConfig,
    pub result: EnsembleResult,
}

/// The configuration with one parameter replaced. The step is kept unless
/// it violates the resolution rule for the new value, in which case the
/// default step for that value is used on the same time span.
pub fn with_parameter(
    cfg: &EnsembleConfig,
    parameter: SweepParameter,
    value: f64,
) -> Result<EnsembleConfig> {
    let mut out = *cfg;
    match parameter {
        SweepParameter::Kappa => out.sim.params.kappa = value,
        SweepParameter::Gamma => out.sim.params.gamma = value,
    }
    out.sim.params.validate()?;
    let dt = cfg.sim.grid.dt.min(default_dt(&out.sim.params));
    if dt < cfg.sim.grid.dt {
        out.sim.grid = TimeGrid::spanning(cfg.sim.grid.t_max(), dt)?;
    }
    out.validate()?;
    Ok(out)
}

/// One ensemble per value, all on the same master seed.
pub fn sweep(
    cfg: &EnsembleConfig,
    parameter: SweepParameter,
    values: &[f64],
) -> Result<Vec<SweepPoint>> {
    sweep_with(cfg, parameter, values, default_workers())
}

pub fn sweep_with(
    cfg: &EnsembleConfig,
    parameter: SweepParameter,
    values: &[f64],
    workers: usize,
) -> Result<Vec<SweepPoint>> {
    values
        .iter()
        .map(|&value| {
            let point_cfg = with_parameter(cfg, parameter, value)?;
            let result = run_ensemble_with(&point_cfg, workers)?;
            Ok(SweepPoint {
                value,
                cfg: point_cfg,
                result,
            })
        })
        .collect()
}

/// First time the curve falls to `level`, linearly interpolated; `None` if
/// it never does.
pub fn time_to_level(times: &[f64], values: &[f64], level: f64) -> Option<f64> {
    let first = values.iter().position(|&v| v <= level)?;
    if first == 0 {
        return Some(times[0]);
    }
    let (t0, t1) = (times[first - 1], times[first]);
    let (v0, v1) = (values[first - 1], values[first]);
    Some(t0 + (t1 - t0) * (v0 - level) / (v0 - v1))
}

/// First time the curve falls to one half; `None` stands for "never".
pub fn time_to_half(times: &[f64], values: &[f64]) -> Option<f64> {
    time_to_level(times, values, 0.5)
}

/// Orders "never" after every finite time.
pub fn half_life_key(t: Option<f64>) -> f64 {
    t.unwrap_or(f64::INFINITY)
}

/// Smallest rise counted as a revival of a Monte Carlo mean curve.
pub const REVIVAL_MARGIN: f64 = 0.01;

/// Largest increase of a curve over its running minimum from `start` on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rise {
    pub from: usize,
    pub to: usize,
    pub size: f64,
    /// Standard error of the paired difference `c_i(t_to) − c_i(t_from)`.
    pub stderr: f64,
}

impl Rise {
    /// Larger than both the margin and three paired standard errors.
    pub fn is_revival(&self) -> bool {
        self.size > REVIVAL_MARGIN.max(3.0 * self.stderr)
    }
}

/// `(from, to, size)` maximizing `values[to] − min_{start≤k≤to} values[k]`.
pub fn largest_rise(values: &[f64], start: usize) -> (usize, usize, f64) {
    let mut best = (start, start, 0.0);
    let mut min_idx = start;
    for j in start..values.len() {
        if values[j] < values[min_idx] {
            min_idx = j;
        }
        if values[j] - values[min_idx] > best.2 {
            best = (min_idx, j, values[j] - values[min_idx]);
        }
    }
    best
}

/// Largest rise of the mean concurrence with its paired standard error.
/// Needs the per-trajectory outputs (`store_states`).
pub fn mean_curve_rise(result: &EnsembleResult, start: usize) -> Option<Rise> {
    let trajectories = result.trajectories.as_ref()?;
    let (from, to, size) = largest_rise(&result.series.mean_c, start);
    let diffs: Vec<f64> = trajectories
        .iter()
        .map(|t| t.concurrence[to] - t.concurrence[from])
        .collect();
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some(Rise {
        from,
        to,
        size,
        stderr: (var / n).sqrt(),
    })
}

/// First index at which the curve is at or below `level`.
pub fn first_at_or_below(values: &[f64], level: f64) -> Option<usize> {
    values.iter().position(|&v| v <= level)
}

/// Death–revival of a deterministic curve: an exact-zero run of at least
/// `min_len` points followed later by a value above `revival`.
pub fn death_then_revival(values: &[f64], min_len: usize, revival: f64) -> bool {
    let mut run = 0;
    for (k, &v) in values.iter().enumerate() {
        if v == 0.0 {
            run += 1;
        } else {
            if run >= min_len && values[k..].iter().any(|&x| x > revival) {
                return true;
            }
            run = 0;
        }
    }
    false
}

//! Trajectory integration of the normalized (nonlinear) diffusion equation
//! and, for cross-checks, the unnormalized linear one.
//!
//! The nonlinear equation is driven by the shifted noise
//! `x̃*_t = x*_t + ∫₀ᵗ α(t,s)⟨𝓛†⟩_s ds`. With the exponential kernel the
//! memory integral is carried by a single running value updated once per
//! step, as is the noise convolution inside the dissipative `Ō`.

use serde::{Deserialize, Serialize};

use crate::algebra::{bell_state, system_hamiltonian, BellState, Operator, PureState, C64};
use crate::entanglement::concurrence_pure_unchecked;
use crate::error::{QsdError, Result};
use crate::noise::{CorrelationKernel, NoisePath, OuNoise, SeedSpec, TimeGrid, MAX_GAMMA_DT};
use crate::ooperator::{
    double_lowering, lindblad_operator, obar_dephasing, obar_post_markov, CoefficientTable, Model,
    ModelParams, NoiseConvolution,
};

use nalgebra::Vector4;

const I: C64 = C64::new(0.0, 1.0);

/// Norm below which a trajectory is considered collapsed.
pub const COLLAPSE_NORM: f64 = 1e-12;
/// Unnormalized norm beyond which the linear integrator reports overflow.
pub const OVERFLOW_NORM: f64 = 1e150;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorMode {
    Exact,
    PostMarkov,
}

impl std::str::FromStr for OperatorMode {
    type Err = QsdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(OperatorMode::Exact),
            "post_markov" | "post-markov" => Ok(OperatorMode::PostMarkov),
            other => Err(QsdError::InvalidConfig(format!(
                "unknown operator mode `{other}` (expected exact or post_markov)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    EulerMaruyama,
    Heun,
}

impl std::str::FromStr for Scheme {
    type Err = QsdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler_maruyama" | "euler" => Ok(Scheme::EulerMaruyama),
            "heun" => Ok(Scheme::Heun),
            other => Err(QsdError::InvalidConfig(format!(
                "unknown scheme `{other}` (expected euler_maruyama or heun)"
            ))),
        }
    }
}

/// Initial two-qubit state: a Bell state by name or explicit amplitudes as
/// `[re, im]` pairs in the computational basis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialState {
    Bell(BellState),
    Amplitudes([[f64; 2]; 4]),
}

impl InitialState {
    pub fn ground() -> Self {
        InitialState::Amplitudes([[0.0; 2], [0.0; 2], [0.0; 2], [1.0, 0.0]])
    }

    pub fn to_state(&self) -> Result<PureState> {
        match self {
            InitialState::Bell(kind) => Ok(bell_state(*kind)),
            InitialState::Amplitudes(a) => {
                let state = PureState::from_amplitudes(a.map(|[re, im]| C64::new(re, im)));
                state.check_normalized()?;
                state.normalized()
            }
        }
    }
}

impl From<BellState> for InitialState {
    fn from(kind: BellState) -> Self {
        InitialState::Bell(kind)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub model: Model,
    pub operator_mode: OperatorMode,
    pub params: ModelParams,
    pub grid: TimeGrid,
    pub initial_state: InitialState,
    pub scheme: Scheme,
}

/// `min(0.1/γ, 0.05)/2`, further limited so that `dt·|ω| ≤ 0.1`.
pub fn default_dt(params: &ModelParams) -> f64 {
    let omega = params.omega_a.abs().max(params.omega_b.abs());
    let mut dt = (MAX_GAMMA_DT / params.gamma).min(0.05) / 2.0;
    if omega > 0.0 {
        dt = dt.min(0.1 / omega);
    }
    dt
}

impl SimulationConfig {
    /// Config on `[0, t_max]` with the default step and Euler scheme.
    pub fn new(
        model: Model,
        operator_mode: OperatorMode,
        params: ModelParams,
        initial_state: impl Into<InitialState>,
        t_max: f64,
    ) -> Result<Self> {
        let grid = TimeGrid::spanning(t_max, default_dt(&params))?;
        let cfg = Self {
            model,
            operator_mode,
            params,
            grid,
            initial_state: initial_state.into(),
            scheme: Scheme::EulerMaruyama,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn with_grid(mut self, grid: TimeGrid) -> Result<Self> {
        self.grid = grid;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.grid.validate()?;
        self.grid.check_kernel_resolution(self.params.gamma)?;
        let omega = self.params.omega_a.abs().max(self.params.omega_b.abs());
        if self.grid.dt * omega > 0.1 * (1.0 + 1e-12) {
            return Err(QsdError::StepSize {
                dt: self.grid.dt,
                constraint: "dt·max(ω_A, ω_B) ≤ 0.1",
            });
        }
        if self.operator_mode == OperatorMode::PostMarkov {
            if self.model != Model::Dissipative {
                return Err(QsdError::InvalidConfig(
                    "post_markov operator mode applies to the dissipative model only".into(),
                ));
            }
            if self.params.omega_a != self.params.omega_b {
                return Err(QsdError::InvalidConfig(
                    "post_markov operator mode requires omega_a == omega_b".into(),
                ));
            }
        }
        self.initial_state.to_state()?;
        Ok(())
    }
}

/// Per-configuration data shared read-only by every trajectory.
#[derive(Debug, Clone)]
pub struct QsdSystem {
    pub cfg: SimulationConfig,
    initial: PureState,
    /// Diagonal of `H_sys`.
    h_diag: Vector4<C64>,
    l: Operator,
    l_dag: Operator,
    /// Noise-free part of `Ō` at each grid point.
    obar_base: Vec<Operator>,
    /// Present for the exact dissipative model, whose `Ō` carries a noise term.
    coefficients: Option<CoefficientTable>,
    shift_decay: f64,
}

impl QsdSystem {
    pub fn new(cfg: &SimulationConfig) -> Result<Self> {
        cfg.validate()?;
        let p = &cfg.params;
        let grid = &cfg.grid;
        let l = lindblad_operator(cfg.model, p.kappa);
        let h = system_hamiltonian(p.omega_a, p.omega_b);
        let (obar_base, coefficients) = match (cfg.model, cfg.operator_mode) {
            (Model::Dissipative, OperatorMode::Exact) => {
                let table = CoefficientTable::compute(p, grid)?;
                let base = table
                    .values
                    .iter()
                    .map(|c| c.noise_free_operator())
                    .collect();
                (base, Some(table))
            }
            (Model::Dissipative, OperatorMode::PostMarkov) => {
                let base = (0..grid.len())
                    .map(|n| obar_post_markov(p, grid.time(n)))
                    .collect::<Result<Vec<_>>>()?;
                (base, None)
            }
            (Model::Dephasing, _) => {
                let base = (0..grid.len())
                    .map(|n| obar_dephasing(p, grid.time(n)))
                    .collect();
                (base, None)
            }
        };
        Ok(Self {
            cfg: *cfg,
            initial: cfg.initial_state.to_state()?,
            h_diag: h.diagonal(),
            l,
            l_dag: l.adjoint(),
            obar_base,
            coefficients,
            shift_decay: (-p.gamma * grid.dt).exp(),
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.cfg.grid
    }

    pub fn initial_state(&self) -> PureState {
        self.initial
    }

    pub fn lindblad(&self) -> &Operator {
        &self.l
    }

    /// Full `Ō` at grid point `n` given the noise convolution there.
    pub fn obar(&self, n: usize, w: &NoiseConvolution) -> Operator {
        match self.coefficients {
            Some(_) => self.obar_base[n] + double_lowering() * (w.value * 2.0),
            None => self.obar_base[n],
        }
    }

    fn advance_convolution(
        &self,
        w: &NoiseConvolution,
        n: usize,
        x_prev: C64,
        x_next: C64,
    ) -> NoiseConvolution {
        match &self.coefficients {
            Some(table) => w.advanced(
                table.at(n),
                table.at(n + 1),
                self.cfg.params.kappa,
                x_prev,
                x_next,
                self.cfg.grid.dt,
            ),
            None => *w,
        }
    }

    /// Raw noise generator on this system's grid.
    pub fn noise(&self, seed: SeedSpec) -> Result<OuNoise> {
        let kernel = CorrelationKernel::new(self.cfg.params.gamma)?;
        Ok(OuNoise::new(&kernel, self.cfg.grid.dt, seed))
    }

    pub fn start(&self) -> TrajectoryState {
        let c = expectation(&self.initial.amps().clone_owned(), &self.l).conj();
        TrajectoryState {
            psi: self.initial,
            w: NoiseConvolution::new(),
            y_shift: C64::new(0.0, 0.0),
            ldag_expectation: c,
            index: 0,
        }
    }

    /// Right-hand side of the nonlinear equation in state `psi` with shifted
    /// noise `x` and operator `obar`.
    fn nonlinear_drift(&self, psi: &Vector4<C64>, x: C64, obar: &Operator) -> Vector4<C64> {
        let l_psi = self.l * psi;
        let l_mean = psi.dotc(&l_psi);
        let ldag_mean = l_mean.conj();
        let o_psi = obar * psi;
        let x_psi = self.l_dag * o_psi - o_psi * ldag_mean;
        let x_mean = psi.dotc(&x_psi);
        let mut out = Vector4::zeros();
        for k in 0..4 {
            out[k] = -I * self.h_diag[k] * psi[k] + x * (l_psi[k] - l_mean * psi[k])
                - (x_psi[k] - x_mean * psi[k]);
        }
        out
    }

    fn linear_drift(&self, psi: &Vector4<C64>, x: C64, obar: &Operator) -> Vector4<C64> {
        let l_psi = self.l * psi;
        let ld_o_psi = self.l_dag * (obar * psi);
        let mut out = Vector4::zeros();
        for k in 0..4 {
            out[k] = -I * self.h_diag[k] * psi[k] + x * l_psi[k] - ld_o_psi[k];
        }
        out
    }
}

#[inline]
fn expectation(psi: &Vector4<C64>, op: &Operator) -> C64 {
    psi.dotc(&(op * psi))
}

/// Mutable per-trajectory state at grid point `index`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryState {
    pub psi: PureState,
    pub w: NoiseConvolution,
    /// `∫₀ᵗ α(t,s)⟨𝓛†⟩_s ds`
    pub y_shift: C64,
    /// `⟨𝓛†⟩` in the current state.
    pub ldag_expectation: C64,
    pub index: usize,
}

/// Advances `y = ∫₀ᵗ α(t,s) c_s ds` by one step of length `dt`.
///
/// The kernel factor is propagated exactly (`dy/dt = −γy + (γ/2)c`) and the
/// source is weighted by the trapezoid rule between the endpoint values.
pub fn shifted_noise_update(y: C64, ldag_prev: C64, ldag_next: C64, gamma: f64, dt: f64) -> C64 {
    let decay = (-gamma * dt).exp();
    shift_with_decay(y, ldag_prev, ldag_next, gamma, dt, decay)
}

#[inline]
fn shift_with_decay(y: C64, c_prev: C64, c_next: C64, gamma: f64, dt: f64, decay: f64) -> C64 {
    let w = 0.25 * gamma * dt;
    y * decay + (c_prev * decay + c_next) * w
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    /// `|‖ψ‖ − 1|` just before renormalization.
    pub norm_deviation: f64,
}

/// One step of the nonlinear equation from grid point `state.index` using
/// the raw noise samples at that point and the next.
pub fn step_nonlinear(
    state: &TrajectoryState,
    system: &QsdSystem,
    noise_now: C64,
    noise_next: C64,
) -> Result<(TrajectoryState, StepReport)> {
    let n = state.index;
    let dt = system.cfg.grid.dt;
    let gamma = system.cfg.params.gamma;
    let psi = *state.psi.amps();
    let x_now = noise_now + state.y_shift;
    let drift_now = system.nonlinear_drift(&psi, x_now, &system.obar(n, &state.w));

    let finish = |raw: Vector4<C64>| -> Result<(PureState, f64)> {
        let norm = raw.norm();
        if !norm.is_finite() {
            return Err(QsdError::NonFinite {
                what: "state",
                time_index: n + 1,
            });
        }
        if norm < COLLAPSE_NORM {
            return Err(QsdError::NormCollapse {
                norm,
                time_index: n + 1,
            });
        }
        Ok((
            PureState::from_vector(raw.unscale(norm)),
            (norm - 1.0).abs(),
        ))
    };
    // Memory terms at n + 1 implied by a candidate state there.
    let advance = |psi_next: &PureState| {
        let c_next = expectation(psi_next.amps(), &system.l).conj();
        let y_next = shift_with_decay(
            state.y_shift,
            state.ldag_expectation,
            c_next,
            gamma,
            dt,
            system.shift_decay,
        );
        let x_next = noise_next + y_next;
        let w_next = system.advance_convolution(&state.w, n, x_now, x_next);
        (c_next, y_next, x_next, w_next)
    };

    let (psi_next, norm_deviation) = match system.cfg.scheme {
        Scheme::EulerMaruyama => finish(psi + drift_now * C64::from(dt))?,
        Scheme::Heun => {
            let (predicted, _) = finish(psi + drift_now * C64::from(dt))?;
            let (_, _, x_pred, w_pred) = advance(&predicted);
            let drift_pred =
                system.nonlinear_drift(predicted.amps(), x_pred, &system.obar(n + 1, &w_pred));
            finish(psi + (drift_now + drift_pred) * C64::from(0.5 * dt))?
        }
    };
    let (c_next, y_next, _, w_next) = advance(&psi_next);
    Ok((
        TrajectoryState {
            psi: psi_next,
            w: w_next,
            y_shift: y_next,
            ldag_expectation: c_next,
            index: n + 1,
        },
        StepReport { norm_deviation },
    ))
}

/// Unnormalized state of the linear equation with its noise convolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearState {
    pub psi: PureState,
    pub w: NoiseConvolution,
    pub index: usize,
}

impl LinearState {
    pub fn new(system: &QsdSystem) -> Self {
        Self {
            psi: system.initial_state(),
            w: NoiseConvolution::new(),
            index: 0,
        }
    }
}

/// One step of the linear equation `∂ψ = −iHψ + 𝓛x*ψ − 𝓛†Ōψ` driven by the
/// raw (unshifted) noise.
pub fn step_linear(
    state: &LinearState,
    system: &QsdSystem,
    noise_now: C64,
    noise_next: C64,
) -> Result<LinearState> {
    let n = state.index;
    let dt = system.cfg.grid.dt;
    let psi = *state.psi.amps();
    let w_next = system.advance_convolution(&state.w, n, noise_now, noise_next);
    let drift_now = system.linear_drift(&psi, noise_now, &system.obar(n, &state.w));
    let raw = match system.cfg.scheme {
        Scheme::EulerMaruyama => psi + drift_now * C64::from(dt),
        Scheme::Heun => {
            let predicted = psi + drift_now * C64::from(dt);
            let drift_pred =
                system.linear_drift(&predicted, noise_next, &system.obar(n + 1, &w_next));
            psi + (drift_now + drift_pred) * C64::from(0.5 * dt)
        }
    };
    let norm = raw.norm();
    if !norm.is_finite() || norm > OVERFLOW_NORM {
        return Err(QsdError::NormOverflow {
            norm,
            time_index: n + 1,
        });
    }
    Ok(LinearState {
        psi: PureState::from_vector(raw),
        w: w_next,
        index: n + 1,
    })
}

/// Per-trajectory output on the configuration grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryOutput {
    pub times: Vec<f64>,
    pub concurrence: Vec<f64>,
    pub states: Option<Vec<PureState>>,
    /// Mean of `|‖ψ‖ − 1|` before renormalization over all steps.
    pub mean_norm_deviation: f64,
}

/// Integrates one nonlinear trajectory, calling `observe(n, ψ_n)` at every
/// grid point including `n = 0`. Returns the mean pre-renormalization norm
/// deviation.
pub fn integrate_nonlinear<N, F>(system: &QsdSystem, mut noise: N, mut observe: F) -> Result<f64>
where
    N: FnMut() -> C64,
    F: FnMut(usize, &PureState),
{
    let steps = system.grid().n_steps;
    let mut state = system.start();
    observe(0, &state.psi);
    let mut x_now = noise();
    let mut deviation = 0.0;
    for _ in 0..steps {
        let x_next = noise();
        let (next, report) = step_nonlinear(&state, system, x_now, x_next)?;
        deviation += report.norm_deviation;
        state = next;
        observe(state.index, &state.psi);
        x_now = x_next;
    }
    Ok(deviation / steps as f64)
}

/// Integrates one linear trajectory, observing the unnormalized state.
pub fn integrate_linear<N, F>(system: &QsdSystem, mut noise: N, mut observe: F) -> Result<()>
where
    N: FnMut() -> C64,
    F: FnMut(usize, &PureState),
{
    let mut state = LinearState::new(system);
    observe(0, &state.psi);
    let mut x_now = noise();
    for _ in 0..system.grid().n_steps {
        let x_next = noise();
        state = step_linear(&state, system, x_now, x_next)?;
        observe(state.index, &state.psi);
        x_now = x_next;
    }
    Ok(())
}

/// Closure yielding the samples of a seeded O-U generator in grid order.
pub fn seeded_noise(system: &QsdSystem, seed: SeedSpec) -> Result<impl FnMut() -> C64> {
    let mut gen = system.noise(seed)?;
    let mut first = true;
    Ok(move || {
        if first {
            first = false;
            gen.current()
        } else {
            gen.advance()
        }
    })
}

/// Closure yielding the samples of a stored path.
pub fn path_noise<'a>(system: &QsdSystem, path: &'a NoisePath) -> Result<impl FnMut() -> C64 + 'a> {
    if path.grid.n_steps != system.grid().n_steps
        || (path.grid.dt - system.grid().dt).abs() > 1e-12 * system.grid().dt
    {
        return Err(QsdError::GridMismatch);
    }
    let mut it = path.samples.iter().copied();
    Ok(move || it.next().expect("noise path shorter than grid"))
}

fn collect_output<N: FnMut() -> C64>(
    system: &QsdSystem,
    noise: N,
    store_states: bool,
) -> Result<TrajectoryOutput> {
    let len = system.grid().len();
    let mut concurrence = Vec::with_capacity(len);
    let mut states = store_states.then(|| Vec::with_capacity(len));
    let mean_norm_deviation = integrate_nonlinear(system, noise, |_, psi| {
        concurrence.push(concurrence_pure_unchecked(psi));
        if let Some(s) = states.as_mut() {
            s.push(*psi);
        }
    })?;
    Ok(TrajectoryOutput {
        times: system.grid().times(),
        concurrence,
        states,
        mean_norm_deviation,
    })
}

/// One unravelling for the given seed substream. Errors carry the stream
/// index and the failing time index.
pub fn run_trajectory(cfg: &SimulationConfig, seed: SeedSpec) -> Result<TrajectoryOutput> {
    let system = QsdSystem::new(cfg)?;
    run_trajectory_with(&system, seed, false)
}

pub fn run_trajectory_with(
    system: &QsdSystem,
    seed: SeedSpec,
    store_states: bool,
) -> Result<TrajectoryOutput> {
    collect_output(system, seeded_noise(system, seed)?, store_states)
        .map_err(|e| trajectory_error(seed, e))
}

/// Trajectory driven by an explicit noise path on the system grid.
pub fn run_trajectory_on_path(
    system: &QsdSystem,
    path: &NoisePath,
    store_states: bool,
) -> Result<TrajectoryOutput> {
    collect_output(system, path_noise(system, path)?, store_states)
}

pub(crate) fn trajectory_error(seed: SeedSpec, e: QsdError) -> QsdError {
    let time_index = match &e {
        QsdError::NormCollapse { time_index, .. }
        | QsdError::NonFinite { time_index, .. }
        | QsdError::NormOverflow { time_index, .. } => *time_index,
        _ => 0,
    };
    QsdError::Trajectory {
        stream_index: seed.stream_index,
        time_index,
        reason: e.to_string(),
    }
}

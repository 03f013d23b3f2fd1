//! Deterministic density-matrix references.
//!
//! * Pseudomode: the O-U kernel is the correlation function of a single
//!   damped bosonic mode at zero frequency, so qubits ⊗ mode under a
//!   Lindblad equation reproduce the reduced dynamics exactly.
//! * Dephasing: with `Ō = f₀(t)𝓛` and Hermitian `𝓛` the reduced state obeys
//!   `dρ/dt = −i[H,ρ] − f₀(t)[𝓛,[𝓛,ρ]]`.
//! * Markov limit: `γ → ∞` with rate `f₀(∞) = 1/2`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::algebra::{system_hamiltonian, DensityMatrix, Operator, PureState, C64};
use crate::entanglement::concurrence_mixed;
use crate::error::{QsdError, Result};
use crate::noise::TimeGrid;
use crate::ooperator::{f_functions, lindblad_operator, Model, ModelParams};

const I: C64 = C64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    Pseudomode,
    DephasingExact,
    Markov,
    None,
}

impl std::str::FromStr for OracleKind {
    type Err = QsdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pseudomode" => Ok(OracleKind::Pseudomode),
            "dephasing_exact" | "dephasing-exact" => Ok(OracleKind::DephasingExact),
            "markov" => Ok(OracleKind::Markov),
            "none" => Ok(OracleKind::None),
            other => Err(QsdError::InvalidConfig(format!(
                "unknown oracle `{other}` (expected pseudomode, dephasing_exact, markov or none)"
            ))),
        }
    }
}

/// Time profile of a dissipator rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rate {
    Constant(f64),
    /// `scale · f₀(t)` for the O-U kernel with the given `γ`.
    KernelIntegral {
        gamma: f64,
        scale: f64,
    },
}

impl Rate {
    pub fn at(&self, t: f64) -> f64 {
        match *self {
            Rate::Constant(r) => r,
            Rate::KernelIntegral { gamma, scale } => scale * f_functions(gamma, t).0,
        }
    }
}

/// One term `r(t)(JρJ† − ½{J†J, ρ})`.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub op: DMatrix<C64>,
    pub rate: Rate,
    op_dag: DMatrix<C64>,
    op_dag_op: DMatrix<C64>,
}

impl Channel {
    pub fn new(op: DMatrix<C64>, rate: Rate) -> Self {
        let op_dag = op.adjoint();
        let op_dag_op = &op_dag * &op;
        Self {
            op,
            rate,
            op_dag,
            op_dag_op,
        }
    }
}

/// Generator `dρ/dt = −i[H, ρ] + Σ r_k(t)(J_k ρ J_k† − ½{J_k†J_k, ρ})`.
#[derive(Debug, Clone, PartialEq)]
pub struct MasterEquation {
    pub hamiltonian: DMatrix<C64>,
    pub channels: Vec<Channel>,
}

impl MasterEquation {
    pub fn zero(dim: usize) -> Self {
        Self {
            hamiltonian: DMatrix::zeros(dim, dim),
            channels: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.hamiltonian.nrows()
    }

    pub fn rhs(&self, t: f64, rho: &DMatrix<C64>) -> DMatrix<C64> {
        // K = H − (i/2)Σ r J†J, so that dρ = −i(Kρ − ρK†) + Σ r JρJ†.
        let mut k = self.hamiltonian.clone();
        let mut out = DMatrix::zeros(rho.nrows(), rho.ncols());
        for ch in &self.channels {
            let r = ch.rate.at(t);
            if r == 0.0 {
                continue;
            }
            k -= &ch.op_dag_op * C64::new(0.0, 0.5 * r);
            out += (&ch.op * rho * &ch.op_dag) * C64::from(r);
        }
        let k_rho = &k * rho;
        out -= (&k_rho - k_rho.adjoint()) * I;
        out
    }
}

fn embed(op: &Operator) -> DMatrix<C64> {
    DMatrix::from_fn(4, 4, |r, c| op[(r, c)])
}

fn kron(a: &DMatrix<C64>, b: &DMatrix<C64>) -> DMatrix<C64> {
    a.kronecker(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudomodeConfig {
    pub n_max: usize,
    pub model: Model,
    pub params: ModelParams,
}

impl PseudomodeConfig {
    pub const DEFAULT_N_MAX: usize = 4;

    pub fn new(model: Model, params: ModelParams) -> Self {
        Self {
            n_max: Self::DEFAULT_N_MAX,
            model,
            params,
        }
    }

    pub fn with_n_max(mut self, n_max: usize) -> Self {
        self.n_max = n_max;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.n_max < 2 {
            return Err(QsdError::InvalidConfig(format!(
                "pseudomode truncation n_max = {} must be at least 2",
                self.n_max
            )));
        }
        Ok(())
    }

    /// Coupling `g` with `g² = γ/2`.
    pub fn coupling(&self) -> f64 {
        (0.5 * self.params.gamma).sqrt()
    }

    /// Mode damping `Γ = 2γ`, so the mode correlation decays at rate `γ`.
    pub fn damping(&self) -> f64 {
        2.0 * self.params.gamma
    }
}

/// Truncated annihilation operator on `n_max + 1` Fock states.
pub fn annihilation(n_max: usize) -> DMatrix<C64> {
    let d = n_max + 1;
    DMatrix::from_fn(d, d, |r, c| {
        if c == r + 1 {
            C64::from((c as f64).sqrt())
        } else {
            C64::from(0.0)
        }
    })
}

/// Qubits ⊗ pseudomode generator, mode as the trailing factor.
pub fn pseudomode_generator(cfg: &PseudomodeConfig) -> Result<MasterEquation> {
    cfg.validate()?;
    let p = &cfg.params;
    let d = cfg.n_max + 1;
    let id_mode = DMatrix::<C64>::identity(d, d);
    let id_q = DMatrix::<C64>::identity(4, 4);
    let a = annihilation(cfg.n_max);
    let l = embed(&lindblad_operator(cfg.model, p.kappa));
    let h_sys = embed(&system_hamiltonian(p.omega_a, p.omega_b));
    let coupling = kron(&l, &a.adjoint()) + kron(&l.adjoint(), &a);
    let hamiltonian = kron(&h_sys, &id_mode) + coupling * C64::from(cfg.coupling());
    Ok(MasterEquation {
        hamiltonian,
        channels: vec![Channel::new(kron(&id_q, &a), Rate::Constant(cfg.damping()))],
    })
}

/// `−i[H,ρ] − f₀(t)[𝓛,[𝓛,ρ]]`, written as a dissipator of rate `2f₀(t)`.
pub fn dephasing_master_generator(p: &ModelParams) -> Result<MasterEquation> {
    p.validate()?;
    Ok(MasterEquation {
        hamiltonian: embed(&system_hamiltonian(p.omega_a, p.omega_b)),
        channels: vec![Channel::new(
            embed(&lindblad_operator(Model::Dephasing, p.kappa)),
            Rate::KernelIntegral {
                gamma: p.gamma,
                scale: 2.0,
            },
        )],
    })
}

/// `−i[H,ρ] + ½(2𝓛ρ𝓛† − {𝓛†𝓛, ρ})`.
pub fn markov_limit_generator(model: Model, p: &ModelParams) -> Result<MasterEquation> {
    p.validate()?;
    Ok(MasterEquation {
        hamiltonian: embed(&system_hamiltonian(p.omega_a, p.omega_b)),
        channels: vec![Channel::new(
            embed(&lindblad_operator(model, p.kappa)),
            Rate::Constant(1.0),
        )],
    })
}

fn check_state(rho: &DMatrix<C64>, time_index: usize) -> Result<()> {
    let dm = DensityMatrix::from_matrix(rho.clone());
    let fail = |reason: String| Err(QsdError::MasterEquation { time_index, reason });
    let herm = dm.hermiticity_error();
    if !herm.is_finite() || herm > DensityMatrix::HERMITICITY_TOLERANCE {
        return fail(format!("hermiticity error {herm:e}"));
    }
    let tr = dm.trace();
    if (tr - C64::from(1.0)).norm() > DensityMatrix::TRACE_TOLERANCE {
        return fail(format!("trace {tr}"));
    }
    let min = dm.min_eigenvalue();
    if min < -DensityMatrix::POSITIVITY_TOLERANCE {
        return fail(format!("minimum eigenvalue {min:e}"));
    }
    Ok(())
}

impl MasterEquation {
    /// Crude stiffness scale `‖H‖_F + Σ max_t r_k ‖J_k†J_k‖_F`.
    pub fn stiffness(&self) -> f64 {
        let rates: f64 = self
            .channels
            .iter()
            .map(|ch| {
                let r = match ch.rate {
                    Rate::Constant(r) => r.abs(),
                    Rate::KernelIntegral { scale, .. } => 0.5 * scale.abs(),
                };
                r * ch.op_dag_op.norm()
            })
            .sum();
        self.hamiltonian.norm() + rates
    }

    /// RK4 substeps per grid step keeping `h · stiffness ≤ 0.05`.
    pub fn substeps_for(&self, dt: f64) -> usize {
        ((dt * self.stiffness() / 0.05).ceil() as usize).max(1)
    }
}

/// Classical RK4 with automatically chosen substeps, validating the state at
/// every grid point.
pub fn integrate_master_equation(
    generator: &MasterEquation,
    rho0: &DensityMatrix,
    grid: &TimeGrid,
) -> Result<Vec<DensityMatrix>> {
    integrate_master_equation_substeps(generator, rho0, grid, generator.substeps_for(grid.dt))
}

pub fn integrate_master_equation_substeps(
    generator: &MasterEquation,
    rho0: &DensityMatrix,
    grid: &TimeGrid,
    substeps: usize,
) -> Result<Vec<DensityMatrix>> {
    grid.validate()?;
    if rho0.dim() != generator.dim() {
        return Err(QsdError::InvalidDensityMatrix(format!(
            "initial state has dimension {}, generator acts on {}",
            rho0.dim(),
            generator.dim()
        )));
    }
    if substeps == 0 {
        return Err(QsdError::InvalidConfig("substeps must be positive".into()));
    }
    rho0.validate()?;
    let h = grid.dt / substeps as f64;
    let half = C64::from(0.5 * h);
    let mut rho = rho0.matrix().clone();
    let mut out = Vec::with_capacity(grid.len());
    out.push(rho0.clone());
    for n in 0..grid.n_steps {
        for m in 0..substeps {
            let t = grid.time(n) + m as f64 * h;
            let k1 = generator.rhs(t, &rho);
            let k2 = generator.rhs(t + 0.5 * h, &(&rho + &k1 * half));
            let k3 = generator.rhs(t + 0.5 * h, &(&rho + &k2 * half));
            let k4 = generator.rhs(t + h, &(&rho + &k3 * C64::from(h)));
            rho += (k1 + (k2 + k3) * C64::from(2.0) + k4) * C64::from(h / 6.0);
        }
        check_state(&rho, n + 1)?;
        out.push(DensityMatrix::from_matrix(rho.clone()));
    }
    Ok(out)
}

/// Two-qubit density matrices and their concurrence on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleRun {
    pub rho: Vec<DensityMatrix>,
    pub concurrence: Vec<f64>,
}

impl OracleRun {
    fn from_reduced(rho: Vec<DensityMatrix>) -> Result<Self> {
        let concurrence = rho
            .iter()
            .map(concurrence_mixed)
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { rho, concurrence })
    }
}

pub fn run_pseudomode(
    cfg: &PseudomodeConfig,
    initial: &PureState,
    grid: &TimeGrid,
) -> Result<OracleRun> {
    let generator = pseudomode_generator(cfg)?;
    let d = cfg.n_max + 1;
    let mut vacuum = DMatrix::<C64>::zeros(d, d);
    vacuum[(0, 0)] = C64::from(1.0);
    let rho0 =
        DensityMatrix::from_matrix(kron(DensityMatrix::from_pure(initial).matrix(), &vacuum));
    let full = integrate_master_equation(&generator, &rho0, grid)?;
    OracleRun::from_reduced(full.iter().map(|r| r.partial_trace_trailing(4)).collect())
}

pub fn run_dephasing_exact(
    p: &ModelParams,
    initial: &PureState,
    grid: &TimeGrid,
) -> Result<OracleRun> {
    let generator = dephasing_master_generator(p)?;
    OracleRun::from_reduced(integrate_master_equation(
        &generator,
        &DensityMatrix::from_pure(initial),
        grid,
    )?)
}

pub fn run_markov(
    model: Model,
    p: &ModelParams,
    initial: &PureState,
    grid: &TimeGrid,
) -> Result<OracleRun> {
    let generator = markov_limit_generator(model, p)?;
    OracleRun::from_reduced(integrate_master_equation(
        &generator,
        &DensityMatrix::from_pure(initial),
        grid,
    )?)
}

/// Runs the requested reference; `None` for `OracleKind::None`.
pub fn run_oracle(
    kind: OracleKind,
    model: Model,
    p: &ModelParams,
    initial: &PureState,
    grid: &TimeGrid,
) -> Result<Option<OracleRun>> {
    match kind {
        OracleKind::None => Ok(None),
        OracleKind::Pseudomode => {
            run_pseudomode(&PseudomodeConfig::new(model, *p), initial, grid).map(Some)
        }
        OracleKind::DephasingExact => {
            if model != Model::Dephasing {
                return Err(QsdError::InvalidConfig(
                    "the dephasing_exact oracle applies to the dephasing model only".into(),
                ));
            }
            run_dephasing_exact(p, initial, grid).map(Some)
        }
        OracleKind::Markov => run_markov(model, p, initial, grid).map(Some),
    }
}

/// `∫₀ᵗ f₀(s) ds = t/2 − (1 − e^{−γt})/(2γ)`.
pub fn f0_integral(gamma: f64, t: f64) -> f64 {
    0.5 * t + 0.5 * (-gamma * t).exp_m1() / gamma
}

/// `C(ρ_t) = exp(−4∫₀ᵗ f₀)` for the dephasing model with `κ = 0` from `Ψ±`.
pub fn dephasing_psi_concurrence(gamma: f64, t: f64) -> f64 {
    (-4.0 * f0_integral(gamma, t)).exp()
}

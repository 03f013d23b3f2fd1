//! Time-local O-operators for the Ornstein-Uhlenbeck bath.
//!
//! For the dissipative model `𝓛 = σ^A_− + κσ^B_−` the kernel-weighted
//! operator `Ō(t) = ∫₀ᵗ α(t,s) Ô(t,s) ds` has the exact form
//!
//! ```text
//! Ō = A σ^A_− + B σ^B_− + F σ^A_z σ^B_− + G σ^B_z σ^A_− + i(∫₀ᵗ P(t,s′) x*_{s′} ds′) σ^A_− σ^B_−
//! ```
//!
//! with `A, B, F, G, Q` obeying a closed set of deterministic ODEs and
//! `P(t,s′) = −2i[F(s′) + κG(s′)] E(t)/E(s′)`,
//! `E(t) = exp ∫₀ᵗ [−γ + iω_A + iω_B + 2A + 2κB] ds`.
//! `Q(t) = ∫₀ᵗ α(t,s) P(t,s) ds` closes the system.
//!
//! The noise integral is carried as a single running value (see
//! [`NoiseConvolution`]), so no two-time array is ever built. Only `log E` is
//! stored.

use serde::{Deserialize, Serialize};
use std::ops::{Add, Mul};

use crate::algebra::{lower_a, lower_b, z_a, z_b, Operator, C64};
use crate::error::{QsdError, Result};
use crate::noise::{TimeGrid, MAX_GAMMA_DT};

const I: C64 = C64::new(0.0, 1.0);

/// Bath coupling model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    /// `L_A = σ^A_−`, `L_B = σ^B_−`
    Dissipative,
    /// `L_A = σ^A_z`, `L_B = σ^B_z`
    Dephasing,
}

impl std::str::FromStr for Model {
    type Err = QsdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dissipative" => Ok(Model::Dissipative),
            "dephasing" => Ok(Model::Dephasing),
            other => Err(QsdError::InvalidConfig(format!(
                "unknown model `{other}` (expected dissipative or dephasing)"
            ))),
        }
    }
}

/// Collective coupling `𝓛 = L_A + κ L_B`.
pub fn lindblad_operator(model: Model, kappa: f64) -> Operator {
    let k = C64::from(kappa);
    match model {
        Model::Dissipative => lower_a() + lower_b() * k,
        Model::Dephasing => z_a() + z_b() * k,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub kappa: f64,
    pub gamma: f64,
    pub omega_a: f64,
    pub omega_b: f64,
}

impl ModelParams {
    pub fn new(kappa: f64, gamma: f64, omega: f64) -> Result<Self> {
        let p = Self {
            kappa,
            gamma,
            omega_a: omega,
            omega_b: omega,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.kappa) {
            return Err(QsdError::InvalidConfig(format!(
                "kappa must lie in [0, 1], got {}",
                self.kappa
            )));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(QsdError::InvalidConfig(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        if !(self.omega_a.is_finite() && self.omega_b.is_finite()) {
            return Err(QsdError::InvalidConfig("omega must be finite".into()));
        }
        Ok(())
    }
}

/// Coefficients `A, B, F, G, Q` and `log E` at one instant. Also used as the
/// tangent (time derivative) of the same quantities.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct OCoefficients {
    pub a: C64,
    pub b: C64,
    pub f: C64,
    pub g: C64,
    pub q: C64,
    pub log_e: C64,
}

impl OCoefficients {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn is_finite(&self) -> bool {
        [self.a, self.b, self.f, self.g, self.q, self.log_e]
            .iter()
            .all(|z| z.is_finite())
    }

    /// `F + κG`, the prefactor of `P(t,s′)` at `s′ = t` (up to `−2i`).
    pub fn noise_weight(&self, kappa: f64) -> C64 {
        self.f + self.g * kappa
    }

    /// Noise-free part `Aσ^A_− + Bσ^B_− + Fσ^A_zσ^B_− + Gσ^B_zσ^A_−`.
    pub fn noise_free_operator(&self) -> Operator {
        let (la, lb, za, zb) = (lower_a(), lower_b(), z_a(), z_b());
        la * self.a + lb * self.b + (za * lb) * self.f + (zb * la) * self.g
    }
}

impl Add for OCoefficients {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            a: self.a + o.a,
            b: self.b + o.b,
            f: self.f + o.f,
            g: self.g + o.g,
            q: self.q + o.q,
            log_e: self.log_e + o.log_e,
        }
    }
}

impl Mul<f64> for OCoefficients {
    type Output = Self;

    fn mul(self, s: f64) -> Self {
        Self {
            a: self.a * s,
            b: self.b * s,
            f: self.f * s,
            g: self.g * s,
            q: self.q * s,
            log_e: self.log_e * s,
        }
    }
}

/// Right-hand side of the coefficient ODEs, plus `d log E/dt`.
pub fn coeff_derivatives(c: &OCoefficients, p: &ModelParams) -> OCoefficients {
    let OCoefficients { a, b, f, g, q, .. } = *c;
    let k = p.kappa;
    let gm = p.gamma;
    let iwa = I * p.omega_a;
    let iwb = I * p.omega_b;
    let iq = I * q;

    let da = a * (-gm) + gm / 2.0 + iwa * a + a * a + f * g * (2.0 * k) + g * g - iq * (k / 2.0);
    let db = b * (-gm) + gm * k / 2.0 + iwb * b + b * b * k + f * g * 2.0 + f * f * k - iq * 0.5;
    let df = f * (-gm) + iwb * f + f * (a + g) + b * (g - a) + b * f * (2.0 * k) - iq * 0.5;
    let dg = g * (-gm) + iwa * g + f * (a + g) * k + b * (g - a) * k + a * g * 2.0 - iq * (k / 2.0);
    let dq = q * (-2.0 * gm) + (iwa + iwb) * q + (a + b * k) * q * 2.0 - I * gm * (f + g * k);
    let dlog_e = C64::from(-gm) + iwa + iwb + a * 2.0 + b * (2.0 * k);

    OCoefficients {
        a: da,
        b: db,
        f: df,
        g: dg,
        q: dq,
        log_e: dlog_e,
    }
}

/// One classical Runge-Kutta step of the coefficient ODEs.
pub fn step_coefficients(c: &OCoefficients, p: &ModelParams, dt: f64) -> Result<OCoefficients> {
    if dt.is_nan() || dt <= 0.0 || dt * p.gamma > MAX_GAMMA_DT * (1.0 + 1e-12) {
        return Err(QsdError::StepSize {
            dt,
            constraint: "dt·γ ≤ 0.1",
        });
    }
    Ok(rk4(c, p, dt))
}

fn rk4(c: &OCoefficients, p: &ModelParams, dt: f64) -> OCoefficients {
    let k1 = coeff_derivatives(c, p);
    let k2 = coeff_derivatives(&(*c + k1 * (0.5 * dt)), p);
    let k3 = coeff_derivatives(&(*c + k2 * (0.5 * dt)), p);
    let k4 = coeff_derivatives(&(*c + k3 * dt), p);
    *c + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

/// Coefficient history on a grid, computed once per parameter set and shared
/// read-only by all trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientTable {
    pub params: ModelParams,
    pub grid: TimeGrid,
    pub values: Vec<OCoefficients>,
}

impl CoefficientTable {
    pub fn compute(params: &ModelParams, grid: &TimeGrid) -> Result<Self> {
        params.validate()?;
        grid.validate()?;
        let mut values = Vec::with_capacity(grid.len());
        let mut c = OCoefficients::zero();
        values.push(c);
        for n in 0..grid.n_steps {
            c = step_coefficients(&c, params, grid.dt)?;
            if !c.is_finite() {
                return Err(QsdError::NonFinite {
                    what: "O-operator coefficients",
                    time_index: n + 1,
                });
            }
            values.push(c);
        }
        Ok(Self {
            params: *params,
            grid: *grid,
            values,
        })
    }

    pub fn at(&self, n: usize) -> &OCoefficients {
        &self.values[n]
    }
}

/// Running noise convolution `∫₀ᵗ [F(s′)+κG(s′)] x̃*_{s′} E(t)/E(s′) ds′`.
///
/// This is `E(t)·W(t)` with `W(t) = ∫₀ᵗ [F+κG] x̃*/E ds′`; storing the
/// product keeps the value bounded when `|E|` decays exponentially. The
/// noise term of `Ō` equals `i·(−2i)·value = 2·value`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NoiseConvolution {
    pub value: C64,
}

impl NoiseConvolution {
    pub fn new() -> Self {
        Self::default()
    }

    /// Advances from grid point `n` to `n + 1`: exact propagation of the
    /// `E(t)/E(s′)` factor and trapezoidal weighting of the source.
    pub fn advanced(
        &self,
        prev: &OCoefficients,
        next: &OCoefficients,
        kappa: f64,
        noise_prev: C64,
        noise_next: C64,
        dt: f64,
    ) -> Self {
        let growth = (next.log_e - prev.log_e).exp();
        let source_prev = prev.noise_weight(kappa) * noise_prev;
        let source_next = next.noise_weight(kappa) * noise_next;
        Self {
            value: growth * (self.value + source_prev * (0.5 * dt)) + source_next * (0.5 * dt),
        }
    }
}

/// `σ^A_− σ^B_−`
pub fn double_lowering() -> Operator {
    lower_a() * lower_b()
}

/// Exact dissipative `Ō` from the coefficients and the noise convolution at
/// the same time.
pub fn assemble_obar_dissipative(c: &OCoefficients, w: &NoiseConvolution) -> Result<Operator> {
    if !c.log_e.is_finite() || !w.value.is_finite() {
        return Err(QsdError::NonFinite {
            what: "O-operator noise term",
            time_index: 0,
        });
    }
    Ok(c.noise_free_operator() + double_lowering() * (w.value * 2.0))
}

/// `f₀(t)·(σ^A_z + κσ^B_z)`: with `Ô(t,s) = 𝓛` the kernel integral reduces to `f₀`.
pub fn obar_dephasing(p: &ModelParams, t: f64) -> Operator {
    let (f0, _, _) = f_functions(p.gamma, t);
    (z_a() + z_b() * C64::from(p.kappa)) * C64::from(f0)
}

/// Closed forms of `f₀ = ∫α`, `f₁ = ∫α(t−s)` and
/// `f₂ = ∫₀ᵗ∫₀ˢ α(t,s)α(s,u)(t−s) du ds` for the O-U kernel:
/// `f₀ = P₁(γt)/2`, `f₁ = P₂(γt)/(2γ)`, `f₂ = P₃(γt)/(4γ)` with
/// `P_n(x) = 1 − e^{−x} Σ_{k<n} x^k/k!`.
pub fn f_functions(gamma: f64, t: f64) -> (f64, f64, f64) {
    let x = gamma * t;
    (
        0.5 * poisson_tail(1, x),
        poisson_tail(2, x) / (2.0 * gamma),
        poisson_tail(3, x) / (4.0 * gamma),
    )
}

/// `1 − e^{−x} Σ_{k<n} x^k/k!`, summed from the tail for small `x`.
fn poisson_tail(n: u32, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x < 1.0 {
        let mut term = (1..=n).fold(1.0, |acc, k| acc * x / k as f64);
        let mut sum = 0.0;
        let mut k = n;
        while term > 1e-18 * sum || sum == 0.0 {
            sum += term;
            k += 1;
            term *= x / k as f64;
            if term == 0.0 {
                break;
            }
        }
        sum * (-x).exp()
    } else {
        let mut term = 1.0;
        let mut head = 0.0;
        for k in 0..n {
            head += term;
            term *= x / (k + 1) as f64;
        }
        1.0 - (-x).exp() * head
    }
}

/// Post-Markov `Ō_PM = (f₀ + iωf₁)𝓛 − f₂(σ^A_z + κ²σ^B_z)𝓛` for the
/// dissipative coupling.
pub fn obar_post_markov(p: &ModelParams, t: f64) -> Result<Operator> {
    if p.omega_a != p.omega_b {
        return Err(QsdError::InvalidConfig(
            "post-Markov operator requires omega_a == omega_b".into(),
        ));
    }
    let (f0, f1, f2) = f_functions(p.gamma, t);
    let l = lindblad_operator(Model::Dissipative, p.kappa);
    let z = z_a() + z_b() * C64::from(p.kappa * p.kappa);
    Ok(l * (C64::from(f0) + I * (p.omega_a * f1)) - z * l * C64::from(f2))
}

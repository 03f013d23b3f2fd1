//! Two-qubit linear algebra.
//!
//! Basis ordering is fixed as `|↑↑⟩, |↑↓⟩, |↓↑⟩, |↓↓⟩` with qubit A as the
//! leading tensor factor, `σ_z|↑⟩ = +|↑⟩` and `σ_−|↑⟩ = |↓⟩`. Complex
//! conjugation and concurrence depend on this choice.

use nalgebra::{DMatrix, Matrix2, Matrix4, Vector4};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{QsdError, Result};

pub type C64 = Complex64;

/// Single-qubit operator in the `|↑⟩, |↓⟩` basis.
pub type QubitOperator = Matrix2<C64>;

/// Two-qubit operator in the fixed product basis.
pub type Operator = Matrix4<C64>;

pub const NORM_TOLERANCE: f64 = 1e-6;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);
const I: C64 = C64::new(0.0, 1.0);

pub fn identity2() -> QubitOperator {
    QubitOperator::identity()
}

pub fn sigma_z() -> QubitOperator {
    QubitOperator::new(ONE, ZERO, ZERO, -ONE)
}

/// Lowering operator, `σ_−|↑⟩ = |↓⟩`.
pub fn sigma_minus() -> QubitOperator {
    QubitOperator::new(ZERO, ZERO, ONE, ZERO)
}

pub fn sigma_plus() -> QubitOperator {
    sigma_minus().adjoint()
}

pub fn sigma_y() -> QubitOperator {
    QubitOperator::new(ZERO, -I, I, ZERO)
}

/// Kronecker product `a ⊗ b`, with `a` acting on qubit A.
pub fn tensor_product(a: &QubitOperator, b: &QubitOperator) -> Operator {
    Operator::from_fn(|r, c| a[(r / 2, c / 2)] * b[(r % 2, c % 2)])
}

/// `σ^A_−`
pub fn lower_a() -> Operator {
    tensor_product(&sigma_minus(), &identity2())
}

/// `σ^B_−`
pub fn lower_b() -> Operator {
    tensor_product(&identity2(), &sigma_minus())
}

/// `σ^A_z`
pub fn z_a() -> Operator {
    tensor_product(&sigma_z(), &identity2())
}

/// `σ^B_z`
pub fn z_b() -> Operator {
    tensor_product(&identity2(), &sigma_z())
}

/// `σ^A_y ⊗ σ^B_y`, the spin-flip operator used by both concurrence formulas.
pub fn spin_flip() -> Operator {
    tensor_product(&sigma_y(), &sigma_y())
}

/// `(ω_A/2)σ^A_z + (ω_B/2)σ^B_z`
pub fn system_hamiltonian(omega_a: f64, omega_b: f64) -> Operator {
    z_a() * C64::from(0.5 * omega_a) + z_b() * C64::from(0.5 * omega_b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BellState {
    /// `(|↑↑⟩ + |↓↓⟩)/√2`
    #[serde(rename = "psi+")]
    PsiPlus,
    /// `(|↑↑⟩ − |↓↓⟩)/√2`
    #[serde(rename = "psi-")]
    PsiMinus,
    /// `(|↑↓⟩ + |↓↑⟩)/√2`
    #[serde(rename = "phi+")]
    PhiPlus,
    /// `(|↑↓⟩ − |↓↑⟩)/√2`
    #[serde(rename = "phi-")]
    PhiMinus,
}

impl BellState {
    pub const ALL: [BellState; 4] = [
        BellState::PsiPlus,
        BellState::PsiMinus,
        BellState::PhiPlus,
        BellState::PhiMinus,
    ];

    pub fn label(self) -> &'static str {
        match self {
            BellState::PsiPlus => "psi+",
            BellState::PsiMinus => "psi-",
            BellState::PhiPlus => "phi+",
            BellState::PhiMinus => "phi-",
        }
    }
}

impl std::str::FromStr for BellState {
    type Err = QsdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "psi+" => Ok(BellState::PsiPlus),
            "psi-" => Ok(BellState::PsiMinus),
            "phi+" => Ok(BellState::PhiPlus),
            "phi-" => Ok(BellState::PhiMinus),
            other => Err(QsdError::InvalidConfig(format!(
                "unknown state `{other}` (expected psi+, psi-, phi+ or phi-)"
            ))),
        }
    }
}

/// A two-qubit pure state. Amplitudes are stored as given; use
/// [`PureState::normalized`] to project onto the unit sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PureState {
    amps: Vector4<C64>,
}

impl PureState {
    pub fn from_amplitudes(amps: [C64; 4]) -> Self {
        Self {
            amps: Vector4::from(amps),
        }
    }

    pub fn from_vector(amps: Vector4<C64>) -> Self {
        Self { amps }
    }

    /// Computational basis state by index (0 = `|↑↑⟩`, 3 = `|↓↓⟩`).
    pub fn basis(index: usize) -> Self {
        let mut amps = Vector4::zeros();
        amps[index] = ONE;
        Self { amps }
    }

    pub fn ground() -> Self {
        Self::basis(3)
    }

    pub fn amps(&self) -> &Vector4<C64> {
        &self.amps
    }

    pub fn amplitudes(&self) -> [C64; 4] {
        [self.amps[0], self.amps[1], self.amps[2], self.amps[3]]
    }

    pub fn norm(&self) -> f64 {
        self.amps.norm()
    }

    pub fn is_normalized(&self) -> bool {
        (self.norm() - 1.0).abs() <= NORM_TOLERANCE
    }

    pub fn check_normalized(&self) -> Result<()> {
        let norm = self.norm();
        if (norm - 1.0).abs() > NORM_TOLERANCE || !norm.is_finite() {
            return Err(QsdError::Unnormalized { norm });
        }
        Ok(())
    }

    pub fn normalized(&self) -> Result<Self> {
        let norm = self.norm();
        if !norm.is_finite() || norm <= 0.0 {
            return Err(QsdError::Unnormalized { norm });
        }
        Ok(Self {
            amps: self.amps.unscale(norm),
        })
    }

    /// Entrywise complex conjugate in the computational basis.
    pub fn conjugate(&self) -> Self {
        Self {
            amps: self.amps.map(|z| z.conj()),
        }
    }

    pub fn inner(&self, other: &PureState) -> C64 {
        self.amps.dotc(&other.amps)
    }

    pub fn apply(&self, op: &Operator) -> Self {
        Self {
            amps: op * self.amps,
        }
    }

    /// `|⟨self|other⟩|²`
    pub fn fidelity(&self, other: &PureState) -> f64 {
        self.inner(other).norm_sqr()
    }

    pub fn projector(&self) -> Operator {
        self.amps * self.amps.adjoint()
    }
}

pub fn bell_state(kind: BellState) -> PureState {
    let h = C64::from(std::f64::consts::FRAC_1_SQRT_2);
    let amps = match kind {
        BellState::PsiPlus => [h, ZERO, ZERO, h],
        BellState::PsiMinus => [h, ZERO, ZERO, -h],
        BellState::PhiPlus => [ZERO, h, h, ZERO],
        BellState::PhiMinus => [ZERO, h, -h, ZERO],
    };
    PureState::from_amplitudes(amps)
}

pub fn conjugate_state(state: &PureState) -> PureState {
    state.conjugate()
}

/// `⟨ψ|A|ψ⟩` for a normalized state.
pub fn expectation(state: &PureState, op: &Operator) -> Result<C64> {
    state.check_normalized()?;
    Ok(expectation_unchecked(state.amps(), op))
}

#[inline]
pub(crate) fn expectation_unchecked(psi: &Vector4<C64>, op: &Operator) -> C64 {
    psi.dotc(&(op * psi))
}

/// Square complex density matrix of arbitrary dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    entries: DMatrix<C64>,
}

impl DensityMatrix {
    pub const HERMITICITY_TOLERANCE: f64 = 1e-12;
    pub const TRACE_TOLERANCE: f64 = 1e-10;
    pub const POSITIVITY_TOLERANCE: f64 = 1e-8;

    /// Wraps a matrix without validation.
    pub fn from_matrix(entries: DMatrix<C64>) -> Self {
        assert!(entries.is_square(), "density matrix must be square");
        Self { entries }
    }

    pub fn from_operator(op: &Operator) -> Self {
        Self {
            entries: DMatrix::from_fn(4, 4, |r, c| op[(r, c)]),
        }
    }

    pub fn from_pure(state: &PureState) -> Self {
        Self::from_operator(&state.projector())
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self {
            entries: DMatrix::identity(dim, dim) / C64::from(dim as f64),
        }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.entries
    }

    pub fn trace(&self) -> C64 {
        self.entries.trace()
    }

    /// Largest entrywise deviation from Hermiticity.
    pub fn hermiticity_error(&self) -> f64 {
        let n = self.dim();
        let mut worst: f64 = 0.0;
        for r in 0..n {
            for c in r..n {
                worst = worst.max((self.entries[(r, c)] - self.entries[(c, r)].conj()).norm());
            }
        }
        worst
    }

    pub fn hermitian_part(&self) -> DMatrix<C64> {
        (&self.entries + self.entries.adjoint()) * C64::from(0.5)
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let eig = nalgebra::SymmetricEigen::new(self.hermitian_part());
        let mut values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        values.sort_by(|a, b| a.total_cmp(b));
        values
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().first().copied().unwrap_or(0.0)
    }

    /// Checks Hermiticity, unit trace and positivity.
    pub fn validate(&self) -> Result<()> {
        let herm = self.hermiticity_error();
        if herm > Self::HERMITICITY_TOLERANCE {
            return Err(QsdError::InvalidDensityMatrix(format!(
                "hermiticity error {herm:e}"
            )));
        }
        let tr = self.trace();
        if (tr - ONE).norm() > Self::TRACE_TOLERANCE {
            return Err(QsdError::InvalidDensityMatrix(format!("trace {tr}")));
        }
        let min = self.min_eigenvalue();
        if min < -Self::POSITIVITY_TOLERANCE {
            return Err(QsdError::InvalidDensityMatrix(format!(
                "minimum eigenvalue {min:e}"
            )));
        }
        Ok(())
    }

    /// `½‖ρ − σ‖₁`
    pub fn trace_distance(&self, other: &DensityMatrix) -> f64 {
        assert_eq!(self.dim(), other.dim(), "dimension mismatch");
        let diff = DensityMatrix::from_matrix(&self.entries - &other.entries);
        0.5 * diff.eigenvalues().iter().map(|v| v.abs()).sum::<f64>()
    }

    /// Reduced state of the leading `keep`-dimensional factor, tracing out the
    /// trailing factor of dimension `dim / keep`.
    pub fn partial_trace_trailing(&self, keep: usize) -> DensityMatrix {
        let n = self.dim();
        assert!(
            keep > 0 && n.is_multiple_of(keep),
            "incompatible factor dimension"
        );
        let traced = n / keep;
        let entries = DMatrix::from_fn(keep, keep, |r, c| {
            (0..traced)
                .map(|k| self.entries[(r * traced + k, c * traced + k)])
                .sum()
        });
        DensityMatrix { entries }
    }

    /// The 4×4 two-qubit block as a fixed-size operator.
    pub fn to_operator(&self) -> Option<Operator> {
        (self.dim() == 4).then(|| Operator::from_fn(|r, c| self.entries[(r, c)]))
    }

    /// Fidelity `⟨ψ|ρ|ψ⟩` with a two-qubit pure state.
    pub fn overlap(&self, state: &PureState) -> f64 {
        let op = self.to_operator().expect("two-qubit density matrix");
        expectation_unchecked(state.amps(), &op).re
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: C64, b: C64, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    fn random_operator(vals: &[f64]) -> Operator {
        Operator::from_fn(|r, c| {
            let k = 2 * (4 * r + c);
            C64::new(vals[k], vals[k + 1])
        })
    }

    fn random_qubit_op(vals: &[f64]) -> QubitOperator {
        QubitOperator::from_fn(|r, c| {
            let k = 2 * (2 * r + c);
            C64::new(vals[k], vals[k + 1])
        })
    }

    #[test]
    fn identity_tensor_identity() {
        assert_eq!(
            tensor_product(&identity2(), &identity2()),
            Operator::identity()
        );
    }

    #[test]
    fn sigma_z_on_first_qubit() {
        let down_up = PureState::basis(2);
        let out = down_up.apply(&z_a());
        assert_eq!(out.amps()[2], -ONE);
        assert_eq!(out.norm(), 1.0);
    }

    #[test]
    fn lowering_first_qubit() {
        let up_down = PureState::basis(1);
        let out = up_down.apply(&lower_a());
        assert_eq!(out, PureState::basis(3));
    }

    #[test]
    fn expectation_examples() {
        let up_up = PureState::basis(0);
        assert_eq!(expectation(&up_up, &z_a()).unwrap(), ONE);
        let psi = bell_state(BellState::PsiPlus);
        assert!(close(expectation(&psi, &z_a()).unwrap(), ZERO, 1e-15));
        let dephasing = z_a() + z_b();
        let phi = bell_state(BellState::PhiPlus);
        assert!(close(expectation(&phi, &dephasing).unwrap(), ZERO, 1e-15));
    }

    #[test]
    fn expectation_rejects_unnormalized() {
        let state = PureState::from_amplitudes([C64::from(2.0), ZERO, ZERO, ZERO]);
        assert!(matches!(
            expectation(&state, &z_a()),
            Err(QsdError::Unnormalized { .. })
        ));
    }

    #[test]
    fn bell_amplitudes() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let psi = bell_state(BellState::PsiPlus).amplitudes();
        assert_eq!(psi, [C64::from(h), ZERO, ZERO, C64::from(h)]);
        let phi = bell_state(BellState::PhiMinus).amplitudes();
        assert_eq!(phi, [ZERO, C64::from(h), C64::from(-h), ZERO]);
        for kind in BellState::ALL {
            assert!((bell_state(kind).norm() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn bell_states_orthogonal() {
        for (i, a) in BellState::ALL.iter().enumerate() {
            for b in &BellState::ALL[i + 1..] {
                assert!(bell_state(*a).inner(&bell_state(*b)).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn conjugation() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let state = PureState::from_amplitudes([C64::from(h), ZERO, ZERO, C64::new(0.0, h)]);
        let conj = conjugate_state(&state);
        assert_eq!(conj.amps()[3], C64::new(0.0, -h));
        let real = bell_state(BellState::PhiMinus);
        assert_eq!(conjugate_state(&real), real);
        assert_eq!(conjugate_state(&conjugate_state(&state)), state);
    }

    #[test]
    fn partial_trace_of_product() {
        // |↑↓⟩ ⊗ |0⟩ with a 3-level trailing factor.
        let mut m = DMatrix::zeros(12, 12);
        m[(3, 3)] = ONE;
        let reduced = DensityMatrix::from_matrix(m).partial_trace_trailing(4);
        assert_eq!(reduced, DensityMatrix::from_pure(&PureState::basis(1)));
    }

    #[test]
    fn trace_distance_orthogonal_states() {
        let a = DensityMatrix::from_pure(&PureState::basis(0));
        let b = DensityMatrix::from_pure(&PureState::basis(3));
        assert!((a.trace_distance(&b) - 1.0).abs() < 1e-14);
        assert!(a.trace_distance(&a) < 1e-15);
    }

    #[test]
    fn validate_rejects_bad_trace() {
        let rho = DensityMatrix::from_matrix(DMatrix::identity(4, 4) * C64::from(0.3));
        assert!(rho.validate().is_err());
        assert!(DensityMatrix::maximally_mixed(4).validate().is_ok());
    }

    proptest! {
        #[test]
        fn dagger_is_involution(vals in prop::collection::vec(-1.0f64..1.0, 32)) {
            let m = random_operator(&vals);
            let back = m.adjoint().adjoint();
            prop_assert!((back - m).iter().all(|z| z.norm() <= 1e-14));
        }

        #[test]
        fn composition_is_associative(vals in prop::collection::vec(-1.0f64..1.0, 96)) {
            let a = random_operator(&vals[..32]);
            let b = random_operator(&vals[32..64]);
            let c = random_operator(&vals[64..]);
            let diff = (a * b) * c - a * (b * c);
            prop_assert!(diff.iter().all(|z| z.norm() <= 1e-14));
        }

        #[test]
        fn tensor_is_bilinear(vals in prop::collection::vec(-1.0f64..1.0, 24)) {
            let a = random_qubit_op(&vals[..8]);
            let a2 = random_qubit_op(&vals[8..16]);
            let b = random_qubit_op(&vals[16..]);
            let diff = tensor_product(&(a + a2), &b) - tensor_product(&a, &b) - tensor_product(&a2, &b);
            prop_assert!(diff.iter().all(|z| z.norm() <= 1e-14));
        }

        #[test]
        fn hermitian_expectation_is_real(
            vals in prop::collection::vec(-1.0f64..1.0, 32),
            amps in prop::collection::vec(-1.0f64..1.0, 8),
        ) {
            let m = random_operator(&vals);
            let h = m + m.adjoint();
            let state = PureState::from_amplitudes([
                C64::new(amps[0], amps[1]),
                C64::new(amps[2], amps[3]),
                C64::new(amps[4], amps[5]),
                C64::new(amps[6], amps[7]),
            ]);
            prop_assume!(state.norm() > 1e-3);
            let state = state.normalized().unwrap();
            prop_assert!(expectation(&state, &h).unwrap().im.abs() <= 1e-12);
        }
    }
}

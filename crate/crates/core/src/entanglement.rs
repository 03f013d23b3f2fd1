//! Pure- and mixed-state concurrence and ensemble estimators.

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use crate::algebra::{spin_flip, DensityMatrix, Operator, PureState, C64};
use crate::error::{QsdError, Result};

/// Negative eigenvalues of `ρ` down to this are treated as round-off and clamped to zero.
pub const EIGEN_REJECT: f64 = 1e-7;

/// `|⟨ψ|σ^A_y⊗σ^B_y|ψ*⟩|` for a normalized state.
pub fn concurrence_pure(psi: &PureState) -> Result<f64> {
    psi.check_normalized()?;
    Ok(concurrence_pure_unchecked(psi))
}

pub(crate) fn concurrence_pure_unchecked(psi: &PureState) -> f64 {
    let flipped = spin_flip() * psi.conjugate().amps();
    // Rounding can push a maximally entangled state just above one.
    psi.amps().dotc(&flipped).norm().min(1.0)
}

/// Wootters concurrence `max{0, √λ₁ − √λ₂ − √λ₃ − √λ₄}`.
///
/// The `√λ` (eigenvalues of `ρ(σ_y⊗σ_y)ρ*(σ_y⊗σ_y)`) are obtained as the
/// singular values of `τ = Wᵀ(σ_y⊗σ_y)W` with `ρ = WW†`, which avoids taking
/// square roots of round-off-sized eigenvalues.
pub fn concurrence_mixed(rho: &DensityMatrix) -> Result<f64> {
    let r = rho.to_operator().ok_or_else(|| {
        QsdError::InvalidDensityMatrix(format!("expected 4×4, got {0}×{0}", rho.dim()))
    })?;
    if rho.hermiticity_error() > 1e-8 || (rho.trace() - C64::from(1.0)).norm() > 1e-8 {
        return Err(QsdError::InvalidDensityMatrix(
            "input is not Hermitian with unit trace".into(),
        ));
    }
    concurrence_of_operator(&r)
}

pub(crate) fn concurrence_of_operator(r: &Operator) -> Result<f64> {
    let hermitian = (r + r.adjoint()) * C64::from(0.5);
    let eig = SymmetricEigen::new(hermitian);
    let mut w = eig.eigenvectors;
    for (k, &p) in eig.eigenvalues.iter().enumerate() {
        if p < -EIGEN_REJECT || !p.is_finite() {
            return Err(QsdError::InvalidDensityMatrix(format!(
                "eigenvalue {p:e} of the density matrix"
            )));
        }
        let scale = C64::from(p.max(0.0).sqrt());
        w.column_mut(k).iter_mut().for_each(|z| *z *= scale);
    }
    let tau = w.transpose() * spin_flip() * w;
    let mut s: Vec<f64> = tau.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    Ok((s[0] - s[1] - s[2] - s[3]).clamp(0.0, 1.0))
}

/// Average of projectors `M[|ψ⟩⟨ψ|]`.
pub fn rho_from_ensemble(states: &[PureState]) -> Result<DensityMatrix> {
    if states.is_empty() {
        return Err(QsdError::TooFewSamples { needed: 1, got: 0 });
    }
    let mut sum = Operator::zeros();
    for s in states {
        s.check_normalized()?;
        sum += s.projector();
    }
    Ok(DensityMatrix::from_operator(
        &(sum / C64::from(states.len() as f64)),
    ))
}

/// Mean trajectory concurrence with its standard error, optionally paired
/// with an oracle `C(ρ_t)` curve on the same grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcurrenceSeries {
    pub times: Vec<f64>,
    pub mean_c: Vec<f64>,
    pub stderr_c: Vec<f64>,
    pub oracle_c: Option<Vec<f64>>,
}

impl ConcurrenceSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Pointwise Welford accumulator. Updates are applied in call order, so a
/// fixed insertion order gives bit-reproducible results.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesAccumulator {
    count: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl SeriesAccumulator {
    pub fn new(len: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; len],
            m2: vec![0.0; len],
        }
    }

    pub fn push(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.mean.len() {
            return Err(QsdError::GridMismatch);
        }
        self.count += 1;
        let n = self.count as f64;
        for ((m, m2), &x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(values) {
            let delta = x - *m;
            *m += delta / n;
            *m2 += delta * (x - *m);
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Standard error of the mean, `√(s²/N)`.
    pub fn stderr(&self) -> Vec<f64> {
        if self.count < 2 {
            return vec![0.0; self.mean.len()];
        }
        let n = self.count as f64;
        self.m2
            .iter()
            .map(|m2| (m2.max(0.0) / (n - 1.0) / n).sqrt())
            .collect()
    }

    pub fn into_series(self, times: Vec<f64>) -> ConcurrenceSeries {
        let stderr_c = self.stderr();
        ConcurrenceSeries {
            times,
            mean_c: self.mean,
            stderr_c,
            oracle_c: None,
        }
    }
}

/// Pointwise mean and standard error of per-trajectory concurrence curves.
pub fn mean_concurrence(
    trajectories: &[crate::integrator::TrajectoryOutput],
) -> Result<ConcurrenceSeries> {
    if trajectories.len() < 2 {
        return Err(QsdError::TooFewSamples {
            needed: 2,
            got: trajectories.len(),
        });
    }
    let times = trajectories[0].times.clone();
    let mut acc = SeriesAccumulator::new(times.len());
    for tr in trajectories {
        if tr.times != times {
            return Err(QsdError::GridMismatch);
        }
        acc.push(&tr.concurrence)?;
    }
    Ok(acc.into_series(times))
}

/// Concurrence of the reconstructed `ρ` with a delete-one-block jackknife
/// standard error. `block_sums[b]` is the sum of projectors over the
/// trajectories in block `b` and `block_counts[b]` their number.
pub fn jackknife_concurrence(
    block_sums: &[Operator],
    block_counts: &[usize],
) -> Result<(f64, f64)> {
    let blocks = block_sums.len();
    let total_count: usize = block_counts.iter().sum();
    if blocks < 2 || total_count == 0 {
        return Err(QsdError::TooFewSamples {
            needed: 2,
            got: blocks,
        });
    }
    let total: Operator = block_sums.iter().sum();
    let full = concurrence_of_operator(&(total / C64::from(total_count as f64)))?;
    let mut leave_out = Vec::with_capacity(blocks);
    for (sum, &count) in block_sums.iter().zip(block_counts) {
        let rest = total_count - count;
        if rest == 0 {
            continue;
        }
        leave_out.push(concurrence_of_operator(
            &((total - sum) / C64::from(rest as f64)),
        )?);
    }
    let g = leave_out.len() as f64;
    let mean = leave_out.iter().sum::<f64>() / g;
    let var = (g - 1.0) / g * leave_out.iter().map(|c| (c - mean).powi(2)).sum::<f64>();
    Ok((full, var.sqrt()))
}

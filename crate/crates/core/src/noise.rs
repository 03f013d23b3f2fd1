//! Complex Ornstein-Uhlenbeck noise with kernel `α(t,s) = (γ/2)e^{−γ|t−s|}`.
//!
//! Paths are produced by the exact one-step recursion
//! `x_{n+1} = e^{−γ·dt} x_n + ξ_n`, so grid-point covariances carry no
//! discretization bias. Samples are circular: `M[x_t x_s] = 0`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::algebra::C64;
use crate::error::{QsdError, Result};

/// Resolution required of the memory kernel: `dt·γ ≤ MAX_GAMMA_DT`.
pub const MAX_GAMMA_DT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationKernel {
    pub gamma: f64,
}

impl CorrelationKernel {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(QsdError::InvalidConfig(format!(
                "gamma must be positive and finite, got {gamma}"
            )));
        }
        Ok(Self { gamma })
    }

    pub fn eval(&self, t: f64, s: f64) -> f64 {
        kernel_eval(self, t, s)
    }

    /// `α(t,t)`
    pub fn variance(&self) -> f64 {
        0.5 * self.gamma
    }
}

pub fn kernel_eval(k: &CorrelationKernel, t: f64, s: f64) -> f64 {
    0.5 * k.gamma * (-k.gamma * (t - s).abs()).exp()
}

/// Uniform grid `t_n = t0 + n·dt`, `n = 0..=n_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub dt: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(dt: f64, n_steps: usize) -> Result<Self> {
        let grid = Self {
            t0: 0.0,
            dt,
            n_steps,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Grid on `[0, t_max]` with the step rounded so that `t_max` is a grid point.
    pub fn spanning(t_max: f64, dt_max: f64) -> Result<Self> {
        if !(t_max > 0.0 && t_max.is_finite() && dt_max > 0.0) {
            return Err(QsdError::InvalidGrid(format!(
                "need t_max > 0 and dt > 0, got t_max = {t_max}, dt = {dt_max}"
            )));
        }
        let n_steps = (t_max / dt_max - 1e-9).ceil().max(1.0) as usize;
        Self::new(t_max / n_steps as f64, n_steps)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(QsdError::InvalidGrid(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if self.n_steps == 0 {
            return Err(QsdError::InvalidGrid("n_steps must be positive".into()));
        }
        if !self.t0.is_finite() {
            return Err(QsdError::InvalidGrid("t0 must be finite".into()));
        }
        Ok(())
    }

    pub fn check_kernel_resolution(&self, gamma: f64) -> Result<()> {
        if self.dt * gamma > MAX_GAMMA_DT * (1.0 + 1e-12) {
            return Err(QsdError::StepSize {
                dt: self.dt,
                constraint: "dt·γ ≤ 0.1",
            });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn time(&self, n: usize) -> f64 {
        self.t0 + n as f64 * self.dt
    }

    pub fn t_max(&self) -> f64 {
        self.time(self.n_steps)
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|n| self.time(n)).collect()
    }

    /// Same span with `factor` times fewer steps.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.n_steps.is_multiple_of(factor) {
            return Err(QsdError::InvalidGrid(format!(
                "cannot coarsen {} steps by {factor}",
                self.n_steps
            )));
        }
        Ok(Self {
            t0: self.t0,
            dt: self.dt * factor as f64,
            n_steps: self.n_steps / factor,
        })
    }

    /// Same span with `factor` times more steps.
    pub fn refine(&self, factor: usize) -> Self {
        Self {
            t0: self.t0,
            dt: self.dt / factor as f64,
            n_steps: self.n_steps * factor,
        }
    }

    fn same_as(&self, other: &TimeGrid) -> bool {
        self.n_steps == other.n_steps
            && (self.dt - other.dt).abs() <= 1e-15 * self.dt
            && self.t0 == other.t0
    }
}

/// Identifies one reproducible random substream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedSpec {
    pub master_seed: u64,
    pub stream_index: u64,
}

impl SeedSpec {
    pub fn new(master_seed: u64, stream_index: u64) -> Self {
        Self {
            master_seed,
            stream_index,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_index);
        rng
    }
}

/// Draws a circular complex Gaussian with `M[|z|²] = variance`.
pub fn circular_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> C64 {
    let s = (0.5 * variance).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(s * re, s * im)
}

/// Streaming generator for one O-U path on a uniform grid.
#[derive(Debug, Clone)]
pub struct OuNoise {
    decay: f64,
    innovation_variance: f64,
    current: C64,
    rng: ChaCha8Rng,
}

impl OuNoise {
    pub fn new(kernel: &CorrelationKernel, dt: f64, seed: SeedSpec) -> Self {
        let mut rng = seed.rng();
        let decay = (-kernel.gamma * dt).exp();
        let innovation_variance = kernel.variance() * (1.0 - decay * decay);
        let current = circular_gaussian(&mut rng, kernel.variance());
        Self {
            decay,
            innovation_variance,
            current,
            rng,
        }
    }

    /// Sample at the current grid point.
    pub fn current(&self) -> C64 {
        self.current
    }

    /// Advances one grid step and returns the new sample.
    pub fn advance(&mut self) -> C64 {
        let xi = circular_gaussian(&mut self.rng, self.innovation_variance);
        self.current = self.current * self.decay + xi;
        self.current
    }
}

/// A sampled realization of `x*_t` on a [`TimeGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePath {
    pub grid: TimeGrid,
    pub samples: Vec<C64>,
}

impl NoisePath {
    pub fn zeros(grid: TimeGrid) -> Self {
        Self {
            grid,
            samples: vec![C64::new(0.0, 0.0); grid.len()],
        }
    }

    pub fn times(&self) -> Vec<f64> {
        self.grid.times()
    }

    /// Keeps every `factor`-th sample. For an O-U path this is again an exact
    /// O-U path on the coarser grid.
    pub fn coarsen(&self, factor: usize) -> Result<NoisePath> {
        let grid = self.grid.coarsen(factor)?;
        let samples = self.samples.iter().step_by(factor).copied().collect();
        Ok(NoisePath { grid, samples })
    }
}

pub fn sample_path(k: &CorrelationKernel, grid: &TimeGrid, seed: SeedSpec) -> Result<NoisePath> {
    grid.validate()?;
    let mut gen = OuNoise::new(k, grid.dt, seed);
    let mut samples = Vec::with_capacity(grid.len());
    samples.push(gen.current());
    for _ in 0..grid.n_steps {
        samples.push(gen.advance());
    }
    Ok(NoisePath {
        grid: *grid,
        samples,
    })
}

/// Streaming estimator of `M[x_{n+lag} x*_n]` and `M[x_{n+lag} x_n]`,
/// averaged over paths and over `n`.
#[derive(Debug, Clone)]
pub struct CovarianceAccumulator {
    lags: Vec<usize>,
    cov: Vec<C64>,
    pseudo: Vec<C64>,
    counts: Vec<u64>,
    paths: usize,
    grid: Option<TimeGrid>,
}

impl CovarianceAccumulator {
    pub fn new(lags: &[usize]) -> Self {
        Self {
            lags: lags.to_vec(),
            cov: vec![C64::new(0.0, 0.0); lags.len()],
            pseudo: vec![C64::new(0.0, 0.0); lags.len()],
            counts: vec![0; lags.len()],
            paths: 0,
            grid: None,
        }
    }

    pub fn add_path(&mut self, path: &NoisePath) -> Result<()> {
        match &self.grid {
            Some(g) if !g.same_as(&path.grid) => return Err(QsdError::GridMismatch),
            Some(_) => {}
            None => self.grid = Some(path.grid),
        }
        self.add_samples(&path.samples);
        Ok(())
    }

    pub fn add_samples(&mut self, x: &[C64]) {
        for (k, &lag) in self.lags.iter().enumerate() {
            if lag >= x.len() {
                continue;
            }
            let mut cov = C64::new(0.0, 0.0);
            let mut pseudo = C64::new(0.0, 0.0);
            for (later, earlier) in x[lag..].iter().zip(x) {
                cov += later * earlier.conj();
                pseudo += later * earlier;
            }
            self.cov[k] += cov;
            self.pseudo[k] += pseudo;
            self.counts[k] += (x.len() - lag) as u64;
        }
        self.paths += 1;
    }

    pub fn merge(&mut self, other: &CovarianceAccumulator) {
        assert_eq!(self.lags, other.lags, "lag sets differ");
        for k in 0..self.lags.len() {
            self.cov[k] += other.cov[k];
            self.pseudo[k] += other.pseudo[k];
            self.counts[k] += other.counts[k];
        }
        self.paths += other.paths;
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn covariance(&self, lag_index: usize) -> C64 {
        self.cov[lag_index] / self.counts[lag_index].max(1) as f64
    }

    pub fn pseudo_covariance(&self, lag_index: usize) -> C64 {
        self.pseudo[lag_index] / self.counts[lag_index].max(1) as f64
    }
}

pub fn empirical_covariance(paths: &[NoisePath], lag: usize) -> Result<C64> {
    Ok(accumulate(paths, lag)?.covariance(0))
}

/// Same average as [`empirical_covariance`] without the conjugate; zero in
/// expectation for circular noise.
pub fn empirical_pseudo_covariance(paths: &[NoisePath], lag: usize) -> Result<C64> {
    Ok(accumulate(paths, lag)?.pseudo_covariance(0))
}

fn accumulate(paths: &[NoisePath], lag: usize) -> Result<CovarianceAccumulator> {
    if paths.len() < 2 {
        return Err(QsdError::TooFewSamples {
            needed: 2,
            got: paths.len(),
        });
    }
    let mut acc = CovarianceAccumulator::new(&[lag]);
    for p in paths {
        acc.add_path(p)?;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_values() {
        let k = CorrelationKernel::new(0.3).unwrap();
        assert!((kernel_eval(&k, 2.0, 2.0) - 0.15).abs() < 1e-15);
        assert!((kernel_eval(&k, 1.0, 0.0) - 0.15 * (-0.3f64).exp()).abs() < 1e-15);
        assert!((kernel_eval(&k, 1.0, 0.0) - 0.1111227).abs() < 1e-7);
        for (t, s) in [(0.3, 4.1), (2.5, 0.0), (7.0, 6.9)] {
            assert_eq!(kernel_eval(&k, t, s), kernel_eval(&k, s, t));
        }
        assert!(CorrelationKernel::new(0.0).is_err());
        assert!(CorrelationKernel::new(-1.0).is_err());
    }

    #[test]
    fn grid_validation() {
        assert!(TimeGrid::new(0.0, 10).is_err());
        assert!(TimeGrid::new(0.1, 0).is_err());
        let g = TimeGrid::new(0.01, 100).unwrap();
        assert!(g.check_kernel_resolution(10.0).is_ok());
        assert!(g.check_kernel_resolution(11.0).is_err());
        let s = TimeGrid::spanning(15.0, 0.025).unwrap();
        assert_eq!(s.n_steps, 600);
        assert!((s.t_max() - 15.0).abs() < 1e-12);
    }

    #[test]
    fn identical_seed_bit_identical() {
        let k = CorrelationKernel::new(0.3).unwrap();
        let g = TimeGrid::new(0.01, 500).unwrap();
        let a = sample_path(&k, &g, SeedSpec::new(42, 7)).unwrap();
        let b = sample_path(&k, &g, SeedSpec::new(42, 7)).unwrap();
        assert_eq!(a, b);
        let c = sample_path(&k, &g, SeedSpec::new(42, 8)).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    fn ensemble(
        gamma: f64,
        dt: f64,
        n_steps: usize,
        n_paths: u64,
        lags: &[usize],
    ) -> CovarianceAccumulator {
        let k = CorrelationKernel::new(gamma).unwrap();
        let mut acc = CovarianceAccumulator::new(lags);
        let mut x = Vec::with_capacity(n_steps + 1);
        for i in 0..n_paths {
            let mut gen = OuNoise::new(&k, dt, SeedSpec::new(2024, i));
            x.clear();
            x.push(gen.current());
            for _ in 0..n_steps {
                x.push(gen.advance());
            }
            acc.add_samples(&x);
        }
        acc
    }

    #[test]
    fn pointwise_mean_and_variance() {
        // Statistics at a single fixed time over 1e5 independent paths.
        let gamma = 0.5;
        let k = CorrelationKernel::new(gamma).unwrap();
        let n_paths = 100_000u64;
        let steps = 40;
        let (mut mean, mut var) = (C64::new(0.0, 0.0), 0.0);
        for i in 0..n_paths {
            let mut gen = OuNoise::new(&k, 0.05, SeedSpec::new(99, i));
            for _ in 0..steps {
                gen.advance();
            }
            mean += gen.current();
            var += gen.current().norm_sqr();
        }
        mean /= n_paths as f64;
        var /= n_paths as f64;
        let bound = 4.0 * (gamma / 2.0).sqrt() / (n_paths as f64).sqrt();
        assert!(mean.norm() <= bound, "mean {mean} bound {bound}");
        assert!((var - 0.25).abs() <= 0.03 * 0.25, "variance {var}");
    }

    #[test]
    fn covariance_at_lag_zero_and_memory_time() {
        let (gamma, dt): (f64, f64) = (0.3, 0.01);
        let memory_lag = (1.0f64 / (gamma * dt)).ceil() as usize;
        let acc = ensemble(gamma, dt, 2000, 100_000, &[0, memory_lag]);
        let k = CorrelationKernel::new(gamma).unwrap();
        let c0 = acc.covariance(0);
        assert!((c0.re - 0.15).abs() <= 0.03 * 0.15, "lag 0: {c0}");
        let expected = kernel_eval(&k, memory_lag as f64 * dt, 0.0);
        let c1 = acc.covariance(1);
        assert!(
            (c1 - expected).norm() <= 0.05 * expected,
            "lag {memory_lag}: {c1} vs {expected}"
        );
        let pseudo = acc.pseudo_covariance(0);
        assert!(
            pseudo.norm() <= 4.0 * 0.15 / (1e5f64).sqrt(),
            "pseudo {pseudo}"
        );
    }

    #[test]
    fn exact_discretization_across_lags() {
        // Coarse step (γ·dt = 0.1): an Euler discretization would bias these by ~5%.
        let (gamma, dt) = (1.0, 0.1);
        let lags = [0usize, 1, 5, 10, 20];
        let acc = ensemble(gamma, dt, 400, 20_000, &lags);
        let k = CorrelationKernel::new(gamma).unwrap();
        for (i, &lag) in lags.iter().enumerate() {
            let expected = kernel_eval(&k, lag as f64 * dt, 0.0);
            let got = acc.covariance(i);
            // Monte Carlo standard error of the time-averaged estimator.
            let se = 0.5 * gamma / (gamma * 40.0 * 20_000.0f64).sqrt();
            assert!(
                (got - expected).norm() <= 5.0 * se,
                "lag {lag}: {got} vs {expected}"
            );
        }
    }

    #[test]
    fn stationary_variance() {
        let k = CorrelationKernel::new(2.0).unwrap();
        let grid = TimeGrid::new(0.05, 200).unwrap();
        let n_paths = 20_000u64;
        let mut early = 0.0;
        let mut late = 0.0;
        for i in 0..n_paths {
            let p = sample_path(&k, &grid, SeedSpec::new(5, i)).unwrap();
            early += p.samples[0].norm_sqr();
            late += p.samples[200].norm_sqr();
        }
        early /= n_paths as f64;
        late /= n_paths as f64;
        // |x|² is exponential with mean 1, so its sample mean has relative sd 1/√N.
        let tol = 4.0 / (n_paths as f64).sqrt();
        assert!(
            (early - 1.0).abs() < tol && (late - 1.0).abs() < tol,
            "{early} {late}"
        );
    }

    #[test]
    fn streams_are_uncorrelated() {
        let k = CorrelationKernel::new(1.0).unwrap();
        let grid = TimeGrid::new(0.05, 100).unwrap();
        let n_pairs = 20_000u64;
        let mut cross = C64::new(0.0, 0.0);
        for i in 0..n_pairs {
            let a = sample_path(&k, &grid, SeedSpec::new(11, 2 * i)).unwrap();
            let b = sample_path(&k, &grid, SeedSpec::new(11, 2 * i + 1)).unwrap();
            cross += a.samples[50] * b.samples[50].conj();
        }
        cross /= n_pairs as f64;
        assert!(
            cross.norm() <= 4.0 * 0.5 / (n_pairs as f64).sqrt(),
            "{cross}"
        );
    }

    #[test]
    fn empirical_covariance_requires_matching_grids() {
        let k = CorrelationKernel::new(1.0).unwrap();
        let a = sample_path(&k, &TimeGrid::new(0.05, 10).unwrap(), SeedSpec::new(1, 0)).unwrap();
        let b = sample_path(&k, &TimeGrid::new(0.05, 12).unwrap(), SeedSpec::new(1, 1)).unwrap();
        assert_eq!(
            empirical_covariance(&[a.clone(), b], 0),
            Err(QsdError::GridMismatch)
        );
        assert!(matches!(
            empirical_covariance(std::slice::from_ref(&a), 0),
            Err(QsdError::TooFewSamples { .. })
        ));
        let c = sample_path(&k, &a.grid, SeedSpec::new(1, 2)).unwrap();
        assert!(empirical_covariance(&[a.clone(), c.clone()], 2).is_ok());
        assert!(empirical_pseudo_covariance(&[a, c], 0).is_ok());
    }

    #[test]
    fn coarsened_path_keeps_every_other_sample() {
        let k = CorrelationKernel::new(1.0).unwrap();
        let fine = sample_path(&k, &TimeGrid::new(0.01, 20).unwrap(), SeedSpec::new(3, 0)).unwrap();
        let coarse = fine.coarsen(2).unwrap();
        assert_eq!(coarse.grid.n_steps, 10);
        assert_eq!(coarse.samples[3], fine.samples[6]);
        assert!(fine.coarsen(3).is_err());
    }
}

use nmqsd::algebra::{BellState, DensityMatrix, Operator, C64};
use nmqsd::ensemble::{run_ensemble_with, EnsembleConfig};
use nmqsd::integrator::{
    integrate_linear, seeded_noise, OperatorMode, QsdSystem, Scheme, SimulationConfig,
};
use nmqsd::noise::SeedSpec;
use nmqsd::ooperator::{Model, ModelParams};
use nmqsd::oracles::{f0_integral, OracleKind};

struct LinearEnsemble {
    rho: Vec<Operator>,
    /// Standard error of the trace estimate.
    trace_stderr: Vec<f64>,
}

/// The raw linear ensemble `M[|ψ_t⟩⟨ψ_t|]` on every `stride`-th grid point.
fn linear_ensemble(system: &QsdSystem, n: usize, seed: u64, stride: usize) -> LinearEnsemble {
    let len = (system.grid().len() - 1) / stride + 1;
    let mut sums = vec![Operator::zeros(); len];
    let mut norm4 = vec![0.0; len];
    for stream in 0..n as u64 {
        let noise = seeded_noise(system, SeedSpec::new(seed, stream)).unwrap();
        integrate_linear(system, noise, |k, psi| {
            if k % stride == 0 {
                sums[k / stride] += psi.projector();
                norm4[k / stride] += psi.norm().powi(4);
            }
        })
        .unwrap();
    }
    let nf = n as f64;
    let rho: Vec<Operator> = sums.into_iter().map(|s| s / C64::from(nf)).collect();
    let trace_stderr = rho
        .iter()
        .zip(&norm4)
        .map(|(r, m4)| ((m4 / nf - r.trace().re.powi(2)).max(0.0) / (nf - 1.0)).sqrt())
        .collect();
    LinearEnsemble { rho, trace_stderr }
}

/// Latest time at which the log-normal weight of the `l_max` component has
/// relative variance `exp(4l²∫f₀) − 1 ≤ 1`.
fn variance_horizon(gamma: f64, l_max: f64) -> f64 {
    let target = 2f64.ln() / (4.0 * l_max * l_max);
    let (mut lo, mut hi) = (0.0, 100.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if f0_integral(gamma, mid) <= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

#[test]
fn linear_and_nonlinear_ensembles_agree() {
    let (kappa, gamma) = (0.5, 1.0);
    let t_max = variance_horizon(gamma, 1.0 + kappa);
    let params = ModelParams::new(kappa, gamma, 1.0).unwrap();
    let sim = SimulationConfig::new(
        Model::Dephasing,
        OperatorMode::Exact,
        params,
        BellState::PsiPlus,
        t_max,
    )
    .unwrap()
    .with_scheme(Scheme::Heun);
    let system = QsdSystem::new(&sim).unwrap();
    let cfg = EnsembleConfig::new(sim)
        .with_trajectories(5000)
        .with_oracle(OracleKind::DephasingExact)
        .with_seed(1);
    let nonlinear = run_ensemble_with(&cfg, 1).unwrap();
    let snaps = nonlinear.rho_snapshots.unwrap();
    let linear = linear_ensemble(&system, 5000, 11, cfg.snapshot_stride);
    assert_eq!(linear.rho.len(), snaps.rho.len());
    let mut worst: f64 = 0.0;
    let mut worst_oracle: f64 = 0.0;
    for ((lin, nl), oracle) in linear
        .rho
        .iter()
        .zip(&snaps.rho)
        .zip(snaps.oracle_rho.as_ref().unwrap())
    {
        let lin = DensityMatrix::from_operator(lin);
        worst = worst.max(lin.trace_distance(nl));
        worst_oracle = worst_oracle.max(lin.trace_distance(oracle));
    }
    assert!(t_max > 0.5, "{t_max}");
    assert!(worst <= 0.03, "linear vs nonlinear {worst} on [0, {t_max}]");
    assert!(worst_oracle <= 0.03, "linear vs oracle {worst_oracle}");
}

#[test]
fn linear_ensemble_trace_is_one_on_average() {
    let params = ModelParams::new(1.0, 0.3, 1.0).unwrap();
    let sim = SimulationConfig::new(
        Model::Dissipative,
        OperatorMode::Exact,
        params,
        BellState::PsiPlus,
        3.0,
    )
    .unwrap()
    .with_scheme(Scheme::Heun);
    let system = QsdSystem::new(&sim).unwrap();
    let ens = linear_ensemble(&system, 2000, 5, 20);
    for (r, se) in ens.rho.iter().zip(&ens.trace_stderr) {
        assert!(
            (r.trace().re - 1.0).abs() <= 4.0 * se + 1e-12,
            "trace {} ± {se}",
            r.trace()
        );
        assert!(*se < 0.05, "{se}");
    }
}

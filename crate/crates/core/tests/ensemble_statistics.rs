use nmqsd::algebra::BellState;
use nmqsd::ensemble::{
    compare_modes_with, half_life_key, run_ensemble_with, sweep_with, time_to_half, EnsembleConfig,
    SweepParameter,
};
use nmqsd::entanglement::SeriesAccumulator;
use nmqsd::integrator::{
    default_dt, run_trajectory_on_path, OperatorMode, QsdSystem, Scheme, SimulationConfig,
};
use nmqsd::noise::{sample_path, CorrelationKernel, SeedSpec, TimeGrid};
use nmqsd::ooperator::{Model, ModelParams};
use nmqsd::oracles::{f0_integral, OracleKind};
use nmqsd::presets::{preset, PresetName};

/// Mean concurrence at `dt` and `dt/2` on the same refined noise paths.
fn refinement_gap(model: Model, params: ModelParams, state: BellState, t_max: f64, n: u64) -> f64 {
    let dt = default_dt(&params);
    let fine_grid = TimeGrid::spanning(t_max, dt / 2.0).unwrap();
    let coarse_grid = fine_grid.coarsen(2).unwrap();
    let sim = SimulationConfig::new(model, OperatorMode::Exact, params, state, t_max).unwrap();
    let coarse = QsdSystem::new(&sim.with_grid(coarse_grid).unwrap()).unwrap();
    let fine = QsdSystem::new(&sim.with_grid(fine_grid).unwrap()).unwrap();
    let kernel = CorrelationKernel::new(params.gamma).unwrap();
    let mut acc_coarse = SeriesAccumulator::new(coarse_grid.len());
    let mut acc_fine = SeriesAccumulator::new(coarse_grid.len());
    for stream in 0..n {
        let path = sample_path(&kernel, &fine_grid, SeedSpec::new(17, stream)).unwrap();
        let c = run_trajectory_on_path(&coarse, &path.coarsen(2).unwrap(), false).unwrap();
        let f = run_trajectory_on_path(&fine, &path, false).unwrap();
        acc_coarse.push(&c.concurrence).unwrap();
        let decimated: Vec<f64> = f.concurrence.iter().step_by(2).copied().collect();
        acc_fine.push(&decimated).unwrap();
    }
    acc_coarse
        .mean()
        .iter()
        .zip(acc_fine.mean())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

#[test]
fn halving_the_step_moves_the_mean_little() {
    let dephasing = ModelParams::new(0.5, 1.0, 1.0).unwrap();
    let gap = refinement_gap(Model::Dephasing, dephasing, BellState::PsiPlus, 5.0, 300);
    assert!(gap <= 0.02, "dephasing {gap}");
    let dissipative = ModelParams::new(1.0, 0.3, 1.0).unwrap();
    let gap = refinement_gap(
        Model::Dissipative,
        dissipative,
        BellState::PsiPlus,
        10.0,
        300,
    );
    assert!(gap <= 0.02, "dissipative {gap}");
}

#[test]
fn dissipative_mean_upper_bounds_the_oracle() {
    let params = ModelParams::new(1.0, 0.3, 1.0).unwrap();
    let sim = SimulationConfig::new(
        Model::Dissipative,
        OperatorMode::Exact,
        params,
        BellState::PsiPlus,
        10.0,
    )
    .unwrap()
    .with_scheme(Scheme::Heun);
    let cfg = EnsembleConfig::new(sim).with_oracle(OracleKind::Pseudomode);
    let r = run_ensemble_with(&cfg, 1).unwrap();
    let s = &r.series;
    for ((m, se), o) in s
        .mean_c
        .iter()
        .zip(&s.stderr_c)
        .zip(s.oracle_c.as_ref().unwrap())
    {
        assert!(*m >= o - 3.0 * se - 1e-12, "{m} vs {o} ± {se}");
    }
}

#[test]
fn every_dissipative_preset_tracks_its_oracle() {
    let n = 400usize;
    let bound = 0.03f64.max(5.0 / (n as f64).sqrt());
    for name in [PresetName::Fig1b, PresetName::Fig3b] {
        let p = preset(name).unwrap();
        let mut cfg = p.base.with_trajectories(n);
        cfg.sim = cfg
            .sim
            .with_grid(TimeGrid::spanning(8.0, cfg.sim.grid.dt).unwrap())
            .unwrap();
        let r = run_ensemble_with(&cfg, 1).unwrap();
        let d = r.rho_snapshots.unwrap().max_oracle_distance(8.0).unwrap();
        assert!(d <= bound, "{}: {d}", name.label());
    }
}

#[test]
fn modes_start_together() {
    let p = preset(PresetName::Fig1a).unwrap();
    let mut cfg = p.base.with_trajectories(50);
    cfg.sim = cfg
        .sim
        .with_grid(TimeGrid::spanning(1.0, cfg.sim.grid.dt).unwrap())
        .unwrap();
    let cmp = compare_modes_with(&cfg, 1).unwrap();
    assert_eq!(cmp.exact.series.mean_c[0], 1.0);
    assert_eq!(cmp.post_markov.series.mean_c[0], 1.0);
    assert!((cmp.oracle_c[0] - 1.0).abs() <= 1e-12);
}

#[test]
fn dephasing_half_life_shrinks_with_kappa() {
    let params = ModelParams::new(0.0, 1.0, 1.0).unwrap();
    let sim = SimulationConfig::new(
        Model::Dephasing,
        OperatorMode::Exact,
        params,
        BellState::PsiPlus,
        5.0,
    )
    .unwrap();
    let cfg = EnsembleConfig::new(sim).with_trajectories(300);
    let points = sweep_with(&cfg, SweepParameter::Kappa, &[0.0, 0.5, 1.0], 1).unwrap();
    let halves: Vec<f64> = points
        .iter()
        .map(|p| {
            half_life_key(time_to_half(
                &p.result.series.times,
                &p.result.series.mean_c,
            ))
        })
        .collect();
    assert!(halves.windows(2).all(|w| w[1] <= w[0]), "{halves:?}");
}

#[test]
fn slow_bath_preserves_entanglement_until_the_oracle_horizon() {
    // The reduced state keeps C(ρ) = exp(−16∫f₀) ≥ 0.9 up to `horizon`.
    let gamma = 0.01;
    let target = -(0.9f64.ln()) / 16.0;
    let (mut lo, mut hi) = (0.0, 10.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if f0_integral(gamma, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let horizon = lo;
    assert!((1.5..1.8).contains(&horizon), "{horizon}");
    let params = ModelParams::new(1.0, gamma, 1.0).unwrap();
    let sim = SimulationConfig::new(
        Model::Dephasing,
        OperatorMode::Exact,
        params,
        BellState::PsiPlus,
        10.0,
    )
    .unwrap();
    let cfg = EnsembleConfig::new(sim)
        .with_trajectories(500)
        .with_oracle(OracleKind::DephasingExact);
    let r = run_ensemble_with(&cfg, 1).unwrap();
    let s = &r.series;
    for ((&t, &m), &o) in s
        .times
        .iter()
        .zip(&s.mean_c)
        .zip(s.oracle_c.as_ref().unwrap())
    {
        if t <= horizon {
            assert!(m >= 0.9, "t = {t}: {m}");
            assert!(o >= 0.9 - 1e-9, "t = {t}: oracle {o}");
        }
    }
}

#[test]
fn stderr_scales_like_inverse_root_n() {
    let params = ModelParams::new(1.0, 0.3, 1.0).unwrap();
    let sim = SimulationConfig::new(
        Model::Dissipative,
        OperatorMode::Exact,
        params,
        BellState::PhiPlus,
        4.0,
    )
    .unwrap();
    let se = |n: usize| {
        let r = run_ensemble_with(
            &EnsembleConfig::new(sim).with_trajectories(n).with_seed(4),
            1,
        )
        .unwrap();
        let s = &r.series.stderr_c;
        s[1..].iter().sum::<f64>() / (s.len() - 1) as f64
    };
    let ratio = se(200) / se(1600);
    // √8 ≈ 2.83
    assert!((2.2..3.6).contains(&ratio), "{ratio}");
}

//! wasm-bindgen bindings behind `www/index.html`.
//!
//! Parameters arrive as plain strings and numbers from the page; errors are
//! returned as JS strings.

use nmqsd::algebra::{bell_state, BellState, DensityMatrix, Operator, C64};
use nmqsd::ensemble::{run_ensemble_with, EnsembleConfig};
use nmqsd::entanglement::concurrence_mixed;
use nmqsd::integrator::{run_trajectory, OperatorMode, Scheme, SimulationConfig};
use nmqsd::noise::SeedSpec;
use nmqsd::ooperator::{Model, ModelParams};
use nmqsd::oracles::OracleKind;
use wasm_bindgen::prelude::*;

/// Sample curves on a common time grid.
#[wasm_bindgen]
pub struct Curves {
    times: Vec<f64>,
    mean: Vec<f64>,
    stderr: Vec<f64>,
    oracle: Vec<f64>,
}

#[wasm_bindgen]
impl Curves {
    #[wasm_bindgen(getter)]
    pub fn times(&self) -> Vec<f64> {
        self.times.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn mean(&self) -> Vec<f64> {
        self.mean.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn stderr(&self) -> Vec<f64> {
        self.stderr.clone()
    }

    /// Empty when no oracle applies.
    #[wasm_bindgen(getter)]
    pub fn oracle(&self) -> Vec<f64> {
        self.oracle.clone()
    }
}

fn err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn config(
    model: &str,
    kappa: f64,
    gamma: f64,
    state: &str,
    t_max: f64,
) -> Result<SimulationConfig, JsValue> {
    let model: Model = model.parse().map_err(err)?;
    let state: BellState = state.parse().map_err(err)?;
    let params = ModelParams::new(kappa, gamma, 0.5).map_err(err)?;
    SimulationConfig::new(model, OperatorMode::Exact, params, state, t_max)
        .map(|c| c.with_scheme(Scheme::Heun))
        .map_err(err)
}

/// Concurrence of a single nonlinear trajectory.
#[wasm_bindgen]
pub fn trajectory(
    model: &str,
    kappa: f64,
    gamma: f64,
    state: &str,
    t_max: f64,
    seed: u64,
) -> Result<Curves, JsValue> {
    let cfg = config(model, kappa, gamma, state, t_max)?;
    let out = run_trajectory(&cfg, SeedSpec::new(seed, 0)).map_err(err)?;
    let n = out.times.len();
    Ok(Curves {
        times: out.times,
        mean: out.concurrence,
        stderr: vec![0.0; n],
        oracle: Vec::new(),
    })
}

/// Mean trajectory concurrence over `n` paths next to the model's oracle
/// `C(ρ_t)`.
#[wasm_bindgen]
pub fn ensemble(
    model: &str,
    kappa: f64,
    gamma: f64,
    state: &str,
    t_max: f64,
    n: usize,
    seed: u64,
) -> Result<Curves, JsValue> {
    let sim = config(model, kappa, gamma, state, t_max)?;
    let oracle = match sim.model {
        Model::Dissipative => OracleKind::Pseudomode,
        Model::Dephasing => OracleKind::DephasingExact,
    };
    let cfg = EnsembleConfig::new(sim)
        .with_trajectories(n)
        .with_seed(seed)
        .with_oracle(oracle);
    let series = run_ensemble_with(&cfg, 1).map_err(err)?.series;
    Ok(Curves {
        times: series.times,
        mean: series.mean_c,
        stderr: series.stderr_c,
        oracle: series.oracle_c.unwrap_or_default(),
    })
}

/// Concurrence of `p|Φ⁻⟩⟨Φ⁻| + (1 − p)𝟙/4`.
#[wasm_bindgen]
pub fn werner_concurrence(p: f64) -> Result<f64, JsValue> {
    if !(0.0..=1.0).contains(&p) {
        return Err(JsValue::from_str("p must lie in [0, 1]"));
    }
    let rho: Operator = bell_state(BellState::PhiMinus).projector() * C64::from(p)
        + Operator::identity() * C64::from((1.0 - p) / 4.0);
    concurrence_mixed(&DensityMatrix::from_operator(&rho)).map_err(err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn werner_threshold() {
        assert!(werner_concurrence(0.3).unwrap() < 1e-12);
        assert!((werner_concurrence(0.6).unwrap() - 0.4).abs() < 1e-12);
        assert!((werner_concurrence(1.0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ensemble_carries_an_oracle() {
        let c = ensemble("dephasing", 0.5, 1.0, "psi+", 1.0, 20, 1).unwrap();
        assert_eq!(c.times().len(), c.oracle().len());
        assert_eq!(c.mean()[0], 1.0);
    }

    #[test]
    fn trajectory_starts_maximally_entangled() {
        let c = trajectory("dissipative", 1.0, 0.3, "phi+", 2.0, 7).unwrap();
        assert_eq!(c.mean()[0], 1.0);
        assert!(c.mean().iter().all(|x| (0.0..=1.0).contains(x)));
    }
}

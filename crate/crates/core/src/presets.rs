//! Named experiment configurations for the figure reproductions.
//!
//! Sweep values and time spans are artifact defaults where the source does
//! not state them. Presets run near resonance (`ω = 0.5`) with the Heun
//! scheme; see the README.

use serde::{Deserialize, Serialize};

use crate::algebra::BellState;
use crate::ensemble::{EnsembleConfig, SweepParameter};
use crate::error::{QsdError, Result};
use crate::integrator::{OperatorMode, Scheme, SimulationConfig};
use crate::ooperator::{Model, ModelParams};
use crate::oracles::OracleKind;

pub const KAPPA_SWEEP: [f64; 4] = [0.0, 0.25, 0.5, 1.0];
pub const GAMMA_SWEEP: [f64; 6] = [0.01, 0.1, 0.3, 1.0, 5.0, 10.0];
pub const PRESET_OMEGA: f64 = 0.5;
pub const DEFAULT_T_MAX: f64 = 15.0;
pub const LONG_T_MAX: f64 = 40.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PresetName {
    Fig1a,
    Fig1b,
    Fig2a,
    Fig2b,
    Fig3a,
    Fig3b,
    Fig4a,
    Fig4b,
    Fig5a,
    Fig5b,
}

impl PresetName {
    pub const ALL: [PresetName; 10] = [
        PresetName::Fig1a,
        PresetName::Fig1b,
        PresetName::Fig2a,
        PresetName::Fig2b,
        PresetName::Fig3a,
        PresetName::Fig3b,
        PresetName::Fig4a,
        PresetName::Fig4b,
        PresetName::Fig5a,
        PresetName::Fig5b,
    ];

    pub fn label(self) -> &'static str {
        match self {
            PresetName::Fig1a => "fig1a",
            PresetName::Fig1b => "fig1b",
            PresetName::Fig2a => "fig2a",
            PresetName::Fig2b => "fig2b",
            PresetName::Fig3a => "fig3a",
            PresetName::Fig3b => "fig3b",
            PresetName::Fig4a => "fig4a",
            PresetName::Fig4b => "fig4b",
            PresetName::Fig5a => "fig5a",
            PresetName::Fig5b => "fig5b",
        }
    }
}

impl std::str::FromStr for PresetName {
    type Err = QsdError;

    fn from_str(s: &str) -> Result<Self> {
        PresetName::ALL
            .into_iter()
            .find(|p| p.label() == s)
            .ok_or_else(|| {
                QsdError::InvalidConfig(format!("unknown preset `{s}` (expected fig1a … fig5b)"))
            })
    }
}

/// What a preset runs on top of its base ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PresetKind {
    /// Exact vs post-Markov vs oracle for one state.
    CompareModes,
    /// One ensemble per value of the parameter.
    Sweep {
        parameter: SweepParameter,
        values: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPreset {
    pub name: PresetName,
    pub base: EnsembleConfig,
    /// Initial states run in turn (`Ψ±` or `Φ±` for the dephasing figures).
    pub states: Vec<BellState>,
    pub kind: PresetKind,
}

fn base(
    model: Model,
    kappa: f64,
    gamma: f64,
    state: BellState,
    t_max: f64,
) -> Result<EnsembleConfig> {
    let params = ModelParams::new(kappa, gamma, PRESET_OMEGA)?;
    let sim = SimulationConfig::new(model, OperatorMode::Exact, params, state, t_max)?
        .with_scheme(Scheme::Heun);
    let oracle = match model {
        Model::Dissipative => OracleKind::Pseudomode,
        Model::Dephasing => OracleKind::DephasingExact,
    };
    Ok(EnsembleConfig::new(sim).with_oracle(oracle))
}

pub fn preset(name: PresetName) -> Result<ExperimentPreset> {
    use BellState::*;
    use Model::*;
    use PresetName::*;
    let kappa_sweep = PresetKind::Sweep {
        parameter: SweepParameter::Kappa,
        values: KAPPA_SWEEP.to_vec(),
    };
    let gamma_sweep = PresetKind::Sweep {
        parameter: SweepParameter::Gamma,
        values: GAMMA_SWEEP.to_vec(),
    };
    let (model, kappa, gamma, states, t_max, kind) = match name {
        Fig1a => (
            Dissipative,
            1.0,
            0.3,
            vec![PsiPlus],
            DEFAULT_T_MAX,
            PresetKind::CompareModes,
        ),
        Fig1b => (
            Dissipative,
            1.0,
            0.3,
            vec![PhiPlus],
            DEFAULT_T_MAX,
            PresetKind::CompareModes,
        ),
        Fig2a => (
            Dissipative,
            1.0,
            0.3,
            vec![PsiPlus],
            DEFAULT_T_MAX,
            kappa_sweep,
        ),
        Fig2b => (
            Dissipative,
            1.0,
            0.3,
            vec![PsiPlus],
            DEFAULT_T_MAX,
            gamma_sweep,
        ),
        Fig3a => (
            Dissipative,
            1.0,
            0.3,
            vec![PhiPlus],
            LONG_T_MAX,
            kappa_sweep,
        ),
        Fig3b => (
            Dissipative,
            0.25,
            0.3,
            vec![PhiPlus],
            DEFAULT_T_MAX,
            gamma_sweep,
        ),
        Fig4a => (
            Dephasing,
            1.0,
            1.0,
            vec![PsiPlus, PsiMinus],
            DEFAULT_T_MAX,
            kappa_sweep,
        ),
        Fig4b => (
            Dephasing,
            1.0,
            1.0,
            vec![PsiPlus, PsiMinus],
            DEFAULT_T_MAX,
            gamma_sweep,
        ),
        Fig5a => (
            Dephasing,
            1.0,
            1.0,
            vec![PhiPlus, PhiMinus],
            DEFAULT_T_MAX,
            kappa_sweep,
        ),
        Fig5b => (
            Dephasing,
            0.25,
            1.0,
            vec![PhiPlus, PhiMinus],
            DEFAULT_T_MAX,
            gamma_sweep,
        ),
    };
    Ok(ExperimentPreset {
        name,
        base: base(model, kappa, gamma, states[0], t_max)?,
        states,
        kind,
    })
}

impl ExperimentPreset {
    /// The base ensemble with the given initial state.
    pub fn for_state(&self, state: BellState) -> EnsembleConfig {
        let mut cfg = self.base;
        cfg.sim.initial_state = state.into();
        cfg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_presets_build_and_parse() {
        for name in PresetName::ALL {
            let p = preset(name).unwrap();
            assert_eq!(p.name, name);
            assert_eq!(name.label().parse::<PresetName>().unwrap(), name);
            p.base.validate().unwrap();
            assert_eq!(p.base.n_trajectories, 1000);
            assert_eq!(p.base.sim.scheme, Scheme::Heun);
        }
        assert!("fig6a".parse::<PresetName>().is_err());
    }

    #[test]
    fn fig1a_matches_caption() {
        let p = preset(PresetName::Fig1a).unwrap();
        assert_eq!(p.base.sim.model, Model::Dissipative);
        assert_eq!(p.base.sim.params.kappa, 1.0);
        assert_eq!(p.base.sim.params.gamma, 0.3);
        assert_eq!(p.states, vec![BellState::PsiPlus]);
        assert_eq!(p.kind, PresetKind::CompareModes);
        assert_eq!(p.base.oracle, OracleKind::Pseudomode);
    }

    #[test]
    fn sweep_presets_match_captions() {
        let p = preset(PresetName::Fig3b).unwrap();
        assert_eq!(p.base.sim.params.kappa, 0.25);
        assert!(matches!(
            p.kind,
            PresetKind::Sweep {
                parameter: SweepParameter::Gamma,
                ..
            }
        ));
        let p = preset(PresetName::Fig3a).unwrap();
        assert_eq!(p.base.sim.grid.t_max(), 40.0);
        let p = preset(PresetName::Fig5a).unwrap();
        assert_eq!(p.base.sim.model, Model::Dephasing);
        assert_eq!(p.states, vec![BellState::PhiPlus, BellState::PhiMinus]);
        assert_eq!(
            p.for_state(BellState::PhiMinus).sim.initial_state,
            BellState::PhiMinus.into()
        );
    }
}

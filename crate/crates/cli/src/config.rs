//! The single JSON configuration file. Every section is optional and falls
//! back to the defaults below; unknown keys are rejected.

use std::path::Path;

use hwifp::auth::experiment::{FleetConfig, ProtocolConfig};
use hwifp::constellation::{Constellation, ConstellationKind};
use hwifp::estimator::CrbPairing;
use hwifp::fim::DEFAULT_RANK_TOL;
use hwifp::signal_model::HwiParams;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::ConfigError;

/// Impairment parameters with the phase in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatingPoint {
    pub eps: f64,
    pub phi_deg: f64,
    pub re_alpha3: f64,
    pub im_alpha3: f64,
}

impl OperatingPoint {
    pub const MC_TRUTH: OperatingPoint = OperatingPoint {
        eps: 0.03,
        phi_deg: 2.0,
        re_alpha3: 0.02,
        im_alpha3: 0.01,
    };

    pub fn params(&self) -> HwiParams {
        HwiParams::from_degrees(self.eps, self.phi_deg, self.re_alpha3, self.im_alpha3)
    }
}

/// A user alphabet; the points are rescaled to unit power.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomAlphabet {
    pub name: String,
    pub points: Vec<[f64; 2]>,
}

impl CustomAlphabet {
    pub fn build(&self) -> hwifp::Result<Constellation> {
        Constellation::custom(
            self.name.clone(),
            self.points.iter().map(|p| Complex64::new(p[0], p[1])).collect(),
        )
    }
}

fn standard_names() -> Vec<String> {
    ConstellationKind::STANDARD
        .iter()
        .map(|k| k.name().to_string())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MomentsSection {
    pub modulations: Vec<String>,
    pub custom: Vec<CustomAlphabet>,
}

impl Default for MomentsSection {
    fn default() -> Self {
        MomentsSection {
            modulations: standard_names(),
            custom: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrbCurvesSection {
    pub modulations: Vec<String>,
    pub snr_db: Vec<f64>,
    pub n: Vec<usize>,
    pub operating_point: OperatingPoint,
}

impl Default for CrbCurvesSection {
    fn default() -> Self {
        CrbCurvesSection {
            modulations: ["bpsk", "qpsk", "8psk", "16qam"].map(String::from).to_vec(),
            snr_db: (0..=20).map(|i| f64::from(i) * 2.0).collect(),
            n: vec![32, 76, 256],
            operating_point: OperatingPoint {
                eps: 0.05,
                phi_deg: 3.0,
                re_alpha3: 0.0,
                im_alpha3: 0.0,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McSection {
    pub modulation: String,
    pub truth: OperatingPoint,
    pub snr_db: Vec<f64>,
    pub n: usize,
    pub n_trials: usize,
    pub pairing: CrbPairing,
}

impl Default for McSection {
    fn default() -> Self {
        McSection {
            modulation: "qpsk".into(),
            truth: OperatingPoint::MC_TRUTH,
            snr_db: vec![0.0, 10.0, 20.0, 30.0, 40.0],
            n: 76,
            n_trials: 300,
            pairing: CrbPairing::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentifiabilitySection {
    pub modulations: Vec<String>,
    pub operating_point: OperatingPoint,
    pub n: usize,
    pub snr_db: f64,
}

impl Default for IdentifiabilitySection {
    fn default() -> Self {
        IdentifiabilitySection {
            modulations: standard_names(),
            operating_point: OperatingPoint::MC_TRUTH,
            n: 76,
            snr_db: 20.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FleetSimSection {
    /// Burst files written per satellite and campaign (0 = features only).
    pub emit_bursts: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuthenticateSection {
    /// Weight with the published DR table instead of the simulated one.
    pub published_dr: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub rank_tol: f64,
    pub moments: MomentsSection,
    pub crb_curves: CrbCurvesSection,
    pub mc_validate: McSection,
    pub identifiability: IdentifiabilitySection,
    pub fleet: FleetConfig,
    pub protocol: ProtocolConfig,
    pub fleet_sim: FleetSimSection,
    pub authenticate: AuthenticateSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 20240607,
            rank_tol: DEFAULT_RANK_TOL,
            moments: MomentsSection::default(),
            crb_curves: CrbCurvesSection::default(),
            mc_validate: McSection::default(),
            identifiability: IdentifiabilitySection::default(),
            fleet: FleetConfig::default(),
            protocol: ProtocolConfig::default(),
            fleet_sim: FleetSimSection::default(),
            authenticate: AuthenticateSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| ConfigError(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |m: String| Err(ConfigError(m));
        if !(self.rank_tol > 0.0 && self.rank_tol < 1.0) {
            return err(format!("rank_tol {} outside (0, 1)", self.rank_tol));
        }
        let c = &self.crb_curves;
        if c.snr_db.is_empty() || c.n.is_empty() || c.n.contains(&0) || c.snr_db.iter().any(|s| !s.is_finite()) {
            return err("crb_curves needs a non-empty finite SNR grid and N >= 1".into());
        }
        let m = &self.mc_validate;
        if m.snr_db.is_empty() || m.n == 0 || m.n_trials == 0 {
            return err("mc_validate needs SNR points, n >= 1 and n_trials >= 1".into());
        }
        let i = &self.identifiability;
        if i.n == 0 || !i.snr_db.is_finite() {
            return err("identifiability needs n >= 1 and a finite SNR".into());
        }
        for name in self
            .moments
            .modulations
            .iter()
            .chain(&c.modulations)
            .chain(&i.modulations)
            .chain(std::iter::once(&m.modulation))
        {
            name.parse::<ConstellationKind>()
                .map_err(|e| ConfigError(e.to_string()))?;
        }
        self.fleet.spread.validate().map_err(|e| ConfigError(e.to_string()))?;
        if self.fleet.n_satellites < 2 {
            return err(format!("fleet.n_satellites = {}", self.fleet.n_satellites));
        }
        self.protocol.validate().map_err(|e| ConfigError(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_identity() {
        let cfg = ExperimentConfig::default();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(serde_json::to_string_pretty(&back).unwrap(), text);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"sed": 1}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"mc_validate": {"trials": 3}}"#).is_err());
    }

    #[test]
    fn partial_sections_fill_defaults() {
        let c = ExperimentConfig::from_json(r#"{"mc_validate": {"n_trials": 10}}"#).unwrap();
        assert_eq!(c.mc_validate.n_trials, 10);
        assert_eq!(c.mc_validate.n, 76);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"moments": {"modulations": ["17apsk"]}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"crb_curves": {"n": [0]}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"fleet": {"n_satellites": 1}}"#).is_err());
    }
}

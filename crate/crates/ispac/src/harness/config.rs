//! Experiment configuration: JSON schema, defaults, and validation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Scenario block; absent fields fall back to the reference setup at 28 GHz
/// with a 64-antenna main array, 16-antenna assisting array, 4 RF-chain
/// sub-arrays of 16, four users among twin scatterers at 20-30 m, and the
/// target at 45 degrees, 20 m.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioBlock {
    pub carrier_hz: f64,
    pub n_mt: usize,
    pub n_at: usize,
    pub n_rf: usize,
    /// Main-array aperture in meters; spacing is aperture / (n_mt - 1).
    pub mt_aperture_m: f64,
    pub k_users: usize,
    pub t_slots: usize,
    pub l_k: usize,
    pub p_d_dbm: f64,
    pub p_s_dbm: f64,
    pub p_u_dbm: f64,
    pub noise_dbm: f64,
    pub qos_db: Vec<f64>,
    pub target_theta_deg: f64,
    pub target_range_m: f64,
    pub user_range_m: [f64; 2],
    pub user_theta_deg: [f64; 2],
    pub seed: u64,
}

impl Default for ScenarioBlock {
    fn default() -> Self {
        Self {
            carrier_hz: 28e9,
            n_mt: 64,
            n_at: 16,
            n_rf: 16,
            mt_aperture_m: 0.5,
            k_users: 4,
            t_slots: 256,
            l_k: 2,
            p_d_dbm: 30.0,
            p_s_dbm: 30.0,
            p_u_dbm: 20.0,
            noise_dbm: -80.0,
            qos_db: vec![10.0],
            target_theta_deg: 45.0,
            target_range_m: 20.0,
            user_range_m: [20.0, 30.0],
            user_theta_deg: [-60.0, 60.0],
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    PositionDownlink,
    PositionUplink,
    CrbSweepDownlink,
    CrbSweepUplink,
    Convergence,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum SweepVariable {
    /// Sensing SNR in dB (noise scaled at fixed echo power).
    SnrDb,
    /// Per-user QoS target in dB.
    QosDb,
    /// RF chain count at the main transceiver.
    NRf,
}

/// Beamformer used while measuring estimator error.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ProbingMode {
    /// Uniform covariance over the probe ports; no optimizer in the loop.
    #[default]
    Isotropic,
    /// Run the matching CRB optimizer first.
    Optimized,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentBlock {
    pub kind: ExperimentKind,
    pub sweep: SweepVariable,
    pub values: Vec<f64>,
    pub trials: usize,
    pub probing: ProbingMode,
    /// Compare between beamformer variants in CRB sweeps.
    pub variants: Vec<String>,
}

impl Default for ExperimentBlock {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::PositionDownlink,
            sweep: SweepVariable::SnrDb,
            values: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            trials: 100,
            probing: ProbingMode::Isotropic,
            variants: vec!["near".into(), "far".into(), "fd".into()],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields, default)]
pub struct OutputBlock {
    pub csv: Option<String>,
    pub svg: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub scenario: ScenarioBlock,
    pub experiment: ExperimentBlock,
    pub output: OutputBlock,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let s = &self.scenario;
        if s.n_rf == 0 || s.n_mt % s.n_rf != 0 {
            return Err(ConfigError::Invalid(format!(
                "scenario.n_mt ({}) must be divisible by scenario.n_rf ({})",
                s.n_mt, s.n_rf
            )));
        }
        if s.t_slots < s.n_at {
            return Err(ConfigError::Invalid(format!(
                "scenario.t_slots ({}) must be >= scenario.n_at ({}) for covariance rank",
                s.t_slots, s.n_at
            )));
        }
        if s.k_users == 0 {
            return Err(ConfigError::Invalid("scenario.k_users must be >= 1".into()));
        }
        if s.qos_db.is_empty() {
            return Err(ConfigError::Invalid("scenario.qos_db must be non-empty".into()));
        }
        if !(s.user_range_m[0] > 0.0 && s.user_range_m[1] >= s.user_range_m[0]) {
            return Err(ConfigError::Invalid(format!(
                "scenario.user_range_m {:?} must be an increasing positive pair",
                s.user_range_m
            )));
        }
        let e = &self.experiment;
        if e.values.is_empty() {
            return Err(ConfigError::Invalid("experiment.values must be non-empty".into()));
        }
        if e.trials == 0 {
            return Err(ConfigError::Invalid("experiment.trials must be >= 1".into()));
        }
        if e.sweep == SweepVariable::NRf {
            for v in &e.values {
                let n = *v as usize;
                if v.fract() != 0.0 || n == 0 || s.n_mt % n != 0 {
                    return Err(ConfigError::Invalid(format!(
                        "experiment.values: RF count {v} must divide scenario.n_mt ({})",
                        s.n_mt
                    )));
                }
            }
        }
        for v in &e.variants {
            if !matches!(v.as_str(), "near" | "far" | "fd") {
                return Err(ConfigError::Invalid(format!(
                    "experiment.variants: unknown variant {v:?} (expected near, far, or fd)"
                )));
            }
        }
        Ok(())
    }

    /// Canonical serialized form with all defaults materialized.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_scenario_gets_reference_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{ "scenario": {} }"#).unwrap();
        assert_eq!(cfg.scenario.carrier_hz, 28e9);
        assert_eq!(cfg.scenario.n_mt, 64);
        assert_eq!(cfg.scenario.n_at, 16);
        assert_eq!(cfg.scenario.k_users, 4);
        assert_eq!(cfg.scenario.l_k, 2);
        assert_eq!(cfg.scenario.p_d_dbm, 30.0);
        assert_eq!(cfg.scenario.p_u_dbm, 20.0);
        assert_eq!(cfg.scenario.noise_dbm, -80.0);
        assert_eq!(cfg.scenario.target_theta_deg, 45.0);
        assert_eq!(cfg.scenario.target_range_m, 20.0);
    }

    #[test]
    fn divisibility_violation_rejected_with_field_path() {
        let err = ExperimentConfig::from_json(
            r#"{ "scenario": { "n_mt": 10, "n_rf": 4 } }"#,
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("n_mt") && msg.contains("divisible"), "message: {msg}");
    }

    #[test]
    fn unknown_field_rejected() {
        let err =
            ExperimentConfig::from_json(r#"{ "scenario": { "bogus": 1 } }"#).unwrap_err();
        assert!(err.to_string().contains("bogus"));
    }

    #[test]
    fn canonical_round_trip_is_idempotent() {
        let cfg = ExperimentConfig::from_json(
            r#"{ "scenario": { "n_mt": 16, "n_rf": 4, "n_at": 4 },
                 "experiment": { "kind": "position-uplink", "trials": 7 } }"#,
        )
        .unwrap();
        let canon = cfg.canonical_json();
        let reparsed = ExperimentConfig::from_json(&canon).unwrap();
        assert_eq!(cfg, reparsed);
        assert_eq!(canon, reparsed.canonical_json());
    }

    #[test]
    fn dbm_conversion() {
        assert!((dbm_to_watts(30.0) - 1.0).abs() < 1e-12);
        assert!((dbm_to_watts(-80.0) - 1e-11).abs() < 1e-23);
    }
}

//! Run configuration file (TOML).
//!
//! Every key is optional; omitted keys take the documented defaults. Unknown
//! keys are rejected. Seeds of the two links and the follower derive from
//! `seed` unless set explicitly.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use teleus_core::geometry::ContactParams;
use teleus_core::session::calibration::CalibrationParams;
use teleus_core::session::follower::FollowerParams;
use teleus_core::{NetworkPreset, SessionConfig, SessionError};

use crate::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub mean_one_way_delay_ms: Option<f64>,
    pub jitter_sd_ms: Option<f64>,
    pub drop_prob: Option<f64>,
    pub allow_reorder: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FollowerSection {
    pub reaction_delay_ms: Option<f64>,
    pub time_constant_ms: Option<f64>,
    pub offset_m: Option<[f64; 3]>,
    pub offset_rot_deg: Option<[f64; 3]>,
    pub noise_sd_m: Option<f64>,
    pub noise_sd_deg: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// `ideal`, `wifi` or `5g`.
    pub preset: String,
    pub tick_rate_hz: u32,
    pub scan_duration_s: f64,
    pub velocity_cutoff_hz: f64,
    pub network_seed: Option<u64>,
    pub return_seed: Option<u64>,
    pub follower_seed: Option<u64>,
    pub landmarks: Option<[[f64; 3]; 4]>,
    pub out: Option<PathBuf>,
    pub network: NetworkSection,
    pub follower: FollowerSection,
    pub contact: Option<ContactParams>,
    pub calibration: Option<CalibrationParams>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            preset: "wifi".into(),
            tick_rate_hz: 100,
            scan_duration_s: 60.0,
            velocity_cutoff_hz: 20.0,
            network_seed: None,
            return_seed: None,
            follower_seed: None,
            landmarks: None,
            out: None,
            network: NetworkSection::default(),
            follower: FollowerSection::default(),
            contact: None,
            calibration: None,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Resolve to a validated session config.
    pub fn session_config(&self) -> Result<SessionConfig, CliError> {
        let mut cfg = SessionConfig::seeded(self.seed);
        cfg.network = NetworkPreset::by_name(&self.preset, self.seed)
            .map_err(|e| CliError::Config(e.to_string()))?;
        let n = &self.network;
        if let Some(v) = n.mean_one_way_delay_ms {
            cfg.network.mean_one_way_delay_ms = v;
        }
        if let Some(v) = n.jitter_sd_ms {
            cfg.network.jitter_sd_ms = v;
        }
        if let Some(v) = n.drop_prob {
            cfg.network.drop_prob = v;
        }
        if let Some(v) = n.allow_reorder {
            cfg.network.allow_reorder = v;
        }
        cfg.tick_rate_hz = self.tick_rate_hz;
        cfg.scan_duration_s = self.scan_duration_s;
        cfg.velocity_cutoff_hz = self.velocity_cutoff_hz;
        let f = &self.follower;
        let d = FollowerParams::default();
        cfg.follower = FollowerParams {
            reaction_delay_ms: f.reaction_delay_ms.unwrap_or(d.reaction_delay_ms),
            time_constant_ms: f.time_constant_ms.unwrap_or(d.time_constant_ms),
            offset_m: f.offset_m,
            offset_rot_deg: f.offset_rot_deg,
            noise_sd_m: f.noise_sd_m.unwrap_or(d.noise_sd_m),
            noise_sd_deg: f.noise_sd_deg.unwrap_or(d.noise_sd_deg),
            seed: 0,
        };
        if let Some(c) = self.contact {
            cfg.contact = c;
        }
        if let Some(c) = &self.calibration {
            cfg.calibration = c.clone();
        }
        if let Some(l) = self.landmarks {
            cfg.landmarks = l;
        }
        cfg.reseed(self.seed);
        if let Some(s) = self.network_seed {
            cfg.network.seed = s;
        }
        if let Some(s) = self.return_seed {
            cfg.return_seed = s;
        }
        if let Some(s) = self.follower_seed {
            cfg.follower.seed = s;
        }
        cfg.validate().map_err(|e| match e {
            SessionError::Config(msg) => CliError::Config(msg),
            other => CliError::Config(other.to_string()),
        })?;
        Ok(cfg)
    }
}

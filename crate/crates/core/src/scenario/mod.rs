//! Deployments, mobility and LOS coverage planning.
//!
//! [`ScenarioConfig`] is the experiment description shared by every other
//! module. It round-trips through TOML:
//!
//! ```
//! use terrapos::scenario::ScenarioConfig;
//!
//! let cfg = ScenarioConfig::umi();
//! let text = cfg.to_toml().unwrap();
//! let back = ScenarioConfig::from_toml(&text).unwrap();
//! assert_eq!(cfg, back);
//! ```

mod coverage;
mod geometry;
mod track;

pub use coverage::{coverage_grid, CoverageGrid, Region, UE_HEIGHT};
pub use geometry::{los_visible, Aabb, ObstacleMap};
pub use track::{generate_random_waypoint_track, TrackSample, WaypointTrack};

use serde::{Deserialize, Serialize};

use crate::channel::NoiseConfig;
use crate::error::{Error, Result};
use crate::Vec3;

/// Comb sizes accepted for the reference-signal allocation.
pub const COMB_SIZES: [usize; 6] = [1, 2, 4, 6, 8, 12];

/// A transmission-reception point used as a ranging anchor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrpSite {
    pub id: String,
    pub position: Vec3,
}

impl TrpSite {
    pub fn new(id: impl Into<String>, x: f64, y: f64, z: f64) -> Self {
        Self {
            id: id.into(),
            position: Vec3::new(x, y, z),
        }
    }
}

/// Experiment configuration: numerology, deployment, mobility and noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Hz
    pub carrier_frequency: f64,
    /// Hz
    pub bandwidth: f64,
    /// Hz
    pub subcarrier_spacing: f64,
    pub num_subcarriers: usize,
    pub comb_size: usize,
    pub comb_offset: usize,
    pub trp_list: Vec<TrpSite>,
    pub ue_init: Vec3,
    /// m/s
    pub ue_speed: f64,
    #[serde(default)]
    pub noise: NoiseConfig,
    pub rng_seed: u64,
}

impl ScenarioConfig {
    /// The urban-microcell deployment: 3.8 GHz carrier, 100 MHz, 30 kHz
    /// subcarrier spacing, 3276 subcarriers on a comb-6 grid, three TRPs at
    /// 10 m and the UE at 1.5 m moving at 3 km/h.
    pub fn umi() -> Self {
        Self {
            carrier_frequency: 3.8e9,
            bandwidth: 100e6,
            subcarrier_spacing: 30e3,
            num_subcarriers: 3276,
            comb_size: 6,
            comb_offset: 0,
            trp_list: vec![
                TrpSite::new("TRP-1", 100.0, 100.0, 10.0),
                TrpSite::new("TRP-2", 150.0, 90.0, 10.0),
                TrpSite::new("TRP-3", 140.0, 150.0, 10.0),
            ],
            ue_init: Vec3::new(120.0, 110.0, 1.5),
            ue_speed: 3.0 / 3.6,
            noise: NoiseConfig::default(),
            rng_seed: 1,
        }
    }

    /// Same deployment on a 120 kHz numerology with 816 subcarriers
    /// (97.92 MHz). The classifier input length equals the subcarrier count,
    /// so this grid keeps training tractable on a CPU while preserving a
    /// ~10 ns delay resolution.
    pub fn umi_compact() -> Self {
        Self {
            subcarrier_spacing: 120e3,
            num_subcarriers: 816,
            ..Self::umi()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        let positive = [
            ("carrier_frequency", self.carrier_frequency),
            ("bandwidth", self.bandwidth),
            ("subcarrier_spacing", self.subcarrier_spacing),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive and finite"));
            }
        }
        if self.num_subcarriers < 2 {
            return bad("num_subcarriers must be at least 2".into());
        }
        let occupied = self.num_subcarriers as f64 * self.subcarrier_spacing;
        if occupied > self.bandwidth * (1.0 + 1e-12) {
            return bad(format!(
                "{} subcarriers x {} Hz = {occupied} Hz exceeds bandwidth {} Hz",
                self.num_subcarriers, self.subcarrier_spacing, self.bandwidth
            ));
        }
        if !COMB_SIZES.contains(&self.comb_size) {
            return bad(format!("comb_size {} not in {COMB_SIZES:?}", self.comb_size));
        }
        if self.comb_offset >= self.comb_size {
            return bad(format!(
                "comb_offset {} must be < comb_size {}",
                self.comb_offset, self.comb_size
            ));
        }
        if self.trp_list.is_empty() {
            return bad("at least one TRP is required".into());
        }
        for trp in &self.trp_list {
            if !trp.position.iter().all(|c| c.is_finite()) {
                return bad(format!("TRP {} has a non-finite position", trp.id));
            }
            if trp.position.z < 0.0 {
                return bad(format!("TRP {} is below ground", trp.id));
            }
        }
        if !self.ue_init.iter().all(|c| c.is_finite()) {
            return bad("ue_init must be finite".into());
        }
        if !(self.ue_speed.is_finite() && self.ue_speed >= 0.0) {
            return bad("ue_speed must be non-negative".into());
        }
        self.noise.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn trp(&self, id: &str) -> Option<&TrpSite> {
        self.trp_list.iter().find(|t| t.id == id)
    }

    /// Hex SHA-256 of the canonical TOML rendering; stamped on study outputs.
    pub fn config_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let text = self.to_toml().unwrap_or_default();
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        ScenarioConfig::umi().validate().unwrap();
        ScenarioConfig::umi_compact().validate().unwrap();
    }

    #[test]
    fn rejects_invariant_violations() {
        let mut cfg = ScenarioConfig::umi();
        cfg.num_subcarriers = 4000;
        assert!(cfg.validate().is_err());

        let mut cfg = ScenarioConfig::umi();
        cfg.comb_offset = 6;
        assert!(cfg.validate().is_err());

        let mut cfg = ScenarioConfig::umi();
        cfg.comb_size = 3;
        assert!(cfg.validate().is_err());

        let mut cfg = ScenarioConfig::umi();
        cfg.trp_list.clear();
        assert!(cfg.validate().is_err());

        let mut cfg = ScenarioConfig::umi();
        cfg.trp_list[0].position.x = f64::NAN;
        assert!(cfg.validate().is_err());

        let mut cfg = ScenarioConfig::umi();
        cfg.trp_list[0].position.z = -1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ScenarioConfig::umi();
        let mut b = a.clone();
        assert_eq!(a.config_hash(), b.config_hash());
        b.rng_seed = 2;
        assert_ne!(a.config_hash(), b.config_hash());
    }
}

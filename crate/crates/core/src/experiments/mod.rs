//! Scripted end-to-end studies.
//!
//! Each study is a pure function of its configuration and seed. Monte-Carlo
//! trials run in parallel, each on its own random substream, and are folded
//! in trial order, so the thread count never changes a result. Output
//! files start with a `# config_hash <hex> seed <n>` line.

mod classify;
mod exclusion;
mod fusion;
mod ranging;

pub use classify::{run_classifier_study, ClassifierStudy, ClassifierStudyConfig};
pub use exclusion::{run_exclusion_study, ExclusionConfig, ExclusionReport};
pub use fusion::{
    default_fusion_map, initial_covariance, run_fusion_study, simulate_drive, Drive, FusionRow, FusionStudy,
    FusionStudyConfig,
};
pub use ranging::{run_umi_ranging, Histogram, TrpRanging, UmiRangingConfig, UmiRangingReport};

use std::fmt::Debug;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::scenario::ScenarioConfig;

/// Hex SHA-256 over the scenario TOML and the study parameters.
pub fn study_hash(scenario: &ScenarioConfig, study: &impl Debug) -> String {
    let mut h = Sha256::new();
    h.update(scenario.to_toml().unwrap_or_default().as_bytes());
    h.update(format!("{study:?}").as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn header_line(hash: &str, seed: u64) -> String {
    format!("# config_hash {hash} seed {seed}\n")
}

/// Record of one study run: what was run and what it wrote.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub study: String,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub config: String,
    pub outputs: Vec<PathBuf>,
}

impl Manifest {
    pub fn new(study: &str, scenario: &ScenarioConfig, params: &impl Debug, seed: u64) -> Self {
        Self {
            study: study.into(),
            config_hash: study_hash(scenario, params),
            seed,
            version: env!("CARGO_PKG_VERSION").into(),
            config: format!("{params:?}"),
            outputs: Vec::new(),
        }
    }

    pub fn header(&self) -> String {
        header_line(&self.config_hash, self.seed)
    }

    /// Writes `body` under `dir/name` behind the hash header and records it.
    pub fn write(&mut self, dir: &Path, name: &str, body: &str) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let path = dir.join(name);
        let mut f = fs::File::create(&path)?;
        f.write_all(self.header().as_bytes())?;
        f.write_all(body.as_bytes())?;
        self.outputs.push(path.clone());
        Ok(path)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "study {}\nconfig_hash {}\nseed {}\nterrapos_version {}\nparams {}\n",
            self.study, self.config_hash, self.seed, self.version, self.config
        );
        for p in &self.outputs {
            s.push_str(&format!("output {}\n", p.display()));
        }
        s
    }

    /// Writes `manifest.txt` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let path = dir.join("manifest.txt");
        fs::write(&path, self.to_text())?;
        Ok(path)
    }
}

/// `value,fraction` lines of an empirical CDF.
pub(crate) fn cdf_text(cdf: &[(f64, f64)]) -> String {
    let mut s = String::from("error_m,fraction\n");
    for (e, f) in cdf {
        s.push_str(&format!("{e:?},{f:?}\n"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_tracks_params_and_scenario() {
        let s = ScenarioConfig::umi();
        let a = study_hash(&s, &(1, 2));
        assert_eq!(a, study_hash(&s, &(1, 2)));
        assert_ne!(a, study_hash(&s, &(1, 3)));
        assert_ne!(a, study_hash(&ScenarioConfig::umi_compact(), &(1, 2)));
        assert_eq!(a.len(), 64);
    }

    #[test]
    fn manifest_lists_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = Manifest::new("demo", &ScenarioConfig::umi(), &"p", 9);
        let p = m.write(dir.path(), "x.csv", "a,b\n").unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with(&format!("# config_hash {} seed 9\n", m.config_hash)));
        assert!(m.to_text().contains("x.csv"));
        assert!(m.save(dir.path()).unwrap().exists());
    }
}

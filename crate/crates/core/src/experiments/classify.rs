use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Manifest;
use crate::channel::LinkState;
use crate::classifier::{
    generate_dataset, train, write_checkpoint, Classifier, DatasetConfig, Metrics, Split, TrainConfig, TrainingLog,
};
use crate::error::Result;
use crate::scenario::ScenarioConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierStudyConfig {
    pub samples: usize,
    /// Probability of a forced-LOS channel draw per sample.
    pub los_fraction: f64,
    pub split: Split,
    /// The study seed replaces `train.seed`.
    pub train: TrainConfig,
}

impl Default for ClassifierStudyConfig {
    fn default() -> Self {
        Self { samples: 10_000, los_fraction: 0.5, split: Split::default(), train: TrainConfig::default() }
    }
}

pub struct ClassifierStudy {
    pub classifier: Classifier,
    pub log: TrainingLog,
    pub metrics: Metrics,
    /// `(p_NLOS, true label)` on the held-out test set.
    pub test_scores: Vec<(f64, LinkState)>,
    pub dataset_size: usize,
    pub nlos_share: f64,
}

impl ClassifierStudy {
    pub fn summary(&self) -> crate::eval::Report {
        let m = &self.metrics;
        let cm = m.row_normalized();
        let mut r = crate::eval::Report::default();
        r.add("samples", self.dataset_size)
            .num("nlos_share", self.nlos_share)
            .add("epochs", self.log.epochs.len())
            .add("best_epoch", self.log.best_epoch)
            .num("accuracy", m.accuracy)
            .num("roc_auc", m.roc_auc)
            .num("los_recall", m.los_recall())
            .num("nlos_recall", m.nlos_recall())
            .num("los_as_nlos", cm[0][1])
            .num("nlos_as_los", cm[1][0]);
        r
    }

    /// Writes `summary.txt`, `training_log.csv`, `test_scores.csv` and the
    /// `model.tpnn` checkpoint.
    pub fn write_outputs(&self, manifest: &mut Manifest, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut log = Vec::new();
        self.log.write_csv(&mut log)?;
        let mut scores = String::from("p_nlos,label\n");
        for (s, l) in &self.test_scores {
            let _ = writeln!(scores, "{s:?},{}", l.as_str());
        }
        let mut paths = vec![
            manifest.write(dir, "summary.txt", &self.summary().to_kv())?,
            manifest.write(dir, "training_log.csv", &String::from_utf8_lossy(&log))?,
            manifest.write(dir, "test_scores.csv", &scores)?,
        ];
        std::fs::create_dir_all(dir)?;
        let model = dir.join("model.tpnn");
        write_checkpoint(&self.classifier, &mut std::fs::File::create(&model)?)?;
        manifest.outputs.push(model.clone());
        paths.push(model);
        Ok(paths)
    }
}

/// Synthesizes a labeled dataset around the scenario TRPs, trains the
/// standard network and scores the held-out split.
pub fn run_classifier_study(
    scenario: &ScenarioConfig,
    cfg: &ClassifierStudyConfig,
    seed: u64,
) -> Result<ClassifierStudy> {
    let mut dcfg = DatasetConfig::around(scenario, cfg.samples, seed);
    dcfg.los_fraction = cfg.los_fraction;
    let data = generate_dataset(scenario, &dcfg)?;
    let nlos_share = data.iter().filter(|s| s.label == LinkState::Nlos).count() as f64 / data.len().max(1) as f64;
    let tcfg = TrainConfig { seed, ..cfg.train.clone() };
    let outcome = train(&data, cfg.split, &tcfg)?;
    let metrics = outcome.classifier.evaluate(&outcome.test)?;
    let xs: Vec<&[f64]> = outcome.test.iter().map(|s| s.sequence.as_slice()).collect();
    let scores = outcome.classifier.nlos_scores(&xs)?;
    Ok(ClassifierStudy {
        test_scores: scores.into_iter().zip(outcome.test.iter().map(|s| s.label)).collect(),
        classifier: outcome.classifier,
        log: outcome.log,
        metrics,
        dataset_size: data.len(),
        nlos_share,
    })
}

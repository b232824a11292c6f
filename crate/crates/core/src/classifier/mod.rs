//! LOS/NLOS link classification with a small 1-D CNN.
//!
//! The input is the magnitude of the received frame's time-domain
//! response (all K bins), standardized per position with training-set
//! statistics. The network, its optimizer and the training loop are
//! implemented here directly on dense `f64` buffers.

mod checkpoint;
mod dataset;
mod metrics;
pub mod network;
mod train;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use dataset::{
    generate_dataset, read_dataset_csv, split_dataset, write_dataset_csv, DatasetConfig, LabeledSample, Split,
};
pub use metrics::{roc_auc, Metrics};
pub use network::{Architecture, Params, RunningStats};
pub use train::{fit, learning_rate, train, Adam, EpochLog, TrainConfig, TrainOutcome, TrainingLog};

use rayon::prelude::*;

use crate::channel::LinkState;
use crate::error::{Error, Result};
use crate::signal::SubcarrierFrame;

/// A trained classifier with its frozen normalization state.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    pub arch: Architecture,
    pub params: Params,
    pub stats: RunningStats,
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
    pub bn_eps: f64,
    /// A link is NLOS when `p_NLOS` reaches this value.
    pub threshold: f64,
}

impl Classifier {
    pub fn standardize(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.arch.input_len {
            return Err(Error::Shape(format!(
                "input length {} != model input length {}",
                x.len(),
                self.arch.input_len
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("classifier input".into()));
        }
        Ok(x.iter()
            .zip(self.input_mean.iter().zip(&self.input_std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect())
    }

    /// `(p_LOS, p_NLOS)` for a raw feature sequence.
    pub fn predict_proba(&self, x: &[f64]) -> Result<(f64, f64)> {
        let z = self.standardize(x)?;
        let logits = network::forward_infer(&self.arch, &self.params, &self.stats, &z, self.bn_eps)?;
        let p = network::softmax(&logits);
        Ok((p[0], p[1]))
    }

    pub fn classify(&self, x: &[f64]) -> Result<LinkState> {
        let (_, p_nlos) = self.predict_proba(x)?;
        Ok(if p_nlos >= self.threshold { LinkState::Nlos } else { LinkState::Los })
    }

    /// Classifies a phase-corrected received frame.
    pub fn classify_frame(&self, frame: &SubcarrierFrame) -> Result<LinkState> {
        self.classify(&features(frame))
    }

    /// `p_NLOS` for each sequence, in parallel.
    pub fn nlos_scores(&self, xs: &[&[f64]]) -> Result<Vec<f64>> {
        xs.par_iter().map(|x| self.predict_proba(x).map(|p| p.1)).collect()
    }

    pub fn evaluate(&self, samples: &[LabeledSample]) -> Result<Metrics> {
        if samples.is_empty() {
            return Err(Error::Empty("test set".into()));
        }
        let xs: Vec<&[f64]> = samples.iter().map(|s| s.sequence.as_slice()).collect();
        let scores = self.nlos_scores(&xs)?;
        let labels: Vec<LinkState> = samples.iter().map(|s| s.label).collect();
        Ok(Metrics::from_scores(&scores, &labels, self.threshold))
    }
}

/// Classifier input for a frame: unitary time-domain magnitudes over all
/// K subcarriers.
pub fn features(frame: &SubcarrierFrame) -> Vec<f64> {
    frame.time_domain_magnitude()
}

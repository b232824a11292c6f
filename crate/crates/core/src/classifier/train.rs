use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::dataset::{split_dataset, LabeledSample, Split};
use super::network::{self, Architecture, Params, RunningStats};
use super::Classifier;
use crate::channel::LinkState;
use crate::error::{Error, Result};
use crate::rng::substream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr0: f64,
    /// Decoupled weight decay on weight matrices.
    pub l2: f64,
    pub lr_drop_factor: f64,
    /// Epochs between learning-rate drops.
    pub lr_drop_period: usize,
    /// Epochs without validation-loss improvement before stopping.
    pub early_stop_patience: usize,
    /// Smallest validation-loss decrease counted as an improvement.
    pub min_delta: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub bn_eps: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub threshold: f64,
    /// Training samples (a fixed prefix) used for BN population statistics
    /// after each epoch.
    pub bn_stat_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-3,
            l2: 1e-4,
            lr_drop_factor: 0.6,
            lr_drop_period: 5,
            early_stop_patience: 10,
            min_delta: 1e-9,
            batch_size: 32,
            max_epochs: 40,
            seed: 0,
            bn_eps: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            threshold: 0.5,
            bn_stat_samples: 2048,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr0 >= 0.0
            && self.l2 >= 0.0
            && self.lr_drop_factor > 0.0
            && self.lr_drop_period > 0
            && self.early_stop_patience > 0
            && self.batch_size > 0
            && self.max_epochs > 0
            && self.bn_eps > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.adam_eps > 0.0
            && (0.0..=1.0).contains(&self.threshold);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("{self:?}")))
        }
    }
}

/// Step schedule `lr0·factor^⌊epoch/period⌋` for a 0-based epoch.
pub fn learning_rate(cfg: &TrainConfig, epoch: usize) -> f64 {
    cfg.lr0 * cfg.lr_drop_factor.powi((epoch / cfg.lr_drop_period) as i32)
}

/// Adaptive-moment optimizer with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    pub fn new(sizes: &[usize], beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    /// One update of every group; `decay[g]` is the weight-decay rate of
    /// group `g`, applied as `θ -= lr·λ·θ` alongside the moment step.
    pub fn step(&mut self, params: &mut [&mut Vec<f64>], grads: &[&Vec<f64>], lr: f64, decay: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (gi, p) in params.iter_mut().enumerate() {
            let (m, v, g) = (&mut self.m[gi], &mut self.v[gi], grads[gi]);
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p[i] -= lr * (mhat / (vhat.sqrt() + self.eps) + decay[gi] * p[i]);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainingLog {
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "epoch,lr,train_loss,train_accuracy,val_loss,val_accuracy")?;
        for e in &self.epochs {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                e.epoch, e.lr, e.train_loss, e.train_accuracy, e.val_loss, e.val_accuracy
            )?;
        }
        Ok(())
    }
}

fn label_index(s: LinkState) -> usize {
    usize::from(s == LinkState::Nlos)
}

fn standardization(train: &[LabeledSample], len: usize) -> (Vec<f64>, Vec<f64>) {
    let n = train.len() as f64;
    let mut mean = vec![0.0; len];
    for s in train {
        for (m, v) in mean.iter_mut().zip(&s.sequence) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; len];
    for s in train {
        for i in 0..len {
            let d = s.sequence[i] - mean[i];
            var[i] += d * d;
        }
    }
    let std = var
        .iter()
        .map(|v| {
            let s = (v / n).sqrt();
            if s > 1e-12 {
                s
            } else {
                1.0
            }
        })
        .collect();
    (mean, std)
}

/// Mean cross-entropy and accuracy in inference mode.
fn evaluate_loss(c: &Classifier, xs: &[Vec<f64>], labels: &[usize]) -> Result<(f64, f64)> {
    use rayon::prelude::*;
    let per: Vec<(f64, bool)> = xs
        .par_iter()
        .zip(labels)
        .map(|(x, &y)| {
            let logits = network::forward_infer(&c.arch, &c.params, &c.stats, x, c.bn_eps)?;
            let p = network::softmax(&logits);
            Ok((-(p[y].max(1e-300)).ln(), usize::from(p[1] >= c.threshold) == y))
        })
        .collect::<Result<_>>()?;
    let n = per.len().max(1) as f64;
    let loss = per.iter().map(|p| p.0).sum::<f64>() / n;
    let acc = per.iter().filter(|p| p.1).count() as f64 / n;
    Ok((loss, acc))
}

/// Trains `arch` on `train`, early-stopping on `val`. Returns the
/// parameters of the best validation epoch.
pub fn fit(
    arch: Architecture,
    train: &[LabeledSample],
    val: &[LabeledSample],
    cfg: &TrainConfig,
) -> Result<(Classifier, TrainingLog)> {
    cfg.validate()?;
    arch.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Empty("training and validation sets must be nonempty".into()));
    }
    let has = |s: LinkState| train.iter().any(|x| x.label == s);
    if !has(LinkState::Los) || !has(LinkState::Nlos) {
        return Err(Error::SingleClass);
    }
    for s in train.iter().chain(val) {
        if s.sequence.len() != arch.input_len {
            return Err(Error::Shape(format!(
                "sample length {} != input length {}",
                s.sequence.len(),
                arch.input_len
            )));
        }
    }

    let (input_mean, input_std) = standardization(train, arch.input_len);
    let mut rng = substream(cfg.seed, 0xc1a5);
    let mut model = Classifier {
        arch,
        params: Params::init(&arch, &mut rng),
        stats: RunningStats::identity(&arch),
        input_mean,
        input_std,
        bn_eps: cfg.bn_eps,
        threshold: cfg.threshold,
    };
    let norm = |set: &[LabeledSample]| -> Result<Vec<Vec<f64>>> {
        set.iter().map(|s| model.standardize(&s.sequence)).collect()
    };
    let train_x = norm(train)?;
    let val_x = norm(val)?;
    let train_y: Vec<usize> = train.iter().map(|s| label_index(s.label)).collect();
    let val_y: Vec<usize> = val.iter().map(|s| label_index(s.label)).collect();

    let sizes: Vec<usize> = model.params.groups().iter().map(|g| g.len()).collect();
    let decay: Vec<f64> = (0..sizes.len())
        .map(|g| if Params::is_weight(g) { cfg.l2 } else { 0.0 })
        .collect();
    let mut adam = Adam::new(&sizes, cfg.beta1, cfg.beta2, cfg.adam_eps);
    let stat_inputs: Vec<&[f64]> =
        train_x.iter().take(cfg.bn_stat_samples.max(1)).map(|x| x.as_slice()).collect();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = TrainingLog::default();
    let mut best: Option<(f64, Params, RunningStats)> = None;
    let mut waited = 0;

    for epoch in 0..cfg.max_epochs {
        let lr = learning_rate(cfg, epoch);
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let inputs: Vec<&[f64]> = batch.iter().map(|&i| train_x[i].as_slice()).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| train_y[i]).collect();
            let res = network::forward_backward(&arch, &model.params, &inputs, &labels, cfg.bn_eps)?;
            loss_sum += res.loss * batch.len() as f64;
            for (b, &y) in labels.iter().enumerate() {
                correct += usize::from(usize::from(res.probs[2 * b + 1] >= cfg.threshold) == y);
            }
            let grads = res.grads.groups();
            adam.step(&mut model.params.groups_mut(), &grads, lr, &decay);
            if !model.params.all_finite() {
                return Err(Error::Diverged);
            }
        }
        model.stats = network::population_stats(&arch, &model.params, &stat_inputs, cfg.bn_eps);

        let (val_loss, val_accuracy) = evaluate_loss(&model, &val_x, &val_y)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged);
        }
        log.epochs.push(EpochLog {
            epoch: epoch + 1,
            lr,
            train_loss: loss_sum / train.len() as f64,
            train_accuracy: correct as f64 / train.len() as f64,
            val_loss,
            val_accuracy,
        });
        let improved = best.as_ref().is_none_or(|b| val_loss < b.0 - cfg.min_delta);
        if improved {
            best = Some((val_loss, model.params.clone(), model.stats.clone()));
            log.best_epoch = epoch + 1;
            waited = 0;
        } else {
            waited += 1;
            if waited >= cfg.early_stop_patience {
                log.stopped_early = true;
                break;
            }
        }
    }
    let (_, params, stats) = best.expect("at least one epoch ran");
    model.params = params;
    model.stats = stats;
    Ok((model, log))
}

/// Result of [`train`]: the model, its log and the held-out test set.
pub struct TrainOutcome {
    pub classifier: Classifier,
    pub log: TrainingLog,
    pub test: Vec<LabeledSample>,
}

/// Splits `dataset`, fits the standard architecture and keeps the test
/// part for evaluation.
pub fn train(dataset: &[LabeledSample], split: Split, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let len = dataset
        .first()
        .ok_or_else(|| Error::Empty("dataset".into()))?
        .sequence
        .len();
    let has = |s: LinkState| dataset.iter().any(|x| x.label == s);
    if !has(LinkState::Los) || !has(LinkState::Nlos) {
        return Err(Error::SingleClass);
    }
    let (tr, va, te) = split_dataset(dataset, split, cfg.seed)?;
    let (classifier, log) = fit(Architecture::standard(len), &tr, &va, cfg)?;
    Ok(TrainOutcome { classifier, log, test: te })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn scalar_quadratic_converges() {
        let mut adam = Adam::new(&[1], 0.9, 0.999, 1e-8);
        let mut x = vec![5.0];
        for _ in 0..200 {
            let g = vec![2.0 * (x[0] - 1.5)];
            adam.step(&mut [&mut x], &[&g], 0.1, &[0.0]);
        }
        assert!((x[0] - 1.5).abs() < 1e-3, "{}", x[0]);
    }

    #[test]
    fn zero_gradient_only_decays() {
        let mut adam = Adam::new(&[2, 1], 0.9, 0.999, 1e-8);
        let mut w = vec![1.0, -2.0];
        let mut b = vec![0.5];
        let zeros = (vec![0.0; 2], vec![0.0]);
        adam.step(&mut [&mut w, &mut b], &[&zeros.0, &zeros.1], 0.01, &[1e-4, 0.0]);
        assert_eq!(w, vec![1.0 - 0.01 * 1e-4, -2.0 + 0.01 * 2e-4]);
        assert_eq!(b, vec![0.5]);
    }

    #[test]
    fn lr_schedule() {
        let c = TrainConfig::default();
        assert_eq!(learning_rate(&c, 0), 0.001);
        assert_eq!(learning_rate(&c, 4), 0.001);
        assert!((learning_rate(&c, 5) - 0.0006).abs() < 1e-15);
        assert!((learning_rate(&c, 10) - 0.001 * 0.36).abs() < 1e-15);
    }

    /// Class 1 sequences are shifted up by `shift`.
    fn toy(n: usize, len: usize, shift: f64, seed: u64) -> Vec<LabeledSample> {
        let mut rng = substream(seed, 0);
        (0..n)
            .map(|i| {
                let nlos = i % 2 == 1;
                LabeledSample {
                    sequence: (0..len)
                        .map(|_| rng.sample::<f64, _>(StandardNormal) * 0.3 + if nlos { shift } else { 0.0 })
                        .collect(),
                    label: if nlos { LinkState::Nlos } else { LinkState::Los },
                    tau_diff: 0.0,
                }
            })
            .collect()
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig { batch_size: 16, max_epochs: 20, lr0: 0.01, ..TrainConfig::default() }
    }

    #[test]
    fn separable_toy_set() {
        let arch = Architecture::tiny();
        let (tr, va) = (toy(200, 32, 2.0, 1), toy(60, 32, 2.0, 2));
        let (_, log) = fit(arch, &tr, &va, &small_cfg()).unwrap();
        assert!(log.epochs.len() <= 20);
        assert_eq!(log.epochs[log.best_epoch - 1].val_accuracy, 1.0);
    }

    #[test]
    fn frozen_lr_stops_after_patience() {
        let arch = Architecture::tiny();
        let (tr, va) = (toy(64, 32, 1.0, 3), toy(32, 32, 1.0, 4));
        let cfg = TrainConfig { lr0: 0.0, max_epochs: 50, ..small_cfg() };
        let (_, log) = fit(arch, &tr, &va, &cfg).unwrap();
        assert_eq!(log.epochs.len(), 11);
        assert!(log.stopped_early);
        assert_eq!(log.best_epoch, 1);
    }

    #[test]
    fn deterministic_per_seed() {
        let arch = Architecture::tiny();
        let (tr, va) = (toy(64, 32, 1.0, 5), toy(32, 32, 1.0, 6));
        let cfg = TrainConfig { max_epochs: 3, ..small_cfg() };
        let (a, la) = fit(arch, &tr, &va, &cfg).unwrap();
        let (b, lb) = fit(arch, &tr, &va, &cfg).unwrap();
        assert_eq!(la, lb);
        assert_eq!(a, b);
    }

    #[test]
    fn single_class_rejected() {
        let mut tr = toy(10, 32, 1.0, 7);
        tr.iter_mut().for_each(|s| s.label = LinkState::Los);
        assert!(matches!(fit(Architecture::tiny(), &tr, &tr, &small_cfg()), Err(Error::SingleClass)));
        assert!(matches!(train(&tr, Split::default(), &small_cfg()), Err(Error::SingleClass)));
    }

    #[test]
    fn overfits_one_batch() {
        let arch = Architecture::tiny();
        let data = toy(16, 32, 0.3, 8);
        let xs: Vec<&[f64]> = data.iter().map(|s| s.sequence.as_slice()).collect();
        let ys: Vec<usize> = data.iter().map(|s| label_index(s.label)).collect();
        let mut p = Params::init(&arch, &mut substream(9, 0));
        let sizes: Vec<usize> = p.groups().iter().map(|g| g.len()).collect();
        let mut adam = Adam::new(&sizes, 0.9, 0.999, 1e-8);
        let first = network::forward_backward(&arch, &p, &xs, &ys, 1e-5).unwrap().loss;
        let mut last = first;
        for _ in 0..300 {
            let r = network::forward_backward(&arch, &p, &xs, &ys, 1e-5).unwrap();
            last = r.loss;
            let g = r.grads.groups();
            adam.step(&mut p.groups_mut(), &g, 0.01, &[1e-4; 14]);
        }
        assert!(last < 0.1 * first, "{first} -> {last}");
    }
}

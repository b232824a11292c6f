use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{compute_pdp, label_link, observe_link, LinkState, LABEL_THRESHOLD};
use crate::error::{Error, Result};
use crate::rng::substream;
use crate::scenario::{Region, ScenarioConfig};
use crate::signal::generate_reference_frame;
use crate::Vec3;

/// One classifier example: time-domain magnitudes and the delay-rule label.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub sequence: Vec<f64>,
    pub label: LinkState,
    /// `|τ_est - τ_true|`, seconds.
    pub tau_diff: f64,
}

/// Train/validation/test fractions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for Split {
    fn default() -> Self {
        Self { train: 0.70, val: 0.15, test: 0.15 }
    }
}

/// Shuffles with `seed` and cuts into train/val/test by fraction.
pub fn split_dataset(
    data: &[LabeledSample],
    split: Split,
    seed: u64,
) -> Result<(Vec<LabeledSample>, Vec<LabeledSample>, Vec<LabeledSample>)> {
    let total = split.train + split.val + split.test;
    if !(split.train > 0.0 && split.val > 0.0 && split.test >= 0.0) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("split fractions {split:?} must be positive and sum to 1")));
    }
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut substream(seed, 0x5b17));
    let n_train = (split.train * data.len() as f64).round() as usize;
    let n_val = ((split.val * data.len() as f64).round() as usize).min(data.len() - n_train);
    let pick = |r: &[usize]| r.iter().map(|&i| data[i].clone()).collect::<Vec<_>>();
    Ok((
        pick(&idx[..n_train]),
        pick(&idx[n_train..n_train + n_val]),
        pick(&idx[n_train + n_val..]),
    ))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub samples: usize,
    /// Probability of forcing a LOS channel draw; the rest are NLOS draws.
    /// Labels still come from the delay rule.
    pub los_fraction: f64,
    /// UE positions are drawn uniformly here at the scenario UE height.
    pub region: Region,
    /// Delay-rule threshold, seconds.
    pub label_threshold: f64,
    pub seed: u64,
}

impl DatasetConfig {
    /// Defaults around the scenario's TRPs: 50 m margin on each side.
    pub fn around(scenario: &ScenarioConfig, samples: usize, seed: u64) -> Self {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for t in &scenario.trp_list {
            for a in 0..2 {
                lo[a] = lo[a].min(t.position[a]);
                hi[a] = hi[a].max(t.position[a]);
            }
        }
        Self {
            samples,
            los_fraction: 0.5,
            region: Region { min: [lo[0] - 50.0, lo[1] - 50.0], max: [hi[0] + 50.0, hi[1] + 50.0] },
            label_threshold: LABEL_THRESHOLD,
            seed,
        }
    }
}

/// Synthesizes labeled examples. Sample `i` uses its own random substream,
/// so the output does not depend on thread count.
pub fn generate_dataset(scenario: &ScenarioConfig, cfg: &DatasetConfig) -> Result<Vec<LabeledSample>> {
    scenario.validate()?;
    if scenario.trp_list.is_empty() {
        return Err(Error::InvalidConfig("no TRPs".into()));
    }
    let reference = generate_reference_frame(scenario, cfg.seed);
    (0..cfg.samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(cfg.seed, 1 + i as u64);
            let trp = &scenario.trp_list[rng.random_range(0..scenario.trp_list.len())];
            let state = if rng.random::<f64>() < cfg.los_fraction { LinkState::Los } else { LinkState::Nlos };
            let ue = loop {
                let p = Vec3::new(
                    rng.random_range(cfg.region.min[0]..=cfg.region.max[0]),
                    rng.random_range(cfg.region.min[1]..=cfg.region.max[1]),
                    scenario.ue_init.z,
                );
                if p != trp.position {
                    break p;
                }
            };
            let link = observe_link(
                &reference,
                trp.position,
                ue,
                &scenario.noise,
                scenario.carrier_frequency,
                Some(state),
                1,
                &mut rng,
            )?;
            let frame = &link.symbols[0];
            let label = label_link(&link.channel, &compute_pdp(frame), cfg.label_threshold)?;
            Ok(LabeledSample {
                sequence: super::features(frame),
                label: label.state,
                tau_diff: label.tau_diff,
            })
        })
        .collect()
}

/// One row per sample: `label,tau_diff_ns,K,mag_0,...,mag_{K-1}`.
pub fn write_dataset_csv<W: Write>(data: &[LabeledSample], out: &mut W) -> Result<()> {
    for s in data {
        write!(out, "{},{},{}", s.label.as_str(), s.tau_diff * 1e9, s.sequence.len())?;
        for v in &s.sequence {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn read_dataset_csv<R: BufRead>(input: R) -> Result<Vec<LabeledSample>> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |what: &str| Error::Parse(format!("dataset line {}: {what}", n + 1));
        let mut it = line.split(',');
        let label: LinkState = it.next().ok_or_else(|| bad("missing label"))?.parse()?;
        let tau_ns: f64 = it.next().and_then(|v| v.trim().parse().ok()).ok_or_else(|| bad("bad tau_diff"))?;
        let k: usize = it.next().and_then(|v| v.trim().parse().ok()).ok_or_else(|| bad("bad K"))?;
        let sequence = it
            .map(|v| v.trim().parse::<f64>().map_err(|_| bad("bad magnitude")))
            .collect::<Result<Vec<_>>>()?;
        if sequence.len() != k {
            return Err(bad(&format!("expected {k} magnitudes, found {}", sequence.len())));
        }
        out.push(LabeledSample { sequence, label, tau_diff: tau_ns * 1e-9 });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ScenarioConfig {
        ScenarioConfig { num_subcarriers: 240, ..ScenarioConfig::umi_compact() }
    }

    #[test]
    fn generation_is_deterministic_and_labeled() {
        let sc = cfg();
        let dc = DatasetConfig::around(&sc, 200, 3);
        let a = generate_dataset(&sc, &dc).unwrap();
        let b = generate_dataset(&sc, &dc).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|s| s.sequence.len() == 240));
        let nlos = a.iter().filter(|s| s.label == LinkState::Nlos).count();
        assert!(nlos > 40 && nlos < 160, "{nlos}");
        for s in &a {
            assert_eq!(s.label == LinkState::Nlos, s.tau_diff > dc.label_threshold);
        }
    }

    #[test]
    fn csv_round_trip() {
        let sc = cfg();
        let data = generate_dataset(&sc, &DatasetConfig::around(&sc, 10, 1)).unwrap();
        let mut buf = Vec::new();
        write_dataset_csv(&data, &mut buf).unwrap();
        let back = read_dataset_csv(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 10);
        for (a, b) in data.iter().zip(&back) {
            assert_eq!(a.label, b.label);
            assert_eq!(a.sequence, b.sequence);
            assert!((a.tau_diff - b.tau_diff).abs() < 1e-18);
        }
        assert!(read_dataset_csv("LOS,1.0,3,0.1,0.2\n".as_bytes()).is_err());
    }

    #[test]
    fn split_sizes() {
        let data: Vec<LabeledSample> = (0..100)
            .map(|i| LabeledSample { sequence: vec![i as f64], label: LinkState::Los, tau_diff: 0.0 })
            .collect();
        let (a, b, c) = split_dataset(&data, Split::default(), 0).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (70, 15, 15));
        let mut all: Vec<f64> = a.iter().chain(&b).chain(&c).map(|s| s.sequence[0]).collect();
        all.sort_by(f64::total_cmp);
        assert_eq!(all, (0..100).map(f64::from).collect::<Vec<_>>());
        assert!(split_dataset(&data, Split { train: 0.5, val: 0.1, test: 0.1 }, 0).is_err());
    }
}

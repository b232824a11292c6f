use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Manifest;
use crate::channel::{observe_link, LinkState};
use crate::error::{Error, Result};
use crate::ranging::{default_schedule, range_symbols};
use crate::rng::{stream_id, substream};
use crate::scenario::ScenarioConfig;
use crate::signal::generate_reference_frame;

/// Monte-Carlo ranging of the scenario UE against every TRP.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UmiRangingConfig {
    pub iterations: usize,
    /// Force every link into this state instead of drawing it.
    pub force_state: Option<LinkState>,
    pub symbols: usize,
    /// Histogram bin width, meters.
    pub bin_width: f64,
    /// A range is high-accuracy when its error is at most this, meters.
    pub high_accuracy: f64,
    pub max_range: f64,
    /// Spacing cascade; derived from the grid when absent.
    pub schedule: Option<Vec<usize>>,
}

impl Default for UmiRangingConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            force_state: None,
            symbols: 1,
            bin_width: 0.1,
            high_accuracy: 0.1,
            max_range: 500.0,
            schedule: None,
        }
    }
}

/// Fixed-width histogram starting at `start`.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub start: f64,
    pub width: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Bins aligned to multiples of `width`.
    pub fn build(values: &[f64], width: f64) -> Self {
        let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        let Some(lo) = finite.iter().copied().reduce(f64::min) else {
            return Self { start: 0.0, width, counts: Vec::new() };
        };
        let hi = finite.iter().copied().fold(lo, f64::max);
        let first = (lo / width).floor() as i64;
        let n = ((hi / width).floor() as i64 - first + 1) as usize;
        let mut counts = vec![0; n];
        for v in &finite {
            counts[((v / width).floor() as i64 - first) as usize] += 1;
        }
        Self { start: first as f64 * width, width, counts }
    }

    pub fn bin_of(&self, v: f64) -> Option<usize> {
        let i = ((v - self.start) / self.width).floor();
        (i >= 0.0 && (i as usize) < self.counts.len()).then_some(i as usize)
    }

    /// Index of the fullest bin; the lowest on ties.
    pub fn mode(&self) -> Option<usize> {
        let max = *self.counts.iter().max()?;
        (max > 0).then(|| self.counts.iter().position(|&c| c == max).unwrap())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrpRanging {
    pub trp_id: String,
    pub true_distance: f64,
    /// `(estimated distance, link was LOS)` per successful iteration.
    pub ranges: Vec<(f64, bool)>,
    pub failures: usize,
    pub histogram: Histogram,
    /// Mean of the ranges falling in the fullest histogram bin.
    pub peak: Option<f64>,
    /// Share of iterations whose range error is within the high-accuracy bound.
    pub high_accuracy_fraction: f64,
    /// Share of the high-accuracy ranges that came from LOS links.
    pub los_share_of_high_accuracy: f64,
    /// Share of iterations drawn LOS.
    pub los_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct UmiRangingReport {
    pub iterations: usize,
    pub trps: Vec<TrpRanging>,
}

impl UmiRangingReport {
    pub fn is_empty(&self) -> bool {
        self.iterations == 0
    }

    pub fn summary(&self) -> crate::eval::Report {
        let mut r = crate::eval::Report::default();
        r.add("iterations", self.iterations);
        for t in &self.trps {
            r.num(format!("{}_true_m", t.trp_id), t.true_distance);
            r.num(format!("{}_peak_m", t.trp_id), t.peak.unwrap_or(f64::NAN));
            r.num(format!("{}_high_accuracy_fraction", t.trp_id), t.high_accuracy_fraction);
            r.num(format!("{}_los_fraction", t.trp_id), t.los_fraction);
            r.num(format!("{}_los_share_of_high_accuracy", t.trp_id), t.los_share_of_high_accuracy);
            r.add(format!("{}_failures", t.trp_id), t.failures);
        }
        r
    }

    /// Writes `ranges.csv`, one `histogram_<trp>.csv` per TRP and
    /// `summary.txt`.
    pub fn write_outputs(&self, manifest: &mut Manifest, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut paths = Vec::new();
        let mut ranges = String::from("trp_id,state,d_m,error_m\n");
        for t in &self.trps {
            for (d, los) in &t.ranges {
                let state = if *los { "LOS" } else { "NLOS" };
                let _ = writeln!(ranges, "{},{state},{d:?},{:?}", t.trp_id, d - t.true_distance);
            }
            let mut h = String::from("bin_lo_m,bin_hi_m,count\n");
            for (i, c) in t.histogram.counts.iter().enumerate() {
                let lo = t.histogram.start + i as f64 * t.histogram.width;
                let _ = writeln!(h, "{lo:?},{:?},{c}", lo + t.histogram.width);
            }
            paths.push(manifest.write(dir, &format!("histogram_{}.csv", t.trp_id), &h)?);
        }
        paths.push(manifest.write(dir, "ranges.csv", &ranges)?);
        paths.push(manifest.write(dir, "summary.txt", &self.summary().to_kv())?);
        Ok(paths)
    }
}

/// Ranges the scenario UE against each TRP `iterations` times. Link state
/// is drawn from the scenario's LOS probability model unless forced.
pub fn run_umi_ranging(scenario: &ScenarioConfig, cfg: &UmiRangingConfig, seed: u64) -> Result<UmiRangingReport> {
    scenario.validate()?;
    if !(cfg.bin_width > 0.0) {
        return Err(Error::InvalidArgument("bin_width must be positive".into()));
    }
    if cfg.iterations == 0 {
        return Ok(UmiRangingReport::default());
    }
    let schedule = cfg
        .schedule
        .clone()
        .unwrap_or_else(|| default_schedule(scenario.num_subcarriers, scenario.comb_size));
    let reference = generate_reference_frame(scenario, seed);
    let ue = scenario.ue_init;
    let trials: Vec<Vec<Option<(f64, bool)>>> = (0..cfg.iterations)
        .into_par_iter()
        .map(|i| {
            scenario
                .trp_list
                .iter()
                .enumerate()
                .map(|(j, trp)| {
                    let mut rng = substream(seed, stream_id(i as u64 + 1, j as u64));
                    let link = observe_link(
                        &reference,
                        trp.position,
                        ue,
                        &scenario.noise,
                        scenario.carrier_frequency,
                        cfg.force_state,
                        cfg.symbols,
                        &mut rng,
                    )
                    .ok()?;
                    let d = range_symbols(&link.symbols, &schedule, cfg.max_range).ok()?;
                    Some((d, link.channel.is_los))
                })
                .collect()
        })
        .collect();

    let trps = scenario
        .trp_list
        .iter()
        .enumerate()
        .map(|(j, trp)| {
            let truth = (trp.position - ue).norm();
            let ranges: Vec<(f64, bool)> = trials.iter().filter_map(|t| t[j]).collect();
            let failures = cfg.iterations - ranges.len();
            let values: Vec<f64> = ranges.iter().map(|r| r.0).collect();
            let histogram = Histogram::build(&values, cfg.bin_width);
            let peak = histogram.mode().map(|m| {
                let inside: Vec<f64> = values.iter().copied().filter(|v| histogram.bin_of(*v) == Some(m)).collect();
                inside.iter().sum::<f64>() / inside.len() as f64
            });
            let good: Vec<bool> = ranges
                .iter()
                .filter(|r| (r.0 - truth).abs() <= cfg.high_accuracy)
                .map(|r| r.1)
                .collect();
            let n = cfg.iterations as f64;
            TrpRanging {
                trp_id: trp.id.clone(),
                true_distance: truth,
                failures,
                peak,
                high_accuracy_fraction: good.len() as f64 / n,
                los_share_of_high_accuracy: if good.is_empty() {
                    0.0
                } else {
                    good.iter().filter(|l| **l).count() as f64 / good.len() as f64
                },
                los_fraction: ranges.iter().filter(|r| r.1).count() as f64 / n,
                histogram,
                ranges,
            }
        })
        .collect();
    Ok(UmiRangingReport { iterations: cfg.iterations, trps })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_bins_align_to_width() {
        let h = Histogram::build(&[23.92, 23.95, 24.01, 37.04], 0.1);
        assert!((h.start - 23.9).abs() < 1e-9);
        assert_eq!(h.counts.len(), 132);
        assert_eq!(h.counts[0], 2);
        assert_eq!(h.counts[1], 1);
        assert_eq!(h.counts.iter().sum::<usize>(), 4);
        assert_eq!(h.mode(), Some(0));
        assert_eq!(h.bin_of(37.04), Some(131));
        assert_eq!(h.bin_of(10.0), None);
    }

    #[test]
    fn empty_histogram_has_no_mode() {
        let h = Histogram::build(&[], 0.1);
        assert!(h.counts.is_empty());
        assert_eq!(h.mode(), None);
    }
}

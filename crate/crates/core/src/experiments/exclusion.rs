use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{cdf_text, Manifest};
use crate::channel::{observe_link, LosProbabilityModel};
use crate::classifier::Classifier;
use crate::error::{Error, Result};
use crate::positioning::{
    error_statistics, localize_epoch, write_fix_row, ErrorStatistics, LinkFilter, LinkObservation,
    LocalizerConfig, PositionFix, SolverConfig, FIX_LOG_HEADER, PERCENTILE_LEVELS,
};
use crate::ranging::default_schedule;
use crate::rng::{stream_id, substream};
use crate::scenario::{Region, ScenarioConfig, TrpSite};
use crate::signal::generate_reference_frame;
use crate::Vec3;

/// Multilateration Monte-Carlo comparing link screening strategies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExclusionConfig {
    pub epochs: usize,
    /// Anchors; the scenario TRPs when empty.
    pub trps: Vec<TrpSite>,
    /// UE positions are uniform here at the scenario UE height; the TRP
    /// bounding box when absent.
    pub region: Option<Region>,
    /// Per-link LOS probability; the scenario's model when absent.
    pub los_probability: Option<f64>,
    pub symbols: usize,
    pub solver: SolverConfig,
    pub max_range: f64,
    pub schedule: Option<Vec<usize>>,
}

impl Default for ExclusionConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            trps: vec![
                TrpSite::new("TRP-1", 100.0, 100.0, 10.0),
                TrpSite::new("TRP-2", 150.0, 90.0, 10.0),
                TrpSite::new("TRP-3", 140.0, 150.0, 10.0),
                TrpSite::new("TRP-4", 90.0, 160.0, 10.0),
                TrpSite::new("TRP-5", 190.0, 130.0, 10.0),
            ],
            region: None,
            los_probability: Some(0.6),
            symbols: 1,
            // Blocks are compared on raw geometry: no residual gate.
            solver: SolverConfig { residual_gate: f64::INFINITY, ..SolverConfig::default() },
            max_range: 400.0,
            schedule: None,
        }
    }
}

/// One screening strategy's fixes and their error statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub name: &'static str,
    pub fixes: Vec<PositionFix>,
    /// `None` when no epoch produced a valid fix.
    pub stats: Option<ErrorStatistics>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExclusionReport {
    pub truth: Vec<Vec3>,
    /// Links drawn LOS per epoch.
    pub los_links: Vec<usize>,
    /// Solved from the LOS links alone.
    pub los_only: Block,
    /// Every link offered, NLOS ones dropped by the ground-truth filter.
    pub oracle: Block,
    /// Every link used.
    pub mixed: Block,
    /// Links screened by the classifier, when one was given.
    pub dl: Option<Block>,
}

impl ExclusionReport {
    pub fn blocks(&self) -> Vec<&Block> {
        let mut v = vec![&self.los_only, &self.oracle, &self.mixed];
        v.extend(self.dl.as_ref());
        v
    }

    /// One row per block: valid fraction and 2D/3D percentiles.
    pub fn table(&self) -> String {
        let mut s = String::from("block,valid,total");
        for l in PERCENTILE_LEVELS {
            let _ = write!(s, ",p{l}_2d_m");
        }
        for l in PERCENTILE_LEVELS {
            let _ = write!(s, ",p{l}_3d_m");
        }
        s.push('\n');
        for b in self.blocks() {
            let valid = b.fixes.iter().filter(|f| f.valid).count();
            let _ = write!(s, "{},{valid},{}", b.name, b.fixes.len());
            for l in PERCENTILE_LEVELS {
                let v = b.stats.as_ref().and_then(|st| st.p2d(l)).unwrap_or(f64::NAN);
                let _ = write!(s, ",{v:?}");
            }
            for l in PERCENTILE_LEVELS {
                let v = b.stats.as_ref().and_then(|st| st.p3d(l)).unwrap_or(f64::NAN);
                let _ = write!(s, ",{v:?}");
            }
            s.push('\n');
        }
        s
    }

    /// Writes `table.csv` and per block a fix log and 2D/3D CDFs.
    pub fn write_outputs(&self, manifest: &mut Manifest, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut paths = vec![manifest.write(dir, "table.csv", &self.table())?];
        for b in self.blocks() {
            let mut log: Vec<u8> = format!("{FIX_LOG_HEADER},true_x,true_y,true_z\n").into_bytes();
            for (e, (f, t)) in b.fixes.iter().zip(&self.truth).enumerate() {
                let mut row = Vec::new();
                write_fix_row(&mut row, e as f64, f)?;
                row.pop();
                log.extend(row);
                writeln!(log, ",{:?},{:?},{:?}", t.x, t.y, t.z)?;
            }
            let log = String::from_utf8(log).map_err(|e| Error::Parse(e.to_string()))?;
            paths.push(manifest.write(dir, &format!("fixes_{}.csv", b.name), &log)?);
            if let Some(st) = &b.stats {
                paths.push(manifest.write(dir, &format!("cdf2d_{}.csv", b.name), &cdf_text(&st.cdf_2d))?);
                paths.push(manifest.write(dir, &format!("cdf3d_{}.csv", b.name), &cdf_text(&st.cdf_3d))?);
            }
        }
        Ok(paths)
    }
}

fn bounding_region(trps: &[TrpSite]) -> Result<Region> {
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for t in trps {
        for a in 0..2 {
            lo[a] = lo[a].min(t.position[a]);
            hi[a] = hi[a].max(t.position[a]);
        }
    }
    Region::new(lo, hi)
}

fn block(name: &'static str, fixes: Vec<PositionFix>, truth: &[Vec3]) -> Block {
    let stats = error_statistics(&fixes, truth).ok();
    Block { name, fixes, stats }
}

/// Localizes `epochs` random UE positions with every link screening
/// strategy on the same simulated links.
pub fn run_exclusion_study(
    scenario: &ScenarioConfig,
    cfg: &ExclusionConfig,
    classifier: Option<&Classifier>,
    seed: u64,
) -> Result<ExclusionReport> {
    scenario.validate()?;
    let trps = if cfg.trps.is_empty() { scenario.trp_list.clone() } else { cfg.trps.clone() };
    if let Some(c) = classifier {
        if c.arch.input_len != scenario.num_subcarriers {
            return Err(Error::Shape(format!(
                "classifier expects {} subcarriers, scenario has {}",
                c.arch.input_len, scenario.num_subcarriers
            )));
        }
    }
    let region = match cfg.region {
        Some(r) => r,
        None => bounding_region(&trps)?,
    };
    let mut noise = scenario.noise.clone();
    if let Some(p) = cfg.los_probability {
        noise.los_probability_model = LosProbabilityModel::Constant { probability: p };
    }
    let loc = LocalizerConfig {
        solver: cfg.solver.clone(),
        schedule: cfg
            .schedule
            .clone()
            .unwrap_or_else(|| default_schedule(scenario.num_subcarriers, scenario.comb_size)),
        max_range: cfg.max_range,
    };
    let reference = generate_reference_frame(scenario, seed);

    struct Epoch {
        ue: Vec3,
        n_los: usize,
        los_only: PositionFix,
        oracle: PositionFix,
        mixed: PositionFix,
        dl: Option<PositionFix>,
    }
    let epochs: Vec<Epoch> = (0..cfg.epochs)
        .into_par_iter()
        .map(|e| {
            let major = e as u64 + 1;
            let mut rng = substream(seed, stream_id(major, 0));
            let ue = Vec3::new(
                rng.random_range(region.min[0]..=region.max[0]),
                rng.random_range(region.min[1]..=region.max[1]),
                scenario.ue_init.z,
            );
            let mut links = Vec::new();
            for (j, trp) in trps.iter().enumerate() {
                let mut rng = substream(seed, stream_id(major, j as u64 + 1));
                let link = observe_link(
                    &reference,
                    trp.position,
                    ue,
                    &noise,
                    scenario.carrier_frequency,
                    None,
                    cfg.symbols,
                    &mut rng,
                )?;
                links.push(LinkObservation {
                    trp_id: trp.id.clone(),
                    symbols: link.symbols,
                    truth_los: Some(link.channel.is_los),
                });
            }
            let los: Vec<LinkObservation> = links.iter().filter(|l| l.truth_los == Some(true)).cloned().collect();
            Ok(Epoch {
                ue,
                n_los: los.len(),
                los_only: localize_epoch(&los, &trps, LinkFilter::None, &loc, None),
                oracle: localize_epoch(&links, &trps, LinkFilter::Oracle, &loc, None),
                mixed: localize_epoch(&links, &trps, LinkFilter::None, &loc, None),
                dl: classifier.map(|c| localize_epoch(&links, &trps, LinkFilter::Model(c), &loc, None)),
            })
        })
        .collect::<Result<_>>()?;

    let truth: Vec<Vec3> = epochs.iter().map(|e| e.ue).collect();
    let los_links = epochs.iter().map(|e| e.n_los).collect();
    let (mut los_only, mut oracle, mut mixed, mut dl) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for e in epochs {
        los_only.push(e.los_only);
        oracle.push(e.oracle);
        mixed.push(e.mixed);
        dl.extend(e.dl);
    }
    Ok(ExclusionReport {
        los_only: block("los_only", los_only, &truth),
        oracle: block("oracle", oracle, &truth),
        mixed: block("mixed", mixed, &truth),
        dl: classifier.map(|_| block("dl", dl, &truth)),
        truth,
        los_links,
    })
}

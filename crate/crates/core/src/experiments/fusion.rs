use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::Matrix3;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::Manifest;
use crate::channel::{observe_link, LinkState};
use crate::error::{Error, Result};
use crate::eval::{ate, rpe, Pose, TrajectoryRecord};
use crate::fusion::sim::{
    add_imu_noise, imu_from_truth, sample_truth, subsample, synth_vo_stream, truth_record, LoopTrack,
};
use crate::fusion::{
    reanchor_vo, run_filter, Cov9, FilterConfig, ImuSample, MeasurementSource, NavState, PositionMeasurement,
};
use crate::positioning::{
    localize_epoch, write_fix_row, LinkFilter, LinkObservation, LocalizerConfig, PositionFix, SolverConfig,
    FIX_LOG_HEADER,
};
use crate::ranging::default_schedule;
use crate::rng::{stream_id, substream};
use crate::scenario::{los_visible, Aabb, ObstacleMap, ScenarioConfig, TrpSite};
use crate::signal::generate_reference_frame;
use crate::Vec3;

/// Synthetic drive with IMU, visual odometry and carrier-phase fixes that
/// drop out wherever fewer than three TRPs are visible.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionStudyConfig {
    pub track: LoopTrack,
    /// seconds
    pub duration: f64,
    /// Hz
    pub imu_rate: f64,
    pub vo_rate: f64,
    pub cpp_rate: f64,
    /// True IMU noise per sample; the filter assumes `filter`.
    pub imu_sigma_acc: f64,
    pub imu_sigma_gyr: f64,
    pub filter: FilterConfig,
    /// VO bias growth, meters per meter travelled.
    pub vo_drift: f64,
    /// True VO white noise std, meters.
    pub vo_noise: f64,
    /// VO std reported to the filter, meters.
    pub vo_sigma: f64,
    /// CPP std reported to the filter, meters.
    pub cpp_sigma: f64,
    /// When set, CPP fixes are truth plus white noise of this std instead
    /// of running the ranging pipeline; availability is still map-gated.
    pub cpp_synthetic_noise: Option<f64>,
    /// Re-anchor VO at each CPP fix in the fused run.
    pub reanchor_vo: bool,
    pub trps: Vec<TrpSite>,
    pub obstacles: ObstacleMap,
    pub solver: SolverConfig,
    pub max_range: f64,
    pub symbols: usize,
    /// RPE interval, in VO-rate samples.
    pub rpe_delta: usize,
    /// Initial error std for position (m), velocity (m/s), attitude (rad).
    pub init_sigma: [f64; 3],
}

impl Default for FusionStudyConfig {
    fn default() -> Self {
        Self {
            track: LoopTrack { center: Vec3::new(0.0, 0.0, 1.5), straight: 160.0, radius: 30.0, speed: 8.0 },
            duration: 120.0,
            imu_rate: 100.0,
            vo_rate: 10.0,
            cpp_rate: 1.0,
            imu_sigma_acc: 0.05,
            imu_sigma_gyr: 1e-3,
            filter: FilterConfig::default(),
            vo_drift: 0.02,
            vo_noise: 0.05,
            vo_sigma: 0.1,
            cpp_sigma: 0.05,
            cpp_synthetic_noise: None,
            reanchor_vo: true,
            trps: vec![
                TrpSite::new("TRP-1", -100.0, -60.0, 10.0),
                TrpSite::new("TRP-2", 0.0, -60.0, 10.0),
                TrpSite::new("TRP-3", 100.0, -60.0, 10.0),
                TrpSite::new("TRP-4", -100.0, 60.0, 10.0),
                TrpSite::new("TRP-5", 0.0, 60.0, 10.0),
                TrpSite::new("TRP-6", 100.0, 60.0, 10.0),
            ],
            obstacles: default_fusion_map(),
            solver: SolverConfig::default(),
            max_range: 400.0,
            symbols: 1,
            rpe_delta: 10,
            init_sigma: [0.1, 0.1, 0.01],
        }
    }
}

/// Buildings around the default loop: a block inside the loop hides the
/// far side, and two street-side blocks shade the west half of the north
/// straight and the east half of the south straight. Along the default
/// track roughly 40% of the 1 Hz epochs see three or more TRPs.
pub fn default_fusion_map() -> ObstacleMap {
    let b = |x0: f64, y0: f64, x1: f64, y1: f64, h: f64| {
        Aabb::new(Vec3::new(x0, y0, 0.0), Vec3::new(x1, y1, h)).expect("well-formed box")
    };
    ObstacleMap::new(vec![
        b(-40.0, -15.0, 40.0, 15.0, 25.0),
        b(-70.0, 38.0, -20.0, 48.0, 20.0),
        b(20.0, -48.0, 70.0, -38.0, 20.0),
    ])
}

/// One row of the comparison table.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionRow {
    pub name: &'static str,
    pub ate: f64,
    pub rpe_trans: f64,
    pub rpe_rot_deg: f64,
}

pub struct FusionStudy {
    pub rows: Vec<FusionRow>,
    /// Share of CPP epochs that produced a fix.
    pub cpp_valid_fraction: f64,
    pub truth: TrajectoryRecord,
    pub vo: TrajectoryRecord,
    pub imu_vo: TrajectoryRecord,
    pub fused: TrajectoryRecord,
    pub cpp_fixes: Vec<(f64, PositionFix)>,
}

impl FusionStudy {
    pub fn row(&self, name: &str) -> Option<&FusionRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn table(&self) -> String {
        let mut s = String::from("sensors,ate_m,rpe_trans_m,rpe_rot_deg\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{:?},{:?},{:?}", r.name, r.ate, r.rpe_trans, r.rpe_rot_deg);
        }
        s
    }

    /// Writes `table.csv`, `cpp_fixes.csv` and one trajectory CSV per
    /// sensor set plus ground truth.
    pub fn write_outputs(&self, manifest: &mut Manifest, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut paths = vec![manifest.write(dir, "table.csv", &self.table())?];
        let mut fixes = Vec::from(format!("{FIX_LOG_HEADER}\n").as_bytes());
        for (t, f) in &self.cpp_fixes {
            write_fix_row(&mut fixes, *t, f)?;
        }
        paths.push(manifest.write(dir, "cpp_fixes.csv", &String::from_utf8_lossy(&fixes))?);
        for (name, tr) in
            [("truth", &self.truth), ("vo", &self.vo), ("imu_vo", &self.imu_vo), ("cpp_imu_vo", &self.fused)]
        {
            let mut buf = Vec::new();
            tr.write_csv(&mut buf)?;
            paths.push(manifest.write(dir, &format!("trajectory_{name}.csv"), &String::from_utf8_lossy(&buf))?);
        }
        Ok(paths)
    }
}

fn rate_stride(high: f64, low: f64) -> Result<usize> {
    let r = high / low;
    if !(r >= 1.0) || (r - r.round()).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("rate {low} Hz must divide {high} Hz")));
    }
    Ok(r.round() as usize)
}

fn row(name: &'static str, est: &TrajectoryRecord, gt: &TrajectoryRecord, delta: usize) -> Result<FusionRow> {
    let e = rpe(est, gt, delta)?;
    Ok(FusionRow { name, ate: ate(est, gt)?, rpe_trans: e.trans, rpe_rot_deg: e.rot_deg })
}

/// Carrier-phase fix attempts at `times`; entries are `None` where the
/// epoch produced no valid fix.
fn cpp_fixes(
    scenario: &ScenarioConfig,
    cfg: &FusionStudyConfig,
    truth: &TrajectoryRecord,
    times: &[f64],
    seed: u64,
) -> Result<Vec<(f64, PositionFix)>> {
    let reference = generate_reference_frame(scenario, seed);
    let loc = LocalizerConfig {
        solver: cfg.solver.clone(),
        schedule: default_schedule(scenario.num_subcarriers, scenario.comb_size),
        max_range: cfg.max_range,
    };
    times
        .par_iter()
        .enumerate()
        .map(|(e, &t)| {
            let ue = truth.samples()[truth.nearest(t).expect("non-empty truth")].1.position;
            let visible: Vec<bool> = cfg.trps.iter().map(|trp| los_visible(&trp.position, &ue, &cfg.obstacles)).collect();
            let major = e as u64 + 1;
            if let Some(sigma) = cfg.cpp_synthetic_noise {
                let mut rng = substream(seed, stream_id(major, 0));
                let n = visible.iter().filter(|v| **v).count();
                let mut d = || -> f64 { StandardNormal.sample(&mut rng) };
                let noise = Vec3::new(d(), d(), d()) * sigma;
                let fix = PositionFix {
                    position: ue + noise,
                    rms_residual: 0.0,
                    trps_used: Vec::new(),
                    mode: cfg.solver.mode,
                    valid: n >= 3,
                    reason: (n < 3).then(|| format!("{n} visible TRPs")),
                    excluded: Vec::new(),
                };
                return Ok((t, fix));
            }
            let links = cfg
                .trps
                .iter()
                .zip(&visible)
                .enumerate()
                .map(|(j, (trp, &los))| {
                    let mut rng = substream(seed, stream_id(major, j as u64 + 1));
                    let state = if los { LinkState::Los } else { LinkState::Nlos };
                    let link = observe_link(
                        &reference,
                        trp.position,
                        ue,
                        &scenario.noise,
                        scenario.carrier_frequency,
                        Some(state),
                        cfg.symbols,
                        &mut rng,
                    )?;
                    Ok(LinkObservation { trp_id: trp.id.clone(), symbols: link.symbols, truth_los: Some(los) })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((t, localize_epoch(&links, &cfg.trps, LinkFilter::Oracle, &loc, None)))
        })
        .collect()
}

/// Sensor streams of one synthetic drive.
pub struct Drive {
    /// Ground truth at the IMU rate.
    pub truth: Vec<(f64, NavState)>,
    pub imu: Vec<ImuSample>,
    /// Raw VO positions, covariance `vo_sigma²·I`.
    pub vo: Vec<PositionMeasurement>,
    /// Every CPP attempt, valid or not.
    pub cpp_fixes: Vec<(f64, PositionFix)>,
    /// Valid fixes as measurements, covariance `cpp_sigma²·I`.
    pub cpp: Vec<PositionMeasurement>,
}

/// Simulates ground truth, noisy IMU, drifting VO and map-gated CPP fixes.
pub fn simulate_drive(scenario: &ScenarioConfig, cfg: &FusionStudyConfig, seed: u64) -> Result<Drive> {
    scenario.validate()?;
    let imu_dt = 1.0 / cfg.imu_rate;
    let vo_stride = rate_stride(cfg.imu_rate, cfg.vo_rate)?;
    let cpp_stride = rate_stride(cfg.imu_rate, cfg.cpp_rate)?;
    let truth = sample_truth(&cfg.track, cfg.duration, imu_dt)?;
    let truth_full = truth_record(&truth)?;
    let imu = add_imu_noise(
        &imu_from_truth(&truth, cfg.filter.gravity()),
        cfg.imu_sigma_acc,
        cfg.imu_sigma_gyr,
        &mut substream(seed, stream_id(0, 1)),
    );
    let mut vo = synth_vo_stream(
        &subsample(&truth_full, vo_stride),
        cfg.vo_drift,
        cfg.vo_noise,
        &mut substream(seed, stream_id(0, 2)),
    )?;
    let vo_r = Matrix3::identity() * cfg.vo_sigma * cfg.vo_sigma;
    for m in &mut vo {
        m.r = vo_r;
    }
    let cpp_times: Vec<f64> = truth_full.samples().iter().step_by(cpp_stride).map(|s| s.0).collect();
    let cpp_fixes = cpp_fixes(scenario, cfg, &truth_full, &cpp_times, seed)?;
    let cpp_r = Matrix3::identity() * cfg.cpp_sigma * cfg.cpp_sigma;
    let cpp = cpp_fixes
        .iter()
        .filter(|(_, f)| f.valid)
        .map(|(t, f)| PositionMeasurement { t: *t, y: f.position, r: cpp_r, source: MeasurementSource::Cpp })
        .collect();
    Ok(Drive { truth, imu, vo, cpp_fixes, cpp })
}

/// Diagonal initial covariance from position, velocity and attitude stds.
pub fn initial_covariance(sigma: [f64; 3]) -> Cov9 {
    let mut d = nalgebra::SVector::<f64, 9>::zeros();
    for (i, s) in sigma.iter().enumerate() {
        for a in 0..3 {
            d[3 * i + a] = s * s;
        }
    }
    Cov9::from_diagonal(&d)
}

/// Runs VO alone, IMU+VO and CPP+IMU+VO on one synthetic drive and scores
/// each against ground truth at the VO rate.
pub fn run_fusion_study(scenario: &ScenarioConfig, cfg: &FusionStudyConfig, seed: u64) -> Result<FusionStudy> {
    let drive = simulate_drive(scenario, cfg, seed)?;
    let vo_stride = rate_stride(cfg.imu_rate, cfg.vo_rate)?;
    let truth = subsample(&truth_record(&drive.truth)?, vo_stride);
    // VO stands in for positions only; its orientation is taken as exact.
    let vo_record = TrajectoryRecord::new(
        drive
            .vo
            .iter()
            .zip(truth.samples())
            .map(|(m, (_, gt))| (m.t, Pose { position: m.y, orientation: gt.orientation }))
            .collect(),
    )?;

    let init = drive.truth[0].1;
    let init_cov = initial_covariance(cfg.init_sigma);
    let imu_vo = run_filter(&drive.imu, &drive.vo, init, init_cov, &cfg.filter)?;
    let vo_for_fusion = if cfg.reanchor_vo { reanchor_vo(&drive.vo, &drive.cpp) } else { drive.vo.clone() };
    let mut meas: Vec<PositionMeasurement> = drive.cpp.iter().cloned().chain(vo_for_fusion).collect();
    meas.sort_by(|a, b| a.t.total_cmp(&b.t));
    let fused = run_filter(&drive.imu, &meas, init, init_cov, &cfg.filter)?;

    let imu_vo = subsample(&imu_vo, vo_stride);
    let fused = subsample(&fused, vo_stride);
    let rows = vec![
        row("vo", &vo_record, &truth, cfg.rpe_delta)?,
        row("imu_vo", &imu_vo, &truth, cfg.rpe_delta)?,
        row("cpp_imu_vo", &fused, &truth, cfg.rpe_delta)?,
    ];
    Ok(FusionStudy {
        rows,
        cpp_valid_fraction: drive.cpp.len() as f64 / drive.cpp_fixes.len().max(1) as f64,
        truth,
        vo: vo_record,
        imu_vo,
        fused,
        cpp_fixes: drive.cpp_fixes,
    })
}

//! Multilateration from carrier-phase ranges with NLOS exclusion.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::classifier::Classifier;
use crate::error::{Error, Result};
use crate::ranging::{range_symbols, RangeEstimate};
use crate::scenario::TrpSite;
use crate::signal::SubcarrierFrame;
use crate::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveMode {
    /// Horizontal position only; height comes from the prior.
    TwoD,
    ThreeD,
}

/// Constraint on the UE height, resolving the mirror ambiguity across the
/// TRP plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum HeightPrior {
    None,
    Fixed(f64),
    /// Height is projected into `[lo, hi]` after every step.
    Bounded { lo: f64, hi: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub mode: SolveMode,
    pub height_prior: HeightPrior,
    /// Fixes with a larger RMS residual are invalid, meters.
    pub residual_gate: f64,
    /// Fixes farther than this from the initialization are invalid, meters.
    pub max_offset: f64,
    pub max_iterations: usize,
    /// Convergence threshold on the step length, meters.
    pub step_tolerance: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            mode: SolveMode::ThreeD,
            height_prior: HeightPrior::Bounded { lo: 0.0, hi: 8.0 },
            residual_gate: 1.0,
            max_offset: 100.0,
            max_iterations: 50,
            step_tolerance: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PositionFix {
    pub position: Vec3,
    pub rms_residual: f64,
    pub trps_used: Vec<String>,
    pub mode: SolveMode,
    pub valid: bool,
    /// Why the fix is invalid.
    pub reason: Option<String>,
    /// Links discarded as NLOS before solving.
    pub excluded: Vec<String>,
}

impl PositionFix {
    fn invalid(position: Vec3, mode: SolveMode, reason: String) -> Self {
        Self {
            position,
            rms_residual: f64::INFINITY,
            trps_used: Vec::new(),
            mode,
            valid: false,
            reason: Some(reason),
            excluded: Vec::new(),
        }
    }
}

/// A range to a known anchor.
#[derive(Clone, Debug, PartialEq)]
pub struct Anchor {
    pub id: String,
    pub position: Vec3,
    pub distance: f64,
}

fn prior_height(prior: HeightPrior) -> Option<f64> {
    match prior {
        HeightPrior::None => None,
        HeightPrior::Fixed(z) => Some(z),
        HeightPrior::Bounded { lo, hi } => Some(0.5 * (lo + hi)),
    }
}

/// Ratio of the smallest to the largest eigenvalue of the scatter matrix
/// of `points` about their centroid.
fn flatness<const D: usize>(points: &[[f64; D]]) -> f64 {
    let n = points.len() as f64;
    let mut c = [0.0; D];
    for p in points {
        for a in 0..D {
            c[a] += p[a] / n;
        }
    }
    let mut m = DMatrix::<f64>::zeros(D, D);
    for p in points {
        for a in 0..D {
            for b in 0..D {
                m[(a, b)] += (p[a] - c[a]) * (p[b] - c[b]);
            }
        }
    }
    let ev = SymmetricEigen::new(m).eigenvalues;
    let max = ev.max();
    if max <= 0.0 {
        0.0
    } else {
        ev.min() / max
    }
}

/// Default initial point: TRP centroid at the prior height.
pub fn default_init(anchors: &[Vec3], prior: HeightPrior) -> Vec3 {
    let n = anchors.len().max(1) as f64;
    let mut c = anchors.iter().fold(Vec3::zeros(), |a, b| a + b) / n;
    if let Some(z) = prior_height(prior) {
        c.z = z;
    }
    c
}

/// Gauss–Newton solution of `min Σ (‖x - a_i‖ - d_i)²` with step halving.
pub fn trilaterate_anchors(anchors: &[Anchor], cfg: &SolverConfig, init: Option<Vec3>) -> Result<PositionFix> {
    if anchors.len() < 3 {
        return Err(Error::InsufficientLinks(anchors.len()));
    }
    if anchors.iter().any(|a| !a.distance.is_finite() || !a.position.iter().all(|v| v.is_finite())) {
        return Err(Error::NonFinite("anchor range or position".into()));
    }
    let pts: Vec<Vec3> = anchors.iter().map(|a| a.position).collect();
    let fixed_z = match (cfg.mode, cfg.height_prior) {
        (_, HeightPrior::Fixed(z)) => Some(z),
        (SolveMode::TwoD, p) => Some(prior_height(p).or(init.map(|i| i.z)).ok_or_else(|| {
            Error::InvalidConfig("2D solving needs a height prior or an initial height".into())
        })?),
        (SolveMode::ThreeD, _) => None,
    };
    let xy: Vec<[f64; 2]> = pts.iter().map(|p| [p.x, p.y]).collect();
    if flatness(&xy) < 1e-12 {
        return Err(Error::DegenerateGeometry("anchors are collinear in the horizontal plane".into()));
    }
    if fixed_z.is_none() && cfg.height_prior == HeightPrior::None {
        let xyz: Vec<[f64; 3]> = pts.iter().map(|p| [p.x, p.y, p.z]).collect();
        if flatness(&xyz) < 1e-12 {
            return Err(Error::DegenerateGeometry(
                "anchors are coplanar and no height prior is set".into(),
            ));
        }
    }

    let init = init.unwrap_or_else(|| default_init(&pts, cfg.height_prior));
    let dims = if fixed_z.is_some() { 2 } else { 3 };
    let project = |mut x: Vec3| {
        match (fixed_z, cfg.height_prior) {
            (Some(z), _) => x.z = z,
            (None, HeightPrior::Bounded { lo, hi }) => x.z = x.z.clamp(lo, hi),
            _ => {}
        }
        x
    };
    let cost = |x: &Vec3| -> f64 {
        anchors
            .iter()
            .map(|a| ((x - a.position).norm() - a.distance).powi(2))
            .sum()
    };

    let mut x = project(init);
    for _ in 0..cfg.max_iterations {
        let mut j = DMatrix::<f64>::zeros(anchors.len(), dims);
        let mut r = DVector::<f64>::zeros(anchors.len());
        for (i, a) in anchors.iter().enumerate() {
            let diff = x - a.position;
            let dist = diff.norm().max(1e-12);
            r[i] = dist - a.distance;
            for c in 0..dims {
                j[(i, c)] = diff[c] / dist;
            }
        }
        let jt = j.transpose();
        let normal = &jt * &j;
        let chol = normal
            .clone()
            .cholesky()
            .ok_or_else(|| Error::DegenerateGeometry("singular normal equations".into()))?;
        let ev = SymmetricEigen::new(normal).eigenvalues;
        if ev.min() <= 1e-12 * ev.max().max(1e-300) {
            return Err(Error::DegenerateGeometry("singular normal equations".into()));
        }
        let step = -chol.solve(&(&jt * &r));
        let mut full = Vec3::zeros();
        for c in 0..dims {
            full[c] = step[c];
        }
        let c0 = cost(&x);
        let mut alpha = 1.0;
        let mut next = project(x + full);
        while cost(&next) > c0 && alpha > 1e-10 {
            alpha *= 0.5;
            next = project(x + full * alpha);
        }
        let moved = (next - x).norm();
        x = next;
        if moved < cfg.step_tolerance {
            break;
        }
    }

    let rms = (cost(&x) / anchors.len() as f64).sqrt();
    let offset = (x - init).norm();
    let reason = if !(rms <= cfg.residual_gate) {
        Some(format!("residual {rms:.3} m exceeds gate {} m", cfg.residual_gate))
    } else if offset > cfg.max_offset {
        Some(format!("fix {offset:.1} m from initialization exceeds {} m bound", cfg.max_offset))
    } else {
        None
    };
    Ok(PositionFix {
        position: x,
        rms_residual: rms,
        trps_used: anchors.iter().map(|a| a.id.clone()).collect(),
        mode: if dims == 2 { SolveMode::TwoD } else { SolveMode::ThreeD },
        valid: reason.is_none(),
        reason,
        excluded: Vec::new(),
    })
}

/// Solves from range estimates, looking TRP positions up by id.
pub fn trilaterate(
    ranges: &[RangeEstimate],
    trps: &[TrpSite],
    cfg: &SolverConfig,
    init: Option<Vec3>,
) -> Result<PositionFix> {
    let anchors = ranges
        .iter()
        .map(|r| {
            let trp = trps
                .iter()
                .find(|t| t.id == r.trp_id)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown TRP {:?}", r.trp_id)))?;
            Ok(Anchor { id: r.trp_id.clone(), position: trp.position, distance: r.distance })
        })
        .collect::<Result<Vec<_>>>()?;
    trilaterate_anchors(&anchors, cfg, init)
}

/// One TRP link of an epoch: its phase-corrected symbols and, in
/// simulation, the true LOS state.
#[derive(Clone, Debug)]
pub struct LinkObservation {
    pub trp_id: String,
    pub symbols: Vec<SubcarrierFrame>,
    pub truth_los: Option<bool>,
}

/// How links are screened before ranging.
#[derive(Clone, Copy, Debug)]
pub enum LinkFilter<'a> {
    /// Use every link.
    None,
    /// Drop links whose true state is NLOS.
    Oracle,
    /// Drop links the classifier flags as NLOS.
    Model(&'a Classifier),
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalizerConfig {
    pub solver: SolverConfig,
    pub schedule: Vec<usize>,
    /// Longest link the coarse spacing must resolve, meters.
    pub max_range: f64,
}

/// Classifies, ranges and multilaterates one epoch. Failures become
/// invalid fixes.
pub fn localize_epoch(
    links: &[LinkObservation],
    trps: &[TrpSite],
    filter: LinkFilter<'_>,
    cfg: &LocalizerConfig,
    init: Option<Vec3>,
) -> PositionFix {
    let trp_pos: Vec<Vec3> = trps.iter().map(|t| t.position).collect();
    let fallback = init.unwrap_or_else(|| default_init(&trp_pos, cfg.solver.height_prior));
    let mut excluded = Vec::new();
    let mut anchors = Vec::new();
    for link in links {
        let keep = match filter {
            LinkFilter::None => true,
            LinkFilter::Oracle => link.truth_los.unwrap_or(true),
            LinkFilter::Model(c) => match link.symbols.first().map(|f| c.classify_frame(f)) {
                Some(Ok(state)) => state.is_los(),
                _ => false,
            },
        };
        if !keep {
            excluded.push(link.trp_id.clone());
            continue;
        }
        let Some(trp) = trps.iter().find(|t| t.id == link.trp_id) else {
            excluded.push(link.trp_id.clone());
            continue;
        };
        match range_symbols(&link.symbols, &cfg.schedule, cfg.max_range) {
            Ok(d) => anchors.push(Anchor { id: link.trp_id.clone(), position: trp.position, distance: d }),
            Err(_) => excluded.push(link.trp_id.clone()),
        }
    }
    let mut fix = match trilaterate_anchors(&anchors, &cfg.solver, Some(fallback)) {
        Ok(f) => f,
        Err(e) => PositionFix::invalid(fallback, cfg.solver.mode, e.to_string()),
    };
    fix.excluded = excluded;
    fix
}

/// Percentiles and CDFs of horizontal and 3D errors over valid fixes.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorStatistics {
    pub valid: usize,
    pub total: usize,
    /// `(level, 2D error, 3D error)` for levels 70, 80, 90.
    pub percentiles: Vec<(f64, f64, f64)>,
    pub cdf_2d: Vec<(f64, f64)>,
    pub cdf_3d: Vec<(f64, f64)>,
}

impl ErrorStatistics {
    pub fn p2d(&self, level: f64) -> Option<f64> {
        self.percentiles.iter().find(|p| p.0 == level).map(|p| p.1)
    }

    pub fn p3d(&self, level: f64) -> Option<f64> {
        self.percentiles.iter().find(|p| p.0 == level).map(|p| p.2)
    }

    pub fn valid_fraction(&self) -> f64 {
        self.valid as f64 / self.total.max(1) as f64
    }
}

/// Percentile with linear interpolation at rank `p/100·(N-1)` of the
/// sorted values.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let rank = (p / 100.0).clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (rank - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Sorted `(error, k/N)` pairs.
pub fn empirical_cdf(values: &[f64]) -> Vec<(f64, f64)> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.into_iter().enumerate().map(|(i, e)| (e, (i + 1) as f64 / n)).collect()
}

pub const PERCENTILE_LEVELS: [f64; 3] = [70.0, 80.0, 90.0];

pub fn error_statistics(fixes: &[PositionFix], truth: &[Vec3]) -> Result<ErrorStatistics> {
    if fixes.len() != truth.len() {
        return Err(Error::Shape(format!("{} fixes for {} truth points", fixes.len(), truth.len())));
    }
    let (mut e2, mut e3) = (Vec::new(), Vec::new());
    for (f, t) in fixes.iter().zip(truth) {
        if f.valid {
            let d = f.position - t;
            e2.push(d.xy().norm());
            e3.push(d.norm());
        }
    }
    if e2.is_empty() {
        return Err(Error::Empty("no valid fixes".into()));
    }
    let cdf_2d = empirical_cdf(&e2);
    let cdf_3d = empirical_cdf(&e3);
    let s2: Vec<f64> = cdf_2d.iter().map(|c| c.0).collect();
    let s3: Vec<f64> = cdf_3d.iter().map(|c| c.0).collect();
    Ok(ErrorStatistics {
        valid: e2.len(),
        total: fixes.len(),
        percentiles: PERCENTILE_LEVELS
            .iter()
            .map(|&l| (l, percentile(&s2, l), percentile(&s3, l)))
            .collect(),
        cdf_2d,
        cdf_3d,
    })
}

pub const FIX_LOG_HEADER: &str = "t,valid,x,y,z,residual,n_trps,excluded_ids";

/// Writes one fix-log row; excluded ids are `;`-separated.
pub fn write_fix_row<W: Write>(out: &mut W, t: f64, fix: &PositionFix) -> Result<()> {
    writeln!(
        out,
        "{},{},{},{},{},{},{},{}",
        t,
        u8::from(fix.valid),
        fix.position.x,
        fix.position.y,
        fix.position.z,
        fix.rms_residual,
        fix.trps_used.len(),
        fix.excluded.join(";")
    )?;
    Ok(())
}

/// Rows of a fix log: `(t, valid, position, residual)`.
pub fn read_fix_log(text: &str) -> Result<Vec<(f64, bool, Vec3, f64)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("t,") {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let num = |i: usize| -> Result<f64> {
            f.get(i)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| Error::Parse(format!("fix log line {}: field {}", n + 1, i + 1)))
        };
        out.push((num(0)?, num(1)? != 0.0, Vec3::new(num(2)?, num(3)?, num(4)?), num(5)?));
    }
    Ok(out)
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use crate::scenario::ScenarioConfig;
    use rand::Rng;

    fn umi_anchors(truth: Vec3) -> Vec<Anchor> {
        ScenarioConfig::umi()
            .trp_list
            .iter()
            .map(|t| Anchor { id: t.id.clone(), position: t.position, distance: (t.position - truth).norm() })
            .collect()
    }

    #[test]
    fn exact_ranges_recover_ue() {
        let ue = Vec3::new(120.0, 110.0, 1.5);
        let anchors = umi_anchors(ue);
        let d: Vec<f64> = anchors.iter().map(|a| a.distance).collect();
        assert!((d[0] - 23.92).abs() < 0.01 && (d[1] - 37.04).abs() < 0.01 && (d[2] - 45.52).abs() < 0.01);
        let cfg = SolverConfig { height_prior: HeightPrior::Fixed(1.5), ..SolverConfig::default() };
        let fix = trilaterate_anchors(&anchors, &cfg, None).unwrap();
        assert!((fix.position - ue).norm() < 1e-6);
        assert!(fix.valid);
        assert_eq!(fix.mode, SolveMode::TwoD);
    }

    #[test]
    fn bounded_prior_avoids_mirror() {
        let ue = Vec3::new(120.0, 110.0, 1.5);
        let fix = trilaterate_anchors(&umi_anchors(ue), &SolverConfig::default(), None).unwrap();
        assert!((fix.position - ue).norm() < 1e-5, "{:?}", fix.position);
        assert!(fix.position.z <= 8.0);
        // Starting above the TRP plane still ends below it.
        let fix = trilaterate_anchors(&umi_anchors(ue), &SolverConfig::default(), Some(Vec3::new(125.0, 115.0, 18.0)))
            .unwrap();
        assert!(fix.position.z <= 8.0 && (fix.position - ue).norm() < 1e-5);
    }

    #[test]
    fn collinear_and_coplanar_rejected() {
        let line: Vec<Anchor> = (0..4)
            .map(|i| Anchor { id: i.to_string(), position: Vec3::new(10.0 * i as f64, 0.0, 10.0), distance: 20.0 })
            .collect();
        let cfg = SolverConfig { mode: SolveMode::TwoD, ..SolverConfig::default() };
        assert!(matches!(trilaterate_anchors(&line, &cfg, None), Err(Error::DegenerateGeometry(_))));
        let cfg = SolverConfig { height_prior: HeightPrior::None, ..SolverConfig::default() };
        let ue = Vec3::new(120.0, 110.0, 1.5);
        assert!(matches!(trilaterate_anchors(&umi_anchors(ue), &cfg, None), Err(Error::DegenerateGeometry(_))));
    }

    #[test]
    fn too_few_links() {
        let ue = Vec3::new(120.0, 110.0, 1.5);
        let a = umi_anchors(ue);
        assert!(matches!(trilaterate_anchors(&a[..2], &SolverConfig::default(), None), Err(Error::InsufficientLinks(2))));
    }

    #[test]
    fn inflated_range_fails_gate() {
        let ue = Vec3::new(120.0, 110.0, 1.5);
        let mut a = umi_anchors(ue);
        a[2].distance += 30.0;
        let cfg = SolverConfig { height_prior: HeightPrior::Fixed(1.5), ..SolverConfig::default() };
        let fix = trilaterate_anchors(&a, &cfg, None).unwrap();
        assert!(!fix.valid);
        assert!(fix.rms_residual > 1.0);
    }

    #[test]
    fn basin_of_convergence() {
        let ue = Vec3::new(120.0, 110.0, 1.5);
        let anchors = umi_anchors(ue);
        let cfg = SolverConfig::default();
        let mut rng = substream(4, 0);
        for _ in 0..100 {
            let init = loop {
                let v = Vec3::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(-1.5..6.5));
                if v.norm() <= 50.0 {
                    break ue + v;
                }
            };
            let fix = trilaterate_anchors(&anchors, &cfg, Some(init)).unwrap();
            assert!((fix.position - ue).norm() < 1e-6, "init {init:?} -> {:?}", fix.position);
        }
    }

    #[test]
    fn exclusion_does_not_raise_noiseless_residual() {
        let ue = Vec3::new(130.0, 120.0, 1.5);
        let mut a = umi_anchors(ue);
        a.push(Anchor { id: "TRP-4".into(), position: Vec3::new(90.0, 160.0, 12.0), distance: 0.0 });
        a[3].distance = (a[3].position - ue).norm();
        let cfg = SolverConfig::default();
        let all = trilaterate_anchors(&a, &cfg, None).unwrap();
        for drop in 0..4 {
            let mut sub = a.clone();
            sub.remove(drop);
            let fix = trilaterate_anchors(&sub, &cfg, None).unwrap();
            assert!(fix.rms_residual <= all.rms_residual + 1e-9);
        }
    }

    #[test]
    fn percentile_convention() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert!((percentile(&v, 90.0) - 90.1).abs() < 1e-12);
        assert_eq!(percentile(&[0.0, 0.0, 0.0], 70.0), 0.0);
        assert_eq!(percentile(&[4.0], 80.0), 4.0);
    }

    #[test]
    fn statistics_over_valid_fixes() {
        let mk = |p: Vec3, valid: bool| PositionFix {
            position: p,
            rms_residual: 0.0,
            trps_used: vec![],
            mode: SolveMode::ThreeD,
            valid,
            reason: None,
            excluded: vec![],
        };
        let truth = vec![Vec3::zeros(); 3];
        let fixes = vec![mk(Vec3::new(3.0, 4.0, 12.0), true), mk(Vec3::new(1.0, 0.0, 0.0), true), mk(Vec3::new(1e3, 0.0, 0.0), false)];
        let s = error_statistics(&fixes, &truth).unwrap();
        assert_eq!((s.valid, s.total), (2, 3));
        for (_, e2, e3) in &s.percentiles {
            assert!(e2 <= e3);
        }
        assert_eq!(s.cdf_3d, vec![(1.0, 0.5), (13.0, 1.0)]);
        assert!(error_statistics(&fixes[2..], &truth[2..]).is_err());
        assert!(error_statistics(&fixes, &truth[1..]).is_err());
    }

    #[test]
    fn fix_log_round_trip() {
        let fix = PositionFix {
            position: Vec3::new(1.5, -2.0, 1.25),
            rms_residual: 0.01,
            trps_used: vec!["a".into(), "b".into(), "c".into()],
            mode: SolveMode::ThreeD,
            valid: true,
            reason: None,
            excluded: vec!["d".into(), "e".into()],
        };
        let mut buf = Vec::new();
        writeln!(buf, "{FIX_LOG_HEADER}").unwrap();
        write_fix_row(&mut buf, 2.0, &fix).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.ends_with(",3,d;e\n"));
        let rows = read_fix_log(&text).unwrap();
        assert_eq!(rows, vec![(2.0, true, fix.position, 0.01)]);
    }
}

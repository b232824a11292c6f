//! Trajectory metrics: absolute trajectory error, relative pose error,
//! error CDFs and key–value reports.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use nalgebra::{Isometry3, Quaternion, Translation3, UnitQuaternion};

use crate::error::{Error, Result};
use crate::Vec3;

/// Position plus world←body orientation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub position: Vec3,
    pub orientation: UnitQuaternion<f64>,
}

impl Pose {
    pub fn at(position: Vec3) -> Self {
        Self { position, orientation: UnitQuaternion::identity() }
    }

    pub fn isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.position), self.orientation)
    }
}

/// Timestamped poses with strictly increasing times.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrajectoryRecord {
    samples: Vec<(f64, Pose)>,
}

/// Largest timestamp gap accepted when pairing two trajectories, seconds.
pub const ASSOCIATION_TOLERANCE: f64 = 0.01;

impl TrajectoryRecord {
    pub fn new(samples: Vec<(f64, Pose)>) -> Result<Self> {
        if let Some(w) = samples.windows(2).find(|w| !(w[1].0 > w[0].0)) {
            return Err(Error::OutOfOrder(format!("trajectory time {} after {}", w[1].0, w[0].0)));
        }
        Ok(Self { samples })
    }

    pub fn push(&mut self, t: f64, pose: Pose) -> Result<()> {
        if let Some(&(last, _)) = self.samples.last() {
            if !(t > last) {
                return Err(Error::OutOfOrder(format!("trajectory time {t} after {last}")));
            }
        }
        self.samples.push((t, pose));
        Ok(())
    }

    pub fn samples(&self) -> &[(f64, Pose)] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.0)
    }

    /// Index of the sample nearest to `t`.
    pub fn nearest(&self, t: f64) -> Option<usize> {
        if self.samples.is_empty() {
            return None;
        }
        let i = self.samples.partition_point(|s| s.0 < t);
        let mut best = i.min(self.samples.len() - 1);
        if i > 0 && (t - self.samples[i - 1].0).abs() <= (self.samples[best].0 - t).abs() {
            best = i - 1;
        }
        Some(best)
    }

    /// Applies `f` to every pose.
    pub fn map_poses(&self, f: impl Fn(&Pose) -> Pose) -> Self {
        Self { samples: self.samples.iter().map(|(t, p)| (*t, f(p))).collect() }
    }

    /// CSV `t,px,py,pz,qw,qx,qy,qz` with a header line.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "t,px,py,pz,qw,qx,qy,qz")?;
        for (t, p) in &self.samples {
            let q = p.orientation.quaternion();
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                t, p.position.x, p.position.y, p.position.z, q.w, q.i, q.j, q.k
            )?;
        }
        Ok(())
    }

    /// Reads the CSV written by [`write_csv`](Self::write_csv); header and
    /// `#` comment lines are skipped, quaternions are renormalized.
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut samples = Vec::new();
        for (n, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with('t') {
                continue;
            }
            let v = line
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse(format!("trajectory line {}: {e}", n + 1)))?;
            if v.len() != 8 {
                return Err(Error::Parse(format!("trajectory line {}: expected 8 fields", n + 1)));
            }
            let q = Quaternion::new(v[4], v[5], v[6], v[7]);
            if !(q.norm() > 0.0) {
                return Err(Error::Parse(format!("trajectory line {}: zero quaternion", n + 1)));
            }
            samples.push((
                v[0],
                Pose { position: Vec3::new(v[1], v[2], v[3]), orientation: UnitQuaternion::from_quaternion(q) },
            ));
        }
        Self::new(samples)
    }
}

/// Pairs each estimate sample with the nearest ground-truth sample within
/// `tolerance` seconds.
pub fn associate(est: &TrajectoryRecord, gt: &TrajectoryRecord, tolerance: f64) -> Vec<(usize, usize)> {
    est.samples
        .iter()
        .enumerate()
        .filter_map(|(i, (t, _))| {
            let j = gt.nearest(*t)?;
            ((gt.samples[j].0 - t).abs() <= tolerance).then_some((i, j))
        })
        .collect()
}

/// Absolute trajectory error: `√(1/N Σ ‖p_est - p_gt‖²)` over associated
/// pairs, no alignment.
pub fn ate(est: &TrajectoryRecord, gt: &TrajectoryRecord) -> Result<f64> {
    let pairs = associate(est, gt, ASSOCIATION_TOLERANCE);
    if pairs.is_empty() {
        return Err(Error::Empty("no associated trajectory samples".into()));
    }
    let sum: f64 = pairs
        .iter()
        .map(|&(i, j)| (est.samples[i].1.position - gt.samples[j].1.position).norm_squared())
        .sum();
    Ok((sum / pairs.len() as f64).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelativePoseError {
    /// Mean translational error, meters.
    pub trans: f64,
    /// Mean rotational error, degrees.
    pub rot_deg: f64,
}

/// Relative pose error over a fixed interval of `delta` associated samples.
///
/// For each start `t`, compares the translation parts of the relative
/// poses `Q_t⁻¹Q_{t+Δ}` (ground truth) and `P_t⁻¹P_{t+Δ}` (estimate), and
/// the geodesic angle between their rotations.
pub fn rpe(est: &TrajectoryRecord, gt: &TrajectoryRecord, delta: usize) -> Result<RelativePoseError> {
    let pairs = associate(est, gt, ASSOCIATION_TOLERANCE);
    let n = pairs.len();
    if delta == 0 || delta >= n {
        return Err(Error::InvalidArgument(format!(
            "interval {delta} must be in 1..{n} associated samples"
        )));
    }
    let (mut trans, mut rot) = (0.0, 0.0);
    for k in 0..n - delta {
        let (i0, j0) = pairs[k];
        let (i1, j1) = pairs[k + delta];
        let e = est.samples[i0].1.isometry().inv_mul(&est.samples[i1].1.isometry());
        let g = gt.samples[j0].1.isometry().inv_mul(&gt.samples[j1].1.isometry());
        trans += (e.translation.vector - g.translation.vector).norm();
        rot += e.rotation.angle_to(&g.rotation).to_degrees();
    }
    let m = (n - delta) as f64;
    Ok(RelativePoseError { trans: trans / m, rot_deg: rot / m })
}

/// Sorted `error,k/N` rows.
pub fn export_cdf<W: Write>(errors: &[f64], out: &mut W) -> Result<()> {
    if errors.is_empty() {
        return Err(Error::Empty("no errors to export".into()));
    }
    for (e, f) in crate::positioning::empirical_cdf(errors) {
        writeln!(out, "{e:?},{f:?}")?;
    }
    Ok(())
}

/// Plain `key value` report lines.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub entries: Vec<(String, String)>,
}

impl Report {
    pub fn add(&mut self, key: impl Into<String>, value: impl std::fmt::Display) -> &mut Self {
        self.entries.push((key.into(), value.to_string()));
        self
    }

    /// Adds a float with `{:?}` formatting so integers keep a `.0`.
    pub fn num(&mut self, key: impl Into<String>, value: f64) -> &mut Self {
        self.entries.push((key.into(), format!("{value:?}")));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|e| e.0 == key).map(|e| e.1.as_str())
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k} {v}");
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("key,value\n");
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k},{v}");
        }
        s
    }
}

/// Standard trajectory report: `ate_m`, `rpe_trans_m`, `rpe_rot_deg`.
pub fn trajectory_report(est: &TrajectoryRecord, gt: &TrajectoryRecord, delta: usize) -> Result<Report> {
    let mut r = Report::default();
    r.num("ate_m", ate(est, gt)?);
    let e = rpe(est, gt, delta)?;
    r.num("rpe_trans_m", e.trans).num("rpe_rot_deg", e.rot_deg);
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand::Rng;

    fn line(n: usize, step: f64) -> TrajectoryRecord {
        TrajectoryRecord::new((0..n).map(|i| (i as f64 * 0.1, Pose::at(Vec3::new(i as f64 * step, 0.0, 0.0)))).collect())
            .unwrap()
    }

    #[test]
    fn identical_and_offset() {
        let gt = line(20, 1.0);
        assert_eq!(ate(&gt, &gt).unwrap(), 0.0);
        let shifted = gt.map_poses(|p| Pose::at(p.position + Vec3::new(3.0, 0.0, 0.0)));
        assert_eq!(ate(&shifted, &gt).unwrap(), 3.0);
        assert_eq!(rpe(&shifted, &gt, 1).unwrap().trans, 0.0);
    }

    #[test]
    fn per_step_drift() {
        let gt = line(30, 1.0);
        let est = line(30, 1.1);
        let e = rpe(&est, &gt, 1).unwrap();
        assert!((e.trans - 0.1).abs() < 1e-12);
        assert_eq!(e.rot_deg, 0.0);
        assert!(rpe(&est, &gt, 30).is_err());
        assert!(rpe(&est, &gt, 0).is_err());
    }

    #[test]
    fn association_window() {
        let gt = line(10, 1.0);
        let late = TrajectoryRecord::new(gt.samples().iter().map(|(t, p)| (t + 0.02, *p)).collect()).unwrap();
        assert!(ate(&late, &gt).is_err());
        let near = TrajectoryRecord::new(gt.samples().iter().map(|(t, p)| (t + 0.005, *p)).collect()).unwrap();
        assert_eq!(ate(&near, &gt).unwrap(), 0.0);
    }

    #[test]
    fn rejects_unordered() {
        assert!(TrajectoryRecord::new(vec![(1.0, Pose::at(Vec3::zeros())), (1.0, Pose::at(Vec3::zeros()))]).is_err());
    }

    #[test]
    fn rigid_transform_leaves_rpe() {
        let mut rng = substream(1, 0);
        let gt = TrajectoryRecord::new(
            (0..50)
                .map(|i| {
                    let q = UnitQuaternion::from_euler_angles(rng.random(), rng.random(), rng.random());
                    (i as f64, Pose { position: Vec3::new(rng.random(), rng.random(), rng.random()) * 10.0, orientation: q })
                })
                .collect(),
        )
        .unwrap();
        let iso = Isometry3::from_parts(
            Translation3::new(5.0, -2.0, 7.0),
            UnitQuaternion::from_euler_angles(0.3, -1.1, 2.0),
        );
        let moved = gt.map_poses(|p| {
            let m = iso * p.isometry();
            Pose { position: m.translation.vector, orientation: m.rotation }
        });
        let e = rpe(&moved, &gt, 3).unwrap();
        assert!(e.trans < 1e-12 && e.rot_deg < 1e-5);
    }

    #[test]
    fn cdf_rows() {
        let mut out = Vec::new();
        export_cdf(&[2.0], &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "2.0,1.0\n");
        let mut out = Vec::new();
        export_cdf(&[3.0, 1.0, 4.0, 2.0], &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().nth(3), Some("4.0,1.0"));
        assert!(export_cdf(&[], &mut Vec::new()).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let q = UnitQuaternion::from_euler_angles(0.1, 0.2, 0.3);
        let tr = TrajectoryRecord::new(vec![(0.0, Pose { position: Vec3::new(1.0, 2.0, 3.0), orientation: q })]).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let back = TrajectoryRecord::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.samples()[0].1.position, Vec3::new(1.0, 2.0, 3.0));
        assert!(back.samples()[0].1.orientation.angle_to(&q) < 1e-12);
    }

    #[test]
    fn report_format() {
        let gt = line(5, 1.0);
        let r = trajectory_report(&gt, &gt, 1).unwrap();
        assert!(r.to_kv().starts_with("ate_m 0.0\n"));
        assert_eq!(r.get("rpe_trans_m"), Some("0.0"));
    }
}

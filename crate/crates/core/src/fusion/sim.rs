//! Synthetic trajectories and sensor streams for exercising the filter.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, UnitQuaternion};
use rand_distr::StandardNormal;

use super::{ImuSample, MeasurementSource, NavState, PositionMeasurement};
use crate::error::{Error, Result};
use crate::eval::TrajectoryRecord;
use crate::Vec3;

/// A closed-form trajectory.
pub trait AnalyticTrack {
    fn position(&self, t: f64) -> Vec3;
    fn velocity(&self, t: f64) -> Vec3;

    /// Body x axis along the velocity, z up.
    fn orientation(&self, t: f64) -> UnitQuaternion<f64> {
        let v = self.velocity(t);
        UnitQuaternion::from_axis_angle(&Vec3::z_axis(), v.y.atan2(v.x))
    }
}

/// Constant-speed counter-clockwise circle in a horizontal plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Circle {
    pub center: Vec3,
    pub radius: f64,
    pub speed: f64,
}

impl AnalyticTrack for Circle {
    fn position(&self, t: f64) -> Vec3 {
        let a = self.speed * t / self.radius;
        self.center + Vec3::new(self.radius * a.cos(), self.radius * a.sin(), 0.0)
    }

    fn velocity(&self, t: f64) -> Vec3 {
        let a = self.speed * t / self.radius;
        Vec3::new(-self.speed * a.sin(), self.speed * a.cos(), 0.0)
    }
}

/// Constant-speed loop of two straights joined by semicircles, driven
/// counter-clockwise starting at the left end of the lower straight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoopTrack {
    pub center: Vec3,
    /// Length of each straight, meters.
    pub straight: f64,
    pub radius: f64,
    pub speed: f64,
}

impl LoopTrack {
    pub fn perimeter(&self) -> f64 {
        2.0 * self.straight + TAU * self.radius
    }

    /// Position and unit tangent at arc length `s`.
    fn at(&self, s: f64) -> (Vec3, Vec3) {
        let (l, r) = (self.straight, self.radius);
        let s = s.rem_euclid(self.perimeter());
        let half_arc = PI * r;
        let (p, tan) = if s < l {
            (Vec3::new(-l / 2.0 + s, -r, 0.0), Vec3::x())
        } else if s < l + half_arc {
            let a = -PI / 2.0 + (s - l) / r;
            (Vec3::new(l / 2.0 + r * a.cos(), r * a.sin(), 0.0), Vec3::new(-a.sin(), a.cos(), 0.0))
        } else if s < 2.0 * l + half_arc {
            (Vec3::new(l / 2.0 - (s - l - half_arc), r, 0.0), -Vec3::x())
        } else {
            let a = PI / 2.0 + (s - 2.0 * l - half_arc) / r;
            (Vec3::new(-l / 2.0 + r * a.cos(), r * a.sin(), 0.0), Vec3::new(-a.sin(), a.cos(), 0.0))
        };
        (self.center + p, tan)
    }
}

impl AnalyticTrack for LoopTrack {
    fn position(&self, t: f64) -> Vec3 {
        self.at(self.speed * t).0
    }

    fn velocity(&self, t: f64) -> Vec3 {
        self.at(self.speed * t).1 * self.speed
    }
}

/// Samples `track` every `dt` over `[0, duration]`.
pub fn sample_truth(track: &dyn AnalyticTrack, duration: f64, dt: f64) -> Result<Vec<(f64, NavState)>> {
    if !(dt > 0.0) || !(duration >= dt) {
        return Err(Error::InvalidArgument(format!("need 0 < dt <= duration, got dt={dt} duration={duration}")));
    }
    let n = (duration / dt + 1e-9).floor() as usize;
    Ok((0..=n)
        .map(|k| {
            let t = k as f64 * dt;
            (t, NavState { p: track.position(t), v: track.velocity(t), q: track.orientation(t) })
        })
        .collect())
}

pub fn truth_record(truth: &[(f64, NavState)]) -> Result<TrajectoryRecord> {
    TrajectoryRecord::new(truth.iter().map(|(t, s)| (*t, s.pose())).collect())
}

/// Noise-free IMU samples under which the filter's own integration
/// reproduces the sampled velocities and attitudes exactly:
/// `f_k = R_kᵀ((v_{k+1} - v_k)/Δt - g)`, `ω_k = log(q_k⁻¹ q_{k+1})/Δt`.
/// The last sample repeats the one before it.
pub fn imu_from_truth(truth: &[(f64, NavState)], gravity: Vec3) -> Vec<ImuSample> {
    let mut out: Vec<ImuSample> = truth
        .windows(2)
        .map(|w| {
            let ((t0, a), (t1, b)) = (&w[0], &w[1]);
            let dt = t1 - t0;
            let f = a.q.inverse() * ((b.v - a.v) / dt - gravity);
            let w = (a.q.inverse() * b.q).scaled_axis() / dt;
            ImuSample { t: *t0, f, w }
        })
        .collect();
    if let (Some(last), Some(prev)) = (truth.last(), out.last().copied()) {
        out.push(ImuSample { t: last.0, ..prev });
    }
    out
}

/// Adds white noise of the given per-sample std to each axis.
pub fn add_imu_noise<R: rand::Rng + ?Sized>(imu: &[ImuSample], sigma_acc: f64, sigma_gyr: f64, rng: &mut R) -> Vec<ImuSample> {
    let mut n = |s: f64| Vec3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)) * s;
    imu.iter()
        .map(|s| ImuSample { t: s.t, f: s.f + n(sigma_acc), w: s.w + n(sigma_gyr) })
        .collect()
}

/// Visual-odometry stand-in: each truth position plus a bias growing by
/// `drift_rate` meters per meter travelled along a fixed random
/// horizontal direction, plus white noise of std `noise`. Reported
/// covariance is `noise²·I`.
pub fn synth_vo_stream<R: rand::Rng + ?Sized>(
    truth: &TrajectoryRecord,
    drift_rate: f64,
    noise: f64,
    rng: &mut R,
) -> Result<Vec<PositionMeasurement>> {
    if truth.is_empty() {
        return Err(Error::Empty("truth trajectory".into()));
    }
    let heading = rng.random_range(0.0..TAU);
    let dir = Vec3::new(heading.cos(), heading.sin(), 0.0);
    let r = Matrix3::identity() * noise * noise;
    let mut path = 0.0;
    let mut prev = truth.samples()[0].1.position;
    Ok(truth
        .samples()
        .iter()
        .map(|(t, pose)| {
            path += (pose.position - prev).norm();
            prev = pose.position;
            let white = Vec3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
            PositionMeasurement {
                t: *t,
                y: pose.position + dir * (drift_rate * path) + white * noise,
                r,
                source: MeasurementSource::Vo,
            }
        })
        .collect())
}

/// Every `stride`-th sample of a trajectory.
pub fn subsample(tr: &TrajectoryRecord, stride: usize) -> TrajectoryRecord {
    TrajectoryRecord::new(tr.samples().iter().step_by(stride.max(1)).copied().collect())
        .expect("subsequence of an ordered record is ordered")
}

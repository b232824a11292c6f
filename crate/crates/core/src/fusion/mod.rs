//! Error-state Kalman filter fusing IMU propagation with absolute position
//! measurements from carrier-phase fixes and visual odometry.
//!
//! The nominal state (position, velocity, attitude quaternion) is
//! integrated with the IMU; a 9-dimensional error state `(δp, δv, δθ)`
//! carries the covariance. Position measurements correct the error state,
//! which is injected back into the nominal state (`q ← q ⊗ q(δθ)`).

mod io;
pub mod sim;

pub use io::{read_imu_csv, read_measurement_csv, write_imu_csv, write_measurement_csv};

use nalgebra::{Matrix3, SMatrix, UnitQuaternion};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{Pose, TrajectoryRecord};
use crate::Vec3;

pub type Cov9 = SMatrix<f64, 9, 9>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NavState {
    pub p: Vec3,
    pub v: Vec3,
    /// world ← body
    pub q: UnitQuaternion<f64>,
}

impl NavState {
    pub fn pose(&self) -> Pose {
        Pose { position: self.p, orientation: self.q }
    }
}

/// Body-frame specific force and angular rate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    pub f: Vec3,
    pub w: Vec3,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MeasurementSource {
    #[serde(rename = "CPP")]
    Cpp,
    #[serde(rename = "VO")]
    Vo,
}

impl MeasurementSource {
    pub fn as_str(self) -> &'static str {
        match self {
            MeasurementSource::Cpp => "CPP",
            MeasurementSource::Vo => "VO",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PositionMeasurement {
    pub t: f64,
    pub y: Vec3,
    pub r: Matrix3<f64>,
    pub source: MeasurementSource,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    /// Accelerometer noise std, m/s².
    pub sigma_acc: f64,
    /// Gyroscope noise std, rad/s.
    pub sigma_gyr: f64,
    pub gravity: [f64; 3],
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { sigma_acc: 0.05, sigma_gyr: 1e-3, gravity: [0.0, 0.0, -9.81] }
    }
}

impl FilterConfig {
    pub fn gravity(&self) -> Vec3 {
        Vec3::from(self.gravity)
    }
}

pub fn skew(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Nominal state plus error covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct EsEkf {
    pub state: NavState,
    pub cov: Cov9,
    pub config: FilterConfig,
}

impl EsEkf {
    pub fn new(state: NavState, cov: Cov9, config: FilterConfig) -> Self {
        Self { state, cov, config }
    }

    /// Propagates over `dt` with one IMU sample held constant.
    pub fn predict(&mut self, f: &Vec3, w: &Vec3, dt: f64) -> Result<()> {
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!("prediction step {dt} must be positive")));
        }
        if !f.iter().chain(w.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("IMU sample".into()));
        }
        let g = self.config.gravity();
        let s = &mut self.state;
        let acc = s.q * f + g;
        s.p += dt * s.v + 0.5 * dt * dt * acc;
        s.v += dt * acc;
        let rf = s.q * f;
        s.q *= UnitQuaternion::from_scaled_axis(w * dt);
        s.q.renormalize();

        let mut fm = Cov9::identity();
        fm.fixed_view_mut::<3, 3>(0, 3).copy_from(&(Matrix3::identity() * dt));
        fm.fixed_view_mut::<3, 3>(3, 6).copy_from(&(-skew(&rf) * dt));
        // L maps accelerometer noise onto δv and gyro noise onto δθ, so
        // L Q Lᵀ only fills those two diagonal blocks.
        let mut lql = Cov9::zeros();
        let qa = (self.config.sigma_acc * dt).powi(2);
        let qg = (self.config.sigma_gyr * dt).powi(2);
        for i in 0..3 {
            lql[(3 + i, 3 + i)] = qa;
            lql[(6 + i, 6 + i)] = qg;
        }
        self.cov = fm * self.cov * fm.transpose() + lql;
        symmetrize(&mut self.cov);
        Ok(())
    }

    /// Direct position update, `H = [I 0 0]`.
    pub fn update(&mut self, y: &Vec3, r: &Matrix3<f64>) -> Result<()> {
        if !y.iter().chain(r.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("position measurement".into()));
        }
        let p = &self.cov;
        let s = p.fixed_view::<3, 3>(0, 0) + r;
        let s_inv = s.cholesky().ok_or(Error::SingularInnovation)?.inverse();
        let pht = p.fixed_view::<9, 3>(0, 0).into_owned();
        let k = pht * s_inv;
        let dx = k * (y - self.state.p);

        let st = &mut self.state;
        st.p += dx.fixed_rows::<3>(0);
        st.v += dx.fixed_rows::<3>(3);
        let dtheta: Vec3 = dx.fixed_rows::<3>(6).into_owned();
        st.q *= UnitQuaternion::from_scaled_axis(dtheta);
        st.q.renormalize();

        let mut ikh = Cov9::identity();
        for i in 0..9 {
            for j in 0..3 {
                ikh[(i, j)] -= k[(i, j)];
            }
        }
        self.cov = ikh * p * ikh.transpose() + k * r * k.transpose();
        symmetrize(&mut self.cov);
        Ok(())
    }
}

fn symmetrize(p: &mut Cov9) {
    *p = (*p + p.transpose()) * 0.5;
}

/// Event-driven filter run.
///
/// Each IMU sample is held over the interval to the next one. A
/// measurement inside an interval splits it: predict to the measurement
/// time, update, then continue. A measurement exactly at an IMU timestamp
/// is applied after the prediction that reaches it. One pose is emitted at
/// every IMU timestamp. Measurements before the first or after the last
/// IMU sample are ignored.
pub fn run_filter(
    imu: &[ImuSample],
    meas: &[PositionMeasurement],
    init: NavState,
    init_cov: Cov9,
    config: &FilterConfig,
) -> Result<TrajectoryRecord> {
    if let Some(w) = imu.windows(2).find(|w| !(w[1].t > w[0].t)) {
        return Err(Error::OutOfOrder(format!("IMU time {} after {}", w[1].t, w[0].t)));
    }
    if let Some(w) = meas.windows(2).find(|w| w[1].t < w[0].t) {
        return Err(Error::OutOfOrder(format!("measurement time {} after {}", w[1].t, w[0].t)));
    }
    let mut out = TrajectoryRecord::default();
    let Some(first) = imu.first() else {
        return Ok(out);
    };
    let mut ekf = EsEkf::new(init, init_cov, config.clone());
    let mut m = meas.partition_point(|x| x.t < first.t);
    while m < meas.len() && meas[m].t == first.t {
        ekf.update(&meas[m].y, &meas[m].r)?;
        m += 1;
    }
    out.push(first.t, ekf.state.pose())?;
    for k in 0..imu.len() - 1 {
        let (s, end) = (&imu[k], imu[k + 1].t);
        let mut now = s.t;
        while m < meas.len() && meas[m].t <= end {
            if meas[m].t > now {
                ekf.predict(&s.f, &s.w, meas[m].t - now)?;
                now = meas[m].t;
            }
            ekf.update(&meas[m].y, &meas[m].r)?;
            m += 1;
        }
        if end > now {
            ekf.predict(&s.f, &s.w, end - now)?;
        }
        out.push(end, ekf.state.pose())?;
    }
    Ok(out)
}

/// Re-expresses visual-odometry positions relative to the latest carrier-
/// phase fix: after a fix at `t_c`, each VO sample becomes
/// `y_cpp(t_c) + (y_vo(t) - y_vo(t_c))`, where `y_vo(t_c)` is the last VO
/// sample at or before `t_c`. VO samples before the first fix, or with no
/// VO sample at or before the fix, pass through unchanged. Odometry drift
/// then only accumulates across each fix gap.
pub fn reanchor_vo(vo: &[PositionMeasurement], cpp: &[PositionMeasurement]) -> Vec<PositionMeasurement> {
    let mut out = Vec::with_capacity(vo.len());
    let mut offset: Option<Vec3> = None;
    let mut c = 0;
    for (i, m) in vo.iter().enumerate() {
        while c < cpp.len() && cpp[c].t <= m.t {
            let at = vo[..=i].partition_point(|v| v.t <= cpp[c].t);
            if at > 0 {
                offset = Some(cpp[c].y - vo[at - 1].y);
            }
            c += 1;
        }
        let y = match offset {
            Some(o) => m.y + o,
            None => m.y,
        };
        out.push(PositionMeasurement { y, ..*m });
    }
    out
}

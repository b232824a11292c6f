use rand::Rng as _;

use super::{Region, ScenarioConfig};
use crate::error::{Error, Result};
use crate::rng::substream;
use crate::Vec3;

/// One timestamped UE position.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackSample {
    pub t: f64,
    pub position: Vec3,
}

/// A piecewise-linear UE track at constant speed.
#[derive(Clone, Debug, PartialEq)]
pub struct WaypointTrack {
    pub samples: Vec<TrackSample>,
    pub speed: f64,
}

impl WaypointTrack {
    pub fn path_length(&self) -> f64 {
        self.samples
            .windows(2)
            .map(|w| (w[1].position - w[0].position).norm())
            .sum()
    }

    pub fn duration(&self) -> f64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }
}

/// Random-waypoint mobility inside `area` at the configured UE speed.
///
/// Samples are emitted every `dt` seconds. When a waypoint is reached
/// between two regular samples, the waypoint itself is inserted as an
/// extra sample, so every consecutive pair lies on one straight leg and
/// moves at exactly the declared speed. The UE keeps the height of
/// `config.ue_init`; the start point is `ue_init` when it lies inside the
/// area and a random point otherwise.
pub fn generate_random_waypoint_track(
    config: &ScenarioConfig,
    area: &Region,
    duration: f64,
    dt: f64,
) -> Result<WaypointTrack> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    if !(duration >= dt) {
        return Err(Error::InvalidArgument(format!(
            "duration {duration} must be at least dt {dt}"
        )));
    }
    if !(area.width() > 0.0 && area.height() > 0.0) {
        return Err(Error::DegenerateArea(format!("{area:?}")));
    }
    let speed = config.ue_speed;
    let z = config.ue_init.z;
    let mut rng = substream(config.rng_seed, 0x7ac4);
    let draw = |rng: &mut crate::rng::Rng| {
        Vec3::new(
            rng.random_range(area.min[0]..=area.max[0]),
            rng.random_range(area.min[1]..=area.max[1]),
            z,
        )
    };

    let start = if area.contains(config.ue_init.x, config.ue_init.y) {
        config.ue_init
    } else {
        draw(&mut rng)
    };
    let mut samples = vec![TrackSample { t: 0.0, position: start }];
    if speed == 0.0 {
        let n = (duration / dt).floor() as usize;
        samples.extend((1..=n).map(|i| TrackSample { t: i as f64 * dt, position: start }));
        return Ok(WaypointTrack { samples, speed });
    }

    let n_steps = (duration / dt + 1e-9).floor() as usize;
    let mut pos = start;
    let mut t = 0.0;
    let mut target = draw(&mut rng);
    for step in 1..=n_steps {
        let t_next = step as f64 * dt;
        // move until the regular sample time, visiting waypoints on the way
        loop {
            let to_target = target - pos;
            let dist = to_target.norm();
            let remaining = t_next - t;
            if dist <= speed * remaining {
                let arrival = t + dist / speed;
                pos = target;
                t = arrival;
                target = draw(&mut rng);
                if t_next - arrival > 1e-9 * dt {
                    if arrival - samples.last().map_or(0.0, |s| s.t) > 1e-9 * dt {
                        samples.push(TrackSample { t: arrival, position: pos });
                    }
                    continue;
                }
                break;
            }
            pos += to_target * (speed * remaining / dist);
            break;
        }
        t = t_next;
        samples.push(TrackSample { t, position: pos });
    }
    Ok(WaypointTrack { samples, speed })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn area() -> Region {
        Region::new([80.0, 70.0], [170.0, 170.0]).unwrap()
    }

    #[test]
    fn path_length_is_speed_times_time() {
        let cfg = ScenarioConfig::umi();
        let track = generate_random_waypoint_track(&cfg, &area(), 60.0, 0.1).unwrap();
        assert!((track.path_length() - 50.0).abs() < 1e-6, "{}", track.path_length());
        assert!((track.duration() - 60.0).abs() < 1e-9);
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = ScenarioConfig::umi();
        let a = generate_random_waypoint_track(&cfg, &area(), 30.0, 0.5).unwrap();
        let b = generate_random_waypoint_track(&cfg, &area(), 30.0, 0.5).unwrap();
        assert_eq!(a, b);
        let mut other = cfg.clone();
        other.rng_seed += 1;
        let c = generate_random_waypoint_track(&other, &area(), 30.0, 0.5).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn invariants_hold_over_long_tracks() {
        let mut cfg = ScenarioConfig::umi();
        cfg.ue_speed = 12.0; // many waypoint turns
        let track = generate_random_waypoint_track(&cfg, &area(), 300.0, 1.0).unwrap();
        for w in track.samples.windows(2) {
            let dt = w[1].t - w[0].t;
            assert!(dt > 0.0);
            let v = (w[1].position - w[0].position).norm() / dt;
            assert!((v - cfg.ue_speed).abs() <= 0.01 * cfg.ue_speed, "speed {v}");
        }
        for s in &track.samples {
            assert!(area().contains(s.position.x, s.position.y));
            assert_eq!(s.position.z, 1.5);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let cfg = ScenarioConfig::umi();
        assert!(generate_random_waypoint_track(&cfg, &area(), 60.0, 0.0).is_err());
        assert!(generate_random_waypoint_track(&cfg, &area(), 0.05, 0.1).is_err());
        let flat = Region { min: [0.0, 0.0], max: [10.0, 0.0] };
        assert!(matches!(
            generate_random_waypoint_track(&cfg, &flat, 60.0, 0.1),
            Err(Error::DegenerateArea(_))
        ));
    }
}

use std::path::Path;

use crate::error::{Error, Result};
use crate::Vec3;

/// Axis-aligned box, the building primitive of an [`ObstacleMap`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Result<Self> {
        if !(min.iter().chain(max.iter()).all(|c| c.is_finite())) {
            return Err(Error::InvalidArgument("box corners must be finite".into()));
        }
        if (0..3).any(|i| min[i] > max[i]) {
            return Err(Error::InvalidArgument(format!(
                "box min corner {min:?} exceeds max corner {max:?}"
            )));
        }
        Ok(Self { min, max })
    }

    /// Strict containment: the point lies in the box interior.
    pub fn contains_interior(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] > self.min[i] && p[i] < self.max[i])
    }

    /// Does the open segment `a`–`b` pass through the box interior?
    ///
    /// Slab clipping against the open box; a segment that only grazes a
    /// face or edge is not blocked.
    pub fn blocks(&self, a: &Vec3, b: &Vec3) -> bool {
        let d = b - a;
        let mut t_enter = f64::NEG_INFINITY;
        let mut t_exit = f64::INFINITY;
        for i in 0..3 {
            if d[i] == 0.0 {
                if !(a[i] > self.min[i] && a[i] < self.max[i]) {
                    return false;
                }
            } else {
                let t1 = (self.min[i] - a[i]) / d[i];
                let t2 = (self.max[i] - a[i]) / d[i];
                let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
                t_enter = t_enter.max(lo);
                t_exit = t_exit.min(hi);
            }
        }
        t_enter.max(0.0) < t_exit.min(1.0)
    }
}

/// A set of box obstacles.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ObstacleMap {
    pub boxes: Vec<Aabb>,
}

impl ObstacleMap {
    pub fn new(boxes: Vec<Aabb>) -> Self {
        Self { boxes }
    }

    /// Parses one box per line: `xmin ymin zmin xmax ymax zmax`.
    /// Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut boxes = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(str::parse::<f64>)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("obstacle line {}: {e}", lineno + 1)))?;
            if vals.len() != 6 {
                return Err(Error::Parse(format!(
                    "obstacle line {}: expected 6 values, got {}",
                    lineno + 1,
                    vals.len()
                )));
            }
            boxes.push(Aabb::new(
                Vec3::new(vals[0], vals[1], vals[2]),
                Vec3::new(vals[3], vals[4], vals[5]),
            )?);
        }
        Ok(Self { boxes })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for b in &self.boxes {
            out.push_str(&format!(
                "{} {} {} {} {} {}\n",
                b.min.x, b.min.y, b.min.z, b.max.x, b.max.y, b.max.z
            ));
        }
        out
    }
}

/// True iff the open segment `tx`–`rx` crosses no box interior.
pub fn los_visible(tx: &Vec3, rx: &Vec3, map: &ObstacleMap) -> bool {
    !map.boxes.iter().any(|b| b.blocks(tx, rx))
}

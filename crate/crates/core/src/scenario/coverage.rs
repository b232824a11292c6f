use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{los_visible, ObstacleMap, TrpSite};
use crate::error::{Error, Result};
use crate::Vec3;

/// UE antenna height used for coverage cells, meters.
pub const UE_HEIGHT: f64 = 1.5;

/// Axis-aligned rectangle in the horizontal plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Region {
    pub fn new(min: [f64; 2], max: [f64; 2]) -> Result<Self> {
        let r = Self { min, max };
        if !(r.width() > 0.0 && r.height() > 0.0) {
            return Err(Error::DegenerateArea(format!("{r:?}")));
        }
        Ok(r)
    }

    pub fn width(&self) -> f64 {
        self.max[0] - self.min[0]
    }

    pub fn height(&self) -> f64 {
        self.max[1] - self.min[1]
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min[0] && x <= self.max[0] && y >= self.min[1] && y <= self.max[1]
    }
}

/// Per-cell count of TRPs in line of sight.
#[derive(Clone, Debug, PartialEq)]
pub struct CoverageGrid {
    pub region: Region,
    pub cell: f64,
    pub nx: usize,
    pub ny: usize,
    /// Row-major, `counts[iy * nx + ix]`.
    pub counts: Vec<usize>,
}

impl CoverageGrid {
    pub fn cell_center(&self, ix: usize, iy: usize) -> Vec3 {
        Vec3::new(
            self.region.min[0] + (ix as f64 + 0.5) * self.cell,
            self.region.min[1] + (iy as f64 + 0.5) * self.cell,
            UE_HEIGHT,
        )
    }

    pub fn count(&self, ix: usize, iy: usize) -> usize {
        self.counts[iy * self.nx + ix]
    }

    /// Fraction of cells with at least `min_los` TRPs visible.
    pub fn fraction_at_least(&self, min_los: usize) -> f64 {
        let hits = self.counts.iter().filter(|&&c| c >= min_los).count();
        hits as f64 / self.counts.len() as f64
    }

    /// Fraction of cells usable for trilateration (three or more LOS TRPs).
    pub fn positioning_fraction(&self) -> f64 {
        self.fraction_at_least(3)
    }

    /// LOS count of the cell containing `(x, y)`, if inside the grid.
    pub fn count_at(&self, x: f64, y: f64) -> Option<usize> {
        let fx = (x - self.region.min[0]) / self.cell;
        let fy = (y - self.region.min[1]) / self.cell;
        if fx < 0.0 || fy < 0.0 {
            return None;
        }
        let (ix, iy) = (fx as usize, fy as usize);
        (ix < self.nx && iy < self.ny).then(|| self.count(ix, iy))
    }
}

/// Counts, for every `cell`-sized square of `region`, the TRPs with a
/// direct line of sight to the cell centre at UE height. Partial cells at
/// the far edges are dropped.
pub fn coverage_grid(
    map: &ObstacleMap,
    trps: &[TrpSite],
    cell: f64,
    region: &Region,
) -> Result<CoverageGrid> {
    if !(cell > 0.0 && cell.is_finite()) {
        return Err(Error::InvalidArgument(format!("cell size must be positive, got {cell}")));
    }
    let nx = (region.width() / cell + 1e-9).floor() as usize;
    let ny = (region.height() / cell + 1e-9).floor() as usize;
    if nx == 0 || ny == 0 {
        return Err(Error::DegenerateArea(format!(
            "region {region:?} is smaller than one {cell} m cell"
        )));
    }
    let mut grid = CoverageGrid {
        region: *region,
        cell,
        nx,
        ny,
        counts: Vec::new(),
    };
    grid.counts = (0..nx * ny)
        .into_par_iter()
        .map(|idx| {
            let centre = grid.cell_center(idx % nx, idx / nx);
            trps.iter()
                .filter(|t| t.position != centre && los_visible(&t.position, &centre, map))
                .count()
        })
        .collect();
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Aabb;

    fn four_trps() -> Vec<TrpSite> {
        vec![
            TrpSite::new("a", 0.0, 0.0, 10.0),
            TrpSite::new("b", 100.0, 0.0, 10.0),
            TrpSite::new("c", 100.0, 100.0, 10.0),
            TrpSite::new("d", 0.0, 100.0, 10.0),
        ]
    }

    #[test]
    fn open_field_full_coverage() {
        let region = Region::new([0.0, 0.0], [100.0, 100.0]).unwrap();
        let grid = coverage_grid(&ObstacleMap::default(), &four_trps(), 5.0, &region).unwrap();
        assert_eq!((grid.nx, grid.ny), (20, 20));
        assert_eq!(grid.positioning_fraction(), 1.0);
    }

    #[test]
    fn single_trp_never_positions() {
        let region = Region::new([0.0, 0.0], [100.0, 100.0]).unwrap();
        let grid =
            coverage_grid(&ObstacleMap::default(), &four_trps()[..1], 5.0, &region).unwrap();
        assert_eq!(grid.positioning_fraction(), 0.0);
        assert_eq!(grid.fraction_at_least(1), 1.0);
    }

    #[test]
    fn region_smaller_than_cell() {
        let region = Region::new([0.0, 0.0], [4.0, 100.0]).unwrap();
        assert!(coverage_grid(&ObstacleMap::default(), &four_trps(), 5.0, &region).is_err());
        assert!(coverage_grid(&ObstacleMap::default(), &four_trps(), 0.0, &region).is_err());
    }

    #[test]
    fn lookup_by_coordinates() {
        let region = Region::new([0.0, 0.0], [100.0, 100.0]).unwrap();
        let map = ObstacleMap::new(vec![
            Aabb::new(Vec3::new(40.0, 40.0, 0.0), Vec3::new(60.0, 60.0, 30.0)).unwrap(),
        ]);
        let grid = coverage_grid(&map, &four_trps(), 5.0, &region).unwrap();
        assert_eq!(grid.count_at(50.0, 50.0), Some(0));
        // the diagonal to the far corner crosses the block
        assert_eq!(grid.count_at(1.0, 1.0), Some(3));
        assert_eq!(grid.count_at(-1.0, 1.0), None);
        assert_eq!(grid.count_at(100.5, 1.0), None);
    }
}

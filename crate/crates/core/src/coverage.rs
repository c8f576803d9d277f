//! Surface coverage: a straight PCA centerline, cylindrical unrolling of a
//! point cloud onto an (arclength, angle) grid, binary morphology on that
//! grid, and the fraction of cells seen.
//!
//! Map layout: columns index arclength `s` (left to right), rows index the
//! circumferential angle `theta` in `[0, 2 pi)` (top to bottom).

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::depth_eval::quantile_sorted;
use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::grid::Grid;
use crate::reconstruct::PointCloud;

/// Leading eigenvalues closer than this (relative) make the axis ambiguous.
pub const AMBIGUITY_TOLERANCE: f64 = 1e-6;

/// Straight centerline with a reference direction for measuring angles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Centerline {
    pub origin: Vector3<f64>,
    /// Unit direction of increasing arclength.
    pub axis: Vector3<f64>,
    /// Unit vector perpendicular to `axis`; `theta = 0` points along it.
    pub reference: Vector3<f64>,
    /// The two largest covariance eigenvalues coincide, so the axis
    /// direction is arbitrary within their plane.
    pub ambiguous: bool,
}

impl Centerline {
    /// Centerline through `origin` along `axis` with the default reference
    /// direction.
    pub fn new(origin: Vector3<f64>, axis: Vector3<f64>) -> Result<Self> {
        let n = axis.norm();
        if !(n > 0.0 && n.is_finite()) || !origin.iter().all(|x| x.is_finite()) {
            return Err(Error::invalid("centerline axis must be a finite non-zero vector"));
        }
        let axis = axis / n;
        Ok(Self {
            origin,
            axis,
            reference: perpendicular_reference(&axis),
            ambiguous: false,
        })
    }

    /// `theta = pi / 2` direction.
    pub fn binormal(&self) -> Vector3<f64> {
        self.axis.cross(&self.reference)
    }

    pub fn transformed(&self, g: &Pose<f64>) -> Centerline {
        Centerline {
            origin: g.transform(&self.origin),
            axis: g.rotation() * self.axis,
            reference: g.rotation() * self.reference,
            ambiguous: self.ambiguous,
        }
    }

    /// `(s, theta)` of a point, `theta` in `[0, 2 pi)`.
    pub fn cylindrical(&self, p: &Vector3<f64>) -> (f64, f64) {
        let d = p - self.origin;
        let s = d.dot(&self.axis);
        let theta = d.dot(&self.binormal()).atan2(d.dot(&self.reference));
        let theta = if theta < 0.0 { theta + std::f64::consts::TAU } else { theta };
        // -0.0 and values rounding up to 2 pi wrap to 0.
        (s, if theta >= std::f64::consts::TAU { 0.0 } else { theta.abs() })
    }
}

/// Unit vector perpendicular to `axis`: `axis x (+y)`, or `axis x (+x)` when
/// the axis is (nearly) vertical.
pub fn perpendicular_reference(axis: &Vector3<f64>) -> Vector3<f64> {
    let up = Vector3::y();
    let c = axis.cross(&up);
    if c.norm() > 1e-6 {
        c.normalize()
    } else {
        axis.cross(&Vector3::x()).normalize()
    }
}

/// Centroid and first principal direction of the point positions.
///
/// The sign of the axis makes its dot product with `direction_hint`
/// non-negative (typically the first-to-last camera displacement); without a
/// hint, with `+x`, falling back to `+y` then `+z` when that dot is zero.
pub fn pca_centerline(cloud: &PointCloud, direction_hint: Option<&Vector3<f64>>) -> Result<Centerline> {
    if cloud.len() < 3 {
        return Err(Error::invalid("centerline estimation needs at least 3 points"));
    }
    let n = cloud.len() as f64;
    let centroid = cloud.positions().fold(Vector3::zeros(), |a, p| a + p) / n;
    let cov = cloud.positions().fold(Matrix3::zeros(), |a, p| {
        let d = p - centroid;
        a + d * d.transpose()
    }) / n;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let (l1, l2) = (eig.eigenvalues[order[0]], eig.eigenvalues[order[1]]);
    if !(l1 > 0.0) {
        return Err(Error::Numerical("point cloud has no spatial extent".into()));
    }
    let ambiguous = l1 - l2 <= AMBIGUITY_TOLERANCE * l1;
    if ambiguous {
        log::warn!("principal axis is ambiguous (eigenvalues {l1:.6e}, {l2:.6e})");
    }
    let mut axis: Vector3<f64> = eig.eigenvectors.column(order[0]).into_owned().normalize();
    let flip = match direction_hint {
        Some(h) => axis.dot(h) < 0.0,
        None => {
            let lead = [axis.x, axis.y, axis.z].into_iter().find(|&c| c != 0.0).unwrap_or(0.0);
            lead < 0.0
        }
    };
    if flip {
        axis = -axis;
    }
    Ok(Centerline {
        origin: centroid,
        axis,
        reference: perpendicular_reference(&axis),
        ambiguous,
    })
}

/// Seen/unseen cells over `[s_min, s_max] x [0, 2 pi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageMap {
    /// Width `n_s` (arclength), height `n_theta` (angle).
    pub grid: Grid<bool>,
    pub s_min: f64,
    pub s_max: f64,
    pub centerline: Centerline,
}

impl CoverageMap {
    pub fn n_s(&self) -> usize {
        self.grid.width()
    }

    pub fn n_theta(&self) -> usize {
        self.grid.height()
    }

    pub fn with_grid(&self, grid: Grid<bool>) -> CoverageMap {
        CoverageMap {
            grid,
            ..self.clone()
        }
    }
}

pub const DEFAULT_BINS: (usize, usize) = (256, 64);
/// Fraction of points dropped at each end of the arclength range.
pub const S_PERCENTILE: f64 = 0.01;
/// Half-width of the arclength range when every point has the same `s`.
const DEGENERATE_HALF_RANGE_MM: f64 = 0.5;

/// Bins every point by `(s, theta)`. The arclength range is the 1st to 99th
/// percentile of `s`; points outside it are ignored.
pub fn unroll(cloud: &PointCloud, centerline: &Centerline, bins: (usize, usize)) -> Result<CoverageMap> {
    let (n_s, n_theta) = bins;
    if n_s < 1 || n_theta < 1 {
        return Err(Error::invalid("coverage bins must be at least 1x1"));
    }
    if cloud.is_empty() {
        return Err(Error::invalid("cannot unroll an empty point cloud"));
    }
    let coords: Vec<(f64, f64)> = cloud.points.par_iter().map(|p| centerline.cylindrical(&p.xyz)).collect();
    let mut s_sorted: Vec<f64> = coords.iter().map(|c| c.0).collect();
    s_sorted.sort_by(f64::total_cmp);
    let mut s_min = quantile_sorted(&s_sorted, S_PERCENTILE);
    let mut s_max = quantile_sorted(&s_sorted, 1.0 - S_PERCENTILE);
    if s_max <= s_min {
        let mid = s_min;
        s_min = mid - DEGENERATE_HALF_RANGE_MM;
        s_max = mid + DEGENERATE_HALF_RANGE_MM;
    }
    let ds = (s_max - s_min) / n_s as f64;
    let dtheta = std::f64::consts::TAU / n_theta as f64;
    let cells = coords
        .par_chunks(4096)
        .map(|chunk| {
            let mut seen = vec![false; n_s * n_theta];
            for &(s, theta) in chunk {
                if s < s_min || s > s_max {
                    continue;
                }
                let i = (((s - s_min) / ds).floor() as usize).min(n_s - 1);
                let j = ((theta / dtheta).floor() as usize).min(n_theta - 1);
                seen[j * n_s + i] = true;
            }
            seen
        })
        .reduce(
            || vec![false; n_s * n_theta],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x |= y;
                }
                a
            },
        );
    Ok(CoverageMap {
        grid: Grid::from_vec(n_s, n_theta, cells).expect("sized"),
        s_min,
        s_max,
        centerline: *centerline,
    })
}

/// One-dimensional pass of a square-element min (erode) or max (dilate)
/// filter: rows (theta) wrap around, columns (s) clamp to the edge.
fn filter_pass(grid: &Grid<bool>, radius: usize, along_s: bool, erode: bool) -> Grid<bool> {
    let (w, h) = (grid.width(), grid.height());
    let r = radius as isize;
    Grid::from_fn(w, h, |col, row| {
        let mut acc = erode;
        for k in -r..=r {
            let v = if along_s {
                let c = (col as isize + k).clamp(0, w as isize - 1) as usize;
                grid.at(c, row)
            } else {
                let rr = (row as isize + k).rem_euclid(h as isize) as usize;
                grid.at(col, rr)
            };
            if erode {
                acc &= v;
            } else {
                acc |= v;
            }
        }
        acc
    })
}

pub fn erode(grid: &Grid<bool>, radius: usize) -> Grid<bool> {
    if radius == 0 {
        return grid.clone();
    }
    filter_pass(&filter_pass(grid, radius, true, true), radius, false, true)
}

pub fn dilate(grid: &Grid<bool>, radius: usize) -> Grid<bool> {
    if radius == 0 {
        return grid.clone();
    }
    filter_pass(&filter_pass(grid, radius, true, false), radius, false, false)
}

pub fn opening(grid: &Grid<bool>, radius: usize) -> Grid<bool> {
    dilate(&erode(grid, radius), radius)
}

pub fn closing(grid: &Grid<bool>, radius: usize) -> Grid<bool> {
    erode(&dilate(grid, radius), radius)
}

/// Opening with `open_radius`, then closing with `close_radius`, both with a
/// `(2r + 1) x (2r + 1)` square element.
pub fn morph_clean(map: &CoverageMap, open_radius: usize, close_radius: usize) -> CoverageMap {
    map.with_grid(closing(&opening(&map.grid, open_radius), close_radius))
}

/// Seen cells over all cells of the map.
pub fn coverage_ratio(map: &CoverageMap) -> f64 {
    let seen = map.grid.as_slice().iter().filter(|&&x| x).count();
    seen as f64 / map.grid.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoverageConfig {
    pub n_s: usize,
    pub n_theta: usize,
    pub open_radius: usize,
    pub close_radius: usize,
}

impl Default for CoverageConfig {
    fn default() -> Self {
        Self {
            n_s: DEFAULT_BINS.0,
            n_theta: DEFAULT_BINS.1,
            open_radius: 1,
            close_radius: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageSummary {
    pub coverage_ratio: f64,
    pub n_s: usize,
    pub n_theta: usize,
    pub s_min: f64,
    pub s_max: f64,
}

/// Centerline, unrolling, cleaning and ratio in one call. Returns the
/// cleaned map.
pub fn assess(
    cloud: &PointCloud,
    direction_hint: Option<&Vector3<f64>>,
    config: &CoverageConfig,
) -> Result<(CoverageMap, CoverageSummary)> {
    let centerline = pca_centerline(cloud, direction_hint)?;
    let raw = unroll(cloud, &centerline, (config.n_s, config.n_theta))?;
    let clean = morph_clean(&raw, config.open_radius, config.close_radius);
    let summary = CoverageSummary {
        coverage_ratio: coverage_ratio(&clean),
        n_s: clean.n_s(),
        n_theta: clean.n_theta(),
        s_min: clean.s_min,
        s_max: clean.s_max,
    };
    Ok((clean, summary))
}

/// 255 for seen cells.
pub fn map_to_image(map: &CoverageMap) -> Grid<u8> {
    map.grid.map(|&s| if s { 255 } else { 0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reconstruct::CloudPoint;
    use std::f64::consts::{PI, TAU};

    fn cylinder(n_s: usize, n_t: usize, radius: f64, length: f64, theta_max: f64) -> PointCloud {
        let mut pts = Vec::new();
        for i in 0..n_s {
            let z = length * (i as f64 + 0.5) / n_s as f64 - length / 2.0;
            for j in 0..n_t {
                let t = theta_max * (j as f64 + 0.5) / n_t as f64;
                pts.push(CloudPoint::new(Vector3::new(radius * t.cos(), radius * t.sin(), z)));
            }
        }
        PointCloud::new(pts).unwrap()
    }

    /// Brute-force morphology: every cell of the square neighborhood with
    /// explicit wrap/clamp indexing.
    fn naive(grid: &Grid<bool>, r: usize, erode: bool) -> Grid<bool> {
        let (w, h) = (grid.width() as isize, grid.height() as isize);
        let r = r as isize;
        Grid::from_fn(grid.width(), grid.height(), |c, rr| {
            let mut vals = Vec::new();
            for dy in -r..=r {
                for dx in -r..=r {
                    let cc = (c as isize + dx).clamp(0, w - 1);
                    let yy = (rr as isize + dy).rem_euclid(h);
                    vals.push(grid.at(cc as usize, yy as usize));
                }
            }
            if erode {
                vals.iter().all(|&v| v)
            } else {
                vals.iter().any(|&v| v)
            }
        })
    }

    #[test]
    fn axis_of_straight_cylinder() {
        let c = pca_centerline(&cylinder(200, 36, 10.0, 100.0, TAU), None).unwrap();
        assert!((c.axis.z.abs() - 1.0).abs() < 1e-6);
        assert!(c.origin.norm() < 1e-9);
        assert!(!c.ambiguous);
        assert!((c.reference.dot(&c.axis)).abs() < 1e-12);
        let hinted = pca_centerline(&cylinder(200, 36, 10.0, 100.0, TAU), Some(&Vector3::new(0.0, 0.0, -3.0))).unwrap();
        assert!(hinted.axis.z < 0.0);
    }

    #[test]
    fn sphere_like_cloud_is_ambiguous() {
        let mut pts = Vec::new();
        for v in [-1.0, 1.0] {
            pts.push(CloudPoint::new(Vector3::new(v, 0.0, 0.0)));
            pts.push(CloudPoint::new(Vector3::new(0.0, v, 0.0)));
        }
        let c = pca_centerline(&PointCloud::new(pts).unwrap(), None).unwrap();
        assert!(c.ambiguous);
        assert!(pca_centerline(&PointCloud::new(vec![CloudPoint::new(Vector3::zeros()); 2]).unwrap(), None).is_err());
    }

    #[test]
    fn full_and_half_shells() {
        let full = cylinder(512, 128, 10.0, 100.0, TAU);
        let c = pca_centerline(&full, None).unwrap();
        let m = unroll(&full, &c, (64, 32)).unwrap();
        assert_eq!(coverage_ratio(&m), 1.0);

        let half = cylinder(512, 128, 10.0, 100.0, PI);
        let reference = Vector3::x();
        let axis = Vector3::z();
        let cl = Centerline {
            origin: Vector3::zeros(),
            axis,
            reference,
            ambiguous: false,
        };
        let m = unroll(&half, &cl, (64, 32)).unwrap();
        for row in 0..32 {
            for col in 0..64 {
                assert_eq!(m.grid.at(col, row), row < 16);
            }
        }
        assert_eq!(coverage_ratio(&m), 0.5);
    }

    #[test]
    fn single_point_marks_one_cell() {
        let cloud = PointCloud::new(vec![CloudPoint::new(Vector3::new(1.0, 2.0, 3.0))]).unwrap();
        let c = Centerline::new(Vector3::zeros(), Vector3::z()).unwrap();
        let m = unroll(&cloud, &c, (8, 8)).unwrap();
        assert_eq!(m.grid.as_slice().iter().filter(|&&x| x).count(), 1);
        assert!(unroll(&PointCloud::default(), &c, (8, 8)).is_err());
        assert!(unroll(&cloud, &c, (0, 8)).is_err());
    }

    #[test]
    fn morphology_matches_brute_force() {
        let mut state = 12345u64;
        let grid = Grid::from_fn(23, 17, |_, _| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 33) % 3 != 0
        });
        for r in 0..4 {
            assert_eq!(erode(&grid, r), naive(&grid, r, true));
            assert_eq!(dilate(&grid, r), naive(&grid, r, false));
        }
    }

    #[test]
    fn isolated_cell_is_opened_away() {
        let mut g = Grid::filled(5, 5, false);
        g.set(2, 2, true);
        assert!(opening(&g, 1).as_slice().iter().all(|&x| !x));
        let all = Grid::filled(5, 5, true);
        assert_eq!(opening(&all, 1), all);
        assert_eq!(closing(&all, 2), all);
        assert_eq!(opening(&g, 0), g);
    }

    #[test]
    fn ratio_counts() {
        let c = Centerline::new(Vector3::zeros(), Vector3::z()).unwrap();
        let mk = |g| CoverageMap {
            grid: g,
            s_min: 0.0,
            s_max: 1.0,
            centerline: c,
        };
        assert_eq!(coverage_ratio(&mk(Grid::filled(4, 6, true))), 1.0);
        assert_eq!(coverage_ratio(&mk(Grid::filled(4, 6, false))), 0.0);
        assert_eq!(coverage_ratio(&mk(Grid::from_fn(4, 6, |c, r| (c + r) % 2 == 0))), 0.5);
    }
}

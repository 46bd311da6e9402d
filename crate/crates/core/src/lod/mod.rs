//! Multi-resolution point clouds and distance-based level selection.

use std::collections::HashMap;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{Aabb, ColoredPoint, Mesh};
use crate::model::GaussianSplat;
use crate::projection::{PinholeCamera, NEAR_PLANE};

pub const DEFAULT_TAU: f64 = 0.04;
pub const DEFAULT_EPS_P: usize = 10_000;
/// Initial opacity of splats seeded from points.
pub const INIT_OPACITY: f64 = 0.1;
const CANDIDATES_PER_DISK: f64 = 30.0;

/// Level for a splat or node at distance `d`: `clamp(floor(L^(1 - d/d_max)), 0, L-1)`.
pub fn select_level(d: f64, d_max: f64, levels: usize) -> usize {
    debug_assert!(d >= 0.0 && d_max > 0.0 && levels >= 1);
    let v = (levels as f64).powf(1.0 - d / d_max).floor();
    if v.is_nan() || v < 0.0 {
        0
    } else {
        (v as usize).min(levels - 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CloudLevel {
    pub spacing: f64,
    pub points: Vec<ColoredPoint>,
}

/// Level 0 is the coarsest, the last level the finest.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiResCloud {
    pub levels: Vec<CloudLevel>,
}

impl MultiResCloud {
    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    /// One isotropic splat per point, with standard deviation equal to the
    /// level spacing.
    pub fn init_splats(&self) -> Vec<Vec<GaussianSplat>> {
        self.levels
            .iter()
            .enumerate()
            .map(|(l, level)| {
                level
                    .points
                    .iter()
                    .map(|p| GaussianSplat::from_point(p.position, p.color, level.spacing, INIT_OPACITY, l as u8))
                    .collect()
            })
            .collect()
    }

    pub fn bounds(&self) -> Option<Aabb> {
        Aabb::from_points(self.levels.iter().flat_map(|l| l.points.iter().map(|p| &p.position)))
    }
}

type Cell = (i64, i64, i64);

fn cell_of(p: &Vector3<f64>, cell: f64) -> Cell {
    ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64, (p.z / cell).floor() as i64)
}

/// Greedy Poisson-disk selection in input order: a point is kept iff no
/// previously kept point lies closer than `spacing`. Returns kept indices.
pub fn poisson_disk_indices(points: &[Vector3<f64>], spacing: f64) -> Vec<usize> {
    assert!(spacing > 0.0);
    let cell = spacing / 3f64.sqrt();
    let mut grid: HashMap<Cell, Vec<usize>> = HashMap::new();
    let mut kept = Vec::new();
    let r2 = spacing * spacing;
    for (i, p) in points.iter().enumerate() {
        let c = cell_of(p, cell);
        let mut free = true;
        'scan: for dx in -2..=2 {
            for dy in -2..=2 {
                for dz in -2..=2 {
                    if let Some(list) = grid.get(&(c.0 + dx, c.1 + dy, c.2 + dz)) {
                        if list.iter().any(|&j| (points[j] - p).norm_squared() < r2) {
                            free = false;
                            break 'scan;
                        }
                    }
                }
            }
        }
        if free {
            grid.entry(c).or_default().push(i);
            kept.push(i);
        }
    }
    kept
}

pub fn poisson_disk(points: &[ColoredPoint], spacing: f64) -> Vec<ColoredPoint> {
    let pos: Vec<_> = points.iter().map(|p| p.position).collect();
    poisson_disk_indices(&pos, spacing).into_iter().map(|i| points[i]).collect()
}

/// Area-weighted random surface samples thinned to the given spacing, with
/// barycentrically interpolated vertex colors.
pub fn sample_mesh(mesh: &Mesh, spacing: f64, seed: u64) -> Result<Vec<ColoredPoint>> {
    mesh.validate()?;
    if !(spacing > 0.0) || !spacing.is_finite() {
        return Err(Error::invalid(format!("sample_mesh: spacing must be positive, got {spacing}")));
    }
    let areas: Vec<f64> = (0..mesh.faces.len()).map(|f| mesh.face_area(f)).collect();
    let total: f64 = areas.iter().sum();
    if !(total > 0.0) {
        return Err(Error::EmptyInput("sample_mesh: mesh has zero area".into()));
    }
    let mut cdf = Vec::with_capacity(areas.len());
    let mut acc = 0.0;
    for a in &areas {
        acc += a;
        cdf.push(acc);
    }
    let count = ((CANDIDATES_PER_DISK * total / (spacing * spacing)).ceil() as usize).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut candidates = Vec::with_capacity(count);
    for _ in 0..count {
        let u = rng.gen::<f64>() * total;
        let face = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
        let (r1, r2): (f64, f64) = (rng.gen(), rng.gen());
        let s = r1.sqrt();
        let w = [1.0 - s, s * (1.0 - r2), s * r2];
        let f = mesh.faces[face];
        let mut pos = Vector3::zeros();
        let mut color = [0.0; 3];
        for k in 0..3 {
            pos += mesh.vertices[f[k] as usize] * w[k];
            for (c, v) in color.iter_mut().zip(mesh.colors[f[k] as usize]) {
                *c += v * w[k];
            }
        }
        candidates.push(ColoredPoint::new(pos, color));
    }
    Ok(poisson_disk(&candidates, spacing))
}

/// Keeps the input as the finest level, then doubles the spacing and thins
/// the previous level until fewer than `eps_p` points remain.
pub fn build_levels(points: &[ColoredPoint], tau: f64, eps_p: usize) -> Result<MultiResCloud> {
    if points.is_empty() {
        return Err(Error::EmptyInput("build_levels: no points".into()));
    }
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::invalid(format!("build_levels: tau must be positive, got {tau}")));
    }
    if eps_p < 2 {
        return Err(Error::invalid("build_levels: eps_p must be at least 2"));
    }
    let mut finest_first = vec![CloudLevel {
        spacing: tau,
        points: points.to_vec(),
    }];
    while finest_first.last().unwrap().points.len() >= eps_p {
        let prev = finest_first.last().unwrap();
        let spacing = prev.spacing * 2.0;
        finest_first.push(CloudLevel {
            spacing,
            points: poisson_disk(&prev.points, spacing),
        });
    }
    finest_first.reverse();
    Ok(MultiResCloud { levels: finest_first })
}

/// Diameter of the sphere circumscribing the bounding box of the points.
pub fn scene_diameter<'a>(points: impl IntoIterator<Item = &'a Vector3<f64>>) -> f64 {
    Aabb::from_points(points).map_or(0.0, |b| b.diagonal())
}

/// Largest camera-space depth among points that project inside the image,
/// or `fallback` when none does.
pub fn per_view_dmax(points: &[Vector3<f64>], camera: &PinholeCamera, fallback: f64) -> f64 {
    let mut best: Option<f64> = None;
    for p in points {
        let m = camera.world_to_camera(p);
        if m.z <= NEAR_PLANE {
            continue;
        }
        let (u, v) = camera.project_camera_point(&m);
        if u >= 0.0 && v >= 0.0 && u < camera.width as f64 && v < camera.height as f64 {
            best = Some(best.map_or(m.z, |b: f64| b.max(m.z)));
        }
    }
    best.unwrap_or(fallback)
}

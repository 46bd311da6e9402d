//! Input conditioning: fisheye splitting, mesh cleanup against the point
//! cloud, block partitioning and per-block view selection.

mod fisheye;
mod mesh_raster;

pub use fisheye::{split_fisheye, FisheyeModel, RigPose, SplitView, VirtualView};
pub use mesh_raster::{rasterize_mesh, render_mesh_depth, MeshRaster};

use nalgebra::Vector3;
use rayon::prelude::*;
use rstar::RTree;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Aabb, Mesh};
use crate::projection::PinholeCamera;

pub const DEFAULT_CLEAN_THRESHOLD: f64 = 0.1;
pub const DEFAULT_EXPANSION: f64 = 0.3;
pub const DEFAULT_OVERLAP_THRESHOLD: f64 = 0.8;
/// Coverage rasters are drawn at this fraction of the camera resolution.
pub const COVERAGE_SCALE: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct CleanedMesh {
    pub mesh: Mesh,
    /// Indices into the input faces, ascending.
    pub removed: Vec<usize>,
}

/// Nearest cloud-point distance from each face centroid.
pub fn face_distances(mesh: &Mesh, cloud: &[Vector3<f64>]) -> Result<Vec<f64>> {
    if cloud.is_empty() {
        return Err(Error::EmptyInput("point cloud".into()));
    }
    let tree = RTree::bulk_load(cloud.iter().map(|p| [p.x, p.y, p.z]).collect());
    Ok((0..mesh.faces.len())
        .into_par_iter()
        .map(|f| {
            let c = mesh.face_centroid(f);
            let q = [c.x, c.y, c.z];
            let p = tree.nearest_neighbor(q).expect("tree is non-empty");
            (Vector3::from(*p) - c).norm()
        })
        .collect())
}

/// Drops faces whose centroid is farther than `threshold` from every cloud
/// point.
pub fn clean_mesh(mesh: &Mesh, cloud: &[Vector3<f64>], threshold: f64) -> Result<CleanedMesh> {
    if threshold.is_nan() {
        return Err(Error::invalid("clean threshold is NaN"));
    }
    mesh.validate()?;
    let dist = face_distances(mesh, cloud)?;
    let removed: Vec<usize> = (0..dist.len()).filter(|&f| dist[f] > threshold).collect();
    let cleaned = mesh.with_faces(|f| dist[f] <= threshold);
    Ok(CleanedMesh { mesh: cleaned, removed })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub id: usize,
    pub cell: (usize, usize),
    pub core: [f64; 6],
    pub expanded: [f64; 6],
    pub views: Vec<usize>,
}

impl Block {
    pub fn core_box(&self) -> Aabb {
        Aabb::from_array(self.core)
    }

    pub fn expanded_box(&self) -> Aabb {
        Aabb::from_array(self.expanded)
    }
}

/// Regular `nx`×`ny` grid over the horizontal (x, y) footprint. Each core
/// spans the full vertical extent; the expanded box grows the core's x and
/// y extents by `expansion` in total, split evenly between the two sides.
pub fn partition_blocks(scene: &Aabb, nx: usize, ny: usize, expansion: f64) -> Result<Vec<Block>> {
    if nx == 0 || ny == 0 {
        return Err(Error::invalid(format!("block grid must be at least 1x1, got {nx}x{ny}")));
    }
    if !(expansion >= 0.0) {
        return Err(Error::invalid(format!("block expansion must be non-negative, got {expansion}")));
    }
    let edges = |lo: f64, hi: f64, n: usize| -> Vec<f64> {
        (0..=n).map(|i| if i == n { hi } else { lo + (hi - lo) * i as f64 / n as f64 }).collect()
    };
    let xs = edges(scene.min.x, scene.max.x, nx);
    let ys = edges(scene.min.y, scene.max.y, ny);
    let mut blocks = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let core = Aabb::new(Vector3::new(xs[i], ys[j], scene.min.z), Vector3::new(xs[i + 1], ys[j + 1], scene.max.z));
            let grown = core.expanded([expansion, expansion, 0.0]);
            blocks.push(Block {
                id: blocks.len(),
                cell: (i, j),
                core: core.to_array(),
                expanded: grown.to_array(),
                views: Vec::new(),
            });
        }
    }
    Ok(blocks)
}

/// Faces whose centroid lies inside the block's expanded box.
pub fn block_faces(mesh: &Mesh, block: &Block) -> Vec<bool> {
    let bb = block.expanded_box();
    (0..mesh.faces.len()).map(|f| bb.contains(&mesh.face_centroid(f))).collect()
}

/// Share of the mesh's coverage in `camera` that belongs to the block,
/// from binary rasters at reduced resolution.
pub fn block_overlap(mesh: &Mesh, in_block: &[bool], camera: &PinholeCamera) -> Result<f64> {
    let small = camera.scaled(COVERAGE_SCALE)?;
    let full = rasterize_mesh(mesh, &small, |_| true).covered();
    if full == 0 {
        return Ok(0.0);
    }
    let block = rasterize_mesh(mesh, &small, |f| in_block[f]).covered();
    Ok(block as f64 / full as f64)
}

/// Cameras positioned inside the core box, plus outside cameras whose
/// block overlap exceeds `threshold`.
pub fn select_views(block: &Block, cameras: &[PinholeCamera], mesh: &Mesh, threshold: f64) -> Result<Vec<usize>> {
    let core = block.core_box();
    let in_block = block_faces(mesh, block);
    let keep: Vec<Result<bool>> = cameras
        .par_iter()
        .map(|cam| {
            if core.contains(&cam.center()) {
                return Ok(true);
            }
            Ok(block_overlap(mesh, &in_block, cam)? > threshold)
        })
        .collect();
    let mut out = Vec::new();
    for (i, k) in keep.into_iter().enumerate() {
        if k? {
            out.push(i);
        }
    }
    if out.is_empty() {
        log::warn!("block {} has no training views", block.id);
    }
    Ok(out)
}

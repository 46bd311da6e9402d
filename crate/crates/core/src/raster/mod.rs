//! Tile-based splatting of color and expected depth.
//!
//! Splats are projected once per frame, sorted globally front-to-back by
//! camera-space depth (splat index breaks ties), binned into square tiles
//! and alpha-composited per pixel. Pixel `(x, y)` is sampled at
//! `(x + 0.5, y + 0.5)`.
//!
//! The depth buffer holds the raw composite `Σ dᵢ αᵢ Tᵢ`, where `dᵢ` is the
//! expected depth of splat `i` along the pixel ray; it is not divided by the
//! accumulated alpha.

mod backward;
pub mod image_io;

use nalgebra::{Matrix2, Matrix3, Vector3};
use rayon::prelude::*;

pub use backward::{gradients_for, rasterize_backward, FrameGradients, SplatGradients};

use crate::error::{Error, Result};
use crate::model::{self, GaussianSplat, Quat};
use crate::projection::{self, PinholeCamera, LOW_PASS_FLOOR, NEAR_PLANE};

#[derive(Debug, Clone, PartialEq)]
pub struct RenderSettings {
    pub tile_size: u32,
    /// Contributions with alpha below this are skipped.
    pub alpha_cutoff: f64,
    pub alpha_cap: f64,
    pub background: [f64; 3],
    /// A pixel stops compositing once its transmittance drops below this.
    pub min_transmittance: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        RenderSettings {
            tile_size: 16,
            alpha_cutoff: 1.0 / 255.0,
            alpha_cap: 0.99,
            background: [0.0; 3],
            min_transmittance: 1e-4,
        }
    }
}

impl RenderSettings {
    pub fn validate(&self) -> Result<()> {
        if self.tile_size == 0 {
            return Err(Error::invalid("tile_size must be positive"));
        }
        if !(0.0 < self.alpha_cutoff && self.alpha_cutoff < self.alpha_cap && self.alpha_cap < 1.0) {
            return Err(Error::invalid(format!(
                "need 0 < alpha_cutoff ({}) < alpha_cap ({}) < 1",
                self.alpha_cutoff, self.alpha_cap
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameBuffer {
    pub width: u32,
    pub height: u32,
    /// Row-major RGB, `3 * width * height` values.
    pub color: Vec<f64>,
    pub depth: Vec<f64>,
    pub transmittance: Vec<f64>,
}

impl FrameBuffer {
    pub fn new(width: u32, height: u32, background: [f64; 3]) -> Self {
        let n = (width * height) as usize;
        FrameBuffer {
            width,
            height,
            color: background.iter().copied().cycle().take(3 * n).collect(),
            depth: vec![0.0; n],
            transmittance: vec![1.0; n],
        }
    }

    pub fn pixel_count(&self) -> usize {
        (self.width * self.height) as usize
    }

    pub fn rgb(&self, x: u32, y: u32) -> [f64; 3] {
        let i = 3 * (y * self.width + x) as usize;
        [self.color[i], self.color[i + 1], self.color[i + 2]]
    }

    pub fn depth_at(&self, x: u32, y: u32) -> f64 {
        self.depth[(y * self.width + x) as usize]
    }
}

/// Per-splat quantities computed once per frame and reused by the backward
/// pass.
#[derive(Debug, Clone)]
pub(crate) struct Projected {
    pub index: usize,
    pub mean_cam: Vector3<f64>,
    pub p: Vector3<f64>,
    pub jac: Matrix3<f64>,
    pub cov_cam: Matrix3<f64>,
    pub sigma_ray_inv: Matrix3<f64>,
    pub depth_a: f64,
    pub depth_b: f64,
    pub center: [f64; 2],
    pub conic: Matrix2<f64>,
    pub opacity: f64,
    pub color: Vector3<f64>,
    pub color_raw: Vector3<f64>,
    pub view_dir: Vector3<f64>,
    pub view_dist: f64,
    pub rotation: Quat,
    pub rotmat: Matrix3<f64>,
    pub scale: Vector3<f64>,
    pub tile_min: [u32; 2],
    pub tile_max: [u32; 2],
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardState {
    pub(crate) num_splats: usize,
    pub(crate) projected: Vec<Projected>,
    /// Per tile, indices into `projected` in compositing order.
    pub(crate) tile_lists: Vec<Vec<u32>>,
    pub(crate) tiles_x: u32,
    pub(crate) tiles_y: u32,
}

impl ForwardState {
    /// Number of splats that survived culling.
    pub fn visible_count(&self) -> usize {
        self.projected.len()
    }

    pub fn tile_grid(&self) -> (u32, u32) {
        (self.tiles_x, self.tiles_y)
    }

    pub fn num_splats(&self) -> usize {
        self.num_splats
    }
}

fn project_splat(
    index: usize,
    splat: &GaussianSplat,
    camera: &PinholeCamera,
    settings: &RenderSettings,
    tiles: [u32; 2],
) -> Option<Projected> {
    let mean_cam = camera.world_to_camera(&splat.position);
    if !(mean_cam.z > NEAR_PLANE) {
        return None;
    }
    let opacity = splat.opacity();
    if opacity < settings.alpha_cutoff {
        return None;
    }
    let rotation = splat.rotation().ok()?;
    let scale = splat.scale();
    let rotmat = model::quat_to_matrix(&rotation);
    let a = rotmat * Matrix3::from_diagonal(&scale);
    let cov_world = a * a.transpose();
    let cov_cam = camera.rotation * cov_world * camera.rotation.transpose();
    let p = projection::camera_to_ray_space(&mean_cam).ok()?;
    let jac = projection::ray_space_jacobian(&mean_cam).ok()?;
    let sigma_ray = jac * cov_cam * jac.transpose();
    let sigma_ray_inv = sigma_ray.try_inverse()?;
    let (depth_a, depth_b) = projection::depth_ratios(&sigma_ray_inv).ok()?;

    let cov2d = Matrix2::new(
        camera.fx * camera.fx * sigma_ray[(0, 0)] + LOW_PASS_FLOOR,
        camera.fx * camera.fy * sigma_ray[(0, 1)],
        camera.fy * camera.fx * sigma_ray[(1, 0)],
        camera.fy * camera.fy * sigma_ray[(1, 1)] + LOW_PASS_FLOOR,
    );
    let det = cov2d[(0, 0)] * cov2d[(1, 1)] - cov2d[(0, 1)] * cov2d[(1, 0)];
    if !(det > 0.0) || !det.is_finite() {
        return None;
    }
    let conic = Matrix2::new(cov2d[(1, 1)] / det, -cov2d[(0, 1)] / det, -cov2d[(1, 0)] / det, cov2d[(0, 0)] / det);
    let center = [camera.fx * p.x + camera.cx, camera.fy * p.y + camera.cy];

    // α ≥ cutoff requires Δᵀ Q Δ ≤ 2 ln(o / cutoff), and Δᵀ Q Δ ≥ |Δ|² / λmax.
    let mid = 0.5 * (cov2d[(0, 0)] + cov2d[(1, 1)]);
    let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
    let radius = (2.0 * (opacity / settings.alpha_cutoff).ln() * lambda_max).sqrt() + 1.0;
    let ts = settings.tile_size as f64;
    let lo_x = ((center[0] - radius - 0.5) / ts).floor();
    let hi_x = ((center[0] + radius - 0.5) / ts).floor();
    let lo_y = ((center[1] - radius - 0.5) / ts).floor();
    let hi_y = ((center[1] + radius - 0.5) / ts).floor();
    if !(lo_x.is_finite() && hi_x.is_finite() && lo_y.is_finite() && hi_y.is_finite()) {
        return None;
    }
    if hi_x < 0.0 || hi_y < 0.0 || lo_x >= tiles[0] as f64 || lo_y >= tiles[1] as f64 {
        return None;
    }
    let tile_min = [lo_x.max(0.0) as u32, lo_y.max(0.0) as u32];
    let tile_max = [(hi_x as u32).min(tiles[0] - 1), (hi_y as u32).min(tiles[1] - 1)];

    let to_splat = splat.position - camera.center();
    let view_dist = to_splat.norm();
    let view_dir = if view_dist > 0.0 { to_splat / view_dist } else { Vector3::z() };
    let color_raw = model::eval_sh(&splat.sh_coeffs, &view_dir);
    let color = color_raw.map(|c| c.max(0.0));

    Some(Projected {
        index,
        mean_cam,
        p,
        jac,
        cov_cam,
        sigma_ray_inv,
        depth_a,
        depth_b,
        center,
        conic,
        opacity,
        color,
        color_raw,
        view_dir,
        view_dist,
        rotation,
        rotmat,
        scale,
        tile_min,
        tile_max,
    })
}

/// Contribution of one splat at one pixel, as seen by the compositor.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Sample {
    pub gauss: f64,
    pub alpha: f64,
    pub capped: bool,
    pub dx: f64,
    pub dy: f64,
}

#[inline]
pub(crate) fn sample(pr: &Projected, px: f64, py: f64, settings: &RenderSettings) -> Option<Sample> {
    let dx = px - pr.center[0];
    let dy = py - pr.center[1];
    let q = &pr.conic;
    let power = -0.5 * (q[(0, 0)] * dx * dx + 2.0 * q[(0, 1)] * dx * dy + q[(1, 1)] * dy * dy);
    if power > 0.0 {
        return None;
    }
    let gauss = power.exp();
    let raw = pr.opacity * gauss;
    let capped = raw > settings.alpha_cap;
    let alpha = if capped { settings.alpha_cap } else { raw };
    if alpha < settings.alpha_cutoff {
        return None;
    }
    Some(Sample {
        gauss,
        alpha,
        capped,
        dx,
        dy,
    })
}

pub(crate) fn prepare(splats: &[GaussianSplat], camera: &PinholeCamera, settings: &RenderSettings) -> Result<ForwardState> {
    settings.validate()?;
    camera.validate()?;
    let tiles_x = camera.width.div_ceil(settings.tile_size);
    let tiles_y = camera.height.div_ceil(settings.tile_size);
    let mut projected: Vec<Projected> = splats
        .par_iter()
        .enumerate()
        .filter_map(|(i, s)| project_splat(i, s, camera, settings, [tiles_x, tiles_y]))
        .collect();
    projected.sort_by(|a, b| a.mean_cam.z.total_cmp(&b.mean_cam.z).then(a.index.cmp(&b.index)));

    let mut tile_lists = vec![Vec::new(); (tiles_x * tiles_y) as usize];
    for (k, pr) in projected.iter().enumerate() {
        for ty in pr.tile_min[1]..=pr.tile_max[1] {
            for tx in pr.tile_min[0]..=pr.tile_max[0] {
                tile_lists[(ty * tiles_x + tx) as usize].push(k as u32);
            }
        }
    }
    Ok(ForwardState {
        num_splats: splats.len(),
        projected,
        tile_lists,
        tiles_x,
        tiles_y,
    })
}

/// Pixel rectangle `[x0, x1) × [y0, y1)` covered by a tile.
pub(crate) fn tile_bounds(tile: usize, state: &ForwardState, camera: &PinholeCamera, settings: &RenderSettings) -> [u32; 4] {
    let tx = tile as u32 % state.tiles_x;
    let ty = tile as u32 / state.tiles_x;
    let ts = settings.tile_size;
    [tx * ts, ((tx + 1) * ts).min(camera.width), ty * ts, ((ty + 1) * ts).min(camera.height)]
}

struct TileOutput {
    bounds: [u32; 4],
    color: Vec<f64>,
    depth: Vec<f64>,
    transmittance: Vec<f64>,
}

fn render_tile(tile: usize, state: &ForwardState, camera: &PinholeCamera, settings: &RenderSettings) -> TileOutput {
    let bounds = tile_bounds(tile, state, camera, settings);
    let [x0, x1, y0, y1] = bounds;
    let n = ((x1 - x0) * (y1 - y0)) as usize;
    let mut out = TileOutput {
        bounds,
        color: Vec::with_capacity(3 * n),
        depth: Vec::with_capacity(n),
        transmittance: Vec::with_capacity(n),
    };
    let list = &state.tile_lists[tile];
    for y in y0..y1 {
        for x in x0..x1 {
            let px = x as f64 + 0.5;
            let py = y as f64 + 0.5;
            let ndc = camera.pixel_to_normalized(px, py);
            let mut t = 1.0;
            let mut color = Vector3::zeros();
            let mut depth = 0.0;
            for &k in list {
                let pr = &state.projected[k as usize];
                let Some(s) = sample(pr, px, py, settings) else {
                    continue;
                };
                let d = projection::expected_depth_from_ratios(&pr.p, pr.depth_a, pr.depth_b, ndc);
                let w = s.alpha * t;
                color += pr.color * w;
                depth += d * w;
                t *= 1.0 - s.alpha;
                if t < settings.min_transmittance {
                    break;
                }
            }
            let bg = Vector3::from(settings.background);
            color += bg * t;
            out.color.extend_from_slice(color.as_slice());
            out.depth.push(depth);
            out.transmittance.push(t);
        }
    }
    out
}

/// Renders color, expected depth and final transmittance.
pub fn rasterize(splats: &[GaussianSplat], camera: &PinholeCamera, settings: &RenderSettings) -> Result<FrameBuffer> {
    Ok(rasterize_with_state(splats, camera, settings)?.0)
}

/// Forward pass that also returns the state needed by [`rasterize_backward`].
pub fn rasterize_with_state(
    splats: &[GaussianSplat],
    camera: &PinholeCamera,
    settings: &RenderSettings,
) -> Result<(FrameBuffer, ForwardState)> {
    let state = prepare(splats, camera, settings)?;
    let tiles: Vec<TileOutput> = (0..state.tile_lists.len())
        .into_par_iter()
        .map(|t| render_tile(t, &state, camera, settings))
        .collect();
    let mut fb = FrameBuffer::new(camera.width, camera.height, settings.background);
    for tile in tiles {
        let [x0, x1, y0, y1] = tile.bounds;
        let w = (x1 - x0) as usize;
        for (row, y) in (y0..y1).enumerate() {
            let dst = (y * camera.width + x0) as usize;
            let src = row * w;
            fb.depth[dst..dst + w].copy_from_slice(&tile.depth[src..src + w]);
            fb.transmittance[dst..dst + w].copy_from_slice(&tile.transmittance[src..src + w]);
            fb.color[3 * dst..3 * (dst + w)].copy_from_slice(&tile.color[3 * src..3 * (src + w)]);
        }
    }
    Ok((fb, state))
}

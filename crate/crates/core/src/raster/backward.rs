use nalgebra::{Matrix2, Matrix3, Vector3};
use rayon::prelude::*;

use super::{prepare, sample, tile_bounds, ForwardState, Projected};
use crate::error::{Error, Result};
use crate::model::{self, sh, GaussianSplat, PARAMS_PER_SPLAT, SH_BASIS_LEN};
use crate::projection::{self, PinholeCamera};
use crate::raster::RenderSettings;

/// Loss gradients with respect to the rendered buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameGradients {
    /// `3 * width * height`, same layout as [`super::FrameBuffer::color`].
    pub color: Vec<f64>,
    pub depth: Vec<f64>,
}

impl FrameGradients {
    pub fn zeros(width: u32, height: u32) -> Self {
        let n = (width * height) as usize;
        FrameGradients {
            color: vec![0.0; 3 * n],
            depth: vec![0.0; n],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplatGradients {
    /// `dL/dparams` in [`GaussianSplat::to_params`] order.
    pub params: Vec<[f64; PARAMS_PER_SPLAT]>,
    /// `dL/d(center)` in pixels, the screen-space signal used for
    /// densification.
    pub mean2d: Vec<[f64; 2]>,
    /// Whether the splat survived culling in this view.
    pub visible: Vec<bool>,
}

/// Screen-space gradient accumulated over the pixels of one tile.
#[derive(Debug, Clone, Copy, Default)]
struct ScreenGrad {
    center: [f64; 2],
    /// Full-matrix gradient of the conic, row-major.
    conic: [f64; 4],
    color: [f64; 3],
    opacity: f64,
    /// Depth-term gradient w.r.t. the ray-space center.
    p: [f64; 3],
    depth_a: f64,
    depth_b: f64,
}

impl ScreenGrad {
    fn add(&mut self, o: &ScreenGrad) {
        for i in 0..2 {
            self.center[i] += o.center[i];
        }
        for i in 0..4 {
            self.conic[i] += o.conic[i];
        }
        for i in 0..3 {
            self.color[i] += o.color[i];
            self.p[i] += o.p[i];
        }
        self.opacity += o.opacity;
        self.depth_a += o.depth_a;
        self.depth_b += o.depth_b;
    }
}

struct Contribution {
    slot: usize,
    alpha: f64,
    t: f64,
    gauss: f64,
    capped: bool,
    dx: f64,
    dy: f64,
    depth: f64,
}

fn backward_tile(
    tile: usize,
    state: &ForwardState,
    camera: &PinholeCamera,
    settings: &RenderSettings,
    grads: &FrameGradients,
) -> Vec<ScreenGrad> {
    let list = &state.tile_lists[tile];
    let mut acc = vec![ScreenGrad::default(); list.len()];
    if list.is_empty() {
        return acc;
    }
    let [x0, x1, y0, y1] = tile_bounds(tile, state, camera, settings);
    let bg = Vector3::from(settings.background);
    let mut contribs: Vec<Contribution> = Vec::new();
    for y in y0..y1 {
        for x in x0..x1 {
            let pix = (y * camera.width + x) as usize;
            let g_color = Vector3::new(grads.color[3 * pix], grads.color[3 * pix + 1], grads.color[3 * pix + 2]);
            let g_depth = grads.depth[pix];
            if g_color == Vector3::zeros() && g_depth == 0.0 {
                continue;
            }
            let px = x as f64 + 0.5;
            let py = y as f64 + 0.5;
            let ndc = camera.pixel_to_normalized(px, py);
            let l = projection::ray_length_factor(ndc.0, ndc.1);

            // Replay the forward compositing for this pixel.
            contribs.clear();
            let mut t = 1.0;
            for (slot, &k) in list.iter().enumerate() {
                let pr = &state.projected[k as usize];
                let Some(s) = sample(pr, px, py, settings) else {
                    continue;
                };
                let depth = projection::expected_depth_from_ratios(&pr.p, pr.depth_a, pr.depth_b, ndc);
                contribs.push(Contribution {
                    slot,
                    alpha: s.alpha,
                    t,
                    gauss: s.gauss,
                    capped: s.capped,
                    dx: s.dx,
                    dy: s.dy,
                    depth,
                });
                t *= 1.0 - s.alpha;
                if t < settings.min_transmittance {
                    break;
                }
            }

            // Suffix sums of everything composited behind the current splat.
            let mut rest_color = bg * t;
            let mut rest_depth = 0.0;
            for c in contribs.iter().rev() {
                let pr = &state.projected[list[c.slot] as usize];
                let w = c.alpha * c.t;
                let one_minus = 1.0 - c.alpha;
                let d_color_d_alpha = pr.color * c.t - rest_color / one_minus;
                let d_depth_d_alpha = c.depth * c.t - rest_depth / one_minus;
                rest_color += pr.color * w;
                rest_depth += c.depth * w;

                let g = &mut acc[c.slot];
                for ch in 0..3 {
                    g.color[ch] += g_color[ch] * w;
                }
                let g_d = g_depth * w;
                if g_d != 0.0 {
                    let ox = ndc.0 - pr.p.x;
                    let oy = ndc.1 - pr.p.y;
                    g.p[0] += g_d * pr.depth_a / l;
                    g.p[1] += g_d * pr.depth_b / l;
                    g.p[2] += g_d / l;
                    g.depth_a -= g_d * ox / l;
                    g.depth_b -= g_d * oy / l;
                }

                if c.capped {
                    continue;
                }
                let g_alpha = g_color.dot(&d_color_d_alpha) + g_depth * d_depth_d_alpha;
                g.opacity += g_alpha * c.gauss;
                let g_power = g_alpha * pr.opacity * c.gauss;
                let q = &pr.conic;
                g.center[0] += g_power * (q[(0, 0)] * c.dx + q[(0, 1)] * c.dy);
                g.center[1] += g_power * (q[(0, 1)] * c.dx + q[(1, 1)] * c.dy);
                g.conic[0] += g_power * (-0.5 * c.dx * c.dx);
                g.conic[1] += g_power * (-c.dx * c.dy);
                g.conic[3] += g_power * (-0.5 * c.dy * c.dy);
            }
        }
    }
    acc
}

/// Chain rule from accumulated screen-space gradients to raw parameters.
fn splat_backward(
    pr: &Projected,
    splat: &GaussianSplat,
    g: &ScreenGrad,
    camera: &PinholeCamera,
) -> [f64; PARAMS_PER_SPLAT] {
    let mut out = [0.0; PARAMS_PER_SPLAT];

    // Color through the SH expansion and the clamp.
    let basis = sh::sh_basis(&pr.view_dir);
    let basis_grad = sh::sh_basis_grad(&pr.view_dir);
    let mut g_dir = Vector3::zeros();
    for ch in 0..3 {
        if pr.color_raw[ch] < 0.0 {
            continue;
        }
        let gc = g.color[ch];
        for k in 0..SH_BASIS_LEN {
            out[model::SH_OFFSET + ch * SH_BASIS_LEN + k] = gc * basis[k];
            g_dir += basis_grad[k] * (gc * splat.sh_coeffs[ch * SH_BASIS_LEN + k]);
        }
    }
    let g_pos_view = (g_dir - pr.view_dir * pr.view_dir.dot(&g_dir)) / pr.view_dist;

    // Conic -> pixel covariance -> ray-space covariance.
    let q = &pr.conic;
    let g_q = Matrix2::new(g.conic[0], g.conic[1], g.conic[2], g.conic[3]);
    let g_cov2d = -(q.transpose() * g_q * q.transpose());
    let mut g_sigma_ray = Matrix3::zeros();
    let k = [camera.fx, camera.fy];
    for r in 0..2 {
        for c in 0..2 {
            g_sigma_ray[(r, c)] = k[r] * k[c] * g_cov2d[(r, c)];
        }
    }

    // Depth slopes through the ray-space precision matrix.
    let m = &pr.sigma_ray_inv;
    let m22 = m[(2, 2)];
    let mut g_m = Matrix3::zeros();
    g_m[(0, 2)] = g.depth_a / m22;
    g_m[(1, 2)] = g.depth_b / m22;
    g_m[(2, 2)] = -(g.depth_a * m[(0, 2)] + g.depth_b * m[(1, 2)]) / (m22 * m22);
    g_sigma_ray -= m.transpose() * g_m * m.transpose();

    // Σ_ray = J C Jᵀ.
    let j = &pr.jac;
    let c = &pr.cov_cam;
    let g_cov_cam = j.transpose() * g_sigma_ray * j;
    let g_jac = (g_sigma_ray + g_sigma_ray.transpose()) * j * c;

    // Ray-space center and Jacobian as functions of the camera-space mean.
    let (x, y, z) = (pr.mean_cam.x, pr.mean_cam.y, pr.mean_cam.z);
    let r = pr.mean_cam.norm();
    let g_p0 = camera.fx * g.center[0] + g.p[0];
    let g_p1 = camera.fy * g.center[1] + g.p[1];
    let g_p2 = g.p[2];
    let mut g_mean_cam = Vector3::new(g_p0 / z, g_p1 / z, -(g_p0 * x + g_p1 * y) / (z * z)) + pr.mean_cam * (g_p2 / r);

    g_mean_cam.z += -g_jac[(0, 0)] / (z * z) - g_jac[(1, 1)] / (z * z);
    g_mean_cam.x += -g_jac[(0, 2)] / (z * z);
    g_mean_cam.z += 2.0 * x * g_jac[(0, 2)] / (z * z * z);
    g_mean_cam.y += -g_jac[(1, 2)] / (z * z);
    g_mean_cam.z += 2.0 * y * g_jac[(1, 2)] / (z * z * z);
    let g_row = Vector3::new(g_jac[(2, 0)], g_jac[(2, 1)], g_jac[(2, 2)]);
    g_mean_cam += (g_row - pr.mean_cam * (pr.mean_cam.dot(&g_row) / (r * r))) / r;

    let w = &camera.rotation;
    let g_pos = w.transpose() * g_mean_cam + g_pos_view;
    out[model::POSITION_OFFSET..model::POSITION_OFFSET + 3].copy_from_slice(g_pos.as_slice());

    // Σ_cam = W Σ Wᵀ, Σ = A Aᵀ with A = R diag(s).
    let g_cov_world = w.transpose() * g_cov_cam * w;
    let a = pr.rotmat * Matrix3::from_diagonal(&pr.scale);
    let g_a = (g_cov_world + g_cov_world.transpose()) * a;
    let mut g_rot = Matrix3::zeros();
    for col in 0..3 {
        let mut g_s = 0.0;
        for row in 0..3 {
            g_s += g_a[(row, col)] * pr.rotmat[(row, col)];
            g_rot[(row, col)] = g_a[(row, col)] * pr.scale[col];
        }
        out[model::SCALE_OFFSET + col] = g_s * pr.scale[col];
    }
    let g_quat = model::quat_to_matrix_backward(&pr.rotation, &g_rot);
    let g_raw = model::normalize_quat_backward(&splat.rotation_raw, &g_quat);
    out[model::ROTATION_OFFSET..model::ROTATION_OFFSET + 4].copy_from_slice(&g_raw);

    out[model::OPACITY_OFFSET] = g.opacity * pr.opacity * (1.0 - pr.opacity);
    out
}

/// Analytic gradients of a scalar loss with respect to every splat's raw
/// parameters, given `dL/dcolor` and `dL/ddepth` per pixel.
///
/// `state` must come from [`super::rasterize_with_state`] with the same
/// splats, camera and settings.
pub fn rasterize_backward(
    splats: &[GaussianSplat],
    state: &ForwardState,
    camera: &PinholeCamera,
    settings: &RenderSettings,
    grads: &FrameGradients,
) -> Result<SplatGradients> {
    if splats.len() != state.num_splats {
        return Err(Error::contract(format!(
            "backward got {} splats, forward pass saw {}",
            splats.len(),
            state.num_splats
        )));
    }
    let n_pix = (camera.width * camera.height) as usize;
    if grads.color.len() != 3 * n_pix || grads.depth.len() != n_pix {
        return Err(Error::contract("frame gradient size does not match the camera"));
    }

    let per_tile: Vec<Vec<ScreenGrad>> = (0..state.tile_lists.len())
        .into_par_iter()
        .map(|t| backward_tile(t, state, camera, settings, grads))
        .collect();

    // Fixed tile order keeps the sums identical for any worker count.
    let mut screen = vec![ScreenGrad::default(); state.projected.len()];
    for (tile, partial) in per_tile.iter().enumerate() {
        for (slot, g) in partial.iter().enumerate() {
            screen[state.tile_lists[tile][slot] as usize].add(g);
        }
    }

    let chained: Vec<(usize, [f64; PARAMS_PER_SPLAT], [f64; 2])> = state
        .projected
        .par_iter()
        .zip(screen.par_iter())
        .map(|(pr, g)| (pr.index, splat_backward(pr, &splats[pr.index], g, camera), g.center))
        .collect();

    let mut out = SplatGradients {
        params: vec![[0.0; PARAMS_PER_SPLAT]; splats.len()],
        mean2d: vec![[0.0; 2]; splats.len()],
        visible: vec![false; splats.len()],
    };
    for (index, params, center) in chained {
        out.params[index] = params;
        out.mean2d[index] = center;
        out.visible[index] = true;
    }
    Ok(out)
}

/// Runs forward and backward in one call (convenience for tests and tools).
pub fn gradients_for(
    splats: &[GaussianSplat],
    camera: &PinholeCamera,
    settings: &RenderSettings,
    grads: &FrameGradients,
) -> Result<SplatGradients> {
    let state = prepare(splats, camera, settings)?;
    rasterize_backward(splats, &state, camera, settings, grads)
}

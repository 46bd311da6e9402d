use lodsplat::model::{GaussianSplat, PARAMS_PER_SPLAT};
use lodsplat::projection::PinholeCamera;
use lodsplat::raster::{gradients_for, rasterize, FrameGradients, RenderSettings};
use lodsplat::trainer::loss::{total_loss, LossInputs, LossWeights};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Outcome;

const SIZE: u32 = 8;
const STEP: f64 = 1e-5;

fn scene(rng: &mut ChaCha8Rng) -> Vec<GaussianSplat> {
    (0..20)
        .map(|_| {
            let z = rng.gen_range(2.0..4.0);
            let pos = Vector3::new(rng.gen_range(-0.4..0.4) * z, rng.gen_range(-0.4..0.4) * z, z);
            let mut s = GaussianSplat::from_point(pos, [rng.gen(), rng.gen(), rng.gen()], 0.3, rng.gen_range(0.3..0.8), 0);
            s.rotation_raw = [rng.gen_range(0.5..1.0), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)];
            s.log_scale = Vector3::new(rng.gen_range(-2.0..-0.8), rng.gen_range(-2.0..-0.8), rng.gen_range(-2.0..-0.8));
            for (k, c) in s.sh_coeffs.iter_mut().enumerate() {
                if k % 9 != 0 {
                    *c = rng.gen_range(-0.1..0.1);
                }
            }
            s
        })
        .collect()
}

struct Problem {
    camera: PinholeCamera,
    settings: RenderSettings,
    weights: LossWeights,
    ref_color: Vec<f64>,
    ref_depth: Vec<f64>,
}

impl Problem {
    fn loss(&self, splats: &[GaussianSplat]) -> (f64, FrameGradients) {
        let fb = rasterize(splats, &self.camera, &self.settings).unwrap();
        let out = total_loss(
            &LossInputs {
                width: SIZE as usize,
                height: SIZE as usize,
                pred_color: &fb.color,
                ref_color: &self.ref_color,
                pred_depth: &fb.depth,
                ref_depth: &self.ref_depth,
                mask: None,
            },
            &self.weights,
        )
        .unwrap();
        (
            out.total,
            FrameGradients {
                color: out.grad_color,
                depth: out.grad_depth,
            },
        )
    }
}

/// Combined photometric + depth loss on a 20-splat 8x8 scene; every
/// parameter of every splat against central differences.
pub fn combined_loss_gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let splats = scene(&mut rng);
    let camera = PinholeCamera::look_at(Vector3::zeros(), Vector3::z(), -Vector3::y(), 60.0, SIZE, SIZE).unwrap();
    let settings = RenderSettings::default();
    let base = rasterize(&splats, &camera, &settings).unwrap();
    // References sit a fixed distance away from the render so no absolute
    // value term changes sign under a finite-difference step.
    let ref_color: Vec<f64> = base.color.iter().map(|c| c + if rng.gen::<bool>() { 0.2 } else { -0.2 }).collect();
    let ref_depth: Vec<f64> = base
        .depth
        .iter()
        .map(|&d| if d < 1e-3 { 0.0 } else { d * if rng.gen::<bool>() { 1.3 } else { 0.7 } })
        .collect();
    let problem = Problem {
        camera,
        settings,
        weights: LossWeights {
            ssim_weight: 0.2,
            lambda_depth: 0.8,
            depth_beta: 10.0,
        },
        ref_color,
        ref_depth,
    };
    let (_, frame_grads) = problem.loss(&splats);
    let analytic = gradients_for(&splats, &problem.camera, &problem.settings, &frame_grads).unwrap();
    let scale = analytic.params.iter().flat_map(|p| p.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = 1e-6 * scale;
    let mut worst = 0.0f64;
    let mut worst_at = (0, 0);
    for (i, s) in splats.iter().enumerate() {
        let p0 = s.to_params();
        for k in 0..PARAMS_PER_SPLAT {
            let eval = |delta: f64| {
                let mut v = splats.clone();
                let mut p = p0;
                p[k] += delta;
                v[i].set_params(&p);
                problem.loss(&v).0
            };
            let fd = (eval(STEP) - eval(-STEP)) / (2.0 * STEP);
            let a = analytic.params[i][k];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(floor);
            if rel > worst {
                worst = rel;
                worst_at = (i, k);
            }
        }
    }
    Outcome::check(
        worst < 1e-3 && scale > 0.0,
        format!(
            "max relative error {worst:.2e} (splat {}, param {}) over {} parameters (limit 1e-3)",
            worst_at.0,
            worst_at.1,
            splats.len() * PARAMS_PER_SPLAT
        ),
    )
}

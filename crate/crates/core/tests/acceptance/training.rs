use lodsplat::geometry::ColoredPoint;
use lodsplat::lod::{CloudLevel, MultiResCloud};
use lodsplat::model::GaussianSplat;
use lodsplat::projection::PinholeCamera;
use lodsplat::raster::image_io::{DepthMap, RgbImage};
use lodsplat::raster::{rasterize, FrameBuffer, RenderSettings};
use lodsplat::trainer::loss::psnr;
use lodsplat::trainer::{select_render_set, train, RenderMode, TrainConfig, TrainSample};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::Outcome;

const SIZE: u32 = 64;
const TRAIN_VIEWS: usize = 16;
const HELD_OUT: usize = 4;
const ITERATIONS: usize = 2000;
const SPLATS: usize = 300;
const POSITION_JITTER: f64 = 0.03;
const INIT_SPACING: f64 = 0.06;

/// 300 flat, opaque splats: a textured floor and the four walls of a box
/// standing on it.
fn ground_truth(rng: &mut ChaCha8Rng) -> Vec<GaussianSplat> {
    let mut out = Vec::with_capacity(SPLATS);
    let floor_n = 14;
    for j in 0..floor_n {
        for i in 0..floor_n {
            let x = -1.0 + 2.0 * (i as f64 + 0.5) / floor_n as f64 + rng.gen_range(-0.02..0.02);
            let y = -1.0 + 2.0 * (j as f64 + 0.5) / floor_n as f64 + rng.gen_range(-0.02..0.02);
            let c = [0.3 + 0.4 * ((i / 2 + j / 2) % 2) as f64, 0.35 + 0.3 * x.abs(), 0.4 + 0.3 * y.abs()];
            let mut s = GaussianSplat::from_point(Vector3::new(x, y, 0.0), c, 0.09, 0.95, 0);
            s.log_scale = Vector3::new(0.09f64.ln(), 0.09f64.ln(), 0.01f64.ln());
            out.push(s);
        }
    }
    // Box of side 0.6 centered at the origin, sitting on the floor: four
    // walls of 26 splats each.
    let per_wall = (SPLATS - out.len()) / 4;
    debug_assert_eq!(out.len() + 4 * per_wall, SPLATS);
    let cols = 5;
    for wall in 0..4 {
        for k in 0..per_wall {
            let (u, v) = ((k % cols) as f64 + 0.5, (k / cols) as f64 + 0.5);
            let a = -0.3 + 0.6 * u / cols as f64;
            let h = 0.6 * v / (per_wall.div_ceil(cols)) as f64;
            let (pos, normal_axis) = match wall {
                0 => (Vector3::new(a, -0.3, h), 1),
                1 => (Vector3::new(a, 0.3, h), 1),
                2 => (Vector3::new(-0.3, a, h), 0),
                _ => (Vector3::new(0.3, a, h), 0),
            };
            let c = [0.8 - 0.15 * wall as f64, 0.2 + 0.5 * h, 0.3 + 0.4 * (a + 0.3)];
            let mut s = GaussianSplat::from_point(pos, c, 0.07, 0.95, 0);
            s.log_scale[normal_axis] = 0.01f64.ln();
            out.push(s);
        }
    }
    out
}

fn ring_camera(angle: f64) -> PinholeCamera {
    let eye = Vector3::new(2.6 * angle.cos(), 2.6 * angle.sin(), 1.6);
    PinholeCamera::look_at(eye, Vector3::new(0.0, 0.0, 0.2), Vector3::z(), 55.0, SIZE, SIZE).unwrap()
}

fn cameras() -> (Vec<PinholeCamera>, Vec<PinholeCamera>) {
    let tau = std::f64::consts::TAU;
    let train = (0..TRAIN_VIEWS).map(|k| ring_camera(tau * k as f64 / TRAIN_VIEWS as f64)).collect();
    let held = (0..HELD_OUT)
        .map(|k| ring_camera(tau * (4 * k) as f64 / TRAIN_VIEWS as f64 + tau * 0.5 / TRAIN_VIEWS as f64))
        .collect();
    (train, held)
}

fn sample(frame: &FrameBuffer, camera: &PinholeCamera) -> TrainSample {
    TrainSample {
        image: RgbImage::from_frame(frame),
        depth: DepthMap {
            width: frame.width,
            height: frame.height,
            data: frame.depth.clone(),
        },
        camera: camera.clone(),
        mask: None,
    }
}

struct Evaluation {
    psnr: f64,
    depth_error: f64,
}

fn evaluate(splats: &[GaussianSplat], held: &[(PinholeCamera, FrameBuffer)]) -> Evaluation {
    let settings = RenderSettings::default();
    let mut psnr_sum = 0.0;
    let (mut err, mut count) = (0.0, 0usize);
    for (cam, truth) in held {
        let fb = rasterize(splats, cam, &settings).unwrap();
        psnr_sum += psnr(&fb.color, &truth.color, None);
        for (p, t) in fb.depth.iter().zip(&truth.depth) {
            if *t > 0.0 {
                err += (p - t).abs();
                count += 1;
            }
        }
    }
    Evaluation {
        psnr: psnr_sum / held.len() as f64,
        depth_error: err / count.max(1) as f64,
    }
}

fn initialization(truth: &[GaussianSplat], rng: &mut ChaCha8Rng) -> MultiResCloud {
    let jitter = Normal::new(0.0, POSITION_JITTER).unwrap();
    let points = truth
        .iter()
        .map(|s| {
            let p = s.position + Vector3::from_fn(|_, _| jitter.sample(rng));
            let c = lodsplat::model::eval_sh(&s.sh_coeffs, &Vector3::z());
            ColoredPoint::new(p, [0, 1, 2].map(|k| (c[k] + rng.gen_range(-0.1..0.1)).clamp(0.0, 1.0)))
        })
        .collect();
    MultiResCloud {
        levels: vec![CloudLevel {
            spacing: INIT_SPACING,
            points,
        }],
    }
}

/// Trains from a jittered initialization with and without the depth term
/// and compares held-out color and depth.
pub fn synthetic_training_proxy() -> Outcome {
    let start = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let truth = ground_truth(&mut rng);
    let settings = RenderSettings::default();
    let (train_cams, held_cams) = cameras();
    let samples: Vec<TrainSample> = train_cams
        .iter()
        .map(|c| sample(&rasterize(&truth, c, &settings).unwrap(), c))
        .collect();
    let held: Vec<(PinholeCamera, FrameBuffer)> = held_cams
        .iter()
        .map(|c| (c.clone(), rasterize(&truth, c, &settings).unwrap()))
        .collect();
    let init = initialization(&truth, &mut rng);

    let run = |lambda_depth: f64| {
        let config = TrainConfig {
            lambda_depth,
            total_iterations: Some(ITERATIONS),
            rng_seed: 11,
            ..TrainConfig::default()
        };
        let outcome = train(&samples, &init, &config).unwrap();
        evaluate(&outcome.levels[0], &held)
    };
    let with_depth = run(0.8);
    let without = run(0.0);
    let reduction = 1.0 - with_depth.depth_error / without.depth_error;
    let minutes = start.elapsed().as_secs_f64() / 60.0;
    Outcome::check(
        with_depth.psnr >= 28.0 && reduction >= 0.3 && minutes < 15.0,
        format!(
            "held-out PSNR {:.2} dB (limit 28); depth MAE {:.4} with depth term vs {:.4} without ({:.0}% lower, limit 30%); photometric-only PSNR {:.2} dB; {minutes:.1} min for both runs (limit 15)",
            with_depth.psnr,
            with_depth.depth_error,
            without.depth_error,
            100.0 * reduction,
            without.psnr
        ),
    )
}

pub fn rrl_statistics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let levels: Vec<Vec<GaussianSplat>> = (0..4)
        .map(|l| {
            (0..5)
                .map(|k| GaussianSplat::from_point(Vector3::new(k as f64, l as f64, 5.0), [0.5; 3], 0.1, 0.5, l as u8))
                .collect()
        })
        .collect();
    let cam = PinholeCamera::look_at(Vector3::zeros(), Vector3::z(), -Vector3::y(), 60.0, 16, 16).unwrap();
    let draws = 10_000;
    let mut composite = 0;
    let mut single = [0usize; 4];
    for _ in 0..draws {
        match select_render_set(&levels, &cam, 10.0, 0.5, &mut rng).unwrap().mode {
            RenderMode::Composite => composite += 1,
            RenderMode::Single(l) => single[l] += 1,
        }
    }
    let freq = composite as f64 / draws as f64;
    Outcome::check(
        (0.485..=0.515).contains(&freq),
        format!("composite mode in {:.2}% of {draws} draws (limit 48.5-51.5%); single-level counts {single:?}", 100.0 * freq),
    )
}

//! Optimization of per-level splat models against color and depth
//! observations.

pub mod loss;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lod::{per_view_dmax, scene_diameter, select_level, MultiResCloud};
use crate::model::{
    GaussianSplat, OPACITY_OFFSET, POSITION_OFFSET, ROTATION_OFFSET, SCALE_OFFSET, SH_OFFSET, PARAMS_PER_SPLAT,
};
use crate::projection::PinholeCamera;
use crate::raster::image_io::{DepthMap, Mask, RgbImage};
use crate::raster::{rasterize_backward, rasterize_with_state, FrameGradients, RenderSettings};

use loss::{psnr, total_loss, LossInputs, LossWeights};

/// Shrink applied to both children when a splat is split.
pub const SPLIT_SCALE_DIVISOR: f64 = 1.6;
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda_depth: f64,
    /// Multiplied by the scene extent when `scale_position_lr` is set.
    pub lr_position: f64,
    pub scale_position_lr: bool,
    pub lr_scaling: f64,
    pub lr_rotation: f64,
    pub lr_opacity: f64,
    /// Rate for the constant SH band; higher bands use a twentieth of it.
    pub lr_sh: f64,
    /// `None` means 20 iterations per training image.
    pub total_iterations: Option<usize>,
    /// `None` means a quarter of the total.
    pub densify_start_iteration: Option<usize>,
    /// `None` means densify until the end.
    pub densify_stop_iteration: Option<usize>,
    pub densify_interval: usize,
    pub sigma_pos: f64,
    pub sigma_var: f64,
    pub beta_s: f64,
    pub s_max: f64,
    pub rrl_probability: f64,
    pub ssim_weight: f64,
    pub depth_beta: f64,
    pub opacity_reset: bool,
    pub opacity_reset_interval: usize,
    /// Overrides the extent derived from camera centers.
    pub scene_extent: Option<f64>,
    pub background: [f64; 3],
    pub log_interval: usize,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_depth: 0.8,
            lr_position: 1.6e-5,
            scale_position_lr: true,
            lr_scaling: 1.5e-3,
            lr_rotation: 1e-3,
            lr_opacity: 0.05,
            lr_sh: 2.5e-3,
            total_iterations: None,
            densify_start_iteration: None,
            densify_stop_iteration: None,
            densify_interval: 100,
            sigma_pos: 2e-4,
            sigma_var: 0.01,
            beta_s: std::f64::consts::SQRT_2,
            s_max: 4.0,
            rrl_probability: 0.5,
            ssim_weight: 0.2,
            depth_beta: 10.0,
            opacity_reset: false,
            opacity_reset_interval: 3000,
            scene_extent: None,
            background: [0.0; 3],
            log_interval: 100,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let rates = [self.lr_position, self.lr_scaling, self.lr_rotation, self.lr_opacity, self.lr_sh];
        if rates.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
            return Err(Error::invalid("all learning rates must be positive"));
        }
        if !(0.0..=1.0).contains(&self.rrl_probability) {
            return Err(Error::invalid("rrl_probability must lie in [0, 1]"));
        }
        if !(self.beta_s > 1.0) {
            return Err(Error::invalid("beta_s must exceed 1"));
        }
        if !(self.s_max >= 1.0) {
            return Err(Error::invalid("s_max must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.ssim_weight) {
            return Err(Error::invalid("ssim_weight must lie in [0, 1]"));
        }
        if !(self.lambda_depth >= 0.0) || !(self.depth_beta > 0.0) {
            return Err(Error::invalid("lambda_depth must be >= 0 and depth_beta > 0"));
        }
        if self.densify_interval == 0 || self.log_interval == 0 || self.opacity_reset_interval == 0 {
            return Err(Error::invalid("intervals must be positive"));
        }
        Ok(())
    }

    pub fn iterations_for(&self, num_images: usize) -> usize {
        self.total_iterations.unwrap_or(20 * num_images)
    }

    pub fn densify_start_for(&self, total: usize) -> usize {
        self.densify_start_iteration.unwrap_or(total / 4)
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            ssim_weight: self.ssim_weight,
            lambda_depth: self.lambda_depth,
            depth_beta: self.depth_beta,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainSample {
    pub image: RgbImage,
    /// Meters; 0 where there is no measurement.
    pub depth: DepthMap,
    pub camera: PinholeCamera,
    pub mask: Option<Mask>,
}

impl TrainSample {
    pub fn validate(&self) -> Result<()> {
        let (w, h) = (self.camera.width, self.camera.height);
        if self.image.width != w || self.image.height != h || self.depth.width != w || self.depth.height != h {
            return Err(Error::invalid("training sample: image, depth and camera sizes differ"));
        }
        if self.mask.as_ref().is_some_and(|m| m.width != w || m.height != h) {
            return Err(Error::invalid("training sample: mask size differs from camera"));
        }
        if self.depth.data.iter().any(|d| !(*d >= 0.0) || !d.is_finite()) {
            return Err(Error::invalid("training sample: depth must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Threshold multiplier for `level` out of `levels`: `min(beta_s^(L-1-level), s_max)`.
pub fn scale_factor(level: usize, levels: usize, beta_s: f64, s_max: f64) -> Result<f64> {
    if level >= levels {
        return Err(Error::contract(format!("scale_factor: level {level} outside 0..{levels}")));
    }
    Ok(beta_s.powi((levels - 1 - level) as i32).min(s_max))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderMode {
    /// Every splat rendered iff its distance band selects its own level.
    Composite,
    /// All splats of one level.
    Single(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderSelection {
    pub mode: RenderMode,
    /// `(level, index)` pairs in level-major order.
    pub members: Vec<(usize, usize)>,
}

/// Random-resolution-level choice for one training view. Always consumes
/// exactly two uniform draws.
pub fn select_render_set<S: AsRef<[GaussianSplat]>, R: Rng>(
    levels: &[S],
    camera: &PinholeCamera,
    d_max: f64,
    rrl_probability: f64,
    rng: &mut R,
) -> Result<RenderSelection> {
    if !(d_max > 0.0) {
        return Err(Error::invalid("select_render_set: d_max must be positive"));
    }
    let l = levels.len();
    if l == 0 {
        return Err(Error::EmptyInput("select_render_set: no levels".into()));
    }
    let mode_draw: f64 = rng.gen();
    let level_draw: f64 = rng.gen();
    let mut members = Vec::new();
    let mode = if mode_draw < rrl_probability {
        let eye = camera.center();
        for (lvl, splats) in levels.iter().enumerate() {
            for (i, s) in splats.as_ref().iter().enumerate() {
                if select_level((s.position - eye).norm(), d_max, l) == lvl {
                    members.push((lvl, i));
                }
            }
        }
        RenderMode::Composite
    } else {
        let lvl = ((level_draw * l as f64) as usize).min(l - 1);
        members.extend((0..levels[lvl].as_ref().len()).map(|i| (lvl, i)));
        RenderMode::Single(lvl)
    };
    Ok(RenderSelection { mode, members })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DensifyReport {
    pub cloned: usize,
    pub split: usize,
}

/// Clones small and splits large splats whose mean screen-space gradient
/// exceeds `s * sigma_pos`. `origin[i]` is `Some(j)` when output splat `i` is
/// input splat `j` carried over unchanged.
pub fn densify<R: Rng>(
    splats: &[GaussianSplat],
    mean_grad: &[f64],
    sigma_pos: f64,
    sigma_var: f64,
    scale: f64,
    scene_extent: f64,
    rng: &mut R,
) -> (Vec<GaussianSplat>, Vec<Option<usize>>, DensifyReport) {
    assert_eq!(splats.len(), mean_grad.len());
    let grad_threshold = scale * sigma_pos;
    let size_threshold = scale * sigma_var * scene_extent;
    let mut out = Vec::with_capacity(splats.len());
    let mut origin = Vec::with_capacity(splats.len());
    let mut added = Vec::new();
    let mut report = DensifyReport::default();
    for (i, s) in splats.iter().enumerate() {
        if !(mean_grad[i] > grad_threshold) {
            out.push(s.clone());
            origin.push(Some(i));
            continue;
        }
        if s.scale().max() < size_threshold {
            out.push(s.clone());
            origin.push(Some(i));
            let mut c = s.clone();
            c.position += sample_offset(s, rng);
            added.push(c);
            report.cloned += 1;
        } else {
            for _ in 0..2 {
                let mut c = s.clone();
                c.position += sample_offset(s, rng);
                c.log_scale -= Vector3::repeat(SPLIT_SCALE_DIVISOR.ln());
                added.push(c);
            }
            report.split += 1;
        }
    }
    origin.extend(std::iter::repeat(None).take(added.len()));
    out.extend(added);
    (out, origin, report)
}

/// Draw from the splat's own Gaussian, centered at zero.
fn sample_offset<R: Rng>(s: &GaussianSplat, rng: &mut R) -> Vector3<f64> {
    let z = Vector3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
    let rot = s.rotation().map(|q| crate::model::quat_to_matrix(&q)).unwrap_or_else(|_| nalgebra::Matrix3::identity());
    rot * s.scale().component_mul(&z)
}

#[derive(Debug, Clone, Copy)]
struct AdamState {
    m: [f64; PARAMS_PER_SPLAT],
    v: [f64; PARAMS_PER_SPLAT],
    step: u32,
}

impl Default for AdamState {
    fn default() -> Self {
        AdamState {
            m: [0.0; PARAMS_PER_SPLAT],
            v: [0.0; PARAMS_PER_SPLAT],
            step: 0,
        }
    }
}

fn learning_rates(config: &TrainConfig, extent: f64) -> [f64; PARAMS_PER_SPLAT] {
    let mut lr = [0.0; PARAMS_PER_SPLAT];
    let pos = if config.scale_position_lr { config.lr_position * extent } else { config.lr_position };
    lr[POSITION_OFFSET..POSITION_OFFSET + 3].fill(pos);
    lr[ROTATION_OFFSET..ROTATION_OFFSET + 4].fill(config.lr_rotation);
    lr[SCALE_OFFSET..SCALE_OFFSET + 3].fill(config.lr_scaling);
    lr[OPACITY_OFFSET] = config.lr_opacity;
    for k in 0..27 {
        lr[SH_OFFSET + k] = if k % 9 == 0 { config.lr_sh } else { config.lr_sh / 20.0 };
    }
    lr
}

fn adam_step(params: &mut [f64; PARAMS_PER_SPLAT], grad: &[f64; PARAMS_PER_SPLAT], state: &mut AdamState, lr: &[f64; PARAMS_PER_SPLAT]) {
    state.step += 1;
    let c1 = 1.0 - ADAM_BETA1.powi(state.step as i32);
    let c2 = 1.0 - ADAM_BETA2.powi(state.step as i32);
    for k in 0..PARAMS_PER_SPLAT {
        state.m[k] = ADAM_BETA1 * state.m[k] + (1.0 - ADAM_BETA1) * grad[k];
        state.v[k] = ADAM_BETA2 * state.v[k] + (1.0 - ADAM_BETA2) * grad[k] * grad[k];
        params[k] -= lr[k] * (state.m[k] / c1) / ((state.v[k] / c2).sqrt() + ADAM_EPS);
    }
}

struct LevelModel {
    splats: Vec<GaussianSplat>,
    adam: Vec<AdamState>,
    grad_sum: Vec<f64>,
    grad_count: Vec<u32>,
}

impl AsRef<[GaussianSplat]> for LevelModel {
    fn as_ref(&self) -> &[GaussianSplat] {
        &self.splats
    }
}

impl LevelModel {
    fn new(splats: Vec<GaussianSplat>) -> Self {
        let n = splats.len();
        LevelModel {
            splats,
            adam: vec![AdamState::default(); n],
            grad_sum: vec![0.0; n],
            grad_count: vec![0; n],
        }
    }

    fn mean_grad(&self) -> Vec<f64> {
        self.grad_sum
            .iter()
            .zip(&self.grad_count)
            .map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
            .collect()
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub iteration: usize,
    pub sample: usize,
    pub mode: RenderMode,
    pub l_rgb: f64,
    pub l_depth: f64,
    pub total: f64,
    pub psnr: f64,
    pub splats_per_level: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub densified: Option<Vec<(usize, usize)>>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub levels: Vec<Vec<GaussianSplat>>,
    pub log: Vec<TrainLogRecord>,
}

/// Half-extent of the camera rig, padded by 10%; falls back to the radius of
/// the initial cloud when all cameras coincide.
pub fn scene_extent(samples: &[TrainSample], init: &MultiResCloud) -> f64 {
    let centers: Vec<Vector3<f64>> = samples.iter().map(|s| s.camera.center()).collect();
    let mean = centers.iter().fold(Vector3::zeros(), |a, c| a + c) / centers.len().max(1) as f64;
    let radius = centers.iter().map(|c| (c - mean).norm()).fold(0.0, f64::max) * 1.1;
    if radius > 0.0 {
        radius
    } else {
        (0.5 * init.bounds().map_or(1.0, |b| b.diagonal())).max(1e-6)
    }
}

pub fn train(samples: &[TrainSample], init: &MultiResCloud, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with_observer(samples, init, config, &mut |_| {})
}

/// As [`train`], calling `observer` with every log record as it is produced.
pub fn train_with_observer(
    samples: &[TrainSample],
    init: &MultiResCloud,
    config: &TrainConfig,
    observer: &mut dyn FnMut(&TrainLogRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::EmptyInput("train: no training samples".into()));
    }
    if init.levels.is_empty() || init.levels.iter().any(|l| l.points.is_empty()) {
        return Err(Error::EmptyInput("train: every level needs initial points".into()));
    }
    for s in samples {
        s.validate()?;
    }
    let l = init.num_levels();
    let total = config.iterations_for(samples.len());
    let densify_start = config.densify_start_for(total);
    let densify_stop = config.densify_stop_iteration.unwrap_or(usize::MAX);
    let extent = config.scene_extent.unwrap_or_else(|| scene_extent(samples, init));
    let lr = learning_rates(config, extent);
    let weights = config.loss_weights();
    let settings = RenderSettings {
        background: config.background,
        ..Default::default()
    };
    let finest: Vec<Vector3<f64>> = init.levels[l - 1].points.iter().map(|p| p.position).collect();
    let diameter = scene_diameter(finest.iter()).max(1e-6);
    let d_max: Vec<f64> = samples.iter().map(|s| per_view_dmax(&finest, &s.camera, diameter)).collect();
    let scales: Vec<f64> = (0..l).map(|lvl| scale_factor(lvl, l, config.beta_s, config.s_max)).collect::<Result<_>>()?;

    let mut models: Vec<LevelModel> = init.init_splats().into_iter().map(LevelModel::new).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut log = Vec::new();

    for iteration in 1..=total {
        let sample_index = rng.gen_range(0..samples.len());
        let sample = &samples[sample_index];
        let camera = &sample.camera;
        let selection = select_render_set(&models, camera, d_max[sample_index], config.rrl_probability, &mut rng)?;
        let splats: Vec<GaussianSplat> = selection.members.iter().map(|&(lv, i)| models[lv].splats[i].clone()).collect();

        let (frame, state) = rasterize_with_state(&splats, camera, &settings)?;
        let mask = sample.mask.as_ref().map(|m| m.data.as_slice());
        let out = total_loss(
            &LossInputs {
                width: camera.width as usize,
                height: camera.height as usize,
                pred_color: &frame.color,
                ref_color: &sample.image.data,
                pred_depth: &frame.depth,
                ref_depth: &sample.depth.data,
                mask,
            },
            &weights,
        )?;
        if !out.total.is_finite() {
            return Err(Error::Diverged {
                iteration,
                message: format!(
                    "loss {} (rgb {}, depth {}) on sample {sample_index}, mode {:?}, splats per level {:?}",
                    out.total,
                    out.rgb,
                    out.depth,
                    selection.mode,
                    models.iter().map(|m| m.splats.len()).collect::<Vec<_>>()
                ),
            });
        }
        let grads = FrameGradients {
            color: out.grad_color.clone(),
            depth: out.grad_depth.clone(),
        };
        let splat_grads = rasterize_backward(&splats, &state, camera, &settings, &grads)?;

        let half = (camera.width as f64 / 2.0, camera.height as f64 / 2.0);
        for (k, &(lv, i)) in selection.members.iter().enumerate() {
            let model = &mut models[lv];
            let mut params = model.splats[i].to_params();
            adam_step(&mut params, &splat_grads.params[k], &mut model.adam[i], &lr);
            model.splats[i].set_params(&params);
            if splat_grads.visible[k] {
                let g = splat_grads.mean2d[k];
                model.grad_sum[i] += (g[0] * half.0).hypot(g[1] * half.1);
                model.grad_count[i] += 1;
            }
        }

        let mut densified = None;
        if iteration >= densify_start && iteration < densify_stop && iteration % config.densify_interval == 0 {
            let mut counts = Vec::with_capacity(l);
            for (lv, model) in models.iter_mut().enumerate() {
                let (next, origin, report) =
                    densify(&model.splats, &model.mean_grad(), config.sigma_pos, config.sigma_var, scales[lv], extent, &mut rng);
                let adam = origin.iter().map(|o| o.map_or_else(AdamState::default, |j| model.adam[j])).collect();
                *model = LevelModel::new(next);
                model.adam = adam;
                counts.push((report.cloned, report.split));
            }
            densified = Some(counts);
        }
        if config.opacity_reset && iteration % config.opacity_reset_interval == 0 {
            let cap = crate::model::logit(0.01);
            for model in models.iter_mut() {
                for s in model.splats.iter_mut() {
                    s.opacity_raw = s.opacity_raw.min(cap);
                }
            }
        }

        if iteration % config.log_interval == 0 || iteration == total || densified.is_some() {
            let record = TrainLogRecord {
                iteration,
                sample: sample_index,
                mode: selection.mode,
                l_rgb: out.rgb,
                l_depth: out.depth,
                total: out.total,
                psnr: psnr(&frame.color, &sample.image.data, mask),
                splats_per_level: models.iter().map(|m| m.splats.len()).collect(),
                densified,
            };
            observer(&record);
            log.push(record);
        }
    }
    Ok(TrainOutcome {
        levels: models.into_iter().map(|m| m.splats).collect(),
        log,
    })
}

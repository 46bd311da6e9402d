//! The pipeline stages. Each writes only below its own run subdirectory and
//! is skipped when its fingerprint matches the last successful run.

use std::path::{Path, PathBuf};

use lodsplat::dataprep::{self, split_fisheye, FisheyeModel, RigPose};
use lodsplat::engine::{EngineConfig, LodEngine, RenderStats};
use lodsplat::geometry::{Aabb, ColoredPoint, Mesh};
use lodsplat::lod::{self, CloudLevel, MultiResCloud};
use lodsplat::model::GaussianSplat;
use lodsplat::projection::{format_cameras, read_cameras, CameraRecord, PinholeCamera};
use lodsplat::raster::image_io::{self, DepthMap, Mask, RgbImage};
use lodsplat::raster::RenderSettings;
use lodsplat::store::{self, StoreServer, HIERARCHY_FILE, PAYLOAD_FILE};
use lodsplat::trainer::{self, TrainSample};
use lodsplat::{ply, Error};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::manifest::Manifest;
use crate::status::{list_files, write_if_changed, Fingerprint, StageStatus};
use crate::{CliError, Context};

pub const PREPARED_DIR: &str = "prepared";
pub const LOD_DIR: &str = "lod";
pub const TRAIN_DIR: &str = "train";
pub const STORE_DIR: &str = "store";
pub const RENDER_DIR: &str = "render";

pub const CAMERAS_FILE: &str = "cameras.txt";
pub const MESH_FILE: &str = "mesh_clean.ply";
pub const BLOCKS_FILE: &str = "blocks.json";
pub const LEVELS_FILE: &str = "levels.json";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const STATS_FILE: &str = "stats.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";

pub fn level_file(level: usize) -> String {
    format!("level_{level}.ply")
}

pub fn frame_file(index: usize) -> String {
    format!("frame_{index:04}.png")
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageOutcome {
    pub stage: &'static str,
    /// True when the stage was up to date and nothing ran.
    pub skipped: bool,
    pub outputs: Vec<PathBuf>,
}

/// Writes a stage's files, deletes leftovers from earlier runs in its
/// directory and records the fingerprint.
fn run_stage(
    m: &Manifest,
    stage: &'static str,
    dir: &str,
    fingerprint: String,
    body: impl FnOnce(&Path) -> Result<Vec<(String, Vec<u8>)>, CliError>,
) -> Result<StageOutcome, CliError> {
    let run = &m.run_dir;
    let mut status = StageStatus::load(run);
    if status.is_current(run, stage, &fingerprint) {
        log::info!("{stage}: up to date");
        let outputs = status.stages[stage].outputs.iter().map(|o| run.join(o)).collect();
        return Ok(StageOutcome {
            stage,
            skipped: true,
            outputs,
        });
    }
    let stage_dir = run.join(dir);
    let files = body(&stage_dir)?;
    let mut outputs = Vec::with_capacity(files.len());
    let mut written = 0;
    for (rel, bytes) in &files {
        let p = stage_dir.join(rel);
        if write_if_changed(&p, bytes)? {
            written += 1;
        }
        outputs.push(p);
    }
    if stage_dir.is_dir() {
        for stale in list_files(&stage_dir)? {
            if !outputs.contains(&stale) {
                std::fs::remove_file(&stale).map_err(|e| CliError::internal(format!("remove {}: {e}", stale.display())))?;
            }
        }
    }
    log::info!("{stage}: {} outputs, {written} written", outputs.len());
    status.record(run, stage, fingerprint, &outputs);
    status.save(run)?;
    Ok(StageOutcome {
        stage,
        skipped: false,
        outputs,
    })
}

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s.into_bytes()
}

fn jsonl_bytes<T: Serialize>(items: &[T]) -> Vec<u8> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("serializable"));
        out.push('\n');
    }
    out.into_bytes()
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, hint: &str) -> Result<T, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::input(format!("{}: {e} ({hint})", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::input(format!("{what} not found: {}", path.display())))
    }
}

fn png_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let rd = std::fs::read_dir(dir).map_err(|e| CliError::input(format!("inputs.images {}: {e}", dir.display())))?;
    let mut out: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    out.sort();
    Ok(out)
}

// ---------------------------------------------------------------- prepare

/// One training view as written to the prepared directory.
struct PreparedView {
    record: CameraRecord,
    image: Vec<u8>,
    mask: Option<Vec<u8>>,
    depth: Vec<u8>,
}

fn encode_view(id: String, camera: PinholeCamera, image: &RgbImage, mask: Option<&Mask>, mesh: &Mesh) -> Result<PreparedView, CliError> {
    let depth = dataprep::render_mesh_depth(mesh, &camera);
    Ok(PreparedView {
        image: image_io::encode_png(image).ctx(format!("encoding image {id}"))?,
        mask: mask.map(|m| image_io::encode_mask_png(m).ctx(format!("encoding mask {id}"))).transpose()?,
        depth: image_io::encode_depth_raw(depth.width, depth.height, &depth.data),
        record: CameraRecord { id, camera },
    })
}

/// Conditions the raw capture: splits fisheye frames, removes mesh faces
/// unsupported by the point cloud, renders per-view depth from the cleaned
/// mesh, and partitions the scene into blocks with their views.
pub fn prepare(m: &Manifest) -> Result<StageOutcome, CliError> {
    let inp = &m.inputs;
    let mesh_path = m.required(&inp.mesh, "mesh")?;
    let cams_path = m.required(&inp.cameras, "cameras")?;
    let img_dir = m.required(&inp.images, "images")?;
    require_file(mesh_path, "inputs.mesh")?;
    require_file(cams_path, "inputs.cameras")?;
    if let Some(p) = &inp.cloud {
        require_file(p, "inputs.cloud")?;
    }
    if let Some(p) = &inp.device_mask {
        require_file(p, "inputs.device_mask")?;
    }
    if png_files(img_dir)?.is_empty() {
        return Err(CliError::input(format!("inputs.images: no .png images in {}", img_dir.display())));
    }
    let records = read_cameras(cams_path).input_ctx(format!("inputs.cameras {}", cams_path.display()))?;
    if records.is_empty() {
        return Err(CliError::input(format!("inputs.cameras: {} lists no cameras", cams_path.display())));
    }
    for r in &records {
        require_file(&img_dir.join(format!("{}.png", r.id)), &format!("inputs.images: image for camera {}", r.id))?;
    }
    let [nx, ny] = m.prepare.grid;
    if nx == 0 || ny == 0 {
        return Err(CliError::input(format!("prepare.grid must be at least 1x1, got {nx}x{ny}")));
    }
    let fisheye = match &inp.fisheye {
        Some(f) => Some(FisheyeModel::new(f.focal, f.center, f.fov_deg).input_ctx("inputs.fisheye")?),
        None => None,
    };

    let mut fp = Fingerprint::new("prepare");
    fp.file(mesh_path)?.file(cams_path)?.dir(img_dir)?;
    for p in [&inp.cloud, &inp.device_mask].into_iter().flatten() {
        fp.file(p)?;
    }
    if let Some(d) = &inp.masks {
        fp.dir(d)?;
    }
    fp.json(&m.prepare).json(&inp.fisheye);

    run_stage(m, "prepare", PREPARED_DIR, fp.finish(), |_| {
        let mesh = ply::read_mesh(mesh_path).input_ctx(format!("inputs.mesh {}", mesh_path.display()))?;
        let mut removed = 0;
        let mesh = match &inp.cloud {
            Some(p) => {
                let cloud: Vec<_> = ply::read_points(p)
                    .input_ctx(format!("inputs.cloud {}", p.display()))?
                    .into_iter()
                    .map(|c| c.position)
                    .collect();
                let cleaned = dataprep::clean_mesh(&mesh, &cloud, m.prepare.clean_threshold).ctx("mesh cleanup")?;
                removed = cleaned.removed.len();
                cleaned.mesh
            }
            None => mesh,
        };
        log::info!("prepare: removed {removed} unsupported faces");
        if mesh.faces.is_empty() {
            return Err(CliError::input("mesh has no faces left after cleanup"));
        }

        let device_mask = match &inp.device_mask {
            Some(p) => Some(image_io::read_mask_png(p).input_ctx(format!("inputs.device_mask {}", p.display()))?),
            None => None,
        };
        let groups: Vec<Result<Vec<PreparedView>, CliError>> = records
            .par_iter()
            .map(|r| {
                let path = img_dir.join(format!("{}.png", r.id));
                let image = image_io::read_png(&path).input_ctx(format!("inputs.images {}", path.display()))?;
                if let (Some(model), Some(f)) = (&fisheye, &inp.fisheye) {
                    let rig = RigPose {
                        rotation: r.camera.rotation,
                        translation: r.camera.translation,
                    };
                    let views = split_fisheye(&image, device_mask.as_ref(), model, f.view_size, &rig).ctx(format!("splitting {}", r.id))?;
                    views
                        .into_iter()
                        .map(|v| encode_view(format!("{}_{}", r.id, v.view.name()), v.camera, &v.image, Some(&v.mask), &mesh))
                        .collect()
                } else {
                    if image.width != r.camera.width || image.height != r.camera.height {
                        return Err(CliError::input(format!(
                            "image {} is {}x{}, camera {} expects {}x{}",
                            path.display(),
                            image.width,
                            image.height,
                            r.id,
                            r.camera.width,
                            r.camera.height
                        )));
                    }
                    let mask = match &inp.masks {
                        Some(dir) if dir.join(format!("{}.png", r.id)).is_file() => {
                            let mp = dir.join(format!("{}.png", r.id));
                            let mask = image_io::read_mask_png(&mp).input_ctx(format!("inputs.masks {}", mp.display()))?;
                            if mask.width != image.width || mask.height != image.height {
                                return Err(CliError::input(format!("mask {} does not match its image size", mp.display())));
                            }
                            Some(mask)
                        }
                        _ => None,
                    };
                    Ok(vec![encode_view(r.id.clone(), r.camera.clone(), &image, mask.as_ref(), &mesh)?])
                }
            })
            .collect();
        let mut views = Vec::new();
        for g in groups {
            views.extend(g?);
        }

        let scene = Aabb::from_points(&mesh.vertices).expect("mesh has vertices");
        let mut blocks = dataprep::partition_blocks(&scene, nx, ny, m.prepare.expansion).ctx("partitioning")?;
        let cams: Vec<PinholeCamera> = views.iter().map(|v| v.record.camera.clone()).collect();
        for b in &mut blocks {
            b.views = dataprep::select_views(b, &cams, &mesh, m.prepare.overlap_threshold).ctx("view selection")?;
        }

        let records: Vec<CameraRecord> = views.iter().map(|v| v.record.clone()).collect();
        let mut files = vec![
            (CAMERAS_FILE.to_string(), format_cameras(&records).into_bytes()),
            (MESH_FILE.to_string(), ply::encode_mesh(&mesh)),
            (BLOCKS_FILE.to_string(), json_bytes(&blocks)),
        ];
        for v in views {
            let id = &v.record.id;
            files.push((format!("images/{id}.png"), v.image));
            files.push((format!("depth/{id}.depth"), v.depth));
            if let Some(mask) = v.mask {
                files.push((format!("masks/{id}.png"), mask));
            }
        }
        Ok(files)
    })
}

// --------------------------------------------------------------- build-lod

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelInfo {
    pub level: usize,
    pub spacing: f64,
    pub points: usize,
    pub file: String,
}

/// Index written next to the level files; level 0 is the coarsest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelsIndex {
    pub tau: f64,
    pub eps_p: usize,
    pub seed: u64,
    pub levels: Vec<LevelInfo>,
}

fn lod_mesh_path(m: &Manifest) -> Result<PathBuf, CliError> {
    let prepared = m.run_dir.join(PREPARED_DIR).join(MESH_FILE);
    if prepared.is_file() {
        return Ok(prepared);
    }
    let p = m.required(&m.inputs.mesh, "mesh")?;
    require_file(p, "inputs.mesh")?;
    Ok(p.to_path_buf())
}

/// Samples the (cleaned) mesh at the finest spacing and builds the
/// multi-resolution point levels.
pub fn build_lod(m: &Manifest) -> Result<StageOutcome, CliError> {
    let mesh_path = lod_mesh_path(m)?;
    let (tau, eps_p) = (m.lod.tau, m.lod.eps_p);
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(CliError::input(format!("lod.tau must be positive, got {tau}")));
    }
    if eps_p < 2 {
        return Err(CliError::input(format!("lod.eps_p must be at least 2, got {eps_p}")));
    }
    let mut fp = Fingerprint::new("build-lod");
    fp.file(&mesh_path)?.json(&m.lod).json(&m.seed);
    run_stage(m, "build-lod", LOD_DIR, fp.finish(), |_| {
        let mesh = ply::read_mesh(&mesh_path).input_ctx(format!("mesh {}", mesh_path.display()))?;
        let points = lod::sample_mesh(&mesh, tau, m.seed).ctx("sampling mesh")?;
        let cloud = lod::build_levels(&points, tau, eps_p).ctx("building levels")?;
        let mut index = LevelsIndex {
            tau,
            eps_p,
            seed: m.seed,
            levels: Vec::new(),
        };
        let mut files = Vec::new();
        for (l, level) in cloud.levels.iter().enumerate() {
            index.levels.push(LevelInfo {
                level: l,
                spacing: level.spacing,
                points: level.points.len(),
                file: level_file(l),
            });
            files.push((level_file(l), ply::encode_points(&level.points)));
            log::info!("build-lod: level {l} spacing {} with {} points", level.spacing, level.points.len());
        }
        files.push((LEVELS_FILE.to_string(), json_bytes(&index)));
        Ok(files)
    })
}

pub fn read_levels_index(run_dir: &Path) -> Result<LevelsIndex, CliError> {
    read_json(&run_dir.join(LOD_DIR).join(LEVELS_FILE), "run build-lod first")
}

pub fn read_lod_cloud(run_dir: &Path) -> Result<MultiResCloud, CliError> {
    let index = read_levels_index(run_dir)?;
    let dir = run_dir.join(LOD_DIR);
    let mut levels = Vec::with_capacity(index.levels.len());
    for info in &index.levels {
        let p = dir.join(&info.file);
        let points: Vec<ColoredPoint> = ply::read_points(&p).input_ctx(format!("lod level {}", p.display()))?;
        levels.push(CloudLevel {
            spacing: info.spacing,
            points,
        });
    }
    Ok(MultiResCloud { levels })
}

// ------------------------------------------------------------------- train

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TrainOptions {
    /// Photometric-only training: depth maps are ignored and the depth
    /// weight is zero.
    pub no_depth: bool,
}

fn load_samples(m: &Manifest, no_depth: bool) -> Result<Vec<TrainSample>, CliError> {
    let dir = m.run_dir.join(PREPARED_DIR);
    let cams_path = dir.join(CAMERAS_FILE);
    require_file(&cams_path, "prepared cameras (run prepare first)")?;
    let records = read_cameras(&cams_path).input_ctx(cams_path.display())?;
    let chosen: Vec<usize> = match m.block {
        None => (0..records.len()).collect(),
        Some(b) => {
            let blocks: Vec<dataprep::Block> = read_json(&dir.join(BLOCKS_FILE), "run prepare first")?;
            let block = blocks
                .iter()
                .find(|x| x.id == b)
                .ok_or_else(|| CliError::input(format!("block {b} does not exist ({} blocks)", blocks.len())))?;
            block.views.clone()
        }
    };
    if chosen.is_empty() {
        return Err(CliError::input("no training views selected"));
    }
    chosen
        .par_iter()
        .map(|&i| {
            let r = records
                .get(i)
                .ok_or_else(|| CliError::input(format!("block view {i} is not a prepared camera")))?;
            let id = &r.id;
            let image = image_io::read_png(&dir.join(format!("images/{id}.png"))).input_ctx(format!("prepared image {id}"))?;
            let depth = if no_depth {
                DepthMap {
                    width: r.camera.width,
                    height: r.camera.height,
                    data: vec![0.0; (r.camera.width * r.camera.height) as usize],
                }
            } else {
                image_io::read_depth_raw(&dir.join(format!("depth/{id}.depth"))).input_ctx(format!("prepared depth {id}"))?
            };
            let mask_path = dir.join(format!("masks/{id}.png"));
            let mask = if mask_path.is_file() {
                Some(image_io::read_mask_png(&mask_path).input_ctx(format!("prepared mask {id}"))?)
            } else {
                None
            };
            let sample = TrainSample {
                image,
                depth,
                camera: r.camera.clone(),
                mask,
            };
            sample.validate().input_ctx(format!("prepared view {id}"))?;
            Ok(sample)
        })
        .collect()
}

/// Optimizes all levels jointly from the level point clouds.
pub fn train(m: &Manifest, opts: TrainOptions) -> Result<StageOutcome, CliError> {
    let mut config = m.train.clone();
    if opts.no_depth {
        config.lambda_depth = 0.0;
    }
    config.validate().input_ctx("train config")?;
    let prepared = m.run_dir.join(PREPARED_DIR);
    let lod_dir = m.run_dir.join(LOD_DIR);
    require_file(&prepared.join(CAMERAS_FILE), "prepared cameras (run prepare first)")?;
    require_file(&lod_dir.join(LEVELS_FILE), "level index (run build-lod first)")?;
    let mut fp = Fingerprint::new("train");
    fp.dir(&prepared)?.dir(&lod_dir)?.json(&config).json(&m.block).json(&opts.no_depth);
    run_stage(m, "train", TRAIN_DIR, fp.finish(), |_| {
        let samples = load_samples(m, opts.no_depth)?;
        let init = read_lod_cloud(&m.run_dir)?;
        log::info!(
            "train: {} views, {} levels, {} iterations",
            samples.len(),
            init.num_levels(),
            config.iterations_for(samples.len())
        );
        let outcome = trainer::train(&samples, &init, &config).ctx("training")?;
        let mut files: Vec<(String, Vec<u8>)> = outcome
            .levels
            .iter()
            .enumerate()
            .map(|(l, s)| (level_file(l), ply::encode_splats(s)))
            .collect();
        files.push((TRAIN_LOG_FILE.to_string(), jsonl_bytes(&outcome.log)));
        Ok(files)
    })
}

// -------------------------------------------------------------------- pack

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PackOptions {
    /// Pack the untrained initial splats from the level clouds.
    pub from_lod: bool,
}

fn load_pack_levels(m: &Manifest, from_lod: bool) -> Result<Vec<Vec<GaussianSplat>>, CliError> {
    if from_lod {
        return Ok(read_lod_cloud(&m.run_dir)?.init_splats());
    }
    let index = read_levels_index(&m.run_dir)?;
    let dir = m.run_dir.join(TRAIN_DIR);
    (0..index.levels.len())
        .map(|l| {
            let p = dir.join(level_file(l));
            require_file(&p, "trained level (run train first)")?;
            ply::read_splats(&p, l as u8).input_ctx(format!("trained level {}", p.display()))
        })
        .collect()
}

fn pack_inputs(m: &Manifest, from_lod: bool) -> Result<Vec<PathBuf>, CliError> {
    let index = read_levels_index(&m.run_dir)?;
    let dir = m.run_dir.join(if from_lod { LOD_DIR } else { TRAIN_DIR });
    let mut v: Vec<PathBuf> = (0..index.levels.len()).map(|l| dir.join(level_file(l))).collect();
    v.push(m.run_dir.join(LOD_DIR).join(LEVELS_FILE));
    Ok(v)
}

/// Builds the octree store (`hierarchy.bin` + `octree.bin`).
pub fn pack(m: &Manifest, opts: PackOptions) -> Result<StageOutcome, CliError> {
    let inputs = pack_inputs(m, opts.from_lod)?;
    let mut fp = Fingerprint::new("pack");
    for p in &inputs {
        require_file(p, "pack input")?;
        fp.file(p)?;
    }
    fp.json(&opts.from_lod);
    run_stage(m, "pack", STORE_DIR, fp.finish(), |_| {
        let levels = load_pack_levels(m, opts.from_lod)?;
        if let Some(l) = levels.iter().position(|v| v.is_empty()) {
            return Err(CliError::input(format!("level {l} is empty ({})", inputs[l].display())));
        }
        let (h, payload) = store::build_octree(&levels).ctx("building octree")?;
        log::info!("pack: {} nodes, {} payload bytes", h.nodes.len(), payload.len());
        Ok(vec![
            (HIERARCHY_FILE.to_string(), store::encode_hierarchy(&h)),
            (PAYLOAD_FILE.to_string(), payload),
        ])
    })
}

// ------------------------------------------------------------------ render

/// Aggregate over all rendered frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderSummary {
    pub frames: usize,
    pub budget_bytes: u64,
    pub peak_resident_bytes: u64,
    pub mean_splats: f64,
    /// Splats stored at the finest level, i.e. what a non-LOD renderer draws.
    pub full_splats: u64,
    /// `mean_splats / full_splats`.
    pub lod_ratio: f64,
}

fn render_camera_path(m: &Manifest) -> Result<PathBuf, CliError> {
    match &m.render.camera_path {
        Some(p) => {
            require_file(p, "render.camera_path")?;
            Ok(p.clone())
        }
        None => {
            let p = m.run_dir.join(PREPARED_DIR).join(CAMERAS_FILE);
            require_file(&p, "camera path (set render.camera_path or run prepare)")?;
            Ok(p)
        }
    }
}

/// Streams the store through the budgeted LOD engine along a camera path.
pub fn render(m: &Manifest) -> Result<StageOutcome, CliError> {
    let store_dir = m.run_dir.join(STORE_DIR);
    let (h_path, p_path) = (store_dir.join(HIERARCHY_FILE), store_dir.join(PAYLOAD_FILE));
    require_file(&h_path, "hierarchy (run pack first)")?;
    require_file(&p_path, "payload (run pack first)")?;
    let cams_path = render_camera_path(m)?;
    let records = read_cameras(&cams_path).input_ctx(format!("camera path {}", cams_path.display()))?;
    if records.is_empty() {
        return Err(CliError::input(format!("camera path {} lists no cameras", cams_path.display())));
    }
    if m.budget.max_bytes == 0 {
        return Err(CliError::input("budget.max_bytes must be positive"));
    }
    let settings = RenderSettings {
        background: m.render.background,
        ..Default::default()
    };
    let mut fp = Fingerprint::new("render");
    fp.file(&h_path)?.file(&p_path)?.file(&cams_path)?.json(&m.budget).json(&m.render.background);
    run_stage(m, "render", RENDER_DIR, fp.finish(), |_| {
        let (h, source) = store::open_store(&store_dir).input_ctx(format!("store {}", store_dir.display()))?;
        let full_splats: u64 = h.nodes_at(h.levels - 1).map(|n| n.num_points as u64).sum();
        let mut engine = LodEngine::new(
            h,
            source,
            EngineConfig {
                budget: m.budget,
                d_max: None,
            },
        );
        for (id, e) in engine.preload_faults() {
            log::warn!("render: preload of node {id} failed: {e}");
        }
        let mut files = Vec::new();
        let mut stats: Vec<RenderStats> = Vec::new();
        for (i, r) in records.iter().enumerate() {
            let set = engine.cull_and_collect(&r.camera);
            for (id, e) in &set.faults {
                log::warn!("render: node {id} failed to load: {e}");
            }
            let (frame, s) = engine.render_view(&set, &r.camera, &settings).ctx(format!("rendering {}", r.id))?;
            if s.bytes_resident > m.budget.max_bytes {
                return Err(CliError::internal(format!("frame {i} exceeded the memory budget")));
            }
            let png = image_io::encode_png(&RgbImage::from_frame(&frame)).ctx("encoding frame")?;
            files.push((frame_file(i), png));
            stats.push(s);
        }
        let mean_splats = stats.iter().map(|s| s.splat_count as f64).sum::<f64>() / stats.len() as f64;
        let summary = RenderSummary {
            frames: stats.len(),
            budget_bytes: m.budget.max_bytes,
            peak_resident_bytes: stats.iter().map(|s| s.bytes_resident).max().unwrap_or(0),
            mean_splats,
            full_splats,
            lod_ratio: if full_splats > 0 { mean_splats / full_splats as f64 } else { 0.0 },
        };
        log::info!("render: {} frames, mean {:.0} splats ({:.3} of full)", summary.frames, mean_splats, summary.lod_ratio);
        files.push((STATS_FILE.to_string(), jsonl_bytes(&stats)));
        files.push((SUMMARY_FILE.to_string(), json_bytes(&summary)));
        Ok(files)
    })
}

// ------------------------------------------------------------------- serve

/// Serves the store directory over HTTP with byte-range support. Calls
/// `on_ready` once listening, then blocks until the server stops.
pub fn serve(m: &Manifest, on_ready: impl FnOnce(&StoreServer)) -> Result<(), CliError> {
    let dir = m.run_dir.join(STORE_DIR);
    require_file(&dir.join(HIERARCHY_FILE), "hierarchy (run pack first)")?;
    require_file(&dir.join(PAYLOAD_FILE), "payload (run pack first)")?;
    let addr = format!("{}:{}", m.serve.bind, m.serve.port);
    let server = store::serve_directory(&dir, &addr).map_err(|e| match e {
        Error::Io(io) => CliError::input(format!("cannot listen on {addr}: {io}")),
        other => CliError::from(other),
    })?;
    on_ready(&server);
    server.join();
    Ok(())
}

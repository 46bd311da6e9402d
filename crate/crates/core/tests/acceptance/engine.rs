use lodsplat::engine::{EngineConfig, LoadBudget, LodEngine};
use lodsplat::geometry::ColoredPoint;
use lodsplat::lod::build_levels;
use lodsplat::model::GaussianSplat;
use lodsplat::ply::quantize_splat;
use lodsplat::projection::PinholeCamera;
use lodsplat::raster::{rasterize, RenderSettings};
use lodsplat::store::{build_octree, MemorySource, OctreeHierarchy};
use nalgebra::Vector3;

use crate::Outcome;

const SIDE: f64 = 4.0;
const TAU: f64 = 0.02;

fn albedo(x: f64, y: f64) -> [f64; 3] {
    [
        0.5 + 0.35 * (1.3 * x).sin(),
        0.5 + 0.35 * (1.1 * y).cos(),
        0.5 + 0.25 * (0.9 * (x + y)).sin(),
    ]
}

/// A textured ground plane as four LOD levels of flat, mostly opaque splats
/// whose footprint follows each level's spacing.
fn plane_levels() -> Vec<Vec<GaussianSplat>> {
    let n = (SIDE / TAU).round() as usize;
    let mut points = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            let (x, y) = ((i as f64 + 0.5) * TAU, (j as f64 + 0.5) * TAU);
            points.push(ColoredPoint::new(Vector3::new(x, y, 0.0), albedo(x, y)));
        }
    }
    let cloud = build_levels(&points, TAU, 1000).unwrap();
    assert_eq!(cloud.num_levels(), 4, "scene should have four levels");
    cloud
        .levels
        .iter()
        .enumerate()
        .map(|(l, level)| {
            level
                .points
                .iter()
                .map(|p| {
                    let mut s = GaussianSplat::from_point(p.position, p.color, level.spacing, 0.9, l as u8);
                    s.log_scale.z = (0.05 * level.spacing).ln();
                    quantize_splat(&s)
                })
                .collect()
        })
        .collect()
}

fn engine_for(levels: &[Vec<GaussianSplat>], budget: LoadBudget) -> LodEngine<MemorySource> {
    let (h, payload) = build_octree(levels).unwrap();
    LodEngine::new(h, MemorySource::new(payload), EngineConfig { budget, d_max: None })
}

fn center(h: &OctreeHierarchy) -> Vector3<f64> {
    h.bbox.center()
}

pub fn lod_efficiency() -> Outcome {
    let levels = plane_levels();
    let mut engine = engine_for(&levels, LoadBudget::default());
    let c = center(engine.hierarchy());
    let d_max = engine.d_max();
    let dir = Vector3::new(0.0, -0.6, 0.8).normalize();
    let eye = c + dir * 0.8 * d_max;
    let size = 96;
    let cam = PinholeCamera::look_at(eye, c, Vector3::z(), 50.0, size, size).unwrap();
    let settings = RenderSettings::default();

    let set = engine.cull_and_collect(&cam);
    let (lod_frame, stats) = engine.render_view(&set, &cam, &settings).unwrap();
    let finest = levels.last().unwrap();
    let full_frame = rasterize(finest, &cam, &settings).unwrap();
    let mae = lod_frame.color.iter().zip(&full_frame.color).map(|(a, b)| (a - b).abs()).sum::<f64>() / lod_frame.color.len() as f64;
    let ratio = stats.splat_count as f64 / finest.len() as f64;
    Outcome::check(
        ratio <= 0.5 && mae * 255.0 <= 5.0,
        format!(
            "eye at {:.2}·d_max: {} of {} finest splats ({:.1}%, limit 50%), color MAE {:.2}/255 (limit 5/255), levels used {:?}",
            (eye - c).norm() / d_max,
            stats.splat_count,
            finest.len(),
            100.0 * ratio,
            mae * 255.0,
            stats.splats_per_level
        ),
    )
}

/// Orbit that sweeps in from far away to close range and back out.
fn camera_path(c: Vector3<f64>, d_max: f64) -> Vec<PinholeCamera> {
    (0..100)
        .map(|k| {
            let t = k as f64 / 100.0;
            let angle = t * std::f64::consts::TAU;
            let radius = d_max * (0.15 + 1.1 * (0.5 + 0.5 * (2.0 * angle).cos()));
            let eye = c + Vector3::new(radius * angle.cos(), radius * angle.sin(), 0.25 * radius + 0.3);
            let target = c + Vector3::new(0.3 * angle.sin(), 0.3 * angle.cos(), 0.0);
            PinholeCamera::look_at(eye, target, Vector3::z(), 60.0, 48, 48).unwrap()
        })
        .collect()
}

fn run_path(levels: &[Vec<GaussianSplat>], budget: LoadBudget) -> Result<(Vec<String>, u64), String> {
    let mut engine = engine_for(levels, budget);
    let path = camera_path(center(engine.hierarchy()), engine.d_max());
    let settings = RenderSettings::default();
    let mut log = Vec::with_capacity(path.len());
    let mut peak = 0;
    for (k, cam) in path.iter().enumerate() {
        let set = engine.cull_and_collect(cam);
        peak = peak.max(engine.resident_bytes());
        if engine.resident_bytes() > budget.max_bytes {
            return Err(format!("pose {k}: {} bytes resident", engine.resident_bytes()));
        }
        let (_, stats) = engine.render_view(&set, cam, &settings).map_err(|e| e.to_string())?;
        log.push(serde_json::to_string(&stats).unwrap());
    }
    Ok((log, peak))
}

pub fn budget_and_determinism() -> Outcome {
    let levels = plane_levels();
    let (_, payload) = build_octree(&levels).unwrap();
    let budget = LoadBudget {
        max_bytes: payload.len() as u64 / 25,
        preload_levels: 1,
    };
    let (first, peak) = match run_path(&levels, budget) {
        Ok(l) => l,
        Err(e) => return Outcome::check(false, e),
    };
    let (second, _) = match run_path(&levels, budget) {
        Ok(l) => l,
        Err(e) => return Outcome::check(false, e),
    };
    let evictions: usize = first
        .iter()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["evicted_nodes"].as_u64().unwrap() as usize)
        .sum();
    Outcome::check(
        first == second,
        format!(
            "100 poses, peak {} of {} bytes resident ({} evictions); repeated run stats {}",
            peak,
            budget.max_bytes,
            evictions,
            if first == second { "identical" } else { "differ" }
        ),
    )
}

use lodsplat::geometry::ColoredPoint;
use lodsplat::lod::{build_levels, select_level};
use lodsplat::trainer::scale_factor;
use nalgebra::Vector3;

use crate::Outcome;

pub fn formula_tables() -> Outcome {
    let sqrt2 = std::f64::consts::SQRT_2;
    let mut bad = Vec::new();
    let scale_rows: [(usize, usize, f64); 5] = [(4, 5, 1.0), (6, 7, 1.0), (0, 5, 4.0), (0, 7, 4.0), (0, 1, 1.0)];
    for (level, l, want) in scale_rows {
        let got = scale_factor(level, l, sqrt2, 4.0).unwrap();
        if got != want {
            bad.push(format!("scale_factor({level}, {l}) = {got}, want {want}"));
        }
    }
    if scale_factor(5, 5, sqrt2, 4.0).is_ok() {
        bad.push("scale_factor accepted an out-of-range level".into());
    }
    let d_max = 50.0;
    let level_rows: [(f64, usize, usize); 7] = [
        (0.0, 5, 4),
        (d_max, 5, 1),
        (2.0 * d_max, 5, 0),
        (10.0 * d_max, 5, 0),
        (0.0, 1, 0),
        (d_max, 1, 0),
        (0.0, 3, 2),
    ];
    for (d, l, want) in level_rows {
        let got = select_level(d, d_max, l);
        if got != want {
            bad.push(format!("select_level({d}, {d_max}, {l}) = {got}, want {want}"));
        }
    }
    Outcome::check(
        bad.is_empty(),
        if bad.is_empty() {
            "12 table entries exact, out-of-range level rejected".into()
        } else {
            bad.join("; ")
        },
    )
}

/// Nearest-neighbour distances by bucketing into cells of side `cell`.
fn nearest_distances(points: &[Vector3<f64>], cell: f64) -> Vec<f64> {
    use std::collections::HashMap;
    let key = |p: &Vector3<f64>| ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64, (p.z / cell).floor() as i64);
    let mut grid: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        grid.entry(key(p)).or_default().push(i);
    }
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let (kx, ky, kz) = key(p);
            let mut best = f64::INFINITY;
            let mut ring = 1;
            loop {
                for dx in -ring..=ring {
                    for dy in -ring..=ring {
                        for dz in -ring..=ring {
                            if let Some(ids) = grid.get(&(kx + dx, ky + dy, kz + dz)) {
                                for &j in ids {
                                    if j != i {
                                        best = best.min((points[j] - p).norm());
                                    }
                                }
                            }
                        }
                    }
                }
                // Anything outside the scanned cube is at least `ring * cell` away.
                if best <= ring as f64 * cell || ring > 64 {
                    return best;
                }
                ring += 1;
            }
        })
        .collect()
}

pub fn grid_cloud_levels() -> Outcome {
    let spacing = 0.01;
    let eps_p = 10_000;
    let mut points = Vec::with_capacity(40_000);
    for j in 0..200 {
        for i in 0..200 {
            let (x, y) = (i as f64 * spacing, j as f64 * spacing);
            points.push(ColoredPoint::new(Vector3::new(x, y, 0.0), [x / 2.0, y / 2.0, 0.5]));
        }
    }
    let cloud = build_levels(&points, spacing, eps_p).unwrap();
    let mut notes = Vec::new();
    let mut ok = cloud.levels.first().is_some_and(|c| c.points.len() < eps_p);
    for (l, level) in cloud.levels.iter().enumerate() {
        let pos: Vec<Vector3<f64>> = level.points.iter().map(|p| p.position).collect();
        if pos.len() < 2 {
            notes.push(format!("L{l}: {} pt", pos.len()));
            continue;
        }
        let d = nearest_distances(&pos, level.spacing);
        let good = d.iter().filter(|&&x| x >= 0.7 * level.spacing).count() as f64 / d.len() as f64;
        ok &= good >= 0.99;
        notes.push(format!("L{l}: {} pts, {:.1}% ok", pos.len(), 100.0 * good));
    }
    let counts_fall = cloud.levels.windows(2).all(|w| w[0].points.len() < w[1].points.len());
    ok &= counts_fall;
    Outcome::check(ok, format!("{} levels, coarsest below {eps_p}; {}", cloud.levels.len(), notes.join(", ")))
}

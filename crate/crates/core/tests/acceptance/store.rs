use lodsplat::model::{GaussianSplat, PARAMS_PER_SPLAT};
use lodsplat::store::{
    build_octree, decode_hierarchy, encode_hierarchy, fetch_chunk, serve_directory, write_store, HttpSource, MemorySource, OctreeHierarchy,
    PAYLOAD_FILE, RECORD_SIZE,
};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Outcome;

const STORES: usize = 1000;

fn random_levels(rng: &mut ChaCha8Rng) -> Vec<Vec<GaussianSplat>> {
    let l = rng.gen_range(1..=6);
    let extent = rng.gen_range(0.1..100.0);
    let mut levels: Vec<Vec<GaussianSplat>> = (0..l)
        .map(|lvl| {
            let n = rng.gen_range(0..=40 * (lvl + 1));
            (0..n)
                .map(|_| {
                    let mut p = [0.0; PARAMS_PER_SPLAT];
                    for v in p.iter_mut() {
                        *v = rng.gen_range(-3.0..3.0);
                    }
                    let mut s = GaussianSplat::from_params(&p, lvl as u8);
                    s.position = Vector3::new(rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()) * extent;
                    // Occasional exact duplicates and degenerate clusters.
                    if rng.gen_bool(0.05) {
                        s.position = Vector3::repeat(0.5 * extent);
                    }
                    s
                })
                .collect()
        })
        .collect();
    if levels.iter().all(|v| v.is_empty()) {
        let mut s = GaussianSplat::from_params(&[0.25; PARAMS_PER_SPLAT], 0);
        s.position = Vector3::repeat(extent);
        levels[0].push(s);
    }
    levels
}

/// Bit patterns of the f32 on-disk values, sorted, per level.
fn level_bits(levels: &[Vec<GaussianSplat>]) -> Vec<Vec<[u32; PARAMS_PER_SPLAT]>> {
    levels
        .iter()
        .map(|v| {
            let mut bits: Vec<[u32; PARAMS_PER_SPLAT]> = v.iter().map(|s| s.to_params().map(|x| (x as f32).to_bits())).collect();
            bits.sort();
            bits
        })
        .collect()
}

fn fetched_bits(h: &OctreeHierarchy, source: &dyn lodsplat::store::ChunkSource) -> Result<Vec<Vec<[u32; PARAMS_PER_SPLAT]>>, String> {
    let mut per_level = vec![Vec::new(); h.levels];
    for n in h.nodes.iter().filter(|n| n.num_points > 0) {
        for s in fetch_chunk(source, n).map_err(|e| e.to_string())? {
            if s.lod_level != n.depth {
                return Err(format!("node {} returned level {}", n.id, s.lod_level));
            }
            per_level[n.depth as usize].push(s.to_params().map(|x| (x as f32).to_bits()));
        }
    }
    for v in per_level.iter_mut() {
        v.sort();
    }
    Ok(per_level)
}

fn accounting(h: &OctreeHierarchy, levels: &[Vec<GaussianSplat>], payload_len: usize) -> Result<(), String> {
    let mut spans: Vec<(u64, u64)> = Vec::new();
    for n in &h.nodes {
        if n.byte_size != n.num_points as u64 * RECORD_SIZE as u64 {
            return Err(format!("node {}: size {} for {} points", n.id, n.byte_size, n.num_points));
        }
        if n.num_points > 0 {
            spans.push((n.byte_offset, n.byte_offset + n.byte_size));
        }
    }
    spans.sort();
    let mut cursor = 0;
    for (a, b) in spans {
        if a != cursor {
            return Err(format!("payload gap or overlap at byte {a}"));
        }
        cursor = b;
    }
    if cursor != payload_len as u64 {
        return Err(format!("payload spans end at {cursor}, payload is {payload_len}"));
    }
    for (l, v) in levels.iter().enumerate() {
        if h.bytes_at(l) != (v.len() * RECORD_SIZE) as u64 {
            return Err(format!("level {l}: {} bytes for {} splats", h.bytes_at(l), v.len()));
        }
    }
    Ok(())
}

pub fn fuzzed_round_trip() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut stores = Vec::with_capacity(STORES);
    for i in 0..STORES {
        let levels = random_levels(&mut rng);
        let (h, payload) = match build_octree(&levels) {
            Ok(x) => x,
            Err(e) => return Outcome::check(false, format!("store {i}: build failed: {e}")),
        };
        let decoded = match decode_hierarchy(&encode_hierarchy(&h)) {
            Ok(d) => d,
            Err(e) => return Outcome::check(false, format!("store {i}: hierarchy decode failed: {e}")),
        };
        if let Err(e) = accounting(&decoded, &levels, payload.len()) {
            return Outcome::check(false, format!("store {i}: {e}"));
        }
        let want = level_bits(&levels);
        match fetched_bits(&decoded, &MemorySource::new(payload.clone())) {
            Ok(got) if got == want => {}
            Ok(_) => return Outcome::check(false, format!("store {i}: fetched splats differ from input")),
            Err(e) => return Outcome::check(false, format!("store {i}: {e}")),
        }
        let dir = root.path().join(format!("s{i}"));
        write_store(&dir, &h, &payload).unwrap();
        stores.push((decoded, want));
    }

    let server = serve_directory(root.path(), "127.0.0.1:0").unwrap();
    let mut ranges = 0;
    for (i, (h, want)) in stores.iter().enumerate() {
        let http = HttpSource::new(server.url(&format!("s{i}/{PAYLOAD_FILE}")));
        match fetched_bits(h, &http) {
            Ok(got) if got == *want => ranges += h.nodes.iter().filter(|n| n.num_points > 0).count(),
            Ok(_) => return Outcome::check(false, format!("store {i}: HTTP fetch differs from local fetch")),
            Err(e) => return Outcome::check(false, format!("store {i}: HTTP fetch failed: {e}")),
        }
    }
    server.shutdown();
    Outcome::check(
        true,
        format!("{STORES} stores bit-exact per level, byte accounting holds, {ranges} HTTP range fetches match"),
    )
}

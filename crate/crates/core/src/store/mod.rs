//! Two-file octree store: `hierarchy.bin` holds node metadata in
//! breadth-first order, `octree.bin` the concatenated splat records.
//!
//! Hierarchy layout (little-endian):
//!
//! | bytes | field |
//! |---|---|
//! | 4 | magic `LGSO` |
//! | 4 | `u32` version (1) |
//! | 4 | `u32` level count `L` |
//! | 48 | global bbox, 6 × `f64` (min xyz, max xyz) |
//! | 4 | `u32` node count |
//! | 72 × n | node records |
//!
//! Node record: `u8` depth, `u8` child mask (bit `o` = octant `o` present,
//! octant bits x | y << 1 | z << 2), `u16` reserved (0), `u32` point count,
//! `u64` payload offset, `u64` payload size, bbox as 6 × `f64`.
//!
//! Payload record: 38 × `f32` in parameter order (position, raw rotation
//! wxyz, log scale, raw opacity, SH coefficients channel-major).

mod server;
mod source;

pub use server::{serve_directory, StoreServer};
pub use source::{fetch_url, ChunkSource, FileSource, HttpSource, MemorySource};

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Aabb;
use crate::model::{GaussianSplat, PARAMS_PER_SPLAT};
use crate::ply::quantize_splat;

pub const MAGIC: &[u8; 4] = b"LGSO";
pub const VERSION: u32 = 1;
pub const RECORD_SIZE: usize = PARAMS_PER_SPLAT * 4;
pub const HEADER_SIZE: usize = 64;
pub const NODE_RECORD_SIZE: usize = 72;
/// Octant paths are packed three bits per level into a `u64`.
pub const MAX_LEVELS: usize = 21;
pub const HIERARCHY_FILE: &str = "hierarchy.bin";
pub const PAYLOAD_FILE: &str = "octree.bin";

#[derive(Debug, Clone, PartialEq)]
pub struct OctreeNode {
    /// Position in breadth-first order; stable identifier of the node.
    pub id: usize,
    pub depth: u8,
    pub child_mask: u8,
    pub num_points: u32,
    pub byte_offset: u64,
    pub byte_size: u64,
    pub bbox: Aabb,
    pub parent: Option<usize>,
    /// Child ids by octant.
    pub children: [Option<usize>; 8],
}

#[derive(Debug, Clone, PartialEq)]
pub struct OctreeHierarchy {
    pub levels: usize,
    pub bbox: Aabb,
    pub nodes: Vec<OctreeNode>,
}

impl OctreeHierarchy {
    pub fn root(&self) -> &OctreeNode {
        &self.nodes[0]
    }

    pub fn payload_len(&self) -> u64 {
        self.nodes.iter().map(|n| n.byte_size).sum()
    }

    pub fn total_points(&self) -> u64 {
        self.nodes.iter().map(|n| n.num_points as u64).sum()
    }

    /// Nodes at one depth, in breadth-first order.
    pub fn nodes_at(&self, depth: usize) -> impl Iterator<Item = &OctreeNode> {
        self.nodes.iter().filter(move |n| n.depth as usize == depth)
    }

    pub fn bytes_at(&self, depth: usize) -> u64 {
        self.nodes_at(depth).map(|n| n.byte_size).sum()
    }

    /// Diameter of the sphere around the global box.
    pub fn diameter(&self) -> f64 {
        self.bbox.diagonal()
    }
}

pub fn encode_record(s: &GaussianSplat, out: &mut Vec<u8>) {
    for v in s.to_params() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub fn decode_record(bytes: &[u8], lod_level: u8) -> Result<GaussianSplat> {
    if bytes.len() != RECORD_SIZE {
        return Err(Error::contract(format!("record of {} bytes", bytes.len())));
    }
    let mut p = [0.0; PARAMS_PER_SPLAT];
    for (k, c) in bytes.chunks_exact(4).enumerate() {
        p[k] = f32::from_le_bytes(c.try_into().unwrap()) as f64;
    }
    let s = GaussianSplat::from_params(&p, lod_level);
    if !s.is_finite() {
        return Err(Error::Corrupt("payload record decodes to non-finite values".into()));
    }
    Ok(s)
}

/// Interleaves the low 21 bits of three integers.
pub fn morton3(x: u32, y: u32, z: u32) -> u64 {
    fn spread(v: u32) -> u64 {
        let mut x = v as u64 & 0x1f_ffff;
        x = (x | x << 32) & 0x1f00000000ffff;
        x = (x | x << 16) & 0x1f0000ff0000ff;
        x = (x | x << 8) & 0x100f00f00f00f00f;
        x = (x | x << 4) & 0x10c30c30c30c30c3;
        x = (x | x << 2) & 0x1249249249249249;
        x
    }
    spread(x) | spread(y) << 1 | spread(z) << 2
}

fn morton_key(bbox: &Aabb, p: &nalgebra::Vector3<f64>) -> u64 {
    let side = bbox.extent();
    let q = |axis: usize| -> u32 {
        if side[axis] <= 0.0 {
            return 0;
        }
        let t = ((p[axis] - bbox.min[axis]) / side[axis]).clamp(0.0, 1.0);
        ((t * ((1u32 << 21) - 1) as f64).round() as u32).min((1 << 21) - 1)
    };
    morton3(q(0), q(1), q(2))
}

fn octant_of(b: &Aabb, p: &nalgebra::Vector3<f64>) -> u8 {
    let mid = b.center();
    (0..3).fold(0u8, |acc, axis| acc | (((p[axis] >= mid[axis]) as u8) << axis))
}

/// Global cube enclosing every splat of every level.
pub fn global_bbox(levels: &[Vec<GaussianSplat>]) -> Option<Aabb> {
    let b = Aabb::from_points(levels.iter().flatten().map(|s| &s.position))?;
    let mut cube = b.cubified();
    if cube.extent().x <= 0.0 {
        cube.max = cube.min + nalgebra::Vector3::repeat(1.0);
    }
    Some(cube)
}

struct Builder {
    bbox: Aabb,
    records: Vec<(u64, Vec<u8>)>,
}

/// Packs per-level splats (index = level) into a hierarchy and payload.
/// Every splat is rounded to `f32` first, so packing already-packed data
/// reproduces it exactly.
pub fn build_octree(levels: &[Vec<GaussianSplat>]) -> Result<(OctreeHierarchy, Vec<u8>)> {
    let l = levels.len();
    if l == 0 || l > MAX_LEVELS {
        return Err(Error::invalid(format!("octree needs 1..={MAX_LEVELS} levels, got {l}")));
    }
    if levels.iter().all(|v| v.is_empty()) {
        return Err(Error::EmptyInput("octree: all levels are empty".into()));
    }
    let quantized: Vec<Vec<GaussianSplat>> = levels.iter().map(|v| v.iter().map(quantize_splat).collect()).collect();
    if let Some((lvl, _)) = quantized.iter().enumerate().find(|(_, v)| v.iter().any(|s| !s.is_finite())) {
        return Err(Error::invalid(format!("level {lvl} contains non-finite splats")));
    }
    let bbox = global_bbox(&quantized).expect("non-empty");

    // Node key: (depth, octant path). Ordering by key is breadth-first with
    // children in octant order.
    let mut nodes: BTreeMap<(u8, u64), Builder> = BTreeMap::new();
    nodes.insert((0, 0), Builder { bbox, records: vec![] });
    for (depth, splats) in quantized.iter().enumerate() {
        for s in splats {
            if !bbox.contains(&s.position) {
                return Err(Error::contract("splat outside the global bounding box"));
            }
            let mut path = 0u64;
            let mut b = bbox;
            for d in 0..depth {
                let o = octant_of(&b, &s.position);
                b = b.octant(o);
                path = path << 3 | o as u64;
                nodes.entry((d as u8 + 1, path)).or_insert(Builder { bbox: b, records: vec![] });
            }
            let mut rec = Vec::with_capacity(RECORD_SIZE);
            encode_record(s, &mut rec);
            nodes.get_mut(&(depth as u8, path)).unwrap().records.push((morton_key(&bbox, &s.position), rec));
        }
    }

    let keys: Vec<(u8, u64)> = nodes.keys().copied().collect();
    let index: BTreeMap<(u8, u64), usize> = keys.iter().enumerate().map(|(i, k)| (*k, i)).collect();
    let mut out = Vec::with_capacity(keys.len());
    let mut payload = Vec::new();
    for (id, key) in keys.iter().enumerate() {
        let builder = nodes.get_mut(key).unwrap();
        builder.records.sort();
        let offset = payload.len() as u64;
        for (_, rec) in &builder.records {
            payload.extend_from_slice(rec);
        }
        let mut children = [None; 8];
        let mut mask = 0u8;
        for (o, slot) in children.iter_mut().enumerate() {
            if let Some(&c) = index.get(&(key.0 + 1, key.1 << 3 | o as u64)) {
                *slot = Some(c);
                mask |= 1 << o;
            }
        }
        let parent = if key.0 == 0 { None } else { Some(index[&(key.0 - 1, key.1 >> 3)]) };
        out.push(OctreeNode {
            id,
            depth: key.0,
            child_mask: mask,
            num_points: builder.records.len() as u32,
            byte_offset: offset,
            byte_size: (builder.records.len() * RECORD_SIZE) as u64,
            bbox: builder.bbox,
            parent,
            children,
        });
    }
    Ok((OctreeHierarchy { levels: l, bbox, nodes: out }, payload))
}

pub fn encode_hierarchy(h: &OctreeHierarchy) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_SIZE + NODE_RECORD_SIZE * h.nodes.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(h.levels as u32).to_le_bytes());
    for v in h.bbox.to_array() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(h.nodes.len() as u32).to_le_bytes());
    for n in &h.nodes {
        out.push(n.depth);
        out.push(n.child_mask);
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&n.num_points.to_le_bytes());
        out.extend_from_slice(&n.byte_offset.to_le_bytes());
        out.extend_from_slice(&n.byte_size.to_le_bytes());
        for v in n.bbox.to_array() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

fn u64_at(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().unwrap())
}

fn bbox_at(b: &[u8], at: usize) -> Aabb {
    Aabb::from_array(std::array::from_fn(|k| f64::from_le_bytes(b[at + 8 * k..at + 8 * k + 8].try_into().unwrap())))
}

/// Parses and fully validates a hierarchy; never returns a partial tree.
pub fn decode_hierarchy(bytes: &[u8]) -> Result<OctreeHierarchy> {
    if bytes.len() < HEADER_SIZE {
        return Err(Error::format(bytes.len() as u64, "hierarchy shorter than its header"));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::format(0, "bad magic"));
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let levels = u32_at(bytes, 8) as usize;
    if levels == 0 || levels > MAX_LEVELS {
        return Err(Error::format(8, format!("level count {levels} out of range")));
    }
    let bbox = bbox_at(bytes, 12);
    let count = u32_at(bytes, 60) as usize;
    let expected = HEADER_SIZE + count * NODE_RECORD_SIZE;
    if bytes.len() < expected {
        return Err(Error::format(bytes.len() as u64, format!("hierarchy truncated: {count} nodes need {expected} bytes")));
    }
    if bytes.len() > expected {
        return Err(Error::format(expected as u64, "trailing bytes after the last node"));
    }
    if count == 0 {
        return Err(Error::format(60, "hierarchy has no nodes"));
    }
    let mut nodes: Vec<OctreeNode> = Vec::with_capacity(count);
    for i in 0..count {
        let at = HEADER_SIZE + i * NODE_RECORD_SIZE;
        let reserved = u16::from_le_bytes([bytes[at + 2], bytes[at + 3]]);
        if reserved != 0 {
            return Err(Error::format(at as u64 + 2, "reserved field is non-zero"));
        }
        nodes.push(OctreeNode {
            id: i,
            depth: bytes[at],
            child_mask: bytes[at + 1],
            num_points: u32_at(bytes, at + 4),
            byte_offset: u64_at(bytes, at + 8),
            byte_size: u64_at(bytes, at + 16),
            bbox: bbox_at(bytes, at + 24),
            parent: None,
            children: [None; 8],
        });
    }
    // Replay the breadth-first emission to link and check every node.
    let node_err = |i: usize, msg: String| Error::format((HEADER_SIZE + i * NODE_RECORD_SIZE) as u64, msg);
    if nodes[0].depth != 0 || nodes[0].bbox != bbox {
        return Err(node_err(0, "first node is not the root".into()));
    }
    let mut next = 1usize;
    let mut running = 0u64;
    for i in 0..count {
        let n = &nodes[i];
        if n.depth as usize >= levels {
            return Err(node_err(i, format!("depth {} exceeds level count {levels}", n.depth)));
        }
        if n.byte_size != n.num_points as u64 * RECORD_SIZE as u64 {
            return Err(node_err(i, "byte size does not match point count".into()));
        }
        if n.byte_offset != running {
            return Err(node_err(i, format!("byte offset {} breaks contiguity (expected {running})", n.byte_offset)));
        }
        running += n.byte_size;
        if n.num_points == 0 && n.child_mask == 0 {
            return Err(node_err(i, "empty leaf node".into()));
        }
        let (depth, mask, parent_box) = (n.depth, n.child_mask, n.bbox);
        for o in 0..8u8 {
            if mask >> o & 1 == 0 {
                continue;
            }
            if next >= count {
                return Err(node_err(i, "child mask references missing nodes".into()));
            }
            let c = &mut nodes[next];
            if c.depth != depth + 1 || c.bbox != parent_box.octant(o) {
                return Err(node_err(next, format!("node is not octant {o} of node {i}")));
            }
            c.parent = Some(i);
            nodes[i].children[o as usize] = Some(next);
            next += 1;
        }
    }
    if next != count {
        return Err(node_err(next, "node not reachable from the root".into()));
    }
    Ok(OctreeHierarchy { levels, bbox, nodes })
}

pub fn read_hierarchy(path: &Path) -> Result<OctreeHierarchy> {
    decode_hierarchy(&std::fs::read(path)?)
}

/// Decodes all records of a node from any random-access source.
pub fn fetch_chunk(source: &dyn ChunkSource, node: &OctreeNode) -> Result<Vec<GaussianSplat>> {
    if node.num_points == 0 || node.byte_size == 0 {
        return Err(Error::contract(format!("node {} has no payload to fetch", node.id)));
    }
    let bytes = source.read_range(node.byte_offset, node.byte_size)?;
    if bytes.len() as u64 != node.byte_size {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::UnexpectedEof,
            format!("short read for node {}: {} of {} bytes", node.id, bytes.len(), node.byte_size),
        )));
    }
    bytes.chunks_exact(RECORD_SIZE).map(|r| decode_record(r, node.depth)).collect()
}

/// Writes `hierarchy.bin` and `octree.bin` into `dir`.
pub fn write_store(dir: &Path, hierarchy: &OctreeHierarchy, payload: &[u8]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(HIERARCHY_FILE), encode_hierarchy(hierarchy))?;
    std::fs::write(dir.join(PAYLOAD_FILE), payload)?;
    Ok(())
}

pub fn open_store(dir: &Path) -> Result<(OctreeHierarchy, FileSource)> {
    let h = read_hierarchy(&dir.join(HIERARCHY_FILE))?;
    let src = FileSource::open(&dir.join(PAYLOAD_FILE))?;
    if src.len() != h.payload_len() {
        return Err(Error::Corrupt(format!("payload is {} bytes, hierarchy expects {}", src.len(), h.payload_len())));
    }
    Ok((h, src))
}

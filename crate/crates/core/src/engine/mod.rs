//! Reference LOD renderer over an octree store: node visibility, distance
//! banded level selection, budgeted coarse-to-fine loading with LRU
//! eviction, and per-frame statistics.

mod loader;

pub use loader::AsyncLoader;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Arc;

use nalgebra::{Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::Result;
pub use crate::lod::select_level;
use crate::model::GaussianSplat;
use crate::projection::{PinholeCamera, NEAR_PLANE};
use crate::raster::{rasterize, FrameBuffer, RenderSettings};
use crate::store::{fetch_chunk, ChunkSource, OctreeHierarchy, OctreeNode};

pub const DEFAULT_MAX_BYTES: u64 = 2 << 30;
/// Far plane as a multiple of the scene diameter.
pub const FAR_FACTOR: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoadBudget {
    pub max_bytes: u64,
    /// Number of coarsest levels loaded up front and never evicted.
    pub preload_levels: usize,
}

impl Default for LoadBudget {
    fn default() -> Self {
        LoadBudget {
            max_bytes: DEFAULT_MAX_BYTES,
            preload_levels: 1,
        }
    }
}

/// Six inward-facing planes `n·p + d >= 0` in world space.
#[derive(Debug, Clone, PartialEq)]
pub struct Frustum {
    pub planes: [Vector4<f64>; 6],
}

impl Frustum {
    /// Planes of the image rectangle plus near and far, in the order left,
    /// right, top, bottom, near, far.
    pub fn from_camera(camera: &PinholeCamera, near: f64, far: f64) -> Frustum {
        let (w, h) = (camera.width as f64, camera.height as f64);
        let cam_planes = [
            (Vector3::new(camera.fx, 0.0, camera.cx), 0.0),
            (Vector3::new(-camera.fx, 0.0, w - camera.cx), 0.0),
            (Vector3::new(0.0, camera.fy, camera.cy), 0.0),
            (Vector3::new(0.0, -camera.fy, h - camera.cy), 0.0),
            (Vector3::new(0.0, 0.0, 1.0), -near),
            (Vector3::new(0.0, 0.0, -1.0), far),
        ];
        let planes = cam_planes.map(|(n, d)| {
            let nw = camera.rotation.transpose() * n;
            Vector4::new(nw.x, nw.y, nw.z, n.dot(&camera.translation) + d)
        });
        Frustum { planes }
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        self.planes.iter().all(|pl| pl.x * p.x + pl.y * p.y + pl.z * p.z + pl.w >= 0.0)
    }
}

#[derive(Debug, Clone)]
struct Resident {
    splats: Arc<Vec<GaussianSplat>>,
    bytes: u64,
    last_used: u64,
    preloaded: bool,
}

#[derive(Debug, Clone)]
pub struct RenderEntry {
    pub node: usize,
    pub depth: u8,
    pub splats: Arc<Vec<GaussianSplat>>,
    /// False when the node stands in for a descendant that is not loaded.
    pub is_target: bool,
}

/// Immutable snapshot of what to draw for one view.
#[derive(Debug, Clone, Default)]
pub struct RenderSet {
    pub entries: Vec<RenderEntry>,
    pub total_splats: usize,
    pub resident_bytes: u64,
    pub loaded_bytes: u64,
    pub evicted_nodes: usize,
    pub visible_nodes: usize,
    pub target_nodes: usize,
    pub faults: Vec<(usize, String)>,
}

impl RenderSet {
    pub fn node_ids(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.entries.iter().map(|e| e.node).collect();
        ids.sort_unstable();
        ids
    }

    pub fn splats(&self) -> Vec<GaussianSplat> {
        self.entries.iter().flat_map(|e| e.splats.iter().cloned()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderStats {
    pub frame: usize,
    pub splat_count: usize,
    pub nodes_touched: usize,
    pub visible_nodes: usize,
    pub target_nodes: usize,
    pub bytes_resident: u64,
    pub bytes_loaded: u64,
    pub evicted_nodes: usize,
    /// Emitted nodes per level.
    pub nodes_per_level: Vec<usize>,
    /// Emitted splats per level.
    pub splats_per_level: Vec<usize>,
    pub faults: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineConfig {
    pub budget: LoadBudget,
    /// Distance normalizer for level selection; `None` uses the diameter of
    /// the store's bounding cube.
    pub d_max: Option<f64>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            budget: LoadBudget::default(),
            d_max: None,
        }
    }
}

/// The nodes a view wants, before any loading.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewPlan {
    pub visible: Vec<usize>,
    /// Targets in load order: coarse to fine, then near to far, then id.
    pub targets: Vec<usize>,
}

/// Visibility: bbox center inside the frustum, or camera inside the bbox.
pub fn node_visible(node: &OctreeNode, frustum: &Frustum, eye: &Vector3<f64>) -> bool {
    frustum.contains(&node.bbox.center()) || node.bbox.contains(eye)
}

/// Picks a cut through the octree: starting at the root, a node with payload
/// is a target when the level selected for its distance is no finer than its
/// own depth, or when it has no children; otherwise its children are
/// examined. Targets outside the frustum are dropped.
pub fn plan_view(h: &OctreeHierarchy, camera: &PinholeCamera, d_max: f64) -> ViewPlan {
    let frustum = Frustum::from_camera(camera, NEAR_PLANE, FAR_FACTOR * h.diameter());
    let eye = camera.center();
    let visible: Vec<usize> = h.nodes.iter().filter(|n| node_visible(n, &frustum, &eye)).map(|n| n.id).collect();
    let mut targets = Vec::new();
    let mut stack = if h.nodes.is_empty() { Vec::new() } else { vec![0] };
    while let Some(id) = stack.pop() {
        let n = &h.nodes[id];
        let dist = (n.bbox.center() - eye).norm();
        let leaf = n.children.iter().all(Option::is_none);
        if n.num_points > 0 && (leaf || select_level(dist, d_max, h.levels) <= n.depth as usize) {
            if node_visible(n, &frustum, &eye) {
                targets.push((n.depth, dist, n.id));
            }
        } else {
            stack.extend(n.children.iter().flatten());
        }
    }
    targets.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
    ViewPlan {
        visible,
        targets: targets.into_iter().map(|t| t.2).collect(),
    }
}

fn plan_rank(plan: &ViewPlan) -> HashMap<usize, usize> {
    plan.targets.iter().enumerate().map(|(k, &id)| (id, k)).collect()
}

pub struct LodEngine<S: ChunkSource> {
    hierarchy: Arc<OctreeHierarchy>,
    source: Arc<S>,
    budget: LoadBudget,
    d_max: f64,
    resident: HashMap<usize, Resident>,
    resident_bytes: u64,
    clock: u64,
    frame: usize,
    preload_faults: Vec<(usize, String)>,
    pending: HashSet<usize>,
    pending_bytes: u64,
}

impl<S: ChunkSource + 'static> LodEngine<S> {
    /// Loads the preload levels coarse-first in breadth-first order, stopping
    /// at the first node that would exceed the budget.
    pub fn new(hierarchy: OctreeHierarchy, source: S, config: EngineConfig) -> Self {
        let d_max = config.d_max.unwrap_or_else(|| hierarchy.diameter()).max(f64::MIN_POSITIVE);
        let mut engine = LodEngine {
            hierarchy: Arc::new(hierarchy),
            source: Arc::new(source),
            budget: config.budget,
            d_max,
            resident: HashMap::new(),
            resident_bytes: 0,
            clock: 0,
            frame: 0,
            preload_faults: Vec::new(),
            pending: HashSet::new(),
            pending_bytes: 0,
        };
        let h = Arc::clone(&engine.hierarchy);
        'levels: for depth in 0..engine.budget.preload_levels.min(h.levels) {
            for n in h.nodes_at(depth).filter(|n| n.num_points > 0) {
                if engine.resident_bytes + n.byte_size > engine.budget.max_bytes {
                    break 'levels;
                }
                match fetch_chunk(engine.source.as_ref(), n) {
                    Ok(splats) => engine.insert(n, Arc::new(splats), true),
                    Err(e) => engine.preload_faults.push((n.id, e.to_string())),
                }
            }
        }
        engine
    }

    pub fn hierarchy(&self) -> &OctreeHierarchy {
        &self.hierarchy
    }

    pub fn d_max(&self) -> f64 {
        self.d_max
    }

    pub fn resident_bytes(&self) -> u64 {
        self.resident_bytes
    }

    pub fn is_resident(&self, node: usize) -> bool {
        self.resident.contains_key(&node)
    }

    pub fn resident_nodes(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.resident.keys().copied().collect();
        v.sort_unstable();
        v
    }

    pub fn preload_faults(&self) -> &[(usize, String)] {
        &self.preload_faults
    }

    fn insert(&mut self, n: &OctreeNode, splats: Arc<Vec<GaussianSplat>>, preloaded: bool) {
        self.clock += 1;
        self.resident_bytes += n.byte_size;
        self.resident.insert(
            n.id,
            Resident {
                splats,
                bytes: n.byte_size,
                last_used: self.clock,
                preloaded,
            },
        );
    }

    fn touch(&mut self, id: usize) {
        self.clock += 1;
        if let Some(r) = self.resident.get_mut(&id) {
            r.last_used = self.clock;
        }
    }

    /// Frees room for `needed` more bytes. Victims are never preloaded and
    /// never outrank the chunk being loaded: non-targets go first, least
    /// recently used first, then lower-priority targets from the back of the
    /// plan. Returns the eviction count, or `None` (evicting nothing) when the
    /// chunk cannot fit.
    fn make_room(&mut self, needed: u64, rank: &HashMap<usize, usize>, current: usize) -> Option<usize> {
        let limit = self.budget.max_bytes;
        let used = self.resident_bytes + self.pending_bytes;
        if used + needed <= limit {
            return Some(0);
        }
        let mut candidates: Vec<(usize, u64, usize, u64)> = self
            .resident
            .iter()
            .filter(|(id, r)| !r.preloaded && rank.get(id).map_or(true, |&k| k > current))
            .map(|(id, r)| match rank.get(id) {
                None => (0, r.last_used, *id, r.bytes),
                Some(&k) => (1, u64::MAX - k as u64, *id, r.bytes),
            })
            .collect();
        candidates.sort_unstable();
        let mut freed = 0u64;
        let mut take = 0usize;
        for c in &candidates {
            if used - freed + needed <= limit {
                break;
            }
            freed += c.3;
            take += 1;
        }
        if used - freed + needed > limit {
            return None;
        }
        for c in &candidates[..take] {
            self.resident.remove(&c.2);
            self.resident_bytes -= c.3;
        }
        Some(take)
    }

    /// Emits resident targets, and for each missing target its nearest
    /// resident ancestor (once).
    fn assemble(&mut self, plan: &ViewPlan, mut set: RenderSet) -> RenderSet {
        let h = Arc::clone(&self.hierarchy);
        let mut emitted = HashSet::new();
        for &t in &plan.targets {
            let mut id = Some(t);
            while let Some(cur) = id {
                if self.resident.contains_key(&cur) {
                    if emitted.insert(cur) {
                        self.touch(cur);
                        let r = &self.resident[&cur];
                        set.entries.push(RenderEntry {
                            node: cur,
                            depth: h.nodes[cur].depth,
                            splats: Arc::clone(&r.splats),
                            is_target: cur == t,
                        });
                    }
                    break;
                }
                id = h.nodes[cur].parent;
            }
        }
        set.total_splats = set.entries.iter().map(|e| e.splats.len()).sum();
        set.resident_bytes = self.resident_bytes;
        set.visible_nodes = plan.visible.len();
        set.target_nodes = plan.targets.len();
        set
    }

    /// Synchronous update: loads missing targets in plan order until the
    /// first one that cannot fit, then assembles the render set.
    pub fn cull_and_collect(&mut self, camera: &PinholeCamera) -> RenderSet {
        let h = Arc::clone(&self.hierarchy);
        let plan = plan_view(&h, camera, self.d_max);
        let rank = plan_rank(&plan);
        let mut set = RenderSet::default();
        for (k, &t) in plan.targets.iter().enumerate() {
            if self.resident.contains_key(&t) {
                continue;
            }
            let node = &h.nodes[t];
            match self.make_room(node.byte_size, &rank, k) {
                Some(evicted) => set.evicted_nodes += evicted,
                None => break,
            }
            match fetch_chunk(self.source.as_ref(), node) {
                Ok(splats) => {
                    set.loaded_bytes += node.byte_size;
                    self.insert(node, Arc::new(splats), false);
                }
                Err(e) => set.faults.push((t, e.to_string())),
            }
        }
        debug_assert!(self.resident_bytes <= self.budget.max_bytes);
        self.assemble(&plan, set)
    }

    /// Non-blocking update: integrates finished loads, queues missing
    /// targets on `loader` within the budget, and returns the best set that
    /// is resident right now.
    pub fn update_async(&mut self, camera: &PinholeCamera, loader: &AsyncLoader) -> RenderSet {
        let mut set = RenderSet::default();
        self.integrate(loader, &mut set);
        let h = Arc::clone(&self.hierarchy);
        let plan = plan_view(&h, camera, self.d_max);
        let rank = plan_rank(&plan);
        for (k, &t) in plan.targets.iter().enumerate() {
            if self.resident.contains_key(&t) || self.pending.contains(&t) {
                continue;
            }
            let node = &h.nodes[t];
            match self.make_room(node.byte_size, &rank, k) {
                Some(evicted) => set.evicted_nodes += evicted,
                None => break,
            }
            self.pending.insert(t);
            self.pending_bytes += node.byte_size;
            loader.request(node.clone());
        }
        self.assemble(&plan, set)
    }

    /// Number of loads queued but not yet integrated.
    pub fn pending_loads(&self) -> usize {
        self.pending.len()
    }

    fn integrate(&mut self, loader: &AsyncLoader, set: &mut RenderSet) {
        let h = Arc::clone(&self.hierarchy);
        for (id, result) in loader.completed() {
            if !self.pending.remove(&id) {
                continue;
            }
            let node = &h.nodes[id];
            self.pending_bytes -= node.byte_size;
            match result {
                Ok(splats) => {
                    set.loaded_bytes += node.byte_size;
                    self.insert(node, splats, false);
                }
                Err(e) => set.faults.push((id, e)),
            }
        }
    }

    /// Blocks until every queued load has been integrated.
    pub fn drain(&mut self, loader: &AsyncLoader) {
        let mut sink = RenderSet::default();
        while !self.pending.is_empty() {
            loader.wait_one();
            self.integrate(loader, &mut sink);
        }
    }

    pub fn source(&self) -> Arc<S> {
        Arc::clone(&self.source)
    }

    /// Rasterizes a render set and reports what was drawn.
    pub fn render_view(&mut self, set: &RenderSet, camera: &PinholeCamera, settings: &RenderSettings) -> Result<(FrameBuffer, RenderStats)> {
        let frame = render_set(set, camera, settings)?;
        let stats = self.stats_for(set);
        self.frame += 1;
        Ok((frame, stats))
    }

    pub fn stats_for(&self, set: &RenderSet) -> RenderStats {
        let l = self.hierarchy.levels;
        let mut nodes_per_level = vec![0; l];
        let mut splats_per_level = vec![0; l];
        for e in &set.entries {
            nodes_per_level[e.depth as usize] += 1;
            splats_per_level[e.depth as usize] += e.splats.len();
        }
        RenderStats {
            frame: self.frame,
            splat_count: set.total_splats,
            nodes_touched: set.entries.len(),
            visible_nodes: set.visible_nodes,
            target_nodes: set.target_nodes,
            bytes_resident: set.resident_bytes,
            bytes_loaded: set.loaded_bytes,
            evicted_nodes: set.evicted_nodes,
            nodes_per_level,
            splats_per_level,
            faults: set.faults.len(),
        }
    }
}

pub fn render_set(set: &RenderSet, camera: &PinholeCamera, settings: &RenderSettings) -> Result<FrameBuffer> {
    rasterize(&set.splats(), camera, settings)
}

/// Per-level node counts of a hierarchy, for reports.
pub fn level_histogram(h: &OctreeHierarchy) -> BTreeMap<usize, usize> {
    let mut m = BTreeMap::new();
    for n in &h.nodes {
        *m.entry(n.depth as usize).or_insert(0) += 1;
    }
    m
}

//! Pipeline manifest: one TOML file, with command-line flags layered on top.
//!
//! Precedence, highest first: command-line flag, manifest field, built-in
//! default. Relative paths resolve against the manifest's directory.

use std::path::{Path, PathBuf};

use lodsplat::engine::LoadBudget;
use lodsplat::lod::{DEFAULT_EPS_P, DEFAULT_TAU};
use lodsplat::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Manifest {
    /// Every stage writes below this directory.
    pub run_dir: PathBuf,
    /// Seeds mesh sampling and training (overrides `train.rng_seed`).
    pub seed: u64,
    pub inputs: Inputs,
    pub prepare: PrepareSection,
    pub lod: LodSection,
    pub train: TrainConfig,
    /// Restricts training to one block's views.
    pub block: Option<usize>,
    pub budget: LoadBudget,
    pub render: RenderSection,
    pub serve: ServeSection,
}

impl Default for Manifest {
    fn default() -> Self {
        Manifest {
            run_dir: PathBuf::from("run"),
            seed: 0,
            inputs: Inputs::default(),
            prepare: PrepareSection::default(),
            lod: LodSection::default(),
            train: TrainConfig::default(),
            block: None,
            budget: LoadBudget::default(),
            render: RenderSection::default(),
            serve: ServeSection::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Inputs {
    pub mesh: Option<PathBuf>,
    pub cloud: Option<PathBuf>,
    /// Directory of `<camera id>.png`.
    pub images: Option<PathBuf>,
    pub cameras: Option<PathBuf>,
    /// Optional directory of `<camera id>.png` 1-bit masks.
    pub masks: Option<PathBuf>,
    /// Usable-pixel mask applied to every fisheye frame.
    pub device_mask: Option<PathBuf>,
    /// When present, images are fisheye frames and camera records are rig poses.
    pub fisheye: Option<FisheyeSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FisheyeSection {
    pub focal: f64,
    pub center: [f64; 2],
    #[serde(default = "default_fov")]
    pub fov_deg: f64,
    /// Side length of each virtual pinhole view.
    #[serde(default = "default_view_size")]
    pub view_size: u32,
}

fn default_fov() -> f64 {
    180.0
}

fn default_view_size() -> u32 {
    512
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepareSection {
    pub clean_threshold: f64,
    pub grid: [usize; 2],
    pub expansion: f64,
    pub overlap_threshold: f64,
}

impl Default for PrepareSection {
    fn default() -> Self {
        PrepareSection {
            clean_threshold: lodsplat::dataprep::DEFAULT_CLEAN_THRESHOLD,
            grid: [1, 1],
            expansion: lodsplat::dataprep::DEFAULT_EXPANSION,
            overlap_threshold: lodsplat::dataprep::DEFAULT_OVERLAP_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LodSection {
    pub tau: f64,
    pub eps_p: usize,
}

impl Default for LodSection {
    fn default() -> Self {
        LodSection {
            tau: DEFAULT_TAU,
            eps_p: DEFAULT_EPS_P,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderSection {
    /// Camera file listing the frames to render; defaults to the prepared cameras.
    pub camera_path: Option<PathBuf>,
    pub background: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeSection {
    pub bind: String,
    pub port: u16,
}

impl Default for ServeSection {
    fn default() -> Self {
        ServeSection {
            bind: "127.0.0.1".into(),
            port: 8080,
        }
    }
}

/// Flag values that override manifest fields.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub run_dir: Option<PathBuf>,
    pub tau: Option<f64>,
    pub eps_p: Option<usize>,
    pub lambda_depth: Option<f64>,
    pub iterations: Option<usize>,
    pub seed: Option<u64>,
    pub budget_bytes: Option<u64>,
    pub grid: Option<[usize; 2]>,
    pub port: Option<u16>,
    pub block: Option<usize>,
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Manifest, CliError> {
        toml::from_str(text).map_err(|e| CliError::input(format!("manifest: {e}")))
    }

    /// Reads `path` and resolves every relative path against its directory.
    pub fn load(path: &Path) -> Result<Manifest, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::input(format!("manifest {}: {e}", path.display())))?;
        let mut m = Manifest::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        m.resolve(base);
        Ok(m)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.run_dir);
        let i = &mut self.inputs;
        for p in [&mut i.mesh, &mut i.cloud, &mut i.images, &mut i.cameras, &mut i.masks, &mut i.device_mask]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        if let Some(p) = &mut self.render.camera_path {
            fix(p);
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = &o.run_dir {
            self.run_dir = v.clone();
        }
        if let Some(v) = o.tau {
            self.lod.tau = v;
        }
        if let Some(v) = o.eps_p {
            self.lod.eps_p = v;
        }
        if let Some(v) = o.lambda_depth {
            self.train.lambda_depth = v;
        }
        if let Some(v) = o.iterations {
            self.train.total_iterations = Some(v);
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.budget_bytes {
            self.budget.max_bytes = v;
        }
        if let Some(v) = o.grid {
            self.prepare.grid = v;
        }
        if let Some(v) = o.port {
            self.serve.port = v;
        }
        if o.block.is_some() {
            self.block = o.block;
        }
        self.train.rng_seed = self.seed;
    }

    pub fn required<'a>(&self, field: &'a Option<PathBuf>, name: &str) -> Result<&'a Path, CliError> {
        field
            .as_deref()
            .ok_or_else(|| CliError::input(format!("manifest is missing inputs.{name}")))
    }
}

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lodsplat::dataprep::rasterize_mesh;
use lodsplat::geometry::{ColoredPoint, Mesh};
use lodsplat::ply;
use lodsplat::projection::{write_cameras, CameraRecord, PinholeCamera};
use lodsplat::raster::image_io::{write_mask_png, write_png, Mask, RgbImage};
use nalgebra::Vector3;

pub const CAMERAS: usize = 4;
pub const IMAGE_SIZE: u32 = 32;
/// Faces of the floating patch that the point cloud does not support.
pub const FLOATING_FACES: usize = 2;

/// A 2x2 colored ground plane seen from four oblique cameras, plus a
/// small floating patch absent from the point cloud.
pub fn scene_mesh() -> Mesh {
    let n = 8;
    let mut m = Mesh::default();
    for j in 0..=n {
        for i in 0..=n {
            let (x, y) = (2.0 * i as f64 / n as f64, 2.0 * j as f64 / n as f64);
            m.vertices.push(Vector3::new(x, y, 0.0));
            m.colors.push([0.2 + 0.3 * x, 0.2 + 0.3 * y, 0.5 + 0.2 * ((i + j) % 2) as f64]);
        }
    }
    let idx = |i: usize, j: usize| (j * (n + 1) + i) as u32;
    for j in 0..n {
        for i in 0..n {
            m.faces.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
            m.faces.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
    let base = m.vertices.len() as u32;
    for p in [[0.9, 0.9, 1.0], [1.1, 0.9, 1.0], [1.1, 1.1, 1.0], [0.9, 1.1, 1.0]] {
        m.vertices.push(Vector3::from(p));
        m.colors.push([1.0, 0.0, 0.0]);
    }
    m.faces.push([base, base + 1, base + 2]);
    m.faces.push([base, base + 2, base + 3]);
    m
}

pub fn scene_cloud() -> Vec<ColoredPoint> {
    let mut out = Vec::new();
    for j in 0..=40 {
        for i in 0..=40 {
            out.push(ColoredPoint::new(Vector3::new(i as f64 * 0.05, j as f64 * 0.05, 0.0), [0.5; 3]));
        }
    }
    out
}

pub fn scene_cameras() -> Vec<CameraRecord> {
    let eyes = [[1.0, -1.0, 1.5], [3.0, 1.0, 1.5], [1.0, 3.0, 1.5], [-1.0, 1.0, 1.5]];
    eyes.iter()
        .enumerate()
        .map(|(i, e)| CameraRecord {
            id: format!("cam{i}"),
            camera: PinholeCamera::look_at(Vector3::from(*e), Vector3::new(1.0, 1.0, 0.0), Vector3::z(), 70.0, IMAGE_SIZE, IMAGE_SIZE).unwrap(),
        })
        .collect()
}

/// Flat-shaded render of the mesh, face color = mean vertex color.
pub fn render_flat(mesh: &Mesh, camera: &PinholeCamera) -> RgbImage {
    let r = rasterize_mesh(mesh, camera, |_| true);
    let mut img = RgbImage::filled(camera.width, camera.height, [0.1, 0.1, 0.1]);
    for y in 0..camera.height {
        for x in 0..camera.width {
            if let Some(f) = r.face[(y * camera.width + x) as usize] {
                let c = mesh.faces[f].map(|v| mesh.colors[v as usize]);
                img.set(x, y, [0, 1, 2].map(|k| (c[0][k] + c[1][k] + c[2][k]) / 3.0));
            }
        }
    }
    img
}

pub struct Fixture {
    pub dir: tempfile::TempDir,
}

impl Fixture {
    /// Writes inputs and a manifest with small settings. `extra` is
    /// appended to the manifest.
    pub fn new(extra: &str) -> Fixture {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        let mesh = scene_mesh();
        let cams = scene_cameras();
        ply::write_mesh(&root.join("mesh.ply"), &mesh).unwrap();
        ply::write_points(&root.join("cloud.ply"), &scene_cloud()).unwrap();
        write_cameras(&root.join("cameras.txt"), &cams).unwrap();
        std::fs::create_dir_all(root.join("images")).unwrap();
        std::fs::create_dir_all(root.join("masks")).unwrap();
        for c in &cams {
            write_png(&root.join(format!("images/{}.png", c.id)), &render_flat(&mesh, &c.camera)).unwrap();
        }
        let mut mask = Mask::all_valid(IMAGE_SIZE, IMAGE_SIZE);
        for x in 0..IMAGE_SIZE {
            mask.data[x as usize] = false;
        }
        write_mask_png(&root.join("masks/cam1.png"), &mask).unwrap();
        let manifest = format!(
            "run_dir = \"run\"\nseed = 7\n\n[inputs]\nmesh = \"mesh.ply\"\ncloud = \"cloud.ply\"\nimages = \"images\"\n\
             cameras = \"cameras.txt\"\nmasks = \"masks\"\n\n[prepare]\ngrid = [2, 1]\n\n[lod]\ntau = 0.1\neps_p = 50\n\n\
             [train]\ntotal_iterations = 6\nlog_interval = 1\n{extra}"
        );
        std::fs::write(root.join("lodsplat.toml"), manifest).unwrap();
        Fixture { dir }
    }

    pub fn root(&self) -> &Path {
        self.dir.path()
    }

    pub fn run_dir(&self) -> PathBuf {
        self.root().join("run")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root().join("lodsplat.toml")
    }

    /// Runs the binary with `--manifest` set and the given arguments.
    pub fn cli(&self, args: &[&str]) -> Output {
        let out = Command::new(env!("CARGO_BIN_EXE_lodsplat"))
            .arg("--manifest")
            .arg(self.manifest())
            .args(args)
            .env("LODSPLAT_WORKERS", "2")
            .env("RUST_LOG", "warn")
            .output()
            .unwrap();
        out
    }

    pub fn ok(&self, args: &[&str]) -> String {
        let out = self.cli(args);
        assert!(
            out.status.success(),
            "lodsplat {args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    /// prepare, build-lod, train and pack.
    pub fn through_pack(&self, extra_args: &[&str]) {
        for cmd in ["prepare", "build-lod", "train", "pack"] {
            let mut args = vec![cmd];
            args.extend_from_slice(extra_args);
            self.ok(&args);
        }
    }
}

/// Relative paths of every file below `dir`, sorted.
pub fn tree(dir: &Path) -> Vec<String> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).unwrap().to_string_lossy().replace('\\', "/"));
            }
        }
    }
    out.sort();
    out
}

pub fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

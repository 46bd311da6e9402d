use nalgebra::Vector3;

use crate::geometry::Mesh;
use crate::projection::{PinholeCamera, NEAR_PLANE};
use crate::raster::image_io::DepthMap;

/// Z-buffered triangle raster: per pixel the nearest camera depth and the
/// face that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshRaster {
    pub width: u32,
    pub height: u32,
    pub depth: Vec<f64>,
    pub face: Vec<Option<usize>>,
}

impl MeshRaster {
    pub fn covered(&self) -> usize {
        self.face.iter().filter(|f| f.is_some()).count()
    }
}

/// Clips a camera-space polygon to `z >= near`.
fn clip_near(poly: &[Vector3<f64>], near: f64) -> Vec<Vector3<f64>> {
    let mut out = Vec::with_capacity(poly.len() + 2);
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        let (ina, inb) = (a.z >= near, b.z >= near);
        if ina {
            out.push(a);
        }
        if ina != inb {
            let t = (near - a.z) / (b.z - a.z);
            out.push(a + (b - a) * t);
        }
    }
    out
}

fn edge(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
}

/// Rasterizes the faces accepted by `keep`, sampling at pixel centers.
pub fn rasterize_mesh(mesh: &Mesh, camera: &PinholeCamera, keep: impl Fn(usize) -> bool) -> MeshRaster {
    let (w, h) = (camera.width, camera.height);
    let n = (w * h) as usize;
    let mut out = MeshRaster {
        width: w,
        height: h,
        depth: vec![f64::INFINITY; n],
        face: vec![None; n],
    };
    for fi in (0..mesh.faces.len()).filter(|&i| keep(i)) {
        let tri = mesh.triangle(fi).map(|p| camera.world_to_camera(&p));
        let poly = clip_near(&tri, NEAR_PLANE);
        if poly.len() < 3 {
            continue;
        }
        let screen: Vec<(f64, f64)> = poly.iter().map(|p| camera.project_camera_point(p)).collect();
        for k in 1..poly.len() - 1 {
            let (ia, ib, ic) = (0, k, k + 1);
            let (sa, sb, sc) = (screen[ia], screen[ib], screen[ic]);
            let area = edge(sa, sb, sc);
            if area == 0.0 || !area.is_finite() {
                continue;
            }
            let xs = [sa.0, sb.0, sc.0];
            let ys = [sa.1, sb.1, sc.1];
            let x0 = (xs.iter().cloned().fold(f64::INFINITY, f64::min) - 0.5).ceil().max(0.0) as i64;
            let x1 = (xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - 0.5).floor().min(w as f64 - 1.0) as i64;
            let y0 = (ys.iter().cloned().fold(f64::INFINITY, f64::min) - 0.5).ceil().max(0.0) as i64;
            let y1 = (ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - 0.5).floor().min(h as f64 - 1.0) as i64;
            let inv_z = [1.0 / poly[ia].z, 1.0 / poly[ib].z, 1.0 / poly[ic].z];
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let p = (x as f64 + 0.5, y as f64 + 0.5);
                    let b0 = edge(sb, sc, p) / area;
                    let b1 = edge(sc, sa, p) / area;
                    let b2 = edge(sa, sb, p) / area;
                    if b0 < 0.0 || b1 < 0.0 || b2 < 0.0 {
                        continue;
                    }
                    let z = 1.0 / (b0 * inv_z[0] + b1 * inv_z[1] + b2 * inv_z[2]);
                    let i = y as usize * w as usize + x as usize;
                    if z < out.depth[i] {
                        out.depth[i] = z;
                        out.face[i] = Some(fi);
                    }
                }
            }
        }
    }
    out
}

/// Camera-space depth of the nearest surface per pixel; 0 where the mesh
/// is not visible.
pub fn render_mesh_depth(mesh: &Mesh, camera: &PinholeCamera) -> DepthMap {
    let r = rasterize_mesh(mesh, camera, |_| true);
    DepthMap {
        width: r.width,
        height: r.height,
        data: r.depth.iter().map(|&d| if d.is_finite() { d } else { 0.0 }).collect(),
    }
}

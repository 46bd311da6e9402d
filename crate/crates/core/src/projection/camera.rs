use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PinholeCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    /// World-to-camera rotation. Camera frame: +x right, +y down, +z forward.
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl PinholeCamera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self> {
        let cam = PinholeCamera {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            rotation,
            translation,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `eye` looking at `target`. `up` is the world direction that
    /// should appear upward in the image.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        fov_x_deg: f64,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        let forward = (target - eye).try_normalize(1e-12).ok_or_else(|| Error::invalid("eye == target"))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::invalid("up is parallel to the view direction"))?;
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let fx = width as f64 / 2.0 / (fov_x_deg.to_radians() / 2.0).tan();
        Self::new(
            fx,
            fx,
            width as f64 / 2.0,
            height as f64 / 2.0,
            width,
            height,
            rotation,
            -(rotation * eye),
        )
    }

    pub fn validate(&self) -> Result<()> {
        let scalars = [self.fx, self.fy, self.cx, self.cy];
        if !scalars.iter().all(|v| v.is_finite())
            || !self.rotation.iter().all(|v| v.is_finite())
            || !self.translation.iter().all(|v| v.is_finite())
        {
            return Err(Error::invalid("camera has non-finite entries"));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::invalid(format!("focal lengths must be positive ({}, {})", self.fx, self.fy)));
        }
        if !(self.cx > 0.0 && self.cx < self.width as f64 && self.cy > 0.0 && self.cy < self.height as f64) {
            return Err(Error::invalid(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        let ortho = (self.rotation * self.rotation.transpose() - Matrix3::identity()).amax();
        if ortho > 1e-9 || self.rotation.determinant() <= 0.0 {
            return Err(Error::invalid(format!("rotation is not a proper rotation (error {ortho:e})")));
        }
        Ok(())
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// Normalized image-plane coordinates of a continuous pixel position.
    pub fn pixel_to_normalized(&self, u: f64, v: f64) -> (f64, f64) {
        ((u - self.cx) / self.fx, (v - self.cy) / self.fy)
    }

    /// Pixel position of a camera-space point (no visibility test).
    pub fn project_camera_point(&self, p: &Vector3<f64>) -> (f64, f64) {
        (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }

    /// Same camera with intrinsics scaled to a different resolution.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let width = ((self.width as f64 * factor).round() as u32).max(1);
        let height = ((self.height as f64 * factor).round() as u32).max(1);
        Self::new(
            self.fx * factor,
            self.fy * factor,
            self.cx * factor,
            self.cy * factor,
            width,
            height,
            self.rotation,
            self.translation,
        )
    }
}

/// One record of a camera file.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraRecord {
    pub id: String,
    pub camera: PinholeCamera,
}

/// Parses the whitespace-separated camera format:
///
/// ```text
/// # id fx fy cx cy width height r00 r01 r02 r10 r11 r12 r20 r21 r22 t0 t1 t2
/// cam0 500 500 320 240 640 480 1 0 0 0 1 0 0 0 1 0 0 0
/// ```
///
/// Blank lines and anything after `#` are ignored.
pub fn parse_cameras(text: &str) -> Result<Vec<CameraRecord>> {
    let mut out = Vec::new();
    let mut offset = 0u64;
    for line in text.split_inclusive('\n') {
        let content = line.split('#').next().unwrap_or("");
        let tokens: Vec<&str> = content.split_whitespace().collect();
        if !tokens.is_empty() {
            if tokens.len() != 19 {
                return Err(Error::format(offset, format!("camera record needs 19 fields, found {}", tokens.len())));
            }
            let num = |i: usize| -> Result<f64> {
                tokens[i]
                    .parse::<f64>()
                    .map_err(|_| Error::format(offset, format!("bad number {:?}", tokens[i])))
            };
            let dim = |i: usize| -> Result<u32> {
                tokens[i]
                    .parse::<u32>()
                    .map_err(|_| Error::format(offset, format!("bad image dimension {:?}", tokens[i])))
            };
            let mut r = [0.0; 9];
            for (k, v) in r.iter_mut().enumerate() {
                *v = num(7 + k)?;
            }
            let camera = PinholeCamera::new(
                num(1)?,
                num(2)?,
                num(3)?,
                num(4)?,
                dim(5)?,
                dim(6)?,
                Matrix3::from_row_slice(&r),
                Vector3::new(num(16)?, num(17)?, num(18)?),
            )?;
            out.push(CameraRecord {
                id: tokens[0].to_string(),
                camera,
            });
        }
        offset += line.len() as u64;
    }
    Ok(out)
}

pub fn format_cameras(records: &[CameraRecord]) -> String {
    let mut s = String::from("# id fx fy cx cy width height r00 r01 r02 r10 r11 r12 r20 r21 r22 t0 t1 t2\n");
    for rec in records {
        let c = &rec.camera;
        // `{:?}` prints the shortest representation that round-trips exactly.
        write!(s, "{} {:?} {:?} {:?} {:?} {} {}", rec.id, c.fx, c.fy, c.cx, c.cy, c.width, c.height).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                write!(s, " {:?}", c.rotation[(i, j)]).unwrap();
            }
        }
        for i in 0..3 {
            write!(s, " {:?}", c.translation[i]).unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn read_cameras(path: &Path) -> Result<Vec<CameraRecord>> {
    parse_cameras(&std::fs::read_to_string(path)?)
}

pub fn write_cameras(path: &Path, records: &[CameraRecord]) -> Result<()> {
    std::fs::write(path, format_cameras(records))?;
    Ok(())
}

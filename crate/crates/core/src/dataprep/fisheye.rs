use std::f64::consts::FRAC_PI_4;

use nalgebra::{Matrix3, Rotation3, Vector3};

use crate::error::{Error, Result};
use crate::projection::PinholeCamera;
use crate::raster::image_io::{Mask, RgbImage};

/// Equidistant fisheye lens: a ray at angle `theta` from the optical axis
/// lands at radius `focal * theta` from `center`. Uses the pinhole axis
/// convention (+x right, +y down, +z forward).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FisheyeModel {
    pub focal: f64,
    pub center: [f64; 2],
    pub fov_deg: f64,
}

impl FisheyeModel {
    pub fn new(focal: f64, center: [f64; 2], fov_deg: f64) -> Result<Self> {
        let m = FisheyeModel { focal, center, fov_deg };
        m.validate()?;
        Ok(m)
    }

    /// Full 180 degree lens whose image circle touches the borders of a
    /// `size`×`size` image.
    pub fn centered(size: u32) -> Self {
        let s = size as f64;
        FisheyeModel {
            focal: s / std::f64::consts::PI,
            center: [s / 2.0, s / 2.0],
            fov_deg: 180.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal > 0.0) || !self.focal.is_finite() {
            return Err(Error::invalid(format!("fisheye focal must be positive, got {}", self.focal)));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg <= 360.0) {
            return Err(Error::invalid(format!("fisheye fov must be in (0, 360], got {}", self.fov_deg)));
        }
        Ok(())
    }

    fn half_fov(&self) -> f64 {
        self.fov_deg.to_radians() / 2.0
    }

    /// Image position of a camera-frame direction, or `None` outside the lens.
    pub fn project(&self, dir: &Vector3<f64>) -> Option<(f64, f64)> {
        let rxy = dir.x.hypot(dir.y);
        let theta = rxy.atan2(dir.z);
        if theta > self.half_fov() {
            return None;
        }
        if rxy == 0.0 {
            return Some((self.center[0], self.center[1]));
        }
        let r = self.focal * theta;
        Some((self.center[0] + r * dir.x / rxy, self.center[1] + r * dir.y / rxy))
    }

    /// Unit direction through image position `(u, v)`.
    pub fn unproject(&self, u: f64, v: f64) -> Option<Vector3<f64>> {
        let (dx, dy) = (u - self.center[0], v - self.center[1]);
        let r = dx.hypot(dy);
        let theta = r / self.focal;
        if theta > self.half_fov() {
            return None;
        }
        if r == 0.0 {
            return Some(Vector3::z());
        }
        let s = theta.sin();
        Some(Vector3::new(s * dx / r, s * dy / r, theta.cos()))
    }
}

/// The five virtual views: straight ahead plus four tilted by 45 degrees.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VirtualView {
    Front,
    Up,
    Down,
    Left,
    Right,
}

impl VirtualView {
    pub const ALL: [VirtualView; 5] = [VirtualView::Front, VirtualView::Up, VirtualView::Down, VirtualView::Left, VirtualView::Right];

    pub fn name(self) -> &'static str {
        match self {
            VirtualView::Front => "front",
            VirtualView::Up => "up",
            VirtualView::Down => "down",
            VirtualView::Left => "left",
            VirtualView::Right => "right",
        }
    }

    /// Maps virtual-camera directions into the fisheye frame.
    pub fn rotation(self) -> Matrix3<f64> {
        let r = match self {
            VirtualView::Front => Rotation3::identity(),
            VirtualView::Left => Rotation3::from_axis_angle(&Vector3::y_axis(), -FRAC_PI_4),
            VirtualView::Right => Rotation3::from_axis_angle(&Vector3::y_axis(), FRAC_PI_4),
            VirtualView::Up => Rotation3::from_axis_angle(&Vector3::x_axis(), FRAC_PI_4),
            VirtualView::Down => Rotation3::from_axis_angle(&Vector3::x_axis(), -FRAC_PI_4),
        };
        r.into_inner()
    }
}

#[derive(Debug, Clone)]
pub struct SplitView {
    pub view: VirtualView,
    pub image: RgbImage,
    /// True where the pixel came from inside the lens (and input mask).
    pub mask: Mask,
    pub camera: PinholeCamera,
}

/// World-to-camera pose of the fisheye rig.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigPose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigPose {
    fn default() -> Self {
        RigPose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }
}

/// Bilinear sample at continuous image position `(u, v)` (pixel centers at
/// half-integers). `None` outside the image or touching an invalid pixel.
fn sample_bilinear(image: &RgbImage, mask: Option<&Mask>, u: f64, v: f64) -> Option<[f64; 3]> {
    let (w, h) = (image.width as f64, image.height as f64);
    if !(0.0..=w).contains(&u) || !(0.0..=h).contains(&v) {
        return None;
    }
    let sx = (u - 0.5).clamp(0.0, w - 1.0);
    let sy = (v - 0.5).clamp(0.0, h - 1.0);
    let (x0, y0) = (sx.floor() as u32, sy.floor() as u32);
    let x1 = (x0 + 1).min(image.width - 1);
    let y1 = (y0 + 1).min(image.height - 1);
    let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
    let taps = [(x0, y0, (1.0 - fx) * (1.0 - fy)), (x1, y0, fx * (1.0 - fy)), (x0, y1, (1.0 - fx) * fy), (x1, y1, fx * fy)];
    let mut out = [0.0; 3];
    for (x, y, wgt) in taps {
        if wgt == 0.0 {
            continue;
        }
        if let Some(m) = mask {
            if !m.data[(y * m.width + x) as usize] {
                return None;
            }
        }
        let px = image.get(x, y);
        for c in 0..3 {
            out[c] += wgt * px[c];
        }
    }
    Some(out)
}

/// Resamples a fisheye image into five `size`×`size` pinhole views with a
/// 90 degree field of view. `device_mask` marks usable fisheye pixels.
pub fn split_fisheye(image: &RgbImage, device_mask: Option<&Mask>, model: &FisheyeModel, size: u32, rig: &RigPose) -> Result<Vec<SplitView>> {
    model.validate()?;
    if image.width == 0 || image.height == 0 || size == 0 {
        return Err(Error::EmptyInput("fisheye image".into()));
    }
    if let Some(m) = device_mask {
        if m.width != image.width || m.height != image.height {
            return Err(Error::invalid("device mask size differs from the fisheye image"));
        }
    }
    let f = size as f64 / 2.0;
    VirtualView::ALL
        .iter()
        .map(|&view| {
            let rv = view.rotation();
            let mut out = RgbImage::new(size, size);
            let mut mask = Mask::all_valid(size, size);
            for y in 0..size {
                for x in 0..size {
                    let d = Vector3::new((x as f64 + 0.5 - f) / f, (y as f64 + 0.5 - f) / f, 1.0);
                    let sample = model.project(&(rv * d)).and_then(|(u, v)| sample_bilinear(image, device_mask, u, v));
                    match sample {
                        Some(rgb) => out.set(x, y, rgb),
                        None => mask.data[(y * size + x) as usize] = false,
                    }
                }
            }
            let rt = rv.transpose();
            let camera = PinholeCamera::new(f, f, f, f, size, size, rt * rig.rotation, rt * rig.translation)?;
            Ok(SplitView { view, image: out, mask, camera })
        })
        .collect()
}

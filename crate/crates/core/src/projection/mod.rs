//! Camera model and the EWA ray-space machinery.
//!
//! Ray space maps a camera-space point `(X, Y, Z)` to
//! `(X/Z, Y/Z, ‖(X, Y, Z)‖)`: the first two coordinates are normalized
//! image-plane coordinates, the third is the distance from the camera
//! center along the pixel ray. Camera depth is recovered as `t = x2 / l`
//! with `l = √(x0² + x1² + 1)`.

pub mod camera;

use nalgebra::{Matrix2, Matrix3, Vector3};

pub use camera::{format_cameras, parse_cameras, read_cameras, write_cameras, CameraRecord, PinholeCamera};

use crate::error::{Error, Result};

/// Gaussians whose camera-space Z is below this are culled.
pub const NEAR_PLANE: f64 = 0.01;

/// Added to the diagonal of the pixel-space 2D covariance.
pub const LOW_PASS_FLOOR: f64 = 0.3;

fn check_in_front(p: &Vector3<f64>) -> Result<()> {
    if !(p.z > NEAR_PLANE) {
        return Err(Error::BehindCamera { z: p.z });
    }
    Ok(())
}

pub fn camera_to_ray_space(point_cam: &Vector3<f64>) -> Result<Vector3<f64>> {
    check_in_front(point_cam)?;
    Ok(Vector3::new(point_cam.x / point_cam.z, point_cam.y / point_cam.z, point_cam.norm()))
}

/// `l = √(x0² + x1² + 1)` for a normalized image-plane position.
pub fn ray_length_factor(x0: f64, x1: f64) -> f64 {
    (x0 * x0 + x1 * x1 + 1.0).sqrt()
}

/// Jacobian of [`camera_to_ray_space`] at `point_cam`.
pub fn ray_space_jacobian(point_cam: &Vector3<f64>) -> Result<Matrix3<f64>> {
    check_in_front(point_cam)?;
    let (x, y, z) = (point_cam.x, point_cam.y, point_cam.z);
    let r = point_cam.norm();
    Ok(Matrix3::new(
        1.0 / z,
        0.0,
        -x / (z * z),
        0.0,
        1.0 / z,
        -y / (z * z),
        x / r,
        y / r,
        z / r,
    ))
}

/// `J · W · Σ · Wᵀ · Jᵀ`, symmetrized.
pub fn project_covariance(sigma_world: &Matrix3<f64>, w: &Matrix3<f64>, j: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    let finite = |m: &Matrix3<f64>| m.iter().all(|v| v.is_finite());
    if !finite(sigma_world) || !finite(w) || !finite(j) {
        return Err(Error::invalid("non-finite covariance projection input"));
    }
    let jw = j * w;
    let s = jw * sigma_world * jw.transpose();
    Ok((s + s.transpose()) * 0.5)
}

/// Expected camera depth of a ray-space Gaussian along the ray through the
/// normalized image position `pixel`.
///
/// This is the conditional mean of `x2` given `(x0, x1)`, divided by `l`.
pub fn expected_depth(p: &Vector3<f64>, sigma_ray_inv: &Matrix3<f64>, pixel: (f64, f64)) -> Result<f64> {
    let (a, b) = depth_ratios(sigma_ray_inv)?;
    Ok(expected_depth_from_ratios(p, a, b, pixel))
}

/// `((Σ⁻¹)₀₂ / (Σ⁻¹)₂₂, (Σ⁻¹)₁₂ / (Σ⁻¹)₂₂)`, the two slopes that drive
/// [`expected_depth`].
pub fn depth_ratios(sigma_ray_inv: &Matrix3<f64>) -> Result<(f64, f64)> {
    let m22 = sigma_ray_inv[(2, 2)];
    if !(m22 > 0.0) || !m22.is_finite() {
        return Err(Error::DegenerateCovariance(format!("(Σ⁻¹)₂₂ = {m22}")));
    }
    Ok((sigma_ray_inv[(0, 2)] / m22, sigma_ray_inv[(1, 2)] / m22))
}

pub fn expected_depth_from_ratios(p: &Vector3<f64>, a: f64, b: f64, pixel: (f64, f64)) -> f64 {
    let (x0, x1) = pixel;
    (p.z - a * (x0 - p.x) - b * (x1 - p.y)) / ray_length_factor(x0, x1)
}

/// A Gaussian expressed in ray space for one camera.
#[derive(Debug, Clone, PartialEq)]
pub struct RaySpaceGaussian {
    pub p: Vector3<f64>,
    pub sigma_ray: Matrix3<f64>,
    /// Upper-left 2×2 block of `sigma_ray` (normalized image units).
    pub sigma2d: Matrix2<f64>,
}

impl RaySpaceGaussian {
    pub fn new(mean_world: &Vector3<f64>, sigma_world: &Matrix3<f64>, camera: &PinholeCamera) -> Result<Self> {
        let m = camera.world_to_camera(mean_world);
        let p = camera_to_ray_space(&m)?;
        let j = ray_space_jacobian(&m)?;
        let sigma_ray = project_covariance(sigma_world, &camera.rotation, &j)?;
        let sigma2d = sigma_ray.fixed_view::<2, 2>(0, 0).into_owned();
        Ok(RaySpaceGaussian { p, sigma_ray, sigma2d })
    }

    /// Screen footprint in pixel² with the low-pass floor applied.
    pub fn pixel_covariance(&self, camera: &PinholeCamera) -> Matrix2<f64> {
        let k = Matrix2::new(camera.fx, 0.0, 0.0, camera.fy);
        k * self.sigma2d * k + Matrix2::identity() * LOW_PASS_FLOOR
    }
}

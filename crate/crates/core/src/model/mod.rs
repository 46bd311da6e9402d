//! The Gaussian primitive and its raw/activated parameterization.
//!
//! Every optimizable quantity is stored in an unconstrained ("raw") form so a
//! gradient step can never leave the valid domain:
//!
//! | stored          | activated                          |
//! |-----------------|------------------------------------|
//! | `rotation_raw`  | `rotation_raw / ‖rotation_raw‖`    |
//! | `log_scale`     | `exp(log_scale)`                   |
//! | `opacity_raw`   | `sigmoid(opacity_raw)`             |
//!
//! Quaternions are ordered `[w, x, y, z]`.

pub mod sh;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
pub use sh::{eval_sh, ShCoeffs, SH_BASIS_LEN, SH_COEFFS_LEN};

/// Number of scalar parameters per splat (3 + 4 + 3 + 1 + 27).
pub const PARAMS_PER_SPLAT: usize = 38;

pub const POSITION_OFFSET: usize = 0;
pub const ROTATION_OFFSET: usize = 3;
pub const SCALE_OFFSET: usize = 7;
pub const OPACITY_OFFSET: usize = 10;
pub const SH_OFFSET: usize = 11;

pub type Quat = [f64; 4];

pub const IDENTITY_QUAT: Quat = [1.0, 0.0, 0.0, 0.0];

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSplat {
    pub position: Vector3<f64>,
    pub rotation_raw: Quat,
    pub log_scale: Vector3<f64>,
    pub opacity_raw: f64,
    pub sh_coeffs: ShCoeffs,
    /// Level of detail this splat belongs to, `0` = coarsest. Never changed
    /// by optimization; densified children copy it from their parent.
    pub lod_level: u8,
}

impl GaussianSplat {
    /// Isotropic splat with a flat color, the usual initialization from a
    /// colored point.
    pub fn from_point(position: Vector3<f64>, rgb: [f64; 3], std_dev: f64, opacity: f64, lod_level: u8) -> Self {
        let mut sh_coeffs = [0.0; SH_COEFFS_LEN];
        for (c, v) in rgb.iter().enumerate() {
            sh_coeffs[c * SH_BASIS_LEN] = sh::rgb_to_dc(*v);
        }
        GaussianSplat {
            position,
            rotation_raw: IDENTITY_QUAT,
            log_scale: Vector3::repeat(std_dev.ln()),
            opacity_raw: logit(opacity),
            sh_coeffs,
            lod_level,
        }
    }

    pub fn scale(&self) -> Vector3<f64> {
        self.log_scale.map(f64::exp)
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_raw)
    }

    /// Unit quaternion; fails for an all-zero or non-finite raw rotation.
    pub fn rotation(&self) -> Result<Quat> {
        normalize_quat(&self.rotation_raw)
    }

    pub fn covariance(&self) -> Result<Matrix3<f64>> {
        build_covariance(&self.rotation()?, &self.scale())
    }

    pub fn is_finite(&self) -> bool {
        self.to_params().iter().all(|v| v.is_finite())
    }

    /// Flattens the optimizable parameters in record order: position,
    /// rotation_raw, log_scale, opacity_raw, sh_coeffs.
    pub fn to_params(&self) -> [f64; PARAMS_PER_SPLAT] {
        let mut p = [0.0; PARAMS_PER_SPLAT];
        p[POSITION_OFFSET..POSITION_OFFSET + 3].copy_from_slice(self.position.as_slice());
        p[ROTATION_OFFSET..ROTATION_OFFSET + 4].copy_from_slice(&self.rotation_raw);
        p[SCALE_OFFSET..SCALE_OFFSET + 3].copy_from_slice(self.log_scale.as_slice());
        p[OPACITY_OFFSET] = self.opacity_raw;
        p[SH_OFFSET..].copy_from_slice(&self.sh_coeffs);
        p
    }

    pub fn from_params(params: &[f64; PARAMS_PER_SPLAT], lod_level: u8) -> Self {
        let mut splat = GaussianSplat {
            position: Vector3::zeros(),
            rotation_raw: IDENTITY_QUAT,
            log_scale: Vector3::zeros(),
            opacity_raw: 0.0,
            sh_coeffs: [0.0; SH_COEFFS_LEN],
            lod_level,
        };
        splat.set_params(params);
        splat
    }

    pub fn set_params(&mut self, p: &[f64; PARAMS_PER_SPLAT]) {
        self.position = Vector3::from_column_slice(&p[POSITION_OFFSET..POSITION_OFFSET + 3]);
        self.rotation_raw.copy_from_slice(&p[ROTATION_OFFSET..ROTATION_OFFSET + 4]);
        self.log_scale = Vector3::from_column_slice(&p[SCALE_OFFSET..SCALE_OFFSET + 3]);
        self.opacity_raw = p[OPACITY_OFFSET];
        self.sh_coeffs.copy_from_slice(&p[SH_OFFSET..]);
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn normalize_quat(q: &Quat) -> Result<Quat> {
    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !norm.is_finite() || norm == 0.0 {
        return Err(Error::invalid(format!("rotation quaternion {q:?} cannot be normalized")));
    }
    Ok([q[0] / norm, q[1] / norm, q[2] / norm, q[3] / norm])
}

/// Rotation matrix of a unit quaternion `[w, x, y, z]`.
///
/// Every entry is quadratic in the components, so `q` and `-q` yield the
/// bit-identical matrix.
pub fn quat_to_matrix(q: &Quat) -> Matrix3<f64> {
    let [w, x, y, z] = *q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Back-propagates `dL/dR` through [`quat_to_matrix`] to `dL/dq`.
pub fn quat_to_matrix_backward(q: &Quat, grad_r: &Matrix3<f64>) -> Quat {
    let [w, x, y, z] = *q;
    let dw = Matrix3::new(0.0, -2.0 * z, 2.0 * y, 2.0 * z, 0.0, -2.0 * x, -2.0 * y, 2.0 * x, 0.0);
    let dx = Matrix3::new(0.0, 2.0 * y, 2.0 * z, 2.0 * y, -4.0 * x, -2.0 * w, 2.0 * z, 2.0 * w, -4.0 * x);
    let dy = Matrix3::new(-4.0 * y, 2.0 * x, 2.0 * w, 2.0 * x, 0.0, 2.0 * z, -2.0 * w, 2.0 * z, -4.0 * y);
    let dz = Matrix3::new(-4.0 * z, -2.0 * w, 2.0 * x, 2.0 * w, -4.0 * z, 2.0 * y, 2.0 * x, 2.0 * y, 0.0);
    [
        grad_r.component_mul(&dw).sum(),
        grad_r.component_mul(&dx).sum(),
        grad_r.component_mul(&dy).sum(),
        grad_r.component_mul(&dz).sum(),
    ]
}

/// Back-propagates through `q = raw / ‖raw‖`.
pub fn normalize_quat_backward(raw: &Quat, grad_q: &Quat) -> Quat {
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    let q: Vec<f64> = raw.iter().map(|v| v / norm).collect();
    let dot: f64 = q.iter().zip(grad_q).map(|(a, b)| a * b).sum();
    let mut out = [0.0; 4];
    for i in 0..4 {
        out[i] = (grad_q[i] - q[i] * dot) / norm;
    }
    out
}

/// `R · diag(scale)² · Rᵀ` for a unit quaternion.
pub fn build_covariance(rotation: &Quat, scale: &Vector3<f64>) -> Result<Matrix3<f64>> {
    if !rotation.iter().chain(scale.iter()).all(|v| v.is_finite()) {
        return Err(Error::invalid("non-finite rotation or scale"));
    }
    if scale.iter().any(|&s| s <= 0.0) {
        return Err(Error::invalid(format!("scale must be positive, got {scale:?}")));
    }
    let rs = quat_to_matrix(rotation) * Matrix3::from_diagonal(scale);
    Ok(rs * rs.transpose())
}

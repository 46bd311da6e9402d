//! Real spherical harmonics up to degree 2.
//!
//! Coefficients are stored channel-major: `coeffs[channel * 9 + k]`, where
//! `k` runs over `(l, m)` in the order `(0,0), (1,-1), (1,0), (1,1), (2,-2),
//! (2,-1), (2,0), (2,1), (2,2)`.

use nalgebra::Vector3;

pub const SH_DEGREE: usize = 2;
pub const SH_BASIS_LEN: usize = (SH_DEGREE + 1) * (SH_DEGREE + 1);
pub const SH_COEFFS_LEN: usize = 3 * SH_BASIS_LEN;

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;
pub const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];

/// Offset added to the SH expansion so zero coefficients render mid-grey.
pub const SH_COLOR_OFFSET: f64 = 0.5;

pub type ShCoeffs = [f64; SH_COEFFS_LEN];

pub fn sh_basis(dir: &Vector3<f64>) -> [f64; SH_BASIS_LEN] {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    [
        SH_C0,
        -SH_C1 * y,
        SH_C1 * z,
        -SH_C1 * x,
        SH_C2[0] * x * y,
        SH_C2[1] * y * z,
        SH_C2[2] * (2.0 * z * z - x * x - y * y),
        SH_C2[3] * x * z,
        SH_C2[4] * (x * x - y * y),
    ]
}

/// Partial derivatives of each basis function with respect to the
/// (unnormalized) direction components.
pub fn sh_basis_grad(dir: &Vector3<f64>) -> [Vector3<f64>; SH_BASIS_LEN] {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    [
        Vector3::zeros(),
        Vector3::new(0.0, -SH_C1, 0.0),
        Vector3::new(0.0, 0.0, SH_C1),
        Vector3::new(-SH_C1, 0.0, 0.0),
        SH_C2[0] * Vector3::new(y, x, 0.0),
        SH_C2[1] * Vector3::new(0.0, z, y),
        SH_C2[2] * Vector3::new(-2.0 * x, -2.0 * y, 4.0 * z),
        SH_C2[3] * Vector3::new(z, 0.0, x),
        SH_C2[4] * Vector3::new(2.0 * x, -2.0 * y, 0.0),
    ]
}

/// Evaluates the view-dependent color for a unit viewing direction.
///
/// The result is not clamped; the rasterizer clamps negative channels to zero.
pub fn eval_sh(coeffs: &ShCoeffs, view_dir: &Vector3<f64>) -> Vector3<f64> {
    let basis = sh_basis(view_dir);
    let mut rgb = Vector3::repeat(SH_COLOR_OFFSET);
    for channel in 0..3 {
        let c = &coeffs[channel * SH_BASIS_LEN..(channel + 1) * SH_BASIS_LEN];
        rgb[channel] += c.iter().zip(basis.iter()).map(|(a, b)| a * b).sum::<f64>();
    }
    rgb
}

/// DC coefficient that reproduces `rgb` (in `[0, 1]`) when all higher bands are zero.
pub fn rgb_to_dc(rgb: f64) -> f64 {
    (rgb - SH_COLOR_OFFSET) / SH_C0
}

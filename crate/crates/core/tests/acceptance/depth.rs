use lodsplat::projection::expected_depth;
use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Outcome;

fn random_spd(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
    let a = Matrix3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
    let d = Matrix3::from_diagonal(&Vector3::new(rng.gen_range(0.05..1.0), rng.gen_range(0.05..1.0), rng.gen_range(0.05..1.0)));
    let q = a.qr().q();
    q * d * q.transpose() * rng.gen_range(0.001..0.1)
}

/// Adaptive Simpson on `[a, b]`.
fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// Mean camera depth along the pixel ray, by integrating the full 3D
/// Gaussian density over the ray coordinate.
fn quadrature_depth(p: &Vector3<f64>, sigma: &Matrix3<f64>, pixel: (f64, f64)) -> f64 {
    let inv = sigma.try_inverse().unwrap();
    let l = (pixel.0 * pixel.0 + pixel.1 * pixel.1 + 1.0).sqrt();
    let density = |x2: f64| {
        let d = Vector3::new(pixel.0, pixel.1, x2) - p;
        (-0.5 * (d.transpose() * inv * d)[(0, 0)]).exp()
    };
    let s = sigma[(2, 2)].sqrt();
    let (a, b) = (p.z - 8.0 * s, p.z + 8.0 * s);
    let mass = simpson(&density, a, b, 1e-13 * s);
    let first = simpson(&|x2| x2 / l * density(x2), a, b, 1e-13 * s * p.z.abs().max(1.0));
    first / mass
}

pub fn quadrature_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let sigma = random_spd(&mut rng);
        let p = Vector3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(1.0..20.0));
        // Pixels within 1.5 marginal standard deviations of the center.
        let pixel = (
            p.x + rng.gen_range(-1.5..1.5) * sigma[(0, 0)].sqrt(),
            p.y + rng.gen_range(-1.5..1.5) * sigma[(1, 1)].sqrt(),
        );
        let closed = expected_depth(&p, &sigma.try_inverse().unwrap(), pixel).unwrap();
        let numeric = quadrature_depth(&p, &sigma, pixel);
        worst = worst.max((closed - numeric).abs() / numeric.abs());
    }
    Outcome::check(worst <= 1e-6, format!("max relative error {worst:.2e} over 1000 pairs (limit 1e-6)"))
}

pub fn degeneracies() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let p = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.5..50.0));
        let pixel = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let reference = |px: (f64, f64)| p.z / (px.0 * px.0 + px.1 * px.1 + 1.0).sqrt();

        let s2: f64 = rng.gen_range(1e-4..1.0);
        let iso = Matrix3::identity() / s2;
        worst = worst.max((expected_depth(&p, &iso, pixel).unwrap() - reference(pixel)).abs());

        let diag = Matrix3::from_diagonal(&Vector3::new(rng.gen_range(0.1..10.0), rng.gen_range(0.1..10.0), rng.gen_range(0.1..10.0)));
        worst = worst.max((expected_depth(&p, &diag, pixel).unwrap() - reference(pixel)).abs());

        let inv = random_spd(&mut rng).try_inverse().unwrap();
        let center = (p.x, p.y);
        worst = worst.max((expected_depth(&p, &inv, center).unwrap() - reference(center)).abs());
    }
    Outcome::check(worst <= 1e-12, format!("max deviation from p2/l {worst:.2e} (limit 1e-12)"))
}

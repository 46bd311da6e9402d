//! Photometric and depth losses with gradients with respect to the rendered
//! color and depth buffers.

use crate::error::{Error, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// Maps a metric depth into `[0, 1)`: linear below `beta`, hyperbolic above.
pub fn depth_normalize(d: f64, beta: f64) -> f64 {
    if d < beta {
        d / (2.0 * beta)
    } else {
        1.0 - beta / (2.0 * d)
    }
}

pub fn depth_normalize_grad(d: f64, beta: f64) -> f64 {
    if d < beta {
        1.0 / (2.0 * beta)
    } else {
        beta / (2.0 * d * d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthLoss {
    pub value: f64,
    pub valid_pixels: usize,
    /// Set when no pixel carried a measurement; `value` is then 0.
    pub no_valid_pixels: bool,
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn depth_valid(gt: f64, mask: Option<&[bool]>, i: usize) -> bool {
    gt > 0.0 && mask.map_or(true, |m| m[i])
}

/// Mean L1 distance of normalized depths over all views, skipping pixels
/// whose reference depth is 0.
pub fn depth_loss(rendered: &[&[f64]], reference: &[&[f64]], beta: f64) -> Result<DepthLoss> {
    if rendered.len() != reference.len() {
        return Err(Error::invalid("depth_loss: view count mismatch"));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (r, g) in rendered.iter().zip(reference) {
        if r.len() != g.len() {
            return Err(Error::invalid("depth_loss: buffer size mismatch"));
        }
        for (&d, &t) in r.iter().zip(g.iter()) {
            if t > 0.0 {
                sum += (depth_normalize(d, beta) - depth_normalize(t, beta)).abs();
                n += 1;
            }
        }
    }
    if n == 0 {
        log::warn!("depth loss has no valid pixels");
        return Ok(DepthLoss {
            value: 0.0,
            valid_pixels: 0,
            no_valid_pixels: true,
        });
    }
    Ok(DepthLoss {
        value: sum / n as f64,
        valid_pixels: n,
        no_valid_pixels: false,
    })
}

/// Normalized 1D Gaussian taps; the 2D window is their outer product.
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut taps = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, t) in taps.iter_mut().enumerate() {
        let x = i as f64 - half;
        *t = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    taps
}

/// Zero-padded "same" filtering of a single-channel image with the
/// separable Gaussian window. The window is symmetric, so this operator is
/// its own adjoint.
fn blur(src: &[f64], w: usize, h: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let half = SSIM_WINDOW as isize / 2;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let xx = x as isize + k as isize - half;
                if xx >= 0 && (xx as usize) < w {
                    acc += t * src[y * w + xx as usize];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let yy = y as isize + k as isize - half;
                if yy >= 0 && (yy as usize) < h {
                    acc += t * tmp[yy as usize * w + x];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn channel(img: &[f64], c: usize) -> Vec<f64> {
    img.iter().skip(c).step_by(3).copied().collect()
}

/// Mean SSIM over valid pixels and the three channels, and its gradient with
/// respect to `pred` (interleaved RGB, same layout as the input).
pub fn ssim_with_grad(pred: &[f64], reference: &[f64], width: usize, height: usize, mask: Option<&[bool]>) -> (f64, Vec<f64>) {
    let n = width * height;
    let taps = gaussian_taps();
    let valid: Vec<f64> = (0..n).map(|i| if mask.map_or(true, |m| m[i]) { 1.0 } else { 0.0 }).collect();
    let count = 3.0 * valid.iter().sum::<f64>();
    let mut grad = vec![0.0; 3 * n];
    if count == 0.0 {
        return (0.0, grad);
    }
    let mut total = 0.0;
    for c in 0..3 {
        // Masked pixels act like the zero padding outside the image.
        let x: Vec<f64> = channel(pred, c).iter().zip(&valid).map(|(v, m)| v * m).collect();
        let y: Vec<f64> = channel(reference, c).iter().zip(&valid).map(|(v, m)| v * m).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
        let mx = blur(&x, width, height, &taps);
        let my = blur(&y, width, height, &taps);
        let exx = blur(&xx, width, height, &taps);
        let eyy = blur(&yy, width, height, &taps);
        let exy = blur(&xy, width, height, &taps);
        let mut d_mx = vec![0.0; n];
        let mut d_exx = vec![0.0; n];
        let mut d_exy = vec![0.0; n];
        for i in 0..n {
            let (mux, muy) = (mx[i], my[i]);
            let sxx = exx[i] - mux * mux;
            let syy = eyy[i] - muy * muy;
            let sxy = exy[i] - mux * muy;
            let a1 = 2.0 * mux * muy + SSIM_C1;
            let a2 = 2.0 * sxy + SSIM_C2;
            let b1 = mux * mux + muy * muy + SSIM_C1;
            let b2 = sxx + syy + SSIM_C2;
            let s = a1 * a2 / (b1 * b2);
            total += valid[i] * s;
            let g = valid[i] / count;
            d_mx[i] = g * (2.0 * muy * (a2 - a1) / (b1 * b2) - 2.0 * mux * s / b1 + 2.0 * mux * s / b2);
            d_exx[i] = g * (-s / b2);
            d_exy[i] = g * (2.0 * s / a2);
        }
        let b_mx = blur(&d_mx, width, height, &taps);
        let b_exx = blur(&d_exx, width, height, &taps);
        let b_exy = blur(&d_exy, width, height, &taps);
        for i in 0..n {
            grad[3 * i + c] = valid[i] * (b_mx[i] + 2.0 * x[i] * b_exx[i] + y[i] * b_exy[i]);
        }
    }
    (total / count, grad)
}

pub fn ssim(pred: &[f64], reference: &[f64], width: usize, height: usize, mask: Option<&[bool]>) -> f64 {
    ssim_with_grad(pred, reference, width, height, mask).0
}

/// Mean absolute color difference over valid pixels and channels.
pub fn l1_with_grad(pred: &[f64], reference: &[f64], mask: Option<&[bool]>) -> (f64, Vec<f64>) {
    let n = pred.len() / 3;
    let count = 3 * (0..n).filter(|&i| mask.map_or(true, |m| m[i])).count();
    let mut grad = vec![0.0; pred.len()];
    if count == 0 {
        return (0.0, grad);
    }
    let mut sum = 0.0;
    for i in 0..n {
        if !mask.map_or(true, |m| m[i]) {
            continue;
        }
        for c in 0..3 {
            let d = pred[3 * i + c] - reference[3 * i + c];
            sum += d.abs();
            grad[3 * i + c] = sign(d) / count as f64;
        }
    }
    (sum / count as f64, grad)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub ssim_weight: f64,
    pub lambda_depth: f64,
    pub depth_beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            ssim_weight: 0.2,
            lambda_depth: 0.8,
            depth_beta: 10.0,
        }
    }
}

/// Inputs for one view. Buffers are row-major; color is interleaved RGB.
#[derive(Debug, Clone, Copy)]
pub struct LossInputs<'a> {
    pub width: usize,
    pub height: usize,
    pub pred_color: &'a [f64],
    pub ref_color: &'a [f64],
    pub pred_depth: &'a [f64],
    pub ref_depth: &'a [f64],
    pub mask: Option<&'a [bool]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub total: f64,
    pub rgb: f64,
    pub l1: f64,
    pub ssim: f64,
    pub depth: f64,
    pub depth_valid_pixels: usize,
    pub depth_missing: bool,
    pub grad_color: Vec<f64>,
    pub grad_depth: Vec<f64>,
}

pub fn total_loss(inputs: &LossInputs, weights: &LossWeights) -> Result<LossOutput> {
    let n = inputs.width * inputs.height;
    if inputs.pred_color.len() != 3 * n || inputs.ref_color.len() != 3 * n {
        return Err(Error::invalid("total_loss: color buffer size mismatch"));
    }
    if inputs.pred_depth.len() != n || inputs.ref_depth.len() != n {
        return Err(Error::invalid("total_loss: depth buffer size mismatch"));
    }
    if inputs.mask.is_some_and(|m| m.len() != n) {
        return Err(Error::invalid("total_loss: mask size mismatch"));
    }
    let (l1, g_l1) = l1_with_grad(inputs.pred_color, inputs.ref_color, inputs.mask);
    let (ssim_value, g_ssim) = if weights.ssim_weight != 0.0 {
        ssim_with_grad(inputs.pred_color, inputs.ref_color, inputs.width, inputs.height, inputs.mask)
    } else {
        (ssim(inputs.pred_color, inputs.ref_color, inputs.width, inputs.height, inputs.mask), vec![0.0; 3 * n])
    };
    let w = weights.ssim_weight;
    let rgb = (1.0 - w) * l1 + w * (1.0 - ssim_value);
    let grad_color: Vec<f64> = g_l1.iter().zip(&g_ssim).map(|(a, b)| (1.0 - w) * a - w * b).collect();

    let beta = weights.depth_beta;
    let valid: Vec<usize> = (0..n).filter(|&i| depth_valid(inputs.ref_depth[i], inputs.mask, i)).collect();
    let mut grad_depth = vec![0.0; n];
    let mut depth = 0.0;
    if valid.is_empty() {
        log::warn!("depth loss has no valid pixels");
    } else {
        let inv = 1.0 / valid.len() as f64;
        for &i in &valid {
            let d = inputs.pred_depth[i];
            let diff = depth_normalize(d, beta) - depth_normalize(inputs.ref_depth[i], beta);
            depth += diff.abs() * inv;
            grad_depth[i] = weights.lambda_depth * sign(diff) * depth_normalize_grad(d, beta) * inv;
        }
    }
    Ok(LossOutput {
        total: rgb + weights.lambda_depth * depth,
        rgb,
        l1,
        ssim: ssim_value,
        depth,
        depth_valid_pixels: valid.len(),
        depth_missing: valid.is_empty(),
        grad_color,
        grad_depth,
    })
}

pub fn psnr(pred: &[f64], reference: &[f64], mask: Option<&[bool]>) -> f64 {
    let n = pred.len() / 3;
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..n {
        if mask.map_or(true, |m| m[i]) {
            for c in 0..3 {
                let d = pred[3 * i + c].clamp(0.0, 1.0) - reference[3 * i + c];
                sum += d * d;
            }
            count += 3;
        }
    }
    if count == 0 || sum == 0.0 {
        return f64::INFINITY;
    }
    -10.0 * (sum / count as f64).log10()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    struct Toy {
        pred: Vec<f64>,
        gt: Vec<f64>,
        pred_depth: Vec<f64>,
        gt_depth: Vec<f64>,
    }

    // Same tensors as tests/oracles/loss_toy.py.
    fn toy() -> Toy {
        let mut t = Toy {
            pred: vec![],
            gt: vec![],
            pred_depth: vec![],
            gt_depth: vec![],
        };
        for y in 0..4 {
            for x in 0..4 {
                for c in 0..3 {
                    t.pred.push(((3 * x + 5 * y + 7 * c) % 11) as f64 / 10.0);
                    t.gt.push(((2 * x + 3 * y + 5 * c + 1) % 9) as f64 / 8.0);
                }
                t.pred_depth.push(1.0 + 0.5 * x as f64 + 3.0 * y as f64);
                t.gt_depth.push(if (x + y) % 5 == 0 { 0.0 } else { 2.0 + (x * y) as f64 });
            }
        }
        t
    }

    fn inputs(t: &Toy) -> LossInputs<'_> {
        LossInputs {
            width: 4,
            height: 4,
            pred_color: &t.pred,
            ref_color: &t.gt,
            pred_depth: &t.pred_depth,
            ref_depth: &t.gt_depth,
            mask: None,
        }
    }

    #[test]
    fn depth_normalize_examples() {
        assert_eq!(depth_normalize(0.0, 10.0), 0.0);
        assert_eq!(depth_normalize(10.0, 10.0), 0.5);
        assert_eq!(10.0 / (2.0 * 10.0), 0.5);
        assert_eq!(depth_normalize(5.0, 10.0), 0.25);
    }

    #[test]
    fn depth_loss_examples() {
        let a = vec![5.0; 6];
        let b = vec![10.0; 6];
        assert_eq!(depth_loss(&[&a], &[&a], 10.0).unwrap().value, 0.0);
        assert_eq!(depth_loss(&[&a], &[&b], 10.0).unwrap().value, 0.25);
        let z = vec![0.0; 6];
        let none = depth_loss(&[&a], &[&z], 10.0).unwrap();
        assert_eq!(none.value, 0.0);
        assert!(none.no_valid_pixels);
    }

    #[test]
    fn toy_matches_scripted_oracle() {
        let t = toy();
        let out = total_loss(&inputs(&t), &LossWeights::default()).unwrap();
        let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
        assert!(close(out.l1, 0.33749999999999997), "{}", out.l1);
        assert!(close(out.ssim, 0.5842639878342971), "{}", out.ssim);
        assert!(close(out.depth, 0.11681325920456356), "{}", out.depth);
        assert!(close(out.rgb, 0.3531472024331406), "{}", out.rgb);
        assert!(close(out.total, 0.4465978097967914), "{}", out.total);
        let d = depth_loss(&[&t.pred_depth], &[&t.gt_depth], 10.0).unwrap();
        assert!(close(d.value, out.depth));
    }

    #[test]
    fn identical_inputs_give_zero() {
        let t = toy();
        let mut same = inputs(&t);
        same.pred_color = &t.gt;
        same.pred_depth = &t.gt_depth;
        let out = total_loss(&same, &LossWeights::default()).unwrap();
        assert!(out.total.abs() < 1e-15);
    }

    #[test]
    fn zero_depth_weight_is_rgb_only() {
        let t = toy();
        let w = LossWeights {
            lambda_depth: 0.0,
            ..Default::default()
        };
        let out = total_loss(&inputs(&t), &w).unwrap();
        assert_eq!(out.total, out.rgb);
        assert!(out.grad_depth.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let t = toy();
        let weights = LossWeights::default();
        let out = total_loss(&inputs(&t), &weights).unwrap();
        let h = 1e-6;
        for i in 0..t.pred.len() {
            let mut p = t.pred.clone();
            p[i] += h;
            let mut inp = inputs(&t);
            inp.pred_color = &p;
            let up = total_loss(&inp, &weights).unwrap().total;
            let mut m = t.pred.clone();
            m[i] -= h;
            inp.pred_color = &m;
            let down = total_loss(&inp, &weights).unwrap().total;
            let fd = (up - down) / (2.0 * h);
            assert!((fd - out.grad_color[i]).abs() < 1e-7, "color {i}: {fd} vs {}", out.grad_color[i]);
        }
        for i in 0..t.pred_depth.len() {
            let mut p = t.pred_depth.clone();
            p[i] += h;
            let mut inp = inputs(&t);
            inp.pred_depth = &p;
            let up = total_loss(&inp, &weights).unwrap().total;
            let mut m = t.pred_depth.clone();
            m[i] -= h;
            inp.pred_depth = &m;
            let down = total_loss(&inp, &weights).unwrap().total;
            let fd = (up - down) / (2.0 * h);
            assert!((fd - out.grad_depth[i]).abs() < 1e-7, "depth {i}");
        }
    }

    #[test]
    fn masked_pixels_do_not_contribute() {
        let t = toy();
        let mask: Vec<bool> = (0..16).map(|i| i % 3 != 0).collect();
        let mut inp = inputs(&t);
        inp.mask = Some(&mask);
        let out = total_loss(&inp, &LossWeights::default()).unwrap();
        for i in 0..16 {
            if !mask[i] {
                assert_eq!(out.grad_depth[i], 0.0);
                assert_eq!(out.grad_color[3 * i], 0.0);
            }
        }
        // Masked pixel content, rendered or reference, does not affect the loss.
        let mut gt2 = t.gt.clone();
        gt2[0] = 0.123;
        let mut gd2 = t.gt_depth.clone();
        gd2[0] = 7.0;
        let mut p2 = t.pred.clone();
        p2[1] = 0.9;
        inp.ref_color = &gt2;
        inp.ref_depth = &gd2;
        inp.pred_color = &p2;
        let out2 = total_loss(&inp, &LossWeights::default()).unwrap();
        assert_eq!(out.total, out2.total);
    }

    #[test]
    fn psnr_of_known_error() {
        let a = vec![0.5; 12];
        let b = vec![0.6; 12];
        assert!((psnr(&a, &b, None) - 20.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn depth_normalize_monotone_bounded(a in 0.0f64..1e4, b in 0.0f64..1e4, beta in 0.1f64..100.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (rl, rh) = (depth_normalize(lo, beta), depth_normalize(hi, beta));
            prop_assert!(rl <= rh);
            prop_assert!((0.0..1.0).contains(&rl) && (0.0..1.0).contains(&rh));
        }

        #[test]
        fn depth_normalize_continuous_at_beta(beta in 0.1f64..100.0) {
            let eps = 1e-9 * beta;
            prop_assert!((depth_normalize(beta - eps, beta) - depth_normalize(beta, beta)).abs() < 1e-8);
        }
    }
}

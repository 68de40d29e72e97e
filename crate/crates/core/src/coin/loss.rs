//! Differentiable image losses: L1, single-scale SSIM, and the pyramid
//! perceptual term used for structural supervision.
//!
//! SSIM follows the standard single-scale formulation: 11x11 Gaussian
//! window with sigma 1.5, K1 = 0.01, K2 = 0.03, dynamic range 1.0, averaged
//! over channels and valid window positions. Gradients are analytic.

use crate::error::{Error, Result};
use crate::image::Image;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// Subgradient sign: 0 at 0, unlike `f64::signum`.
#[inline]
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean absolute difference and its gradient with respect to `a`.
pub fn l1_with_grad(a: &Image, b: &Image) -> Result<(f64, Image)> {
    a.check_same_size(b, "l1 inputs")?;
    let n = a.data.len() as f64;
    let mut grad = Image::new(a.width, a.height);
    let mut total = 0.0;
    for i in 0..a.data.len() {
        let d = a.data[i] - b.data[i];
        total += d.abs();
        grad.data[i] = sign(d) / n;
    }
    Ok((total / n, grad))
}

pub fn l1(a: &Image, b: &Image) -> Result<f64> {
    Ok(l1_with_grad(a, b)?.0)
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        *v = (-(i as f64 - half).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in k.iter_mut() {
        *v /= sum;
    }
    k
}

/// Valid-mode separable convolution of one channel plane.
fn conv_valid(plane: &[f64], w: usize, h: usize, kernel: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ww = w - SSIM_WINDOW + 1;
    let hh = h - SSIM_WINDOW + 1;
    // Horizontal pass.
    let mut tmp = vec![0.0; ww * h];
    for y in 0..h {
        for x in 0..ww {
            let mut acc = 0.0;
            for (k, &g) in kernel.iter().enumerate() {
                acc += g * plane[y * w + x + k];
            }
            tmp[y * ww + x] = acc;
        }
    }
    // Vertical pass.
    let mut out = vec![0.0; ww * hh];
    for y in 0..hh {
        for x in 0..ww {
            let mut acc = 0.0;
            for (k, &g) in kernel.iter().enumerate() {
                acc += g * tmp[(y + k) * ww + x];
            }
            out[y * ww + x] = acc;
        }
    }
    out
}

/// Adjoint of [`conv_valid`]: scatters a window-position map back onto the
/// image grid.
fn conv_adjoint(map: &[f64], w: usize, h: usize, kernel: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ww = w - SSIM_WINDOW + 1;
    let hh = h - SSIM_WINDOW + 1;
    // Vertical adjoint: image-height columns over window-width grid.
    let mut tmp = vec![0.0; ww * h];
    for y in 0..hh {
        for x in 0..ww {
            let v = map[y * ww + x];
            if v == 0.0 {
                continue;
            }
            for (k, &g) in kernel.iter().enumerate() {
                tmp[(y + k) * ww + x] += g * v;
            }
        }
    }
    // Horizontal adjoint.
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..ww {
            let v = tmp[y * ww + x];
            if v == 0.0 {
                continue;
            }
            for (k, &g) in kernel.iter().enumerate() {
                out[y * w + x + k] += g * v;
            }
        }
    }
    out
}

fn channel_plane(img: &Image, ch: usize) -> Vec<f64> {
    img.data.iter().skip(ch).step_by(3).copied().collect()
}

/// Single-scale SSIM over valid window positions, averaged across the three
/// channels. Returns the score in [-1, 1].
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    Ok(ssim_impl(a, b, false)?.0)
}

/// SSIM plus its gradient with respect to `a`.
pub fn ssim_with_grad(a: &Image, b: &Image) -> Result<(f64, Image)> {
    let (value, grad) = ssim_impl(a, b, true)?;
    Ok((value, grad.expect("gradient requested")))
}

fn ssim_impl(a: &Image, b: &Image, want_grad: bool) -> Result<(f64, Option<Image>)> {
    a.check_same_size(b, "ssim inputs")?;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::DimensionMismatch(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images, got {}x{}",
            a.width, a.height
        )));
    }
    let kernel = gaussian_kernel();
    let (w, h) = (a.width, a.height);
    let ww = w - SSIM_WINDOW + 1;
    let hh = h - SSIM_WINDOW + 1;
    let n_windows = (ww * hh * 3) as f64;

    let mut total = 0.0;
    let mut grad = want_grad.then(|| Image::new(w, h));

    for ch in 0..3 {
        let pa = channel_plane(a, ch);
        let pb = channel_plane(b, ch);
        let a2: Vec<f64> = pa.iter().map(|v| v * v).collect();
        let b2: Vec<f64> = pb.iter().map(|v| v * v).collect();
        let ab: Vec<f64> = pa.iter().zip(&pb).map(|(x, y)| x * y).collect();

        let mu_a = conv_valid(&pa, w, h, &kernel);
        let mu_b = conv_valid(&pb, w, h, &kernel);
        let e_a2 = conv_valid(&a2, w, h, &kernel);
        let e_b2 = conv_valid(&b2, w, h, &kernel);
        let e_ab = conv_valid(&ab, w, h, &kernel);

        // Window-position coefficient maps for the backward pass.
        let mut q1 = want_grad.then(|| vec![0.0; ww * hh]);
        let mut q2 = want_grad.then(|| vec![0.0; ww * hh]);
        let mut q3 = want_grad.then(|| vec![0.0; ww * hh]);

        for i in 0..ww * hh {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let var_a = e_a2[i] - ma * ma;
            let var_b = e_b2[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            let a1 = 2.0 * ma * mb + SSIM_C1;
            let a2t = 2.0 * cov + SSIM_C2;
            let b1 = ma * ma + mb * mb + SSIM_C1;
            let b2t = var_a + var_b + SSIM_C2;
            let s = (a1 * a2t) / (b1 * b2t);
            total += s;
            if let (Some(q1), Some(q2), Some(q3)) = (q1.as_mut(), q2.as_mut(), q3.as_mut()) {
                let inv = 1.0 / (b1 * b2t);
                q1[i] = 2.0 * mb * (a2t - a1) * inv - 2.0 * ma * s / b1 + 2.0 * ma * s / b2t;
                q2[i] = -s / b2t;
                q3[i] = 2.0 * a1 * inv;
            }
        }

        if let Some(grad_img) = grad.as_mut() {
            let (q1, q2, q3) = (q1.unwrap(), q2.unwrap(), q3.unwrap());
            let g1 = conv_adjoint(&q1, w, h, &kernel);
            let g2 = conv_adjoint(&q2, w, h, &kernel);
            let g3 = conv_adjoint(&q3, w, h, &kernel);
            for p in 0..w * h {
                let d = (g1[p] + 2.0 * pa[p] * g2[p] + pb[p] * g3[p]) / n_windows;
                grad_img.data[p * 3 + ch] = d;
            }
        }
    }

    Ok((total / n_windows, grad))
}

/// Perceptual structure loss used in place of a pretrained network: mean L1
/// between box-downsampled copies of the images at the configured factors.
/// Blur-tolerant by construction, it penalizes coarse structure rather than
/// pixel alignment. Swap the implementation behind [`PerceptualLoss`] to use
/// a different metric.
pub trait PerceptualLoss: Send + Sync {
    fn name(&self) -> &'static str;
    /// Returns the loss and its gradient with respect to `a`.
    fn loss_with_grad(&self, a: &Image, b: &Image) -> Result<(f64, Image)>;

    fn loss(&self, a: &Image, b: &Image) -> Result<f64> {
        Ok(self.loss_with_grad(a, b)?.0)
    }
}

#[derive(Debug, Clone)]
pub struct PyramidPerceptual {
    pub factors: Vec<usize>,
}

impl Default for PyramidPerceptual {
    fn default() -> Self {
        Self { factors: vec![2, 4] }
    }
}

fn box_downsample(img: &Image, k: usize) -> Image {
    let w = img.width / k;
    let h = img.height / k;
    let mut out = Image::new(w, h);
    let inv = 1.0 / (k * k) as f64;
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; 3];
            for dy in 0..k {
                for dx in 0..k {
                    let p = img.get(x * k + dx, y * k + dy);
                    for ch in 0..3 {
                        acc[ch] += p[ch];
                    }
                }
            }
            out.set(x, y, [acc[0] * inv, acc[1] * inv, acc[2] * inv]);
        }
    }
    out
}

impl PerceptualLoss for PyramidPerceptual {
    fn name(&self) -> &'static str {
        "pyramid-l1"
    }

    fn loss_with_grad(&self, a: &Image, b: &Image) -> Result<(f64, Image)> {
        a.check_same_size(b, "perceptual inputs")?;
        let mut total = 0.0;
        let mut grad = Image::new(a.width, a.height);
        let n_levels = self.factors.len() as f64;
        for &k in &self.factors {
            if a.width < k || a.height < k {
                return Err(Error::DimensionMismatch(format!(
                    "image {}x{} too small for pyramid factor {k}",
                    a.width, a.height
                )));
            }
            let da = box_downsample(a, k);
            let db = box_downsample(b, k);
            let n = da.data.len() as f64;
            let inv_patch = 1.0 / (k * k) as f64;
            let mut level = 0.0;
            for y in 0..da.height {
                for x in 0..da.width {
                    let pa = da.get(x, y);
                    let pb = db.get(x, y);
                    for ch in 0..3 {
                        let d = pa[ch] - pb[ch];
                        level += d.abs();
                        // Scatter sign/n back over the k x k patch.
                        let g = sign(d) / n * inv_patch / n_levels;
                        for dy in 0..k {
                            for dx in 0..k {
                                let idx = grad.idx(x * k + dx, y * k + dy) + ch;
                                grad.data[idx] += g;
                            }
                        }
                    }
                }
            }
            total += level / n;
        }
        Ok((total / n_levels, grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_image(seed: u64, w: usize, h: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut img = Image::new(w, h);
        for v in img.data.iter_mut() {
            *v = rng.random();
        }
        img
    }

    #[test]
    fn ssim_of_identical_images_is_one() {
        let img = random_image(1, 20, 18);
        let s = ssim(&img, &img).unwrap();
        assert_eq!(s, 1.0);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let img = random_image(2, 8, 8);
        assert!(ssim(&img, &img).is_err());
    }

    #[test]
    fn ssim_of_inverted_checkerboard_is_strongly_negative() {
        let img = Image::from_fn(24, 24, |x, y| {
            let v = if (x + y) % 2 == 0 { 0.95 } else { 0.05 };
            [v, v, v]
        });
        let inv = Image {
            width: 24,
            height: 24,
            data: img.data.iter().map(|v| 1.0 - v).collect(),
        };
        let s = ssim(&img, &inv).unwrap();
        assert!(s < -0.5, "ssim {s}");
    }

    /// Naive double-loop SSIM used as the independent reference.
    fn ssim_reference(a: &Image, b: &Image) -> f64 {
        let kernel = gaussian_kernel();
        let (w, h) = (a.width, a.height);
        let mut total = 0.0;
        let mut count = 0usize;
        for ch in 0..3 {
            for wy in 0..=(h - SSIM_WINDOW) {
                for wx in 0..=(w - SSIM_WINDOW) {
                    let (mut ma, mut mb, mut ea2, mut eb2, mut eab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for ky in 0..SSIM_WINDOW {
                        for kx in 0..SSIM_WINDOW {
                            let g = kernel[ky] * kernel[kx];
                            let va = a.get(wx + kx, wy + ky)[ch];
                            let vb = b.get(wx + kx, wy + ky)[ch];
                            ma += g * va;
                            mb += g * vb;
                            ea2 += g * va * va;
                            eb2 += g * vb * vb;
                            eab += g * va * vb;
                        }
                    }
                    let var_a = ea2 - ma * ma;
                    let var_b = eb2 - mb * mb;
                    let cov = eab - ma * mb;
                    let s = ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                        / ((ma * ma + mb * mb + SSIM_C1) * (var_a + var_b + SSIM_C2));
                    total += s;
                    count += 1;
                }
            }
        }
        total / count as f64
    }

    #[test]
    fn ssim_matches_reference_implementation() {
        for seed in 0..20u64 {
            let a = random_image(seed * 2, 16, 16);
            let b = random_image(seed * 2 + 1, 16, 16);
            let fast = ssim(&a, &b).unwrap();
            let slow = ssim_reference(&a, &b);
            assert!(
                (fast - slow).abs() < 1e-6,
                "seed {seed}: {fast} vs {slow}"
            );
        }
    }

    #[test]
    fn ssim_gradient_matches_finite_differences() {
        let h = 1e-4;
        for seed in 0..4u64 {
            let mut a = random_image(100 + seed, 16, 16);
            let b = random_image(200 + seed, 16, 16);
            let (_, grad) = ssim_with_grad(&a, &b).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
            for _ in 0..40 {
                let i = rng.random_range(0..a.data.len());
                let orig = a.data[i];
                a.data[i] = orig + h;
                let plus = ssim(&a, &b).unwrap();
                a.data[i] = orig - h;
                let minus = ssim(&a, &b).unwrap();
                a.data[i] = orig;
                let fd = (plus - minus) / (2.0 * h);
                let an = grad.data[i];
                assert!(
                    (an - fd).abs() <= 1e-4 * an.abs().max(fd.abs()).max(1e-3),
                    "entry {i}: analytic {an:.6e} vs fd {fd:.6e}"
                );
            }
        }
    }

    #[test]
    fn l1_gradient_matches_finite_differences() {
        let mut a = random_image(7, 12, 9);
        // Push values apart so no |a-b| crosses zero during probing.
        let b = Image {
            width: 12,
            height: 9,
            data: a.data.iter().map(|v| v + 0.11).collect(),
        };
        let (value, grad) = l1_with_grad(&a, &b).unwrap();
        assert!((value - 0.11).abs() < 1e-12);
        let h = 1e-5;
        for i in (0..a.data.len()).step_by(17) {
            let orig = a.data[i];
            a.data[i] = orig + h;
            let plus = l1(&a, &b).unwrap();
            a.data[i] = orig - h;
            let minus = l1(&a, &b).unwrap();
            a.data[i] = orig;
            let fd = (plus - minus) / (2.0 * h);
            assert!((grad.data[i] - fd).abs() < 1e-9);
        }
    }

    #[test]
    fn pyramid_perceptual_gradient_matches_finite_differences() {
        let loss = PyramidPerceptual::default();
        let mut a = random_image(11, 16, 16);
        let b = Image {
            width: 16,
            height: 16,
            data: a.data.iter().map(|v| v * 0.7 + 0.2).collect(),
        };
        let (_, grad) = loss.loss_with_grad(&a, &b).unwrap();
        let h = 1e-6;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..30 {
            let i = rng.random_range(0..a.data.len());
            let orig = a.data[i];
            a.data[i] = orig + h;
            let plus = loss.loss(&a, &b).unwrap();
            a.data[i] = orig - h;
            let minus = loss.loss(&a, &b).unwrap();
            a.data[i] = orig;
            let fd = (plus - minus) / (2.0 * h);
            assert!(
                (grad.data[i] - fd).abs() < 1e-8,
                "entry {i}: {} vs {fd}",
                grad.data[i]
            );
        }
    }

    #[test]
    fn pyramid_forgives_misalignment_that_l1_punishes() {
        // A one-pixel shift of a high-frequency stripe pattern flips every
        // pixel (maximal L1) but leaves local averages untouched.
        let a = Image::from_fn(32, 32, |x, _| [(x % 2) as f64; 3]);
        let shifted = Image::from_fn(32, 32, |x, _| [((x + 1) % 2) as f64; 3]);
        let pl = PyramidPerceptual::default();
        let l1v = l1(&a, &shifted).unwrap();
        let pv = pl.loss(&a, &shifted).unwrap();
        assert_eq!(l1v, 1.0);
        assert!(pv < 1e-12, "pyramid {pv}");
    }
}

//! Structural similarity on RGB planes, with its gradient.
//!
//! Windows are Gaussian (11×11, σ = 1.5) and only fully-inside positions are
//! scored. Images smaller than the window use the largest odd window that fits.

use crate::render::Image;

pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
pub const K1: f64 = 0.01;
pub const K2: f64 = 0.03;
const C1: f64 = K1 * K1;
const C2: f64 = K2 * K2;

/// A single-channel plane, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn channel(img: &Image, ch: usize) -> Plane {
        Plane {
            width: img.width,
            height: img.height,
            data: img.pixels.iter().map(|p| p[ch]).collect(),
        }
    }
}

fn kernel(size: usize) -> Vec<f64> {
    let r = (size / 2) as f64;
    let k: Vec<f64> = (0..size).map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SIGMA * SIGMA)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

fn window_for(width: usize, height: usize) -> usize {
    let m = WINDOW.min(width).min(height);
    if m % 2 == 0 {
        m - 1
    } else {
        m
    }
}

/// Separable valid correlation: output is `(w − k + 1) × (h − k + 1)`.
fn filter_valid(data: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        let src = &data[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = k.iter().zip(&src[x..x + n]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: scatters a valid-size map back to `w × h`.
fn filter_adjoint(map: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut cols = vec![0.0; ow * h];
    for y in 0..oh {
        for x in 0..ow {
            let v = map[y * ow + x];
            for i in 0..n {
                cols[(y + i) * ow + x] += k[i] * v;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..ow {
            let v = cols[y * ow + x];
            for i in 0..n {
                out[y * w + x + i] += k[i] * v;
            }
        }
    }
    out
}

struct Stats {
    k: Vec<f64>,
    mu_a: Vec<f64>,
    mu_b: Vec<f64>,
    var_a: Vec<f64>,
    var_b: Vec<f64>,
    cov: Vec<f64>,
}

fn stats(a: &Plane, b: &Plane) -> Stats {
    let (w, h) = (a.width, a.height);
    let k = kernel(window_for(w, h));
    let f = |d: &[f64]| filter_valid(d, w, h, &k);
    let mu_a = f(&a.data);
    let mu_b = f(&b.data);
    let sq = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
    let e_aa = f(&sq(&a.data, &a.data));
    let e_bb = f(&sq(&b.data, &b.data));
    let e_ab = f(&sq(&a.data, &b.data));
    let var_a = e_aa.iter().zip(&mu_a).map(|(e, m)| e - m * m).collect();
    let var_b = e_bb.iter().zip(&mu_b).map(|(e, m)| e - m * m).collect();
    let cov = e_ab.iter().zip(mu_a.iter().zip(&mu_b)).map(|(e, (ma, mb))| e - ma * mb).collect();
    Stats { k, mu_a, mu_b, var_a, var_b, cov }
}

/// Mean SSIM of one plane pair, and optionally `d mean / d a`.
pub fn ssim_plane(a: &Plane, b: &Plane, want_grad: bool) -> (f64, Option<Vec<f64>>) {
    assert_eq!((a.width, a.height), (b.width, b.height), "ssim planes differ in size");
    if a.data.is_empty() {
        return (1.0, want_grad.then(Vec::new));
    }
    let s = stats(a, b);
    let m = s.mu_a.len();
    let inv_m = 1.0 / m as f64;
    let mut total = 0.0;
    let (mut d_mu, mut d_var, mut d_cov) = if want_grad {
        (vec![0.0; m], vec![0.0; m], vec![0.0; m])
    } else {
        (Vec::new(), Vec::new(), Vec::new())
    };
    for i in 0..m {
        let (ma, mb) = (s.mu_a[i], s.mu_b[i]);
        let n1 = 2.0 * ma * mb + C1;
        let n2 = 2.0 * s.cov[i] + C2;
        let d1 = ma * ma + mb * mb + C1;
        let d2 = s.var_a[i] + s.var_b[i] + C2;
        let v = n1 * n2 / (d1 * d2);
        total += v;
        if want_grad {
            d_mu[i] = inv_m * (2.0 * mb * n2 / (d1 * d2) - v * 2.0 * ma / d1);
            d_var[i] = -inv_m * v / d2;
            d_cov[i] = inv_m * 2.0 * n1 / (d1 * d2);
        }
    }
    let mean = total * inv_m;
    if !want_grad {
        return (mean, None);
    }
    // d/da[p] = Gᵀ(dμ − 2·dvar·μa − dcov·μb) + 2a·Gᵀ(dvar) + b·Gᵀ(dcov)
    let base: Vec<f64> = (0..m).map(|i| d_mu[i] - 2.0 * d_var[i] * s.mu_a[i] - d_cov[i] * s.mu_b[i]).collect();
    let (w, h) = (a.width, a.height);
    let g0 = filter_adjoint(&base, w, h, &s.k);
    let g1 = filter_adjoint(&d_var, w, h, &s.k);
    let g2 = filter_adjoint(&d_cov, w, h, &s.k);
    let grad = (0..w * h).map(|p| g0[p] + 2.0 * a.data[p] * g1[p] + b.data[p] * g2[p]).collect();
    (mean, Some(grad))
}

/// Mean SSIM over the three channels.
pub fn ssim(a: &Image, b: &Image) -> f64 {
    assert!(a.same_shape(b), "ssim images differ in size");
    (0..3).map(|c| ssim_plane(&Plane::channel(a, c), &Plane::channel(b, c), false).0).sum::<f64>() / 3.0
}

/// SSIM and its gradient with respect to `a`.
pub fn ssim_with_grad(a: &Image, b: &Image) -> (f64, Vec<[f64; 3]>) {
    assert!(a.same_shape(b), "ssim images differ in size");
    let mut grad = vec![[0.0; 3]; a.pixels.len()];
    let mut total = 0.0;
    for c in 0..3 {
        let (v, g) = ssim_plane(&Plane::channel(a, c), &Plane::channel(b, c), true);
        total += v / 3.0;
        for (dst, src) in grad.iter_mut().zip(g.unwrap_or_default()) {
            dst[c] = src / 3.0;
        }
    }
    (total, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut img = Image::filled(w, h, [0.0; 3]);
        for p in &mut img.pixels {
            *p = [rng.random(), rng.random(), rng.random()];
        }
        img
    }

    #[test]
    fn identical_images_score_one() {
        let a = random_image(20, 17, 1);
        assert_eq!(ssim(&a, &a), 1.0);
    }

    #[test]
    fn constant_black_vs_white() {
        // Constant windows: variances vanish, so SSIM = C1 / (1 + C1).
        let a = Image::filled(16, 16, [0.0; 3]);
        let b = Image::filled(16, 16, [1.0; 3]);
        let want = C1 / (1.0 + C1);
        assert!((ssim(&a, &b) - want).abs() < 1e-15);
    }

    #[test]
    fn tiny_noise_stays_near_one() {
        let a = random_image(32, 32, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut b = a.clone();
        for p in &mut b.pixels {
            for c in p.iter_mut() {
                *c += 1e-4 * rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, &mut rng);
            }
        }
        assert!(ssim(&a, &b) >= 0.999);
    }

    #[test]
    fn window_shrinks_for_small_images() {
        assert_eq!(window_for(64, 64), 11);
        assert_eq!(window_for(8, 30), 7);
        assert_eq!(window_for(1, 5), 1);
        let a = random_image(6, 4, 4);
        let b = random_image(6, 4, 5);
        assert!(ssim(&a, &b).is_finite());
    }

    #[test]
    fn adjoint_matches_filter() {
        // ⟨F x, y⟩ = ⟨x, Fᵀ y⟩
        let k = kernel(5);
        let (w, h) = (9, 7);
        let x: Vec<f64> = (0..w * h).map(|i| ((i * 37) % 11) as f64 / 11.0).collect();
        let y: Vec<f64> = (0..(w - 4) * (h - 4)).map(|i| ((i * 13) % 7) as f64 / 7.0 - 0.5).collect();
        let lhs: f64 = filter_valid(&x, w, h, &k).iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(filter_adjoint(&y, w, h, &k)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for (w, h) in [(16, 14), (5, 5)] {
            let a = random_image(w, h, 6);
            let b = random_image(w, h, 7);
            let (_, g) = ssim_with_grad(&a, &b);
            let eps = 1e-6;
            for p in [0, w + 3, w * h / 2, w * h - 1] {
                for c in 0..3 {
                    let mut hi = a.clone();
                    let mut lo = a.clone();
                    hi.pixels[p][c] += eps;
                    lo.pixels[p][c] -= eps;
                    let fd = (ssim(&hi, &b) - ssim(&lo, &b)) / (2.0 * eps);
                    assert!((fd - g[p][c]).abs() < 1e-7, "pixel {p} ch {c}: fd {fd} vs {}", g[p][c]);
                }
            }
        }
    }
}

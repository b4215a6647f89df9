use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::config::FitConfig;
use super::frames::Frame;
use super::ssim::{ssim, ssim_with_grad};
use crate::error::{Error, Result};
use crate::render::Image;
use crate::scene::HumanGaussians;

/// Loss terms for one frame. `ssim` and `ssim_human` hold `1 − SSIM`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l1: f64,
    pub ssim: f64,
    pub l1_human: f64,
    pub ssim_human: f64,
    pub geo: f64,
    pub offset: f64,
    pub scale: f64,
    pub total: f64,
}

/// Gradients of the total loss with respect to both renders and the regularized grids.
#[derive(Clone, Debug, Default)]
pub(crate) struct LossGradients {
    pub image: Vec<[f64; 3]>,
    pub human_image: Vec<[f64; 3]>,
    pub color_logits: Vec<Vector3<f64>>,
    pub opacity_logits: Vec<f64>,
    pub offsets: Vec<Vector3<f64>>,
    pub log_scales: Vec<f64>,
}

/// Half-open pixel box `[x0, y0, x1, y1]` enclosing every masked pixel.
pub fn mask_bbox(mask: &[bool], width: usize, height: usize) -> Option<[usize; 4]> {
    let mut b: Option<[usize; 4]> = None;
    for y in 0..height {
        for x in 0..width {
            if mask[y * width + x] {
                let r = b.get_or_insert([x, y, x + 1, y + 1]);
                r[0] = r[0].min(x);
                r[1] = r[1].min(y);
                r[2] = r[2].max(x + 1);
                r[3] = r[3].max(y + 1);
            }
        }
    }
    b
}

pub fn crop(img: &Image, bbox: [usize; 4]) -> Image {
    let [x0, y0, x1, y1] = bbox;
    let mut out = Image::filled(x1 - x0, y1 - y0, [0.0; 3]);
    for y in y0..y1 {
        for x in x0..x1 {
            out.pixels[(y - y0) * (x1 - x0) + x - x0] = img.get(x, y);
        }
    }
    out
}

fn l1(a: &Image, b: &Image) -> f64 {
    let n = (a.pixels.len() * 3).max(1) as f64;
    a.pixels
        .iter()
        .zip(&b.pixels)
        .map(|(p, q)| (0..3).map(|c| (p[c] - q[c]).abs()).sum::<f64>())
        .sum::<f64>()
        / n
}

fn l1_grad(a: &Image, b: &Image, weight: f64) -> Vec<[f64; 3]> {
    let k = weight / (a.pixels.len() * 3).max(1) as f64;
    a.pixels
        .iter()
        .zip(&b.pixels)
        .map(|(p, q)| std::array::from_fn(|c| k * sign(p[c] - q[c])))
        .collect()
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

fn mean_sq<'a>(values: impl Iterator<Item = &'a f64>, count: usize) -> f64 {
    if count == 0 {
        return 0.0;
    }
    values.map(|v| v * v).sum::<f64>() / count as f64
}

/// Loss terms only.
pub fn compute_loss(
    rendered: &Image,
    human_only: &Image,
    frame: &Frame,
    human: &HumanGaussians,
    config: &FitConfig,
) -> Result<LossBreakdown> {
    evaluate(rendered, human_only, frame, human, config, false).map(|(l, _)| l)
}

pub(crate) fn loss_and_gradients(
    rendered: &Image,
    human_only: &Image,
    frame: &Frame,
    human: &HumanGaussians,
    config: &FitConfig,
) -> Result<(LossBreakdown, LossGradients)> {
    evaluate(rendered, human_only, frame, human, config, true)
}

fn evaluate(
    rendered: &Image,
    human_only: &Image,
    frame: &Frame,
    human: &HumanGaussians,
    config: &FitConfig,
    want_grad: bool,
) -> Result<(LossBreakdown, LossGradients)> {
    let target = &frame.image;
    if !rendered.same_shape(target) || !human_only.same_shape(target) {
        return Err(Error::invalid(format!(
            "render is {}x{} but the target frame is {}x{}",
            rendered.width, rendered.height, target.width, target.height
        )));
    }
    let (w, h) = (target.width, target.height);
    let mut out = LossBreakdown::default();
    let mut g = LossGradients::default();

    out.l1 = l1(rendered, target);
    if want_grad {
        g.image = l1_grad(rendered, target, config.lambda_l1);
    }
    if want_grad && config.lambda_ssim > 0.0 {
        let (s, d) = ssim_with_grad(rendered, target);
        out.ssim = (1.0 - s).max(0.0);
        for (dst, src) in g.image.iter_mut().zip(d) {
            for c in 0..3 {
                dst[c] -= config.lambda_ssim * src[c];
            }
        }
    } else {
        out.ssim = (1.0 - ssim(rendered, target)).max(0.0);
    }

    if want_grad {
        g.human_image = vec![[0.0; 3]; w * h];
    }
    match mask_bbox(&frame.mask, w, h) {
        None => log::warn!("human mask is empty; human loss terms are 0 for this frame"),
        Some(bbox) => {
            let mut masked = target.clone();
            for (p, &m) in masked.pixels.iter_mut().zip(&frame.mask) {
                if !m {
                    *p = [0.0; 3];
                }
            }
            let hr = crop(human_only, bbox);
            let ht = crop(&masked, bbox);
            out.l1_human = l1(&hr, &ht);
            let mut d = if want_grad { l1_grad(&hr, &ht, config.lambda_l1) } else { Vec::new() };
            if want_grad && config.lambda_ssim > 0.0 {
                let (s, ds) = ssim_with_grad(&hr, &ht);
                out.ssim_human = (1.0 - s).max(0.0);
                for (dst, src) in d.iter_mut().zip(ds) {
                    for c in 0..3 {
                        dst[c] -= config.lambda_ssim * src[c];
                    }
                }
            } else {
                out.ssim_human = (1.0 - ssim(&hr, &ht)).max(0.0);
            }
            if want_grad {
                let [x0, y0, x1, _] = bbox;
                let cw = x1 - x0;
                for (k, v) in d.into_iter().enumerate() {
                    g.human_image[(y0 + k / cw) * w + x0 + k % cw] = v;
                }
            }
        }
    }

    let n = human.len();
    out.geo = mean_sq(
        human.color_logits.iter().flat_map(|c| c.iter()).chain(&human.opacity_logits),
        4 * n,
    );
    out.offset = mean_sq(human.offsets.iter().flat_map(|d| d.iter()), 3 * n);
    out.scale = mean_sq(human.log_scales.iter(), n);
    if want_grad && n > 0 {
        let kg = 2.0 * config.lambda_geo / (4 * n) as f64;
        let ko = 2.0 * config.lambda_offset / (3 * n) as f64;
        let ks = 2.0 * config.lambda_scale / n as f64;
        g.color_logits = human.color_logits.iter().map(|c| c * kg).collect();
        g.opacity_logits = human.opacity_logits.iter().map(|o| o * kg).collect();
        g.offsets = human.offsets.iter().map(|d| d * ko).collect();
        g.log_scales = human.log_scales.iter().map(|s| s * ks).collect();
    }

    out.total = config.lambda_l1 * (out.l1 + out.l1_human)
        + config.lambda_ssim * (out.ssim + out.ssim_human)
        + config.lambda_geo * out.geo
        + config.lambda_offset * out.offset
        + config.lambda_scale * out.scale;
    Ok((out, g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::Pose;
    use crate::render::Camera;
    use nalgebra::Matrix3;

    fn frame(img: Image, mask: Vec<bool>) -> Frame {
        let (w, h) = (img.width, img.height);
        Frame {
            image: img,
            camera: Camera {
                fx: 10.0,
                fy: 10.0,
                cx: w as f64 / 2.0,
                cy: h as f64 / 2.0,
                rotation: Matrix3::identity(),
                translation: Vector3::zeros(),
                width: w,
                height: h,
                near: 0.01,
            },
            mask,
            pose: Pose::zero(1),
        }
    }

    fn zero_human(n: usize) -> HumanGaussians {
        HumanGaussians {
            texel_indices: (0..n).collect(),
            rest_positions: vec![Vector3::zeros(); n],
            rest_log_scales: vec![0.0; n],
            offsets: vec![Vector3::zeros(); n],
            color_logits: vec![Vector3::zeros(); n],
            log_scales: vec![0.0; n],
            opacity_logits: vec![0.0; n],
            lbs_weights: vec![crate::body::SkinWeights::single(0); n],
            ..Default::default()
        }
    }

    #[test]
    fn perfect_render_has_zero_loss() {
        let img = Image::filled(12, 12, [0.3, 0.6, 0.1]);
        let mut mask = vec![false; 144];
        mask[30] = true;
        let mut human = img.clone();
        for (p, &m) in human.pixels.iter_mut().zip(&mask) {
            if !m {
                *p = [0.0; 3];
            }
        }
        let f = frame(img.clone(), mask);
        let l = compute_loss(&img, &human, &f, &zero_human(3), &FitConfig::default()).unwrap();
        assert_eq!(l, LossBreakdown::default());
    }

    #[test]
    fn zero_weights_give_zero_total() {
        let cfg = FitConfig {
            lambda_l1: 0.0,
            lambda_ssim: 0.0,
            lambda_geo: 0.0,
            lambda_offset: 0.0,
            lambda_scale: 0.0,
            ..Default::default()
        };
        let a = Image::filled(8, 8, [1.0; 3]);
        let f = frame(Image::filled(8, 8, [0.0; 3]), vec![true; 64]);
        let mut human = zero_human(2);
        human.offsets[0] = Vector3::new(1.0, 2.0, 3.0);
        let l = compute_loss(&a, &a, &f, &human, &cfg).unwrap();
        assert_eq!(l.total, 0.0);
        assert!(l.l1 > 0.0 && l.offset > 0.0);
    }

    #[test]
    fn gray_against_black_l1_is_gray_level() {
        let cfg = FitConfig {
            lambda_l1: 1.0,
            lambda_ssim: 0.0,
            lambda_geo: 0.0,
            lambda_offset: 0.0,
            lambda_scale: 0.0,
            ..Default::default()
        };
        let gray = Image::filled(10, 10, [0.37; 3]);
        let f = frame(Image::filled(10, 10, [0.0; 3]), vec![false; 100]);
        let l = compute_loss(&gray, &Image::filled(10, 10, [0.0; 3]), &f, &zero_human(0), &cfg).unwrap();
        assert!((l.total - 0.37).abs() < 1e-15);
    }

    #[test]
    fn human_terms_use_the_mask_box() {
        let target = Image::filled(10, 10, [0.5; 3]);
        let mut mask = vec![false; 100];
        for y in 2..5 {
            for x in 3..7 {
                mask[y * 10 + x] = true;
            }
        }
        assert_eq!(mask_bbox(&mask, 10, 10), Some([3, 2, 7, 5]));
        let f = frame(target.clone(), mask);
        let black = Image::filled(10, 10, [0.0; 3]);
        let l = compute_loss(&target, &black, &f, &zero_human(0), &FitConfig::default()).unwrap();
        assert!((l.l1_human - 0.5).abs() < 1e-15);
        assert_eq!(l.l1, 0.0);
    }

    #[test]
    fn image_gradient_matches_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut rnd = |w, h| {
            let mut i = Image::filled(w, h, [0.0; 3]);
            for p in &mut i.pixels {
                *p = [rng.random(), rng.random(), rng.random()];
            }
            i
        };
        let (w, h) = (14, 13);
        let r = rnd(w, h);
        let hr = rnd(w, h);
        let t = rnd(w, h);
        let mask: Vec<bool> = (0..w * h).map(|i| (i / w) > 3 && (i % w) > 2).collect();
        let f = frame(t, mask);
        let human = zero_human(0);
        let cfg = FitConfig::default();
        let (_, g) = loss_and_gradients(&r, &hr, &f, &human, &cfg).unwrap();
        let eps = 1e-6;
        for p in [0, 5 * w + 4, w * h - 1] {
            for c in 0..3 {
                let total = |img: &Image, himg: &Image| compute_loss(img, himg, &f, &human, &cfg).unwrap().total;
                let (mut a, mut b) = (r.clone(), r.clone());
                a.pixels[p][c] += eps;
                b.pixels[p][c] -= eps;
                let fd = (total(&a, &hr) - total(&b, &hr)) / (2.0 * eps);
                assert!((fd - g.image[p][c]).abs() < 1e-6, "full {p}/{c}: {fd} vs {}", g.image[p][c]);
                let (mut a, mut b) = (hr.clone(), hr.clone());
                a.pixels[p][c] += eps;
                b.pixels[p][c] -= eps;
                let fd = (total(&r, &a) - total(&r, &b)) / (2.0 * eps);
                assert!((fd - g.human_image[p][c]).abs() < 1e-6, "human {p}/{c}: {fd} vs {}", g.human_image[p][c]);
            }
        }
    }
}

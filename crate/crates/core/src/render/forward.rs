use rayon::prelude::*;

use super::{project, sort_by_depth, Camera, Image, RenderConfig, Splat, Tiles};
use crate::error::Result;
use crate::scene::{Origin, RenderableScene};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RenderStats {
    pub visible: usize,
    pub culled: usize,
    /// Splats skipped because their covariance could not be inverted.
    pub degenerate: usize,
    /// Total splat/tile pairs after binning.
    pub tile_entries: usize,
}

/// Front-to-back alpha for splat `s` at pixel `(x, y)`, or `None` outside its box.
#[inline]
pub(super) fn splat_alpha(s: &Splat, x: i64, y: i64, max_alpha: f64) -> Option<(f64, f64)> {
    if !s.contains(x, y) {
        return None;
    }
    let (g, _) = s.kernel(x, y);
    Some(((s.opacity * g).min(max_alpha), g))
}

pub fn render(scene: &RenderableScene, camera: &Camera, config: &RenderConfig) -> Result<Image> {
    render_with_stats(scene, camera, config).map(|(img, _)| img)
}

/// Renders the scene; `image.alpha` holds accumulated opacity per pixel.
pub fn render_with_stats(
    scene: &RenderableScene,
    camera: &Camera,
    config: &RenderConfig,
) -> Result<(Image, RenderStats)> {
    camera.validate()?;
    let mut proj = project(scene, camera, config);
    sort_by_depth(&mut proj.splats);
    let splats = &proj.splats;
    let (w, h) = (camera.width, camera.height);
    let tiles = Tiles::build(splats, w, h);

    let tile_out: Vec<Vec<([f64; 3], f64)>> = (0..tiles.count())
        .into_par_iter()
        .map(|t| {
            let bounds = tiles.bounds(t, w, h);
            composite_tile(splats, &tiles.lists[t], bounds, config)
        })
        .collect();

    let mut image = Image::filled(w, h, config.background);
    let mut alpha = vec![0.0; w * h];
    for (t, px) in tile_out.into_iter().enumerate() {
        let [x0, y0, x1, _] = tiles.bounds(t, w, h);
        let tw = x1 - x0;
        for (k, (c, a)) in px.into_iter().enumerate() {
            let idx = (y0 + k / tw) * w + x0 + k % tw;
            image.pixels[idx] = c;
            alpha[idx] = a;
        }
    }
    image.alpha = Some(alpha);
    let stats = RenderStats {
        visible: splats.len(),
        culled: proj.culled,
        degenerate: proj.degenerate,
        tile_entries: tiles.lists.iter().map(Vec::len).sum(),
    };
    Ok((image, stats))
}

/// Composites one tile splat by splat, visiting only the pixels inside each
/// splat's box. Per pixel the arithmetic and its order match a pixel-by-pixel
/// walk of the sorted list, so the result is bit-identical to one.
fn composite_tile(splats: &[Splat], list: &[u32], bounds: [usize; 4], config: &RenderConfig) -> Vec<([f64; 3], f64)> {
    let [x0, y0, x1, y1] = bounds;
    let tw = x1 - x0;
    let n = tw * (y1 - y0);
    let mut t = vec![1.0; n];
    let mut c = vec![[0.0; 3]; n];
    let mut weight_sum = vec![0.0; n];
    let mut done = vec![false; n];
    let mut remaining = n;
    for &k in list {
        let s = &splats[k as usize];
        let (sx0, sy0) = (s.bbox[0].max(x0 as i64), s.bbox[1].max(y0 as i64));
        let (sx1, sy1) = (s.bbox[2].min(x1 as i64 - 1), s.bbox[3].min(y1 as i64 - 1));
        for y in sy0..=sy1 {
            let row = (y as usize - y0) * tw;
            for x in sx0..=sx1 {
                let p = row + x as usize - x0;
                if done[p] {
                    continue;
                }
                let (g, _) = s.kernel(x, y);
                let alpha = (s.opacity * g).min(config.max_alpha);
                if alpha <= 0.0 {
                    continue;
                }
                let next = t[p] * (1.0 - alpha);
                if next < config.min_transmittance {
                    done[p] = true;
                    remaining -= 1;
                    continue;
                }
                let wgt = alpha * t[p];
                for ch in 0..3 {
                    c[p][ch] += s.color[ch] * wgt;
                }
                weight_sum[p] += wgt;
                t[p] = next;
            }
        }
        if remaining == 0 {
            break;
        }
    }
    (0..n)
        .map(|p| {
            debug_assert!(weight_sum[p] <= 1.0 + 1e-12, "transmittance bound violated: {}", weight_sum[p]);
            let mut px = c[p];
            for ch in 0..3 {
                px[ch] += t[p] * config.background[ch];
            }
            (px, 1.0 - t[p])
        })
        .collect()
}

/// Renders only human-tagged Gaussians over a black background. The mask marks
/// pixels whose accumulated alpha exceeds 0.5.
pub fn render_human_only(
    scene: &RenderableScene,
    camera: &Camera,
    config: &RenderConfig,
) -> Result<(Image, Vec<bool>)> {
    let human = scene.filtered(Origin::Human);
    let cfg = RenderConfig {
        background: [0.0; 3],
        ..config.clone()
    };
    let image = render(&human, camera, &cfg)?;
    let mask = image
        .alpha
        .as_ref()
        .map(|a| a.iter().map(|&v| v > 0.5).collect())
        .unwrap_or_default();
    Ok((image, mask))
}

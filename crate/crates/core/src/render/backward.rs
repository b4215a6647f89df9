//! Analytic gradients of the compositing formula.
//!
//! The forward pass is recomputed per tile. Each tile produces sparse per-splat
//! partials which are then reduced in fixed tile order, so gradients are
//! reproducible for any thread count.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3, Vector4};
use rayon::prelude::*;

use super::forward::splat_alpha;
use super::{project, sort_by_depth, Camera, RenderConfig, Splat, Tiles};
use crate::error::{Error, Result};
use crate::math::quat_to_matrix;
use crate::scene::RenderableScene;

/// Per-Gaussian gradients, indexed like the scene.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradientBuffers {
    pub color: Vec<Vector3<f64>>,
    /// With respect to the activated opacity.
    pub opacity: Vec<f64>,
    /// With respect to the opacity logit, `opacity · o(1 − o)`.
    pub opacity_logit: Vec<f64>,
    pub position: Vec<Vector3<f64>>,
    /// With respect to the world-space 3D covariance (symmetric).
    pub covariance: Vec<Matrix3<f64>>,
}

impl GradientBuffers {
    pub fn zeros(n: usize) -> Self {
        GradientBuffers {
            color: vec![Vector3::zeros(); n],
            opacity: vec![0.0; n],
            opacity_logit: vec![0.0; n],
            position: vec![Vector3::zeros(); n],
            covariance: vec![Matrix3::zeros(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.color.len()
    }

    pub fn is_empty(&self) -> bool {
        self.color.is_empty()
    }
}

/// Screen-space partials of one splat.
#[derive(Clone, Copy, Default)]
struct SplatGrad {
    color: [f64; 3],
    opacity: f64,
    mean: [f64; 2],
    /// dL/dconic as a full matrix: `[xx, xy, yy]`, off-diagonal counted per entry.
    conic: [f64; 3],
}

struct Contribution {
    slot: u32,
    alpha: f64,
    g: f64,
    transmittance: f64,
    clamped: bool,
}

/// Gradients of `Σ_pixels ⟨d_image, C⟩`.
pub fn render_backward(
    scene: &RenderableScene,
    camera: &Camera,
    config: &RenderConfig,
    d_image: &[[f64; 3]],
) -> Result<GradientBuffers> {
    camera.validate()?;
    let (w, h) = (camera.width, camera.height);
    if d_image.len() != w * h {
        return Err(Error::invalid(format!(
            "image gradient has {} pixels, camera expects {}x{}",
            d_image.len(),
            w,
            h
        )));
    }
    let mut proj = project(scene, camera, config);
    sort_by_depth(&mut proj.splats);
    let splats = &proj.splats;
    let tiles = Tiles::build(splats, w, h);

    let per_tile: Vec<Vec<SplatGrad>> = (0..tiles.count())
        .into_par_iter()
        .map(|t| tile_backward(splats, &tiles, t, w, h, d_image, config))
        .collect();

    let mut screen = vec![SplatGrad::default(); splats.len()];
    for (t, grads) in per_tile.iter().enumerate() {
        for (&k, g) in tiles.lists[t].iter().zip(grads) {
            let acc = &mut screen[k as usize];
            for c in 0..3 {
                acc.color[c] += g.color[c];
                acc.conic[c] += g.conic[c];
            }
            acc.opacity += g.opacity;
            acc.mean[0] += g.mean[0];
            acc.mean[1] += g.mean[1];
        }
    }

    let mut out = GradientBuffers::zeros(scene.len());
    for (s, g) in splats.iter().zip(&screen) {
        let i = s.index;
        out.color[i] = Vector3::from(g.color);
        out.opacity[i] = g.opacity;
        let o = scene.opacities[i];
        out.opacity_logit[i] = g.opacity * o * (1.0 - o);
        let (dp, dv) = chain_to_3d(s, g, scene, camera);
        out.position[i] = dp;
        out.covariance[i] = dv;
    }
    Ok(out)
}

fn tile_backward(
    splats: &[Splat],
    tiles: &Tiles,
    t: usize,
    w: usize,
    h: usize,
    d_image: &[[f64; 3]],
    config: &RenderConfig,
) -> Vec<SplatGrad> {
    let list = &tiles.lists[t];
    let mut grads = vec![SplatGrad::default(); list.len()];
    if list.is_empty() {
        return grads;
    }
    let [x0, y0, x1, y1] = tiles.bounds(t, w, h);
    let mut contribs: Vec<Contribution> = Vec::new();
    for y in y0..y1 {
        for x in x0..x1 {
            let dc = d_image[y * w + x];
            if dc == [0.0; 3] {
                continue;
            }
            let (xi, yi) = (x as i64, y as i64);
            // Forward recomputation.
            contribs.clear();
            let mut tr = 1.0;
            for (slot, &k) in list.iter().enumerate() {
                let s = &splats[k as usize];
                let Some((alpha, g)) = splat_alpha(s, xi, yi, config.max_alpha) else { continue };
                if alpha <= 0.0 {
                    continue;
                }
                let next = tr * (1.0 - alpha);
                if next < config.min_transmittance {
                    break;
                }
                contribs.push(Contribution {
                    slot: slot as u32,
                    alpha,
                    g,
                    transmittance: tr,
                    clamped: s.opacity * g >= config.max_alpha,
                });
                tr = next;
            }
            // Back to front; `behind` is the color composited after the current splat.
            let mut behind = [
                tr * config.background[0],
                tr * config.background[1],
                tr * config.background[2],
            ];
            for c in contribs.iter().rev() {
                let s = &splats[list[c.slot as usize] as usize];
                let gr = &mut grads[c.slot as usize];
                let wgt = c.alpha * c.transmittance;
                let mut d_alpha = 0.0;
                for ch in 0..3 {
                    gr.color[ch] += dc[ch] * wgt;
                    d_alpha += dc[ch] * (c.transmittance * s.color[ch] - behind[ch] / (1.0 - c.alpha));
                    behind[ch] += s.color[ch] * wgt;
                }
                if c.clamped {
                    continue;
                }
                gr.opacity += d_alpha * c.g;
                // power = −½ δᵀ Q δ with δ = pixel − mean.
                let d_power = d_alpha * s.opacity * c.g;
                let (_, d) = s.kernel(xi, yi);
                let q = &s.conic;
                let qd = Vector2::new(q[(0, 0)] * d.x + q[(0, 1)] * d.y, q[(1, 0)] * d.x + q[(1, 1)] * d.y);
                gr.mean[0] += d_power * qd.x;
                gr.mean[1] += d_power * qd.y;
                gr.conic[0] += -0.5 * d_power * d.x * d.x;
                gr.conic[1] += -0.5 * d_power * d.x * d.y;
                gr.conic[2] += -0.5 * d_power * d.y * d.y;
            }
        }
    }
    grads
}

/// Screen-space partials → world position and 3D covariance.
fn chain_to_3d(s: &Splat, g: &SplatGrad, scene: &RenderableScene, camera: &Camera) -> (Vector3<f64>, Matrix3<f64>) {
    let q = &s.conic;
    let g_conic = Matrix2::new(g.conic[0], g.conic[1], g.conic[1], g.conic[2]);
    // Q = Σ⁻¹ ⇒ dL/dΣ = −Q · dL/dQ · Q.
    let g_cov = -(q * g_conic * q);

    let w = &camera.rotation;
    let pc = camera.world_to_camera(&scene.positions[s.index]);
    let (pj, clamped) = camera.jacobian_anchor(&pc);
    let j = camera.projection_jacobian(&pj);
    let m = w * scene.covariances[s.index] * w.transpose();

    let jt_g_j = j.transpose() * g_cov * j;
    let d_cov3 = w.transpose() * jt_g_j * w;
    let d_j = 2.0 * g_cov * j * m;

    let (fx, fy) = (camera.fx, camera.fy);
    let (x, y, z) = (pc.x, pc.y, pc.z);
    let (iz, iz2, iz3) = (1.0 / z, 1.0 / (z * z), 1.0 / (z * z * z));
    let gm = g.mean;
    let mut d_pc = Vector3::new(
        fx * iz * gm[0],
        fy * iz * gm[1],
        -fx * x * iz2 * gm[0] - fy * y * iz2 * gm[1],
    );
    // J = [[fx/z, 0, −fx·x/z²], [0, fy/z, −fy·y/z²]] at the anchor (x', y', z).
    let d_xj = d_j[(0, 2)] * (-fx * iz2);
    let d_yj = d_j[(1, 2)] * (-fy * iz2);
    d_pc.z += d_j[(0, 0)] * (-fx * iz2)
        + d_j[(0, 2)] * (2.0 * fx * pj.x * iz3)
        + d_j[(1, 1)] * (-fy * iz2)
        + d_j[(1, 2)] * (2.0 * fy * pj.y * iz3);
    // A clamped anchor coordinate is c·z, so its gradient flows to z instead.
    match clamped[0] {
        None => d_pc.x += d_xj,
        Some(c) => d_pc.z += d_xj * c,
    }
    match clamped[1] {
        None => d_pc.y += d_yj,
        Some(c) => d_pc.z += d_yj * c,
    }
    (w.transpose() * d_pc, d_cov3)
}

/// Chain a covariance gradient through `V = R(q)·diag(exp(2s))·R(q)ᵀ`.
/// Returns `(dL/dq, dL/ds)` for the raw (unnormalized) quaternion `[w, x, y, z]`.
pub fn covariance_grad_to_scale_rotation(
    rotation: &[f64; 4],
    log_scale: &Vector3<f64>,
    d_cov: &Matrix3<f64>,
) -> ([f64; 4], Vector3<f64>) {
    let g = (d_cov + d_cov.transpose()) * 0.5;
    let r = quat_to_matrix(rotation);
    let d2 = log_scale.map(|s| (2.0 * s).exp());
    let rgr = r.transpose() * g * r;
    let d_scale = Vector3::new(2.0 * d2.x * rgr[(0, 0)], 2.0 * d2.y * rgr[(1, 1)], 2.0 * d2.z * rgr[(2, 2)]);
    let d_r = 2.0 * g * r * Matrix3::from_diagonal(&d2);

    let qv = Vector4::from(*rotation);
    let norm = qv.norm();
    let u = qv / norm;
    let (qw, qx, qy, qz) = (u[0], u[1], u[2], u[3]);
    let dr_dw = Matrix3::new(0.0, -2.0 * qz, 2.0 * qy, 2.0 * qz, 0.0, -2.0 * qx, -2.0 * qy, 2.0 * qx, 0.0);
    let dr_dx = Matrix3::new(0.0, 2.0 * qy, 2.0 * qz, 2.0 * qy, -4.0 * qx, -2.0 * qw, 2.0 * qz, 2.0 * qw, -4.0 * qx);
    let dr_dy = Matrix3::new(-4.0 * qy, 2.0 * qx, 2.0 * qw, 2.0 * qx, 0.0, 2.0 * qz, -2.0 * qw, 2.0 * qz, -4.0 * qy);
    let dr_dz = Matrix3::new(-4.0 * qz, -2.0 * qw, 2.0 * qx, 2.0 * qw, -4.0 * qz, 2.0 * qy, 2.0 * qx, 2.0 * qy, 0.0);
    let du = Vector4::new(
        d_r.component_mul(&dr_dw).sum(),
        d_r.component_mul(&dr_dx).sum(),
        d_r.component_mul(&dr_dy).sum(),
        d_r.component_mul(&dr_dz).sum(),
    );
    // Through the normalization u = q/|q|.
    let dq = (du - u * u.dot(&du)) / norm;
    ([dq[0], dq[1], dq[2], dq[3]], d_scale)
}

/// Chain a covariance gradient through `V = (exp(s)·k)²·I`; `variance` is that diagonal value.
pub fn covariance_grad_to_isotropic_log_scale(variance: f64, d_cov: &Matrix3<f64>) -> f64 {
    2.0 * variance * d_cov.trace()
}

//! CPU Gaussian splatting: EWA projection, one global depth sort, and
//! front-to-back compositing over 16×16 pixel tiles, plus the analytic
//! backward pass used for fitting.

mod backward;
mod forward;
mod image;

pub use backward::{
    covariance_grad_to_isotropic_log_scale, covariance_grad_to_scale_rotation, render_backward,
    GradientBuffers,
};
pub use forward::{render, render_human_only, render_with_stats, RenderStats};
pub use image::Image;

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::align::Intrinsics;
use crate::error::{Error, Result};
use crate::scene::RenderableScene;

pub const TILE_SIZE: usize = 16;

/// Rasterization constants inherited from standard 3D Gaussian splatting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    /// Splat footprint half-width in standard deviations.
    pub truncation_sigma: f64,
    /// Per-splat alpha clamp.
    pub max_alpha: f64,
    /// Added to every projected covariance, in pixels².
    pub cov_dilation: f64,
    /// Compositing stops once transmittance would fall below this.
    pub min_transmittance: f64,
    pub background: [f64; 3],
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            truncation_sigma: 3.0,
            max_alpha: 0.99,
            cov_dilation: 0.3,
            min_transmittance: 1e-4,
            background: [0.0; 3],
        }
    }
}

/// Pinhole camera with world-to-camera extrinsics (x right, y down, z forward).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(with = "crate::io::row_major")]
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub width: usize,
    pub height: usize,
    #[serde(default = "default_near")]
    pub near: f64,
}

fn default_near() -> f64 {
    0.01
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid("camera focal lengths must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("camera image size must be at least 1×1"));
        }
        if !crate::math::is_rotation(&self.rotation, 1e-6) {
            return Err(Error::invalid("camera rotation is not a rotation"));
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`, with `up` the world up direction.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        focal: f64,
        width: usize,
        height: usize,
    ) -> Camera {
        let z = (target - eye).normalize();
        let x = z.cross(&up).normalize();
        let y = z.cross(&x);
        let rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        Camera {
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            translation: -(rotation * eye),
            rotation,
            width,
            height,
            near: default_near(),
        }
    }

    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
        }
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// Same view after moving the world by the rigid motion `(rotation, translation)`.
    pub fn transformed(&self, rotation: &Matrix3<f64>, translation: &Vector3<f64>) -> Camera {
        let r = self.rotation * rotation.transpose();
        Camera {
            rotation: r,
            translation: self.translation - r * translation,
            ..self.clone()
        }
    }

    /// Where the projection Jacobian is evaluated for a camera-space point: the
    /// lateral tangents are clamped to 1.3× the image's half-extent. Clamped
    /// axes report the tangent used, so the anchor coordinate is `c·z`.
    pub fn jacobian_anchor(&self, p: &Vector3<f64>) -> (Vector3<f64>, [Option<f64>; 2]) {
        let clamp = |t: f64, lo: f64, hi: f64| {
            if t < lo {
                Some(lo)
            } else if t > hi {
                Some(hi)
            } else {
                None
            }
        };
        let cx = clamp(p.x / p.z, -1.3 * self.cx / self.fx, 1.3 * (self.width as f64 - self.cx) / self.fx);
        let cy = clamp(p.y / p.z, -1.3 * self.cy / self.fy, 1.3 * (self.height as f64 - self.cy) / self.fy);
        let anchor = Vector3::new(cx.map_or(p.x, |c| c * p.z), cy.map_or(p.y, |c| c * p.z), p.z);
        (anchor, [cx, cy])
    }

    /// Perspective Jacobian of the pixel projection at a camera-space point.
    pub fn projection_jacobian(&self, p: &Vector3<f64>) -> Matrix2x3<f64> {
        let iz = 1.0 / p.z;
        let iz2 = iz * iz;
        Matrix2x3::new(
            self.fx * iz, 0.0, -self.fx * p.x * iz2,
            0.0, self.fy * iz, -self.fy * p.y * iz2,
        )
    }
}

/// One projected Gaussian.
#[derive(Clone, Debug, PartialEq)]
pub struct Splat {
    /// Index into the scene.
    pub index: usize,
    pub mean: Vector2<f64>,
    /// Dilated 2D covariance.
    pub cov: Matrix2<f64>,
    /// Inverse of `cov`.
    pub conic: Matrix2<f64>,
    pub depth: f64,
    pub color: Vector3<f64>,
    pub opacity: f64,
    /// Inclusive pixel range `[x0, y0, x1, y1]`; empty when `x0 > x1` or `y0 > y1`.
    pub bbox: [i64; 4],
}

impl Splat {
    pub fn touches_image(&self) -> bool {
        self.bbox[0] <= self.bbox[2] && self.bbox[1] <= self.bbox[3]
    }

    #[inline]
    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= self.bbox[0] && x <= self.bbox[2] && y >= self.bbox[1] && y <= self.bbox[3]
    }

    /// Kernel value `exp(−½ δᵀ Σ⁻¹ δ)` at the center of pixel `(x, y)`, with δ.
    #[inline]
    pub fn kernel(&self, x: i64, y: i64) -> (f64, Vector2<f64>) {
        let d = Vector2::new(x as f64 + 0.5 - self.mean.x, y as f64 + 0.5 - self.mean.y);
        let c = &self.conic;
        let power = -0.5 * (c[(0, 0)] * d.x * d.x + 2.0 * c[(0, 1)] * d.x * d.y + c[(1, 1)] * d.y * d.y);
        (power.exp(), d)
    }
}

#[derive(Clone, Debug, Default)]
pub struct Projection {
    /// Visible splats in scene order.
    pub splats: Vec<Splat>,
    pub culled: usize,
    /// Splats whose dilated covariance was not invertible.
    pub degenerate: usize,
}

/// EWA projection of every Gaussian: `cov2d = J·W·V·Wᵀ·Jᵀ + dilation·I`, with
/// `J` taken at [`Camera::jacobian_anchor`].
/// Gaussians at or in front of the near plane are culled.
pub fn project(scene: &RenderableScene, camera: &Camera, config: &RenderConfig) -> Projection {
    let results: Vec<Option<std::result::Result<Splat, ()>>> = (0..scene.len())
        .into_par_iter()
        .with_min_len(1024)
        .map(|i| project_one(scene, camera, config, i))
        .collect();
    let mut out = Projection::default();
    for r in results {
        match r {
            None => out.culled += 1,
            Some(Err(())) => out.degenerate += 1,
            Some(Ok(s)) => out.splats.push(s),
        }
    }
    out
}

fn project_one(
    scene: &RenderableScene,
    camera: &Camera,
    config: &RenderConfig,
    i: usize,
) -> Option<std::result::Result<Splat, ()>> {
    let pc = camera.world_to_camera(&scene.positions[i]);
    if !(pc.z > camera.near) {
        return None;
    }
    let (anchor, _) = camera.jacobian_anchor(&pc);
    let j = camera.projection_jacobian(&anchor);
    let m = camera.rotation * scene.covariances[i] * camera.rotation.transpose();
    let cov = j * m * j.transpose() + Matrix2::identity() * config.cov_dilation;
    let det = cov[(0, 0)] * cov[(1, 1)] - cov[(0, 1)] * cov[(1, 0)];
    if !(det > 0.0) || !det.is_finite() {
        return Some(Err(()));
    }
    let conic = Matrix2::new(cov[(1, 1)], -cov[(0, 1)], -cov[(1, 0)], cov[(0, 0)]) / det;
    let mean = Vector2::new(
        camera.fx * pc.x / pc.z + camera.cx,
        camera.fy * pc.y / pc.z + camera.cy,
    );
    let rx = config.truncation_sigma * cov[(0, 0)].sqrt();
    let ry = config.truncation_sigma * cov[(1, 1)].sqrt();
    // Pixel x covers centers at x + 0.5.
    let lo = |v: f64, n: usize| v.ceil().clamp(0.0, n as f64) as i64;
    let hi = |v: f64, n: usize| v.floor().clamp(-1.0, n as f64 - 1.0) as i64;
    let bbox = [
        lo(mean.x - rx - 0.5, camera.width),
        lo(mean.y - ry - 0.5, camera.height),
        hi(mean.x + rx - 0.5, camera.width),
        hi(mean.y + ry - 0.5, camera.height),
    ];
    Some(Ok(Splat {
        index: i,
        mean,
        cov,
        conic,
        depth: pc.z,
        color: scene.colors[i],
        opacity: scene.opacities[i],
        bbox,
    }))
}

/// Ascending depth sort; equal depths keep scene order.
pub fn sort_by_depth(splats: &mut [Splat]) {
    splats.sort_unstable_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));
}

/// Per-tile lists of positions into the sorted splat slice.
pub struct Tiles {
    pub cols: usize,
    pub rows: usize,
    pub lists: Vec<Vec<u32>>,
}

impl Tiles {
    pub fn build(splats: &[Splat], width: usize, height: usize) -> Tiles {
        let cols = width.div_ceil(TILE_SIZE);
        let rows = height.div_ceil(TILE_SIZE);
        let mut lists = vec![Vec::new(); cols * rows];
        for (k, s) in splats.iter().enumerate() {
            if !s.touches_image() {
                continue;
            }
            let (tx0, ty0) = (s.bbox[0] as usize / TILE_SIZE, s.bbox[1] as usize / TILE_SIZE);
            let (tx1, ty1) = (s.bbox[2] as usize / TILE_SIZE, s.bbox[3] as usize / TILE_SIZE);
            for ty in ty0..=ty1 {
                for tx in tx0..=tx1 {
                    lists[ty * cols + tx].push(k as u32);
                }
            }
        }
        Tiles { cols, rows, lists }
    }

    /// Pixel bounds `[x0, y0, x1, y1)` of tile `t`.
    pub fn bounds(&self, t: usize, width: usize, height: usize) -> [usize; 4] {
        let (tx, ty) = (t % self.cols, t / self.cols);
        [
            tx * TILE_SIZE,
            ty * TILE_SIZE,
            ((tx + 1) * TILE_SIZE).min(width),
            ((ty + 1) * TILE_SIZE).min(height),
        ]
    }

    pub fn count(&self) -> usize {
        self.cols * self.rows
    }
}

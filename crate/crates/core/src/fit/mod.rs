//! Joint fitting of background and human Gaussians to posed training frames.

mod config;
mod frames;
mod loss;
pub mod ssim;

pub use config::{FitConfig, LearningRates, FIT_CONFIG_VERSION};
pub use frames::{load_frames, save_frames, Frame, FrameEntry, FramesManifest, FRAMES_MANIFEST, FRAMES_SCHEMA_VERSION};
pub use loss::{compute_loss, crop, mask_bbox, LossBreakdown};

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bundle::SceneBundle;
use crate::error::{Error, Result};
use crate::math::{rotation_block, transform_point};
use crate::render::{
    covariance_grad_to_isotropic_log_scale, covariance_grad_to_scale_rotation, render, render_backward,
    render_human_only, GradientBuffers,
};
use crate::scene::{merge, Origin, RenderableScene};
use loss::loss_and_gradients;

/// Adam state for one parameter group.
#[derive(Clone, Debug, Default)]
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    c1: f64,
    c2: f64,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    fn begin(&mut self, len: usize) {
        if self.m.len() != len {
            self.m = vec![0.0; len];
            self.v = vec![0.0; len];
        }
        self.t += 1;
        self.c1 = 1.0 - BETA1.powi(self.t);
        self.c2 = 1.0 - BETA2.powi(self.t);
    }

    #[inline]
    fn update(&mut self, i: usize, param: &mut f64, grad: f64, lr: f64) {
        self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * grad;
        self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * grad * grad;
        let mh = self.m[i] / self.c1;
        let vh = self.v[i] / self.c2;
        *param -= lr * mh / (vh.sqrt() + ADAM_EPS);
    }

    fn step_scalars(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        if lr == 0.0 {
            return;
        }
        self.begin(params.len());
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            self.update(i, p, *g, lr);
        }
    }

    fn step_vec3(&mut self, params: &mut [Vector3<f64>], grads: &[Vector3<f64>], lr: f64) {
        if lr == 0.0 {
            return;
        }
        self.begin(params.len() * 3);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            for k in 0..3 {
                self.update(3 * i + k, &mut p[k], g[k], lr);
            }
        }
    }

    fn step_quat(&mut self, params: &mut [[f64; 4]], grads: &[[f64; 4]], lr: f64) {
        if lr == 0.0 {
            return;
        }
        self.begin(params.len() * 4);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            for k in 0..4 {
                self.update(4 * i + k, &mut p[k], g[k], lr);
            }
        }
    }
}

/// Euclidean projection onto the probability simplex.
pub fn project_to_simplex(v: &mut [f64]) {
    if v.is_empty() {
        return;
    }
    let mut u: Vec<f64> = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (k, &x) in u.iter().enumerate() {
        cum += x;
        let t = (cum - 1.0) / (k + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
}

/// Gradients for every trainable group, indexed like the bundle.
#[derive(Clone, Debug, Default)]
struct ParamGrads {
    bg_position: Vec<Vector3<f64>>,
    bg_rotation: Vec<[f64; 4]>,
    bg_scale: Vec<Vector3<f64>>,
    bg_opacity: Vec<f64>,
    bg_color: Vec<Vector3<f64>>,
    h_offset: Vec<Vector3<f64>>,
    h_color: Vec<Vector3<f64>>,
    h_scale: Vec<f64>,
    h_opacity: Vec<f64>,
    /// Flattened in row order of `lbs_weights`.
    h_lbs: Vec<f64>,
}

impl ParamGrads {
    fn check_finite(&self) -> Result<()> {
        fn scan<'a>(group: &'static str, it: impl Iterator<Item = (usize, &'a f64)>) -> Result<()> {
            let mut count = 0;
            let mut first = None;
            for (i, v) in it {
                if !v.is_finite() {
                    count += 1;
                    first.get_or_insert(i);
                }
            }
            match first {
                None => Ok(()),
                Some(first) => {
                    log::error!("non-finite gradient in `{group}`: {count} entries, first at parameter {first}");
                    Err(Error::NonFiniteGradient { group, count, first })
                }
            }
        }
        fn v3(v: &[Vector3<f64>]) -> impl Iterator<Item = (usize, &f64)> {
            v.iter().enumerate().flat_map(|(i, x)| x.iter().map(move |c| (i, c)))
        }
        scan("background_position", v3(&self.bg_position))?;
        scan(
            "background_rotation",
            self.bg_rotation.iter().enumerate().flat_map(|(i, q)| q.iter().map(move |c| (i, c))),
        )?;
        scan("background_scale", v3(&self.bg_scale))?;
        scan("background_opacity", self.bg_opacity.iter().enumerate())?;
        scan("background_color", v3(&self.bg_color))?;
        scan("human_offset", v3(&self.h_offset))?;
        scan("human_color", v3(&self.h_color))?;
        scan("human_scale", self.h_scale.iter().enumerate())?;
        scan("human_opacity", self.h_opacity.iter().enumerate())?;
        scan("human_lbs_weights", self.h_lbs.iter().enumerate())
    }
}

#[derive(Clone, Debug, Default)]
struct AdamGroups {
    bg_position: Adam,
    bg_rotation: Adam,
    bg_scale: Adam,
    bg_opacity: Adam,
    bg_color: Adam,
    h_offset: Adam,
    h_color: Adam,
    h_scale: Adam,
    h_opacity: Adam,
    h_lbs: Adam,
}

/// Outcome of [`optimize`].
#[derive(Clone, Debug)]
pub struct FitResult {
    pub bundle: SceneBundle,
    /// Loss of the frame used at each step, before that step's update.
    pub history: Vec<LossBreakdown>,
    /// Mean total loss over all frames before and after fitting.
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Stepwise optimizer; [`optimize`] drives it to completion.
pub struct Fitter<'a> {
    bundle: SceneBundle,
    frames: &'a [Frame],
    config: FitConfig,
    adam: AdamGroups,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    iteration: usize,
}

impl<'a> Fitter<'a> {
    pub fn new(bundle: SceneBundle, frames: &'a [Frame], config: FitConfig) -> Result<Self> {
        config.validate()?;
        bundle.validate()?;
        if frames.is_empty() {
            return Err(Error::invalid("fitting needs at least one frame"));
        }
        for (i, f) in frames.iter().enumerate() {
            f.validate().map_err(|e| Error::invalid(format!("frame {i}: {e}")))?;
        }
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Fitter {
            bundle,
            frames,
            config,
            adam: AdamGroups::default(),
            rng,
            order: Vec::new(),
            cursor: 0,
            iteration: 0,
        })
    }

    pub fn bundle(&self) -> &SceneBundle {
        &self.bundle
    }

    pub fn into_bundle(self) -> SceneBundle {
        self.bundle
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    fn next_frame(&mut self) -> usize {
        if self.cursor == self.order.len() {
            self.order = (0..self.frames.len()).collect();
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        self.cursor += 1;
        self.order[self.cursor - 1]
    }

    /// Mean total loss over every frame at the current parameters.
    pub fn evaluate(&self) -> Result<f64> {
        let bg = self.bundle.background_scene();
        let mut sum = 0.0;
        for f in self.frames {
            sum += self.frame_loss(&bg, f)?.total;
        }
        Ok(sum / self.frames.len() as f64)
    }

    fn frame_loss(&self, bg: &RenderableScene, frame: &Frame) -> Result<LossBreakdown> {
        let posed = self.bundle.pose(&frame.pose)?;
        let scene = merge(bg, &posed);
        let img = render(&scene, &frame.camera, &self.bundle.render)?;
        let (human_img, _) = render_human_only(&scene, &frame.camera, &self.bundle.render)?;
        compute_loss(&img, &human_img, frame, &self.bundle.human, &self.config)
    }

    /// One update on the next frame of the shuffled epoch. Returns that frame's
    /// loss before the update.
    pub fn step(&mut self) -> Result<LossBreakdown> {
        let fi = self.next_frame();
        let frame = &self.frames[fi];
        let b = &self.bundle;
        let cfg = &b.render;
        let posed = b.pose(&frame.pose)?;
        let scene = merge(&b.background_scene(), &posed);
        let nb = b.background.len();
        let nh = b.human.len();

        let img = render(&scene, &frame.camera, cfg)?;
        let human_cfg = crate::render::RenderConfig { background: [0.0; 3], ..cfg.clone() };
        let human_scene = scene.filtered(Origin::Human);
        let (human_img, _) = render_human_only(&scene, &frame.camera, cfg)?;
        let (loss, lg) = loss_and_gradients(&img, &human_img, frame, &b.human, &self.config)?;

        let full = render_backward(&scene, &frame.camera, cfg, &lg.image)?;
        let human_only = if lg.human_image.iter().any(|p| p.iter().any(|&v| v != 0.0)) {
            render_backward(&human_scene, &frame.camera, &human_cfg, &lg.human_image)?
        } else {
            GradientBuffers::zeros(nh)
        };

        let mut g = ParamGrads::default();
        let bg = &b.background;
        for i in 0..nb {
            let c = scene.colors[i];
            g.bg_color.push(full.color[i].component_mul(&c.map(|v| v * (1.0 - v))));
            g.bg_opacity.push(full.opacity_logit[i]);
            g.bg_position.push(full.position[i]);
            let (dq, ds) = covariance_grad_to_scale_rotation(&bg.rotations[i], &bg.log_scales[i], &full.covariance[i]);
            g.bg_rotation.push(dq);
            g.bg_scale.push(ds);
        }

        let h = &b.human;
        let s = posed.alignment.scale;
        let ra = posed.alignment.rotation;
        let canonical = h.canonical_positions();
        for j in 0..nh {
            let k = nb + j;
            let c = scene.colors[k];
            let dc = full.color[k] + human_only.color[j];
            g.h_color.push(dc.component_mul(&c.map(|v| v * (1.0 - v))) + lg.color_logits[j]);
            g.h_opacity.push(full.opacity_logit[k] + human_only.opacity_logit[j] + lg.opacity_logits[j]);

            let gp = full.position[k] + human_only.position[j];
            let world_grad = ra.transpose() * gp * s;
            let blend = rotation_block(&posed.blended[j]);
            g.h_offset.push(blend.transpose() * world_grad + lg.offsets[j]);

            // Weights are renormalized before blending, so each partial is taken
            // relative to the blended point.
            let x = canonical[j];
            let raw_sum = h.lbs_weights[j].sum();
            let blended = transform_point(&posed.blended[j], &x);
            for &(joint, _) in h.lbs_weights[j].iter() {
                let tj = transform_point(&posed.joint_transforms[joint], &x);
                g.h_lbs.push(world_grad.dot(&(tj - blended)) / raw_sum);
            }

            let dv = full.covariance[k] + human_only.covariance[j];
            let var = scene.covariances[k][(0, 0)];
            g.h_scale.push(covariance_grad_to_isotropic_log_scale(var, &dv) + lg.log_scales[j]);
        }
        g.check_finite()?;

        let progress = self.iteration as f64 / self.config.iterations.saturating_sub(1).max(1) as f64;
        let lr = &self.config.learning_rates.scaled(self.config.lr_final_scale.powf(progress.min(1.0)));
        let a = &mut self.adam;
        let b = &mut self.bundle;
        a.bg_position.step_vec3(&mut b.background.positions, &g.bg_position, lr.background_position);
        a.bg_rotation.step_quat(&mut b.background.rotations, &g.bg_rotation, lr.background_rotation);
        a.bg_scale.step_vec3(&mut b.background.log_scales, &g.bg_scale, lr.background_scale);
        a.bg_opacity.step_scalars(&mut b.background.opacity_logits, &g.bg_opacity, lr.background_opacity);
        a.bg_color.step_vec3(&mut b.background.color_logits, &g.bg_color, lr.background_color);
        a.h_offset.step_vec3(&mut b.human.offsets, &g.h_offset, lr.human_offset);
        a.h_color.step_vec3(&mut b.human.color_logits, &g.h_color, lr.human_color);
        a.h_scale.step_scalars(&mut b.human.log_scales, &g.h_scale, lr.human_scale);
        a.h_opacity.step_scalars(&mut b.human.opacity_logits, &g.h_opacity, lr.human_opacity);
        if lr.human_lbs_weights > 0.0 {
            a.h_lbs.begin(g.h_lbs.len());
            let mut flat = 0;
            for row in &mut b.human.lbs_weights {
                let mut vals: Vec<f64> = row.iter().map(|&(_, w)| w).collect();
                for v in vals.iter_mut() {
                    a.h_lbs.update(flat, v, g.h_lbs[flat], lr.human_lbs_weights);
                    flat += 1;
                }
                project_to_simplex(&mut vals);
                for (entry, v) in row.0.iter_mut().zip(vals) {
                    entry.1 = v;
                }
            }
        }
        self.iteration += 1;
        Ok(loss)
    }

    /// Normalizes stored quaternions; called once fitting ends.
    fn finish(&mut self) {
        self.bundle.background.normalize_rotations();
    }
}

pub fn optimize(bundle: SceneBundle, frames: &[Frame], config: &FitConfig) -> Result<FitResult> {
    optimize_with(bundle, frames, config, |_, _, _| Ok(()))
}

/// Like [`optimize`], calling `on_step(iteration, loss, bundle)` after every update.
pub fn optimize_with(
    bundle: SceneBundle,
    frames: &[Frame],
    config: &FitConfig,
    mut on_step: impl FnMut(usize, &LossBreakdown, &SceneBundle) -> Result<()>,
) -> Result<FitResult> {
    let mut fitter = Fitter::new(bundle, frames, config.clone())?;
    let initial_loss = fitter.evaluate()?;
    let mut history = Vec::with_capacity(config.iterations);
    for _ in 0..config.iterations {
        let loss = fitter.step()?;
        history.push(loss);
        on_step(fitter.iteration(), &loss, fitter.bundle())?;
    }
    if config.iterations > 0 {
        fitter.finish();
    }
    let final_loss = if config.iterations == 0 { initial_loss } else { fitter.evaluate()? };
    Ok(FitResult {
        bundle: fitter.into_bundle(),
        history,
        initial_loss,
        final_loss,
    })
}

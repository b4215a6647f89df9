//! Decoupled background and human Gaussian sets and the forward pass that
//! turns them into one world-space renderable scene.
//!
//! Background Gaussians are free and anisotropic. Human Gaussians live on the
//! valid texels of a position texture, are isotropic, and reach world space
//! through the canonical-pose skinning chain and the scene alignment.

use nalgebra::{Matrix3, Matrix4, Vector3};
use rayon::prelude::*;

use crate::align::SceneAlignment;
use crate::body::{pose_from_canonical, DaPoseConfig, Pose, SkinWeights, SkinnedMesh};
use crate::error::{Error, Result};
use crate::math::{logit, quat_to_matrix, sigmoid};
use crate::texture::PositionTexture;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Origin {
    Background,
    Human,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BackgroundGaussians {
    pub positions: Vec<Vector3<f64>>,
    /// Quaternions as `[w, x, y, z]`, normalized on use.
    pub rotations: Vec<[f64; 4]>,
    pub log_scales: Vec<Vector3<f64>>,
    pub opacity_logits: Vec<f64>,
    /// Sigmoid-activated to RGB in [0,1].
    pub color_logits: Vec<Vector3<f64>>,
}

impl BackgroundGaussians {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn push(&mut self, position: Vector3<f64>, rotation: [f64; 4], log_scale: Vector3<f64>, opacity: f64, color: Vector3<f64>) {
        self.positions.push(position);
        self.rotations.push(rotation);
        self.log_scales.push(log_scale);
        self.opacity_logits.push(logit(opacity));
        self.color_logits.push(color.map(logit));
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.positions.len();
        if [self.rotations.len(), self.log_scales.len(), self.opacity_logits.len(), self.color_logits.len()]
            .iter()
            .any(|&l| l != n)
        {
            return Err(Error::invalid("background attribute arrays differ in length"));
        }
        if let Some(i) = self.rotations.iter().position(|q| q.iter().map(|c| c * c).sum::<f64>() < 1e-24) {
            return Err(Error::invalid(format!("background Gaussian {i} has a zero quaternion")));
        }
        Ok(())
    }

    /// Normalize every quaternion in place.
    pub fn normalize_rotations(&mut self) {
        for q in &mut self.rotations {
            let n = q.iter().map(|c| c * c).sum::<f64>().sqrt();
            if n > 0.0 {
                q.iter_mut().for_each(|c| *c /= n);
            }
        }
    }

    pub fn colors(&self) -> Vec<Vector3<f64>> {
        self.color_logits.iter().map(|c| c.map(sigmoid)).collect()
    }

    pub fn opacities(&self) -> Vec<f64> {
        self.opacity_logits.iter().map(|&o| sigmoid(o)).collect()
    }

    pub fn covariances(&self) -> Vec<Matrix3<f64>> {
        self.rotations
            .iter()
            .zip(&self.log_scales)
            .map(|(q, s)| build_covariance(q, s))
            .collect()
    }
}

/// Texel-aligned human attributes.
///
/// Scale is stored as a residual over a fixed per-texel base derived from the
/// texel footprint, so the scale regularizer pulls toward the baked spacing.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct HumanGaussians {
    pub texture_width: usize,
    pub texture_height: usize,
    pub texel_indices: Vec<usize>,
    pub rest_positions: Vec<Vector3<f64>>,
    pub rest_log_scales: Vec<f64>,
    pub offsets: Vec<Vector3<f64>>,
    pub color_logits: Vec<Vector3<f64>>,
    pub log_scales: Vec<f64>,
    pub opacity_logits: Vec<f64>,
    pub lbs_weights: Vec<SkinWeights>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HumanInit {
    pub opacity: f64,
    pub color: [f64; 3],
    /// Multiplier on the texel spacing for the base scale.
    pub scale_factor: f64,
}

impl Default for HumanInit {
    fn default() -> Self {
        HumanInit {
            opacity: 0.5,
            color: [0.5; 3],
            scale_factor: 0.75,
        }
    }
}

impl HumanGaussians {
    pub fn from_texture(texture: &PositionTexture, mesh: &SkinnedMesh, init: &HumanInit) -> Result<Self> {
        let points = texture.extract_points()?;
        let spacing = texture.texel_spacing(mesh);
        let n = points.len();
        let color = Vector3::from(init.color).map(logit);
        Ok(HumanGaussians {
            texture_width: texture.width(),
            texture_height: texture.height(),
            texel_indices: points.iter().map(|p| p.texel_index).collect(),
            rest_positions: points.iter().map(|p| p.position).collect(),
            rest_log_scales: spacing
                .iter()
                .map(|s| (s * init.scale_factor).max(1e-6).ln())
                .collect(),
            offsets: vec![Vector3::zeros(); n],
            color_logits: vec![color; n],
            log_scales: vec![0.0; n],
            opacity_logits: vec![logit(init.opacity); n],
            lbs_weights: points.into_iter().map(|p| p.weights).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.rest_positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rest_positions.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.rest_positions.len();
        let lens = [
            self.texel_indices.len(),
            self.rest_log_scales.len(),
            self.offsets.len(),
            self.color_logits.len(),
            self.log_scales.len(),
            self.opacity_logits.len(),
            self.lbs_weights.len(),
        ];
        if lens.iter().any(|&l| l != n) {
            return Err(Error::invalid(format!("human attribute arrays differ in length ({n} vs {lens:?})")));
        }
        Ok(())
    }

    /// Checks that these attributes belong to `texture`.
    pub fn check_texture(&self, texture: &PositionTexture) -> Result<()> {
        self.validate()?;
        if texture.width() != self.texture_width || texture.height() != self.texture_height {
            return Err(Error::invalid(format!(
                "human attributes are for a {}x{} texture, got {}x{}",
                self.texture_width,
                self.texture_height,
                texture.width(),
                texture.height()
            )));
        }
        if texture.valid_count() != self.len() {
            return Err(Error::invalid(format!(
                "human has {} texels, texture has {} valid texels",
                self.len(),
                texture.valid_count()
            )));
        }
        if !texture.valid_texels().map(|(i, _)| i).eq(self.texel_indices.iter().copied()) {
            return Err(Error::invalid("human texel indices do not match the texture"));
        }
        Ok(())
    }

    /// Canonical positions `rest + Δx`.
    pub fn canonical_positions(&self) -> Vec<Vector3<f64>> {
        self.rest_positions.iter().zip(&self.offsets).map(|(r, d)| r + d).collect()
    }

    pub fn effective_log_scale(&self, i: usize) -> f64 {
        self.rest_log_scales[i] + self.log_scales[i]
    }
}

/// `R · diag(exp(2·log_scale)) · Rᵀ`.
pub fn build_covariance(rotation: &[f64; 4], log_scale: &Vector3<f64>) -> Matrix3<f64> {
    let r = quat_to_matrix(rotation);
    let d = Matrix3::from_diagonal(&log_scale.map(|s| (2.0 * s).exp()));
    r * d * r.transpose()
}

/// World-space human Gaussians for one pose, plus what backpropagation needs.
#[derive(Clone, Debug)]
pub struct PosedHuman {
    pub positions: Vec<Vector3<f64>>,
    pub covariances: Vec<Matrix3<f64>>,
    pub opacities: Vec<f64>,
    pub colors: Vec<Vector3<f64>>,
    /// Per-Gaussian blended skinning transform (before alignment).
    pub blended: Vec<Matrix4<f64>>,
    /// Per-joint composite canonical→posed transforms.
    pub joint_transforms: Vec<Matrix4<f64>>,
    /// Weight rows after renormalization.
    pub weights: Vec<SkinWeights>,
    pub alignment: SceneAlignment,
}

pub fn pose_human(
    human: &HumanGaussians,
    mesh: &SkinnedMesh,
    pose: &Pose,
    alignment: &SceneAlignment,
    da_pose: &DaPoseConfig,
) -> Result<PosedHuman> {
    human.validate()?;
    alignment.validate()?;
    let transforms = pose_from_canonical(mesh, pose, da_pose)?;
    let m = transforms.len();
    let weights = human
        .lbs_weights
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let s = w.sum();
            if !(s > 0.0) || w.iter().any(|&(j, x)| j >= m || x < 0.0) {
                return Err(Error::invalid(format!("human texel {i} has invalid skinning weights")));
            }
            Ok(SkinWeights(w.iter().map(|&(j, x)| (j, x / s)).collect()))
        })
        .collect::<Result<Vec<_>>>()?;
    let canonical = human.canonical_positions();
    let (blended, positions): (Vec<Matrix4<f64>>, Vec<Vector3<f64>>) = canonical
        .par_iter()
        .zip(weights.par_iter())
        .map(|(x, w)| {
            let b = transforms.blend(w);
            let local = b.fixed_view::<3, 3>(0, 0) * x + b.fixed_view::<3, 1>(0, 3);
            (b, alignment.apply_point(&local))
        })
        .unzip();
    let covariances = (0..human.len())
        .map(|i| {
            let sigma = human.effective_log_scale(i).exp() * alignment.scale;
            Matrix3::identity() * (sigma * sigma)
        })
        .collect();
    Ok(PosedHuman {
        positions,
        covariances,
        opacities: human.opacity_logits.iter().map(|&o| sigmoid(o)).collect(),
        colors: human.color_logits.iter().map(|c| c.map(sigmoid)).collect(),
        blended,
        joint_transforms: transforms.0,
        weights,
        alignment: *alignment,
    })
}

/// Flat world-space Gaussians ready for projection.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RenderableScene {
    pub positions: Vec<Vector3<f64>>,
    pub covariances: Vec<Matrix3<f64>>,
    pub opacities: Vec<f64>,
    pub colors: Vec<Vector3<f64>>,
    pub origins: Vec<Origin>,
}

impl RenderableScene {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn from_background(background: &BackgroundGaussians) -> Self {
        RenderableScene {
            positions: background.positions.clone(),
            covariances: background.covariances(),
            opacities: background.opacities(),
            colors: background.colors(),
            origins: vec![Origin::Background; background.len()],
        }
    }

    pub fn push(&mut self, position: Vector3<f64>, covariance: Matrix3<f64>, opacity: f64, color: Vector3<f64>, origin: Origin) {
        self.positions.push(position);
        self.covariances.push(covariance);
        self.opacities.push(opacity);
        self.colors.push(color);
        self.origins.push(origin);
    }

    /// Indices of Gaussians with the given origin, in scene order.
    pub fn indices_of(&self, origin: Origin) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.origins[i] == origin).collect()
    }

    /// Only the Gaussians with the given origin.
    pub fn filtered(&self, origin: Origin) -> RenderableScene {
        let mut out = RenderableScene::default();
        for i in self.indices_of(origin) {
            out.push(self.positions[i], self.covariances[i], self.opacities[i], self.colors[i], origin);
        }
        out
    }

    /// Applies a rigid motion to every Gaussian.
    pub fn transformed(&self, rotation: &Matrix3<f64>, translation: &Vector3<f64>) -> RenderableScene {
        RenderableScene {
            positions: self.positions.iter().map(|p| rotation * p + translation).collect(),
            covariances: self.covariances.iter().map(|v| rotation * v * rotation.transpose()).collect(),
            opacities: self.opacities.clone(),
            colors: self.colors.clone(),
            origins: self.origins.clone(),
        }
    }
}

/// Background first, then the posed human; origin tags are preserved.
pub fn merge(background: &RenderableScene, human: &PosedHuman) -> RenderableScene {
    let mut scene = background.clone();
    scene.positions.extend_from_slice(&human.positions);
    scene.covariances.extend_from_slice(&human.covariances);
    scene.opacities.extend_from_slice(&human.opacities);
    scene.colors.extend_from_slice(&human.colors);
    scene.origins.extend(std::iter::repeat_n(Origin::Human, human.positions.len()));
    scene
}

//! A fitted scene on disk: background Gaussians, human attributes, the skinned
//! mesh they are bound to, and the body-to-scene alignment.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::align::SceneAlignment;
use crate::body::{DaPoseConfig, Pose, SkinnedMesh};
use crate::error::{Error, Result};
use crate::io::{ply, read_json, write_json};
use crate::render::{render, Camera, Image, RenderConfig};
use crate::scene::{merge, pose_human, BackgroundGaussians, HumanGaussians, PosedHuman, RenderableScene};
use crate::texture::PositionTexture;

pub const BUNDLE_SCHEMA_VERSION: u32 = 1;
pub const BUNDLE_MANIFEST: &str = "bundle.json";

#[derive(Clone, Debug)]
pub struct SceneBundle {
    pub mesh: SkinnedMesh,
    pub background: BackgroundGaussians,
    pub human: HumanGaussians,
    pub texture: Option<PositionTexture>,
    pub alignment: SceneAlignment,
    pub da_pose: DaPoseConfig,
    pub render: RenderConfig,
}

/// `bundle.json`; file entries are relative to the bundle directory.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BundleManifest {
    pub version: u32,
    pub mesh: String,
    pub background: String,
    pub human: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub texture: Option<String>,
    pub alignment: SceneAlignment,
    #[serde(default)]
    pub da_pose: DaPoseConfig,
    #[serde(default)]
    pub render: RenderConfig,
}

impl SceneBundle {
    pub fn validate(&self) -> Result<()> {
        self.background.validate()?;
        self.human.validate()?;
        self.alignment.validate()?;
        let m = self.mesh.joint_count();
        if let Some((i, _)) = self
            .human
            .lbs_weights
            .iter()
            .enumerate()
            .find(|(_, w)| w.iter().any(|&(j, _)| j >= m))
        {
            return Err(Error::invalid(format!("human texel {i} references a joint outside the {m}-joint skeleton")));
        }
        if let Some(tex) = &self.texture {
            self.human.check_texture(tex)?;
        }
        Ok(())
    }

    pub fn rest_pose(&self) -> Pose {
        Pose::zero(self.mesh.joint_count())
    }

    pub fn background_scene(&self) -> RenderableScene {
        RenderableScene::from_background(&self.background)
    }

    pub fn pose(&self, pose: &Pose) -> Result<PosedHuman> {
        pose_human(&self.human, &self.mesh, pose, &self.alignment, &self.da_pose)
    }

    /// Background plus the human at `pose`, ready to render.
    pub fn scene_at(&self, pose: &Pose) -> Result<RenderableScene> {
        Ok(merge(&self.background_scene(), &self.pose(pose)?))
    }

    pub fn render(&self, pose: &Pose, camera: &Camera) -> Result<Image> {
        render(&self.scene_at(pose)?, camera, &self.render)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.mesh.save_json(dir.join("mesh.json"))?;
        ply::write_background(dir.join("background.ply"), &self.background)?;
        self.human.save(dir.join("human.bin"))?;
        if let Some(tex) = &self.texture {
            tex.save(dir.join("body.ptex"))?;
        }
        let manifest = BundleManifest {
            version: BUNDLE_SCHEMA_VERSION,
            mesh: "mesh.json".into(),
            background: "background.ply".into(),
            human: "human.bin".into(),
            texture: self.texture.as_ref().map(|_| "body.ptex".into()),
            alignment: self.alignment,
            da_pose: self.da_pose.clone(),
            render: self.render.clone(),
        };
        write_json(dir.join(BUNDLE_MANIFEST), &manifest)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest: BundleManifest = read_json(dir.join(BUNDLE_MANIFEST))?;
        if manifest.version != BUNDLE_SCHEMA_VERSION {
            return Err(Error::format(
                "bundle",
                format!("unsupported version {} (expected {BUNDLE_SCHEMA_VERSION})", manifest.version),
            ));
        }
        let bundle = SceneBundle {
            mesh: SkinnedMesh::load_json(dir.join(&manifest.mesh))?,
            background: ply::read_background(dir.join(&manifest.background))?,
            human: HumanGaussians::load(dir.join(&manifest.human))?,
            texture: manifest.texture.as_ref().map(|t| PositionTexture::load(dir.join(t))).transpose()?,
            alignment: manifest.alignment,
            da_pose: manifest.da_pose,
            render: manifest.render,
        };
        bundle.validate()?;
        Ok(bundle)
    }
}

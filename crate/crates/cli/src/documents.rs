//! Versioned JSON documents read and written by the CLI and the service.

use std::path::Path;

use anyhow::{bail, Context};
use nalgebra::{Vector2, Vector3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use skinsplat::session::NamedPose;
use skinsplat::{Camera, GroundPlane, MotionClip, Pose, PoseUpdate, SceneAlignment};

pub const DOCUMENT_VERSION: u32 = 1;

fn version_one() -> u32 {
    DOCUMENT_VERSION
}

/// A document body with a `version` field alongside its own fields. The
/// version may be omitted and then reads as 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Versioned<T> {
    #[serde(default = "version_one")]
    pub version: u32,
    #[serde(flatten)]
    pub body: T,
}

impl<T> Versioned<T> {
    pub fn new(body: T) -> Self {
        Versioned { version: DOCUMENT_VERSION, body }
    }

    pub fn into_checked(self, what: &str) -> anyhow::Result<T> {
        if self.version != DOCUMENT_VERSION {
            bail!("{what}: unsupported version {} (expected {DOCUMENT_VERSION})", self.version);
        }
        Ok(self.body)
    }
}

pub fn parse<T: DeserializeOwned>(bytes: &[u8], what: &str) -> anyhow::Result<T> {
    let doc: Versioned<T> = serde_json::from_slice(bytes).with_context(|| format!("parsing {what}"))?;
    doc.into_checked(what)
}

pub fn read<T: DeserializeOwned>(path: &Path, what: &str) -> anyhow::Result<T> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {what} from {}", path.display()))?;
    parse(&bytes, what).with_context(|| path.display().to_string())
}

pub fn write<T: Serialize>(path: &Path, body: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(&Versioned::new(body))?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Body-space joint positions, one `[x, y, z]` per joint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Joints3d {
    pub joints: Vec<[f64; 3]>,
}

impl Joints3d {
    pub fn points(&self) -> Vec<Vector3<f64>> {
        self.joints.iter().map(|p| Vector3::from(*p)).collect()
    }
}

/// Pixel keypoints `[u, v]` in the same order as the 3D joints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Joints2d {
    pub pixels: Vec<[f64; 2]>,
}

impl Joints2d {
    pub fn points(&self) -> Vec<Vector2<f64>> {
        self.pixels.iter().map(|p| Vector2::from(*p)).collect()
    }
}

/// Output of `align`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub alignment: SceneAlignment,
    pub plane: GroundPlane,
    /// Pixel RMS reprojection error of the keypoint fit.
    pub pnp_rms: f64,
    pub pnp_iterations: usize,
}

/// Either a complete pose or a partial named update applied to the rest pose.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PoseInput {
    Full(Pose),
    Named(PoseUpdate),
}

/// `POST /clip` body.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipRequest {
    /// Output subdirectory under the service's clip root.
    pub name: String,
    pub clip: MotionClip,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipResponse {
    pub directory: String,
    pub frames: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub joints: Vec<String>,
    pub width: usize,
    pub height: usize,
    pub texels: usize,
    pub background_gaussians: usize,
    pub camera: Camera,
}

pub type PoseResponse = NamedPose;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

/// Clip names become directory names: ASCII letters, digits, `-` and `_` only.
pub fn check_clip_name(name: &str) -> anyhow::Result<()> {
    let ok = !name.is_empty()
        && name.len() <= 64
        && name.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_');
    if !ok {
        bail!("clip name `{name}` must be 1-64 characters of [A-Za-z0-9_-]");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_version_reads_as_one() {
        let j: Joints3d = parse(br#"{"joints": [[0, 1, 2]]}"#, "joints").unwrap();
        assert_eq!(j.joints, vec![[0.0, 1.0, 2.0]]);
        assert!(parse::<Joints3d>(br#"{"version": 2, "joints": []}"#, "joints").is_err());
    }

    #[test]
    fn written_documents_carry_the_version() {
        let text = serde_json::to_string(&Versioned::new(Joints2d { pixels: vec![[1.0, 2.0]] })).unwrap();
        assert_eq!(text, r#"{"version":1,"pixels":[[1.0,2.0]]}"#);
    }

    #[test]
    fn pose_input_prefers_full_poses() {
        let full: PoseInput = parse(br#"{"joint_rotations": [[0, 0, 0]]}"#, "pose").unwrap();
        assert!(matches!(full, PoseInput::Full(_)));
        let named: PoseInput = parse(br#"{"joints": {"left_hip": [0.1, 0, 0]}}"#, "pose").unwrap();
        assert!(matches!(named, PoseInput::Named(u) if u.joints.len() == 1));
    }

    #[test]
    fn clip_names() {
        assert!(check_clip_name("walk_01").is_ok());
        for bad in ["", "../x", "a/b", "x y", "."] {
            assert!(check_clip_name(bad).is_err(), "{bad}");
        }
    }
}

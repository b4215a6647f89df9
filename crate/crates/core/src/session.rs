//! Interactive editing state over a fitted scene: the current pose and camera,
//! frame rendering, and motion-clip playback.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::body::Pose;
use crate::bundle::SceneBundle;
use crate::error::{Error, Result};
use crate::render::{render, render_with_stats, Camera, Image};
use crate::scene::{merge, Origin, RenderableScene};

pub const CLIP_SCHEMA_VERSION: u32 = 1;

/// Partial pose edit: named joint rotations (axis-angle, radians) and an
/// optional root translation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PoseUpdate {
    #[serde(default)]
    pub joints: BTreeMap<String, [f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root_translation: Option<[f64; 3]>,
}

/// A full pose keyed by joint name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedPose {
    pub joints: BTreeMap<String, [f64; 3]>,
    pub root_translation: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipKey {
    /// Seconds.
    pub time: f64,
    /// Joints left out are at zero rotation.
    pub pose: PoseUpdate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraKey {
    pub time: f64,
    pub camera: Camera,
}

/// Keyframed motion, optionally resampled at a fixed rate and with a camera track.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionClip {
    #[serde(default = "clip_version")]
    pub version: u32,
    pub keys: Vec<ClipKey>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cameras: Option<Vec<CameraKey>>,
}

fn clip_version() -> u32 {
    CLIP_SCHEMA_VERSION
}

fn check_increasing(times: impl Iterator<Item = f64>, what: &str) -> Result<()> {
    let mut prev = f64::NEG_INFINITY;
    for t in times {
        if !t.is_finite() || t <= prev {
            return Err(Error::invalid(format!("{what} timestamps must be finite and strictly increasing")));
        }
        prev = t;
    }
    Ok(())
}

impl MotionClip {
    pub fn validate(&self) -> Result<()> {
        if self.version != CLIP_SCHEMA_VERSION {
            return Err(Error::invalid(format!("unsupported clip version {}", self.version)));
        }
        if self.keys.is_empty() {
            return Err(Error::invalid("clip has no keys"));
        }
        check_increasing(self.keys.iter().map(|k| k.time), "clip key")?;
        if let Some(fps) = self.fps {
            if !(fps > 0.0 && fps.is_finite()) {
                return Err(Error::invalid("clip fps must be positive"));
            }
        }
        if let Some(cams) = &self.cameras {
            if cams.is_empty() {
                return Err(Error::invalid("camera track is empty"));
            }
            check_increasing(cams.iter().map(|k| k.time), "camera key")?;
            for k in cams {
                k.camera.validate()?;
            }
        }
        Ok(())
    }

    /// Timestamps of the frames to render.
    pub fn frame_times(&self) -> Vec<f64> {
        match self.fps {
            None => self.keys.iter().map(|k| k.time).collect(),
            Some(fps) => {
                let (t0, t1) = (self.keys[0].time, self.keys[self.keys.len() - 1].time);
                let n = ((t1 - t0) * fps + 1e-9).floor() as usize;
                (0..=n).map(|i| t0 + i as f64 / fps).collect()
            }
        }
    }
}

/// Index `i` and fraction `f` so that `t` lies between keys `i` and `i + 1`.
fn bracket(times: &[f64], t: f64) -> (usize, f64) {
    if times.len() == 1 || t <= times[0] {
        return (0, 0.0);
    }
    let last = times.len() - 1;
    if t >= times[last] {
        return (last, 0.0);
    }
    let i = times.partition_point(|&k| k <= t) - 1;
    (i, (t - times[i]) / (times[i + 1] - times[i]))
}

/// Camera between two keys: centers and intrinsics linearly, orientation by slerp.
pub fn interpolate_camera(a: &Camera, b: &Camera, f: f64) -> Camera {
    if f <= 0.0 {
        return a.clone();
    }
    let qa = UnitQuaternion::from_matrix(&a.rotation);
    let qb = UnitQuaternion::from_matrix(&b.rotation);
    let r = qa.slerp(&qb, f).to_rotation_matrix().into_inner();
    let center = a.center().lerp(&b.center(), f);
    let mix = |x: f64, y: f64| x + (y - x) * f;
    Camera {
        fx: mix(a.fx, b.fx),
        fy: mix(a.fy, b.fy),
        cx: mix(a.cx, b.cx),
        cy: mix(a.cy, b.cy),
        rotation: r,
        translation: -(r * center),
        width: a.width,
        height: a.height,
        near: a.near,
    }
}

/// One live editing session. Cloning is cheap: scene data is shared.
#[derive(Clone, Debug)]
pub struct SessionState {
    bundle: Arc<SceneBundle>,
    background: Arc<RenderableScene>,
    pose: Pose,
    camera: Camera,
}

impl SessionState {
    pub fn new(bundle: SceneBundle, camera: Camera) -> Result<Self> {
        bundle.validate()?;
        camera.validate()?;
        let background = Arc::new(bundle.background_scene());
        Ok(SessionState {
            pose: bundle.rest_pose(),
            bundle: Arc::new(bundle),
            background,
            camera,
        })
    }

    pub fn bundle(&self) -> &SceneBundle {
        &self.bundle
    }

    pub fn pose(&self) -> &Pose {
        &self.pose
    }

    pub fn camera(&self) -> &Camera {
        &self.camera
    }

    pub fn joint_names(&self) -> Vec<String> {
        self.bundle.mesh.joints().iter().map(|j| j.name.clone()).collect()
    }

    pub fn named_pose(&self) -> NamedPose {
        NamedPose {
            joints: self
                .bundle
                .mesh
                .joints()
                .iter()
                .zip(&self.pose.joint_rotations)
                .map(|(j, r)| (j.name.clone(), *r))
                .collect(),
            root_translation: self.pose.root_translation,
        }
    }

    /// Pose obtained by applying `update` on top of `base`. Unknown joints or
    /// non-finite values reject the whole update.
    pub fn apply_update(&self, base: &Pose, update: &PoseUpdate) -> Result<Pose> {
        let mesh = &self.bundle.mesh;
        let mut resolved = Vec::with_capacity(update.joints.len());
        let unknown: Vec<&str> = update
            .joints
            .keys()
            .filter(|n| mesh.joint_index(n).is_none())
            .map(String::as_str)
            .collect();
        if !unknown.is_empty() {
            return Err(Error::invalid(format!("unknown joint(s): {}", unknown.join(", "))));
        }
        for (name, v) in &update.joints {
            if !v.iter().all(|c| c.is_finite()) {
                return Err(Error::invalid(format!("joint `{name}` has a non-finite rotation")));
            }
            resolved.push((mesh.joint_index(name).unwrap_or_default(), *v));
        }
        if let Some(t) = update.root_translation {
            if !t.iter().all(|c| c.is_finite()) {
                return Err(Error::invalid("root translation is not finite"));
            }
        }
        let mut pose = base.clone();
        for (j, v) in resolved {
            pose.joint_rotations[j] = v;
        }
        if let Some(t) = update.root_translation {
            pose.root_translation = t;
        }
        Ok(pose)
    }

    /// Merges `update` into the current pose; nothing changes on error.
    pub fn set_pose(&mut self, update: &PoseUpdate) -> Result<&Pose> {
        self.pose = self.apply_update(&self.pose, update)?;
        Ok(&self.pose)
    }

    pub fn set_camera(&mut self, camera: Camera) -> Result<()> {
        camera.validate()?;
        self.camera = camera;
        Ok(())
    }

    pub fn scene_at(&self, pose: &Pose) -> Result<RenderableScene> {
        Ok(merge(&self.background, &self.bundle.pose(pose)?))
    }

    pub fn render_image(&self) -> Result<Image> {
        render(&self.scene_at(&self.pose)?, &self.camera, &self.bundle.render)
    }

    /// PNG of the current state and the time spent rendering it.
    pub fn render_frame(&self) -> Result<(Vec<u8>, Duration)> {
        let start = Instant::now();
        let img = self.render_image()?;
        let elapsed = start.elapsed();
        Ok((img.png_bytes()?, elapsed))
    }

    /// Pixels where any human Gaussian contributes nonzero alpha at `pose`.
    pub fn human_coverage(&self, pose: &Pose) -> Result<Vec<bool>> {
        let human = self.scene_at(pose)?.filtered(Origin::Human);
        let (img, _) = render_with_stats(&human, &self.camera, &self.bundle.render)?;
        Ok(img.alpha.unwrap_or_default().iter().map(|&a| a > 0.0).collect())
    }

    /// Renders every frame of `clip` to `out_dir/frame_NNNNN.png`. The session
    /// camera is used when the clip has no camera track.
    pub fn play_clip(&self, clip: &MotionClip, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        clip.validate()?;
        let out_dir = out_dir.as_ref();
        std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let rest = self.bundle.rest_pose();
        let poses = clip
            .keys
            .iter()
            .map(|k| self.apply_update(&rest, &k.pose))
            .collect::<Result<Vec<_>>>()?;
        let key_times: Vec<f64> = clip.keys.iter().map(|k| k.time).collect();
        let cam_times: Vec<f64> = clip.cameras.iter().flatten().map(|k| k.time).collect();
        let mut paths = Vec::new();
        for (n, t) in clip.frame_times().into_iter().enumerate() {
            let (i, f) = bracket(&key_times, t);
            let pose = if f > 0.0 { poses[i].lerp(&poses[i + 1], f)? } else { poses[i].clone() };
            let camera = match &clip.cameras {
                None => self.camera.clone(),
                Some(cams) => {
                    let (i, f) = bracket(&cam_times, t);
                    if f > 0.0 {
                        interpolate_camera(&cams[i].camera, &cams[i + 1].camera, f)
                    } else {
                        cams[i].camera.clone()
                    }
                }
            };
            let img = render(&self.scene_at(&pose)?, &camera, &self.bundle.render)?;
            let path = out_dir.join(format!("frame_{n:05}.png"));
            img.save_png(&path)?;
            paths.push(path);
        }
        Ok(paths)
    }
}

/// Default viewing camera for a bundle: in front of the body, looking at its center.
pub fn default_camera(bundle: &SceneBundle, width: usize, height: usize) -> Camera {
    let joints = bundle.mesh.joint_positions();
    let center = joints.iter().fold(Vector3::zeros(), |a, j| a + j) / joints.len().max(1) as f64;
    let target = bundle.alignment.apply_point(&center);
    let eye = target + bundle.alignment.rotation * Vector3::new(0.0, 0.0, 3.0 * bundle.alignment.scale);
    let focal = 1.2 * width.max(height) as f64;
    Camera::look_at(eye, target, bundle.alignment.rotation * Vector3::y(), focal, width, height)
}

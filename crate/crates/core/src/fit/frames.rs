use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::body::Pose;
use crate::error::{Error, Result};
use crate::io::{read_json, write_json};
use crate::render::{Camera, Image};

pub const FRAMES_SCHEMA_VERSION: u32 = 1;
pub const FRAMES_MANIFEST: &str = "frames.json";

/// One training view: target image, its camera, the human mask and body pose.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub image: Image,
    pub camera: Camera,
    pub mask: Vec<bool>,
    pub pose: Pose,
}

impl Frame {
    pub fn validate(&self) -> Result<()> {
        let (w, h) = (self.image.width, self.image.height);
        if self.mask.len() != w * h {
            return Err(Error::invalid(format!("mask has {} pixels, image is {w}x{h}", self.mask.len())));
        }
        if (self.camera.width, self.camera.height) != (w, h) {
            return Err(Error::invalid(format!(
                "camera is {}x{}, image is {w}x{h}",
                self.camera.width, self.camera.height
            )));
        }
        self.camera.validate()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FrameEntry {
    pub image: String,
    pub mask: String,
    pub camera: Camera,
    pub pose: Pose,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FramesManifest {
    pub version: u32,
    pub frames: Vec<FrameEntry>,
}

fn load_mask(path: &Path) -> Result<(usize, usize, Vec<bool>)> {
    let img = image::open(path)?.into_luma8();
    let (w, h) = img.dimensions();
    Ok((w as usize, h as usize, img.pixels().map(|p| p.0[0] > 127).collect()))
}

fn save_mask(path: &Path, mask: &[bool], w: usize, h: usize) -> Result<()> {
    let img = image::GrayImage::from_fn(w as u32, h as u32, |x, y| {
        image::Luma([if mask[y as usize * w + x as usize] { 255 } else { 0 }])
    });
    img.save(path)?;
    Ok(())
}

/// Reads `frames.json` and the PNG images and masks it lists.
pub fn load_frames(dir: impl AsRef<Path>) -> Result<Vec<Frame>> {
    let dir = dir.as_ref();
    let manifest: FramesManifest = read_json(dir.join(FRAMES_MANIFEST))?;
    if manifest.version != FRAMES_SCHEMA_VERSION {
        return Err(Error::format(
            "frames",
            format!("unsupported version {} (expected {FRAMES_SCHEMA_VERSION})", manifest.version),
        ));
    }
    manifest
        .frames
        .into_iter()
        .map(|e| {
            let image = Image::load_png(dir.join(&e.image))?;
            let (mw, mh, mask) = load_mask(&dir.join(&e.mask))?;
            if (mw, mh) != (image.width, image.height) {
                return Err(Error::invalid(format!("mask {} does not match image {}", e.mask, e.image)));
            }
            let frame = Frame { image, camera: e.camera, mask, pose: e.pose };
            frame.validate()?;
            Ok(frame)
        })
        .collect()
}

pub fn save_frames(dir: impl AsRef<Path>, frames: &[Frame]) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(frames.len());
    for (i, f) in frames.iter().enumerate() {
        f.validate()?;
        let image = format!("{i:04}.png");
        let mask = format!("{i:04}_mask.png");
        f.image.save_png(dir.join(&image))?;
        save_mask(&dir.join(&mask), &f.mask, f.image.width, f.image.height)?;
        entries.push(FrameEntry { image, mask, camera: f.camera.clone(), pose: f.pose.clone() });
    }
    write_json(
        dir.join(FRAMES_MANIFEST),
        &FramesManifest { version: FRAMES_SCHEMA_VERSION, frames: entries },
    )
}

use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "skinsplat", version, about = "Animatable human Gaussians in a Gaussian-splat scene")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Bake a skinned mesh into a UV position texture.
    Bake(BakeArgs),
    /// Place the body in the scene from 2D keypoints and the ground plane.
    Align(AlignArgs),
    /// Render one frame.
    Render(RenderArgs),
    /// Fit background and human Gaussians to posed frames.
    Fit(FitArgs),
    /// Time renders of a random scene and print FPS as JSON.
    Bench(BenchArgs),
    /// Run the pose-editing HTTP service.
    Serve(ServeArgs),
    /// Render a motion clip to a PNG sequence.
    Play(PlayArgs),
    /// Write the synthetic test scene, its training views and a reset starting point.
    Synth(SynthArgs),
}

/// `WxH` image size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Size {
    pub width: usize,
    pub height: usize,
}

impl FromStr for Size {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (w, h) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected WxH, got `{s}`"))?;
        let width: usize = w.trim().parse().map_err(|_| format!("bad width in `{s}`"))?;
        let height: usize = h.trim().parse().map_err(|_| format!("bad height in `{s}`"))?;
        if width == 0 || height == 0 {
            return Err(format!("size must be at least 1x1, got `{s}`"));
        }
        Ok(Size { width, height })
    }
}

/// Where a scene comes from: a bundle directory, or a background PLY plus the
/// pieces needed to add a human.
#[derive(Args, Debug, Clone)]
pub struct SceneArgs {
    /// Bundle directory (with bundle.json) or a background Gaussian/point PLY.
    #[arg(long)]
    pub scene: PathBuf,
    /// Skinned mesh (JSON, or OBJ with --weights). Required with a PLY scene.
    #[arg(long)]
    pub mesh: Option<PathBuf>,
    /// Skinning weights JSON for an OBJ mesh.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Position texture; humans start from its texel defaults unless --human is given.
    #[arg(long)]
    pub texture: Option<PathBuf>,
    /// Human attribute file.
    #[arg(long)]
    pub human: Option<PathBuf>,
    /// Alignment document from `align`.
    #[arg(long)]
    pub alignment: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BakeArgs {
    /// Skinned mesh: JSON document, or OBJ together with --weights.
    #[arg(long)]
    pub mesh: PathBuf,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    pub resolution: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a PNG of the position channel.
    #[arg(long)]
    pub preview: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AlignArgs {
    /// Scene point cloud (ASCII or binary PLY).
    #[arg(long)]
    pub cloud: PathBuf,
    /// Body-space joint positions.
    #[arg(long)]
    pub joints3d: PathBuf,
    /// Pixel keypoints, one per joint.
    #[arg(long)]
    pub joints2d: PathBuf,
    /// Camera JSON of the keypoint image: intrinsics and world-to-camera extrinsics.
    #[arg(long)]
    pub intrinsics: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Plane inlier threshold in scene units (default: 2% of the cloud's bounding-box diagonal).
    #[arg(long)]
    pub plane_threshold: Option<f64>,
    #[arg(long, default_value_t = 256)]
    pub ransac_iterations: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    #[command(flatten)]
    pub scene: SceneArgs,
    #[arg(long)]
    pub camera: PathBuf,
    /// Pose JSON (full pose or named joint map); rest pose when absent.
    #[arg(long)]
    pub pose: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the float image as PFM.
    #[arg(long)]
    pub pfm: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[command(flatten)]
    pub scene: SceneArgs,
    /// Directory with frames.json.
    #[arg(long)]
    pub frames: PathBuf,
    /// Fit config JSON; missing fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Override the config's iteration count.
    #[arg(long)]
    pub iterations: Option<usize>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 50_000)]
    pub points: usize,
    #[arg(long, default_value = "256x256")]
    pub size: Size,
    #[arg(long, default_value_t = 20)]
    pub frames: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    /// Bundle directory.
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: String,
    /// Initial frame size.
    #[arg(long, default_value = "512x512")]
    pub size: Size,
    /// Directory under which POST /clip writes frame sequences.
    #[arg(long, default_value = "clips")]
    pub clip_root: PathBuf,
}

#[derive(Args, Debug)]
pub struct PlayArgs {
    /// Bundle directory.
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub clip: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Camera JSON used when the clip has no camera track.
    #[arg(long)]
    pub camera: Option<PathBuf>,
    /// Frame size for the default camera.
    #[arg(long, default_value = "512x512")]
    pub size: Size,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn size_parsing() {
        assert_eq!("256x128".parse::<Size>().unwrap(), Size { width: 256, height: 128 });
        assert!("256".parse::<Size>().is_err());
        assert!("0x4".parse::<Size>().is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}

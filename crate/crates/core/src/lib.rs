//! Animatable human Gaussians composited into a Gaussian-splat scene.
//!
//! The pipeline: a skinned template mesh is baked into a UV position texture,
//! each valid texel becomes a Gaussian, the body is aligned to a background
//! scene from 2D keypoints and a ground plane, and both sets are rendered and
//! fitted together with a differentiable tile rasterizer.

pub mod align;
pub mod body;
pub mod bundle;
pub mod error;
pub mod fit;
pub mod fixtures;
pub mod io;
pub mod math;
pub mod render;
pub mod scene;
pub mod session;
pub mod texture;

pub use align::{align_to_scene, fit_ground_plane, solve_pnp, solve_scale, GroundPlane, Intrinsics, PnpConfig, PnpSolution, SceneAlignment};
pub use body::{forward_kinematics, lbs, DaPoseConfig, Joint, JointTransforms, Pose, SkinWeights, SkinnedMesh, Triangle};
pub use bundle::SceneBundle;
pub use error::{Error, Result};
pub use fit::{optimize, FitConfig, FitResult, Frame, LossBreakdown};
pub use render::{render, render_backward, Camera, GradientBuffers, Image, RenderConfig};
pub use scene::{merge, pose_human, BackgroundGaussians, HumanGaussians, HumanInit, Origin, PosedHuman, RenderableScene};
pub use session::{MotionClip, PoseUpdate, SessionState};
pub use texture::{bake, PositionTexture, Texel};

//! Procedural test data: a tube humanoid, a ground-and-wall background, camera
//! rings and random splat scenes.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::align::SceneAlignment;
use crate::body::{DaPoseConfig, Joint, Pose, SkinWeights, SkinnedMesh, Triangle};
use crate::bundle::SceneBundle;
use crate::error::Result;
use crate::math::logit;
use crate::fit::Frame;
use crate::render::{render, render_human_only, Camera, RenderConfig};
use crate::scene::{BackgroundGaussians, HumanGaussians, HumanInit, Origin, RenderableScene};
use crate::texture::{bake, PositionTexture};

/// Joint names of the toy humanoid, in index order.
pub const TOY_JOINTS: [&str; 17] = [
    "pelvis",
    "spine",
    "chest",
    "neck",
    "head",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "right_shoulder",
    "right_elbow",
    "right_wrist",
    "left_hip",
    "left_knee",
    "left_ankle",
    "right_hip",
    "right_knee",
    "right_ankle",
];

const TOY_PARENTS: [Option<usize>; 17] = [
    None,
    Some(0),
    Some(1),
    Some(2),
    Some(3),
    Some(2),
    Some(5),
    Some(6),
    Some(2),
    Some(8),
    Some(9),
    Some(0),
    Some(11),
    Some(12),
    Some(0),
    Some(14),
    Some(15),
];

const TOY_POSITIONS: [[f64; 3]; 17] = [
    [0.0, 0.95, 0.0],
    [0.0, 1.10, 0.0],
    [0.0, 1.30, 0.0],
    [0.0, 1.50, 0.0],
    [0.0, 1.62, 0.0],
    [0.18, 1.45, 0.0],
    [0.45, 1.45, 0.0],
    [0.70, 1.45, 0.0],
    [-0.18, 1.45, 0.0],
    [-0.45, 1.45, 0.0],
    [-0.70, 1.45, 0.0],
    [0.10, 0.92, 0.0],
    [0.10, 0.50, 0.0],
    [0.10, 0.08, 0.0],
    [-0.10, 0.92, 0.0],
    [-0.10, 0.50, 0.0],
    [-0.10, 0.08, 0.0],
];

struct Tube {
    joint: usize,
    /// Joint at the far end, blended in near it.
    end_joint: Option<usize>,
    start: [f64; 3],
    end: [f64; 3],
    radius: f64,
}

fn tubes() -> Vec<Tube> {
    let p = TOY_POSITIONS;
    let t = |joint, end_joint: Option<usize>, start: [f64; 3], end: [f64; 3], radius| Tube {
        joint,
        end_joint,
        start,
        end,
        radius,
    };
    vec![
        t(0, Some(1), [0.0, 0.85, 0.0], p[1], 0.14),
        t(1, Some(2), p[1], p[2], 0.15),
        t(2, Some(3), p[2], p[3], 0.16),
        t(3, Some(4), p[3], p[4], 0.05),
        t(4, None, p[4], [0.0, 1.85, 0.0], 0.10),
        t(5, Some(6), p[5], p[6], 0.05),
        t(6, Some(7), p[6], p[7], 0.04),
        t(8, Some(9), p[8], p[9], 0.05),
        t(9, Some(10), p[9], p[10], 0.04),
        t(11, Some(12), p[11], p[12], 0.065),
        t(12, Some(13), p[12], p[13], 0.05),
        t(14, Some(15), p[14], p[15], 0.065),
        t(15, Some(16), p[15], p[16], 0.05),
        t(13, None, [0.10, 0.05, -0.03], [0.10, 0.05, 0.18], 0.04),
        t(16, None, [-0.10, 0.05, -0.03], [-0.10, 0.05, 0.18], 0.04),
    ]
}

const SIDES: usize = 12;
const RINGS: usize = 6;
const ATLAS: usize = 4;
const CELL_MARGIN: f64 = 0.01;

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// A 17-joint humanoid made of 15 open tubes, Y-up and facing +Z, with every
/// tube in its own cell of a 4×4 UV atlas. Weights blend toward the parent
/// joint near each tube's start and toward the child joint near its end.
pub fn toy_body() -> SkinnedMesh {
    let joints: Vec<Joint> = (0..17)
        .map(|j| Joint {
            name: TOY_JOINTS[j].into(),
            parent: TOY_PARENTS[j],
            position: TOY_POSITIONS[j],
        })
        .collect();
    let mut vertices = Vec::new();
    let mut weights = Vec::new();
    let mut girth = Vec::new();
    let mut triangles = Vec::new();
    let cell = 1.0 / ATLAS as f64;
    for (k, tube) in tubes().iter().enumerate() {
        let a = Vector3::from(tube.start);
        let b = Vector3::from(tube.end);
        let axis = (b - a).normalize();
        let helper = if axis.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        let e1 = axis.cross(&helper).normalize();
        let e2 = axis.cross(&e1);
        let u0 = (k % ATLAS) as f64 * cell + CELL_MARGIN;
        let v0 = (k / ATLAS) as f64 * cell + CELL_MARGIN;
        let span = cell - 2.0 * CELL_MARGIN;
        let base = vertices.len();
        let mut uvs = Vec::new();
        for r in 0..=RINGS {
            let t = r as f64 / RINGS as f64;
            let center = a + (b - a) * t;
            for s in 0..=SIDES {
                let phi = TAU * s as f64 / SIDES as f64;
                let dir = e1 * phi.cos() + e2 * phi.sin();
                vertices.push(center + dir * tube.radius);
                girth.push(vec![[dir.x * 0.02, dir.y * 0.02, dir.z * 0.02]]);
                uvs.push([u0 + span * s as f64 / SIDES as f64, v0 + span * t]);
                let to_parent = match TOY_PARENTS[tube.joint] {
                    Some(_) => 0.5 * smoothstep((0.25 - t) / 0.25),
                    None => 0.0,
                };
                let to_child = match tube.end_joint {
                    Some(_) => 0.5 * smoothstep((t - 0.75) / 0.25),
                    None => 0.0,
                };
                let mut w = vec![(tube.joint, 1.0 - to_parent - to_child)];
                if let (Some(p), true) = (TOY_PARENTS[tube.joint], to_parent > 0.0) {
                    w.push((p, to_parent));
                }
                if let (Some(c), true) = (tube.end_joint, to_child > 0.0) {
                    w.push((c, to_child));
                }
                weights.push(SkinWeights(w));
            }
        }
        let idx = |r: usize, s: usize| r * (SIDES + 1) + s;
        for r in 0..RINGS {
            for s in 0..SIDES {
                let q = [idx(r, s), idx(r, s + 1), idx(r + 1, s + 1), idx(r + 1, s)];
                for tri in [[q[0], q[1], q[2]], [q[0], q[2], q[3]]] {
                    triangles.push(Triangle {
                        indices: tri.map(|i| base + i),
                        uvs: tri.map(|i| uvs[i]),
                    });
                }
            }
        }
    }
    SkinnedMesh::new(vertices, triangles, weights, joints)
        .and_then(|m| m.with_shape_dirs(girth))
        .map(|m| m.with_da_pose(DaPoseConfig::default()))
        .expect("toy body is well formed")
}

/// Pose with every joint rotated by a random axis-angle of at most `max_angle`
/// radians and a random root translation within ±`max_translation`.
pub fn random_pose(rng: &mut impl Rng, joint_count: usize, max_angle: f64, max_translation: f64) -> Pose {
    let mut pose = Pose::zero(joint_count);
    for r in &mut pose.joint_rotations {
        let axis = random_unit(rng);
        let angle = rng.random_range(0.0..=max_angle);
        *r = [axis.x * angle, axis.y * angle, axis.z * angle];
    }
    for t in &mut pose.root_translation {
        *t = rng.random_range(-max_translation..=max_translation);
    }
    pose
}

pub fn random_unit(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let n: f64 = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

/// Rotation about a uniformly random axis by an angle uniform in [0, π).
pub fn random_rotation(rng: &mut impl Rng) -> Matrix3<f64> {
    let axis = random_unit(rng);
    let angle = rng.random_range(0.0..PI);
    crate::math::axis_angle_to_matrix(&(axis * angle))
}

/// A mid-stride pose of the toy body: arms lowered, one leg forward.
pub fn stride_pose(mesh: &SkinnedMesh) -> Pose {
    let mut pose = Pose::zero(mesh.joint_count());
    let mut set = |name: &str, v: [f64; 3]| {
        if let Some(j) = mesh.joint_index(name) {
            pose.joint_rotations[j] = v;
        }
    };
    set("left_shoulder", [0.0, 0.0, -1.1]);
    set("right_shoulder", [0.0, 0.0, 1.1]);
    set("left_elbow", [0.0, -0.4, 0.0]);
    set("left_hip", [-0.35, 0.0, 0.0]);
    set("left_knee", [0.3, 0.0, 0.0]);
    set("right_hip", [0.25, 0.0, 0.0]);
    set("head", [0.0, 0.3, 0.0]);
    pose
}

/// Ground disk (y = 0) plus a surrounding wall cylinder, both made of
/// flattened Gaussians with smoothly varying colors.
pub fn synthetic_background(count: usize, seed: u64) -> BackgroundGaussians {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bg = BackgroundGaussians::default();
    let ground = count * 3 / 10;
    let (disk_r, wall_r, wall_h) = (2.5, 4.0, 2.6);
    let flat_along = |n: Vector3<f64>| -> [f64; 4] {
        // Quaternion turning local z onto n.
        let z = Vector3::z();
        let c = z.dot(&n);
        if c < -0.999999 {
            return [0.0, 1.0, 0.0, 0.0];
        }
        let v = z.cross(&n);
        let w = 1.0 + c;
        let q = [w, v.x, v.y, v.z];
        let s = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        q.map(|x| x / s)
    };
    let ground_spacing = (PI * disk_r * disk_r / ground.max(1) as f64).sqrt();
    for i in 0..ground {
        // Sunflower layout for even coverage.
        let r = disk_r * ((i as f64 + 0.5) / ground as f64).sqrt();
        let a = i as f64 * 2.399963229728653;
        let p = Vector3::new(r * a.cos(), 0.0, r * a.sin());
        let color = Vector3::new(
            0.45 + 0.25 * (1.7 * p.x).sin(),
            0.40 + 0.2 * (1.3 * p.z).cos(),
            0.30 + 0.1 * rng.random::<f64>(),
        );
        let s = ground_spacing * 0.7;
        bg.push(p, flat_along(Vector3::y()), Vector3::new(s.ln(), s.ln(), (s * 0.1).ln()), 0.95, color);
    }
    let wall = count - ground;
    let rows = ((wall as f64 * wall_h / (TAU * wall_r)).sqrt().round() as usize).max(1);
    let cols = wall.div_ceil(rows);
    let spacing = (TAU * wall_r / cols as f64).max(wall_h / rows as f64);
    for i in 0..wall {
        let (row, col) = (i / cols, i % cols);
        let a = TAU * (col as f64 + 0.5 * (row % 2) as f64) / cols as f64;
        let y = wall_h * (row as f64 + 0.5) / rows as f64;
        let n = Vector3::new(-a.cos(), 0.0, -a.sin());
        let p = Vector3::new(wall_r * a.cos(), y, wall_r * a.sin());
        let color = Vector3::new(
            0.5 + 0.35 * (3.0 * a).sin(),
            0.5 + 0.3 * (2.0 * y).cos(),
            0.55 + 0.3 * (5.0 * a + y).sin(),
        );
        let s = spacing * 0.7;
        bg.push(p, flat_along(n), Vector3::new(s.ln(), s.ln(), (s * 0.1).ln()), 0.97, color);
    }
    bg
}

/// `count` cameras evenly spaced on a horizontal circle, all looking at `target`.
pub fn camera_ring(
    count: usize,
    radius: f64,
    height: f64,
    target: Vector3<f64>,
    focal: f64,
    width: usize,
    height_px: usize,
    phase: f64,
) -> Vec<Camera> {
    (0..count)
        .map(|i| {
            let a = phase + TAU * i as f64 / count as f64;
            let eye = Vector3::new(radius * a.sin(), height, radius * a.cos());
            Camera::look_at(eye, target, Vector3::y(), focal, width, height_px)
        })
        .collect()
}

/// Human attributes with a colorful surface pattern and high opacity.
pub fn patterned_human(texture: &PositionTexture, mesh: &SkinnedMesh) -> Result<HumanGaussians> {
    let mut human = HumanGaussians::from_texture(texture, mesh, &HumanInit::default())?;
    for (c, p) in human.color_logits.iter_mut().zip(&human.rest_positions) {
        let col = Vector3::new(
            0.5 + 0.4 * (7.0 * p.y).sin(),
            0.5 + 0.4 * (9.0 * p.x + 2.0).cos(),
            0.5 + 0.35 * (11.0 * (p.y + p.z)).sin(),
        );
        *c = col.map(logit);
    }
    human.opacity_logits.iter_mut().for_each(|o| *o = logit(0.95));
    Ok(human)
}

/// Ground-truth bundle: the toy body baked at `texture_resolution`, standing
/// at the origin, in front of [`synthetic_background`].
pub fn synthetic_bundle(texture_resolution: usize, background_count: usize, seed: u64) -> Result<SceneBundle> {
    let mesh = toy_body();
    let texture = bake(&mesh, texture_resolution)?;
    let human = patterned_human(&texture, &mesh)?;
    Ok(SceneBundle {
        background: synthetic_background(background_count, seed),
        human,
        texture: Some(texture),
        alignment: SceneAlignment::default(),
        da_pose: mesh.da_pose_config().clone(),
        mesh,
        render: RenderConfig::default(),
    })
}

/// Ground truth, views and starting point for the end-to-end fit check.
pub struct FitFixture {
    pub truth: SceneBundle,
    pub pose: Pose,
    /// Nine views around the body; the first eight are for training.
    pub frames: Vec<Frame>,
    pub initial: SceneBundle,
}

impl FitFixture {
    pub fn training(&self) -> &[Frame] {
        &self.frames[..8]
    }

    pub fn held_out(&self) -> &Frame {
        &self.frames[8]
    }
}

/// The synthetic bundle in a stride pose seen by a ring of nine 64×64 cameras.
/// The starting point keeps the background positions and resets every other
/// attribute: human texels take the texture defaults, background splats become
/// gray, half-transparent, unrotated spheres.
pub fn fit_fixture() -> Result<FitFixture> {
    let truth = synthetic_bundle(84, 500, 7)?;
    let pose = stride_pose(&truth.mesh);
    let cams = camera_ring(9, 3.0, 1.2, Vector3::new(0.0, 0.95, 0.0), 80.0, 64, 64, 0.2);
    let scene = truth.scene_at(&pose)?;
    let frames = cams
        .into_iter()
        .map(|camera| {
            let image = render(&scene, &camera, &truth.render)?;
            let (_, mask) = render_human_only(&scene, &camera, &truth.render)?;
            Ok(Frame { image, camera, mask, pose: pose.clone() })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut initial = truth.clone();
    let texture = truth.texture.as_ref().expect("synthetic bundle has a texture");
    initial.human = HumanGaussians::from_texture(texture, &truth.mesh, &HumanInit::default())?;
    let bg = &mut initial.background;
    for i in 0..bg.len() {
        let ls = bg.log_scales[i];
        bg.log_scales[i] = Vector3::repeat((ls.x + ls.y) / 2.0);
        bg.rotations[i] = [1.0, 0.0, 0.0, 0.0];
        bg.color_logits[i] = Vector3::zeros();
        bg.opacity_logits[i] = 0.0;
    }
    Ok(FitFixture { truth, pose, frames, initial })
}

/// `n` random Gaussians filling the view frustum of a 0.5-radian camera at the
/// origin looking down +z, between depths 2 and 8.
pub fn random_scene(n: usize, seed: u64, width: usize, height: usize) -> (RenderableScene, Camera) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let focal = width as f64 / (2.0 * 0.5f64.tan());
    let camera = Camera {
        fx: focal,
        fy: focal,
        cx: width as f64 / 2.0,
        cy: height as f64 / 2.0,
        rotation: Matrix3::identity(),
        translation: Vector3::zeros(),
        width,
        height,
        near: 0.01,
    };
    let mut scene = RenderableScene::default();
    let aspect = height as f64 / width as f64;
    for _ in 0..n {
        let z = rng.random_range(2.0..8.0);
        let x = rng.random_range(-1.0..1.0) * z * 0.5f64.tan();
        let y = rng.random_range(-1.0..1.0) * z * 0.5f64.tan() * aspect;
        let r = random_rotation(&mut rng);
        let s = Vector3::new(
            rng.random_range(0.005..0.04),
            rng.random_range(0.005..0.04),
            rng.random_range(0.005..0.04),
        );
        let cov = r * Matrix3::from_diagonal(&s.component_mul(&s)) * r.transpose();
        let color = Vector3::new(rng.random(), rng.random(), rng.random());
        scene.push(Vector3::new(x, y, z), cov, rng.random_range(0.2..0.95), color, Origin::Background);
    }
    (scene, camera)
}

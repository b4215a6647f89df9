use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use serde::Serialize;

use skinsplat::align::{default_pnp_guess, PlaneFitConfig};
use skinsplat::bundle::BUNDLE_MANIFEST;
use skinsplat::fit::{load_frames, optimize_with, save_frames};
use skinsplat::fixtures::{fit_fixture, random_scene};
use skinsplat::io::{ply, read_json, write_json};
use skinsplat::session::{default_camera, ClipKey};
use skinsplat::{
    align_to_scene, fit_ground_plane, solve_pnp, Camera, FitConfig, HumanGaussians, HumanInit,
    LossBreakdown, MotionClip, PnpConfig, PoseUpdate, PositionTexture, RenderConfig, SceneAlignment, SceneBundle,
    SessionState, SkinnedMesh,
};

use crate::args::{AlignArgs, BakeArgs, BenchArgs, FitArgs, PlayArgs, RenderArgs, SceneArgs, ServeArgs, SynthArgs};
use crate::documents::{self, AlignmentReport, Joints2d, Joints3d, PoseInput};
use crate::server;

fn load_mesh(mesh: &Path, weights: Option<&Path>) -> anyhow::Result<SkinnedMesh> {
    let is_obj = mesh.extension().is_some_and(|e| e.eq_ignore_ascii_case("obj"));
    Ok(match (is_obj, weights) {
        (true, Some(w)) => SkinnedMesh::load_obj(mesh, w)?,
        (true, None) => bail!("an OBJ mesh needs --weights"),
        (false, _) => SkinnedMesh::load_json(mesh)?,
    })
}

pub fn read_camera(path: &Path) -> anyhow::Result<Camera> {
    let camera: Camera = documents::read(path, "camera")?;
    camera.validate()?;
    Ok(camera)
}

fn read_alignment(path: &Path) -> anyhow::Result<SceneAlignment> {
    let report: AlignmentReport = documents::read(path, "alignment")?;
    report.alignment.validate()?;
    Ok(report.alignment)
}

/// Loads a bundle directory, or assembles one from a background PLY, a mesh
/// and either a human attribute file or a texture to initialize from.
pub fn load_scene(args: &SceneArgs) -> anyhow::Result<SceneBundle> {
    let mut bundle = if args.scene.join(BUNDLE_MANIFEST).is_file() {
        let mut b = SceneBundle::load(&args.scene)?;
        if let Some(m) = &args.mesh {
            b.mesh = load_mesh(m, args.weights.as_deref())?;
            b.da_pose = b.mesh.da_pose_config().clone();
        }
        b
    } else if args.scene.is_file() {
        let Some(mesh) = &args.mesh else {
            bail!("--mesh is required when --scene is a PLY file");
        };
        let mesh = load_mesh(mesh, args.weights.as_deref())?;
        SceneBundle {
            da_pose: mesh.da_pose_config().clone(),
            mesh,
            background: ply::read_background(&args.scene)?,
            human: HumanGaussians::default(),
            texture: None,
            alignment: SceneAlignment::default(),
            render: RenderConfig::default(),
        }
    } else {
        bail!("{} is neither a bundle directory nor a PLY file", args.scene.display());
    };
    if let Some(t) = &args.texture {
        bundle.texture = Some(PositionTexture::load(t)?);
    }
    if let Some(h) = &args.human {
        bundle.human = HumanGaussians::load(h)?;
    } else if args.texture.is_some() || (bundle.human.is_empty() && bundle.texture.is_some()) {
        let tex = bundle.texture.as_ref().context("texture")?;
        bundle.human = HumanGaussians::from_texture(tex, &bundle.mesh, &HumanInit::default())?;
    }
    if let Some(a) = &args.alignment {
        bundle.alignment = read_alignment(a)?;
    }
    bundle.validate()?;
    Ok(bundle)
}

pub fn bake(args: &BakeArgs) -> anyhow::Result<()> {
    let mesh = load_mesh(&args.mesh, args.weights.as_deref())?;
    let start = Instant::now();
    let texture = skinsplat::bake(&mesh, args.resolution)?;
    texture.save(&args.out)?;
    log::info!(
        "baked {}x{} texture with {} valid texels in {:.2?}",
        texture.width(),
        texture.height(),
        texture.valid_count(),
        start.elapsed()
    );
    if let Some(p) = &args.preview {
        texture.visualize().save(p).with_context(|| format!("writing {}", p.display()))?;
    }
    println!("{}", texture.valid_count());
    Ok(())
}

pub fn align(args: &AlignArgs) -> anyhow::Result<()> {
    let (cloud, _) = ply::point_cloud(&ply::read(&args.cloud)?)?;
    let joints = documents::read::<Joints3d>(&args.joints3d, "joints3d")?.points();
    let pixels = documents::read::<Joints2d>(&args.joints2d, "joints2d")?.points();
    let camera = read_camera(&args.intrinsics)?;
    let plane = fit_ground_plane(
        &cloud,
        &PlaneFitConfig {
            iterations: args.ransac_iterations,
            inlier_threshold: args.plane_threshold,
            seed: args.seed,
        },
    )?;
    let pnp = solve_pnp(&joints, &pixels, &camera.intrinsics(), default_pnp_guess(), &PnpConfig::default())?;
    let alignment = align_to_scene(&pnp, &camera.rotation, &camera.translation, &joints, &plane)?;
    log::info!("keypoint fit rms {:.3} px, scale {:.4}", pnp.rms, alignment.scale);
    let report = AlignmentReport { alignment, plane, pnp_rms: pnp.rms, pnp_iterations: pnp.iterations };
    documents::write(&args.out, &report)
}

pub fn render(args: &RenderArgs) -> anyhow::Result<()> {
    let bundle = load_scene(&args.scene)?;
    let camera = read_camera(&args.camera)?;
    let pose = match &args.pose {
        None => bundle.rest_pose(),
        Some(p) => match documents::read::<PoseInput>(p, "pose")? {
            PoseInput::Full(pose) => pose,
            PoseInput::Named(update) => {
                let session = SessionState::new(bundle.clone(), camera.clone())?;
                session.apply_update(&bundle.rest_pose(), &update)?
            }
        },
    };
    let start = Instant::now();
    let image = bundle.render(&pose, &camera)?;
    log::info!("rendered {}x{} in {:.2?}", image.width, image.height, start.elapsed());
    image.save_png(&args.out)?;
    if let Some(p) = &args.pfm {
        image.save_pfm(p)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct LossRow {
    iteration: usize,
    total: f64,
    l1: f64,
    ssim: f64,
    l1_human: f64,
    ssim_human: f64,
    geo: f64,
    offset: f64,
    scale: f64,
}

impl LossRow {
    fn new(iteration: usize, l: &LossBreakdown) -> Self {
        LossRow {
            iteration,
            total: l.total,
            l1: l.l1,
            ssim: l.ssim,
            l1_human: l.l1_human,
            ssim_human: l.ssim_human,
            geo: l.geo,
            offset: l.offset,
            scale: l.scale,
        }
    }
}

#[derive(Serialize)]
struct FitSummary {
    iterations: usize,
    frames: usize,
    initial_loss: f64,
    final_loss: f64,
    seconds: f64,
}

pub fn fit(args: &FitArgs) -> anyhow::Result<()> {
    let bundle = load_scene(&args.scene)?;
    let frames = load_frames(&args.frames)?;
    let mut config: FitConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => FitConfig::default(),
    };
    if let Some(n) = args.iterations {
        config.iterations = n;
    }
    config.validate()?;
    let out = &args.out;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_json(out.join("config.json"), &config)?;
    let csv_path = out.join("loss.csv");
    let mut csv = csv::Writer::from_path(&csv_path)?;
    let checkpoints = out.join("checkpoints");
    let start = Instant::now();
    let total = config.iterations;
    // `done` counts completed steps.
    let result = optimize_with(bundle, &frames, &config, |done, loss, b| {
        let io = |e: csv::Error| skinsplat::Error::io(&csv_path, std::io::Error::other(e));
        csv.serialize(LossRow::new(done, loss)).map_err(io)?;
        if config.checkpoint_every > 0 && done % config.checkpoint_every == 0 {
            csv.flush().map_err(|e| skinsplat::Error::io(&csv_path, e))?;
            let mut snapshot = b.clone();
            snapshot.background.normalize_rotations();
            snapshot.save(checkpoints.join(format!("iter_{done:05}")))?;
        }
        if done % 100 == 0 || done == total {
            log::info!("iteration {done}/{total}: loss {:.5}", loss.total);
        }
        Ok(())
    })?;
    csv.flush()?;
    result.bundle.save(out.join("final"))?;
    let summary = FitSummary {
        iterations: result.history.len(),
        frames: frames.len(),
        initial_loss: result.initial_loss,
        final_loss: result.final_loss,
        seconds: start.elapsed().as_secs_f64(),
    };
    documents::write(&out.join("summary.json"), &summary)?;
    println!("{}", serde_json::to_string(&documents::Versioned::new(&summary))?);
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct BenchReport {
    pub points: usize,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub threads: usize,
    pub fps: f64,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

/// Renders one warm-up frame and then `frames` timed frames of a random scene.
pub fn run_bench(points: usize, width: usize, height: usize, frames: usize, seed: u64) -> anyhow::Result<BenchReport> {
    if frames == 0 {
        bail!("--frames must be at least 1");
    }
    let (scene, camera) = random_scene(points, seed, width, height);
    let config = RenderConfig::default();
    skinsplat::render(&scene, &camera, &config)?;
    let mut ms = Vec::with_capacity(frames);
    for _ in 0..frames {
        let t = Instant::now();
        skinsplat::render(&scene, &camera, &config)?;
        ms.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let total: f64 = ms.iter().sum();
    let mut sorted = ms.clone();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 0 { (sorted[mid - 1] + sorted[mid]) / 2.0 } else { sorted[mid] };
    Ok(BenchReport {
        points,
        width,
        height,
        frames,
        threads: rayon::current_num_threads(),
        fps: frames as f64 / (total / 1e3),
        mean_ms: total / frames as f64,
        median_ms: median,
        min_ms: sorted[0],
        max_ms: sorted[sorted.len() - 1],
    })
}

pub fn bench(args: &BenchArgs) -> anyhow::Result<()> {
    let report = run_bench(args.points, args.size.width, args.size.height, args.frames, args.seed)?;
    if let Some(p) = &args.out {
        documents::write(p, &report)?;
    }
    println!("{}", serde_json::to_string(&documents::Versioned::new(&report))?);
    Ok(())
}

pub fn serve(args: &ServeArgs) -> anyhow::Result<()> {
    let bundle = SceneBundle::load(&args.scene).with_context(|| format!("loading scene {}", args.scene.display()))?;
    let camera = default_camera(&bundle, args.size.width, args.size.height);
    let session = SessionState::new(bundle, camera)?;
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&args.bind)
            .await
            .with_context(|| format!("binding {}", args.bind))?;
        let addr = listener.local_addr()?;
        log::info!("serving {} on http://{addr}", args.scene.display());
        println!("listening on http://{addr}");
        let app = server::router(server::AppState::new(session, args.clip_root.clone()));
        axum::serve(listener, app).await?;
        Ok(())
    })
}

pub fn play(args: &PlayArgs) -> anyhow::Result<()> {
    let bundle = SceneBundle::load(&args.scene)?;
    let camera = match &args.camera {
        Some(p) => read_camera(p)?,
        None => default_camera(&bundle, args.size.width, args.size.height),
    };
    let clip: MotionClip = read_json(&args.clip)?;
    let session = SessionState::new(bundle, camera)?;
    let start = Instant::now();
    let frames = session.play_clip(&clip, &args.out)?;
    log::info!("rendered {} frames in {:.2?}", frames.len(), start.elapsed());
    println!("{}", frames.len());
    Ok(())
}

/// A one-second stride: legs swing opposite ways and the arms counter-swing.
pub fn example_clip() -> MotionClip {
    let key = |time: f64, swing: f64| ClipKey {
        time,
        pose: PoseUpdate {
            joints: [
                ("left_hip", [-swing, 0.0, 0.0]),
                ("right_hip", [swing, 0.0, 0.0]),
                ("left_knee", [swing.abs(), 0.0, 0.0]),
                ("right_knee", [swing.abs(), 0.0, 0.0]),
                ("left_shoulder", [swing, 0.0, 0.0]),
                ("right_shoulder", [-swing, 0.0, 0.0]),
            ]
            .into_iter()
            .map(|(n, v)| (n.to_string(), v))
            .collect(),
            root_translation: None,
        },
    };
    MotionClip {
        version: 1,
        keys: vec![key(0.0, 0.0), key(0.25, 0.4), key(0.75, -0.4), key(1.0, 0.0)],
        fps: Some(8.0),
        cameras: None,
    }
}

pub fn synth(args: &SynthArgs) -> anyhow::Result<()> {
    let out = &args.out;
    let fixture = fit_fixture()?;
    fixture.truth.save(out.join("truth"))?;
    fixture.initial.save(out.join("init"))?;
    save_frames(out.join("frames"), fixture.training())?;
    save_frames(out.join("held_out"), std::slice::from_ref(fixture.held_out()))?;
    documents::write(&out.join("camera.json"), &fixture.held_out().camera)?;
    write_json(out.join("clip.json"), &example_clip())?;
    write_json(out.join("pose.json"), &fixture.pose)?;
    let paths: Vec<PathBuf> = ["truth", "init", "frames", "held_out"].iter().map(|d| out.join(d)).collect();
    log::info!("wrote {}", paths.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "));
    Ok(())
}

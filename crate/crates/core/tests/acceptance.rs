//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits non-zero
//! if any fails. Runs without the test harness so the lines always show.

use std::time::{Duration, Instant};

use nalgebra::{Matrix3, Matrix4, Rotation3, Vector2, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use skinsplat::align::{default_pnp_guess, project_points, ray_plane_scale};
use skinsplat::fit::optimize;
use skinsplat::fixtures::{
    camera_ring, fit_fixture, random_pose, random_rotation, random_scene, random_unit, stride_pose, synthetic_bundle,
    toy_body,
};
use skinsplat::math::{logit, sigmoid};
use skinsplat::render::{project, render_human_only, sort_by_depth};
use skinsplat::{
    bake, forward_kinematics, lbs, render, render_backward, solve_pnp, solve_scale, Camera, FitConfig, GroundPlane,
    Intrinsics, JointTransforms, Origin, PnpConfig, Pose, RenderConfig, RenderableScene, SkinnedMesh,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn rigid(r: &Matrix3<f64>, t: &Vector3<f64>) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(t);
    m
}

fn apply(m: &Matrix4<f64>, p: &Vector3<f64>) -> Vector3<f64> {
    m.fixed_view::<3, 3>(0, 0) * p + m.fixed_view::<3, 1>(0, 3)
}

/// Reference skinning built from scratch: parent-chain rotations about rest
/// joint positions, blended per vertex.
fn reference_skin(mesh: &SkinnedMesh, pose: &Pose) -> Vec<Vector3<f64>> {
    let rest = mesh.joint_positions();
    let joints = mesh.joints();
    let mut global: Vec<Option<Matrix4<f64>>> = vec![None; joints.len()];
    fn resolve(
        j: usize,
        joints: &[skinsplat::Joint],
        rest: &[Vector3<f64>],
        pose: &Pose,
        global: &mut Vec<Option<Matrix4<f64>>>,
    ) -> Matrix4<f64> {
        if let Some(g) = global[j] {
            return g;
        }
        let r = Rotation3::from_scaled_axis(Vector3::from(pose.joint_rotations[j])).into_inner();
        let g = match joints[j].parent {
            None => rigid(&r, &(rest[j] + Vector3::from(pose.root_translation))),
            Some(p) => resolve(p, joints, rest, pose, global) * rigid(&r, &(rest[j] - rest[p])),
        };
        global[j] = Some(g);
        g
    }
    let skin: Vec<Matrix4<f64>> = (0..joints.len())
        .map(|j| resolve(j, joints, &rest, pose, &mut global) * rigid(&Matrix3::identity(), &(-rest[j])))
        .collect();
    mesh.vertices()
        .iter()
        .zip(mesh.weights())
        .map(|(v, w)| w.iter().map(|&(j, wt)| apply(&skin[j], v) * wt).sum())
        .collect()
}

fn max_dist(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

fn lbs_suite() -> Outcome {
    let start = Instant::now();
    let mesh = toy_body();
    let verts = mesh.vertices();
    let weights = mesh.weights();
    let m = mesh.joint_count();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut unity, mut identity, mut equiv, mut reference) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);

    let zero = forward_kinematics(&mesh, &Pose::zero(m)).unwrap();
    identity = identity.max(max_dist(&lbs(verts, weights, &zero).unwrap(), verts));
    let da = mesh.da_pose(mesh.da_pose_config()).unwrap();
    let da_mesh = lbs(verts, weights, &forward_kinematics(&mesh, &da).unwrap()).unwrap();
    let round = skinsplat::body::pose_from_canonical(&mesh, &da, mesh.da_pose_config()).unwrap();
    identity = identity.max(max_dist(&lbs(verts, weights, &round).unwrap(), &da_mesh));
    reference = reference.max(max_dist(&da_mesh, &reference_skin(&mesh, &da)));

    for _ in 0..1000 {
        let pose = random_pose(&mut rng, m, 1.2, 1.0);
        let fk = forward_kinematics(&mesh, &pose).unwrap();
        let posed = lbs(verts, weights, &fk).unwrap();
        reference = reference.max(max_dist(&posed, &reference_skin(&mesh, &pose)));

        let t = Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let shift = JointTransforms(vec![rigid(&Matrix3::identity(), &t); m]);
        let moved = lbs(verts, weights, &shift).unwrap();
        let expect: Vec<_> = verts.iter().map(|v| v + t).collect();
        unity = unity.max(max_dist(&moved, &expect));

        let pc = skinsplat::body::pose_from_canonical(&mesh, &pose, mesh.da_pose_config()).unwrap();
        identity = identity.max(max_dist(&lbs(verts, weights, &pc).unwrap(), &posed));

        let g = rigid(&random_rotation(&mut rng), &t);
        let moved = lbs(verts, weights, &fk.premultiply(&g)).unwrap();
        let expect: Vec<_> = posed.iter().map(|p| apply(&g, p)).collect();
        equiv = equiv.max(max_dist(&moved, &expect));
    }
    let elapsed = start.elapsed();
    let worst = unity.max(identity).max(equiv).max(reference);
    outcome(
        worst <= 1e-6 && elapsed < Duration::from_secs(10),
        format!(
            "1000 poses, {} vertices: unity {unity:.1e}, round trip {identity:.1e}, equivariance {equiv:.1e}, \
             reference {reference:.1e} (tol 1e-6); {:.2}s (limit 10s)",
            verts.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn texture_suite() -> Outcome {
    let mesh = toy_body();
    let tex = bake(&mesh, 512).unwrap();
    let (mut reproj, mut position, mut wsum, mut negative) = (0.0f64, 0.0f64, 0.0f64, 0usize);
    for v in 0..tex.height() {
        for u in 0..tex.width() {
            let Some(t) = tex.texel(u, v) else { continue };
            let tri = &mesh.triangles()[t.triangle as usize];
            let center = [(u as f64 + 0.5) / 512.0, (v as f64 + 0.5) / 512.0];
            let back: [f64; 2] =
                [0, 1].map(|k| t.bary[0] * tri.uvs[0][k] + t.bary[1] * tri.uvs[1][k] + t.bary[2] * tri.uvs[2][k]);
            reproj = reproj.max((back[0] - center[0]).abs()).max((back[1] - center[1]).abs());
            let p: Vector3<f64> = (0..3).map(|k| mesh.vertices()[tri.indices[k]] * t.bary[k]).sum();
            position = position.max((p - t.position).norm());
            wsum = wsum.max((t.weights.sum() - 1.0).abs());
            negative += t.bary.iter().any(|&b| b < 0.0) as usize;
        }
    }
    let counts: Vec<usize> = [128, 256, 512].iter().map(|&r| bake(&mesh, r).unwrap().valid_count()).collect();
    let increasing = counts.windows(2).all(|w| w[0] < w[1]);
    let deterministic = tex.to_bytes() == bake(&mesh, 512).unwrap().to_bytes();
    outcome(
        reproj <= 1e-6 && position <= 1e-6 && wsum <= 1e-6 && negative == 0 && increasing && deterministic,
        format!(
            "{} valid texels at 512: uv reprojection {reproj:.1e}, position {position:.1e}, weight sum {wsum:.1e} \
             (tol 1e-6); counts {counts:?}; byte-identical rebake {deterministic}",
            tex.valid_count()
        ),
    )
}

fn scale_suite() -> Outcome {
    let z0 = GroundPlane::new(0.0, 0.0, 1.0, 0.0).unwrap();
    let case1 = solve_scale(&Vector3::new(0.0, 0.0, 2.0), &[Vector3::new(0.0, 0.0, 1.0)], &z0).unwrap();
    let case2 = solve_scale(&Vector3::new(0.0, 0.0, 1.0), &[Vector3::new(0.0, 0.0, 0.0)], &z0).unwrap();
    // From C = (0,0,3), a joint at height 3 − 3/s meets z = 0 at scale s.
    let c = Vector3::new(0.0, 0.0, 3.0);
    let joints: Vec<_> = [2.0, 1.5, 3.0].iter().map(|s| Vector3::new(0.3, -0.2, 3.0 - 3.0 / s)).collect();
    let case3 = solve_scale(&c, &joints, &z0).unwrap();
    let analytic = (case1 - 2.0).abs().max((case2 - 1.0).abs()).max((case3 - 1.5).abs());

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut residual = 0.0f64;
    for _ in 0..10_000 {
        let n = random_unit(&mut rng);
        let d = rng.random_range(-3.0..3.0);
        let plane = GroundPlane::new(n.x, n.y, n.z, d).unwrap();
        let on_plane = -n * d + random_perp(&mut rng, &n) * rng.random_range(0.0..4.0);
        let cam = on_plane + random_unit(&mut rng) * rng.random_range(0.5..5.0);
        if plane.signed_distance(&cam).abs() < 1e-3 {
            continue;
        }
        let s_true = rng.random_range(0.2..5.0);
        let joint = cam + (on_plane - cam) / s_true;
        let s = solve_scale(&cam, &[joint], &plane).unwrap();
        let hit = cam + (joint - cam) * s;
        residual = residual.max((n.dot(&hit) + d).abs());
        let per_joint = ray_plane_scale(&cam, &joint, &plane).unwrap();
        residual = residual.max((n.dot(&(cam + (joint - cam) * per_joint)) + d).abs());
    }
    outcome(
        analytic <= 1e-9 && residual < 1e-9,
        format!("analytic cases {case1}, {case2}, {case3} (err {analytic:.1e}); max residual over 1e4 configs {residual:.1e} (tol 1e-9)"),
    )
}

fn random_perp(rng: &mut impl Rng, n: &Vector3<f64>) -> Vector3<f64> {
    let v = random_unit(rng);
    (v - n * n.dot(&v)).normalize()
}

/// Angle of `aᵀb` from the chord length, `‖a − b‖_F = 2√2·sin(θ/2)`, which
/// keeps precision near zero where `acos` does not.
fn rotation_angle(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    2.0 * ((a - b).norm() / (2.0 * 2f64.sqrt())).min(1.0).asin()
}

fn pnp_suite() -> Outcome {
    let mesh = toy_body();
    let joints = mesh.joint_positions();
    let centroid: Vector3<f64> = joints.iter().sum::<Vector3<f64>>() / joints.len() as f64;
    let points: Vec<_> = joints.iter().map(|j| j - centroid).collect();
    let k = Intrinsics { fx: 500.0, fy: 500.0, cx: 320.0, cy: 240.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let (mut rot_err, mut trans_err, mut worst_rms, mut failures) = (0.0f64, 0.0f64, 0.0f64, 0usize);
    for _ in 0..100 {
        let r = random_rotation(&mut rng);
        let t = Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(2.0..5.0));
        let pixels = project_points(&r, &t, &k, &points);
        match solve_pnp(&points, &pixels, &k, default_pnp_guess(), &PnpConfig::default()) {
            Ok(sol) => {
                rot_err = rot_err.max(rotation_angle(&sol.rotation, &r));
                trans_err = trans_err.max((sol.translation - t).norm());
            }
            Err(_) => failures += 1,
        }
        let noisy: Vec<Vector2<f64>> =
            pixels.iter().map(|p| p + Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng))).collect();
        match solve_pnp(&points, &noisy, &k, default_pnp_guess(), &PnpConfig::default()) {
            Ok(sol) => worst_rms = worst_rms.max(sol.rms),
            Err(_) => failures += 1,
        }
    }
    outcome(
        failures == 0 && rot_err <= 1e-4 && trans_err <= 1e-4 && worst_rms <= 2.0,
        format!(
            "100 poses (any rotation, depth 2-5 m, from the default guess): rotation err {rot_err:.1e} rad, translation err \
             {trans_err:.1e} m (tol 1e-4); worst RMS with 1px noise {worst_rms:.2} px (limit 2); failures {failures}"
        ),
    )
}

fn single_splat_case() -> (f64, String) {
    let mut scene = RenderableScene::default();
    let color = Vector3::new(0.8, 0.3, 0.55);
    scene.push(Vector3::new(0.0, 0.0, 3.0), Matrix3::identity() * 0.25, 0.999, color, Origin::Background);
    let camera = Camera {
        fx: 30.0,
        fy: 30.0,
        cx: 16.5,
        cy: 16.5,
        rotation: Matrix3::identity(),
        translation: Vector3::zeros(),
        width: 32,
        height: 32,
        near: 0.01,
    };
    let img = render(&scene, &camera, &RenderConfig::default()).unwrap();
    let px = img.get(16, 16);
    let rel = (0..3).map(|c| (px[c] - color[c]).abs() / color[c]).fold(0.0, f64::max);
    (rel, format!("{px:.4?} vs {:?}", [color.x, color.y, color.z]))
}

/// Per-pixel compositing straight from the sorted splat list, front to back
/// and back to front over the same contributors.
fn reference_composite(scene: &RenderableScene, camera: &Camera, cfg: &RenderConfig) -> (Vec<[f64; 3]>, Vec<[f64; 3]>, f64) {
    let mut proj = project(scene, camera, cfg);
    sort_by_depth(&mut proj.splats);
    let mut front = Vec::new();
    let mut back = Vec::new();
    let mut worst_weight = 0.0f64;
    for y in 0..camera.height as i64 {
        for x in 0..camera.width as i64 {
            let mut t = 1.0;
            let mut c = [0.0; 3];
            let mut used = Vec::new();
            let mut weight_sum = 0.0;
            for s in &proj.splats {
                if !s.contains(x, y) {
                    continue;
                }
                let (g, _) = s.kernel(x, y);
                let a = (s.opacity * g).min(cfg.max_alpha);
                if a <= 0.0 {
                    continue;
                }
                if t * (1.0 - a) < cfg.min_transmittance {
                    break;
                }
                for k in 0..3 {
                    c[k] += s.color[k] * a * t;
                }
                weight_sum += a * t;
                t *= 1.0 - a;
                used.push((a, s.color));
            }
            worst_weight = worst_weight.max(weight_sum);
            let mut b = cfg.background;
            for (a, col) in used.iter().rev() {
                for k in 0..3 {
                    b[k] = col[k] * a + b[k] * (1.0 - a);
                }
            }
            for k in 0..3 {
                c[k] += cfg.background[k] * t;
            }
            front.push(c);
            back.push(b);
        }
    }
    (front, back, worst_weight)
}

fn max_pixel_diff(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    a.iter().zip(b).flat_map(|(p, q)| (0..3).map(move |k| (p[k] - q[k]).abs())).fold(0.0, f64::max)
}

fn renderer_suite() -> Outcome {
    let (single, single_detail) = single_splat_case();
    let cfg = RenderConfig { background: [0.2, 0.4, 0.1], ..RenderConfig::default() };
    let (mut weight, mut alpha_max, mut vs_reference, mut order, mut perm, mut rigid_diff) =
        (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for seed in 0..100 {
        let (scene, camera) = random_scene(300, seed, 48, 40);
        let img = render(&scene, &camera, &cfg).unwrap();
        let (front, back, w) = reference_composite(&scene, &camera, &cfg);
        weight = weight.max(w);
        alpha_max = alpha_max.max(img.alpha.as_ref().unwrap().iter().cloned().fold(0.0, f64::max));
        vs_reference = vs_reference.max(max_pixel_diff(&img.pixels, &front));
        order = order.max(max_pixel_diff(&front, &back));

        let mut idx: Vec<usize> = (0..scene.len()).collect();
        idx.shuffle(&mut rng);
        let mut shuffled = RenderableScene::default();
        for &i in &idx {
            shuffled.push(scene.positions[i], scene.covariances[i], scene.opacities[i], scene.colors[i], scene.origins[i]);
        }
        perm = perm.max(render(&shuffled, &camera, &cfg).unwrap().max_abs_diff(&img));

        let r = random_rotation(&mut rng);
        let t = random_unit(&mut rng) * rng.random_range(0.0..10.0);
        let moved = render(&scene.transformed(&r, &t), &camera.transformed(&r, &t), &cfg).unwrap();
        rigid_diff = rigid_diff.max(moved.max_abs_diff(&img));
    }
    let pass = single <= 0.01 + 1e-12
        && weight <= 1.0
        && alpha_max <= 1.0
        && vs_reference <= 1e-9
        && order <= 1e-5
        && perm <= 1e-6
        && rigid_diff <= 1e-5;
    outcome(
        pass,
        format!(
            "single splat {single_detail} rel err {single:.4} (tol 0.01); 100 scenes: max weight sum {weight:.6}, \
             max alpha {alpha_max:.6} (<= 1); vs per-pixel reference {vs_reference:.1e}; front vs back order \
             {order:.1e} (tol 1e-5); permutation {perm:.1e} (tol 1e-6); rigid {rigid_diff:.1e} (tol 1e-5)"
        ),
    )
}

/// Five large splats covering a 32×32 view.
fn gradient_scene(seed: u64) -> (RenderableScene, Camera) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let camera = Camera {
        fx: 32.0,
        fy: 32.0,
        cx: 16.0,
        cy: 16.0,
        rotation: Matrix3::identity(),
        translation: Vector3::zeros(),
        width: 32,
        height: 32,
        near: 0.01,
    };
    let mut scene = RenderableScene::default();
    for _ in 0..5 {
        let z = rng.random_range(2.0..4.0);
        let p = Vector3::new(rng.random_range(-0.4..0.4) * z, rng.random_range(-0.4..0.4) * z, z);
        let r = random_rotation(&mut rng);
        let s = Vector3::new(rng.random_range(0.1..0.4), rng.random_range(0.1..0.4), rng.random_range(0.1..0.4));
        let cov = r * Matrix3::from_diagonal(&s.component_mul(&s)) * r.transpose();
        let color = Vector3::new(rng.random(), rng.random(), rng.random());
        scene.push(p, cov, rng.random_range(0.2..0.9), color, Origin::Background);
    }
    (scene, camera)
}

fn weighted_sum(scene: &RenderableScene, camera: &Camera, cfg: &RenderConfig, w: &[[f64; 3]]) -> f64 {
    let img = render(scene, camera, cfg).unwrap();
    img.pixels.iter().zip(w).map(|(p, q)| p[0] * q[0] + p[1] * q[1] + p[2] * q[2]).sum()
}

fn gradient_suite() -> Outcome {
    let cfg = RenderConfig::default();
    let h = 1e-4;
    let rel = |a: f64, f: f64| (a - f).abs() / a.abs().max(f.abs()).max(1e-6);
    let (mut worst_color, mut worst_opacity) = (0.0f64, 0.0f64);
    for seed in 0..20 {
        let (scene, camera) = gradient_scene(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let w: Vec<[f64; 3]> = (0..32 * 32)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let grads = render_backward(&scene, &camera, &cfg, &w).unwrap();
        for i in 0..scene.len() {
            for c in 0..3 {
                let mut plus = scene.clone();
                plus.colors[i][c] += h;
                let mut minus = scene.clone();
                minus.colors[i][c] -= h;
                let fd = (weighted_sum(&plus, &camera, &cfg, &w) - weighted_sum(&minus, &camera, &cfg, &w)) / (2.0 * h);
                worst_color = worst_color.max(rel(grads.color[i][c], fd));
            }
            let l = logit(scene.opacities[i]);
            let mut plus = scene.clone();
            plus.opacities[i] = sigmoid(l + h);
            let mut minus = scene.clone();
            minus.opacities[i] = sigmoid(l - h);
            let fd = (weighted_sum(&plus, &camera, &cfg, &w) - weighted_sum(&minus, &camera, &cfg, &w)) / (2.0 * h);
            worst_opacity = worst_opacity.max(rel(grads.opacity_logit[i], fd));
        }
    }
    outcome(
        worst_color < 1e-3 && worst_opacity < 1e-3,
        format!("20 seeds, 5 splats at 32x32, h=1e-4: color rel err {worst_color:.1e}, opacity logit rel err {worst_opacity:.1e} (tol 1e-3)"),
    )
}

fn fit_suite() -> Outcome {
    let start = Instant::now();
    let fx = fit_fixture().unwrap();
    let config = FitConfig::default();
    let result = optimize(fx.initial.clone(), fx.training(), &config).unwrap();
    let held = fx.held_out();
    let psnr = result.bundle.render(&fx.pose, &held.camera).unwrap().psnr(&held.image);
    let ratio = result.final_loss / result.initial_loss;
    let elapsed = start.elapsed();
    outcome(
        psnr >= 30.0 && ratio < 0.1 && elapsed < Duration::from_secs(30 * 60),
        format!(
            "{} texels + {} background splats, 8 views at 64x64, {} iterations (lambda1 {}, lambda2 {}): held-out \
             PSNR {psnr:.2} dB (min 30); loss {:.4} -> {:.4}, ratio {ratio:.3} (max 0.1); {:.0}s on {} thread(s) \
             (limit 30 min)",
            fx.initial.human.len(),
            fx.initial.background.len(),
            config.iterations,
            config.lambda_l1,
            config.lambda_ssim,
            result.initial_loss,
            result.final_loss,
            elapsed.as_secs_f64(),
            rayon::current_num_threads()
        ),
    )
}

fn decoupling_suite() -> Outcome {
    let bundle = synthetic_bundle(84, 500, 7).unwrap();
    let cams = camera_ring(4, 3.0, 1.3, Vector3::new(0.0, 0.9, 0.0), 90.0, 96, 80, 0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let background = bundle.background_scene();
    let (mut worst, mut vs_background, mut outside_pixels) = (0.0f64, 0.0f64, 0usize);
    let mut changed = 0usize;
    for cam in &cams {
        let a = stride_pose(&bundle.mesh);
        let b = random_pose(&mut rng, bundle.mesh.joint_count(), 0.6, 0.3);
        let bg_img = render(&background, cam, &bundle.render).unwrap();
        let scene_a = bundle.scene_at(&a).unwrap();
        let scene_b = bundle.scene_at(&b).unwrap();
        let img_a = render(&scene_a, cam, &bundle.render).unwrap();
        let img_b = render(&scene_b, cam, &bundle.render).unwrap();
        let cover = |s: &RenderableScene| -> Vec<bool> {
            let (img, _) = render_human_only(s, cam, &bundle.render).unwrap();
            img.alpha.unwrap().iter().map(|&v| v > 0.0).collect()
        };
        let (ma, mb) = (cover(&scene_a), cover(&scene_b));
        for i in 0..img_a.pixels.len() {
            let d = (0..3).map(|k| (img_a.pixels[i][k] - img_b.pixels[i][k]).abs()).fold(0.0, f64::max);
            if ma[i] || mb[i] {
                changed += (d > 1e-6) as usize;
                continue;
            }
            outside_pixels += 1;
            worst = worst.max(d);
            let e = (0..3).map(|k| (img_a.pixels[i][k] - bg_img.pixels[i][k]).abs()).fold(0.0, f64::max);
            vs_background = vs_background.max(e);
        }
    }
    outcome(
        worst <= 1e-6 && vs_background <= 1e-6 && changed > 0,
        format!(
            "4 views, pose pairs: max diff outside coverage union {worst:.1e} over {outside_pixels} px, vs \
             background-only {vs_background:.1e} (tol 1e-6); {changed} covered px differ"
        ),
    )
}

fn bench_suite() -> Outcome {
    let (scene, camera) = random_scene(50_000, 9, 256, 256);
    let cfg = RenderConfig::default();
    render(&scene, &camera, &cfg).unwrap();
    let frames = 10;
    let start = Instant::now();
    for _ in 0..frames {
        render(&scene, &camera, &cfg).unwrap();
    }
    let fps = frames as f64 / start.elapsed().as_secs_f64();
    outcome(
        fps >= 5.0,
        format!("50000 splats at 256x256: {fps:.1} FPS over {frames} frames on {} thread(s) (min 5)", rayon::current_num_threads()),
    )
}

fn main() {
    // Accept and ignore libtest flags such as --nocapture or a name filter.
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let suites: [(&str, fn() -> Outcome); 9] = [
        ("lbs", lbs_suite),
        ("position_texture", texture_suite),
        ("scale_solve", scale_suite),
        ("pnp", pnp_suite),
        ("renderer", renderer_suite),
        ("gradients", gradient_suite),
        ("end_to_end_fit", fit_suite),
        ("decoupling", decoupling_suite),
        ("render_throughput", bench_suite),
    ];
    let mut failed = 0;
    for (name, run) in suites {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let o = run();
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += !o.pass as usize;
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

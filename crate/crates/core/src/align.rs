//! Placing the body in the scene: ground-plane RANSAC, iterative PnP from
//! joint correspondences, and the ray–plane scale solve.

use nalgebra::{Matrix3, Matrix6, SymmetricEigen, Vector2, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{axis_angle_to_matrix, is_rotation, skew};

/// Rays whose direction has a smaller plane-normal component count as parallel.
pub const PARALLEL_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundPlane {
    /// Unit normal `(a, b, c)`.
    pub normal: Vector3<f64>,
    /// Offset `d` in `a·x + b·y + c·z + d = 0`.
    pub offset: f64,
}

impl GroundPlane {
    /// Plane from raw coefficients, normalized to a unit normal.
    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Result<Self> {
        let n = Vector3::new(a, b, c);
        let len = n.norm();
        if !(len > 0.0 && len.is_finite() && d.is_finite()) {
            return Err(Error::invalid("plane normal must be finite and non-zero"));
        }
        Ok(GroundPlane {
            normal: n / len,
            offset: d / len,
        })
    }

    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(p) + self.offset
    }

    pub fn coefficients(&self) -> [f64; 4] {
        [self.normal.x, self.normal.y, self.normal.z, self.offset]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlaneFitConfig {
    pub iterations: usize,
    /// Meters; `None` means 2% of the cloud's bounding-box diagonal.
    pub inlier_threshold: Option<f64>,
    pub seed: u64,
}

impl Default for PlaneFitConfig {
    fn default() -> Self {
        PlaneFitConfig {
            iterations: 256,
            inlier_threshold: None,
            seed: 0,
        }
    }
}

fn plane_through(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>, scale: f64) -> Option<GroundPlane> {
    let n = (b - a).cross(&(c - a));
    let len = n.norm();
    if len <= 1e-12 * scale * scale || !len.is_finite() {
        return None;
    }
    let normal = n / len;
    Some(GroundPlane {
        normal,
        offset: -normal.dot(a),
    })
}

/// RANSAC plane fit over 3-point samples followed by a least-squares refit on
/// the inliers of the best sample.
pub fn fit_ground_plane(points: &[Vector3<f64>], config: &PlaneFitConfig) -> Result<GroundPlane> {
    if points.len() < 3 {
        return Err(Error::invalid(format!("plane fit needs at least 3 points, got {}", points.len())));
    }
    let (mut lo, mut hi) = (points[0], points[0]);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let diag = (hi - lo).norm();
    let scale = diag.max(f64::MIN_POSITIVE);
    let threshold = config.inlier_threshold.unwrap_or(0.02 * diag);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = points.len();
    let samples: Vec<[usize; 3]> = (0..config.iterations.max(1))
        .map(|_| {
            if n == 3 {
                return [0, 1, 2];
            }
            let a = rng.random_range(0..n);
            let mut b = rng.random_range(0..n - 1);
            if b >= a {
                b += 1;
            }
            let mut c = rng.random_range(0..n - 2);
            for x in [a.min(b), a.max(b)] {
                if c >= x {
                    c += 1;
                }
            }
            [a, b, c]
        })
        .collect();

    // Best by inlier count; ties go to the lower sample index.
    let best = samples
        .par_iter()
        .enumerate()
        .filter_map(|(i, s)| {
            let plane = plane_through(&points[s[0]], &points[s[1]], &points[s[2]], scale)?;
            let count = points
                .iter()
                .filter(|p| plane.signed_distance(p).abs() <= threshold)
                .count();
            Some((count, i, plane))
        })
        .reduce_with(|a, b| if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a });
    let Some((_, _, candidate)) = best else {
        return Err(Error::NoPlane);
    };

    let inliers: Vec<&Vector3<f64>> = points
        .iter()
        .filter(|p| candidate.signed_distance(p).abs() <= threshold)
        .collect();
    let mut plane = refit(&inliers).unwrap_or(candidate);

    // Orientation: most off-plane points on the positive side.
    let (mut above, mut below, mut total) = (0usize, 0usize, 0.0);
    for p in points {
        let d = plane.signed_distance(p);
        total += d;
        if d > threshold {
            above += 1;
        } else if d < -threshold {
            below += 1;
        }
    }
    let flip = if above != below {
        below > above
    } else if total.abs() > 1e-12 * scale * n as f64 {
        total < 0.0
    } else {
        let k = plane.normal.iamax();
        plane.normal[k] < 0.0
    };
    if flip {
        plane.normal = -plane.normal;
        plane.offset = -plane.offset;
    }
    Ok(plane)
}

fn refit(points: &[&Vector3<f64>]) -> Option<GroundPlane> {
    if points.len() < 3 {
        return None;
    }
    let centroid = points.iter().fold(Vector3::zeros(), |acc, p| acc + *p) / points.len() as f64;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = *p - centroid;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let k = eig.eigenvalues.imin();
    let normal = eig.eigenvectors.column(k).into_owned();
    if !normal.iter().all(|c| c.is_finite()) {
        return None;
    }
    Some(GroundPlane {
        normal,
        offset: -normal.dot(&centroid),
    })
}

/// Ray–plane scale for one joint: `s = −(A·C + d) / (A·(J − C))`. `None` when
/// the ray is parallel to the plane.
pub fn ray_plane_scale(camera_center: &Vector3<f64>, joint: &Vector3<f64>, plane: &GroundPlane) -> Option<f64> {
    let denom = plane.normal.dot(&(joint - camera_center));
    if denom.abs() < PARALLEL_EPS {
        return None;
    }
    Some(-(plane.normal.dot(camera_center) + plane.offset) / denom)
}

/// Smallest positive per-joint ray–plane scale.
pub fn solve_scale(camera_center: &Vector3<f64>, joints: &[Vector3<f64>], plane: &GroundPlane) -> Result<f64> {
    if joints.is_empty() {
        return Err(Error::invalid("scale solve needs at least one joint"));
    }
    if plane.signed_distance(camera_center).abs() < PARALLEL_EPS {
        return Err(Error::invalid("camera center lies on the ground plane"));
    }
    let scales: Vec<f64> = joints
        .iter()
        .filter_map(|j| ray_plane_scale(camera_center, j, plane))
        .filter(|&s| s > 0.0)
        .collect();
    if scales.len() < joints.len() {
        log::warn!(
            "{} of {} joint rays miss the ground plane in front of the camera; the body may not be standing on it",
            joints.len() - scales.len(),
            joints.len()
        );
    }
    scales.into_iter().reduce(f64::min).ok_or(Error::NoScale)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn project(&self, p: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }
}

/// Pixel projections of `points` under the body-to-camera pose `(rotation, translation)`.
pub fn project_points(
    rotation: &Matrix3<f64>,
    translation: &Vector3<f64>,
    intrinsics: &Intrinsics,
    points: &[Vector3<f64>],
) -> Vec<Vector2<f64>> {
    points
        .iter()
        .map(|p| intrinsics.project(&(rotation * p + translation)))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PnpConfig {
    pub max_iterations: usize,
    pub step_tolerance: f64,
    /// Also start from the initial rotation turned a quarter or half turn
    /// about each body axis, keeping the lowest-cost result. Planar point sets
    /// (a T-posed skeleton) have a mirrored local minimum that a single start
    /// can fall into.
    pub restarts: bool,
}

impl Default for PnpConfig {
    fn default() -> Self {
        PnpConfig {
            max_iterations: 100,
            step_tolerance: 1e-8,
            restarts: true,
        }
    }
}

/// Body-to-camera pose: `x_cam = rotation · x + translation`.
#[derive(Clone, Debug, PartialEq)]
pub struct PnpSolution {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    /// Root-mean-square pixel reprojection error.
    pub rms: f64,
    pub iterations: usize,
    /// Sum of squared residuals before the first and after every accepted step.
    pub cost_history: Vec<f64>,
}

/// Default starting pose: identity rotation, body 2 m in front of the camera.
pub fn default_pnp_guess() -> (Matrix3<f64>, Vector3<f64>) {
    (Matrix3::identity(), Vector3::new(0.0, 0.0, 2.0))
}

fn reprojection_cost(
    rotation: &Matrix3<f64>,
    translation: &Vector3<f64>,
    intrinsics: &Intrinsics,
    points: &[Vector3<f64>],
    pixels: &[Vector2<f64>],
) -> Option<f64> {
    let mut cost = 0.0;
    for (p, u) in points.iter().zip(pixels) {
        let c = rotation * p + translation;
        if c.z <= 1e-9 {
            return None;
        }
        cost += (intrinsics.project(&c) - u).norm_squared();
    }
    Some(cost)
}

/// Gauss–Newton PnP on squared pixel error with step backtracking and a
/// damped fallback when the normal equations are ill conditioned. The cost
/// history belongs to the run that produced the returned pose.
pub fn solve_pnp(
    points: &[Vector3<f64>],
    pixels: &[Vector2<f64>],
    intrinsics: &Intrinsics,
    initial: (Matrix3<f64>, Vector3<f64>),
    config: &PnpConfig,
) -> Result<PnpSolution> {
    if points.len() != pixels.len() {
        return Err(Error::invalid("PnP needs one pixel per 3D point"));
    }
    if points.len() < 4 {
        return Err(Error::invalid(format!("PnP needs at least 4 correspondences, got {}", points.len())));
    }
    if !is_rotation(&initial.0, 1e-6) {
        return Err(Error::invalid("initial PnP rotation is not a rotation"));
    }
    let first = gauss_newton(points, pixels, intrinsics, initial, config);
    if !config.restarts {
        return first;
    }
    let mut best = first.as_ref().ok().cloned();
    for axis in [Vector3::x(), Vector3::y(), Vector3::z()] {
        for angle in [std::f64::consts::FRAC_PI_2, -std::f64::consts::FRAC_PI_2, std::f64::consts::PI] {
            let start = (initial.0 * axis_angle_to_matrix(&(axis * angle)), initial.1);
            let Ok(sol) = gauss_newton(points, pixels, intrinsics, start, config) else { continue };
            if best.as_ref().is_none_or(|b| sol.rms < b.rms) {
                best = Some(sol);
            }
        }
    }
    best.map_or(first, Ok)
}

fn gauss_newton(
    points: &[Vector3<f64>],
    pixels: &[Vector2<f64>],
    intrinsics: &Intrinsics,
    initial: (Matrix3<f64>, Vector3<f64>),
    config: &PnpConfig,
) -> Result<PnpSolution> {
    let (mut rot, mut trans) = initial;
    let mut cost = reprojection_cost(&rot, &trans, intrinsics, points, pixels)
        .ok_or_else(|| Error::Degenerate("points behind the camera at the initial guess".into()))?;
    let mut history = vec![cost];
    let mut iterations = 0;

    while iterations < config.max_iterations {
        iterations += 1;
        let mut h = Matrix6::zeros();
        let mut g = Vector6::zeros();
        for (p, u) in points.iter().zip(pixels) {
            let rp = rot * p;
            let c = rp + trans;
            let (iz, iz2) = (1.0 / c.z, 1.0 / (c.z * c.z));
            let dproj = nalgebra::Matrix2x3::new(
                intrinsics.fx * iz, 0.0, -intrinsics.fx * c.x * iz2,
                0.0, intrinsics.fy * iz, -intrinsics.fy * c.y * iz2,
            );
            // d(R p)/dω for the left perturbation exp(ω)·R is −[Rp]×.
            let mut dc = nalgebra::Matrix3x6::zeros();
            dc.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-skew(&rp)));
            dc.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
            let jac = dproj * dc;
            let r = intrinsics.project(&c) - u;
            h += jac.transpose() * jac;
            g += jac.transpose() * r;
        }
        let step = solve_normal_equations(&h, &g)?;
        if step.norm() < config.step_tolerance {
            break;
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let d = step * alpha;
            let cand_rot = axis_angle_to_matrix(&d.fixed_rows::<3>(0).into_owned()) * rot;
            let cand_trans = trans + d.fixed_rows::<3>(3);
            if let Some(c) = reprojection_cost(&cand_rot, &cand_trans, intrinsics, points, pixels) {
                if c <= cost {
                    accepted = Some((cand_rot, cand_trans, c, d.norm()));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((r, t, c, norm)) = accepted else { break };
        rot = r;
        trans = t;
        cost = c;
        history.push(cost);
        if norm < config.step_tolerance {
            break;
        }
    }
    Ok(PnpSolution {
        rotation: orthonormalize(&rot),
        translation: trans,
        rms: (cost / points.len() as f64).sqrt(),
        iterations,
        cost_history: history,
    })
}

fn solve_normal_equations(h: &Matrix6<f64>, g: &Vector6<f64>) -> Result<Vector6<f64>> {
    let eig = SymmetricEigen::new(*h);
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(max > 0.0) || !max.is_finite() || min <= 1e-14 * max {
        return Err(Error::Degenerate(format!(
            "singular PnP normal equations (eigenvalues {min:e}..{max:e})"
        )));
    }
    if let Some(chol) = h.cholesky() {
        return Ok(-chol.solve(g));
    }
    let mut damping = 1e-9 * max;
    for _ in 0..12 {
        if let Some(chol) = (h + Matrix6::identity() * damping).cholesky() {
            return Ok(-chol.solve(g));
        }
        damping *= 10.0;
    }
    Err(Error::Degenerate("PnP normal equations not positive definite".into()))
}

fn orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = r.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut m = u * vt;
    if m.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        m = u * vt;
    }
    m
}

/// Similarity placing body-space points in scene coordinates: `x ↦ s·R·x + t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneAlignment {
    #[serde(with = "crate::io::row_major")]
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub scale: f64,
}

impl Default for SceneAlignment {
    fn default() -> Self {
        SceneAlignment {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            scale: 1.0,
        }
    }
}

impl SceneAlignment {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>, scale: f64) -> Result<Self> {
        if !is_rotation(&rotation, 1e-6) {
            return Err(Error::invalid("alignment rotation is not orthonormal with det +1"));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::invalid(format!("alignment scale {scale} must be positive")));
        }
        Ok(SceneAlignment {
            rotation,
            translation,
            scale,
        })
    }

    pub fn validate(&self) -> Result<()> {
        SceneAlignment::new(self.rotation, self.translation, self.scale).map(|_| ())
    }

    pub fn apply_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p * self.scale + self.translation
    }

    /// `G ∘ self` for a rigid motion `G = (rotation, translation)`.
    pub fn then_rigid(&self, rotation: &Matrix3<f64>, translation: &Vector3<f64>) -> SceneAlignment {
        SceneAlignment {
            rotation: rotation * self.rotation,
            translation: rotation * self.translation + translation,
            scale: self.scale,
        }
    }
}

pub fn apply_alignment(alignment: &SceneAlignment, points: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    points.iter().map(|p| alignment.apply_point(p)).collect()
}

/// Scene placement of the body given the PnP body-to-camera pose, the scene
/// camera's world-to-camera extrinsics and the ground plane. Returns the
/// alignment with the scale chosen from the joints' ray–plane intersections.
pub fn align_to_scene(
    pnp: &PnpSolution,
    camera_rotation: &Matrix3<f64>,
    camera_translation: &Vector3<f64>,
    joints: &[Vector3<f64>],
    plane: &GroundPlane,
) -> Result<SceneAlignment> {
    let rct = camera_rotation.transpose();
    let center = -(rct * camera_translation);
    let world: Vec<Vector3<f64>> = joints
        .iter()
        .map(|j| rct * (pnp.rotation * j + pnp.translation) + center)
        .collect();
    let s = solve_scale(&center, &world, plane)?;
    SceneAlignment::new(rct * pnp.rotation, center + rct * pnp.translation * s, s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scale_on_axis_example() {
        let plane = GroundPlane::new(0.0, 0.0, 1.0, 0.0).unwrap();
        let s = solve_scale(&Vector3::new(0.0, 0.0, 2.0), &[Vector3::new(0.0, 0.0, 1.0)], &plane).unwrap();
        assert!((s - 2.0).abs() < 1e-12);
        let s = solve_scale(&Vector3::new(0.0, 0.0, 1.0), &[Vector3::zeros()], &plane).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scale_picks_minimum_positive() {
        let plane = GroundPlane::new(0.0, 0.0, 1.0, 0.0).unwrap();
        let c = Vector3::new(0.0, 0.0, 3.0);
        // s = 3 / (3 − z): z = 1 → 1.5, z = 1.5 → 2, z = 2 → 3.
        let joints = [Vector3::new(0.2, 0.0, 1.5), Vector3::new(0.0, 0.1, 1.0), Vector3::new(0.0, 0.0, 2.0)];
        assert!((solve_scale(&c, &joints, &plane).unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn scale_errors() {
        let plane = GroundPlane::new(0.0, 0.0, 1.0, 0.0).unwrap();
        let c = Vector3::new(0.0, 0.0, 1.0);
        // Parallel ray and a ray pointing away from the plane.
        let joints = [Vector3::new(1.0, 0.0, 1.0), Vector3::new(0.0, 0.0, 2.0)];
        assert!(matches!(solve_scale(&c, &joints, &plane), Err(Error::NoScale)));
        assert!(solve_scale(&c, &[], &plane).is_err());
        assert!(solve_scale(&Vector3::zeros(), &[Vector3::new(0.0, 0.0, -1.0)], &plane).is_err());
    }

    #[test]
    fn plane_through_three_points() {
        let pts = [Vector3::new(0.0, 0.0, 1.0), Vector3::new(1.0, 0.0, 1.0), Vector3::new(0.0, 1.0, 1.0)];
        let plane = fit_ground_plane(&pts, &PlaneFitConfig::default()).unwrap();
        for p in &pts {
            assert!(plane.signed_distance(p).abs() < 1e-12);
        }
    }

    #[test]
    fn plane_fit_rejects_collinear_and_tiny_input() {
        let line: Vec<_> = (0..10).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
        assert!(matches!(fit_ground_plane(&line, &PlaneFitConfig::default()), Err(Error::NoPlane)));
        assert!(fit_ground_plane(&line[..2], &PlaneFitConfig::default()).is_err());
    }

    #[test]
    fn pnp_needs_four_points() {
        let pts = vec![Vector3::new(0.0, 0.0, 0.0); 3];
        let px = vec![Vector2::new(0.0, 0.0); 3];
        let k = Intrinsics { fx: 500.0, fy: 500.0, cx: 320.0, cy: 240.0 };
        assert!(solve_pnp(&pts, &px, &k, default_pnp_guess(), &PnpConfig::default()).is_err());
    }

    #[test]
    fn pnp_coincident_points_are_degenerate() {
        let pts = vec![Vector3::new(0.1, 0.2, 0.0); 6];
        let k = Intrinsics { fx: 500.0, fy: 500.0, cx: 320.0, cy: 240.0 };
        let px = vec![Vector2::new(300.0, 200.0); 6];
        assert!(matches!(
            solve_pnp(&pts, &px, &k, default_pnp_guess(), &PnpConfig::default()),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn pnp_exact_guess_converges_immediately() {
        let k = Intrinsics { fx: 500.0, fy: 500.0, cx: 320.0, cy: 240.0 };
        let pts: Vec<_> = (0..8)
            .map(|i| Vector3::new((i % 2) as f64 - 0.5, ((i / 2) % 2) as f64 - 0.5, (i / 4) as f64 - 0.5))
            .collect();
        let (r, t) = default_pnp_guess();
        let px = project_points(&r, &t, &k, &pts);
        let sol = solve_pnp(&pts, &px, &k, (r, t), &PnpConfig::default()).unwrap();
        assert_eq!(sol.iterations, 1);
        assert_eq!(sol.rms, 0.0);
    }

    #[test]
    fn identity_alignment_is_identity() {
        let pts = vec![Vector3::new(1.0, -2.0, 3.5)];
        assert_eq!(apply_alignment(&SceneAlignment::default(), &pts), pts);
        assert!(SceneAlignment::new(Matrix3::identity(), Vector3::zeros(), -1.0).is_err());
    }
}

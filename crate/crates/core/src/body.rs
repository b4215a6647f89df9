//! Generic skinned body model: joint hierarchy, forward kinematics, linear
//! blend skinning and the canonical (Da) pose.
//!
//! The joint count is data driven. Any skinned mesh with UVs and a single-rooted
//! joint forest works, which covers human (SMPL-style) and quadruped rigs alike.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{Matrix4, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{axis_angle_to_matrix, invert_rigid, rigid, vec3};

/// Maximum number of joints kept per vertex after loading.
pub const MAX_INFLUENCES: usize = 8;

/// Tolerance for weight rows handed to [`lbs`].
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-4;

/// Sparse skinning weights of one point: `(joint index, weight)` pairs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SkinWeights(pub Vec<(usize, f64)>);

impl SkinWeights {
    pub fn single(joint: usize) -> Self {
        SkinWeights(vec![(joint, 1.0)])
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().map(|&(_, w)| w).sum()
    }

    pub fn get(&self, joint: usize) -> f64 {
        self.0
            .iter()
            .filter(|&&(j, _)| j == joint)
            .map(|&(_, w)| w)
            .sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &(usize, f64)> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Merge duplicate joints, drop non-positive entries, keep the `max_len`
    /// largest and rescale to unit sum. Entries end up sorted by joint index.
    pub fn normalized(&self, max_len: usize) -> Result<Self> {
        let mut merged: BTreeMap<usize, f64> = BTreeMap::new();
        for &(j, w) in &self.0 {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::invalid(format!("skinning weight {w} on joint {j}")));
            }
            *merged.entry(j).or_default() += w;
        }
        let mut entries: Vec<(usize, f64)> = merged.into_iter().filter(|&(_, w)| w > 0.0).collect();
        if entries.len() > max_len {
            entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            entries.truncate(max_len);
            entries.sort_by_key(|e| e.0);
        }
        let total: f64 = entries.iter().map(|e| e.1).sum();
        if total <= 0.0 {
            return Err(Error::invalid("skinning weight row sums to zero"));
        }
        for e in &mut entries {
            e.1 /= total;
        }
        Ok(SkinWeights(entries))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub name: String,
    pub parent: Option<usize>,
    /// Rest-pose position in meters.
    pub position: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Triangle {
    pub indices: [usize; 3],
    pub uvs: [[f64; 2]; 3],
}

/// One hip (or other) joint rotation applied to reach the canonical pose.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DaPoseJoint {
    pub name: String,
    pub angle_degrees: f64,
}

/// Canonical-pose definition: named joints rotated about the body's forward axis.
///
/// The default abducts `left_hip` by +30° and `right_hip` by −30° about +Z for a
/// Y-up rig facing +Z.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DaPoseConfig {
    pub forward_axis: [f64; 3],
    pub joints: Vec<DaPoseJoint>,
}

impl Default for DaPoseConfig {
    fn default() -> Self {
        DaPoseConfig {
            forward_axis: [0.0, 0.0, 1.0],
            joints: vec![
                DaPoseJoint {
                    name: "left_hip".into(),
                    angle_degrees: 30.0,
                },
                DaPoseJoint {
                    name: "right_hip".into(),
                    angle_degrees: -30.0,
                },
            ],
        }
    }
}

/// Body pose: per-joint axis-angle rotations plus a root translation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub joint_rotations: Vec<[f64; 3]>,
    #[serde(default)]
    pub root_translation: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape_coeffs: Option<Vec<f64>>,
}

impl Pose {
    pub fn zero(joint_count: usize) -> Self {
        Pose {
            joint_rotations: vec![[0.0; 3]; joint_count],
            root_translation: [0.0; 3],
            shape_coeffs: None,
        }
    }

    /// Componentwise linear blend of two poses in axis-angle space.
    pub fn lerp(&self, other: &Pose, t: f64) -> Result<Pose> {
        if self.joint_rotations.len() != other.joint_rotations.len() {
            return Err(Error::invalid("cannot interpolate poses with different joint counts"));
        }
        let mix = |a: &[f64; 3], b: &[f64; 3]| -> [f64; 3] {
            [
                a[0] + (b[0] - a[0]) * t,
                a[1] + (b[1] - a[1]) * t,
                a[2] + (b[2] - a[2]) * t,
            ]
        };
        Ok(Pose {
            joint_rotations: self
                .joint_rotations
                .iter()
                .zip(&other.joint_rotations)
                .map(|(a, b)| mix(a, b))
                .collect(),
            root_translation: mix(&self.root_translation, &other.root_translation),
            shape_coeffs: self.shape_coeffs.clone(),
        })
    }
}

/// Per-joint rigid transforms that map rest-pose points directly to posed space.
#[derive(Clone, Debug, PartialEq)]
pub struct JointTransforms(pub Vec<Matrix4<f64>>);

impl JointTransforms {
    pub fn identity(joint_count: usize) -> Self {
        JointTransforms(vec![Matrix4::identity(); joint_count])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Left-multiply every transform by `g`.
    pub fn premultiply(&self, g: &Matrix4<f64>) -> Self {
        JointTransforms(self.0.iter().map(|m| g * m).collect())
    }

    /// Blend of the transforms under one weight row.
    pub fn blend(&self, weights: &SkinWeights) -> Matrix4<f64> {
        let mut m = Matrix4::zeros();
        for &(j, w) in weights.iter() {
            m += self.0[j] * w;
        }
        m
    }
}

/// Skinned mesh with UVs and a joint hierarchy.
#[derive(Clone, Debug, PartialEq)]
pub struct SkinnedMesh {
    vertices: Vec<Vector3<f64>>,
    triangles: Vec<Triangle>,
    weights: Vec<SkinWeights>,
    joints: Vec<Joint>,
    shape_dirs: Option<Vec<Vec<[f64; 3]>>>,
    da_pose: DaPoseConfig,
    /// Joint indices ordered parents-first.
    order: Vec<usize>,
}

/// On-disk JSON form of a [`SkinnedMesh`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MeshDocument {
    #[serde(default = "one")]
    pub version: u32,
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<Triangle>,
    pub weights: Vec<SkinWeights>,
    pub joints: Vec<Joint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape_dirs: Option<Vec<Vec<[f64; 3]>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub da_pose: Option<DaPoseConfig>,
}

/// Skinning data that accompanies an OBJ file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WeightsDocument {
    #[serde(default = "one")]
    pub version: u32,
    pub weights: Vec<SkinWeights>,
    pub joints: Vec<Joint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape_dirs: Option<Vec<Vec<[f64; 3]>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub da_pose: Option<DaPoseConfig>,
}

fn one() -> u32 {
    1
}

pub const MESH_SCHEMA_VERSION: u32 = 1;

impl SkinnedMesh {
    pub fn new(
        vertices: Vec<Vector3<f64>>,
        triangles: Vec<Triangle>,
        weights: Vec<SkinWeights>,
        joints: Vec<Joint>,
    ) -> Result<Self> {
        let order = joint_order(&joints)?;
        if weights.len() != vertices.len() {
            return Err(Error::invalid(format!(
                "{} weight rows for {} vertices",
                weights.len(),
                vertices.len()
            )));
        }
        if vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::invalid("non-finite vertex position"));
        }
        for (t, tri) in triangles.iter().enumerate() {
            if let Some(&i) = tri.indices.iter().find(|&&i| i >= vertices.len()) {
                return Err(Error::invalid(format!("triangle {t} references vertex {i}")));
            }
            for uv in &tri.uvs {
                if !(0.0..=1.0).contains(&uv[0]) || !(0.0..=1.0).contains(&uv[1]) {
                    return Err(Error::invalid(format!(
                        "triangle {t} has UV ({}, {}) outside [0,1]²",
                        uv[0], uv[1]
                    )));
                }
            }
        }
        let weights = weights
            .iter()
            .enumerate()
            .map(|(v, w)| {
                if let Some(&(j, _)) = w.iter().find(|&&(j, _)| j >= joints.len()) {
                    return Err(Error::invalid(format!("vertex {v} weighted to joint {j}")));
                }
                w.normalized(MAX_INFLUENCES)
                    .map_err(|e| Error::invalid(format!("vertex {v}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SkinnedMesh {
            vertices,
            triangles,
            weights,
            joints,
            shape_dirs: None,
            da_pose: DaPoseConfig::default(),
            order,
        })
    }

    pub fn with_shape_dirs(mut self, dirs: Vec<Vec<[f64; 3]>>) -> Result<Self> {
        if dirs.len() != self.vertices.len() {
            return Err(Error::invalid("shape_dirs needs one row per vertex"));
        }
        let k = dirs.first().map_or(0, |r| r.len());
        if dirs.iter().any(|r| r.len() != k) {
            return Err(Error::invalid("shape_dirs rows differ in length"));
        }
        self.shape_dirs = Some(dirs);
        Ok(self)
    }

    pub fn with_da_pose(mut self, config: DaPoseConfig) -> Self {
        self.da_pose = config;
        self
    }

    pub fn from_document(doc: MeshDocument) -> Result<Self> {
        if doc.version != MESH_SCHEMA_VERSION {
            return Err(Error::format("mesh", format!("unsupported version {}", doc.version)));
        }
        let mut mesh = SkinnedMesh::new(
            doc.vertices.into_iter().map(vec3).collect(),
            doc.triangles,
            doc.weights,
            doc.joints,
        )?;
        if let Some(dirs) = doc.shape_dirs {
            mesh = mesh.with_shape_dirs(dirs)?;
        }
        if let Some(da) = doc.da_pose {
            mesh = mesh.with_da_pose(da);
        }
        Ok(mesh)
    }

    pub fn to_document(&self) -> MeshDocument {
        MeshDocument {
            version: MESH_SCHEMA_VERSION,
            vertices: self.vertices.iter().map(|v| [v.x, v.y, v.z]).collect(),
            triangles: self.triangles.clone(),
            weights: self.weights.clone(),
            joints: self.joints.clone(),
            shape_dirs: self.shape_dirs.clone(),
            da_pose: Some(self.da_pose.clone()),
        }
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_document(serde_json::from_str(&text)?)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(&self.to_document())?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Wavefront OBJ geometry (`v`, `vt`, `f v/vt ...`) merged with a weights document.
    pub fn from_obj(obj_text: &str, weights: WeightsDocument) -> Result<Self> {
        let mut positions = Vec::new();
        let mut uvs: Vec<[f64; 2]> = Vec::new();
        let mut triangles = Vec::new();
        for (lineno, line) in obj_text.lines().enumerate() {
            let mut it = line.split_whitespace();
            let bad = |what: &str| Error::format("obj", format!("line {}: {what}", lineno + 1));
            match it.next() {
                Some("v") => {
                    let c: Vec<f64> = it.take(3).map(str::parse).collect::<Result<_, _>>().map_err(|_| bad("bad vertex"))?;
                    if c.len() != 3 {
                        return Err(bad("vertex needs 3 coordinates"));
                    }
                    positions.push(Vector3::new(c[0], c[1], c[2]));
                }
                Some("vt") => {
                    let c: Vec<f64> = it.take(2).map(str::parse).collect::<Result<_, _>>().map_err(|_| bad("bad uv"))?;
                    if c.len() != 2 {
                        return Err(bad("texture coordinate needs 2 components"));
                    }
                    uvs.push([c[0], c[1]]);
                }
                Some("f") => {
                    let mut corners = Vec::new();
                    for tok in it {
                        let mut parts = tok.split('/');
                        let v = parse_obj_index(parts.next(), positions.len()).ok_or_else(|| bad("bad face vertex"))?;
                        let t = parse_obj_index(parts.next(), uvs.len()).ok_or_else(|| bad("face corner without uv"))?;
                        corners.push((v, t));
                    }
                    if corners.len() < 3 {
                        return Err(bad("face with fewer than 3 corners"));
                    }
                    for k in 1..corners.len() - 1 {
                        let c = [corners[0], corners[k], corners[k + 1]];
                        triangles.push(Triangle {
                            indices: [c[0].0, c[1].0, c[2].0],
                            uvs: [uvs[c[0].1], uvs[c[1].1], uvs[c[2].1]],
                        });
                    }
                }
                _ => {}
            }
        }
        let mut mesh = SkinnedMesh::new(positions, triangles, weights.weights, weights.joints)?;
        if let Some(dirs) = weights.shape_dirs {
            mesh = mesh.with_shape_dirs(dirs)?;
        }
        if let Some(da) = weights.da_pose {
            mesh = mesh.with_da_pose(da);
        }
        Ok(mesh)
    }

    pub fn load_obj(obj: impl AsRef<Path>, weights_json: impl AsRef<Path>) -> Result<Self> {
        let (obj, wj) = (obj.as_ref(), weights_json.as_ref());
        let text = std::fs::read_to_string(obj).map_err(|e| Error::io(obj, e))?;
        let wtext = std::fs::read_to_string(wj).map_err(|e| Error::io(wj, e))?;
        Self::from_obj(&text, serde_json::from_str(&wtext)?)
    }

    pub fn vertices(&self) -> &[Vector3<f64>] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[Triangle] {
        &self.triangles
    }

    pub fn weights(&self) -> &[SkinWeights] {
        &self.weights
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    pub fn root(&self) -> usize {
        self.order[0]
    }

    pub fn da_pose_config(&self) -> &DaPoseConfig {
        &self.da_pose
    }

    pub fn joint_positions(&self) -> Vec<Vector3<f64>> {
        self.joints.iter().map(|j| vec3(j.position)).collect()
    }

    /// Rest vertices displaced by the shape basis. Without a basis, `beta` is
    /// ignored and a warning is logged.
    pub fn shaped_vertices(&self, beta: Option<&[f64]>) -> Vec<Vector3<f64>> {
        let Some(beta) = beta.filter(|b| !b.is_empty()) else {
            return self.vertices.clone();
        };
        let Some(dirs) = &self.shape_dirs else {
            log::warn!("shape coefficients given but the mesh has no shape basis; ignoring them");
            return self.vertices.clone();
        };
        self.vertices
            .iter()
            .zip(dirs)
            .map(|(v, row)| {
                let mut out = *v;
                for (b, d) in beta.iter().zip(row) {
                    out += vec3(*d) * *b;
                }
                out
            })
            .collect()
    }

    /// Canonical pose as a [`Pose`].
    pub fn da_pose(&self, config: &DaPoseConfig) -> Result<Pose> {
        let axis = vec3(config.forward_axis);
        let norm = axis.norm();
        if norm < 1e-12 {
            return Err(Error::invalid("Da-pose forward axis is zero"));
        }
        let axis = axis / norm;
        let mut pose = Pose::zero(self.joint_count());
        for dj in &config.joints {
            let j = self
                .joint_index(&dj.name)
                .ok_or_else(|| Error::invalid(format!("Da-pose joint `{}` not in skeleton", dj.name)))?;
            let v = axis * dj.angle_degrees.to_radians();
            pose.joint_rotations[j] = [v.x, v.y, v.z];
        }
        Ok(pose)
    }
}

fn parse_obj_index(tok: Option<&str>, len: usize) -> Option<usize> {
    let i: i64 = tok?.parse().ok()?;
    let idx = if i < 0 { len as i64 + i } else { i - 1 };
    (0..len as i64).contains(&idx).then_some(idx as usize)
}

/// Parents-first order; requires a forest with exactly one root and no cycles.
fn joint_order(joints: &[Joint]) -> Result<Vec<usize>> {
    if joints.is_empty() {
        return Err(Error::invalid("skeleton has no joints"));
    }
    let roots: Vec<usize> = (0..joints.len()).filter(|&j| joints[j].parent.is_none()).collect();
    if roots.len() != 1 {
        return Err(Error::invalid(format!("skeleton has {} roots, expected 1", roots.len())));
    }
    let mut children = vec![Vec::new(); joints.len()];
    for (j, joint) in joints.iter().enumerate() {
        if let Some(p) = joint.parent {
            if p >= joints.len() {
                return Err(Error::invalid(format!("joint {j} has parent {p} out of range")));
            }
            children[p].push(j);
        }
    }
    let mut order = Vec::with_capacity(joints.len());
    let mut stack = vec![roots[0]];
    while let Some(j) = stack.pop() {
        order.push(j);
        stack.extend(children[j].iter().rev());
    }
    if order.len() != joints.len() {
        return Err(Error::invalid("joint hierarchy contains a cycle"));
    }
    Ok(order)
}

/// World transforms of every joint, already composed with the inverse rest
/// transform so they apply directly to rest-pose points.
pub fn forward_kinematics(mesh: &SkinnedMesh, pose: &Pose) -> Result<JointTransforms> {
    let m = mesh.joint_count();
    if pose.joint_rotations.len() != m {
        return Err(Error::invalid(format!(
            "pose has {} joint rotations, skeleton has {m} joints",
            pose.joint_rotations.len()
        )));
    }
    let rest = mesh.joint_positions();
    let mut global = vec![Matrix4::identity(); m];
    for &j in &mesh.order {
        let rot = axis_angle_to_matrix(&vec3(pose.joint_rotations[j]));
        global[j] = match mesh.joints[j].parent {
            None => rigid(&rot, &(rest[j] + vec3(pose.root_translation))),
            Some(p) => global[p] * rigid(&rot, &(rest[j] - rest[p])),
        };
    }
    Ok(JointTransforms(
        global
            .iter()
            .zip(&rest)
            .map(|(g, r)| g * rigid(&nalgebra::Matrix3::identity(), &(-r)))
            .collect(),
    ))
}

/// Linear blend skinning of `points` under `transforms`.
pub fn lbs(
    points: &[Vector3<f64>],
    weights: &[SkinWeights],
    transforms: &JointTransforms,
) -> Result<Vec<Vector3<f64>>> {
    if points.len() != weights.len() {
        return Err(Error::invalid(format!(
            "{} points but {} weight rows",
            points.len(),
            weights.len()
        )));
    }
    for (i, w) in weights.iter().enumerate() {
        if (w.sum() - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(Error::invalid(format!("weight row {i} sums to {}", w.sum())));
        }
        if w.iter().any(|&(j, wt)| j >= transforms.len() || wt < 0.0) {
            return Err(Error::invalid(format!("weight row {i} has a bad joint or negative weight")));
        }
    }
    let skin = |(p, w): (&Vector3<f64>, &SkinWeights)| {
        let mut out = Vector3::zeros();
        for &(j, wt) in w.iter() {
            let t = &transforms.0[j];
            out += (t.fixed_view::<3, 3>(0, 0) * p + t.fixed_view::<3, 1>(0, 3)) * wt;
        }
        out
    };
    Ok(if points.len() > 4096 {
        points.par_iter().zip(weights.par_iter()).map(skin).collect()
    } else {
        points.iter().zip(weights).map(skin).collect()
    })
}

/// T-pose → Da-pose transforms (T^TD).
pub fn da_pose_transforms(mesh: &SkinnedMesh, config: &DaPoseConfig) -> Result<JointTransforms> {
    forward_kinematics(mesh, &mesh.da_pose(config)?)
}

/// Da-pose → target-pose transforms (T^DW): `FK(pose) · FK(da)⁻¹` per joint.
pub fn canonical_to_world(
    mesh: &SkinnedMesh,
    pose: &Pose,
    config: &DaPoseConfig,
) -> Result<JointTransforms> {
    let target = forward_kinematics(mesh, pose)?;
    let da = da_pose_transforms(mesh, config)?;
    Ok(JointTransforms(
        target.0.iter().zip(&da.0).map(|(t, d)| t * invert_rigid(d)).collect(),
    ))
}

/// Composite `T^DW · T^TD` per joint, ready for skinning rest-space points
/// (rest position plus canonical offset).
pub fn pose_from_canonical(
    mesh: &SkinnedMesh,
    pose: &Pose,
    config: &DaPoseConfig,
) -> Result<JointTransforms> {
    let dw = canonical_to_world(mesh, pose, config)?;
    let td = da_pose_transforms(mesh, config)?;
    Ok(JointTransforms(dw.0.iter().zip(&td.0).map(|(a, b)| a * b).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{is_rotation, rotation_block, transform_point};
    use std::f64::consts::FRAC_PI_2;

    fn chain() -> SkinnedMesh {
        let joints = vec![
            Joint { name: "root".into(), parent: None, position: [0.0, 0.0, 0.0] },
            Joint { name: "child".into(), parent: Some(0), position: [0.0, 1.0, 0.0] },
        ];
        let vertices = vec![Vector3::new(0.0, 0.0, 0.0), Vector3::new(0.0, 1.0, 0.0), Vector3::new(1.0, 1.0, 0.0)];
        let tri = Triangle { indices: [0, 1, 2], uvs: [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]] };
        let weights = vec![SkinWeights::single(0), SkinWeights::single(1), SkinWeights(vec![(0, 0.5), (1, 0.5)])];
        SkinnedMesh::new(vertices, vec![tri], weights, joints).unwrap()
    }

    #[test]
    fn identity_pose_gives_identity_transforms() {
        let mesh = chain();
        let t = forward_kinematics(&mesh, &Pose::zero(2)).unwrap();
        for m in &t.0 {
            assert_eq!(*m, Matrix4::identity());
        }
    }

    #[test]
    fn root_quarter_turn_moves_child_rest_position() {
        // Oracle: [Rz(90°) | 0] · [I | (0,1,0)] · [I | -(0,1,0)] applied to (0,1,0).
        let mesh = chain();
        let mut pose = Pose::zero(2);
        pose.joint_rotations[0] = [0.0, 0.0, FRAC_PI_2];
        let t = forward_kinematics(&mesh, &pose).unwrap();
        let p = transform_point(&t.0[1], &Vector3::new(0.0, 1.0, 0.0));
        assert!((p - Vector3::new(-1.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn child_with_zero_rotation_inherits_parent_rotation() {
        let mesh = chain();
        let mut pose = Pose::zero(2);
        pose.joint_rotations[0] = [0.3, -0.2, 0.9];
        let t = forward_kinematics(&mesh, &pose).unwrap();
        assert!((rotation_block(&t.0[0]) - rotation_block(&t.0[1])).abs().max() < 1e-12);
        assert!(is_rotation(&rotation_block(&t.0[1]), 1e-9));
    }

    #[test]
    fn root_rotation_is_rigid_about_root() {
        let mesh = chain();
        let mut pose = Pose::zero(2);
        pose.joint_rotations[0] = [0.1, 0.5, -0.4];
        let r = axis_angle_to_matrix(&vec3(pose.joint_rotations[0]));
        let t = forward_kinematics(&mesh, &pose).unwrap();
        let expected = rigid(&r, &Vector3::zeros());
        for m in &t.0 {
            assert!((m - expected).abs().max() < 1e-12);
        }
    }

    #[test]
    fn pose_length_mismatch_is_rejected() {
        assert!(matches!(forward_kinematics(&chain(), &Pose::zero(3)), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn lbs_identity_is_exact() {
        let pts = vec![Vector3::new(0.3, -1.2, 4.0), Vector3::new(2.0, 0.0, 1.0)];
        let w = vec![SkinWeights(vec![(0, 0.25), (1, 0.75)]), SkinWeights::single(1)];
        let out = lbs(&pts, &w, &JointTransforms::identity(2)).unwrap();
        assert_eq!(out, pts);
    }

    #[test]
    fn lbs_single_joint_equals_its_transform() {
        let t = JointTransforms(vec![
            Matrix4::identity(),
            rigid(&axis_angle_to_matrix(&Vector3::new(0.2, 0.1, 0.7)), &Vector3::new(1.0, 2.0, 3.0)),
        ]);
        let p = Vector3::new(0.5, 0.25, -1.0);
        let out = lbs(&[p], &[SkinWeights::single(1)], &t).unwrap();
        assert!((out[0] - transform_point(&t.0[1], &p)).norm() < 1e-12);
    }

    #[test]
    fn lbs_blends_translations() {
        let t = JointTransforms(vec![
            rigid(&nalgebra::Matrix3::identity(), &Vector3::new(1.0, 0.0, 0.0)),
            rigid(&nalgebra::Matrix3::identity(), &Vector3::new(0.0, 1.0, 0.0)),
        ]);
        let out = lbs(&[Vector3::zeros()], &[SkinWeights(vec![(0, 0.5), (1, 0.5)])], &t).unwrap();
        assert_eq!(out[0], Vector3::new(0.5, 0.5, 0.0));
    }

    #[test]
    fn lbs_rejects_unnormalized_rows() {
        let err = lbs(&[Vector3::zeros()], &[SkinWeights(vec![(0, 0.5)])], &JointTransforms::identity(1));
        assert!(matches!(err, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn weights_are_renormalized_and_truncated() {
        let w = SkinWeights((0..10).map(|j| (j, (j + 1) as f64)).collect());
        let n = w.normalized(MAX_INFLUENCES).unwrap();
        assert_eq!(n.len(), MAX_INFLUENCES);
        assert!((n.sum() - 1.0).abs() < 1e-12);
        assert_eq!(n.get(0), 0.0);
        assert_eq!(n.get(1), 0.0);
    }

    #[test]
    fn skeleton_validation() {
        let two_roots = vec![
            Joint { name: "a".into(), parent: None, position: [0.0; 3] },
            Joint { name: "b".into(), parent: None, position: [0.0; 3] },
        ];
        assert!(joint_order(&two_roots).is_err());
        let cycle = vec![
            Joint { name: "r".into(), parent: None, position: [0.0; 3] },
            Joint { name: "a".into(), parent: Some(2), position: [0.0; 3] },
            Joint { name: "b".into(), parent: Some(1), position: [0.0; 3] },
        ];
        assert!(joint_order(&cycle).is_err());
    }

    #[test]
    fn uv_outside_unit_square_is_rejected() {
        let joints = vec![Joint { name: "r".into(), parent: None, position: [0.0; 3] }];
        let tri = Triangle { indices: [0, 1, 2], uvs: [[0.0, 0.0], [1.5, 0.0], [0.0, 1.0]] };
        let verts = vec![Vector3::zeros(); 3];
        let w = vec![SkinWeights::single(0); 3];
        assert!(SkinnedMesh::new(verts, vec![tri], w, joints).is_err());
    }

    #[test]
    fn da_pose_requires_named_joints() {
        let mesh = chain();
        assert!(da_pose_transforms(&mesh, &DaPoseConfig::default()).is_err());
        let cfg = DaPoseConfig {
            forward_axis: [0.0, 0.0, 1.0],
            joints: vec![DaPoseJoint { name: "child".into(), angle_degrees: 30.0 }],
        };
        let t = da_pose_transforms(&mesh, &cfg).unwrap();
        assert_eq!(t.0[0], Matrix4::identity());
    }

    #[test]
    fn canonical_round_trip_for_da_pose_itself() {
        let mesh = chain();
        let cfg = DaPoseConfig {
            forward_axis: [0.0, 0.0, 1.0],
            joints: vec![DaPoseJoint { name: "child".into(), angle_degrees: -30.0 }],
        };
        let da = mesh.da_pose(&cfg).unwrap();
        let dw = canonical_to_world(&mesh, &da, &cfg).unwrap();
        for m in &dw.0 {
            assert!((m - Matrix4::identity()).abs().max() < 1e-12);
        }
        let composite = pose_from_canonical(&mesh, &da, &cfg).unwrap();
        let direct = da_pose_transforms(&mesh, &cfg).unwrap();
        for (a, b) in composite.0.iter().zip(&direct.0) {
            assert!((a - b).abs().max() < 1e-12);
        }
    }

    #[test]
    fn obj_loader_triangulates_quads() {
        let obj = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 1 1\nvt 0 1\nf 1/1 2/2 3/3 4/4\n";
        let wd = WeightsDocument {
            version: 1,
            weights: vec![SkinWeights::single(0); 4],
            joints: vec![Joint { name: "r".into(), parent: None, position: [0.0; 3] }],
            shape_dirs: None,
            da_pose: None,
        };
        let mesh = SkinnedMesh::from_obj(obj, wd).unwrap();
        assert_eq!(mesh.triangles().len(), 2);
        assert_eq!(mesh.triangles()[1].indices, [0, 2, 3]);
    }

    #[test]
    fn shape_coefficients_without_basis_are_ignored() {
        let mesh = chain();
        assert_eq!(mesh.shaped_vertices(Some(&[1.0, 2.0])), mesh.vertices().to_vec());
        let dirs = vec![vec![[0.0, 0.0, 1.0]]; 3];
        let shaped = mesh.clone().with_shape_dirs(dirs).unwrap().shaped_vertices(Some(&[0.5]));
        assert_eq!(shaped[0], Vector3::new(0.0, 0.0, 0.5));
    }
}

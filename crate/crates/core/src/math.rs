//! Small rigid-body helpers shared by the skinning, alignment and rendering code.

use nalgebra::{Matrix3, Matrix4, Quaternion, Rotation3, UnitQuaternion, Vector3};

/// Rotation angles below this magnitude map to the identity.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Rodrigues' formula for an axis-angle vector (radians).
pub fn axis_angle_to_matrix(v: &Vector3<f64>) -> Matrix3<f64> {
    let angle = v.norm();
    if angle < SMALL_ANGLE {
        return Matrix3::identity();
    }
    let k = v / angle;
    let kx = skew(&k);
    let (s, c) = angle.sin_cos();
    Matrix3::identity() + kx * s + kx * kx * (1.0 - c)
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Axis-angle of a rotation matrix; inverse of [`axis_angle_to_matrix`] for angles below π.
pub fn matrix_to_axis_angle(r: &Matrix3<f64>) -> Vector3<f64> {
    let rot = Rotation3::from_matrix_unchecked(*r);
    rot.scaled_axis()
}

/// Rotation matrix of a quaternion stored as `[w, x, y, z]`; the quaternion is normalized first.
pub fn quat_to_matrix(q: &[f64; 4]) -> Matrix3<f64> {
    let uq = UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]));
    uq.to_rotation_matrix().into_inner()
}

pub fn rigid(rotation: &Matrix3<f64>, translation: &Vector3<f64>) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(rotation);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(translation);
    m
}

pub fn rotation_block(m: &Matrix4<f64>) -> Matrix3<f64> {
    m.fixed_view::<3, 3>(0, 0).into_owned()
}

pub fn translation_block(m: &Matrix4<f64>) -> Vector3<f64> {
    m.fixed_view::<3, 1>(0, 3).into_owned()
}

pub fn transform_point(m: &Matrix4<f64>, p: &Vector3<f64>) -> Vector3<f64> {
    rotation_block(m) * p + translation_block(m)
}

/// Inverse of a rigid 4×4 transform.
pub fn invert_rigid(m: &Matrix4<f64>) -> Matrix4<f64> {
    let rt = rotation_block(m).transpose();
    rigid(&rt, &(-(rt * translation_block(m))))
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-6, 1.0 - 1e-6);
    (p / (1.0 - p)).ln()
}

pub fn vec3(a: [f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

pub fn arr3(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

/// Orthonormality and determinant check for a rotation block.
pub fn is_rotation(r: &Matrix3<f64>, tol: f64) -> bool {
    let err = (r.transpose() * r - Matrix3::identity()).abs().max();
    err <= tol && (r.determinant() - 1.0).abs() <= tol
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn rodrigues_quarter_turn_about_z() {
        let r = axis_angle_to_matrix(&Vector3::new(0.0, 0.0, FRAC_PI_2));
        let p = r * Vector3::new(1.0, 0.0, 0.0);
        assert!((p - Vector3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
        assert!(is_rotation(&r, 1e-12));
    }

    #[test]
    fn tiny_angles_are_identity() {
        let r = axis_angle_to_matrix(&Vector3::new(1e-10, 0.0, 0.0));
        assert_eq!(r, Matrix3::identity());
    }

    #[test]
    fn axis_angle_round_trip() {
        let v = Vector3::new(0.3, -0.7, 1.1);
        let back = matrix_to_axis_angle(&axis_angle_to_matrix(&v));
        assert!((back - v).norm() < 1e-12);
    }

    #[test]
    fn rigid_inverse() {
        let m = rigid(
            &axis_angle_to_matrix(&Vector3::new(0.1, 0.2, 0.3)),
            &Vector3::new(1.0, -2.0, 3.0),
        );
        let id = m * invert_rigid(&m);
        assert!((id - Matrix4::identity()).abs().max() < 1e-12);
    }
}

//! Core geometric types: points, keypoint sets, correspondence weights and
//! the three transform families (rigid, affine, thin-plate spline).
//!
//! All geometry lives in a normalized coordinate frame: voxel index `i` on an
//! axis of size `X` maps to `2*i/(X-1) - 1`, so every grid spans `[-1, 1]`
//! regardless of resolution. Transforms map *fixed*-space coordinates into
//! *moving*-space coordinates, which is the direction needed for backward
//! warping.

use nalgebra::{DMatrix, Matrix3, Matrix3x4, Matrix4x3, Rotation3, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for rotation-matrix invariants (orthonormality, unit
/// determinant) checked at construction and deserialization time.
pub const ROTATION_TOL: f64 = 1e-9;

/// Tolerance for the thin-plate-spline side conditions (vanishing column
/// sums and first moments of the kernel coefficients).
pub const TPS_SIDE_CONDITION_TOL: f64 = 1e-6;

/// Map a voxel index to the normalized coordinate in `[-1, 1]`.
///
/// Degenerate single-voxel axes map to the center (0.0).
#[inline]
pub fn voxel_to_normalized(index: usize, size: usize) -> f64 {
    if size <= 1 {
        0.0
    } else {
        2.0 * index as f64 / (size - 1) as f64 - 1.0
    }
}

/// Map a normalized coordinate back to (fractional) voxel units.
#[inline]
pub fn normalized_to_voxel(coord: f64, size: usize) -> f64 {
    (coord + 1.0) * 0.5 * (size - 1) as f64
}

/// Radial basis kernel of the 3D thin-plate spline, `U(r) = r^2 ln r`,
/// extended continuously with `U(0) = 0`.
#[inline]
pub fn tps_kernel(r: f64) -> f64 {
    if r > 0.0 {
        r * r * r.ln()
    } else {
        0.0
    }
}

/// A point in normalized 3D space.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn from_vector(v: Vector3<f64>) -> Self {
        Point3::new(v.x, v.y, v.z)
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        (dx * dx + dy * dy + dz * dz).sqrt()
    }
}

/// An ordered set of keypoints. Order carries correspondence: the i-th point
/// of one set pairs with the i-th point of another.
#[derive(Clone, Debug, PartialEq)]
pub struct KeypointSet {
    points: Vec<Point3>,
}

impl KeypointSet {
    /// Build a set from points, rejecting empty input and non-finite
    /// coordinates.
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidKeypoints {
                reason: "keypoint set must contain at least one point".into(),
            });
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::InvalidKeypoints {
                reason: format!("point {i} has non-finite coordinates"),
            });
        }
        Ok(KeypointSet { points })
    }

    pub fn from_coords(coords: impl IntoIterator<Item = [f64; 3]>) -> Result<Self> {
        Self::new(
            coords
                .into_iter()
                .map(|[x, y, z]| Point3::new(x, y, z))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Sets are never empty; this exists to satisfy the usual pairing with
    /// `len`.
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Point3> {
        self.points.iter()
    }

    /// Apply a point mapping to every keypoint, preserving order.
    pub fn map(&self, mut f: impl FnMut(&Point3) -> Point3) -> Self {
        KeypointSet {
            points: self.points.iter().map(|p| f(p)).collect(),
        }
    }
}

impl std::ops::Index<usize> for KeypointSet {
    type Output = Point3;
    fn index(&self, i: usize) -> &Point3 {
        &self.points[i]
    }
}

/// Per-correspondence weights, kept normalized so they sum to one.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrespondenceWeights {
    weights: Vec<f64>,
}

impl CorrespondenceWeights {
    /// Normalize raw non-negative weights to sum to one. Rejects negative or
    /// non-finite entries and all-zero vectors.
    pub fn new(raw: Vec<f64>) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::InvalidWeights {
                reason: "weight vector is empty".into(),
            });
        }
        if let Some(i) = raw.iter().position(|w| !w.is_finite()) {
            return Err(Error::InvalidWeights {
                reason: format!("weight {i} is not finite"),
            });
        }
        if let Some(i) = raw.iter().position(|&w| w < 0.0) {
            return Err(Error::InvalidWeights {
                reason: format!("weight {i} is negative"),
            });
        }
        let sum: f64 = raw.iter().sum();
        if sum <= 0.0 {
            return Err(Error::InvalidWeights {
                reason: "weights sum to zero".into(),
            });
        }
        Ok(CorrespondenceWeights {
            weights: raw.into_iter().map(|w| w / sum).collect(),
        })
    }

    /// Equal weight `1/n` for each of `n` correspondences.
    pub fn uniform(n: usize) -> Self {
        assert!(n > 0, "cannot build weights for zero correspondences");
        CorrespondenceWeights {
            weights: vec![1.0 / n as f64; n],
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }
}

/// Rotation plus translation: `T(p) = R p + t`.
#[derive(Clone, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    /// Build a rigid transform, verifying that `rotation` is a proper
    /// rotation (orthonormal, determinant +1) within [`ROTATION_TOL`].
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let gram = rotation.transpose() * rotation;
        let ortho_err = (gram - Matrix3::identity()).abs().max();
        if ortho_err > ROTATION_TOL {
            return Err(Error::InvalidTransform {
                reason: format!("rotation is not orthonormal (error {ortho_err:.3e})"),
            });
        }
        let det_err = (rotation.determinant() - 1.0).abs();
        if det_err > ROTATION_TOL {
            return Err(Error::InvalidTransform {
                reason: format!("rotation determinant differs from +1 by {det_err:.3e}"),
            });
        }
        if translation.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidTransform {
                reason: "translation has non-finite components".into(),
            });
        }
        Ok(RigidTransform {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Rotation by `angle` radians about the x axis.
    pub fn rot_x(angle: f64) -> Self {
        RigidTransform {
            rotation: Rotation3::from_axis_angle(&Vector3::x_axis(), angle).into_inner(),
            translation: Vector3::zeros(),
        }
    }

    /// Rotation by `angle` radians about the y axis.
    pub fn rot_y(angle: f64) -> Self {
        RigidTransform {
            rotation: Rotation3::from_axis_angle(&Vector3::y_axis(), angle).into_inner(),
            translation: Vector3::zeros(),
        }
    }

    /// Rotation by `angle` radians about the z axis.
    pub fn rot_z(angle: f64) -> Self {
        RigidTransform {
            rotation: Rotation3::from_axis_angle(&Vector3::z_axis(), angle).into_inner(),
            translation: Vector3::zeros(),
        }
    }

    pub fn translate(t: Vector3<f64>) -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        Point3::from_vector(self.rotation * p.to_vector() + self.translation)
    }

    /// Composition `self ∘ inner`: apply `inner` first, then `self`.
    pub fn compose(&self, inner: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * inner.rotation,
            translation: self.rotation * inner.translation + self.translation,
        }
    }

    /// The inverse motion: `T^{-1}(p) = R^T (p - t)`.
    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }
}

/// General affine map stored as a 3x4 matrix acting on homogeneous
/// coordinates: `T(p) = A [p; 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineTransform {
    pub matrix: Matrix3x4<f64>,
}

impl AffineTransform {
    pub fn new(matrix: Matrix3x4<f64>) -> Result<Self> {
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidTransform {
                reason: "affine matrix has non-finite entries".into(),
            });
        }
        Ok(AffineTransform { matrix })
    }

    pub fn identity() -> Self {
        AffineTransform {
            matrix: Matrix3x4::from_columns(&[
                Vector3::x(),
                Vector3::y(),
                Vector3::z(),
                Vector3::zeros(),
            ]),
        }
    }

    /// Assemble from a linear part and a translation.
    pub fn from_parts(linear: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let mut matrix = Matrix3x4::zeros();
        matrix.fixed_view_mut::<3, 3>(0, 0).copy_from(&linear);
        matrix.set_column(3, &translation);
        AffineTransform { matrix }
    }

    /// The leading 3x3 linear block.
    pub fn linear(&self) -> Matrix3<f64> {
        self.matrix.fixed_view::<3, 3>(0, 0).into()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.matrix.column(3).into()
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        let h = Vector4::new(p.x, p.y, p.z, 1.0);
        Point3::from_vector(self.matrix * h)
    }
}

impl From<&RigidTransform> for AffineTransform {
    fn from(r: &RigidTransform) -> Self {
        AffineTransform::from_parts(r.rotation, r.translation)
    }
}

/// Thin-plate spline: an affine part plus a radial-basis correction anchored
/// at the control points,
/// `T_d(p) = a_d · [p; 1] + Σ_i v_{i,d} U(‖p_i - p‖)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TpsTransform {
    /// Anchor points of the radial basis, in solve order.
    pub control_points: KeypointSet,
    /// Affine coefficients, one 4-vector column per output dimension.
    pub affine: Matrix4x3<f64>,
    /// Kernel coefficients, one row per control point, one column per output
    /// dimension.
    pub coefficients: DMatrix<f64>,
    /// Regularization strength the spline was solved with.
    pub lambda: f64,
}

impl TpsTransform {
    /// Build a spline and check its structural and side-condition
    /// invariants. Splines produced by the solver satisfy these by
    /// construction; the check guards hand-built or deserialized data.
    pub fn new(
        control_points: KeypointSet,
        affine: Matrix4x3<f64>,
        coefficients: DMatrix<f64>,
        lambda: f64,
    ) -> Result<Self> {
        let t = TpsTransform {
            control_points,
            affine,
            coefficients,
            lambda,
        };
        t.validate()?;
        Ok(t)
    }

    /// Check shape agreement, finiteness, non-negative `lambda` and the
    /// side conditions `Σ_i v_{i,d} = 0` and `Σ_i v_{i,d} p^{(i)} = 0`
    /// within [`TPS_SIDE_CONDITION_TOL`].
    pub fn validate(&self) -> Result<()> {
        let n = self.control_points.len();
        if self.coefficients.nrows() != n || self.coefficients.ncols() != 3 {
            return Err(Error::InvalidTransform {
                reason: format!(
                    "coefficient matrix is {}x{}, expected {}x3",
                    self.coefficients.nrows(),
                    self.coefficients.ncols(),
                    n
                ),
            });
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::InvalidTransform {
                reason: format!("lambda must be a finite non-negative real, got {}", self.lambda),
            });
        }
        if self.affine.iter().any(|v| !v.is_finite())
            || self.coefficients.iter().any(|v| !v.is_finite())
        {
            return Err(Error::InvalidTransform {
                reason: "spline coefficients have non-finite entries".into(),
            });
        }
        for d in 0..3 {
            let mut sum = 0.0;
            let mut moment = Vector3::zeros();
            for (i, p) in self.control_points.iter().enumerate() {
                let v = self.coefficients[(i, d)];
                sum += v;
                moment += v * p.to_vector();
            }
            if sum.abs() > TPS_SIDE_CONDITION_TOL {
                return Err(Error::InvalidTransform {
                    reason: format!("kernel coefficients of dimension {d} sum to {sum:.3e}"),
                });
            }
            if moment.amax() > TPS_SIDE_CONDITION_TOL {
                return Err(Error::InvalidTransform {
                    reason: format!(
                        "kernel coefficients of dimension {d} have first moment {:.3e}",
                        moment.amax()
                    ),
                });
            }
        }
        Ok(())
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        let mut out = [0.0f64; 3];
        for d in 0..3 {
            out[d] = self.affine[(0, d)] * p.x
                + self.affine[(1, d)] * p.y
                + self.affine[(2, d)] * p.z
                + self.affine[(3, d)];
        }
        for (i, c) in self.control_points.iter().enumerate() {
            let u = tps_kernel(c.distance(p));
            for d in 0..3 {
                out[d] += self.coefficients[(i, d)] * u;
            }
        }
        Point3::new(out[0], out[1], out[2])
    }
}

/// Any of the three supported transform families.
#[derive(Clone, Debug, PartialEq)]
pub enum Transform {
    Rigid(RigidTransform),
    Affine(AffineTransform),
    Tps(TpsTransform),
}

impl Transform {
    pub fn apply(&self, p: &Point3) -> Point3 {
        match self {
            Transform::Rigid(t) => t.apply(p),
            Transform::Affine(t) => t.apply(p),
            Transform::Tps(t) => t.apply(p),
        }
    }

    /// Apply to every point of a set, preserving order.
    pub fn apply_set(&self, set: &KeypointSet) -> KeypointSet {
        set.map(|p| self.apply(p))
    }

    pub fn family_name(&self) -> &'static str {
        match self {
            Transform::Rigid(_) => "rigid",
            Transform::Affine(_) => "affine",
            Transform::Tps(_) => "tps",
        }
    }
}

// ---------------------------------------------------------------------------
// Serialization. Transforms interchange as a tagged JSON object with
// row-major parameter arrays; deserialization re-checks the construction
// invariants so corrupt files cannot smuggle in invalid transforms.

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
enum TransformWire {
    Rigid {
        /// 3x3 rotation, row-major.
        rotation: Vec<f64>,
        translation: Vec<f64>,
    },
    Affine {
        /// 3x4 matrix, row-major.
        matrix: Vec<f64>,
    },
    Tps {
        control_points: Vec<[f64; 3]>,
        /// 4x3 affine coefficients, row-major.
        affine: Vec<f64>,
        /// Nx3 kernel coefficients, row-major.
        coefficients: Vec<f64>,
        lambda: f64,
    },
}

fn row_major<R: nalgebra::Dim, C: nalgebra::Dim, S>(m: &nalgebra::Matrix<f64, R, C, S>) -> Vec<f64>
where
    S: nalgebra::storage::Storage<f64, R, C>,
{
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push(m[(r, c)]);
        }
    }
    out
}

impl From<&Transform> for TransformWire {
    fn from(t: &Transform) -> Self {
        match t {
            Transform::Rigid(t) => TransformWire::Rigid {
                rotation: row_major(&t.rotation),
                translation: t.translation.iter().copied().collect(),
            },
            Transform::Affine(t) => TransformWire::Affine {
                matrix: row_major(&t.matrix),
            },
            Transform::Tps(t) => TransformWire::Tps {
                control_points: t.control_points.iter().map(|p| [p.x, p.y, p.z]).collect(),
                affine: row_major(&t.affine),
                coefficients: row_major(&t.coefficients),
                lambda: t.lambda,
            },
        }
    }
}

impl TryFrom<TransformWire> for Transform {
    type Error = Error;

    fn try_from(wire: TransformWire) -> Result<Self> {
        let shape_err = |what: &str, got: usize, want: usize| Error::InvalidTransform {
            reason: format!("{what} has {got} entries, expected {want}"),
        };
        match wire {
            TransformWire::Rigid {
                rotation,
                translation,
            } => {
                if rotation.len() != 9 {
                    return Err(shape_err("rotation", rotation.len(), 9));
                }
                if translation.len() != 3 {
                    return Err(shape_err("translation", translation.len(), 3));
                }
                let r = Matrix3::from_row_slice(&rotation);
                let t = Vector3::from_column_slice(&translation);
                Ok(Transform::Rigid(RigidTransform::new(r, t)?))
            }
            TransformWire::Affine { matrix } => {
                if matrix.len() != 12 {
                    return Err(shape_err("matrix", matrix.len(), 12));
                }
                Ok(Transform::Affine(AffineTransform::new(
                    Matrix3x4::from_row_slice(&matrix),
                )?))
            }
            TransformWire::Tps {
                control_points,
                affine,
                coefficients,
                lambda,
            } => {
                let n = control_points.len();
                if affine.len() != 12 {
                    return Err(shape_err("affine", affine.len(), 12));
                }
                if coefficients.len() != 3 * n {
                    return Err(shape_err("coefficients", coefficients.len(), 3 * n));
                }
                let cps = KeypointSet::from_coords(control_points)?;
                let a = Matrix4x3::from_row_slice(&affine);
                let v = DMatrix::from_row_slice(n, 3, &coefficients);
                Ok(Transform::Tps(TpsTransform::new(cps, a, v, lambda)?))
            }
        }
    }
}

impl Serialize for Transform {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        TransformWire::from(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Transform {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let wire = TransformWire::deserialize(deserializer)?;
        Transform::try_from(wire).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    fn assert_point_eq(a: &Point3, b: &Point3, eps: f64) {
        assert_relative_eq!(a.x, b.x, epsilon = eps);
        assert_relative_eq!(a.y, b.y, epsilon = eps);
        assert_relative_eq!(a.z, b.z, epsilon = eps);
    }

    #[test]
    fn normalized_coordinates_span_unit_cube() {
        assert_eq!(voxel_to_normalized(0, 64), -1.0);
        assert_eq!(voxel_to_normalized(63, 64), 1.0);
        assert_eq!(voxel_to_normalized(0, 1), 0.0);
        let c = voxel_to_normalized(17, 64);
        assert_relative_eq!(normalized_to_voxel(c, 64), 17.0, epsilon = 1e-12);
    }

    #[test]
    fn kernel_vanishes_at_zero_radius() {
        assert_eq!(tps_kernel(0.0), 0.0);
        assert_relative_eq!(tps_kernel(1.0), 0.0, epsilon = 1e-15);
        assert_relative_eq!(tps_kernel(2.0), 4.0 * 2.0f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn rigid_identity_fixes_points() {
        let t = RigidTransform::identity();
        let p = Point3::new(0.3, -0.7, 0.1);
        assert_eq!(t.apply(&p), p);
    }

    #[test]
    fn rigid_translation_shifts_points() {
        let t = RigidTransform::translate(Vector3::new(0.1, -0.2, 0.3));
        let p = t.apply(&Point3::new(0.0, 0.0, 0.0));
        assert_point_eq(&p, &Point3::new(0.1, -0.2, 0.3), 1e-15);
    }

    #[test]
    fn rigid_quarter_turn_about_z() {
        let t = RigidTransform::rot_z(FRAC_PI_2);
        let p = t.apply(&Point3::new(1.0, 0.0, 0.0));
        assert_point_eq(&p, &Point3::new(0.0, 1.0, 0.0), 1e-12);
    }

    #[test]
    fn rigid_rejects_non_rotation() {
        let scaled = Matrix3::identity() * 1.5;
        assert!(matches!(
            RigidTransform::new(scaled, Vector3::zeros()),
            Err(Error::InvalidTransform { .. })
        ));
        let mut reflect = Matrix3::identity();
        reflect[(2, 2)] = -1.0;
        assert!(RigidTransform::new(reflect, Vector3::zeros()).is_err());
    }

    #[test]
    fn composition_matches_sequential_application() {
        let a = RigidTransform::rot_x(0.4);
        let b = RigidTransform {
            rotation: RigidTransform::rot_z(1.1).rotation,
            translation: Vector3::new(0.2, 0.0, -0.5),
        };
        let p = Point3::new(0.3, 0.6, -0.2);
        let composed = a.compose(&b).apply(&p);
        let sequential = a.apply(&b.apply(&p));
        assert_point_eq(&composed, &sequential, 1e-14);
    }

    #[test]
    fn compose_with_inverse_is_identity() {
        let t = RigidTransform {
            rotation: RigidTransform::rot_y(0.9).rotation,
            translation: Vector3::new(-0.3, 0.25, 0.8),
        };
        let id = t.compose(&t.inverse());
        assert!((id.rotation - Matrix3::identity()).abs().max() < 1e-12);
        assert!(id.translation.amax() < 1e-12);
    }

    #[test]
    fn rotations_about_same_axis_add_angles() {
        let t = RigidTransform::rot_z(0.3).compose(&RigidTransform::rot_z(0.5));
        let direct = RigidTransform::rot_z(0.8);
        assert!((t.rotation - direct.rotation).abs().max() < 1e-12);
    }

    #[test]
    fn affine_identity_and_scale() {
        let p = Point3::new(0.5, -0.25, 0.75);
        assert_eq!(AffineTransform::identity().apply(&p), p);

        let scale = AffineTransform::from_parts(Matrix3::identity() * 2.0, Vector3::zeros());
        assert_point_eq(&scale.apply(&p), &Point3::new(1.0, -0.5, 1.5), 1e-15);
    }

    #[test]
    fn affine_shear_moves_x_by_y() {
        let mut linear = Matrix3::identity();
        linear[(0, 1)] = 0.1; // x += 0.1 * y
        let t = AffineTransform::from_parts(linear, Vector3::zeros());
        let p = t.apply(&Point3::new(1.0, 2.0, 3.0));
        assert_point_eq(&p, &Point3::new(1.2, 2.0, 3.0), 1e-15);
    }

    #[test]
    fn tps_with_zero_coefficients_is_affine() {
        let cps = KeypointSet::from_coords([
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
        ])
        .unwrap();
        // affine columns are per-dimension [cx, cy, cz, const]
        let affine = Matrix4x3::from_row_slice(&[
            1.5, 0.0, 0.0, //
            0.0, 1.0, 0.1, //
            0.0, 0.0, 1.0, //
            0.2, -0.1, 0.0,
        ]);
        let tps = TpsTransform::new(cps, affine, DMatrix::zeros(4, 3), 0.0).unwrap();
        let equivalent = AffineTransform::new(Matrix3x4::from_row_slice(&[
            1.5, 0.0, 0.0, 0.2, //
            0.0, 1.0, 0.0, -0.1, //
            0.0, 0.1, 1.0, 0.0,
        ]))
        .unwrap();
        let mut state: u64 = 0x9E3779B97F4A7C15;
        let mut next = || {
            // xorshift is plenty for coverage points
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        for _ in 0..1000 {
            let p = Point3::new(next(), next(), next());
            assert_point_eq(&tps.apply(&p), &equivalent.apply(&p), 1e-12);
        }
    }

    #[test]
    fn tps_side_conditions_are_enforced() {
        let cps = KeypointSet::from_coords([
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
        ])
        .unwrap();
        let mut v = DMatrix::zeros(4, 3);
        v[(0, 0)] = 1.0; // column sum 1 ≠ 0
        assert!(matches!(
            TpsTransform::new(cps, Matrix4x3::zeros(), v, 0.0),
            Err(Error::InvalidTransform { .. })
        ));
    }

    #[test]
    fn keypoint_set_rejects_bad_input() {
        assert!(KeypointSet::new(vec![]).is_err());
        assert!(KeypointSet::from_coords([[f64::NAN, 0.0, 0.0]]).is_err());
    }

    #[test]
    fn weights_normalize_and_validate() {
        let w = CorrespondenceWeights::new(vec![1.0, 3.0]).unwrap();
        assert_relative_eq!(w.as_slice()[0], 0.25, epsilon = 1e-15);
        assert_relative_eq!(w.as_slice().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert!(CorrespondenceWeights::new(vec![0.5, -0.1]).is_err());
        assert!(CorrespondenceWeights::new(vec![0.0, 0.0]).is_err());
        let u = CorrespondenceWeights::uniform(4);
        assert_eq!(u.as_slice(), &[0.25; 4]);
    }

    #[test]
    fn rigid_json_round_trip() {
        let t = Transform::Rigid(RigidTransform {
            rotation: RigidTransform::rot_z(0.7).rotation,
            translation: Vector3::new(0.1, 0.2, 0.3),
        });
        let json = serde_json::to_string(&t).unwrap();
        assert!(json.contains("\"type\":\"rigid\""));
        let back: Transform = serde_json::from_str(&json).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn affine_json_round_trip() {
        let t = Transform::Affine(AffineTransform::from_parts(
            Matrix3::new(1.0, 0.1, 0.0, 0.0, 0.9, 0.0, 0.05, 0.0, 1.1),
            Vector3::new(-0.2, 0.0, 0.4),
        ));
        let json = serde_json::to_string(&t).unwrap();
        let back: Transform = serde_json::from_str(&json).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn tps_json_round_trip_preserves_lambda_and_points() {
        let cps = KeypointSet::from_coords([
            [0.0, 0.0, 0.0],
            [0.5, 0.0, 0.0],
            [0.0, 0.5, 0.0],
            [0.0, 0.0, 0.5],
        ])
        .unwrap();
        let t = Transform::Tps(
            TpsTransform::new(cps, Matrix4x3::identity(), DMatrix::zeros(4, 3), 2.5).unwrap(),
        );
        let json = serde_json::to_string(&t).unwrap();
        assert!(json.contains("\"lambda\":2.5"));
        let back: Transform = serde_json::from_str(&json).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn corrupt_rotation_fails_to_deserialize() {
        let json = r#"{"type":"rigid","rotation":[2,0,0,0,1,0,0,0,1],"translation":[0,0,0]}"#;
        assert!(serde_json::from_str::<Transform>(json).is_err());
    }
}

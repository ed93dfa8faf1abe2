//! Dense 3D volumes and backward-warp resampling.
//!
//! A [`Volume3D`] is a dense grid in x-fastest memory order holding either
//! scalar intensities (`f32`) or segmentation labels (`u16`), together with
//! its dimensions and physical voxel spacing. Warping samples the moving
//! volume at transformed output coordinates (backward warping), so the
//! transform passed to [`warp`] must map output-space (fixed) normalized
//! coordinates into moving-space normalized coordinates.

pub mod metrics;
pub mod phantom;

pub use metrics::*;
pub use phantom::*;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    normalized_to_voxel, voxel_to_normalized, CorrespondenceWeights, KeypointSet, Point3,
    Transform,
};
use crate::solvers::{solve, SolveDiagnostics, SolverFamily};

/// Dense voxel payload: scalar intensities or integer labels.
#[derive(Debug, Clone, PartialEq)]
pub enum VolumeData {
    Scalar(Vec<f32>),
    Labels(Vec<u16>),
}

/// A dense 3D grid with physical spacing, stored x-fastest.
///
/// Voxel `(i, j, k)` lives at flat index `i + X·(j + Y·k)` and at normalized
/// coordinate `(2i/(X−1) − 1, …)`, so voxel centers span `[-1, 1]` per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    dims: (usize, usize, usize),
    spacing_mm: [f64; 3],
    data: VolumeData,
}

impl Volume3D {
    /// Builds a scalar volume, validating shape, spacing, and finiteness.
    pub fn scalar(
        dims: (usize, usize, usize),
        spacing_mm: [f64; 3],
        data: Vec<f32>,
    ) -> Result<Self> {
        Self::validate_shape(dims, spacing_mm, data.len())?;
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidVolume {
                reason: "scalar data contains non-finite values".into(),
            });
        }
        Ok(Volume3D {
            dims,
            spacing_mm,
            data: VolumeData::Scalar(data),
        })
    }

    /// Builds a label volume, validating shape and spacing.
    pub fn labels(
        dims: (usize, usize, usize),
        spacing_mm: [f64; 3],
        data: Vec<u16>,
    ) -> Result<Self> {
        Self::validate_shape(dims, spacing_mm, data.len())?;
        Ok(Volume3D {
            dims,
            spacing_mm,
            data: VolumeData::Labels(data),
        })
    }

    fn validate_shape(
        dims: (usize, usize, usize),
        spacing_mm: [f64; 3],
        len: usize,
    ) -> Result<()> {
        let (x, y, z) = dims;
        let voxels = x
            .checked_mul(y)
            .and_then(|xy| xy.checked_mul(z))
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::InvalidVolume {
                reason: format!("invalid dimensions {dims:?}"),
            })?;
        if voxels != len {
            return Err(Error::InvalidVolume {
                reason: format!("dimensions {dims:?} require {voxels} voxels, got {len}"),
            });
        }
        if !spacing_mm.iter().all(|s| s.is_finite() && *s > 0.0) {
            return Err(Error::InvalidVolume {
                reason: format!("spacing must be positive and finite, got {spacing_mm:?}"),
            });
        }
        Ok(())
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn spacing_mm(&self) -> [f64; 3] {
        self.spacing_mm
    }

    pub fn n_voxels(&self) -> usize {
        self.dims.0 * self.dims.1 * self.dims.2
    }

    pub fn data(&self) -> &VolumeData {
        &self.data
    }

    pub fn is_labels(&self) -> bool {
        matches!(self.data, VolumeData::Labels(_))
    }

    pub fn scalar_data(&self) -> Option<&[f32]> {
        match &self.data {
            VolumeData::Scalar(v) => Some(v),
            VolumeData::Labels(_) => None,
        }
    }

    pub fn label_data(&self) -> Option<&[u16]> {
        match &self.data {
            VolumeData::Labels(v) => Some(v),
            VolumeData::Scalar(_) => None,
        }
    }

    /// Flat index of voxel `(i, j, k)` in x-fastest order.
    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims.0 * (j + self.dims.1 * k)
    }

    /// Returns the same volume with its spacing replaced.
    pub fn with_spacing_mm(mut self, spacing_mm: [f64; 3]) -> Result<Self> {
        if !spacing_mm.iter().all(|s| s.is_finite() && *s > 0.0) {
            return Err(Error::InvalidVolume {
                reason: format!("spacing must be positive and finite, got {spacing_mm:?}"),
            });
        }
        self.spacing_mm = spacing_mm;
        Ok(self)
    }
}

/// Sampling rule used when a warp lands between voxel centers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Trilinear,
    Nearest,
}

impl std::str::FromStr for Interpolation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "trilinear" => Ok(Interpolation::Trilinear),
            "nearest" => Ok(Interpolation::Nearest),
            other => Err(format!(
                "unknown interpolation {other:?} (expected trilinear or nearest)"
            )),
        }
    }
}

impl std::fmt::Display for Interpolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Interpolation::Trilinear => "trilinear",
            Interpolation::Nearest => "nearest",
        })
    }
}

/// Sample coordinates may overhang the voxel-center hull by this many
/// voxels and still clamp onto it; solved transforms reproduce exact
/// motions only to rounding error, and without the slack, edge voxels of an
/// identity-like warp would spuriously fill with 0.
const BOUNDS_EPS: f64 = 1e-6;

/// Trilinear sample of a scalar grid at fractional voxel coordinates.
///
/// Coordinates outside the voxel-center hull `[0, size-1]` on any axis by
/// more than [`BOUNDS_EPS`] (including NaN) sample as 0.
#[inline]
fn sample_trilinear(src: &[f32], dims: (usize, usize, usize), v: [f64; 3]) -> f32 {
    let sizes = [dims.0, dims.1, dims.2];
    let mut v = v;
    for a in 0..3 {
        let top = (sizes[a] - 1) as f64;
        if !(v[a] >= -BOUNDS_EPS && v[a] <= top + BOUNDS_EPS) {
            return 0.0;
        }
        v[a] = v[a].clamp(0.0, top);
    }
    let lo = [v[0].floor(), v[1].floor(), v[2].floor()];
    let f = [v[0] - lo[0], v[1] - lo[1], v[2] - lo[2]];
    let i0 = [lo[0] as usize, lo[1] as usize, lo[2] as usize];
    let i1 = [
        (i0[0] + 1).min(sizes[0] - 1),
        (i0[1] + 1).min(sizes[1] - 1),
        (i0[2] + 1).min(sizes[2] - 1),
    ];
    let at = |x: usize, y: usize, z: usize| src[x + dims.0 * (y + dims.1 * z)] as f64;
    let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
    let c00 = lerp(at(i0[0], i0[1], i0[2]), at(i1[0], i0[1], i0[2]), f[0]);
    let c10 = lerp(at(i0[0], i1[1], i0[2]), at(i1[0], i1[1], i0[2]), f[0]);
    let c01 = lerp(at(i0[0], i0[1], i1[2]), at(i1[0], i0[1], i1[2]), f[0]);
    let c11 = lerp(at(i0[0], i1[1], i1[2]), at(i1[0], i1[1], i1[2]), f[0]);
    lerp(lerp(c00, c10, f[1]), lerp(c01, c11, f[1]), f[2]) as f32
}

/// Nearest-neighbor sample; in-bounds when the nearest voxel exists
/// (coordinates within half a voxel of the grid), otherwise `T::default()`.
#[inline]
fn sample_nearest<T: Copy + Default>(src: &[T], dims: (usize, usize, usize), v: [f64; 3]) -> T {
    let sizes = [dims.0, dims.1, dims.2];
    let mut idx = [0usize; 3];
    for a in 0..3 {
        let r = v[a].round();
        if !(r >= 0.0 && r <= (sizes[a] - 1) as f64) {
            return T::default();
        }
        idx[a] = r as usize;
    }
    src[idx[0] + dims.0 * (idx[1] + dims.1 * idx[2])]
}

/// Fills the output grid in parallel chunks of at most `chunk_voxels`,
/// evaluating `transform` per output voxel. Every voxel is computed
/// independently, so the result is bit-identical for any chunk size and any
/// thread count; the chunk size only bounds how many output coordinates are
/// in flight per worker.
fn fill_warped<T: Copy + Default + Send + Sync>(
    out: &mut [T],
    out_dims: (usize, usize, usize),
    moving_dims: (usize, usize, usize),
    transform: &Transform,
    chunk_voxels: usize,
    sample: impl Fn([f64; 3]) -> T + Sync,
) {
    let (ox, oy, _) = out_dims;
    out.par_chunks_mut(chunk_voxels)
        .enumerate()
        .for_each(|(chunk_idx, chunk)| {
            let base = chunk_idx * chunk_voxels;
            for (offset, slot) in chunk.iter_mut().enumerate() {
                let idx = base + offset;
                let i = idx % ox;
                let j = (idx / ox) % oy;
                let k = idx / (ox * oy);
                let g = Point3::new(
                    voxel_to_normalized(i, out_dims.0),
                    voxel_to_normalized(j, out_dims.1),
                    voxel_to_normalized(k, out_dims.2),
                );
                let s = transform.apply(&g);
                *slot = sample([
                    normalized_to_voxel(s.x, moving_dims.0),
                    normalized_to_voxel(s.y, moving_dims.1),
                    normalized_to_voxel(s.z, moving_dims.2),
                ]);
            }
        });
}

/// Resamples `moving` onto an `out_dims` grid through `transform`
/// (backward warping: output voxel `g` takes the value of `moving` at
/// `transform(g)`). Out-of-bounds samples fill with 0 (scalar) or label 0.
///
/// The output inherits the moving volume's spacing; callers resampling onto
/// another volume's grid should replace it via [`Volume3D::with_spacing_mm`].
///
/// # Panics
/// Panics if `chunk_voxels` is zero.
pub fn warp(
    moving: &Volume3D,
    transform: &Transform,
    out_dims: (usize, usize, usize),
    interpolation: Interpolation,
    chunk_voxels: usize,
) -> Result<Volume3D> {
    assert!(chunk_voxels >= 1, "chunk_voxels must be positive");
    let (x, y, z) = out_dims;
    let total = x
        .checked_mul(y)
        .and_then(|xy| xy.checked_mul(z))
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::InvalidVolume {
            reason: format!("invalid output dimensions {out_dims:?}"),
        })?;

    match (&moving.data, interpolation) {
        (VolumeData::Labels(_), Interpolation::Trilinear) => Err(Error::InterpolationMismatch),
        (VolumeData::Scalar(src), Interpolation::Trilinear) => {
            let mut out = vec![0.0f32; total];
            fill_warped(
                &mut out,
                out_dims,
                moving.dims,
                transform,
                chunk_voxels,
                |v| sample_trilinear(src, moving.dims, v),
            );
            Volume3D::scalar(out_dims, moving.spacing_mm, out)
        }
        (VolumeData::Scalar(src), Interpolation::Nearest) => {
            let mut out = vec![0.0f32; total];
            fill_warped(
                &mut out,
                out_dims,
                moving.dims,
                transform,
                chunk_voxels,
                |v| sample_nearest(src, moving.dims, v),
            );
            Volume3D::scalar(out_dims, moving.spacing_mm, out)
        }
        (VolumeData::Labels(src), Interpolation::Nearest) => {
            let mut out = vec![0u16; total];
            fill_warped(
                &mut out,
                out_dims,
                moving.dims,
                transform,
                chunk_voxels,
                |v| sample_nearest(src, moving.dims, v),
            );
            Volume3D::labels(out_dims, moving.spacing_mm, out)
        }
    }
}

/// Registers `moving` onto `fixed` from corresponding keypoints and
/// resamples it onto the fixed grid.
///
/// Solves the fixed→moving transform (backward-warp convention) from
/// `kp_fixed` onto `kp_moving`, then warps — trilinear for scalar volumes,
/// nearest for labels. The output lives on `fixed`'s grid with `fixed`'s
/// spacing.
#[allow(clippy::too_many_arguments)]
pub fn register_pairwise(
    moving: &Volume3D,
    fixed: &Volume3D,
    kp_moving: &KeypointSet,
    kp_fixed: &KeypointSet,
    family: SolverFamily,
    lambda: f64,
    weights: Option<&CorrespondenceWeights>,
    chunk_voxels: usize,
) -> Result<(Volume3D, Transform, SolveDiagnostics)> {
    let (transform, diagnostics) = solve(family, kp_fixed, kp_moving, lambda, weights)?;
    let interpolation = if moving.is_labels() {
        Interpolation::Nearest
    } else {
        Interpolation::Trilinear
    };
    let warped = warp(moving, &transform, fixed.dims(), interpolation, chunk_voxels)?
        .with_spacing_mm(fixed.spacing_mm())?;
    Ok((warped, transform, diagnostics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{AffineTransform, RigidTransform};
    use crate::solvers::solve_tps;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_scalar(rng: &mut ChaCha8Rng, dims: (usize, usize, usize)) -> Volume3D {
        let data = (0..dims.0 * dims.1 * dims.2)
            .map(|_| rng.gen_range(0.0f32..1.0))
            .collect();
        Volume3D::scalar(dims, [1.0; 3], data).unwrap()
    }

    fn random_labels(rng: &mut ChaCha8Rng, dims: (usize, usize, usize), n: u16) -> Volume3D {
        let data = (0..dims.0 * dims.1 * dims.2)
            .map(|_| rng.gen_range(0..=n))
            .collect();
        Volume3D::labels(dims, [1.0; 3], data).unwrap()
    }

    /// Smooth multi-blob scalar image for interpolation-quality checks.
    fn smooth_volume(dims: (usize, usize, usize)) -> Volume3D {
        let centers = [
            (-0.3, 0.2, 0.1),
            (0.4, -0.1, -0.3),
            (0.0, 0.35, 0.4),
            (-0.2, -0.4, -0.1),
        ];
        let mut data = Vec::with_capacity(dims.0 * dims.1 * dims.2);
        for k in 0..dims.2 {
            for j in 0..dims.1 {
                for i in 0..dims.0 {
                    let g = (
                        voxel_to_normalized(i, dims.0),
                        voxel_to_normalized(j, dims.1),
                        voxel_to_normalized(k, dims.2),
                    );
                    let mut v = 0.0f64;
                    for (cx, cy, cz) in centers {
                        let d2 = (g.0 - cx) * (g.0 - cx)
                            + (g.1 - cy) * (g.1 - cy)
                            + (g.2 - cz) * (g.2 - cz);
                        v += (-d2 / (2.0 * 0.15 * 0.15)).exp();
                    }
                    data.push(v as f32);
                }
            }
        }
        Volume3D::scalar(dims, [1.0; 3], data).unwrap()
    }

    #[test]
    fn construction_validates_shape_and_contents() {
        assert!(matches!(
            Volume3D::scalar((2, 2, 2), [1.0; 3], vec![0.0; 7]),
            Err(Error::InvalidVolume { .. })
        ));
        assert!(matches!(
            Volume3D::scalar((0, 2, 2), [1.0; 3], vec![]),
            Err(Error::InvalidVolume { .. })
        ));
        assert!(matches!(
            Volume3D::scalar((2, 2, 2), [1.0, 0.0, 1.0], vec![0.0; 8]),
            Err(Error::InvalidVolume { .. })
        ));
        let mut bad = vec![0.0f32; 8];
        bad[3] = f32::NAN;
        assert!(matches!(
            Volume3D::scalar((2, 2, 2), [1.0; 3], bad),
            Err(Error::InvalidVolume { .. })
        ));
        assert!(Volume3D::labels((3, 2, 1), [1.0, 2.0, 3.0], vec![0; 6]).is_ok());
    }

    #[test]
    fn identity_warp_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let vol = random_scalar(&mut rng, (9, 7, 5));
        let id = Transform::Rigid(RigidTransform::identity());

        let nearest = warp(&vol, &id, vol.dims(), Interpolation::Nearest, 1 << 20).unwrap();
        assert_eq!(nearest.scalar_data().unwrap(), vol.scalar_data().unwrap());

        let tri = warp(&vol, &id, vol.dims(), Interpolation::Trilinear, 1 << 20).unwrap();
        for (a, b) in tri
            .scalar_data()
            .unwrap()
            .iter()
            .zip(vol.scalar_data().unwrap())
        {
            assert!((a - b).abs() < 1e-6);
        }

        let labels = random_labels(&mut rng, (6, 6, 6), 4);
        let out = warp(&labels, &id, labels.dims(), Interpolation::Nearest, 64).unwrap();
        assert_eq!(out.label_data().unwrap(), labels.label_data().unwrap());
    }

    #[test]
    fn trilinear_on_labels_is_rejected() {
        let labels = Volume3D::labels((4, 4, 4), [1.0; 3], vec![0; 64]).unwrap();
        let id = Transform::Rigid(RigidTransform::identity());
        assert!(matches!(
            warp(&labels, &id, (4, 4, 4), Interpolation::Trilinear, 64),
            Err(Error::InterpolationMismatch)
        ));
    }

    #[test]
    fn translation_warp_moves_an_impulse_backward() {
        // Impulse at voxel (10, 8, 8) on a 17³ grid (normalized step 1/8).
        let dims = (17, 17, 17);
        let mut data = vec![0.0f32; 17 * 17 * 17];
        data[10 + 17 * (8 + 17 * 8)] = 1.0;
        let vol = Volume3D::scalar(dims, [1.0; 3], data).unwrap();

        // The transform maps output coordinates into moving space, so a
        // +0.25 x-shift pulls the impulse two voxels toward lower x.
        let t = Transform::Rigid(RigidTransform::translate(Vector3::new(0.25, 0.0, 0.0)));
        let out = warp(&vol, &t, dims, Interpolation::Nearest, 1 << 20).unwrap();
        let out_data = out.scalar_data().unwrap();
        assert_eq!(out_data[8 + 17 * (8 + 17 * 8)], 1.0);
        assert_eq!(out_data.iter().filter(|v| **v != 0.0).count(), 1);
    }

    #[test]
    fn out_of_bounds_samples_fill_with_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let vol = random_scalar(&mut rng, (8, 8, 8));
        let t = Transform::Rigid(RigidTransform::translate(Vector3::new(5.0, 0.0, 0.0)));
        let out = warp(&vol, &t, vol.dims(), Interpolation::Trilinear, 97).unwrap();
        assert!(out.scalar_data().unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn warping_is_invariant_to_chunk_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let vol = random_scalar(&mut rng, (13, 9, 7));

        let p = KeypointSet::from_coords((0..10).map(|_| {
            [
                rng.gen_range(-0.8..=0.8),
                rng.gen_range(-0.8..=0.8),
                rng.gen_range(-0.8..=0.8),
            ]
        }))
        .unwrap();
        let q = p.map(|pt| {
            Point3::new(
                pt.x + 0.05 * (3.0 * pt.y).sin(),
                pt.y - 0.04 * (2.0 * pt.z).cos(),
                pt.z + 0.03 * pt.x,
            )
        });
        let (tps, _) = solve_tps(&p, &q, 0.0, None).unwrap();
        let t = Transform::Tps(tps);

        let reference = warp(&vol, &t, vol.dims(), Interpolation::Trilinear, usize::MAX).unwrap();
        for chunk in [1usize, 64, 4096] {
            let out = warp(&vol, &t, vol.dims(), Interpolation::Trilinear, chunk).unwrap();
            assert_eq!(
                out.scalar_data().unwrap(),
                reference.scalar_data().unwrap(),
                "chunk size {chunk} changed the result"
            );
        }
    }

    #[test]
    fn quarter_turn_matches_the_grid_permutation() {
        // On an X=Y grid, rot_z(90°) maps voxel centers onto voxel centers:
        // the sample for output (i, j, k) lands exactly on input
        // (n-1-j, i, k). A power-of-two n-1 keeps the arithmetic exact.
        let n = 17;
        let dims = (n, n, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let vol = random_labels(&mut rng, dims, 5);
        let t = Transform::Rigid(RigidTransform::rot_z(std::f64::consts::FRAC_PI_2));
        let out = warp(&vol, &t, dims, Interpolation::Nearest, 1 << 20).unwrap();
        let src = vol.label_data().unwrap();
        let dst = out.label_data().unwrap();
        for k in 0..dims.2 {
            for j in 0..n {
                for i in 0..n {
                    assert_eq!(
                        dst[vol.index(i, j, k)],
                        src[vol.index(n - 1 - j, i, k)],
                        "mismatch at ({i},{j},{k})"
                    );
                }
            }
        }
    }

    #[test]
    fn warp_compose_consistency_for_rigid_motions() {
        let vol = smooth_volume((24, 24, 24));
        let t1 = RigidTransform::rot_z(0.3);
        let t2 = RigidTransform {
            rotation: RigidTransform::rot_x(0.2).rotation,
            translation: Vector3::new(0.05, -0.04, 0.02),
        };
        let once = warp(
            &vol,
            &Transform::Rigid(t1.compose(&t2)),
            vol.dims(),
            Interpolation::Trilinear,
            1 << 20,
        )
        .unwrap();
        // Warping with T2 then T1 (each warp pulls samples through its own
        // transform) matches the single warp through T1∘T2 up to the extra
        // interpolation pass.
        let inner = warp(
            &vol,
            &Transform::Rigid(t2),
            vol.dims(),
            Interpolation::Trilinear,
            1 << 20,
        )
        .unwrap();
        let twice = warp(
            &inner,
            &Transform::Rigid(t1),
            vol.dims(),
            Interpolation::Trilinear,
            1 << 20,
        )
        .unwrap();
        let a = once.scalar_data().unwrap();
        let b = twice.scalar_data().unwrap();
        let range = a.iter().fold(0.0f32, |m, v| m.max(*v)) as f64;
        let mad = a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs() as f64)
            .sum::<f64>()
            / a.len() as f64;
        assert!(mad < 0.01 * range, "mad {mad} range {range}");
    }

    #[test]
    fn register_pairwise_on_itself_is_identity() {
        let vol = smooth_volume((16, 16, 16));
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let kp = KeypointSet::from_coords((0..12).map(|_| {
            [
                rng.gen_range(-0.7..=0.7),
                rng.gen_range(-0.7..=0.7),
                rng.gen_range(-0.7..=0.7),
            ]
        }))
        .unwrap();
        let (warped, transform, diag) = register_pairwise(
            &vol,
            &vol,
            &kp,
            &kp,
            SolverFamily::Rigid,
            0.0,
            None,
            1 << 20,
        )
        .unwrap();
        assert!(diag.residual_rms < 1e-9);
        match &transform {
            Transform::Rigid(r) => {
                assert!((r.rotation - nalgebra::Matrix3::identity()).abs().max() < 1e-9);
                assert!(r.translation.amax() < 1e-9);
            }
            _ => panic!("expected a rigid transform"),
        }
        for (a, b) in warped
            .scalar_data()
            .unwrap()
            .iter()
            .zip(vol.scalar_data().unwrap())
        {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn register_pairwise_recovers_a_known_rigid_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        let moving = smooth_volume((20, 20, 20));
        let fixed = smooth_volume((18, 18, 18));
        let truth = RigidTransform {
            rotation: RigidTransform::rot_y(0.4).rotation,
            translation: Vector3::new(0.1, -0.05, 0.08),
        };
        let kp_fixed = KeypointSet::from_coords((0..15).map(|_| {
            [
                rng.gen_range(-0.6..=0.6),
                rng.gen_range(-0.6..=0.6),
                rng.gen_range(-0.6..=0.6),
            ]
        }))
        .unwrap();
        let kp_moving = kp_fixed.map(|p| truth.apply(&p));
        let (warped, transform, diag) = register_pairwise(
            &moving,
            &fixed,
            &kp_moving,
            &kp_fixed,
            SolverFamily::Rigid,
            0.0,
            None,
            1 << 20,
        )
        .unwrap();
        assert!(diag.residual_rms < 1e-9);
        assert_eq!(warped.dims(), fixed.dims());
        assert_eq!(warped.spacing_mm(), fixed.spacing_mm());
        match transform {
            Transform::Rigid(r) => {
                assert!((r.rotation - truth.rotation).abs().max() < 1e-9);
                assert!((r.translation - truth.translation).amax() < 1e-9);
            }
            _ => panic!("expected a rigid transform"),
        }
    }

    #[test]
    fn register_pairwise_uses_nearest_for_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let labels = random_labels(&mut rng, (10, 10, 10), 3);
        let kp = KeypointSet::from_coords((0..8).map(|_| {
            [
                rng.gen_range(-0.7..=0.7),
                rng.gen_range(-0.7..=0.7),
                rng.gen_range(-0.7..=0.7),
            ]
        }))
        .unwrap();
        let (warped, _, _) = register_pairwise(
            &labels,
            &labels,
            &kp,
            &kp,
            SolverFamily::Affine,
            0.0,
            None,
            512,
        )
        .unwrap();
        assert_eq!(warped.label_data().unwrap(), labels.label_data().unwrap());
    }

    #[test]
    fn affine_identity_under_nonidentity_spacing() {
        // Spacing is metadata for metrics; warping works in normalized
        // coordinates and must ignore it.
        let vol = smooth_volume((12, 12, 12))
            .with_spacing_mm([0.5, 2.0, 3.0])
            .unwrap();
        let t = Transform::Affine(AffineTransform::identity());
        let out = warp(&vol, &t, vol.dims(), Interpolation::Trilinear, 1024).unwrap();
        assert_eq!(out.spacing_mm(), [0.5, 2.0, 3.0]);
        for (a, b) in out
            .scalar_data()
            .unwrap()
            .iter()
            .zip(vol.scalar_data().unwrap())
        {
            assert!((a - b).abs() < 1e-6);
        }
    }
}

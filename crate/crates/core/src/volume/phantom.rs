//! Synthetic phantoms with known landmarks, labels, and activation maps.
//!
//! A phantom provides everything an end-to-end registration experiment
//! needs without real data: a smooth scalar image (Gaussian blobs over a
//! soft background), a Voronoi label partition, the ground-truth landmark
//! coordinates, and per-landmark Gaussian activation maps whose
//! centre-of-mass reduction recovers the landmarks. Random misalignments
//! and regularization strengths are sampled with the same conventions.

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{voxel_to_normalized, AffineTransform, KeypointSet, RigidTransform};
use crate::keypoints::ActivationStack;

use super::Volume3D;

/// Landmarks are sampled inside this normalized radius so blobs stay clear
/// of the volume edge.
const LANDMARK_BALL_RADIUS: f64 = 0.55;
/// Voxels outside this radius take background label 0.
const LABEL_BALL_RADIUS: f64 = 0.75;
/// Scalar-image blobs are this factor wider than the activation blobs,
/// keeping the image smooth enough for trilinear resampling.
const SCALAR_SIGMA_FACTOR: f64 = 3.0;
const BACKGROUND_AMPLITUDE: f64 = 0.2;
const BACKGROUND_SIGMA: f64 = 0.8;
/// Smallest singular value (of the centred landmark matrix) accepted as
/// non-coplanar.
const NONCOPLANAR_TOL: f64 = 1e-3;
const MAX_ATTEMPTS: usize = 1000;

/// Parameters of a synthetic phantom; fully determines the output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub dims: (usize, usize, usize),
    pub n_landmarks: usize,
    pub n_labels: usize,
    pub seed: u64,
    /// Standard deviation (normalized units) of the activation blobs.
    pub blob_sigma: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            dims: (64, 64, 64),
            n_landmarks: 16,
            n_labels: 4,
            seed: 0,
            blob_sigma: 0.03,
        }
    }
}

impl PhantomSpec {
    fn validate(&self) -> Result<()> {
        let (x, y, z) = self.dims;
        if x < 2 || y < 2 || z < 2 {
            return Err(Error::InfeasibleSpec {
                reason: format!("dims must be at least 2 per axis, got {:?}", self.dims),
            });
        }
        if self.n_landmarks < 4 {
            return Err(Error::InfeasibleSpec {
                reason: format!("need at least 4 landmarks, got {}", self.n_landmarks),
            });
        }
        if self.n_labels < 2 {
            return Err(Error::InfeasibleSpec {
                reason: format!("need at least 2 labels, got {}", self.n_labels),
            });
        }
        if self.n_labels > self.n_landmarks {
            return Err(Error::InfeasibleSpec {
                reason: format!(
                    "labels ({}) cannot outnumber landmarks ({})",
                    self.n_labels, self.n_landmarks
                ),
            });
        }
        if !(self.blob_sigma.is_finite() && self.blob_sigma > 0.0) {
            return Err(Error::InfeasibleSpec {
                reason: format!("blob_sigma must be positive, got {}", self.blob_sigma),
            });
        }
        Ok(())
    }
}

fn sample_in_ball(rng: &mut ChaCha8Rng, radius: f64) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.gen_range(-radius..=radius),
            rng.gen_range(-radius..=radius),
            rng.gen_range(-radius..=radius),
        );
        if v.norm_squared() <= radius * radius {
            return v;
        }
    }
}

fn non_coplanar(points: &[Vector3<f64>]) -> bool {
    let centroid: Vector3<f64> = points.iter().sum::<Vector3<f64>>() / points.len() as f64;
    let centered = DMatrix::from_fn(points.len(), 3, |r, c| points[r][c] - centroid[c]);
    let sv = centered.svd(false, false).singular_values;
    sv[sv.len() - 1] > NONCOPLANAR_TOL
}

/// Normalized coordinates of every voxel on an axis, precomputed once.
fn axis_coords(size: usize) -> Vec<f64> {
    (0..size).map(|i| voxel_to_normalized(i, size)).collect()
}

fn fill_by_voxel<T: Send>(
    dims: (usize, usize, usize),
    f: impl Fn(f64, f64, f64) -> T + Sync,
) -> Vec<T> {
    let (gx, gy, gz) = (axis_coords(dims.0), axis_coords(dims.1), axis_coords(dims.2));
    (0..dims.0 * dims.1 * dims.2)
        .into_par_iter()
        .map(|idx| {
            let i = idx % dims.0;
            let j = (idx / dims.0) % dims.1;
            let k = idx / (dims.0 * dims.1);
            f(gx[i], gy[j], gz[k])
        })
        .collect()
}

fn voronoi_labels(dims: (usize, usize, usize), sites: &[Vector3<f64>]) -> Vec<u16> {
    fill_by_voxel(dims, |x, y, z| {
        let g = Vector3::new(x, y, z);
        if g.norm() > LABEL_BALL_RADIUS {
            return 0u16;
        }
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (idx, site) in sites.iter().enumerate() {
            let d = (g - site).norm_squared();
            if d < best_d {
                best_d = d;
                best = idx;
            }
        }
        (best + 1) as u16
    })
}

fn labels_cover_all(labels: &[u16], n_labels: usize) -> bool {
    let mut seen = vec![false; n_labels + 1];
    for &l in labels {
        seen[l as usize] = true;
    }
    seen.iter().skip(1).all(|s| *s)
}

/// Per-landmark isotropic Gaussian activation maps.
pub fn gaussian_activations(
    landmarks: &KeypointSet,
    dims: (usize, usize, usize),
    sigma: f64,
) -> Result<ActivationStack> {
    let inv = 1.0 / (2.0 * sigma * sigma);
    let maps = landmarks
        .points()
        .iter()
        .map(|lm| {
            let c = lm.to_vector();
            fill_by_voxel(dims, |x, y, z| {
                let d2 = (Vector3::new(x, y, z) - c).norm_squared();
                (-d2 * inv).exp() as f32
            })
        })
        .collect();
    ActivationStack::new(dims, maps)
}

/// Generates a deterministic synthetic phantom.
///
/// Landmarks are drawn uniformly in a ball of radius 0.55 with pairwise
/// separation at least `2·blob_sigma` and a non-coplanarity check; the
/// scalar image sums one Gaussian blob per landmark over a broad background
/// Gaussian; labels are the Voronoi cells of the first `n_labels` landmarks
/// inside a 0.75-radius sphere (0 outside, every label guaranteed present);
/// activation map `i` is an isotropic Gaussian at landmark `i`. Output
/// volumes use 1 mm isotropic spacing.
pub fn generate_phantom(
    spec: &PhantomSpec,
) -> Result<(Volume3D, Volume3D, KeypointSet, ActivationStack)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let min_sep = 2.0 * spec.blob_sigma;

    let mut landmarks: Vec<Vector3<f64>> = Vec::new();
    let mut label_data: Option<Vec<u16>> = None;
    for _attempt in 0..MAX_ATTEMPTS {
        landmarks.clear();
        'points: for _ in 0..spec.n_landmarks {
            for _try in 0..200 {
                let candidate = sample_in_ball(&mut rng, LANDMARK_BALL_RADIUS);
                if landmarks
                    .iter()
                    .all(|p| (p - candidate).norm() >= min_sep)
                {
                    landmarks.push(candidate);
                    continue 'points;
                }
            }
            break 'points;
        }
        if landmarks.len() < spec.n_landmarks || !non_coplanar(&landmarks) {
            continue;
        }
        let labels = voronoi_labels(spec.dims, &landmarks[..spec.n_labels]);
        if labels_cover_all(&labels, spec.n_labels) {
            label_data = Some(labels);
            break;
        }
    }
    let label_data = label_data.ok_or_else(|| Error::InfeasibleSpec {
        reason: format!(
            "could not place {} landmarks with separation {min_sep} in {MAX_ATTEMPTS} attempts",
            spec.n_landmarks
        ),
    })?;

    let sigma_img = SCALAR_SIGMA_FACTOR * spec.blob_sigma;
    let inv_img = 1.0 / (2.0 * sigma_img * sigma_img);
    let inv_bg = 1.0 / (2.0 * BACKGROUND_SIGMA * BACKGROUND_SIGMA);
    let sites = landmarks.clone();
    let scalar_data = fill_by_voxel(spec.dims, move |x, y, z| {
        let g = Vector3::new(x, y, z);
        let mut v = BACKGROUND_AMPLITUDE * (-g.norm_squared() * inv_bg).exp();
        for site in &sites {
            v += (-(g - site).norm_squared() * inv_img).exp();
        }
        v as f32
    });

    let spacing = [1.0; 3];
    let scalar = Volume3D::scalar(spec.dims, spacing, scalar_data)?;
    let labels = Volume3D::labels(spec.dims, spacing, label_data)?;
    let keypoints = KeypointSet::from_coords(landmarks.iter().map(|v| [v.x, v.y, v.z]))?;
    let activations = gaussian_activations(&keypoints, spec.dims, spec.blob_sigma)?;
    Ok((scalar, labels, keypoints, activations))
}

/// A closed interval `[lo, hi]` for augmentation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::InfeasibleSpec {
                reason: format!("invalid interval [{lo}, {hi}]"),
            });
        }
        Ok(Interval { lo, hi })
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        assert!(self.lo <= self.hi, "invalid interval");
        if self.lo == self.hi {
            self.lo
        } else {
            rng.gen_range(self.lo..=self.hi)
        }
    }
}

/// Uniform sampling ranges for synthetic misalignments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationRanges {
    /// Rotation about x, y, z in degrees.
    pub rotation_deg: [Interval; 3],
    /// Translation per axis in voxels (converted with the grid size).
    pub translation_vox: Interval,
    /// Isotropic scale factor.
    pub scale: Interval,
    /// Shear coefficients (xy, xz, yz of an upper-triangular shear).
    pub shear: Interval,
}

impl Default for AugmentationRanges {
    fn default() -> Self {
        let full_turn = Interval {
            lo: -180.0,
            hi: 180.0,
        };
        AugmentationRanges {
            rotation_deg: [full_turn; 3],
            translation_vox: Interval { lo: -30.0, hi: 30.0 },
            scale: Interval { lo: 0.8, hi: 1.2 },
            shear: Interval { lo: -0.1, hi: 0.1 },
        }
    }
}

/// Draws a random affine misalignment: `p ↦ Rx·Ry·Rz·scale·shear·p + t`,
/// with every parameter uniform on its interval and the voxel translation
/// converted to normalized units via the grid size (`2t/(size−1)` per
/// axis). Deterministic per seed; parameters are drawn in a fixed order
/// (rotations x,y,z; translations x,y,z; scale; shear xy,xz,yz).
///
/// # Panics
/// Panics if any grid dimension is below 2 (no normalized extent).
pub fn sample_augmentation(
    ranges: &AugmentationRanges,
    dims: (usize, usize, usize),
    seed: u64,
) -> AffineTransform {
    assert!(
        dims.0 >= 2 && dims.1 >= 2 && dims.2 >= 2,
        "grid dimensions must be at least 2 per axis"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ax = ranges.rotation_deg[0].sample(&mut rng).to_radians();
    let ay = ranges.rotation_deg[1].sample(&mut rng).to_radians();
    let az = ranges.rotation_deg[2].sample(&mut rng).to_radians();
    let t_vox = Vector3::new(
        ranges.translation_vox.sample(&mut rng),
        ranges.translation_vox.sample(&mut rng),
        ranges.translation_vox.sample(&mut rng),
    );
    let scale = ranges.scale.sample(&mut rng);
    let (sxy, sxz, syz) = (
        ranges.shear.sample(&mut rng),
        ranges.shear.sample(&mut rng),
        ranges.shear.sample(&mut rng),
    );

    let rotation = RigidTransform::rot_x(ax).rotation
        * RigidTransform::rot_y(ay).rotation
        * RigidTransform::rot_z(az).rotation;
    let shear = Matrix3::new(1.0, sxy, sxz, 0.0, 1.0, syz, 0.0, 0.0, 1.0);
    let linear = rotation * (Matrix3::identity() * scale) * shear;
    let translation = Vector3::new(
        2.0 * t_vox.x / (dims.0 - 1) as f64,
        2.0 * t_vox.y / (dims.1 - 1) as f64,
        2.0 * t_vox.z / (dims.2 - 1) as f64,
    );
    AffineTransform::from_parts(linear, translation)
}

/// Default exponent range for [`sample_lambda`]: λ = 10^u with u ∈ [0, 1],
/// i.e. support [1, 10].
pub const DEFAULT_LAMBDA_EXPONENTS: Interval = Interval { lo: 0.0, hi: 1.0 };

/// Maps a unit sample to a log-uniform λ over the given exponent range.
pub fn lambda_from_unit(u: f64, exponents: Interval) -> f64 {
    10f64.powf(exponents.lo + u * (exponents.hi - exponents.lo))
}

/// Log-uniform regularization strength over a configurable exponent range:
/// λ = 10^u with u uniform on the interval. Deterministic per seed.
pub fn sample_lambda_in(exponents: Interval, seed: u64) -> f64 {
    let u: f64 = ChaCha8Rng::seed_from_u64(seed).gen();
    lambda_from_unit(u, exponents)
}

/// Log-uniform λ over the default support [1, 10].
pub fn sample_lambda(seed: u64) -> f64 {
    sample_lambda_in(DEFAULT_LAMBDA_EXPONENTS, seed)
}

//! Deterministic fixtures shared by the benchmark targets.

use keysolve_core::volume::{generate_phantom, PhantomSpec, Volume3D};
use keysolve_core::{ActivationStack, KeypointSet, Point3, RigidTransform};
use nalgebra::Vector3;
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Uniform points in the unit ball.
pub fn point_cloud(seed: u64, n: usize) -> KeypointSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Uniform::new_inclusive(-1.0, 1.0);
    let mut coords = Vec::with_capacity(n);
    while coords.len() < n {
        let c = [
            dist.sample(&mut rng),
            dist.sample(&mut rng),
            dist.sample(&mut rng),
        ];
        if c.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
            coords.push(c);
        }
    }
    KeypointSet::from_coords(coords).unwrap()
}

/// A cloud and a rigidly moved copy — exact correspondences, the common
/// input shape for the closed-form solvers.
pub fn correspondence_pair(seed: u64, n: usize) -> (KeypointSet, KeypointSet) {
    let source = point_cloud(seed, n);
    let motion = RigidTransform::rot_z(0.7)
        .compose(&RigidTransform::translate(Vector3::new(0.2, -0.1, 0.3)));
    let target = source.map(|p| motion.apply(p));
    (source, target)
}

/// `m` rigidly perturbed copies of one cloud, as fed to groupwise
/// registration.
pub fn subject_clouds(seed: u64, m: usize, n: usize) -> Vec<KeypointSet> {
    let base = point_cloud(seed, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let angle = Uniform::new_inclusive(-0.5, 0.5);
    let shift = Uniform::new_inclusive(-0.2, 0.2);
    (0..m)
        .map(|_| {
            let motion = RigidTransform::rot_y(angle.sample(&mut rng)).compose(
                &RigidTransform::translate(Vector3::new(
                    shift.sample(&mut rng),
                    shift.sample(&mut rng),
                    shift.sample(&mut rng),
                )),
            );
            base.map(|p| motion.apply(p))
        })
        .collect()
}

/// One synthetic phantom reused by the volume benchmarks.
pub fn phantom(dims: usize) -> (Volume3D, Volume3D, KeypointSet, ActivationStack) {
    generate_phantom(&PhantomSpec {
        dims: (dims, dims, dims),
        n_landmarks: 16,
        n_labels: 4,
        seed: 7,
        blob_sigma: 0.03,
    })
    .unwrap()
}

/// A slightly displaced copy of a label volume for the metric benchmarks:
/// every label voxel shifts by one step along x.
pub fn shifted_labels(labels: &Volume3D) -> Volume3D {
    let (nx, ny, nz) = labels.dims();
    let src = labels.label_data().unwrap();
    let mut data = vec![0u16; src.len()];
    for k in 0..nz {
        for j in 0..ny {
            for i in 1..nx {
                data[labels.index(i, j, k)] = src[labels.index(i - 1, j, k)];
            }
        }
    }
    Volume3D::labels(labels.dims(), labels.spacing_mm(), data).unwrap()
}

/// A handful of jittered control-point targets for spline warps.
pub fn jittered(points: &KeypointSet, seed: u64, scale: f64) -> KeypointSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Uniform::new_inclusive(-scale, scale);
    points.map(|p| {
        Point3::new(
            p.x + dist.sample(&mut rng),
            p.y + dist.sample(&mut rng),
            p.z + dist.sample(&mut rng),
        )
    })
}

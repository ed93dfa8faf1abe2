//! Keypoint extraction from activation maps.
//!
//! A trained detector emits one non-negative activation map per keypoint;
//! here those maps are reduced to coordinates (center of mass in normalized
//! space), per-map energies, and softmax correspondence weights. Everything
//! accumulates in `f64` even though maps are stored as `f32`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{voxel_to_normalized, CorrespondenceWeights, KeypointSet, Point3};

/// A stack of per-keypoint activation maps sharing one voxel grid.
///
/// Maps are stored x-fastest (`index = x + X*(y + Y*z)`); values must be
/// finite and non-negative (the detector is rectified), and each map must
/// carry at least one strictly positive value so its center of mass exists.
#[derive(Clone, Debug)]
pub struct ActivationStack {
    dims: (usize, usize, usize),
    maps: Vec<Vec<f32>>,
}

impl ActivationStack {
    pub fn new(dims: (usize, usize, usize), maps: Vec<Vec<f32>>) -> Result<Self> {
        let voxels = dims.0 * dims.1 * dims.2;
        if voxels == 0 {
            return Err(Error::InvalidVolume {
                reason: format!("activation grid {dims:?} has zero voxels"),
            });
        }
        if maps.is_empty() {
            return Err(Error::InvalidVolume {
                reason: "activation stack has no maps".into(),
            });
        }
        for (m, map) in maps.iter().enumerate() {
            if map.len() != voxels {
                return Err(Error::InvalidVolume {
                    reason: format!(
                        "activation map {m} has {} values, expected {voxels} for dims {dims:?}",
                        map.len()
                    ),
                });
            }
            let mut any_positive = false;
            for &v in map {
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::NegativeActivation { map: m });
                }
                any_positive |= v > 0.0;
            }
            if !any_positive {
                return Err(Error::AllZeroMap { map: m });
            }
        }
        Ok(ActivationStack { dims, maps })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn n_maps(&self) -> usize {
        self.maps.len()
    }

    pub fn maps(&self) -> &[Vec<f32>] {
        &self.maps
    }
}

/// Total activation mass of one map, accumulated in `f64` in storage order.
fn map_energy(map: &[f32]) -> f64 {
    map.iter().map(|&v| v as f64).sum()
}

/// Per-map activation energies, one entry per map in stack order.
pub fn activation_energies(stack: &ActivationStack) -> Vec<f64> {
    stack.maps.iter().map(|m| map_energy(m)).collect()
}

/// Reduce each activation map to its center of mass in normalized
/// coordinates, preserving map order.
///
/// Per-voxel weights are normalized by the map energy *before* the
/// coordinate sum, so a map whose whole mass sits in a single voxel yields
/// that voxel's normalized coordinate bit-exactly.
pub fn extract_keypoints(stack: &ActivationStack) -> Result<KeypointSet> {
    let (nx, ny, nz) = stack.dims;
    let points: Vec<Point3> = stack
        .maps
        .par_iter()
        .enumerate()
        .map(|(m, map)| {
            let energy = map_energy(map);
            if energy <= 0.0 {
                return Err(Error::AllZeroMap { map: m });
            }
            let mut cx = 0.0f64;
            let mut cy = 0.0f64;
            let mut cz = 0.0f64;
            let mut idx = 0;
            for z in 0..nz {
                let gz = voxel_to_normalized(z, nz);
                for y in 0..ny {
                    let gy = voxel_to_normalized(y, ny);
                    for x in 0..nx {
                        let a = map[idx] as f64;
                        idx += 1;
                        if a > 0.0 {
                            let w = a / energy;
                            cx += w * voxel_to_normalized(x, nx);
                            cy += w * gy;
                            cz += w * gz;
                        }
                    }
                }
            }
            Ok(Point3::new(cx, cy, cz))
        })
        .collect::<Result<_>>()?;
    KeypointSet::new(points)
}

/// Softmax correspondence weights from paired fixed/moving energies.
///
/// The confidence of correspondence `i` is the product
/// `e_fixed[i] * e_moving[i]`; weights are the softmax of those products
/// with the maximum subtracted before exponentiation for overflow safety.
pub fn correspondence_weights(
    e_fixed: &[f64],
    e_moving: &[f64],
) -> Result<CorrespondenceWeights> {
    if e_fixed.len() != e_moving.len() {
        return Err(Error::MismatchedLengths {
            left: e_fixed.len(),
            right: e_moving.len(),
            what: "activation energies",
        });
    }
    if e_fixed.is_empty() {
        return Err(Error::InvalidWeights {
            reason: "no energies to weight".into(),
        });
    }
    let products: Vec<f64> = e_fixed
        .iter()
        .zip(e_moving)
        .map(|(&f, &m)| f * m)
        .collect();
    if products.iter().any(|p| !p.is_finite()) {
        return Err(Error::InvalidWeights {
            reason: "energy products are not finite".into(),
        });
    }
    let max = products.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    CorrespondenceWeights::new(products.iter().map(|&p| (p - max).exp()).collect())
}

//! Label-overlap and boundary-distance metrics for registered volumes.
//!
//! Dice counts voxel overlap per label; Hausdorff measures the largest
//! gap between label boundaries in millimetres. Both are exact — Hausdorff
//! enumerates boundary voxels and finds true nearest neighbours (no
//! sampling), using an expanding-shell search that matches a brute-force
//! all-pairs scan bit for bit.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::Volume3D;

/// Per-label Dice scores and their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiceScores {
    /// Score per label, sorted by label id.
    pub per_label: BTreeMap<u16, f64>,
    /// Mean over the scored labels.
    pub mean: f64,
}

fn require_labels<'v>(vol: &'v Volume3D, which: &'static str) -> Result<&'v [u16]> {
    vol.label_data().ok_or_else(|| Error::InvalidVolume {
        reason: format!("{which} volume must hold labels, not scalars"),
    })
}

fn require_same_grid(a: &Volume3D, b: &Volume3D) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::DimMismatch {
            a: a.dims(),
            b: b.dims(),
        });
    }
    if a.spacing_mm() != b.spacing_mm() {
        return Err(Error::InvalidVolume {
            reason: format!(
                "volumes must share spacing, got {:?} vs {:?}",
                a.spacing_mm(),
                b.spacing_mm()
            ),
        });
    }
    Ok(())
}

/// Dice overlap `2|Aℓ∩Bℓ| / (|Aℓ|+|Bℓ|)` per label.
///
/// When `labels` is `None`, every nonzero label present in either volume is
/// scored. A requested label absent from both volumes is excluded from the
/// result (its Dice is undefined); a label present in exactly one volume
/// scores 0. The mean averages the scored labels.
pub fn dice(a: &Volume3D, b: &Volume3D, labels: Option<&[u16]>) -> Result<DiceScores> {
    let la = require_labels(a, "first")?;
    let lb = require_labels(b, "second")?;
    require_same_grid(a, b)?;

    // counts[label] = (|A|, |B|, |A∩B|); integer accumulation keeps the
    // result independent of traversal order.
    let mut counts: BTreeMap<u16, (u64, u64, u64)> = BTreeMap::new();
    for (&va, &vb) in la.iter().zip(lb) {
        counts.entry(va).or_default().0 += 1;
        counts.entry(vb).or_default().1 += 1;
        if va == vb {
            counts.entry(va).or_default().2 += 1;
        }
    }

    let requested: BTreeSet<u16> = match labels {
        Some(list) => list.iter().copied().collect(),
        None => counts.keys().copied().filter(|l| *l != 0).collect(),
    };

    let mut per_label = BTreeMap::new();
    for label in requested {
        let (na, nb, inter) = counts.get(&label).copied().unwrap_or_default();
        if na + nb == 0 {
            continue;
        }
        per_label.insert(label, 2.0 * inter as f64 / (na + nb) as f64);
    }
    if per_label.is_empty() {
        return Err(Error::EmptyLabel {
            label: 0,
            which: "both volumes (no labels to score)",
        });
    }
    let mean = per_label.values().sum::<f64>() / per_label.len() as f64;
    Ok(DiceScores { per_label, mean })
}

/// Extracts the boundary voxels of `label`: voxels carrying the label with
/// at least one six-neighbour of a different label, or sitting at the
/// volume edge.
pub(crate) fn boundary_voxels(vol: &Volume3D, label: u16) -> Vec<[i64; 3]> {
    let data = vol.label_data().expect("label volume");
    let (x, y, z) = vol.dims();
    let at = |i: usize, j: usize, k: usize| data[i + x * (j + y * k)];
    (0..z)
        .into_par_iter()
        .map(|k| {
            let mut slab = Vec::new();
            for j in 0..y {
                for i in 0..x {
                    if at(i, j, k) != label {
                        continue;
                    }
                    let edge = i == 0 || i == x - 1 || j == 0 || j == y - 1 || k == 0 || k == z - 1;
                    let boundary = edge
                        || at(i - 1, j, k) != label
                        || at(i + 1, j, k) != label
                        || at(i, j - 1, k) != label
                        || at(i, j + 1, k) != label
                        || at(i, j, k - 1) != label
                        || at(i, j, k + 1) != label;
                    if boundary {
                        slab.push([i as i64, j as i64, k as i64]);
                    }
                }
            }
            slab
        })
        .collect::<Vec<_>>()
        .concat()
}

/// Squared Euclidean distance in mm between two voxel coordinates.
#[inline]
fn pair_sq(a: [i64; 3], b: [i64; 3], spacing: [f64; 3]) -> f64 {
    let dx = (a[0] - b[0]) as f64 * spacing[0];
    let dy = (a[1] - b[1]) as f64 * spacing[1];
    let dz = (a[2] - b[2]) as f64 * spacing[2];
    dx * dx + dy * dy + dz * dz
}

/// Occupancy grid over boundary voxels for shell queries.
struct BoundaryMask {
    dims: (usize, usize, usize),
    mask: Vec<bool>,
}

impl BoundaryMask {
    fn new(dims: (usize, usize, usize), voxels: &[[i64; 3]]) -> Self {
        let mut mask = vec![false; dims.0 * dims.1 * dims.2];
        for v in voxels {
            mask[v[0] as usize + dims.0 * (v[1] as usize + dims.1 * v[2] as usize)] = true;
        }
        BoundaryMask { dims, mask }
    }

    #[inline]
    fn occupied(&self, i: i64, j: i64, k: i64) -> bool {
        self.mask[i as usize + self.dims.0 * (j as usize + self.dims.1 * k as usize)]
    }
}

/// Exact squared distance from `p` to the nearest masked voxel, searching
/// Chebyshev shells of growing radius. After scanning shell `r`, any
/// unvisited voxel differs by at least `r+1` on some axis, hence lies at
/// least `(r+1)·min(spacing)` away — once the best find beats that bound
/// the search is complete.
fn nearest_sq(p: [i64; 3], target: &BoundaryMask, spacing: [f64; 3]) -> f64 {
    let (x, y, z) = target.dims;
    let bounds = [x as i64, y as i64, z as i64];
    let min_spacing = spacing[0].min(spacing[1]).min(spacing[2]);
    let max_radius = bounds.iter().max().copied().unwrap_or(1);
    let mut best = f64::INFINITY;

    let clip = |lo: i64, hi: i64, bound: i64| (lo.max(0), hi.min(bound - 1));

    for r in 0..=max_radius {
        if r == 0 {
            if target.occupied(p[0], p[1], p[2]) {
                return 0.0;
            }
        } else {
            let mut visit = |q: [i64; 3]| {
                if target.occupied(q[0], q[1], q[2]) {
                    let d = pair_sq(p, q, spacing);
                    if d < best {
                        best = d;
                    }
                }
            };
            // Two x-faces of the Chebyshev shell, full extent in y and z.
            let (jl, jh) = clip(p[1] - r, p[1] + r, bounds[1]);
            let (kl, kh) = clip(p[2] - r, p[2] + r, bounds[2]);
            for &i in &[p[0] - r, p[0] + r] {
                if i < 0 || i >= bounds[0] {
                    continue;
                }
                for j in jl..=jh {
                    for k in kl..=kh {
                        visit([i, j, k]);
                    }
                }
            }
            // Two y-faces, x interior to avoid revisiting the x-faces.
            let (il, ih) = clip(p[0] - r + 1, p[0] + r - 1, bounds[0]);
            for &j in &[p[1] - r, p[1] + r] {
                if j < 0 || j >= bounds[1] {
                    continue;
                }
                for i in il..=ih {
                    for k in kl..=kh {
                        visit([i, j, k]);
                    }
                }
            }
            // Two z-faces, x and y interior.
            let (jl2, jh2) = clip(p[1] - r + 1, p[1] + r - 1, bounds[1]);
            for &k in &[p[2] - r, p[2] + r] {
                if k < 0 || k >= bounds[2] {
                    continue;
                }
                for i in il..=ih {
                    for j in jl2..=jh2 {
                        visit([i, j, k]);
                    }
                }
            }
        }
        let unreachable_below = (r + 1) as f64 * min_spacing;
        if best <= unreachable_below * unreachable_below {
            break;
        }
    }
    best
}

/// Directed squared boundary distances from every voxel of `from` to the
/// nearest voxel of `to`.
fn directed_sq(from: &[[i64; 3]], to: &BoundaryMask, spacing: [f64; 3]) -> Vec<f64> {
    from.par_iter()
        .map(|p| nearest_sq(*p, to, spacing))
        .collect()
}

fn boundary_distances(
    a: &Volume3D,
    b: &Volume3D,
    label: u16,
) -> Result<(Vec<f64>, Vec<f64>)> {
    require_labels(a, "first")?;
    require_labels(b, "second")?;
    require_same_grid(a, b)?;
    let spacing = a.spacing_mm();
    let ba = boundary_voxels(a, label);
    if ba.is_empty() {
        return Err(Error::EmptyLabel { label, which: "a" });
    }
    let bb = boundary_voxels(b, label);
    if bb.is_empty() {
        return Err(Error::EmptyLabel { label, which: "b" });
    }
    let mask_a = BoundaryMask::new(a.dims(), &ba);
    let mask_b = BoundaryMask::new(b.dims(), &bb);
    Ok((
        directed_sq(&ba, &mask_b, spacing),
        directed_sq(&bb, &mask_a, spacing),
    ))
}

/// Exact symmetric Hausdorff distance (mm) between the boundaries of
/// `label` in the two volumes.
pub fn hausdorff(a: &Volume3D, b: &Volume3D, label: u16) -> Result<f64> {
    let (ab, ba) = boundary_distances(a, b, label)?;
    let max_sq = ab
        .into_iter()
        .chain(ba)
        .fold(0.0f64, f64::max);
    Ok(max_sq.sqrt())
}

/// Percentile Hausdorff (e.g. 95 for HD95): the larger of the two directed
/// nearest-rank percentiles. `percentile` must lie in `(0, 100]`;
/// `hausdorff` equals the 100th percentile.
pub fn hausdorff_percentile(
    a: &Volume3D,
    b: &Volume3D,
    label: u16,
    percentile: f64,
) -> Result<f64> {
    if !(percentile > 0.0 && percentile <= 100.0) {
        return Err(Error::InvalidVolume {
            reason: format!("percentile must lie in (0, 100], got {percentile}"),
        });
    }
    let (mut ab, mut ba) = boundary_distances(a, b, label)?;
    let rank = |d: &mut Vec<f64>| {
        d.sort_by(f64::total_cmp);
        let idx = ((percentile / 100.0 * d.len() as f64).ceil() as usize)
            .clamp(1, d.len())
            - 1;
        d[idx]
    };
    Ok(rank(&mut ab).max(rank(&mut ba)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn labels_from(dims: (usize, usize, usize), f: impl Fn(usize, usize, usize) -> u16) -> Volume3D {
        labels_with_spacing(dims, [1.0; 3], f)
    }

    fn labels_with_spacing(
        dims: (usize, usize, usize),
        spacing: [f64; 3],
        f: impl Fn(usize, usize, usize) -> u16,
    ) -> Volume3D {
        let mut data = Vec::with_capacity(dims.0 * dims.1 * dims.2);
        for k in 0..dims.2 {
            for j in 0..dims.1 {
                for i in 0..dims.0 {
                    data.push(f(i, j, k));
                }
            }
        }
        Volume3D::labels(dims, spacing, data).unwrap()
    }

    fn random_labels(rng: &mut ChaCha8Rng, dims: (usize, usize, usize), n: u16) -> Volume3D {
        let data = (0..dims.0 * dims.1 * dims.2)
            .map(|_| rng.gen_range(0..=n))
            .collect();
        Volume3D::labels(dims, [1.0; 3], data).unwrap()
    }

    /// Reference all-pairs Hausdorff used to validate the shell search.
    fn brute_force_hausdorff(a: &Volume3D, b: &Volume3D, label: u16) -> f64 {
        let spacing = a.spacing_mm();
        let ba = boundary_voxels(a, label);
        let bb = boundary_voxels(b, label);
        let directed = |from: &[[i64; 3]], to: &[[i64; 3]]| {
            from.iter()
                .map(|p| {
                    to.iter()
                        .map(|q| pair_sq(*p, *q, spacing))
                        .fold(f64::INFINITY, f64::min)
                })
                .fold(0.0f64, f64::max)
        };
        directed(&ba, &bb).max(directed(&bb, &ba)).sqrt()
    }

    #[test]
    fn dice_of_identical_volumes_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let vol = random_labels(&mut rng, (12, 10, 8), 4);
        let scores = dice(&vol, &vol, None).unwrap();
        assert_eq!(scores.per_label.len(), 4);
        for (_, v) in &scores.per_label {
            assert_eq!(*v, 1.0);
        }
        assert_eq!(scores.mean, 1.0);
    }

    #[test]
    fn dice_of_disjoint_masks_is_zero() {
        let a = labels_from((10, 10, 10), |i, _, _| u16::from(i < 5));
        let b = labels_from((10, 10, 10), |i, _, _| u16::from(i >= 5));
        let scores = dice(&a, &b, None).unwrap();
        assert_eq!(scores.per_label[&1], 0.0);
        assert_eq!(scores.mean, 0.0);
    }

    #[test]
    fn dice_matches_a_hand_count() {
        // Two 10³ cubes of label 1 overlapping in a 10×10×5 slab.
        let a = labels_from((10, 10, 15), |_, _, k| u16::from(k < 10));
        let b = labels_from((10, 10, 15), |_, _, k| u16::from(k >= 5));
        let scores = dice(&a, &b, None).unwrap();
        assert_eq!(scores.per_label[&1], 2.0 * 500.0 / 2000.0);
    }

    #[test]
    fn dice_label_selection_and_absent_labels() {
        let a = labels_from((8, 8, 8), |i, _, _| if i < 2 { 1 } else if i < 4 { 2 } else { 0 });
        let b = labels_from((8, 8, 8), |i, _, _| if i < 2 { 1 } else { 0 });
        // Label 9 is absent from both: excluded. Label 2 exists only in a:
        // scores 0 and drags the mean down.
        let scores = dice(&a, &b, Some(&[1, 2, 9])).unwrap();
        assert_eq!(scores.per_label.len(), 2);
        assert_eq!(scores.per_label[&1], 1.0);
        assert_eq!(scores.per_label[&2], 0.0);
        assert_eq!(scores.mean, 0.5);
        // No scoreable labels at all is an error.
        let zeros = labels_from((8, 8, 8), |_, _, _| 0);
        assert!(matches!(
            dice(&zeros, &zeros, None),
            Err(Error::EmptyLabel { .. })
        ));
    }

    #[test]
    fn dice_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let a = random_labels(&mut rng, (9, 9, 9), 3);
        let b = random_labels(&mut rng, (9, 9, 9), 3);
        let ab = dice(&a, &b, None).unwrap();
        let ba = dice(&b, &a, None).unwrap();
        assert_eq!(ab, ba);
    }

    #[test]
    fn dice_rejects_mismatched_inputs() {
        let a = labels_from((4, 4, 4), |_, _, _| 1);
        let b = labels_from((4, 4, 5), |_, _, _| 1);
        assert!(matches!(dice(&a, &b, None), Err(Error::DimMismatch { .. })));
        let scalar = Volume3D::scalar((4, 4, 4), [1.0; 3], vec![0.0; 64]).unwrap();
        assert!(matches!(
            dice(&scalar, &a, None),
            Err(Error::InvalidVolume { .. })
        ));
    }

    #[test]
    fn boundary_includes_volume_edges() {
        // A uniformly labelled 3³ volume: every voxel except the centre
        // touches the volume edge.
        let vol = labels_from((3, 3, 3), |_, _, _| 7);
        let boundary = boundary_voxels(&vol, 7);
        assert_eq!(boundary.len(), 26);
        assert!(!boundary.contains(&[1, 1, 1]));
    }

    #[test]
    fn hausdorff_of_identical_volumes_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let vol = random_labels(&mut rng, (10, 10, 10), 2);
        assert_eq!(hausdorff(&vol, &vol, 1).unwrap(), 0.0);
    }

    #[test]
    fn hausdorff_of_two_points_is_their_distance() {
        let a = labels_from((10, 4, 4), |i, j, k| u16::from(i == 1 && j == 2 && k == 2));
        let b = labels_from((10, 4, 4), |i, j, k| u16::from(i == 8 && j == 2 && k == 2));
        assert_eq!(hausdorff(&a, &b, 1).unwrap(), 7.0);
        assert_eq!(hausdorff_percentile(&a, &b, 1, 95.0).unwrap(), 7.0);
    }

    #[test]
    fn hausdorff_of_six_connected_dilation_is_one_spacing() {
        let cube = |i: usize, j: usize, k: usize| {
            (4..8).contains(&i) && (4..8).contains(&j) && (4..8).contains(&k)
        };
        let a = labels_from((16, 16, 16), |i, j, k| u16::from(cube(i, j, k)));
        // Dilate by one step of the 6-neighbourhood (city-block ball).
        let b = labels_from((16, 16, 16), |i, j, k| {
            let near = cube(i, j, k)
                || (i > 0 && cube(i - 1, j, k))
                || cube(i + 1, j, k)
                || (j > 0 && cube(i, j - 1, k))
                || cube(i, j + 1, k)
                || (k > 0 && cube(i, j, k - 1))
                || cube(i, j, k + 1);
            u16::from(near)
        });
        let hd = hausdorff(&a, &b, 1).unwrap();
        assert_eq!(hd, 1.0);
        assert_eq!(hd, brute_force_hausdorff(&a, &b, 1));
    }

    #[test]
    fn shell_search_matches_brute_force_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        for trial in 0..5 {
            let dims = (
                rng.gen_range(5..=14),
                rng.gen_range(5..=14),
                rng.gen_range(5..=14),
            );
            let spacing = [1.0, 1.5, 2.0];
            let a = labels_with_spacing(dims, spacing, |_, _, _| 0);
            let mut da = a.label_data().unwrap().to_vec();
            let mut db = da.clone();
            for v in da.iter_mut() {
                *v = rng.gen_range(0..=2);
            }
            for v in db.iter_mut() {
                *v = rng.gen_range(0..=2);
            }
            let a = Volume3D::labels(dims, spacing, da).unwrap();
            let b = Volume3D::labels(dims, spacing, db).unwrap();
            for label in 1..=2 {
                match hausdorff(&a, &b, label) {
                    Ok(hd) => assert_eq!(
                        hd,
                        brute_force_hausdorff(&a, &b, label),
                        "trial {trial} label {label}"
                    ),
                    Err(Error::EmptyLabel { .. }) => {}
                    Err(e) => panic!("unexpected error: {e}"),
                }
            }
        }
    }

    #[test]
    fn hausdorff_percentile_is_bounded_by_the_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let a = random_labels(&mut rng, (12, 12, 12), 1);
        let b = random_labels(&mut rng, (12, 12, 12), 1);
        let hd = hausdorff(&a, &b, 1).unwrap();
        let hd95 = hausdorff_percentile(&a, &b, 1, 95.0).unwrap();
        let hd100 = hausdorff_percentile(&a, &b, 1, 100.0).unwrap();
        assert!(hd95 <= hd);
        assert_eq!(hd100, hd);
        assert!(matches!(
            hausdorff_percentile(&a, &b, 1, 0.0),
            Err(Error::InvalidVolume { .. })
        ));
    }

    #[test]
    fn hausdorff_reports_which_side_lacks_the_label() {
        let a = labels_from((6, 6, 6), |i, _, _| u16::from(i < 3));
        let empty = labels_from((6, 6, 6), |_, _, _| 0);
        match hausdorff(&a, &empty, 1) {
            Err(Error::EmptyLabel { label: 1, which: "b" }) => {}
            other => panic!("expected EmptyLabel for b, got {other:?}"),
        }
        match hausdorff(&empty, &a, 1) {
            Err(Error::EmptyLabel { label: 1, which: "a" }) => {}
            other => panic!("expected EmptyLabel for a, got {other:?}"),
        }
    }

    #[test]
    fn anisotropic_spacing_is_respected() {
        // Two points two voxels apart along z with 2.5 mm z-spacing.
        let a = labels_with_spacing((5, 5, 7), [1.0, 1.0, 2.5], |i, j, k| {
            u16::from(i == 2 && j == 2 && k == 1)
        });
        let b = labels_with_spacing((5, 5, 7), [1.0, 1.0, 2.5], |i, j, k| {
            u16::from(i == 2 && j == 2 && k == 3)
        });
        assert_eq!(hausdorff(&a, &b, 1).unwrap(), 5.0);
        // Mismatched spacing between the two volumes is rejected.
        let c = labels_from((5, 5, 7), |i, j, k| u16::from(i == 2 && j == 2 && k == 3));
        assert!(matches!(
            hausdorff(&a, &c, 1),
            Err(Error::InvalidVolume { .. })
        ));
    }
}

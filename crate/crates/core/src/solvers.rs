//! Closed-form transform solvers on corresponding keypoint sets.
//!
//! Every solver takes two equally long keypoint sets `P` (fixed) and `Q`
//! (moving) plus optional per-correspondence weights, and returns a transform
//! `T` that maps `P` onto `Q` in (weighted) least squares, together with
//! numeric diagnostics. All internal arithmetic is `f64` regardless of the
//! precision keypoints were extracted from.

use nalgebra::{DMatrix, Matrix3, Matrix4, Matrix4x3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    tps_kernel, AffineTransform, CorrespondenceWeights, KeypointSet, Point3, RigidTransform,
    Transform, TpsTransform,
};

/// Above this condition estimate a normal system is declared singular
/// instead of being silently regularized.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Weights are clamped below at this value before forming `W^{-1}` in the
/// weighted thin-plate-spline system, so zero-weight correspondences stay
/// representable.
pub const WEIGHT_CLAMP: f64 = 1e-8;

/// Relative singular-value threshold below which the rigid cross-correlation
/// is treated as rank deficient.
const RANK_TOL: f64 = 1e-9;

/// Pairwise control-point distance below which two points count as
/// duplicates for the unregularized spline.
const DUPLICATE_TOL: f64 = 1e-12;

/// The transform family a solve should produce.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverFamily {
    Rigid,
    Affine,
    Tps,
}

impl std::str::FromStr for SolverFamily {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "rigid" => Ok(SolverFamily::Rigid),
            "affine" => Ok(SolverFamily::Affine),
            "tps" => Ok(SolverFamily::Tps),
            other => Err(format!("unknown solver family `{other}` (expected rigid, affine or tps)")),
        }
    }
}

impl std::fmt::Display for SolverFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SolverFamily::Rigid => "rigid",
            SolverFamily::Affine => "affine",
            SolverFamily::Tps => "tps",
        })
    }
}

/// Numeric quality report attached to every solve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    /// Weighted root-mean-square of `‖T(p_i) - q_i‖` over the
    /// correspondences (uniform weights when none are given).
    pub residual_rms: f64,
    /// Conditioning of the solved system: singular-value ratio of the
    /// normal/cross-correlation matrix for rigid and affine, and a pivot
    /// ratio of the LU factorization for the spline block system.
    pub condition_estimate: f64,
    /// True when the rigid solver flipped the sign of the smallest singular
    /// direction to avoid returning a reflection.
    pub reflection_corrected: bool,
    /// True when at least one spline weight was clamped up to
    /// [`WEIGHT_CLAMP`] before inversion.
    pub weights_clamped: bool,
}

impl SolveDiagnostics {
    fn new(residual_rms: f64, condition_estimate: f64) -> Self {
        SolveDiagnostics {
            residual_rms,
            condition_estimate,
            reflection_corrected: false,
            weights_clamped: false,
        }
    }
}

/// Check pairing lengths and expand weights to a dense vector summing to 1.
fn effective_weights(
    n: usize,
    q_len: usize,
    w: Option<&CorrespondenceWeights>,
) -> Result<Vec<f64>> {
    if n != q_len {
        return Err(Error::MismatchedLengths {
            left: n,
            right: q_len,
            what: "keypoints",
        });
    }
    match w {
        None => Ok(vec![1.0 / n as f64; n]),
        Some(w) if w.len() != n => Err(Error::MismatchedLengths {
            left: w.len(),
            right: n,
            what: "weights vs keypoints",
        }),
        Some(w) => Ok(w.as_slice().to_vec()),
    }
}

fn weighted_residual_rms(
    p: &KeypointSet,
    q: &KeypointSet,
    w: &[f64],
    f: impl Fn(&Point3) -> Point3,
) -> f64 {
    let mut acc = 0.0;
    for i in 0..p.len() {
        let t = f(&p[i]);
        let dx = t.x - q[i].x;
        let dy = t.y - q[i].y;
        let dz = t.z - q[i].z;
        acc += w[i] * (dx * dx + dy * dy + dz * dz);
    }
    acc.sqrt()
}

/// Weighted orthogonal Procrustes: the rigid motion `T(p) = R p + t`
/// minimizing `Σ_i w_i ‖T(p_i) - q_i‖²`.
///
/// The rotation comes from the SVD of the weighted cross-correlation of the
/// centered sets; if the optimum over orthogonal matrices is a reflection,
/// the smallest singular direction is flipped (reported via
/// `reflection_corrected`) so a proper rotation is always returned. The
/// translation is chosen so the weighted centroid of `P` lands exactly on
/// the weighted centroid of `Q`.
pub fn solve_rigid(
    p: &KeypointSet,
    q: &KeypointSet,
    w: Option<&CorrespondenceWeights>,
) -> Result<(RigidTransform, SolveDiagnostics)> {
    let weights = effective_weights(p.len(), q.len(), w)?;

    let mut p_bar = Vector3::zeros();
    let mut q_bar = Vector3::zeros();
    for i in 0..p.len() {
        p_bar += weights[i] * p[i].to_vector();
        q_bar += weights[i] * q[i].to_vector();
    }

    // Weighted cross-correlation H = Σ_i w_i (p_i - p̄)(q_i - q̄)^T.
    let mut h = Matrix3::zeros();
    for i in 0..p.len() {
        let pc = p[i].to_vector() - p_bar;
        let qc = q[i].to_vector() - q_bar;
        h += weights[i] * pc * qc.transpose();
    }

    let svd = h.svd(true, true);
    let sigma = svd.singular_values;
    if sigma[0] <= 0.0 || sigma[1] <= sigma[0] * RANK_TOL {
        return Err(Error::DegenerateConfiguration {
            reason: format!(
                "cross-correlation rank < 2 (singular values {:.3e}, {:.3e}, {:.3e})",
                sigma[0], sigma[1], sigma[2]
            ),
        });
    }
    let u = svd.u.expect("svd with compute_u");
    let mut v = svd.v_t.expect("svd with compute_v").transpose();

    let reflection_corrected = (v * u.transpose()).determinant() < 0.0;
    if reflection_corrected {
        // Flip the direction of least evidence so det(R) = +1.
        let flipped = -v.column(2);
        v.set_column(2, &flipped);
    }
    let rotation = v * u.transpose();
    let translation = q_bar - rotation * p_bar;

    let transform = RigidTransform::new(rotation, translation)?;
    let mut diag = SolveDiagnostics::new(
        weighted_residual_rms(p, q, &weights, |pt| transform.apply(pt)),
        sigma[0] / sigma[1],
    );
    diag.reflection_corrected = reflection_corrected;
    Ok((transform, diag))
}

/// Closed-form weighted least-squares affine fit
/// `A = (Σ w q p̃ᵀ)(Σ w p̃ p̃ᵀ)^{-1}` on homogeneous coordinates.
///
/// The 4x4 normal matrix is factored with an SVD; a condition estimate above
/// [`CONDITION_LIMIT`] is reported as [`Error::SingularSystem`] rather than
/// silently regularized.
pub fn solve_affine(
    p: &KeypointSet,
    q: &KeypointSet,
    w: Option<&CorrespondenceWeights>,
) -> Result<(AffineTransform, SolveDiagnostics)> {
    let weights = effective_weights(p.len(), q.len(), w)?;

    let mut normal = Matrix4::zeros(); // Σ w p̃ p̃ᵀ
    let mut moment = nalgebra::Matrix3x4::zeros(); // Σ w q p̃ᵀ
    for i in 0..p.len() {
        let ph = nalgebra::Vector4::new(p[i].x, p[i].y, p[i].z, 1.0);
        let qv = q[i].to_vector();
        normal += weights[i] * ph * ph.transpose();
        moment += weights[i] * qv * ph.transpose();
    }

    let svd = normal.svd(true, true);
    let sigma = svd.singular_values;
    let condition = if sigma[3] > 0.0 {
        sigma[0] / sigma[3]
    } else {
        f64::INFINITY
    };
    if !condition.is_finite() || condition > CONDITION_LIMIT {
        return Err(Error::SingularSystem {
            reason: format!(
                "normal matrix condition {condition:.3e} exceeds {CONDITION_LIMIT:.0e} \
                 (fewer than four affinely independent keypoints?)"
            ),
        });
    }
    let u = svd.u.expect("svd with compute_u");
    let v = svd.v_t.expect("svd with compute_v").transpose();
    let inv = v * Matrix4::from_diagonal(&sigma.map(|s| 1.0 / s)) * u.transpose();
    let transform = AffineTransform::new(moment * inv)?;

    let diag = SolveDiagnostics::new(
        weighted_residual_rms(p, q, &weights, |pt| transform.apply(pt)),
        condition,
    );
    Ok((transform, diag))
}

/// The assembled thin-plate-spline block system
/// `Ψ θ = Z` with `Ψ = [[K_eff, L], [Lᵀ, 0]]` and `Z = [Qᵀ; 0]`.
#[derive(Clone, Debug)]
pub struct TpsSystem {
    /// Effective kernel `K_eff`: raw `U(‖p_i - p_j‖)` entries plus `λ I`
    /// (unweighted) or `λ W^{-1}` (weighted) when `λ > 0`.
    pub kernel: DMatrix<f64>,
    /// Homogeneous control points `L`, one `[x, y, z, 1]` row per point.
    pub points_hom: DMatrix<f64>,
    /// Full `(N+4) x (N+4)` saddle-point block matrix.
    pub block: DMatrix<f64>,
    /// Right-hand side `(N+4) x 3`: the target coordinates stacked over four
    /// zero rows.
    pub rhs: DMatrix<f64>,
    /// Smallest pairwise control-point distance, used to detect duplicate
    /// anchors in the unregularized system.
    pub min_pair_distance: f64,
    /// True when a weight was clamped up to [`WEIGHT_CLAMP`].
    pub weights_clamped: bool,
}

impl TpsSystem {
    /// Build the block system for control points `p`, targets `q` and
    /// regularization `lambda`. With weights the regularization becomes
    /// `λ W^{-1}` (weights clamped below at [`WEIGHT_CLAMP`]); with
    /// `lambda == 0` the weights drop out entirely and the spline
    /// interpolates.
    pub fn assemble(
        p: &KeypointSet,
        q: &KeypointSet,
        lambda: f64,
        w: Option<&CorrespondenceWeights>,
    ) -> Result<Self> {
        assert!(
            lambda.is_finite() && lambda >= 0.0,
            "lambda must be a finite non-negative real, got {lambda}"
        );
        let weights = effective_weights(p.len(), q.len(), w)?;
        let n = p.len();

        let mut kernel = DMatrix::zeros(n, n);
        let mut min_pair_distance = f64::INFINITY;
        for i in 0..n {
            for j in (i + 1)..n {
                let r = p[i].distance(&p[j]);
                min_pair_distance = min_pair_distance.min(r);
                let u = tps_kernel(r);
                kernel[(i, j)] = u;
                kernel[(j, i)] = u;
            }
        }

        let mut weights_clamped = false;
        if lambda > 0.0 {
            for i in 0..n {
                let reg = if w.is_some() {
                    let wi = if weights[i] < WEIGHT_CLAMP {
                        weights_clamped = true;
                        WEIGHT_CLAMP
                    } else {
                        weights[i]
                    };
                    lambda / wi
                } else {
                    lambda
                };
                kernel[(i, i)] += reg;
            }
        }

        let points_hom =
            DMatrix::from_fn(n, 4, |i, j| if j < 3 { [p[i].x, p[i].y, p[i].z][j] } else { 1.0 });

        let mut block = DMatrix::zeros(n + 4, n + 4);
        block.view_mut((0, 0), (n, n)).copy_from(&kernel);
        block.view_mut((0, n), (n, 4)).copy_from(&points_hom);
        block
            .view_mut((n, 0), (4, n))
            .copy_from(&points_hom.transpose());

        let mut rhs = DMatrix::zeros(n + 4, 3);
        for i in 0..n {
            rhs[(i, 0)] = q[i].x;
            rhs[(i, 1)] = q[i].y;
            rhs[(i, 2)] = q[i].z;
        }

        Ok(TpsSystem {
            kernel,
            points_hom,
            block,
            rhs,
            min_pair_distance,
            weights_clamped,
        })
    }
}

/// Solve the thin-plate-spline system for the transform interpolating
/// (`lambda == 0`) or smoothly approximating (`lambda > 0`) the mapping of
/// `p` onto `q`.
///
/// The full `(N+4)` saddle-point system is factored densely with partial
/// pivoting — no Schur-complement shortcut — so the side conditions hold to
/// solver precision. Duplicate control points are only an error for the
/// unregularized system; coplanar control points always are. The reported
/// condition estimate is the pivot-magnitude ratio of the factorization,
/// which legitimately grows with `lambda` and is therefore a diagnostic, not
/// a failure threshold.
pub fn solve_tps(
    p: &KeypointSet,
    q: &KeypointSet,
    lambda: f64,
    w: Option<&CorrespondenceWeights>,
) -> Result<(TpsTransform, SolveDiagnostics)> {
    let weights = effective_weights(p.len(), q.len(), w)?;
    let system = TpsSystem::assemble(p, q, lambda, w)?;
    let n = p.len();

    if lambda == 0.0 && system.min_pair_distance < DUPLICATE_TOL {
        return Err(Error::SingularSystem {
            reason: format!(
                "duplicate control points (minimum pairwise distance {:.3e}) make the \
                 unregularized kernel singular",
                system.min_pair_distance
            ),
        });
    }

    // Coplanar (or too few) control points leave the polynomial block rank
    // deficient no matter the regularization.
    let l_sigma = system.points_hom.clone().svd(false, false).singular_values;
    let l_min = l_sigma.iter().copied().fold(f64::INFINITY, f64::min);
    let l_max = l_sigma.iter().copied().fold(0.0, f64::max);
    if l_sigma.len() < 4 || l_min <= 0.0 || l_max / l_min > CONDITION_LIMIT {
        return Err(Error::SingularSystem {
            reason: "control points are coplanar (homogeneous point matrix is rank deficient)"
                .into(),
        });
    }

    let lu = system.block.clone().lu();
    let theta = lu.solve(&system.rhs).ok_or_else(|| Error::SingularSystem {
        reason: "pivoted factorization of the spline block system failed".into(),
    })?;
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem {
            reason: "spline solution has non-finite entries".into(),
        });
    }

    let u_diag = lu.u();
    let mut piv_max = 0.0f64;
    let mut piv_min = f64::INFINITY;
    for i in 0..(n + 4) {
        let d = u_diag[(i, i)].abs();
        piv_max = piv_max.max(d);
        piv_min = piv_min.min(d);
    }
    let condition = if piv_min > 0.0 {
        piv_max / piv_min
    } else {
        f64::INFINITY
    };

    let coefficients = theta.view((0, 0), (n, 3)).into_owned();
    let mut affine = Matrix4x3::zeros();
    affine.copy_from(&theta.view((n, 0), (4, 3)).into_owned());

    let transform = TpsTransform::new(p.clone(), affine, coefficients, lambda)?;
    let mut diag = SolveDiagnostics::new(
        weighted_residual_rms(p, q, &weights, |pt| transform.apply(pt)),
        condition,
    );
    diag.weights_clamped = system.weights_clamped;
    Ok((transform, diag))
}

/// Family dispatch: runs the matching solver on identical inputs. `lambda`
/// is only consumed by the spline family.
pub fn solve(
    family: SolverFamily,
    p: &KeypointSet,
    q: &KeypointSet,
    lambda: f64,
    w: Option<&CorrespondenceWeights>,
) -> Result<(Transform, SolveDiagnostics)> {
    match family {
        SolverFamily::Rigid => {
            let (t, d) = solve_rigid(p, q, w)?;
            Ok((Transform::Rigid(t), d))
        }
        SolverFamily::Affine => {
            let (t, d) = solve_affine(p, q, w)?;
            Ok((Transform::Affine(t), d))
        }
        SolverFamily::Tps => {
            let (t, d) = solve_tps(p, q, lambda, w)?;
            Ok((Transform::Tps(t), d))
        }
    }
}

/// Numerically estimate the bending energy `∫ ‖∇² T‖_F² dp` of a spline over
/// the normalized cube `[-1, 1]³`.
///
/// Second derivatives are taken with central finite differences on a regular
/// `grid_resolution³` lattice and summed over interior nodes with
/// cell-volume weighting. Purely affine deformations have zero energy up to
/// discretization noise; the estimate decreases monotonically as the solve
/// regularization grows.
pub fn bending_energy(t: &TpsTransform, grid_resolution: usize) -> f64 {
    assert!(
        grid_resolution >= 8,
        "bending-energy grid must be at least 8 nodes per axis"
    );
    let g = grid_resolution;
    let h = 2.0 / (g - 1) as f64;

    // Evaluate the deformation once per lattice node (x-fastest layout).
    let mut values = vec![[0.0f64; 3]; g * g * g];
    values
        .par_chunks_mut(g * g)
        .enumerate()
        .for_each(|(k, slab)| {
            let z = -1.0 + k as f64 * h;
            for j in 0..g {
                let y = -1.0 + j as f64 * h;
                for i in 0..g {
                    let p = t.apply(&Point3::new(-1.0 + i as f64 * h, y, z));
                    slab[j * g + i] = [p.x, p.y, p.z];
                }
            }
        });

    let idx = |i: usize, j: usize, k: usize| (k * g + j) * g + i;
    let h2 = h * h;
    // Per-slab partial sums are collected in slab order and reduced
    // sequentially so the estimate does not depend on thread scheduling.
    let partials: Vec<f64> = (1..g - 1)
        .into_par_iter()
        .map(|k| {
            let mut acc = 0.0;
            for j in 1..(g - 1) {
                for i in 1..(g - 1) {
                    for d in 0..3 {
                        let c = values[idx(i, j, k)][d];
                        let fxx =
                            (values[idx(i + 1, j, k)][d] - 2.0 * c + values[idx(i - 1, j, k)][d])
                                / h2;
                        let fyy =
                            (values[idx(i, j + 1, k)][d] - 2.0 * c + values[idx(i, j - 1, k)][d])
                                / h2;
                        let fzz =
                            (values[idx(i, j, k + 1)][d] - 2.0 * c + values[idx(i, j, k - 1)][d])
                                / h2;
                        let fxy = (values[idx(i + 1, j + 1, k)][d]
                            - values[idx(i + 1, j - 1, k)][d]
                            - values[idx(i - 1, j + 1, k)][d]
                            + values[idx(i - 1, j - 1, k)][d])
                            / (4.0 * h2);
                        let fxz = (values[idx(i + 1, j, k + 1)][d]
                            - values[idx(i + 1, j, k - 1)][d]
                            - values[idx(i - 1, j, k + 1)][d]
                            + values[idx(i - 1, j, k - 1)][d])
                            / (4.0 * h2);
                        let fyz = (values[idx(i, j + 1, k + 1)][d]
                            - values[idx(i, j + 1, k - 1)][d]
                            - values[idx(i, j - 1, k + 1)][d]
                            + values[idx(i, j - 1, k - 1)][d])
                            / (4.0 * h2);
                        acc += fxx * fxx
                            + fyy * fyy
                            + fzz * fzz
                            + 2.0 * (fxy * fxy + fxz * fxz + fyz * fyz);
                    }
                }
            }
            acc
        })
        .collect();

    partials.iter().sum::<f64>() * h * h * h
}

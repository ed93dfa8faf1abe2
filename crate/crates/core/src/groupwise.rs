//! Groupwise registration in keypoint space.
//!
//! Alternates two steps: average the current per-subject keypoints into a
//! running mean, then register every subject's points onto that mean and
//! move them. On convergence the mean is the atlas configuration, and each
//! subject gets a fresh transform solved from the atlas to its *original*
//! keypoints (fixed space is the atlas, moving space is the subject, which
//! is the direction needed to warp subjects onto the atlas grid). No volumes
//! are touched, so memory stays linear in subjects times keypoints.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{CorrespondenceWeights, KeypointSet, Point3, Transform};
use crate::solvers::{solve, SolveDiagnostics, SolverFamily};

/// Default convergence tolerance on the maximum keypoint displacement.
pub const DEFAULT_TOL: f64 = 1e-5;

/// Default cap on iterations before giving up (without erroring).
pub const DEFAULT_MAX_ITERS: usize = 20;

/// Pointwise unweighted mean of equally long keypoint sets.
pub fn mean_keypoints(sets: &[KeypointSet]) -> Result<KeypointSet> {
    let first = sets.first().ok_or_else(|| Error::InvalidKeypoints {
        reason: "cannot average zero keypoint sets".into(),
    })?;
    let n = first.len();
    for s in sets {
        if s.len() != n {
            return Err(Error::MismatchedLengths {
                left: n,
                right: s.len(),
                what: "keypoints across subjects",
            });
        }
    }
    let inv = 1.0 / sets.len() as f64;
    let points = (0..n)
        .map(|j| {
            let mut x = 0.0;
            let mut y = 0.0;
            let mut z = 0.0;
            for s in sets {
                x += s[j].x;
                y += s[j].y;
                z += s[j].z;
            }
            Point3::new(x * inv, y * inv, z * inv)
        })
        .collect();
    KeypointSet::new(points)
}

/// Mutable state of the alternating groupwise iteration.
#[derive(Clone, Debug)]
pub struct GroupwiseState {
    originals: Vec<KeypointSet>,
    current: Vec<KeypointSet>,
    mean: KeypointSet,
    iteration: usize,
    displacement_trace: Vec<f64>,
}

impl GroupwiseState {
    /// Start from per-subject keypoint sets (at least two, equally long).
    pub fn new(sets: Vec<KeypointSet>) -> Result<Self> {
        if sets.len() < 2 {
            return Err(Error::InvalidKeypoints {
                reason: format!("groupwise registration needs ≥ 2 subjects, got {}", sets.len()),
            });
        }
        let mean = mean_keypoints(&sets)?;
        Ok(GroupwiseState {
            originals: sets.clone(),
            current: sets,
            mean,
            iteration: 0,
            displacement_trace: Vec::new(),
        })
    }

    pub fn originals(&self) -> &[KeypointSet] {
        &self.originals
    }

    /// Per-subject keypoints after the iterations run so far.
    pub fn current(&self) -> &[KeypointSet] {
        &self.current
    }

    /// The running mean the last step registered onto.
    pub fn mean(&self) -> &KeypointSet {
        &self.mean
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Maximum keypoint displacement recorded at each step.
    pub fn displacement_trace(&self) -> &[f64] {
        &self.displacement_trace
    }

    /// One alternation: recompute the mean, register every subject onto it,
    /// move the subjects. Returns the maximum keypoint displacement over all
    /// subjects; solver failures carry the offending subject's index.
    pub fn step(
        &mut self,
        family: SolverFamily,
        lambda: f64,
        weights: Option<&[CorrespondenceWeights]>,
    ) -> Result<f64> {
        let mean = mean_keypoints(&self.current)?;
        let outcomes: Vec<Result<(KeypointSet, f64)>> = self
            .current
            .par_iter()
            .enumerate()
            .map(|(i, cur)| {
                let w = weights.map(|ws| &ws[i]);
                let (t, _) = solve(family, cur, &mean, lambda, w).map_err(|e| e.for_subject(i))?;
                let moved = t.apply_set(cur);
                let disp = moved
                    .iter()
                    .zip(cur.iter())
                    .map(|(a, b)| a.distance(b))
                    .fold(0.0, f64::max);
                Ok((moved, disp))
            })
            .collect();

        let mut max_disp = 0.0f64;
        // Consume in subject order so the first failing subject is reported
        // deterministically.
        for (i, outcome) in outcomes.into_iter().enumerate() {
            let (moved, disp) = outcome?;
            self.current[i] = moved;
            max_disp = max_disp.max(disp);
        }
        self.mean = mean;
        self.iteration += 1;
        self.displacement_trace.push(max_disp);
        Ok(max_disp)
    }
}

/// Result of a full groupwise run.
#[derive(Clone, Debug)]
pub struct GroupwiseResult {
    /// Per-subject transform from the atlas to the subject's original
    /// keypoints, in input order.
    pub transforms: Vec<Transform>,
    /// Diagnostics of the final per-subject solves.
    pub diagnostics: Vec<SolveDiagnostics>,
    /// Converged average keypoint configuration.
    pub atlas_keypoints: KeypointSet,
    pub iterations_run: usize,
    /// False when the displacement never fell below `tol` within
    /// `max_iters`; the partial result is still returned.
    pub converged: bool,
    /// Maximum keypoint displacement at each iteration.
    pub displacement_trace: Vec<f64>,
}

/// Run the alternating groupwise registration to convergence (maximum
/// keypoint displacement below `tol`) or `max_iters`, whichever comes first,
/// then solve each subject's atlas-to-subject transform from the converged
/// mean. Exceeding `max_iters` is reported via `converged = false`, not as
/// an error.
pub fn groupwise_register(
    sets: &[KeypointSet],
    family: SolverFamily,
    lambda: f64,
    tol: f64,
    max_iters: usize,
    weights: Option<&[CorrespondenceWeights]>,
) -> Result<GroupwiseResult> {
    assert!(tol > 0.0, "convergence tolerance must be positive");
    assert!(max_iters >= 1, "at least one iteration is required");
    if let Some(ws) = weights {
        if ws.len() != sets.len() {
            return Err(Error::MismatchedLengths {
                left: ws.len(),
                right: sets.len(),
                what: "weight vectors vs subjects",
            });
        }
    }

    let mut state = GroupwiseState::new(sets.to_vec())?;
    let mut converged = false;
    for _ in 0..max_iters {
        let disp = state.step(family, lambda, weights)?;
        if disp < tol {
            converged = true;
            break;
        }
    }

    let atlas_keypoints = mean_keypoints(state.current())?;
    let finals: Vec<Result<(Transform, SolveDiagnostics)>> = state
        .originals()
        .par_iter()
        .enumerate()
        .map(|(i, orig)| {
            let w = weights.map(|ws| &ws[i]);
            solve(family, &atlas_keypoints, orig, lambda, w).map_err(|e| e.for_subject(i))
        })
        .collect();

    let mut transforms = Vec::with_capacity(sets.len());
    let mut diagnostics = Vec::with_capacity(sets.len());
    for outcome in finals {
        let (t, d) = outcome?;
        transforms.push(t);
        diagnostics.push(d);
    }

    Ok(GroupwiseResult {
        transforms,
        diagnostics,
        atlas_keypoints,
        iterations_run: state.iteration(),
        converged,
        displacement_trace: state.displacement_trace().to_vec(),
    })
}

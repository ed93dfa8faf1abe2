//! Subcommand implementations.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;

use keysolve_core::io;
use keysolve_core::volume::{
    self, dice, generate_phantom, hausdorff, hausdorff_percentile, register_pairwise, warp,
    Interpolation, PhantomSpec, Volume3D,
};
use keysolve_core::{
    activation_energies, correspondence_weights, extract_keypoints, groupwise_register,
    solve_tps, bending_energy, CorrespondenceWeights, Error, KeypointSet, SolverFamily,
    Transform,
};

use crate::report::{DigestSet, ReportLine, Stopwatch, TransformSummary};
use crate::CliError;

pub type CmdResult = Result<(), CliError>;

const DEFAULT_CHUNK_VOXELS: usize = 32_768;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Transform family flag.
#[derive(Copy, Clone, Debug, clap::ValueEnum)]
pub enum FamilyArg {
    Rigid,
    Affine,
    Tps,
}

impl From<FamilyArg> for SolverFamily {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Rigid => SolverFamily::Rigid,
            FamilyArg::Affine => SolverFamily::Affine,
            FamilyArg::Tps => SolverFamily::Tps,
        }
    }
}

/// Interpolation flag.
#[derive(Copy, Clone, Debug, clap::ValueEnum)]
pub enum InterpArg {
    Trilinear,
    Nearest,
}

impl From<InterpArg> for Interpolation {
    fn from(i: InterpArg) -> Self {
        match i {
            InterpArg::Trilinear => Interpolation::Trilinear,
            InterpArg::Nearest => Interpolation::Nearest,
        }
    }
}

/// `X,Y,Z` grid dimensions.
#[derive(Copy, Clone, Debug)]
pub struct DimsArg(pub (usize, usize, usize));

fn parse_dims(s: &str) -> Result<DimsArg, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected X,Y,Z, got {s:?}"));
    }
    let mut d = [0usize; 3];
    for (slot, part) in d.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse()
            .map_err(|e| format!("bad dimension {part:?}: {e}"))?;
    }
    Ok(DimsArg((d[0], d[1], d[2])))
}

// ---------------------------------------------------------------------------
// Shared input plumbing for commands that take a correspondence pair.

/// Volume pair plus keypoints, each side sourced from a keypoint CSV or
/// from an activation stack (run through center-of-mass extraction).
#[derive(Args)]
pub struct PairInputs {
    /// Moving volume header (.json).
    #[arg(long)]
    pub moving: PathBuf,
    /// Fixed volume header (.json).
    #[arg(long)]
    pub fixed: PathBuf,
    /// Moving keypoints CSV.
    #[arg(long, conflicts_with = "acts_moving")]
    pub kp_moving: Option<PathBuf>,
    /// Fixed keypoints CSV.
    #[arg(long, conflicts_with = "acts_fixed")]
    pub kp_fixed: Option<PathBuf>,
    /// Moving activation stack header; keypoints are extracted from it.
    #[arg(long)]
    pub acts_moving: Option<PathBuf>,
    /// Fixed activation stack header; keypoints are extracted from it.
    #[arg(long)]
    pub acts_fixed: Option<PathBuf>,
    /// Weight correspondences: softmax of activation-energy products when
    /// both sides come from stacks, or the renormalized product of the CSV
    /// weight columns when both sides come from CSVs.
    #[arg(long)]
    pub weighted: bool,
}

enum SideWeights {
    None,
    Csv(Vec<f64>),
    Energies(Vec<f64>),
}

struct Side {
    keypoints: KeypointSet,
    weights: SideWeights,
    /// Set when the keypoints were extracted from an activation stack and
    /// should be written out for reproducibility.
    extracted: bool,
}

fn load_side(
    label: &str,
    kp: &Option<PathBuf>,
    acts: &Option<PathBuf>,
    digests: &mut DigestSet,
) -> Result<Side, CliError> {
    match (kp, acts) {
        (Some(kp), None) => {
            digests.add(kp)?;
            let (keypoints, weight_col) = io::read_keypoints_csv(kp)?;
            Ok(Side {
                keypoints,
                weights: weight_col.map_or(SideWeights::None, SideWeights::Csv),
                extracted: false,
            })
        }
        (None, Some(acts)) => {
            digests.add_with_sidecar(acts)?;
            let stack = io::read_activation_stack(acts)?;
            let keypoints = extract_keypoints(&stack)?;
            let energies = activation_energies(&stack);
            Ok(Side {
                keypoints,
                weights: SideWeights::Energies(energies),
                extracted: true,
            })
        }
        _ => Err(usage(format!(
            "provide exactly one of --kp-{label} or --acts-{label}"
        ))),
    }
}

fn resolve_weights(
    weighted: bool,
    moving: &Side,
    fixed: &Side,
) -> Result<Option<CorrespondenceWeights>, CliError> {
    if !weighted {
        return Ok(None);
    }
    match (&fixed.weights, &moving.weights) {
        (SideWeights::Energies(ef), SideWeights::Energies(em)) => {
            Ok(Some(correspondence_weights(ef, em)?))
        }
        (SideWeights::Csv(wf), SideWeights::Csv(wm)) => {
            if wf.len() != wm.len() {
                return Err(usage(format!(
                    "weight columns disagree in length ({} fixed vs {} moving)",
                    wf.len(),
                    wm.len()
                )));
            }
            let products = wf.iter().zip(wm).map(|(&f, &m)| f * m).collect();
            Ok(Some(CorrespondenceWeights::new(products)?))
        }
        _ => Err(usage(
            "--weighted needs activation stacks on both sides, or weight columns \
             in both keypoint CSVs",
        )),
    }
}

/// Dice plus per-label Hausdorff/95th-percentile distances for a warped
/// label volume against the fixed one. Labels that vanished from one side
/// get a Dice entry but no distance.
#[allow(clippy::type_complexity)]
fn label_metrics(
    warped: &Volume3D,
    fixed: &Volume3D,
) -> Result<
    (
        volume::DiceScores,
        BTreeMap<u16, f64>,
        BTreeMap<u16, f64>,
    ),
    Error,
> {
    let scores = dice(warped, fixed, None)?;
    let mut hd = BTreeMap::new();
    let mut hd95 = BTreeMap::new();
    for &label in scores.per_label.keys() {
        match hausdorff(warped, fixed, label) {
            Ok(d) => {
                hd.insert(label, d);
                hd95.insert(label, hausdorff_percentile(warped, fixed, label, 95.0)?);
            }
            Err(Error::EmptyLabel { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok((scores, hd, hd95))
}

fn create_out_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Core(Error::Io(e)))
}

fn write_report(path: Option<&Path>, lines: &[ReportLine]) -> CmdResult {
    let mut buf = String::new();
    for line in lines {
        buf.push_str(&line.to_json_line());
    }
    if let Some(path) = path {
        io::atomic_write(path, buf.as_bytes())?;
    }
    print!("{buf}");
    Ok(())
}

// ---------------------------------------------------------------------------
// register

#[derive(Args)]
pub struct RegisterArgs {
    #[command(flatten)]
    pub inputs: PairInputs,
    /// Transform family to solve.
    #[arg(long, value_enum)]
    pub family: FamilyArg,
    /// Spline regularization strength (TPS only).
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    /// Output directory for warped volume, transform, and report.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Voxels per parallel work unit during warping.
    #[arg(long, default_value_t = DEFAULT_CHUNK_VOXELS)]
    pub chunk_voxels: usize,
}

pub fn register(args: RegisterArgs, command: &str) -> CmdResult {
    let mut line = ReportLine::new("register", command);
    let mut watch = Stopwatch::start();
    let mut inputs = DigestSet::default();

    inputs.add_with_sidecar(&args.inputs.moving)?;
    inputs.add_with_sidecar(&args.inputs.fixed)?;
    let moving = io::read_volume(&args.inputs.moving)?;
    let fixed = io::read_volume(&args.inputs.fixed)?;
    let side_m = load_side(
        "moving",
        &args.inputs.kp_moving,
        &args.inputs.acts_moving,
        &mut inputs,
    )?;
    let side_f = load_side(
        "fixed",
        &args.inputs.kp_fixed,
        &args.inputs.acts_fixed,
        &mut inputs,
    )?;
    let weights = resolve_weights(args.inputs.weighted, &side_m, &side_f)?;
    watch.lap(&mut line.timings_ms, "load");

    let (warped, transform, diagnostics) = register_pairwise(
        &moving,
        &fixed,
        &side_m.keypoints,
        &side_f.keypoints,
        args.family.into(),
        args.lambda,
        weights.as_ref(),
        args.chunk_voxels,
    )?;
    watch.lap(&mut line.timings_ms, "register");

    if warped.is_labels() && fixed.is_labels() {
        let (scores, hd, hd95) = label_metrics(&warped, &fixed)?;
        line.dice = Some(scores);
        line.hausdorff_mm = Some(hd);
        line.hausdorff95_mm = Some(hd95);
    }
    watch.lap(&mut line.timings_ms, "metrics");

    create_out_dir(&args.out_dir)?;
    let mut outputs = DigestSet::default();
    let warped_path = args.out_dir.join("warped.json");
    io::write_volume(&warped_path, &warped)?;
    outputs.add_with_sidecar(&warped_path)?;
    let transform_path = args.out_dir.join("transform.json");
    io::write_transform_json(&transform_path, &transform)?;
    outputs.add(&transform_path)?;
    if side_m.extracted {
        let p = args.out_dir.join("kp_moving.csv");
        io::write_keypoints_csv(&p, &side_m.keypoints, None)?;
        outputs.add(&p)?;
    }
    if side_f.extracted {
        let p = args.out_dir.join("kp_fixed.csv");
        io::write_keypoints_csv(&p, &side_f.keypoints, None)?;
        outputs.add(&p)?;
    }
    watch.lap(&mut line.timings_ms, "write");

    line.transform = Some(TransformSummary {
        family: transform.family_name(),
        lambda: matches!(transform, Transform::Tps(_)).then_some(args.lambda),
        path: transform_path.display().to_string(),
    });
    line.diagnostics = Some(diagnostics);
    inputs.verify_unchanged()?;
    line.inputs = inputs.into_map();
    line.outputs = outputs.into_map();
    write_report(Some(&args.out_dir.join("report.jsonl")), &[line])
}

// ---------------------------------------------------------------------------
// groupwise

#[derive(Args)]
pub struct GroupwiseArgs {
    /// Subjects as `volume.json:keypoints.csv`, or bare `keypoints.csv`
    /// with --no-volumes. Repeat or list after one flag.
    #[arg(long, num_args = 1.., required = true)]
    pub subjects: Vec<String>,
    /// Transform family to solve.
    #[arg(long, value_enum)]
    pub family: FamilyArg,
    /// Spline regularization strength (TPS only).
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    /// Convergence threshold on the per-iteration keypoint displacement.
    #[arg(long, default_value_t = 1e-5)]
    pub tol: f64,
    #[arg(long, default_value_t = 20)]
    pub max_iters: usize,
    /// Output directory for transforms, warped subjects, atlas, template.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Keypoint-only mode: skip volume warping and template construction.
    #[arg(long)]
    pub no_volumes: bool,
    /// Voxels per parallel work unit during warping.
    #[arg(long, default_value_t = DEFAULT_CHUNK_VOXELS)]
    pub chunk_voxels: usize,
}

struct Subject {
    volume: Option<PathBuf>,
    keypoints: PathBuf,
}

fn parse_subject(arg: &str, no_volumes: bool) -> Result<Subject, CliError> {
    match arg.split_once(':') {
        Some((vol, kp)) => Ok(Subject {
            volume: Some(PathBuf::from(vol)),
            keypoints: PathBuf::from(kp),
        }),
        None if no_volumes => Ok(Subject {
            volume: None,
            keypoints: PathBuf::from(arg),
        }),
        None => Err(usage(format!(
            "subject {arg:?} lacks a volume; use volume.json:keypoints.csv \
             or pass --no-volumes"
        ))),
    }
}

pub fn groupwise(args: GroupwiseArgs, command: &str) -> CmdResult {
    if !(args.tol > 0.0) {
        return Err(usage(format!("--tol must be positive, got {}", args.tol)));
    }
    if args.max_iters == 0 {
        return Err(usage("--max-iters must be at least 1"));
    }
    let subjects: Vec<Subject> = args
        .subjects
        .iter()
        .map(|s| parse_subject(s, args.no_volumes))
        .collect::<Result<_, _>>()?;

    let mut summary = ReportLine::new("groupwise", command);
    let mut watch = Stopwatch::start();
    let mut inputs = DigestSet::default();

    let mut sets = Vec::with_capacity(subjects.len());
    for subject in &subjects {
        inputs.add(&subject.keypoints)?;
        let (set, _) = io::read_keypoints_csv(&subject.keypoints)?;
        sets.push(set);
    }
    let volumes: Option<Vec<Volume3D>> = if args.no_volumes {
        None
    } else {
        let mut vols = Vec::with_capacity(subjects.len());
        for subject in &subjects {
            let path = subject.volume.as_ref().expect("volume presence checked");
            inputs.add_with_sidecar(path)?;
            vols.push(io::read_volume(path)?);
        }
        Some(vols)
    };
    watch.lap(&mut summary.timings_ms, "load");

    let result = groupwise_register(
        &sets,
        args.family.into(),
        args.lambda,
        args.tol,
        args.max_iters,
        None,
    )?;
    watch.lap(&mut summary.timings_ms, "solve");

    create_out_dir(&args.out_dir)?;
    let mut shared_outputs = DigestSet::default();
    let atlas_path = args.out_dir.join("atlas_keypoints.csv");
    io::write_keypoints_csv(&atlas_path, &result.atlas_keypoints, None)?;
    shared_outputs.add(&atlas_path)?;

    let mut lines = Vec::with_capacity(subjects.len() + 1);
    let mut warped_scalars: Option<Vec<Volume3D>> = volumes
        .as_ref()
        .map(|v| Vec::with_capacity(v.len()))
        .filter(|_| volumes.as_ref().is_some_and(|v| v.iter().all(|x| !x.is_labels())));
    for (i, transform) in result.transforms.iter().enumerate() {
        let mut line = ReportLine::new("groupwise-subject", command);
        line.subject = Some(i);
        let mut outputs = DigestSet::default();

        let transform_path = args.out_dir.join(format!("transform_{i:03}.json"));
        io::write_transform_json(&transform_path, transform)?;
        outputs.add(&transform_path)?;
        line.transform = Some(TransformSummary {
            family: transform.family_name(),
            lambda: matches!(transform, Transform::Tps(_)).then_some(args.lambda),
            path: transform_path.display().to_string(),
        });
        line.diagnostics = Some(result.diagnostics[i].clone());

        if let Some(vols) = &volumes {
            let target_dims = vols[0].dims();
            let interpolation = if vols[i].is_labels() {
                Interpolation::Nearest
            } else {
                Interpolation::Trilinear
            };
            let warped = warp(
                &vols[i],
                transform,
                target_dims,
                interpolation,
                args.chunk_voxels,
            )
            .map_err(|e| e.for_subject(i))?
            .with_spacing_mm(vols[0].spacing_mm())?;
            let warped_path = args.out_dir.join(format!("warped_{i:03}.json"));
            io::write_volume(&warped_path, &warped)?;
            outputs.add_with_sidecar(&warped_path)?;
            if let Some(acc) = warped_scalars.as_mut() {
                acc.push(warped);
            }
        }
        line.outputs = outputs.into_map();
        lines.push(line);
    }

    if let Some(warped) = warped_scalars.as_ref().filter(|w| !w.is_empty()) {
        let template = mean_scalar_volume(warped)?;
        let template_path = args.out_dir.join("template.json");
        io::write_volume(&template_path, &template)?;
        shared_outputs.add_with_sidecar(&template_path)?;
    }
    watch.lap(&mut summary.timings_ms, "write");

    summary.iterations = Some(result.iterations_run);
    summary.converged = Some(result.converged);
    summary.displacement_trace = Some(result.displacement_trace.clone());
    inputs.verify_unchanged()?;
    summary.inputs = inputs.into_map();
    summary.outputs = shared_outputs.into_map();
    lines.push(summary);
    write_report(Some(&args.out_dir.join("report.jsonl")), &lines)
}

/// Voxelwise mean of same-grid scalar volumes, accumulated in f64 in
/// subject order.
fn mean_scalar_volume(volumes: &[Volume3D]) -> Result<Volume3D, Error> {
    let first = &volumes[0];
    let mut acc = vec![0.0f64; first.n_voxels()];
    for vol in volumes {
        let data = vol.scalar_data().expect("scalar volumes only");
        for (a, &v) in acc.iter_mut().zip(data) {
            *a += v as f64;
        }
    }
    let n = volumes.len() as f64;
    Volume3D::scalar(
        first.dims(),
        first.spacing_mm(),
        acc.into_iter().map(|a| (a / n) as f32).collect(),
    )
}

// ---------------------------------------------------------------------------
// phantom

#[derive(Args)]
pub struct PhantomArgs {
    /// JSON file with the phantom spec; the flags below override its fields.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Grid dimensions as X,Y,Z.
    #[arg(long, value_parser = parse_dims)]
    pub dims: Option<DimsArg>,
    /// Number of landmarks (activation blobs / keypoints).
    #[arg(long)]
    pub landmarks: Option<usize>,
    /// Number of nonzero segmentation labels.
    #[arg(long)]
    pub labels: Option<usize>,
    /// Standard deviation of the activation blobs, normalized units.
    #[arg(long)]
    pub blob_sigma: Option<f64>,
    /// RNG seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out_dir: PathBuf,
}

pub fn phantom(args: PhantomArgs, command: &str) -> CmdResult {
    let mut line = ReportLine::new("phantom", command);
    let mut watch = Stopwatch::start();
    let mut inputs = DigestSet::default();

    let mut spec = match &args.spec {
        Some(path) => {
            inputs.add(path)?;
            serde_json::from_slice(&std::fs::read(path).map_err(Error::Io)?).map_err(|e| {
                CliError::Core(Error::Format {
                    path: path.display().to_string(),
                    reason: format!("invalid phantom spec: {e}"),
                })
            })?
        }
        None => PhantomSpec::default(),
    };
    if let Some(DimsArg(dims)) = args.dims {
        spec.dims = dims;
    }
    if let Some(n) = args.landmarks {
        spec.n_landmarks = n;
    }
    if let Some(n) = args.labels {
        spec.n_labels = n;
    }
    if let Some(s) = args.blob_sigma {
        spec.blob_sigma = s;
    }
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    watch.lap(&mut line.timings_ms, "load");

    let (scalar, labels, keypoints, activations) = generate_phantom(&spec)?;
    watch.lap(&mut line.timings_ms, "generate");

    create_out_dir(&args.out_dir)?;
    let mut outputs = DigestSet::default();
    let scalar_path = args.out_dir.join("scalar.json");
    io::write_volume(&scalar_path, &scalar)?;
    outputs.add_with_sidecar(&scalar_path)?;
    let labels_path = args.out_dir.join("labels.json");
    io::write_volume(&labels_path, &labels)?;
    outputs.add_with_sidecar(&labels_path)?;
    let kp_path = args.out_dir.join("keypoints.csv");
    io::write_keypoints_csv(&kp_path, &keypoints, None)?;
    outputs.add(&kp_path)?;
    let acts_path = args.out_dir.join("activations.json");
    io::write_activation_stack(&acts_path, &activations)?;
    outputs.add_with_sidecar(&acts_path)?;
    watch.lap(&mut line.timings_ms, "write");

    line.phantom_spec = Some(spec);
    inputs.verify_unchanged()?;
    line.inputs = inputs.into_map();
    line.outputs = outputs.into_map();
    write_report(Some(&args.out_dir.join("report.jsonl")), &[line])
}

// ---------------------------------------------------------------------------
// warp

#[derive(Args)]
pub struct WarpArgs {
    /// Transform JSON (maps output-grid coordinates into input-volume
    /// coordinates).
    #[arg(long)]
    pub transform: PathBuf,
    /// Input volume header (.json).
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output volume header path (.json).
    #[arg(long)]
    pub out: PathBuf,
    /// Interpolation; defaults to trilinear for scalars, nearest for labels.
    #[arg(long, value_enum)]
    pub interp: Option<InterpArg>,
    /// Output grid as X,Y,Z; defaults to the input dimensions.
    #[arg(long, value_parser = parse_dims)]
    pub out_dims: Option<DimsArg>,
    /// Voxels per parallel work unit.
    #[arg(long, default_value_t = DEFAULT_CHUNK_VOXELS)]
    pub chunk_voxels: usize,
}

pub fn warp_cmd(args: WarpArgs, command: &str) -> CmdResult {
    let mut line = ReportLine::new("warp", command);
    let mut watch = Stopwatch::start();
    let mut inputs = DigestSet::default();

    inputs.add(&args.transform)?;
    let transform = io::read_transform_json(&args.transform)?;
    inputs.add_with_sidecar(&args.input)?;
    let vol = io::read_volume(&args.input)?;
    watch.lap(&mut line.timings_ms, "load");

    let interpolation = match args.interp {
        Some(i) => i.into(),
        None if vol.is_labels() => Interpolation::Nearest,
        None => Interpolation::Trilinear,
    };
    let out_dims = args.out_dims.map_or(vol.dims(), |DimsArg(d)| d);
    let warped = warp(&vol, &transform, out_dims, interpolation, args.chunk_voxels)?;
    watch.lap(&mut line.timings_ms, "warp");

    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_out_dir(parent)?;
    }
    io::write_volume(&args.out, &warped)?;
    let mut outputs = DigestSet::default();
    outputs.add_with_sidecar(&args.out)?;
    watch.lap(&mut line.timings_ms, "write");

    line.transform = Some(TransformSummary {
        family: transform.family_name(),
        lambda: None,
        path: args.transform.display().to_string(),
    });
    inputs.verify_unchanged()?;
    line.inputs = inputs.into_map();
    line.outputs = outputs.into_map();
    write_report(None, &[line])
}

// ---------------------------------------------------------------------------
// metrics

#[derive(Args)]
pub struct MetricsArgs {
    /// Predicted (e.g. warped) label volume header.
    #[arg(long)]
    pub pred: PathBuf,
    /// Reference label volume header.
    #[arg(long = "ref")]
    pub reference: PathBuf,
}

pub fn metrics(args: MetricsArgs, command: &str) -> CmdResult {
    let mut line = ReportLine::new("metrics", command);
    let mut watch = Stopwatch::start();
    let mut inputs = DigestSet::default();

    inputs.add_with_sidecar(&args.pred)?;
    inputs.add_with_sidecar(&args.reference)?;
    let pred = io::read_volume(&args.pred)?;
    let reference = io::read_volume(&args.reference)?;
    watch.lap(&mut line.timings_ms, "load");

    let (scores, hd, hd95) = label_metrics(&pred, &reference)?;
    line.dice = Some(scores);
    line.hausdorff_mm = Some(hd);
    line.hausdorff95_mm = Some(hd95);
    watch.lap(&mut line.timings_ms, "metrics");

    inputs.verify_unchanged()?;
    line.inputs = inputs.into_map();
    write_report(None, &[line])
}

// ---------------------------------------------------------------------------
// sweep-lambda

#[derive(Args)]
pub struct SweepLambdaArgs {
    #[command(flatten)]
    pub inputs: PairInputs,
    /// Comma-separated spline regularization strengths, one row each.
    #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
    pub lambdas: Vec<f64>,
    /// Lattice nodes per axis for the numeric bending-energy estimate.
    #[arg(long, default_value_t = 16)]
    pub bending_grid: usize,
    /// Output directory.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Voxels per parallel work unit during warping.
    #[arg(long, default_value_t = DEFAULT_CHUNK_VOXELS)]
    pub chunk_voxels: usize,
}

pub fn sweep_lambda(args: SweepLambdaArgs, command: &str) -> CmdResult {
    if args.bending_grid < 8 {
        return Err(usage(format!(
            "--bending-grid must be at least 8, got {}",
            args.bending_grid
        )));
    }
    let mut watch = Stopwatch::start();
    let mut inputs = DigestSet::default();

    inputs.add_with_sidecar(&args.inputs.moving)?;
    inputs.add_with_sidecar(&args.inputs.fixed)?;
    let moving = io::read_volume(&args.inputs.moving)?;
    let fixed = io::read_volume(&args.inputs.fixed)?;
    let side_m = load_side(
        "moving",
        &args.inputs.kp_moving,
        &args.inputs.acts_moving,
        &mut inputs,
    )?;
    let side_f = load_side(
        "fixed",
        &args.inputs.kp_fixed,
        &args.inputs.acts_fixed,
        &mut inputs,
    )?;
    let weights = resolve_weights(args.inputs.weighted, &side_m, &side_f)?;
    let mut load_timing = BTreeMap::new();
    watch.lap(&mut load_timing, "load");

    create_out_dir(&args.out_dir)?;
    let interpolation = if moving.is_labels() {
        Interpolation::Nearest
    } else {
        Interpolation::Trilinear
    };
    let mut lines = Vec::with_capacity(args.lambdas.len());
    for (idx, &lambda) in args.lambdas.iter().enumerate() {
        let mut line = ReportLine::new("sweep-lambda", command);
        line.lambda = Some(lambda);
        line.timings_ms = load_timing.clone();
        let mut watch = Stopwatch::start();

        let (tps, diagnostics) = solve_tps(
            &side_f.keypoints,
            &side_m.keypoints,
            lambda,
            weights.as_ref(),
        )?;
        line.bending_energy = Some(bending_energy(&tps, args.bending_grid));
        let transform = Transform::Tps(tps);
        watch.lap(&mut line.timings_ms, "solve");

        let warped = warp(
            &moving,
            &transform,
            fixed.dims(),
            interpolation,
            args.chunk_voxels,
        )?
        .with_spacing_mm(fixed.spacing_mm())?;
        watch.lap(&mut line.timings_ms, "warp");

        if warped.is_labels() && fixed.is_labels() {
            let (scores, hd, hd95) = label_metrics(&warped, &fixed)?;
            line.dice = Some(scores);
            line.hausdorff_mm = Some(hd);
            line.hausdorff95_mm = Some(hd95);
        }
        watch.lap(&mut line.timings_ms, "metrics");

        let mut outputs = DigestSet::default();
        let transform_path = args.out_dir.join(format!("transform_lambda_{idx:02}.json"));
        io::write_transform_json(&transform_path, &transform)?;
        outputs.add(&transform_path)?;
        let warped_path = args.out_dir.join(format!("warped_lambda_{idx:02}.json"));
        io::write_volume(&warped_path, &warped)?;
        outputs.add_with_sidecar(&warped_path)?;
        watch.lap(&mut line.timings_ms, "write");

        line.transform = Some(TransformSummary {
            family: "tps",
            lambda: Some(lambda),
            path: transform_path.display().to_string(),
        });
        line.diagnostics = Some(diagnostics);
        line.outputs = outputs.into_map();
        lines.push(line);
    }

    inputs.verify_unchanged()?;
    let input_map = inputs.into_map();
    for line in &mut lines {
        line.inputs = input_map.clone();
    }
    write_report(Some(&args.out_dir.join("report.jsonl")), &lines)
}

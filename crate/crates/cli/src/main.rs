//! `privtrack` command line: privatize, track, refine, attack, score and run
//! experiment grids over MOT-format text files.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use privtrack::attacks::{apply_attack, AttackKind, AttackSpec};
use privtrack::dcrf::{refine, RefineParams};
use privtrack::experiment::{effective_sigma, refine_for_noise, run_experiment, write_outputs, ExperimentConfig, Method};
use privtrack::ingest::{parse_mot, serialize_detections, serialize_mot, synth_scenario, Scenario, SynthConfig};
use privtrack::metrics::{compare_detections, CompareOptions};
use privtrack::ncp::{weight_scenario, NcpParams};
use privtrack::privacy::{privatize_scenario, white_noise_scenario, PrivacyBudget};
use privtrack::tracker::{track_scenario, tracks_from_detections, tracks_to_detections, TrackerConfig};

#[derive(Parser)]
#[command(name = "privtrack", version, about = "Differentially private multi-object tracking toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Perturb sensitive detections with the calibrated Gaussian mechanism.
    Privatize(PrivatizeArgs),
    /// Run the baseline tracker and write one MOT row per track point.
    Track(TrackArgs),
    /// Re-decode tracks with the chain CRF over sliding windows.
    Refine(RefineArgs),
    /// Apply a hijack or blind-label attack to a detection file.
    Attack(AttackArgs),
    /// Compare an original and a sanitized detection file.
    Metrics(MetricsArgs),
    /// Run a privacy/utility experiment grid and write its CSV files.
    Experiment(ExperimentArgs),
    /// Render a synthetic scenario from a JSON config.
    Synth(SynthArgs),
}

#[derive(Args)]
struct NcpArgs {
    /// Extra noise fraction on sensitive classes.
    #[arg(long, default_value_t = 0.5)]
    ncp_lambda: f64,
    /// Smallest unary weight given to an uncertain detection.
    #[arg(long, default_value_t = 0.1)]
    ncp_floor: f64,
    /// Comma-separated class ids treated as sensitive.
    #[arg(long, default_value = "1", value_parser = parse_classes)]
    sensitive_classes: BTreeSet<u32>,
}

impl NcpArgs {
    fn params(&self) -> Result<NcpParams> {
        Ok(NcpParams::new(self.ncp_lambda, self.ncp_floor)?)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum NoiseMethod {
    NcpGaussian,
    WhiteNoise,
}

#[derive(Args)]
struct PrivatizeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    eps: f64,
    #[arg(long, default_value_t = 1e-5)]
    delta: f64,
    #[arg(long, default_value_t = 1.0)]
    sensitivity: f64,
    /// Fraction of the budget spent on perturbation.
    #[arg(long, default_value_t = 1.0)]
    cost: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "ncp-gaussian")]
    method: NoiseMethod,
    #[command(flatten)]
    ncp: NcpArgs,
}

#[derive(Args)]
struct TrackArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Largest accepted `1 − IoU` for an association.
    #[arg(long, default_value_t = 0.7)]
    gate: f64,
    #[arg(long, default_value_t = 5)]
    max_misses: u32,
    /// Per-coordinate noise of the input boxes; sets the measurement noise.
    #[arg(long, default_value_t = 0.0)]
    noise_sigma: f64,
    /// Accepted for symmetry with the other commands; tracking is deterministic.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct RefineArgs {
    /// Tracks as MOT rows, the id column holding the track id.
    #[arg(long = "in")]
    input: PathBuf,
    /// The detections the tracks were built from.
    #[arg(long)]
    det: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    window: usize,
    /// Frames committed per window; defaults to half the window.
    #[arg(long)]
    stride: Option<usize>,
    /// Per-coordinate noise of the detections; scales the motion terms.
    #[arg(long, default_value_t = 0.0)]
    noise_sigma: f64,
    #[command(flatten)]
    ncp: NcpArgs,
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// hijack_shift, hijack_remove or blind_label.
    #[arg(long)]
    kind: AttackKind,
    #[arg(long)]
    target: u32,
    #[arg(long)]
    onset: u32,
    /// Pixels per frame as `DX,DY`.
    #[arg(long, default_value = "0,0", value_parser = parse_drift, allow_hyphen_values = true)]
    drift: [f64; 2],
    /// Class rewrites for blind_label as `FROM:TO,...`.
    #[arg(long, value_parser = parse_label_map)]
    label_map: Option<BTreeMap<u32, u32>>,
    /// Comma-separated sensitive class ids, used for the default label map.
    #[arg(long, default_value = "1", value_parser = parse_classes)]
    sensitive_classes: BTreeSet<u32>,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    original: PathBuf,
    #[arg(long)]
    sanitized: PathBuf,
    #[arg(long)]
    report: PathBuf,
    /// Peak value for PSNR; defaults to the larger frame dimension.
    #[arg(long)]
    max_value: Option<f64>,
    #[arg(long, default_value = "1", value_parser = parse_classes)]
    sensitive_classes: BTreeSet<u32>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report tracking RMSE as a fraction of the frame diagonal.
    #[arg(long)]
    normalize: bool,
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write the ground truth here.
    #[arg(long)]
    gt: Option<PathBuf>,
}

fn parse_classes(s: &str) -> Result<BTreeSet<u32>, String> {
    s.split(',').filter(|p| !p.trim().is_empty()).map(|p| p.trim().parse::<u32>().map_err(|e| format!("{p:?}: {e}"))).collect()
}

fn parse_drift(s: &str) -> Result<[f64; 2], String> {
    let parts: Vec<&str> = s.split(',').collect();
    let [dx, dy] = parts.as_slice() else { return Err(format!("expected DX,DY, got {s:?}")) };
    let num = |p: &str| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}"));
    Ok([num(dx)?, num(dy)?])
}

fn parse_label_map(s: &str) -> Result<BTreeMap<u32, u32>, String> {
    s.split(',')
        .map(|pair| {
            let (from, to) = pair.split_once(':').ok_or_else(|| format!("expected FROM:TO, got {pair:?}"))?;
            let num = |p: &str| p.trim().parse::<u32>().map_err(|e| format!("{p:?}: {e}"));
            Ok((num(from)?, num(to)?))
        })
        .collect()
}

fn read_mot(path: &Path, sensitive: &BTreeSet<u32>) -> Result<Scenario> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut scenario = parse_mot(&text).with_context(|| format!("parsing {}", path.display()))?;
    scenario.name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    scenario.mark_sensitive(sensitive);
    Ok(scenario)
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn privatize(args: &PrivatizeArgs) -> Result<()> {
    let mut scenario = read_mot(&args.input, &args.ncp.sensitive_classes)?;
    scenario.assign_missing_ids();
    let budget = PrivacyBudget::new(args.eps, args.delta, args.sensitivity, args.cost)?;
    let ncp = args.ncp.params()?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let released = match args.method {
        NoiseMethod::NcpGaussian => {
            let weights = weight_scenario(&scenario, &args.ncp.sensitive_classes, &ncp);
            privatize_scenario(&scenario, &budget, &weights, &mut rng)?
        }
        NoiseMethod::WhiteNoise => {
            let sigma = effective_sigma(Method::WhiteNoise, &budget, &ncp).map_err(anyhow::Error::msg)?;
            white_noise_scenario(&scenario, sigma * 3f64.sqrt(), &mut rng)
        }
    };
    write(&args.out, &serialize_mot(&released))
}

fn tracker_config(gate: f64, max_misses: u32, noise_sigma: f64) -> Result<TrackerConfig> {
    if !(gate > 0.0 && gate <= 1.0) {
        bail!("gate must lie in (0, 1], got {gate}");
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        bail!("noise sigma must be finite and non-negative, got {noise_sigma}");
    }
    Ok(TrackerConfig { gate, max_misses, measurement_noise: (noise_sigma * noise_sigma).max(1.0), ..Default::default() })
}

fn track(args: &TrackArgs) -> Result<()> {
    let scenario = read_mot(&args.input, &BTreeSet::new())?;
    let tracks = track_scenario(&scenario, &tracker_config(args.gate, args.max_misses, args.noise_sigma)?);
    write(&args.out, &serialize_detections(&tracks_to_detections(&tracks)))
}

fn refine_cmd(args: &RefineArgs) -> Result<()> {
    let mut detections = read_mot(&args.det, &args.ncp.sensitive_classes)?;
    detections.assign_missing_ids();
    let rows = read_mot(&args.input, &BTreeSet::new())?;
    let tracks = tracks_from_detections(&rows.detections, &TrackerConfig::default());
    let weights = weight_scenario(&detections, &args.ncp.sensitive_classes, &args.ncp.params()?);
    let base = refine_for_noise(args.noise_sigma);
    let params = RefineParams { window_len: args.window, stride: args.stride.unwrap_or((args.window / 2).max(1)), ..base };
    let refined = refine(&tracks, &detections, &weights, &params)?;
    write(&args.out, &serialize_detections(&tracks_to_detections(&refined)))
}

fn attack(args: &AttackArgs) -> Result<()> {
    let mut scenario = read_mot(&args.input, &args.sensitive_classes)?;
    scenario.assign_missing_ids();
    let spec = AttackSpec {
        kind: args.kind,
        target_id: args.target,
        onset_frame: args.onset,
        drift: args.drift,
        label_map: args.label_map.clone().unwrap_or_default(),
    };
    let attacked = apply_attack(&scenario, &spec)?;
    write(&args.out, &serialize_mot(&attacked))
}

fn metrics(args: &MetricsArgs) -> Result<()> {
    let original = read_mot(&args.original, &args.sensitive_classes)?;
    let sanitized = read_mot(&args.sanitized, &args.sensitive_classes)?;
    let opts = CompareOptions {
        max_value: args.max_value.unwrap_or(original.frame_size[0].max(original.frame_size[1])),
        sensitive_classes: args.sensitive_classes.clone(),
        ..Default::default()
    };
    let report = compare_detections(&original, &sanitized, &opts)?;
    write(&args.report, &report.to_csv())
}

fn experiment(args: &ExperimentArgs) -> Result<()> {
    let text = fs::read_to_string(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
    let mut config = ExperimentConfig::from_json(&text)?;
    config.normalize |= args.normalize;
    let Some(out) = args.out.clone().or_else(|| config.output_dir.clone()) else {
        bail!("no output directory: pass --out or set output_dir in the config");
    };
    let records = run_experiment(&config, args.jobs)?;
    let failed = records.iter().filter(|r| r.error.is_some()).count();
    write_outputs(&records, &out)?;
    if failed > 0 {
        eprintln!("{failed} of {} cells failed; see the error column of records.csv", records.len());
    }
    Ok(())
}

fn synth(args: &SynthArgs) -> Result<()> {
    let text = fs::read_to_string(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
    let scenario = synth_scenario(&SynthConfig::from_json(&text)?)?;
    write(&args.out, &serialize_mot(&scenario))?;
    if let Some(gt) = &args.gt {
        write(gt, &serialize_detections(scenario.ground_truth()))?;
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Privatize(a) => privatize(&a),
        Command::Track(a) => track(&a),
        Command::Refine(a) => refine_cmd(&a),
        Command::Attack(a) => attack(&a),
        Command::Metrics(a) => metrics(&a),
        Command::Experiment(a) => experiment(&a),
        Command::Synth(a) => synth(&a),
    }
}

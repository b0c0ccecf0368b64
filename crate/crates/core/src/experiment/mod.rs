//! End-to-end sweeps over methods, budgets, repeats and clips.
//!
//! Every grid cell runs: NCP weights, release (per method), tracking,
//! refinement, metrics, then each configured attack on the released
//! detections followed by tracking and refinement again. Cells draw from
//! their own RNG seeded by a hash of the cell coordinates, so results do not
//! depend on scheduling.

mod output;
mod suite;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::attacks::{apply_attack, evaluate_defense, AttackReport, AttackSpec};
use crate::dcrf::{refine, DcrfParams, RefineParams};
use crate::ingest::{parse_mot, synth_scenario, DetKey, Scenario, SynthConfig};
use crate::metrics::{compare_detections, evaluate_tracks, retrieval_frequency, CompareOptions, EvalParams, MetricReport, Probe};
use crate::ncp::{weight_scenario, NcpParams, NcpWeight};
use crate::privacy::{calibrate_sigma, privatize_scenario, white_noise_scenario, PrivacyBudget};
use crate::tracker::{track_scenario, Track, TrackerConfig};

pub use output::{format_opt, render_outputs, summarize, write_outputs, Stats, SummaryRow, OUTPUT_FILES};
pub use suite::{suite_configs, SuiteConfig};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    NcpGaussian,
    WhiteNoise,
    None,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::NcpGaussian => "ncp_gaussian",
            Self::WhiteNoise => "white_noise",
            Self::None => "none",
        }
    }
}

impl FromStr for Method {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ncp_gaussian" => Ok(Self::NcpGaussian),
            "white_noise" => Ok(Self::WhiteNoise),
            "none" => Ok(Self::None),
            other => Err(ExperimentError::Config(format!("unknown method {other:?}"))),
        }
    }
}

/// Where the clips come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioSource {
    Suite(SuiteConfig),
    Synth(Vec<SynthConfig>),
    /// MOT detection files; each file's own rows serve as ground truth
    /// unless a ground-truth file is given at the same index.
    Mot {
        paths: Vec<PathBuf>,
        #[serde(default)]
        ground_truth: Vec<PathBuf>,
    },
}

impl Default for ScenarioSource {
    fn default() -> Self {
        Self::Suite(SuiteConfig::default())
    }
}

fn default_methods() -> Vec<Method> {
    vec![Method::NcpGaussian, Method::WhiteNoise, Method::None]
}
fn default_epsilons() -> Vec<f64> {
    vec![0.5, 1.0, 1.5]
}
fn default_delta() -> f64 {
    1e-5
}
fn default_one() -> f64 {
    1.0
}
fn default_repeats() -> u32 {
    1
}
fn default_refined() -> Vec<Method> {
    vec![Method::NcpGaussian, Method::None]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub scenario: ScenarioSource,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_epsilons")]
    pub epsilons: Vec<f64>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_one")]
    pub sensitivity: f64,
    #[serde(default = "default_one")]
    pub cost_fraction: f64,
    #[serde(default)]
    pub ncp: NcpParams,
    #[serde(default)]
    pub attacks: Vec<AttackSpec>,
    #[serde(default = "default_repeats")]
    pub repeats: u32,
    #[serde(default)]
    pub master_seed: u64,
    /// Methods whose headline tracking RMSE is taken after refinement.
    #[serde(default = "default_refined")]
    pub refined_methods: Vec<Method>,
    /// Divide tracking RMSE by the frame diagonal.
    #[serde(default)]
    pub normalize: bool,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::Config(m.into()));
        if self.repeats < 1 {
            return bad("repeats must be at least 1");
        }
        if self.epsilons.is_empty() {
            return bad("budget grid is empty");
        }
        if self.epsilons.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return bad("every epsilon must be positive and finite");
        }
        if self.methods.is_empty() {
            return bad("no methods selected");
        }
        for &eps in &self.epsilons {
            PrivacyBudget::new(eps, self.delta, self.sensitivity, self.cost_fraction).map_err(|e| ExperimentError::Config(e.to_string()))?;
        }
        NcpParams::new(self.ncp.sensitive_boost, self.ncp.stability_floor).map_err(|e| ExperimentError::Config(e.to_string()))?;
        for a in &self.attacks {
            a.validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn budget(&self, epsilon: f64) -> PrivacyBudget {
        PrivacyBudget { epsilon, delta: self.delta, sensitivity: self.sensitivity, cost_fraction: self.cost_fraction }
    }
}

/// Loads every clip of the source, sorted and with sensitivity flags set.
pub fn load_scenarios(source: &ScenarioSource) -> Result<Vec<Scenario>, ExperimentError> {
    let synth = |cfgs: &[SynthConfig]| {
        cfgs.iter().map(|c| synth_scenario(c).map_err(|e| ExperimentError::Config(e.to_string()))).collect::<Result<Vec<_>, _>>()
    };
    match source {
        ScenarioSource::Suite(s) => synth(&suite_configs(s)),
        ScenarioSource::Synth(cfgs) => synth(cfgs),
        ScenarioSource::Mot { paths, ground_truth } => {
            let read = |p: &PathBuf| {
                let text = std::fs::read_to_string(p).map_err(|source| ExperimentError::Io { path: p.clone(), source })?;
                let mut s = parse_mot(&text).map_err(|e| ExperimentError::Config(format!("{}: {e}", p.display())))?;
                s.assign_missing_ids();
                Ok::<_, ExperimentError>(s)
            };
            paths
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let mut s = read(p)?;
                    s.name = p.file_stem().map_or_else(|| format!("mot_{i}"), |n| n.to_string_lossy().into_owned());
                    let gt = match ground_truth.get(i) {
                        Some(g) => read(g)?.detections,
                        None => s.detections.clone(),
                    };
                    let sensitive = s.sensitive_classes.clone();
                    s.mark_sensitive(&sensitive);
                    s.ground_truth = Some(gt);
                    Ok(s)
                })
                .collect()
        }
    }
}

/// 64-bit seed of one grid cell.
pub fn cell_seed(master_seed: u64, method: Method, epsilon: f64, repeat: u32, scenario: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(master_seed.to_le_bytes());
    h.update(method.as_str().as_bytes());
    h.update(epsilon.to_bits().to_le_bytes());
    h.update(repeat.to_le_bytes());
    h.update((scenario as u64).to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 has 32 bytes"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutcome {
    pub spec: AttackSpec,
    pub unrefined: AttackReport,
    pub refined: AttackReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub method: Method,
    pub epsilon: f64,
    pub repeat: u32,
    pub scenario: String,
    /// Per-coordinate noise std on perturbed detections.
    pub sigma_eff: f64,
    pub metrics: MetricReport,
    /// Headline tracking RMSE (refined or not per the config).
    pub tracking_rmse: Option<f64>,
    pub tracking_rmse_raw: Option<f64>,
    pub tracking_rmse_refined: Option<f64>,
    pub attacks: Vec<AttackOutcome>,
    pub error: Option<String>,
}

/// Per-coordinate noise std a method puts on the detections it perturbs.
pub fn effective_sigma(method: Method, budget: &PrivacyBudget, ncp: &NcpParams) -> Result<f64, String> {
    let sigma = calibrate_sigma(budget).map_err(|e| e.to_string())?.sigma();
    Ok(match method {
        Method::None => 0.0,
        Method::NcpGaussian | Method::WhiteNoise => sigma * (1.0 + ncp.sensitive_boost),
    })
}

/// Tracker settings for detections with per-coordinate noise `sigma`.
pub fn tracker_for_noise(sigma: f64) -> TrackerConfig {
    TrackerConfig { measurement_noise: (sigma * sigma).max(1.0), ..Default::default() }
}

/// Refinement settings for detections with per-coordinate noise `sigma`.
/// The motion scale covers two standard deviations of a box center.
pub fn refine_for_noise(sigma: f64) -> RefineParams {
    let base = RefineParams::default();
    let measurement_noise = (sigma * sigma).max(base.measurement_noise);
    let tau = 2.0 * (1.25 * measurement_noise).sqrt();
    RefineParams {
        dcrf: DcrfParams { tau, ..base.dcrf },
        gate_radius: base.gate_radius.max(3.0 * tau),
        measurement_noise,
        ..base
    }
}

struct Pipeline<'a> {
    config: &'a ExperimentConfig,
    weights: BTreeMap<DetKey, NcpWeight>,
    tracker: TrackerConfig,
    refine: RefineParams,
}

impl Pipeline<'_> {
    fn track_and_refine(&self, released: &Scenario) -> Result<(Vec<Track>, Vec<Track>), String> {
        let tracks = track_scenario(released, &self.tracker);
        let refined = refine(&tracks, released, &self.weights, &self.refine).map_err(|e| e.to_string())?;
        Ok((tracks, refined))
    }
}

fn release(method: Method, clean: &Scenario, budget: &PrivacyBudget, ncp: &NcpParams, weights: &BTreeMap<DetKey, NcpWeight>, rng: &mut ChaCha8Rng) -> Result<Scenario, String> {
    match method {
        Method::None => Ok(clean.clone()),
        Method::NcpGaussian => privatize_scenario(clean, budget, weights, rng).map_err(|e| e.to_string()),
        Method::WhiteNoise => {
            let sigma = effective_sigma(method, budget, ncp)?;
            Ok(white_noise_scenario(clean, sigma * 3f64.sqrt(), rng))
        }
    }
}

fn run_cell(config: &ExperimentConfig, clean: &Scenario, index: usize, method: Method, epsilon: f64, repeat: u32) -> RunRecord {
    let mut record = RunRecord {
        method,
        epsilon,
        repeat,
        scenario: clean.name.clone(),
        sigma_eff: 0.0,
        metrics: MetricReport::new(),
        tracking_rmse: None,
        tracking_rmse_raw: None,
        tracking_rmse_refined: None,
        attacks: Vec::new(),
        error: None,
    };
    if let Err(e) = fill_cell(config, clean, index, &mut record) {
        record.error = Some(e);
    }
    record
}

fn fill_cell(config: &ExperimentConfig, clean: &Scenario, index: usize, record: &mut RunRecord) -> Result<(), String> {
    let budget = config.budget(record.epsilon);
    let sigma = effective_sigma(record.method, &budget, &config.ncp)?;
    record.sigma_eff = sigma;
    let mut rng = ChaCha8Rng::seed_from_u64(cell_seed(config.master_seed, record.method, record.epsilon, record.repeat, index));
    let weights = weight_scenario(clean, &clean.sensitive_classes, &config.ncp);
    let released = release(record.method, clean, &budget, &config.ncp, &weights, &mut rng)?;
    let pipeline = Pipeline { config, weights, tracker: tracker_for_noise(sigma), refine: refine_for_noise(sigma) };

    let (tracks, refined) = pipeline.track_and_refine(&released)?;
    let diag = clean.frame_size[0].hypot(clean.frame_size[1]);
    let scale = |v: Option<f64>| v.map(|x| if config.normalize { x / diag } else { x });
    let gt = clean.ground_truth();
    let raw_eval = evaluate_tracks(gt, &tracks, &EvalParams::default());
    let refined_eval = evaluate_tracks(gt, &refined, &EvalParams::default());
    record.tracking_rmse_raw = scale(raw_eval.rmse);
    record.tracking_rmse_refined = scale(refined_eval.rmse);
    let use_refined = config.refined_methods.contains(&record.method);
    record.tracking_rmse = if use_refined { record.tracking_rmse_refined } else { record.tracking_rmse_raw };

    let opts = CompareOptions {
        max_value: clean.frame_size[0].max(clean.frame_size[1]),
        sensitive_classes: clean.sensitive_classes.clone(),
        ..Default::default()
    };
    let mut metrics = compare_detections(clean, &released, &opts).map_err(|e| e.to_string())?;
    let mut with_gt = released.clone();
    with_gt.ground_truth = Some(gt.to_vec());
    metrics
        .set("retrieval_frequency", retrieval_frequency(&with_gt, &Probe::default(), &clean.sensitive_classes), "iou=0.5")
        .map_err(|e| e.to_string())?;
    let switches = if use_refined { refined_eval.id_switches } else { raw_eval.id_switches };
    metrics.set("id_switches", Some(switches as f64), "").map_err(|e| e.to_string())?;
    record.metrics = metrics;

    for spec in &pipeline.config.attacks {
        let attacked = apply_attack(&released, spec).map_err(|e| e.to_string())?;
        let (tracks, refined) = pipeline.track_and_refine(&attacked)?;
        let (unrefined, refined) = evaluate_defense(clean, &tracks, &refined, spec.onset_frame);
        record.attacks.push(AttackOutcome { spec: spec.clone(), unrefined, refined });
    }
    Ok(())
}

/// Runs every cell in `(method, ε, repeat, scenario)` order. `jobs` bounds
/// the worker count; `None` uses the global pool.
pub fn run_experiment(config: &ExperimentConfig, jobs: Option<usize>) -> Result<Vec<RunRecord>, ExperimentError> {
    config.validate()?;
    let scenarios = load_scenarios(&config.scenario)?;
    let mut cells = Vec::new();
    for &method in &config.methods {
        for &eps in &config.epsilons {
            for repeat in 0..config.repeats {
                for index in 0..scenarios.len() {
                    cells.push((method, eps, repeat, index));
                }
            }
        }
    }
    let work = || cells.par_iter().map(|&(m, e, r, i)| run_cell(config, &scenarios[i], i, m, e, r)).collect();
    match jobs {
        None => Ok(work()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build().map_err(|e| ExperimentError::Config(e.to_string()))?;
            Ok(pool.install(work))
        }
    }
}

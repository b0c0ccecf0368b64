//! Detection-level adversaries and defense scoring.
//!
//! A trajectory hijack either deletes the target's detections from the onset
//! frame or drags them by a constant per-frame drift. The blind-label attack
//! rewrites the target's class while leaving boxes alone.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::Scenario;
use crate::metrics::{evaluate_tracks, EvalParams};
use crate::tracker::Track;

#[derive(Debug, Error, PartialEq)]
pub enum AttackError {
    #[error("target id {0} has no detections")]
    UnknownTarget(u32),
    #[error("invalid attack: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    HijackShift,
    HijackRemove,
    BlindLabel,
}

impl FromStr for AttackKind {
    type Err = AttackError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hijack_shift" => Ok(Self::HijackShift),
            "hijack_remove" => Ok(Self::HijackRemove),
            "blind_label" => Ok(Self::BlindLabel),
            other => Err(AttackError::Invalid(format!("unknown attack kind {other:?}"))),
        }
    }
}

impl AttackKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::HijackShift => "hijack_shift",
            Self::HijackRemove => "hijack_remove",
            Self::BlindLabel => "blind_label",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub target_id: u32,
    pub onset_frame: u32,
    /// Pixels per frame, used by `hijack_shift`.
    #[serde(default)]
    pub drift: [f64; 2],
    /// Class rewrites for `blind_label`; empty means [`default_label_map`].
    #[serde(default)]
    pub label_map: BTreeMap<u32, u32>,
}

impl AttackSpec {
    pub fn hijack_shift(target_id: u32, onset_frame: u32, drift: [f64; 2]) -> Self {
        Self { kind: AttackKind::HijackShift, target_id, onset_frame, drift, label_map: BTreeMap::new() }
    }

    pub fn hijack_remove(target_id: u32, onset_frame: u32) -> Self {
        Self { kind: AttackKind::HijackRemove, target_id, onset_frame, drift: [0.0; 2], label_map: BTreeMap::new() }
    }

    pub fn blind_label(target_id: u32, onset_frame: u32, label_map: BTreeMap<u32, u32>) -> Self {
        Self { kind: AttackKind::BlindLabel, target_id, onset_frame, drift: [0.0; 2], label_map }
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        if self.onset_frame < 1 {
            return Err(AttackError::Invalid("onset frame must be at least 1".into()));
        }
        if !self.drift.iter().all(|d| d.is_finite()) {
            return Err(AttackError::Invalid("drift must be finite".into()));
        }
        Ok(())
    }
}

/// Maps every sensitive class to the most frequent non-sensitive class among
/// the detections (smallest class id on ties). Empty when no non-sensitive
/// class occurs.
pub fn default_label_map(scenario: &Scenario) -> BTreeMap<u32, u32> {
    let mut freq: BTreeMap<u32, usize> = BTreeMap::new();
    for d in scenario.detections.iter().filter(|d| !scenario.sensitive_classes.contains(&d.class_id)) {
        *freq.entry(d.class_id).or_default() += 1;
    }
    let mut best: Option<(u32, usize)> = None;
    for (&c, &n) in &freq {
        if best.is_none_or(|(_, b)| n > b) {
            best = Some((c, n));
        }
    }
    match best {
        Some((to, _)) => scenario.sensitive_classes.iter().map(|&s| (s, to)).collect(),
        None => BTreeMap::new(),
    }
}

/// Applies `spec` to the detections; ground truth is left as is.
pub fn apply_attack(scenario: &Scenario, spec: &AttackSpec) -> Result<Scenario, AttackError> {
    spec.validate()?;
    if !scenario.detections.iter().any(|d| d.track_id == Some(spec.target_id)) {
        return Err(AttackError::UnknownTarget(spec.target_id));
    }
    let hit = |d: &crate::ingest::Detection| d.track_id == Some(spec.target_id) && d.frame >= spec.onset_frame;
    let mut out = scenario.clone();
    match spec.kind {
        AttackKind::HijackRemove => out.detections.retain(|d| !hit(d)),
        AttackKind::HijackShift => {
            for d in out.detections.iter_mut().filter(|d| hit(d)) {
                let k = f64::from(d.frame - spec.onset_frame + 1);
                d.bbox = d.bbox.translated(spec.drift[0] * k, spec.drift[1] * k);
            }
        }
        AttackKind::BlindLabel => {
            let map = if spec.label_map.is_empty() { default_label_map(scenario) } else { spec.label_map.clone() };
            for d in out.detections.iter_mut().filter(|d| hit(d)) {
                let Some(&to) = map.get(&d.class_id) else { continue };
                let len = d.class_scores.len().max(to as usize + 1);
                let mut scores = vec![0.0; len];
                for (c, s) in d.class_scores.iter().enumerate() {
                    let c = c as u32;
                    scores[*map.get(&c).unwrap_or(&c) as usize] += s;
                }
                d.class_scores = scores;
                d.class_id = to;
            }
        }
    }
    out.sensitive_classes = scenario.sensitive_classes.clone();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackReport {
    pub id_switches: usize,
    /// `(frame, mean GIoU against ground truth)`.
    pub giou_series: Vec<(u32, f64)>,
    /// Center RMSE in pixels over frames at or after the onset.
    pub post_onset_rmse: Option<f64>,
    pub classification_accuracy: Option<f64>,
}

impl AttackReport {
    pub fn mean_giou(&self) -> Option<f64> {
        (!self.giou_series.is_empty()).then(|| self.giou_series.iter().map(|(_, g)| g).sum::<f64>() / self.giou_series.len() as f64)
    }
}

pub fn attack_report(clean_gt: &Scenario, tracks: &[Track], onset_frame: u32) -> AttackReport {
    let eval = evaluate_tracks(clean_gt.ground_truth(), tracks, &EvalParams { from_frame: onset_frame, ..Default::default() });
    AttackReport {
        id_switches: eval.id_switches,
        giou_series: eval.giou_series,
        post_onset_rmse: eval.rmse,
        classification_accuracy: eval.classification_accuracy,
    }
}

/// Reports for the attacked tracks and for their refined version.
pub fn evaluate_defense(clean_gt: &Scenario, attacked_tracks: &[Track], refined_tracks: &[Track], onset_frame: u32) -> (AttackReport, AttackReport) {
    (attack_report(clean_gt, attacked_tracks, onset_frame), attack_report(clean_gt, refined_tracks, onset_frame))
}

/// Track ids, for checking that a defense kept every identity.
pub fn track_ids(tracks: &[Track]) -> BTreeSet<u32> {
    tracks.iter().map(|t| t.id).collect()
}

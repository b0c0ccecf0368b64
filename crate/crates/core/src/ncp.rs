//! Normalized Control Penalty: per-detection noise multiplier and unary weight.
//!
//! Sensitive classes get `1 + λ` times the calibrated noise; everything else
//! gets none. The unary weight used by the chain model is the detection
//! confidence scaled by how decisive its class scores are
//! (`1 − H(p)/ln C`, floored at `stability_floor`).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{DetKey, Detection, Scenario};

#[derive(Debug, Error, PartialEq)]
pub enum NcpError {
    #[error("class stability needs at least two classes, got {0}")]
    TooFewClasses(usize),
    #[error("invalid NCP parameters: {0}")]
    Params(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NcpParams {
    /// λ: extra noise share for sensitive classes.
    pub sensitive_boost: f64,
    pub stability_floor: f64,
}

impl Default for NcpParams {
    fn default() -> Self {
        Self { sensitive_boost: 0.5, stability_floor: 0.1 }
    }
}

impl NcpParams {
    pub fn new(sensitive_boost: f64, stability_floor: f64) -> Result<Self, NcpError> {
        if !(sensitive_boost >= 0.0 && sensitive_boost.is_finite()) {
            return Err(NcpError::Params(format!("lambda must be non-negative, got {sensitive_boost}")));
        }
        if !(0.0..=1.0).contains(&stability_floor) {
            return Err(NcpError::Params(format!("floor must lie in [0, 1], got {stability_floor}")));
        }
        Ok(Self { sensitive_boost, stability_floor })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NcpWeight {
    pub noise_multiplier: f64,
    pub unary_weight: f64,
}

/// `1 − H(scores)/ln C` with `H` the Shannon entropy in nats.
pub fn class_stability(scores: &[f64]) -> Result<f64, NcpError> {
    let c = scores.len();
    if c < 2 {
        return Err(NcpError::TooFewClasses(c));
    }
    let entropy: f64 = scores.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum();
    Ok((1.0 - entropy / (c as f64).ln()).clamp(0.0, 1.0))
}

pub fn ncp_weight(det: &Detection, sensitive_classes: &BTreeSet<u32>, params: &NcpParams) -> NcpWeight {
    // A detection without a usable score vector counts as fully decisive.
    let stability = class_stability(&det.class_scores).unwrap_or(1.0);
    let unary_weight = (stability.max(params.stability_floor) * det.confidence).clamp(0.0, 1.0);
    let noise_multiplier = if sensitive_classes.contains(&det.class_id) { 1.0 + params.sensitive_boost } else { 0.0 };
    NcpWeight { noise_multiplier, unary_weight }
}

/// One weight per detection, keyed by `(frame, id)`.
pub fn weight_scenario(
    scenario: &Scenario,
    sensitive_classes: &BTreeSet<u32>,
    params: &NcpParams,
) -> BTreeMap<DetKey, NcpWeight> {
    scenario
        .detections
        .iter()
        .map(|d| (d.key(), ncp_weight(d, sensitive_classes, params)))
        .collect()
}

//! Gaussian-mechanism noise on sensitive detection boxes.
//!
//! For an L2 sensitivity Δ and budget (ε, δ) the mechanism draws
//! `N(0, σ²)` noise per coordinate with
//!
//! ```text
//! σ = Δ · √(2 ln(1.25/δ)) / (ε · cost_fraction)
//! ```
//!
//! The cost fraction is the share of ε actually spent; it folds into the
//! effective epsilon. A uniform "white noise" perturbation that ignores
//! sensitivity is provided as a comparison baseline.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{DetKey, Detection, Scenario};
use crate::ncp::NcpWeight;

#[derive(Debug, Error, PartialEq)]
pub enum PrivacyError {
    #[error("invalid privacy budget: {0}")]
    Budget(String),
    #[error("noise multiplier must be non-negative, got {0}")]
    NegativeMultiplier(f64),
    #[error("no NCP weight for sensitive detection (frame {frame}, id {id:?})")]
    MissingWeight { frame: u32, id: Option<u32> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub delta: f64,
    /// L2 sensitivity in pixels.
    pub sensitivity: f64,
    pub cost_fraction: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64, sensitivity: f64, cost_fraction: f64) -> Result<Self, PrivacyError> {
        let b = Self { epsilon, delta, sensitivity, cost_fraction };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), PrivacyError> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(PrivacyError::Budget(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(PrivacyError::Budget(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if !(self.sensitivity > 0.0 && self.sensitivity.is_finite()) {
            return Err(PrivacyError::Budget(format!("sensitivity must be positive, got {}", self.sensitivity)));
        }
        if !(self.cost_fraction > 0.0 && self.cost_fraction <= 1.0) {
            return Err(PrivacyError::Budget(format!("cost fraction must lie in (0, 1], got {}", self.cost_fraction)));
        }
        Ok(())
    }

    pub fn effective_epsilon(&self) -> f64 {
        self.epsilon * self.cost_fraction
    }
}

/// Standard deviation of the per-coordinate Gaussian noise, in the units of the sensitivity.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct NoiseScale(pub f64);

impl NoiseScale {
    pub fn sigma(self) -> f64 {
        self.0
    }
}

pub fn calibrate_sigma(budget: &PrivacyBudget) -> Result<NoiseScale, PrivacyError> {
    budget.validate()?;
    let eps = budget.effective_epsilon();
    if eps <= 0.0 {
        return Err(PrivacyError::Budget("effective epsilon must be positive".into()));
    }
    Ok(NoiseScale(budget.sensitivity * (2.0 * (1.25 / budget.delta).ln()).sqrt() / eps))
}

/// Adds independent `N(0, (σ·multiplier)²)` noise to each box coordinate.
/// Width and height are clamped at zero; frame and id are untouched.
pub fn perturb_detection<R: Rng + ?Sized>(
    det: &Detection,
    sigma: NoiseScale,
    multiplier: f64,
    rng: &mut R,
) -> Result<Detection, PrivacyError> {
    if !(multiplier >= 0.0) {
        return Err(PrivacyError::NegativeMultiplier(multiplier));
    }
    let std = sigma.0 * multiplier;
    if std == 0.0 {
        return Ok(det.clone());
    }
    let normal = Normal::new(0.0, std).expect("finite non-negative std");
    let mut out = det.clone();
    let mut coords = det.bbox.to_array();
    for c in coords.iter_mut() {
        *c += normal.sample(rng);
    }
    coords[2] = coords[2].max(0.0);
    coords[3] = coords[3].max(0.0);
    out.bbox = crate::ingest::BBox::from_array(coords);
    Ok(out)
}

/// Adds `U[-power, power]` noise to every coordinate regardless of sensitivity.
/// A power of `σ·√3` matches the per-coordinate variance `σ²` of the Gaussian path.
pub fn white_noise<R: Rng + ?Sized>(det: &Detection, power: f64, rng: &mut R) -> Detection {
    if !(power > 0.0) {
        return det.clone();
    }
    let uniform = Uniform::new_inclusive(-power, power).expect("positive power");
    let mut coords = det.bbox.to_array();
    for c in coords.iter_mut() {
        *c += uniform.sample(rng);
    }
    coords[2] = coords[2].max(0.0);
    coords[3] = coords[3].max(0.0);
    let mut out = det.clone();
    out.bbox = crate::ingest::BBox::from_array(coords);
    out
}

/// Perturbs every sensitive detection with its NCP noise multiplier.
/// Non-sensitive detections and ground truth are copied unchanged.
pub fn privatize_scenario<R: Rng + ?Sized>(
    scenario: &Scenario,
    budget: &PrivacyBudget,
    weights: &BTreeMap<DetKey, NcpWeight>,
    rng: &mut R,
) -> Result<Scenario, PrivacyError> {
    let sigma = calibrate_sigma(budget)?;
    let mut out = scenario.clone();
    for det in out.detections.iter_mut().filter(|d| d.sensitive) {
        let weight = weights
            .get(&det.key())
            .ok_or(PrivacyError::MissingWeight { frame: det.frame, id: det.track_id })?;
        *det = perturb_detection(det, sigma, weight.noise_multiplier, rng)?;
    }
    Ok(out)
}

/// Applies [`white_noise`] to every detection of the scenario.
pub fn white_noise_scenario<R: Rng + ?Sized>(scenario: &Scenario, power: f64, rng: &mut R) -> Scenario {
    let mut out = scenario.clone();
    for det in out.detections.iter_mut() {
        *det = white_noise(det, power, rng);
    }
    out
}

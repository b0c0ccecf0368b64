//! Seeded synthetic clip suite.
//!
//! Each clip has six targets in separate horizontal lanes, two pedestrians
//! and four cars, moving at constant speed. Lanes never overlap, so the clean
//! suite has no ambiguous associations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ingest::{BBox, SynthConfig, TargetMotion, CAR, PEDESTRIAN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    #[serde(default = "default_clips")]
    pub clips: usize,
    #[serde(default = "default_frames")]
    pub frames: u32,
    #[serde(default = "default_pedestrians")]
    pub pedestrians: usize,
    #[serde(default = "default_cars")]
    pub cars: usize,
    /// Largest probability mass moved off the true class per detection.
    #[serde(default = "default_spread")]
    pub class_score_spread: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_clips() -> usize {
    20
}
fn default_frames() -> u32 {
    200
}
fn default_pedestrians() -> usize {
    2
}
fn default_cars() -> usize {
    4
}
fn default_spread() -> f64 {
    0.2
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            clips: default_clips(),
            frames: default_frames(),
            pedestrians: default_pedestrians(),
            cars: default_cars(),
            class_score_spread: default_spread(),
            seed: 0,
        }
    }
}

const FRAME: [f64; 2] = [1920.0, 1080.0];
const PEDESTRIAN_SIZE: [f64; 2] = [60.0, 150.0];
const CAR_SIZE: [f64; 2] = [160.0, 90.0];
const MAX_SPEED: f64 = 2.5;

/// Clip configurations; clip `i` uses seed `suite.seed + i` and is named `clip_i`.
/// Pedestrians take the first lanes, so target id 1 is always a pedestrian
/// when any are requested.
pub fn suite_configs(suite: &SuiteConfig) -> Vec<SynthConfig> {
    let lanes = suite.pedestrians + suite.cars;
    let lane_height = FRAME[1] / lanes.max(1) as f64;
    (0..suite.clips)
        .map(|clip| {
            let seed = suite.seed.wrapping_add(clip as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let span = f64::from(suite.frames.saturating_sub(1));
            let targets = (0..lanes)
                .map(|lane| {
                    let (class_id, size) = if lane < suite.pedestrians { (PEDESTRIAN, PEDESTRIAN_SIZE) } else { (CAR, CAR_SIZE) };
                    let vx = rng.random_range(-MAX_SPEED..=MAX_SPEED);
                    // Keep the whole path inside the frame.
                    let lo = (-vx * span).max(0.0) + 10.0;
                    let hi = (FRAME[0] - size[0] - (vx * span).max(0.0) - 10.0).max(lo);
                    let left = rng.random_range(lo..=hi);
                    let top = lane as f64 * lane_height + (lane_height - size[1]).max(0.0) / 2.0;
                    TargetMotion { initial: BBox::new(left, top, size[0], size[1]), velocity: [vx, 0.0], class_id }
                })
                .collect();
            let mut cfg = SynthConfig::new(suite.frames, targets);
            cfg.name = format!("clip_{clip}");
            cfg.class_score_spread = suite.class_score_spread;
            cfg.frame_size = FRAME;
            cfg.seed = seed;
            cfg
        })
        .collect()
}

//! Detection records, MOT-Challenge text I/O, synthetic scenarios and
//! sensitive-subset extraction.
//!
//! The MOT line layout is `frame,id,bb_left,bb_top,bb_width,bb_height,conf[,class,visibility]`.
//! An id of `-1` means the detection is not yet assigned to a track. Lines
//! carrying more than nine fields (the 3-D world coordinates of some `det.txt`
//! files) are accepted and the extra fields ignored; `-1` in the class or
//! visibility column is treated as "absent".

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Class id used by the synthetic generator for pedestrians (sensitive by default).
pub const PEDESTRIAN: u32 = 1;
/// Class id used by the synthetic generator for cars.
pub const CAR: u32 = 3;

/// Minimum length of the one-hot score vector produced when parsing MOT text.
pub const MOT_NUM_CLASSES: usize = 13;

#[derive(Debug, Error, PartialEq)]
pub enum IngestError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("invalid synthetic config: {0}")]
    Config(String),
}

/// Axis-aligned box in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BBox {
    pub left: f64,
    pub top: f64,
    pub width: f64,
    pub height: f64,
}

impl BBox {
    pub const fn new(left: f64, top: f64, width: f64, height: f64) -> Self {
        Self { left, top, width, height }
    }

    pub fn right(&self) -> f64 {
        self.left + self.width
    }

    pub fn bottom(&self) -> f64 {
        self.top + self.height
    }

    pub fn area(&self) -> f64 {
        self.width.max(0.0) * self.height.max(0.0)
    }

    pub fn center(&self) -> [f64; 2] {
        [self.left + 0.5 * self.width, self.top + 0.5 * self.height]
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self { left: self.left + dx, top: self.top + dy, ..*self }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.left, self.top, self.width, self.height]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }
}

/// Identity of a detection inside a scenario: `(frame, track id)`.
/// `None` is the MOT "unassigned" id (`-1`).
pub type DetKey = (u32, Option<u32>);

/// One observed object in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame: u32,
    pub track_id: Option<u32>,
    pub bbox: BBox,
    pub confidence: f64,
    pub class_id: u32,
    pub class_scores: Vec<f64>,
    pub visibility: f64,
    pub sensitive: bool,
}

impl Detection {
    /// Detection with one-hot class scores of length `max(num_classes, class_id + 1)`.
    pub fn new(frame: u32, track_id: Option<u32>, bbox: BBox, class_id: u32, num_classes: usize) -> Self {
        Self {
            frame,
            track_id,
            bbox,
            confidence: 1.0,
            class_id,
            class_scores: one_hot(class_id, num_classes),
            visibility: 1.0,
            sensitive: false,
        }
    }

    pub fn key(&self) -> DetKey {
        (self.frame, self.track_id)
    }

    /// Score of `class` in `class_scores`, or 0 if the vector is shorter.
    pub fn score_of(&self, class: u32) -> f64 {
        self.class_scores.get(class as usize).copied().unwrap_or(0.0)
    }
}

/// One-hot probability vector with at least two entries.
pub fn one_hot(class_id: u32, num_classes: usize) -> Vec<f64> {
    let len = num_classes.max(class_id as usize + 1).max(2);
    let mut v = vec![0.0; len];
    v[class_id as usize] = 1.0;
    v
}

/// A sequence of detections plus optional ground truth.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub frame_count: u32,
    pub detections: Vec<Detection>,
    pub ground_truth: Option<Vec<Detection>>,
    pub sensitive_classes: BTreeSet<u32>,
    /// Frame size in pixels, used for PSNR range and RMSE normalization.
    #[serde(default = "default_frame_size")]
    pub frame_size: [f64; 2],
}

fn default_frame_size() -> [f64; 2] {
    [1920.0, 1080.0]
}

impl Scenario {
    pub fn new(name: impl Into<String>, frame_count: u32, detections: Vec<Detection>) -> Self {
        let mut s = Self {
            name: name.into(),
            frame_count,
            detections,
            ground_truth: None,
            sensitive_classes: BTreeSet::new(),
            frame_size: default_frame_size(),
        };
        s.sort();
        s
    }

    /// Restores the canonical `(frame, id)` order. Stable, so equal keys keep
    /// their relative order; unassigned ids sort before assigned ones.
    pub fn sort(&mut self) {
        self.detections.sort_by_key(|d| d.key());
        if let Some(gt) = self.ground_truth.as_mut() {
            gt.sort_by_key(|d| d.key());
        }
    }

    /// Sets `sensitive` on every detection (and ground-truth row) whose class
    /// is in `classes`, clearing it elsewhere.
    pub fn mark_sensitive(&mut self, classes: &BTreeSet<u32>) {
        self.sensitive_classes = classes.clone();
        for d in self.detections.iter_mut().chain(self.ground_truth.iter_mut().flatten()) {
            d.sensitive = classes.contains(&d.class_id);
        }
    }

    /// Gives every unassigned detection a fresh id (above the largest id in the
    /// scenario) so that `(frame, id)` keys are unique.
    pub fn assign_missing_ids(&mut self) {
        let mut next = self.detections.iter().filter_map(|d| d.track_id).max().unwrap_or(0) + 1;
        for d in self.detections.iter_mut().filter(|d| d.track_id.is_none()) {
            d.track_id = Some(next);
            next += 1;
        }
        self.sort();
    }

    pub fn frames(&self) -> impl Iterator<Item = (u32, &[Detection])> {
        FrameIter { dets: &self.detections }
    }

    pub fn at_frame(&self, frame: u32) -> &[Detection] {
        frame_slice(&self.detections, frame)
    }

    pub fn ground_truth(&self) -> &[Detection] {
        self.ground_truth.as_deref().unwrap_or(&[])
    }
}

/// Detections of `frame` in a `(frame, id)`-sorted slice.
pub fn frame_slice(dets: &[Detection], frame: u32) -> &[Detection] {
    let lo = dets.partition_point(|d| d.frame < frame);
    let hi = dets.partition_point(|d| d.frame <= frame);
    &dets[lo..hi]
}

struct FrameIter<'a> {
    dets: &'a [Detection],
}

impl<'a> Iterator for FrameIter<'a> {
    type Item = (u32, &'a [Detection]);

    fn next(&mut self) -> Option<Self::Item> {
        let frame = self.dets.first()?.frame;
        let n = self.dets.iter().take_while(|d| d.frame == frame).count();
        let (head, tail) = self.dets.split_at(n);
        self.dets = tail;
        Some((frame, head))
    }
}

fn field<T: std::str::FromStr>(raw: &str, name: &str, line: usize) -> Result<T, IngestError> {
    raw.trim().parse::<T>().map_err(|_| IngestError::Parse {
        line,
        reason: format!("invalid {name} `{}`", raw.trim()),
    })
}

/// Parses MOT-Challenge text. Blank lines are skipped; line numbers in errors are 1-based.
pub fn parse_mot(text: &str) -> Result<Scenario, IngestError> {
    let mut detections = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() < 7 {
            return Err(IngestError::Parse {
                line,
                reason: format!("expected at least 7 fields, found {}", fields.len()),
            });
        }
        let frame: i64 = field(fields[0], "frame", line)?;
        if frame < 1 {
            return Err(IngestError::Parse { line, reason: format!("frame must be positive, got {frame}") });
        }
        let id: i64 = field(fields[1], "id", line)?;
        let track_id = match id {
            -1 => None,
            id if id >= 0 && id <= u32::MAX as i64 => Some(id as u32),
            other => return Err(IngestError::Parse { line, reason: format!("invalid id {other}") }),
        };
        let bbox = BBox::new(
            field(fields[2], "bb_left", line)?,
            field(fields[3], "bb_top", line)?,
            field(fields[4], "bb_width", line)?,
            field(fields[5], "bb_height", line)?,
        );
        if !(bbox.width >= 0.0 && bbox.height >= 0.0) || !bbox.left.is_finite() || !bbox.top.is_finite() {
            return Err(IngestError::Parse { line, reason: "box must be finite with non-negative size".into() });
        }
        let confidence: f64 = field(fields[6], "conf", line)?;
        if !(0.0..=1.0).contains(&confidence) {
            return Err(IngestError::Parse { line, reason: format!("confidence {confidence} outside [0, 1]") });
        }
        let class_id = match fields.get(7) {
            None => 0,
            Some(raw) => match field::<i64>(raw, "class", line)? {
                -1 => 0,
                c if c >= 0 && c <= u32::MAX as i64 => c as u32,
                other => return Err(IngestError::Parse { line, reason: format!("invalid class {other}") }),
            },
        };
        let visibility = match fields.get(8) {
            None => 1.0,
            Some(raw) => {
                let v: f64 = field(raw, "visibility", line)?;
                if v == -1.0 {
                    1.0
                } else if (0.0..=1.0).contains(&v) {
                    v
                } else {
                    return Err(IngestError::Parse { line, reason: format!("visibility {v} outside [0, 1]") });
                }
            }
        };
        let mut det = Detection::new(frame as u32, track_id, bbox, class_id, MOT_NUM_CLASSES);
        det.confidence = confidence;
        det.visibility = visibility;
        detections.push(det);
    }
    let frame_count = detections.iter().map(|d| d.frame).max().unwrap_or(0);
    Ok(Scenario::new("", frame_count, detections))
}

/// Writes detections as 9-field MOT lines in canonical `(frame, id)` order.
/// Numbers use the shortest representation that parses back to the same value.
pub fn serialize_mot(scenario: &Scenario) -> String {
    serialize_detections(&scenario.detections)
}

pub fn serialize_detections(dets: &[Detection]) -> String {
    let mut order: Vec<&Detection> = dets.iter().collect();
    order.sort_by_key(|d| d.key());
    let mut out = String::new();
    for d in order {
        let id = d.track_id.map_or(-1, i64::from);
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            d.frame, id, d.bbox.left, d.bbox.top, d.bbox.width, d.bbox.height, d.confidence, d.class_id, d.visibility
        );
    }
    out
}

/// Constant-velocity motion of one synthetic target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetMotion {
    /// Box at frame 1.
    pub initial: BBox,
    /// Pixels per frame along x and y.
    #[serde(default)]
    pub velocity: [f64; 2],
    #[serde(default = "default_class")]
    pub class_id: u32,
}

fn default_class() -> u32 {
    PEDESTRIAN
}

/// Re-anchors target `second` so its x-path crosses `first`'s at `frame`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossingEvent {
    pub frame: u32,
    pub first: usize,
    pub second: usize,
}

/// Frames `[start, end]` (inclusive) in which `target` produces no detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcclusionGap {
    pub target: usize,
    pub start: u32,
    pub end: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub frame_count: u32,
    #[serde(default)]
    pub targets: Vec<TargetMotion>,
    #[serde(default)]
    pub crossing_events: Vec<CrossingEvent>,
    #[serde(default)]
    pub occlusion_gaps: Vec<OcclusionGap>,
    #[serde(default = "default_sensitive")]
    pub sensitive_classes: BTreeSet<u32>,
    #[serde(default = "default_num_classes")]
    pub num_classes: usize,
    /// Mean detector confidence before noise.
    #[serde(default = "default_confidence")]
    pub base_confidence: f64,
    #[serde(default)]
    pub confidence_noise_std: f64,
    /// Upper bound of the probability mass moved off the true class; 0 gives one-hot scores.
    #[serde(default)]
    pub class_score_spread: f64,
    #[serde(default = "default_frame_size")]
    pub frame_size: [f64; 2],
    #[serde(default)]
    pub seed: u64,
}

fn default_name() -> String {
    "synth".into()
}

fn default_sensitive() -> BTreeSet<u32> {
    BTreeSet::from([PEDESTRIAN])
}

fn default_num_classes() -> usize {
    4
}

fn default_confidence() -> f64 {
    1.0
}

impl SynthConfig {
    pub fn new(frame_count: u32, targets: Vec<TargetMotion>) -> Self {
        Self {
            name: default_name(),
            frame_count,
            targets,
            crossing_events: Vec::new(),
            occlusion_gaps: Vec::new(),
            sensitive_classes: default_sensitive(),
            num_classes: default_num_classes(),
            base_confidence: default_confidence(),
            confidence_noise_std: 0.0,
            class_score_spread: 0.0,
            frame_size: default_frame_size(),
            seed: 0,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, IngestError> {
        serde_json::from_str(text).map_err(|e| IngestError::Config(e.to_string()))
    }

    fn validate(&self) -> Result<(), IngestError> {
        let n = self.targets.len();
        for gap in &self.occlusion_gaps {
            if gap.target >= n {
                return Err(IngestError::Config(format!("occlusion target {} out of range", gap.target)));
            }
            if gap.start < 1 || gap.end > self.frame_count || gap.start > gap.end {
                return Err(IngestError::Config(format!(
                    "occlusion [{}, {}] outside [1, {}]",
                    gap.start, gap.end, self.frame_count
                )));
            }
        }
        for ev in &self.crossing_events {
            if ev.first >= n || ev.second >= n || ev.first == ev.second {
                return Err(IngestError::Config(format!("bad crossing pair ({}, {})", ev.first, ev.second)));
            }
        }
        if self.targets.iter().any(|t| t.class_id as usize >= self.num_classes.max(2)) {
            return Err(IngestError::Config("target class_id >= num_classes".into()));
        }
        let max_spread = 1.0 - 1.0 / self.num_classes.max(2) as f64;
        if !(0.0..max_spread).contains(&self.class_score_spread) && self.class_score_spread != 0.0 {
            return Err(IngestError::Config(format!("class_score_spread must lie in [0, {max_spread})")));
        }
        if self.confidence_noise_std < 0.0 {
            return Err(IngestError::Config("confidence_noise_std must be non-negative".into()));
        }
        Ok(())
    }
}

/// Generates a scenario whose detections follow the configured constant-velocity
/// paths. Target `i` gets track id `i + 1`. Ground truth holds every target in
/// every frame (visibility 0 inside occlusion gaps); detections omit occluded frames.
pub fn synth_scenario(config: &SynthConfig) -> Result<Scenario, IngestError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut targets = config.targets.clone();
    for ev in &config.crossing_events {
        let dt = f64::from(ev.frame.saturating_sub(1));
        let a = &targets[ev.first];
        let b = &targets[ev.second];
        let a_center = a.initial.left + 0.5 * a.initial.width + a.velocity[0] * dt;
        let left = a_center - 0.5 * b.initial.width - b.velocity[0] * dt;
        targets[ev.second].initial.left = left;
    }

    let num_classes = config.num_classes.max(2);
    let conf_noise = Normal::new(0.0, config.confidence_noise_std).map_err(|e| IngestError::Config(e.to_string()))?;
    let spread = Uniform::new_inclusive(0.0, config.class_score_spread).map_err(|e| IngestError::Config(e.to_string()))?;

    let mut detections = Vec::new();
    let mut ground_truth = Vec::new();
    for frame in 1..=config.frame_count {
        let dt = f64::from(frame - 1);
        for (i, t) in targets.iter().enumerate() {
            let bbox = t.initial.translated(t.velocity[0] * dt, t.velocity[1] * dt);
            let id = Some(i as u32 + 1);
            let occluded = config
                .occlusion_gaps
                .iter()
                .any(|g| g.target == i && (g.start..=g.end).contains(&frame));
            let sensitive = config.sensitive_classes.contains(&t.class_id);

            let mut gt = Detection::new(frame, id, bbox, t.class_id, num_classes);
            gt.sensitive = sensitive;
            gt.visibility = if occluded { 0.0 } else { 1.0 };
            ground_truth.push(gt);
            if occluded {
                continue;
            }

            let mut det = Detection::new(frame, id, bbox, t.class_id, num_classes);
            det.sensitive = sensitive;
            det.confidence = (config.base_confidence + conf_noise.sample(&mut rng)).clamp(0.0, 1.0);
            if config.class_score_spread > 0.0 {
                let moved = spread.sample(&mut rng);
                let share = moved / (num_classes - 1) as f64;
                det.class_scores = (0..num_classes)
                    .map(|c| if c == t.class_id as usize { 1.0 - moved } else { share })
                    .collect();
            }
            detections.push(det);
        }
    }

    let mut scenario = Scenario::new(config.name.clone(), config.frame_count, detections);
    scenario.ground_truth = Some(ground_truth);
    scenario.sensitive_classes = config.sensitive_classes.clone();
    scenario.frame_size = config.frame_size;
    scenario.sort();
    Ok(scenario)
}

/// Keeps detections of a sensitive class with visibility at least
/// `min_visibility`, flagging each as sensitive. Ground truth is filtered by
/// class only.
pub fn clean_dataset(scenario: &Scenario, sensitive_classes: &BTreeSet<u32>, min_visibility: f64) -> Scenario {
    let keep = |d: &Detection| sensitive_classes.contains(&d.class_id);
    let mark = |d: &Detection| Detection { sensitive: true, ..d.clone() };
    Scenario {
        name: scenario.name.clone(),
        frame_count: scenario.frame_count,
        detections: scenario
            .detections
            .iter()
            .filter(|d| keep(d) && d.visibility >= min_visibility)
            .map(mark)
            .collect(),
        ground_truth: scenario
            .ground_truth
            .as_ref()
            .map(|gt| gt.iter().filter(|d| keep(d)).map(mark).collect()),
        sensitive_classes: sensitive_classes.clone(),
        frame_size: scenario.frame_size,
    }
}

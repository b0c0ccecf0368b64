//! Baseline multi-object tracker.
//!
//! Each frame: predict every track, score track/detection pairs with
//! `1 − IoU + class-mismatch penalty`, solve the assignment, reject pairs whose
//! `1 − IoU` is above the gate, correct matched tracks, spawn tracks from
//! leftovers and retire tracks that missed too many frames. The class term
//! only decides between competing pairs; it never splits a track by itself.

pub mod assignment;
pub mod geometry;
pub mod motion;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::ingest::{BBox, DetKey, Detection, Scenario};
pub use assignment::{hungarian, Assignment};
pub use geometry::{center_distance, giou, iou};
pub use motion::{correct, predict, NumericError, SigmaParams, TrackState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackerConfig {
    /// Pairs costing more than this stay unmatched.
    pub gate: f64,
    /// Consecutive hits before a tentative track is confirmed.
    pub init_frames: u32,
    /// A confirmed track is retired once its misses exceed this.
    pub max_misses: u32,
    /// Q = process_noise · I.
    pub process_noise: f64,
    /// R = measurement_noise · I; also the initial position variance.
    pub measurement_noise: f64,
    pub initial_velocity_var: f64,
    pub class_mismatch_penalty: f64,
    pub sigma: SigmaParams,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            gate: 0.7,
            init_frames: 1,
            max_misses: 5,
            process_noise: 0.01,
            measurement_noise: 1.0,
            initial_velocity_var: 100.0,
            class_mismatch_penalty: 1.0,
            sigma: SigmaParams::default(),
        }
    }
}

impl TrackerConfig {
    pub fn process_noise_matrix(&self) -> DMatrix<f64> {
        DMatrix::identity(motion::STATE_DIM, motion::STATE_DIM) * self.process_noise
    }

    pub fn measurement_noise_matrix(&self) -> DMatrix<f64> {
        DMatrix::identity(motion::OBS_DIM, motion::OBS_DIM) * self.measurement_noise
    }

    pub fn initial_state(&self, bbox: &BBox) -> TrackState {
        TrackState::from_box(bbox, self.measurement_noise, self.initial_velocity_var)
    }
}

/// One emitted position of a track.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub frame: u32,
    pub bbox: BBox,
    pub class_id: u32,
    /// The detection this point came from; `None` for model-predicted points.
    pub source: Option<DetKey>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    /// Positive once confirmed; 0 while tentative.
    pub id: u32,
    pub state: TrackState,
    /// Strictly increasing in frame.
    pub history: Vec<TrackPoint>,
    /// Class of the latest matched detection.
    pub class_id: u32,
    hits: u32,
    confirmed: bool,
}

impl Track {
    /// A confirmed track built from an existing history (e.g. read from a file).
    /// The motion state is initialized at the last point.
    pub fn from_history(id: u32, history: Vec<TrackPoint>, config: &TrackerConfig) -> Self {
        let class_id = history.last().map_or(0, |p| p.class_id);
        let bbox = history.last().map(|p| p.bbox).unwrap_or_default();
        Self { id, state: config.initial_state(&bbox), history, class_id, hits: 0, confirmed: true }
    }

    pub fn is_confirmed(&self) -> bool {
        self.confirmed
    }

    pub fn point_at(&self, frame: u32) -> Option<&TrackPoint> {
        self.history.binary_search_by_key(&frame, |p| p.frame).ok().map(|i| &self.history[i])
    }

    pub fn first_frame(&self) -> Option<u32> {
        self.history.first().map(|p| p.frame)
    }

    pub fn last_frame(&self) -> Option<u32> {
        self.history.last().map(|p| p.frame)
    }
}

/// What happened in one call to [`Tracker::step`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepOutcome {
    /// `(track id, detection index)`; tentative tracks report id 0.
    pub matches: Vec<(u32, usize)>,
    pub unmatched_detections: Vec<usize>,
    pub born: Vec<u32>,
    pub retired: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct Tracker {
    config: TrackerConfig,
    active: Vec<Track>,
    finished: Vec<Track>,
    next_id: u32,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl Tracker {
    pub fn new(config: TrackerConfig) -> Self {
        let q = config.process_noise_matrix();
        let r = config.measurement_noise_matrix();
        Self { config, active: Vec::new(), finished: Vec::new(), next_id: 1, q, r }
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn active(&self) -> &[Track] {
        &self.active
    }

    /// Seeds the tracker with existing tracks; new ids continue after the largest.
    pub fn with_tracks(config: TrackerConfig, tracks: Vec<Track>) -> Self {
        let mut t = Self::new(config);
        t.next_id = tracks.iter().map(|t| t.id).max().unwrap_or(0) + 1;
        t.active = tracks;
        t
    }

    fn predict_track(&self, state: &TrackState) -> TrackState {
        motion::predict_repaired(state, &self.config.sigma, &self.q).unwrap_or_else(|_| {
            // Fall back to a fresh covariance at the current mean.
            let mut s = self.config.initial_state(&state.bbox());
            s.mean = motion::constant_velocity(&state.mean);
            s.age = state.age + 1;
            s.misses = state.misses;
            s
        })
    }

    /// Advances all tracks by one frame and associates `detections` (all of `frame`).
    pub fn step(&mut self, frame: u32, detections: &[Detection]) -> StepOutcome {
        for i in 0..self.active.len() {
            let predicted = self.predict_track(&self.active[i].state);
            self.active[i].state = predicted;
        }

        let cost: Vec<Vec<f64>> = self
            .active
            .iter()
            .map(|t| {
                let predicted = t.state.bbox();
                detections
                    .iter()
                    .map(|d| {
                        let mismatch = if d.class_id != t.class_id { self.config.class_mismatch_penalty } else { 0.0 };
                        1.0 - iou(&predicted, &d.bbox) + mismatch
                    })
                    .collect()
            })
            .collect();
        let solved = hungarian(&cost);

        let mut outcome = StepOutcome::default();
        let mut det_used = vec![false; detections.len()];
        let mut track_hit = vec![false; self.active.len()];
        for &(ti, di) in &solved.pairs {
            if 1.0 - iou(&self.active[ti].state.bbox(), &detections[di].bbox) > self.config.gate {
                continue;
            }
            det_used[di] = true;
            track_hit[ti] = true;
            let det = &detections[di];
            let track = &mut self.active[ti];
            track.state = correct(&track.state, &det.bbox, &self.r).unwrap_or_else(|_| track.state.clone());
            track.state.misses = 0;
            track.hits += 1;
            track.history.push(TrackPoint { frame, bbox: det.bbox, class_id: det.class_id, source: Some(det.key()) });
            track.class_id = det.class_id;
            if !track.confirmed && track.hits >= self.config.init_frames {
                track.confirmed = true;
                track.id = self.next_id;
                self.next_id += 1;
                outcome.born.push(track.id);
            }
            outcome.matches.push((track.id, di));
        }

        let mut kept = Vec::with_capacity(self.active.len());
        for (track, hit) in std::mem::take(&mut self.active).into_iter().zip(track_hit) {
            let mut track = track;
            if hit {
                kept.push(track);
                continue;
            }
            track.state.misses += 1;
            track.hits = 0;
            if !track.confirmed {
                continue;
            }
            if track.state.misses > self.config.max_misses {
                outcome.retired.push(track.id);
                self.finished.push(track);
            } else {
                kept.push(track);
            }
        }
        self.active = kept;

        for (di, det) in detections.iter().enumerate() {
            if det_used[di] {
                continue;
            }
            outcome.unmatched_detections.push(di);
            let mut track = Track {
                id: 0,
                state: self.config.initial_state(&det.bbox),
                history: vec![TrackPoint { frame, bbox: det.bbox, class_id: det.class_id, source: Some(det.key()) }],
                class_id: det.class_id,
                hits: 1,
                confirmed: false,
            };
            if track.hits >= self.config.init_frames {
                track.confirmed = true;
                track.id = self.next_id;
                self.next_id += 1;
                outcome.born.push(track.id);
            }
            self.active.push(track);
        }
        outcome
    }

    /// All confirmed tracks, active or retired, sorted by id.
    pub fn into_tracks(self) -> Vec<Track> {
        let mut all: Vec<Track> = self.finished.into_iter().chain(self.active).filter(|t| t.confirmed).collect();
        all.sort_by_key(|t| t.id);
        all
    }
}

/// Runs the tracker over every frame `1..=frame_count` of a scenario.
pub fn track_scenario(scenario: &Scenario, config: &TrackerConfig) -> Vec<Track> {
    let mut tracker = Tracker::new(config.clone());
    let last = scenario.frame_count.max(scenario.detections.last().map_or(0, |d| d.frame));
    for frame in 1..=last {
        tracker.step(frame, scenario.at_frame(frame));
    }
    tracker.into_tracks()
}

/// Flattens tracks to MOT rows (`id` = track id, confidence 1, visibility 1).
pub fn tracks_to_detections(tracks: &[Track]) -> Vec<Detection> {
    let mut out = Vec::new();
    for t in tracks {
        for p in &t.history {
            out.push(Detection::new(p.frame, Some(t.id), p.bbox, p.class_id, 2));
        }
    }
    out.sort_by_key(|d| d.key());
    out
}

/// Groups MOT rows by id into tracks. Rows without an id are skipped.
pub fn tracks_from_detections(rows: &[Detection], config: &TrackerConfig) -> Vec<Track> {
    let mut by_id: std::collections::BTreeMap<u32, Vec<TrackPoint>> = Default::default();
    for d in rows {
        if let Some(id) = d.track_id {
            by_id.entry(id).or_default().push(TrackPoint { frame: d.frame, bbox: d.bbox, class_id: d.class_id, source: None });
        }
    }
    by_id
        .into_iter()
        .map(|(id, mut history)| {
            history.sort_by_key(|p| p.frame);
            history.dedup_by_key(|p| p.frame);
            Track::from_history(id, history, config)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{synth_scenario, CrossingEvent, SynthConfig, TargetMotion, PEDESTRIAN};

    fn det(frame: u32, id: u32, bbox: BBox) -> Detection {
        Detection::new(frame, Some(id), bbox, PEDESTRIAN, 4)
    }

    #[test]
    fn single_track_matches_overlapping_detection() {
        let b = BBox::new(100.0, 100.0, 40.0, 80.0);
        let mut tracker = Tracker::new(TrackerConfig::default());
        tracker.step(1, &[det(1, 1, b)]);
        tracker.step(2, &[]);
        assert_eq!(tracker.active()[0].state.misses, 1);
        let out = tracker.step(3, &[det(3, 1, b)]);
        assert_eq!(out.matches, vec![(1, 0)]);
        assert_eq!(tracker.active()[0].state.misses, 0);
        assert_eq!(tracker.active().len(), 1);
    }

    #[test]
    fn empty_frames_increment_misses_then_retire() {
        let mut tracker = Tracker::new(TrackerConfig::default());
        tracker.step(1, &[det(1, 1, BBox::new(0.0, 0.0, 10.0, 10.0)), det(1, 2, BBox::new(50.0, 0.0, 10.0, 10.0))]);
        for f in 2..=6 {
            tracker.step(f, &[]);
            assert!(tracker.active().iter().all(|t| t.state.misses == f - 1));
        }
        let out = tracker.step(7, &[]);
        assert_eq!(out.retired, vec![1, 2]);
        assert!(tracker.active().is_empty());
        assert_eq!(tracker.into_tracks().len(), 2);
    }

    #[test]
    fn class_mismatch_loses_competition_only() {
        let b = BBox::new(0.0, 0.0, 10.0, 10.0);
        // IoU 1/3 for the pedestrian, 1 for the car: the pedestrian still wins.
        let shifted = BBox::new(5.0, 0.0, 10.0, 10.0);
        let mut tracker = Tracker::new(TrackerConfig::default());
        tracker.step(1, &[det(1, 1, b)]);
        let mut car = det(2, 1, b);
        car.class_id = 3;
        let out = tracker.step(2, &[car, det(2, 2, shifted)]);
        assert_eq!(out.matches, vec![(1, 1)]);

        // alone, a relabelled detection continues the track
        let mut tracker = Tracker::new(TrackerConfig::default());
        tracker.step(1, &[det(1, 1, b)]);
        let mut car = det(2, 1, shifted);
        car.class_id = 3;
        assert_eq!(tracker.step(2, &[car]).matches, vec![(1, 0)]);

        // the gate still applies to the overlap
        let mut tracker = Tracker::new(TrackerConfig::default());
        tracker.step(1, &[det(1, 1, b)]);
        let out = tracker.step(2, &[det(2, 1, BBox::new(8.0, 0.0, 10.0, 10.0))]);
        assert!(out.matches.is_empty());
    }

    #[test]
    fn tentative_tracks_need_consecutive_hits() {
        let cfg = TrackerConfig { init_frames: 3, ..Default::default() };
        let b = BBox::new(0.0, 0.0, 10.0, 10.0);
        let mut tracker = Tracker::new(cfg.clone());
        tracker.step(1, &[det(1, 1, b)]);
        tracker.step(2, &[]);
        tracker.step(3, &[det(3, 1, b)]);
        tracker.step(4, &[det(4, 1, b)]);
        let out = tracker.step(5, &[det(5, 1, b)]);
        assert_eq!(out.born, vec![1]);
        let tracks = tracker.into_tracks();
        assert_eq!(tracks.len(), 1);
        assert_eq!(tracks[0].history.len(), 3);
    }

    #[test]
    fn history_frames_strictly_increase() {
        let cfg = SynthConfig::new(
            30,
            vec![TargetMotion { initial: BBox::new(0.0, 0.0, 40.0, 80.0), velocity: [4.0, 1.0], class_id: PEDESTRIAN }],
        );
        let tracks = track_scenario(&synth_scenario(&cfg).unwrap(), &TrackerConfig::default());
        assert_eq!(tracks.len(), 1);
        assert!(tracks[0].history.windows(2).all(|w| w[0].frame < w[1].frame));
        assert_eq!(tracks[0].history.len(), 30);
    }

    #[test]
    fn crossing_targets_keep_identities() {
        let mut cfg = SynthConfig::new(
            50,
            vec![
                TargetMotion { initial: BBox::new(100.0, 200.0, 40.0, 90.0), velocity: [3.0, 0.0], class_id: PEDESTRIAN },
                TargetMotion { initial: BBox::new(0.0, 230.0, 40.0, 90.0), velocity: [-3.0, 0.0], class_id: PEDESTRIAN },
            ],
        );
        cfg.crossing_events.push(CrossingEvent { frame: 25, first: 0, second: 1 });
        let scenario = synth_scenario(&cfg).unwrap();
        let tracks = track_scenario(&scenario, &TrackerConfig::default());
        assert_eq!(tracks.len(), 2);
        for t in &tracks {
            let sources: std::collections::BTreeSet<_> = t.history.iter().map(|p| p.source.unwrap().1).collect();
            assert_eq!(sources.len(), 1, "track {} switched identity", t.id);
            assert_eq!(t.history.len(), 50);
        }
    }

    #[test]
    fn rows_round_trip_through_tracks() {
        let b = BBox::new(0.0, 0.0, 10.0, 10.0);
        let rows = vec![det(1, 4, b), det(2, 4, b.translated(1.0, 0.0)), det(1, 9, b.translated(50.0, 0.0))];
        let tracks = tracks_from_detections(&rows, &TrackerConfig::default());
        assert_eq!(tracks.iter().map(|t| t.id).collect::<Vec<_>>(), vec![4, 9]);
        let mut back = tracks_to_detections(&tracks);
        back.iter_mut().for_each(|d| d.class_scores = rows[0].class_scores.clone());
        let mut sorted = rows.clone();
        sorted.sort_by_key(|d| d.key());
        assert_eq!(back, sorted);
    }
}

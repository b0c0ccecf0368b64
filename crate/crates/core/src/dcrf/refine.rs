//! Sliding-window re-decoding of tracker output.
//!
//! Each track is walked over the frames it already covers. A motion filter
//! runs along the committed decisions; for every window it predicts the
//! track's box at each frame, gathers nearby detections as candidates,
//! decodes the chain and commits the first `stride` frames (all remaining
//! frames for the last window). A chosen candidate replaces the track's box
//! and corrects the filter. "Lost" emits the filter's own estimate, which
//! still takes in the track's detection with a gain that shrinks as the
//! detection strays from the prediction.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::chain::{build_chain, viterbi, Candidate, DcrfError, DcrfParams};
use crate::ingest::{BBox, DetKey, Detection, Scenario};
use crate::ncp::NcpWeight;
use crate::tracker::motion::{predict_repaired, OBS_DIM, STATE_DIM};
use crate::tracker::{center_distance, correct, iou, SigmaParams, Track, TrackPoint, TrackState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineParams {
    pub dcrf: DcrfParams,
    pub window_len: usize,
    pub stride: usize,
    /// Detections whose center lies within this many pixels of the predicted
    /// center become candidates.
    pub gate_radius: f64,
    /// Candidates per slice, the track's own detection included.
    pub max_candidates: usize,
    pub process_noise: f64,
    pub measurement_noise: f64,
    pub initial_velocity_var: f64,
    pub sigma: SigmaParams,
}

impl Default for RefineParams {
    fn default() -> Self {
        Self {
            dcrf: DcrfParams::default(),
            window_len: 10,
            stride: 5,
            gate_radius: 30.0,
            max_candidates: 3,
            process_noise: 1e-4,
            measurement_noise: 1.0,
            initial_velocity_var: 100.0,
            sigma: SigmaParams::default(),
        }
    }
}

impl RefineParams {
    fn validate(&self) -> Result<(), DcrfError> {
        if self.window_len == 0 || self.stride == 0 || self.stride > self.window_len {
            return Err(DcrfError::Params(format!(
                "need 1 <= stride <= window, got stride {} window {}",
                self.stride, self.window_len
            )));
        }
        if self.max_candidates == 0 {
            return Err(DcrfError::Params("max_candidates must be at least 1".into()));
        }
        let finite_nonneg = |x: f64| x.is_finite() && x >= 0.0;
        if !(finite_nonneg(self.gate_radius)
            && finite_nonneg(self.process_noise)
            && self.measurement_noise > 0.0
            && self.measurement_noise.is_finite()
            && finite_nonneg(self.initial_velocity_var))
        {
            return Err(DcrfError::Params("noise terms and gate radius must be finite and non-negative".into()));
        }
        // Surfaces τ and weight problems before any track is touched.
        build_chain(&[vec![]], &self.dcrf).map(|_| ())
    }
}

/// Squared Mahalanobis distance past which a rejected detection no longer
/// corrects the filter.
const RECOVERY_GATE: f64 = 16.0;

/// One label option: the candidate seen by the chain plus what it would emit.
#[derive(Debug, Clone)]
struct Option_ {
    candidate: Candidate,
    bbox: BBox,
    class_id: u32,
    source: Option<DetKey>,
}

struct Filter<'a> {
    params: &'a RefineParams,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl Filter<'_> {
    fn start(&self, bbox: &BBox) -> TrackState {
        TrackState::from_box(bbox, self.params.measurement_noise, self.params.initial_velocity_var)
    }

    fn advance(&self, state: &TrackState, steps: u32) -> TrackState {
        let mut s = state.clone();
        for _ in 0..steps {
            match predict_repaired(&s, &self.params.sigma, &self.q) {
                Ok(next) => s = next,
                Err(_) => break,
            }
        }
        s
    }

    /// Prior at `frame`: the committed state moved forward, or a fresh state
    /// on `fallback` when nothing has been committed yet.
    fn prior(&self, committed: &Option<(TrackState, u32)>, frame: u32, fallback: &BBox) -> TrackState {
        match committed {
            Some((s, f)) => self.advance(s, frame.saturating_sub(*f)),
            None => self.start(fallback),
        }
    }

    fn update(&self, state: &TrackState, bbox: &BBox) -> TrackState {
        correct(state, bbox, &self.r).unwrap_or_else(|_| state.clone())
    }

    /// Correction with the measurement noise scaled up by the squared
    /// Mahalanobis distance of the box center. Boxes beyond `RECOVERY_GATE`
    /// are ignored.
    fn update_downweighted(&self, state: &TrackState, bbox: &BBox) -> TrackState {
        let var = center_variance(state);
        let (c, p) = (bbox.center(), state.bbox().center());
        let r_center = self.params.measurement_noise * 1.25;
        let d2: f64 = (0..2).map(|i| (c[i] - p[i]).powi(2) / (var[i] + r_center)).sum();
        if d2 > RECOVERY_GATE {
            return state.clone();
        }
        let r = &self.r * d2.max(1.0);
        correct(state, bbox, &r).unwrap_or_else(|_| state.clone())
    }
}

/// Center variance of a state along x and y.
fn center_variance(state: &TrackState) -> [f64; 2] {
    let p = &state.covariance;
    [p[(0, 0)] + p[(2, 2)] / 4.0 + p[(0, 2)], p[(1, 1)] + p[(3, 3)] / 4.0 + p[(1, 3)]]
}

/// Finds the detection a track point came from: by recorded source, else by
/// identical box, else by the best IoU of at least 0.5.
fn resolve_source<'d>(point: &TrackPoint, frame_dets: &'d [Detection]) -> Option<&'d Detection> {
    if let Some(key) = point.source {
        return frame_dets.iter().find(|d| d.key() == key);
    }
    if let Some(d) = frame_dets.iter().find(|d| d.bbox == point.bbox) {
        return Some(d);
    }
    let mut best: Option<(&Detection, f64)> = None;
    for d in frame_dets {
        let v = iou(&d.bbox, &point.bbox);
        if v >= 0.5 && best.is_none_or(|(_, b)| v > b) {
            best = Some((d, v));
        }
    }
    best.map(|(d, _)| d)
}

struct Context<'a> {
    detections: &'a Scenario,
    owner: &'a BTreeMap<DetKey, u32>,
    weights: &'a BTreeMap<DetKey, NcpWeight>,
    params: &'a RefineParams,
}

impl Context<'_> {
    fn options(&self, track: &Track, idx: usize, own: Option<&Detection>, prior: &TrackState) -> Vec<Option_> {
        let point = &track.history[idx];
        let class = point.class_id;
        let predicted = prior.bbox();
        let var = center_variance(prior);
        let tau2 = self.params.dcrf.tau * self.params.dcrf.tau;
        let scale = [(tau2 / (tau2 + var[0])).sqrt(), (tau2 / (tau2 + var[1])).sqrt()];
        let offset = |b: &BBox| {
            let (c, p) = (b.center(), predicted.center());
            [(c[0] - p[0]) * scale[0], (c[1] - p[1]) * scale[1]]
        };
        let from_det = |d: &Detection, identity: Option<u32>| Option_ {
            candidate: Candidate {
                identity,
                offset: offset(&d.bbox),
                class_score: d.score_of(class),
                unary_weight: self.weights.get(&d.key()).map_or(1.0, |w| w.unary_weight),
            },
            bbox: d.bbox,
            class_id: d.class_id,
            source: Some(d.key()),
        };

        let mut out = Vec::with_capacity(self.params.max_candidates);
        match own {
            Some(d) => out.push(from_det(d, Some(track.id))),
            None => out.push(Option_ {
                candidate: Candidate { identity: Some(track.id), offset: offset(&point.bbox), class_score: 1.0, unary_weight: 1.0 },
                bbox: point.bbox,
                class_id: class,
                source: point.source,
            }),
        }
        let own_key = own.map(Detection::key);
        let mut others: Vec<(f64, &Detection)> = self
            .detections
            .at_frame(point.frame)
            .iter()
            .filter(|d| Some(d.key()) != own_key)
            .map(|d| (center_distance(&d.bbox, &predicted), d))
            .filter(|(dist, _)| *dist <= self.params.gate_radius)
            .collect();
        others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.key().cmp(&b.1.key())));
        for (_, d) in others.into_iter().take(self.params.max_candidates - 1) {
            out.push(from_det(d, self.owner.get(&d.key()).copied()));
        }
        out
    }
}

/// Re-decodes one track. `own[i]` is the detection behind `history[i]`.
fn refine_with(track: &Track, own: &[Option<&Detection>], ctx: &Context<'_>) -> Result<Track, DcrfError> {
    let params = ctx.params;
    let filter = Filter {
        params,
        q: DMatrix::identity(STATE_DIM, STATE_DIM) * params.process_noise,
        r: DMatrix::identity(OBS_DIM, OBS_DIM) * params.measurement_noise,
    };
    let history = &track.history;
    let n = history.len();
    let mut committed: Option<(TrackState, u32)> = None;
    let mut out: Vec<TrackPoint> = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let end = (start + params.window_len).min(n);
        let mut rolling = committed.clone();
        let mut slices: Vec<Vec<Option_>> = Vec::with_capacity(end - start);
        for idx in start..end {
            let frame = history[idx].frame;
            let prior = filter.prior(&rolling, frame, &history[idx].bbox);
            slices.push(ctx.options(track, idx, own[idx], &prior));
            rolling = Some((prior, frame));
        }
        let window: Vec<Vec<Candidate>> = slices.iter().map(|s| s.iter().map(|o| o.candidate.clone()).collect()).collect();
        let (labels, _) = viterbi(&build_chain(&window, &params.dcrf)?);

        let stop = if end == n { n } else { start + params.stride };
        for idx in start..stop {
            let frame = history[idx].frame;
            let prior = filter.prior(&committed, frame, &history[idx].bbox);
            let (point, posterior) = match slices[idx - start].get(labels[idx - start]) {
                Some(o) => {
                    // The first committed box starts the filter rather than correcting it.
                    let posterior = if committed.is_some() { filter.update(&prior, &o.bbox) } else { filter.start(&o.bbox) };
                    (TrackPoint { frame, bbox: o.bbox, class_id: o.class_id, source: o.source }, posterior)
                }
                None => {
                    let class_id = out.last().map_or(history[idx].class_id, |p| p.class_id);
                    let posterior = match own[idx] {
                        Some(d) => filter.update_downweighted(&prior, &d.bbox),
                        None => prior,
                    };
                    (TrackPoint { frame, bbox: posterior.bbox(), class_id, source: None }, posterior)
                }
            };
            out.push(point);
            committed = Some((posterior, frame));
        }
        start = stop;
    }

    let mut refined = track.clone();
    if let Some((state, _)) = committed {
        refined.state = TrackState { age: track.state.age, misses: track.state.misses, ..state };
    }
    refined.history = out;
    Ok(refined)
}

/// Refines a single track against the detections of its frames. Candidates
/// from other tracks carry no identity.
pub fn refine_track(
    track: &Track,
    detections: &Scenario,
    weights: &BTreeMap<DetKey, NcpWeight>,
    params: &RefineParams,
) -> Result<Track, DcrfError> {
    refine(std::slice::from_ref(track), detections, weights, params).map(|mut v| v.remove(0))
}

/// Refines every track. Output order and ids match the input.
pub fn refine(
    tracks: &[Track],
    detections: &Scenario,
    weights: &BTreeMap<DetKey, NcpWeight>,
    params: &RefineParams,
) -> Result<Vec<Track>, DcrfError> {
    params.validate()?;
    let own: Vec<Vec<Option<&Detection>>> = tracks
        .iter()
        .map(|t| t.history.iter().map(|p| resolve_source(p, detections.at_frame(p.frame))).collect())
        .collect();
    let mut owner = BTreeMap::new();
    for (t, sources) in tracks.iter().zip(&own) {
        for d in sources.iter().flatten() {
            owner.entry(d.key()).or_insert(t.id);
        }
    }
    let ctx = Context { detections, owner: &owner, weights, params };
    tracks.par_iter().zip(own.par_iter()).map(|(t, o)| refine_with(t, o, &ctx)).collect()
}

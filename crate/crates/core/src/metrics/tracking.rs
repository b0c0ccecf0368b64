//! Track-level evaluation against ground truth, and the attacker retrieval probe.
//!
//! Per frame, visible ground-truth objects are matched one-to-one to track
//! points by minimum `1 − IoU`, keeping pairs with IoU at or above
//! `match_iou`. Each ground-truth object is also tied to its dominant track
//! (most matched frames, smallest id on ties), whose box stands in for the
//! object's position on frames where the per-frame match fails.

use std::collections::{BTreeMap, BTreeSet};

use crate::ingest::{frame_slice, Detection, Scenario};
use crate::tracker::{center_distance, giou, hungarian, iou, Track, TrackPoint};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalParams {
    pub match_iou: f64,
    /// Position error and class accuracy only count frames from here on.
    pub from_frame: u32,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self { match_iou: 0.3, from_frame: 1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackingEval {
    /// Matched (ground truth, track point) pairs over all frames.
    pub matches: usize,
    pub id_switches: usize,
    /// Center RMSE in pixels over the positioned objects.
    pub rmse: Option<f64>,
    /// Object-frames that had a position (matched or via the dominant track).
    pub positioned: usize,
    /// Object-frames with no track position at all.
    pub unpositioned: usize,
    /// `(frame, mean GIoU)` over positioned objects.
    pub giou_series: Vec<(u32, f64)>,
    pub classification_accuracy: Option<f64>,
}

impl TrackingEval {
    pub fn mean_giou(&self) -> Option<f64> {
        (!self.giou_series.is_empty()).then(|| self.giou_series.iter().map(|(_, g)| g).sum::<f64>() / self.giou_series.len() as f64)
    }
}

struct FrameMatch<'a> {
    gt: &'a Detection,
    track: u32,
    point: &'a TrackPoint,
}

pub fn evaluate_tracks(ground_truth: &[Detection], tracks: &[Track], params: &EvalParams) -> TrackingEval {
    let mut gt_by_frame: BTreeMap<u32, Vec<&Detection>> = BTreeMap::new();
    for g in ground_truth.iter().filter(|g| g.track_id.is_some() && g.visibility > 0.0) {
        gt_by_frame.entry(g.frame).or_default().push(g);
    }
    let mut points_by_frame: BTreeMap<u32, Vec<(u32, &TrackPoint)>> = BTreeMap::new();
    for t in tracks {
        for p in &t.history {
            points_by_frame.entry(p.frame).or_default().push((t.id, p));
        }
    }
    let by_id: BTreeMap<u32, &Track> = tracks.iter().map(|t| (t.id, t)).collect();

    let mut per_frame: BTreeMap<u32, Vec<FrameMatch<'_>>> = BTreeMap::new();
    for (&frame, gts) in &gt_by_frame {
        let Some(points) = points_by_frame.get(&frame) else { continue };
        let cost: Vec<Vec<f64>> = gts.iter().map(|g| points.iter().map(|(_, p)| 1.0 - iou(&g.bbox, &p.bbox)).collect()).collect();
        let matched = hungarian(&cost)
            .pairs
            .into_iter()
            .filter(|&(gi, pi)| 1.0 - cost[gi][pi] >= params.match_iou)
            .map(|(gi, pi)| FrameMatch { gt: gts[gi], track: points[pi].0, point: points[pi].1 })
            .collect();
        per_frame.insert(frame, matched);
    }

    let mut pair_counts: BTreeMap<(u32, u32), usize> = BTreeMap::new();
    let mut last_gt: BTreeMap<u32, u32> = BTreeMap::new();
    let (mut matches, mut id_switches) = (0, 0);
    for m in per_frame.values().flatten() {
        let gid = m.gt.track_id.unwrap_or_default();
        *pair_counts.entry((gid, m.track)).or_default() += 1;
        matches += 1;
        if let Some(prev) = last_gt.insert(m.track, gid) {
            if prev != gid {
                id_switches += 1;
            }
        }
    }
    let mut dominant: BTreeMap<u32, (u32, usize)> = BTreeMap::new();
    for (&(gid, tid), &n) in &pair_counts {
        let e = dominant.entry(gid).or_insert((tid, n));
        if n > e.1 {
            *e = (tid, n);
        }
    }

    let (mut sq, mut positioned, mut unpositioned) = (0.0, 0, 0);
    let (mut correct_class, mut classified) = (0usize, 0usize);
    let mut giou_series = Vec::new();
    for (&frame, gts) in &gt_by_frame {
        let matched = per_frame.get(&frame).map(Vec::as_slice).unwrap_or(&[]);
        let mut gsum = 0.0;
        let mut gn = 0;
        for g in gts {
            let gid = g.track_id.unwrap_or_default();
            let point = matched.iter().find(|m| std::ptr::eq(m.gt, *g)).map(|m| m.point).or_else(|| {
                dominant.get(&gid).and_then(|(tid, _)| by_id.get(tid)).and_then(|t| t.point_at(frame))
            });
            let Some(p) = point else {
                if frame >= params.from_frame {
                    unpositioned += 1;
                }
                continue;
            };
            gsum += giou(&g.bbox, &p.bbox);
            gn += 1;
            if frame >= params.from_frame {
                sq += center_distance(&g.bbox, &p.bbox).powi(2);
                positioned += 1;
            }
        }
        if gn > 0 {
            giou_series.push((frame, gsum / gn as f64));
        }
        if frame >= params.from_frame {
            for m in matched {
                classified += 1;
                correct_class += usize::from(m.point.class_id == m.gt.class_id);
            }
        }
    }
    TrackingEval {
        matches,
        id_switches,
        rmse: (positioned > 0).then(|| (sq / positioned as f64).sqrt()),
        positioned,
        unpositioned,
        giou_series,
        classification_accuracy: (classified > 0).then(|| correct_class as f64 / classified as f64),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub iou_threshold: f64,
}

impl Default for Probe {
    fn default() -> Self {
        Self { iou_threshold: 0.5 }
    }
}

/// Fraction of visible sensitive objects in `truth` that some same-class
/// released detection in the same frame overlaps with IoU at or above the
/// probe threshold. `released` must be sorted by frame.
pub fn retrieval_rate(truth: &[Detection], released: &[Detection], probe: &Probe, sensitive: &BTreeSet<u32>) -> Option<f64> {
    let targets: Vec<&Detection> = truth.iter().filter(|g| sensitive.contains(&g.class_id) && g.visibility > 0.0).collect();
    if targets.is_empty() {
        return None;
    }
    let hits = targets
        .iter()
        .filter(|g| {
            frame_slice(released, g.frame).iter().any(|d| d.class_id == g.class_id && iou(&d.bbox, &g.bbox) >= probe.iou_threshold)
        })
        .count();
    Some(hits as f64 / targets.len() as f64)
}

/// [`retrieval_rate`] of a sanitized scenario against its own ground truth.
pub fn retrieval_frequency(sanitized: &Scenario, probe: &Probe, sensitive: &BTreeSet<u32>) -> Option<f64> {
    retrieval_rate(sanitized.ground_truth(), &sanitized.detections, probe, sensitive)
}

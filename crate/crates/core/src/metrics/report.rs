//! Named metric values and their CSV form.

use std::collections::BTreeSet;

use super::distribution::{kl_divergence, loss_rate, stat_loss, Histogram, DEFAULT_BINS, DEFAULT_KL_SMOOTHING};
use super::information::{pattern_metrics, PatternCounts};
use super::signal::mse_psnr_rmse;
use super::tracking::{retrieval_rate, Probe};
use super::MetricError;
use crate::ingest::{frame_slice, DetKey, Detection, Scenario};
use crate::tracker::iou;

pub const METRIC_NAMES: [&str; 18] = [
    "ML",
    "LC",
    "Me",
    "MC",
    "CF",
    "AP",
    "LossRate",
    "IL",
    "LM",
    "CM",
    "DM",
    "StatLoss",
    "KL",
    "MSE",
    "PSNR",
    "RMSE",
    "retrieval_frequency",
    "id_switches",
];

#[derive(Debug, Clone, PartialEq)]
pub struct MetricEntry {
    pub name: &'static str,
    pub value: Option<f64>,
    pub params: String,
}

/// Every metric in [`METRIC_NAMES`] order; `None` is undefined.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    entries: Vec<MetricEntry>,
}

impl Default for MetricReport {
    fn default() -> Self {
        Self { entries: METRIC_NAMES.iter().map(|&name| MetricEntry { name, value: None, params: String::new() }).collect() }
    }
}

/// `Display` for defined values, empty for undefined ones.
pub fn format_value(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricReport {
    pub fn new() -> Self {
        Self::default()
    }

    /// Only PSNR may be infinite (zero error).
    pub fn set(&mut self, name: &str, value: Option<f64>, params: impl Into<String>) -> Result<(), MetricError> {
        let e = self
            .entries
            .iter_mut()
            .find(|e| e.name == name)
            .ok_or_else(|| MetricError::InvalidArgument(format!("unknown metric {name}")))?;
        if let Some(v) = value {
            if v.is_nan() || (v.is_infinite() && !(name == "PSNR" && v > 0.0)) {
                return Err(MetricError::InvalidArgument(format!("{name} = {v} is not reportable")));
            }
        }
        e.value = value;
        e.params = params.into();
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries.iter().find(|e| e.name == name).and_then(|e| e.value)
    }

    pub fn entries(&self) -> &[MetricEntry] {
        &self.entries
    }

    /// `metric,value,params` with one row per metric.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value,params\n");
        for e in &self.entries {
            out.push_str(&format!("{},{},{}\n", e.name, format_value(e.value), e.params.replace(',', ";")));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareOptions {
    pub bins: usize,
    pub smoothing: f64,
    /// MAX in the PSNR formula.
    pub max_value: f64,
    pub probe: Probe,
    pub sensitive_classes: BTreeSet<u32>,
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self {
            bins: DEFAULT_BINS,
            smoothing: DEFAULT_KL_SMOOTHING,
            max_value: 1920.0,
            probe: Probe::default(),
            sensitive_classes: [crate::ingest::PEDESTRIAN].into(),
        }
    }
}

fn coords(dets: &[Detection]) -> Vec<f64> {
    dets.iter().flat_map(|d| d.bbox.to_array()).collect()
}

/// Metrics of a sanitized detection release against the original one.
///
/// Distribution metrics use pooled box coordinates on the original's bin
/// layout. Signal metrics pair detections by `(frame, id)`. Pattern metrics
/// treat each sensitive class as a pattern whose support is the number of
/// its objects the retrieval probe still finds. Table-generalization and
/// attribute-tree metrics have no counterpart here and stay undefined.
pub fn compare_detections(original: &Scenario, sanitized: &Scenario, opts: &CompareOptions) -> Result<MetricReport, MetricError> {
    let mut r = MetricReport::new();
    let (a, b) = (coords(&original.detections), coords(&sanitized.detections));
    if !a.is_empty() && !b.is_empty() {
        let ha = Histogram::fit(&a, opts.bins)?;
        let hb = ha.rebin(&b);
        let layout = format!("bins={}", opts.bins);
        r.set("LossRate", Some(loss_rate(&ha, &hb)?), layout.clone())?;
        r.set("StatLoss", Some(stat_loss(&ha, &hb)?), layout.clone())?;
        r.set("KL", Some(kl_divergence(&ha, &hb, opts.smoothing)?), format!("{layout} smoothing={}", opts.smoothing))?;
    }

    let released: std::collections::BTreeMap<DetKey, &Detection> = sanitized.detections.iter().map(|d| (d.key(), d)).collect();
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for d in &original.detections {
        if let Some(s) = released.get(&d.key()) {
            xs.extend(d.bbox.to_array());
            ys.extend(s.bbox.to_array());
        }
    }
    if !xs.is_empty() {
        let q = mse_psnr_rmse(&xs, &ys, opts.max_value)?;
        r.set("MSE", Some(q.mse), "")?;
        r.set("PSNR", Some(q.psnr), format!("max={}", opts.max_value))?;
        r.set("RMSE", Some(q.rmse), "")?;
    }

    let params = format!("iou={}", opts.probe.iou_threshold);
    r.set("retrieval_frequency", retrieval_rate(&original.detections, &sanitized.detections, &opts.probe, &opts.sensitive_classes), params.clone())?;

    let classes: Vec<u32> = opts.sensitive_classes.iter().copied().collect();
    let mut counts = PatternCounts { original: Vec::new(), sanitized: Vec::new(), weights: Vec::new() };
    for &c in &classes {
        let one: BTreeSet<u32> = [c].into();
        let objects = original.detections.iter().filter(|d| d.class_id == c && d.visibility > 0.0).count() as f64;
        let kept = retrieval_rate(&original.detections, &sanitized.detections, &opts.probe, &one).unwrap_or(0.0) * objects;
        counts.original.push(objects);
        counts.sanitized.push(kept.round());
    }
    let candidates: Vec<&Detection> = sanitized.detections.iter().filter(|d| opts.sensitive_classes.contains(&d.class_id)).collect();
    let precisions: Vec<f64> = candidates
        .iter()
        .map(|d| {
            let hit = frame_slice(&original.detections, d.frame)
                .iter()
                .any(|o| o.class_id == d.class_id && iou(&o.bbox, &d.bbox) >= opts.probe.iou_threshold);
            f64::from(u8::from(hit))
        })
        .collect();
    let p = pattern_metrics(&counts, classes.len() as f64, &precisions, candidates.len() as f64)?;
    r.set("Me", p.me, format!("n_sim={}", classes.len()))?;
    r.set("MC", p.mc, params.clone())?;
    r.set("CF", p.cf, params.clone())?;
    r.set("AP", p.ap, params)?;
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{BBox, PEDESTRIAN};

    #[test]
    fn csv_layout() {
        let mut r = MetricReport::new();
        r.set("PSNR", Some(f64::INFINITY), "max=1").unwrap();
        r.set("KL", Some(0.25), "bins=64, smoothing").unwrap();
        assert!(r.set("RMSE", Some(f64::INFINITY), "").is_err());
        assert!(r.set("nope", Some(1.0), "").is_err());
        let csv = r.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 19);
        assert_eq!(lines[0], "metric,value,params");
        assert_eq!(lines[1], "ML,,");
        assert!(lines.contains(&"PSNR,inf,max=1"));
        assert!(lines.contains(&"KL,0.25,bins=64; smoothing"));
    }

    #[test]
    fn identical_release() {
        let dets: Vec<Detection> =
            (1..=3).map(|f| Detection::new(f, Some(1), BBox::new(10.0 * f as f64, 5.0, 40.0, 80.0), PEDESTRIAN, 4)).collect();
        let s = Scenario::new("a", 3, dets);
        let r = compare_detections(&s, &s, &CompareOptions::default()).unwrap();
        for (name, want) in [("LossRate", 0.0), ("StatLoss", 0.0), ("KL", 0.0), ("MSE", 0.0), ("retrieval_frequency", 1.0), ("MC", 0.0), ("AP", 1.0)] {
            assert_eq!(r.get(name), Some(want), "{name}");
        }
        assert_eq!(r.get("PSNR"), Some(f64::INFINITY));
        assert_eq!(r.get("IL"), None);
    }
}

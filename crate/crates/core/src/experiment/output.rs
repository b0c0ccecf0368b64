//! CSV emission. Floats use `Display`, undefined values are empty fields and
//! standard deviations use the population convention.

use std::path::{Path, PathBuf};

use super::{ExperimentError, Method, RunRecord};
use crate::metrics::METRIC_NAMES;

pub const OUTPUT_FILES: [&str; 8] = [
    "records.csv",
    "summary.csv",
    "rmse_vs_eps.csv",
    "psnr_vs_eps.csv",
    "kl_vs_eps.csv",
    "retrieval_vs_eps.csv",
    "attack_report.csv",
    "attack_giou.csv",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stats {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub n: usize,
}

impl Stats {
    /// Mean and population std of the defined values. An infinite value makes
    /// the mean infinite and the std undefined.
    pub fn of(values: impl IntoIterator<Item = Option<f64>>) -> Self {
        let v: Vec<f64> = values.into_iter().flatten().collect();
        let n = v.len();
        if n == 0 {
            return Self { mean: None, std: None, n };
        }
        let mean = v.iter().sum::<f64>() / n as f64;
        if !mean.is_finite() {
            return Self { mean: (!mean.is_nan()).then_some(mean), std: None, n };
        }
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        Self { mean: Some(mean), std: Some(var.sqrt()), n }
    }
}

pub fn format_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn clean_field(s: &str) -> String {
    s.replace([',', '\n', '\r'], ";")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: Method,
    pub epsilon: f64,
    pub metric: String,
    pub stats: Stats,
}

type Column = (String, fn(&RunRecord) -> Option<f64>);

fn scalar_columns() -> Vec<Column> {
    vec![
        ("sigma_eff".into(), |r| Some(r.sigma_eff)),
        ("tracking_rmse".into(), |r| r.tracking_rmse),
        ("tracking_rmse_raw".into(), |r| r.tracking_rmse_raw),
        ("tracking_rmse_refined".into(), |r| r.tracking_rmse_refined),
    ]
}

/// `(method, ε)` groups in first-appearance order.
fn groups(records: &[RunRecord]) -> Vec<(Method, f64, Vec<&RunRecord>)> {
    let mut out: Vec<(Method, f64, Vec<&RunRecord>)> = Vec::new();
    for r in records {
        match out.iter_mut().find(|(m, e, _)| *m == r.method && e.to_bits() == r.epsilon.to_bits()) {
            Some(g) => g.2.push(r),
            None => out.push((r.method, r.epsilon, vec![r])),
        }
    }
    out
}

/// Grouped statistics of every numeric record field.
pub fn summarize(records: &[RunRecord]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for (method, epsilon, group) in groups(records) {
        for (name, get) in scalar_columns() {
            rows.push(SummaryRow { method, epsilon, metric: name, stats: Stats::of(group.iter().map(|r| get(r))) });
        }
        for name in METRIC_NAMES {
            rows.push(SummaryRow { method, epsilon, metric: name.into(), stats: Stats::of(group.iter().map(|r| r.metrics.get(name))) });
        }
        let attacks = group.iter().map(|r| r.attacks.len()).max().unwrap_or(0);
        for i in 0..attacks {
            let kind = group.iter().find_map(|r| r.attacks.get(i)).map_or("attack", |a| a.spec.kind.as_str());
            for variant in ["unrefined", "refined"] {
                let pick = |r: &RunRecord| r.attacks.get(i).map(|a| if variant == "refined" { a.refined.clone() } else { a.unrefined.clone() });
                let reports: Vec<_> = group.iter().map(|r| pick(r)).collect();
                let fields: [(&str, Vec<Option<f64>>); 4] = [
                    ("id_switches", reports.iter().map(|a| a.as_ref().map(|a| a.id_switches as f64)).collect()),
                    ("mean_giou", reports.iter().map(|a| a.as_ref().and_then(|a| a.mean_giou())).collect()),
                    ("post_onset_rmse", reports.iter().map(|a| a.as_ref().and_then(|a| a.post_onset_rmse)).collect()),
                    ("classification_accuracy", reports.iter().map(|a| a.as_ref().and_then(|a| a.classification_accuracy)).collect()),
                ];
                for (field, values) in fields {
                    rows.push(SummaryRow { method, epsilon, metric: format!("attack{i}_{kind}_{variant}_{field}"), stats: Stats::of(values) });
                }
            }
        }
    }
    rows
}

fn lookup<'a>(rows: &'a [SummaryRow], method: Method, epsilon: f64, metric: &str) -> Option<&'a Stats> {
    rows.iter().find(|r| r.method == method && r.epsilon.to_bits() == epsilon.to_bits() && r.metric == metric).map(|r| &r.stats)
}

fn trend_csv(rows: &[SummaryRow], records: &[RunRecord], metrics: &[(&str, &str)]) -> String {
    let mut header = vec!["method".to_string(), "epsilon".to_string()];
    for (_, label) in metrics {
        header.push(format!("{label}_mean"));
        header.push(format!("{label}_std"));
    }
    header.push("n".into());
    let mut out = header.join(",") + "\n";
    for (method, epsilon, group) in groups(records) {
        let mut line = vec![method.as_str().to_string(), epsilon.to_string()];
        for (metric, _) in metrics {
            let s = lookup(rows, method, epsilon, metric);
            line.push(format_opt(s.and_then(|s| s.mean)));
            line.push(format_opt(s.and_then(|s| s.std)));
        }
        line.push(group.len().to_string());
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

fn records_csv(records: &[RunRecord]) -> String {
    let mut header: Vec<String> = ["method", "epsilon", "repeat", "scenario"].iter().map(|s| s.to_string()).collect();
    header.extend(scalar_columns().into_iter().map(|(n, _)| n));
    header.extend(METRIC_NAMES.iter().map(|s| s.to_string()));
    header.push("error".into());
    let mut out = header.join(",") + "\n";
    for r in records {
        let mut line = vec![r.method.as_str().to_string(), r.epsilon.to_string(), r.repeat.to_string(), clean_field(&r.scenario)];
        line.extend(scalar_columns().into_iter().map(|(_, get)| format_opt(get(r))));
        line.extend(METRIC_NAMES.iter().map(|n| format_opt(r.metrics.get(n))));
        line.push(r.error.as_deref().map(clean_field).unwrap_or_default());
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("method,epsilon,metric,mean,std,n\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.method.as_str(),
            r.epsilon,
            r.metric,
            format_opt(r.stats.mean),
            format_opt(r.stats.std),
            r.stats.n
        ));
    }
    out
}

fn attack_csvs(records: &[RunRecord]) -> (String, String) {
    let mut report = String::from(
        "method,epsilon,repeat,scenario,attack,target,onset,variant,id_switches,mean_giou,post_onset_rmse,classification_accuracy\n",
    );
    let mut series = String::from("method,epsilon,repeat,scenario,attack,variant,frame,giou\n");
    for r in records {
        for a in &r.attacks {
            for (variant, rep) in [("unrefined", &a.unrefined), ("refined", &a.refined)] {
                let prefix = format!("{},{},{},{}", r.method.as_str(), r.epsilon, r.repeat, clean_field(&r.scenario));
                report.push_str(&format!(
                    "{prefix},{},{},{},{variant},{},{},{},{}\n",
                    a.spec.kind.as_str(),
                    a.spec.target_id,
                    a.spec.onset_frame,
                    rep.id_switches,
                    format_opt(rep.mean_giou()),
                    format_opt(rep.post_onset_rmse),
                    format_opt(rep.classification_accuracy)
                ));
                for (frame, g) in &rep.giou_series {
                    series.push_str(&format!("{prefix},{},{variant},{frame},{g}\n", a.spec.kind.as_str()));
                }
            }
        }
    }
    (report, series)
}

/// Contents of every output file, in [`OUTPUT_FILES`] order.
pub fn render_outputs(records: &[RunRecord]) -> Vec<(&'static str, String)> {
    let rows = summarize(records);
    let (attack, giou) = attack_csvs(records);
    let texts = [
        records_csv(records),
        summary_csv(&rows),
        trend_csv(&rows, records, &[("tracking_rmse", "rmse"), ("tracking_rmse_raw", "rmse_raw"), ("tracking_rmse_refined", "rmse_refined")]),
        trend_csv(&rows, records, &[("PSNR", "psnr"), ("MSE", "mse")]),
        trend_csv(&rows, records, &[("KL", "kl"), ("StatLoss", "stat_loss"), ("LossRate", "loss_rate")]),
        trend_csv(&rows, records, &[("retrieval_frequency", "retrieval")]),
        attack,
        giou,
    ];
    OUTPUT_FILES.into_iter().zip(texts).collect()
}

pub fn write_outputs(records: &[RunRecord], dir: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
    std::fs::create_dir_all(dir).map_err(|source| ExperimentError::Io { path: dir.to_path_buf(), source })?;
    let mut written = Vec::new();
    for (name, text) in render_outputs(records) {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|source| ExperimentError::Io { path: path.clone(), source })?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::MetricReport;

    fn record(method: Method, eps: f64, rmse: Option<f64>) -> RunRecord {
        RunRecord {
            method,
            epsilon: eps,
            repeat: 0,
            scenario: "s".into(),
            sigma_eff: 1.0,
            metrics: MetricReport::new(),
            tracking_rmse: rmse,
            tracking_rmse_raw: rmse,
            tracking_rmse_refined: None,
            attacks: Vec::new(),
            error: None,
        }
    }

    #[test]
    fn stats_conventions() {
        let one = Stats::of([Some(0.7)]);
        assert_eq!((one.mean, one.std, one.n), (Some(0.7), Some(0.0), 1));
        let two = Stats::of([Some(0.1), Some(0.3)]);
        assert!((two.mean.unwrap() - 0.2).abs() < 1e-15);
        assert!((two.std.unwrap() - 0.1).abs() < 1e-15);
        let gap = Stats::of([None, Some(2.0)]);
        assert_eq!((gap.mean, gap.n), (Some(2.0), 1));
        let inf = Stats::of([Some(f64::INFINITY), Some(3.0)]);
        assert_eq!((inf.mean, inf.std), (Some(f64::INFINITY), None));
        assert_eq!(Stats::of([None]).mean, None);
    }

    #[test]
    fn trend_rows_and_missing_cells() {
        let records = vec![record(Method::NcpGaussian, 1.0, Some(0.25)), record(Method::NcpGaussian, 1.0, Some(0.75)), record(Method::WhiteNoise, 1.0, None)];
        let files = render_outputs(&records);
        let rmse = &files.iter().find(|(n, _)| *n == "rmse_vs_eps.csv").unwrap().1;
        let lines: Vec<&str> = rmse.lines().collect();
        assert_eq!(lines[0], "method,epsilon,rmse_mean,rmse_std,rmse_raw_mean,rmse_raw_std,rmse_refined_mean,rmse_refined_std,n");
        assert!(lines[1].starts_with("ncp_gaussian,1,0.5,0.25,"));
        assert_eq!(lines[2], "white_noise,1,,,,,,,1");
        assert_eq!(files.len(), OUTPUT_FILES.len());
    }

    #[test]
    fn error_text_is_one_field() {
        let mut r = record(Method::None, 0.5, None);
        r.error = Some("bad, very\nbad".into());
        let csv = records_csv(&[r]);
        let line = csv.lines().nth(1).unwrap();
        assert!(line.ends_with(",bad; very;bad"));
        assert_eq!(line.split(',').count(), csv.lines().next().unwrap().split(',').count());
    }
}

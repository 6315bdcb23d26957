//! Point-level confusion metrics, obstacle-level detection counts and density tables.

use std::collections::HashSet;
use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("predicted length {predicted} differs from truth length {truth}")]
    Length { predicted: usize, truth: usize },
    #[error("overlap threshold must lie in (0, 1]")]
    Tau,
    #[error("table needs at least one model and one density")]
    EmptyTable,
    #[error("model '{0}' has a report count different from the density count")]
    Ragged(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionMatrix {
    /// Actual pothole vertices.
    pub fn positives(&self) -> u64 {
        self.tp + self.fn_
    }

    /// Actual road vertices.
    pub fn negatives(&self) -> u64 {
        self.tn + self.fp
    }
}

pub fn confusion(predicted: &[bool], truth: &[bool]) -> Result<ConfusionMatrix, MetricsError> {
    if predicted.len() != truth.len() {
        return Err(MetricsError::Length { predicted: predicted.len(), truth: truth.len() });
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &t) in predicted.iter().zip(truth) {
        match (p, t) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fp += 1,
            (false, false) => cm.tn += 1,
            (false, true) => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

/// Metric values; `None` marks a ratio whose denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    /// Percentage of pothole vertices detected.
    pub rp: Option<f64>,
    /// Percentage of pothole vertices missed.
    pub nr: Option<f64>,
    /// Percentage of road vertices kept as road.
    pub rr: Option<f64>,
    /// Percentage of road vertices flagged as pothole.
    pub np_: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub accuracy: Option<f64>,
    pub f_score: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Harmonic mean 2PR/(P+R); undefined when P + R = 0.
pub fn f_score(precision: f64, recall: f64) -> Option<f64> {
    let s = precision + recall;
    (s > 0.0).then(|| 2.0 * precision * recall / s)
}

pub fn report(cm: &ConfusionMatrix) -> EvalReport {
    let p = cm.positives();
    let r = cm.negatives();
    let precision = ratio(cm.tp, cm.tp + cm.fp);
    let recall = ratio(cm.tp, p);
    let rp = ratio(cm.tp, p).map(|v| 100.0 * v);
    let rr = ratio(cm.tn, r).map(|v| 100.0 * v);
    // complements by subtraction so that RP + NR and RR + NP are exactly 100 in floating point
    EvalReport {
        rp,
        nr: rp.map(|v| 100.0 - v),
        rr,
        np_: rr.map(|v| 100.0 - v),
        precision,
        recall,
        accuracy: ratio(cm.tp + cm.tn, p + r),
        f_score: precision.zip(recall).and_then(|(a, b)| f_score(a, b)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DetectionCounts {
    pub correct: usize,
    pub incorrect: usize,
    pub misdetection: usize,
}

/// Greedy one-to-one matching by decreasing overlap |P ∩ T| / |T|; a pair qualifies when the
/// overlap reaches `tau`. Ties go to the lower truth index, then the lower prediction index.
pub fn detection_counts<P, T>(predicted: &[P], truth: &[T], tau: f64) -> Result<DetectionCounts, MetricsError>
where
    P: AsRef<[usize]>,
    T: AsRef<[usize]>,
{
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(MetricsError::Tau);
    }
    let sets: Vec<HashSet<usize>> = predicted.iter().map(|p| p.as_ref().iter().copied().collect()).collect();
    let mut pairs = Vec::new();
    for (ti, t) in truth.iter().enumerate() {
        let t = t.as_ref();
        if t.is_empty() {
            continue;
        }
        for (pi, s) in sets.iter().enumerate() {
            let overlap = t.iter().filter(|i| s.contains(i)).count() as f64 / t.len() as f64;
            if overlap >= tau {
                pairs.push((overlap, ti, pi));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut t_used = vec![false; truth.len()];
    let mut p_used = vec![false; predicted.len()];
    let mut correct = 0;
    for (_, ti, pi) in pairs {
        if !t_used[ti] && !p_used[pi] {
            t_used[ti] = true;
            p_used[pi] = true;
            correct += 1;
        }
    }
    Ok(DetectionCounts {
        correct,
        incorrect: predicted.len() - correct,
        misdetection: truth.len() - correct,
    })
}

/// Column label for a density ratio: "Original" for 1, "~r" otherwise.
pub fn density_label(ratio: f64) -> String {
    if ratio == 1.0 {
        "Original".to_string()
    } else {
        format!("~{ratio}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub text: String,
    pub csv: String,
}

const TABLE_METRICS: [&str; 4] = ["RP", "NR", "NP", "RR"];

fn metric(r: &EvalReport, name: &str) -> Option<f64> {
    match name {
        "RP" => r.rp,
        "NR" => r.nr,
        "NP" => r.np_,
        _ => r.rr,
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.2}"))
}

/// Mean of the defined values, `None` if none is defined.
fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values.flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// RP/NR/NP/RR per model and density plus an Average row. `models[i].1[d]` is the report of
/// model i at `densities[d]`.
pub fn table_report(models: &[(String, Vec<EvalReport>)], densities: &[f64]) -> Result<Table, MetricsError> {
    if models.is_empty() || densities.is_empty() {
        return Err(MetricsError::EmptyTable);
    }
    if let Some((name, _)) = models.iter().find(|(_, r)| r.len() != densities.len()) {
        return Err(MetricsError::Ragged(name.clone()));
    }
    let mut header = vec!["model".to_string(), "metric".to_string()];
    header.extend(densities.iter().map(|&d| density_label(d)));
    let mut rows: Vec<Vec<String>> = Vec::new();
    for (name, reports) in models {
        for m in TABLE_METRICS {
            let mut row = vec![name.clone(), m.to_string()];
            row.extend(reports.iter().map(|r| cell(metric(r, m))));
            rows.push(row);
        }
    }
    for m in TABLE_METRICS {
        let mut row = vec!["Average".to_string(), m.to_string()];
        for d in 0..densities.len() {
            row.push(cell(mean_defined(models.iter().map(|(_, r)| metric(&r[d], m)))));
        }
        rows.push(row);
    }

    let all: Vec<&Vec<String>> = std::iter::once(&header).chain(rows.iter()).collect();
    let widths: Vec<usize> =
        (0..header.len()).map(|c| all.iter().map(|r| r[c].len()).max().unwrap_or(0)).collect();
    let mut text = String::new();
    let mut csv = String::new();
    for r in all {
        let cells: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(c, v)| if c < 2 { format!("{v:<w$}", w = widths[c]) } else { format!("{v:>w$}", w = widths[c]) })
            .collect();
        let _ = writeln!(text, "{}", cells.join("  ").trim_end());
        let _ = writeln!(csv, "{}", r.join(","));
    }
    Ok(Table { text, csv })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction() {
        let truth: Vec<bool> = (0..100).map(|i| i < 10).collect();
        let cm = confusion(&truth, &truth).unwrap();
        assert_eq!(cm, ConfusionMatrix { tp: 10, fp: 0, tn: 90, fn_: 0 });
        let r = report(&cm);
        assert_eq!(r.rp, Some(100.0));
        assert_eq!(r.rr, Some(100.0));
        for v in [r.precision, r.recall, r.accuracy, r.f_score] {
            assert_eq!(v, Some(1.0));
        }
    }

    #[test]
    fn all_road_prediction() {
        let truth: Vec<bool> = (0..100).map(|i| i < 10).collect();
        let cm = confusion(&[false; 100], &truth).unwrap();
        assert_eq!((cm.fn_, cm.tn), (10, 90));
        let r = report(&cm);
        assert_eq!(r.precision, None);
        assert_eq!(r.f_score, None);
        assert_eq!(r.rp, Some(0.0));
        assert!(confusion(&[true], &[true, false]).is_err());
    }

    #[test]
    fn worked_example() {
        let r = report(&ConfusionMatrix { tp: 8, fp: 2, fn_: 2, tn: 88 });
        assert!((r.precision.unwrap() - 0.8).abs() < 1e-15);
        assert!((r.recall.unwrap() - 0.8).abs() < 1e-15);
        assert!((r.accuracy.unwrap() - 0.96).abs() < 1e-15);
        assert!((r.f_score.unwrap() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn empty_positive_set_is_flagged() {
        let r = report(&ConfusionMatrix { tp: 0, fp: 1, fn_: 0, tn: 9 });
        assert_eq!((r.rp, r.nr, r.recall), (None, None, None));
        assert_eq!(r.np_, Some(10.0));
    }

    #[test]
    fn detection_matching() {
        let truth = vec![vec![0, 1, 2, 3], vec![10, 11], vec![20, 21, 22]];
        assert_eq!(
            detection_counts(&truth, &truth, 0.5).unwrap(),
            DetectionCounts { correct: 3, incorrect: 0, misdetection: 0 }
        );
        let none: Vec<Vec<usize>> = Vec::new();
        assert_eq!(
            detection_counts(&none, &truth, 0.5).unwrap(),
            DetectionCounts { correct: 0, incorrect: 0, misdetection: 3 }
        );
        // one prediction covering two truths can only match one of them
        let merged = vec![vec![0, 1, 2, 3, 10, 11], vec![50]];
        assert_eq!(
            detection_counts(&merged, &truth, 0.5).unwrap(),
            DetectionCounts { correct: 1, incorrect: 1, misdetection: 2 }
        );
        assert_eq!(detection_counts(&truth, &truth, 0.0), Err(MetricsError::Tau));
    }

    #[test]
    fn table_single_cell_and_average() {
        let r = report(&ConfusionMatrix { tp: 8, fp: 2, fn_: 2, tn: 88 });
        let t = table_report(&[("m".into(), vec![r])], &[1.0]).unwrap();
        let lines: Vec<&str> = t.csv.lines().collect();
        assert_eq!(lines[0], "model,metric,Original");
        assert_eq!(lines[1], "m,RP,80.00");
        assert_eq!(lines[5], "Average,RP,80.00");
        assert_eq!(lines.len(), 9);
    }

    #[test]
    fn table_average_and_columns() {
        let mk = |rp: f64| EvalReport {
            rp: Some(rp),
            nr: Some(100.0 - rp),
            rr: Some(99.0),
            np_: Some(1.0),
            precision: None,
            recall: None,
            accuracy: None,
            f_score: None,
        };
        let models = vec![("a".to_string(), vec![mk(100.0); 4]), ("b".to_string(), vec![mk(99.38); 4])];
        let t = table_report(&models, &[1.0, 0.5, 0.1, 0.05]).unwrap();
        assert!(t.csv.starts_with("model,metric,Original,~0.5,~0.1,~0.05\n"));
        assert!(t.csv.contains("Average,RP,99.69,99.69,99.69,99.69\n"));
        assert!(table_report(&[], &[1.0]).is_err());
    }
}

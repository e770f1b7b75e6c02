//! AUC-ROC, average precision, F1 at the top-α cutoff, and cross-dataset aggregation.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ttcl::{predict_labels, RoundDiagnostics};

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::config(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::numeric("non-finite score"));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::config("labels must be 0 or 1"));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    Ok((pos, labels.len() - pos))
}

/// Mann–Whitney statistic: share of (negative, positive) pairs ranked correctly, ties 0.5.
pub fn auc_roc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = check_inputs(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("AUC-ROC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // midranks, 1-based
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] == 1 {
                rank_sum_pos += mid;
            }
        }
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// Average precision: mean of precision at each positive's rank, descending score,
/// ties broken by original index.
pub fn auc_pr(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, _) = check_inputs(scores, labels)?;
    if pos == 0 {
        return Err(Error::UndefinedMetric(
            "AUC-PR needs at least one positive".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] == 1 {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(total / pos as f64)
}

/// F1 of the top-`ceil(α·N)` flags against the labels; 0 when precision + recall is 0.
pub fn f1_at_alpha(scores: &[f64], labels: &[u8], alpha: f64) -> Result<f64> {
    let (pos, _) = check_inputs(scores, labels)?;
    if pos == 0 {
        return Err(Error::UndefinedMetric(
            "F1 needs at least one positive".into(),
        ));
    }
    let pred = predict_labels(scores, alpha)?;
    let tp = pred
        .iter()
        .zip(labels)
        .filter(|&(&p, &l)| p == 1 && l == 1)
        .count() as f64;
    let flagged = pred.iter().filter(|&&p| p == 1).count() as f64;
    if tp == 0.0 {
        return Ok(0.0);
    }
    let precision = tp / flagged;
    let recall = tp / pos as f64;
    Ok(2.0 * precision * recall / (precision + recall))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub dataset: String,
    pub auc_roc: f64,
    pub auc_pr: f64,
    pub f1: f64,
    pub alpha: f64,
    pub n: usize,
    pub positives: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rounds: Vec<RoundDiagnostics>,
}

impl MetricsReport {
    /// Computes all three metrics. `alpha` defaults to the true anomaly fraction.
    pub fn compute(
        method: impl Into<String>,
        dataset: impl Into<String>,
        scores: &[f64],
        labels: &[u8],
        alpha: Option<f64>,
    ) -> Result<Self> {
        let (pos, _) = check_inputs(scores, labels)?;
        let alpha = alpha.unwrap_or(pos as f64 / labels.len().max(1) as f64);
        Ok(Self {
            method: method.into(),
            dataset: dataset.into(),
            auc_roc: auc_roc(scores, labels)?,
            auc_pr: auc_pr(scores, labels)?,
            f1: f1_at_alpha(scores, labels, alpha)?,
            alpha,
            n: labels.len(),
            positives: pos,
            rounds: Vec::new(),
        })
    }

    pub fn metric(&self, m: Metric) -> f64 {
        match m {
            Metric::AucRoc => self.auc_roc,
            Metric::AucPr => self.auc_pr,
            Metric::F1 => self.f1,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    AucRoc,
    AucPr,
    F1,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::AucRoc, Metric::AucPr, Metric::F1];

    pub fn name(self) -> &'static str {
        match self {
            Metric::AucRoc => "auc_roc",
            Metric::AucPr => "auc_pr",
            Metric::F1 => "f1",
        }
    }
}

/// Ranks with 1 = highest value; tied values share their mean rank.
pub fn mean_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = mid;
        }
        i = j + 1;
    }
    ranks
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub mean: BTreeMap<Metric, f64>,
    pub mean_rank: BTreeMap<Metric, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub datasets: Vec<String>,
    /// Per method, in first-seen order.
    pub methods: Vec<MethodSummary>,
    /// `ranks[metric][dataset][method index]`.
    pub ranks: BTreeMap<Metric, BTreeMap<String, Vec<f64>>>,
}

/// Averages each metric per method over datasets and ranks methods within each dataset.
/// Duplicate (method, dataset) reports are averaged first.
pub fn aggregate(reports: &[MetricsReport]) -> Result<Aggregate> {
    if reports.is_empty() {
        return Err(Error::config("nothing to aggregate"));
    }
    let mut methods: Vec<String> = Vec::new();
    let mut cells: BTreeMap<(usize, String), Vec<&MetricsReport>> = BTreeMap::new();
    for r in reports {
        let mi = match methods.iter().position(|m| *m == r.method) {
            Some(i) => i,
            None => {
                methods.push(r.method.clone());
                methods.len() - 1
            }
        };
        cells.entry((mi, r.dataset.clone())).or_default().push(r);
    }
    let datasets_of = |mi: usize| -> BTreeSet<&String> {
        cells
            .keys()
            .filter(|(m, _)| *m == mi)
            .map(|(_, d)| d)
            .collect()
    };
    let datasets: Vec<String> = datasets_of(0).into_iter().cloned().collect();
    for (mi, m) in methods.iter().enumerate().skip(1) {
        let ds: Vec<String> = datasets_of(mi).into_iter().cloned().collect();
        if ds != datasets {
            return Err(Error::config(format!(
                "method {m} covers datasets {ds:?}, expected {datasets:?}"
            )));
        }
    }
    let cell = |mi: usize, d: &String, m: Metric| -> f64 {
        let rs = &cells[&(mi, d.clone())];
        rs.iter().map(|r| r.metric(m)).sum::<f64>() / rs.len() as f64
    };
    let mut ranks: BTreeMap<Metric, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    for m in Metric::ALL {
        let per = ranks.entry(m).or_default();
        for d in &datasets {
            let vals: Vec<f64> = (0..methods.len()).map(|mi| cell(mi, d, m)).collect();
            per.insert(d.clone(), mean_ranks(&vals));
        }
    }
    let nd = datasets.len() as f64;
    let summaries = methods
        .iter()
        .enumerate()
        .map(|(mi, name)| {
            let mut mean = BTreeMap::new();
            let mut mean_rank = BTreeMap::new();
            for m in Metric::ALL {
                mean.insert(m, datasets.iter().map(|d| cell(mi, d, m)).sum::<f64>() / nd);
                mean_rank.insert(m, ranks[&m].values().map(|r| r[mi]).sum::<f64>() / nd);
            }
            MethodSummary {
                method: name.clone(),
                mean,
                mean_rank,
            }
        })
        .collect();
    Ok(Aggregate {
        datasets,
        methods: summaries,
        ranks,
    })
}

/// Flat `method,dataset,metric,value` table, one row per report and metric.
pub fn reports_to_csv(reports: &[MetricsReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "dataset", "metric", "value"])?;
    for r in reports {
        for m in Metric::ALL {
            w.write_record([
                r.method.as_str(),
                r.dataset.as_str(),
                m.name(),
                &r.metric(m).to_string(),
            ])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::internal(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::internal(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_roc_examples() {
        assert_eq!(
            auc_roc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(),
            0.75
        );
        assert_eq!(auc_roc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(auc_roc(&[0.3; 5], &[0, 1, 0, 1, 0]).unwrap(), 0.5);
        assert!(matches!(
            auc_roc(&[0.1, 0.2], &[1, 1]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn auc_pr_examples() {
        assert!((auc_pr(&[0.9, 0.8, 0.7, 0.6], &[1, 0, 1, 0]).unwrap() - 5.0 / 6.0).abs() < 1e-12);
        assert_eq!(auc_pr(&[0.9, 0.1, 0.2], &[1, 0, 0]).unwrap(), 1.0);
        assert_eq!(auc_pr(&[0.3, 0.1, 0.2], &[1, 1, 1]).unwrap(), 1.0);
        assert!(auc_pr(&[0.1, 0.2], &[0, 0]).is_err());
    }

    #[test]
    fn f1_examples() {
        assert_eq!(
            f1_at_alpha(&[0.9, 0.1, 0.8, 0.2], &[1, 0, 1, 0], 0.5).unwrap(),
            1.0
        );
        assert_eq!(
            f1_at_alpha(&[0.9, 0.8, 0.1, 0.2], &[1, 0, 0, 1], 0.5).unwrap(),
            0.5
        );
        assert_eq!(
            f1_at_alpha(&[0.1, 0.2, 0.9, 0.8], &[1, 1, 0, 0], 0.5).unwrap(),
            0.0
        );
        assert!(f1_at_alpha(&[0.1, 0.2], &[1, 0], 1.5).is_err());
    }

    #[test]
    fn rank_examples() {
        assert_eq!(mean_ranks(&[0.4]), vec![1.0]);
        assert_eq!(mean_ranks(&[0.5, 0.5]), vec![1.5, 1.5]);
        assert_eq!(mean_ranks(&[0.9, 0.8, 0.7]), vec![1.0, 2.0, 3.0]);
    }

    fn report(method: &str, dataset: &str, v: f64) -> MetricsReport {
        MetricsReport {
            method: method.into(),
            dataset: dataset.into(),
            auc_roc: v,
            auc_pr: v,
            f1: v,
            alpha: 0.1,
            n: 10,
            positives: 1,
            rounds: Vec::new(),
        }
    }

    #[test]
    fn aggregate_means_and_ranks() {
        let rs = vec![
            report("a", "x", 0.9),
            report("b", "x", 0.8),
            report("a", "y", 0.5),
            report("b", "y", 0.7),
        ];
        let agg = aggregate(&rs).unwrap();
        assert_eq!(agg.datasets, vec!["x", "y"]);
        assert!((agg.methods[0].mean[&Metric::AucRoc] - 0.7).abs() < 1e-12);
        assert_eq!(agg.methods[0].mean_rank[&Metric::F1], 1.5);
        assert_eq!(agg.ranks[&Metric::AucPr]["y"], vec![2.0, 1.0]);
    }

    #[test]
    fn aggregate_rejects_mismatched_datasets() {
        let rs = vec![report("a", "x", 0.9), report("b", "y", 0.8)];
        assert!(aggregate(&rs).is_err());
    }

    #[test]
    fn csv_table() {
        let csv = reports_to_csv(&[report("a", "x", 0.25)]).unwrap();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.contains("a,x,auc_roc,0.25"));
    }
}

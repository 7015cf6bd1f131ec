use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::metrics::{threshold_key, EvaluationReport};

/// Mean and median of one metric over the prompts of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: String,
    pub method: String,
    pub mean: f64,
    pub median: f64,
    /// Median minus the first method's median.
    pub delta_median: f64,
    /// Prompts on which this method is strictly best.
    pub wins: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub methods: Vec<String>,
    pub prompts: Vec<String>,
    pub rows: Vec<MetricSummary>,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Metric names and per-report extractors. NCircles columns follow the
/// thresholds of the first report.
pub fn metric_columns(reports: &[EvaluationReport]) -> Vec<(String, Box<dyn Fn(&EvaluationReport) -> f64>)> {
    let mut cols: Vec<(String, Box<dyn Fn(&EvaluationReport) -> f64>)> = vec![
        ("validity".into(), Box::new(|r: &EvaluationReport| r.validity())),
        ("distinct_canonical".into(), Box::new(|r: &EvaluationReport| r.distinct_canonical as f64)),
        ("accepted_unique".into(), Box::new(|r: &EvaluationReport| r.accepted_unique as f64)),
    ];
    for h in reports.first().map(|r| r.thresholds()).unwrap_or_default() {
        let key = threshold_key(h);
        cols.push((
            format!("ncircles_{key}"),
            Box::new(move |r: &EvaluationReport| r.ncircles.get(&key).copied().unwrap_or(0) as f64),
        ));
    }
    cols.push(("intdiv".into(), Box::new(|r: &EvaluationReport| r.intdiv)));
    cols.push(("top10".into(), Box::new(|r: &EvaluationReport| r.top10)));
    cols
}

/// Per-metric mean, median and win counts of several methods evaluated on
/// the same prompts, in the same order.
pub fn compare_report(methods: &[(String, Vec<EvaluationReport>)]) -> Result<Comparison, HarnessError> {
    if methods.len() < 2 {
        return Err(HarnessError::ConfigInvalid("comparison needs at least two reports".into()));
    }
    let prompts: Vec<String> = methods[0].1.iter().map(|r| r.prompt.clone()).collect();
    for (name, reports) in &methods[1..] {
        let other: Vec<&str> = reports.iter().map(|r| r.prompt.as_str()).collect();
        if other != prompts.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(HarnessError::PromptSetMismatch(format!(
                "{name} covers different prompts than {}",
                methods[0].0
            )));
        }
    }
    let mut rows = Vec::new();
    for (metric, get) in metric_columns(&methods[0].1) {
        let values: Vec<Vec<f64>> = methods.iter().map(|(_, rs)| rs.iter().map(&get).collect()).collect();
        let mut wins = vec![0; methods.len()];
        for p in 0..prompts.len() {
            let best = values.iter().map(|v| v[p]).fold(f64::NEG_INFINITY, f64::max);
            let at_best: Vec<usize> = (0..methods.len()).filter(|&m| values[m][p] == best).collect();
            if at_best.len() == 1 {
                wins[at_best[0]] += 1;
            }
        }
        let base = median(&values[0]);
        for (m, (name, _)) in methods.iter().enumerate() {
            let med = median(&values[m]);
            rows.push(MetricSummary {
                metric: metric.clone(),
                method: name.clone(),
                mean: mean(&values[m]),
                median: med,
                delta_median: med - base,
                wins: wins[m],
            });
        }
    }
    Ok(Comparison {
        methods: methods.iter().map(|(n, _)| n.clone()).collect(),
        prompts,
        rows,
    })
}

impl Comparison {
    pub fn row(&self, metric: &str, method: &str) -> Option<&MetricSummary> {
        self.rows.iter().find(|r| r.metric == metric && r.method == method)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,method,mean,median,delta_median,wins\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{:.6},{:.6},{:.6},{}",
                r.metric, r.method, r.mean, r.median, r.delta_median, r.wins
            )
            .expect("string write");
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("comparison serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn report(prompt: &str, acc: usize, intdiv: f64) -> EvaluationReport {
        EvaluationReport {
            prompt: prompt.into(),
            generated: 10,
            valid: 8,
            distinct_raw: 8,
            distinct_canonical: 7,
            accepted_unique: acc,
            ncircles: BTreeMap::from([("0.65".to_string(), acc / 2)]),
            intdiv,
            top10: 0.0,
            molecules: vec![],
        }
    }

    #[test]
    fn self_comparison_has_no_differences() {
        let rs = vec![report("A", 3, 0.5), report("B", 5, 0.7)];
        let c = compare_report(&[("x".into(), rs.clone()), ("y".into(), rs)]).unwrap();
        assert!(c.rows.iter().all(|r| r.delta_median == 0.0 && r.wins == 0));
        assert_eq!(c.row("intdiv", "x").unwrap().median, 0.6);
    }

    #[test]
    fn disjoint_prompts_mismatch() {
        let a = vec![report("A", 3, 0.5)];
        let b = vec![report("B", 3, 0.5)];
        assert!(matches!(
            compare_report(&[("a".into(), a), ("b".into(), b)]),
            Err(HarnessError::PromptSetMismatch(_))
        ));
    }

    #[test]
    fn wins_and_deltas() {
        let a = vec![report("A", 3, 0.5), report("B", 5, 0.7), report("C", 1, 0.2)];
        let b = vec![report("A", 4, 0.5), report("B", 5, 0.9), report("C", 0, 0.4)];
        let c = compare_report(&[("sft".into(), a), ("rl".into(), b)]).unwrap();
        let rl = c.row("intdiv", "rl").unwrap();
        assert_eq!(rl.wins, 2);
        assert!((rl.delta_median - 0.0).abs() < 1e-12);
        assert_eq!(c.row("accepted_unique", "sft").unwrap().wins, 1);
        assert_eq!(c.row("accepted_unique", "rl").unwrap().wins, 1);
        assert!(c.to_csv().starts_with("metric,method,mean,median,delta_median,wins\nvalidity,sft,"));
        assert!(c.row("ncircles_0.65", "rl").is_some());
    }

    #[test]
    fn single_report_is_rejected() {
        assert!(compare_report(&[("a".into(), vec![report("A", 1, 0.1)])]).is_err());
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&[]), 0.0);
    }
}

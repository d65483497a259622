//! Aggregated results, `results.csv` and the markdown summary table.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::bench::split::{openness, Protocol};
use crate::error::{invalid, OdpcError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatSummary {
    pub repeat: usize,
    pub seed: u64,
    pub auroc: f64,
    /// AUROC of the same split scored on untrained, stacked encoder features.
    pub baseline_auroc: f64,
    pub threshold: Option<f64>,
    pub holdout_accept_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub protocol: Protocol,
    pub openness: f64,
    pub repeats: Vec<RepeatSummary>,
    pub mean: f64,
    /// Population standard deviation over repeats.
    pub std: f64,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl EvalResult {
    pub fn from_repeats(
        protocol: Protocol,
        n_train_classes: usize,
        n_total_test_classes: usize,
        repeats: Vec<RepeatSummary>,
    ) -> Result<Self> {
        if repeats.is_empty() {
            return Err(invalid("no repeats to aggregate"));
        }
        if let Some(r) = repeats.iter().find(|r| !(0.0..=1.0).contains(&r.auroc)) {
            return Err(invalid(format!("repeat {} has AUROC {}", r.repeat, r.auroc)));
        }
        let values: Vec<f64> = repeats.iter().map(|r| r.auroc).collect();
        let (mean, std) = mean_std(&values);
        Ok(Self { protocol, openness: openness(n_train_classes, n_total_test_classes)?, repeats, mean, std })
    }

    pub fn aurocs(&self) -> Vec<f64> {
        self.repeats.iter().map(|r| r.auroc).collect()
    }

    pub fn baseline_aurocs(&self) -> Vec<f64> {
        self.repeats.iter().map(|r| r.baseline_auroc).collect()
    }
}

pub const RESULTS_HEADER: &str = "protocol,repeat,seed,auroc,openness";

pub fn results_csv(results: &[EvalResult]) -> String {
    let mut out = format!("{RESULTS_HEADER}\n");
    for res in results {
        for r in &res.repeats {
            let _ = writeln!(out, "{},{},{},{},{}", res.protocol, r.repeat, r.seed, r.auroc, res.openness);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub protocol: Protocol,
    pub repeat: usize,
    pub seed: u64,
    pub auroc: f64,
    pub openness: f64,
}

pub fn parse_results_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(RESULTS_HEADER) {
        return Err(OdpcError::Format(format!("results file must start with {RESULTS_HEADER:?}")));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let bad = |what: &str| OdpcError::Format(format!("results line {}: bad {what}", i + 2));
            let f: Vec<&str> = line.trim().split(',').collect();
            if f.len() != 5 {
                return Err(bad("field count"));
            }
            Ok(ResultRow {
                protocol: f[0].parse().map_err(|_| bad("protocol"))?,
                repeat: f[1].parse().map_err(|_| bad("repeat"))?,
                seed: f[2].parse().map_err(|_| bad("seed"))?,
                auroc: f[3].parse().map_err(|_| bad("auroc"))?,
                openness: f[4].parse().map_err(|_| bad("openness"))?,
            })
        })
        .collect()
}

/// One row per protocol: openness and AUROC as percentage mean±std.
pub fn table_markdown(rows: &[ResultRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(invalid("no result rows"));
    }
    let mut groups: BTreeMap<usize, (Protocol, f64, Vec<f64>)> = BTreeMap::new();
    for r in rows {
        let key = Protocol::ALL.iter().position(|p| *p == r.protocol).expect("known protocol");
        groups.entry(key).or_insert_with(|| (r.protocol, r.openness, Vec::new())).2.push(r.auroc);
    }
    let mut out = String::from("| Protocol | Openness | Repeats | AUROC |\n|---|---|---|---|\n");
    for (protocol, openness, values) in groups.values() {
        let (mean, std) = mean_std(values);
        let _ = writeln!(
            out,
            "| {protocol} | {openness:.2}% | {} | {:.1}±{:.1} |",
            values.len(),
            100.0 * mean,
            100.0 * std
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(repeat: usize, auroc: f64) -> RepeatSummary {
        RepeatSummary {
            repeat,
            seed: 7 + repeat as u64,
            auroc,
            baseline_auroc: 0.5,
            threshold: None,
            holdout_accept_rate: None,
        }
    }

    #[test]
    fn single_repeat_has_zero_std() {
        let r = EvalResult::from_repeats(Protocol::Synthetic, 6, 10, vec![summary(0, 0.8)]).unwrap();
        assert_eq!((r.mean, r.std), (0.8, 0.0));
    }

    #[test]
    fn five_repeats_aggregate() {
        let reps = (0..5).map(|i| summary(i, 0.8 + 0.01 * i as f64)).collect();
        let r = EvalResult::from_repeats(Protocol::Cifar10_6v4, 6, 10, reps).unwrap();
        assert_eq!(r.aurocs().len(), 5);
        assert!((r.mean - 0.82).abs() < 1e-12);
        assert!((r.std - 0.0002f64.sqrt()).abs() < 1e-12);
        assert!((r.openness - 13.397).abs() < 1e-3);
    }

    #[test]
    fn empty_or_out_of_range_rejected() {
        assert!(EvalResult::from_repeats(Protocol::Synthetic, 6, 10, vec![]).is_err());
        assert!(EvalResult::from_repeats(Protocol::Synthetic, 6, 10, vec![summary(0, 1.5)]).is_err());
    }

    #[test]
    fn csv_roundtrip_and_table() {
        let reps = vec![summary(0, 0.9), summary(1, 0.8)];
        let r = EvalResult::from_repeats(Protocol::Synthetic, 6, 10, reps).unwrap();
        let csv = results_csv(&[r]);
        assert!(csv.starts_with("protocol,repeat,seed,auroc,openness\nsynthetic,0,7,0.9,"));
        let rows = parse_results_csv(&csv).unwrap();
        assert_eq!(rows.len(), 2);
        let table = table_markdown(&rows).unwrap();
        assert!(table.contains("| synthetic | 13.40% | 2 | 85.0±5.0 |"), "{table}");
        assert!(parse_results_csv("x\n").is_err());
    }
}

//! MLM accuracy, sentence-pair accuracy, MLM loss and perplexity, and the
//! side-by-side comparison of training regimes.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{score_batch, BatchScores, MaskedBatch, ModelConfig, ModelParams, Objective, Scalar};

/// Gold-token log-probabilities are floored here so that a token whose
/// probability underflows to zero cannot make the perplexity infinite.
pub const LOG_PROB_FLOOR: f64 = -50.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub step: u64,
    pub mlm_accuracy: f64,
    pub pair_accuracy: Option<f64>,
    pub mlm_loss_nats: f64,
    /// `exp(mlm_loss_nats)`.
    pub perplexity: f64,
    /// The same loss in bits, for comparison with base-2 figures.
    pub mlm_loss_bits: f64,
    pub masked_token_count: usize,
    pub pair_count: usize,
    /// Gold tokens whose log-probability had to be floored.
    pub clamped_count: usize,
}

fn score_all<T: Scalar>(
    params: &ModelParams<T>,
    config: &ModelConfig,
    batches: &[MaskedBatch],
) -> Result<BatchScores> {
    let mut all = BatchScores::default();
    for batch in batches {
        let s = score_batch(params, config, batch)?;
        all.masked.extend(s.masked);
        all.pairs.extend(s.pairs);
    }
    Ok(all)
}

struct MlmSummary {
    accuracy: f64,
    loss: f64,
    count: usize,
    clamped: usize,
}

fn summarize_mlm(scores: &BatchScores) -> Result<MlmSummary> {
    let n = scores.masked.len();
    if n == 0 {
        return Err(Error::EmptyEvaluationSet);
    }
    let correct = scores.masked.iter().filter(|m| m.predicted == m.gold).count();
    let mut clamped = 0;
    let nll: f64 = scores
        .masked
        .iter()
        .map(|m| {
            if m.gold_log_prob < LOG_PROB_FLOOR || m.gold_log_prob.is_nan() {
                clamped += 1;
                -LOG_PROB_FLOOR
            } else {
                -m.gold_log_prob
            }
        })
        .sum();
    Ok(MlmSummary {
        accuracy: correct as f64 / n as f64,
        loss: (nll / n as f64).max(0.0),
        count: n,
        clamped,
    })
}

fn summarize_pairs(scores: &BatchScores) -> Result<f64> {
    if scores.pairs.is_empty() {
        return Err(Error::NoEvaluationPairs);
    }
    let correct = scores.pairs.iter().filter(|p| p.predicted == p.gold).count();
    Ok(correct as f64 / scores.pairs.len() as f64)
}

/// Fraction of masked positions whose arg-max prediction is the gold token.
pub fn mlm_accuracy<T: Scalar>(
    params: &ModelParams<T>,
    config: &ModelConfig,
    batches: &[MaskedBatch],
) -> Result<f64> {
    Ok(summarize_mlm(&score_all(params, config, batches)?)?.accuracy)
}

/// Fraction of pairs whose arg-max pair logit is the gold label.
pub fn pair_accuracy<T: Scalar>(
    params: &ModelParams<T>,
    config: &ModelConfig,
    batches: &[MaskedBatch],
    objective: Objective,
) -> Result<f64> {
    if !objective.has_pair_task() {
        return Err(Error::MissingPairLabels(objective.name()));
    }
    summarize_pairs(&score_all(params, config, batches)?)
}

/// `exp` of the mean negative log-likelihood of the gold tokens over all
/// masked positions.
pub fn perplexity<T: Scalar>(
    params: &ModelParams<T>,
    config: &ModelConfig,
    batches: &[MaskedBatch],
) -> Result<f64> {
    Ok(summarize_mlm(&score_all(params, config, batches)?)?.loss.exp())
}

/// All metrics in one pass. `pair_batches` may be empty when the objective
/// has no pair task.
pub fn evaluate<T: Scalar>(
    params: &ModelParams<T>,
    config: &ModelConfig,
    mlm_batches: &[MaskedBatch],
    pair_batches: &[MaskedBatch],
    objective: Objective,
    step: u64,
) -> Result<EvalReport> {
    let mlm = summarize_mlm(&score_all(params, config, mlm_batches)?)?;
    let (pair_accuracy, pair_count) = if objective.has_pair_task() {
        let scores = score_all(params, config, pair_batches)?;
        (Some(summarize_pairs(&scores)?), scores.pairs.len())
    } else {
        (None, 0)
    };
    Ok(EvalReport {
        step,
        mlm_accuracy: mlm.accuracy,
        pair_accuracy,
        mlm_loss_nats: mlm.loss,
        perplexity: mlm.loss.exp(),
        mlm_loss_bits: mlm.loss / std::f64::consts::LN_2,
        masked_token_count: mlm.count,
        pair_count,
        clamped_count: mlm.clamped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub higher_is_better: bool,
    pub values: Vec<Option<f64>>,
    /// Name of the single best report, `None` on a tie.
    pub best: Option<String>,
    pub tie: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub names: Vec<String>,
    pub rows: Vec<MetricRow>,
}

impl Comparison {
    pub fn best(&self, metric: &str) -> Option<&str> {
        self.rows
            .iter()
            .find(|r| r.metric == metric)
            .and_then(|r| r.best.as_deref())
    }

    /// Aligned plain-text table; the best value of each row carries a `*`.
    pub fn render(&self) -> String {
        let cell = |row: &MetricRow, i: usize| match row.values[i] {
            Some(v) => {
                let mark = if row.best.as_deref() == Some(self.names[i].as_str()) { "*" } else { "" };
                format!("{v:.4}{mark}")
            }
            None => "-".to_string(),
        };
        let metric_w = self.rows.iter().map(|r| r.metric.len()).max().unwrap_or(6).max(6);
        let widths: Vec<usize> = (0..self.names.len())
            .map(|i| {
                self.rows
                    .iter()
                    .map(|r| cell(r, i).len())
                    .chain([self.names[i].len()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let mut out = String::new();
        let _ = write!(out, "{:<metric_w$}", "metric");
        for (name, w) in self.names.iter().zip(&widths) {
            let _ = write!(out, "  {name:>w$}");
        }
        let _ = writeln!(out, "  best");
        for row in &self.rows {
            let _ = write!(out, "{:<metric_w$}", row.metric);
            for (i, w) in widths.iter().enumerate() {
                let _ = write!(out, "  {:>w$}", cell(row, i));
            }
            let verdict = match (&row.best, row.tie) {
                (Some(b), _) => b.clone(),
                (None, true) => "tie".to_string(),
                (None, false) => "-".to_string(),
            };
            let _ = writeln!(out, "  {verdict}");
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// Lays named reports side by side and marks the best value per metric
/// (highest accuracy, lowest loss and perplexity). Exact ties have no winner.
pub fn compare_regimes(reports: &[(String, EvalReport)]) -> Result<Comparison> {
    if reports.len() < 2 {
        return Err(Error::InvalidExperimentConfig(format!(
            "comparison needs at least 2 reports, got {}",
            reports.len()
        )));
    }
    type Getter = fn(&EvalReport) -> Option<f64>;
    let metrics: [(&str, bool, Getter); 5] = [
        ("mlm_accuracy", true, |r| Some(r.mlm_accuracy)),
        ("pair_accuracy", true, |r| r.pair_accuracy),
        ("mlm_loss_nats", false, |r| Some(r.mlm_loss_nats)),
        ("mlm_loss_bits", false, |r| Some(r.mlm_loss_bits)),
        ("perplexity", false, |r| Some(r.perplexity)),
    ];
    let names: Vec<String> = reports.iter().map(|(n, _)| n.clone()).collect();
    let rows = metrics
        .iter()
        .filter(|(_, _, get)| reports.iter().any(|(_, r)| get(r).is_some()))
        .map(|&(metric, higher, get)| {
            let values: Vec<Option<f64>> = reports.iter().map(|(_, r)| get(r)).collect();
            let better = |a: f64, b: f64| if higher { a > b } else { a < b };
            let best_value = values
                .iter()
                .flatten()
                .copied()
                .fold(None, |acc: Option<f64>, v| match acc {
                    Some(a) if !better(v, a) => Some(a),
                    _ => Some(v),
                });
            let holders: Vec<usize> = values
                .iter()
                .enumerate()
                .filter(|(_, v)| v.is_some() && **v == best_value)
                .map(|(i, _)| i)
                .collect();
            MetricRow {
                metric: metric.to_string(),
                higher_is_better: higher,
                best: (holders.len() == 1).then(|| names[holders[0]].clone()),
                tie: holders.len() > 1,
                values,
            }
        })
        .collect();
    Ok(Comparison { names, rows })
}

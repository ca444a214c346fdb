//! Prediction metrics and the corpus-level evaluation harness.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cascade::Cascade;
use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::seismic::{ModelTag, Outcome, PredictionPoint};
use crate::weseer::predict_series;

/// APE reported for timestamps where the model gave no prediction.
pub const FAILURE: f64 = -1.0;

pub const DEFAULT_APE_EDGES: [f64; 4] = [0.25, 0.5, 0.75, 1.0];

pub fn ape(predicted: f64, truth: f64) -> Result<f64> {
    if !(truth > 0.0) {
        return Err(Error::invalid(format!("APE needs a positive truth, got {truth}")));
    }
    Ok((predicted - truth).abs() / truth)
}

/// APE of an outcome, or [`FAILURE`] when there is no prediction.
pub fn ape_outcome(outcome: &Outcome, truth: f64) -> Result<f64> {
    match outcome.value() {
        Some(v) => ape(v, truth),
        None if truth > 0.0 => Ok(FAILURE),
        None => Err(Error::invalid(format!("APE needs a positive truth, got {truth}"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApePair {
    /// Against the one-day size.
    pub ape1: f64,
    /// Against the final size.
    pub ape2: f64,
    pub diff: f64,
}

pub fn ape_pair(outcome: &Outcome, one_day_size: f64, final_size: f64) -> Result<ApePair> {
    let ape1 = ape_outcome(outcome, one_day_size)?;
    let ape2 = ape_outcome(outcome, final_size)?;
    let diff = if outcome.is_predicted() { ape1 - ape2 } else { 0.0 };
    Ok(ApePair { ape1, ape2, diff })
}

fn ranked_by<'a>(scores: impl Iterator<Item = (&'a String, Option<f64>)>) -> Vec<&'a String> {
    let mut v: Vec<(&String, Option<f64>)> = scores.collect();
    v.sort_by(|a, b| match (a.1, b.1) {
        (Some(x), Some(y)) => y.total_cmp(&x).then_with(|| a.0.cmp(b.0)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.0.cmp(b.0),
    });
    v.into_iter().map(|(id, _)| id).collect()
}

/// Overlap between the predicted and true top-`m` lists, as a fraction of `m`.
/// Unpredicted articles rank last; ties break by article id.
pub fn breakout_coverage(
    predictions: &BTreeMap<String, Outcome>,
    truths: &BTreeMap<String, f64>,
    m: usize,
) -> Result<f64> {
    if m == 0 || m > truths.len() {
        return Err(Error::invalid(format!(
            "top-M must be in 1..={}, got {m}",
            truths.len()
        )));
    }
    let true_top: std::collections::HashSet<&String> =
        ranked_by(truths.iter().map(|(id, t)| (id, Some(*t)))).into_iter().take(m).collect();
    let predicted_top = ranked_by(
        truths
            .keys()
            .map(|id| (id, predictions.get(id).and_then(Outcome::value))),
    );
    let hits = predicted_top.into_iter().take(m).filter(|id| true_top.contains(id)).count();
    Ok(hits as f64 / m as f64)
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Fraction of articles whose predicted side of the true median (at-or-above vs
/// below) matches the true side. Unpredicted articles count as wrong.
pub fn median_accuracy(predictions: &[Outcome], truths: &[f64]) -> Result<f64> {
    if predictions.len() != truths.len() || truths.len() < 2 {
        return Err(Error::invalid("median accuracy needs two equal-length lists of at least 2"));
    }
    let med = median(truths);
    let correct = predictions
        .iter()
        .zip(truths)
        .filter(|(p, t)| p.value().is_some_and(|v| (v >= med) == (**t >= med)))
        .count();
    Ok(correct as f64 / truths.len() as f64)
}

/// APE buckets: the failure bucket, then `[0, e_0)`, `[e_0, e_1)`, ..., `[e_last, inf)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApeBins {
    pub edges: Vec<f64>,
}

impl Default for ApeBins {
    fn default() -> Self {
        ApeBins {
            edges: DEFAULT_APE_EDGES.to_vec(),
        }
    }
}

impl ApeBins {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        if edges.iter().any(|e| !(*e > 0.0)) || edges.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("APE bin edges must be positive and increasing"));
        }
        Ok(ApeBins { edges })
    }

    pub fn len(&self) -> usize {
        self.edges.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn labels(&self) -> Vec<String> {
        let mut out = vec!["-1".to_string()];
        let mut lo = 0.0;
        for e in &self.edges {
            out.push(format!("[{lo},{e})"));
            lo = *e;
        }
        out.push(format!("[{lo},inf)"));
        out
    }

    pub fn index(&self, ape: f64) -> usize {
        if ape == FAILURE {
            0
        } else {
            1 + self.edges.partition_point(|e| *e <= ape)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApeHistogram {
    pub model: ModelTag,
    pub times_s: Vec<f64>,
    pub labels: Vec<String>,
    /// `counts[i][j]`: articles at `times_s[i]` falling into bucket `j`.
    pub counts: Vec<Vec<u64>>,
}

impl ApeHistogram {
    pub fn failures(&self) -> Vec<u64> {
        self.counts.iter().map(|row| row[0]).collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut s = format!("model\ttime_min\t{}\n", self.labels.join("\t"));
        for (t, row) in self.times_s.iter().zip(&self.counts) {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            let _ = writeln!(s, "{}\t{}\t{}", self.model.as_str(), t / 60.0, cells.join("\t"));
        }
        s
    }
}

fn histogram_from(model: ModelTag, times: &[f64], apes: &[Vec<f64>], bins: &ApeBins) -> ApeHistogram {
    let mut counts = vec![vec![0u64; bins.len()]; times.len()];
    for article in apes {
        for (i, a) in article.iter().enumerate() {
            counts[i][bins.index(*a)] += 1;
        }
    }
    ApeHistogram {
        model,
        times_s: times.to_vec(),
        labels: bins.labels(),
        counts,
    }
}

fn scored(corpus: &[Cascade]) -> Vec<&Cascade> {
    corpus
        .iter()
        .filter(|c| c.final_size.is_some_and(|f| f > 0))
        .collect()
}

fn run_model(
    corpus: &[&Cascade],
    model: ModelTag,
    times: &[f64],
    params: &ModelParams,
    n_init: f64,
) -> Result<Vec<Vec<PredictionPoint>>> {
    corpus
        .par_iter()
        .map(|c| predict_series(c, times, params, model, n_init))
        .collect()
}

/// Per-time APE histogram over the articles with a known positive final size.
pub fn ape_over_time(
    corpus: &[Cascade],
    model: ModelTag,
    times: &[f64],
    bins: &ApeBins,
    params: &ModelParams,
    n_init: f64,
) -> Result<ApeHistogram> {
    let articles = scored(corpus);
    let preds = run_model(&articles, model, times, params, n_init)?;
    let apes = apes_of(&articles, &preds)?;
    Ok(histogram_from(model, times, &apes, bins))
}

fn apes_of(articles: &[&Cascade], preds: &[Vec<PredictionPoint>]) -> Result<Vec<Vec<f64>>> {
    articles
        .iter()
        .zip(preds)
        .map(|(c, pts)| {
            let truth = c.final_size.unwrap_or(0) as f64;
            pts.iter().map(|p| ape_outcome(&p.outcome, truth)).collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSummary {
    pub time_s: f64,
    pub predicted: usize,
    pub failed: usize,
    pub failure_rate: f64,
    /// Mean APE over predicted articles only.
    pub mean_ape: Option<f64>,
    pub median_ape: Option<f64>,
    pub coverage: f64,
    pub median_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub model: ModelTag,
    pub histogram: ApeHistogram,
    pub summary: Vec<TimeSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub articles: usize,
    /// Articles without a positive final size, left out of every metric.
    pub excluded: usize,
    pub top_m: usize,
    pub n_init: f64,
    pub models: Vec<ModelReport>,
}

#[derive(Debug, Clone)]
pub struct EvaluationConfig {
    pub models: Vec<ModelTag>,
    pub times_s: Vec<f64>,
    pub top_m: usize,
    pub n_init: f64,
    pub bins: ApeBins,
}

/// Runs every model over the corpus and aggregates APE histograms, failure
/// rates, breakout coverage and median accuracy per timestamp.
pub fn evaluate_corpus(corpus: &[Cascade], cfg: &EvaluationConfig, params: &ModelParams) -> Result<EvaluationReport> {
    let articles = scored(corpus);
    if cfg.top_m == 0 || cfg.top_m > articles.len() {
        return Err(Error::invalid(format!(
            "top-M {} exceeds the {} scorable articles",
            cfg.top_m,
            articles.len()
        )));
    }
    let truths: BTreeMap<String, f64> = articles
        .iter()
        .map(|c| (c.article_id.clone(), c.final_size.unwrap_or(0) as f64))
        .collect();
    let truth_list: Vec<f64> = articles.iter().map(|c| c.final_size.unwrap_or(0) as f64).collect();

    let mut models = Vec::with_capacity(cfg.models.len());
    for &model in &cfg.models {
        let preds = run_model(&articles, model, &cfg.times_s, params, cfg.n_init)?;
        let apes = apes_of(&articles, &preds)?;
        let histogram = histogram_from(model, &cfg.times_s, &apes, &cfg.bins);
        let mut summary = Vec::with_capacity(cfg.times_s.len());
        for (i, &t) in cfg.times_s.iter().enumerate() {
            let outcomes: Vec<Outcome> = preds.iter().map(|p| p[i].outcome).collect();
            let mut ok: Vec<f64> = apes.iter().map(|a| a[i]).filter(|a| *a != FAILURE).collect();
            ok.sort_by(f64::total_cmp);
            let failed = articles.len() - ok.len();
            let by_id: BTreeMap<String, Outcome> = articles
                .iter()
                .zip(&outcomes)
                .map(|(c, o)| (c.article_id.clone(), *o))
                .collect();
            summary.push(TimeSummary {
                time_s: t,
                predicted: ok.len(),
                failed,
                failure_rate: failed as f64 / articles.len() as f64,
                mean_ape: (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64),
                median_ape: (!ok.is_empty()).then(|| median(&ok)),
                coverage: breakout_coverage(&by_id, &truths, cfg.top_m)?,
                median_accuracy: if articles.len() >= 2 {
                    median_accuracy(&outcomes, &truth_list)?
                } else {
                    0.0
                },
            });
        }
        models.push(ModelReport {
            model,
            histogram,
            summary,
        });
    }
    Ok(EvaluationReport {
        articles: articles.len(),
        excluded: corpus.len() - articles.len(),
        top_m: cfg.top_m,
        n_init: cfg.n_init,
        models,
    })
}

impl EvaluationReport {
    /// Per-model, per-time summary as tab-separated text.
    pub fn summary_tsv(&self) -> String {
        let mut s = String::from(
            "model\ttime_min\tpredicted\tfailed\tfailure_rate\tmean_ape\tmedian_ape\tcoverage\tmedian_accuracy\n",
        );
        let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"));
        for m in &self.models {
            for row in &m.summary {
                let _ = writeln!(
                    s,
                    "{}\t{}\t{}\t{}\t{:.6}\t{}\t{}\t{:.6}\t{:.6}",
                    m.model.as_str(),
                    row.time_s / 60.0,
                    row.predicted,
                    row.failed,
                    row.failure_rate,
                    opt(row.mean_ape),
                    opt(row.median_ape),
                    row.coverage,
                    row.median_accuracy
                );
            }
        }
        s
    }
}

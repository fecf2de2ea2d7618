//! Scoring of inferred structure and states, structural comparisons, and
//! the mutual-information and partial-correlation baselines.

use std::path::Path;

use nalgebra::DMatrix;
use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::dynamics::Dynamics;
use crate::error::{GinError, Result};
use crate::graph::{structural_stats, AdjacencyMask, Graph};
use crate::matching::{apply_match, MatchResult};

/// Rank-based area under the ROC curve; tied scores count one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(GinError::shape("auc", &[scores.len()], &[labels.len()]));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(GinError::UndefinedAuc);
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(GinError::Numeric("NaN score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut k = 0;
    while k < order.len() {
        let mut end = k + 1;
        while end < order.len() && scores[order[end]] == scores[order[k]] {
            end += 1;
        }
        let avg_rank = (k + 1 + end) as f64 / 2.0;
        rank_sum += avg_rank * order[k..end].iter().filter(|&&i| labels[i]).count() as f64;
        k = end;
    }
    let p = pos as f64;
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    TP,
    TN,
    FP,
    FN,
}

/// Per-entry outcomes over the scored region; `None` outside it.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastMatrix {
    pub cells: Array2<Option<Outcome>>,
}

impl ContrastMatrix {
    pub fn count(&self, o: Outcome) -> usize {
        self.cells.iter().filter(|c| **c == Some(o)).count()
    }

    /// n x n CSV of `TP`/`TN`/`FP`/`FN`, empty outside the scored region.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_path(path)
            .map_err(|e| GinError::Serde(e.to_string()))?;
        for row in self.cells.outer_iter() {
            let fields: Vec<String> = row
                .iter()
                .map(|c| c.map(|o| format!("{o:?}")).unwrap_or_default())
                .collect();
            w.write_record(&fields)?;
        }
        w.flush().map_err(|e| GinError::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatRow {
    pub statistic: String,
    pub truth: f64,
    pub inferred: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub unobs_auc: f64,
    pub unobs_acc: f64,
    pub unobs_tpr: f64,
    pub unobs_fpr: f64,
    pub scored_entries: usize,
    pub threshold: f64,
    pub matched: bool,
    /// AUC over the observed block, when that block was inferred too.
    #[serde(default)]
    pub observed_auc: Option<f64>,
    /// AUC over every node pair.
    #[serde(default)]
    pub whole_auc: Option<f64>,
    /// Accuracy for binary states, MSE for continuous ones.
    pub obs_state_score: Option<f64>,
    /// Same measure on recovered hidden initial states after matching.
    pub hidden_init_score: Option<f64>,
    pub structure: Vec<StatRow>,
}

impl EvalReport {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| GinError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| GinError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// AUC, accuracy and rates over the upper triangle of `mask`, after applying
/// `matching` to the scores when given.
pub fn score_completion(
    a_true: &Array2<f64>,
    a_prob: &Array2<f64>,
    mask: &AdjacencyMask,
    matching: Option<&MatchResult>,
    threshold: f64,
) -> Result<(EvalReport, ContrastMatrix)> {
    let n = a_true.nrows();
    if a_true.dim() != (n, n) || a_prob.dim() != (n, n) || mask.n() != n {
        return Err(GinError::shape("score_completion", a_true.shape(), a_prob.shape()));
    }
    let scored = match matching {
        Some(m) => apply_match(a_prob, m)?,
        None => a_prob.clone(),
    };
    let pairs = mask.upper_pairs();
    if pairs.is_empty() {
        return Err(GinError::Contract("no entries to score".into()));
    }
    let scores: Vec<f64> = pairs.iter().map(|&(i, j)| scored[[i, j]]).collect();
    let labels: Vec<bool> = pairs.iter().map(|&(i, j)| a_true[[i, j]] > 0.5).collect();
    let mut cells = Array2::from_elem((n, n), None);
    let (mut tp, mut tn, mut fp, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for (&(i, j), (&s, &l)) in pairs.iter().zip(scores.iter().zip(&labels)) {
        let o = match (s > threshold, l) {
            (true, true) => {
                tp += 1;
                Outcome::TP
            }
            (false, false) => {
                tn += 1;
                Outcome::TN
            }
            (true, false) => {
                fp += 1;
                Outcome::FP
            }
            (false, true) => {
                fn_ += 1;
                Outcome::FN
            }
        };
        cells[[i, j]] = Some(o);
    }
    let ratio = |a: usize, b: usize| if a + b == 0 { 0.0 } else { a as f64 / (a + b) as f64 };
    let report = EvalReport {
        unobs_auc: auc(&scores, &labels)?,
        unobs_acc: (tp + tn) as f64 / pairs.len() as f64,
        unobs_tpr: ratio(tp, fn_),
        unobs_fpr: ratio(fp, tn),
        scored_entries: pairs.len(),
        threshold,
        matched: matching.is_some(),
        observed_auc: None,
        whole_auc: None,
        obs_state_score: None,
        hidden_init_score: None,
        structure: Vec::new(),
    };
    Ok((report, ContrastMatrix { cells }))
}

/// Argmax accuracy for binary states, mean squared error otherwise.
pub fn score_states(pred: &Array2<f64>, truth: &Array2<f64>, dynamics: Dynamics) -> Result<f64> {
    if pred.dim() != truth.dim() {
        return Err(GinError::shape("score_states", pred.shape(), truth.shape()));
    }
    if pred.is_empty() {
        return Err(GinError::Contract("no states to score".into()));
    }
    if dynamics.is_binary() {
        let argmax = |r: ndarray::ArrayView1<'_, f64>| {
            r.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |b, (k, &v)| if v > b.1 { (k, v) } else { b })
                .0
        };
        let hits = pred
            .outer_iter()
            .zip(truth.outer_iter())
            .filter(|(p, t)| argmax(*p) == argmax(*t))
            .count();
        Ok(hits as f64 / pred.nrows() as f64)
    } else {
        Ok((pred - truth).mapv(|v| v * v).mean().unwrap_or(f64::NAN))
    }
}

/// Scalar series per node from `(samples, n, d)` states: the opinion for
/// one-hot binary states, the value itself for one-dimensional ones.
fn scalar_series(series: &Array3<f64>) -> Array2<f64> {
    let d = series.shape()[2];
    series.index_axis(Axis(2), d - 1).to_owned()
}

/// Pairwise mutual information (nats) of node series `(samples, n, d)`:
/// direct counts for binary states, `bins` equal-width bins on [0, 1]
/// otherwise.
pub fn mi_baseline(series: &Array3<f64>, dynamics: Dynamics, bins: usize) -> Result<Array2<f64>> {
    let x = scalar_series(series);
    let (t, n) = x.dim();
    if n < 2 || t == 0 {
        return Err(GinError::Parameter("mutual information needs two nodes and one sample".into()));
    }
    let k = if dynamics.is_binary() { 2 } else { bins.max(1) };
    let codes: Array2<usize> = x.mapv(|v| {
        if dynamics.is_binary() {
            usize::from(v > 0.5)
        } else {
            ((v.clamp(0.0, 1.0) * k as f64) as usize).min(k - 1)
        }
    });
    let mut out = Array2::zeros((n, n));
    let tf = t as f64;
    for i in 0..n {
        for j in i + 1..n {
            let mut joint = vec![0usize; k * k];
            let mut pi = vec![0usize; k];
            let mut pj = vec![0usize; k];
            for s in 0..t {
                let (a, b) = (codes[[s, i]], codes[[s, j]]);
                joint[a * k + b] += 1;
                pi[a] += 1;
                pj[b] += 1;
            }
            let mut mi = 0.0;
            for a in 0..k {
                for b in 0..k {
                    let c = joint[a * k + b];
                    if c > 0 {
                        let pab = c as f64 / tf;
                        mi += pab * (pab / (pi[a] as f64 / tf * pj[b] as f64 / tf)).ln();
                    }
                }
            }
            let mi = mi.max(0.0);
            out[[i, j]] = mi;
            out[[j, i]] = mi;
        }
    }
    Ok(out)
}

/// Partial-correlation magnitudes from the inverse of the ridge-regularised
/// covariance of the node series.
pub fn pcorr_baseline(series: &Array3<f64>, ridge: f64) -> Result<Array2<f64>> {
    let x = scalar_series(series);
    let (t, n) = x.dim();
    if n < 2 || t < 2 {
        return Err(GinError::Parameter("partial correlation needs two nodes and two samples".into()));
    }
    let mean = x.mean_axis(Axis(0)).expect("nonempty series");
    let centred = &x - &mean;
    let cov = centred.t().dot(&centred) / (t - 1) as f64;
    if let Some(i) = (0..n).find(|&i| cov[[i, i]] <= 1e-15) {
        return Err(GinError::ZeroVariance(i));
    }
    let m = DMatrix::from_fn(n, n, |i, j| cov[[i, j]] + if i == j { ridge } else { 0.0 });
    let prec = m
        .try_inverse()
        .ok_or_else(|| GinError::Numeric("covariance is singular".into()))?;
    Ok(Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            0.0
        } else {
            (-prec[(i, j)] / (prec[(i, i)] * prec[(j, j)]).sqrt()).abs()
        }
    }))
}

/// AUC of a symmetric score matrix against `truth` over all unordered pairs.
pub fn structure_auc(truth: &Array2<f64>, scores: &Array2<f64>) -> Result<f64> {
    let n = truth.nrows();
    let pairs = AdjacencyMask::full(n).upper_pairs();
    let s: Vec<f64> = pairs.iter().map(|&(i, j)| scores[[i, j]]).collect();
    let l: Vec<bool> = pairs.iter().map(|&(i, j)| truth[[i, j]] > 0.5).collect();
    auc(&s, &l)
}

/// Average degree, mean distance, density and clustering of both graphs.
pub fn compare_structure(truth: &Graph, inferred: &Graph) -> Result<Vec<StatRow>> {
    if truth.n() != inferred.n() {
        return Err(GinError::shape("compare_structure", &[truth.n()], &[inferred.n()]));
    }
    let a = structural_stats(truth);
    let b = structural_stats(inferred);
    let row = |name: &str, x: f64, y: f64| StatRow {
        statistic: name.to_string(),
        truth: x,
        inferred: y,
        delta: (x - y).abs(),
    };
    Ok(vec![
        row("average_degree", a.average_degree, b.average_degree),
        row("average_path_length", a.average_path_length, b.average_path_length),
        row("density", a.density, b.density),
        row("average_clustering", a.average_clustering, b.average_clustering),
    ])
}

pub fn write_stat_table(rows: &[StatRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| GinError::Serde(e.to_string()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| GinError::io(path, e))
}

#[cfg(test)]
mod tests;

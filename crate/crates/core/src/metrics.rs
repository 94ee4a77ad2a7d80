//! Evaluation metrics. In-distribution samples are the positive class and
//! higher scores mean "more in-distribution".

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{EarError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredLabels {
    scores: Vec<f64>,
    positive: Vec<bool>,
}

impl ScoredLabels {
    pub fn new(scores: Vec<f64>, positive: Vec<bool>) -> Result<Self> {
        if scores.len() != positive.len() {
            return Err(EarError::dim(scores.len(), positive.len()));
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(EarError::Metric("scores contain NaN".into()));
        }
        Ok(Self { scores, positive })
    }

    /// Builds ID-positive scored labels from OOD scores (higher = more OOD).
    pub fn from_ood_scores(ood_scores: &[f64], is_id: Vec<bool>) -> Result<Self> {
        Self::new(ood_scores.iter().map(|s| -s).collect(), is_id)
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn positive(&self) -> &[bool] {
        &self.positive
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    fn counts(&self) -> Result<(usize, usize)> {
        let pos = self.positive.iter().filter(|&&p| p).count();
        let neg = self.len() - pos;
        if pos == 0 || neg == 0 {
            return Err(EarError::Metric(format!(
                "both classes required, got {pos} positive and {neg} negative"
            )));
        }
        Ok((pos, neg))
    }
}

/// Area under the ROC curve via the Mann-Whitney U statistic with midranks.
pub fn auroc(sl: &ScoredLabels) -> Result<f64> {
    let (pos, neg) = sl.counts()?;
    let mut order: Vec<usize> = (0..sl.len()).collect();
    order.sort_by(|&a, &b| sl.scores[a].total_cmp(&sl.scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && sl.scores[order[j + 1]] == sl.scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let midrank = (i + j + 2) as f64 / 2.0;
        rank_sum += midrank * order[i..=j].iter().filter(|&&k| sl.positive[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// True-negative rate at the largest threshold `t` whose true-positive rate
/// reaches `tpr`, predicting positive when `score >= t`.
pub fn tnr_at_tpr(sl: &ScoredLabels, tpr: f64) -> Result<f64> {
    if !(tpr > 0.0 && tpr < 1.0) {
        return Err(EarError::Metric(format!("tpr {tpr} must be in (0, 1)")));
    }
    let (pos, neg) = sl.counts()?;
    let mut order: Vec<usize> = (0..sl.len()).collect();
    order.sort_by(|&a, &b| sl.scores[b].total_cmp(&sl.scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = sl.scores[order[i]];
        while i < order.len() && sl.scores[order[i]] == t {
            if sl.positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        if tp as f64 / pos as f64 >= tpr {
            return Ok((neg - fp) as f64 / neg as f64);
        }
    }
    unreachable!("the lowest threshold reaches TPR 1")
}

/// Unweighted mean of per-class F1 over every class seen in either input.
pub fn macro_f1<L: Ord + Copy>(pred: &[L], truth: &[L]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(EarError::dim(truth.len(), pred.len()));
    }
    if pred.is_empty() {
        return Err(EarError::Metric("macro-F1 of an empty set".into()));
    }
    // (tp, fp, fn)
    let mut counts: BTreeMap<L, (usize, usize, usize)> = BTreeMap::new();
    for (&p, &t) in pred.iter().zip(truth) {
        if p == t {
            counts.entry(p).or_default().0 += 1;
        } else {
            counts.entry(p).or_default().1 += 1;
            counts.entry(t).or_default().2 += 1;
        }
    }
    let total: f64 = counts
        .values()
        .map(|&(tp, fp, fn_)| 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64)
        .sum();
    Ok(total / counts.len() as f64)
}

pub fn accuracy<L: PartialEq>(pred: &[L], truth: &[L]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(EarError::dim(truth.len(), pred.len()));
    }
    if pred.is_empty() {
        return Err(EarError::Metric("accuracy of an empty set".into()));
    }
    Ok(pred.iter().zip(truth).filter(|(p, t)| p == t).count() as f64 / pred.len() as f64)
}

/// Threshold maximizing binary macro-F1 (positive iff `score >= t`). For
/// offline evaluation only.
pub fn optimal_f1_threshold(sl: &ScoredLabels) -> Result<(f64, f64)> {
    sl.counts()?;
    let mut thresholds: Vec<f64> = sl.scores.clone();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let mut best = (thresholds[0], f64::NEG_INFINITY);
    for &t in &thresholds {
        let pred: Vec<bool> = sl.scores.iter().map(|&s| s >= t).collect();
        let f = macro_f1(&pred, &sl.positive)?;
        if f > best.1 {
            best = (t, f);
        }
    }
    Ok(best)
}

/// Mean over the last `window` values pushed since the last reset.
#[derive(Debug, Clone)]
pub struct MovingAverage {
    window: usize,
    values: VecDeque<f64>,
}

impl MovingAverage {
    pub fn new(window: usize) -> Result<Self> {
        if window == 0 {
            return Err(EarError::Argument("moving-average window must be positive".into()));
        }
        Ok(Self {
            window,
            values: VecDeque::with_capacity(window),
        })
    }

    pub fn push(&mut self, v: f64) -> f64 {
        if self.values.len() == self.window {
            self.values.pop_front();
        }
        self.values.push_back(v);
        self.value().expect("just pushed")
    }

    pub fn value(&self) -> Option<f64> {
        if self.values.is_empty() {
            return None;
        }
        Some(self.values.iter().sum::<f64>() / self.values.len() as f64)
    }

    pub fn reset(&mut self) {
        self.values.clear();
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Moving average of a whole stream; `resets[i]` empties the window before
/// value `i` is added.
pub fn moving_average(values: &[f64], window: usize, resets: &[bool]) -> Result<Vec<f64>> {
    if resets.len() != values.len() {
        return Err(EarError::dim(values.len(), resets.len()));
    }
    let mut ma = MovingAverage::new(window)?;
    Ok(values
        .iter()
        .zip(resets)
        .map(|(&v, &r)| {
            if r {
                ma.reset();
            }
            ma.push(v)
        })
        .collect())
}

/// Groups per-key accuracy, e.g. per task.
pub fn grouped_accuracy<K: Ord + Copy>(keys: &[K], correct: &[bool]) -> BTreeMap<K, f64> {
    let mut acc: BTreeMap<K, (usize, usize)> = BTreeMap::new();
    for (&k, &c) in keys.iter().zip(correct) {
        let e = acc.entry(k).or_default();
        e.0 += c as usize;
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(k, (c, n))| (k, c as f64 / n as f64))
        .collect()
}

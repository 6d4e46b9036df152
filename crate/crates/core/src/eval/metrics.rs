//! Confusion counts, precision/recall, rank-based ROC AUC and per-patient
//! summaries over a concatenated result vector. Carcinoma is the positive class.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::results::ResultVector;
use crate::error::{Error, Result};
use crate::outcome::predicts_carcinoma;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn add(&mut self, positive: bool, predicted: bool) {
        match (positive, predicted) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (false, false) => self.tn += 1,
            (true, false) => self.fn_ += 1,
        }
    }

    pub fn merge(self, other: Confusion) -> Confusion {
        Confusion {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            tn: self.tn + other.tn,
            fn_: self.fn_ + other.fn_,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / self.total().max(1) as f64
    }

    /// `None` when nothing was predicted positive.
    pub fn precision(&self) -> Option<f64> {
        let d = self.tp + self.fp;
        (d > 0).then(|| self.tp as f64 / d as f64)
    }

    /// `None` when there are no positives.
    pub fn recall(&self) -> Option<f64> {
        let d = self.tp + self.fn_;
        (d > 0).then(|| self.tp as f64 / d as f64)
    }
}

pub fn confusion(scores: &[f64], positives: &[bool], threshold: f64) -> Confusion {
    let mut c = Confusion::default();
    for (&s, &p) in scores.iter().zip(positives) {
        c.add(p, predicts_carcinoma(s, threshold));
    }
    c
}

/// Mann–Whitney AUC from average ranks; ties between classes count one half.
pub fn rank_auc(scores: &[f64], positives: &[bool]) -> Result<f64> {
    if scores.len() != positives.len() {
        return Err(Error::Config("scores and labels differ in length".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("NaN score".into()));
    }
    let n_pos = positives.iter().filter(|&&p| p).count();
    let n_neg = positives.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Undefined("ROC AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // doubled ranks keep tie averages integral
    let mut rank_sum2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let doubled = (i + 1 + j + 1) as u64;
        rank_sum2 += doubled * order[i..=j].iter().filter(|&&k| positives[k]).count() as u64;
        i = j + 1;
    }
    let u2 = rank_sum2 - (n_pos * (n_pos + 1)) as u64;
    Ok(u2 as f64 / (2 * n_pos * n_neg) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC points from sweeping the threshold over every distinct score,
/// highest first, starting at (0, 0).
pub fn roc_curve(scores: &[f64], positives: &[bool]) -> Result<Vec<RocPoint>> {
    let n_pos = positives.iter().filter(|&&p| p).count();
    let n_neg = positives.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Undefined("ROC needs both classes".into()));
    }
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    for t in thresholds {
        let c = confusion(scores, positives, t);
        points.push(RocPoint {
            threshold: t,
            fpr: c.fp as f64 / n_neg as f64,
            tpr: c.tp as f64 / n_pos as f64,
        });
    }
    Ok(points)
}

pub fn trapezoid_area(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientAccuracy {
    pub patient_id: String,
    pub frames: usize,
    pub correct: usize,
    pub accuracy: f64,
}

pub const HISTOGRAM_BINS: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientReport {
    pub patients: Vec<PatientAccuracy>,
    /// Counts of p_carcinoma in 20 uniform bins on [0, 1], per true class.
    pub normal_histogram: Vec<usize>,
    pub carcinoma_histogram: Vec<usize>,
}

fn bin(p: f64) -> usize {
    ((p * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1)
}

pub fn per_patient_report(rv: &ResultVector, threshold: f64) -> PatientReport {
    let mut per: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    let mut normal = vec![0; HISTOGRAM_BINS];
    let mut carcinoma = vec![0; HISTOGRAM_BINS];
    for r in &rv.records {
        let e = per.entry(&r.patient_id).or_default();
        e.0 += 1;
        if predicts_carcinoma(r.p_carcinoma, threshold) == r.true_label.is_positive() {
            e.1 += 1;
        }
        let h = if r.true_label.is_positive() { &mut carcinoma } else { &mut normal };
        h[bin(r.p_carcinoma)] += 1;
    }
    PatientReport {
        patients: per
            .into_iter()
            .map(|(p, (n, ok))| PatientAccuracy {
                patient_id: p.to_string(),
                frames: n,
                correct: ok,
                accuracy: ok as f64 / n as f64,
            })
            .collect(),
        normal_histogram: normal,
        carcinoma_histogram: carcinoma,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub threshold: f64,
    pub frames: usize,
    pub confusion: Confusion,
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub roc_auc: f64,
    pub per_patient: PatientReport,
}

pub fn compute_metrics(rv: &ResultVector, threshold: f64) -> Result<MetricsReport> {
    if rv.records.is_empty() {
        return Err(Error::Undefined("empty result vector".into()));
    }
    let scores: Vec<f64> = rv.records.iter().map(|r| r.p_carcinoma).collect();
    let positives: Vec<bool> = rv.records.iter().map(|r| r.true_label.is_positive()).collect();
    let c = confusion(&scores, &positives, threshold);
    Ok(MetricsReport {
        threshold,
        frames: c.total(),
        confusion: c,
        accuracy: c.accuracy(),
        precision: c.precision(),
        recall: c.recall(),
        roc_auc: rank_auc(&scores, &positives)?,
        per_patient: per_patient_report(rv, threshold),
    })
}

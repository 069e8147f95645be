//! Evaluation metrics: accuracy/precision/recall/F1 from confusion counts,
//! rank-statistic ROC AUC, discretized field distributions, Jensen-Shannon
//! divergence (base-2 logs, so the range is exactly [0, 1]), and Gaussian
//! KDE curves for plot emission.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::record::{FieldRecord, FieldValue};
use crate::schema::{resolve_field_alias, ProtocolSchema};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MetricsError {
    LengthMismatch,
    Empty,
    SingleClass,
    SupportMismatch,
    UnknownField(String),
    TooFewSamples,
}

impl fmt::Display for MetricsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricsError::LengthMismatch => write!(f, "metrics: input length mismatch"),
            MetricsError::Empty => write!(f, "metrics: empty input"),
            MetricsError::SingleClass => write!(f, "metrics: needs both classes"),
            MetricsError::SupportMismatch => write!(f, "metrics: distribution supports differ"),
            MetricsError::UnknownField(name) => write!(f, "metrics: unknown field {}", name),
            MetricsError::TooFewSamples => write!(f, "metrics: too few samples"),
        }
    }
}

/// Binary confusion counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }
}

/// Accuracy, precision, recall, F1. Ratios with zero denominators are
/// defined as zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl ClassMetrics {
    pub fn from_confusion(c: &ConfusionMatrix) -> Self {
        let precision = ratio(c.tp, c.tp + c.fp);
        let recall = ratio(c.tp, c.tp + c.fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        ClassMetrics { accuracy: ratio(c.tp + c.tn, c.total()), precision, recall, f1 }
    }
}

/// Confusion counts treating `positive_class` as the positive label.
pub fn confusion(
    predictions: &[usize],
    labels: &[usize],
    positive_class: usize,
) -> Result<ConfusionMatrix, MetricsError> {
    if predictions.len() != labels.len() {
        return Err(MetricsError::LengthMismatch);
    }
    if predictions.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut c = ConfusionMatrix::default();
    for (&p, &l) in predictions.iter().zip(labels.iter()) {
        match (p == positive_class, l == positive_class) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// Per-class metrics plus the macro average, for any number of classes.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub per_class: Vec<(usize, ClassMetrics, ConfusionMatrix)>,
    pub macro_avg: ClassMetrics,
}

pub fn classification_metrics(
    predictions: &[usize],
    labels: &[usize],
    classes: &[usize],
) -> Result<MetricsReport, MetricsError> {
    if predictions.len() != labels.len() {
        return Err(MetricsError::LengthMismatch);
    }
    if predictions.is_empty() || classes.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut per_class = Vec::new();
    let (mut sa, mut sp, mut sr, mut sf) = (0.0, 0.0, 0.0, 0.0);
    for &k in classes {
        let c = confusion(predictions, labels, k)?;
        let m = ClassMetrics::from_confusion(&c);
        sa += m.accuracy;
        sp += m.precision;
        sr += m.recall;
        sf += m.f1;
        per_class.push((k, m, c));
    }
    let n = classes.len() as f64;
    Ok(MetricsReport {
        per_class,
        macro_avg: ClassMetrics {
            accuracy: sa / n,
            precision: sp / n,
            recall: sr / n,
            f1: sf / n,
        },
    })
}

/// ROC AUC via the rank statistic (midranks for ties), plus the true
/// positive rate of the argmax decision.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<RocResult, MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch);
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::SingleClass);
    }
    // midranks
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(core::cmp::Ordering::Equal));
    let mut ranks = vec![0.0f64; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[order[k]] = midrank;
        }
        i = j + 1;
    }
    let rank_sum: f64 = ranks
        .iter()
        .zip(labels.iter())
        .filter(|(_, &l)| l)
        .map(|(r, _)| *r)
        .sum();
    let auc = (rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0) / (n_pos * n_neg) as f64;

    // TPR at the default decision: positive iff score >= 0.5 (scores are
    // class-1 probabilities from the classifier's argmax rule).
    let tp = scores
        .iter()
        .zip(labels.iter())
        .filter(|(&s, &l)| l && s >= 0.5)
        .count();
    Ok(RocResult { auc, tpr_at_default: ratio(tp, n_pos) })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocResult {
    pub auc: f64,
    pub tpr_at_default: f64,
}

/// How to discretize a numeric field.
#[derive(Debug, Clone, PartialEq)]
pub enum Binning {
    /// One atom per distinct value (ports).
    Categorical,
    /// Equal-width bins over [lo, hi]; the last bin is right-inclusive.
    EqualWidth { bins: usize, lo: f64, hi: f64 },
}

/// A discretized distribution over a shared support.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    pub field: String,
    /// Categorical atoms or bin left edges; paired with `masses`.
    pub support: Vec<f64>,
    pub masses: Vec<f64>,
    pub binning: Binning,
    /// Records whose field was absent (excluded from the masses).
    pub excluded_absent: usize,
}

impl Distribution {
    pub fn mass_sum(&self) -> f64 {
        self.masses.iter().sum()
    }
}

/// Numeric values of one field over a record set; absent values counted
/// separately.
pub fn field_values(
    records: &[FieldRecord],
    field: &str,
    schema: &ProtocolSchema,
) -> Result<(Vec<f64>, usize), MetricsError> {
    let path = resolve_field_alias(field);
    let idx = schema
        .index_of(path)
        .ok_or_else(|| MetricsError::UnknownField(path.into()))?;
    let mut values = Vec::new();
    let mut absent = 0usize;
    for r in records {
        match r.get(idx) {
            FieldValue::Int(v) => values.push(*v as f64),
            _ => absent += 1,
        }
    }
    Ok((values, absent))
}

/// Discretize one field over records.
pub fn field_distribution(
    records: &[FieldRecord],
    field: &str,
    binning: Binning,
    schema: &ProtocolSchema,
) -> Result<Distribution, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::Empty);
    }
    let (values, excluded_absent) = field_values(records, field, schema)?;
    distribution_from_values(field, &values, binning, excluded_absent)
}

/// Build a distribution from raw values (callers align supports by passing
/// shared binning or a union categorical support via [`align_categorical`]).
pub fn distribution_from_values(
    field: &str,
    values: &[f64],
    binning: Binning,
    excluded_absent: usize,
) -> Result<Distribution, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = values.len() as f64;
    match binning {
        Binning::Categorical => {
            let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
            for &v in values {
                *counts.entry(v.to_bits()).or_insert(0) += 1;
            }
            let mut support = Vec::with_capacity(counts.len());
            let mut masses = Vec::with_capacity(counts.len());
            for (bits, c) in counts {
                support.push(f64::from_bits(bits));
                masses.push(c as f64 / n);
            }
            Ok(Distribution {
                field: field.into(),
                support,
                masses,
                binning: Binning::Categorical,
                excluded_absent,
            })
        }
        Binning::EqualWidth { bins, lo, hi } => {
            if bins == 0 || hi < lo {
                return Err(MetricsError::Empty);
            }
            let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
            let mut masses = vec![0.0f64; bins];
            for &v in values {
                let mut b = if hi > lo {
                    libm::floor((v - lo) / width) as i64
                } else {
                    0
                };
                // right-inclusive last bin
                if b >= bins as i64 {
                    b = bins as i64 - 1;
                }
                if b < 0 {
                    b = 0;
                }
                masses[b as usize] += 1.0;
            }
            for m in masses.iter_mut() {
                *m /= n;
            }
            let support = (0..bins).map(|b| lo + b as f64 * width).collect();
            Ok(Distribution {
                field: field.into(),
                support,
                masses,
                binning: Binning::EqualWidth { bins, lo, hi },
                excluded_absent,
            })
        }
    }
}

/// Re-express two categorical distributions over their union support,
/// inserting zero-mass atoms where a value is unseen.
pub fn align_categorical(p: &Distribution, q: &Distribution) -> (Distribution, Distribution) {
    let mut union: Vec<f64> = Vec::new();
    union.extend_from_slice(&p.support);
    union.extend_from_slice(&q.support);
    union.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
    union.dedup();
    let remap = |d: &Distribution| {
        let mut masses = vec![0.0f64; union.len()];
        for (v, m) in d.support.iter().zip(d.masses.iter()) {
            let i = union
                .iter()
                .position(|u| u == v)
                .expect("union contains every atom");
            masses[i] = *m;
        }
        Distribution {
            field: d.field.clone(),
            support: union.clone(),
            masses,
            binning: Binning::Categorical,
            excluded_absent: d.excluded_absent,
        }
    };
    (remap(p), remap(q))
}

/// Jensen-Shannon divergence with base-2 logs; `0 * log 0 = 0`.
pub fn jsd(p: &Distribution, q: &Distribution) -> Result<f64, MetricsError> {
    if p.support != q.support || p.masses.len() != q.masses.len() {
        return Err(MetricsError::SupportMismatch);
    }
    let mut total = 0.0f64;
    for (&a, &b) in p.masses.iter().zip(q.masses.iter()) {
        let m = 0.5 * (a + b);
        if a > 0.0 {
            total += 0.5 * a * libm::log2(a / m);
        }
        if b > 0.0 {
            total += 0.5 * b * libm::log2(b / m);
        }
    }
    // clamp fp dust just outside the theoretical bounds
    Ok(total.clamp(0.0, 1.0))
}

/// A kernel density estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct KdeCurve {
    pub points: Vec<(f64, f64)>,
    pub bandwidth: f64,
    /// Set when the sample has zero variance; the curve is a single spike.
    pub degenerate: bool,
}

/// Gaussian KDE evaluated on 256 points over [min - 3h, max + 3h], with
/// Scott's-rule bandwidth (sigma * n^(-1/5)) unless one is supplied.
pub fn kde_curve(samples: &[f64], bandwidth: Option<f64>) -> Result<KdeCurve, MetricsError> {
    if samples.len() < 2 {
        return Err(MetricsError::TooFewSamples);
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    let sigma = libm::sqrt(var);
    if sigma == 0.0 && bandwidth.is_none() {
        return Ok(KdeCurve {
            points: vec![(samples[0], 1.0)],
            bandwidth: 0.0,
            degenerate: true,
        });
    }
    let h = bandwidth.unwrap_or_else(|| sigma * libm::pow(n, -0.2));
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &s in samples {
        lo = lo.min(s);
        hi = hi.max(s);
    }
    lo -= 3.0 * h;
    hi += 3.0 * h;
    const POINTS: usize = 256;
    let step = (hi - lo) / (POINTS - 1) as f64;
    let norm = 1.0 / (n * h * libm::sqrt(2.0 * core::f64::consts::PI));
    let mut points = Vec::with_capacity(POINTS);
    for i in 0..POINTS {
        let x = lo + i as f64 * step;
        let mut density = 0.0;
        for &s in samples {
            let z = (x - s) / h;
            density += libm::exp(-0.5 * z * z);
        }
        points.push((x, density * norm));
    }
    Ok(KdeCurve { points, bandwidth: h, degenerate: false })
}

/// Trapezoid integral of a curve (used to sanity-check KDE output).
pub fn trapezoid_integral(points: &[(f64, f64)]) -> f64 {
    let mut total = 0.0;
    for w in points.windows(2) {
        total += 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0);
    }
    total
}

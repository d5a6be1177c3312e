//! Majority voting, confusion matrices and per-class metrics.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::Class;

/// Subject label from per-sentence `(label, score)` predictions.
///
/// A strict majority wins. On a tie the sign of the mean score decides, with
/// a mean of exactly zero going to AD.
pub fn majority_vote(predictions: &[(Class, f64)]) -> Result<Class> {
    if predictions.is_empty() {
        return Err(Error::Invalid("majority vote over no predictions".into()));
    }
    let ad = predictions.iter().filter(|(l, _)| *l == Class::Ad).count();
    let control = predictions.len() - ad;
    Ok(match ad.cmp(&control) {
        std::cmp::Ordering::Greater => Class::Ad,
        std::cmp::Ordering::Less => Class::Control,
        std::cmp::Ordering::Equal => Class::from_score(mean_score(predictions)),
    })
}

fn mean_score(predictions: &[(Class, f64)]) -> f64 {
    predictions.iter().map(|(_, s)| s).sum::<f64>() / predictions.len() as f64
}

/// Groups row predictions by subject and votes within each group. Returns
/// `(subject, label, mean score)` sorted by subject id.
pub fn vote_by_subject(subjects: &[String], scored: &[(Class, f64)]) -> Result<Vec<(String, Class, f64)>> {
    if subjects.len() != scored.len() {
        return Err(Error::Invalid(format!(
            "{} subjects for {} predictions",
            subjects.len(),
            scored.len()
        )));
    }
    let mut groups: BTreeMap<&str, Vec<(Class, f64)>> = BTreeMap::new();
    for (s, p) in subjects.iter().zip(scored) {
        groups.entry(s).or_default().push(*p);
    }
    groups
        .into_iter()
        .map(|(s, preds)| Ok((s.to_string(), majority_vote(&preds)?, mean_score(&preds))))
        .collect()
}

/// Counts with AD as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionMatrix {
    pub fn new(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        ConfusionMatrix { tp, fp, fn_, tn }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// The same counts with control taken as the positive class.
    pub fn swapped(&self) -> Self {
        ConfusionMatrix {
            tp: self.tn,
            fp: self.fn_,
            fn_: self.fp,
            tn: self.tp,
        }
    }
}

pub fn confusion(truth: &[Class], predicted: &[Class]) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(Error::Invalid(format!(
            "{} truth labels for {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::Invalid("confusion matrix over no instances".into()));
    }
    let mut cm = ConfusionMatrix::default();
    for (t, p) in truth.iter().zip(predicted) {
        match (t, p) {
            (Class::Ad, Class::Ad) => cm.tp += 1,
            (Class::Control, Class::Ad) => cm.fp += 1,
            (Class::Ad, Class::Control) => cm.fn_ += 1,
            (Class::Control, Class::Control) => cm.tn += 1,
        }
    }
    Ok(cm)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when a zero denominator forced one of the values to 0.
    #[serde(default)]
    pub undefined: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Averaged {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    pub ad: ClassMetrics,
    pub non_ad: ClassMetrics,
    /// Unweighted mean of the two classes; the single-row summary figure.
    pub macro_avg: Averaged,
    pub averaging: String,
}

fn ratio(num: usize, den: usize) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

fn class_metrics(hit: usize, false_pos: usize, false_neg: usize) -> ClassMetrics {
    let (precision, p_undef) = ratio(hit, hit + false_pos);
    let (recall, r_undef) = ratio(hit, hit + false_neg);
    let (f1, f_undef) = if precision + recall > 0.0 {
        (2.0 * precision * recall / (precision + recall), false)
    } else {
        (0.0, true)
    };
    ClassMetrics {
        precision,
        recall,
        f1,
        undefined: p_undef || r_undef || f_undef,
    }
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    if cm.total() == 0 {
        return Err(Error::Invalid("metrics of an empty confusion matrix".into()));
    }
    let ad = class_metrics(cm.tp, cm.fp, cm.fn_);
    let non_ad = class_metrics(cm.tn, cm.fn_, cm.fp);
    Ok(MetricsReport {
        confusion: *cm,
        accuracy: (cm.tp + cm.tn) as f64 / cm.total() as f64,
        ad,
        non_ad,
        macro_avg: Averaged {
            precision: (ad.precision + non_ad.precision) / 2.0,
            recall: (ad.recall + non_ad.recall) / 2.0,
            f1: (ad.f1 + non_ad.f1) / 2.0,
        },
        averaging: "macro".into(),
    })
}

/// Rounds half away from zero at `decimals` places, as the result tables do.
pub fn round_half_up(x: f64, decimals: i32) -> f64 {
    let scale = 10f64.powi(decimals);
    let scaled = x.abs() * scale;
    let floor = scaled.floor();
    // Decimal halves such as 0.72725 are not exact in binary and may sit just below .5.
    let rounded = if scaled - floor >= 0.5 - 1e-9 { floor + 1.0 } else { floor };
    (rounded / scale).copysign(x)
}

fn cell(x: f64) -> String {
    format!("{:.4}", round_half_up(x, 4))
}

/// Plain-text table: one block per system, one line per class.
pub fn render_table(systems: &[(&str, &MetricsReport)]) -> String {
    let name_w = systems.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(6);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<name_w$}  {:<6}  {:>8}  {:>9}  {:>6}  {:>8}",
        "System", "Class", "Accuracy", "Precision", "Recall", "F1 Score"
    );
    let _ = writeln!(out, "{}", "-".repeat(name_w + 50));
    for (name, r) in systems {
        for (i, (class, m)) in [("AD", &r.ad), ("non-AD", &r.non_ad)].into_iter().enumerate() {
            let (sys, acc) = if i == 0 {
                (*name, cell(r.accuracy))
            } else {
                ("", String::new())
            };
            let _ = writeln!(
                out,
                "{sys:<name_w$}  {class:<6}  {acc:>8}  {:>9}  {:>6}  {:>8}",
                cell(m.precision),
                cell(m.recall),
                cell(m.f1)
            );
        }
    }
    out
}

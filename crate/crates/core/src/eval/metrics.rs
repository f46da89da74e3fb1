use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::types::Verdict;

/// What to do with generations that contain neither (or both) answers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnparseablePolicy {
    /// Count as the wrong class: fn for a positive gold, fp for a negative one.
    #[default]
    CountIncorrect,
    /// Leave out of the four cells and tally separately.
    Exclude,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    /// Unparseable generations under either policy.
    pub unparseable: u64,
    /// Unparseable generations left out of the four cells.
    pub excluded: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        ConfusionMatrix { tp, fp, fn_, tn, unparseable: 0, excluded: 0 }
    }

    pub fn record(&mut self, verdict: Verdict, gold: u8, policy: UnparseablePolicy) {
        let positive = gold == 1;
        match verdict {
            Verdict::Positive if positive => self.tp += 1,
            Verdict::Positive => self.fp += 1,
            Verdict::Negative if positive => self.fn_ += 1,
            Verdict::Negative => self.tn += 1,
            Verdict::Unparseable => {
                self.unparseable += 1;
                match policy {
                    UnparseablePolicy::CountIncorrect if positive => self.fn_ += 1,
                    UnparseablePolicy::CountIncorrect => self.fp += 1,
                    UnparseablePolicy::Exclude => self.excluded += 1,
                }
            }
        }
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
        self.unparseable += other.unparseable;
        self.excluded += other.excluded;
    }

    /// Queries counted in the four cells.
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Every scored query, excluded ones included.
    pub fn queries(&self) -> u64 {
        self.total() + self.excluded
    }
}

pub fn confusion(verdicts: &[Verdict], golds: &[u8], policy: UnparseablePolicy) -> Result<ConfusionMatrix, EvalError> {
    if verdicts.len() != golds.len() {
        return Err(EvalError::LengthMismatch { left: verdicts.len(), right: golds.len() });
    }
    let mut cm = ConfusionMatrix::default();
    for (v, g) in verdicts.iter().zip(golds) {
        cm.record(*v, *g, policy);
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    /// Support-weighted mean of the positive- and negative-class F1.
    pub weighted_f1: f64,
    /// tp + fp was 0, so precision is reported as 0.
    pub precision_undefined: bool,
    /// tp + fn was 0, so recall is reported as 0.
    pub recall_undefined: bool,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

fn f1_of(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<Metrics, EvalError> {
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::EmptyConfusion);
    }
    let (precision, precision_undefined) = ratio(cm.tp, cm.tp + cm.fp);
    let (recall, recall_undefined) = ratio(cm.tp, cm.tp + cm.fn_);
    let f1 = f1_of(precision, recall);
    let (neg_p, _) = ratio(cm.tn, cm.tn + cm.fn_);
    let (neg_r, _) = ratio(cm.tn, cm.tn + cm.fp);
    let pos_support = (cm.tp + cm.fn_) as f64;
    let neg_support = (cm.tn + cm.fp) as f64;
    let weighted_f1 = (f1 * pos_support + f1_of(neg_p, neg_r) * neg_support) / total as f64;
    Ok(Metrics {
        precision,
        recall,
        f1,
        accuracy: (cm.tp + cm.tn) as f64 / total as f64,
        weighted_f1,
        precision_undefined,
        recall_undefined,
    })
}

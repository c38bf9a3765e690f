//! Binary classification metrics with per-class precision/recall/F1.

use serde::{Deserialize, Serialize};

use crate::dataio::BinaryLabel;
use crate::error::{Error, Result};

/// Counts with Real as the reference class:
/// rows = gold (real, fake), cols = predicted (real, fake).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp_real: usize,
    pub fn_real: usize,
    pub fp_real: usize,
    pub tn_real: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub acc: f64,
    pub mac_f1: f64,
    pub p_t: f64,
    pub r_t: f64,
    pub f1_t: f64,
    pub p_f: f64,
    pub r_f: f64,
    pub f1_f: f64,
    pub confusion: Confusion,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// All 0/0 ratios are defined as 0.
pub fn compute_metrics(gold: &[BinaryLabel], pred: &[BinaryLabel]) -> Result<MetricsReport> {
    if gold.len() != pred.len() {
        return Err(Error::Metrics(format!(
            "length mismatch: {} gold vs {} predicted",
            gold.len(),
            pred.len()
        )));
    }
    if gold.is_empty() {
        return Err(Error::Metrics("empty evaluation set".to_string()));
    }
    let mut c = Confusion {
        tp_real: 0,
        fn_real: 0,
        fp_real: 0,
        tn_real: 0,
    };
    for (&g, &p) in gold.iter().zip(pred) {
        match (g, p) {
            (BinaryLabel::Real, BinaryLabel::Real) => c.tp_real += 1,
            (BinaryLabel::Real, BinaryLabel::Fake) => c.fn_real += 1,
            (BinaryLabel::Fake, BinaryLabel::Real) => c.fp_real += 1,
            (BinaryLabel::Fake, BinaryLabel::Fake) => c.tn_real += 1,
        }
    }
    let total = gold.len();
    let p_t = ratio(c.tp_real, c.tp_real + c.fp_real);
    let r_t = ratio(c.tp_real, c.tp_real + c.fn_real);
    let p_f = ratio(c.tn_real, c.tn_real + c.fn_real);
    let r_f = ratio(c.tn_real, c.tn_real + c.fp_real);
    let f1_t = f1(p_t, r_t);
    let f1_f = f1(p_f, r_f);
    Ok(MetricsReport {
        acc: ratio(c.tp_real + c.tn_real, total),
        mac_f1: (f1_t + f1_f) / 2.0,
        p_t,
        r_t,
        f1_t,
        p_f,
        r_f,
        f1_f,
        confusion: c,
    })
}

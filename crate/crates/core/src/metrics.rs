//! Out-of-KB and in-KB precision, recall and F1, overall accuracy, and
//! candidate recall@k.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::biencoder::CandidateSet;
use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub tp_o: usize,
    pub fp_o: usize,
    pub fn_o: usize,
    pub tp_in: usize,
    pub fp_in: usize,
    pub fn_in: usize,
    pub accuracy: f64,
    pub p_o: f64,
    pub r_o: f64,
    pub f1_o: f64,
    pub p_in: f64,
    pub r_in: f64,
    pub f1_in: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

impl EvalReport {
    fn from_counts(n: usize, tp_o: usize, fp_o: usize, fn_o: usize, tp_in: usize, fp_in: usize, fn_in: usize) -> Self {
        let p_o = ratio(tp_o, tp_o + fp_o);
        let r_o = ratio(tp_o, tp_o + fn_o);
        let p_in = ratio(tp_in, tp_in + fp_in);
        let r_in = ratio(tp_in, tp_in + fn_in);
        EvalReport {
            n,
            tp_o,
            fp_o,
            fn_o,
            tp_in,
            fp_in,
            fn_in,
            accuracy: ratio(tp_o + tp_in, n),
            p_o,
            r_o,
            f1_o: f1(p_o, r_o),
            p_in,
            r_in,
            f1_in: f1(p_in, r_in),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub const COLUMNS: [&'static str; 7] = ["A", "P_o", "R_o", "F1_o", "P_in", "R_in", "F1_in"];

    pub fn row(&self) -> [f64; 7] {
        [self.accuracy, self.p_o, self.r_o, self.f1_o, self.p_in, self.r_in, self.f1_in]
    }
}

/// Writes a header row and one value row, columns right-aligned.
impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in Self::COLUMNS {
            write!(f, "{c:>7}")?;
        }
        writeln!(f)?;
        for v in self.row() {
            write!(f, "{v:>7.4}")?;
        }
        writeln!(f)
    }
}

/// Renders several labelled reports as one aligned table.
pub fn report_table<'a>(rows: impl IntoIterator<Item = (&'a str, &'a EvalReport)>) -> String {
    let rows: Vec<_> = rows.into_iter().collect();
    let w = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(6);
    let mut out = format!("{:<w$}", "method");
    for c in EvalReport::COLUMNS {
        out.push_str(&format!("{c:>8}"));
    }
    out.push('\n');
    for (label, r) in rows {
        out.push_str(&format!("{label:<w$}"));
        for v in r.row() {
            out.push_str(&format!("{v:>8.4}"));
        }
        out.push('\n');
    }
    out
}

pub fn evaluate(preds: &[Label], golds: &[Label]) -> Result<EvalReport> {
    if preds.len() != golds.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} gold labels",
            preds.len(),
            golds.len()
        )));
    }
    let (mut tp_o, mut fp_o, mut fn_o, mut tp_in, mut fp_in, mut fn_in) = (0, 0, 0, 0, 0, 0);
    for (p, g) in preds.iter().zip(golds) {
        match (p.is_nil(), g.is_nil()) {
            (true, true) => tp_o += 1,
            (true, false) => {
                fp_o += 1;
                fn_in += 1;
            }
            (false, true) => {
                fn_o += 1;
                fp_in += 1;
            }
            (false, false) if p == g => tp_in += 1,
            (false, false) => {
                fp_in += 1;
                fn_in += 1;
            }
        }
    }
    Ok(EvalReport::from_counts(preds.len(), tp_o, fp_o, fn_o, tp_in, fp_in, fn_in))
}

/// Fraction of mentions whose gold appears within the first `k'` candidates,
/// for every `k'` from 1 to the largest candidate set.
pub fn recall_at_k<T: Scalar>(sets: &[CandidateSet<T>], golds: &[Label]) -> Result<BTreeMap<usize, f64>> {
    if sets.len() != golds.len() {
        return Err(Error::Shape(format!(
            "{} candidate sets for {} gold labels",
            sets.len(),
            golds.len()
        )));
    }
    let k = sets.iter().map(CandidateSet::len).max().unwrap_or(0);
    let mut first_hit = vec![0usize; k + 1];
    for (s, g) in sets.iter().zip(golds) {
        if let Some(i) = s.position(g) {
            first_hit[i + 1] += 1;
        }
    }
    let mut out = BTreeMap::new();
    let mut hits = 0;
    for (kk, &h) in first_hit.iter().enumerate().skip(1) {
        hits += h;
        out.insert(kk, ratio(hits, sets.len()));
    }
    Ok(out)
}

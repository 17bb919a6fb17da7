use rand::Rng;

use super::{Objective, Parameterized};
use crate::error::Result;
use crate::rng;
use crate::scalar::Scalar;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Gradients smaller than this are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// `(tensor name, flat index, analytic, numeric)` of the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
}

/// Compares analytic gradients with central finite differences on a sample
/// of at least `samples` trainable entries, spread evenly over the tensors.
/// Within each tensor half the picks come from entries with a non-zero
/// analytic gradient, so sparse embedding tables are still exercised.
///
/// Relative error is `|a - n| / max(|a|, |n|, REL_FLOOR)`.
pub fn grad_check<T, M, O>(model: &M, objective: &O, samples: usize, seed: u64) -> Result<GradCheckReport>
where
    T: Scalar,
    M: Parameterized<T>,
    O: Objective<T, M>,
{
    let (_, grads) = objective.loss_and_grad(model)?;
    let analytic: Vec<Vec<T>> = grads.params().into_iter().map(|(_, t)| t.to_vec()).collect();
    let infos: Vec<_> = model.params().into_iter().map(|(i, t)| (i, t.len())).collect();

    let trainable: Vec<Vec<usize>> = infos
        .iter()
        .map(|(info, len)| {
            let w = info.row_width();
            (0..*len).filter(|&i| !info.freeze.is_frozen(i, w)).collect()
        })
        .collect();
    let live_tensors = trainable.iter().filter(|t| !t.is_empty()).count().max(1);
    let per_tensor = samples.div_ceil(live_tensors).max(1);

    let mut rng = rng::seeded(seed);
    let mut picks: Vec<(usize, usize)> = Vec::new();
    for (t, idx) in trainable.iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        let nonzero: Vec<usize> = idx
            .iter()
            .copied()
            .filter(|&i| analytic[t][i] != T::zero())
            .collect();
        for s in 0..per_tensor.min(idx.len()) {
            let i = if s % 2 == 0 && !nonzero.is_empty() {
                nonzero[rng.random_range(0..nonzero.len())]
            } else {
                idx[rng.random_range(0..idx.len())]
            };
            picks.push((t, i));
        }
    }

    let h = T::lit(FD_STEP);
    let mut probe = model.clone();
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst: None,
    };
    for (t, i) in picks {
        let orig = probe.params_mut()[t][i];
        probe.params_mut()[t][i] = orig + h;
        let plus = objective.loss(&probe)?;
        probe.params_mut()[t][i] = orig - h;
        let minus = objective.loss(&probe)?;
        probe.params_mut()[t][i] = orig;

        let numeric = ((plus - minus) / (h + h)).to_f64_lossy();
        let a = analytic[t][i].to_f64_lossy();
        let denom = a.abs().max(numeric.abs()).max(REL_FLOOR);
        let rel = (a - numeric).abs() / denom;
        report.checked += 1;
        if rel > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(rel);
            if rel >= report.max_rel_error {
                report.worst = Some((infos[t].0.name.clone(), i, a, numeric));
            }
        }
    }
    Ok(report)
}

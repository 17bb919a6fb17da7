use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::biencoder::{prefixed, CandidateSet};
use crate::corpus::{DatasetSplit, MentionRecord};
use crate::crossencoder::{
    apply_freeze, backward_pairs, bce_with_logit, build_examples, ce_loss, decide, forward_pairs,
    CrossConfig, CrossExample, CrossModel, CrossSettings, CrossTrainLog, PredictMode, Prediction,
};
use crate::error::{Error, Result};
use crate::neural::{self, AdamW, EncoderConfig, Freeze, Objective, ParamInfo, Parameterized};
use crate::ontology::Ontology;
use crate::rng;
use crate::scalar::{dot, sigmoid, softmax, Scalar};
use crate::textproc::Vocabulary;

use super::features::{mes_features, N_MES};

/// `scores ++ [min, max, mean]`.
pub fn dynamic_features<T: Scalar>(scores: &[T]) -> Vec<T> {
    let mut out = scores.to_vec();
    if scores.is_empty() {
        out.extend([T::zero(); 3]);
        return out;
    }
    let min = scores.iter().copied().fold(T::infinity(), T::min);
    let max = scores.iter().copied().fold(T::neg_infinity(), T::max);
    let avg = scores.iter().copied().sum::<T>() / T::lit(scores.len() as f64);
    out.extend([min, max, avg]);
    out
}

/// `σ([f_dme, f_mes, v_m] · w)`.
pub fn dynamic_nil_score<T: Scalar>(scores: &[T], mes: &[f64; N_MES], mention_vec: &[T], w: &[T]) -> Result<T> {
    Ok(sigmoid(head_logit(scores, mes, mention_vec, w)?))
}

fn head_logit<T: Scalar>(scores: &[T], mes: &[f64; N_MES], mention_vec: &[T], w: &[T]) -> Result<T> {
    let expected = scores.len() + 3 + N_MES + mention_vec.len();
    if w.len() != expected {
        return Err(Error::Shape(format!(
            "head has {} weights, input has {expected} features",
            w.len()
        )));
    }
    let k3 = scores.len() + 3;
    let mes_t: Vec<T> = mes.iter().map(|&x| T::lit(x)).collect();
    Ok(dot(&dynamic_features(scores), &w[..k3])
        + dot(&mes_t, &w[k3..k3 + N_MES])
        + dot(mention_vec, &w[k3 + N_MES..]))
}

/// A cross-encoder whose NIL decision comes from a logistic head over the
/// candidate scores, the string-match features and the mention encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct FtCrossModel<T> {
    pub cross: CrossModel<T>,
    pub head: Vec<T>,
    /// Number of candidate scores the head reads.
    pub k: usize,
}

impl<T: Scalar> FtCrossModel<T> {
    pub fn new(cross: CrossModel<T>, k: usize) -> Self {
        let n = k + 3 + N_MES + cross.dim();
        FtCrossModel {
            cross,
            head: vec![T::zero(); n],
            k,
        }
    }

    fn check_k(&self, n: usize) -> Result<()> {
        if n != self.k {
            return Err(Error::Shape(format!(
                "feature head expects {} candidates, got {n}",
                self.k
            )));
        }
        Ok(())
    }

    pub fn predict(
        &self,
        mention: usize,
        rec: &MentionRecord,
        cands: &CandidateSet<T>,
        vocab: &Vocabulary,
        onto: &Ontology,
    ) -> Result<Prediction<T>> {
        self.check_k(cands.len())?;
        let raw = self.cross.raw_scores(rec, cands, vocab, onto)?;
        let v = self.cross.mention_vector(rec, vocab)?;
        let s = dynamic_nil_score(&raw, &mes_features(&rec.mention, onto), &v, &self.head)?;
        decide(mention, cands, &raw, PredictMode::NilHead(T::lit(0.5)), Some(s))
    }
}

impl<T: Scalar> Parameterized<T> for FtCrossModel<T> {
    fn params(&self) -> Vec<(ParamInfo, &[T])> {
        let mut out = prefixed("cross.", self.cross.params());
        let freeze = if self.cross.freeze_heads { Freeze::All } else { Freeze::None };
        out.push((ParamInfo::new("ft_head", &[self.head.len()], freeze), &self.head));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = self.cross.params_mut();
        out.push(&mut self.head);
        out
    }
}

#[derive(Debug, Clone)]
pub struct FtExample {
    pub cross: CrossExample,
    pub mes: [f64; N_MES],
}

/// Ranking cross entropy (optional) plus `λ·BCE` of the feature head,
/// averaged over examples.
#[derive(Debug, Clone)]
pub struct FtObjective {
    pub examples: Vec<FtExample>,
    pub lambda_nil: f64,
    pub with_ranking: bool,
}

impl<T: Scalar> Objective<T, FtCrossModel<T>> for FtObjective {
    fn loss(&self, model: &FtCrossModel<T>) -> Result<T> {
        Ok(self.loss_and_grad(model)?.0)
    }

    fn loss_and_grad(&self, model: &FtCrossModel<T>) -> Result<(T, FtCrossModel<T>)> {
        let mut grads = model.zeros_like();
        let inv = T::one() / T::lit(self.examples.len().max(1) as f64);
        let lambda = T::lit(self.lambda_nil);
        let mut total = T::zero();
        for ex in &self.examples {
            let cx = &ex.cross;
            model.check_k(cx.pairs.len())?;
            let pass = forward_pairs(&model.cross, &cx.pairs)?;
            let (v, cache) = model.cross.encoder.forward(&cx.mention)?;
            let k = pass.scores.len();
            let mut d_scores = vec![T::zero(); k];
            if self.with_ranking && cx.rank {
                total += ce_loss(&pass.scores, cx.gold)?;
                let p = softmax(&pass.scores);
                for (i, (d, pi)) in d_scores.iter_mut().zip(p).enumerate() {
                    *d += (pi - if i == cx.gold { T::one() } else { T::zero() }) * inv;
                }
            }
            let z = head_logit(&pass.scores, &ex.mes, &v, &model.head)?;
            total += lambda * bce_with_logit(z, cx.is_nil);
            let y = if cx.is_nil { T::one() } else { T::zero() };
            let dz = lambda * (sigmoid(z) - y) * inv;

            let f_dme = dynamic_features(&pass.scores);
            let w = &model.head;
            let k3 = k + 3;
            for (g, &x) in grads.head.iter_mut().zip(&f_dme) {
                *g += dz * x;
            }
            for (g, &x) in grads.head[k3..k3 + N_MES].iter_mut().zip(&ex.mes) {
                *g += dz * T::lit(x);
            }
            for (g, &x) in grads.head[k3 + N_MES..].iter_mut().zip(&v) {
                *g += dz * x;
            }
            if k > 0 {
                let argmin = (0..k).fold(0, |b, i| if pass.scores[i] < pass.scores[b] { i } else { b });
                let argmax = (0..k).fold(0, |b, i| if pass.scores[i] > pass.scores[b] { i } else { b });
                let kt = T::lit(k as f64);
                for (i, d) in d_scores.iter_mut().enumerate() {
                    *d += dz * (w[i] + w[k + 2] / kt);
                }
                d_scores[argmin] += dz * w[k];
                d_scores[argmax] += dz * w[k + 1];
            }
            backward_pairs(&model.cross, &pass, &d_scores, &mut grads.cross);
            let dv: Vec<T> = w[k3 + N_MES..].iter().map(|&wi| dz * wi).collect();
            model.cross.encoder.backward(&cache, &dv, &mut grads.cross.encoder);
        }
        neural::mask_frozen(model, &mut grads);
        Ok((total * inv, grads))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FtConfig {
    pub cross: CrossConfig,
    pub k: usize,
}

pub fn train_ft_cross<T: Scalar>(
    train: &DatasetSplit,
    candidates: &[CandidateSet<T>],
    onto: &Ontology,
    vocab: &Vocabulary,
    config: &FtConfig,
) -> Result<(FtCrossModel<T>, CrossTrainLog)> {
    let cc = &config.cross;
    let mut settings = cc.settings;
    settings.nil_head = false;
    let mut cross = CrossModel::new(cc.encoder.clone(), settings)?;
    apply_freeze(&mut cross, cc, vocab);
    let mut model = FtCrossModel::new(cross, config.k);
    let (examples, _, gold_miss_rate) =
        build_examples(&model.cross, train, candidates, onto, vocab, cc.nil_training)?;
    let examples: Vec<FtExample> = examples
        .into_iter()
        .zip(&train.records)
        .map(|(cross, rec)| FtExample {
            cross,
            mes: mes_features(&rec.mention, onto),
        })
        .collect();
    log::info!("feature-head gold-miss rate {gold_miss_rate:.4}");

    let total = (cc.epochs * examples.len().div_ceil(cc.batch_size.max(1))) as u64;
    let mut optim = AdamW::new(cc.optim).with_total_steps(total);
    let mut rng = rng::derived(cc.seed, 3);
    let mut log = CrossTrainLog {
        gold_miss_rate,
        ..Default::default()
    };
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in 0..cc.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut n = 0usize;
        for chunk in order.chunks(cc.batch_size.max(1)) {
            let objective = FtObjective {
                examples: chunk.iter().map(|&i| examples[i].clone()).collect(),
                lambda_nil: settings.lambda_nil,
                with_ranking: true,
            };
            let (loss, grads) = objective.loss_and_grad(&model)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite { batch: log.steps });
            }
            optim.step(&mut model, &grads)?;
            total += loss.to_f64_lossy();
            n += 1;
            log.steps += 1;
        }
        let mean = total / n.max(1) as f64;
        log::info!("feature-head epoch {}: mean loss {mean:.5}", epoch + 1);
        log.epoch_losses.push(mean);
    }
    Ok((model, log))
}

#[derive(Serialize, Deserialize)]
struct FtHeader {
    encoder: EncoderConfig,
    settings: CrossSettings,
    k: usize,
}

pub fn save_ft_cross<T: Scalar>(path: impl AsRef<Path>, model: &FtCrossModel<T>) -> Result<()> {
    let header = serde_json::to_string(&FtHeader {
        encoder: model.cross.encoder.config().clone(),
        settings: model.cross.settings,
        k: model.k,
    })
    .expect("header serializes");
    neural::save_checkpoint(path, &header, model)
}

pub fn load_ft_cross<T: Scalar>(path: impl AsRef<Path>) -> Result<FtCrossModel<T>> {
    let ck = neural::read_checkpoint(path.as_ref())?;
    let h: FtHeader =
        serde_json::from_str(&ck.header).map_err(|e| Error::Validation(format!("bad checkpoint header: {e}")))?;
    let mut model = FtCrossModel::new(CrossModel::new(h.encoder, h.settings)?, h.k);
    ck.load_into(&mut model)?;
    Ok(model)
}

/// Input for the head of one mention, exposed for tests.
pub fn ft_example(rec: &MentionRecord, cross: CrossExample, onto: &Ontology) -> FtExample {
    FtExample {
        cross,
        mes: mes_features(&rec.mention, onto),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pooling_layout() {
        assert_eq!(dynamic_features(&[1.0, 2.0, 3.0]), vec![1.0, 2.0, 3.0, 1.0, 3.0, 2.0]);
    }

    #[test]
    fn zero_head_gives_half() {
        let w = vec![0.0; 3 + 3 + N_MES + 4];
        let s = dynamic_nil_score(&[0.3, -1.0, 2.0], &[1.0; N_MES], &[0.1; 4], &w).unwrap();
        assert_eq!(s, 0.5);
        assert!(dynamic_nil_score(&[0.3], &[1.0; N_MES], &[0.1; 4], &w).is_err());
    }
}

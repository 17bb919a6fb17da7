//! Candidate ranking over mention–entity pairs, with a NIL candidate that is
//! scored like any entity and an optional NIL classification head trained
//! jointly with the ranking loss.

use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::biencoder::{prefixed, CandidateSet};
use crate::corpus::{DatasetSplit, Label, MentionRecord};
use crate::error::{Error, Result};
use crate::neural::{
    self, AdamW, Encoder, EncoderConfig, ForwardCache, Freeze, Objective, OptimConfig, ParamInfo,
    Parameterized,
};
use crate::ontology::Ontology;
use crate::rng;
use crate::scalar::{dot, log_sum_exp, sigmoid, softmax, Scalar};
use crate::textproc::{
    mention_input, pair_input, EntityText, NilRepresentation, TokenizedInput, Vocabulary,
    MENTION_MAX_LEN, PAIR_MAX_LEN,
};

pub const DEFAULT_LAMBDA_NIL: f64 = 0.25;
pub const BCE_EPS: f64 = 1e-12;

/// `−log softmax(scores)[gold]`.
pub fn ce_loss<T: Scalar>(scores: &[T], gold: usize) -> Result<T> {
    if gold >= scores.len() {
        return Err(Error::InvalidArgument(format!(
            "gold index {gold} out of range for {} candidates",
            scores.len()
        )));
    }
    Ok(log_sum_exp(scores) - scores[gold])
}

/// Binary cross entropy of probability `s` against label `y`, with `s`
/// clamped to `[ε, 1−ε]`.
pub fn nil_bce_loss<T: Scalar>(s: T, y: bool) -> T {
    let eps = T::lit(BCE_EPS);
    let s = s.max(eps).min(T::one() - eps);
    if y {
        -s.ln()
    } else {
        -(T::one() - s).ln()
    }
}

/// BCE from a logit, stable for large magnitudes.
pub(crate) fn bce_with_logit<T: Scalar>(logit: T, y: bool) -> T {
    // -log σ(z) = softplus(-z); -log(1-σ(z)) = softplus(z)
    let z = if y { -logit } else { logit };
    if z > T::zero() {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub fn joint_loss<T: Scalar>(ce: T, bce: T, lambda_nil: T) -> T {
    ce + lambda_nil * bce
}

/// Settings that change how inputs are built or scored; stored with the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossSettings {
    pub synonym_concat: bool,
    pub nil_rep: NilRepresentation,
    pub nil_head: bool,
    pub lambda_nil: f64,
}

impl Default for CrossSettings {
    fn default() -> Self {
        CrossSettings {
            synonym_concat: true,
            nil_rep: NilRepresentation::Token,
            nil_head: false,
            lambda_nil: DEFAULT_LAMBDA_NIL,
        }
    }
}

/// Shared encoder with a linear ranking head and a linear NIL head.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossModel<T> {
    pub encoder: Encoder<T>,
    pub rank_head: Vec<T>,
    pub nil_head: Vec<T>,
    pub settings: CrossSettings,
    pub freeze_heads: bool,
}

impl<T: Scalar> CrossModel<T> {
    pub fn new(mut config: EncoderConfig, settings: CrossSettings) -> Result<Self> {
        config.max_len = config.max_len.max(PAIR_MAX_LEN);
        let encoder = Encoder::new(config.clone())?;
        let mut rng = rng::derived(config.seed, 7);
        let normal = Normal::new(0.0, 0.02).expect("valid normal");
        let d = config.embed_dim;
        let rank_head = (0..d).map(|_| T::lit(normal.sample(&mut rng))).collect();
        let nil_head = if settings.nil_head {
            (0..d).map(|_| T::lit(normal.sample(&mut rng))).collect()
        } else {
            vec![T::zero(); d]
        };
        Ok(CrossModel {
            encoder,
            rank_head,
            nil_head,
            settings,
            freeze_heads: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.encoder.dim()
    }

    pub fn lambda(&self) -> T {
        T::lit(self.settings.lambda_nil)
    }

    pub fn pair_target<'a>(&self, label: &Label, onto: &'a Ontology) -> Result<EntityText<'a>> {
        match label {
            Label::Nil => Ok(EntityText::Nil(self.settings.nil_rep)),
            Label::Entity(id) => onto
                .get(id)
                .map(|e| EntityText::entity(e, self.settings.synonym_concat))
                .ok_or_else(|| Error::validation(format!("candidate {id} not in ontology"))),
        }
    }

    pub fn pair_inputs(
        &self,
        rec: &MentionRecord,
        cands: &CandidateSet<T>,
        vocab: &Vocabulary,
        onto: &Ontology,
    ) -> Result<Vec<TokenizedInput>> {
        cands
            .labels()
            .map(|l| Ok(pair_input(rec, self.pair_target(l, onto)?, vocab, PAIR_MAX_LEN)))
            .collect()
    }

    /// Raw ranking scores `v·W` of every candidate, in candidate order.
    pub fn raw_scores(
        &self,
        rec: &MentionRecord,
        cands: &CandidateSet<T>,
        vocab: &Vocabulary,
        onto: &Ontology,
    ) -> Result<Vec<T>> {
        self.pair_inputs(rec, cands, vocab, onto)?
            .iter()
            .map(|p| Ok(dot(&self.encoder.encode(p)?, &self.rank_head)))
            .collect()
    }

    /// Encoding of the mention alone, the input of the NIL head.
    pub fn mention_vector(&self, rec: &MentionRecord, vocab: &Vocabulary) -> Result<Vec<T>> {
        self.encoder.encode(&mention_input(rec, vocab, MENTION_MAX_LEN))
    }

    pub fn nil_probability(&self, mention_vec: &[T]) -> T {
        sigmoid(dot(mention_vec, &self.nil_head))
    }
}

impl<T: Scalar> Parameterized<T> for CrossModel<T> {
    fn params(&self) -> Vec<(ParamInfo, &[T])> {
        let d = self.dim();
        let mut out = prefixed("encoder.", self.encoder.params());
        let head = |on: bool| if on && !self.freeze_heads { Freeze::None } else { Freeze::All };
        out.push((ParamInfo::new("rank_head", &[d], head(true)), &self.rank_head));
        out.push((
            ParamInfo::new("nil_head", &[d], head(self.settings.nil_head)),
            &self.nil_head,
        ));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = self.encoder.params_mut();
        out.push(&mut self.rank_head);
        out.push(&mut self.nil_head);
        out
    }
}

/// One training mention: its candidate pairs, the gold position among them,
/// and the mention-only input for the NIL head.
#[derive(Debug, Clone)]
pub struct CrossExample {
    pub pairs: Vec<TokenizedInput>,
    pub gold: usize,
    pub mention: TokenizedInput,
    pub is_nil: bool,
    /// Whether the ranking loss applies; false for skipped NIL examples.
    pub rank: bool,
}

pub(crate) struct PairPass<T> {
    pub vectors: Vec<Vec<T>>,
    pub caches: Vec<ForwardCache<T>>,
    pub scores: Vec<T>,
}

pub(crate) fn forward_pairs<T: Scalar>(model: &CrossModel<T>, pairs: &[TokenizedInput]) -> Result<PairPass<T>> {
    let mut vectors = Vec::with_capacity(pairs.len());
    let mut caches = Vec::with_capacity(pairs.len());
    for p in pairs {
        let (v, c) = model.encoder.forward(p)?;
        vectors.push(v);
        caches.push(c);
    }
    let scores = vectors.iter().map(|v| dot(v, &model.rank_head)).collect();
    Ok(PairPass {
        vectors,
        caches,
        scores,
    })
}

/// Backpropagates `d_scores` (one per pair) through the ranking head and encoder.
pub(crate) fn backward_pairs<T: Scalar>(
    model: &CrossModel<T>,
    pass: &PairPass<T>,
    d_scores: &[T],
    grads: &mut CrossModel<T>,
) {
    for ((v, cache), &ds) in pass.vectors.iter().zip(&pass.caches).zip(d_scores) {
        if ds == T::zero() {
            continue;
        }
        for (g, &x) in grads.rank_head.iter_mut().zip(v) {
            *g += ds * x;
        }
        let dv: Vec<T> = model.rank_head.iter().map(|&w| ds * w).collect();
        model.encoder.backward(cache, &dv, &mut grads.encoder);
    }
}

/// Ranking cross entropy plus `λ·BCE` of the NIL head, averaged over examples.
#[derive(Debug, Clone)]
pub struct CrossObjective {
    pub examples: Vec<CrossExample>,
}

impl CrossObjective {
    fn example_loss<T: Scalar>(model: &CrossModel<T>, ex: &CrossExample) -> Result<T> {
        let mut loss = T::zero();
        if ex.rank {
            let pass = forward_pairs(model, &ex.pairs)?;
            loss += ce_loss(&pass.scores, ex.gold)?;
        }
        if model.settings.nil_head {
            let v = model.encoder.encode(&ex.mention)?;
            loss += model.lambda() * bce_with_logit(dot(&v, &model.nil_head), ex.is_nil);
        }
        Ok(loss)
    }
}

impl<T: Scalar> Objective<T, CrossModel<T>> for CrossObjective {
    fn loss(&self, model: &CrossModel<T>) -> Result<T> {
        let mut total = T::zero();
        for ex in &self.examples {
            total += Self::example_loss(model, ex)?;
        }
        Ok(total / T::lit(self.examples.len().max(1) as f64))
    }

    fn loss_and_grad(&self, model: &CrossModel<T>) -> Result<(T, CrossModel<T>)> {
        let mut grads = model.zeros_like();
        let mut total = T::zero();
        let inv = T::one() / T::lit(self.examples.len().max(1) as f64);
        for ex in &self.examples {
            if ex.rank {
                let pass = forward_pairs(model, &ex.pairs)?;
                total += ce_loss(&pass.scores, ex.gold)?;
                let mut d = softmax(&pass.scores);
                d[ex.gold] -= T::one();
                d.iter_mut().for_each(|x| *x *= inv);
                backward_pairs(model, &pass, &d, &mut grads);
            }
            if model.settings.nil_head {
                let (v, cache) = model.encoder.forward(&ex.mention)?;
                let logit = dot(&v, &model.nil_head);
                let lambda = model.lambda();
                total += lambda * bce_with_logit(logit, ex.is_nil);
                let y = if ex.is_nil { T::one() } else { T::zero() };
                let dl = lambda * (sigmoid(logit) - y) * inv;
                for (g, &x) in grads.nil_head.iter_mut().zip(&v) {
                    *g += dl * x;
                }
                let dv: Vec<T> = model.nil_head.iter().map(|&w| dl * w).collect();
                model.encoder.backward(&cache, &dv, &mut grads.encoder);
            }
        }
        neural::mask_frozen(model, &mut grads);
        Ok((total * inv, grads))
    }
}

/// How NIL-labelled training mentions and the NIL anchor embedding are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum NilTraining {
    /// NIL mentions train the ranking loss; the anchor embedding is updated.
    #[default]
    FineTuned,
    /// Anchor embedding frozen; NIL mentions skip the ranking loss.
    Fixed,
    /// NIL mentions skip the ranking loss; anchor left trainable. This is the
    /// plain in-KB ranker used with a score threshold.
    InKbOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossConfig {
    pub encoder: EncoderConfig,
    pub optim: OptimConfig,
    pub epochs: usize,
    /// Mentions per optimizer step.
    pub batch_size: usize,
    pub settings: CrossSettings,
    pub nil_training: NilTraining,
    pub freeze_all: bool,
    pub seed: u64,
}

impl CrossConfig {
    pub fn new(vocab_size: usize) -> Self {
        CrossConfig {
            encoder: EncoderConfig::new(vocab_size, PAIR_MAX_LEN),
            optim: OptimConfig::default(),
            epochs: 4,
            batch_size: 1,
            settings: CrossSettings::default(),
            nil_training: NilTraining::FineTuned,
            freeze_all: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CrossTrainLog {
    pub epoch_losses: Vec<f64>,
    /// Fraction of training mentions whose gold was missing from the
    /// candidates and had to be injected.
    pub gold_miss_rate: f64,
    pub steps: usize,
}

/// Gold position within `cands`, injecting the gold entity in place of the
/// lowest-scored non-NIL candidate when retrieval missed it. Returns the
/// (possibly modified) set, the gold index and whether injection happened.
pub fn ensure_gold<T: Scalar>(cands: &CandidateSet<T>, gold: &Label) -> Result<(CandidateSet<T>, usize, bool)> {
    if !cands.contains(&Label::Nil) {
        return Err(Error::validation(format!(
            "candidate set of mention {} does not contain NIL",
            cands.mention
        )));
    }
    if let Some(i) = cands.position(gold) {
        return Ok((cands.clone(), i, false));
    }
    let victim = cands
        .entries
        .iter()
        .enumerate()
        .filter(|(_, c)| !c.label.is_nil())
        .min_by(|a, b| {
            a.1.score
                .partial_cmp(&b.1.score)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| b.0.cmp(&a.0))
        })
        .map(|(i, _)| i);
    let mut out = cands.clone();
    match victim {
        Some(i) => {
            out.entries[i].label = gold.clone();
            Ok((out, i, true))
        }
        None => {
            out.entries.push(crate::biencoder::Candidate {
                label: gold.clone(),
                score: T::neg_infinity(),
            });
            let i = out.entries.len() - 1;
            Ok((out, i, true))
        }
    }
}

pub(crate) fn build_examples<T: Scalar>(
    model: &CrossModel<T>,
    train: &DatasetSplit,
    candidates: &[CandidateSet<T>],
    onto: &Ontology,
    vocab: &Vocabulary,
    nil_training: NilTraining,
) -> Result<(Vec<CrossExample>, Vec<CandidateSet<T>>, f64)> {
    if candidates.len() != train.len() {
        return Err(Error::Shape(format!(
            "{} candidate sets for {} training mentions",
            candidates.len(),
            train.len()
        )));
    }
    let mut misses = 0usize;
    let mut examples = Vec::with_capacity(train.len());
    let mut sets = Vec::with_capacity(train.len());
    for (rec, cands) in train.records.iter().zip(candidates) {
        let (cands, gold, injected) = ensure_gold(cands, &rec.gold)?;
        misses += injected as usize;
        let is_nil = rec.gold.is_nil();
        examples.push(CrossExample {
            pairs: model.pair_inputs(rec, &cands, vocab, onto)?,
            gold,
            mention: mention_input(rec, vocab, MENTION_MAX_LEN),
            is_nil,
            rank: !(is_nil && nil_training != NilTraining::FineTuned),
        });
        sets.push(cands);
    }
    let rate = misses as f64 / train.len().max(1) as f64;
    Ok((examples, sets, rate))
}

pub fn train_crossencoder<T: Scalar>(
    train: &DatasetSplit,
    candidates: &[CandidateSet<T>],
    onto: &Ontology,
    vocab: &Vocabulary,
    config: &CrossConfig,
) -> Result<(CrossModel<T>, CrossTrainLog)> {
    let mut model = CrossModel::new(config.encoder.clone(), config.settings)?;
    apply_freeze(&mut model, config, vocab);
    let (examples, _, gold_miss_rate) =
        build_examples(&model, train, candidates, onto, vocab, config.nil_training)?;
    log::info!("cross-encoder gold-miss rate {gold_miss_rate:.4}");

    let total = (config.epochs * examples.len().div_ceil(config.batch_size.max(1))) as u64;
    let mut optim = AdamW::new(config.optim).with_total_steps(total);
    let mut rng = rng::derived(config.seed, 2);
    let mut log = CrossTrainLog {
        gold_miss_rate,
        ..Default::default()
    };
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut n = 0usize;
        for chunk in order.chunks(config.batch_size.max(1)) {
            let objective = CrossObjective {
                examples: chunk.iter().map(|&i| examples[i].clone()).collect(),
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
        log::info!("cross-encoder epoch {}: mean loss {mean:.5}", epoch + 1);
        log.epoch_losses.push(mean);
    }
    Ok((model, log))
}

pub(crate) fn apply_freeze<T: Scalar>(model: &mut CrossModel<T>, config: &CrossConfig, vocab: &Vocabulary) {
    if config.freeze_all {
        model.encoder.freeze = neural::EncoderFreeze::everything();
        model.freeze_heads = true;
    }
    if config.nil_training == NilTraining::Fixed {
        let anchor = config.settings.nil_rep.anchor_token(vocab);
        model.encoder.freeze.tokens.push(anchor);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PredictMode<T> {
    /// Highest normalized score wins.
    Argmax,
    /// NIL when every non-NIL candidate scores below the threshold.
    Threshold(T),
    /// NIL when the NIL head's probability reaches the threshold (0.5 by default).
    NilHead(T),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<T> {
    pub mention: usize,
    pub predicted: Label,
    /// Normalized score of the predicted label among the candidates.
    pub score: T,
    pub candidate_scores: Vec<(Label, T)>,
    pub is_nil_prob: Option<T>,
}

/// Index of the best candidate; ties go to NIL, then to the smaller id.
fn best_index<T: Scalar>(labels: &[&Label], scores: &[T], skip_nil: bool) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, (l, &s)) in labels.iter().zip(scores).enumerate() {
        if skip_nil && l.is_nil() {
            continue;
        }
        best = match best {
            None => Some(i),
            Some(b) if s > scores[b] || (s == scores[b] && l < &labels[b]) => Some(i),
            keep => keep,
        };
    }
    best
}

/// Turns raw candidate scores into a prediction. The candidate set must
/// contain NIL.
pub fn decide<T: Scalar>(
    mention: usize,
    cands: &CandidateSet<T>,
    raw_scores: &[T],
    mode: PredictMode<T>,
    is_nil_prob: Option<T>,
) -> Result<Prediction<T>> {
    if !cands.contains(&Label::Nil) {
        return Err(Error::validation(format!(
            "candidate set of mention {mention} does not contain NIL"
        )));
    }
    if raw_scores.len() != cands.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} candidates",
            raw_scores.len(),
            cands.len()
        )));
    }
    let norm = softmax(raw_scores);
    let labels: Vec<&Label> = cands.labels().collect();
    let nil_at = cands.position(&Label::Nil).expect("checked above");
    let best_in_kb = best_index(&labels, &norm, true);
    let chosen = match mode {
        PredictMode::Argmax => best_index(&labels, &norm, false),
        PredictMode::Threshold(th) => {
            let all_below = labels
                .iter()
                .zip(&norm)
                .filter(|(l, _)| !l.is_nil())
                .all(|(_, &p)| p < th);
            if all_below {
                Some(nil_at)
            } else {
                best_in_kb
            }
        }
        PredictMode::NilHead(th) => {
            let p = is_nil_prob.ok_or_else(|| {
                Error::InvalidArgument("nil_head mode needs a model with the NIL head enabled".into())
            })?;
            if p >= th {
                Some(nil_at)
            } else {
                best_in_kb
            }
        }
    }
    .unwrap_or(nil_at);
    Ok(Prediction {
        mention,
        predicted: labels[chosen].clone(),
        score: norm[chosen],
        candidate_scores: labels.iter().map(|&l| l.clone()).zip(norm.iter().copied()).collect(),
        is_nil_prob,
    })
}

pub fn predict<T: Scalar>(
    model: &CrossModel<T>,
    rec: &MentionRecord,
    cands: &CandidateSet<T>,
    mode: PredictMode<T>,
    vocab: &Vocabulary,
    onto: &Ontology,
) -> Result<Prediction<T>> {
    let raw = model.raw_scores(rec, cands, vocab, onto)?;
    let is_nil_prob = if model.settings.nil_head {
        Some(model.nil_probability(&model.mention_vector(rec, vocab)?))
    } else {
        None
    };
    decide(cands.mention, cands, &raw, mode, is_nil_prob)
}

/// Raw scores and NIL probabilities for every mention, computed in parallel.
#[derive(Debug, Clone)]
pub struct ScoredSplit<T> {
    pub candidates: Vec<CandidateSet<T>>,
    pub raw_scores: Vec<Vec<T>>,
    pub nil_probs: Vec<Option<T>>,
}

impl<T: Scalar> ScoredSplit<T> {
    pub fn decide_all(&self, mode: PredictMode<T>) -> Result<Vec<Prediction<T>>> {
        self.candidates
            .iter()
            .zip(&self.raw_scores)
            .zip(&self.nil_probs)
            .enumerate()
            .map(|(i, ((c, s), p))| decide(i, c, s, mode, *p))
            .collect()
    }
}

pub fn score_split<T: Scalar>(
    model: &CrossModel<T>,
    records: &[MentionRecord],
    candidates: &[CandidateSet<T>],
    vocab: &Vocabulary,
    onto: &Ontology,
) -> Result<ScoredSplit<T>> {
    if records.len() != candidates.len() {
        return Err(Error::Shape(format!(
            "{} candidate sets for {} mentions",
            candidates.len(),
            records.len()
        )));
    }
    let scored = records
        .par_iter()
        .zip(candidates.par_iter())
        .map(|(rec, c)| {
            let raw = model.raw_scores(rec, c, vocab, onto)?;
            let p = if model.settings.nil_head {
                Some(model.nil_probability(&model.mention_vector(rec, vocab)?))
            } else {
                None
            };
            Ok((raw, p))
        })
        .collect::<Result<Vec<_>>>()?;
    let (raw_scores, nil_probs) = scored.into_iter().unzip();
    Ok(ScoredSplit {
        candidates: candidates.to_vec(),
        raw_scores,
        nil_probs,
    })
}

#[derive(Serialize, Deserialize)]
struct CrossHeader {
    encoder: EncoderConfig,
    settings: CrossSettings,
}

pub fn save_crossencoder<T: Scalar>(path: impl AsRef<Path>, model: &CrossModel<T>) -> Result<()> {
    let header = serde_json::to_string(&CrossHeader {
        encoder: model.encoder.config().clone(),
        settings: model.settings,
    })
    .expect("header serializes");
    neural::save_checkpoint(path, &header, model)
}

pub fn load_crossencoder<T: Scalar>(path: impl AsRef<Path>) -> Result<CrossModel<T>> {
    let ck = neural::read_checkpoint(path.as_ref())?;
    let h: CrossHeader = serde_json::from_str(&ck.header)
        .map_err(|e| Error::validation(format!("bad checkpoint header: {e}")))?;
    let mut model = CrossModel::new(h.encoder, h.settings)?;
    ck.load_into(&mut model)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::biencoder::Candidate;

    fn cands(labels: &[&str]) -> CandidateSet<f64> {
        CandidateSet {
            mention: 0,
            entries: labels
                .iter()
                .enumerate()
                .map(|(i, l)| Candidate {
                    label: Label::parse(l),
                    score: -(i as f64),
                })
                .collect(),
            nil_score: 0.0,
        }
    }

    #[test]
    fn ce_loss_values() {
        assert!((ce_loss(&[0.0, 0.0], 0).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert_eq!(ce_loss(&[3.7], 0).unwrap(), 0.0);
        let e = std::f64::consts::E;
        let expected = -(e * e / (e * e + e + 1.0)).ln();
        assert!((ce_loss(&[2.0, 1.0, 0.0], 0).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 0.4076).abs() < 1e-4);
        assert!(ce_loss(&[1.0], 1).is_err());
    }

    #[test]
    fn bce_values() {
        assert!((nil_bce_loss(0.5, true) - 2f64.ln()).abs() < 1e-12);
        assert!(nil_bce_loss(1.0 - 1e-15, true) < 1e-11);
        assert!((nil_bce_loss(0.25f64, false) - 0.2877).abs() < 1e-4);
        assert!(nil_bce_loss(0.0f64, true).is_finite());
        for &z in &[-8.0f64, -2.0, 0.0, 0.7, 8.0] {
            for y in [true, false] {
                let direct = nil_bce_loss(sigmoid(z), y);
                assert!((bce_with_logit(z, y) - direct).abs() < 1e-9, "z={z} y={y}");
            }
        }
    }

    #[test]
    fn joint_loss_values() {
        assert_eq!(joint_loss(0.4076f64, 0.2877, 0.0), 0.4076);
        assert!((joint_loss(0.4076f64, 0.2877, 0.25) - 0.4795).abs() < 1e-4);
    }

    #[test]
    fn threshold_mode_rejects_low_confidence() {
        let c = cands(&["A", "NIL"]);
        // softmax([ln .94, ln .06]) = [.94, .06]
        let raw = [0.94f64.ln(), 0.06f64.ln()];
        let p = decide(0, &c, &raw, PredictMode::Threshold(0.95), None).unwrap();
        assert_eq!(p.predicted, Label::Nil);
        let p = decide(0, &c, &raw, PredictMode::Threshold(0.9), None).unwrap();
        assert_eq!(p.predicted, Label::entity("A"));
        assert!((p.score - 0.94).abs() < 1e-12);
    }

    #[test]
    fn argmax_and_ties() {
        let c = cands(&["B", "A", "NIL"]);
        assert_eq!(decide(0, &c, &[0.0, 0.0, 1.0], PredictMode::Argmax, None).unwrap().predicted, Label::Nil);
        assert_eq!(
            decide(0, &c, &[1.0, 1.0, 0.0], PredictMode::Argmax, None).unwrap().predicted,
            Label::entity("A")
        );
        assert_eq!(decide(0, &c, &[1.0, 0.0, 1.0], PredictMode::Argmax, None).unwrap().predicted, Label::Nil);
    }

    #[test]
    fn nil_head_mode() {
        let c = cands(&["A", "B", "NIL"]);
        let raw = [3.0, 1.0, 0.0];
        let p = decide(0, &c, &raw, PredictMode::NilHead(0.5), Some(0.882)).unwrap();
        assert_eq!(p.predicted, Label::Nil);
        let p = decide(0, &c, &raw, PredictMode::NilHead(0.5), Some(0.2)).unwrap();
        assert_eq!(p.predicted, Label::entity("A"));
        assert!(decide(0, &c, &raw, PredictMode::NilHead(0.5), None).is_err());
    }

    #[test]
    fn missing_nil_is_rejected() {
        let c = cands(&["A", "B"]);
        assert!(decide(0, &c, &[0.0, 0.0], PredictMode::Argmax, None).is_err());
        assert!(ensure_gold(&c, &Label::entity("A")).is_err());
    }

    #[test]
    fn gold_injection_replaces_lowest_non_nil() {
        let c = cands(&["A", "B", "C", "NIL"]);
        let (out, i, injected) = ensure_gold(&c, &Label::entity("Z")).unwrap();
        assert!(injected);
        assert_eq!(i, 2);
        assert_eq!(out.labels().map(Label::as_str).collect::<Vec<_>>(), ["A", "B", "Z", "NIL"]);
        let (same, i, injected) = ensure_gold(&c, &Label::Nil).unwrap();
        assert!(!injected);
        assert_eq!(i, 3);
        assert_eq!(same, c);
    }
}

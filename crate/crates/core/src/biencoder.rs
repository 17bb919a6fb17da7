//! Candidate generation with a dual encoder.
//!
//! Mentions and entity texts are embedded by two encoders and compared by dot
//! product. The entity index holds one row per entity name, one per synonym
//! when augmentation is on, and a single NIL row rendered from the NIL
//! template, so NIL competes with real entities during retrieval.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{DatasetSplit, Label, MentionRecord};
use crate::error::{Error, Result};
use crate::neural::{
    self, AdamW, Encoder, EncoderConfig, Objective, OptimConfig, ParamInfo, Parameterized,
};
use crate::ontology::Ontology;
use crate::rng;
use crate::scalar::{dot, Scalar};
use crate::textproc::{
    entity_text_input, mention_input, EntityText, NilRepresentation, TokenizedInput, Vocabulary,
    ENTITY_MAX_LEN, MENTION_MAX_LEN,
};

pub const DEFAULT_MARGIN: f64 = 0.2;
pub const DEFAULT_K: usize = 10;
/// Candidate counts swept when tuning k.
pub const K_GRID: [usize; 7] = [5, 10, 20, 50, 100, 150, 200];

/// `Σ_j max(margin − gold + neg_j, 0)`.
pub fn triplet_loss<T: Scalar>(gold: T, negatives: &[T], margin: T) -> T {
    negatives
        .iter()
        .map(|&n| (margin - gold + n).max(T::zero()))
        .sum()
}

/// Mention and entity encoders. With `entity: None` one encoder embeds both
/// sides; the mention and entity markers in the inputs tell them apart.
#[derive(Debug, Clone, PartialEq)]
pub struct BiEncoder<T> {
    pub mention: Encoder<T>,
    pub entity: Option<Encoder<T>>,
}

impl<T: Scalar> BiEncoder<T> {
    /// Separate towers start from the same weights (same seed and shape), so
    /// identical text embeds identically before training.
    pub fn new(mut config: EncoderConfig, shared: bool) -> Result<Self> {
        config.max_len = ENTITY_MAX_LEN;
        let mention = Encoder::new(config)?;
        let entity = if shared { None } else { Some(mention.clone()) };
        Ok(BiEncoder { mention, entity })
    }

    pub fn is_shared(&self) -> bool {
        self.entity.is_none()
    }

    pub fn entity_encoder(&self) -> &Encoder<T> {
        self.entity.as_ref().unwrap_or(&self.mention)
    }

    pub fn dim(&self) -> usize {
        self.mention.dim()
    }

    pub fn encode_mention(&self, rec: &MentionRecord, vocab: &Vocabulary) -> Result<Vec<T>> {
        self.mention.encode(&mention_input(rec, vocab, MENTION_MAX_LEN))
    }

    /// Embeds many mentions in parallel; output order matches input order.
    pub fn encode_mentions(&self, records: &[MentionRecord], vocab: &Vocabulary) -> Result<Vec<Vec<T>>> {
        records
            .par_iter()
            .map(|r| self.encode_mention(r, vocab))
            .collect()
    }
}

impl<T: Scalar> Parameterized<T> for BiEncoder<T> {
    fn params(&self) -> Vec<(ParamInfo, &[T])> {
        let mut out = prefixed("mention.", self.mention.params());
        if let Some(e) = &self.entity {
            out.extend(prefixed("entity.", e.params()));
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = self.mention.params_mut();
        if let Some(e) = &mut self.entity {
            out.extend(e.params_mut());
        }
        out
    }
}

pub(crate) fn prefixed<'a, T>(prefix: &str, params: Vec<(ParamInfo, &'a [T])>) -> Vec<(ParamInfo, &'a [T])> {
    params
        .into_iter()
        .map(|(mut info, t)| {
            info.name = format!("{prefix}{}", info.name);
            (info, t)
        })
        .collect()
}

/// One in-batch training example: a mention and the text of its positive
/// target. Examples sharing a `key` are never used as each other's negatives.
#[derive(Debug, Clone)]
pub struct TripletExample {
    pub mention: TokenizedInput,
    pub target: TokenizedInput,
    pub key: Label,
}

/// Triplet loss over a batch with in-batch negatives, averaged over mentions.
#[derive(Debug, Clone)]
pub struct TripletObjective<T> {
    pub examples: Vec<TripletExample>,
    pub margin: T,
}

impl<T: Scalar> TripletObjective<T> {
    fn score_matrix(&self, vm: &[Vec<T>], ve: &[Vec<T>]) -> Vec<Vec<T>> {
        vm.iter()
            .map(|m| ve.iter().map(|e| dot(m, e)).collect())
            .collect()
    }

    fn negatives(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let key = &self.examples[i].key;
        (0..self.examples.len()).filter(move |&j| j != i && &self.examples[j].key != key)
    }

    fn loss_from_scores(&self, s: &[Vec<T>]) -> T {
        let b = self.examples.len();
        if b == 0 {
            return T::zero();
        }
        let total: T = (0..b)
            .map(|i| {
                let negs: Vec<T> = self.negatives(i).map(|j| s[i][j]).collect();
                triplet_loss(s[i][i], &negs, self.margin)
            })
            .sum();
        total / T::lit(b as f64)
    }
}

impl<T: Scalar> Objective<T, BiEncoder<T>> for TripletObjective<T> {
    fn loss(&self, model: &BiEncoder<T>) -> Result<T> {
        let vm = self
            .examples
            .iter()
            .map(|e| model.mention.encode(&e.mention))
            .collect::<Result<Vec<_>>>()?;
        let ve = self
            .examples
            .iter()
            .map(|e| model.entity_encoder().encode(&e.target))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.loss_from_scores(&self.score_matrix(&vm, &ve)))
    }

    fn loss_and_grad(&self, model: &BiEncoder<T>) -> Result<(T, BiEncoder<T>)> {
        let b = self.examples.len();
        let mut fm = Vec::with_capacity(b);
        let mut fe = Vec::with_capacity(b);
        for e in &self.examples {
            fm.push(model.mention.forward(&e.mention)?);
            fe.push(model.entity_encoder().forward(&e.target)?);
        }
        let vm: Vec<Vec<T>> = fm.iter().map(|(v, _)| v.clone()).collect();
        let ve: Vec<Vec<T>> = fe.iter().map(|(v, _)| v.clone()).collect();
        let s = self.score_matrix(&vm, &ve);
        let loss = self.loss_from_scores(&s);

        let inv_b = T::one() / T::lit(b.max(1) as f64);
        let d = model.dim();
        let mut dvm = vec![vec![T::zero(); d]; b];
        let mut dve = vec![vec![T::zero(); d]; b];
        for i in 0..b {
            for j in self.negatives(i) {
                if self.margin - s[i][i] + s[i][j] > T::zero() {
                    // d/ds_ii = -1, d/ds_ij = +1
                    for t in 0..d {
                        dvm[i][t] += inv_b * (ve[j][t] - ve[i][t]);
                        dve[j][t] += inv_b * vm[i][t];
                        dve[i][t] -= inv_b * vm[i][t];
                    }
                }
            }
        }
        let mut grads = model.zeros_like();
        for i in 0..b {
            if dvm[i].iter().any(|&x| x != T::zero()) {
                model.mention.backward(&fm[i].1, &dvm[i], &mut grads.mention);
            }
            if dve[i].iter().any(|&x| x != T::zero()) {
                let g = match &mut grads.entity {
                    Some(g) => g,
                    None => &mut grads.mention,
                };
                model.entity_encoder().backward(&fe[i].1, &dve[i], g);
            }
        }
        Ok((loss, grads))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiEncoderConfig {
    pub encoder: EncoderConfig,
    pub optim: OptimConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub margin: f64,
    pub synonym_augmentation: bool,
    pub nil_rep: NilRepresentation,
    /// One encoder for both sides instead of two towers.
    pub shared_encoder: bool,
    pub seed: u64,
}

impl BiEncoderConfig {
    pub fn new(vocab_size: usize) -> Self {
        BiEncoderConfig {
            encoder: EncoderConfig::new(vocab_size, ENTITY_MAX_LEN),
            optim: OptimConfig::default(),
            epochs: 3,
            batch_size: 32,
            margin: DEFAULT_MARGIN,
            synonym_augmentation: true,
            nil_rep: NilRepresentation::Token,
            shared_encoder: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainLog {
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

/// Positive targets for one record: NIL template, or the entity name row plus
/// (with augmentation) one row per synonym.
fn targets<'a>(
    rec: &MentionRecord,
    onto: &'a Ontology,
    nil_rep: NilRepresentation,
    augmentation: bool,
) -> Result<Vec<EntityText<'a>>> {
    match &rec.gold {
        Label::Nil => Ok(vec![EntityText::Nil(nil_rep)]),
        Label::Entity(id) => {
            let e = onto.get(id).ok_or_else(|| {
                Error::validation(format!("gold id {id} of mention {:?} not in ontology", rec.mention))
            })?;
            let mut out = vec![EntityText::entity(e, false)];
            if augmentation {
                out.extend((0..e.synonyms.len()).map(|index| EntityText::Synonym { entity: e, index }));
            }
            Ok(out)
        }
    }
}

pub fn train_biencoder<T: Scalar>(
    train: &DatasetSplit,
    onto: &Ontology,
    vocab: &Vocabulary,
    config: &BiEncoderConfig,
) -> Result<(BiEncoder<T>, TrainLog)> {
    let mut examples = Vec::new();
    for rec in &train.records {
        let mention = mention_input(rec, vocab, MENTION_MAX_LEN);
        for t in targets(rec, onto, config.nil_rep, config.synonym_augmentation)? {
            examples.push(TripletExample {
                mention: mention.clone(),
                target: entity_text_input(t, vocab, ENTITY_MAX_LEN),
                key: rec.gold.clone(),
            });
        }
    }
    let mut model = BiEncoder::new(config.encoder.clone(), config.shared_encoder)?;
    let batch_size = config.batch_size.max(1);
    let total = (config.epochs * examples.len().div_ceil(batch_size)) as u64;
    let mut optim = AdamW::new(config.optim).with_total_steps(total);
    let mut rng = rng::derived(config.seed, 1);
    let mut log = TrainLog::default();
    let margin = T::lit(config.margin);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(batch_size) {
            let objective = TripletObjective {
                examples: chunk.iter().map(|&i| examples[i].clone()).collect(),
                margin,
            };
            let (loss, grads) = objective.loss_and_grad(&model)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite { batch: log.steps });
            }
            optim.step(&mut model, &grads)?;
            total += loss.to_f64_lossy();
            batches += 1;
            log.steps += 1;
        }
        let mean = total / batches.max(1) as f64;
        log::info!("bi-encoder epoch {}: mean triplet loss {mean:.5}", epoch + 1);
        log.epoch_losses.push(mean);
    }
    Ok((model, log))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowVariant {
    Name,
    Synonym(usize),
    Nil,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexRow<T> {
    pub label: Label,
    pub variant: RowVariant,
    pub vector: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntityIndex<T> {
    pub dim: usize,
    pub rows: Vec<IndexRow<T>>,
}

const INDEX_MAGIC: &[u8; 8] = b"NLIDX001";

impl<T: Scalar> EntityIndex<T> {
    /// One row per entity name, per synonym when `augmentation` is on, and one
    /// NIL row. Rows follow ontology id order, NIL last.
    pub fn build(
        model: &BiEncoder<T>,
        onto: &Ontology,
        vocab: &Vocabulary,
        nil_rep: NilRepresentation,
        augmentation: bool,
    ) -> Result<Self> {
        let mut specs: Vec<(Label, RowVariant, EntityText<'_>)> = Vec::new();
        for e in onto.entities() {
            specs.push((Label::entity(&e.id), RowVariant::Name, EntityText::entity(e, false)));
            if augmentation {
                for index in 0..e.synonyms.len() {
                    specs.push((
                        Label::entity(&e.id),
                        RowVariant::Synonym(index),
                        EntityText::Synonym { entity: e, index },
                    ));
                }
            }
        }
        specs.push((Label::Nil, RowVariant::Nil, EntityText::Nil(nil_rep)));
        let rows = specs
            .into_par_iter()
            .map(|(label, variant, text)| {
                let vector = model.entity_encoder().encode(&entity_text_input(text, vocab, ENTITY_MAX_LEN))?;
                Ok(IndexRow {
                    label,
                    variant,
                    vector,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EntityIndex {
            dim: model.dim(),
            rows,
        })
    }

    pub fn nil_row(&self) -> Option<&IndexRow<T>> {
        self.rows.iter().find(|r| r.variant == RowVariant::Nil)
    }

    /// Distinct labels (NIL included when indexed).
    pub fn unique_labels(&self) -> usize {
        let mut seen: Vec<&Label> = self.rows.iter().map(|r| &r.label).collect();
        seen.sort();
        seen.dedup();
        seen.len()
    }

    /// Binary layout: magic `NLIDX001`, u64 dim, u64 row count, then per row
    /// u32 id length + id bytes, u8 variant (0 name, 1 synonym, 2 NIL), u32
    /// synonym index, u64 element offset; then all vectors as packed f64 LE.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut write = || -> std::io::Result<()> {
            w.write_all(INDEX_MAGIC)?;
            w.write_all(&(self.dim as u64).to_le_bytes())?;
            w.write_all(&(self.rows.len() as u64).to_le_bytes())?;
            for (i, row) in self.rows.iter().enumerate() {
                let id = row.label.as_str().as_bytes();
                w.write_all(&(id.len() as u32).to_le_bytes())?;
                w.write_all(id)?;
                let (kind, syn) = match row.variant {
                    RowVariant::Name => (0u8, 0u32),
                    RowVariant::Synonym(s) => (1, s as u32),
                    RowVariant::Nil => (2, 0),
                };
                w.write_all(&[kind])?;
                w.write_all(&syn.to_le_bytes())?;
                w.write_all(&((i * self.dim) as u64).to_le_bytes())?;
            }
            for row in &self.rows {
                for x in &row.vector {
                    w.write_all(&x.to_f64_lossy().to_le_bytes())?;
                }
            }
            w.flush()
        };
        write().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let bad = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg,
        };
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
        let mut cur = Cursor { bytes: &bytes, pos: 0 };
        if cur.take(8).ok_or_else(|| bad("truncated".into()))? != INDEX_MAGIC {
            return Err(bad("not an index file (bad magic)".into()));
        }
        let trunc = || bad("truncated index file".to_string());
        let dim = cur.u64().ok_or_else(trunc)? as usize;
        let n = cur.u64().ok_or_else(trunc)? as usize;
        let mut meta = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let len = cur.u32().ok_or_else(trunc)? as usize;
            let id = String::from_utf8(cur.take(len).ok_or_else(trunc)?.to_vec())
                .map_err(|_| bad("row id is not UTF-8".into()))?;
            let kind = cur.take(1).ok_or_else(trunc)?[0];
            let syn = cur.u32().ok_or_else(trunc)? as usize;
            let offset = cur.u64().ok_or_else(trunc)? as usize;
            let (label, variant) = match kind {
                0 => (Label::Entity(id), RowVariant::Name),
                1 => (Label::Entity(id), RowVariant::Synonym(syn)),
                2 => (Label::Nil, RowVariant::Nil),
                k => return Err(bad(format!("unknown row variant {k}"))),
            };
            meta.push((label, variant, offset));
        }
        let base = cur.pos;
        let mut rows = Vec::with_capacity(n);
        for (label, variant, offset) in meta {
            let start = base + offset * 8;
            let raw = bytes
                .get(start..start + dim * 8)
                .ok_or_else(|| bad(format!("vector offset {offset} out of range")))?;
            let vector = raw
                .chunks_exact(8)
                .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
                .collect();
            rows.push(IndexRow {
                label,
                variant,
                vector,
            });
        }
        Ok(EntityIndex { dim, rows })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }

    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate<T> {
    pub label: Label,
    pub score: T,
}

/// Top-k candidates of one mention, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet<T> {
    pub mention: usize,
    pub entries: Vec<Candidate<T>>,
    /// Raw score of the NIL row; used when NIL has to be inserted.
    pub nil_score: T,
}

impl<T: Scalar> CandidateSet<T> {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, label: &Label) -> bool {
        self.entries.iter().any(|c| &c.label == label)
    }

    pub fn position(&self, label: &Label) -> Option<usize> {
        self.entries.iter().position(|c| &c.label == label)
    }

    pub fn labels(&self) -> impl Iterator<Item = &Label> {
        self.entries.iter().map(|c| &c.label)
    }

    /// The same set with scores converted to another scalar type.
    pub fn cast<U: Scalar>(&self) -> CandidateSet<U> {
        CandidateSet {
            mention: self.mention,
            entries: self
                .entries
                .iter()
                .map(|c| Candidate {
                    label: c.label.clone(),
                    score: U::lit(c.score.to_f64_lossy()),
                })
                .collect(),
            nil_score: U::lit(self.nil_score.to_f64_lossy()),
        }
    }

    /// First `k` entries (the set itself when it is shorter).
    pub fn truncated(&self, k: usize) -> Self {
        CandidateSet {
            mention: self.mention,
            entries: self.entries.iter().take(k).cloned().collect(),
            nil_score: self.nil_score,
        }
    }
}

/// Sorts `(label, score)` pairs best first; equal scores go to the smaller
/// label, with NIL ordered before every entity id.
pub fn rank_scores<T: Scalar>(scores: impl IntoIterator<Item = (Label, T)>) -> Vec<Candidate<T>> {
    let mut v: Vec<Candidate<T>> = scores
        .into_iter()
        .map(|(label, score)| Candidate { label, score })
        .collect();
    v.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.label.cmp(&b.label))
    });
    v
}

/// Scores every index row by dot product, keeps each label's best row, and
/// returns the `k` best labels. When fewer than `k` labels exist, all of them
/// are returned (the set is shorter than `k`, never padded).
pub fn retrieve_topk<T: Scalar>(
    mention_vec: &[T],
    index: &EntityIndex<T>,
    k: usize,
    mention: usize,
) -> Result<CandidateSet<T>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if mention_vec.len() != index.dim {
        return Err(Error::Shape(format!(
            "mention vector has {} dims, index has {}",
            mention_vec.len(),
            index.dim
        )));
    }
    let mut best: HashMap<&Label, T> = HashMap::new();
    let mut nil_score = T::neg_infinity();
    for row in &index.rows {
        let s = dot(mention_vec, &row.vector);
        if row.variant == RowVariant::Nil {
            nil_score = nil_score.max(s);
        }
        best.entry(&row.label)
            .and_modify(|b| *b = b.max(s))
            .or_insert(s);
    }
    let mut entries = rank_scores(best.into_iter().map(|(l, s)| (l.clone(), s)));
    entries.truncate(k);
    Ok(CandidateSet {
        mention,
        entries,
        nil_score: if nil_score.is_finite() { nil_score } else { T::zero() },
    })
}

/// Embeds and retrieves for every record, in parallel; output is in record order.
pub fn retrieve_all<T: Scalar>(
    model: &BiEncoder<T>,
    index: &EntityIndex<T>,
    records: &[MentionRecord],
    vocab: &Vocabulary,
    k: usize,
) -> Result<Vec<CandidateSet<T>>> {
    records
        .par_iter()
        .enumerate()
        .map(|(i, r)| retrieve_topk(&model.encode_mention(r, vocab)?, index, k, i))
        .collect()
}

/// Ensures NIL is a candidate by replacing the k-th entry. Sets that already
/// contain NIL are returned unchanged; an empty set gains a single NIL entry.
pub fn insert_nil<T: Scalar>(cands: &CandidateSet<T>) -> CandidateSet<T> {
    let mut out = cands.clone();
    if out.contains(&Label::Nil) {
        return out;
    }
    let nil = Candidate {
        label: Label::Nil,
        score: out.nil_score,
    };
    match out.entries.last_mut() {
        Some(last) => *last = nil,
        None => out.entries.push(nil),
    }
    out
}

/// Exhaustive per-label maximum over rows, used as a reference in tests.
pub fn aggregate_scores<T: Scalar>(mention_vec: &[T], index: &EntityIndex<T>) -> BTreeMap<Label, T> {
    let mut out: BTreeMap<Label, T> = BTreeMap::new();
    for row in &index.rows {
        let s = dot(mention_vec, &row.vector);
        out.entry(row.label.clone())
            .and_modify(|b| *b = b.max(s))
            .or_insert(s);
    }
    out
}

#[derive(Serialize, Deserialize)]
struct BiHeader {
    encoder: EncoderConfig,
    shared: bool,
}

pub fn save_biencoder<T: Scalar>(path: impl AsRef<Path>, model: &BiEncoder<T>) -> Result<()> {
    let header = serde_json::to_string(&BiHeader {
        encoder: model.mention.config().clone(),
        shared: model.is_shared(),
    })
    .expect("header serializes");
    neural::save_checkpoint(path, &header, model)
}

pub fn load_biencoder<T: Scalar>(path: impl AsRef<Path>) -> Result<BiEncoder<T>> {
    let ck = neural::read_checkpoint(path.as_ref())?;
    let h: BiHeader = serde_json::from_str(&ck.header)
        .map_err(|e| Error::validation(format!("bad checkpoint header: {e}")))?;
    let mut model = BiEncoder::new(h.encoder, h.shared)?;
    ck.load_into(&mut model)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cset(labels: &[&str]) -> CandidateSet<f64> {
        CandidateSet {
            mention: 0,
            entries: labels
                .iter()
                .enumerate()
                .map(|(i, l)| Candidate {
                    label: Label::parse(l),
                    score: 1.0 - i as f64 * 0.1,
                })
                .collect(),
            nil_score: -0.5,
        }
    }

    #[test]
    fn triplet_loss_values() {
        assert_eq!(triplet_loss(1.0, &[0.5], 0.2), 0.0);
        assert!((triplet_loss(0.3f64, &[0.4], 0.2) - 0.3).abs() < 1e-12);
        assert!((triplet_loss(0.3f64, &[0.4, 0.1], 0.2) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn insert_nil_cases() {
        let out = insert_nil(&cset(&["A", "B", "C"]));
        assert_eq!(out.labels().map(Label::as_str).collect::<Vec<_>>(), ["A", "B", "NIL"]);
        assert_eq!(out.entries[2].score, -0.5);
        let has = cset(&["A", "NIL", "C"]);
        assert_eq!(insert_nil(&has), has);
        let one = insert_nil(&cset(&["A"]));
        assert_eq!(one.labels().map(Label::as_str).collect::<Vec<_>>(), ["NIL"]);
        assert_eq!(insert_nil(&out), out);
    }

    fn index(rows: &[(&str, RowVariant, [f64; 2])]) -> EntityIndex<f64> {
        EntityIndex {
            dim: 2,
            rows: rows
                .iter()
                .map(|(l, v, x)| IndexRow {
                    label: Label::parse(l),
                    variant: *v,
                    vector: x.to_vec(),
                })
                .collect(),
        }
    }

    #[test]
    fn synonym_rows_aggregate_by_max() {
        let idx = index(&[
            ("A", RowVariant::Name, [0.7, 0.0]),
            ("A", RowVariant::Synonym(0), [0.9, 0.0]),
            ("B", RowVariant::Name, [0.5, 0.0]),
            ("NIL", RowVariant::Nil, [0.1, 0.0]),
        ]);
        let c = retrieve_topk(&[1.0, 0.0], &idx, 2, 0).unwrap();
        assert_eq!(c.entries[0].label, Label::entity("A"));
        assert!((c.entries[0].score - 0.9).abs() < 1e-12);
        assert_eq!(c.len(), 2);
        assert!((c.nil_score - 0.1).abs() < 1e-12);
    }

    #[test]
    fn nil_row_can_win_and_k_larger_than_labels_returns_all() {
        let idx = index(&[
            ("A", RowVariant::Name, [0.1, 0.0]),
            ("NIL", RowVariant::Nil, [0.0, 1.0]),
        ]);
        let c = retrieve_topk(&[0.0, 1.0], &idx, 1, 0).unwrap();
        assert_eq!(c.labels().collect::<Vec<_>>(), [&Label::Nil]);
        assert_eq!(retrieve_topk(&[0.0, 1.0], &idx, 10, 0).unwrap().len(), 2);
        assert!(retrieve_topk(&[0.0, 1.0], &idx, 0, 0).is_err());
    }

    #[test]
    fn ties_prefer_smaller_label() {
        let idx = index(&[
            ("B", RowVariant::Name, [1.0, 0.0]),
            ("A", RowVariant::Name, [1.0, 0.0]),
            ("NIL", RowVariant::Nil, [1.0, 0.0]),
        ]);
        let c = retrieve_topk(&[1.0, 0.0], &idx, 3, 0).unwrap();
        assert_eq!(c.labels().map(Label::as_str).collect::<Vec<_>>(), ["NIL", "A", "B"]);
    }

    #[test]
    fn index_file_round_trip() {
        let idx = index(&[
            ("A", RowVariant::Name, [0.25, -1.5]),
            ("A", RowVariant::Synonym(3), [1e-300, 7.0]),
            ("NIL", RowVariant::Nil, [0.0, 1.0]),
        ]);
        let f = tempfile::NamedTempFile::new().unwrap();
        idx.save(f.path()).unwrap();
        assert_eq!(EntityIndex::<f64>::load(f.path()).unwrap(), idx);
    }
}

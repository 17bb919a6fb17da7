//! Building blocks shared by the commands: loading inputs, model
//! configuration from a [`RunConfig`], candidate generation, scoring and the
//! predictions file.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nilink::baselines::{
    extract_features, ft_classifier, ft_link, load_ft_cross, sieve_link, Bm25Index, FtCrossModel, LogisticModel,
    WordVectors,
};
use nilink::biencoder::{insert_nil, load_biencoder, retrieve_all, BiEncoder, BiEncoderConfig, CandidateSet, EntityIndex};
use nilink::corpus::{load_mentions, SplitName};
use nilink::crossencoder::{
    load_crossencoder, score_split, CrossConfig, CrossModel, CrossSettings, NilTraining, PredictMode, Prediction,
    ScoredSplit,
};
use nilink::metrics::evaluate;
use nilink::neural::{EncoderConfig, OptimConfig};
use nilink::ontology::load_ontology;
use nilink::textproc::{build_vocab, NilRepresentation, Vocabulary, ENTITY_MAX_LEN, PAIR_MAX_LEN};
use nilink::{DatasetSplit, EvalReport, Label, Ontology};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Method, RunConfig, Threshold};
use crate::error::{io_err, CliError, CliResult};
use crate::manifest::Outputs;

/// Scalar used by the neural pipeline. Gradient checks run in `f64`; the
/// trained models are small enough that single precision loses nothing.
pub type P = f32;

pub const VOCAB: &str = "vocab.txt";
pub const BI_CKPT: &str = "bi.ckpt";
pub const INDEX: &str = "index.bin";
pub const CROSS_CKPT: &str = "cross.ckpt";
pub const FT_CKPT: &str = "ft.ckpt";
pub const CLASSIFIER: &str = "ft_classifier.json";
pub const PREDICTIONS: &str = "predictions.jsonl";

pub fn load_onto(path: &Path, out: &mut Outputs) -> CliResult<Ontology> {
    Ok(load_ontology(out.input(path))?)
}

pub fn target_ontology(cfg: &RunConfig, out: &mut Outputs) -> CliResult<Ontology> {
    load_onto(cfg.require("ontology")?, out)
}

pub fn split_name(s: &str) -> CliResult<SplitName> {
    s.parse().map_err(|e: nilink::Error| CliError::usage(e.to_string()))
}

pub fn load_split(cfg: &RunConfig, name: SplitName, out: &mut Outputs) -> CliResult<DatasetSplit> {
    let path = cfg.require(name.as_str())?;
    Ok(load_mentions(out.input(path), name)?)
}

/// Checks that every in-KB gold label exists in the target ontology.
pub fn check_golds(split: &DatasetSplit, onto: &Ontology) -> CliResult<()> {
    for (i, r) in split.records.iter().enumerate() {
        if let Label::Entity(id) = &r.gold {
            if !onto.contains(id) {
                return Err(CliError::validation(format!(
                    "{} mention {} has gold {id}, which is not in the target ontology; build the dataset first",
                    split.name.as_str(),
                    i + 1
                )));
            }
        }
    }
    Ok(())
}

/// Tokens of the ontology texts, the training mentions with their contexts,
/// and every NIL template.
pub fn build_vocabulary(onto: &Ontology, train: &DatasetSplit, min_count: usize) -> Vocabulary {
    let mut texts: Vec<&str> = vec![NilRepresentation::vocabulary_text()];
    for e in onto.entities() {
        texts.extend(e.surface_forms());
        texts.push(&e.definition);
    }
    for r in &train.records {
        texts.extend([r.mention.as_str(), &r.ctxt_l, &r.ctxt_r]);
    }
    build_vocab(texts, min_count)
}

pub fn load_vocab(cfg: &RunConfig, out: &mut Outputs) -> CliResult<Vocabulary> {
    let p = cfg.work_dir()?.join(VOCAB);
    require_artifact(&p, "train-bi")?;
    Ok(Vocabulary::load(out.input(&p))?)
}

fn require_artifact(p: &Path, producer: &str) -> CliResult<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(CliError::validation(format!(
            "missing {}; run {producer} first or point work at its output",
            p.display()
        )))
    }
}

pub fn encoder_config(cfg: &RunConfig, vocab_size: usize, max_len: usize) -> EncoderConfig {
    EncoderConfig {
        vocab_size,
        embed_dim: cfg.embed_dim,
        layers: cfg.layers,
        heads: cfg.heads,
        ffn_dim: cfg.ffn_dim,
        max_len,
        seed: cfg.seed,
    }
}

fn optim(cfg: &RunConfig, lr: f64) -> OptimConfig {
    OptimConfig {
        lr,
        weight_decay: cfg.weight_decay,
        warmup: cfg.warmup,
        ..OptimConfig::default()
    }
}

pub fn bi_config(cfg: &RunConfig, vocab_size: usize) -> BiEncoderConfig {
    BiEncoderConfig {
        encoder: encoder_config(cfg, vocab_size, ENTITY_MAX_LEN),
        optim: optim(cfg, cfg.bi_lr),
        epochs: cfg.bi_epochs,
        batch_size: cfg.bi_batch,
        margin: cfg.margin,
        synonym_augmentation: cfg.syn_bi,
        nil_rep: cfg.nil_rep.0,
        shared_encoder: cfg.shared_encoder,
        seed: cfg.seed,
    }
}

pub fn cross_config(cfg: &RunConfig, vocab_size: usize) -> CrossConfig {
    let nil_training = match cfg.method {
        Method::ThBlink | Method::Bm25CrossTh => NilTraining::InKbOnly,
        Method::NilrepBlink => NilTraining::Fixed,
        _ if cfg.freeze_nil => NilTraining::Fixed,
        _ => NilTraining::FineTuned,
    };
    CrossConfig {
        encoder: encoder_config(cfg, vocab_size, PAIR_MAX_LEN),
        optim: optim(cfg, cfg.cross_lr),
        epochs: cfg.cross_epochs,
        batch_size: cfg.cross_batch,
        settings: CrossSettings {
            synonym_concat: cfg.syn_cross,
            nil_rep: cfg.nil_rep.0,
            nil_head: cfg.method == Method::BlinkoutJoint,
            lambda_nil: cfg.lambda_nil,
        },
        nil_training,
        freeze_all: cfg.freeze_all,
        seed: cfg.seed,
    }
}

/// Word vectors from `word_vectors`, or co-occurrence vectors built from the
/// ontology and training texts.
pub fn word_vectors(cfg: &RunConfig, onto: &Ontology, train: &DatasetSplit, out: &mut Outputs) -> CliResult<WordVectors> {
    if let Some(p) = &cfg.word_vectors.0 {
        return Ok(WordVectors::load(out.input(p))?);
    }
    let mut texts: Vec<String> = Vec::new();
    for e in onto.entities() {
        texts.extend(e.surface_forms().map(str::to_string));
        texts.push(e.definition.clone());
    }
    for r in &train.records {
        texts.push(format!("{} {} {}", r.ctxt_l, r.mention, r.ctxt_r));
    }
    Ok(WordVectors::from_cooccurrence(texts.iter().map(String::as_str), cfg.wv_dim, cfg.seed))
}

pub fn train_classifier(
    cfg: &RunConfig,
    onto: &Ontology,
    train: &DatasetSplit,
    wv: &WordVectors,
) -> CliResult<LogisticModel> {
    let feats: Vec<Vec<f64>> = train
        .records
        .par_iter()
        .map(|r| extract_features(r, onto, wv, cfg.ctxt_window).to_vec())
        .collect();
    let labels: Vec<bool> = train.records.iter().map(|r| r.gold.is_nil()).collect();
    Ok(ft_classifier(&feats, &labels)?)
}

/// Candidate generator for the methods that re-rank.
pub enum Retriever {
    Bi { model: BiEncoder<P>, index: EntityIndex<P> },
    Bm25(Bm25Index),
}

impl Retriever {
    pub fn load(cfg: &RunConfig, onto: &Ontology, out: &mut Outputs) -> CliResult<Self> {
        if cfg.method == Method::Bm25CrossTh {
            return Ok(Retriever::Bm25(Bm25Index::new(onto)));
        }
        let work = cfg.work_dir()?;
        let (bp, ip) = (work.join(BI_CKPT), work.join(INDEX));
        require_artifact(&bp, "train-bi")?;
        require_artifact(&ip, "index")?;
        Ok(Retriever::Bi {
            model: load_biencoder(out.input(&bp))?,
            index: EntityIndex::load(out.input(&ip))?,
        })
    }

    /// Top-k candidates of every record with NIL guaranteed present.
    pub fn candidates(&self, split: &DatasetSplit, vocab: &Vocabulary, k: usize) -> CliResult<Vec<CandidateSet<P>>> {
        let sets = match self {
            Retriever::Bi { model, index } => retrieve_all(model, index, &split.records, vocab, k)?
                .iter()
                .map(insert_nil)
                .collect(),
            Retriever::Bm25(bm) => split
                .records
                .par_iter()
                .enumerate()
                .map(|(i, r)| bm.rank(&r.mention, k, i).map(|c| c.cast::<P>()))
                .collect::<nilink::Result<Vec<_>>>()?,
        };
        Ok(sets)
    }
}

/// A trained linker ready to predict.
pub enum Linker {
    Cross(CrossModel<P>),
    Ft(FtCrossModel<P>),
    Classifier { model: LogisticModel, wv: WordVectors },
    Sieve,
}

#[derive(Serialize, Deserialize)]
struct ClassifierFile {
    ctxt_window: usize,
    model: LogisticModel,
}

pub fn save_classifier(path: &Path, cfg: &RunConfig, model: &LogisticModel) -> CliResult<()> {
    let text = serde_json::to_string_pretty(&ClassifierFile {
        ctxt_window: cfg.ctxt_window,
        model: model.clone(),
    })
    .expect("classifier serializes");
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

fn load_classifier(path: &Path) -> CliResult<LogisticModel> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let f: ClassifierFile = serde_json::from_str(&text)
        .map_err(|e| CliError::validation(format!("{}: bad classifier file: {e}", path.display())))?;
    Ok(f.model)
}

impl Linker {
    pub fn load(cfg: &RunConfig, onto: &Ontology, out: &mut Outputs) -> CliResult<Self> {
        let work = cfg.work_dir()?;
        Ok(match cfg.method {
            Method::Sieve => Linker::Sieve,
            Method::FtClassifier => {
                let p = work.join(CLASSIFIER);
                require_artifact(&p, "train-cross")?;
                let model = load_classifier(out.input(&p))?;
                let train = load_split(cfg, SplitName::Train, out)?;
                let wv = word_vectors(cfg, onto, &train, out)?;
                Linker::Classifier { model, wv }
            }
            Method::FtBlinkout => {
                let p = work.join(FT_CKPT);
                require_artifact(&p, "train-cross")?;
                Linker::Ft(load_ft_cross(out.input(&p))?)
            }
            _ => {
                let p = work.join(CROSS_CKPT);
                require_artifact(&p, "train-cross")?;
                Linker::Cross(load_crossencoder(out.input(&p))?)
            }
        })
    }

    pub fn needs_candidates(&self) -> bool {
        matches!(self, Linker::Cross(_) | Linker::Ft(_))
    }
}

/// Per-mention scores of a split, from which predictions are decided.
pub enum Scored {
    Cross(ScoredSplit<P>),
    Fixed(Vec<Prediction<P>>),
}

pub fn score(
    linker: &Linker,
    split: &DatasetSplit,
    cands: Option<&[CandidateSet<P>]>,
    vocab: Option<&Vocabulary>,
    onto: &Ontology,
    cfg: &RunConfig,
) -> CliResult<Scored> {
    let need = || CliError::runtime("this method needs candidates and a vocabulary");
    Ok(match linker {
        Linker::Cross(m) => Scored::Cross(score_split(
            m,
            &split.records,
            cands.ok_or_else(need)?,
            vocab.ok_or_else(need)?,
            onto,
        )?),
        Linker::Ft(m) => {
            let (cands, vocab) = (cands.ok_or_else(need)?, vocab.ok_or_else(need)?);
            Scored::Fixed(
                split
                    .records
                    .par_iter()
                    .zip(cands.par_iter())
                    .enumerate()
                    .map(|(i, (r, c))| m.predict(i, r, c, vocab, onto))
                    .collect::<nilink::Result<Vec<_>>>()?,
            )
        }
        Linker::Classifier { model, wv } => Scored::Fixed(
            split
                .records
                .par_iter()
                .enumerate()
                .map(|(i, r)| {
                    let f = extract_features(r, onto, wv, cfg.ctxt_window);
                    cast_prediction(ft_link(i, r, &f, model, onto, wv))
                })
                .collect(),
        ),
        Linker::Sieve => Scored::Fixed(
            split
                .records
                .iter()
                .enumerate()
                .map(|(i, r)| sieve_link::<P>(i, r, onto))
                .collect(),
        ),
    })
}

fn cast_prediction(p: Prediction<f64>) -> Prediction<P> {
    Prediction {
        mention: p.mention,
        predicted: p.predicted,
        score: p.score as P,
        candidate_scores: p.candidate_scores.into_iter().map(|(l, s)| (l, s as P)).collect(),
        is_nil_prob: p.is_nil_prob.map(|s| s as P),
    }
}

pub fn predict_mode(cfg: &RunConfig, th: f64) -> PredictMode<P> {
    match cfg.method {
        Method::ThBlink | Method::Bm25CrossTh => PredictMode::Threshold(th as P),
        Method::BlinkoutJoint => PredictMode::NilHead(cfg.nil_threshold as P),
        _ => PredictMode::Argmax,
    }
}

impl Scored {
    pub fn decide(&self, mode: PredictMode<P>) -> CliResult<Vec<Prediction<P>>> {
        match self {
            Scored::Cross(s) => Ok(s.decide_all(mode)?),
            Scored::Fixed(p) => Ok(p.clone()),
        }
    }
}

pub fn labels(preds: &[Prediction<P>]) -> Vec<Label> {
    preds.iter().map(|p| p.predicted.clone()).collect()
}

/// Threshold from `grid` with the best validation F1_o; ties go to the
/// smaller threshold.
pub fn best_threshold(scored: &Scored, golds: &[Label], grid: &[f64]) -> CliResult<(f64, EvalReport)> {
    let mut best: Option<(f64, EvalReport)> = None;
    let mut grid = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    for th in grid {
        let preds = scored.decide(PredictMode::Threshold(th as P))?;
        let r = evaluate(&labels(&preds), golds)?;
        if best.as_ref().is_none_or(|(_, b)| r.f1_o > b.f1_o) {
            best = Some((th, r));
        }
    }
    best.ok_or_else(|| CliError::validation("empty threshold grid"))
}

/// Resolves the cross-encoder threshold, tuning on the validation split when
/// it is `auto`.
pub fn resolve_threshold(
    cfg: &RunConfig,
    linker: &Linker,
    retriever: Option<&Retriever>,
    vocab: Option<&Vocabulary>,
    onto: &Ontology,
    out: &mut Outputs,
) -> CliResult<f64> {
    match cfg.th_cross {
        Threshold::Fixed(t) => Ok(t),
        Threshold::Auto => {
            let valid = load_split(cfg, SplitName::Valid, out)?;
            let cands = match (retriever, vocab) {
                (Some(r), Some(v)) => Some(r.candidates(&valid, v, cfg.k)?),
                _ => None,
            };
            let scored = score(linker, &valid, cands.as_deref(), vocab, onto, cfg)?;
            let (th, r) = best_threshold(&scored, &valid.golds(), &cfg.th_grid.0)?;
            log::info!("threshold {th} tuned on valid (F1_o {:.4})", r.f1_o);
            Ok(th)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionLine {
    pub i: usize,
    pub pred: String,
    pub score: f64,
    pub is_nil_prob: Option<f64>,
}

pub fn write_predictions(path: &Path, preds: &[Prediction<P>]) -> CliResult<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    for p in preds {
        let line = PredictionLine {
            i: p.mention,
            pred: p.predicted.as_str().to_string(),
            score: f64::from(p.score),
            is_nil_prob: p.is_nil_prob.map(f64::from),
        };
        let text = serde_json::to_string(&line).expect("prediction serializes");
        writeln!(w, "{text}").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Reads a predictions file, returning labels ordered by `i`. Every index
/// in `0..n` must appear exactly once.
pub fn read_predictions(path: &Path) -> CliResult<Vec<Label>> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut lines = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let p: PredictionLine = serde_json::from_str(&line)
            .map_err(|e| CliError::validation(format!("{}:{}: {e}", path.display(), n + 1)))?;
        lines.push(p);
    }
    let mut out: Vec<Option<Label>> = vec![None; lines.len()];
    for p in lines {
        let slot = out
            .get_mut(p.i)
            .ok_or_else(|| CliError::validation(format!("{}: index {} out of range", path.display(), p.i)))?;
        if slot.replace(Label::parse(&p.pred)).is_some() {
            return Err(CliError::validation(format!("{}: index {} repeated", path.display(), p.i)));
        }
    }
    Ok(out.into_iter().map(|l| l.expect("every slot filled")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predictions_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.jsonl");
        let preds = vec![
            Prediction {
                mention: 1,
                predicted: Label::Nil,
                score: 0.75,
                candidate_scores: vec![],
                is_nil_prob: None,
            },
            Prediction {
                mention: 0,
                predicted: Label::entity("E7"),
                score: 0.5,
                candidate_scores: vec![],
                is_nil_prob: Some(0.25),
            },
        ];
        write_predictions(&p, &preds).unwrap();
        assert_eq!(read_predictions(&p).unwrap(), vec![Label::entity("E7"), Label::Nil]);
        fs::write(&p, "{\"i\":0,\"pred\":\"NIL\",\"score\":1.0,\"is_nil_prob\":null}\n{\"i\":0,\"pred\":\"NIL\",\"score\":1.0,\"is_nil_prob\":null}\n").unwrap();
        assert_eq!(read_predictions(&p).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn threshold_ties_go_low() {
        let preds = vec![Prediction {
            mention: 0,
            predicted: Label::Nil,
            score: 1.0,
            candidate_scores: vec![],
            is_nil_prob: None,
        }];
        let (th, r) = best_threshold(&Scored::Fixed(preds), &[Label::Nil], &[0.9, 0.3, 0.5]).unwrap();
        assert_eq!((th, r.f1_o), (0.3, 1.0));
    }
}

//! One function per command. [`dispatch`] validates the configuration,
//! runs the command, writes its manifest, and removes partial outputs when
//! anything fails.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use nilink::baselines::{save_ft_cross, train_ft_cross, FtConfig};
use nilink::biencoder::{save_biencoder, train_biencoder, EntityIndex};
use nilink::corpus::{relabel_nil, split_stats, SplitName};
use nilink::crossencoder::{save_crossencoder, train_crossencoder};
use nilink::metrics::{evaluate, recall_at_k, report_table};
use nilink::ontology::{load_merges, prune, version_diff, MergeMap};
use nilink::synth::{split_records, synth_mentions, synth_ontology, SynthConfig};
use nilink::{DatasetSplit, EvalReport, Label, Ontology};
use serde::Serialize;

use crate::config::{Method, RunConfig, Threshold};
use crate::error::{io_err, CliError, CliResult};
use crate::manifest::{sha256_file, Manifest, Outputs};
use crate::pipeline::{self as pl, Linker, Retriever};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Synth,
    Prune,
    Diff,
    BuildDataset,
    Stats,
    TrainBi,
    Index,
    TrainCross,
    Predict,
    Eval,
    SweepK,
    Run,
}

impl Command {
    pub const ALL: [Command; 12] = [
        Command::Synth,
        Command::Prune,
        Command::Diff,
        Command::BuildDataset,
        Command::Stats,
        Command::TrainBi,
        Command::Index,
        Command::TrainCross,
        Command::Predict,
        Command::Eval,
        Command::SweepK,
        Command::Run,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Prune => "prune",
            Command::Diff => "diff",
            Command::BuildDataset => "build-dataset",
            Command::Stats => "stats",
            Command::TrainBi => "train-bi",
            Command::Index => "index",
            Command::TrainCross => "train-cross",
            Command::Predict => "predict",
            Command::Eval => "eval",
            Command::SweepK => "sweep-k",
            Command::Run => "run",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| CliError::usage(format!("unknown command {s:?}")))
    }
}

/// Path keys a command needs, in the order they are checked.
fn required_inputs(cmd: Command, cfg: &RunConfig) -> Vec<&'static str> {
    let m = cfg.method;
    let split = match cfg.split.as_str() {
        "train" => "train",
        "valid" => "valid",
        _ => "test",
    };
    let mut keys = match cmd {
        Command::Synth => vec![],
        Command::Prune => vec!["ontology"],
        Command::Diff => vec!["ontology", "old_ontology"],
        Command::BuildDataset | Command::Stats | Command::Run => vec!["ontology", "train", "valid", "test"],
        Command::TrainBi | Command::TrainCross => vec!["ontology", "train"],
        Command::Index => vec!["ontology"],
        Command::Predict | Command::SweepK => vec!["ontology", split],
        Command::Eval => vec![split],
    };
    let predicts = matches!(cmd, Command::Predict | Command::SweepK | Command::Run);
    if predicts && m.uses_threshold() && cfg.th_cross == Threshold::Auto {
        keys.push("valid");
    }
    if predicts && m == Method::FtClassifier && cfg.word_vectors.0.is_none() {
        keys.push("train");
    }
    keys.dedup();
    keys
}

/// Method and input checks made before any work starts.
pub fn validate(cmd: Command, cfg: &RunConfig) -> CliResult<()> {
    cfg.validate()?;
    let m = cfg.method;
    let bad = |msg: String| Err(CliError::validation(msg));
    match cmd {
        Command::TrainBi | Command::Index if !m.uses_biencoder() => {
            return bad(format!("method {m} does not use a bi-encoder"));
        }
        Command::TrainCross if m == Method::Sieve => {
            return bad("method sieve has nothing to train".into());
        }
        Command::SweepK if !m.uses_crossencoder() || m == Method::FtBlinkout => {
            return bad(format!("sweep-k needs a re-ranking method with a variable k, not {m}"));
        }
        _ => {}
    }
    cfg.out_dir()?;
    if cfg.old_ontology.0.is_none() && cfg.merges.0.is_some() && matches!(cmd, Command::Diff | Command::BuildDataset) {
        return bad("merges given without old_ontology".into());
    }
    let mut paths: Vec<(&str, &Path)> = Vec::new();
    for key in required_inputs(cmd, cfg) {
        paths.push((key, cfg.require(key)?));
    }
    for (key, p) in [("merges", &cfg.merges), ("word_vectors", &cfg.word_vectors), ("predictions", &cfg.predictions)] {
        if let Some(p) = &p.0 {
            paths.push((key, p));
        }
    }
    for (key, p) in paths {
        if !p.is_file() {
            return bad(format!("{key} input {} does not exist", p.display()));
        }
    }
    Ok(())
}

/// Runs one command and writes `manifest-<command>.json` into the output
/// directory. On failure every file the command registered is removed.
pub fn dispatch(cmd: Command, cfg: &RunConfig) -> CliResult<Manifest> {
    let mut cfg = cfg.clone();
    cfg.absolutize();
    if cmd == Command::Run {
        cfg.work = cfg.out.clone();
    }
    validate(cmd, &cfg)?;
    let mut out = Outputs::new(cfg.out_dir()?)?;
    let started = Instant::now();
    let result = match cmd {
        Command::Synth => synth(&cfg, &mut out),
        Command::Prune => prune_cmd(&cfg, &mut out),
        Command::Diff => diff(&cfg, &mut out),
        Command::BuildDataset => build_dataset(&cfg, &mut out),
        Command::Stats => stats(&cfg, &mut out),
        Command::TrainBi => train_bi(&cfg, &mut out),
        Command::Index => index(&cfg, &mut out),
        Command::TrainCross => train_cross(&cfg, &mut out),
        Command::Predict => predict(&cfg, &mut out),
        Command::Eval => eval(&cfg, &mut out),
        Command::SweepK => sweep_k(&cfg, &mut out),
        Command::Run => run(&cfg, &mut out),
    };
    match result.and_then(|()| out.finish(cmd.name(), &cfg)) {
        Ok(m) => {
            log::info!("{cmd} finished in {:.1}s", started.elapsed().as_secs_f64());
            Ok(m)
        }
        Err(e) => {
            out.cleanup();
            Err(e)
        }
    }
}

/// Re-runs the command recorded in `manifest_path` into `out_dir`, after
/// checking that every input still hashes the same, and fails with a
/// runtime error unless every output is byte-identical.
pub fn replay(manifest_path: &Path, out_dir: &Path) -> CliResult<Manifest> {
    let old = Manifest::load(manifest_path)?;
    let cmd: Command = old
        .command
        .parse()
        .map_err(|_| CliError::validation(format!("manifest names unknown command {:?}", old.command)))?;
    for (path, hash) in &old.inputs {
        let p = Path::new(path);
        if !p.is_file() {
            return Err(CliError::validation(format!("replay input {path} is missing")));
        }
        if &sha256_file(p)? != hash {
            return Err(CliError::validation(format!("replay input {path} changed since the recorded run")));
        }
    }
    let mut cfg = old.run_config()?;
    if cfg.work.0.is_none() {
        cfg.work = cfg.out.clone();
    }
    cfg.out.0 = Some(out_dir.to_path_buf());
    let new = dispatch(cmd, &cfg)?;
    let mut diffs: Vec<String> = Vec::new();
    for (name, hash) in &old.outputs {
        match new.outputs.get(name) {
            Some(h) if h == hash => {}
            Some(_) => diffs.push(format!("{name} differs")),
            None => diffs.push(format!("{name} was not produced")),
        }
    }
    diffs.extend(
        new.outputs
            .keys()
            .filter(|k| !old.outputs.contains_key(*k))
            .map(|k| format!("{k} is new")),
    );
    if diffs.is_empty() {
        Ok(new)
    } else {
        Err(CliError::runtime(format!("replay mismatch: {}", diffs.join("; "))))
    }
}

fn write_text(out: &mut Outputs, name: &str, text: &str) -> CliResult<PathBuf> {
    let p = out.path(name)?;
    fs::write(&p, text).map_err(|e| io_err(&p, e))?;
    Ok(p)
}

fn write_json<T: Serialize>(out: &mut Outputs, name: &str, value: &T) -> CliResult<PathBuf> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    write_text(out, name, &(text + "\n"))
}

fn id_lines<'a>(ids: impl IntoIterator<Item = &'a String>) -> String {
    ids.into_iter().map(|id| format!("{id}\n")).collect()
}

fn save_split(out: &mut Outputs, split: &DatasetSplit) -> CliResult<()> {
    let p = out.path(&format!("{}.jsonl", split.name.as_str()))?;
    Ok(split.save(p)?)
}

fn save_onto(out: &mut Outputs, name: &str, onto: &Ontology) -> CliResult<()> {
    let p = out.path(name)?;
    Ok(onto.save(p)?)
}

fn load_splits(cfg: &RunConfig, out: &mut Outputs) -> CliResult<[DatasetSplit; 3]> {
    Ok([
        pl::load_split(cfg, SplitName::Train, out)?,
        pl::load_split(cfg, SplitName::Valid, out)?,
        pl::load_split(cfg, SplitName::Test, out)?,
    ])
}

fn synth(cfg: &RunConfig, out: &mut Outputs) -> CliResult<()> {
    let sc = SynthConfig {
        entities: cfg.synth_entities,
        min_synonyms: cfg.synth_min_synonyms,
        max_synonyms: cfg.synth_max_synonyms,
        mentions: cfg.synth_mentions,
        name_rate: cfg.synth_name_rate,
        seed: cfg.seed,
        ..SynthConfig::default()
    };
    let onto = synth_ontology(&sc)?;
    let records = synth_mentions(&onto, &sc);
    save_onto(out, "ontology.jsonl", &onto)?;
    for split in split_records(&records, &sc) {
        save_split(out, &split)?;
    }
    Ok(())
}

fn prune_cmd(cfg: &RunConfig, out: &mut Outputs) -> CliResult<()> {
    let onto = pl::target_ontology(cfg, out)?;
    let (pruned, removed) = prune(&onto, cfg.fraction, cfg.seed)?;
    save_onto(out, "ontology.jsonl", &pruned)?;
    write_text(out, "removed.txt", &id_lines(&removed))?;
    Ok(())
}

fn merges(cfg: &RunConfig, out: &mut Outputs) -> CliResult<MergeMap> {
    match &cfg.merges.0 {
        Some(p) => Ok(load_merges(out.input(p))?),
        None => Ok(MergeMap::default()),
    }
}

fn diff(cfg: &RunConfig, out: &mut Outputs) -> CliResult<()> {
    let new = pl::target_ontology(cfg, out)?;
    let old = pl::load_onto(cfg.require("old_ontology")?, out)?;
    let ids = version_diff(&new, &old, &merges(cfg, out)?)?;
    write_text(out, "out_of_kb.txt", &id_lines(&ids))?;
    Ok(())
}

/// Relabels the splits against a target ontology: a pruned copy of
/// `ontology`, or `old_ontology` when versioning. Merged ids are mapped to
/// their surviving concept first; every gold missing from the target then
/// becomes NIL.
fn build_dataset(cfg: &RunConfig, out: &mut Outputs) -> CliResult<()> {
    let onto = pl::target_ontology(cfg, out)?;
    let splits = load_splits(cfg, out)?;
    for s in &splits {
        pl::check_golds(s, &onto)?;
    }
    let (target, merge_map) = match &cfg.old_ontology.0 {
        Some(p) => {
            let old = pl::load_onto(p, out)?;
            let mm = merges(cfg, out)?;
            let ids = version_diff(&onto, &old, &mm)?;
            write_text(out, "out_of_kb.txt", &id_lines(&ids))?;
            (old, mm)
        }
        None => {
            let (pruned, removed) = prune(&onto, cfg.fraction, cfg.seed)?;
            write_text(out, "removed.txt", &id_lines(&removed))?;
            (pruned, MergeMap::default())
        }
    };
    save_onto(out, "ontology.jsonl", &target)?;
    let mut relabeled = Vec::new();
    for s in &splits {
        let mut s = s.clone();
        for r in &mut s.records {
            if let Label::Entity(id) = &r.gold {
                if let Some(into) = merge_map.pairs.get(id) {
                    r.gold = Label::entity(into);
                }
            }
        }
        let s = relabel_nil(&s, &target);
        save_split(out, &s)?;
        relabeled.push(s);
    }
    write_stats(out, &relabeled, &target)
}

fn write_stats(out: &mut Outputs, splits: &[DatasetSplit], onto: &Ontology) -> CliResult<()> {
    let table = split_stats(splits, onto);
    write_text(out, "stats.txt", &table.to_string())?;
    write_json(out, "stats.json", &table)?;
    Ok(())
}

fn stats(cfg: &RunConfig, out: &mut Outputs) -> CliResult<()> {
    let onto = pl::target_ontology(cfg, out)?;
    let splits = load_splits(cfg, out)?;
    write_stats(out, &splits, &onto)
}

fn train_bi(cfg: &RunConfig, out: &mut Outputs) -> CliResult<()> {
    let onto = pl::target_ontology(cfg, out)?;
    let train = pl::load_split(cfg, SplitName::Train, out)?;
    pl::check_golds(&train, &onto)?;
    let vocab = pl::build_vocabulary(&onto, &train, cfg.vocab_min_count);
    let (model, log) = train_biencoder::<pl::P>(&train, &onto, &vocab, &pl::bi_config(cfg, vocab.len()))?;
    vocab.save(out.path(pl::VOCAB)?)?;
    save_biencoder(out.path(pl::BI_CKPT)?, &model)?;
    write_json(out, "bi_log.json", &log)?;
    Ok(())
}

fn index(cfg: &RunConfig, out: &mut Outputs) -> CliResult<()> {
    let onto = pl::target_ontology(cfg, out)?;
    let vocab = pl::load_vocab(cfg, out)?;
    let bp = cfg.work_dir()?.join(pl::BI_CKPT);
    if !bp.is_file() {
        return Err(CliError::validation(format!("missing {}; run train-bi first", bp.display())));
    }
    let model = nilink::biencoder::load_biencoder::<pl::P>(out.input(&bp))?;
    let index = EntityIndex::build(&model, &onto, &vocab, cfg.nil_rep.0, cfg.syn_bi)?;
    index.save(out.path(pl::INDEX)?)?;
    Ok(())
}

fn train_cross(cfg: &RunConfig, out: &mut Outputs) -> CliResult<()> {
    let onto = pl::target_ontology(cfg, out)?;
    let train = pl::load_split(cfg, SplitName::Train, out)?;
    pl::check_golds(&train, &onto)?;
    if cfg.method == Method::FtClassifier {
        let wv = pl::word_vectors(cfg, &onto, &train, out)?;
        let model = pl::train_classifier(cfg, &onto, &train, &wv)?;
        return pl::save_classifier(&out.path(pl::CLASSIFIER)?, cfg, &model);
    }
    let vocab = if cfg.method == Method::Bm25CrossTh {
        let v = pl::build_vocabulary(&onto, &train, cfg.vocab_min_count);
        v.save(out.path(pl::VOCAB)?)?;
        v
    } else {
        pl::load_vocab(cfg, out)?
    };
    let retriever = Retriever::load(cfg, &onto, out)?;
    let cands = retriever.candidates(&train, &vocab, cfg.k)?;
    let cc = pl::cross_config(cfg, vocab.len());
    let log = if cfg.method == Method::FtBlinkout {
        let (model, log) = train_ft_cross(&train, &cands, &onto, &vocab, &FtConfig { cross: cc, k: cfg.k })?;
        save_ft_cross(out.path(pl::FT_CKPT)?, &model)?;
        log
    } else {
        let (model, log) = train_crossencoder(&train, &cands, &onto, &vocab, &cc)?;
        save_crossencoder(out.path(pl::CROSS_CKPT)?, &model)?;
        log
    };
    write_json(out, "cross_log.json", &log)?;
    Ok(())
}

#[derive(Serialize)]
struct PredictInfo {
    method: String,
    split: String,
    k: Option<usize>,
    threshold: Option<f64>,
    /// Candidate recall at each cut-off, NIL included.
    recall_at_k: Option<BTreeMap<usize, f64>>,
}

/// Everything `predict` and `sweep-k` need, loaded once.
struct Predictor {
    onto: Ontology,
    split: DatasetSplit,
    linker: Linker,
    retriever: Option<Retriever>,
    vocab: Option<nilink::textproc::Vocabulary>,
}

impl Predictor {
    fn load(cfg: &RunConfig, out: &mut Outputs) -> CliResult<Self> {
        let onto = pl::target_ontology(cfg, out)?;
        let split = pl::load_split(cfg, pl::split_name(&cfg.split)?, out)?;
        pl::check_golds(&split, &onto)?;
        let linker = Linker::load(cfg, &onto, out)?;
        let (retriever, vocab) = if linker.needs_candidates() {
            (Some(Retriever::load(cfg, &onto, out)?), Some(pl::load_vocab(cfg, out)?))
        } else {
            (None, None)
        };
        Ok(Predictor {
            onto,
            split,
            linker,
            retriever,
            vocab,
        })
    }

    /// Predictions at candidate depth `k`, with the info record.
    fn run(&self, cfg: &RunConfig, k: usize, out: &mut Outputs) -> CliResult<(Vec<nilink::crossencoder::Prediction<pl::P>>, PredictInfo)> {
        let kcfg = RunConfig { k, ..cfg.clone() };
        let cands = match (&self.retriever, &self.vocab) {
            (Some(r), Some(v)) => Some(r.candidates(&self.split, v, k)?),
            _ => None,
        };
        let threshold = if cfg.method.uses_threshold() {
            Some(pl::resolve_threshold(
                &kcfg,
                &self.linker,
                self.retriever.as_ref(),
                self.vocab.as_ref(),
                &self.onto,
                out,
            )?)
        } else {
            None
        };
        let scored = pl::score(&self.linker, &self.split, cands.as_deref(), self.vocab.as_ref(), &self.onto, cfg)?;
        let preds = scored.decide(pl::predict_mode(cfg, threshold.unwrap_or(0.0)))?;
        let recall = match &cands {
            Some(c) => Some(recall_at_k(c, &self.split.golds())?),
            None => None,
        };
        let info = PredictInfo {
            method: cfg.method.to_string(),
            split: cfg.split.clone(),
            k: cands.as_ref().map(|_| k),
            threshold,
            recall_at_k: recall,
        };
        Ok((preds, info))
    }
}

fn predict(cfg: &RunConfig, out: &mut Outputs) -> CliResult<()> {
    let p = Predictor::load(cfg, out)?;
    let (preds, info) = p.run(cfg, cfg.k, out)?;
    pl::write_predictions(&out.path(pl::PREDICTIONS)?, &preds)?;
    write_json(out, "predict_info.json", &info)?;
    Ok(())
}

fn eval(cfg: &RunConfig, out: &mut Outputs) -> CliResult<()> {
    let split = pl::load_split(cfg, pl::split_name(&cfg.split)?, out)?;
    let path = match &cfg.predictions.0 {
        Some(p) => p.clone(),
        None => cfg.work_dir()?.join(pl::PREDICTIONS),
    };
    if !path.is_file() {
        return Err(CliError::validation(format!("predictions file {} does not exist", path.display())));
    }
    let preds = pl::read_predictions(out.input(&path))?;
    let report = evaluate(&preds, &split.golds())?;
    write_report(out, "report", cfg.method.name(), &report)
}

fn write_report(out: &mut Outputs, stem: &str, label: &str, report: &EvalReport) -> CliResult<()> {
    write_text(out, &format!("{stem}.json"), &(report.to_json() + "\n"))?;
    write_text(out, &format!("{stem}.txt"), &report_table([(label, report)]))?;
    Ok(())
}

fn sweep_k(cfg: &RunConfig, out: &mut Outputs) -> CliResult<()> {
    let p = Predictor::load(cfg, out)?;
    let golds = p.split.golds();
    let mut rows: Vec<(String, EvalReport, f64)> = Vec::new();
    for &k in &cfg.k_grid.0 {
        let (preds, info) = p.run(cfg, k, out)?;
        let report = evaluate(&pl::labels(&preds), &golds)?;
        write_report(out, &format!("sweep/k{k}"), &format!("k={k}"), &report)?;
        let recall = info
            .recall_at_k
            .as_ref()
            .and_then(|r| r.values().last().copied())
            .unwrap_or(0.0);
        rows.push((format!("k={k}"), report, recall));
    }
    let mut text = report_table(rows.iter().map(|(l, r, _)| (l.as_str(), r)));
    text.push_str("\nk\trecall@k\tF1_o\n");
    for (label, r, recall) in &rows {
        text.push_str(&format!("{}\t{recall:.4}\t{:.4}\n", &label[2..], r.f1_o));
    }
    write_text(out, "sweep_k.txt", &text)?;
    Ok(())
}

/// Train, index, predict and evaluate in one process, all into `out`.
fn run(cfg: &RunConfig, out: &mut Outputs) -> CliResult<()> {
    let m = cfg.method;
    if m.uses_biencoder() {
        train_bi(cfg, out)?;
        index(cfg, out)?;
    }
    if m != Method::Sieve {
        train_cross(cfg, out)?;
    }
    predict(cfg, out)?;
    eval(cfg, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_names_round_trip() {
        for c in Command::ALL {
            assert_eq!(c.name().parse::<Command>().unwrap(), c);
        }
        assert_eq!("fit".parse::<Command>().unwrap_err().exit_code(), 1);
    }

    #[test]
    fn method_checks_come_first() {
        let cfg = RunConfig {
            method: Method::Sieve,
            ..RunConfig::default()
        };
        assert_eq!(validate(Command::TrainBi, &cfg).unwrap_err().exit_code(), 2);
        let cfg = RunConfig {
            out: "x".parse().unwrap(),
            ontology: "/definitely/not/here.jsonl".parse().unwrap(),
            ..RunConfig::default()
        };
        let e = validate(Command::Prune, &cfg).unwrap_err();
        assert!(e.msg.contains("does not exist"), "{e}");
    }
}

//! Synthetic ontologies and mention corpora for experiments without licensed
//! data. Words are pronounceable pseudo-words, so every surface form is
//! unambiguous and the only way to link is by matching text.

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{DatasetSplit, Label, MentionRecord, SplitName};
use crate::error::{Error, Result};
use crate::ontology::{Entity, Ontology};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub entities: usize,
    pub min_synonyms: usize,
    pub max_synonyms: usize,
    pub mentions: usize,
    /// Probability that a mention uses the entity name rather than a synonym.
    pub name_rate: f64,
    pub train_fraction: f64,
    pub valid_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            entities: 200,
            min_synonyms: 2,
            max_synonyms: 4,
            mentions: 1500,
            name_rate: 0.4,
            train_fraction: 0.6,
            valid_fraction: 0.2,
            seed: 0,
        }
    }
}

const ONSETS: [&str; 16] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "ch", "tr"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
const CODAS: [&str; 5] = ["", "", "n", "r", "s"];

const ORGANS: [&str; 10] = [
    "heart", "kidney", "liver", "lung", "brain", "skin", "bone", "blood", "eye", "gut",
];

const LEFT: [&str; 8] = [
    "patient presents with",
    "history of",
    "no evidence of",
    "admitted for",
    "family history of",
    "treated for",
    "ruled out",
    "follow up of",
];

const RIGHT: [&str; 8] = [
    "today",
    "last year",
    "on exam",
    "per report",
    "since childhood",
    "noted",
    "was discussed",
    "remains stable",
];

struct WordPool {
    used: BTreeSet<String>,
}

impl WordPool {
    fn fresh(&mut self, rng: &mut Rng) -> String {
        loop {
            let syllables = rng.random_range(2..=3);
            let mut w = String::new();
            for _ in 0..syllables {
                w.push_str(ONSETS.choose(rng).expect("non-empty"));
                w.push_str(VOWELS.choose(rng).expect("non-empty"));
                w.push_str(CODAS.choose(rng).expect("non-empty"));
            }
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }
}

/// Entities `E0000…` with two-word names built from shared modifier and head
/// pools, `min..=max` fresh synonyms of one or two words, a short
/// definition, and up to two parents among earlier entities.
pub fn synth_ontology(cfg: &SynthConfig) -> Result<Ontology> {
    if cfg.min_synonyms > cfg.max_synonyms {
        return Err(Error::InvalidArgument("min_synonyms exceeds max_synonyms".into()));
    }
    let mut rng = rng::derived(cfg.seed, 21);
    let mut pool = WordPool { used: BTreeSet::new() };
    let n_mod = (cfg.entities / 3).max(2);
    let n_head = (cfg.entities / 5).max(2);
    let modifiers: Vec<String> = (0..n_mod).map(|_| pool.fresh(&mut rng)).collect();
    let heads: Vec<String> = (0..n_head).map(|_| pool.fresh(&mut rng)).collect();
    let mut combos: Vec<(usize, usize)> = (0..n_mod).flat_map(|m| (0..n_head).map(move |h| (m, h))).collect();
    combos.shuffle(&mut rng);
    if combos.len() < cfg.entities {
        return Err(Error::InvalidArgument("too many entities for the name pools".into()));
    }
    let width = cfg.entities.max(1).to_string().len().max(4);
    let mut entities = Vec::with_capacity(cfg.entities);
    for (i, &(m, h)) in combos.iter().take(cfg.entities).enumerate() {
        let name = format!("{} {}", modifiers[m], heads[h]);
        let n_syn = rng.random_range(cfg.min_synonyms..=cfg.max_synonyms);
        let synonyms: Vec<String> = (0..n_syn)
            .map(|_| {
                if rng.random_bool(0.5) {
                    pool.fresh(&mut rng)
                } else {
                    format!("{} {}", pool.fresh(&mut rng), pool.fresh(&mut rng))
                }
            })
            .collect();
        let organ = ORGANS.choose(&mut rng).expect("non-empty");
        let mut parents = BTreeSet::new();
        if i > 0 {
            for _ in 0..rng.random_range(0..=2usize) {
                parents.insert(format!("E{:0width$}", rng.random_range(0..i)));
            }
        }
        entities.push(
            Entity::new(format!("E{i:0width$}"), name)
                .with_synonyms(synonyms)
                .with_definition(format!("a {} condition of the {organ}", heads[h]))
                .with_parents(parents),
        );
    }
    Ontology::from_entities(entities, format!("synth-{}", cfg.seed))
}

/// Mentions spread round-robin over a shuffled entity order, each using the
/// name or one synonym inside a templated context. Golds are entity ids of
/// `onto`; relabel against a pruned ontology to create NIL mentions.
pub fn synth_mentions(onto: &Ontology, cfg: &SynthConfig) -> Vec<MentionRecord> {
    let mut rng = rng::derived(cfg.seed, 22);
    let mut order: Vec<&Entity> = onto.entities().collect();
    if order.is_empty() {
        return Vec::new();
    }
    order.shuffle(&mut rng);
    (0..cfg.mentions)
        .map(|i| {
            let e = order[i % order.len()];
            let surface = if e.synonyms.is_empty() || rng.random_bool(cfg.name_rate) {
                e.name.clone()
            } else {
                e.synonyms.choose(&mut rng).expect("non-empty").clone()
            };
            let left = LEFT.choose(&mut rng).expect("non-empty");
            let right = RIGHT.choose(&mut rng).expect("non-empty");
            let mut rec = MentionRecord::new(surface, Label::entity(e.id.clone())).with_context(*left, *right);
            rec.doc_id = format!("doc{:05}", i);
            rec
        })
        .collect()
}

/// Shuffles records into train/valid/test by the configured fractions.
pub fn split_records(records: &[MentionRecord], cfg: &SynthConfig) -> [DatasetSplit; 3] {
    let mut rng = rng::derived(cfg.seed, 23);
    let mut shuffled = records.to_vec();
    shuffled.shuffle(&mut rng);
    let n = shuffled.len();
    let n_train = (n as f64 * cfg.train_fraction).round() as usize;
    let n_valid = ((n as f64 * cfg.valid_fraction).round() as usize).min(n - n_train.min(n));
    let test = shuffled.split_off((n_train + n_valid).min(n));
    let valid = shuffled.split_off(n_train.min(n));
    [
        DatasetSplit::new(SplitName::Train, shuffled),
        DatasetSplit::new(SplitName::Valid, valid),
        DatasetSplit::new(SplitName::Test, test),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ontology_shape() {
        let cfg = SynthConfig::default();
        let o = synth_ontology(&cfg).unwrap();
        assert_eq!(o.len(), 200);
        for e in o.entities() {
            assert!((2..=4).contains(&e.synonyms.len()), "{}", e.id);
        }
        assert_eq!(o, synth_ontology(&cfg).unwrap());
        let forms: Vec<&str> = o.entities().flat_map(|e| e.surface_forms()).collect();
        let unique: BTreeSet<&str> = forms.iter().copied().collect();
        assert_eq!(forms.len(), unique.len());
    }

    #[test]
    fn mentions_and_splits() {
        let cfg = SynthConfig::default();
        let o = synth_ontology(&cfg).unwrap();
        let m = synth_mentions(&o, &cfg);
        assert_eq!(m.len(), 1500);
        assert!(m.iter().all(|r| o.contains(r.gold.as_str())));
        let [tr, va, te] = split_records(&m, &cfg);
        assert_eq!((tr.len(), va.len(), te.len()), (900, 300, 300));
    }
}

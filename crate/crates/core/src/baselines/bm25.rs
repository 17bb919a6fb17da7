use std::collections::HashMap;

use crate::biencoder::{insert_nil, rank_scores, CandidateSet};
use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::ontology::Ontology;

use super::words;

pub const BM25_K1: f64 = 1.5;
pub const BM25_B: f64 = 0.75;

/// Okapi BM25 over one document per entity (name, synonyms and definition).
#[derive(Debug, Clone)]
pub struct Bm25Index {
    ids: Vec<String>,
    term_freqs: Vec<HashMap<String, usize>>,
    doc_lens: Vec<usize>,
    doc_freq: HashMap<String, usize>,
    avg_len: f64,
}

impl Bm25Index {
    pub fn new(onto: &Ontology) -> Self {
        let mut ids = Vec::with_capacity(onto.len());
        let mut term_freqs = Vec::with_capacity(onto.len());
        let mut doc_lens = Vec::with_capacity(onto.len());
        let mut doc_freq: HashMap<String, usize> = HashMap::new();
        for e in onto.entities() {
            let mut tokens = Vec::new();
            for f in e.surface_forms() {
                tokens.extend(words(f));
            }
            tokens.extend(words(&e.definition));
            let mut tf: HashMap<String, usize> = HashMap::new();
            for t in &tokens {
                *tf.entry(t.clone()).or_default() += 1;
            }
            for t in tf.keys() {
                *doc_freq.entry(t.clone()).or_default() += 1;
            }
            ids.push(e.id.clone());
            doc_lens.push(tokens.len());
            term_freqs.push(tf);
        }
        let total: usize = doc_lens.iter().sum();
        let avg_len = if ids.is_empty() { 0.0 } else { total as f64 / ids.len() as f64 };
        Bm25Index {
            ids,
            term_freqs,
            doc_lens,
            doc_freq,
            avg_len,
        }
    }

    /// `ln((N − n + 0.5)/(n + 0.5) + 1)`; never negative.
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.doc_freq.get(term).copied().unwrap_or(0) as f64;
        let big_n = self.ids.len() as f64;
        ((big_n - n + 0.5) / (n + 0.5) + 1.0).ln()
    }

    /// Score of every entity, in id order. Repeated query terms count once per
    /// occurrence.
    pub fn scores(&self, query: &str) -> Vec<(&str, f64)> {
        let q = words(query);
        let idf: Vec<f64> = q.iter().map(|t| self.idf(t)).collect();
        self.ids
            .iter()
            .zip(&self.term_freqs)
            .zip(&self.doc_lens)
            .map(|((id, tf), &len)| {
                let norm = if self.avg_len > 0.0 {
                    BM25_K1 * (1.0 - BM25_B + BM25_B * len as f64 / self.avg_len)
                } else {
                    BM25_K1
                };
                let s = q
                    .iter()
                    .zip(&idf)
                    .map(|(t, &w)| {
                        let f = tf.get(t).copied().unwrap_or(0) as f64;
                        w * f * (BM25_K1 + 1.0) / (f + norm)
                    })
                    .sum();
                (id.as_str(), s)
            })
            .collect()
    }

    /// Top-k entities, ties to the smaller id, then NIL inserted with score 0.
    pub fn rank(&self, query: &str, k: usize, mention: usize) -> Result<CandidateSet<f64>> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        let mut entries = rank_scores(self.scores(query).into_iter().map(|(id, s)| (Label::entity(id), s)));
        entries.truncate(k);
        Ok(insert_nil(&CandidateSet {
            mention,
            entries,
            nil_score: 0.0,
        }))
    }
}

pub fn bm25_rank(mention: &str, onto: &Ontology, k: usize) -> Result<CandidateSet<f64>> {
    Bm25Index::new(onto).rank(mention, k, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ontology::Entity;

    fn onto() -> Ontology {
        Ontology::from_entities(
            [
                Entity::new("a", "kidney failure").with_synonyms(["renal failure"]),
                Entity::new("b", "heart failure").with_definition("the heart fails to pump"),
                Entity::new("c", "asthma"),
                Entity::new("d", "bronchial asthma attack"),
            ],
            "t",
        )
        .unwrap()
    }

    #[test]
    fn unique_name_ranks_first() {
        let c = bm25_rank("renal failure", &onto(), 3).unwrap();
        assert_eq!(c.entries[0].label, Label::entity("a"));
        assert_eq!(c.entries.last().unwrap().label, Label::Nil);
        assert_eq!(c.len(), 3);
    }

    #[test]
    fn no_overlap_gives_first_ids() {
        let c = bm25_rank("fracture", &onto(), 3).unwrap();
        let labels: Vec<&str> = c.labels().map(Label::as_str).collect();
        assert_eq!(labels, ["a", "b", "NIL"]);
        assert!(c.entries.iter().all(|e| e.score == 0.0));
    }
}

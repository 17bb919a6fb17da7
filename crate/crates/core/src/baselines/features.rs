use serde::{Deserialize, Serialize};

use crate::corpus::MentionRecord;
use crate::ontology::Ontology;

use super::wordvec::{cosine, WordVectors};
use super::{contains_seq, words};

pub const N_MES: usize = 7;
pub const FUZZY_THRESHOLD: f64 = 0.8;
pub const DEFAULT_CONTEXT_WINDOW: usize = 32;

/// `1 − lev(a, b) / max(|a|, |b|)` over characters; 1 for two empty strings.
pub fn levenshtein_similarity(a: &str, b: &str) -> f64 {
    strsim::normalized_levenshtein(a, b)
}

/// Layout: `mes` (7 string-match values), the max cosine, then the
/// context-entity embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    /// exact name, exact synonym, mention inside a name, a name inside the
    /// mention, fuzzy name, mention inside name+definition, and the number
    /// of entities hit by the first four capped at 2.
    pub mes: [f64; N_MES],
    pub max_cosine: f64,
    pub context: Vec<f64>,
}

impl FeatureVector {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(N_MES + 1 + self.context.len());
        out.extend_from_slice(&self.mes);
        out.push(self.max_cosine);
        out.extend_from_slice(&self.context);
        out
    }
}

/// The seven string-match features of a mention against the whole ontology,
/// over lowercased word tokens.
pub fn mes_features(mention: &str, onto: &Ontology) -> [f64; N_MES] {
    let m = words(mention);
    let joined = m.join(" ");
    let mut f = [0.0; N_MES];
    if m.is_empty() {
        return f;
    }
    let mut hits = 0usize;
    for e in onto.entities() {
        let name = words(&e.name);
        let exact_name = name == m;
        let exact_syn = e.synonyms.iter().any(|s| words(s) == m);
        let m_in_name = contains_seq(&name, &m);
        let name_in_m = contains_seq(&m, &name);
        if exact_name {
            f[0] = 1.0;
        }
        if exact_syn {
            f[1] = 1.0;
        }
        if m_in_name {
            f[2] = 1.0;
        }
        if name_in_m {
            f[3] = 1.0;
        }
        if f[4] == 0.0 && levenshtein_similarity(&joined, &name.join(" ")) >= FUZZY_THRESHOLD {
            f[4] = 1.0;
        }
        if f[5] == 0.0 {
            let mut text = name;
            text.extend(words(&e.definition));
            if contains_seq(&text, &m) {
                f[5] = 1.0;
            }
        }
        if exact_name || exact_syn || m_in_name || name_in_m {
            hits += 1;
        }
    }
    f[6] = hits.min(2) as f64;
    f
}

pub fn extract_features(rec: &MentionRecord, onto: &Ontology, wv: &WordVectors, ctxt_window: usize) -> FeatureVector {
    let mention_vec = wv.embed_text(&rec.mention);
    let max_cosine = onto
        .entities()
        .flat_map(|e| e.surface_forms())
        .map(|f| cosine(&mention_vec, &wv.embed_text(f)))
        .fold(0.0, f64::max);

    let left = words(&rec.ctxt_l);
    let left = &left[left.len().saturating_sub(ctxt_window)..];
    let right = words(&rec.ctxt_r);
    let right = &right[..right.len().min(ctxt_window)];
    let mut context = vec![0.0; wv.dim()];
    let mut n = 0usize;
    for e in onto.entities() {
        let seen = e.surface_forms().any(|f| {
            let w = words(f);
            contains_seq(left, &w) || contains_seq(right, &w)
        });
        if seen {
            context
                .iter_mut()
                .zip(wv.embed_text(&e.name))
                .for_each(|(c, x)| *c += x);
            n += 1;
        }
    }
    if n > 0 {
        context.iter_mut().for_each(|c| *c /= n as f64);
    }
    FeatureVector {
        mes: mes_features(&rec.mention, onto),
        max_cosine,
        context,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Label;
    use crate::ontology::Entity;

    fn onto() -> Ontology {
        Ontology::from_entities(
            [
                Entity::new("a", "bradycardias").with_definition("slow heart rate"),
                Entity::new("b", "heart failure").with_synonyms(["cardiac failure"]),
            ],
            "t",
        )
        .unwrap()
    }

    #[test]
    fn levenshtein_oracle() {
        // one insertion over twelve characters
        let s = levenshtein_similarity("bradycardia", "bradycardias");
        assert!((s - 11.0 / 12.0).abs() < 1e-12);
        assert!(s >= FUZZY_THRESHOLD);
        assert_eq!(levenshtein_similarity("", ""), 1.0);
    }

    #[test]
    fn string_features() {
        let o = onto();
        assert_eq!(mes_features("Heart Failure", &o), [1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        assert_eq!(mes_features("cardiac failure", &o)[1], 1.0);
        assert_eq!(mes_features("bradycardia", &o)[4], 1.0);
        assert_eq!(mes_features("slow heart", &o)[5], 1.0);
        assert_eq!(mes_features("heart", &o)[6], 1.0);
        assert_eq!(mes_features("xyz", &o), [0.0; N_MES]);
    }

    #[test]
    fn context_block() {
        let o = onto();
        let mut wv = WordVectors::new(2);
        wv.insert("heart", vec![1.0, 0.0]).unwrap();
        wv.insert("failure", vec![0.0, 1.0]).unwrap();
        let rec = MentionRecord::new("pain", Label::Nil).with_context("no signs", "today");
        let f = extract_features(&rec, &o, &wv, DEFAULT_CONTEXT_WINDOW);
        assert_eq!(f.context, vec![0.0, 0.0]);
        assert_eq!(f.max_cosine, 0.0);
        let rec = MentionRecord::new("heart", Label::Nil).with_context("history of heart failure and", "");
        let f = extract_features(&rec, &o, &wv, DEFAULT_CONTEXT_WINDOW);
        assert_eq!(f.context, vec![0.5, 0.5]);
        assert!((f.max_cosine - 0.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(f.to_vec().len(), N_MES + 1 + 2);
        assert!(f.to_vec().iter().all(|x| x.is_finite()));
    }
}

use crate::corpus::{Label, MentionRecord};
use crate::crossencoder::Prediction;
use crate::ontology::{Entity, Ontology};
use crate::scalar::Scalar;

use super::{contains_seq, words};

/// Matching rules, tried in this order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Sieve {
    ExactName,
    ExactSynonym,
    Inclusion,
    Initials,
}

impl Sieve {
    pub const ORDER: [Sieve; 4] = [Sieve::ExactName, Sieve::ExactSynonym, Sieve::Inclusion, Sieve::Initials];

    fn fires(self, mention: &[String], e: &Entity) -> bool {
        match self {
            Sieve::ExactName => words(&e.name) == mention,
            Sieve::ExactSynonym => e.synonyms.iter().any(|s| words(s) == mention),
            Sieve::Inclusion => {
                let name = words(&e.name);
                contains_seq(&name, mention) || contains_seq(mention, &name)
            }
            Sieve::Initials => {
                let letters: String = mention.concat();
                letters.chars().count() >= 2
                    && e.surface_forms().any(|f| {
                        let w = words(f);
                        w.len() >= 2 && initials(&w) == letters
                    })
            }
        }
    }
}

fn initials(words: &[String]) -> String {
    words.iter().filter_map(|w| w.chars().next()).collect()
}

/// First rule (in `order`) that matches any entity, with the smallest
/// matching id.
pub fn sieve_match<'a>(mention: &str, onto: &'a Ontology, order: &[Sieve]) -> Option<(Sieve, &'a str)> {
    let m = words(mention);
    if m.is_empty() {
        return None;
    }
    order.iter().find_map(|&s| {
        onto.entities()
            .find(|e| s.fires(&m, e))
            .map(|e| (s, e.id.as_str()))
    })
}

/// Links by the first firing rule; NIL when none fires.
pub fn sieve_link<T: Scalar>(mention: usize, rec: &MentionRecord, onto: &Ontology) -> Prediction<T> {
    let predicted = match sieve_match(&rec.mention, onto, &Sieve::ORDER) {
        Some((_, id)) => Label::entity(id),
        None => Label::Nil,
    };
    Prediction {
        mention,
        candidate_scores: vec![(predicted.clone(), T::one())],
        predicted,
        score: T::one(),
        is_nil_prob: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn onto() -> Ontology {
        Ontology::from_entities(
            [
                Entity::new("C1561643", "Chronic Kidney Diseases"),
                Entity::new("C2", "myocardial infarction").with_synonyms(["heart attack"]),
                Entity::new("C0", "acute heart attack syndrome"),
            ],
            "t",
        )
        .unwrap()
    }

    fn link(m: &str) -> Label {
        sieve_link::<f64>(0, &MentionRecord::new(m, Label::Nil), &onto()).predicted
    }

    #[test]
    fn initials_rule() {
        assert_eq!(
            sieve_match("CKD", &onto(), &Sieve::ORDER),
            Some((Sieve::Initials, "C1561643"))
        );
        assert_eq!(link("ckd"), Label::entity("C1561643"));
    }

    #[test]
    fn nothing_matches() {
        assert_eq!(link("fractured tibia"), Label::Nil);
        assert_eq!(link("  "), Label::Nil);
    }

    #[test]
    fn synonym_rule_precedes_inclusion() {
        // "heart attack" is a synonym of C2 and inside C0's name; C0 < C2.
        assert_eq!(link("Heart Attack"), Label::entity("C2"));
        let swapped = [Sieve::ExactName, Sieve::Inclusion, Sieve::ExactSynonym, Sieve::Initials];
        assert_eq!(sieve_match("heart attack", &onto(), &swapped), Some((Sieve::Inclusion, "C0")));
    }

    #[test]
    fn exact_name_case_insensitive() {
        assert_eq!(link("MYOCARDIAL infarction"), Label::entity("C2"));
    }
}

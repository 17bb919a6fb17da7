use std::collections::{BTreeMap, BTreeSet, HashMap};

use nilink::baselines::{dynamic_features, Bm25Index, BM25_B, BM25_K1};
use nilink::biencoder::{insert_nil, Candidate, CandidateSet};
use nilink::corpus::{relabel_nil, SplitName};
use nilink::crossencoder::{decide, PredictMode};
use nilink::metrics::{evaluate, recall_at_k};
use nilink::ontology::{prune, removal_count, version_diff, MergeMap};
use nilink::scalar::softmax;
use nilink::{DatasetSplit, Entity, Label, MentionRecord, Ontology};
use proptest::prelude::*;

/// Parents of node `i` are drawn from nodes with a smaller index, so the
/// graph is acyclic by construction.
fn dag() -> impl Strategy<Value = Vec<Vec<usize>>> {
    (1usize..30).prop_flat_map(|n| {
        (0..n)
            .map(|i| proptest::collection::vec(0..i.max(1), 0..=i.min(3)).prop_map(move |ps| if i == 0 { vec![] } else { ps }))
            .collect::<Vec<_>>()
    })
}

fn ontology(parents: &[Vec<usize>]) -> Ontology {
    let entities = parents.iter().enumerate().map(|(i, ps)| {
        Entity::new(format!("N{i:02}"), format!("node {i}")).with_parents(ps.iter().map(|p| format!("N{p:02}")))
    });
    Ontology::from_entities(entities, "t").unwrap()
}

/// Ancestor sets by depth-first search over the parent lists.
fn closure(onto: &Ontology) -> BTreeMap<String, BTreeSet<String>> {
    let parents: HashMap<&str, &Vec<String>> = onto.entities().map(|e| (e.id.as_str(), &e.parents)).collect();
    let mut out = BTreeMap::new();
    for e in onto.entities() {
        let mut seen = BTreeSet::new();
        let mut stack: Vec<&str> = e.parents.iter().map(String::as_str).collect();
        while let Some(p) = stack.pop() {
            if seen.insert(p.to_string()) {
                stack.extend(parents[p].iter().map(String::as_str));
            }
        }
        out.insert(e.id.clone(), seen);
    }
    out
}

proptest! {
    #[test]
    fn pruning_preserves_reachability(parents in dag(), fraction in 0.0f64..=1.0, seed in any::<u64>()) {
        let onto = ontology(&parents);
        let (pruned, removed) = prune(&onto, fraction, seed).unwrap();
        prop_assert_eq!(removed.len(), removal_count(onto.len(), fraction));
        prop_assert_eq!(pruned.len() + removed.len(), onto.len());
        let before = closure(&onto);
        let after = closure(&pruned);
        for (id, anc) in &after {
            let expect: BTreeSet<String> = before[id].difference(&removed).cloned().collect();
            prop_assert_eq!(anc, &expect, "ancestors of {}", id);
        }
        let diff = version_diff(&onto, &pruned, &MergeMap::default()).unwrap();
        prop_assert_eq!(diff, removed);
    }
}

fn label() -> impl Strategy<Value = Label> {
    prop_oneof![Just(Label::Nil), (0u8..4).prop_map(|i| Label::entity(format!("e{i}")))]
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

proptest! {
    #[test]
    fn evaluate_matches_case_analysis(pairs in proptest::collection::vec((label(), label()), 0..40)) {
        let (preds, golds): (Vec<Label>, Vec<Label>) = pairs.iter().cloned().unzip();
        let r = evaluate(&preds, &golds).unwrap();
        let count = |f: &dyn Fn(&Label, &Label) -> bool| pairs.iter().filter(|(p, g)| f(p, g)).count();
        let tp_o = count(&|p, g| p.is_nil() && g.is_nil());
        let fp_o = count(&|p, g| p.is_nil() && !g.is_nil());
        let fn_o = count(&|p, g| !p.is_nil() && g.is_nil());
        let tp_in = count(&|p, g| !p.is_nil() && p == g);
        let fp_in = count(&|p, g| !p.is_nil() && p != g);
        let fn_in = count(&|p, g| !g.is_nil() && p != g);
        prop_assert_eq!((r.tp_o, r.fp_o, r.fn_o, r.tp_in, r.fp_in, r.fn_in), (tp_o, fp_o, fn_o, tp_in, fp_in, fn_in));
        let (p_o, r_o) = (ratio(tp_o, tp_o + fp_o), ratio(tp_o, tp_o + fn_o));
        let (p_in, r_in) = (ratio(tp_in, tp_in + fp_in), ratio(tp_in, tp_in + fn_in));
        prop_assert!((r.f1_o - f1(p_o, r_o)).abs() < 1e-12);
        prop_assert!((r.f1_in - f1(p_in, r_in)).abs() < 1e-12);
        prop_assert!((r.accuracy - ratio(count(&|p, g| p == g), pairs.len())).abs() < 1e-12);
    }
}

fn candidate_set(ids: &[u8], mention: usize) -> CandidateSet<f64> {
    let mut seen = BTreeSet::new();
    let entries = ids
        .iter()
        .filter(|&&i| seen.insert(i))
        .enumerate()
        .map(|(rank, &i)| Candidate {
            label: if i == 0 { Label::Nil } else { Label::entity(format!("e{i}")) },
            score: -(rank as f64),
        })
        .collect();
    CandidateSet { mention, entries, nil_score: -100.0 }
}

proptest! {
    #[test]
    fn recall_is_monotone_and_counts_membership(
        sets in proptest::collection::vec((proptest::collection::vec(0u8..8, 0..8), 0u8..8), 1..20)
    ) {
        let cands: Vec<_> = sets.iter().enumerate().map(|(m, (ids, _))| candidate_set(ids, m)).collect();
        let golds: Vec<Label> = sets
            .iter()
            .map(|(_, g)| if *g == 0 { Label::Nil } else { Label::entity(format!("e{g}")) })
            .collect();
        let recall = recall_at_k(&cands, &golds).unwrap();
        let mut last = 0.0;
        for (&k, &r) in &recall {
            prop_assert!(r >= last);
            last = r;
            let hits = cands.iter().zip(&golds).filter(|(c, g)| c.truncated(k).contains(g)).count();
            prop_assert_eq!(r, hits as f64 / cands.len() as f64);
        }
    }

    #[test]
    fn insert_nil_is_idempotent(ids in proptest::collection::vec(0u8..10, 0..10)) {
        let c = candidate_set(&ids, 0);
        let once = insert_nil(&c);
        prop_assert!(once.contains(&Label::Nil));
        prop_assert_eq!(once.len(), c.len().max(1));
        prop_assert_eq!(insert_nil(&once), once.clone());
        if c.contains(&Label::Nil) {
            prop_assert_eq!(once, c);
        } else if !c.is_empty() {
            // only the last entry is displaced
            prop_assert_eq!(&once.entries[..c.len() - 1], &c.entries[..c.len() - 1]);
        }
    }
}

const WORDS: [&str; 8] = ["renal", "Acute", "failure", "heart", "lung", "injury", "of", "chronic"];

fn phrase() -> impl Strategy<Value = String> {
    proptest::collection::vec(proptest::sample::select(&WORDS[..]), 1..5).prop_map(|w| w.join(" "))
}

/// Direct BM25 over lowercased whitespace tokens.
fn bm25_direct(docs: &[Vec<String>], query: &[String]) -> Vec<f64> {
    let n = docs.len() as f64;
    let avg = docs.iter().map(Vec::len).sum::<usize>() as f64 / n;
    docs.iter()
        .map(|d| {
            query
                .iter()
                .map(|t| {
                    let df = docs.iter().filter(|x| x.contains(t)).count() as f64;
                    let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
                    let f = d.iter().filter(|x| *x == t).count() as f64;
                    idf * f * (BM25_K1 + 1.0) / (f + BM25_K1 * (1.0 - BM25_B + BM25_B * d.len() as f64 / avg))
                })
                .sum()
        })
        .collect()
}

fn lower_words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_lowercase).collect()
}

proptest! {
    #[test]
    fn bm25_matches_direct_formula(
        ents in proptest::collection::vec((phrase(), proptest::collection::vec(phrase(), 0..3), phrase()), 1..8),
        query in phrase(),
    ) {
        let onto = Ontology::from_entities(
            ents.iter().enumerate().map(|(i, (name, syns, def))| {
                Entity::new(format!("E{i}"), name.clone()).with_synonyms(syns.clone()).with_definition(def.clone())
            }),
            "t",
        )
        .unwrap();
        let docs: Vec<Vec<String>> = onto
            .entities()
            .map(|e| {
                let mut d = lower_words(&e.name);
                e.synonyms.iter().for_each(|s| d.extend(lower_words(s)));
                d.extend(lower_words(&e.definition));
                d
            })
            .collect();
        let want = bm25_direct(&docs, &lower_words(&query));
        let bm25 = Bm25Index::new(&onto);
        let got = bm25.scores(&query);
        prop_assert_eq!(got.len(), want.len());
        for ((id, g), (e, w)) in got.iter().zip(onto.entities().zip(&want)) {
            prop_assert_eq!(*id, e.id.as_str());
            prop_assert!((g - w).abs() <= 1e-9 * w.abs().max(1.0), "{}: {} vs {}", id, g, w);
        }
    }

    #[test]
    fn dynamic_features_append_min_max_mean(scores in proptest::collection::vec(-50.0f64..50.0, 1..12)) {
        let f = dynamic_features(&scores);
        let k = scores.len();
        prop_assert_eq!(f.len(), k + 3);
        prop_assert_eq!(&f[..k], &scores[..]);
        let mut sorted = scores.clone();
        sorted.sort_by(f64::total_cmp);
        prop_assert_eq!(f[k], sorted[0]);
        prop_assert_eq!(f[k + 1], sorted[k - 1]);
        prop_assert!((f[k + 2] - scores.iter().sum::<f64>() / k as f64).abs() < 1e-9);
    }

    #[test]
    fn relabel_nil_is_idempotent(keep in proptest::collection::vec(any::<bool>(), 1..10), golds in proptest::collection::vec(0usize..12, 0..20)) {
        let onto = Ontology::from_entities(
            keep.iter().enumerate().filter(|(_, &k)| k).map(|(i, _)| Entity::new(format!("e{i}"), format!("n{i}"))),
            "t",
        )
        .unwrap();
        let records = golds
            .iter()
            .map(|&g| MentionRecord::new("m", if g == 11 { Label::Nil } else { Label::entity(format!("e{g}")) }))
            .collect();
        let split = DatasetSplit::new(SplitName::Test, records);
        let once = relabel_nil(&split, &onto);
        prop_assert_eq!(relabel_nil(&once, &onto), once.clone());
        for (before, after) in split.records.iter().zip(&once.records) {
            match before.gold.entity_id() {
                Some(id) if onto.contains(id) => prop_assert_eq!(&after.gold, &before.gold),
                _ => prop_assert!(after.gold.is_nil()),
            }
        }
    }

    #[test]
    fn softmax_ignores_shifts(xs in proptest::collection::vec(-30.0f64..30.0, 1..10), c in -100.0f64..100.0) {
        let a = softmax(&xs);
        let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
        let b = softmax(&shifted);
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (p, q) in a.iter().zip(&b) {
            prop_assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn threshold_decides_nil_iff_every_entity_is_below(
        raw in proptest::collection::vec(-5.0f64..5.0, 2..8),
        nil_at in 0usize..8,
        th in 0.0f64..1.0,
    ) {
        let nil_at = nil_at % raw.len();
        let entries = raw
            .iter()
            .enumerate()
            .map(|(i, &s)| Candidate { label: if i == nil_at { Label::Nil } else { Label::entity(format!("e{i}")) }, score: s })
            .collect();
        let cands = CandidateSet { mention: 0, entries, nil_score: 0.0 };
        let p = decide(0, &cands, &raw, PredictMode::Threshold(th), None).unwrap();
        let norm = softmax(&raw);
        let entity_probs: Vec<(usize, f64)> = norm.iter().copied().enumerate().filter(|(i, _)| *i != nil_at).collect();
        if entity_probs.iter().all(|(_, q)| *q < th) {
            prop_assert!(p.predicted.is_nil());
        } else {
            let best = entity_probs.iter().map(|(_, q)| *q).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(!p.predicted.is_nil());
            prop_assert_eq!(p.score, best);
        }
        // the boundary itself counts as confident
        let top = entity_probs.iter().map(|(_, q)| *q).fold(f64::NEG_INFINITY, f64::max);
        let at = decide(0, &cands, &raw, PredictMode::Threshold(top), None).unwrap();
        prop_assert!(!at.predicted.is_nil());
    }
}

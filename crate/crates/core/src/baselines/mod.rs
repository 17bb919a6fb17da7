//! Comparison systems: a rule sieve, BM25 candidate generation, a
//! feature-based NIL classifier, and a feature head over cross-encoder
//! scores.

mod bm25;
mod classifier;
mod dynamic;
mod features;
mod sieve;
mod wordvec;

pub use bm25::{bm25_rank, Bm25Index, BM25_B, BM25_K1};
pub use classifier::{ft_classifier, ft_link, ft_predict, resolve_in_kb, LogisticModel};
pub use dynamic::{
    dynamic_features, dynamic_nil_score, ft_example, load_ft_cross, save_ft_cross, train_ft_cross, FtConfig, FtCrossModel,
    FtExample, FtObjective,
};
pub use features::{
    extract_features, levenshtein_similarity, mes_features, FeatureVector, DEFAULT_CONTEXT_WINDOW, FUZZY_THRESHOLD, N_MES,
};
pub use sieve::{sieve_link, sieve_match, Sieve};
pub use wordvec::WordVectors;

use crate::textproc::tokenize;

/// Tokens with punctuation dropped, used by the string-matching rules.
pub(crate) fn words(text: &str) -> Vec<String> {
    tokenize(text)
        .into_iter()
        .filter(|t| t.chars().any(char::is_alphanumeric))
        .collect()
}

/// Whether `needle` occurs as a contiguous run inside `hay`.
pub(crate) fn contains_seq(hay: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && needle.len() <= hay.len() && hay.windows(needle.len()).any(|w| w == needle)
}

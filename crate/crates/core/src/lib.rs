//! NIL-aware entity linking.
//!
//! The pipeline: build datasets with out-of-KB mentions by pruning or
//! versioning an ontology ([`ontology`], [`corpus`]), retrieve top-k
//! candidates with a dual encoder that indexes a NIL row ([`biencoder`]),
//! re-rank them with a cross-encoder that can also classify a mention as NIL
//! ([`crossencoder`]), and score the result with out-of-KB and in-KB
//! precision/recall/F1 ([`metrics`]). String-matching, BM25 and
//! feature-based baselines live in [`baselines`].
//!
//! All numeric code is generic over [`Scalar`]; the aliases below fix it to
//! `f64`, which training and gradient checks use.

pub mod error;
pub mod neural;
pub mod ontology;
pub mod corpus;
pub mod rng;
pub mod scalar;
pub mod textproc;
pub mod biencoder;
pub mod crossencoder;
pub mod baselines;
pub mod metrics;
pub mod synth;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use corpus::{DatasetSplit, Label, MentionRecord};
pub use metrics::EvalReport;
pub use ontology::{Entity, Ontology};

pub type Encoder = neural::Encoder<f64>;
pub type BiEncoder = biencoder::BiEncoder<f64>;
pub type EntityIndex = biencoder::EntityIndex<f64>;
pub type CandidateSet = biencoder::CandidateSet<f64>;
pub type CrossModel = crossencoder::CrossModel<f64>;
pub type Prediction = crossencoder::Prediction<f64>;
pub type FtCrossModel = baselines::FtCrossModel<f64>;

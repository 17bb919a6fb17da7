use serde::{Deserialize, Serialize};

use crate::corpus::{Label, MentionRecord};
use crate::crossencoder::Prediction;
use crate::error::{Error, Result};
use crate::ontology::Ontology;
use crate::scalar::sigmoid;

use super::features::FeatureVector;
use super::wordvec::{cosine, WordVectors};
use super::words;

/// Binary logistic regression, `P(NIL) = σ(w·x + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Set when training saw a single class; prediction ignores the weights.
    pub constant: Option<bool>,
}

const LR: f64 = 0.5;
const EPOCHS: usize = 2000;

impl LogisticModel {
    pub fn probability(&self, x: &[f64]) -> f64 {
        match self.constant {
            Some(true) => 1.0,
            Some(false) => 0.0,
            None => sigmoid(self.bias + x.iter().zip(&self.weights).map(|(a, w)| a * w).sum::<f64>()),
        }
    }

    pub fn predict(&self, x: &[f64]) -> bool {
        self.probability(x) >= 0.5
    }
}

/// Trains by full-batch gradient descent on mean binary cross entropy.
/// `labels[i]` is true for NIL.
pub fn ft_classifier(features: &[Vec<f64>], labels: &[bool]) -> Result<LogisticModel> {
    if features.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} feature rows for {} labels",
            features.len(),
            labels.len()
        )));
    }
    let dim = features.first().map_or(0, Vec::len);
    if features.iter().any(|f| f.len() != dim) {
        return Err(Error::Shape("feature rows differ in length".into()));
    }
    let mut model = LogisticModel {
        weights: vec![0.0; dim],
        bias: 0.0,
        constant: None,
    };
    let positives = labels.iter().filter(|&&y| y).count();
    if positives == 0 || positives == labels.len() {
        model.constant = Some(positives > 0);
        return Ok(model);
    }
    let n = labels.len() as f64;
    for _ in 0..EPOCHS {
        let mut gw = vec![0.0; dim];
        let mut gb = 0.0;
        for (x, &y) in features.iter().zip(labels) {
            let err = model.probability(x) - if y { 1.0 } else { 0.0 };
            gw.iter_mut().zip(x).for_each(|(g, a)| *g += err * a);
            gb += err;
        }
        model.weights.iter_mut().zip(&gw).for_each(|(w, g)| *w -= LR * g / n);
        model.bias -= LR * gb / n;
    }
    Ok(model)
}

pub fn ft_predict(model: &LogisticModel, features: &FeatureVector) -> bool {
    model.predict(&features.to_vec())
}

/// Best in-KB entity for a mention: entities sharing a word with the mention
/// (every entity when none does), ranked by the highest cosine between the
/// mention embedding and any of the entity's surface forms; ties go to the
/// smaller id.
pub fn resolve_in_kb<'a>(mention: &str, onto: &'a Ontology, wv: &WordVectors) -> Option<(&'a str, f64)> {
    let m = words(mention);
    let shares = |f: &str| words(f).iter().any(|w| m.contains(w));
    let mut pool: Vec<_> = onto.entities().filter(|e| e.surface_forms().any(shares)).collect();
    if pool.is_empty() {
        pool = onto.entities().collect();
    }
    let mv = wv.embed_text(mention);
    let mut best: Option<(&str, f64)> = None;
    for e in pool {
        let s = e
            .surface_forms()
            .map(|f| cosine(&mv, &wv.embed_text(f)))
            .fold(f64::NEG_INFINITY, f64::max);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((e.id.as_str(), s));
        }
    }
    best
}

/// Feature-classifier linking: NIL when the classifier says so, otherwise the
/// resolved in-KB entity.
pub fn ft_link(
    mention: usize,
    rec: &MentionRecord,
    features: &FeatureVector,
    model: &LogisticModel,
    onto: &Ontology,
    wv: &WordVectors,
) -> Prediction<f64> {
    let p = model.probability(&features.to_vec());
    let (predicted, score) = if p >= 0.5 {
        (Label::Nil, p)
    } else {
        match resolve_in_kb(&rec.mention, onto, wv) {
            Some((id, _)) => (Label::entity(id), 1.0 - p),
            None => (Label::Nil, p),
        }
    };
    Prediction {
        mention,
        candidate_scores: vec![(predicted.clone(), score)],
        predicted,
        score,
        is_nil_prob: Some(p),
    }
}

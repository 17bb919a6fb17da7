use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng;

use super::words;

/// Word → dense vector lookup; unknown words map to the zero vector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WordVectors {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl WordVectors {
    pub fn new(dim: usize) -> Self {
        WordVectors {
            dim,
            vectors: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn insert(&mut self, word: impl Into<String>, v: Vec<f64>) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::Shape(format!("vector of {} dims, expected {}", v.len(), self.dim)));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::validation("non-finite word vector component"));
        }
        self.vectors.insert(word.into(), v);
        Ok(())
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(word).map(Vec::as_slice)
    }

    pub fn lookup(&self, word: &str) -> Vec<f64> {
        self.get(word).map_or_else(|| vec![0.0; self.dim], <[f64]>::to_vec)
    }

    /// Mean vector of the known words in `text`; zero when none is known.
    pub fn embed_text(&self, text: &str) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim];
        let mut n = 0usize;
        for w in words(text) {
            if let Some(v) = self.get(&w) {
                acc.iter_mut().zip(v).for_each(|(a, x)| *a += x);
                n += 1;
            }
        }
        if n > 0 {
            acc.iter_mut().for_each(|a| *a /= n as f64);
        }
        acc
    }

    /// Reads `word v1 … vd` lines. A leading `count dim` header line is
    /// skipped. Words are lowercased.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut out: Option<WordVectors> = None;
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.is_empty() {
                continue;
            }
            let parse_err = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            };
            if i == 0 && parts.len() == 2 && parts.iter().all(|p| p.parse::<usize>().is_ok()) {
                continue;
            }
            let v = parts[1..]
                .iter()
                .map(|x| x.parse::<f64>().map_err(|e| parse_err(format!("bad number {x:?}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            let wv = out.get_or_insert_with(|| WordVectors::new(v.len()));
            if v.len() != wv.dim {
                return Err(parse_err(format!("{} components, expected {}", v.len(), wv.dim)));
            }
            wv.insert(parts[0].to_lowercase(), v).map_err(|e| parse_err(e.to_string()))?;
        }
        out.ok_or_else(|| Error::validation(format!("{}: no word vectors", path.display())))
    }

    /// Small vectors from co-occurrence statistics: each word's positive PMI
    /// row (window of two tokens each side) is projected onto `dim` seeded
    /// Gaussian directions and scaled to unit length.
    pub fn from_cooccurrence<'a>(texts: impl IntoIterator<Item = &'a str>, dim: usize, seed: u64) -> Self {
        const WINDOW: usize = 2;
        let mut pair: BTreeMap<(String, String), f64> = BTreeMap::new();
        let mut marginal: BTreeMap<String, f64> = BTreeMap::new();
        let mut total = 0.0;
        for text in texts {
            let w = words(text);
            for i in 0..w.len() {
                for j in i.saturating_sub(WINDOW)..(i + WINDOW + 1).min(w.len()) {
                    if i == j {
                        continue;
                    }
                    *pair.entry((w[i].clone(), w[j].clone())).or_default() += 1.0;
                    *marginal.entry(w[i].clone()).or_default() += 1.0;
                    total += 1.0;
                }
            }
        }
        let mut rng = rng::derived(seed, 11);
        let normal = Normal::new(0.0, 1.0).expect("valid normal");
        let directions: HashMap<&str, Vec<f64>> = marginal
            .keys()
            .map(|w| (w.as_str(), (0..dim).map(|_| normal.sample(&mut rng)).collect()))
            .collect();
        let mut acc: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for ((a, b), &n) in &pair {
            let pmi = (n * total / (marginal[a] * marginal[b])).ln();
            if pmi <= 0.0 {
                continue;
            }
            let row = acc.entry(a.as_str()).or_insert_with(|| vec![0.0; dim]);
            row.iter_mut().zip(&directions[b.as_str()]).for_each(|(r, d)| *r += pmi * d);
        }
        let mut out = WordVectors::new(dim);
        for (w, mut v) in acc {
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                v.iter_mut().for_each(|x| *x /= norm);
                out.vectors.insert(w.to_string(), v);
            }
        }
        out
    }
}

pub(crate) fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        0.0
    } else {
        ab / (aa.sqrt() * bb.sqrt())
    }
}

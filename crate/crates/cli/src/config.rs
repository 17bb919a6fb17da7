//! Run configuration: a line-based `key = value` file, overridden by
//! `--set key=value` and by dedicated command-line flags.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nilink::textproc::NilRepresentation;

use crate::error::{io_err, CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// `[NIL]` candidate trained with the ranking loss, argmax prediction.
    Blinkout,
    /// Blinkout plus the jointly trained NIL head, which decides NIL.
    BlinkoutJoint,
    /// Cross-encoder trained on in-KB mentions, NIL by threshold.
    ThBlink,
    /// Frozen NIL representation; NIL mentions skip the ranking loss.
    NilrepBlink,
    Sieve,
    /// BM25 candidates, in-KB cross-encoder, NIL by threshold.
    Bm25CrossTh,
    /// Logistic NIL classifier over string and word-vector features.
    FtClassifier,
    /// Cross-encoder with the feature-based NIL head.
    FtBlinkout,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Blinkout,
        Method::BlinkoutJoint,
        Method::ThBlink,
        Method::NilrepBlink,
        Method::Sieve,
        Method::Bm25CrossTh,
        Method::FtClassifier,
        Method::FtBlinkout,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Blinkout => "blinkout",
            Method::BlinkoutJoint => "blinkout_joint",
            Method::ThBlink => "th_blink",
            Method::NilrepBlink => "nilrep_blink",
            Method::Sieve => "sieve",
            Method::Bm25CrossTh => "bm25_cross_th",
            Method::FtClassifier => "ft_classifier",
            Method::FtBlinkout => "ft_blinkout",
        }
    }

    /// Methods whose candidates come from the bi-encoder.
    pub fn uses_biencoder(self) -> bool {
        matches!(
            self,
            Method::Blinkout | Method::BlinkoutJoint | Method::ThBlink | Method::NilrepBlink | Method::FtBlinkout
        )
    }

    pub fn uses_crossencoder(self) -> bool {
        self.uses_biencoder() || self == Method::Bm25CrossTh
    }

    pub fn uses_threshold(self) -> bool {
        matches!(self, Method::ThBlink | Method::Bm25CrossTh)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Method::ALL.iter().map(|m| m.name()).collect();
                format!("unknown method {s:?}; expected one of {}", names.join(", "))
            })
    }
}

/// Cross-encoder NIL threshold: a fixed value or tuned on the validation split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    Fixed(f64),
    Auto,
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Threshold::Fixed(v) => write!(f, "{v}"),
            Threshold::Auto => f.write_str("auto"),
        }
    }
}

impl FromStr for Threshold {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "auto" {
            return Ok(Threshold::Auto);
        }
        let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
        if !(0.0..=1.0).contains(&v) {
            return Err(format!("threshold {v} outside [0, 1]"));
        }
        Ok(Threshold::Fixed(v))
    }
}

/// Comma-separated list value.
#[derive(Debug, Clone, PartialEq)]
pub struct List<T>(pub Vec<T>);

impl<T: fmt::Display> fmt::Display for List<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

impl<T: FromStr> FromStr for List<T>
where
    T::Err: fmt::Display,
{
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(|p| p.parse::<T>().map_err(|e| format!("{p:?}: {e}")))
            .collect::<Result<Vec<_>, _>>()
            .map(List)
    }
}

/// Optional path; the empty string means unset.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptPath(pub Option<PathBuf>);

impl fmt::Display for OptPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.0 {
            Some(p) => write!(f, "{}", p.display()),
            None => Ok(()),
        }
    }
}

impl FromStr for OptPath {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(OptPath((!s.is_empty()).then(|| PathBuf::from(s))))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NilRep(pub NilRepresentation);

impl fmt::Display for NilRep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl FromStr for NilRep {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.parse().map(NilRep).map_err(|e: nilink::Error| e.to_string())
    }
}

macro_rules! run_config {
    ($($(#[doc = $doc:literal])* $field:ident : $ty:ty = $default:expr;)*) => {
        #[derive(Debug, Clone, PartialEq)]
        pub struct RunConfig {
            $($(#[doc = $doc])* pub $field: $ty,)*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                RunConfig { $($field: $default,)* }
            }
        }

        impl RunConfig {
            pub const KEYS: &'static [&'static str] = &[$(stringify!($field)),*];

            /// Sets one key from its text form.
            pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
                match key {
                    $(stringify!($field) => {
                        self.$field = value
                            .parse::<$ty>()
                            .map_err(|e| CliError::usage(format!("bad value {value:?} for {key}: {e}")))?;
                    })*
                    _ => return Err(CliError::usage(format!("unknown config key {key:?}"))),
                }
                Ok(())
            }

            /// Every key with its value, in declaration order.
            pub fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$((stringify!($field), self.$field.to_string())),*]
            }
        }
    };
}

fn default_k_grid() -> List<usize> {
    List(vec![5, 10, 20, 50, 100, 150, 200])
}

fn default_th_grid() -> List<f64> {
    List((1..20).map(|i| i as f64 / 20.0).collect())
}

run_config! {
    /// Target knowledge base (the pruned or older ontology for linking).
    ontology: OptPath = OptPath::default();
    /// Older ontology version for the versioning strategy.
    old_ontology: OptPath = OptPath::default();
    merges: OptPath = OptPath::default();
    train: OptPath = OptPath::default();
    valid: OptPath = OptPath::default();
    test: OptPath = OptPath::default();
    word_vectors: OptPath = OptPath::default();
    predictions: OptPath = OptPath::default();
    /// Directory receiving this command's outputs.
    out: OptPath = OptPath::default();
    /// Directory holding artifacts of earlier commands; defaults to `out`.
    work: OptPath = OptPath::default();
    method: Method = Method::Blinkout;
    /// Split that `predict` and `eval` run on.
    split: String = "test".to_string();
    k: usize = 10;
    k_grid: List<usize> = default_k_grid();
    nil_rep: NilRep = NilRep(NilRepresentation::Token);
    th_cross: Threshold = Threshold::Fixed(0.95);
    th_grid: List<f64> = default_th_grid();
    lambda_nil: f64 = 0.25;
    nil_threshold: f64 = 0.5;
    syn_bi: bool = true;
    syn_cross: bool = true;
    shared_encoder: bool = true;
    freeze_nil: bool = false;
    freeze_all: bool = false;
    embed_dim: usize = 64;
    layers: usize = 2;
    heads: usize = 2;
    ffn_dim: usize = 128;
    bi_epochs: usize = 3;
    bi_batch: usize = 32;
    bi_lr: f64 = 1e-3;
    margin: f64 = 0.2;
    cross_epochs: usize = 4;
    cross_batch: usize = 1;
    cross_lr: f64 = 1e-3;
    weight_decay: f64 = 0.01;
    warmup: f64 = 0.1;
    seed: u64 = 0;
    fraction: f64 = 0.2;
    vocab_min_count: usize = 1;
    ctxt_window: usize = 32;
    /// Dimension of the fallback co-occurrence word vectors.
    wv_dim: usize = 50;
    synth_entities: usize = 200;
    synth_mentions: usize = 1500;
    synth_min_synonyms: usize = 2;
    synth_max_synonyms: usize = 4;
    synth_name_rate: f64 = 0.4;
}

impl RunConfig {
    /// Parses `key = value` lines; `#` starts a comment.
    pub fn apply_file(&mut self, path: &Path) -> CliResult<()> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::usage(format!("{}:{}: expected key = value", path.display(), i + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| CliError::usage(format!("{}:{}: {}", path.display(), i + 1, e.msg)))?;
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, spec: &str) -> CliResult<()> {
        let (key, value) = spec
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("override {spec:?} is not key=value")))?;
        self.set(key.trim(), value.trim())
    }

    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn out_dir(&self) -> CliResult<&Path> {
        self.out
            .0
            .as_deref()
            .ok_or_else(|| CliError::validation("no output directory; set out"))
    }

    pub fn work_dir(&self) -> CliResult<&Path> {
        match &self.work.0 {
            Some(p) => Ok(p),
            None => self.out_dir(),
        }
    }

    /// Makes every set path absolute so a manifest can be replayed from any
    /// directory.
    pub fn absolutize(&mut self) {
        for p in [
            &mut self.ontology,
            &mut self.old_ontology,
            &mut self.merges,
            &mut self.train,
            &mut self.valid,
            &mut self.test,
            &mut self.word_vectors,
            &mut self.predictions,
            &mut self.out,
            &mut self.work,
        ] {
            if let Some(path) = &mut p.0 {
                *path = crate::manifest::absolute(path);
            }
        }
    }

    /// Value of a required path key.
    pub fn require(&self, key: &str) -> CliResult<&Path> {
        let p = match key {
            "ontology" => &self.ontology,
            "old_ontology" => &self.old_ontology,
            "train" => &self.train,
            "valid" => &self.valid,
            "test" => &self.test,
            "predictions" => &self.predictions,
            _ => unreachable!("not a required path key: {key}"),
        };
        p.0.as_deref()
            .ok_or_else(|| CliError::validation(format!("missing required input {key}")))
    }

    /// Checks value ranges that hold for every command.
    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::validation(m));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.k_grid.0.contains(&0) || self.k_grid.0.is_empty() {
            return bad("k_grid entries must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.fraction) {
            return bad(format!("fraction {} outside [0, 1]", self.fraction));
        }
        if self.lambda_nil < 0.0 {
            return bad("lambda_nil must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.nil_threshold) {
            return bad("nil_threshold outside [0, 1]".into());
        }
        if self.th_grid.0.is_empty() || self.th_grid.0.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return bad("th_grid must be non-empty values in [0, 1]".into());
        }
        if !matches!(self.split.as_str(), "train" | "valid" | "test") {
            return bad(format!("split must be train, valid or test, not {:?}", self.split));
        }
        for (name, v) in [("embed_dim", self.embed_dim), ("layers", self.layers), ("heads", self.heads), ("ffn_dim", self.ffn_dim)] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if self.embed_dim % self.heads != 0 {
            return bad(format!("embed_dim {} not divisible by heads {}", self.embed_dim, self.heads));
        }
        for (name, v) in [("bi_lr", self.bi_lr), ("cross_lr", self.cross_lr)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive"));
            }
        }
        if !(0.0..=1.0).contains(&self.warmup) {
            return bad("warmup outside [0, 1]".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entries_round_trip() {
        let mut c = RunConfig::default();
        c.set("method", "ft_blinkout").unwrap();
        c.set("th_cross", "auto").unwrap();
        c.set("nil_rep", "NIL+def").unwrap();
        c.set("k_grid", "3, 7").unwrap();
        c.set("bi_lr", "0.0003").unwrap();
        let mut d = RunConfig::default();
        for (k, v) in c.entries() {
            d.set(k, &v).unwrap();
        }
        assert_eq!(c, d);
        assert_eq!(RunConfig::KEYS.len(), c.entries().len());
    }

    #[test]
    fn bad_keys_and_values_are_usage_errors() {
        let mut c = RunConfig::default();
        assert_eq!(c.set("nope", "1").unwrap_err().exit_code(), 1);
        assert_eq!(c.set("k", "ten").unwrap_err().exit_code(), 1);
        assert_eq!(c.set("th_cross", "1.5").unwrap_err().exit_code(), 1);
        assert_eq!(c.set("method", "blink").unwrap_err().exit_code(), 1);
    }

    #[test]
    fn file_comments_and_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.cfg");
        fs::write(&p, "# experiment\nk = 20\n\nmethod = sieve # rules only\n").unwrap();
        let mut c = RunConfig::default();
        c.apply_file(&p).unwrap();
        c.apply_override("k=5").unwrap();
        assert_eq!((c.k, c.method), (5, Method::Sieve));
        fs::write(&p, "k 20\n").unwrap();
        assert!(c.apply_file(&p).unwrap_err().msg.contains(":1:"));
    }
}

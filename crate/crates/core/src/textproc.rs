//! Tokenization and the fixed-length input templates fed to the encoders.
//!
//! Text is lowercased, split on whitespace, and punctuation is split off into
//! single-character tokens. Special tokens are never produced from raw text:
//! `"[nil]"` in a document tokenizes as `[`, `nil`, `]`.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use crate::corpus::MentionRecord;
use crate::error::{Error, Result};
use crate::ontology::Entity;

pub const MENTION_MAX_LEN: usize = 32;
pub const ENTITY_MAX_LEN: usize = 128;
pub const PAIR_MAX_LEN: usize = MENTION_MAX_LEN + ENTITY_MAX_LEN;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u32)]
pub enum Special {
    Cls = 0,
    Sep = 1,
    Unk = 2,
    Pad = 3,
    MentionStart = 4,
    MentionEnd = 5,
    Ent = 6,
    Syn = 7,
    Nil = 8,
}

impl Special {
    pub const ALL: [Special; 9] = [
        Special::Cls,
        Special::Sep,
        Special::Unk,
        Special::Pad,
        Special::MentionStart,
        Special::MentionEnd,
        Special::Ent,
        Special::Syn,
        Special::Nil,
    ];

    pub fn id(self) -> u32 {
        self as u32
    }

    pub fn text(self) -> &'static str {
        match self {
            Special::Cls => "[CLS]",
            Special::Sep => "[SEP]",
            Special::Unk => "[UNK]",
            Special::Pad => "[PAD]",
            Special::MentionStart => "[M_s]",
            Special::MentionEnd => "[M_e]",
            Special::Ent => "[ENT]",
            Special::Syn => "[SYN]",
            Special::Nil => "[NIL]",
        }
    }
}

pub const N_SPECIAL: usize = Special::ALL.len();

/// Lowercased whitespace tokens with punctuation split off.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let mut cur = String::new();
        for ch in word.chars() {
            if ch.is_alphanumeric() {
                cur.extend(ch.to_lowercase());
            } else {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(ch.to_lowercase().collect());
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        for (i, s) in Special::ALL.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(s.text()) {
                return Err(Error::validation(format!(
                    "vocabulary line {} must be {}",
                    i + 1,
                    s.text()
                )));
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::validation(format!("vocabulary repeats token {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(Special::Unk.id())
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Corpus tokens (specials excluded), in id order.
    pub fn words(&self) -> &[String] {
        &self.tokens[N_SPECIAL..]
    }

    pub fn encode_text(&self, text: &str) -> Vec<u32> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for t in &self.tokens {
            writeln!(w, "{t}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let tokens = BufReader::new(file)
            .lines()
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(|e| Error::io(path, e))?;
        Self::from_tokens(tokens)
    }
}

/// Specials first, then tokens with count ≥ `min_count` by descending count,
/// ties in lexicographic order.
pub fn build_vocab<I, S>(texts: I, min_count: usize) -> Vocabulary
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut counts: HashMap<String, usize> = HashMap::new();
    for text in texts {
        for tok in tokenize(text.as_ref()) {
            *counts.entry(tok).or_default() += 1;
        }
    }
    let mut kept: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(_, c)| *c >= min_count.max(1))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let tokens = Special::ALL
        .iter()
        .map(|s| s.text().to_string())
        .chain(kept.into_iter().map(|(t, _)| t))
        .collect();
    Vocabulary::from_tokens(tokens).expect("specials are placed first")
}

/// Fixed-length token ids and attention mask. Padding is always a suffix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedInput {
    pub ids: Vec<u32>,
    pub mask: Vec<u8>,
    /// Set when the mention itself had to be cut to fit.
    pub mention_truncated: bool,
}

impl TokenizedInput {
    fn padded(mut ids: Vec<u32>, max_len: usize) -> Self {
        ids.truncate(max_len);
        let real = ids.len();
        ids.resize(max_len, Special::Pad.id());
        let mut mask = vec![1u8; real];
        mask.resize(max_len, 0);
        TokenizedInput {
            ids,
            mask,
            mention_truncated: false,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Ids of the unmasked positions, in order.
    pub fn real_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.ids
            .iter()
            .zip(&self.mask)
            .filter(|(_, &m)| m == 1)
            .map(|(&id, _)| id)
    }

    pub fn real_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 1).count()
    }
}

/// Tokens of the unmasked positions, rendered back to text.
pub fn detokenize(vocab: &Vocabulary, input: &TokenizedInput) -> Vec<String> {
    input
        .real_ids()
        .map(|id| vocab.token(id).unwrap_or("[UNK]").to_string())
        .collect()
}

/// Unpadded `[CLS] ctxt_l [M_s] mention [M_e] ctxt_r [SEP]` within `max_len`.
///
/// The mention and its markers are kept whole when possible; the remaining
/// budget is split evenly between the two contexts, each trimmed from its
/// outer end, and a side that needs less than its half donates the rest.
fn mention_sequence(rec: &MentionRecord, vocab: &Vocabulary, max_len: usize) -> (Vec<u32>, bool) {
    let left = vocab.encode_text(&rec.ctxt_l);
    let mut mention = vocab.encode_text(&rec.mention);
    let right = vocab.encode_text(&rec.ctxt_r);

    let budget = max_len.saturating_sub(4);
    let mut truncated = false;
    if mention.len() > budget {
        mention.truncate(budget);
        truncated = true;
    }
    let room = budget - mention.len();
    let half = room / 2;
    let (keep_l, keep_r) = if left.len() <= half {
        (left.len(), right.len().min(room - left.len()))
    } else if right.len() <= room - half {
        (left.len().min(room - right.len()), right.len())
    } else {
        (half, room - half)
    };

    let mut seq = Vec::with_capacity(max_len);
    seq.push(Special::Cls.id());
    seq.extend_from_slice(&left[left.len() - keep_l..]);
    seq.push(Special::MentionStart.id());
    seq.extend_from_slice(&mention);
    seq.push(Special::MentionEnd.id());
    seq.extend_from_slice(&right[..keep_r]);
    seq.push(Special::Sep.id());
    seq.truncate(max_len);
    (seq, truncated)
}

pub fn mention_input(rec: &MentionRecord, vocab: &Vocabulary, max_len: usize) -> TokenizedInput {
    let (seq, truncated) = mention_sequence(rec, vocab, max_len);
    if truncated {
        log::warn!(
            "mention {:?} (doc {}) truncated to fit {max_len} tokens",
            rec.mention,
            rec.doc_id
        );
    }
    let mut out = TokenizedInput::padded(seq, max_len);
    out.mention_truncated = truncated;
    out
}

/// How the NIL candidate is written out as text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum NilRepresentation {
    /// `NIL`
    Word,
    /// `NIL [ENT] It is a NIL option.`
    WordDef,
    /// `[NIL]`
    #[default]
    Token,
    /// `[NIL] [ENT] It is a NIL option.`
    TokenDef,
    /// `[NIL] [ENT] It is a [NIL] option.`
    TokenNilDef,
}

impl NilRepresentation {
    pub const ALL: [NilRepresentation; 5] = [
        NilRepresentation::Word,
        NilRepresentation::WordDef,
        NilRepresentation::Token,
        NilRepresentation::TokenDef,
        NilRepresentation::TokenNilDef,
    ];

    pub fn template(self) -> &'static str {
        match self {
            NilRepresentation::Word => "NIL",
            NilRepresentation::WordDef => "NIL [ENT] It is a NIL option.",
            NilRepresentation::Token => "[NIL]",
            NilRepresentation::TokenDef => "[NIL] [ENT] It is a NIL option.",
            NilRepresentation::TokenNilDef => "[NIL] [ENT] It is a [NIL] option.",
        }
    }

    pub fn uses_special_token(self) -> bool {
        !matches!(self, NilRepresentation::Word | NilRepresentation::WordDef)
    }

    /// Token ids of the template body (no `[CLS]`/`[SEP]`).
    pub fn body_ids(self, vocab: &Vocabulary) -> Vec<u32> {
        let mut out = Vec::new();
        for piece in self.template().split_whitespace() {
            match piece {
                "[ENT]" => out.push(Special::Ent.id()),
                "[NIL]" => out.push(Special::Nil.id()),
                word => out.extend(vocab.encode_text(word)),
            }
        }
        out
    }

    /// The single token whose embedding stands for NIL: `[NIL]`, or the word
    /// `nil` for the plain-word variants.
    pub fn anchor_token(self, vocab: &Vocabulary) -> u32 {
        if self.uses_special_token() {
            Special::Nil.id()
        } else {
            vocab.id("nil")
        }
    }

    /// Plain words appearing in any template; add these to the vocabulary so
    /// the word variants do not collapse to `[UNK]`.
    pub fn vocabulary_text() -> &'static str {
        "NIL It is a NIL option."
    }
}

impl fmt::Display for NilRepresentation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NilRepresentation::Word => "NIL",
            NilRepresentation::WordDef => "NIL+def",
            NilRepresentation::Token => "[NIL]",
            NilRepresentation::TokenDef => "[NIL]+def",
            NilRepresentation::TokenNilDef => "[NIL]+nildef",
        })
    }
}

impl FromStr for NilRepresentation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NilRepresentation::ALL
            .into_iter()
            .find(|r| r.to_string() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown NIL representation {s:?}")))
    }
}

impl TryFrom<String> for NilRepresentation {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<NilRepresentation> for String {
    fn from(r: NilRepresentation) -> String {
        r.to_string()
    }
}

/// What sits on the entity side of an input.
#[derive(Debug, Clone, Copy)]
pub enum EntityText<'a> {
    /// Name, optionally followed by `[SYN]`-separated synonyms, then the definition.
    Entity {
        entity: &'a Entity,
        with_synonyms: bool,
    },
    /// One synonym standing in for its entity (bi-encoder augmentation rows).
    Synonym { entity: &'a Entity, index: usize },
    Nil(NilRepresentation),
}

impl<'a> EntityText<'a> {
    pub fn entity(entity: &'a Entity, with_synonyms: bool) -> Self {
        EntityText::Entity {
            entity,
            with_synonyms,
        }
    }

    fn body_ids(&self, vocab: &Vocabulary) -> Vec<u32> {
        match *self {
            EntityText::Entity {
                entity,
                with_synonyms,
            } => {
                let mut out = vocab.encode_text(&entity.name);
                out.push(Special::Ent.id());
                if with_synonyms {
                    for syn in &entity.synonyms {
                        out.extend(vocab.encode_text(syn));
                        out.push(Special::Syn.id());
                    }
                }
                out.extend(vocab.encode_text(&entity.definition));
                out
            }
            EntityText::Synonym { entity, index } => {
                let mut out = vocab.encode_text(&entity.synonyms[index]);
                out.push(Special::Ent.id());
                out.extend(vocab.encode_text(&entity.definition));
                out
            }
            EntityText::Nil(rep) => rep.body_ids(vocab),
        }
    }

    /// Unpadded `[CLS] body [SEP]`, body cut at the tail so `[SEP]` survives.
    fn sequence(&self, vocab: &Vocabulary, max_len: usize) -> Vec<u32> {
        let mut body = self.body_ids(vocab);
        body.truncate(max_len.saturating_sub(2));
        let mut seq = Vec::with_capacity(body.len() + 2);
        seq.push(Special::Cls.id());
        seq.extend(body);
        seq.push(Special::Sep.id());
        seq.truncate(max_len);
        seq
    }
}

pub fn entity_input(
    ent: &Entity,
    with_synonyms: bool,
    vocab: &Vocabulary,
    max_len: usize,
) -> TokenizedInput {
    entity_text_input(EntityText::entity(ent, with_synonyms), vocab, max_len)
}

pub fn entity_text_input(text: EntityText<'_>, vocab: &Vocabulary, max_len: usize) -> TokenizedInput {
    TokenizedInput::padded(text.sequence(vocab, max_len), max_len)
}

/// Mention template (first [`MENTION_MAX_LEN`] tokens of budget) followed by the
/// entity template without its leading `[CLS]`, padded to `max_len`.
pub fn pair_input(
    rec: &MentionRecord,
    target: EntityText<'_>,
    vocab: &Vocabulary,
    max_len: usize,
) -> TokenizedInput {
    let (mut seq, truncated) = mention_sequence(rec, vocab, MENTION_MAX_LEN);
    let entity = target.sequence(vocab, ENTITY_MAX_LEN);
    seq.extend_from_slice(&entity[1..]);
    let mut out = TokenizedInput::padded(seq, max_len);
    out.mention_truncated = truncated;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Label;

    fn vocab() -> Vocabulary {
        build_vocab(
            [
                "flu fever patient has a bad case of",
                "bradycardia slow heart beat",
                NilRepresentation::vocabulary_text(),
            ],
            1,
        )
    }

    fn words(v: &Vocabulary, inp: &TokenizedInput) -> String {
        detokenize(v, inp).join(" ")
    }

    #[test]
    fn vocab_specials_and_order() {
        let v = build_vocab(["a b", "b c"], 1);
        assert_eq!(v.len(), 12);
        assert_eq!(v.token(0), Some("[CLS]"));
        assert_eq!(v.token(8), Some("[NIL]"));
        assert_eq!(v.words(), &["b", "a", "c"]);
        let v2 = build_vocab(["a b", "b c"], 2);
        assert_eq!(v2.words(), &["b"]);
        assert_eq!(build_vocab(["a b", "b c"], 1), v);
    }

    #[test]
    fn vocab_file_round_trip() {
        let v = vocab();
        let f = tempfile::NamedTempFile::new().unwrap();
        v.save(f.path()).unwrap();
        assert_eq!(Vocabulary::load(f.path()).unwrap(), v);
    }

    #[test]
    fn punctuation_is_split_and_specials_never_come_from_text() {
        assert_eq!(tokenize("Flu, today."), vec!["flu", ",", "today", "."]);
        let v = build_vocab(["[NIL] [cls]"], 1);
        assert!(v.words().iter().all(|w| !w.starts_with('[') || w == "["));
        assert_eq!(v.get("[NIL]"), Some(8));
    }

    #[test]
    fn mention_with_empty_context() {
        let v = vocab();
        let inp = mention_input(&MentionRecord::new("flu", Label::Nil), &v, MENTION_MAX_LEN);
        assert_eq!(inp.len(), 32);
        assert_eq!(words(&v, &inp), "[CLS] [M_s] flu [M_e] [SEP]");
        assert_eq!(inp.real_len(), 5);
        assert!(inp.ids[5..].iter().all(|&i| i == Special::Pad.id()));
    }

    #[test]
    fn long_left_context_loses_its_head() {
        let v = vocab();
        let left = (0..40).map(|i| if i % 2 == 0 { "a" } else { "bad" }).collect::<Vec<_>>().join(" ");
        let rec = MentionRecord::new("flu", Label::Nil).with_context(format!("patient {left}"), "today");
        let inp = mention_input(&rec, &v, MENTION_MAX_LEN);
        assert_eq!(inp.real_len(), 32);
        let toks = detokenize(&v, &inp);
        assert_eq!(toks[0], "[CLS]");
        assert!(!toks.contains(&"patient".to_string()));
        let ms = toks.iter().position(|t| t == "[M_s]").unwrap();
        assert_eq!(&toks[ms..ms + 3], &["[M_s]", "flu", "[M_e]"]);
        assert_eq!(toks.last().unwrap(), "[SEP]");
        // unknown right-context word maps to [UNK]
        assert_eq!(toks[ms + 3], "[UNK]");
    }

    #[test]
    fn context_budget_is_split_between_sides() {
        let v = vocab();
        let side = vec!["fever"; 30].join(" ");
        let rec = MentionRecord::new("flu", Label::Nil).with_context(side.clone(), side);
        let toks = detokenize(&v, &mention_input(&rec, &v, 32));
        let ms = toks.iter().position(|t| t == "[M_s]").unwrap();
        let me = toks.iter().position(|t| t == "[M_e]").unwrap();
        let left = ms - 1;
        let right = toks.len() - 1 - me - 1;
        assert_eq!(left + right, 32 - 4 - 1);
        assert!(left.abs_diff(right) <= 1);
    }

    #[test]
    fn overlong_mention_is_cut_and_flagged() {
        let v = vocab();
        let rec = MentionRecord::new(vec!["flu"; 40].join(" "), Label::Nil);
        let inp = mention_input(&rec, &v, 32);
        assert!(inp.mention_truncated);
        let toks = detokenize(&v, &inp);
        assert_eq!(toks.len(), 32);
        assert_eq!(toks[1], "[M_s]");
        assert_eq!(&toks[30..], &["[M_e]", "[SEP]"]);
    }

    #[test]
    fn entity_templates() {
        let v = vocab();
        let e = Entity::new("C0428977", "Bradycardia").with_synonyms(["Slow heart beat"]);
        let with = entity_input(&e, true, &v, ENTITY_MAX_LEN);
        assert_eq!(with.len(), 128);
        assert_eq!(words(&v, &with), "[CLS] bradycardia [ENT] slow heart beat [SYN] [SEP]");
        let without = entity_input(&e, false, &v, ENTITY_MAX_LEN);
        assert!(!without.ids.contains(&Special::Syn.id()));
        let bare = Entity::new("X", "Bradycardia");
        assert_eq!(entity_input(&bare, true, &v, 128), entity_input(&bare, false, &v, 128));
    }

    #[test]
    fn entity_truncation_keeps_sep() {
        let v = vocab();
        let e = Entity::new("X", "flu").with_definition(vec!["fever"; 300].join(" "));
        let inp = entity_input(&e, false, &v, 16);
        assert_eq!(inp.real_len(), 16);
        assert_eq!(*inp.ids.last().unwrap(), Special::Sep.id());
    }

    #[test]
    fn pair_templates_with_nil() {
        let v = vocab();
        let rec = MentionRecord::new("flu", Label::Nil);
        let p = pair_input(&rec, EntityText::Nil(NilRepresentation::Token), &v, PAIR_MAX_LEN);
        assert_eq!(p.len(), 160);
        assert_eq!(words(&v, &p), "[CLS] [M_s] flu [M_e] [SEP] [NIL] [SEP]");
        let p = pair_input(&rec, EntityText::Nil(NilRepresentation::WordDef), &v, PAIR_MAX_LEN);
        assert_eq!(
            words(&v, &p),
            "[CLS] [M_s] flu [M_e] [SEP] nil [ENT] it is a nil option . [SEP]"
        );
    }

    #[test]
    fn nil_variants_are_distinct() {
        let v = vocab();
        let seqs: Vec<_> = NilRepresentation::ALL.iter().map(|r| r.body_ids(&v)).collect();
        for i in 0..seqs.len() {
            for j in i + 1..seqs.len() {
                assert_ne!(seqs[i], seqs[j]);
            }
        }
        for r in NilRepresentation::ALL {
            assert_eq!(r.body_ids(&v).contains(&Special::Nil.id()), r.uses_special_token());
            assert_eq!(r.to_string().parse::<NilRepresentation>().unwrap(), r);
        }
    }
}

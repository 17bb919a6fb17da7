//! Mentions, splits, NIL relabelling against a target ontology, and split
//! statistics.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::ontology::{read_jsonl, synonym_count, Ontology};

/// A gold or predicted link target: an entity id or NIL.
///
/// Ordering puts `Nil` before every entity, which is the tie-break used when
/// ranking candidates.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Nil,
    Entity(String),
}

impl Label {
    pub const NIL_STR: &'static str = "NIL";

    pub fn entity(id: impl Into<String>) -> Self {
        Label::Entity(id.into())
    }

    pub fn is_nil(&self) -> bool {
        matches!(self, Label::Nil)
    }

    pub fn entity_id(&self) -> Option<&str> {
        match self {
            Label::Entity(id) => Some(id),
            Label::Nil => None,
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            Label::Entity(id) => id,
            Label::Nil => Self::NIL_STR,
        }
    }

    pub fn parse(s: &str) -> Self {
        if s == Self::NIL_STR {
            Label::Nil
        } else {
            Label::Entity(s.to_string())
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        if s.is_empty() {
            return Err(serde::de::Error::custom("empty gold label"));
        }
        Ok(Label::parse(&s))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MentionRecord {
    pub doc_id: String,
    pub mention: String,
    #[serde(default)]
    pub ctxt_l: String,
    #[serde(default)]
    pub ctxt_r: String,
    pub gold: Label,
}

impl MentionRecord {
    pub fn new(mention: impl Into<String>, gold: Label) -> Self {
        MentionRecord {
            doc_id: String::new(),
            mention: mention.into(),
            ctxt_l: String::new(),
            ctxt_r: String::new(),
            gold,
        }
    }

    pub fn with_context(mut self, left: impl Into<String>, right: impl Into<String>) -> Self {
        self.ctxt_l = left.into();
        self.ctxt_r = right.into();
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Valid,
    Test,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Valid => "valid",
            SplitName::Test => "test",
        }
    }
}

impl std::str::FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "valid" | "validation" | "dev" => Ok(SplitName::Valid),
            "test" => Ok(SplitName::Test),
            other => Err(Error::InvalidArgument(format!("unknown split name {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub name: SplitName,
    pub records: Vec<MentionRecord>,
}

impl DatasetSplit {
    pub fn new(name: SplitName, records: Vec<MentionRecord>) -> Self {
        DatasetSplit { name, records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn golds(&self) -> Vec<Label> {
        self.records.iter().map(|r| r.gold.clone()).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for r in &self.records {
            let line = serde_json::to_string(r).expect("record serializes");
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub fn load_mentions(path: impl AsRef<Path>, name: SplitName) -> Result<DatasetSplit> {
    let records = read_jsonl(path.as_ref(), |line, _| {
        let r: MentionRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
        if r.mention.trim().is_empty() {
            return Err("empty mention".to_string());
        }
        Ok(r)
    })?;
    Ok(DatasetSplit { name, records })
}

/// Golds absent from `target` become NIL.
pub fn relabel_nil(split: &DatasetSplit, target: &Ontology) -> DatasetSplit {
    let records = split
        .records
        .iter()
        .map(|r| {
            let mut r = r.clone();
            if let Label::Entity(id) = &r.gold {
                if !target.contains(id) {
                    r.gold = Label::Nil;
                }
            }
            r
        })
        .collect();
    DatasetSplit {
        name: split.name,
        records,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitStats {
    pub split: SplitName,
    pub mentions: usize,
    pub out_of_kb: usize,
    pub out_of_kb_pct: f64,
    pub in_kb: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsTable {
    pub entities: usize,
    pub entities_and_synonyms: usize,
    pub splits: Vec<SplitStats>,
}

pub fn split_stats(splits: &[DatasetSplit], onto: &Ontology) -> StatsTable {
    let (entities, entities_and_synonyms) = synonym_count(onto);
    let splits = splits
        .iter()
        .map(|s| {
            let out_of_kb = s.records.iter().filter(|r| r.gold.is_nil()).count();
            let mentions = s.len();
            let out_of_kb_pct = if mentions == 0 {
                0.0
            } else {
                100.0 * out_of_kb as f64 / mentions as f64
            };
            SplitStats {
                split: s.name,
                mentions,
                out_of_kb,
                out_of_kb_pct,
                in_kb: mentions - out_of_kb,
            }
        })
        .collect();
    StatsTable {
        entities,
        entities_and_synonyms,
        splits,
    }
}

impl fmt::Display for StatsTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "# entities: {}  # entities & synonyms: {}",
            self.entities, self.entities_and_synonyms
        )?;
        writeln!(f, "{:<6} {:>9} {:>9} {:>8} {:>9}", "split", "mentions", "out-of-KB", "%", "in-KB")?;
        for s in &self.splits {
            writeln!(
                f,
                "{:<6} {:>9} {:>9} {:>8.1} {:>9}",
                s.split.as_str(),
                s.mentions,
                s.out_of_kb,
                s.out_of_kb_pct,
                s.in_kb
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ontology::Entity;
    use std::io::Write;

    fn write_tmp(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn loads_in_file_order_with_nil() {
        let f = write_tmp(&[
            r#"{"doc_id":"d1","mention":"flu","ctxt_l":"has","ctxt_r":"today","gold":"C1"}"#,
            r#"{"doc_id":"d2","mention":"zika","ctxt_l":"","ctxt_r":"","gold":"NIL"}"#,
        ]);
        let s = load_mentions(f.path(), SplitName::Train).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.records[0].mention, "flu");
        assert_eq!(s.records[1].gold, Label::Nil);
    }

    #[test]
    fn missing_mention_reports_line() {
        let f = write_tmp(&[
            r#"{"doc_id":"d1","mention":"flu","ctxt_l":"","ctxt_r":"","gold":"C1"}"#,
            r#"{"doc_id":"d2","ctxt_l":"","ctxt_r":"","gold":"C1"}"#,
        ]);
        match load_mentions(f.path(), SplitName::Test) {
            Err(Error::Parse { line, msg, .. }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("mention"), "{msg}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn relabel_marks_removed_golds() {
        let onto = Ontology::from_entities([Entity::new("A", "a")], "t").unwrap();
        let split = DatasetSplit::new(
            SplitName::Test,
            vec![
                MentionRecord::new("b", Label::entity("B")),
                MentionRecord::new("a", Label::entity("A")),
                MentionRecord::new("z", Label::Nil),
            ],
        );
        let out = relabel_nil(&split, &onto);
        assert_eq!(out.golds(), vec![Label::Nil, Label::entity("A"), Label::Nil]);
        assert_eq!(relabel_nil(&out, &onto), out);
    }

    #[test]
    fn stats_percentages() {
        let onto = Ontology::default();
        let mut recs: Vec<_> = (0..8).map(|_| MentionRecord::new("m", Label::entity("A"))).collect();
        recs.extend((0..2).map(|_| MentionRecord::new("m", Label::Nil)));
        let t = split_stats(
            &[
                DatasetSplit::new(SplitName::Train, recs),
                DatasetSplit::new(SplitName::Test, vec![]),
            ],
            &onto,
        );
        assert_eq!(t.splits[0].out_of_kb, 2);
        assert!((t.splits[0].out_of_kb_pct - 20.0).abs() < 1e-12);
        assert_eq!(t.splits[1].out_of_kb_pct, 0.0);
        assert_eq!(t.splits[1].mentions, 0);
    }
}

//! Ontologies as entity DAGs, plus the two dataset-construction transforms:
//! pruning (random removal with parent/child rewiring) and versioning
//! (out-of-KB ids of a newer release relative to an older one).

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub definition: String,
    #[serde(default)]
    pub synonyms: Vec<String>,
    #[serde(default)]
    pub parents: Vec<String>,
}

impl Entity {
    pub fn new(id: impl Into<String>, name: impl Into<String>) -> Self {
        Entity {
            id: id.into(),
            name: name.into(),
            definition: String::new(),
            synonyms: Vec::new(),
            parents: Vec::new(),
        }
    }

    pub fn with_parents<I, S>(mut self, parents: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.parents = parents.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_synonyms<I, S>(mut self, synonyms: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.synonyms = synonyms.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_definition(mut self, definition: impl Into<String>) -> Self {
        self.definition = definition.into();
        self
    }

    /// Name followed by synonyms.
    pub fn surface_forms(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.name.as_str()).chain(self.synonyms.iter().map(String::as_str))
    }

    /// Drops synonyms that repeat the name or an earlier synonym (case-insensitive).
    fn dedup_synonyms(&mut self) {
        let mut seen: HashSet<String> = HashSet::new();
        seen.insert(normalize(&self.name));
        self.synonyms.retain(|s| {
            let key = normalize(s);
            !key.is_empty() && seen.insert(key)
        });
    }
}

fn normalize(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// A validated entity DAG. Entities are keyed (and iterated) by id.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Ontology {
    entities: BTreeMap<String, Entity>,
    pub version_tag: String,
}

impl Ontology {
    /// Validates and builds an ontology. Synonyms are deduplicated; every other
    /// invariant violation is an error.
    pub fn from_entities(
        entities: impl IntoIterator<Item = Entity>,
        version_tag: impl Into<String>,
    ) -> Result<Self> {
        let mut map = BTreeMap::new();
        for mut e in entities {
            if e.id.is_empty() {
                return Err(Error::validation("empty entity id"));
            }
            if e.name.trim().is_empty() {
                return Err(Error::validation(format!("entity {} has an empty name", e.id)));
            }
            e.dedup_synonyms();
            let mut seen = HashSet::new();
            e.parents.retain(|p| seen.insert(p.clone()));
            if map.contains_key(&e.id) {
                return Err(Error::validation(format!("duplicate id {}", e.id)));
            }
            map.insert(e.id.clone(), e);
        }
        let onto = Ontology {
            entities: map,
            version_tag: version_tag.into(),
        };
        onto.check_parents()?;
        onto.check_acyclic()?;
        Ok(onto)
    }

    fn check_parents(&self) -> Result<()> {
        for e in self.entities.values() {
            for p in &e.parents {
                if p == &e.id {
                    return Err(Error::validation(format!("cycle: {} is its own parent", e.id)));
                }
                if !self.entities.contains_key(p) {
                    return Err(Error::validation(format!(
                        "entity {} has dangling parent {}",
                        e.id, p
                    )));
                }
            }
        }
        Ok(())
    }

    /// Kahn's algorithm over the parent graph.
    fn check_acyclic(&self) -> Result<()> {
        let mut indegree: BTreeMap<&str, usize> = self
            .entities
            .values()
            .map(|e| (e.id.as_str(), e.parents.len()))
            .collect();
        let children = self.children_map();
        let mut ready: Vec<&str> = indegree
            .iter()
            .filter(|(_, &d)| d == 0)
            .map(|(&id, _)| id)
            .collect();
        let mut visited = 0;
        while let Some(id) = ready.pop() {
            visited += 1;
            for child in children.get(id).into_iter().flatten() {
                let d = indegree.get_mut(child.as_str()).expect("child is an entity");
                *d -= 1;
                if *d == 0 {
                    ready.push(child.as_str());
                }
            }
        }
        if visited != self.entities.len() {
            let stuck = indegree
                .iter()
                .find(|(_, &d)| d > 0)
                .map(|(id, _)| *id)
                .unwrap_or_default();
            return Err(Error::validation(format!("cycle in parent graph involving {stuck}")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Entity> {
        self.entities.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entities.contains_key(id)
    }

    /// Entities in ascending id order.
    pub fn entities(&self) -> impl ExactSizeIterator<Item = &Entity> {
        self.entities.values()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entities.keys().map(String::as_str)
    }

    pub fn children_map(&self) -> BTreeMap<String, Vec<String>> {
        let mut children: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for e in self.entities.values() {
            for p in &e.parents {
                children.entry(p.clone()).or_default().push(e.id.clone());
            }
        }
        children
    }

    /// All strict ancestors of `id`.
    pub fn ancestors(&self, id: &str) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let mut stack: Vec<&str> = self
            .get(id)
            .map(|e| e.parents.iter().map(String::as_str).collect())
            .unwrap_or_default();
        while let Some(p) = stack.pop() {
            if out.insert(p.to_string()) {
                if let Some(e) = self.get(p) {
                    stack.extend(e.parents.iter().map(String::as_str));
                }
            }
        }
        out
    }

    /// Number of nodes on the longest root-to-leaf chain (0 for an empty ontology).
    pub fn depth(&self) -> usize {
        let mut memo: BTreeMap<&str, usize> = BTreeMap::new();
        fn depth_of<'a>(
            onto: &'a Ontology,
            id: &'a str,
            memo: &mut BTreeMap<&'a str, usize>,
        ) -> usize {
            if let Some(&d) = memo.get(id) {
                return d;
            }
            let e = &onto.entities[id];
            let d = 1 + e
                .parents
                .iter()
                .map(|p| depth_of(onto, p, memo))
                .max()
                .unwrap_or(0);
            memo.insert(id, d);
            d
        }
        self.entities
            .keys()
            .map(|id| depth_of(self, id, &mut memo))
            .max()
            .unwrap_or(0)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for e in self.entities.values() {
            let line = serde_json::to_string(e).expect("entity serializes");
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Reads a JSONL file, handing each non-blank line to `f` with its 1-based number.
pub(crate) fn read_jsonl<T, F>(path: &Path, mut f: F) -> Result<Vec<T>>
where
    F: FnMut(&str, usize) -> std::result::Result<T, String>,
{
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = f(&line, i + 1).map_err(|msg| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        })?;
        out.push(item);
    }
    Ok(out)
}

/// Loads an ontology from JSONL; the version tag is the file stem.
pub fn load_ontology(path: impl AsRef<Path>) -> Result<Ontology> {
    let path = path.as_ref();
    let entities = read_jsonl(path, |line, _| {
        serde_json::from_str::<Entity>(line).map_err(|e| e.to_string())
    })?;
    let tag = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ontology::from_entities(entities, tag)
}

/// Removes `round_half_up(fraction * |E|)` uniformly sampled entities one at a
/// time. Each removal links every parent of the removed node to every one of
/// its children before the next removal happens, so ancestor reachability
/// among the survivors is preserved.
///
/// Sampling is a seeded Fisher-Yates shuffle over ids in ascending order
/// (ChaCha8, see [`crate::rng`]); the first `n` shuffled ids are removed in
/// that order.
pub fn prune(onto: &Ontology, fraction: f64, seed: u64) -> Result<(Ontology, BTreeSet<String>)> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!(
            "prune fraction {fraction} outside [0, 1]"
        )));
    }
    let n_remove = removal_count(onto.len(), fraction);
    let mut ids: Vec<String> = onto.entities.keys().cloned().collect();
    let mut rng = rng::seeded(seed);
    ids.shuffle(&mut rng);
    ids.truncate(n_remove);

    let mut entities = onto.entities.clone();
    let mut children = onto.children_map();
    for victim in &ids {
        let removed = entities.remove(victim).expect("sampled id exists");
        let kids = children.remove(victim).unwrap_or_default();
        for p in &removed.parents {
            if let Some(siblings) = children.get_mut(p) {
                siblings.retain(|c| c != victim);
            }
        }
        for kid in &kids {
            let child = entities.get_mut(kid).expect("child survives this step");
            child.parents.retain(|p| p != victim);
            for p in &removed.parents {
                if !child.parents.contains(p) {
                    child.parents.push(p.clone());
                    children.entry(p.clone()).or_default().push(kid.clone());
                }
            }
        }
    }
    let pruned = Ontology {
        entities,
        version_tag: format!("{}-pruned-{fraction}", onto.version_tag),
    };
    Ok((pruned, ids.into_iter().collect()))
}

/// `round(fraction * n)` with halves rounded up.
pub fn removal_count(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64) + 0.5).floor().min(n as f64) as usize
}

/// Retired id → surviving id, from a newer ontology release to an older one.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MergeMap {
    pub pairs: BTreeMap<String, String>,
}

#[derive(Deserialize)]
struct MergeLine {
    retired: String,
    into: String,
}

impl MergeMap {
    pub fn new<I, A, B>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (A, B)>,
        A: Into<String>,
        B: Into<String>,
    {
        MergeMap {
            pairs: pairs.into_iter().map(|(a, b)| (a.into(), b.into())).collect(),
        }
    }

    pub fn validate(&self, old: &Ontology) -> Result<()> {
        for (retired, into) in &self.pairs {
            if old.contains(retired) {
                return Err(Error::validation(format!(
                    "merge key {retired} is present in the older ontology"
                )));
            }
            if !old.contains(into) {
                return Err(Error::validation(format!(
                    "merge target {into} is absent from the older ontology"
                )));
            }
        }
        Ok(())
    }
}

pub fn load_merges(path: impl AsRef<Path>) -> Result<MergeMap> {
    let path = path.as_ref();
    let lines = read_jsonl(path, |line, _| {
        serde_json::from_str::<MergeLine>(line).map_err(|e| e.to_string())
    })?;
    let mut pairs = BTreeMap::new();
    for (i, l) in lines.into_iter().enumerate() {
        if pairs.insert(l.retired.clone(), l.into).is_some() {
            return Err(Error::validation(format!(
                "merge entry {} repeats retired id {}",
                i + 1,
                l.retired
            )));
        }
    }
    Ok(MergeMap { pairs })
}

/// Ids of `new` that have no counterpart in `old`. An id merged into a
/// concept of `old` is not out-of-KB.
pub fn version_diff(new: &Ontology, old: &Ontology, merges: &MergeMap) -> Result<BTreeSet<String>> {
    merges.validate(old)?;
    Ok(new
        .ids()
        .filter(|id| !old.contains(id))
        .filter(|id| merges.pairs.get(*id).is_none_or(|into| !old.contains(into)))
        .map(str::to_string)
        .collect())
}

/// `(#entities, #entities + #synonyms)`.
pub fn synonym_count(onto: &Ontology) -> (usize, usize) {
    let with_syn = onto.entities().map(|e| 1 + e.synonyms.len()).sum();
    (onto.len(), with_syn)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(ids: &[&str]) -> Ontology {
        let ents = ids.iter().enumerate().map(|(i, id)| {
            let e = Entity::new(*id, format!("name {id}"));
            if i == 0 {
                e
            } else {
                e.with_parents([ids[i - 1]])
            }
        });
        Ontology::from_entities(ents, "t").unwrap()
    }

    #[test]
    fn chain_of_three_has_depth_three() {
        let o = chain(&["A", "B", "C"]);
        assert_eq!(o.len(), 3);
        assert_eq!(o.depth(), 3);
    }

    #[test]
    fn duplicate_id_rejected() {
        let err = Ontology::from_entities([Entity::new("C1", "x"), Entity::new("C1", "y")], "t")
            .unwrap_err();
        assert!(err.to_string().contains("duplicate id C1"), "{err}");
    }

    #[test]
    fn dangling_parent_and_cycle_rejected() {
        let dangling = Ontology::from_entities([Entity::new("A", "a").with_parents(["Z"])], "t");
        assert!(matches!(dangling, Err(Error::Validation(m)) if m.contains("dangling")));
        let cyc = Ontology::from_entities(
            [
                Entity::new("A", "a").with_parents(["B"]),
                Entity::new("B", "b").with_parents(["A"]),
            ],
            "t",
        );
        assert!(matches!(cyc, Err(Error::Validation(m)) if m.contains("cycle")));
    }

    #[test]
    fn synonyms_deduplicated_against_name_and_each_other() {
        let o = Ontology::from_entities(
            [Entity::new("A", "Heart Attack").with_synonyms(["heart attack", "MI", "mi", "Infarct"])],
            "t",
        )
        .unwrap();
        assert_eq!(o.get("A").unwrap().synonyms, vec!["MI", "Infarct"]);
    }

    #[test]
    fn prune_rewires_parent_to_child() {
        let o = chain(&["A", "B", "C"]);
        // find a seed that removes exactly B
        let (p, removed) = (0..200)
            .map(|s| prune(&o, 1.0 / 3.0, s).unwrap())
            .find(|(_, r)| r.contains("B"))
            .unwrap();
        assert_eq!(removed.len(), 1);
        assert_eq!(p.ids().collect::<Vec<_>>(), vec!["A", "C"]);
        assert_eq!(p.get("C").unwrap().parents, vec!["A"]);
    }

    #[test]
    fn prune_fraction_zero_is_identity_and_one_empties() {
        let o = chain(&["A", "B", "C", "D"]);
        let (same, removed) = prune(&o, 0.0, 9).unwrap();
        assert!(removed.is_empty());
        assert_eq!(same.entities, o.entities);
        let (empty, removed) = prune(&o, 1.0, 9).unwrap();
        assert!(empty.is_empty());
        assert_eq!(removed.len(), 4);
    }

    #[test]
    fn prune_two_consecutive_nodes_keeps_ancestry() {
        let o = chain(&["A", "B", "C", "D"]);
        for seed in 0..50 {
            let (p, removed) = prune(&o, 0.5, seed).unwrap();
            if removed == BTreeSet::from(["B".to_string(), "C".to_string()]) {
                assert!(p.ancestors("D").contains("A"));
                return;
            }
        }
        panic!("no seed removed exactly B and C");
    }

    #[test]
    fn removal_count_rounds_half_up() {
        assert_eq!(removal_count(5, 0.5), 3);
        assert_eq!(removal_count(10, 0.25), 3);
        assert_eq!(removal_count(10, 0.2), 2);
        assert_eq!(removal_count(0, 0.7), 0);
    }

    #[test]
    fn version_diff_cases() {
        let ents = |ids: &[&str]| {
            Ontology::from_entities(ids.iter().map(|i| Entity::new(*i, *i)), "v").unwrap()
        };
        let new = ents(&["A", "B", "X"]);
        let old = ents(&["A", "B"]);
        let none = MergeMap::default();
        assert_eq!(
            version_diff(&new, &old, &none).unwrap(),
            BTreeSet::from(["X".to_string()])
        );
        assert!(version_diff(&new, &old, &MergeMap::new([("X", "A")]))
            .unwrap()
            .is_empty());
        assert!(version_diff(&old, &old, &none).unwrap().is_empty());
        assert!(version_diff(&new, &old, &MergeMap::new([("X", "Q")])).is_err());
        assert!(version_diff(&new, &old, &MergeMap::new([("A", "B")])).is_err());
    }

    #[test]
    fn synonym_count_sums() {
        let o = Ontology::from_entities(
            [
                Entity::new("A", "a"),
                Entity::new("B", "b").with_synonyms(["x", "y", "z"]),
            ],
            "t",
        )
        .unwrap();
        assert_eq!(synonym_count(&o), (2, 5));
        assert_eq!(synonym_count(&Ontology::default()), (0, 0));
    }
}

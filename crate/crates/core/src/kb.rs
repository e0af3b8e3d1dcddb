//! Triple loading, the bidirectional knowledge graph, pair selection and
//! dataset splits.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::paths::{self, PathSet, SamplerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntityId(pub u32);

/// Relation id. Forward relations occupy `0..n`; the inverse of `r` is `r + n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelationId(pub u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RelationId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

impl fmt::Display for RelationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

/// Bidirectional string <-> dense id map, ids in first-appearance order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_names(names: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut vocab = Vocab::new();
        for name in names {
            if vocab.index.contains_key(&name) {
                return Err(Error::Invalid(format!("duplicate vocabulary entry {name:?}")));
            }
            vocab.get_or_insert(&name);
        }
        Ok(vocab)
    }

    pub fn get_or_insert(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_owned());
        self.index.insert(name.to_owned(), id);
        id
    }

    pub fn id(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: u32) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// FNV-1a hash over the names in id order.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for name in &self.names {
            for b in name.bytes().chain(std::iter::once(0)) {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }

    /// Writes `id<TAB>name` lines.
    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (i, name) in self.names.iter().enumerate() {
            out.push_str(&format!("{i}\t{name}\n"));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read_tsv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut names = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let (id, name) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(path, lineno + 1, "expected id<TAB>name"))?;
            if id.parse::<usize>().ok() != Some(names.len()) {
                return Err(Error::parse(path, lineno + 1, format!("expected id {}", names.len())));
            }
            names.push(name.to_owned());
        }
        Vocab::from_names(names)
    }
}

/// Triples read from one or more files that share one pair of vocabularies.
#[derive(Debug, Clone, Default)]
pub struct TripleLoader {
    pub entities: Vocab,
    pub relations: Vocab,
    pub triples: Vec<Triple>,
    /// Lines skipped because the same triple had already been read.
    pub duplicates: usize,
    seen: HashSet<Triple>,
}

impl TripleLoader {
    pub fn new() -> Self {
        Self::default()
    }

    /// Reads `head<TAB>relation<TAB>tail` lines; returns the number of new triples.
    pub fn load_file(&mut self, path: &Path) -> Result<usize> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let before = self.triples.len();
        let dup_before = self.duplicates;
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::parse(
                    path,
                    lineno + 1,
                    format!("expected 3 tab-separated fields, found {}", fields.len()),
                ));
            }
            self.push(fields[0], fields[1], fields[2]);
        }
        if self.duplicates > dup_before {
            log::warn!(
                "{}: skipped {} duplicate triples",
                path.display(),
                self.duplicates - dup_before
            );
        }
        Ok(self.triples.len() - before)
    }

    pub fn push(&mut self, head: &str, relation: &str, tail: &str) {
        let triple = Triple {
            head: EntityId(self.entities.get_or_insert(head)),
            relation: RelationId(self.relations.get_or_insert(relation)),
            tail: EntityId(self.entities.get_or_insert(tail)),
        };
        if self.seen.insert(triple) {
            self.triples.push(triple);
        } else {
            self.duplicates += 1;
        }
    }
}

/// Convenience wrapper for a single file.
pub fn load_triples(path: &Path) -> Result<TripleLoader> {
    let mut loader = TripleLoader::new();
    loader.load_file(path)?;
    Ok(loader)
}

/// Outgoing edge; `relation` may be an inverse id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub relation: RelationId,
    pub target: EntityId,
}

/// Immutable triple store with explicit inverse edges.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    entities: Vocab,
    relations: Vocab,
    triples: Vec<Triple>,
    adjacency: Vec<Vec<Edge>>,
    index: HashSet<Triple>,
    pair_labels: HashMap<(EntityId, EntityId), Vec<RelationId>>,
    pair_order: Vec<(EntityId, EntityId)>,
}

impl KnowledgeGraph {
    pub fn build(entities: Vocab, relations: Vocab, triples: Vec<Triple>) -> Result<Self> {
        let n_rel = relations.len() as u32;
        let mut adjacency = vec![Vec::new(); entities.len()];
        let mut index = HashSet::with_capacity(triples.len());
        let mut pair_labels: HashMap<(EntityId, EntityId), Vec<RelationId>> = HashMap::new();
        let mut pair_order = Vec::new();
        let mut kept = Vec::with_capacity(triples.len());
        for &t in &triples {
            if t.head.index() >= entities.len() || t.tail.index() >= entities.len() {
                return Err(Error::UnknownEntity(t.head.0.max(t.tail.0)));
            }
            if t.relation.0 >= n_rel {
                return Err(Error::Invalid(format!(
                    "relation id {} outside vocabulary",
                    t.relation.0
                )));
            }
            if !index.insert(t) {
                continue;
            }
            kept.push(t);
            adjacency[t.head.index()].push(Edge {
                relation: t.relation,
                target: t.tail,
            });
            adjacency[t.tail.index()].push(Edge {
                relation: RelationId(t.relation.0 + n_rel),
                target: t.head,
            });
            let labels = pair_labels.entry((t.head, t.tail)).or_insert_with(|| {
                pair_order.push((t.head, t.tail));
                Vec::new()
            });
            labels.push(t.relation);
        }
        for edges in &mut adjacency {
            edges.sort_unstable();
            edges.dedup();
        }
        for labels in pair_labels.values_mut() {
            labels.sort_unstable();
        }
        Ok(KnowledgeGraph {
            entities,
            relations,
            triples: kept,
            adjacency,
            index,
            pair_labels,
            pair_order,
        })
    }

    pub fn from_loader(loader: TripleLoader) -> Result<Self> {
        Self::build(loader.entities, loader.relations, loader.triples)
    }

    pub fn entities(&self) -> &Vocab {
        &self.entities
    }

    /// Forward relation names; inverse ids are implied.
    pub fn relations(&self) -> &Vocab {
        &self.relations
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_forward_relations(&self) -> usize {
        self.relations.len()
    }

    /// Forward plus inverse relation ids.
    pub fn num_relation_ids(&self) -> usize {
        2 * self.relations.len()
    }

    pub fn is_forward(&self, r: RelationId) -> bool {
        r.index() < self.relations.len()
    }

    pub fn inverse(&self, r: RelationId) -> RelationId {
        let n = self.relations.len() as u32;
        if r.0 < n {
            RelationId(r.0 + n)
        } else {
            RelationId(r.0 - n)
        }
    }

    pub fn contains_entity(&self, e: EntityId) -> bool {
        e.index() < self.entities.len()
    }

    pub fn neighbors(&self, e: EntityId) -> &[Edge] {
        &self.adjacency[e.index()]
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum()
    }

    /// Membership over every loaded triple, regardless of split.
    pub fn contains(&self, head: EntityId, relation: RelationId, tail: EntityId) -> bool {
        self.index.contains(&Triple { head, relation, tail })
    }

    /// Forward relations stored from `head` to `tail`, ascending.
    pub fn relations_between(&self, head: EntityId, tail: EntityId) -> &[RelationId] {
        self.pair_labels.get(&(head, tail)).map_or(&[], Vec::as_slice)
    }

    /// Entity pairs with at least one forward triple, in first-appearance order.
    pub fn labeled_pairs(&self) -> &[(EntityId, EntityId)] {
        &self.pair_order
    }

    /// Display name of a relation id, suffixing inverses with `^-1`.
    pub fn relation_display(&self, r: RelationId) -> String {
        let n = self.relations.len() as u32;
        if r.0 < n {
            self.relations.name(r.0).unwrap_or("?").to_owned()
        } else {
            format!("{}^-1", self.relations.name(r.0 - n).unwrap_or("?"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PairId(pub u32);

/// A labelled entity pair whose path set has at least one multi-hop path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TrainingPair {
    pub id: PairId,
    pub head: EntityId,
    pub tail: EntityId,
    pub label: RelationId,
    /// Index into the path-set list produced alongside the pairs.
    pub path_set: usize,
}

#[derive(Debug, Clone)]
pub struct SelectedPairs {
    pub pairs: Vec<TrainingPair>,
    pub path_sets: Vec<PathSet>,
    /// Labelled pairs dropped because no multi-hop path connects them.
    pub dropped: usize,
}

/// Keeps every labelled pair that is connected by a multi-hop path. A pair
/// with several forward relations yields one [`TrainingPair`] per relation,
/// all sharing one path set.
pub fn select_pairs(graph: &KnowledgeGraph, config: &SamplerConfig) -> Result<SelectedPairs> {
    select_pairs_with(graph, config, None)
}

/// Like [`select_pairs`], but when `targets` is given only those relations
/// become labels and pairs holding none of them are skipped.
pub fn select_pairs_with(
    graph: &KnowledgeGraph,
    config: &SamplerConfig,
    targets: Option<&[RelationId]>,
) -> Result<SelectedPairs> {
    config.validate()?;
    let wanted = |r: &RelationId| targets.is_none_or(|t| t.contains(r));
    let mut pairs = Vec::new();
    let mut path_sets = Vec::new();
    let mut dropped = 0;
    for &(head, tail) in graph.labeled_pairs() {
        if !graph.relations_between(head, tail).iter().any(wanted) {
            continue;
        }
        if head == tail {
            dropped += 1;
            continue;
        }
        let set = paths::sample_paths(graph, head, tail, config)?;
        if set.paths.is_empty() {
            dropped += 1;
            continue;
        }
        let handle = path_sets.len();
        path_sets.push(set);
        for &label in graph.relations_between(head, tail).iter().filter(|r| wanted(r)) {
            pairs.push(TrainingPair {
                id: PairId(pairs.len() as u32),
                head,
                tail,
                label,
                path_set: handle,
            });
        }
    }
    if pairs.is_empty() {
        return Err(Error::Config(format!(
            "no entity pair is connected by a path of 2..={} hops; increase max_hops",
            config.max_hops
        )));
    }
    Ok(SelectedPairs {
        pairs,
        path_sets,
        dropped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
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
            "valid" => Ok(SplitName::Valid),
            "test" => Ok(SplitName::Test),
            other => Err(Error::Invalid(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<TrainingPair>,
    pub valid: Vec<TrainingPair>,
    pub test: Vec<TrainingPair>,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn get(&self, name: SplitName) -> &[TrainingPair] {
        match name {
            SplitName::Train => &self.train,
            SplitName::Valid => &self.valid,
            SplitName::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.valid.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = (SplitName, &TrainingPair)> {
        self.train
            .iter()
            .map(|p| (SplitName::Train, p))
            .chain(self.valid.iter().map(|p| (SplitName::Valid, p)))
            .chain(self.test.iter().map(|p| (SplitName::Test, p)))
    }
}

/// Seeded shuffle followed by an 8:1:1 cut (`floor(0.8n)`, `floor(0.1n)`, rest).
pub fn split_dataset(pairs: &[TrainingPair], seed: u64) -> Result<DatasetSplit> {
    let n = pairs.len();
    if n < 10 {
        return Err(Error::Invalid(format!(
            "{n} pairs cannot be split 8:1:1; need at least 10"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = n * 8 / 10;
    let n_valid = n / 10;
    let pick = |range: std::ops::Range<usize>| range.map(|i| pairs[order[i]]).collect::<Vec<_>>();
    Ok(DatasetSplit {
        train: pick(0..n_train),
        valid: pick(n_train..n_train + n_valid),
        test: pick(n_train + n_valid..n),
        seed,
    })
}

/// Writes `pair_id, head, tail, relation, split` rows with a header.
pub fn write_split_manifest(path: &Path, graph: &KnowledgeGraph, split: &DatasetSplit) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "pair_id\thead\ttail\trelation\tsplit").unwrap();
    let mut rows: Vec<_> = split.iter().collect();
    rows.sort_by_key(|(_, p)| p.id);
    for (name, p) in rows {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            p.id.0,
            graph.entities().name(p.head.0).unwrap_or("?"),
            graph.entities().name(p.tail.0).unwrap_or("?"),
            graph.relations().name(p.label.0).unwrap_or("?"),
            name.as_str()
        )
        .unwrap();
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// `(pair id, head, tail, relation, split)`.
pub type ManifestRow = (PairId, EntityId, EntityId, RelationId, SplitName);

/// Manifest rows with ids resolved against the graph's vocabularies.
pub fn read_split_manifest(path: &Path, graph: &KnowledgeGraph) -> Result<Vec<ManifestRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split('\t').collect();
        let err = |m: String| Error::parse(path, lineno + 1, m);
        if f.len() != 5 {
            return Err(err(format!("expected 5 fields, found {}", f.len())));
        }
        let id = f[0]
            .parse::<u32>()
            .map_err(|_| err(format!("bad pair id {:?}", f[0])))?;
        let ent = |s: &str| {
            graph
                .entities()
                .id(s)
                .map(EntityId)
                .ok_or_else(|| err(format!("entity {s:?} not in vocabulary")))
        };
        let head = ent(f[1])?;
        let tail = ent(f[2])?;
        let rel = graph
            .relations()
            .id(f[3])
            .map(RelationId)
            .ok_or_else(|| err(format!("relation {:?} not in vocabulary", f[3])))?;
        rows.push((PairId(id), head, tail, rel, f[4].parse()?));
    }
    Ok(rows)
}

//! Multi-hop relation paths between an entity pair.
//!
//! A path never contains a 1-hop connection between the query pair: the
//! direct relation is the prediction target.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::Write;
use std::path::Path as FsPath;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kb::{EntityId, KnowledgeGraph, PairId, RelationId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    Forward,
    Inverse,
}

impl Direction {
    pub fn index(self) -> usize {
        match self {
            Direction::Forward => 0,
            Direction::Inverse => 1,
        }
    }

    fn token(self) -> char {
        match self {
            Direction::Forward => 'f',
            Direction::Inverse => 'i',
        }
    }
}

/// One step of a path: a forward relation traversed in some direction.
/// Ordering is by `(relation, direction)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Hop {
    pub relation: RelationId,
    pub direction: Direction,
}

impl Hop {
    pub fn forward(relation: u32) -> Self {
        Hop {
            relation: RelationId(relation),
            direction: Direction::Forward,
        }
    }

    pub fn inverse(relation: u32) -> Self {
        Hop {
            relation: RelationId(relation),
            direction: Direction::Inverse,
        }
    }

    /// Decodes a graph edge relation id (inverse ids offset by `num_forward`).
    pub fn from_edge(edge_relation: RelationId, num_forward: usize) -> Self {
        let n = num_forward as u32;
        if edge_relation.0 < n {
            Hop::forward(edge_relation.0)
        } else {
            Hop::inverse(edge_relation.0 - n)
        }
    }

    /// Row of the relation embedding table: `r` or `r + num_forward`.
    pub fn embedding_row(self, num_forward: usize) -> usize {
        match self.direction {
            Direction::Forward => self.relation.index(),
            Direction::Inverse => self.relation.index() + num_forward,
        }
    }
}

impl fmt::Display for Hop {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.relation.0, self.direction.token())
    }
}

impl std::str::FromStr for Hop {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (rel, dir) = s.split_once(':').ok_or_else(|| format!("bad hop token {s:?}"))?;
        let rel: u32 = rel.parse().map_err(|_| format!("bad relation id in {s:?}"))?;
        match dir {
            "f" => Ok(Hop::forward(rel)),
            "i" => Ok(Hop::inverse(rel)),
            _ => Err(format!("bad direction in {s:?}")),
        }
    }
}

/// Relation sequence; hop `j` sits at position `j + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Path {
    pub hops: Vec<Hop>,
}

impl Path {
    pub fn new(hops: Vec<Hop>) -> Self {
        Path { hops }
    }

    pub fn len(&self) -> usize {
        self.hops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hops.is_empty()
    }
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, hop) in self.hops.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{hop}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathSet {
    pub head: EntityId,
    pub tail: EntityId,
    /// Distinct hop sequences ordered by `(length, hops)`.
    pub paths: Vec<Path>,
    pub truncated: bool,
}

impl PathSet {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Shortest,
    RandomWalk,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shortest" => Ok(Strategy::Shortest),
            "random-walk" | "random_walk" | "rw" => Ok(Strategy::RandomWalk),
            other => Err(Error::Config(format!("unknown path strategy {other:?}"))),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Shortest => "shortest",
            Strategy::RandomWalk => "random-walk",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub max_hops: usize,
    pub strategy: Strategy,
    pub walks_per_pair: usize,
    pub max_paths_per_pair: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            max_hops: 3,
            strategy: Strategy::Shortest,
            walks_per_pair: 200,
            max_paths_per_pair: 64,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=4).contains(&self.max_hops) {
            return Err(Error::Config(format!(
                "max_hops must lie in [2, 4], got {}",
                self.max_hops
            )));
        }
        if self.walks_per_pair == 0 || self.max_paths_per_pair == 0 {
            return Err(Error::Config(
                "walks_per_pair and max_paths_per_pair must be positive".into(),
            ));
        }
        Ok(())
    }
}

fn check_query(graph: &KnowledgeGraph, head: EntityId, tail: EntityId) -> Result<()> {
    for e in [head, tail] {
        if !graph.contains_entity(e) {
            return Err(Error::UnknownEntity(e.0));
        }
    }
    if head == tail {
        return Err(Error::Invalid(format!("query pair has head == tail ({head})")));
    }
    Ok(())
}

/// Sorts by `(length, hops)`, keeps the first `max_paths_per_pair`.
fn finish(head: EntityId, tail: EntityId, found: BTreeSet<Vec<Hop>>, cap: usize) -> PathSet {
    let mut paths: Vec<Path> = found.into_iter().map(Path::new).collect();
    paths.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.hops.cmp(&b.hops)));
    let truncated = paths.len() > cap;
    paths.truncate(cap);
    PathSet {
        head,
        tail,
        paths,
        truncated,
    }
}

/// All simple paths of 2..=max_hops hops from `head` to `tail` over forward
/// and inverse edges.
pub fn enumerate_shortest_paths(
    graph: &KnowledgeGraph,
    head: EntityId,
    tail: EntityId,
    config: &SamplerConfig,
) -> Result<PathSet> {
    check_query(graph, head, tail)?;
    let n_fwd = graph.num_forward_relations();

    // Last hops into the tail, keyed by the entity they leave from.
    let mut into_tail: HashMap<EntityId, Vec<Hop>> = HashMap::new();
    for edge in graph.neighbors(tail) {
        let hop = Hop::from_edge(graph.inverse(edge.relation), n_fwd);
        into_tail.entry(edge.target).or_default().push(hop);
    }

    struct Search<'a> {
        graph: &'a KnowledgeGraph,
        tail: EntityId,
        max_hops: usize,
        n_fwd: usize,
        into_tail: HashMap<EntityId, Vec<Hop>>,
        on_path: Vec<EntityId>,
        hops: Vec<Hop>,
        found: BTreeSet<Vec<Hop>>,
    }

    impl Search<'_> {
        fn expand(&mut self, current: EntityId) {
            let depth = self.hops.len();
            if depth >= 1 {
                if let Some(last) = self.into_tail.get(&current) {
                    for &hop in last {
                        let mut path = self.hops.clone();
                        path.push(hop);
                        self.found.insert(path);
                    }
                }
            }
            if depth + 1 >= self.max_hops {
                return;
            }
            for edge in self.graph.neighbors(current) {
                if edge.target == self.tail || self.on_path.contains(&edge.target) {
                    continue;
                }
                self.on_path.push(edge.target);
                self.hops.push(Hop::from_edge(edge.relation, self.n_fwd));
                self.expand(edge.target);
                self.hops.pop();
                self.on_path.pop();
            }
        }
    }

    let mut search = Search {
        graph,
        tail,
        max_hops: config.max_hops,
        n_fwd,
        into_tail,
        on_path: vec![head],
        hops: Vec::with_capacity(config.max_hops),
        found: BTreeSet::new(),
    };
    search.expand(head);
    Ok(finish(head, tail, search.found, config.max_paths_per_pair))
}

/// Mixes the sampler seed with the query so each pair owns an independent stream.
fn query_seed(seed: u64, head: EntityId, tail: EntityId) -> u64 {
    let mut z = seed ^ ((head.0 as u64) << 32 | tail.0 as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform random walks of at most `max_hops` steps from `head`; walks that
/// reach `tail` after two or more steps without revisiting an entity are kept.
pub fn random_walk_sample(
    graph: &KnowledgeGraph,
    head: EntityId,
    tail: EntityId,
    config: &SamplerConfig,
) -> Result<PathSet> {
    check_query(graph, head, tail)?;
    let n_fwd = graph.num_forward_relations();
    let mut rng = ChaCha8Rng::seed_from_u64(query_seed(config.seed, head, tail));
    let mut found = BTreeSet::new();
    let mut on_path = Vec::with_capacity(config.max_hops + 1);
    let mut hops = Vec::with_capacity(config.max_hops);
    for _ in 0..config.walks_per_pair {
        on_path.clear();
        hops.clear();
        on_path.push(head);
        let mut current = head;
        for step in 0..config.max_hops {
            let edges = graph.neighbors(current);
            if edges.is_empty() {
                break;
            }
            let edge = edges[rng.gen_range(0..edges.len())];
            if edge.target == tail {
                if step >= 1 {
                    hops.push(Hop::from_edge(edge.relation, n_fwd));
                    found.insert(hops.clone());
                }
                break;
            }
            if on_path.contains(&edge.target) {
                break;
            }
            on_path.push(edge.target);
            hops.push(Hop::from_edge(edge.relation, n_fwd));
            current = edge.target;
        }
    }
    Ok(finish(head, tail, found, config.max_paths_per_pair))
}

pub fn sample_paths(graph: &KnowledgeGraph, head: EntityId, tail: EntityId, config: &SamplerConfig) -> Result<PathSet> {
    match config.strategy {
        Strategy::Shortest => enumerate_shortest_paths(graph, head, tail, config),
        Strategy::RandomWalk => random_walk_sample(graph, head, tail, config),
    }
}

/// Writes one line per pair: the pair id, then one comma-joined path per field.
pub fn write_path_cache<'a>(path: &FsPath, records: impl IntoIterator<Item = (PairId, &'a PathSet)>) -> Result<()> {
    let mut out = Vec::new();
    for (id, set) in records {
        write!(out, "{}", id.0).unwrap();
        for p in &set.paths {
            write!(out, "\t{p}").unwrap();
        }
        out.push(b'\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a path cache as `(pair id, paths)` records.
pub fn read_path_cache(path: &FsPath) -> Result<Vec<(PairId, Vec<Path>)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let err = |m: String| Error::parse(path, lineno + 1, m);
        let id = fields
            .next()
            .and_then(|f| f.parse::<u32>().ok())
            .ok_or_else(|| err("missing pair id".into()))?;
        let paths = fields
            .map(|f| {
                f.split(',')
                    .map(|tok| tok.parse::<Hop>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map(Path::new)
                    .map_err(err)
            })
            .collect::<Result<Vec<_>>>()?;
        records.push((PairId(id), paths));
    }
    Ok(records)
}

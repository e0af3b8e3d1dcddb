//! Synthetic knowledge bases with planted two-hop composition rules.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kb::{EntityId, KnowledgeGraph, RelationId, Triple, Vocab};

/// `head(x, z) <= first(x, y) and second(y, z)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rule {
    pub head: RelationId,
    pub first: RelationId,
    pub second: RelationId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub entities: usize,
    pub base_relations: usize,
    pub triples_per_base: usize,
    /// Body relation pairs, indices into the base relations. Rule `i` gets
    /// relation id `base_relations + i`.
    pub rules: Vec<(u32, u32)>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            entities: 500,
            base_relations: 5,
            triples_per_base: 600,
            rules: vec![(0, 1), (2, 3), (4, 0)],
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticKb {
    pub graph: KnowledgeGraph,
    pub rules: Vec<Rule>,
}

impl SyntheticKb {
    pub fn rule_heads(&self) -> Vec<RelationId> {
        self.rules.iter().map(|r| r.head).collect()
    }

    pub fn rule_for(&self, head: RelationId) -> Option<&Rule> {
        self.rules.iter().find(|r| r.head == head)
    }

    /// `head<TAB>relation<TAB>tail` lines using vocabulary names.
    pub fn write_triples(&self, path: &Path) -> Result<()> {
        let g = &self.graph;
        let mut out = String::new();
        for t in g.triples() {
            out.push_str(g.entities().name(t.head.0).unwrap_or_default());
            out.push('\t');
            out.push_str(g.relations().name(t.relation.0).unwrap_or_default());
            out.push('\t');
            out.push_str(g.entities().name(t.tail.0).unwrap_or_default());
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Random base relations plus every triple implied by the rules.
pub fn generate(config: &SynthConfig) -> Result<SyntheticKb> {
    let n = config.entities;
    let b = config.base_relations;
    if n < 2 || b == 0 {
        return Err(Error::Config(
            "synthetic KB needs at least 2 entities and 1 base relation".into(),
        ));
    }
    if config.triples_per_base > n * (n - 1) {
        return Err(Error::Config(
            "more base triples requested than entity pairs exist".into(),
        ));
    }
    for &(x, y) in &config.rules {
        if x as usize >= b || y as usize >= b {
            return Err(Error::Config(format!(
                "rule body ({x}, {y}) refers to a missing base relation"
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut triples = BTreeSet::new();
    let mut out_edges: Vec<HashMap<u32, Vec<u32>>> = vec![HashMap::new(); b];
    for (r, edges) in out_edges.iter_mut().enumerate() {
        let mut made = 0;
        while made < config.triples_per_base {
            let h = rng.gen_range(0..n) as u32;
            let t = rng.gen_range(0..n) as u32;
            if h != t
                && triples.insert(Triple {
                    head: EntityId(h),
                    relation: RelationId(r as u32),
                    tail: EntityId(t),
                })
            {
                edges.entry(h).or_default().push(t);
                made += 1;
            }
        }
    }
    let mut rules = Vec::new();
    for (i, &(first, second)) in config.rules.iter().enumerate() {
        let head = RelationId((b + i) as u32);
        rules.push(Rule {
            head,
            first: RelationId(first),
            second: RelationId(second),
        });
        let mut derived = Vec::new();
        for (&x, mids) in &out_edges[first as usize] {
            for &y in mids {
                for &z in out_edges[second as usize].get(&y).map_or(&[][..], |v| v) {
                    if x != z {
                        derived.push(Triple {
                            head: EntityId(x),
                            relation: head,
                            tail: EntityId(z),
                        });
                    }
                }
            }
        }
        triples.extend(derived);
    }
    let entities = Vocab::from_names((0..n).map(|i| format!("ent{i:04}")))?;
    let relations = Vocab::from_names(
        (0..b)
            .map(|r| format!("base{r}"))
            .chain((0..config.rules.len()).map(|i| format!("rule{i}"))),
    )?;
    let graph = KnowledgeGraph::build(entities, relations, triples.into_iter().collect())?;
    Ok(SyntheticKb { graph, rules })
}

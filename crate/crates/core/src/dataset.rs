//! Data preparation: triple files to vocabularies, splits and a path cache.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kb::{
    read_split_manifest, select_pairs_with, split_dataset, write_split_manifest, DatasetSplit, EntityId,
    KnowledgeGraph, RelationId, SplitName, TrainingPair, Triple, TripleLoader, Vocab,
};
use crate::paths::{read_path_cache, write_path_cache, PathSet, SamplerConfig};

pub const ENTITIES_FILE: &str = "entities.tsv";
pub const RELATIONS_FILE: &str = "relations.tsv";
pub const TRIPLES_FILE: &str = "triples.tsv";
pub const SPLITS_FILE: &str = "splits.tsv";
pub const PATHS_FILE: &str = "paths.tsv";
pub const SUMMARY_FILE: &str = "summary.json";

/// A graph with its labelled pairs split 8:1:1. Pair `i` owns path set `i`.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub graph: KnowledgeGraph,
    pub split: DatasetSplit,
    pub path_sets: Vec<PathSet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub entities: usize,
    pub relations: usize,
    pub triples: usize,
    pub train_pairs: usize,
    pub valid_pairs: usize,
    pub test_pairs: usize,
    pub dropped_pairs: usize,
    pub split_seed: u64,
    pub mean_paths_per_pair: f64,
    pub max_paths_per_pair: usize,
}

/// Triple files in `dir` with a `.txt` or `.tsv` extension, sorted by name.
pub fn triple_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str());
        if path.is_file() && matches!(ext, Some("txt" | "tsv")) {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::Invalid(format!(
            "{}: no *.txt or *.tsv triple files",
            dir.display()
        )));
    }
    Ok(files)
}

pub fn load_graph_dir(dir: &Path) -> Result<KnowledgeGraph> {
    let mut loader = TripleLoader::new();
    for f in triple_files(dir)? {
        let n = loader.load_file(&f)?;
        log::info!("{}: {n} triples", f.display());
    }
    KnowledgeGraph::from_loader(loader)
}

/// Resolves relation names; an empty list means every relation.
pub fn resolve_targets(graph: &KnowledgeGraph, names: &[String]) -> Result<Option<Vec<RelationId>>> {
    if names.is_empty() {
        return Ok(None);
    }
    names
        .iter()
        .map(|n| {
            graph
                .relations()
                .id(n)
                .map(RelationId)
                .ok_or_else(|| Error::Config(format!("target relation {n:?} is not in the data")))
        })
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

/// Selects pairs, samples their paths and splits them. `targets` limits the
/// labels as in [`select_pairs_with`].
pub fn prepare(
    graph: KnowledgeGraph,
    sampler: &SamplerConfig,
    targets: Option<&[RelationId]>,
    split_seed: u64,
) -> Result<(Prepared, usize)> {
    let selected = select_pairs_with(&graph, sampler, targets)?;
    let mut path_sets = Vec::with_capacity(selected.pairs.len());
    let pairs: Vec<TrainingPair> = selected
        .pairs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            path_sets.push(selected.path_sets[p.path_set].clone());
            TrainingPair { path_set: i, ..*p }
        })
        .collect();
    let mut split = split_dataset(&pairs, split_seed)?;
    // Id order matches what `load` reads back from the manifest.
    for part in [&mut split.train, &mut split.valid, &mut split.test] {
        part.sort_by_key(|p| p.id);
    }
    Ok((
        Prepared {
            graph,
            split,
            path_sets,
        },
        selected.dropped,
    ))
}

impl Prepared {
    pub fn summary(&self, dropped: usize) -> Summary {
        let lens: Vec<usize> = self.path_sets.iter().map(PathSet::len).collect();
        Summary {
            entities: self.graph.num_entities(),
            relations: self.graph.num_forward_relations(),
            triples: self.graph.triples().len(),
            train_pairs: self.split.train.len(),
            valid_pairs: self.split.valid.len(),
            test_pairs: self.split.test.len(),
            dropped_pairs: dropped,
            split_seed: self.split.seed,
            mean_paths_per_pair: lens.iter().sum::<usize>() as f64 / lens.len().max(1) as f64,
            max_paths_per_pair: lens.iter().copied().max().unwrap_or(0),
        }
    }

    /// Writes every cache file into `dir`. The output depends only on the
    /// prepared data, so reruns are byte-identical.
    pub fn write(&self, dir: &Path, dropped: usize) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let g = &self.graph;
        g.entities().write_tsv(&dir.join(ENTITIES_FILE))?;
        g.relations().write_tsv(&dir.join(RELATIONS_FILE))?;
        let mut triples = String::new();
        for t in g.triples() {
            let _ = writeln!(
                triples,
                "{}\t{}\t{}",
                g.entities().name(t.head.0).unwrap_or("?"),
                g.relations().name(t.relation.0).unwrap_or("?"),
                g.entities().name(t.tail.0).unwrap_or("?")
            );
        }
        let path = dir.join(TRIPLES_FILE);
        std::fs::write(&path, triples).map_err(|e| Error::io(&path, e))?;
        write_split_manifest(&dir.join(SPLITS_FILE), g, &self.split)?;
        let mut by_id: Vec<&TrainingPair> = self.split.iter().map(|(_, p)| p).collect();
        by_id.sort_by_key(|p| p.id);
        write_path_cache(
            &dir.join(PATHS_FILE),
            by_id.iter().map(|p| (p.id, &self.path_sets[p.path_set])),
        )?;
        let path = dir.join(SUMMARY_FILE);
        let json = serde_json::to_string_pretty(&self.summary(dropped)).expect("summary serializes");
        std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
    }

    /// Reads a cache directory written by [`Prepared::write`].
    pub fn load(dir: &Path) -> Result<Self> {
        let entities = Vocab::read_tsv(&dir.join(ENTITIES_FILE))?;
        let relations = Vocab::read_tsv(&dir.join(RELATIONS_FILE))?;
        let path = dir.join(TRIPLES_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut triples = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let f: Vec<&str> = line.split('\t').collect();
            let err = |m: String| Error::parse(&path, i + 1, m);
            if f.len() != 3 {
                return Err(err(format!("expected 3 fields, found {}", f.len())));
            }
            let ent = |s: &str| {
                entities
                    .id(s)
                    .map(EntityId)
                    .ok_or_else(|| err(format!("unknown entity {s:?}")))
            };
            triples.push(Triple {
                head: ent(f[0])?,
                relation: relations
                    .id(f[1])
                    .map(RelationId)
                    .ok_or_else(|| err(format!("unknown relation {:?}", f[1])))?,
                tail: ent(f[2])?,
            });
        }
        let graph = KnowledgeGraph::build(entities, relations, triples)?;
        let summary_path = dir.join(SUMMARY_FILE);
        let summary_text = std::fs::read_to_string(&summary_path).map_err(|e| Error::io(&summary_path, e))?;
        let summary: Summary =
            serde_json::from_str(&summary_text).map_err(|e| Error::parse(&summary_path, e.line(), e.to_string()))?;

        let rows = read_split_manifest(&dir.join(SPLITS_FILE), &graph)?;
        let cache_path = dir.join(PATHS_FILE);
        let mut cache: HashMap<u32, Vec<crate::paths::Path>> = HashMap::new();
        for (id, paths) in read_path_cache(&cache_path)? {
            cache.insert(id.0, paths);
        }
        let mut split = DatasetSplit {
            train: Vec::new(),
            valid: Vec::new(),
            test: Vec::new(),
            seed: summary.split_seed,
        };
        let mut path_sets = Vec::with_capacity(rows.len());
        for (id, head, tail, label, name) in rows {
            let paths = cache
                .remove(&id.0)
                .ok_or_else(|| Error::Invalid(format!("{}: no paths for pair {}", cache_path.display(), id.0)))?;
            if paths.is_empty() {
                return Err(Error::EmptyPathSet {
                    head: head.0,
                    tail: tail.0,
                });
            }
            let pair = TrainingPair {
                id,
                head,
                tail,
                label,
                path_set: path_sets.len(),
            };
            path_sets.push(PathSet {
                head,
                tail,
                paths,
                truncated: false,
            });
            match name {
                SplitName::Train => split.train.push(pair),
                SplitName::Valid => split.valid.push(pair),
                SplitName::Test => split.test.push(pair),
            }
        }
        Ok(Prepared {
            graph,
            split,
            path_sets,
        })
    }

    /// Looks a pair up by id across all splits.
    pub fn pair(&self, id: u32) -> Option<(SplitName, &TrainingPair)> {
        self.split.iter().find(|(_, p)| p.id.0 == id)
    }
}

/// Runs load, select, split and sample, then writes the cache.
pub fn prepare_dir(
    data_dir: &Path,
    cache_dir: &Path,
    sampler: &SamplerConfig,
    targets: &[String],
    split_seed: u64,
) -> Result<Summary> {
    let graph = load_graph_dir(data_dir)?;
    let targets = resolve_targets(&graph, targets)?;
    let (prepared, dropped) = prepare(graph, sampler, targets.as_deref(), split_seed)?;
    prepared.write(cache_dir, dropped)?;
    Ok(prepared.summary(dropped))
}

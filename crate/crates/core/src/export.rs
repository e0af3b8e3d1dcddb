//! Text exports: attention tables, feature vectors and PCA projections.

use std::fmt::Write as _;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::kb::{KnowledgeGraph, PairId, TrainingPair};
use crate::model::Model;
use crate::paths::{Direction, PathSet};
use crate::pca;

/// One path of a pair with its attention weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRow {
    pub rank: usize,
    /// Index of the path in the pair's path set.
    pub path_index: usize,
    pub path_weight: f64,
    /// `(relation name, direction, hop weight)` per hop.
    pub hops: Vec<(String, Direction, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairAttention {
    pub pair: PairId,
    pub head: String,
    pub tail: String,
    pub label: String,
    pub rows: Vec<AttentionRow>,
}

/// Attention weights for each pair, paths sorted by descending weight
/// (ties by set order).
pub fn attention(
    model: &Model,
    graph: &KnowledgeGraph,
    pairs: &[TrainingPair],
    path_sets: &[PathSet],
    chunk: usize,
) -> Result<Vec<PairAttention>> {
    let mut out = Vec::with_capacity(pairs.len());
    for part in pairs.chunks(chunk.max(1)) {
        let sets = part
            .iter()
            .map(|p| {
                path_sets
                    .get(p.path_set)
                    .ok_or_else(|| Error::Invalid(format!("pair {} has no path set", p.id.0)))
            })
            .collect::<Result<Vec<_>>>()?;
        let inf = model.infer(&sets, &[])?;
        for ((pair, set), seg) in part.iter().zip(&sets).zip(&inf.segments) {
            let mut rows: Vec<AttentionRow> = seg
                .clone()
                .enumerate()
                .map(|(k, r)| AttentionRow {
                    rank: 0,
                    path_index: k,
                    path_weight: inf.path_weights[r],
                    hops: set.paths[k]
                        .hops
                        .iter()
                        .zip(&inf.relation_weights[r])
                        .map(|(h, &w)| {
                            let name = graph.relations().name(h.relation.0).unwrap_or("?").to_string();
                            (name, h.direction, w)
                        })
                        .collect(),
                })
                .collect();
            rows.sort_by(|a, b| {
                b.path_weight
                    .total_cmp(&a.path_weight)
                    .then(a.path_index.cmp(&b.path_index))
            });
            for (i, row) in rows.iter_mut().enumerate() {
                row.rank = i + 1;
            }
            let name = |id: u32| graph.entities().name(id).unwrap_or("?").to_string();
            out.push(PairAttention {
                pair: pair.id,
                head: name(pair.head.0),
                tail: name(pair.tail.0),
                label: graph.relation_display(pair.label),
                rows,
            });
        }
    }
    Ok(out)
}

fn direction_tag(d: Direction) -> &'static str {
    match d {
        Direction::Forward => "forward",
        Direction::Inverse => "inverse",
    }
}

/// `pair_id head tail relation rank path_weight hop1_relation hop1_direction
/// hop1_weight ...`, padded to the longest path.
pub fn attention_tsv(pairs: &[PairAttention]) -> String {
    let width = pairs
        .iter()
        .flat_map(|p| p.rows.iter().map(|r| r.hops.len()))
        .max()
        .unwrap_or(0);
    let mut out = String::from("pair_id\thead\ttail\trelation\trank\tpath_weight");
    for i in 1..=width {
        let _ = write!(out, "\thop{i}_relation\thop{i}_direction\thop{i}_weight");
    }
    out.push('\n');
    for p in pairs {
        for r in &p.rows {
            let _ = write!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                p.pair.0, p.head, p.tail, p.label, r.rank, r.path_weight
            );
            for (name, dir, w) in &r.hops {
                let _ = write!(out, "\t{name}\t{}\t{w}", direction_tag(*dir));
            }
            for _ in r.hops.len()..width {
                out.push_str("\t\t\t");
            }
            out.push('\n');
        }
    }
    out
}

/// The vector families that can be exported.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VectorKind {
    /// Single-relation encoder output.
    RelationCode,
    /// Every path vector before path attention.
    PathCode,
    /// Attention-pooled path code.
    PooledCode,
    RelationFeature,
    PathFeature,
}

impl VectorKind {
    pub const ALL: [VectorKind; 5] = [
        VectorKind::RelationCode,
        VectorKind::PathCode,
        VectorKind::PooledCode,
        VectorKind::RelationFeature,
        VectorKind::PathFeature,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            VectorKind::RelationCode => "relation_code",
            VectorKind::PathCode => "path_code",
            VectorKind::PooledCode => "pooled_code",
            VectorKind::RelationFeature => "relation_feature",
            VectorKind::PathFeature => "path_feature",
        }
    }

    /// `r` for single-relation vectors, `p` for path vectors.
    pub fn source_tag(self) -> &'static str {
        match self {
            VectorKind::RelationCode | VectorKind::RelationFeature => "r",
            _ => "p",
        }
    }
}

/// Rows of one vector family with their identifying columns.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorTable {
    pub kind: VectorKind,
    pub pair_ids: Vec<PairId>,
    pub relations: Vec<String>,
    /// Path index for per-path vectors.
    pub items: Vec<Option<usize>>,
    pub values: Tensor,
}

/// Accumulates rows before the value matrix is built once.
struct TableBuilder {
    kind: VectorKind,
    width: usize,
    pair_ids: Vec<PairId>,
    relations: Vec<String>,
    items: Vec<Option<usize>>,
    data: Vec<f64>,
}

impl TableBuilder {
    fn new(kind: VectorKind, width: usize) -> Self {
        TableBuilder {
            kind,
            width,
            pair_ids: Vec::new(),
            relations: Vec::new(),
            items: Vec::new(),
            data: Vec::new(),
        }
    }

    fn push(&mut self, pair: PairId, relation: &str, item: Option<usize>, row: &[f64]) {
        debug_assert_eq!(row.len(), self.width);
        self.pair_ids.push(pair);
        self.relations.push(relation.to_string());
        self.items.push(item);
        self.data.extend_from_slice(row);
    }

    fn finish(self) -> Result<VectorTable> {
        Ok(VectorTable {
            kind: self.kind,
            values: Tensor::from_vec(self.pair_ids.len(), self.width, self.data)?,
            pair_ids: self.pair_ids,
            relations: self.relations,
            items: self.items,
        })
    }
}

impl VectorTable {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("pair_id\trelation\tsource\titem");
        for j in 0..self.values.cols() {
            let _ = write!(out, "\tv{j}");
        }
        out.push('\n');
        for i in 0..self.pair_ids.len() {
            let item = self.items[i].map(|k| k.to_string()).unwrap_or_else(|| "-".into());
            let _ = write!(
                out,
                "{}\t{}\t{}\t{}",
                self.pair_ids[i].0,
                self.relations[i],
                self.kind.source_tag(),
                item
            );
            for v in self.values.row(i) {
                let _ = write!(out, "\t{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// All vector families for the given pairs.
pub fn vectors(
    model: &Model,
    graph: &KnowledgeGraph,
    pairs: &[TrainingPair],
    path_sets: &[PathSet],
    chunk: usize,
) -> Result<Vec<VectorTable>> {
    let code = 2 * model.config.d_h;
    let d_f = model.config.d_f;
    let mut tables: Vec<TableBuilder> = VectorKind::ALL
        .iter()
        .map(|&k| {
            let w = match k {
                VectorKind::RelationFeature | VectorKind::PathFeature => d_f,
                _ => code,
            };
            TableBuilder::new(k, w)
        })
        .collect();
    for part in pairs.chunks(chunk.max(1)) {
        let sets = part
            .iter()
            .map(|p| {
                path_sets
                    .get(p.path_set)
                    .ok_or_else(|| Error::Invalid(format!("pair {} has no path set", p.id.0)))
            })
            .collect::<Result<Vec<_>>>()?;
        let labels: Vec<_> = part.iter().map(|p| p.label).collect();
        let inf = model.infer(&sets, &labels)?;
        for (i, pair) in part.iter().enumerate() {
            let rel = graph.relation_display(pair.label);
            tables[0].push(pair.id, &rel, None, inf.relation_codes.row(i));
            for (k, r) in inf.segments[i].clone().enumerate() {
                tables[1].push(pair.id, &rel, Some(k), inf.path_vectors.row(r));
            }
            tables[2].push(pair.id, &rel, None, inf.pooled_codes.row(i));
            tables[3].push(pair.id, &rel, None, inf.relation_features.row(i));
            tables[4].push(pair.id, &rel, None, inf.path_features.row(i));
        }
    }
    tables.into_iter().map(TableBuilder::finish).collect()
}

/// Two-column PCA projection of a vector table.
pub fn projection_tsv(table: &VectorTable, k: usize) -> Result<(String, pca::Pca)> {
    let p = pca::fit(&table.values, k)?;
    let coords = p.transform(&table.values)?;
    let mut out = String::from("pair_id\trelation\tsource\titem");
    for c in 1..=k {
        let _ = write!(out, "\tpc{c}");
    }
    out.push('\n');
    for i in 0..table.pair_ids.len() {
        let item = table.items[i].map(|x| x.to_string()).unwrap_or_else(|| "-".into());
        let _ = write!(
            out,
            "{}\t{}\t{}\t{}",
            table.pair_ids[i].0,
            table.relations[i],
            table.kind.source_tag(),
            item
        );
        for v in coords.row(i) {
            let _ = write!(out, "\t{v}");
        }
        out.push('\n');
    }
    Ok((out, p))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

//! Filtered ranking metrics over forward relations.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kb::{KnowledgeGraph, PairId, RelationId, TrainingPair};
use crate::model::Model;
use crate::paths::PathSet;

pub const HITS_AT: [usize; 3] = [1, 3, 10];
const TOP_K_EXPORT: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredRelation {
    pub relation: RelationId,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingResult {
    pub pair: PairId,
    pub truth: RelationId,
    pub ranked: Vec<ScoredRelation>,
    pub raw_rank: usize,
    pub filtered_rank: usize,
}

/// Relation indices by descending score; ties go to the lower id.
pub fn rank_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

fn outranks(scores: &[f64], other: usize, truth: usize) -> bool {
    scores[other] > scores[truth] || (scores[other] == scores[truth] && other < truth)
}

/// 1-based position of `truth` in [`rank_order`].
pub fn raw_rank(scores: &[f64], truth: RelationId) -> usize {
    let t = truth.index();
    1 + (0..scores.len()).filter(|&r| r != t && outranks(scores, r, t)).count()
}

/// Rank after discarding every other relation in `valid`, the relations
/// known to hold for the pair anywhere in the KB.
pub fn filtered_rank(scores: &[f64], truth: RelationId, valid: &[RelationId]) -> usize {
    let t = truth.index();
    1 + (0..scores.len())
        .filter(|&r| r != t && outranks(scores, r, t))
        .filter(|&r| !valid.iter().any(|v| v.index() == r))
        .count()
}

pub fn rank_relations(pair: &TrainingPair, scores: &[f64], graph: &KnowledgeGraph) -> RankingResult {
    let ranked = rank_order(scores)
        .into_iter()
        .map(|r| ScoredRelation {
            relation: RelationId(r as u32),
            score: scores[r],
        })
        .collect();
    RankingResult {
        pair: pair.id,
        truth: pair.label,
        ranked,
        raw_rank: raw_rank(scores, pair.label),
        filtered_rank: filtered_rank(scores, pair.label, graph.relations_between(pair.head, pair.tail)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub pairs: usize,
    pub mean_rank: f64,
    pub hits_at_1: f64,
    pub hits_at_3: f64,
    pub hits_at_10: f64,
}

impl Metrics {
    pub fn hits(&self, k: usize) -> Option<f64> {
        match k {
            1 => Some(self.hits_at_1),
            3 => Some(self.hits_at_3),
            10 => Some(self.hits_at_10),
            _ => None,
        }
    }
}

pub fn aggregate(ranks: &[usize]) -> Result<Metrics> {
    if ranks.is_empty() {
        return Err(Error::Invalid("cannot aggregate zero rankings".into()));
    }
    if ranks.contains(&0) {
        return Err(Error::Invalid("ranks are 1-based".into()));
    }
    let n = ranks.len() as f64;
    let hits = |k: usize| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
    Ok(Metrics {
        pairs: ranks.len(),
        mean_rank: ranks.iter().map(|&r| r as f64).sum::<f64>() / n,
        hits_at_1: hits(1),
        hits_at_3: hits(3),
        hits_at_10: hits(10),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bucket {
    Low,
    Middle,
    High,
    All,
}

/// Splits the relations seen in training into frequency terciles by relation
/// count. Frequency ties are ordered by id. With fewer than three relations a
/// single `All` bucket is returned.
pub fn bucket_by_frequency(train: &[TrainingPair]) -> Result<Vec<(Bucket, Vec<RelationId>)>> {
    if train.is_empty() {
        return Err(Error::Invalid("bucketing needs a nonempty training split".into()));
    }
    let mut counts = std::collections::BTreeMap::<RelationId, usize>::new();
    for p in train {
        *counts.entry(p.label).or_default() += 1;
    }
    let mut rels: Vec<(RelationId, usize)> = counts.into_iter().collect();
    rels.sort_by(|a, b| a.1.cmp(&b.1).then(a.0.cmp(&b.0)));
    let n = rels.len();
    if n < 3 {
        log::warn!("only {n} distinct training relations; using a single frequency bucket");
        return Ok(vec![(Bucket::All, rels.into_iter().map(|r| r.0).collect())]);
    }
    let ids: Vec<RelationId> = rels.into_iter().map(|r| r.0).collect();
    let (a, b) = (n / 3, 2 * n / 3);
    Ok(vec![
        (Bucket::Low, ids[..a].to_vec()),
        (Bucket::Middle, ids[a..b].to_vec()),
        (Bucket::High, ids[b..].to_vec()),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketReport {
    pub bucket: Bucket,
    pub relations: Vec<u32>,
    /// `None` when no evaluated pair falls in the bucket.
    pub metrics: Option<Metrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: String,
    pub overall: Metrics,
    pub buckets: Vec<BucketReport>,
    /// Pairs skipped because their path set is empty.
    pub excluded: usize,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Invalid(format!("serializing report: {e}")))
    }
}

/// Scores every pair from its path set alone and ranks the forward relations.
pub fn evaluate(
    model: &Model,
    graph: &KnowledgeGraph,
    pairs: &[TrainingPair],
    path_sets: &[PathSet],
    train: &[TrainingPair],
    split: &str,
    chunk: usize,
) -> Result<(EvalReport, Vec<RankingResult>)> {
    let mut kept = Vec::new();
    let mut excluded = 0;
    for p in pairs {
        let set = path_sets
            .get(p.path_set)
            .ok_or_else(|| Error::Invalid(format!("pair {} refers to missing path set {}", p.id.0, p.path_set)))?;
        if set.is_empty() {
            excluded += 1;
        } else {
            kept.push((p, set));
        }
    }
    if excluded > 0 {
        log::warn!("{excluded} {split} pairs have no paths and were excluded");
    }
    let sets: Vec<&PathSet> = kept.iter().map(|(_, s)| *s).collect();
    let scores = model.score_path_sets(&sets, chunk)?;
    let results: Vec<RankingResult> = kept
        .iter()
        .zip(&scores)
        .map(|((p, _), s)| rank_relations(p, s, graph))
        .collect();
    let ranks: Vec<usize> = results.iter().map(|r| r.filtered_rank).collect();
    let overall = aggregate(&ranks)?;
    let buckets = bucket_by_frequency(train)?
        .into_iter()
        .map(|(bucket, rels)| {
            let sub: Vec<usize> = results
                .iter()
                .filter(|r| rels.contains(&r.truth))
                .map(|r| r.filtered_rank)
                .collect();
            BucketReport {
                bucket,
                relations: rels.iter().map(|r| r.0).collect(),
                metrics: aggregate(&sub).ok(),
            }
        })
        .collect();
    Ok((
        EvalReport {
            split: split.to_string(),
            overall,
            buckets,
            excluded,
        },
        results,
    ))
}

/// `pair_id  true_relation  filtered_rank  relation:score ...` with the top ten.
pub fn rankings_tsv(results: &[RankingResult], graph: &KnowledgeGraph) -> String {
    let mut out = String::from("pair_id\ttrue_relation\tfiltered_rank\ttop10\n");
    for r in results {
        let _ = write!(
            out,
            "{}\t{}\t{}\t",
            r.pair.0,
            graph.relation_display(r.truth),
            r.filtered_rank
        );
        let top: Vec<String> = r
            .ranked
            .iter()
            .take(TOP_K_EXPORT)
            .map(|s| format!("{}:{:.17e}", graph.relation_display(s.relation), s.score))
            .collect();
        out.push_str(&top.join(" "));
        out.push('\n');
    }
    out
}

pub fn write_report(dir: &Path, report: &EvalReport, results: &[RankingResult], graph: &KnowledgeGraph) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = dir.join(format!("report_{}.json", report.split));
    std::fs::write(&json, report.to_json()? + "\n").map_err(|e| Error::io(&json, e))?;
    let tsv = dir.join(format!("rankings_{}.tsv", report.split));
    std::fs::write(&tsv, rankings_tsv(results, graph)).map_err(|e| Error::io(&tsv, e))?;
    Ok(())
}

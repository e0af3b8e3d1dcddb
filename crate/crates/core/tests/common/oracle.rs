//! Independent reference implementations used as test oracles.

use std::collections::{BTreeMap, BTreeSet};

use kbc_core::kb::{EntityId, KnowledgeGraph, RelationId};
use kbc_core::model::Model;
use kbc_core::paths::{Direction, Hop, PathSet};

/// Directed moves read straight from the triple list: `(from, hop, to)`.
fn moves(graph: &KnowledgeGraph) -> Vec<(u32, Hop, u32)> {
    let mut out = Vec::new();
    for t in graph.triples() {
        out.push((t.head.0, Hop::forward(t.relation.0), t.tail.0));
        out.push((t.tail.0, Hop::inverse(t.relation.0), t.head.0));
    }
    out
}

/// Every simple entity path of 2..=max_hops hops from `head` to `tail`,
/// found by exhaustive DFS. Returns `(entity sequence, hops)` pairs.
pub fn simple_paths(
    graph: &KnowledgeGraph,
    head: EntityId,
    tail: EntityId,
    max_hops: usize,
) -> Vec<(Vec<u32>, Vec<Hop>)> {
    let mv = moves(graph);
    let mut out = Vec::new();
    let mut nodes = vec![head.0];
    let mut hops = Vec::new();
    fn dfs(
        mv: &[(u32, Hop, u32)],
        tail: u32,
        max_hops: usize,
        nodes: &mut Vec<u32>,
        hops: &mut Vec<Hop>,
        out: &mut Vec<(Vec<u32>, Vec<Hop>)>,
    ) {
        let here = *nodes.last().unwrap();
        if here == tail {
            if hops.len() >= 2 {
                out.push((nodes.clone(), hops.clone()));
            }
            return;
        }
        if hops.len() == max_hops {
            return;
        }
        for &(from, hop, to) in mv {
            if from != here || nodes.contains(&to) {
                continue;
            }
            nodes.push(to);
            hops.push(hop);
            dfs(mv, tail, max_hops, nodes, hops, out);
            hops.pop();
            nodes.pop();
        }
    }
    dfs(&mv, tail.0, max_hops, &mut nodes, &mut hops, &mut out);
    out
}

pub fn hop_sequences(graph: &KnowledgeGraph, head: EntityId, tail: EntityId, max_hops: usize) -> BTreeSet<Vec<Hop>> {
    simple_paths(graph, head, tail, max_hops)
        .into_iter()
        .map(|(_, h)| h)
        .collect()
}

/// Probability that one uniform walk from `head` yields each hop sequence.
pub fn walk_probabilities(
    graph: &KnowledgeGraph,
    head: EntityId,
    tail: EntityId,
    max_hops: usize,
) -> BTreeMap<Vec<Hop>, f64> {
    let mv = moves(graph);
    let degree = |v: u32| mv.iter().filter(|m| m.0 == v).count() as f64;
    let mut out = BTreeMap::new();
    for (nodes, hops) in simple_paths(graph, head, tail, max_hops) {
        let p: f64 = nodes[..nodes.len() - 1].iter().map(|&v| 1.0 / degree(v)).product();
        *out.entry(hops).or_insert(0.0) += p;
    }
    out
}

/// Position of `truth` in a full sort by (score desc, id asc), counting only
/// candidates that are not other known relations of the pair.
pub fn rescan_filtered_rank(
    graph: &KnowledgeGraph,
    head: EntityId,
    tail: EntityId,
    scores: &[f64],
    truth: RelationId,
) -> usize {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let known = |r: usize| {
        graph
            .triples()
            .iter()
            .any(|t| t.head == head && t.tail == tail && t.relation.index() == r)
    };
    let mut rank = 0;
    for r in order {
        if r == truth.index() {
            return rank + 1;
        }
        if !known(r) {
            rank += 1;
        }
    }
    unreachable!("truth is a candidate")
}

fn param<'a>(model: &'a Model, name: &str) -> (&'a [f64], usize, usize) {
    let id = model.store.find(name).unwrap_or_else(|| panic!("no parameter {name}"));
    let t = model.store.value(id);
    (t.data(), t.rows(), t.cols())
}

/// `W x + b` with `W` stored row-major as outputs x inputs.
fn affine(model: &Model, w: &str, b: &str, x: &[f64]) -> Vec<f64> {
    let (w, rows, cols) = param(model, w);
    let (b, _, _) = param(model, b);
    assert_eq!(cols, x.len());
    (0..rows)
        .map(|i| b[i] + (0..cols).map(|j| w[i * cols + j] * x[j]).sum::<f64>())
        .collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn row(model: &Model, name: &str, r: usize) -> Vec<f64> {
    let (d, _, cols) = param(model, name);
    d[r * cols..(r + 1) * cols].to_vec()
}

fn gru(model: &Model, prefix: &str, x: &[f64], h: &[f64]) -> Vec<f64> {
    let p = |n: &str| format!("{prefix}.{n}");
    let mat = |w: &str, v: &[f64]| {
        let (w, rows, cols) = param(model, w);
        (0..rows)
            .map(|i| (0..cols).map(|j| w[i * cols + j] * v[j]).sum::<f64>())
            .collect::<Vec<f64>>()
    };
    let bias = |b: &str| param(model, b).0.to_vec();
    let (wz, uz, bz) = (mat(&p("w_z"), x), mat(&p("u_z"), h), bias(&p("b_z")));
    let (wr, ur, br) = (mat(&p("w_reset"), x), mat(&p("u_reset"), h), bias(&p("b_reset")));
    let (wh, uh, bh) = (mat(&p("w_h"), x), mat(&p("u_h"), h), bias(&p("b_h")));
    (0..h.len())
        .map(|i| {
            let z = sigmoid(wz[i] + uz[i] + bz[i]);
            let r = sigmoid(wr[i] + ur[i] + br[i]);
            let cand = (wh[i] + r * uh[i] + bh[i]).tanh();
            (1.0 - z) * h[i] + z * cand
        })
        .collect()
}

fn attention_score(model: &Model, prefix: &str, v: &[f64]) -> f64 {
    let u: Vec<f64> = affine(model, &format!("{prefix}.w"), &format!("{prefix}.b"), v)
        .into_iter()
        .map(f64::tanh)
        .collect();
    let (c, _, _) = param(model, &format!("{prefix}.context"));
    u.iter().zip(c).map(|(a, b)| a * b).sum()
}

/// Values of one path set computed with plain loops.
#[derive(Debug, Clone)]
pub struct ForwardOracle {
    pub path_vectors: Vec<Vec<f64>>,
    pub relation_weights: Vec<Vec<f64>>,
    pub path_weights: Vec<f64>,
    pub pooled: Vec<f64>,
    pub features: Vec<f64>,
    pub class_probs: Vec<f64>,
}

pub fn forward_oracle(model: &Model, set: &PathSet) -> ForwardOracle {
    let n = model.num_forward;
    let d_h = model.config.d_h;
    let mut path_vectors = Vec::new();
    let mut relation_weights = Vec::new();
    for path in &set.paths {
        let xs: Vec<Vec<f64>> = path
            .hops
            .iter()
            .enumerate()
            .map(|(j, hop)| {
                let rel_row = match hop.direction {
                    Direction::Forward => hop.relation.index(),
                    Direction::Inverse => hop.relation.index() + n,
                };
                let dir_row = match hop.direction {
                    Direction::Forward => 0,
                    Direction::Inverse => 1,
                };
                let mut x = row(model, "embed.relation", rel_row);
                x.extend(row(model, "embed.position", j));
                x.extend(row(model, "embed.direction", dir_row));
                x
            })
            .collect();
        let t = xs.len();
        let mut fwd = Vec::with_capacity(t);
        let mut h = vec![0.0; d_h];
        for x in &xs {
            h = gru(model, "gru.fwd", x, &h);
            fwd.push(h.clone());
        }
        let mut bwd = vec![Vec::new(); t];
        let mut h = vec![0.0; d_h];
        for j in (0..t).rev() {
            h = gru(model, "gru.bwd", &xs[j], &h);
            bwd[j] = h.clone();
        }
        let annotations: Vec<Vec<f64>> = (0..t).map(|j| [fwd[j].clone(), bwd[j].clone()].concat()).collect();
        let scores: Vec<f64> = annotations
            .iter()
            .map(|a| attention_score(model, "attn.relation", a))
            .collect();
        let alpha = softmax(&scores);
        let pooled: Vec<f64> = (0..2 * d_h)
            .map(|k| (0..t).map(|j| alpha[j] * annotations[j][k]).sum())
            .collect();
        path_vectors.push(pooled);
        relation_weights.push(alpha);
    }
    let scores: Vec<f64> = path_vectors
        .iter()
        .map(|p| attention_score(model, "attn.path", p))
        .collect();
    let path_weights = softmax(&scores);
    let pooled: Vec<f64> = (0..2 * d_h)
        .map(|k| path_vectors.iter().zip(&path_weights).map(|(p, w)| w * p[k]).sum())
        .collect();
    let a1: Vec<f64> = affine(model, "extract.w1", "extract.b1", &pooled)
        .into_iter()
        .map(sigmoid)
        .collect();
    let features: Vec<f64> = affine(model, "extract.w2", "extract.b2", &a1)
        .into_iter()
        .map(sigmoid)
        .collect();
    let class_probs = softmax(&affine(model, "classifier.w", "classifier.b", &features));
    ForwardOracle {
        path_vectors,
        relation_weights,
        path_weights,
        pooled,
        features,
        class_probs,
    }
}

/// `tanh(W e_r + b)` for a forward relation.
pub fn relation_code_oracle(model: &Model, r: RelationId) -> Vec<f64> {
    affine(model, "relenc.w", "relenc.b", &row(model, "embed.relation", r.index()))
        .into_iter()
        .map(f64::tanh)
        .collect()
}

//! Hierarchical attention encoders.
//!
//! Paths are embedded hop by hop (relation, position and direction rows
//! concatenated), annotated by a bidirectional GRU, pooled by relation-level
//! attention into one vector per path, and pooled again by path-level
//! attention into one vector per entity pair. A single relation is encoded
//! into the same space by a tanh projection of its embedding.
//!
//! Paths of a batch are grouped by length so that every GRU step runs as one
//! dense matrix product; no padding is ever introduced.

use std::collections::BTreeMap;
use std::ops::Range;
use std::path::Path as FsPath;

use rand::Rng;

use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::kb::{RelationId, Vocab};
use crate::paths::{Hop, Path, PathSet};

/// Uniform range for randomly initialised embedding tables.
pub const EMBEDDING_INIT_RANGE: f64 = 0.08;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub num_forward: usize,
    pub d_r: usize,
    pub d_pe: usize,
    pub d_dir: usize,
    pub d_h: usize,
    pub d_a: usize,
    pub max_hops: usize,
}

impl EncoderConfig {
    pub fn d_x(&self) -> usize {
        self.d_r + self.d_pe + self.d_dir
    }

    /// Width of annotations, path codes and single-relation codes.
    pub fn code_width(&self) -> usize {
        2 * self.d_h
    }
}

pub(crate) fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, limit: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(-limit..=limit)).collect();
    Tensor::from_vec(rows, cols, data).expect("shape")
}

/// Glorot-uniform matrix with `rows` outputs and `cols` inputs.
pub(crate) fn glorot(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    uniform(rng, rows, cols, (6.0 / (rows + cols) as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GruParams {
    pub w_z: ParamId,
    pub u_z: ParamId,
    pub b_z: ParamId,
    pub w_reset: ParamId,
    pub u_reset: ParamId,
    pub b_reset: ParamId,
    pub w_h: ParamId,
    pub u_h: ParamId,
    pub b_h: ParamId,
}

impl GruParams {
    fn init(store: &mut ParamStore, prefix: &str, d_x: usize, d_h: usize, rng: &mut impl Rng) -> Self {
        let mut w = |name: &str, store: &mut ParamStore| store.add(format!("{prefix}.{name}"), glorot(rng, d_h, d_x));
        let w_z = w("w_z", store);
        let w_reset = w("w_reset", store);
        let w_h = w("w_h", store);
        let mut u = |name: &str, store: &mut ParamStore| store.add(format!("{prefix}.{name}"), glorot(rng, d_h, d_h));
        let u_z = u("u_z", store);
        let u_reset = u("u_reset", store);
        let u_h = u("u_h", store);
        let mut b = |name: &str| store.add(format!("{prefix}.{name}"), Tensor::zeros(1, d_h));
        GruParams {
            w_z,
            u_z,
            b_z: b("b_z"),
            w_reset,
            u_reset,
            b_reset: b("b_reset"),
            w_h,
            u_h,
            b_h: b("b_h"),
        }
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore) -> GruVars {
        let mut p = |id| tape.param(store, id);
        GruVars {
            w_z: p(self.w_z),
            u_z: p(self.u_z),
            b_z: p(self.b_z),
            w_reset: p(self.w_reset),
            u_reset: p(self.u_reset),
            b_reset: p(self.b_reset),
            w_h: p(self.w_h),
            u_h: p(self.u_h),
            b_h: p(self.b_h),
        }
    }

    fn ids(&self) -> [ParamId; 9] {
        [
            self.w_z,
            self.u_z,
            self.b_z,
            self.w_reset,
            self.u_reset,
            self.b_reset,
            self.w_h,
            self.u_h,
            self.b_h,
        ]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GruVars {
    pub w_z: Var,
    pub u_z: Var,
    pub b_z: Var,
    pub w_reset: Var,
    pub u_reset: Var,
    pub b_reset: Var,
    pub w_h: Var,
    pub u_h: Var,
    pub b_h: Var,
}

/// `u = tanh(W h + b)`, score `u . context`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionParams {
    pub w: ParamId,
    pub b: ParamId,
    pub context: ParamId,
}

impl AttentionParams {
    fn init(store: &mut ParamStore, prefix: &str, d_in: usize, d_a: usize, rng: &mut impl Rng) -> Self {
        AttentionParams {
            w: store.add(format!("{prefix}.w"), glorot(rng, d_a, d_in)),
            b: store.add(format!("{prefix}.b"), Tensor::zeros(1, d_a)),
            context: store.add(format!("{prefix}.context"), glorot(rng, d_a, 1)),
        }
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore) -> AttentionVars {
        AttentionVars {
            w: tape.param(store, self.w),
            b: tape.param(store, self.b),
            context: tape.param(store, self.context),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub w: Var,
    pub b: Var,
    pub context: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub relation_table: ParamId,
    pub position_table: ParamId,
    pub direction_table: ParamId,
    pub forward_gru: GruParams,
    pub backward_gru: GruParams,
    pub relation_attention: AttentionParams,
    pub path_attention: AttentionParams,
    pub projection_w: ParamId,
    pub projection_b: ParamId,
}

impl EncoderParams {
    pub fn init(store: &mut ParamStore, config: EncoderConfig, rng: &mut impl Rng) -> Self {
        let r = EMBEDDING_INIT_RANGE;
        let relation_table = store.add("embed.relation", uniform(rng, 2 * config.num_forward, config.d_r, r));
        let position_table = store.add("embed.position", uniform(rng, config.max_hops, config.d_pe, r));
        let direction_table = store.add("embed.direction", uniform(rng, 2, config.d_dir, r));
        let forward_gru = GruParams::init(store, "gru.fwd", config.d_x(), config.d_h, rng);
        let backward_gru = GruParams::init(store, "gru.bwd", config.d_x(), config.d_h, rng);
        let relation_attention = AttentionParams::init(store, "attn.relation", config.code_width(), config.d_a, rng);
        let path_attention = AttentionParams::init(store, "attn.path", config.code_width(), config.d_a, rng);
        let projection_w = store.add("relenc.w", glorot(rng, config.code_width(), config.d_r));
        let projection_b = store.add("relenc.b", Tensor::zeros(1, config.code_width()));
        EncoderParams {
            config,
            relation_table,
            position_table,
            direction_table,
            forward_gru,
            backward_gru,
            relation_attention,
            path_attention,
            projection_w,
            projection_b,
        }
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore) -> EncoderVars {
        EncoderVars {
            relation_table: tape.param(store, self.relation_table),
            position_table: tape.param(store, self.position_table),
            direction_table: tape.param(store, self.direction_table),
            forward_gru: self.forward_gru.bind(tape, store),
            backward_gru: self.backward_gru.bind(tape, store),
            relation_attention: self.relation_attention.bind(tape, store),
            path_attention: self.path_attention.bind(tape, store),
            projection_w: tape.param(store, self.projection_w),
            projection_b: tape.param(store, self.projection_b),
            config: self.config.clone(),
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.relation_table, self.position_table, self.direction_table];
        ids.extend(self.forward_gru.ids());
        ids.extend(self.backward_gru.ids());
        for a in [self.relation_attention, self.path_attention] {
            ids.extend([a.w, a.b, a.context]);
        }
        ids.extend([self.projection_w, self.projection_b]);
        ids
    }
}

/// Encoder parameters recorded on one tape.
#[derive(Debug, Clone)]
pub struct EncoderVars {
    pub config: EncoderConfig,
    pub relation_table: Var,
    pub position_table: Var,
    pub direction_table: Var,
    pub forward_gru: GruVars,
    pub backward_gru: GruVars,
    pub relation_attention: AttentionVars,
    pub path_attention: AttentionVars,
    pub projection_w: Var,
    pub projection_b: Var,
}

fn embed_hops(tape: &mut Tape, vars: &EncoderVars, hops: &[(Hop, usize)]) -> Result<Var> {
    let cfg = &vars.config;
    if let Some((_, pos)) = hops.iter().find(|(_, pos)| *pos >= cfg.max_hops) {
        return Err(Error::Invalid(format!(
            "hop position {} exceeds the {}-row position table",
            pos + 1,
            cfg.max_hops
        )));
    }
    if let Some((hop, _)) = hops.iter().find(|(h, _)| h.relation.index() >= cfg.num_forward) {
        return Err(Error::Invalid(format!(
            "relation {} outside the embedding table",
            hop.relation.0
        )));
    }
    let rel = tape.gather_rows(
        vars.relation_table,
        hops.iter().map(|(h, _)| h.embedding_row(cfg.num_forward)).collect(),
    )?;
    let pos = tape.gather_rows(vars.position_table, hops.iter().map(|&(_, p)| p).collect())?;
    let dir = tape.gather_rows(
        vars.direction_table,
        hops.iter().map(|(h, _)| h.direction.index()).collect(),
    )?;
    Ok(tape.concat_cols(&[rel, pos, dir])?)
}

/// `T x d_x` input matrix of one path: row `j` is
/// `[relation row ; position row j ; direction row]`.
pub fn embed_sequence(tape: &mut Tape, vars: &EncoderVars, path: &Path) -> Result<Var> {
    let hops: Vec<(Hop, usize)> = path.hops.iter().copied().zip(0..).collect();
    embed_hops(tape, vars, &hops)
}

/// Inputs at one position for a batch of equal-length paths, `B x d_x`.
pub fn embed_position(tape: &mut Tape, vars: &EncoderVars, paths: &[&Path], position: usize) -> Result<Var> {
    let hops: Vec<(Hop, usize)> = paths.iter().map(|p| (p.hops[position], position)).collect();
    embed_hops(tape, vars, &hops)
}

/// One GRU update for a batch of rows:
/// `z = s(x Wz' + h Uz' + bz)`, `r = s(x Wr' + h Ur' + br)`,
/// `h~ = tanh(x Wh' + r * (h Uh') + bh)`, `h' = (1 - z) * h + z * h~`.
pub fn gru_step(tape: &mut Tape, x: Var, h_prev: Var, gru: &GruVars) -> Result<Var> {
    let gate = |tape: &mut Tape, w: Var, u: Var, b: Var| -> Result<Var> {
        let xw = tape.matmul_nt(x, w)?;
        let hu = tape.matmul_nt(h_prev, u)?;
        let s = tape.add(xw, hu)?;
        let s = tape.add_row(s, b)?;
        Ok(tape.sigmoid(s)?)
    };
    let z = gate(tape, gru.w_z, gru.u_z, gru.b_z)?;
    let reset = gate(tape, gru.w_reset, gru.u_reset, gru.b_reset)?;
    let xw = tape.matmul_nt(x, gru.w_h)?;
    let hu = tape.matmul_nt(h_prev, gru.u_h)?;
    let gated = tape.mul(reset, hu)?;
    let s = tape.add(xw, gated)?;
    let s = tape.add_row(s, gru.b_h)?;
    let candidate = tape.tanh(s)?;
    // (1 - z) * h + z * h~ == h + z * (h~ - h)
    let delta = tape.sub(candidate, h_prev)?;
    let step = tape.mul(z, delta)?;
    Ok(tape.add(h_prev, step)?)
}

/// Bidirectional GRU over per-position inputs (each `B x d_x`), zero initial
/// states. Returns one `B x 2d_h` annotation `[forward ; backward]` per position.
pub fn bigru_encode(tape: &mut Tape, inputs: &[Var], vars: &EncoderVars) -> Result<Vec<Var>> {
    let first = *inputs
        .first()
        .ok_or_else(|| Error::Invalid("bigru_encode on an empty sequence".into()))?;
    let batch = tape.value(first).rows();
    let d_h = vars.config.d_h;
    let mut forward = Vec::with_capacity(inputs.len());
    let mut h = tape.constant(Tensor::zeros(batch, d_h));
    for &x in inputs {
        h = gru_step(tape, x, h, &vars.forward_gru)?;
        forward.push(h);
    }
    let mut backward = vec![h; inputs.len()];
    let mut h = tape.constant(Tensor::zeros(batch, d_h));
    for (j, &x) in inputs.iter().enumerate().rev() {
        h = gru_step(tape, x, h, &vars.backward_gru)?;
        backward[j] = h;
    }
    forward
        .into_iter()
        .zip(backward)
        .map(|(f, b)| Ok(tape.concat_cols(&[f, b])?))
        .collect()
}

/// Annotations of one path: `T x 2d_h`.
pub fn bigru_encode_sequence(tape: &mut Tape, sequence: Var, vars: &EncoderVars) -> Result<Var> {
    let steps = tape.value(sequence).rows();
    let inputs = (0..steps)
        .map(|j| Ok(tape.gather_rows(sequence, vec![j])?))
        .collect::<Result<Vec<_>>>()?;
    let annotations = bigru_encode(tape, &inputs, vars)?;
    Ok(tape.concat_rows(&annotations)?)
}

/// Relation-level attention over per-position annotations (each `B x 2d_h`).
/// Returns the weighted sum `B x 2d_h` and the weights `B x T`.
pub fn relation_attention(tape: &mut Tape, annotations: &[Var], attn: &AttentionVars) -> Result<(Var, Var)> {
    if annotations.is_empty() {
        return Err(Error::Invalid("relation attention over zero positions".into()));
    }
    let mut scores = Vec::with_capacity(annotations.len());
    for &h in annotations {
        let u = tape.matmul_nt(h, attn.w)?;
        let u = tape.add_row(u, attn.b)?;
        let u = tape.tanh(u)?;
        scores.push(tape.matmul(u, attn.context)?);
    }
    let scores = tape.concat_cols(&scores)?;
    let weights = tape.softmax_rows(scores)?;
    let mut pooled = None;
    for (j, &h) in annotations.iter().enumerate() {
        let a = tape.slice_cols(weights, j..j + 1)?;
        let term = tape.mul_col(h, a)?;
        pooled = Some(match pooled {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    Ok((pooled.expect("nonempty"), weights))
}

/// Path-level attention: softmax of path scores within each pair's segment
/// of rows, then a weighted sum per segment. Returns pooled codes
/// `segments x 2d_h` and weights `N x 1`.
pub fn path_attention(
    tape: &mut Tape,
    path_vectors: Var,
    segments: Vec<Range<usize>>,
    attn: &AttentionVars,
) -> Result<(Var, Var)> {
    if segments.iter().any(|s| s.is_empty()) || segments.is_empty() {
        return Err(Error::Invalid("path attention needs at least one path per pair".into()));
    }
    let u = tape.matmul_nt(path_vectors, attn.w)?;
    let u = tape.add_row(u, attn.b)?;
    let u = tape.tanh(u)?;
    let scores = tape.matmul(u, attn.context)?;
    let weights = tape.softmax_segments(scores, segments.clone())?;
    let weighted = tape.mul_col(path_vectors, weights)?;
    let pooled = tape.segment_sum(weighted, segments)?;
    Ok((pooled, weights))
}

/// `tanh(W_proj e_r + b_proj)` for each forward relation in `relations`.
pub fn encode_single_relation(tape: &mut Tape, vars: &EncoderVars, relations: &[RelationId]) -> Result<Var> {
    if let Some(r) = relations.iter().find(|r| r.index() >= vars.config.num_forward) {
        return Err(Error::NotForwardRelation(r.0));
    }
    let rows = tape.gather_rows(vars.relation_table, relations.iter().map(|r| r.index()).collect())?;
    let z = tape.matmul_nt(rows, vars.projection_w)?;
    let z = tape.add_row(z, vars.projection_b)?;
    Ok(tape.tanh(z)?)
}

/// Tape handles for a batch of encoded path sets.
#[derive(Debug, Clone)]
pub struct PathSetEncoding {
    /// One pooled code per path set, `S x 2d_h`.
    pub pooled: Var,
    /// Path codes in set order (set 0's paths first), `N x 2d_h`.
    pub path_vectors: Var,
    /// Path-level weights aligned with `path_vectors`, `N x 1`.
    pub path_weights: Var,
    /// Row range of each set inside `path_vectors`.
    pub segments: Vec<Range<usize>>,
    /// For each length group: the relation weights (`B x T`) and the row in
    /// set order each group row belongs to.
    relation_groups: Vec<(Var, Vec<usize>)>,
}

impl PathSetEncoding {
    /// Relation-level weights of every path, in set order.
    pub fn relation_weights(&self, tape: &Tape) -> Vec<Vec<f64>> {
        let n = self.segments.last().map_or(0, |s| s.end);
        let mut out = vec![Vec::new(); n];
        for (var, rows) in &self.relation_groups {
            let w = tape.value(*var);
            for (k, &row) in rows.iter().enumerate() {
                out[row] = w.row(k).to_vec();
            }
        }
        out
    }
}

/// Encodes every path of every set and pools them per set.
pub fn encode_path_sets(tape: &mut Tape, vars: &EncoderVars, sets: &[&PathSet]) -> Result<PathSetEncoding> {
    let mut segments = Vec::with_capacity(sets.len());
    let mut by_length: BTreeMap<usize, Vec<(usize, &Path)>> = BTreeMap::new();
    let mut row = 0;
    for set in sets {
        if set.paths.is_empty() {
            return Err(Error::EmptyPathSet {
                head: set.head.0,
                tail: set.tail.0,
            });
        }
        segments.push(row..row + set.paths.len());
        for p in &set.paths {
            if p.len() < 2 {
                return Err(Error::Invalid(format!("path {p} has fewer than two hops")));
            }
            by_length.entry(p.len()).or_default().push((row, p));
            row += 1;
        }
    }

    let mut group_codes = Vec::new();
    let mut relation_groups = Vec::new();
    let mut grouped_order = Vec::with_capacity(row);
    for (len, members) in &by_length {
        let paths: Vec<&Path> = members.iter().map(|(_, p)| *p).collect();
        let inputs = (0..*len)
            .map(|j| embed_position(tape, vars, &paths, j))
            .collect::<Result<Vec<_>>>()?;
        let annotations = bigru_encode(tape, &inputs, vars)?;
        let (codes, weights) = relation_attention(tape, &annotations, &vars.relation_attention)?;
        group_codes.push(codes);
        let rows: Vec<usize> = members.iter().map(|(r, _)| *r).collect();
        grouped_order.extend_from_slice(&rows);
        relation_groups.push((weights, rows));
    }
    let grouped = if group_codes.len() == 1 {
        group_codes[0]
    } else {
        tape.concat_rows(&group_codes)?
    };
    let mut position_of = vec![0; row];
    for (k, &r) in grouped_order.iter().enumerate() {
        position_of[r] = k;
    }
    let path_vectors = if grouped_order.iter().enumerate().all(|(k, &r)| k == r) {
        grouped
    } else {
        tape.gather_rows(grouped, position_of)?
    };
    let (pooled, path_weights) = path_attention(tape, path_vectors, segments.clone(), &vars.path_attention)?;
    Ok(PathSetEncoding {
        pooled,
        path_vectors,
        path_weights,
        segments,
        relation_groups,
    })
}

/// Reads `name<TAB>v1<TAB>...<TAB>v_d` rows into the relation table. Names
/// resolve against the forward vocabulary; `name^-1` addresses the inverse
/// row. Unknown names are skipped with a warning. Returns the rows set.
pub fn load_pretrained_relations(path: &FsPath, relations: &Vocab, table: &mut Tensor) -> Result<usize> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let n = relations.len();
    let d = table.cols();
    let mut set = 0;
    let mut unmatched = 0;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let name = fields.next().unwrap_or_default();
        let values = fields
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::parse(path, lineno + 1, e.to_string()))?;
        if values.len() != d {
            return Err(Error::parse(
                path,
                lineno + 1,
                format!("expected {d} values, found {}", values.len()),
            ));
        }
        let row = match name.strip_suffix("^-1") {
            Some(base) => relations.id(base).map(|r| r as usize + n),
            None => relations.id(name).map(|r| r as usize),
        };
        match row {
            Some(r) => {
                table.row_mut(r).copy_from_slice(&values);
                set += 1;
            }
            None => unmatched += 1,
        }
    }
    if unmatched > 0 {
        log::warn!(
            "{}: {unmatched} embedding rows matched no relation; those relations keep random init",
            path.display()
        );
    }
    Ok(set)
}

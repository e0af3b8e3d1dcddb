//! Shared feature extractor, relation classifier and source discriminator,
//! plus every term of the training objective.

use rand::Rng;

use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::encoders::glorot;
use crate::error::{Error, Result};
use crate::kb::RelationId;

/// Origin of a feature vector, which is what the discriminator predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Source {
    Relation,
    Path,
}

impl Source {
    pub fn index(self) -> usize {
        match self {
            Source::Relation => 0,
            Source::Path => 1,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Source::Relation => "r",
            Source::Path => "p",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledConfig {
    pub code_width: usize,
    pub hidden: usize,
    pub d_f: usize,
    pub num_forward: usize,
}

/// Two sigmoid layers: `code_width -> hidden -> d_f`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractorParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadParams {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct ExtractorVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct HeadVars {
    pub w: Var,
    pub b: Var,
}

impl ExtractorParams {
    pub fn init(store: &mut ParamStore, cfg: &CoupledConfig, rng: &mut impl Rng) -> Self {
        ExtractorParams {
            w1: store.add("extract.w1", glorot(rng, cfg.hidden, cfg.code_width)),
            b1: store.add("extract.b1", Tensor::zeros(1, cfg.hidden)),
            w2: store.add("extract.w2", glorot(rng, cfg.d_f, cfg.hidden)),
            b2: store.add("extract.b2", Tensor::zeros(1, cfg.d_f)),
        }
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore) -> ExtractorVars {
        ExtractorVars {
            w1: tape.param(store, self.w1),
            b1: tape.param(store, self.b1),
            w2: tape.param(store, self.w2),
            b2: tape.param(store, self.b2),
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.w1, self.b1, self.w2, self.b2]
    }
}

impl HeadParams {
    pub fn init(store: &mut ParamStore, name: &str, outputs: usize, inputs: usize, rng: &mut impl Rng) -> Self {
        HeadParams {
            w: store.add(format!("{name}.w"), glorot(rng, outputs, inputs)),
            b: store.add(format!("{name}.b"), Tensor::zeros(1, outputs)),
        }
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore) -> HeadVars {
        HeadVars {
            w: tape.param(store, self.w),
            b: tape.param(store, self.b),
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.w, self.b]
    }
}

#[derive(Debug, Clone)]
pub struct Extracted {
    pub features: Var,
    /// Output of every sigmoid layer, the last one being `features`.
    pub activations: Vec<Var>,
}

fn affine(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let z = tape.matmul_nt(x, w)?;
    Ok(tape.add_row(z, b)?)
}

/// `f = s(W2 s(W1 x + b1) + b2)` row-wise.
pub fn extract_features(tape: &mut Tape, codes: Var, vars: &ExtractorVars) -> Result<Extracted> {
    let z1 = affine(tape, codes, vars.w1, vars.b1)?;
    let a1 = tape.sigmoid(z1)?;
    let z2 = affine(tape, a1, vars.w2, vars.b2)?;
    let f = tape.sigmoid(z2)?;
    Ok(Extracted {
        features: f,
        activations: vec![a1, f],
    })
}

/// Sum over layers and units of `KL(rho || batch-mean activation)`.
pub fn sparsity_penalty(tape: &mut Tape, activations: &[Var], rho: f64) -> Result<Var> {
    let mut total: Option<Var> = None;
    for &a in activations {
        let kl = tape.kl_sparsity(a, rho)?;
        total = Some(match total {
            None => kl,
            Some(t) => tape.add(t, kl)?,
        });
    }
    total.ok_or_else(|| Error::Invalid("sparsity penalty over zero layers".into()))
}

/// Softmax over forward relations.
pub fn classify(tape: &mut Tape, features: Var, head: &HeadVars) -> Result<Var> {
    let logits = affine(tape, features, head.w, head.b)?;
    Ok(tape.softmax_rows(logits)?)
}

/// Mean negative log-likelihood of the labels.
pub fn classifier_loss(tape: &mut Tape, probs: Var, labels: &[RelationId]) -> Result<Var> {
    Ok(tape.nll(probs, labels.iter().map(|r| r.index()).collect())?)
}

/// Source probabilities `softmax(W_d grl(f) + b_d)`; the forward value does
/// not depend on `lambda`.
pub fn discriminate(tape: &mut Tape, features: Var, head: &HeadVars, lambda: f64) -> Result<Var> {
    let reversed = tape.grl(features, lambda)?;
    let logits = affine(tape, reversed, head.w, head.b)?;
    Ok(tape.softmax_rows(logits)?)
}

/// Binary cross-entropy averaged over all samples. Both sources must be present.
pub fn discriminator_loss(tape: &mut Tape, probs: Var, sources: &[Source]) -> Result<Var> {
    let has = |s| sources.contains(&s);
    if !(has(Source::Relation) && has(Source::Path)) {
        return Err(Error::Invalid(
            "discriminator batch must contain both relation and path samples".into(),
        ));
    }
    Ok(tape.nll(probs, sources.iter().map(|s| s.index()).collect())?)
}

/// `||W_d||_F^2 + ||b_d||^2 + ||W_c||_F^2 + ||b_c||^2`.
pub fn l2_frobenius_reg(tape: &mut Tape, heads: &[HeadVars]) -> Result<Var> {
    let mut total: Option<Var> = None;
    for h in heads {
        for v in [h.w, h.b] {
            let s = tape.sum_squares(v)?;
            total = Some(match total {
                None => s,
                Some(t) => tape.add(t, s)?,
            });
        }
    }
    total.ok_or_else(|| Error::Invalid("regularizer over zero heads".into()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// Weight of the sparsity penalty.
    pub beta: f64,
    /// Target mean activation.
    pub rho: f64,
    /// Weight of the head regularizer.
    pub rho_r: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            beta: 0.01,
            rho: 0.05,
            rho_r: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct LossBreakdown {
    pub classifier: f64,
    pub discriminator: f64,
    pub sparsity: f64,
    pub regularization: f64,
    pub total: f64,
}

/// Loss terms recorded on a tape; absent terms count as zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossTerms {
    pub classifier: Option<Var>,
    pub discriminator: Option<Var>,
    pub sparsity: Option<Var>,
    pub regularization: Option<Var>,
}

/// `L = L_D + L_C + beta * KL + rho_r * L_R`.
pub fn total_loss(tape: &mut Tape, terms: LossTerms, weights: &LossWeights) -> Result<(Var, LossBreakdown)> {
    let mut parts = Vec::new();
    if let Some(d) = terms.discriminator {
        parts.push(d);
    }
    if let Some(c) = terms.classifier {
        parts.push(c);
    }
    if let Some(kl) = terms.sparsity {
        parts.push(tape.scale(kl, weights.beta)?);
    }
    if let Some(reg) = terms.regularization {
        parts.push(tape.scale(reg, weights.rho_r)?);
    }
    let mut total = *parts
        .first()
        .ok_or_else(|| Error::Invalid("total loss over zero terms".into()))?;
    for &p in &parts[1..] {
        total = tape.add(total, p)?;
    }
    let value = |v: Option<Var>| v.map_or(0.0, |v| tape.value(v).item());
    let breakdown = LossBreakdown {
        classifier: value(terms.classifier),
        discriminator: value(terms.discriminator),
        sparsity: value(terms.sparsity),
        regularization: value(terms.regularization),
        total: tape.value(total).item(),
    };
    Ok((total, breakdown))
}

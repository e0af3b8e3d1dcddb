//! The full model: encoders feeding the coupled networks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Checkpoint, ParamId, ParamStore, Tape, Tensor, Var};
use crate::coupled::{
    self, CoupledConfig, ExtractorParams, ExtractorVars, HeadParams, HeadVars, LossBreakdown, LossTerms, LossWeights,
    Source,
};
use crate::encoders::{self, EncoderConfig, EncoderParams, EncoderVars};
use crate::error::{Error, Result};
use crate::kb::RelationId;
use crate::paths::PathSet;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub d_r: usize,
    pub d_pe: usize,
    pub d_dir: usize,
    pub d_h: usize,
    pub d_a: usize,
    pub extractor_hidden: usize,
    pub d_f: usize,
    pub max_hops: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_r: 100,
            d_pe: 5,
            d_dir: 5,
            d_h: 100,
            d_a: 200,
            extractor_hidden: 150,
            d_f: 100,
            max_hops: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Encoder,
    Extractor,
    Classifier,
    Discriminator,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub num_forward: usize,
    pub store: ParamStore,
    pub encoder: EncoderParams,
    pub extractor: ExtractorParams,
    pub classifier: HeadParams,
    pub discriminator: HeadParams,
}

#[derive(Debug, Clone)]
pub struct ModelVars {
    pub encoder: EncoderVars,
    pub extractor: ExtractorVars,
    pub classifier: HeadVars,
    pub discriminator: HeadVars,
}

/// One training batch: relation samples and path samples, each labelled.
#[derive(Debug, Clone)]
pub struct BatchInput<'a> {
    pub relation_labels: Vec<RelationId>,
    pub path_sets: Vec<&'a PathSet>,
    pub path_labels: Vec<RelationId>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardOptions {
    pub lambda: f64,
    pub classify_relations: bool,
    pub classify_paths: bool,
    pub discriminate: bool,
    pub sparsity: bool,
    /// Adds the squared-norm penalty of every active head.
    pub regularize: bool,
    pub weights: LossWeights,
}

#[derive(Debug, Clone)]
pub struct BatchOutput {
    pub loss: Var,
    pub breakdown: LossBreakdown,
    /// Fraction of samples whose source the discriminator got right.
    pub disc_accuracy: Option<f64>,
}

/// Plain values of a forward pass without a loss.
#[derive(Debug, Clone)]
pub struct Inference {
    /// Single-relation codes, one row per label.
    pub relation_codes: Tensor,
    pub relation_features: Tensor,
    pub pooled_codes: Tensor,
    pub path_features: Tensor,
    /// Class probabilities from path features, one row per path set.
    pub class_probs: Tensor,
    /// Discriminator probabilities: relation rows first, then path rows.
    pub source_probs: Tensor,
    pub path_vectors: Tensor,
    pub path_weights: Vec<f64>,
    pub relation_weights: Vec<Vec<f64>>,
    pub segments: Vec<std::ops::Range<usize>>,
}

impl Model {
    pub fn new(config: ModelConfig, num_forward: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let enc_cfg = EncoderConfig {
            num_forward,
            d_r: config.d_r,
            d_pe: config.d_pe,
            d_dir: config.d_dir,
            d_h: config.d_h,
            d_a: config.d_a,
            max_hops: config.max_hops,
        };
        let encoder = EncoderParams::init(&mut store, enc_cfg, &mut rng);
        let cc = CoupledConfig {
            code_width: 2 * config.d_h,
            hidden: config.extractor_hidden,
            d_f: config.d_f,
            num_forward,
        };
        let extractor = ExtractorParams::init(&mut store, &cc, &mut rng);
        let classifier = HeadParams::init(&mut store, "classifier", num_forward, config.d_f, &mut rng);
        let discriminator = HeadParams::init(&mut store, "discriminator", 2, config.d_f, &mut rng);
        Model {
            config,
            num_forward,
            store,
            encoder,
            extractor,
            classifier,
            discriminator,
        }
    }

    pub fn group(&self, group: ParamGroup) -> Vec<ParamId> {
        match group {
            ParamGroup::Encoder => self.encoder.param_ids(),
            ParamGroup::Extractor => self.extractor.param_ids(),
            ParamGroup::Classifier => self.classifier.param_ids(),
            ParamGroup::Discriminator => self.discriminator.param_ids(),
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> ModelVars {
        ModelVars {
            encoder: self.encoder.bind(tape, &self.store),
            extractor: self.extractor.bind(tape, &self.store),
            classifier: self.classifier.bind(tape, &self.store),
            discriminator: self.discriminator.bind(tape, &self.store),
        }
    }

    /// Records the batch objective on `tape`.
    pub fn forward_batch(
        &self,
        tape: &mut Tape,
        vars: &ModelVars,
        batch: &BatchInput<'_>,
        opts: &ForwardOptions,
    ) -> Result<BatchOutput> {
        let n_r = batch.relation_labels.len();
        let n_p = batch.path_sets.len();
        if batch.path_labels.len() != n_p {
            return Err(Error::Invalid("path labels do not match path sets".into()));
        }
        let mut code_parts = Vec::new();
        if n_r > 0 {
            code_parts.push(encoders::encode_single_relation(
                tape,
                &vars.encoder,
                &batch.relation_labels,
            )?);
        }
        if n_p > 0 {
            code_parts.push(encoders::encode_path_sets(tape, &vars.encoder, &batch.path_sets)?.pooled);
        }
        let codes = match code_parts.len() {
            0 => return Err(Error::Invalid("empty batch".into())),
            1 => code_parts[0],
            _ => tape.concat_rows(&code_parts)?,
        };
        let extracted = coupled::extract_features(tape, codes, &vars.extractor)?;
        let features = extracted.features;

        let mut terms = LossTerms::default();
        let mut heads = Vec::new();

        let mut class_rows = Vec::new();
        let mut class_labels = Vec::new();
        if opts.classify_relations {
            class_rows.extend(0..n_r);
            class_labels.extend_from_slice(&batch.relation_labels);
        }
        if opts.classify_paths {
            class_rows.extend(n_r..n_r + n_p);
            class_labels.extend_from_slice(&batch.path_labels);
        }
        if !class_rows.is_empty() {
            let selected = if class_rows.len() == n_r + n_p {
                features
            } else {
                tape.gather_rows(features, class_rows)?
            };
            let probs = coupled::classify(tape, selected, &vars.classifier)?;
            terms.classifier = Some(coupled::classifier_loss(tape, probs, &class_labels)?);
            heads.push(vars.classifier);
        }

        let mut disc_accuracy = None;
        if opts.discriminate {
            let sources: Vec<Source> = std::iter::repeat_n(Source::Relation, n_r)
                .chain(std::iter::repeat_n(Source::Path, n_p))
                .collect();
            let probs = coupled::discriminate(tape, features, &vars.discriminator, opts.lambda)?;
            terms.discriminator = Some(coupled::discriminator_loss(tape, probs, &sources)?);
            disc_accuracy = Some(source_accuracy(tape.value(probs), &sources));
            heads.push(vars.discriminator);
        }

        if opts.sparsity {
            terms.sparsity = Some(coupled::sparsity_penalty(
                tape,
                &extracted.activations,
                opts.weights.rho,
            )?);
        }
        if opts.regularize && !heads.is_empty() {
            terms.regularization = Some(coupled::l2_frobenius_reg(tape, &heads)?);
        }
        let (loss, breakdown) = coupled::total_loss(tape, terms, &opts.weights)?;
        Ok(BatchOutput {
            loss,
            breakdown,
            disc_accuracy,
        })
    }

    /// Forward pass over path sets (and optionally relation labels) without
    /// recording a loss.
    pub fn infer(&self, path_sets: &[&PathSet], relation_labels: &[RelationId]) -> Result<Inference> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let cw = 2 * self.config.d_h;
        let (relation_codes, relation_features, rel_source) = if relation_labels.is_empty() {
            (
                Tensor::zeros(0, cw),
                Tensor::zeros(0, self.config.d_f),
                Tensor::zeros(0, 2),
            )
        } else {
            let codes = encoders::encode_single_relation(&mut tape, &vars.encoder, relation_labels)?;
            let f = coupled::extract_features(&mut tape, codes, &vars.extractor)?.features;
            let src = coupled::discriminate(&mut tape, f, &vars.discriminator, 0.0)?;
            (
                tape.value(codes).clone(),
                tape.value(f).clone(),
                tape.value(src).clone(),
            )
        };
        if path_sets.is_empty() {
            return Ok(Inference {
                relation_codes,
                relation_features,
                pooled_codes: Tensor::zeros(0, cw),
                path_features: Tensor::zeros(0, self.config.d_f),
                class_probs: Tensor::zeros(0, self.num_forward),
                source_probs: rel_source,
                path_vectors: Tensor::zeros(0, cw),
                path_weights: vec![],
                relation_weights: vec![],
                segments: vec![],
            });
        }
        let enc = encoders::encode_path_sets(&mut tape, &vars.encoder, path_sets)?;
        let f = coupled::extract_features(&mut tape, enc.pooled, &vars.extractor)?.features;
        let probs = coupled::classify(&mut tape, f, &vars.classifier)?;
        let src = coupled::discriminate(&mut tape, f, &vars.discriminator, 0.0)?;
        let mut source_data = rel_source.into_data();
        source_data.extend_from_slice(tape.value(src).data());
        let rows = source_data.len() / 2;
        Ok(Inference {
            relation_codes,
            relation_features,
            pooled_codes: tape.value(enc.pooled).clone(),
            path_features: tape.value(f).clone(),
            class_probs: tape.value(probs).clone(),
            source_probs: Tensor::from_vec(rows, 2, source_data)?,
            path_vectors: tape.value(enc.path_vectors).clone(),
            path_weights: tape.value(enc.path_weights).data().to_vec(),
            relation_weights: enc.relation_weights(&tape),
            segments: enc.segments,
        })
    }

    /// Relation probabilities for each path set, evaluated in chunks.
    pub fn score_path_sets(&self, path_sets: &[&PathSet], chunk: usize) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(path_sets.len());
        for part in path_sets.chunks(chunk.max(1)) {
            let inf = self.infer(part, &[])?;
            for i in 0..inf.class_probs.rows() {
                out.push(inf.class_probs.row(i).to_vec());
            }
        }
        Ok(out)
    }

    /// Discriminator accuracy on balanced held-out features: each label
    /// contributes a relation sample and each path set a path sample.
    pub fn discriminator_accuracy(&self, labels: &[RelationId], path_sets: &[&PathSet], chunk: usize) -> Result<f64> {
        let mut correct = 0usize;
        let mut total = 0usize;
        for part in labels.chunks(chunk.max(1)) {
            let inf = self.infer(&[], part)?;
            let sources = vec![Source::Relation; part.len()];
            correct += (source_accuracy(&inf.source_probs, &sources) * part.len() as f64).round() as usize;
            total += part.len();
        }
        for part in path_sets.chunks(chunk.max(1)) {
            let inf = self.infer(part, &[])?;
            let sources = vec![Source::Path; part.len()];
            correct += (source_accuracy(&inf.source_probs, &sources) * part.len() as f64).round() as usize;
            total += part.len();
        }
        if total == 0 {
            return Err(Error::Invalid("no samples for discriminator accuracy".into()));
        }
        Ok(correct as f64 / total as f64)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        for p in self.store.iter() {
            ck.push(p.name.clone(), p.value.clone());
        }
        ck
    }

    /// Copies parameter values from a checkpoint; every parameter must be
    /// present with a matching shape.
    pub fn load_parameters(&mut self, ck: &Checkpoint) -> Result<()> {
        for id in self.store.ids().collect::<Vec<_>>() {
            let p = self.store.get_mut(id);
            let t = ck
                .get(&p.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {}", p.name)))?;
            if t.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} has shape {:?} in checkpoint but {:?} in model (vocabulary or config mismatch)",
                    p.name,
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t.clone();
        }
        Ok(())
    }
}

/// Fraction of rows whose most probable source is the true one
/// (ties count as the relation source).
pub fn source_accuracy(probs: &Tensor, sources: &[Source]) -> f64 {
    if sources.is_empty() {
        return 0.0;
    }
    let hits = sources
        .iter()
        .enumerate()
        .filter(|(i, s)| {
            let predicted = if probs.get(*i, 1) > probs.get(*i, 0) {
                Source::Path
            } else {
                Source::Relation
            };
            predicted == **s
        })
        .count();
    hits as f64 / sources.len() as f64
}

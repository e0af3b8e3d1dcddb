//! Pre-training, balanced batching and joint adversarial training.

use std::fmt;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Checkpoint, ParamId, ParamStore, Tape, Tensor};
use crate::coupled::{LossBreakdown, LossWeights};
use crate::error::{Error, Result};
use crate::eval;
use crate::kb::{KnowledgeGraph, RelationId, TrainingPair};
use crate::model::{BatchInput, ForwardOptions, Model, ModelConfig, ParamGroup};
use crate::paths::PathSet;

pub const LOG_HEADER: &str = "iter,epoch,loss_total,loss_c,loss_d,kl,reg,lambda,lr,disc_acc";
pub const EPOCH_HEADER: &str = "phase,epoch,valid_mr,valid_hits1,heldout_disc_acc";

/// `2 / (1 + exp(-gamma * prog)) - 1`, rising from 0 towards 1.
pub fn lambda_schedule(prog: f64, gamma: f64) -> f64 {
    2.0 / (1.0 + (-gamma * prog).exp()) - 1.0
}

/// `lr_base / (1 + gamma * prog)^0.5`.
pub fn lr_schedule(prog: f64, gamma: f64, lr_base: f64) -> f64 {
    lr_base / (1.0 + gamma * prog).sqrt()
}

/// `v <- momentum * v + g; theta <- theta - lr * v` for the given parameters.
/// Nothing is touched if any gradient is non-finite. Gradients of the
/// updated parameters are zeroed afterwards.
pub fn sgd_momentum_step(store: &mut ParamStore, ids: &[ParamId], lr: f64, momentum: f64) -> Result<()> {
    for &id in ids {
        let p = store.get(id);
        if !p.grad.all_finite() {
            return Err(Error::Invalid(format!("non-finite gradient for {}", p.name)));
        }
    }
    for &id in ids {
        let p = store.get_mut(id);
        let grad = p.grad.data();
        for ((v, th), g) in p
            .velocity
            .data_mut()
            .iter_mut()
            .zip(p.value.data_mut().iter_mut())
            .zip(grad.iter())
        {
            *v = momentum * *v + g;
            *th -= lr * *v;
        }
        p.zero_grad();
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassifierSources {
    Relation,
    Both,
}

impl std::str::FromStr for ClassifierSources {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relation" => Ok(ClassifierSources::Relation),
            "both" => Ok(ClassifierSources::Both),
            other => Err(Error::Config(format!(
                "classifier_sources must be relation or both, got {other:?}"
            ))),
        }
    }
}

impl fmt::Display for ClassifierSources {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClassifierSources::Relation => "relation",
            ClassifierSources::Both => "both",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr_base: f64,
    /// Constant rate for both pre-training phases.
    pub pretrain_lr: f64,
    pub momentum: f64,
    pub gamma: f64,
    pub weights: LossWeights,
    /// Samples per batch, half from each source.
    pub batch_size: usize,
    pub epochs: usize,
    /// Cap on classifier pre-training epochs.
    pub pretrain_epochs: usize,
    pub patience: usize,
    pub disc_pretrain_epochs: usize,
    pub seed: u64,
    pub classifier_sources: ClassifierSources,
    /// Replaces the lambda schedule with a constant, e.g. 0 for a control run.
    pub fixed_lambda: Option<f64>,
    pub eval_chunk: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_base: 0.005,
            pretrain_lr: 0.05,
            momentum: 0.95,
            gamma: 10.0,
            weights: LossWeights::default(),
            batch_size: 100,
            epochs: 20,
            pretrain_epochs: 30,
            patience: 5,
            disc_pretrain_epochs: 5,
            seed: 0,
            classifier_sources: ClassifierSources::Relation,
            fixed_lambda: None,
            eval_chunk: 256,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr_base", self.lr_base),
            ("pretrain_lr", self.pretrain_lr),
            ("gamma", self.gamma),
            ("beta", self.weights.beta),
            ("rho_r", self.weights.rho_r),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weights.rho > 0.0 && self.weights.rho < 1.0) {
            return Err(Error::Config(format!(
                "rho must be in (0, 1), got {}",
                self.weights.rho
            )));
        }
        if self.batch_size < 2 || !self.batch_size.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "batch_size must be even and at least 2, got {}",
                self.batch_size
            )));
        }
        if self.patience == 0 || self.eval_chunk == 0 {
            return Err(Error::Config("patience and eval_chunk must be positive".into()));
        }
        if let Some(l) = self.fixed_lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::Config(format!("fixed_lambda must be nonnegative, got {l}")));
            }
        }
        Ok(())
    }
}

/// Indices into the training pairs for one batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BalancedBatch {
    pub relation: Vec<usize>,
    pub path: Vec<usize>,
}

/// Draws equal numbers of relation and path samples. Each source is drawn
/// without replacement within an epoch; a source that runs out is topped up
/// with draws with replacement.
#[derive(Debug)]
pub struct BatchComposer {
    relation_pool: Vec<usize>,
    path_pool: Vec<usize>,
    relation_queue: Vec<usize>,
    path_queue: Vec<usize>,
    half: usize,
    rng: ChaCha8Rng,
    batches_left: usize,
    /// Samples drawn with replacement so far this epoch.
    pub resampled: usize,
}

impl BatchComposer {
    pub fn new(relation_pool: Vec<usize>, path_pool: Vec<usize>, batch_size: usize, rng: ChaCha8Rng) -> Result<Self> {
        if relation_pool.is_empty() || path_pool.is_empty() {
            return Err(Error::Invalid("balanced batches need samples from both sources".into()));
        }
        if batch_size < 2 || !batch_size.is_multiple_of(2) {
            return Err(Error::Config(format!("batch_size must be even, got {batch_size}")));
        }
        let half = batch_size / 2;
        let longest = relation_pool.len().max(path_pool.len());
        let mut c = BatchComposer {
            relation_queue: relation_pool.clone(),
            path_queue: path_pool.clone(),
            relation_pool,
            path_pool,
            half,
            rng,
            batches_left: longest.div_ceil(half),
            resampled: 0,
        };
        c.relation_queue.shuffle(&mut c.rng);
        c.path_queue.shuffle(&mut c.rng);
        c.relation_queue.reverse();
        c.path_queue.reverse();
        Ok(c)
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.batches_left
    }

    fn draw(
        queue: &mut Vec<usize>,
        pool: &[usize],
        n: usize,
        rng: &mut ChaCha8Rng,
        resampled: &mut usize,
    ) -> Vec<usize> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            match queue.pop() {
                Some(i) => out.push(i),
                None => {
                    out.push(pool[rng.gen_range(0..pool.len())]);
                    *resampled += 1;
                }
            }
        }
        out
    }
}

impl Iterator for BatchComposer {
    type Item = BalancedBatch;

    fn next(&mut self) -> Option<BalancedBatch> {
        if self.batches_left == 0 {
            if self.resampled > 0 {
                log::debug!(
                    "{} samples drawn with replacement to keep batches balanced",
                    self.resampled
                );
            }
            return None;
        }
        self.batches_left -= 1;
        let relation = Self::draw(
            &mut self.relation_queue,
            &self.relation_pool,
            self.half,
            &mut self.rng,
            &mut self.resampled,
        );
        let path = Self::draw(
            &mut self.path_queue,
            &self.path_pool,
            self.half,
            &mut self.rng,
            &mut self.resampled,
        );
        Some(BalancedBatch { relation, path })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Pretrain,
    Discriminator,
    Joint,
    Done,
}

impl Phase {
    fn code(self) -> u64 {
        match self {
            Phase::Pretrain => 0,
            Phase::Discriminator => 1,
            Phase::Joint => 2,
            Phase::Done => 3,
        }
    }

    fn from_code(c: u64) -> Result<Self> {
        Ok(match c {
            0 => Phase::Pretrain,
            1 => Phase::Discriminator,
            2 => Phase::Joint,
            3 => Phase::Done,
            _ => return Err(Error::Checkpoint(format!("unknown phase code {c}"))),
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Discriminator => "discriminator",
            Phase::Joint => "joint",
            Phase::Done => "done",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub phase: Phase,
    pub iter: u64,
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub lambda: f64,
    pub lr: f64,
    pub disc_acc: Option<f64>,
}

impl LogRow {
    pub fn csv(&self) -> String {
        let acc = self.disc_acc.map(|a| a.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.iter,
            self.epoch,
            self.loss.total,
            self.loss.classifier,
            self.loss.discriminator,
            self.loss.sparsity,
            self.loss.regularization,
            self.lambda,
            self.lr,
            acc
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochSummary {
    pub phase: Phase,
    pub epoch: usize,
    pub valid_mr: Option<f64>,
    pub valid_hits1: Option<f64>,
    pub heldout_disc_acc: Option<f64>,
}

impl EpochSummary {
    pub fn csv(&self) -> String {
        let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{}",
            self.phase.as_str(),
            self.epoch,
            f(self.valid_mr),
            f(self.valid_hits1),
            f(self.heldout_disc_acc)
        )
    }
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub model: Model,
    pub phase: Phase,
    /// Epochs completed in the current phase.
    pub epoch: usize,
    pub iteration: u64,
    /// Joint-phase samples seen per source (`n_c`).
    pub samples_seen: u64,
    pub best_valid_mr: f64,
    pub stale_epochs: usize,
    /// Fingerprint of the relation vocabulary the model was built for.
    pub relation_vocab: Option<u64>,
    best_params: Option<Vec<Tensor>>,
}

impl TrainState {
    pub fn new(model: Model) -> Self {
        TrainState {
            model,
            phase: Phase::Pretrain,
            epoch: 0,
            iteration: 0,
            samples_seen: 0,
            best_valid_mr: f64::INFINITY,
            stale_epochs: 0,
            relation_vocab: None,
            best_params: None,
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = self.model.to_checkpoint();
        for p in self.model.store.iter() {
            ck.push(format!("velocity/{}", p.name), p.velocity.clone());
        }
        if let Some(best) = &self.best_params {
            for (p, t) in self.model.store.iter().zip(best) {
                ck.push(format!("best/{}", p.name), t.clone());
            }
        }
        let c = &self.model.config;
        let scalars: [(&str, f64); 15] = [
            ("config/num_forward", self.model.num_forward as f64),
            ("config/d_r", c.d_r as f64),
            ("config/d_pe", c.d_pe as f64),
            ("config/d_dir", c.d_dir as f64),
            ("config/d_h", c.d_h as f64),
            ("config/d_a", c.d_a as f64),
            ("config/extractor_hidden", c.extractor_hidden as f64),
            ("config/d_f", c.d_f as f64),
            ("config/max_hops", c.max_hops as f64),
            ("state/phase", self.phase.code() as f64),
            ("state/epoch", self.epoch as f64),
            ("state/iteration", self.iteration as f64),
            ("state/samples_seen", self.samples_seen as f64),
            ("state/best_valid_mr", self.best_valid_mr),
            ("state/stale_epochs", self.stale_epochs as f64),
        ];
        for (k, v) in scalars {
            ck.push(k, Tensor::scalar(v));
        }
        if let Some(fp) = self.relation_vocab {
            ck.push("state/relation_vocab_hi", Tensor::scalar((fp >> 32) as f64));
            ck.push("state/relation_vocab_lo", Tensor::scalar((fp & 0xffff_ffff) as f64));
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let scalar = |k: &str| -> Result<f64> {
            ck.get(k)
                .map(|t| t.data()[0])
                .ok_or_else(|| Error::Checkpoint(format!("missing {k}")))
        };
        let count = |k: &str| -> Result<usize> { Ok(scalar(k)? as usize) };
        let config = ModelConfig {
            d_r: count("config/d_r")?,
            d_pe: count("config/d_pe")?,
            d_dir: count("config/d_dir")?,
            d_h: count("config/d_h")?,
            d_a: count("config/d_a")?,
            extractor_hidden: count("config/extractor_hidden")?,
            d_f: count("config/d_f")?,
            max_hops: count("config/max_hops")?,
        };
        let mut model = Model::new(config, count("config/num_forward")?, 0);
        model.load_parameters(ck)?;
        let ids: Vec<ParamId> = model.store.ids().collect();
        for &id in &ids {
            let p = model.store.get_mut(id);
            if let Some(v) = ck.get(&format!("velocity/{}", p.name)) {
                p.velocity = v.clone();
            }
        }
        let best_params = if ck.get(&format!("best/{}", model.store.get(ids[0]).name)).is_some() {
            Some(
                ids.iter()
                    .map(|&id| {
                        let name = format!("best/{}", model.store.get(id).name);
                        ck.get(&name)
                            .cloned()
                            .ok_or_else(|| Error::Checkpoint(format!("missing {name}")))
                    })
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        let phase = match ck.get("state/phase") {
            Some(t) => Phase::from_code(t.data()[0] as u64)?,
            None => Phase::Pretrain,
        };
        let opt = |k: &str, default: f64| ck.get(k).map_or(default, |t| t.data()[0]);
        Ok(TrainState {
            model,
            phase,
            epoch: opt("state/epoch", 0.0) as usize,
            iteration: opt("state/iteration", 0.0) as u64,
            samples_seen: opt("state/samples_seen", 0.0) as u64,
            best_valid_mr: opt("state/best_valid_mr", f64::INFINITY),
            stale_epochs: opt("state/stale_epochs", 0.0) as usize,
            relation_vocab: match (ck.get("state/relation_vocab_hi"), ck.get("state/relation_vocab_lo")) {
                (Some(hi), Some(lo)) => Some(((hi.data()[0] as u64) << 32) | lo.data()[0] as u64),
                _ => None,
            },
            best_params,
        })
    }

    /// Errors if the model was built for a different relation vocabulary.
    pub fn check_vocabulary(&self, graph: &KnowledgeGraph) -> Result<()> {
        let n = graph.num_forward_relations();
        let fp_differs = self
            .relation_vocab
            .is_some_and(|fp| fp != graph.relations().fingerprint());
        if self.model.num_forward != n || fp_differs {
            return Err(Error::Checkpoint(format!(
                "vocabulary mismatch: model was built for {} relations{}, data has {n}",
                self.model.num_forward,
                if fp_differs { " with different names" } else { "" }
            )));
        }
        Ok(())
    }

    fn snapshot_params(&self) -> Vec<Tensor> {
        self.model.store.iter().map(|p| p.value.clone()).collect()
    }

    fn restore_params(&mut self, values: Vec<Tensor>) {
        let ids: Vec<ParamId> = self.model.store.ids().collect();
        for (id, v) in ids.into_iter().zip(values) {
            *self.model.store.value_mut(id) = v;
        }
    }
}

/// Training pairs with their path sets and the graph used for filtering.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub graph: &'a KnowledgeGraph,
    pub path_sets: &'a [PathSet],
    pub train: &'a [TrainingPair],
    pub valid: &'a [TrainingPair],
}

impl<'a> TrainData<'a> {
    fn path_set(&self, pair: &TrainingPair) -> Result<&'a PathSet> {
        self.path_sets
            .get(pair.path_set)
            .ok_or_else(|| Error::Invalid(format!("pair {} refers to missing path set", pair.id.0)))
    }
}

/// Where the trainer persists progress. All fields are optional.
#[derive(Debug, Clone, Default)]
pub struct Outputs {
    pub checkpoint: Option<PathBuf>,
    pub log: Option<PathBuf>,
    pub epoch_log: Option<PathBuf>,
}

pub struct Trainer<'a> {
    pub config: TrainConfig,
    pub data: TrainData<'a>,
    pub state: TrainState,
    pub log: Vec<LogRow>,
    pub epochs: Vec<EpochSummary>,
    outputs: Outputs,
}

fn append_line(path: &Path, header: &str, line: &str) -> Result<()> {
    let fresh = !path.exists();
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    if fresh {
        writeln!(f, "{header}").map_err(|e| Error::io(path, e))?;
    }
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig, data: TrainData<'a>, state: TrainState, outputs: Outputs) -> Result<Self> {
        config.validate()?;
        if data.train.is_empty() {
            return Err(Error::Invalid("training split is empty".into()));
        }
        state.check_vocabulary(data.graph)?;
        Ok(Trainer {
            config,
            data,
            state,
            log: Vec::new(),
            epochs: Vec::new(),
            outputs,
        })
    }

    fn epoch_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream((self.state.phase.code() << 32) | self.state.epoch as u64);
        rng
    }

    fn composer(&self) -> Result<BatchComposer> {
        let all: Vec<usize> = (0..self.data.train.len()).collect();
        BatchComposer::new(all.clone(), all, self.config.batch_size, self.epoch_rng())
    }

    /// Runs until training is complete.
    pub fn run(&mut self) -> Result<()> {
        self.run_epochs(usize::MAX)
    }

    /// Runs at most `max_epochs` epochs across phases; returns early when done.
    pub fn run_epochs(&mut self, max_epochs: usize) -> Result<()> {
        let mut done = 0;
        while self.state.phase != Phase::Done && done < max_epochs {
            if self.skip_empty_phase() {
                continue;
            }
            match self.state.phase {
                Phase::Pretrain => self.pretrain_epoch()?,
                Phase::Discriminator => self.discriminator_epoch()?,
                Phase::Joint => self.joint_epoch()?,
                Phase::Done => unreachable!(),
            }
            done += 1;
            self.save_checkpoint()?;
        }
        Ok(())
    }

    fn skip_empty_phase(&mut self) -> bool {
        let limit = match self.state.phase {
            Phase::Pretrain => self.config.pretrain_epochs,
            Phase::Discriminator => self.config.disc_pretrain_epochs,
            Phase::Joint => self.config.epochs,
            Phase::Done => return false,
        };
        if limit == 0 {
            self.advance_phase();
            true
        } else {
            false
        }
    }

    fn advance_phase(&mut self) {
        self.state.phase = match self.state.phase {
            Phase::Pretrain => Phase::Discriminator,
            Phase::Discriminator => Phase::Joint,
            Phase::Joint | Phase::Done => Phase::Done,
        };
        self.state.epoch = 0;
        self.state.model.store.reset_velocities();
        log::info!("entering phase {}", self.state.phase.as_str());
    }

    pub fn save_checkpoint(&self) -> Result<()> {
        if let Some(path) = &self.outputs.checkpoint {
            self.state.to_checkpoint().save(path)?;
        }
        Ok(())
    }

    fn record(&mut self, row: LogRow) -> Result<()> {
        if let Some(path) = &self.outputs.log {
            let path = match row.phase {
                Phase::Joint => path.clone(),
                other => path.with_file_name(format!(
                    "{}_{}",
                    other.as_str(),
                    path.file_name().and_then(|n| n.to_str()).unwrap_or("log.csv")
                )),
            };
            append_line(&path, LOG_HEADER, &row.csv())?;
        }
        self.log.push(row);
        Ok(())
    }

    fn record_epoch(&mut self, summary: EpochSummary) -> Result<()> {
        log::info!("{}", summary.csv());
        if let Some(path) = &self.outputs.epoch_log {
            append_line(path, EPOCH_HEADER, &summary.csv())?;
        }
        self.epochs.push(summary);
        Ok(())
    }

    fn diverged(&self, message: String) -> Error {
        let saved = match &self.outputs.checkpoint {
            Some(p) => format!("; last good checkpoint: {}", p.display()),
            None => String::new(),
        };
        Error::Diverged {
            iteration: self.state.iteration as usize,
            message: format!("{message}{saved}"),
        }
    }

    fn valid_metrics(&self) -> Result<Option<eval::Metrics>> {
        if self.data.valid.is_empty() {
            return Ok(None);
        }
        let (report, _) = eval::evaluate(
            &self.state.model,
            self.data.graph,
            self.data.valid,
            self.data.path_sets,
            self.data.train,
            "valid",
            self.config.eval_chunk,
        )?;
        Ok(Some(report.overall))
    }

    /// Discriminator accuracy over balanced validation features.
    pub fn heldout_disc_accuracy(&self) -> Result<Option<f64>> {
        if self.data.valid.is_empty() {
            return Ok(None);
        }
        let labels: Vec<RelationId> = self.data.valid.iter().map(|p| p.label).collect();
        let sets = self
            .data
            .valid
            .iter()
            .map(|p| self.data.path_set(p))
            .collect::<Result<Vec<_>>>()?;
        self.state
            .model
            .discriminator_accuracy(&labels, &sets, self.config.eval_chunk)
            .map(Some)
    }

    fn batch_input(&self, batch: &BalancedBatch) -> Result<BatchInput<'a>> {
        let train = self.data.train;
        let data = self.data;
        Ok(BatchInput {
            relation_labels: batch.relation.iter().map(|&i| train[i].label).collect(),
            path_sets: batch
                .path
                .iter()
                .map(|&i| data.path_set(&train[i]))
                .collect::<Result<Vec<_>>>()?,
            path_labels: batch.path.iter().map(|&i| train[i].label).collect(),
        })
    }

    /// Forward, backward and a momentum step over `groups`.
    fn step(&mut self, batch: &BalancedBatch, opts: &ForwardOptions, lr: f64, groups: &[ParamGroup]) -> Result<LogRow> {
        let input = self.batch_input(batch)?;
        let model = &self.state.model;
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape);
        let out = match model.forward_batch(&mut tape, &vars, &input, opts) {
            Ok(o) => o,
            Err(e) => return Err(self.diverged(format!("forward pass failed: {e}"))),
        };
        if !out.breakdown.total.is_finite() {
            return Err(self.diverged("loss is not finite".into()));
        }
        self.state.model.store.zero_grads();
        tape.backward(out.loss, &mut self.state.model.store)?;
        let ids: Vec<ParamId> = groups.iter().flat_map(|&g| self.state.model.group(g)).collect();
        if let Err(e) = sgd_momentum_step(&mut self.state.model.store, &ids, lr, self.config.momentum) {
            return Err(self.diverged(e.to_string()));
        }
        self.state.iteration += 1;
        Ok(LogRow {
            phase: self.state.phase,
            iter: self.state.iteration,
            epoch: self.state.epoch,
            loss: out.breakdown,
            lambda: opts.lambda,
            lr,
            disc_acc: out.disc_accuracy,
        })
    }

    fn pretrain_epoch(&mut self) -> Result<()> {
        let opts = ForwardOptions {
            lambda: 0.0,
            classify_relations: true,
            classify_paths: true,
            discriminate: false,
            sparsity: false,
            regularize: false,
            weights: self.config.weights,
        };
        let groups = [ParamGroup::Encoder, ParamGroup::Extractor, ParamGroup::Classifier];
        for batch in self.composer()? {
            let row = self.step(&batch, &opts, self.config.pretrain_lr, &groups)?;
            self.record(row)?;
        }
        self.state.epoch += 1;
        let metrics = self.valid_metrics()?;
        let mut finished = self.state.epoch >= self.config.pretrain_epochs;
        match metrics {
            Some(m) if m.mean_rank < self.state.best_valid_mr => {
                self.state.best_valid_mr = m.mean_rank;
                self.state.stale_epochs = 0;
                self.state.best_params = Some(self.state.snapshot_params());
            }
            Some(_) => {
                self.state.stale_epochs += 1;
                finished |= self.state.stale_epochs >= self.config.patience;
            }
            None => {}
        }
        self.record_epoch(EpochSummary {
            phase: Phase::Pretrain,
            epoch: self.state.epoch,
            valid_mr: metrics.map(|m| m.mean_rank),
            valid_hits1: metrics.map(|m| m.hits_at_1),
            heldout_disc_acc: None,
        })?;
        if finished {
            if let Some(best) = self.state.best_params.take() {
                self.state.restore_params(best);
            }
            self.advance_phase();
        }
        Ok(())
    }

    /// Trains only the discriminator on fixed features from the frozen extractor.
    fn discriminator_epoch(&mut self) -> Result<()> {
        let train = self.data.train;
        let labels: Vec<RelationId> = train.iter().map(|p| p.label).collect();
        let sets = train
            .iter()
            .map(|p| self.data.path_set(p))
            .collect::<Result<Vec<_>>>()?;
        let mut rel_features = Vec::new();
        let mut path_features = Vec::new();
        let chunk = self.config.eval_chunk;
        for part in labels.chunks(chunk) {
            rel_features.push(self.state.model.infer(&[], part)?.relation_features);
        }
        for part in sets.chunks(chunk) {
            path_features.push(self.state.model.infer(part, &[])?.path_features);
        }
        let d_f = self.state.model.config.d_f;
        let flatten = |parts: Vec<Tensor>| -> Vec<f64> { parts.into_iter().flat_map(|t| t.into_data()).collect() };
        let rel_features = flatten(rel_features);
        let path_features = flatten(path_features);

        let ids = self.state.model.group(ParamGroup::Discriminator);
        for batch in self.composer()? {
            let mut rows = Vec::with_capacity(self.config.batch_size * d_f);
            for &i in &batch.relation {
                rows.extend_from_slice(&rel_features[i * d_f..(i + 1) * d_f]);
            }
            for &i in &batch.path {
                rows.extend_from_slice(&path_features[i * d_f..(i + 1) * d_f]);
            }
            let sources: Vec<crate::coupled::Source> =
                std::iter::repeat_n(crate::coupled::Source::Relation, batch.relation.len())
                    .chain(std::iter::repeat_n(crate::coupled::Source::Path, batch.path.len()))
                    .collect();
            let model = &self.state.model;
            let mut tape = Tape::new();
            let head = model.discriminator.bind(&mut tape, &model.store);
            let f = tape.constant(Tensor::from_vec(sources.len(), d_f, rows)?);
            let probs = crate::coupled::discriminate(&mut tape, f, &head, 0.0)?;
            let l_d = crate::coupled::discriminator_loss(&mut tape, probs, &sources)?;
            let reg = crate::coupled::l2_frobenius_reg(&mut tape, &[head])?;
            let terms = crate::coupled::LossTerms {
                discriminator: Some(l_d),
                regularization: Some(reg),
                ..Default::default()
            };
            let (loss, breakdown) = crate::coupled::total_loss(&mut tape, terms, &self.config.weights)?;
            let acc = crate::model::source_accuracy(tape.value(probs), &sources);
            self.state.model.store.zero_grads();
            tape.backward(loss, &mut self.state.model.store)?;
            if let Err(e) = sgd_momentum_step(
                &mut self.state.model.store,
                &ids,
                self.config.pretrain_lr,
                self.config.momentum,
            ) {
                return Err(self.diverged(e.to_string()));
            }
            self.state.iteration += 1;
            let row = LogRow {
                phase: Phase::Discriminator,
                iter: self.state.iteration,
                epoch: self.state.epoch,
                loss: breakdown,
                lambda: 0.0,
                lr: self.config.pretrain_lr,
                disc_acc: Some(acc),
            };
            self.record(row)?;
        }
        self.state.epoch += 1;
        let acc = self.heldout_disc_accuracy()?;
        self.record_epoch(EpochSummary {
            phase: Phase::Discriminator,
            epoch: self.state.epoch,
            valid_mr: None,
            valid_hits1: None,
            heldout_disc_acc: acc,
        })?;
        if self.state.epoch >= self.config.disc_pretrain_epochs {
            self.advance_phase();
        }
        Ok(())
    }

    /// Training progress `n_c / (epochs * N_s)`.
    pub fn progress(&self) -> f64 {
        self.state.samples_seen as f64 / (self.config.epochs as f64 * self.data.train.len() as f64)
    }

    fn joint_epoch(&mut self) -> Result<()> {
        let groups = [
            ParamGroup::Encoder,
            ParamGroup::Extractor,
            ParamGroup::Classifier,
            ParamGroup::Discriminator,
        ];
        for batch in self.composer()? {
            let prog = self.progress();
            let lambda = self
                .config
                .fixed_lambda
                .unwrap_or_else(|| lambda_schedule(prog, self.config.gamma));
            let lr = lr_schedule(prog, self.config.gamma, self.config.lr_base);
            let opts = ForwardOptions {
                lambda,
                classify_relations: true,
                classify_paths: self.config.classifier_sources == ClassifierSources::Both,
                discriminate: true,
                sparsity: true,
                regularize: true,
                weights: self.config.weights,
            };
            let row = self.step(&batch, &opts, lr, &groups)?;
            self.state.samples_seen += batch.relation.len() as u64;
            self.record(row)?;
        }
        self.state.epoch += 1;
        let metrics = self.valid_metrics()?;
        let acc = self.heldout_disc_accuracy()?;
        self.record_epoch(EpochSummary {
            phase: Phase::Joint,
            epoch: self.state.epoch,
            valid_mr: metrics.map(|m| m.mean_rank),
            valid_hits1: metrics.map(|m| m.hits_at_1),
            heldout_disc_acc: acc,
        })?;
        if self.state.epoch >= self.config.epochs {
            self.advance_phase();
        }
        Ok(())
    }
}

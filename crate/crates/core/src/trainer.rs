//! Contrastive pretraining, freeze-masked fine-tuning and the supervised
//! baseline, with epoch-level checkpointing and deterministic replay.
//!
//! Every random draw comes from a stream keyed by the run seed: `shuffle`
//! by epoch, `augment` by epoch and window id, `dropout` by epoch and batch.
//! Replaying a run from a checkpoint therefore draws exactly what the
//! uninterrupted run would have drawn.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::{make_views, AugmentConfig};
use crate::cka::{ActivationDump, LayerActivations};
use crate::container::sha256_hex;
use crate::dataio::Dataset;
use crate::diffcore::{ops, Mode, Tape, Tensor};
use crate::error::{Error, Result};
use crate::fairmetrics::PredictionTable;
use crate::models::{
    attach_head, build_encoder, Checkpoint, EncoderSpec, FreezeMask, HeadSpec, ModelParams, Provenance,
};
use crate::objectives::{cross_entropy, nt_xent, ContrastiveConfig, EmbeddingBatch, OptimizerConfig, OptimizerState};
use crate::rng::{SeedTree, AUGMENT, DROPOUT, SHUFFLE};

/// Windows per inference batch in [`predict`] and [`activation_dump`].
const INFER_BATCH: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Workflow {
    Pretrain,
    Finetune { mask: FreezeMask },
    Supervised,
}

impl Workflow {
    pub fn name(&self) -> &'static str {
        match self {
            Workflow::Pretrain => "pretrain",
            Workflow::Finetune { .. } => "finetune",
            Workflow::Supervised => "supervised",
        }
    }
}

/// One training run. `batch_size` counts positive pairs when pretraining
/// and windows otherwise; `epochs` is also the cosine schedule length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub workflow: Workflow,
    pub encoder: EncoderSpec,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub augment: AugmentConfig,
    pub contrastive: ContrastiveConfig,
    pub seed: u64,
}

impl RunConfig {
    /// SGD with cosine decay over 200 epochs, 128 pairs per batch.
    pub fn pretrain(seed: u64) -> Self {
        RunConfig {
            workflow: Workflow::Pretrain,
            encoder: EncoderSpec::default(),
            epochs: 200,
            batch_size: 128,
            optimizer: OptimizerConfig::sgd_cosine(0.1, 200),
            augment: AugmentConfig::default(),
            contrastive: ContrastiveConfig::default(),
            seed,
        }
    }

    /// Adadelta at learning rate 0.03 for 100 epochs.
    pub fn finetune(mask: FreezeMask, seed: u64) -> Self {
        RunConfig {
            workflow: Workflow::Finetune { mask },
            epochs: 100,
            batch_size: 128,
            optimizer: OptimizerConfig::adadelta(0.03),
            ..Self::pretrain(seed)
        }
    }

    /// The fine-tuning recipe applied to a freshly initialized encoder.
    pub fn supervised(seed: u64) -> Self {
        RunConfig {
            workflow: Workflow::Supervised,
            ..Self::finetune(FreezeMask::TRAINABLE, seed)
        }
    }

    /// Sets the epoch count, keeping a cosine schedule's length in step.
    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        if let OptimizerConfig::SgdCosine { total_epochs, .. } = &mut self.optimizer {
            *total_epochs = epochs;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.optimizer.validate()?;
        self.augment.validate()?;
        self.contrastive.validate()?;
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.workflow == Workflow::Pretrain && self.batch_size < 2 {
            return Err(Error::Config(format!(
                "contrastive batches need at least 2 pairs for negatives, got batch size {}",
                self.batch_size
            )));
        }
        if let OptimizerConfig::SgdCosine { total_epochs, .. } = self.optimizer {
            if total_epochs != self.epochs {
                return Err(Error::Config(format!(
                    "cosine schedule spans {total_epochs} epochs but the run trains {}",
                    self.epochs
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    /// Window-weighted mean batch loss.
    pub loss: f64,
    pub lr: f64,
}

pub fn loss_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,loss,lr\n");
    for e in log {
        out.push_str(&format!("{},{:.8},{:.8}\n", e.epoch, e.loss, e.lr));
    }
    out
}

/// Summary written next to a run's checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub workflow: String,
    pub config: RunConfig,
    pub seed: u64,
    pub run_hash: String,
    pub data_hash: String,
    pub train_windows: usize,
    pub epochs_completed: usize,
    pub final_loss: Option<f64>,
    pub parameter_count: usize,
    pub trainable_parameter_count: usize,
    /// `(layer, sha256)` of every layer after training.
    pub layer_digests: Vec<(String, String)>,
}

/// SHA-256 over window ids, window values, labels and attribute values.
pub fn data_hash(data: &Dataset, indices: &[usize]) -> String {
    let mut bytes = Vec::new();
    for &i in indices {
        bytes.extend_from_slice(&data.ids[i].to_le_bytes());
        for v in data.window(i) {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(l) = data.labels() {
            bytes.push(l[i]);
        }
        for col in data.all_attribute_values() {
            bytes.extend_from_slice(col[i].as_bytes());
            bytes.push(0);
        }
    }
    sha256_hex(&bytes)
}

/// Identity of a run: its configuration and training data.
pub fn run_hash(cfg: &RunConfig, data: &Dataset, indices: &[usize]) -> Result<String> {
    let mut bytes = serde_json::to_vec(cfg)?;
    bytes.extend_from_slice(data_hash(data, indices).as_bytes());
    Ok(sha256_hex(&bytes))
}

/// A run in progress. `checkpoint` always reflects the last completed epoch.
#[derive(Debug)]
pub struct Trainer<'d> {
    cfg: RunConfig,
    data: &'d Dataset,
    indices: Vec<usize>,
    seeds: SeedTree,
    params: ModelParams<f32>,
    optimizer: OptimizerState<f32>,
    epochs_completed: usize,
    run_hash: String,
    log: Vec<EpochLog>,
}

impl<'d> Trainer<'d> {
    fn start(cfg: RunConfig, data: &'d Dataset, indices: &[usize], params: ModelParams<f32>) -> Result<Self> {
        cfg.validate()?;
        if indices.is_empty() {
            return Err(Error::Config(format!("{} needs a non-empty training split", cfg.workflow.name())));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= data.len()) {
            return Err(Error::Data(format!("training index {bad} out of range for {} windows", data.len())));
        }
        if cfg.workflow != Workflow::Pretrain {
            data.require_labels()?;
        }
        if cfg.workflow == Workflow::Pretrain && indices.len() < 2 {
            return Err(Error::Config("contrastive pretraining needs at least 2 windows".into()));
        }
        let optimizer = OptimizerState::new(cfg.optimizer, &params.tensors(), &params.trainable_flags())?;
        Ok(Trainer {
            run_hash: run_hash(&cfg, data, indices)?,
            seeds: SeedTree::new(cfg.seed),
            cfg,
            data,
            indices: indices.to_vec(),
            params,
            optimizer,
            epochs_completed: 0,
            log: Vec::new(),
        })
    }

    /// Fresh encoder with a projection head.
    pub fn pretrain(cfg: RunConfig, data: &'d Dataset, indices: &[usize]) -> Result<Self> {
        if cfg.workflow != Workflow::Pretrain {
            return Err(Error::Config(format!("pretrain called with a {} config", cfg.workflow.name())));
        }
        let encoder = build_encoder(&cfg.encoder, data.geometry(), cfg.seed)?;
        let head = HeadSpec::projection().with_input_width(cfg.encoder.representation_dim());
        let mut params = attach_head(encoder, &head, cfg.seed)?;
        params.provenance = Provenance::Pretrained;
        Self::start(cfg, data, indices, params)
    }

    /// Pretrained encoder with a fresh classification head, frozen per the
    /// config's mask.
    pub fn finetune(cfg: RunConfig, data: &'d Dataset, indices: &[usize], pretrained: &Checkpoint) -> Result<Self> {
        let Workflow::Finetune { mask } = cfg.workflow else {
            return Err(Error::Config(format!("finetune called with a {} config", cfg.workflow.name())));
        };
        if pretrained.params.provenance != Provenance::Pretrained {
            return Err(Error::IncompatibleCheckpoint(format!(
                "fine-tuning needs a pretrained checkpoint, got {:?}",
                pretrained.params.provenance
            )));
        }
        pretrained.ensure_compatible(&cfg.encoder, data.geometry())?;
        let head = HeadSpec::classification().with_input_width(cfg.encoder.representation_dim());
        let mut params = attach_head(pretrained.params.clone(), &head, cfg.seed)?.apply_freeze(mask);
        params.provenance = Provenance::FineTuned;
        params.seed = cfg.seed;
        Self::start(cfg, data, indices, params)
    }

    /// Fresh encoder with a classification head, trained end to end.
    pub fn supervised(cfg: RunConfig, data: &'d Dataset, indices: &[usize]) -> Result<Self> {
        if cfg.workflow != Workflow::Supervised {
            return Err(Error::Config(format!("supervised training called with a {} config", cfg.workflow.name())));
        }
        let encoder = build_encoder(&cfg.encoder, data.geometry(), cfg.seed)?;
        let head = HeadSpec::classification().with_input_width(cfg.encoder.representation_dim());
        let mut params = attach_head(encoder, &head, cfg.seed)?;
        params.provenance = Provenance::Supervised;
        Self::start(cfg, data, indices, params)
    }

    /// Continues from a checkpoint written by a run with the same config and
    /// training data. `log` is the loss log of the epochs already done.
    pub fn resume(
        cfg: RunConfig,
        data: &'d Dataset,
        indices: &[usize],
        checkpoint: Checkpoint,
        log: Vec<EpochLog>,
    ) -> Result<Self> {
        let expected = run_hash(&cfg, data, indices)?;
        if checkpoint.run_hash.as_deref() != Some(expected.as_str()) {
            return Err(Error::IncompatibleCheckpoint(
                "checkpoint was written by a run with a different config or training data".into(),
            ));
        }
        let optimizer = checkpoint
            .optimizer
            .ok_or_else(|| Error::IncompatibleCheckpoint("checkpoint carries no optimizer state".into()))?;
        checkpoint.params.encoder.check_geometry(data.geometry())?;
        let mut t = Self::start(cfg, data, indices, checkpoint.params)?;
        t.optimizer = optimizer;
        t.epochs_completed = checkpoint.epochs_completed;
        t.log = log;
        Ok(t)
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ModelParams<f32> {
        &self.params
    }

    pub fn log(&self) -> &[EpochLog] {
        &self.log
    }

    pub fn epochs_completed(&self) -> usize {
        self.epochs_completed
    }

    pub fn run_hash(&self) -> &str {
        &self.run_hash
    }

    pub fn is_finished(&self) -> bool {
        self.epochs_completed >= self.cfg.epochs
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            params: self.params.clone(),
            epochs_completed: self.epochs_completed,
            optimizer: Some(self.optimizer.clone()),
            run_hash: Some(self.run_hash.clone()),
        }
    }

    pub fn manifest(&self) -> RunManifest {
        RunManifest {
            workflow: self.cfg.workflow.name().into(),
            config: self.cfg.clone(),
            seed: self.cfg.seed,
            run_hash: self.run_hash.clone(),
            data_hash: data_hash(self.data, &self.indices),
            train_windows: self.indices.len(),
            epochs_completed: self.epochs_completed,
            final_loss: self.log.last().map(|e| e.loss),
            parameter_count: self.params.parameter_count(),
            trainable_parameter_count: self.params.trainable_parameter_count(),
            layer_digests: self.params.layers.iter().map(|l| (l.name.clone(), l.digest())).collect(),
        }
    }

    /// Trains one epoch.
    pub fn run_epoch(&mut self) -> Result<EpochLog> {
        if self.is_finished() {
            return Err(Error::ScheduleExhausted {
                step: self.epochs_completed,
                total: self.cfg.epochs,
            });
        }
        let epoch = self.epochs_completed;
        let lr = self.optimizer.learning_rate()?;
        let mut order = self.indices.clone();
        order.shuffle(&mut self.seeds.stream(SHUFFLE, &[epoch as u64]));

        let (mut total, mut weight) = (0.0, 0usize);
        for (b, chunk) in order.chunks(self.cfg.batch_size).enumerate() {
            let contrastive = self.cfg.workflow == Workflow::Pretrain;
            if contrastive && chunk.len() < 2 {
                continue;
            }
            let loss = self.step(epoch, b, chunk, contrastive)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch: epoch + 1, loss });
            }
            total += loss * chunk.len() as f64;
            weight += chunk.len();
        }
        let loss = total / weight as f64;
        let params_finite = self.params.tensors().iter().all(|t| t.is_finite());
        if !loss.is_finite() || !params_finite {
            return Err(Error::Diverged { epoch: epoch + 1, loss });
        }
        self.optimizer.end_epoch();
        self.epochs_completed += 1;
        let entry = EpochLog { epoch: epoch + 1, loss, lr };
        log::debug!("{} epoch {}: loss {:.6} lr {:.6}", self.cfg.workflow.name(), entry.epoch, loss, lr);
        self.log.push(entry);
        Ok(entry)
    }

    /// Trains until `epochs` epochs are complete (capped at the config's).
    pub fn run_until(&mut self, epochs: usize) -> Result<()> {
        while self.epochs_completed < epochs.min(self.cfg.epochs) {
            self.run_epoch()?;
        }
        Ok(())
    }

    pub fn run(&mut self) -> Result<()> {
        self.run_until(self.cfg.epochs)
    }

    /// One optimizer step on `chunk`; returns the batch loss.
    fn step(&mut self, epoch: usize, batch: usize, chunk: &[usize], contrastive: bool) -> Result<f64> {
        let input = if contrastive {
            let mut views = Vec::with_capacity(2 * chunk.len());
            for &i in chunk {
                let mut rng = self.seeds.stream(AUGMENT, &[epoch as u64, self.data.ids[i]]);
                let (a, b) = make_views(&self.data.window_tensor::<f32>(i), &self.cfg.augment, &mut rng)?;
                views.push(a);
                views.push(b);
            }
            Tensor::stack(&views.iter().collect::<Vec<_>>())?
        } else {
            self.data.batch::<f32>(chunk)
        };
        let mut dropout = self.seeds.stream(DROPOUT, &[epoch as u64, batch as u64]);

        let (loss, grads) = {
            let mut tape = Tape::new();
            let x = tape.constant_owned(input);
            let rec = self.params.record(&mut tape, x, Mode::Train, &mut dropout)?;
            let out = tape.value(rec.output);
            if !out.is_finite() {
                return Ok(f64::NAN);
            }
            let (loss, seed) = if contrastive {
                let r = nt_xent(&EmbeddingBatch::new(out.clone())?, &self.cfg.contrastive)?;
                (f64::from(r.loss), r.grad)
            } else {
                let labels = self.data.require_labels()?;
                let y: Vec<usize> = chunk.iter().map(|&i| usize::from(labels[i])).collect();
                let r = cross_entropy(out, &y)?;
                (f64::from(r.loss), r.grad)
            };
            let mut g = tape.backward(rec.output, seed)?;
            let grads: Vec<Option<Tensor<f32>>> =
                rec.params.iter().flat_map(|&(w, b)| [g.take(w), g.take(b)]).collect();
            (loss, grads)
        };
        let grad_refs: Vec<Option<&Tensor<f32>>> = grads.iter().map(Option::as_ref).collect();
        self.optimizer.step(&mut self.params.tensors_mut(), &grad_refs)?;
        Ok(loss)
    }

    pub fn finish(self) -> (Checkpoint, Vec<EpochLog>) {
        let ckpt = self.checkpoint();
        (ckpt, self.log)
    }
}

/// Runs a pretraining config to completion.
pub fn pretrain(cfg: RunConfig, data: &Dataset, indices: &[usize]) -> Result<(Checkpoint, Vec<EpochLog>)> {
    let mut t = Trainer::pretrain(cfg, data, indices)?;
    t.run()?;
    Ok(t.finish())
}

pub fn finetune(
    cfg: RunConfig,
    data: &Dataset,
    indices: &[usize],
    pretrained: &Checkpoint,
) -> Result<(Checkpoint, Vec<EpochLog>)> {
    let mut t = Trainer::finetune(cfg, data, indices, pretrained)?;
    t.run()?;
    Ok(t.finish())
}

pub fn train_supervised(cfg: RunConfig, data: &Dataset, indices: &[usize]) -> Result<(Checkpoint, Vec<EpochLog>)> {
    let mut t = Trainer::supervised(cfg, data, indices)?;
    t.run()?;
    Ok(t.finish())
}

fn check_input(params: &ModelParams<f32>, data: &Dataset, indices: &[usize]) -> Result<()> {
    if params.geometry != data.geometry() {
        return Err(Error::Data(format!(
            "model expects {}x{} windows, dataset has {}x{}",
            params.geometry.timesteps,
            params.geometry.channels,
            data.geometry().timesteps,
            data.geometry().channels
        )));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= data.len()) {
        return Err(Error::Data(format!("window index {bad} out of range for {} windows", data.len())));
    }
    Ok(())
}

/// Eval-mode class-1 probabilities for the windows `indices`.
pub fn predict(model: &str, params: &ModelParams<f32>, data: &Dataset, indices: &[usize]) -> Result<PredictionTable> {
    check_input(params, data, indices)?;
    if params.output_dim() != 2 {
        return Err(Error::Config(format!(
            "prediction needs a 2-class classification head, model outputs {} values",
            params.output_dim()
        )));
    }
    let labels = data.require_labels()?;
    let exact = params.cast::<f64>();
    let mut scores = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(INFER_BATCH) {
        let logits = exact.infer(&data.batch::<f64>(chunk))?;
        let probs = ops::softmax(&logits)?;
        scores.extend(probs.data().chunks_exact(2).map(|p| p[1]));
    }
    let names = data.attributes().iter().map(|a| a.name.clone()).collect();
    let attributes = data
        .all_attribute_values()
        .iter()
        .map(|col| indices.iter().map(|&i| col[i].clone()).collect())
        .collect();
    PredictionTable::new(
        model,
        indices.iter().map(|&i| data.ids[i]).collect(),
        scores,
        indices.iter().map(|&i| labels[i]).collect(),
        names,
        attributes,
    )
}

/// Eval-mode activations of every layer for the windows `indices`. Conv
/// outputs are flattened time-major.
pub fn activation_dump(model: &str, params: &ModelParams<f32>, data: &Dataset, indices: &[usize]) -> Result<ActivationDump> {
    check_input(params, data, indices)?;
    let names = params.activation_names();
    let mut layers: Vec<LayerActivations> = names
        .iter()
        .map(|n| LayerActivations { name: n.clone(), dim: 0, data: Vec::new() })
        .collect();
    let mut unused = SeedTree::new(0).stream("unused", &[]);
    for chunk in indices.chunks(INFER_BATCH) {
        let pass = params.forward(&data.batch::<f32>(chunk), Mode::Eval, &mut unused)?;
        for (layer, act) in layers.iter_mut().zip(&pass.activations) {
            layer.dim = act.len() / chunk.len();
            layer.data.extend_from_slice(act.data());
        }
    }
    ActivationDump::new(
        model,
        indices.iter().map(|&i| data.ids[i]).collect(),
        data.attributes().iter().map(|a| a.name.clone()).collect(),
        data.all_attribute_values()
            .iter()
            .map(|col| indices.iter().map(|&i| col[i].clone()).collect())
            .collect(),
        layers,
    )
}

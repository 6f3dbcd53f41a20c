//! Stage-wise fine-tuning.
//!
//! Stage 1 trains rank-16 adapters and a basic-emotion head on top of a
//! frozen backbone. [`transition`] folds those adapters into the backbone,
//! installs fresh rank-8 adapters and swaps in a compound-emotion head, and
//! stage 2 trains those. Backbone base weights never receive an update.

use std::collections::HashMap;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Matrix, Tape};
use crate::data::ExampleRecord;
use crate::error::{Error, Result};
use crate::model::{argmax, sgd_step, ClassifierNet, ParamId};
use crate::seed::{fisher_yates, sub_seed};

/// Update rule applied to the trainable tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    /// `p <- p - lr·g`, with optional classical momentum.
    Sgd,
    /// Bias-corrected Adam with betas (0.9, 0.999) and eps 1e-8.
    Adam,
}

impl std::str::FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::Adam),
            other => Err(Error::Contract(format!("unknown optimizer {other:?}"))),
        }
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Hyperparameters for one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub stage_id: u8,
    pub rank: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    /// Classical momentum coefficient for SGD; ignored by Adam.
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub label_set: Vec<String>,
    pub seed: u64,
}

impl StageConfig {
    /// Rank 16, lr 1e-4, 20 epochs, batch 1.
    pub fn stage1(label_set: Vec<String>, seed: u64) -> Self {
        Self {
            stage_id: 1,
            rank: 16,
            learning_rate: 1e-4,
            optimizer: Optimizer::Adam,
            momentum: 0.0,
            epochs: 20,
            batch_size: 1,
            label_set,
            seed,
        }
    }

    /// Rank 8, lr 1e-4, 10 epochs, batch 1.
    pub fn stage2(label_set: Vec<String>, seed: u64) -> Self {
        Self {
            stage_id: 2,
            rank: 8,
            learning_rate: 1e-4,
            optimizer: Optimizer::Adam,
            momentum: 0.0,
            epochs: 10,
            batch_size: 1,
            label_set,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.stage_id, 1 | 2) {
            return Err(Error::Contract(format!(
                "stage_id must be 1 or 2, got {}",
                self.stage_id
            )));
        }
        if self.rank == 0 {
            return Err(Error::Contract("rank must be positive".into()));
        }
        // Zero is allowed as a null-update configuration.
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Contract(format!("invalid learning rate {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Contract(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Contract("batch_size must be positive".into()));
        }
        crate::model::validate_labels(&self.label_set)
    }
}

/// Per-epoch training summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_accuracy: f64,
}

impl fmt::Display for TrainRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} loss={:.6} acc={:.4}",
            self.epoch, self.mean_loss, self.train_accuracy
        )
    }
}

impl TrainRecord {
    /// Parses a line produced by the `Display` impl.
    pub fn parse_log_line(line: &str) -> Option<TrainRecord> {
        let mut epoch = None;
        let mut loss = None;
        let mut acc = None;
        for field in line.split_whitespace() {
            let (k, v) = field.split_once('=')?;
            match k {
                "epoch" => epoch = v.parse().ok(),
                "loss" => loss = v.parse().ok(),
                "acc" => acc = v.parse().ok(),
                _ => return None,
            }
        }
        Some(TrainRecord {
            epoch: epoch?,
            mean_loss: loss?,
            train_accuracy: acc?,
        })
    }
}

/// Serializable position of the shuffle generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Shuffle generator for a stage, derived from the stage seed.
pub fn shuffle_rng(config: &StageConfig) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(sub_seed(config.seed, "shuffle"))
}

/// Runs one stage with the generator derived from `config.seed`.
pub fn run_stage(
    net: ClassifierNet,
    config: &StageConfig,
    data: &[ExampleRecord],
) -> Result<(ClassifierNet, Vec<TrainRecord>)> {
    let mut rng = shuffle_rng(config);
    run_stage_with_rng(net, config, data, &mut rng)
}

/// Trains adapters and head for `config.epochs` epochs, visiting examples in
/// a fresh seeded order each epoch.
pub fn run_stage_with_rng(
    mut net: ClassifierNet,
    config: &StageConfig,
    data: &[ExampleRecord],
    rng: &mut ChaCha8Rng,
) -> Result<(ClassifierNet, Vec<TrainRecord>)> {
    config.validate()?;
    if net.labels() != config.label_set.as_slice() {
        return Err(Error::State(format!(
            "network head is for {:?}, stage expects {:?}",
            net.labels(),
            config.label_set
        )));
    }
    let targets = data
        .iter()
        .map(|r| {
            if r.features.len() != net.d_in() {
                return Err(Error::Data(format!(
                    "record {}: {} features, network expects {}",
                    r.id,
                    r.features.len(),
                    net.d_in()
                )));
            }
            config.label_set.iter().position(|l| *l == r.label).ok_or_else(|| {
                Error::Data(format!(
                    "record {}: label {:?} is not in the stage label set",
                    r.id, r.label
                ))
            })
        })
        .collect::<Result<Vec<usize>>>()?;
    if config.epochs == 0 {
        return Ok((net, Vec::new()));
    }
    if data.is_empty() {
        return Err(Error::Data("no training examples".into()));
    }

    let mut opt = OptimizerState::new(config);
    let mut records = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut losses = vec![0.0; data.len()];
    for epoch in 1..=config.epochs {
        fisher_yates(&mut order, rng);
        let mut correct = 0usize;
        for batch in order.chunks(config.batch_size) {
            let mut summed: Vec<(ParamId, Matrix)> = Vec::new();
            for &idx in batch {
                let mut tape = Tape::new();
                let (logits, leaves) = net.forward_on_tape(&mut tape, &data[idx].features)?;
                if argmax(tape.value(logits).data()) == targets[idx] {
                    correct += 1;
                }
                let loss = tape.softmax_cross_entropy(logits, targets[idx])?;
                losses[idx] = tape.value(loss).get(0, 0);
                tape.backward(loss)?;
                let grads = leaves
                    .into_iter()
                    .filter(|(id, _)| net.is_trainable(*id))
                    .map(|(id, node)| (id, tape.grad(node).clone()));
                if summed.is_empty() {
                    summed = grads.collect();
                } else {
                    for ((_, acc), (_, g)) in summed.iter_mut().zip(grads) {
                        *acc = acc.add(&g)?;
                    }
                }
            }
            if batch.len() > 1 {
                let inv = 1.0 / batch.len() as f64;
                for (_, g) in &mut summed {
                    *g = g.scale(inv);
                }
            }
            opt.step(&mut net, summed)?;
        }
        // Summed in dataset order so the value does not depend on the shuffle.
        let mean_loss = losses.iter().sum::<f64>() / data.len() as f64;
        records.push(TrainRecord {
            epoch,
            mean_loss,
            train_accuracy: correct as f64 / data.len() as f64,
        });
    }
    Ok((net, records))
}

/// Per-tensor optimizer buffers for one stage.
struct OptimizerState {
    kind: Optimizer,
    lr: f64,
    momentum: f64,
    step: i32,
    first: HashMap<ParamId, Matrix>,
    second: HashMap<ParamId, Matrix>,
}

impl OptimizerState {
    fn new(config: &StageConfig) -> Self {
        Self {
            kind: config.optimizer,
            lr: config.learning_rate,
            momentum: config.momentum,
            step: 0,
            first: HashMap::new(),
            second: HashMap::new(),
        }
    }

    fn step(&mut self, net: &mut ClassifierNet, mut grads: Vec<(ParamId, Matrix)>) -> Result<()> {
        self.step = self.step.saturating_add(1);
        match self.kind {
            Optimizer::Sgd => {
                if self.momentum > 0.0 {
                    for (id, g) in &mut grads {
                        let v = self
                            .first
                            .entry(*id)
                            .or_insert_with(|| Matrix::zeros(g.rows(), g.cols()));
                        *v = v.scale(self.momentum).add(g)?;
                        *g = v.clone();
                    }
                }
            }
            Optimizer::Adam => {
                let c1 = 1.0 - ADAM_BETA1.powi(self.step);
                let c2 = 1.0 - ADAM_BETA2.powi(self.step);
                for (id, g) in &mut grads {
                    let m = self
                        .first
                        .entry(*id)
                        .or_insert_with(|| Matrix::zeros(g.rows(), g.cols()));
                    let v = self
                        .second
                        .entry(*id)
                        .or_insert_with(|| Matrix::zeros(g.rows(), g.cols()));
                    for ((mi, vi), gi) in m.data_mut().iter_mut().zip(v.data_mut()).zip(g.data_mut()) {
                        *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * *gi;
                        *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * *gi * *gi;
                        // The direction handed to the plain SGD update.
                        *gi = (*mi / c1) / ((*vi / c2).sqrt() + ADAM_EPS);
                    }
                }
            }
        }
        net.apply_gradients(&grads, self.lr)
    }
}

/// Base network plus fresh adapters and head for a first stage.
pub fn prepare_stage(d_in: usize, hidden: &[usize], config: &StageConfig, init_seed: u64) -> Result<ClassifierNet> {
    config.validate()?;
    let mut net = ClassifierNet::new(d_in, hidden, config.label_set.clone(), init_seed)?;
    net.attach_adapters(config.rank, sub_seed(config.seed, "lora"))?;
    net.swap_head(config.label_set.clone(), sub_seed(config.seed, "head"))?;
    Ok(net)
}

/// Merges the current adapters into the backbone, installs fresh adapters
/// of `stage2.rank`, and swaps the head to `stage2.label_set`.
pub fn transition(mut net: ClassifierNet, stage2: &StageConfig) -> Result<ClassifierNet> {
    stage2.validate()?;
    if !net.has_adapters() {
        return Err(Error::State(
            "transition requires a network with trained adapters".into(),
        ));
    }
    net.merge_adapters()?;
    net.attach_adapters(stage2.rank, sub_seed(stage2.seed, "lora"))?;
    net.swap_head(stage2.label_set.clone(), sub_seed(stage2.seed, "head"))?;
    Ok(net)
}

/// Freestanding SGD update over named tensors.
pub fn sgd_update(params: &mut [Matrix], grads: &[Matrix], lr: f64) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::dim("sgd_update", (params.len(), 1), (grads.len(), 1)));
    }
    for (p, g) in params.iter_mut().zip(grads) {
        sgd_step(p, g, lr)?;
    }
    Ok(())
}

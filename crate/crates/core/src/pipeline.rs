//! Stage orchestration shared by the command line and the test suites.
//!
//! A master seed fans out into named sub-seeds so each component can be
//! reproduced on its own.

use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{Checkpoint, StageSummary};
use crate::data::{generate, Manifest, Split, SynthData, SynthSpec};
use crate::error::{Error, Result};
use crate::eval::{end_to_end_eval, EvalReport};
use crate::model::DEFAULT_HIDDEN;
use crate::seed::sub_seed;
use crate::train::{prepare_stage, run_stage_with_rng, shuffle_rng, transition, RngState, StageConfig, TrainRecord};

/// Seeds derived from one master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seeds {
    pub data: u64,
    pub init: u64,
    pub stage1: u64,
    pub stage2: u64,
}

impl Seeds {
    pub fn from_master(seed: u64) -> Self {
        Self {
            data: sub_seed(seed, "data"),
            init: sub_seed(seed, "init"),
            stage1: sub_seed(seed, "stage1"),
            stage2: sub_seed(seed, "stage2"),
        }
    }
}

fn summary(config: &StageConfig, epochs: usize) -> StageSummary {
    StageSummary {
        stage_id: config.stage_id,
        rank: config.rank as u32,
        epochs: epochs as u32,
        learning_rate: config.learning_rate,
    }
}

fn train_records(manifest: &Manifest) -> Vec<crate::data::ExampleRecord> {
    manifest.split(Split::Train).cloned().collect()
}

fn check_manifest(manifest: &Manifest, config: &StageConfig) -> Result<()> {
    if manifest.labels != config.label_set {
        return Err(Error::Data(format!(
            "manifest labels {:?} differ from the stage label set {:?}",
            manifest.labels, config.label_set
        )));
    }
    Ok(())
}

fn train_from(
    net: crate::model::ClassifierNet,
    manifest: &Manifest,
    config: &StageConfig,
    mut rng: ChaCha8Rng,
    mut history: Vec<StageSummary>,
) -> Result<(Checkpoint, Vec<TrainRecord>)> {
    let (net, log) = run_stage_with_rng(net, config, &train_records(manifest), &mut rng)?;
    history.push(summary(config, config.epochs));
    Ok((
        Checkpoint {
            stage_id: config.stage_id,
            net,
            rng: RngState::capture(&rng),
            history,
        },
        log,
    ))
}

/// Fresh backbone plus stage adapters and head, trained on the train split.
/// Also used with a stage-2 config for the single-stage baseline.
pub fn train_fresh(
    manifest: &Manifest,
    config: &StageConfig,
    init_seed: u64,
) -> Result<(Checkpoint, Vec<TrainRecord>)> {
    check_manifest(manifest, config)?;
    let net = prepare_stage(manifest.dimension, &DEFAULT_HIDDEN, config, init_seed)?;
    train_from(net, manifest, config, shuffle_rng(config), Vec::new())
}

/// Merges a stage-1 checkpoint into its backbone and attaches the stage-2
/// adapters and head, without training.
pub fn transition_checkpoint(ckpt: Checkpoint, config: &StageConfig) -> Result<Checkpoint> {
    if ckpt.stage_id != 1 || config.stage_id != 2 {
        return Err(Error::State(format!(
            "transition goes from a stage-1 checkpoint to stage 2, got stage {} to stage {}",
            ckpt.stage_id, config.stage_id
        )));
    }
    let net = transition(ckpt.net, config)?;
    let mut history = ckpt.history;
    history.push(summary(config, 0));
    Ok(Checkpoint {
        stage_id: 2,
        net,
        rng: RngState::capture(&shuffle_rng(config)),
        history,
    })
}

/// Stage-2 training from a checkpoint. A stage-1 checkpoint is transitioned
/// first; a stage-2 checkpoint continues with its stored generator.
pub fn train_second_stage(
    ckpt: Checkpoint,
    manifest: &Manifest,
    config: &StageConfig,
) -> Result<(Checkpoint, Vec<TrainRecord>)> {
    check_manifest(manifest, config)?;
    if config.stage_id != 2 {
        return Err(Error::Contract("second stage needs a stage-2 config".into()));
    }
    let ckpt = match ckpt.stage_id {
        1 => transition_checkpoint(ckpt, config)?,
        2 => ckpt,
        other => return Err(Error::State(format!("unexpected checkpoint stage {other}"))),
    };
    if ckpt.net.adapter_rank().is_none() {
        return Err(Error::State("stage-2 checkpoint carries no adapters".into()));
    }
    let mut history = ckpt.history;
    // The transition entry is folded into the trained stage.
    if history.last().is_some_and(|h| h.stage_id == 2 && h.epochs == 0) {
        history.pop();
    }
    train_from(ckpt.net, manifest, config, ckpt.rng.restore(), history)
}

/// Outcome of the stage-wise versus single-stage comparison.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub data: SynthData,
    pub stage1: Checkpoint,
    pub stage1_log: Vec<TrainRecord>,
    pub staged: Checkpoint,
    pub staged_log: Vec<TrainRecord>,
    pub baseline: Checkpoint,
    pub baseline_log: Vec<TrainRecord>,
    pub basic_report: EvalReport,
    pub staged_report: EvalReport,
    pub baseline_report: EvalReport,
}

/// Synthesizes data from `master`, runs both stages with default configs,
/// and trains a single-stage baseline on compound labels for the combined
/// epoch budget with the same seeds.
pub fn run_experiment(master: u64, synth: &SynthSpec) -> Result<Experiment> {
    let seeds = Seeds::from_master(master);
    let data = generate(&SynthSpec {
        seed: seeds.data,
        ..synth.clone()
    })?;
    let s1 = StageConfig::stage1(data.basic.labels.clone(), seeds.stage1);
    let s2 = StageConfig::stage2(data.compound.labels.clone(), seeds.stage2);
    let (stage1, stage1_log) = train_fresh(&data.basic, &s1, seeds.init)?;
    let basic_report = end_to_end_eval(&stage1, &data.basic, None)?;
    let (staged, staged_log) = train_second_stage(stage1.clone(), &data.compound, &s2)?;
    let staged_report = end_to_end_eval(&staged, &data.compound, None)?;
    let baseline_cfg = StageConfig {
        epochs: s1.epochs + s2.epochs,
        ..s2.clone()
    };
    let (baseline, baseline_log) = train_fresh(&data.compound, &baseline_cfg, seeds.init)?;
    let baseline_report = end_to_end_eval(&baseline, &data.compound, None)?;
    Ok(Experiment {
        data,
        stage1,
        stage1_log,
        staged,
        staged_log,
        baseline,
        baseline_log,
        basic_report,
        staged_report,
        baseline_report,
    })
}

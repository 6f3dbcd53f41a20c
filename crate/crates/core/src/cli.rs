//! The `slra` command line.

use std::ffi::OsString;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::data::{generate, read_manifest, write_manifest, Manifest, SynthSpec};
use crate::error::{Error, Result};
use crate::eval::{end_to_end_eval, parse_csv_table, render_table, report_from_rows, TableFormat};
use crate::io::write_atomic;
use crate::labels::category_set;
use crate::parser::{parse, parse_lenient};
use crate::pipeline::{train_fresh, train_second_stage, transition_checkpoint, Seeds};
use crate::prompt::{attach, build_prompt, PromptSpec};
use crate::train::{Optimizer, StageConfig, TrainRecord};

pub const EXIT_IO: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_STATE: u8 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "slra",
    version,
    about = "Stage-wise LoRA training and evaluation on synthetic expression data"
)]
pub struct Cli {
    /// Master seed; named sub-seeds are derived from it.
    #[arg(long, global = true, env = "SLRA_SEED", default_value_t = 0)]
    seed: u64,

    /// Suppress per-epoch log lines.
    #[arg(long, short, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate basic and compound manifests.
    Synth(SynthArgs),
    /// Train one stage and write a checkpoint.
    Train(TrainArgs),
    /// Merge stage-1 adapters and prepare a stage-2 checkpoint.
    Transition(TransitionArgs),
    /// Evaluate a checkpoint on the test split of a manifest.
    Eval(EvalArgs),
    /// Print the context prompt for a category set.
    Prompt(PromptArgs),
    /// Parse a response transcript read from standard input.
    Parse(ParseArgs),
    /// Re-render a CSV accuracy table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0.05)]
    sigma: f64,
    #[arg(long, default_value_t = 100)]
    per_class: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct Hyper {
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// sgd or adam.
    #[arg(long)]
    optimizer: Option<Optimizer>,
    #[arg(long)]
    momentum: Option<f64>,
}

impl Hyper {
    fn apply(&self, mut c: StageConfig) -> StageConfig {
        c.rank = self.rank.unwrap_or(c.rank);
        c.learning_rate = self.lr.unwrap_or(c.learning_rate);
        c.epochs = self.epochs.unwrap_or(c.epochs);
        c.batch_size = self.batch_size.unwrap_or(c.batch_size);
        c.optimizer = self.optimizer.unwrap_or(c.optimizer);
        c.momentum = self.momentum.unwrap_or(c.momentum);
        c
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    stage: u8,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    from_checkpoint: Option<PathBuf>,
    /// Train stage 2 from scratch (ablation only).
    #[arg(long)]
    allow_singlestage: bool,
    #[command(flatten)]
    hyper: Hyper,
}

#[derive(Debug, Args)]
struct TransitionArgs {
    #[arg(long)]
    from_checkpoint: PathBuf,
    /// Compound manifest providing the stage-2 label set.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    rank: Option<usize>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "text")]
    format: TableFormat,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Route predictions through this prompt spec's template and the parser.
    #[arg(long, conflicts_with = "via_prompt")]
    prompt_spec: Option<PathBuf>,
    /// Same as --prompt-spec with the standard spec for the checkpoint labels.
    #[arg(long)]
    via_prompt: bool,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false, id = "source")]
struct CategorySource {
    /// basic, compound, or challenge.
    #[arg(long, group = "source")]
    categories: Option<String>,
    /// JSON prompt spec file.
    #[arg(long, group = "source")]
    spec: Option<PathBuf>,
}

impl CategorySource {
    fn load(&self) -> Result<PromptSpec> {
        match (&self.categories, &self.spec) {
            (Some(set), _) => PromptSpec::for_categories(&named_set(set)?),
            (None, Some(path)) => read_prompt_spec(path),
            (None, None) => unreachable!("clap enforces the group"),
        }
    }
}

#[derive(Debug, Args)]
struct PromptArgs {
    #[command(flatten)]
    source: CategorySource,
    /// Emit a JSON inference request for this image reference.
    #[arg(long)]
    image: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ParseArgs {
    #[command(flatten)]
    source: CategorySource,
    #[arg(long)]
    lenient: bool,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "text")]
    format: TableFormat,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn named_set(name: &str) -> Result<Vec<String>> {
    category_set(name).ok_or_else(|| {
        Error::Contract(format!(
            "unknown category set {name:?}; use basic, compound or challenge"
        ))
    })
}

fn read_prompt_spec(path: &Path) -> Result<PromptSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let spec: PromptSpec = serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    spec.validate()?;
    Ok(spec)
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        ))
    }
}

fn require_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() && !p.is_dir() => Err(Error::io(
            p,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such directory"),
        )),
        _ => Ok(()),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn log_epochs(quiet: bool, log: &[TrainRecord]) {
    if !quiet {
        for r in log {
            eprintln!("{r}");
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Contract(_) => EXIT_USAGE,
        Error::State(_) => EXIT_STATE,
        Error::Io { .. } => EXIT_IO,
        Error::Dimension { .. }
        | Error::Index { .. }
        | Error::Data(_)
        | Error::Compatibility(_)
        | Error::Checkpoint(_)
        | Error::Manifest(_) => EXIT_DATA,
    }
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    let seeds = Seeds::from_master(cli.seed);
    match &cli.command {
        Command::Synth(a) => synth(a, seeds),
        Command::Train(a) => train(a, seeds, cli.quiet),
        Command::Transition(a) => transition(a, seeds),
        Command::Eval(a) => eval(a),
        Command::Prompt(a) => prompt(a),
        Command::Parse(a) => parse_stdin(a),
        Command::Report(a) => report(a),
    }
}

fn synth(a: &SynthArgs, seeds: Seeds) -> Result<()> {
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    let data = generate(&SynthSpec {
        d_in: a.dim,
        noise_sigma: a.sigma,
        examples_per_class: a.per_class,
        seed: seeds.data,
        ..SynthSpec::default()
    })?;
    write_manifest(&data.basic, &a.out_dir.join("basic.jsonl"))?;
    write_manifest(&data.compound, &a.out_dir.join("compound.jsonl"))?;
    Ok(())
}

fn train(a: &TrainArgs, seeds: Seeds, quiet: bool) -> Result<()> {
    require_file(&a.manifest)?;
    if let Some(p) = &a.from_checkpoint {
        require_file(p)?;
    }
    require_parent(&a.out)?;
    let manifest = read_manifest(&a.manifest)?;
    let (ckpt, log) = match (a.stage, &a.from_checkpoint) {
        (1, Some(_)) => {
            return Err(Error::State(
                "stage 1 starts from the base network; drop --from-checkpoint".into(),
            ));
        }
        (1, None) => {
            let cfg = a
                .hyper
                .apply(StageConfig::stage1(manifest.labels.clone(), seeds.stage1));
            train_fresh(&manifest, &cfg, seeds.init)?
        }
        (_, Some(path)) => {
            let cfg = a
                .hyper
                .apply(StageConfig::stage2(manifest.labels.clone(), seeds.stage2));
            train_second_stage(load_checkpoint(path)?, &manifest, &cfg)?
        }
        (_, None) if a.allow_singlestage => {
            let cfg = a
                .hyper
                .apply(StageConfig::stage2(manifest.labels.clone(), seeds.stage2));
            train_fresh(&manifest, &cfg, seeds.init)?
        }
        (_, None) => {
            return Err(Error::State(
                "stage 2 needs a stage-1 checkpoint (--from-checkpoint); use --allow-singlestage for the ablation"
                    .into(),
            ));
        }
    };
    log_epochs(quiet, &log);
    save_checkpoint(&ckpt, &a.out)
}

fn transition(a: &TransitionArgs, seeds: Seeds) -> Result<()> {
    require_file(&a.from_checkpoint)?;
    require_file(&a.manifest)?;
    require_parent(&a.out)?;
    let manifest: Manifest = read_manifest(&a.manifest)?;
    let mut cfg = StageConfig::stage2(manifest.labels.clone(), seeds.stage2);
    cfg.rank = a.rank.unwrap_or(cfg.rank);
    let ckpt = transition_checkpoint(load_checkpoint(&a.from_checkpoint)?, &cfg)?;
    save_checkpoint(&ckpt, &a.out)
}

fn eval(a: &EvalArgs) -> Result<()> {
    require_file(&a.checkpoint)?;
    require_file(&a.manifest)?;
    if let Some(p) = &a.out {
        require_parent(p)?;
    }
    let ckpt: Checkpoint = load_checkpoint(&a.checkpoint)?;
    let manifest = read_manifest(&a.manifest)?;
    let spec = match (&a.prompt_spec, a.via_prompt) {
        (Some(p), _) => Some(read_prompt_spec(p)?),
        (None, true) => Some(PromptSpec::for_categories(ckpt.labels())?),
        (None, false) => None,
    };
    let report = end_to_end_eval(&ckpt, &manifest, spec.as_ref())?;
    emit(a.out.as_deref(), &render_table(&report, a.format))
}

fn prompt(a: &PromptArgs) -> Result<()> {
    let text = build_prompt(&a.source.load()?)?;
    let out = match &a.image {
        Some(image) => attach(&text, image)?.to_json() + "\n",
        None => text,
    };
    emit(a.out.as_deref(), &out)
}

fn parse_stdin(a: &ParseArgs) -> Result<()> {
    let categories = a.source.load()?.category_names();
    let mut transcript = String::new();
    std::io::stdin()
        .read_to_string(&mut transcript)
        .map_err(|e| Error::io("<stdin>", e))?;
    let parsed = if a.lenient {
        parse_lenient(&transcript, &categories)
    } else {
        parse(&transcript, &categories)
    }
    .map_err(|e| Error::Data(e.to_string()))?;
    let line = serde_json::to_string(&parsed).expect("verdict serializes");
    emit(None, &(line + "\n"))
}

fn report(a: &ReportArgs) -> Result<()> {
    require_file(&a.input)?;
    let text = std::fs::read_to_string(&a.input).map_err(|e| Error::io(&a.input, e))?;
    let report = report_from_rows(&parse_csv_table(&text)?)?;
    emit(a.out.as_deref(), &render_table(&report, a.format))
}

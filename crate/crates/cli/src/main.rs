use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use spdf_core::data::{pack, Vocabulary};
use spdf_core::flops::{
    combined_pipeline_flops, format_table, solve_seq_len, total_training_flops, FlopQuery,
    FlopReport, PipelineReport,
};
use spdf_core::harness::{
    check_vocab, corpus_documents, experiment_spdf, preset, resolve_vocab, task_split,
    ExperimentConfig, Manifest, RunConfig, Task,
};
use spdf_core::metrics::score_run;
use spdf_core::model::{GptModel, ModelConfig};
use spdf_core::sparsity::{apply_masks, build_masks, mask_stats, SparsityPlan};
use spdf_core::train::{finetune, pretrain, Checkpoint, JsonlSink, PretrainStart};

/// Models above this many parameters need `--i-know-this-is-huge` to train.
const HUGE_PARAMS: usize = 50_000_000;

#[derive(Parser)]
#[command(
    name = "spdf",
    version,
    about = "Sparse pre-training and dense fine-tuning of small GPT models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sparse pre-training from scratch or from a checkpoint.
    Pretrain(PretrainArgs),
    /// Fine-tune a pre-trained checkpoint on a synthetic task.
    Finetune(FinetuneArgs),
    /// Score a checkpoint on the test split of a task.
    Eval(EvalArgs),
    /// Analytic training FLOPs.
    Flops(FlopsArgs),
    /// Per-matrix sparsity of a checkpoint or of a fresh initialization.
    MaskStats(MaskStatsArgs),
    /// Sparse pre-training then dense and sparse fine-tuning over sparsities and seeds.
    Experiment(ExperimentArgs),
    /// Learn a vocabulary and pack the pre-training corpus.
    Tokenize(TokenizeArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Model preset used when no config file is given.
    #[arg(long, default_value = "toy-small")]
    preset: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PretrainArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    sparsity: Option<f64>,
    /// Pre-training token budget.
    #[arg(long)]
    tokens: Option<u64>,
    #[arg(long)]
    max_steps: Option<u64>,
    /// Continue from this checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Allow training full-size models.
    #[arg(long)]
    i_know_this_is_huge: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    DataToText,
    Summarization,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::DataToText => Task::DataToText,
            TaskArg::Summarization => Task::Summarization,
        }
    }
}

#[derive(Args)]
struct FinetuneArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Pre-trained checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Vocabulary file; defaults to the one next to the checkpoint's run directory.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, value_enum)]
    task: Option<TaskArg>,
    /// Keep the pre-training masks instead of densifying.
    #[arg(long)]
    sparse: bool,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, value_enum)]
    task: Option<TaskArg>,
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct FlopsArgs {
    /// Preset name or a JSON model config file.
    #[arg(long)]
    model: String,
    #[arg(long, default_value_t = 0.0)]
    sparsity: f64,
    /// Defaults to the model context window.
    #[arg(long)]
    seq_len: Option<u64>,
    /// Defaults to the preset token budget divided by the sequence length, or 1.
    #[arg(long)]
    sequences: Option<f64>,
    #[arg(long, requires = "finetune_sequences")]
    finetune_seq_len: Option<u64>,
    /// Choose the fine-tuning sequence length whose per-sequence FLOPs are closest to this.
    #[arg(
        long,
        conflicts_with = "finetune_seq_len",
        requires = "finetune_sequences"
    )]
    finetune_flops_per_seq: Option<f64>,
    #[arg(long)]
    finetune_sequences: Option<f64>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct MaskStatsArgs {
    #[arg(long, conflicts_with_all = ["preset", "sparsity"])]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    sparsity: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ExperimentArgs {
    /// JSON experiment configuration; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',')]
    sparsities: Option<Vec<f64>>,
    #[arg(long, default_value = "runs/experiment")]
    out: PathBuf,
}

#[derive(Args)]
struct TokenizeArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Directory of .txt files; the synthetic corpus is used otherwise.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Print the token ids of this text with the resulting vocabulary.
    #[arg(long)]
    encode: Option<String>,
}

/// Errors reported with exit status 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UsageError(String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Pretrain(a) => cmd_pretrain(a),
        Command::Finetune(a) => cmd_finetune(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Flops(a) => cmd_flops(a),
        Command::MaskStats(a) => cmd_mask_stats(a),
        Command::Experiment(a) => cmd_experiment(a),
        Command::Tokenize(a) => cmd_tokenize(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if e.is::<UsageError>() { 2 } else { 1 })
        }
    }
}

fn read_config_file(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read config file {}: {e}", path.display())))
}

fn run_config(args: &RunArgs) -> anyhow::Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::from_json(&read_config_file(p)?)
            .with_context(|| format!("invalid config {}", p.display()))?,
        None => RunConfig::from_preset(&args.preset, Path::new("runs/default"), 0)
            .map_err(|e| usage(e.to_string()))?,
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(o) = &args.out {
        cfg.out_dir = o.clone();
    }
    Ok(cfg)
}

fn write_report<R: Serialize>(dir: &Path, text: &str, value: &R) -> anyhow::Result<()> {
    std::fs::write(dir.join("report.txt"), text)?;
    std::fs::write(
        dir.join("report.json"),
        serde_json::to_string_pretty(value)?,
    )?;
    Ok(())
}

/// Writes the effective config and its manifest into the run directory.
fn start_run(
    cmd: &str,
    cfg: &RunConfig,
    inputs: Vec<String>,
) -> anyhow::Result<(PathBuf, Manifest)> {
    let dir = cfg.out_dir.clone();
    std::fs::create_dir_all(dir.join("checkpoints"))?;
    std::fs::write(dir.join("config.json"), cfg.to_json())?;
    let mut manifest = Manifest::new(cmd, cfg.seed, cfg)?;
    manifest.inputs = inputs;
    manifest.write(&dir)?;
    Ok((dir, manifest))
}

fn finish_run(dir: &Path, mut manifest: Manifest, outputs: &[&str]) -> anyhow::Result<()> {
    manifest.outputs = outputs.iter().map(|s| s.to_string()).collect();
    manifest.write(dir)?;
    Ok(())
}

#[derive(Serialize)]
struct PretrainSummary {
    steps: u64,
    tokens_seen: u64,
    final_loss: Option<f64>,
    mask_sparsity: Option<f64>,
    seconds: f64,
}

fn cmd_pretrain(a: PretrainArgs) -> anyhow::Result<()> {
    let mut cfg = run_config(&a.run)?;
    if let Some(s) = a.sparsity {
        cfg.pretrain.sparsity = s;
    }
    if let Some(t) = a.tokens {
        cfg.pretrain.token_budget = t;
        cfg.pretrain.schedule.total_tokens = t;
        cfg.pretrain.schedule.warmup_tokens = cfg.pretrain.schedule.warmup_tokens.min(t);
    }
    if a.max_steps.is_some() {
        cfg.pretrain.max_steps = a.max_steps;
    }
    let from_full_size_preset =
        a.run.config.is_none() && preset(&a.run.preset).is_ok_and(|p| p.flops_only);
    if (from_full_size_preset || cfg.model.param_count() > HUGE_PARAMS) && !a.i_know_this_is_huge {
        return Err(usage(format!(
            "refusing to pre-train a {}-parameter model; use `flops` for full-size presets or pass --i-know-this-is-huge",
            cfg.model.param_count()
        )));
    }
    cfg.pretrain.checkpoint_dir = Some(cfg.out_dir.join("checkpoints"));
    cfg.validate()?;
    let inputs = a.resume.iter().map(|p| p.display().to_string()).collect();
    let (dir, manifest) = start_run("pretrain", &cfg, inputs)?;

    let docs = corpus_documents(&cfg.data)?;
    let vocab = resolve_vocab(&cfg.data, &cfg.model, &docs)?;
    std::fs::write(dir.join("vocab.json"), vocab.to_json())?;
    let data = pack(&vocab, &docs, cfg.model.context_window)?;
    let start = match &a.resume {
        Some(p) => {
            let c = Checkpoint::load(p).with_context(|| format!("loading {}", p.display()))?;
            if c.model.config() != &cfg.model {
                bail!("checkpoint model config differs from the run config");
            }
            PretrainStart::Resume(Box::new(c))
        }
        None => PretrainStart::Fresh(cfg.model.clone()),
    };
    let t0 = Instant::now();
    let mut sink = JsonlSink::append(&dir.join("metrics.log"))?;
    eprintln!(
        "pre-training {} parameters at sparsity {} on {} sequences of {} tokens",
        cfg.model.param_count(),
        cfg.pretrain.sparsity,
        data.len(),
        data.seq_len
    );
    let ckpt = pretrain(&cfg.pretrain_plan(), start, &data, &mut sink)?;
    let log = std::fs::read_to_string(dir.join("metrics.log"))?;
    let final_loss = log
        .lines()
        .last()
        .and_then(|l| serde_json::from_str::<spdf_core::train::MetricRecord>(l).ok())
        .and_then(|r| r.train_loss);
    let summary = PretrainSummary {
        steps: ckpt.step(),
        tokens_seen: ckpt.tokens_seen(),
        final_loss,
        mask_sparsity: ckpt.masks.as_ref().map(|m| mask_stats(m).overall_sparsity),
        seconds: t0.elapsed().as_secs_f64(),
    };
    let text = format!(
        "steps {}\ntokens {}\nfinal loss {}\nmask sparsity {}\nseconds {:.1}\n",
        summary.steps,
        summary.tokens_seen,
        summary.final_loss.map_or("-".into(), |l| format!("{l:.4}")),
        summary
            .mask_sparsity
            .map_or("-".into(), |s| format!("{s:.4}")),
        summary.seconds
    );
    print!("{text}");
    write_report(&dir, &text, &summary)?;
    finish_run(
        &dir,
        manifest,
        &[
            "config.json",
            "vocab.json",
            "metrics.log",
            "checkpoints/last.ckpt",
            "report.txt",
            "report.json",
        ],
    )
}

fn load_vocab(
    explicit: Option<&Path>,
    cfg: &RunConfig,
    checkpoint: &Path,
) -> anyhow::Result<Vocabulary> {
    let path = explicit
        .map(Path::to_path_buf)
        .or_else(|| cfg.data.vocab_path.clone())
        .or_else(|| {
            checkpoint
                .parent()
                .and_then(Path::parent)
                .map(|d| d.join("vocab.json"))
        })
        .context("no vocabulary given")?;
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("reading vocabulary {}", path.display()))?;
    Ok(Vocabulary::from_json(&text)?)
}

#[derive(Serialize)]
struct FinetuneSummary {
    task: Task,
    densified: bool,
    best_epoch: usize,
    best_val_loss: f64,
    early_stopped: bool,
    history: Vec<spdf_core::train::EvalPoint>,
}

fn cmd_finetune(a: FinetuneArgs) -> anyhow::Result<()> {
    let mut cfg = run_config(&a.run)?;
    if let Some(t) = a.task {
        cfg.data.task = t.into();
    }
    if a.sparse {
        cfg.finetune.densify_on_finetune = false;
    }
    if let Some(e) = a.epochs {
        cfg.finetune.epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.finetune.optimizer.peak_lr = lr;
    }
    let vocab = load_vocab(a.vocab.as_deref(), &cfg, &a.checkpoint)?;
    let ckpt = Checkpoint::load(&a.checkpoint)
        .with_context(|| format!("loading {}", a.checkpoint.display()))?;
    cfg.model = ckpt.model.config().clone();
    cfg.finetune.checkpoint_dir = Some(cfg.out_dir.join("checkpoints"));
    cfg.validate()?;
    check_vocab(&vocab, &cfg.model)?;
    let (dir, manifest) = start_run("finetune", &cfg, vec![a.checkpoint.display().to_string()])?;
    std::fs::write(dir.join("vocab.json"), vocab.to_json())?;

    let split = task_split(&cfg.data, &vocab)?;
    let mut sink = JsonlSink::append(&dir.join("metrics.log"))?;
    let out = finetune(
        &cfg.finetune_plan(),
        ckpt,
        &split.data,
        vocab.pad_id(),
        None,
        &mut sink,
    )?;
    let best_val_loss = out
        .history
        .iter()
        .map(|p| p.val_loss)
        .fold(f64::INFINITY, f64::min);
    let summary = FinetuneSummary {
        task: cfg.data.task,
        densified: cfg.finetune.densify_on_finetune,
        best_epoch: out.best_epoch,
        best_val_loss,
        early_stopped: out.early_stopped,
        history: out.history,
    };
    let mut text = format!(
        "task {:?}\ndensified {}\nbest epoch {}\nbest validation loss {:.4}\nearly stopped {}\n",
        summary.task,
        summary.densified,
        summary.best_epoch,
        summary.best_val_loss,
        summary.early_stopped
    );
    for p in &summary.history {
        text += &format!(
            "epoch {} step {} val_loss {:.4}\n",
            p.epoch, p.step, p.val_loss
        );
    }
    print!("{text}");
    write_report(&dir, &text, &summary)?;
    finish_run(
        &dir,
        manifest,
        &[
            "config.json",
            "vocab.json",
            "metrics.log",
            "checkpoints/best.ckpt",
            "checkpoints/last.ckpt",
            "report.txt",
            "report.json",
        ],
    )
}

fn cmd_eval(a: EvalArgs) -> anyhow::Result<()> {
    let mut cfg = run_config(&a.run)?;
    if let Some(t) = a.task {
        cfg.data.task = t.into();
    }
    if let Some(b) = a.beam {
        cfg.generation.beam_size = b;
    }
    let vocab = load_vocab(a.vocab.as_deref(), &cfg, &a.checkpoint)?;
    let ckpt = Checkpoint::load(&a.checkpoint)
        .with_context(|| format!("loading {}", a.checkpoint.display()))?;
    cfg.model = ckpt.model.config().clone();
    check_vocab(&vocab, &cfg.model)?;
    let (dir, manifest) = start_run("eval", &cfg, vec![a.checkpoint.display().to_string()])?;
    let split = task_split(&cfg.data, &vocab)?;
    let report = score_run(
        &ckpt.model,
        ckpt.masks.as_ref(),
        &vocab,
        &split.test_cases,
        &split.test_examples,
        &cfg.generation,
    )?;
    let text = report.to_text();
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{text}");
    }
    write_report(&dir, &text, &report)?;
    finish_run(
        &dir,
        manifest,
        &["config.json", "report.txt", "report.json"],
    )
}

fn flops_model(spec: &str) -> anyhow::Result<(ModelConfig, Option<f64>)> {
    if let Ok(p) = preset(spec) {
        return Ok((p.model.clone(), Some(p.train_tokens as f64)));
    }
    let path = Path::new(spec);
    if !path.exists() {
        return Err(usage(format!(
            "{spec:?} is neither a preset nor a model config file"
        )));
    }
    let cfg: ModelConfig = serde_json::from_str(&read_config_file(path)?)
        .with_context(|| format!("invalid model config {}", path.display()))?;
    cfg.validate()?;
    Ok((cfg, None))
}

#[derive(Serialize)]
#[serde(untagged)]
enum FlopsOutput {
    Single(FlopReport),
    Pipeline(PipelineReport),
}

fn cmd_flops(a: FlopsArgs) -> anyhow::Result<()> {
    let (model, budget) = flops_model(&a.model)?;
    let seq_len = a.seq_len.unwrap_or(model.context_window as u64);
    let sequences = a
        .sequences
        .unwrap_or_else(|| budget.map_or(1.0, |t| t / seq_len as f64));
    let pre = FlopQuery::new(model.clone(), a.sparsity, seq_len, sequences);
    let ft_seq_len = match (a.finetune_seq_len, a.finetune_flops_per_seq) {
        (Some(t), _) => Some(t),
        (None, Some(target)) => Some(solve_seq_len(&model, target)?),
        (None, None) => None,
    };
    let output = match (ft_seq_len, a.finetune_sequences) {
        (Some(t), Some(n)) => {
            let ft = FlopQuery::new(model, 0.0, t, n);
            FlopsOutput::Pipeline(combined_pipeline_flops(&pre, &ft)?)
        }
        (None, Some(_)) => {
            return Err(usage(
                "--finetune-sequences needs a fine-tuning sequence length",
            ))
        }
        _ => FlopsOutput::Single(total_training_flops(&pre)?),
    };
    if a.json {
        println!("{}", serde_json::to_string_pretty(&output)?);
        return Ok(());
    }
    match &output {
        FlopsOutput::Single(r) => print!("{}", format_table(&[(a.model.as_str(), r)])),
        FlopsOutput::Pipeline(p) => {
            print!(
                "{}",
                format_table(&[("pre-train", &p.pretrain), ("fine-tune", &p.finetune)])
            );
            println!("fine-tune sequence length {}", p.finetune.seq_len);
            println!(
                "total {:.3e}  dense baseline {:.3e}  speedup {:.3}x",
                p.total_flops, p.dense_baseline_flops, p.speedup
            );
        }
    }
    Ok(())
}

fn cmd_mask_stats(a: MaskStatsArgs) -> anyhow::Result<()> {
    let masks = match (&a.checkpoint, &a.preset) {
        (Some(p), _) => Checkpoint::load(p)
            .with_context(|| format!("loading {}", p.display()))?
            .masks
            .context("checkpoint has no masks (dense or already densified)")?,
        (None, Some(name)) => {
            let p = preset(name).map_err(|e| usage(e.to_string()))?;
            if p.model.param_count() > HUGE_PARAMS {
                return Err(usage(format!(
                    "preset {name} is too large to initialize here"
                )));
            }
            let mut model = GptModel::<f32>::init(&p.model, a.seed)?;
            let plan = SparsityPlan::uniform(&model, a.sparsity.unwrap_or(0.0))?;
            let masks = build_masks(&model, &plan, a.seed)?;
            apply_masks(&mut model, &masks)?;
            masks
        }
        (None, None) => return Err(usage("give --checkpoint or --preset")),
    };
    let report = mask_stats(&masks);
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{}", report.to_text());
    }
    Ok(())
}

fn cmd_experiment(a: ExperimentArgs) -> anyhow::Result<()> {
    let mut cfg = match &a.config {
        Some(p) => serde_json::from_str::<ExperimentConfig>(&read_config_file(p)?)
            .with_context(|| format!("invalid experiment config {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = a.seeds {
        cfg.seeds = s;
    }
    if let Some(s) = a.sparsities {
        cfg.sparsities = s;
    }
    cfg.validate()?;
    let dir = a.out;
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(&cfg)?)?;
    let manifest = Manifest::new("experiment", cfg.seeds.first().copied().unwrap_or(0), &cfg)?;
    manifest.write(&dir)?;
    let mut log = std::fs::File::create(dir.join("metrics.log"))?;
    let t0 = Instant::now();
    let mut progress = |msg: &str| {
        use std::io::Write;
        let line = serde_json::json!({"seconds": t0.elapsed().as_secs_f64(), "message": msg});
        let _ = writeln!(log, "{line}");
        eprintln!("[{:>5.0}s] {msg}", t0.elapsed().as_secs_f64());
    };
    let report = experiment_spdf(&cfg, &mut progress)?;
    let text = report.to_text();
    print!("{text}");
    write_report(&dir, &text, &report)?;
    finish_run(
        &dir,
        manifest,
        &["config.json", "metrics.log", "report.txt", "report.json"],
    )
}

fn cmd_tokenize(a: TokenizeArgs) -> anyhow::Result<()> {
    let mut cfg = run_config(&a.run)?;
    if let Some(c) = &a.corpus {
        cfg.data.corpus_dir = Some(c.clone());
    }
    let (dir, manifest) = start_run(
        "tokenize",
        &cfg,
        cfg.data
            .corpus_dir
            .iter()
            .map(|p| p.display().to_string())
            .collect(),
    )?;
    let docs = corpus_documents(&cfg.data)?;
    let vocab = resolve_vocab(&cfg.data, &cfg.model, &docs)?;
    std::fs::write(dir.join("vocab.json"), vocab.to_json())?;
    let data = pack(&vocab, &docs, cfg.model.context_window)?;
    data.save(&dir.join("corpus.bin"))?;
    let text = format!(
        "documents {}\nvocabulary {} tokens ({})\npacked {} sequences of {} tokens, {} tokens total\n",
        docs.len(),
        vocab.vocab_size(),
        vocab.hash(),
        data.len(),
        data.seq_len,
        data.total_tokens()
    );
    print!("{text}");
    if let Some(t) = &a.encode {
        let ids = vocab.encode(t);
        println!(
            "{}",
            ids.iter()
                .map(|i| i.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        );
    }
    let summary = serde_json::json!({
        "documents": docs.len(),
        "vocab_size": vocab.vocab_size(),
        "vocab_hash": vocab.hash(),
        "sequences": data.len(),
        "seq_len": data.seq_len,
        "total_tokens": data.total_tokens(),
    });
    write_report(&dir, &text, &summary)?;
    finish_run(
        &dir,
        manifest,
        &[
            "config.json",
            "vocab.json",
            "corpus.bin",
            "report.txt",
            "report.json",
        ],
    )
}

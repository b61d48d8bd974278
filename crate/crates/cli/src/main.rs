use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use unicr_core::corpus::{generate_synthetic, load_corpus, write_corpus, Grounding, SynthConfig};
use unicr_core::eval::{
    ablation_run, evaluate, k_sweep, k_sweep_eval_only, pool_size_sweep, EvalSettings, MetricsReport, Protocol,
    Variant, DEFAULT_KS, DEFAULT_POOL_SIZES,
};
use unicr_core::trainer::{train, Checkpoint, Schedule};
use unicr_core::{ContextMode, Corpus, LossConfig, Regime, TaskKind, TrainConfig};

#[derive(Parser)]
#[command(name = "unicr", version, about = "Universal conversational retrieval: data, training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus as JSON lines.
    GenData(GenData),
    /// Train a model and write a checkpoint.
    Train(TrainCmd),
    /// Evaluate a checkpoint.
    Eval(EvalCmd),
    /// Evaluate a checkpoint over several pool sizes.
    SweepPool(SweepPool),
    /// Compare top-K history selection for several K against no previous sessions.
    SweepK(SweepK),
    /// Train and evaluate ablation variants.
    Ablate(Ablate),
}

#[derive(Args)]
struct GenData {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 40)]
    topics: usize,
    #[arg(long, default_value_t = 8)]
    facets: usize,
    #[arg(long, default_value_t = 1000)]
    dialogues_per_task: usize,
    #[arg(long, default_value_t = 3)]
    sessions: usize,
    /// User/system turn pairs per session.
    #[arg(long, default_value_t = 2)]
    turns: usize,
    #[arg(long, default_value_t = 600)]
    vocab_size: usize,
    /// Draw labels independently of the text (a chance-level corpus).
    #[arg(long)]
    independent: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Adaptive,
    FullConcat,
    NoPrev,
    MeanPool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScheduleArg {
    Constant,
    LinearDecay,
}

#[derive(Args, Clone)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// full, persona, knowledge or response.
    #[arg(long, default_value = "full")]
    regime: String,
    #[arg(long, value_enum, default_value = "adaptive")]
    mode: ModeArg,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long)]
    no_pair: bool,
    #[arg(long)]
    no_hist: bool,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value_t = 1e-2)]
    lr: f64,
    #[arg(long, value_enum, default_value = "constant")]
    schedule: ScheduleArg,
    #[arg(long, default_value_t = 0.0)]
    weight_decay: f64,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    /// Fraction of dialogues held out for evaluation.
    #[arg(long, default_value_t = 0.1)]
    holdout: f64,
    #[arg(long)]
    no_positions: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl TrainArgs {
    fn config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch,
            learning_rate: self.lr,
            schedule: match self.schedule {
                ScheduleArg::Constant => Schedule::Constant,
                ScheduleArg::LinearDecay => Schedule::LinearDecay,
            },
            mode: mode(self.mode, self.k),
            loss: LossConfig {
                gamma: self.gamma,
                use_hist: !self.no_hist,
                use_pair: !self.no_pair,
            },
            regime: self.regime.parse::<Regime>()?,
            seed: self.seed,
            dim: self.dim,
            weight_decay: self.weight_decay,
            holdout: self.holdout,
            positions: !self.no_positions,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn mode(m: ModeArg, k: usize) -> ContextMode {
    match m {
        ModeArg::Adaptive => ContextMode::Adaptive { k },
        ModeArg::FullConcat => ContextMode::FullConcat,
        ModeArg::NoPrev => ContextMode::NoPrev,
        ModeArg::MeanPool => ContextMode::MeanPool,
    }
}

#[derive(Args)]
struct TrainCmd {
    #[command(flatten)]
    train: TrainArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    /// Evaluate one task; all tasks when omitted.
    #[arg(long)]
    task: Option<TaskKind>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Context mode override; defaults to the checkpoint's training mode.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Evaluate on every example instead of the held-out split.
    #[arg(long)]
    all_examples: bool,
}

#[derive(Args)]
struct EvalCmd {
    #[command(flatten)]
    eval: EvalArgs,
    #[arg(long, default_value_t = 64)]
    pool_size: usize,
    /// Accepted for compatibility; output is always JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct SweepPool {
    #[command(flatten)]
    eval: EvalArgs,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_POOL_SIZES)]
    sizes: Vec<usize>,
}

#[derive(Args)]
struct SweepK {
    #[command(flatten)]
    train: TrainArgs,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_KS)]
    ks: Vec<usize>,
    #[arg(long, default_value_t = 64)]
    pool_size: usize,
    #[arg(long, default_value_t = 0)]
    eval_seed: u64,
    /// Evaluate this checkpoint under each mode instead of retraining per mode.
    #[arg(long)]
    ckpt: Option<PathBuf>,
}

#[derive(Args)]
struct Ablate {
    #[command(flatten)]
    train: TrainArgs,
    #[arg(long, value_delimiter = ',', default_value = "full,no_context_enc,no_pair,no_hist")]
    variants: Vec<String>,
    /// Training seeds; overrides --seed.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
    #[arg(long, default_value_t = 64)]
    pool_size: usize,
    #[arg(long, default_value_t = 0)]
    eval_seed: u64,
}

fn load(path: &PathBuf) -> Result<Corpus> {
    load_corpus(path).with_context(|| format!("loading corpus {}", path.display()))
}

fn load_ckpt(path: &PathBuf) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn emit(value: &Value) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn reports(rs: &[MetricsReport]) -> Result<Value> {
    Ok(serde_json::to_value(rs)?)
}

fn eval_examples(corpus: &Corpus, ck: &Checkpoint, all: bool) -> Vec<usize> {
    if all {
        (0..corpus.examples().len()).collect()
    } else {
        corpus.split_examples(ck.config.holdout).1
    }
}

fn gen_data(a: GenData) -> Result<Value> {
    let cfg = SynthConfig {
        topics: a.topics,
        facets: a.facets,
        dialogues_per_task: a.dialogues_per_task,
        sessions_per_dialogue: a.sessions,
        turns_per_session: a.turns,
        vocab_size: a.vocab_size,
        grounding: if a.independent {
            Grounding::Independent
        } else {
            Grounding::Grounded
        },
        ..SynthConfig::default()
    };
    let corpus = generate_synthetic(&cfg, a.seed)?;
    let file = File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_corpus(&corpus, BufWriter::new(file))?;
    Ok(json!({
        "out": a.out,
        "dialogues": corpus.dialogues().len(),
        "examples": corpus.examples().len(),
        "candidates": TaskKind::ALL.map(|t| corpus.pool(t).len()).iter().sum::<usize>(),
        "config": cfg,
        "seed": a.seed,
    }))
}

fn train_cmd(a: TrainCmd) -> Result<Value> {
    let corpus = load(&a.train.corpus)?;
    let cfg = a.train.config()?;
    let (ck, history) = train(&corpus, &cfg)?;
    ck.save(&a.out).with_context(|| format!("writing checkpoint {}", a.out.display()))?;
    Ok(json!({
        "checkpoint": a.out,
        "steps": history.len(),
        "first_loss": history.first(),
        "final_loss": history.last(),
        "config": cfg,
    }))
}

fn eval_settings(e: &EvalArgs, ck: &Checkpoint, task: TaskKind, pool_size: usize) -> EvalSettings {
    EvalSettings {
        task,
        pool_size,
        seed: e.seed,
        mode: e.mode.map_or(ck.config.mode, |m| mode(m, e.k)),
    }
}

fn eval_cmd(a: EvalCmd) -> Result<Value> {
    let corpus = load(&a.eval.corpus)?;
    let ck = load_ckpt(&a.eval.ckpt)?;
    let examples = eval_examples(&corpus, &ck, a.eval.all_examples);
    let tasks = a.eval.task.map_or(TaskKind::ALL.to_vec(), |t| vec![t]);
    let mut out = Vec::new();
    for task in tasks {
        let mut r = evaluate(&corpus, &ck.model, &examples, &eval_settings(&a.eval, &ck, task, a.pool_size))?;
        r.config.train = Some(ck.config.clone());
        out.push(r);
    }
    if a.eval.task.is_some() {
        Ok(serde_json::to_value(&out[0])?)
    } else {
        reports(&out)
    }
}

fn sweep_pool(a: SweepPool) -> Result<Value> {
    let corpus = load(&a.eval.corpus)?;
    let ck = load_ckpt(&a.eval.ckpt)?;
    let examples = eval_examples(&corpus, &ck, a.eval.all_examples);
    let tasks = a.eval.task.map_or(TaskKind::ALL.to_vec(), |t| vec![t]);
    let mut out = Vec::new();
    for task in tasks {
        let settings = eval_settings(&a.eval, &ck, task, 2);
        out.extend(pool_size_sweep(&corpus, &ck.model, &examples, &settings, &a.sizes)?);
    }
    for r in &mut out {
        r.config.train = Some(ck.config.clone());
    }
    reports(&out)
}

fn sweep_k(a: SweepK) -> Result<Value> {
    let corpus = load(&a.train.corpus)?;
    let base = a.train.config()?;
    let proto = Protocol {
        pool_size: a.pool_size,
        eval_seed: a.eval_seed,
        ..Protocol::default()
    };
    let out = match &a.ckpt {
        Some(path) => {
            let ck = load_ckpt(path)?;
            let test = corpus.split_examples(ck.config.holdout).1;
            k_sweep_eval_only(&corpus, &ck.model, &test, &a.ks, &proto)?
        }
        None => k_sweep(&corpus, &base, &a.ks, &proto)?,
    };
    reports(&out)
}

fn ablate(a: Ablate) -> Result<Value> {
    let corpus = load(&a.train.corpus)?;
    let base = a.train.config()?;
    let variants = a
        .variants
        .iter()
        .map(|v| v.parse::<Variant>())
        .collect::<Result<Vec<_>, _>>()?;
    if variants.is_empty() || a.seeds.is_empty() {
        bail!("at least one variant and one seed are required");
    }
    let proto = Protocol {
        pool_size: a.pool_size,
        eval_seed: a.eval_seed,
        ..Protocol::default()
    };
    reports(&ablation_run(&corpus, &base, &variants, &a.seeds, &proto)?)
}

fn run(cli: Cli) -> Result<Value> {
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::SweepPool(a) => sweep_pool(a),
        Command::SweepK(a) => sweep_k(a),
        Command::Ablate(a) => ablate(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli).and_then(|v| emit(&v)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

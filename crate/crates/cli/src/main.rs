//! `genomesynth` command-line entry point.
//!
//! Exit codes: 0 success, 1 stage failure, 2 configuration or usage error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use genomesynth::attack::AttackKind;
use genomesynth::dp::LrSchedule;
use genomesynth::features::FeatureMode;
use genomesynth::pipeline::config::{AttackSection, DpSection, GenerateSection, ModelSection, TrainSection};
use genomesynth::pipeline::{
    make_demo_dataset, run_pipeline, stage_seed, stages, DemoSpec, PipelineConfig, PipelineError, RunOptions, Stage,
    SEED_ENV,
};
use genomesynth::synthesis::PromptSource;
use genomesynth::transformer::Preset;
use genomesynth::utility::ChromosomeBounds;

#[derive(Parser, Debug)]
#[command(name = "genomesynth", version, about = "Synthetic mutation profiles and membership-inference audits")]
struct Cli {
    /// Global seed; each stage derives its own seed from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel sections (default: all cores). Results are
    /// reproducible for a fixed seed and worker count.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Log verbosity; repeat for more.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse a VCF into corpus files, one sample per line.
    Ingest(IngestArgs),
    /// Train the byte-level BPE tokenizer on a corpus.
    Tokenize(TokenizeArgs),
    /// Train the language model, optionally with DP-SGD.
    Train(TrainArgs),
    /// Sample a synthetic cohort from a trained model.
    Generate(GenerateArgs),
    /// Score a synthetic cohort against the training data.
    Utility(UtilityArgs),
    /// Run the multi-round membership-inference experiment.
    Attack(AttackArgs),
    /// Run every stage from a TOML config, reusing up-to-date artifacts.
    Pipeline(PipelineArgs),
    /// Write the seeded demonstration VCF.
    DemoData(DemoArgs),
}

#[derive(Args, Debug)]
struct IngestArgs {
    #[arg(long)]
    vcf: PathBuf,
    /// Corpus output; holds the training part when a holdout is written.
    #[arg(long)]
    out: PathBuf,
    /// Also write a disjoint holdout corpus here.
    #[arg(long)]
    holdout: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    holdout_fraction: f64,
    /// Keep homozygous-reference calls as mutations.
    #[arg(long)]
    include_ref_gt: bool,
    /// Skip malformed records instead of failing.
    #[arg(long)]
    lenient: bool,
}

#[derive(Args, Debug)]
struct TokenizeArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 2048)]
    vocab_size: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PresetArg {
    Tiny,
    Mingpt12m,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Tiny => Preset::Tiny,
            PresetArg::Mingpt12m => Preset::MinGpt12M,
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    tokenizer: PathBuf,
    #[arg(long, value_enum, default_value_t = PresetArg::Tiny)]
    preset: PresetArg,
    #[arg(long)]
    max_seq_len: Option<usize>,
    #[arg(long)]
    d_ff: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    /// Decay the learning rate linearly to this fraction of its initial value.
    #[arg(long)]
    lr_final_fraction: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    momentum: f64,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, default_value_t = 100)]
    eval_every: usize,
    /// Plain mode: stop once the corpus loss falls below this value.
    #[arg(long)]
    stop_below_loss: Option<f64>,
    /// Train with DP-SGD.
    #[arg(long)]
    dp: bool,
    /// Target ε; training halts before exceeding it.
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
    #[arg(long, default_value_t = 1e-5)]
    delta: f64,
    #[arg(long, default_value_t = 1.0)]
    clip_norm: f64,
    /// Calibrated from ε, δ, lot size and steps when omitted.
    #[arg(long)]
    noise_multiplier: Option<f64>,
    #[arg(long, default_value_t = 8)]
    lot_size: usize,
    /// Checkpoint output; `<out>.loss_history.csv` and `<out>.train.json` are written next to it.
    #[arg(long)]
    out: PathBuf,
    /// Directory for intermediate checkpoints at the eval cadence.
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PromptMode {
    RandomTrain,
    PerTarget,
    Fixed,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    tokenizer: PathBuf,
    /// Training corpus the prompts are drawn from.
    #[arg(long)]
    train_corpus: PathBuf,
    #[arg(long, default_value_t = 50)]
    n: usize,
    #[arg(long, value_enum, default_value_t = PromptMode::RandomTrain)]
    prompt_mode: PromptMode,
    /// Prompt mutation for `--prompt-mode fixed`.
    #[arg(long)]
    prompt: Option<String>,
    #[arg(long, default_value_t = 256)]
    max_new_tokens: usize,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long, default_value_t = 50)]
    top_k: usize,
    /// Cohort output; the raw generations go to `<out stem>.generation.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct UtilityArgs {
    #[arg(long)]
    cohort: PathBuf,
    #[arg(long)]
    train_corpus: PathBuf,
    /// Bounds file, or a preset name (grch37, grch38).
    #[arg(long)]
    bounds: String,
    #[arg(long)]
    benchmark_vcf: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AttackMode {
    /// Model features only.
    Mia,
    /// Model and genomic features.
    Bihmia,
    /// Both, paired on identical rounds.
    Both,
}

#[derive(Args, Debug)]
struct AttackArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    tokenizer: PathBuf,
    #[arg(long)]
    train_corpus: PathBuf,
    #[arg(long)]
    holdout_corpus: PathBuf,
    #[arg(long, value_enum, default_value_t = AttackMode::Both)]
    mode: AttackMode,
    #[arg(long, default_value_t = 5)]
    rounds: usize,
    #[arg(long, default_value_t = 50)]
    cohort_size: usize,
    /// Comma-separated subset of threshold, logreg, rf, knn.
    #[arg(long, value_delimiter = ',')]
    attacks: Option<Vec<String>>,
    #[arg(long, default_value_t = 256)]
    max_new_tokens: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PipelineArgs {
    /// TOML config; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the artifact directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Comma-separated stages to run (default: all).
    #[arg(long, value_delimiter = ',')]
    stages: Option<Vec<String>>,
    /// Rerun this stage and everything downstream of it; repeatable.
    #[arg(long)]
    force: Vec<String>,
    /// Print the effective config as TOML and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Args, Debug)]
struct DemoArgs {
    #[arg(long, default_value_t = 60)]
    samples: usize,
    #[arg(long, default_value_t = 300)]
    variants: usize,
    #[arg(long)]
    chrom: Option<String>,
    #[arg(long)]
    min_pos: Option<u64>,
    #[arg(long)]
    max_pos: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

fn seed_of(cli: &Cli) -> Result<u64> {
    if let Some(s) = cli.seed {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| PipelineError::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")).into()),
        Err(_) => Ok(0),
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    PipelineError::Config(msg.into()).into()
}

fn run(cli: Cli) -> Result<()> {
    let seed = seed_of(&cli)?;
    match cli.command {
        Command::DemoData(a) => {
            let d = DemoSpec::default();
            let spec = DemoSpec {
                n_samples: a.samples,
                n_variants: a.variants,
                seed,
                chrom: a.chrom.unwrap_or(d.chrom.clone()),
                min_pos: a.min_pos.unwrap_or(d.min_pos),
                max_pos: a.max_pos.unwrap_or(d.max_pos),
                ..d
            };
            let text = make_demo_dataset(&spec)?;
            std::fs::write(&a.out, text).with_context(|| format!("writing {}", a.out.display()))?;
        }
        Command::Ingest(a) => {
            let opts = stages::IngestOptions {
                holdout_fraction: a.holdout_fraction,
                include_ref_genotypes: a.include_ref_gt,
                lenient: a.lenient,
                seed: stage_seed(seed, Stage::Ingest),
            };
            let summary = stages::ingest(&a.vcf, &opts, &a.out, a.holdout.as_deref())?;
            print_json(&summary)?;
        }
        Command::Tokenize(a) => {
            let tok = stages::tokenize(&a.corpus, a.vocab_size, &a.out)?;
            print_json(&serde_json::json!({ "vocab_size": tok.vocab_size() }))?;
        }
        Command::Train(a) => {
            let model = ModelSection {
                preset: a.preset.into(),
                max_seq_len: a.max_seq_len,
                d_ff: a.d_ff,
                n_heads: None,
                dropout: a.dropout,
            };
            let train = TrainSection {
                learning_rate: a.lr,
                schedule: match a.lr_final_fraction {
                    Some(f) => LrSchedule::Linear { final_fraction: f },
                    None => LrSchedule::Constant,
                },
                momentum: a.momentum,
                max_steps: a.steps,
                batch_size: a.batch_size,
                eval_every: a.eval_every,
                stop_below_loss: a.stop_below_loss,
                keep_checkpoints: a.checkpoint_dir.is_some(),
            };
            let dp = DpSection {
                enabled: a.dp,
                clip_norm: a.clip_norm,
                noise_multiplier: a.noise_multiplier,
                lot_size: a.lot_size,
                delta: a.delta,
                target_epsilon: Some(a.epsilon),
            };
            if let Some(d) = &a.checkpoint_dir {
                std::fs::create_dir_all(d)?;
            }
            let history = with_suffix(&a.out, ".loss_history.csv");
            let summary_path = with_suffix(&a.out, ".train.json");
            let paths = stages::TrainPaths {
                corpus: &a.corpus,
                checkpoint_dir: a.checkpoint_dir.as_deref(),
                tokenizer: &a.tokenizer,
                checkpoint: &a.out,
                history: &history,
                summary: &summary_path,
            };
            let summary = stages::train(&paths, &model, &train, a.dp.then_some(&dp), stage_seed(seed, Stage::Train))?;
            print_json(&summary)?;
        }
        Command::Generate(a) => {
            let prompt_source = match (a.prompt_mode, a.prompt) {
                (PromptMode::Fixed, Some(p)) => PromptSource::Fixed(p),
                (PromptMode::Fixed, None) => return Err(config_error("--prompt-mode fixed needs --prompt")),
                (PromptMode::PerTarget, _) => PromptSource::PerTarget,
                (PromptMode::RandomTrain, _) => PromptSource::RandomTrain,
            };
            let section = GenerateSection {
                n_samples: a.n,
                prompt_source,
                max_new_tokens: a.max_new_tokens,
                temperature: a.temperature,
                top_k: a.top_k,
            };
            let spec = section.to_spec(stage_seed(seed, Stage::Generate));
            let n = stages::generate(&a.ckpt, &a.tokenizer, &a.train_corpus, &spec, &a.out)?;
            print_json(&serde_json::json!({ "samples": n }))?;
        }
        Command::Utility(a) => {
            let bounds = ChromosomeBounds::load(&a.bounds).map_err(|e| config_error(format!("bounds: {e}")))?;
            let paths = stages::UtilityPaths {
                cohort: &a.cohort,
                train_corpus: &a.train_corpus,
                benchmark_vcf: a.benchmark_vcf.as_deref(),
                out: &a.out,
            };
            let out = stages::utility(&paths, &bounds)?;
            print_json(&out.comparison)?;
        }
        Command::Attack(a) => {
            let mut section = AttackSection {
                target_cohort_size: a.cohort_size,
                n_rounds: a.rounds,
                max_new_tokens: a.max_new_tokens,
                ..Default::default()
            };
            section.modes = match a.mode {
                AttackMode::Mia => vec![FeatureMode::ModelOnly],
                AttackMode::Bihmia => vec![FeatureMode::Hybrid],
                AttackMode::Both => vec![FeatureMode::ModelOnly, FeatureMode::Hybrid],
            };
            if let Some(names) = a.attacks {
                section.attacks = names
                    .iter()
                    .map(|n| {
                        AttackKind::ALL
                            .iter()
                            .copied()
                            .find(|k| k.name() == n.trim())
                            .ok_or_else(|| config_error(format!("unknown attack {n:?}")))
                    })
                    .collect::<Result<_>>()?;
            }
            let paths = stages::AttackPaths {
                checkpoint: &a.ckpt,
                tokenizer: &a.tokenizer,
                train_corpus: &a.train_corpus,
                holdout_corpus: &a.holdout_corpus,
                out: &a.out,
            };
            let report = stages::attack(&paths, &section.to_experiment(stage_seed(seed, Stage::Attack)))?;
            print_json(&report.aggregate)?;
        }
        Command::Pipeline(a) => {
            let mut cfg = match &a.config {
                Some(p) => PipelineConfig::load(p)?,
                None => {
                    let mut c = PipelineConfig::default();
                    c.apply_seed_env()?;
                    c
                }
            };
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            if let Some(d) = a.out_dir {
                cfg.paths.out_dir = d;
            }
            if a.print_config {
                print!("{}", cfg.to_toml());
                return Ok(());
            }
            let parse = |names: &[String]| names.iter().map(|n| n.trim().parse::<Stage>()).collect::<Result<Vec<_>, _>>();
            let opts = RunOptions { stages: parse(a.stages.as_deref().unwrap_or_default())?, force: parse(&a.force)? };
            let outcome = run_pipeline(&cfg, &opts)?;
            let statuses: Vec<_> = outcome.statuses.iter().map(|(s, st)| serde_json::json!({ "stage": s, "status": st })).collect();
            print_json(&statuses)?;
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<PipelineError>() {
        Some(e) if e.is_config() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

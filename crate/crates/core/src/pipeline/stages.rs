//! Stage bodies shared by the pipeline runner and the individual subcommands.
//! Every stage reads and writes only the paths it is given.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{DpSection, ModelSection, TrainSection};
use super::{PipelineError, Result};
use crate::attack::{derive_seed, run_experiment, AttackReport, ExperimentConfig};
use crate::dp::{write_loss_history, DpConfig, PrivacyLedger, StopReason, TrainMode};
use crate::features::write_feature_csv;
use crate::synthesis::{generate_cohort, load_generation_records, select_prompts, GenerationSpec};
use crate::tokenizer::Tokenizer;
use crate::transformer::{load_checkpoint, save_checkpoint, Model, ModelConfig};
use crate::utility::{
    compare_reports, utility_report, write_comparison_csv, write_mutation_stats_csv, ChromosomeBounds, UtilityInput,
    UtilityReport, UtilitySettings,
};
use crate::vcf::{
    build_profiles, parse_vcf_path, read_corpus_path, split_train_holdout, write_corpus, Cohort, Origin, ParseMode,
};

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    Ok(BufWriter::new(File::create(path)?))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

/// `base.json` → `base.<suffix>`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    path.with_extension(suffix)
}

pub fn load_tokenizer(path: &Path) -> Result<Tokenizer> {
    Ok(Tokenizer::load(BufReader::new(File::open(path)?))?)
}

pub fn load_corpus(path: &Path, prefix: &str) -> Result<Cohort> {
    Ok(read_corpus_path(path, prefix, Origin::Real)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestOptions {
    pub holdout_fraction: f64,
    pub include_ref_genotypes: bool,
    pub lenient: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub samples: usize,
    pub records: usize,
    pub skipped_lines: usize,
    pub train_samples: usize,
    pub holdout_samples: usize,
}

/// VCF → corpus files (one profile line per sample). Without a holdout path every
/// sample goes to `train_out` and `holdout_fraction` is ignored.
pub fn ingest(vcf: &Path, opts: &IngestOptions, train_out: &Path, holdout_out: Option<&Path>) -> Result<IngestSummary> {
    let mode = if opts.lenient { ParseMode::Lenient } else { ParseMode::Strict };
    let parsed = parse_vcf_path(vcf, mode)?;
    for s in &parsed.skipped {
        log::warn!("skipped line {}: {}", s.line, s.reason);
    }
    let cohort = build_profiles(&parsed.records, &parsed.samples, opts.include_ref_genotypes)?;
    let (train, holdout) = match holdout_out {
        Some(_) => split_train_holdout(&cohort, opts.holdout_fraction, opts.seed)?,
        None => (cohort.clone(), Cohort::new(Vec::new())?),
    };
    let mut w = create(train_out)?;
    write_corpus(train.samples(), &mut w)?;
    w.flush()?;
    if let Some(path) = holdout_out {
        let mut w = create(path)?;
        write_corpus(holdout.samples(), &mut w)?;
        w.flush()?;
    }
    Ok(IngestSummary {
        samples: cohort.len(),
        records: parsed.records.len(),
        skipped_lines: parsed.skipped.len(),
        train_samples: train.len(),
        holdout_samples: holdout.len(),
    })
}

pub fn tokenize(corpus: &Path, vocab_size: usize, out: &Path) -> Result<Tokenizer> {
    let lines: Vec<String> = std::fs::read_to_string(corpus)?.lines().map(str::to_string).collect();
    if lines.iter().all(|l| l.trim().is_empty()) {
        return Err(PipelineError::Config(format!("corpus {} is empty", corpus.display())));
    }
    let tok = Tokenizer::train(&lines, vocab_size)?;
    let mut w = create(out)?;
    tok.save(&mut w)?;
    w.flush()?;
    Ok(tok)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: usize,
    pub stop_reason: StopReason,
    pub final_loss: Option<f64>,
    pub final_eval_loss: Option<f64>,
    pub param_count: usize,
    pub dp: Option<DpConfig>,
    pub ledger: Option<PrivacyLedger>,
}

pub struct TrainPaths<'a> {
    pub corpus: &'a Path,
    /// Intermediate checkpoints at the eval cadence, when set.
    pub checkpoint_dir: Option<&'a Path>,
    pub tokenizer: &'a Path,
    pub checkpoint: &'a Path,
    /// Loss history CSV.
    pub history: &'a Path,
    /// Summary JSON, including the privacy ledger in DP mode.
    pub summary: &'a Path,
}

pub fn model_config(section: &ModelSection, vocab_size: usize, seed: u64) -> ModelConfig {
    let mut c = ModelConfig::preset(section.preset, vocab_size, seed);
    if let Some(t) = section.max_seq_len {
        c.max_seq_len = t;
    }
    if let Some(f) = section.d_ff {
        c.d_ff = f;
    }
    if let Some(h) = section.n_heads {
        c.n_heads = h;
    }
    if let Some(p) = section.dropout {
        c.dropout = p;
    }
    c
}

pub fn train(
    paths: &TrainPaths<'_>,
    model: &ModelSection,
    section: &TrainSection,
    dp: Option<&DpSection>,
    seed: u64,
) -> Result<TrainSummary> {
    let tok = load_tokenizer(paths.tokenizer)?;
    let cohort = load_corpus(paths.corpus, "train_")?;
    let corpus: Vec<Vec<u32>> = cohort.samples().iter().map(|s| tok.encode_profile_line(&s.corpus_line())).collect();
    let m = Model::<f32>::init(model_config(model, tok.vocab_size(), derive_seed(seed, 1, 0)))?;
    let dp = dp.map(|d| d.resolve(corpus.len(), section.max_steps)).transpose()?;
    let mode = if dp.is_some() { TrainMode::Dp } else { TrainMode::Plain };
    let cfg = section.to_train_config(mode, derive_seed(seed, 2, 0), paths.checkpoint_dir.map(Path::to_path_buf));
    let out = crate::dp::train(m, corpus, cfg, dp.clone())?;
    save_checkpoint(&out.model, paths.checkpoint)?;
    let mut w = create(paths.history)?;
    write_loss_history(&out.history, &mut w)?;
    w.flush()?;
    let summary = TrainSummary {
        steps: out.history.len(),
        stop_reason: out.stop_reason,
        final_loss: out.history.last().map(|r| r.loss),
        final_eval_loss: out.history.iter().rev().find_map(|r| r.eval_loss),
        param_count: out.model.param_count(),
        dp,
        ledger: out.ledger,
    };
    write_json(paths.summary, &summary)?;
    Ok(summary)
}

/// Writes the cohort file and its `.generation.json` sidecar.
pub fn generate(
    checkpoint: &Path,
    tokenizer: &Path,
    train_corpus: &Path,
    spec: &GenerationSpec,
    out: &Path,
) -> Result<usize> {
    let model: Model<f32> = load_checkpoint(checkpoint)?;
    let tok = load_tokenizer(tokenizer)?;
    let train = load_corpus(train_corpus, "train_")?;
    let prompts = select_prompts(&spec.prompt_source, spec.n_samples, &train, Some(&train), spec.seed)?;
    let cohort = generate_cohort(&model, &tok, &prompts, spec)?;
    if let Some(dir) = out.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    cohort.save(out)?;
    Ok(cohort.cohort.len())
}

pub struct UtilityPaths<'a> {
    pub cohort: &'a Path,
    pub train_corpus: &'a Path,
    pub benchmark_vcf: Option<&'a Path>,
    /// Report JSON; comparison and plot CSVs are written next to it.
    pub out: &'a Path,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityOutput {
    pub synthetic: UtilityReport,
    pub benchmark: UtilityReport,
    pub comparison: Vec<crate::utility::ComparisonRow>,
}

/// The synthetic cohort is scored on generated mutations only; the benchmark is the
/// training corpus, with FILTER metrics taken from the VCF when one is given.
pub fn utility(paths: &UtilityPaths<'_>, bounds: &ChromosomeBounds) -> Result<UtilityOutput> {
    let synthetic = crate::synthesis::strip_prompts(&read_corpus_path(paths.cohort, "synth_", Origin::Synthetic)?);
    let records = load_generation_records(paths.cohort)?;
    let train = load_corpus(paths.train_corpus, "train_")?;
    let training: BTreeSet<String> = train.mutation_texts();
    let settings = UtilitySettings { bounds: bounds.clone(), include_prompt: false };
    let synth_report = utility_report(UtilityInput {
        cohort: &synthetic,
        records: Some(&records),
        training: &training,
        vcf_records: None,
        settings: settings.clone(),
    })?;
    let vcf_records = match paths.benchmark_vcf {
        Some(p) => Some(parse_vcf_path(p, ParseMode::Lenient)?.records),
        None => None,
    };
    let bench_report = utility_report(UtilityInput {
        cohort: &train,
        records: None,
        training: &training,
        vcf_records: vcf_records.as_deref(),
        settings,
    })?;
    let comparison = compare_reports(&synth_report, &bench_report)?;
    let out = UtilityOutput { synthetic: synth_report, benchmark: bench_report, comparison };
    write_json(paths.out, &out)?;
    let mut w = create(&sibling(paths.out, "comparison.csv"))?;
    write_comparison_csv(&out.comparison, &mut w)?;
    w.flush()?;
    let mut w = create(&sibling(paths.out, "mutation_stats.csv"))?;
    write_mutation_stats_csv(&[("synthetic", &out.synthetic), ("benchmark", &out.benchmark)], &mut w)?;
    w.flush()?;
    Ok(out)
}

pub struct AttackPaths<'a> {
    pub checkpoint: &'a Path,
    pub tokenizer: &'a Path,
    pub train_corpus: &'a Path,
    pub holdout_corpus: &'a Path,
    /// Aggregate JSON; per-round, plot and feature files are written next to it.
    pub out: &'a Path,
}

#[derive(Debug, Serialize)]
struct FeatureSidecar<'a> {
    feature_version: u32,
    window_policy: &'static str,
    seed: u64,
    genomic_scale: crate::features::GenomicScale,
    standardizers: Vec<(usize, crate::features::FeatureMode, &'a Option<crate::features::Standardizer>)>,
}

pub fn attack(paths: &AttackPaths<'_>, config: &ExperimentConfig) -> Result<AttackReport> {
    let model: Model<f32> = load_checkpoint(paths.checkpoint)?;
    let tok = load_tokenizer(paths.tokenizer)?;
    let train = load_corpus(paths.train_corpus, "train_")?;
    let holdout = load_corpus(paths.holdout_corpus, "holdout_")?;
    let report = run_experiment(&model, &tok, &train, &holdout, config)?;
    write_json(paths.out, &report)?;
    let mut w = create(&sibling(paths.out, "rounds.csv"))?;
    report.write_rounds_csv(&mut w)?;
    w.flush()?;
    let mut w = create(&sibling(paths.out, "plot.csv"))?;
    report.write_plot_csv(&mut w)?;
    w.flush()?;
    let mut w = create(&sibling(paths.out, "features.csv"))?;
    writeln!(w, "# one block per round and feature mode")?;
    for f in &report.features {
        writeln!(w, "# round {} mode {:?}", f.round, f.mode)?;
        write_feature_csv(&f.names, &f.rows, &mut w)?;
    }
    w.flush()?;
    let sidecar = FeatureSidecar {
        feature_version: report.feature_version,
        window_policy: "non-overlapping max_seq_len windows; trailing window kept when it has at least 2 tokens",
        seed: config.seed,
        genomic_scale: config.genomic_scale,
        standardizers: report.features.iter().map(|f| (f.round, f.mode, &f.standardizer)).collect(),
    };
    write_json(&sibling(paths.out, "features.json"), &sidecar)?;
    Ok(report)
}

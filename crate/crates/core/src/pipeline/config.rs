//! TOML experiment configuration. Every section is optional and falls back to its
//! defaults; unknown keys are rejected so typos surface as configuration errors.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DemoSpec, PipelineError, Result};
use crate::attack::{AttackKind, AttackParams, ExperimentConfig};
use crate::dp::{calibrate_noise_multiplier, DpConfig, LrSchedule, TrainConfig, TrainMode};
use crate::features::{FeatureMode, GenomicScale};
use crate::synthesis::{GenerationSpec, PromptSource};
use crate::transformer::{Preset, SamplingParams};

pub const SCHEMA_VERSION: u32 = 1;

/// Overrides the configured global seed when set.
pub const SEED_ENV: &str = "GENOMESYNTH_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema_version: u32,
    /// Root of every stage seed.
    pub seed: u64,
    pub paths: PathsSection,
    /// Used to write `demo.vcf` when no input VCF is configured.
    pub demo: DemoSpec,
    pub ingest: IngestSection,
    pub tokenizer: TokenizerSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub dp: DpSection,
    pub generate: GenerateSection,
    pub utility: UtilitySection,
    pub attack: AttackSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            paths: PathsSection::default(),
            demo: DemoSpec::default(),
            ingest: IngestSection::default(),
            tokenizer: TokenizerSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            dp: DpSection::default(),
            generate: GenerateSection::default(),
            utility: UtilitySection::default(),
            attack: AttackSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    /// Artifact directory; relative paths resolve against the config file's directory.
    pub out_dir: PathBuf,
    /// Input VCF; the demo generator is used when absent.
    pub vcf: Option<PathBuf>,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self { out_dir: PathBuf::from("genomesynth_out"), vcf: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    pub holdout_fraction: f64,
    /// Emit `0|0` calls as mutations too.
    pub include_ref_genotypes: bool,
    /// Skip malformed records with a warning instead of failing.
    pub lenient: bool,
}

impl Default for IngestSection {
    fn default() -> Self {
        Self { holdout_fraction: 0.5, include_ref_genotypes: false, lenient: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerSection {
    pub vocab_size: usize,
}

impl Default for TokenizerSection {
    fn default() -> Self {
        Self { vocab_size: 2048 }
    }
}

/// Preset plus optional overrides of its individual fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub preset: Preset,
    pub max_seq_len: Option<usize>,
    pub d_ff: Option<usize>,
    pub n_heads: Option<usize>,
    pub dropout: Option<f64>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { preset: Preset::Tiny, max_seq_len: None, d_ff: None, n_heads: None, dropout: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub schedule: LrSchedule,
    pub momentum: f64,
    pub max_steps: usize,
    pub batch_size: usize,
    pub eval_every: usize,
    /// Plain mode only.
    pub stop_below_loss: Option<f64>,
    /// Keep intermediate checkpoints under `checkpoints/` at the eval cadence.
    pub keep_checkpoints: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            schedule: LrSchedule::Constant,
            momentum: 0.0,
            max_steps: 1000,
            batch_size: 8,
            eval_every: 100,
            stop_below_loss: None,
            keep_checkpoints: false,
        }
    }
}

impl TrainSection {
    pub fn to_train_config(&self, mode: TrainMode, seed: u64, checkpoint_dir: Option<PathBuf>) -> TrainConfig {
        TrainConfig {
            mode,
            learning_rate: self.learning_rate,
            schedule: self.schedule,
            momentum: self.momentum,
            max_steps: self.max_steps,
            batch_size: self.batch_size,
            seed,
            eval_every: self.eval_every,
            stop_below_loss: self.stop_below_loss,
            checkpoint_dir,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpSection {
    pub enabled: bool,
    pub clip_norm: f64,
    /// Calibrated from the target ε, lot size and step budget when absent.
    pub noise_multiplier: Option<f64>,
    pub lot_size: usize,
    pub delta: f64,
    pub target_epsilon: Option<f64>,
}

impl Default for DpSection {
    fn default() -> Self {
        let d = DpConfig::default();
        Self {
            enabled: false,
            clip_norm: d.clip_norm,
            noise_multiplier: None,
            lot_size: d.lot_size,
            delta: d.delta,
            target_epsilon: d.target_epsilon,
        }
    }
}

impl DpSection {
    /// The DP configuration for a corpus of `n` profiles trained for `steps` steps.
    pub fn resolve(&self, n: usize, steps: usize) -> Result<DpConfig> {
        let mut cfg = DpConfig {
            clip_norm: self.clip_norm,
            noise_multiplier: self.noise_multiplier.unwrap_or(1.0),
            lot_size: self.lot_size,
            delta: self.delta,
            target_epsilon: self.target_epsilon,
        };
        if self.noise_multiplier.is_none() {
            let target = self.target_epsilon.ok_or_else(|| {
                PipelineError::Config("dp needs noise_multiplier or target_epsilon".into())
            })?;
            cfg.validate(n).map_err(|e| PipelineError::Config(e.to_string()))?;
            let q = cfg.sampling_rate(n);
            cfg.noise_multiplier = calibrate_noise_multiplier(q, steps as u64, self.delta, target)
                .map_err(|e| PipelineError::Config(e.to_string()))?;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSection {
    pub n_samples: usize,
    pub prompt_source: PromptSource,
    pub max_new_tokens: usize,
    pub temperature: f64,
    pub top_k: usize,
}

impl Default for GenerateSection {
    fn default() -> Self {
        let g = GenerationSpec::default();
        Self {
            n_samples: g.n_samples,
            prompt_source: g.prompt_source,
            max_new_tokens: g.max_new_tokens,
            temperature: g.temperature,
            top_k: g.top_k,
        }
    }
}

impl GenerateSection {
    pub fn to_spec(&self, seed: u64) -> GenerationSpec {
        GenerationSpec {
            n_samples: self.n_samples,
            prompt_source: self.prompt_source.clone(),
            max_new_tokens: self.max_new_tokens,
            temperature: self.temperature,
            top_k: self.top_k,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UtilitySection {
    /// Chromosome bounds: a preset name (`grch37`, `grch38`) or a bounds file path.
    pub bounds: String,
}

impl Default for UtilitySection {
    fn default() -> Self {
        Self { bounds: "grch37".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSection {
    pub target_cohort_size: usize,
    pub n_rounds: usize,
    pub attacks: Vec<AttackKind>,
    pub modes: Vec<FeatureMode>,
    pub standardize: bool,
    pub genomic_scale: GenomicScale,
    pub params: AttackParams,
    pub max_new_tokens: usize,
    pub temperature: f64,
    pub top_k: usize,
    pub shuffle_labels: bool,
}

impl Default for AttackSection {
    fn default() -> Self {
        let e = ExperimentConfig::default();
        Self {
            target_cohort_size: e.target_cohort_size,
            n_rounds: e.n_rounds,
            attacks: e.attacks,
            modes: e.modes,
            standardize: e.standardize,
            genomic_scale: e.genomic_scale,
            params: e.params,
            max_new_tokens: e.generation.max_new_tokens,
            temperature: e.generation.temperature,
            top_k: e.generation.top_k,
            shuffle_labels: e.shuffle_labels,
        }
    }
}

impl AttackSection {
    pub fn to_experiment(&self, seed: u64) -> ExperimentConfig {
        ExperimentConfig {
            target_cohort_size: self.target_cohort_size,
            n_rounds: self.n_rounds,
            attacks: self.attacks.clone(),
            modes: self.modes.clone(),
            seed,
            params: self.params.clone(),
            standardize: self.standardize,
            genomic_scale: self.genomic_scale,
            generation: SamplingParams {
                max_new_tokens: self.max_new_tokens,
                temperature: self.temperature,
                top_k: self.top_k,
                seed: 0,
            },
            shuffle_labels: self.shuffle_labels,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(PipelineError::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    /// Reads a config file, resolves relative paths against its directory and
    /// applies the seed override from the environment.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        cfg.apply_seed_env()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        if self.paths.out_dir.is_relative() {
            self.paths.out_dir = base.join(&self.paths.out_dir);
        }
        if let Some(v) = &self.paths.vcf {
            if v.is_relative() {
                self.paths.vcf = Some(base.join(v));
            }
        }
    }

    pub fn apply_seed_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| PipelineError::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

//! End-to-end orchestration: ingest → tokenize → train → generate → utility → attack.
//!
//! Each stage records a fingerprint (hash of its configuration section, the global
//! seed and its input files) and the hashes of its outputs in `manifest.json`. A stage
//! is skipped when the fingerprint is unchanged and every recorded output still hashes
//! to its recorded value. The manifest holds no timestamps, so identical runs produce
//! identical manifests.

pub mod config;
pub mod demo;
pub mod stages;

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use config::{PipelineConfig, SCHEMA_VERSION, SEED_ENV};
pub use demo::{make_demo_dataset, DemoSpec};

use crate::attack::derive_seed;
use crate::utility::ChromosomeBounds;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{n_variants} distinct positions do not fit in {min_pos}..={max_pos}")]
    BoundsTooTight { n_variants: usize, min_pos: u64, max_pos: u64 },
    #[error("{stage} stage: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<PipelineError>,
    },
    #[error("missing input {}", .0.display())]
    MissingInput(PathBuf),
    #[error(transparent)]
    Vcf(#[from] crate::vcf::VcfError),
    #[error(transparent)]
    Tokenizer(#[from] crate::tokenizer::TokenizerError),
    #[error(transparent)]
    Model(#[from] crate::transformer::ModelError),
    #[error(transparent)]
    Dp(#[from] crate::dp::DpError),
    #[error(transparent)]
    Synthesis(#[from] crate::synthesis::SynthesisError),
    #[error(transparent)]
    Utility(#[from] crate::utility::UtilityError),
    #[error(transparent)]
    Feature(#[from] crate::features::FeatureError),
    #[error(transparent)]
    Attack(#[from] crate::attack::AttackError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl PipelineError {
    /// True for errors in the configuration itself rather than in running a stage.
    pub fn is_config(&self) -> bool {
        use crate::attack::AttackError;
        use crate::dp::DpError;
        use crate::transformer::ModelError;
        match self {
            Self::Config(_) => true,
            Self::Stage { source, .. } => source.is_config(),
            Self::Dp(DpError::InvalidConfig(_)) | Self::Dp(DpError::Model(ModelError::InvalidConfig(_))) => true,
            Self::Model(ModelError::InvalidConfig(_)) | Self::Attack(AttackError::InvalidConfig(_)) => true,
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Tokenize,
    Train,
    Generate,
    Utility,
    Attack,
}

impl Stage {
    pub const ALL: [Stage; 6] =
        [Stage::Ingest, Stage::Tokenize, Stage::Train, Stage::Generate, Stage::Utility, Stage::Attack];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Tokenize => "tokenize",
            Stage::Train => "train",
            Stage::Generate => "generate",
            Stage::Utility => "utility",
            Stage::Attack => "attack",
        }
    }

    /// Stages whose inputs include this stage's outputs, directly or transitively.
    pub fn downstream(self) -> Vec<Stage> {
        Stage::ALL.iter().copied().filter(|&s| self.feeds(s)).collect()
    }

    fn upstream(self) -> &'static [Stage] {
        match self {
            Stage::Ingest => &[],
            Stage::Tokenize => &[Stage::Ingest],
            Stage::Train => &[Stage::Ingest, Stage::Tokenize],
            Stage::Generate => &[Stage::Ingest, Stage::Tokenize, Stage::Train],
            Stage::Utility => &[Stage::Ingest, Stage::Tokenize, Stage::Train, Stage::Generate],
            Stage::Attack => &[Stage::Ingest, Stage::Tokenize, Stage::Train],
        }
    }

    fn feeds(self, other: Stage) -> bool {
        other.upstream().contains(&self)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .iter()
            .copied()
            .find(|st| st.name() == s)
            .ok_or_else(|| PipelineError::Config(format!("unknown stage {s:?}")))
    }
}

/// Artifact locations under the output directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn demo_vcf(&self) -> PathBuf {
        self.path("demo.vcf")
    }
    pub fn train_corpus(&self) -> PathBuf {
        self.path("train_corpus.txt")
    }
    pub fn holdout_corpus(&self) -> PathBuf {
        self.path("holdout_corpus.txt")
    }
    pub fn tokenizer(&self) -> PathBuf {
        self.path("tokenizer.txt")
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.path("model.ckpt")
    }
    pub fn checkpoint_dir(&self) -> PathBuf {
        self.path("checkpoints")
    }
    pub fn synthetic(&self) -> PathBuf {
        self.path("synthetic.txt")
    }
    pub fn utility(&self) -> PathBuf {
        self.path("utility.json")
    }
    pub fn attack(&self) -> PathBuf {
        self.path("attack.json")
    }
    pub fn manifest(&self) -> PathBuf {
        self.path("manifest.json")
    }

    /// Output paths relative to the root, in a fixed order.
    fn outputs(&self, stage: Stage, cfg: &PipelineConfig) -> Vec<String> {
        let v: Vec<&str> = match stage {
            Stage::Ingest => {
                let mut v = vec!["train_corpus.txt", "holdout_corpus.txt", "ingest.json"];
                if cfg.paths.vcf.is_none() {
                    v.insert(0, "demo.vcf");
                }
                v
            }
            Stage::Tokenize => vec!["tokenizer.txt"],
            Stage::Train => vec!["model.ckpt", "loss_history.csv", "train.json"],
            Stage::Generate => vec!["synthetic.txt", "synthetic.generation.json"],
            Stage::Utility => vec!["utility.json", "utility.comparison.csv", "utility.mutation_stats.csv"],
            Stage::Attack => {
                vec!["attack.json", "attack.rounds.csv", "attack.plot.csv", "attack.features.csv", "attack.features.json"]
            }
        };
        v.into_iter().map(str::to_string).collect()
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = std::fs::File::open(path).map_err(|_| PipelineError::MissingInput(path.to_path_buf()))?;
    let mut h = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub fingerprint: String,
    pub outputs: Vec<ArtifactEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub seed: u64,
    pub stages: Vec<StageRecord>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Option<Self>> {
        match std::fs::read(path) {
            Ok(bytes) => Ok(serde_json::from_slice(&bytes).ok()),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    pub fn record(&self, stage: Stage) -> Option<&StageRecord> {
        self.stages.iter().find(|r| r.stage == stage)
    }

    /// Recomputes every listed hash; returns the entries that no longer match.
    pub fn verify(&self, root: &Path) -> Vec<String> {
        let mut bad = Vec::new();
        for r in &self.stages {
            for a in &r.outputs {
                if sha256_file(&root.join(&a.path)).ok().as_deref() != Some(a.sha256.as_str()) {
                    bad.push(a.path.clone());
                }
            }
        }
        bad
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Ran,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PipelineOutcome {
    pub manifest: Manifest,
    pub statuses: Vec<(Stage, StageStatus)>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Stages to run, in pipeline order; all stages when empty.
    pub stages: Vec<Stage>,
    /// Stages to rerun unconditionally, along with everything downstream of them.
    pub force: Vec<Stage>,
}

/// Seed handed to one stage; the subcommands use the same derivation, so running the
/// stages one by one with the same global seed reproduces the pipeline.
pub fn stage_seed(seed: u64, stage: Stage) -> u64 {
    derive_seed(seed, 0x5747_4745 ^ stage as u64, 0)
}

struct Runner<'a> {
    cfg: &'a PipelineConfig,
    layout: Layout,
}

impl Runner<'_> {
    fn vcf_path(&self) -> PathBuf {
        self.cfg.paths.vcf.clone().unwrap_or_else(|| self.layout.demo_vcf())
    }

    /// Hash of the stage's configuration, the global seed and its input files.
    fn fingerprint(&self, stage: Stage) -> Result<String> {
        let c = self.cfg;
        let l = &self.layout;
        let (section, inputs): (serde_json::Value, Vec<PathBuf>) = match stage {
            Stage::Ingest => {
                let mut inputs = Vec::new();
                let demo = match &c.paths.vcf {
                    Some(v) => {
                        inputs.push(v.clone());
                        serde_json::Value::Null
                    }
                    None => serde_json::to_value(&c.demo)?,
                };
                (serde_json::json!({ "ingest": c.ingest, "demo": demo }), inputs)
            }
            Stage::Tokenize => (serde_json::to_value(&c.tokenizer)?, vec![l.train_corpus()]),
            Stage::Train => (
                serde_json::json!({ "model": c.model, "train": c.train, "dp": c.dp }),
                vec![l.train_corpus(), l.tokenizer()],
            ),
            Stage::Generate => {
                (serde_json::to_value(&c.generate)?, vec![l.checkpoint(), l.tokenizer(), l.train_corpus()])
            }
            Stage::Utility => {
                let mut inputs = vec![l.synthetic(), l.path("synthetic.generation.json"), l.train_corpus()];
                inputs.push(self.vcf_path());
                if !is_bounds_preset(&c.utility.bounds) {
                    inputs.push(PathBuf::from(&c.utility.bounds));
                }
                (serde_json::to_value(&c.utility)?, inputs)
            }
            Stage::Attack => (
                serde_json::to_value(&c.attack)?,
                vec![l.checkpoint(), l.tokenizer(), l.train_corpus(), l.holdout_corpus()],
            ),
        };
        let mut h = Sha256::new();
        h.update(stage.name().as_bytes());
        h.update(c.schema_version.to_le_bytes());
        h.update(c.seed.to_le_bytes());
        h.update(serde_json::to_vec(&section)?);
        for p in &inputs {
            h.update(sha256_file(p)?.as_bytes());
        }
        Ok(hex::encode(h.finalize()))
    }

    fn outputs_match(&self, record: &StageRecord) -> bool {
        record
            .outputs
            .iter()
            .all(|a| sha256_file(&self.layout.path(&a.path)).ok().as_deref() == Some(a.sha256.as_str()))
    }

    fn execute(&self, stage: Stage) -> Result<Vec<String>> {
        let c = self.cfg;
        let l = &self.layout;
        let seed = stage_seed(c.seed, stage);
        std::fs::create_dir_all(&l.root)?;
        let mut outputs = l.outputs(stage, c);
        match stage {
            Stage::Ingest => {
                if c.paths.vcf.is_none() {
                    let text = make_demo_dataset(&c.demo)?;
                    std::fs::write(l.demo_vcf(), text)?;
                }
                let vcf = self.vcf_path();
                if !vcf.exists() {
                    return Err(PipelineError::MissingInput(vcf));
                }
                let opts = stages::IngestOptions {
                    holdout_fraction: c.ingest.holdout_fraction,
                    include_ref_genotypes: c.ingest.include_ref_genotypes,
                    lenient: c.ingest.lenient,
                    seed,
                };
                let summary = stages::ingest(&vcf, &opts, &l.train_corpus(), Some(&l.holdout_corpus()))?;
                stages::write_json(&l.path("ingest.json"), &summary)?;
            }
            Stage::Tokenize => {
                stages::tokenize(&l.train_corpus(), c.tokenizer.vocab_size, &l.tokenizer())?;
            }
            Stage::Train => {
                let ckpt_dir = c.train.keep_checkpoints.then(|| l.checkpoint_dir());
                if let Some(d) = &ckpt_dir {
                    if d.exists() {
                        std::fs::remove_dir_all(d)?;
                    }
                    std::fs::create_dir_all(d)?;
                }
                let (corpus, tok, ckpt) = (l.train_corpus(), l.tokenizer(), l.checkpoint());
                let (history, summary) = (l.path("loss_history.csv"), l.path("train.json"));
                let paths = stages::TrainPaths {
                    corpus: &corpus,
                    checkpoint_dir: ckpt_dir.as_deref(),
                    tokenizer: &tok,
                    checkpoint: &ckpt,
                    history: &history,
                    summary: &summary,
                };
                stages::train(&paths, &c.model, &c.train, c.dp.enabled.then_some(&c.dp), seed)?;
                if let Some(d) = &ckpt_dir {
                    let mut extra: Vec<String> = std::fs::read_dir(d)?
                        .map(|e| e.map(|e| format!("checkpoints/{}", e.file_name().to_string_lossy())))
                        .collect::<std::io::Result<_>>()?;
                    extra.sort();
                    outputs.extend(extra);
                }
            }
            Stage::Generate => {
                let spec = c.generate.to_spec(seed);
                stages::generate(&l.checkpoint(), &l.tokenizer(), &l.train_corpus(), &spec, &l.synthetic())?;
            }
            Stage::Utility => {
                let bounds = ChromosomeBounds::load(&c.utility.bounds)?;
                let (cohort, train, vcf, out) = (l.synthetic(), l.train_corpus(), self.vcf_path(), l.utility());
                let paths = stages::UtilityPaths {
                    cohort: &cohort,
                    train_corpus: &train,
                    benchmark_vcf: Some(&vcf),
                    out: &out,
                };
                stages::utility(&paths, &bounds)?;
            }
            Stage::Attack => {
                let (ckpt, tok, train, holdout, out) =
                    (l.checkpoint(), l.tokenizer(), l.train_corpus(), l.holdout_corpus(), l.attack());
                let paths = stages::AttackPaths {
                    checkpoint: &ckpt,
                    tokenizer: &tok,
                    train_corpus: &train,
                    holdout_corpus: &holdout,
                    out: &out,
                };
                stages::attack(&paths, &c.attack.to_experiment(seed))?;
            }
        }
        Ok(outputs)
    }
}

fn is_bounds_preset(name: &str) -> bool {
    ChromosomeBounds::preset(name).is_ok()
}

/// Runs the requested stages in order and rewrites the manifest. Errors are tagged
/// with the failing stage; the manifest keeps the records of stages that completed.
pub fn run_pipeline(cfg: &PipelineConfig, opts: &RunOptions) -> Result<PipelineOutcome> {
    if cfg.schema_version != SCHEMA_VERSION {
        return Err(PipelineError::Config(format!("schema_version {} is not supported", cfg.schema_version)));
    }
    let runner = Runner { cfg, layout: Layout::new(&cfg.paths.out_dir) };
    let previous = Manifest::load(&runner.layout.manifest())?
        .filter(|m| m.schema_version == cfg.schema_version && m.seed == cfg.seed);
    let mut forced: Vec<Stage> = Vec::new();
    for &f in &opts.force {
        forced.push(f);
        forced.extend(f.downstream());
    }
    let requested: Vec<Stage> =
        Stage::ALL.iter().copied().filter(|s| opts.stages.is_empty() || opts.stages.contains(s)).collect();

    let mut records: BTreeMap<Stage, StageRecord> = BTreeMap::new();
    if let Some(prev) = &previous {
        for r in &prev.stages {
            records.insert(r.stage, r.clone());
        }
    }
    let mut statuses = Vec::new();
    let mut rerun: Vec<Stage> = Vec::new();
    let tag = |stage: Stage| move |e: PipelineError| PipelineError::Stage { stage, source: Box::new(e) };
    for stage in requested {
        let fingerprint = runner.fingerprint(stage).map_err(tag(stage))?;
        let upstream_reran = rerun.iter().any(|&u| u.feeds(stage));
        let reusable = !forced.contains(&stage)
            && !upstream_reran
            && records.get(&stage).is_some_and(|r| r.fingerprint == fingerprint && runner.outputs_match(r));
        if reusable {
            log::info!("{stage}: up to date, skipped");
            statuses.push((stage, StageStatus::Skipped));
            continue;
        }
        log::info!("{stage}: running");
        records.remove(&stage);
        for d in stage.downstream() {
            records.remove(&d);
        }
        let outputs = runner.execute(stage).map_err(tag(stage))?;
        let outputs = outputs
            .into_iter()
            .map(|p| Ok(ArtifactEntry { sha256: sha256_file(&runner.layout.path(&p))?, path: p }))
            .collect::<Result<Vec<_>>>()
            .map_err(tag(stage))?;
        records.insert(stage, StageRecord { stage, fingerprint, outputs });
        rerun.push(stage);
        statuses.push((stage, StageStatus::Ran));
        write_manifest(&runner.layout, cfg, &records)?;
    }
    let manifest = write_manifest(&runner.layout, cfg, &records)?;
    Ok(PipelineOutcome { manifest, statuses })
}

fn write_manifest(layout: &Layout, cfg: &PipelineConfig, records: &BTreeMap<Stage, StageRecord>) -> Result<Manifest> {
    let manifest = Manifest { schema_version: cfg.schema_version, seed: cfg.seed, stages: records.values().cloned().collect() };
    stages::write_json(&layout.manifest(), &manifest)?;
    Ok(manifest)
}

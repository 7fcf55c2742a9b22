//! Membership-inference experiments: repeated rounds over random target cohorts,
//! each attacked with a calibrated perplexity threshold and three classifiers,
//! under model-only and hybrid feature sets.
//!
//! Members are the positive class. Within one round every feature mode sees the
//! same targets and the same attacker-train / attacker-test split, so the
//! blocks of a report are paired row by row.

pub mod classifiers;
pub mod metrics;

use std::io::Write;

use rand::{seq::SliceRandom, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use classifiers::{AttackParams, Knn, LogisticRegression, RandomForest, ThresholdAttack};
pub use metrics::{auc, evaluate_probabilities, metrics_from, MetricsRow, METRIC_NAMES};

use crate::features::{
    feature_names, genomic_features, model_features, raw_vector, FeatureError, FeatureMode, GenomicScale,
    ModelFeatureVector, Standardizer, FEATURE_VERSION,
};
use crate::synthesis::{generate_profile, SynthesisError};
use crate::tokenizer::Tokenizer;
use crate::transformer::{Model, SamplingParams, Scalar};
use crate::vcf::{Cohort, SampleProfile};

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("attacker training data lacks one of the two classes")]
    ClassImbalanceFatal,
    #[error("evaluation data lacks one of the two classes")]
    SingleClassEval,
    #[error("target cohort of {requested} exceeds training ({train}) or holdout ({holdout}) size")]
    CohortTooSmall { requested: usize, train: usize, holdout: usize },
    #[error("invalid experiment configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, AttackError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Threshold,
    Logreg,
    Rf,
    Knn,
}

impl AttackKind {
    pub const ALL: [AttackKind; 4] = [AttackKind::Threshold, AttackKind::Logreg, AttackKind::Rf, AttackKind::Knn];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Threshold => "threshold",
            AttackKind::Logreg => "logreg",
            AttackKind::Rf => "rf",
            AttackKind::Knn => "knn",
        }
    }
}

fn mode_name(m: FeatureMode) -> &'static str {
    match m {
        FeatureMode::ModelOnly => "model-only",
        FeatureMode::Hybrid => "hybrid",
    }
}

/// SplitMix64 finalizer; gives well-spread child seeds from structured inputs.
pub fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Members per round; the same number of non-members is drawn.
    pub target_cohort_size: usize,
    pub n_rounds: usize,
    pub attacks: Vec<AttackKind>,
    pub modes: Vec<FeatureMode>,
    pub seed: u64,
    pub params: AttackParams,
    pub standardize: bool,
    pub genomic_scale: GenomicScale,
    /// Sampling settings for the per-target synthetic profiles; the seed field is replaced
    /// per target and round.
    pub generation: SamplingParams,
    /// Permute attacker-train labels before fitting (null calibration).
    pub shuffle_labels: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            target_cohort_size: 20,
            n_rounds: 5,
            attacks: AttackKind::ALL.to_vec(),
            modes: vec![FeatureMode::ModelOnly, FeatureMode::Hybrid],
            seed: 0,
            params: AttackParams::default(),
            standardize: true,
            genomic_scale: GenomicScale::Ratio,
            generation: SamplingParams { max_new_tokens: 256, temperature: 1.0, top_k: 50, seed: 0 },
            shuffle_labels: false,
        }
    }
}

/// Targets and attacker split of one round, by sample id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundInfo {
    pub round: usize,
    pub members: Vec<String>,
    pub non_members: Vec<String>,
    pub attacker_train: Vec<String>,
    pub attacker_test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRow {
    pub round: usize,
    pub mode: FeatureMode,
    pub attack: AttackKind,
    pub metrics: MetricsRow,
}

/// Unstandardized features of one round and mode, with the fitted standardizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundFeatures {
    pub round: usize,
    pub mode: FeatureMode,
    pub names: Vec<String>,
    /// (sample id, member, raw feature vector) in target order.
    pub rows: Vec<(String, bool, Vec<f64>)>,
    pub standardizer: Option<Standardizer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub mode: FeatureMode,
    pub attack: AttackKind,
    pub mean: MetricsRow,
    /// Population standard deviation across rounds.
    pub std: MetricsRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub feature_version: u32,
    pub config: ExperimentConfig,
    pub rounds: Vec<RoundInfo>,
    pub rows: Vec<RoundRow>,
    pub aggregate: Vec<AggregateRow>,
    #[serde(skip)]
    pub features: Vec<RoundFeatures>,
}

/// Fits every attack on the attacker-train rows and scores the attacker-test rows.
/// Column 0 must be perplexity (the threshold score); `x_*` are already standardized
/// when standardization is on, and `ppl_*` are the raw perplexities.
pub struct Split<'a> {
    pub x_train: &'a [Vec<f64>],
    pub y_train: &'a [bool],
    pub ppl_train: &'a [f64],
    pub x_test: &'a [Vec<f64>],
    pub y_test: &'a [bool],
    pub ppl_test: &'a [f64],
}

pub fn run_attack(kind: AttackKind, split: &Split<'_>, params: &AttackParams, seed: u64) -> Result<MetricsRow> {
    let probs = |f: &dyn Fn(&[f64]) -> f64| split.x_test.iter().map(|r| f(r)).collect::<Vec<f64>>();
    match kind {
        AttackKind::Threshold => {
            if !split.y_train.iter().any(|&v| v) || split.y_train.iter().all(|&v| v) {
                return Err(AttackError::ClassImbalanceFatal);
            }
            let t = ThresholdAttack::fit(split.ppl_train, split.y_train)?;
            let preds: Vec<bool> = split.ppl_test.iter().map(|&s| t.predict(s)).collect();
            let scores: Vec<f64> = split.ppl_test.iter().map(|s| -s).collect();
            metrics_from(&scores, &preds, split.y_test)
        }
        AttackKind::Logreg => {
            let m = LogisticRegression::fit(split.x_train, split.y_train, params)?;
            evaluate_probabilities(&probs(&|r| m.predict_proba(r)), split.y_test)
        }
        AttackKind::Knn => {
            let m = Knn::fit(split.x_train, split.y_train, params.knn_k)?;
            evaluate_probabilities(&probs(&|r| m.predict_proba(r)), split.y_test)
        }
        AttackKind::Rf => {
            let m = RandomForest::fit(split.x_train, split.y_train, params, seed)?;
            evaluate_probabilities(&probs(&|r| m.predict_proba(r)), split.y_test)
        }
    }
}

/// Shuffles each class separately and sends the first half of each to attacker-train.
/// Returns (train positions, test positions) into `labels`.
pub fn stratified_half_split(labels: &[bool], rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(rng);
        let half = idx.len() / 2;
        train.extend_from_slice(&idx[..half]);
        test.extend_from_slice(&idx[half..]);
    }
    (train, test)
}

fn mean_std(values: &[[f64; 6]]) -> (MetricsRow, MetricsRow) {
    let n = values.len() as f64;
    let mut mean = [0.0; 6];
    let mut std = [0.0; 6];
    for k in 0..6 {
        mean[k] = values.iter().map(|v| v[k]).sum::<f64>() / n;
        std[k] = (values.iter().map(|v| (v[k] - mean[k]).powi(2)).sum::<f64>() / n).sqrt();
    }
    let row = |a: [f64; 6]| MetricsRow { auc: a[0], accuracy: a[1], precision: a[2], recall: a[3], f1: a[4], advantage: a[5] };
    (row(mean), row(std))
}

impl AttackReport {
    pub fn aggregate_for(&self, mode: FeatureMode, attack: AttackKind) -> Option<&AggregateRow> {
        self.aggregate.iter().find(|a| a.mode == mode && a.attack == attack)
    }

    /// Mean AUC over all attacks for one feature mode.
    pub fn mean_auc(&self, mode: FeatureMode) -> Option<f64> {
        let rows: Vec<f64> = self.aggregate.iter().filter(|a| a.mode == mode).map(|a| a.mean.auc).collect();
        (!rows.is_empty()).then(|| rows.iter().sum::<f64>() / rows.len() as f64)
    }

    /// `round,mode,attack,auc,accuracy,precision,recall,f1,advantage`
    pub fn write_rounds_csv<W: Write>(&self, mut sink: W) -> std::io::Result<()> {
        writeln!(sink, "round,mode,attack,{}", METRIC_NAMES.join(","))?;
        for r in &self.rows {
            let v: Vec<String> = r.metrics.values().iter().map(|x| x.to_string()).collect();
            writeln!(sink, "{},{},{},{}", r.round, mode_name(r.mode), r.attack.name(), v.join(","))?;
        }
        Ok(())
    }

    /// Long format for bar plots: `metric,attack,mode,mean,std`.
    pub fn write_plot_csv<W: Write>(&self, mut sink: W) -> std::io::Result<()> {
        writeln!(sink, "metric,attack,mode,mean,std")?;
        for (k, name) in METRIC_NAMES.iter().enumerate() {
            for a in &self.aggregate {
                writeln!(sink, "{name},{},{},{},{}", a.attack.name(), mode_name(a.mode), a.mean.values()[k], a.std.values()[k])?;
            }
        }
        Ok(())
    }
}

struct TargetSets<'a> {
    ids: Vec<&'a SampleProfile>,
    labels: Vec<bool>,
    /// Position of each target in the member+holdout model-feature cache.
    cache_idx: Vec<usize>,
}

/// Runs `config.n_rounds` independent rounds. Model features depend only on the
/// profile and are computed once per sample; synthetic profiles for the hybrid block
/// are regenerated every round with seeds derived from (seed, round, target).
pub fn run_experiment<F: Scalar>(
    model: &Model<F>,
    tokenizer: &Tokenizer,
    train: &Cohort,
    holdout: &Cohort,
    config: &ExperimentConfig,
) -> Result<AttackReport> {
    let n = config.target_cohort_size;
    if n > train.len() || n > holdout.len() {
        return Err(AttackError::CohortTooSmall { requested: n, train: train.len(), holdout: holdout.len() });
    }
    if n < 4 {
        return Err(AttackError::InvalidConfig("target cohort needs at least 4 members for a stratified split".into()));
    }
    if config.n_rounds == 0 || config.attacks.is_empty() || config.modes.is_empty() {
        return Err(AttackError::InvalidConfig("rounds, attacks and modes must be non-empty".into()));
    }
    let everyone: Vec<&SampleProfile> = train.samples().iter().chain(holdout.samples()).collect();
    let model_feats: Vec<ModelFeatureVector> = everyone
        .par_iter()
        .map(|p| model_features(model, tokenizer, p))
        .collect::<std::result::Result<_, _>>()?;

    let rounds: Vec<(RoundInfo, Vec<RoundRow>, Vec<RoundFeatures>)> = (0..config.n_rounds)
        .into_par_iter()
        .map(|round| run_round(model, tokenizer, train, holdout, &model_feats, config, round))
        .collect::<Result<_>>()?;

    let mut infos = Vec::new();
    let mut rows = Vec::new();
    let mut features = Vec::new();
    for (i, r, f) in rounds {
        infos.push(i);
        rows.extend(r);
        features.extend(f);
    }
    let mut aggregate = Vec::new();
    for &mode in &config.modes {
        for &attack in &config.attacks {
            let vals: Vec<[f64; 6]> =
                rows.iter().filter(|r| r.mode == mode && r.attack == attack).map(|r| r.metrics.values()).collect();
            let (mean, std) = mean_std(&vals);
            aggregate.push(AggregateRow { mode, attack, mean, std });
        }
    }
    Ok(AttackReport { feature_version: FEATURE_VERSION, config: config.clone(), rounds: infos, rows, aggregate, features })
}

fn run_round<F: Scalar>(
    model: &Model<F>,
    tokenizer: &Tokenizer,
    train: &Cohort,
    holdout: &Cohort,
    model_feats: &[ModelFeatureVector],
    config: &ExperimentConfig,
    round: usize,
) -> Result<(RoundInfo, Vec<RoundRow>, Vec<RoundFeatures>)> {
    let n = config.target_cohort_size;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, round as u64, 0));
    let mut members: Vec<usize> = (0..train.len()).collect();
    members.shuffle(&mut rng);
    members.truncate(n);
    let mut non: Vec<usize> = (0..holdout.len()).collect();
    non.shuffle(&mut rng);
    non.truncate(n);
    let targets = TargetSets {
        ids: members.iter().map(|&i| &train.samples()[i]).chain(non.iter().map(|&i| &holdout.samples()[i])).collect(),
        labels: std::iter::repeat_n(true, n).chain(std::iter::repeat_n(false, n)).collect(),
        cache_idx: members.iter().copied().chain(non.iter().map(|&i| train.len() + i)).collect(),
    };
    let (tr, te) = stratified_half_split(&targets.labels, &mut rng);
    assert!(tr.iter().all(|i| !te.contains(i)), "attacker train and test overlap");
    let mut y_train: Vec<bool> = tr.iter().map(|&i| targets.labels[i]).collect();
    if config.shuffle_labels {
        y_train.shuffle(&mut rng);
    }
    let y_test: Vec<bool> = te.iter().map(|&i| targets.labels[i]).collect();

    let genomic = if config.modes.contains(&FeatureMode::Hybrid) {
        let g = targets
            .ids
            .par_iter()
            .enumerate()
            .map(|(t, p)| {
                let prompt = p.mutations.first().map(|m| m.to_string()).ok_or_else(|| {
                    AttackError::InvalidConfig(format!("target {} has no mutations to prompt with", p.sample_id))
                })?;
                let params = SamplingParams { seed: derive_seed(config.seed, round as u64, 1 + t as u64), ..config.generation };
                let generated = generate_profile(model, tokenizer, &prompt, &params, &p.sample_id)?;
                Ok(genomic_features(generated.generated()))
            })
            .collect::<Result<Vec<_>>>()?;
        Some(g)
    } else {
        None
    };

    let mut rows = Vec::new();
    let mut feats = Vec::new();
    for &mode in &config.modes {
        let raw: Vec<Vec<f64>> = (0..targets.ids.len())
            .map(|t| {
                let g = match mode {
                    FeatureMode::Hybrid => genomic.as_ref().map(|g| &g[t]),
                    FeatureMode::ModelOnly => None,
                };
                raw_vector(&model_feats[targets.cache_idx[t]], g, config.genomic_scale)
            })
            .collect();
        let pick = |idx: &[usize]| idx.iter().map(|&i| raw[i].clone()).collect::<Vec<_>>();
        let (mut x_train, mut x_test) = (pick(&tr), pick(&te));
        let standardizer = if config.standardize {
            let s = Standardizer::fit(&x_train)?;
            x_train = s.transform_all(&x_train)?;
            x_test = s.transform_all(&x_test)?;
            Some(s)
        } else {
            None
        };
        let ppl = |idx: &[usize]| idx.iter().map(|&i| raw[i][0]).collect::<Vec<f64>>();
        let (ppl_train, ppl_test) = (ppl(&tr), ppl(&te));
        let split = Split {
            x_train: &x_train,
            y_train: &y_train,
            ppl_train: &ppl_train,
            x_test: &x_test,
            y_test: &y_test,
            ppl_test: &ppl_test,
        };
        for &attack in &config.attacks {
            let seed = derive_seed(config.seed, round as u64, 1 << 32 | attack as u64);
            let metrics = run_attack(attack, &split, &config.params, seed)?;
            rows.push(RoundRow { round, mode, attack, metrics });
        }
        feats.push(RoundFeatures {
            round,
            mode,
            names: feature_names(mode),
            rows: (0..raw.len()).map(|t| (targets.ids[t].sample_id.clone(), targets.labels[t], raw[t].clone())).collect(),
            standardizer,
        });
    }
    let id = |i: &usize| targets.ids[*i].sample_id.clone();
    let info = RoundInfo {
        round,
        members: targets.ids[..n].iter().map(|p| p.sample_id.clone()).collect(),
        non_members: targets.ids[n..].iter().map(|p| p.sample_id.clone()).collect(),
        attacker_train: tr.iter().map(id).collect(),
        attacker_test: te.iter().map(id).collect(),
    };
    Ok((info, rows, feats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transformer::{ModelConfig, Preset};
    use crate::vcf::{read_corpus, Origin};

    fn cohort(prefix: &str, n: usize, offset: u64) -> Cohort {
        let text: String = (0..n)
            .map(|i| format!("22:{}:A>G_0|1 22:{}:C>T_1|1\n", 10 + i as u64 + offset, 500 + i))
            .collect();
        read_corpus(text.as_bytes(), prefix, Origin::Real).unwrap()
    }

    fn setup() -> (Model<f32>, Tokenizer, Cohort, Cohort) {
        let train = cohort("m", 12, 0);
        let holdout = cohort("h", 10, 100);
        let lines: Vec<String> = train.samples().iter().map(|s| s.corpus_line()).collect();
        let tok = Tokenizer::train(&lines, 300).unwrap();
        let m = Model::init(ModelConfig::preset(Preset::Tiny, tok.vocab_size(), 1)).unwrap();
        (m, tok, train, holdout)
    }

    fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            target_cohort_size: 6,
            n_rounds: 3,
            generation: SamplingParams { max_new_tokens: 12, ..Default::default() },
            params: AttackParams { rf_trees: 10, ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn paired_blocks_and_determinism() {
        let (m, tok, train, holdout) = setup();
        let c = small_config();
        let a = run_experiment(&m, &tok, &train, &holdout, &c).unwrap();
        let b = run_experiment(&m, &tok, &train, &holdout, &c).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 3 * 2 * 4);
        for r in &a.rows {
            assert_eq!(r.metrics.advantage, r.metrics.auc - 0.5);
        }
        for info in &a.rounds {
            assert_eq!(info.attacker_train.len() + info.attacker_test.len(), 12);
            assert!(info.attacker_train.iter().all(|t| !info.attacker_test.contains(t)));
        }
        // model-only features are the first five hybrid features
        for pair in a.features.chunks(2) {
            assert_eq!(pair[0].round, pair[1].round);
            for (x, y) in pair[0].rows.iter().zip(&pair[1].rows) {
                assert_eq!((&x.0, x.1), (&y.0, y.1));
                assert_eq!(&x.2[..], &y.2[..5]);
            }
        }
        let mut csv = Vec::new();
        a.write_rounds_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 25);
    }

    #[test]
    fn cohort_too_small() {
        let (m, tok, train, holdout) = setup();
        let c = ExperimentConfig { target_cohort_size: 11, ..small_config() };
        assert!(matches!(run_experiment(&m, &tok, &train, &holdout, &c), Err(AttackError::CohortTooSmall { .. })));
    }

    #[test]
    fn stratified_split_halves_each_class() {
        let labels: Vec<bool> = (0..20).map(|i| i < 10).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (tr, te) = stratified_half_split(&labels, &mut rng);
        assert_eq!(tr.iter().filter(|&&i| labels[i]).count(), 5);
        assert_eq!(te.iter().filter(|&&i| !labels[i]).count(), 5);
    }
}

//! Membership-inference features.
//!
//! Model block (always first, in this order): perplexity, avg_loss,
//! loss_variance, avg_logit_magnitude, avg_confidence.
//!
//! Genomic block (hybrid mode only): mutation_rate, gt_hom_ref, gt_het,
//! gt_hom_alt, deletion, insertion, substitution, biallelic, multiallelic.
//! The five count features are either raw counts or ratios; type counts are
//! normalized by the number of alternate alleles and nature counts by the
//! number of mutations.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tokenizer::Tokenizer;
use crate::transformer::{ForwardStats, Model, ModelError, Scalar};
use crate::utility::{allele_nature, GenotypeCounts, NatureCounts};
use crate::vcf::{Mutation, SampleProfile};

/// Bumped whenever the feature order or definitions change.
pub const FEATURE_VERSION: u32 = 1;

pub const MODEL_FEATURES: [&str; 5] =
    ["perplexity", "avg_loss", "loss_variance", "avg_logit_magnitude", "avg_confidence"];

pub const GENOMIC_FEATURES: [&str; 9] = [
    "mutation_rate",
    "gt_hom_ref",
    "gt_het",
    "gt_hom_alt",
    "deletion",
    "insertion",
    "substitution",
    "biallelic",
    "multiallelic",
];

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("sequence of {0} tokens is too short to score")]
    SequenceTooShort(usize),
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("cannot fit a standardizer on an empty matrix")]
    EmptyMatrix,
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, FeatureError>;

/// Consecutive non-overlapping windows; a trailing window shorter than 2 is dropped.
pub fn subsequence_split(ids: &[u32], max_seq_len: usize) -> Result<Vec<&[u32]>> {
    if ids.len() < 2 {
        return Err(FeatureError::SequenceTooShort(ids.len()));
    }
    Ok(ids.chunks(max_seq_len.max(2)).filter(|w| w.len() >= 2).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelFeatureVector {
    pub perplexity: f64,
    pub avg_loss: f64,
    pub loss_variance: f64,
    pub avg_logit_magnitude: f64,
    pub avg_confidence: f64,
}

impl ModelFeatureVector {
    pub fn to_vec(&self) -> Vec<f64> {
        vec![self.perplexity, self.avg_loss, self.loss_variance, self.avg_logit_magnitude, self.avg_confidence]
    }
}

/// Perplexity features saturate at `exp(MAX_LOG_PERPLEXITY)`.
pub const MAX_LOG_PERPLEXITY: f64 = 700.0;

/// Combines per-window statistics: perplexity and confidence are weighted by scored
/// tokens; loss mean, loss variance (population) and logit norm are per window.
pub fn aggregate_windows(windows: &[ForwardStats]) -> Result<ModelFeatureVector> {
    if windows.is_empty() {
        return Err(FeatureError::SequenceTooShort(0));
    }
    let n = windows.len() as f64;
    let tokens: usize = windows.iter().map(|w| w.scored_tokens).sum();
    let weighted_nll = windows.iter().map(|w| w.loss * w.scored_tokens as f64).sum::<f64>() / tokens as f64;
    let avg_loss = windows.iter().map(|w| w.loss).sum::<f64>() / n;
    let loss_variance = windows.iter().map(|w| (w.loss - avg_loss).powi(2)).sum::<f64>() / n;
    Ok(ModelFeatureVector {
        // capped so a diverged model still yields finite features
        perplexity: weighted_nll.min(MAX_LOG_PERPLEXITY).exp(),
        avg_loss,
        loss_variance,
        avg_logit_magnitude: windows.iter().map(|w| w.logit_l2).sum::<f64>() / n,
        avg_confidence: windows.iter().map(|w| w.confidence_sum).sum::<f64>() / tokens as f64,
    })
}

pub fn model_features_for_ids<F: Scalar>(model: &Model<F>, ids: &[u32]) -> Result<ModelFeatureVector> {
    let windows = subsequence_split(ids, model.config().max_seq_len)?;
    let stats = windows.iter().map(|w| model.forward_stats(w)).collect::<std::result::Result<Vec<_>, _>>()?;
    aggregate_windows(&stats)
}

/// Features of a profile encoded exactly like a training line.
pub fn model_features<F: Scalar>(
    model: &Model<F>,
    tokenizer: &Tokenizer,
    profile: &SampleProfile,
) -> Result<ModelFeatureVector> {
    model_features_for_ids(model, &tokenizer.encode_profile_line(&profile.corpus_line()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenomicScale {
    Ratio,
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenomicFeatureVector {
    pub n_mutations: usize,
    pub mutation_rate: f64,
    pub genotypes: GenotypeCounts,
    pub nature: NatureCounts,
    pub biallelic: usize,
    pub multiallelic: usize,
    /// Set when the profile had no generated mutations; every feature is then 0.
    pub empty: bool,
}

/// Features over the generated mutations of one synthetic profile (prompt excluded).
pub fn genomic_features(generated: &[Mutation]) -> GenomicFeatureVector {
    let mut genotypes = GenotypeCounts::default();
    let mut nature = NatureCounts::default();
    let mut multi = 0;
    let mut carriers = 0;
    for m in generated {
        genotypes.add(&m.genotype);
        carriers += m.genotype.carries_alt() as usize;
        multi += m.is_multiallelic() as usize;
        for alt in &m.alt_alleles {
            nature.add(allele_nature(&m.ref_allele, alt));
        }
    }
    let n = generated.len();
    GenomicFeatureVector {
        n_mutations: n,
        mutation_rate: if n == 0 { 0.0 } else { carriers as f64 / n as f64 },
        genotypes,
        nature,
        biallelic: n - multi,
        multiallelic: multi,
        empty: n == 0,
    }
}

impl GenomicFeatureVector {
    pub fn to_vec(&self, scale: GenomicScale) -> Vec<f64> {
        let f = self.genotypes.frequencies();
        let (hr, het, ha) = f.map_or((0.0, 0.0, 0.0), |f| (f.hom_ref, f.het, f.hom_alt));
        let alleles = self.nature.total().max(1) as f64;
        let muts = self.n_mutations.max(1) as f64;
        let (type_div, nature_div) = match scale {
            GenomicScale::Ratio => (alleles, muts),
            GenomicScale::Raw => (1.0, 1.0),
        };
        vec![
            self.mutation_rate,
            hr,
            het,
            ha,
            self.nature.deletions as f64 / type_div,
            self.nature.insertions as f64 / type_div,
            self.nature.substitutions as f64 / type_div,
            self.biallelic as f64 / nature_div,
            self.multiallelic as f64 / nature_div,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMode {
    ModelOnly,
    Hybrid,
}

pub fn feature_names(mode: FeatureMode) -> Vec<String> {
    let mut v: Vec<String> = MODEL_FEATURES.iter().map(|s| s.to_string()).collect();
    if mode == FeatureMode::Hybrid {
        v.extend(GENOMIC_FEATURES.iter().map(|s| s.to_string()));
    }
    v
}

/// Unstandardized vector: the model block followed by the genomic block when given.
pub fn raw_vector(model: &ModelFeatureVector, genomic: Option<&GenomicFeatureVector>, scale: GenomicScale) -> Vec<f64> {
    let mut v = model.to_vec();
    if let Some(g) = genomic {
        v.extend(g.to_vec(scale));
    }
    v
}

/// Per-column z-scoring with population standard deviation. A constant column is
/// only centred.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows.first().ok_or(FeatureError::EmptyMatrix)?;
        let d = first.len();
        for r in rows {
            if r.len() != d {
                return Err(FeatureError::DimensionMismatch { expected: d, got: r.len() });
            }
        }
        let n = rows.len() as f64;
        let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let std = (0..d)
            .map(|j| (rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt())
            .collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.dim() {
            return Err(FeatureError::DimensionMismatch { expected: self.dim(), got: row.len() });
        }
        Ok(row
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| if *s > 0.0 { (x - m) / s } else { x - m })
            .collect())
    }

    pub fn transform_all(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        rows.iter().map(|r| self.transform(r)).collect()
    }
}

/// Concatenated and standardized feature vector.
pub fn hybrid_features(
    model: &ModelFeatureVector,
    genomic: Option<&GenomicFeatureVector>,
    scale: GenomicScale,
    standardizer: &Standardizer,
) -> Result<Vec<f64>> {
    standardizer.transform(&raw_vector(model, genomic, scale))
}

/// Header `sample_id,label,<features…>`, one row per sample; label 1 = member.
pub fn write_feature_csv<W: Write>(
    names: &[String],
    rows: &[(String, bool, Vec<f64>)],
    mut sink: W,
) -> std::io::Result<()> {
    writeln!(sink, "sample_id,label,{}", names.join(","))?;
    for (id, member, v) in rows {
        let vals: Vec<String> = v.iter().map(|x| x.to_string()).collect();
        writeln!(sink, "{id},{},{}", *member as u8, vals.join(","))?;
    }
    Ok(())
}

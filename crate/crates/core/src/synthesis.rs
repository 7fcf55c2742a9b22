//! Synthetic cohorts from a trained model: prompt selection, sampling, and
//! parsing the generated text back into profiles.
//!
//! A profile holds the prompt mutation first, followed by every generated
//! chunk that parses as a mutation, in generation order. Invalid chunks are
//! kept only in the generation record. Counts reported here cover the newly
//! generated chunks and never the prompt.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tokenizer::{SpecialToken, Tokenizer, TokenizerError};
use crate::transformer::{generate, Model, ModelError, SamplingParams, Scalar};
use crate::vcf::{write_corpus, Cohort, Mutation, Origin, SampleProfile, VcfError};

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("no prompts given")]
    NoPrompts,
    #[error("{prompts} prompts for {n_samples} samples")]
    PromptCountMismatch { prompts: usize, n_samples: usize },
    #[error("prompt {0:?} is not a valid mutation")]
    InvalidPrompt(String),
    #[error("cannot pick prompts: {0}")]
    PromptSource(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Vcf(#[from] VcfError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SynthesisError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "kebab-case")]
pub enum PromptSource {
    Fixed(String),
    /// First mutation of each target profile.
    PerTarget,
    /// A uniformly chosen mutation of a uniformly chosen training profile.
    RandomTrain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationSpec {
    pub n_samples: usize,
    pub prompt_source: PromptSource,
    pub max_new_tokens: usize,
    pub temperature: f64,
    pub top_k: usize,
    pub seed: u64,
}

impl Default for GenerationSpec {
    fn default() -> Self {
        Self {
            n_samples: 50,
            prompt_source: PromptSource::RandomTrain,
            max_new_tokens: 256,
            temperature: 1.0,
            top_k: 50,
            seed: 0,
        }
    }
}

impl GenerationSpec {
    fn sampling(&self, seed: u64) -> SamplingParams {
        SamplingParams { max_new_tokens: self.max_new_tokens, temperature: self.temperature, top_k: self.top_k, seed }
    }
}

/// Audit trail of one generated profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub sample_id: String,
    pub prompt: String,
    pub seed: u64,
    pub raw_text: String,
    pub valid_chunks: usize,
    pub invalid_chunks: Vec<String>,
}

impl GenerationRecord {
    pub fn total_chunks(&self) -> usize {
        self.valid_chunks + self.invalid_chunks.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedProfile {
    pub profile: SampleProfile,
    pub record: GenerationRecord,
}

impl GeneratedProfile {
    /// Mutations produced by the model, prompt excluded.
    pub fn generated(&self) -> &[Mutation] {
        &self.profile.mutations[1..]
    }
}

/// Splits raw output on whitespace into (valid mutations, invalid chunks).
pub fn classify_chunks(raw: &str) -> (Vec<Mutation>, Vec<String>) {
    let mut valid = Vec::new();
    let mut invalid = Vec::new();
    for chunk in raw.split_whitespace() {
        match chunk.parse::<Mutation>() {
            Ok(m) => valid.push(m),
            Err(_) => invalid.push(chunk.to_string()),
        }
    }
    (valid, invalid)
}

/// Model input for a prompt: BOS, then the mutation followed by the separator
/// space exactly as it appears inside a corpus line.
pub fn prompt_ids(tokenizer: &Tokenizer, prompt: &str) -> Vec<u32> {
    let mut ids = vec![tokenizer.special_id(SpecialToken::Bos)];
    ids.extend(tokenizer.encode(format!("{prompt} ").as_bytes()));
    ids
}

pub fn generate_profile<F: Scalar>(
    model: &Model<F>,
    tokenizer: &Tokenizer,
    prompt: &str,
    params: &SamplingParams,
    sample_id: &str,
) -> Result<GeneratedProfile> {
    let prompt = prompt.trim();
    if prompt.is_empty() {
        return Err(SynthesisError::EmptyPrompt);
    }
    let first: Mutation = prompt.parse().map_err(|_| SynthesisError::InvalidPrompt(prompt.to_string()))?;
    let ids = prompt_ids(tokenizer, prompt);
    let out = generate(model, tokenizer, &ids, params)?;
    let raw_text = tokenizer.decode(&out[ids.len()..])?;
    let (valid, invalid_chunks) = classify_chunks(&raw_text);
    let valid_chunks = valid.len();
    let mut mutations = Vec::with_capacity(valid_chunks + 1);
    mutations.push(first);
    mutations.extend(valid);
    Ok(GeneratedProfile {
        profile: SampleProfile { sample_id: sample_id.to_string(), mutations, origin: Origin::Synthetic },
        record: GenerationRecord {
            sample_id: sample_id.to_string(),
            prompt: prompt.to_string(),
            seed: params.seed,
            raw_text,
            valid_chunks,
            invalid_chunks,
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCohort {
    pub cohort: Cohort,
    pub records: Vec<GenerationRecord>,
}

impl SyntheticCohort {
    /// The same profiles with the prompt mutation removed from each.
    pub fn generated_only(&self) -> Cohort {
        strip_prompts(&self.cohort)
    }

    pub fn save(&self, cohort_path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(cohort_path)?);
        write_corpus(self.cohort.samples(), &mut f)?;
        f.flush()?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(sidecar_path(cohort_path))?);
        serde_json::to_writer_pretty(&mut f, &self.records)?;
        f.write_all(b"\n")?;
        f.flush()?;
        Ok(())
    }
}

/// Drops the first mutation of every profile.
pub fn strip_prompts(cohort: &Cohort) -> Cohort {
    let samples = cohort
        .samples()
        .iter()
        .map(|s| SampleProfile { mutations: s.mutations.iter().skip(1).cloned().collect(), ..s.clone() })
        .collect();
    Cohort::new(samples).expect("ids stay unique")
}

/// `cohort.txt` → `cohort.generation.json`.
pub fn sidecar_path(cohort_path: &Path) -> PathBuf {
    cohort_path.with_extension("generation.json")
}

pub fn load_generation_records(cohort_path: &Path) -> Result<Vec<GenerationRecord>> {
    let f = std::fs::File::open(sidecar_path(cohort_path))?;
    Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
}

/// One profile per prompt (a single prompt is broadcast to `spec.n_samples`); profile i
/// uses seed `spec.seed + i` and id `synth_{i}`.
pub fn generate_cohort<F: Scalar>(
    model: &Model<F>,
    tokenizer: &Tokenizer,
    prompts: &[String],
    spec: &GenerationSpec,
) -> Result<SyntheticCohort> {
    if prompts.is_empty() || spec.n_samples == 0 {
        return Err(SynthesisError::NoPrompts);
    }
    if prompts.len() != 1 && prompts.len() != spec.n_samples {
        return Err(SynthesisError::PromptCountMismatch { prompts: prompts.len(), n_samples: spec.n_samples });
    }
    let generated: Vec<GeneratedProfile> = (0..spec.n_samples)
        .into_par_iter()
        .map(|i| {
            let prompt = if prompts.len() == 1 { &prompts[0] } else { &prompts[i] };
            let params = spec.sampling(spec.seed.wrapping_add(i as u64));
            generate_profile(model, tokenizer, prompt, &params, &format!("synth_{i}"))
        })
        .collect::<Result<_>>()?;
    let (profiles, records) = generated.into_iter().map(|g| (g.profile, g.record)).unzip();
    Ok(SyntheticCohort { cohort: Cohort::new(profiles)?, records })
}

/// Resolves a prompt source to concrete prompt strings.
pub fn select_prompts(
    source: &PromptSource,
    n: usize,
    train: &Cohort,
    targets: Option<&Cohort>,
    seed: u64,
) -> Result<Vec<String>> {
    match source {
        PromptSource::Fixed(p) => Ok(vec![p.clone(); n]),
        PromptSource::PerTarget => {
            let targets = targets.ok_or_else(|| SynthesisError::PromptSource("per-target prompts need targets".into()))?;
            targets
                .samples()
                .iter()
                .take(n)
                .map(|s| {
                    s.mutations.first().map(|m| m.to_string()).ok_or_else(|| {
                        SynthesisError::PromptSource(format!("target {} has no mutations", s.sample_id))
                    })
                })
                .collect()
        }
        PromptSource::RandomTrain => {
            let pool: Vec<&SampleProfile> = train.samples().iter().filter(|s| !s.mutations.is_empty()).collect();
            if pool.is_empty() {
                return Err(SynthesisError::PromptSource("training cohort has no mutations".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok((0..n)
                .map(|_| {
                    let s = pool[rng.gen_range(0..pool.len())];
                    s.mutations[rng.gen_range(0..s.mutations.len())].to_string()
                })
                .collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transformer::{ModelConfig, Preset};

    fn setup() -> (Model<f32>, Tokenizer) {
        let lines = ["22:1:A>G_0|1 22:9:C>T_1|1", "22:1:A>G_1|1 22:5:AT>A_0|1"];
        let tok = Tokenizer::train(&lines, 300).unwrap();
        let c = ModelConfig::preset(Preset::Tiny, tok.vocab_size(), 2);
        (Model::init_with_std(c, 0.3).unwrap(), tok)
    }

    #[test]
    fn chunk_classification() {
        let (v, i) = classify_chunks("22:1:A>G_0|1 junk 22:9:C>T_1|1");
        assert_eq!(v.len(), 2);
        assert_eq!(i, vec!["junk".to_string()]);
        let (v, i) = classify_chunks("  ");
        assert!(v.is_empty() && i.is_empty());
    }

    #[test]
    fn greedy_is_deterministic_and_counts_add_up() {
        let (m, tok) = setup();
        let p = SamplingParams { max_new_tokens: 40, temperature: 0.0, top_k: 0, seed: 0 };
        let a = generate_profile(&m, &tok, "22:1:A>G_0|1", &p, "x").unwrap();
        let b = generate_profile(&m, &tok, "22:1:A>G_0|1", &p, "x").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.profile.mutations[0].to_string(), "22:1:A>G_0|1");
        assert_eq!(a.record.total_chunks(), a.record.raw_text.split_whitespace().count());
        assert_eq!(a.generated().len(), a.record.valid_chunks);
    }

    #[test]
    fn eos_only_model_yields_prompt_only() {
        let (mut m, tok) = setup();
        // make EOS dominate every position through a large tied embedding row
        let eos = tok.special_id(SpecialToken::Eos) as usize;
        let d = m.config().d_model;
        let lnf_b = m.param_groups().into_iter().find(|(n, _)| n == "lnf.b").unwrap().1;
        for j in 0..d {
            m.weights_mut()[eos * d + j] = 50.0;
            m.weights_mut()[lnf_b.start + j] = 1.0;
        }
        let p = SamplingParams { max_new_tokens: 10, temperature: 0.0, top_k: 0, seed: 0 };
        let g = generate_profile(&m, &tok, "22:1:A>G_0|1", &p, "x").unwrap();
        assert_eq!(g.profile.mutations.len(), 1);
        assert_eq!(g.record.total_chunks(), 0);
    }

    #[test]
    fn prompt_errors() {
        let (m, tok) = setup();
        let p = SamplingParams::default();
        assert!(matches!(generate_profile(&m, &tok, " ", &p, "x"), Err(SynthesisError::EmptyPrompt)));
        assert!(matches!(generate_profile(&m, &tok, "nope", &p, "x"), Err(SynthesisError::InvalidPrompt(_))));
    }

    #[test]
    fn cohort_broadcast_and_seeds() {
        let (m, tok) = setup();
        let spec = GenerationSpec { n_samples: 3, max_new_tokens: 20, seed: 10, ..Default::default() };
        let c = generate_cohort(&m, &tok, &["22:1:A>G_0|1".to_string()], &spec).unwrap();
        assert_eq!(c.cohort.len(), 3);
        let seeds: Vec<u64> = c.records.iter().map(|r| r.seed).collect();
        assert_eq!(seeds, vec![10, 11, 12]);
        assert_eq!(c.cohort.samples()[2].sample_id, "synth_2");
        let again = generate_cohort(&m, &tok, &["22:1:A>G_0|1".to_string()], &spec).unwrap();
        assert_eq!(c, again);
        assert!(matches!(generate_cohort(&m, &tok, &[], &spec), Err(SynthesisError::NoPrompts)));
        let two = vec!["22:1:A>G_0|1".to_string(); 2];
        assert!(matches!(generate_cohort(&m, &tok, &two, &spec), Err(SynthesisError::PromptCountMismatch { .. })));
        assert_eq!(c.generated_only().samples()[0].mutations.len(), c.records[0].valid_chunks);
    }

    #[test]
    fn prompt_sources() {
        let train = crate::vcf::read_corpus("22:1:A>G_0|1 22:9:C>T_1|1\n22:5:AT>A_0|1\n".as_bytes(), "t", Origin::Real)
            .unwrap();
        let r = select_prompts(&PromptSource::RandomTrain, 5, &train, None, 1).unwrap();
        assert_eq!(r.len(), 5);
        assert!(r.iter().all(|p| train.mutation_texts().contains(p)));
        let per = select_prompts(&PromptSource::PerTarget, 2, &train, Some(&train), 0).unwrap();
        assert_eq!(per, vec!["22:1:A>G_0|1".to_string(), "22:5:AT>A_0|1".to_string()]);
        assert!(select_prompts(&PromptSource::PerTarget, 2, &train, None, 0).is_err());
    }

    #[test]
    fn save_writes_sidecar() {
        let (m, tok) = setup();
        let spec = GenerationSpec { n_samples: 2, max_new_tokens: 10, ..Default::default() };
        let c = generate_cohort(&m, &tok, &["22:1:A>G_0|1".to_string()], &spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cohort.txt");
        c.save(&p).unwrap();
        assert_eq!(load_generation_records(&p).unwrap(), c.records);
        assert!(dir.path().join("cohort.generation.json").exists());
    }
}

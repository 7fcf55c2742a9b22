use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Model, ModelError, Result, Scalar};
use crate::tokenizer::{SpecialToken, TokenId, Tokenizer};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub max_new_tokens: usize,
    /// 0 selects greedy decoding.
    pub temperature: f64,
    /// 0 disables top-k filtering.
    pub top_k: usize,
    pub seed: u64,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self { max_new_tokens: 256, temperature: 1.0, top_k: 50, seed: 0 }
    }
}

/// Lowest id wins ties.
fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn sample_row<R: Rng>(row: &[f64], temperature: f64, top_k: usize, rng: &mut R) -> usize {
    if temperature == 0.0 {
        return argmax(row);
    }
    let mut order: Vec<usize> = (0..row.len()).collect();
    // descending logit, ascending id
    order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    if top_k > 0 && top_k < order.len() {
        order.truncate(top_k);
    }
    if order.len() == 1 {
        return order[0];
    }
    let max = row[order[0]];
    let weights: Vec<f64> = order.iter().map(|&i| ((row[i] - max) / temperature).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (&i, &w) in order.iter().zip(&weights) {
        if u < w {
            return i;
        }
        u -= w;
    }
    *order.last().unwrap()
}

/// Autoregressive continuation of `prompt`. Returns prompt plus new tokens; a sampled
/// EOS or SEP ends generation and is not included. The context keeps the last
/// `max_seq_len` tokens.
pub fn generate<F: Scalar>(
    model: &Model<F>,
    tokenizer: &Tokenizer,
    prompt: &[TokenId],
    params: &SamplingParams,
) -> Result<Vec<TokenId>> {
    if prompt.is_empty() {
        return Err(ModelError::EmptyPrompt);
    }
    if params.temperature < 0.0 || !params.temperature.is_finite() {
        return Err(ModelError::InvalidConfig(format!("temperature {}", params.temperature)));
    }
    let stops = [tokenizer.special_id(SpecialToken::Eos), tokenizer.special_id(SpecialToken::Sep)];
    let window = model.config().max_seq_len;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut ids = prompt.to_vec();
    for _ in 0..params.max_new_tokens {
        let ctx = &ids[ids.len().saturating_sub(window)..];
        let logits = model.forward(ctx)?;
        let last: Vec<f64> = logits.row(ctx.len() - 1).iter().map(|v| v.to_f64().unwrap()).collect();
        let next = sample_row(&last, params.temperature, params.top_k, &mut rng) as TokenId;
        if stops.contains(&next) {
            break;
        }
        ids.push(next);
    }
    Ok(ids)
}

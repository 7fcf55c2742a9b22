//! Training loops: plain minibatch SGD and DP-SGD (per-sample clipping, Gaussian
//! noise, Poisson-sampled lots, Rényi-DP accounting).
//!
//! A training record is one whole profile line, so the privacy unit is one
//! individual. Profiles longer than the context are cut to a uniformly random
//! window of `max_seq_len + 1` tokens (inputs plus the shifted targets) each time
//! they are drawn.

pub mod accountant;

use std::io::Write;
use std::path::PathBuf;

use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use accountant::{
    account_epsilon, default_orders, epsilon_from_rdp, rdp_subsampled_gaussian, PrivacyLedger,
};

use crate::transformer::{save_checkpoint, GradientSet, Model, ModelError, Scalar};

#[derive(Debug, Error)]
pub enum DpError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("noise multiplier is zero: epsilon is infinite")]
    SigmaZero,
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("non-finite loss at step {step} (sample {sample})")]
    NonFiniteLoss { step: usize, sample: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, DpError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpConfig {
    pub clip_norm: f64,
    pub noise_multiplier: f64,
    /// Expected lot size L; the sampling rate is L / N.
    pub lot_size: usize,
    pub delta: f64,
    /// `None` means no budget-based stopping.
    pub target_epsilon: Option<f64>,
}

impl Default for DpConfig {
    fn default() -> Self {
        Self { clip_norm: 1.0, noise_multiplier: 1.0, lot_size: 8, delta: 1e-5, target_epsilon: Some(1.0) }
    }
}

impl DpConfig {
    pub fn validate(&self, dataset_size: usize) -> Result<()> {
        let bad = |m: String| Err(DpError::InvalidConfig(m));
        if !(self.clip_norm > 0.0 && self.clip_norm.is_finite()) {
            return bad(format!("clip norm {} must be positive", self.clip_norm));
        }
        if !(self.noise_multiplier >= 0.0 && self.noise_multiplier.is_finite()) {
            return bad(format!("noise multiplier {} must be non-negative", self.noise_multiplier));
        }
        if self.lot_size == 0 || self.lot_size > dataset_size {
            return bad(format!("lot size {} outside 1..={dataset_size}", self.lot_size));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta {} outside (0, 1)", self.delta));
        }
        if let Some(e) = self.target_epsilon {
            if !(e > 0.0) {
                return bad(format!("target epsilon {e} must be positive"));
            }
        }
        if self.delta >= 1.0 / dataset_size as f64 {
            log::warn!("delta {} is not below 1/N = {}", self.delta, 1.0 / dataset_size as f64);
        }
        Ok(())
    }

    pub fn sampling_rate(&self, dataset_size: usize) -> f64 {
        self.lot_size as f64 / dataset_size as f64
    }
}

/// Smallest noise multiplier (to 1e-4 relative) whose ε after `steps` stays within `target`.
pub fn calibrate_noise_multiplier(q: f64, steps: u64, delta: f64, target: f64) -> Result<f64> {
    let (mut lo, mut hi) = (1e-2, 1.0);
    while account_epsilon(q, hi, steps, delta)? > target {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(DpError::InvalidConfig(format!("target epsilon {target} unreachable")));
        }
    }
    while (hi - lo) / hi > 1e-4 {
        let mid = 0.5 * (lo + hi);
        if account_epsilon(q, mid, steps, delta)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// `grad × min(1, C / ‖grad‖₂)`. The result's global norm, measured in f64, never exceeds C
/// even after rounding in lower precision.
pub fn clip_per_sample<F: Scalar>(grad: &GradientSet<F>, clip_norm: f64) -> Result<GradientSet<F>> {
    if !(clip_norm > 0.0) {
        return Err(DpError::InvalidConfig(format!("clip norm {clip_norm} must be positive")));
    }
    if !grad.is_finite() {
        return Err(DpError::NonFiniteGradient);
    }
    let norm = grad.l2_norm();
    let mut out = grad.clone();
    if norm <= clip_norm {
        return Ok(out);
    }
    out.scale(F::from_f64(clip_norm / norm).unwrap());
    // rounding of the scaled values can leave the norm a few ulps above C
    let mut n = out.l2_norm();
    while n > clip_norm {
        out.scale(F::from_f64(clip_norm / n * (1.0 - 1e-6)).unwrap());
        n = out.l2_norm();
    }
    Ok(out)
}

/// `(Σ gᵢ + N(0, σ²C² I)) / L`, summed in slice order; noise is drawn in f64 from `rng`.
pub fn noisy_aggregate<F: Scalar, R: Rng>(
    clipped: &[GradientSet<F>],
    dim: usize,
    noise_multiplier: f64,
    clip_norm: f64,
    lot_size: usize,
    rng: &mut R,
) -> GradientSet<F> {
    let mut sum = vec![0.0f64; dim];
    for g in clipped {
        for (s, v) in sum.iter_mut().zip(&g.0) {
            *s += v.to_f64().unwrap();
        }
    }
    let std = noise_multiplier * clip_norm;
    let inv_l = 1.0 / lot_size as f64;
    GradientSet(
        sum.into_iter()
            .map(|s| {
                let noise = if std > 0.0 { std * rng.sample::<f64, _>(StandardNormal) } else { 0.0 };
                F::from_f64((s + noise) * inv_l).unwrap()
            })
            .collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Plain,
    Dp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    /// Linear decay from the base rate to `base × final_fraction` at `max_steps`.
    Linear { final_fraction: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub learning_rate: f64,
    pub schedule: LrSchedule,
    pub momentum: f64,
    pub max_steps: usize,
    /// Minibatch size in plain mode; DP mode uses the lot size instead.
    pub batch_size: usize,
    pub seed: u64,
    /// Full-corpus evaluation (and checkpoint) every this many steps; 0 disables.
    pub eval_every: usize,
    /// Plain mode stops once the full-corpus evaluation loss drops below this.
    pub stop_below_loss: Option<f64>,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Plain,
            learning_rate: 0.1,
            schedule: LrSchedule::Constant,
            momentum: 0.0,
            max_steps: 100,
            batch_size: 8,
            seed: 0,
            eval_every: 0,
            stop_below_loss: None,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(DpError::InvalidConfig(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(DpError::InvalidConfig(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if self.batch_size == 0 {
            return Err(DpError::InvalidConfig("batch size must be at least 1".into()));
        }
        if let LrSchedule::Linear { final_fraction } = self.schedule {
            if !(0.0..=1.0).contains(&final_fraction) {
                return Err(DpError::InvalidConfig(format!("final fraction {final_fraction} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Linear { final_fraction } => {
                let t = if self.max_steps <= 1 { 0.0 } else { step as f64 / (self.max_steps - 1) as f64 };
                self.learning_rate * (1.0 - t * (1.0 - final_fraction))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    /// 1-based index of the completed update.
    pub step: usize,
    /// Mean loss over the sequences of this step's batch or lot (NaN for an empty lot).
    pub loss: f64,
    pub batch_len: usize,
    pub lr: f64,
    pub epsilon: Option<f64>,
    pub eval_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub record: LossRecord,
    /// Largest post-clip per-sample norm in the lot (DP mode only).
    pub max_clipped_norm: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxSteps,
    BudgetExhausted,
    LossTarget,
}

pub struct TrainOutcome<F> {
    pub model: Model<F>,
    pub ledger: Option<PrivacyLedger>,
    pub history: Vec<LossRecord>,
    pub stop_reason: StopReason,
}

/// Step-at-a-time trainer. Independent ChaCha streams drive windows, batch/lot
/// selection, noise and dropout, so each is reproducible on its own.
pub struct Trainer<F: Scalar> {
    model: Model<F>,
    corpus: Vec<Vec<u32>>,
    config: TrainConfig,
    dp: Option<DpConfig>,
    ledger: Option<PrivacyLedger>,
    window_rng: ChaCha8Rng,
    batch_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    dropout_rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    velocity: Option<Vec<F>>,
    steps: usize,
    history: Vec<LossRecord>,
}

fn stream(seed: u64, tag: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag);
    rng
}

impl<F: Scalar> Trainer<F> {
    pub fn new(model: Model<F>, corpus: Vec<Vec<u32>>, config: TrainConfig, dp: Option<DpConfig>) -> Result<Self> {
        config.validate()?;
        if corpus.is_empty() {
            return Err(DpError::EmptyCorpus);
        }
        if let Some(short) = corpus.iter().position(|s| s.len() < 2) {
            return Err(DpError::Model(ModelError::SequenceTooShort(corpus[short].len())));
        }
        let ledger = match (config.mode, &dp) {
            (TrainMode::Dp, Some(d)) => {
                d.validate(corpus.len())?;
                Some(PrivacyLedger::new(d.sampling_rate(corpus.len()), d.noise_multiplier, d.delta)?)
            }
            (TrainMode::Dp, None) => return Err(DpError::InvalidConfig("dp mode needs a DP configuration".into())),
            (TrainMode::Plain, _) => None,
        };
        let seed = config.seed;
        let n = corpus.len();
        Ok(Self {
            model,
            corpus,
            dp: if config.mode == TrainMode::Dp { dp } else { None },
            config,
            ledger,
            window_rng: stream(seed, 1),
            batch_rng: stream(seed, 2),
            noise_rng: stream(seed, 3),
            dropout_rng: stream(seed, 4),
            order: (0..n).collect(),
            cursor: n,
            velocity: None,
            steps: 0,
            history: Vec::new(),
        })
    }

    pub fn model(&self) -> &Model<F> {
        &self.model
    }

    pub fn ledger(&self) -> Option<&PrivacyLedger> {
        self.ledger.as_ref()
    }

    pub fn history(&self) -> &[LossRecord] {
        &self.history
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// True when the next DP step would push ε past the target.
    pub fn budget_exhausted(&self) -> Result<bool> {
        match (&self.ledger, self.dp.as_ref().and_then(|d| d.target_epsilon)) {
            (Some(l), Some(target)) => Ok(l.epsilon_at(self.steps as u64 + 1)? > target),
            _ => Ok(false),
        }
    }

    fn window(&mut self, idx: usize) -> Vec<u32> {
        let seq = &self.corpus[idx];
        // max_seq_len inputs plus the final target
        let t = self.model.config().max_seq_len + 1;
        if seq.len() <= t {
            return seq.clone();
        }
        let start = self.window_rng.gen_range(0..=seq.len() - t);
        seq[start..start + t].to_vec()
    }

    fn next_plain_batch(&mut self) -> Vec<usize> {
        let b = self.config.batch_size.min(self.corpus.len());
        let mut batch = Vec::with_capacity(b);
        while batch.len() < b {
            if self.cursor == self.order.len() {
                self.order.shuffle(&mut self.batch_rng);
                self.cursor = 0;
            }
            batch.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        batch
    }

    fn poisson_lot(&mut self, q: f64) -> Vec<usize> {
        (0..self.corpus.len()).filter(|_| self.batch_rng.gen::<f64>() < q).collect()
    }

    /// Per-sample (loss, gradient) in batch order; dropout masks come from seeds drawn
    /// sequentially so the result does not depend on thread scheduling.
    fn gradients(&mut self, indices: &[usize]) -> Result<Vec<(F, GradientSet<F>)>> {
        let seqs: Vec<Vec<u32>> = indices.iter().map(|&i| self.window(i)).collect();
        let dropout = self.model.config().dropout > 0.0;
        let seeds: Vec<u64> = seqs.iter().map(|_| self.dropout_rng.gen()).collect();
        let model = &self.model;
        let out: std::result::Result<Vec<_>, ModelError> = seqs
            .par_iter()
            .zip(seeds.par_iter())
            .map(|(s, &seed)| {
                if dropout {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    model.loss_and_gradient(s, Some(&mut rng))
                } else {
                    model.loss_and_gradient::<ChaCha8Rng>(s, None)
                }
            })
            .collect();
        let out = out?;
        for (k, (loss, _)) in out.iter().enumerate() {
            if !loss.is_finite() {
                return Err(DpError::NonFiniteLoss { step: self.steps + 1, sample: indices[k] });
            }
        }
        Ok(out)
    }

    fn apply(&mut self, grad: GradientSet<F>, lr: f64) {
        let mu = self.config.momentum;
        if mu == 0.0 {
            self.model.apply_update(&grad, F::from_f64(lr).unwrap());
            return;
        }
        let v = self.velocity.get_or_insert_with(|| vec![F::zero(); grad.len()]);
        let mu = F::from_f64(mu).unwrap();
        for (vi, gi) in v.iter_mut().zip(&grad.0) {
            *vi = mu * *vi + *gi;
        }
        let v = GradientSet(v.clone());
        self.model.apply_update(&v, F::from_f64(lr).unwrap());
    }

    /// Token-weighted loss over the whole corpus. Every token after the first is
    /// scored once: the first `max_seq_len` targets of a sequence in one window, then
    /// chunks of `max_seq_len / 2` targets, each chunk inside a window ending at its
    /// last target, so every target sees at least half a window of context.
    pub fn eval_loss(&self) -> Result<f64> {
        let t = self.model.config().max_seq_len;
        let k = (t / 2).max(1);
        let windows: Vec<(&[u32], usize)> = self
            .corpus
            .iter()
            .flat_map(|s| {
                let first = std::iter::once((&s[..(t + 1).min(s.len())], t.min(s.len() - 1)));
                let rest = (t + 1..s.len()).step_by(k).map(move |start| {
                    let end = (start + k).min(s.len());
                    (&s[end - t - 1..end], end - start)
                });
                first.chain(rest)
            })
            .collect();
        let losses: std::result::Result<Vec<(f64, usize)>, ModelError> = windows
            .par_iter()
            .map(|&(w, n)| Ok((self.model.suffix_loss(w, n)?.to_f64().unwrap(), n)))
            .collect();
        let (sum, n) = losses?.iter().fold((0.0, 0usize), |(s, n), &(l, k)| (s + l * k as f64, n + k));
        Ok(sum / n as f64)
    }

    /// One update. Returns `None` without touching the model when the DP budget
    /// does not allow another step.
    pub fn step(&mut self) -> Result<Option<StepReport>> {
        if self.budget_exhausted()? {
            return Ok(None);
        }
        let lr = self.config.lr_at(self.steps);
        let dim = self.model.param_count();
        let (grad, loss, batch_len, max_clipped_norm) = match self.dp.clone() {
            None => {
                let batch = self.next_plain_batch();
                let per = self.gradients(&batch)?;
                let mut sum = GradientSet::zeros(dim);
                let mut loss = 0.0;
                for (l, g) in &per {
                    sum.add_assign(g);
                    loss += l.to_f64().unwrap();
                }
                let inv = 1.0 / per.len() as f64;
                sum.scale(F::from_f64(inv).unwrap());
                (sum, loss * inv, per.len(), None)
            }
            Some(d) => {
                let lot = self.poisson_lot(d.sampling_rate(self.corpus.len()));
                let per = if lot.is_empty() { Vec::new() } else { self.gradients(&lot)? };
                let clipped: Vec<GradientSet<F>> =
                    per.par_iter().map(|(_, g)| clip_per_sample(g, d.clip_norm)).collect::<Result<_>>()?;
                let mut max_norm: f64 = 0.0;
                for g in &clipped {
                    let n = g.l2_norm();
                    assert!(n <= d.clip_norm + 1e-9, "post-clip norm {n} exceeds {}", d.clip_norm);
                    max_norm = max_norm.max(n);
                }
                let loss = per.iter().map(|(l, _)| l.to_f64().unwrap()).sum::<f64>() / per.len() as f64;
                let grad = noisy_aggregate(&clipped, dim, d.noise_multiplier, d.clip_norm, d.lot_size, &mut self.noise_rng);
                (grad, loss, per.len(), Some(max_norm))
            }
        };
        self.apply(grad, lr);
        self.steps += 1;
        let epsilon = match self.ledger.as_mut() {
            Some(l) => Some(l.record_step()?),
            None => None,
        };
        let eval_loss = if self.config.eval_every > 0 && self.steps % self.config.eval_every == 0 {
            if let Some(dir) = &self.config.checkpoint_dir {
                std::fs::create_dir_all(dir).map_err(ModelError::Io)?;
                save_checkpoint(&self.model, &dir.join(format!("step_{:06}.ckpt", self.steps)))?;
            }
            Some(self.eval_loss()?)
        } else {
            None
        };
        let record = LossRecord { step: self.steps, loss, batch_len, lr, epsilon, eval_loss };
        log::debug!("step {} loss {:.4} eps {:?}", record.step, record.loss, record.epsilon);
        self.history.push(record.clone());
        Ok(Some(StepReport { record, max_clipped_norm }))
    }

    /// Runs until max steps, the DP budget, or the plain-mode loss target.
    pub fn run(mut self) -> Result<TrainOutcome<F>> {
        let mut stop_reason = StopReason::MaxSteps;
        while self.steps < self.config.max_steps {
            match self.step()? {
                None => {
                    stop_reason = StopReason::BudgetExhausted;
                    break;
                }
                Some(r) => {
                    if let (Some(target), Some(eval)) = (self.config.stop_below_loss, r.record.eval_loss) {
                        if eval < target {
                            stop_reason = StopReason::LossTarget;
                            break;
                        }
                    }
                }
            }
        }
        Ok(TrainOutcome { model: self.model, ledger: self.ledger, history: self.history, stop_reason })
    }
}

/// Trains `model` on tokenized profiles. `dp` is required in DP mode and ignored otherwise.
pub fn train<F: Scalar>(
    model: Model<F>,
    corpus: Vec<Vec<u32>>,
    config: TrainConfig,
    dp: Option<DpConfig>,
) -> Result<TrainOutcome<F>> {
    Trainer::new(model, corpus, config, dp)?.run()
}

/// `step,loss,batch_len,lr,epsilon,eval_loss`; absent values are empty fields.
pub fn write_loss_history<W: Write>(history: &[LossRecord], mut sink: W) -> std::io::Result<()> {
    writeln!(sink, "step,loss,batch_len,lr,epsilon,eval_loss")?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in history {
        writeln!(sink, "{},{},{},{},{},{}", r.step, r.loss, r.batch_len, r.lr, opt(r.epsilon), opt(r.eval_loss))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transformer::{ModelConfig, Preset};

    fn grad_of_norm(n: f64) -> GradientSet<f64> {
        GradientSet(vec![n * 0.6, n * 0.8, 0.0])
    }

    #[test]
    fn clipping_formula() {
        let c = clip_per_sample(&grad_of_norm(10.0), 5.0).unwrap();
        assert!((c.l2_norm() - 5.0).abs() < 1e-9);
        assert!((c.0[0] - 3.0).abs() < 1e-9);
        assert_eq!(clip_per_sample(&grad_of_norm(3.0), 5.0).unwrap(), grad_of_norm(3.0));
        assert_eq!(clip_per_sample(&grad_of_norm(0.0), 5.0).unwrap(), grad_of_norm(0.0));
        let nan = GradientSet(vec![f64::NAN]);
        assert!(matches!(clip_per_sample(&nan, 1.0), Err(DpError::NonFiniteGradient)));
    }

    #[test]
    fn f32_clipping_never_overshoots() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let g = GradientSet((0..257).map(|_| rng.gen_range(-3.0f32..3.0)).collect());
            let c = clip_per_sample(&g, 0.7).unwrap();
            assert!(c.l2_norm() <= 0.7);
        }
    }

    #[test]
    fn noiseless_aggregate_is_mean() {
        let gs = vec![GradientSet(vec![1.0, 2.0]), GradientSet(vec![3.0, -2.0])];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(noisy_aggregate(&gs, 2, 0.0, 1.0, 2, &mut rng).0, vec![2.0, 0.0]);
    }

    #[test]
    fn noise_variance_matches_sigma_c() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let zero = [GradientSet(vec![0.0f64; 4])];
        let n = 100_000 / 4;
        let draws: Vec<f64> = (0..n).flat_map(|_| noisy_aggregate(&zero, 4, 1.0, 1.0, 1, &mut rng).0).collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / draws.len() as f64;
        assert!((var - 1.0).abs() < 0.1, "{var}");
        let mut a = ChaCha8Rng::seed_from_u64(5);
        let mut b = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(noisy_aggregate(&zero, 4, 1.0, 1.0, 1, &mut a), noisy_aggregate(&zero, 4, 1.0, 1.0, 1, &mut b));
    }

    fn tiny_corpus() -> Vec<Vec<u32>> {
        (0..10u32).map(|i| (0..12).map(|j| (i * 7 + j * 3) % 40 + 1).collect()).collect()
    }

    fn tiny_model() -> Model<f32> {
        let mut c = ModelConfig::preset(Preset::Tiny, 48, 3);
        c.max_seq_len = 16;
        Model::init(c).unwrap()
    }

    #[test]
    fn plain_training_reduces_loss() {
        let cfg = TrainConfig { max_steps: 50, batch_size: 5, learning_rate: 0.1, ..Default::default() };
        let trainer = Trainer::new(tiny_model(), tiny_corpus(), cfg.clone(), None).unwrap();
        let before = trainer.eval_loss().unwrap();
        let out = trainer.run().unwrap();
        let after = Trainer::new(out.model, tiny_corpus(), cfg, None).unwrap().eval_loss().unwrap();
        assert!(after < before, "{before} -> {after}");
        assert_eq!(out.history.len(), 50);
        assert_eq!(out.stop_reason, StopReason::MaxSteps);
    }

    #[test]
    fn dp_stops_at_budget() {
        let dp = DpConfig { noise_multiplier: 1.0, lot_size: 5, target_epsilon: Some(1.0), ..Default::default() };
        let cfg = TrainConfig { mode: TrainMode::Dp, max_steps: 10_000, ..Default::default() };
        let out = train(tiny_model(), tiny_corpus(), cfg, Some(dp)).unwrap();
        let l = out.ledger.unwrap();
        assert_eq!(out.stop_reason, StopReason::BudgetExhausted);
        assert!(l.epsilon <= 1.0);
        assert!(account_epsilon(0.5, 1.0, l.steps + 1, 1e-5).unwrap() > 1.0);
        assert_eq!(l.steps as usize, out.history.len());
    }

    #[test]
    fn seeded_runs_are_identical() {
        let dp = DpConfig { noise_multiplier: 0.8, lot_size: 4, target_epsilon: None, ..Default::default() };
        let cfg = TrainConfig { mode: TrainMode::Dp, max_steps: 5, ..Default::default() };
        let a = train(tiny_model(), tiny_corpus(), cfg.clone(), Some(dp.clone())).unwrap();
        let b = train(tiny_model(), tiny_corpus(), cfg, Some(dp)).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            Trainer::new(tiny_model(), vec![], TrainConfig::default(), None),
            Err(DpError::EmptyCorpus)
        ));
        let bad = TrainConfig { learning_rate: 0.0, ..Default::default() };
        assert!(Trainer::new(tiny_model(), tiny_corpus(), bad, None).is_err());
        let dp_cfg = TrainConfig { mode: TrainMode::Dp, ..Default::default() };
        assert!(Trainer::new(tiny_model(), tiny_corpus(), dp_cfg, None).is_err());
    }

    #[test]
    fn calibration_meets_target() {
        let s = calibrate_noise_multiplier(0.25, 40, 1e-5, 2.0).unwrap();
        assert!(account_epsilon(0.25, s, 40, 1e-5).unwrap() <= 2.0);
        assert!(account_epsilon(0.25, s * 0.99, 40, 1e-5).unwrap() > 2.0);
    }

    #[test]
    fn linear_schedule_endpoints() {
        let c = TrainConfig {
            schedule: LrSchedule::Linear { final_fraction: 0.1 },
            max_steps: 11,
            learning_rate: 1.0,
            ..Default::default()
        };
        assert_eq!(c.lr_at(0), 1.0);
        assert!((c.lr_at(10) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn eval_loss_scores_each_token_once() {
        // per-token oracle: one forward over each target's own context
        let t = 6;
        let mut c = ModelConfig::preset(Preset::Tiny, 48, 3);
        c.max_seq_len = t;
        let model = Model::<f64>::init(c).unwrap();
        let corpus: Vec<Vec<u32>> = [3usize, 7, 8, 13, 18]
            .iter()
            .map(|&n| (0..n as u32).map(|j| (j * 11 + n as u32) % 47 + 1).collect())
            .collect();
        let (mut sum, mut count) = (0.0, 0);
        for s in &corpus {
            for j in 1..s.len() {
                let from = if j <= t {
                    0
                } else {
                    let chunk_start = t + 1 + (j - t - 1) / 3 * 3;
                    (chunk_start + 3).min(s.len()) - t - 1
                };
                assert!(j <= t || j - from > 3);
                let ctx = &s[from..j];
                let logits = model.forward(ctx).unwrap();
                let row = logits.row(ctx.len() - 1);
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                sum += lse - row[s[j] as usize];
                count += 1;
            }
        }
        let got = Trainer::new(model, corpus, TrainConfig::default(), None).unwrap().eval_loss().unwrap();
        assert!((got - sum / count as f64).abs() < 1e-12, "{got} vs {}", sum / count as f64);
    }
}

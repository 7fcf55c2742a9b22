//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero when any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use genomesynth::attack::metrics::{auc, metrics_from};
use genomesynth::attack::{run_attack, run_experiment, AttackKind, AttackParams, AttackReport, ExperimentConfig, Split};
use genomesynth::dp::{
    account_epsilon, calibrate_noise_multiplier, clip_per_sample, DpConfig, LrSchedule, TrainConfig, TrainMode,
    Trainer,
};
use genomesynth::features::FeatureMode;
use genomesynth::pipeline::config::PipelineConfig;
use genomesynth::pipeline::demo::{make_demo_dataset, DemoSpec};
use genomesynth::pipeline::{run_pipeline, RunOptions};
use genomesynth::synthesis::{classify_chunks, generate_cohort, select_prompts, GenerationRecord, GenerationSpec, PromptSource};
use genomesynth::tokenizer::Tokenizer;
use genomesynth::transformer::{GradientSet, Model, ModelConfig, Preset};
use genomesynth::utility::{
    info_fields, novelty_memorization, quality, uniqueness_repetition, validity, variant_stats, ChromosomeBounds,
    GenotypeCounts, NatureCounts, Ratio,
};
use genomesynth::vcf::{build_profiles, parse_vcf, read_corpus, split_train_holdout, Cohort, Origin, ParseMode};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn main() {
    let filter: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wants = |n: usize| filter.is_empty() || filter.contains(&n);
    let mut failures = 0;
    let mut report = |n: usize, name: &str, f: &dyn Fn() -> Outcome| {
        if !wants(n) {
            return;
        }
        let t0 = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = t0.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {n:>2} PASS  {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                failures += 1;
                println!("criterion {n:>2} FAIL  {name} ({secs:.1}s): {detail}");
            }
        }
    };
    report(1, "tokenizer round trip", &tokenizer_round_trip);
    report(2, "gradient correctness", &gradient_correctness);
    report(3, "causality", &causality);
    report(4, "dp mechanism", &dp_mechanism);
    report(5, "accountant", &accountant);
    report(6, "utility-metric oracles", &utility_oracles);
    report(7, "attack-metric oracles", &attack_oracles);
    let plain = std::cell::OnceCell::new();
    let plain_run = |seed| plain_experiment(seed);
    report(8, "overfit and memorization", &|| criterion_8(plain.get_or_init(|| plain_run(0))));
    report(9, "dp lowers attack auc", &|| criterion_9(plain.get_or_init(|| plain_run(0))));
    report(10, "model-only vs hybrid pairing", &|| criterion_10(plain.get_or_init(|| plain_run(0))));
    report(11, "reproducible manifest", &reproducible_manifest);
    if failures > 0 {
        println!("{failures} criterion(s) failed");
        std::process::exit(1);
    }
}

// ---------- 1 ----------

fn demo_lines() -> Vec<String> {
    let text = make_demo_dataset(&DemoSpec::default()).unwrap();
    let parsed = parse_vcf(text.as_bytes(), ParseMode::Strict).unwrap();
    let cohort = build_profiles(&parsed.records, &parsed.samples, false).unwrap();
    cohort.samples().iter().map(|s| s.corpus_line()).collect()
}

/// Token boundaries must include every chunk boundary, and chunk-wise encoding
/// must equal whole-text encoding.
fn check_chunking(tok: &Tokenizer, text: &[u8]) -> Result<(), String> {
    let ids = tok.encode(text);
    let mut token_cuts = BTreeSet::from([0usize]);
    let mut at = 0;
    for &id in &ids {
        at += tok.token_bytes(id).ok_or("unknown id")?.len();
        token_cuts.insert(at);
    }
    ensure!(at == text.len(), "token bytes cover {at} of {} bytes", text.len());
    let mut chunk_at = 0;
    let mut piecewise = Vec::new();
    for chunk in tok.pretokenize(text) {
        ensure!(token_cuts.contains(&chunk_at), "a token crosses the chunk boundary at byte {chunk_at}");
        chunk_at += chunk.len();
        piecewise.extend(tok.encode(chunk));
    }
    ensure!(piecewise == ids, "chunk-wise encoding differs");
    ensure!(tok.decode_bytes(&ids).map_err(|e| e.to_string())? == text, "round trip failed for {text:?}");
    Ok(())
}

fn tokenizer_round_trip() -> Outcome {
    let lines = demo_lines();
    let tok = Tokenizer::train(&lines, 2048).map_err(|e| e.to_string())?;
    for line in &lines {
        check_chunking(&tok, line.as_bytes())?;
        let framed = tok.encode_profile_line(line);
        ensure!(tok.decode(&framed).map_err(|e| e.to_string())? == *line, "framed line round trip");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let alphabet = b"0123456789ACGTN:>_|/, *\n\tX";
    for i in 0..10_000 {
        let len = rng.gen_range(0..80);
        let bytes: Vec<u8> = if i % 2 == 0 {
            (0..len).map(|_| rng.gen()).collect()
        } else {
            (0..len).map(|_| alphabet[rng.gen_range(0..alphabet.len())]).collect()
        };
        check_chunking(&tok, &bytes)?;
    }
    Ok(format!("{} corpus lines and 10000 random byte strings, vocab {}", lines.len(), tok.vocab_size()))
}

// ---------- 2 ----------

fn perturbed_tiny(seed: u64, vocab: usize, max_seq_len: usize) -> Model<f64> {
    let mut c = ModelConfig::preset(Preset::Tiny, vocab, seed);
    c.max_seq_len = max_seq_len;
    let mut m = Model::<f64>::init_with_std(c, 0.3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for w in m.weights_mut() {
        *w += rng.gen_range(-0.1..0.1);
    }
    m
}

fn gradient_correctness() -> Outcome {
    let model = perturbed_tiny(3, 64, 16);
    ensure!(model.config().d_model == 16 && model.config().n_layers == 2, "tiny preset shape");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ids: Vec<u32> = (0..12).map(|_| rng.gen_range(0..64)).collect();
    let (_, grad) = model.loss_and_gradient::<ChaCha8Rng>(&ids, None).map_err(|e| e.to_string())?;
    let mut probe = model.clone();
    let h = 1e-4;
    let mut worst = (0.0f64, String::new());
    for (name, range) in model.param_groups() {
        for i in range {
            let orig = probe.weights()[i];
            probe.weights_mut()[i] = orig + h;
            let up = probe.sequence_loss(&ids).unwrap();
            probe.weights_mut()[i] = orig - h;
            let down = probe.sequence_loss(&ids).unwrap();
            probe.weights_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let denom = grad.0[i].abs().max(numeric.abs()).max(1e-6);
            let rel = (grad.0[i] - numeric).abs() / denom;
            if rel > worst.0 {
                worst = (rel, name.clone());
            }
        }
    }
    ensure!(worst.0 < 1e-4, "max relative error {:e} in {}", worst.0, worst.1);
    Ok(format!("{} parameters, max relative error {:.2e} ({})", model.param_count(), worst.0, worst.1))
}

// ---------- 3 ----------

fn causality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..100 {
        let model = perturbed_tiny(case, 64, 24);
        let len = rng.gen_range(2..=24);
        let mut ids: Vec<u32> = (0..len).map(|_| rng.gen_range(0..64)).collect();
        let t = rng.gen_range(1..len);
        let before = model.forward(&ids).unwrap();
        ids[t] = (ids[t] + rng.gen_range(1..64)) % 64;
        let after = model.forward(&ids).unwrap();
        for p in 0..t {
            let same = before.row(p).iter().zip(after.row(p)).all(|(a, b)| a.to_bits() == b.to_bits());
            ensure!(same, "case {case}: position {p} changed after perturbing {t}");
        }
        let m32: Model<f32> = model.cast();
        let b32 = m32.forward(&ids).unwrap();
        ids[t] = (ids[t] + 1) % 64;
        let a32 = m32.forward(&ids).unwrap();
        for p in 0..t {
            ensure!(b32.row(p).iter().zip(a32.row(p)).all(|(a, b)| a.to_bits() == b.to_bits()), "f32 case {case}");
        }
    }
    Ok("100 random cases, bitwise in 64-bit and 32-bit modes".into())
}

// ---------- 4 ----------

fn small_corpus(n: usize, len: usize) -> Vec<Vec<u32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    (0..n).map(|_| (0..len).map(|_| rng.gen_range(1..48)).collect()).collect()
}

fn dp_mechanism() -> Outcome {
    let mut cfg = ModelConfig::preset(Preset::Tiny, 48, 4);
    cfg.max_seq_len = 16;
    let model = Model::<f64>::init(cfg).unwrap();

    let clip = 0.5;
    let dp = DpConfig { clip_norm: clip, noise_multiplier: 1.0, lot_size: 5, target_epsilon: None, delta: 1e-5 };
    let tc = TrainConfig { mode: TrainMode::Dp, max_steps: 200, learning_rate: 0.1, eval_every: 0, ..Default::default() };
    let mut trainer = Trainer::new(model.clone(), small_corpus(20, 24), tc, Some(dp)).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let r = trainer.step().map_err(|e| e.to_string())?.ok_or("stopped early")?;
        if let Some(n) = r.max_clipped_norm {
            ensure!(n <= clip + 1e-9, "post-clip norm {n} at step {}", r.record.step);
            worst = worst.max(n);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..500 {
        let scale = 10f64.powf(rng.gen_range(-3.0..3.0));
        let g = GradientSet((0..300).map(|_| rng.gen_range(-1.0..1.0) * scale).collect::<Vec<f64>>());
        let n = clip_per_sample(&g, clip).unwrap().l2_norm();
        ensure!(n <= clip + 1e-9, "direct clipping gives {n}");
    }

    // σ = 0, no effective clipping, q = 1: DP-SGD must be full-batch mean-gradient SGD
    let corpus = small_corpus(6, 12);
    let dp = DpConfig { clip_norm: 1e12, noise_multiplier: 0.0, lot_size: corpus.len(), target_epsilon: None, delta: 1e-5 };
    let lr = 0.2;
    let tc = TrainConfig { mode: TrainMode::Dp, max_steps: 50, learning_rate: lr, eval_every: 0, ..Default::default() };
    let mut trainer = Trainer::new(model, corpus.clone(), tc, Some(dp)).map_err(|e| e.to_string())?;
    let mut worst_rel: f64 = 0.0;
    for step in 0..50 {
        let start = trainer.model().clone();
        let mut mean = vec![0.0; start.param_count()];
        for s in &corpus {
            let (_, g) = start.loss_and_gradient::<ChaCha8Rng>(s, None).unwrap();
            for (m, v) in mean.iter_mut().zip(&g.0) {
                *m += v / corpus.len() as f64;
            }
        }
        trainer.step().map_err(|e| e.to_string())?.ok_or("stopped early")?;
        let (mut diff, mut norm) = (0.0, 0.0);
        for ((w0, w1), g) in start.weights().iter().zip(trainer.model().weights()).zip(&mean) {
            let expected = w0 - lr * g;
            diff += (w1 - expected).powi(2);
            norm += (lr * g).powi(2);
        }
        let rel = (diff / norm).sqrt();
        ensure!(rel < 1e-6, "step {step}: relative deviation {rel:e} from mean-gradient SGD");
        worst_rel = worst_rel.max(rel);
    }
    Ok(format!("max post-clip norm {worst:.6} (C = {clip}); σ = 0 trajectory deviation {worst_rel:.1e}"))
}

// ---------- 5 ----------

/// Golden-section minimum of α/(2σ²) + ln(1/δ)/(α − 1) over real α > 1: the full-batch
/// Gaussian mechanism composed once.
fn epsilon_oracle(sigma: f64, delta: f64) -> f64 {
    let f = |a: f64| a / (2.0 * sigma * sigma) + (1.0 / delta).ln() / (a - 1.0);
    let (mut lo, mut hi) = (1.0 + 1e-9, 1e4);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..300 {
        let (a, b) = (hi - g * (hi - lo), lo + g * (hi - lo));
        if f(a) < f(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    f((lo + hi) / 2.0)
}

fn accountant() -> Outcome {
    let oracle = epsilon_oracle(1.0, 1e-5);
    let ours = account_epsilon(1.0, 1.0, 1, 1e-5).map_err(|e| e.to_string())?;
    ensure!((oracle - 5.30).abs() <= 0.01, "oracle gives {oracle}");
    ensure!((ours - oracle).abs() <= 0.01, "accountant {ours} vs oracle {oracle}");
    let steps = [1u64, 10, 100, 1000, 10_000];
    let sigmas = [0.7, 1.0, 1.5, 2.0, 4.0];
    let grid: Vec<Vec<f64>> = steps
        .iter()
        .map(|&t| sigmas.iter().map(|&s| account_epsilon(0.05, s, t, 1e-5).unwrap()).collect())
        .collect();
    for i in 0..5 {
        for j in 0..5 {
            if i + 1 < 5 {
                ensure!(grid[i + 1][j] >= grid[i][j], "ε not monotone in T at σ={}", sigmas[j]);
            }
            if j + 1 < 5 {
                ensure!(grid[i][j + 1] <= grid[i][j], "ε not anti-monotone in σ at T={}", steps[i]);
            }
        }
    }
    ensure!(grid[4][0] > grid[0][0] && grid[0][0] > grid[0][4], "grid is flat");
    Ok(format!("ε = {ours:.4} (oracle {oracle:.4}); 5×5 grid monotone"))
}

// ---------- 6 ----------

fn cohort(text: &str) -> Cohort {
    read_corpus(text.as_bytes(), "s", Origin::Synthetic).unwrap()
}

fn records(raws: &[&str]) -> Vec<GenerationRecord> {
    raws.iter()
        .enumerate()
        .map(|(i, raw)| {
            let (valid, invalid) = classify_chunks(raw);
            GenerationRecord {
                sample_id: format!("g{i}"),
                prompt: String::new(),
                seed: 0,
                raw_text: raw.to_string(),
                valid_chunks: valid.len(),
                invalid_chunks: invalid,
            }
        })
        .collect()
}

fn set(items: &[&str]) -> BTreeSet<String> {
    items.iter().map(|s| s.to_string()).collect()
}

fn vcf(rows: &[&str]) -> Vec<genomesynth::vcf::VariantRecord> {
    let mut text = String::from("##fileformat=VCFv4.2\n#CHROM\tPOS\tID\tREF\tALT\tQUAL\tFILTER\tINFO\tFORMAT\tA\tB\tC\tD\tE\n");
    for r in rows {
        text.push_str(&r.replace(' ', "\t"));
        text.push('\n');
    }
    parse_vcf(text.as_bytes(), ParseMode::Strict).unwrap().records
}

struct Expected {
    validity: (usize, usize),
    quality: (usize, usize),
    unique: (usize, usize),
    memorized: (usize, usize),
    distinct_variants: usize,
    multiallelic: usize,
    nature: NatureCounts,
    genotypes: GenotypeCounts,
    /// (ns, an, ac, af) per record; af `None` when AN = 0.
    info: Vec<(usize, usize, Vec<usize>, Option<Vec<f64>>)>,
    pass: (usize, usize),
}

fn ratio_is(r: Ratio, (n, d): (usize, usize), what: &str) -> Result<(), String> {
    ensure!(r.numerator == n && r.denominator == d, "{what}: {}/{} vs {n}/{d}", r.numerator, r.denominator);
    ensure!(d == 0 || r.value == n as f64 / d as f64, "{what}: value {}", r.value);
    Ok(())
}

fn check_cohort(
    name: &str,
    c: &Cohort,
    raws: &[&str],
    bounds: &ChromosomeBounds,
    training: &BTreeSet<String>,
    records_vcf: &[genomesynth::vcf::VariantRecord],
    e: &Expected,
) -> Result<(), String> {
    let w = |m: &str| format!("{name} {m}");
    ensure!(c.len() == 5, "{name} has {} samples", c.len());
    let v = validity(&records(raws));
    ratio_is(v, e.validity, &w("validity"))?;
    ratio_is(quality(c, bounds).map_err(|e| e.to_string())?, e.quality, &w("quality"))?;
    let (u, r) = uniqueness_repetition(c).map_err(|e| e.to_string())?;
    ratio_is(u, e.unique, &w("uniqueness"))?;
    ratio_is(r, (e.unique.1 - e.unique.0, e.unique.1), &w("repetition"))?;
    ensure!(u.value + r.value == 1.0, "{name}: uniqueness + repetition = {}", u.value + r.value);
    let (nov, mem) = novelty_memorization(c, training).map_err(|e| e.to_string())?;
    ratio_is(mem, e.memorized, &w("memorization"))?;
    ratio_is(nov, (e.memorized.1 - e.memorized.0, e.memorized.1), &w("novelty"))?;
    ensure!(nov.value + mem.value == 1.0, "{name}: novelty + memorization");
    let s = variant_stats(c);
    let n = e.distinct_variants;
    ensure!(s.distinct_variants == n, "{name}: distinct variants {}", s.distinct_variants);
    ratio_is(s.multiallelic, (e.multiallelic, n), &w("multiallelic"))?;
    ratio_is(s.biallelic, (n - e.multiallelic, n), &w("biallelic"))?;
    ensure!(s.nature == e.nature, "{name}: nature {:?}", s.nature);
    let alleles = e.nature.substitutions + e.nature.insertions + e.nature.deletions;
    ratio_is(s.substitution, (e.nature.substitutions, alleles), &w("substitution"))?;
    ratio_is(s.insertion, (e.nature.insertions, alleles), &w("insertion"))?;
    ratio_is(s.deletion, (e.nature.deletions, alleles), &w("deletion"))?;
    ensure!(
        ((s.substitution.value + s.insertion.value + s.deletion.value) - 1.0).abs() < 1e-15,
        "{name}: nature fractions"
    );
    ensure!(s.genotype_counts == e.genotypes, "{name}: genotypes {:?}", s.genotype_counts);
    let total = e.genotypes.hom_ref + e.genotypes.het + e.genotypes.hom_alt;
    let f = s.genotype_frequencies.ok_or("no genotype frequencies")?;
    ensure!(
        f.hom_ref == e.genotypes.hom_ref as f64 / total as f64
            && f.het == e.genotypes.het as f64 / total as f64
            && f.hom_alt == e.genotypes.hom_alt as f64 / total as f64,
        "{name}: genotype frequencies {f:?}"
    );
    ensure!((f.hom_ref + f.het + f.hom_alt - 1.0).abs() < 1e-15, "{name}: genotype frequencies sum");
    let info = info_fields(records_vcf);
    ensure!(info.len() == e.info.len(), "{name}: info rows");
    for (got, (ns, an, ac, af)) in info.iter().zip(&e.info) {
        ensure!(got.ns == *ns && got.an == *an && got.ac == *ac, "{name}: info {got:?}");
        ensure!(got.af == *af, "{name}: AF {:?} vs {af:?}", got.af);
        ensure!(got.aaf == af.as_ref().map(|f| f[1..].to_vec()), "{name}: aaf {:?}", got.aaf);
        if let Some(f) = &got.af {
            ensure!((f.iter().sum::<f64>() - 1.0).abs() < 1e-15, "{name}: AF sum");
        }
    }
    ratio_is(genomesynth::utility::call_rate(records_vcf), e.pass, &w("call rate"))?;
    Ok(())
}

fn utility_oracles() -> Outcome {
    // Cohort A: shared and private mutations, one out-of-bounds position, one multiallelic site.
    let a = cohort(
        "22:100:A>G_0|1 22:200:C>T_1|1\n\
         22:100:A>G_0|1 22:300:AT>A_1|0\n\
         22:100:A>G_1|1 22:400:G>GC_0|1\n\
         22:999999999:T>C_0|1\n\
         22:200:C>T_1|1 22:500:A>C,T_1|2\n",
    );
    check_cohort(
        "A",
        &a,
        &["22:100:A>G_0|1 22:200:C>T_1|1 22:1:A>", "22:300:AT>A_1|0", "junk junk", "", "22:500:A>C,T_1|2 _1|1"],
        &ChromosomeBounds::single("22", 1000),
        &set(&["22:100:A>G_0|1", "22:400:G>GC_0|1", "22:7:A>C_0|1"]),
        &vcf(&[
            "22 100 . A G . PASS . GT 0|1 1|1 0|0 ./. 1|0",
            "22 200 . C T,G . PASS . GT 1|2 0|0 2|2 0|1 ./.",
            "22 300 . AT A 10 q10 . GT ./. ./. ./. ./. ./.",
        ]),
        &Expected {
            validity: (4, 8),
            quality: (8, 9),
            unique: (5, 7),
            memorized: (2, 7),
            distinct_variants: 6,
            multiallelic: 1,
            nature: NatureCounts { substitutions: 5, insertions: 1, deletions: 1 },
            genotypes: GenotypeCounts { hom_ref: 0, het: 6, hom_alt: 3 },
            info: vec![
                (4, 8, vec![4], Some(vec![0.5, 0.5])),
                (4, 8, vec![2, 3], Some(vec![0.375, 0.25, 0.375])),
                (0, 0, vec![0], None),
            ],
            pass: (2, 3),
        },
    )?;

    // Cohort B: five identical samples, all generated text valid.
    let b = cohort(&"22:10:G>A_0|1 22:20:T>TA_1|1\n".repeat(5));
    check_cohort(
        "B",
        &b,
        &["22:10:G>A_0|1"; 5],
        &ChromosomeBounds::single("22", 15),
        &set(&["22:10:G>A_0|1", "22:20:T>TA_1|1"]),
        &vcf(&["22 10 . G A . PASS . GT 0|1 0|1 0|1 0|1 0|1", "22 20 . T TA . PASS . GT 1|1 1|1 1|1 1|1 1|1"]),
        &Expected {
            validity: (5, 5),
            quality: (5, 10),
            unique: (0, 2),
            memorized: (2, 2),
            distinct_variants: 2,
            multiallelic: 0,
            nature: NatureCounts { substitutions: 1, insertions: 1, deletions: 0 },
            genotypes: GenotypeCounts { hom_ref: 0, het: 5, hom_alt: 5 },
            info: vec![(5, 10, vec![5], Some(vec![0.5, 0.5])), (5, 10, vec![10], Some(vec![0.0, 1.0]))],
            pass: (2, 2),
        },
    )?;

    // Cohort C: pairwise disjoint, several chromosomes, a hom-ref call, unphased VCF calls.
    let c = cohort(
        "1:5:C>G_0|0 1:6:A>T_0|1\n\
         X:7:GGA>G_1|1\n\
         1:5:C>G_0|1\n\
         2:3:A>C_0|1\n\
         X:8:T>A,TT,G_2|3\n",
    );
    let bounds = ChromosomeBounds { max_pos: BTreeMap::from([("1".to_string(), 10), ("X".to_string(), 7)]) };
    check_cohort(
        "C",
        &c,
        &["x"; 5],
        &bounds,
        &set(&["1:5:C>G_0|1", "1:5:C>G_1|1"]),
        &vcf(&["1 5 . C G,T . LowQual . GT 0/0 0/0 0/1 1/2 2/2", "X 7 . GGA G . . . GT 1/1 ./. 0/0 0/1 1/0"]),
        &Expected {
            validity: (0, 5),
            quality: (4, 6),
            unique: (6, 6),
            memorized: (1, 6),
            distinct_variants: 5,
            multiallelic: 1,
            nature: NatureCounts { substitutions: 5, insertions: 1, deletions: 1 },
            genotypes: GenotypeCounts { hom_ref: 1, het: 4, hom_alt: 1 },
            info: vec![(5, 10, vec![2, 3], Some(vec![0.5, 0.2, 0.3])), (4, 8, vec![4], Some(vec![0.5, 0.5]))],
            pass: (0, 2),
        },
    )?;
    Ok("three 5-sample cohorts match hand enumeration".into())
}

// ---------- 7 ----------

fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut halves = 0usize;
    let (mut np, mut nn) = (0usize, 0usize);
    for (i, &li) in labels.iter().enumerate() {
        if li {
            np += 1;
        } else {
            nn += 1;
        }
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            halves += if scores[i] > scores[j] { 2 } else if scores[i] == scores[j] { 1 } else { 0 };
        }
    }
    (halves as f64 / 2.0) / (np * nn) as f64
}

struct Data {
    x: Vec<Vec<f64>>,
    y: Vec<bool>,
    ppl: Vec<f64>,
}

/// Members have lower perplexity and shifted features by `shift`.
fn synthetic_data(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> Data {
    let mut d = Data { x: vec![], y: vec![], ppl: vec![] };
    for i in 0..n {
        let member = i % 2 == 0;
        let off = if member { -shift } else { shift };
        let ppl = 10.0 + off + rng.gen_range(-1.0..1.0);
        let mut row = vec![ppl];
        row.extend((0..4).map(|_| off + rng.gen_range(-1.0..1.0)));
        d.x.push(row);
        d.y.push(member);
        d.ppl.push(ppl);
    }
    d
}

fn attack_on(train: &Data, test: &Data, seed: u64) -> Result<Vec<f64>, String> {
    let split = Split {
        x_train: &train.x,
        y_train: &train.y,
        ppl_train: &train.ppl,
        x_test: &test.x,
        y_test: &test.y,
        ppl_test: &test.ppl,
    };
    let params = AttackParams { rf_trees: 30, ..Default::default() };
    AttackKind::ALL.iter().map(|&k| run_attack(k, &split, &params, seed).map(|m| m.auc).map_err(|e| e.to_string())).collect()
}

fn attack_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..50 {
        let scores: Vec<f64> = (0..100).map(|_| (rng.gen_range(0.0..1.0f64) * 20.0).round() / 20.0).collect();
        let mut labels: Vec<bool> = (0..100).map(|i| i < rng.gen_range(1..100)).collect();
        labels.shuffle(&mut rng);
        let ours = auc(&scores, &labels).map_err(|e| e.to_string())?;
        ensure!(ours == brute_auc(&scores, &labels), "auc {ours} vs brute {}", brute_auc(&scores, &labels));
        let preds: Vec<bool> = scores.iter().map(|&s| s > 0.5).collect();
        let m = metrics_from(&scores, &preds, &labels).map_err(|e| e.to_string())?;
        ensure!(m.advantage == m.auc - 0.5, "advantage {} vs auc {}", m.advantage, m.auc);
    }
    let separated = attack_on(&synthetic_data(&mut rng, 40, 5.0), &synthetic_data(&mut rng, 40, 5.0), 1)?;
    ensure!(separated.iter().all(|&a| a == 1.0), "separated features give {separated:?}");
    let mut sums = [0.0; 4];
    for seed in 0..10 {
        let mut r = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut train = synthetic_data(&mut r, 60, 1.0);
        let mut test = synthetic_data(&mut r, 60, 1.0);
        train.y.shuffle(&mut r);
        test.y.shuffle(&mut r);
        for (s, a) in sums.iter_mut().zip(attack_on(&train, &test, seed)?) {
            *s += a / 10.0;
        }
    }
    for (k, m) in AttackKind::ALL.iter().zip(sums) {
        ensure!((0.4..=0.6).contains(&m), "{} null mean AUC {m}", k.name());
    }
    Ok(format!("50 brute-force AUC sets exact; separated → 1.0; null means {sums:.3?}"))
}

// ---------- 8, 9, 10 ----------

struct Setup {
    train: Cohort,
    holdout: Cohort,
    tok: Tokenizer,
    corpus: Vec<Vec<u32>>,
}

fn setup() -> Setup {
    let text = make_demo_dataset(&DemoSpec::default()).unwrap();
    let parsed = parse_vcf(text.as_bytes(), ParseMode::Strict).unwrap();
    let cohort = build_profiles(&parsed.records, &parsed.samples, false).unwrap();
    let (train, holdout) = split_train_holdout(&cohort, 0.5, 7).unwrap();
    let lines: Vec<String> = train.samples().iter().map(|s| s.corpus_line()).collect();
    let tok = Tokenizer::train(&lines, 2048).unwrap();
    let corpus = lines.iter().map(|l| tok.encode_profile_line(l)).collect();
    Setup { train, holdout, tok, corpus }
}

fn tiny_model(tok: &Tokenizer, seed: u64) -> Model<f32> {
    let mut c = ModelConfig::preset(Preset::Tiny, tok.vocab_size(), seed);
    c.max_seq_len = 64;
    Model::init(c).unwrap()
}

fn experiment(s: &Setup, model: &Model<f32>, seed: u64) -> AttackReport {
    let cfg = ExperimentConfig { target_cohort_size: 20, n_rounds: 5, seed, ..Default::default() };
    run_experiment(model, &s.tok, &s.train, &s.holdout, &cfg).unwrap()
}

struct PlainRun {
    setup: Setup,
    final_loss: f64,
    memorization: f64,
    report: AttackReport,
    seconds: f64,
}

fn plain_experiment(seed: u64) -> Result<PlainRun, String> {
    let t0 = Instant::now();
    let setup = setup();
    let cfg = TrainConfig {
        learning_rate: 0.05,
        momentum: 0.9,
        schedule: LrSchedule::Linear { final_fraction: 0.1 },
        max_steps: 20_000,
        batch_size: 8,
        eval_every: 250,
        stop_below_loss: Some(0.5),
        seed,
        ..Default::default()
    };
    let out = Trainer::new(tiny_model(&setup.tok, 3 + seed), setup.corpus.clone(), cfg, None)
        .and_then(|t| t.run())
        .map_err(|e| e.to_string())?;
    let final_loss = out.history.iter().rev().find_map(|r| r.eval_loss).ok_or("no eval loss")?;
    let spec = GenerationSpec { n_samples: 20, seed, ..Default::default() };
    let prompts = select_prompts(&PromptSource::RandomTrain, 20, &setup.train, None, seed).map_err(|e| e.to_string())?;
    let syn = generate_cohort(&out.model, &setup.tok, &prompts, &spec).map_err(|e| e.to_string())?;
    let (_, mem) = novelty_memorization(&syn.generated_only(), &setup.train.mutation_texts()).map_err(|e| e.to_string())?;
    let report = experiment(&setup, &out.model, seed);
    Ok(PlainRun { setup, final_loss, memorization: mem.value, report, seconds: t0.elapsed().as_secs_f64() })
}

fn criterion_8(run: &Result<PlainRun, String>) -> Outcome {
    let r = run.as_ref().map_err(|e| e.clone())?;
    let hybrid = r.report.mean_auc(FeatureMode::Hybrid).ok_or("no hybrid rows")?;
    let detail = format!(
        "training loss {:.3}, memorization {:.3}, mean hybrid AUC {hybrid:.3}, {:.0}s",
        r.final_loss, r.memorization, r.seconds
    );
    ensure!(r.final_loss < 0.5, "{detail}: loss not below 0.5");
    ensure!(r.memorization >= 0.5, "{detail}: memorization below 0.5");
    ensure!(hybrid >= 0.55, "{detail}: hybrid AUC below 0.55");
    Ok(detail)
}

fn mean_all(report: &AttackReport) -> f64 {
    report.rows.iter().map(|r| r.metrics.auc).sum::<f64>() / report.rows.len() as f64
}

fn dp_experiment(s: &Setup, seed: u64) -> Result<(f64, f64), String> {
    let steps = 1000;
    let lot = 10;
    let sigma = calibrate_noise_multiplier(lot as f64 / s.corpus.len() as f64, steps as u64, 1e-5, 1.0)
        .map_err(|e| e.to_string())?;
    let dp = DpConfig { clip_norm: 1.0, noise_multiplier: sigma, lot_size: lot, target_epsilon: Some(1.0), delta: 1e-5 };
    let cfg = TrainConfig {
        mode: TrainMode::Dp,
        learning_rate: 0.01,
        max_steps: steps,
        eval_every: 0,
        seed,
        ..Default::default()
    };
    let out = Trainer::new(tiny_model(&s.tok, 3 + seed), s.corpus.clone(), cfg, Some(dp))
        .and_then(|t| t.run())
        .map_err(|e| e.to_string())?;
    let eps = out.ledger.as_ref().ok_or("no ledger")?.epsilon;
    ensure!(eps <= 1.0, "spent ε = {eps}");
    Ok((mean_all(&experiment(s, &out.model, seed)), eps))
}

fn criterion_9(run: &Result<PlainRun, String>) -> Outcome {
    let first = run.as_ref().map_err(|e| e.clone())?;
    let mut plain = vec![mean_all(&first.report)];
    for seed in 1..3 {
        plain.push(mean_all(&plain_experiment(seed)?.report));
    }
    let mut dp = vec![];
    let mut eps: f64 = 0.0;
    for seed in 0..3 {
        let (a, e) = dp_experiment(&first.setup, seed)?;
        dp.push(a);
        eps = eps.max(e);
    }
    let (p, d) = (plain.iter().sum::<f64>() / 3.0, dp.iter().sum::<f64>() / 3.0);
    let detail = format!("plain mean AUC {p:.3} {plain:.3?}, DP (ε ≤ {eps:.3}) mean AUC {d:.3} {dp:.3?}");
    ensure!(d <= p - 0.02, "{detail}");
    Ok(detail)
}

fn criterion_10(run: &Result<PlainRun, String>) -> Outcome {
    let r = &run.as_ref().map_err(|e| e.clone())?.report;
    ensure!(r.rounds.len() == 5, "{} rounds", r.rounds.len());
    for info in &r.rounds {
        let targets: BTreeSet<&String> = info.members.iter().chain(&info.non_members).collect();
        let split: BTreeSet<&String> = info.attacker_train.iter().chain(&info.attacker_test).collect();
        ensure!(targets == split && info.attacker_train.len() + info.attacker_test.len() == targets.len(), "round {} split", info.round);
        let feats: Vec<_> = r.features.iter().filter(|f| f.round == info.round).collect();
        ensure!(feats.len() == 2, "round {} has {} feature blocks", info.round, feats.len());
        let ids = |f: &genomesynth::attack::RoundFeatures| f.rows.iter().map(|(id, l, _)| (id.clone(), *l)).collect::<Vec<_>>();
        ensure!(ids(feats[0]) == ids(feats[1]), "round {}: modes saw different targets", info.round);
        ensure!(feats[0].mode != feats[1].mode, "round {}: duplicate mode", info.round);
        for kind in AttackKind::ALL {
            for mode in [FeatureMode::ModelOnly, FeatureMode::Hybrid] {
                let n = r.rows.iter().filter(|x| x.round == info.round && x.attack == kind && x.mode == mode).count();
                ensure!(n == 1, "round {} {:?} {:?}: {n} rows", info.round, mode, kind);
            }
        }
    }
    let mo = r.mean_auc(FeatureMode::ModelOnly).ok_or("no model-only rows")?;
    let hy = r.mean_auc(FeatureMode::Hybrid).ok_or("no hybrid rows")?;
    Ok(format!("5 paired rounds; model-only mean AUC {mo:.3}, hybrid {hy:.3} (reported, not asserted)"))
}

// ---------- 11 ----------

const SMALL_PIPELINE: &str = r#"
seed = 9
[demo]
n_samples = 24
n_variants = 40
[tokenizer]
vocab_size = 400
[model]
max_seq_len = 32
[train]
max_steps = 30
eval_every = 10
[generate]
n_samples = 4
max_new_tokens = 40
[attack]
target_cohort_size = 6
n_rounds = 2
max_new_tokens = 24
[attack.params]
rf_trees = 10
"#;

fn reproducible_manifest() -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(2).build().map_err(|e| e.to_string())?;
    let run = || -> Result<(Vec<u8>, tempfile::TempDir), String> {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let mut cfg = PipelineConfig::from_toml(SMALL_PIPELINE).map_err(|e| e.to_string())?;
        cfg.paths.out_dir = dir.path().join("out");
        pool.install(|| run_pipeline(&cfg, &RunOptions::default())).map_err(|e| e.to_string())?;
        Ok((std::fs::read(cfg.paths.out_dir.join("manifest.json")).map_err(|e| e.to_string())?, dir))
    };
    let (a, _da) = run()?;
    let (b, _db) = run()?;
    ensure!(a == b, "manifests differ");
    let m: serde_json::Value = serde_json::from_slice(&a).map_err(|e| e.to_string())?;
    let artifacts: usize = m["stages"].as_array().ok_or("no stages")?.iter().map(|s| s["outputs"].as_array().map_or(0, |o| o.len())).sum();
    Ok(format!("two runs with 2 workers give identical manifests ({artifacts} artifacts)"))
}

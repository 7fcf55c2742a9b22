//! Seeded synthetic ground-truth VCF for desk-scale experiments.

use std::fmt::Write as _;

use rand::{seq::index::sample, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PipelineError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DemoSpec {
    pub n_samples: usize,
    pub n_variants: usize,
    pub seed: u64,
    pub chrom: String,
    /// Positions are drawn without replacement from `min_pos..=max_pos`.
    pub min_pos: u64,
    pub max_pos: u64,
    pub multiallelic_rate: f64,
    pub deletion_rate: f64,
    pub insertion_rate: f64,
    /// Probability that a record's FILTER is `s50` instead of `PASS`.
    pub filter_rate: f64,
}

impl Default for DemoSpec {
    fn default() -> Self {
        Self {
            n_samples: 60,
            n_variants: 300,
            seed: 1,
            chrom: "22".into(),
            min_pos: 1,
            max_pos: 50_818_468,
            multiallelic_rate: 0.05,
            deletion_rate: 0.08,
            insertion_rate: 0.08,
            filter_rate: 0.05,
        }
    }
}

const BASES: [char; 4] = ['A', 'C', 'G', 'T'];

fn base<R: Rng>(rng: &mut R) -> char {
    BASES[rng.gen_range(0..4)]
}

fn other_base<R: Rng>(rng: &mut R, not: char) -> char {
    loop {
        let b = base(rng);
        if b != not {
            return b;
        }
    }
}

fn bases<R: Rng>(rng: &mut R, n: usize) -> String {
    (0..n).map(|_| base(rng)).collect()
}

/// One to three random bases.
fn random_tail<R: Rng>(rng: &mut R) -> String {
    let n = rng.gen_range(1..=3);
    bases(rng, n)
}

/// Draws one allele index from cumulative alternate frequencies.
fn draw_allele<R: Rng>(rng: &mut R, afs: &[f64]) -> usize {
    let mut u = rng.gen::<f64>();
    for (k, &f) in afs.iter().enumerate() {
        if u < f {
            return k + 1;
        }
        u -= f;
    }
    0
}

/// VCF text with phased diploid genotypes drawn from per-variant allele
/// frequencies and INFO `AC`, `AN`, `AF` computed from those genotypes.
pub fn make_demo_dataset(spec: &DemoSpec) -> Result<String, PipelineError> {
    if spec.n_samples < 4 || spec.n_variants < 10 {
        return Err(PipelineError::Config(format!(
            "demo dataset needs at least 4 samples and 10 variants, got {} and {}",
            spec.n_samples, spec.n_variants
        )));
    }
    if spec.min_pos == 0 || spec.max_pos < spec.min_pos || spec.max_pos - spec.min_pos + 1 < spec.n_variants as u64 {
        return Err(PipelineError::BoundsTooTight {
            n_variants: spec.n_variants,
            min_pos: spec.min_pos,
            max_pos: spec.max_pos,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let span = spec.max_pos - spec.min_pos + 1;
    let mut positions: Vec<u64> = if span <= usize::MAX as u64 {
        sample(&mut rng, span as usize, spec.n_variants).into_iter().map(|p| p as u64 + spec.min_pos).collect()
    } else {
        return Err(PipelineError::Config("max_pos too large for this platform".into()));
    };
    positions.sort_unstable();

    let mut out = String::new();
    out.push_str("##fileformat=VCFv4.2\n");
    let _ = writeln!(out, "##contig=<ID={},length={}>", spec.chrom, spec.max_pos);
    out.push_str("##INFO=<ID=AC,Number=A,Type=Integer,Description=\"Allele count\">\n");
    out.push_str("##INFO=<ID=AN,Number=1,Type=Integer,Description=\"Allele number\">\n");
    out.push_str("##INFO=<ID=AF,Number=A,Type=Float,Description=\"Allele frequency\">\n");
    out.push_str("##FILTER=<ID=s50,Description=\"Less than 50% of samples have data\">\n");
    out.push_str("##FORMAT=<ID=GT,Number=1,Type=String,Description=\"Genotype\">\n");
    out.push_str("#CHROM\tPOS\tID\tREF\tALT\tQUAL\tFILTER\tINFO\tFORMAT");
    for s in 0..spec.n_samples {
        let _ = write!(out, "\tSAMPLE_{s:03}");
    }
    out.push('\n');

    for (vi, &pos) in positions.iter().enumerate() {
        let r = rng.gen::<f64>();
        let (ref_allele, alts): (String, Vec<String>) = if r < spec.multiallelic_rate {
            let rb = base(&mut rng);
            let a1 = other_base(&mut rng, rb);
            let second = if rng.gen_bool(0.5) {
                let mut a2 = other_base(&mut rng, rb);
                while a2 == a1 {
                    a2 = other_base(&mut rng, rb);
                }
                a2.to_string()
            } else {
                format!("{rb}{}", random_tail(&mut rng))
            };
            (rb.to_string(), vec![a1.to_string(), second])
        } else if r < spec.multiallelic_rate + spec.deletion_rate {
            let rb = base(&mut rng);
            let tail = random_tail(&mut rng);
            (format!("{rb}{tail}"), vec![rb.to_string()])
        } else if r < spec.multiallelic_rate + spec.deletion_rate + spec.insertion_rate {
            let rb = base(&mut rng);
            (rb.to_string(), vec![format!("{rb}{}", random_tail(&mut rng))])
        } else {
            let rb = base(&mut rng);
            (rb.to_string(), vec![other_base(&mut rng, rb).to_string()])
        };
        // skewed toward rare variants
        let total_af = 0.02 + 0.48 * rng.gen::<f64>().powi(2);
        let afs: Vec<f64> = if alts.len() == 2 {
            let split = rng.gen_range(0.2..0.8);
            vec![total_af * split, total_af * (1.0 - split)]
        } else {
            vec![total_af]
        };
        let mut counts = vec![0usize; alts.len() + 1];
        let mut gts = String::new();
        for _ in 0..spec.n_samples {
            let (a, b) = (draw_allele(&mut rng, &afs), draw_allele(&mut rng, &afs));
            counts[a] += 1;
            counts[b] += 1;
            let _ = write!(gts, "\t{a}|{b}");
        }
        let an = 2 * spec.n_samples;
        let ac: Vec<String> = counts[1..].iter().map(|c| c.to_string()).collect();
        let af: Vec<String> = counts[1..].iter().map(|&c| format!("{}", c as f64 / an as f64)).collect();
        let filter = if rng.gen::<f64>() < spec.filter_rate { "s50" } else { "PASS" };
        let _ = writeln!(
            out,
            "{}\t{pos}\tdemo{vi}\t{ref_allele}\t{}\t50\t{filter}\tAC={};AN={an};AF={}\tGT{gts}",
            spec.chrom,
            alts.join(","),
            ac.join(","),
            af.join(","),
        );
    }
    Ok(out)
}

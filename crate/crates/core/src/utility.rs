//! Utility metrics for synthetic cohorts and real benchmarks.
//!
//! Denominators:
//! * validity counts whitespace chunks of raw generated text;
//! * quality counts format-valid mutation instances;
//! * uniqueness, repetition, novelty and memorization count distinct full
//!   mutation texts (genotype included), so each complementary pair sums to 1;
//! * variant type and nature count distinct locus+allele keys;
//! * genotype frequencies pool every sample-mutation pair.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::synthesis::GenerationRecord;
use crate::vcf::{Cohort, Genotype, Mutation, VariantRecord};

#[derive(Debug, Error)]
pub enum UtilityError {
    #[error("no chromosome bounds provided")]
    MissingBounds,
    #[error("cohort has no mutations")]
    EmptyCohort,
    #[error("reports were computed with different settings: {0}")]
    SettingsMismatch(String),
    #[error("bounds line {line}: {reason}")]
    BoundsFormat { line: usize, reason: String },
    #[error("unknown bounds preset {0:?}")]
    UnknownPreset(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, UtilityError>;

/// `numerator / denominator`; an empty denominator yields 0 with `undefined` set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub numerator: usize,
    pub denominator: usize,
    pub value: f64,
    pub undefined: bool,
}

impl Ratio {
    pub fn new(numerator: usize, denominator: usize) -> Self {
        if denominator == 0 {
            return Self { numerator, denominator, value: 0.0, undefined: true };
        }
        Self { numerator, denominator, value: numerator as f64 / denominator as f64, undefined: false }
    }
}

/// Per-chromosome valid position range `1..=max_pos`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChromosomeBounds {
    pub max_pos: BTreeMap<String, u64>,
}

const GRCH37: &str = include_str!("../data/bounds/grch37.txt");
const GRCH38: &str = include_str!("../data/bounds/grch38.txt");

fn strip_chr(c: &str) -> &str {
    c.strip_prefix("chr").unwrap_or(c)
}

impl ChromosomeBounds {
    /// Lines of `chrom max_pos`; `#` starts a comment.
    pub fn parse<R: BufRead>(reader: R) -> Result<Self> {
        let mut max_pos = BTreeMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let bad = |reason: &str| UtilityError::BoundsFormat { line: i + 1, reason: reason.to_string() };
            let mut parts = body.split_whitespace();
            let (Some(chrom), Some(pos), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(bad("expected `chrom max_pos`"));
            };
            let pos: u64 = pos.parse().map_err(|_| bad("max_pos is not an integer"))?;
            if pos == 0 {
                return Err(bad("max_pos must be at least 1"));
            }
            max_pos.insert(chrom.to_string(), pos);
        }
        Ok(Self { max_pos })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::parse(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    /// `grch37` or `grch38`.
    pub fn preset(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "grch37" => Self::parse(GRCH37.as_bytes()),
            "grch38" => Self::parse(GRCH38.as_bytes()),
            _ => Err(UtilityError::UnknownPreset(name.to_string())),
        }
    }

    /// Preset name or file path.
    pub fn load(spec: &str) -> Result<Self> {
        Self::preset(spec).or_else(|_| Self::from_path(Path::new(spec)))
    }

    pub fn single(chrom: &str, max_pos: u64) -> Self {
        Self { max_pos: BTreeMap::from([(chrom.to_string(), max_pos)]) }
    }

    /// Exact match first, then with the `chr` prefix ignored on both sides.
    pub fn max_for(&self, chrom: &str) -> Option<u64> {
        if let Some(&p) = self.max_pos.get(chrom) {
            return Some(p);
        }
        let bare = strip_chr(chrom);
        self.max_pos.iter().find(|(k, _)| strip_chr(k) == bare).map(|(_, &p)| p)
    }

    pub fn contains(&self, m: &Mutation) -> bool {
        self.max_for(&m.chrom).is_some_and(|max| (1..=max).contains(&m.pos))
    }

    pub fn to_text(&self) -> String {
        self.max_pos.iter().map(|(c, p)| format!("{c} {p}\n")).collect()
    }
}

/// Valid chunks over all chunks of each generation record.
pub fn validity(records: &[GenerationRecord]) -> Ratio {
    let valid = records.iter().map(|r| r.valid_chunks).sum();
    let total = records.iter().map(GenerationRecord::total_chunks).sum();
    Ratio::new(valid, total)
}

/// Treats every mutation in the cohort as one valid chunk (real data has no invalid ones).
pub fn validity_of_parsed(cohort: &Cohort) -> Ratio {
    let n = cohort.samples().iter().map(|s| s.mutations.len()).sum();
    Ratio::new(n, n)
}

pub fn quality(cohort: &Cohort, bounds: &ChromosomeBounds) -> Result<Ratio> {
    if bounds.max_pos.is_empty() {
        return Err(UtilityError::MissingBounds);
    }
    let all = cohort.samples().iter().flat_map(|s| &s.mutations);
    let (mut inside, mut total) = (0, 0);
    for m in all {
        total += 1;
        inside += bounds.contains(m) as usize;
    }
    Ok(Ratio::new(inside, total))
}

/// Number of samples each distinct mutation text appears in.
fn sample_presence(cohort: &Cohort) -> BTreeMap<String, usize> {
    let mut presence = BTreeMap::new();
    for s in cohort.samples() {
        let texts: BTreeSet<String> = s.mutations.iter().map(|m| m.to_string()).collect();
        for t in texts {
            *presence.entry(t).or_insert(0) += 1;
        }
    }
    presence
}

/// (uniqueness, repetition) over distinct mutation texts.
pub fn uniqueness_repetition(cohort: &Cohort) -> Result<(Ratio, Ratio)> {
    let presence = sample_presence(cohort);
    if presence.is_empty() {
        return Err(UtilityError::EmptyCohort);
    }
    let unique = presence.values().filter(|&&c| c == 1).count();
    Ok((Ratio::new(unique, presence.len()), Ratio::new(presence.len() - unique, presence.len())))
}

/// (novelty, memorization) of distinct generated mutation texts against `training`.
pub fn novelty_memorization(cohort: &Cohort, training: &BTreeSet<String>) -> Result<(Ratio, Ratio)> {
    let distinct = cohort.mutation_texts();
    if distinct.is_empty() {
        return Err(UtilityError::EmptyCohort);
    }
    let seen = distinct.iter().filter(|t| training.contains(*t)).count();
    Ok((Ratio::new(distinct.len() - seen, distinct.len()), Ratio::new(seen, distinct.len())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlleleNature {
    Substitution,
    Insertion,
    Deletion,
}

pub fn allele_nature(ref_allele: &str, alt: &str) -> AlleleNature {
    use std::cmp::Ordering::*;
    match alt.len().cmp(&ref_allele.len()) {
        Equal => AlleleNature::Substitution,
        Greater => AlleleNature::Insertion,
        Less => AlleleNature::Deletion,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenotypeCounts {
    pub hom_ref: usize,
    pub het: usize,
    pub hom_alt: usize,
}

impl GenotypeCounts {
    pub fn add(&mut self, g: &Genotype) {
        if g.is_hom_ref() {
            self.hom_ref += 1;
        } else if g.is_het() {
            self.het += 1;
        } else {
            self.hom_alt += 1;
        }
    }

    pub fn total(&self) -> usize {
        self.hom_ref + self.het + self.hom_alt
    }

    /// (hom-ref, het, hom-alt) fractions; `None` when nothing was counted.
    pub fn frequencies(&self) -> Option<GenotypeFrequencies> {
        let n = self.total();
        (n > 0).then(|| GenotypeFrequencies {
            hom_ref: self.hom_ref as f64 / n as f64,
            het: self.het as f64 / n as f64,
            hom_alt: self.hom_alt as f64 / n as f64,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenotypeFrequencies {
    pub hom_ref: f64,
    pub het: f64,
    pub hom_alt: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NatureCounts {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
}

impl NatureCounts {
    pub fn add(&mut self, n: AlleleNature) {
        match n {
            AlleleNature::Substitution => self.substitutions += 1,
            AlleleNature::Insertion => self.insertions += 1,
            AlleleNature::Deletion => self.deletions += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantStatsReport {
    pub distinct_variants: usize,
    pub biallelic: Ratio,
    pub multiallelic: Ratio,
    /// Per alternate allele of each distinct variant.
    pub nature: NatureCounts,
    pub substitution: Ratio,
    pub insertion: Ratio,
    pub deletion: Ratio,
    pub genotype_counts: GenotypeCounts,
    pub genotype_frequencies: Option<GenotypeFrequencies>,
    /// `None` (n/a) for cohorts without FILTER information.
    pub call_rate: Option<Ratio>,
    pub filter_histogram: Option<BTreeMap<String, usize>>,
}

pub fn variant_stats(cohort: &Cohort) -> VariantStatsReport {
    let mut keys: BTreeMap<String, &Mutation> = BTreeMap::new();
    let mut genotypes = GenotypeCounts::default();
    for m in cohort.samples().iter().flat_map(|s| &s.mutations) {
        keys.entry(m.variant_key()).or_insert(m);
        genotypes.add(&m.genotype);
    }
    let multi = keys.values().filter(|m| m.is_multiallelic()).count();
    let mut nature = NatureCounts::default();
    for m in keys.values() {
        for alt in &m.alt_alleles {
            nature.add(allele_nature(&m.ref_allele, alt));
        }
    }
    let n = keys.len();
    let alleles = nature.total();
    VariantStatsReport {
        distinct_variants: n,
        biallelic: Ratio::new(n - multi, n),
        multiallelic: Ratio::new(multi, n),
        nature,
        substitution: Ratio::new(nature.substitutions, alleles),
        insertion: Ratio::new(nature.insertions, alleles),
        deletion: Ratio::new(nature.deletions, alleles),
        genotype_counts: genotypes,
        genotype_frequencies: genotypes.frequencies(),
        call_rate: None,
        filter_histogram: None,
    }
}

/// Per-variant INFO statistics recomputed from the genotype columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfoStats {
    pub chrom: String,
    pub pos: u64,
    /// Samples with a non-missing genotype.
    pub ns: usize,
    pub an: usize,
    /// Count of each allele index, reference first.
    pub allele_counts: Vec<usize>,
    /// Alternate allele counts (`allele_counts[1..]`).
    pub ac: Vec<usize>,
    /// Frequency of every allele, reference first; `None` when AN = 0.
    pub af: Option<Vec<f64>>,
    /// Alternate allele frequencies; `None` when AN = 0.
    pub aaf: Option<Vec<f64>>,
}

pub fn info_fields(records: &[VariantRecord]) -> Vec<InfoStats> {
    records
        .iter()
        .map(|r| {
            let mut counts = vec![0usize; r.alt_alleles.len() + 1];
            let mut ns = 0;
            for g in r.genotypes.iter().flatten() {
                ns += 1;
                for &a in &g.alleles {
                    let a = a as usize;
                    if a >= counts.len() {
                        counts.resize(a + 1, 0);
                    }
                    counts[a] += 1;
                }
            }
            let an = 2 * ns;
            let af = (an > 0).then(|| counts.iter().map(|&c| c as f64 / an as f64).collect::<Vec<_>>());
            InfoStats {
                chrom: r.chrom.clone(),
                pos: r.pos,
                ns,
                an,
                ac: counts[1..].to_vec(),
                aaf: af.as_ref().map(|f| f[1..].to_vec()),
                af,
                allele_counts: counts,
            }
        })
        .collect()
}

/// Fraction of records whose FILTER is exactly `PASS`.
pub fn call_rate(records: &[VariantRecord]) -> Ratio {
    let pass = records.iter().filter(|r| r.filter == "PASS").count();
    let r = Ratio::new(pass, records.len());
    if r.undefined {
        log::warn!("call rate of an empty record set");
    }
    r
}

pub fn filter_histogram(records: &[VariantRecord]) -> BTreeMap<String, usize> {
    let mut h = BTreeMap::new();
    for r in records {
        *h.entry(r.filter.clone()).or_insert(0) += 1;
    }
    h
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UtilitySettings {
    pub bounds: ChromosomeBounds,
    /// Whether each profile's leading prompt mutation was scored.
    pub include_prompt: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityReport {
    pub settings: UtilitySettings,
    pub n_samples: usize,
    pub validity: Ratio,
    pub quality: Ratio,
    pub uniqueness: Ratio,
    pub repetition: Ratio,
    pub novelty: Ratio,
    pub memorization: Ratio,
    pub variants: VariantStatsReport,
    pub warnings: Vec<String>,
}

/// Inputs for one utility report. `records` supplies validity for generated text;
/// without it every mutation counts as a valid chunk. `vcf_records` enables the
/// FILTER-based metrics.
pub struct UtilityInput<'a> {
    pub cohort: &'a Cohort,
    pub records: Option<&'a [GenerationRecord]>,
    pub training: &'a BTreeSet<String>,
    pub vcf_records: Option<&'a [VariantRecord]>,
    pub settings: UtilitySettings,
}

pub fn utility_report(input: UtilityInput<'_>) -> Result<UtilityReport> {
    let c = input.cohort;
    let mut warnings = Vec::new();
    let validity = match input.records {
        Some(r) => validity(r),
        None => validity_of_parsed(c),
    };
    let quality = quality(c, &input.settings.bounds)?;
    let empty = (Ratio::new(0, 0), Ratio::new(0, 0));
    let (uniqueness, repetition) = uniqueness_repetition(c).unwrap_or(empty);
    let (novelty, memorization) = novelty_memorization(c, input.training).unwrap_or(empty);
    for (name, r) in [
        ("validity", &validity),
        ("quality", &quality),
        ("uniqueness", &uniqueness),
        ("novelty", &novelty),
    ] {
        if r.undefined {
            warnings.push(format!("{name}: empty denominator, reported as 0"));
        }
    }
    let mut variants = variant_stats(c);
    if let Some(recs) = input.vcf_records {
        variants.call_rate = Some(call_rate(recs));
        variants.filter_histogram = Some(filter_histogram(recs));
        if recs.is_empty() {
            warnings.push("call_rate: no records, reported as 0".into());
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(UtilityReport {
        settings: input.settings,
        n_samples: c.len(),
        validity,
        quality,
        uniqueness,
        repetition,
        novelty,
        memorization,
        variants,
        warnings,
    })
}

impl UtilityReport {
    /// Every scalar metric by name, in a fixed order.
    pub fn metrics(&self) -> Vec<(String, f64)> {
        let v = &self.variants;
        let mut out: Vec<(String, f64)> = vec![
            ("validity".into(), self.validity.value),
            ("quality".into(), self.quality.value),
            ("uniqueness".into(), self.uniqueness.value),
            ("repetition".into(), self.repetition.value),
            ("novelty".into(), self.novelty.value),
            ("memorization".into(), self.memorization.value),
            ("biallelic".into(), v.biallelic.value),
            ("multiallelic".into(), v.multiallelic.value),
            ("substitution".into(), v.substitution.value),
            ("insertion".into(), v.insertion.value),
            ("deletion".into(), v.deletion.value),
        ];
        if let Some(g) = v.genotype_frequencies {
            out.push(("genotype_hom_ref".into(), g.hom_ref));
            out.push(("genotype_het".into(), g.het));
            out.push(("genotype_hom_alt".into(), g.hom_alt));
        }
        if let Some(c) = v.call_rate {
            out.push(("call_rate".into(), c.value));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub metric: String,
    pub synthetic: f64,
    pub benchmark: f64,
    /// synthetic − benchmark
    pub delta: f64,
    /// delta / benchmark; `None` when the benchmark value is 0.
    pub relative: Option<f64>,
}

/// Metric-by-metric deltas for metrics present in both reports.
pub fn compare_reports(synthetic: &UtilityReport, benchmark: &UtilityReport) -> Result<Vec<ComparisonRow>> {
    if synthetic.settings != benchmark.settings {
        return Err(UtilityError::SettingsMismatch(
            "bounds or prompt handling differ between the two reports".into(),
        ));
    }
    let bench: HashMap<String, f64> = benchmark.metrics().into_iter().collect();
    Ok(synthetic
        .metrics()
        .into_iter()
        .filter_map(|(metric, s)| {
            let b = *bench.get(&metric)?;
            let delta = s - b;
            Some(ComparisonRow { metric, synthetic: s, benchmark: b, delta, relative: (b != 0.0).then(|| delta / b) })
        })
        .collect())
}

pub fn write_comparison_csv<W: Write>(rows: &[ComparisonRow], mut sink: W) -> std::io::Result<()> {
    writeln!(sink, "metric,synthetic,benchmark,delta,relative")?;
    for r in rows {
        let rel = r.relative.map(|v| v.to_string()).unwrap_or_default();
        writeln!(sink, "{},{},{},{},{}", r.metric, r.synthetic, r.benchmark, r.delta, rel)?;
    }
    Ok(())
}

/// Long-format mutation statistics for plotting: `cohort,group,statistic,value`.
pub fn write_mutation_stats_csv<W: Write>(reports: &[(&str, &UtilityReport)], mut sink: W) -> std::io::Result<()> {
    writeln!(sink, "cohort,group,statistic,value")?;
    for (name, r) in reports {
        let v = &r.variants;
        let mut rows = vec![
            ("type", "biallelic", v.biallelic.value),
            ("type", "multiallelic", v.multiallelic.value),
            ("nature", "substitution", v.substitution.value),
            ("nature", "insertion", v.insertion.value),
            ("nature", "deletion", v.deletion.value),
        ];
        if let Some(g) = v.genotype_frequencies {
            rows.extend([("genotype", "hom_ref", g.hom_ref), ("genotype", "het", g.het), ("genotype", "hom_alt", g.hom_alt)]);
        }
        for (group, stat, value) in rows {
            writeln!(sink, "{name},{group},{stat},{value}")?;
        }
    }
    Ok(())
}

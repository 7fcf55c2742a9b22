//! VCF ingestion and the per-sample mutation encoding.
//!
//! A VCF data line is turned into a [`VariantRecord`]; each sample's genotype
//! at that record becomes a [`Mutation`] rendered as
//! `CHR:POS:REF>ALT[,ALT...]_A|B` (or `A/B` for unphased calls). A sample's
//! mutations, ordered by position, form its [`SampleProfile`].

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VcfError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("sample has no genotype call at {chrom}:{pos}")]
    MissingGenotype { chrom: String, pos: u64 },
    #[error("invalid mutation string {0:?}")]
    InvalidMutation(String),
    #[error("need at least 2 samples to split, got {0}")]
    TooFewSamples(usize),
    #[error("duplicate sample id {0:?}")]
    DuplicateSample(String),
    #[error("holdout fraction must be in (0, 1), got {0}")]
    InvalidFraction(f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, VcfError>;

/// Diploid genotype call: two allele indices (0 = reference) and the phase separator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Genotype {
    pub alleles: [u32; 2],
    pub phased: bool,
}

impl Genotype {
    pub fn new(a: u32, b: u32, phased: bool) -> Self {
        Self { alleles: [a, b], phased }
    }

    pub fn is_hom_ref(&self) -> bool {
        self.alleles == [0, 0]
    }

    pub fn is_het(&self) -> bool {
        self.alleles[0] != self.alleles[1]
    }

    pub fn is_hom_alt(&self) -> bool {
        self.alleles[0] == self.alleles[1] && self.alleles[0] >= 1
    }

    pub fn carries_alt(&self) -> bool {
        self.alleles.iter().any(|&a| a >= 1)
    }

    fn separator(&self) -> char {
        if self.phased {
            '|'
        } else {
            '/'
        }
    }

    /// Parses a VCF GT value. `Ok(None)` means a missing call (any `.` allele).
    fn parse_gt(text: &str) -> std::result::Result<Option<Self>, String> {
        let (sep_pos, phased) = match (text.find('|'), text.find('/')) {
            (Some(i), None) => (i, true),
            (None, Some(i)) => (i, false),
            (None, None) if text == "." => return Ok(None),
            (None, None) => return Err(format!("haploid or malformed genotype {text:?}")),
            _ => return Err(format!("mixed phase separators in genotype {text:?}")),
        };
        let (a, b) = (&text[..sep_pos], &text[sep_pos + 1..]);
        if a == "." || b == "." {
            return Ok(None);
        }
        let parse = |s: &str| {
            s.parse::<u32>()
                .map_err(|_| format!("non-integer allele index in genotype {text:?}"))
        };
        Ok(Some(Self::new(parse(a)?, parse(b)?, phased)))
    }
}

impl fmt::Display for Genotype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}{}", self.alleles[0], self.separator(), self.alleles[1])
    }
}

/// One parsed VCF data line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantRecord {
    pub chrom: String,
    pub pos: u64,
    pub id: Option<String>,
    pub ref_allele: String,
    pub alt_alleles: Vec<String>,
    pub qual: Option<f64>,
    pub filter: String,
    /// INFO key/value pairs; flag keys map to an empty string.
    pub info: BTreeMap<String, String>,
    /// One entry per sample column; `None` is a missing call.
    pub genotypes: Vec<Option<Genotype>>,
}

impl VariantRecord {
    /// Mutation string for one sample at this record.
    pub fn encode_mutation(&self, sample_index: usize) -> Result<Mutation> {
        let gt = self
            .genotypes
            .get(sample_index)
            .copied()
            .flatten()
            .ok_or_else(|| VcfError::MissingGenotype {
                chrom: self.chrom.clone(),
                pos: self.pos,
            })?;
        Ok(Mutation {
            chrom: self.chrom.clone(),
            pos: self.pos,
            ref_allele: self.ref_allele.clone(),
            alt_alleles: self.alt_alleles.clone(),
            genotype: gt,
        })
    }
}

/// Strict parsing aborts on the first malformed record; lenient parsing skips and counts it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParseMode {
    #[default]
    Strict,
    Lenient,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedVcf {
    pub samples: Vec<String>,
    pub records: Vec<VariantRecord>,
    pub data_lines: usize,
    pub skipped: Vec<SkippedLine>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedLine {
    pub line: usize,
    pub reason: String,
}

fn is_ref_base(c: u8) -> bool {
    matches!(c, b'A' | b'C' | b'G' | b'T' | b'N')
}

fn is_alt_base(c: u8) -> bool {
    is_ref_base(c) || c == b'*'
}

/// Parses VCF text. Gzip input is detected by its magic bytes.
pub fn parse_vcf<R: Read>(reader: R, mode: ParseMode) -> Result<ParsedVcf> {
    let mut buffered = BufReader::new(reader);
    let gz = {
        let head = buffered.fill_buf()?;
        head.len() >= 2 && head[0] == 0x1f && head[1] == 0x8b
    };
    if gz {
        let decoder = flate2::bufread::MultiGzDecoder::new(buffered);
        parse_vcf_text(BufReader::new(decoder), mode)
    } else {
        parse_vcf_text(buffered, mode)
    }
}

pub fn parse_vcf_path(path: &Path, mode: ParseMode) -> Result<ParsedVcf> {
    parse_vcf(std::fs::File::open(path)?, mode)
}

fn parse_vcf_text<R: BufRead>(reader: R, mode: ParseMode) -> Result<ParsedVcf> {
    let mut out = ParsedVcf::default();
    let mut header_seen = false;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.starts_with("##") {
            continue;
        }
        if let Some(rest) = line.strip_prefix("#CHROM") {
            if header_seen {
                return Err(VcfError::MalformedHeader(format!(
                    "second #CHROM line at line {line_no}"
                )));
            }
            out.samples = parse_header_samples(rest, line_no)?;
            header_seen = true;
            continue;
        }
        if line.is_empty() {
            continue;
        }
        if !header_seen {
            return Err(VcfError::MalformedHeader(format!(
                "data at line {line_no} before #CHROM header"
            )));
        }
        out.data_lines += 1;
        match parse_record(line, out.samples.len()) {
            Ok(rec) => out.records.push(rec),
            Err(reason) => match mode {
                ParseMode::Strict => {
                    return Err(VcfError::MalformedRecord { line: line_no, reason })
                }
                ParseMode::Lenient => {
                    log::warn!("skipping line {line_no}: {reason}");
                    out.skipped.push(SkippedLine { line: line_no, reason });
                }
            },
        }
    }
    if !header_seen {
        return Err(VcfError::MalformedHeader("no #CHROM line".into()));
    }
    Ok(out)
}

fn parse_header_samples(rest: &str, line_no: usize) -> Result<Vec<String>> {
    let cols: Vec<&str> = rest.split('\t').collect();
    // cols[0] is what followed "#CHROM" (empty) and then POS..INFO
    const FIXED: [&str; 8] = ["", "POS", "ID", "REF", "ALT", "QUAL", "FILTER", "INFO"];
    if cols.len() < FIXED.len() || cols[..FIXED.len()] != FIXED {
        return Err(VcfError::MalformedHeader(format!(
            "unexpected fixed columns at line {line_no}"
        )));
    }
    if cols.len() == FIXED.len() {
        return Ok(Vec::new());
    }
    if cols[FIXED.len()] != "FORMAT" {
        return Err(VcfError::MalformedHeader(format!(
            "expected FORMAT column at line {line_no}"
        )));
    }
    let samples: Vec<String> = cols[FIXED.len() + 1..].iter().map(|s| s.to_string()).collect();
    let mut seen = HashSet::new();
    for s in &samples {
        if !seen.insert(s.as_str()) {
            return Err(VcfError::DuplicateSample(s.clone()));
        }
    }
    Ok(samples)
}

fn parse_record(line: &str, n_samples: usize) -> std::result::Result<VariantRecord, String> {
    let cols: Vec<&str> = line.split('\t').collect();
    let expected = if n_samples == 0 { 8 } else { 9 + n_samples };
    if cols.len() != expected && !(n_samples == 0 && cols.len() == 9) {
        return Err(format!("expected {expected} columns, found {}", cols.len()));
    }
    let chrom = cols[0];
    if chrom.is_empty() || !chrom.bytes().all(|c| c.is_ascii_alphanumeric()) {
        return Err(format!("unsupported CHROM {chrom:?}"));
    }
    let pos: u64 = cols[1]
        .parse()
        .map_err(|_| format!("non-integer POS {:?}", cols[1]))?;
    if pos == 0 {
        return Err("POS must be >= 1".into());
    }
    let id = (cols[2] != ".").then(|| cols[2].to_string());
    let ref_allele = cols[3];
    if ref_allele.is_empty() || !ref_allele.bytes().all(is_ref_base) {
        return Err(format!("invalid REF {ref_allele:?}"));
    }
    if cols[4] == "." {
        return Err("record has no ALT allele".into());
    }
    let alt_alleles: Vec<String> = cols[4].split(',').map(str::to_string).collect();
    for alt in &alt_alleles {
        if alt.is_empty() || !alt.bytes().all(is_alt_base) {
            return Err(format!("invalid or symbolic ALT {alt:?}"));
        }
        if alt == ref_allele {
            return Err(format!("ALT {alt:?} equals REF"));
        }
    }
    let qual = match cols[5] {
        "." => None,
        q => Some(q.parse::<f64>().map_err(|_| format!("non-numeric QUAL {q:?}"))?),
    };
    let filter = cols[6].to_string();
    let mut info = BTreeMap::new();
    if cols[7] != "." {
        for item in cols[7].split(';').filter(|s| !s.is_empty()) {
            match item.split_once('=') {
                Some((k, v)) => info.insert(k.to_string(), v.to_string()),
                None => info.insert(item.to_string(), String::new()),
            };
        }
    }
    let mut genotypes = Vec::with_capacity(n_samples);
    if n_samples > 0 {
        let gt_index = cols[8]
            .split(':')
            .position(|k| k == "GT")
            .ok_or_else(|| "FORMAT has no GT subfield".to_string())?;
        let n_alts = alt_alleles.len() as u32;
        for sample_col in &cols[9..] {
            let gt_text = sample_col.split(':').nth(gt_index).unwrap_or(".");
            let gt = Genotype::parse_gt(gt_text)?;
            if let Some(g) = gt {
                if g.alleles.iter().any(|&a| a > n_alts) {
                    return Err(format!("allele index out of range in genotype {gt_text:?}"));
                }
            }
            genotypes.push(gt);
        }
    }
    Ok(VariantRecord {
        chrom: chrom.to_string(),
        pos,
        id,
        ref_allele: ref_allele.to_string(),
        alt_alleles,
        qual,
        filter,
        info,
        genotypes,
    })
}

/// A single encoded mutation: locus, alleles and the carrying sample's genotype.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Mutation {
    pub chrom: String,
    pub pos: u64,
    pub ref_allele: String,
    pub alt_alleles: Vec<String>,
    pub genotype: Genotype,
}

impl Mutation {
    /// Locus and alleles without the genotype suffix, e.g. `22:100:C>T,CA`.
    pub fn variant_key(&self) -> String {
        format!("{}:{}:{}>{}", self.chrom, self.pos, self.ref_allele, self.alt_alleles.join(","))
    }

    pub fn is_multiallelic(&self) -> bool {
        self.alt_alleles.len() >= 2
    }
}

impl fmt::Display for Mutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.variant_key(), self.genotype)
    }
}

impl FromStr for Mutation {
    type Err = VcfError;

    /// Grammar: `CHR ":" POS ":" REF ">" ALT ("," ALT)* "_" INT ("|" | "/") INT`.
    fn from_str(s: &str) -> Result<Self> {
        parse_mutation(s).ok_or_else(|| VcfError::InvalidMutation(s.to_string()))
    }
}

fn parse_mutation(s: &str) -> Option<Mutation> {
    let (chrom, rest) = s.split_once(':')?;
    if chrom.is_empty() || !chrom.bytes().all(|c| c.is_ascii_alphanumeric()) {
        return None;
    }
    let (pos_text, rest) = rest.split_once(':')?;
    if pos_text.is_empty() || !pos_text.bytes().all(|c| c.is_ascii_digit()) {
        return None;
    }
    let pos = pos_text.parse().ok()?;
    let (ref_allele, rest) = rest.split_once('>')?;
    if ref_allele.is_empty() || !ref_allele.bytes().all(is_ref_base) {
        return None;
    }
    let (alts, gt_text) = rest.rsplit_once('_')?;
    let alt_alleles: Vec<String> = alts.split(',').map(str::to_string).collect();
    if alt_alleles.iter().any(|a| a.is_empty() || !a.bytes().all(is_alt_base)) {
        return None;
    }
    let sep = gt_text.find(['|', '/'])?;
    let (a, b) = (&gt_text[..sep], &gt_text[sep + 1..]);
    let digits = |t: &str| !t.is_empty() && t.bytes().all(|c| c.is_ascii_digit());
    if !digits(a) || !digits(b) {
        return None;
    }
    let genotype = Genotype::new(a.parse().ok()?, b.parse().ok()?, gt_text.as_bytes()[sep] == b'|');
    Some(Mutation {
        chrom: chrom.to_string(),
        pos,
        ref_allele: ref_allele.to_string(),
        alt_alleles,
        genotype,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Real,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleProfile {
    pub sample_id: String,
    pub mutations: Vec<Mutation>,
    pub origin: Origin,
}

impl SampleProfile {
    /// The corpus line: mutation strings joined by single spaces.
    pub fn corpus_line(&self) -> String {
        let mut line = String::new();
        for (i, m) in self.mutations.iter().enumerate() {
            if i > 0 {
                line.push(' ');
            }
            line.push_str(&m.to_string());
        }
        line
    }
}

/// A set of profiles with unique sample ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Cohort {
    samples: Vec<SampleProfile>,
}

impl Cohort {
    pub fn new(samples: Vec<SampleProfile>) -> Result<Self> {
        let mut seen = HashSet::new();
        for s in &samples {
            if !seen.insert(s.sample_id.as_str()) {
                return Err(VcfError::DuplicateSample(s.sample_id.clone()));
            }
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[SampleProfile] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<SampleProfile> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Distinct full mutation texts (genotype included).
    pub fn mutation_texts(&self) -> BTreeSet<String> {
        self.samples
            .iter()
            .flat_map(|s| s.mutations.iter().map(|m| m.to_string()))
            .collect()
    }

    /// Distinct locus+alleles keys (genotype suffix dropped).
    pub fn variant_keys(&self) -> BTreeSet<String> {
        self.samples
            .iter()
            .flat_map(|s| s.mutations.iter().map(Mutation::variant_key))
            .collect()
    }
}

/// Builds one profile per sample column. Homozygous-reference calls are kept only
/// when `include_ref_genotypes` is set; missing calls are always dropped.
pub fn build_profiles(
    records: &[VariantRecord],
    sample_ids: &[String],
    include_ref_genotypes: bool,
) -> Result<Cohort> {
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by_key(|&i| records[i].pos);
    let mut samples: Vec<SampleProfile> = sample_ids
        .iter()
        .map(|id| SampleProfile {
            sample_id: id.clone(),
            mutations: Vec::new(),
            origin: Origin::Real,
        })
        .collect();
    for &ri in &order {
        let rec = &records[ri];
        for (si, profile) in samples.iter_mut().enumerate() {
            match rec.genotypes.get(si).copied().flatten() {
                Some(gt) if include_ref_genotypes || gt.carries_alt() => {
                    profile.mutations.push(rec.encode_mutation(si)?);
                }
                _ => {}
            }
        }
    }
    Cohort::new(samples)
}

/// Seeded disjoint partition into (train, holdout). Both halves keep the input order.
pub fn split_train_holdout(
    cohort: &Cohort,
    holdout_fraction: f64,
    seed: u64,
) -> Result<(Cohort, Cohort)> {
    let n = cohort.len();
    if n < 2 {
        return Err(VcfError::TooFewSamples(n));
    }
    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
        return Err(VcfError::InvalidFraction(holdout_fraction));
    }
    let n_holdout = ((holdout_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_holdout = vec![false; n];
    for &i in &idx[..n_holdout] {
        is_holdout[i] = true;
    }
    let (mut train, mut holdout) = (Vec::new(), Vec::new());
    for (s, h) in cohort.samples.iter().zip(is_holdout) {
        if h {
            holdout.push(s.clone());
        } else {
            train.push(s.clone());
        }
    }
    Ok((Cohort { samples: train }, Cohort { samples: holdout }))
}

/// One sample per line, mutations separated by a single space.
pub fn write_corpus<W: Write>(profiles: &[SampleProfile], mut sink: W) -> std::io::Result<()> {
    for p in profiles {
        writeln!(sink, "{}", p.corpus_line())?;
    }
    sink.flush()
}

/// Reads a corpus file back into profiles. Lines get ids `{prefix}{line index}`.
/// Every whitespace-separated chunk must be a well-formed mutation.
pub fn read_corpus<R: BufRead>(reader: R, id_prefix: &str, origin: Origin) -> Result<Cohort> {
    let mut samples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let mutations = line
            .split_whitespace()
            .map(|chunk| {
                chunk.parse::<Mutation>().map_err(|_| VcfError::MalformedRecord {
                    line: i + 1,
                    reason: format!("invalid mutation {chunk:?}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        samples.push(SampleProfile {
            sample_id: format!("{id_prefix}{i}"),
            mutations,
            origin,
        });
    }
    Cohort::new(samples)
}

pub fn read_corpus_path(path: &Path, id_prefix: &str, origin: Origin) -> Result<Cohort> {
    read_corpus(BufReader::new(std::fs::File::open(path)?), id_prefix, origin)
}

//! Byte-level BPE with regex pre-tokenization.
//!
//! Text is first cut into chunks by [`DEFAULT_PATTERN`], which matches one
//! whole mutation string (plus its trailing space) as a single chunk. Merges
//! are learned and applied strictly inside chunks, so no token ever spans two
//! mutations.
//!
//! Id layout: `0..256` raw bytes, `256..260` special tokens, learned merges from 260.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use regex::bytes::Regex;
use thiserror::Error;

/// Mutation grammar first, then whitespace runs, then any other run of non-space bytes.
pub const DEFAULT_PATTERN: &str =
    r"(?-u)[0-9A-Za-z]+:[0-9]+:[ACGTN]+>[ACGTN,*]+_[0-9]+[|/][0-9]+\s?|\s+|\S+\s?";

pub const DEFAULT_VOCAB_SIZE: usize = 2048;

const FORMAT_HEADER: &str = "genomesynth-tokenizer 1";
const BYTE_TOKENS: u32 = 256;

pub type TokenId = u32;

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("target vocab size {target} must exceed {min}")]
    VocabTooSmall { target: usize, min: usize },
    #[error("unknown token id {0}")]
    UnknownTokenId(TokenId),
    #[error("invalid pre-tokenization pattern: {0}")]
    BadPattern(#[from] regex::Error),
    #[error("tokenizer file, line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TokenizerError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SpecialToken {
    Bos,
    Eos,
    Sep,
    Pad,
}

impl SpecialToken {
    pub const ALL: [SpecialToken; 4] = [Self::Bos, Self::Eos, Self::Sep, Self::Pad];

    pub fn name(self) -> &'static str {
        match self {
            Self::Bos => "BOS",
            Self::Eos => "EOS",
            Self::Sep => "SEP",
            Self::Pad => "PAD",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name() == name)
    }

    fn default_id(self) -> TokenId {
        BYTE_TOKENS + self as TokenId
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MergeRule {
    pub left: TokenId,
    pub right: TokenId,
    pub new_id: TokenId,
}

#[derive(Debug, Clone)]
pub struct Tokenizer {
    pattern: String,
    regex: Regex,
    merges: Vec<MergeRule>,
    ranks: HashMap<(TokenId, TokenId), (usize, TokenId)>,
    vocab: HashMap<TokenId, Vec<u8>>,
    special: Vec<(SpecialToken, TokenId)>,
}

impl PartialEq for Tokenizer {
    fn eq(&self, other: &Self) -> bool {
        self.pattern == other.pattern && self.merges == other.merges && self.special == other.special
    }
}

/// Splits `text` into chunks; their concatenation is always `text`.
pub fn pretokenize<'a>(regex: &Regex, text: &'a [u8]) -> Vec<&'a [u8]> {
    let mut chunks = Vec::new();
    let mut last = 0;
    for m in regex.find_iter(text) {
        if m.start() > last {
            chunks.push(&text[last..m.start()]);
        }
        if !m.as_bytes().is_empty() {
            chunks.push(m.as_bytes());
        }
        last = m.end();
    }
    if last < text.len() {
        chunks.push(&text[last..]);
    }
    chunks
}

pub fn default_regex() -> Regex {
    Regex::new(DEFAULT_PATTERN).expect("default pattern compiles")
}

fn merge_pair(ids: &[TokenId], pair: (TokenId, TokenId), new_id: TokenId) -> Vec<TokenId> {
    let mut out = Vec::with_capacity(ids.len());
    let mut i = 0;
    while i < ids.len() {
        if i + 1 < ids.len() && (ids[i], ids[i + 1]) == pair {
            out.push(new_id);
            i += 2;
        } else {
            out.push(ids[i]);
            i += 1;
        }
    }
    out
}

impl Tokenizer {
    fn with_parts(pattern: &str, merges: Vec<MergeRule>, special: Vec<(SpecialToken, TokenId)>) -> Result<Self> {
        let regex = Regex::new(pattern)?;
        let mut vocab: HashMap<TokenId, Vec<u8>> = (0..BYTE_TOKENS).map(|b| (b, vec![b as u8])).collect();
        for &(_, id) in &special {
            vocab.insert(id, Vec::new());
        }
        let mut ranks = HashMap::new();
        for (rank, m) in merges.iter().enumerate() {
            let bytes = match (vocab.get(&m.left), vocab.get(&m.right)) {
                (Some(l), Some(r)) => [l.as_slice(), r.as_slice()].concat(),
                _ => {
                    return Err(TokenizerError::Format {
                        line: 0,
                        reason: format!("merge {rank} references an id defined later"),
                    })
                }
            };
            vocab.insert(m.new_id, bytes);
            ranks.insert((m.left, m.right), (rank, m.new_id));
        }
        Ok(Self { pattern: pattern.to_string(), regex, merges, ranks, vocab, special })
    }

    /// Learns merges over the chunks of `lines` (each line pre-tokenized on its own).
    pub fn train<S: AsRef<[u8]>>(lines: &[S], target_vocab_size: usize) -> Result<Self> {
        Self::train_with_pattern(lines, target_vocab_size, DEFAULT_PATTERN)
    }

    pub fn train_with_pattern<S: AsRef<[u8]>>(
        lines: &[S],
        target_vocab_size: usize,
        pattern: &str,
    ) -> Result<Self> {
        let regex = Regex::new(pattern)?;
        let mut chunk_counts: HashMap<&[u8], usize> = HashMap::new();
        for line in lines {
            for chunk in pretokenize(&regex, line.as_ref()) {
                *chunk_counts.entry(chunk).or_default() += 1;
            }
        }
        let chunks: Vec<(&[u8], usize)> = {
            let mut v: Vec<_> = chunk_counts.into_iter().collect();
            v.sort();
            v
        };
        Self::train_on_chunks(chunks, target_vocab_size, pattern)
    }

    /// Trains directly on (chunk, multiplicity) pairs.
    pub fn train_on_chunks(
        chunks: Vec<(&[u8], usize)>,
        target_vocab_size: usize,
        pattern: &str,
    ) -> Result<Self> {
        let special: Vec<(SpecialToken, TokenId)> =
            SpecialToken::ALL.iter().map(|&t| (t, t.default_id())).collect();
        let base = BYTE_TOKENS as usize + special.len();
        if target_vocab_size <= base {
            return Err(TokenizerError::VocabTooSmall { target: target_vocab_size, min: base });
        }
        let mut words: Vec<(Vec<TokenId>, usize)> = chunks
            .into_iter()
            .map(|(c, n)| (c.iter().map(|&b| b as TokenId).collect(), n))
            .collect();
        let mut merges = Vec::new();
        let mut next_id = base as TokenId;
        while (next_id as usize) < target_vocab_size {
            let mut counts: HashMap<(TokenId, TokenId), usize> = HashMap::new();
            for (ids, n) in &words {
                for w in ids.windows(2) {
                    *counts.entry((w[0], w[1])).or_default() += n;
                }
            }
            // highest count, ties to the smallest (left, right)
            let best = counts
                .into_iter()
                .filter(|&(_, c)| c >= 2)
                .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)));
            let Some((pair, _)) = best else { break };
            for (ids, _) in words.iter_mut() {
                if ids.len() >= 2 {
                    *ids = merge_pair(ids, pair, next_id);
                }
            }
            merges.push(MergeRule { left: pair.0, right: pair.1, new_id: next_id });
            next_id += 1;
        }
        Self::with_parts(pattern, merges, special)
    }

    pub fn pattern(&self) -> &str {
        &self.pattern
    }

    pub fn merges(&self) -> &[MergeRule] {
        &self.merges
    }

    pub fn regex(&self) -> &Regex {
        &self.regex
    }

    /// Number of ids in use, i.e. one past the largest id.
    pub fn vocab_size(&self) -> usize {
        self.vocab.keys().max().map_or(0, |&m| m as usize + 1)
    }

    pub fn token_bytes(&self, id: TokenId) -> Option<&[u8]> {
        self.vocab.get(&id).map(Vec::as_slice)
    }

    pub fn special_id(&self, token: SpecialToken) -> TokenId {
        self.special
            .iter()
            .find(|(t, _)| *t == token)
            .map(|&(_, id)| id)
            .expect("all special tokens are registered")
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        self.special.iter().any(|&(_, s)| s == id)
    }

    pub fn pretokenize<'a>(&self, text: &'a [u8]) -> Vec<&'a [u8]> {
        pretokenize(&self.regex, text)
    }

    fn encode_chunk(&self, chunk: &[u8], out: &mut Vec<TokenId>) {
        let mut ids: Vec<TokenId> = chunk.iter().map(|&b| b as TokenId).collect();
        while ids.len() >= 2 {
            let best = ids
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0], w[1])).map(|&(rank, id)| (rank, (w[0], w[1]), id)))
                .min();
            match best {
                Some((_, pair, new_id)) => ids = merge_pair(&ids, pair, new_id),
                None => break,
            }
        }
        out.extend(ids);
    }

    pub fn encode(&self, text: &[u8]) -> Vec<TokenId> {
        let mut out = Vec::new();
        for chunk in self.pretokenize(text) {
            self.encode_chunk(chunk, &mut out);
        }
        out
    }

    /// Special tokens decode to nothing.
    pub fn decode_bytes(&self, ids: &[TokenId]) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for &id in ids {
            let bytes = self.vocab.get(&id).ok_or(TokenizerError::UnknownTokenId(id))?;
            out.extend_from_slice(bytes);
        }
        Ok(out)
    }

    pub fn decode(&self, ids: &[TokenId]) -> Result<String> {
        Ok(String::from_utf8_lossy(&self.decode_bytes(ids)?).into_owned())
    }

    /// `[BOS] line [EOS]`, the unit the model is trained and scored on.
    pub fn encode_profile_line(&self, line: &str) -> Vec<TokenId> {
        let mut ids = vec![self.special_id(SpecialToken::Bos)];
        ids.extend(self.encode(line.as_bytes()));
        ids.push(self.special_id(SpecialToken::Eos));
        ids
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{FORMAT_HEADER}").unwrap();
        writeln!(s, "{}", self.pattern).unwrap();
        for m in &self.merges {
            writeln!(s, "merge {} {} {}", m.left, m.right, m.new_id).unwrap();
        }
        for (t, id) in &self.special {
            writeln!(s, "special {} {}", t.name(), id).unwrap();
        }
        s
    }

    pub fn save<W: Write>(&self, mut sink: W) -> Result<()> {
        sink.write_all(self.to_text().as_bytes())?;
        Ok(())
    }

    pub fn load<R: BufRead>(reader: R) -> Result<Self> {
        let fmt_err = |line: usize, reason: &str| TokenizerError::Format { line, reason: reason.to_string() };
        let mut lines = reader.lines();
        let header = lines.next().transpose()?.ok_or_else(|| fmt_err(1, "empty file"))?;
        if header != FORMAT_HEADER {
            return Err(fmt_err(1, "unsupported header"));
        }
        let pattern = lines.next().transpose()?.ok_or_else(|| fmt_err(2, "missing pattern"))?;
        let mut merges = Vec::new();
        let mut special = Vec::new();
        for (i, line) in lines.enumerate() {
            let line_no = i + 3;
            let line = line?;
            let parts: Vec<&str> = line.split_whitespace().collect();
            match parts.as_slice() {
                [] => continue,
                ["merge", l, r, n] => {
                    let p = |s: &str| s.parse::<TokenId>().map_err(|_| fmt_err(line_no, "bad id"));
                    merges.push(MergeRule { left: p(l)?, right: p(r)?, new_id: p(n)? });
                }
                ["special", name, id] => {
                    let tok = SpecialToken::from_name(name).ok_or_else(|| fmt_err(line_no, "unknown special token"))?;
                    let id = id.parse().map_err(|_| fmt_err(line_no, "bad id"))?;
                    special.push((tok, id));
                }
                _ => return Err(fmt_err(line_no, "unrecognized line")),
            }
        }
        if special.len() != SpecialToken::ALL.len() {
            return Err(fmt_err(0, "special token map incomplete"));
        }
        Self::with_parts(&pattern, merges, special)
    }
}

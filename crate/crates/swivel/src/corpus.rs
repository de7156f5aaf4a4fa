//! Corpus processing: tokenization, vocabulary construction, and sliding
//! window co-occurrence counting.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Result, SwivelError};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Sentences per counting chunk. Chunks are counted independently and merged
/// in order, so results do not depend on whether chunks run in parallel.
const SENTENCE_CHUNK: usize = 1024;

/// Split text into sentences of lowercased tokens.
///
/// Sentence boundaries are `.`, `!`, `?`, and newline. Punctuation is
/// discarded, but hyphens and apostrophes that sit between alphanumeric
/// characters are kept, so `state-of-the-art` and `isn't` survive as single
/// tokens.
pub fn tokenize(text: &str) -> Vec<Vec<String>> {
    let mut sentences = Vec::new();
    for line in text.lines() {
        tokenize_line(line, &mut |s| sentences.push(s));
    }
    sentences
}

/// Streaming variant of [`tokenize`]: reads lines from `reader` and feeds
/// each completed sentence to `emit`. Memory use is bounded by the longest
/// line.
pub fn tokenize_reader<R: BufRead>(
    mut reader: R,
    emit: &mut dyn FnMut(Vec<String>),
) -> std::io::Result<()> {
    let mut line = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Ok(());
        }
        tokenize_line(line.trim_end_matches(['\n', '\r']), emit);
    }
}

fn tokenize_line(line: &str, emit: &mut dyn FnMut(Vec<String>)) {
    let mut sentence: Vec<String> = Vec::new();
    let mut token = String::new();
    let mut chars = line.chars().peekable();

    let mut flush_token = |token: &mut String, sentence: &mut Vec<String>| {
        if !token.is_empty() {
            sentence.push(std::mem::take(token));
        }
    };

    while let Some(c) = chars.next() {
        if c.is_alphanumeric() {
            token.extend(c.to_lowercase());
        } else if (c == '-' || c == '\'')
            && !token.is_empty()
            && chars.peek().is_some_and(|n| n.is_alphanumeric())
        {
            token.push(c);
        } else {
            flush_token(&mut token, &mut sentence);
            if matches!(c, '.' | '!' | '?') && !sentence.is_empty() {
                emit(std::mem::take(&mut sentence));
            }
        }
    }
    flush_token(&mut token, &mut sentence);
    if !sentence.is_empty() {
        emit(sentence);
    }
}

/// Frequency-ranked token table. Ids are assigned in descending count order
/// with ties broken lexicographically, so id 0 is the most frequent token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    entries: Vec<(String, u64)>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Build from raw token counts, keeping the `max_size` most frequent
    /// tokens with count at least `min_count`. The result may be empty.
    pub fn from_counts(
        counts: HashMap<String, u64>,
        max_size: usize,
        min_count: u64,
    ) -> Result<Vocabulary> {
        if max_size == 0 {
            return Err(SwivelError::Config("max_size must be at least 1".into()));
        }
        if min_count == 0 {
            return Err(SwivelError::Config("min_count must be at least 1".into()));
        }
        let mut entries: Vec<(String, u64)> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_count)
            .collect();
        entries.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        entries.truncate(max_size);
        Ok(Self::from_entries(entries))
    }

    fn from_entries(entries: Vec<(String, u64)>) -> Vocabulary {
        let index = entries
            .iter()
            .enumerate()
            .map(|(id, (t, _))| (t.clone(), id as u32))
            .collect();
        Vocabulary { entries, index }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        &self.entries[id as usize].0
    }

    pub fn count(&self, id: u32) -> u64 {
        self.entries[id as usize].1
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, u64)> {
        self.entries.iter().map(|(t, c)| (t.as_str(), *c))
    }

    /// One `token<TAB>count` line per id, in id order.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        for (token, count) in &self.entries {
            writeln!(w, "{token}\t{count}")?;
        }
        Ok(())
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| SwivelError::io(path, e))?;
        self.write_to(std::io::BufWriter::new(file))
            .map_err(|e| SwivelError::io(path, e))
    }

    pub fn read_from(r: impl BufRead) -> Result<Vocabulary> {
        let mut entries = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line.map_err(|e| SwivelError::Data(format!("vocabulary read: {e}")))?;
            if line.is_empty() {
                continue;
            }
            let (token, count) = line.split_once('\t').ok_or_else(|| {
                SwivelError::Data(format!("vocabulary line {}: missing tab", lineno + 1))
            })?;
            let count: u64 = count.trim().parse().map_err(|_| {
                SwivelError::Data(format!("vocabulary line {}: bad count {count:?}", lineno + 1))
            })?;
            entries.push((token.to_string(), count));
        }
        let vocab = Self::from_entries(entries);
        if vocab.index.len() != vocab.entries.len() {
            return Err(SwivelError::Data("vocabulary contains duplicate tokens".into()));
        }
        Ok(vocab)
    }

    pub fn read_file(path: &Path) -> Result<Vocabulary> {
        let file = std::fs::File::open(path).map_err(|e| SwivelError::io(path, e))?;
        Self::read_from(std::io::BufReader::new(file))
    }

    /// Map a sentence to ids. Out-of-vocabulary tokens become `None` but keep
    /// their position, so surface distances are preserved.
    pub fn map_sentence(&self, sentence: &[String]) -> Vec<Option<u32>> {
        sentence.iter().map(|t| self.id(t)).collect()
    }
}

/// Count the most frequent tokens of `sentences` into a vocabulary.
pub fn build_vocabulary(
    sentences: &[Vec<String>],
    max_size: usize,
    min_count: u64,
) -> Result<Vocabulary> {
    let mut counts: HashMap<String, u64> = HashMap::new();
    for sentence in sentences {
        for token in sentence {
            *counts.entry(token.clone()).or_insert(0) += 1;
        }
    }
    Vocabulary::from_counts(counts, max_size, min_count)
}

/// Distance weighting applied to context positions within the window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scaling {
    /// 1/distance.
    Harmonic,
    /// (window - distance + 1) / window.
    Linear,
    /// 1 for every in-window position.
    Uniform,
}

impl Scaling {
    pub fn weight(self, dist: usize, window: usize) -> f64 {
        debug_assert!(dist >= 1 && dist <= window);
        match self {
            Scaling::Harmonic => 1.0 / dist as f64,
            Scaling::Linear => (window - dist + 1) as f64 / window as f64,
            Scaling::Uniform => 1.0,
        }
    }
}

impl std::str::FromStr for Scaling {
    type Err = SwivelError;

    fn from_str(s: &str) -> Result<Scaling> {
        match s {
            "harmonic" => Ok(Scaling::Harmonic),
            "linear" => Ok(Scaling::Linear),
            "uniform" => Ok(Scaling::Uniform),
            other => Err(SwivelError::Config(format!(
                "unknown scaling {other:?} (expected harmonic, linear, or uniform)"
            ))),
        }
    }
}

impl std::fmt::Display for Scaling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scaling::Harmonic => "harmonic",
            Scaling::Linear => "linear",
            Scaling::Uniform => "uniform",
        })
    }
}

/// Sliding-window configuration.
#[derive(Debug, Clone, Copy)]
pub struct CoocConfig {
    /// Context positions considered on each side of the focus token.
    pub window: usize,
    pub scaling: Scaling,
    /// Count both directions of each pair. When false only the left context
    /// of each focus token is counted.
    pub symmetric: bool,
}

impl Default for CoocConfig {
    fn default() -> Self {
        CoocConfig {
            window: 10,
            scaling: Scaling::Harmonic,
            symmetric: true,
        }
    }
}

impl CoocConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(SwivelError::Config("window must be at least 1".into()));
        }
        Ok(())
    }
}

/// Sparse accumulator of weighted co-occurrence counts. Absent cells are
/// zero; stored cells are strictly positive.
#[derive(Debug, Clone, Default)]
pub struct CoocAccumulator {
    cells: HashMap<(u32, u32), f64>,
}

impl CoocAccumulator {
    pub fn new() -> CoocAccumulator {
        CoocAccumulator::default()
    }

    pub fn add(&mut self, row: u32, col: u32, weight: f64) {
        debug_assert!(weight > 0.0);
        *self.cells.entry((row, col)).or_insert(0.0) += weight;
    }

    /// Cell-wise addition. Merging is associative and commutative per cell,
    /// and merge order is fixed by the caller, so results are deterministic.
    pub fn merge(&mut self, other: CoocAccumulator) {
        if self.cells.is_empty() {
            self.cells = other.cells;
            return;
        }
        for (key, value) in other.cells {
            *self.cells.entry(key).or_insert(0.0) += value;
        }
    }

    pub fn get(&self, row: u32, col: u32) -> f64 {
        self.cells.get(&(row, col)).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.sorted_cells().iter().map(|&(_, _, v)| v).sum()
    }

    /// Cells sorted by (row, col); the canonical iteration order.
    pub fn sorted_cells(&self) -> Vec<(u32, u32, f64)> {
        let mut cells: Vec<_> = self.cells.iter().map(|(&(i, j), &v)| (i, j, v)).collect();
        cells.sort_unstable_by_key(|&(i, j, _)| (i, j));
        cells
    }

    /// One `row col count` line per cell, sorted by (row, col).
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        for (i, j, v) in self.sorted_cells() {
            writeln!(w, "{i} {j} {v}")?;
        }
        Ok(())
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| SwivelError::io(path, e))?;
        self.write_to(std::io::BufWriter::new(file))
            .map_err(|e| SwivelError::io(path, e))
    }

    pub fn read_from(r: impl BufRead) -> Result<CoocAccumulator> {
        let mut acc = CoocAccumulator::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line.map_err(|e| SwivelError::Data(format!("cooc read: {e}")))?;
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split_ascii_whitespace();
            let bad = || SwivelError::Data(format!("cooc line {}: expected `row col count`", lineno + 1));
            let i: u32 = fields.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            let j: u32 = fields.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            let v: f64 = fields.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            if fields.next().is_some() {
                return Err(bad());
            }
            if !(v > 0.0) || !v.is_finite() {
                return Err(SwivelError::Data(format!(
                    "cooc line {}: count must be finite and positive, got {v}",
                    lineno + 1
                )));
            }
            if acc.cells.insert((i, j), v).is_some() {
                return Err(SwivelError::Data(format!(
                    "cooc line {}: duplicate cell ({i}, {j})",
                    lineno + 1
                )));
            }
        }
        Ok(acc)
    }

    pub fn read_file(path: &Path) -> Result<CoocAccumulator> {
        let file = std::fs::File::open(path).map_err(|e| SwivelError::io(path, e))?;
        Self::read_from(std::io::BufReader::new(file))
    }

    pub fn max_row_id(&self) -> Option<u32> {
        self.cells.keys().map(|&(i, _)| i).max()
    }

    pub fn max_col_id(&self) -> Option<u32> {
        self.cells.keys().map(|&(_, j)| j).max()
    }
}

/// Count weighted co-occurrences over tokenized sentences.
///
/// Windows never cross sentence boundaries, and out-of-vocabulary tokens
/// contribute nothing while still occupying their positions.
pub fn count_cooccurrences(
    sentences: &[Vec<String>],
    vocab: &Vocabulary,
    config: &CoocConfig,
) -> Result<CoocAccumulator> {
    if vocab.is_empty() {
        return Err(SwivelError::Config("vocabulary is empty".into()));
    }
    config.validate()?;
    let ids: Vec<Vec<Option<u32>>> = sentences.iter().map(|s| vocab.map_sentence(s)).collect();
    Ok(count_id_sentences(&ids, config))
}

/// Counting core over id-mapped sentences (`None` marks an out-of-vocabulary
/// position). Dispatches to the parallel kernel when built with the
/// `parallel` feature.
pub fn count_id_sentences(sentences: &[Vec<Option<u32>>], config: &CoocConfig) -> CoocAccumulator {
    #[cfg(feature = "parallel")]
    {
        count_id_sentences_par(sentences, config)
    }
    #[cfg(not(feature = "parallel"))]
    {
        count_id_sentences_seq(sentences, config)
    }
}

/// Sequential counting kernel. Produces results bit-identical to the
/// parallel kernel: both count fixed chunks of sentences and merge the
/// partial accumulators in chunk order.
pub fn count_id_sentences_seq(
    sentences: &[Vec<Option<u32>>],
    config: &CoocConfig,
) -> CoocAccumulator {
    let mut acc = CoocAccumulator::new();
    for chunk in sentences.chunks(SENTENCE_CHUNK) {
        acc.merge(count_chunk(chunk, config));
    }
    acc
}

/// Parallel counting kernel: chunks are counted concurrently and merged in
/// chunk order.
#[cfg(feature = "parallel")]
pub fn count_id_sentences_par(
    sentences: &[Vec<Option<u32>>],
    config: &CoocConfig,
) -> CoocAccumulator {
    let partials: Vec<CoocAccumulator> = sentences
        .par_chunks(SENTENCE_CHUNK)
        .map(|chunk| count_chunk(chunk, config))
        .collect();
    let mut acc = CoocAccumulator::new();
    for partial in partials {
        acc.merge(partial);
    }
    acc
}

fn count_chunk(sentences: &[Vec<Option<u32>>], config: &CoocConfig) -> CoocAccumulator {
    let mut acc = CoocAccumulator::new();
    for sentence in sentences {
        count_sentence(sentence, config, &mut acc);
    }
    acc
}

// Pairs are enumerated once with p < q and, in symmetric mode, added to both
// (i, j) and (j, i) in the same pass. Each mirrored pair of cells therefore
// receives identical addition sequences, making the symmetry of the
// accumulator exact rather than approximate.
fn count_sentence(ids: &[Option<u32>], config: &CoocConfig, acc: &mut CoocAccumulator) {
    let window = config.window;
    for p in 0..ids.len() {
        let Some(i) = ids[p] else { continue };
        let hi = (p + window).min(ids.len().saturating_sub(1));
        for q in p + 1..=hi {
            let Some(j) = ids[q] else { continue };
            let w = config.scaling.weight(q - p, window);
            if config.symmetric {
                acc.add(i, j, w);
                acc.add(j, i, w);
            } else {
                // Asymmetric counting keeps only the left context: the focus
                // is the later position q.
                acc.add(j, i, w);
            }
        }
    }
}

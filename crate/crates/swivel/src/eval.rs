//! Embedding evaluation: word similarity by Spearman rank correlation and
//! analogy accuracy by 3CosAdd over the full vocabulary.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use serde::Serialize;

use crate::corpus::Vocabulary;
use crate::error::{Result, SwivelError};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// A token -> vector table. Tokens are lowercased at load; lookups are
/// case-sensitive afterwards.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    vectors: Vec<f32>,
    dim: usize,
}

impl EmbeddingTable {
    /// Build from parallel token/vector rows. Later duplicates (after
    /// lowercasing) are rejected.
    pub fn new(tokens: Vec<String>, dim: usize, vectors: Vec<f32>) -> Result<EmbeddingTable> {
        if dim == 0 {
            return Err(SwivelError::Config("embedding dimension must be at least 1".into()));
        }
        if vectors.len() != tokens.len() * dim {
            return Err(SwivelError::Data(format!(
                "embedding table shape mismatch: {} tokens, dim {dim}, {} values",
                tokens.len(),
                vectors.len()
            )));
        }
        let tokens: Vec<String> = tokens.into_iter().map(|t| t.to_lowercase()).collect();
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, token) in tokens.iter().enumerate() {
            if index.insert(token.clone(), id as u32).is_some() {
                return Err(SwivelError::Data(format!(
                    "embedding table contains duplicate token {token:?}"
                )));
            }
        }
        Ok(EmbeddingTable {
            tokens,
            index,
            vectors,
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn vector(&self, id: u32) -> &[f32] {
        let id = id as usize;
        &self.vectors[id * self.dim..(id + 1) * self.dim]
    }

    pub fn get(&self, token: &str) -> Option<&[f32]> {
        self.id(token).map(|id| self.vector(id))
    }

    /// All rows rescaled to unit length (zero rows stay zero). The analogy
    /// argmax streams this copy so scoring is a bare dot product.
    fn unit_rows(&self) -> Vec<f32> {
        let mut unit = self.vectors.clone();
        for row in unit.chunks_exact_mut(self.dim) {
            normalize(row);
        }
        unit
    }

    /// Load the text export format: a `rows dim` header line, then one
    /// `token v1 .. vd` line per row.
    pub fn read_from(r: impl BufRead) -> Result<EmbeddingTable> {
        let mut lines = r.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| SwivelError::Data("embeddings: empty file".into()))?;
        let header = header.map_err(|e| SwivelError::Data(format!("embeddings read: {e}")))?;
        let mut fields = header.split_ascii_whitespace();
        let bad_header = || SwivelError::Data("embeddings: header must be `rows dim`".into());
        let rows: usize = fields.next().ok_or_else(bad_header)?.parse().map_err(|_| bad_header())?;
        let dim: usize = fields.next().ok_or_else(bad_header)?.parse().map_err(|_| bad_header())?;
        if fields.next().is_some() {
            return Err(bad_header());
        }
        let mut tokens = Vec::with_capacity(rows);
        let mut vectors = Vec::with_capacity(rows * dim);
        for (lineno, line) in lines {
            let line = line.map_err(|e| SwivelError::Data(format!("embeddings read: {e}")))?;
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split_ascii_whitespace();
            let token = fields
                .next()
                .ok_or_else(|| SwivelError::Data(format!("embeddings line {}: empty", lineno + 1)))?;
            tokens.push(token.to_string());
            let before = vectors.len();
            for field in fields {
                let v: f32 = field.parse().map_err(|_| {
                    SwivelError::Data(format!("embeddings line {}: bad value {field:?}", lineno + 1))
                })?;
                vectors.push(v);
            }
            if vectors.len() - before != dim {
                return Err(SwivelError::Data(format!(
                    "embeddings line {}: expected {dim} values, got {}",
                    lineno + 1,
                    vectors.len() - before
                )));
            }
        }
        if tokens.len() != rows {
            return Err(SwivelError::Data(format!(
                "embeddings: header declared {rows} rows, found {}",
                tokens.len()
            )));
        }
        EmbeddingTable::new(tokens, dim, vectors)
    }

    pub fn read_file(path: &Path) -> Result<EmbeddingTable> {
        let file = std::fs::File::open(path).map_err(|e| SwivelError::io(path, e))?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

fn normalize(row: &mut [f32]) {
    let norm = row.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in row.iter_mut() {
            *v = (*v as f64 / norm) as f32;
        }
    }
}

#[inline]
fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Cosine similarity in [-1, 1]; zero vectors compare as 0.
pub fn cosine(u: &[f32], v: &[f32]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(SwivelError::Config(format!(
            "cosine dimension mismatch: {} vs {}",
            u.len(),
            v.len()
        )));
    }
    let nu = dot(u, u).sqrt();
    let nv = dot(v, v).sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Ok(0.0);
    }
    Ok(dot(u, v) / (nu * nv))
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman_rho(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.len() < 2 {
        return Err(SwivelError::Data(format!(
            "spearman correlation requires at least 2 pairs, got {}",
            pairs.len()
        )));
    }
    let xs = ranks(pairs.iter().map(|p| p.0));
    let ys = ranks(pairs.iter().map(|p| p.1));
    let n = pairs.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        cov += (x - mean) * (y - mean);
        var_x += (x - mean) * (x - mean);
        var_y += (y - mean) * (y - mean);
    }
    if var_x == 0.0 || var_y == 0.0 {
        return Err(SwivelError::Data(
            "spearman correlation undefined: zero rank variance".into(),
        ));
    }
    Ok(cov / (var_x * var_y).sqrt())
}

/// Average ranks (1-based) with ties sharing their mean rank.
fn ranks(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let values: Vec<f64> = values.collect();
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite scores"));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            out[idx] = rank;
        }
        i = j + 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityPair {
    pub word_a: String,
    pub word_b: String,
    pub score: f64,
}

/// Parse `word1 word2 score` lines (tab or space separated). Leading header
/// lines that do not parse are skipped.
pub fn read_similarity_dataset(r: impl BufRead) -> Result<Vec<SimilarityPair>> {
    let mut pairs: Vec<SimilarityPair> = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line.map_err(|e| SwivelError::Data(format!("similarity read: {e}")))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let parsed = if fields.len() == 3 {
            fields[2]
                .parse::<f64>()
                .ok()
                .filter(|s| s.is_finite())
                .map(|score| SimilarityPair {
                    word_a: fields[0].to_lowercase(),
                    word_b: fields[1].to_lowercase(),
                    score,
                })
        } else {
            None
        };
        match parsed {
            Some(pair) => pairs.push(pair),
            None if pairs.is_empty() => continue, // tolerated header line
            None => {
                return Err(SwivelError::Data(format!(
                    "similarity line {}: expected `word1 word2 score`",
                    lineno + 1
                )))
            }
        }
    }
    if pairs.is_empty() {
        return Err(SwivelError::Data("similarity dataset is empty".into()));
    }
    Ok(pairs)
}

pub fn read_similarity_file(path: &Path) -> Result<Vec<SimilarityPair>> {
    let file = std::fs::File::open(path).map_err(|e| SwivelError::io(path, e))?;
    read_similarity_dataset(std::io::BufReader::new(file))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalogyQuery {
    pub a: String,
    pub b: String,
    pub c: String,
    pub d: String,
    /// Index into [`AnalogyDataset::sections`], if the file had sections.
    pub section: Option<u32>,
}

#[derive(Debug, Clone, Default)]
pub struct AnalogyDataset {
    pub queries: Vec<AnalogyQuery>,
    pub sections: Vec<String>,
}

/// Parse `a b c d` lines; `: name` starts a section, `//` lines are
/// comments.
pub fn read_analogy_dataset(r: impl BufRead) -> Result<AnalogyDataset> {
    let mut dataset = AnalogyDataset::default();
    for (lineno, line) in r.lines().enumerate() {
        let line = line.map_err(|e| SwivelError::Data(format!("analogy read: {e}")))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with("//") {
            continue;
        }
        if let Some(name) = line.strip_prefix(':') {
            dataset.sections.push(name.trim().to_string());
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(SwivelError::Data(format!(
                "analogy line {}: expected `a b c d`",
                lineno + 1
            )));
        }
        dataset.queries.push(AnalogyQuery {
            a: fields[0].to_lowercase(),
            b: fields[1].to_lowercase(),
            c: fields[2].to_lowercase(),
            d: fields[3].to_lowercase(),
            section: (!dataset.sections.is_empty()).then(|| dataset.sections.len() as u32 - 1),
        });
    }
    if dataset.queries.is_empty() {
        return Err(SwivelError::Data("analogy dataset is empty".into()));
    }
    Ok(dataset)
}

pub fn read_analogy_file(path: &Path) -> Result<AnalogyDataset> {
    let file = std::fs::File::open(path).map_err(|e| SwivelError::io(path, e))?;
    read_analogy_dataset(std::io::BufReader::new(file))
}

#[derive(Debug, Clone, Serialize)]
pub struct SimilarityReport {
    /// None when the correlation is degenerate (zero rank variance).
    pub rho: Option<f64>,
    pub used: usize,
    pub skipped: usize,
}

/// Rank in-vocabulary pairs by cosine similarity and correlate with the
/// human scores. Pairs with any out-of-vocabulary word are skipped and
/// counted.
pub fn evaluate_similarity(table: &EmbeddingTable, dataset: &[SimilarityPair]) -> Result<SimilarityReport> {
    if dataset.is_empty() {
        return Err(SwivelError::Data("similarity dataset is empty".into()));
    }
    let mut scored = Vec::with_capacity(dataset.len());
    for pair in dataset {
        match (table.get(&pair.word_a), table.get(&pair.word_b)) {
            (Some(u), Some(v)) => scored.push((cosine(u, v)?, pair.score)),
            _ => {}
        }
    }
    let used = scored.len();
    let skipped = dataset.len() - used;
    if used == 0 {
        return Err(SwivelError::Data(
            "no similarity pairs overlap the vocabulary".into(),
        ));
    }
    if used < 2 {
        return Err(SwivelError::Data(
            "fewer than 2 in-vocabulary similarity pairs".into(),
        ));
    }
    let rho = match spearman_rho(&scored) {
        Ok(rho) => Some(rho),
        Err(_) => None, // degenerate: zero rank variance
    };
    Ok(SimilarityReport { rho, used, skipped })
}

#[derive(Debug, Clone, Serialize)]
pub struct SectionReport {
    pub name: String,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalogyReport {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    pub oov: usize,
    pub sections: Vec<SectionReport>,
}

/// Answer `a : b :: c : ?` by the vocabulary argmax of cosine similarity to
/// (b - a + c) over unit-normalized vectors, excluding the query terms.
/// Queries with any out-of-vocabulary term count as losses.
pub fn evaluate_analogy(table: &EmbeddingTable, dataset: &AnalogyDataset) -> Result<AnalogyReport> {
    if dataset.queries.is_empty() {
        return Err(SwivelError::Data("analogy dataset is empty".into()));
    }
    let unit = table.unit_rows();
    let dim = table.dim();

    let verdicts: Vec<(bool, bool)> = map_queries(&dataset.queries, dim, |query, target| {
        let ids = (
            table.id(&query.a),
            table.id(&query.b),
            table.id(&query.c),
            table.id(&query.d),
        );
        let (Some(a), Some(b), Some(c), Some(d)) = ids else {
            return (false, true); // out-of-vocabulary: a loss
        };
        for (out, ((&va, &vb), &vc)) in target.iter_mut().zip(
            unit[a as usize * dim..]
                .iter()
                .zip(&unit[b as usize * dim..])
                .zip(&unit[c as usize * dim..]),
        ) {
            *out = vb - va + vc;
        }
        let predicted = argmax_excluding(&unit, dim, target, [a, b, c]);
        (predicted == Some(d), false)
    });

    let correct = verdicts.iter().filter(|v| v.0).count();
    let oov = verdicts.iter().filter(|v| v.1).count();
    let total = verdicts.len();

    let mut sections = Vec::new();
    for (idx, name) in dataset.sections.iter().enumerate() {
        let in_section = dataset
            .queries
            .iter()
            .zip(&verdicts)
            .filter(|(q, _)| q.section == Some(idx as u32));
        let total = in_section.clone().count();
        let correct = in_section.filter(|(_, v)| v.0).count();
        sections.push(SectionReport {
            name: name.clone(),
            correct,
            total,
            accuracy: if total > 0 { correct as f64 / total as f64 } else { 0.0 },
        });
    }

    Ok(AnalogyReport {
        correct,
        total,
        accuracy: correct as f64 / total as f64,
        oov,
        sections,
    })
}

/// Run `score` over queries with a per-worker scratch vector of length
/// `dim`; results come back in query order.
fn map_queries<T: Send>(
    queries: &[AnalogyQuery],
    dim: usize,
    score: impl Fn(&AnalogyQuery, &mut [f32]) -> T + Sync,
) -> Vec<T> {
    #[cfg(feature = "parallel")]
    {
        queries
            .par_iter()
            .map_init(|| vec![0.0f32; dim], |target, q| score(q, target))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let mut target = vec![0.0f32; dim];
        queries.iter().map(|q| score(q, &mut target)).collect()
    }
}

/// Argmax of dot(row, target) over all rows except `excluded`; ties go to
/// the lowest id.
fn argmax_excluding(unit: &[f32], dim: usize, target: &[f32], excluded: [u32; 3]) -> Option<u32> {
    let mut best: Option<(f64, u32)> = None;
    for (id, row) in unit.chunks_exact(dim).enumerate() {
        let id = id as u32;
        if excluded.contains(&id) {
            continue;
        }
        let score = dot(row, target);
        if best.is_none_or(|(b, _)| score > b) {
            best = Some((score, id));
        }
    }
    best.map(|(_, id)| id)
}

#[derive(Debug, Clone, Serialize)]
pub struct FrequencyBucket {
    pub mean_log10_frequency: f64,
    pub accuracy: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct FrequencyBreakdown {
    pub buckets: Vec<FrequencyBucket>,
    pub requested: usize,
    /// Queries dropped because a term is missing from the frequency table.
    pub unbucketed: usize,
}

const MIN_BUCKET: usize = 100;

/// Analogy accuracy as a function of the mean corpus frequency of the four
/// query words. Queries are sorted by mean frequency and split into up to
/// `buckets` groups of at least [`MIN_BUCKET`] analogies; equal frequencies
/// never straddle a boundary, and undersized buckets are merged with their
/// neighbor.
pub fn analogy_accuracy_by_frequency(
    table: &EmbeddingTable,
    dataset: &AnalogyDataset,
    vocab: &Vocabulary,
    buckets: usize,
) -> Result<FrequencyBreakdown> {
    if buckets == 0 {
        return Err(SwivelError::Config("bucket count must be at least 1".into()));
    }
    let requested = buckets;
    let unit = table.unit_rows();
    let dim = table.dim();

    // (mean frequency, correct) per query that has all four frequencies.
    let scored: Vec<Option<(f64, bool)>> = map_queries(&dataset.queries, dim, |query, target| {
        let freqs = [&query.a, &query.b, &query.c, &query.d]
            .map(|w| vocab.id(w).map(|id| vocab.count(id) as f64));
        if freqs.iter().any(|f| f.is_none()) {
            return None;
        }
        let mean_freq = freqs.iter().map(|f| f.unwrap()).sum::<f64>() / 4.0;
        let correct = match (
            table.id(&query.a),
            table.id(&query.b),
            table.id(&query.c),
            table.id(&query.d),
        ) {
            (Some(a), Some(b), Some(c), Some(d)) => {
                for (out, ((&va, &vb), &vc)) in target.iter_mut().zip(
                    unit[a as usize * dim..]
                        .iter()
                        .zip(&unit[b as usize * dim..])
                        .zip(&unit[c as usize * dim..]),
                ) {
                    *out = vb - va + vc;
                }
                argmax_excluding(&unit, dim, target, [a, b, c]) == Some(d)
            }
            _ => false,
        };
        Some((mean_freq, correct))
    });

    let unbucketed = scored.iter().filter(|s| s.is_none()).count();
    let mut scored: Vec<(f64, bool)> = scored.into_iter().flatten().collect();
    if scored.is_empty() {
        return Err(SwivelError::Data(
            "no analogy queries overlap the frequency vocabulary".into(),
        ));
    }
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite frequencies"));

    // Equal-count split, snapped forward past runs of equal frequencies.
    let n = scored.len();
    let buckets = buckets.min(n.div_ceil(MIN_BUCKET)).max(1);
    let mut bounds = vec![0usize];
    for b in 1..buckets {
        let mut cut = b * n / buckets;
        while cut < n && cut > 0 && scored[cut].0 == scored[cut - 1].0 {
            cut += 1;
        }
        if cut > *bounds.last().unwrap() && cut < n {
            bounds.push(cut);
        }
    }
    bounds.push(n);

    // Merge undersized buckets into their left neighbor.
    let mut merged = vec![bounds[0]];
    for &bound in &bounds[1..] {
        let start = *merged.last().unwrap();
        if bound - start >= MIN_BUCKET || bound == n {
            merged.push(bound);
        }
    }
    if merged.len() >= 3 {
        let last = merged[merged.len() - 1];
        let prev = merged[merged.len() - 2];
        if last - prev < MIN_BUCKET {
            merged.remove(merged.len() - 2);
        }
    }

    let buckets = merged
        .windows(2)
        .map(|w| {
            let slice = &scored[w[0]..w[1]];
            let correct = slice.iter().filter(|s| s.1).count();
            FrequencyBucket {
                mean_log10_frequency: slice.iter().map(|s| s.0.log10()).sum::<f64>() / slice.len() as f64,
                accuracy: correct as f64 / slice.len() as f64,
                count: slice.len(),
            }
        })
        .collect();
    Ok(FrequencyBreakdown {
        buckets,
        requested: buckets_requested(&merged),
        unbucketed,
    })
}

fn buckets_requested(merged: &[usize]) -> usize {
    merged.len().saturating_sub(1)
}

/// The `top_n` tokens nearest to `query` by cosine similarity, excluding
/// the query itself; ties go to the lowest id.
pub fn nearest_neighbors(
    table: &EmbeddingTable,
    query: &str,
    top_n: usize,
) -> Result<Vec<(String, f64)>> {
    let query_id = table
        .id(query)
        .ok_or_else(|| SwivelError::Data(format!("query token {query:?} is out of vocabulary")))?;
    let query_vec = table.vector(query_id);
    let mut scored: Vec<(u32, f64)> = (0..table.len() as u32)
        .filter(|&id| id != query_id)
        .map(|id| (id, cosine(query_vec, table.vector(id)).expect("equal dims")))
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite cosines").then(a.0.cmp(&b.0)));
    scored.truncate(top_n);
    Ok(scored
        .into_iter()
        .map(|(id, score)| (table.token(id).to_string(), score))
        .collect())
}

/// One machine-readable evaluation record (JSON lines output).
#[derive(Debug, Clone, Serialize)]
pub struct EvalRecord {
    pub name: String,
    pub metric: String,
    pub value: Option<f64>,
    pub used: usize,
    pub skipped: usize,
}

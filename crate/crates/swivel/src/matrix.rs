//! Full co-occurrence matrix assembly and its partition into k x k shards.
//!
//! Ids are frequency-sorted, and each block takes every R-th row (or C-th
//! column), so every shard mixes common and rare features. Shard (rb, cb)
//! holds local cell (t, u) = global cell (rb + t*R, cb + u*C).

use std::io::{BufRead, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::corpus::CoocAccumulator;
use crate::error::{Result, SwivelError};

pub const SHARD_MAGIC: &[u8; 4] = b"SWVL";
pub const SHARD_FORMAT_VERSION: u32 = 1;

/// Sparse co-occurrence matrix (CSR) with row/column marginals and grand
/// total. Dimensions are padded up to multiples of the block size; padded
/// ids have zero marginals and no cells.
#[derive(Debug, Clone)]
pub struct CoocMatrix {
    pub m: usize,
    pub n: usize,
    row_offsets: Vec<usize>,
    col_ids: Vec<u32>,
    values: Vec<f64>,
    pub row_marginals: Vec<f64>,
    pub col_marginals: Vec<f64>,
    pub total: f64,
}

impl CoocMatrix {
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let lo = self.row_offsets[i];
        let hi = self.row_offsets[i + 1];
        match self.col_ids[lo..hi].binary_search(&(j as u32)) {
            Ok(pos) => self.values[lo + pos],
            Err(_) => 0.0,
        }
    }

    /// The (column, value) pairs of row `i`, in column order.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (u32, f64)> + '_ {
        let lo = self.row_offsets[i];
        let hi = self.row_offsets[i + 1];
        self.col_ids[lo..hi]
            .iter()
            .copied()
            .zip(self.values[lo..hi].iter().copied())
    }

    pub fn cells(&self) -> impl Iterator<Item = (usize, u32, f64)> + '_ {
        (0..self.m).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }
}

/// The blocked partition: k rows per block, R = m/k row blocks, C = n/k
/// column blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShardPlan {
    pub k: usize,
    pub row_blocks: usize,
    pub col_blocks: usize,
    pub m: usize,
    pub n: usize,
    pub m_raw: usize,
    pub n_raw: usize,
}

impl ShardPlan {
    pub fn num_shards(&self) -> usize {
        self.row_blocks * self.col_blocks
    }

    /// Locate global cell (i, j): returns (row_block, col_block, t, u) with
    /// i = row_block + t*R and j = col_block + u*C.
    pub fn shard_of(&self, i: usize, j: usize) -> Result<(usize, usize, usize, usize)> {
        if i >= self.m || j >= self.n {
            return Err(SwivelError::Config(format!(
                "cell ({i}, {j}) out of range for {}x{} matrix",
                self.m, self.n
            )));
        }
        Ok((
            i % self.row_blocks,
            j % self.col_blocks,
            i / self.row_blocks,
            j / self.col_blocks,
        ))
    }

    /// Inverse of [`shard_of`](Self::shard_of).
    pub fn global_of(&self, row_block: usize, col_block: usize, t: usize, u: usize) -> (usize, usize) {
        debug_assert!(row_block < self.row_blocks && col_block < self.col_blocks);
        debug_assert!(t < self.k && u < self.k);
        (row_block + t * self.row_blocks, col_block + u * self.col_blocks)
    }
}

/// A dense k x k submatrix with copies of its row/column marginals and the
/// grand total. Zeros are explicit; they drive the unobserved branch of the
/// loss.
#[derive(Debug, Clone)]
pub struct Shard {
    pub row_block: u32,
    pub col_block: u32,
    pub k: usize,
    pub row_blocks: usize,
    pub col_blocks: usize,
    /// Row-major local counts, length k*k.
    pub counts: Vec<f32>,
    pub row_marginals: Vec<f64>,
    pub col_marginals: Vec<f64>,
    pub total: f64,
}

impl Shard {
    pub fn count(&self, t: usize, u: usize) -> f32 {
        self.counts[t * self.k + u]
    }
}

/// Assemble the padded matrix and its shard plan from raw accumulator cells.
///
/// `m_raw` and `n_raw` are rounded up to the next multiple of `k`; the
/// padding ids carry no cells and zero marginals, which makes them inert
/// during training.
pub fn finalize_matrix(
    acc: &CoocAccumulator,
    m_raw: usize,
    n_raw: usize,
    k: usize,
) -> Result<(CoocMatrix, ShardPlan)> {
    if k == 0 {
        return Err(SwivelError::Config("block size k must be at least 1".into()));
    }
    if m_raw == 0 || n_raw == 0 {
        return Err(SwivelError::Config("matrix dimensions must be at least 1".into()));
    }
    if k > m_raw || k > n_raw {
        return Err(SwivelError::Config(format!(
            "block size k={k} exceeds matrix dimensions {m_raw}x{n_raw}"
        )));
    }
    let m = m_raw.div_ceil(k) * k;
    let n = n_raw.div_ceil(k) * k;

    let cells = acc.sorted_cells();
    for &(i, j, _) in &cells {
        if i as usize >= m_raw || j as usize >= n_raw {
            return Err(SwivelError::Data(format!(
                "cell ({i}, {j}) out of range for declared dimensions {m_raw}x{n_raw}"
            )));
        }
    }

    let mut row_offsets = vec![0usize; m + 1];
    let mut col_ids = Vec::with_capacity(cells.len());
    let mut values = Vec::with_capacity(cells.len());
    for &(i, j, v) in &cells {
        row_offsets[i as usize + 1] += 1;
        col_ids.push(j);
        values.push(v);
    }
    for i in 0..m {
        row_offsets[i + 1] += row_offsets[i];
    }

    // Marginals are accumulated in canonical cell order so they are
    // reproducible bit for bit.
    let mut row_marginals = vec![0.0; m];
    let mut col_marginals = vec![0.0; n];
    for &(i, j, v) in &cells {
        row_marginals[i as usize] += v;
        col_marginals[j as usize] += v;
    }
    let total: f64 = row_marginals.iter().sum();

    let plan = ShardPlan {
        k,
        row_blocks: m / k,
        col_blocks: n / k,
        m,
        n,
        m_raw,
        n_raw,
    };
    let matrix = CoocMatrix {
        m,
        n,
        row_offsets,
        col_ids,
        values,
        row_marginals,
        col_marginals,
        total,
    };
    Ok((matrix, plan))
}

/// Materialize one dense shard from the sparse matrix.
pub fn extract_shard(matrix: &CoocMatrix, plan: &ShardPlan, row_block: usize, col_block: usize) -> Shard {
    assert!(row_block < plan.row_blocks && col_block < plan.col_blocks);
    let k = plan.k;
    let c = plan.col_blocks as u32;
    let cb = col_block as u32;
    let mut counts = vec![0.0f32; k * k];
    let mut row_marginals = vec![0.0; k];
    let mut col_marginals = vec![0.0; k];
    for t in 0..k {
        let gi = row_block + t * plan.row_blocks;
        row_marginals[t] = matrix.row_marginals[gi];
        let row = &mut counts[t * k..(t + 1) * k];
        for (j, v) in matrix.row(gi) {
            if j % c == cb {
                row[(j / c) as usize] = v as f32;
            }
        }
    }
    for u in 0..k {
        col_marginals[u] = matrix.col_marginals[col_block + u * plan.col_blocks];
    }
    Shard {
        row_block: row_block as u32,
        col_block: col_block as u32,
        k,
        row_blocks: plan.row_blocks,
        col_blocks: plan.col_blocks,
        counts,
        row_marginals,
        col_marginals,
        total: matrix.total,
    }
}

/// Canonical shard file name for a block pair.
pub fn shard_file_name(row_block: usize, col_block: usize) -> String {
    format!("shard-{row_block:04}-{col_block:04}.swvl")
}

/// Write one shard in the binary format: magic `SWVL`, version, k,
/// row_block, col_block, R, C (all u32 LE), k row marginals and k column
/// marginals and the total (f64 LE), then k*k row-major f32 counts.
pub fn write_shard(shard: &Shard, mut w: impl Write) -> std::io::Result<()> {
    w.write_all(SHARD_MAGIC)?;
    w.write_u32::<LittleEndian>(SHARD_FORMAT_VERSION)?;
    w.write_u32::<LittleEndian>(shard.k as u32)?;
    w.write_u32::<LittleEndian>(shard.row_block)?;
    w.write_u32::<LittleEndian>(shard.col_block)?;
    w.write_u32::<LittleEndian>(shard.row_blocks as u32)?;
    w.write_u32::<LittleEndian>(shard.col_blocks as u32)?;
    for &v in &shard.row_marginals {
        w.write_f64::<LittleEndian>(v)?;
    }
    for &v in &shard.col_marginals {
        w.write_f64::<LittleEndian>(v)?;
    }
    w.write_f64::<LittleEndian>(shard.total)?;
    for &v in &shard.counts {
        w.write_f32::<LittleEndian>(v)?;
    }
    Ok(())
}

pub fn write_shard_file(shard: &Shard, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| SwivelError::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_shard(shard, &mut w).map_err(|e| SwivelError::io(path, e))?;
    w.flush().map_err(|e| SwivelError::io(path, e))
}

pub fn read_shard(mut r: impl Read) -> Result<Shard> {
    let fail = |what: &str| SwivelError::Data(format!("shard file: {what}"));
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| fail("truncated header"))?;
    if &magic != SHARD_MAGIC {
        return Err(fail("bad magic"));
    }
    let version = r.read_u32::<LittleEndian>().map_err(|_| fail("truncated header"))?;
    if version != SHARD_FORMAT_VERSION {
        return Err(SwivelError::Data(format!(
            "shard file: unsupported format version {version}"
        )));
    }
    let k = r.read_u32::<LittleEndian>().map_err(|_| fail("truncated header"))? as usize;
    let row_block = r.read_u32::<LittleEndian>().map_err(|_| fail("truncated header"))?;
    let col_block = r.read_u32::<LittleEndian>().map_err(|_| fail("truncated header"))?;
    let row_blocks = r.read_u32::<LittleEndian>().map_err(|_| fail("truncated header"))? as usize;
    let col_blocks = r.read_u32::<LittleEndian>().map_err(|_| fail("truncated header"))? as usize;
    if k == 0 || row_blocks == 0 || col_blocks == 0 {
        return Err(fail("zero dimension"));
    }
    if (row_block as usize) >= row_blocks || (col_block as usize) >= col_blocks {
        return Err(fail("block indices out of range"));
    }
    let mut row_marginals = vec![0.0; k];
    r.read_f64_into::<LittleEndian>(&mut row_marginals)
        .map_err(|_| fail("truncated row marginals"))?;
    let mut col_marginals = vec![0.0; k];
    r.read_f64_into::<LittleEndian>(&mut col_marginals)
        .map_err(|_| fail("truncated column marginals"))?;
    let total = r.read_f64::<LittleEndian>().map_err(|_| fail("truncated total"))?;
    let mut counts = vec![0.0f32; k * k];
    r.read_f32_into::<LittleEndian>(&mut counts)
        .map_err(|_| fail("truncated counts"))?;
    let mut end = [0u8; 1];
    if r.read(&mut end).map_err(|_| fail("read error"))? != 0 {
        return Err(fail("trailing bytes"));
    }
    Ok(Shard {
        row_block,
        col_block,
        k,
        row_blocks,
        col_blocks,
        counts,
        row_marginals,
        col_marginals,
        total,
    })
}

pub fn read_shard_file(path: &Path) -> Result<Shard> {
    let file = std::fs::File::open(path).map_err(|e| SwivelError::io(path, e))?;
    read_shard(std::io::BufReader::new(file))
}

/// Plan manifest: the plan dimensions plus the grand total, as `key = value`
/// text.
pub fn write_manifest(plan: &ShardPlan, total: f64, mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "m_raw = {}", plan.m_raw)?;
    writeln!(w, "n_raw = {}", plan.n_raw)?;
    writeln!(w, "m = {}", plan.m)?;
    writeln!(w, "n = {}", plan.n)?;
    writeln!(w, "k = {}", plan.k)?;
    writeln!(w, "row_blocks = {}", plan.row_blocks)?;
    writeln!(w, "col_blocks = {}", plan.col_blocks)?;
    writeln!(w, "total = {}", total)?;
    Ok(())
}

pub fn write_manifest_file(plan: &ShardPlan, total: f64, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| SwivelError::io(path, e))?;
    write_manifest(plan, total, std::io::BufWriter::new(file)).map_err(|e| SwivelError::io(path, e))
}

pub fn read_manifest(r: impl BufRead) -> Result<(ShardPlan, f64)> {
    let mut fields: std::collections::HashMap<String, String> = std::collections::HashMap::new();
    for line in r.lines() {
        let line = line.map_err(|e| SwivelError::Data(format!("manifest read: {e}")))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| SwivelError::Data(format!("manifest: bad line {line:?}")))?;
        fields.insert(key.trim().to_string(), value.trim().to_string());
    }
    let get = |key: &str| {
        fields
            .get(key)
            .ok_or_else(|| SwivelError::Data(format!("manifest: missing key {key:?}")))
    };
    let parse_usize = |key: &str| -> Result<usize> {
        get(key)?
            .parse()
            .map_err(|_| SwivelError::Data(format!("manifest: bad value for {key:?}")))
    };
    let plan = ShardPlan {
        m_raw: parse_usize("m_raw")?,
        n_raw: parse_usize("n_raw")?,
        m: parse_usize("m")?,
        n: parse_usize("n")?,
        k: parse_usize("k")?,
        row_blocks: parse_usize("row_blocks")?,
        col_blocks: parse_usize("col_blocks")?,
    };
    let total: f64 = get("total")?
        .parse()
        .map_err(|_| SwivelError::Data("manifest: bad value for \"total\"".into()))?;
    if plan.k * plan.row_blocks != plan.m || plan.k * plan.col_blocks != plan.n {
        return Err(SwivelError::Data("manifest: inconsistent dimensions".into()));
    }
    Ok((plan, total))
}

pub fn read_manifest_file(path: &Path) -> Result<(ShardPlan, f64)> {
    let file = std::fs::File::open(path).map_err(|e| SwivelError::io(path, e))?;
    read_manifest(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn acc_from(cells: &[(u32, u32, f64)]) -> CoocAccumulator {
        let mut acc = CoocAccumulator::new();
        for &(i, j, v) in cells {
            acc.add(i, j, v);
        }
        acc
    }

    #[test]
    fn padding_rounds_up_to_multiple_of_k() {
        let (matrix, plan) = finalize_matrix(&acc_from(&[(0, 0, 1.0)]), 10, 10, 4).unwrap();
        assert_eq!((matrix.m, matrix.n), (12, 12));
        assert_eq!(plan.row_blocks, 3);
    }

    #[test]
    fn paper_scale_block_arithmetic() {
        let plan = ShardPlan {
            k: 4096,
            row_blocks: 1 << 25 >> 12, // 2^25 / 4096 = 8192
            col_blocks: 8192,
            m: 1 << 25,
            n: 1 << 25,
            m_raw: 1 << 25,
            n_raw: 1 << 25,
        };
        assert_eq!(plan.row_blocks, 8192);
        // Row block 0 holds rows (0, 8192, 16384, ...).
        assert_eq!(plan.shard_of(16384, 0).unwrap(), (0, 0, 2, 0));
        // Row block 1 holds rows (1, 8193, 16385, ...).
        assert_eq!(plan.shard_of(1, 0).unwrap(), (1, 0, 0, 0));
        assert_eq!(plan.shard_of(0, 0).unwrap(), (0, 0, 0, 0));
    }

    #[test]
    fn empty_accumulator_finalizes_to_zeros() {
        let (matrix, _) = finalize_matrix(&CoocAccumulator::new(), 8, 8, 4).unwrap();
        assert_eq!(matrix.total, 0.0);
        assert!(matrix.row_marginals.iter().all(|&v| v == 0.0));
        assert!(matrix.col_marginals.iter().all(|&v| v == 0.0));
        assert_eq!(matrix.nnz(), 0);
    }

    #[test]
    fn rejects_bad_k_and_out_of_range_cells() {
        assert!(finalize_matrix(&CoocAccumulator::new(), 4, 4, 5).is_err());
        assert!(finalize_matrix(&CoocAccumulator::new(), 4, 4, 0).is_err());
        assert!(finalize_matrix(&acc_from(&[(4, 0, 1.0)]), 4, 4, 2).is_err());
    }

    #[test]
    fn shard_of_rejects_out_of_range() {
        let (_, plan) = finalize_matrix(&CoocAccumulator::new(), 4, 4, 2).unwrap();
        assert!(plan.shard_of(4, 0).is_err());
        assert!(plan.shard_of(0, 4).is_err());
    }

    #[test]
    fn marginals_match_cells() {
        let acc = acc_from(&[(0, 1, 1.5), (1, 0, 1.5), (0, 2, 0.5), (2, 0, 0.5), (1, 2, 2.0)]);
        let (matrix, _) = finalize_matrix(&acc, 3, 3, 3).unwrap();
        assert_eq!(matrix.row_marginals, vec![2.0, 3.5, 0.5]);
        assert_eq!(matrix.col_marginals, vec![2.0, 1.5, 2.5]);
        assert_eq!(matrix.total, 6.0);
        assert_eq!(matrix.get(0, 1), 1.5);
        assert_eq!(matrix.get(2, 2), 0.0);
    }

    #[test]
    fn shard_zero_covers_congruent_cells() {
        // 4x4 matrix, k=2: shard (0,0) covers global cells {0,2} x {0,2}.
        let acc = acc_from(&[
            (0, 0, 1.0),
            (0, 2, 2.0),
            (2, 0, 3.0),
            (2, 2, 4.0),
            (1, 1, 9.0),
        ]);
        let (matrix, plan) = finalize_matrix(&acc, 4, 4, 2).unwrap();
        let shard = extract_shard(&matrix, &plan, 0, 0);
        assert_eq!(shard.counts, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(shard.row_marginals, vec![3.0, 7.0]);
        // The (1,1) cell belongs to shard (1,1) only.
        let shard11 = extract_shard(&matrix, &plan, 1, 1);
        assert_eq!(shard11.count(0, 0), 9.0);
    }

    #[test]
    fn all_zero_region_yields_zero_shard() {
        let acc = acc_from(&[(0, 0, 1.0)]);
        let (matrix, plan) = finalize_matrix(&acc, 4, 4, 2).unwrap();
        let shard = extract_shard(&matrix, &plan, 1, 1);
        assert!(shard.counts.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shards_partition_all_cells() {
        let (_, plan) = finalize_matrix(&CoocAccumulator::new(), 6, 10, 2).unwrap();
        let mut seen = vec![false; plan.m * plan.n];
        for rb in 0..plan.row_blocks {
            for cb in 0..plan.col_blocks {
                for t in 0..plan.k {
                    for u in 0..plan.k {
                        let (i, j) = plan.global_of(rb, cb, t, u);
                        assert!(!seen[i * plan.n + j], "cell ({i},{j}) covered twice");
                        seen[i * plan.n + j] = true;
                        assert_eq!(plan.shard_of(i, j).unwrap(), (rb, cb, t, u));
                    }
                }
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn shard_file_round_trip_is_byte_identical() {
        let acc = acc_from(&[(0, 1, 1.5), (1, 0, 0.25), (3, 3, 2.0)]);
        let (matrix, plan) = finalize_matrix(&acc, 4, 4, 2).unwrap();
        let shard = extract_shard(&matrix, &plan, 1, 1);
        let mut buf = Vec::new();
        write_shard(&shard, &mut buf).unwrap();
        let back = read_shard(buf.as_slice()).unwrap();
        let mut buf2 = Vec::new();
        write_shard(&back, &mut buf2).unwrap();
        assert_eq!(buf, buf2);
        assert_eq!(back.counts, shard.counts);
        assert_eq!(back.row_marginals, shard.row_marginals);
        assert_eq!(back.total, shard.total);
    }

    #[test]
    fn shard_read_rejects_corruption() {
        let acc = acc_from(&[(0, 0, 1.0)]);
        let (matrix, plan) = finalize_matrix(&acc, 2, 2, 2).unwrap();
        let shard = extract_shard(&matrix, &plan, 0, 0);
        let mut buf = Vec::new();
        write_shard(&shard, &mut buf).unwrap();

        let mut bad_magic = buf.clone();
        bad_magic[0] = b'X';
        assert!(read_shard(bad_magic.as_slice()).is_err());

        let mut bad_version = buf.clone();
        bad_version[4] = 99;
        assert!(read_shard(bad_version.as_slice()).is_err());

        let truncated = &buf[..buf.len() - 3];
        assert!(read_shard(truncated).is_err());

        let mut trailing = buf.clone();
        trailing.push(0);
        assert!(read_shard(trailing.as_slice()).is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let (_, plan) = finalize_matrix(&acc_from(&[(0, 0, 2.5)]), 10, 6, 2).unwrap();
        let mut buf = Vec::new();
        write_manifest(&plan, 2.5, &mut buf).unwrap();
        let (back, total) = read_manifest(buf.as_slice()).unwrap();
        assert_eq!(back, plan);
        assert_eq!(total, 2.5);
    }

    #[test]
    fn shard_file_name_format() {
        assert_eq!(shard_file_name(3, 12), "shard-0003-0012.swvl");
    }
}

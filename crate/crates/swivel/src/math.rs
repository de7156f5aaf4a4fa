//! Dense block kernels for the training step.
//!
//! Each kernel has a sequential and a row-parallel variant. Rows are
//! computed independently in both, so the variants produce bit-identical
//! output; the unsuffixed entry points dispatch on the `parallel` feature.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[cfg(feature = "parallel")]
const MIN_ROWS_PER_TASK: usize = 8;

/// predictions = block * context_block^T, shapes (k x d) * (k x d)^T -> k x k.
pub fn block_product(block: &[f64], context_block: &[f64], k: usize, d: usize, out: &mut [f64]) {
    #[cfg(feature = "parallel")]
    {
        block_product_par(block, context_block, k, d, out)
    }
    #[cfg(not(feature = "parallel"))]
    {
        block_product_seq(block, context_block, k, d, out)
    }
}

pub fn block_product_seq(block: &[f64], context_block: &[f64], k: usize, d: usize, out: &mut [f64]) {
    check_shapes(block, context_block, k, d, out);
    for (t, out_row) in out.chunks_exact_mut(k).enumerate() {
        product_row(&block[t * d..(t + 1) * d], context_block, d, out_row);
    }
}

#[cfg(feature = "parallel")]
pub fn block_product_par(block: &[f64], context_block: &[f64], k: usize, d: usize, out: &mut [f64]) {
    check_shapes(block, context_block, k, d, out);
    out.par_chunks_exact_mut(k)
        .with_min_len(MIN_ROWS_PER_TASK)
        .enumerate()
        .for_each(|(t, out_row)| {
            product_row(&block[t * d..(t + 1) * d], context_block, d, out_row);
        });
}

#[inline]
fn product_row(row: &[f64], context_block: &[f64], d: usize, out_row: &mut [f64]) {
    for (u, out) in out_row.iter_mut().enumerate() {
        let ctx = &context_block[u * d..(u + 1) * d];
        *out = dot(row, ctx);
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // Four independent accumulators give the autovectorizer room to work;
    // the lane split is fixed, so results do not depend on slice length
    // beyond the remainder handling.
    let chunks = a.len() / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..chunks {
        let base = i * 4;
        s0 += a[base] * b[base];
        s1 += a[base + 1] * b[base + 1];
        s2 += a[base + 2] * b[base + 2];
        s3 += a[base + 3] * b[base + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (s0 + s1) + (s2 + s3) + tail
}

/// Gradient for the row block: out = grad * context_block,
/// shapes (k x k) * (k x d) -> k x d.
pub fn row_gradients(grad: &[f64], context_block: &[f64], k: usize, d: usize, out: &mut [f64]) {
    #[cfg(feature = "parallel")]
    {
        row_gradients_par(grad, context_block, k, d, out)
    }
    #[cfg(not(feature = "parallel"))]
    {
        row_gradients_seq(grad, context_block, k, d, out)
    }
}

pub fn row_gradients_seq(grad: &[f64], context_block: &[f64], k: usize, d: usize, out: &mut [f64]) {
    check_grad_shapes(grad, context_block, k, d, out);
    for (t, out_row) in out.chunks_exact_mut(d).enumerate() {
        combine_rows(&grad[t * k..(t + 1) * k], context_block, d, out_row);
    }
}

#[cfg(feature = "parallel")]
pub fn row_gradients_par(grad: &[f64], context_block: &[f64], k: usize, d: usize, out: &mut [f64]) {
    check_grad_shapes(grad, context_block, k, d, out);
    out.par_chunks_exact_mut(d)
        .with_min_len(MIN_ROWS_PER_TASK)
        .enumerate()
        .for_each(|(t, out_row)| {
            combine_rows(&grad[t * k..(t + 1) * k], context_block, d, out_row);
        });
}

/// Gradient for the column block: out = grad^T * block,
/// shapes (k x k)^T * (k x d) -> k x d.
pub fn col_gradients(grad: &[f64], block: &[f64], k: usize, d: usize, out: &mut [f64]) {
    #[cfg(feature = "parallel")]
    {
        col_gradients_par(grad, block, k, d, out)
    }
    #[cfg(not(feature = "parallel"))]
    {
        col_gradients_seq(grad, block, k, d, out)
    }
}

pub fn col_gradients_seq(grad: &[f64], block: &[f64], k: usize, d: usize, out: &mut [f64]) {
    check_grad_shapes(grad, block, k, d, out);
    for (u, out_row) in out.chunks_exact_mut(d).enumerate() {
        combine_cols(grad, u, block, k, d, out_row);
    }
}

#[cfg(feature = "parallel")]
pub fn col_gradients_par(grad: &[f64], block: &[f64], k: usize, d: usize, out: &mut [f64]) {
    check_grad_shapes(grad, block, k, d, out);
    out.par_chunks_exact_mut(d)
        .with_min_len(MIN_ROWS_PER_TASK)
        .enumerate()
        .for_each(|(u, out_row)| {
            combine_cols(grad, u, block, k, d, out_row);
        });
}

/// out_row = sum_u coeffs[u] * rows[u].
#[inline]
fn combine_rows(coeffs: &[f64], rows: &[f64], d: usize, out_row: &mut [f64]) {
    out_row.fill(0.0);
    for (u, &c) in coeffs.iter().enumerate() {
        let row = &rows[u * d..(u + 1) * d];
        for (o, &r) in out_row.iter_mut().zip(row) {
            *o += c * r;
        }
    }
}

/// out_row = sum_t grad[t][u] * rows[t]; reads one strided column of grad.
#[inline]
fn combine_cols(grad: &[f64], u: usize, rows: &[f64], k: usize, d: usize, out_row: &mut [f64]) {
    out_row.fill(0.0);
    for t in 0..k {
        let c = grad[t * k + u];
        let row = &rows[t * d..(t + 1) * d];
        for (o, &r) in out_row.iter_mut().zip(row) {
            *o += c * r;
        }
    }
}

fn check_shapes(block: &[f64], context_block: &[f64], k: usize, d: usize, out: &[f64]) {
    assert_eq!(block.len(), k * d);
    assert_eq!(context_block.len(), k * d);
    assert_eq!(out.len(), k * k);
}

fn check_grad_shapes(grad: &[f64], block: &[f64], k: usize, d: usize, out: &[f64]) {
    assert_eq!(grad.len(), k * k);
    assert_eq!(block.len(), k * d);
    assert_eq!(out.len(), k * d);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fill(len: usize, seed: u64) -> Vec<f64> {
        let mut state = seed;
        (0..len)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
                ((state >> 33) as f64 / (1u64 << 31) as f64) - 0.5
            })
            .collect()
    }

    fn naive_product(a: &[f64], b: &[f64], k: usize, d: usize) -> Vec<f64> {
        let mut out = vec![0.0; k * k];
        for t in 0..k {
            for u in 0..k {
                out[t * k + u] = (0..d).map(|j| a[t * d + j] * b[u * d + j]).sum();
            }
        }
        out
    }

    #[test]
    fn block_product_matches_naive() {
        let (k, d) = (7, 5);
        let a = fill(k * d, 1);
        let b = fill(k * d, 2);
        let mut out = vec![0.0; k * k];
        block_product(&a, &b, k, d, &mut out);
        let naive = naive_product(&a, &b, k, d);
        for (x, y) in out.iter().zip(&naive) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_match_naive() {
        let (k, d) = (6, 4);
        let g = fill(k * k, 3);
        let w = fill(k * d, 4);
        let mut rg = vec![0.0; k * d];
        row_gradients(&g, &w, k, d, &mut rg);
        let mut cg = vec![0.0; k * d];
        col_gradients(&g, &w, k, d, &mut cg);
        for t in 0..k {
            for j in 0..d {
                let want_r: f64 = (0..k).map(|u| g[t * k + u] * w[u * d + j]).sum();
                assert!((rg[t * d + j] - want_r).abs() < 1e-12);
                let want_c: f64 = (0..k).map(|s| g[s * k + t] * w[s * d + j]).sum();
                assert!((cg[t * d + j] - want_c).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sequential_and_dispatched_agree_bitwise() {
        let (k, d) = (65, 19);
        let a = fill(k * d, 7);
        let b = fill(k * d, 8);
        let g = fill(k * k, 9);

        let mut p_seq = vec![0.0; k * k];
        block_product_seq(&a, &b, k, d, &mut p_seq);
        let mut p = vec![0.0; k * k];
        block_product(&a, &b, k, d, &mut p);
        assert_eq!(p, p_seq);

        let mut r_seq = vec![0.0; k * d];
        row_gradients_seq(&g, &b, k, d, &mut r_seq);
        let mut r = vec![0.0; k * d];
        row_gradients(&g, &b, k, d, &mut r);
        assert_eq!(r, r_seq);

        let mut c_seq = vec![0.0; k * d];
        col_gradients_seq(&g, &a, k, d, &mut c_seq);
        let mut c = vec![0.0; k * d];
        col_gradients(&g, &a, k, d, &mut c);
        assert_eq!(c, c_seq);
    }
}

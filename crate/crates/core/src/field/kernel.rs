//! Dense products with a fixed per-entry summation order.
//!
//! Every output entry is accumulated in increasing inner index, whatever the
//! number of rows or the CPU, so a row's result never depends on the batch it
//! was evaluated in. Rust never contracts `a * b + c` into a fused
//! multiply-add, so the wider vector path produces the same bits as the
//! scalar one.

use ndarray::{Array2, ArrayView2};

/// `a (m x k) . b (k x n)`.
pub(crate) fn matmul(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let (m, k) = a.dim();
    assert_eq!(b.nrows(), k, "inner dimensions differ");
    let n = b.ncols();
    let mut out = vec![0.0; m * n];
    if k > 0 && n > 0 {
        let a = a.as_standard_layout();
        let b = b.as_standard_layout();
        let (a, b) = (a.as_slice().expect("standard"), b.as_slice().expect("standard"));
        dispatch(a, b, &mut out, k, n);
    }
    Array2::from_shape_vec((m, n), out).expect("shape")
}

fn dispatch(a: &[f64], b: &[f64], out: &mut [f64], k: usize, n: usize) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx512f") {
            // SAFETY: the feature was just detected.
            unsafe { body_avx512(a, b, out, k, n) };
            return;
        }
        if std::arch::is_x86_feature_detected!("avx") {
            // SAFETY: as above.
            unsafe { body_avx(a, b, out, k, n) };
            return;
        }
    }
    body(a, b, out, k, n);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn body_avx512(a: &[f64], b: &[f64], out: &mut [f64], k: usize, n: usize) {
    body(a, b, out, k, n)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx")]
unsafe fn body_avx(a: &[f64], b: &[f64], out: &mut [f64], k: usize, n: usize) {
    body(a, b, out, k, n)
}

const ROWS: usize = 4;
const COLS: usize = 16;

#[inline(always)]
fn body(a: &[f64], b: &[f64], out: &mut [f64], k: usize, n: usize) {
    let m = a.len() / k;
    let mut i = 0;
    while i + ROWS <= m {
        let a_blk = &a[i * k..(i + ROWS) * k];
        let o_blk = &mut out[i * n..(i + ROWS) * n];
        let mut j = 0;
        while j + COLS <= n {
            tile(a_blk, b, o_blk, k, n, j);
            j += COLS;
        }
        for r in 0..ROWS {
            row(&a_blk[r * k..(r + 1) * k], b, &mut o_blk[r * n..(r + 1) * n], n, j);
        }
        i += ROWS;
    }
    for r in i..m {
        row(&a[r * k..(r + 1) * k], b, &mut out[r * n..(r + 1) * n], n, 0);
    }
}

/// `ROWS x COLS` block of the output starting at column `j`, kept in
/// registers across the inner dimension.
#[inline(always)]
fn tile(a: &[f64], b: &[f64], out: &mut [f64], k: usize, n: usize, j: usize) {
    let mut acc = [[0.0f64; COLS]; ROWS];
    for kk in 0..k {
        let brow: &[f64; COLS] = b[kk * n + j..kk * n + j + COLS].try_into().expect("tile width");
        for r in 0..ROWS {
            let v = a[r * k + kk];
            for c in 0..COLS {
                acc[r][c] += v * brow[c];
            }
        }
    }
    for r in 0..ROWS {
        out[r * n + j..r * n + j + COLS].copy_from_slice(&acc[r]);
    }
}

/// Columns `j..n` of one output row.
#[inline(always)]
fn row(a: &[f64], b: &[f64], out: &mut [f64], n: usize, j: usize) {
    for (kk, &v) in a.iter().enumerate() {
        let brow = &b[kk * n + j..(kk + 1) * n];
        for (o, &w) in out[j..].iter_mut().zip(brow) {
            *o += v * w;
        }
    }
}

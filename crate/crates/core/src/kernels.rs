//! Dense and sparse compute kernels.
//!
//! Each kernel has a sequential implementation and, behind the `parallel`
//! feature, a rayon row-parallel one. Parallel variants split work by output
//! row only, so the per-row accumulation order is identical to the sequential
//! path and results are bit-for-bit the same either way. The public entry
//! points dispatch on problem size: small problems stay sequential to avoid
//! fork/join overhead.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::sparse::CsrMatrix;

/// Work threshold (in multiply-adds) below which dispatch stays sequential.
pub const PARALLEL_THRESHOLD: usize = 1 << 18;

#[inline]
fn matmul_row(a_row: &[f64], b: &[f64], out_row: &mut [f64], k: usize, n: usize) {
    for (p, &av) in a_row.iter().enumerate().take(k) {
        let b_row = &b[p * n..p * n + n];
        for (o, &bv) in out_row.iter_mut().zip(b_row.iter()) {
            *o += av * bv;
        }
    }
}

/// `out += a · b` for row-major `a: m×k`, `b: k×n`, `out: m×n` (out pre-zeroed by caller).
pub fn matmul_seq(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        matmul_row(&a[i * k..i * k + k], b, &mut out[i * n..i * n + n], k, n);
    }
}

#[cfg(feature = "parallel")]
pub fn matmul_par(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.par_chunks_mut(n)
        .enumerate()
        .for_each(|(i, out_row)| matmul_row(&a[i * k..i * k + k], b, out_row, k, n));
}

/// Size-dispatched matrix multiply.
pub fn matmul(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    #[cfg(feature = "parallel")]
    {
        if m * k * n >= PARALLEL_THRESHOLD && m > 1 {
            matmul_par(a, b, out, m, k, n);
            return;
        }
    }
    matmul_seq(a, b, out, m, k, n);
}

#[inline]
fn spmm_row(csr: &CsrMatrix, i: usize, x: &[f64], out_row: &mut [f64], cols: usize) {
    let (idx, vals) = csr.row(i);
    for (&j, &v) in idx.iter().zip(vals.iter()) {
        let x_row = &x[j * cols..j * cols + cols];
        for (o, &xv) in out_row.iter_mut().zip(x_row.iter()) {
            *o += v * xv;
        }
    }
}

/// `out += csr · x` with `x: csr.ncols×cols` dense row-major (out pre-zeroed).
pub fn spmm_seq(csr: &CsrMatrix, x: &[f64], out: &mut [f64], cols: usize) {
    debug_assert_eq!(x.len(), csr.ncols() * cols);
    debug_assert_eq!(out.len(), csr.nrows() * cols);
    for i in 0..csr.nrows() {
        spmm_row(csr, i, x, &mut out[i * cols..i * cols + cols], cols);
    }
}

#[cfg(feature = "parallel")]
pub fn spmm_par(csr: &CsrMatrix, x: &[f64], out: &mut [f64], cols: usize) {
    debug_assert_eq!(x.len(), csr.ncols() * cols);
    debug_assert_eq!(out.len(), csr.nrows() * cols);
    out.par_chunks_mut(cols)
        .enumerate()
        .for_each(|(i, out_row)| spmm_row(csr, i, x, out_row, cols));
}

/// Size-dispatched sparse-dense multiply.
pub fn spmm(csr: &CsrMatrix, x: &[f64], out: &mut [f64], cols: usize) {
    #[cfg(feature = "parallel")]
    {
        if csr.nnz() * cols >= PARALLEL_THRESHOLD && csr.nrows() > 1 {
            spmm_par(csr, x, out, cols);
            return;
        }
    }
    spmm_seq(csr, x, out, cols);
}

/// `out += csrᵀ · g` via row scatter; sequential (writes overlap across rows).
pub fn spmm_transpose_seq(csr: &CsrMatrix, g: &[f64], out: &mut [f64], cols: usize) {
    debug_assert_eq!(g.len(), csr.nrows() * cols);
    debug_assert_eq!(out.len(), csr.ncols() * cols);
    for i in 0..csr.nrows() {
        let (idx, vals) = csr.row(i);
        let g_row = &g[i * cols..i * cols + cols];
        for (&j, &v) in idx.iter().zip(vals.iter()) {
            let o_row = &mut out[j * cols..j * cols + cols];
            for (o, &gv) in o_row.iter_mut().zip(g_row.iter()) {
                *o += v * gv;
            }
        }
    }
}

/// Row-major transpose copy: `a: m×n` → `m×n` transposed into `n×m`.
pub fn transpose(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut t = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            t[j * m + i] = a[i * n + j];
        }
    }
    t
}

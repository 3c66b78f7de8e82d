//! Single-threaded f32 matrix products used by the convolution kernels.
//!
//! All matrices are row-major slices. Every routine *accumulates* into `c`;
//! callers initialize it (zeros or broadcast bias) first. On x86_64 the
//! kernels are recompiled with AVX2/FMA enabled and selected at runtime.

use std::sync::OnceLock;

const MR: usize = 4;
const NR: usize = 16;
/// Below this many output columns the row-panel kernel wastes most lanes,
/// so `gemm_nn` switches to dot products against a transposed `b`.
const NARROW_N: usize = 32;

fn has_avx2_fma() -> bool {
    static DETECTED: OnceLock<bool> = OnceLock::new();
    *DETECTED.get_or_init(|| {
        #[cfg(target_arch = "x86_64")]
        {
            std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma")
        }
        #[cfg(not(target_arch = "x86_64"))]
        {
            false
        }
    })
}

macro_rules! dispatch {
    ($generic:ident, $avx:ident, ($($arg:ident),*)) => {{
        #[cfg(target_arch = "x86_64")]
        {
            if has_avx2_fma() {
                // SAFETY: the CPU supports the features `$avx` is compiled for.
                return unsafe { $avx($($arg),*) };
            }
        }
        $generic($($arg),*)
    }};
}

/// `c[m×n] += a[m×k] · b[k×n]`
pub fn gemm_nn(m: usize, n: usize, k: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if n < NARROW_N && m * k > 0 {
        let bt = transpose(b, k, n);
        return gemm_nt(m, n, k, a, &bt, c);
    }
    dispatch!(gemm_nn_generic, gemm_nn_avx2, (m, n, k, a, b, c))
}

/// `c[m×n] += a[m×k] · b[n×k]ᵀ`
pub fn gemm_nt(m: usize, n: usize, k: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    assert!(a.len() >= m * k && b.len() >= n * k && c.len() >= m * n);
    dispatch!(gemm_nt_generic, gemm_nt_avx2, (m, n, k, a, b, c))
}

/// `c[m×n] += a[k×m]ᵀ · b[k×n]`
pub fn gemm_tn(m: usize, n: usize, k: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    let at = transpose(a, k, m);
    gemm_nn(m, n, k, &at, b, c)
}

pub fn transpose(a: &[f32], rows: usize, cols: usize) -> Vec<f32> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for (cidx, &v) in a[r * cols..(r + 1) * cols].iter().enumerate() {
            out[cidx * rows + r] = v;
        }
    }
    out
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn gemm_nn_avx2(m: usize, n: usize, k: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    gemm_nn_generic(m, n, k, a, b, c)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn gemm_nt_avx2(m: usize, n: usize, k: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    gemm_nt_generic(m, n, k, a, b, c)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn csr_matmul_avx2(csr: &CsrMatrix, n: usize, b: &[f32], c: &mut [f32]) {
    csr_matmul_generic(csr, n, b, c)
}

#[inline(always)]
fn axpy(y: &mut [f32], alpha: f32, x: &[f32]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

#[inline(always)]
fn dot(x: &[f32], y: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    let xc = x.chunks_exact(8);
    let yc = y.chunks_exact(8);
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (xs, ys) in xc.zip(yc) {
        for l in 0..8 {
            acc[l] += xs[l] * ys[l];
        }
    }
    let mut s = acc.iter().sum::<f32>();
    for (a, b) in xr.iter().zip(yr) {
        s += a * b;
    }
    s
}

#[inline(always)]
fn gemm_nn_generic(m: usize, n: usize, k: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    let mut i = 0;
    while i + MR <= m {
        let mut j = 0;
        while j + NR <= n {
            let mut acc = [[0.0f32; NR]; MR];
            for p in 0..k {
                let brow: &[f32; NR] = b[p * n + j..p * n + j + NR].try_into().unwrap();
                for (r, acc_row) in acc.iter_mut().enumerate() {
                    let av = a[(i + r) * k + p];
                    for q in 0..NR {
                        acc_row[q] += av * brow[q];
                    }
                }
            }
            for (r, acc_row) in acc.iter().enumerate() {
                let crow = &mut c[(i + r) * n + j..(i + r) * n + j + NR];
                for q in 0..NR {
                    crow[q] += acc_row[q];
                }
            }
            j += NR;
        }
        if j < n {
            for r in 0..MR {
                let row = i + r;
                for p in 0..k {
                    let av = a[row * k + p];
                    axpy(&mut c[row * n + j..(row + 1) * n], av, &b[p * n + j..(p + 1) * n]);
                }
            }
        }
        i += MR;
    }
    for row in i..m {
        for p in 0..k {
            let av = a[row * k + p];
            axpy(&mut c[row * n..(row + 1) * n], av, &b[p * n..(p + 1) * n]);
        }
    }
}

#[inline(always)]
fn gemm_nt_generic(m: usize, n: usize, k: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            c[i * n + j] += dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

/// Compressed sparse row matrix holding only the nonzero weights of a layer.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub rows: usize,
    pub cols: usize,
    row_ptr: Vec<u32>,
    col_idx: Vec<u32>,
    values: Vec<f32>,
}

impl CsrMatrix {
    pub fn from_dense(dense: &[f32], rows: usize, cols: usize) -> Self {
        assert_eq!(dense.len(), rows * cols);
        let mut row_ptr = Vec::with_capacity(rows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for r in 0..rows {
            for (cidx, &v) in dense[r * cols..(r + 1) * cols].iter().enumerate() {
                if v != 0.0 {
                    col_idx.push(cidx as u32);
                    values.push(v);
                }
            }
            row_ptr.push(values.len() as u32);
        }
        CsrMatrix {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn density(&self) -> f64 {
        if self.rows * self.cols == 0 {
            return 0.0;
        }
        self.nnz() as f64 / (self.rows * self.cols) as f64
    }

    /// `c[rows×n] += self · b[cols×n]`
    pub fn matmul(&self, n: usize, b: &[f32], c: &mut [f32]) {
        assert!(b.len() >= self.cols * n && c.len() >= self.rows * n);
        dispatch!(csr_matmul_generic, csr_matmul_avx2, (self, n, b, c))
    }
}

/// Output columns per register panel of the sparse kernel.
const SB: usize = 16;

#[inline(always)]
fn csr_matmul_generic(csr: &CsrMatrix, n: usize, b: &[f32], c: &mut [f32]) {
    // Each output row accumulates a 16-column panel in registers while the
    // row's nonzeros stream over it. The ragged last panel is copied into a
    // zero-padded buffer so it takes the same path.
    let full = n / SB * SB;
    for j0 in (0..full).step_by(SB) {
        csr_panel(csr, b, n, j0, c, n, j0, SB);
    }
    if full < n {
        let w = n - full;
        let mut pad = vec![0.0f32; csr.cols * SB];
        for p in 0..csr.cols {
            pad[p * SB..p * SB + w].copy_from_slice(&b[p * n + full..(p + 1) * n]);
        }
        csr_panel(csr, &pad, SB, 0, c, n, full, w);
    }
}

/// `c[:, cj..cj+w] += csr · b[:, bj..bj+SB]`, with `b` of row stride `bn`.
#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn csr_panel(csr: &CsrMatrix, b: &[f32], bn: usize, bj: usize, c: &mut [f32], n: usize, cj: usize, w: usize) {
    for r in 0..csr.rows {
        let (lo, hi) = (csr.row_ptr[r] as usize, csr.row_ptr[r + 1] as usize);
        let mut acc = [0.0f32; SB];
        for (&col, &v) in csr.col_idx[lo..hi].iter().zip(&csr.values[lo..hi]) {
            let at = col as usize * bn + bj;
            let brow: &[f32; SB] = b[at..at + SB].try_into().unwrap();
            for q in 0..SB {
                acc[q] += v * brow[q];
            }
        }
        for (cv, a) in c[r * n + cj..r * n + cj + w].iter_mut().zip(&acc) {
            *cv += a;
        }
    }
}

//! Dense row-major f64 matrices with the three products the trainers need.
//!
//! Kernels are written by hand so results are bitwise reproducible run to run
//! and, for `matmul`, independent of batch size: each output element
//! accumulates its k terms in a fixed ascending order no matter how many rows
//! the call computes. A runtime-dispatched AVX2+FMA clone of each kernel
//! provides speed; both clones execute the identical expression tree, so the
//! portable fallback produces the same bits.

#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length mismatch");
        Mat { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Mat { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transposed(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// Copies the given rows into a new matrix, in the order given.
    pub fn select_rows(&self, idx: &[usize]) -> Mat {
        let mut out = Mat::zeros(idx.len(), self.cols);
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).copy_from_slice(self.row(i));
        }
        out
    }

    /// Copies the half-open row range [start, end) into a new matrix.
    pub fn rows_range(&self, start: usize, end: usize) -> Mat {
        assert!(start <= end && end <= self.rows, "row range");
        Mat {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    /// Overwrites rows starting at `dst_start` with the rows of `src`.
    pub fn copy_rows_from(&mut self, dst_start: usize, src: &Mat) {
        assert_eq!(self.cols, src.cols, "column mismatch");
        assert!(dst_start + src.rows <= self.rows, "row overflow");
        let off = dst_start * self.cols;
        self.data[off..off + src.data.len()].copy_from_slice(&src.data);
    }
}

/// C = A * B. Panics on shape mismatch; callers validate shapes at API edges.
pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.cols, b.rows, "matmul inner dims");
    let mut c = Mat::zeros(a.rows, b.cols);
    matmul_dispatch(&a.data, &b.data, &mut c.data, a.rows, a.cols, b.cols);
    c
}

/// C = A * B^T.
pub fn matmul_bt(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.cols, b.cols, "matmul_bt inner dims");
    let mut c = Mat::zeros(a.rows, b.rows);
    matmul_bt_dispatch(&a.data, &b.data, &mut c.data, a.rows, a.cols, b.rows);
    c
}

/// C = A^T * B.
pub fn tmatmul(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.rows, b.rows, "tmatmul inner dims");
    let mut c = Mat::zeros(a.cols, b.cols);
    tmatmul_dispatch(&a.data, &b.data, &mut c.data, a.rows, a.cols, b.cols);
    c
}

// Block sizes keep the streamed operand resident in L2 across the reuse loop.
const K_BLOCK: usize = 128;
const I_BLOCK_BT: usize = 32;
const I_BLOCK_T: usize = 256;

#[inline(always)]
fn matmul_body(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    // k-blocks on the outside so one block of b stays cache-resident across
    // the whole row sweep. Each c element still accumulates in ascending-k
    // order, so the blocking is invisible in the bits.
    let mut lb = 0;
    while lb < k {
        let le = (lb + K_BLOCK).min(k);
        for i in 0..m {
            let arow = &a[i * k..(i + 1) * k];
            let crow = &mut c[i * n..(i + 1) * n];
            let mut l = lb;
            while l + 4 <= le {
                let a0 = arow[l];
                let a1 = arow[l + 1];
                let a2 = arow[l + 2];
                let a3 = arow[l + 3];
                let b0 = &b[l * n..l * n + n];
                let b1 = &b[(l + 1) * n..(l + 1) * n + n];
                let b2 = &b[(l + 2) * n..(l + 2) * n + n];
                let b3 = &b[(l + 3) * n..(l + 3) * n + n];
                for j in 0..n {
                    crow[j] = b3[j].mul_add(
                        a3,
                        b2[j].mul_add(a2, b1[j].mul_add(a1, b0[j].mul_add(a0, crow[j]))),
                    );
                }
                l += 4;
            }
            while l < le {
                let al = arow[l];
                let brow = &b[l * n..l * n + n];
                for j in 0..n {
                    crow[j] = brow[j].mul_add(al, crow[j]);
                }
                l += 1;
            }
        }
        lb = le;
    }
}

// Wide accumulator bank: enough independent FMA chains to hide latency.
#[inline(always)]
fn dot_k(a: &[f64], b: &[f64]) -> f64 {
    const W: usize = 32;
    let mut acc = [0.0f64; W];
    let mut ca = a.chunks_exact(W);
    let mut cb = b.chunks_exact(W);
    for (xa, xb) in (&mut ca).zip(&mut cb) {
        for w in 0..W {
            acc[w] = xa[w].mul_add(xb[w], acc[w]);
        }
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail = x.mul_add(*y, tail);
    }
    let mut s = 0.0;
    for v in acc {
        s += v;
    }
    s + tail
}

#[inline(always)]
fn matmul_bt_body(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    let mut i0 = 0;
    while i0 < m {
        let i1 = (i0 + I_BLOCK_BT).min(m);
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            for i in i0..i1 {
                c[i * n + j] = dot_k(&a[i * k..(i + 1) * k], brow);
            }
        }
        i0 = i1;
    }
}

#[inline(always)]
fn tmatmul_body(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    let mut i0 = 0;
    while i0 < m {
        let i1 = (i0 + I_BLOCK_T).min(m);
        for l in 0..k {
            let crow = &mut c[l * n..(l + 1) * n];
            let mut i = i0;
            while i + 4 <= i1 {
                let a0 = a[i * k + l];
                let a1 = a[(i + 1) * k + l];
                let a2 = a[(i + 2) * k + l];
                let a3 = a[(i + 3) * k + l];
                let b0 = &b[i * n..i * n + n];
                let b1 = &b[(i + 1) * n..(i + 1) * n + n];
                let b2 = &b[(i + 2) * n..(i + 2) * n + n];
                let b3 = &b[(i + 3) * n..(i + 3) * n + n];
                for j in 0..n {
                    crow[j] = b3[j].mul_add(
                        a3,
                        b2[j].mul_add(a2, b1[j].mul_add(a1, b0[j].mul_add(a0, crow[j]))),
                    );
                }
                i += 4;
            }
            while i < i1 {
                let ai = a[i * k + l];
                let brow = &b[i * n..i * n + n];
                for j in 0..n {
                    crow[j] = brow[j].mul_add(ai, crow[j]);
                }
                i += 1;
            }
        }
        i0 = i1;
    }
}

#[cfg(target_arch = "x86_64")]
mod x86 {
    #[target_feature(enable = "avx2,fma")]
    pub unsafe fn matmul(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
        super::matmul_body(a, b, c, m, k, n)
    }

    #[target_feature(enable = "avx2,fma")]
    pub unsafe fn matmul_bt(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
        super::matmul_bt_body(a, b, c, m, k, n)
    }

    #[target_feature(enable = "avx2,fma")]
    pub unsafe fn tmatmul(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
        super::tmatmul_body(a, b, c, m, k, n)
    }
}

#[cfg(target_arch = "x86_64")]
#[inline]
fn wide_ok() -> bool {
    std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma")
}

fn matmul_dispatch(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    #[cfg(target_arch = "x86_64")]
    if wide_ok() {
        return unsafe { x86::matmul(a, b, c, m, k, n) };
    }
    matmul_body(a, b, c, m, k, n)
}

fn matmul_bt_dispatch(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    #[cfg(target_arch = "x86_64")]
    if wide_ok() {
        return unsafe { x86::matmul_bt(a, b, c, m, k, n) };
    }
    matmul_bt_body(a, b, c, m, k, n)
}

fn tmatmul_dispatch(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    #[cfg(target_arch = "x86_64")]
    if wide_ok() {
        return unsafe { x86::tmatmul(a, b, c, m, k, n) };
    }
    tmatmul_body(a, b, c, m, k, n)
}

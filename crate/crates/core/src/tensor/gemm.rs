//! Row-major matrix kernels shared by matmul, convolution and dense layers.
//!
//! All loops run in a fixed order so results are bit-reproducible. Reductions
//! use four interleaved accumulators, combined as `(s0 + s1) + (s2 + s3)`.

/// Rows and columns of `c` computed together by the register-blocked kernel.
const MR: usize = 4;
const NR: usize = 8;

/// `c[i][j] (+)= Σ_p A(i, p)·b[p][j]` where `A(i, p) = a[i·row_stride + p·col_stride]`.
///
/// Every element is summed over `p` in increasing order starting from its
/// initial value, whatever the blocking, so results do not depend on `m` or `n`.
#[allow(clippy::too_many_arguments)]
fn gemm_blocked(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    row_stride: usize,
    col_stride: usize,
    b: &[f64],
    c: &mut [f64],
    accumulate: bool,
) {
    if !accumulate {
        c.fill(0.0);
    }
    for j0 in (0..n).step_by(NR) {
        let nr = NR.min(n - j0);
        for i0 in (0..m).step_by(MR) {
            let mr = MR.min(m - i0);
            if mr == MR && nr == NR {
                let mut acc = [[0.0f64; NR]; MR];
                for (r, row) in acc.iter_mut().enumerate() {
                    row.copy_from_slice(&c[(i0 + r) * n + j0..(i0 + r) * n + j0 + NR]);
                }
                for p in 0..k {
                    let brow: &[f64; NR] = b[p * n + j0..p * n + j0 + NR].try_into().unwrap();
                    for (r, row) in acc.iter_mut().enumerate() {
                        let av = a[(i0 + r) * row_stride + p * col_stride];
                        for (slot, &bv) in row.iter_mut().zip(brow) {
                            *slot += av * bv;
                        }
                    }
                }
                for (r, row) in acc.iter().enumerate() {
                    c[(i0 + r) * n + j0..(i0 + r) * n + j0 + NR].copy_from_slice(row);
                }
            } else {
                for i in i0..i0 + mr {
                    for j in j0..j0 + nr {
                        let mut s = c[i * n + j];
                        for p in 0..k {
                            s += a[i * row_stride + p * col_stride] * b[p * n + j];
                        }
                        c[i * n + j] = s;
                    }
                }
            }
        }
    }
}

/// `c[m×n] (+)= a[m×k] · b[k×n]`
pub fn gemm_nn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64], accumulate: bool) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    gemm_blocked(m, k, n, a, k, 1, b, c, accumulate);
}

/// `c[m×n] (+)= a[m×k] · b[n×k]ᵀ`. Each element is a [`dot`] of two rows.
pub fn gemm_nt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64], accumulate: bool) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    fn row(x: &[f64], k: usize, i: usize) -> &[f64] {
        &x[i * k..(i + 1) * k]
    }
    let put = |c: &mut [f64], i: usize, j: usize, d: f64| {
        let slot = &mut c[i * n + j];
        *slot = if accumulate { *slot + d } else { d };
    };
    let (m2, n2) = (m - m % 2, n - n % 2);
    for i in (0..m2).step_by(2) {
        for j in (0..n2).step_by(2) {
            let d = dot2x2([row(a, k, i), row(a, k, i + 1)], [row(b, k, j), row(b, k, j + 1)]);
            put(c, i, j, d[0][0]);
            put(c, i, j + 1, d[0][1]);
            put(c, i + 1, j, d[1][0]);
            put(c, i + 1, j + 1, d[1][1]);
        }
        for j in n2..n {
            put(c, i, j, dot(row(a, k, i), row(b, k, j)));
            put(c, i + 1, j, dot(row(a, k, i + 1), row(b, k, j)));
        }
    }
    for i in m2..m {
        for j in 0..n {
            put(c, i, j, dot(row(a, k, i), row(b, k, j)));
        }
    }
}

/// Four dot products sharing loads; each is bit-identical to [`dot`].
fn dot2x2(a: [&[f64]; 2], b: [&[f64]; 2]) -> [[f64; 2]; 2] {
    let len = a[0].len();
    let mut acc = [[[0.0f64; 4]; 2]; 2];
    let chunks = len / 4;
    for ch in 0..chunks {
        let base = ch * 4;
        for l in 0..4 {
            let (x0, x1) = (a[0][base + l], a[1][base + l]);
            let (y0, y1) = (b[0][base + l], b[1][base + l]);
            acc[0][0][l] += x0 * y0;
            acc[0][1][l] += x0 * y1;
            acc[1][0][l] += x1 * y0;
            acc[1][1][l] += x1 * y1;
        }
    }
    let mut out = [[0.0; 2]; 2];
    for r in 0..2 {
        for s in 0..2 {
            let mut tail = 0.0;
            for i in chunks * 4..len {
                tail += a[r][i] * b[s][i];
            }
            let q = acc[r][s];
            out[r][s] = (q[0] + q[1]) + (q[2] + q[3]) + tail;
        }
    }
    out
}

/// `c[m×n] (+)= a[k×m]ᵀ · b[k×n]`
pub fn gemm_tn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64], accumulate: bool) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    gemm_blocked(m, k, n, a, 1, m, b, c, accumulate);
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

//! Slice kernels for the recurrent layers. Matrices are row-major.

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4 * 4;
    for (ca, cb) in a[..chunks].chunks_exact(4).zip(b[..chunks].chunks_exact(4)) {
        for k in 0..4 {
            acc[k] += ca[k] * cb[k];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in a[chunks..].iter().zip(&b[chunks..]) {
        s += x * y;
    }
    s
}

/// `y += alpha · x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out[j] += Σ_k m[j, k] · v[k]` for the `out.len()` rows of `m` starting at `row0`.
#[inline]
pub fn matvec_acc(m: &[f64], cols: usize, row0: usize, v: &[f64], out: &mut [f64]) {
    for (j, o) in out.iter_mut().enumerate() {
        let r = row0 + j;
        *o += dot(&m[r * cols..(r + 1) * cols], v);
    }
}

/// `out[k] += Σ_j m[row0 + j, k] · v[j]`, i.e. a transposed product over a row block.
#[inline]
pub fn matvec_t_acc(m: &[f64], cols: usize, row0: usize, v: &[f64], out: &mut [f64]) {
    for (j, &vj) in v.iter().enumerate() {
        if vj != 0.0 {
            let r = row0 + j;
            axpy(vj, &m[r * cols..(r + 1) * cols], out);
        }
    }
}

/// `m[row0 + j, :] += u[j] · v` (rank-one update over a row block).
#[inline]
pub fn outer_acc(m: &mut [f64], cols: usize, row0: usize, u: &[f64], v: &[f64]) {
    for (j, &uj) in u.iter().enumerate() {
        if uj != 0.0 {
            let r = row0 + j;
            axpy(uj, v, &mut m[r * cols..(r + 1) * cols]);
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

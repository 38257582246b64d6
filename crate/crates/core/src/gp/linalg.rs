//! Dense symmetric helpers for small Gram matrices (row-major `n x n`).

/// Lower Cholesky factor of a symmetric matrix, or `None` if not positive definite.
pub fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            let (ri, rj) = (&l[i * n..i * n + j], &l[j * n..j * n + j]);
            for k in 0..j {
                sum -= ri[k] * rj[k];
            }
            if i == j {
                if !(sum > 0.0) || !sum.is_finite() {
                    return None;
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// Solves `L x = b` in place.
pub fn solve_lower(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let row = &l[i * n..i * n + i];
        let mut s = b[i];
        for (k, lv) in row.iter().enumerate() {
            s -= lv * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Solves `L^T x = b` in place.
pub fn solve_upper_t(l: &[f64], n: usize, b: &mut [f64]) {
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// `(L L^T)^{-1}` from the Cholesky factor, via `L^{-1}` built row by row.
pub fn inverse_from_cholesky(l: &[f64], n: usize) -> Vec<f64> {
    let mut linv = vec![0.0; n * n];
    let mut row = vec![0.0; n];
    for i in 0..n {
        row[..=i].iter_mut().for_each(|r| *r = 0.0);
        for k in 0..i {
            let c = l[i * n + k];
            if c != 0.0 {
                let src = &linv[k * n..k * n + k + 1];
                for (r, s) in row[..=k].iter_mut().zip(src) {
                    *r -= c * s;
                }
            }
        }
        row[i] += 1.0;
        let d = l[i * n + i];
        for (dst, r) in linv[i * n..i * n + i + 1].iter_mut().zip(&row[..=i]) {
            *dst = r / d;
        }
    }
    let mut inv = vec![0.0; n * n];
    for i in 0..n {
        let li = &linv[i * n..i * n + i + 1];
        for a in 0..=i {
            let la = li[a];
            if la == 0.0 {
                continue;
            }
            for (dst, lb) in inv[a * n..a * n + a + 1].iter_mut().zip(&li[..=a]) {
                *dst += la * lb;
            }
        }
    }
    for a in 0..n {
        for b in 0..a {
            inv[b * n + a] = inv[a * n + b];
        }
    }
    inv
}

//! Small dense linear algebra on row-major square blocks.
//!
//! The chains in this crate are block tridiagonal with blocks of size
//! `|resource states|`, which is tiny (1 to a handful). Everything here works
//! on flat `&[f64]` slices so the hot loops never allocate per level.

/// LU factorization with partial pivoting of an `n x n` row-major matrix.
#[derive(Debug, Clone)]
pub struct Lu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

impl Lu {
    /// Factorizes `a`. Returns `None` if a pivot is exactly zero or not finite.
    pub fn new(a: &[f64], n: usize) -> Option<Self> {
        debug_assert_eq!(a.len(), n * n);
        let mut lu = a.to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let mut p = k;
            let mut best = lu[k * n + k].abs();
            for i in (k + 1)..n {
                let v = lu[i * n + k].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return None;
            }
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let pivot = lu[k * n + k];
            for i in (k + 1)..n {
                let f = lu[i * n + k] / pivot;
                lu[i * n + k] = f;
                if f != 0.0 {
                    for j in (k + 1)..n {
                        lu[i * n + j] -= f * lu[k * n + j];
                    }
                }
            }
        }
        Some(Self { n, lu, perm })
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.lu[i * n + j] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in (i + 1)..n {
                s -= self.lu[i * n + j] * x[j];
            }
            x[i] = s / self.lu[i * n + i];
        }
        b.copy_from_slice(&x);
    }

    /// Dense inverse, row-major.
    pub fn inverse(&self) -> Vec<f64> {
        let n = self.n;
        let mut inv = vec![0.0; n * n];
        let mut col = vec![0.0; n];
        for j in 0..n {
            col.iter_mut().for_each(|c| *c = 0.0);
            col[j] = 1.0;
            self.solve_in_place(&mut col);
            for i in 0..n {
                inv[i * n + j] = col[i];
            }
        }
        inv
    }
}

/// Inverts a small square matrix; `None` when singular.
pub fn invert(a: &[f64], n: usize) -> Option<Vec<f64>> {
    if n == 1 {
        let v = a[0];
        return (v != 0.0 && v.is_finite()).then(|| vec![1.0 / v]);
    }
    Lu::new(a, n).map(|lu| lu.inverse())
}

/// Inverts `a` into `out` without allocating for `n <= 2`; `false` when singular.
pub fn invert_into(a: &[f64], n: usize, out: &mut [f64]) -> bool {
    match n {
        1 => {
            let v = a[0];
            out[0] = 1.0 / v;
            v != 0.0 && v.is_finite()
        }
        2 => {
            let det = a[0] * a[3] - a[1] * a[2];
            if det == 0.0 || !det.is_finite() {
                return false;
            }
            out[0] = a[3] / det;
            out[1] = -a[1] / det;
            out[2] = -a[2] / det;
            out[3] = a[0] / det;
            true
        }
        _ => match invert(a, n) {
            Some(inv) => {
                out.copy_from_slice(&inv);
                true
            }
            None => false,
        },
    }
}

/// `out = m * v` for a row-major `n x n` matrix.
#[inline]
pub fn mat_vec(m: &[f64], v: &[f64], out: &mut [f64], n: usize) {
    for i in 0..n {
        let row = &m[i * n..(i + 1) * n];
        out[i] = row.iter().zip(v).map(|(a, b)| a * b).sum();
    }
}

/// `out = v^T * m` for a row-major `n x n` matrix.
#[inline]
pub fn vec_mat(v: &[f64], m: &[f64], out: &mut [f64], n: usize) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for i in 0..n {
        let vi = v[i];
        if vi == 0.0 {
            continue;
        }
        for j in 0..n {
            out[j] += vi * m[i * n + j];
        }
    }
}

/// Solves `x A = 0`, `sum(x) = 1` for a small generator-like matrix `A` by
/// replacing the last balance equation with the normalization constraint.
pub fn left_null_normalized(a: &[f64], n: usize) -> Option<Vec<f64>> {
    if n == 1 {
        return Some(vec![1.0]);
    }
    // Transposed system: A^T x^T = 0 with the last row replaced by ones.
    let mut t = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            t[i * n + j] = a[j * n + i];
        }
    }
    for j in 0..n {
        t[(n - 1) * n + j] = 1.0;
    }
    let mut rhs = vec![0.0; n];
    rhs[n - 1] = 1.0;
    let lu = Lu::new(&t, n)?;
    lu.solve_in_place(&mut rhs);
    Some(rhs)
}

//! Small dense linear-algebra kernels.
//!
//! Everything here is deliberately plain: row-major storage, no blocking,
//! fixed sweep orders. Results are bit-reproducible across runs, which the
//! oracle and the trace writers rely on.

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major data. Panics if the length is wrong.
    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Mat { rows, cols, data }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows);
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len());
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `selfᵀ x`.
    pub fn tmatvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, x.len());
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            axpy(x[i], self.row(i), &mut out);
        }
        out
    }

    pub fn frobenius(&self) -> f64 {
        norm2(&self.data)
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Gaussian elimination with partial pivoting on a square system.
///
/// Returns `None` when a pivot falls below `pivot_tol` in absolute value.
pub fn solve_partial_pivot(a: &Mat, b: &[f64], pivot_tol: f64) -> Option<Vec<f64>> {
    let n = a.rows;
    assert_eq!(a.cols, n);
    assert_eq!(b.len(), n);
    let mut m = a.clone();
    let mut rhs = b.to_vec();
    for k in 0..n {
        let mut piv = k;
        for i in k + 1..n {
            if m[(i, k)].abs() > m[(piv, k)].abs() {
                piv = i;
            }
        }
        if !(m[(piv, k)].abs() >= pivot_tol) {
            return None;
        }
        if piv != k {
            for j in 0..n {
                m.data.swap(k * n + j, piv * n + j);
            }
            rhs.swap(k, piv);
        }
        let d = m[(k, k)];
        for i in k + 1..n {
            let factor = m[(i, k)] / d;
            if factor == 0.0 {
                continue;
            }
            for j in k..n {
                m[(i, j)] -= factor * m[(k, j)];
            }
            rhs[i] -= factor * rhs[k];
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let mut s = rhs[k];
        for j in k + 1..n {
            s -= m[(k, j)] * x[j];
        }
        x[k] = s / m[(k, k)];
    }
    Some(x)
}

/// Result of a rank-revealing least-squares solve.
#[derive(Clone, Debug)]
pub struct LeastSquares {
    /// One coefficient per input column; dropped columns get 0.
    pub coefficients: Vec<f64>,
    /// `kept[j]` is false when column j was numerically dependent on earlier ones.
    pub kept: Vec<bool>,
    pub residual: Vec<f64>,
}

/// Least squares `min ‖rhs − Σ c_j col_j‖₂` by modified Gram–Schmidt with one
/// reorthogonalization pass. A column whose orthogonal remainder is below
/// `drop_tol` times its own norm is dropped.
pub fn least_squares(cols: &[&[f64]], rhs: &[f64], drop_tol: f64) -> LeastSquares {
    let k = cols.len();
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut r = Mat::zeros(k, k);
    let mut kept = vec![false; k];
    let mut kept_idx = Vec::with_capacity(k);
    for (j, c) in cols.iter().enumerate() {
        let cn = norm2(c);
        if cn == 0.0 {
            continue;
        }
        let mut v = c.to_vec();
        let mut coeff = vec![0.0; q.len()];
        for _pass in 0..2 {
            for (i, qi) in q.iter().enumerate() {
                let h = dot(qi, &v);
                coeff[i] += h;
                axpy(-h, qi, &mut v);
            }
        }
        let vn = norm2(&v);
        if vn <= drop_tol * cn {
            continue;
        }
        let col = q.len();
        for (i, h) in coeff.iter().enumerate() {
            r[(i, col)] = *h;
        }
        r[(col, col)] = vn;
        v.iter_mut().for_each(|x| *x /= vn);
        q.push(v);
        kept[j] = true;
        kept_idx.push(j);
    }
    let rank = q.len();
    let mut residual = rhs.to_vec();
    let mut qtb = vec![0.0; rank];
    for _pass in 0..2 {
        for (i, qi) in q.iter().enumerate() {
            let h = dot(qi, &residual);
            qtb[i] += h;
            axpy(-h, qi, &mut residual);
        }
    }
    let mut z = vec![0.0; rank];
    for i in (0..rank).rev() {
        let mut s = qtb[i];
        for l in i + 1..rank {
            s -= r[(i, l)] * z[l];
        }
        z[i] = s / r[(i, i)];
    }
    let mut coefficients = vec![0.0; k];
    for (pos, &j) in kept_idx.iter().enumerate() {
        coefficients[j] = z[pos];
    }
    LeastSquares { coefficients, kept, residual }
}

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix.
///
/// Returns eigenvalues in ascending order and the matching eigenvectors as
/// the columns of the returned matrix.
pub fn sym_eigen(a: &Mat) -> (Vec<f64>, Mat) {
    let n = a.rows;
    assert_eq!(a.cols, n);
    let mut m = a.clone();
    let mut v = Mat::identity(n);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += m[(i, j)] * m[(i, j)];
            }
        }
        let scale: f64 = (0..n).map(|i| m[(i, i)] * m[(i, i)]).sum::<f64>() + off;
        if off <= 1e-32 * scale || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].total_cmp(&m[(j, j)]));
    let vals = order.iter().map(|&i| m[(i, i)]).collect();
    let mut vecs = Mat::zeros(n, n);
    for (newc, &oldc) in order.iter().enumerate() {
        for k in 0..n {
            vecs[(k, newc)] = v[(k, oldc)];
        }
    }
    (vals, vecs)
}

/// Thin singular value decomposition `A = U diag(s) Vᵀ` by one-sided Jacobi.
#[derive(Clone, Debug)]
pub struct Svd {
    /// rows × k, orthonormal columns.
    pub u: Mat,
    /// Descending, length k = min(rows, cols).
    pub s: Vec<f64>,
    /// cols × k, orthonormal columns.
    pub v: Mat,
}

pub fn svd(a: &Mat) -> Svd {
    if a.rows < a.cols {
        let t = svd(&a.transpose());
        return Svd { u: t.v, s: t.s, v: t.u };
    }
    let (rows, cols) = (a.rows, a.cols);
    // Work on columns: W = A V, rotate column pairs until mutually orthogonal.
    let mut w: Vec<Vec<f64>> = (0..cols).map(|j| a.col(j)).collect();
    let mut v = Mat::identity(cols);
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha = dot(&w[p], &w[p]);
                let beta = dot(&w[q], &w[q]);
                let gamma = dot(&w[p], &w[q]);
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for k in 0..rows {
                    let wp = w[p][k];
                    let wq = w[q][k];
                    w[p][k] = c * wp - s * wq;
                    w[q][k] = s * wp + c * wq;
                }
                for k in 0..cols {
                    let vp = v[(k, p)];
                    let vq = v[(k, q)];
                    v[(k, p)] = c * vp - s * vq;
                    v[(k, q)] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = w.iter().map(|c| norm2(c)).collect();
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));
    let mut u = Mat::zeros(rows, cols);
    let mut vs = Mat::zeros(cols, cols);
    let mut s = Vec::with_capacity(cols);
    for (newc, &oldc) in order.iter().enumerate() {
        let sv = norms[oldc];
        s.push(sv);
        for k in 0..cols {
            vs[(k, newc)] = v[(k, oldc)];
        }
        if sv > 0.0 {
            for k in 0..rows {
                u[(k, newc)] = w[oldc][k] / sv;
            }
        }
    }
    complete_orthonormal_columns(&mut u, &s);
    Svd { u, s, v: vs }
}

/// Fills the zero columns of `u` (those with zero singular value) with unit
/// vectors orthogonal to the rest, so `u` always has orthonormal columns.
fn complete_orthonormal_columns(u: &mut Mat, s: &[f64]) {
    let rows = u.rows;
    for j in 0..u.cols {
        if s[j] > 0.0 {
            continue;
        }
        for e in 0..rows {
            let mut cand = vec![0.0; rows];
            cand[e] = 1.0;
            for _pass in 0..2 {
                for l in 0..u.cols {
                    if l == j || (s[l] == 0.0 && l > j) {
                        continue;
                    }
                    let col = u.col(l);
                    let h = dot(&col, &cand);
                    axpy(-h, &col, &mut cand);
                }
            }
            let nrm = norm2(&cand);
            if nrm > 1e-6 {
                for k in 0..rows {
                    u[(k, j)] = cand[k] / nrm;
                }
                break;
            }
        }
    }
}

/// Cholesky factor `L` with `A = L Lᵀ`; `None` if `A` is not numerically
/// positive definite.
pub fn cholesky(a: &Mat) -> Option<Mat> {
    let n = a.rows;
    let mut l = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[(i, i)] = s.sqrt();
            } else {
                l[(i, j)] = s / l[(j, j)];
            }
        }
    }
    Some(l)
}

/// Solves `L x = b` for lower-triangular `L`.
pub fn forward_substitute(l: &Mat, b: &[f64]) -> Vec<f64> {
    let n = l.rows;
    let mut x = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[(i, k)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn pivoting_solves_permuted_system() {
        let a = Mat::from_rows(3, 3, vec![0.0, 2.0, 1.0, 1.0, 1.0, 0.0, 3.0, 0.0, 1.0]);
        let x_true = [1.0, -2.0, 0.5];
        let b = a.matvec(&x_true);
        let x = solve_partial_pivot(&a, &b, 1e-12).unwrap();
        for (u, v) in x.iter().zip(x_true) {
            assert_abs_diff_eq!(*u, v, epsilon = 1e-14);
        }
    }

    #[test]
    fn singular_pivot_is_reported() {
        let a = Mat::from_rows(2, 2, vec![1.0, 2.0, 2.0, 4.0]);
        assert!(solve_partial_pivot(&a, &[1.0, 1.0], 1e-12).is_none());
    }

    #[test]
    fn least_squares_drops_dependent_column() {
        let c0 = [1.0, 0.0, 0.0];
        let c1 = [2.0, 0.0, 0.0];
        let c2 = [0.0, 1.0, 0.0];
        let ls = least_squares(&[&c0, &c1, &c2], &[3.0, 4.0, 5.0], 1e-10);
        assert_eq!(ls.kept, vec![true, false, true]);
        assert_abs_diff_eq!(ls.coefficients[0], 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(ls.coefficients[2], 4.0, epsilon = 1e-14);
        assert_abs_diff_eq!(norm2(&ls.residual), 5.0, epsilon = 1e-14);
    }

    #[test]
    fn jacobi_eigen_two_by_two() {
        let a = Mat::from_rows(2, 2, vec![1.0, 0.3, 0.3, 1.0]);
        let (vals, vecs) = sym_eigen(&a);
        assert_abs_diff_eq!(vals[0], 0.7, epsilon = 1e-14);
        assert_abs_diff_eq!(vals[1], 1.3, epsilon = 1e-14);
        let v1 = vecs.col(1);
        assert_abs_diff_eq!(v1[0].abs(), v1[1].abs(), epsilon = 1e-14);
    }

    #[test]
    fn svd_reconstructs_and_orders() {
        let a = Mat::from_rows(3, 2, vec![3.0, 0.0, 0.0, -2.0, 0.0, 0.0]);
        let d = svd(&a);
        assert_abs_diff_eq!(d.s[0], 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(d.s[1], 2.0, epsilon = 1e-14);
        let wide = svd(&a.transpose());
        assert_abs_diff_eq!(wide.s[0], 3.0, epsilon = 1e-14);
        for i in 0..3 {
            for j in 0..2 {
                let r: f64 = (0..2).map(|k| d.u[(i, k)] * d.s[k] * d.v[(j, k)]).sum();
                assert_abs_diff_eq!(r, a[(i, j)], epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn cholesky_roundtrip() {
        let a = Mat::from_rows(2, 2, vec![4.0, 2.0, 2.0, 3.0]);
        let l = cholesky(&a).unwrap();
        let back = l.matmul(&l.transpose());
        for (x, y) in back.data.iter().zip(&a.data) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-14);
        }
        assert!(cholesky(&Mat::from_rows(1, 1, vec![-1.0])).is_none());
    }
}

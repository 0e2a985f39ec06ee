//! Rank-one greedy approximation of matrices in the Frobenius norm.
//!
//! A matrix is read as a function f(x, y) on a product grid. The greedy step
//! removes the best rank-one piece c·u vᵀ of the current residual, which is
//! its top singular triple.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dictionary::{parse_field, parse_header};
use crate::error::{GreedyError, Result};
use crate::linalg::{self, Mat};
use crate::rng;

/// Power iteration stops once successive iterates differ by at most this.
pub const POWER_TOL: f64 = 1e-12;
const POWER_MAX_ITER: usize = 50_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankOneTerm {
    /// Unit vector of length rows.
    pub u: Vec<f64>,
    /// Unit vector of length cols.
    pub v: Vec<f64>,
    pub c: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BilinearTrace {
    /// Frobenius norm of the residual after m terms, m = 0, 1, ….
    pub residual_norms: Vec<f64>,
    /// Power iterations spent on each term.
    pub iterations: Vec<usize>,
}

/// Top right singular vector of `r` from the start `v0`; returns (v, ‖r v‖, iterations, converged).
fn power_iteration(r: &Mat, gram: &Mat, v0: Vec<f64>) -> (Vec<f64>, f64, usize, bool) {
    let mut v = v0;
    let nv = linalg::norm2(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    for it in 1..=POWER_MAX_ITER {
        let mut w = gram.matvec(&v);
        let nw = linalg::norm2(&w);
        if nw == 0.0 {
            return (v, 0.0, it, true);
        }
        w.iter_mut().for_each(|x| *x /= nw);
        let change = w.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = w;
        if change <= POWER_TOL {
            let c = linalg::norm2(&r.matvec(&v));
            return (v, c, it, true);
        }
    }
    let c = linalg::norm2(&r.matvec(&v));
    (v, c, POWER_MAX_ITER, false)
}

/// Best rank-one piece of `r`. The deterministic start is the largest column
/// of `r`, normalized; a seeded random start guards against starts that sit
/// in an invariant subspace missing the top singular value, and more random
/// restarts follow if neither run converges.
fn top_triple(r: &Mat, seed: u64, step: usize) -> (RankOneTerm, usize) {
    let (rows, cols) = (r.rows, r.cols);
    let lead = (0..cols)
        .map(|j| (j, linalg::norm2(&r.col(j))))
        .fold((0, -1.0), |a, b| if b.1 > a.1 { b } else { a });
    if lead.1 <= 0.0 {
        let mut u = vec![0.0; rows];
        let mut v = vec![0.0; cols];
        u[0] = 1.0;
        v[0] = 1.0;
        return (RankOneTerm { u, v, c: 0.0 }, 0);
    }
    let u0: Vec<f64> = r.col(lead.0).iter().map(|x| x / lead.1).collect();
    let gram = r.transpose().matmul(r);
    let mut rand = rng::stream(seed, "bilinear", step as u64);
    let mut best = power_iteration(r, &gram, r.tmatvec(&u0));
    let mut total = best.2;
    for _ in 0..4 {
        let start: Vec<f64> = (0..cols).map(|_| rand.gen_range(-1.0..1.0)).collect();
        let run = power_iteration(r, &gram, start);
        total += run.2;
        if run.1 > best.1 * (1.0 + 1e-14) || (!best.3 && run.3) {
            best = run;
        }
        if best.3 {
            break;
        }
    }
    let (v, c, _, _) = best;
    if c == 0.0 {
        let mut u = vec![0.0; rows];
        u[0] = 1.0;
        return (RankOneTerm { u, v, c: 0.0 }, total);
    }
    let u: Vec<f64> = r.matvec(&v).iter().map(|x| x / c).collect();
    (RankOneTerm { u, v, c }, total)
}

/// m greedy steps of rank-one deflation.
pub fn pga_rank_one(matrix: &Mat, m: usize) -> Result<(Vec<RankOneTerm>, BilinearTrace)> {
    pga_rank_one_seeded(matrix, m, 0)
}

pub fn pga_rank_one_seeded(matrix: &Mat, m: usize, seed: u64) -> Result<(Vec<RankOneTerm>, BilinearTrace)> {
    if m == 0 {
        return Err(GreedyError::invalid("m", "must be at least 1"));
    }
    check_finite(matrix)?;
    let mut r = matrix.clone();
    let mut terms = Vec::with_capacity(m);
    let mut trace = BilinearTrace { residual_norms: vec![r.frobenius()], iterations: Vec::with_capacity(m) };
    for step in 0..m {
        let (term, its) = top_triple(&r, seed, step);
        if term.c > 0.0 {
            for i in 0..r.rows {
                let a = term.c * term.u[i];
                for j in 0..r.cols {
                    r[(i, j)] -= a * term.v[j];
                }
            }
        }
        trace.residual_norms.push(r.frobenius());
        trace.iterations.push(its);
        terms.push(term);
    }
    Ok((terms, trace))
}

/// All nonzero singular triples, largest first.
pub fn schmidt_expansion(matrix: &Mat) -> Result<Vec<RankOneTerm>> {
    check_finite(matrix)?;
    let svd = linalg::svd(matrix);
    let top = svd.s.first().copied().unwrap_or(0.0);
    Ok(svd
        .s
        .iter()
        .enumerate()
        .take_while(|(_, &s)| s > 1e-13 * top && s > 0.0)
        .map(|(k, &s)| RankOneTerm { u: svd.u.col(k), v: svd.v.col(k), c: s })
        .collect())
}

/// Σ c_j u_j v_jᵀ.
pub fn reconstruct(terms: &[RankOneTerm], rows: usize, cols: usize) -> Mat {
    let mut out = Mat::zeros(rows, cols);
    for t in terms {
        for i in 0..rows {
            for j in 0..cols {
                out[(i, j)] += t.c * t.u[i] * t.v[j];
            }
        }
    }
    out
}

fn check_finite(matrix: &Mat) -> Result<()> {
    if matrix.data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(GreedyError::invalid("matrix", "entries must be finite"))
    }
}

/// GREEDYMAT v1 text, one matrix row per line.
pub fn matrix_to_text(matrix: &Mat) -> String {
    let mut s = format!("GREEDYMAT v1 rows={} cols={}\n", matrix.rows, matrix.cols);
    for i in 0..matrix.rows {
        let row: Vec<String> = matrix.row(i).iter().map(|v| format!("{v:.16e}")).collect();
        let _ = writeln!(s, "{}", row.join(" "));
    }
    s
}

/// Parses GREEDYMAT v1. Values are read row-major; line breaks are not significant.
pub fn matrix_from_text(text: &str) -> Result<Mat> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(GreedyError::Parse { line: 1, message: "empty input".into() })?;
    let fields = parse_header(header, "GREEDYMAT", &["rows", "cols"], 1)?;
    let rows: usize = parse_field(&fields[0], 1)?;
    let cols: usize = parse_field(&fields[1], 1)?;
    if rows == 0 || cols == 0 {
        return Err(GreedyError::Parse { line: 1, message: "matrix dimensions must be positive".into() });
    }
    let mut data = Vec::with_capacity(rows * cols);
    for (lineno, line) in lines {
        for tok in line.split_whitespace() {
            let v: f64 = parse_field(tok, lineno + 1)?;
            if !v.is_finite() {
                return Err(GreedyError::Parse { line: lineno + 1, message: format!("non-finite entry `{tok}`") });
            }
            data.push(v);
        }
    }
    if data.len() != rows * cols {
        return Err(GreedyError::Parse { line: 1, message: format!("expected {} values, found {}", rows * cols, data.len()) });
    }
    Ok(Mat::from_rows(rows, cols, data))
}

pub fn load_matrix(path: &Path) -> Result<Mat> {
    matrix_from_text(&std::fs::read_to_string(path)?)
}

pub fn save_matrix(matrix: &Mat, path: &Path) -> Result<()> {
    std::fs::write(path, matrix_to_text(matrix))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::svd_tail;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};

    fn diag321() -> Mat {
        Mat::from_rows(3, 3, vec![3.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 1.0])
    }

    fn random(rows: usize, cols: usize, seed: u64) -> Mat {
        let mut r = rng::from_seed(seed);
        Mat::from_rows(rows, cols, (0..rows * cols).map(|_| r.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn diagonal_matrix() {
        let (terms, trace) = pga_rank_one(&diag321(), 2).unwrap();
        assert_abs_diff_eq!(terms[0].c, 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(terms[1].c, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(trace.residual_norms[2], 1.0, epsilon = 1e-12);
        let (_, trace) = pga_rank_one(&diag321(), 3).unwrap();
        assert!(trace.residual_norms[3] <= 1e-9);
    }

    #[test]
    fn zero_residual_appends_zero_terms() {
        let m = Mat::from_rows(2, 2, vec![1.0, 0.0, 0.0, 0.0]);
        let (terms, trace) = pga_rank_one(&m, 3).unwrap();
        assert_eq!(terms[1].c, 0.0);
        assert_eq!(terms[2].c, 0.0);
        assert_eq!(trace.residual_norms, vec![1.0, 0.0, 0.0, 0.0]);
        assert!(pga_rank_one(&m, 0).is_err());
    }

    #[test]
    fn start_in_a_bad_invariant_subspace() {
        // The largest column spans a block whose singular value is not the top one.
        let m = Mat::from_rows(3, 3, vec![1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.9]);
        let (terms, _) = pga_rank_one(&m, 1).unwrap();
        assert_abs_diff_eq!(terms[0].c, 2.0, epsilon = 1e-10);
    }

    #[test]
    fn residuals_match_singular_value_tails() {
        let m = random(8, 6, 5);
        let (_, trace) = pga_rank_one(&m, 6).unwrap();
        for (k, r) in trace.residual_norms.iter().enumerate() {
            assert_abs_diff_eq!(*r, svd_tail(&m, k), epsilon = 1e-8);
        }
    }

    #[test]
    fn greedy_beats_random_rank_one_probes() {
        let m = random(6, 5, 8);
        let (_, trace) = pga_rank_one(&m, 3).unwrap();
        let mut r = rng::from_seed(9);
        for k in 1..=3 {
            for _ in 0..50 {
                // Least-squares fit of m by k random rank-one matrices.
                let probes: Vec<Vec<f64>> = (0..k)
                    .map(|_| {
                        let u: Vec<f64> = (0..6).map(|_| r.gen_range(-1.0..1.0)).collect();
                        let v: Vec<f64> = (0..5).map(|_| r.gen_range(-1.0..1.0)).collect();
                        u.iter().flat_map(|a| v.iter().map(move |b| a * b)).collect()
                    })
                    .collect();
                let cols: Vec<&[f64]> = probes.iter().map(|p| p.as_slice()).collect();
                let ls = linalg::least_squares(&cols, &m.data, 1e-12);
                assert!(trace.residual_norms[k] <= linalg::norm2(&ls.residual) + 1e-12);
            }
        }
    }

    #[test]
    fn schmidt_rank_one() {
        let u = [0.6, 0.8];
        let v = [1.0, 0.0, 0.0];
        let m = Mat::from_rows(2, 3, u.iter().flat_map(|a| v.iter().map(move |b| 5.0 * a * b)).collect());
        let terms = schmidt_expansion(&m).unwrap();
        assert_eq!(terms.len(), 1);
        assert_abs_diff_eq!(terms[0].c, 5.0, epsilon = 1e-12);
        let sign = terms[0].u[0].signum();
        assert_abs_diff_eq!(sign * terms[0].u[1], 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(sign * terms[0].v[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn schmidt_orthonormal_and_complete() {
        let m = random(7, 4, 3);
        let terms = schmidt_expansion(&m).unwrap();
        assert_eq!(terms.len(), 4);
        for a in 0..4 {
            for b in 0..4 {
                let want = if a == b { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(linalg::dot(&terms[a].u, &terms[b].u), want, epsilon = 1e-8);
                assert_abs_diff_eq!(linalg::dot(&terms[a].v, &terms[b].v), want, epsilon = 1e-8);
            }
        }
        let rec = reconstruct(&terms, 7, 4);
        let err: f64 = rec.data.iter().zip(&m.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        assert!(err <= 1e-9);
    }

    #[test]
    fn schmidt_terms_agree_with_greedy_up_to_sign() {
        let m = random(5, 4, 21);
        let svd_terms = schmidt_expansion(&m).unwrap();
        let (greedy, _) = pga_rank_one(&m, 4).unwrap();
        for (a, b) in svd_terms.iter().zip(&greedy) {
            assert_abs_diff_eq!(a.c, b.c, epsilon = 1e-9);
            let s = linalg::dot(&a.u, &b.u).signum();
            for (x, y) in a.u.iter().zip(&b.u) {
                assert_abs_diff_eq!(*x, s * y, epsilon = 1e-6);
            }
            for (x, y) in a.v.iter().zip(&b.v) {
                assert_abs_diff_eq!(*x, s * y, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn matrix_text_format() {
        let m = Mat::from_rows(2, 3, vec![1.0, -0.5, 0.1, 1e-300, 3.0, 0.3]);
        assert_eq!(matrix_from_text(&matrix_to_text(&m)).unwrap(), m);
        assert!(matrix_from_text("GREEDYMAT v1 rows=2 cols=2\n1 2 3\n").is_err());
        assert!(matrix_from_text("GREEDYDICT v1 rows=1 cols=1\n1\n").is_err());
        assert!(matrix_from_text("GREEDYMAT v1 rows=1 cols=1\nnan\n").is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn pythagoras_at_every_step(rows in 1usize..7, cols in 1usize..7, seed in 0u64..1000) {
            let m = random(rows, cols, seed);
            let (terms, trace) = pga_rank_one(&m, rows.min(cols) + 1).unwrap();
            let total = m.frobenius().powi(2);
            let mut captured = 0.0;
            for (k, t) in terms.iter().enumerate() {
                prop_assert!((linalg::norm2(&t.u) - 1.0).abs() <= 1e-12);
                prop_assert!((linalg::norm2(&t.v) - 1.0).abs() <= 1e-12);
                prop_assert!(t.c >= 0.0);
                captured += t.c * t.c;
                let r = trace.residual_norms[k + 1];
                prop_assert!((captured + r * r - total).abs() <= 1e-9 * total.max(1e-300));
            }
        }
    }
}

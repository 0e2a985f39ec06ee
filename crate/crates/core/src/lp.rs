//! Dense two-phase simplex for small linear programs.
//!
//! Solves  min cᵀx  subject to  A_ub x ≤ b_ub,  A_eq x = b_eq,  x ≥ 0.
//! Bland's rule is used throughout, so the method terminates on degenerate
//! problems at the price of more pivots.

use crate::error::{GreedyError, Result};

const PIVOT_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, value: f64 },
    Infeasible,
    Unbounded,
}

#[derive(Clone, Debug, Default)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub a_ub: Vec<Vec<f64>>,
    pub b_ub: Vec<f64>,
    pub a_eq: Vec<Vec<f64>>,
    pub b_eq: Vec<f64>,
}

struct Tableau {
    /// rows × (cols + 1); the last column is the right-hand side.
    t: Vec<Vec<f64>>,
    basis: Vec<usize>,
    cols: usize,
}

impl Tableau {
    fn pivot(&mut self, r: usize, c: usize) {
        let w = self.cols + 1;
        let pv = self.t[r][c];
        for k in 0..w {
            self.t[r][k] /= pv;
        }
        let prow = self.t[r].clone();
        for (i, row) in self.t.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for k in 0..w {
                    row[k] -= f * prow[k];
                }
                row[c] = 0.0;
            }
        }
        self.basis[r] = c;
    }

    /// Minimizes `cost` over the columns in `allowed`; false if unbounded.
    fn optimize(&mut self, cost: &[f64], allowed: &[bool]) -> Result<bool> {
        let m = self.t.len();
        let limit = 50_000;
        for _ in 0..limit {
            // Reduced costs d_j = c_j − c_Bᵀ column_j.
            let mut enter = None;
            for j in 0..self.cols {
                if !allowed[j] || self.basis.contains(&j) {
                    continue;
                }
                let mut d = cost[j];
                for i in 0..m {
                    d -= cost[self.basis[i]] * self.t[i][j];
                }
                if d < -1e-11 {
                    enter = Some(j);
                    break;
                }
            }
            let Some(j) = enter else { return Ok(true) };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..m {
                let a = self.t[i][j];
                if a > PIVOT_TOL {
                    let ratio = self.t[i][self.cols] / a;
                    let better = match leave {
                        None => true,
                        Some((li, lr)) => ratio < lr - 1e-15 || (ratio <= lr + 1e-15 && self.basis[i] < self.basis[li]),
                    };
                    if better {
                        leave = Some((i, ratio));
                    }
                }
            }
            let Some((r, _)) = leave else { return Ok(false) };
            self.pivot(r, j);
        }
        Err(GreedyError::NonConvergence { iterations: limit, kkt: f64::NAN })
    }
}

impl LinearProgram {
    pub fn solve(&self) -> Result<LpOutcome> {
        let n = self.objective.len();
        let (mu, me) = (self.a_ub.len(), self.a_eq.len());
        if self.b_ub.len() != mu || self.b_eq.len() != me || self.a_ub.iter().chain(&self.a_eq).any(|r| r.len() != n) {
            return Err(GreedyError::DimensionMismatch { expected: n, found: 0 });
        }
        let m = mu + me;
        // Columns: x (n), slacks (mu), artificials (m).
        let cols = n + mu + m;
        let mut t = vec![vec![0.0; cols + 1]; m];
        for i in 0..m {
            let (row, b, slack) = if i < mu { (&self.a_ub[i], self.b_ub[i], Some(n + i)) } else { (&self.a_eq[i - mu], self.b_eq[i - mu], None) };
            let sgn = if b < 0.0 { -1.0 } else { 1.0 };
            for j in 0..n {
                t[i][j] = sgn * row[j];
            }
            if let Some(s) = slack {
                t[i][s] = sgn;
            }
            t[i][n + mu + i] = 1.0;
            t[i][cols] = sgn * b;
        }
        let mut tab = Tableau { t, basis: (0..m).map(|i| n + mu + i).collect(), cols };
        let mut phase1 = vec![0.0; cols];
        for v in phase1.iter_mut().skip(n + mu) {
            *v = 1.0;
        }
        tab.optimize(&phase1, &vec![true; cols])?;
        let infeas: f64 = (0..m).filter(|&i| tab.basis[i] >= n + mu).map(|i| tab.t[i][cols]).sum();
        let scale = 1.0 + self.b_ub.iter().chain(&self.b_eq).fold(0.0f64, |a, b| a.max(b.abs()));
        if infeas > 1e-9 * scale {
            return Ok(LpOutcome::Infeasible);
        }
        // Drive remaining artificials out of the basis where possible.
        for i in 0..m {
            if tab.basis[i] >= n + mu {
                if let Some(j) = (0..n + mu).find(|&j| tab.t[i][j].abs() > 1e-9) {
                    tab.pivot(i, j);
                }
            }
        }
        let mut cost = vec![0.0; cols];
        cost[..n].copy_from_slice(&self.objective);
        let mut allowed = vec![true; cols];
        for a in allowed.iter_mut().skip(n + mu) {
            *a = false;
        }
        if !tab.optimize(&cost, &allowed)? {
            return Ok(LpOutcome::Unbounded);
        }
        let mut x = vec![0.0; n];
        for (i, &b) in tab.basis.iter().enumerate() {
            if b < n {
                x[b] = tab.t[i][cols];
            }
        }
        let value = x.iter().zip(&self.objective).map(|(a, b)| a * b).sum();
        Ok(LpOutcome::Optimal { x, value })
    }
}

/// min over c of max_j |b_j − Σ_i c_i a_ji|, the ℓ∞ (Chebyshev) fit of `b`
/// by the columns of `a` (`a[j][i]` is row j, column i).
pub fn linf_fit(a: &[Vec<f64>], b: &[f64]) -> Result<(Vec<f64>, f64)> {
    let rows = b.len();
    let k = a.first().map_or(0, |r| r.len());
    if k == 0 {
        return Ok((vec![], b.iter().fold(0.0f64, |m, v| m.max(v.abs()))));
    }
    // Variables: c⁺ (k), c⁻ (k), t.
    let n = 2 * k + 1;
    let mut objective = vec![0.0; n];
    objective[2 * k] = 1.0;
    let mut a_ub = Vec::with_capacity(2 * rows);
    let mut b_ub = Vec::with_capacity(2 * rows);
    for j in 0..rows {
        // b_j − a_j·c ≤ t   and   a_j·c − b_j ≤ t
        let mut r1 = vec![0.0; n];
        let mut r2 = vec![0.0; n];
        for i in 0..k {
            r1[i] = -a[j][i];
            r1[k + i] = a[j][i];
            r2[i] = a[j][i];
            r2[k + i] = -a[j][i];
        }
        r1[2 * k] = -1.0;
        r2[2 * k] = -1.0;
        a_ub.push(r1);
        b_ub.push(-b[j]);
        a_ub.push(r2);
        b_ub.push(b[j]);
    }
    let lp = LinearProgram { objective, a_ub, b_ub, a_eq: vec![], b_eq: vec![] };
    match lp.solve()? {
        LpOutcome::Optimal { x, .. } => {
            let c: Vec<f64> = (0..k).map(|i| x[i] - x[k + i]).collect();
            // Report the achieved maximum rather than the LP value.
            let value = (0..rows)
                .map(|j| (b[j] - (0..k).map(|i| a[j][i] * c[i]).sum::<f64>()).abs())
                .fold(0.0f64, f64::max);
            Ok((c, value))
        }
        other => Err(GreedyError::Hypothesis(format!("Chebyshev fit LP ended as {other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    #[test]
    fn textbook_problem() {
        // max 3x + 5y, x ≤ 4, 2y ≤ 12, 3x + 2y ≤ 18  →  36 at (2, 6).
        let lp = LinearProgram {
            objective: vec![-3.0, -5.0],
            a_ub: vec![vec![1.0, 0.0], vec![0.0, 2.0], vec![3.0, 2.0]],
            b_ub: vec![4.0, 12.0, 18.0],
            ..Default::default()
        };
        let LpOutcome::Optimal { x, value } = lp.solve().unwrap() else { panic!() };
        assert_abs_diff_eq!(value, -36.0, epsilon = 1e-12);
        assert_abs_diff_eq!(x[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(x[1], 6.0, epsilon = 1e-12);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let lp = LinearProgram { objective: vec![1.0], a_ub: vec![vec![1.0], vec![-1.0]], b_ub: vec![1.0, -2.0], ..Default::default() };
        assert_eq!(lp.solve().unwrap(), LpOutcome::Infeasible);
        let lp = LinearProgram { objective: vec![-1.0], a_ub: vec![vec![-1.0]], b_ub: vec![1.0], ..Default::default() };
        assert_eq!(lp.solve().unwrap(), LpOutcome::Unbounded);
    }

    #[test]
    fn equality_constraints() {
        // min x + y with x + y = 3, x − y = 1.
        let lp = LinearProgram { objective: vec![1.0, 1.0], a_eq: vec![vec![1.0, 1.0], vec![1.0, -1.0]], b_eq: vec![3.0, 1.0], ..Default::default() };
        let LpOutcome::Optimal { x, .. } = lp.solve().unwrap() else { panic!() };
        assert_abs_diff_eq!(x[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(x[1], 1.0, epsilon = 1e-12);
    }

    /// One-column fits are minimized at a crossing of two lines ±(b_j − c a_j).
    fn linf_one_column_brute(a: &[f64], b: &[f64]) -> f64 {
        let eval = |c: f64| a.iter().zip(b).map(|(x, y)| (y - c * x).abs()).fold(0.0f64, f64::max);
        let mut best = eval(0.0);
        for j in 0..a.len() {
            for k in 0..a.len() {
                for s in [1.0, -1.0] {
                    let den = a[j] - s * a[k];
                    if den.abs() > 1e-14 {
                        best = best.min(eval((b[j] - s * b[k]) / den));
                    }
                }
            }
        }
        best
    }

    #[test]
    fn linf_fit_matches_breakpoint_enumeration() {
        let mut r = crate::rng::from_seed(11);
        for _ in 0..200 {
            let rows = r.gen_range(2..12);
            let a: Vec<f64> = (0..rows).map(|_| r.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..rows).map(|_| r.gen_range(-1.0..1.0)).collect();
            let cols: Vec<Vec<f64>> = a.iter().map(|v| vec![*v]).collect();
            let (_, v) = linf_fit(&cols, &b).unwrap();
            assert_abs_diff_eq!(v, linf_one_column_brute(&a, &b), epsilon = 1e-10);
        }
    }

    #[test]
    fn linf_fit_interpolates_when_square() {
        let a = vec![vec![1.0, 0.0], vec![0.0, 2.0]];
        let (c, v) = linf_fit(&a, &[3.0, -4.0]).unwrap();
        assert!(v <= 1e-12);
        assert_abs_diff_eq!(c[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c[1], -2.0, epsilon = 1e-12);
    }
}

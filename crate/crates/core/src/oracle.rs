//! Certified reference values: exhaustive best m-term errors, SVD tails,
//! and simulators for the numerical-sequence lemmas.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algorithms::Trace;
use crate::dictionary::{binom, for_each_combination, guard, Dictionary};
use crate::error::{GreedyError, Result};
use crate::linalg::{self, Mat};
use crate::lp;
use crate::rng;
use crate::space::SpaceLp;
use crate::steps::{self, SolverOptions};

/// Projection certificates above this KKT level make a result inexact.
pub const KKT_CERTIFICATE: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    /// Number of subsets searched exhaustively.
    pub subsets: u128,
    pub method: String,
    /// Largest KKT violation among the subset solves (0 for exact solvers).
    pub max_kkt: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub value: f64,
    pub certificate: Certificate,
    pub exact: bool,
    /// A minimizing subset and its coefficients.
    pub support: Vec<usize>,
    pub coefficients: Vec<f64>,
}

fn subsets(n: usize, m: usize) -> Result<Vec<Vec<usize>>> {
    guard(binom(n, m))?;
    let mut all = Vec::new();
    for_each_combination(n, m, |s| all.push(s.to_vec()));
    Ok(all)
}

/// Picks the smallest value; ties go to the earliest subset.
fn reduce_min(results: Vec<(f64, f64, Vec<f64>)>, sets: Vec<Vec<usize>>) -> (usize, f64, f64, Vec<f64>, Vec<usize>) {
    let mut best = 0;
    let mut max_kkt: f64 = 0.0;
    for (i, r) in results.iter().enumerate() {
        max_kkt = max_kkt.max(r.1);
        if r.0 < results[best].0 {
            best = i;
        }
    }
    let (v, _, c) = results[best].clone();
    (best, v, max_kkt, c, sets[best].clone())
}

/// σ_m(f, D) = min over m-subsets of the Chebyshev projection residual.
pub fn best_m_term(space: &SpaceLp, dict: &Dictionary, f: &[f64], m: usize) -> Result<OracleResult> {
    best_m_term_with(space, dict, f, m, &SolverOptions::default())
}

pub fn best_m_term_with(space: &SpaceLp, dict: &Dictionary, f: &[f64], m: usize, opts: &SolverOptions) -> Result<OracleResult> {
    space.check_dim(f)?;
    let m = m.min(dict.len());
    let sets = subsets(dict.len(), m)?;
    let count = sets.len() as u128;
    let results: Vec<Result<(f64, f64, Vec<f64>)>> = sets
        .par_iter()
        .map(|s| {
            let span: Vec<&[f64]> = s.iter().map(|&i| dict.element(i)).collect();
            let pr = steps::chebyshev_project(space, f, &span, opts)?;
            let kkt = if space.is_hilbert() { 0.0 } else { pr.kkt_violation };
            Ok((pr.residual_norm, kkt, pr.coefficients))
        })
        .collect();
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    let (_, value, max_kkt, coefficients, support) = reduce_min(results, sets);
    let method = if space.is_hilbert() { "least squares per subset" } else { "Newton projection per subset with KKT certificate" };
    Ok(OracleResult {
        value,
        certificate: Certificate { subsets: count, method: method.into(), max_kkt },
        exact: max_kkt <= KKT_CERTIFICATE,
        support,
        coefficients,
    })
}

/// σ_0, …, σ_{m_max}.
pub fn sigma_profile(space: &SpaceLp, dict: &Dictionary, f: &[f64], m_max: usize) -> Result<Vec<OracleResult>> {
    (0..=m_max).map(|m| best_m_term(space, dict, f, m)).collect()
}

/// σ_m(f)_D in the seminorm ‖h‖_D = max_j |F_{g_j}(h)|.
///
/// Each subset is an ℓ∞ fit solved by the simplex method.
pub fn best_m_term_seminorm(dict: &Dictionary, f: &[f64], m: usize) -> Result<OracleResult> {
    dict.space().check_dim(f)?;
    let n = dict.len();
    let m = m.min(n);
    let b: Vec<f64> = (0..n).map(|j| dict.functional(j).eval(f)).collect();
    let gram: Vec<Vec<f64>> = (0..n).map(|j| (0..n).map(|i| dict.functional(j).eval(dict.element(i))).collect()).collect();
    let sets = subsets(n, m)?;
    let count = sets.len() as u128;
    let results: Vec<Result<(f64, f64, Vec<f64>)>> = sets
        .par_iter()
        .map(|s| {
            let a: Vec<Vec<f64>> = (0..n).map(|j| s.iter().map(|&i| gram[j][i]).collect()).collect();
            let (c, v) = lp::linf_fit(&a, &b)?;
            Ok((v, 0.0, c))
        })
        .collect();
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    let (_, value, _, coefficients, support) = reduce_min(results, sets);
    Ok(OracleResult {
        value,
        certificate: Certificate { subsets: count, method: "simplex l-infinity fit per subset".into(), max_kkt: 0.0 },
        exact: true,
        support,
        coefficients,
    })
}

/// (Σ_{j>m} s_j²)^{1/2}.
pub fn svd_tail(matrix: &Mat, m: usize) -> f64 {
    let s = linalg::svd(matrix).s;
    s.iter().skip(m).map(|v| v * v).sum::<f64>().sqrt()
}

/// How a bound is judged.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundMode {
    /// Hard check: ratio ≤ 1 + tol.
    Explicit { tol: f64 },
    /// Existential constant: flag repeated growth of the dyadic-window maxima.
    Existential,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub max_ratio: f64,
    pub argmax: usize,
    pub first_violation: Option<usize>,
    pub growth_flag: bool,
    /// ratios[k] belongs to m = k + 1.
    pub ratios: Vec<f64>,
}

impl BoundReport {
    pub fn passed(&self) -> bool {
        self.first_violation.is_none() && !self.growth_flag
    }
}

/// Checks values[m] ≤ bound(m) for m = 1..values.len()−1.
pub fn check_sequence_bound(values: &[f64], bound: impl Fn(usize) -> f64, mode: BoundMode) -> Result<BoundReport> {
    let mut ratios = Vec::with_capacity(values.len().saturating_sub(1));
    let (mut max_ratio, mut argmax, mut first_violation) = (0.0f64, 0usize, None);
    for (m, v) in values.iter().enumerate().skip(1) {
        let b = bound(m);
        if !(b.is_finite() && b > 0.0) {
            return Err(GreedyError::invalid("bound", format!("bound({m}) = {b} is not positive")));
        }
        let r = v / b;
        if r > max_ratio {
            max_ratio = r;
            argmax = m;
        }
        if let BoundMode::Explicit { tol } = mode {
            if first_violation.is_none() && r > 1.0 + tol {
                first_violation = Some(m);
            }
        }
        ratios.push(r);
    }
    let growth_flag = matches!(mode, BoundMode::Existential) && repeated_growth(&ratios, 1.05);
    Ok(BoundReport { max_ratio, argmax, first_violation, growth_flag, ratios })
}

/// Window maxima over (2^{k−1}, 2^k] that grow by more than `factor` in two
/// consecutive windows.
fn repeated_growth(ratios: &[f64], factor: f64) -> bool {
    let maxima = dyadic_maxima(ratios, 1);
    let mut run = 0;
    for w in maxima.windows(2) {
        if w[1] > factor * w[0] {
            run += 1;
            if run >= 2 {
                return true;
            }
        } else {
            run = 0;
        }
    }
    false
}

/// Maxima of `values` (indexed from m = 1) over dyadic windows (2^{k−1}, 2^k]
/// with 2^k ≥ `from`.
pub fn dyadic_maxima(values: &[f64], from: usize) -> Vec<f64> {
    let mut out = Vec::new();
    let mut hi = 1usize;
    while hi <= values.len() {
        let lo = hi / 2 + 1;
        if hi >= from {
            out.push(values[lo - 1..hi].iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        }
        hi *= 2;
    }
    out
}

/// max over m of ‖f_m‖ / bound(m).
pub fn check_theorem_bound(trace: &Trace, bound: impl Fn(usize) -> f64, mode: BoundMode) -> Result<BoundReport> {
    check_sequence_bound(&trace.residual_norms(), bound, mode)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LemmaId {
    LeL1,
    HL1,
    LeL2,
    LeL3,
    LeL4,
    LeL5,
    LeL6,
    LeL8,
    LeL9,
    LeL10,
    LeL11,
    LeL12,
}

pub const ALL_LEMMAS: [LemmaId; 12] = [
    LemmaId::LeL1,
    LemmaId::HL1,
    LemmaId::LeL2,
    LemmaId::LeL3,
    LemmaId::LeL4,
    LemmaId::LeL5,
    LemmaId::LeL6,
    LemmaId::LeL8,
    LemmaId::LeL9,
    LemmaId::LeL10,
    LemmaId::LeL11,
    LemmaId::LeL12,
];

impl fmt::Display for LemmaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for LemmaId {
    type Err = GreedyError;
    fn from_str(s: &str) -> Result<Self> {
        ALL_LEMMAS
            .iter()
            .find(|l| l.to_string().eq_ignore_ascii_case(s))
            .copied()
            .ok_or_else(|| GreedyError::invalid("lemma", format!("unknown lemma `{s}`")))
    }
}

/// Parameters of a recursive inequality. Each lemma reads only its own fields:
///
/// | lemma | fields |
/// |---|---|
/// | LeL1 | c1, c2 |
/// | HL1 | c1; y_k = c·k^(−s) |
/// | LeL2 | a |
/// | LeL3 | a, alpha, gamma |
/// | LeL4 | a, r |
/// | LeL5 | a; φ(x) = c·x^s |
/// | LeL6 | a; φ(x) = c(x + κx²)/(1 + κ) |
/// | LeL8 | q, v, b, delta, a0 |
/// | LeL9 | ρ(u) = u^q, v, b, a0; δ_k = c(k+1)^(−s) |
/// | LeL10 | q, v, b, a0; δ_{m−1} = c·m^(−q) |
/// | LeL11 | q, w, a0; δ_{m−1} = c·m^(−q) |
/// | LeL12 | a, alpha, beta, a0 |
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecursionSpec {
    pub lemma: LemmaId,
    pub c1: f64,
    pub c2: f64,
    pub a: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub r: f64,
    pub q: f64,
    pub v: f64,
    pub b: f64,
    pub w: f64,
    pub c: f64,
    pub s: f64,
    pub kappa: f64,
    pub delta: f64,
    pub a0: f64,
    pub horizon: usize,
}

impl Default for RecursionSpec {
    fn default() -> Self {
        RecursionSpec::default_for(LemmaId::LeL1)
    }
}

fn log_uniform<R: Rng>(r: &mut R, lo: f64, hi: f64) -> f64 {
    (r.gen_range(lo.ln()..=hi.ln())).exp()
}

fn hyp(msg: impl Into<String>) -> GreedyError {
    GreedyError::Hypothesis(msg.into())
}

/// inf_{0≤λ≤1}(−λva + Bλ^q).
fn smooth_step_inf(a: f64, v: f64, b: f64, q: f64) -> f64 {
    if a <= 0.0 {
        return 0.0;
    }
    let lambda = (v * a / (q * b)).powf(1.0 / (q - 1.0)).min(1.0);
    -lambda * v * a + b * lambda.powf(q)
}

impl RecursionSpec {
    pub fn default_for(lemma: LemmaId) -> Self {
        let base = RecursionSpec {
            lemma,
            c1: 1.0,
            c2: 1.0,
            a: 1.0,
            alpha: 0.5,
            beta: 1.0,
            gamma: 1.0,
            r: 2.0,
            q: 2.0,
            v: 1.0,
            b: 1.0,
            w: 0.5,
            c: 1.0,
            s: 2.0,
            kappa: 1.0,
            delta: 1e-10,
            a0: 1.0,
            horizon: 100_000,
        };
        match lemma {
            LemmaId::HL1 => RecursionSpec { s: 0.5, ..base },
            LemmaId::LeL3 => RecursionSpec { a: 2.0, ..base },
            LemmaId::LeL10 | LemmaId::LeL11 => RecursionSpec { q: 1.5, ..base },
            LemmaId::LeL12 => RecursionSpec { a0: 0.5, ..base },
            _ => base,
        }
    }

    /// A random parameter draw satisfying the lemma's hypotheses.
    pub fn random<R: Rng>(lemma: LemmaId, horizon: usize, r: &mut R) -> Self {
        let mut s = RecursionSpec { horizon, ..RecursionSpec::default_for(lemma) };
        match lemma {
            LemmaId::LeL1 => {
                s.c1 = log_uniform(r, 0.1, 10.0);
                s.c2 = log_uniform(r, 0.1, 10.0);
            }
            LemmaId::HL1 => {
                s.c1 = log_uniform(r, 0.1, 10.0);
                s.c = r.gen_range(0.0..=1.0) / s.c1;
                s.s = r.gen_range(0.0..=2.0);
            }
            LemmaId::LeL2 => s.a = log_uniform(r, 0.01, 100.0),
            LemmaId::LeL3 => {
                s.alpha = r.gen_range(0.05..0.95);
                s.gamma = r.gen_range(s.alpha + 0.01..=1.0);
                s.a = log_uniform(r, 1.01, 10.0);
            }
            LemmaId::LeL4 => {
                s.a = log_uniform(r, 0.1, 10.0);
                s.r = log_uniform(r, 0.1, 10.0);
            }
            LemmaId::LeL5 => {
                s.a = log_uniform(r, 0.1, 10.0);
                s.c = r.gen_range(0.05..=1.0);
                s.s = r.gen_range(1.0..=4.0);
            }
            LemmaId::LeL6 => {
                s.a = log_uniform(r, 0.1, 10.0);
                s.c = r.gen_range(0.05..=1.0);
                s.kappa = log_uniform(r, 0.01, 10.0);
            }
            LemmaId::LeL8 => {
                s.q = r.gen_range(1.05..=2.0);
                s.v = r.gen_range(0.05..=1.0);
                s.b = log_uniform(r, 0.1, 10.0);
                s.delta = log_uniform(r, 1e-10, 1e-2);
                s.a0 = log_uniform(r, 0.01, 10.0);
            }
            LemmaId::LeL9 => {
                s.q = r.gen_range(1.1..=3.0);
                s.v = r.gen_range(0.05..=1.0);
                s.b = log_uniform(r, 0.1, 10.0);
                s.c = log_uniform(r, 0.01, 1.0);
                s.s = r.gen_range(0.5..=2.0);
                s.a0 = log_uniform(r, 0.01, 10.0);
            }
            LemmaId::LeL10 => {
                s.q = r.gen_range(1.05..=2.0);
                s.v = r.gen_range(0.05..=1.0);
                s.b = log_uniform(r, 0.1, 10.0);
                s.c = log_uniform(r, 0.01, 1.0);
                s.a0 = log_uniform(r, 0.01, 10.0);
            }
            LemmaId::LeL11 => {
                s.q = r.gen_range(1.05..=2.0);
                s.w = r.gen_range(0.01..=1.0);
                s.c = log_uniform(r, 0.01, 1.0);
                s.a0 = log_uniform(r, 0.01, 10.0);
            }
            LemmaId::LeL12 => {
                s.alpha = r.gen_range(0.05..2.0);
                s.beta = s.alpha + r.gen_range(0.05..2.0);
                s.a = log_uniform(r, 0.1, 10.0);
                s.a0 = r.gen_range(0.0..1.0) * s.a;
            }
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, x: f64| if x > 0.0 && x.is_finite() { Ok(()) } else { Err(hyp(format!("{name} must be positive, got {x}"))) };
        let q_range = |q: f64| if q > 1.0 && q <= 2.0 { Ok(()) } else { Err(hyp(format!("q must lie in (1,2], got {q}"))) };
        let v_range = |v: f64| if v > 0.0 && v <= 1.0 { Ok(()) } else { Err(hyp(format!("v must lie in (0,1], got {v}"))) };
        if self.horizon == 0 {
            return Err(hyp("horizon must be positive"));
        }
        match self.lemma {
            LemmaId::LeL1 => {
                pos("c1", self.c1)?;
                pos("c2", self.c2)
            }
            LemmaId::HL1 => {
                pos("c1", self.c1)?;
                if self.c < 0.0 || !self.s.is_finite() {
                    return Err(hyp("y_k = c k^(-s) needs c >= 0"));
                }
                Ok(())
            }
            LemmaId::LeL2 => pos("a", self.a),
            LemmaId::LeL3 => {
                if !(self.alpha > 0.0 && self.alpha < self.gamma && self.gamma <= 1.0 && self.a > 1.0) {
                    return Err(hyp("need 0 < alpha < gamma <= 1 and A > 1"));
                }
                Ok(())
            }
            LemmaId::LeL4 => {
                pos("a", self.a)?;
                pos("r", self.r)
            }
            LemmaId::LeL5 => {
                pos("a", self.a)?;
                if !(self.c > 0.0 && self.c <= 1.0 && self.s >= 1.0) {
                    return Err(hyp("phi(x) = c x^s must map [0,1] into [0,1] and be convex: 0 < c <= 1, s >= 1"));
                }
                Ok(())
            }
            LemmaId::LeL6 => {
                pos("a", self.a)?;
                if !(self.c > 0.0 && self.c <= 1.0 && self.kappa >= 0.0) {
                    return Err(hyp("phi needs 0 < c <= 1 and kappa >= 0"));
                }
                Ok(())
            }
            LemmaId::LeL8 => {
                q_range(self.q)?;
                v_range(self.v)?;
                pos("b", self.b)?;
                if !(self.delta > 0.0 && self.delta <= 1.0) {
                    return Err(hyp("delta must lie in (0,1]"));
                }
                if self.a0 < 0.0 {
                    return Err(hyp("a0 must be nonnegative"));
                }
                Ok(())
            }
            LemmaId::LeL9 => {
                if self.q <= 1.0 {
                    return Err(hyp("rho(u) = u^q needs q > 1 so that rho(u)/u -> 0"));
                }
                pos("v", self.v)?;
                pos("b", self.b)?;
                if self.c < 0.0 || self.s <= 0.0 {
                    return Err(hyp("delta_k = c (k+1)^(-s) needs c >= 0 and s > 0"));
                }
                if self.a0 < 0.0 {
                    return Err(hyp("a0 must be nonnegative"));
                }
                Ok(())
            }
            LemmaId::LeL10 => {
                q_range(self.q)?;
                v_range(self.v)?;
                pos("b", self.b)?;
                pos("c", self.c)?;
                if self.a0 < 0.0 {
                    return Err(hyp("a0 must be nonnegative"));
                }
                Ok(())
            }
            LemmaId::LeL11 => {
                q_range(self.q)?;
                if !(self.w > 0.0 && self.w <= 1.0) {
                    return Err(hyp("w must lie in (0,1]"));
                }
                pos("c", self.c)?;
                if self.a0 < 0.0 {
                    return Err(hyp("a0 must be nonnegative"));
                }
                Ok(())
            }
            LemmaId::LeL12 => {
                if !(self.alpha > 0.0 && self.alpha < self.beta && self.a > 0.0 && self.a0 >= 0.0 && self.a0 < self.a) {
                    return Err(hyp("need 0 < alpha < beta, A > 0 and 0 <= a0 < A"));
                }
                Ok(())
            }
        }
    }

    /// First index of the sequence (0 or 1).
    pub fn start(&self) -> usize {
        match self.lemma {
            LemmaId::LeL2 | LemmaId::LeL3 | LemmaId::LeL4 | LemmaId::LeL5 | LemmaId::LeL6 => 1,
            _ => 0,
        }
    }

    /// Last index simulated.
    pub fn last_index(&self) -> usize {
        match self.lemma {
            LemmaId::LeL8 => self.horizon.min(self.delta.powf(-1.0 / self.q).floor() as usize),
            _ => self.horizon,
        }
    }

    fn y(&self, k: usize) -> f64 {
        self.c * (k as f64).powf(-self.s)
    }

    fn phi(&self, x: f64) -> f64 {
        match self.lemma {
            LemmaId::LeL5 => self.c * x.powf(self.s),
            _ => self.c * (x + self.kappa * x * x) / (1.0 + self.kappa),
        }
    }

    fn phi_inverse(&self, y: f64) -> f64 {
        match self.lemma {
            LemmaId::LeL5 => (y / self.c).powf(1.0 / self.s),
            _ => {
                let rhs = y * (1.0 + self.kappa) / self.c;
                if self.kappa == 0.0 {
                    rhs
                } else {
                    (-1.0 + (1.0 + 4.0 * self.kappa * rhs).sqrt()) / (2.0 * self.kappa)
                }
            }
        }
    }

    fn p(&self) -> f64 {
        self.q / (self.q - 1.0)
    }

    /// Constant of the m^{1−q} bound for LeL8, LeL10, LeL11.
    pub fn rate_constant(&self) -> f64 {
        let (q, p, v, b) = (self.q, self.p(), self.v, self.b);
        match self.lemma {
            LemmaId::LeL8 => {
                let d0 = self.a0 + 1.0;
                let c2 = (0.5 * (2.0 * b).powf(-1.0 / (q - 1.0)) * v.powf(p)).min(0.5 * v * d0.powf(1.0 - p));
                (c2 / (2.0 * (q - 1.0))).powf(1.0 - q).max((2.0 / c2).powf(1.0 / p) + 1.0)
            }
            LemmaId::LeL10 | LemmaId::LeL11 => {
                let c = self.c;
                let d0 = self.a0 + c * (1.0 + 1.0 / (q - 1.0));
                let bb = if self.lemma == LemmaId::LeL10 {
                    (0.5 * (2.0 * b).powf(-1.0 / (q - 1.0)) * v.powf(p)).min(0.5 * v * d0.powf(1.0 - p)).min(d0.powf(1.0 - p) / p)
                } else {
                    self.w.min(d0.powf(1.0 - p) / p)
                };
                d0.max((2.0 * (q - 1.0) / bb).powf(1.0 / (p - 1.0)))
                    .max((2.0 * c / bb).powf(1.0 / p))
                    .max(d0 * (((q - 1.0) * d0 + c) / (bb * d0.powf(p))).powf(q - 1.0))
            }
            _ => f64::NAN,
        }
    }

    /// The lemma's conclusion at index m (∞ where it asserts nothing).
    pub fn bound(&self, m: usize) -> f64 {
        self.bound_with(m, self.rate_constant())
    }

    /// `bound` with the rate constant computed once by the caller.
    fn bound_with(&self, m: usize, rate_constant: f64) -> f64 {
        let mf = m as f64;
        match self.lemma {
            LemmaId::LeL1 => 1.0 / (1.0 / self.c1 + self.c2 * mf),
            LemmaId::HL1 => 1.0 / (1.0 / self.c1 + (1..=m).map(|k| self.y(k)).sum::<f64>()),
            LemmaId::LeL2 => self.a / mf,
            LemmaId::LeL3 => self.a * 2f64.powf(self.alpha * self.gamma / (self.gamma - self.alpha)) * mf.powf(-self.alpha),
            LemmaId::LeL4 => {
                if self.r <= 1.0 {
                    self.a * mf.powf(-self.r)
                } else {
                    self.a * self.r.powf(self.r) * mf.powf(-self.r)
                }
            }
            LemmaId::LeL5 => {
                let y = 1.0 / mf;
                if y >= self.phi(1.0) {
                    self.a
                } else {
                    self.a * self.phi_inverse(y)
                }
            }
            LemmaId::LeL6 => {
                let beta = 1.0 / (1.0 + self.kappa);
                let y = 1.0 / (beta * mf);
                if y >= self.phi(1.0) {
                    self.a
                } else {
                    self.a * self.phi_inverse(y)
                }
            }
            LemmaId::LeL8 | LemmaId::LeL10 | LemmaId::LeL11 => {
                if m == 0 {
                    f64::INFINITY
                } else {
                    rate_constant * mf.powf(1.0 - self.q)
                }
            }
            LemmaId::LeL9 => f64::INFINITY,
            LemmaId::LeL12 => {
                let c = 2f64.powf(1.0 + self.alpha) * 2f64.powf(self.alpha * (1.0 + self.alpha) / (self.beta - self.alpha));
                if m == 0 {
                    f64::INFINITY
                } else {
                    c * self.a * mf.powf(-self.alpha)
                }
            }
        }
    }

    fn initial(&self) -> f64 {
        match self.lemma {
            LemmaId::LeL1 => self.c1.min(1.0 / self.c2),
            LemmaId::HL1 => self.c1,
            LemmaId::LeL2 | LemmaId::LeL4 | LemmaId::LeL5 | LemmaId::LeL6 => self.a,
            LemmaId::LeL3 => 1.0,
            _ => self.a0,
        }
    }

    /// Largest value of a(1 − φ(a)) type maps over [0, x]; these maps are
    /// concave with the peak at `peak`.
    fn capped(x: f64, peak: f64) -> f64 {
        x.min(peak)
    }

    /// Largest admissible a_{k+1} given a_k = x. With `envelope`, also
    /// allows any smaller predecessor (the supremum over all sequences).
    /// Maximizer of the map for the lemmas whose map does not depend on k.
    fn peak(&self) -> f64 {
        match self.lemma {
            LemmaId::LeL1 => 0.5 / self.c2,
            LemmaId::LeL4 => self.a * (self.r / (self.r + 1.0)).powf(self.r),
            LemmaId::LeL5 => self.a * (1.0 / (self.c * (self.s + 1.0))).powf(1.0 / self.s).min(1.0),
            LemmaId::LeL6 => {
                // d/du [u − uφ(u)] = 0  ⇔  3κu² + 2u − (1+κ)/c = 0.
                let rhs = (1.0 + self.kappa) / self.c;
                let u = if self.kappa == 0.0 { rhs / 2.0 } else { (-2.0 + (4.0 + 12.0 * self.kappa * rhs).sqrt()) / (6.0 * self.kappa) };
                self.a * u.min(1.0)
            }
            LemmaId::LeL11 => (1.0 / (self.w * self.p())).powf(1.0 / (self.p() - 1.0)),
            _ => f64::INFINITY,
        }
    }

    fn upper(&self, k: usize, x: f64, envelope: bool, peak: f64) -> f64 {
        let kf = k as f64;
        let h = |x: f64, peak: f64, map: &dyn Fn(f64) -> f64| {
            let y = if envelope { Self::capped(x, peak) } else { x };
            map(y).max(0.0)
        };
        match self.lemma {
            LemmaId::LeL1 => h(x, peak, &|y| y * (1.0 - self.c2 * y)),
            LemmaId::HL1 => {
                let yk = self.y(k + 1);
                let peak = if yk > 0.0 { 0.5 / yk } else { f64::INFINITY };
                h(x, peak, &|z| z * (1.0 - yk * z))
            }
            LemmaId::LeL2 => {
                let m = kf + 1.0;
                x - 2.0 / m * x + self.a / (m * m)
            }
            LemmaId::LeL3 => {
                if x >= self.a * kf.powf(-self.alpha) {
                    x * (1.0 - self.gamma / kf)
                } else {
                    x
                }
            }
            LemmaId::LeL4 => h(x, peak, &|y| y * (1.0 - (y / self.a).powf(1.0 / self.r))),
            LemmaId::LeL5 | LemmaId::LeL6 => h(x, peak, &|y| y * (1.0 - self.phi(y / self.a))),
            LemmaId::LeL8 => x + smooth_step_inf(x, self.v, self.b, self.q) + self.delta,
            LemmaId::LeL9 => x + smooth_step_inf(x, self.v, self.b, self.q) + self.c * (kf + 1.0).powf(-self.s),
            LemmaId::LeL10 => x + smooth_step_inf(x, self.v, self.b, self.q) + self.c * (kf + 1.0).powf(-self.q),
            LemmaId::LeL11 => {
                let p = self.p();
                h(x, peak, &|y| y - self.w * y.powf(p)) + self.c * (kf + 1.0).powf(-self.q)
            }
            LemmaId::LeL12 => {
                let n = kf + 1.0;
                let grow = x + self.a * n.powf(-self.alpha);
                if k >= 1 && x >= self.a * kf.powf(-self.alpha) {
                    (x * (1.0 - self.beta / kf)).max(0.0).min(grow)
                } else {
                    grow
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LemmaBoundKind {
    Explicit,
    /// Limit-to-zero proxy: tail maximum against max(head maximum, 1e-3).
    LimitProxy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecursionReport {
    pub lemma: LemmaId,
    pub adversarial: bool,
    /// Index of `sequence[0]`.
    pub start: usize,
    pub sequence: Vec<f64>,
    pub bound_kind: LemmaBoundKind,
    pub max_ratio: f64,
    pub argmax: usize,
    pub passed: bool,
}

/// Tolerance on the ratio a_m / bound(m).
pub const LEMMA_TOL: f64 = 1e-9;

/// Generates a sequence satisfying the lemma's recursive inequality and
/// checks its conclusion pointwise.
///
/// Adversarial runs take the largest admissible value at every step (for
/// maps of the form a(1 − φ(a)) this is the supremum over all admissible
/// predecessors). Random runs multiply the largest value by 1 − U·ε with ε
/// log-uniform in [1e-6, 1] per run.
pub fn simulate_recursion(spec: &RecursionSpec, adversarial: bool, seed: u64) -> Result<RecursionReport> {
    spec.validate()?;
    let mut r = rng::stream(seed, "recursion", spec.lemma as u64);
    let eps = log_uniform(&mut r, 1e-6, 1.0);
    let start = spec.start();
    let last = spec.last_index();
    let mut seq = Vec::with_capacity(last + 1 - start);
    let mut a = spec.initial();
    let peak = spec.peak();
    seq.push(a);
    for k in start..last {
        let up = spec.upper(k, a, adversarial, peak);
        a = if adversarial { up } else { up * (1.0 - r.gen_range(0.0..1.0) * eps) };
        seq.push(a);
    }
    let (bound_kind, max_ratio, argmax) = if spec.lemma == LemmaId::LeL9 {
        let n = last;
        let window = |lo: usize, hi: usize| (lo..=hi).map(|m| seq[m]).fold(0.0f64, f64::max);
        let tail = window(n / 2, n);
        let head = window(n / 4, (n / 2).saturating_sub(1).max(n / 4));
        (LemmaBoundKind::LimitProxy, tail / head.max(1e-3), n)
    } else {
        let mut best = (0.0f64, start);
        let mut hl1_sum = 0.0;
        let rc = spec.rate_constant();
        for (i, v) in seq.iter().enumerate() {
            let m = start + i;
            let b = if spec.lemma == LemmaId::HL1 {
                if m >= 1 {
                    hl1_sum += spec.y(m);
                }
                1.0 / (1.0 / spec.c1 + hl1_sum)
            } else {
                spec.bound_with(m, rc)
            };
            let ratio = v / b;
            if ratio > best.0 {
                best = (ratio, m);
            }
        }
        (LemmaBoundKind::Explicit, best.0, best.1)
    };
    Ok(RecursionReport {
        lemma: spec.lemma,
        adversarial,
        start,
        sequence: seq,
        bound_kind,
        max_ratio,
        argmax,
        passed: max_ratio <= 1.0 + LEMMA_TOL,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VTrend {
    pub v: Vec<f64>,
    /// max_m a_m m^{q−1} of the adversarial run.
    pub fitted: Vec<f64>,
    /// fitted · v^q, expected to stay bounded.
    pub scaled: Vec<f64>,
    pub passed: bool,
}

/// Scaling check of the v^{−q} dependence for LeL8 and LeL10 over
/// v ∈ {1, 1/2, 1/4}: passes if fitted·v^q never exceeds twice its value at v = 1.
pub fn v_trend(spec: &RecursionSpec) -> Result<VTrend> {
    if !matches!(spec.lemma, LemmaId::LeL8 | LemmaId::LeL10) {
        return Err(GreedyError::invalid("lemma", "the v-trend applies to LeL8 and LeL10"));
    }
    let vs = vec![1.0, 0.5, 0.25];
    let mut fitted = Vec::new();
    for &v in &vs {
        let s = RecursionSpec { v, ..spec.clone() };
        let rep = simulate_recursion(&s, true, 0)?;
        let f = rep.sequence.iter().enumerate().skip(1).map(|(m, a)| a * (m as f64).powf(s.q - 1.0)).fold(0.0f64, f64::max);
        fitted.push(f);
    }
    let scaled: Vec<f64> = fitted.iter().zip(&vs).map(|(f, v)| f * v.powf(spec.q)).collect();
    let passed = scaled.iter().all(|s| *s <= 2.0 * scaled[0]);
    Ok(VTrend { v: vs, fitted, scaled, passed })
}

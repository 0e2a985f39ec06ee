//! Greedy-step and approximation-step primitives.
//!
//! Everything the algorithms do to a residual is built from the functions in
//! this module: a 1-D line search, the Chebyshev projection onto a finite
//! span, free and fixed relaxation, X-greedy selection and threshold
//! selection.

use serde::{Deserialize, Serialize};

use crate::dictionary::Dictionary;
use crate::error::{GreedyError, Result};
use crate::linalg::{self, Mat};
use crate::space::{sub, DualFunctional, Element, SpaceLp};

/// Smoothing added to r_i² in the Hessian weights when p < 2, relative to
/// (max |r_i|)².
const HUBER_EPS: f64 = 1e-30;
/// Optimality level reachable in double precision when p < 2 and some
/// residual coordinates are close to zero.
const KKT_FLOOR: f64 = 1e-7;
/// Relative size below which a residual coordinate counts as zero.
const ROUNDING_ZERO: f64 = 1e-14;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    pub tol_grad: f64,
    pub max_iter: usize,
    pub bracket_growth: f64,
    /// Relative QR-diagonal threshold below which a span direction is dropped.
    pub drop_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tol_grad: 1e-10, max_iter: 500, bracket_growth: 2.0, drop_tol: 1e-10 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionResult {
    /// One entry per span element; dropped elements get 0.
    pub coefficients: Vec<f64>,
    pub residual: Element,
    pub residual_norm: f64,
    /// max_j |F_residual(y_j)|; 0 when the residual vanishes.
    pub kkt_violation: f64,
    /// Positions of span elements dropped as numerically dependent.
    pub dropped: Vec<usize>,
    pub iterations: usize,
}

/// λ* = argmin_λ ‖f − λg‖, returned with the minimal norm.
pub fn line_search_1d(space: &SpaceLp, f: &[f64], g: &[f64]) -> Result<(f64, f64)> {
    line_search_with(space, f, g, &SolverOptions::default())
}

pub fn line_search_with(space: &SpaceLp, f: &[f64], g: &[f64], opts: &SolverOptions) -> Result<(f64, f64)> {
    space.check_dim(f)?;
    space.check_dim(g)?;
    let ng = space.norm(g);
    if ng == 0.0 {
        return Err(GreedyError::ZeroVector);
    }
    let nf = space.norm(f);
    if nf == 0.0 {
        return Ok((0.0, 0.0));
    }
    let lambda = if space.is_hilbert() {
        linalg::dot(f, g) / linalg::dot(g, g)
    } else {
        bisect_derivative(space.p, f, g, nf / ng, opts.bracket_growth)
    };
    let r: Vec<f64> = f.iter().zip(g).map(|(a, b)| a - lambda * b).collect();
    Ok((lambda, space.norm(&r)))
}

/// Sign of d/dλ Σ|f_i − λg_i|^p, up to the positive factor p.
fn derivative(p: f64, f: &[f64], g: &[f64], lambda: f64) -> f64 {
    let pm1 = p - 1.0;
    let mut h = 0.0;
    for (a, b) in f.iter().zip(g) {
        let r = a - lambda * b;
        if r != 0.0 {
            h -= r.signum() * r.abs().powf(pm1) * b;
        }
    }
    h
}

fn bisect_derivative(p: f64, f: &[f64], g: &[f64], scale: f64, growth: f64) -> f64 {
    // Work with f/‖f‖-sized numbers so |r|^{p-1} stays in range.
    let s = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let fs: Vec<f64> = f.iter().map(|v| v / s).collect();
    let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let gs: Vec<f64> = g.iter().map(|v| v / gmax).collect();
    let unit = s / gmax;
    let mut hi = scale / unit;
    let mut lo = -hi;
    let growth = if growth > 1.0 { growth } else { 2.0 };
    while derivative(p, &fs, &gs, hi) < 0.0 {
        lo = hi;
        hi *= growth;
    }
    while derivative(p, &fs, &gs, lo) > 0.0 {
        hi = lo;
        lo *= growth;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let h = derivative(p, &fs, &gs, mid);
        if h == 0.0 {
            return mid * unit;
        }
        if h < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // Pick whichever end has the smaller objective.
    let obj = |l: f64| -> f64 {
        fs.iter().zip(&gs).map(|(a, b)| (a - l * b).abs().powf(p)).sum()
    };
    let mid = 0.5 * (lo + hi);
    let best = [lo, mid, hi]
        .into_iter()
        .min_by(|a, b| obj(*a).total_cmp(&obj(*b)))
        .unwrap_or(mid);
    best * unit
}

/// Minimizer of ‖f − λg‖ over λ ∈ [lo, hi]; by convexity this is the clamped
/// unconstrained minimizer.
pub fn line_search_clamped(space: &SpaceLp, f: &[f64], g: &[f64], lo: f64, hi: f64) -> Result<(f64, f64)> {
    let (lambda, _) = line_search_1d(space, f, g)?;
    let lambda = lambda.clamp(lo, hi);
    let r: Vec<f64> = f.iter().zip(g).map(|(a, b)| a - lambda * b).collect();
    Ok((lambda, space.norm(&r)))
}

/// max_j |F_r(y_j)| with F_r the norming functional of `r`.
pub fn kkt_violation(space: &SpaceLp, r: &[f64], span: &[&[f64]]) -> f64 {
    kkt_with_scale(space, r, span, 0.0)
}

/// Largest |f_i| + Σ_j |c_j y_j(i)|, the magnitude that rounding in the
/// residual f − Σ c_j y_j is relative to.
fn rounding_scale(fs: &[f64], basis: &[&[f64]], c: &[f64]) -> f64 {
    (0..fs.len())
        .map(|i| fs[i].abs() + basis.iter().zip(c).map(|(y, cj)| (cj * y[i]).abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn kkt_with_scale(space: &SpaceLp, r: &[f64], span: &[&[f64]], scale: f64) -> f64 {
    let nr = space.norm(r);
    if nr == 0.0 {
        return 0.0;
    }
    // Coordinates at rounding level are treated as exact zeros; for p < 2
    // their |r_i|^{p−1} would otherwise dominate the measure.
    let floor = ROUNDING_ZERO * r.iter().fold(scale, |m, v| m.max(v.abs()));
    let clean: Vec<f64> = r.iter().map(|v| if v.abs() <= floor { 0.0 } else { *v }).collect();
    let fr = space.norming_functional_with_norm(&clean, space.norm(&clean));
    span.iter().map(|y| fr.eval(y).abs()).fold(0.0, f64::max)
}

/// Best approximation of `f` from span{y_j} in ‖·‖_p.
pub fn chebyshev_project(space: &SpaceLp, f: &[f64], span: &[&[f64]], opts: &SolverOptions) -> Result<ProjectionResult> {
    space.check_dim(f)?;
    for y in span {
        space.check_dim(y)?;
    }
    let k = span.len();
    if k == 0 {
        return Ok(ProjectionResult {
            coefficients: vec![],
            residual: f.to_vec(),
            residual_norm: space.norm(f),
            kkt_violation: 0.0,
            dropped: vec![],
            iterations: 0,
        });
    }
    let ls = linalg::least_squares(span, f, opts.drop_tol);
    let dropped: Vec<usize> = (0..k).filter(|j| !ls.kept[*j]).collect();
    let nf = space.norm(f);
    let ls_res = space.norm(&ls.residual);
    let exact = nf == 0.0 || ls_res <= 1e-15 * nf;
    if space.is_hilbert() || exact {
        let residual = if space.is_hilbert() { ls.residual } else { recompute_residual(f, span, &ls.coefficients) };
        let residual_norm = space.norm(&residual);
        let kkt = if exact { 0.0 } else { kkt_violation(space, &residual, span) };
        return Ok(ProjectionResult {
            coefficients: ls.coefficients,
            residual,
            residual_norm,
            kkt_violation: kkt,
            dropped,
            iterations: 0,
        });
    }
    let kept_idx: Vec<usize> = (0..k).filter(|j| ls.kept[*j]).collect();
    let basis: Vec<&[f64]> = kept_idx.iter().map(|&j| span[j]).collect();
    let start: Vec<f64> = kept_idx.iter().map(|&j| ls.coefficients[j]).collect();
    let (c, iterations, kkt) = newton_lp(space, f, nf, &basis, start, opts)?;
    let mut coefficients = vec![0.0; k];
    for (pos, &j) in kept_idx.iter().enumerate() {
        coefficients[j] = c[pos];
    }
    let residual = recompute_residual(f, span, &coefficients);
    let residual_norm = space.norm(&residual);
    Ok(ProjectionResult { coefficients, residual, residual_norm, kkt_violation: kkt, dropped, iterations })
}

fn recompute_residual(f: &[f64], span: &[&[f64]], c: &[f64]) -> Element {
    let mut r = f.to_vec();
    for (y, cj) in span.iter().zip(c) {
        if *cj != 0.0 {
            linalg::axpy(-cj, y, &mut r);
        }
    }
    r
}

/// Damped Newton on Σ|r_i|^p, r = f/‖f‖ − Yc, with Armijo backtracking.
fn newton_lp(
    space: &SpaceLp,
    f: &[f64],
    nf: f64,
    basis: &[&[f64]],
    start: Vec<f64>,
    opts: &SolverOptions,
) -> Result<(Vec<f64>, usize, f64)> {
    let fs: Vec<f64> = f.iter().map(|v| v / nf).collect();
    let c: Vec<f64> = start.iter().map(|v| v / nf).collect();
    let tol = opts.tol_grad * nf.max(1.0);
    let done = |c: Vec<f64>, it: usize, kkt: f64| Ok((c.iter().map(|v| v * nf).collect(), it, kkt));
    if space.p >= 2.0 {
        let run = newton_core(space, &fs, basis, c, tol, opts.max_iter);
        return if run.kkt <= tol.max(KKT_FLOOR) { done(run.c, run.iterations, run.kkt) } else { Err(GreedyError::NonConvergence { iterations: run.iterations, kkt: run.kkt }) };
    }
    // For p < 2 the Hessian blows up where residual coordinates vanish; a
    // short Newton phase identifies those coordinates and the active-set
    // solve pins them to zero.
    let first = newton_core(space, &fs, basis, c, tol, opts.max_iter.min(60));
    if first.kkt <= tol {
        return done(first.c, first.iterations, first.kkt);
    }
    if let Some(p) = active_set_polish(space, &fs, basis, &first.c, tol, opts.max_iter) {
        if p.kkt <= tol.max(KKT_FLOOR) && p.kkt < first.kkt {
            return done(p.c, first.iterations + p.iterations, p.kkt);
        }
    }
    let rest = newton_core(space, &fs, basis, first.c.clone(), tol, opts.max_iter.saturating_sub(first.iterations));
    let best = if rest.kkt < first.kkt { rest } else { first };
    if best.kkt <= tol.max(KKT_FLOOR) {
        return done(best.c, opts.max_iter, best.kkt);
    }
    Err(GreedyError::NonConvergence { iterations: opts.max_iter, kkt: best.kkt })
}

struct NewtonRun {
    c: Vec<f64>,
    iterations: usize,
    kkt: f64,
}

fn lp_residual(fs: &[f64], basis: &[&[f64]], c: &[f64]) -> Vec<f64> {
    let mut r = fs.to_vec();
    for (y, cj) in basis.iter().zip(c) {
        linalg::axpy(-cj, y, &mut r);
    }
    r
}

fn lp_objective(r: &[f64], p: f64) -> f64 {
    r.iter().map(|v| v.abs().powf(p)).sum()
}

fn newton_core(space: &SpaceLp, fs: &[f64], basis: &[&[f64]], mut c: Vec<f64>, tol: f64, max_iter: usize) -> NewtonRun {
    let p = space.p;
    let n = fs.len();
    let k = basis.len();
    let mut r = lp_residual(fs, basis, &c);
    let mut obj = lp_objective(&r, p);
    let mut stagnant = 0;
    for it in 0..max_iter {
        let nr = space.norm(&r);
        if nr <= 1e-15 {
            return NewtonRun { c, iterations: it, kkt: 0.0 };
        }
        let kkt = kkt_with_scale(space, &r, basis, rounding_scale(fs, basis, &c));
        if kkt <= tol {
            return NewtonRun { c, iterations: it, kkt };
        }
        // Gradient of Σ|r_i|^p in c, divided by p.
        let pm1 = p - 1.0;
        let mut grad = vec![0.0; k];
        for i in 0..n {
            let ri = r[i];
            if ri != 0.0 {
                let gi = ri.signum() * ri.abs().powf(pm1);
                for j in 0..k {
                    grad[j] -= gi * basis[j][i];
                }
            }
        }
        let smooth = HUBER_EPS * r.iter().fold(0.0f64, |m, v| m.max(v * v));
        let weights: Vec<f64> = r
            .iter()
            .map(|&ri| pm1 * if p >= 2.0 { ri.abs().powf(p - 2.0) } else { (ri * ri + smooth).powf((p - 2.0) / 2.0) })
            .collect();
        let dir = newton_direction(basis, &weights, &grad);
        // s = Y d; the step length minimizes the convex φ(α) = Σ|r − α s|^p.
        let mut sdir = vec![0.0; n];
        for (y, dj) in basis.iter().zip(&dir) {
            linalg::axpy(*dj, y, &mut sdir);
        }
        let alpha = exact_step(&r, &sdir, p);
        let mut accepted = false;
        if alpha > 0.0 {
            let trial: Vec<f64> = c.iter().zip(&dir).map(|(a, d)| a + alpha * d).collect();
            let rt = lp_residual(fs, basis, &trial);
            let ot = lp_objective(&rt, p);
            // Near the optimum the objective no longer resolves the decrease;
            // a step that lowers the KKT residual is then accepted.
            if ot < obj || (ot <= obj * (1.0 + 1e-12) && kkt_with_scale(space, &rt, basis, rounding_scale(fs, basis, &trial)) < kkt) {
                let moved = alpha * dir.iter().map(|d| d.abs()).fold(0.0, f64::max);
                let size = c.iter().map(|v| v.abs()).fold(1e-300, f64::max);
                stagnant = if moved <= 1e-15 * size { stagnant + 1 } else { 0 };
                c = trial;
                r = rt;
                obj = ot;
                accepted = true;
            }
        }
        if !accepted || stagnant >= 5 {
            // No representable decrease: we are at the floating-point optimum.
            let kkt = kkt_with_scale(space, &r, basis, rounding_scale(fs, basis, &c));
            return NewtonRun { c, iterations: it + 1, kkt };
        }
    }
    let kkt = kkt_with_scale(space, &r, basis, rounding_scale(fs, basis, &c));
    NewtonRun { c, iterations: max_iter, kkt }
}

/// argmin over α ≥ 0 of Σ|r_i − α s_i|^p, by bisection on the derivative.
fn exact_step(r: &[f64], s: &[f64], p: f64) -> f64 {
    let deriv = |a: f64| -> f64 {
        r.iter()
            .zip(s)
            .map(|(&ri, &si)| {
                let t = ri - a * si;
                if t == 0.0 { 0.0 } else { -t.signum() * t.abs().powf(p - 1.0) * si }
            })
            .sum()
    };
    if deriv(0.0) >= 0.0 {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while deriv(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > 1e12 {
            return hi;
        }
    }
    if deriv(1.0) == 0.0 {
        return 1.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if deriv(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // Prefer the unit step when it lies inside the final bracket.
    if lo <= 1.0 && 1.0 <= hi { 1.0 } else { 0.5 * (lo + hi) }
}

/// Solves (Σ w_i y_i y_iᵀ) d = −grad with Levenberg damping on failure.
fn newton_direction(basis: &[&[f64]], weights: &[f64], grad: &[f64]) -> Vec<f64> {
    let k = basis.len();
    let mut hess = Mat::zeros(k, k);
    for (i, &wi) in weights.iter().enumerate() {
        if wi == 0.0 {
            continue;
        }
        for j in 0..k {
            let yij = basis[j][i];
            if yij != 0.0 {
                for l in j..k {
                    hess[(j, l)] += wi * yij * basis[l][i];
                }
            }
        }
    }
    for j in 0..k {
        for l in 0..j {
            hess[(j, l)] = hess[(l, j)];
        }
    }
    let trace: f64 = (0..k).map(|j| hess[(j, j)]).sum::<f64>().max(1e-300);
    let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
    let mut mu = 0.0;
    loop {
        let mut h = hess.clone();
        for j in 0..k {
            h[(j, j)] += mu;
        }
        if let Some(l) = linalg::cholesky(&h) {
            let z = linalg::forward_substitute(&l, &neg);
            let d = back_substitute_t(&l, &z);
            if d.iter().all(|v| v.is_finite()) {
                return d;
            }
        }
        mu = if mu == 0.0 { 1e-12 * trace / k as f64 } else { mu * 10.0 };
        if mu > 1e30 {
            return neg;
        }
    }
}

/// Pins near-zero residual coordinates to exactly zero and minimizes over
/// the remaining affine family; tries a ladder of zero thresholds.
fn active_set_polish(space: &SpaceLp, fs: &[f64], basis: &[&[f64]], c: &[f64], tol: f64, max_iter: usize) -> Option<NewtonRun> {
    let k = basis.len();
    let r = lp_residual(fs, basis, c);
    let rmax = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let obj = lp_objective(&r, space.p);
    let mut best: Option<NewtonRun> = None;
    let mut last: Vec<usize> = vec![];
    for e in 1..=10 {
        let theta = 10f64.powi(-e) * rmax;
        let zeros: Vec<usize> = (0..r.len()).filter(|&i| r[i].abs() <= theta).collect();
        if zeros.is_empty() || zeros == last {
            continue;
        }
        last = zeros.clone();
        // Constraints E c = fs_Z with E_{ij} = y_j(i), i ∈ Z.
        let mut ete = Mat::zeros(k, k);
        let mut rhs = vec![0.0; k];
        for &i in &zeros {
            let gap = r[i];
            for j in 0..k {
                rhs[j] += basis[j][i] * gap;
                for l in 0..k {
                    ete[(j, l)] += basis[j][i] * basis[l][i];
                }
            }
        }
        let (vals, vecs) = linalg::sym_eigen(&ete);
        let top = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        // Minimal correction c0 = c + E⁺(fs_Z − E c) and null-space basis.
        let mut c0 = c.to_vec();
        let mut null = Vec::new();
        for (idx, &lam) in vals.iter().enumerate() {
            let v = vecs.col(idx);
            if lam <= 1e-12 * top {
                null.push(v);
            } else {
                let coef = linalg::dot(&v, &rhs) / lam;
                linalg::axpy(coef, &v, &mut c0);
            }
        }
        let cand = if null.is_empty() {
            let rr = lp_residual(fs, basis, &c0);
            NewtonRun { kkt: kkt_with_scale(space, &rr, basis, rounding_scale(fs, basis, &c0)), c: c0, iterations: 0 }
        } else {
            let reduced: Vec<Vec<f64>> = null
                .iter()
                .map(|nv| {
                    let mut b = vec![0.0; fs.len()];
                    for (j, y) in basis.iter().enumerate() {
                        linalg::axpy(nv[j], y, &mut b);
                    }
                    for &i in &zeros {
                        b[i] = 0.0;
                    }
                    b
                })
                .collect();
            let mut target = lp_residual(fs, basis, &c0);
            for &i in &zeros {
                target[i] = 0.0;
            }
            let rb: Vec<&[f64]> = reduced.iter().map(|v| v.as_slice()).collect();
            let sub = newton_core(space, &target, &rb, vec![0.0; null.len()], tol, max_iter);
            let mut cc = c0;
            for (z, nv) in sub.c.iter().zip(&null) {
                linalg::axpy(*z, nv, &mut cc);
            }
            let rr = lp_residual(fs, basis, &cc);
            NewtonRun { kkt: kkt_with_scale(space, &rr, basis, rounding_scale(fs, basis, &cc)), c: cc, iterations: sub.iterations }
        };
        let cand_obj = lp_objective(&lp_residual(fs, basis, &cand.c), space.p);
        if cand_obj <= obj * (1.0 + 1e-9) && best.as_ref().map_or(true, |b| cand.kkt < b.kkt) {
            best = Some(cand);
        }
    }
    best
}

/// Solves `Lᵀ x = z` for lower-triangular `L`.
fn back_substitute_t(l: &Mat, z: &[f64]) -> Vec<f64> {
    let n = l.rows;
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = z[i];
        for k in i + 1..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// Result of a free relaxation step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FreeRelax {
    pub w: f64,
    pub lambda: f64,
    pub residual_norm: f64,
}

/// min over (w, λ) of ‖f − ((1−w)G + λφ)‖.
pub fn free_relax(space: &SpaceLp, f: &[f64], g: &[f64], phi: &[f64], opts: &SolverOptions) -> Result<FreeRelax> {
    if g.iter().all(|v| *v == 0.0) {
        let (lambda, residual_norm) = line_search_with(space, f, phi, opts)?;
        return Ok(FreeRelax { w: 0.0, lambda, residual_norm });
    }
    // φ first, so that a G parallel to φ is the one dropped.
    let proj = chebyshev_project(space, f, &[phi, g], opts)?;
    let lambda = proj.coefficients[0];
    let a = proj.coefficients[1];
    Ok(FreeRelax { w: 1.0 - a, lambda, residual_norm: proj.residual_norm })
}

/// λ* = argmin_λ ‖f − (1−r)G − λφ‖.
pub fn fixed_relax(space: &SpaceLp, f: &[f64], g: &[f64], phi: &[f64], r: f64, opts: &SolverOptions) -> Result<(f64, f64)> {
    if !(0.0..1.0).contains(&r) {
        return Err(GreedyError::invalid("relaxation", format!("need r in [0,1), got {r}")));
    }
    let shifted: Vec<f64> = f.iter().zip(g).map(|(a, b)| a - (1.0 - r) * b).collect();
    line_search_with(space, &shifted, phi, opts)
}

/// argmin over g ∈ D of min_λ ‖f − λg‖ (lowest index on ties).
pub fn x_greedy_select(space: &SpaceLp, f: &[f64], dict: &Dictionary) -> Result<(usize, f64, f64)> {
    x_greedy_select_with(space, f, dict, &SolverOptions::default())
}

pub fn x_greedy_select_with(space: &SpaceLp, f: &[f64], dict: &Dictionary, opts: &SolverOptions) -> Result<(usize, f64, f64)> {
    if dict.is_empty() {
        return Err(GreedyError::EmptyDictionary);
    }
    let mut best = (0usize, 0.0, f64::INFINITY);
    for (i, g) in dict.elements().iter().enumerate() {
        let (lambda, res) = line_search_with(space, f, g, opts)?;
        if res < best.2 {
            best = (i, lambda, res);
        }
    }
    Ok(best)
}

/// Lowest-index element with |F(g)| ≥ δ, with the sign of F(g).
pub fn threshold_select(functional: &DualFunctional, dict: &Dictionary, delta: f64) -> Option<(usize, i8)> {
    dict.elements()
        .iter()
        .enumerate()
        .map(|(i, g)| (i, functional.eval(g)))
        .find(|(_, v)| v.abs() >= delta)
        .map(|(i, v)| (i, if v < 0.0 { -1 } else { 1 }))
}

/// f − Σ c_j y_j.
pub fn residual_of(f: &[f64], span: &[&[f64]], c: &[f64]) -> Element {
    let mut r = f.to_vec();
    for (y, cj) in span.iter().zip(c) {
        linalg::axpy(-cj, y, &mut r);
    }
    r
}

/// Convenience: ‖f − g‖.
pub fn distance(space: &SpaceLp, f: &[f64], g: &[f64]) -> f64 {
    space.norm(&sub(f, g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn sp(n: usize, p: f64) -> SpaceLp {
        SpaceLp::new(n, p).unwrap()
    }

    /// Dense grid minimizer of λ ↦ ‖f − λg‖ on [lo, hi].
    fn grid_min(space: &SpaceLp, f: &[f64], g: &[f64], lo: f64, hi: f64, step: f64) -> (f64, f64) {
        let mut best = (lo, f64::INFINITY);
        let mut l = lo;
        while l <= hi {
            let v = space.norm(&f.iter().zip(g).map(|(a, b)| a - l * b).collect::<Vec<_>>());
            if v < best.1 {
                best = (l, v);
            }
            l += step;
        }
        best
    }

    #[test]
    fn line_search_examples() {
        let s = sp(2, 2.0);
        let (l, r) = line_search_1d(&s, &[1.0, 0.0], &[1.0, 0.0]).unwrap();
        assert_eq!((l, r), (1.0, 0.0));
        let (l, _) = line_search_1d(&s, &[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert_eq!(l, 0.0);
        assert!(line_search_1d(&s, &[1.0, 0.0], &[0.0, 0.0]).is_err());

        let s3 = sp(2, 3.0);
        let (l, _) = line_search_1d(&s3, &[1.0, 2.0], &[0.0, 1.0]).unwrap();
        let (lg, _) = grid_min(&s3, &[1.0, 2.0], &[0.0, 1.0], 1.5, 2.5, 1e-6);
        assert_abs_diff_eq!(l, lg, epsilon = 1e-5);
        assert_abs_diff_eq!(l, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn line_search_grid_oracle_general() {
        let s = sp(3, 3.0);
        let f = [0.3, -1.2, 0.7];
        let g = [0.5, 0.4, -0.9];
        let (l, r) = line_search_1d(&s, &f, &g).unwrap();
        let (lg, rg) = grid_min(&s, &f, &g, -3.0, 3.0, 1e-5);
        assert_abs_diff_eq!(l, lg, epsilon = 2e-5);
        assert!(r <= rg + 1e-12);
    }

    #[test]
    fn projection_exact_representation() {
        for p in [1.5, 2.0, 3.0] {
            let s = sp(3, p);
            let y1 = [1.0, 0.0, 1.0];
            let y2 = [0.0, 1.0, -1.0];
            let f: Vec<f64> = (0..3).map(|i| 0.4 * y1[i] - 1.3 * y2[i]).collect();
            let pr = chebyshev_project(&s, &f, &[&y1, &y2], &SolverOptions::default()).unwrap();
            assert!(pr.residual_norm <= 1e-9, "p={p}");
        }
    }

    #[test]
    fn projection_orthonormal_parseval() {
        let s = sp(3, 2.0);
        let y1 = [1.0, 0.0, 0.0];
        let y2 = [0.0, 0.6, 0.8];
        let f = [2.0, 1.0, -1.0];
        let pr = chebyshev_project(&s, &f, &[&y1, &y2], &SolverOptions::default()).unwrap();
        assert_abs_diff_eq!(pr.coefficients[0], 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(pr.coefficients[1], 0.6 - 0.8, epsilon = 1e-14);
    }

    #[test]
    fn projection_grid_oracle_p3() {
        let s = sp(4, 3.0);
        let f = [1.0, -0.5, 0.25, 2.0];
        let y1 = [0.5, 0.5, 0.5, 0.5];
        let y2 = [1.0, -1.0, 0.0, 0.3];
        let pr = chebyshev_project(&s, &f, &[&y1, &y2], &SolverOptions::default()).unwrap();
        assert!(pr.kkt_violation <= 1e-8);
        let mut best = f64::INFINITY;
        let (c1, c2) = (pr.coefficients[0], pr.coefficients[1]);
        let h = 1e-3;
        for a in -50..=50 {
            for b in -50..=50 {
                let (x, y) = (c1 + a as f64 * h, c2 + b as f64 * h);
                let r: Vec<f64> = (0..4).map(|i| f[i] - x * y1[i] - y * y2[i]).collect();
                best = best.min(s.norm(&r));
            }
        }
        assert!(pr.residual_norm <= best + 1e-6);
    }

    #[test]
    fn projection_drops_dependent_direction() {
        let s = sp(3, 3.0);
        let y1 = [1.0, 1.0, 0.0];
        let y2 = [2.0, 2.0, 0.0];
        let pr = chebyshev_project(&s, &[1.0, 0.0, 1.0], &[&y1, &y2], &SolverOptions::default()).unwrap();
        assert_eq!(pr.dropped, vec![1]);
        assert_eq!(pr.coefficients[1], 0.0);
    }

    #[test]
    fn free_relax_examples() {
        let s = sp(3, 2.0);
        let g = [1.0, 0.0, 0.0];
        let phi = [0.0, 1.0, 0.0];
        let f: Vec<f64> = (0..3).map(|i| 0.3 * g[i] + 0.7 * phi[i]).collect();
        let fr = free_relax(&s, &f, &g, &phi, &SolverOptions::default()).unwrap();
        assert_abs_diff_eq!(fr.w, 0.7, epsilon = 1e-14);
        assert_abs_diff_eq!(fr.lambda, 0.7, epsilon = 1e-14);
        assert!(fr.residual_norm <= 1e-14);

        let zero = [0.0; 3];
        let fr = free_relax(&s, &[1.0, 2.0, 3.0], &zero, &phi, &SolverOptions::default()).unwrap();
        let (l, r) = line_search_1d(&s, &[1.0, 2.0, 3.0], &phi).unwrap();
        assert_eq!((fr.lambda, fr.residual_norm), (l, r));
    }

    #[test]
    fn free_relax_matches_normal_equations() {
        let s = sp(4, 2.0);
        let f = [0.3, -1.0, 2.0, 0.5];
        let g = [1.0, 0.2, 0.1, -0.4];
        let phi = [0.1, 0.9, -0.3, 0.2];
        let fr = free_relax(&s, &f, &g, &phi, &SolverOptions::default()).unwrap();
        // Closed form 2×2 normal equations in (a, b) for aG + bφ.
        let (gg, gp, pp) = (linalg::dot(&g, &g), linalg::dot(&g, &phi), linalg::dot(&phi, &phi));
        let (fg, fp) = (linalg::dot(&f, &g), linalg::dot(&f, &phi));
        let det = gg * pp - gp * gp;
        let a = (fg * pp - fp * gp) / det;
        let b = (gg * fp - gp * fg) / det;
        assert_abs_diff_eq!(fr.w, 1.0 - a, epsilon = 1e-9);
        assert_abs_diff_eq!(fr.lambda, b, epsilon = 1e-9);
    }

    #[test]
    fn fixed_relax_examples() {
        let s = sp(3, 2.0);
        let g = [0.5, 0.5, 0.0];
        let phi = [0.0, 0.0, 1.0];
        let f = [1.0, -0.5, 0.25];
        let (l0, _) = fixed_relax(&s, &sub(&f, &g), &[0.0; 3], &phi, 0.0, &SolverOptions::default()).unwrap();
        let (l1, _) = line_search_1d(&s, &sub(&f, &g), &phi).unwrap();
        assert_eq!(l0, l1);
        let r = 0.3;
        let (l, _) = fixed_relax(&s, &f, &g, &phi, r, &SolverOptions::default()).unwrap();
        let shifted: Vec<f64> = (0..3).map(|i| f[i] - (1.0 - r) * g[i]).collect();
        assert_abs_diff_eq!(l, linalg::dot(&shifted, &phi), epsilon = 1e-12);
        assert!(fixed_relax(&s, &f, &g, &phi, 1.0, &SolverOptions::default()).is_err());
    }

    #[test]
    fn selection_examples() {
        let s = sp(3, 2.0);
        let d = Dictionary::canonical(&s);
        let (i, l, _) = x_greedy_select(&s, &[0.2, -0.7, 0.1], &d).unwrap();
        assert_eq!(i, 1);
        assert_abs_diff_eq!(l, -0.7, epsilon = 1e-15);

        let s2 = sp(2, 2.0);
        let d2 = Dictionary::canonical(&s2);
        let f = DualFunctional { coords: vec![0.2, -0.7] };
        assert_eq!(threshold_select(&f, &d2, 0.5), Some((1, -1)));
        assert_eq!(threshold_select(&f, &d2, 0.8), None);
    }

    #[test]
    fn x_greedy_grid_oracle_p3() {
        let s = sp(3, 3.0);
        let d = Dictionary::random_unit(&s, 6, 11);
        let f = [0.4, -1.1, 0.3];
        let (i, _, _) = x_greedy_select(&s, &f, &d).unwrap();
        let mut best = (0, f64::INFINITY);
        for (j, g) in d.elements().iter().enumerate() {
            let (_, v) = grid_min(&s, &f, g, -3.0, 3.0, 1e-4);
            if v < best.1 {
                best = (j, v);
            }
        }
        assert_eq!(i, best.0);
    }

    fn exponent() -> impl Strategy<Value = f64> {
        prop_oneof![Just(1.5), Just(2.0), Just(3.0), Just(4.0), 1.2f64..5.0]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn projection_is_biorthogonal_and_monotone(
            p in exponent(),
            f in prop::collection::vec(-2.0f64..2.0, 6),
            ys in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 6), 3),
        ) {
            let s = sp(6, p);
            let span: Vec<&[f64]> = ys.iter().map(|v| v.as_slice()).collect();
            let pr = chebyshev_project(&s, &f, &span, &SolverOptions::default()).unwrap();
            prop_assert!(pr.kkt_violation <= 1e-10 * s.norm(&f).max(1.0) || pr.residual_norm <= 1e-12);
            let sub2 = chebyshev_project(&s, &f, &span[..2], &SolverOptions::default()).unwrap();
            prop_assert!(pr.residual_norm <= sub2.residual_norm + 1e-9);
            if p == 2.0 {
                let ls = linalg::least_squares(&span, &f, 1e-10);
                prop_assert!((s.norm(&ls.residual) - pr.residual_norm).abs() <= 1e-9);
            }
        }

        #[test]
        fn line_search_never_increases(p in exponent(), f in prop::collection::vec(-2.0f64..2.0, 5), g in prop::collection::vec(-1.0f64..1.0, 5)) {
            let s = sp(5, p);
            prop_assume!(s.norm(&g) > 1e-3);
            let (_, r) = line_search_1d(&s, &f, &g).unwrap();
            prop_assert!(r <= s.norm(&f) + 1e-15);
        }

        #[test]
        fn free_beats_fixed(p in exponent(), f in prop::collection::vec(-2.0f64..2.0, 4), g in prop::collection::vec(-1.0f64..1.0, 4), phi in prop::collection::vec(-1.0f64..1.0, 4), r in 0.0f64..0.99) {
            let s = sp(4, p);
            prop_assume!(s.norm(&phi) > 1e-3);
            let opts = SolverOptions::default();
            let free = free_relax(&s, &f, &g, &phi, &opts).unwrap();
            let (_, fixed) = fixed_relax(&s, &f, &g, &phi, r, &opts).unwrap();
            prop_assert!(free.residual_norm <= fixed + 1e-9);
        }
    }
}

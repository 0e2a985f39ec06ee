//! Finite dictionaries of unit-norm elements.
//!
//! Besides storage and the standard generators this module evaluates
//! D-norms, performs weak greedy selection and computes the structural
//! constants used by Lebesgue-type inequalities: coherence, the RIP
//! parameter δ, the unconditionality constant U, the Nikol'skii constant C1
//! and the ℓ1-incoherence constant V.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{GreedyError, Result};
use crate::linalg::{self, Mat};
use crate::rng;
use crate::space::{DualFunctional, Element, SpaceLp};
use crate::steps::{self, SolverOptions};

/// Largest number of subsets any exhaustive computation may enumerate.
pub const SUBSET_GUARD: u128 = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieRule {
    /// First element reaching the weak threshold.
    LowestIndex,
    /// The maximizer itself (lowest index among equal maxima).
    ExactMax,
}

#[derive(Clone, Debug)]
pub struct Dictionary {
    space: SpaceLp,
    elements: Vec<Element>,
    functionals: Vec<DualFunctional>,
    label: String,
}

/// ‖F‖_D together with a maximizing signed element.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DNorm {
    pub value: f64,
    pub index: usize,
    pub sign: i8,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseTerm {
    pub index: usize,
    pub sign: i8,
    pub coefficient: f64,
}

/// f = Σ coefficient·sign·g_index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseRepresentation {
    pub terms: Vec<SparseTerm>,
    pub target: Element,
}

impl SparseRepresentation {
    pub fn coefficient_mass(&self) -> f64 {
        self.terms.iter().map(|t| t.coefficient).sum()
    }

    pub fn in_a1(&self) -> bool {
        self.coefficient_mass() <= 1.0 + 1e-12
    }
}

/// A constant obtained by exhaustive enumeration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantEstimate {
    pub value: f64,
    /// True when the inner problems were solved exactly (p = 2); otherwise
    /// the value is a lower estimate of the supremum from grid search plus
    /// local refinement.
    pub exact: bool,
    pub subsets: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructuralConstants {
    pub coherence: f64,
    pub rip_delta: Option<f64>,
    pub u: ConstantEstimate,
    pub c1: ConstantEstimate,
    pub v: ConstantEstimate,
    pub k: usize,
    pub d_depth: usize,
    pub r: f64,
    pub fingerprint: String,
}

impl Dictionary {
    /// Wraps unit-norm elements. Norms must lie in [1 − 1e-9, 1 + 1e-12].
    pub fn new(space: &SpaceLp, elements: Vec<Element>, label: impl Into<String>) -> Result<Self> {
        if elements.is_empty() {
            return Err(GreedyError::EmptyDictionary);
        }
        for (i, g) in elements.iter().enumerate() {
            space.check_dim(g)?;
            let ng = space.norm(g);
            if !(ng >= 1.0 - 1e-9 && ng <= 1.0 + 1e-12) {
                return Err(GreedyError::invalid(format!("element {i}"), format!("norm {ng} is not 1")));
            }
        }
        let functionals = elements.iter().map(|g| space.norming_functional_with_norm(g, space.norm(g))).collect();
        Ok(Dictionary { space: *space, elements, functionals, label: label.into() })
    }

    /// Normalizes every element first. Zero elements are rejected.
    pub fn from_unnormalized(space: &SpaceLp, elements: Vec<Element>, label: impl Into<String>) -> Result<Self> {
        let mut out = Vec::with_capacity(elements.len());
        for g in elements {
            space.check_dim(&g)?;
            let ng = space.norm(&g);
            if ng == 0.0 {
                return Err(GreedyError::ZeroVector);
            }
            out.push(g.iter().map(|v| v / ng).collect());
        }
        Dictionary::new(space, out, label)
    }

    pub fn canonical(space: &SpaceLp) -> Self {
        let elements = (0..space.dim)
            .map(|i| {
                let mut e = vec![0.0; space.dim];
                e[i] = 1.0;
                e
            })
            .collect();
        Dictionary::new(space, elements, "canonical").expect("canonical basis is valid")
    }

    /// `count` i.i.d. Gaussian vectors normalized in ℓ_p.
    pub fn random_unit(space: &SpaceLp, count: usize, seed: u64) -> Self {
        let mut r = rng::from_seed(seed);
        Self::random_unit_with(space, count, &mut r)
    }

    pub fn random_unit_with<R: Rng>(space: &SpaceLp, count: usize, r: &mut R) -> Self {
        let elements = (0..count.max(1))
            .map(|_| loop {
                let g: Vec<f64> = (0..space.dim).map(|_| StandardNormal.sample(r)).collect();
                if space.norm(&g) > 1e-8 {
                    break g;
                }
            })
            .collect();
        Dictionary::from_unnormalized(space, elements, format!("random_unit(seed-stream,{count})"))
            .expect("gaussian vectors are nonzero")
    }

    /// Near-identity dictionary g_i = normalize(e_i + eps·z_i) with Gaussian
    /// z_i; requires `count ≤ dim`. Small `eps` gives small coherence.
    pub fn coherent_perturbation<R: Rng>(space: &SpaceLp, count: usize, eps: f64, r: &mut R) -> Result<Self> {
        if count > space.dim || count == 0 {
            return Err(GreedyError::invalid("count", "need 1 <= count <= dim"));
        }
        let elements = (0..count)
            .map(|i| {
                let mut g: Vec<f64> = (0..space.dim).map(|_| { let z: f64 = StandardNormal.sample(r); eps * z }).collect();
                g[i] += 1.0;
                g
            })
            .collect();
        Dictionary::from_unnormalized(space, elements, format!("coherent({count},{eps})"))
    }

    /// Real trigonometric system 1, cos kx, sin kx (k = 1..=K) sampled at
    /// x_j = 2πj/n, each normalized in ℓ_p. Requires 2K < n.
    pub fn trig_grid(space: &SpaceLp, frequencies: usize) -> Result<Self> {
        let n = space.dim;
        if 2 * frequencies >= n {
            return Err(GreedyError::invalid("frequencies", format!("need 2K < n, got K={frequencies}, n={n}")));
        }
        let xs: Vec<f64> = (0..n).map(|j| 2.0 * std::f64::consts::PI * j as f64 / n as f64).collect();
        let mut elements = vec![vec![1.0; n]];
        for k in 1..=frequencies {
            elements.push(xs.iter().map(|x| (k as f64 * x).cos()).collect());
            elements.push(xs.iter().map(|x| (k as f64 * x).sin()).collect());
        }
        Dictionary::from_unnormalized(space, elements, format!("trig(K={frequencies})"))
    }

    /// Haar system on 2^levels points: the constant plus the Haar functions
    /// of levels 0..levels−1, each normalized in ℓ_p.
    pub fn haar_grid(space: &SpaceLp, levels: u32) -> Result<Self> {
        let n = space.dim;
        if levels > 30 || n != 1usize << levels {
            return Err(GreedyError::invalid("levels", format!("need dim = 2^levels, got dim={n}, levels={levels}")));
        }
        let mut elements = vec![vec![1.0; n]];
        for level in 0..levels {
            let blocks = 1usize << level;
            let width = n / blocks;
            for b in 0..blocks {
                let mut h = vec![0.0; n];
                for j in 0..width {
                    h[b * width + j] = if j < width / 2 { 1.0 } else { -1.0 };
                }
                elements.push(h);
            }
        }
        Dictionary::from_unnormalized(space, elements, format!("haar(levels={levels})"))
    }

    pub fn space(&self) -> &SpaceLp {
        &self.space
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn element(&self, i: usize) -> &[f64] {
        &self.elements[i]
    }

    /// Norming functional F_{g_i} of element i.
    pub fn functional(&self, i: usize) -> &DualFunctional {
        &self.functionals[i]
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// σ·g_i.
    pub fn signed(&self, index: usize, sign: i8) -> Element {
        let s = sign as f64;
        self.elements[index].iter().map(|v| s * v).collect()
    }

    /// The values F(g_i).
    pub fn values(&self, functional: &DualFunctional) -> Vec<f64> {
        self.elements.iter().map(|g| functional.eval(g)).collect()
    }

    /// ‖F‖_D = max_i |F(g_i)| with a maximizing (lowest) index and its sign.
    pub fn d_norm(&self, functional: &DualFunctional) -> DNorm {
        let mut best = DNorm { value: 0.0, index: 0, sign: 1 };
        for (i, v) in self.values(functional).into_iter().enumerate() {
            if v.abs() > best.value {
                best = DNorm { value: v.abs(), index: i, sign: if v < 0.0 { -1 } else { 1 } };
            }
        }
        best
    }

    /// ‖f‖_D := max_i |F_{g_i}(f)|, the seminorm built from the elements'
    /// own norming functionals.
    pub fn element_seminorm(&self, f: &[f64]) -> f64 {
        self.functionals.iter().map(|fg| fg.eval(f).abs()).fold(0.0, f64::max)
    }

    /// Weak greedy selection: lowest index with |F(g)| ≥ t‖F‖_D.
    pub fn select_weak(&self, functional: &DualFunctional, t: f64, tie: TieRule) -> Result<(usize, i8)> {
        if !(t > 0.0 && t <= 1.0) {
            return Err(GreedyError::invalid("weakness", format!("need t in (0,1], got {t}")));
        }
        let values = self.values(functional);
        let max = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if max == 0.0 {
            return Err(GreedyError::ZeroFunctional);
        }
        let threshold = if tie == TieRule::ExactMax || t == 1.0 { max } else { t * max };
        let i = values.iter().position(|v| v.abs() >= threshold).expect("maximum is attained");
        Ok((i, if values[i] < 0.0 { -1 } else { 1 }))
    }

    /// M(D) = max_{i≠j} |F_{g_i}(g_j)|; 0 for a single element.
    pub fn coherence(&self) -> f64 {
        let mut m: f64 = 0.0;
        for (i, fi) in self.functionals.iter().enumerate() {
            for (j, g) in self.elements.iter().enumerate() {
                if i != j {
                    m = m.max(fi.eval(g).abs());
                }
            }
        }
        m
    }

    /// δ of the restricted isometry property at the given depth (p = 2).
    pub fn rip_delta(&self, depth: usize) -> Result<f64> {
        if !self.space.is_hilbert() {
            return Err(GreedyError::RequiresHilbert { p: self.space.p });
        }
        let n = self.len();
        if depth == 0 || depth > n {
            return Err(GreedyError::invalid("depth", format!("need 1 <= depth <= {n}")));
        }
        guard(binom(n, depth))?;
        let mut delta: f64 = 0.0;
        for_each_combination(n, depth, |subset| {
            let gram = self.gram(subset);
            let (vals, _) = linalg::sym_eigen(&gram);
            delta = delta.max(1.0 - vals[0]).max(vals[depth - 1] - 1.0);
        });
        Ok(delta)
    }

    fn gram(&self, subset: &[usize]) -> Mat {
        let k = subset.len();
        let mut g = Mat::zeros(k, k);
        for a in 0..k {
            for b in a..k {
                let v = linalg::dot(&self.elements[subset[a]], &self.elements[subset[b]]);
                g[(a, b)] = v;
                g[(b, a)] = v;
            }
        }
        g
    }

    /// Smallest U with ‖f_A − Σ_Λ c_i g_i‖ ≥ U⁻¹‖f_A‖ for |A| ≤ K,
    /// A ∩ Λ = ∅, |A| + |Λ| ≤ D.
    pub fn unconditionality_constant(&self, k: usize, depth: usize) -> Result<ConstantEstimate> {
        Ok(self.constants_pass(k, depth, 0.0, Want { u: true, c1: false, v: false })?.u)
    }

    /// Smallest C1 with Σ_A |x_i| ≤ C1|A|^r‖f_A‖ for |A| ≤ K.
    pub fn nikolskii_constant(&self, k: usize, r: f64) -> Result<ConstantEstimate> {
        Ok(self.constants_pass(k, k, r, Want { u: false, c1: true, v: false })?.c1)
    }

    /// Smallest V with Σ_A |x_i| ≤ V|A|^r‖f_A − Σ_Λ c_i g_i‖.
    pub fn l1_incoherence_constant(&self, k: usize, depth: usize, r: f64) -> Result<ConstantEstimate> {
        Ok(self.constants_pass(k, depth, r, Want { u: false, c1: false, v: true })?.v)
    }

    /// All structural constants for one parameter set. U and C1 are
    /// cross-checked against every extremal point found for V, so
    /// V ≤ C1·U holds for the returned values at every p.
    pub fn structural_constants(&self, k: usize, depth: usize, r: f64) -> Result<StructuralConstants> {
        let pass = self.constants_pass(k, depth, r, Want { u: true, c1: true, v: true })?;
        let rip = if self.space.is_hilbert() && depth <= self.len() { Some(self.rip_delta(depth)?) } else { None };
        Ok(StructuralConstants {
            coherence: self.coherence(),
            rip_delta: rip,
            u: pass.u,
            c1: pass.c1,
            v: pass.v,
            k,
            d_depth: depth,
            r,
            fingerprint: self.fingerprint(),
        })
    }

    fn constants_pass(&self, k: usize, depth: usize, r: f64, want: Want) -> Result<Pass> {
        let n = self.len();
        if k == 0 || depth == 0 {
            return Err(GreedyError::invalid("k", "K and D must be positive"));
        }
        let a_max = k.min(depth).min(n);
        let mut count: u128 = 0;
        for a in 1..=a_max {
            let lam = (depth - a).min(n - a);
            if want.u || want.v {
                count += binom(n, a) * binom(n - a, lam);
            }
            if want.c1 {
                count += binom(n, a);
            }
        }
        guard(count)?;
        let exact = self.space.is_hilbert();
        let opts = SolverOptions::default();
        let mut u = 1.0f64;
        let mut c1 = 0.0f64;
        let mut v = 0.0f64;
        let mut subsets = 0u64;
        for a in 1..=a_max {
            let ar = (a as f64).powf(r);
            let lam = (depth - a).min(n - a);
            let mut err: Option<GreedyError> = None;
            for_each_combination(n, a, |aset| {
                if err.is_some() {
                    return;
                }
                let cols: Vec<&[f64]> = aset.iter().map(|&i| self.elements[i].as_slice()).collect();
                if want.c1 {
                    subsets += 1;
                    match self.min_on_l1_sphere(&cols, &[], &opts) {
                        Ok((m, _)) => c1 = c1.max(inverse(ar * m)),
                        Err(e) => err = Some(e),
                    }
                }
                if !(want.u || want.v) {
                    return;
                }
                let rest: Vec<usize> = (0..n).filter(|i| !aset.contains(i)).collect();
                for_each_combination(rest.len(), lam, |lpos| {
                    if err.is_some() {
                        return;
                    }
                    subsets += 1;
                    let lcols: Vec<&[f64]> = lpos.iter().map(|&j| self.elements[rest[j]].as_slice()).collect();
                    if want.u {
                        match self.max_ratio(&cols, &lcols, &opts) {
                            Ok(val) => u = u.max(val),
                            Err(e) => err = Some(e),
                        }
                    }
                    if want.v {
                        match self.min_on_l1_sphere(&cols, &lcols, &opts) {
                            Ok((dist, x)) => {
                                v = v.max(inverse(ar * dist));
                                // Cross-seed U and C1 with the extremal point.
                                let fa = combine(&cols, &x);
                                let nfa = self.space.norm(&fa);
                                if want.u && dist > 0.0 {
                                    u = u.max(nfa / dist);
                                }
                                if want.c1 {
                                    c1 = c1.max(inverse(ar * nfa));
                                }
                            }
                            Err(e) => err = Some(e),
                        }
                    }
                });
            });
            if let Some(e) = err {
                return Err(e);
            }
        }
        let est = |value| ConstantEstimate { value, exact, subsets };
        Ok(Pass { u: est(u), c1: est(c1), v: est(v) })
    }

    /// min over ‖x‖₁ = 1 of dist(Σ x_i a_i, span Λ), with a minimizer.
    fn min_on_l1_sphere(&self, cols: &[&[f64]], lam: &[&[f64]], opts: &SolverOptions) -> Result<(f64, Vec<f64>)> {
        let a = cols.len();
        let mut best = (f64::INFINITY, vec![0.0; a]);
        for pattern in 0..(1usize << (a - 1)) {
            let signs: Vec<f64> = (0..a).map(|i| if i > 0 && pattern >> (i - 1) & 1 == 1 { -1.0 } else { 1.0 }).collect();
            let signed: Vec<Element> = cols.iter().zip(&signs).map(|(c, s)| c.iter().map(|v| s * v).collect()).collect();
            let srefs: Vec<&[f64]> = signed.iter().map(|v| v.as_slice()).collect();
            let (val, y) = if self.space.is_hilbert() {
                match simplex_qp_exact(&srefs, lam, opts) {
                    Some(res) => res,
                    None => self.simplex_descent(&srefs, lam, opts)?,
                }
            } else {
                self.simplex_descent(&srefs, lam, opts)?
            };
            if val < best.0 {
                best = (val, y.iter().zip(&signs).map(|(y, s)| y * s).collect());
            }
        }
        Ok(best)
    }

    /// Grid start plus projected-gradient descent of the convex map
    /// y ↦ dist(Σ y_i a_i, span Λ) on the probability simplex.
    fn simplex_descent(&self, cols: &[&[f64]], lam: &[&[f64]], opts: &SolverOptions) -> Result<(f64, Vec<f64>)> {
        let a = cols.len();
        let eval = |y: &[f64]| -> Result<(f64, Vec<f64>)> {
            let fa = combine(cols, y);
            let pr = steps::chebyshev_project(&self.space, &fa, lam, opts)?;
            let grad = if pr.residual_norm > 0.0 {
                let fr = self.space.norming_functional_with_norm(&pr.residual, pr.residual_norm);
                cols.iter().map(|c| fr.eval(c)).collect()
            } else {
                vec![0.0; a]
            };
            Ok((pr.residual_norm, grad))
        };
        let mut best_y = vec![1.0 / a as f64; a];
        let mut best = eval(&best_y)?;
        for y in simplex_grid(a, 8) {
            let e = eval(&y)?;
            if e.0 < best.0 {
                best = e;
                best_y = y;
            }
        }
        let mut step = 0.5;
        for _ in 0..300 {
            let (val, ref grad) = best;
            let mut improved = false;
            while step > 1e-14 {
                let trial: Vec<f64> = best_y.iter().zip(grad).map(|(y, g)| y - step * g).collect();
                let trial = project_simplex(&trial);
                let e = eval(&trial)?;
                if e.0 < val - 1e-15 * val.max(1e-300) {
                    best = e;
                    best_y = trial;
                    improved = true;
                    step *= 2.0;
                    break;
                }
                step *= 0.5;
            }
            if !improved {
                break;
            }
        }
        Ok((best.0, best_y))
    }

    /// sup over coefficients of ‖f_A‖ / dist(f_A, span Λ).
    fn max_ratio(&self, cols: &[&[f64]], lam: &[&[f64]], opts: &SolverOptions) -> Result<f64> {
        if lam.is_empty() {
            return Ok(1.0);
        }
        if self.space.is_hilbert() {
            return Ok(generalized_rayleigh_max(cols, lam, opts));
        }
        let a = cols.len();
        let ratio = |x: &[f64]| -> Result<f64> {
            let fa = combine(cols, x);
            let nfa = self.space.norm(&fa);
            if nfa == 0.0 {
                return Ok(0.0);
            }
            let pr = steps::chebyshev_project(&self.space, &fa, lam, opts)?;
            Ok(if pr.residual_norm <= 1e-14 * nfa { f64::INFINITY } else { nfa / pr.residual_norm })
        };
        let mut best = 1.0f64;
        let mut best_x = vec![0.0; a];
        for pattern in 0..(1usize << (a - 1)) {
            let signs: Vec<f64> = (0..a).map(|i| if i > 0 && pattern >> (i - 1) & 1 == 1 { -1.0 } else { 1.0 }).collect();
            for y in simplex_grid(a, 8) {
                let x: Vec<f64> = y.iter().zip(&signs).map(|(y, s)| y * s).collect();
                let val = ratio(&x)?;
                if val > best {
                    best = val;
                    best_x = x;
                }
            }
        }
        if !best.is_finite() || best_x.iter().all(|v| *v == 0.0) {
            return Ok(best);
        }
        // Pattern search: move mass between coordinate pairs.
        let mut step = 1.0 / 16.0;
        while step > 1e-7 {
            let mut improved = false;
            for i in 0..a {
                for j in 0..a {
                    if i == j {
                        continue;
                    }
                    for dir in [1.0, -1.0] {
                        let mut x = best_x.clone();
                        x[i] += dir * step;
                        x[j] -= dir * step;
                        let val = ratio(&x)?;
                        if val > best {
                            best = val;
                            best_x = x;
                            improved = true;
                        }
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        Ok(best)
    }

    /// Stable hex digest of p, dimension and element bits.
    pub fn fingerprint(&self) -> String {
        let mut bytes = Vec::with_capacity(16 + 8 * self.len() * self.space.dim);
        bytes.extend_from_slice(&self.space.p.to_bits().to_le_bytes());
        bytes.extend_from_slice(&(self.space.dim as u64).to_le_bytes());
        for g in &self.elements {
            for v in g {
                bytes.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        format!("{:016x}", rng::fnv1a(&bytes))
    }

    /// Random element of A_1(D): k distinct indices, random signs,
    /// Dirichlet(1,…,1) weights.
    pub fn sample_a1(&self, sparsity: usize, seed: u64) -> Result<(Element, SparseRepresentation)> {
        self.sample_a1_with(sparsity, &mut rng::from_seed(seed))
    }

    pub fn sample_a1_with<R: Rng>(&self, sparsity: usize, r: &mut R) -> Result<(Element, SparseRepresentation)> {
        if sparsity == 0 || sparsity > self.len() {
            return Err(GreedyError::invalid("sparsity", format!("need 1 <= k <= {}", self.len())));
        }
        let idx = sample(r, self.len(), sparsity).into_vec();
        let weights: Vec<f64> = (0..sparsity).map(|_| Exp1.sample(r)).collect();
        let total: f64 = weights.iter().sum();
        let mut f = vec![0.0; self.space.dim];
        let mut terms = Vec::with_capacity(sparsity);
        for (i, w) in idx.into_iter().zip(weights) {
            let sign: i8 = if r.gen::<bool>() { 1 } else { -1 };
            let coefficient = w / total;
            linalg::axpy(sign as f64 * coefficient, &self.elements[i], &mut f);
            terms.push(SparseTerm { index: i, sign, coefficient });
        }
        Ok((f.clone(), SparseRepresentation { terms, target: f }))
    }

    /// Σ c_i g_i over a list of (index, coefficient) pairs.
    pub fn synthesize(&self, coefficients: &[(usize, f64)]) -> Element {
        let mut f = vec![0.0; self.space.dim];
        for &(i, c) in coefficients {
            linalg::axpy(c, &self.elements[i], &mut f);
        }
        f
    }

    /// GREEDYDICT v1 text.
    pub fn to_text(&self) -> String {
        let mut s = format!("GREEDYDICT v1 n={} p={} N={}\n", self.space.dim, self.space.p, self.len());
        for g in &self.elements {
            let row: Vec<String> = g.iter().map(|v| format!("{v:.16e}")).collect();
            let _ = writeln!(s, "{}", row.join(" "));
        }
        s
    }

    /// Parses GREEDYDICT v1 text. Rows within 1e-6 of unit norm are
    /// rescaled to norm 1; rows further off are an error.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(GreedyError::Parse { line: 1, message: "empty input".into() })?;
        let fields = parse_header(header, "GREEDYDICT", &["n", "p", "N"], 1)?;
        let n: usize = parse_field(&fields[0], 1)?;
        let p: f64 = parse_field(&fields[1], 1)?;
        let count: usize = parse_field(&fields[2], 1)?;
        let space = SpaceLp::new(n, p)?;
        let mut elements = Vec::with_capacity(count);
        for (lineno, line) in lines {
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|t| parse_field(t, lineno + 1))
                .collect::<Result<_>>()?;
            if row.len() != n {
                return Err(GreedyError::Parse { line: lineno + 1, message: format!("expected {n} values, found {}", row.len()) });
            }
            let nr = space.norm(&row);
            if (nr - 1.0).abs() > 1e-6 {
                return Err(GreedyError::Parse { line: lineno + 1, message: format!("row norm {nr} is not 1") });
            }
            let row = if (nr - 1.0).abs() > 1e-12 { row.iter().map(|v| v / nr).collect() } else { row };
            elements.push(row);
        }
        if elements.len() != count {
            return Err(GreedyError::Parse { line: 1, message: format!("header says N={count}, found {} rows", elements.len()) });
        }
        Dictionary::new(&space, elements, "file")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Dictionary::from_text(&std::fs::read_to_string(path)?)
    }
}

#[derive(Clone, Copy)]
struct Want {
    u: bool,
    c1: bool,
    v: bool,
}

struct Pass {
    u: ConstantEstimate,
    c1: ConstantEstimate,
    v: ConstantEstimate,
}

fn inverse(x: f64) -> f64 {
    if x > 0.0 {
        1.0 / x
    } else {
        f64::INFINITY
    }
}

fn combine(cols: &[&[f64]], x: &[f64]) -> Element {
    let mut f = vec![0.0; cols[0].len()];
    for (c, xi) in cols.iter().zip(x) {
        linalg::axpy(*xi, c, &mut f);
    }
    f
}

/// Exact min of ‖Σ y_i a_i − P_Λ(·)‖₂ over the probability simplex by
/// enumerating faces. `None` if some face system is singular.
fn simplex_qp_exact(cols: &[&[f64]], lam: &[&[f64]], opts: &SolverOptions) -> Option<(f64, Vec<f64>)> {
    let a = cols.len();
    let res: Vec<Vec<f64>> = cols
        .iter()
        .map(|c| if lam.is_empty() { c.to_vec() } else { linalg::least_squares(lam, c, opts.drop_tol).residual })
        .collect();
    let mut q = Mat::zeros(a, a);
    for i in 0..a {
        for j in 0..a {
            q[(i, j)] = linalg::dot(&res[i], &res[j]);
        }
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    for support in 1..(1usize << a) {
        let idx: Vec<usize> = (0..a).filter(|i| support >> i & 1 == 1).collect();
        let k = idx.len();
        let mut sub = Mat::zeros(k, k);
        for (r, &i) in idx.iter().enumerate() {
            for (c, &j) in idx.iter().enumerate() {
                sub[(r, c)] = q[(i, j)];
            }
        }
        let scale = (0..k).map(|i| sub[(i, i)]).fold(0.0, f64::max);
        let z = linalg::solve_partial_pivot(&sub, &vec![1.0; k], 1e-13 * scale.max(1e-300))?;
        let s: f64 = z.iter().sum();
        if s <= 0.0 || z.iter().any(|v| *v < 0.0) {
            continue;
        }
        let mut y = vec![0.0; a];
        for (r, &i) in idx.iter().enumerate() {
            y[i] = z[r] / s;
        }
        let val = linalg::norm2(&combine(&res.iter().map(|v| v.as_slice()).collect::<Vec<_>>(), &y));
        if best.as_ref().map_or(true, |b| val < b.0) {
            best = Some((val, y));
        }
    }
    best
}

/// max_x ‖G_A x‖² / ‖(I − P_Λ)G_A x‖² via a Cholesky-reduced eigenproblem.
fn generalized_rayleigh_max(cols: &[&[f64]], lam: &[&[f64]], opts: &SolverOptions) -> f64 {
    let a = cols.len();
    let res: Vec<Vec<f64>> = cols.iter().map(|c| linalg::least_squares(lam, c, opts.drop_tol).residual).collect();
    let mut m = Mat::zeros(a, a);
    let mut b = Mat::zeros(a, a);
    for i in 0..a {
        for j in 0..a {
            m[(i, j)] = linalg::dot(cols[i], cols[j]);
            b[(i, j)] = linalg::dot(&res[i], &res[j]);
        }
    }
    let Some(l) = linalg::cholesky(&b) else {
        return f64::INFINITY;
    };
    // C = L⁻¹ M L⁻ᵀ.
    let mut x = Mat::zeros(a, a);
    for j in 0..a {
        let col = linalg::forward_substitute(&l, &m.col(j));
        for i in 0..a {
            x[(i, j)] = col[i];
        }
    }
    let xt = x.transpose();
    let mut c = Mat::zeros(a, a);
    for j in 0..a {
        let col = linalg::forward_substitute(&l, &xt.col(j));
        for i in 0..a {
            c[(i, j)] = col[i];
        }
    }
    for i in 0..a {
        for j in i + 1..a {
            let s = 0.5 * (c[(i, j)] + c[(j, i)]);
            c[(i, j)] = s;
            c[(j, i)] = s;
        }
    }
    let (vals, _) = linalg::sym_eigen(&c);
    vals[a - 1].max(0.0).sqrt().max(1.0)
}

/// Points of the probability simplex in dimension `a` with coordinates in
/// multiples of 1/h.
fn simplex_grid(a: usize, h: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    let mut cur = vec![0usize; a];
    fn rec(pos: usize, left: usize, cur: &mut Vec<usize>, h: usize, out: &mut Vec<Vec<f64>>) {
        let a = cur.len();
        if pos == a - 1 {
            cur[pos] = left;
            out.push(cur.iter().map(|&k| k as f64 / h as f64).collect());
            return;
        }
        for k in 0..=left {
            cur[pos] = k;
            rec(pos + 1, left - k, cur, h, out);
        }
    }
    rec(0, h, &mut cur, h, &mut out);
    out
}

/// Euclidean projection onto the probability simplex.
fn project_simplex(y: &[f64]) -> Vec<f64> {
    let mut u = y.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, ui) in u.iter().enumerate() {
        cum += ui;
        let t = (cum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    y.iter().map(|v| (v - theta).max(0.0)).collect()
}

pub(crate) fn binom(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut r: u128 = 1;
    for i in 0..k {
        r = r * (n - i) as u128 / (i + 1) as u128;
    }
    r
}

pub(crate) fn guard(count: u128) -> Result<()> {
    if count > SUBSET_GUARD {
        return Err(GreedyError::GuardExceeded { count, limit: SUBSET_GUARD });
    }
    Ok(())
}

/// Calls `f` on every k-subset of 0..n in lexicographic order.
pub(crate) fn for_each_combination(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    if k > n {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        let mut i = k;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if idx[i] != i + n - k {
                break;
            }
            if i == 0 {
                return;
            }
        }
        if idx[i] == i + n - k {
            return;
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

pub(crate) fn parse_header(line: &str, magic: &str, keys: &[&str], lineno: usize) -> Result<Vec<String>> {
    let mut parts = line.split_whitespace();
    if parts.next() != Some(magic) || parts.next() != Some("v1") {
        return Err(GreedyError::Parse { line: lineno, message: format!("expected `{magic} v1` header") });
    }
    let mut out = Vec::with_capacity(keys.len());
    for key in keys {
        let tok = parts.next().ok_or(GreedyError::Parse { line: lineno, message: format!("missing `{key}=`") })?;
        let value = tok
            .strip_prefix(key)
            .and_then(|r| r.strip_prefix('='))
            .ok_or(GreedyError::Parse { line: lineno, message: format!("expected `{key}=`, found `{tok}`") })?;
        out.push(value.to_string());
    }
    Ok(out)
}

pub(crate) fn parse_field<T: std::str::FromStr>(tok: &str, lineno: usize) -> Result<T> {
    tok.parse().map_err(|_| GreedyError::Parse { line: lineno, message: format!("cannot parse `{tok}`") })
}

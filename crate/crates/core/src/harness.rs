//! Experiment orchestration: bound sweeps, convergence probes, Lebesgue-type
//! experiments, recovery tables, noise studies and exponent fits.
//!
//! Replications run in parallel and are reduced in replication order, so a
//! report depends only on the experiment and its seed.

use std::path::PathBuf;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algorithms::{self, Algorithm, Perturbation, RunOptions, StopReason, Trace};
use crate::dictionary::{binom, Dictionary};
use crate::error::{GreedyError, Result};
use crate::oracle;
use crate::rng::{self, StreamRng};
use crate::space::{Element, SmoothnessParams, SpaceLp};
use crate::steps::SolverOptions;

pub const SCHEMA_VERSION: u32 = 1;

/// Oracle comparisons are skipped above this dictionary size.
pub const ORACLE_MAX_N: usize = 12;
pub const ORACLE_SLACK: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceSpec {
    pub dim: usize,
    pub p: f64,
}

impl SpaceSpec {
    pub fn build(&self) -> Result<SpaceLp> {
        SpaceLp::new(self.dim, self.p)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DictionarySpec {
    Canonical,
    RandomUnit { count: usize },
    /// normalize(e_i + eps·z_i), count ≤ dim.
    Coherent { count: usize, eps: f64 },
    Trig { frequencies: usize },
    Haar { levels: u32 },
    File { path: PathBuf },
}

impl DictionarySpec {
    pub fn build(&self, space: &SpaceLp, r: &mut StreamRng) -> Result<Dictionary> {
        match self {
            DictionarySpec::Canonical => Ok(Dictionary::canonical(space)),
            DictionarySpec::RandomUnit { count } => {
                if *count == 0 {
                    return Err(GreedyError::invalid("count", "must be positive"));
                }
                Ok(Dictionary::random_unit_with(space, *count, r))
            }
            DictionarySpec::Coherent { count, eps } => Dictionary::coherent_perturbation(space, *count, *eps, r),
            DictionarySpec::Trig { frequencies } => Dictionary::trig_grid(space, *frequencies),
            DictionarySpec::Haar { levels } => Dictionary::haar_grid(space, *levels),
            DictionarySpec::File { path } => {
                let d = Dictionary::load(path)?;
                if d.space() != space {
                    return Err(GreedyError::invalid("dictionary", format!("file space {:?} differs from the experiment space", d.space())));
                }
                Ok(d)
            }
        }
    }

    /// Deterministic dictionaries are built once; random ones per replication.
    fn is_random(&self) -> bool {
        matches!(self, DictionarySpec::RandomUnit { .. } | DictionarySpec::Coherent { .. })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    /// Random element of A_1(D) with `sparsity` terms.
    A1 { sparsity: usize },
    /// Gaussian combination of `sparsity` distinct elements, scaled to norm 1.
    Sparse { sparsity: usize },
    /// amplitude·(A_1 sample) plus noise of norm exactly `epsilon`.
    Noisy { sparsity: usize, amplitude: f64, epsilon: f64 },
    /// Gaussian vector scaled to norm 1.
    Gaussian,
}

/// A generated signal with the constants the bounds need.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub f: Element,
    /// A in f^ε/A ∈ A_1(D); 0 when not applicable.
    pub amplitude: f64,
    pub epsilon: f64,
}

impl DataSpec {
    pub fn sample(&self, dict: &Dictionary, r: &mut StreamRng) -> Result<Instance> {
        let space = *dict.space();
        match *self {
            DataSpec::A1 { sparsity } => {
                let (f, _) = dict.sample_a1_with(sparsity, r)?;
                Ok(Instance { f, amplitude: 1.0, epsilon: 0.0 })
            }
            DataSpec::Sparse { sparsity } => {
                if sparsity == 0 || sparsity > dict.len() {
                    return Err(GreedyError::invalid("sparsity", format!("need 1 <= S <= {}", dict.len())));
                }
                let f = sparse_signal(dict, sparsity, r);
                Ok(Instance { f, amplitude: 0.0, epsilon: 0.0 })
            }
            DataSpec::Noisy { sparsity, amplitude, epsilon } => {
                if !(amplitude > 0.0 && amplitude.is_finite()) {
                    return Err(GreedyError::invalid("amplitude", "must be positive"));
                }
                if !(epsilon >= 0.0 && epsilon.is_finite()) {
                    return Err(GreedyError::invalid("epsilon", "must be non-negative"));
                }
                let (clean, _) = dict.sample_a1_with(sparsity, r)?;
                let noise = gaussian_direction(&space, r);
                let f = clean.iter().zip(&noise).map(|(c, e)| amplitude * c + epsilon * e).collect();
                Ok(Instance { f, amplitude, epsilon })
            }
            DataSpec::Gaussian => Ok(Instance { f: gaussian_direction(&space, r), amplitude: 0.0, epsilon: 0.0 }),
        }
    }
}

fn gaussian_direction(space: &SpaceLp, r: &mut StreamRng) -> Element {
    loop {
        let g: Vec<f64> = (0..space.dim).map(|_| StandardNormal.sample(r)).collect();
        let n = space.norm(&g);
        if n > 1e-8 {
            return g.iter().map(|v| v / n).collect();
        }
    }
}

/// Σ a_i g_i over `s` distinct random elements, a_i Gaussian, scaled to norm 1.
pub fn sparse_signal(dict: &Dictionary, s: usize, r: &mut StreamRng) -> Element {
    loop {
        let idx = sample(r, dict.len(), s).into_vec();
        let coefs: Vec<(usize, f64)> = idx.into_iter().map(|i| (i, StandardNormal.sample(r))).collect();
        let f = dict.synthesize(&coefs);
        let n = dict.space().norm(&f);
        if n > 1e-8 {
            return f.iter().map(|v| v / n).collect();
        }
    }
}

/// Bounds checked against residual norms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundSpec {
    /// 4(2γ)^{1/q}·A·(1+Σ_{k≤m} t_k^{q'})^{−1/q'}.
    WbgaRate,
    /// A·(1+Σ_{k≤m} t_k²)^{−t_m/(2(2+t_m))}; p = 2, non-increasing weakness.
    WgaRate,
    /// max{2ε, 4(2γ)^{1/q}(A+ε)(1+Σ t_k^{q'})^{−1/q'}}.
    NoisyWbga,
    /// C·m^{−exponent} with an unknown constant C.
    PowerLaw { exponent: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    /// Explicit constant: ratio ≤ 1 + tol.
    Explicit,
    /// Existential constant: the fitted constant must not grow.
    Existential,
    /// Reported, never fails.
    Descriptive,
}

impl BoundSpec {
    pub fn label(&self) -> String {
        match self {
            BoundSpec::WbgaRate => "4(2γ)^(1/q)·A·(1+Σt_k^q')^(-1/q')".into(),
            BoundSpec::WgaRate => "A·(1+Σt_k²)^(-t_m/(2(2+t_m)))".into(),
            BoundSpec::NoisyWbga => "max{2ε, 4(2γ)^(1/q)(A+ε)(1+Σt_k^q')^(-1/q')}".into(),
            BoundSpec::PowerLaw { exponent } => format!("C·m^(-{exponent})"),
        }
    }

    pub fn kind(&self) -> CheckKind {
        match self {
            BoundSpec::PowerLaw { .. } => CheckKind::Existential,
            _ => CheckKind::Explicit,
        }
    }

    /// Bound values for m = 0..=m_max (index 0 is unused by the checks).
    pub fn values(&self, alg: &Algorithm, params: SmoothnessParams, inst: &Instance, m_max: usize, p: f64) -> Result<Vec<f64>> {
        let t = |k: usize| alg.weakness(k).unwrap_or(1.0);
        let qd = params.q_dual();
        let c = wbga_constant(params);
        let mut out = vec![f64::INFINITY; m_max + 1];
        match *self {
            BoundSpec::WbgaRate | BoundSpec::NoisyWbga => {
                let mut sum = 0.0;
                for (m, o) in out.iter_mut().enumerate().skip(1) {
                    sum += t(m).powf(qd);
                    let rate = (1.0 + sum).powf(-1.0 / qd);
                    *o = if *self == BoundSpec::WbgaRate {
                        c * inst.amplitude * rate
                    } else {
                        (2.0 * inst.epsilon).max(c * (inst.amplitude + inst.epsilon) * rate)
                    };
                }
            }
            BoundSpec::WgaRate => {
                if p != 2.0 {
                    return Err(GreedyError::RequiresHilbert { p });
                }
                let mut sum = 0.0;
                for (m, o) in out.iter_mut().enumerate().skip(1) {
                    let tm = t(m);
                    if m > 1 && tm > t(m - 1) {
                        return Err(GreedyError::invalid("bounds", "the WGA bound needs a non-increasing weakness sequence"));
                    }
                    sum += tm * tm;
                    *o = inst.amplitude * (1.0 + sum).powf(-tm / (2.0 * (2.0 + tm)));
                }
            }
            BoundSpec::PowerLaw { exponent } => {
                for (m, o) in out.iter_mut().enumerate().skip(1) {
                    *o = (m as f64).powf(-exponent);
                }
            }
        }
        Ok(out)
    }
}

/// 4(2γ)^{1/q}.
pub fn wbga_constant(params: SmoothnessParams) -> f64 {
    4.0 * (2.0 * params.gamma).powf(1.0 / params.q)
}

/// 4q(2γ)^q(2/(q−1))^{1/q'}, the constant for the approximate algorithms.
pub fn approximate_constant(params: SmoothnessParams) -> f64 {
    let q = params.q;
    4.0 * q * (2.0 * params.gamma).powf(q) * (2.0 / (q - 1.0)).powf(1.0 / params.q_dual())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundOutcome {
    pub bound: String,
    pub kind: CheckKind,
    pub max_ratio: f64,
    pub argmax: usize,
    pub first_violation: Option<usize>,
    /// Existential bounds: the fitted constant and the largest later growth factor.
    pub fitted_constant: Option<f64>,
    pub growth: Option<f64>,
}

impl BoundOutcome {
    fn passed(&self, growth_tol: f64) -> bool {
        match self.kind {
            CheckKind::Explicit => self.first_violation.is_none(),
            CheckKind::Existential => self.growth.map_or(true, |g| g <= growth_tol),
            CheckKind::Descriptive => true,
        }
    }
}

/// Compares residual norms (index m) with bound values (index m) for m ≥ 1.
pub fn evaluate_bound(residuals: &[f64], bound: &[f64], kind: CheckKind, label: String, tol: f64) -> BoundOutcome {
    let mut out = BoundOutcome { bound: label, kind, max_ratio: 0.0, argmax: 0, first_violation: None, fitted_constant: None, growth: None };
    let mut ratios = Vec::with_capacity(residuals.len());
    for m in 1..residuals.len().min(bound.len()) {
        let r = residuals[m] / bound[m];
        if r > out.max_ratio {
            out.max_ratio = r;
            out.argmax = m;
        }
        if kind == CheckKind::Explicit && out.first_violation.is_none() && r > 1.0 + tol {
            out.first_violation = Some(m);
        }
        ratios.push(r);
    }
    if kind == CheckKind::Existential {
        let (c, g) = stable_constant(&ratios, 64);
        out.fitted_constant = c;
        out.growth = g;
    }
    out
}

/// Fitted constant C = max of `ratios` (indexed from m = 1) over
/// m ∈ [from, M] with M = len/2, and the growth max over (M, len] divided
/// by C. Short sequences fit on [1, M].
pub fn stable_constant(ratios: &[f64], from: usize) -> (Option<f64>, Option<f64>) {
    let len = ratios.len();
    if len < 2 {
        return (None, None);
    }
    let half = len / 2;
    let lo = if from <= half { from.max(1) } else { 1 };
    let c = ratios[lo - 1..half].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let tail = ratios[half..].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let growth = if c > 0.0 { tail / c } else if tail > 0.0 { f64::INFINITY } else { 1.0 };
    (Some(c), Some(growth))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExponentFit {
    Fitted { slope: f64, stderr: f64, intercept: f64, points: usize },
    /// A zero residual inside the window.
    ExactRecovery { at: usize },
}

/// Least-squares slope of log values[m] against log m over m ∈ [lo, hi].
/// `values` is indexed from m = 0.
pub fn fit_exponent_values(values: &[f64], lo: usize, hi: usize) -> Result<ExponentFit> {
    let lo = lo.max(1);
    let hi = hi.min(values.len().saturating_sub(1));
    if hi < lo || hi - lo + 1 < 8 {
        return Err(GreedyError::invalid("window", format!("need at least 8 points, got window [{lo}, {hi}]")));
    }
    if let Some(m) = (lo..=hi).find(|&m| values[m] <= 0.0) {
        return Ok(ExponentFit::ExactRecovery { at: m });
    }
    let xs: Vec<f64> = (lo..=hi).map(|m| (m as f64).ln()).collect();
    let ys: Vec<f64> = (lo..=hi).map(|m| values[m].ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let stderr = (sse / (n - 2.0) / sxx).sqrt();
    Ok(ExponentFit::Fitted { slope, stderr, intercept, points: xs.len() })
}

/// Exponent fit over m ∈ [window.0, window.1] of a trace.
pub fn fit_exponent(trace: &Trace, window: (usize, usize)) -> Result<ExponentFit> {
    fit_exponent_values(&trace.residual_norms(), window.0, window.1)
}

/// The default window: the last half of the iterations.
pub fn last_half(iterations: usize) -> (usize, usize) {
    (iterations.div_ceil(2).max(1), iterations)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub algorithm: String,
    /// Grid parameter of the sweep this run belongs to (ε, δ, …), if any.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parameter: Option<f64>,
    pub iterations: usize,
    pub stop_reason: Option<StopReason>,
    pub initial_norm: f64,
    pub final_residual: f64,
    pub bounds: Vec<BoundOutcome>,
    pub exponent: Option<ExponentFit>,
    /// min over checked m of ‖f_m‖ − σ_m.
    pub oracle_gap: Option<f64>,
    pub error: Option<String>,
}

impl ReplicationRecord {
    fn failed(replication: usize, algorithm: &str, parameter: Option<f64>, err: &GreedyError) -> Self {
        ReplicationRecord {
            replication,
            algorithm: algorithm.to_string(),
            parameter,
            iterations: 0,
            stop_reason: None,
            initial_norm: f64::NAN,
            final_residual: f64::NAN,
            bounds: vec![],
            exponent: None,
            oracle_gap: None,
            error: Some(err.to_string()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    /// The bound or rule this check evaluates.
    pub bound: String,
    pub kind: CheckKind,
    pub passed: bool,
    pub worst: f64,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub experiment: String,
    pub operation: String,
    pub seed: u64,
    pub replications: Vec<ReplicationRecord>,
    pub checks: Vec<Check>,
    pub tables: Vec<Table>,
    /// Replications that ended in an execution error.
    pub errors: usize,
    /// All explicit and existential checks passed.
    pub passed: bool,
}

impl Report {
    fn new(experiment: &str, operation: &str, seed: u64) -> Self {
        Report {
            schema_version: SCHEMA_VERSION,
            experiment: experiment.to_string(),
            operation: operation.to_string(),
            seed,
            replications: vec![],
            checks: vec![],
            tables: vec![],
            errors: 0,
            passed: true,
        }
    }

    fn finish(mut self) -> Self {
        self.errors = self.replications.iter().filter(|r| r.error.is_some()).count();
        self.passed = self.checks.iter().all(|c| c.passed || c.kind == CheckKind::Descriptive);
        self
    }

    /// Some explicit-constant check failed.
    pub fn hard_failure(&self) -> bool {
        self.checks.iter().any(|c| c.kind == CheckKind::Explicit && !c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledTrace {
    pub replication: usize,
    pub algorithm: String,
    pub parameter: Option<f64>,
    pub trace: Trace,
}

impl LabeledTrace {
    /// File stem for the trace CSV.
    pub fn stem(&self) -> String {
        let mut s = format!("rep{:04}_{}", self.replication, self.algorithm.to_lowercase());
        if let Some(p) = self.parameter {
            s.push_str(&format!("_{p:e}"));
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub report: Report,
    pub traces: Vec<LabeledTrace>,
}

fn one() -> usize {
    1
}

/// A rate sweep or convergence probe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Experiment {
    pub id: String,
    pub algorithms: Vec<Algorithm>,
    pub space: SpaceSpec,
    pub dictionary: DictionarySpec,
    pub data: DataSpec,
    pub m_max: usize,
    #[serde(default = "one")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub bounds: Vec<BoundSpec>,
    /// Compare residuals with σ_m for m ≤ oracle_m (needs N ≤ 12).
    #[serde(default)]
    pub oracle_m: usize,
    /// Keep residual vectors in the traces.
    #[serde(default)]
    pub record_vectors: bool,
    #[serde(default)]
    pub solver: SolverOptions,
}

fn check_common(id: &str, m_max: usize, replications: usize) -> Result<()> {
    if id.is_empty() || id.contains(['/', '\\']) {
        return Err(GreedyError::invalid("id", "must be a non-empty name without path separators"));
    }
    if m_max == 0 || m_max > 100_000 {
        return Err(GreedyError::invalid("m_max", "must be in 1..=100000"));
    }
    if replications == 0 || replications > 100_000 {
        return Err(GreedyError::invalid("replications", "must be in 1..=100000"));
    }
    Ok(())
}

impl Experiment {
    pub fn validate(&self) -> Result<()> {
        check_common(&self.id, self.m_max, self.replications)?;
        if self.algorithms.is_empty() {
            return Err(GreedyError::invalid("algorithms", "at least one algorithm is required"));
        }
        for a in &self.algorithms {
            a.validate()?;
        }
        self.space.build()?;
        if self.oracle_m > 0 {
            if let DictionarySpec::RandomUnit { count } | DictionarySpec::Coherent { count, .. } = self.dictionary {
                if count > ORACLE_MAX_N {
                    return Err(GreedyError::invalid("oracle_m", format!("oracle comparisons need N <= {ORACLE_MAX_N}")));
                }
            }
        }
        for b in &self.bounds {
            if let BoundSpec::PowerLaw { exponent } = b {
                if !(exponent.is_finite() && *exponent >= 0.0) {
                    return Err(GreedyError::invalid("exponent", "must be finite and non-negative"));
                }
            }
        }
        Ok(())
    }

    fn options(&self) -> RunOptions {
        RunOptions { record_vectors: self.record_vectors, solver: self.solver.clone(), ..RunOptions::default() }
    }
}

/// Dictionary and signal for replication `rep`.
fn replicate(
    id: &str,
    seed: u64,
    rep: usize,
    space: &SpaceLp,
    dict_spec: &DictionarySpec,
    fixed: Option<&Dictionary>,
    data: &DataSpec,
) -> Result<(Dictionary, Instance)> {
    let dict = match fixed {
        Some(d) => d.clone(),
        None => dict_spec.build(space, &mut rng::stream(seed, &format!("{id}/dictionary"), rep as u64))?,
    };
    let inst = data.sample(&dict, &mut rng::stream(seed, &format!("{id}/data"), rep as u64))?;
    Ok((dict, inst))
}

fn fixed_dictionary(space: &SpaceLp, spec: &DictionarySpec, seed: u64, id: &str) -> Result<Option<Dictionary>> {
    if spec.is_random() {
        Ok(None)
    } else {
        Ok(Some(spec.build(space, &mut rng::stream(seed, &format!("{id}/dictionary"), 0))?))
    }
}

/// σ_1..σ_m for the replication, if the dictionary is small enough.
fn sigmas(space: &SpaceLp, dict: &Dictionary, f: &[f64], m: usize) -> Result<Option<Vec<f64>>> {
    if m == 0 || dict.len() > ORACLE_MAX_N {
        return Ok(None);
    }
    let mut out = vec![space.norm(f)];
    for k in 1..=m.min(dict.len()) {
        out.push(oracle::best_m_term(space, dict, f, k)?.value);
    }
    Ok(Some(out))
}

/// min over 1 ≤ m ≤ min(len, iterations) of ‖f_m‖ − σ_m.
fn oracle_gap(trace: &Trace, sigma: &[f64]) -> Option<f64> {
    let res = trace.residual_norms();
    (1..sigma.len().min(res.len())).map(|m| res[m] - sigma[m]).reduce(f64::min)
}

struct RunSummary {
    record: ReplicationRecord,
    trace: Trace,
}

fn summarize(
    rep: usize,
    alg: &Algorithm,
    parameter: Option<f64>,
    trace: Trace,
    inst: &Instance,
    bounds: &[BoundSpec],
    space: &SpaceLp,
    sigma: Option<&[f64]>,
) -> Result<RunSummary> {
    let res = trace.residual_norms();
    let params = space.smoothness_params();
    let mut outcomes = Vec::with_capacity(bounds.len());
    for b in bounds {
        let values = b.values(alg, params, inst, res.len().saturating_sub(1), space.p)?;
        outcomes.push(evaluate_bound(&res, &values, b.kind(), b.label(), 1e-9));
    }
    let iterations = trace.iterations();
    let exponent = fit_exponent(&trace, last_half(iterations)).ok();
    let record = ReplicationRecord {
        replication: rep,
        algorithm: alg.name().to_string(),
        parameter,
        iterations,
        stop_reason: Some(trace.stop_reason),
        initial_norm: res[0],
        final_residual: trace.final_residual_norm(),
        bounds: outcomes,
        exponent,
        oracle_gap: sigma.and_then(|s| oracle_gap(&trace, s)),
        error: None,
    };
    Ok(RunSummary { record, trace })
}

/// One replication of a sweep: all algorithms on the same instance.
fn sweep_replication(exp: &Experiment, space: &SpaceLp, fixed: Option<&Dictionary>, rep: usize) -> Vec<std::result::Result<RunSummary, ReplicationRecord>> {
    let opts = exp.options();
    let setup = replicate(&exp.id, exp.seed, rep, space, &exp.dictionary, fixed, &exp.data)
        .and_then(|(d, inst)| Ok((sigmas(space, &d, &inst.f, exp.oracle_m)?, d, inst)));
    let (sigma, dict, inst) = match setup {
        Ok(s) => s,
        Err(e) => return exp.algorithms.iter().map(|a| Err(ReplicationRecord::failed(rep, a.name(), None, &e))).collect(),
    };
    exp.algorithms
        .iter()
        .map(|alg| {
            algorithms::run(alg, &dict, &inst.f, exp.m_max, &opts)
                .and_then(|tr| summarize(rep, alg, None, tr, &inst, &exp.bounds, space, sigma.as_deref()))
                .map_err(|e| ReplicationRecord::failed(rep, alg.name(), None, &e))
        })
        .collect()
}

fn collect(report: &mut Report, traces: &mut Vec<LabeledTrace>, results: Vec<std::result::Result<RunSummary, ReplicationRecord>>) {
    for r in results {
        match r {
            Ok(s) => {
                traces.push(LabeledTrace {
                    replication: s.record.replication,
                    algorithm: s.record.algorithm.clone(),
                    parameter: s.record.parameter,
                    trace: s.trace,
                });
                report.replications.push(s.record);
            }
            Err(rec) => report.replications.push(rec),
        }
    }
}

/// One check per bound (and per oracle comparison) over all replications.
fn bound_checks(report: &mut Report, bounds: &[BoundSpec]) {
    for (b_idx, b) in bounds.iter().enumerate() {
        let kind = b.kind();
        let mut worst: f64 = 0.0;
        let mut failures = 0;
        let mut runs = 0;
        for r in &report.replications {
            let Some(o) = r.bounds.get(b_idx) else { continue };
            runs += 1;
            let w = if kind == CheckKind::Existential { o.growth.unwrap_or(0.0) } else { o.max_ratio };
            worst = worst.max(w);
            if !o.passed(1.05) {
                failures += 1;
            }
        }
        let what = if kind == CheckKind::Existential { "largest dyadic-window growth" } else { "largest ratio" };
        report.checks.push(Check {
            name: format!("bound:{}", b.label()),
            bound: b.label(),
            kind,
            passed: failures == 0 && runs > 0,
            worst,
            detail: format!("{failures} of {runs} runs failed; {what} {worst:.6e}"),
        });
    }
    let gaps: Vec<f64> = report.replications.iter().filter_map(|r| r.oracle_gap).collect();
    if !gaps.is_empty() {
        let worst = gaps.iter().copied().fold(f64::INFINITY, f64::min);
        report.checks.push(Check {
            name: "oracle_dominance".into(),
            bound: format!("‖f_m‖ ≥ σ_m − {ORACLE_SLACK:e}"),
            kind: CheckKind::Explicit,
            passed: worst >= -ORACLE_SLACK,
            worst,
            detail: format!("{} runs compared; smallest gap {worst:.3e}", gaps.len()),
        });
    }
}

fn error_check(report: &mut Report) {
    let errors: Vec<&ReplicationRecord> = report.replications.iter().filter(|r| r.error.is_some()).collect();
    if !errors.is_empty() {
        report.checks.push(Check {
            name: "execution".into(),
            bound: "runs complete without error".into(),
            kind: CheckKind::Explicit,
            passed: false,
            worst: errors.len() as f64,
            detail: format!("first error: {}", errors[0].error.as_deref().unwrap_or_default()),
        });
    }
}

/// Runs every algorithm on every replication and checks the bounds.
pub fn rate_sweep(exp: &Experiment) -> Result<Outcome> {
    exp.validate()?;
    let space = exp.space.build()?;
    let fixed = fixed_dictionary(&space, &exp.dictionary, exp.seed, &exp.id)?;
    let per_rep: Vec<_> = (0..exp.replications).into_par_iter().map(|rep| sweep_replication(exp, &space, fixed.as_ref(), rep)).collect();
    let mut report = Report::new(&exp.id, "rate_sweep", exp.seed);
    let mut traces = Vec::new();
    for results in per_rep {
        collect(&mut report, &mut traces, results);
    }
    bound_checks(&mut report, &exp.bounds);
    let slopes: Vec<f64> = report
        .replications
        .iter()
        .filter_map(|r| match r.exponent {
            Some(ExponentFit::Fitted { slope, .. }) => Some(slope),
            _ => None,
        })
        .collect();
    if !slopes.is_empty() {
        let mean = slopes.iter().sum::<f64>() / slopes.len() as f64;
        report.checks.push(Check {
            name: "fitted_exponent".into(),
            bound: "least-squares slope of log‖f_m‖ against log m, last half of iterations".into(),
            kind: CheckKind::Descriptive,
            passed: true,
            worst: slopes.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            detail: format!("{} fits, mean slope {mean:.4}", slopes.len()),
        });
    }
    error_check(&mut report);
    Ok(Outcome { report: report.finish(), traces })
}

/// Terminal residuals for weakness schedules; descriptive only.
pub fn convergence_probe(exp: &Experiment) -> Result<Outcome> {
    check_common(&exp.id, exp.m_max, exp.replications)?;
    if exp.algorithms.is_empty() {
        return Err(GreedyError::invalid("algorithms", "at least one algorithm is required"));
    }
    let space = exp.space.build()?;
    let fixed = fixed_dictionary(&space, &exp.dictionary, exp.seed, &exp.id)?;
    let opts = exp.options();
    let per_rep: Vec<Vec<std::result::Result<RunSummary, ReplicationRecord>>> = (0..exp.replications)
        .into_par_iter()
        .map(|rep| {
            let (dict, inst) = match replicate(&exp.id, exp.seed, rep, &space, &exp.dictionary, fixed.as_ref(), &exp.data) {
                Ok(x) => x,
                Err(e) => return exp.algorithms.iter().map(|a| Err(ReplicationRecord::failed(rep, a.name(), None, &e))).collect(),
            };
            exp.algorithms
                .iter()
                .map(|alg| {
                    if let Some(rec) = zero_weakness(alg, rep, &inst, &space) {
                        return Err(rec);
                    }
                    algorithms::run(alg, &dict, &inst.f, exp.m_max, &opts)
                        .and_then(|tr| summarize(rep, alg, None, tr, &inst, &[], &space, None))
                        .map_err(|e| ReplicationRecord::failed(rep, alg.name(), None, &e))
                })
                .collect()
        })
        .collect();
    let mut report = Report::new(&exp.id, "convergence_probe", exp.seed);
    let mut traces = Vec::new();
    for results in per_rep {
        collect(&mut report, &mut traces, results);
    }
    let mut rows = Vec::new();
    for (a_idx, alg) in exp.algorithms.iter().enumerate() {
        let recs: Vec<&ReplicationRecord> = report.replications.iter().skip(a_idx).step_by(exp.algorithms.len()).collect();
        let stalled = recs.iter().filter(|r| r.stop_reason == Some(StopReason::Stalled) || r.error.as_deref().is_some_and(|e| e.contains("stalled"))).count();
        let ratios: Vec<f64> = recs.iter().filter(|r| r.error.is_none()).map(|r| r.final_residual / r.initial_norm.max(1e-300)).collect();
        let reached = ratios.iter().filter(|&&x| x < 0.1).count();
        let worst = ratios.iter().copied().fold(0.0, f64::max);
        let monotone = traces.iter().filter(|t| t.algorithm == alg.name()).all(|t| t.trace.is_monotone(1e-12));
        rows.push(vec![a_idx as f64, recs.len() as f64, reached as f64, stalled as f64, worst]);
        report.checks.push(Check {
            name: format!("probe:{a_idx}:{}", alg.name()),
            bound: "terminal ‖f_m‖/‖f‖ < 0.1".into(),
            kind: CheckKind::Descriptive,
            passed: true,
            worst,
            detail: format!("{reached}/{} reached 0.1‖f‖; {stalled} stalled; monotone: {monotone}", recs.len()),
        });
    }
    report.tables.push(Table {
        name: "terminal_residuals".into(),
        columns: vec!["algorithm".into(), "runs".into(), "reached_tenth".into(), "stalled".into(), "worst_ratio".into()],
        rows,
    });
    Ok(Outcome { report: report.finish(), traces })
}

/// A schedule that is zero from the start never moves; report it as stalled.
fn zero_weakness(alg: &Algorithm, rep: usize, inst: &Instance, space: &SpaceLp) -> Option<ReplicationRecord> {
    if alg.weakness(1) == Some(0.0) {
        let n = space.norm(&inst.f);
        return Some(ReplicationRecord {
            replication: rep,
            algorithm: alg.name().to_string(),
            parameter: None,
            iterations: 0,
            stop_reason: Some(StopReason::Stalled),
            initial_norm: n,
            final_residual: n,
            bounds: vec![],
            exponent: None,
            oracle_gap: None,
            error: Some("stalled: weakness is identically zero".into()),
        });
    }
    None
}

/// DGART/CGAT iteration counts over a grid of thresholds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerminationSweep {
    pub id: String,
    pub space: SpaceSpec,
    pub dictionary: DictionarySpec,
    pub data: DataSpec,
    pub deltas: Vec<f64>,
    pub m_max: usize,
    #[serde(default = "one")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub oracle_m: usize,
}

/// Runs DGART and CGAT for each δ. Each must stop with ‖f_m‖ ≤ δA when
/// f/A ∈ A_1 (δ‖f‖ for other data), and
/// c_δ = mean m_δ / (δ^{−q'} ln(1/δ)) at the smallest δ may exceed the
/// largest c over the other thresholds by at most a factor 2.
pub fn termination_sweep(exp: &TerminationSweep) -> Result<Outcome> {
    check_common(&exp.id, exp.m_max, exp.replications)?;
    if exp.deltas.len() < 2 || exp.deltas.iter().any(|d| !(*d > 0.0 && *d < 1.0)) {
        return Err(GreedyError::invalid("deltas", "need at least two thresholds in (0,1)"));
    }
    let space = exp.space.build()?;
    let fixed = fixed_dictionary(&space, &exp.dictionary, exp.seed, &exp.id)?;
    let opts = RunOptions { record_vectors: false, ..RunOptions::default() };
    let algs = |d: f64| [Algorithm::Dgart { delta: d }, Algorithm::Cgat { delta: d }];
    type RepResults = (Vec<std::result::Result<RunSummary, ReplicationRecord>>, Option<f64>);
    let per_rep: Vec<RepResults> = (0..exp.replications)
        .into_par_iter()
        .map(|rep| {
            let setup = replicate(&exp.id, exp.seed, rep, &space, &exp.dictionary, fixed.as_ref(), &exp.data)
                .and_then(|(d, inst)| Ok((sigmas(&space, &d, &inst.f, exp.oracle_m)?, d, inst)));
            // f/A ∈ A_1 gives the absolute target δA; otherwise δ‖f‖.
            let scale = setup.as_ref().ok().map(|(_, _, inst)| {
                if inst.amplitude > 0.0 && inst.epsilon == 0.0 { inst.amplitude } else { space.norm(&inst.f) }
            });
            let mut out = Vec::new();
            for &delta in &exp.deltas {
                for alg in algs(delta) {
                    out.push(match &setup {
                        Ok((sigma, dict, inst)) => algorithms::run(&alg, dict, &inst.f, exp.m_max, &opts)
                            .and_then(|tr| summarize(rep, &alg, Some(delta), tr, inst, &[], &space, sigma.as_deref()))
                            .map_err(|e| ReplicationRecord::failed(rep, alg.name(), Some(delta), &e)),
                        Err(e) => Err(ReplicationRecord::failed(rep, alg.name(), Some(delta), e)),
                    });
                }
            }
            (out, scale)
        })
        .collect();
    let mut report = Report::new(&exp.id, "termination_sweep", exp.seed);
    let mut traces = Vec::new();
    let mut scales = Vec::with_capacity(per_rep.len());
    for (results, scale) in per_rep {
        scales.push(scale);
        collect(&mut report, &mut traces, results);
    }
    let qd = space.smoothness_params().q_dual();
    let mut rows = Vec::new();
    for name in ["DGART", "CGAT"] {
        let mut cs = Vec::new();
        let mut unmet = 0;
        for &delta in &exp.deltas {
            let recs: Vec<&ReplicationRecord> = report.replications.iter().filter(|r| r.algorithm == name && r.parameter == Some(delta) && r.error.is_none()).collect();
            unmet += recs.iter().filter(|r| scales[r.replication].map_or(true, |a| r.final_residual > delta * a)).count();
            let mean = recs.iter().map(|r| r.iterations as f64).sum::<f64>() / recs.len().max(1) as f64;
            let c = mean / (delta.powf(-qd) * (1.0 / delta).ln());
            rows.push(vec![if name == "DGART" { 0.0 } else { 1.0 }, delta, mean, c]);
            cs.push((delta, c));
        }
        report.checks.push(Check {
            name: format!("stops_below_delta:{name}"),
            bound: "‖f_m‖ ≤ δA at termination (A = ‖f‖ outside scaled A_1)".into(),
            kind: CheckKind::Explicit,
            passed: unmet == 0,
            worst: unmet as f64,
            detail: format!("{unmet} runs ended above δA"),
        });
        cs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (smallest, rest) = cs.split_first().expect("two thresholds");
        let reference = rest.iter().map(|x| x.1).fold(0.0, f64::max);
        let ratio = smallest.1 / reference.max(1e-300);
        report.checks.push(Check {
            name: format!("iteration_trend:{name}"),
            bound: "c_δ = mean m_δ/(δ^(-q')ln(1/δ)) stable within 2×".into(),
            kind: CheckKind::Existential,
            passed: ratio <= 2.0,
            worst: ratio,
            detail: format!("c at δ={} is {:.4e}, largest elsewhere {:.4e}", smallest.0, smallest.1, reference),
        });
    }
    report.tables.push(Table {
        name: "iteration_counts".into(),
        columns: vec!["algorithm (0 = DGART, 1 = CGAT)".into(), "delta".into(), "mean_iterations".into(), "c_delta".into()],
        rows,
    });
    bound_checks(&mut report, &[]);
    error_check(&mut report);
    Ok(Outcome { report: report.finish(), traces })
}

/// Lebesgue-type experiment: WCGA on K-sparse signals plus noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LebesgueExperiment {
    pub id: String,
    pub space: SpaceSpec,
    pub dictionary: DictionarySpec,
    pub sparsity: usize,
    /// Norm of the perturbation f − f₀.
    pub epsilon: f64,
    #[serde(default = "unit")]
    pub weakness: f64,
    /// Iteration budgets S = ⌈c·K⌉ for c in the grid.
    pub grid: Vec<f64>,
    /// Exponent r in the exponential-phase rate exp(−c(m−k)/K^{rq'}).
    #[serde(default)]
    pub r: f64,
    #[serde(default = "one")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
}

fn unit() -> f64 {
    1.0
}

/// Runs WCGA(t) for ⌈c·K⌉ iterations per grid value, compares ‖f_S‖ with
/// σ_K(f) (oracle, when N ≤ 12) and with ε, records the structural
/// constants of the dictionary, and fits the exponential-phase rate.
pub fn lebesgue_experiment(exp: &LebesgueExperiment) -> Result<Outcome> {
    check_common(&exp.id, 1, exp.replications)?;
    if exp.grid.is_empty() || exp.grid.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
        return Err(GreedyError::invalid("grid", "need positive iteration multipliers"));
    }
    if !(exp.epsilon >= 0.0 && exp.epsilon.is_finite()) {
        return Err(GreedyError::invalid("epsilon", "must be non-negative"));
    }
    let alg = Algorithm::Wcga { weakness: algorithms::Schedule::constant(exp.weakness) };
    alg.validate()?;
    let space = exp.space.build()?;
    let k = exp.sparsity;
    let budgets: Vec<usize> = exp.grid.iter().map(|c| (c * k as f64).ceil() as usize).collect();
    let m_max = budgets.iter().copied().max().unwrap_or(1).max(1);
    check_common(&exp.id, m_max, exp.replications)?;
    let fixed = fixed_dictionary(&space, &exp.dictionary, exp.seed, &exp.id)?;
    let qd = space.smoothness_params().q_dual();
    let opts = RunOptions { record_vectors: false, ..RunOptions::default() };
    struct Rep {
        summary: std::result::Result<RunSummary, ReplicationRecord>,
        sigma_k: Option<f64>,
        constants: Option<crate::dictionary::StructuralConstants>,
        rate: Option<f64>,
    }
    let reps: Vec<Rep> = (0..exp.replications)
        .into_par_iter()
        .map(|rep| {
            let run = || -> Result<(RunSummary, Option<f64>, Option<crate::dictionary::StructuralConstants>, Option<f64>)> {
                let dict = match &fixed {
                    Some(d) => d.clone(),
                    None => exp.dictionary.build(&space, &mut rng::stream(exp.seed, &format!("{}/dictionary", exp.id), rep as u64))?,
                };
                if k == 0 || k > dict.len() {
                    return Err(GreedyError::invalid("sparsity", format!("need 1 <= K <= {}", dict.len())));
                }
                let mut r = rng::stream(exp.seed, &format!("{}/data", exp.id), rep as u64);
                let f0 = sparse_signal(&dict, k, &mut r);
                let noise = gaussian_direction(&space, &mut r);
                let f: Element = f0.iter().zip(&noise).map(|(a, e)| a + exp.epsilon * e).collect();
                let sigma = sigmas(&space, &dict, &f, if dict.len() <= ORACLE_MAX_N && binom(dict.len(), k) <= 1_000_000 { k } else { 0 })?;
                let sigma_k = sigma.as_ref().map(|s| s[k.min(s.len() - 1)]);
                let constants = if dict.len() <= ORACLE_MAX_N { dict.structural_constants(k, k, 1.0).ok() } else { None };
                let trace = algorithms::run(&alg, &dict, &f, m_max, &opts)?;
                let rate = exponential_rate(&trace.residual_norms(), exp.epsilon, (k as f64).powf(exp.r * qd));
                let inst = Instance { f, amplitude: 0.0, epsilon: exp.epsilon };
                let s = summarize(rep, &alg, None, trace, &inst, &[], &space, sigma.as_deref())?;
                Ok((s, sigma_k, constants, rate))
            };
            match run() {
                Ok((s, sigma_k, constants, rate)) => Rep { summary: Ok(s), sigma_k, constants, rate },
                Err(e) => Rep { summary: Err(ReplicationRecord::failed(rep, alg.name(), None, &e)), sigma_k: None, constants: None, rate: None },
            }
        })
        .collect();
    let mut report = Report::new(&exp.id, "lebesgue_experiment", exp.seed);
    let mut traces = Vec::new();
    let mut rows = Vec::new();
    let mut sigma_ks = Vec::new();
    let mut rates = Vec::new();
    let mut constants_rows = Vec::new();
    for r in reps {
        sigma_ks.push(r.sigma_k);
        if let Some(c) = r.rate {
            rates.push(c);
        }
        if let Some(c) = r.constants {
            constants_rows.push(vec![c.u.value, c.c1.value, c.v.value]);
        }
        collect(&mut report, &mut traces, vec![r.summary]);
    }
    let mut exact_ok = true;
    for (g, &budget) in exp.grid.iter().zip(&budgets) {
        let mut c_sigma: f64 = 0.0;
        let mut c_eps: f64 = 0.0;
        for (t, sk) in traces.iter().zip(&sigma_ks) {
            let res = t.trace.residual_norms();
            let value = res[budget.min(res.len() - 1)];
            if let Some(s) = sk {
                c_sigma = c_sigma.max(if *s > 1e-14 { value / s } else if value <= 1e-9 { 0.0 } else { f64::INFINITY });
            }
            if exp.epsilon > 0.0 {
                c_eps = c_eps.max(value / exp.epsilon);
            } else if value > 1e-9 && budget >= k {
                exact_ok = false;
            }
        }
        rows.push(vec![*g, budget as f64, c_sigma, c_eps]);
    }
    report.tables.push(Table {
        name: "observed_constants".into(),
        columns: vec!["c".into(), "iterations".into(), "max ‖f_S‖/σ_K".into(), "max ‖f_S‖/ε".into()],
        rows: rows.clone(),
    });
    if !constants_rows.is_empty() {
        report.tables.push(Table { name: "structural_constants".into(), columns: vec!["U".into(), "C1".into(), "V".into()], rows: constants_rows });
    }
    let smallest = rows.iter().map(|r| r[2]).filter(|v| v.is_finite()).fold(f64::INFINITY, f64::min);
    report.checks.push(Check {
        name: "lebesgue_constant".into(),
        bound: "‖f_S‖ ≤ C·σ_K, S = ⌈cK⌉".into(),
        kind: CheckKind::Descriptive,
        passed: true,
        worst: smallest,
        detail: format!("smallest observed C over the grid {smallest:.4e}"),
    });
    if exp.epsilon == 0.0 {
        report.checks.push(Check {
            name: "exact_recovery".into(),
            bound: "‖f_S‖ ≤ 1e-9 for S ≥ K, ε = 0, orthonormal or incoherent dictionary".into(),
            kind: CheckKind::Descriptive,
            passed: exact_ok,
            worst: if exact_ok { 0.0 } else { 1.0 },
            detail: format!("exact recovery {}", if exact_ok { "observed" } else { "not observed" }),
        });
    }
    if !rates.is_empty() {
        let min = rates.iter().copied().fold(f64::INFINITY, f64::min);
        report.checks.push(Check {
            name: "exponential_phase".into(),
            bound: "‖f_m‖ ≤ ‖f_k‖exp(−c(m−k)/K^(rq')) + 2ε with c > 0".into(),
            kind: CheckKind::Descriptive,
            passed: min > 0.0,
            worst: min,
            detail: format!("smallest fitted c over {} runs: {min:.4e}", rates.len()),
        });
    }
    bound_checks(&mut report, &[]);
    error_check(&mut report);
    Ok(Outcome { report: report.finish(), traces })
}

/// Largest c with ‖f_m‖ ≤ ‖f_k‖exp(−c(m−k)/scale) + 2ε for all k < m while
/// ‖f_m‖ > 2ε; `None` when no pair constrains c.
pub fn exponential_rate(res: &[f64], eps: f64, scale: f64) -> Option<f64> {
    let mut c = f64::INFINITY;
    for m in 1..res.len() {
        let excess = res[m] - 2.0 * eps;
        if excess <= 0.0 {
            continue;
        }
        for k in 0..m {
            if res[k] > 0.0 {
                c = c.min(-(excess / res[k]).ln() * scale / (m - k) as f64);
            }
        }
    }
    c.is_finite().then_some(c)
}

/// Exact recovery and Lebesgue constants for QOGA/WQOGA on coherent dictionaries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecoveryExperiment {
    pub id: String,
    pub dim: usize,
    /// Exponents cycled over trials.
    pub p_values: Vec<f64>,
    /// Dictionary size for the recovery trials.
    pub count: usize,
    /// Accepted coherence range [lo, hi].
    pub coherence: [f64; 2],
    pub t_values: Vec<f64>,
    /// Dictionaries drawn for the recovery table.
    pub trials: usize,
    /// Instances for the D-seminorm Lebesgue check (N = lebesgue_count).
    #[serde(default)]
    pub lebesgue_trials: usize,
    #[serde(default = "twelve")]
    pub lebesgue_count: usize,
    #[serde(default)]
    pub seed: u64,
}

fn twelve() -> usize {
    12
}

pub const LEBESGUE_CONSTANT: f64 = 13.5;
pub const RECOVERY_TOL: f64 = 1e-8;

/// Largest integer S with S < (t/(1+t))(1+1/M).
pub fn recovery_threshold(t: f64, coherence: f64) -> usize {
    if coherence <= 0.0 {
        return usize::MAX;
    }
    let x = t / (1.0 + t) * (1.0 + 1.0 / coherence);
    (x.ceil() as usize).saturating_sub(1)
}

/// A coherent dictionary with M(D) in `range`, by rejection over the
/// perturbation size.
pub fn coherent_in_range(space: &SpaceLp, count: usize, range: [f64; 2], r: &mut StreamRng) -> Result<(Dictionary, f64)> {
    for _ in 0..500 {
        let eps = (r.gen_range((1e-4f64).ln()..(0.5f64).ln())).exp();
        let d = Dictionary::coherent_perturbation(space, count, eps, r)?;
        let m = d.coherence();
        if m >= range[0] && m <= range[1] {
            return Ok((d, m));
        }
    }
    Err(GreedyError::Hypothesis(format!("no dictionary with coherence in [{}, {}] after 500 draws", range[0], range[1])))
}

fn qoga_for(t: f64) -> Algorithm {
    if t == 1.0 {
        Algorithm::Qoga
    } else {
        Algorithm::Wqoga { t }
    }
}

pub fn recovery_table(exp: &RecoveryExperiment) -> Result<Outcome> {
    check_common(&exp.id, 1, exp.trials.max(1))?;
    if exp.p_values.is_empty() || exp.t_values.is_empty() {
        return Err(GreedyError::invalid("p_values", "need at least one exponent and one weakness value"));
    }
    for &t in &exp.t_values {
        if !(t > 0.0 && t <= 1.0) {
            return Err(GreedyError::invalid("t_values", format!("weakness {t} is outside (0,1]")));
        }
    }
    let [lo, hi] = exp.coherence;
    if !(lo > 0.0 && lo <= hi && hi < 1.0) {
        return Err(GreedyError::invalid("coherence", "need 0 < lo <= hi < 1"));
    }
    let spaces: Vec<SpaceLp> = exp.p_values.iter().map(|&p| SpaceLp::new(exp.dim, p)).collect::<Result<_>>()?;
    let opts = RunOptions { record_vectors: false, ..RunOptions::default() };
    // (t, S, M, success, residual) per recovery run.
    type Cell = (f64, usize, f64, bool, f64);
    let trials: Vec<Result<(Vec<Cell>, Vec<LabeledTrace>)>> = (0..exp.trials)
        .into_par_iter()
        .map(|trial| {
            let space = &spaces[trial % spaces.len()];
            let mut r = rng::stream(exp.seed, &format!("{}/recovery", exp.id), trial as u64);
            let (dict, m) = coherent_in_range(space, exp.count, exp.coherence, &mut r)?;
            let mut cells = Vec::new();
            let mut traces = Vec::new();
            for &t in &exp.t_values {
                let alg = qoga_for(t);
                for s in 1..=recovery_threshold(t, m).min(dict.len()) {
                    let f = sparse_signal(&dict, s, &mut r);
                    let trace = algorithms::run(&alg, &dict, &f, s, &opts)?;
                    let res = trace.final_residual_norm();
                    let ok = res <= RECOVERY_TOL && trace.iterations() <= s;
                    cells.push((t, s, m, ok, res));
                    traces.push(LabeledTrace { replication: trial, algorithm: alg.name().to_string(), parameter: Some(s as f64), trace });
                }
            }
            Ok((cells, traces))
        })
        .collect();
    let mut report = Report::new(&exp.id, "recovery_table", exp.seed);
    let mut traces = Vec::new();
    let mut cells: Vec<Cell> = Vec::new();
    for (trial, res) in trials.into_iter().enumerate() {
        match res {
            Ok((c, t)) => {
                cells.extend(c);
                traces.extend(t);
            }
            Err(e) => report.replications.push(ReplicationRecord::failed(trial, "QOGA", None, &e)),
        }
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for &t in &exp.t_values {
        let max_s = cells.iter().filter(|c| c.0 == t).map(|c| c.1).max().unwrap_or(0);
        for s in 1..=max_s {
            let sel: Vec<&Cell> = cells.iter().filter(|c| c.0 == t && c.1 == s).collect();
            let ok = sel.iter().filter(|c| c.3).count();
            let m_min = sel.iter().map(|c| c.2).fold(f64::INFINITY, f64::min);
            let m_max = sel.iter().map(|c| c.2).fold(0.0, f64::max);
            rows.push(vec![t, s as f64, sel.len() as f64, ok as f64, m_min, m_max]);
        }
    }
    let failures = cells.iter().filter(|c| !c.3).count();
    let worst = cells.iter().map(|c| c.4).fold(0.0, f64::max);
    report.checks.push(Check {
        name: "exact_recovery".into(),
        bound: "‖f_S‖ ≤ 1e-8 for S < (t/(1+t))(1+1/M)".into(),
        kind: CheckKind::Explicit,
        passed: failures == 0 && !cells.is_empty(),
        worst,
        detail: format!("{} of {} recovery runs failed; largest residual {worst:.3e}", failures, cells.len()),
    });
    report.tables.push(Table {
        name: "recovery".into(),
        columns: vec!["t".into(), "S".into(), "runs".into(), "recovered".into(), "min_M".into(), "max_M".into()],
        rows,
    });
    if exp.lebesgue_trials > 0 {
        lebesgue_seminorm_trials(exp, &spaces, &mut report, &mut traces);
    }
    error_check(&mut report);
    Ok(Outcome { report: report.finish(), traces })
}

/// ‖f_m‖_D ≤ 13.5·σ_m(f)_D for m ≤ 1/(3M), plus oracle dominance in the
/// space norm for m ≤ 4.
fn lebesgue_seminorm_trials(exp: &RecoveryExperiment, spaces: &[SpaceLp], report: &mut Report, traces: &mut Vec<LabeledTrace>) {
    let opts = RunOptions::default();
    let runs: Vec<std::result::Result<LebesgueRun, (usize, GreedyError)>> = (0..exp.lebesgue_trials)
        .into_par_iter()
        .map(|trial| {
            lebesgue_trial(exp, spaces, trial, &opts).map_err(|e| (trial, e))
        })
        .collect();
    let mut worst: f64 = 0.0;
    let mut gap = f64::INFINITY;
    let mut count = 0;
    for r in runs {
        match r {
            Ok((_, w, g, _, t)) => {
                worst = worst.max(w);
                gap = gap.min(g);
                count += 1;
                traces.push(t);
            }
            Err((trial, e)) => report.replications.push(ReplicationRecord::failed(trial, "QOGA", None, &e)),
        }
    }
    report.checks.push(Check {
        name: "seminorm_lebesgue".into(),
        bound: format!("‖f_m‖_D ≤ {LEBESGUE_CONSTANT}·σ_m(f)_D for m ≤ 1/(3M)"),
        kind: CheckKind::Explicit,
        passed: worst <= LEBESGUE_CONSTANT && count > 0,
        worst,
        detail: format!("{count} instances; largest ratio {worst:.4}"),
    });
    report.checks.push(Check {
        name: "oracle_dominance".into(),
        bound: format!("‖f_m‖ ≥ σ_m − {ORACLE_SLACK:e}"),
        kind: CheckKind::Explicit,
        passed: gap >= -ORACLE_SLACK,
        worst: gap,
        detail: format!("smallest gap {gap:.3e}"),
    });
}

type LebesgueRun = (usize, f64, f64, Vec<f64>, LabeledTrace);

fn lebesgue_trial(exp: &RecoveryExperiment, spaces: &[SpaceLp], trial: usize, opts: &RunOptions) -> Result<LebesgueRun> {
    let space = &spaces[trial % spaces.len()];
    let mut r = rng::stream(exp.seed, &format!("{}/lebesgue", exp.id), trial as u64);
    let (dict, m_coh) = coherent_in_range(space, exp.lebesgue_count, exp.coherence, &mut r)?;
    let m_lim = ((1.0 / (3.0 * m_coh)).floor() as usize).max(1).min(dict.len());
    // A sparse part plus a dense perturbation of random size.
    let s = r.gen_range(1..=m_lim + 1).min(dict.len());
    let f0 = sparse_signal(&dict, s, &mut r);
    let e = gaussian_direction(space, &mut r);
    let size = r.gen_range(0.0..0.3);
    let f: Element = f0.iter().zip(&e).map(|(a, b)| a + size * b).collect();
    let trace = algorithms::run(&Algorithm::Qoga, &dict, &f, m_lim, opts)?;
    let mut worst: f64 = 0.0;
    for step in trace.steps.iter().skip(1) {
        let value = dict.element_seminorm(&step.residual);
        let sigma = oracle::best_m_term_seminorm(&dict, &f, step.m)?.value;
        let ratio = if sigma > 1e-14 { value / sigma } else if value <= 1e-10 { 0.0 } else { f64::INFINITY };
        worst = worst.max(ratio);
    }
    let sig = sigmas(space, &dict, &f, m_lim.min(4))?.unwrap_or_default();
    let gap = oracle_gap(&trace, &sig).unwrap_or(f64::INFINITY);
    Ok((trial, worst, gap, sig, LabeledTrace { replication: trial, algorithm: "QOGA".into(), parameter: None, trace }))
}

/// Noisy data and approximate algorithms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseExperiment {
    pub id: String,
    pub algorithms: Vec<Algorithm>,
    pub space: SpaceSpec,
    pub dictionary: DictionarySpec,
    pub sparsity: usize,
    /// A(ε).
    #[serde(default = "unit")]
    pub amplitude: f64,
    pub epsilons: Vec<f64>,
    pub m_max: usize,
    #[serde(default = "one")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    /// Also run the approximate variants with adaptive perturbations.
    #[serde(default)]
    pub approximate: Option<ApproximateStudy>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApproximateStudy {
    /// Fraction of the admissible perturbation level used for δ and η.
    pub factor: f64,
    /// A constant δ for the contrast run.
    pub contrast_delta: f64,
}

fn approximate_variant(alg: &Algorithm, delta: Perturbation, eta: Perturbation, seed: u64) -> Option<Algorithm> {
    match alg {
        Algorithm::Wcga { weakness } => Some(Algorithm::Awcga { weakness: weakness.clone(), delta, eta, seed }),
        Algorithm::Wgafr { weakness } => Some(Algorithm::Awgafr { weakness: weakness.clone(), delta, eta, seed }),
        Algorithm::Rwrga { weakness } => Some(Algorithm::Arwrga { weakness: weakness.clone(), delta, eta, seed }),
        _ => None,
    }
}

/// Checks the noisy-data bound for each ε; optionally runs the approximate
/// variants, checks the hypotheses of their rate bound on each trace and the
/// bound itself where the hypotheses hold, and a contrast run with a large
/// constant δ.
pub fn noise_and_approx_study(exp: &NoiseExperiment) -> Result<Outcome> {
    check_common(&exp.id, exp.m_max, exp.replications)?;
    if exp.algorithms.is_empty() || exp.epsilons.is_empty() {
        return Err(GreedyError::invalid("epsilons", "need at least one algorithm and one ε"));
    }
    for a in &exp.algorithms {
        a.validate()?;
    }
    let space = exp.space.build()?;
    let fixed = fixed_dictionary(&space, &exp.dictionary, exp.seed, &exp.id)?;
    let opts = RunOptions { record_vectors: false, ..RunOptions::default() };
    let bound = [BoundSpec::NoisyWbga];
    let per_rep: Vec<Vec<std::result::Result<RunSummary, ReplicationRecord>>> = (0..exp.replications)
        .into_par_iter()
        .map(|rep| {
            let mut out = Vec::new();
            for (e_idx, &eps) in exp.epsilons.iter().enumerate() {
                let data = DataSpec::Noisy { sparsity: exp.sparsity, amplitude: exp.amplitude, epsilon: eps };
                let stream_id = format!("{}/eps{e_idx}", exp.id);
                let setup = replicate(&stream_id, exp.seed, rep, &space, &exp.dictionary, fixed.as_ref(), &data);
                for alg in &exp.algorithms {
                    out.push(match &setup {
                        Ok((dict, inst)) => algorithms::run(alg, dict, &inst.f, exp.m_max, &opts)
                            .and_then(|tr| summarize(rep, alg, Some(eps), tr, inst, &bound, &space, None))
                            .map_err(|e| ReplicationRecord::failed(rep, alg.name(), Some(eps), &e)),
                        Err(e) => Err(ReplicationRecord::failed(rep, alg.name(), Some(eps), e)),
                    });
                }
            }
            out
        })
        .collect();
    let mut report = Report::new(&exp.id, "noise_and_approx_study", exp.seed);
    let mut traces = Vec::new();
    for results in per_rep {
        collect(&mut report, &mut traces, results);
    }
    let mut rows = Vec::new();
    for &eps in &exp.epsilons {
        for alg in &exp.algorithms {
            let worst = report
                .replications
                .iter()
                .filter(|r| r.parameter == Some(eps) && r.algorithm == alg.name())
                .filter_map(|r| r.bounds.first().map(|b| b.max_ratio))
                .fold(0.0, f64::max);
            rows.push(vec![eps, worst]);
        }
    }
    report.tables.push(Table { name: "noisy_bound_ratios".into(), columns: vec!["epsilon".into(), "max_ratio".into()], rows });
    bound_checks(&mut report, &bound);
    if let Some(study) = &exp.approximate {
        approximate_runs(exp, study, &space, fixed.as_ref(), &mut report, &mut traces)?;
    }
    error_check(&mut report);
    Ok(Outcome { report: report.finish(), traces })
}

fn approximate_runs(
    exp: &NoiseExperiment,
    study: &ApproximateStudy,
    space: &SpaceLp,
    fixed: Option<&Dictionary>,
    report: &mut Report,
    traces: &mut Vec<LabeledTrace>,
) -> Result<()> {
    if !(study.factor > 0.0 && study.factor < 1.0) || !(study.contrast_delta > 0.0 && study.contrast_delta < 1.0) {
        return Err(GreedyError::invalid("approximate", "factor and contrast_delta must lie in (0,1)"));
    }
    let params = space.smoothness_params();
    let qd = params.q_dual();
    let c = approximate_constant(params);
    let a = exp.amplitude;
    // δ_m + η_{m+1} ≤ ½C^{−q'}A^{−q'}t^{q'}‖f_m‖^{q'}: each level gets half of
    // `factor` times the admissible amount, capped by min(1, ‖f_m‖^{q'}).
    let level = 0.25 * study.factor * (c * a).powf(-qd);
    let eps = exp.epsilons[0];
    let data = DataSpec::Noisy { sparsity: exp.sparsity, amplitude: a, epsilon: eps };
    let opts = RunOptions::default();
    type Res = std::result::Result<(Vec<(String, bool, f64)>, Vec<LabeledTrace>), ReplicationRecord>;
    let per_rep: Vec<Res> = (0..exp.replications)
        .into_par_iter()
        .map(|rep| {
            let (dict, inst) = replicate(&format!("{}/approximate", exp.id), exp.seed, rep, space, &exp.dictionary, fixed, &data)
                .map_err(|e| ReplicationRecord::failed(rep, "approximate", None, &e))?;
            let mut checks = Vec::new();
            let mut out = Vec::new();
            for alg in &exp.algorithms {
                let seed = rng::stream_seed(exp.seed, &format!("{}/perturbation", exp.id), rep as u64);
                let adaptive = Perturbation::Adaptive { factor: level.min(0.999) };
                let Some(approx) = approximate_variant(alg, adaptive.clone(), adaptive, seed) else { continue };
                let tr = algorithms::run(&approx, &dict, &inst.f, exp.m_max, &opts).map_err(|e| ReplicationRecord::failed(rep, approx.name(), None, &e))?;
                let (hyp, ratio) = approximate_bound(&tr, params, &inst, c);
                checks.push((approx.name().to_string(), hyp, ratio));
                out.push(LabeledTrace { replication: rep, algorithm: approx.name().to_string(), parameter: None, trace: tr });
                let constant = Perturbation::Schedule { schedule: algorithms::Schedule::constant(study.contrast_delta) };
                if let Some(contrast) = approximate_variant(alg, constant, Perturbation::none(), seed) {
                    let tr = algorithms::run(&contrast, &dict, &inst.f, exp.m_max, &opts).map_err(|e| ReplicationRecord::failed(rep, contrast.name(), None, &e))?;
                    let stuck = tr.final_residual_norm() > 0.1 * tr.steps[0].residual_norm;
                    checks.push((format!("{}-contrast", contrast.name()), stuck, tr.final_residual_norm() / tr.steps[0].residual_norm));
                    out.push(LabeledTrace { replication: rep, algorithm: format!("{}-contrast", contrast.name()), parameter: Some(study.contrast_delta), trace: tr });
                }
            }
            Ok((checks, out))
        })
        .collect();
    let mut held = 0;
    let mut skipped = 0;
    let mut worst: f64 = 0.0;
    let mut stuck = 0;
    let mut contrasts = 0;
    for r in per_rep {
        match r {
            Ok((checks, out)) => {
                for (name, flag, ratio) in checks {
                    if name.ends_with("-contrast") {
                        contrasts += 1;
                        stuck += flag as usize;
                    } else if flag {
                        held += 1;
                        worst = worst.max(ratio);
                    } else {
                        skipped += 1;
                    }
                }
                traces.extend(out);
            }
            Err(rec) => report.replications.push(rec),
        }
    }
    report.checks.push(Check {
        name: "approximate_rate".into(),
        bound: "max{4ε, C(A+ε)(1+Σt_k^q')^(-1/q')}, C = 4q(2γ)^q(2/(q−1))^(1/q')".into(),
        kind: CheckKind::Explicit,
        passed: worst <= 1.0 + 1e-9,
        worst,
        detail: format!("{held} traces met the perturbation hypotheses; {skipped} did not and were not checked"),
    });
    report.checks.push(Check {
        name: "approximate_contrast".into(),
        bound: format!("constant δ = {} stays above 0.1‖f‖", study.contrast_delta),
        kind: CheckKind::Descriptive,
        passed: true,
        worst: stuck as f64,
        detail: format!("{stuck} of {contrasts} contrast runs flagged as non-convergent"),
    });
    Ok(())
}

/// Whether a trace of an approximate algorithm meets the hypotheses
/// δ_m + ε_m/‖f_m‖ ≤ 1/4 and δ_m + η_{m+1} ≤ ½(CA)^{−q'}t_{m+1}^{q'}‖f_m‖^{q'}
/// at every recorded step, and its largest ratio against the bound.
fn approximate_bound(tr: &Trace, params: SmoothnessParams, inst: &Instance, c: f64) -> (bool, f64) {
    let qd = params.q_dual();
    let a = inst.amplitude;
    let f = &tr.steps[0].residual;
    let mut ok = true;
    let mut sum = 0.0;
    let mut worst: f64 = 0.0;
    for (i, s) in tr.steps.iter().enumerate() {
        let fm = s.residual_norm;
        let delta = s.delta.unwrap_or(0.0);
        if fm > 0.0 && !s.residual.is_empty() {
            let g: Element = f.iter().zip(&s.residual).map(|(x, r)| x - r).collect();
            let eta = s.eta.unwrap_or(0.0);
            let slack = algorithms::biorthogonality_slack(params, delta, eta, tr.space.norm(&g));
            if delta + slack / fm > 0.25 {
                ok = false;
            }
            if let Some(next) = tr.steps.get(i + 1) {
                let t = next.t.unwrap_or(1.0);
                if delta + next.eta.unwrap_or(0.0) > 0.5 * (c * a).powf(-qd) * t.powf(qd) * fm.powf(qd) {
                    ok = false;
                }
            }
        }
        if i > 0 {
            sum += s.t.unwrap_or(1.0).powf(qd);
            let b = (4.0 * inst.epsilon).max(c * (a + inst.epsilon) * (1.0 + sum).powf(-1.0 / qd));
            worst = worst.max(fm / b);
        }
    }
    (ok, worst)
}

/// Any experiment, tagged by operation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "operation", rename_all = "snake_case")]
pub enum ExperimentConfig {
    RateSweep(Experiment),
    ConvergenceProbe(Experiment),
    TerminationSweep(TerminationSweep),
    Lebesgue(LebesgueExperiment),
    Recovery(RecoveryExperiment),
    Noise(NoiseExperiment),
}

impl ExperimentConfig {
    pub fn run(&self) -> Result<Outcome> {
        match self {
            ExperimentConfig::RateSweep(e) => rate_sweep(e),
            ExperimentConfig::ConvergenceProbe(e) => convergence_probe(e),
            ExperimentConfig::TerminationSweep(e) => termination_sweep(e),
            ExperimentConfig::Lebesgue(e) => lebesgue_experiment(e),
            ExperimentConfig::Recovery(e) => recovery_table(e),
            ExperimentConfig::Noise(e) => noise_and_approx_study(e),
        }
    }

    pub fn id(&self) -> &str {
        match self {
            ExperimentConfig::RateSweep(e) | ExperimentConfig::ConvergenceProbe(e) => &e.id,
            ExperimentConfig::TerminationSweep(e) => &e.id,
            ExperimentConfig::Lebesgue(e) => &e.id,
            ExperimentConfig::Recovery(e) => &e.id,
            ExperimentConfig::Noise(e) => &e.id,
        }
    }

    /// Replaces the top-level seed.
    pub fn set_seed(&mut self, seed: u64) {
        match self {
            ExperimentConfig::RateSweep(e) | ExperimentConfig::ConvergenceProbe(e) => e.seed = seed,
            ExperimentConfig::TerminationSweep(e) => e.seed = seed,
            ExperimentConfig::Lebesgue(e) => e.seed = seed,
            ExperimentConfig::Recovery(e) => e.seed = seed,
            ExperimentConfig::Noise(e) => e.seed = seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algorithms::Schedule;
    use approx::assert_abs_diff_eq;

    fn wcga() -> Algorithm {
        Algorithm::Wcga { weakness: Schedule::constant(1.0) }
    }

    fn sweep(p: f64) -> Experiment {
        Experiment {
            id: "unit".into(),
            algorithms: vec![wcga(), Algorithm::Rwrga { weakness: Schedule::constant(0.5) }],
            space: SpaceSpec { dim: 8, p },
            dictionary: DictionarySpec::RandomUnit { count: 10 },
            data: DataSpec::A1 { sparsity: 4 },
            m_max: 12,
            replications: 4,
            seed: 7,
            bounds: vec![BoundSpec::WbgaRate],
            oracle_m: 3,
            record_vectors: false,
            solver: SolverOptions::default(),
        }
    }

    #[test]
    fn fit_exponent_recovers_power_laws() {
        let v: Vec<f64> = (0..200).map(|m| if m == 0 { 1.0 } else { (m as f64).powf(-0.5) }).collect();
        let ExponentFit::Fitted { slope, stderr, .. } = fit_exponent_values(&v, 100, 199).unwrap() else { panic!() };
        assert_abs_diff_eq!(slope, -0.5, epsilon = 1e-12);
        assert!(stderr < 1e-10);
        let v: Vec<f64> = (0..64).map(|m| 3.0 * (m.max(1) as f64).powf(-1.25)).collect();
        let ExponentFit::Fitted { slope, intercept, .. } = fit_exponent_values(&v, 8, 63).unwrap() else { panic!() };
        assert_abs_diff_eq!(slope, -1.25, epsilon = 1e-12);
        assert_abs_diff_eq!(intercept, 3f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn fit_exponent_reports_exact_recovery_and_short_windows() {
        let v = vec![1.0, 0.5, 0.25, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(fit_exponent_values(&v, 1, 9).unwrap(), ExponentFit::ExactRecovery { at: 3 });
        assert!(fit_exponent_values(&v, 1, 5).is_err());
    }

    #[test]
    fn stable_constant_flags_growth() {
        let flat: Vec<f64> = (1..=512).map(|m| 1.0 + 1.0 / m as f64).collect();
        let (c, g) = stable_constant(&flat, 64);
        assert!(c.unwrap() > 1.0 && g.unwrap() <= 1.0);
        let growing: Vec<f64> = (1..=512).map(|m| (m as f64).ln()).collect();
        assert!(stable_constant(&growing, 64).1.unwrap() > 1.05);
    }

    #[test]
    fn recovery_threshold_is_strict() {
        // (1/2)(1 + 1/0.25) = 2.5 → S ≤ 2; (1/2)(1 + 1/(1/3)) = 2 exactly → S ≤ 1.
        assert_eq!(recovery_threshold(1.0, 0.25), 2);
        assert_eq!(recovery_threshold(1.0, 1.0 / 3.0), 1);
    }

    #[test]
    fn rate_sweep_passes_and_is_deterministic() {
        let a = rate_sweep(&sweep(3.0)).unwrap();
        assert!(a.report.passed, "{:?}", a.report.checks);
        assert_eq!(a.report.replications.len(), 8);
        assert!(a.report.check("oracle_dominance").is_some());
        let b = rate_sweep(&sweep(3.0)).unwrap();
        assert_eq!(a.report.to_json(), b.report.to_json());
        let csv_a: Vec<String> = a.traces.iter().map(|t| t.trace.to_csv()).collect();
        let csv_b: Vec<String> = b.traces.iter().map(|t| t.trace.to_csv()).collect();
        assert_eq!(csv_a, csv_b);
    }

    #[test]
    fn wga_bound_needs_hilbert_space() {
        let mut e = sweep(3.0);
        e.algorithms = vec![Algorithm::Wga { weakness: Schedule::constant(1.0) }];
        e.bounds = vec![BoundSpec::WgaRate];
        let out = rate_sweep(&e).unwrap();
        assert!(out.report.errors > 0 && !out.report.passed);
        e.space.p = 2.0;
        assert!(rate_sweep(&e).unwrap().report.passed);
    }

    #[test]
    fn validation_names_the_field() {
        let mut e = sweep(2.0);
        e.m_max = 0;
        assert!(rate_sweep(&e).unwrap_err().to_string().contains("m_max"));
        let mut e = sweep(2.0);
        e.algorithms = vec![Algorithm::Wcga { weakness: Schedule::constant(1.5) }];
        assert!(rate_sweep(&e).unwrap_err().to_string().contains("weakness"));
        let bad = r#"{"operation":"rate_sweep","id":"x","algorithms":[],"space":{"dim":2,"p":2},"dictionary":{"kind":"canonical"},"data":{"kind":"gaussian"},"m_max":1,"typo":1}"#;
        assert!(serde_json::from_str::<ExperimentConfig>(bad).unwrap_err().to_string().contains("typo"));
    }

    #[test]
    fn noise_study_with_zero_noise_matches_the_sweep_bound() {
        let exp = NoiseExperiment {
            id: "noise".into(),
            algorithms: vec![wcga()],
            space: SpaceSpec { dim: 8, p: 1.5 },
            dictionary: DictionarySpec::RandomUnit { count: 12 },
            sparsity: 3,
            amplitude: 1.0,
            epsilons: vec![0.0, 0.05],
            m_max: 10,
            replications: 3,
            seed: 1,
            approximate: None,
        };
        let out = noise_and_approx_study(&exp).unwrap();
        assert!(out.report.passed, "{:?}", out.report.checks);
        // At ε = 0 the noisy bound is the plain rate bound.
        let space = SpaceLp::new(8, 1.5).unwrap();
        let inst = Instance { f: vec![], amplitude: 1.0, epsilon: 0.0 };
        let a = BoundSpec::NoisyWbga.values(&wcga(), space.smoothness_params(), &inst, 10, 1.5).unwrap();
        let b = BoundSpec::WbgaRate.values(&wcga(), space.smoothness_params(), &inst, 10, 1.5).unwrap();
        assert_eq!(a[1..], b[1..]);
    }

    #[test]
    fn approximate_study_runs() {
        let exp = NoiseExperiment {
            id: "approx".into(),
            algorithms: vec![wcga(), Algorithm::Wgafr { weakness: Schedule::constant(1.0) }],
            space: SpaceSpec { dim: 6, p: 3.0 },
            dictionary: DictionarySpec::RandomUnit { count: 10 },
            sparsity: 3,
            amplitude: 1.0,
            epsilons: vec![0.0],
            m_max: 10,
            replications: 2,
            seed: 5,
            approximate: Some(ApproximateStudy { factor: 0.5, contrast_delta: 0.9 }),
        };
        let out = noise_and_approx_study(&exp).unwrap();
        assert!(out.report.check("approximate_rate").unwrap().passed, "{:?}", out.report.checks);
        assert!(out.report.check("approximate_contrast").is_some());
    }

    #[test]
    fn qoga_recovers_on_orthonormal_like_dictionaries() {
        let exp = RecoveryExperiment {
            id: "rec".into(),
            dim: 16,
            p_values: vec![2.0, 3.0],
            count: 16,
            coherence: [0.05, 0.3],
            t_values: vec![1.0, 0.5],
            trials: 6,
            lebesgue_trials: 4,
            lebesgue_count: 8,
            seed: 3,
        };
        let out = recovery_table(&exp).unwrap();
        assert!(out.report.passed, "{:?}", out.report.checks);
        let canon = Dictionary::canonical(&SpaceLp::new(6, 1.5).unwrap());
        let mut r = rng::from_seed(2);
        for s in 1..=6 {
            let f = sparse_signal(&canon, s, &mut r);
            let tr = algorithms::run(&Algorithm::Qoga, &canon, &f, s, &RunOptions::default()).unwrap();
            assert!(tr.final_residual_norm() <= 1e-12);
        }
    }

    #[test]
    fn termination_sweep_reports_counts() {
        let exp = TerminationSweep {
            id: "term".into(),
            space: SpaceSpec { dim: 8, p: 2.0 },
            dictionary: DictionarySpec::RandomUnit { count: 16 },
            data: DataSpec::A1 { sparsity: 5 },
            deltas: vec![0.5, 0.25],
            m_max: 2000,
            replications: 3,
            seed: 0,
            oracle_m: 0,
        };
        let out = termination_sweep(&exp).unwrap();
        assert!(out.report.check("stops_below_delta:DGART").unwrap().passed, "{:?}", out.report.checks);
        assert!(out.report.check("stops_below_delta:CGAT").unwrap().passed);
        assert_eq!(out.report.tables[0].rows.len(), 4);
    }

    #[test]
    fn lebesgue_exact_recovery_without_noise() {
        let exp = LebesgueExperiment {
            id: "leb".into(),
            space: SpaceSpec { dim: 10, p: 3.0 },
            dictionary: DictionarySpec::Canonical,
            sparsity: 3,
            epsilon: 0.0,
            weakness: 1.0,
            grid: vec![1.0, 2.0],
            r: 0.0,
            replications: 2,
            seed: 4,
        };
        let out = lebesgue_experiment(&exp).unwrap();
        assert!(out.report.check("exact_recovery").unwrap().passed, "{:?}", out.report.checks);
    }

    #[test]
    fn convergence_probe_flags_zero_weakness() {
        let mut e = sweep(2.0);
        e.algorithms = vec![Algorithm::Wga { weakness: Schedule::constant(0.0) }, wcga()];
        e.bounds.clear();
        e.oracle_m = 0;
        let out = convergence_probe(&e).unwrap();
        assert!(out.report.check("probe:0:WGA").unwrap().detail.contains("4 stalled"));
    }

    #[test]
    fn exponential_rate_of_geometric_decay() {
        let res: Vec<f64> = (0..20).map(|m| 0.5f64.powi(m)).collect();
        assert_abs_diff_eq!(exponential_rate(&res, 0.0, 1.0).unwrap(), 2f64.ln(), epsilon = 1e-12);
    }
}

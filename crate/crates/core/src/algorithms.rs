//! The greedy algorithm catalogue.
//!
//! Every algorithm is run through [`run`], which produces a [`Trace`] with
//! one record per iteration (record 0 holds the input). Choices the
//! definitions leave open ("any element satisfying …") are resolved by the
//! [`Realization`] in [`RunOptions`]: lowest index by default.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dictionary::Dictionary;
use crate::error::{GreedyError, Result};
use crate::linalg::{self, Mat};
use crate::rng::{self, StreamRng};
use crate::space::{DualFunctional, Element, SmoothnessParams, SpaceLp};
use crate::steps::{self, SolverOptions};

/// A sequence indexed from k = 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    Constant { value: f64 },
    /// Explicit values; the last one repeats.
    Sequence { values: Vec<f64> },
    Formula { formula: Formula },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum Formula {
    /// 2/(k+2).
    RelaxTwoOverKPlusTwo,
    /// scale·k^(−exponent).
    PowerDecay { exponent: f64, scale: f64 },
    /// 1/ln(k+2).
    InverseLog,
    /// k1·γ^(1/q)·k^(−1/q'), q' = q/(q−1).
    IncrementalEps { k1: f64, gamma: f64, q: f64 },
}

impl Schedule {
    pub fn constant(value: f64) -> Self {
        Schedule::Constant { value }
    }

    pub fn formula(formula: Formula) -> Self {
        Schedule::Formula { formula }
    }

    /// Value at k ≥ 1.
    pub fn value(&self, k: usize) -> f64 {
        let k = k.max(1);
        match self {
            Schedule::Constant { value } => *value,
            Schedule::Sequence { values } => {
                if values.is_empty() {
                    f64::NAN
                } else {
                    values[(k - 1).min(values.len() - 1)]
                }
            }
            Schedule::Formula { formula } => {
                let kf = k as f64;
                match formula {
                    Formula::RelaxTwoOverKPlusTwo => 2.0 / (kf + 2.0),
                    Formula::PowerDecay { exponent, scale } => scale * kf.powf(-exponent),
                    Formula::InverseLog => 1.0 / (kf + 2.0).ln(),
                    Formula::IncrementalEps { k1, gamma, q } => {
                        let qd = q / (q - 1.0);
                        k1 * gamma.powf(1.0 / q) * kf.powf(-1.0 / qd)
                    }
                }
            }
        }
    }

    /// Checks the first 4096 values against `ok`; `name` is the config key.
    pub fn validate(&self, name: &str, range: &str, ok: impl Fn(f64) -> bool) -> Result<()> {
        if let Schedule::Sequence { values } = self {
            if values.is_empty() {
                return Err(GreedyError::invalid(name, "empty sequence"));
            }
        }
        if let Schedule::Formula { formula: Formula::IncrementalEps { q, gamma, .. } } = self {
            if !(*q > 1.0 && *q <= 2.0 && *gamma > 0.0) {
                return Err(GreedyError::invalid(name, "need 1 < q <= 2 and gamma > 0"));
            }
        }
        for k in 1..=4096 {
            let v = self.value(k);
            if !v.is_finite() || !ok(v) {
                return Err(GreedyError::invalid(name, format!("value {v} at k={k} is outside {range}")));
            }
        }
        Ok(())
    }
}

/// Perturbation level for the approximate algorithms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Perturbation {
    /// δ_m = schedule(m+1), η_m = schedule(m).
    Schedule { schedule: Schedule },
    /// factor·t_{m+1}^{q'}·min(1, ‖f_m‖^{q'}).
    Adaptive { factor: f64 },
}

impl Perturbation {
    pub fn none() -> Self {
        Perturbation::Schedule { schedule: Schedule::constant(0.0) }
    }

    fn validate(&self, name: &str) -> Result<()> {
        match self {
            Perturbation::Schedule { schedule } => schedule.validate(name, "[0,1)", |v| (0.0..1.0).contains(&v)),
            Perturbation::Adaptive { factor } => {
                if (0.0..1.0).contains(factor) {
                    Ok(())
                } else {
                    Err(GreedyError::invalid(name, format!("factor {factor} is outside [0,1)")))
                }
            }
        }
    }

    /// Level for the quantity attached to iteration index `k` (k ≥ 0).
    fn level(&self, k: usize, t_next: f64, residual_norm: f64, qd: f64) -> f64 {
        match self {
            Perturbation::Schedule { schedule } => schedule.value(k.max(1)),
            Perturbation::Adaptive { factor } => factor * t_next.powf(qd) * residual_norm.powf(qd).min(1.0),
        }
    }
}

/// Algorithm identifiers with their parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case", deny_unknown_fields)]
pub enum Algorithm {
    /// Weak dual greedy algorithm with t = 1 (the pure greedy algorithm at p = 2).
    Pga,
    /// Weak dual greedy algorithm (the weak greedy algorithm at p = 2).
    Wga { weakness: Schedule },
    Wdga { weakness: Schedule },
    Xga,
    Wcga { weakness: Schedule },
    Wgafr { weakness: Schedule },
    Xgafr1,
    Xgafr2,
    Gawr { weakness: Schedule, relaxation: Schedule },
    Xgar { relaxation: Schedule },
    XgaC { coefficients: Schedule },
    DgaC { weakness: Schedule, coefficients: Schedule },
    DgaBmu { weakness: Schedule, b: f64 },
    Mdga { weakness: Schedule, b: f64 },
    Dgart { delta: f64 },
    Cgat { delta: f64 },
    IaEps { epsilon: Schedule },
    Wrga { weakness: Schedule },
    Rwrga { weakness: Schedule },
    Rrxga,
    Qoga,
    Wqoga { t: f64 },
    Tga,
    Awcga { weakness: Schedule, delta: Perturbation, eta: Perturbation, seed: u64 },
    Awgafr { weakness: Schedule, delta: Perturbation, eta: Perturbation, seed: u64 },
    Arwrga { weakness: Schedule, delta: Perturbation, eta: Perturbation, seed: u64 },
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Pga => "PGA",
            Algorithm::Wga { .. } => "WGA",
            Algorithm::Wdga { .. } => "WDGA",
            Algorithm::Xga => "XGA",
            Algorithm::Wcga { .. } => "WCGA",
            Algorithm::Wgafr { .. } => "WGAFR",
            Algorithm::Xgafr1 => "XGAFR1",
            Algorithm::Xgafr2 => "XGAFR2",
            Algorithm::Gawr { .. } => "GAWR",
            Algorithm::Xgar { .. } => "XGAR",
            Algorithm::XgaC { .. } => "XGA_C",
            Algorithm::DgaC { .. } => "DGA_C",
            Algorithm::DgaBmu { .. } => "DGA_BMU",
            Algorithm::Mdga { .. } => "MDGA",
            Algorithm::Dgart { .. } => "DGART",
            Algorithm::Cgat { .. } => "CGAT",
            Algorithm::IaEps { .. } => "IA_EPS",
            Algorithm::Wrga { .. } => "WRGA",
            Algorithm::Rwrga { .. } => "RWRGA",
            Algorithm::Rrxga => "RRXGA",
            Algorithm::Qoga => "QOGA",
            Algorithm::Wqoga { .. } => "WQOGA",
            Algorithm::Tga => "TGA",
            Algorithm::Awcga { .. } => "AWCGA",
            Algorithm::Awgafr { .. } => "AWGAFR",
            Algorithm::Arwrga { .. } => "ARWRGA",
        }
    }

    /// Residual norms are non-increasing for these algorithms.
    pub fn is_monotone(&self) -> bool {
        matches!(
            self,
            Algorithm::Pga
                | Algorithm::Wga { .. }
                | Algorithm::Wdga { .. }
                | Algorithm::Xga
                | Algorithm::Wcga { .. }
                | Algorithm::Wgafr { .. }
                | Algorithm::Xgafr1
                | Algorithm::Xgafr2
                | Algorithm::Gawr { .. }
                | Algorithm::Xgar { .. }
                | Algorithm::Wrga { .. }
                | Algorithm::Rwrga { .. }
                | Algorithm::Rrxga
        )
    }

    /// Weakness value t_k, if the algorithm has one.
    pub fn weakness(&self, k: usize) -> Option<f64> {
        match self {
            Algorithm::Pga | Algorithm::Qoga => Some(1.0),
            Algorithm::Wqoga { t } => Some(*t),
            Algorithm::Wga { weakness }
            | Algorithm::Wdga { weakness }
            | Algorithm::Wcga { weakness }
            | Algorithm::Wgafr { weakness }
            | Algorithm::Gawr { weakness, .. }
            | Algorithm::DgaC { weakness, .. }
            | Algorithm::DgaBmu { weakness, .. }
            | Algorithm::Mdga { weakness, .. }
            | Algorithm::Wrga { weakness }
            | Algorithm::Rwrga { weakness }
            | Algorithm::Awcga { weakness, .. }
            | Algorithm::Awgafr { weakness, .. }
            | Algorithm::Arwrga { weakness, .. } => Some(weakness.value(k)),
            _ => None,
        }
    }

    /// Range checks; the error names the offending parameter.
    pub fn validate(&self) -> Result<()> {
        let weak = |s: &Schedule| s.validate("weakness", "[0,1]", |v| (0.0..=1.0).contains(&v));
        let relax = |s: &Schedule| s.validate("relaxation", "[0,1)", |v| (0.0..1.0).contains(&v));
        let positive = |s: &Schedule, name: &str| s.validate(name, "(0,inf)", |v| v > 0.0);
        let b_range = |b: f64, hi_inclusive: bool| {
            if b > 0.0 && (b < 1.0 || (hi_inclusive && b == 1.0)) {
                Ok(())
            } else {
                Err(GreedyError::invalid("b", format!("{b} is outside (0,1{}", if hi_inclusive { "]" } else { ")" })))
            }
        };
        let delta_range = |d: f64| {
            if d > 0.0 && d <= 0.5 {
                Ok(())
            } else {
                Err(GreedyError::invalid("delta", format!("{d} is outside (0,1/2]")))
            }
        };
        match self {
            Algorithm::Pga | Algorithm::Xga | Algorithm::Xgafr1 | Algorithm::Xgafr2 | Algorithm::Rrxga | Algorithm::Qoga | Algorithm::Tga => Ok(()),
            Algorithm::Wga { weakness }
            | Algorithm::Wdga { weakness }
            | Algorithm::Wcga { weakness }
            | Algorithm::Wgafr { weakness }
            | Algorithm::Wrga { weakness }
            | Algorithm::Rwrga { weakness } => weak(weakness),
            Algorithm::Gawr { weakness, relaxation } => {
                weak(weakness)?;
                relax(relaxation)
            }
            Algorithm::Xgar { relaxation } => relax(relaxation),
            Algorithm::XgaC { coefficients } => positive(coefficients, "coefficients"),
            Algorithm::DgaC { weakness, coefficients } => {
                weak(weakness)?;
                positive(coefficients, "coefficients")
            }
            Algorithm::DgaBmu { weakness, b } => {
                weak(weakness)?;
                b_range(*b, true)
            }
            Algorithm::Mdga { weakness, b } => {
                weak(weakness)?;
                b_range(*b, false)
            }
            Algorithm::Dgart { delta } | Algorithm::Cgat { delta } => delta_range(*delta),
            Algorithm::IaEps { epsilon } => positive(epsilon, "epsilon"),
            Algorithm::Wqoga { t } => {
                if *t > 0.0 && *t <= 1.0 {
                    Ok(())
                } else {
                    Err(GreedyError::invalid("t", format!("{t} is outside (0,1]")))
                }
            }
            Algorithm::Awcga { weakness, delta, eta, .. }
            | Algorithm::Awgafr { weakness, delta, eta, .. }
            | Algorithm::Arwrga { weakness, delta, eta, .. } => {
                weak(weakness)?;
                delta.validate("delta")?;
                eta.validate("eta")
            }
        }
    }
}

/// How "any element satisfying …" is resolved.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Realization {
    LowestIndex,
    /// Uniform choice among admissible elements.
    Randomized { seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunOptions {
    pub zero_tol: f64,
    pub solver: SolverOptions,
    pub realization: Realization,
    /// Keep residual vectors and approximant snapshots for every record.
    pub record_vectors: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { zero_tol: 1e-12, solver: SolverOptions::default(), realization: Realization::LowestIndex, record_vectors: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIterations,
    ZeroResidual,
    ZeroFunctional,
    ThresholdEmpty,
    ResidualBelowDeltaF,
    SingularSystem,
    ProjectorFailure,
    Stalled,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopReason::MaxIterations => "max_iterations",
            StopReason::ZeroResidual => "zero_residual",
            StopReason::ZeroFunctional => "zero_functional",
            StopReason::ThresholdEmpty => "threshold_empty",
            StopReason::ResidualBelowDeltaF => "residual_below_delta_f",
            StopReason::SingularSystem => "singular_system",
            StopReason::ProjectorFailure => "projector_failure",
            StopReason::Stalled => "stalled",
        }
    }
}

/// Coefficient `sign·weight` on dictionary element `index`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub index: usize,
    pub sign: i8,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub m: usize,
    pub index: Option<usize>,
    pub sign: Option<i8>,
    pub lambda: Option<f64>,
    pub w: Option<f64>,
    pub mu: Option<f64>,
    pub c: Option<f64>,
    /// Weakness parameter used at this step.
    pub t: Option<f64>,
    pub residual_norm: f64,
    /// ‖F_{f_m}‖_D; `None` when f_m = 0.
    pub dnorm_f: Option<f64>,
    pub terms: Vec<Term>,
    pub residual: Element,
    /// Residual norm of the high-precision reference solve (approximate algorithms).
    pub reference_residual_norm: Option<f64>,
    /// F_m(G_m) for the functional used at the next selection (approximate algorithms).
    pub f_on_approximant: Option<f64>,
    /// Perturbation levels (δ_m, η_m) (approximate algorithms).
    pub delta: Option<f64>,
    pub eta: Option<f64>,
}

impl StepRecord {
    fn blank(m: usize) -> Self {
        StepRecord {
            m,
            index: None,
            sign: None,
            lambda: None,
            w: None,
            mu: None,
            c: None,
            t: None,
            residual_norm: 0.0,
            dnorm_f: None,
            terms: vec![],
            residual: vec![],
            reference_residual_norm: None,
            f_on_approximant: None,
            delta: None,
            eta: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub algorithm: Algorithm,
    pub space: SpaceLp,
    pub dictionary: String,
    pub realization: Realization,
    pub steps: Vec<StepRecord>,
    pub stop_reason: StopReason,
    /// Noteworthy events (dropped dependent directions, clamped steps, …).
    pub flags: Vec<String>,
}

impl Trace {
    pub fn residual_norms(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.residual_norm).collect()
    }

    pub fn final_residual_norm(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.residual_norm)
    }

    /// Number of completed iterations.
    pub fn iterations(&self) -> usize {
        self.steps.len() - 1
    }

    /// True if residual norms never increase by more than `tol`.
    pub fn is_monotone(&self, tol: f64) -> bool {
        self.steps.windows(2).all(|w| w[1].residual_norm <= w[0].residual_norm + tol)
    }

    /// The fixed-column CSV view.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("m,index,sign,lambda,w,mu,c,residual_norm,dnorm_F,stop_reason\n");
        let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        let last = self.steps.len() - 1;
        for (k, r) in self.steps.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{:e},{},{}",
                r.m,
                r.index.map(|i| i.to_string()).unwrap_or_default(),
                r.sign.map(|i| i.to_string()).unwrap_or_default(),
                opt(r.lambda),
                opt(r.w),
                opt(r.mu),
                opt(r.c),
                r.residual_norm,
                opt(r.dnorm_f),
                if k == last { self.stop_reason.as_str() } else { "" }
            );
        }
        s
    }
}

/// Runs `alg` on `f` for at most `m_max` iterations.
pub fn run(alg: &Algorithm, dict: &Dictionary, f: &[f64], m_max: usize, opts: &RunOptions) -> Result<Trace> {
    alg.validate()?;
    let space = *dict.space();
    space.check_dim(f)?;
    if f.iter().any(|v| !v.is_finite()) {
        return Err(GreedyError::invalid("f", "non-finite entries"));
    }
    if let Algorithm::Tga = alg {
        if dict.len() != space.dim {
            return Err(GreedyError::invalid("dictionary", "TGA needs a basis (N = n)"));
        }
    }
    let mut state = State::new(alg, dict, f, opts);
    let stop = state.drive(m_max)?;
    let State { steps, flags, .. } = state;
    Ok(Trace {
        algorithm: alg.clone(),
        space,
        dictionary: dict.fingerprint(),
        realization: opts.realization,
        steps,
        stop_reason: stop,
        flags,
    })
}

/// Runs `alg` on f^ε + noise.
pub fn run_with_noise(alg: &Algorithm, dict: &Dictionary, f_clean: &[f64], noise: &[f64], m_max: usize, opts: &RunOptions) -> Result<Trace> {
    dict.space().check_dim(noise)?;
    let f: Element = f_clean.iter().zip(noise).map(|(a, b)| a + b).collect();
    run(alg, dict, &f, m_max, opts)
}

/// inf_{λ>0} (δ+η+2γ(λ‖G‖)^q)/λ in closed form.
pub fn biorthogonality_slack(params: SmoothnessParams, delta: f64, eta: f64, g_norm: f64) -> f64 {
    let a = delta + eta;
    if a <= 0.0 || g_norm == 0.0 {
        return 0.0;
    }
    let (gamma, q) = (params.gamma, params.q);
    let lambda = (a / (2.0 * gamma * (q - 1.0))).powf(1.0 / q) / g_norm;
    (a + 2.0 * gamma * (lambda * g_norm).powf(q)) / lambda
}

enum Step {
    Continue,
    Stop(StopReason),
}

struct State<'a> {
    alg: &'a Algorithm,
    dict: &'a Dictionary,
    space: SpaceLp,
    params: SmoothnessParams,
    opts: &'a RunOptions,
    f: Element,
    f_norm: f64,
    g: Element,
    res: Element,
    res_norm: f64,
    /// Signed coefficient per dictionary index.
    coef: BTreeMap<usize, f64>,
    /// Counts per (index, sign) for the incremental algorithm.
    counts: BTreeMap<(usize, i8), u64>,
    selected: Vec<usize>,
    sum_c: f64,
    tga_order: Vec<(usize, f64)>,
    functional: Option<DualFunctional>,
    choice_rng: Option<StreamRng>,
    perturb_rng: StreamRng,
    steps: Vec<StepRecord>,
    flags: Vec<String>,
    unchanged: usize,
}

impl<'a> State<'a> {
    fn new(alg: &'a Algorithm, dict: &'a Dictionary, f: &[f64], opts: &'a RunOptions) -> Self {
        let space = *dict.space();
        let perturb_seed = match alg {
            Algorithm::Awcga { seed, .. } | Algorithm::Awgafr { seed, .. } | Algorithm::Arwrga { seed, .. } => *seed,
            _ => 0,
        };
        let choice_rng = match opts.realization {
            Realization::LowestIndex => None,
            Realization::Randomized { seed } => Some(rng::stream(seed, "realization", 0)),
        };
        let f_norm = space.norm(f);
        State {
            alg,
            dict,
            space,
            params: space.smoothness_params(),
            opts,
            f: f.to_vec(),
            f_norm,
            g: vec![0.0; space.dim],
            res: f.to_vec(),
            res_norm: f_norm,
            coef: BTreeMap::new(),
            counts: BTreeMap::new(),
            selected: vec![],
            sum_c: 0.0,
            tga_order: vec![],
            functional: None,
            choice_rng,
            perturb_rng: rng::stream(perturb_seed, "perturbation", 0),
            steps: vec![],
            flags: vec![],
            unchanged: 0,
        }
    }

    fn is_approximate(&self) -> bool {
        matches!(self.alg, Algorithm::Awcga { .. } | Algorithm::Awgafr { .. } | Algorithm::Arwrga { .. })
    }

    fn drive(&mut self, m_max: usize) -> Result<StopReason> {
        if let Algorithm::Tga = self.alg {
            if let Some(reason) = self.tga_prepare() {
                self.push_record(StepRecord::blank(0));
                return Ok(reason);
            }
        }
        let mut rec0 = StepRecord::blank(0);
        if self.is_approximate() {
            let d = self.delta_level(0);
            rec0.delta = Some(d);
            self.functional = self.approximate_functional(d);
        }
        self.push_record(rec0);
        if self.res_norm <= self.opts.zero_tol {
            return Ok(StopReason::ZeroResidual);
        }
        if let Algorithm::Dgart { delta } | Algorithm::Cgat { delta } = self.alg {
            if self.res_norm <= delta * self.f_norm {
                return Ok(StopReason::ResidualBelowDeltaF);
            }
        }
        for m in 1..=m_max {
            let mut rec = StepRecord::blank(m);
            rec.t = self.alg.weakness(m);
            let prev = self.res.clone();
            match self.step(m, &mut rec)? {
                Step::Stop(reason) => return Ok(reason),
                Step::Continue => {}
            }
            self.res_norm = self.space.norm(&self.res);
            if self.is_approximate() {
                let d = self.delta_level(m);
                rec.delta = Some(d);
                self.functional = self.approximate_functional(d);
                if let Some(fm) = &self.functional {
                    rec.f_on_approximant = Some(fm.eval(&self.g));
                }
            }
            self.push_record(rec);
            if self.res_norm <= self.opts.zero_tol {
                return Ok(StopReason::ZeroResidual);
            }
            if let Algorithm::Dgart { delta } | Algorithm::Cgat { delta } = self.alg {
                if self.res_norm <= delta * self.f_norm {
                    return Ok(StopReason::ResidualBelowDeltaF);
                }
            }
            if let Algorithm::Tga = self.alg {
                if m == self.tga_order.len() {
                    return Ok(StopReason::MaxIterations);
                }
            }
            if prev == self.res {
                self.unchanged += 1;
                if self.unchanged >= 10 {
                    self.flags.push(format!("stalled at m={m}"));
                    return Ok(StopReason::Stalled);
                }
            } else {
                self.unchanged = 0;
            }
        }
        Ok(StopReason::MaxIterations)
    }

    fn push_record(&mut self, mut rec: StepRecord) {
        rec.residual_norm = self.res_norm;
        rec.dnorm_f = if self.res_norm > 0.0 {
            let fr = self.space.norming_functional_with_norm(&self.res, self.res_norm);
            Some(self.dict.d_norm(&fr).value)
        } else {
            None
        };
        if self.opts.record_vectors {
            rec.residual = self.res.clone();
            rec.terms = self.terms();
        }
        self.steps.push(rec);
    }

    fn terms(&self) -> Vec<Term> {
        if !self.counts.is_empty() {
            let total: u64 = self.counts.values().sum();
            return self
                .counts
                .iter()
                .map(|(&(index, sign), &c)| Term { index, sign, weight: c as f64 / total as f64 })
                .collect();
        }
        self.coef
            .iter()
            .filter(|(_, c)| **c != 0.0)
            .map(|(&index, &c)| Term { index, sign: if c < 0.0 { -1 } else { 1 }, weight: c.abs() })
            .collect()
    }

    fn current_functional(&self) -> Option<DualFunctional> {
        if self.res_norm == 0.0 {
            return None;
        }
        Some(self.space.norming_functional_with_norm(&self.res, self.res_norm))
    }

    /// Functional used for selection: exact, or the stored approximate one.
    fn selection_functional(&self) -> Option<DualFunctional> {
        if self.is_approximate() {
            self.functional.clone()
        } else {
            self.current_functional()
        }
    }

    /// Picks among indices whose |value| reaches `threshold`.
    fn choose(&mut self, values: &[f64], threshold: f64) -> Option<usize> {
        match &mut self.choice_rng {
            None => values.iter().position(|v| v.abs() >= threshold),
            Some(r) => {
                let cands: Vec<usize> = (0..values.len()).filter(|&i| values[i].abs() >= threshold).collect();
                if cands.is_empty() {
                    None
                } else {
                    Some(cands[r.gen_range(0..cands.len())])
                }
            }
        }
    }

    /// Weak selection on the values F(g_i): |F(g)| ≥ t·max.
    fn weak_select(&mut self, values: &[f64], t: f64) -> Option<(usize, i8, f64)> {
        let max = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if max == 0.0 {
            return None;
        }
        let threshold = if t >= 1.0 { max } else { t * max };
        let i = self.choose(values, threshold)?;
        Some((i, if values[i] < 0.0 { -1 } else { 1 }, max))
    }

    fn dual_select(&mut self, m: usize, rec: &mut StepRecord) -> Option<(usize, i8, Element, f64)> {
        let fm = self.selection_functional()?;
        let values = self.dict.values(&fm);
        let t = self.alg.weakness(m).unwrap_or(1.0);
        let (i, s, dn) = self.weak_select(&values, t)?;
        rec.index = Some(i);
        rec.sign = Some(s);
        Some((i, s, self.dict.signed(i, s), dn))
    }

    fn add_coef(&mut self, i: usize, c: f64) {
        *self.coef.entry(i).or_insert(0.0) += c;
    }

    fn scale_coef(&mut self, s: f64) {
        for c in self.coef.values_mut() {
            *c *= s;
        }
    }

    fn set_g(&mut self, g: Element) {
        self.res = crate::space::sub(&self.f, &g);
        self.g = g;
    }

    fn step(&mut self, m: usize, rec: &mut StepRecord) -> Result<Step> {
        let space = self.space;
        let solver = self.opts.solver;
        match self.alg {
            Algorithm::Pga | Algorithm::Wga { .. } | Algorithm::Wdga { .. } => {
                let Some((i, s, phi, _)) = self.dual_select(m, rec) else {
                    return Ok(Step::Stop(StopReason::ZeroFunctional));
                };
                let (lambda, _) = steps::line_search_with(&space, &self.res, &phi, &solver)?;
                linalg::axpy(-lambda, &phi, &mut self.res);
                linalg::axpy(lambda, &phi, &mut self.g);
                self.add_coef(i, lambda * s as f64);
                rec.lambda = Some(lambda);
            }
            Algorithm::Xga => {
                let (i, lambda, _) = steps::x_greedy_select_with(&space, &self.res, self.dict, &solver)?;
                let g = self.dict.element(i).to_vec();
                linalg::axpy(-lambda, &g, &mut self.res);
                linalg::axpy(lambda, &g, &mut self.g);
                self.add_coef(i, lambda);
                rec.index = Some(i);
                rec.sign = Some(if lambda < 0.0 { -1 } else { 1 });
                rec.lambda = Some(lambda);
            }
            Algorithm::Wcga { .. } | Algorithm::Awcga { .. } => {
                let Some((i, _, _, _)) = self.dual_select(m, rec) else {
                    return Ok(Step::Stop(StopReason::ZeroFunctional));
                };
                return self.chebyshev_step(m, i, rec);
            }
            Algorithm::Cgat { delta } => {
                let Some(fm) = self.current_functional() else {
                    return Ok(Step::Stop(StopReason::ZeroFunctional));
                };
                let values = self.dict.values(&fm);
                let Some(i) = self.choose(&values, *delta) else {
                    return Ok(Step::Stop(StopReason::ThresholdEmpty));
                };
                rec.index = Some(i);
                rec.sign = Some(if values[i] < 0.0 { -1 } else { 1 });
                return self.chebyshev_step(m, i, rec);
            }
            Algorithm::Wgafr { .. } | Algorithm::Awgafr { .. } => {
                let Some((i, s, phi, _)) = self.dual_select(m, rec) else {
                    return Ok(Step::Stop(StopReason::ZeroFunctional));
                };
                return self.free_relax_step(m, i, s, &phi, rec);
            }
            Algorithm::Dgart { delta } => {
                let Some(fm) = self.current_functional() else {
                    return Ok(Step::Stop(StopReason::ZeroFunctional));
                };
                let values = self.dict.values(&fm);
                let Some(i) = self.choose(&values, *delta) else {
                    return Ok(Step::Stop(StopReason::ThresholdEmpty));
                };
                let s = if values[i] < 0.0 { -1 } else { 1 };
                rec.index = Some(i);
                rec.sign = Some(s);
                let phi = self.dict.signed(i, s);
                return self.free_relax_step(m, i, s, &phi, rec);
            }
            Algorithm::Xgafr2 => {
                let (i, _, _) = steps::x_greedy_select_with(&space, &self.res, self.dict, &solver)?;
                rec.index = Some(i);
                rec.sign = Some(1);
                let phi = self.dict.element(i).to_vec();
                return self.free_relax_step(m, i, 1, &phi, rec);
            }
            Algorithm::Xgafr1 => {
                let mut best: Option<(usize, steps::FreeRelax)> = None;
                for i in 0..self.dict.len() {
                    let fr = match steps::free_relax(&space, &self.f, &self.g, self.dict.element(i), &solver) {
                        Ok(fr) => fr,
                        Err(GreedyError::NonConvergence { .. }) => return Ok(Step::Stop(StopReason::ProjectorFailure)),
                        Err(e) => return Err(e),
                    };
                    if best.as_ref().map_or(true, |(_, b)| fr.residual_norm < b.residual_norm) {
                        best = Some((i, fr));
                    }
                }
                let (i, fr) = best.expect("dictionary is nonempty");
                rec.index = Some(i);
                rec.sign = Some(1);
                self.apply_relax(i, 1, fr.w, fr.lambda, rec);
            }
            Algorithm::Gawr { relaxation, .. } => {
                let Some((i, s, phi, _)) = self.dual_select(m, rec) else {
                    return Ok(Step::Stop(StopReason::ZeroFunctional));
                };
                self.fixed_relax_step(i, s, &phi, relaxation.value(m), rec)?;
            }
            Algorithm::Xgar { relaxation } => {
                let (i, _, _) = steps::x_greedy_select_with(&space, &self.res, self.dict, &solver)?;
                rec.index = Some(i);
                rec.sign = Some(1);
                let phi = self.dict.element(i).to_vec();
                self.fixed_relax_step(i, 1, &phi, relaxation.value(m), rec)?;
            }
            Algorithm::XgaC { coefficients } => {
                let c = coefficients.value(m);
                let mut best = (0usize, 1i8, f64::INFINITY);
                for i in 0..self.dict.len() {
                    for s in [1i8, -1] {
                        let g = self.dict.element(i);
                        let r: Vec<f64> = self.res.iter().zip(g).map(|(a, b)| a - c * s as f64 * b).collect();
                        let nr = space.norm(&r);
                        if nr < best.2 {
                            best = (i, s, nr);
                        }
                    }
                }
                let (i, s, _) = best;
                self.coefficient_step(i, s, c, rec);
            }
            Algorithm::DgaC { coefficients, .. } => {
                let Some((i, s, _, _)) = self.dual_select(m, rec) else {
                    return Ok(Step::Stop(StopReason::ZeroFunctional));
                };
                let c = coefficients.value(m);
                self.coefficient_step(i, s, c, rec);
            }
            Algorithm::DgaBmu { weakness, b } => {
                let Some((i, s, _, dn)) = self.dual_select(m, rec) else {
                    return Ok(Step::Stop(StopReason::ZeroFunctional));
                };
                let t = weakness.value(m);
                let (gamma, q) = (self.params.gamma, self.params.q);
                let c = self.res_norm * (t * b * dn / (2.0 * gamma)).powf(1.0 / (q - 1.0));
                self.coefficient_step(i, s, c, rec);
            }
            Algorithm::Mdga { weakness, b } => {
                let Some(fm) = self.current_functional() else {
                    return Ok(Step::Stop(StopReason::ZeroFunctional));
                };
                let t = weakness.value(m);
                let values = self.dict.values(&fm);
                let threshold = t * self.res_norm / (1.0 + self.sum_c);
                let Some(i) = self.choose(&values, threshold) else {
                    return Ok(Step::Stop(StopReason::ThresholdEmpty));
                };
                let s = if values[i] < 0.0 { -1 } else { 1 };
                rec.index = Some(i);
                rec.sign = Some(s);
                let (gamma, q) = (self.params.gamma, self.params.q);
                let c = (t * b * self.res_norm.powf(q) / (2.0 * gamma * (1.0 + self.sum_c))).powf(1.0 / (q - 1.0));
                self.coefficient_step(i, s, c, rec);
                self.sum_c += c;
            }
            Algorithm::IaEps { epsilon } => {
                let Some(fm) = self.current_functional() else {
                    return Ok(Step::Stop(StopReason::ZeroFunctional));
                };
                let eps = epsilon.value(m);
                let ff = fm.eval(&self.f);
                // Candidates in D^± order (g1,+), (g1,−), (g2,+), …
                let mut signed_values = Vec::with_capacity(2 * self.dict.len());
                for v in self.dict.values(&fm) {
                    signed_values.push(v);
                    signed_values.push(-v);
                }
                // Admissible: F(σg − f) ≥ −ε. Encode as |·| ≥ 0 on a mask.
                let mask: Vec<f64> = signed_values.iter().map(|v| if v - ff >= -eps { 1.0 } else { 0.0 }).collect();
                let Some(k) = self.choose(&mask, 0.5) else {
                    return Ok(Step::Stop(StopReason::ThresholdEmpty));
                };
                let (i, s) = (k / 2, if k % 2 == 0 { 1i8 } else { -1 });
                rec.index = Some(i);
                rec.sign = Some(s);
                *self.counts.entry((i, s)).or_insert(0) += 1;
                let mut g = vec![0.0; space.dim];
                for (&(j, sj), &cnt) in &self.counts {
                    linalg::axpy(sj as f64 * cnt as f64 / m as f64, self.dict.element(j), &mut g);
                }
                self.set_g(g);
            }
            Algorithm::Wrga { weakness } => {
                let Some(fm) = self.current_functional() else {
                    return Ok(Step::Stop(StopReason::ZeroFunctional));
                };
                let fg = fm.eval(&self.g);
                let mut signed_values = Vec::with_capacity(2 * self.dict.len());
                for v in self.dict.values(&fm) {
                    signed_values.push(v - fg);
                    signed_values.push(-v - fg);
                }
                let sup = signed_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let t = weakness.value(m);
                let k = if sup > 0.0 {
                    let threshold = if t >= 1.0 { sup } else { t * sup };
                    let mask: Vec<f64> = signed_values.iter().map(|v| if *v >= threshold { 1.0 } else { 0.0 }).collect();
                    self.choose(&mask, 0.5).expect("the supremum is attained")
                } else {
                    signed_values.iter().position(|v| *v == sup).expect("the supremum is attained")
                };
                let (i, s) = (k / 2, if k % 2 == 0 { 1i8 } else { -1 });
                rec.index = Some(i);
                rec.sign = Some(s);
                let phi = self.dict.signed(i, s);
                let dir = crate::space::sub(&phi, &self.g);
                let lambda = if dir.iter().all(|v| *v == 0.0) {
                    0.0
                } else {
                    steps::line_search_clamped(&space, &self.res, &dir, 0.0, 1.0)?.0
                };
                let mut g = self.g.clone();
                for (gi, pi) in g.iter_mut().zip(&phi) {
                    *gi = (1.0 - lambda) * *gi + lambda * pi;
                }
                self.scale_coef(1.0 - lambda);
                self.add_coef(i, lambda * s as f64);
                self.set_g(g);
                rec.lambda = Some(lambda);
            }
            Algorithm::Rwrga { .. } | Algorithm::Arwrga { .. } => {
                let Some((i, s, phi, _)) = self.dual_select(m, rec) else {
                    return Ok(Step::Stop(StopReason::ZeroFunctional));
                };
                return self.rescaled_step(m, i, s, &phi, rec);
            }
            Algorithm::Rrxga => {
                let (i, lambda, _) = steps::x_greedy_select_with(&space, &self.res, self.dict, &solver)?;
                let s: i8 = if lambda < 0.0 { -1 } else { 1 };
                rec.index = Some(i);
                rec.sign = Some(s);
                let phi = self.dict.signed(i, s);
                return self.rescaled_step(m, i, s, &phi, rec);
            }
            Algorithm::Qoga | Algorithm::Wqoga { .. } => {
                let values: Vec<f64> = (0..self.dict.len()).map(|j| self.dict.functional(j).eval(&self.res)).collect();
                let t = self.alg.weakness(m).unwrap_or(1.0);
                let Some((i, s, _)) = self.weak_select(&values, t) else {
                    return Ok(Step::Stop(StopReason::ZeroFunctional));
                };
                rec.index = Some(i);
                rec.sign = Some(s);
                if self.selected.contains(&i) {
                    self.flags.push(format!("m={m}: reselected element {i}"));
                } else {
                    self.selected.push(i);
                }
                let k = self.selected.len();
                let mut a = Mat::zeros(k, k);
                let mut rhs = vec![0.0; k];
                for (r, &j) in self.selected.iter().enumerate() {
                    let fj = self.dict.functional(j);
                    rhs[r] = fj.eval(&self.f);
                    for (c, &l) in self.selected.iter().enumerate() {
                        a[(r, c)] = fj.eval(self.dict.element(l));
                    }
                }
                let Some(x) = linalg::solve_partial_pivot(&a, &rhs, 1e-12) else {
                    return Ok(Step::Stop(StopReason::SingularSystem));
                };
                let mut g = vec![0.0; space.dim];
                self.coef.clear();
                for (&l, &cl) in self.selected.iter().zip(&x) {
                    linalg::axpy(cl, self.dict.element(l), &mut g);
                    self.coef.insert(l, cl);
                }
                self.set_g(g);
            }
            Algorithm::Tga => {
                let (i, c) = self.tga_order[m - 1];
                rec.index = Some(i);
                rec.sign = Some(if c < 0.0 { -1 } else { 1 });
                rec.c = Some(c);
                self.coef.insert(i, c);
                let mut g = vec![0.0; space.dim];
                for (&j, &cj) in &self.coef {
                    linalg::axpy(cj, self.dict.element(j), &mut g);
                }
                self.set_g(g);
            }
        }
        Ok(Step::Continue)
    }

    fn coefficient_step(&mut self, i: usize, s: i8, c: f64, rec: &mut StepRecord) {
        let phi = self.dict.signed(i, s);
        linalg::axpy(-c, &phi, &mut self.res);
        linalg::axpy(c, &phi, &mut self.g);
        self.add_coef(i, c * s as f64);
        rec.index = Some(i);
        rec.sign = Some(s);
        rec.c = Some(c);
    }

    fn fixed_relax_step(&mut self, i: usize, s: i8, phi: &[f64], r: f64, rec: &mut StepRecord) -> Result<()> {
        // With r = 0 the shifted target is exactly the current residual.
        let base = if r == 0.0 { self.res.clone() } else { self.f.iter().zip(&self.g).map(|(a, b)| a - (1.0 - r) * b).collect() };
        let (lambda, _) = steps::line_search_with(&self.space, &base, phi, &self.opts.solver)?;
        let mut res = base;
        linalg::axpy(-lambda, phi, &mut res);
        if r != 0.0 {
            for v in self.g.iter_mut() {
                *v *= 1.0 - r;
            }
            self.scale_coef(1.0 - r);
        }
        linalg::axpy(lambda, phi, &mut self.g);
        self.add_coef(i, lambda * s as f64);
        self.res = res;
        rec.lambda = Some(lambda);
        rec.w = Some(r);
        Ok(())
    }

    fn apply_relax(&mut self, i: usize, s: i8, w: f64, lambda: f64, rec: &mut StepRecord) {
        let phi = self.dict.signed(i, s);
        let g: Element = self.g.iter().zip(&phi).map(|(gv, pv)| (1.0 - w) * gv + lambda * pv).collect();
        self.scale_coef(1.0 - w);
        self.add_coef(i, lambda * s as f64);
        self.set_g(g);
        rec.w = Some(w);
        rec.lambda = Some(lambda);
    }

    fn eta_level(&self, m: usize) -> f64 {
        let qd = self.params.q_dual();
        match self.alg {
            Algorithm::Awcga { eta, weakness, .. } | Algorithm::Awgafr { eta, weakness, .. } | Algorithm::Arwrga { eta, weakness, .. } => {
                let prev = self.steps.last().map_or(self.f_norm, |r| r.residual_norm);
                eta.level(m, weakness.value(m), prev, qd)
            }
            _ => 0.0,
        }
    }

    fn delta_level(&self, m: usize) -> f64 {
        let qd = self.params.q_dual();
        match self.alg {
            Algorithm::Awcga { delta, weakness, .. } | Algorithm::Awgafr { delta, weakness, .. } | Algorithm::Arwrga { delta, weakness, .. } => {
                delta.level(m + 1, weakness.value(m + 1), self.res_norm, qd)
            }
            _ => 0.0,
        }
    }

    /// F = normalize(F_{f_m} + δ·noise) with ‖F‖ ≤ 1 and F(f_m) ≥ (1−δ)‖f_m‖.
    fn approximate_functional(&mut self, delta: f64) -> Option<DualFunctional> {
        let exact = self.current_functional()?;
        if delta <= 0.0 {
            return Some(exact);
        }
        let pd = self.space.dual_exponent();
        for _ in 0..1000 {
            let z: Vec<f64> = (0..self.space.dim).map(|_| StandardNormal.sample(&mut self.perturb_rng)).collect();
            let nz = crate::space::lp_norm(&z, pd);
            if nz == 0.0 {
                continue;
            }
            let mut coords: Vec<f64> = exact.coords.iter().zip(&z).map(|(a, b)| a + delta * b / nz).collect();
            let nf = crate::space::lp_norm(&coords, pd);
            if nf > 1.0 {
                coords.iter_mut().for_each(|v| *v /= nf);
            }
            let cand = DualFunctional { coords };
            if cand.eval(&self.res) >= (1.0 - delta) * self.res_norm {
                return Some(cand);
            }
        }
        self.flags.push("approximate functional fell back to the exact one".into());
        Some(exact)
    }

    /// Moves `x` along `dir` so that obj(x) rises from `opt` to opt·(1+η·u).
    fn loosen(&mut self, eta: f64, opt: f64, x: &[f64], dir: &[f64], obj: &dyn Fn(&[f64]) -> f64) -> Vec<f64> {
        if eta <= 0.0 || opt <= 0.0 || dir.iter().all(|v| *v == 0.0) {
            return x.to_vec();
        }
        let u: f64 = self.perturb_rng.gen_range(0.0..1.0);
        let target = opt * (1.0 + eta * u);
        let at = |s: f64| -> Vec<f64> { x.iter().zip(dir).map(|(a, b)| a + s * b).collect() };
        let mut hi = 1.0;
        let mut guard = 0;
        while obj(&at(hi)) < target && guard < 200 {
            hi *= 2.0;
            guard += 1;
        }
        let mut lo = 0.0;
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if obj(&at(mid)) <= target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        at(lo)
    }

    fn chebyshev_step(&mut self, m: usize, i: usize, rec: &mut StepRecord) -> Result<Step> {
        if self.selected.contains(&i) {
            self.flags.push(format!("m={m}: reselected element {i}"));
        } else {
            self.selected.push(i);
        }
        let span: Vec<&[f64]> = self.selected.iter().map(|&j| self.dict.element(j)).collect();
        let pr = match steps::chebyshev_project(&self.space, &self.f, &span, &self.opts.solver) {
            Ok(pr) => pr,
            Err(GreedyError::NonConvergence { .. }) => return Ok(Step::Stop(StopReason::ProjectorFailure)),
            Err(e) => return Err(e),
        };
        if !pr.dropped.is_empty() {
            self.flags.push(format!("m={m}: dropped dependent directions {:?}", pr.dropped));
        }
        let mut coefs = pr.coefficients.clone();
        if self.is_approximate() {
            let eta = self.eta_level(m);
            rec.eta = Some(eta);
            rec.reference_residual_norm = Some(pr.residual_norm);
            if eta > 0.0 {
                let dir: Vec<f64> = (0..coefs.len()).map(|_| StandardNormal.sample(&mut self.perturb_rng)).collect();
                let (space, f) = (self.space, self.f.clone());
                let span_owned: Vec<Element> = span.iter().map(|s| s.to_vec()).collect();
                let obj = move |c: &[f64]| -> f64 {
                    let refs: Vec<&[f64]> = span_owned.iter().map(|v| v.as_slice()).collect();
                    space.norm(&steps::residual_of(&f, &refs, c))
                };
                coefs = self.loosen(eta, pr.residual_norm, &coefs, &dir, &obj);
            }
        }
        self.coef.clear();
        let mut g = vec![0.0; self.space.dim];
        for (&j, &c) in self.selected.iter().zip(&coefs) {
            linalg::axpy(c, self.dict.element(j), &mut g);
            self.coef.insert(j, c);
        }
        if self.is_approximate() && coefs != pr.coefficients {
            self.set_g(g);
        } else {
            self.res = pr.residual;
            self.g = g;
        }
        Ok(Step::Continue)
    }

    fn free_relax_step(&mut self, m: usize, i: usize, s: i8, phi: &[f64], rec: &mut StepRecord) -> Result<Step> {
        let fr = match steps::free_relax(&self.space, &self.f, &self.g, phi, &self.opts.solver) {
            Ok(fr) => fr,
            Err(GreedyError::NonConvergence { .. }) => return Ok(Step::Stop(StopReason::ProjectorFailure)),
            Err(e) => return Err(e),
        };
        let (mut w, mut lambda) = (fr.w, fr.lambda);
        if self.is_approximate() {
            let mut opt = fr.residual_norm;
            if lambda < 0.0 {
                // Constrained to λ ≥ 0: best multiple of G alone.
                lambda = 0.0;
                if self.g.iter().any(|v| *v != 0.0) {
                    let (a, nr) = steps::line_search_with(&self.space, &self.f, &self.g, &self.opts.solver)?;
                    w = 1.0 - a;
                    opt = nr;
                } else {
                    w = 0.0;
                    opt = self.f_norm;
                }
                self.flags.push(format!("m={m}: free relaxation clamped to lambda = 0"));
            }
            let eta = self.eta_level(m);
            rec.eta = Some(eta);
            rec.reference_residual_norm = Some(opt);
            if eta > 0.0 {
                let mut dir = [StandardNormal.sample(&mut self.perturb_rng), StandardNormal.sample(&mut self.perturb_rng)];
                if self.g.iter().all(|v| *v == 0.0) {
                    dir[0] = 0.0;
                }
                if lambda == 0.0 {
                    dir[1] = f64::abs(dir[1]);
                }
                let (space, f, g, phi_v) = (self.space, self.f.clone(), self.g.clone(), phi.to_vec());
                let obj = move |x: &[f64]| -> f64 {
                    let r: Vec<f64> = (0..f.len()).map(|k| f[k] - (1.0 - x[0]) * g[k] - x[1] * phi_v[k]).collect();
                    space.norm(&r)
                };
                let x = self.loosen(eta, opt, &[w, lambda], &dir, &obj);
                w = x[0];
                lambda = x[1].max(0.0);
            }
        }
        self.apply_relax(i, s, w, lambda, rec);
        Ok(Step::Continue)
    }

    fn rescaled_step(&mut self, m: usize, i: usize, s: i8, phi: &[f64], rec: &mut StepRecord) -> Result<Step> {
        let space = self.space;
        let solver = self.opts.solver;
        let approx = self.is_approximate();
        let eta = if approx { self.eta_level(m) } else { 0.0 };
        let (mut lambda, mut opt_l) = steps::line_search_with(&space, &self.res, phi, &solver)?;
        if lambda < 0.0 {
            self.flags.push(format!("m={m}: negative line-search step {lambda:e} clamped to 0"));
            lambda = 0.0;
            opt_l = self.res_norm;
        }
        if approx && eta > 0.0 {
            let dir = [if self.perturb_rng.gen::<bool>() || lambda == 0.0 { 1.0 } else { -1.0 }];
            let (res, phi_v) = (self.res.clone(), phi.to_vec());
            let obj = move |x: &[f64]| -> f64 {
                let r: Vec<f64> = res.iter().zip(&phi_v).map(|(a, b)| a - x[0] * b).collect();
                space.norm(&r)
            };
            lambda = self.loosen(eta, opt_l, &[lambda], &dir, &obj)[0].max(0.0);
        }
        let h: Element = self.g.iter().zip(phi).map(|(a, b)| a + lambda * b).collect();
        let (mut mu, mut opt_mu) = if h.iter().all(|v| *v == 0.0) {
            (1.0, self.f_norm)
        } else {
            steps::line_search_with(&space, &self.f, &h, &solver)?
        };
        if approx {
            if mu < 0.0 {
                mu = 0.0;
                opt_mu = self.f_norm;
                self.flags.push(format!("m={m}: rescaling clamped to mu = 0"));
            }
            rec.eta = Some(eta);
            rec.reference_residual_norm = Some(opt_mu);
            if eta > 0.0 {
                let dir = [if self.perturb_rng.gen::<bool>() || mu == 0.0 { 1.0 } else { -1.0 }];
                let (f, hv) = (self.f.clone(), h.clone());
                let obj = move |x: &[f64]| -> f64 {
                    let r: Vec<f64> = f.iter().zip(&hv).map(|(a, b)| a - x[0] * b).collect();
                    space.norm(&r)
                };
                mu = self.loosen(eta, opt_mu, &[mu], &dir, &obj)[0].max(0.0);
            }
        }
        self.add_coef(i, lambda * s as f64);
        self.scale_coef(mu);
        let g: Element = h.iter().map(|v| mu * v).collect();
        self.set_g(g);
        rec.lambda = Some(lambda);
        rec.mu = Some(mu);
        Ok(Step::Continue)
    }

    /// Expansion coefficients sorted by decreasing magnitude, ties by index.
    fn tga_prepare(&mut self) -> Option<StopReason> {
        let n = self.space.dim;
        let mut a = Mat::zeros(n, n);
        for (k, g) in self.dict.elements().iter().enumerate() {
            for i in 0..n {
                a[(i, k)] = g[i];
            }
        }
        let c = linalg::solve_partial_pivot(&a, &self.f, 1e-12)?;
        let mut order: Vec<(usize, f64)> = c.into_iter().enumerate().collect();
        order.sort_by(|x, y| y.1.abs().total_cmp(&x.1.abs()).then(x.0.cmp(&y.0)));
        self.tga_order = order;
        None
    }
}

//! Acceptance suite: one line per criterion, nonzero exit if any fails.

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use rand_distr::{Distribution, StandardNormal};

use lpgreedy::algorithms::{self, Algorithm, Formula, RunOptions, Schedule};
use lpgreedy::bilinear;
use lpgreedy::harness::{self, BoundSpec, DataSpec, DictionarySpec, Experiment, NoiseExperiment, RecoveryExperiment, SpaceSpec, TerminationSweep};
use lpgreedy::linalg::{self, Mat};
use lpgreedy::oracle::{self, RecursionSpec, ALL_LEMMAS};
use lpgreedy::rng;
use lpgreedy::{Dictionary, SpaceLp};

const PS: [f64; 4] = [1.5, 2.0, 3.0, 4.0];

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict { passed, detail: detail.into() }
}

fn constant(t: f64) -> Schedule {
    Schedule::constant(t)
}

fn gaussian(n: usize, r: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(r)).collect()
}

/// Gram–Schmidt on Gaussian vectors.
fn orthonormal_basis(n: usize, r: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    while basis.len() < n {
        let mut v = gaussian(n, r);
        for _ in 0..2 {
            for b in &basis {
                let c = linalg::dot(&v, b);
                linalg::axpy(-c, b, &mut v);
            }
        }
        let nv = linalg::norm2(&v);
        if nv > 1e-6 {
            basis.push(v.iter().map(|x| x / nv).collect());
        }
    }
    basis
}

fn gaps_ok(reports: &[&harness::Report]) -> (usize, f64) {
    let mut count = 0;
    let mut worst = f64::INFINITY;
    for r in reports {
        if let Some(c) = r.check("oracle_dominance") {
            count += 1;
            worst = worst.min(c.worst);
        }
    }
    (count, worst)
}

fn c1_hilbert() -> Verdict {
    let mut r = rng::from_seed(101);
    let opts = RunOptions::default();
    let mut worst_eq: f64 = 0.0;
    let mut worst_orth: f64 = 0.0;
    for trial in 0..20 {
        let n = [4, 8, 16, 32, 64][trial % 5];
        let space = SpaceLp::new(n, 2.0).unwrap();
        let dict = Dictionary::new(&space, orthonormal_basis(n, &mut r), "orthonormal").unwrap();
        let f = gaussian(n, &mut r);
        let pga = algorithms::run(&Algorithm::Pga, &dict, &f, n, &opts).unwrap().residual_norms();
        let tga = algorithms::run(&Algorithm::Tga, &dict, &f, n, &opts).unwrap().residual_norms();
        let qoga = algorithms::run(&Algorithm::Qoga, &dict, &f, n, &opts).unwrap().residual_norms();
        let len = pga.len().max(tga.len()).max(qoga.len());
        let at = |v: &[f64], m: usize| if m < v.len() { v[m] } else { 0.0 };
        for m in 0..len {
            worst_eq = worst_eq.max((at(&pga, m) - at(&tga, m)).abs()).max((at(&pga, m) - at(&qoga, m)).abs());
        }
        // WCGA on a redundant dictionary: the residual annihilates the chosen span.
        let red = Dictionary::random_unit_with(&space, 2 * n, &mut r);
        let tr = algorithms::run(&Algorithm::Wcga { weakness: constant(0.7) }, &red, &f, n / 2, &opts).unwrap();
        for st in &tr.steps[1..] {
            for term in &st.terms {
                worst_orth = worst_orth.max(linalg::dot(&st.residual, red.element(term.index)).abs());
            }
        }
    }
    verdict(worst_eq <= 1e-9 && worst_orth <= 1e-9, format!("max PGA/TGA/QOGA gap {worst_eq:.2e}, max |<f_m,phi_j>| {worst_orth:.2e}"))
}

fn rate_experiment(id: &str, p: f64, algorithms: Vec<Algorithm>, reps: usize, m_max: usize, bounds: Vec<BoundSpec>, seed: u64) -> Experiment {
    Experiment {
        id: id.into(),
        algorithms,
        space: SpaceSpec { dim: 32, p },
        dictionary: DictionarySpec::RandomUnit { count: 48 },
        data: DataSpec::A1 { sparsity: 12 },
        m_max,
        replications: reps,
        seed,
        bounds,
        oracle_m: 0,
        record_vectors: false,
        solver: Default::default(),
    }
}

fn c2_rate() -> Verdict {
    let mut runs = 0;
    let mut worst: f64 = 0.0;
    let mut failed = Vec::new();
    for (pi, &p) in PS.iter().enumerate() {
        for t in [1.0, 0.5] {
            let algs = vec![Algorithm::Wcga { weakness: constant(t) }, Algorithm::Wgafr { weakness: constant(t) }, Algorithm::Rwrga { weakness: constant(t) }];
            let exp = rate_experiment(&format!("ut3-p{p}-t{t}"), p, algs, 200, 256, vec![BoundSpec::WbgaRate], 2000 + pi as u64);
            let out = harness::rate_sweep(&exp).unwrap();
            runs += out.report.replications.len();
            let c = &out.report.checks[0];
            worst = worst.max(c.worst);
            if !out.report.passed {
                failed.push(format!("p={p} t={t}: {}", c.detail));
            }
        }
    }
    verdict(failed.is_empty(), format!("{runs} runs, largest ratio {worst:.4} {}", failed.join("; ")))
}

fn c3_wga() -> Verdict {
    let schedules = [constant(1.0), constant(0.5), Schedule::formula(Formula::InverseLog)];
    let algs = schedules.iter().map(|s| Algorithm::Wga { weakness: s.clone() }).collect();
    let exp = rate_experiment("wga", 2.0, algs, 100, 512, vec![BoundSpec::WgaRate], 3000);
    let out = harness::rate_sweep(&exp).unwrap();
    let c = &out.report.checks[0];
    verdict(out.report.passed, format!("{} runs, largest ratio {:.4}", out.report.replications.len(), c.worst))
}

fn c4_bilinear() -> Verdict {
    let mut r = rng::from_seed(404);
    let mut worst: f64 = 0.0;
    for i in 0..50 {
        let (rows, cols) = if i == 0 { (32, 24) } else { (r.gen_range(1..=32), r.gen_range(1..=24)) };
        let data = gaussian(rows * cols, &mut r);
        let mat = Mat::from_rows(rows, cols, data);
        let m = rows.min(cols);
        let (_, trace) = bilinear::pga_rank_one(&mat, m).unwrap();
        let scale = oracle::svd_tail(&mat, 0);
        for (k, &res) in trace.residual_norms.iter().enumerate() {
            let tail = oracle::svd_tail(&mat, k);
            // Relative error; at exhaustion (tail = 0) relative to ‖A‖.
            let rel = (res - tail).abs() / if tail > 1e-12 * scale { tail } else { scale };
            worst = worst.max(rel);
        }
    }
    verdict(worst <= 1e-8, format!("50 matrices, largest relative gap {worst:.2e}"))
}

fn c5_c6_recovery() -> (Verdict, Verdict, harness::Report) {
    let exp = RecoveryExperiment {
        id: "qoga".into(),
        dim: 24,
        p_values: PS.to_vec(),
        count: 24,
        coherence: [0.05, 0.3],
        t_values: vec![1.0, 0.5],
        trials: 500,
        lebesgue_trials: 200,
        lebesgue_count: 12,
        seed: 5000,
    };
    let out = harness::recovery_table(&exp).unwrap();
    let rec = out.report.check("exact_recovery").unwrap();
    let runs: f64 = out.report.tables[0].rows.iter().map(|row| row[2]).sum();
    let v5 = verdict(rec.passed && out.report.errors == 0, format!("500 dictionaries, {runs} recovery runs; {}", rec.detail));
    let leb = out.report.check("seminorm_lebesgue").unwrap();
    let v6 = verdict(leb.passed, format!("200 instances, largest ‖f_m‖_D/σ_m ratio {:.4}", leb.worst));
    (v5, v6, out.report)
}

fn c7_termination() -> (Verdict, Vec<harness::Report>) {
    let mut details = Vec::new();
    let mut passed = true;
    let mut reports = Vec::new();
    for (pi, &p) in PS.iter().enumerate() {
        let exp = TerminationSweep {
            id: format!("a1t2-p{p}"),
            space: SpaceSpec { dim: 8, p },
            dictionary: DictionarySpec::RandomUnit { count: 12 },
            data: DataSpec::A1 { sparsity: 6 },
            deltas: vec![0.5, 0.25, 0.1],
            m_max: 100_000,
            replications: 20,
            seed: 7000 + pi as u64,
            oracle_m: 4,
        };
        let out = harness::termination_sweep(&exp).unwrap();
        for name in ["DGART", "CGAT"] {
            let stop = out.report.check(&format!("stops_below_delta:{name}")).unwrap();
            let trend = out.report.check(&format!("iteration_trend:{name}")).unwrap();
            passed &= stop.passed && trend.passed;
            details.push(format!("p={p} {name} c-ratio {:.2}{}", trend.worst, if stop.passed { "" } else { " (stopped above δ)" }));
        }
        passed &= out.report.errors == 0;
        reports.push(out.report);
    }
    (verdict(passed, details.join(", ")), reports)
}

fn c8_incremental() -> Verdict {
    let mut worst_growth: f64 = 0.0;
    let mut worst_mass: f64 = 0.0;
    let mut failures = 0;
    let m_max = 4096;
    for i in 0..100 {
        let p = PS[i % 4];
        let space = SpaceLp::new(32, p).unwrap();
        let params = space.smoothness_params();
        let qd = params.q_dual();
        let mut r = rng::stream(8000, "ia", i as u64);
        let dict = Dictionary::random_unit_with(&space, 48, &mut r);
        let (f, _) = dict.sample_a1_with(12, &mut r).unwrap();
        let eps = Schedule::formula(Formula::IncrementalEps { k1: 1.0, gamma: params.gamma, q: params.q });
        let opts = RunOptions { record_vectors: true, ..RunOptions::default() };
        let tr = algorithms::run(&Algorithm::IaEps { epsilon: eps }, &dict, &f, m_max, &opts).unwrap();
        for st in &tr.steps[1..] {
            let mass: f64 = st.terms.iter().map(|t| t.weight).sum();
            worst_mass = worst_mass.max((mass - 1.0).abs());
        }
        let scaled: Vec<f64> = tr.steps[1..].iter().map(|s| s.residual_norm * (s.m as f64).powf(1.0 / qd)).collect();
        // C fitted on [64, M], checked on (M, 2M] with 2M = m_max.
        let (_, growth) = harness::stable_constant(&scaled, 64);
        let g = growth.unwrap();
        worst_growth = worst_growth.max(g);
        if g > 1.05 {
            failures += 1;
        }
    }
    verdict(failures == 0 && worst_mass <= 1e-12, format!("100 instances, largest growth over the fitted constant {worst_growth:.4}, coefficient mass error {worst_mass:.1e}"))
}

fn c9_lemmas() -> Verdict {
    let mut worst: f64 = 0.0;
    let mut failed = Vec::new();
    for lemma in ALL_LEMMAS {
        let spec = RecursionSpec { horizon: 100_000, ..RecursionSpec::default_for(lemma) };
        let adv = oracle::simulate_recursion(&spec, true, 9000).unwrap();
        let mut lemma_worst = adv.max_ratio;
        let mut ok = adv.passed;
        let mut r = rng::stream(9000, "lemma-params", lemma as u64);
        let specs: Vec<RecursionSpec> = (0..1000).map(|_| RecursionSpec::random(lemma, 100_000, &mut r)).collect();
        let runs: Vec<(f64, bool)> = specs
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                let rep = oracle::simulate_recursion(s, false, 9001 + i as u64).unwrap();
                (rep.max_ratio, rep.passed)
            })
            .collect();
        for (ratio, passed) in runs {
            lemma_worst = lemma_worst.max(ratio);
            ok &= passed;
        }
        worst = worst.max(lemma_worst);
        if !ok {
            failed.push(format!("{lemma} ({lemma_worst:.6})"));
        }
    }
    verdict(failed.is_empty(), format!("12 lemmas × 1001 runs, largest ratio {worst:.9} {}", failed.join(" ")))
}

fn c10_sandwich() -> Verdict {
    let mut r = rng::from_seed(1010);
    let mut worst_low: f64 = 0.0;
    let mut worst_high = f64::NEG_INFINITY;
    let mut failures = 0;
    for i in 0..10_000 {
        let p = PS[i % 4];
        let n = r.gen_range(1..=16);
        let space = SpaceLp::new(n, p).unwrap();
        let x = gaussian(n, &mut r);
        let scale = 10f64.powf(r.gen_range(-3.0..2.0));
        let y: Vec<f64> = gaussian(n, &mut r).iter().map(|v| v * scale).collect();
        let u = 10f64.powf(r.gen_range(-4.0..1.0));
        let (lhs, rhs) = space.smoothness_inequality_check(&x, &y, u).unwrap();
        worst_low = worst_low.min(lhs);
        worst_high = worst_high.max(lhs - rhs);
        if lhs < -1e-9 || lhs > rhs + 1e-9 {
            failures += 1;
        }
    }
    verdict(failures == 0, format!("10000 checks, min lhs {worst_low:.2e}, max lhs − rhs {worst_high:.2e}"))
}

fn c11_noise() -> Verdict {
    let mut worst: f64 = 0.0;
    let mut failed = Vec::new();
    for (pi, &p) in PS.iter().enumerate() {
        let exp = NoiseExperiment {
            id: format!("st1-p{p}"),
            algorithms: vec![Algorithm::Wcga { weakness: constant(1.0) }, Algorithm::Wgafr { weakness: constant(1.0) }, Algorithm::Rwrga { weakness: constant(1.0) }],
            space: SpaceSpec { dim: 32, p },
            dictionary: DictionarySpec::RandomUnit { count: 48 },
            sparsity: 12,
            amplitude: 1.0,
            epsilons: vec![1e-3, 1e-2, 1e-1],
            m_max: 256,
            replications: 50,
            seed: 11_000 + pi as u64,
            approximate: None,
        };
        let out = harness::noise_and_approx_study(&exp).unwrap();
        let c = &out.report.checks[0];
        worst = worst.max(c.worst);
        if !out.report.passed {
            failed.push(format!("p={p}: {}", c.detail));
        }
    }
    verdict(failed.is_empty(), format!("4 exponents × 3 ε × 50 instances × 3 algorithms, largest ratio {worst:.4} {}", failed.join("; ")))
}

fn c12_oracle(previous: &[&harness::Report]) -> Verdict {
    let families = |t: f64| {
        vec![
            Algorithm::Wcga { weakness: constant(t) },
            Algorithm::Wgafr { weakness: constant(t) },
            Algorithm::Rwrga { weakness: constant(t) },
            Algorithm::Wdga { weakness: constant(t) },
            Algorithm::Xga,
            Algorithm::Qoga,
            Algorithm::Wrga { weakness: constant(t) },
            Algorithm::IaEps { epsilon: Schedule::formula(Formula::IncrementalEps { k1: 1.0, gamma: 0.5, q: 2.0 }) },
        ]
    };
    let mut reports = Vec::new();
    for (pi, &p) in PS.iter().enumerate() {
        for t in [1.0, 0.5] {
            let mut exp = rate_experiment(&format!("oracle-p{p}-t{t}"), p, families(t), 25, 4, vec![], 12_000 + pi as u64);
            exp.space.dim = 6;
            exp.dictionary = DictionarySpec::RandomUnit { count: 12 };
            exp.data = DataSpec::Gaussian;
            exp.oracle_m = 4;
            reports.push(harness::rate_sweep(&exp).unwrap().report);
        }
    }
    let mut all: Vec<&harness::Report> = reports.iter().collect();
    all.extend_from_slice(previous);
    let (count, worst) = gaps_ok(&all);
    verdict(worst >= -harness::ORACLE_SLACK && count > 0, format!("{count} experiments compared, smallest ‖f_m‖ − σ_m {worst:.3e}"))
}

fn c13_determinism() -> Verdict {
    let algs = vec![Algorithm::Wcga { weakness: constant(0.5) }, Algorithm::Rwrga { weakness: constant(1.0) }];
    let exp = rate_experiment("determinism", 3.0, algs, 10, 64, vec![BoundSpec::WbgaRate], 13_000);
    let a = harness::rate_sweep(&exp).unwrap();
    let b = harness::rate_sweep(&exp).unwrap();
    let csv = |o: &harness::Outcome| o.traces.iter().map(|t| t.trace.to_csv()).collect::<Vec<_>>();
    let same_csv = csv(&a) == csv(&b);
    let same_report = a.report.to_json() == b.report.to_json();
    let noise = |seed| NoiseExperiment {
        id: "determinism-noise".into(),
        algorithms: vec![Algorithm::Wgafr { weakness: constant(1.0) }],
        space: SpaceSpec { dim: 16, p: 1.5 },
        dictionary: DictionarySpec::RandomUnit { count: 24 },
        sparsity: 6,
        amplitude: 1.0,
        epsilons: vec![1e-2],
        m_max: 64,
        replications: 5,
        seed,
        approximate: None,
    };
    let n1 = harness::noise_and_approx_study(&noise(1)).unwrap();
    let n2 = harness::noise_and_approx_study(&noise(1)).unwrap();
    let same_noise = csv(&n1) == csv(&n2);
    verdict(same_csv && same_report && same_noise, format!("{} trace CSVs compared byte for byte", a.traces.len() + n1.traces.len()))
}

fn main() {
    let mut all_passed = true;
    let mut report = |n: usize, name: &str, start: Instant, v: Verdict| {
        all_passed &= v.passed;
        println!("criterion {n:>2} [{}] {name}: {} ({:.1}s)", if v.passed { "PASS" } else { "FAIL" }, v.detail, start.elapsed().as_secs_f64());
    };
    let s = Instant::now();
    report(1, "Hilbert identities", s, c1_hilbert());
    let s = Instant::now();
    report(2, "explicit-constant rate bound", s, c2_rate());
    let s = Instant::now();
    report(3, "weak greedy rate bound", s, c3_wga());
    let s = Instant::now();
    report(4, "bilinear identity", s, c4_bilinear());
    let s = Instant::now();
    let (v5, v6, recovery) = c5_c6_recovery();
    report(5, "QOGA exact recovery", s, v5);
    report(6, "QOGA Lebesgue constant", s, v6);
    let s = Instant::now();
    let (v7, term_reports) = c7_termination();
    report(7, "DGART/CGAT termination", s, v7);
    let s = Instant::now();
    report(8, "IA(ε) schedule bound", s, c8_incremental());
    let s = Instant::now();
    report(9, "sequence lemmas", s, c9_lemmas());
    let s = Instant::now();
    report(10, "smoothness sandwich", s, c10_sandwich());
    let s = Instant::now();
    report(11, "noise robustness", s, c11_noise());
    let s = Instant::now();
    let mut previous: Vec<&harness::Report> = vec![&recovery];
    previous.extend(term_reports.iter());
    report(12, "oracle dominance", s, c12_oracle(&previous));
    let s = Instant::now();
    report(13, "determinism", s, c13_determinism());
    if !all_passed {
        std::process::exit(1);
    }
}

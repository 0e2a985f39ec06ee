use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use lpgreedy::bilinear;
use lpgreedy::harness::{self, ExperimentConfig, Outcome, RecoveryExperiment};
use lpgreedy::linalg::Mat;
use lpgreedy::oracle::{self, LemmaId, RecursionSpec};
use lpgreedy::{Dictionary, SpaceLp};

#[derive(Parser)]
#[command(name = "lpgreedy", version, about = "Greedy approximation experiments in finite-dimensional ℓ_p spaces")]
struct Cli {
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Output directory for reports and traces.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Runs the experiments of a JSON configuration file.
    Run { config: PathBuf },
    /// Best m-term error σ_m(f, D) by subset search.
    Oracle {
        /// GREEDYDICT v1 file; the canonical basis is used when omitted.
        #[arg(long)]
        dict: Option<PathBuf>,
        /// Exponent for the canonical basis.
        #[arg(long, default_value_t = 2.0)]
        p: f64,
        /// Comma-separated coordinates of f.
        #[arg(long, allow_hyphen_values = true)]
        signal: String,
        #[arg(long)]
        m: usize,
    },
    /// Simulates a sequence lemma: `lemmas LeL1 c1=1 c2=1 N=100000`.
    Lemmas {
        lemma: String,
        /// key=value parameters; N is the horizon.
        params: Vec<String>,
        /// Additional randomized runs.
        #[arg(long, default_value_t = 0)]
        trials: usize,
    },
    /// QOGA recovery table over coherent dictionaries.
    Recover {
        #[arg(long, default_value_t = 24)]
        dim: usize,
        #[arg(long, default_value_t = 24)]
        count: usize,
        #[arg(long, value_delimiter = ',', default_values_t = vec![2.0])]
        p: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.05, 0.3])]
        coherence: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![1.0, 0.5])]
        t: Vec<f64>,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        lebesgue_trials: usize,
    },
    /// Rank-one greedy expansion of a matrix against the singular value tail.
    Bilinear {
        /// GREEDYMAT v1 file.
        #[arg(long, conflicts_with = "diag")]
        matrix: Option<PathBuf>,
        /// Comma-separated diagonal entries instead of a file.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        diag: Option<Vec<f64>>,
        #[arg(long)]
        m: usize,
    },
}

/// A batch of experiments.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    experiments: Vec<ExperimentConfig>,
    /// Overridden by `--out`.
    #[serde(default)]
    out: Option<PathBuf>,
}

/// Hard-check failures exit with 2, execution errors with 1.
fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Run { config } => cmd_run(cli, config),
        Command::Oracle { dict, p, signal, m } => cmd_oracle(cli, dict.as_deref(), *p, signal, *m),
        Command::Lemmas { lemma, params, trials } => cmd_lemmas(cli, lemma, params, *trials),
        Command::Recover { dim, count, p, coherence, t, trials, lebesgue_trials } => {
            if coherence.len() != 2 {
                bail!("invalid parameter `coherence`: expected two values lo,hi");
            }
            let exp = RecoveryExperiment {
                id: "recover".into(),
                dim: *dim,
                p_values: p.clone(),
                count: *count,
                coherence: [coherence[0], coherence[1]],
                t_values: t.clone(),
                trials: *trials,
                lebesgue_trials: *lebesgue_trials,
                lebesgue_count: 12,
                seed: cli.seed.unwrap_or(0),
            };
            let outcome = harness::recovery_table(&exp)?;
            emit_report(cli, &outcome)
        }
        Command::Bilinear { matrix, diag, m } => {
            let mat = match (matrix, diag) {
                (Some(path), _) => bilinear::load_matrix(path)?,
                (None, Some(d)) => {
                    let n = d.len();
                    let mut mat = Mat::zeros(n, n);
                    for (i, v) in d.iter().enumerate() {
                        mat.data[i * n + i] = *v;
                    }
                    mat
                }
                (None, None) => bail!("one of --matrix or --diag is required"),
            };
            cmd_bilinear(cli, &mat, *m)
        }
    }
}

fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
}

fn cmd_run(cli: &Cli, config: &Path) -> Result<bool> {
    let cfg = load_config(config)?;
    if cfg.experiments.is_empty() {
        bail!("invalid parameter `experiments`: at least one experiment is required");
    }
    let out = cli.out.clone().or(cfg.out).unwrap_or_else(|| PathBuf::from("results"));
    let mut all_passed = true;
    let mut summaries = Vec::new();
    for mut exp in cfg.experiments {
        if let Some(seed) = cli.seed {
            exp.set_seed(seed);
        }
        let outcome = exp.run().with_context(|| format!("experiment `{}`", exp.id()))?;
        write_outcome(&out.join(exp.id()), &outcome)?;
        if outcome.report.errors > 0 {
            let first = outcome.report.replications.iter().find_map(|r| r.error.clone()).unwrap_or_default();
            bail!("experiment `{}`: {} runs failed; first error: {first}", exp.id(), outcome.report.errors);
        }
        all_passed &= !outcome.report.hard_failure();
        summaries.push(outcome.report);
    }
    match cli.format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&summaries)?),
        Format::Csv => {
            println!("experiment,check,kind,passed,worst");
            for r in &summaries {
                for c in &r.checks {
                    println!("{},{},{},{},{:e}", r.experiment, csv_field(&c.name), kind_name(c.kind), c.passed, c.worst);
                }
            }
        }
    }
    Ok(all_passed)
}

fn kind_name(k: harness::CheckKind) -> &'static str {
    match k {
        harness::CheckKind::Explicit => "explicit",
        harness::CheckKind::Existential => "existential",
        harness::CheckKind::Descriptive => "descriptive",
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn write_outcome(dir: &Path, outcome: &Outcome) -> Result<()> {
    let traces = dir.join("traces");
    fs::create_dir_all(&traces).with_context(|| format!("creating {}", traces.display()))?;
    fs::write(dir.join("report.json"), outcome.report.to_json())?;
    for t in &outcome.traces {
        fs::write(traces.join(format!("{}.csv", t.stem())), t.trace.to_csv())?;
    }
    Ok(())
}

/// Prints the report (JSON) or its checks (CSV) and writes it under `--out`.
fn emit_report(cli: &Cli, outcome: &Outcome) -> Result<bool> {
    if let Some(out) = &cli.out {
        write_outcome(&out.join(&outcome.report.experiment), outcome)?;
    }
    match cli.format {
        Format::Json => println!("{}", outcome.report.to_json()),
        Format::Csv => {
            for table in &outcome.report.tables {
                println!("{}", table.columns.iter().map(|c| csv_field(c)).collect::<Vec<_>>().join(","));
                for row in &table.rows {
                    println!("{}", row.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(","));
                }
            }
            println!("check,kind,passed,worst");
            for c in &outcome.report.checks {
                println!("{},{},{},{:e}", csv_field(&c.name), kind_name(c.kind), c.passed, c.worst);
            }
        }
    }
    Ok(!outcome.report.hard_failure())
}

fn parse_signal(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().with_context(|| format!("invalid parameter `signal`: `{v}` is not a number")))
        .collect()
}

fn cmd_oracle(cli: &Cli, dict: Option<&Path>, p: f64, signal: &str, m: usize) -> Result<bool> {
    let f = parse_signal(signal)?;
    let dict = match dict {
        Some(path) => Dictionary::load(path)?,
        None => Dictionary::canonical(&SpaceLp::new(f.len(), p)?),
    };
    let space = *dict.space();
    space.check_dim(&f)?;
    let res = oracle::best_m_term(&space, &dict, &f, m)?;
    match cli.format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&res)?),
        Format::Csv => {
            println!("m,sigma,exact,subsets,method,max_kkt,support");
            let support = res.support.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" ");
            println!("{m},{},{},{},{},{:e},{support}", res.value, res.exact, res.certificate.subsets, csv_field(&res.certificate.method), res.certificate.max_kkt);
        }
    }
    Ok(true)
}

/// Maps `key=value` pairs onto the recursion parameters; N is the horizon.
fn lemma_spec(lemma: LemmaId, params: &[String]) -> Result<RecursionSpec> {
    let mut value = serde_json::to_value(RecursionSpec::default_for(lemma))?;
    let map = value.as_object_mut().expect("spec is an object");
    for kv in params {
        let (k, v) = kv.split_once('=').with_context(|| format!("expected key=value, got `{kv}`"))?;
        let key = match k.trim() {
            "N" | "n" => "horizon".to_string(),
            other => other.to_ascii_lowercase(),
        };
        if key == "lemma" || !map.contains_key(&key) {
            bail!("invalid parameter `{k}`: unknown key");
        }
        let num: f64 = v.trim().parse().with_context(|| format!("invalid parameter `{k}`: `{v}` is not a number"))?;
        let json = if key == "horizon" {
            if num < 1.0 || num.fract() != 0.0 {
                bail!("invalid parameter `{k}`: must be a positive integer");
            }
            serde_json::json!(num as u64)
        } else {
            serde_json::json!(num)
        };
        map.insert(key, json);
    }
    Ok(serde_json::from_value(value)?)
}

#[derive(Serialize)]
struct LemmaRow {
    lemma: LemmaId,
    run: String,
    max_ratio: f64,
    argmax: usize,
    passed: bool,
}

fn cmd_lemmas(cli: &Cli, lemma: &str, params: &[String], trials: usize) -> Result<bool> {
    let id: LemmaId = lemma.parse()?;
    let spec = lemma_spec(id, params)?;
    let seed = cli.seed.unwrap_or(0);
    let mut rows = Vec::new();
    let adv = oracle::simulate_recursion(&spec, true, seed)?;
    rows.push(LemmaRow { lemma: id, run: "adversarial".into(), max_ratio: adv.max_ratio, argmax: adv.argmax, passed: adv.passed });
    for i in 0..trials {
        let s = lpgreedy::rng::stream_seed(seed, "lemmas", i as u64);
        let rep = oracle::simulate_recursion(&spec, false, s)?;
        rows.push(LemmaRow { lemma: id, run: format!("random{i}"), max_ratio: rep.max_ratio, argmax: rep.argmax, passed: rep.passed });
    }
    let worst = rows.iter().map(|r| r.max_ratio).fold(0.0, f64::max);
    let passed = rows.iter().all(|r| r.passed);
    match cli.format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&serde_json::json!({ "runs": rows, "max_ratio": worst, "passed": passed }))?),
        Format::Csv => {
            let mut s = String::from("lemma,run,max_ratio,argmax,passed\n");
            for r in &rows {
                writeln!(s, "{},{},{},{},{}", r.lemma, r.run, r.max_ratio, r.argmax, r.passed)?;
            }
            print!("{s}");
        }
    }
    Ok(passed)
}

#[derive(Serialize)]
struct BilinearRow {
    m: usize,
    residual: f64,
    tail: f64,
    delta: f64,
}

fn cmd_bilinear(cli: &Cli, mat: &Mat, m: usize) -> Result<bool> {
    let (terms, trace) = bilinear::pga_rank_one(mat, m)?;
    let rows: Vec<BilinearRow> = trace
        .residual_norms
        .iter()
        .enumerate()
        .map(|(k, &residual)| {
            let tail = oracle::svd_tail(mat, k);
            BilinearRow { m: k, residual, tail, delta: (residual - tail).abs() }
        })
        .collect();
    match cli.format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&serde_json::json!({ "rows": rows, "terms": terms }))?),
        Format::Csv => {
            println!("m,residual,tail,delta");
            for r in &rows {
                println!("{},{},{},{:e}", r.m, r.residual, r.tail, r.delta);
            }
        }
    }
    Ok(true)
}

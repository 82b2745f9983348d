//! `sasrc`: simulate, certify, compose and fit state-affine reservoirs.
//!
//! Exit status: 0 on success, 1 when a check fails or a system is rejected,
//! 2 on usage, I/O and parse errors.

use std::fs;
use std::io::{self, IsTerminal, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::{json, Value};

use sas_core::algebra::{self, CombineMode};
use sas_core::approx::{self, ApproxConfig, TargetSpec};
use sas_core::polymat::{self, MatrixPolynomial, DEFAULT_GRID_STEP, NILPOTENT_FLOAT_TOL};
use sas_core::reservoir::{SystemDoc, Trajectory};
use sas_core::stochastic::{self, EnsembleDescriptor, InputEnsemble};
use sas_core::verify::{self, Suite};
use sas_core::{BoundedSequence, EspMargin, System};

#[derive(Parser)]
#[command(name = "sasrc", version, about = "State-affine and linear reservoir workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a system on an input window and write its trajectory as CSV.
    Simulate {
        /// System JSON.
        #[arg(long)]
        system: PathBuf,
        /// Input CSV: header `dim,bound,extension`, then one row per step, oldest first.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Method::Recursion)]
        method: Method,
        /// Truncation tolerance of the series form.
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        /// Leading steps discarded by the recursion (default: enough to reach `tol`).
        #[arg(long)]
        washout: Option<usize>,
        /// Output file (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Certify a matrix polynomial or the polynomials of a system.
    Certify {
        /// Polynomial JSON `{"rows","cols","coeffs"}` or system JSON.
        file: PathBuf,
        /// λ for the coefficient condition (default: midpoint of the admissible range).
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_GRID_STEP)]
        grid_step: f64,
    },
    /// Sum or multiply two systems of the same kind.
    Compose {
        first: PathBuf,
        second: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        /// Weight of the second system in a sum.
        #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
        lambda: f64,
        /// Rescale the coupling blocks of a SAS product when the literal product fails recertification.
        #[arg(long)]
        balanced: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit reservoirs from a family schedule to a target filter.
    Approximate {
        /// Experiment JSON: `target`, `schedule`, optional `planted` and tuning keys.
        #[arg(long)]
        config: PathBuf,
        /// Directory for `candidates.csv` and `best_model.json`.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Used only when the config does not set it.
        #[arg(long)]
        restarts: Option<usize>,
        #[arg(long)]
        n_train: Option<usize>,
        #[arg(long)]
        n_test: Option<usize>,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        input_seed: Option<u64>,
        #[arg(long)]
        ridge: Option<f64>,
    },
    /// Compare path-wise and deterministic errors over a stochastic ensemble.
    Transfer {
        /// JSON with `target`, `model`, `ensemble` and optional `certificate`, `ensemble_csv`.
        #[arg(long)]
        config: PathBuf,
        /// Used only when the config does not set it.
        #[arg(long)]
        certificate: Option<f64>,
    },
    /// Run self-checks of the library invariants.
    Verify {
        /// Suites to run (default: all).
        #[arg(value_enum)]
        suites: Vec<SuiteArg>,
        /// Directory of system JSON files checked alongside random systems.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Recursion,
    Series,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Sum,
    Product,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Seqspace,
    Polymat,
    Reservoir,
    Algebra,
    Approx,
    Stochastic,
    All,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }
    fn check(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }
}

impl From<sas_core::Error> for Failure {
    fn from(e: sas_core::Error) -> Self {
        use sas_core::Error as E;
        let code = match e {
            E::Io(_) | E::Json(_) | E::Csv(_) | E::Parse(_) => 2,
            _ => 1,
        };
        Self { code, message: e.to_string() }
    }
}

type Outcome = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { system, input, method, tol, washout, out } => {
            simulate(&system, &input, method, tol, washout, out.as_deref())
        }
        Command::Certify { file, lambda, grid_step } => certify(&file, lambda, grid_step),
        Command::Compose { first, second, mode, lambda, balanced, out } => {
            compose(&first, &second, mode, lambda, balanced, out.as_deref())
        }
        Command::Approximate { config, out_dir, restarts, n_train, n_test, window, input_seed, ridge } => {
            let flags = [
                ("restarts", restarts.map(Value::from)),
                ("n_train", n_train.map(Value::from)),
                ("n_test", n_test.map(Value::from)),
                ("window", window.map(Value::from)),
                ("input_seed", input_seed.map(Value::from)),
                ("ridge_grid", ridge.map(|r| json!([r]))),
            ];
            run_approximate(&config, &out_dir, &flags)
        }
        Command::Transfer { config, certificate } => transfer(&config, certificate),
        Command::Verify { suites, corpus, seed } => run_verify(&suites, corpus.as_deref(), seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{} {}", paint("error:", Paint::Red), f.message);
            ExitCode::from(f.code)
        }
    }
}

// -- output helpers ------------------------------------------------------------

#[derive(Clone, Copy)]
enum Paint {
    Red,
    Green,
}

/// Colour only for terminals, and never when `NO_COLOR` is set to a non-empty value.
fn paint(s: &str, p: Paint) -> String {
    let off = std::env::var_os("NO_COLOR").is_some_and(|v| !v.is_empty());
    if off || !io::stderr().is_terminal() || !io::stdout().is_terminal() {
        return s.to_string();
    }
    let code = match p {
        Paint::Red => 31,
        Paint::Green => 32,
    };
    format!("\x1b[{code}m{s}\x1b[0m")
}

fn read(path: &Path) -> std::result::Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path) -> std::result::Result<T, Failure> {
    serde_json::from_str(&read(path)?).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn load_system(path: &Path) -> std::result::Result<System, Failure> {
    let doc: SystemDoc = parse_json(path)?;
    System::from_doc(doc).map_err(|e| {
        let f = Failure::from(e);
        Failure { code: f.code, message: format!("{}: {}", path.display(), f.message) }
    })
}

fn write_output(out: Option<&Path>, body: impl FnOnce(&mut dyn Write) -> sas_core::Result<()>) -> Outcome {
    match out {
        Some(p) => {
            let f = fs::File::create(p).map_err(|e| Failure::usage(format!("{}: {e}", p.display())))?;
            let mut w = io::BufWriter::new(f);
            body(&mut w)?;
            w.flush().map_err(|e| Failure::usage(format!("{}: {e}", p.display())))?;
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            body(&mut lock)?;
        }
    }
    Ok(())
}

fn print_json(v: &Value) -> Outcome {
    println!("{}", serde_json::to_string_pretty(v).expect("values serialize"));
    Ok(())
}

/// Values found in the config win; flags fill only the keys it leaves unset.
fn merge_flags(config: &mut Value, flags: &[(&str, Option<Value>)]) -> Outcome {
    let obj = config.as_object_mut().ok_or_else(|| Failure::usage("config must be a JSON object"))?;
    for (key, value) in flags {
        if let Some(v) = value {
            obj.entry(key.to_string()).or_insert_with(|| v.clone());
        }
    }
    Ok(())
}

// -- subcommands -----------------------------------------------------------------

fn simulate(
    system: &Path,
    input: &Path,
    method: Method,
    tol: f64,
    washout: Option<usize>,
    out: Option<&Path>,
) -> Outcome {
    let sys = load_system(system)?;
    let z = BoundedSequence::read_csv(read(input)?.as_bytes())
        .map_err(|e| Failure::usage(format!("{}: {e}", input.display())))?;
    let (traj, state_bound): (Trajectory, f64) = match (&sys, method) {
        (System::Sas(s), Method::Recursion) => {
            let w = washout.unwrap_or_else(|| s.default_washout(tol)).min(z.len());
            (s.sas_run_recursion(&z, None, w)?, s.state_bound())
        }
        (System::Sas(s), Method::Series) => (s.sas_run_series(&z, tol)?, s.state_bound()),
        (System::Linear(l), Method::Recursion) => {
            let w = washout.unwrap_or_else(|| linear_washout(l.sigma_a(), l.state_bound(z.bound()), tol)).min(z.len());
            (l.linear_run_recursion(&z, None, w)?, l.state_bound(z.bound()))
        }
        (System::Linear(l), Method::Series) => (l.linear_run(&z, tol)?, l.state_bound(z.bound())),
    };
    write_output(out, |w| traj.write_csv(w))?;
    eprintln!("state bound      {state_bound:.6e}");
    eprintln!("esp margin       {:.6e}", sys.esp_margin());
    eprintln!("washout          {}", traj.washout_len);
    eprintln!("tail bound       {:.6e}", traj.truncation_tail_bound);
    Ok(())
}

/// Smallest `T` with `σ^T · bound < tol`, from a zero start.
fn linear_washout(sigma: f64, bound: f64, tol: f64) -> usize {
    if sigma == 0.0 || bound == 0.0 {
        return 1;
    }
    let t = ((tol / bound).ln() / sigma.ln()).ceil();
    if t.is_finite() && t > 0.0 {
        t as usize
    } else {
        1
    }
}

fn certify(file: &Path, lambda: Option<f64>, grid_step: f64) -> Outcome {
    let text = read(file)?;
    let v: Value = serde_json::from_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", file.display())))?;
    if v.get("kind").is_some() {
        let sys = load_system(file)?;
        let report = match &sys {
            System::Sas(s) => json!({
                "kind": "sas",
                "dim": s.dim(),
                "p": poly_report(s.p(), lambda, grid_step)?,
                "q": serde_json::to_value(s.q().norm_certificate(grid_step)?).expect("serializes"),
                "state_bound": s.state_bound(),
                "esp_margin": s.esp_margin(),
                "fingerprint": sys.fingerprint(),
            }),
            System::Linear(l) => json!({
                "kind": "linear",
                "dim": l.dim(),
                "sigma_max_A": l.sigma_a(),
                "sigma_max_c": l.sigma_c(),
                "diagonal": l.is_diagonal(),
                "nilpotency_index": l.nilpotent_index(),
                "esp_margin": l.esp_margin(),
                "fingerprint": sys.fingerprint(),
            }),
        };
        return print_json(&report);
    }
    let p: MatrixPolynomial =
        serde_json::from_value(v).map_err(|e| Failure::usage(format!("{}: {e}", file.display())))?;
    print_json(&poly_report(&p, lambda, grid_step)?)
}

/// The coefficient condition is satisfiable iff `max‖A_i‖ < 1/(r+1)`; the default λ splits that gap,
/// or halves the limit when there is none.
fn default_lambda(p: &MatrixPolynomial) -> f64 {
    let limit = 1.0 / (p.degree() + 1) as f64;
    let top = p.coeffs().iter().map(sas_core::linalg::spectral_norm).fold(0.0, f64::max);
    if top < limit {
        0.5 * (top + limit)
    } else {
        0.5 * limit
    }
}

fn poly_report(p: &MatrixPolynomial, lambda: Option<f64>, grid_step: f64) -> std::result::Result<Value, Failure> {
    let lambda = lambda.unwrap_or_else(|| default_lambda(p));
    let c = polymat::check_conditions(p, lambda, grid_step)?;
    let cert = c.certificate;
    let (nilpotent, index) = if p.rows() == p.cols() {
        let r = p.is_nilpotent(p.rows(), NILPOTENT_FLOAT_TOL)?;
        (Some(r.nilpotent), r.index)
    } else {
        (None, None)
    };
    Ok(json!({
        "rows": p.rows(),
        "cols": p.cols(),
        "degree": p.degree(),
        "B_p": cert.b_p,
        "M_p_lower": cert.m_p_lower,
        "M_p_upper": cert.m_p_upper,
        "M_p_prime": cert.m_pprime,
        "grid_step": cert.grid_step,
        "lambda": lambda,
        "cond_i": c.cond_i,
        "cond_ii": c.cond_ii,
        "cond_iii": c.cond_iii,
        "nilpotent": nilpotent,
        "nilpotency_index": index,
    }))
}

fn compose(first: &Path, second: &Path, mode: Mode, lambda: f64, balanced: bool, out: Option<&Path>) -> Outcome {
    let (a, b) = (load_system(first)?, load_system(second)?);
    let composed = match (&a, &b, mode) {
        (System::Sas(x), System::Sas(y), Mode::Sum) => algebra::sas_add(x, y, lambda)?,
        (System::Sas(x), System::Sas(y), Mode::Product) if balanced => algebra::sas_multiply_balanced(x, y)?,
        (System::Sas(x), System::Sas(y), Mode::Product) => algebra::sas_multiply(x, y).map_err(|e| {
            let f = Failure::from(e);
            Failure { code: f.code, message: format!("{}; retry with --balanced", f.message) }
        })?,
        (System::Linear(x), System::Linear(y), Mode::Sum) => algebra::linear_combine(x, y, CombineMode::Sum(lambda))?,
        (System::Linear(x), System::Linear(y), Mode::Product) => algebra::linear_combine(x, y, CombineMode::Product)?,
        _ => return Err(Failure::usage("both systems must be of the same kind")),
    };
    let text = composed.to_json()?;
    write_output(out, |w| {
        writeln!(w, "{text}")?;
        Ok(())
    })?;
    eprintln!("dimension        {}", composed.dim());
    eprintln!("eps              {:.6e}", composed.theoretical_eps);
    Ok(())
}

fn run_approximate(config: &Path, out_dir: &Path, flags: &[(&str, Option<Value>)]) -> Outcome {
    let mut v: Value = parse_json(config)?;
    merge_flags(&mut v, flags)?;
    let bad = |e: serde_json::Error| Failure::usage(format!("{}: {e}", config.display()));
    let target: TargetSpec = serde_json::from_value(v.get("target").cloned().ok_or_else(|| {
        Failure::usage(format!("{}: missing `target`", config.display()))
    })?)
    .map_err(bad)?;
    let planted: Vec<SystemDoc> = match v.get("planted") {
        Some(p) => serde_json::from_value(p.clone()).map_err(bad)?,
        None => Vec::new(),
    };
    let cfg: ApproxConfig = serde_json::from_value(v).map_err(bad)?;
    let target = target.build()?;
    let planted = planted.into_iter().map(System::from_doc).collect::<sas_core::Result<Vec<_>>>()?;
    let report = approx::approximate(&target, &cfg, &planted)?;

    fs::create_dir_all(out_dir).map_err(|e| Failure::usage(format!("{}: {e}", out_dir.display())))?;
    let csv_path = out_dir.join("candidates.csv");
    let model_path = out_dir.join("best_model.json");
    write_output(Some(&csv_path), |w| report.write_csv(w))?;
    let summary = report.summary_json()?;
    write_output(Some(&model_path), |w| {
        writeln!(w, "{summary}")?;
        Ok(())
    })?;

    let best = &report.records[report.best_index];
    println!("candidates       {}", report.records.len());
    println!("simulations      {}{}", report.simulations, if report.truncated { " (budget reached)" } else { "" });
    for p in &report.curve {
        println!("curve            {} N={} sup error {:.6e}", p.family, p.n, p.best_test_err);
    }
    println!("best             {} N={} restart {} sup error {:.6e}", best.family, best.n, best.restart, best.test_err);
    println!("wrote            {} {}", csv_path.display(), model_path.display());
    Ok(())
}

#[derive(Deserialize)]
struct TransferConfig {
    target: TargetSpec,
    model: TargetSpec,
    ensemble: EnsembleDescriptor,
    /// Paths are read from this CSV instead of being generated.
    #[serde(default)]
    ensemble_csv: Option<PathBuf>,
    #[serde(default)]
    certificate: Option<f64>,
}

fn transfer(config: &Path, certificate: Option<f64>) -> Outcome {
    let mut v: Value = parse_json(config)?;
    merge_flags(&mut v, &[("certificate", certificate.map(Value::from))])?;
    let cfg: TransferConfig =
        serde_json::from_value(v).map_err(|e| Failure::usage(format!("{}: {e}", config.display())))?;
    let (target, model) = (cfg.target.build()?, cfg.model.build()?);
    let d = cfg.ensemble;
    let ensemble = match &cfg.ensemble_csv {
        Some(p) => {
            let p = if p.is_relative() { config.parent().unwrap_or(Path::new(".")).join(p) } else { p.clone() };
            InputEnsemble::read_csv(d, read(&p)?.as_bytes())
                .map_err(|e| Failure::usage(format!("{}: {e}", p.display())))?
        }
        None => stochastic::generate_ensemble(d.generator, d.n_paths, d.window, d.dim, d.seed)?,
    };
    let rep = stochastic::transfer_check(&target, &model, &ensemble, cfg.certificate)?;
    print_json(&json!({
        "n_paths": rep.n_paths,
        "stochastic_sup_err": rep.stochastic_sup_err,
        "deterministic_sup_err": rep.deterministic_sup_err,
        "deterministic_bound_holds": rep.deterministic_bound_holds,
        "certificate": cfg.certificate,
        "certificate_holds": rep.certificate_holds,
    }))?;
    if !rep.deterministic_bound_holds {
        return Err(Failure::check("path-wise and deterministic sup errors disagree"));
    }
    if rep.certificate_holds == Some(false) {
        return Err(Failure::check("stochastic error exceeds the certificate"));
    }
    Ok(())
}

fn load_corpus(dir: &Path) -> std::result::Result<Vec<System>, Failure> {
    let entries = fs::read_dir(dir).map_err(|e| Failure::usage(format!("{}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| load_system(p)).collect()
}

fn run_verify(suites: &[SuiteArg], corpus: Option<&Path>, seed: u64) -> Outcome {
    let selected: Vec<Suite> = if suites.is_empty() || suites.iter().any(|s| matches!(s, SuiteArg::All)) {
        Suite::ALL.to_vec()
    } else {
        let mut v: Vec<Suite> = suites
            .iter()
            .map(|s| match s {
                SuiteArg::Seqspace => Suite::Seqspace,
                SuiteArg::Polymat => Suite::Polymat,
                SuiteArg::Reservoir => Suite::Reservoir,
                SuiteArg::Algebra => Suite::Algebra,
                SuiteArg::Approx => Suite::Approx,
                SuiteArg::Stochastic => Suite::Stochastic,
                SuiteArg::All => unreachable!("handled above"),
            })
            .collect();
        v.dedup();
        v
    };
    let systems = match corpus {
        Some(d) => load_corpus(d)?,
        None => Vec::new(),
    };
    let results = verify::run(&selected, &systems, seed);
    let mut failed = 0;
    for r in &results {
        let tag = if r.passed { paint("PASS", Paint::Green) } else { paint("FAIL", Paint::Red) };
        if !r.passed {
            failed += 1;
        }
        println!("{tag} {:<10} {}: {}", r.suite.as_str(), r.name, r.detail);
    }
    println!("{} checks, {} failed", results.len(), failed);
    if failed > 0 {
        return Err(Failure::check(format!("{failed} check(s) failed")));
    }
    Ok(())
}

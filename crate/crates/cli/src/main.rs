//! `exaddis`: simulations, dataset runs, the exact oracle and the session
//! server from the command line.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use exaddis_core::dataset::LoadOptions;
use exaddis_core::numfmt::sig17;
use exaddis_core::simulation::emit_curves;
use exaddis_core::{
    apply_profile, exact_fwer_global_null, load_pvalues, parse_alpha_grid, run_grid, ColumnSpec, ExperimentGrid,
    GammaSpec, Policy, PolicyConfig, Procedure,
};
use exaddis_service::SessionStore;
use sha2::{Digest, Sha256};

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  2  usage error (unknown flag, missing argument)
  3  invalid configuration (ranges, lambda bound, unknown procedure)
  4  invalid input data (unreadable CSV row, p-value outside [0, 1])
  5  apply --strict: a cell failed its admissibility check
  6  file or network I/O failure
  7  exact oracle refused (too many steps, rule not piecewise constant)
  8  checksum mismatch on fetch
  9  replay found quarantined sessions";

#[derive(Debug, Clone, Copy)]
enum Exit {
    Config = 3,
    Data = 4,
    Run = 5,
    Io = 6,
    Oracle = 7,
    Checksum = 8,
    Quarantine = 9,
}

struct Failure {
    exit: Exit,
    message: String,
}

fn fail(exit: Exit, message: impl std::fmt::Display) -> Failure {
    Failure { exit, message: message.to_string() }
}

type CmdResult = Result<(), Failure>;

#[derive(Parser)]
#[command(name = "exaddis", version, about = "Online FWER control with ADDIS and exhaustive ADDIS", after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a power/FWER simulation grid and write CSV curves.
    Simulate(SimulateArgs),
    /// Apply procedures to a CSV of p-values over an alpha grid.
    Apply(ApplyArgs),
    /// Exact global-null FWER of a procedure over n steps.
    Oracle(OracleArgs),
    /// Serve live sessions over HTTP.
    Serve(ServeArgs),
    /// Restore every session in a directory and print its state.
    Replay(ReplayArgs),
    /// Download a data file and verify its sha256.
    Fetch(FetchArgs),
}

#[derive(Args)]
struct OutDir {
    /// Output directory.
    #[arg(long, env = "EXADDIS_OUT_DIR", default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Figure grid: 3, 4 or 5.
    #[arg(long, required_unless_present = "config")]
    figure: Option<u8>,
    /// TOML grid file; replaces --figure.
    #[arg(long, conflicts_with = "figure")]
    config: Option<PathBuf>,
    /// Trials per cell [default: 500, 2000 with --full-scale, or the grid file's value].
    #[arg(long)]
    trials: Option<usize>,
    /// Use 2000 trials per figure cell.
    #[arg(long, conflicts_with = "trials")]
    full_scale: bool,
    /// Base seed [default: 1, or the grid file's value].
    #[arg(long)]
    seed: Option<u64>,
    /// Hypotheses per trial, overriding the grid.
    #[arg(long)]
    n: Option<usize>,
    #[command(flatten)]
    out: OutDir,
}

#[derive(Args)]
struct ApplyArgs {
    /// CSV file of p-values in testing order.
    #[arg(long)]
    input: PathBuf,
    /// p-value column: header name or 0-based index.
    #[arg(long, default_value = "0")]
    column: String,
    /// Optional identifier column.
    #[arg(long)]
    id_column: Option<String>,
    /// Use only the first N rows.
    #[arg(long)]
    limit: Option<usize>,
    /// Comma-separated procedures; defaults to the six compared procedures.
    #[arg(long, value_delimiter = ',')]
    procedures: Vec<Procedure>,
    /// start:stop:step (inclusive) or a comma-separated list.
    #[arg(long, default_value = "0.05:0.4:0.05")]
    alpha_grid: String,
    /// Policy template (TOML or JSON) supplying tau, lambda, gamma and weights.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Gamma sequence without --config: q_series or log_q:<s>.
    #[arg(long, default_value = "log_q:1.5")]
    gamma: String,
    #[arg(long, default_value_t = 0.8)]
    tau: f64,
    #[arg(long, default_value_t = 0.16)]
    lambda: f64,
    /// Also write every step's level and decision to decisions.csv.
    #[arg(long)]
    decisions: bool,
    /// Exit with status 5 when any cell aborts.
    #[arg(long)]
    strict: bool,
    #[command(flatten)]
    out: OutDir,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, required_unless_present = "config")]
    procedure: Option<Procedure>,
    #[arg(long, default_value_t = 0.2)]
    alpha: f64,
    #[arg(long)]
    n: usize,
    /// Full policy file; --procedure and --alpha override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Print a JSON line instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ServeArgs {
    /// Session persistence directory.
    #[arg(long, env = "EXADDIS_SESSION_DIR", default_value = "sessions")]
    dir: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8787")]
    addr: SocketAddr,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long, env = "EXADDIS_SESSION_DIR", default_value = "sessions")]
    dir: PathBuf,
}

#[derive(Args)]
struct FetchArgs {
    #[arg(long)]
    url: String,
    /// Expected sha256 of the body, hex.
    #[arg(long)]
    sha256: String,
    /// Destination file.
    #[arg(long)]
    dest: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Apply(a) => apply(a),
        Command::Oracle(a) => oracle(a),
        Command::Serve(a) => serve(a),
        Command::Replay(a) => replay(a),
        Command::Fetch(a) => fetch(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.exit as u8)
        }
    }
}

fn io_fail(path: &Path, e: impl std::fmt::Display) -> Failure {
    fail(Exit::Io, format!("{}: {e}", path.display()))
}

fn create_out(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| io_fail(dir, e))
}

fn simulate(a: SimulateArgs) -> CmdResult {
    let (mut grid, name) = match (&a.config, a.figure) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).map_err(|e| io_fail(path, e))?;
            let grid = ExperimentGrid::from_toml_str(&text).map_err(|e| fail(Exit::Config, e))?;
            let stem = path.file_stem().map_or("grid".into(), |s| s.to_string_lossy().into_owned());
            (grid, stem)
        }
        (None, Some(fig)) => {
            let grid = ExperimentGrid::figure(fig, if a.full_scale { 2000 } else { 500 }, 1).map_err(|e| fail(Exit::Config, e))?;
            (grid, format!("fig{fig}"))
        }
        (None, None) => unreachable!("clap requires one of them"),
    };
    if let Some(trials) = a.trials {
        grid.trials = trials;
    }
    if let Some(seed) = a.seed {
        grid.seed = seed;
    }
    if let Some(n) = a.n {
        grid.n = n;
    }
    let results = run_grid(&grid);
    let paths = emit_curves(&results, &a.out.out, &name).map_err(|e| fail(Exit::Io, e))?;

    println!("{name}: n={} trials={} seed={}", grid.n, grid.trials, grid.seed);
    println!("{:>6} {:>6} {:>6}  {:<16} {:>8} {:>8} {:>8}", "pi_A", "mu_A", "mu_N", "procedure", "power", "fwer", "se");
    for cell in &results.cells {
        for r in &cell.estimates {
            let power = r.estimate.power_hat.map_or("-".to_string(), |p| format!("{p:.4}"));
            println!(
                "{:>6} {:>6} {:>6}  {:<16} {:>8} {:>8.4} {:>8.4}",
                cell.setup.pi_a, cell.setup.mu_a, cell.setup.mu_n, r.procedure, power, r.estimate.fwer_hat, r.estimate.fwer_se
            );
        }
        if let Some(gap) = cell.power_gap("ei_addis_graph", "addis_graph") {
            println!("{:>22}  ei - addis_graph power gap {:.4} (se {:.4})", "", gap.mean, gap.se);
        }
    }
    for f in &results.failures {
        println!("failed cell pi_A={} mu_N={}: {}", f.setup.pi_a, f.setup.mu_n, f.message);
    }
    for p in paths {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn parse_gamma(s: &str) -> Result<GammaSpec, Failure> {
    match s.split_once(':') {
        None if s == "q_series" => Ok(GammaSpec::QSeries),
        Some(("log_q", v)) => v
            .parse()
            .map(|s| GammaSpec::LogQ { s })
            .map_err(|_| fail(Exit::Config, format!("bad log_q exponent '{v}'"))),
        _ => Err(fail(Exit::Config, format!("unknown gamma '{s}'; use q_series or log_q:<s>"))),
    }
}

fn policy_template(config: &Option<PathBuf>, gamma: &str, tau: f64, lambda: f64) -> Result<PolicyConfig, Failure> {
    match config {
        Some(path) => PolicyConfig::load(path).map_err(|e| fail(Exit::Config, e)),
        None => Ok(PolicyConfig::new(Procedure::AddisGraph, 0.2)
            .with_tau_lambda(tau, lambda)
            .with_gamma(parse_gamma(gamma)?)),
    }
}

#[derive(serde::Serialize)]
struct DecisionRow<'a> {
    procedure: &'a str,
    alpha: f64,
    step: usize,
    p: f64,
    level: String,
    rejected: bool,
    remaining_before: String,
}

fn apply(a: ApplyArgs) -> CmdResult {
    let options = LoadOptions {
        column: ColumnSpec::parse(&a.column),
        id_column: a.id_column.as_deref().map(ColumnSpec::parse),
        limit: a.limit,
    };
    let dataset = load_pvalues(&a.input, &options).map_err(|e| match e {
        exaddis_core::DatasetError::Io { .. } => fail(Exit::Io, e),
        other => fail(Exit::Data, other),
    })?;
    let grid = parse_alpha_grid(&a.alpha_grid).map_err(|e| fail(Exit::Config, e))?;
    let template = policy_template(&a.config, &a.gamma, a.tau, a.lambda)?;
    let procedures = if a.procedures.is_empty() { Procedure::SIX.to_vec() } else { a.procedures.clone() };
    let configs: Vec<PolicyConfig> =
        procedures.iter().map(|&procedure| PolicyConfig { procedure, ..template.clone() }).collect();
    for cfg in &configs {
        // Range problems are configuration errors; the lambda bound only
        // aborts the affected cells.
        if let Err(e) = (PolicyConfig { alpha: 0.01, ..cfg.clone() }).validate() {
            if e.constraint().is_none() {
                return Err(fail(Exit::Config, e));
            }
        }
    }

    let profile = apply_profile(&dataset, &configs, &grid);
    create_out(&a.out.out)?;
    let path = a.out.out.join("profile.csv");
    let file = File::create(&path).map_err(|e| io_fail(&path, e))?;
    profile.write_csv(BufWriter::new(file)).map_err(|e| io_fail(&path, e))?;

    if a.decisions {
        let path = a.out.out.join("decisions.csv");
        write_decisions(&path, &dataset.p_values, &configs, &grid)?;
    }

    println!("{} p-values from {}", dataset.len(), dataset.source.display());
    print!("{profile}");
    for cell in profile.failures() {
        if let Err(e) = &cell.result {
            println!("aborted {} at alpha={}: {e}", cell.procedure, cell.alpha);
        }
    }
    if !profile.is_monotone() {
        println!("warning: rejection counts are not monotone in alpha");
    }
    println!("wrote {}", path.display());
    match profile.failures().count() {
        k if k > 0 && a.strict => Err(fail(Exit::Run, format!("{k} cell(s) aborted"))),
        _ => Ok(()),
    }
}

fn write_decisions(path: &Path, p: &[f64], configs: &[PolicyConfig], grid: &[f64]) -> CmdResult {
    let file = File::create(path).map_err(|e| io_fail(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    for cfg in configs {
        for &alpha in grid {
            let cfg = PolicyConfig { alpha, ..cfg.clone() };
            let Ok(trace) = exaddis_core::run_procedure(&cfg, p) else { continue };
            for (k, &x) in p.iter().enumerate() {
                w.serialize(DecisionRow {
                    procedure: cfg.procedure.name(),
                    alpha,
                    step: k + 1,
                    p: x,
                    level: sig17(trace.levels[k]),
                    rejected: trace.rejections[k],
                    remaining_before: sig17(trace.budgets[k]),
                })
                .map_err(|e| io_fail(path, e))?;
            }
        }
    }
    w.flush().map_err(|e| io_fail(path, e))
}

fn oracle(a: OracleArgs) -> CmdResult {
    let mut cfg = match &a.config {
        Some(path) => PolicyConfig::load(path).map_err(|e| fail(Exit::Config, e))?,
        None => PolicyConfig::new(a.procedure.expect("clap enforces"), a.alpha),
    };
    if let Some(p) = a.procedure {
        cfg.procedure = p;
    }
    cfg.alpha = a.alpha;
    let policy = Policy::new(cfg.clone()).map_err(|e| fail(Exit::Config, e))?;
    let fwer = exact_fwer_global_null(&policy, a.n).map_err(|e| fail(Exit::Oracle, e))?;
    if a.json {
        println!(
            r#"{{"procedure":"{}","alpha":{},"n":{},"exact_fwer":{}}}"#,
            cfg.procedure,
            sig17(cfg.alpha),
            a.n,
            sig17(fwer)
        );
    } else {
        println!("{} alpha={} n={} exact_fwer={}", cfg.procedure, cfg.alpha, a.n, sig17(fwer));
    }
    Ok(())
}

fn serve(a: ServeArgs) -> CmdResult {
    tracing_subscriber::fmt().with_writer(std::io::stderr).with_env_filter(
        tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
    ).init();
    let (store, report) = SessionStore::open(&a.dir).map_err(|e| fail(Exit::Io, e))?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| fail(Exit::Io, e))?;
    runtime.block_on(async move {
        let listener = exaddis_service::bind(a.addr).await.map_err(|e| fail(Exit::Io, format!("{}: {e}", a.addr)))?;
        let addr = listener.local_addr().map_err(|e| fail(Exit::Io, e))?;
        println!(
            "restored {} sessions ({} quarantined) from {}",
            report.restored.len(),
            report.quarantined.len(),
            a.dir.display()
        );
        println!("listening on http://{addr}");
        let _ = std::io::stdout().flush();
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        exaddis_service::serve(listener, Arc::new(store), shutdown).await.map_err(|e| fail(Exit::Io, e))
    })
}

fn replay(a: ReplayArgs) -> CmdResult {
    if !a.dir.is_dir() {
        return Err(io_fail(&a.dir, "not a directory"));
    }
    let (store, report) = SessionStore::open(&a.dir).map_err(|e| fail(Exit::Io, e))?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    for id in store.ids() {
        let v = store.view(&id).map_err(|e| fail(Exit::Io, e))?;
        println!(
            r#"{{"id":"{}","procedure":"{}","step":{},"remaining":{},"level":{},"rejections":{}}}"#,
            v.id,
            v.procedure,
            v.step,
            sig17(v.remaining),
            sig17(v.level),
            v.rejections
        );
    }
    if report.quarantined.is_empty() {
        Ok(())
    } else {
        for (id, reason) in &report.quarantined {
            eprintln!("quarantined {id}: {reason}");
        }
        Err(fail(Exit::Quarantine, format!("{} session(s) quarantined", report.quarantined.len())))
    }
}

fn fetch(a: FetchArgs) -> CmdResult {
    let want = a.sha256.trim().to_ascii_lowercase();
    let resp = reqwest::blocking::get(&a.url).map_err(|e| fail(Exit::Io, e))?;
    if !resp.status().is_success() {
        return Err(fail(Exit::Io, format!("{} returned {}", a.url, resp.status())));
    }
    let body = resp.bytes().map_err(|e| fail(Exit::Io, e))?;
    let got = hex::encode(Sha256::digest(&body));
    if got != want {
        return Err(fail(Exit::Checksum, format!("sha256 {got} does not match expected {want}")));
    }
    if let Some(parent) = a.dest.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_out(parent)?;
    }
    std::fs::write(&a.dest, &body).map_err(|e| io_fail(&a.dest, e))?;
    println!("wrote {} ({} bytes, sha256 {got})", a.dest.display(), body.len());
    Ok(())
}

//! `cmg`: solve convex Markov games, certify exploitability, list domains.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context as _;
use clap::{Args, Parser, Subcommand};
use cmg_core::domains::{catalog, InitKind};
use cmg_core::exploitability::ExploitabilityConfig;
use cmg_core::game::PolicyProfile;
use cmg_core::CmgError;
use cmg_experiments::{
    evaluate, parse_eps_cadence, run, summarize, Algo, EpsilonFile, PolicyFile, Problem, RunConfig, Summary,
    ORACLE_TOL,
};

#[derive(Parser)]
#[command(name = "cmg", version, about = "Convex Markov game solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a solver and write trace.csv, policy.json and summary.json.
    Solve(SolveArgs),
    /// Exact exploitability of a policy file; writes epsilon.json.
    Exploitability(ExploitabilityArgs),
    /// Catalog domains with sizes and default solver settings.
    ListDomains,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Source {
    /// Catalog domain name.
    #[arg(long)]
    domain: Option<String>,
    /// Game document (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    source: Source,
    /// pgl, sim or rr.
    #[arg(long, default_value = "pgl", value_parser = str::parse::<Algo>)]
    algo: Algo,
    /// Comma-separated seeds; each run gets its own output directory.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seed: Vec<u64>,
    /// Iteration budget (default: the domain's).
    #[arg(long)]
    iters: Option<usize>,
    /// Adam learning rate (default: the domain's).
    #[arg(long)]
    lr: Option<f64>,
    /// Annealing schedule type (default: the domain's).
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    anneal: Option<u8>,
    /// Fixed temperature of the sim and rr baselines.
    #[arg(long, default_value_t = 0.0)]
    tau: f64,
    /// Record every N iterations; the final iteration is always recorded.
    #[arg(long, default_value_t = 10)]
    stride: usize,
    /// Exact exploitability in the trace: off, final, anneal:K or iters:K.
    #[arg(long, default_value = "anneal:10", value_parser = parse_eps_cadence)]
    eps_cadence: cmg_core::solvers::EpsCadence,
    /// Oracle tolerance of the reported exploitability.
    #[arg(long, default_value_t = ORACLE_TOL)]
    tol: f64,
    /// Output directory.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Runs executed in parallel.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct ExploitabilityArgs {
    #[command(flatten)]
    source: Source,
    /// policy.json to evaluate, or `uniform`.
    #[arg(long)]
    policy: String,
    /// Oracle tolerance.
    #[arg(long, default_value_t = ORACLE_TOL)]
    tol: f64,
    /// Directory for epsilon.json.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

/// An error with its process exit code: 1 for configuration, shape and I/O
/// problems, 2 for numeric aborts.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn config(error: impl Into<anyhow::Error>) -> Self {
        Self { code: 1, error: error.into() }
    }
}

impl From<CmgError> for Failure {
    fn from(e: CmgError) -> Self {
        let code = if matches!(e, CmgError::Numeric(_)) { 2 } else { 1 };
        Self { code, error: e.into() }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Self::config(error)
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let outcome = match cli.command {
        Command::Solve(args) => cmd_solve(&args),
        Command::Exploitability(args) => cmd_exploitability(&args),
        Command::ListDomains => {
            print!("{}", list_domains());
            Ok(())
        }
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn load_problem(source: &Source) -> Outcome<Problem> {
    match (&source.domain, &source.config) {
        (Some(name), None) => Ok(Problem::domain(name)?),
        (None, Some(path)) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            Problem::document(path.display().to_string(), &text).map_err(|e| {
                let code = Failure::from(e);
                Failure { code: code.code, error: code.error.context(format!("loading {}", path.display())) }
            })
        }
        _ => Err(Failure::config(anyhow::anyhow!("exactly one of --domain and --config is required"))),
    }
}

fn write(path: &Path, contents: &str) -> Outcome<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("output types serialize") + "\n"
}

fn cmd_solve(args: &SolveArgs) -> Outcome<()> {
    let problem = load_problem(&args.source)?;
    if !(args.tol > 0.0) {
        return Err(Failure::config(anyhow::anyhow!("--tol must be positive")));
    }
    let configs: Vec<RunConfig> = args
        .seed
        .iter()
        .map(|&seed| RunConfig {
            iters: args.iters,
            lr: args.lr,
            anneal: args.anneal,
            baseline_tau: args.tau,
            stride: args.stride,
            eps_cadence: args.eps_cadence,
            oracle: ExploitabilityConfig::with_tol(args.tol),
            ..RunConfig::new(args.algo, seed)
        })
        .collect();
    for c in &configs {
        c.resolve(&problem.defaults)?;
    }
    let dir_for = |seed: u64| {
        if configs.len() == 1 {
            args.out.clone()
        } else {
            args.out.join(format!("seed-{seed}"))
        }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.max(1))
        .build()
        .context("starting worker threads")?;
    let results: Vec<Outcome<Summary>> = pool.install(|| {
        use rayon::prelude::*;
        configs.par_iter().map(|c| solve_one(&problem, c, &dir_for(c.seed))).collect()
    });
    let mut worst: Option<Failure> = None;
    for (config, result) in configs.iter().zip(results) {
        match result {
            Ok(s) => println!(
                "{} seed {}: eps {:.3e} utilities {:?}{} -> {}",
                problem.name,
                config.seed,
                s.epsilon,
                s.utilities.iter().map(|u| format!("{u:.4}")).collect::<Vec<_>>(),
                s.fast_at_pickup
                    .as_ref()
                    .map(|f| format!(" fast@pickup {:?}", f.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>()))
                    .unwrap_or_default(),
                dir_for(config.seed).display()
            ),
            Err(f) => {
                eprintln!("{} seed {}: {:#}", problem.name, config.seed, f.error);
                if worst.as_ref().is_none_or(|w| f.code > w.code) {
                    worst = Some(f);
                }
            }
        }
    }
    match worst {
        None => Ok(()),
        Some(f) => Err(Failure { code: f.code, error: anyhow::anyhow!("one or more runs failed") }),
    }
}

fn solve_one(problem: &Problem, config: &RunConfig, dir: &Path) -> Outcome<Summary> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let start = Instant::now();
    let result = match run(problem, config) {
        Ok(r) => r,
        Err(e) => {
            write(&dir.join("trace.csv"), &e.trace.to_csv())?;
            return Err(e.source.into());
        }
    };
    write(&dir.join("trace.csv"), &result.trace.to_csv())?;
    write(&dir.join("policy.json"), &to_json(&PolicyFile::from_profile(&result.policy)))?;
    let summary = summarize(problem, config, &result)?;
    write(&dir.join("summary.json"), &to_json(&summary))?;
    eprintln!("{} seed {} finished in {:.1?}", problem.name, config.seed, start.elapsed());
    Ok(summary)
}

fn cmd_exploitability(args: &ExploitabilityArgs) -> Outcome<()> {
    let problem = load_problem(&args.source)?;
    if !(args.tol > 0.0) {
        return Err(Failure::config(anyhow::anyhow!("--tol must be positive")));
    }
    let profile = if args.policy == "uniform" {
        PolicyProfile::uniform(&problem.spec)
    } else {
        let text = fs::read_to_string(&args.policy).with_context(|| format!("reading {}", args.policy))?;
        let file: PolicyFile =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", args.policy))?;
        file.to_profile(&problem.spec)?
    };
    let report = evaluate(&problem, &profile, &ExploitabilityConfig::with_tol(args.tol))?;
    print!("{}", format_report(&report));
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write(&args.out.join("epsilon.json"), &to_json(&report))
}

fn format_report(r: &EpsilonFile) -> String {
    let mut out = format!("problem: {}\nplayer  utility      epsilon\n", r.problem);
    for (i, (u, e)) in r.utilities.iter().zip(&r.per_player_epsilon).enumerate() {
        out += &format!("{i:<7} {u:<12.6} {e:.6e}\n");
    }
    out += &format!("epsilon: {:.6e}\n", r.epsilon);
    out += "state   epsilon       per player\n";
    for (s, (e, row)) in r.per_state_epsilon.iter().zip(&r.per_state_player_epsilon).enumerate() {
        let row: Vec<String> = row.iter().map(|v| format!("{v:.4e}")).collect();
        out += &format!("{s:<7} {e:<13.6e} [{}]\n", row.join(", "));
    }
    out += &format!("max per-state epsilon: {:.6e}\ncertified: {}\n", r.max_per_state_epsilon, r.certified);
    out
}

fn list_domains() -> String {
    let mut out = format!(
        "{:<22} {:>7} {:>6} {:<10} {:>5} {:>6} {:>6} {:>6} {:<15} {}\n",
        "name", "players", "states", "actions", "gamma", "lr", "anneal", "iters", "init", "description"
    );
    for entry in catalog() {
        let spec = &entry.spec;
        let d = &entry.defaults;
        let actions: Vec<String> = spec.action_counts().iter().map(|a| a.to_string()).collect();
        let init = match d.init {
            InitKind::Zeros => "zeros",
            InitKind::StandardNormal => "standard-normal",
        };
        out += &format!(
            "{:<22} {:>7} {:>6} {:<10} {:>5} {:>6} {:>6} {:>6} {:<15} {}\n",
            entry.name,
            spec.n_players(),
            spec.n_states(),
            actions.join("x"),
            spec.gamma(),
            d.lr,
            d.schedule.type_number(),
            d.iters,
            init,
            entry.description
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numeric_errors_map_to_exit_two() {
        assert_eq!(Failure::from(CmgError::Numeric("nan".into())).code, 2);
        assert_eq!(Failure::from(CmgError::Shape("bad".into())).code, 1);
        assert_eq!(Failure::from(CmgError::Config("bad".into())).code, 1);
    }

    #[test]
    fn report_lists_every_state() {
        let problem = Problem::domain("ipgg").unwrap();
        let profile = PolicyProfile::uniform(&problem.spec);
        let report = evaluate(&problem, &profile, &ExploitabilityConfig::with_tol(ORACLE_TOL)).unwrap();
        let text = format_report(&report);
        assert_eq!(text.lines().count(), 2 + problem.spec.n_players() + 2 + problem.spec.n_states() + 2);
        assert!(text.starts_with("problem: ipgg\n"));
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}

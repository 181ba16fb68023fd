use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gengeom_cli::report::{to_csv, to_json};
use gengeom_cli::{run_suites, RunConfig, Runner, SuiteName};

#[derive(Parser)]
#[command(name = "gengeom", version, about = "Numerical checks for generalized geometry on flat tori")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Courant axioms for random sections and twists
    VerifyCourant(Shared),
    /// Hodge Laplacian kernels, decompositions and Green operators
    HodgeReport(Shared),
    /// Split derivations into exact and harmonic parts
    DerivationSplit(Shared),
    /// Group laws of generalized diffeomorphisms
    GroupCheck(Shared),
    /// Slice operators in the matrix regime
    SliceReport(Shared),
    /// Isometry groups, conjugators and strata
    StrataDemo(Shared),
    /// Every suite selected by the configuration
    All(Shared),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args)]
struct Shared {
    /// JSON run configuration
    #[arg(long)]
    config: Option<PathBuf>,
    /// overrides the configured seed
    #[arg(long)]
    seed: Option<u64>,
    /// directory for the report file; printed to stdout when absent
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// multiplies every tolerance
    #[arg(long, default_value_t = 1.0)]
    tolerance_scale: f64,
    /// record wall time per suite (reports are then no longer reproducible byte for byte)
    #[arg(long)]
    timings: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (shared, suites): (&Shared, Option<Vec<SuiteName>>) = match &cli.command {
        Command::VerifyCourant(s) => (s, Some(vec![SuiteName::CourantAxioms])),
        Command::HodgeReport(s) => (s, Some(vec![SuiteName::Hodge])),
        Command::DerivationSplit(s) => (s, Some(vec![SuiteName::Derivation])),
        Command::GroupCheck(s) => (s, Some(vec![SuiteName::Group])),
        Command::SliceReport(s) => (s, Some(vec![SuiteName::Slice])),
        Command::StrataDemo(s) => (s, Some(vec![SuiteName::Strata])),
        Command::All(s) => (s, None),
    };
    if !(shared.tolerance_scale > 0.0 && shared.tolerance_scale.is_finite()) {
        eprintln!("error: --tolerance-scale must be positive");
        return ExitCode::from(2);
    }
    let config = match &shared.config {
        Some(path) => match RunConfig::load(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {}: {e}", path.display());
                return ExitCode::from(2);
            }
        },
        None => RunConfig::default(),
    };
    let suites = suites.unwrap_or_else(|| {
        let mut s = config.suites.clone();
        s.sort();
        s.dedup();
        s
    });
    let runner = Runner {
        config: &config,
        seed: shared.seed.unwrap_or(config.seed),
        scale: shared.tolerance_scale,
        timings: shared.timings,
    };
    let reports = run_suites(&runner, &suites);
    let (text, name) = match shared.format {
        Format::Json => (to_json(&reports), "report.json"),
        Format::Csv => match to_csv(&reports) {
            Ok(t) => (t, "report.csv"),
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        },
    };
    match &shared.out {
        Some(dir) => {
            let path = dir.join(name);
            if let Err(e) = std::fs::create_dir_all(dir).and_then(|_| std::fs::write(&path, &text)) {
                eprintln!("error: cannot write {}: {e}", path.display());
                return ExitCode::from(2);
            }
        }
        None => print!("{text}"),
    }
    let mut failed = false;
    for r in &reports {
        let bad: Vec<_> = r.failures().collect();
        eprintln!("{:<16} {:>3} checks, {} failed in {:.1} s", r.suite, r.checks.len(), bad.len(), r.elapsed_s);
        for c in bad {
            eprintln!("  FAIL {} residual {:e} > {:e}", c.check_id, c.residual, c.tolerance);
        }
        failed |= !r.passed();
    }
    if failed {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    }
}

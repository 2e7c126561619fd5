use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};

use levy_storage::config::{fixture, ConfigFile, Overrides, FIXTURES};
use levy_storage::verify::{dump_replication, run_experiment, RunOptions};
use levy_storage::{Error, Result};

/// Simulate Lévy-driven storage processes and check the Kella-Whitt
/// martingale identities by Monte Carlo.
#[derive(Parser)]
#[command(name = "levy-storage", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the tests selected in a config file or bundled fixture.
    Run(RunArgs),
    /// List the bundled example configs.
    Fixtures,
    /// Print a bundled config.
    ShowFixture { name: String },
}

#[derive(Args)]
struct RunArgs {
    /// Path to a JSON config.
    #[arg(required_unless_present = "fixture", conflicts_with = "fixture")]
    config: Option<PathBuf>,
    /// Name of a bundled config (see `fixtures`).
    #[arg(long)]
    fixture: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of replications.
    #[arg(long)]
    reps: Option<usize>,
    /// Horizon; checkpoints beyond it are dropped.
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    threads: Option<usize>,
    /// Reduce replications sequentially for bit-exact output.
    #[arg(long)]
    deterministic_reduce: bool,
    /// Omit the timestamp line from the report CSV.
    #[arg(long)]
    no_timestamp: bool,
}

enum Outcome {
    Pass,
    Fail,
}

fn run(args: RunArgs) -> Result<Outcome> {
    let (config, default_dir) = match (&args.config, &args.fixture) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            let cfg = ConfigFile::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            (cfg, PathBuf::from("levy-storage-out"))
        }
        (None, Some(name)) => (fixture(name)?.config()?, PathBuf::from("levy-storage-out").join(name)),
        (None, None) => unreachable!("clap requires a config or a fixture"),
    };
    let overrides = Overrides {
        seed: args.seed,
        replications: args.reps,
        horizon: args.horizon,
        dt: args.dt,
    };
    let exp = config.to_experiment(&overrides)?;
    let out_dir = args
        .out_dir
        .clone()
        .or_else(|| config.output.dir.clone())
        .unwrap_or(default_dir);
    std::fs::create_dir_all(&out_dir)?;

    eprintln!(
        "running {} replication(s), horizon {}, dt {}, seed {}",
        exp.replications, exp.horizon, exp.dt, exp.base_seed
    );
    let opts = RunOptions {
        threads: args.threads,
        deterministic_reduce: args.deterministic_reduce,
    };
    let report = run_experiment(&exp, &opts)?;
    for o in &report.outcomes {
        let status = if o.ok() { "ok" } else { "FAILED" };
        eprintln!("test {}: {status}", o.name);
    }

    let timestamp = (!args.no_timestamp).then(|| {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    });
    let mut csv = BufWriter::new(File::create(out_dir.join("report.csv"))?);
    report.write_csv(&mut csv, timestamp)?;
    csv.flush()?;
    let summary = report.summary();
    std::fs::write(out_dir.join("summary.txt"), &summary)?;
    if config.output.dump_paths {
        dump_replication(&exp, 0, &out_dir)?;
    }
    print!("{summary}");
    Ok(if report.passed() { Outcome::Pass } else { Outcome::Fail })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Fixtures => {
            for f in FIXTURES {
                println!("{:<22} {}", f.name, f.description);
            }
            ExitCode::SUCCESS
        }
        Command::ShowFixture { name } => match fixture(&name) {
            Ok(f) => {
                print!("{}", f.json);
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(1)
            }
        },
        Command::Run(args) => match run(args) {
            Ok(Outcome::Pass) => ExitCode::SUCCESS,
            Ok(Outcome::Fail) => ExitCode::from(2),
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(1)
            }
        },
    }
}

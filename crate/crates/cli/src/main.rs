use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::Parser;

use halobench::harness::{self, BenchConfig, Strategy};
use halobench::Error;

/// Halo-exchange benchmark: times non-blocking, persistent, and partitioned
/// communication strategies over an in-process transport.
#[derive(Parser, Debug)]
#[command(name = "halobench", version, about)]
struct Args {
    /// Global mesh extents as X,Y,Z (or X,Y for 2D)
    #[arg(long, default_value = "32,32,32", value_delimiter = ',')]
    cells: Vec<usize>,

    /// Number of ranks
    #[arg(long, default_value_t = 8)]
    ranks: usize,

    /// Explicit process-grid dims as AxBxC, overriding the factorization
    #[arg(long)]
    grid: Option<String>,

    /// Packing workers per rank (and partitions per message when partitioned)
    #[arg(long, default_value_t = 4)]
    workers: usize,

    /// Strategy to run; all three when omitted
    #[arg(long)]
    strategy: Option<String>,

    /// Exchanges per timed run
    #[arg(long, default_value_t = 1000)]
    iterations: usize,

    /// Timed runs per strategy
    #[arg(long, default_value_t = 3)]
    runs: usize,

    /// Mesh variables
    #[arg(long, default_value_t = 3)]
    vars: usize,

    /// Ghost layer width in cells
    #[arg(long, default_value_t = 1)]
    ghost_width: usize,

    /// Mesh initialization seed
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Run correctness verification instead of timing
    #[arg(long)]
    verify: bool,

    /// Append timing rows to this CSV file
    #[arg(long)]
    csv: Option<PathBuf>,

    /// Watchdog timeout per run, in seconds
    #[arg(long, default_value_t = 30)]
    timeout: u64,
}

fn parse_grid(s: &str) -> Result<[usize; 3], Error> {
    let parts: Vec<usize> = s
        .split('x')
        .map(|p| p.parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| Error::Config(format!("bad --grid {s:?}; expected AxBxC")))?;
    match parts.as_slice() {
        [a, b] => Ok([*a, *b, 1]),
        [a, b, c] => Ok([*a, *b, *c]),
        _ => Err(Error::Config(format!("bad --grid {s:?}; expected AxBxC"))),
    }
}

fn build_config(args: &Args, strategy: Strategy) -> Result<BenchConfig, Error> {
    let (global_extents, dimensionality) = match args.cells.as_slice() {
        [x, y] => ([*x, *y, 1], 2),
        [x, y, z] => ([*x, *y, *z], 3),
        other => {
            return Err(Error::Config(format!(
                "--cells needs 2 or 3 comma-separated extents, got {}",
                other.len()
            )))
        }
    };
    let grid_dims = args.grid.as_deref().map(parse_grid).transpose()?;
    Ok(BenchConfig {
        global_extents,
        ranks: args.ranks,
        dimensionality,
        n_workers: args.workers,
        strategy,
        iterations: args.iterations,
        runs: args.runs,
        num_vars: args.vars,
        ghost_width: args.ghost_width,
        periodic: [true; 3],
        seed: args.seed,
        grid_dims,
        timeout: Duration::from_secs(args.timeout),
        trace: false,
    })
}

fn exit_code_for(err: &Error) -> ExitCode {
    match err {
        Error::WatchdogTimeout { .. } => ExitCode::from(3),
        _ => ExitCode::from(4),
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    let strategies: Vec<Strategy> = match args.strategy.as_deref() {
        Some(s) => match s.parse() {
            Ok(s) => vec![s],
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(4);
            }
        },
        None => Strategy::ALL.to_vec(),
    };

    if args.verify {
        // Verification always covers all three strategies in one pass.
        let config = match build_config(&args, strategies[0]) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(4);
            }
        };
        return match harness::run_verification(&config) {
            Ok(report) => {
                print!("{}", report.summary());
                if report.pass() {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::from(2)
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                exit_code_for(&e)
            }
        };
    }

    for strategy in strategies {
        let config = match build_config(&args, strategy) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(4);
            }
        };
        match harness::run_benchmark(&config) {
            Ok(report) => {
                println!(
                    "{}: ranks={} grid={}x{}x{} workers={} message_scalars={} iterations={}",
                    report.strategy,
                    report.ranks,
                    report.grid[0],
                    report.grid[1],
                    report.grid[2],
                    report.workers,
                    report.message_scalars,
                    report.iterations
                );
                for (i, run) in report.runs.iter().enumerate() {
                    println!(
                        "  run {}: total {:.6}s, {:.9}s per exchange",
                        i + 1,
                        run.seconds_total,
                        run.seconds_per_exchange
                    );
                }
                println!("  mean over runs: {:.6}s", report.mean_seconds);
                if let Some(path) = &args.csv {
                    if let Err(e) = harness::emit_csv(&report, path) {
                        eprintln!("error: {e}");
                        return ExitCode::from(4);
                    }
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                return exit_code_for(&e);
            }
        }
    }
    ExitCode::SUCCESS
}

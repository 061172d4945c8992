use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};

use quackstore::bench::{self, ExperimentConfig, Report};
use quackstore::device::{
    open_device, Backing, Device, DeviceGeometry, LatencyModel, DEFAULT_LBA_SIZE, DEFAULT_MDTS, DEFAULT_QUEUE_DEPTH,
};
use quackstore::scheduler::race_trials;
use quackstore::strategy::{default_worker_count, StrategyConfig, StrategyKind};
use quackstore::{Engine, Error};

#[derive(Parser)]
#[command(name = "quackstore", version, about = "Block storage on a simulated NVMe device")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ImageArgs {
    /// Raw device image file.
    #[arg(long)]
    image: PathBuf,
    #[arg(long, default_value_t = DEFAULT_LBA_SIZE)]
    lba_size: u64,
    /// Maximum bytes per command.
    #[arg(long, default_value_t = DEFAULT_MDTS)]
    mdts: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Create a device image and write an empty header.
    Format {
        #[command(flatten)]
        image: ImageArgs,
        /// Capacity in bytes; accepts K, M, G, KiB, MiB, GiB suffixes.
        #[arg(long, default_value = "64MiB", value_parser = parse_size)]
        capacity: u64,
    },
    /// Write the synthetic table to a formatted image.
    Generate {
        #[command(flatten)]
        image: ImageArgs,
        #[arg(long)]
        sf: f64,
        #[arg(long, env = "QUACKSTORE_SEED", default_value_t = 42)]
        seed: u64,
    },
    /// Scan the table with one I/O strategy and check its checksum.
    Scan {
        #[command(flatten)]
        image: ImageArgs,
        #[arg(long, default_value = "async-thread")]
        strategy: String,
        /// Defaults to the number of logical cores.
        #[arg(long)]
        workers: Option<usize>,
        /// Return from block calls right after submission.
        #[arg(long)]
        no_drain: bool,
        #[arg(long)]
        passthrough: bool,
        #[arg(long, default_value_t = DEFAULT_QUEUE_DEPTH)]
        queue_depth: usize,
        #[arg(long)]
        pool_size: Option<usize>,
        /// Latency jitter in microseconds.
        #[arg(long, default_value_t = 8.0)]
        jitter: f64,
        #[arg(long, env = "QUACKSTORE_SEED", default_value_t = 42)]
        seed: u64,
    },
    /// Run one of the two experiments and write a CSV report.
    Bench {
        #[command(subcommand)]
        experiment: Experiment,
    },
    /// Two dependent writes to one block through the queue pool.
    RaceDemo {
        /// Latency jitter in microseconds.
        #[arg(long, default_value_t = 8.0)]
        jitter: f64,
        #[arg(long)]
        no_drain: bool,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, env = "QUACKSTORE_SEED", default_value_t = 42)]
        seed: u64,
    },
    /// Statistics over CSV columns.
    Stats {
        #[command(subcommand)]
        stat: Stat,
    },
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated scale factors.
    #[arg(long, value_delimiter = ',', default_value = "0.01,0.1,1")]
    sf: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    reps: usize,
    #[arg(long, env = "QUACKSTORE_SEED", default_value_t = 42)]
    seed: u64,
    /// Defaults to the number of logical cores.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Experiment {
    /// Thread-owned queues with and without passthrough.
    Passthrough(BenchArgs),
    /// All strategies against the buffered-file baseline.
    Compare(BenchArgs),
}

#[derive(Subcommand)]
enum Stat {
    /// One-sided paired t-test of column A against column B (H0: mean(A - B) <= 0).
    Ttest {
        csv: PathBuf,
        /// Column name; defaults to the first column.
        #[arg(long)]
        a: Option<String>,
        /// Column name; defaults to the second column.
        #[arg(long)]
        b: Option<String>,
    },
    /// Standard error of the mean of one column.
    Stderr {
        csv: PathBuf,
        /// Column name; defaults to the first column.
        #[arg(long)]
        column: Option<String>,
    },
}

fn parse_size(s: &str) -> Result<u64, String> {
    let s = s.trim();
    let split = s.find(|c: char| !c.is_ascii_digit()).unwrap_or(s.len());
    let (digits, unit) = s.split_at(split);
    let n: u64 = digits.parse().map_err(|_| format!("invalid size {s:?}"))?;
    let mult: u64 = match unit.trim().to_ascii_lowercase().as_str() {
        "" | "b" => 1,
        "k" | "kib" => 1 << 10,
        "m" | "mib" => 1 << 20,
        "g" | "gib" => 1 << 30,
        other => return Err(format!("unknown size unit {other:?}")),
    };
    n.checked_mul(mult).ok_or_else(|| format!("size {s:?} overflows"))
}

fn micros(us: f64) -> anyhow::Result<Duration> {
    if !(us.is_finite() && us >= 0.0) {
        bail!("jitter must be a non-negative number of microseconds");
    }
    Ok(Duration::from_nanos((us * 1_000.0).round() as u64))
}

fn open_image(args: &ImageArgs, latency: LatencyModel) -> anyhow::Result<std::sync::Arc<Device>> {
    if !args.image.exists() {
        bail!("device image {} does not exist", args.image.display());
    }
    Device::open_image(&args.image, args.lba_size, args.mdts, latency)
        .with_context(|| format!("opening {}", args.image.display()))
}

fn read_column(path: &Path, name: Option<&str>, default_index: usize) -> anyhow::Result<Vec<f64>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let index = match name {
        Some(n) => headers
            .iter()
            .position(|h| h == n)
            .ok_or_else(|| anyhow!("no column {n:?} in {}", path.display()))?,
        None if default_index < headers.len() => default_index,
        None => bail!("{} has fewer than {} columns", path.display(), default_index + 1),
    };
    let mut out = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let field = record.get(index).unwrap_or("").trim();
        if field.is_empty() {
            continue;
        }
        out.push(
            field
                .parse()
                .with_context(|| format!("row {}: {field:?} is not a number", line + 2))?,
        );
    }
    Ok(out)
}

fn print_report(report: &Report) {
    println!("{:<28} {:>6} {:>14} {:>10} {:>10} {:>12}", "config", "sf", "mean_us", "stderr_us", "t", "p");
    for run in &report.runs {
        let (t, p) = report
            .comparison(run.config, run.scale_factor)
            .map_or((String::new(), String::new()), |c| {
                (format!("{:.3}", c.t_statistic), format!("{:.3e}", c.p_value))
            });
        println!(
            "{:<28} {:>6} {:>14.3} {:>10.3} {:>10} {:>12}",
            run.config.to_string(),
            run.scale_factor,
            run.mean,
            run.stderr,
            t,
            p
        );
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Format { image, capacity } => {
            let geometry = DeviceGeometry::for_capacity(capacity, image.lba_size, image.mdts)?;
            if image.image.exists() {
                std::fs::remove_file(&image.image)?;
            }
            let device = open_device(geometry, LatencyModel::default(), Backing::ImageFile(image.image.clone()))?;
            let engine = Engine::format(device, StrategyConfig::new(StrategyKind::SyncDirect))?;
            println!(
                "formatted {} ({} bytes, {} data blocks)",
                image.image.display(),
                capacity,
                engine.manager().lock().capacity_blocks()
            );
        }
        Command::Generate { image, sf, seed } => {
            let device = open_image(&image, LatencyModel::default())?;
            let engine = Engine::open(device, StrategyConfig::new(StrategyKind::SyncDirect))?;
            let info = bench::generate_dataset(&engine, sf, seed)?;
            println!(
                "generated sf {} seed {}: {} rows in {} blocks, checksum {:#018x}",
                sf, seed, info.workload.rows, info.block_count, info.checksum
            );
        }
        Command::Scan {
            image,
            strategy,
            workers,
            no_drain,
            passthrough,
            queue_depth,
            pool_size,
            jitter,
            seed,
        } => {
            let kind: StrategyKind = strategy.parse()?;
            let workers = workers.unwrap_or_else(default_worker_count);
            let latency = LatencyModel::default()
                .passthrough(passthrough)
                .with_jitter(micros(jitter)?)
                .with_seed(seed);
            let mut config = StrategyConfig::new(kind)
                .with_queue_depth(queue_depth)
                .with_drain(!no_drain)
                .with_pool_size(pool_size.unwrap_or(workers));
            if !kind.is_async() {
                config.drain_after_block = true;
            }
            let device = open_image(&image, latency)?;
            let engine = Engine::open(device, config)?;
            let scan = bench::run_scan(&engine, workers)?;
            println!(
                "scanned {} blocks in {} tasks with {kind} on {workers} workers: {:.3} us simulated, {:.3} ms host, checksum {:#018x}",
                scan.blocks,
                scan.tasks,
                scan.duration.as_nanos() as f64 / 1_000.0,
                scan.host_time.as_secs_f64() * 1_000.0,
                scan.checksum
            );
        }
        Command::Bench { experiment } => {
            let (args, run): (BenchArgs, fn(&ExperimentConfig) -> quackstore::Result<Report>) = match experiment {
                Experiment::Passthrough(a) => (a, bench::experiment_passthrough),
                Experiment::Compare(a) => (a, bench::experiment_compare),
            };
            let cfg = ExperimentConfig {
                scale_factors: args.sf,
                repetitions: args.reps,
                workers: args.workers.unwrap_or_else(default_worker_count),
                seed: args.seed,
                ..ExperimentConfig::default()
            };
            let report = run(&cfg)?;
            bench::emit_csv(&report, &args.out).with_context(|| format!("writing {}", args.out.display()))?;
            print_report(&report);
            println!("wrote {}", args.out.display());
        }
        Command::RaceDemo {
            jitter,
            no_drain,
            trials,
            seed,
        } => {
            let s = race_trials(micros(jitter)?, !no_drain, trials, seed)?;
            println!("Consistent {}/{}", s.consistent, s.trials());
            println!("InversionDetected {}/{}", s.inversions, s.trials());
        }
        Command::Stats { stat } => match stat {
            Stat::Ttest { csv, a, b } => {
                let xs = read_column(&csv, a.as_deref(), 0)?;
                let ys = read_column(&csv, b.as_deref(), 1)?;
                let r = bench::paired_t_test(&xs, &ys)?;
                println!("t {}", r.t_statistic);
                println!("df {}", r.degrees_of_freedom);
                println!("p {}", r.p_value);
            }
            Stat::Stderr { csv, column } => {
                let xs = read_column(&csv, column.as_deref(), 0)?;
                println!("n {}", xs.len());
                println!("mean {}", bench::mean(&xs));
                println!("stderr {}", bench::standard_error(&xs)?);
            }
        },
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let corrupt = err
        .chain()
        .any(|e| e.downcast_ref::<Error>().is_some_and(Error::is_corruption));
    if corrupt {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

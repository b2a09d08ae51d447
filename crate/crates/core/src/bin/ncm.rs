use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ncm::cli::{
    self, bench::write_timings, parse_event, BenchEstConfig, BenchIdConfig, CliError, GenDataConfig, QuerySpec, Settings,
};
use ncm::identify::Verdict;

#[derive(Parser, Debug)]
#[command(name = "ncm", version, about = "Identify and estimate causal effects with neural causal models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON file overriding the default settings; flags override the file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Use the larger epoch, sample and trial counts of full-size runs
    #[arg(long, global = true)]
    full_scale: bool,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Monte Carlo samples per training step
    #[arg(long, global = true)]
    mc_samples: Option<usize>,
    /// Gap threshold; a comma-separated list for benchmark-id
    #[arg(long, global = true, value_delimiter = ',')]
    tau: Option<Vec<f64>>,
    /// Independent min/max training runs per verdict
    #[arg(long, global = true)]
    repeats: Option<usize>,
    /// Data rows per training step (default: all distinct rows)
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    lambda_start: Option<f64>,
    #[arg(long, global = true)]
    lambda_end: Option<f64>,
    /// Worker threads; 1 gives single-threaded runs
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log progress to stderr (repeat for more)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Args, Debug)]
struct QueryArgs {
    #[arg(long, default_value = "X")]
    treatment: String,
    #[arg(long, default_value = "Y")]
    outcome: String,
    /// Interventional query instead of the ATE: the intervention, e.g. X=1
    #[arg(long = "do", requires = "event")]
    intervention: Option<String>,
    /// Interventional query: the outcome event, e.g. Y=1,Z=0
    #[arg(long, requires = "intervention")]
    event: Option<String>,
}

impl QueryArgs {
    fn spec(&self) -> Result<QuerySpec, CliError> {
        match (&self.intervention, &self.event) {
            (Some(x), Some(y)) => Ok(QuerySpec::Interventional { outcome: parse_event(y)?, intervention: parse_event(x)? }),
            _ => Ok(QuerySpec::Ate { treatment: self.treatment.clone(), outcome: self.outcome.clone() }),
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample a dataset from a random canonical model on a graph
    GenData {
        /// Graph file or fixture name
        #[arg(long)]
        graph: String,
        /// Output CSV; sidecars are written next to it
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n: Option<usize>,
        /// Widen |ATE - TV| to at least this value before sampling
        #[arg(long)]
        widen: Option<f64>,
        /// Expand covariates into this many bits each
        #[arg(long)]
        high_dim: Option<usize>,
        #[arg(long, default_value = "X")]
        treatment: String,
        #[arg(long, default_value = "Y")]
        outcome: String,
    },
    /// Decide whether a query is identifiable from data and a graph
    Identify {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        graph: String,
        /// Output directory for the report and gap traces
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        query: QueryArgs,
        /// Identify symbolically, then estimate with a likelihood-trained model
        #[arg(long)]
        symbolic: bool,
    },
    /// Estimate a query and compare against a naive model
    Estimate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        graph: String,
        /// Output JSON report
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        query: QueryArgs,
    },
    /// Neural identification across the benchmark graphs
    BenchmarkId {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
        /// Comma-separated graph files or fixture names
        #[arg(long, value_delimiter = ',')]
        graphs: Option<Vec<String>>,
    },
    /// Estimation error and fit across sample sizes on the identifiable graphs
    BenchmarkEst {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trials: Option<usize>,
        /// Comma-separated sample sizes
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        graphs: Option<Vec<String>>,
        #[arg(long, conflicts_with = "no_widen")]
        widen: Option<f64>,
        #[arg(long)]
        no_widen: bool,
    },
    /// Check a benchmark report and rewrite its CSV views
    Report {
        /// The report.json of a benchmark run
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn settings(cli: &Cli) -> Result<Settings, CliError> {
    let mut s = match &cli.config {
        Some(path) => Settings::load(path)?,
        None if cli.full_scale => Settings::full_scale(),
        None => Settings::default(),
    };
    if let Some(seed) = cli.seed {
        s.train.seed = seed;
    }
    if let Some(e) = cli.epochs {
        s.train.epochs = e;
    }
    if let Some(m) = cli.mc_samples {
        s.train.mc_samples = m;
        s.train.eval_samples = m;
    }
    if let Some(taus) = &cli.tau {
        let first = *taus.first().ok_or_else(|| CliError::Usage("--tau needs a value".into()))?;
        s.tau = first;
        s.taus = taus.clone();
    }
    if cli.batch_size.is_some() {
        s.train.batch_size = cli.batch_size;
    }
    if let Some(r) = cli.repeats {
        s.repeats = r;
    }
    if let Some(l) = cli.lambda_start {
        s.train.lambda_start = l;
    }
    if let Some(l) = cli.lambda_end {
        s.train.lambda_end = l;
    }
    if cli.threads.is_some() {
        s.threads = cli.threads;
    }
    s.train.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(s)
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    let s = settings(&cli)?;
    if let Some(t) = s.threads {
        // best effort: an already initialized global pool keeps its size
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    match cli.command {
        Command::GenData { graph, out, n, widen, high_dim, treatment, outcome } => {
            let cfg = GenDataConfig { n: n.unwrap_or(s.n), seed: s.train.seed, treatment, outcome, widen, high_dim };
            let truth = cli::cmd_gen_data(&graph, &out, &cfg)?;
            println!(
                "wrote {} rows to {} (ATE {:.6}, TV {:.6}, model {})",
                cfg.n,
                out.display(),
                truth.ate,
                truth.tv,
                truth.model_hash
            );
        }
        Command::Identify { data, graph, out, query, symbolic } => {
            let report = cli::cmd_identify(&data, &graph, &query.spec()?, &s.neural(), symbolic, &out)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            if report.verdict == Verdict::NotIdentifiable {
                return Ok(ExitCode::from(3));
            }
        }
        Command::Estimate { data, graph, out, query } => {
            let report = cli::cmd_estimate(&data, &graph, &query.spec()?, &s.train, &out)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::BenchmarkId { out, trials, n, graphs } => {
            let mut cfg = BenchIdConfig {
                trials: trials.unwrap_or(s.trials),
                n: n.unwrap_or(s.n),
                seed: s.train.seed,
                taus: s.taus.clone(),
                neural: s.neural(),
                threads: s.threads,
                ..BenchIdConfig::default()
            };
            if let Some(g) = graphs {
                cfg.graphs = g;
            }
            let (report, timings) = cli::benchmark_id(&cfg)?;
            report.write_all(&out)?;
            write_timings(&timings, std::fs::File::create(out.join("timings.csv"))?)?;
            print!("{}", report.render());
        }
        Command::BenchmarkEst { out, trials, sizes, graphs, widen, no_widen } => {
            let mut cfg = BenchEstConfig {
                trials: trials.unwrap_or(s.trials),
                sizes: sizes.unwrap_or(s.sizes.clone()),
                seed: s.train.seed,
                widen: if no_widen { None } else { widen.or(s.widen) },
                train: s.train.clone(),
                threads: s.threads,
                ..BenchEstConfig::default()
            };
            if let Some(g) = graphs {
                cfg.graphs = g;
            }
            let (report, timings) = cli::benchmark_est(&cfg)?;
            report.write_all(&out)?;
            write_timings(&timings, std::fs::File::create(out.join("timings.csv"))?)?;
            print!("{}", report.render());
        }
        Command::Report { data, out } => {
            let report = cli::cmd_report(&data, &out)?;
            print!("{}", report.render());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

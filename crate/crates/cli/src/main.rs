use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ctdgm_cli::config::{PipelineConfig, RawConfig};
use ctdgm_cli::pipeline::{self, AnalyzeOptions, SweepAxis};
use ctdgm_cli::CliError;

/// Cache-transaction data grouping pipeline.
///
/// Exit status: 0 success, 2 configuration error, 3 data error,
/// 4 internal invariant violation.
#[derive(Parser, Debug)]
#[command(name = "ctdgm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load (or synthesize) the trace and write the train/test split.
    Ingest(Common),
    /// Extract cache transactions from the train split.
    Extract(Common),
    /// Build per-datum transaction features.
    Ctf(Common),
    /// Pre-block and cluster data into chunks.
    Chunk(Common),
    /// Merge chunks into groups.
    Group(Common),
    /// Replay the test split through every policy and capacity.
    Simulate(Common),
    /// Grouping report plus locality statistics of the train split.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Relation-strength limits for the access-count gap report.
        #[arg(long, value_delimiter = ',', default_values_t = [1.0, 2.0, 4.0, 8.0, 16.0])]
        limits: Vec<f64>,
        /// Occurrences required of an always-followed-by pair.
        #[arg(long, default_value_t = 2)]
        min_occurrences: usize,
        /// Cap on co-occurring pairs scored for the gap report.
        #[arg(long, default_value_t = 200_000)]
        max_pairs: usize,
    },
    /// Run every stage and write the manifest.
    Pipeline(Common),
    /// One pipeline run per value of sigma, mu or M.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        /// Run the values one after another instead of concurrently.
        #[arg(long)]
        sequential: bool,
    },
}

/// Config file plus one flag per configuration key.
#[derive(Args, Debug, Default)]
struct Common {
    /// Flat key=value file, or a JSON object when the name ends in .json.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Extra overrides as key=value, applied after the named flags.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,

    #[arg(long)]
    trace: Option<String>,
    #[arg(long)]
    synthetic: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    ops: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    skip_malformed: Option<String>,
    #[arg(long)]
    host: Option<String>,
    #[arg(long)]
    disk: Option<String>,
    #[arg(long)]
    max_records: Option<String>,
    #[arg(long)]
    train_count: Option<String>,
    #[arg(long)]
    train_fraction: Option<String>,
    #[arg(long, visible_alias = "M")]
    window_bytes: Option<String>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    include_partial: Option<String>,
    #[arg(long)]
    q: Option<String>,
    #[arg(long)]
    p: Option<String>,
    #[arg(long)]
    sigma: Option<String>,
    #[arg(long)]
    metric: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    mu: Option<String>,
    #[arg(long)]
    sort: Option<String>,
    #[arg(long)]
    fractions: Option<String>,
    #[arg(long)]
    policies: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    write_allocate: Option<String>,
    #[arg(long)]
    rolling_window: Option<String>,
    #[arg(short, long)]
    output: Option<String>,
}

impl Common {
    fn resolve(&self) -> Result<PipelineConfig, CliError> {
        let mut raw = match &self.config {
            Some(path) => RawConfig::load(path)?,
            None => RawConfig::default(),
        };
        let flags = [
            ("trace", &self.trace),
            ("synthetic", &self.synthetic),
            ("seed", &self.seed),
            ("ops", &self.ops),
            ("skip_malformed", &self.skip_malformed),
            ("host", &self.host),
            ("disk", &self.disk),
            ("max_records", &self.max_records),
            ("train_count", &self.train_count),
            ("train_fraction", &self.train_fraction),
            ("window_bytes", &self.window_bytes),
            ("mode", &self.mode),
            ("include_partial", &self.include_partial),
            ("q", &self.q),
            ("p", &self.p),
            ("sigma", &self.sigma),
            ("metric", &self.metric),
            ("alpha", &self.alpha),
            ("mu", &self.mu),
            ("sort", &self.sort),
            ("fractions", &self.fractions),
            ("policies", &self.policies),
            ("write_allocate", &self.write_allocate),
            ("rolling_window", &self.rolling_window),
            ("output", &self.output),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                raw.set(k, v.clone())?;
            }
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("--set expects key=value, got {kv:?}")))?;
            raw.set(k, v)?;
        }
        PipelineConfig::from_raw(&raw)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let stage = |name: &str, common: &Common| -> Result<(), CliError> {
        let cfg = common.resolve()?;
        for p in pipeline::run_stage(name, &cfg, &AnalyzeOptions::default())? {
            println!("{}", p.display());
        }
        Ok(())
    };
    match cli.command {
        Command::Ingest(c) => stage("ingest", &c),
        Command::Extract(c) => stage("extract", &c),
        Command::Ctf(c) => stage("ctf", &c),
        Command::Chunk(c) => stage("chunk", &c),
        Command::Group(c) => stage("group", &c),
        Command::Simulate(c) => stage("simulate", &c),
        Command::Analyze {
            common,
            limits,
            min_occurrences,
            max_pairs,
        } => {
            let cfg = common.resolve()?;
            let opts = AnalyzeOptions {
                limits,
                min_occurrences,
                max_pairs,
            };
            for p in pipeline::run_stage("analyze", &cfg, &opts)? {
                println!("{}", p.display());
            }
            Ok(())
        }
        Command::Pipeline(c) => {
            let cfg = c.resolve()?;
            let out = pipeline::run_pipeline(&cfg)?;
            println!("config_hash {}", out.manifest.config_hash);
            for a in &out.manifest.artifacts {
                println!("{}  {}", a.sha256, cfg.output.join(&a.name).display());
            }
            Ok(())
        }
        Command::Sweep {
            common,
            axis,
            values,
            sequential,
        } => {
            let cfg = common.resolve()?;
            let axis: SweepAxis = axis.parse()?;
            let table = pipeline::sweep_parameters(&cfg, axis, &values, !sequential)?;
            table
                .write_csv(std::io::stdout().lock())
                .map_err(|e| CliError::Data(e.to_string()))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ctdgm: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

//! `fedsurv`: simulation study, estimation on CSV data, and federated
//! coordinator/site processes.
//!
//! Exit codes: 0 on a clean run, 2 when the run finished with tolerated
//! problems (failed replicates or methods, dropped sites, early stop), 1 on
//! fatal errors including invalid usage.

mod config;
mod estimate;
mod network;
mod output;
mod report;
mod simulate;

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use config::{Command, RunConfig};

/// Whether a finished run was clean or degraded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Clean,
    Degraded,
}

#[derive(Parser, Debug)]
#[command(name = "fedsurv", version, about = "Federated causal survival estimation")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Run the Monte Carlo simulation study for one scenario.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        tuning: Tuning,
        /// homogeneous, covariate_shift, outcome_shift, censoring_shift or all_shift.
        #[arg(long)]
        scenario: Option<String>,
        /// Number of sites including the target.
        #[arg(long)]
        sites: Option<usize>,
        #[arg(long)]
        n0: Option<usize>,
        /// Rows per source site.
        #[arg(long)]
        nk: Option<usize>,
        #[arg(long)]
        reps: Option<usize>,
        /// Size of the simulated population behind the true curves.
        #[arg(long)]
        n_super: Option<usize>,
        /// Comma-separated evaluation days.
        #[arg(long, value_delimiter = ',')]
        eval_times: Option<Vec<f64>>,
        /// Also write the data and curves of this replicate.
        #[arg(long)]
        dump_rep: Option<usize>,
    },
    /// Estimate treatment-specific survival curves from a CSV file.
    Estimate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        tuning: Tuning,
        /// CSV with columns x1..xd,a,y,delta,r (r = 0 marks the target site).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Use the random streams of this simulation replicate.
        #[arg(long)]
        replicate: Option<usize>,
    },
    /// Run the target-site coordinator of a federated analysis.
    Coordinator {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        tuning: Tuning,
        #[command(flatten)]
        net: Net,
        /// Target-site CSV. With the loopback transport, rows of other
        /// sites in the same file are served by in-process sites.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Address to listen on (tcp transport).
        #[arg(long)]
        listen: Option<String>,
        /// Number of source sites to wait for (tcp transport).
        #[arg(long)]
        expected_sites: Option<usize>,
        /// plain or bootstrap.
        #[arg(long)]
        weights: Option<String>,
    },
    /// Run one source site of a federated analysis.
    Site {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        net: Net,
        /// CSV holding this site's rows (other sites' rows are ignored).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Site id (1 and up).
        #[arg(long)]
        site: Option<usize>,
        /// Coordinator address.
        #[arg(long)]
        connect: Option<String>,
    },
    /// Summarize the replicate records of a simulation run.
    Report {
        #[command(flatten)]
        common: Common,
        /// Directory containing records.csv.
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// JSON file with settings; flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct Tuning {
    /// Last grid day.
    #[arg(long)]
    tau: Option<f64>,
    /// Grid spacing in days.
    #[arg(long)]
    step: Option<f64>,
    /// Cross-fitting folds.
    #[arg(long)]
    folds: Option<usize>,
    /// Positivity bound for propensities and density ratios.
    #[arg(long)]
    eta_cap: Option<f64>,
    /// pooled or coarse_only.
    #[arg(long)]
    sharing: Option<String>,
    /// Comma-separated penalty grid (multiples of n).
    #[arg(long, value_delimiter = ',')]
    lambda_grid: Option<Vec<f64>>,
    #[arg(long)]
    lambda_cv_folds: Option<usize>,
    /// Bootstrap replicates for FED-BOOT.
    #[arg(long)]
    bootstrap: Option<usize>,
    /// Comma-separated subset of TGT,POOL,IVW,FED,FED-BOOT,CCOD.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
}

#[derive(Args, Debug)]
struct Net {
    /// tcp or loopback.
    #[arg(long)]
    transport: Option<String>,
    /// Per-message timeout in milliseconds.
    #[arg(long)]
    timeout_ms: Option<u64>,
}

fn put<T: serde::Serialize>(m: &mut Map<String, Value>, key: &str, v: Option<T>) {
    if let Some(v) = v {
        m.insert(key.into(), json!(v));
    }
}

impl Common {
    fn flags(&self, m: &mut Map<String, Value>) {
        put(m, "seed", self.seed);
        put(m, "out", self.out.as_ref());
    }
}

impl Tuning {
    fn flags(&self, m: &mut Map<String, Value>) {
        put(m, "tau", self.tau);
        put(m, "step", self.step);
        put(m, "folds", self.folds);
        put(m, "eta_cap", self.eta_cap);
        put(m, "sharing", self.sharing.as_ref());
        put(m, "lambda_grid", self.lambda_grid.as_ref());
        put(m, "lambda_cv_folds", self.lambda_cv_folds);
        put(m, "bootstrap", self.bootstrap);
        put(m, "methods", self.methods.as_ref().map(|v| v.iter().map(|s| s.trim().to_ascii_uppercase()).collect::<Vec<_>>()));
    }
}

impl Net {
    fn flags(&self, m: &mut Map<String, Value>) {
        put(m, "transport", self.transport.as_ref());
        put(m, "timeout_ms", self.timeout_ms);
    }
}

/// Command kind, config file and flag layer of a parsed command line.
fn layers(cmd: &Cmd) -> (Command, Option<PathBuf>, Map<String, Value>) {
    let mut m = Map::new();
    match cmd {
        Cmd::Simulate {
            common,
            tuning,
            scenario,
            sites,
            n0,
            nk,
            reps,
            n_super,
            eval_times,
            dump_rep,
        } => {
            common.flags(&mut m);
            tuning.flags(&mut m);
            put(&mut m, "scenario", scenario.as_ref().map(|s| s.trim().to_ascii_lowercase().replace('-', "_")));
            put(&mut m, "sites", *sites);
            put(&mut m, "n0", *n0);
            put(&mut m, "nk", *nk);
            put(&mut m, "reps", *reps);
            put(&mut m, "n_super", *n_super);
            put(&mut m, "eval_times", eval_times.as_ref());
            put(&mut m, "dump_rep", *dump_rep);
            (Command::Simulate, common.config.clone(), m)
        }
        Cmd::Estimate {
            common,
            tuning,
            data,
            replicate,
        } => {
            common.flags(&mut m);
            tuning.flags(&mut m);
            put(&mut m, "data", data.as_ref());
            put(&mut m, "replicate", *replicate);
            (Command::Estimate, common.config.clone(), m)
        }
        Cmd::Coordinator {
            common,
            tuning,
            net,
            data,
            listen,
            expected_sites,
            weights,
        } => {
            common.flags(&mut m);
            tuning.flags(&mut m);
            net.flags(&mut m);
            put(&mut m, "data", data.as_ref());
            put(&mut m, "listen", listen.as_ref());
            put(&mut m, "expected_sites", *expected_sites);
            put(&mut m, "weights", weights.as_ref());
            (Command::Coordinator, common.config.clone(), m)
        }
        Cmd::Site {
            common,
            net,
            data,
            site,
            connect,
        } => {
            common.flags(&mut m);
            net.flags(&mut m);
            put(&mut m, "data", data.as_ref());
            put(&mut m, "site", *site);
            put(&mut m, "connect", connect.as_ref());
            (Command::Site, common.config.clone(), m)
        }
        Cmd::Report { common, input } => {
            common.flags(&mut m);
            put(&mut m, "input", input.as_ref());
            (Command::Report, common.config.clone(), m)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let (command, file, flags) = layers(&cli.command);
    let cfg = match RunConfig::resolve(command, file.as_deref(), flags) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    let stop = Arc::new(AtomicBool::new(false));
    {
        let stop = stop.clone();
        let _ = ctrlc::set_handler(move || {
            if stop.swap(true, Ordering::SeqCst) {
                std::process::exit(1);
            }
            eprintln!("stopping after the running work; press Ctrl-C again to abort");
        });
    }
    let result = match command {
        Command::Simulate => simulate::run(&cfg, &stop),
        Command::Estimate => estimate::run(&cfg),
        Command::Coordinator => network::coordinator(&cfg),
        Command::Site => network::site(&cfg),
        Command::Report => report::run(&cfg),
    };
    match result {
        Ok(Status::Clean) => ExitCode::SUCCESS,
        Ok(Status::Degraded) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

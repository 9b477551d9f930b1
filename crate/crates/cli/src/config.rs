//! Effective run configuration: built-in defaults, overlaid by a JSON
//! config file, overlaid by command-line flags.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use fedsurv_core::fedopt::{default_lambda_grid, FedConfig, WeightMethod};
use fedsurv_core::nuisance::{NuisanceConfig, Sharing};
use fedsurv_core::simbench::{CompetitorConfig, Method, MonteCarloConfig, Scenario, ScenarioSpec};
use fedsurv_core::TimeGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Simulate,
    Estimate,
    Coordinator,
    Site,
    Report,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportKind {
    Tcp,
    /// Sites run as threads of the coordinator process, reading their rows
    /// from the coordinator's data file.
    Loopback,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weights {
    Plain,
    Bootstrap,
}

/// Every setting of every command. Fields a command does not use keep
/// their defaults and are echoed anyway.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    /// Required; there is no clock-based default.
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub data: Option<PathBuf>,
    /// Grid end point and spacing (days).
    pub tau: f64,
    pub step: f64,
    /// Cross-fitting folds.
    pub folds: usize,
    pub eta_cap: f64,
    pub sharing: Sharing,
    /// Penalty grid, as multiples of the sample size.
    pub lambda_grid: Vec<f64>,
    pub lambda_cv_folds: usize,
    /// Bootstrap replicates for FED-BOOT.
    pub bootstrap: usize,
    pub methods: Vec<Method>,
    pub scenario: Scenario,
    pub sites: usize,
    pub n0: usize,
    pub nk: usize,
    pub reps: usize,
    pub n_super: usize,
    pub eval_times: Vec<f64>,
    /// Also write data and curves of this simulation replicate.
    pub dump_rep: Option<usize>,
    /// Use the random streams of this simulation replicate.
    pub replicate: Option<usize>,
    pub transport: TransportKind,
    pub listen: String,
    pub connect: String,
    pub site: usize,
    pub expected_sites: usize,
    pub timeout_ms: u64,
    pub weights: Weights,
    pub input: Option<PathBuf>,
}

impl RunConfig {
    pub fn defaults(command: Command) -> Self {
        let nuisance = NuisanceConfig::default();
        let fed = FedConfig::default();
        RunConfig {
            command,
            seed: None,
            out: PathBuf::from("out"),
            data: None,
            tau: 200.0,
            step: 1.0,
            folds: nuisance.folds,
            eta_cap: nuisance.eta_cap,
            sharing: nuisance.sharing,
            lambda_grid: default_lambda_grid(),
            lambda_cv_folds: fed.cv_folds,
            bootstrap: fed.bootstrap,
            methods: Method::ALL.to_vec(),
            scenario: Scenario::Homogeneous,
            sites: 5,
            n0: 300,
            nk: 600,
            reps: 200,
            n_super: 1_000_000,
            eval_times: vec![30.0, 60.0, 90.0],
            dump_rep: None,
            replicate: None,
            transport: TransportKind::Tcp,
            listen: "127.0.0.1:7878".into(),
            connect: "127.0.0.1:7878".into(),
            site: 1,
            expected_sites: 4,
            timeout_ms: 30_000,
            weights: Weights::Plain,
            input: None,
        }
    }

    /// Overlays `file` (if any) and then `flags` on the defaults. Every
    /// error names the offending field.
    pub fn resolve(command: Command, file: Option<&Path>, flags: Map<String, Value>) -> Result<Self> {
        let Value::Object(mut merged) = serde_json::to_value(Self::defaults(command))? else {
            unreachable!("config serializes to an object");
        };
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading config file {}", path.display()))?;
            let Value::Object(layer) = serde_json::from_str::<Value>(&text).with_context(|| format!("parsing config file {}", path.display()))? else {
                bail!("config file {} must hold a JSON object", path.display());
            };
            overlay(&mut merged, layer, "config file")?;
        }
        overlay(&mut merged, flags, "flag")?;
        merged.insert("command".into(), serde_json::to_value(command)?);
        let cfg: RunConfig = serde_json::from_value(Value::Object(merged.clone())).map_err(|e| {
            // name the field that fails on its own
            let bad = merged
                .iter()
                .find(|(k, v)| {
                    let mut probe = serde_json::to_value(Self::defaults(command)).unwrap();
                    probe[k.as_str()] = (*v).clone();
                    serde_json::from_value::<RunConfig>(probe).is_err()
                })
                .map(|(k, _)| k.clone());
            match bad {
                Some(k) => anyhow!("invalid value for `{k}`: {e}"),
                None => anyhow!("invalid configuration: {e}"),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let fail = |field: &str, msg: &str| Err(anyhow!("invalid value for `{field}`: {msg}"));
        if self.seed.is_none() {
            return fail("seed", "a seed is required (use --seed or the config file)");
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return fail("tau", "must be positive");
        }
        if !(self.step > 0.0 && self.step <= self.tau) {
            return fail("step", "must be positive and at most tau");
        }
        if self.folds < 2 {
            return fail("folds", "must be at least 2");
        }
        if !(self.eta_cap > 1.0 && self.eta_cap.is_finite()) {
            return fail("eta_cap", "must exceed 1");
        }
        if self.lambda_grid.is_empty() || self.lambda_grid.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return fail("lambda_grid", "must be a non-empty list of finite non-negative values");
        }
        if self.lambda_cv_folds < 2 {
            return fail("lambda_cv_folds", "must be at least 2");
        }
        if self.methods.is_empty() {
            return fail("methods", "at least one method is required");
        }
        let needs_boot = self.methods.contains(&Method::FedBoot) || self.weights == Weights::Bootstrap;
        if needs_boot && self.bootstrap == 0 {
            return fail("bootstrap", "FED-BOOT needs at least one bootstrap replicate");
        }
        if self.timeout_ms == 0 {
            return fail("timeout_ms", "must be positive");
        }
        let grid = self.grid()?;
        match self.command {
            Command::Simulate => {
                if self.reps == 0 {
                    return fail("reps", "must be at least 1");
                }
                if self.n0 == 0 {
                    return fail("n0", "must be at least 1");
                }
                if self.sites == 0 {
                    return fail("sites", "must be at least 1");
                }
                if self.sites > 1 && self.nk == 0 {
                    return fail("nk", "must be at least 1");
                }
                if self.n_super < 100_000 {
                    return fail("n_super", "must be at least 100000");
                }
                if self.eval_times.is_empty() || self.eval_times.iter().any(|&t| grid.index_of(t).is_none()) {
                    return fail("eval_times", "every time must be a grid point");
                }
                if self.dump_rep.is_some_and(|r| r >= self.reps) {
                    return fail("dump_rep", "must be below reps");
                }
            }
            Command::Estimate | Command::Coordinator | Command::Site => {
                if self.data.is_none() {
                    return fail("data", "a data file is required");
                }
                if self.command == Command::Site && self.site == 0 {
                    return fail("site", "source sites are numbered from 1");
                }
                if self.command == Command::Coordinator && self.transport == TransportKind::Tcp && self.expected_sites == 0 {
                    return fail("expected_sites", "must be at least 1");
                }
            }
            Command::Report => {
                if self.input.is_none() {
                    return fail("input", "a directory with records.csv is required");
                }
            }
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed.expect("validated")
    }

    pub fn grid(&self) -> Result<Arc<TimeGrid>> {
        Ok(Arc::new(TimeGrid::uniform(self.tau, self.step).map_err(|e| anyhow!("invalid grid: {e}"))?))
    }

    pub fn nuisance(&self) -> NuisanceConfig {
        NuisanceConfig {
            folds: self.folds,
            eta_cap: self.eta_cap,
            sharing: self.sharing,
            ..NuisanceConfig::default()
        }
    }

    pub fn fed(&self) -> FedConfig {
        FedConfig {
            lambda_grid: self.lambda_grid.clone(),
            cv_folds: self.lambda_cv_folds,
            bootstrap: self.bootstrap,
        }
    }

    pub fn competitors(&self) -> CompetitorConfig {
        CompetitorConfig {
            nuisance: self.nuisance(),
            fed: self.fed(),
            methods: self.methods.clone(),
        }
    }

    pub fn scenario_spec(&self) -> ScenarioSpec {
        ScenarioSpec {
            sites: self.sites,
            ..ScenarioSpec::new(self.scenario, self.n0, self.nk)
        }
    }

    pub fn monte_carlo(&self) -> MonteCarloConfig {
        MonteCarloConfig {
            reps: self.reps,
            eval_times: self.eval_times.clone(),
            n_super: self.n_super,
            competitors: self.competitors(),
        }
    }

    pub fn weight_method(&self) -> WeightMethod {
        match self.weights {
            Weights::Plain => WeightMethod::Plain,
            Weights::Bootstrap => WeightMethod::Bootstrap,
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    /// Writes the effective configuration to `config.json` in `dir`.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join("config.json");
        std::fs::write(&path, serde_json::to_string_pretty(self)? + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}

fn overlay(base: &mut Map<String, Value>, layer: Map<String, Value>, source: &str) -> Result<()> {
    for (k, v) in layer {
        if k == "command" {
            continue;
        }
        if !base.contains_key(&k) {
            bail!("unknown {source} setting `{k}`");
        }
        base.insert(k, v);
    }
    Ok(())
}

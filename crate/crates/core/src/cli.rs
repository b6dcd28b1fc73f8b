//! Command-line front end: one pipeline stage per invocation.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{Config, SEED_ENV};
use crate::error::{Error, Result};
use crate::par::Exec;
use crate::pipeline::{self, ModelKind, StageOptions};

#[derive(Debug, Parser)]
#[command(name = "gridfloor", version, about = "Sensor-floor localization pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// flat key = value file layered over the upstream stage's configuration
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// overrides the config file and GRIDFLOOR_SEED
    #[arg(long)]
    pub seed: Option<u64>,
    /// <strips>x<nodes>
    #[arg(long, value_name = "SxN")]
    pub grid: Option<String>,
    /// any configuration key, e.g. --set cnn_filters=16
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// run every data-parallel loop on the calling thread
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Clone, Args)]
pub struct Staged {
    #[arg(long = "in", value_name = "DIR")]
    pub input: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Rf,
    Cnn,
    Rcnn,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Rf => ModelKind::Rf,
            ModelArg::Cnn => ModelKind::Cnn,
            ModelArg::Rcnn => ModelKind::Rcnn,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the training and test recordings
    Simulate(Common),
    /// Synchronize payload logs into frame datasets
    Ingest(Staged),
    /// Fit feature scaling on the training frames
    Features(Staged),
    /// Grid-search and fit the random forest
    TrainRf(Staged),
    /// Train the convolutional network
    TrainCnn(Staged),
    /// Localize the test runs with a trained model
    Predict {
        #[arg(long, value_enum)]
        model: ModelArg,
        #[command(flatten)]
        staged: Staged,
    },
    /// Refine network predictions into regularized trajectories
    Trajfit(Staged),
    /// Per-frame errors and summary metrics
    Evaluate(Staged),
    /// Comparison table, trajectory overlays and RSSI heatmap
    Report(Staged),
}

/// Layers the config file, the seed variable and the flags, in that order.
pub fn stage_options(c: &Common, env_seed: Option<&str>) -> Result<StageOptions> {
    let mut config = match &c.config {
        Some(p) => Config::load(p)?,
        None => Config::new(),
    };
    if let Some(s) = env_seed {
        let s = s.trim();
        s.parse::<u64>()
            .map_err(|_| Error::Config(format!("{SEED_ENV}={s:?} is not an unsigned integer")))?;
        config.set("seed", s)?;
    }
    if let Some(seed) = c.seed {
        config.set("seed", &seed.to_string())?;
    }
    if let Some(g) = &c.grid {
        crate::grid::GridSpec::parse_dims(g)?;
        config.set("grid", g)?;
    }
    for pair in &c.set {
        config.set_pair(pair)?;
    }
    Ok(StageOptions {
        config,
        exec: if c.sequential { Exec::Sequential } else { Exec::default() },
    })
}

fn with<F>(s: &Staged, env_seed: Option<&str>, f: F) -> Result<()>
where
    F: FnOnce(&Path, &Path, &StageOptions) -> Result<pipeline::RunManifest>,
{
    let opts = stage_options(&s.common, env_seed)?;
    f(&s.input, &s.common.out, &opts).map(|_| ())
}

pub fn run(cli: Cli, env_seed: Option<&str>) -> Result<()> {
    match cli.command {
        Command::Simulate(c) => pipeline::simulate(&c.out, &stage_options(&c, env_seed)?).map(|_| ()),
        Command::Ingest(s) => with(&s, env_seed, pipeline::ingest),
        Command::Features(s) => with(&s, env_seed, pipeline::features),
        Command::TrainRf(s) => with(&s, env_seed, pipeline::train_rf),
        Command::TrainCnn(s) => with(&s, env_seed, pipeline::train_cnn),
        Command::Predict { model, staged } => {
            with(&staged, env_seed, |i, o, opts| pipeline::predict(model.into(), i, o, opts))
        }
        Command::Trajfit(s) => with(&s, env_seed, pipeline::trajfit),
        Command::Evaluate(s) => with(&s, env_seed, pipeline::evaluate),
        Command::Report(s) => with(&s, env_seed, pipeline::report),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    fn parse(args: &[&str]) -> std::result::Result<Cli, clap::Error> {
        Cli::try_parse_from(std::iter::once("gridfloor").chain(args.iter().copied()))
    }

    #[test]
    fn definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn usage_errors_exit_with_two() {
        for bad in [
            &["ingest", "--out", "d"][..],
            &["predict", "--in", "m", "--out", "p"],
            &["predict", "--model", "svm", "--in", "m", "--out", "p"],
            &["simulate"],
            &["frobnicate"],
            &["simulate", "--out", "r", "--bogus"],
        ] {
            let e = parse(bad).unwrap_err();
            assert_eq!(e.exit_code(), 2, "{bad:?}");
        }
    }

    #[test]
    fn seed_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("sim.cfg");
        std::fs::write(&cfg, "seed = 1\n").unwrap();
        let cfg_s = cfg.to_str().unwrap();
        let Command::Simulate(c) = parse(&["simulate", "--config", cfg_s, "--out", "r"]).unwrap().command else {
            panic!()
        };
        assert_eq!(stage_options(&c, None).unwrap().config.get("seed"), Some("1"));
        assert_eq!(stage_options(&c, Some("5")).unwrap().config.get("seed"), Some("5"));
        assert!(stage_options(&c, Some("x")).is_err());
        let Command::Simulate(c) =
            parse(&["simulate", "--config", cfg_s, "--out", "r", "--seed", "9", "--grid", "4x3"]).unwrap().command
        else {
            panic!()
        };
        let o = stage_options(&c, Some("5")).unwrap();
        assert_eq!(o.config.get("seed"), Some("9"));
        assert_eq!(o.config.get("grid"), Some("4x3"));
    }
}

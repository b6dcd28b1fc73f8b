//! Flat `key = value` configuration shared by every pipeline stage.
//!
//! A stage starts from the resolved configuration recorded by its upstream
//! stage, then layers the `--config` file, the `GRIDFLOOR_SEED` variable and
//! command-line overrides on top. Unknown keys are rejected so typos fail
//! loudly instead of silently falling back to defaults.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::forest::ForestParams;
use crate::fsio::sha256_str;
use crate::grid::GridSpec;
use crate::nn::{NetworkSpec, TrainConfig};
use crate::sim::{SignalModel, SimConfig};

pub const SEED_ENV: &str = "GRIDFLOOR_SEED";

/// Every recognised key with its default value.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("grid", "23x15"),
    // metres; "auto" keeps 30/23 m strip spacing and 1 m node spacing
    ("hall_length", "auto"),
    ("hall_width", "auto"),
    ("robot_speed", "1.0"),
    ("node_sample_period", "0.4"),
    ("poll_rtt", "4.0"),
    ("poll_jitter_sd", "0.05"),
    ("buffer_capacity", "32"),
    ("gt_rate", "200"),
    ("duration", "none"),
    ("rssi_ref", "-40"),
    ("path_loss_exp", "2.2"),
    ("rssi_noise_sd", "2.0"),
    ("dipole_strength", "5.0"),
    ("mag_noise_sd", "0.3"),
    ("accel_noise_sd", "0.02"),
    ("gyro_noise_sd", "0.1"),
    ("test_runs", "3"),
    ("test_waypoints", "6"),
    ("rf_trees", "50,100,200"),
    ("rf_depths", "8,16,none"),
    ("rf_min_leaf", "1"),
    ("rf_features_per_split", "auto"),
    ("cnn_filters", "64"),
    ("cnn_hidden", "128"),
    ("cnn_learning_rate", "0.001"),
    ("cnn_batch_size", "32"),
    ("cnn_max_epochs", "200"),
    ("cnn_patience", "10"),
    ("trajfit_window", "none"),
    ("heatmap_frames", "4"),
];

fn default_of(key: &str) -> Option<&'static str> {
    KEYS.iter().find(|(k, _)| *k == key).map(|(_, v)| *v)
}

/// Explicitly set keys; anything absent takes its default.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("expected key = value, got {line:?}"),
            })?;
            let k = k.trim();
            if cfg.values.contains_key(k) {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("key {k:?} set twice"),
                });
            }
            cfg.set(k, v.trim()).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = Self::new();
        for (k, v) in map {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if default_of(key).is_none() {
            return Err(Error::Config(format!("unknown key {key:?}")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// `key=value` form used by `--set`.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got {pair:?}")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str).or_else(|| default_of(key))
    }

    /// `other` wins on every key it sets.
    pub fn overlay(&self, other: &Config) -> Config {
        let mut values = self.values.clone();
        values.extend(other.values.iter().map(|(k, v)| (k.clone(), v.clone())));
        Config { values }
    }

    /// All keys, defaults filled in, sorted.
    pub fn resolved(&self) -> BTreeMap<String, String> {
        KEYS.iter()
            .map(|(k, d)| (k.to_string(), self.values.get(*k).cloned().unwrap_or_else(|| d.to_string())))
            .collect()
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.resolved() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Digest of the resolved configuration, so an explicit default and an
    /// omitted key hash the same.
    pub fn hash(&self) -> String {
        sha256_str(&self.render())
    }

    pub fn settings(&self) -> Result<Settings> {
        Settings::from_config(self)
    }
}

fn raw<'a>(cfg: &'a Config, key: &str) -> &'a str {
    cfg.get(key).expect("key is listed in KEYS")
}

fn num<T: std::str::FromStr>(cfg: &Config, key: &str) -> Result<T> {
    let v = raw(cfg, key);
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn optional<T: std::str::FromStr>(cfg: &Config, key: &str, none: &str) -> Result<Option<T>> {
    let v = raw(cfg, key);
    if v.eq_ignore_ascii_case(none) {
        Ok(None)
    } else {
        num(cfg, key).map(Some)
    }
}

fn list<T>(key: &str, v: &str, parse: impl Fn(&str) -> Option<T>) -> Result<Vec<T>> {
    let items: Option<Vec<T>> = v.split(',').map(|s| parse(s.trim())).collect();
    match items {
        Some(items) if !items.is_empty() => Ok(items),
        _ => Err(Error::Config(format!("{key}: cannot parse list {v:?}"))),
    }
}

/// Typed view of a configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub seed: u64,
    pub sim: SimConfig,
    pub signal: SignalModel,
    pub test_runs: usize,
    pub test_waypoints: usize,
    pub rf_base: ForestParams,
    pub rf_trees: Vec<usize>,
    pub rf_depths: Vec<Option<usize>>,
    pub network: NetworkSpec,
    pub train: TrainConfig,
    pub trajfit_window: Option<usize>,
    pub heatmap_frames: usize,
}

impl Settings {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let seed: u64 = num(cfg, "seed")?;
        let (strips, nodes) = GridSpec::parse_dims(raw(cfg, "grid"))?;
        let hall_length = optional(cfg, "hall_length", "auto")?.unwrap_or(strips as f64 * 30.0 / 23.0);
        let hall_width = optional(cfg, "hall_width", "auto")?.unwrap_or(nodes as f64);
        let grid = GridSpec::new(strips, nodes, hall_length, hall_width)?;
        let sim = SimConfig {
            grid,
            node_sample_period: num(cfg, "node_sample_period")?,
            poll_rtt: num(cfg, "poll_rtt")?,
            poll_jitter_sd: num(cfg, "poll_jitter_sd")?,
            buffer_capacity: num(cfg, "buffer_capacity")?,
            gt_rate: num(cfg, "gt_rate")?,
            robot_speed: num(cfg, "robot_speed")?,
            rng_seed: seed,
            duration: optional(cfg, "duration", "none")?,
        };
        sim.validate()?;
        let signal = SignalModel {
            rssi_ref: num(cfg, "rssi_ref")?,
            path_loss_exp: num(cfg, "path_loss_exp")?,
            rssi_noise_sd: num(cfg, "rssi_noise_sd")?,
            dipole_strength: num(cfg, "dipole_strength")?,
            mag_noise_sd: num(cfg, "mag_noise_sd")?,
            accel_noise_sd: num(cfg, "accel_noise_sd")?,
            gyro_noise_sd: num(cfg, "gyro_noise_sd")?,
            ..SignalModel::default()
        };
        signal.validate()?;
        let rf_base = ForestParams {
            min_leaf: num(cfg, "rf_min_leaf")?,
            features_per_split: optional(cfg, "rf_features_per_split", "auto")?,
            seed,
            ..ForestParams::default()
        };
        let rf_trees = list("rf_trees", raw(cfg, "rf_trees"), |s| s.parse().ok())?;
        let rf_depths = list("rf_depths", raw(cfg, "rf_depths"), |s| {
            if s.eq_ignore_ascii_case("none") {
                Some(None)
            } else {
                s.parse().ok().map(Some)
            }
        })?;
        for n in &rf_trees {
            ForestParams { n_trees: *n, ..rf_base.clone() }.validate()?;
        }
        let filters: usize = num(cfg, "cnn_filters")?;
        let hidden: usize = num(cfg, "cnn_hidden")?;
        if filters == 0 || hidden == 0 {
            return Err(Error::Config("cnn_filters and cnn_hidden must be positive".into()));
        }
        let train = TrainConfig {
            learning_rate: num(cfg, "cnn_learning_rate")?,
            batch_size: num(cfg, "cnn_batch_size")?,
            max_epochs: num(cfg, "cnn_max_epochs")?,
            patience: num(cfg, "cnn_patience")?,
            seed,
        };
        train.validate()?;
        let test_runs = num(cfg, "test_runs")?;
        let test_waypoints = num(cfg, "test_waypoints")?;
        if test_runs == 0 || test_waypoints < 2 {
            return Err(Error::Config("need at least one test run with two waypoints".into()));
        }
        Ok(Self {
            seed,
            sim,
            signal,
            test_runs,
            test_waypoints,
            rf_base,
            rf_trees,
            rf_depths,
            network: NetworkSpec::with_widths(filters, hidden),
            train,
            trajfit_window: optional(cfg, "trajfit_window", "none")?,
            heatmap_frames: num(cfg, "heatmap_frames")?,
        })
    }

    pub fn grid(&self) -> GridSpec {
        self.sim.grid
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve_to_paper_setup() {
        let s = Config::new().settings().unwrap();
        assert_eq!(s.grid(), GridSpec::default());
        assert_eq!(s.sim, SimConfig::default());
        assert_eq!(s.signal, SignalModel::default());
        assert_eq!(s.rf_trees, vec![50, 100, 200]);
        assert_eq!(s.rf_depths, vec![Some(8), Some(16), None]);
        assert!(s.network.is_default());
        assert_eq!(s.train, TrainConfig::default());
    }

    #[test]
    fn parse_comments_and_errors() {
        let c = Config::parse("# sim\nseed = 7\n\ngrid=6x4 # small\n").unwrap();
        assert_eq!(c.get("seed"), Some("7"));
        let s = c.settings().unwrap();
        assert_eq!((s.grid().n_strips, s.grid().nodes_per_strip), (6, 4));
        assert_eq!(s.grid().hall_width, 4.0);
        assert!(matches!(Config::parse("seed 7"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(Config::parse("x\n\nsed = 1"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(Config::parse("seed=1\nsed = 1"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(Config::parse("seed=1\nseed=2"), Err(Error::Parse { line: 2, .. })));
        assert!(Config::parse("seed = -1").unwrap().settings().is_err());
    }

    #[test]
    fn overlay_and_hash() {
        let base = Config::parse("seed = 3\ngrid = 6x4").unwrap();
        let mut top = Config::new();
        top.set_pair("seed=9").unwrap();
        let merged = base.overlay(&top);
        assert_eq!(merged.get("seed"), Some("9"));
        assert_eq!(merged.get("grid"), Some("6x4"));
        assert_ne!(merged.hash(), base.hash());
        // explicit defaults hash like omitted keys
        assert_eq!(Config::parse("seed = 0").unwrap().hash(), Config::new().hash());
        let round = Config::from_map(&merged.resolved()).unwrap();
        assert_eq!(round.hash(), merged.hash());
        assert!(top.set_pair("nope=1").is_err());
    }
}

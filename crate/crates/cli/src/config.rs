//! Run configuration, loaded from TOML and adjusted by command-line flags.
//!
//! Relative paths are resolved against the directory of the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use folio_core::backtest::{INDEX_BENCHMARKS, POPULAR_FUNDS};
use folio_core::market_data::PeriodSpec;
use folio_core::universe::{LiveConfig, TickerRemap, DEFAULT_CALLS};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    pub data: DataConfig,
    #[serde(default)]
    pub universe: UniverseConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub cardinality: CardinalityConfig,
    pub in_sample: PeriodConfig,
    pub periods: Vec<PeriodConfig>,
    #[serde(default)]
    pub benchmarks: BenchmarkConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Price table: `date,TICKER,...`.
    pub prices: PathBuf,
    /// One ticker per line.
    pub constituents: PathBuf,
    /// `ticker,sector` rows; sector charts are skipped without it.
    #[serde(default)]
    pub sectors: Option<PathBuf>,
    /// Collapse daily prices to the last close of each week.
    #[serde(default = "yes")]
    pub resample_weekly: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ChatMode {
    #[default]
    Replay,
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UniverseConfig {
    pub sizes: Vec<usize>,
    pub calls: usize,
    pub mode: ChatMode,
    /// Directory with `universe_<X>.txt` and `weights_<X>.txt` transcripts.
    pub transcripts: PathBuf,
    pub remap: TickerRemap,
    pub live: LiveConfig,
}

impl Default for UniverseConfig {
    fn default() -> Self {
        Self {
            sizes: vec![15, 30, 45],
            calls: DEFAULT_CALLS,
            mode: ChatMode::Replay,
            transcripts: PathBuf::from("transcripts"),
            remap: TickerRemap::default(),
            live: LiveConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub points: usize,
    /// Per-size `[lower, upper]` overrides of the default weight bounds.
    pub bounds: BTreeMap<String, [f64; 2]>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            points: 100,
            bounds: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CardinalityConfig {
    pub k: Vec<usize>,
    pub points: usize,
    /// Candidate assets; every priced constituent when absent.
    pub universe: Option<Vec<String>>,
    pub node_limit: u64,
    pub time_limit_secs: Option<u64>,
    /// Write every branch-and-bound node as JSON lines.
    pub node_log: bool,
}

impl Default for CardinalityConfig {
    fn default() -> Self {
        Self {
            k: vec![15, 30, 45],
            points: 100,
            universe: None,
            node_limit: 1_000_000,
            time_limit_secs: None,
            node_log: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeriodConfig {
    pub label: String,
    #[serde(deserialize_with = "toml_date")]
    pub start: NaiveDate,
    #[serde(deserialize_with = "toml_date")]
    pub end: NaiveDate,
}

/// Accepts a TOML local date (`2021-09-01`) or a quoted ISO date.
fn toml_date<'de, D: serde::Deserializer<'de>>(d: D) -> Result<NaiveDate, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Native(toml::value::Datetime),
        Text(String),
    }
    let text = match Raw::deserialize(d)? {
        Raw::Native(dt) => match (dt.date, dt.time) {
            (Some(date), None) => date.to_string(),
            _ => return Err(serde::de::Error::custom(format!("`{dt}` is not a plain date"))),
        },
        Raw::Text(s) => s,
    };
    text.parse().map_err(serde::de::Error::custom)
}

impl PeriodConfig {
    pub fn spec(&self) -> Result<PeriodSpec> {
        Ok(PeriodSpec::new(self.label.clone(), self.start, self.end)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    /// `[label, series]` pairs in table order.
    pub indices: Vec<[String; 2]>,
    pub funds: Vec<String>,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            indices: INDEX_BENCHMARKS
                .iter()
                .map(|(l, t)| [l.to_string(), t.to_string()])
                .collect(),
            funds: POPULAR_FUNDS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl RunConfig {
    /// Parses, resolves paths and validates.
    pub fn load(path: &Path) -> Result<Self> {
        let cfg = Self::parse_file(path)?;
        cfg.validate()?;
        cfg.check_paths()?;
        Ok(cfg)
    }

    /// Parses and resolves paths without validating, so flag overrides can
    /// be applied first.
    pub fn parse_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    /// Input files must exist; transcripts only matter when replaying.
    pub fn check_paths(&self) -> Result<()> {
        let mut required = vec![("prices", &self.data.prices), ("constituents", &self.data.constituents)];
        if let Some(s) = &self.data.sectors {
            required.push(("sectors", s));
        }
        if self.universe.mode == ChatMode::Replay {
            required.push(("transcripts", &self.universe.transcripts));
        }
        for (what, p) in required {
            if !p.exists() {
                bail!("{what} path {} does not exist", p.display());
            }
        }
        Ok(())
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out_dir);
        fix(&mut self.data.prices);
        fix(&mut self.data.constituents);
        if let Some(s) = self.data.sectors.as_mut() {
            fix(s);
        }
        fix(&mut self.universe.transcripts);
    }

    pub fn validate(&self) -> Result<()> {
        if self.universe.sizes.is_empty() || self.universe.sizes.contains(&0) {
            bail!("universe sizes must be a non-empty list of positive numbers");
        }
        if self.cardinality.k.contains(&0) {
            bail!("cardinality targets must be positive");
        }
        if self.optimizer.points < 2 || self.cardinality.points < 2 {
            bail!("frontiers need at least 2 points");
        }
        self.in_sample.spec()?;
        let mut seen = std::collections::BTreeSet::new();
        for p in &self.periods {
            p.spec()?;
            if !seen.insert(&p.label) {
                bail!("period label `{}` is used twice", p.label);
            }
        }
        for key in self.optimizer.bounds.keys() {
            key.parse::<usize>()
                .with_context(|| format!("bounds key `{key}` is not a universe size"))?;
        }
        Ok(())
    }

    pub fn bounds_override(&self, size: usize) -> Option<[f64; 2]> {
        self.optimizer.bounds.get(&size.to_string()).copied()
    }

    /// Keeps only the named periods, in the order given.
    pub fn restrict_periods(&mut self, labels: &[String]) -> Result<()> {
        let mut kept = Vec::new();
        for l in labels {
            let p = self
                .periods
                .iter()
                .find(|p| &p.label == l)
                .with_context(|| format!("unknown period `{l}`"))?;
            kept.push(p.clone());
        }
        self.periods = kept;
        Ok(())
    }

    pub fn universe_dir(&self) -> PathBuf {
        self.out_dir.join("universe")
    }

    pub fn frontier_dir(&self, size: usize) -> PathBuf {
        self.out_dir.join("frontier").join(size.to_string())
    }

    pub fn cardinality_dir(&self, k: usize) -> PathBuf {
        self.out_dir.join("cardinality").join(format!("k{k}"))
    }

    pub fn backtest_dir(&self, size: usize, period: &str) -> PathBuf {
        self.out_dir.join("backtest").join(size.to_string()).join(period)
    }

    pub fn report_dir(&self) -> PathBuf {
        self.out_dir.join("report")
    }
}

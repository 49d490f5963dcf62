// SPDX-License-Identifier: MIT OR Apache-2.0

//! Run configuration (TOML) and `--ablate key=value` overrides.

use std::path::{Path, PathBuf};

use attnscope_core::eval::{BaseMetric, FractionSchedule};
use attnscope_core::{MacsConfig, ModelConfig, RolloutConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Environment variable overriding the output directory.
pub const OUT_ENV: &str = "ATTNSCOPE_OUT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seed for random attributions and random orderings.
    pub seed: u64,
    /// Tokens generated per sample.
    pub max_new: usize,
    pub full_matrices: bool,
    pub corpus: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub fractions: FractionSchedule,
    pub metrics: Vec<BaseMetric>,
    /// Also measure SRG between two independent random orderings.
    pub random_pair: bool,
    pub model: ModelConfig,
    pub macs: MacsConfig,
    pub rollout: RolloutConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            max_new: 4,
            full_matrices: false,
            corpus: None,
            out_dir: PathBuf::from("out"),
            fractions: FractionSchedule::default(),
            metrics: BaseMetric::ALL.to_vec(),
            random_pair: false,
            model: ModelConfig::default(),
            macs: MacsConfig::default(),
            rollout: RolloutConfig::default(),
        }
    }
}

impl RunConfig {
    /// Paths inside the file are taken relative to the file's directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut config: RunConfig = toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        // relative paths are relative to the config file
        let base = path.parent().unwrap_or(Path::new(""));
        config.corpus = config.corpus.map(|c| base.join(c));
        config.out_dir = base.join(&config.out_dir);
        config.validate()?;
        Ok(config)
    }

    /// Loads `path` if given, otherwise the defaults.
    pub fn load_or_default(path: Option<&Path>) -> CliResult<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        self.model.validate()?;
        self.macs.validate()?;
        self.rollout.validate()?;
        if self.metrics.is_empty() {
            return Err(CliError::Usage("at least one metric is required".into()));
        }
        Ok(())
    }

    /// Output directory: explicit flag, then `ATTNSCOPE_OUT`, then the config.
    pub fn resolve_out_dir(&self, flag: Option<&Path>) -> PathBuf {
        if let Some(p) = flag {
            return p.to_path_buf();
        }
        match std::env::var_os(OUT_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.out_dir.clone(),
        }
    }
}

fn parse_scalar(raw: &str) -> serde_json::Value {
    if let Ok(b) = raw.parse::<bool>() {
        return serde_json::Value::Bool(b);
    }
    if let Ok(i) = raw.parse::<i64>() {
        return serde_json::Value::from(i);
    }
    if let Ok(f) = raw.parse::<f64>() {
        return serde_json::Value::from(f);
    }
    serde_json::Value::String(raw.to_string())
}

fn set_field<T>(config: &T, key: &str, raw: &str) -> CliResult<Option<T>>
where
    T: Serialize + for<'de> Deserialize<'de>,
{
    let mut value = serde_json::to_value(config).map_err(|e| CliError::Usage(e.to_string()))?;
    let obj = value.as_object_mut().expect("configs serialise to objects");
    let Some(slot) = obj.get_mut(key) else {
        return Ok(None);
    };
    let mut parsed = parse_scalar(raw);
    // integers are valid for float fields such as alpha
    if slot.is_f64() {
        if let Some(f) = parsed.as_f64() {
            parsed = serde_json::Value::from(f);
        }
    }
    *slot = parsed;
    serde_json::from_value(value)
        .map(Some)
        .map_err(|e| CliError::Usage(format!("--ablate {key}={raw}: {e}")))
}

/// Applies one `key=value` override to the MACS or rollout configuration.
/// Keys may be qualified as `macs.key` or `rollout.key`.
pub fn apply_ablation(macs: &mut MacsConfig, rollout: &mut RolloutConfig, spec: &str) -> CliResult<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("--ablate expects key=value, got {spec:?}")))?;
    let (scope, key) = match key.trim().split_once('.') {
        Some((scope, key)) => (Some(scope), key),
        None => (None, key.trim()),
    };
    let raw = raw.trim();
    if scope.is_none() || scope == Some("macs") {
        if let Some(next) = set_field(macs, key, raw)? {
            next.validate()?;
            *macs = next;
            return Ok(());
        }
    }
    if scope.is_none() || scope == Some("rollout") {
        if let Some(next) = set_field(rollout, key, raw)? {
            next.validate()?;
            *rollout = next;
            return Ok(());
        }
    }
    Err(CliError::Usage(format!("--ablate: unknown key {key:?}")))
}

/// Parses `--fractions 0,0.01,0.05`.
pub fn parse_fractions(raw: &str) -> CliResult<FractionSchedule> {
    let values = raw
        .split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| CliError::Usage(format!("bad fraction {s:?}"))))
        .collect::<CliResult<Vec<_>>>()?;
    Ok(FractionSchedule::new(values)?)
}

/// Parses `--metrics ml,pp,rouge_l`.
pub fn parse_metrics(raw: &str) -> CliResult<Vec<BaseMetric>> {
    raw.split(',')
        .map(|s| s.trim().parse::<BaseMetric>().map_err(|_| CliError::Usage(format!("unknown metric {s:?}"))))
        .collect()
}

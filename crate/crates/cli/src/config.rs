use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use constrdyn::training::TrainConfig;
use serde_json::{Map, Value};

/// Environment variable that overrides the seed in a training config.
pub const SEED_ENV: &str = "CONSTRDYN_SEED";

/// A training run: every [`TrainConfig`] key plus `dataset` and `out_dir`,
/// both relative to the config file unless absolute.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub dataset: PathBuf,
    pub out_dir: PathBuf,
}

fn take_path(map: &mut Map<String, Value>, key: &str, base: &Path) -> Result<PathBuf> {
    match map.remove(key) {
        Some(Value::String(s)) => Ok(base.join(s)),
        Some(other) => bail!("`{key}` must be a string path, got {other}"),
        None => bail!("missing `{key}`"),
    }
}

impl RunConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut value: Value = serde_json::from_str(text).context("config is not valid JSON")?;
        let map = value
            .as_object_mut()
            .context("config must be a JSON object")?;
        let dataset = take_path(map, "dataset", base)?;
        let out_dir = take_path(map, "out_dir", base)?;
        let train: TrainConfig = serde_json::from_value(value).context("invalid training config")?;
        train.validate()?;
        Ok(Self {
            train,
            dataset,
            out_dir,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).with_context(|| format!("in {}", path.display()))
    }

    /// Applies the seed precedence: flag, then environment, then config.
    pub fn apply_seed(&mut self, flag: Option<u64>, env: Option<&str>) -> Result<()> {
        if let Some(seed) = flag {
            self.train.seed = seed;
        } else if let Some(s) = env {
            self.train.seed = s
                .trim()
                .parse()
                .with_context(|| format!("{SEED_ENV} is not an unsigned integer: {s:?}"))?;
        }
        Ok(())
    }
}

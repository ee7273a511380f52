//! Run configuration: defaults, key=value config files, flag overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "SATCAUSAL_OUT_DIR";

/// Effective settings for one invocation; echoed into every output file so
/// results stay reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub data: Option<String>,
    pub constraints: String,
    pub k: usize,
    pub seed: u64,
    pub refutation_runs: usize,
    pub out_dir: String,
    pub jobs: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: None,
            constraints: "default-sat".to_string(),
            k: 10,
            seed: 0,
            refutation_runs: 100,
            out_dir: ".".to_string(),
            jobs: None,
        }
    }
}

impl RunConfig {
    /// Defaults, then the environment, then a config file if given. Flag
    /// overrides are applied by the caller after this.
    pub fn load(config_file: Option<&Path>) -> Result<RunConfig, String> {
        let mut cfg = RunConfig::default();
        if let Ok(dir) = std::env::var(OUT_DIR_ENV) {
            if !dir.is_empty() {
                cfg.out_dir = dir;
            }
        }
        if let Some(path) = config_file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
            cfg.apply_file(&text)?;
        }
        Ok(cfg)
    }

    /// Applies `key=value` lines; `#` starts a comment.
    fn apply_file(&mut self, text: &str) -> Result<(), String> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("config line {}: expected key=value", lineno + 1))?;
            let (key, value) = (key.trim(), value.trim());
            let parse = |what: &str, v: &str| -> Result<u64, String> {
                v.parse::<u64>()
                    .map_err(|_| format!("config line {}: bad {what}", lineno + 1))
            };
            match key {
                "data" => self.data = Some(value.to_string()),
                "constraints" => self.constraints = value.to_string(),
                "k" => self.k = parse("fold count", value)? as usize,
                "seed" => self.seed = parse("seed", value)?,
                "runs" => self.refutation_runs = parse("run count", value)? as usize,
                "out_dir" => self.out_dir = value.to_string(),
                "jobs" => self.jobs = Some(parse("job count", value)? as usize),
                other => return Err(format!("config line {}: unknown key {other}", lineno + 1)),
            }
        }
        Ok(())
    }

    pub fn out_path(&self, name: &str) -> PathBuf {
        Path::new(&self.out_dir).join(name)
    }
}

//! Service configuration, read from a TOML file.
//!
//! ```toml
//! bind = "127.0.0.1:8080"
//! checkpoints = "ckpts"
//! pair_store = "pairs.json"
//! max_body_bytes = 262144
//! ```
//! Relative paths resolve against the directory of the config file. The
//! `PITCH_EPV_CKPTS` environment variable replaces `checkpoints`.

use std::ffi::OsString;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub const CKPTS_ENV: &str = "PITCH_EPV_CKPTS";

pub const DEFAULT_BIND: &str = "127.0.0.1:8080";

/// Large enough for any pair of 22-player states with room to spare.
pub const DEFAULT_MAX_BODY: usize = 256 * 1024;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid service config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid service config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_bind")]
    pub bind: SocketAddr,
    pub checkpoints: PathBuf,
    pub pair_store: PathBuf,
    #[serde(default = "default_max_body")]
    pub max_body_bytes: usize,
}

fn default_bind() -> SocketAddr {
    DEFAULT_BIND.parse().expect("default bind address parses")
}

fn default_max_body() -> usize {
    DEFAULT_MAX_BODY
}

impl ServiceConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: ServiceConfig = toml::from_str(text)?;
        if cfg.max_body_bytes == 0 {
            return Err(ConfigError::Invalid("max_body_bytes must be positive".into()));
        }
        Ok(cfg)
    }

    /// Parses `path` and anchors relative paths at its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.checkpoints, &mut cfg.pair_store] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Applies a value of [`CKPTS_ENV`]; empty values are ignored.
    pub fn with_ckpts_override(mut self, value: Option<OsString>) -> Self {
        if let Some(v) = value.filter(|v| !v.is_empty()) {
            self.checkpoints = PathBuf::from(v);
        }
        self
    }

    pub fn with_env(self) -> Self {
        self.with_ckpts_override(std::env::var_os(CKPTS_ENV))
    }
}

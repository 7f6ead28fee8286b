//! `key = value` configuration file shared by all subcommands.
//!
//! Command-line flags override file values. A results file written by
//! `decaf segment` is also accepted: its `config` object is used.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModalitiesKey {
    Both,
    Video,
    Frame,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OtsuScopeKey {
    Global,
    PerFrame,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalModeKey {
    Union,
    PerObject,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    // fuse
    pub start_layer: Option<usize>,
    pub sigma: Option<f64>,
    pub contrastive: Option<bool>,
    pub modalities: Option<ModalitiesKey>,
    pub video_weight: Option<f64>,
    pub renormalize_rows: Option<bool>,
    // segment
    pub map: Option<String>,
    pub frames: Option<String>,
    pub segmenter: Option<String>,
    pub tau_pq: Option<f64>,
    pub tau_trk: Option<f64>,
    pub nms_iou: Option<f64>,
    pub dedup_iou: Option<f64>,
    // attnmask
    pub otsu_scope: Option<OtsuScopeKey>,
    // eval
    pub eval_mode: Option<EvalModeKey>,
    pub jobs: Option<usize>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

#[derive(Deserialize)]
struct EchoHolder {
    config: Config,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        let parse = |message: String| ConfigError::Parse {
            path: path.to_owned(),
            message,
        };
        if path.extension().is_some_and(|e| e == "json") {
            let holder: EchoHolder = serde_json::from_str(&text).map_err(|e| parse(e.to_string()))?;
            return Ok(holder.config);
        }
        Self::parse(&text).map_err(parse)
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }
}

//! Run configuration files.

use std::fs;
use std::path::{Path, PathBuf};

use lanekit_core::model::ModelConfig;
use lanekit_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dataset locations. Image paths in records resolve against `image_root`,
/// or against the dataset file's directory when it is unset.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train: PathBuf,
    pub val: Option<PathBuf>,
    pub image_root: Option<PathBuf>,
}

/// Everything one training run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

fn absolutize(base: &Path, p: &mut PathBuf) {
    if p.is_relative() && !p.as_os_str().is_empty() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        // relative paths are relative to the config file
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Make every path absolute with respect to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let base = if base.as_os_str().is_empty() {
            std::env::current_dir().unwrap_or_default()
        } else if base.is_relative() {
            std::env::current_dir().unwrap_or_default().join(base)
        } else {
            base.to_path_buf()
        };
        absolutize(&base, &mut self.data.train);
        if let Some(v) = &mut self.data.val {
            absolutize(&base, v);
        }
        if let Some(r) = &mut self.data.image_root {
            absolutize(&base, r);
        }
        absolutize(&base, &mut self.out_dir);
    }

    pub fn validate(&self) -> Result<()> {
        self.model.plan()?;
        self.train.validate()?;
        if self.train.eval.scheme != self.model.scheme {
            log::warn!(
                "validation uses the {} scheme but the model predicts {}",
                self.train.eval.scheme,
                self.model.scheme
            );
        }
        if self.data.train.as_os_str().is_empty() {
            return Err(Error::Usage("data.train is not set".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    /// Write the resolved configuration into `dir`.
    pub fn echo(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let p = dir.join("config.json");
        fs::write(&p, self.to_json()).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected_at_every_level() {
        let p = Path::new("/cfg/run.json");
        assert!(RunConfig::parse(r#"{"data": {"train": "t.json"}}"#, p).is_ok());
        for bad in [
            r#"{"bogus": 1}"#,
            r#"{"train": {"optim": {"lr": 0.1}}}"#,
            r#"{"model": {"max_lanes": 4, "depth": 3}}"#,
            r#"{"data": {"train": "t", "x": 1}}"#,
        ] {
            assert!(matches!(RunConfig::parse(bad, p), Err(Error::Parse { .. })), "{bad}");
        }
    }

    #[test]
    fn paths_resolve_against_config_dir_and_echo_is_stable() {
        let p = Path::new("/cfg/run.json");
        let c = RunConfig::parse(r#"{"data": {"train": "d/t.json", "image_root": "/abs"}, "out_dir": "o"}"#, p).unwrap();
        assert_eq!(c.data.train, PathBuf::from("/cfg/d/t.json"));
        assert_eq!(c.data.image_root, Some(PathBuf::from("/abs")));
        assert_eq!(c.out_dir, PathBuf::from("/cfg/o"));
        let again = RunConfig::parse(&c.to_json(), Path::new("/elsewhere/config.json")).unwrap();
        assert_eq!(again, c);
    }
}

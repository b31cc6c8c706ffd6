//! Flat JSON run configuration. Built-in defaults are overridden by the config
//! file, which is overridden by command-line flags.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ganforge_core::gan::GanConfig;
use ganforge_core::nn::AdamConfig;
use ganforge_core::Error;
use serde::{Deserialize, Serialize};

/// One layer of settings; every key is optional. Also the schema of `--config` files.
#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub image_size: Option<usize>,
    pub latent_dim: Option<usize>,
    pub batch_size: Option<usize>,
    pub steps: Option<u64>,
    pub lr: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub eps: Option<f64>,
    pub sample_every: Option<u64>,
    pub sample_count: Option<usize>,
    pub n: Option<usize>,
    pub samples: Option<usize>,
    pub bins: Option<usize>,
    pub count: Option<usize>,
    pub prevalence: Option<f64>,
    pub cases: Option<usize>,
}

impl Overrides {
    pub fn from_file(path: &Path) -> Result<Self, Error> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::malformed(path, e.to_string()))
    }
}

/// Fully resolved settings, echoed as `config.json` next to every output.
///
/// `image_size` stays `None` until a command fills it in (training takes it from the dataset).
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct RunConfig {
    pub command: String,
    pub seed: u64,
    pub image_size: Option<usize>,
    pub latent_dim: usize,
    pub batch_size: usize,
    pub steps: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub sample_every: u64,
    pub sample_count: usize,
    pub n: usize,
    pub samples: usize,
    pub bins: usize,
    pub count: usize,
    pub prevalence: f64,
    pub cases: usize,
    pub paths: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn defaults(command: &str) -> Self {
        let gan = GanConfig::default();
        Self {
            command: command.to_string(),
            seed: gan.seed,
            image_size: None,
            latent_dim: gan.latent_dim,
            batch_size: gan.batch_size,
            steps: gan.steps,
            lr: gan.adam.lr,
            beta1: gan.adam.beta1,
            beta2: gan.adam.beta2,
            eps: gan.adam.eps,
            sample_every: gan.sample_every,
            sample_count: gan.sample_count,
            n: gan.sample_count,
            samples: 500,
            bins: ganforge_core::metrics::DEFAULT_BINS,
            count: 500,
            prevalence: 1.0,
            cases: ganforge_core::selfcheck::DEFAULT_CASES,
            paths: BTreeMap::new(),
        }
    }

    /// Defaults, then the optional config file, then flags.
    pub fn resolve(command: &str, file: Option<&Path>, flags: &Overrides) -> Result<Self, Error> {
        let mut cfg = Self::defaults(command);
        if let Some(path) = file {
            cfg.apply(&Overrides::from_file(path)?);
            cfg.paths.insert("config".into(), path.display().to_string());
        }
        cfg.apply(flags);
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        macro_rules! take {
            ($($field:ident),*) => {
                $(if let Some(v) = o.$field { self.$field = v; })*
            };
        }
        take!(seed, latent_dim, batch_size, steps, lr, beta1, beta2, eps, sample_every, sample_count, n, samples, bins, count, prevalence, cases);
        if o.image_size.is_some() {
            self.image_size = o.image_size;
        }
    }

    pub fn set_path(&mut self, key: &str, path: &Path) {
        self.paths.insert(key.into(), path.display().to_string());
    }

    pub fn gan_config(&self, image_size: usize) -> GanConfig {
        GanConfig {
            latent_dim: self.latent_dim,
            batch_size: self.batch_size,
            steps: self.steps,
            seed: self.seed,
            adam: AdamConfig {
                lr: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.eps,
            },
            sample_every: self.sample_every,
            sample_count: self.sample_count,
            image_size,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_beat_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.json");
        fs::write(&file, r#"{"steps": 10, "seed": 4, "lr": 0.001}"#).unwrap();
        let flags = Overrides {
            seed: Some(9),
            ..Default::default()
        };
        let cfg = RunConfig::resolve("train", Some(&file), &flags).unwrap();
        assert_eq!((cfg.steps, cfg.seed, cfg.lr, cfg.batch_size), (10, 9, 0.001, 32));
        let json = cfg.to_json();
        assert!(json.contains("\"beta1\": 0.5"));
    }

    #[test]
    fn unknown_keys_and_bad_json_are_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.json");
        fs::write(&file, r#"{"stepz": 10}"#).unwrap();
        let err = RunConfig::resolve("train", Some(&file), &Overrides::default()).unwrap_err();
        assert!(matches!(err, Error::Malformed { .. }), "{err}");
        let missing = dir.path().join("none.json");
        assert!(matches!(
            RunConfig::resolve("train", Some(&missing), &Overrides::default()),
            Err(Error::Io { .. })
        ));
    }
}

//! Flat key/value run configuration.
//!
//! A config file is one TOML table or JSON object whose keys are the fields
//! of `TrainConfig`, `EncoderConfig` and `HeadConfig`, plus `window`,
//! `lmo_velocity`, `lmo_t0` and `init_seed`. Command-line flags override the
//! file, the file overrides the defaults.

use std::collections::BTreeSet;
use std::path::Path;

use graphpick::encoder::EncoderConfig;
use graphpick::head::HeadConfig;
use graphpick::model::ModelConfig;
use graphpick::survey::LmoParams;
use graphpick::train::TrainConfig;
use graphpick::{Error, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

pub const DEFAULT_WINDOW: usize = 128;
pub const DEFAULT_K: usize = 8;
pub const DEFAULT_LMO_VELOCITY: f64 = 2500.0;
pub const DEFAULT_LMO_T0: f64 = -0.04;

const LENGTH_KEYS: [&str; 3] = ["window", "feature_len", "signal_len"];
const EXTRA_KEYS: [&str; 3] = ["lmo_velocity", "lmo_t0", "init_seed"];

#[derive(Clone, Debug, Default)]
pub struct RawConfig(Map<String, Value>);

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub lmo: LmoParams,
    pub init_seed: u64,
}

fn config_err(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{}: {msg}", path.display()))
}

impl RawConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let value = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => {
                let table: toml::Table = toml::from_str(&text).map_err(|e| config_err(path, e))?;
                serde_json::to_value(table).map_err(|e| config_err(path, e))?
            }
            Some("json") => serde_json::from_str(&text).map_err(|e| config_err(path, e))?,
            _ => return Err(config_err(path, "config files must end in .toml or .json")),
        };
        let Value::Object(map) = value else {
            return Err(config_err(path, "expected a single table of keys"));
        };
        if let Some((k, _)) = map.iter().find(|(_, v)| v.is_object() || v.is_array()) {
            return Err(config_err(path, format!("key {k} is nested; the config must be flat")));
        }
        Ok(RawConfig(map))
    }

    /// Sets `key` when `value` is present, overriding the file.
    pub fn set<V: Serialize>(&mut self, key: &str, value: Option<V>) {
        if let Some(v) = value {
            self.0.insert(key.to_owned(), serde_json::to_value(v).expect("scalar flag"));
        }
    }

    fn get<V: DeserializeOwned>(&self, key: &str) -> Result<Option<V>> {
        self.0
            .get(key)
            .map(|v| serde_json::from_value(v.clone()).map_err(|e| Error::Config(format!("key {key}: {e}"))))
            .transpose()
    }

    fn window(&self) -> Result<usize> {
        let mut found: Option<(&str, usize)> = None;
        for key in LENGTH_KEYS {
            if let Some(v) = self.get::<usize>(key)? {
                match found {
                    Some((other, w)) if w != v => {
                        return Err(Error::Config(format!("{key} = {v} disagrees with {other} = {w}")));
                    }
                    _ => found = Some((key, v)),
                }
            }
        }
        Ok(found.map_or(DEFAULT_WINDOW, |f| f.1))
    }

    /// Overlays the keys that are fields of `T` onto `base`.
    fn overlay<T: Serialize + DeserializeOwned>(&self, base: &T, used: &mut BTreeSet<String>) -> Result<T> {
        let Value::Object(mut fields) = serde_json::to_value(base).expect("config structs serialize") else {
            unreachable!("config structs serialize to objects")
        };
        for (k, v) in &self.0 {
            if let Some(slot) = fields.get_mut(k) {
                *slot = v.clone();
                used.insert(k.clone());
            }
        }
        serde_json::from_value(Value::Object(fields)).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn lmo(&self) -> Result<LmoParams> {
        LmoParams::new(
            self.get("lmo_velocity")?.unwrap_or(DEFAULT_LMO_VELOCITY),
            self.get("lmo_t0")?.unwrap_or(DEFAULT_LMO_T0),
            self.window()?,
        )
    }

    pub fn resolve(&self) -> Result<RunConfig> {
        let mut used: BTreeSet<String> = LENGTH_KEYS.iter().chain(&EXTRA_KEYS).map(|s| s.to_string()).collect();
        let window = self.window()?;
        let train: TrainConfig = self.overlay(&TrainConfig::default(), &mut used)?;
        let k = self.get("k")?.unwrap_or(DEFAULT_K);
        let base = ModelConfig::new(k, window);
        let encoder: EncoderConfig = self.overlay(&base.encoder, &mut used)?;
        let head: HeadConfig = self.overlay(&base.head, &mut used)?;
        if let Some(k) = self.0.keys().find(|k| !used.contains(*k)) {
            return Err(Error::Config(format!("unknown config key {k}")));
        }
        let model = ModelConfig { encoder, head };
        // a window the head cannot halve is a bad setting, not a runtime fault
        model.validate().map_err(|e| if e.is_validation() { e } else { Error::Config(e.to_string()) })?;
        train.validate()?;
        if train.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        Ok(RunConfig {
            init_seed: self.get("init_seed")?.unwrap_or(train.seed),
            lmo: self.lmo()?,
            train,
            model,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn toml_and_json_agree() {
        let dir = tempfile::tempdir().unwrap();
        let t = write(dir.path(), "c.toml", "lr = 0.001\nk = 4\nbase_channels = 8\nwindow = 64\n");
        let j = write(dir.path(), "c.json", r#"{"lr": 0.001, "k": 4, "base_channels": 8, "window": 64}"#);
        let a = RawConfig::load(&t).unwrap().resolve().unwrap();
        let b = RawConfig::load(&j).unwrap().resolve().unwrap();
        assert_eq!(a, b);
        assert_eq!((a.model.k(), a.model.signal_len(), a.model.head.base_channels), (4, 64, 8));
        assert_eq!(a.lmo.window_len, 64);
        assert_eq!(a.train.lr, 0.001);
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = RawConfig::load(&write(dir.path(), "c.toml", "lambda = 0.2\nseed = 3\n")).unwrap();
        c.set("lambda", Some(0.7));
        c.set::<u64>("seed", None);
        let r = c.resolve().unwrap();
        assert_eq!((r.train.lambda, r.train.seed, r.init_seed), (0.7, 3, 3));
    }

    #[test]
    fn bad_configs_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        for (name, body) in [
            ("a.toml", "learning_rate = 0.1\n"),
            ("b.toml", "[train]\nlr = 0.1\n"),
            ("c.toml", "window = 64\nsignal_len = 32\n"),
            ("d.json", r#"{"lr": "fast"}"#),
            ("e.json", "[1, 2]"),
            ("f.yaml", "lr: 1"),
            ("g.toml", "epochs = 0\n"),
        ] {
            let p = write(dir.path(), name, body);
            let err = RawConfig::load(&p).and_then(|c| c.resolve()).unwrap_err();
            assert!(matches!(err, Error::Config(_)), "{name}: {err}");
        }
    }
}

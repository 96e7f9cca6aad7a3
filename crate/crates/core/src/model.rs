//! The full picker: encoder, feature fusion and segmentation head.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{load_checkpoint, save_checkpoint, ParamStore, Real, Tape, Var};
use crate::encoder::{self, EncoderConfig};
use crate::error::{Error, Result};
use crate::eval::PickResult;
use crate::graph::StarSubgraph;
use crate::head::{self, HeadConfig};
use crate::survey::{mask_to_fb, LmoParams};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub head: HeadConfig,
}

impl ModelConfig {
    /// Default widths for star size `k` and trace length `signal_len`.
    pub fn new(k: usize, signal_len: usize) -> Self {
        ModelConfig {
            encoder: EncoderConfig {
                k,
                feature_len: signal_len,
                lstm_hidden: signal_len,
                ..EncoderConfig::default()
            },
            head: HeadConfig {
                signal_len,
                ..HeadConfig::default()
            },
        }
    }

    pub fn signal_len(&self) -> usize {
        self.head.signal_len
    }

    pub fn k(&self) -> usize {
        self.encoder.k
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.head.validate()?;
        if self.encoder.feature_len != self.head.signal_len {
            return Err(Error::Config(format!(
                "encoder feature_len {} differs from head signal_len {}",
                self.encoder.feature_len, self.head.signal_len
            )));
        }
        Ok(())
    }

    pub fn register_params<T: Real>(&self, store: &mut ParamStore<T>) -> Result<()> {
        self.validate()?;
        encoder::register_params(store, &self.encoder)?;
        head::register_params(store, &self.head)
    }
}

/// Sidecar metadata stored next to every checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub lambda: f64,
    pub init_seed: u64,
    /// Preprocessing the model was trained under.
    pub lmo: Option<LmoParams>,
    pub epoch: usize,
    pub val_acc: Option<f64>,
    /// Optimizer moments are not stored; resuming restarts them.
    pub optimizer_state: bool,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore<f32>,
}

impl Model {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut params = ParamStore::new(seed);
        config.register_params(&mut params)?;
        Ok(Model { config, params })
    }

    /// Wraps loaded parameters after checking they match `config` exactly.
    pub fn from_params(config: ModelConfig, params: ParamStore<f32>) -> Result<Self> {
        let mut expected = ParamStore::<f32>::new(0);
        config.register_params(&mut expected)?;
        for (name, t) in expected.iter() {
            let got = params
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            if got.shape != t.shape {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} has shape {:?}, config expects {:?}",
                    got.shape, t.shape
                )));
            }
        }
        if params.len() != expected.len() {
            let extra = params.iter().find(|(n, _)| expected.index_of(n).is_none());
            return Err(Error::Checkpoint(format!(
                "unexpected parameter {}",
                extra.map_or("?", |(n, _)| n)
            )));
        }
        Ok(Model { config, params })
    }

    pub fn save(&self, path: &Path, meta: &CheckpointMeta) -> Result<()> {
        save_checkpoint(path, &self.params, meta)
    }

    pub fn load(path: &Path) -> Result<(Self, CheckpointMeta)> {
        let (params, meta): (ParamStore<f32>, CheckpointMeta) = load_checkpoint(path)?;
        Ok((Model::from_params(meta.model.clone(), params)?, meta))
    }

    pub fn predict_fb(&self, sub: &StarSubgraph) -> Result<PickResult> {
        predict_fb(sub, &self.params, &self.config)
    }
}

/// Probabilities for the star nodes listed in `nodes` (0 = center), all fed
/// the center's encoded feature as global context.
pub fn star_forward<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    cfg: &ModelConfig,
    sub: &StarSubgraph,
    nodes: &[usize],
) -> Result<Vec<Var>> {
    if sub.k() != cfg.k() {
        return Err(Error::Data(format!(
            "star around {} has {} neighbors, model expects {}",
            sub.center_id,
            sub.k(),
            cfg.k()
        )));
    }
    let signals = encoder::star_signals(tape, sub)?;
    let global = encoder::encode_star(tape, store, &cfg.encoder, &signals, &sub.weights)?;
    nodes
        .iter()
        .map(|&n| {
            let local = *signals
                .get(n)
                .ok_or_else(|| Error::shape(format!("star has no node {n}")))?;
            let x = head::fuse_features(tape, global, local)?;
            head::head_forward(tape, store, &cfg.head, x)
        })
        .collect()
}

pub fn predict_fb(sub: &StarSubgraph, store: &ParamStore<f32>, cfg: &ModelConfig) -> Result<PickResult> {
    let mut tape = Tape::new();
    let p = star_forward(&mut tape, store, cfg, sub, &[0])?[0];
    let probs = tape.value(p).to_vec();
    Ok(PickResult {
        trace_id: sub.center_id,
        fb_pred: mask_to_fb(&probs),
        probs,
        fb_true: sub.labels[0],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn star(k: usize, len: usize) -> StarSubgraph {
        StarSubgraph {
            center_id: 9,
            neighbor_ids: (0..k as u64).collect(),
            distances: (0..k).map(|i| i as f64).collect(),
            weights: (0..k).map(|i| 0.75 - 0.1 * i as f64).collect(),
            signals: (0..=k)
                .map(|n| (0..len).map(|i| ((i + n) as f32 * 0.3).sin()).collect())
                .collect(),
            labels: vec![Some(5); k + 1],
        }
    }

    #[test]
    fn predictions_are_deterministic_and_in_range() {
        let cfg = ModelConfig::new(2, 32);
        let m = Model::init(cfg, 4).unwrap();
        let s = star(2, 32);
        let a = m.predict_fb(&s).unwrap();
        let b = m.predict_fb(&s).unwrap();
        assert_eq!(a.probs, b.probs);
        assert!(a.fb_pred <= 32);
        assert_eq!(a.fb_pred, mask_to_fb(&a.probs));
        assert_eq!(a.fb_true, Some(5));
        assert!(m.predict_fb(&star(3, 32)).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = Model::init(ModelConfig::new(2, 16), 1).unwrap();
        let meta = CheckpointMeta {
            model: m.config.clone(),
            lambda: 0.5,
            init_seed: 1,
            lmo: None,
            epoch: 3,
            val_acc: Some(0.5),
            optimizer_state: false,
        };
        m.save(&path, &meta).unwrap();
        let (back, meta2) = Model::load(&path).unwrap();
        assert_eq!(meta, meta2);
        let s = star(2, 16);
        assert_eq!(m.predict_fb(&s).unwrap().probs, back.predict_fb(&s).unwrap().probs);

        let other = Model::init(ModelConfig::new(2, 32), 1).unwrap();
        assert!(Model::from_params(m.config.clone(), other.params).is_err());
    }

    #[test]
    fn mismatched_widths_rejected() {
        let mut cfg = ModelConfig::new(2, 32);
        cfg.head.signal_len = 64;
        assert!(matches!(Model::init(cfg, 0), Err(Error::Config(_))));
    }
}

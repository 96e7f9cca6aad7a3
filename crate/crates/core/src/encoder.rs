//! Stacked SAGEConv graph encoder with an LSTM neighbor aggregator.
//!
//! Layer `l` turns node states `h^(l)` into `h^(l+1)`:
//!
//! ```text
//! a_v      = LSTM_l(w_1 h_1, ..., w_K h_K)        neighbors in ascending distance
//! h_v^(l+1) = tanh(W_l [h_v ; a_v] + b_l)
//! ```
//!
//! Inside a star only the center has several neighbors. Each leaf sees the
//! center alone, weighted by its own edge weight, so deeper layers keep
//! reusing the star topology.

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Real, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::StarSubgraph;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub n_layers: usize,
    /// Length of every node state, equal to the trace length.
    pub feature_len: usize,
    pub lstm_hidden: usize,
    pub k: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            n_layers: 3,
            feature_len: 128,
            lstm_hidden: 128,
            k: 8,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.feature_len == 0 || self.lstm_hidden == 0 {
            return Err(Error::Config(format!(
                "encoder needs n_layers, feature_len and lstm_hidden >= 1, got {self:?}"
            )));
        }
        if self.k == 0 {
            return Err(Error::Config("encoder k must be at least 1".into()));
        }
        Ok(())
    }
}

fn name(layer: usize, part: &str) -> String {
    format!("enc.l{layer}.{part}")
}

/// Adds every encoder parameter to `store`.
pub fn register_params<T: Real>(store: &mut ParamStore<T>, cfg: &EncoderConfig) -> Result<()> {
    cfg.validate()?;
    let (l, h) = (cfg.feature_len, cfg.lstm_hidden);
    for layer in 0..cfg.n_layers {
        store.add_uniform(name(layer, "lstm.w_ih"), &[4 * h, l], h)?;
        store.add_uniform(name(layer, "lstm.w_hh"), &[4 * h, h], h)?;
        store.add_uniform(name(layer, "lstm.b"), &[4 * h], h)?;
        store.add_uniform(name(layer, "dense.W"), &[l, l + h], l + h)?;
        store.add_uniform(name(layer, "dense.b"), &[l], l + h)?;
    }
    Ok(())
}

/// Parameters of one LSTM, already on the tape. Gate order is `i, f, g, o`.
#[derive(Clone, Copy, Debug)]
pub struct LstmParams {
    pub w_ih: Var,
    pub w_hh: Var,
    pub b: Var,
}

impl LstmParams {
    pub fn load<T: Real>(tape: &mut Tape<T>, store: &ParamStore<T>, prefix: &str) -> Result<Self> {
        Ok(LstmParams {
            w_ih: tape.param(store, &format!("{prefix}.w_ih"))?,
            w_hh: tape.param(store, &format!("{prefix}.w_hh"))?,
            b: tape.param(store, &format!("{prefix}.b"))?,
        })
    }
}

/// Runs an LSTM from zero state over `inputs` and returns the last hidden state.
pub fn lstm_seq<T: Real>(tape: &mut Tape<T>, p: LstmParams, inputs: &[Var], hidden: usize) -> Result<Var> {
    if inputs.is_empty() {
        return Err(Error::Contract("LSTM over an empty sequence".into()));
    }
    let gates = tape.shape(p.b).first().copied().unwrap_or(0);
    if gates != 4 * hidden {
        return Err(Error::shape(format!(
            "LSTM bias {:?} does not hold 4 gates of width {hidden}",
            tape.shape(p.b)
        )));
    }
    let mut state: Option<(Var, Var)> = None;
    for &x in inputs {
        let mut z = tape.dense(x, p.w_ih, Some(p.b))?;
        if let Some((h, _)) = state {
            let zh = tape.dense(h, p.w_hh, None)?;
            z = tape.add(z, zh)?;
        }
        let gate = |tape: &mut Tape<T>, k: usize| tape.slice(z, k * hidden, hidden);
        let (zi, zf, zg, zo) = (gate(tape, 0)?, gate(tape, 1)?, gate(tape, 2)?, gate(tape, 3)?);
        let i = tape.sigmoid(zi);
        let g = tape.tanh(zg);
        let o = tape.sigmoid(zo);
        let ig = tape.mul(i, g)?;
        // from zero state the forget gate multiplies a zero cell
        let c = match state {
            Some((_, c_prev)) => {
                let f = tape.sigmoid(zf);
                let fc = tape.mul(f, c_prev)?;
                tape.add(fc, ig)?
            }
            None => ig,
        };
        let tc = tape.tanh(c);
        let h = tape.mul(o, tc)?;
        state = Some((h, c));
    }
    Ok(state.expect("nonempty").0)
}

/// Feeds `w_k * h_k` in the given order through layer `layer`'s LSTM.
pub fn lstm_aggregate<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    cfg: &EncoderConfig,
    layer: usize,
    neighbor_states: &[Var],
    weights: &[f64],
) -> Result<Var> {
    if neighbor_states.is_empty() {
        return Err(Error::Contract(format!(
            "layer {layer}: aggregation over an isolated node"
        )));
    }
    if neighbor_states.len() != weights.len() {
        return Err(Error::shape(format!(
            "layer {layer}: {} neighbor states but {} weights",
            neighbor_states.len(),
            weights.len()
        )));
    }
    let p = LstmParams::load(tape, store, &name(layer, "lstm"))?;
    let inputs: Vec<Var> = neighbor_states
        .iter()
        .zip(weights)
        .map(|(&h, &w)| tape.scale(h, T::lit(w)))
        .collect();
    lstm_seq(tape, p, &inputs, cfg.lstm_hidden)
}

/// `tanh(W [center ; aggregate] + b)`
pub fn sage_conv<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    layer: usize,
    center_state: Var,
    aggregate: Var,
) -> Result<Var> {
    let w = tape.param(store, &name(layer, "dense.W"))?;
    let b = tape.param(store, &name(layer, "dense.b"))?;
    let cat = tape.concat(&[center_state, aggregate])?;
    let z = tape.dense(cat, w, Some(b))?;
    Ok(tape.tanh(z))
}

/// Encodes a star given its node signals (center first) already on the tape
/// and returns the center's final state.
pub fn encode_star<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    cfg: &EncoderConfig,
    signals: &[Var],
    weights: &[f64],
) -> Result<Var> {
    if signals.len() != weights.len() + 1 {
        return Err(Error::shape(format!(
            "star with {} signals needs {} weights, got {}",
            signals.len(),
            signals.len().saturating_sub(1),
            weights.len()
        )));
    }
    for &s in signals {
        if tape.shape(s) != [cfg.feature_len] {
            return Err(Error::shape(format!(
                "node signal {:?} does not match feature length {}",
                tape.shape(s),
                cfg.feature_len
            )));
        }
    }
    let mut h = signals.to_vec();
    for layer in 0..cfg.n_layers {
        let agg = lstm_aggregate(tape, store, cfg, layer, &h[1..], weights)?;
        let center = sage_conv(tape, store, layer, h[0], agg)?;
        // leaf states after the last layer are never read
        if layer + 1 < cfg.n_layers {
            for (leaf, &w) in weights.iter().enumerate() {
                let agg = lstm_aggregate(tape, store, cfg, layer, &[h[0]], &[w])?;
                h[leaf + 1] = sage_conv(tape, store, layer, h[leaf + 1], agg)?;
            }
        }
        h[0] = center;
    }
    Ok(h[0])
}

/// Puts a star's signals on the tape as constants.
pub fn star_signals<T: Real>(tape: &mut Tape<T>, sub: &StarSubgraph) -> Result<Vec<Var>> {
    sub.signals
        .iter()
        .map(|s| tape.constant(vec![s.len()], s.iter().map(|&v| T::lit(f64::from(v))).collect()))
        .collect()
}

pub fn encode_subgraph<T: Real>(
    tape: &mut Tape<T>,
    sub: &StarSubgraph,
    store: &ParamStore<T>,
    cfg: &EncoderConfig,
) -> Result<Var> {
    let signals = star_signals(tape, sub)?;
    encode_star(tape, store, cfg, &signals, &sub.weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, Tensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small() -> EncoderConfig {
        EncoderConfig {
            n_layers: 2,
            feature_len: 6,
            lstm_hidden: 5,
            k: 3,
        }
    }

    fn star(cfg: &EncoderConfig, seed: u64) -> StarSubgraph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = cfg.k;
        StarSubgraph {
            center_id: 0,
            neighbor_ids: (1..=k as u64).collect(),
            distances: (0..k).map(|i| i as f64).collect(),
            weights: (0..k).map(|i| 0.75 * (1.0 - (i as f64 / (k - 1).max(1) as f64).powi(2))).collect(),
            signals: (0..=k)
                .map(|_| (0..cfg.feature_len).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect(),
            labels: vec![None; k + 1],
        }
    }

    fn store(cfg: &EncoderConfig, seed: u64) -> ParamStore<f64> {
        let mut s = ParamStore::new(seed);
        register_params(&mut s, cfg).unwrap();
        s
    }

    #[test]
    fn zero_weights_give_zero_aggregate() {
        let cfg = small();
        let mut s = store(&cfg, 1);
        // zero LSTM biases; the input weights are irrelevant once w = 0
        s.get_mut("enc.l0.lstm.b").unwrap().data.fill(0.0);
        let mut t = Tape::new();
        let sub = star(&cfg, 2);
        let sig = star_signals(&mut t, &sub).unwrap();
        let a = lstm_aggregate(&mut t, &s, &cfg, 0, &sig[1..], &[0.0; 3]).unwrap();
        assert!(t.value(a).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_step_is_one_cell() {
        let cfg = small();
        let s = store(&cfg, 3);
        let mut t = Tape::new();
        let sub = star(&cfg, 4);
        let sig = star_signals(&mut t, &sub).unwrap();
        let a = lstm_aggregate(&mut t, &s, &cfg, 0, &sig[1..2], &[0.5]).unwrap();
        // hand-rolled cell
        let (w, b) = (&s.get("enc.l0.lstm.w_ih").unwrap().data, &s.get("enc.l0.lstm.b").unwrap().data);
        let x: Vec<f64> = sub.signals[1].iter().map(|&v| 0.5 * f64::from(v)).collect();
        let h = cfg.lstm_hidden;
        let z: Vec<f64> = (0..4 * h)
            .map(|r| b[r] + (0..6).map(|c| w[r * 6 + c] * x[c]).sum::<f64>())
            .collect();
        let sg = |v: f64| 1.0 / (1.0 + (-v).exp());
        for j in 0..h {
            let c = sg(z[j]) * z[2 * h + j].tanh();
            let want = sg(z[3 * h + j]) * c.tanh();
            assert!((t.value(a)[j] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn weight_enters_as_scaling() {
        let cfg = small();
        let s = store(&cfg, 5);
        let sub = star(&cfg, 6);
        let mut t = Tape::new();
        let sig = star_signals(&mut t, &sub).unwrap();
        let a = lstm_aggregate(&mut t, &s, &cfg, 0, &sig[1..], &[0.6, 0.4, 0.2]).unwrap();
        let doubled = t.scale(sig[2], 2.0);
        let b = lstm_aggregate(&mut t, &s, &cfg, 0, &[sig[1], doubled, sig[3]], &[0.6, 0.2, 0.2]).unwrap();
        let a2 = lstm_aggregate(&mut t, &s, &cfg, 0, &sig[1..], &[0.6, 0.4, 0.4]).unwrap();
        let doubled3 = t.scale(sig[3], 2.0);
        let c = lstm_aggregate(&mut t, &s, &cfg, 0, &[sig[1], sig[2], doubled3], &[0.6, 0.4, 0.2]).unwrap();
        assert_eq!(t.value(a), t.value(b));
        assert_eq!(t.value(a2), t.value(c));
    }

    #[test]
    fn empty_neighbors_rejected() {
        let cfg = small();
        let s = store(&cfg, 7);
        let mut t = Tape::new();
        assert!(matches!(
            lstm_aggregate(&mut t, &s, &cfg, 0, &[], &[]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn sage_conv_zero_and_bounded() {
        let cfg = small();
        let mut s = store(&cfg, 8);
        let mut t = Tape::new();
        let sub = star(&cfg, 9);
        let sig = star_signals(&mut t, &sub).unwrap();
        let agg = t.constant(vec![5], vec![0.3; 5]).unwrap();
        let y = sage_conv(&mut t, &s, 0, sig[0], agg).unwrap();
        assert!(t.value(y).iter().all(|v| v.abs() < 1.0));
        s.get_mut("enc.l0.dense.W").unwrap().data.fill(0.0);
        s.get_mut("enc.l0.dense.b").unwrap().data.fill(0.0);
        let mut t = Tape::new();
        let sig = star_signals(&mut t, &sub).unwrap();
        let agg = t.constant(vec![5], vec![0.3; 5]).unwrap();
        let y = sage_conv(&mut t, &s, 0, sig[0], agg).unwrap();
        assert!(t.value(y).iter().all(|&v| v == 0.0));
        let bad = t.constant(vec![4], vec![0.0; 4]).unwrap();
        assert!(matches!(sage_conv(&mut t, &s, 0, sig[0], bad), Err(Error::Shape(_))));
    }

    #[test]
    fn encoder_output_shape_zero_and_determinism() {
        let cfg = EncoderConfig {
            k: 4,
            ..EncoderConfig::default()
        };
        let mut s = ParamStore::<f32>::new(1);
        register_params(&mut s, &cfg).unwrap();
        let sub = {
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            StarSubgraph {
                center_id: 0,
                neighbor_ids: vec![1, 2, 3, 4],
                distances: vec![1.0, 2.0, 3.0, 4.0],
                weights: vec![0.7, 0.5, 0.3, 0.0],
                signals: (0..5).map(|_| (0..128).map(|_| rng.random_range(-1.0..1.0)).collect()).collect(),
                labels: vec![None; 5],
            }
        };
        let run = |s: &ParamStore<f32>, sub: &StarSubgraph| {
            let mut t = Tape::new();
            let y = encode_subgraph(&mut t, sub, s, &cfg).unwrap();
            t.value(y).to_vec()
        };
        let out = run(&s, &sub);
        assert_eq!(out.len(), 128);
        assert!(out.iter().all(|v| v.abs() < 1.0));
        assert_eq!(out, run(&s, &sub));

        let mut zero = sub.clone();
        zero.signals.iter_mut().for_each(|r| r.fill(0.0));
        let mut zs = s.clone();
        zs.fill_zero();
        assert!(run(&zs, &zero).iter().all(|&v| v == 0.0));

        let missing = ParamStore::<f32>::new(0);
        let mut t = Tape::new();
        assert!(matches!(
            encode_subgraph(&mut t, &sub, &missing, &cfg),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn encoder_gradients_match_finite_differences() {
        let cfg = small();
        for seed in 0..3 {
            let s = store(&cfg, seed);
            let sub = star(&cfg, 100 + seed);
            let inputs: Vec<Tensor<f64>> = sub
                .signals
                .iter()
                .map(|r| Tensor::vector(r.iter().map(|&v| f64::from(v)).collect()))
                .collect();
            let err = grad_check(
                |t, v| {
                    let y = encode_star(t, &s, &cfg, v, &sub.weights)?;
                    let y = t.tanh(y);
                    Ok(t.sum(y))
                },
                &inputs,
                1e-4,
            )
            .unwrap();
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }
}

//! 1D residual U-Net that segments a fused `2 x L` input into per-sample
//! first-break probabilities.
//!
//! With base width `c` and depth 3 the stages are
//!
//! ```text
//! stem   k=1        2 -> c            L
//! down1  ResBlock   c -> 2c, pool     L/2
//! down2  ResBlock  2c -> 4c, pool     L/4
//! down3  ResBlock  4c -> 8c, pool     L/8
//! up3    ResBlock  8c -> 4c, up, ++down2    L/4   (8c channels)
//! up2    ResBlock  8c -> 2c, up, ++down1    L/2   (4c)
//! up1    ResBlock  4c ->  c, up, ++stem     L     (2c)
//! out    k=1       2c -> 1, sigmoid
//! ```
//!
//! Every ResBlock changes its channel count, so its shortcut is a learned
//! 1x1 projection; a block that kept its width would use the identity.

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Real, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadConfig {
    pub base_channels: usize,
    pub depth: usize,
    pub signal_len: usize,
    pub kernel_size: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            base_channels: 32,
            depth: 3,
            signal_len: 128,
            kernel_size: 3,
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.depth == 0 {
            return Err(Error::Config("head needs base_channels and depth >= 1".into()));
        }
        if self.kernel_size.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "head kernel_size must be odd to preserve length, got {}",
                self.kernel_size
            )));
        }
        self.check_len(self.signal_len)
    }

    fn check_len(&self, len: usize) -> Result<()> {
        let unit = 1usize << self.depth;
        if len == 0 || !len.is_multiple_of(unit) {
            return Err(Error::shape(format!(
                "signal length {len} is not divisible by 2^{} = {unit}",
                self.depth
            )));
        }
        Ok(())
    }

    /// Channel count at level `i`, `c * 2^i`.
    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }
}

fn block_params<T: Real>(store: &mut ParamStore<T>, prefix: &str, c_in: usize, c_out: usize, k: usize) -> Result<()> {
    store.add_uniform(format!("{prefix}.conv1.W"), &[c_out, c_in, k], c_in * k)?;
    store.add_uniform(format!("{prefix}.conv1.b"), &[c_out], c_in * k)?;
    store.add_uniform(format!("{prefix}.conv2.W"), &[c_out, c_out, k], c_out * k)?;
    store.add_uniform(format!("{prefix}.conv2.b"), &[c_out], c_out * k)?;
    if c_in != c_out {
        store.add_uniform(format!("{prefix}.proj.W"), &[c_out, c_in, 1], c_in)?;
        store.add_uniform(format!("{prefix}.proj.b"), &[c_out], c_in)?;
    }
    Ok(())
}

/// Input channels of decoder block `i`.
fn up_in(cfg: &HeadConfig, i: usize) -> usize {
    if i == cfg.depth {
        cfg.channels(i)
    } else {
        2 * cfg.channels(i)
    }
}

pub fn register_params<T: Real>(store: &mut ParamStore<T>, cfg: &HeadConfig) -> Result<()> {
    cfg.validate()?;
    let k = cfg.kernel_size;
    store.add_uniform("head.stem.W", &[cfg.channels(0), 2, 1], 2)?;
    store.add_uniform("head.stem.b", &[cfg.channels(0)], 2)?;
    for i in 1..=cfg.depth {
        block_params(store, &format!("head.down{i}"), cfg.channels(i - 1), cfg.channels(i), k)?;
    }
    for i in (1..=cfg.depth).rev() {
        block_params(store, &format!("head.up{i}"), up_in(cfg, i), cfg.channels(i - 1), k)?;
    }
    let c = 2 * cfg.channels(0);
    store.add_uniform("head.out.W", &[1, c, 1], c)?;
    store.add_uniform("head.out.b", &[1], c)?;
    Ok(())
}

fn conv<T: Real>(tape: &mut Tape<T>, store: &ParamStore<T>, prefix: &str, x: Var) -> Result<Var> {
    let w = tape.param(store, &format!("{prefix}.W"))?;
    let b = tape.param(store, &format!("{prefix}.b"))?;
    let k = tape.shape(w)[2];
    tape.conv1d(x, w, Some(b), 1, k / 2)
}

/// Pre-activation residual block, `conv2(tanh(conv1(tanh x))) + shortcut(x)`.
pub fn res_block<T: Real>(tape: &mut Tape<T>, store: &ParamStore<T>, prefix: &str, x: Var) -> Result<Var> {
    let a = tape.tanh(x);
    let y = conv(tape, store, &format!("{prefix}.conv1"), a)?;
    let y = tape.tanh(y);
    let y = conv(tape, store, &format!("{prefix}.conv2"), y)?;
    let skip = if store.index_of(&format!("{prefix}.proj.W")).is_some() {
        conv(tape, store, &format!("{prefix}.proj"), x)?
    } else {
        x
    };
    tape.add(y, skip)
}

/// Stacks the star's global feature (channel 0) and a node's own trace
/// (channel 1) into a `2 x L` input.
pub fn fuse_features<T: Real>(tape: &mut Tape<T>, global: Var, local: Var) -> Result<Var> {
    let (g, l) = (tape.shape(global).to_vec(), tape.shape(local).to_vec());
    if g.len() != 1 || g != l {
        return Err(Error::shape(format!("cannot fuse global {g:?} with local {l:?}")));
    }
    let g = tape.reshape(global, vec![1, g[0]])?;
    let l = tape.reshape(local, vec![1, l[0]])?;
    tape.concat(&[g, l])
}

/// Shapes seen at each stage boundary of one forward pass.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StageShapes {
    pub stem: Vec<usize>,
    /// After each encoder block and its pooling, shallow to deep.
    pub down: Vec<Vec<usize>>,
    /// After each decoder block and its upsampling, deep to shallow.
    pub up: Vec<Vec<usize>>,
    pub output: Vec<usize>,
}

fn forward<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    cfg: &HeadConfig,
    x: Var,
    mut trace: Option<&mut StageShapes>,
) -> Result<Var> {
    let xs = tape.shape(x).to_vec();
    if xs.len() != 2 || xs[0] != 2 {
        return Err(Error::shape(format!("head input must be [2, L], got {xs:?}")));
    }
    cfg.check_len(xs[1])?;
    let mut record = |f: &mut dyn FnMut(&mut StageShapes)| {
        if let Some(t) = trace.as_deref_mut() {
            f(t)
        }
    };

    let stem = conv(tape, store, "head.stem", x)?;
    let stem_shape = tape.shape(stem).to_vec();
    record(&mut |t| t.stem = stem_shape.clone());
    let mut skips = vec![stem];
    for i in 1..=cfg.depth {
        let y = res_block(tape, store, &format!("head.down{i}"), skips[i - 1])?;
        let y = tape.max_pool2(y)?;
        let s = tape.shape(y).to_vec();
        record(&mut |t| t.down.push(s.clone()));
        skips.push(y);
    }
    let mut y = skips[cfg.depth];
    for i in (1..=cfg.depth).rev() {
        let r = res_block(tape, store, &format!("head.up{i}"), y)?;
        let r = tape.upsample2(r)?;
        let s = tape.shape(r).to_vec();
        record(&mut |t| t.up.push(s.clone()));
        y = tape.concat(&[r, skips[i - 1]])?;
    }
    let logits = conv(tape, store, "head.out", y)?;
    let p = tape.sigmoid(logits);
    let p = tape.reshape(p, vec![xs[1]])?;
    let s = tape.shape(p).to_vec();
    record(&mut |t| t.output = s.clone());
    Ok(p)
}

/// Per-sample first-break probabilities for a fused `2 x L` input.
pub fn head_forward<T: Real>(tape: &mut Tape<T>, store: &ParamStore<T>, cfg: &HeadConfig, x: Var) -> Result<Var> {
    forward(tape, store, cfg, x, None)
}

/// [`head_forward`] that also reports every stage shape.
pub fn head_forward_traced<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    cfg: &HeadConfig,
    x: Var,
) -> Result<(Var, StageShapes)> {
    let mut shapes = StageShapes::default();
    let p = forward(tape, store, cfg, x, Some(&mut shapes))?;
    Ok((p, shapes))
}

use crate::autodiff::{ParamStore, Real, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::StarSubgraph;
use crate::model::{star_forward, ModelConfig};
use crate::survey::fb_to_mask;

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    Ok(())
}

/// `sum_i c_i * BCE(pred_i, mask_i)`, skipping zero coefficients.
fn combine<T: Real>(tape: &mut Tape<T>, rows: &[(Var, &[T], f64)]) -> Result<Var> {
    let mut terms = Vec::with_capacity(rows.len());
    for &(p, m, c) in rows {
        if c != 0.0 {
            let b = tape.bce(p, m)?;
            terms.push((b, T::lit(c)));
        }
    }
    if terms.is_empty() {
        return tape.constant(vec![1], vec![T::zero()]);
    }
    tape.lin_comb(&terms)
}

/// `(1 - lambda) BCE(center) + lambda * sum_k w_k BCE(leaf_k)`.
///
/// Row 0 of `preds` and `masks` is the center; rows `1..=K` line up with
/// `weights`. The weights are used as given, without normalization.
pub fn weighted_bce_loss<T: Real>(
    tape: &mut Tape<T>,
    preds: &[Var],
    masks: &[Vec<T>],
    weights: &[f64],
    lambda: f64,
) -> Result<Var> {
    check_lambda(lambda)?;
    if preds.len() != weights.len() + 1 || masks.len() != preds.len() {
        return Err(Error::shape(format!(
            "{} prediction rows and {} mask rows for {} edge weights",
            preds.len(),
            masks.len(),
            weights.len()
        )));
    }
    let rows: Vec<(Var, &[T], f64)> = preds
        .iter()
        .zip(masks)
        .enumerate()
        .map(|(i, (&p, m))| {
            let c = if i == 0 { 1.0 - lambda } else { lambda * weights[i - 1] };
            (p, m.as_slice(), c)
        })
        .collect();
    combine(tape, &rows)
}

/// Training loss of one star. Leaves without a label, or whose term would
/// carry zero weight, are not run through the head at all; this leaves the
/// loss value and its gradient unchanged.
pub fn star_loss<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    cfg: &ModelConfig,
    sub: &StarSubgraph,
    lambda: f64,
) -> Result<Var> {
    check_lambda(lambda)?;
    let len = sub.signal_len();
    let mut nodes = Vec::new();
    let mut coefs = Vec::new();
    let mut masks = Vec::new();
    for (n, label) in sub.labels.iter().enumerate() {
        let c = if n == 0 { 1.0 - lambda } else { lambda * sub.weights[n - 1] };
        match label {
            Some(fb) if c != 0.0 => {
                nodes.push(n);
                coefs.push(c);
                masks.push(fb_to_mask(*fb, len)?.to_float::<T>());
            }
            None if n == 0 && c != 0.0 => {
                return Err(Error::Data(format!("training star center {} has no label", sub.center_id)));
            }
            _ => {}
        }
    }
    let preds = star_forward(tape, store, cfg, sub, &nodes)?;
    let rows: Vec<(Var, &[T], f64)> = preds
        .iter()
        .zip(&masks)
        .zip(&coefs)
        .map(|((&p, m), &c)| (p, m.as_slice(), c))
        .collect();
    combine(tape, &rows)
}

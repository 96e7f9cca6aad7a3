use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// `|a - n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Which parameter coordinates [`grad_check_params`] perturbs.
#[derive(Clone, Copy, Debug)]
pub enum CoordinateSelection {
    All,
    /// Up to `per_tensor` coordinates of every tensor, drawn with `seed`.
    Sample { per_tensor: usize, seed: u64 },
}

fn scalar_of(tape: &Tape<f64>, v: Var) -> Result<f64> {
    match tape.value(v) {
        [x] => Ok(*x),
        other => Err(Error::shape(format!(
            "gradient check needs a scalar function, got {} values",
            other.len()
        ))),
    }
}

/// Largest relative error between the tape gradient and central
/// differences with step `h`, over every coordinate of every input.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x)).collect();
        let out = f(&mut tape, &vars)?;
        scalar_of(&tape, out)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x)).collect();
    let out = f(&mut tape, &vars)?;
    scalar_of(&tape, out)?;
    let grads = tape.backward(out)?;

    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (t, &v) in vars.iter().enumerate() {
        let zeros = vec![0.0; inputs[t].len()];
        let analytic = grads.get(v).unwrap_or(&zeros).to_vec();
        for i in 0..inputs[t].len() {
            let x0 = inputs[t].data[i];
            probe[t].data[i] = x0 + h;
            let plus = eval(&probe)?;
            probe[t].data[i] = x0 - h;
            let minus = eval(&probe)?;
            probe[t].data[i] = x0;
            worst = worst.max(relative_error(analytic[i], (plus - minus) / (2.0 * h)));
        }
    }
    Ok(worst)
}

/// Like [`grad_check`], but differentiates a model loss with respect to the
/// parameters in `store`.
pub fn grad_check_params<F>(f: F, store: &ParamStore<f64>, h: f64, selection: CoordinateSelection) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut base = store.clone();
    base.zero_grads();
    let mut tape = Tape::new();
    let out = f(&mut tape, &base)?;
    scalar_of(&tape, out)?;
    let grads = tape.backward(out)?;
    tape.accumulate_param_grads(&grads, &mut base);

    let mut rng = match selection {
        CoordinateSelection::Sample { seed, .. } => Some(ChaCha8Rng::seed_from_u64(seed)),
        CoordinateSelection::All => None,
    };
    let mut probe = base.clone();
    let mut worst = 0.0f64;
    for p in 0..base.len() {
        let n = base.tensor(p).len();
        let coords: Vec<usize> = match (selection, rng.as_mut()) {
            (CoordinateSelection::Sample { per_tensor, .. }, Some(rng)) if per_tensor < n => {
                let mut c = sample(rng, n, per_tensor).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        for i in coords {
            let x0 = base.tensor(p).data[i];
            let analytic = base.tensor(p).grad.as_ref().map_or(0.0, |g| g[i]);
            let mut eval_at = |x: f64| -> Result<f64> {
                probe.tensor_mut(p).data[i] = x;
                let mut tape = Tape::new();
                let out = f(&mut tape, &probe)?;
                scalar_of(&tape, out)
            };
            let plus = eval_at(x0 + h)?;
            let minus = eval_at(x0 - h)?;
            probe.tensor_mut(p).data[i] = x0;
            worst = worst.max(relative_error(analytic, (plus - minus) / (2.0 * h)));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(n: usize, seed: u64) -> Tensor<f64> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::vector((0..n).map(|_| rng.random_range(-2.0..2.0)).collect())
    }

    #[test]
    fn linear_function_is_exact() {
        let err = grad_check(|t, v| Ok(t.sum(v[0])), &[input(7, 1)], 1e-4).unwrap();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn tanh_sum() {
        let err = grad_check(
            |t, v| {
                let y = t.tanh(v[0]);
                Ok(t.sum(y))
            },
            &[input(9, 2)],
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn product_of_two_inputs() {
        let x = input(4, 3);
        let err = grad_check(
            |t, v| {
                let p = t.mul(v[0], v[1])?;
                Ok(t.sum(p))
            },
            &[x.clone(), x],
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-8);
        assert!(relative_error(1.0, 1.1) > 0.05);
        assert_eq!(relative_error(0.0, 0.0), 0.0);
    }

    #[test]
    fn param_sampling_visits_every_tensor() {
        let mut store = ParamStore::<f64>::new(5);
        store.add_uniform("a", &[3, 4], 4).unwrap();
        store.add_uniform("b", &[3], 1).unwrap();
        let f = |t: &mut Tape<f64>, s: &ParamStore<f64>| {
            let x = t.constant(vec![4], vec![0.5, -1.0, 2.0, 0.1])?;
            let (a, b) = (t.param(s, "a")?, t.param(s, "b")?);
            let y = t.dense(x, a, Some(b))?;
            let y = t.sigmoid(y);
            Ok(t.sum(y))
        };
        for sel in [CoordinateSelection::All, CoordinateSelection::Sample { per_tensor: 2, seed: 9 }] {
            assert!(grad_check_params(f, &store, 1e-4, sel).unwrap() < 1e-6);
        }
    }
}

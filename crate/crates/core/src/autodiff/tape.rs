use std::collections::HashMap;

use super::kernels::{self, ConvGeom, View};
use super::{ParamStore, Real, Tensor};
use crate::error::{Error, Result};

/// BCE probability clamp.
pub const BCE_EPS: f64 = 1e-7;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Dense { x: Var, w: Var, b: Option<Var> },
    Conv1d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom, c_out: usize, cols: Vec<T> },
    Tanh(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Mul(Var, Var),
    LinComb(Vec<(Var, T)>),
    Concat(Vec<Var>),
    Slice { x: Var, offset: usize },
    Reshape(Var),
    MaxPool2 { x: Var, argmax: Vec<u32> },
    Upsample2(Var),
    Bce { p: Var, target: Vec<T> },
    Sum(Var),
}

#[derive(Debug)]
struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records operations for a single reverse pass. Not shared across threads.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<usize, Var>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, requires_grad: bool) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    /// A differentiable input.
    pub fn leaf(&mut self, t: &Tensor<T>) -> Var {
        self.push(t.shape.clone(), t.data.clone(), Op::Leaf, true)
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Var> {
        let shape = shape.into();
        if numel(&shape) != data.len() {
            return Err(Error::shape(format!(
                "constant of shape {shape:?} given {} values",
                data.len()
            )));
        }
        Ok(self.push(shape, data, Op::Leaf, false))
    }

    /// Brings parameter `name` onto the tape, once per tape.
    pub fn param(&mut self, store: &ParamStore<T>, name: &str) -> Result<Var> {
        let idx = store.require(name)?;
        if let Some(&v) = self.params.get(&idx) {
            return Ok(v);
        }
        let t = store.tensor(idx);
        let v = self.push(t.shape.clone(), t.data.clone(), Op::Leaf, t.requires_grad);
        self.params.insert(idx, v);
        Ok(v)
    }

    /// `W x + b` for `W` of shape `[out, in]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let ws = self.shape(w).to_vec();
        let n_in = self.value(x).len();
        if ws.len() != 2 || ws[1] != n_in {
            return Err(Error::shape(format!(
                "dense weight {ws:?} does not accept input {:?}",
                self.shape(x)
            )));
        }
        if let Some(b) = b {
            if self.value(b).len() != ws[0] {
                return Err(Error::shape(format!(
                    "dense bias {:?} for weight {ws:?}",
                    self.shape(b)
                )));
            }
        }
        let (xv, wv) = (self.value(x), self.value(w));
        let mut y: Vec<T> = (0..ws[0])
            .map(|i| kernels::dot(&wv[i * n_in..(i + 1) * n_in], xv))
            .collect();
        if let Some(b) = b {
            kernels::add_assign(&mut y, self.value(b));
        }
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(vec![ws[0]], y, Op::Dense { x, w, b }, rg))
    }

    /// Cross-correlation of `x` (`[c_in, len]`) with kernels `[c_out, c_in, k]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 2 || ws.len() != 3 || ws[1] != xs[0] || stride == 0 {
            return Err(Error::shape(format!(
                "conv1d kernels {ws:?} (stride {stride}) do not accept input {xs:?}"
            )));
        }
        let (c_in, len, c_out, k) = (xs[0], xs[1], ws[0], ws[2]);
        if len + 2 * padding < k {
            return Err(Error::shape(format!(
                "conv1d output would be empty: length {len}, padding {padding}, kernel {k}"
            )));
        }
        let out_len = (len + 2 * padding - k) / stride + 1;
        if let Some(b) = b {
            if self.value(b).len() != c_out {
                return Err(Error::shape(format!("conv1d bias {:?} for {c_out} outputs", self.shape(b))));
            }
        }
        let geom = ConvGeom {
            c_in,
            len,
            k,
            stride,
            pad: padding,
            out_len,
        };
        let cols = kernels::im2col(self.value(x), &geom);
        let mut y = vec![T::zero(); c_out * out_len];
        if let Some(b) = b {
            for (co, &bv) in self.value(b).iter().enumerate() {
                y[co * out_len..(co + 1) * out_len].iter_mut().for_each(|v| *v = bv);
            }
        }
        kernels::gemm(
            self.value(w),
            View::row_major(c_out, geom.rows()),
            &cols,
            View::row_major(geom.rows(), out_len),
            T::one(),
            &mut y,
        );
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        let op = Op::Conv1d {
            x,
            w,
            b,
            geom,
            c_out,
            cols,
        };
        Ok(self.push(vec![c_out, out_len], y, op, rg))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let y = self.value(x).iter().map(|v| v.tanh()).collect();
        let rg = self.rg(x);
        self.push(self.shape(x).to_vec(), y, Op::Tanh(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.value(x).iter().map(|&v| sigmoid(v)).collect();
        let rg = self.rg(x);
        self.push(self.shape(x).to_vec(), y, Op::Sigmoid(x), rg)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let y = self.value(a).iter().zip(self.value(b)).map(|(&p, &q)| p + q).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(self.shape(a).to_vec(), y, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let y = self.value(a).iter().zip(self.value(b)).map(|(&p, &q)| p * q).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(self.shape(a).to_vec(), y, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        self.lin_comb(&[(x, c)]).expect("single term")
    }

    /// `sum_i c_i x_i` over same-shaped terms with constant coefficients.
    pub fn lin_comb(&mut self, terms: &[(Var, T)]) -> Result<Var> {
        let first = terms
            .first()
            .ok_or_else(|| Error::Contract("lin_comb needs at least one term".into()))?
            .0;
        for &(v, _) in &terms[1..] {
            self.same_shape(first, v, "lin_comb")?;
        }
        let mut y = vec![T::zero(); self.value(first).len()];
        for &(v, c) in terms {
            kernels::axpy(c, self.value(v), &mut y);
        }
        let rg = terms.iter().any(|&(v, _)| self.rg(v));
        Ok(self.push(self.shape(first).to_vec(), y, Op::LinComb(terms.to_vec()), rg))
    }

    /// Concatenates along the leading axis (channels for `[c, len]`).
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat needs at least one part".into()))?;
        let tail = self.shape(first)[1..].to_vec();
        let mut lead = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[1..] != tail[..] {
                return Err(Error::shape(format!(
                    "concat: {:?} does not match trailing dims {tail:?}",
                    s
                )));
            }
            lead += s[0];
        }
        let mut y = Vec::with_capacity(lead * numel(&tail));
        for &p in parts {
            y.extend_from_slice(self.value(p));
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(shape, y, Op::Concat(parts.to_vec()), rg))
    }

    /// Rows `start..start + len` along the leading axis.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.is_empty() || start + len > s[0] {
            return Err(Error::shape(format!("slice {start}..{} of {s:?}", start + len)));
        }
        let row = numel(&s[1..]);
        let y = self.value(x)[start * row..(start + len) * row].to_vec();
        let mut shape = s;
        shape[0] = len;
        let rg = self.rg(x);
        Ok(self.push(shape, y, Op::Slice { x, offset: start * row }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let shape = shape.into();
        if numel(&shape) != self.value(x).len() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} to {shape:?}",
                self.shape(x)
            )));
        }
        let y = self.value(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(shape, y, Op::Reshape(x), rg))
    }

    /// Max-pool of width 2 and stride 2 along the length of `[c, len]`.
    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || !s[1].is_multiple_of(2) {
            return Err(Error::shape(format!("max_pool2 needs [c, even len], got {s:?}")));
        }
        let (c, half) = (s[0], s[1] / 2);
        let xv = self.value(x);
        let mut y = Vec::with_capacity(c * half);
        let mut argmax = Vec::with_capacity(c * half);
        for i in 0..c * half {
            let (a, b) = (xv[2 * i], xv[2 * i + 1]);
            // ties route to the earlier sample
            if a >= b {
                y.push(a);
                argmax.push((2 * i) as u32);
            } else {
                y.push(b);
                argmax.push((2 * i + 1) as u32);
            }
        }
        let rg = self.rg(x);
        Ok(self.push(vec![c, half], y, Op::MaxPool2 { x, argmax }, rg))
    }

    /// Nearest-neighbor upsampling by 2 along the length of `[c, len]`.
    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(Error::shape(format!("upsample2 needs [c, len], got {s:?}")));
        }
        let y = self.value(x).iter().flat_map(|&v| [v, v]).collect();
        let rg = self.rg(x);
        Ok(self.push(vec![s[0], 2 * s[1]], y, Op::Upsample2(x), rg))
    }

    /// Mean binary cross-entropy of probabilities `p` against `target`,
    /// with `p` clamped to `[eps, 1 - eps]`.
    pub fn bce(&mut self, p: Var, target: &[T]) -> Result<Var> {
        if self.value(p).len() != target.len() {
            return Err(Error::shape(format!(
                "bce: {} predictions for {} targets",
                self.value(p).len(),
                target.len()
            )));
        }
        let eps = T::lit(BCE_EPS);
        let n = T::lit(target.len() as f64);
        let total: T = self
            .value(p)
            .iter()
            .zip(target)
            .map(|(&pi, &yi)| {
                let pc = pi.max(eps).min(T::one() - eps);
                -(yi * pc.ln() + (T::one() - yi) * (T::one() - pc).ln())
            })
            .sum();
        let rg = self.rg(p);
        let op = Op::Bce {
            p,
            target: target.to_vec(),
        };
        Ok(self.push(vec![1], vec![total / n], op, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().copied().sum();
        let rg = self.rg(x);
        self.push(vec![1], vec![s], Op::Sum(x), rg)
    }

    /// Reverse pass from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Option<Var>) -> Option<&'g mut Vec<T>> {
        let v = v.filter(|v| self.rg(*v))?;
        let n = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); n]))
    }

    fn backprop(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Dense { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let n_in = xv.len();
                if let Some(gw) = self.slot(grads, Some(*w)) {
                    for (i, &gi) in g.iter().enumerate() {
                        kernels::axpy(gi, xv, &mut gw[i * n_in..(i + 1) * n_in]);
                    }
                }
                if let Some(gx) = self.slot(grads, Some(*x)) {
                    for (i, &gi) in g.iter().enumerate() {
                        kernels::axpy(gi, &wv[i * n_in..(i + 1) * n_in], gx);
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    kernels::add_assign(gb, g);
                }
            }
            Op::Conv1d {
                x,
                w,
                b,
                geom,
                c_out,
                cols,
            } => {
                let rows = geom.rows();
                if let Some(gw) = self.slot(grads, Some(*w)) {
                    kernels::gemm(
                        g,
                        View::row_major(*c_out, geom.out_len),
                        cols,
                        View::transposed(rows, geom.out_len),
                        T::one(),
                        gw,
                    );
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for (co, gbv) in gb.iter_mut().enumerate() {
                        *gbv += g[co * geom.out_len..(co + 1) * geom.out_len].iter().copied().sum();
                    }
                }
                if self.rg(*x) {
                    let mut dcols = vec![T::zero(); rows * geom.out_len];
                    kernels::gemm(
                        self.value(*w),
                        View::transposed(*c_out, rows),
                        g,
                        View::row_major(*c_out, geom.out_len),
                        T::zero(),
                        &mut dcols,
                    );
                    kernels::col2im(&dcols, geom, self.slot(grads, Some(*x)).unwrap());
                }
            }
            Op::Tanh(x) => {
                if let Some(gx) = self.slot(grads, Some(*x)) {
                    for ((gxi, &gi), &yi) in gx.iter_mut().zip(g).zip(&node.value) {
                        *gxi += gi * (T::one() - yi * yi);
                    }
                }
            }
            Op::Sigmoid(x) => {
                if let Some(gx) = self.slot(grads, Some(*x)) {
                    for ((gxi, &gi), &yi) in gx.iter_mut().zip(g).zip(&node.value) {
                        *gxi += gi * yi * (T::one() - yi);
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = self.slot(grads, Some(*a)) {
                    kernels::add_assign(ga, g);
                }
                if let Some(gb) = self.slot(grads, Some(*b)) {
                    kernels::add_assign(gb, g);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if let Some(ga) = self.slot(grads, Some(*a)) {
                    for ((gai, &gi), &bi) in ga.iter_mut().zip(g).zip(bv) {
                        *gai += gi * bi;
                    }
                }
                if let Some(gb) = self.slot(grads, Some(*b)) {
                    for ((gbi, &gi), &ai) in gb.iter_mut().zip(g).zip(av) {
                        *gbi += gi * ai;
                    }
                }
            }
            Op::LinComb(terms) => {
                for &(v, c) in terms {
                    if let Some(gv) = self.slot(grads, Some(v)) {
                        kernels::axpy(c, g, gv);
                    }
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    if let Some(gp) = self.slot(grads, Some(p)) {
                        kernels::add_assign(gp, &g[offset..offset + n]);
                    }
                    offset += n;
                }
            }
            Op::Slice { x, offset } => {
                if let Some(gx) = self.slot(grads, Some(*x)) {
                    kernels::add_assign(&mut gx[*offset..*offset + g.len()], g);
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = self.slot(grads, Some(*x)) {
                    kernels::add_assign(gx, g);
                }
            }
            Op::MaxPool2 { x, argmax } => {
                if let Some(gx) = self.slot(grads, Some(*x)) {
                    for (&gi, &src) in g.iter().zip(argmax) {
                        gx[src as usize] += gi;
                    }
                }
            }
            Op::Upsample2(x) => {
                if let Some(gx) = self.slot(grads, Some(*x)) {
                    for (i, gxi) in gx.iter_mut().enumerate() {
                        *gxi += g[2 * i] + g[2 * i + 1];
                    }
                }
            }
            Op::Bce { p, target } => {
                let eps = T::lit(BCE_EPS);
                let scale = g[0] / T::lit(target.len() as f64);
                let pv = self.value(*p);
                if let Some(gp) = self.slot(grads, Some(*p)) {
                    for ((gpi, &pi), &yi) in gp.iter_mut().zip(pv).zip(target) {
                        // evaluated at the clamped probability so saturated
                        // predictions still receive a corrective signal
                        let pc = pi.max(eps).min(T::one() - eps);
                        *gpi += scale * (pc - yi) / (pc * (T::one() - pc));
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = self.slot(grads, Some(*x)) {
                    gx.iter_mut().for_each(|v| *v += g[0]);
                }
            }
        }
    }

    /// Adds the adjoints of every parameter on this tape into `store`.
    pub fn accumulate_param_grads(&self, grads: &Gradients<T>, store: &mut ParamStore<T>) {
        let mut entries: Vec<(usize, Var)> = self.params.iter().map(|(&i, &v)| (i, v)).collect();
        entries.sort_unstable_by_key(|e| e.0);
        for (idx, v) in entries {
            if let (Some(g), Some(slot)) = (grads.get(v), store.tensor_mut(idx).grad.as_mut()) {
                kernels::add_assign(slot, g);
            }
        }
    }
}

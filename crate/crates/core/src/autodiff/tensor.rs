use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Real;
use crate::error::{Error, Result};

/// Dense row-major storage with an optional gradient slot.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
    pub requires_grad: bool,
    pub grad: Option<Vec<T>>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![T::zero(); n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn vector(data: Vec<T>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
            requires_grad: false,
            grad: None,
        }
    }

    /// Marks the tensor trainable and allocates a zeroed gradient slot.
    pub fn trainable(mut self) -> Self {
        self.requires_grad = true;
        self.grad = Some(vec![T::zero(); self.data.len()]);
        self
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        let conv = |v: &Vec<T>| v.iter().map(|x| U::lit(x.to_f64().unwrap())).collect();
        Tensor {
            shape: self.shape.clone(),
            data: conv(&self.data),
            requires_grad: self.requires_grad,
            grad: self.grad.as_ref().map(conv),
        }
    }
}

/// Named trainable parameters in registration order.
#[derive(Clone, Debug)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    lookup: HashMap<String, usize>,
    init_seed: u64,
    rng: ChaCha8Rng,
}

impl<T: Real> ParamStore<T> {
    pub fn new(init_seed: u64) -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
            lookup: HashMap::new(),
            init_seed,
            rng: ChaCha8Rng::seed_from_u64(init_seed),
        }
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    /// Registers a tensor; names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<usize> {
        let name = name.into();
        if self.lookup.contains_key(&name) {
            return Err(Error::Checkpoint(format!("duplicate parameter {name}")));
        }
        let idx = self.tensors.len();
        self.lookup.insert(name.clone(), idx);
        self.names.push(name);
        let tensor = if tensor.grad.is_some() {
            tensor
        } else {
            tensor.trainable()
        };
        self.tensors.push(tensor);
        Ok(idx)
    }

    /// Registers a parameter drawn from `uniform(-s, s)`, `s = sqrt(1 / fan_in)`.
    pub fn add_uniform(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize) -> Result<usize> {
        let s = (1.0 / fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| T::lit(self.rng.random_range(-s..s)))
            .collect();
        self.insert(name, Tensor::new(shape.to_vec(), data)?)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.lookup.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index_of(name).map(move |i| &mut self.tensors[i])
    }

    pub fn require(&self, name: &str) -> Result<usize> {
        self.index_of(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn tensor(&self, index: usize) -> &Tensor<T> {
        &self.tensors[index]
    }

    pub fn tensor_mut(&mut self, index: usize) -> &mut Tensor<T> {
        &mut self.tensors[index]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter_mut())
    }

    pub fn zero_grads(&mut self) {
        for t in &mut self.tensors {
            if let Some(g) = &mut t.grad {
                g.iter_mut().for_each(|x| *x = T::zero());
            }
        }
    }

    /// Sets every parameter value to zero.
    pub fn fill_zero(&mut self) {
        for t in &mut self.tensors {
            t.data.iter_mut().for_each(|x| *x = T::zero());
        }
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            lookup: self.lookup.clone(),
            init_seed: self.init_seed,
            rng: self.rng.clone(),
        }
    }

    /// Global L2 norm of all gradient slots.
    pub fn grad_norm(&self) -> f64 {
        self.tensors
            .iter()
            .filter_map(|t| t.grad.as_ref())
            .flatten()
            .map(|g| g.to_f64().unwrap().powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_checked() {
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert_eq!(Tensor::<f32>::zeros(vec![2, 3]).len(), 6);
    }

    #[test]
    fn uniform_init_is_seeded_and_bounded() {
        let mut a = ParamStore::<f32>::new(3);
        let mut b = ParamStore::<f32>::new(3);
        a.add_uniform("w", &[16, 4], 4).unwrap();
        b.add_uniform("w", &[16, 4], 4).unwrap();
        let (wa, wb) = (a.get("w").unwrap(), b.get("w").unwrap());
        assert_eq!(wa.data, wb.data);
        assert!(wa.data.iter().all(|x| x.abs() < 0.5));
        assert!(wa.grad.as_ref().unwrap().iter().all(|&g| g == 0.0));
        let mut c = ParamStore::<f32>::new(4);
        c.add_uniform("w", &[16, 4], 4).unwrap();
        assert_ne!(c.get("w").unwrap().data, wa.data);
    }

    #[test]
    fn names_unique() {
        let mut s = ParamStore::<f64>::new(0);
        s.add_uniform("a", &[2], 1).unwrap();
        assert!(s.add_uniform("a", &[2], 1).is_err());
        assert!(matches!(s.require("b"), Err(Error::Checkpoint(_))));
    }
}

//! Named parameter sets, their initialisation, and binding onto a tape.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Ordered collection of named tensors. Equality ignores insertion order.
#[derive(Clone, Debug, Default)]
pub struct Params {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl PartialEq for Params {
    fn eq(&self, other: &Self) -> bool {
        self.len() == other.len() && self.iter().all(|(n, t)| other.get(n) == Some(t))
    }
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let name = name.into();
        if let Some(&i) = self.index.get(&name) {
            self.tensors[i] = value;
        } else {
            self.index.insert(name.clone(), self.names.len());
            self.names.push(name);
            self.tensors.push(value);
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Total number of scalars.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Replaces values from `other` for every name present in both; fails if
    /// `other` lacks one of ours or a shape differs.
    pub fn load_from(&mut self, other: &Params) -> Result<()> {
        for (name, t) in self.names.iter().zip(self.tensors.iter_mut()) {
            let src = other
                .get(name)
                .ok_or_else(|| Error::Missing(format!("parameter {name}")))?;
            if src.shape() != t.shape() {
                return Err(Error::shape(
                    "load parameters",
                    format!("{name}: expected {:?}, found {:?}", t.shape(), src.shape()),
                ));
            }
            *t = src.clone();
        }
        Ok(())
    }

    /// Records every tensor as a leaf of `tape`.
    pub fn bind<'p, 't>(&'p self, tape: &'t Tape, trainable: bool) -> Bound<'p, 't> {
        Bound {
            params: self,
            vars: self.tensors.iter().map(|t| tape.leaf(t.clone(), trainable)).collect(),
        }
    }

    /// Wraps existing tape variables, one per parameter in order.
    pub fn bind_vars<'p, 't>(&'p self, vars: &[Var<'t>]) -> Result<Bound<'p, 't>> {
        if vars.len() != self.len() {
            return Err(Error::InvalidArgument(format!(
                "{} variables for {} parameters",
                vars.len(),
                self.len()
            )));
        }
        for ((name, t), v) in self.iter().zip(vars) {
            if v.shape() != t.shape() {
                return Err(Error::shape("bind_vars", format!("{name}: {:?} vs {:?}", v.shape(), t.shape())));
            }
        }
        Ok(Bound {
            params: self,
            vars: vars.to_vec(),
        })
    }

    /// He-uniform conv weight `[cout, cin, k, k]` plus zero bias.
    pub fn add_conv(&mut self, name: &str, cout: usize, cin: usize, k: usize, rng: &mut ChaCha8Rng) {
        self.insert(format!("{name}.w"), he_uniform([cout, cin, k, k], cin * k * k, rng));
        self.insert(format!("{name}.b"), Tensor::zeros([cout]));
    }

    /// He-uniform transposed-conv weight `[cin, cout, k, k]` plus zero bias.
    pub fn add_deconv(&mut self, name: &str, cin: usize, cout: usize, k: usize, rng: &mut ChaCha8Rng) {
        // Each output pixel of a stride-s transposed conv sums cin * (k/s)^2 taps.
        let fan_in = cin * k * k / 4;
        self.insert(format!("{name}.w"), he_uniform([cin, cout, k, k], fan_in.max(1), rng));
        self.insert(format!("{name}.b"), Tensor::zeros([cout]));
    }

    /// He-uniform fully connected weight `[fan_in, fan_out]` plus zero bias.
    pub fn add_linear(&mut self, name: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) {
        self.insert(format!("{name}.w"), he_uniform([fan_in, fan_out], fan_in, rng));
        self.insert(format!("{name}.b"), Tensor::zeros([fan_out]));
    }
}

fn he_uniform(shape: impl Into<Vec<usize>>, fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = (6.0 / fan_in as Real).sqrt();
    Tensor::from_fn(shape, |_| rng.gen_range(-bound..bound))
}

/// A [`Params`] set recorded on one tape.
pub struct Bound<'p, 't> {
    params: &'p Params,
    vars: Vec<Var<'t>>,
}

impl<'p, 't> Bound<'p, 't> {
    pub fn var(&self, name: &str) -> Result<Var<'t>> {
        self.params
            .index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| Error::Missing(format!("parameter {name}")))
    }

    pub fn params(&self) -> &'p Params {
        self.params
    }

    /// Gradients in parameter order; zeros where nothing flowed.
    pub fn grads(&self) -> Vec<Tensor> {
        self.vars
            .iter()
            .zip(&self.params.tensors)
            .map(|(v, t)| v.grad().unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect()
    }

    /// `x[N, in] @ w + b`.
    pub fn linear(&self, x: Var<'t>, name: &str) -> Result<Var<'t>> {
        x.matmul(self.var(&format!("{name}.w"))?)?
            .add_row(self.var(&format!("{name}.b"))?)
    }

    pub fn conv(&self, x: Var<'t>, name: &str, stride: usize, padding: usize) -> Result<Var<'t>> {
        x.conv2d(
            self.var(&format!("{name}.w"))?,
            Some(self.var(&format!("{name}.b"))?),
            stride,
            padding,
        )
    }

    pub fn deconv(&self, x: Var<'t>, name: &str, stride: usize, padding: usize) -> Result<Var<'t>> {
        x.conv_transpose2d(
            self.var(&format!("{name}.w"))?,
            Some(self.var(&format!("{name}.b"))?),
            stride,
            padding,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn insert_get_and_bind() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = Params::new();
        p.add_linear("fc", 3, 2, &mut rng);
        assert_eq!(p.len(), 2);
        assert_eq!(p.num_scalars(), 8);
        let bound = (6.0 / 3.0 as Real).sqrt();
        assert!(p.get("fc.w").unwrap().data().iter().all(|v| v.abs() <= bound));
        let tape = Tape::new();
        let b = p.bind(&tape, true);
        let x = tape.constant(Tensor::ones([1, 3]));
        let y = b.linear(x, "fc").unwrap().sum();
        tape.backward(y).unwrap();
        let g = b.grads();
        assert_eq!(g[0].data(), &[1.0; 6]);
        assert_eq!(g[1].data(), &[1.0; 2]);
        assert!(b.var("nope").is_err());
    }

    #[test]
    fn load_from_checks_shapes() {
        let mut a = Params::new();
        a.insert("x", Tensor::zeros([2]));
        let mut b = Params::new();
        b.insert("x", Tensor::ones([2]));
        a.load_from(&b).unwrap();
        assert_eq!(a.get("x").unwrap().data(), &[1.0, 1.0]);
        b.insert("x", Tensor::ones([3]));
        assert!(a.load_from(&b).is_err());
        assert!(a.load_from(&Params::new()).is_err());
    }
}

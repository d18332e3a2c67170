//! Named-parameter building blocks shared by every part of the network.

use crate::seed::derive_seed;
use crate::error::Result;
use crate::tensor::{
    add, conv2d, leaky_relu, linear, xavier_init, ParamSet, Padding, Scalar, Tensor,
};

pub(crate) const KERNEL: usize = 3;

/// Creates parameters in a fixed order, each with its own derived seed.
pub(crate) struct Builder<S: Scalar> {
    pub params: ParamSet<S>,
    seed: u64,
    count: u64,
}

impl<S: Scalar> Builder<S> {
    pub fn new(seed: u64) -> Self {
        Builder {
            params: ParamSet::new(),
            seed,
            count: 0,
        }
    }

    fn weight(&mut self, name: String, shape: &[usize]) -> Result<()> {
        let w = xavier_init(shape, derive_seed(self.seed, self.count, 7))?;
        self.count += 1;
        self.params.insert(name, w)
    }

    fn bias(&mut self, name: String, n: usize) -> Result<()> {
        self.params.insert(name, Tensor::leaf(&[n], vec![S::zero(); n], true)?)
    }

    pub fn conv(&mut self, name: &str, cin: usize, cout: usize) -> Result<()> {
        self.weight(format!("{name}.w"), &[cout, cin, KERNEL, KERNEL])?;
        self.bias(format!("{name}.b"), cout)
    }

    pub fn linear(&mut self, name: &str, cin: usize, cout: usize) -> Result<()> {
        self.weight(format!("{name}.w"), &[cin, cout])?;
        self.bias(format!("{name}.b"), cout)
    }

    pub fn resblock(&mut self, name: &str, ch: usize) -> Result<()> {
        self.conv(&format!("{name}.conv1"), ch, ch)?;
        self.conv(&format!("{name}.conv2"), ch, ch)
    }

    pub fn embedding(&mut self, name: &str, tokens: usize, dim: usize) -> Result<()> {
        self.weight(name.to_string(), &[tokens, dim])
    }
}

/// Read-only view of a parameter set during a forward pass.
#[derive(Clone, Copy)]
pub(crate) struct Layers<'a, S: Scalar> {
    pub params: &'a ParamSet<S>,
    pub slope: f64,
}

impl<S: Scalar> Layers<'_, S> {
    pub fn has(&self, name: &str) -> bool {
        self.params.contains(&format!("{name}.w"))
    }

    /// 3x3 "same" convolution, optionally followed by leaky ReLU.
    pub fn conv(&self, name: &str, x: &Tensor<S>, stride: usize, act: bool) -> Result<Tensor<S>> {
        let y = conv2d(
            x,
            self.params.get(&format!("{name}.w"))?,
            self.params.get(&format!("{name}.b"))?,
            stride,
            Padding::Same,
        )?;
        Ok(if act { leaky_relu(&y, self.slope) } else { y })
    }

    pub fn linear(&self, name: &str, x: &Tensor<S>) -> Result<Tensor<S>> {
        linear(
            x,
            self.params.get(&format!("{name}.w"))?,
            self.params.get(&format!("{name}.b"))?,
        )
    }

    /// `x + lrelu(conv2(lrelu(conv1(x))))`.
    pub fn resblock(&self, name: &str, x: &Tensor<S>) -> Result<Tensor<S>> {
        let h = self.conv(&format!("{name}.conv1"), x, 1, true)?;
        let h = self.conv(&format!("{name}.conv2"), &h, 1, true)?;
        add(x, &h)
    }
}

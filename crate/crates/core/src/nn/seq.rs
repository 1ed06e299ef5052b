use ndarray::ArrayD;

use super::layers::{join, Ctx, Layer, Module, Param};
use super::Scalar;

/// Layers applied in order, with a recorded tape for backpropagation.
#[derive(Debug, Clone, Default)]
pub struct Sequential<F> {
    pub layers: Vec<Layer<F>>,
}

/// Saved per-layer inputs and auxiliary arrays from a training forward pass.
#[derive(Debug)]
pub struct Tape<F> {
    inputs: Vec<ArrayD<F>>,
    aux: Vec<Vec<ArrayD<F>>>,
}

impl<F: Scalar> Sequential<F> {
    pub fn new(layers: Vec<Layer<F>>) -> Self {
        Self { layers }
    }

    pub fn push(&mut self, layer: Layer<F>) {
        self.layers.push(layer);
    }

    pub fn forward(&self, x: ArrayD<F>, ctx: &mut Ctx<'_>) -> (ArrayD<F>, Tape<F>) {
        let mut tape = Tape {
            inputs: Vec::with_capacity(self.layers.len()),
            aux: Vec::with_capacity(self.layers.len()),
        };
        let mut cur = x;
        for layer in &self.layers {
            let (y, aux) = layer.forward(&cur, ctx);
            tape.inputs.push(cur);
            tape.aux.push(aux);
            cur = y;
        }
        (cur, tape)
    }

    /// Inference pass: dropout disabled, nothing recorded.
    pub fn infer(&self, x: &ArrayD<F>) -> ArrayD<F> {
        let mut ctx = Ctx::eval();
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = layer.forward(&cur, &mut ctx).0;
        }
        cur
    }

    /// Accumulate parameter gradients and return the input gradient.
    pub fn backward(&mut self, tape: Tape<F>, gy: ArrayD<F>) -> ArrayD<F> {
        let mut g = gy;
        for ((layer, x), aux) in self
            .layers
            .iter_mut()
            .zip(tape.inputs.iter())
            .zip(tape.aux.iter())
            .rev()
        {
            g = layer.backward(x, aux, g);
        }
        g
    }
}

impl<F: Scalar> Module<F> for Sequential<F> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<F>)) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &i.to_string()), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<F>)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &i.to_string()), f);
        }
    }
}

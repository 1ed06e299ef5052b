//! Minimal neural-network engine: layers with hand-written backward passes,
//! Adam, and a named-array checkpoint container.
//!
//! All computation is single-threaded and ordered, so training is bitwise
//! reproducible for a given seed.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
mod optim;
mod scalar;
mod seq;
mod sparse;

pub use layers::{Activation, ChebConv, Conv2d, Ctx, Layer, Linear, Module, Param, ResBlock, VertexMap};
pub use optim::{Adam, AdamConfig};
pub use scalar::Scalar;
pub use seq::{Sequential, Tape};
pub use sparse::Csr;

/// Numerically stable sum of squared differences divided by the count.
pub fn mse<F: Scalar>(a: &ndarray::ArrayD<F>, b: &ndarray::ArrayD<F>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let n = a.len().max(1) as f64;
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| {
            let d = x.to_f64().unwrap() - y.to_f64().unwrap();
            d * d
        })
        .sum::<f64>()
        / n
}

#[cfg(test)]
mod tests;

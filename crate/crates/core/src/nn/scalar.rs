use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};

/// Floating-point element type of the network engine.
///
/// Training runs in `f32`; gradient checks instantiate the same code at `f64`.
pub trait Scalar:
    LinalgScalar
    + Float
    + FromPrimitive
    + ScalarOperand
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    const DTYPE: safetensors::Dtype;

    fn c(x: f64) -> Self;

    /// Hyperbolic tangent used by the activations. `f32` uses a rational
    /// approximation (max error a few ulp, output within [-1, 1]); libm's is
    /// ~10x slower and dominates the image VAE.
    fn act_tanh(self) -> Self;

    fn to_le_bytes_vec(xs: &[Self]) -> Vec<u8>;
    fn from_le_bytes_slice(bytes: &[u8], dtype: safetensors::Dtype) -> Option<Vec<Self>>;
}

fn decode_any(bytes: &[u8], dtype: safetensors::Dtype) -> Option<Vec<f64>> {
    match dtype {
        safetensors::Dtype::F32 => Some(
            bytes
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
                .collect(),
        ),
        safetensors::Dtype::F64 => Some(
            bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        _ => None,
    }
}

impl Scalar for f32 {
    const DTYPE: safetensors::Dtype = safetensors::Dtype::F32;

    #[inline]
    fn c(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn act_tanh(self) -> Self {
        const A: [f32; 7] = [
            4.893_524_6e-3,
            6.372_619_3e-4,
            1.485_722_4e-5,
            5.122_297e-8,
            -8.604_672e-11,
            2.000_188e-13,
            -2.760_768_5e-16,
        ];
        const B: [f32; 4] = [4.893_525e-3, 2.268_434_6e-3, 1.185_347_1e-4, 1.198_258_4e-6];
        let x = self.clamp(-7.998_811_7, 7.998_811_7);
        if x.abs() < 4e-4 {
            return x;
        }
        let x2 = x * x;
        let mut p = A[6];
        for a in A[..6].iter().rev() {
            p = p * x2 + a;
        }
        let q = ((B[3] * x2 + B[2]) * x2 + B[1]) * x2 + B[0];
        (x * p / q).clamp(-1.0, 1.0)
    }

    fn to_le_bytes_vec(xs: &[Self]) -> Vec<u8> {
        xs.iter().flat_map(|x| x.to_le_bytes()).collect()
    }

    fn from_le_bytes_slice(bytes: &[u8], dtype: safetensors::Dtype) -> Option<Vec<Self>> {
        if dtype == safetensors::Dtype::F32 {
            return Some(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            );
        }
        decode_any(bytes, dtype).map(|v| v.into_iter().map(|x| x as f32).collect())
    }
}

impl Scalar for f64 {
    const DTYPE: safetensors::Dtype = safetensors::Dtype::F64;

    #[inline]
    fn c(x: f64) -> Self {
        x
    }

    #[inline]
    fn act_tanh(self) -> Self {
        self.tanh()
    }

    fn to_le_bytes_vec(xs: &[Self]) -> Vec<u8> {
        xs.iter().flat_map(|x| x.to_le_bytes()).collect()
    }

    fn from_le_bytes_slice(bytes: &[u8], dtype: safetensors::Dtype) -> Option<Vec<Self>> {
        decode_any(bytes, dtype)
    }
}

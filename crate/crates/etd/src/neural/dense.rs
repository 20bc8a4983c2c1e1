//! A dense affine layer `y = activation(Wx + b)`.

use rand_chacha::ChaCha8Rng;

use super::matrix::{orthogonal_init, Matrix};
use super::Activation;
use crate::error::{EtdError, Result};

#[derive(Debug, Clone)]
pub struct Dense {
    /// Weights, shape (out, in).
    pub w: Matrix,
    pub b: Vec<f64>,
    pub activation: Activation,
}

/// Parameter gradients of one dense layer; same shapes as the layer.
#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl Dense {
    pub fn orthogonal(
        in_dim: usize,
        out_dim: usize,
        gain: f64,
        activation: Activation,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Dense {
            w: orthogonal_init(out_dim, in_dim, gain, rng),
            b: vec![0.0; out_dim],
            activation,
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Dense {
            w: Matrix::zeros(out_dim, in_dim),
            b: vec![0.0; out_dim],
            activation,
        }
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.w.cols()
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.w.rows()
    }

    /// Shape-checked forward pass.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim() {
            return Err(EtdError::Shape {
                context: "dense_forward",
                expected: self.in_dim(),
                actual: x.len(),
            });
        }
        let mut y = vec![0.0; self.out_dim()];
        self.forward_into(x, &mut y);
        Ok(y)
    }

    /// Forward pass into a caller-owned buffer. Shapes are asserted, not
    /// returned as errors; callers validate once at network construction.
    #[inline]
    pub fn forward_into(&self, x: &[f64], y: &mut [f64]) {
        self.w.matvec(x, y);
        for (yi, &bi) in y.iter_mut().zip(&self.b) {
            *yi = self.activation.apply(*yi + bi);
        }
    }

    /// Backward pass for one sample.
    ///
    /// `y` must be the output previously produced by `forward_into` for `x`.
    /// Parameter gradients are accumulated (`+=`); `d_x` is accumulated too,
    /// so the caller zeroes it when starting a new chain.
    pub fn backward(
        &self,
        x: &[f64],
        y: &[f64],
        d_y: &[f64],
        grads: &mut DenseGrads,
        d_x: &mut [f64],
        scratch: &mut Vec<f64>,
    ) {
        scratch.clear();
        scratch.extend(
            d_y.iter()
                .zip(y)
                .map(|(&dy, &yi)| dy * self.activation.grad_from_output(yi)),
        );
        for (gb, &dz) in grads.b.iter_mut().zip(scratch.iter()) {
            *gb += dz;
        }
        grads.w.add_outer(scratch, x);
        self.w.matvec_t_add(scratch, d_x);
    }

    pub fn zero_grads(&self) -> DenseGrads {
        DenseGrads {
            w: Matrix::zeros(self.out_dim(), self.in_dim()),
            b: vec![0.0; self.out_dim()],
        }
    }
}

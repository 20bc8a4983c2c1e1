//! Minimal trainable network stack with analytic gradients.
//!
//! Dense layers, a gated recurrent cell with a masked update that preserves
//! memory across dormant frames, a categorical policy head and twin value
//! heads. No autodiff graph: every backward pass is written out by hand and
//! checked against finite differences in the tests.

mod actor;
mod critic;
mod dense;
mod gru;
mod matrix;

pub use actor::{ActorGrads, ActorNet, ActorTape, PolicyOutput};
pub use critic::{CriticGrads, CriticHidden, CriticNet, CriticTape};
pub use dense::{Dense, DenseGrads};
pub use gru::{gru_cell_forward, masked_gru_update, GruCell, GruGrads, GruState};
pub use matrix::{orthogonal_init, Matrix};

/// Element-wise activation of a dense layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Linear => x,
        }
    }

    /// Derivative expressed in terms of the activation output.
    #[inline]
    pub fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Linear => 1.0,
        }
    }
}

/// Hidden width of the recurrent core.
pub const GRU_HIDDEN: usize = 128;
/// Width of every MLP hidden layer.
pub const MLP_WIDTH: usize = 64;
/// Number of MLP layers in front of the recurrent core.
pub const MLP_DEPTH: usize = 3;

/// Orthogonal gain for hidden layers.
pub const GAIN_HIDDEN: f64 = std::f64::consts::SQRT_2;
/// Orthogonal gain for the policy head; small so initial logits are near
/// zero and the initial policy is near uniform.
pub const GAIN_POLICY: f64 = 0.01;
/// Orthogonal gain for value heads.
pub const GAIN_VALUE: f64 = 1.0;

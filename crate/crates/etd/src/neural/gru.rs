//! Gated recurrent cell with a masked update.
//!
//! Gate convention (fixed so the numeric tests are unambiguous):
//!
//! ```text
//! z  = sigmoid(Wz·x + Uz·h + bz)          update gate
//! r  = sigmoid(Wr·x + Ur·h + br)          reset gate
//! n  = tanh(Wn·x + Un·(r ⊙ h) + bn)       candidate, reset-gated previous state
//! h' = (1 − z) ⊙ n + z ⊙ h
//! ```
//!
//! With all parameters at zero and `h = 1`, this gives `h' = 0.5`.
//!
//! The masked update bypasses the cell entirely when `m = 0`: the previous
//! state is returned value-identical and no arithmetic runs, which is what
//! keeps dormant frames free under the FLOP meter and makes backpropagation
//! treat dormant gaps as identity connections.

use rand_chacha::ChaCha8Rng;

use super::matrix::{orthogonal_init, Matrix};
use crate::error::{EtdError, Result};

/// Recurrent hidden state.
#[derive(Debug, Clone, PartialEq)]
pub struct GruState(pub Vec<f64>);

impl GruState {
    pub fn zeros(hidden: usize) -> Self {
        GruState(vec![0.0; hidden])
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// FNV-1a hash of the exact bit patterns; used by the instrumentation
    /// that checks memory preservation across dormant frames.
    pub fn state_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for &v in &self.0 {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }
}

#[derive(Debug, Clone)]
pub struct GruCell {
    pub w_update: Matrix,
    pub w_reset: Matrix,
    pub w_cand: Matrix,
    pub u_update: Matrix,
    pub u_reset: Matrix,
    pub u_cand: Matrix,
    pub b_update: Vec<f64>,
    pub b_reset: Vec<f64>,
    pub b_cand: Vec<f64>,
}

/// Parameter gradients of the cell, same shapes as [`GruCell`].
#[derive(Debug, Clone)]
pub struct GruGrads {
    pub w_update: Matrix,
    pub w_reset: Matrix,
    pub w_cand: Matrix,
    pub u_update: Matrix,
    pub u_reset: Matrix,
    pub u_cand: Matrix,
    pub b_update: Vec<f64>,
    pub b_reset: Vec<f64>,
    pub b_cand: Vec<f64>,
}

/// Intermediates of one cell evaluation, recorded for the backward pass.
#[derive(Debug, Clone)]
pub struct GruStepCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub reset_h: Vec<f64>,
    pub n: Vec<f64>,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl GruCell {
    pub fn orthogonal(input_dim: usize, hidden_dim: usize, gain: f64, rng: &mut ChaCha8Rng) -> Self {
        GruCell {
            w_update: orthogonal_init(hidden_dim, input_dim, gain, rng),
            w_reset: orthogonal_init(hidden_dim, input_dim, gain, rng),
            w_cand: orthogonal_init(hidden_dim, input_dim, gain, rng),
            u_update: orthogonal_init(hidden_dim, hidden_dim, gain, rng),
            u_reset: orthogonal_init(hidden_dim, hidden_dim, gain, rng),
            u_cand: orthogonal_init(hidden_dim, hidden_dim, gain, rng),
            b_update: vec![0.0; hidden_dim],
            b_reset: vec![0.0; hidden_dim],
            b_cand: vec![0.0; hidden_dim],
        }
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        GruCell {
            w_update: Matrix::zeros(hidden_dim, input_dim),
            w_reset: Matrix::zeros(hidden_dim, input_dim),
            w_cand: Matrix::zeros(hidden_dim, input_dim),
            u_update: Matrix::zeros(hidden_dim, hidden_dim),
            u_reset: Matrix::zeros(hidden_dim, hidden_dim),
            u_cand: Matrix::zeros(hidden_dim, hidden_dim),
            b_update: vec![0.0; hidden_dim],
            b_reset: vec![0.0; hidden_dim],
            b_cand: vec![0.0; hidden_dim],
        }
    }

    #[inline]
    pub fn input_dim(&self) -> usize {
        self.w_update.cols()
    }

    #[inline]
    pub fn hidden_dim(&self) -> usize {
        self.w_update.rows()
    }

    pub fn check_shapes(&self, x: &[f64], h_prev: &GruState) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(EtdError::Shape {
                context: "gru_cell_forward input",
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        if h_prev.len() != self.hidden_dim() {
            return Err(EtdError::Shape {
                context: "gru_cell_forward hidden",
                expected: self.hidden_dim(),
                actual: h_prev.len(),
            });
        }
        Ok(())
    }

    /// One cell evaluation, recording intermediates when `cache` is given.
    pub fn forward_internal(
        &self,
        x: &[f64],
        h_prev: &GruState,
        mut cache: Option<&mut GruStepCache>,
    ) -> GruState {
        let hd = self.hidden_dim();
        let h = &h_prev.0;

        let mut z = vec![0.0; hd];
        self.w_update.matvec(x, &mut z);
        self.u_update.matvec_add(h, &mut z);
        for (zi, &bi) in z.iter_mut().zip(&self.b_update) {
            *zi = sigmoid(*zi + bi);
        }

        let mut r = vec![0.0; hd];
        self.w_reset.matvec(x, &mut r);
        self.u_reset.matvec_add(h, &mut r);
        for (ri, &bi) in r.iter_mut().zip(&self.b_reset) {
            *ri = sigmoid(*ri + bi);
        }

        let reset_h: Vec<f64> = r.iter().zip(h).map(|(&ri, &hi)| ri * hi).collect();

        let mut n = vec![0.0; hd];
        self.w_cand.matvec(x, &mut n);
        self.u_cand.matvec_add(&reset_h, &mut n);
        for (ni, &bi) in n.iter_mut().zip(&self.b_cand) {
            *ni = (*ni + bi).tanh();
        }

        let h_new: Vec<f64> = z
            .iter()
            .zip(&n)
            .zip(h)
            .map(|((&zi, &ni), &hi)| (1.0 - zi) * ni + zi * hi)
            .collect();

        if let Some(c) = cache.take() {
            c.x.clear();
            c.x.extend_from_slice(x);
            c.h_prev.clear();
            c.h_prev.extend_from_slice(h);
            c.z = z;
            c.r = r;
            c.reset_h = reset_h;
            c.n = n;
        }
        GruState(h_new)
    }

    /// Backward pass for one step.
    ///
    /// `d_h_new` is the loss gradient with respect to the step output;
    /// parameter gradients accumulate into `grads`, `d_x` is overwritten and
    /// `d_h_prev` is overwritten with the gradient flowing to the previous
    /// state.
    pub fn backward_step(
        &self,
        cache: &GruStepCache,
        d_h_new: &[f64],
        grads: &mut GruGrads,
        d_x: &mut [f64],
        d_h_prev: &mut [f64],
    ) {
        let hd = self.hidden_dim();
        debug_assert_eq!(d_h_new.len(), hd);
        d_x.iter_mut().for_each(|v| *v = 0.0);
        d_h_prev.iter_mut().for_each(|v| *v = 0.0);

        let (z, r, n, h, rh) = (
            &cache.z,
            &cache.r,
            &cache.n,
            &cache.h_prev,
            &cache.reset_h,
        );

        // h' = (1 - z) ⊙ n + z ⊙ h
        let mut d_a_cand = vec![0.0; hd]; // gradient at candidate pre-activation
        let mut d_a_update = vec![0.0; hd];
        for i in 0..hd {
            let dh = d_h_new[i];
            let d_n = dh * (1.0 - z[i]);
            d_a_cand[i] = d_n * (1.0 - n[i] * n[i]);
            let d_z = dh * (h[i] - n[i]);
            d_a_update[i] = d_z * z[i] * (1.0 - z[i]);
            d_h_prev[i] += dh * z[i];
        }

        // Candidate: a_n = Wn x + Un (r ⊙ h) + bn
        grads.w_cand.add_outer(&d_a_cand, &cache.x);
        grads.u_cand.add_outer(&d_a_cand, rh);
        for (g, &d) in grads.b_cand.iter_mut().zip(&d_a_cand) {
            *g += d;
        }
        self.w_cand.matvec_t_add(&d_a_cand, d_x);
        let mut d_reset_h = vec![0.0; hd];
        self.u_cand.matvec_t_add(&d_a_cand, &mut d_reset_h);

        let mut d_a_reset = vec![0.0; hd];
        for i in 0..hd {
            d_h_prev[i] += d_reset_h[i] * r[i];
            let d_r = d_reset_h[i] * h[i];
            d_a_reset[i] = d_r * r[i] * (1.0 - r[i]);
        }

        // Update gate: a_z = Wz x + Uz h + bz
        grads.w_update.add_outer(&d_a_update, &cache.x);
        grads.u_update.add_outer(&d_a_update, h);
        for (g, &d) in grads.b_update.iter_mut().zip(&d_a_update) {
            *g += d;
        }
        self.w_update.matvec_t_add(&d_a_update, d_x);
        self.u_update.matvec_t_add(&d_a_update, d_h_prev);

        // Reset gate: a_r = Wr x + Ur h + br
        grads.w_reset.add_outer(&d_a_reset, &cache.x);
        grads.u_reset.add_outer(&d_a_reset, h);
        for (g, &d) in grads.b_reset.iter_mut().zip(&d_a_reset) {
            *g += d;
        }
        self.w_reset.matvec_t_add(&d_a_reset, d_x);
        self.u_reset.matvec_t_add(&d_a_reset, d_h_prev);
    }

    pub fn zero_grads(&self) -> GruGrads {
        GruGrads {
            w_update: Matrix::zeros(self.hidden_dim(), self.input_dim()),
            w_reset: Matrix::zeros(self.hidden_dim(), self.input_dim()),
            w_cand: Matrix::zeros(self.hidden_dim(), self.input_dim()),
            u_update: Matrix::zeros(self.hidden_dim(), self.hidden_dim()),
            u_reset: Matrix::zeros(self.hidden_dim(), self.hidden_dim()),
            u_cand: Matrix::zeros(self.hidden_dim(), self.hidden_dim()),
            b_update: vec![0.0; self.hidden_dim()],
            b_reset: vec![0.0; self.hidden_dim()],
            b_cand: vec![0.0; self.hidden_dim()],
        }
    }

    pub fn empty_cache(&self) -> GruStepCache {
        GruStepCache {
            x: Vec::new(),
            h_prev: Vec::new(),
            z: Vec::new(),
            r: Vec::new(),
            reset_h: Vec::new(),
            n: Vec::new(),
        }
    }
}

/// Shape-checked cell evaluation.
pub fn gru_cell_forward(cell: &GruCell, x: &[f64], h_prev: &GruState) -> Result<GruState> {
    cell.check_shapes(x, h_prev)?;
    Ok(cell.forward_internal(x, h_prev, None))
}

/// Masked state update: evaluate the cell when awake (`m = 1`), return the
/// previous state untouched when dormant (`m = 0`). The dormant branch
/// executes no cell arithmetic.
pub fn masked_gru_update(cell: &GruCell, x: &[f64], h_prev: &GruState, m: u8) -> Result<GruState> {
    match m {
        0 => Ok(h_prev.clone()),
        1 => gru_cell_forward(cell, x, h_prev),
        other => Err(EtdError::Input(format!("mask must be 0 or 1, got {other}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;

    #[test]
    fn zero_cell_halves_unit_state() {
        // z = sigmoid(0) = 0.5, n = tanh(0) = 0, h' = z·h.
        let cell = GruCell::zeros(3, 4);
        let h = GruState(vec![1.0; 4]);
        let out = gru_cell_forward(&cell, &[0.2, -0.4, 1.0], &h).unwrap();
        for v in &out.0 {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_state_is_fixed_point_of_zero_cell() {
        let cell = GruCell::zeros(2, 3);
        let h = GruState::zeros(3);
        let out = gru_cell_forward(&cell, &[5.0, -5.0], &h).unwrap();
        assert_eq!(out.0, vec![0.0; 3]);
    }

    /// Independent scalar-loop evaluation of the documented gate equations.
    fn scalar_oracle(cell: &GruCell, x: &[f64], h: &[f64]) -> Vec<f64> {
        let hd = cell.hidden_dim();
        let mut out = vec![0.0; hd];
        for i in 0..hd {
            let mut az = cell.b_update[i];
            let mut ar = cell.b_reset[i];
            for (j, &xj) in x.iter().enumerate() {
                az += cell.w_update.get(i, j) * xj;
                ar += cell.w_reset.get(i, j) * xj;
            }
            for (j, &hj) in h.iter().enumerate() {
                az += cell.u_update.get(i, j) * hj;
                ar += cell.u_reset.get(i, j) * hj;
            }
            let z = 1.0 / (1.0 + (-az).exp());
            let r = 1.0 / (1.0 + (-ar).exp());
            let _ = r;
            let mut an = cell.b_cand[i];
            for (j, &xj) in x.iter().enumerate() {
                an += cell.w_cand.get(i, j) * xj;
            }
            for (j, &hj) in h.iter().enumerate() {
                // reset gate of coordinate j
                let mut arj = cell.b_reset[j];
                for (k, &xk) in x.iter().enumerate() {
                    arj += cell.w_reset.get(j, k) * xk;
                }
                for (k, &hk) in h.iter().enumerate() {
                    arj += cell.u_reset.get(j, k) * hk;
                }
                let rj = 1.0 / (1.0 + (-arj).exp());
                an += cell.u_cand.get(i, j) * (rj * hj);
            }
            let n = an.tanh();
            out[i] = (1.0 - z) * n + z * h[i];
        }
        out
    }

    #[test]
    fn random_cell_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let cell = GruCell::orthogonal(3, 5, 1.0, &mut rng);
        let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h = GruState((0..5).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let got = gru_cell_forward(&cell, &x, &h).unwrap();
        let want = scalar_oracle(&cell, &x, &h.0);
        for (g, w) in got.0.iter().zip(&want) {
            assert!((g - w).abs() < 1e-9, "got {g}, oracle {w}");
        }
    }

    #[test]
    fn masked_update_preserves_or_advances() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let cell = GruCell::orthogonal(2, 4, 1.0, &mut rng);
        let x = [0.5, -0.25];
        let h = GruState(vec![0.1, -0.2, 0.3, -0.4]);
        let dormant = masked_gru_update(&cell, &x, &h, 0).unwrap();
        assert_eq!(dormant, h);
        assert_eq!(dormant.state_hash(), h.state_hash());
        let awake = masked_gru_update(&cell, &x, &h, 1).unwrap();
        assert_eq!(awake, gru_cell_forward(&cell, &x, &h).unwrap());
    }

    #[test]
    fn mask_sequence_freezes_state_between_awake_frames() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let cell = GruCell::orthogonal(2, 4, 1.0, &mut rng);
        let masks = [1u8, 0, 0, 1];
        let inputs: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let mut h = GruState::zeros(4);
        let mut states = Vec::new();
        for (m, x) in masks.iter().zip(&inputs) {
            h = masked_gru_update(&cell, x, &h, *m).unwrap();
            states.push(h.clone());
        }
        assert_eq!(states[1], states[0]);
        assert_eq!(states[2], states[0]);
        assert_ne!(states[3], states[0]);
    }

    #[test]
    fn shape_errors_are_reported() {
        let cell = GruCell::zeros(3, 4);
        let h = GruState::zeros(4);
        assert!(gru_cell_forward(&cell, &[1.0, 2.0], &h).is_err());
        let h_bad = GruState::zeros(5);
        assert!(gru_cell_forward(&cell, &[1.0, 2.0, 3.0], &h_bad).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let cell = GruCell::orthogonal(2, 3, 1.0, &mut rng);
        let x = vec![0.4, -0.9];
        let h = GruState(vec![0.3, 0.1, -0.5]);

        let mut cache = cell.empty_cache();
        let _ = cell.forward_internal(&x, &h, Some(&mut cache));
        let mut grads = cell.zero_grads();
        let mut d_x = vec![0.0; 2];
        let mut d_h = vec![0.0; 3];
        // Loss: sum of new hidden state entries.
        cell.backward_step(&cache, &[1.0, 1.0, 1.0], &mut grads, &mut d_x, &mut d_h);

        let loss = |c: &GruCell| -> f64 {
            c.forward_internal(&x, &h, None).0.iter().sum()
        };
        let eps = 1e-6;
        let check = |analytic: f64, fd: f64| {
            assert!(
                (analytic - fd).abs() <= 1e-6 * (1.0 + fd.abs()),
                "analytic {analytic} vs fd {fd}"
            );
        };
        // Spot check one entry of each parameter block.
        let blocks: Vec<(&str, Box<dyn Fn(&mut GruCell) -> &mut f64>)> = vec![
            ("w_update", Box::new(|c: &mut GruCell| &mut c.w_update.data_mut()[1])),
            ("w_reset", Box::new(|c: &mut GruCell| &mut c.w_reset.data_mut()[3])),
            ("w_cand", Box::new(|c: &mut GruCell| &mut c.w_cand.data_mut()[0])),
            ("u_update", Box::new(|c: &mut GruCell| &mut c.u_update.data_mut()[4])),
            ("u_reset", Box::new(|c: &mut GruCell| &mut c.u_reset.data_mut()[7])),
            ("u_cand", Box::new(|c: &mut GruCell| &mut c.u_cand.data_mut()[2])),
            ("b_update", Box::new(|c: &mut GruCell| &mut c.b_update[0])),
            ("b_reset", Box::new(|c: &mut GruCell| &mut c.b_reset[1])),
            ("b_cand", Box::new(|c: &mut GruCell| &mut c.b_cand[2])),
        ];
        let analytic: Vec<f64> = vec![
            grads.w_update.data()[1],
            grads.w_reset.data()[3],
            grads.w_cand.data()[0],
            grads.u_update.data()[4],
            grads.u_reset.data()[7],
            grads.u_cand.data()[2],
            grads.b_update[0],
            grads.b_reset[1],
            grads.b_cand[2],
        ];
        for ((_, access), a) in blocks.into_iter().zip(analytic) {
            let mut cp = cell.clone();
            *access(&mut cp) += eps;
            let up = loss(&cp);
            let mut cm = cell.clone();
            *access(&mut cm) -= eps;
            let down = loss(&cm);
            check(a, (up - down) / (2.0 * eps));
        }
    }
}

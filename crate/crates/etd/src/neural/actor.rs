//! Recurrent actor: MLP trunk, GRU core, categorical policy head.

use rand_chacha::ChaCha8Rng;

use super::dense::{Dense, DenseGrads};
use super::gru::{GruCell, GruGrads, GruState, GruStepCache};
use super::matrix::Matrix;
use super::{Activation, GAIN_HIDDEN, GAIN_POLICY, GRU_HIDDEN, MLP_DEPTH, MLP_WIDTH};
use crate::error::{EtdError, Result};

/// Categorical policy output for one agent at one frame.
#[derive(Debug, Clone)]
pub struct PolicyOutput {
    pub probs: Vec<f64>,
    pub log_probs: Vec<f64>,
    /// Shannon entropy of the distribution, in nats.
    pub entropy: f64,
}

impl PolicyOutput {
    pub fn num_actions(&self) -> usize {
        self.probs.len()
    }

    /// Index of the most probable action (ties resolve to the lowest index).
    pub fn greedy_action(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Clone)]
pub struct ActorNet {
    pub mlp: Vec<Dense>,
    pub gru: GruCell,
    pub head: Dense,
}

/// Per-step intermediates recorded by the training forward pass.
#[derive(Debug, Clone)]
pub struct ActorStep {
    obs: Vec<f64>,
    mlp_outs: Vec<Vec<f64>>,
    gru_cache: GruStepCache,
    gru_out: Vec<f64>,
    logits: Vec<f64>,
}

/// Recorded forward trajectory of one agent over the awake frames of one
/// episode. Dormant frames never enter the tape: the hidden state chains
/// directly from one awake frame to the next, which is exactly the
/// pass-through connection the masked update defines.
#[derive(Debug, Clone, Default)]
pub struct ActorTape {
    steps: Vec<ActorStep>,
}

impl ActorTape {
    pub fn clear(&mut self) {
        self.steps.clear();
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Parameter gradients, same layout as [`ActorNet`].
#[derive(Debug, Clone)]
pub struct ActorGrads {
    pub mlp: Vec<DenseGrads>,
    pub gru: GruGrads,
    pub head: DenseGrads,
}

impl ActorNet {
    /// Builds the reference architecture: three tanh layers of width 64, a
    /// GRU with 128 hidden units, and a linear policy head.
    pub fn table_default(obs_dim: usize, n_actions: usize, rng: &mut ChaCha8Rng) -> Self {
        Self::with_dims(obs_dim, n_actions, &[MLP_WIDTH; MLP_DEPTH], GRU_HIDDEN, rng)
    }

    /// Builds an arbitrary-width variant; the gradient checks use tiny nets.
    pub fn with_dims(
        obs_dim: usize,
        n_actions: usize,
        mlp_widths: &[usize],
        gru_hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(!mlp_widths.is_empty() && n_actions >= 1);
        let mut mlp = Vec::with_capacity(mlp_widths.len());
        let mut in_dim = obs_dim;
        for &w in mlp_widths {
            mlp.push(Dense::orthogonal(in_dim, w, GAIN_HIDDEN, Activation::Tanh, rng));
            in_dim = w;
        }
        let gru = GruCell::orthogonal(in_dim, gru_hidden, GAIN_HIDDEN, rng);
        let head = Dense::orthogonal(gru_hidden, n_actions, GAIN_POLICY, Activation::Linear, rng);
        ActorNet { mlp, gru, head }
    }

    pub fn obs_dim(&self) -> usize {
        self.mlp[0].in_dim()
    }

    pub fn n_actions(&self) -> usize {
        self.head.out_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.gru.hidden_dim()
    }

    pub fn initial_state(&self) -> GruState {
        GruState::zeros(self.gru.hidden_dim())
    }

    fn check_obs(&self, obs: &[f64]) -> Result<()> {
        if obs.len() != self.obs_dim() {
            return Err(EtdError::Shape {
                context: "actor_forward",
                expected: self.obs_dim(),
                actual: obs.len(),
            });
        }
        if !obs.iter().all(|v| v.is_finite()) {
            return Err(EtdError::Input("actor observation contains non-finite values".into()));
        }
        Ok(())
    }

    /// Inference pass: policy distribution plus advanced hidden state.
    pub fn forward(&self, obs: &[f64], h: &GruState) -> Result<(PolicyOutput, GruState)> {
        self.check_obs(obs)?;
        if h.len() != self.gru.hidden_dim() {
            return Err(EtdError::Shape {
                context: "actor_forward hidden",
                expected: self.gru.hidden_dim(),
                actual: h.len(),
            });
        }
        let mut x = obs.to_vec();
        for layer in &self.mlp {
            let mut y = vec![0.0; layer.out_dim()];
            layer.forward_into(&x, &mut y);
            x = y;
        }
        let h_new = self.gru.forward_internal(&x, h, None);
        let mut logits = vec![0.0; self.head.out_dim()];
        self.head.forward_into(&h_new.0, &mut logits);
        Ok((policy_from_logits(&logits), h_new))
    }

    /// Training pass: identical arithmetic to [`ActorNet::forward`] but
    /// records intermediates on the tape.
    pub fn forward_train(
        &self,
        obs: &[f64],
        h: &GruState,
        tape: &mut ActorTape,
    ) -> Result<(PolicyOutput, GruState)> {
        self.check_obs(obs)?;
        let mut x = obs.to_vec();
        let mut mlp_outs = Vec::with_capacity(self.mlp.len());
        for layer in &self.mlp {
            let mut y = vec![0.0; layer.out_dim()];
            layer.forward_into(&x, &mut y);
            mlp_outs.push(y.clone());
            x = y;
        }
        let mut gru_cache = self.gru.empty_cache();
        let h_new = self.gru.forward_internal(&x, h, Some(&mut gru_cache));
        let mut logits = vec![0.0; self.head.out_dim()];
        self.head.forward_into(&h_new.0, &mut logits);
        let out = policy_from_logits(&logits);
        tape.steps.push(ActorStep {
            obs: obs.to_vec(),
            mlp_outs,
            gru_cache,
            gru_out: h_new.0.clone(),
            logits,
        });
        Ok((out, h_new))
    }

    /// Backpropagation through time over a recorded tape.
    ///
    /// `d_logits[k]` is the loss gradient at the policy logits of awake step
    /// `k`. Gradients flow backward through the recurrent chain exactly over
    /// the taped steps; preserved states across dormant gaps contribute
    /// identity connections and therefore need no computation.
    pub fn backward(&self, tape: &ActorTape, d_logits: &[Vec<f64>]) -> Result<ActorGrads> {
        if tape.steps.is_empty() {
            return Err(EtdError::Usage("actor backward without recorded forward".into()));
        }
        if d_logits.len() != tape.steps.len() {
            return Err(EtdError::Shape {
                context: "actor backward upstream",
                expected: tape.steps.len(),
                actual: d_logits.len(),
            });
        }
        let mut grads = self.zero_grads();
        let hd = self.gru.hidden_dim();
        let mut d_h_chain = vec![0.0; hd];
        let mut d_h_prev = vec![0.0; hd];
        let mut d_gru_x = vec![0.0; self.gru.input_dim()];
        let mut scratch = Vec::new();
        for (step, d_l) in tape.steps.iter().zip(d_logits).rev() {
            // Head contribution accumulates onto the chained state gradient.
            self.head.backward(
                &step.gru_out,
                &step.logits,
                d_l,
                &mut grads.head,
                &mut d_h_chain,
                &mut scratch,
            );
            self.gru.backward_step(
                &step.gru_cache,
                &d_h_chain,
                &mut grads.gru,
                &mut d_gru_x,
                &mut d_h_prev,
            );
            std::mem::swap(&mut d_h_chain, &mut d_h_prev);
            // MLP chain, deepest layer first.
            let mut d_upper = d_gru_x.clone();
            for (i, layer) in self.mlp.iter().enumerate().rev() {
                let input = if i == 0 { &step.obs } else { &step.mlp_outs[i - 1] };
                let mut d_lower = vec![0.0; layer.in_dim()];
                layer.backward(
                    input,
                    &step.mlp_outs[i],
                    &d_upper,
                    &mut grads.mlp[i],
                    &mut d_lower,
                    &mut scratch,
                );
                d_upper = d_lower;
            }
        }
        Ok(grads)
    }

    pub fn zero_grads(&self) -> ActorGrads {
        ActorGrads {
            mlp: self.mlp.iter().map(Dense::zero_grads).collect(),
            gru: self.gru.zero_grads(),
            head: self.head.zero_grads(),
        }
    }

    /// All parameter buffers in canonical order; gradients iterate in the
    /// same order so the optimizer can zip them.
    pub fn param_buffers_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out: Vec<&mut Vec<f64>> = Vec::new();
        for layer in &mut self.mlp {
            out.push(layer.w.data_mut());
            out.push(&mut layer.b);
        }
        out.push(self.gru.w_update.data_mut());
        out.push(self.gru.w_reset.data_mut());
        out.push(self.gru.w_cand.data_mut());
        out.push(self.gru.u_update.data_mut());
        out.push(self.gru.u_reset.data_mut());
        out.push(self.gru.u_cand.data_mut());
        out.push(&mut self.gru.b_update);
        out.push(&mut self.gru.b_reset);
        out.push(&mut self.gru.b_cand);
        out.push(self.head.w.data_mut());
        out.push(&mut self.head.b);
        out
    }

    pub fn named_buffers(&self) -> Vec<(String, &[f64], (usize, usize))> {
        let mut out: Vec<(String, &[f64], (usize, usize))> = Vec::new();
        let mat = |m: &'_ Matrix| (m.rows(), m.cols());
        for (i, layer) in self.mlp.iter().enumerate() {
            out.push((format!("mlp.{i}.w"), layer.w.data(), mat(&layer.w)));
            out.push((format!("mlp.{i}.b"), &layer.b, (1, layer.b.len())));
        }
        out.push(("gru.w_update".into(), self.gru.w_update.data(), mat(&self.gru.w_update)));
        out.push(("gru.w_reset".into(), self.gru.w_reset.data(), mat(&self.gru.w_reset)));
        out.push(("gru.w_cand".into(), self.gru.w_cand.data(), mat(&self.gru.w_cand)));
        out.push(("gru.u_update".into(), self.gru.u_update.data(), mat(&self.gru.u_update)));
        out.push(("gru.u_reset".into(), self.gru.u_reset.data(), mat(&self.gru.u_reset)));
        out.push(("gru.u_cand".into(), self.gru.u_cand.data(), mat(&self.gru.u_cand)));
        out.push(("gru.b_update".into(), &self.gru.b_update, (1, self.gru.b_update.len())));
        out.push(("gru.b_reset".into(), &self.gru.b_reset, (1, self.gru.b_reset.len())));
        out.push(("gru.b_cand".into(), &self.gru.b_cand, (1, self.gru.b_cand.len())));
        out.push(("head.w".into(), self.head.w.data(), mat(&self.head.w)));
        out.push(("head.b".into(), &self.head.b, (1, self.head.b.len())));
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_buffers().iter().map(|(_, b, _)| b.len()).sum()
    }
}

impl ActorGrads {
    pub fn buffers(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for g in &self.mlp {
            out.push(g.w.data());
            out.push(&g.b);
        }
        out.push(self.gru.w_update.data());
        out.push(self.gru.w_reset.data());
        out.push(self.gru.w_cand.data());
        out.push(self.gru.u_update.data());
        out.push(self.gru.u_reset.data());
        out.push(self.gru.u_cand.data());
        out.push(&self.gru.b_update);
        out.push(&self.gru.b_reset);
        out.push(&self.gru.b_cand);
        out.push(self.head.w.data());
        out.push(&self.head.b);
        out
    }

    /// Accumulates another gradient set (same architecture) into this one.
    pub fn add(&mut self, other: &ActorGrads) {
        for (a, b) in self.buffers_mut().into_iter().zip(other.buffers()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for buf in self.buffers_mut() {
            for x in buf.iter_mut() {
                *x *= s;
            }
        }
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out: Vec<&mut Vec<f64>> = Vec::new();
        for g in &mut self.mlp {
            out.push(g.w.data_mut());
            out.push(&mut g.b);
        }
        out.push(self.gru.w_update.data_mut());
        out.push(self.gru.w_reset.data_mut());
        out.push(self.gru.w_cand.data_mut());
        out.push(self.gru.u_update.data_mut());
        out.push(self.gru.u_reset.data_mut());
        out.push(self.gru.u_cand.data_mut());
        out.push(&mut self.gru.b_update);
        out.push(&mut self.gru.b_reset);
        out.push(&mut self.gru.b_cand);
        out.push(self.head.w.data_mut());
        out.push(&mut self.head.b);
        out
    }
}

/// Numerically stable softmax with log-probabilities and entropy.
pub(crate) fn policy_from_logits(logits: &[f64]) -> PolicyOutput {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    let shifted: Vec<f64> = logits
        .iter()
        .map(|&l| {
            let e = (l - max).exp();
            sum += e;
            l - max
        })
        .collect();
    let log_sum = sum.ln();
    let log_probs: Vec<f64> = shifted.iter().map(|&s| s - log_sum).collect();
    let probs: Vec<f64> = log_probs.iter().map(|&lp| lp.exp()).collect();
    let entropy = -probs
        .iter()
        .zip(&log_probs)
        .filter(|(&p, _)| p > 0.0)
        .map(|(&p, &lp)| p * lp)
        .sum::<f64>();
    PolicyOutput {
        probs,
        log_probs,
        entropy,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;

    #[test]
    fn zero_policy_head_gives_uniform_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut actor = ActorNet::with_dims(3, 4, &[5], 6, &mut rng);
        actor.head = Dense::zeros(6, 4, Activation::Linear);
        let (out, _) = actor.forward(&[0.1, 0.2, 0.3], &actor.initial_state()).unwrap();
        for &p in &out.probs {
            assert!((p - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn probabilities_sum_to_one_for_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let actor = ActorNet::with_dims(4, 5, &[6, 6], 7, &mut rng);
        let mut h = actor.initial_state();
        for _ in 0..20 {
            let obs: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let (out, h_new) = actor.forward(&obs, &h).unwrap();
            let sum: f64 = out.probs.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-9);
            assert!(out.probs.iter().all(|&p| p > 0.0));
            h = h_new;
        }
    }

    #[test]
    fn softmax_hand_example() {
        let out = policy_from_logits(&[2.0, 0.0, 0.0]);
        assert!((out.probs[0] - 0.7870).abs() < 5e-5);
        assert!((out.probs[1] - 0.1065).abs() < 5e-5);
        assert!((out.probs[2] - 0.1065).abs() < 5e-5);
    }

    #[test]
    fn non_finite_observation_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let actor = ActorNet::with_dims(2, 3, &[4], 4, &mut rng);
        let err = actor.forward(&[f64::NAN, 0.0], &actor.initial_state());
        assert!(matches!(err, Err(EtdError::Input(_))));
    }

    #[test]
    fn backward_without_forward_is_a_usage_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let actor = ActorNet::with_dims(2, 3, &[4], 4, &mut rng);
        let tape = ActorTape::default();
        assert!(matches!(
            actor.backward(&tape, &[]),
            Err(EtdError::Usage(_))
        ));
    }

    #[test]
    fn constant_loss_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let actor = ActorNet::with_dims(2, 3, &[4], 4, &mut rng);
        let mut tape = ActorTape::default();
        let h = actor.initial_state();
        let (_, h1) = actor.forward_train(&[0.5, -0.5], &h, &mut tape).unwrap();
        let _ = actor.forward_train(&[0.1, 0.9], &h1, &mut tape).unwrap();
        let zero_upstream = vec![vec![0.0; 3]; 2];
        let grads = actor.backward(&tape, &zero_upstream).unwrap();
        for buf in grads.buffers() {
            assert!(buf.iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn train_and_inference_forwards_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        let actor = ActorNet::with_dims(3, 4, &[5, 5], 6, &mut rng);
        let h = actor.initial_state();
        let obs = [0.3, -0.3, 0.9];
        let (a, ha) = actor.forward(&obs, &h).unwrap();
        let mut tape = ActorTape::default();
        let (b, hb) = actor.forward_train(&obs, &h, &mut tape).unwrap();
        assert_eq!(a.probs, b.probs);
        assert_eq!(ha, hb);
    }

    #[test]
    fn gradients_match_finite_differences_through_time() {
        // Loss: sum over steps of log-prob of a fixed action.
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let actor = ActorNet::with_dims(2, 3, &[3], 4, &mut rng);
        let observations = [vec![0.2, -0.4], vec![0.7, 0.1], vec![-0.3, 0.5]];
        let actions = [1usize, 0, 2];

        let run = |net: &ActorNet| -> (f64, Vec<Vec<f64>>, ActorTape) {
            let mut tape = ActorTape::default();
            let mut h = net.initial_state();
            let mut loss = 0.0;
            let mut upstream = Vec::new();
            for (obs, &a) in observations.iter().zip(&actions) {
                let (out, h_new) = net.forward_train(obs, &h, &mut tape).unwrap();
                loss += out.log_probs[a];
                // d log p_a / d logit_j = 1[j==a] - p_j
                let mut d = vec![0.0; 3];
                for (j, dj) in d.iter_mut().enumerate() {
                    *dj = if j == a { 1.0 - out.probs[j] } else { -out.probs[j] };
                }
                upstream.push(d);
                h = h_new;
            }
            (loss, upstream, tape)
        };

        let (_, upstream, tape) = run(&actor);
        let grads = actor.backward(&tape, &upstream).unwrap();
        let analytic: Vec<f64> = grads.buffers().iter().flat_map(|b| b.iter().cloned()).collect();

        let eps = 1e-6;
        let mut idx = 0;
        let mut net = actor.clone();
        let n_bufs = net.param_buffers_mut().len();
        for buf_i in 0..n_bufs {
            let len = net.param_buffers_mut()[buf_i].len();
            for k in 0..len {
                let orig = net.param_buffers_mut()[buf_i][k];
                net.param_buffers_mut()[buf_i][k] = orig + eps;
                let up = run(&net).0;
                net.param_buffers_mut()[buf_i][k] = orig - eps;
                let down = run(&net).0;
                net.param_buffers_mut()[buf_i][k] = orig;
                let fd = (up - down) / (2.0 * eps);
                let a = analytic[idx];
                assert!(
                    (a - fd).abs() <= 1e-5 * (1.0 + fd.abs()),
                    "buffer {buf_i} entry {k}: analytic {a} vs fd {fd}"
                );
                idx += 1;
            }
        }
    }
}

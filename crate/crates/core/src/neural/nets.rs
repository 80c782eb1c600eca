//! The actor-critic network pair and the small dense trunks the baseline
//! learners share.
//!
//! The policy network runs the state through a 32-unit gated recurrent
//! layer, two 48-unit rectifier layers and a logistic output per action.
//! The critic consumes the state concatenated with an action vector through
//! two 48-unit rectifier layers into a single linear output.

use rand::Rng;

use super::layers::{Act, Dense, DenseGrad, Gru, GruGrad, GruTape, NeuralError, ParamBlocks};

pub const GRU_UNITS: usize = 32;
pub const DENSE_UNITS: usize = 48;

#[derive(Debug, Clone)]
pub struct PolicyNet {
    pub gru: Gru,
    pub fc1: Dense,
    pub fc2: Dense,
    pub out: Dense,
}

#[derive(Debug, Clone)]
pub struct PolicyTape {
    gru: GruTape,
    h_new: Vec<f64>,
    a1: Vec<f64>,
    a2: Vec<f64>,
    scores: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct PolicyGrads {
    pub gru: GruGrad,
    pub fc1: DenseGrad,
    pub fc2: DenseGrad,
    pub out: DenseGrad,
}

impl PolicyNet {
    pub fn new(state_dim: usize, action_dim: usize, rng: &mut impl Rng) -> Self {
        PolicyNet {
            gru: Gru::new(state_dim, GRU_UNITS, rng),
            fc1: Dense::new(GRU_UNITS, DENSE_UNITS, rng),
            fc2: Dense::new(DENSE_UNITS, DENSE_UNITS, rng),
            out: Dense::new(DENSE_UNITS, action_dim, rng),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.gru.in_dim
    }

    pub fn action_dim(&self) -> usize {
        self.out.out_dim
    }

    pub fn zero_hidden(&self) -> Vec<f64> {
        vec![0.0; self.gru.hidden_dim]
    }

    /// Action scores in (0,1) plus the updated recurrent hidden state.
    pub fn forward(
        &self,
        state: &[f64],
        hidden: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>), NeuralError> {
        let (scores, h, _) = self.forward_inner(state, hidden, false)?;
        Ok((scores, h))
    }

    /// Forward pass that records the tape needed by [`PolicyNet::backward`].
    pub fn forward_tape(
        &self,
        state: &[f64],
        hidden: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>, PolicyTape), NeuralError> {
        let (scores, h, tape) = self.forward_inner(state, hidden, true)?;
        Ok((scores, h, tape.expect("tape recorded")))
    }

    fn forward_inner(
        &self,
        state: &[f64],
        hidden: &[f64],
        record: bool,
    ) -> Result<(Vec<f64>, Vec<f64>, Option<PolicyTape>), NeuralError> {
        if state.len() != self.gru.in_dim {
            return Err(NeuralError::ShapeMismatch { expected: self.gru.in_dim, got: state.len() });
        }
        if hidden.len() != self.gru.hidden_dim {
            return Err(NeuralError::ShapeMismatch {
                expected: self.gru.hidden_dim,
                got: hidden.len(),
            });
        }
        let mut gru_tape = GruTape {
            x: Vec::new(),
            h: Vec::new(),
            z: Vec::new(),
            r: Vec::new(),
            n: Vec::new(),
        };
        let mut h_new = Vec::new();
        self.gru.forward(state, hidden, &mut h_new, record.then_some(&mut gru_tape));

        let mut a1 = Vec::new();
        self.fc1.forward(&h_new, &mut a1);
        a1.iter_mut().for_each(|v| *v = Act::Relu.apply(*v));
        let mut a2 = Vec::new();
        self.fc2.forward(&a1, &mut a2);
        a2.iter_mut().for_each(|v| *v = Act::Relu.apply(*v));
        let mut scores = Vec::new();
        self.out.forward(&a2, &mut scores);
        scores.iter_mut().for_each(|v| *v = Act::Sigmoid.apply(*v));

        let tape = record.then(|| PolicyTape {
            gru: gru_tape,
            h_new: h_new.clone(),
            a1: a1.clone(),
            a2: a2.clone(),
            scores: scores.clone(),
        });
        Ok((scores, h_new, tape))
    }

    /// Parameter gradients for an upstream score gradient. The recurrent
    /// input hidden state is treated as a constant.
    pub fn backward(&self, tape: &PolicyTape, dscores: &[f64], grads: &mut PolicyGrads) {
        let dout_pre: Vec<f64> = dscores
            .iter()
            .zip(&tape.scores)
            .map(|(g, y)| g * Act::Sigmoid.derive_from_output(*y))
            .collect();
        let mut da2 = vec![0.0; self.fc2.out_dim];
        self.out.backward(&tape.a2, &dout_pre, &mut grads.out, Some(&mut da2));
        let da2_pre: Vec<f64> = da2
            .iter()
            .zip(&tape.a2)
            .map(|(g, y)| g * Act::Relu.derive_from_output(*y))
            .collect();
        let mut da1 = vec![0.0; self.fc1.out_dim];
        self.fc2.backward(&tape.a1, &da2_pre, &mut grads.fc2, Some(&mut da1));
        let da1_pre: Vec<f64> = da1
            .iter()
            .zip(&tape.a1)
            .map(|(g, y)| g * Act::Relu.derive_from_output(*y))
            .collect();
        let mut dh = vec![0.0; self.gru.hidden_dim];
        self.fc1.backward(&tape.h_new, &da1_pre, &mut grads.fc1, Some(&mut dh));
        self.gru.backward(&tape.gru, &dh, &mut grads.gru);
    }

    pub fn grad_zeros(&self) -> PolicyGrads {
        PolicyGrads {
            gru: self.gru.grad_zeros(),
            fc1: DenseGrad::zeros_like(&self.fc1),
            fc2: DenseGrad::zeros_like(&self.fc2),
            out: DenseGrad::zeros_like(&self.out),
        }
    }
}

impl ParamBlocks for PolicyNet {
    fn blocks(&self) -> Vec<&[f64]> {
        let mut v = self.gru.blocks();
        v.extend(self.fc1.blocks());
        v.extend(self.fc2.blocks());
        v.extend(self.out.blocks());
        v
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.gru.blocks_mut();
        v.extend(self.fc1.blocks_mut());
        v.extend(self.fc2.blocks_mut());
        v.extend(self.out.blocks_mut());
        v
    }
}

impl ParamBlocks for PolicyGrads {
    fn blocks(&self) -> Vec<&[f64]> {
        let mut v = self.gru.blocks();
        v.extend(self.fc1.blocks());
        v.extend(self.fc2.blocks());
        v.extend(self.out.blocks());
        v
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.gru.blocks_mut();
        v.extend(self.fc1.blocks_mut());
        v.extend(self.fc2.blocks_mut());
        v.extend(self.out.blocks_mut());
        v
    }
}

/// Dense trunk with rectifier hidden layers; used for the critic, the
/// baseline Q and value networks, and the advantage-actor policy head.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub out_act: Act,
}

#[derive(Debug, Clone)]
pub struct MlpTape {
    /// Input followed by each layer's activated output.
    acts: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub layers: Vec<DenseGrad>,
}

impl Mlp {
    /// `dims` runs input to output, e.g. `[765, 48, 48, 1]`.
    pub fn new(dims: &[usize], out_act: Act, rng: &mut impl Rng) -> Self {
        assert!(dims.len() >= 2);
        let layers = dims.windows(2).map(|w| Dense::new(w[0], w[1], rng)).collect();
        Mlp { layers, out_act }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NeuralError> {
        let (y, _) = self.forward_inner(x, false)?;
        Ok(y)
    }

    pub fn forward_tape(&self, x: &[f64]) -> Result<(Vec<f64>, MlpTape), NeuralError> {
        let (y, tape) = self.forward_inner(x, true)?;
        Ok((y, tape.expect("tape recorded")))
    }

    fn forward_inner(
        &self,
        x: &[f64],
        record: bool,
    ) -> Result<(Vec<f64>, Option<MlpTape>), NeuralError> {
        if x.len() != self.in_dim() {
            return Err(NeuralError::ShapeMismatch { expected: self.in_dim(), got: x.len() });
        }
        let mut acts: Vec<Vec<f64>> = vec![x.to_vec()];
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let act = if k == last { self.out_act } else { Act::Relu };
            let mut z = Vec::new();
            layer.forward(acts.last().expect("input pushed"), &mut z);
            z.iter_mut().for_each(|v| *v = act.apply(*v));
            acts.push(z);
        }
        let y = acts.last().cloned().expect("output pushed");
        let tape = record.then_some(MlpTape { acts });
        Ok((y, tape))
    }

    /// Parameter gradients plus the gradient with respect to the input,
    /// which the deterministic policy update reads off the action slice.
    pub fn backward(&self, tape: &MlpTape, dout: &[f64], grads: &mut MlpGrads) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut upstream = dout.to_vec();
        for k in (0..self.layers.len()).rev() {
            let act = if k == last { self.out_act } else { Act::Relu };
            let y = &tape.acts[k + 1];
            let dz: Vec<f64> = upstream
                .iter()
                .zip(y)
                .map(|(g, yv)| g * act.derive_from_output(*yv))
                .collect();
            let mut dx = vec![0.0; self.layers[k].in_dim];
            self.layers[k].backward(&tape.acts[k], &dz, &mut grads.layers[k], Some(&mut dx));
            upstream = dx;
        }
        upstream
    }

    pub fn grad_zeros(&self) -> MlpGrads {
        MlpGrads { layers: self.layers.iter().map(DenseGrad::zeros_like).collect() }
    }
}

impl ParamBlocks for Mlp {
    fn blocks(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| l.blocks()).collect()
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(|l| l.blocks_mut()).collect()
    }
}

impl ParamBlocks for MlpGrads {
    fn blocks(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| l.blocks()).collect()
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(|l| l.blocks_mut()).collect()
    }
}

/// A critic over concatenated state and action vectors with scalar output.
pub fn critic_net(state_dim: usize, action_dim: usize, rng: &mut impl Rng) -> Mlp {
    Mlp::new(&[state_dim + action_dim, DENSE_UNITS, DENSE_UNITS, 1], Act::Linear, rng)
}

/// Mean squared error between targets and critic outputs over a batch of
/// state-action inputs.
pub fn critic_loss(critic: &Mlp, inputs: &[Vec<f64>], targets: &[f64]) -> Result<f64, NeuralError> {
    if inputs.is_empty() || inputs.len() != targets.len() {
        return Err(NeuralError::EmptyBatch);
    }
    let mut acc = 0.0;
    for (x, y) in inputs.iter().zip(targets) {
        let q = critic.forward(x)?[0];
        let d = y - q;
        acc += d * d;
    }
    Ok(acc / inputs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::layers::sigmoid;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn uniform_vec(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(lo..hi)).collect()
    }

    #[test]
    fn zero_weights_give_half_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = PolicyNet::new(6, 4, &mut rng);
        for block in net.blocks_mut() {
            block.iter_mut().for_each(|v| *v = 0.0);
        }
        let state = vec![0.3; 6];
        let (scores, hidden) = net.forward(&state, &net.zero_hidden()).unwrap();
        assert!(scores.iter().all(|&s| (s - 0.5).abs() < 1e-15));
        assert!(hidden.iter().all(|&h| h == 0.0));
    }

    #[test]
    fn forward_is_deterministic_per_seed() {
        let state = uniform_vec(&mut ChaCha8Rng::seed_from_u64(2), 9, 0.0, 1.0);
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            let net = PolicyNet::new(9, 5, &mut rng);
            net.forward(&state, &net.zero_hidden()).unwrap()
        };
        let (a, ha) = run();
        let (b, hb) = run();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
    }

    #[test]
    fn forward_rejects_dimension_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = PolicyNet::new(6, 4, &mut rng);
        assert!(net.forward(&[0.0; 5], &net.zero_hidden()).is_err());
        assert!(net.forward(&[0.0; 6], &[0.0; 7]).is_err());
    }

    /// Second, independent implementation of the same recurrence and dense
    /// equations, written with naive indexing.
    fn reference_policy_forward(net: &PolicyNet, x: &[f64], h: &[f64]) -> Vec<f64> {
        let d = net.gru.hidden_dim;
        let matvec = |w: &[f64], b: Option<&[f64]>, x: &[f64], rows: usize, cols: usize| {
            (0..rows)
                .map(|o| {
                    let mut acc = b.map(|b| b[o]).unwrap_or(0.0);
                    for i in 0..cols {
                        acc += w[o * cols + i] * x[i];
                    }
                    acc
                })
                .collect::<Vec<f64>>()
        };
        let zx = matvec(&net.gru.wz.w, Some(&net.gru.wz.b), x, d, net.gru.in_dim);
        let zh = matvec(&net.gru.uz, None, h, d, d);
        let z: Vec<f64> = (0..d).map(|i| sigmoid(zx[i] + zh[i])).collect();
        let rx = matvec(&net.gru.wr.w, Some(&net.gru.wr.b), x, d, net.gru.in_dim);
        let rh = matvec(&net.gru.ur, None, h, d, d);
        let r: Vec<f64> = (0..d).map(|i| sigmoid(rx[i] + rh[i])).collect();
        let rhh: Vec<f64> = (0..d).map(|i| r[i] * h[i]).collect();
        let nx = matvec(&net.gru.wn.w, Some(&net.gru.wn.b), x, d, net.gru.in_dim);
        let nh = matvec(&net.gru.un, None, &rhh, d, d);
        let n: Vec<f64> = (0..d).map(|i| (nx[i] + nh[i]).tanh()).collect();
        let hnew: Vec<f64> = (0..d).map(|i| (1.0 - z[i]) * h[i] + z[i] * n[i]).collect();

        let a1: Vec<f64> = matvec(&net.fc1.w, Some(&net.fc1.b), &hnew, net.fc1.out_dim, d)
            .into_iter()
            .map(|v| v.max(0.0))
            .collect();
        let a2: Vec<f64> =
            matvec(&net.fc2.w, Some(&net.fc2.b), &a1, net.fc2.out_dim, net.fc2.in_dim)
                .into_iter()
                .map(|v| v.max(0.0))
                .collect();
        matvec(&net.out.w, Some(&net.out.b), &a2, net.out.out_dim, net.out.in_dim)
            .into_iter()
            .map(sigmoid)
            .collect()
    }

    #[test]
    fn forward_matches_independent_reference() {
        for seed in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let net = PolicyNet::new(11, 7, &mut rng);
            let x = uniform_vec(&mut rng, 11, 0.0, 1.0);
            let h = uniform_vec(&mut rng, GRU_UNITS, -0.5, 0.5);
            let (scores, _) = net.forward(&x, &h).unwrap();
            let reference = reference_policy_forward(&net, &x, &h);
            for (a, b) in scores.iter().zip(&reference) {
                assert!((a - b).abs() < 1e-6, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn forward_stays_finite_on_unit_inputs() {
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let net = PolicyNet::new(20, 30, &mut rng);
            let x = uniform_vec(&mut rng, 20, 0.0, 1.0);
            let (scores, hidden) = net.forward(&x, &net.zero_hidden()).unwrap();
            assert!(scores.iter().all(|s| s.is_finite() && *s > 0.0 && *s < 1.0));
            assert!(hidden.iter().all(|h| h.is_finite()));
        }
    }

    /// Central finite differences over every parameter of the policy net,
    /// differentiating a fixed linear readout of the scores through the
    /// recurrent layer.
    #[test]
    fn policy_gradients_match_finite_differences() {
        let eps = 1e-4;
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut net = PolicyNet::new(5, 4, &mut rng);
            let x = uniform_vec(&mut rng, 5, 0.0, 1.0);
            let h = uniform_vec(&mut rng, GRU_UNITS, -0.5, 0.5);
            let coefs = uniform_vec(&mut rng, 4, -1.0, 1.0);
            let loss = |net: &PolicyNet| -> f64 {
                let (scores, _) = net.forward(&x, &h).unwrap();
                scores.iter().zip(&coefs).map(|(s, c)| s * c).sum()
            };

            let (_, _, tape) = net.forward_tape(&x, &h).unwrap();
            let mut grads = net.grad_zeros();
            net.backward(&tape, &coefs, &mut grads);

            let analytic: Vec<f64> =
                grads.blocks().iter().flat_map(|b| b.iter().copied()).collect();
            let mut flat_idx = 0;
            let n_blocks = net.blocks().len();
            for b in 0..n_blocks {
                let len = net.blocks()[b].len();
                for i in 0..len {
                    let orig = net.blocks()[b][i];
                    net.blocks_mut()[b][i] = orig + eps;
                    let plus = loss(&net);
                    net.blocks_mut()[b][i] = orig - eps;
                    let minus = loss(&net);
                    net.blocks_mut()[b][i] = orig;
                    let numeric = (plus - minus) / (2.0 * eps);
                    let a = analytic[flat_idx];
                    let denom = a.abs().max(numeric.abs()).max(1e-6);
                    assert!(
                        (a - numeric).abs() / denom <= 1e-3,
                        "seed {seed} block {b} idx {i}: analytic {a} vs numeric {numeric}"
                    );
                    flat_idx += 1;
                }
            }
        }
    }

    #[test]
    fn critic_gradients_match_finite_differences() {
        let eps = 1e-4;
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut net = Mlp::new(&[6, 8, 8, 1], Act::Linear, &mut rng);
            let x = uniform_vec(&mut rng, 6, -1.0, 1.0);
            let loss = |net: &Mlp| net.forward(&x).unwrap()[0];

            let (_, tape) = net.forward_tape(&x).unwrap();
            let mut grads = net.grad_zeros();
            net.backward(&tape, &[1.0], &mut grads);

            let analytic: Vec<f64> =
                grads.blocks().iter().flat_map(|b| b.iter().copied()).collect();
            let mut flat_idx = 0;
            let n_blocks = net.blocks().len();
            for b in 0..n_blocks {
                let len = net.blocks()[b].len();
                for i in 0..len {
                    let orig = net.blocks()[b][i];
                    net.blocks_mut()[b][i] = orig + eps;
                    let plus = loss(&net);
                    net.blocks_mut()[b][i] = orig - eps;
                    let minus = loss(&net);
                    net.blocks_mut()[b][i] = orig;
                    let numeric = (plus - minus) / (2.0 * eps);
                    let a = analytic[flat_idx];
                    let denom = a.abs().max(numeric.abs()).max(1e-6);
                    assert!(
                        (a - numeric).abs() / denom <= 1e-3,
                        "seed {seed} block {b} idx {i}: analytic {a} vs numeric {numeric}"
                    );
                    flat_idx += 1;
                }
            }
        }
    }

    #[test]
    fn constant_loss_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let net = PolicyNet::new(4, 3, &mut rng);
        let (_, _, tape) = net.forward_tape(&[0.1, 0.2, 0.3, 0.4], &net.zero_hidden()).unwrap();
        let mut grads = net.grad_zeros();
        net.backward(&tape, &[0.0, 0.0, 0.0], &mut grads);
        for block in grads.blocks() {
            assert!(block.iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn critic_loss_matches_independent_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let critic = critic_net(5, 3, &mut rng);

        // Targets equal to predictions give zero.
        let inputs: Vec<Vec<f64>> = (0..4).map(|_| uniform_vec(&mut rng, 8, 0.0, 1.0)).collect();
        let preds: Vec<f64> = inputs.iter().map(|x| critic.forward(x).unwrap()[0]).collect();
        assert!(critic_loss(&critic, &inputs, &preds).unwrap().abs() < 1e-15);

        // m = 1, y = 3, Q = 1 gives 4.
        let mut one = Mlp::new(&[2, 2, 1], Act::Linear, &mut rng);
        for block in one.blocks_mut() {
            block.iter_mut().for_each(|v| *v = 0.0);
        }
        one.layers.last_mut().unwrap().b[0] = 1.0;
        assert!((critic_loss(&one, &[vec![0.0, 0.0]], &[3.0]).unwrap() - 4.0).abs() < 1e-15);

        // Random batch against a direct formula.
        let targets = uniform_vec(&mut rng, 4, -2.0, 2.0);
        let loss = critic_loss(&critic, &inputs, &targets).unwrap();
        let direct: f64 = inputs
            .iter()
            .zip(&targets)
            .map(|(x, y)| {
                let q = critic.forward(x).unwrap()[0];
                (y - q) * (y - q)
            })
            .sum::<f64>()
            / inputs.len() as f64;
        assert!((loss - direct).abs() < 1e-9);

        assert!(critic_loss(&critic, &[], &[]).is_err());
    }
}

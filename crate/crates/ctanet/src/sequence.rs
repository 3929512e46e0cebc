//! Recurrent half of the model: a fully-gated LSTM over per-frame feature
//! vectors, pairwise temporal attention on the hidden states, attention
//! pooling over time, and the softmax classifier.

use crate::error::{Error, Result};
use crate::numerics::{Reduction, Tape, Tensor};
use crate::params::Param;
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceConfig {
    /// Width D of the per-frame input vectors.
    pub input_width: usize,
    /// Hidden width n.
    pub hidden_width: usize,
    /// Number of classes K.
    pub num_classes: usize,
    /// Pair gate width: false = one scalar per (t, t′) pair (default),
    /// true = one gate per hidden channel.
    pub vector_gate: bool,
}

impl SequenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_width == 0 || self.hidden_width == 0 {
            return Err(Error::Config(
                "input and hidden widths must be at least 1".into(),
            ));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("need at least 2 classes".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GateParams {
    pub wx: Param,
    pub wh: Param,
    pub b: Param,
}

#[derive(Debug, Clone)]
pub struct LstmParams {
    pub input: GateParams,
    pub forget: GateParams,
    pub output: GateParams,
    pub candidate: GateParams,
}

#[derive(Debug, Clone)]
pub struct TemporalAttentionParams {
    pub w_psi: Param,
    pub w_psi_prime: Param,
    pub b_psi: Param,
    pub w_g: Param,
    pub b_g: Param,
    pub w_phi: Param,
    pub b_phi: Param,
}

#[derive(Debug, Clone)]
pub struct ClassifierParams {
    pub w: Param,
    pub b: Param,
}

#[derive(Debug, Clone)]
pub struct SequenceModel {
    pub config: SequenceConfig,
    pub lstm: LstmParams,
    pub tattn: TemporalAttentionParams,
    pub cls: ClassifierParams,
}

impl SequenceModel {
    /// Weights uniform in ±1/√fan_in (1/√n for recurrent, attention and
    /// classifier weights, 1/√D for input weights); biases zero except the
    /// forget-gate bias, which starts at +1.
    pub fn init(config: SequenceConfig, rng: &mut SplitMix64) -> Result<SequenceModel> {
        config.validate()?;
        let (d, n, k) = (config.input_width, config.hidden_width, config.num_classes);
        let sx = 1.0 / (d as f64).sqrt();
        let sn = 1.0 / (n as f64).sqrt();
        let mut gate = |name: &str, bias: f64| GateParams {
            wx: Param::uniform(format!("lstm.{name}.wx"), &[n, d], sx, rng),
            wh: Param::uniform(format!("lstm.{name}.wh"), &[n, n], sn, rng),
            b: Param::constant(format!("lstm.{name}.b"), &[n], bias),
        };
        let lstm = LstmParams {
            input: gate("i", 0.0),
            forget: gate("f", 1.0),
            output: gate("o", 0.0),
            candidate: gate("g", 0.0),
        };
        let gate_width = if config.vector_gate { n } else { 1 };
        let tattn = TemporalAttentionParams {
            w_psi: Param::uniform("tattn.w_psi", &[n, n], sn, rng),
            w_psi_prime: Param::uniform("tattn.w_psi_prime", &[n, n], sn, rng),
            b_psi: Param::zeros("tattn.b_psi", &[n]),
            w_g: Param::uniform("tattn.w_g", &[gate_width, n], sn, rng),
            b_g: Param::zeros("tattn.b_g", &[gate_width]),
            w_phi: Param::uniform("tattn.w_phi", &[n, 1], sn, rng),
            b_phi: Param::zeros("tattn.b_phi", &[1]),
        };
        let cls = ClassifierParams {
            w: Param::uniform("cls.w", &[k, n], sn, rng),
            b: Param::zeros("cls.b", &[k]),
        };
        Ok(SequenceModel { config, lstm, tattn, cls })
    }

    /// Canonical parameter order; `bind_with` and `params_mut` must match it.
    pub fn params(&self) -> Vec<&Param> {
        let mut out = Vec::new();
        for gate in [&self.lstm.input, &self.lstm.forget, &self.lstm.output, &self.lstm.candidate] {
            out.push(&gate.wx);
            out.push(&gate.wh);
            out.push(&gate.b);
        }
        let t = &self.tattn;
        out.extend([&t.w_psi, &t.w_psi_prime, &t.b_psi, &t.w_g, &t.b_g, &t.w_phi, &t.b_phi]);
        out.push(&self.cls.w);
        out.push(&self.cls.b);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out: Vec<&mut Param> = Vec::new();
        for gate in [
            &mut self.lstm.input,
            &mut self.lstm.forget,
            &mut self.lstm.output,
            &mut self.lstm.candidate,
        ] {
            out.push(&mut gate.wx);
            out.push(&mut gate.wh);
            out.push(&mut gate.b);
        }
        let t = &mut self.tattn;
        out.extend([
            &mut t.w_psi,
            &mut t.w_psi_prime,
            &mut t.b_psi,
            &mut t.w_g,
            &mut t.b_g,
            &mut t.w_phi,
            &mut t.b_phi,
        ]);
        out.push(&mut self.cls.w);
        out.push(&mut self.cls.b);
        out
    }

    pub fn bind(&self, tape: &Tape) -> Result<BoundSequence> {
        self.bind_with(&mut |p: &Param| p.bind(tape))
    }

    /// Like `bind`, but `next` supplies the tensor for each parameter, in
    /// `params()` order. Lets callers substitute probe tensors or constants.
    pub fn bind_with(
        &self,
        next: &mut dyn FnMut(&Param) -> Result<Tensor>,
    ) -> Result<BoundSequence> {
        let mut gate = |g: &GateParams| -> Result<BoundGate> {
            Ok(BoundGate { wx: next(&g.wx)?, wh: next(&g.wh)?, b: next(&g.b)? })
        };
        let lstm = BoundLstm {
            input: gate(&self.lstm.input)?,
            forget: gate(&self.lstm.forget)?,
            output: gate(&self.lstm.output)?,
            candidate: gate(&self.lstm.candidate)?,
        };
        let t = &self.tattn;
        let tattn = BoundTemporalAttention {
            w_psi: next(&t.w_psi)?,
            w_psi_prime: next(&t.w_psi_prime)?,
            b_psi: next(&t.b_psi)?,
            w_g: next(&t.w_g)?,
            b_g: next(&t.b_g)?,
            w_phi: next(&t.w_phi)?,
            b_phi: next(&t.b_phi)?,
        };
        let cls = BoundClassifier { w: next(&self.cls.w)?, b: next(&self.cls.b)? };
        Ok(BoundSequence { config: self.config.clone(), lstm, tattn, cls })
    }
}

#[derive(Debug, Clone)]
pub struct BoundGate {
    pub wx: Tensor,
    pub wh: Tensor,
    pub b: Tensor,
}

#[derive(Debug, Clone)]
pub struct BoundLstm {
    pub input: BoundGate,
    pub forget: BoundGate,
    pub output: BoundGate,
    pub candidate: BoundGate,
}

#[derive(Debug, Clone)]
pub struct BoundTemporalAttention {
    pub w_psi: Tensor,
    pub w_psi_prime: Tensor,
    pub b_psi: Tensor,
    pub w_g: Tensor,
    pub b_g: Tensor,
    pub w_phi: Tensor,
    pub b_phi: Tensor,
}

#[derive(Debug, Clone)]
pub struct BoundClassifier {
    pub w: Tensor,
    pub b: Tensor,
}

#[derive(Debug, Clone)]
pub struct BoundSequence {
    pub config: SequenceConfig,
    pub lstm: BoundLstm,
    pub tattn: BoundTemporalAttention,
    pub cls: BoundClassifier,
}

/// Hidden and cell vectors carried between steps.
#[derive(Debug, Clone)]
pub struct LstmState {
    pub h: Tensor,
    pub cell: Tensor,
}

impl LstmState {
    pub fn zeros(tape: &Tape, n: usize) -> Result<LstmState> {
        Ok(LstmState {
            h: tape.constant(vec![0.0; n], &[n])?,
            cell: tape.constant(vec![0.0; n], &[n])?,
        })
    }
}

/// Attended hidden states plus the raw pair gates, row-major by (t, t′).
#[derive(Debug, Clone)]
pub struct TemporalAttention {
    pub attended: Vec<Tensor>,
    pub gates: Vec<f64>,
}

impl BoundSequence {
    /// One fully-gated step: i,f,o = σ(·), g = tanh(·),
    /// cell′ = f⊙cell + i⊙g, h′ = o⊙tanh(cell′).
    pub fn lstm_step(&self, tape: &Tape, x: &Tensor, state: &LstmState) -> Result<LstmState> {
        let pre = |g: &BoundGate| -> Result<Tensor> {
            let xw = tape.matmul(&g.wx, x)?;
            let hw = tape.matmul(&g.wh, &state.h)?;
            tape.add(&tape.add(&xw, &hw)?, &g.b)
        };
        let i = tape.sigmoid(&pre(&self.lstm.input)?)?;
        let f = tape.sigmoid(&pre(&self.lstm.forget)?)?;
        let o = tape.sigmoid(&pre(&self.lstm.output)?)?;
        let g = tape.tanh(&pre(&self.lstm.candidate)?)?;
        let cell = tape.add(&tape.mul(&f, &state.cell)?, &tape.mul(&i, &g)?)?;
        let h = tape.mul(&o, &tape.tanh(&cell)?)?;
        Ok(LstmState { h, cell })
    }

    /// Runs the LSTM over the whole video from a zero state.
    pub fn run_lstm(&self, tape: &Tape, xs: &[Tensor]) -> Result<Vec<Tensor>> {
        let mut state = LstmState::zeros(tape, self.config.hidden_width)?;
        let mut hidden = Vec::with_capacity(xs.len());
        for x in xs {
            state = self.lstm_step(tape, x, &state)?;
            hidden.push(state.h.clone());
        }
        Ok(hidden)
    }

    /// For every ordered pair (t, t′), including t′ = t:
    /// ψ = tanh(W_ψ h_t + W_ψ′ h_t′ + b_ψ), β = σ(W_g ψ + b_g),
    /// a_t = h_t + Σ_t′ β·h_t′ with t′ ascending.
    pub fn temporal_attention(&self, tape: &Tape, hidden: &[Tensor]) -> Result<TemporalAttention> {
        let frames = hidden.len();
        let t_params = &self.tattn;
        let mut target_parts = Vec::with_capacity(frames);
        let mut source_parts = Vec::with_capacity(frames);
        for h in hidden {
            target_parts.push(tape.matmul(&t_params.w_psi, h)?);
            source_parts.push(tape.matmul(&t_params.w_psi_prime, h)?);
        }
        let mut attended = Vec::with_capacity(frames);
        let mut gates = Vec::with_capacity(frames * frames);
        for t in 0..frames {
            let mut acc = hidden[t].clone();
            for tp in 0..frames {
                let psi = tape.tanh(&tape.add(
                    &tape.add(&target_parts[t], &source_parts[tp])?,
                    &t_params.b_psi,
                )?)?;
                let gate = tape.sigmoid(&tape.add(&tape.matmul(&t_params.w_g, &psi)?, &t_params.b_g)?)?;
                gates.extend_from_slice(gate.data());
                let contrib = if self.config.vector_gate {
                    tape.mul(&gate, &hidden[tp])?
                } else {
                    tape.scale_by(&gate, &hidden[tp])?
                };
                acc = tape.add(&acc, &contrib)?;
            }
            attended.push(acc);
        }
        Ok(TemporalAttention { attended, gates })
    }

    /// Score per step = a_t·W_φ + b_φ; weights = softmax over steps;
    /// returns (Σ w_t a_t, weights).
    pub fn attention_pool(&self, tape: &Tape, attended: &[Tensor]) -> Result<(Tensor, Tensor)> {
        let n = self.config.hidden_width;
        let frames = attended.len();
        let w_phi_row = tape.reshape(&self.tattn.w_phi, &[1, n])?;
        let mut scores = Vec::with_capacity(frames);
        for a in attended {
            scores.push(tape.add(&tape.matmul(&w_phi_row, a)?, &self.tattn.b_phi)?);
        }
        let stacked = tape.stack_rows(&scores)?;
        let weights = tape.reshape(&tape.softmax(&stacked, 0)?, &[frames])?;
        let rows = tape.stack_rows(attended)?;
        let pooled = tape.matmul(&tape.transpose(&rows)?, &weights)?;
        Ok((pooled, weights))
    }

    /// Class probabilities softmax(W_cls·s + b_cls).
    pub fn classify(&self, tape: &Tape, pooled: &Tensor) -> Result<Tensor> {
        let logits = tape.add(&tape.matmul(&self.cls.w, pooled)?, &self.cls.b)?;
        tape.softmax(&logits, 0)
    }

    /// LSTM → temporal attention → attention pool → classifier. With
    /// `use_temporal_attention` off, the hidden states are mean-pooled
    /// directly and no pair gates or pooling weights exist.
    pub fn forward_video(
        &self,
        tape: &Tape,
        xs: &[Tensor],
        use_temporal_attention: bool,
    ) -> Result<SequenceOutput> {
        if xs.is_empty() {
            return Err(Error::Contract("forward_video needs at least one frame".into()));
        }
        let d = self.config.input_width;
        for x in xs {
            if x.shape() != [d] {
                return Err(Error::Dimension(format!(
                    "frame vector shape {:?} does not match input width {d}",
                    x.shape()
                )));
            }
        }
        let hidden = self.run_lstm(tape, xs)?;
        if use_temporal_attention {
            let attn = self.temporal_attention(tape, &hidden)?;
            let (pooled, weights) = self.attention_pool(tape, &attn.attended)?;
            let probabilities = self.classify(tape, &pooled)?;
            Ok(SequenceOutput {
                probabilities,
                hidden,
                attended: attn.attended,
                gates: Some(attn.gates),
                pool_weights: Some(weights),
            })
        } else {
            let rows = tape.stack_rows(&hidden)?;
            let pooled = tape.reduce(Reduction::Mean, &rows, Some(0))?;
            let probabilities = self.classify(tape, &pooled)?;
            Ok(SequenceOutput {
                probabilities,
                attended: hidden.clone(),
                hidden,
                gates: None,
                pool_weights: None,
            })
        }
    }
}

#[derive(Debug, Clone)]
pub struct SequenceOutput {
    /// Class probabilities, shape [K].
    pub probabilities: Tensor,
    /// Hidden state per step.
    pub hidden: Vec<Tensor>,
    /// Attended state per step (equals `hidden` when attention is off).
    pub attended: Vec<Tensor>,
    /// Raw pair gates by (t, t′), if temporal attention ran.
    pub gates: Option<Vec<f64>>,
    /// Pooling weights over steps, if temporal attention ran.
    pub pool_weights: Option<Tensor>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;

    fn tiny_config() -> SequenceConfig {
        SequenceConfig { input_width: 3, hidden_width: 4, num_classes: 2, vector_gate: false }
    }

    fn zero_model(config: SequenceConfig) -> SequenceModel {
        let mut model = SequenceModel::init(config, &mut SplitMix64::new(1)).unwrap();
        for p in model.params_mut() {
            p.data.iter_mut().for_each(|v| *v = 0.0);
        }
        model
    }

    fn random_vec(rng: &mut SplitMix64, n: usize, scale: f64) -> Vec<f64> {
        (0..n).map(|_| rng.uniform(-scale, scale)).collect()
    }

    fn sigmoid(v: f64) -> f64 {
        if v >= 0.0 {
            1.0 / (1.0 + (-v).exp())
        } else {
            let e = v.exp();
            e / (1.0 + e)
        }
    }

    #[test]
    fn zero_params_zero_state_step_stays_zero() {
        let model = zero_model(tiny_config());
        let tape = Tape::new();
        let bound = model.bind(&tape).unwrap();
        let x = tape.constant(vec![1.0, -2.0, 3.0], &[3]).unwrap();
        let state = LstmState::zeros(&tape, 4).unwrap();
        let next = bound.lstm_step(&tape, &x, &state).unwrap();
        assert!(next.h.data().iter().all(|&v| v == 0.0));
        assert!(next.cell.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_params_halve_the_carried_cell() {
        let model = zero_model(tiny_config());
        let tape = Tape::new();
        let bound = model.bind(&tape).unwrap();
        let x = tape.constant(vec![0.5, 0.5, 0.5], &[3]).unwrap();
        let cell0 = vec![0.8, -0.4, 0.0, 1.6];
        let state = LstmState {
            h: tape.constant(vec![0.0; 4], &[4]).unwrap(),
            cell: tape.constant(cell0.clone(), &[4]).unwrap(),
        };
        let next = bound.lstm_step(&tape, &x, &state).unwrap();
        for (i, &c) in cell0.iter().enumerate() {
            let cell = 0.5 * c;
            assert!((next.cell.data()[i] - cell).abs() < 1e-15);
            assert!((next.h.data()[i] - 0.5 * cell.tanh()).abs() < 1e-15);
        }
    }

    /// Plain-f64 replay of the gate equations, kept independent of the tape.
    fn lstm_oracle(
        model: &SequenceModel,
        x: &[f64],
        h: &[f64],
        cell: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let (n, d) = (model.config.hidden_width, model.config.input_width);
        let pre = |g: &GateParams, r: usize| -> f64 {
            let mut acc = g.b.data[r];
            for j in 0..d {
                acc += g.wx.data[r * d + j] * x[j];
            }
            for j in 0..n {
                acc += g.wh.data[r * n + j] * h[j];
            }
            acc
        };
        let mut cell_out = vec![0.0; n];
        let mut h_out = vec![0.0; n];
        for r in 0..n {
            let i = sigmoid(pre(&model.lstm.input, r));
            let f = sigmoid(pre(&model.lstm.forget, r));
            let o = sigmoid(pre(&model.lstm.output, r));
            let g = pre(&model.lstm.candidate, r).tanh();
            cell_out[r] = f * cell[r] + i * g;
            h_out[r] = o * cell_out[r].tanh();
        }
        (h_out, cell_out)
    }

    #[test]
    fn lstm_step_matches_scalar_trace() {
        let mut rng = SplitMix64::new(33);
        let config =
            SequenceConfig { input_width: 1, hidden_width: 2, num_classes: 2, vector_gate: false };
        for _ in 0..50 {
            let model = SequenceModel::init(config.clone(), &mut rng).unwrap();
            let x = random_vec(&mut rng, 1, 2.0);
            let h0 = random_vec(&mut rng, 2, 1.0);
            let c0 = random_vec(&mut rng, 2, 2.0);
            let tape = Tape::new();
            let bound = model.bind(&tape).unwrap();
            let state = LstmState {
                h: tape.constant(h0.clone(), &[2]).unwrap(),
                cell: tape.constant(c0.clone(), &[2]).unwrap(),
            };
            let xt = tape.constant(x.clone(), &[1]).unwrap();
            let next = bound.lstm_step(&tape, &xt, &state).unwrap();
            let (h_want, c_want) = lstm_oracle(&model, &x, &h0, &c0);
            for r in 0..2 {
                assert!((next.h.data()[r] - h_want[r]).abs() <= 1e-12);
                assert!((next.cell.data()[r] - c_want[r]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn hidden_state_stays_inside_unit_box() {
        let mut rng = SplitMix64::new(91);
        let config = tiny_config();
        let model = SequenceModel::init(config, &mut rng).unwrap();
        let tape = Tape::new();
        let bound = model.bind(&tape).unwrap();
        let xs: Vec<Tensor> = (0..20)
            .map(|_| tape.constant(random_vec(&mut rng, 3, 5.0), &[3]).unwrap())
            .collect();
        for h in bound.run_lstm(&tape, &xs).unwrap() {
            assert!(h.data().iter().all(|&v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn zero_attention_params_give_half_gates() {
        let mut rng = SplitMix64::new(2);
        let mut model = SequenceModel::init(tiny_config(), &mut rng).unwrap();
        let t = &mut model.tattn;
        for p in [&mut t.w_psi, &mut t.w_psi_prime, &mut t.b_psi, &mut t.w_g, &mut t.b_g] {
            p.data.iter_mut().for_each(|v| *v = 0.0);
        }
        let tape = Tape::new();
        let bound = model.bind(&tape).unwrap();
        let hidden: Vec<Tensor> = (0..3)
            .map(|_| tape.constant(random_vec(&mut rng, 4, 1.0), &[4]).unwrap())
            .collect();
        let attn = bound.temporal_attention(&tape, &hidden).unwrap();
        assert!(attn.gates.iter().all(|&b| b == 0.5));
        // a_t = h_t + 0.5 * sum of all hidden states.
        for t in 0..3 {
            for r in 0..4 {
                let sum: f64 = hidden.iter().map(|h| h.data()[r]).sum();
                let want = hidden[t].data()[r] + 0.5 * sum;
                assert!((attn.attended[t].data()[r] - want).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn zero_hidden_states_stay_zero_through_attention() {
        let mut rng = SplitMix64::new(6);
        let model = SequenceModel::init(tiny_config(), &mut rng).unwrap();
        let tape = Tape::new();
        let bound = model.bind(&tape).unwrap();
        let hidden: Vec<Tensor> =
            (0..4).map(|_| tape.constant(vec![0.0; 4], &[4]).unwrap()).collect();
        let attn = bound.temporal_attention(&tape, &hidden).unwrap();
        for a in &attn.attended {
            assert!(a.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn gates_are_strictly_inside_unit_interval() {
        let mut rng = SplitMix64::new(14);
        for seed in 0..20 {
            let model = SequenceModel::init(tiny_config(), &mut SplitMix64::new(seed)).unwrap();
            let tape = Tape::new();
            let bound = model.bind(&tape).unwrap();
            let hidden: Vec<Tensor> = (0..4)
                .map(|_| tape.constant(random_vec(&mut rng, 4, 3.0), &[4]).unwrap())
                .collect();
            let attn = bound.temporal_attention(&tape, &hidden).unwrap();
            assert!(attn.gates.iter().all(|&b| b > 0.0 && b < 1.0));
        }
    }

    /// Exhaustive pairwise evaluation with plain f64 loops.
    fn attention_oracle(model: &SequenceModel, hidden: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = model.config.hidden_width;
        let t_params = &model.tattn;
        let matvec = |w: &Param, x: &[f64]| -> Vec<f64> {
            let rows = w.shape[0];
            let cols = w.shape[1];
            (0..rows)
                .map(|r| (0..cols).map(|c| w.data[r * cols + c] * x[c]).sum())
                .collect()
        };
        hidden
            .iter()
            .map(|ht| {
                let mut a = ht.clone();
                for hs in hidden {
                    let u = matvec(&t_params.w_psi, ht);
                    let v = matvec(&t_params.w_psi_prime, hs);
                    let psi: Vec<f64> = (0..n)
                        .map(|r| (u[r] + v[r] + t_params.b_psi.data[r]).tanh())
                        .collect();
                    let beta = sigmoid(
                        (0..n).map(|r| t_params.w_g.data[r] * psi[r]).sum::<f64>()
                            + t_params.b_g.data[0],
                    );
                    for r in 0..n {
                        a[r] += beta * hs[r];
                    }
                }
                a
            })
            .collect()
    }

    #[test]
    fn pairwise_attention_matches_brute_force_on_two_frames() {
        for seed in 0..100 {
            let mut rng = SplitMix64::new(1000 + seed);
            let config = SequenceConfig {
                input_width: 2,
                hidden_width: 2,
                num_classes: 2,
                vector_gate: false,
            };
            let model = SequenceModel::init(config, &mut rng).unwrap();
            let hidden_data: Vec<Vec<f64>> =
                (0..2).map(|_| random_vec(&mut rng, 2, 1.0)).collect();
            let tape = Tape::new();
            let bound = model.bind(&tape).unwrap();
            let hidden: Vec<Tensor> = hidden_data
                .iter()
                .map(|h| tape.constant(h.clone(), &[2]).unwrap())
                .collect();
            let attn = bound.temporal_attention(&tape, &hidden).unwrap();
            let want = attention_oracle(&model, &hidden_data);
            for t in 0..2 {
                for r in 0..2 {
                    let got = attn.attended[t].data()[r];
                    assert!(
                        (got - want[t][r]).abs() <= 1e-12,
                        "seed {seed}: got {got}, want {}",
                        want[t][r]
                    );
                }
            }
        }
    }

    #[test]
    fn saturated_negative_gate_bias_reduces_attention_to_identity() {
        let mut rng = SplitMix64::new(8);
        let mut model = SequenceModel::init(tiny_config(), &mut rng).unwrap();
        model.tattn.w_g.data.iter_mut().for_each(|v| *v = 0.0);
        model.tattn.b_g.data[0] = -40.0;
        let tape = Tape::new();
        let bound = model.bind(&tape).unwrap();
        let hidden: Vec<Tensor> = (0..5)
            .map(|_| tape.constant(random_vec(&mut rng, 4, 1.0), &[4]).unwrap())
            .collect();
        let attn = bound.temporal_attention(&tape, &hidden).unwrap();
        for (a, h) in attn.attended.iter().zip(&hidden) {
            for (av, hv) in a.data().iter().zip(h.data().iter()) {
                assert!((av - hv).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn zero_score_weights_pool_to_row_mean() {
        let mut rng = SplitMix64::new(12);
        let mut model = SequenceModel::init(tiny_config(), &mut rng).unwrap();
        model.tattn.w_phi.data.iter_mut().for_each(|v| *v = 0.0);
        model.tattn.b_phi.data[0] = 0.7;
        let tape = Tape::new();
        let bound = model.bind(&tape).unwrap();
        let attended: Vec<Tensor> = (0..3)
            .map(|_| tape.constant(random_vec(&mut rng, 4, 1.0), &[4]).unwrap())
            .collect();
        let (pooled, weights) = bound.attention_pool(&tape, &attended).unwrap();
        for &w in weights.data().iter() {
            assert!((w - 1.0 / 3.0).abs() <= 1e-15);
        }
        for r in 0..4 {
            let mean: f64 = attended.iter().map(|a| a.data()[r]).sum::<f64>() / 3.0;
            assert!((pooled.data()[r] - mean).abs() <= 1e-12);
        }
    }

    #[test]
    fn single_step_pooling_is_identity() {
        let mut rng = SplitMix64::new(13);
        let model = SequenceModel::init(tiny_config(), &mut rng).unwrap();
        let tape = Tape::new();
        let bound = model.bind(&tape).unwrap();
        let attended = vec![tape.constant(random_vec(&mut rng, 4, 1.0), &[4]).unwrap()];
        let (pooled, weights) = bound.attention_pool(&tape, &attended).unwrap();
        assert_eq!(weights.data(), &[1.0]);
        for (p, a) in pooled.data().iter().zip(attended[0].data().iter()) {
            assert!((p - a).abs() <= 1e-15);
        }
    }

    #[test]
    fn known_scores_give_one_two_four_sevenths() {
        // n = 1 with w_phi = 1, b_phi = 0 makes the score equal the state.
        let config =
            SequenceConfig { input_width: 1, hidden_width: 1, num_classes: 2, vector_gate: false };
        let mut model = zero_model(config);
        model.tattn.w_phi.data[0] = 1.0;
        let tape = Tape::new();
        let bound = model.bind(&tape).unwrap();
        let vals = [0.0, 2f64.ln(), 4f64.ln()];
        let attended: Vec<Tensor> =
            vals.iter().map(|&v| tape.constant(vec![v], &[1]).unwrap()).collect();
        let (pooled, weights) = bound.attention_pool(&tape, &attended).unwrap();
        let want = [1.0 / 7.0, 2.0 / 7.0, 4.0 / 7.0];
        for (w, want) in weights.data().iter().zip(want) {
            assert!((w - want).abs() <= 1e-12);
        }
        let s_want: f64 = vals.iter().zip(want).map(|(v, w)| v * w).sum();
        assert!((pooled.data()[0] - s_want).abs() <= 1e-12);
    }

    #[test]
    fn pooling_weights_ignore_score_offsets() {
        let mut rng = SplitMix64::new(18);
        let mut model = SequenceModel::init(tiny_config(), &mut rng).unwrap();
        let attended_data: Vec<Vec<f64>> = (0..4).map(|_| random_vec(&mut rng, 4, 1.0)).collect();
        let run = |model: &SequenceModel| -> Vec<f64> {
            let tape = Tape::new();
            let bound = model.bind(&tape).unwrap();
            let attended: Vec<Tensor> = attended_data
                .iter()
                .map(|a| tape.constant(a.clone(), &[4]).unwrap())
                .collect();
            bound.attention_pool(&tape, &attended).unwrap().1.data().to_vec()
        };
        let base = run(&model);
        model.tattn.b_phi.data[0] += 3.7;
        let shifted = run(&model);
        for (a, b) in base.iter().zip(&shifted) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn zero_classifier_weights_give_uniform_probabilities() {
        let model = zero_model(tiny_config());
        let tape = Tape::new();
        let bound = model.bind(&tape).unwrap();
        let s = tape.constant(vec![0.3, -1.0, 0.5, 2.0], &[4]).unwrap();
        let probs = bound.classify(&tape, &s).unwrap();
        for &p in probs.data().iter() {
            assert!((p - 0.5).abs() <= 1e-15);
        }
    }

    #[test]
    fn classifier_matches_direct_evaluation() {
        let mut rng = SplitMix64::new(23);
        let config =
            SequenceConfig { input_width: 2, hidden_width: 3, num_classes: 2, vector_gate: false };
        let model = SequenceModel::init(config, &mut rng).unwrap();
        let s_data = random_vec(&mut rng, 3, 1.0);
        let tape = Tape::new();
        let bound = model.bind(&tape).unwrap();
        let s = tape.constant(s_data.clone(), &[3]).unwrap();
        let probs = bound.classify(&tape, &s).unwrap();
        let logits: Vec<f64> = (0..2)
            .map(|k| {
                (0..3).map(|j| model.cls.w.data[k * 3 + j] * s_data[j]).sum::<f64>()
                    + model.cls.b.data[k]
            })
            .collect();
        let max = logits[0].max(logits[1]);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let total: f64 = probs.data().iter().sum();
        assert!((total - 1.0).abs() <= 1e-9);
        for (p, e) in probs.data().iter().zip(&exps) {
            assert!((p - e / sum).abs() <= 1e-12);
        }
    }

    #[test]
    fn all_zero_forward_video_is_uniform() {
        let model = zero_model(tiny_config());
        let tape = Tape::new();
        let bound = model.bind(&tape).unwrap();
        let xs: Vec<Tensor> =
            (0..5).map(|_| tape.constant(vec![0.0; 3], &[3]).unwrap()).collect();
        let out = bound.forward_video(&tape, &xs, true).unwrap();
        for &p in out.probabilities.data().iter() {
            assert!((p - 0.5).abs() <= 1e-15);
        }
    }

    #[test]
    fn forward_video_rejects_empty_and_misshaped_input() {
        let mut rng = SplitMix64::new(31);
        let model = SequenceModel::init(tiny_config(), &mut rng).unwrap();
        let tape = Tape::new();
        let bound = model.bind(&tape).unwrap();
        assert!(matches!(bound.forward_video(&tape, &[], true), Err(Error::Contract(_))));
        let bad = tape.constant(vec![0.0; 2], &[2]).unwrap();
        assert!(matches!(bound.forward_video(&tape, &[bad], true), Err(Error::Dimension(_))));
    }

    #[test]
    fn disabling_attention_mean_pools_hidden_states() {
        let mut rng = SplitMix64::new(37);
        let model = SequenceModel::init(tiny_config(), &mut rng).unwrap();
        let tape = Tape::new();
        let bound = model.bind(&tape).unwrap();
        let xs: Vec<Tensor> = (0..4)
            .map(|_| tape.constant(random_vec(&mut rng, 3, 1.0), &[3]).unwrap())
            .collect();
        let out = bound.forward_video(&tape, &xs, false).unwrap();
        assert!(out.pool_weights.is_none());
        assert!(out.gates.is_none());
        for (a, h) in out.attended.iter().zip(&out.hidden) {
            assert_eq!(a.id(), h.id());
        }
    }

    #[test]
    fn vector_gate_variant_runs_and_gates_stay_in_unit_interval() {
        let mut rng = SplitMix64::new(43);
        let config =
            SequenceConfig { input_width: 3, hidden_width: 4, num_classes: 2, vector_gate: true };
        let model = SequenceModel::init(config, &mut rng).unwrap();
        let tape = Tape::new();
        let bound = model.bind(&tape).unwrap();
        let xs: Vec<Tensor> = (0..3)
            .map(|_| tape.constant(random_vec(&mut rng, 3, 1.0), &[3]).unwrap())
            .collect();
        let out = bound.forward_video(&tape, &xs, true).unwrap();
        let gates = out.gates.unwrap();
        assert_eq!(gates.len(), 3 * 3 * 4);
        assert!(gates.iter().all(|&b| b > 0.0 && b < 1.0));
    }

    #[test]
    fn every_parameter_passes_central_difference_check() {
        let config = tiny_config();
        let model = SequenceModel::init(config.clone(), &mut SplitMix64::new(47)).unwrap();
        let mut rng = SplitMix64::new(48);
        let xs_data: Vec<Vec<f64>> = (0..3).map(|_| random_vec(&mut rng, 3, 1.0)).collect();
        let label = 1usize;
        let count = model.params().len();
        for which in 0..count {
            let param = model.params()[which].clone();
            let f = |tape: &Tape, probe: &Tensor| -> Result<Tensor> {
                let mut idx = 0;
                let bound = model.bind_with(&mut |p: &Param| {
                    let t = if idx == which {
                        tape.reshape(probe, &p.shape)
                    } else {
                        tape.constant(p.data.clone(), &p.shape)
                    };
                    idx += 1;
                    t
                })?;
                let xs: Vec<Tensor> = xs_data
                    .iter()
                    .map(|x| tape.constant(x.clone(), &[3]))
                    .collect::<Result<_>>()?;
                let out = bound.forward_video(tape, &xs, true)?;
                let p = tape.index(&out.probabilities, label)?;
                tape.scale(&tape.log_clamped(&p, 1e-12)?, -1.0)
            };
            let report = grad_check(&f, &param.data, &param.shape, 1e-5).unwrap();
            assert!(
                report.max_rel_err <= 1e-5,
                "param {} rel err {}",
                param.name,
                report.max_rel_err
            );
        }
    }
}

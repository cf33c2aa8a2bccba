use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::graph::{Graph, Var};
use crate::nn::tensor::{ParamId, ParameterSet, Tensor};

/// Half-width of the uniform weight initialisation.
pub const INIT_SCALE: f64 = 0.1;

pub fn uniform<R: Rng + ?Sized>(shape: Vec<usize>, rng: &mut R) -> Result<Tensor> {
    let n = shape.iter().product();
    let values = (0..n).map(|_| rng.random_range(-INIT_SCALE..INIT_SCALE)).collect();
    Tensor::new(shape, values)
}

/// Hidden and cell vectors of an LSTM.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub hidden: Vec<f64>,
    pub cell: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden_units: usize) -> Self {
        LstmState {
            hidden: vec![0.0; hidden_units],
            cell: vec![0.0; hidden_units],
        }
    }
}

/// LSTM state living inside a graph.
#[derive(Clone, Copy, Debug)]
pub struct StateVars {
    pub hidden: Var,
    pub cell: Var,
}

#[derive(Clone, Debug)]
pub struct LstmLayer {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b: ParamId,
    pub input_dim: usize,
    pub hidden: usize,
}

impl LstmLayer {
    /// Registers `{prefix}.w_ih`, `{prefix}.w_hh` and `{prefix}.b`. Weights are
    /// uniform, biases zero except the forget gate block at +1.
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParameterSet,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if input_dim == 0 || hidden == 0 {
            return Err(Error::Invalid(format!("lstm {prefix} needs positive sizes")));
        }
        let w_ih = params.add(format!("{prefix}.w_ih"), uniform(vec![4 * hidden, input_dim], rng)?)?;
        let w_hh = params.add(format!("{prefix}.w_hh"), uniform(vec![4 * hidden, hidden], rng)?)?;
        let mut bias = vec![0.0; 4 * hidden];
        bias[hidden..2 * hidden].fill(1.0);
        let b = params.add(format!("{prefix}.b"), Tensor::vector(bias)?)?;
        Ok(LstmLayer {
            w_ih,
            w_hh,
            b,
            input_dim,
            hidden,
        })
    }

    pub fn initial(&self, g: &mut Graph<'_>, state: &LstmState) -> Result<StateVars> {
        if state.hidden.len() != self.hidden || state.cell.len() != self.hidden {
            return Err(Error::Shape(format!(
                "state of widths {}/{} for {} hidden units",
                state.hidden.len(),
                state.cell.len(),
                self.hidden
            )));
        }
        Ok(StateVars {
            hidden: g.input(state.hidden.clone()),
            cell: g.input(state.cell.clone()),
        })
    }

    pub fn zero_state(&self, g: &mut Graph<'_>) -> StateVars {
        StateVars {
            hidden: g.input(vec![0.0; self.hidden]),
            cell: g.input(vec![0.0; self.hidden]),
        }
    }

    pub fn step(&self, g: &mut Graph<'_>, input: Var, state: StateVars) -> Result<StateVars> {
        let (hidden, cell) = g.lstm_cell(self.w_ih, self.w_hh, self.b, input, state.hidden, state.cell)?;
        Ok(StateVars { hidden, cell })
    }

    /// Single step outside of any training graph.
    pub fn step_values(&self, params: &ParameterSet, input: &[f64], state: &LstmState) -> Result<LstmState> {
        let mut g = Graph::new(params);
        let x = g.input(input.to_vec());
        let s = self.initial(&mut g, state)?;
        let next = self.step(&mut g, x, s)?;
        Ok(LstmState {
            hidden: g.value(next.hidden).to_vec(),
            cell: g.value(next.cell).to_vec(),
        })
    }

    /// Run over a sequence from the zero state, returning every hidden state.
    pub fn run(&self, g: &mut Graph<'_>, inputs: &[Var]) -> Result<Vec<Var>> {
        let mut state = self.zero_state(g);
        let mut out = Vec::with_capacity(inputs.len());
        for &x in inputs {
            state = self.step(g, x, state)?;
            out.push(state.hidden);
        }
        Ok(out)
    }
}

/// Forward and backward LSTMs over the same sequence.
#[derive(Clone, Debug)]
pub struct BiLstm {
    pub forward: LstmLayer,
    pub backward: LstmLayer,
}

/// Output of [`BiLstm::encode_full`].
#[derive(Clone, Debug)]
pub struct BiEncoding {
    /// Per position `[forward_t ∥ backward_t]`.
    pub outputs: Vec<Var>,
    /// Forward state after the last position.
    pub forward_final: Var,
    /// Backward state after reading back to the first position.
    pub backward_final: Var,
}

impl BiLstm {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParameterSet,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(BiLstm {
            forward: LstmLayer::new(params, &format!("{prefix}.fwd"), input_dim, hidden, rng)?,
            backward: LstmLayer::new(params, &format!("{prefix}.bwd"), input_dim, hidden, rng)?,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.forward.hidden + self.backward.hidden
    }

    pub fn encode(&self, g: &mut Graph<'_>, inputs: &[Var]) -> Result<Vec<Var>> {
        Ok(self.encode_full(g, inputs)?.outputs)
    }

    pub fn encode_full(&self, g: &mut Graph<'_>, inputs: &[Var]) -> Result<BiEncoding> {
        if inputs.is_empty() {
            return Err(Error::Empty("bi-LSTM input sequence".into()));
        }
        let fwd = self.forward.run(g, inputs)?;
        let reversed: Vec<Var> = inputs.iter().rev().copied().collect();
        let mut bwd = self.backward.run(g, &reversed)?;
        bwd.reverse();
        let outputs = fwd
            .iter()
            .zip(&bwd)
            .map(|(f, b)| g.concat(&[*f, *b]))
            .collect::<Result<Vec<_>>>()?;
        Ok(BiEncoding {
            outputs,
            forward_final: *fwd.last().expect("non-empty"),
            backward_final: bwd[0],
        })
    }
}

/// Additive attention: `score_t = vᵀ tanh(W_k e_t + W_q s + b)`.
#[derive(Clone, Debug)]
pub struct Attention {
    pub w_key: ParamId,
    pub w_query: ParamId,
    pub b: ParamId,
    pub v: ParamId,
}

/// Context vector and the attention distribution that produced it.
#[derive(Clone, Copy, Debug)]
pub struct Attended {
    pub context: Var,
    pub weights: Var,
}

impl Attention {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParameterSet,
        prefix: &str,
        key_dim: usize,
        query_dim: usize,
        attn_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Attention {
            w_key: params.add(format!("{prefix}.w_key"), uniform(vec![attn_dim, key_dim], rng)?)?,
            w_query: params.add(format!("{prefix}.w_query"), uniform(vec![attn_dim, query_dim], rng)?)?,
            b: params.add(format!("{prefix}.b"), Tensor::zeros(vec![attn_dim])?)?,
            v: params.add(format!("{prefix}.v"), uniform(vec![1, attn_dim], rng)?)?,
        })
    }

    /// Key projections of the encoder outputs; compute once per source.
    pub fn keys(&self, g: &mut Graph<'_>, encoder_outputs: &[Var]) -> Result<Vec<Var>> {
        encoder_outputs
            .iter()
            .map(|e| g.linear(self.w_key, None, *e))
            .collect()
    }

    pub fn attend(
        &self,
        g: &mut Graph<'_>,
        query: Var,
        keys: &[Var],
        encoder_outputs: &[Var],
    ) -> Result<Attended> {
        if encoder_outputs.is_empty() {
            return Err(Error::Empty("attention over no encoder outputs".into()));
        }
        if keys.len() != encoder_outputs.len() {
            return Err(Error::Shape(format!(
                "{} keys for {} encoder outputs",
                keys.len(),
                encoder_outputs.len()
            )));
        }
        let q = g.linear(self.w_query, Some(self.b), query)?;
        let mut scores = Vec::with_capacity(keys.len());
        for k in keys {
            let s = g.add(*k, q)?;
            let s = g.tanh(s);
            scores.push(g.linear(self.v, None, s)?);
        }
        let scores = g.concat(&scores)?;
        let weights = g.softmax(scores);
        let context = g.weighted_sum(weights, encoder_outputs)?;
        Ok(Attended { context, weights })
    }
}

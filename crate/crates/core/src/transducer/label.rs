use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::kernels::{self, sigmoid};
use crate::params::ParamBuilder;
use crate::tensor::{ParamId, ParamSet};

use super::{Token, Vocabulary};

/// Single-layer LSTM over previously emitted tokens.
///
/// Gate columns are ordered input, forget, cell, output. The empty prefix
/// maps to a learned start state.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelEncoder {
    pub hidden: usize,
    embed: ParamId,
    w_input: ParamId,
    w_hidden: ParamId,
    bias: ParamId,
    h0: ParamId,
    c0: ParamId,
}

/// Hidden and cell vectors after some prefix.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelEncoderState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LabelEncoder {
    pub fn build(b: &mut dyn ParamBuilder, vocab: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            hidden,
            embed: b.tensor("label.embed", vec![vocab, hidden], hidden)?,
            w_input: b.tensor("label.w_input", vec![hidden, 4 * hidden], hidden)?,
            w_hidden: b.tensor("label.w_hidden", vec![hidden, 4 * hidden], hidden)?,
            bias: b.tensor("label.bias", vec![4 * hidden], hidden)?,
            h0: b.tensor("label.h0", vec![1, hidden], hidden)?,
            c0: b.tensor("label.c0", vec![1, hidden], hidden)?,
        })
    }

    pub fn start(&self, params: &ParamSet) -> LabelEncoderState {
        LabelEncoderState {
            h: params.get(self.h0).data().to_vec(),
            c: params.get(self.c0).data().to_vec(),
        }
    }

    pub fn step(&self, params: &ParamSet, state: &LabelEncoderState, token: Token) -> LabelEncoderState {
        let n = self.hidden;
        let x = params.get(self.embed).row(token);
        let mut gates = kernels::matmul(x, params.get(self.w_input).data(), 1, n, 4 * n);
        let rec = kernels::matmul(&state.h, params.get(self.w_hidden).data(), 1, n, 4 * n);
        for ((g, r), b) in gates.iter_mut().zip(&rec).zip(params.get(self.bias).data()) {
            *g += r + b;
        }
        let mut h = vec![0.0; n];
        let mut c = vec![0.0; n];
        for j in 0..n {
            let i = sigmoid(gates[j]);
            let f = sigmoid(gates[n + j]);
            let cand = gates[2 * n + j].tanh();
            let o = sigmoid(gates[3 * n + j]);
            c[j] = f * state.c[j] + i * cand;
            h[j] = o * c[j].tanh();
        }
        LabelEncoderState { h, c }
    }

    /// Advances `state` over `tokens`; the empty slice leaves it unchanged.
    pub fn advance(&self, params: &ParamSet, state: &LabelEncoderState, tokens: &[Token]) -> LabelEncoderState {
        tokens.iter().fold(state.clone(), |s, &t| self.step(params, &s, t))
    }

    /// Encodes a whole prefix from the start state: `(h_LE, state)`.
    pub fn encode(
        &self,
        params: &ParamSet,
        vocab: &Vocabulary,
        prefix: &[Token],
    ) -> Result<(Vec<f64>, LabelEncoderState)> {
        vocab.check_sequence(prefix)?;
        let s = self.advance(params, &self.start(params), prefix);
        Ok((s.h.clone(), s))
    }

    /// Records the outputs after each prefix of `target`: rows `h_0..h_U`.
    pub fn forward_prefixes(&self, g: &mut Graph<'_>, target: &[Token]) -> Result<Var> {
        let n = self.hidden;
        let mut h = g.param(self.h0);
        let mut c = g.param(self.c0);
        let mut rows = vec![h];
        if !target.is_empty() {
            let table = g.param(self.embed);
            let x = g.gather_rows(table, target)?;
            let w_in = g.param(self.w_input);
            let xw = g.matmul(x, w_in)?;
            let bias = g.param(self.bias);
            let xw = g.add_row(xw, bias)?;
            let w_h = g.param(self.w_hidden);
            for u in 0..target.len() {
                let xu = g.slice_rows(xw, u, 1)?;
                let hr = g.matmul(h, w_h)?;
                let gates = g.add(xu, hr)?;
                let i = g.slice_cols(gates, 0, n)?;
                let i = g.sigmoid(i);
                let f = g.slice_cols(gates, n, n)?;
                let f = g.sigmoid(f);
                let cand = g.slice_cols(gates, 2 * n, n)?;
                let cand = g.tanh(cand);
                let o = g.slice_cols(gates, 3 * n, n)?;
                let o = g.sigmoid(o);
                let fc = g.mul(f, c)?;
                let ic = g.mul(i, cand)?;
                c = g.add(fc, ic)?;
                let tc = g.tanh(c);
                h = g.mul(o, tc)?;
                rows.push(h);
            }
        }
        g.concat_rows(&rows)
    }
}

//! Parameterized layers over the autodiff graph.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::kernels;
use crate::tensor::{ParamId, ParamSet};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// `y = x·W + b` with `W: [in×out]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let w = g.param(self.w);
        let b = g.param(self.b);
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }

    /// Value-only application to a single row.
    pub fn apply(&self, params: &ParamSet, x: &[f64]) -> Vec<f64> {
        let w = params.get(self.w);
        let (k, n) = (w.rows(), w.cols());
        let mut y = kernels::matmul(x, w.data(), 1, k, n);
        y.iter_mut().zip(params.get(self.b).data()).for_each(|(a, b)| *a += b);
        y
    }

    pub fn out_dim(&self, params: &ParamSet) -> usize {
        params.get(self.w).cols()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.layer_norm(x, gamma, beta, LAYER_NORM_EPS)
    }
}

/// Two-layer position-wise feed-forward block with a ReLU.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let h = self.up.forward(g, x)?;
        let h = g.relu(h);
        self.down.forward(g, h)
    }
}

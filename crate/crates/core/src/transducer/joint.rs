use crate::error::{shape, Result};
use crate::graph::{Graph, Var};
use crate::kernels;
use crate::nn::Linear;
use crate::params::ParamBuilder;
use crate::tensor::{ParamSet, Tensor};

/// `log softmax(W_out · tanh(W_ae·h_AE + W_le·h_LE))`, each projection with a bias.
#[derive(Clone, Debug, PartialEq)]
pub struct JointNetwork {
    pub acoustic: Linear,
    pub label: Linear,
    pub output: Linear,
}

impl JointNetwork {
    pub fn build(b: &mut dyn ParamBuilder, d_model: usize, joint_dim: usize, vocab: usize) -> Result<Self> {
        Ok(Self {
            acoustic: b.linear("joint.acoustic", d_model, joint_dim)?,
            label: b.linear("joint.label", d_model, joint_dim)?,
            output: b.linear("joint.output", joint_dim, vocab)?,
        })
    }

    /// Log-probabilities over the vocabulary for one acoustic/label pair.
    pub fn log_probs(&self, params: &ParamSet, h_ae: &[f64], h_le: &[f64]) -> Result<Vec<f64>> {
        let d = params.get(self.acoustic.w).rows();
        if h_ae.len() != d || h_le.len() != params.get(self.label.w).rows() {
            return Err(shape(format!(
                "joint inputs of width {} and {} for model width {d}",
                h_ae.len(),
                h_le.len()
            )));
        }
        let a = self.acoustic.apply(params, h_ae);
        let l = self.label.apply(params, h_le);
        Ok(self.log_probs_projected(params, &a, &l))
    }

    /// Same as [`JointNetwork::log_probs`] from already projected inputs.
    pub fn log_probs_projected(&self, params: &ParamSet, a: &[f64], l: &[f64]) -> Vec<f64> {
        let z: Vec<f64> = a.iter().zip(l).map(|(x, y)| (x + y).tanh()).collect();
        let logits = self.output.apply(params, &z);
        let mut out = vec![0.0; logits.len()];
        kernels::log_softmax_row(&logits, &mut out);
        out
    }

    /// Acoustic projection of every row of `h`.
    pub fn project_acoustic(&self, params: &ParamSet, h: &Tensor) -> Vec<Vec<f64>> {
        (0..h.rows()).map(|t| self.acoustic.apply(params, h.row(t))).collect()
    }

    /// Records the `[T·(U+1) × V]` log-probability lattice; row `t·(U+1)+u`.
    pub fn forward_lattice(&self, g: &mut Graph<'_>, h_ae: Var, h_le: Var) -> Result<Var> {
        let a = self.acoustic.forward(g, h_ae)?;
        let l = self.label.forward(g, h_le)?;
        let grid = g.grid_add(a, l)?;
        let z = g.tanh(grid);
        let logits = self.output.forward(g, z)?;
        Ok(g.log_softmax(logits))
    }
}

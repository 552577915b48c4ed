use crate::error::{contract, Result};
use crate::graph::{Graph, Var};
use crate::kernels::log_sum_exp;
use crate::model::TransducerModel;
use crate::tensor::Tensor;

use super::{Token, BLANK};

/// Negative log-likelihood of `target` summed over every monotone alignment
/// of a `[T·(U+1) × V]` log-probability lattice, and its gradient with
/// respect to each lattice entry.
///
/// Row `t·(U+1)+u` holds `log P(· | t, y_{1..u})`. A path ends by emitting
/// blank from `(T−1, U)`.
pub fn transducer_nll(
    logp: &[f64],
    frames: usize,
    target: &[Token],
    vocab: usize,
) -> Result<(f64, Vec<f64>)> {
    let u1 = target.len() + 1;
    if frames == 0 {
        return Err(contract("transducer loss over zero frames"));
    }
    if logp.len() != frames * u1 * vocab {
        return Err(contract("lattice size does not match frames × (U+1) × V"));
    }
    let lp = |t: usize, u: usize, k: usize| logp[(t * u1 + u) * vocab + k];
    let ninf = f64::NEG_INFINITY;

    let mut alpha = vec![ninf; frames * u1];
    for t in 0..frames {
        for u in 0..u1 {
            let a = if t == 0 && u == 0 {
                0.0
            } else {
                let from_blank = if t > 0 { alpha[(t - 1) * u1 + u] + lp(t - 1, u, BLANK) } else { ninf };
                let from_label = if u > 0 { alpha[t * u1 + u - 1] + lp(t, u - 1, target[u - 1]) } else { ninf };
                log_sum_exp(from_blank, from_label)
            };
            alpha[t * u1 + u] = a;
        }
    }
    let log_like = alpha[frames * u1 - 1] + lp(frames - 1, u1 - 1, BLANK);

    // beta[t][u]: log-probability of finishing from (t, u)
    let mut beta = vec![ninf; frames * u1];
    for t in (0..frames).rev() {
        for u in (0..u1).rev() {
            let b = if t == frames - 1 && u == u1 - 1 {
                lp(t, u, BLANK)
            } else {
                let via_blank = if t + 1 < frames { beta[(t + 1) * u1 + u] + lp(t, u, BLANK) } else { ninf };
                let via_label = if u + 1 < u1 { beta[t * u1 + u + 1] + lp(t, u, target[u]) } else { ninf };
                log_sum_exp(via_blank, via_label)
            };
            beta[t * u1 + u] = b;
        }
    }

    let mut grad = vec![0.0; logp.len()];
    for t in 0..frames {
        for u in 0..u1 {
            let a = alpha[t * u1 + u];
            let row = (t * u1 + u) * vocab;
            let next_blank = if t + 1 < frames {
                beta[(t + 1) * u1 + u]
            } else if u == u1 - 1 {
                0.0
            } else {
                ninf
            };
            grad[row + BLANK] = -(a + lp(t, u, BLANK) + next_blank - log_like).exp();
            if u + 1 < u1 {
                let k = target[u];
                grad[row + k] = -(a + lp(t, u, k) + beta[t * u1 + u + 1] - log_like).exp();
            }
        }
    }
    Ok((-log_like, grad))
}

/// Records the transducer loss of encoder features `h: [T×D]`.
pub fn rnnt_loss_graph(
    g: &mut Graph<'_>,
    model: &TransducerModel,
    h: Var,
    target: &[Token],
) -> Result<Var> {
    model.vocab.check_sequence(target)?;
    let frames = g.dims(h).0;
    if frames == 0 {
        return Err(contract("transducer loss over zero frames"));
    }
    let h_le = model.label.forward_prefixes(g, target)?;
    let lattice = model.joint.forward_lattice(g, h, h_le)?;
    let (nll, grad) = transducer_nll(g.value(lattice), frames, target, model.vocab.size())?;
    g.scalar_with_grad(lattice, nll, grad)
}

/// `−log P(target | h)` summed over all alignments.
pub fn rnnt_loss(model: &TransducerModel, h: &Tensor, target: &[Token]) -> Result<f64> {
    if h.rows() == 0 || h.shape().len() != 2 {
        return Err(contract("transducer loss needs a non-empty [T × D] feature matrix"));
    }
    let mut g = Graph::with_params(&model.params);
    let hv = g.input(h.clone());
    let loss = rnnt_loss_graph(&mut g, model, hv, target)?;
    Ok(g.scalar(loss))
}

//! Central finite-difference verification of analytic gradients.

use crate::error::{contract, Result};
use crate::graph::{Graph, Var};
use crate::tensor::{ParamId, ParamSet, Tensor};

/// Checks `f` against central differences with step `eps` over every value
/// of `params`. Returns the largest `|analytic − numeric| / max(1, |numeric|)`.
pub fn grad_check<F>(f: F, params: &[Tensor], eps: f64) -> Result<f64>
where
    F: for<'a> Fn(&mut Graph<'a>, &[Var]) -> Result<Var>,
{
    let mut set = ParamSet::new();
    let ids: Vec<ParamId> = params
        .iter()
        .enumerate()
        .map(|(i, t)| set.insert(format!("p{i}"), t.clone()))
        .collect::<Result<_>>()?;
    let wrapped = |g: &mut Graph<'_>| {
        let vars: Vec<Var> = ids.iter().map(|&id| g.param(id)).collect();
        f(g, &vars)
    };
    grad_check_params(wrapped, &set, eps, None)
}

/// Like [`grad_check`] but over a named parameter set. When `max_per_tensor`
/// is given, only that many evenly spaced entries of each tensor are probed.
pub fn grad_check_params<F>(
    f: F,
    params: &ParamSet,
    eps: f64,
    max_per_tensor: Option<usize>,
) -> Result<f64>
where
    F: for<'a> Fn(&mut Graph<'a>) -> Result<Var>,
{
    if eps <= 0.0 {
        return Err(contract("finite-difference step must be positive"));
    }
    let eval = |ps: &ParamSet| -> Result<f64> {
        let mut g = Graph::with_params(ps);
        let out = f(&mut g)?;
        if g.value(out).len() != 1 {
            return Err(contract("gradient check needs a scalar function"));
        }
        Ok(g.scalar(out))
    };

    let analytic = {
        let mut g = Graph::with_params(params);
        let out = f(&mut g)?;
        g.backward(out)?;
        g.param_grads()
    };
    let base = eval(params)?;
    if base.to_bits() != eval(params)?.to_bits() {
        return Err(contract("function under gradient check is not deterministic"));
    }

    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for (i, grads) in analytic.grads.iter().enumerate() {
        let id = ParamId(i);
        let n = grads.len();
        let stride = match max_per_tensor {
            Some(k) if k > 0 && n > k => n.div_ceil(k),
            _ => 1,
        };
        for j in (0..n).step_by(stride) {
            let orig = probe.get(id).data()[j];
            probe.get_mut(id).data_mut()[j] = orig + eps;
            let up = eval(&probe)?;
            probe.get_mut(id).data_mut()[j] = orig - eps;
            let down = eval(&probe)?;
            probe.get_mut(id).data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let err = (grads[j] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::AttentionMask;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sum_of_squares_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::uniform(vec![3, 4], 1.0, &mut rng);
        let err = grad_check(
            |g, v| {
                let sq = g.mul(v[0], v[0])?;
                Ok(g.sum(sq))
            },
            &[x],
            1e-4,
        )
        .unwrap();
        assert!(err <= 1e-8, "{err}");
    }

    #[test]
    fn attention_with_layer_norm_composite() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 5;
        let d = 8;
        let params = vec![
            Tensor::uniform(vec![n, d], 1.0, &mut rng),
            Tensor::uniform(vec![d, d], 0.5, &mut rng),
            Tensor::uniform(vec![d, d], 0.5, &mut rng),
            Tensor::uniform(vec![d, d], 0.5, &mut rng),
            Tensor::uniform(vec![d], 1.0, &mut rng),
            Tensor::uniform(vec![d], 1.0, &mut rng),
            Tensor::uniform(vec![n, d], 1.0, &mut rng),
        ];
        let mask = AttentionMask::without_keys(n, |j| j == 3);
        let err = grad_check(
            |g, v| {
                let x = g.layer_norm(v[0], v[4], v[5], 1e-5)?;
                let q = g.matmul(x, v[1])?;
                let k = g.matmul(x, v[2])?;
                let vv = g.matmul(x, v[3])?;
                let a = g.attention(q, k, vv, &mask, 2)?;
                let t = g.tanh(a);
                let w = g.mul(t, v[6])?;
                Ok(g.sum(w))
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-4, "{err}");
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Tensor::uniform(vec![6], 1.0, &mut rng);
        // derivative of sin is cos, not 0.5·cos
        let err = grad_check(
            |g, v| {
                let y = g.map(v[0], f64::sin, |t| 0.5 * t.cos());
                Ok(g.sum(y))
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert!(err > 1e-2, "{err}");
    }

    #[test]
    fn nondeterministic_function_is_rejected() {
        use std::cell::Cell;
        let calls = Cell::new(0.0);
        let err = grad_check(
            |g, v| {
                calls.set(calls.get() + 1.0);
                let s = g.sum(v[0]);
                Ok(g.scale(s, calls.get()))
            },
            &[Tensor::vector(vec![1.0, 2.0])],
            1e-4,
        )
        .unwrap_err();
        assert!(matches!(err, crate::Error::Contract(_)));
    }

    #[test]
    fn every_primitive_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let params = vec![
            Tensor::uniform(vec![3, 4], 1.0, &mut rng),
            Tensor::uniform(vec![2, 4], 1.0, &mut rng),
            Tensor::uniform(vec![4], 1.0, &mut rng),
            Tensor::uniform(vec![6, 5], 1.0, &mut rng),
        ];
        let err = grad_check(
            |g, v| {
                let grid = g.grid_add(v[0], v[1])?; // [6×4]
                let b = g.add_row(grid, v[2])?;
                let s = g.sigmoid(b);
                let r = g.relu(grid);
                let m = g.sub(s, r)?;
                let cat = g.concat_rows(&[m, grid])?;
                let sl = g.slice_rows(cat, 2, 7)?;
                let sc = g.slice_cols(sl, 1, 3)?;
                let ga = g.gather_rows(sc, &[0, 3, 3, 6])?;
                let lp = g.log_softmax(ga);
                let sc2 = g.scale(lp, -0.7);
                let p = g.mul(sc2, ga)?;
                let w = g.slice_rows(v[3], 0, 4)?; // [4×5]
                let mm = g.matmul(m, w)?;
                let t = g.tanh(mm);
                let s1 = g.sum(p);
                let s2 = g.sum(t);
                g.add(s1, s2)
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-4, "{err}");
    }
}

mod common;

use common::*;
use mlstream::checkpoint;
use mlstream::encoder::CbsEncoder;
use mlstream::gradcheck::{grad_check, grad_check_params};
use mlstream::multilatency::{training_target, utterance_loss, LossPlan};
use mlstream::optim::Adam;
use mlstream::params::{Init, ParamBuilder};
use mlstream::transducer::{JointNetwork, LabelEncoder};
use mlstream::{
    AttentionMask, BlockSpec, EncoderConfig, Error, Graph, ModelConfig, ParamSet, Tensor, TransducerModel, Var,
};

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-6;

/// Reduces `x` to a scalar through fixed random weights so every entry of
/// the upstream gradient differs.
fn weighted_sum(g: &mut Graph<'_>, x: Var, seed: u64) -> mlstream::Result<Var> {
    let (r, c) = g.dims(x);
    let w = g.input(random_matrix(r, c, 1.0, &mut rng(seed)));
    let y = g.mul(x, w)?;
    Ok(g.sum(y))
}

#[test]
fn backward_of_simple_expressions() {
    // f = Σ x², df/dx = 2x
    let x0 = Tensor::matrix(1, 3, vec![1.0, -2.0, 0.5]).unwrap();
    let mut g = Graph::new();
    let x = g.input(x0.clone());
    let sq = g.mul(x, x).unwrap();
    let f = g.sum(sq);
    g.backward(f).unwrap();
    assert_eq!(g.scalar(f), 5.25);
    assert_eq!(g.grad(x).unwrap(), &[2.0, -4.0, 1.0]);

    // f = Σ (A·B), dA = 1·Bᵀ
    let mut g = Graph::new();
    let a = g.input(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
    let b = g.input(Tensor::matrix(2, 2, vec![3.0, 4.0, 5.0, 6.0]).unwrap());
    let p = g.matmul(a, b).unwrap();
    let f = g.sum(p);
    g.backward(f).unwrap();
    assert_eq!(g.value(p), &[13.0, 16.0]);
    assert_eq!(g.grad(a).unwrap(), &[7.0, 11.0]);
    assert_eq!(g.grad(b).unwrap(), &[1.0, 1.0, 2.0, 2.0]);

    // log-softmax rows sum to one in probability space and its gradient
    // under a one-hot pick is onehot − softmax
    let mut g = Graph::new();
    let x = g.input(Tensor::matrix(1, 3, vec![0.0, 1.0, 2.0]).unwrap());
    let ls = g.log_softmax(x);
    let total: f64 = g.value(ls).iter().map(|v| v.exp()).sum();
    assert!((total - 1.0).abs() < 1e-15);
    let pick = g.input(Tensor::matrix(1, 3, vec![0.0, 0.0, 1.0]).unwrap());
    let m = g.mul(ls, pick).unwrap();
    let f = g.sum(m);
    g.backward(f).unwrap();
    let z: f64 = [0.0f64, 1.0, 2.0].iter().map(|v| v.exp()).sum();
    let want = [-1.0 / z, -1f64.exp() / z, 1.0 - 2f64.exp() / z];
    for (got, w) in g.grad(x).unwrap().iter().zip(want) {
        assert!((got - w).abs() < 1e-14);
    }
}

#[test]
fn backward_requires_scalar() {
    let mut g = Graph::new();
    let x = g.input(Tensor::zeros(vec![2, 2]));
    assert!(g.backward(x).is_err());
}

#[test]
fn elementwise_and_structural_ops_pass_grad_check() {
    let mut r = rng(1);
    let a = random_matrix(3, 4, 1.0, &mut r);
    let b = random_matrix(4, 2, 1.0, &mut r);
    let bias = Tensor::vector(random_matrix(1, 2, 1.0, &mut r).into_data());
    let err = grad_check(
        |g, v| {
            let y = g.matmul(v[0], v[1])?;
            let y = g.add_row(y, v[2])?;
            let t = g.tanh(y);
            let s = g.sigmoid(y);
            let z = g.mul(t, s)?;
            let z = g.sub(z, y)?;
            let z = g.scale(z, 0.7);
            let top = g.slice_rows(z, 0, 2)?;
            let bottom = g.slice_rows(z, 2, 1)?;
            let z = g.concat_rows(&[bottom, top, bottom])?;
            let z = g.gather_rows(z, &[3, 0, 0, 2])?;
            let z = g.slice_cols(z, 1, 1)?;
            let z = g.log_softmax(z);
            weighted_sum(g, z, 9)
        },
        &[a, b, bias],
        EPS,
    )
    .unwrap();
    assert!(err < TOL, "{err}");
}

#[test]
fn log_softmax_and_grid_add_pass_grad_check() {
    let mut r = rng(2);
    let a = random_matrix(3, 4, 2.0, &mut r);
    let b = random_matrix(2, 4, 2.0, &mut r);
    let err = grad_check(
        |g, v| {
            let grid = g.grid_add(v[0], v[1])?;
            let grid = g.tanh(grid);
            let ls = g.log_softmax(grid);
            weighted_sum(g, ls, 3)
        },
        &[a, b],
        EPS,
    )
    .unwrap();
    assert!(err < TOL, "{err}");
}

#[test]
fn layer_norm_passes_grad_check() {
    let mut r = rng(3);
    let x = random_matrix(4, 6, 2.0, &mut r);
    let gamma = Tensor::vector(random_matrix(1, 6, 1.0, &mut r).into_data());
    let beta = Tensor::vector(random_matrix(1, 6, 1.0, &mut r).into_data());
    let err = grad_check(
        |g, v| {
            let y = g.layer_norm(v[0], v[1], v[2], 1e-5)?;
            weighted_sum(g, y, 4)
        },
        &[x, gamma, beta],
        EPS,
    )
    .unwrap();
    assert!(err < TOL, "{err}");
}

#[test]
fn masked_attention_passes_grad_check() {
    let mut r = rng(4);
    let q = random_matrix(5, 8, 1.0, &mut r);
    let k = random_matrix(5, 8, 1.0, &mut r);
    let v = random_matrix(5, 8, 1.0, &mut r);
    let mut mask = AttentionMask::all(5, 5);
    mask.forbid_key(4);
    mask.forbid(1, 2);
    let err = grad_check(
        |g, p| {
            let y = g.attention(p[0], p[1], p[2], &mask, 2)?;
            weighted_sum(g, y, 5)
        },
        &[q, k, v],
        EPS,
    )
    .unwrap();
    assert!(err < TOL, "{err}");
}

#[test]
fn layers_pass_grad_check() {
    let mut ps = ParamSet::new();
    let (lin, ln, ff) = {
        let mut init = Init::new(&mut ps, 5);
        let lin = init.linear("lin", 6, 5).unwrap();
        let ln = init.layer_norm("ln", 5).unwrap();
        let ff = mlstream::nn::FeedForward { up: init.linear("up", 5, 12).unwrap(), down: init.linear("down", 12, 5).unwrap() };
        (lin, ln, ff)
    };
    // move the norm away from its identity initialization
    for t in ps.iter_mut() {
        t.data_mut().iter_mut().enumerate().for_each(|(i, x)| *x += 0.01 * (i % 7) as f64);
    }
    let x = random_matrix(3, 6, 1.0, &mut rng(6));
    let err = grad_check_params(
        |g| {
            let xv = g.input(x.clone());
            let h = lin.forward(g, xv)?;
            let h = ln.forward(g, h)?;
            let h = ff.forward(g, h)?;
            weighted_sum(g, h, 7)
        },
        &ps,
        EPS,
        None,
    )
    .unwrap();
    assert!(err < TOL, "{err}");
}

#[test]
fn encoder_block_passes_grad_check() {
    let cfg = EncoderConfig { d_feat: 3, d_model: 8, layers: 2, heads: 2, ff_dim: 12 };
    let mut ps = ParamSet::new();
    let enc = CbsEncoder::build(&mut Init::new(&mut ps, 8), cfg).unwrap();
    let sp: BlockSpec = "4-2-2".parse().unwrap();
    let frames = random_matrix(7, 3, 1.0, &mut rng(8));
    let err = grad_check_params(
        |g| {
            // two chained blocks so the context path is exercised
            let blocks = enc.forward_stream(g, &frames, &sp, 1)?;
            let mut total = weighted_sum(g, blocks[0].1, 1)?;
            for (i, (_, h)) in blocks.iter().enumerate().skip(1) {
                let s = weighted_sum(g, *h, 2 + i as u64)?;
                total = g.add(total, s)?;
            }
            Ok(total)
        },
        &ps,
        EPS,
        Some(6),
    )
    .unwrap();
    assert!(err < TOL, "{err}");
}

#[test]
fn label_encoder_and_joint_pass_grad_check() {
    let mut ps = ParamSet::new();
    let (label, joint) = {
        let mut init = Init::new(&mut ps, 9);
        (LabelEncoder::build(&mut init, 5, 4).unwrap(), JointNetwork::build(&mut init, 4, 7, 5).unwrap())
    };
    let h = random_matrix(3, 4, 1.0, &mut rng(9));
    let err = grad_check_params(
        |g| {
            let le = label.forward_prefixes(g, &[2, 4, 3])?;
            let hv = g.input(h.clone());
            let lat = joint.forward_lattice(g, hv, le)?;
            weighted_sum(g, lat, 10)
        },
        &ps,
        EPS,
        None,
    )
    .unwrap();
    assert!(err < TOL, "{err}");
}

fn loss_model() -> TransducerModel {
    let cfg = ModelConfig { d_feat: 3, d_model: 8, layers: 1, heads: 2, ff_dim: 12, vocab_size: 5, joint_dim: 6 };
    TransducerModel::new(cfg, 11).unwrap()
}

#[test]
fn full_loss_passes_grad_check() {
    let model = loss_model();
    let sp: BlockSpec = "4-2-2".parse().unwrap();
    let frames = random_matrix(7, 3, 1.0, &mut rng(12));
    let target = training_target(&[2, 3]);
    for plan in [LossPlan::Target { suffix_k: 0 }, LossPlan::Target { suffix_k: 1 }, LossPlan::Joint] {
        let err = grad_check_params(
            |g| utterance_loss(g, &model, &frames, &target, &sp, plan),
            &model.params,
            EPS,
            Some(4),
        )
        .unwrap();
        assert!(err < TOL, "{plan:?}: {err}");
    }
}

#[test]
fn initial_context_receives_gradient_and_moves_under_adam() {
    let mut model = loss_model();
    let sp: BlockSpec = "4-2-2".parse().unwrap();
    let frames = random_matrix(9, 3, 1.0, &mut rng(13));
    let target = training_target(&[4]);
    let grads = {
        let mut g = Graph::with_params(&model.params);
        let loss = utterance_loss(&mut g, &model, &frames, &target, &sp, LossPlan::Joint).unwrap();
        g.backward(loss).unwrap();
        g.param_grads()
    };
    let id = model.encoder.initial_context_id();
    assert!(grads.grads[id.index()].iter().any(|&x| x != 0.0));
    let before = model.encoder().init_context();
    let mut adam = Adam::new(&model.params);
    adam.step(&mut model.params, &grads, 1e-2);
    let after = model.encoder().init_context();
    assert_ne!(before, after);
    assert_eq!(after.values(), model.params.get(id).data());
}

#[test]
fn checkpoint_bytes_round_trip() {
    let model = loss_model();
    let bytes = checkpoint::encode(&model.params);
    assert_eq!(&bytes[..8], checkpoint::MAGIC);
    let back = checkpoint::decode(&bytes).unwrap();
    assert_eq!(checkpoint::encode(&back), bytes);
    for ((_, n1, t1), (_, n2, t2)) in model.params.iter().zip(back.iter()) {
        assert_eq!(n1, n2);
        assert_eq!(t1.shape(), t2.shape());
        assert!(t1.data().iter().zip(t2.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let bytes = checkpoint::encode(&loss_model().params);
    assert!(matches!(checkpoint::decode(&bytes[..bytes.len() - 3]), Err(Error::Checkpoint(_))));
    let mut bad = bytes.clone();
    bad[0] ^= 1;
    assert!(matches!(checkpoint::decode(&bad), Err(Error::Checkpoint(_))));
    let mut extra = bytes;
    extra.push(0);
    assert!(matches!(checkpoint::decode(&extra), Err(Error::Checkpoint(_))));
}

#[test]
fn model_checkpoint_round_trip_preserves_behaviour() {
    let model = loss_model();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    model.save(&path).unwrap();
    let back = TransducerModel::load(&path).unwrap();
    assert_eq!(back.config, model.config);
    let sp: BlockSpec = "4-2-2".parse().unwrap();
    let frames = random_matrix(9, 3, 1.0, &mut rng(14));
    assert_eq!(back.encoder().encode_stream(&frames, &sp).unwrap(), model.encoder().encode_stream(&frames, &sp).unwrap());
    model.save(dir.path().join("again.ckpt")).unwrap();
    back.save(dir.path().join("back.ckpt")).unwrap();
    assert_eq!(std::fs::read(dir.path().join("again.ckpt")).unwrap(), std::fs::read(dir.path().join("back.ckpt")).unwrap());
}

#[test]
fn checkpoint_with_wrong_layout_is_rejected() {
    let mut ps = loss_model().params;
    ps.insert("stray", Tensor::scalar(1.0)).unwrap();
    assert!(matches!(TransducerModel::from_checkpoint(&ps), Err(Error::Checkpoint(_))));
}

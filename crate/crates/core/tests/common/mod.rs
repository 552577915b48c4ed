//! Independent reference implementations and fixtures shared by the
//! integration suites and the acceptance target.
#![allow(dead_code)]

use std::sync::atomic::{AtomicUsize, Ordering};

use mlstream::attention::AttentionMask;
use mlstream::multilatency::{DecodeOptions, StreamingModel};
use mlstream::transducer::Emission;
use mlstream::{Block, FrameSource, ModelConfig, Result, Tensor, Token, TransducerModel, BLANK};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

/// A small model for oracle comparisons.
pub fn tiny_model(vocab: usize, seed: u64) -> TransducerModel {
    let cfg = ModelConfig { d_feat: 3, d_model: 8, layers: 1, heads: 2, ff_dim: 16, vocab_size: vocab, joint_dim: 8 };
    TransducerModel::new(cfg, seed).unwrap()
}

/// Scales every parameter so joint outputs are far from uniform.
pub fn sharpen(model: &mut TransducerModel, factor: f64) {
    for t in model.params.iter_mut() {
        t.data_mut().iter_mut().for_each(|x| *x *= factor);
    }
}

fn label_state_h(model: &TransducerModel, prefix: &[Token]) -> Vec<f64> {
    model.label.encode(&model.params, &model.vocab, prefix).unwrap().0
}

fn joint(model: &TransducerModel, h: &Tensor, t: usize, prefix: &[Token]) -> Vec<f64> {
    model.joint.log_probs(&model.params, h.row(t), &label_state_h(model, prefix)).unwrap()
}

/// `−log Σ P(alignment)` by explicit recursion over every monotone path.
pub fn brute_force_nll(model: &TransducerModel, h: &Tensor, target: &[Token]) -> f64 {
    fn walk(model: &TransducerModel, h: &Tensor, target: &[Token], t: usize, u: usize, logp: f64, acc: &mut Vec<f64>) {
        let lp = joint(model, h, t, &target[..u]);
        let last = h.rows() - 1;
        if u < target.len() {
            walk(model, h, target, t, u + 1, logp + lp[target[u]], acc);
        }
        if t < last {
            walk(model, h, target, t + 1, u, logp + lp[BLANK], acc);
        } else if u == target.len() {
            acc.push(logp + lp[BLANK]);
        }
    }
    let mut paths = Vec::new();
    walk(model, h, target, 0, 0, 0.0, &mut paths);
    let m = paths.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    -(m + paths.iter().map(|p| (p - m).exp()).sum::<f64>().ln())
}

/// Every frame-by-frame emission path under a per-frame cap, pooled by token
/// sequence: returns `(tokens, log-sum-exp score)` sorted best first.
pub fn exhaustive_search(model: &TransducerModel, h: &Tensor, max_symbols: usize) -> Vec<(Vec<Token>, f64)> {
    fn frame(
        model: &TransducerModel,
        h: &Tensor,
        max_symbols: usize,
        t: usize,
        emitted: usize,
        tokens: &mut Vec<Token>,
        score: f64,
        out: &mut Vec<(Vec<Token>, f64)>,
    ) {
        if t == h.rows() {
            out.push((tokens.clone(), score));
            return;
        }
        if emitted == max_symbols {
            frame(model, h, max_symbols, t + 1, 0, tokens, score, out);
            return;
        }
        let lp = joint(model, h, t, tokens);
        frame(model, h, max_symbols, t + 1, 0, tokens, score + lp[BLANK], out);
        for k in 1..lp.len() {
            tokens.push(k);
            frame(model, h, max_symbols, t, emitted + 1, tokens, score + lp[k], out);
            tokens.pop();
        }
    }
    let mut paths = Vec::new();
    frame(model, h, max_symbols, 0, 0, &mut Vec::new(), 0.0, &mut paths);
    let mut pooled: Vec<(Vec<Token>, Vec<f64>)> = Vec::new();
    for (toks, s) in paths {
        match pooled.iter_mut().find(|(t, _)| *t == toks) {
            Some((_, v)) => v.push(s),
            None => pooled.push((toks, vec![s])),
        }
    }
    let mut out: Vec<(Vec<Token>, f64)> = pooled
        .into_iter()
        .map(|(t, v)| {
            let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            (t, m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln())
        })
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1));
    out
}

/// Plain recursive Levenshtein distance, no memoization.
pub fn recursive_edit_distance(a: &[Token], b: &[Token]) -> usize {
    match (a, b) {
        ([], _) => b.len(),
        (_, []) => a.len(),
        ([x, ra @ ..], [y, rb @ ..]) => {
            let sub = recursive_edit_distance(ra, rb) + usize::from(x != y);
            let del = recursive_edit_distance(ra, b) + 1;
            let ins = recursive_edit_distance(a, rb) + 1;
            sub.min(del).min(ins)
        }
    }
}

/// Frame source that records the largest index any reader asked for.
pub struct SpySource {
    pub frames: Tensor,
    max_read: AtomicUsize,
}

impl SpySource {
    pub fn new(frames: Tensor) -> Self {
        Self { frames, max_read: AtomicUsize::new(0) }
    }

    /// One past the largest frame index read so far.
    pub fn high_water(&self) -> usize {
        self.max_read.load(Ordering::SeqCst)
    }
}

impl FrameSource for SpySource {
    fn d_feat(&self) -> usize {
        self.frames.cols()
    }

    fn len(&self) -> usize {
        self.frames.rows()
    }

    fn frame(&self, idx: usize) -> &[f64] {
        self.max_read.fetch_max(idx + 1, Ordering::SeqCst);
        self.frames.row(idx)
    }
}

/// Hand-set stand-in for a trained model over one-dimensional frames whose
/// value is a token id (0 for silence).
///
/// Encoding copies each visible, in-stream frame and zeroes the rest;
/// decoding emits a frame's token whenever the value changes to a nonzero
/// one. The context records which blocks a chain has encoded.
pub struct Fixture;

impl StreamingModel for Fixture {
    type Context = Vec<isize>;
    type State = f64;

    fn initial_context(&self) -> Vec<isize> {
        Vec::new()
    }

    fn initial_state(&self) -> f64 {
        0.0
    }

    fn encode(&self, block: &Block, context: &Vec<isize>, mask: &AttentionMask) -> Result<(Tensor, Vec<isize>)> {
        let rows: Vec<f64> = (0..block.len())
            .map(|p| if block.valid[p] && mask.allows(p + 1, p + 1) { block.frames.row(p)[0] } else { 0.0 })
            .collect();
        let mut c = context.clone();
        c.push(block.index);
        Ok((Tensor::matrix(block.len(), 1, rows).unwrap(), c))
    }

    fn decode(&self, h: &Tensor, state: &f64, first_frame: usize, _opts: &DecodeOptions) -> Result<(Vec<Emission>, f64)> {
        let mut last = *state;
        let mut out = Vec::new();
        for r in 0..h.rows() {
            let v = h.row(r)[0];
            if v != 0.0 && v != last {
                out.push(Emission { token: v as Token, frame: first_frame + r });
            }
            last = v;
        }
        Ok((out, last))
    }
}

/// One-dimensional stream holding `tokens[j]` for `n_center` frames each.
pub fn fixture_stream(tokens: &[Token], n_center: usize) -> Tensor {
    let data: Vec<f64> = tokens.iter().flat_map(|&t| std::iter::repeat(t as f64).take(n_center)).collect();
    Tensor::matrix(data.len(), 1, data).unwrap()
}

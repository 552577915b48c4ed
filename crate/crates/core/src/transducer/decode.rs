use std::cmp::Ordering;

use crate::error::{contract, shape, Result};
use crate::kernels::log_sum_exp;
use crate::model::TransducerModel;
use crate::tensor::Tensor;

use super::{LabelEncoderState, Token, BLANK};

/// Label-encoder state plus its cached joint projection.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderState {
    pub label: LabelEncoderState,
    proj: Vec<f64>,
}

impl DecoderState {
    pub fn start(model: &TransducerModel) -> Self {
        Self::from_label(model, model.label.start(&model.params))
    }

    pub fn from_label(model: &TransducerModel, label: LabelEncoderState) -> Self {
        let proj = model.joint.label.apply(&model.params, &label.h);
        Self { label, proj }
    }

    pub fn advance(&self, model: &TransducerModel, token: Token) -> Self {
        Self::from_label(model, model.label.step(&model.params, &self.label, token))
    }

    pub fn advance_all(&self, model: &TransducerModel, tokens: &[Token]) -> Self {
        tokens.iter().fold(self.clone(), |s, &t| s.advance(model, t))
    }
}

/// A token together with the absolute acoustic frame it was emitted at.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Emission {
    pub token: Token,
    pub frame: usize,
}

/// One beam entry. `tokens` never contains blank.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<Token>,
    /// Emission frame of each token, parallel to `tokens`.
    pub frames: Vec<usize>,
    pub log_score: f64,
    pub state: DecoderState,
}

impl Hypothesis {
    pub fn initial(state: DecoderState) -> Self {
        Self { tokens: Vec::new(), frames: Vec::new(), log_score: 0.0, state }
    }

    pub fn emissions(&self) -> Vec<Emission> {
        self.tokens
            .iter()
            .zip(&self.frames)
            .map(|(&token, &frame)| Emission { token, frame })
            .collect()
    }
}

fn check_features(model: &TransducerModel, h: &Tensor) -> Result<()> {
    if h.rows() > 0 && h.cols() != model.config.d_model {
        return Err(shape(format!("features of width {} for model width {}", h.cols(), model.config.d_model)));
    }
    Ok(())
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Greedy frame-by-frame decoding: at each frame, emit the arg-max token and
/// re-query until blank wins or `max_symbols` tokens were emitted. Frames of
/// `h` are numbered from `first_frame`.
pub fn greedy_decode_block(
    model: &TransducerModel,
    h: &Tensor,
    state: &DecoderState,
    max_symbols: usize,
    first_frame: usize,
) -> Result<(Vec<Emission>, DecoderState)> {
    if max_symbols == 0 {
        return Err(contract("max symbols per frame must be at least one"));
    }
    check_features(model, h)?;
    let params = &model.params;
    let mut state = state.clone();
    let mut out = Vec::new();
    for (t, a) in model.joint.project_acoustic(params, h).iter().enumerate() {
        for _ in 0..max_symbols {
            let lp = model.joint.log_probs_projected(params, a, &state.proj);
            let k = argmax(&lp);
            if k == BLANK {
                break;
            }
            out.push(Emission { token: k, frame: first_frame + t });
            state = state.advance(model, k);
        }
    }
    Ok((out, state))
}

enum Candidate {
    Finished(Hypothesis),
    Extend { parent: usize, token: Token },
}

fn by_score_desc(a: f64, b: f64) -> Ordering {
    b.total_cmp(&a)
}

fn merge_into(finished: &mut Vec<Hypothesis>, hyp: Hypothesis) {
    match finished.iter_mut().find(|h| h.tokens == hyp.tokens) {
        Some(h) => {
            if hyp.log_score > h.log_score {
                h.frames = hyp.frames;
            }
            h.log_score = log_sum_exp(h.log_score, hyp.log_score).min(0.0);
        }
        None => finished.push(hyp),
    }
}

/// Frame-synchronous beam search resuming from `beams`.
///
/// Within a frame, every live hypothesis proposes blank (which finishes it for
/// the frame) or any other token (which keeps it live); the `width` best of
/// the finished and live proposals survive each round, up to `max_symbols`
/// rounds. Hypotheses with identical tokens are merged by log-sum-exp. With
/// `width = 1` this is exactly [`greedy_decode_block`].
pub fn beam_search_block(
    model: &TransducerModel,
    h: &Tensor,
    beams: &[Hypothesis],
    width: usize,
    max_symbols: usize,
    first_frame: usize,
) -> Result<Vec<Hypothesis>> {
    if width == 0 {
        return Err(contract("beam width must be at least one"));
    }
    if beams.is_empty() {
        return Err(contract("beam search needs at least one starting hypothesis"));
    }
    if max_symbols == 0 {
        return Err(contract("max symbols per frame must be at least one"));
    }
    check_features(model, h)?;
    let params = &model.params;
    let vocab = model.vocab.size();

    let mut hyps = Vec::new();
    for b in beams {
        merge_into(&mut hyps, b.clone());
    }
    hyps.sort_by(|a, b| by_score_desc(a.log_score, b.log_score));
    hyps.truncate(width);

    for (t, a) in model.joint.project_acoustic(params, h).iter().enumerate() {
        let frame = first_frame + t;
        let mut finished: Vec<Hypothesis> = Vec::new();
        let mut active = std::mem::take(&mut hyps);
        for round in 0..=max_symbols {
            if active.is_empty() {
                break;
            }
            if round == max_symbols {
                // emission cap reached: advance to the next frame without blank
                for h in active.drain(..) {
                    merge_into(&mut finished, h);
                }
                break;
            }
            let mut next_finished = finished.clone();
            let mut extends = Vec::new();
            for (i, h) in active.iter().enumerate() {
                let lp = model.joint.log_probs_projected(params, a, &h.state.proj);
                let mut done = h.clone();
                done.log_score += lp[BLANK];
                merge_into(&mut next_finished, done);
                for (k, &l) in lp.iter().enumerate().take(vocab).skip(1) {
                    extends.push((h.log_score + l, Candidate::Extend { parent: i, token: k }));
                }
            }
            let mut pool: Vec<(f64, Candidate)> = next_finished
                .into_iter()
                .map(|h| (h.log_score, Candidate::Finished(h)))
                .chain(extends)
                .collect();
            pool.sort_by(|a, b| by_score_desc(a.0, b.0));
            pool.truncate(width);
            finished = Vec::new();
            let mut live = Vec::new();
            for (score, cand) in pool {
                match cand {
                    Candidate::Finished(h) => finished.push(h),
                    Candidate::Extend { parent, token } => {
                        let p = &active[parent];
                        let mut tokens = p.tokens.clone();
                        tokens.push(token);
                        let mut frames = p.frames.clone();
                        frames.push(frame);
                        live.push(Hypothesis {
                            tokens,
                            frames,
                            log_score: score,
                            state: p.state.advance(model, token),
                        });
                    }
                }
            }
            active = live;
        }
        finished.sort_by(|a, b| by_score_desc(a.log_score, b.log_score));
        finished.truncate(width);
        hyps = finished;
    }
    Ok(hyps)
}

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::blocking::{Block, BlockSpec};
use crate::error::{contract, Result};
use crate::graph::{Graph, Var};
use crate::model::TransducerModel;
use crate::optim::Adam;
use crate::par::{self, Execution};
use crate::synth::Utterance;
use crate::tensor::{GradBuffer, Tensor};
use crate::transducer::{rnnt_loss_graph, Token, EOS};

/// Which training objective a batch is drawn from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Objective {
    /// Plain block-streaming training on target frames.
    Single,
    /// Shared-parameter auxiliaries: with probability `mask_prob` an
    /// utterance's blocks get their last `k·Nc` positions masked, `k` uniform.
    MethodA { mask_prob: f64 },
    /// Unified model: with probability `mode_prob` the look-ahead positions
    /// are trained to recognize the stream as well.
    MethodB { mode_prob: f64 },
}

impl Objective {
    pub fn validate(&self, spec: &BlockSpec) -> Result<()> {
        let p = match *self {
            Objective::Single => return Ok(()),
            Objective::MethodA { mask_prob } => mask_prob,
            Objective::MethodB { mode_prob } => mode_prob,
        };
        if !(0.0..=1.0).contains(&p) {
            return Err(contract(format!("probability {p} outside [0, 1]")));
        }
        spec.check_multi_latency()
    }
}

/// Per-utterance choice drawn before the batch is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossPlan {
    /// Target-frame loss with the last `k·Nc` positions of every block hidden.
    Target { suffix_k: usize },
    /// Target-frame loss plus the mean look-ahead-frame loss over every phase.
    Joint,
}

/// Training target: the transcript followed by eos.
pub fn training_target(transcript: &[Token]) -> Vec<Token> {
    let mut t = transcript.to_vec();
    t.push(EOS);
    t
}

fn concat(g: &mut Graph<'_>, parts: &[Var]) -> Result<Var> {
    if parts.len() == 1 {
        Ok(parts[0])
    } else {
        g.concat_rows(parts)
    }
}

/// Records the loss of one utterance under `plan`.
pub fn utterance_loss(
    g: &mut Graph<'_>,
    model: &TransducerModel,
    frames: &Tensor,
    target: &[Token],
    spec: &BlockSpec,
    plan: LossPlan,
) -> Result<Var> {
    let k = match plan {
        LossPlan::Target { suffix_k } => suffix_k,
        LossPlan::Joint => 0,
    };
    let blocks = model.encoder.forward_stream(g, frames, spec, k)?;
    let mut parts = Vec::with_capacity(blocks.len());
    for (block, h) in &blocks {
        let r = block.target_positions();
        parts.push(g.slice_rows(*h, r.start, r.len())?);
    }
    let h = concat(g, &parts)?;
    let loss = rnnt_loss_graph(g, model, h, target)?;
    if plan != LossPlan::Joint {
        return Ok(loss);
    }

    // Phase p reads the look-ahead rows of blocks -p, -p+N, -p+2N, ...,
    // which tile the stream; blocks before the first reuse c_0.
    let n = spec.aux_count();
    let t = frames.rows() as isize;
    let mut aux = Vec::with_capacity(n);
    for phase in 0..n {
        let mut parts = Vec::new();
        let mut b = -(phase as isize);
        while spec.lookahead_span(b).0 < t {
            let (block, h) = if b >= 1 {
                let (block, h) = &blocks[b as usize - 1];
                (block.clone(), *h)
            } else {
                let block = Block::materialize(frames, spec, b);
                let c0 = g.param(model.encoder.initial_context_id());
                let (h, _) = model.encoder.forward_block(g, &block.frames, c0, &block.attention_mask(0)?)?;
                (block, h)
            };
            let r = block.lookahead_positions();
            if !r.is_empty() {
                parts.push(g.slice_rows(h, r.start, r.len())?);
            }
            b += n as isize;
        }
        let h = concat(g, &parts)?;
        aux.push(rnnt_loss_graph(g, model, h, target)?);
    }
    let mut aux_sum = aux[0];
    for &a in &aux[1..] {
        aux_sum = g.add(aux_sum, a)?;
    }
    let aux_mean = g.scale(aux_sum, 1.0 / n as f64);
    g.add(loss, aux_mean)
}

/// Optimizer state plus the generator that draws per-utterance loss plans.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: TransducerModel,
    pub optimizer: Adam,
    pub execution: Execution,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(model: TransducerModel, seed: u64) -> Self {
        let optimizer = Adam::new(&model.params);
        Self { model, optimizer, execution: Execution::default(), rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    fn draw_plan(&mut self, spec: &BlockSpec, objective: Objective) -> LossPlan {
        match objective {
            Objective::Single => LossPlan::Target { suffix_k: 0 },
            Objective::MethodA { mask_prob } => {
                if self.rng.gen_bool(mask_prob) {
                    LossPlan::Target { suffix_k: self.rng.gen_range(1..=spec.aux_count()) }
                } else {
                    LossPlan::Target { suffix_k: 0 }
                }
            }
            Objective::MethodB { mode_prob } => {
                if self.rng.gen_bool(mode_prob) {
                    LossPlan::Joint
                } else {
                    LossPlan::Target { suffix_k: 0 }
                }
            }
        }
    }

    /// Mean loss and summed-then-averaged gradients over `batch`, without
    /// updating parameters. Plans are drawn in batch order before any work is
    /// spread over threads, so results do not depend on execution mode.
    pub fn batch_gradients(
        &mut self,
        batch: &[Utterance],
        spec: &BlockSpec,
        objective: Objective,
    ) -> Result<(f64, GradBuffer)> {
        objective.validate(spec)?;
        if batch.is_empty() {
            return Err(contract("empty training batch"));
        }
        let jobs: Vec<(&Utterance, LossPlan)> = batch.iter().map(|u| (u, self.draw_plan(spec, objective))).collect();
        let model = &self.model;
        let results = par::map(&jobs, self.execution, |(utt, plan)| -> Result<(f64, GradBuffer)> {
            let mut g = Graph::with_params(&model.params);
            let loss = utterance_loss(&mut g, model, &utt.frames, &training_target(&utt.transcript), spec, *plan)?;
            g.backward(loss)?;
            Ok((g.scalar(loss), g.param_grads()))
        });
        let mut total = 0.0;
        let mut grads = GradBuffer::zeros_like(&model.params);
        for r in results {
            let (l, gb) = r?;
            total += l;
            grads.add_assign(&gb);
        }
        let scale = 1.0 / batch.len() as f64;
        grads.scale(scale);
        Ok((total * scale, grads))
    }

    /// One optimizer update; returns the batch's mean loss before the update.
    pub fn train_step(&mut self, batch: &[Utterance], spec: &BlockSpec, objective: Objective, lr: f64) -> Result<f64> {
        let (loss, grads) = self.batch_gradients(batch, spec, objective)?;
        self.optimizer.step(&mut self.model.params, &grads, lr);
        Ok(loss)
    }
}

pub fn train_step_method_a(
    trainer: &mut Trainer,
    batch: &[Utterance],
    spec: &BlockSpec,
    mask_prob: f64,
    lr: f64,
) -> Result<f64> {
    trainer.train_step(batch, spec, Objective::MethodA { mask_prob }, lr)
}

pub fn train_step_method_b(
    trainer: &mut Trainer,
    batch: &[Utterance],
    spec: &BlockSpec,
    mode_prob: f64,
    lr: f64,
) -> Result<f64> {
    trainer.train_step(batch, spec, Objective::MethodB { mode_prob }, lr)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Peak learning rate; held for the first half of training, then decayed
    /// linearly to a tenth of it.
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 30, batch_size: 16, lr: 2e-3, seed: 7 }
    }
}

impl TrainConfig {
    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        let frac = step as f64 / total.max(1) as f64;
        if frac < 0.5 {
            self.lr
        } else {
            self.lr * (1.0 - 1.8 * (frac - 0.5))
        }
    }
}

/// Trains for `cfg.epochs` passes over `data` in seeded shuffled order and
/// returns the mean loss of every epoch.
pub fn fit(
    trainer: &mut Trainer,
    data: &[Utterance],
    spec: &BlockSpec,
    objective: Objective,
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    objective.validate(spec)?;
    if data.is_empty() || cfg.batch_size == 0 {
        return Err(contract("training needs data and a positive batch size"));
    }
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let per_epoch = data.len().div_ceil(cfg.batch_size);
    let total = per_epoch * cfg.epochs;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut order_rng);
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Utterance> = chunk.iter().map(|&i| data[i].clone()).collect();
            sum += trainer.train_step(&batch, spec, objective, cfg.lr_at(step, total))? * batch.len() as f64;
            step += 1;
        }
        history.push(sum / data.len() as f64);
    }
    Ok(history)
}

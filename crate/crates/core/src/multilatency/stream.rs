use std::ops::Range;

use crate::attention::AttentionMask;
use crate::blocking::{Block, BlockSpec, FrameSource};
use crate::encoder::ContextVector;
use crate::error::{contract, shape, Result};
use crate::model::TransducerModel;
use crate::par;
use crate::tensor::Tensor;
use crate::transducer::{beam_search_block, greedy_decode_block, DecoderState, Emission, Hypothesis, Token, EOS};

use super::{partition_method_b, LatencyConfig, Method};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecodeOptions {
    /// 1 selects greedy decoding.
    pub beam_width: usize,
    pub max_symbols: usize,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self { beam_width: 1, max_symbols: 3 }
    }
}

/// What the orchestrator needs from a model: block encoding with an
/// inherited context, and resumable decoding.
pub trait StreamingModel: Sync {
    type Context: Clone + Send + Sync;
    type State: Clone + Send + Sync;

    fn initial_context(&self) -> Self::Context;
    fn initial_state(&self) -> Self::State;
    /// One output row per block position, plus the next context.
    fn encode(&self, block: &Block, context: &Self::Context, mask: &AttentionMask) -> Result<(Tensor, Self::Context)>;
    /// Decodes rows of `h`, numbered from `first_frame`, continuing `state`.
    fn decode(
        &self,
        h: &Tensor,
        state: &Self::State,
        first_frame: usize,
        opts: &DecodeOptions,
    ) -> Result<(Vec<Emission>, Self::State)>;
}

impl StreamingModel for TransducerModel {
    type Context = ContextVector;
    type State = DecoderState;

    fn initial_context(&self) -> ContextVector {
        self.encoder().init_context()
    }

    fn initial_state(&self) -> DecoderState {
        DecoderState::start(self)
    }

    fn encode(&self, block: &Block, context: &ContextVector, mask: &AttentionMask) -> Result<(Tensor, ContextVector)> {
        self.encoder().encode_positions(block, context, mask)
    }

    fn decode(
        &self,
        h: &Tensor,
        state: &DecoderState,
        first_frame: usize,
        opts: &DecodeOptions,
    ) -> Result<(Vec<Emission>, DecoderState)> {
        if opts.beam_width <= 1 {
            return greedy_decode_block(self, h, state, opts.max_symbols, first_frame);
        }
        let start = Hypothesis::initial(state.clone());
        let beams = beam_search_block(self, h, &[start], opts.beam_width, opts.max_symbols, first_frame)?;
        let best = beams.into_iter().next().expect("beam search keeps at least one hypothesis");
        let emissions = best.emissions();
        Ok((emissions, best.state))
    }
}

/// Growable frame source fed by [`Streamer::push`].
#[derive(Clone, Debug, PartialEq)]
pub struct FrameBuffer {
    d_feat: usize,
    data: Vec<f64>,
}

impl FrameBuffer {
    pub fn new(d_feat: usize) -> Self {
        Self { d_feat, data: Vec::new() }
    }
}

impl FrameSource for FrameBuffer {
    fn d_feat(&self) -> usize {
        self.d_feat
    }

    fn len(&self) -> usize {
        self.data.len() / self.d_feat
    }

    fn frame(&self, idx: usize) -> &[f64] {
        &self.data[idx * self.d_feat..(idx + 1) * self.d_feat]
    }
}

/// The part of a source the orchestrator's clock has released.
struct Clocked<'a, S: ?Sized> {
    inner: &'a S,
    clock: usize,
}

impl<S: FrameSource + ?Sized> FrameSource for Clocked<'_, S> {
    fn d_feat(&self) -> usize {
        self.inner.d_feat()
    }

    fn len(&self) -> usize {
        self.inner.len().min(self.clock)
    }

    fn frame(&self, idx: usize) -> &[f64] {
        self.inner.frame(idx)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Path {
    Committed,
    Provisional,
}

/// When the tokens of one target region were first surfaced on one path.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceEntry {
    pub path: Path,
    pub tokens: Vec<Token>,
    /// One past the region's last frame.
    pub region_end: usize,
    /// Orchestrator clock, in frames, when the tokens were output.
    pub clock: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepOutput {
    /// Frames released to the encoders after this step.
    pub clock: usize,
    /// Tokens committed by this step.
    pub primary_tokens: Vec<Token>,
    /// The current provisional tail; replaces any earlier tail.
    pub aux_tokens: Vec<Token>,
    pub done: bool,
}

struct Job<'a, C> {
    block: Block,
    mask: AttentionMask,
    context: &'a C,
}

/// One stream's orchestration state.
pub struct Streamer<'m, M: StreamingModel, S: FrameSource = FrameBuffer> {
    model: &'m M,
    config: LatencyConfig,
    source: S,
    closed: bool,
    clock: usize,
    hops: usize,
    done: bool,
    exhausted: bool,
    primary_context: M::Context,
    /// Next primary block to encode.
    next_block: isize,
    aux_contexts: Vec<M::Context>,
    decoder: M::State,
    committed: Vec<Token>,
    committed_end: usize,
    provisional: Vec<Token>,
    trace: Vec<TraceEntry>,
}

impl<'m, M: StreamingModel> Streamer<'m, M, FrameBuffer> {
    pub fn new(model: &'m M, config: LatencyConfig, d_feat: usize) -> Self {
        Self::over(model, config, FrameBuffer::new(d_feat), false)
    }

    /// Appends frames to the stream.
    pub fn push(&mut self, frames: &Tensor) -> Result<()> {
        if self.done {
            return Err(contract("frames pushed after the stream finished"));
        }
        if self.closed {
            return Err(contract("frames pushed after close"));
        }
        if frames.rows() > 0 && frames.cols() != self.source.d_feat {
            return Err(shape(format!("frames of width {} for a stream of width {}", frames.cols(), self.source.d_feat)));
        }
        self.source.data.extend_from_slice(frames.data());
        Ok(())
    }
}

impl<'m, M: StreamingModel, S: FrameSource> Streamer<'m, M, S> {
    /// Streams over an arbitrary source. With `closed`, the source already
    /// holds the whole stream; the clock still only releases one hop per step.
    pub fn over(model: &'m M, config: LatencyConfig, source: S, closed: bool) -> Self {
        let aux = config.aux_count();
        Self {
            model,
            config,
            source,
            closed,
            clock: 0,
            hops: 0,
            done: false,
            exhausted: false,
            primary_context: model.initial_context(),
            next_block: 1,
            aux_contexts: vec![model.initial_context(); if config.method == Method::A { aux } else { 0 }],
            decoder: model.initial_state(),
            committed: Vec::new(),
            committed_end: 0,
            provisional: Vec::new(),
            trace: Vec::new(),
        }
    }

    pub fn source(&self) -> &S {
        &self.source
    }

    /// Declares that no more frames will arrive.
    pub fn close(&mut self) {
        self.closed = true;
    }

    pub fn clock(&self) -> usize {
        self.clock
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// True once every frame has been processed (or the stream finished early).
    pub fn is_finished(&self) -> bool {
        self.done || self.exhausted
    }

    pub fn committed(&self) -> &[Token] {
        &self.committed
    }

    pub fn provisional(&self) -> &[Token] {
        &self.provisional
    }

    /// Frames whose transcript has been committed.
    pub fn committed_range(&self) -> Range<usize> {
        0..self.committed_end
    }

    /// Frames covered by the provisional tail.
    pub fn tail_range(&self) -> Range<usize> {
        if self.config.method.is_multiple() {
            self.committed_end..self.clock.max(self.committed_end)
        } else {
            self.committed_end..self.committed_end
        }
    }

    pub fn trace(&self) -> &[TraceEntry] {
        &self.trace
    }

    fn spec(&self) -> BlockSpec {
        self.config.primary_spec
    }

    /// Runs one step if enough frames are available; `None` otherwise.
    pub fn poll(&mut self) -> Result<Option<StepOutput>> {
        if self.done || self.exhausted {
            return Ok(None);
        }
        let avail = self.source.len();
        let nc = self.spec().n_center;
        if avail >= self.clock + nc || (self.closed && avail > self.clock) {
            return self.step().map(Some);
        }
        if self.closed && avail == self.clock {
            if self.config.method == Method::Single && self.hops > 0 {
                return self.step().map(Some);
            }
            self.exhausted = true;
        }
        Ok(None)
    }

    /// Releases the next hop of frames (or, for a closed single-mode stream
    /// whose frames are all released, flushes the remaining blocks) and runs
    /// every encoder pass that became possible.
    pub fn step(&mut self) -> Result<StepOutput> {
        if self.done {
            return Err(contract("step after the stream finished"));
        }
        if self.exhausted {
            return Err(contract("step after the stream was exhausted"));
        }
        let avail = self.source.len();
        let nc = self.spec().n_center;
        let flush = self.closed && avail == self.clock && self.hops > 0 && self.config.method == Method::Single;
        if !(avail >= self.clock + nc || (self.closed && avail > self.clock) || flush) {
            return Err(contract("no complete hop of frames available"));
        }
        if !flush {
            self.clock = (self.clock + nc).min(avail);
            self.hops += 1;
        }
        let stream_end = self.closed && self.clock == avail;
        let before = self.committed.len();
        match self.config.method {
            Method::Single => self.step_single(stream_end)?,
            Method::A => self.step_method_a()?,
            Method::B => self.step_method_b()?,
        }
        if stream_end && self.config.method.is_multiple() {
            self.exhausted = true;
        }
        Ok(StepOutput {
            clock: self.clock,
            primary_tokens: self.committed[before..].to_vec(),
            aux_tokens: self.provisional.clone(),
            done: self.done,
        })
    }

    fn materialize(&self, b: isize) -> Block {
        let view = Clocked { inner: &self.source, clock: self.clock };
        Block::materialize(&view, &self.spec(), b)
    }

    fn rows(h: &Tensor, r: Range<usize>) -> Tensor {
        h.slice_rows(r.start, r.len())
    }

    /// Appends primary tokens up to eos; returns whether eos was seen.
    fn commit(&mut self, emissions: &[Emission], region_end: usize, clock: usize) -> bool {
        let (tokens, eos) = until_eos(emissions.iter().map(|e| e.token));
        self.committed.extend_from_slice(&tokens);
        self.trace.push(TraceEntry { path: Path::Committed, tokens, region_end, clock });
        eos
    }

    fn step_single(&mut self, stream_end: bool) -> Result<()> {
        let spec = self.spec();
        let nc = spec.n_center as isize;
        let nr = spec.n_right as isize;
        loop {
            let b = self.next_block;
            let look_filled = b * nc + nr <= self.clock as isize;
            let exists = ((b - 1) * nc) < self.clock as isize;
            if !(exists && (look_filled || stream_end)) {
                break;
            }
            let block = self.materialize(b);
            let mask = block.attention_mask(0)?;
            let (h, c) = self.model.encode(&block, &self.primary_context, &mask)?;
            self.primary_context = c;
            self.next_block += 1;
            let target = Self::rows(&h, block.target_positions());
            let (em, state) = self.model.decode(&target, &self.decoder, block.center_range.start, &self.config.decode)?;
            self.decoder = state;
            self.committed_end = block.center_range.end;
            // nominal timing: a block's output waits for its full look-ahead
            if self.commit(&em, (b * nc) as usize, (b * nc + nr) as usize) {
                self.done = true;
                break;
            }
        }
        if stream_end && !self.done && ((self.next_block - 1) * nc) >= self.clock as isize {
            self.exhausted = true;
        }
        Ok(())
    }

    fn step_method_a(&mut self) -> Result<()> {
        let spec = self.spec();
        let n = spec.aux_count() as isize;
        let b = self.hops as isize - n;
        let mut jobs = Vec::with_capacity(n as usize + 1);
        if b >= 1 {
            let block = self.materialize(b);
            let mask = block.attention_mask(0)?;
            jobs.push(Job { block, mask, context: &self.primary_context });
        }
        for i in 1..=n {
            if b + i >= 1 {
                let block = self.materialize(b + i);
                let mask = block.attention_mask(i as usize)?;
                jobs.push(Job { block, mask, context: &self.aux_contexts[i as usize - 1] });
            }
        }
        let model = self.model;
        let results = par::map(&jobs, self.config.execution, |j| model.encode(&j.block, j.context, &j.mask));
        let mut encoded = Vec::with_capacity(jobs.len());
        for (job, r) in jobs.into_iter().zip(results) {
            encoded.push((job.block, r?));
        }
        let mut it = encoded.into_iter();
        if b >= 1 {
            let (block, (h, c)) = it.next().expect("primary job");
            self.primary_context = c;
            self.next_block = b + 1;
            let target = Self::rows(&h, block.target_positions());
            let (em, state) = self.model.decode(&target, &self.decoder, block.center_range.start, &self.config.decode)?;
            self.decoder = state;
            self.committed_end = block.center_range.end;
            if self.commit(&em, block.center_range.end, self.clock) {
                self.done = true;
                self.provisional.clear();
                return Ok(());
            }
        }
        let mut state = self.decoder.clone();
        let mut tail = Vec::new();
        let mut newest = Vec::new();
        for (block, (h, c)) in it {
            let i = (block.index - b) as usize;
            self.aux_contexts[i - 1] = c;
            let target = Self::rows(&h, block.target_positions());
            let (em, s) = self.model.decode(&target, &state, block.center_range.start, &self.config.decode)?;
            state = s;
            tail.extend(em.iter().map(|e| e.token));
            if i == n as usize {
                newest = em.iter().map(|e| e.token).collect();
            }
        }
        self.set_tail(tail, newest);
        Ok(())
    }

    fn step_method_b(&mut self) -> Result<()> {
        let spec = self.spec();
        let n = spec.aux_count() as isize;
        let b = self.hops as isize - n;
        let block = self.materialize(b);
        let mask = block.attention_mask(0)?;
        let initial;
        let context = if b >= 1 {
            &self.primary_context
        } else {
            initial = self.model.initial_context();
            &initial
        };
        let (h, c) = self.model.encode(&block, context, &mask)?;
        if b >= 1 {
            self.primary_context = c;
            self.next_block = b + 1;
        }
        let target = Self::rows(&h, block.target_positions());
        let (mut em, state) = self.model.decode(&target, &self.decoder, block.center_range.start, &self.config.decode)?;
        let look = Self::rows(&h, block.lookahead_positions());
        let (em_look, _) = self.model.decode(&look, &state, block.lookahead_range().start, &self.config.decode)?;
        em.extend_from_slice(&em_look);
        let (primary, aux) = partition_method_b(&em, &block)?;
        if b >= 1 {
            self.decoder = state;
            self.committed_end = block.center_range.end;
            let as_emissions: Vec<Emission> = primary.iter().map(|&token| Emission { token, frame: 0 }).collect();
            if self.commit(&as_emissions, block.center_range.end, self.clock) {
                self.done = true;
                self.provisional.clear();
                return Ok(());
            }
        }
        let newest_start = self.clock.saturating_sub(spec.n_center).max(block.lookahead_range().start);
        let newest = em_look.iter().filter(|e| e.frame >= newest_start).map(|e| e.token).collect();
        self.set_tail(aux, newest);
        Ok(())
    }

    fn set_tail(&mut self, tail: Vec<Token>, newest: Vec<Token>) {
        let (tail, eos) = until_eos(tail);
        self.provisional = tail;
        let (newest, _) = until_eos(newest);
        self.trace.push(TraceEntry { path: Path::Provisional, tokens: newest, region_end: self.clock, clock: self.clock });
        if eos {
            self.done = true;
        }
    }

    /// The transcript: committed tokens followed by the final provisional tail.
    /// A closed stream is first run to its end.
    pub fn finalize(&mut self) -> Result<Vec<Token>> {
        if self.hops == 0 {
            return Err(contract("finalize before any step"));
        }
        if !self.done && !self.exhausted {
            if !self.closed {
                return Err(contract("finalize on an open stream that has not finished"));
            }
            while self.poll()?.is_some() {}
        }
        let mut out = self.committed.clone();
        out.extend_from_slice(&self.provisional);
        Ok(out)
    }
}

fn until_eos(tokens: impl IntoIterator<Item = Token>) -> (Vec<Token>, bool) {
    let mut out = Vec::new();
    for t in tokens {
        if t == EOS {
            return (out, true);
        }
        out.push(t);
    }
    (out, false)
}

/// Everything one streamed utterance produced.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamOutcome {
    pub transcript: Vec<Token>,
    pub steps: Vec<StepOutput>,
    pub trace: Vec<TraceEntry>,
}

/// Feeds `frames` one hop at a time, polling after each push, then closes the
/// stream and finalizes. Stops feeding once the stream reports done.
pub fn run_stream<M: StreamingModel>(model: &M, config: LatencyConfig, frames: &Tensor) -> Result<StreamOutcome> {
    if frames.rows() == 0 {
        return Err(crate::error::Error::EmptyInput("cannot stream an empty utterance".into()));
    }
    let mut s = Streamer::new(model, config, frames.cols());
    let nc = config.primary_spec.n_center;
    let mut steps = Vec::new();
    let mut t = 0;
    while t < frames.rows() && !s.is_done() {
        let n = nc.min(frames.rows() - t);
        s.push(&frames.slice_rows(t, n))?;
        t += n;
        while let Some(out) = s.poll()? {
            steps.push(out);
        }
    }
    if !s.is_done() {
        s.close();
        while let Some(out) = s.poll()? {
            steps.push(out);
        }
    }
    let transcript = s.finalize()?;
    Ok(StreamOutcome { transcript, steps, trace: s.trace().to_vec() })
}

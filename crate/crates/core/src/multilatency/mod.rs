//! Multi-latency streaming: a look-ahead primary encoder whose output is
//! committed once its look-ahead has arrived, plus zero-look-ahead auxiliary
//! recognition of the not yet committed tail.

mod stream;
mod train;

use std::fmt;
use std::str::FromStr;

pub use stream::{
    run_stream, DecodeOptions, FrameBuffer, Path, StepOutput, StreamOutcome, StreamingModel, Streamer, TraceEntry,
};
pub use train::{
    fit, train_step_method_a, train_step_method_b, training_target, utterance_loss, LossPlan, Objective, TrainConfig,
    Trainer,
};

use crate::blocking::{Block, BlockSpec};
use crate::error::{contract, Error, Result};
use crate::par::Execution;
use crate::transducer::{Emission, Token};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    /// One look-ahead encoder; output waits for the look-ahead.
    Single,
    /// Primary plus shifted, suffix-masked auxiliary passes sharing its parameters.
    A,
    /// One pass per block recognizing both target and look-ahead frames.
    B,
}

impl Method {
    pub fn is_multiple(self) -> bool {
        self != Method::Single
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Single => "single",
            Method::A => "multiple-A",
            Method::B => "multiple-B",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "single" => Ok(Method::Single),
            "a" | "multiple-a" => Ok(Method::A),
            "b" | "multiple-b" => Ok(Method::B),
            _ => Err(Error::Config(format!("unknown mode `{s}` (expected single, multiple-A or multiple-B)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatencyConfig {
    pub primary_spec: BlockSpec,
    pub method: Method,
    pub seed: u64,
    pub decode: DecodeOptions,
    /// How independent encoder passes within one step are executed.
    pub execution: Execution,
}

impl LatencyConfig {
    pub fn new(primary_spec: BlockSpec, method: Method) -> Result<Self> {
        if method.is_multiple() {
            primary_spec.check_multi_latency()?;
        }
        Ok(Self { primary_spec, method, seed: 0, decode: DecodeOptions::default(), execution: Execution::default() })
    }

    /// Number of auxiliary passes, `Nr / Nc`; zero for single mode.
    pub fn aux_count(&self) -> usize {
        if self.method.is_multiple() {
            self.primary_spec.aux_count()
        } else {
            0
        }
    }
}

/// Splits one block's decoded emissions at the boundary between its target
/// and look-ahead frames, preserving order.
pub fn partition_method_b(emissions: &[Emission], block: &Block) -> Result<(Vec<Token>, Vec<Token>)> {
    let target = block.center_range.clone();
    let (la0, la1) = block.spec.lookahead_span(block.index);
    let mut primary = Vec::new();
    let mut aux = Vec::new();
    for e in emissions {
        let f = e.frame as isize;
        if target.contains(&e.frame) {
            primary.push(e.token);
        } else if f >= la0 && f < la1 {
            aux.push(e.token);
        } else {
            return Err(contract(format!(
                "emission at frame {} outside block {} decoded region",
                e.frame, block.index
            )));
        }
    }
    Ok((primary, aux))
}

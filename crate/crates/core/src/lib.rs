//! Multi-latency block-streaming transducer engine.
//!
//! A contextual block encoder with look-ahead drives a transducer head; at
//! stream time, zero-look-ahead auxiliary passes cover the look-ahead region
//! so the composed system can emit output without structural delay.

pub mod attention;
pub mod blocking;
pub mod checkpoint;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod model;
pub mod multilatency;
pub mod nn;
pub mod optim;
pub mod par;
pub mod params;
pub mod synth;
pub mod tensor;
pub mod transducer;

pub use attention::{masked_self_attention, AttentionMask};
pub use blocking::{delay_ms, segment, suffix_mask, Block, BlockSpec, FrameSource};
pub use encoder::{BlockEncoding, ContextVector, Encoder, EncoderConfig};
pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use model::{ModelConfig, TransducerModel};
pub use tensor::{GradBuffer, ParamId, ParamSet, Tensor};
pub use transducer::{Token, Vocabulary, BLANK, EOS};

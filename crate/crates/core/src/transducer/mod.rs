//! Transducer head: label encoder, joint network, alignment-lattice loss and
//! block-resumable greedy and beam decoding.

mod decode;
mod joint;
mod label;
mod loss;

pub use decode::{beam_search_block, greedy_decode_block, DecoderState, Emission, Hypothesis};
pub use joint::JointNetwork;
pub use label::{LabelEncoder, LabelEncoderState};
pub use loss::{rnnt_loss, rnnt_loss_graph, transducer_nll};


use crate::error::{contract, Result};

pub type Token = usize;

pub const BLANK: Token = 0;
pub const EOS: Token = 1;

/// Output alphabet: id 0 is blank, id 1 is end-of-sequence, the rest are content.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    size: usize,
}

impl Vocabulary {
    pub fn new(size: usize) -> Result<Self> {
        if size < 3 {
            return Err(contract(format!("vocabulary of {size} cannot hold blank, eos and a content token")));
        }
        Ok(Self { size })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn blank(&self) -> Token {
        BLANK
    }

    pub fn eos(&self) -> Token {
        EOS
    }

    pub fn content_tokens(&self) -> std::ops::Range<Token> {
        2..self.size
    }

    /// Rejects blanks and out-of-range ids in an emitted or target sequence.
    pub fn check_sequence(&self, tokens: &[Token]) -> Result<()> {
        for &t in tokens {
            if t == BLANK {
                return Err(contract("token sequence contains blank"));
            }
            if t >= self.size {
                return Err(contract(format!("token {t} outside vocabulary of {}", self.size)));
            }
        }
        Ok(())
    }
}

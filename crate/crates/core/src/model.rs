//! The CBS-T model: block encoder, label encoder and joint network over one
//! parameter set.

use std::path::Path;

use crate::checkpoint;
use crate::encoder::{CbsEncoder, Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::params::{Init, Lookup, ParamBuilder};
use crate::tensor::{ParamSet, Tensor};
use crate::transducer::{JointNetwork, LabelEncoder, Vocabulary};

const META_CONFIG: &str = "meta.config";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub d_feat: usize,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub vocab_size: usize,
    pub joint_dim: usize,
}

impl ModelConfig {
    /// Desk-scale defaults: width 32, two layers, four heads.
    pub fn new(d_feat: usize, vocab_size: usize) -> Self {
        Self { d_feat, d_model: 32, layers: 2, heads: 4, ff_dim: 64, vocab_size, joint_dim: 32 }
    }

    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            d_feat: self.d_feat,
            d_model: self.d_model,
            layers: self.layers,
            heads: self.heads,
            ff_dim: self.ff_dim,
        }
    }

    fn to_meta(self) -> Tensor {
        let v = [self.d_feat, self.d_model, self.layers, self.heads, self.ff_dim, self.vocab_size, self.joint_dim];
        Tensor::vector(v.iter().map(|&x| x as f64).collect())
    }

    fn from_meta(t: &Tensor) -> Result<Self> {
        let v = t.data();
        if t.shape() != [7] || v.iter().any(|x| *x < 0.0 || x.fract() != 0.0) {
            return Err(Error::Checkpoint(format!("malformed `{META_CONFIG}` array")));
        }
        let u = |i: usize| v[i] as usize;
        Ok(Self { d_feat: u(0), d_model: u(1), layers: u(2), heads: u(3), ff_dim: u(4), vocab_size: u(5), joint_dim: u(6) })
    }
}

/// All trainable parameters plus the layouts that index into them.
#[derive(Clone, Debug)]
pub struct TransducerModel {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub encoder: CbsEncoder,
    pub label: LabelEncoder,
    pub joint: JointNetwork,
    pub vocab: Vocabulary,
}

struct Layout {
    encoder: CbsEncoder,
    label: LabelEncoder,
    joint: JointNetwork,
}

fn build(b: &mut dyn ParamBuilder, config: &ModelConfig) -> Result<Layout> {
    Ok(Layout {
        encoder: CbsEncoder::build(b, config.encoder())?,
        label: LabelEncoder::build(b, config.vocab_size, config.d_model)?,
        joint: JointNetwork::build(b, config.d_model, config.joint_dim, config.vocab_size)?,
    })
}

impl TransducerModel {
    /// Freshly initialized model; the same seed gives bit-identical parameters.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let vocab = Vocabulary::new(config.vocab_size)?;
        let mut params = ParamSet::new();
        let layout = build(&mut Init::new(&mut params, seed), &config)?;
        Ok(Self::assemble(config, params, layout, vocab))
    }

    /// Rebinds an existing parameter set, checking every name and shape.
    pub fn from_params(config: ModelConfig, params: ParamSet) -> Result<Self> {
        let vocab = Vocabulary::new(config.vocab_size)?;
        let layout = build(&mut Lookup(&params), &config)?;
        Ok(Self::assemble(config, params, layout, vocab))
    }

    fn assemble(config: ModelConfig, params: ParamSet, layout: Layout, vocab: Vocabulary) -> Self {
        Self { config, params, encoder: layout.encoder, label: layout.label, joint: layout.joint, vocab }
    }

    pub fn encoder(&self) -> Encoder<'_> {
        Encoder { params: &self.params, layout: &self.encoder }
    }

    /// Parameters plus a leading `meta.config` array holding the hyperparameters.
    pub fn to_checkpoint(&self) -> ParamSet {
        let mut out = ParamSet::new();
        out.insert(META_CONFIG, self.config.to_meta()).expect("fresh set");
        for (_, name, t) in self.params.iter() {
            out.insert(name, t.clone()).expect("names are unique");
        }
        out
    }

    pub fn from_checkpoint(stored: &ParamSet) -> Result<Self> {
        let meta = stored
            .by_name(META_CONFIG)
            .ok_or_else(|| Error::Checkpoint(format!("missing `{META_CONFIG}`")))?;
        let config = ModelConfig::from_meta(meta)?;
        let mut params = ParamSet::new();
        for (_, name, t) in stored.iter().filter(|(_, n, _)| !n.starts_with("meta.")) {
            params.insert(name, t.clone())?;
        }
        let model = Self::from_params(config, params)?;
        if model.params.len() + 1 != stored.len() {
            return Err(Error::Checkpoint("checkpoint holds unknown arrays".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        checkpoint::save(&self.to_checkpoint(), path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&checkpoint::load(path)?)
    }
}

//! Building parameter layouts: fresh seeded initialization or lookup by name.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{LayerNorm, Linear};
use crate::tensor::{ParamId, ParamSet, Tensor};

/// Source of named parameters while a layer layout is assembled.
pub trait ParamBuilder {
    /// A tensor initialized uniform in ±1/√fan_in.
    fn tensor(&mut self, name: &str, shape: Vec<usize>, fan_in: usize) -> Result<ParamId>;
    fn constant(&mut self, name: &str, shape: Vec<usize>, value: f64) -> Result<ParamId>;

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Result<Linear> {
        Ok(Linear {
            w: self.tensor(&format!("{name}.w"), vec![fan_in, fan_out], fan_in)?,
            b: self.tensor(&format!("{name}.b"), vec![fan_out], fan_in)?,
        })
    }

    fn layer_norm(&mut self, name: &str, dim: usize) -> Result<LayerNorm> {
        Ok(LayerNorm {
            gamma: self.constant(&format!("{name}.gamma"), vec![dim], 1.0)?,
            beta: self.constant(&format!("{name}.beta"), vec![dim], 0.0)?,
        })
    }
}

/// Creates parameters with a seeded generator.
pub struct Init<'a> {
    pub params: &'a mut ParamSet,
    rng: ChaCha8Rng,
}

impl<'a> Init<'a> {
    pub fn new(params: &'a mut ParamSet, seed: u64) -> Self {
        Self { params, rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl ParamBuilder for Init<'_> {
    fn tensor(&mut self, name: &str, shape: Vec<usize>, fan_in: usize) -> Result<ParamId> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let t = Tensor::uniform(shape, bound, &mut self.rng);
        self.params.insert(name, t)
    }

    fn constant(&mut self, name: &str, shape: Vec<usize>, value: f64) -> Result<ParamId> {
        let n = shape.iter().product();
        self.params.insert(name, Tensor::new(shape, vec![value; n])?)
    }
}

/// Resolves parameters that already exist, checking their shapes.
pub struct Lookup<'a>(pub &'a ParamSet);

impl Lookup<'_> {
    fn find(&self, name: &str, shape: &[usize]) -> Result<ParamId> {
        let id = self
            .0
            .id(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
        if self.0.get(id).shape() != shape {
            return Err(Error::Checkpoint(format!(
                "parameter `{name}` has shape {:?}, expected {shape:?}",
                self.0.get(id).shape()
            )));
        }
        Ok(id)
    }
}

impl ParamBuilder for Lookup<'_> {
    fn tensor(&mut self, name: &str, shape: Vec<usize>, _fan_in: usize) -> Result<ParamId> {
        self.find(name, &shape)
    }

    fn constant(&mut self, name: &str, shape: Vec<usize>, _value: f64) -> Result<ParamId> {
        self.find(name, &shape)
    }
}

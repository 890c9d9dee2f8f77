//! Network definitions and checkpoint persistence.

mod checkpoint;
mod detector;
mod generator;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, Checkpoint, StoredParam, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use detector::{DetectorKind, DetectorNet, Label, DETECTOR_INPUT};
pub use generator::{GeneratorNet, GENERATOR_CHANNELS, GENERATOR_RECEPTIVE_RADIUS};

use rand::Rng;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::param::{xavier_init, Parameter};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Anything with an ordered, uniquely named parameter list and a differentiable forward pass.
pub trait Model<T: Scalar> {
    /// Tag written into checkpoints.
    fn kind_tag(&self) -> String;
    fn params(&self) -> &[Parameter<T>];
    fn params_mut(&mut self) -> &mut [Parameter<T>];
    /// Forward pass with parameters already bound to `vars` (same order as [`Model::params`]).
    fn forward(&self, g: &mut Graph<T>, vars: &[Var], x: Var) -> Result<Var>;

    fn param_count(&self) -> usize {
        self.params().iter().map(Parameter::len).sum()
    }
}

/// Xavier-initialised `[c_out, c_in, k, k]` weight plus a zero bias.
pub(crate) fn conv_params<T: Scalar, R: Rng>(
    rng: &mut R,
    name: &str,
    c_in: usize,
    c_out: usize,
    k: usize,
) -> Result<[Parameter<T>; 2]> {
    let w = xavier_init(&[c_out, c_in, k, k], k * k * c_in, k * k * c_out, rng)?;
    Ok([
        Parameter::new(format!("{name}.weight"), w),
        Parameter::new(format!("{name}.bias"), Tensor::zeros([c_out])),
    ])
}

pub(crate) fn dense_params<T: Scalar, R: Rng>(
    rng: &mut R,
    name: &str,
    fan_in: usize,
    fan_out: usize,
) -> Result<[Parameter<T>; 2]> {
    let w = xavier_init(&[fan_in, fan_out], fan_in, fan_out, rng)?;
    Ok([
        Parameter::new(format!("{name}.weight"), w),
        Parameter::new(format!("{name}.bias"), Tensor::zeros([fan_out])),
    ])
}

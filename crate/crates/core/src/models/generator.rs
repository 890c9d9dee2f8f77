use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{conv_params, Model};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::param::{bind, Parameter};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Channel plan of the seven 3x3 stride-1 convolutions.
pub const GENERATOR_CHANNELS: [usize; 8] = [3, 64, 64, 64, 128, 128, 128, 3];

/// Seven stacked 3x3 convolutions see 7 pixels in every direction.
pub const GENERATOR_RECEPTIVE_RADIUS: usize = 7;

const KIND: &str = "generator";
const KIND_LINEAR_OUT: &str = "generator-linear-out";

/// Fully convolutional anti-forensic generator: `G(I) = I + relu(conv7(...relu(conv1(I))))`.
///
/// No pooling or striding anywhere, so it accepts any spatial size and preserves it.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorNet<T> {
    params: Vec<Parameter<T>>,
    final_relu: bool,
}

impl<T: Scalar> GeneratorNet<T> {
    pub fn build(seed: u64) -> Result<Self> {
        Self::build_with(seed, true)
    }

    /// `final_relu = false` drops the activation on the last convolution, letting the
    /// residual take either sign.
    pub fn build_with(seed: u64, final_relu: bool) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(14);
        for (i, pair) in GENERATOR_CHANNELS.windows(2).enumerate() {
            params.extend(conv_params(&mut rng, &format!("conv{}", i + 1), pair[0], pair[1], 3)?);
        }
        Ok(Self { params, final_relu })
    }

    pub fn final_relu(&self) -> bool {
        self.final_relu
    }

    /// Copy with every weight and bias set to zero (the identity map).
    pub fn zeroed(&self) -> Self {
        let mut out = self.clone();
        for p in &mut out.params {
            p.value_mut().iter_mut().for_each(|v| *v = T::zero());
        }
        out
    }

    pub(crate) fn from_kind_tag(tag: &str) -> Result<Self> {
        let final_relu = match tag {
            KIND => true,
            KIND_LINEAR_OUT => false,
            other => return Err(Error::Checkpoint(format!("`{other}` is not a generator checkpoint"))),
        };
        Ok(Self::build_with(0, final_relu)?.zeroed())
    }

    /// Inference on a batch `[N, 3, H, W]` without recording gradients to any parameter.
    pub fn apply(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let vars = bind(&mut g, &self.params, false);
        let x = g.constant(images.clone());
        let y = self.forward(&mut g, &vars, x)?;
        Ok(g.value(y).clone())
    }
}

impl<T: Scalar> Model<T> for GeneratorNet<T> {
    fn kind_tag(&self) -> String {
        if self.final_relu { KIND } else { KIND_LINEAR_OUT }.to_string()
    }

    fn params(&self) -> &[Parameter<T>] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    fn forward(&self, g: &mut Graph<T>, vars: &[Var], x: Var) -> Result<Var> {
        let [_, c, _, _] = g.value(x).dims4()?;
        if c != GENERATOR_CHANNELS[0] {
            return Err(Error::shape("generator", format!("expected 3 input channels, got {c}")));
        }
        let layers = vars.len() / 2;
        let mut h = x;
        for (i, wb) in vars.chunks(2).enumerate() {
            h = g.conv2d(h, wb[0], wb[1], 1, 1)?;
            if i + 1 < layers || self.final_relu {
                h = g.relu(h);
            }
        }
        g.add(x, h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_count_matches_layer_formula() {
        let g = GeneratorNet::<f32>::build(1).unwrap();
        let by_formula: usize = GENERATOR_CHANNELS.windows(2).map(|p| (9 * p[0] + 1) * p[1]).sum();
        assert_eq!(by_formula, 448_131);
        assert_eq!(g.param_count(), 448_131);
    }

    #[test]
    fn names_are_unique_and_biases_zero() {
        let g = GeneratorNet::<f32>::build(3).unwrap();
        let mut names: Vec<_> = g.params().iter().map(|p| p.name().to_string()).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), 14);
        for p in g.params().iter().filter(|p| p.name().ends_with("bias")) {
            assert!(p.value().data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn rejects_wrong_channel_count() {
        let g = GeneratorNet::<f64>::build(0).unwrap();
        assert!(g.apply(&Tensor::zeros([1, 1, 4, 4])).is_err());
    }

    #[test]
    fn final_relu_makes_residual_non_negative() {
        let g = GeneratorNet::<f64>::build(5).unwrap();
        let x = Tensor::from_fn([1, 3, 9, 9], |i| ((i * 37) % 11) as f64 / 11.0);
        let y = g.apply(&x).unwrap();
        assert!(y.data().iter().zip(x.data()).all(|(a, b)| a >= b));
        let lin = GeneratorNet::<f64>::build_with(5, false).unwrap();
        let y2 = lin.apply(&x).unwrap();
        assert!(y2.data().iter().zip(x.data()).any(|(a, b)| a < b));
    }
}

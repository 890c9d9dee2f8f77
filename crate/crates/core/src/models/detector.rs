use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{conv_params, dense_params, Model};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::kernels::PoolKind;
use crate::param::{bind, Parameter};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Fixed spatial input size of every detector.
pub const DETECTOR_INPUT: usize = 64;

/// Binary class. Logit column 0 is `Fake`, column 1 is `Real`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Fake = 0,
    Real = 1,
}

impl Label {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Fake => "fake",
            Label::Real => "real",
        }
    }

    /// One-hot rows `[n, 2]` for this class.
    pub fn one_hot<T: Scalar>(self, n: usize) -> Tensor<T> {
        Tensor::from_fn([n, 2], |i| if i % 2 == self.index() { T::one() } else { T::zero() })
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fake" => Ok(Label::Fake),
            "real" => Ok(Label::Real),
            _ => Err(Error::invalid(format!("unknown label `{s}`"))),
        }
    }
}

/// The four detector architectures of the zoo.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    /// Three conv-ReLU-maxpool stages (16/32/64), global average, dense head.
    PlainNet,
    /// Conv stem and two strided residual blocks, global average, dense head.
    ResMini,
    /// Fixed high-pass filter bank in front of a plain conv body.
    HiPassNet,
    /// Three stride-2 convolutions (16/32/64), global average, dense head.
    StrideNet,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 4] =
        [DetectorKind::PlainNet, DetectorKind::ResMini, DetectorKind::HiPassNet, DetectorKind::StrideNet];

    pub fn as_str(self) -> &'static str {
        match self {
            DetectorKind::PlainNet => "plainnet",
            DetectorKind::ResMini => "resmini",
            DetectorKind::HiPassNet => "hipassnet",
            DetectorKind::StrideNet => "stridenet",
        }
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DetectorKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown detector kind `{s}`")))
    }
}

/// Number of fixed high-pass filters: three kernels for each colour channel.
const HIGHPASS_FILTERS: usize = 9;

/// Zero-sum 3x3 kernels applied per colour channel.
fn highpass_bank<T: Scalar>() -> Tensor<T> {
    const KERNELS: [[f64; 9]; 3] = [
        [0.0, -1.0, 0.0, -1.0, 4.0, -1.0, 0.0, -1.0, 0.0],
        [0.0, 0.0, 0.0, -1.0, 2.0, -1.0, 0.0, 0.0, 0.0],
        [0.0, -1.0, 0.0, 0.0, 2.0, 0.0, 0.0, -1.0, 0.0],
    ];
    let mut w = Tensor::zeros([HIGHPASS_FILTERS, 3, 3, 3]);
    for c in 0..3 {
        for (k, kernel) in KERNELS.iter().enumerate() {
            let out = c * KERNELS.len() + k;
            let base = (out * 3 + c) * 9;
            for (i, &v) in kernel.iter().enumerate() {
                w.data_mut()[base + i] = T::from_f64_lossy(v);
            }
        }
    }
    w
}

/// Inputs in `[0, 1]` are centred and brought to 8-bit units before the first layer.
pub const INPUT_CENTER: f64 = 0.5;
pub const INPUT_SCALE: f64 = 255.0;

fn preprocess<T: Scalar>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    let shift = g.constant(Tensor::full(g.value(x).shape().to_vec(), T::from_f64_lossy(-INPUT_CENTER)));
    let centred = g.add(x, shift)?;
    Ok(g.scale(centred, T::from_f64_lossy(INPUT_SCALE)))
}

/// Binary real/fake classifier with a fixed `3 x 64 x 64` input.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectorNet<T> {
    kind: DetectorKind,
    params: Vec<Parameter<T>>,
}

impl<T: Scalar> DetectorNet<T> {
    pub fn build(kind: DetectorKind, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = &mut rng;
        let mut params = Vec::new();
        match kind {
            DetectorKind::PlainNet => {
                params.extend(conv_params(r, "conv1", 3, 16, 3)?);
                params.extend(conv_params(r, "conv2", 16, 32, 3)?);
                params.extend(conv_params(r, "conv3", 32, 64, 3)?);
                params.extend(dense_params(r, "fc", 64, 2)?);
            }
            DetectorKind::ResMini => {
                params.extend(conv_params(r, "stem", 3, 16, 3)?);
                for (name, c_in, c_out) in [("block1", 16, 32), ("block2", 32, 64)] {
                    params.extend(conv_params(r, &format!("{name}.down"), c_in, c_out, 4)?);
                    params.extend(conv_params(r, &format!("{name}.conv"), c_out, c_out, 3)?);
                    params.extend(conv_params(r, &format!("{name}.skip"), c_in, c_out, 2)?);
                }
                params.extend(dense_params(r, "fc", 64, 2)?);
            }
            DetectorKind::HiPassNet => {
                params.extend(conv_params(r, "conv1", HIGHPASS_FILTERS, 16, 3)?);
                params.extend(conv_params(r, "conv2", 16, 32, 3)?);
                params.extend(conv_params(r, "conv3", 32, 64, 3)?);
                params.extend(dense_params(r, "fc", 64, 2)?);
            }
            DetectorKind::StrideNet => {
                params.extend(conv_params(r, "conv1", 3, 16, 4)?);
                params.extend(conv_params(r, "conv2", 16, 32, 4)?);
                params.extend(conv_params(r, "conv3", 32, 64, 4)?);
                params.extend(dense_params(r, "fc", 64, 2)?);
            }
        }
        Ok(Self { kind, params })
    }

    pub fn kind(&self) -> DetectorKind {
        self.kind
    }

    /// Response of the fixed high-pass front end (`hipassnet` only).
    pub fn highpass_response(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        if self.kind != DetectorKind::HiPassNet {
            return Err(Error::invalid(format!("{} has no high-pass front end", self.kind)));
        }
        let mut g = Graph::new();
        let x = g.constant(images.clone());
        let y = self.highpass(&mut g, x)?;
        Ok(g.value(y).clone())
    }

    fn highpass(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let w = g.constant(highpass_bank());
        let b = g.constant(Tensor::zeros([HIGHPASS_FILTERS]));
        g.conv2d(x, w, b, 1, 0)
    }

    /// Logits `[N, 2]` with parameters held constant.
    pub fn logits(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let vars = bind(&mut g, &self.params, false);
        let x = g.constant(images.clone());
        let y = self.forward(&mut g, &vars, x)?;
        Ok(g.value(y).clone())
    }

    /// Arg-max class per image; ties go to `Fake`.
    pub fn predict(&self, images: &Tensor<T>) -> Result<Vec<Label>> {
        let z = self.logits(images)?;
        Ok(z.data().chunks(2).map(|r| if r[1] > r[0] { Label::Real } else { Label::Fake }).collect())
    }

    fn conv_relu(&self, g: &mut Graph<T>, x: Var, wb: &[Var], stride: usize, pad: usize) -> Result<Var> {
        let y = g.conv2d(x, wb[0], wb[1], stride, pad)?;
        Ok(g.relu(y))
    }
}

impl<T: Scalar> Model<T> for DetectorNet<T> {
    fn kind_tag(&self) -> String {
        format!("detector:{}", self.kind)
    }

    fn params(&self) -> &[Parameter<T>] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    fn forward(&self, g: &mut Graph<T>, v: &[Var], x: Var) -> Result<Var> {
        let [_, c, h, w] = g.value(x).dims4()?;
        if c != 3 || h != DETECTOR_INPUT || w != DETECTOR_INPUT {
            return Err(Error::shape(
                "detector",
                format!("{} expects 3x{DETECTOR_INPUT}x{DETECTOR_INPUT} input, got {c}x{h}x{w}", self.kind),
            ));
        }
        let x = preprocess(g, x)?;
        let features = match self.kind {
            DetectorKind::PlainNet => {
                let mut h = x;
                for wb in v[..6].chunks(2) {
                    h = self.conv_relu(g, h, wb, 1, 1)?;
                    h = g.pool2d(h, PoolKind::Max, 2, 2)?;
                }
                g.global_avg_pool(h)?
            }
            DetectorKind::ResMini => {
                let mut h = self.conv_relu(g, x, &v[0..2], 1, 1)?;
                for block in v[2..14].chunks(6) {
                    let a = self.conv_relu(g, h, &block[0..2], 2, 1)?;
                    let b = g.conv2d(a, block[2], block[3], 1, 1)?;
                    let skip = g.conv2d(h, block[4], block[5], 2, 0)?;
                    let sum = g.add(b, skip)?;
                    h = g.relu(sum);
                }
                g.global_avg_pool(h)?
            }
            DetectorKind::HiPassNet => {
                let hp = self.highpass(g, x)?;
                let h = self.conv_relu(g, hp, &v[0..2], 1, 0)?;
                let h = g.pool2d(h, PoolKind::Max, 2, 2)?;
                let h = self.conv_relu(g, h, &v[2..4], 1, 1)?;
                let h = g.pool2d(h, PoolKind::Max, 2, 2)?;
                let h = self.conv_relu(g, h, &v[4..6], 1, 1)?;
                g.global_avg_pool(h)?
            }
            DetectorKind::StrideNet => {
                let mut h = x;
                for wb in v[..6].chunks(2) {
                    h = self.conv_relu(g, h, wb, 2, 1)?;
                }
                g.global_avg_pool(h)?
            }
        };
        let n = v.len();
        g.dense(features, v[n - 2], v[n - 1])
    }
}

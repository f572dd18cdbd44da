//! Siamese projection heads mapping encoder features into the shared
//! embedding space, plus truncated-normal parameter initialization.
//!
//! Both modalities use three cascaded fully connected layers sharing one set
//! of weights per modality; the image branch is ReLU-activated, the voice
//! branch Tanh.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::graph::{ParamSet, Tape, Var};
use crate::layers::{Activation, DenseLayer};
use crate::tensor::Tensor;

/// Truncated-normal draw: mean 0, stddev 1/√fan_in, resampled until within
/// ±2 stddev.
pub fn trunc_normal(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let sigma = 1.0 / (fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    while data.len() < n {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= 2.0 {
            data.push(sigma * z);
        }
    }
    Tensor::new(shape.to_vec(), data).expect("consistent dims")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Modality {
    Image,
    Voice,
}

impl Modality {
    fn activation(self) -> Activation {
        match self {
            Modality::Image => Activation::Relu,
            Modality::Voice => Activation::Tanh,
        }
    }

    fn prefix(self) -> &'static str {
        match self {
            Modality::Image => "head.image",
            Modality::Voice => "head.voice",
        }
    }
}

/// Three cascaded dense layers with the modality's activation after each.
#[derive(Clone, Debug)]
pub struct ProjectionHead {
    pub modality: Modality,
    pub layers: Vec<DenseLayer>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl ProjectionHead {
    pub fn build(
        params: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        modality: Modality,
        in_dim: usize,
        hidden_dim: usize,
        out_dim: usize,
    ) -> Result<Self> {
        let dims = [in_dim, hidden_dim, hidden_dim, out_dim];
        let mut layers = Vec::with_capacity(3);
        for i in 0..3 {
            let (fan_in, fan_out) = (dims[i], dims[i + 1]);
            let w = trunc_normal(rng, &[fan_in, fan_out], fan_in);
            let b = trunc_normal(rng, &[fan_out], fan_in);
            layers.push(DenseLayer::new(
                params,
                &format!("{}.fc{}", modality.prefix(), i + 1),
                w,
                b,
                modality.activation(),
            )?);
        }
        Ok(Self { modality, layers, in_dim, out_dim })
    }

    /// Project a [B×in] feature batch to [B×out] representations.
    pub fn forward(&self, tape: &mut Tape, params: &ParamSet, x: Var) -> Result<Var> {
        if tape.value(x).dims2()?.1 != self.in_dim {
            return Err(Error::Contract(format!(
                "projection head expects width {}, got {:?}",
                self.in_dim,
                tape.value(x).shape()
            )));
        }
        let mut h = x;
        for layer in &self.layers {
            h = layer.forward(tape, params, h)?;
        }
        Ok(h)
    }

    pub fn infer(&self, params: &ParamSet, x: &Tensor) -> Result<Tensor> {
        if x.dims2()?.1 != self.in_dim {
            return Err(Error::Contract(format!(
                "projection head expects width {}, got {:?}",
                self.in_dim,
                x.shape()
            )));
        }
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.infer(params, &h)?;
        }
        Ok(h)
    }
}

//! Full model assembly: encoders, projection heads, and classifier heads over
//! one shared parameter set.

use crate::encoders::{ImageFeatureProvider, TinyCnn, VoiceEncoder};
use crate::error::{Error, Result};
use crate::graph::{ParamSet, Tape, Var};
use crate::losses::ClassifierHead;
use crate::mfcc::MfccConfig;
use crate::representation::{Modality, ProjectionHead};
use crate::seeding::{self, stream};
use crate::tensor::Tensor;

/// Pooled image feature width produced by the image path.
pub const IMAGE_FEAT_DIM: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageMode {
    /// Trainable-capable small conv stack on raw pixels (kept frozen after
    /// initialization; only the representation step trains on top of it).
    TinyCnn,
    /// Features loaded from per-image tensor files.
    Precomputed,
}

#[derive(Clone, Debug)]
pub struct ModelConfig {
    pub mfcc: MfccConfig,
    pub hidden_dim: usize,
    pub rep_dim: usize,
    pub n_classes: usize,
    pub dilation_override: Option<usize>,
    pub image_mode: ImageMode,
}

impl ModelConfig {
    pub fn with_defaults(n_classes: usize) -> Self {
        Self {
            mfcc: MfccConfig::default(),
            hidden_dim: 1024,
            rep_dim: 1024,
            n_classes,
            dilation_override: None,
            image_mode: ImageMode::TinyCnn,
        }
    }
}

/// The two-branch model: voice encoder + image provider feeding Siamese
/// projection heads and per-branch classifiers.
#[derive(Clone)]
pub struct ScrlModel {
    pub params: ParamSet,
    pub voice_encoder: VoiceEncoder,
    pub image_provider: ImageFeatureProvider,
    pub image_head: ProjectionHead,
    pub voice_head: ProjectionHead,
    pub image_classifier: ClassifierHead,
    pub voice_classifier: ClassifierHead,
    pub config: ModelConfig,
}

impl ScrlModel {
    /// Build all parameters from the seed's init stream, in a fixed order.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.mfcc.validate()?;
        if config.n_classes == 0 {
            return Err(Error::Contract("model needs at least one class".into()));
        }
        let mut params = ParamSet::new();
        let mut rng = seeding::rng_for(seed, stream::INIT);

        let voice_encoder =
            VoiceEncoder::build(&mut params, &mut rng, config.mfcc.flat_len(), config.dilation_override)?;
        let image_provider = match config.image_mode {
            ImageMode::TinyCnn => ImageFeatureProvider::TinyCnn(TinyCnn::build(&mut params, &mut rng, false)?),
            ImageMode::Precomputed => ImageFeatureProvider::Precomputed,
        };
        let image_head = ProjectionHead::build(
            &mut params,
            &mut rng,
            Modality::Image,
            IMAGE_FEAT_DIM,
            config.hidden_dim,
            config.rep_dim,
        )?;
        let voice_head = ProjectionHead::build(
            &mut params,
            &mut rng,
            Modality::Voice,
            voice_encoder.flat_dim(),
            config.hidden_dim,
            config.rep_dim,
        )?;
        let image_classifier =
            ClassifierHead::build(&mut params, &mut rng, "cls.image", config.rep_dim, config.n_classes)?;
        let voice_classifier =
            ClassifierHead::build(&mut params, &mut rng, "cls.voice", config.rep_dim, config.n_classes)?;

        Ok(Self {
            params,
            voice_encoder,
            image_provider,
            image_head,
            voice_head,
            image_classifier,
            voice_classifier,
            config,
        })
    }

    /// Tape forward for one batch: pooled image features (constant; the image
    /// backbone stays frozen per the optimization procedure) and raw voice
    /// inputs through the trainable voice encoder, both projected to
    /// representations.
    pub fn batch_forward(
        &self,
        tape: &mut Tape,
        image_feats: &Tensor,
        voice_inputs: &[&Tensor],
    ) -> Result<(Var, Var)> {
        let (b, d) = image_feats.dims2()?;
        if d != IMAGE_FEAT_DIM {
            return Err(Error::Shape(format!("image features must be B×{IMAGE_FEAT_DIM}, got {:?}", image_feats.shape())));
        }
        if voice_inputs.len() != b {
            return Err(Error::Shape(format!("{} voice inputs for image batch of {}", voice_inputs.len(), b)));
        }
        let img = tape.constant(image_feats.clone());
        let phi_i = self.image_head.forward(tape, &self.params, img)?;

        let mut voice_flat = Vec::with_capacity(b);
        for &v in voice_inputs {
            let x = tape.constant(v.clone());
            voice_flat.push(self.voice_encoder.forward(tape, &self.params, x)?);
        }
        let stacked = tape.stack_rows(&voice_flat)?;
        let phi_v = self.voice_head.forward(tape, &self.params, stacked)?;
        Ok((phi_i, phi_v))
    }

    /// Inference: pooled image features [B×512] → representations [B×rep].
    pub fn embed_image_features(&self, feats: &Tensor) -> Result<Tensor> {
        self.image_head.infer(&self.params, feats)
    }

    /// Inference: canonical voice inputs → representations [B×rep].
    pub fn embed_voice_inputs(&self, inputs: &[Tensor]) -> Result<Tensor> {
        let mut rows = Vec::with_capacity(inputs.len() * self.voice_encoder.flat_dim());
        for v in inputs {
            rows.extend_from_slice(self.voice_encoder.infer(&self.params, v)?.data());
        }
        let flat = Tensor::new(vec![inputs.len(), self.voice_encoder.flat_dim()], rows)?;
        self.voice_head.infer(&self.params, &flat)
    }
}

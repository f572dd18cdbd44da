//! Semantics encoders: the dilated 1-D convolutional voice network, a small
//! 2-D convolutional image feature extractor (stand-in for a large pretrained
//! backbone), and filter-activation normalization for either stack.

use std::path::Path;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{ParamSet, Tape, Var};
use crate::layers::{Conv2dLayer, ConvLayer1D};
use crate::representation::trunc_normal;
use crate::tensor::Tensor;
use crate::tensor_file;

/// Feature-map geometry produced by the image path before pooling.
pub const IMAGE_FEATURE_SHAPE: [usize; 3] = [7, 7, 512];

#[derive(Clone, Debug)]
pub enum VoiceLayer {
    Conv(ConvLayer1D),
    MaxPool { window: usize, stride: usize },
}

/// Five dilated conv layers with interleaved max pools; ReLU after each conv.
///
/// On a 24000-sample input the (length, channels) ladder is
/// (24000,1) (12000,6) (6000,12) (3000,12) (1500,24) (750,48) (375,48).
#[derive(Clone, Debug)]
pub struct VoiceEncoder {
    pub layers: Vec<VoiceLayer>,
    pub input_len: usize,
}

impl VoiceEncoder {
    /// Spec rows: (kernel, out_ch, stride, dilation), pool rows marked None.
    const PLAN: [(usize, usize, usize, usize); 5] =
        [(7, 1, 1, 3), (3, 6, 2, 2), (3, 12, 2, 2), (3, 24, 2, 2), (3, 48, 2, 2)];

    pub fn build(
        params: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        input_len: usize,
        dilation_override: Option<usize>,
    ) -> Result<Self> {
        let mut layers = Vec::new();
        let mut in_ch = 1;
        for (i, &(k, out_ch, stride, dilation)) in Self::PLAN.iter().enumerate() {
            let dilation = dilation_override.unwrap_or(dilation);
            let fan_in = k * in_ch;
            let w = trunc_normal(rng, &[k, in_ch, out_ch], fan_in);
            let b = trunc_normal(rng, &[out_ch], fan_in);
            layers.push(VoiceLayer::Conv(ConvLayer1D::new(
                params,
                &format!("voice.conv{}", i + 1),
                w,
                b,
                stride,
                dilation,
            )?));
            // Pools sit after the third and fifth convolutions.
            if i == 2 || i == 4 {
                layers.push(VoiceLayer::MaxPool { window: 2, stride: 2 });
            }
            in_ch = out_ch;
        }
        Ok(Self { layers, input_len })
    }

    /// (length, channels) after every layer, starting from `input_len`.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.layers.len());
        let mut len = self.input_len;
        let mut ch = 1;
        for layer in &self.layers {
            match layer {
                VoiceLayer::Conv(c) => {
                    len = c.out_len(len);
                    ch = c.out_ch;
                }
                VoiceLayer::MaxPool { window, stride } => {
                    len = crate::ops::same_padding(len, *window, *stride, 1).0;
                }
            }
            shapes.push((len, ch));
        }
        shapes
    }

    /// Length of the flattened output fed to the voice projection head.
    pub fn flat_dim(&self) -> usize {
        let (len, ch) = *self.layer_shapes().last().expect("non-empty stack");
        len * ch
    }

    /// Encode one voice input (rank-1, `input_len` samples) on the tape and
    /// flatten the final feature map.
    pub fn forward(&self, tape: &mut Tape, params: &ParamSet, x: Var) -> Result<Var> {
        if tape.value(x).numel() != self.input_len {
            return Err(Error::Shape(format!(
                "voice input length {} != expected {}",
                tape.value(x).numel(),
                self.input_len
            )));
        }
        let mut h = tape.reshape(x, vec![self.input_len, 1])?;
        for layer in &self.layers {
            h = match layer {
                VoiceLayer::Conv(c) => {
                    let y = c.forward(tape, params, h)?;
                    tape.relu(y)
                }
                VoiceLayer::MaxPool { window, stride } => tape.maxpool1d(h, *window, *stride)?,
            };
        }
        tape.reshape(h, vec![self.flat_dim()])
    }

    /// Forward without gradient recording; returns the flattened feature.
    pub fn infer(&self, params: &ParamSet, x: &Tensor) -> Result<Tensor> {
        if x.numel() != self.input_len {
            return Err(Error::Shape(format!(
                "voice input length {} != expected {}",
                x.numel(),
                self.input_len
            )));
        }
        let mut h = x.reshape(vec![self.input_len, 1])?;
        for layer in &self.layers {
            h = match layer {
                VoiceLayer::Conv(c) => {
                    let y = c.infer(params, &h)?;
                    Tensor::new(y.shape().to_vec(), crate::ops::relu_forward(y.data()))?
                }
                VoiceLayer::MaxPool { window, stride } => {
                    let (len, ch) = h.dims2()?;
                    let (y, _) = crate::ops::maxpool1d_forward(h.data(), len, ch, *window, *stride);
                    let (lout, _) = crate::ops::same_padding(len, *window, *stride, 1);
                    Tensor::new(vec![lout, ch], y)?
                }
            };
        }
        h.reshape(vec![self.flat_dim()])
    }
}

/// Small trainable conv stack mapping 224×224×3 to 7×7×512 (five stride-2
/// stages, ReLU after each), used where pretrained weights are out of reach.
#[derive(Clone, Debug)]
pub struct TinyCnn {
    pub layers: Vec<Conv2dLayer>,
}

impl TinyCnn {
    const CHANNELS: [usize; 6] = [3, 16, 32, 64, 128, 512];

    pub fn build(params: &mut ParamSet, rng: &mut ChaCha8Rng, trainable: bool) -> Result<Self> {
        let mut layers = Vec::new();
        for i in 0..5 {
            let (cin, cout) = (Self::CHANNELS[i], Self::CHANNELS[i + 1]);
            let fan_in = 3 * 3 * cin;
            let w = trunc_normal(rng, &[3, 3, cin, cout], fan_in);
            let b = trunc_normal(rng, &[cout], fan_in);
            layers.push(Conv2dLayer::new(params, &format!("img.conv{}", i + 1), w, b, 2, trainable)?);
        }
        Ok(Self { layers })
    }

    pub fn forward(&self, tape: &mut Tape, params: &ParamSet, x: Var) -> Result<Var> {
        let mut h = x;
        for layer in &self.layers {
            let y = layer.forward(tape, params, h)?;
            h = tape.relu(y);
        }
        Ok(h)
    }

    pub fn infer(&self, params: &ParamSet, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for layer in &self.layers {
            let y = layer.infer(params, &h)?;
            h = Tensor::new(y.shape().to_vec(), crate::ops::relu_forward(y.data()))?;
        }
        Ok(h)
    }
}

/// Where image features come from: a stored tensor per image, or the small
/// trainable conv stack applied to raw pixels.
#[derive(Clone, Debug)]
pub enum ImageFeatureProvider {
    Precomputed,
    TinyCnn(TinyCnn),
}

impl ImageFeatureProvider {
    /// Produce the pre-pooling 7×7×512 feature map for one image source.
    pub fn feature_map(&self, params: &ParamSet, source: &ImageSource) -> Result<Tensor> {
        match (self, source) {
            (ImageFeatureProvider::Precomputed, ImageSource::Path(path)) => {
                let t = tensor_file::read_tensor(path)?;
                if t.shape() != IMAGE_FEATURE_SHAPE {
                    return Err(Error::Format(format!(
                        "{}: stored feature shape {:?}, expected {:?}",
                        path.display(),
                        t.shape(),
                        IMAGE_FEATURE_SHAPE
                    )));
                }
                Ok(t)
            }
            (ImageFeatureProvider::TinyCnn(cnn), ImageSource::Path(path)) => {
                cnn.infer(params, &crate::ppm::read_image(path)?)
            }
            (ImageFeatureProvider::TinyCnn(cnn), ImageSource::Pixels(img)) => cnn.infer(params, img),
            (ImageFeatureProvider::Precomputed, ImageSource::Pixels(_)) => Err(Error::Contract(
                "precomputed provider needs a file path, not raw pixels".into(),
            )),
        }
    }

    /// Pooled 512-d image feature (global average over the spatial grid).
    pub fn pooled_feature(&self, params: &ParamSet, source: &ImageSource) -> Result<Tensor> {
        let map = self.feature_map(params, source)?;
        let (h, w, c) = map.dims3()?;
        Tensor::new(vec![c], crate::ops::gap2d_forward(map.data(), h, w, c))
    }
}

pub enum ImageSource<'a> {
    Path(&'a Path),
    Pixels(&'a Tensor),
}

// ---------------------------------------------------------------------------
// Filter-activation normalization
// ---------------------------------------------------------------------------

/// Per-filter mean activations, one entry per stack layer (None for pools).
#[derive(Clone, Debug)]
pub struct NormalizationStats {
    pub per_layer: Vec<Option<Vec<f64>>>,
}

/// A conv stack that normalization can walk layer by layer.
pub trait NormStack {
    fn n_layers(&self) -> usize;
    /// (weight id, bias id, out channels) for conv layers, None for pools.
    fn conv_params(&self, layer: usize) -> Option<(crate::graph::ParamId, crate::graph::ParamId, usize)>;
    /// Apply layer `layer` (convs include their ReLU) without recording.
    fn forward_layer(&self, params: &ParamSet, layer: usize, x: &Tensor) -> Result<Tensor>;
}

impl NormStack for VoiceEncoder {
    fn n_layers(&self) -> usize {
        self.layers.len()
    }

    fn conv_params(&self, layer: usize) -> Option<(crate::graph::ParamId, crate::graph::ParamId, usize)> {
        match &self.layers[layer] {
            VoiceLayer::Conv(c) => Some((c.w, c.b, c.out_ch)),
            VoiceLayer::MaxPool { .. } => None,
        }
    }

    fn forward_layer(&self, params: &ParamSet, layer: usize, x: &Tensor) -> Result<Tensor> {
        match &self.layers[layer] {
            VoiceLayer::Conv(c) => {
                let y = c.infer(params, x)?;
                Tensor::new(y.shape().to_vec(), crate::ops::relu_forward(y.data()))
            }
            VoiceLayer::MaxPool { window, stride } => {
                let (len, ch) = x.dims2()?;
                let (y, _) = crate::ops::maxpool1d_forward(x.data(), len, ch, *window, *stride);
                let (lout, _) = crate::ops::same_padding(len, *window, *stride, 1);
                Tensor::new(vec![lout, ch], y)
            }
        }
    }
}

impl NormStack for TinyCnn {
    fn n_layers(&self) -> usize {
        self.layers.len()
    }

    fn conv_params(&self, layer: usize) -> Option<(crate::graph::ParamId, crate::graph::ParamId, usize)> {
        let c = &self.layers[layer];
        Some((c.w, c.b, c.out_ch))
    }

    fn forward_layer(&self, params: &ParamSet, layer: usize, x: &Tensor) -> Result<Tensor> {
        let y = self.layers[layer].infer(params, x)?;
        Tensor::new(y.shape().to_vec(), crate::ops::relu_forward(y.data()))
    }
}

/// Scale out-channel `i` (innermost axis) of a channels-last weight tensor.
fn scale_filter(w: &mut Tensor, cout: usize, i: usize, factor: f64) {
    for chunk in w.data_mut().chunks_mut(cout) {
        chunk[i] *= factor;
    }
}

/// Mean post-ReLU activation of every filter over the calibration inputs and
/// all spatial positions, computed bottom-up as if lower layers had already
/// been normalized. The caller's parameters are not modified.
pub fn compute_normalization(
    stack: &impl NormStack,
    params: &ParamSet,
    calibration: &[Tensor],
) -> Result<NormalizationStats> {
    if calibration.is_empty() {
        return Err(Error::Contract("normalization needs a non-empty calibration set".into()));
    }
    let mut scratch = params.clone();
    let mut acts: Vec<Tensor> = calibration.to_vec();
    let mut per_layer = Vec::with_capacity(stack.n_layers());
    for l in 0..stack.n_layers() {
        match stack.conv_params(l) {
            None => {
                for a in &mut acts {
                    *a = stack.forward_layer(&scratch, l, a)?;
                }
                per_layer.push(None);
            }
            Some((wid, bid, cout)) => {
                let mut sums = vec![0.0; cout];
                let mut positions = 0usize;
                let mut outs = Vec::with_capacity(acts.len());
                for a in &acts {
                    let y = stack.forward_layer(&scratch, l, a)?;
                    positions += y.numel() / cout;
                    for chunk in y.data().chunks(cout) {
                        for (s, v) in sums.iter_mut().zip(chunk) {
                            *s += v;
                        }
                    }
                    outs.push(y);
                }
                let stats: Vec<f64> = sums.iter().map(|s| s / positions as f64).collect();
                // Normalize the scratch layer and its cached outputs so upper
                // layers see already-normalized activations.
                for (i, &s) in stats.iter().enumerate() {
                    if s > 0.0 {
                        scale_filter(scratch.value_mut(wid), cout, i, 1.0 / s);
                        scratch.value_mut(bid).data_mut()[i] /= s;
                    }
                }
                for y in &mut outs {
                    for chunk in y.data_mut().chunks_mut(cout) {
                        for (v, &s) in chunk.iter_mut().zip(&stats) {
                            if s > 0.0 {
                                *v /= s;
                            }
                        }
                    }
                }
                acts = outs;
                per_layer.push(Some(stats));
            }
        }
    }
    Ok(NormalizationStats { per_layer })
}

/// Divide each filter's weights and bias by its mean activation; filters that
/// never activated (s == 0) are left unscaled.
pub fn apply_normalization(
    stack: &impl NormStack,
    params: &mut ParamSet,
    stats: &NormalizationStats,
) -> Result<()> {
    if stats.per_layer.len() != stack.n_layers() {
        return Err(Error::Contract(format!(
            "normalization stats cover {} layers, stack has {}",
            stats.per_layer.len(),
            stack.n_layers()
        )));
    }
    for (l, layer_stats) in stats.per_layer.iter().enumerate() {
        match (stack.conv_params(l), layer_stats) {
            (None, None) => {}
            (Some((wid, bid, cout)), Some(s)) => {
                if s.len() != cout {
                    return Err(Error::Contract(format!(
                        "layer {}: stats for {} filters, layer has {}",
                        l,
                        s.len(),
                        cout
                    )));
                }
                for (i, &si) in s.iter().enumerate() {
                    if si > 0.0 {
                        scale_filter(params.value_mut(wid), cout, i, 1.0 / si);
                        params.value_mut(bid).data_mut()[i] /= si;
                    }
                }
            }
            _ => {
                return Err(Error::Contract(format!("layer {}: stats/stack kind mismatch", l)));
            }
        }
    }
    Ok(())
}

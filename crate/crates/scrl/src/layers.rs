//! Layer descriptions: dense (affine + activation), dilated 1-D conv, 2-D conv.
//!
//! Layers hold [`ParamId`]s into a [`ParamSet`] rather than owning tensors, so
//! the same description drives both tape-recorded training passes and plain
//! inference.

use crate::error::{Error, Result};
use crate::graph::{ParamId, ParamSet, Tape, Var};
use crate::ops;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    None,
    Relu,
    Tanh,
    Softmax,
}

impl Activation {
    pub fn apply_tape(self, tape: &mut Tape, x: Var) -> Result<Var> {
        Ok(match self {
            Activation::None => x,
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Softmax => tape.softmax_rows(x)?,
        })
    }

    pub fn apply(self, x: &Tensor) -> Tensor {
        match self {
            Activation::None => x.clone(),
            Activation::Relu => {
                Tensor::new(x.shape().to_vec(), ops::relu_forward(x.data())).expect("same shape")
            }
            Activation::Tanh => {
                Tensor::new(x.shape().to_vec(), ops::tanh_forward(x.data())).expect("same shape")
            }
            Activation::Softmax => {
                let n = *x.shape().last().expect("softmax on rank-0");
                Tensor::new(x.shape().to_vec(), ops::softmax_rows_forward(x.data(), n))
                    .expect("same shape")
            }
        }
    }
}

/// Fully connected layer: y = act(x·W + b), W is [in×out].
#[derive(Clone, Debug)]
pub struct DenseLayer {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(params: &mut ParamSet, name: &str, w: Tensor, b: Tensor, activation: Activation) -> Result<Self> {
        let (in_dim, out_dim) = w.dims2()?;
        if b.shape() != [out_dim] {
            return Err(Error::Shape(format!("dense {}: bias {:?} vs out dim {}", name, b.shape(), out_dim)));
        }
        let w = params.add(format!("{}.w", name), w, true, true);
        let b = params.add(format!("{}.b", name), b, false, true);
        Ok(Self { w, b, in_dim, out_dim, activation })
    }

    /// Affine map plus activation on a [B×in] batch, recorded on the tape.
    pub fn forward(&self, tape: &mut Tape, params: &ParamSet, x: Var) -> Result<Var> {
        let (_, n) = tape.value(x).dims2()?;
        if n != self.in_dim {
            return Err(Error::Shape(format!("dense: input width {} but layer expects {}", n, self.in_dim)));
        }
        let w = tape.param(params, self.w);
        let b = tape.param(params, self.b);
        let xw = tape.matmul(x, w)?;
        let y = tape.add_row(xw, b)?;
        self.activation.apply_tape(tape, y)
    }

    /// Same computation without gradient recording.
    pub fn infer(&self, params: &ParamSet, x: &Tensor) -> Result<Tensor> {
        let (m, n) = x.dims2()?;
        if n != self.in_dim {
            return Err(Error::Shape(format!("dense: input width {} but layer expects {}", n, self.in_dim)));
        }
        let mut y = ops::matmul(x.data(), params.value(self.w).data(), m, n, self.out_dim);
        ops::add_bias_rows(&mut y, params.value(self.b).data());
        Ok(self.activation.apply(&Tensor::new(vec![m, self.out_dim], y)?))
    }
}

/// Dilated 1-D convolution with SAME padding; weights are [k×Cin×Cout].
#[derive(Clone, Debug)]
pub struct ConvLayer1D {
    pub w: ParamId,
    pub b: ParamId,
    pub kernel: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub stride: usize,
    pub dilation: usize,
}

impl ConvLayer1D {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        w: Tensor,
        b: Tensor,
        stride: usize,
        dilation: usize,
    ) -> Result<Self> {
        let (kernel, in_ch, out_ch) = w.dims3()?;
        if b.shape() != [out_ch] {
            return Err(Error::Shape(format!("conv1d {}: bias {:?} vs out channels {}", name, b.shape(), out_ch)));
        }
        let w = params.add(format!("{}.w", name), w, true, true);
        let b = params.add(format!("{}.b", name), b, false, true);
        Ok(Self { w, b, kernel, in_ch, out_ch, stride, dilation })
    }

    pub fn out_len(&self, len: usize) -> usize {
        ops::same_padding(len, self.kernel, self.stride, self.dilation).0
    }

    pub fn forward(&self, tape: &mut Tape, params: &ParamSet, x: Var) -> Result<Var> {
        let w = tape.param(params, self.w);
        let b = tape.param(params, self.b);
        tape.conv1d(x, w, b, self.stride, self.dilation)
    }

    pub fn infer(&self, params: &ParamSet, x: &Tensor) -> Result<Tensor> {
        let (len, cin) = x.dims2()?;
        if cin != self.in_ch {
            return Err(Error::Shape(format!("conv1d: input channels {} but layer expects {}", cin, self.in_ch)));
        }
        let y = ops::conv1d_forward(
            x.data(),
            params.value(self.w).data(),
            params.value(self.b).data(),
            len,
            cin,
            self.out_ch,
            self.kernel,
            self.stride,
            self.dilation,
        );
        Tensor::new(vec![self.out_len(len), self.out_ch], y)
    }
}

/// 2-D convolution with SAME padding; weights are [kh×kw×Cin×Cout].
#[derive(Clone, Debug)]
pub struct Conv2dLayer {
    pub w: ParamId,
    pub b: ParamId,
    pub kh: usize,
    pub kw: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub stride: usize,
}

impl Conv2dLayer {
    pub fn new(params: &mut ParamSet, name: &str, w: Tensor, b: Tensor, stride: usize, trainable: bool) -> Result<Self> {
        let shape = w.shape().to_vec();
        let [kh, kw, in_ch, out_ch] = shape.as_slice() else {
            return Err(Error::Shape(format!("conv2d {}: weights must be rank-4, got {:?}", name, shape)));
        };
        let (kh, kw, in_ch, out_ch) = (*kh, *kw, *in_ch, *out_ch);
        if b.shape() != [out_ch] {
            return Err(Error::Shape(format!("conv2d {}: bias {:?} vs out channels {}", name, b.shape(), out_ch)));
        }
        let w = params.add(format!("{}.w", name), w, true, trainable);
        let b = params.add(format!("{}.b", name), b, false, trainable);
        Ok(Self { w, b, kh, kw, in_ch, out_ch, stride })
    }

    pub fn forward(&self, tape: &mut Tape, params: &ParamSet, x: Var) -> Result<Var> {
        let w = tape.param(params, self.w);
        let b = tape.param(params, self.b);
        tape.conv2d(x, w, b, self.stride)
    }

    pub fn infer(&self, params: &ParamSet, x: &Tensor) -> Result<Tensor> {
        let (h, wd, cin) = x.dims3()?;
        if cin != self.in_ch {
            return Err(Error::Shape(format!("conv2d: input channels {} but layer expects {}", cin, self.in_ch)));
        }
        let y = ops::conv2d_forward(
            x.data(),
            params.value(self.w).data(),
            params.value(self.b).data(),
            h,
            wd,
            cin,
            self.out_ch,
            self.kh,
            self.kw,
            self.stride,
        );
        let (oh, _) = ops::same_padding(h, self.kh, self.stride, 1);
        let (ow, _) = ops::same_padding(wd, self.kw, self.stride, 1);
        Tensor::new(vec![oh, ow, self.out_ch], y)
    }
}

//! Reverse-mode automatic differentiation on a linear tape.
//!
//! A [`Tape`] records operations as they execute (define-by-run), so the node
//! list is topologically ordered by construction. [`Tape::backward`] walks it
//! once in reverse and accumulates parameter gradients into a [`ParamSet`].
//!
//! Gradient buffers accumulate across backward calls; the trainer zeroes them
//! explicitly between steps.

use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::Tensor;

/// Handle to a parameter tensor registered in a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(usize);

#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    /// Weight decay applies to this tensor (weights yes, biases no).
    pub decay: bool,
    /// Frozen parameters are skipped by the optimizer but still serialized.
    pub trainable: bool,
}

/// Named parameter tensors with same-shape gradient buffers.
#[derive(Clone, Debug, Default)]
pub struct ParamSet {
    entries: Vec<ParamEntry>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, decay: bool, trainable: bool) -> ParamId {
        let grad = Tensor::zeros(value.shape());
        self.entries.push(ParamEntry { name: name.into(), value, grad, decay, trainable });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].grad
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut ParamEntry)> {
        self.entries.iter_mut().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    pub fn by_name(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.data_mut().fill(0.0);
        }
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Constant,
    Param(ParamId),
    MatMul { a: Var, b: Var },
    AddRow { x: Var, b: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, c: f64 },
    AddConst { x: Var },
    Relu { x: Var },
    Tanh { x: Var },
    Log { x: Var },
    SoftmaxRows { x: Var },
    Sum { x: Var },
    StackRows { xs: Vec<Var> },
    GatherRows { x: Var, idx: Vec<usize> },
    Diag { x: Var },
    CosineMatrix { a: Var, b: Var, ra: Vec<f64>, rb: Vec<f64> },
    Conv1d { x: Var, w: Var, b: Var, stride: usize, dilation: usize },
    MaxPool1d { x: Var, arg: Vec<u32> },
    Conv2d { x: Var, w: Var, b: Var, stride: usize },
    GlobalAvgPool { x: Var },
    Reshape { x: Var },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Linear operation tape; one forward pass per instance.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Constant, value)
    }

    /// Leaf whose gradient accumulates into `params` during backward.
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        self.push(Op::Param(id), params.value(id).clone())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, ka) = self.value(a).dims2()?;
        let (kb, n) = self.value(b).dims2()?;
        if ka != kb {
            return Err(Error::Shape(format!("matmul inner dims {} vs {}", ka, kb)));
        }
        let y = ops::matmul(self.value(a).data(), self.value(b).data(), m, ka, n);
        let t = Tensor::new(vec![m, n], y)?;
        Ok(self.push(Op::MatMul { a, b }, t))
    }

    /// Broadcast-add a rank-1 bias over the rows of a rank-2 tensor.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        if self.value(b).shape() != [n] {
            return Err(Error::Shape(format!(
                "bias {:?} does not match row width {}",
                self.value(b).shape(),
                n
            )));
        }
        let mut y = self.value(x).data().to_vec();
        ops::add_bias_rows(&mut y, self.value(b).data());
        let t = Tensor::new(vec![m, n], y)?;
        Ok(self.push(Op::AddRow { x, b }, t))
    }

    fn elementwise2(&mut self, a: Var, b: Var, name: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape(format!(
                "{}: shapes {:?} vs {:?}",
                name,
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise2(a, b, "add")?;
        let y: Vec<f64> = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), y)?;
        Ok(self.push(Op::Add { a, b }, t))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise2(a, b, "mul")?;
        let y: Vec<f64> = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x * y).collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), y)?;
        Ok(self.push(Op::Mul { a, b }, t))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let y: Vec<f64> = self.value(x).data().iter().map(|v| v * c).collect();
        let t = Tensor::new(self.value(x).shape().to_vec(), y).expect("same shape");
        self.push(Op::Scale { x, c }, t)
    }

    pub fn add_const(&mut self, x: Var, c: f64) -> Var {
        let y: Vec<f64> = self.value(x).data().iter().map(|v| v + c).collect();
        let t = Tensor::new(self.value(x).shape().to_vec(), y).expect("same shape");
        self.push(Op::AddConst { x }, t)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = Tensor::new(self.value(x).shape().to_vec(), ops::relu_forward(self.value(x).data()))
            .expect("same shape");
        self.push(Op::Relu { x }, t)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let t = Tensor::new(self.value(x).shape().to_vec(), ops::tanh_forward(self.value(x).data()))
            .expect("same shape");
        self.push(Op::Tanh { x }, t)
    }

    pub fn log(&mut self, x: Var) -> Var {
        let y: Vec<f64> = self.value(x).data().iter().map(|v| v.ln()).collect();
        let t = Tensor::new(self.value(x).shape().to_vec(), y).expect("same shape");
        self.push(Op::Log { x }, t)
    }

    /// Softmax over the last axis of a rank-2 tensor (or a rank-1 vector).
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        let n = *shape.last().ok_or_else(|| Error::Shape("softmax on rank-0".into()))?;
        let y = ops::softmax_rows_forward(self.value(x).data(), n);
        let t = Tensor::new(shape, y)?;
        Ok(self.push(Op::SoftmaxRows { x }, t))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().sum();
        self.push(Op::Sum { x }, Tensor::scalar(s))
    }

    /// Stack rank-1 tensors of equal length into a rank-2 batch.
    pub fn stack_rows(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::Contract("stack_rows on empty list".into()));
        }
        let n = self.value(xs[0]).numel();
        let mut data = Vec::with_capacity(xs.len() * n);
        for &v in xs {
            if self.value(v).numel() != n {
                return Err(Error::Shape("stack_rows: ragged inputs".into()));
            }
            data.extend_from_slice(self.value(v).data());
        }
        let t = Tensor::new(vec![xs.len(), n], data)?;
        Ok(self.push(Op::StackRows { xs: xs.to_vec() }, t))
    }

    /// y[i] = x[i, idx[i]] for a rank-2 input.
    pub fn gather_rows(&mut self, x: Var, idx: Vec<usize>) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        if idx.len() != m {
            return Err(Error::Shape(format!("gather_rows: {} indices for {} rows", idx.len(), m)));
        }
        if let Some(&bad) = idx.iter().find(|&&j| j >= n) {
            return Err(Error::Contract(format!("gather_rows: index {} out of range {}", bad, n)));
        }
        let data: Vec<f64> = idx.iter().enumerate().map(|(i, &j)| self.value(x).data()[i * n + j]).collect();
        let t = Tensor::new(vec![m], data)?;
        Ok(self.push(Op::GatherRows { x, idx }, t))
    }

    /// Main diagonal of a square rank-2 tensor.
    pub fn diag(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        if m != n {
            return Err(Error::Shape(format!("diag of non-square {}×{}", m, n)));
        }
        let data: Vec<f64> = (0..m).map(|i| self.value(x).data()[i * n + i]).collect();
        let t = Tensor::new(vec![m], data)?;
        Ok(self.push(Op::Diag { x }, t))
    }

    /// All-pairs cosine distance matrix between rows of `a` and rows of `b`.
    pub fn cosine_matrix(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, da) = self.value(a).dims2()?;
        let (n, db) = self.value(b).dims2()?;
        if da != db {
            return Err(Error::Shape(format!("cosine_matrix dims {} vs {}", da, db)));
        }
        let (dist, ra, rb) = ops::cosmat_forward(self.value(a).data(), self.value(b).data(), m, n, da);
        let t = Tensor::new(vec![m, n], dist)?;
        Ok(self.push(Op::CosineMatrix { a, b, ra, rb }, t))
    }

    /// SAME-padded dilated 1-D convolution; x is [L×Cin], w is [k×Cin×Cout].
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, stride: usize, dilation: usize) -> Result<Var> {
        let (len, cin) = self.value(x).dims2()?;
        let (k, wcin, cout) = self.value(w).dims3()?;
        if wcin != cin {
            return Err(Error::Shape(format!("conv1d: input channels {} but weights expect {}", cin, wcin)));
        }
        if self.value(b).shape() != [cout] {
            return Err(Error::Shape("conv1d: bias/out-channel mismatch".into()));
        }
        if stride == 0 || dilation == 0 {
            return Err(Error::Contract("conv1d: stride and dilation must be >= 1".into()));
        }
        let y = ops::conv1d_forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            len,
            cin,
            cout,
            k,
            stride,
            dilation,
        );
        let (lout, _) = ops::same_padding(len, k, stride, dilation);
        let t = Tensor::new(vec![lout, cout], y)?;
        Ok(self.push(Op::Conv1d { x, w, b, stride, dilation }, t))
    }

    /// SAME-padded 1-D max pool over [L×C].
    pub fn maxpool1d(&mut self, x: Var, window: usize, stride: usize) -> Result<Var> {
        let (len, ch) = self.value(x).dims2()?;
        let (y, arg) = ops::maxpool1d_forward(self.value(x).data(), len, ch, window, stride);
        let (lout, _) = ops::same_padding(len, window, stride, 1);
        let t = Tensor::new(vec![lout, ch], y)?;
        Ok(self.push(Op::MaxPool1d { x, arg }, t))
    }

    /// SAME-padded 2-D convolution; x is [H×W×Cin], w is [kh×kw×Cin×Cout].
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Result<Var> {
        let (h, wd, cin) = self.value(x).dims3()?;
        let ws = self.value(w).shape().to_vec();
        let [kh, kw, wcin, cout] = ws.as_slice() else {
            return Err(Error::Shape(format!("conv2d weights must be rank-4, got {:?}", ws)));
        };
        let (kh, kw, wcin, cout) = (*kh, *kw, *wcin, *cout);
        if wcin != cin {
            return Err(Error::Shape(format!("conv2d: input channels {} but weights expect {}", cin, wcin)));
        }
        if self.value(b).shape() != [cout] {
            return Err(Error::Shape("conv2d: bias/out-channel mismatch".into()));
        }
        let y = ops::conv2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            h,
            wd,
            cin,
            cout,
            kh,
            kw,
            stride,
        );
        let (oh, _) = ops::same_padding(h, kh, stride, 1);
        let (ow, _) = ops::same_padding(wd, kw, stride, 1);
        let t = Tensor::new(vec![oh, ow, cout], y)?;
        Ok(self.push(Op::Conv2d { x, w, b, stride }, t))
    }

    /// Global average pool of [H×W×C] down to [C].
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (h, w, c) = self.value(x).dims3()?;
        let y = ops::gap2d_forward(self.value(x).data(), h, w, c);
        let t = Tensor::new(vec![c], y)?;
        Ok(self.push(Op::GlobalAvgPool { x }, t))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(x).reshape(shape)?;
        Ok(self.push(Op::Reshape { x }, t))
    }

    /// Reverse sweep from a scalar loss; gradients accumulate into `params`.
    pub fn backward(&self, loss: Var, params: &mut ParamSet) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let Some(gy) = grads[id].take() else { continue };
            match &self.nodes[id].op {
                Op::Constant => {}
                Op::Param(pid) => {
                    let g = params.entries[pid.0].grad.data_mut();
                    for (acc, v) in g.iter_mut().zip(&gy) {
                        *acc += v;
                    }
                }
                Op::MatMul { a, b } => {
                    let (m, k) = self.value(*a).dims2().unwrap();
                    let n = self.value(*b).shape()[1];
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    ops::matmul_acc_a_bt(self.grad_buf(&mut grads, *a), &gy, bv, m, k, n);
                    ops::matmul_acc_at_b(self.grad_buf(&mut grads, *b), av, &gy, m, k, n);
                }
                Op::AddRow { x, b } => {
                    let n = self.value(*b).numel();
                    {
                        let gx = self.grad_buf(&mut grads, *x);
                        for (g, v) in gx.iter_mut().zip(&gy) {
                            *g += v;
                        }
                    }
                    ops::sum_rows_into(&mut self.grad_buf(&mut grads, *b)[..n], &gy);
                }
                Op::Add { a, b } => {
                    for &v in [a, b].into_iter() {
                        let g = self.grad_buf(&mut grads, v);
                        for (acc, gv) in g.iter_mut().zip(&gy) {
                            *acc += gv;
                        }
                    }
                }
                Op::Mul { a, b } => {
                    let (av, bv) = (self.value(*a).data().to_vec(), self.value(*b).data().to_vec());
                    {
                        let ga = self.grad_buf(&mut grads, *a);
                        for ((g, gv), bvv) in ga.iter_mut().zip(&gy).zip(&bv) {
                            *g += gv * bvv;
                        }
                    }
                    let gb = self.grad_buf(&mut grads, *b);
                    for ((g, gv), avv) in gb.iter_mut().zip(&gy).zip(&av) {
                        *g += gv * avv;
                    }
                }
                Op::Scale { x, c } => {
                    let c = *c;
                    let gx = self.grad_buf(&mut grads, *x);
                    for (g, gv) in gx.iter_mut().zip(&gy) {
                        *g += gv * c;
                    }
                }
                Op::AddConst { x } => {
                    let gx = self.grad_buf(&mut grads, *x);
                    for (g, gv) in gx.iter_mut().zip(&gy) {
                        *g += gv;
                    }
                }
                Op::Relu { x } => {
                    let xv = self.value(*x).data().to_vec();
                    ops::relu_backward(&gy, &xv, self.grad_buf(&mut grads, *x));
                }
                Op::Tanh { x } => {
                    let yv = self.nodes[id].value.data().to_vec();
                    ops::tanh_backward(&gy, &yv, self.grad_buf(&mut grads, *x));
                }
                Op::Log { x } => {
                    let xv = self.value(*x).data().to_vec();
                    let gx = self.grad_buf(&mut grads, *x);
                    for ((g, gv), xvv) in gx.iter_mut().zip(&gy).zip(&xv) {
                        *g += gv / xvv;
                    }
                }
                Op::SoftmaxRows { x } => {
                    let n = *self.nodes[id].value.shape().last().unwrap();
                    let yv = self.nodes[id].value.data().to_vec();
                    ops::softmax_rows_backward(&gy, &yv, self.grad_buf(&mut grads, *x), n);
                }
                Op::Sum { x } => {
                    let g0 = gy[0];
                    let gx = self.grad_buf(&mut grads, *x);
                    for g in gx.iter_mut() {
                        *g += g0;
                    }
                }
                Op::StackRows { xs } => {
                    let n = self.value(xs[0]).numel();
                    for (i, &v) in xs.iter().enumerate() {
                        let g = self.grad_buf(&mut grads, v);
                        for (acc, gv) in g.iter_mut().zip(&gy[i * n..(i + 1) * n]) {
                            *acc += gv;
                        }
                    }
                }
                Op::GatherRows { x, idx } => {
                    let n = self.value(*x).shape()[1];
                    let gx = self.grad_buf(&mut grads, *x);
                    for (i, &j) in idx.iter().enumerate() {
                        gx[i * n + j] += gy[i];
                    }
                }
                Op::Diag { x } => {
                    let n = self.value(*x).shape()[1];
                    let gx = self.grad_buf(&mut grads, *x);
                    for (i, gv) in gy.iter().enumerate() {
                        gx[i * n + i] += gv;
                    }
                }
                Op::CosineMatrix { a, b, ra, rb } => {
                    let (m, d) = self.value(*a).dims2().unwrap();
                    let n = self.value(*b).shape()[0];
                    let (av, bv) = (self.value(*a).data().to_vec(), self.value(*b).data().to_vec());
                    let dist = self.nodes[id].value.data().to_vec();
                    let mut ga = vec![0.0; m * d];
                    let mut gb = vec![0.0; n * d];
                    ops::cosmat_backward(&gy, &av, &bv, &dist, ra, rb, &mut ga, &mut gb, m, n, d);
                    {
                        let g = self.grad_buf(&mut grads, *a);
                        for (acc, v) in g.iter_mut().zip(&ga) {
                            *acc += v;
                        }
                    }
                    let g = self.grad_buf(&mut grads, *b);
                    for (acc, v) in g.iter_mut().zip(&gb) {
                        *acc += v;
                    }
                }
                Op::Conv1d { x, w, b, stride, dilation } => {
                    let (len, cin) = self.value(*x).dims2().unwrap();
                    let (k, _, cout) = self.value(*w).dims3().unwrap();
                    let (xv, wv) = (self.value(*x).data().to_vec(), self.value(*w).data().to_vec());
                    let mut gx = vec![0.0; len * cin];
                    let mut gw = vec![0.0; k * cin * cout];
                    let mut gb = vec![0.0; cout];
                    ops::conv1d_backward(&gy, &xv, &wv, &mut gx, &mut gw, &mut gb, len, cin, cout, k, *stride, *dilation);
                    self.accumulate(&mut grads, *x, &gx);
                    self.accumulate(&mut grads, *w, &gw);
                    self.accumulate(&mut grads, *b, &gb);
                }
                Op::MaxPool1d { x, arg } => {
                    ops::maxpool1d_backward(&gy, arg, self.grad_buf(&mut grads, *x));
                }
                Op::Conv2d { x, w, b, stride } => {
                    let (h, wd, cin) = self.value(*x).dims3().unwrap();
                    let ws = self.value(*w).shape().to_vec();
                    let (kh, kw, cout) = (ws[0], ws[1], ws[3]);
                    let (xv, wv) = (self.value(*x).data().to_vec(), self.value(*w).data().to_vec());
                    let mut gx = vec![0.0; h * wd * cin];
                    let mut gw = vec![0.0; kh * kw * cin * cout];
                    let mut gb = vec![0.0; cout];
                    ops::conv2d_backward(&gy, &xv, &wv, &mut gx, &mut gw, &mut gb, h, wd, cin, cout, kh, kw, *stride);
                    self.accumulate(&mut grads, *x, &gx);
                    self.accumulate(&mut grads, *w, &gw);
                    self.accumulate(&mut grads, *b, &gb);
                }
                Op::GlobalAvgPool { x } => {
                    let (h, w, c) = self.value(*x).dims3().unwrap();
                    ops::gap2d_backward(&gy, self.grad_buf(&mut grads, *x), h, w, c);
                }
                Op::Reshape { x } => {
                    let gx = self.grad_buf(&mut grads, *x);
                    for (g, gv) in gx.iter_mut().zip(&gy) {
                        *g += gv;
                    }
                }
            }
        }
        Ok(())
    }

    fn grad_buf<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> &'g mut Vec<f64> {
        grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.numel()])
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, add: &[f64]) {
        let g = self.grad_buf(grads, v);
        for (acc, x) in g.iter_mut().zip(add) {
            *acc += x;
        }
    }
}

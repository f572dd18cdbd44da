//! Dense numeric kernels: matrix products, SAME-padded convolutions, pooling,
//! activations, and cosine distances.
//!
//! Every kernel is a pure function on `f64` slices. The autodiff tape and the
//! inference paths both call into these, so forward values are bit-identical
//! whether or not gradients are being recorded.

/// Guard added to each vector norm before dividing in cosine distances.
pub const NORM_EPS: f64 = 1e-12;

/// SAME-padding geometry: output length and left padding for a windowed op.
///
/// `out = ceil(len / stride)`; total padding is distributed left-heavy when
/// odd.
pub fn same_padding(len: usize, kernel: usize, stride: usize, dilation: usize) -> (usize, usize) {
    debug_assert!(stride >= 1 && dilation >= 1 && kernel >= 1);
    let out = len.div_ceil(stride);
    let span = (kernel - 1) * dilation + 1;
    let needed = (out - 1) * stride + span;
    let total = needed.saturating_sub(len);
    (out, total.div_ceil(2))
}

#[inline]
fn axpy(c: &mut [f64], a: f64, b: &[f64]) {
    for (cj, bj) in c.iter_mut().zip(b) {
        *cj += a * bj;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four fixed-order accumulators so the loop vectorizes deterministically.
    let n = a.len().min(b.len());
    let chunks = n / 4 * 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    let mut j = 0;
    while j < chunks {
        s0 += a[j] * b[j];
        s1 += a[j + 1] * b[j + 1];
        s2 += a[j + 2] * b[j + 2];
        s3 += a[j + 3] * b[j + 3];
        j += 4;
    }
    let mut s = (s0 + s1) + (s2 + s3);
    while j < n {
        s += a[j] * b[j];
        j += 1;
    }
    s
}

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

/// c[m×n] += a[m×k] · b[k×n], blocked over k so b streams through cache once.
pub fn matmul_acc(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    const KB: usize = 256;
    let mut kb = 0;
    while kb < k {
        let kend = (kb + KB).min(k);
        for i in 0..m {
            let crow = &mut c[i * n..(i + 1) * n];
            for kk in kb..kend {
                let aik = a[i * k + kk];
                // Exact skip: adding 0·b[j] never changes finite sums, and
                // post-ReLU activations are mostly zeros.
                if aik != 0.0 {
                    axpy(crow, aik, &b[kk * n..(kk + 1) * n]);
                }
            }
        }
        kb = kend;
    }
}

pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    matmul_acc(&mut c, a, b, m, k, n);
    c
}

/// gw[k×n] += x[m×k]ᵀ · gy[m×n]; each gw row is written exactly once.
pub fn matmul_acc_at_b(gw: &mut [f64], x: &[f64], gy: &[f64], m: usize, k: usize, n: usize) {
    for kk in 0..k {
        let crow = &mut gw[kk * n..(kk + 1) * n];
        for i in 0..m {
            let aik = x[i * k + kk];
            if aik != 0.0 {
                axpy(crow, aik, &gy[i * n..(i + 1) * n]);
            }
        }
    }
}

/// gx[m×k] += gy[m×n] · w[k×n]ᵀ; each w row is loaded once and reused across rows.
pub fn matmul_acc_a_bt(gx: &mut [f64], gy: &[f64], w: &[f64], m: usize, k: usize, n: usize) {
    for kk in 0..k {
        let wrow = &w[kk * n..(kk + 1) * n];
        for i in 0..m {
            gx[i * k + kk] += dot(&gy[i * n..(i + 1) * n], wrow);
        }
    }
}

/// y[i][j] += b[j] for every row.
pub fn add_bias_rows(y: &mut [f64], b: &[f64]) {
    let n = b.len();
    for row in y.chunks_mut(n) {
        for (v, bv) in row.iter_mut().zip(b) {
            *v += bv;
        }
    }
}

/// Column-sum reduction: gb[j] += Σ_rows gy[i][j].
pub fn sum_rows_into(gb: &mut [f64], gy: &[f64]) {
    let n = gb.len();
    for row in gy.chunks(n) {
        for (g, v) in gb.iter_mut().zip(row) {
            *g += v;
        }
    }
}

// ---------------------------------------------------------------------------
// 1-D dilated convolution (SAME), channels-last: x[L×Cin], w[k×Cin×Cout]
// ---------------------------------------------------------------------------

pub fn conv1d_forward(
    x: &[f64],
    w: &[f64],
    b: &[f64],
    len: usize,
    cin: usize,
    cout: usize,
    kernel: usize,
    stride: usize,
    dilation: usize,
) -> Vec<f64> {
    let (lout, pad) = same_padding(len, kernel, stride, dilation);
    let mut y = vec![0.0; lout * cout];
    for p in 0..lout {
        let yrow = &mut y[p * cout..(p + 1) * cout];
        yrow.copy_from_slice(b);
        for t in 0..kernel {
            let ip = (p * stride + t * dilation) as isize - pad as isize;
            if ip < 0 || ip >= len as isize {
                continue;
            }
            let xrow = &x[ip as usize * cin..(ip as usize + 1) * cin];
            for (ci, &a) in xrow.iter().enumerate() {
                if a != 0.0 {
                    axpy(yrow, a, &w[(t * cin + ci) * cout..(t * cin + ci + 1) * cout]);
                }
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
pub fn conv1d_backward(
    gy: &[f64],
    x: &[f64],
    w: &[f64],
    gx: &mut [f64],
    gw: &mut [f64],
    gb: &mut [f64],
    len: usize,
    cin: usize,
    cout: usize,
    kernel: usize,
    stride: usize,
    dilation: usize,
) {
    let (lout, pad) = same_padding(len, kernel, stride, dilation);
    for p in 0..lout {
        let gyrow = &gy[p * cout..(p + 1) * cout];
        for (g, v) in gb.iter_mut().zip(gyrow) {
            *g += v;
        }
        for t in 0..kernel {
            let ip = (p * stride + t * dilation) as isize - pad as isize;
            if ip < 0 || ip >= len as isize {
                continue;
            }
            let ip = ip as usize;
            for ci in 0..cin {
                let a = x[ip * cin + ci];
                let wrow = &w[(t * cin + ci) * cout..(t * cin + ci + 1) * cout];
                let gwrow = &mut gw[(t * cin + ci) * cout..(t * cin + ci + 1) * cout];
                let mut s = 0.0;
                for co in 0..cout {
                    gwrow[co] += a * gyrow[co];
                    s += wrow[co] * gyrow[co];
                }
                gx[ip * cin + ci] += s;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// 1-D max pooling (SAME)
// ---------------------------------------------------------------------------

/// Returns pooled values and the flat input index chosen per output element.
pub fn maxpool1d_forward(
    x: &[f64],
    len: usize,
    ch: usize,
    window: usize,
    stride: usize,
) -> (Vec<f64>, Vec<u32>) {
    let (lout, pad) = same_padding(len, window, stride, 1);
    let mut y = vec![0.0; lout * ch];
    let mut arg = vec![0u32; lout * ch];
    for p in 0..lout {
        for c in 0..ch {
            let mut best = f64::NEG_INFINITY;
            let mut bi = 0u32;
            for t in 0..window {
                let ip = (p * stride + t) as isize - pad as isize;
                if ip < 0 || ip >= len as isize {
                    continue;
                }
                let v = x[ip as usize * ch + c];
                if v > best {
                    best = v;
                    bi = (ip as usize * ch + c) as u32;
                }
            }
            y[p * ch + c] = best;
            arg[p * ch + c] = bi;
        }
    }
    (y, arg)
}

pub fn maxpool1d_backward(gy: &[f64], arg: &[u32], gx: &mut [f64]) {
    for (g, &i) in gy.iter().zip(arg) {
        gx[i as usize] += g;
    }
}

// ---------------------------------------------------------------------------
// 2-D convolution (SAME), channels-last: x[H×W×Cin], w[kh×kw×Cin×Cout]
// ---------------------------------------------------------------------------

#[allow(clippy::too_many_arguments)]
pub fn conv2d_forward(
    x: &[f64],
    w: &[f64],
    b: &[f64],
    h: usize,
    wd: usize,
    cin: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
) -> Vec<f64> {
    let (oh, pad_top) = same_padding(h, kh, stride, 1);
    let (ow, pad_left) = same_padding(wd, kw, stride, 1);
    let mut y = vec![0.0; oh * ow * cout];
    for oy in 0..oh {
        for ox in 0..ow {
            let yrow = &mut y[(oy * ow + ox) * cout..(oy * ow + ox + 1) * cout];
            yrow.copy_from_slice(b);
            for ty in 0..kh {
                let iy = (oy * stride + ty) as isize - pad_top as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for tx in 0..kw {
                    let ix = (ox * stride + tx) as isize - pad_left as isize;
                    if ix < 0 || ix >= wd as isize {
                        continue;
                    }
                    let xoff = (iy as usize * wd + ix as usize) * cin;
                    let woff = ((ty * kw + tx) * cin) * cout;
                    for ci in 0..cin {
                        let a = x[xoff + ci];
                        if a != 0.0 {
                            axpy(yrow, a, &w[woff + ci * cout..woff + (ci + 1) * cout]);
                        }
                    }
                }
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward(
    gy: &[f64],
    x: &[f64],
    w: &[f64],
    gx: &mut [f64],
    gw: &mut [f64],
    gb: &mut [f64],
    h: usize,
    wd: usize,
    cin: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
) {
    let (oh, pad_top) = same_padding(h, kh, stride, 1);
    let (ow, pad_left) = same_padding(wd, kw, stride, 1);
    for oy in 0..oh {
        for ox in 0..ow {
            let gyrow = &gy[(oy * ow + ox) * cout..(oy * ow + ox + 1) * cout];
            for (g, v) in gb.iter_mut().zip(gyrow) {
                *g += v;
            }
            for ty in 0..kh {
                let iy = (oy * stride + ty) as isize - pad_top as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for tx in 0..kw {
                    let ix = (ox * stride + tx) as isize - pad_left as isize;
                    if ix < 0 || ix >= wd as isize {
                        continue;
                    }
                    let xoff = (iy as usize * wd + ix as usize) * cin;
                    let woff = ((ty * kw + tx) * cin) * cout;
                    for ci in 0..cin {
                        let a = x[xoff + ci];
                        let wrow = &w[woff + ci * cout..woff + (ci + 1) * cout];
                        let gwrow = &mut gw[woff + ci * cout..woff + (ci + 1) * cout];
                        let mut s = 0.0;
                        for co in 0..cout {
                            gwrow[co] += a * gyrow[co];
                            s += wrow[co] * gyrow[co];
                        }
                        gx[xoff + ci] += s;
                    }
                }
            }
        }
    }
}

/// Global average pool over the spatial grid of an H×W×C map.
pub fn gap2d_forward(x: &[f64], h: usize, w: usize, c: usize) -> Vec<f64> {
    let mut y = vec![0.0; c];
    for row in x.chunks(c) {
        for (acc, v) in y.iter_mut().zip(row) {
            *acc += v;
        }
    }
    let inv = 1.0 / (h * w) as f64;
    for v in &mut y {
        *v *= inv;
    }
    y
}

pub fn gap2d_backward(gy: &[f64], gx: &mut [f64], h: usize, w: usize, c: usize) {
    let inv = 1.0 / (h * w) as f64;
    for row in gx.chunks_mut(c) {
        for (g, gyv) in row.iter_mut().zip(gy) {
            *g += gyv * inv;
        }
    }
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

pub fn relu_forward(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

/// Subgradient 0 at the kink (x == 0).
pub fn relu_backward(gy: &[f64], x: &[f64], gx: &mut [f64]) {
    for ((g, &v), &gyv) in gx.iter_mut().zip(x).zip(gy) {
        if v > 0.0 {
            *g += gyv;
        }
    }
}

pub fn tanh_forward(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.tanh()).collect()
}

pub fn tanh_backward(gy: &[f64], y: &[f64], gx: &mut [f64]) {
    for ((g, &yv), &gyv) in gx.iter_mut().zip(y).zip(gy) {
        *g += gyv * (1.0 - yv * yv);
    }
}

/// Row-wise softmax with max subtraction; rows sum to 1.
pub fn softmax_rows_forward(x: &[f64], n: usize) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for (yrow, xrow) in y.chunks_mut(n).zip(x.chunks(n)) {
        let m = xrow.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for (yo, &xi) in yrow.iter_mut().zip(xrow) {
            *yo = (xi - m).exp();
            s += *yo;
        }
        let inv = 1.0 / s;
        for yo in yrow.iter_mut() {
            *yo *= inv;
        }
    }
    y
}

pub fn softmax_rows_backward(gy: &[f64], y: &[f64], gx: &mut [f64], n: usize) {
    for ((gxrow, yrow), gyrow) in gx.chunks_mut(n).zip(y.chunks(n)).zip(gy.chunks(n)) {
        let d = dot(gyrow, yrow);
        for ((g, &yv), &gyv) in gxrow.iter_mut().zip(yrow).zip(gyrow) {
            *g += yv * (gyv - d);
        }
    }
}

// ---------------------------------------------------------------------------
// Cosine distance
// ---------------------------------------------------------------------------

/// D(x, y) = 1 − x·y / ((‖x‖+ε)(‖y‖+ε)), in [0, 2].
pub fn cosine_distance_raw(x: &[f64], y: &[f64]) -> f64 {
    let d = dot(x, y);
    let nx = dot(x, x).sqrt() + NORM_EPS;
    let ny = dot(y, y).sqrt() + NORM_EPS;
    1.0 - d / (nx * ny)
}

/// All-pairs cosine distances between rows of a[m×d] and b[n×d].
///
/// Returns the distance matrix and the raw (unguarded) row norms of both
/// inputs, which the backward pass reuses.
pub fn cosmat_forward(a: &[f64], b: &[f64], m: usize, n: usize, d: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let ra: Vec<f64> = (0..m).map(|i| dot(&a[i * d..(i + 1) * d], &a[i * d..(i + 1) * d]).sqrt()).collect();
    let rb: Vec<f64> = (0..n).map(|j| dot(&b[j * d..(j + 1) * d], &b[j * d..(j + 1) * d]).sqrt()).collect();
    let mut dist = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * d..(i + 1) * d];
        let na = ra[i] + NORM_EPS;
        for j in 0..n {
            let dp = dot(arow, &b[j * d..(j + 1) * d]);
            dist[i * n + j] = 1.0 - dp / (na * (rb[j] + NORM_EPS));
        }
    }
    (dist, ra, rb)
}

/// Backward of [`cosmat_forward`]. `dist` is the forward output.
#[allow(clippy::too_many_arguments)]
pub fn cosmat_backward(
    gd: &[f64],
    a: &[f64],
    b: &[f64],
    dist: &[f64],
    ra: &[f64],
    rb: &[f64],
    ga: &mut [f64],
    gb: &mut [f64],
    m: usize,
    n: usize,
    d: usize,
) {
    // D_ij = 1 − S_ij with S_ij = a_i·b_j / (Na_i Nb_j); grads flow through −S.
    for i in 0..m {
        let arow = &a[i * d..(i + 1) * d];
        let garow = &mut ga[i * d..(i + 1) * d];
        let na = ra[i] + NORM_EPS;
        let ra_safe = if ra[i] > 0.0 { ra[i] } else { 1.0 };
        let mut self_coef = 0.0;
        for j in 0..n {
            let g = gd[i * n + j];
            if g == 0.0 {
                continue;
            }
            let s = 1.0 - dist[i * n + j];
            let nb = rb[j] + NORM_EPS;
            axpy(garow, g / (na * nb), &b[j * d..(j + 1) * d]);
            self_coef += g * s;
        }
        // ∂(−S)/∂a picks up +S·a/(Na·‖a‖); zero rows contribute nothing.
        axpy(garow, -self_coef / (na * ra_safe), arow);
        for v in garow.iter_mut() {
            *v = -*v;
        }
    }
    // Mirror for b. Note ga got the final sign flip above; do the same here.
    for j in 0..n {
        let brow = &b[j * d..(j + 1) * d];
        let nb = rb[j] + NORM_EPS;
        let rb_safe = if rb[j] > 0.0 { rb[j] } else { 1.0 };
        let gbrow = &mut gb[j * d..(j + 1) * d];
        let mut acc = vec![0.0; d];
        let mut self_coef = 0.0;
        for i in 0..m {
            let g = gd[i * n + j];
            if g == 0.0 {
                continue;
            }
            let s = 1.0 - dist[i * n + j];
            let na = ra[i] + NORM_EPS;
            axpy(&mut acc, g / (na * nb), &a[i * d..(i + 1) * d]);
            self_coef += g * s;
        }
        axpy(&mut acc, -self_coef / (nb * rb_safe), brow);
        for (gv, av) in gbrow.iter_mut().zip(&acc) {
            *gv -= av;
        }
    }
}

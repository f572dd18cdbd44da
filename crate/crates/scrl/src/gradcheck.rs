//! Central finite differences, used as an independent oracle for the tape.

use crate::error::Result;
use crate::tensor::Tensor;

/// Default step for double-precision central differences.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Per-coordinate central difference (f(x+h·e_i) − f(x−h·e_i)) / 2h.
///
/// `f` is evaluated 2·numel times; keep inputs small.
pub fn finite_diff_grad<F>(mut f: F, x: &Tensor, h: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    assert!(h > 0.0, "finite_diff_grad requires h > 0");
    let mut grad = vec![0.0; x.numel()];
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + h;
        let fp = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let fm = f(&probe)?;
        probe.data_mut()[i] = orig;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    Tensor::new(x.shape().to_vec(), grad)
}

/// Like [`finite_diff_grad`] but only for the listed coordinates; other
/// entries of the result are zero. Used on large tensors where a full sweep
/// is too expensive.
pub fn finite_diff_grad_at<F>(mut f: F, x: &Tensor, h: f64, coords: &[usize]) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    assert!(h > 0.0);
    let mut grad = vec![0.0; x.numel()];
    let mut probe = x.clone();
    for &i in coords {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + h;
        let fp = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let fm = f(&probe)?;
        probe.data_mut()[i] = orig;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    Tensor::new(x.shape().to_vec(), grad)
}

/// max_i |a_i − b_i| / max(1, |a_i|, |b_i|).
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs() / 1.0_f64.max(x.abs()).max(y.abs()))
        .fold(0.0, f64::max)
}

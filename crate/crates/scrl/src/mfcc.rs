//! MFCC extraction: Hamming-windowed frames, magnitude spectrum, triangular
//! mel filterbank (HTK scale), log energies, and an orthonormal DCT-II.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::wav::Waveform;

#[derive(Clone, Debug)]
pub struct MfccConfig {
    /// Sample rate the extractor expects; callers resample first.
    pub target_rate: u32,
    pub window_ms: f64,
    pub hop_ms: f64,
    pub n_mels: usize,
    pub n_coeffs: usize,
    pub fft_size: usize,
    /// Frame count the flattened voice-network input is normalized to.
    pub target_frames: usize,
    pub log_floor: f64,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            target_rate: 22050,
            window_ms: 16.0,
            hop_ms: 5.0,
            n_mels: 26,
            n_coeffs: 12,
            fft_size: 512,
            target_frames: 2000,
            log_floor: 1e-10,
        }
    }
}

impl MfccConfig {
    pub fn frame_len(&self) -> usize {
        (self.window_ms / 1000.0 * self.target_rate as f64).round() as usize
    }

    pub fn hop_len(&self) -> usize {
        (self.hop_ms / 1000.0 * self.target_rate as f64).round() as usize
    }

    /// Flattened length fed to the voice network.
    pub fn flat_len(&self) -> usize {
        self.n_coeffs * self.target_frames
    }

    pub fn validate(&self) -> Result<()> {
        if self.fft_size < self.frame_len() {
            return Err(Error::Contract(format!(
                "fft_size {} smaller than frame length {}",
                self.fft_size,
                self.frame_len()
            )));
        }
        if self.n_coeffs > self.n_mels {
            return Err(Error::Contract(format!(
                "n_coeffs {} exceeds n_mels {}",
                self.n_coeffs, self.n_mels
            )));
        }
        if self.frame_len() == 0 || self.hop_len() == 0 || self.target_frames == 0 {
            return Err(Error::Contract("degenerate framing configuration".into()));
        }
        if self.log_floor <= 0.0 {
            return Err(Error::Contract("log_floor must be positive".into()));
        }
        Ok(())
    }
}

/// Framed cepstral features: one row of `n_coeffs` per frame.
#[derive(Clone, Debug)]
pub struct MfccMatrix {
    pub frames: Tensor,
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filterbank over the magnitude-spectrum bins 0..=fft/2.
pub struct MelFilterbank {
    /// Dense weights, one row of n_bins per filter.
    pub weights: Vec<Vec<f64>>,
    /// Center frequency of each filter in Hz.
    pub centers_hz: Vec<f64>,
}

pub fn mel_filterbank(cfg: &MfccConfig) -> MelFilterbank {
    let n_bins = cfg.fft_size / 2 + 1;
    let nyquist = cfg.target_rate as f64 / 2.0;
    let mel_max = hz_to_mel(nyquist);
    let points_hz: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let bin_hz = cfg.target_rate as f64 / cfg.fft_size as f64;

    let mut weights = Vec::with_capacity(cfg.n_mels);
    for m in 0..cfg.n_mels {
        let (lo, mid, hi) = (points_hz[m], points_hz[m + 1], points_hz[m + 2]);
        let mut row = vec![0.0; n_bins];
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            if f > lo && f < mid {
                *w = (f - lo) / (mid - lo);
            } else if (f - mid).abs() <= f64::EPSILON * mid.abs() {
                *w = 1.0;
            } else if f > mid && f < hi {
                *w = (hi - f) / (hi - mid);
            }
        }
        weights.push(row);
    }
    MelFilterbank { weights, centers_hz: points_hz[1..=cfg.n_mels].to_vec() }
}

/// Orthonormal DCT-II rows: out[k][j] = a_k · cos(π(j+0.5)k/J).
pub fn dct_matrix(n_in: usize, n_out: usize) -> Vec<Vec<f64>> {
    let mut rows = Vec::with_capacity(n_out);
    for k in 0..n_out {
        let a = if k == 0 {
            (1.0 / n_in as f64).sqrt()
        } else {
            (2.0 / n_in as f64).sqrt()
        };
        rows.push(
            (0..n_in)
                .map(|j| a * (std::f64::consts::PI * (j as f64 + 0.5) * k as f64 / n_in as f64).cos())
                .collect(),
        );
    }
    rows
}

fn hamming(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// Magnitude spectrum (bins 0..=fft/2) of a zero-padded real frame.
pub fn magnitude_spectrum(frame: &[f64], fft_size: usize) -> Vec<f64> {
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(fft_size);
    let mut buf: Vec<Complex<f64>> = frame
        .iter()
        .map(|&v| Complex::new(v, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(fft_size)
        .collect();
    fft.process(&mut buf);
    buf[..fft_size / 2 + 1].iter().map(|c| c.norm()).collect()
}

/// Full MFCC pipeline for one waveform already at `cfg.target_rate`.
pub fn compute_mfcc(w: &Waveform, cfg: &MfccConfig) -> Result<MfccMatrix> {
    cfg.validate()?;
    if w.sample_rate != cfg.target_rate {
        return Err(Error::Contract(format!(
            "waveform rate {} != configured rate {}; resample first",
            w.sample_rate, cfg.target_rate
        )));
    }
    let frame_len = cfg.frame_len();
    let hop = cfg.hop_len();
    if w.samples.len() < frame_len {
        return Err(Error::Format(format!(
            "signal of {} samples is shorter than one {}-sample frame",
            w.samples.len(),
            frame_len
        )));
    }
    let n_frames = (w.samples.len() - frame_len) / hop + 1;
    let window = hamming(frame_len);
    let bank = mel_filterbank(cfg);
    let dct = dct_matrix(cfg.n_mels, cfg.n_coeffs);

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(cfg.fft_size);
    let mut buf: Vec<Complex<f64>> = vec![Complex::new(0.0, 0.0); cfg.fft_size];

    let mut out = Vec::with_capacity(n_frames * cfg.n_coeffs);
    let mut mags = vec![0.0; cfg.fft_size / 2 + 1];
    for f in 0..n_frames {
        let start = f * hop;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = if i < frame_len {
                Complex::new(w.samples[start + i] * window[i], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        for (m, c) in mags.iter_mut().zip(&buf) {
            *m = c.norm();
        }
        let log_mel: Vec<f64> = bank
            .weights
            .iter()
            .map(|row| {
                let e: f64 = row.iter().zip(&mags).map(|(w, m)| w * m).sum();
                (e + cfg.log_floor).ln()
            })
            .collect();
        for row in &dct {
            out.push(row.iter().zip(&log_mel).map(|(d, x)| d * x).sum());
        }
    }
    Ok(MfccMatrix { frames: Tensor::new(vec![n_frames, cfg.n_coeffs], out)? })
}

/// Fixed-length flattened voice-network input: truncate or zero-pad to
/// `target_frames` rows, then flatten frame-major.
pub fn canonicalize_mfcc(m: &MfccMatrix, cfg: &MfccConfig) -> Tensor {
    let (n_frames, n_coeffs) = m.frames.dims2().expect("MfccMatrix is rank-2");
    debug_assert_eq!(n_coeffs, cfg.n_coeffs);
    let mut out = vec![0.0; cfg.flat_len()];
    let keep = n_frames.min(cfg.target_frames);
    out[..keep * n_coeffs].copy_from_slice(&m.frames.data()[..keep * n_coeffs]);
    Tensor::from_vec(out)
}

/// Decode → resample → MFCC → canonicalize, the full voice preprocessing path.
pub fn voice_input_from_wav_bytes(bytes: &[u8], cfg: &MfccConfig) -> Result<Tensor> {
    let w = crate::wav::read_wav(bytes)?;
    let w = crate::wav::resample_linear(&w, cfg.target_rate)?;
    let m = compute_mfcc(&w, cfg)?;
    Ok(canonicalize_mfcc(&m, cfg))
}

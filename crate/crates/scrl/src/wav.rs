//! RIFF/WAVE PCM-16 decoding, encoding, and linear resampling.
//!
//! The reader accepts mono or multi-channel PCM-16 files; channels are
//! averaged down to mono and samples scaled by 1/32768. Unknown chunks are
//! skipped. Errors carry the byte offset where parsing failed.

use crate::error::{Error, Result};

/// Mono audio signal with samples in [−1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

fn fmt_err(offset: usize, msg: &str) -> Error {
    Error::Format(format!("wav: {} (at byte {})", msg, offset))
}

fn read_u16(bytes: &[u8], at: usize) -> Result<u16> {
    let b = bytes
        .get(at..at + 2)
        .ok_or_else(|| fmt_err(at, "truncated chunk"))?;
    Ok(u16::from_le_bytes([b[0], b[1]]))
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    let b = bytes
        .get(at..at + 4)
        .ok_or_else(|| fmt_err(at, "truncated chunk"))?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

/// Decode a RIFF/WAVE PCM-16 byte stream to a mono waveform.
pub fn read_wav(bytes: &[u8]) -> Result<Waveform> {
    if bytes.get(0..4) != Some(b"RIFF") {
        return Err(fmt_err(0, "missing RIFF magic"));
    }
    if bytes.get(8..12) != Some(b"WAVE") {
        return Err(fmt_err(8, "missing WAVE form type"));
    }

    let mut pos = 12usize;
    let mut fmt: Option<(u16, u32, u16)> = None; // (channels, rate, bits)
    let mut data: Option<(usize, usize)> = None; // (offset, len)

    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = read_u32(bytes, pos + 4)? as usize;
        let body = pos + 8;
        if body + size > bytes.len() {
            return Err(fmt_err(pos, "truncated chunk"));
        }
        match id {
            b"fmt " => {
                let audio_format = read_u16(bytes, body)?;
                if audio_format != 1 {
                    return Err(fmt_err(body, "not PCM (format tag != 1)"));
                }
                let channels = read_u16(bytes, body + 2)?;
                let rate = read_u32(bytes, body + 4)?;
                let bits = read_u16(bytes, body + 14)?;
                if channels == 0 {
                    return Err(fmt_err(body + 2, "zero channels"));
                }
                if rate == 0 {
                    return Err(fmt_err(body + 4, "zero sample rate"));
                }
                if bits != 16 {
                    return Err(fmt_err(body + 14, "only 16-bit PCM is supported"));
                }
                fmt = Some((channels, rate, bits));
            }
            b"data" => {
                data = Some((body, size));
            }
            _ => {} // skip LIST, fact, etc.
        }
        pos = body + size + (size & 1); // chunks are word-aligned
    }

    let (channels, rate, _) = fmt.ok_or_else(|| fmt_err(pos, "missing fmt chunk"))?;
    let (off, len) = data.ok_or_else(|| fmt_err(pos, "missing data chunk"))?;
    let frame = 2 * channels as usize;
    if len % frame != 0 {
        return Err(fmt_err(off, "data size not a multiple of the frame size"));
    }
    let n = len / frame;
    let mut samples = Vec::with_capacity(n);
    let inv = 1.0 / channels as f64;
    for i in 0..n {
        let mut acc = 0.0;
        for c in 0..channels as usize {
            let at = off + i * frame + 2 * c;
            let v = i16::from_le_bytes([bytes[at], bytes[at + 1]]);
            acc += v as f64;
        }
        samples.push(acc * inv / 32768.0);
    }
    Ok(Waveform { samples, sample_rate: rate })
}

/// Encode a mono waveform as PCM-16 WAV bytes; samples are clamped to [−1, 1].
pub fn write_wav_pcm16(w: &Waveform) -> Vec<u8> {
    let n = w.samples.len();
    let data_len = (n * 2) as u32;
    let mut out = Vec::with_capacity(44 + n * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&w.sample_rate.to_le_bytes());
    out.extend_from_slice(&(w.sample_rate * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in &w.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Linear-interpolation resampling onto a uniform grid at `target_rate`.
///
/// Output length is round(len · target/source).
pub fn resample_linear(w: &Waveform, target_rate: u32) -> Result<Waveform> {
    if target_rate == 0 {
        return Err(Error::Contract("resample: target rate must be positive".into()));
    }
    if w.samples.is_empty() {
        return Err(Error::Format("resample: empty input signal".into()));
    }
    if w.sample_rate == target_rate {
        return Ok(w.clone());
    }
    let n_in = w.samples.len();
    let n_out = ((n_in as f64) * target_rate as f64 / w.sample_rate as f64).round() as usize;
    let n_out = n_out.max(1);
    let step = w.sample_rate as f64 / target_rate as f64;
    let mut samples = Vec::with_capacity(n_out);
    for i in 0..n_out {
        let pos = i as f64 * step;
        let i0 = pos.floor() as usize;
        if i0 + 1 >= n_in {
            samples.push(w.samples[n_in - 1]);
        } else {
            let frac = pos - i0 as f64;
            samples.push(w.samples[i0] * (1.0 - frac) + w.samples[i0 + 1] * frac);
        }
    }
    Ok(Waveform { samples, sample_rate: target_rate })
}

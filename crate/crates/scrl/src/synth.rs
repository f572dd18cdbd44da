//! Deterministic synthetic image-voice dataset generator.
//!
//! Each class gets a distinct visual grating (frequency + orientation keyed
//! by class) and a distinct chord (fundamental 200·(c+1) Hz plus its octave).
//! Per-sample variation comes from Gaussian pixel/sample noise and a random
//! chord phase. Generation is a pure function of (spec, seed).

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::manifest::{write_manifest, Manifest, ManifestRecord};
use crate::ppm;
use crate::seeding::{self, stream};
use crate::tensor::Tensor;
use crate::wav::{write_wav_pcm16, Waveform};

#[derive(Clone, Debug)]
pub struct SynthSpec {
    pub classes: usize,
    pub per_class: usize,
    pub seed: u64,
    pub image_size: usize,
    pub voice_secs: f64,
    pub voice_rate: u32,
    pub image_noise: f64,
    pub voice_noise: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            classes: 8,
            per_class: 50,
            seed: 42,
            image_size: 224,
            voice_secs: 2.0,
            voice_rate: 22050,
            image_noise: 0.05,
            voice_noise: 0.01,
        }
    }
}

impl SynthSpec {
    /// Fundamental frequency of class `c`'s chord.
    pub fn class_freq(&self, c: usize) -> f64 {
        200.0 * (c + 1) as f64
    }
}

fn class_image(spec: &SynthSpec, c: usize, rng: &mut impl Rng) -> Tensor {
    let n = spec.image_size;
    let freq = 3.0 + 2.0 * c as f64;
    let angle = std::f64::consts::PI * c as f64 / spec.classes as f64;
    let (ca, sa) = (angle.cos(), angle.sin());
    // Channel amplitudes carry the class bits so the grating stays
    // distinguishable even under heavy spatial pooling.
    let amp: Vec<f64> = (0..3).map(|ch| if (c >> ch) & 1 == 1 { 0.42 } else { 0.12 }).collect();
    let noise = Normal::new(0.0, spec.image_noise).expect("finite sigma");
    let mut data = vec![0.0; n * n * 3];
    for r in 0..n {
        for col in 0..n {
            let u = (ca * col as f64 + sa * r as f64) / n as f64;
            for ch in 0..3 {
                let base = 0.5
                    + amp[ch]
                        * (2.0 * std::f64::consts::PI * freq * u + ch as f64 * std::f64::consts::FRAC_PI_3)
                            .sin();
                let v: f64 = base + noise.sample(rng);
                data[(r * n + col) * 3 + ch] = v.clamp(0.0, 1.0);
            }
        }
    }
    Tensor::new(vec![n, n, 3], data).expect("consistent dims")
}

fn class_voice(spec: &SynthSpec, c: usize, rng: &mut impl Rng) -> Waveform {
    let n = (spec.voice_secs * spec.voice_rate as f64).round() as usize;
    let f0 = spec.class_freq(c);
    let phase1: f64 = rng.random::<f64>() * 2.0 * std::f64::consts::PI;
    let phase2: f64 = rng.random::<f64>() * 2.0 * std::f64::consts::PI;
    // Per-sample harmonic strength gives voices within-class spread; the
    // fundamental stays dominant and class-pinned.
    let harmonic: f64 = 0.15 + 0.20 * rng.random::<f64>();
    let noise = Normal::new(0.0, spec.voice_noise).expect("finite sigma");
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / spec.voice_rate as f64;
            let v = 0.5 * (2.0 * std::f64::consts::PI * f0 * t + phase1).sin()
                + harmonic * (4.0 * std::f64::consts::PI * f0 * t + phase2).sin()
                + noise.sample(rng);
            v.clamp(-1.0, 1.0)
        })
        .collect();
    Waveform { samples, sample_rate: spec.voice_rate }
}

/// Generate `classes · per_class` image-voice pairs under `out_dir` and write
/// a manifest. Returns the loaded manifest.
pub fn synth_dataset(spec: &SynthSpec, out_dir: &Path) -> Result<Manifest> {
    if spec.classes == 0 || spec.per_class == 0 {
        return Err(Error::Contract("synth: classes and per_class must be positive".into()));
    }
    if spec.class_freq(spec.classes - 1) * 2.0 >= spec.voice_rate as f64 / 2.0 {
        return Err(Error::Contract(format!(
            "synth: class {} chord exceeds the Nyquist limit at {} Hz",
            spec.classes - 1,
            spec.voice_rate / 2
        )));
    }
    let images = out_dir.join("images");
    let voices = out_dir.join("voices");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    fs::create_dir_all(&voices).map_err(|e| Error::io(&voices, e))?;

    let mut rng = seeding::rng_for(spec.seed, stream::SYNTH);
    let mut records = Vec::with_capacity(spec.classes * spec.per_class);
    for c in 0..spec.classes {
        for i in 0..spec.per_class {
            let id = format!("c{}_s{:03}", c, i);
            let image_path = images.join(format!("{id}.ppm"));
            let voice_path = voices.join(format!("{id}.wav"));
            ppm::write_ppm(&class_image(spec, c, &mut rng), &image_path)?;
            let wav = write_wav_pcm16(&class_voice(spec, c, &mut rng));
            fs::write(&voice_path, wav).map_err(|e| Error::io(&voice_path, e))?;
            records.push(ManifestRecord {
                id,
                image_path,
                voice_path,
                label: c,
                class_name: format!("class{c}"),
            });
        }
    }
    let manifest_path = out_dir.join("manifest.tsv");
    write_manifest(&manifest_path, &records)?;
    crate::manifest::load_manifest(&manifest_path)
}

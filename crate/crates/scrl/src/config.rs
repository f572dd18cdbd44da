//! Flat `key=value` configuration text: one key per line, `#` comments.
//!
//! Keys mirror the training/loss/MFCC field names. The same codec backs the
//! CLI `--config` file and the checkpoint's embedded configuration, so a
//! round trip through text restores every field exactly (floats are printed
//! in shortest-roundtrip form).

use crate::error::{Error, Result};
use crate::model::ImageMode;
use crate::trainer::TrainConfig;

pub fn train_config_to_kv(cfg: &TrainConfig) -> String {
    let mut s = String::new();
    let mut kv = |k: &str, v: String| s.push_str(&format!("{k}={v}\n"));
    kv("lr", cfg.lr.to_string());
    kv("epochs", cfg.epochs.to_string());
    kv("batch_size", cfg.batch_size.to_string());
    kv("weight_decay", cfg.weight_decay.to_string());
    kv("momentum", cfg.momentum.to_string());
    kv("rms_decay", cfg.rms_decay.to_string());
    kv("rms_eps", cfg.rms_eps.to_string());
    kv("seed", cfg.seed.to_string());
    kv("xi", cfg.loss.xi.to_string());
    kv("zeta", cfg.loss.zeta.to_string());
    kv("eta1", cfg.loss.eta1.to_string());
    kv("eta2", cfg.loss.eta2.to_string());
    kv("epsilon", cfg.loss.epsilon.to_string());
    kv("enable_pair", cfg.loss.enable_pair.to_string());
    kv("enable_intra", cfg.loss.enable_intra.to_string());
    kv("enable_inter", cfg.loss.enable_inter.to_string());
    kv("enable_class", cfg.loss.enable_class.to_string());
    kv(
        "dilation_override",
        cfg.dilation_override.map_or("none".to_string(), |d| d.to_string()),
    );
    kv("hidden_dim", cfg.hidden_dim.to_string());
    kv("rep_dim", cfg.rep_dim.to_string());
    kv("train_frac", cfg.train_frac.to_string());
    kv("calib_size", cfg.calib_size.to_string());
    kv(
        "image_mode",
        match cfg.image_mode {
            ImageMode::TinyCnn => "tinycnn".to_string(),
            ImageMode::Precomputed => "precomputed".to_string(),
        },
    );
    kv("convergence_eps", cfg.convergence_eps.to_string());
    kv("convergence_patience", cfg.convergence_patience.to_string());
    kv("deterministic", cfg.deterministic.to_string());
    kv("mfcc_target_rate", cfg.mfcc.target_rate.to_string());
    kv("mfcc_window_ms", cfg.mfcc.window_ms.to_string());
    kv("mfcc_hop_ms", cfg.mfcc.hop_ms.to_string());
    kv("mfcc_n_mels", cfg.mfcc.n_mels.to_string());
    kv("mfcc_n_coeffs", cfg.mfcc.n_coeffs.to_string());
    kv("mfcc_fft_size", cfg.mfcc.fft_size.to_string());
    kv("mfcc_target_frames", cfg.mfcc.target_frames.to_string());
    kv("mfcc_log_floor", cfg.mfcc.log_floor.to_string());
    s
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value {:?} for key {}", v, key)))
}

/// Apply `key=value` lines onto `base`. Unknown keys are rejected.
pub fn apply_kv(base: &mut TrainConfig, text: &str) -> Result<()> {
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!("line {}: expected key=value, got {:?}", lineno + 1, raw)));
        };
        let key = key.trim();
        let v = value.trim();
        match key {
            "lr" => base.lr = parse(key, v)?,
            "epochs" => base.epochs = parse(key, v)?,
            "batch_size" => base.batch_size = parse(key, v)?,
            "weight_decay" => base.weight_decay = parse(key, v)?,
            "momentum" => base.momentum = parse(key, v)?,
            "rms_decay" => base.rms_decay = parse(key, v)?,
            "rms_eps" => base.rms_eps = parse(key, v)?,
            "seed" => base.seed = parse(key, v)?,
            "xi" => base.loss.xi = parse(key, v)?,
            "zeta" => base.loss.zeta = parse(key, v)?,
            "eta1" => base.loss.eta1 = parse(key, v)?,
            "eta2" => base.loss.eta2 = parse(key, v)?,
            "epsilon" => base.loss.epsilon = parse(key, v)?,
            "enable_pair" => base.loss.enable_pair = parse(key, v)?,
            "enable_intra" => base.loss.enable_intra = parse(key, v)?,
            "enable_inter" => base.loss.enable_inter = parse(key, v)?,
            "enable_class" => base.loss.enable_class = parse(key, v)?,
            "dilation_override" => {
                base.dilation_override = if v == "none" { None } else { Some(parse(key, v)?) }
            }
            "hidden_dim" => base.hidden_dim = parse(key, v)?,
            "rep_dim" => base.rep_dim = parse(key, v)?,
            "train_frac" => base.train_frac = parse(key, v)?,
            "calib_size" => base.calib_size = parse(key, v)?,
            "image_mode" => {
                base.image_mode = match v {
                    "tinycnn" => ImageMode::TinyCnn,
                    "precomputed" => ImageMode::Precomputed,
                    other => return Err(Error::Config(format!("unknown image_mode {:?}", other))),
                }
            }
            "convergence_eps" => base.convergence_eps = parse(key, v)?,
            "convergence_patience" => base.convergence_patience = parse(key, v)?,
            "deterministic" => base.deterministic = parse(key, v)?,
            "mfcc_target_rate" => base.mfcc.target_rate = parse(key, v)?,
            "mfcc_window_ms" => base.mfcc.window_ms = parse(key, v)?,
            "mfcc_hop_ms" => base.mfcc.hop_ms = parse(key, v)?,
            "mfcc_n_mels" => base.mfcc.n_mels = parse(key, v)?,
            "mfcc_n_coeffs" => base.mfcc.n_coeffs = parse(key, v)?,
            "mfcc_fft_size" => base.mfcc.fft_size = parse(key, v)?,
            "mfcc_target_frames" => base.mfcc.target_frames = parse(key, v)?,
            "mfcc_log_floor" => base.mfcc.log_floor = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown key {:?}", other))),
        }
    }
    Ok(())
}

pub fn parse_train_config(text: &str) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    apply_kv(&mut cfg, text)?;
    Ok(cfg)
}

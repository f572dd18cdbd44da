//! The optimization loop: per-epoch shuffled batches through encoders, heads,
//! and the joint loss, with RMSProp updates, convergence tracking, and the
//! (η₁, η₂) grid sweep.

use std::fs;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::encoders::{compute_normalization, apply_normalization, ImageFeatureProvider, ImageSource};
use crate::error::{Error, Result};
use crate::graph::Tape;
use crate::losses::{joint_loss, LossConfig};
use crate::manifest::Manifest;
use crate::mfcc::{self, MfccConfig};
use crate::model::{ImageMode, ModelConfig, ScrlModel, IMAGE_FEAT_DIM};
use crate::optim::{RmsPropConfig, RmsPropState};
use crate::retrieval::{mean_ap, EmbeddingCorpus, Protocol};
use crate::seeding::{self, stream};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub momentum: f64,
    pub rms_decay: f64,
    pub rms_eps: f64,
    pub seed: u64,
    pub loss: LossConfig,
    /// Set every conv dilation in the voice network to this value.
    pub dilation_override: Option<usize>,
    pub hidden_dim: usize,
    pub rep_dim: usize,
    /// Fraction of samples in the training split.
    pub train_frac: f64,
    /// Training samples used to calibrate filter-activation normalization.
    pub calib_size: usize,
    pub image_mode: ImageMode,
    /// Stop when the epoch-mean loss improves by less than this...
    pub convergence_eps: f64,
    /// ...for this many consecutive epochs (0 disables early stopping).
    pub convergence_patience: usize,
    /// Single-threaded, bit-reproducible execution.
    pub deterministic: bool,
    pub mfcc: MfccConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.0004,
            epochs: 50,
            batch_size: 32,
            weight_decay: 0.0005,
            momentum: 0.9,
            rms_decay: 0.9,
            rms_eps: 1e-8,
            seed: 42,
            loss: LossConfig::default(),
            dilation_override: None,
            hidden_dim: 1024,
            rep_dim: 1024,
            train_frac: 0.8,
            calib_size: 16,
            image_mode: ImageMode::TinyCnn,
            convergence_eps: 1e-5,
            convergence_patience: 5,
            deterministic: true,
            mfcc: MfccConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr < 0.0 {
            return Err(Error::Contract("lr must be non-negative".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Contract("epochs must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Contract("batch size must be at least 2".into()));
        }
        if !(0.0 < self.train_frac && self.train_frac < 1.0) {
            return Err(Error::Contract("train_frac must lie in (0, 1)".into()));
        }
        if let Some(d) = self.dilation_override {
            if d == 0 {
                return Err(Error::Contract("dilation override must be at least 1".into()));
            }
        }
        self.loss.validate()?;
        self.mfcc.validate()
    }

    pub fn model_config(&self, n_classes: usize) -> ModelConfig {
        ModelConfig {
            mfcc: self.mfcc.clone(),
            hidden_dim: self.hidden_dim,
            rep_dim: self.rep_dim,
            n_classes,
            dilation_override: self.dilation_override,
            image_mode: self.image_mode,
        }
    }

    fn optimizer_config(&self) -> RmsPropConfig {
        RmsPropConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            momentum: self.momentum,
            rms_decay: self.rms_decay,
            rms_eps: self.rms_eps,
        }
    }
}

/// Decoded, feature-extracted dataset held in memory for training/eval.
pub struct PreparedDataset {
    pub ids: Vec<String>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    /// Canonical flattened MFCC input per sample.
    pub voice_inputs: Vec<Tensor>,
    /// Pooled 512-d image feature per sample, [N×512].
    pub image_feats: Tensor,
}

/// Voice preprocessing for every manifest record (model-independent).
pub fn prepare_voice_inputs(manifest: &Manifest, cfg: &MfccConfig) -> Result<Vec<Tensor>> {
    manifest
        .records
        .iter()
        .map(|r| {
            let bytes = fs::read(&r.voice_path).map_err(|e| Error::io(&r.voice_path, e))?;
            mfcc::voice_input_from_wav_bytes(&bytes, cfg)
                .map_err(|e| Error::Format(format!("{} ({})", e, r.id)))
        })
        .collect()
}

/// Pooled image features for every record via the model's provider.
pub fn compute_image_features(model: &ScrlModel, manifest: &Manifest) -> Result<Tensor> {
    let n = manifest.records.len();
    let mut data = Vec::with_capacity(n * IMAGE_FEAT_DIM);
    for r in &manifest.records {
        let pooled = model
            .image_provider
            .pooled_feature(&model.params, &ImageSource::Path(&r.image_path))
            .map_err(|e| Error::Format(format!("{} ({})", e, r.id)))?;
        data.extend_from_slice(pooled.data());
    }
    Tensor::new(vec![n, IMAGE_FEAT_DIM], data)
}

/// Seeded shuffle split into (train, test) index lists, each sorted.
pub fn split_indices(n: usize, train_frac: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeding::rng_for(seed, stream::SPLIT));
    let n_train = ((n as f64) * train_frac).round() as usize;
    let n_train = n_train.clamp(1, n.saturating_sub(1).max(1));
    let mut train = idx[..n_train].to_vec();
    let mut test = idx[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Calibrate filter-activation normalization on the first training samples
/// and rescale both encoders in place.
pub fn normalize_encoders(
    model: &mut ScrlModel,
    manifest: &Manifest,
    voice_inputs: &[Tensor],
    calib_idx: &[usize],
) -> Result<()> {
    if calib_idx.is_empty() {
        return Ok(());
    }
    let voice_calib: Vec<Tensor> = calib_idx
        .iter()
        .map(|&i| voice_inputs[i].reshape(vec![voice_inputs[i].numel(), 1]))
        .collect::<Result<_>>()?;
    let stats = compute_normalization(&model.voice_encoder, &model.params, &voice_calib)?;
    apply_normalization(&model.voice_encoder, &mut model.params, &stats)?;

    if let ImageFeatureProvider::TinyCnn(cnn) = &model.image_provider {
        let cnn = cnn.clone();
        let image_calib: Vec<Tensor> = calib_idx
            .iter()
            .map(|&i| crate::ppm::read_image(&manifest.records[i].image_path))
            .collect::<Result<_>>()?;
        let stats = compute_normalization(&cnn, &model.params, &image_calib)?;
        apply_normalization(&cnn, &mut model.params, &stats)?;
    }
    Ok(())
}

/// Everything one training run owns: model, optimizer state, prepared data,
/// split, and the epoch-shuffling RNG.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub model: ScrlModel,
    pub opt: RmsPropState,
    pub data: PreparedDataset,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub epoch: usize,
    pub loss_log: Vec<f64>,
    rng: ChaCha8Rng,
    conv_prev: f64,
    conv_streak: usize,
}

impl Trainer {
    /// Fresh run: init parameters, normalize encoders on the calibration
    /// subset of the training split, and precompute all features.
    pub fn new(manifest: &Manifest, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let voice_inputs = prepare_voice_inputs(manifest, &cfg.mfcc)?;
        let (train_idx, test_idx) = split_indices(manifest.records.len(), cfg.train_frac, cfg.seed);
        if train_idx.len() < cfg.batch_size {
            return Err(Error::Contract(format!(
                "training split of {} is smaller than the batch size {}",
                train_idx.len(),
                cfg.batch_size
            )));
        }
        let mut model = ScrlModel::init(cfg.model_config(manifest.n_classes), cfg.seed)?;
        let calib: Vec<usize> = train_idx.iter().copied().take(cfg.calib_size).collect();
        normalize_encoders(&mut model, manifest, &voice_inputs, &calib)?;
        let image_feats = compute_image_features(&model, manifest)?;
        let data = PreparedDataset {
            ids: manifest.records.iter().map(|r| r.id.clone()).collect(),
            labels: manifest.records.iter().map(|r| r.label).collect(),
            n_classes: manifest.n_classes,
            voice_inputs,
            image_feats,
        };
        let opt = RmsPropState::new(&model.params);
        let rng = seeding::rng_for(cfg.seed, stream::TRAIN);
        Ok(Self {
            cfg,
            model,
            opt,
            data,
            train_idx,
            test_idx,
            epoch: 0,
            loss_log: Vec::new(),
            rng,
            conv_prev: f64::INFINITY,
            conv_streak: 0,
        })
    }

    /// Assemble a trainer from an already-initialized model and prepared
    /// dataset (optimizer state and epoch RNG start fresh). Useful when
    /// several runs share expensive feature preparation.
    pub fn from_parts(
        cfg: TrainConfig,
        model: ScrlModel,
        data: PreparedDataset,
        train_idx: Vec<usize>,
        test_idx: Vec<usize>,
    ) -> Result<Self> {
        cfg.validate()?;
        if train_idx.len() < cfg.batch_size {
            return Err(Error::Contract(format!(
                "training split of {} is smaller than the batch size {}",
                train_idx.len(),
                cfg.batch_size
            )));
        }
        let opt = RmsPropState::new(&model.params);
        let rng = seeding::rng_for(cfg.seed, stream::TRAIN);
        Ok(Self {
            cfg,
            model,
            opt,
            data,
            train_idx,
            test_idx,
            epoch: 0,
            loss_log: Vec::new(),
            rng,
            conv_prev: f64::INFINITY,
            conv_streak: 0,
        })
    }

    /// Resume from checkpoint state; the dataset is re-prepared from the
    /// manifest with the restored (frozen) image backbone, so features match
    /// the original run exactly.
    pub fn from_checkpoint(manifest: &Manifest, ckpt: crate::checkpoint::Checkpoint) -> Result<Self> {
        let cfg = ckpt.cfg;
        cfg.validate()?;
        if manifest.n_classes != ckpt.n_classes {
            return Err(Error::Contract(format!(
                "checkpoint was trained with {} classes, manifest has {}",
                ckpt.n_classes, manifest.n_classes
            )));
        }
        let mut model = ScrlModel::init(cfg.model_config(ckpt.n_classes), cfg.seed)?;
        // Overwrite freshly initialized values with the stored tensors.
        for (_, entry) in model.params.iter_mut() {
            let stored = ckpt
                .params
                .by_name(&entry.name)
                .ok_or_else(|| Error::Format(format!("checkpoint: missing parameter section {}", entry.name)))?;
            let t = ckpt.params.value(stored);
            if t.shape() != entry.value.shape() {
                return Err(Error::Format(format!(
                    "checkpoint: parameter {} has shape {:?}, model expects {:?}",
                    entry.name,
                    t.shape(),
                    entry.value.shape()
                )));
            }
            entry.value = t.clone();
        }
        let voice_inputs = prepare_voice_inputs(manifest, &cfg.mfcc)?;
        let (train_idx, test_idx) = split_indices(manifest.records.len(), cfg.train_frac, cfg.seed);
        let image_feats = compute_image_features(&model, manifest)?;
        let data = PreparedDataset {
            ids: manifest.records.iter().map(|r| r.id.clone()).collect(),
            labels: manifest.records.iter().map(|r| r.label).collect(),
            n_classes: manifest.n_classes,
            voice_inputs,
            image_feats,
        };
        let mut rng = seeding::rng_for(cfg.seed, stream::TRAIN);
        rng.set_word_pos(ckpt.rng_word_pos);
        Ok(Self {
            cfg,
            model,
            opt: ckpt.opt,
            data,
            train_idx,
            test_idx,
            epoch: ckpt.epoch,
            loss_log: ckpt.loss_log,
            rng,
            conv_prev: ckpt.conv_prev,
            conv_streak: ckpt.conv_streak,
        })
    }

    /// One epoch: shuffle, batch, forward, backward, update. Returns the
    /// sample-weighted mean joint loss.
    fn run_epoch(&mut self) -> Result<f64> {
        let mut order = self.train_idx.clone();
        order.shuffle(&mut self.rng);
        let opt_cfg = self.cfg.optimizer_config();
        let mut loss_sum = 0.0;
        let mut n_samples = 0usize;
        for (batch_no, batch) in order.chunks(self.cfg.batch_size).enumerate() {
            if batch.len() < 2 {
                continue; // pair-based losses need at least two samples
            }
            let mut feats = Vec::with_capacity(batch.len() * IMAGE_FEAT_DIM);
            for &i in batch {
                feats.extend_from_slice(self.data.image_feats.row(i));
            }
            let feats = Tensor::new(vec![batch.len(), IMAGE_FEAT_DIM], feats)?;
            let voices: Vec<&Tensor> = batch.iter().map(|&i| &self.data.voice_inputs[i]).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| self.data.labels[i]).collect();

            let mut tape = Tape::new();
            let (phi_i, phi_v) = self.model.batch_forward(&mut tape, &feats, &voices)?;
            let (loss, parts) = joint_loss(
                &mut tape,
                &self.model.params,
                phi_i,
                phi_v,
                &labels,
                &self.model.image_classifier,
                &self.model.voice_classifier,
                &self.cfg.loss,
            )?;
            if !parts.total.is_finite() {
                return Err(Error::NonFinite(format!(
                    "epoch {}, batch {}: total {:?}, pair {:?}, intra {:?}, inter {:?}, class {:?}",
                    self.epoch + 1,
                    batch_no,
                    parts.total,
                    parts.pair,
                    parts.intra,
                    parts.inter,
                    parts.class
                )));
            }
            self.model.params.zero_grads();
            tape.backward(loss, &mut self.model.params)?;
            self.opt.step(&mut self.model.params, &opt_cfg)?;
            loss_sum += parts.total * batch.len() as f64;
            n_samples += batch.len();
        }
        if n_samples == 0 {
            return Err(Error::Contract("epoch produced no usable batches".into()));
        }
        Ok(loss_sum / n_samples as f64)
    }

    fn converged(&self) -> bool {
        self.cfg.convergence_patience > 0 && self.conv_streak >= self.cfg.convergence_patience
    }

    /// Train until the configured epoch count or convergence; `on_epoch`
    /// observes (1-based epoch, mean loss).
    pub fn run(&mut self, mut on_epoch: impl FnMut(usize, f64)) -> Result<()> {
        while self.epoch < self.cfg.epochs && !self.converged() {
            let loss = self.run_epoch()?;
            self.epoch += 1;
            self.loss_log.push(loss);
            if self.conv_prev - loss < self.cfg.convergence_eps {
                self.conv_streak += 1;
            } else {
                self.conv_streak = 0;
            }
            self.conv_prev = loss;
            on_epoch(self.epoch, loss);
        }
        Ok(())
    }

    /// Embed a subset of the dataset with the current parameters.
    pub fn embed(&self, indices: &[usize]) -> Result<EmbeddingCorpus> {
        embed_indices(&self.model, &self.data, indices)
    }

    pub fn to_checkpoint(&self) -> crate::checkpoint::Checkpoint {
        crate::checkpoint::Checkpoint {
            cfg: self.cfg.clone(),
            n_classes: self.data.n_classes,
            params: self.model.params.clone(),
            opt: self.opt.clone(),
            epoch: self.epoch,
            loss_log: self.loss_log.clone(),
            rng_word_pos: self.rng.get_word_pos(),
            conv_prev: self.conv_prev,
            conv_streak: self.conv_streak,
        }
    }
}

/// Embed `indices` of a prepared dataset in fixed-size batches.
pub fn embed_indices(model: &ScrlModel, data: &PreparedDataset, indices: &[usize]) -> Result<EmbeddingCorpus> {
    let rep_dim = model.config.rep_dim;
    let mut image_rows = Vec::with_capacity(indices.len() * rep_dim);
    let mut voice_rows = Vec::with_capacity(indices.len() * rep_dim);
    for chunk in indices.chunks(32) {
        let mut feats = Vec::with_capacity(chunk.len() * IMAGE_FEAT_DIM);
        for &i in chunk {
            feats.extend_from_slice(data.image_feats.row(i));
        }
        let feats = Tensor::new(vec![chunk.len(), IMAGE_FEAT_DIM], feats)?;
        image_rows.extend_from_slice(model.embed_image_features(&feats)?.data());
        let voices: Vec<Tensor> = chunk.iter().map(|&i| data.voice_inputs[i].clone()).collect();
        voice_rows.extend_from_slice(model.embed_voice_inputs(&voices)?.data());
    }
    Ok(EmbeddingCorpus {
        ids: indices.iter().map(|&i| data.ids[i].clone()).collect(),
        labels: indices.iter().map(|&i| data.labels[i]).collect(),
        image_reps: Tensor::new(vec![indices.len(), rep_dim], image_rows)?,
        voice_reps: Tensor::new(vec![indices.len(), rep_dim], voice_rows)?,
    })
}

/// One grid cell's outcome in the (η₁, η₂) sweep.
#[derive(Clone, Copy, Debug)]
pub struct SweepRow {
    pub eta1: f64,
    pub eta2: f64,
    pub map_i2v: f64,
    pub map_v2i: f64,
}

/// Train one run per (η₁, η₂) cell with a fresh derived seed and evaluate
/// test-split mAP under both protocols. Rows are sorted by mean mAP
/// descending, ties by (η₁, η₂).
pub fn hyperparameter_sweep(
    manifest: &Manifest,
    base: &TrainConfig,
    eta1_grid: &[f64],
    eta2_grid: &[f64],
    mut on_cell: impl FnMut(usize, &SweepRow),
) -> Result<Vec<SweepRow>> {
    if eta1_grid.is_empty() || eta2_grid.is_empty() {
        return Err(Error::Contract("sweep grid must be non-empty".into()));
    }
    let mut rows = Vec::with_capacity(eta1_grid.len() * eta2_grid.len());
    for (cell, (&eta1, &eta2)) in eta1_grid
        .iter()
        .flat_map(|e1| eta2_grid.iter().map(move |e2| (e1, e2)))
        .enumerate()
    {
        let mut cfg = base.clone();
        cfg.loss.eta1 = eta1;
        cfg.loss.eta2 = eta2;
        cfg.seed = seeding::derive_u64(base.seed, 1000 + cell as u64);
        let mut trainer = Trainer::new(manifest, cfg)?;
        trainer.run(|_, _| {})?;
        let corpus = trainer.embed(&trainer.test_idx)?;
        let (map_i2v, _) = mean_ap(&corpus, Protocol::ImageToVoice)?;
        let (map_v2i, _) = mean_ap(&corpus, Protocol::VoiceToImage)?;
        let row = SweepRow { eta1, eta2, map_i2v, map_v2i };
        on_cell(cell, &row);
        rows.push(row);
    }
    rows.sort_by(|a, b| {
        let ma = (a.map_i2v + a.map_v2i) / 2.0;
        let mb = (b.map_i2v + b.map_v2i) / 2.0;
        mb.partial_cmp(&ma)
            .expect("finite mAP")
            .then_with(|| a.eta1.partial_cmp(&b.eta1).unwrap())
            .then_with(|| a.eta2.partial_cmp(&b.eta2).unwrap())
    });
    Ok(rows)
}

/// `eta1,eta2,map_i2v,map_v2i` rows of a sweep table.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("eta1,eta2,map_i2v,map_v2i\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.eta1, r.eta2, r.map_i2v, r.map_v2i));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_deterministic_and_partitions() {
        let (tr1, te1) = split_indices(100, 0.8, 9);
        let (tr2, te2) = split_indices(100, 0.8, 9);
        assert_eq!(tr1, tr2);
        assert_eq!(te1, te2);
        assert_eq!(tr1.len(), 80);
        assert_eq!(te1.len(), 20);
        let mut all: Vec<usize> = tr1.iter().chain(te1.iter()).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        let (tr3, _) = split_indices(100, 0.8, 10);
        assert_ne!(tr1, tr3);
    }

    #[test]
    fn batch_order_covers_each_sample_once_per_epoch() {
        // The epoch shuffle is a permutation: chunking covers every index once.
        let mut rng = seeding::rng_for(4, stream::TRAIN);
        let mut order: Vec<usize> = (0..37).collect();
        order.shuffle(&mut rng);
        let mut seen = vec![0usize; 37];
        for chunk in order.chunks(8) {
            for &i in chunk {
                seen[i] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn config_validation_catches_degenerate_values() {
        let mut cfg = TrainConfig::default();
        cfg.batch_size = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.train_frac = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.epochs = 0;
        assert!(cfg.validate().is_err());
    }
}

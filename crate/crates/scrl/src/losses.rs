//! The training objective: cosine-distance consistency losses (pairwise,
//! intra-modality, non-paired inter-modality), per-branch softmax
//! classification, and their weighted combination.
//!
//! All losses are means: pairwise and classification over the batch,
//! intra/inter over the B(B−1) ordered index pairs, where each pair
//! contributes the sum of its two hinge terms.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{ParamSet, Tape, Var};
use crate::layers::{Activation, DenseLayer};
use crate::representation::trunc_normal;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct LossConfig {
    /// Intra-modality hinge margin ξ.
    pub xi: f64,
    /// Inter-modality hinge margin ζ.
    pub zeta: f64,
    /// Weight of the intra + inter consistency group.
    pub eta1: f64,
    /// Weight of the classification term.
    pub eta2: f64,
    /// Additive guard inside the classification log.
    pub epsilon: f64,
    pub enable_pair: bool,
    pub enable_intra: bool,
    pub enable_inter: bool,
    pub enable_class: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            xi: 0.4,
            zeta: 0.4,
            eta1: 1.0,
            eta2: 0.1,
            epsilon: 1e-10,
            enable_pair: true,
            enable_intra: true,
            enable_inter: true,
            enable_class: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.xi < 0.0 || self.zeta < 0.0 {
            return Err(Error::Contract("margins must be non-negative".into()));
        }
        if self.eta1 < 0.0 || self.eta2 < 0.0 {
            return Err(Error::Contract("trade-off coefficients must be non-negative".into()));
        }
        if self.epsilon <= 0.0 {
            return Err(Error::Contract("epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Cosine distance between two equal-length vectors, in [0, 2].
pub fn cosine_distance(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("cosine_distance: lengths {} vs {}", x.len(), y.len())));
    }
    Ok(crate::ops::cosine_distance_raw(x, y))
}

/// Hinge ℏ(x) = max(0, x).
pub fn hinge(x: f64) -> f64 {
    x.max(0.0)
}

/// One consistency hinge term: ℏ(1 − ℓ·(margin − d)).
pub fn hinge_consistency_term(label_indicator: f64, margin: f64, d: f64) -> f64 {
    hinge(1.0 - label_indicator * (margin - d))
}

/// ℓ_ij matrix: +1 where labels match, −1 otherwise (diagonal +1).
pub fn label_indicator_matrix(labels: &[usize]) -> Tensor {
    let b = labels.len();
    let mut m = vec![0.0; b * b];
    for i in 0..b {
        for j in 0..b {
            m[i * b + j] = if labels[i] == labels[j] { 1.0 } else { -1.0 };
        }
    }
    Tensor::new(vec![b, b], m).expect("square")
}

/// Σ over ordered pairs i≠j of ℏ(1 − ℓ_ij(margin − D_ij)) for one B×B
/// distance matrix.
fn hinge_sum(tape: &mut Tape, dist: Var, labels: &[usize], margin: f64) -> Result<Var> {
    let b = labels.len();
    let ell = label_indicator_matrix(labels);
    let mut coef = vec![0.0; b * b];
    let mut mask = vec![0.0; b * b];
    for i in 0..b {
        for j in 0..b {
            coef[i * b + j] = 1.0 - ell.data()[i * b + j] * margin;
            if i != j {
                mask[i * b + j] = 1.0;
            }
        }
    }
    let ell = tape.constant(ell);
    let coef = tape.constant(Tensor::new(vec![b, b], coef)?);
    let mask = tape.constant(Tensor::new(vec![b, b], mask)?);
    let signed = tape.mul(ell, dist)?;
    let arg = tape.add(coef, signed)?;
    let hinged = tape.relu(arg);
    let masked = tape.mul(hinged, mask)?;
    Ok(tape.sum(masked))
}

fn batch_dims(tape: &Tape, phi_i: Var, phi_v: Var) -> Result<usize> {
    let (bi, di) = tape.value(phi_i).dims2()?;
    let (bv, dv) = tape.value(phi_v).dims2()?;
    if bi != bv || di != dv {
        return Err(Error::Shape(format!(
            "representation batches disagree: {:?} vs {:?}",
            tape.value(phi_i).shape(),
            tape.value(phi_v).shape()
        )));
    }
    Ok(bi)
}

/// Mean cosine distance between paired image/voice representations.
pub fn pairwise_loss(tape: &mut Tape, phi_i: Var, phi_v: Var) -> Result<Var> {
    let b = batch_dims(tape, phi_i, phi_v)?;
    let div = tape.cosine_matrix(phi_i, phi_v)?;
    pairwise_from_matrix(tape, div, b)
}

fn pairwise_from_matrix(tape: &mut Tape, div: Var, b: usize) -> Result<Var> {
    let d = tape.diag(div)?;
    let s = tape.sum(d);
    Ok(tape.scale(s, 1.0 / b as f64))
}

/// Same-modality consistency: hinge terms on image-image and voice-voice
/// distances, averaged over ordered pairs.
pub fn intra_loss(tape: &mut Tape, phi_i: Var, phi_v: Var, labels: &[usize], cfg: &LossConfig) -> Result<Var> {
    let b = batch_dims(tape, phi_i, phi_v)?;
    if b < 2 {
        return Err(Error::Contract("intra loss needs a batch of at least 2".into()));
    }
    let dii = tape.cosine_matrix(phi_i, phi_i)?;
    let dvv = tape.cosine_matrix(phi_v, phi_v)?;
    let si = hinge_sum(tape, dii, labels, cfg.xi)?;
    let sv = hinge_sum(tape, dvv, labels, cfg.xi)?;
    let s = tape.add(si, sv)?;
    Ok(tape.scale(s, 1.0 / (b * (b - 1)) as f64))
}

/// Cross-modality consistency over non-paired indices (i ≠ j); the paired
/// diagonal belongs to the pairwise loss.
pub fn inter_loss(tape: &mut Tape, phi_i: Var, phi_v: Var, labels: &[usize], cfg: &LossConfig) -> Result<Var> {
    let b = batch_dims(tape, phi_i, phi_v)?;
    if b < 2 {
        return Err(Error::Contract("inter loss needs a batch of at least 2".into()));
    }
    let dvi = tape.cosine_matrix(phi_v, phi_i)?;
    let div = tape.cosine_matrix(phi_i, phi_v)?;
    inter_from_matrices(tape, dvi, div, labels, b, cfg)
}

fn inter_from_matrices(
    tape: &mut Tape,
    dvi: Var,
    div: Var,
    labels: &[usize],
    b: usize,
    cfg: &LossConfig,
) -> Result<Var> {
    let s1 = hinge_sum(tape, dvi, labels, cfg.zeta)?;
    let s2 = hinge_sum(tape, div, labels, cfg.zeta)?;
    let s = tape.add(s1, s2)?;
    Ok(tape.scale(s, 1.0 / (b * (b - 1)) as f64))
}

/// Softmax classifier head on top of a representation branch.
#[derive(Clone, Debug)]
pub struct ClassifierHead {
    pub layer: DenseLayer,
    pub n_classes: usize,
}

impl ClassifierHead {
    pub fn build(
        params: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_dim: usize,
        n_classes: usize,
    ) -> Result<Self> {
        let w = trunc_normal(rng, &[in_dim, n_classes], in_dim);
        let b = trunc_normal(rng, &[n_classes], in_dim);
        let layer = DenseLayer::new(params, name, w, b, Activation::Softmax)?;
        Ok(Self { layer, n_classes })
    }

    /// Class probabilities for a [B×d] representation batch.
    pub fn forward_probs(&self, tape: &mut Tape, params: &ParamSet, phi: Var) -> Result<Var> {
        self.layer.forward(tape, params, phi)
    }

    pub fn infer_probs(&self, params: &ParamSet, phi: &Tensor) -> Result<Tensor> {
        self.layer.infer(params, phi)
    }
}

fn branch_nll(
    tape: &mut Tape,
    params: &ParamSet,
    head: &ClassifierHead,
    phi: Var,
    labels: &[usize],
    epsilon: f64,
) -> Result<Var> {
    let probs = head.forward_probs(tape, params, phi)?;
    let guarded = tape.add_const(probs, epsilon);
    let logp = tape.log(guarded);
    let picked = tape.gather_rows(logp, labels.to_vec())?;
    Ok(tape.sum(picked))
}

/// Mean over the batch of −log p(label) for both branch classifiers.
pub fn classification_loss(
    tape: &mut Tape,
    params: &ParamSet,
    phi_i: Var,
    phi_v: Var,
    labels: &[usize],
    image_head: &ClassifierHead,
    voice_head: &ClassifierHead,
    cfg: &LossConfig,
) -> Result<Var> {
    let b = batch_dims(tape, phi_i, phi_v)?;
    if labels.len() != b {
        return Err(Error::Contract(format!("{} labels for batch of {}", labels.len(), b)));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= image_head.n_classes) {
        return Err(Error::Contract(format!(
            "label {} out of range 0..{}",
            bad, image_head.n_classes
        )));
    }
    let si = branch_nll(tape, params, image_head, phi_i, labels, cfg.epsilon)?;
    let sv = branch_nll(tape, params, voice_head, phi_v, labels, cfg.epsilon)?;
    let s = tape.add(si, sv)?;
    Ok(tape.scale(s, -1.0 / b as f64))
}

/// Individual term values alongside the combined scalar loss node.
#[derive(Clone, Copy, Debug)]
pub struct LossBreakdown {
    pub total: f64,
    pub pair: Option<f64>,
    pub intra: Option<f64>,
    pub inter: Option<f64>,
    pub class: Option<f64>,
}

/// Pairwise + η₁(intra + inter) consistency combination; disabled terms and
/// zero coefficients contribute nothing to the graph.
pub fn consistency_loss(
    tape: &mut Tape,
    phi_i: Var,
    phi_v: Var,
    labels: &[usize],
    cfg: &LossConfig,
) -> Result<Var> {
    let (node, _) = consistency_parts(tape, phi_i, phi_v, labels, cfg)?;
    Ok(node.unwrap_or_else(|| tape.constant(Tensor::scalar(0.0))))
}

#[allow(clippy::type_complexity)]
fn consistency_parts(
    tape: &mut Tape,
    phi_i: Var,
    phi_v: Var,
    labels: &[usize],
    cfg: &LossConfig,
) -> Result<(Option<Var>, [Option<f64>; 3])> {
    cfg.validate()?;
    let b = batch_dims(tape, phi_i, phi_v)?;
    let mut total: Option<Var> = None;
    let mut parts = [None, None, None];

    // Reuse one image-voice distance matrix for both pair and inter terms.
    let need_div = cfg.enable_pair || (cfg.enable_inter && cfg.eta1 != 0.0);
    let div = if need_div { Some(tape.cosine_matrix(phi_i, phi_v)?) } else { None };

    if cfg.enable_pair {
        let pair = pairwise_from_matrix(tape, div.expect("computed above"), b)?;
        parts[0] = Some(tape.value(pair).item());
        total = Some(pair);
    }
    if cfg.eta1 != 0.0 && (cfg.enable_intra || cfg.enable_inter) {
        if b < 2 {
            return Err(Error::Contract("intra/inter losses need a batch of at least 2".into()));
        }
        let mut group: Option<Var> = None;
        if cfg.enable_intra {
            let intra = intra_loss(tape, phi_i, phi_v, labels, cfg)?;
            parts[1] = Some(tape.value(intra).item());
            group = Some(intra);
        }
        if cfg.enable_inter {
            let dvi = tape.cosine_matrix(phi_v, phi_i)?;
            let inter = inter_from_matrices(tape, dvi, div.expect("computed above"), labels, b, cfg)?;
            parts[2] = Some(tape.value(inter).item());
            group = Some(match group {
                None => inter,
                Some(g) => tape.add(g, inter)?,
            });
        }
        if let Some(g) = group {
            let scaled = tape.scale(g, cfg.eta1);
            total = Some(match total {
                None => scaled,
                Some(t) => tape.add(t, scaled)?,
            });
        }
    }
    Ok((total, parts))
}

/// The full objective; returns the scalar node and per-term values.
#[allow(clippy::too_many_arguments)]
pub fn joint_loss(
    tape: &mut Tape,
    params: &ParamSet,
    phi_i: Var,
    phi_v: Var,
    labels: &[usize],
    image_classifier: &ClassifierHead,
    voice_classifier: &ClassifierHead,
    cfg: &LossConfig,
) -> Result<(Var, LossBreakdown)> {
    let (mut total, parts) = consistency_parts(tape, phi_i, phi_v, labels, cfg)?;
    let mut class_val = None;
    if cfg.enable_class && cfg.eta2 != 0.0 {
        let class = classification_loss(tape, params, phi_i, phi_v, labels, image_classifier, voice_classifier, cfg)?;
        class_val = Some(tape.value(class).item());
        let scaled = tape.scale(class, cfg.eta2);
        total = Some(match total {
            None => scaled,
            Some(t) => tape.add(t, scaled)?,
        });
    }
    let total = total.unwrap_or_else(|| tape.constant(Tensor::scalar(0.0)));
    let breakdown = LossBreakdown {
        total: tape.value(total).item(),
        pair: parts[0],
        intra: parts[1],
        inter: parts[2],
        class: class_val,
    };
    Ok((total, breakdown))
}

//! Retrieval evaluation: cosine-distance ranking over an embedded corpus and
//! the mAP / P@k / precision-curve metrics for both query protocols.

use crate::error::{Error, Result};
use crate::losses::cosine_distance;
use crate::tensor::Tensor;

/// Parallel arrays of embedded samples; one image and one voice
/// representation per id.
#[derive(Clone, Debug)]
pub struct EmbeddingCorpus {
    pub ids: Vec<String>,
    pub labels: Vec<usize>,
    pub image_reps: Tensor,
    pub voice_reps: Tensor,
}

impl EmbeddingCorpus {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.ids.len();
        let (ri, _) = self.image_reps.dims2()?;
        let (rv, dv) = self.voice_reps.dims2()?;
        let di = self.image_reps.dims2()?.1;
        if self.labels.len() != n || ri != n || rv != n || di != dv {
            return Err(Error::Shape(format!(
                "corpus arrays disagree: {} ids, {} labels, image {:?}, voice {:?}",
                n,
                self.labels.len(),
                self.image_reps.shape(),
                self.voice_reps.shape()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Protocol {
    ImageToVoice,
    VoiceToImage,
}

impl Protocol {
    pub fn code(self) -> &'static str {
        match self {
            Protocol::ImageToVoice => "i2v",
            Protocol::VoiceToImage => "v2i",
        }
    }
}

/// One query's full ranking: targets sorted by ascending distance, ties by
/// ascending target id.
#[derive(Clone, Debug)]
pub struct RankedResult {
    pub query_id: String,
    pub protocol: Protocol,
    /// (target index into the corpus, distance), best first.
    pub entries: Vec<(usize, f64)>,
    /// Same-class flags parallel to `entries`.
    pub relevant: Vec<bool>,
}

/// Rank every target against one query representation.
///
/// The query itself is excluded only when the target set shares the query's
/// modality and id; the cross-modal counterpart of a query is a valid target.
#[allow(clippy::too_many_arguments)]
pub fn rank_query(
    query_rep: &[f64],
    query_id: &str,
    query_label: usize,
    protocol: Protocol,
    targets_share_query_modality: bool,
    target_ids: &[String],
    target_labels: &[usize],
    target_reps: &Tensor,
) -> Result<RankedResult> {
    let (n, _) = target_reps.dims2()?;
    if n == 0 {
        return Err(Error::Contract("rank: empty target set".into()));
    }
    let mut entries: Vec<(usize, f64)> = Vec::with_capacity(n);
    for t in 0..n {
        if targets_share_query_modality && target_ids[t] == query_id {
            continue;
        }
        entries.push((t, cosine_distance(query_rep, target_reps.row(t))?));
    }
    if entries.is_empty() {
        return Err(Error::Contract("rank: no targets left after exclusion".into()));
    }
    entries.sort_by(|a, b| {
        a.1.partial_cmp(&b.1)
            .expect("finite distances")
            .then_with(|| target_ids[a.0].cmp(&target_ids[b.0]))
    });
    let relevant = entries.iter().map(|&(t, _)| target_labels[t] == query_label).collect();
    Ok(RankedResult { query_id: query_id.to_string(), protocol, entries, relevant })
}

/// AP over the full list: (1/R)·Σ over relevant ranks k of (relevant@k)/k.
/// None when the query has no relevant target.
pub fn average_precision(r: &RankedResult) -> Option<f64> {
    let total_relevant = r.relevant.iter().filter(|&&x| x).count();
    if total_relevant == 0 {
        return None;
    }
    let mut hits = 0usize;
    let mut acc = 0.0;
    for (k, &rel) in r.relevant.iter().enumerate() {
        if rel {
            hits += 1;
            acc += hits as f64 / (k + 1) as f64;
        }
    }
    Some(acc / total_relevant as f64)
}

/// Fraction of relevant targets among the top k.
pub fn precision_at_k(r: &RankedResult, k: usize) -> Result<f64> {
    if k == 0 || k > r.relevant.len() {
        return Err(Error::Contract(format!(
            "precision_at_k: k = {} outside 1..={}",
            k,
            r.relevant.len()
        )));
    }
    let hits = r.relevant[..k].iter().filter(|&&x| x).count();
    Ok(hits as f64 / k as f64)
}

/// mAP / P@k / precision-curve summary for one protocol.
#[derive(Clone, Debug)]
pub struct MetricsReport {
    pub protocol: Protocol,
    pub map: f64,
    /// Queries dropped from the mAP mean for lack of any relevant target.
    pub skipped_queries: usize,
    pub p_at: Vec<(usize, f64)>,
    pub curve: Vec<(usize, f64)>,
}

fn rank_all(corpus: &EmbeddingCorpus, protocol: Protocol) -> Result<Vec<RankedResult>> {
    corpus.validate()?;
    let (query_reps, target_reps) = match protocol {
        Protocol::ImageToVoice => (&corpus.image_reps, &corpus.voice_reps),
        Protocol::VoiceToImage => (&corpus.voice_reps, &corpus.image_reps),
    };
    (0..corpus.len())
        .map(|q| {
            rank_query(
                query_reps.row(q),
                &corpus.ids[q],
                corpus.labels[q],
                protocol,
                false,
                &corpus.ids,
                &corpus.labels,
                target_reps,
            )
        })
        .collect()
}

/// Evaluate one protocol: mean AP over queries with at least one relevant
/// target, P@k for each requested k, and the mean precision curve for
/// k = 1..=k_max (default: the full target count).
pub fn evaluate(
    corpus: &EmbeddingCorpus,
    protocol: Protocol,
    ks: &[usize],
    k_max: Option<usize>,
) -> Result<MetricsReport> {
    let rankings = rank_all(corpus, protocol)?;
    let n_targets = rankings[0].relevant.len();
    let k_max = k_max.unwrap_or(n_targets).min(n_targets);

    let mut ap_sum = 0.0;
    let mut ap_count = 0usize;
    let mut skipped = 0usize;
    let mut curve_acc = vec![0.0; k_max];
    for r in &rankings {
        match average_precision(r) {
            Some(ap) => {
                ap_sum += ap;
                ap_count += 1;
            }
            None => skipped += 1,
        }
        let mut hits = 0usize;
        for k in 1..=k_max {
            if r.relevant[k - 1] {
                hits += 1;
            }
            curve_acc[k - 1] += hits as f64 / k as f64;
        }
    }
    if ap_count == 0 {
        return Err(Error::Contract("evaluate: every query lacked relevant targets".into()));
    }
    let nq = rankings.len() as f64;
    let curve: Vec<(usize, f64)> = curve_acc.iter().enumerate().map(|(i, &v)| (i + 1, v / nq)).collect();
    let mut p_at = Vec::with_capacity(ks.len());
    for &k in ks {
        if k == 0 || k > n_targets {
            return Err(Error::Contract(format!("P@{k} undefined for {n_targets} targets")));
        }
        p_at.push((k, curve[k - 1].1));
    }
    Ok(MetricsReport {
        protocol,
        map: ap_sum / ap_count as f64,
        skipped_queries: skipped,
        p_at,
        curve,
    })
}

/// Mean AP only; returns (mAP, skipped query count).
pub fn mean_ap(corpus: &EmbeddingCorpus, protocol: Protocol) -> Result<(f64, usize)> {
    let rankings = rank_all(corpus, protocol)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut skipped = 0usize;
    for r in &rankings {
        match average_precision(r) {
            Some(ap) => {
                sum += ap;
                count += 1;
            }
            None => skipped += 1,
        }
    }
    if count == 0 {
        return Err(Error::Contract("mean_ap: every query lacked relevant targets".into()));
    }
    Ok((sum / count as f64, skipped))
}

/// `protocol,metric,k,value` rows for the headline metrics (mAP and P@k).
pub fn metrics_csv(reports: &[MetricsReport]) -> String {
    let mut out = String::from("protocol,metric,k,value\n");
    for r in reports {
        out.push_str(&format!("{},map,,{}\n", r.protocol.code(), r.map));
        for &(k, v) in &r.p_at {
            out.push_str(&format!("{},p_at,{},{}\n", r.protocol.code(), k, v));
        }
    }
    out
}

/// `k,precision` rows of one protocol's precision curve.
pub fn curve_csv(report: &MetricsReport) -> String {
    let mut out = String::from("k,precision\n");
    for &(k, v) in &report.curve {
        out.push_str(&format!("{},{}\n", k, v));
    }
    out
}

/// Flat key=value summary of the whole report set.
pub fn summary_kv(reports: &[MetricsReport]) -> String {
    let mut out = String::new();
    for r in reports {
        out.push_str(&format!("{}.map={}\n", r.protocol.code(), r.map));
        for &(k, v) in &r.p_at {
            out.push_str(&format!("{}.p_at_{}={}\n", r.protocol.code(), k, v));
        }
        if r.skipped_queries > 0 {
            out.push_str(&format!("{}.skipped_queries={}\n", r.protocol.code(), r.skipped_queries));
        }
    }
    out
}

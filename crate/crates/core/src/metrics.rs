//! Evaluation of the global model: test accuracy and embedding-space
//! compactness/separation statistics.

use std::collections::BTreeMap;
use std::str::FromStr;

use rand::Rng;

use crate::data::Dataset;
use crate::error::{FedQuadError, Result};
use crate::model::{classify, embed, ModelParameters};
use crate::numerics::Tensor;
use crate::rng::{derived_rng, stream};

/// Fraction of rows whose argmax logit equals the label. Ties go to the
/// lowest class index.
pub fn accuracy(params: &ModelParameters, test: &Dataset) -> Result<f64> {
    let logits = classify(params, test.features())?;
    let correct = test
        .labels()
        .iter()
        .enumerate()
        .filter(|&(r, &y)| argmax(logits.row(r)) == y)
        .count();
    Ok(correct as f64 / test.len() as f64)
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuditMode {
    /// Mean pairwise distances within and across classes.
    Pairwise,
    /// Distances to class centroids (intra) and between centroids (inter).
    Centroid,
}

impl FromStr for AuditMode {
    type Err = FedQuadError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pairwise" => Ok(AuditMode::Pairwise),
            "centroid" => Ok(AuditMode::Centroid),
            other => Err(FedQuadError::Config(format!(
                "unknown audit mode {other:?} (expected pairwise or centroid)"
            ))),
        }
    }
}

impl AuditMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            AuditMode::Pairwise => "pairwise",
            AuditMode::Centroid => "centroid",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditConfig {
    /// Pair sets larger than this are reservoir-subsampled to this size.
    pub sample_cap: usize,
    pub mode: AuditMode,
    pub seed: u64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            sample_cap: 50_000,
            mode: AuditMode::Pairwise,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingAudit {
    pub intra_class: f64,
    pub inter_class: f64,
    /// `inter / intra`; `+inf` when intra is zero (see `ratio_infinite`).
    pub ratio: f64,
    pub ratio_infinite: bool,
    pub per_class_intra: BTreeMap<usize, f64>,
    /// Classes with fewer than two samples, left out of the intra average.
    pub excluded_classes: Vec<usize>,
}

pub fn embedding_audit(
    params: &ModelParameters,
    test: &Dataset,
    cfg: &AuditConfig,
) -> Result<EmbeddingAudit> {
    let z = embed(params, test.features())?;
    audit_embeddings(&z, test.labels(), cfg)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Mean of `f(pair)` over the pair stream, reservoir-subsampled to `cap`.
fn mean_over_pairs<I, R>(
    pairs: I,
    cap: usize,
    rng: &mut R,
    f: impl Fn((usize, usize)) -> f64,
) -> f64
where
    I: Iterator<Item = (usize, usize)>,
    R: Rng,
{
    let mut reservoir: Vec<(usize, usize)> = Vec::new();
    for (k, pair) in pairs.enumerate() {
        if k < cap {
            reservoir.push(pair);
        } else {
            let j = rng.random_range(0..=k);
            if j < cap {
                reservoir[j] = pair;
            }
        }
    }
    reservoir.sort_unstable();
    reservoir.iter().map(|&p| f(p)).sum::<f64>() / reservoir.len() as f64
}

/// Audit of an explicit embedding matrix; row `i` has label `labels[i]`.
pub fn audit_embeddings(z: &Tensor, labels: &[usize], cfg: &AuditConfig) -> Result<EmbeddingAudit> {
    if z.shape().len() != 2 || z.rows() != labels.len() {
        return Err(FedQuadError::Dimension {
            op: "embedding_audit",
            left: z.shape().to_vec(),
            right: vec![labels.len()],
        });
    }
    if cfg.sample_cap == 0 {
        return Err(FedQuadError::Config(
            "audit sample cap must be positive".into(),
        ));
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    let excluded: Vec<usize> = groups
        .iter()
        .filter(|(_, m)| m.len() < 2)
        .map(|(&c, _)| c)
        .collect();
    let qualifying = groups.len() - excluded.len();
    if qualifying < 2 {
        return Err(FedQuadError::DegenerateEmbedding(format!(
            "need 2 classes with at least 2 samples each, found {qualifying}"
        )));
    }
    let mut rng = derived_rng(cfg.seed, &[stream::AUDIT]);
    let row = |i: usize| z.row(i);

    let mut per_class_intra = BTreeMap::new();
    let inter_class = match cfg.mode {
        AuditMode::Pairwise => {
            for (&c, members) in groups.iter().filter(|(_, m)| m.len() >= 2) {
                let n = members.len();
                let pairs = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j)));
                let mean = mean_over_pairs(pairs, cfg.sample_cap, &mut rng, |(i, j)| {
                    dist(row(members[i]), row(members[j]))
                });
                per_class_intra.insert(c, mean);
            }
            let n = labels.len();
            let cross = (0..n)
                .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                .filter(|&(i, j)| labels[i] != labels[j]);
            mean_over_pairs(cross, cfg.sample_cap, &mut rng, |(i, j)| {
                dist(row(i), row(j))
            })
        }
        AuditMode::Centroid => {
            let d = z.cols();
            let centroids: BTreeMap<usize, Vec<f64>> = groups
                .iter()
                .map(|(&c, members)| {
                    let mut mu = vec![0.0; d];
                    for &i in members {
                        for (m, v) in mu.iter_mut().zip(row(i)) {
                            *m += v;
                        }
                    }
                    mu.iter_mut().for_each(|m| *m /= members.len() as f64);
                    (c, mu)
                })
                .collect();
            for (&c, members) in groups.iter().filter(|(_, m)| m.len() >= 2) {
                let mu = &centroids[&c];
                let mean =
                    members.iter().map(|&i| dist(row(i), mu)).sum::<f64>() / members.len() as f64;
                per_class_intra.insert(c, mean);
            }
            let cs: Vec<&Vec<f64>> = centroids.values().collect();
            let mut total = 0.0;
            let mut count = 0usize;
            for i in 0..cs.len() {
                for j in i + 1..cs.len() {
                    total += dist(cs[i], cs[j]);
                    count += 1;
                }
            }
            total / count as f64
        }
    };
    let intra_class = per_class_intra.values().sum::<f64>() / per_class_intra.len() as f64;

    if !(intra_class.is_finite() && inter_class.is_finite()) {
        return Err(FedQuadError::NonFinite("embedding audit".into()));
    }
    let (ratio, ratio_infinite) = if intra_class > 0.0 {
        (inter_class / intra_class, false)
    } else if inter_class > 0.0 {
        (f64::INFINITY, true)
    } else {
        return Err(FedQuadError::DegenerateEmbedding(
            "every embedding coincides; the ratio is undefined".into(),
        ));
    };
    Ok(EmbeddingAudit {
        intra_class,
        inter_class,
        ratio,
        ratio_infinite,
        per_class_intra,
        excluded_classes: excluded,
    })
}

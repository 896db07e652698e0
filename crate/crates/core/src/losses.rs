//! Metric losses on embedding batches and the combined local objective
//! `ce + beta * metric`.
//!
//! All losses are batch means. Every function comes in two forms: a graph
//! builder used during training, and a plain evaluator on tensors.

use std::fmt;
use std::str::FromStr;

use crate::error::{FedQuadError, Result};
use crate::numerics::{Graph, NodeId, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossVariant {
    /// Anchor pushed from two negatives of distinct classes, two margins.
    FedQuad,
    /// Standard triplet loss on (anchor, positive, first negative).
    Triplet,
    /// Quadruplet loss whose second hinge uses the negative-pair distance.
    ClassicQuadruplet,
    /// Cross-entropy alone; plain FedAvg local training.
    CeOnly,
}

impl LossVariant {
    pub fn as_str(&self) -> &'static str {
        match self {
            LossVariant::FedQuad => "fedquad",
            LossVariant::Triplet => "triplet",
            LossVariant::ClassicQuadruplet => "classic_quadruplet",
            LossVariant::CeOnly => "ce_only",
        }
    }

    /// Whether local training draws quadruplet batches for this variant.
    pub fn needs_quadruplets(&self) -> bool {
        !matches!(self, LossVariant::CeOnly)
    }
}

impl fmt::Display for LossVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossVariant {
    type Err = FedQuadError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fedquad" => Ok(LossVariant::FedQuad),
            "triplet" => Ok(LossVariant::Triplet),
            "classic_quadruplet" => Ok(LossVariant::ClassicQuadruplet),
            "ce_only" => Ok(LossVariant::CeOnly),
            other => Err(FedQuadError::Config(format!(
                "unknown loss variant {other:?} (expected fedquad, triplet, classic_quadruplet or ce_only)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub beta: f64,
    pub margin1: f64,
    pub margin2: f64,
    pub use_cross_entropy: bool,
    pub variant: LossVariant,
    /// Squared Euclidean distances inside the hinges instead of plain norms.
    /// Only affects `fedquad` and `triplet`; the classic quadruplet loss is
    /// always squared.
    pub squared_distances: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            beta: 0.5,
            margin1: 1.0,
            margin2: 0.5,
            use_cross_entropy: true,
            variant: LossVariant::FedQuad,
            squared_distances: false,
        }
    }
}

impl LossConfig {
    pub fn ce_only() -> Self {
        LossConfig {
            beta: 0.0,
            variant: LossVariant::CeOnly,
            ..LossConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(FedQuadError::Config(format!(
                "beta must be finite and >= 0, got {}",
                self.beta
            )));
        }
        check_margin(self.margin1)?;
        check_margin(self.margin2)?;
        if self.variant == LossVariant::CeOnly && !self.use_cross_entropy {
            return Err(FedQuadError::Config(
                "ce_only variant with cross entropy disabled has no objective".into(),
            ));
        }
        Ok(())
    }
}

fn check_margin(m: f64) -> Result<()> {
    if m.is_finite() && m > 0.0 {
        Ok(())
    } else {
        Err(FedQuadError::Config(format!(
            "margins must be positive, got {m}"
        )))
    }
}

fn hinge(g: &mut Graph, close: NodeId, far: NodeId, margin: f64) -> Result<NodeId> {
    let diff = g.sub(close, far)?;
    let shifted = g.add_scalar(diff, margin);
    Ok(g.relu(shifted))
}

/// `mean([d(a,p) - d(a,n1) + m1]_+ + [d(a,p) - d(a,n2) + m2]_+)`.
#[allow(clippy::too_many_arguments)]
pub fn quad_star_node(
    g: &mut Graph,
    za: NodeId,
    zp: NodeId,
    zn1: NodeId,
    zn2: NodeId,
    m1: f64,
    m2: f64,
    squared: bool,
) -> Result<NodeId> {
    let ap = g.row_distance(za, zp, squared)?;
    let an1 = g.row_distance(za, zn1, squared)?;
    let an2 = g.row_distance(za, zn2, squared)?;
    let h1 = hinge(g, ap, an1, m1)?;
    let h2 = hinge(g, ap, an2, m2)?;
    let both = g.add(h1, h2)?;
    Ok(g.mean(both))
}

pub fn triplet_node(
    g: &mut Graph,
    za: NodeId,
    zp: NodeId,
    zn: NodeId,
    margin: f64,
    squared: bool,
) -> Result<NodeId> {
    let ap = g.row_distance(za, zp, squared)?;
    let an = g.row_distance(za, zn, squared)?;
    let h = hinge(g, ap, an, margin)?;
    Ok(g.mean(h))
}

/// `mean([d(a,p)^2 - d(a,n1)^2 + m1]_+ + [d(a,p)^2 - d(n1,n2)^2 + m2]_+)`.
pub fn classic_quadruplet_node(
    g: &mut Graph,
    za: NodeId,
    zp: NodeId,
    zn1: NodeId,
    zn2: NodeId,
    m1: f64,
    m2: f64,
) -> Result<NodeId> {
    let ap = g.row_distance(za, zp, true)?;
    let an1 = g.row_distance(za, zn1, true)?;
    let n1n2 = g.row_distance(zn1, zn2, true)?;
    let h1 = hinge(g, ap, an1, m1)?;
    let h2 = hinge(g, ap, n1n2, m2)?;
    let both = g.add(h1, h2)?;
    Ok(g.mean(both))
}

/// Embedding nodes for the four roles of a quadruplet batch.
#[derive(Debug, Clone, Copy)]
pub struct RoleEmbeddings {
    pub anchor: NodeId,
    pub positive: NodeId,
    pub negative1: NodeId,
    pub negative2: NodeId,
}

/// Node ids of the combined objective and its two parts.
#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub total: NodeId,
    pub ce: NodeId,
    pub metric: Option<NodeId>,
}

/// Records `ce * [use_ce] + beta * metric` into the graph. `roles` may be
/// `None` only for the `ce_only` variant.
pub fn combined_loss_node(
    g: &mut Graph,
    logits: NodeId,
    labels: &[usize],
    roles: Option<RoleEmbeddings>,
    cfg: &LossConfig,
) -> Result<LossNodes> {
    let ce = g.softmax_cross_entropy(logits, labels)?;
    let metric = match (cfg.variant, roles) {
        (LossVariant::CeOnly, _) => None,
        (_, None) => {
            return Err(FedQuadError::State(format!(
                "variant {} needs quadruplet embeddings",
                cfg.variant
            )))
        }
        (LossVariant::FedQuad, Some(r)) => Some(quad_star_node(
            g,
            r.anchor,
            r.positive,
            r.negative1,
            r.negative2,
            cfg.margin1,
            cfg.margin2,
            cfg.squared_distances,
        )?),
        (LossVariant::Triplet, Some(r)) => Some(triplet_node(
            g,
            r.anchor,
            r.positive,
            r.negative1,
            cfg.margin1,
            cfg.squared_distances,
        )?),
        (LossVariant::ClassicQuadruplet, Some(r)) => Some(classic_quadruplet_node(
            g,
            r.anchor,
            r.positive,
            r.negative1,
            r.negative2,
            cfg.margin1,
            cfg.margin2,
        )?),
    };
    let total = match metric {
        None => ce,
        Some(m) => {
            let weighted = g.scale(m, cfg.beta);
            if cfg.use_cross_entropy {
                g.add(ce, weighted)?
            } else {
                weighted
            }
        }
    };
    Ok(LossNodes { total, ce, metric })
}

/// Loss value with its parts, for logging.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub ce: f64,
    pub metric: f64,
}

/// `total = ce * [use_cross_entropy] + beta * metric`.
pub fn combine(ce: f64, metric: f64, cfg: &LossConfig) -> f64 {
    let ce_term = if cfg.use_cross_entropy { ce } else { 0.0 };
    ce_term + cfg.beta * metric
}

fn eval_metric(build: impl FnOnce(&mut Graph) -> Result<NodeId>) -> Result<f64> {
    let mut g = Graph::new();
    let out = build(&mut g)?;
    Ok(g.value(out).item())
}

pub fn quad_star(
    za: &Tensor,
    zp: &Tensor,
    zn1: &Tensor,
    zn2: &Tensor,
    m1: f64,
    m2: f64,
    squared: bool,
) -> Result<f64> {
    check_margin(m1)?;
    check_margin(m2)?;
    eval_metric(|g| {
        let (a, p, n1, n2) = (
            g.constant(za.clone()),
            g.constant(zp.clone()),
            g.constant(zn1.clone()),
            g.constant(zn2.clone()),
        );
        quad_star_node(g, a, p, n1, n2, m1, m2, squared)
    })
}

pub fn triplet_loss(
    za: &Tensor,
    zp: &Tensor,
    zn: &Tensor,
    margin: f64,
    squared: bool,
) -> Result<f64> {
    check_margin(margin)?;
    eval_metric(|g| {
        let (a, p, n) = (
            g.constant(za.clone()),
            g.constant(zp.clone()),
            g.constant(zn.clone()),
        );
        triplet_node(g, a, p, n, margin, squared)
    })
}

pub fn classic_quadruplet_loss(
    za: &Tensor,
    zp: &Tensor,
    zn1: &Tensor,
    zn2: &Tensor,
    m1: f64,
    m2: f64,
) -> Result<f64> {
    check_margin(m1)?;
    check_margin(m2)?;
    eval_metric(|g| {
        let (a, p, n1, n2) = (
            g.constant(za.clone()),
            g.constant(zp.clone()),
            g.constant(zn1.clone()),
            g.constant(zn2.clone()),
        );
        classic_quadruplet_node(g, a, p, n1, n2, m1, m2)
    })
}

/// Combined objective evaluated on plain tensors. `roles` holds the anchor,
/// positive, first and second negative embeddings.
pub fn combined_loss(
    logits: &Tensor,
    labels: &[usize],
    roles: [&Tensor; 4],
    cfg: &LossConfig,
) -> Result<LossParts> {
    cfg.validate()?;
    let mut g = Graph::new();
    let l = g.constant(logits.clone());
    let r = RoleEmbeddings {
        anchor: g.constant(roles[0].clone()),
        positive: g.constant(roles[1].clone()),
        negative1: g.constant(roles[2].clone()),
        negative2: g.constant(roles[3].clone()),
    };
    let nodes = combined_loss_node(&mut g, l, labels, Some(r), cfg)?;
    Ok(LossParts {
        total: g.value(nodes.total).item(),
        ce: g.value(nodes.ce).item(),
        metric: nodes.metric.map_or(0.0, |m| g.value(m).item()),
    })
}

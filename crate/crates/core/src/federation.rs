//! Round-synchronous federated training: select clients, broadcast the global
//! model, train locally with the combined objective, average weighted by
//! local dataset size, evaluate.

use log::{info, warn};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::data::{ClientPartition, Dataset};
use crate::error::{FedQuadError, Result};
use crate::losses::{combined_loss_node, LossConfig, RoleEmbeddings};
use crate::metrics::{accuracy, embedding_audit, AuditConfig};
use crate::model::{build_model, EncoderSpec, GraphModel, ModelParameters};
use crate::numerics::{Graph, Optimizer, OptimizerConfig, Parameter, Tensor};
use crate::rng::{client_seed, derive_seed, derived_rng, rng_from_seed, stream, SimRng};
use crate::sampling::QuadrupletSampler;

/// Local training hyperparameters shared by every client.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub local_epochs: usize,
    pub batch_size: usize,
    pub loss: LossConfig,
    pub optimizer: OptimizerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            local_epochs: 5,
            batch_size: 128,
            loss: LossConfig::default(),
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.local_epochs == 0 {
            return Err(FedQuadError::Config(
                "local epochs must be at least 1".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(FedQuadError::Config("batch size must be at least 1".into()));
        }
        self.loss.validate()?;
        self.optimizer.validate()
    }
}

/// What to do with a client whose shard cannot form quadruplets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UntrainablePolicy {
    /// Leave the client out of this round's aggregate.
    Skip,
    /// Train that client on cross-entropy alone.
    CrossEntropyFallback,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederationConfig {
    pub num_clients: usize,
    pub rounds: usize,
    pub participation_fraction: f64,
    pub hidden_dims: Vec<usize>,
    pub embedding_dim: usize,
    pub train: TrainConfig,
    pub audit: AuditConfig,
    pub untrainable: UntrainablePolicy,
    /// Worker threads for client training; `None` uses the rayon default.
    pub workers: Option<usize>,
    pub seed: u64,
}

impl Default for FederationConfig {
    fn default() -> Self {
        FederationConfig {
            num_clients: 10,
            rounds: 20,
            participation_fraction: 1.0,
            hidden_dims: vec![64, 64],
            embedding_dim: 128,
            train: TrainConfig::default(),
            audit: AuditConfig::default(),
            untrainable: UntrainablePolicy::Skip,
            workers: None,
            seed: 0,
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(FedQuadError::Config("need at least one client".into()));
        }
        if self.rounds == 0 {
            return Err(FedQuadError::Config("need at least one round".into()));
        }
        let f = self.participation_fraction;
        if !(f > 0.0 && f <= 1.0) {
            return Err(FedQuadError::Config(format!(
                "participation fraction must lie in (0, 1], got {f}"
            )));
        }
        if self.workers == Some(0) {
            return Err(FedQuadError::Config("worker count must be positive".into()));
        }
        self.train.validate()
    }

    pub fn encoder_spec(&self, dataset: &Dataset) -> EncoderSpec {
        EncoderSpec::new(
            dataset.dim(),
            self.hidden_dims.clone(),
            self.embedding_dim,
            dataset.num_classes(),
        )
    }

    pub fn init_seed(&self) -> u64 {
        derive_seed(self.seed, &[stream::INIT])
    }
}

/// Number of clients drawn per round: `ceil(fraction * n)`, at least one.
pub fn participants_per_round(num_clients: usize, fraction: f64) -> usize {
    // slack absorbs products like 0.07 * 100 = 7.000000000000001
    let raw = (fraction * num_clients as f64 - 1e-9).ceil();
    (raw.max(1.0) as usize).min(num_clients)
}

/// Distinct client ids drawn uniformly without replacement, sorted.
pub fn select_clients(num_clients: usize, fraction: f64, round: usize, seed: u64) -> Vec<usize> {
    let k = participants_per_round(num_clients, fraction);
    if k == num_clients {
        return (0..num_clients).collect();
    }
    let mut rng = derived_rng(seed, &[stream::SELECT, round as u64]);
    let mut ids: Vec<usize> = (0..num_clients).collect();
    let (chosen, _) = ids.partial_shuffle(&mut rng, k);
    let mut chosen = chosen.to_vec();
    chosen.sort_unstable();
    chosen
}

/// Mean loss parts over a set of optimizer steps.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossSummary {
    pub ce: f64,
    pub metric: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub params: ModelParameters,
    pub num_samples: usize,
    pub first_epoch: LossSummary,
    pub last_epoch: LossSummary,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClientOutcome {
    Trained(ClientUpdate),
    Skipped { client_id: usize, reason: String },
}

enum BatchSource {
    Quadruplets(QuadrupletSampler),
    /// Shuffled minibatches of the client's rows; cross-entropy only.
    Plain,
}

/// Loss parts and parameter gradients for one batch, exactly as local
/// training computes them. For quadruplet batches `x` stacks the anchor,
/// positive, first- and second-negative rows (`quads` rows each) and `labels`
/// covers all of them, so cross-entropy sees every row in the batch.
pub fn batch_gradients(
    params: &[Tensor],
    loss_cfg: &LossConfig,
    x: Tensor,
    labels: &[usize],
    quads: Option<usize>,
) -> Result<(LossSummary, Vec<Tensor>)> {
    let mut g = Graph::new();
    let model = GraphModel::attach_tensors(&mut g, params);
    let input = g.constant(x);
    let z = model.embed(&mut g, input)?;
    let roles = match quads {
        Some(b) => Some(RoleEmbeddings {
            anchor: g.slice_rows(z, 0, b)?,
            positive: g.slice_rows(z, b, 2 * b)?,
            negative1: g.slice_rows(z, 2 * b, 3 * b)?,
            negative2: g.slice_rows(z, 3 * b, 4 * b)?,
        }),
        None => None,
    };
    let logits = model.classify_embedding(&mut g, z)?;
    let nodes = combined_loss_node(&mut g, logits, labels, roles, loss_cfg)?;
    let summary = LossSummary {
        ce: g.value(nodes.ce).item(),
        metric: nodes.metric.map_or(0.0, |m| g.value(m).item()),
        total: g.value(nodes.total).item(),
    };
    if !summary.total.is_finite() {
        return Err(FedQuadError::NonFinite("local training loss".into()));
    }
    let grads = g.backward(nodes.total)?;
    let out = params
        .iter()
        .zip(model.nodes())
        .map(|(p, &id)| {
            grads
                .get(id)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(p.shape()))
        })
        .collect();
    Ok((summary, out))
}

fn step(
    params: &mut [Parameter],
    optimizer: &mut Optimizer,
    loss_cfg: &LossConfig,
    x: Tensor,
    labels: &[usize],
    quads: Option<usize>,
) -> Result<LossSummary> {
    let values: Vec<Tensor> = params.iter().map(|p| p.value.clone()).collect();
    let (summary, grads) = batch_gradients(&values, loss_cfg, x, labels, quads)?;
    for (p, grad) in params.iter_mut().zip(grads) {
        p.gradient = grad;
    }
    optimizer.step(params)?;
    Ok(summary)
}

fn mean_summary(steps: &[LossSummary]) -> LossSummary {
    let n = steps.len() as f64;
    LossSummary {
        ce: steps.iter().map(|s| s.ce).sum::<f64>() / n,
        metric: steps.iter().map(|s| s.metric).sum::<f64>() / n,
        total: steps.iter().map(|s| s.total).sum::<f64>() / n,
    }
}

/// Local training of one client starting from a copy of `global`.
///
/// Runs `local_epochs` epochs of `max(1, floor(n_k / batch_size))` steps with
/// a fresh optimizer. Quadruplet variants draw a new quadruplet batch per
/// step; `ce_only` uses shuffled drop-last minibatches (the whole shard when
/// it is smaller than one batch). Shards that cannot form quadruplets are
/// skipped or fall back to cross-entropy according to `policy`.
pub fn train_client(
    global: &ModelParameters,
    dataset: &Dataset,
    partition: &ClientPartition,
    cfg: &TrainConfig,
    policy: UntrainablePolicy,
    seed: u64,
) -> Result<ClientOutcome> {
    cfg.validate()?;
    let client_id = partition.client_id;
    let n = partition.len();
    if n == 0 {
        return Ok(ClientOutcome::Skipped {
            client_id,
            reason: "empty shard".into(),
        });
    }
    let mut loss_cfg = cfg.loss;
    let source = if cfg.loss.variant.needs_quadruplets() {
        match QuadrupletSampler::new(partition.class_index.clone()) {
            Ok(sampler) => BatchSource::Quadruplets(sampler),
            Err(FedQuadError::UnsatisfiableQuadruplet(reason)) => match policy {
                UntrainablePolicy::Skip => return Ok(ClientOutcome::Skipped { client_id, reason }),
                UntrainablePolicy::CrossEntropyFallback => {
                    loss_cfg = LossConfig {
                        use_cross_entropy: true,
                        ..LossConfig::ce_only()
                    };
                    BatchSource::Plain
                }
            },
            Err(e) => return Err(e),
        }
    } else {
        BatchSource::Plain
    };

    let mut rng: SimRng = rng_from_seed(seed);
    let mut params = global.to_parameters();
    let mut optimizer = Optimizer::new(cfg.optimizer, &params)?;
    let batches = (n / cfg.batch_size).max(1);
    let mut order = partition.indices.clone();
    let labels = dataset.labels();

    let mut first_epoch = LossSummary::default();
    let mut last_epoch = LossSummary::default();
    for epoch in 0..cfg.local_epochs {
        let mut steps = Vec::with_capacity(batches);
        if matches!(source, BatchSource::Plain) {
            order.shuffle(&mut rng);
        }
        for b in 0..batches {
            let summary = match &source {
                BatchSource::Quadruplets(sampler) => {
                    let quads = sampler.sample_many(cfg.batch_size, &mut rng);
                    let rows: Vec<usize> = (quads.iter().map(|q| q.anchor_idx))
                        .chain(quads.iter().map(|q| q.positive_idx))
                        .chain(quads.iter().map(|q| q.neg1_idx))
                        .chain(quads.iter().map(|q| q.neg2_idx))
                        .collect();
                    let y: Vec<usize> = rows.iter().map(|&i| labels[i]).collect();
                    step(
                        &mut params,
                        &mut optimizer,
                        &loss_cfg,
                        dataset.features().select_rows(&rows),
                        &y,
                        Some(quads.len()),
                    )?
                }
                BatchSource::Plain => {
                    let rows = &order[b * cfg.batch_size..((b + 1) * cfg.batch_size).min(n)];
                    let y: Vec<usize> = rows.iter().map(|&i| labels[i]).collect();
                    step(
                        &mut params,
                        &mut optimizer,
                        &loss_cfg,
                        dataset.features().select_rows(rows),
                        &y,
                        None,
                    )?
                }
            };
            steps.push(summary);
        }
        let summary = mean_summary(&steps);
        if epoch == 0 {
            first_epoch = summary;
        }
        last_epoch = summary;
    }
    Ok(ClientOutcome::Trained(ClientUpdate {
        client_id,
        params: global.with_values(&params),
        num_samples: n,
        first_epoch,
        last_epoch,
    }))
}

/// Trains on the whole dataset as a single party, with no federation
/// machinery around it. Used as the reference for one-client runs.
pub fn train_centralized(
    init: &ModelParameters,
    dataset: &Dataset,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<ModelParameters> {
    let everyone = ClientPartition::new(0, (0..dataset.len()).collect(), dataset.labels());
    match train_client(init, dataset, &everyone, cfg, UntrainablePolicy::Skip, seed)? {
        ClientOutcome::Trained(update) => Ok(update.params),
        ClientOutcome::Skipped { reason, .. } => Err(FedQuadError::UnsatisfiableQuadruplet(reason)),
    }
}

/// `n_k / sum(n)` for each participant.
pub fn aggregation_weights(sizes: &[usize]) -> Result<Vec<f64>> {
    if sizes.is_empty() {
        return Err(FedQuadError::Protocol(
            "no participants to aggregate".into(),
        ));
    }
    if sizes.contains(&0) {
        return Err(FedQuadError::Protocol(
            "participant with zero samples".into(),
        ));
    }
    let total: usize = sizes.iter().sum();
    Ok(sizes.iter().map(|&n| n as f64 / total as f64).collect())
}

/// Size-weighted coordinatewise average of the participants' models.
///
/// Evaluated as `x_0 + sum_k w_k (x_k - x_0)` and clamped to the inputs'
/// coordinatewise range, so a single participant or identical inputs come
/// back bitwise unchanged.
pub fn aggregate(models: &[ModelParameters], sizes: &[usize]) -> Result<ModelParameters> {
    if models.len() != sizes.len() {
        return Err(FedQuadError::Protocol(format!(
            "{} models but {} sizes",
            models.len(),
            sizes.len()
        )));
    }
    let weights = aggregation_weights(sizes)?;
    let manifest = models[0].manifest();
    if let Some(bad) = models.iter().position(|m| m.manifest() != manifest) {
        return Err(FedQuadError::Protocol(format!(
            "model {bad} has a different parameter manifest"
        )));
    }
    let flats: Vec<Vec<f64>> = models.iter().map(ModelParameters::flatten).collect();
    let base = &flats[0];
    let mut out = base.clone();
    for (i, o) in out.iter_mut().enumerate() {
        let (mut lo, mut hi) = (base[i], base[i]);
        for (flat, &w) in flats.iter().zip(&weights).skip(1) {
            *o += w * (flat[i] - base[i]);
            lo = lo.min(flat[i]);
            hi = hi.max(flat[i]);
        }
        *o = o.clamp(lo, hi);
    }
    ModelParameters::unflatten(&manifest, &out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    /// 1-based round number.
    pub round: usize,
    /// Clients whose update entered the aggregate.
    pub participants: Vec<usize>,
    /// Selected clients that could not train this round.
    pub skipped: Vec<usize>,
    pub ce_loss: f64,
    pub metric_loss: f64,
    pub total_loss: f64,
    pub accuracy: f64,
    pub intra: f64,
    pub inter: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone)]
pub struct FederationRun {
    pub reports: Vec<RoundReport>,
    pub final_model: ModelParameters,
}

fn train_round(
    global: &ModelParameters,
    train: &Dataset,
    partitions: &[ClientPartition],
    selected: &[usize],
    cfg: &FederationConfig,
    round: usize,
) -> Result<Vec<ClientOutcome>> {
    let run_one = |&id: &usize| {
        train_client(
            global,
            train,
            &partitions[id],
            &cfg.train,
            cfg.untrainable,
            client_seed(cfg.seed, round, id),
        )
    };
    // results are collected in `selected` order whatever the thread count
    match cfg.workers {
        Some(1) => selected.iter().map(run_one).collect(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| FedQuadError::Config(format!("cannot start {n} workers: {e}")))?
            .install(|| selected.par_iter().map(run_one).collect()),
        None => selected.par_iter().map(run_one).collect(),
    }
}

/// Runs `cfg.rounds` rounds starting from a freshly initialised model.
pub fn run_federation(
    train: &Dataset,
    test: &Dataset,
    partitions: &[ClientPartition],
    cfg: &FederationConfig,
) -> Result<FederationRun> {
    let init = build_model(&cfg.encoder_spec(train), cfg.init_seed())?;
    run_federation_from(init, train, test, partitions, cfg)
}

pub fn run_federation_from(
    init: ModelParameters,
    train: &Dataset,
    test: &Dataset,
    partitions: &[ClientPartition],
    cfg: &FederationConfig,
) -> Result<FederationRun> {
    cfg.validate()?;
    if partitions.len() != cfg.num_clients {
        return Err(FedQuadError::Config(format!(
            "{} partitions supplied for {} clients",
            partitions.len(),
            cfg.num_clients
        )));
    }
    if let Some(p) = partitions
        .iter()
        .enumerate()
        .find(|(i, p)| p.client_id != *i)
    {
        return Err(FedQuadError::Config(format!(
            "partition at position {} has client id {}",
            p.0, p.1.client_id
        )));
    }
    if test.num_classes() != train.num_classes() || test.dim() != train.dim() {
        return Err(FedQuadError::Validation(
            "train and test sets disagree on classes or dimension".into(),
        ));
    }

    let mut global = init;
    let mut reports = Vec::with_capacity(cfg.rounds);
    for t in 0..cfg.rounds {
        let selected = select_clients(cfg.num_clients, cfg.participation_fraction, t, cfg.seed);
        let outcomes = train_round(&global, train, partitions, &selected, cfg, t)?;

        let mut updates = Vec::new();
        let mut skipped = Vec::new();
        for outcome in outcomes {
            match outcome {
                ClientOutcome::Trained(u) => updates.push(u),
                ClientOutcome::Skipped { client_id, reason } => {
                    warn!("round {}: client {client_id} skipped: {reason}", t + 1);
                    skipped.push(client_id);
                }
            }
        }
        if updates.is_empty() {
            return Err(FedQuadError::Protocol(format!(
                "round {}: all {} selected clients were skipped",
                t + 1,
                selected.len()
            )));
        }

        let models: Vec<ModelParameters> = updates.iter().map(|u| u.params.clone()).collect();
        let sizes: Vec<usize> = updates.iter().map(|u| u.num_samples).collect();
        global = aggregate(&models, &sizes)?;

        let k = updates.len() as f64;
        let mean =
            |f: fn(&LossSummary) -> f64| updates.iter().map(|u| f(&u.last_epoch)).sum::<f64>() / k;
        let acc = accuracy(&global, test)?;
        let audit = embedding_audit(&global, test, &cfg.audit)?;
        let report = RoundReport {
            round: t + 1,
            participants: updates.iter().map(|u| u.client_id).collect(),
            skipped,
            ce_loss: mean(|s| s.ce),
            metric_loss: mean(|s| s.metric),
            total_loss: mean(|s| s.total),
            accuracy: acc,
            intra: audit.intra_class,
            inter: audit.inter_class,
            ratio: audit.ratio,
        };
        info!(
            "round {}/{}: {} clients, loss {:.4}, accuracy {:.4}, ratio {:.4}",
            report.round,
            cfg.rounds,
            report.participants.len(),
            report.total_loss,
            report.accuracy,
            report.ratio
        );
        reports.push(report);
    }
    Ok(FederationRun {
        reports,
        final_model: global,
    })
}

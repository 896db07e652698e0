//! Experiment configuration: a flat `key = value` text format with dotted
//! section keys. `#` starts a comment. Unset keys take the defaults shown by
//! [`ExperimentConfig::to_config_string`] on `ExperimentConfig::default()`.
//!
//! ```text
//! seed = 7
//! dataset.source = synthetic
//! dataset.classes = 3
//! partition.mode = dirichlet
//! partition.alpha = 0.3
//! loss.variant = fedquad
//! ```

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::data::BlobConfig;
use crate::error::{FedQuadError, Result};
use crate::federation::{FederationConfig, UntrainablePolicy};
use crate::losses::LossVariant;
use crate::metrics::AuditMode;
use crate::numerics::OptimizerKind;

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Synthetic {
        classes: usize,
        dim: usize,
        per_class: usize,
        std: f64,
        /// `None` means `4 * std`.
        separation: Option<f64>,
    },
    File {
        path: PathBuf,
        /// Declared class count; inferred from the labels when `None`.
        classes: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PartitionMode {
    Iid,
    Dirichlet { alpha: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub dataset: DatasetSource,
    pub test_fraction: f64,
    pub partition: PartitionMode,
    pub min_samples: usize,
    /// `federation.seed` always mirrors `seed`.
    pub federation: FederationConfig,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            dataset: DatasetSource::Synthetic {
                classes: 3,
                dim: 8,
                per_class: 200,
                std: 0.3,
                separation: None,
            },
            test_fraction: 0.2,
            partition: PartitionMode::Iid,
            min_samples: 4,
            federation: FederationConfig::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

fn config_err(line: usize, msg: impl std::fmt::Display) -> FedQuadError {
    FedQuadError::Config(format!("line {line}: {msg}"))
}

fn parse_num<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| config_err(line, format!("`{key}` has invalid value {value:?}")))
}

fn parse_bool(line: usize, key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(config_err(
            line,
            format!("`{key}` must be true or false, got {value:?}"),
        )),
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        // file-source fields are collected separately so key order is free
        let mut source: Option<String> = None;
        let mut path: Option<PathBuf> = None;
        let (mut classes, mut dim, mut per_class) = (None, None, None);
        let (mut std, mut separation): (Option<f64>, Option<Option<f64>>) = (None, None);
        let mut mode: Option<String> = None;
        let mut alpha: Option<f64> = None;
        let mut seen = HashSet::new();

        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| {
                config_err(line, format!("expected `key = value`, got {content:?}"))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(config_err(line, format!("duplicate key `{key}`")));
            }
            let fed = &mut cfg.federation;
            match key {
                "seed" => cfg.seed = parse_num(line, key, value)?,
                "dataset.source" => source = Some(value.to_string()),
                "dataset.path" => path = Some(PathBuf::from(value)),
                "dataset.classes" => {
                    classes = if value == "auto" {
                        None
                    } else {
                        Some(parse_num::<usize>(line, key, value)?)
                    }
                }
                "dataset.dim" => dim = Some(parse_num(line, key, value)?),
                "dataset.per_class" => per_class = Some(parse_num(line, key, value)?),
                "dataset.std" => std = Some(parse_num(line, key, value)?),
                "dataset.separation" => {
                    separation = Some(if value == "auto" {
                        None
                    } else {
                        Some(parse_num(line, key, value)?)
                    })
                }
                "dataset.test_fraction" => cfg.test_fraction = parse_num(line, key, value)?,
                "partition.mode" => mode = Some(value.to_string()),
                "partition.alpha" => alpha = Some(parse_num(line, key, value)?),
                "partition.min_samples" => cfg.min_samples = parse_num(line, key, value)?,
                "federation.clients" => fed.num_clients = parse_num(line, key, value)?,
                "federation.rounds" => fed.rounds = parse_num(line, key, value)?,
                "federation.local_epochs" => fed.train.local_epochs = parse_num(line, key, value)?,
                "federation.batch_size" => fed.train.batch_size = parse_num(line, key, value)?,
                "federation.participation" => {
                    fed.participation_fraction = parse_num(line, key, value)?
                }
                "federation.untrainable" => {
                    fed.untrainable = match value {
                        "skip" => UntrainablePolicy::Skip,
                        "ce_fallback" => UntrainablePolicy::CrossEntropyFallback,
                        _ => {
                            return Err(config_err(
                                line,
                                format!("unknown untrainable policy {value:?}"),
                            ))
                        }
                    }
                }
                "model.hidden" => {
                    fed.hidden_dims = if value.is_empty() || value == "none" {
                        Vec::new()
                    } else {
                        value
                            .split(',')
                            .map(|v| parse_num(line, key, v.trim()))
                            .collect::<Result<_>>()?
                    }
                }
                "model.embedding_dim" => fed.embedding_dim = parse_num(line, key, value)?,
                "loss.variant" => {
                    fed.train.loss.variant = value
                        .parse::<LossVariant>()
                        .map_err(|e| config_err(line, e))?
                }
                "loss.beta" => fed.train.loss.beta = parse_num(line, key, value)?,
                "loss.margin1" => fed.train.loss.margin1 = parse_num(line, key, value)?,
                "loss.margin2" => fed.train.loss.margin2 = parse_num(line, key, value)?,
                "loss.cross_entropy" => {
                    fed.train.loss.use_cross_entropy = parse_bool(line, key, value)?
                }
                "loss.squared" => fed.train.loss.squared_distances = parse_bool(line, key, value)?,
                "optimizer.kind" => {
                    fed.train.optimizer.kind = match value {
                        "adam" => OptimizerKind::Adam,
                        "sgd" => OptimizerKind::Sgd,
                        _ => return Err(config_err(line, format!("unknown optimizer {value:?}"))),
                    }
                }
                "optimizer.lr" => fed.train.optimizer.lr = parse_num(line, key, value)?,
                "optimizer.beta1" => fed.train.optimizer.beta1 = parse_num(line, key, value)?,
                "optimizer.beta2" => fed.train.optimizer.beta2 = parse_num(line, key, value)?,
                "optimizer.eps" => fed.train.optimizer.eps = parse_num(line, key, value)?,
                "optimizer.weight_decay" => {
                    fed.train.optimizer.weight_decay = parse_num(line, key, value)?
                }
                "metrics.sample_cap" => fed.audit.sample_cap = parse_num(line, key, value)?,
                "metrics.mode" => {
                    fed.audit.mode = value
                        .parse::<AuditMode>()
                        .map_err(|e| config_err(line, e))?
                }
                "output.dir" => cfg.output_dir = PathBuf::from(value),
                _ => return Err(config_err(line, format!("unknown key `{key}`"))),
            }
        }

        cfg.dataset = match source.as_deref().unwrap_or("synthetic") {
            "synthetic" => {
                if path.is_some() {
                    return Err(FedQuadError::Config(
                        "dataset.path needs dataset.source = file".into(),
                    ));
                }
                let DatasetSource::Synthetic {
                    classes: dc,
                    dim: dd,
                    per_class: dp,
                    std: ds,
                    separation: dsep,
                } = ExperimentConfig::default().dataset
                else {
                    unreachable!()
                };
                DatasetSource::Synthetic {
                    classes: classes.unwrap_or(dc),
                    dim: dim.unwrap_or(dd),
                    per_class: per_class.unwrap_or(dp),
                    std: std.unwrap_or(ds),
                    separation: separation.unwrap_or(dsep),
                }
            }
            "file" => {
                if dim.is_some() || per_class.is_some() || std.is_some() || separation.is_some() {
                    return Err(FedQuadError::Config(
                        "dim/per_class/std/separation only apply to synthetic datasets".into(),
                    ));
                }
                DatasetSource::File {
                    path: path.ok_or_else(|| {
                        FedQuadError::Config("dataset.source = file needs dataset.path".into())
                    })?,
                    classes,
                }
            }
            other => {
                return Err(FedQuadError::Config(format!(
                    "unknown dataset source {other:?}"
                )))
            }
        };
        cfg.partition = match mode.as_deref().unwrap_or("iid") {
            "iid" => {
                if alpha.is_some() {
                    return Err(FedQuadError::Config(
                        "partition.alpha needs partition.mode = dirichlet".into(),
                    ));
                }
                PartitionMode::Iid
            }
            "dirichlet" => PartitionMode::Dirichlet {
                alpha: alpha.ok_or_else(|| {
                    FedQuadError::Config("dirichlet partition needs partition.alpha".into())
                })?,
            },
            other => {
                return Err(FedQuadError::Config(format!(
                    "unknown partition mode {other:?}"
                )))
            }
        };
        cfg.set_seed(cfg.seed);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FedQuadError::io(path, e))?;
        ExperimentConfig::parse(&text)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.federation.seed = seed;
        self.federation.audit.seed = seed;
    }

    pub fn blob_config(&self) -> Option<BlobConfig> {
        match &self.dataset {
            DatasetSource::Synthetic {
                classes,
                dim,
                per_class,
                std,
                separation,
            } => {
                let mut b = BlobConfig::new(*classes, *dim, *per_class, *std, self.seed);
                b.center_distance = *separation;
                Some(b)
            }
            DatasetSource::File { .. } => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(b) = self.blob_config() {
            b.validate()?;
        }
        if let PartitionMode::Dirichlet { alpha } = self.partition {
            if !(alpha.is_finite() && alpha > 0.0) {
                return Err(FedQuadError::Config(format!(
                    "Dirichlet alpha must be positive, got {alpha}"
                )));
            }
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(FedQuadError::Config(format!(
                "test fraction must lie in (0, 1), got {}",
                self.test_fraction
            )));
        }
        if self.federation.embedding_dim == 0 || self.federation.hidden_dims.contains(&0) {
            return Err(FedQuadError::Config("layer widths must be positive".into()));
        }
        if self.federation.audit.sample_cap == 0 {
            return Err(FedQuadError::Config(
                "metrics.sample_cap must be positive".into(),
            ));
        }
        self.federation.validate()
    }

    pub fn method_name(&self) -> &'static str {
        self.federation.train.loss.variant.as_str()
    }

    /// Every setting with defaults filled in, in the input format. Parsing
    /// the output yields an equal config.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        let fed = &self.federation;
        let t = &fed.train;
        kv("seed", self.seed.to_string());
        match &self.dataset {
            DatasetSource::Synthetic {
                classes,
                dim,
                per_class,
                std,
                separation,
            } => {
                kv("dataset.source", "synthetic".into());
                kv("dataset.classes", classes.to_string());
                kv("dataset.dim", dim.to_string());
                kv("dataset.per_class", per_class.to_string());
                kv("dataset.std", std.to_string());
                kv(
                    "dataset.separation",
                    separation.map_or("auto".into(), |v| v.to_string()),
                );
            }
            DatasetSource::File { path, classes } => {
                kv("dataset.source", "file".into());
                kv("dataset.path", path.display().to_string());
                kv(
                    "dataset.classes",
                    classes.map_or("auto".into(), |v| v.to_string()),
                );
            }
        }
        kv("dataset.test_fraction", self.test_fraction.to_string());
        match self.partition {
            PartitionMode::Iid => kv("partition.mode", "iid".into()),
            PartitionMode::Dirichlet { alpha } => {
                kv("partition.mode", "dirichlet".into());
                kv("partition.alpha", alpha.to_string());
            }
        }
        kv("partition.min_samples", self.min_samples.to_string());
        kv("federation.clients", fed.num_clients.to_string());
        kv("federation.rounds", fed.rounds.to_string());
        kv("federation.local_epochs", t.local_epochs.to_string());
        kv("federation.batch_size", t.batch_size.to_string());
        kv(
            "federation.participation",
            fed.participation_fraction.to_string(),
        );
        kv(
            "federation.untrainable",
            match fed.untrainable {
                UntrainablePolicy::Skip => "skip",
                UntrainablePolicy::CrossEntropyFallback => "ce_fallback",
            }
            .into(),
        );
        let hidden: Vec<String> = fed.hidden_dims.iter().map(usize::to_string).collect();
        kv(
            "model.hidden",
            if hidden.is_empty() {
                "none".into()
            } else {
                hidden.join(",")
            },
        );
        kv("model.embedding_dim", fed.embedding_dim.to_string());
        kv("loss.variant", t.loss.variant.to_string());
        kv("loss.beta", t.loss.beta.to_string());
        kv("loss.margin1", t.loss.margin1.to_string());
        kv("loss.margin2", t.loss.margin2.to_string());
        kv("loss.cross_entropy", t.loss.use_cross_entropy.to_string());
        kv("loss.squared", t.loss.squared_distances.to_string());
        kv(
            "optimizer.kind",
            match t.optimizer.kind {
                OptimizerKind::Adam => "adam",
                OptimizerKind::Sgd => "sgd",
            }
            .into(),
        );
        kv("optimizer.lr", t.optimizer.lr.to_string());
        kv("optimizer.beta1", t.optimizer.beta1.to_string());
        kv("optimizer.beta2", t.optimizer.beta2.to_string());
        kv("optimizer.eps", t.optimizer.eps.to_string());
        kv(
            "optimizer.weight_decay",
            t.optimizer.weight_decay.to_string(),
        );
        kv("metrics.sample_cap", fed.audit.sample_cap.to_string());
        kv("metrics.mode", fed.audit.mode.as_str().into());
        kv("output.dir", self.output_dir.display().to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_config_string();
        assert_eq!(ExperimentConfig::parse(&text).unwrap(), cfg);
    }

    #[test]
    fn parses_a_full_config() {
        let text = "\
# desk-scale run
seed = 7
dataset.source = synthetic
dataset.classes = 4
dataset.std = 0.5
dataset.separation = 2.5
partition.mode = dirichlet
partition.alpha = 0.3
federation.clients = 12
federation.participation = 0.25
model.hidden = 32, 16
loss.variant = triplet
loss.squared = true
optimizer.kind = sgd
metrics.mode = centroid
federation.untrainable = ce_fallback
";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.federation.seed, 7);
        assert_eq!(cfg.partition, PartitionMode::Dirichlet { alpha: 0.3 });
        assert_eq!(cfg.federation.hidden_dims, vec![32, 16]);
        assert_eq!(cfg.federation.train.loss.variant, LossVariant::Triplet);
        assert!(cfg.federation.train.loss.squared_distances);
        assert_eq!(cfg.federation.audit.mode, AuditMode::Centroid);
        assert_eq!(cfg.blob_config().unwrap().center_distance, Some(2.5));
        assert_eq!(
            ExperimentConfig::parse(&cfg.to_config_string()).unwrap(),
            cfg
        );
    }

    #[test]
    fn file_source() {
        let cfg =
            ExperimentConfig::parse("dataset.source = file\ndataset.path = data.csv\n").unwrap();
        assert_eq!(
            cfg.dataset,
            DatasetSource::File {
                path: "data.csv".into(),
                classes: None
            }
        );
        assert_eq!(
            ExperimentConfig::parse(&cfg.to_config_string()).unwrap(),
            cfg
        );
        assert!(ExperimentConfig::parse("dataset.source = file\n").is_err());
    }

    #[test]
    fn rejects_bad_input() {
        for bad in [
            "nonsense",
            "unknown.key = 1",
            "seed = -1",
            "seed = 1\nseed = 2",
            "partition.mode = dirichlet",
            "partition.alpha = 0.5",
            "partition.mode = dirichlet\npartition.alpha = 0",
            "federation.participation = 1.5",
            "loss.margin1 = 0",
            "loss.cross_entropy = yes",
            "optimizer.lr = -1",
            "dataset.classes = 1",
        ] {
            let err = ExperimentConfig::parse(bad).unwrap_err();
            assert!(err.is_config_error(), "{bad:?} gave {err:?}");
        }
    }
}

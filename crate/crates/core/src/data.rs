//! Datasets, synthetic blob generation, CSV I/O and client partitioning.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{FedQuadError, Result};
use crate::numerics::Tensor;
use crate::rng::{derived_rng, stream};
use crate::sampling::{build_class_index, ClassIndex};

/// Labeled feature matrix. Labels are class indices in `[0, num_classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.shape().len() != 2 {
            return Err(FedQuadError::Validation(format!(
                "features must be a matrix, got shape {:?}",
                features.shape()
            )));
        }
        if labels.is_empty() || features.rows() != labels.len() {
            return Err(FedQuadError::Dimension {
                op: "dataset",
                left: features.shape().to_vec(),
                right: vec![labels.len()],
            });
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(FedQuadError::Validation(format!(
                "row {i} has label {l} but only {num_classes} classes are declared"
            )));
        }
        Ok(Dataset {
            features,
            labels,
            num_classes,
        })
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        Dataset::new(
            self.features.select_rows(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.num_classes,
        )
    }

    /// Per-class split into (train, test); each class sends
    /// `round(test_fraction * count)` of its rows to the test side.
    pub fn stratified_split(&self, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(test_fraction > 0.0 && test_fraction < 1.0) {
            return Err(FedQuadError::Config(format!(
                "test fraction must lie in (0, 1), got {test_fraction}"
            )));
        }
        let mut rng = derived_rng(seed, &[stream::SPLIT]);
        let all: Vec<usize> = (0..self.len()).collect();
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (_, mut members) in build_class_index(&all, &self.labels).into_inner() {
            members.shuffle(&mut rng);
            let n_test = (test_fraction * members.len() as f64).round() as usize;
            test.extend_from_slice(&members[..n_test]);
            train.extend_from_slice(&members[n_test..]);
        }
        train.sort_unstable();
        test.sort_unstable();
        if train.is_empty() || test.is_empty() {
            return Err(FedQuadError::Config(format!(
                "test fraction {test_fraction} leaves an empty split"
            )));
        }
        Ok((self.subset(&train)?, self.subset(&test)?))
    }

    /// Writes `label,f0,...,f{D-1}` CSV. Values use the shortest exact
    /// decimal form, so a load of the file reproduces the dataset bitwise.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("label");
        for j in 0..self.dim() {
            write!(out, ",f{j}").unwrap();
        }
        out.push('\n');
        for (r, &l) in self.labels.iter().enumerate() {
            write!(out, "{l}").unwrap();
            for v in self.features.row(r) {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv_string()).map_err(|e| FedQuadError::io(path, e))
    }

    /// Parses the CSV format written by [`Dataset::to_csv_string`]. When
    /// `declared_classes` is `None` the class count is `max(label) + 1`.
    pub fn from_csv_str(text: &str, declared_classes: Option<usize>) -> Result<Dataset> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(FedQuadError::Parse {
            line: 1,
            message: "empty dataset file".into(),
        })?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.first() != Some(&"label") || cols.len() < 2 {
            return Err(FedQuadError::Parse {
                line: 1,
                message: format!("expected header `label,f0,...`, got {header:?}"),
            });
        }
        for (j, c) in cols[1..].iter().enumerate() {
            if *c != format!("f{j}") {
                return Err(FedQuadError::Parse {
                    line: 1,
                    message: format!("column {} should be f{j}, got {c:?}", j + 1),
                });
            }
        }
        let dim = cols.len() - 1;

        let mut labels = Vec::new();
        let mut data = Vec::new();
        for (i, line) in lines {
            let line_no = i + 1;
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != dim + 1 {
                return Err(FedQuadError::Parse {
                    line: line_no,
                    message: format!("expected {} fields, found {}", dim + 1, fields.len()),
                });
            }
            let label: usize = fields[0].parse().map_err(|_| FedQuadError::Parse {
                line: line_no,
                message: format!("label {:?} is not a non-negative integer", fields[0]),
            })?;
            labels.push(label);
            for f in &fields[1..] {
                let v: f64 = f.parse().map_err(|_| FedQuadError::Parse {
                    line: line_no,
                    message: format!("feature {f:?} is not a number"),
                })?;
                if !v.is_finite() {
                    return Err(FedQuadError::Parse {
                        line: line_no,
                        message: format!("feature {f:?} is not finite"),
                    });
                }
                data.push(v);
            }
        }
        if labels.is_empty() {
            return Err(FedQuadError::Parse {
                line: 2,
                message: "dataset has a header but no rows".into(),
            });
        }
        let max_label = *labels.iter().max().expect("non-empty");
        let num_classes = match declared_classes {
            Some(k) => {
                if max_label >= k {
                    return Err(FedQuadError::Validation(format!(
                        "label {max_label} is out of range for {k} declared classes"
                    )));
                }
                k
            }
            None => max_label + 1,
        };
        let features = Tensor::matrix(labels.len(), dim, data)?;
        Dataset::new(features, labels, num_classes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    Csv,
}

pub fn load_dataset(
    path: &Path,
    format: DatasetFormat,
    declared_classes: Option<usize>,
) -> Result<Dataset> {
    match format {
        DatasetFormat::Csv => {
            let text = fs::read_to_string(path).map_err(|e| FedQuadError::io(path, e))?;
            Dataset::from_csv_str(&text, declared_classes)
        }
    }
}

/// Isotropic Gaussian blobs around fixed class centers.
#[derive(Debug, Clone, PartialEq)]
pub struct BlobConfig {
    pub num_classes: usize,
    pub dim: usize,
    pub samples_per_class: usize,
    pub cluster_std: f64,
    /// Minimum pairwise distance between class centers; `4 * cluster_std`
    /// when unset.
    pub center_distance: Option<f64>,
    pub seed: u64,
}

impl BlobConfig {
    pub fn new(
        num_classes: usize,
        dim: usize,
        samples_per_class: usize,
        cluster_std: f64,
        seed: u64,
    ) -> Self {
        BlobConfig {
            num_classes,
            dim,
            samples_per_class,
            cluster_std,
            center_distance: None,
            seed,
        }
    }

    pub fn with_center_distance(mut self, distance: f64) -> Self {
        self.center_distance = Some(distance);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(FedQuadError::Config(format!(
                "blobs need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if self.dim == 0 || self.samples_per_class == 0 {
            return Err(FedQuadError::Config(
                "dim and samples per class must be positive".into(),
            ));
        }
        if !(self.cluster_std.is_finite() && self.cluster_std >= 0.0) {
            return Err(FedQuadError::Config(format!(
                "cluster std must be non-negative, got {}",
                self.cluster_std
            )));
        }
        let d = self.resolved_distance();
        if !(d.is_finite() && d > 0.0) {
            return Err(FedQuadError::Config(format!(
                "center distance must be positive, got {d}"
            )));
        }
        Ok(())
    }

    pub fn resolved_distance(&self) -> f64 {
        self.center_distance.unwrap_or(4.0 * self.cluster_std)
    }

    /// Centers at `±r e_axis`, cycling through axes, scaled so the closest
    /// pair sits exactly `resolved_distance()` apart. Classes beyond `2 * dim`
    /// get seeded random directions at the same radius.
    pub fn centers(&self) -> Vec<Vec<f64>> {
        let dist = self.resolved_distance();
        let radius = if self.dim >= 2 {
            dist / std::f64::consts::SQRT_2
        } else {
            dist / 2.0
        };
        let mut rng = derived_rng(self.seed, &[0xce17]);
        (0..self.num_classes)
            .map(|c| {
                let mut v = vec![0.0; self.dim];
                if c < 2 * self.dim {
                    let sign = if c < self.dim { 1.0 } else { -1.0 };
                    v[c % self.dim] = sign * radius;
                } else {
                    let dir: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
                    let norm = dir
                        .iter()
                        .map(|x| x * x)
                        .sum::<f64>()
                        .sqrt()
                        .max(f64::MIN_POSITIVE);
                    for (vi, di) in v.iter_mut().zip(dir) {
                        *vi = radius * di / norm;
                    }
                }
                v
            })
            .collect()
    }
}

/// Rows are ordered class by class; every class has exactly
/// `samples_per_class` rows.
pub fn generate_blobs(cfg: &BlobConfig) -> Result<Dataset> {
    cfg.validate()?;
    let centers = cfg.centers();
    let mut rng = derived_rng(cfg.seed, &[0xb10b]);
    let n = cfg.num_classes * cfg.samples_per_class;
    let mut data = Vec::with_capacity(n * cfg.dim);
    let mut labels = Vec::with_capacity(n);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..cfg.samples_per_class {
            for &mu in center {
                let noise: f64 = rng.sample(StandardNormal);
                data.push(mu + cfg.cluster_std * noise);
            }
            labels.push(c);
        }
    }
    Dataset::new(Tensor::matrix(n, cfg.dim, data)?, labels, cfg.num_classes)
}

/// One client's share of the training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientPartition {
    pub client_id: usize,
    pub indices: Vec<usize>,
    pub class_index: ClassIndex,
}

impl ClientPartition {
    pub fn new(client_id: usize, mut indices: Vec<usize>, labels: &[usize]) -> Self {
        indices.sort_unstable();
        let class_index = build_class_index(&indices, labels);
        ClientPartition {
            client_id,
            indices,
            class_index,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Shannon entropy (nats) of this client's label distribution.
    pub fn label_entropy(&self) -> f64 {
        let n = self.len() as f64;
        if n == 0.0 {
            return 0.0;
        }
        self.class_index
            .iter()
            .map(|(_, members)| {
                let p = members.len() as f64 / n;
                -p * p.ln()
            })
            .sum()
    }
}

pub fn mean_label_entropy(partitions: &[ClientPartition]) -> f64 {
    partitions
        .iter()
        .map(ClientPartition::label_entropy)
        .sum::<f64>()
        / partitions.len() as f64
}

/// Checks that the partitions are pairwise disjoint and cover `0..n`.
pub fn validate_partitions(partitions: &[ClientPartition], n: usize) -> Result<()> {
    let mut owner = vec![None; n];
    for p in partitions {
        for &i in &p.indices {
            if i >= n {
                return Err(FedQuadError::Validation(format!(
                    "client {} references row {i} of a {n}-row dataset",
                    p.client_id
                )));
            }
            if let Some(other) = owner[i].replace(p.client_id) {
                return Err(FedQuadError::Validation(format!(
                    "row {i} assigned to clients {other} and {}",
                    p.client_id
                )));
            }
        }
    }
    if let Some(i) = owner.iter().position(Option::is_none) {
        return Err(FedQuadError::Validation(format!(
            "row {i} is not assigned to any client"
        )));
    }
    Ok(())
}

/// Random permutation cut into `num_clients` contiguous chunks whose sizes
/// differ by at most one.
pub fn partition_iid(
    dataset: &Dataset,
    num_clients: usize,
    seed: u64,
) -> Result<Vec<ClientPartition>> {
    let n = dataset.len();
    if num_clients == 0 {
        return Err(FedQuadError::Config("need at least one client".into()));
    }
    if num_clients > n {
        return Err(FedQuadError::Partition(format!(
            "{num_clients} clients cannot split {n} rows"
        )));
    }
    let mut rng = derived_rng(seed, &[stream::PARTITION, 0]);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let (base, extra) = (n / num_clients, n % num_clients);
    let mut start = 0;
    Ok((0..num_clients)
        .map(|k| {
            let size = base + usize::from(k < extra);
            let chunk = perm[start..start + size].to_vec();
            start += size;
            ClientPartition::new(k, chunk, dataset.labels())
        })
        .collect())
}

pub const DIRICHLET_MAX_ATTEMPTS: usize = 1000;

/// Label-skewed split: for each class draw client shares from
/// `Dirichlet(alpha, ..., alpha)` and cut the shuffled class rows at the
/// cumulative shares. The whole split is redrawn while any client holds
/// fewer than `min_samples` rows.
pub fn partition_dirichlet(
    dataset: &Dataset,
    num_clients: usize,
    alpha: f64,
    seed: u64,
    min_samples: usize,
) -> Result<Vec<ClientPartition>> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(FedQuadError::Config(format!(
            "Dirichlet alpha must be positive, got {alpha}"
        )));
    }
    if num_clients == 0 {
        return Err(FedQuadError::Config("need at least one client".into()));
    }
    let n = dataset.len();
    if num_clients == 1 {
        return Ok(vec![ClientPartition::new(
            0,
            (0..n).collect(),
            dataset.labels(),
        )]);
    }
    if num_clients.saturating_mul(min_samples) > n {
        return Err(FedQuadError::Partition(format!(
            "{num_clients} clients x {min_samples} minimum rows exceeds the {n} available rows"
        )));
    }
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| FedQuadError::Config(e.to_string()))?;
    let all: Vec<usize> = (0..n).collect();
    let by_class = build_class_index(&all, dataset.labels());

    for attempt in 0..DIRICHLET_MAX_ATTEMPTS {
        let mut rng = derived_rng(seed, &[stream::PARTITION, 1, attempt as u64]);
        let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); num_clients];
        for (_, members) in by_class.iter() {
            let mut members = members.to_vec();
            members.shuffle(&mut rng);
            let mut shares: Vec<f64> = (0..num_clients).map(|_| gamma.sample(&mut rng)).collect();
            let total: f64 = shares.iter().sum();
            if total > 0.0 {
                shares.iter_mut().for_each(|s| *s /= total);
            } else {
                // every draw underflowed; the mass goes to one client
                shares.fill(0.0);
                shares[rng.random_range(0..num_clients)] = 1.0;
            }
            let count = members.len();
            let mut cum = 0.0;
            let mut start = 0;
            for (k, share) in shares.iter().enumerate() {
                cum += share;
                let end = if k + 1 == num_clients {
                    count
                } else {
                    ((cum * count as f64).round() as usize).clamp(start, count)
                };
                assigned[k].extend_from_slice(&members[start..end]);
                start = end;
            }
        }
        if assigned.iter().all(|a| a.len() >= min_samples) {
            return Ok(assigned
                .into_iter()
                .enumerate()
                .map(|(k, idx)| ClientPartition::new(k, idx, dataset.labels()))
                .collect());
        }
    }
    Err(FedQuadError::Partition(format!(
        "no Dirichlet(alpha={alpha}) split gave every client {min_samples} rows after \
         {DIRICHLET_MAX_ATTEMPTS} attempts; lower min_samples, raise alpha or use fewer clients"
    )))
}

pub fn partition_manifest_csv(partitions: &[ClientPartition]) -> String {
    let mut out = String::from("client_id,row_index\n");
    for p in partitions {
        for i in &p.indices {
            writeln!(out, "{},{i}", p.client_id).unwrap();
        }
    }
    out
}

pub fn write_partition_manifest(path: &Path, partitions: &[ClientPartition]) -> Result<()> {
    fs::write(path, partition_manifest_csv(partitions)).map_err(|e| FedQuadError::io(path, e))
}

/// Parses a `client_id,row_index` manifest and validates it against `dataset`.
/// Client ids must be `0..k` with no gaps.
pub fn parse_partition_manifest(text: &str, dataset: &Dataset) -> Result<Vec<ClientPartition>> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == "client_id,row_index" => {}
        other => {
            return Err(FedQuadError::Parse {
                line: 1,
                message: format!(
                    "expected header `client_id,row_index`, got {:?}",
                    other.map(|o| o.1)
                ),
            })
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, line) in lines {
        let parse = |s: &str| {
            s.trim().parse::<usize>().map_err(|_| FedQuadError::Parse {
                line: i + 1,
                message: format!("{s:?} is not a non-negative integer"),
            })
        };
        let (c, r) = line.split_once(',').ok_or(FedQuadError::Parse {
            line: i + 1,
            message: "expected two columns".into(),
        })?;
        groups.entry(parse(c)?).or_default().push(parse(r)?);
    }
    if groups.keys().enumerate().any(|(k, &id)| k != id) {
        return Err(FedQuadError::Validation(
            "client ids must be contiguous from 0".into(),
        ));
    }
    let partitions: Vec<ClientPartition> = groups
        .into_iter()
        .map(|(id, idx)| ClientPartition::new(id, idx, dataset.labels()))
        .collect();
    validate_partitions(&partitions, dataset.len())?;
    Ok(partitions)
}

pub fn read_partition_manifest(path: &Path, dataset: &Dataset) -> Result<Vec<ClientPartition>> {
    let text = fs::read_to_string(path).map_err(|e| FedQuadError::io(path, e))?;
    parse_partition_manifest(&text, dataset)
}

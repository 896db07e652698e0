//! End-to-end experiment: build the dataset, split and partition it, run the
//! federation and write the run directory.

use std::fs;
use std::path::Path;

use crate::config::{DatasetSource, ExperimentConfig, PartitionMode};
use crate::data::{
    generate_blobs, load_dataset, partition_dirichlet, partition_iid, write_partition_manifest,
    ClientPartition, Dataset, DatasetFormat,
};
use crate::error::{FedQuadError, Result};
use crate::federation::{run_federation, FederationRun};
use crate::report::{parse_results_csv, results_csv, SummaryRow};

pub const RESULTS_FILE: &str = "results.csv";
pub const MANIFEST_FILE: &str = "run_manifest.cfg";
pub const CHECKPOINT_FILE: &str = "final_model.ckpt";
pub const PARTITIONS_FILE: &str = "partitions.csv";

#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Dataset,
    pub test: Dataset,
    pub partitions: Vec<ClientPartition>,
}

pub fn load_source(cfg: &ExperimentConfig) -> Result<Dataset> {
    match &cfg.dataset {
        DatasetSource::Synthetic { .. } => {
            generate_blobs(&cfg.blob_config().expect("synthetic source"))
        }
        DatasetSource::File { path, classes } => load_dataset(path, DatasetFormat::Csv, *classes),
    }
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let full = load_source(cfg)?;
    let (train, test) = full.stratified_split(cfg.test_fraction, cfg.seed)?;
    let n = cfg.federation.num_clients;
    let partitions = match cfg.partition {
        PartitionMode::Iid => partition_iid(&train, n, cfg.seed)?,
        PartitionMode::Dirichlet { alpha } => {
            partition_dirichlet(&train, n, alpha, cfg.seed, cfg.min_samples)?
        }
    };
    Ok(PreparedData {
        train,
        test,
        partitions,
    })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(PreparedData, FederationRun)> {
    cfg.validate()?;
    let data = prepare(cfg)?;
    let run = run_federation(&data.train, &data.test, &data.partitions, &cfg.federation)?;
    Ok((data, run))
}

/// Writes `results.csv`, the final checkpoint, the partition manifest and the
/// resolved config into `dir`.
pub fn write_run_dir(
    dir: &Path,
    cfg: &ExperimentConfig,
    data: &PreparedData,
    run: &FederationRun,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| FedQuadError::io(dir, e))?;
    let write = |name: &str, contents: String| {
        let p = dir.join(name);
        fs::write(&p, contents).map_err(|e| FedQuadError::io(p, e))
    };
    write(RESULTS_FILE, results_csv(&run.reports))?;
    write(MANIFEST_FILE, cfg.to_config_string())?;
    write_partition_manifest(&dir.join(PARTITIONS_FILE), &data.partitions)?;
    run.final_model.save(&dir.join(CHECKPOINT_FILE))
}

/// Accepts a run directory or a path to its `results.csv`; the resolved
/// config is read from the sibling `run_manifest.cfg`.
pub fn summarize_run(path: &Path) -> Result<SummaryRow> {
    let (results_path, dir) = if path.is_dir() {
        (path.join(RESULTS_FILE), path.to_path_buf())
    } else {
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        (path.to_path_buf(), dir)
    };
    let text = fs::read_to_string(&results_path).map_err(|e| FedQuadError::io(&results_path, e))?;
    let rows = parse_results_csv(&text)
        .map_err(|e| FedQuadError::Validation(format!("{}: {e}", results_path.display())))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let cfg = ExperimentConfig::load(&manifest_path)
        .map_err(|e| FedQuadError::Validation(format!("{}: {e}", manifest_path.display())))?;
    let last = rows.last().expect("parse_results_csv rejects empty files");
    let (partition, alpha) = match cfg.partition {
        PartitionMode::Iid => ("iid", String::new()),
        PartitionMode::Dirichlet { alpha } => ("dirichlet", alpha.to_string()),
    };
    Ok(SummaryRow {
        method: cfg.method_name().to_string(),
        partition: partition.to_string(),
        alpha,
        final_accuracy: last.accuracy().to_string(),
        final_ratio: last.ratio().to_string(),
    })
}

pub fn compare_runs(paths: &[impl AsRef<Path>]) -> Result<Vec<SummaryRow>> {
    if paths.len() < 2 {
        return Err(FedQuadError::Config(
            "compare needs at least two runs".into(),
        ));
    }
    paths.iter().map(|p| summarize_run(p.as_ref())).collect()
}

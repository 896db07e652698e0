//! Sweeps blob overlap and local-training settings for the desk-scale
//! FedQuad vs CE-only comparison (3 classes, 10 clients, Dirichlet 0.3,
//! 20 rounds, 5 local epochs, 5 seeds).
//!
//! `cargo run --release --example desk_pilot -- <std,...> <lr,...> <batch,...> <skip|ce_fallback> [seeds]`

use std::time::Instant;

use fedquad::config::{ExperimentConfig, PartitionMode};
use fedquad::experiment::run_experiment;
use fedquad::federation::UntrainablePolicy;
use fedquad::losses::{LossConfig, LossVariant};

fn list<T: std::str::FromStr>(arg: Option<String>, default: &str) -> Vec<T> {
    arg.as_deref()
        .unwrap_or(default)
        .split(',')
        .map(|v| v.parse().ok().expect("numeric list"))
        .collect()
}

fn main() {
    let mut args = std::env::args().skip(1);
    let stds: Vec<f64> = list(args.next(), "0.3,0.4,0.5");
    let lrs: Vec<f64> = list(args.next(), "0.001");
    let batches: Vec<usize> = list(args.next(), "128");
    let policy = match args.next().as_deref() {
        Some("ce_fallback") => UntrainablePolicy::CrossEntropyFallback,
        _ => UntrainablePolicy::Skip,
    };
    let seed_count: u64 = args.next().map_or(5, |s| s.parse().expect("seed count"));
    let seeds = 0..seed_count;
    println!("std,lr,batch,method,mean_accuracy,mean_ratio,seconds");
    for &std in &stds {
        for &lr in &lrs {
            for &batch in &batches {
                for variant in [LossVariant::FedQuad, LossVariant::CeOnly] {
                    let t = Instant::now();
                    let (mut acc, mut ratio) = (0.0, 0.0);
                    for seed in seeds.clone() {
                        let mut cfg = ExperimentConfig::default();
                        cfg.set_seed(seed);
                        cfg.dataset = fedquad::config::DatasetSource::Synthetic {
                            classes: 3,
                            dim: 8,
                            per_class: 200,
                            std,
                            separation: Some(1.0),
                        };
                        cfg.partition = PartitionMode::Dirichlet { alpha: 0.3 };
                        cfg.federation.untrainable = policy;
                        cfg.federation.train.batch_size = batch;
                        cfg.federation.train.optimizer.lr = lr;
                        cfg.federation.train.loss = match variant {
                            LossVariant::CeOnly => LossConfig::ce_only(),
                            _ => LossConfig::default(),
                        };
                        let (_, run) = run_experiment(&cfg).expect("run");
                        let last = run.reports.last().unwrap();
                        acc += last.accuracy;
                        ratio += last.ratio;
                    }
                    let n = seeds.clone().count() as f64;
                    println!(
                        "{std},{lr},{batch},{variant},{:.4},{:.4},{:.1}",
                        acc / n,
                        ratio / n,
                        t.elapsed().as_secs_f64()
                    );
                }
            }
        }
    }
}

//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed. Built with `harness = false`.

// `ensure!(x < y)` negates the comparison on purpose: NaN must fail.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fedquad::config::{DatasetSource, ExperimentConfig, PartitionMode};
use fedquad::data::{
    generate_blobs, mean_label_entropy, partition_dirichlet, partition_iid, validate_partitions,
    BlobConfig, ClientPartition,
};
use fedquad::experiment::{run_experiment, write_run_dir, RESULTS_FILE};
use fedquad::federation::{
    aggregate, aggregation_weights, batch_gradients, run_federation, select_clients,
    train_centralized, train_client, ClientOutcome, FederationConfig, UntrainablePolicy,
};
use fedquad::losses::{combined_loss, quad_star, triplet_loss, LossConfig};
use fedquad::model::{build_model, classify, embed, EncoderSpec, ModelParameters};
use fedquad::numerics::{finite_difference_gradient, linear_forward};
use fedquad::rng::client_seed;
use fedquad::sampling::{build_class_index, QuadrupletSampler};
use fedquad::{FedQuadError, Tensor};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn within(elapsed: Duration, limit_secs: u64, what: &str) -> Result<(), String> {
    ensure!(
        elapsed.as_secs_f64() < limit_secs as f64,
        "{what} took {:.1}s, limit {limit_secs}s",
        elapsed.as_secs_f64()
    );
    Ok(())
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    Tensor::matrix(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.random_range(-scale..scale))
            .collect(),
    )
    .unwrap()
}

fn rows_of(t: &Tensor, start: usize, end: usize) -> Tensor {
    let idx: Vec<usize> = (start..end).collect();
    t.select_rows(&idx)
}

// Independent Euclidean distance between matching rows.
fn row_dist(a: &Tensor, b: &Tensor, i: usize) -> f64 {
    a.row(i)
        .iter()
        .zip(b.row(i))
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Smallest distance from a non-differentiable point of the loss: hidden
/// ReLU inputs of the one-hidden-layer encoder and both hinge arguments.
fn kink_distance(model: &ModelParameters, x: &Tensor, b: usize, squared: bool) -> f64 {
    let pre = linear_forward(x, model.tensor(0), model.tensor(1)).unwrap();
    let z = embed(model, x).unwrap();
    let cfg = LossConfig::default();
    let d = |i: usize, j: usize| {
        let e = z
            .row(i)
            .iter()
            .zip(z.row(j))
            .map(|(p, q)| (p - q) * (p - q))
            .sum::<f64>()
            .sqrt();
        if squared {
            e * e
        } else {
            e
        }
    };
    let hinges = (0..b).flat_map(|r| {
        [
            d(r, b + r) - d(r, 2 * b + r) + cfg.margin1,
            d(r, b + r) - d(r, 3 * b + r) + cfg.margin2,
        ]
    });
    pre.data()
        .iter()
        .copied()
        .chain(hinges)
        .map(f64::abs)
        .fold(f64::INFINITY, f64::min)
}

// ---------------------------------------------------------------------------

fn gradient_oracle() -> Outcome {
    let start = Instant::now();
    let (b, dim, hidden, emb, classes) = (3, 4, 5, 3, 3);
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for seed in 0..100u64 {
        for squared in [false, true] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let spec = EncoderSpec::new(dim, vec![hidden], emb, classes);
            let model = build_model(&spec, seed).unwrap();
            let params: Vec<Tensor> = model.tensors().cloned().collect();
            // Central differences are meaningless across a kink, so redraw any
            // batch that puts a ReLU input or hinge argument within 1e-3 of zero.
            let x = loop {
                let x = random_matrix(&mut rng, 4 * b, dim, 2.0);
                if kink_distance(&model, &x, b, squared) > 1e-3 {
                    break x;
                }
            };
            // anchor/positive share a class; the negatives take the other two
            let anchor_classes: Vec<usize> = (0..b).map(|_| rng.random_range(0..classes)).collect();
            let mut labels = Vec::with_capacity(4 * b);
            labels.extend(&anchor_classes);
            labels.extend(&anchor_classes);
            labels.extend(anchor_classes.iter().map(|c| (c + 1) % classes));
            labels.extend(anchor_classes.iter().map(|c| (c + 2) % classes));
            let cfg = LossConfig {
                squared_distances: squared,
                ..LossConfig::default()
            };

            let (_, analytic) = batch_gradients(&params, &cfg, x.clone(), &labels, Some(b))
                .map_err(|e| e.to_string())?;

            // oracle: plain forward pass, no graph
            let loss = |p: &[Tensor]| {
                let m = ModelParameters::from_entries(
                    model
                        .entries()
                        .iter()
                        .zip(p)
                        .map(|((n, _), t)| (n.clone(), t.clone()))
                        .collect(),
                );
                let z = embed(&m, &x).unwrap();
                let logits = classify(&m, &x).unwrap();
                let roles = [
                    &rows_of(&z, 0, b),
                    &rows_of(&z, b, 2 * b),
                    &rows_of(&z, 2 * b, 3 * b),
                    &rows_of(&z, 3 * b, 4 * b),
                ];
                combined_loss(&logits, &labels, roles, &cfg).unwrap().total
            };
            let numeric = finite_difference_gradient(loss, &params, 1e-5);

            for (a, n) in analytic.iter().zip(&numeric) {
                for (&ga, &gn) in a.data().iter().zip(n.data()) {
                    let abs = (ga - gn).abs();
                    let rel = abs / ga.abs().max(gn.abs()).max(f64::MIN_POSITIVE);
                    checked += 1;
                    ensure!(
                        rel < 1e-4 || abs < 1e-7,
                        "seed {seed} squared={squared}: analytic {ga} vs numeric {gn} (rel {rel:.2e})"
                    );
                    if gn.abs() > 1e-6 {
                        worst = worst.max(rel);
                    }
                }
            }
        }
    }
    within(start.elapsed(), 30, "gradient check")?;
    Ok(format!(
        "{checked} coordinates over 100 seeds x 2 modes, worst relative error {worst:.2e}, {:.1}s",
        start.elapsed().as_secs_f64()
    ))
}

fn loss_identities() -> Outcome {
    let t = |rows: &[[f64; 2]]| {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    };
    let boundary = quad_star(
        &t(&[[0.0, 0.0]]),
        &t(&[[0.0, 0.0]]),
        &t(&[[1.0, 0.0]]),
        &t(&[[0.0, 0.5]]),
        1.0,
        0.5,
        false,
    )
    .map_err(|e| e.to_string())?;
    ensure!(
        boundary == 0.0,
        "margin-boundary case gave {boundary}, expected exactly 0"
    );
    let hand = quad_star(
        &t(&[[0.0, 0.0]]),
        &t(&[[1.0, 0.0]]),
        &t(&[[0.0, 0.5]]),
        &t(&[[0.2, 0.0]]),
        1.0,
        0.5,
        false,
    )
    .map_err(|e| e.to_string())?;
    ensure!(
        (hand - 2.8).abs() < 1e-12,
        "hand case gave {hand}, expected 2.8"
    );

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut max_diff = 0.0f64;
    for i in 0..1000 {
        let rows = rng.random_range(1..8);
        let cols = rng.random_range(1..6);
        let [a, p, n1, n2] = [0; 4].map(|_| random_matrix(&mut rng, rows, cols, 2.0));
        let (m1, m2) = (rng.random_range(0.1..2.0), rng.random_range(0.1..2.0));
        let squared = i % 2 == 1;
        let d = |u: &Tensor, v: &Tensor, r: usize| {
            let e = row_dist(u, v, r);
            if squared {
                e * e
            } else {
                e
            }
        };
        let second_hinge = (0..rows)
            .map(|r| (d(&a, &p, r) - d(&a, &n2, r) + m2).max(0.0))
            .sum::<f64>()
            / rows as f64;
        let quad = quad_star(&a, &p, &n1, &n2, m1, m2, squared).map_err(|e| e.to_string())?;
        let trip = triplet_loss(&a, &p, &n1, m1, squared).map_err(|e| e.to_string())?;
        max_diff = max_diff.max((trip - (quad - second_hinge)).abs());
    }
    ensure!(
        max_diff < 1e-12,
        "triplet differs from quad* minus the second hinge by {max_diff:.3e}"
    );
    Ok(format!(
        "boundary 0, hand case 2.8, triplet identity max diff {max_diff:.1e} over 1000 batches"
    ))
}

fn sampler_soundness() -> Outcome {
    let start = Instant::now();
    // skewed 5-class shard: one dominant class, two singletons
    let sizes = [60usize, 2, 1, 1, 9];
    let labels: Vec<usize> = sizes
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
        .collect();
    let rows: Vec<usize> = (0..labels.len()).collect();
    let sampler =
        QuadrupletSampler::new(build_class_index(&rows, &labels)).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut violations = 0;
    let mut anchor_hist = [0usize; 5];
    for q in sampler.sample_many(10_000, &mut rng) {
        let (la, lp, l1, l2) = (
            labels[q.anchor_idx],
            labels[q.positive_idx],
            labels[q.neg1_idx],
            labels[q.neg2_idx],
        );
        anchor_hist[la] += 1;
        let ok = la == lp
            && q.anchor_idx != q.positive_idx
            && la != l1
            && la != l2
            && l1 != l2
            && q.anchor_label == la
            && sizes[la] >= 2;
        if !ok {
            violations += 1;
        }
    }
    ensure!(
        violations == 0,
        "{violations} of 10000 quadruplets violate the sampler invariants"
    );

    let two_labels = vec![0, 0, 1, 1, 1];
    let two_rows: Vec<usize> = (0..5).collect();
    match QuadrupletSampler::new(build_class_index(&two_rows, &two_labels)) {
        Err(FedQuadError::UnsatisfiableQuadruplet(_)) => {}
        Err(e) => return Err(format!("2-class shard gave the wrong error: {e}")),
        Ok(_) => return Err("2-class shard was accepted".into()),
    }
    within(start.elapsed(), 5, "sampler check")?;
    Ok(format!(
        "0 violations in 10000 draws, anchor classes {anchor_hist:?}, 2-class shard rejected"
    ))
}

fn aggregation_algebra() -> Outcome {
    let m =
        |v: &[f64]| ModelParameters::from_entries(vec![("w".into(), Tensor::vector(v.to_vec()))]);
    let mean =
        aggregate(&[m(&[1.0, 3.0]), m(&[3.0, 5.0])], &[10, 10]).map_err(|e| e.to_string())?;
    ensure!(
        mean.tensor(0).data() == [2.0, 4.0],
        "equal-size mean gave {:?}",
        mean.tensor(0).data()
    );
    let weighted = aggregate(&[m(&[1.0]), m(&[5.0])], &[1, 3]).map_err(|e| e.to_string())?;
    ensure!(
        weighted.tensor(0).data() == [4.0],
        "weighted mean gave {:?}",
        weighted.tensor(0).data()
    );

    let model = build_model(&EncoderSpec::new(4, vec![6], 3, 3), 1).unwrap();
    for k in 1..=5 {
        let copies = vec![model.clone(); k];
        let sizes: Vec<usize> = (1..=k).map(|i| i * 7).collect();
        let merged = aggregate(&copies, &sizes).map_err(|e| e.to_string())?;
        let same = merged
            .flatten()
            .iter()
            .zip(model.flatten())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        ensure!(
            same,
            "aggregating {k} identical models changed the parameters"
        );
    }

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(1..50);
        let sizes: Vec<usize> = (0..n).map(|_| rng.random_range(1..100_000)).collect();
        let w = aggregation_weights(&sizes).map_err(|e| e.to_string())?;
        worst = worst.max((w.iter().sum::<f64>() - 1.0).abs());
    }
    ensure!(worst <= 1e-12, "weights sum off by {worst:.2e}");
    Ok(format!(
        "examples exact, identical models bitwise, max |sum w - 1| = {worst:.1e}"
    ))
}

fn centralized_equivalence() -> Outcome {
    let start = Instant::now();
    let data =
        generate_blobs(&BlobConfig::new(3, 8, 60, 0.4, 5).with_center_distance(1.0)).unwrap();
    let (train, test) = data.stratified_split(0.2, 5).unwrap();
    let mut cfg = FederationConfig {
        num_clients: 1,
        rounds: 1,
        participation_fraction: 1.0,
        hidden_dims: vec![16],
        embedding_dim: 8,
        seed: 5,
        ..FederationConfig::default()
    };
    cfg.train.local_epochs = 5;
    cfg.train.batch_size = 16;
    let parts = partition_iid(&train, 1, cfg.seed).unwrap();
    let run = run_federation(&train, &test, &parts, &cfg).map_err(|e| e.to_string())?;

    let init = build_model(&cfg.encoder_spec(&train), cfg.init_seed()).unwrap();
    let central = train_centralized(&init, &train, &cfg.train, client_seed(cfg.seed, 0, 0))
        .map_err(|e| e.to_string())?;
    let fed = run.final_model.flatten();
    let cen = central.flatten();
    ensure!(fed.len() == cen.len(), "parameter counts differ");
    let mismatches = fed
        .iter()
        .zip(&cen)
        .filter(|(a, b)| a.to_bits() != b.to_bits())
        .count();
    ensure!(
        mismatches == 0,
        "{mismatches} of {} parameters differ",
        fed.len()
    );
    ensure!(
        fed.iter().zip(init.flatten()).any(|(a, b)| a != &b),
        "training left the model unchanged, comparison is vacuous"
    );
    within(start.elapsed(), 60, "centralized equivalence")?;
    Ok(format!("{} parameters bitwise equal", fed.len()))
}

fn partition_statistics() -> Outcome {
    let start = Instant::now();
    let (mut h03, mut h05, mut hiid) = (0.0, 0.0, 0.0);
    for seed in 0..10u64 {
        let ds = generate_blobs(&BlobConfig::new(3, 8, 200, 0.4, seed)).unwrap();
        let runs: [(&mut f64, Vec<ClientPartition>); 3] = [
            (
                &mut h03,
                partition_dirichlet(&ds, 10, 0.3, seed, 4).map_err(|e| e.to_string())?,
            ),
            (
                &mut h05,
                partition_dirichlet(&ds, 10, 0.5, seed, 4).map_err(|e| e.to_string())?,
            ),
            (
                &mut hiid,
                partition_iid(&ds, 10, seed).map_err(|e| e.to_string())?,
            ),
        ];
        for (acc, parts) in runs {
            validate_partitions(&parts, ds.len()).map_err(|e| format!("seed {seed}: {e}"))?;
            *acc += mean_label_entropy(&parts) / 10.0;
        }
    }
    ensure!(
        h03 <= h05 && h05 <= hiid,
        "entropy order broken: {h03:.4} / {h05:.4} / {hiid:.4}"
    );
    ensure!(
        h03 < hiid,
        "alpha 0.3 not strictly below IID: {h03:.4} vs {hiid:.4}"
    );
    within(start.elapsed(), 10, "partition statistics")?;
    Ok(format!("mean entropy alpha=0.3 {h03:.4} <= alpha=0.5 {h05:.4} <= IID {hiid:.4} nats, all covers valid"))
}

/// Blob overlap and training settings fixed by the desk-scale pilot (see README).
fn desk_config(seed: u64, ce_only: bool) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        dataset: DatasetSource::Synthetic {
            classes: 3,
            dim: 8,
            per_class: 200,
            std: 0.4,
            separation: Some(1.0),
        },
        partition: PartitionMode::Dirichlet { alpha: 0.3 },
        ..ExperimentConfig::default()
    };
    cfg.federation.num_clients = 10;
    cfg.federation.rounds = 20;
    cfg.federation.train.local_epochs = 5;
    cfg.federation.untrainable = UntrainablePolicy::Skip;
    if ce_only {
        cfg.federation.train.loss = LossConfig::ce_only();
    }
    cfg.set_seed(seed);
    cfg
}

fn desk_scale_claim() -> Outcome {
    let start = Instant::now();
    let mut sums = [[0.0f64; 2]; 2];
    for seed in 0..5 {
        for (m, ce_only) in [false, true].into_iter().enumerate() {
            let (_, run) = run_experiment(&desk_config(seed, ce_only))
                .map_err(|e| format!("seed {seed}: {e}"))?;
            let last = run.reports.last().expect("20 rounds");
            sums[m][0] += last.accuracy / 5.0;
            sums[m][1] += last.ratio / 5.0;
        }
    }
    let [[quad_acc, quad_ratio], [ce_acc, ce_ratio]] = sums;
    let detail = format!(
        "accuracy fedquad {quad_acc:.4} vs ce_only {ce_acc:.4}; ratio fedquad {quad_ratio:.4} vs ce_only {ce_ratio:.4}; {:.0}s",
        start.elapsed().as_secs_f64()
    );
    ensure!(quad_acc >= ce_acc, "(a) failed: {detail}");
    ensure!(quad_ratio > ce_ratio, "(b) failed: {detail}");
    within(start.elapsed(), 300, "desk-scale runs")?;
    Ok(detail)
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut files = Vec::new();
    for name in ["first", "second"] {
        let cfg = desk_config(0, false);
        let (data, run) = run_experiment(&cfg).map_err(|e| e.to_string())?;
        let out = dir.path().join(name);
        write_run_dir(&out, &cfg, &data, &run).map_err(|e| e.to_string())?;
        files.push(std::fs::read(out.join(RESULTS_FILE)).map_err(|e| e.to_string())?);
    }
    ensure!(files[0] == files[1], "results.csv differs between two runs");
    Ok(format!(
        "two runs wrote identical {}-byte results.csv",
        files[0].len()
    ))
}

fn participation_protocol() -> Outcome {
    for round in 0..20 {
        let ids = select_clients(200, 0.01, round, 11);
        ensure!(
            ids.len() == 2 && ids[0] != ids[1],
            "round {round} selected {ids:?}"
        );
    }

    let data = generate_blobs(&BlobConfig::new(3, 2, 400, 0.4, 11)).unwrap();
    let (train, test) = data.stratified_split(0.2, 11).unwrap();
    let mut cfg = FederationConfig {
        num_clients: 200,
        rounds: 1,
        participation_fraction: 0.01,
        hidden_dims: vec![8],
        embedding_dim: 4,
        seed: 11,
        ..FederationConfig::default()
    };
    cfg.train.loss = LossConfig::ce_only();
    cfg.train.batch_size = 4;
    cfg.train.local_epochs = 1;
    let parts = partition_iid(&train, 200, cfg.seed).unwrap();
    let run = run_federation(&train, &test, &parts, &cfg).map_err(|e| e.to_string())?;
    let chosen = &run.reports[0].participants;
    ensure!(
        chosen.len() == 2,
        "round 1 aggregated {} clients",
        chosen.len()
    );

    // rebuild the round from its two participants alone
    let init = build_model(&cfg.encoder_spec(&train), cfg.init_seed()).unwrap();
    let mut models = Vec::new();
    let mut sizes = Vec::new();
    for &id in chosen {
        match train_client(
            &init,
            &train,
            &parts[id],
            &cfg.train,
            cfg.untrainable,
            client_seed(cfg.seed, 0, id),
        ) {
            Ok(ClientOutcome::Trained(u)) => {
                sizes.push(u.num_samples);
                models.push(u.params);
            }
            other => return Err(format!("client {id} did not train: {other:?}")),
        }
    }
    let w = aggregation_weights(&sizes).map_err(|e| e.to_string())?;
    ensure!(
        (w.iter().sum::<f64>() - 1.0).abs() <= 1e-12,
        "weights {w:?} do not sum to 1"
    );
    let expected = aggregate(&models, &sizes).map_err(|e| e.to_string())?;
    ensure!(
        expected.flatten() == run.final_model.flatten(),
        "global model is not the participant-weighted mean"
    );
    Ok(format!(
        "2 distinct clients in each of 20 rounds; participants {chosen:?} with sizes {sizes:?} weighted {w:?}"
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("1 gradient oracle", gradient_oracle),
        ("2 loss identities", loss_identities),
        ("3 sampler soundness", sampler_soundness),
        ("4 aggregation algebra", aggregation_algebra),
        ("5 centralized equivalence", centralized_equivalence),
        ("6 partition statistics", partition_statistics),
        ("7 desk-scale fedquad claim", desk_scale_claim),
        ("8 determinism", determinism),
        ("9 participation protocol", participation_protocol),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {name}: {why}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

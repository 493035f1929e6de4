use prunelab_core::criteria::magnitude_scores;
use prunelab_core::model::{build_network, layer_sizes, preset};
use prunelab_core::rng::{stream, Stream};
use prunelab_core::sanity::Check;
use prunelab_core::schedule::{interpolated_quotas, smart_ratio};
use prunelab_core::ticket::{
    construct, iterative_magnitude_prune, make_hybrid_ticket, make_initial_ticket,
    make_lr_rewind_ticket, make_lt_ticket, make_random_ticket, make_weight_rewind_ticket, replay,
    retrain, rewind_weights, run_cell, run_sanity_suite, ImpMode, InitCriterion, Pipeline,
    SuiteConfig,
};
use prunelab_core::train::train;
use prunelab_core::{ArchFamily, Dataset, LayerSpec, Mask, ScheduleKind, TrainConfig};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn blobs(shape: &[usize], classes: usize, n: usize, seed: u64) -> Dataset {
    let dim: usize = shape.iter().product();
    let mut rng = stream(seed, Stream::Dataset);
    let centres: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            (0..dim)
                .map(|_| {
                    2.0 * {
                        let v: f64 = StandardNormal.sample(&mut rng);
                        v
                    }
                })
                .collect()
        })
        .collect();
    let mut x = Vec::with_capacity(n * dim);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        for v in &centres[c] {
            let noise: f64 = StandardNormal.sample(&mut rng);
            x.push(v + noise);
        }
        y.push(c);
    }
    Dataset::new(x, y, classes, shape.to_vec()).unwrap()
}

fn short(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 32,
        initial_lr: 0.05,
        ..TrainConfig::default()
    }
}

fn mlp() -> (Vec<LayerSpec>, Dataset, Dataset) {
    (
        preset("mlp-4", &[16], 3).unwrap(),
        blobs(&[16], 3, 240, 1),
        blobs(&[16], 3, 90, 2),
    )
}

fn conv() -> (Vec<LayerSpec>, Dataset) {
    (
        preset("conv-5", &[1, 8, 8], 3).unwrap(),
        blobs(&[1, 8, 8], 3, 60, 3),
    )
}

fn all_pipelines() -> Vec<Pipeline> {
    vec![
        Pipeline::Dense,
        Pipeline::Snip,
        Pipeline::Grasp,
        Pipeline::Lt {
            preserve_output_layer: false,
        },
        Pipeline::Lt {
            preserve_output_layer: true,
        },
        Pipeline::Random {
            schedule: ScheduleKind::Smart,
            family: ArchFamily::PlainStack,
        },
        Pipeline::Random {
            schedule: ScheduleKind::Balanced,
            family: ArchFamily::PlainStack,
        },
        Pipeline::LrRewind {
            preserve_output_layer: false,
        },
        Pipeline::WeightRewind { rewind_epoch: 1 },
        Pipeline::Hybrid {
            family: ArchFamily::PlainStack,
        },
        Pipeline::Imp {
            mode: ImpMode::Reset,
            round_fraction: 0.5,
            family: ArchFamily::PlainStack,
        },
        Pipeline::Imp {
            mode: ImpMode::Hybrid,
            round_fraction: 0.5,
            family: ArchFamily::PlainStack,
        },
    ]
}

#[test]
fn snip_is_deterministic_per_seed() {
    let (specs, data, _) = mlp();
    let a = make_initial_ticket(InitCriterion::Snip, &specs, &data, 0.9, 7).unwrap();
    let b = make_initial_ticket(InitCriterion::Snip, &specs, &data, 0.9, 7).unwrap();
    let c = make_initial_ticket(InitCriterion::Snip, &specs, &data, 0.9, 8).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.mask, c.mask);
}

#[test]
fn grasp_on_conv_gives_uneven_layer_ratios() {
    let (specs, data) = conv();
    let t = make_initial_ticket(InitCriterion::Grasp, &specs, &data, 0.9, 0).unwrap();
    let r = t.keep_ratios();
    assert!(r.windows(2).any(|w| (w[0] - w[1]).abs() > 1e-3), "{r:?}");
    assert_eq!(
        t.mask.kept(),
        prunelab_core::mask::budget(t.mask.total(), 0.9)
    );
}

#[test]
fn lt_resets_kept_weights_to_epoch_zero_bit_for_bit() {
    let (specs, data, _) = mlp();
    let t = make_lt_ticket(&specs, &data, 0.9, &short(3), 5).unwrap();
    let init = build_network(&specs, 5).unwrap();
    let cp0 = t
        .provenance
        .checkpoints
        .iter()
        .find(|c| c.epoch == 0)
        .unwrap();
    for l in 0..t.mask.layer_count() {
        for (i, &kept) in t.mask.layer(l).iter().enumerate() {
            if kept {
                assert_eq!(
                    t.weights.layer(l)[i].to_bits(),
                    cp0.weights.layer(l)[i].to_bits()
                );
                assert_eq!(t.weights.layer(l)[i].to_bits(), init.layer(l)[i].to_bits());
            }
        }
    }
}

#[test]
fn lt_and_lr_rewind_share_the_mask() {
    let (specs, data, _) = mlp();
    let lt = make_lt_ticket(&specs, &data, 0.8, &short(3), 2).unwrap();
    let lr = make_lr_rewind_ticket(&specs, &data, 0.8, &short(3), 2).unwrap();
    assert_eq!(lt.mask, lr.mask);
    assert_ne!(lt.weights, lr.weights);
    let trained = lr
        .provenance
        .checkpoints
        .iter()
        .find(|c| c.epoch == 3)
        .unwrap();
    assert_eq!(lr.weights, trained.weights);
}

#[test]
fn weight_rewind_endpoints() {
    let (specs, data, _) = mlp();
    let cfg = short(3);
    let lt = make_lt_ticket(&specs, &data, 0.8, &cfg, 4).unwrap();
    let w0 = make_weight_rewind_ticket(&specs, &data, 0.8, &cfg, 0, 4).unwrap();
    assert_eq!((&w0.mask, &w0.weights), (&lt.mask, &lt.weights));
    assert_eq!(w0.provenance.schedule_offset, 0);

    let lr = make_lr_rewind_ticket(&specs, &data, 0.8, &cfg, 4).unwrap();
    let w3 = make_weight_rewind_ticket(&specs, &data, 0.8, &cfg, 3, 4).unwrap();
    assert_eq!(w3.weights, lr.weights);
    assert_eq!(w3.provenance.schedule_offset, 3);

    let w1 = make_weight_rewind_ticket(&specs, &data, 0.8, &cfg, 1, 4).unwrap();
    assert_eq!(w1.mask, lt.mask);
    assert_eq!(w1.provenance.schedule_offset, 1);
    assert!(make_weight_rewind_ticket(&specs, &data, 0.8, &cfg, 4, 4).is_err());
    let beyond = lt.provenance.checkpoints[0].clone();
    assert!(rewind_weights(
        &make_random_ticket(&specs, 0.8, ArchFamily::PlainStack, 0).unwrap(),
        &beyond
    )
    .is_err());
}

#[test]
fn lr_rewind_retraining_restarts_at_the_initial_rate() {
    let (specs, data, test) = mlp();
    let cfg = TrainConfig {
        lr_drop_points: vec![0.5],
        ..short(4)
    };
    let t = make_lr_rewind_ticket(&specs, &data, 0.8, &cfg, 0).unwrap();
    let out = retrain(&t, &data, &test, &cfg).unwrap();
    assert_eq!(out.history[0].lr, cfg.initial_lr);

    let w = make_weight_rewind_ticket(&specs, &data, 0.8, &cfg, 2, 0).unwrap();
    let out = retrain(&w, &data, &test, &cfg).unwrap();
    assert_eq!(out.history.len(), 4);
    assert_eq!(out.history[0].lr, cfg.initial_lr * cfg.lr_drop_factor);
}

#[test]
fn hybrid_quotas_and_sort_oracle() {
    let (specs, data, _) = mlp();
    let sizes = layer_sizes(&specs);
    for p in [0.5, 0.9, 0.98] {
        let t = make_hybrid_ticket(&specs, &data, p, ArchFamily::PlainStack, &short(2), 3).unwrap();
        let sched = smart_ratio(&sizes, &specs, p, ArchFamily::PlainStack).unwrap();
        assert_eq!(t.mask.kept_counts(), sched.quotas());
        assert!(!t.mask.has_collapsed_layer(), "p={p}");
        let trained = &t
            .provenance
            .checkpoints
            .iter()
            .find(|c| c.epoch == 2)
            .unwrap()
            .weights;
        let scores = magnitude_scores(trained);
        for l in 0..sizes.len() {
            let s = scores.layer(l);
            let kept_min = (0..s.len())
                .filter(|&i| t.mask.layer(l)[i])
                .map(|i| s[i])
                .fold(f64::INFINITY, f64::min);
            let pruned_max = (0..s.len())
                .filter(|&i| !t.mask.layer(l)[i])
                .map(|i| s[i])
                .fold(0.0, f64::max);
            assert!(kept_min >= pruned_max, "layer {l} at p={p}");
        }
    }
}

#[test]
fn imp_three_rounds_at_a_fifth() {
    let (specs, data, _) = mlp();
    let total: usize = layer_sizes(&specs).iter().sum();
    let want = 1.0 - 0.8f64.powi(3);
    let out = iterative_magnitude_prune(
        &specs,
        &data,
        want,
        0.2,
        &short(1),
        ImpMode::Reset,
        ArchFamily::PlainStack,
        0,
    )
    .unwrap();
    assert_eq!(out.round_masks.len(), 3);
    for (r, m) in out.round_masks.iter().enumerate() {
        let expect = 1.0 - 0.8f64.powi(r as i32 + 1);
        assert!(
            (prunelab_core::mask::sparsity(m) - expect).abs() <= 1.0 / total as f64,
            "round {r}"
        );
    }
    assert!((out.ticket.sparsity() - 0.488).abs() < 1e-3);
    let mut prev = Mask::ones(&layer_sizes(&specs));
    for m in &out.round_masks {
        assert!(m.is_subset_of(&prev));
        prev = m.clone();
    }
    assert_eq!(out.ticket.weights, build_network(&specs, 0).unwrap());
}

#[test]
fn one_imp_round_is_the_one_shot_ticket() {
    let (specs, data, _) = mlp();
    let cfg = short(2);
    let imp = iterative_magnitude_prune(
        &specs,
        &data,
        0.5,
        0.5,
        &cfg,
        ImpMode::Reset,
        ArchFamily::PlainStack,
        9,
    )
    .unwrap();
    let lt = make_lt_ticket(&specs, &data, 0.5, &cfg, 9).unwrap();
    assert_eq!(imp.round_masks.len(), 1);
    assert_eq!(imp.ticket.mask, lt.mask);
    assert_eq!(imp.ticket.weights, lt.weights);
}

#[test]
fn hybrid_imp_ends_on_smart_quotas() {
    let (specs, data, _) = mlp();
    let sizes = layer_sizes(&specs);
    let out = iterative_magnitude_prune(
        &specs,
        &data,
        0.9,
        0.5,
        &short(1),
        ImpMode::Hybrid,
        ArchFamily::PlainStack,
        1,
    )
    .unwrap();
    let sched = smart_ratio(&sizes, &specs, 0.9, ArchFamily::PlainStack).unwrap();
    assert_eq!(out.ticket.mask.kept_counts(), sched.quotas());
    let q = interpolated_quotas(&sched, sched.retained(), &sizes).unwrap();
    assert_eq!(q, sched.quotas());
}

#[test]
fn replay_rebuilds_every_pipeline() {
    let (specs, data, _) = mlp();
    let cfg = short(2);
    for pipeline in all_pipelines() {
        for checks in [vec![], vec![Check::CorruptBoth], vec![Check::Rearrange]] {
            let t = construct(&pipeline, &specs, &data, 0.8, &cfg, 3, &checks).unwrap();
            assert_eq!(
                replay(&t.provenance, &specs, &data).unwrap(),
                t,
                "{pipeline} {checks:?}"
            );
        }
    }
}

#[test]
fn pruned_weights_are_inert_through_retraining() {
    let (specs, data, test) = mlp();
    let cfg = SuiteConfig {
        pretrain: short(2),
        retrain: short(2),
        ..SuiteConfig::default()
    };
    for pipeline in all_pipelines() {
        let cell = run_cell(&pipeline, None, &specs, &data, &test, 0.8, 0, &cfg).unwrap();
        for l in 0..cell.ticket.mask.layer_count() {
            for (i, &kept) in cell.ticket.mask.layer(l).iter().enumerate() {
                if !kept {
                    let before = cell.ticket.weights.layer(l)[i].to_bits();
                    assert_eq!(
                        cell.final_weights.layer(l)[i].to_bits(),
                        before,
                        "{pipeline} layer {l}"
                    );
                }
            }
        }
    }
}

#[test]
fn masked_training_matches_a_dense_start_from_zeroed_weights() {
    let (specs, data, _) = mlp();
    let t = make_random_ticket(&specs, 0.9, ArchFamily::PlainStack, 0).unwrap();
    let a = train(&t.weights, &t.mask, &data, None, &short(1), &[]).unwrap();
    let b = train(
        &t.weights.masked(&t.mask).unwrap(),
        &t.mask,
        &data,
        None,
        &short(1),
        &[],
    )
    .unwrap();
    assert_eq!(
        a.params.masked(&t.mask).unwrap(),
        b.params.masked(&t.mask).unwrap()
    );
}

#[test]
fn sanity_suite_shape() {
    let (specs, data, test) = mlp();
    let cfg = SuiteConfig {
        sparsities: vec![0.5, 0.9],
        seeds: vec![0, 1],
        pretrain: short(1),
        retrain: short(1),
        reuse_ticket_seed: false,
    };
    let checks = [Check::RandomLabels, Check::Rearrange, Check::HalfData];
    let rows = run_sanity_suite(&Pipeline::Snip, &checks, &specs, &data, &test, &cfg).unwrap();
    assert_eq!(rows.len(), 2 * (1 + checks.len()));
    assert!(rows.iter().all(|r| r.accuracies.len() == 2));
    let base = rows
        .iter()
        .find(|r| r.check.is_none() && r.sparsity == 0.9)
        .unwrap();
    let rearranged = rows
        .iter()
        .find(|r| r.check == Some(Check::Rearrange) && r.sparsity == 0.9)
        .unwrap();
    assert_eq!(base.keep_counts, rearranged.keep_counts);
    assert_eq!(base.label(), "baseline");

    let only = run_sanity_suite(&Pipeline::Snip, &[], &specs, &data, &test, &cfg).unwrap();
    assert_eq!(only.len(), 2);
    assert!(only.iter().all(|r| r.check.is_none()));
}

#[test]
fn retrain_seed_is_fresh_unless_reused() {
    let cfg = SuiteConfig::default();
    assert_ne!(cfg.retrain_seed(3), 3);
    assert_eq!(
        SuiteConfig {
            reuse_ticket_seed: true,
            ..cfg
        }
        .retrain_seed(3),
        3
    );
}

#[test]
fn random_tickets_use_their_own_stream() {
    let (specs, _, _) = mlp();
    let a = make_random_ticket(&specs, 0.9, ArchFamily::PlainStack, 0).unwrap();
    let mut rng = stream(0, Stream::RandomMask);
    let _: u64 = rng.random();
    assert_eq!(
        a,
        make_random_ticket(&specs, 0.9, ArchFamily::PlainStack, 0).unwrap()
    );
}

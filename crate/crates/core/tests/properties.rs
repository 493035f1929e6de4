use proptest::prelude::*;

use prunelab_core::codec::{decode_checkpoint, encode_checkpoint};
use prunelab_core::gradcheck::{finite_diff_network_gradient, max_relative_error};
use prunelab_core::mask::{budget, mask_from_scores_global, mask_from_scores_layerwise, sparsity};
use prunelab_core::model::{build_network, forward_loss, layer_sizes, loss_and_gradient};
use prunelab_core::rng::{stream, RngState, Stream};
use prunelab_core::sanity::{rearrange_mask_layerwise, shuffle_unmasked_weights};
use prunelab_core::schedule::{self, apportion, KeepRatioSchedule};
use prunelab_core::{
    ArchFamily, Checkpoint, Dataset, Head, LayerSpec, Mask, ScheduleKind, ScoreMap,
};
use rand::{Rng, RngCore};

fn stack(sizes: &[usize]) -> Vec<LayerSpec> {
    let mut specs: Vec<LayerSpec> = sizes.iter().map(|&m| LayerSpec::dense(m, 1)).collect();
    let last = specs.len() - 1;
    specs[last] = specs[last].output();
    specs
}

/// Small dense or conv-then-dense networks with at most ~200 weights.
fn small_network() -> impl Strategy<Value = (Vec<LayerSpec>, Vec<usize>)> {
    prop_oneof![
        (1usize..5, prop::collection::vec(1usize..6, 1..4), 2usize..4).prop_map(
            |(d, hidden, c)| {
                let mut specs = Vec::new();
                let mut fan_in = d;
                for h in hidden {
                    specs.push(LayerSpec::dense(fan_in, h));
                    fan_in = h;
                }
                specs.push(LayerSpec::dense(fan_in, c).output());
                (specs, vec![d])
            }
        ),
        (1usize..3, 1usize..3).prop_map(|(ch, out)| {
            // 4x4 input, 3x3 kernel -> 2x2 maps
            let specs = vec![
                LayerSpec::conv(ch, out, 3, 3),
                LayerSpec::dense(out * 4, 2).output(),
            ];
            (specs, vec![ch, 4, 4])
        }),
    ]
}

fn batch(shape: &[usize], classes: usize, n: usize, seed: u64) -> Dataset {
    let dim: usize = shape.iter().product();
    let mut rng = stream(seed, Stream::Dataset);
    let x = (0..n * dim).map(|_| rng.random_range(-1.5..1.5)).collect();
    let y = (0..n).map(|_| rng.random_range(0..classes)).collect();
    Dataset::new(x, y, classes, shape.to_vec()).unwrap()
}

fn random_mask(sizes: &[usize], seed: u64) -> Mask {
    let mut rng = stream(seed, Stream::RandomMask);
    Mask::new(
        sizes
            .iter()
            .map(|&m| (0..m).map(|_| rng.random_bool(0.7)).collect())
            .collect(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn backward_matches_central_differences((specs, shape) in small_network(), seed in 0u64..1000, hse in any::<bool>()) {
        let params = build_network(&specs, seed).unwrap();
        let classes = specs.last().unwrap().fan_out;
        let data = batch(&shape, classes, 3, seed);
        let mask = random_mask(&params.layer_sizes(), seed);
        let head = if hse { Head::HalfSquaredError } else { Head::SoftmaxCrossEntropy };
        let (_, g) = loss_and_gradient(&params, &mask, &data, head).unwrap();
        let fd = finite_diff_network_gradient(&params, &mask, &data, head, 1e-5).unwrap();
        // a ReLU kink within the step makes the difference quotient meaningless; two step
        // sizes disagreeing is the tell
        let fd_small = finite_diff_network_gradient(&params, &mask, &data, head, 1e-6).unwrap();
        prop_assume!(max_relative_error(&fd, &fd_small, 1e-6) < 1e-3);
        prop_assert!(max_relative_error(&g.concat(), &fd, 1e-8) <= 1e-4);
    }

    #[test]
    fn masked_forward_equals_zeroed_weights((specs, shape) in small_network(), seed in 0u64..1000) {
        let params = build_network(&specs, seed).unwrap();
        let data = batch(&shape, specs.last().unwrap().fan_out, 4, seed);
        let mask = random_mask(&params.layer_sizes(), seed + 1);
        let (a, _) = forward_loss(&params, &mask, &data, Head::SoftmaxCrossEntropy).unwrap();
        let zeroed = params.masked(&mask).unwrap();
        let (b, _) = forward_loss(&zeroed, &Mask::ones(&params.layer_sizes()), &data, Head::SoftmaxCrossEntropy).unwrap();
        prop_assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn global_selection_matches_full_sort(
        layers in prop::collection::vec(prop::collection::vec(0u8..20, 1..2500), 1..5),
        frac in 0.0f64..1.0,
    ) {
        let scores = ScoreMap::new(layers.iter().map(|l| l.iter().map(|&v| f64::from(v) / 4.0).collect()).collect()).unwrap();
        let n: usize = layers.iter().map(Vec::len).sum();
        let k = ((frac * n as f64) as usize).clamp(1, n);
        let p = 1.0 - k as f64 / n as f64;
        prop_assume!(p < 1.0);
        let mask = mask_from_scores_global(&scores, p).unwrap();

        let mut all: Vec<(f64, usize, usize)> = Vec::new();
        for (l, layer) in scores.layers().iter().enumerate() {
            for (i, &s) in layer.iter().enumerate() {
                all.push((s, l, i));
            }
        }
        all.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
        let mut want: Vec<Vec<bool>> = layers.iter().map(|l| vec![false; l.len()]).collect();
        for &(_, l, i) in &all[..k] {
            want[l][i] = true;
        }
        prop_assert_eq!(mask, Mask::new(want));
    }

    #[test]
    fn layerwise_selection_matches_per_layer_sort(
        layers in prop::collection::vec(prop::collection::vec(0u8..20, 1..2500), 1..5),
        ratios in prop::collection::vec(0.0f64..=1.0, 5),
    ) {
        let scores = ScoreMap::new(layers.iter().map(|l| l.iter().map(|&v| f64::from(v)).collect()).collect()).unwrap();
        let sizes = scores.sizes();
        let sched = KeepRatioSchedule::from_ratios(&ratios[..sizes.len()], &sizes).unwrap();
        let mask = mask_from_scores_layerwise(&scores, &sched).unwrap();
        for (l, layer) in scores.layers().iter().enumerate() {
            let mut idx: Vec<usize> = (0..layer.len()).collect();
            idx.sort_by(|&a, &b| layer[b].total_cmp(&layer[a]).then(a.cmp(&b)));
            let mut want = vec![false; layer.len()];
            for &i in &idx[..sched.quotas()[l]] {
                want[i] = true;
            }
            prop_assert_eq!(mask.layer(l), &want[..]);
        }
    }

    #[test]
    fn schedules_spend_the_budget_exactly(
        sizes in prop::collection::vec(1usize..3000, 2..7),
        p in 0.3f64..0.995,
        fast in any::<bool>(),
    ) {
        let family = if fast { ArchFamily::FastDecayStack } else { ArchFamily::PlainStack };
        let specs = stack(&sizes);
        let n: usize = sizes.iter().sum();
        for kind in ScheduleKind::ALL.into_iter().filter(|k| *k != ScheduleKind::Extracted) {
            match schedule::build(kind, &sizes, &specs, p, family) {
                Ok(s) => {
                    prop_assert_eq!(s.retained(), budget(n, p));
                    prop_assert!(s.quotas().iter().zip(&sizes).all(|(q, m)| q <= m));
                }
                Err(prunelab_core::Error::InfeasibleSparsity { .. }) => {
                    prop_assert!((budget(n, p) as f64) < 0.3 * *sizes.last().unwrap() as f64);
                }
                Err(e) => prop_assert!(false, "{kind}: {e}"),
            }
        }
    }

    #[test]
    fn apportionment_rounds_each_layer_by_less_than_one(
        reals in prop::collection::vec(0.0f64..50.0, 1..8),
    ) {
        let total = reals.iter().sum::<f64>().round() as usize;
        let caps: Vec<usize> = reals.iter().map(|r| r.ceil() as usize).collect();
        let q = apportion(&reals, &caps, total).unwrap();
        prop_assert_eq!(q.iter().sum::<usize>(), total);
        for (qi, r) in q.iter().zip(&reals) {
            prop_assert!((*qi as f64 - r).abs() < 1.0);
        }
    }

    #[test]
    fn rearrange_and_shuffle_preserve_counts(seed in 0u64..10_000, sizes in prop::collection::vec(1usize..40, 2..5)) {
        let mask = random_mask(&sizes, seed);
        let r = rearrange_mask_layerwise(&mask, &mut stream(seed, Stream::Rearrange));
        prop_assert_eq!(r.kept_counts(), mask.kept_counts());

        let specs = stack(&sizes);
        let params = build_network(&specs, seed).unwrap();
        let s = shuffle_unmasked_weights(&params, &mask, &mut stream(seed, Stream::Shuffle)).unwrap();
        for l in 0..sizes.len() {
            let (mut a, mut b) = (Vec::new(), Vec::new());
            for i in 0..sizes[l] {
                if mask.layer(l)[i] {
                    a.push(params.layer(l)[i]);
                    b.push(s.layer(l)[i]);
                } else {
                    prop_assert_eq!(params.layer(l)[i].to_bits(), s.layer(l)[i].to_bits());
                }
            }
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn rng_state_and_checkpoints_roundtrip(seed in any::<u64>(), draws in 0usize..100) {
        let mut rng = stream(seed, Stream::Train);
        for _ in 0..draws {
            rng.next_u32();
        }
        let state = RngState::capture(&rng);
        let mut resumed = RngState::from_bytes(&state.to_bytes()).unwrap().restore();
        prop_assert_eq!(rng.next_u64(), resumed.next_u64());

        let specs = vec![LayerSpec::conv(1, 2, 2, 2), LayerSpec::dense(18, 3).output()];
        let cp = Checkpoint { epoch: draws, weights: build_network(&specs, seed).unwrap(), rng_state: state };
        prop_assert_eq!(decode_checkpoint(&encode_checkpoint(&cp)).unwrap(), cp);
    }

    #[test]
    fn sparsity_matches_budget(sizes in prop::collection::vec(1usize..500, 1..5), p in 0.0f64..0.99) {
        let n: usize = sizes.iter().sum();
        let scores = ScoreMap::new(sizes.iter().map(|&m| (0..m).map(|i| i as f64).collect()).collect()).unwrap();
        match mask_from_scores_global(&scores, p) {
            Ok(m) => {
                prop_assert_eq!(m.kept(), budget(n, p));
                prop_assert!((sparsity(&m) - (1.0 - budget(n, p) as f64 / n as f64)).abs() < 1e-12);
            }
            Err(e) => prop_assert_eq!(e, prunelab_core::Error::EmptyNetwork { total: n }),
        }
    }
}

#[test]
fn layer_sizes_match_preset_products() {
    let specs = prunelab_core::model::preset("conv-5", &[1, 8, 8], 3).unwrap();
    let sizes = layer_sizes(&specs);
    let by_hand: Vec<usize> = specs
        .iter()
        .map(|s| match s.kind {
            prunelab_core::LayerKind::Dense => s.fan_in * s.fan_out,
            prunelab_core::LayerKind::Conv { kernel_h, kernel_w } => {
                s.fan_in * s.fan_out * kernel_h * kernel_w
            }
        })
        .collect();
    assert_eq!(sizes, by_hand);
}

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use varidepth::autodiff::{l05_slope_grad, L05_GUARD};
use varidepth::network::{Granularity, Network, NetworkSpec};
use varidepth::pathmetrics::{self, enumerate_paths_oracle, PathProfile, Stage};
use varidepth::reparam::{
    noninjectivity_witness, reparam_local_linear, reparam_relu, sample_box, verify_reparam, ActivationDescriptor,
    ResidualBlockParams,
};

fn stage() -> impl Strategy<Value = Stage> {
    let plain = (0.0..=1.0f64).prop_map(|p| Stage::Plain { nonlinear_fraction: p });
    plain.prop_recursive(2, 12, 4, |inner| {
        prop::collection::vec(inner, 1..4).prop_map(|stages| Stage::Residual { stages })
    })
}

fn profile() -> impl Strategy<Value = PathProfile> {
    prop::collection::vec(stage(), 0..6)
        .prop_map(|stages| PathProfile { stages })
        .prop_filter("oracle limit", |p| p.choice_count() <= 16)
}

fn prelu_net(seed: u64, granularity: Granularity, slopes: &[f64]) -> Network {
    let mut net = Network::build(NetworkSpec::mlp(3, 6, 4, 2), seed)
        .unwrap()
        .relu_to_prelu(granularity)
        .unwrap();
    let mut it = slopes.iter().cycle();
    for s in net.layers.iter_mut().filter_map(|l| l.slopes.as_mut()) {
        s.values.iter_mut().for_each(|a| *a = *it.next().unwrap());
    }
    net
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn distribution_is_normalized_and_matches_oracle(p in profile()) {
        let d = pathmetrics::path_length_distribution(&p);
        prop_assert!((d.total() - 1.0).abs() < 1e-12);
        prop_assert!(d.mass().iter().all(|&m| m >= 0.0));
        prop_assert_eq!(d.mass().len(), p.max_length() + 1);
        prop_assert!((d.mean() - pathmetrics::napl(&p)).abs() < 1e-10);
        let o = enumerate_paths_oracle(&p).unwrap();
        prop_assert!(d.total_variation(&o) < 1e-12);
    }

    #[test]
    fn napl_grows_with_any_fraction(fr in prop::collection::vec(0.0..=1.0f64, 1..10), i in 0usize..10, bump in 0.0..1.0f64) {
        let i = i % fr.len();
        let mut more = fr.clone();
        more[i] = (more[i] + bump).min(1.0);
        let a = pathmetrics::napl(&PathProfile::plain(&fr).unwrap());
        let b = pathmetrics::napl(&PathProfile::plain(&more).unwrap());
        prop_assert!(b >= a - 1e-15);
        prop_assert!(a <= fr.len() as f64 + 1e-12);
    }

    #[test]
    fn freezing_snaps_exactly_the_near_linear_slopes(
        slopes in prop::collection::vec(-1.0..3.0f64, 1..24),
        tau in 0.001..0.5f64,
        seed in 0u64..8,
    ) {
        let mut net = prelu_net(seed, Granularity::Channel, &slopes);
        let before: Vec<f64> = net.slope_values().collect();
        let newly = net.freeze_near_linear(tau);
        let after: Vec<f64> = net.slope_values().collect();
        prop_assert_eq!(newly, before.iter().filter(|a| (*a - 1.0).abs() < tau).count());
        for (a, b) in before.iter().zip(&after) {
            if (a - 1.0).abs() < tau { prop_assert_eq!(*b, 1.0) } else { prop_assert_eq!(a, b) }
        }
        prop_assert_eq!(net.freeze_near_linear(tau), 0);
    }

    #[test]
    fn frozen_units_stay_frozen(slopes in prop::collection::vec(0.9..1.1f64, 1..8), tau in 0.01..0.2f64) {
        let mut net = prelu_net(1, Granularity::Layer, &slopes);
        net.freeze_near_linear(tau);
        let frozen_before = net.frozen_count();
        for s in net.layers.iter_mut().filter_map(|l| l.slopes.as_mut()) {
            for (a, f) in s.values.iter_mut().zip(&s.frozen) {
                if !*f { *a = 5.0; }
            }
        }
        net.freeze_near_linear(tau);
        prop_assert_eq!(net.frozen_count(), frozen_before);
        for s in net.layers.iter().filter_map(|l| l.slopes.as_ref()) {
            for (a, f) in s.values.iter().zip(&s.frozen) {
                if *f { prop_assert_eq!(*a, 1.0); }
            }
        }
    }

    #[test]
    fn regularizer_pulls_towards_linear_harder_when_closer(a in -3.0..3.0f64, shrink in 0.05..0.95f64) {
        prop_assume!((a - 1.0).abs() > L05_GUARD);
        let closer = 1.0 + (a - 1.0) * shrink;
        let (g, gc) = (l05_slope_grad(a), l05_slope_grad(closer));
        // A descent step moves α towards 1.
        prop_assert!(-g * (1.0 - a) > 0.0);
        prop_assert!(gc.abs() >= g.abs());
        prop_assert!(gc.abs() <= 0.5 / L05_GUARD.sqrt() + 1e-12);
    }

    #[test]
    fn relu_shift_is_exact_in_domain(seed in any::<u64>(), n in 1usize..7, lower in -4.0..0.5f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let block = ResidualBlockParams::random(n, 1.0, &mut rng);
        let ff = reparam_relu(&block, lower);
        prop_assert_eq!(ff.hidden_width(), 2 * n);
        let xs = sample_box(n, lower, lower + 6.0, 200, &mut rng);
        let dev = verify_reparam(&block, &ff, &ActivationDescriptor::relu(), &xs).unwrap();
        prop_assert!(dev.max <= 1e-12, "{}", dev.max);
    }

    #[test]
    fn local_linear_doubles_width(seed in any::<u64>(), n in 1usize..7, eps in 1e-5..1e-1f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let block = ResidualBlockParams::random(n, 1.0, &mut rng);
        for act in [ActivationDescriptor::tanh(), ActivationDescriptor::sigmoid(), ActivationDescriptor::softplus()] {
            let ff = reparam_local_linear(&block, &act, eps).unwrap();
            prop_assert_eq!(ff.hidden_width(), 2 * n);
            prop_assert_eq!(ff.w1.shape(), (2 * n, n));
            prop_assert_eq!(ff.w2.shape(), (n, 2 * n));
        }
    }

    #[test]
    fn witness_pairs_verify(entries in prop::collection::vec(-3.0..3.0f64, 16), bias in prop::collection::vec(-2.0..2.0f64, 4), rank_drop in any::<bool>()) {
        let mut w = DMatrix::from_row_slice(4, 4, &entries);
        if rank_drop {
            let row = w.row(0) + w.row(1);
            w.set_row(3, &row);
        }
        let b = DVector::from_vec(bias);
        let wit = noninjectivity_witness(&w, &b).unwrap();
        let img = |x: &DVector<f64>| (&w * x + &b).map(|z| z.max(0.0));
        prop_assert!((&wit.x1 - &wit.x2).norm() > 1e-8);
        prop_assert_eq!(img(&wit.x1), img(&wit.x2));
    }
}

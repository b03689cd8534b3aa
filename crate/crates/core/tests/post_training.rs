use varidepth::harness::{base_train, generate_synthetic, Dataset, SyntheticKind, SyntheticSpec};
use varidepth::linearize::{omega_sweep, post_post_train, post_train, PostTrainConfig, PostTrainRecipe, Schedule};
use varidepth::network::{Checkpoint, Granularity, NetworkSpec};
use varidepth::pathmetrics;

fn setup() -> (Dataset, Checkpoint) {
    let data = generate_synthetic(&SyntheticSpec {
        generator: SyntheticKind::GaussianMixture,
        samples: 400,
        classes: 3,
        features: 4,
        noise: 1.0,
        seed: 1,
    })
    .unwrap();
    let mut schedule = Schedule::base_default();
    schedule.epochs = 5;
    let base = base_train(&NetworkSpec::mlp(4, 12, 4, 3), &data, &schedule, 1).unwrap();
    (data, base)
}

fn recipe(epochs: usize) -> PostTrainRecipe {
    let mut r = PostTrainRecipe::default();
    r.schedule.epochs = epochs;
    r
}

#[test]
fn frozen_count_never_decreases_across_epochs() {
    let (data, base) = setup();
    let net = base.network.relu_to_prelu(Granularity::Channel).unwrap();
    let (out, trace) = post_train(&net, &data, &PostTrainConfig::new(0.05, 0, recipe(8))).unwrap();
    assert_eq!(trace.len(), 8);
    assert!(trace.windows(2).all(|w| w[1].frozen >= w[0].frozen));
    assert_eq!(trace.last().unwrap().frozen, out.frozen_count());
    for s in out.layers.iter().filter_map(|l| l.slopes.as_ref()) {
        for (a, f) in s.values.iter().zip(&s.frozen) {
            assert!(!*f || *a == 1.0);
        }
    }
}

#[test]
fn stronger_penalty_linearizes_at_least_as_much() {
    let (data, base) = setup();
    let cfg = PostTrainConfig::new(0.0, 0, recipe(6));
    let runs = omega_sweep(&base, &[0.0, 0.02, 0.2], &cfg, Granularity::Layer, &data);
    let napl: Vec<f64> = runs.iter().map(|r| r.as_ref().unwrap().record.napl).collect();
    assert_eq!(napl[0], 3.0);
    assert!(napl[2] <= napl[0]);
}

#[test]
fn layerwise_result_continues_channelwise() {
    let (data, base) = setup();
    let net = base.network.relu_to_prelu(Granularity::Layer).unwrap();
    let (layer, _) = post_train(&net, &data, &PostTrainConfig::new(0.1, 0, recipe(4))).unwrap();
    let before = pathmetrics::napl(&pathmetrics::profile_of(&layer));
    let (chan, trace) = post_post_train(&layer, &data, &PostTrainConfig::new(0.0, 0, recipe(2))).unwrap();
    assert_eq!(trace.len(), 2);
    assert!(chan.layers.iter().filter_map(|l| l.slopes.as_ref()).all(|s| s.len() > 1));
    // Expanded units inherit the frozen flags, so nothing linear comes back.
    assert!(pathmetrics::napl(&pathmetrics::profile_of(&chan)) <= before);
}

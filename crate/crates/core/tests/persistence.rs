use std::fs;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use varidepth::autodiff::Tensor;
use varidepth::harness::idx::{encode_idx, IMAGES_MAGIC, LABELS_MAGIC};
use varidepth::harness::{load_idx, HarnessError, IdxError, Provenance};
use varidepth::network::{Checkpoint, Granularity, Network, NetworkError, NetworkSpec, TrainingMeta, CHECKPOINT_VERSION};

fn write_pair(dir: &std::path::Path, images: &[u8], labels: &[u8]) -> (std::path::PathBuf, std::path::PathBuf) {
    let (ip, lp) = (dir.join("images.idx"), dir.join("labels.idx"));
    fs::write(&ip, images).unwrap();
    fs::write(&lp, labels).unwrap();
    (ip, lp)
}

#[test]
fn idx_files_load_with_checksum() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let pixels: Vec<u8> = (0..50 * 9).map(|_| rng.random()).collect();
    let labels: Vec<u8> = (0..50).map(|i| (i % 3) as u8).collect();
    let (ip, lp) = write_pair(dir.path(), &encode_idx(IMAGES_MAGIC, &[50, 3, 3], &pixels), &encode_idx(LABELS_MAGIC, &[50], &labels));
    let data = load_idx(&ip, &lp, 4).unwrap();
    assert_eq!((data.len(), data.n_features(), data.classes()), (50, 9, 3));
    assert_eq!(data.train().len() + data.test().len(), 50);
    match &data.provenance {
        Provenance::Files { sha256, .. } => {
            assert_eq!(sha256.len(), 64);
            assert!(sha256.chars().all(|c| c.is_ascii_hexdigit()));
        }
        other => panic!("unexpected provenance {other:?}"),
    }
    let again = load_idx(&ip, &lp, 4).unwrap();
    assert_eq!(again.provenance, data.provenance);
    assert_eq!(again.train(), data.train());
}

#[test]
fn idx_files_reject_each_malformation() {
    let dir = tempfile::tempdir().unwrap();
    let images = encode_idx(IMAGES_MAGIC, &[4, 2, 2], &[1; 16]);
    let labels = encode_idx(LABELS_MAGIC, &[4], &[0, 1, 0, 1]);
    let load = |i: &[u8], l: &[u8]| {
        let (ip, lp) = write_pair(dir.path(), i, l);
        match load_idx(ip, lp, 0) {
            Err(HarnessError::Idx(e)) => e,
            other => panic!("expected an IDX error, got {other:?}"),
        }
    };
    assert!(matches!(load(&labels, &labels), IdxError::BadMagic { found: 0x801, expected: 0x803 }));
    assert!(matches!(load(&images[..7], &labels), IdxError::TruncatedHeader { .. }));
    assert!(matches!(load(&images[..images.len() - 3], &labels), IdxError::TruncatedPayload { .. }));
    let mut long = images.clone();
    long.extend([0, 0]);
    assert!(matches!(load(&long, &labels), IdxError::TrailingBytes { extra: 2, .. }));
    assert!(matches!(load(&encode_idx(IMAGES_MAGIC, &[4, 0, 2], &[]), &labels), IdxError::ZeroExtent { index: 1, .. }));
    assert!(matches!(
        load(&images, &encode_idx(LABELS_MAGIC, &[3], &[0, 1, 0])),
        IdxError::CountMismatch { images: 4, labels: 3 }
    ));
}

#[test]
fn missing_idx_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_idx(dir.path().join("a"), dir.path().join("b"), 0), Err(HarnessError::Io(_))));
}

fn networks() -> Vec<Network> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut out = vec![Network::build(NetworkSpec::mlp(4, 7, 3, 2), 1).unwrap()];
    for g in [Granularity::Channel, Granularity::Layer] {
        let mut net = Network::build(NetworkSpec::residual(4, 6, 2, 2, 3), 2).unwrap().relu_to_prelu(g).unwrap();
        for s in net.layers.iter_mut().filter_map(|l| l.slopes.as_mut()) {
            s.values.iter_mut().for_each(|a| *a = rng.random_range(0.5..1.5));
        }
        net.freeze_near_linear(0.2);
        out.push(net.clone());
        out.push(net.replace_nonlinear_layerwise_with_channelwise().append_channel_multiplier());
    }
    out
}

#[test]
fn checkpoints_round_trip_forward_exact() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (i, net) in networks().into_iter().enumerate() {
        let meta = TrainingMeta { epoch: i, omega: Some(0.01 * i as f64), seed: i as u64, ..TrainingMeta::default() };
        let ck = Checkpoint::new(net, meta);
        let path = dir.path().join(format!("{i}.ckpt"));
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.network, ck.network);
        assert_eq!(back.meta, ck.meta);
        let d = ck.network.input_width();
        let x = Tensor::matrix(16, d, (0..16 * d).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
        let (a, b) = (ck.network.forward(&x).unwrap(), back.network.forward(&x).unwrap());
        assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
        assert_eq!(back.to_bytes(), ck.to_bytes());
    }
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let ck = Checkpoint::new(networks().remove(1), TrainingMeta::default());
    let bytes = ck.to_bytes();
    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&bad_magic), Err(NetworkError::Corrupt { offset: 0, .. })));
    let mut bad_version = bytes.clone();
    bad_version[4..8].copy_from_slice(&(CHECKPOINT_VERSION + 1).to_le_bytes());
    assert!(matches!(Checkpoint::from_bytes(&bad_version), Err(NetworkError::Version { .. })));
    assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 8]), Err(NetworkError::Corrupt { .. })));
    assert!(matches!(Checkpoint::from_bytes(&bytes[..10]), Err(NetworkError::Corrupt { .. })));
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(Checkpoint::load(dir.path().join("none.ckpt")), Err(NetworkError::Io { .. })));
}

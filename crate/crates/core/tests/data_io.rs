use binnet::data::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_cifar10, load_mnist, normalize,
    normalize_pixel, parse_cifar10, parse_idx_images, parse_idx_labels, save_checkpoint, Checkpoint,
    CIFAR_RECORD_LEN,
};
use binnet::presets::{mlp, vgg_style};
use binnet::training::{train_minibatch, OptState, TrainConfig};
use binnet::{Dataset, Error, Regularizer, Rng, Split, Tensor};
use proptest::prelude::*;

fn idx_images(pixels: &[[u8; 784]]) -> Vec<u8> {
    let mut b = vec![0, 0, 8, 3];
    for v in [pixels.len() as u32, 28, 28] {
        b.extend_from_slice(&v.to_be_bytes());
    }
    pixels.iter().for_each(|p| b.extend_from_slice(p));
    b
}

fn idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut b = vec![0, 0, 8, 1];
    b.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    b.extend_from_slice(labels);
    b
}

fn two_images() -> [[u8; 784]; 2] {
    let mut a = [0u8; 784];
    let mut b = [0u8; 784];
    for i in 0..784 {
        a[i] = (i % 256) as u8;
        b[i] = 255 - (i * 7 % 256) as u8;
    }
    [a, b]
}

fn cifar_record(label: u8, seed: u8) -> Vec<u8> {
    let mut r = vec![label];
    r.extend((0..3072).map(|i| (i as u32 * 31 + seed as u32) as u8));
    r
}

#[test]
fn mnist_fixture_round_trips_pixel_exact() {
    let dir = tempfile::tempdir().unwrap();
    let images = two_images();
    std::fs::write(dir.path().join("img"), idx_images(&images)).unwrap();
    std::fs::write(dir.path().join("lbl"), idx_labels(&[3, 9])).unwrap();
    let ds = load_mnist(&dir.path().join("img"), &dir.path().join("lbl"), Split::Train).unwrap();
    assert_eq!(ds.len(), 2);
    assert_eq!(ds.sample_shape(), [1, 28, 28]);
    assert_eq!(ds.labels(), [3, 9]);
    for (n, img) in images.iter().enumerate() {
        let want: Vec<f32> = img.iter().map(|&p| p as f32).collect();
        assert_eq!(ds.image(n), want.as_slice());
    }
    assert!(!ds.is_normalized());
}

#[test]
fn label_magic_as_image_file_fails_at_byte_3() {
    match parse_idx_images(&idx_labels(&[1, 2])) {
        Err(Error::Format { offset, .. }) => assert_eq!(offset, 3),
        other => panic!("expected a format error, got {other:?}"),
    }
}

#[test]
fn image_and_label_counts_must_agree() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("img"), idx_images(&two_images())).unwrap();
    std::fs::write(dir.path().join("lbl"), idx_labels(&[1, 2, 3])).unwrap();
    let err = load_mnist(&dir.path().join("img"), &dir.path().join("lbl"), Split::Test).unwrap_err();
    assert!(matches!(err, Error::Format { .. }), "{err}");
}

#[test]
fn missing_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = load_mnist(&dir.path().join("nope"), &dir.path().join("nope2"), Split::Train).unwrap_err();
    assert!(matches!(err, Error::Io(_)), "{err}");
}

#[test]
fn every_header_byte_mutation_is_rejected() {
    let images = idx_images(&two_images());
    let labels = idx_labels(&[4, 5]);
    for pos in 0..16 {
        for v in 0..=255u8 {
            if v == images[pos] {
                continue;
            }
            let mut m = images.clone();
            m[pos] = v;
            assert!(parse_idx_images(&m).is_err(), "image byte {pos} = {v} accepted");
        }
    }
    for pos in 0..8 {
        for v in 0..=255u8 {
            if v == labels[pos] {
                continue;
            }
            let mut m = labels.clone();
            m[pos] = v;
            assert!(parse_idx_labels(&m).is_err(), "label byte {pos} = {v} accepted");
        }
    }
}

#[test]
fn every_truncation_is_rejected() {
    let images = idx_images(&two_images());
    for len in 0..images.len() {
        assert!(parse_idx_images(&images[..len]).is_err(), "image prefix {len} accepted");
    }
    let labels = idx_labels(&[4, 5]);
    for len in 0..labels.len() {
        assert!(parse_idx_labels(&labels[..len]).is_err(), "label prefix {len} accepted");
    }
    let cifar = cifar_record(1, 2);
    for len in [0, 1, 3072, CIFAR_RECORD_LEN + 1, 2 * CIFAR_RECORD_LEN - 1] {
        let mut bytes = cifar.clone();
        bytes.resize(len, 0);
        assert!(matches!(parse_cifar10(&bytes), Err(Error::Format { .. })), "cifar length {len} accepted");
    }
}

#[test]
fn out_of_range_labels_are_rejected() {
    assert!(parse_idx_labels(&idx_labels(&[1, 10])).is_err());
    for label in 10..=255u8 {
        assert!(parse_cifar10(&cifar_record(label, 0)).is_err());
    }
}

#[test]
fn cifar_record_decodes_to_known_planes() {
    let dir = tempfile::tempdir().unwrap();
    let mut first = cifar_record(7, 0);
    first.extend(cifar_record(2, 5));
    std::fs::write(dir.path().join("a.bin"), &first).unwrap();
    std::fs::write(dir.path().join("b.bin"), cifar_record(0, 9)).unwrap();
    let ds = load_cifar10(&[dir.path().join("a.bin"), dir.path().join("b.bin")], Split::Train).unwrap();
    assert_eq!(ds.len(), 3);
    assert_eq!(ds.labels(), [7, 2, 0]);
    assert_eq!(ds.sample_shape(), [3, 32, 32]);
    let img = ds.image(1);
    // red (0, 0), green (0, 0), blue (31, 31)
    assert_eq!(img[0], 5.0);
    assert_eq!(img[1024], ((1024u32 * 31 + 5) % 256) as f32);
    assert_eq!(img[3071], ((3071u32 * 31 + 5) % 256) as f32);
}

#[test]
fn normalization_endpoints_and_guard() {
    assert_eq!(normalize_pixel(0.0), -1.0);
    assert_eq!(normalize_pixel(255.0), 1.0);
    assert_eq!(normalize_pixel(127.5), 0.0);
    assert!((normalize_pixel(127.0) + 0.0039).abs() < 1e-4);
    assert!((normalize_pixel(128.0) - 0.0039).abs() < 1e-4);
    assert_eq!(normalize_pixel(127.0), -normalize_pixel(128.0));

    let images = Tensor::from_fn(&[2, 1, 2, 2], |i| (i * 36) as f32);
    let ds = Dataset::new(images, vec![1, 2], Split::Test, false).unwrap();
    let once = normalize(ds).unwrap();
    assert!(once.is_normalized());
    assert!(once.images().data().iter().all(|v| (-1.0..=1.0).contains(v)));
    assert!(matches!(normalize(once), Err(Error::State(_))));
}

fn trained_checkpoint(reg: Regularizer) -> Checkpoint {
    let mut rng = Rng::seed_from(31);
    let mut network = vgg_style([2, 4, 4], &[3], 5, &mut rng);
    let config = TrainConfig {
        regularizer: reg,
        epochs: 3,
        seed: 77,
        ..Default::default()
    };
    let mut opt = OptState::new(&network, &config);
    for s in 0..3 {
        let x = Tensor::from_fn(&[4, 2, 4, 4], |i| ((i * 13 + s) % 17) as f32 / 8.0 - 1.0);
        train_minibatch(&mut network, &x, &[0, 1, 2, 3], &config, &mut opt).unwrap();
    }
    opt.epoch = 1;
    Checkpoint { config, network, opt }
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    for reg in [Regularizer::None, Regularizer::Deterministic, Regularizer::Stochastic] {
        let ckpt = trained_checkpoint(reg);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.bin");
        save_checkpoint(&path, &ckpt).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.config, ckpt.config);
        assert_eq!(back.opt, ckpt.opt);
        assert_eq!(back.network.input_shape(), ckpt.network.input_shape());
        for ((a, ka), (b, kb)) in back.network.params().iter().zip(ckpt.network.params()) {
            assert_eq!(ka, &kb);
            assert_eq!(a.shape(), b.shape());
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
        assert_eq!(encode_checkpoint(&back), encode_checkpoint(&ckpt));
        // No temporary file is left next to the checkpoint.
        let names: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names, ["state.bin"]);
    }
}

#[test]
fn checkpoint_keeps_batchnorm_running_statistics() {
    let ckpt = trained_checkpoint(Regularizer::Deterministic);
    let back = decode_checkpoint(&encode_checkpoint(&ckpt)).unwrap();
    let mut x = Tensor::from_fn(&[3, 2, 4, 4], |i| (i as f32 * 0.37).sin());
    let mut a = ckpt.network.clone();
    let mut b = back.network.clone();
    let ya = a.forward(&x, false).unwrap();
    let yb = b.forward(&x, false).unwrap();
    assert_eq!(ya.data(), yb.data());
    x.map_inplace(|v| v * 2.0);
    assert_eq!(a.forward(&x, false).unwrap().data(), b.forward(&x, false).unwrap().data());
}

#[test]
fn corrupt_magic_and_version_are_format_errors() {
    let bytes = encode_checkpoint(&trained_checkpoint(Regularizer::None));
    for pos in 0..5 {
        let mut m = bytes.clone();
        m[pos] ^= 0x40;
        match decode_checkpoint(&m) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, pos as u64),
            other => panic!("byte {pos}: expected a format error, got {other:?}"),
        }
    }
}

#[test]
fn truncated_checkpoints_are_rejected() {
    let bytes = encode_checkpoint(&trained_checkpoint(Regularizer::Stochastic));
    let step = (bytes.len() / 500).max(1);
    for len in (0..bytes.len()).step_by(step).chain([bytes.len() - 1]) {
        assert!(decode_checkpoint(&bytes[..len]).is_err(), "prefix {len} accepted");
    }
    let mut longer = bytes.clone();
    longer.push(0);
    assert!(decode_checkpoint(&longer).is_err());
}

#[test]
fn save_into_missing_directory_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("missing").join("c.bin");
    let ckpt = Checkpoint {
        config: TrainConfig::default(),
        network: mlp([1, 2, 2], &[3, 2], &mut Rng::seed_from(1)),
        opt: OptState::new(&mlp([1, 2, 2], &[3, 2], &mut Rng::seed_from(1)), &TrainConfig::default()),
    };
    assert!(matches!(save_checkpoint(&path, &ckpt), Err(Error::Io(_))));
    assert!(!path.exists());
}

proptest! {
    #[test]
    fn parsers_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..4000)) {
        let _ = parse_idx_images(&bytes);
        let _ = parse_idx_labels(&bytes);
        let _ = parse_cifar10(&bytes);
        let _ = decode_checkpoint(&bytes);
    }

    #[test]
    fn checkpoint_mutations_never_panic(pos in any::<prop::sample::Index>(), v in any::<u8>()) {
        let mut bytes = encode_checkpoint(&trained_checkpoint(Regularizer::Deterministic));
        let i = pos.index(bytes.len());
        bytes[i] = v;
        let _ = decode_checkpoint(&bytes);
    }
}

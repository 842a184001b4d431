mod common;

use common::fixtures::{random_flow, random_image, random_record, small_checkpoint};
use orchardseg::datasetio::{
    decode_checkpoint, decode_flo, decode_image, decode_manifest, decode_train_log, encode_checkpoint, encode_flo,
    encode_image, encode_manifest, encode_train_log, read_checkpoint, read_flo, read_image, read_manifest,
    write_checkpoint, write_flo, write_image, write_manifest, CHECKPOINT_VERSION,
};
use orchardseg::error::Error;
use orchardseg::grad::Tensor;
use orchardseg::seed;
use orchardseg::segnet::{infer, Checkpoint, InputMode, TrainLogEntry};
use proptest::prelude::*;
use rand::Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn images_are_byte_stable_after_first_quantization(
        w in 1usize..24, h in 1usize..24, color in any::<bool>(), s in any::<u64>()
    ) {
        let img = random_image(&mut seed::rng(s), w, h, if color { 3 } else { 1 });
        let first = encode_image(&img).unwrap();
        let back = decode_image(&first).unwrap();
        prop_assert_eq!(back.dims(), (w, h));
        let second = encode_image(&back).unwrap();
        prop_assert_eq!(&first, &second);
        prop_assert_eq!(decode_image(&second).unwrap(), back);
    }

    #[test]
    fn flo_round_trips_bit_exactly(w in 1usize..24, h in 1usize..24, s in any::<u64>()) {
        let flow = random_flow(&mut seed::rng(s), w, h);
        let first = encode_flo(&flow).unwrap();
        prop_assert_eq!(first.len(), 12 + 8 * w * h);
        let back = decode_flo(&first).unwrap();
        prop_assert_eq!(&back, &flow);
        prop_assert_eq!(encode_flo(&back).unwrap(), first);
    }

    #[test]
    fn manifests_round_trip_in_order(n in 0usize..40, s in any::<u64>()) {
        let mut rng = seed::rng(s);
        let records: Vec<_> = (0..n).map(|i| random_record(&mut rng, i)).collect();
        let text = encode_manifest(&records).unwrap();
        let back = decode_manifest(&text).unwrap();
        prop_assert_eq!(&back, &records);
        prop_assert_eq!(encode_manifest(&back).unwrap(), text);
    }

    #[test]
    fn checkpoints_round_trip(s in any::<u64>(), seen in any::<u64>(), best in proptest::option::of(any::<f32>()), six in any::<bool>()) {
        let mode = if six { InputMode::RgbPlusFlow } else { InputMode::RgbOnly };
        let ck = small_checkpoint(mode, s, seen, best);
        let first = encode_checkpoint(&ck).unwrap();
        let back = decode_checkpoint(&first).unwrap();
        prop_assert_eq!(encode_checkpoint(&back).unwrap(), first);
        prop_assert_eq!(back.images_seen, seen);
        prop_assert_eq!(back.best_val_loss.map(f32::to_bits), best.map(f32::to_bits));
        prop_assert_eq!(&back.generator, &ck.generator);
        prop_assert_eq!(&back.discriminator, &ck.discriminator);
    }
}

#[test]
fn image_quantization_extremes() {
    let img = orchardseg::raster::Image::<f32>::from_vec(2, 1, 3, vec![0.0, 1.0, 0.5, 1.0, 0.0, 0.25]).unwrap();
    let bytes = encode_image(&img).unwrap();
    assert!(bytes.starts_with(b"P6\n2 1\n255\n"));
    assert_eq!(&bytes[bytes.len() - 6..], &[0, 255, 128, 255, 0, 64]);
}

#[test]
fn four_hundred_record_manifest_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("manifest.jsonl");
    let mut rng = seed::rng(400);
    let records: Vec<_> = (0..400).map(|i| random_record(&mut rng, i)).collect();
    write_manifest(&path, &records).unwrap();
    let first = std::fs::read(&path).unwrap();
    let back = read_manifest(&path).unwrap();
    assert_eq!(back, records);
    write_manifest(&path, &back).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), first);
    // Only the manifest itself is left behind; temporaries are renamed away.
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
}

#[test]
fn manifest_rejects_duplicates_and_escaping_paths() {
    let mut rng = seed::rng(1);
    let a = random_record(&mut rng, 3);
    let mut b = random_record(&mut rng, 4);
    b.id = a.id.clone();
    assert!(matches!(
        encode_manifest(&[a.clone(), b.clone()]),
        Err(Error::Manifest { line: 2, .. })
    ));
    let text = format!(
        "{}{}",
        encode_manifest(&[a.clone()]).unwrap(),
        encode_manifest(&[b]).unwrap()
    );
    assert!(matches!(decode_manifest(&text), Err(Error::Manifest { line: 2, .. })));

    let mut escaping = a.clone();
    escaping.b.rgb = "../outside.ppm".into();
    assert!(encode_manifest(&[escaping]).is_err());
    let mut absolute = a;
    absolute.a.mask = "/etc/mask.pgm".into();
    assert!(encode_manifest(&[absolute]).is_err());
}

#[test]
fn files_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = seed::rng(9);
    let img = random_image(&mut rng, 13, 7, 3);
    let p = dir.path().join("x.ppm");
    write_image(&p, &img).unwrap();
    let back = read_image(&p).unwrap();
    write_image(&p, &back).unwrap();
    assert_eq!(read_image(&p).unwrap(), back);

    let flow = random_flow(&mut rng, 5, 9);
    let p = dir.path().join("x.flo");
    write_flo(&p, &flow).unwrap();
    assert_eq!(read_flo(&p).unwrap(), flow);
    assert!(read_flo(&dir.path().join("missing.flo")).is_err());
}

#[test]
fn restored_checkpoint_reproduces_inference_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("best.ck");
    for (mode, s) in [(InputMode::RgbOnly, 1), (InputMode::RgbPlusFlow, 2)] {
        let ck = Checkpoint {
            generator: orchardseg::segnet::Generator::new(orchardseg::segnet::GeneratorSpec::new(mode), s).unwrap(),
            discriminator: orchardseg::segnet::Discriminator::new(orchardseg::segnet::DiscriminatorSpec::new(mode), s)
                .unwrap(),
            images_seen: 1234,
            best_val_loss: Some(0.25),
        };
        write_checkpoint(&path, &ck).unwrap();
        let back = read_checkpoint(&path).unwrap();
        let mut rng = seed::rng(s);
        let data = (0..mode.channels() * 64 * 64)
            .map(|_| rng.random_range(0.0..1.0))
            .collect();
        let x = Tensor::new([1, mode.channels(), 64, 64], data).unwrap();
        let (a, b) = (infer(&ck, &x).unwrap(), infer(&back, &x).unwrap());
        assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}

#[test]
fn checkpoint_corruption_is_rejected_with_reasons() {
    let bytes = encode_checkpoint(&small_checkpoint(InputMode::RgbOnly, 5, 10, None)).unwrap();
    for cut in [0, 10, 20, bytes.len() / 2, bytes.len() - 1] {
        assert!(decode_checkpoint(&bytes[..cut]).is_err(), "cut at {cut}");
    }
    let mut longer = bytes.clone();
    longer.extend_from_slice(&[0; 4]);
    assert!(decode_checkpoint(&longer).is_err());

    let mut bumped = bytes.clone();
    bumped[8..12].copy_from_slice(&(CHECKPOINT_VERSION + 1).to_le_bytes());
    let msg = decode_checkpoint(&bumped).unwrap_err().to_string();
    assert!(msg.contains("version"), "{msg}");

    let mut magic = bytes;
    magic[0] = b'X';
    assert!(decode_checkpoint(&magic).is_err());
}

#[test]
fn train_log_round_trips() {
    let mut rng = seed::rng(3);
    let log: Vec<TrainLogEntry> = (1..=12)
        .map(|i| TrainLogEntry {
            images_seen: i * 100,
            val_l1: rng.random_range(0.0..1.0),
            gen_loss: rng.random_range(0.0..100.0),
            disc_loss: rng.random_range(0.0..1.0),
            saved: rng.random_bool(0.5),
        })
        .collect();
    let bytes = encode_train_log(&log).unwrap();
    let back = decode_train_log(&bytes).unwrap();
    assert_eq!(back, log);
    assert_eq!(encode_train_log(&back).unwrap(), bytes);
}

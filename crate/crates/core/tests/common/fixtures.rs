//! Randomized values for format round-trip tests.

use std::path::PathBuf;

use orchardseg::datasetio::{SampleRecord, Split, ViewFiles};
use orchardseg::raster::{FlowField, Image};
use orchardseg::segnet::{Checkpoint, Discriminator, DiscriminatorSpec, Generator, GeneratorSpec, InputMode};
use rand::Rng;

pub fn random_image(rng: &mut impl Rng, w: usize, h: usize, channels: usize) -> Image<f32> {
    let data = (0..w * h * channels).map(|_| rng.random_range(0.0..=1.0)).collect();
    Image::from_vec(w, h, channels, data).unwrap()
}

pub fn random_flow(rng: &mut impl Rng, w: usize, h: usize) -> FlowField<f32> {
    let n = w * h;
    let u = (0..n).map(|_| rng.random_range(-50.0..50.0)).collect();
    let v = (0..n).map(|_| rng.random_range(-50.0..50.0)).collect();
    let valid = (0..n).map(|_| rng.random_bool(0.9)).collect();
    FlowField::from_parts(w, h, u, v, valid).unwrap()
}

fn view(id: &str, tag: &str) -> ViewFiles {
    let f = |name: &str, ext: &str| PathBuf::from("samples").join(id).join(format!("{name}_{tag}.{ext}"));
    ViewFiles {
        rgb: f("rgb", "ppm"),
        mask: f("mask", "pgm"),
        flow: f("flow", "flo"),
        flow_color: f("flow_color", "ppm"),
        gt_flow: f("gt_flow", "flo"),
        gt_flow_color: f("gt_flow_color", "ppm"),
    }
}

pub fn random_record(rng: &mut impl Rng, index: usize) -> SampleRecord {
    let id = format!("{index:06}");
    SampleRecord {
        split: [Split::Train, Split::Val, Split::Test][rng.random_range(0..3)],
        seed: rng.random(),
        width: rng.random_range(16..256),
        height: rng.random_range(16..256),
        rows: rng.random_range(1..6),
        scene_digest: format!("{:016x}", rng.random::<u64>()),
        config_digest: format!("{:016x}", rng.random::<u64>()),
        a: view(&id, "a"),
        b: view(&id, "b"),
        id,
    }
}

/// Small networks keep randomized checkpoint round-trips cheap.
pub fn small_checkpoint(mode: InputMode, seed: u64, images_seen: u64, best: Option<f32>) -> Checkpoint {
    let gen = GeneratorSpec {
        input_channels: mode.channels(),
        ladder: vec![4, 8],
    };
    let disc = DiscriminatorSpec {
        condition_channels: mode.channels(),
        ladder: vec![4],
    };
    Checkpoint {
        generator: Generator::new(gen, seed).unwrap(),
        discriminator: Discriminator::new(disc, seed ^ 1).unwrap(),
        images_seen,
        best_val_loss: best,
    }
}

//! Per-sample dataset generation and loading of generated datasets as
//! network-ready samples.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::{FlowSource, RunConfig};
use crate::datasetio::{self, SampleRecord, Split, ViewFiles};
use crate::error::{Error, Result};
use crate::flowviz::colorize_flow;
use crate::optflow::estimate_flow;
use crate::raster::{FlowField, Image};
use crate::render::{ground_truth_flow, render_frame, render_mask};
use crate::scenegen::{generate_scene, sample_camera_pair, CameraFramePair, Intrinsics, Scene, SceneConfig};
use crate::seed;
use crate::segnet::{assemble_input, mask_tensor, InputMode, Sample};

/// One frame of a generated pair with everything derived from it.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedView {
    pub rgb: Image<f32>,
    pub mask: Image<f32>,
    /// Estimated flow towards the other frame.
    pub flow: FlowField<f32>,
    pub flow_color: Image<f32>,
    pub gt_flow: FlowField<f32>,
    pub gt_flow_color: Image<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedSample {
    pub index: u64,
    pub split: Split,
    pub seed: u64,
    pub scene: Scene<f64>,
    pub pair: CameraFramePair<f64>,
    pub a: GeneratedView,
    pub b: GeneratedView,
}

impl GeneratedSample {
    pub fn id(&self) -> String {
        sample_id(self.index)
    }
}

pub fn sample_id(index: u64) -> String {
    format!("{index:06}")
}

/// Split of the sample at `index`: train first, then val, then test.
pub fn split_for(cfg: &RunConfig, index: u64) -> Split {
    let i = index as usize;
    if i < cfg.data.train {
        Split::Train
    } else if i < cfg.data.train + cfg.data.val {
        Split::Val
    } else {
        Split::Test
    }
}

fn scene_config_for(cfg: &RunConfig, split: Split) -> SceneConfig {
    let mut scene = cfg.scene.clone();
    if split == Split::Test {
        scene.rows_range.lo = scene.rows_range.lo.max(cfg.data.test_min_rows);
    }
    scene
}

/// Scene and camera pair of sample `index`, independent of any other sample.
pub fn sample_scene(cfg: &RunConfig, index: u64) -> Result<(Scene<f64>, CameraFramePair<f64>)> {
    let split = split_for(cfg, index);
    let scene_cfg = scene_config_for(cfg, split);
    let scene = generate_scene::<f64>(&scene_cfg, seed::derive(cfg.seed, seed::stream::SCENE, index))?;
    let camera_seed = seed::derive(cfg.seed, seed::stream::CAMERA, index);
    let pair = sample_camera_pair(&scene, &scene_cfg, camera_seed);
    Ok((scene, pair))
}

/// Everything of one frame at the render resolution, shrunk by `k`.
fn view(
    rgb: &Image<f64>,
    other: &Image<f64>,
    mask: &Image<f64>,
    gt: &FlowField<f64>,
    cfg: &RunConfig,
) -> Result<GeneratedView> {
    let k = cfg.data.supersample;
    let flow = estimate_flow(rgb, other, &cfg.flow)?.box_downsample(k)?;
    let gt = gt.box_downsample(k)?;
    // Masks stay binary: a pixel is foreground when most of it is covered.
    let mask = mask.box_downsample(k)?.map(|c| if c >= 0.5 { 1.0 } else { 0.0 });
    Ok(GeneratedView {
        rgb: rgb.box_downsample(k)?.cast(),
        mask: mask.cast(),
        flow_color: colorize_flow(&flow, cfg.viz.normalization).cast(),
        flow: flow.cast(),
        gt_flow_color: colorize_flow(&gt, cfg.viz.normalization).cast(),
        gt_flow: gt.cast(),
    })
}

/// Renders both frames, masks and flows of sample `index`.
pub fn generate_sample(cfg: &RunConfig, index: u64) -> Result<GeneratedSample> {
    let (scene, pair) = sample_scene(cfg, index)?;
    let k = cfg.data.supersample;
    let native = &pair.intrinsics;
    let fine = CameraFramePair {
        intrinsics: Intrinsics::centered(native.width * k, native.height * k, native.focal_px * k as f64),
        ..pair
    };
    let intr = &fine.intrinsics;
    let frame_a = render_frame(&scene, &fine.pose_a, intr)?;
    let frame_b = render_frame(&scene, &fine.pose_b, intr)?;
    let mask_a = render_mask(&scene, &fine.pose_a, intr)?;
    let mask_b = render_mask(&scene, &fine.pose_b, intr)?;
    let gt_ab = ground_truth_flow(&frame_a.depth, &fine);
    let gt_ba = ground_truth_flow(&frame_b.depth, &fine.reversed());
    let a = view(&frame_a.rgb, &frame_b.rgb, &mask_a, &gt_ab, cfg)?;
    let b = view(&frame_b.rgb, &frame_a.rgb, &mask_b, &gt_ba, cfg)?;
    Ok(GeneratedSample {
        index,
        split: split_for(cfg, index),
        seed: seed::derive(cfg.seed, seed::stream::SCENE, index),
        scene,
        pair,
        a,
        b,
    })
}

fn view_files(id: &str, tag: &str) -> ViewFiles {
    let dir = PathBuf::from("samples").join(id);
    ViewFiles {
        rgb: dir.join(format!("rgb_{tag}.ppm")),
        mask: dir.join(format!("mask_{tag}.pgm")),
        flow: dir.join(format!("flow_{tag}.flo")),
        flow_color: dir.join(format!("flow_color_{tag}.ppm")),
        gt_flow: dir.join(format!("gt_flow_{tag}.flo")),
        gt_flow_color: dir.join(format!("gt_flow_color_{tag}.ppm")),
    }
}

fn write_view(root: &Path, files: &ViewFiles, v: &GeneratedView) -> Result<()> {
    datasetio::write_image(&root.join(&files.rgb), &v.rgb)?;
    datasetio::write_image(&root.join(&files.mask), &v.mask)?;
    datasetio::write_flo(&root.join(&files.flow), &v.flow)?;
    datasetio::write_image(&root.join(&files.flow_color), &v.flow_color)?;
    datasetio::write_flo(&root.join(&files.gt_flow), &v.gt_flow)?;
    datasetio::write_image(&root.join(&files.gt_flow_color), &v.gt_flow_color)
}

/// Writes the sample's files under `root` and returns its manifest record.
pub fn write_sample(root: &Path, cfg: &RunConfig, s: &GeneratedSample) -> Result<SampleRecord> {
    let id = s.id();
    let record = SampleRecord {
        id: id.clone(),
        split: s.split,
        seed: s.seed,
        width: s.a.rgb.width(),
        height: s.a.rgb.height(),
        rows: s.scene.rows.len(),
        scene_digest: s.scene.digest(),
        config_digest: cfg.data_digest(),
        a: view_files(&id, "a"),
        b: view_files(&id, "b"),
    };
    write_view(root, &record.a, &s.a)?;
    write_view(root, &record.b, &s.b)?;
    Ok(record)
}

/// Generates samples `0..count` in parallel under `root` and writes the
/// manifest last, so a manifest only ever lists complete samples. Splits
/// follow [`split_for`]; `count` is normally `cfg.data.total()`.
/// `on_sample` sees each record as soon as its files are on disk.
pub fn generate_dataset(
    root: &Path,
    cfg: &RunConfig,
    count: u64,
    on_sample: &(dyn Fn(&SampleRecord) + Sync),
) -> Result<Dataset> {
    cfg.validate()?;
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let records = (0..count)
        .into_par_iter()
        .map(|index| {
            let record = write_sample(root, cfg, &generate_sample(cfg, index)?)?;
            on_sample(&record);
            Ok(record)
        })
        .collect::<Result<Vec<_>>>()?;
    datasetio::write_manifest(&root.join(datasetio::MANIFEST_FILE), &records)?;
    Ok(Dataset {
        root: root.to_path_buf(),
        records,
    })
}

/// Which frames of each record become samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Views {
    /// Frame A only (evaluation).
    First,
    /// Both frames, each with its own flow (training).
    Both,
}

/// Options for turning manifest records into network samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LoadOptions {
    pub mode: InputMode,
    pub flow_source: FlowSource,
    pub views: Views,
}

fn load_view(root: &Path, id: String, files: &ViewFiles, opts: &LoadOptions) -> Result<Sample> {
    let rgb = datasetio::read_image(&root.join(&files.rgb))?;
    let mask = datasetio::read_image(&root.join(&files.mask))?;
    let flow = match opts.mode {
        InputMode::RgbOnly => None,
        InputMode::RgbPlusFlow => Some(datasetio::read_image(&root.join(match opts.flow_source {
            FlowSource::Estimated => &files.flow_color,
            FlowSource::GroundTruth => &files.gt_flow_color,
        }))?),
    };
    if mask.dims() != rgb.dims() {
        return Err(Error::Shape(format!("sample `{id}`: mask and rgb sizes differ")));
    }
    Ok(Sample {
        input: assemble_input(&rgb, flow.as_ref(), opts.mode)?,
        target: mask_tensor(&mask)?,
        id,
    })
}

/// Loads records as samples, in manifest order.
pub fn load_samples(root: &Path, records: &[&SampleRecord], opts: &LoadOptions) -> Result<Vec<Sample>> {
    let mut out = Vec::with_capacity(records.len() * 2);
    for r in records {
        match opts.views {
            Views::First => out.push(load_view(root, r.id.clone(), &r.a, opts)?),
            Views::Both => {
                out.push(load_view(root, format!("{}_a", r.id), &r.a, opts)?);
                out.push(load_view(root, format!("{}_b", r.id), &r.b, opts)?);
            }
        }
    }
    Ok(out)
}

/// A generated dataset on disk.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub records: Vec<SampleRecord>,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        Ok(Self {
            root: root.to_path_buf(),
            records: datasetio::read_manifest(&root.join(datasetio::MANIFEST_FILE))?,
        })
    }

    pub fn split(&self, split: Split) -> Vec<&SampleRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    /// Training samples use both frames; validation and test use frame A.
    pub fn load(&self, split: Split, mode: InputMode, flow_source: FlowSource) -> Result<Vec<Sample>> {
        let views = if split == Split::Train {
            Views::Both
        } else {
            Views::First
        };
        load_samples(
            &self.root,
            &self.split(split),
            &LoadOptions {
                mode,
                flow_source,
                views,
            },
        )
    }
}

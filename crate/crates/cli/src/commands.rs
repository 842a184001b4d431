use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use anyhow::{bail, Context, Result};
use orchardseg::config::RunConfig;
use orchardseg::datasetio::{self, Split};
use orchardseg::eval::{self, Aggregate, Metric, MetricsTable, OraclePredictor};
use orchardseg::flowviz::colorize_flow;
use orchardseg::optflow::estimate_flow;
use orchardseg::pipeline::{self, Dataset};
use orchardseg::render::render_frame;
use orchardseg::segnet::{self, Checkpoint, DiscriminatorSpec, GeneratorSpec, InputMode, TrainHooks, TrainLogEntry};

use crate::{Cli, Command, CompareArgs, EvalArgs, FlowArgs, GenArgs, RenderArgs, TrainArgs};

/// Copy of the effective configuration written next to every output.
const CONFIG_FILE: &str = "config.toml";

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.train.seed = seed;
    }
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker threads")?;
    }
    match cli.command {
        Command::Gen(args) => gen(cfg, args),
        Command::Flow(args) => flow(cfg, args),
        Command::Train(args) => train(cfg, args),
        Command::Eval(args) => evaluate(cfg, args),
        Command::Compare(args) => compare(args),
        Command::Render(args) => render(cfg, args),
    }
}

fn write_config(dir: &Path, cfg: &RunConfig) -> Result<()> {
    datasetio::write_atomic(&dir.join(CONFIG_FILE), cfg.to_toml().as_bytes())?;
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn gen(mut cfg: RunConfig, args: GenArgs) -> Result<()> {
    if let Some(n) = args.train {
        cfg.data.train = n;
    }
    if let Some(n) = args.val {
        cfg.data.val = n;
    }
    if let Some(n) = args.test {
        cfg.data.test = n;
    }
    if let Some(size) = args.size {
        cfg.scene = cfg.scene.with_image_size(size, size);
    }
    if let Some(k) = args.supersample {
        cfg.data.supersample = k;
    }
    cfg.validate()?;
    let count = args.count.unwrap_or(cfg.data.total() as u64);
    create_dir(&args.out)?;
    write_config(&args.out, &cfg)?;
    let done = AtomicUsize::new(0);
    let ds = pipeline::generate_dataset(&args.out, &cfg, count, &|record| {
        let n = done.fetch_add(1, Ordering::Relaxed) + 1;
        eprintln!("[{n}/{count}] {} ({:?})", record.id, record.split);
    })?;
    println!("wrote {} samples to {}", ds.records.len(), args.out.display());
    Ok(())
}

fn flow(mut cfg: RunConfig, args: FlowArgs) -> Result<()> {
    if let Some(alpha) = args.alpha {
        cfg.flow.alpha = alpha;
    }
    if let Some(levels) = args.levels {
        cfg.flow.pyramid_levels = levels;
    }
    if let Some(n) = args.iterations {
        cfg.flow.iterations_per_level = n;
    }
    cfg.validate()?;
    let a = datasetio::read_image(&args.img_a)?;
    let b = datasetio::read_image(&args.img_b)?;
    let field = estimate_flow(&a.cast::<f64>(), &b.cast::<f64>(), &cfg.flow)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    datasetio::write_flo(&args.out, &field.cast())?;
    let color_path = args.out.with_extension("ppm");
    datasetio::write_image(&color_path, &colorize_flow(&field, cfg.viz.normalization).cast())?;
    datasetio::write_atomic(&args.out.with_extension("toml"), cfg.to_toml().as_bytes())?;
    let (w, h) = field.dims();
    let mean = field.u().iter().zip(field.v()).map(|(u, v)| u.hypot(*v)).sum::<f64>() / (w * h) as f64;
    println!(
        "{w}x{h} flow, mean magnitude {mean:.4} px -> {}, {}",
        args.out.display(),
        color_path.display()
    );
    Ok(())
}

/// Persists progress as training goes, so an interrupted run leaves a valid
/// `last.ckpt` (and `best.ckpt` once something was saved) behind.
struct DiskHooks {
    out: PathBuf,
    log: Vec<TrainLogEntry>,
}

impl TrainHooks for DiskHooks {
    fn on_evaluation(&mut self, entry: &TrainLogEntry, snapshot: &Checkpoint) -> orchardseg::Result<()> {
        self.log.push(entry.clone());
        datasetio::write_checkpoint(&self.out.join("last.ckpt"), snapshot)?;
        if entry.saved {
            datasetio::write_checkpoint(&self.out.join("best.ckpt"), snapshot)?;
        }
        datasetio::write_atomic(
            &self.out.join("train_log.csv"),
            &datasetio::encode_train_log(&self.log)?,
        )?;
        eprintln!(
            "[{}] val L1 {:.4}  G {:.4}  D {:.4}{}",
            entry.images_seen,
            entry.val_l1,
            entry.gen_loss,
            entry.disc_loss,
            if entry.saved { "  (best)" } else { "" }
        );
        Ok(())
    }
}

fn train(mut cfg: RunConfig, args: TrainArgs) -> Result<()> {
    let p = &mut cfg.train;
    if let Some(mode) = args.mode {
        p.input_mode = mode;
    }
    if let Some(n) = args.max_images {
        p.max_images = n;
    }
    if let Some(n) = args.val_every {
        p.val_every = n;
    }
    if let Some(n) = args.batch_size {
        p.batch_size = n;
    }
    if let Some(lr) = args.lr {
        p.lr = lr;
    }
    if let Some(l) = args.lambda_l1 {
        p.lambda_l1 = l;
    }
    if let Some(src) = args.flow_source {
        cfg.data.flow_source = src;
    }
    cfg.validate()?;
    let mode = cfg.train.input_mode;
    let ds = Dataset::open(&args.data)?;
    let train_set = ds.load(Split::Train, mode, cfg.data.flow_source)?;
    let val_set = ds.load(Split::Val, mode, cfg.data.flow_source)?;
    eprintln!(
        "training on {} images, validating on {}",
        train_set.len(),
        val_set.len()
    );
    create_dir(&args.out)?;
    write_config(&args.out, &cfg)?;
    let mut hooks = DiskHooks {
        out: args.out.clone(),
        log: Vec::new(),
    };
    let outcome = segnet::train_with(
        &train_set,
        &val_set,
        &GeneratorSpec::new(mode),
        &DiscriminatorSpec::new(mode),
        &cfg.train,
        &mut hooks,
    )?;
    datasetio::write_checkpoint(&args.out.join("last.ckpt"), &outcome.last)?;
    datasetio::write_checkpoint(&args.out.join("best.ckpt"), &outcome.best)?;
    println!(
        "best validation L1 {:.4} after {} images -> {}",
        outcome.best.best_val_loss.unwrap_or(f32::NAN),
        outcome.best.images_seen,
        args.out.display()
    );
    Ok(())
}

fn summary_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map_or_else(|| "metrics".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}_summary.csv"))
}

fn write_summary(path: &Path, table: &MetricsTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["metric", "mean", "std", "n"])?;
    for m in Metric::ALL {
        let Aggregate { mean, std, n } = table.aggregate(m);
        w.write_record([m.name().to_string(), mean.to_string(), std.to_string(), n.to_string()])?;
    }
    datasetio::write_atomic(path, &w.into_inner()?)?;
    Ok(())
}

fn evaluate(mut cfg: RunConfig, args: EvalArgs) -> Result<()> {
    if let Some(src) = args.flow_source {
        cfg.data.flow_source = src;
    }
    let ds = Dataset::open(&args.data)?;
    let table = match &args.checkpoint {
        Some(path) => {
            let ck = datasetio::read_checkpoint(path)?;
            let mode = match ck.input_channels() {
                3 => InputMode::RgbOnly,
                6 => InputMode::RgbPlusFlow,
                c => bail!("checkpoint expects {c} input channels"),
            };
            let samples = ds.load(args.split, mode, cfg.data.flow_source)?;
            eval::evaluate_dataset(&ck, &samples, args.threshold)?
        }
        None => {
            let samples = ds.load(args.split, InputMode::RgbOnly, cfg.data.flow_source)?;
            eval::evaluate_dataset(&OraclePredictor, &samples, args.threshold)?
        }
    };
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let mut bytes = Vec::new();
    table.write_csv(&mut bytes)?;
    datasetio::write_atomic(&args.out, &bytes)?;
    let summary = summary_path(&args.out);
    write_summary(&summary, &table)?;
    for m in Metric::ALL {
        let a = table.aggregate(m);
        println!("{:<4} mean {:.4}  std {:.4}  n {}", m.name(), a.mean, a.std, a.n);
    }
    Ok(())
}

fn compare(args: CompareArgs) -> Result<()> {
    let open = |p: &Path| -> Result<MetricsTable> {
        let file = File::open(p).with_context(|| format!("opening {}", p.display()))?;
        MetricsTable::read_csv(file).with_context(|| format!("reading {}", p.display()))
    };
    let rows = eval::compare_tables(&open(&args.metrics_a)?, &open(&args.metrics_b)?)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let file = File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    eval::write_comparison_csv(&rows, BufWriter::new(file))?;
    for r in &rows {
        println!(
            "{:<4} {:.4} vs {:.4}  t {:.3}  nu {:.1}  p {:.4}",
            r.metric, r.mean_a, r.mean_b, r.t, r.nu, r.p
        );
    }
    Ok(())
}

fn render(mut cfg: RunConfig, args: RenderArgs) -> Result<()> {
    if let Some(size) = args.size {
        cfg.scene = cfg.scene.with_image_size(size, size);
    }
    cfg.validate()?;
    let sample = pipeline::generate_sample(&cfg, args.index)?;
    create_dir(&args.out)?;
    let record = pipeline::write_sample(&args.out, &cfg, &sample)?;
    let frame = render_frame(&sample.scene, &sample.pair.pose_a, &sample.pair.intrinsics)?;
    let far = frame
        .depth
        .data()
        .iter()
        .copied()
        .filter(|d| d.is_finite())
        .fold(0.0, f64::max);
    let depth_path = args.out.join("samples").join(&record.id).join("depth_a.pgm");
    datasetio::write_image(&depth_path, &frame.depth.to_image(0.0, far.max(1e-6)).cast())?;
    datasetio::write_atomic(
        &args.out.join("scene.json"),
        serde_json::to_string_pretty(&sample.scene)?.as_bytes(),
    )?;
    write_config(&args.out, &cfg)?;
    println!(
        "sample {} ({:?}, {} rows) -> {}",
        record.id,
        record.split,
        sample.scene.rows.len(),
        args.out.display()
    );
    Ok(())
}

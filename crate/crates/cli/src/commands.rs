use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use aquafeat_core::dataset::{
    read_annotations, sample_frames, split_dataset, unify_labels, write_annotations, DatasetIndex,
    Split,
};
use aquafeat_core::eval::{fps_bench, MetricReport, MAP_CONF_THRESHOLD};
use aquafeat_core::image::{read_ppm, write_ppm};
use aquafeat_core::synthetic::{scene, SceneConfig};
use aquafeat_core::train::{load_checkpoint, train as train_loop, Sample};
use aquafeat_core::{Enhancer, Error, Model};
use clap::Args;

use crate::config::Settings;
use crate::{CliError, ConfigArgs};

type Result<T> = std::result::Result<T, CliError>;

/// Defaults, then `--config`, then `--set`, then dedicated flags. The
/// resolved settings are echoed to stderr.
fn resolve(cfg: &ConfigArgs, flags: &[(&str, Option<String>)]) -> Result<Settings> {
    let mut s = Settings::default();
    if let Some(path) = &cfg.config {
        s.apply_file(path)?;
    }
    for kv in &cfg.set {
        s.assign(kv)?;
    }
    for (k, v) in flags {
        if let Some(v) = v {
            s.set(k, v)?;
        }
    }
    eprint!("# resolved config\n{s}");
    Ok(s)
}

fn parse_split(s: &str) -> Result<Option<Split>> {
    if s == "all" {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|e| CliError::Usage(format!("--split: {e} (expected train, test, val or all)")))
}

fn check_files(index: &DatasetIndex) -> Result<()> {
    let missing = index.missing_files();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::MissingFiles(missing).into())
    }
}

fn load_samples(manifest: &Path, split: Option<Split>) -> Result<Vec<Sample>> {
    let mut index = DatasetIndex::load(manifest)?;
    if let Some(split) = split {
        index = index.split(split);
    }
    check_files(&index)?;
    index
        .records
        .iter()
        .map(|r| {
            Ok(Sample {
                image: read_ppm(&r.image)?,
                annotations: unify_labels(&read_annotations(&r.annotations)?),
            })
        })
        .collect()
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Core(Error::Io {
        path: path.into(),
        source: e,
    })
}

fn load_model(
    settings: &Settings,
    ckpt: Option<&Path>,
) -> Result<(Model, aquafeat_core::net::ParamStore<f32>)> {
    let model = Model::new(settings.model()?)?;
    let store = match ckpt {
        Some(path) => load_checkpoint(path, &model.layout)?.0,
        None => model.init(settings.get("seed")?),
    };
    Ok((model, store))
}

#[derive(Args, Debug)]
pub struct DatasetArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Input manifest: image, annotations, frame, split (tab-separated).
    #[arg(long)]
    manifest: PathBuf,
    /// Output manifest.
    #[arg(long)]
    out: PathBuf,
    /// Keep one annotated frame every this many frames, per video.
    #[arg(long)]
    stride: Option<u64>,
    /// Split fractions train,test,val.
    #[arg(long)]
    splits: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Where single-class label files are written (default: `labels/` beside --out).
    #[arg(long)]
    labels: Option<PathBuf>,
}

pub fn dataset(a: DatasetArgs) -> Result<()> {
    let s = resolve(
        &a.cfg,
        &[
            ("stride", a.stride.map(|v| v.to_string())),
            ("splits", a.splits.clone()),
            ("seed", a.seed.map(|v| v.to_string())),
        ],
    )?;
    let index = DatasetIndex::load(&a.manifest)?;
    check_files(&index)?;
    let mut sampled = sample_frames(&index, s.get("stride")?)?;
    let labels = a
        .labels
        .clone()
        .unwrap_or_else(|| a.out.parent().unwrap_or(Path::new("")).join("labels"));
    fs::create_dir_all(&labels).map_err(|e| io_err(&labels, e))?;
    let labels = std::path::absolute(&labels).map_err(|e| io_err(&labels, e))?;
    for (i, r) in sampled.records.iter_mut().enumerate() {
        let unified = unify_labels(&read_annotations(&r.annotations)?);
        let name = r
            .annotations
            .file_name()
            .map_or_else(|| "labels.txt".into(), |n| n.to_string_lossy().into_owned());
        let dst = labels.join(format!("{i:06}_{name}"));
        write_annotations(&unified, &dst)?;
        r.annotations = dst;
        r.image = std::path::absolute(&r.image).map_err(|e| io_err(&r.image, e))?;
    }
    let split = split_dataset(&sampled, s.splits()?, s.get("seed")?);
    split.save(&a.out)?;
    println!(
        "records={} train={} test={} val={}",
        split.len(),
        split.count(Split::Train),
        split.count(Split::Test),
        split.count(Split::Val)
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Dataset manifest.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint path; the step log goes to the same path plus `.log`.
    #[arg(long)]
    out: PathBuf,
    /// Split to train on (train, test, val or all).
    #[arg(long, default_value = "train")]
    split: String,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Bypass the enhancer and train only the detection head.
    #[arg(long)]
    head_only: bool,
}

pub fn train(a: TrainArgs) -> Result<()> {
    let s = resolve(
        &a.cfg,
        &[
            ("steps", a.steps.map(|v| v.to_string())),
            ("seed", a.seed.map(|v| v.to_string())),
            ("lr", a.lr.map(|v| v.to_string())),
            ("batch_size", a.batch_size.map(|v| v.to_string())),
            ("train_enhancer", a.head_only.then(|| "false".to_string())),
        ],
    )?;
    let model = Model::new(s.model()?)?;
    let mut cfg = s.train()?;
    cfg.checkpoint = Some(a.out.clone());
    let samples = load_samples(&a.data, parse_split(&a.split)?)?;
    if samples.is_empty() && cfg.steps > 0 {
        return Err(CliError::Core(Error::InvalidArgument(format!(
            "split {} of {} has no records",
            a.split,
            a.data.display()
        ))));
    }
    let mut log_path = a.out.clone().into_os_string();
    log_path.push(".log");
    let log_path = PathBuf::from(log_path);
    let file = File::create(&log_path).map_err(|e| io_err(&log_path, e))?;
    let mut log = BufWriter::new(file);
    let mut write_err = None;
    let outcome = train_loop(&model, &cfg, &samples, |line| {
        println!("{line}");
        if let Err(e) = writeln!(log, "{line}") {
            write_err.get_or_insert(e);
        }
    });
    if let Some(e) = write_err {
        return Err(io_err(&log_path, e));
    }
    log.flush().map_err(|e| io_err(&log_path, e))?;
    outcome?;
    println!("checkpoint={}", a.out.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct EnhanceArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    ckpt: PathBuf,
    /// A PPM file or a directory of PPM files.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output file, or directory when --in is a directory.
    #[arg(long)]
    out: PathBuf,
}

pub fn enhance(a: EnhanceArgs) -> Result<()> {
    let s = resolve(&a.cfg, &[])?;
    let (model, store) = load_model(&s, Some(&a.ckpt))?;
    let jobs: Vec<(PathBuf, PathBuf)> = if a.input.is_dir() {
        let mut names: Vec<PathBuf> = fs::read_dir(&a.input)
            .map_err(|e| io_err(&a.input, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("ppm")))
            .collect();
        names.sort();
        fs::create_dir_all(&a.out).map_err(|e| io_err(&a.out, e))?;
        names
            .into_iter()
            .map(|p| {
                let dst = a
                    .out
                    .join(p.file_name().expect("read_dir entries have names"));
                (p, dst)
            })
            .collect()
    } else if a.out.is_dir() {
        let name = a.input.file_name().unwrap_or_default();
        vec![(a.input.clone(), a.out.join(name))]
    } else {
        vec![(a.input.clone(), a.out.clone())]
    };
    for (src, dst) in &jobs {
        let image = read_ppm(src)?;
        write_ppm(&model.enhance(&store, &image)?, dst)?;
    }
    println!("enhanced={}", jobs.len());
    Ok(())
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    ckpt: PathBuf,
    /// Dataset manifest.
    #[arg(long)]
    data: PathBuf,
    /// Split to evaluate (train, test, val or all).
    #[arg(long, default_value = "test")]
    split: String,
    /// Confidence cut for precision and recall.
    #[arg(long)]
    conf: Option<f64>,
    /// IoU above which NMS suppresses a box.
    #[arg(long)]
    nms: Option<f64>,
    /// Also write the report here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run the head on raw images, skipping the enhancer.
    #[arg(long)]
    no_enhance: bool,
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let s = resolve(
        &a.cfg,
        &[
            ("conf", a.conf.map(|v| v.to_string())),
            ("nms", a.nms.map(|v| v.to_string())),
        ],
    )?;
    let (conf, nms): (f64, f64) = (s.get("conf")?, s.get("nms")?);
    if !(0.0..=1.0).contains(&conf) || !(0.0..=1.0).contains(&nms) {
        return Err(CliError::Usage(
            "--conf and --nms must lie in [0, 1]".into(),
        ));
    }
    let (model, store) = load_model(&s, Some(&a.ckpt))?;
    let samples = load_samples(&a.data, parse_split(&a.split)?)?;
    let enhancer = if a.no_enhance {
        Enhancer::Bypassed
    } else {
        Enhancer::On
    };
    let start = Instant::now();
    let dets = samples
        .iter()
        .map(|x| model.detect(&store, &x.image, enhancer, MAP_CONF_THRESHOLD, nms))
        .collect::<aquafeat_core::Result<Vec<_>>>()?;
    let secs = start.elapsed().as_secs_f64();
    let fps = if samples.is_empty() {
        0.0
    } else {
        samples.len() as f64 / secs.max(f64::MIN_POSITIVE)
    };
    let gts: Vec<_> = samples
        .iter()
        .map(|x| x.annotations.iter().map(|a| a.bbox()).collect())
        .collect();
    let report = MetricReport::compute(&dets, &gts, conf, fps)?;
    if let Some(w) = &report.warning {
        eprintln!("warning: {w}");
    }
    let text = report.to_key_value();
    print!("{text}");
    if let Some(out) = &a.out {
        fs::write(out, &text).map_err(|e| io_err(out, e))?;
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Checkpoint; without one the seeded initialization is timed.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Side length of the square test image.
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 100)]
    iters: usize,
    #[arg(long, default_value_t = 10)]
    warmup: usize,
    #[arg(long, default_value_t = 5)]
    reps: usize,
}

pub fn bench(a: BenchArgs) -> Result<()> {
    let s = resolve(&a.cfg, &[])?;
    let (model, store) = load_model(&s, a.ckpt.as_deref())?;
    if a.size < 8 {
        return Err(CliError::Usage("--size must be at least 8".into()));
    }
    let image = scene(
        &SceneConfig {
            height: a.size,
            width: a.size,
            ..SceneConfig::default()
        },
        0,
    )
    .image;
    let nms: f64 = s.get("nms")?;
    let report = fps_bench(a.warmup, a.iters, a.reps, || {
        model
            .detect(&store, &image, Enhancer::On, MAP_CONF_THRESHOLD, nms)
            .map(|_| ())
    })?;
    if report.low_confidence {
        eprintln!("warning: fewer than 10 timed iterations; fps is noisy");
    }
    print!("size={}\n{}", a.size, report.to_key_value());
    Ok(())
}

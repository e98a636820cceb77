//! `bcam`: data generation, training, evaluation and map export.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use log::info;

use bcam::data::pnm::{map_to_pgm, mask_to_pgm};
use bcam::data::{generate_dataset, load_split, DatasetConfig, Manifest, Sample, Split};
use bcam::metrics::{upsample_bilinear, ThresholdGrid};
use bcam::model::{checkpoint, Model, Variant};
use bcam::trainer::{evaluate, toy_grad_check, train, Evaluation, TrainConfig};

const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser, Debug)]
#[command(
    name = "bcam",
    version,
    about = "Background-aware CAM for weakly supervised localization"
)]
struct Cli {
    /// Worker threads for data generation and evaluation.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset.
    GenData(GenDataCmd),
    /// Train one variant.
    Train(TrainCmd),
    /// Evaluate a checkpoint and write the metric report.
    Eval(EvalCmd),
    /// Write the IoU-vs-threshold and precision-recall curves of a checkpoint.
    Sweep(EvalCmd),
    /// Finite-difference check of the loss gradients on a toy head.
    Gradcheck(GradcheckCmd),
    /// Write per-image score maps, masks and prior strengths as PGM.
    ExportMaps(ExportCmd),
    /// Train and evaluate cam, ours1, ours2 and ours3 side by side.
    Compare(CompareCmd),
}

#[derive(Args, Debug)]
struct GenDataCmd {
    #[arg(long)]
    out: PathBuf,
    /// Key = value file applied before the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    data: DataFlags,
}

#[derive(Args, Debug, Default)]
struct DataFlags {
    #[arg(long)]
    num_classes: Option<usize>,
    #[arg(long)]
    image_size: Option<usize>,
    #[arg(long)]
    train_samples: Option<usize>,
    #[arg(long)]
    val_samples: Option<usize>,
    #[arg(long)]
    test_samples: Option<usize>,
    #[arg(long)]
    p_confound: Option<f64>,
    #[arg(long)]
    multi_label: Option<bool>,
    #[arg(long)]
    max_objects_per_image: Option<usize>,
    #[arg(long)]
    noisy_labels: Option<bool>,
    #[arg(long)]
    seed: Option<u64>,
}

impl DataFlags {
    fn pairs(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        push(&mut out, "num_classes", &self.num_classes);
        push(&mut out, "image_size", &self.image_size);
        push(&mut out, "train_samples", &self.train_samples);
        push(&mut out, "val_samples", &self.val_samples);
        push(&mut out, "test_samples", &self.test_samples);
        push(&mut out, "p_confound", &self.p_confound);
        push(&mut out, "multi_label", &self.multi_label);
        push(
            &mut out,
            "max_objects_per_image",
            &self.max_objects_per_image,
        );
        push(&mut out, "noisy_labels", &self.noisy_labels);
        push(&mut out, "seed", &self.seed);
        out
    }
}

#[derive(Args, Debug, Default)]
struct TrainFlags {
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Comma-separated epoch indices.
    #[arg(long)]
    lr_decay_epochs: Option<String>,
    #[arg(long)]
    lr_decay_factor: Option<f64>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    lambda3: Option<f64>,
    #[arg(long)]
    lambda4: Option<f64>,
    #[arg(long)]
    heads: Option<usize>,
    /// Comma-separated channel widths, one per stage.
    #[arg(long)]
    backbone_channels: Option<String>,
    #[arg(long)]
    blocks_per_stage: Option<usize>,
    #[arg(long)]
    downsample_last_stage: Option<bool>,
    #[arg(long)]
    horizontal_flip: Option<bool>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    checkpoint_path: Option<PathBuf>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    threshold_points: Option<usize>,
}

impl TrainFlags {
    fn pairs(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        push(&mut out, "variant", &self.variant);
        push(&mut out, "epochs", &self.epochs);
        push(&mut out, "batch_size", &self.batch_size);
        push(&mut out, "learning_rate", &self.learning_rate);
        push(&mut out, "momentum", &self.momentum);
        push(&mut out, "weight_decay", &self.weight_decay);
        push(&mut out, "lr_decay_epochs", &self.lr_decay_epochs);
        push(&mut out, "lr_decay_factor", &self.lr_decay_factor);
        push(&mut out, "lambda1", &self.lambda1);
        push(&mut out, "lambda2", &self.lambda2);
        push(&mut out, "lambda3", &self.lambda3);
        push(&mut out, "lambda4", &self.lambda4);
        push(&mut out, "heads", &self.heads);
        push(&mut out, "backbone_channels", &self.backbone_channels);
        push(&mut out, "blocks_per_stage", &self.blocks_per_stage);
        push(
            &mut out,
            "downsample_last_stage",
            &self.downsample_last_stage,
        );
        push(&mut out, "horizontal_flip", &self.horizontal_flip);
        push(&mut out, "seed", &self.seed);
        if let Some(p) = &self.checkpoint_path {
            out.push(("checkpoint_path", p.display().to_string()));
        }
        push(&mut out, "eval_every", &self.eval_every);
        push(&mut out, "threshold_points", &self.threshold_points);
        out
    }
}

fn push<T: ToString>(out: &mut Vec<(&'static str, String)>, key: &'static str, v: &Option<T>) {
    if let Some(v) = v {
        out.push((key, v.to_string()));
    }
}

#[derive(Args, Debug)]
struct TrainCmd {
    /// Dataset directory written by `gen-data`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args, Debug)]
struct EvalCmd {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// train, val or test.
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, default_value_t = 201)]
    threshold_points: usize,
}

#[derive(Args, Debug)]
struct GradcheckCmd {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    eps: f64,
}

#[derive(Args, Debug)]
struct ExportCmd {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Number of images to export.
    #[arg(long, default_value_t = 16)]
    limit: usize,
}

#[derive(Args, Debug)]
struct CompareCmd {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    train: TrainFlags,
}

/// A failure to be reported with the given exit status.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn usage(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: 1,
        error: error.into(),
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Self { code: 2, error }
    }
}

impl From<bcam::Error> for Failure {
    fn from(error: bcam::Error) -> Self {
        Self {
            code: 2,
            error: error.into(),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(usage(anyhow!("--jobs must be positive")));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::GenData(c) => gen_data(c),
        Command::Train(c) => train_cmd(c),
        Command::Eval(c) => eval_cmd(c, false),
        Command::Sweep(c) => eval_cmd(c, true),
        Command::Gradcheck(c) => gradcheck(c),
        Command::ExportMaps(c) => export_maps(c),
        Command::Compare(c) => compare(c),
    }
}

fn read_config(path: &Option<PathBuf>) -> Result<String, Failure> {
    match path {
        Some(p) => std::fs::read_to_string(p)
            .with_context(|| format!("reading config {}", p.display()))
            .map_err(usage),
        None => Ok(String::new()),
    }
}

fn resolve_data(file: &Option<PathBuf>, flags: &DataFlags) -> Result<DatasetConfig, Failure> {
    let mut c =
        DatasetConfig::from_kv(&read_config(file)?, DatasetConfig::default()).map_err(usage)?;
    for (k, v) in flags.pairs() {
        c.set(k, &v).map_err(usage)?;
    }
    c.validate().map_err(usage)?;
    Ok(c)
}

fn resolve_train(file: &Option<PathBuf>, flags: &TrainFlags) -> Result<TrainConfig, Failure> {
    let mut c = TrainConfig::from_kv(&read_config(file)?, TrainConfig::default()).map_err(usage)?;
    for (k, v) in flags.pairs() {
        c.set(k, &v).map_err(usage)?;
    }
    c.validate().map_err(usage)?;
    Ok(c)
}

fn print_config(title: &str, text: &str) {
    println!("# {title}");
    print!("{text}");
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn parse_split(name: &str) -> Result<Split, Failure> {
    Split::from_name(name)
        .ok_or_else(|| usage(anyhow!("unknown split `{name}` (train, val or test)")))
}

fn load(data: &Path, split: Split) -> Result<Vec<Sample>, Failure> {
    let path = data.join(Manifest::FILE_NAME);
    let manifest = Manifest::read(&path).with_context(|| format!("reading {}", path.display()))?;
    let samples = load_split(data, &manifest, split)
        .with_context(|| format!("loading split `{}` of {}", split.name(), data.display()))?;
    if samples.is_empty() && split != Split::Val {
        return Err(anyhow!("split `{}` of {} is empty", split.name(), data.display()).into());
    }
    Ok(samples)
}

fn gen_data(c: GenDataCmd) -> Result<(), Failure> {
    let config = resolve_data(&c.config, &c.data)?;
    print_config("dataset", &config.to_kv());
    create_dir(&c.out)?;
    let manifest = generate_dataset(&config, &c.out)?;
    write(&c.out.join("dataset.cfg"), &config.to_kv())?;
    println!(
        "wrote {} samples to {}",
        manifest.records.len(),
        c.out.display()
    );
    Ok(())
}

fn train_one(
    config: &TrainConfig,
    data: &Path,
    out: &Path,
) -> Result<bcam::trainer::TrainOutcome, Failure> {
    let train_set = load(data, Split::Train)?;
    let val_set = load(data, Split::Val)?;
    create_dir(out)?;
    write(&out.join("train.cfg"), &config.to_kv())?;
    let outcome = train(config, &train_set, &val_set)?;
    write(&out.join("train_log.csv"), &outcome.log_csv())?;
    write(&out.join("epochs.csv"), &epoch_csv(&outcome))?;
    checkpoint::save(&outcome.best_model, &out.join("best.bin"))?;
    checkpoint::save(&outcome.final_model, &out.join("final.bin"))?;
    Ok(outcome)
}

fn epoch_csv(o: &bcam::trainer::TrainOutcome) -> String {
    let mut s =
        String::from("epoch,learning_rate,loss,l1,l2,l3,l4,object_part,background_part,val_piou\n");
    for e in &o.epochs {
        let val = e.val_piou.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            e.epoch,
            e.learning_rate,
            e.loss,
            e.terms[0],
            e.terms[1],
            e.terms[2],
            e.terms[3],
            e.object_part,
            e.background_part,
            val
        );
    }
    s
}

fn train_cmd(c: TrainCmd) -> Result<(), Failure> {
    let config = resolve_train(&c.config, &c.train)?;
    print_config("train", &config.to_kv());
    let outcome = train_one(&config, &c.data, &c.out)?;
    println!(
        "best epoch {} (val pIoU {:.4}); checkpoints in {}",
        outcome.best_epoch,
        outcome.best_val_piou.unwrap_or(f64::NAN),
        c.out.display()
    );
    Ok(())
}

fn summary_csv(ev: &Evaluation) -> String {
    let r = &ev.sweep;
    let mut s = String::from("metric,value\n");
    let mut row = |k: &str, v: f64| {
        let _ = writeln!(s, "{k},{v}");
    };
    row("piou", r.piou.piou);
    row("piou_tau", r.piou.tau);
    row("pxap", r.pxap);
    row("mba30", r.mba[0]);
    row("mba50", r.mba[1]);
    row("mba70", r.mba[2]);
    row("mba_mean", r.mba_mean());
    row("top1_mean", r.top1_mean());
    row("se", r.piou.se);
    row("pr", r.piou.pr);
    row("sp", r.piou.sp);
    row("accuracy", ev.classification_accuracy);
    if let Some(m) = &ev.mask_route {
        row("mask_miou", m.miou);
        row("mask_se", m.se);
        row("mask_pr", m.pr);
        row("mask_sp", m.sp);
    }
    if let Some(b) = &ev.background {
        row("background_piou", b.piou.piou);
        row("background_pxap", b.pxap);
    }
    s
}

fn eval_cmd(c: EvalCmd, curves_only: bool) -> Result<(), Failure> {
    let split = parse_split(&c.split)?;
    let grid = ThresholdGrid::uniform(c.threshold_points).map_err(usage)?;
    println!(
        "# eval\ncheckpoint = {}\ndata = {}\nsplit = {}\nthreshold_points = {}",
        c.checkpoint.display(),
        c.data.display(),
        split.name(),
        c.threshold_points
    );
    let model = checkpoint::load(&c.checkpoint)
        .with_context(|| format!("loading {}", c.checkpoint.display()))?;
    let samples = load(&c.data, split)?;
    let ev = evaluate(&model, &samples, &grid)?;
    create_dir(&c.out)?;
    write(&c.out.join("iou_curve.csv"), &ev.sweep.iou_curve_csv())?;
    write(&c.out.join("pr_curve.csv"), &ev.sweep.pr_curve_csv())?;
    if !curves_only {
        write(&c.out.join("classes.csv"), &ev.sweep.class_table_csv())?;
        write(&c.out.join("summary.csv"), &summary_csv(&ev))?;
    }
    println!(
        "pIoU {:.4} at tau {:.3}, PxAP {:.4}",
        ev.sweep.piou.piou, ev.sweep.piou.tau, ev.sweep.pxap
    );
    if !curves_only {
        print!("{}", summary_csv(&ev));
    }
    Ok(())
}

fn gradcheck(c: GradcheckCmd) -> Result<(), Failure> {
    println!("# gradcheck\nseed = {}\neps = {}", c.seed, c.eps);
    if !(c.eps > 0.0) {
        return Err(usage(anyhow!("--eps must be positive")));
    }
    let err = toy_grad_check(c.seed, c.eps)?;
    println!("max relative error {err:.3e}");
    if err > GRADCHECK_TOLERANCE {
        return Err(anyhow!("gradient check above tolerance {GRADCHECK_TOLERANCE:e}").into());
    }
    Ok(())
}

fn export_maps(c: ExportCmd) -> Result<(), Failure> {
    let split = parse_split(&c.split)?;
    println!(
        "# export-maps\ncheckpoint = {}\ndata = {}\nsplit = {}\nlimit = {}",
        c.checkpoint.display(),
        c.data.display(),
        split.name(),
        c.limit
    );
    let model = checkpoint::load(&c.checkpoint)
        .with_context(|| format!("loading {}", c.checkpoint.display()))?;
    let samples = load(&c.data, split)?;
    create_dir(&c.out)?;
    for (i, s) in samples.iter().take(c.limit).enumerate() {
        export_sample(&model, s, &c.out.join(format!("{i:05}")))?;
    }
    println!(
        "exported {} images to {}",
        samples.len().min(c.limit),
        c.out.display()
    );
    Ok(())
}

fn export_sample(model: &Model, s: &Sample, stem: &Path) -> Result<(), Failure> {
    let inf = model.infer(&s.image)?;
    let (h, w) = (s.height(), s.width());
    let k = s.image_label()?.primary();
    let up = |row: &[f64]| upsample_bilinear(row, inf.height, inf.width, h, w);
    let path = |suffix: &str| PathBuf::from(format!("{}_{suffix}", stem.display()));
    s.to_raster().write(&path("image.ppm"))?;
    mask_to_pgm(&s.masks[k], w, h)?.write(&path("gt.pgm"))?;
    let s_o = up(inf.object_map.row(k));
    map_to_pgm(&s_o, w, h)?.write(&path("so.pgm"))?;
    if let Some(sb) = &inf.background_map {
        let s_b = up(sb.row(k));
        map_to_pgm(&s_b, w, h)?.write(&path("sb.pgm"))?;
        let mask: Vec<bool> = s_o.iter().zip(&s_b).map(|(o, b)| o - b > 0.0).collect();
        mask_to_pgm(&mask, w, h)?.write(&path("mask.pgm"))?;
    }
    if let Some(a) = &inf.object_prior {
        map_to_pgm(&up(a), w, h)?.write(&path("ao.pgm"))?;
    }
    if let Some(a) = &inf.background_prior {
        map_to_pgm(&up(a), w, h)?.write(&path("ab.pgm"))?;
    }
    log::debug!("exported {}", stem.display());
    Ok(())
}

fn compare(c: CompareCmd) -> Result<(), Failure> {
    let base = resolve_train(&c.config, &c.train)?;
    print_config("compare", &base.to_kv());
    let test = load(&c.data, Split::Test)?;
    let grid = ThresholdGrid::uniform(base.threshold_points).map_err(usage)?;
    let mut table = String::from(
        "variant,piou,pxap,mba30,mba50,mba70,top1_mean,mask_miou,background_piou,accuracy\n",
    );
    for variant in Variant::ALL {
        info!("training {variant}");
        let config = TrainConfig {
            variant,
            checkpoint_path: None,
            ..base.clone()
        };
        let outcome = train_one(&config, &c.data, &c.out.join(variant.name()))?;
        let ev = evaluate(&outcome.best_model, &test, &grid)?;
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        let r = &ev.sweep;
        let _ = writeln!(
            table,
            "{variant},{},{},{},{},{},{},{},{},{}",
            r.piou.piou,
            r.pxap,
            r.mba[0],
            r.mba[1],
            r.mba[2],
            r.top1_mean(),
            opt(ev.mask_route.map(|m| m.miou)),
            opt(ev.background.as_ref().map(|b| b.piou.piou)),
            ev.classification_accuracy
        );
    }
    write(&c.out.join("compare.csv"), &table)?;
    print!("{table}");
    Ok(())
}

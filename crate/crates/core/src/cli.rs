//! `rld` command-line front end.
//!
//! Every command is a pure function of its flags, input files and `--seed`.
//! Exit codes: 0 success, 1 training failure, 2 usage or input error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::dataio::{load_idx, load_model, save_model, synth_shapes, write_curve_csv, write_idx, write_pgm, ImageDataset, ModelArchive};
use crate::error::{Error, Result};
use crate::explain::{explain, ExplainConfig, Explanation, LossWeights, StudentConfig};
use crate::metrics::{
    deletion_curve, format_summary, insertion_curve, occlusion_saliency, random_ordering, CurveConfig, MethodScore,
};
use crate::numkit::{derive_seed, DenseTensor, Rng};
use crate::teacher::{train_teacher_with, TeacherConfig, TeacherModel};
use crate::vae::{train_vae_with, VaeConfig, VaeModel};

/// Random stream ids derived from `--seed`; per-image streams are further
/// split by image index.
pub mod streams {
    pub const TRAIN_DATA: u64 = 1;
    pub const TEST_DATA: u64 = 2;
    pub const VAE: u64 = 3;
    pub const TEACHER: u64 = 4;
    pub const EXPLAIN: u64 = 5;
    pub const RANDOM: u64 = 6;
}

#[derive(Debug, Parser)]
#[command(name = "rld", version, about = "Re-label distillation explanations for image classifiers")]
pub struct Cli {
    #[command(flatten)]
    pub run: RunArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Master seed for every random stream
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// IDX image file (use with --idx-labels instead of synthetic shapes)
    #[arg(long, global = true, requires = "idx_labels")]
    pub idx_images: Option<PathBuf>,

    #[arg(long, global = true, requires = "idx_images")]
    pub idx_labels: Option<PathBuf>,

    /// Synthetic shapes as n,h,w,k
    #[arg(long, global = true, default_value = "2000,16,16,2", value_parser = parse_synth)]
    pub synth: SynthSpec,

    /// Which synthetic split to read (ignored for IDX input)
    #[arg(long, global = true, value_enum)]
    pub split: Option<Split>,

    #[arg(long, global = true, default_value_t = 16)]
    pub latent_dim: usize,

    /// Latent perturbation scale
    #[arg(long, global = true, default_value_t = 1.0)]
    pub tau: f32,

    #[arg(long, global = true, default_value_t = 1000)]
    pub n_samples: usize,

    /// Weight of the soft (probability-matching) term
    #[arg(long, global = true, default_value_t = 0.7)]
    pub lambda1: f64,

    /// Weight of the hard (re-label) term
    #[arg(long, global = true, default_value_t = 0.3)]
    pub lambda2: f64,

    /// Student learning rate (on the mean loss gradient)
    #[arg(long, global = true)]
    pub student_lr: Option<f64>,

    #[arg(long, global = true)]
    pub student_epochs: Option<usize>,

    #[arg(long, global = true, default_value_t = 0.02)]
    pub step_fraction: f64,

    /// Pixel value for removed / not-yet-inserted pixels
    #[arg(long = "baseline", global = true, default_value_t = 0.0)]
    pub baseline_value: f32,

    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthSpec {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self { n: 2000, h: 16, w: 16, k: 2 }
    }
}

fn parse_synth(s: &str) -> std::result::Result<SynthSpec, String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match parts[..] {
        [n, h, w, k] => Ok(SynthSpec { n, h, w, k }),
        _ => Err("expected n,h,w,k".into()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the synthetic train/test splits as IDX files
    SynthData,
    /// Train the VAE neighborhood generator
    TrainVae(TrainArgs),
    /// Train the classifier to be explained
    TrainTeacher(TrainArgs),
    /// Explain one image: saliency PGM, weight archive and neighborhood summary
    Explain(ExplainArgs),
    /// Deletion/insertion evaluation against occlusion and random orderings
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f32>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Archive path (defaults to vae.rldm / teacher.rldm in --out-dir)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ModelPaths {
    #[arg(long)]
    pub teacher: PathBuf,
    #[arg(long)]
    pub vae: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub models: ModelPaths,
    #[arg(long)]
    pub index: usize,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub models: ModelPaths,
    /// Comma-separated image indices
    #[arg(long, value_delimiter = ',', conflicts_with = "count")]
    pub indices: Option<Vec<usize>>,
    /// Evaluate the first N images
    #[arg(long, default_value_t = 20)]
    pub count: usize,
    #[arg(long, default_value_t = 3)]
    pub occlusion_window: usize,
    #[arg(long, default_value_t = 1)]
    pub occlusion_stride: usize,
}

/// Validated run-wide settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub latent_dim: usize,
    pub explain: ExplainConfig,
    pub curve: CurveConfig,
    pub out_dir: PathBuf,
}

impl RunArgs {
    pub fn to_config(&self) -> Result<RunConfig> {
        if self.n_samples < 2 {
            return Err(Error::Usage(format!("--n-samples must be >= 2, got {}", self.n_samples)));
        }
        if !(self.tau >= 0.0) {
            return Err(Error::Usage(format!("--tau must be >= 0, got {}", self.tau)));
        }
        let weights = LossWeights::new(self.lambda1, self.lambda2).map_err(|e| Error::Usage(e.to_string()))?;
        let defaults = StudentConfig::default();
        let student = StudentConfig {
            weights,
            lr: self.student_lr.unwrap_or(defaults.lr),
            epochs: self.student_epochs.unwrap_or(defaults.epochs),
        };
        if !(student.lr > 0.0) {
            return Err(Error::Usage(format!("--student-lr must be positive, got {}", student.lr)));
        }
        Ok(RunConfig {
            seed: self.seed,
            latent_dim: self.latent_dim,
            explain: ExplainConfig {
                n_samples: self.n_samples,
                tau: self.tau,
                student,
                ..ExplainConfig::default()
            },
            curve: CurveConfig {
                step_fraction: self.step_fraction,
                baseline_value: self.baseline_value,
            },
            out_dir: self.out_dir.clone(),
        })
    }

    fn synth_split(&self, split: Split) -> Result<ImageDataset> {
        synth_split(self.seed, self.synth, split)
    }

    fn dataset(&self, default_split: Split) -> Result<ImageDataset> {
        match (&self.idx_images, &self.idx_labels) {
            (Some(images), Some(labels)) => load_idx(images, labels),
            _ => self.synth_split(self.split.unwrap_or(default_split)),
        }
    }
}

/// The synthetic split `rld` generates for `seed`.
pub fn synth_split(seed: u64, spec: SynthSpec, split: Split) -> Result<ImageDataset> {
    let SynthSpec { n, h, w, k } = spec;
    let stream = match split {
        Split::Train => streams::TRAIN_DATA,
        Split::Test => streams::TEST_DATA,
    };
    synth_shapes(n, h, w, k, &mut Rng::derive(seed, stream))
}

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Training { .. } => 1,
        _ => 2,
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_models(paths: &ModelPaths) -> Result<(TeacherModel, VaeModel)> {
    let teacher = TeacherModel::from_archive(&load_model(&paths.teacher)?)?;
    let vae = VaeModel::from_archive(&load_model(&paths.vae)?)?;
    Ok((teacher, vae))
}

/// Runs a parsed command, writing progress lines to `out`.
pub fn run(cli: &Cli, out: &mut impl Write) -> Result<()> {
    let config = cli.run.to_config()?;
    match &cli.command {
        Command::SynthData => cmd_synth_data(&cli.run, &config, out),
        Command::TrainVae(args) => cmd_train_vae(&cli.run, &config, args, out),
        Command::TrainTeacher(args) => cmd_train_teacher(&cli.run, &config, args, out),
        Command::Explain(args) => cmd_explain(&cli.run, &config, args, out),
        Command::Eval(args) => cmd_eval(&cli.run, &config, args, out),
    }
}

fn emit(out: &mut impl Write, line: std::fmt::Arguments<'_>) {
    // progress output is best effort
    let _ = writeln!(out, "{line}");
}

fn cmd_synth_data(run: &RunArgs, config: &RunConfig, out: &mut impl Write) -> Result<()> {
    ensure_dir(&config.out_dir)?;
    for (split, name) in [(Split::Train, "train"), (Split::Test, "test")] {
        let ds = run.synth_split(split)?;
        let images = config.out_dir.join(format!("{name}-images.idx"));
        let labels = config.out_dir.join(format!("{name}-labels.idx"));
        write_idx(&ds, &images, &labels)?;
        emit(out, format_args!("wrote {} ({} images)", images.display(), ds.len()));
    }
    Ok(())
}

fn cmd_train_vae(run: &RunArgs, config: &RunConfig, args: &TrainArgs, out: &mut impl Write) -> Result<()> {
    let data = run.dataset(Split::Train)?;
    let defaults = VaeConfig::default();
    let vae_config = VaeConfig {
        latent_dim: config.latent_dim,
        hidden: args.hidden.unwrap_or(defaults.hidden),
        epochs: args.epochs.unwrap_or(defaults.epochs),
        batch_size: args.batch_size.unwrap_or(defaults.batch_size),
        lr: args.lr.unwrap_or(defaults.lr),
    };
    let path = args.out.clone().unwrap_or_else(|| config.out_dir.join("vae.rldm"));
    let mut rng = Rng::derive(config.seed, streams::VAE);
    let model = train_vae_with(&data, &vae_config, &mut rng, |epoch, loss| {
        emit(out, format_args!("epoch {epoch} loss {loss:.6}"))
    })?;
    save_archive(&model.to_archive()?, &path)?;
    emit(out, format_args!("wrote {}", path.display()));
    Ok(())
}

fn cmd_train_teacher(run: &RunArgs, config: &RunConfig, args: &TrainArgs, out: &mut impl Write) -> Result<()> {
    let data = run.dataset(Split::Train)?;
    let defaults = TeacherConfig::default();
    let teacher_config = TeacherConfig {
        hidden: args.hidden.unwrap_or(defaults.hidden),
        epochs: args.epochs.unwrap_or(defaults.epochs),
        batch_size: args.batch_size.unwrap_or(defaults.batch_size),
        lr: args.lr.unwrap_or(defaults.lr),
    };
    let path = args.out.clone().unwrap_or_else(|| config.out_dir.join("teacher.rldm"));
    let mut rng = Rng::derive(config.seed, streams::TEACHER);
    let model = train_teacher_with(&data, &teacher_config, &mut rng, |epoch, loss| {
        emit(out, format_args!("epoch {epoch} loss {loss:.6}"))
    })?;
    if let Some(acc) = model.accuracy() {
        emit(out, format_args!("train accuracy {acc:.6}"));
    }
    save_archive(&model.to_archive()?, &path)?;
    emit(out, format_args!("wrote {}", path.display()));
    Ok(())
}

fn save_archive(archive: &ModelArchive, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    save_model(archive, path)
}

fn check_index(data: &ImageDataset, index: usize) -> Result<()> {
    if index >= data.len() {
        return Err(Error::Usage(format!(
            "image index {index} out of range for {} images",
            data.len()
        )));
    }
    Ok(())
}

/// Explanation of image `index` with its per-image random stream.
pub fn explain_index(
    teacher: &TeacherModel,
    vae: &VaeModel,
    data: &ImageDataset,
    index: usize,
    config: &RunConfig,
) -> Result<Explanation> {
    let mut rng = Rng::derive(derive_seed(config.seed, streams::EXPLAIN), index as u64);
    explain(teacher, vae, &data.image(index), &config.explain, &mut rng)
}

fn cmd_explain(run: &RunArgs, config: &RunConfig, args: &ExplainArgs, out: &mut impl Write) -> Result<()> {
    let data = run.dataset(Split::Test)?;
    check_index(&data, args.index)?;
    let (teacher, vae) = load_models(&args.models)?;
    let ex = explain_index(&teacher, &vae, &data, args.index, config)?;
    ensure_dir(&config.out_dir)?;
    let idx = args.index;
    let pgm = config.out_dir.join(format!("saliency_{idx}.pgm"));
    let weights = config.out_dir.join(format!("saliency_{idx}.rldm"));
    let summary = config.out_dir.join(format!("summary_{idx}.txt"));
    write_pgm(&ex.saliency.normalized, &pgm)?;
    let shape = data.image_shape().dims();
    let archive = ModelArchive::new()
        .with("s.w", ex.student.w.clone().reshape(&shape)?)?
        .with("s.b", DenseTensor::from_slice(&[ex.student.b]))?;
    save_model(&archive, &weights)?;
    write_text(&summary, &ex.summary())?;
    for w in &ex.warnings {
        emit(out, format_args!("warning: {w}"));
    }
    emit(
        out,
        format_args!(
            "image {idx}: class {} kept {} shifted {} tau {:.4}",
            ex.neighborhood.anchor_class,
            ex.neighborhood.kept(),
            ex.neighborhood.shifted(),
            ex.neighborhood.tau_used.unwrap_or(f32::NAN)
        ),
    );
    Ok(())
}

/// Mean AUCs for re-label distillation, occlusion and random orderings over
/// `indices`, writing the re-label curves when `curve_dir` is given.
pub fn evaluate(
    teacher: &TeacherModel,
    vae: &VaeModel,
    data: &ImageDataset,
    indices: &[usize],
    config: &RunConfig,
    occlusion: (usize, usize),
    curve_dir: Option<&Path>,
) -> Result<Vec<MethodScore>> {
    let shape = data.image_shape();
    let mut sums = [[0.0f64; 2]; 3];
    for &idx in indices {
        check_index(data, idx)?;
        let anchor = data.image(idx);
        let ex = explain_index(teacher, vae, data, idx, config)?;
        let occ = occlusion_saliency(teacher, &anchor, occlusion.0, occlusion.1, config.curve.baseline_value)?;
        let mut rng = Rng::derive(derive_seed(config.seed, streams::RANDOM), idx as u64);
        let random = random_ordering(shape.height, shape.width, &mut rng);
        for (m, ordering) in [&ex.saliency.ordering, &occ.ordering, &random].into_iter().enumerate() {
            let del = deletion_curve(teacher, &anchor, ordering, config.curve)?;
            let ins = insertion_curve(teacher, &anchor, ordering, config.curve)?;
            if m == 0 {
                if let Some(dir) = curve_dir {
                    write_curve_csv(&del.points, dir.join(format!("deletion_{idx}.csv")))?;
                    write_curve_csv(&ins.points, dir.join(format!("insertion_{idx}.csv")))?;
                }
            }
            sums[m][0] += del.auc;
            sums[m][1] += ins.auc;
        }
    }
    let n = indices.len().max(1) as f64;
    Ok(["relabel", "occlusion", "random"]
        .iter()
        .zip(sums)
        .map(|(name, [d, i])| MethodScore {
            method: name.to_string(),
            deletion_auc: d / n,
            insertion_auc: i / n,
        })
        .collect())
}

fn cmd_eval(run: &RunArgs, config: &RunConfig, args: &EvalArgs, out: &mut impl Write) -> Result<()> {
    let data = run.dataset(Split::Test)?;
    let indices: Vec<usize> = match &args.indices {
        Some(list) => list.clone(),
        None => (0..args.count.min(data.len())).collect(),
    };
    if indices.is_empty() {
        return Err(Error::Usage("no images to evaluate".into()));
    }
    for &i in &indices {
        check_index(&data, i)?;
    }
    let (teacher, vae) = load_models(&args.models)?;
    ensure_dir(&config.out_dir)?;
    let rows = evaluate(
        &teacher,
        &vae,
        &data,
        &indices,
        config,
        (args.occlusion_window, args.occlusion_stride),
        Some(&config.out_dir),
    )?;
    let table = format_summary(&rows);
    write_text(&config.out_dir.join("summary.txt"), &table)?;
    let _ = out.write_all(table.as_bytes());
    Ok(())
}

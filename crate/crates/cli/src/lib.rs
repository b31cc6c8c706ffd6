//! `ganforge` command-line runner.
//!
//! Exit codes: 0 success, 1 usage or invalid settings, 2 I/O failure, 3 malformed
//! input data, 4 non-finite numerics, 5 gradient check failure.

pub mod config;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ganforge_core::data::pnm::write_pgm;
use ganforge_core::data::synth::{synth_raw, ImbalanceSpec};
use ganforge_core::data::{synth_dataset, ImageDataset};
use ganforge_core::gan::{generate, load_generator, sample_images, TrainHistory, Trainer};
use ganforge_core::metrics::{compare_images, DistributionReport};
use ganforge_core::nn::Checkpoint;
use ganforge_core::{selfcheck, Error};
use serde::Serialize;

pub use config::{Overrides, RunConfig};

pub const THREADS_ENV: &str = "GANFORGE_THREADS";

#[derive(Debug)]
pub enum CliError {
    Core(Error),
    Usage(String),
    Gradcheck(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Gradcheck(m) => write!(f, "gradient check failed: {m}"),
        }
    }
}

fn core_exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } | Error::EmptyDirectory(_) => 2,
        Error::Malformed { .. } | Error::Format(_) => 3,
        Error::NonFinite(_) => 4,
        Error::Layer { source, .. } => core_exit_code(source),
        _ => 1,
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) => core_exit_code(e),
            CliError::Usage(_) => 1,
            CliError::Gradcheck(_) => 5,
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "ganforge", version, about = "Train and evaluate a small image GAN from scratch")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Convert a directory of PGM/PPM images into a normalized dataset cache.
    Preprocess(PreprocessArgs),
    /// Write a synthetic blob dataset cache (optionally also as PGM files).
    Synth(SynthArgs),
    /// Train the generator and discriminator on a dataset cache.
    Train(TrainArgs),
    /// Render a grid of generated samples from a checkpoint.
    Generate(GenerateArgs),
    /// Compare real and generated pixel distributions.
    Evaluate(EvaluateArgs),
    /// Run randomized finite-difference checks of every differentiable op.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct PreprocessArgs {
    #[arg(long = "in", value_name = "DIR")]
    input: PathBuf,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    #[arg(long, value_name = "S")]
    size: Option<usize>,
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    prevalence: Option<f64>,
    #[arg(long, value_name = "S")]
    size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also write each image as `synth_<index>.pgm` into this directory.
    #[arg(long, value_name = "DIR")]
    pgm_dir: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, value_name = "CACHE")]
    data: PathBuf,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Continue from a checkpoint written by an earlier run; `--steps` is the total.
    #[arg(long, value_name = "CKPT")]
    resume: Option<PathBuf>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long)]
    image_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    sample_every: Option<u64>,
    #[arg(long)]
    sample_count: Option<usize>,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long, value_name = "FILE")]
    ckpt: PathBuf,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Generator checkpoint to sample from.
    #[arg(long, value_name = "FILE", required_unless_present = "generated", conflicts_with = "generated")]
    ckpt: Option<PathBuf>,
    /// Compare against a second dataset cache instead of generator samples.
    #[arg(long, value_name = "CACHE")]
    generated: Option<PathBuf>,
    #[arg(long, value_name = "CACHE")]
    data: PathBuf,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Cases per op family.
    #[arg(long)]
    cases: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return e.exit_code();
    }
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn configure_threads() -> CliResult {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV}={raw:?} is not a positive integer")))?;
    // A second call in the same process keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn dispatch(command: Command) -> CliResult {
    match command {
        Command::Preprocess(a) => cmd_preprocess(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult {
    fs::write(path, bytes).map_err(|e| Error::io(path, e).into())
}

fn create_dir(path: &Path) -> CliResult {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e).into())
}

/// Config echo for commands whose output is a single file: `<file>.config.json`.
fn echo_beside(file: &Path, cfg: &RunConfig) -> CliResult {
    let mut name = file.as_os_str().to_owned();
    name.push(".config.json");
    write_file(Path::new(&name), cfg.to_json())
}

fn print_counts(ds: &ImageDataset) {
    let (pos, neg, unknown) = ds.class_counts();
    println!(
        "{} images of {}x{}; classes: {pos} positive, {neg} negative, {unknown} unlabeled",
        ds.len(),
        ds.image_size(),
        ds.image_size()
    );
}

fn cmd_preprocess(a: PreprocessArgs) -> CliResult {
    let flags = Overrides {
        image_size: a.size,
        ..Default::default()
    };
    let mut cfg = RunConfig::resolve("preprocess", a.config.as_deref(), &flags)?;
    let size = *cfg.image_size.get_or_insert(ganforge_core::nn::arch::DEFAULT_IMAGE_SIZE);
    cfg.set_path("in", &a.input);
    cfg.set_path("out", &a.out);
    let ds = ImageDataset::from_directory(&a.input, size)?;
    ds.write_cache(&a.out)?;
    echo_beside(&a.out, &cfg)?;
    print_counts(&ds);
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> CliResult {
    let flags = Overrides {
        image_size: a.size,
        count: a.count,
        prevalence: a.prevalence,
        seed: a.seed,
        ..Default::default()
    };
    let mut cfg = RunConfig::resolve("synth", a.config.as_deref(), &flags)?;
    let size = *cfg.image_size.get_or_insert(ganforge_core::nn::arch::DEFAULT_IMAGE_SIZE);
    cfg.set_path("out", &a.out);
    let spec = ImbalanceSpec::new(cfg.count, cfg.prevalence)?;
    let ds = synth_dataset(&spec, cfg.seed, size)?;
    ds.write_cache(&a.out)?;
    if let Some(dir) = &a.pgm_dir {
        cfg.set_path("pgm_dir", dir);
        create_dir(dir)?;
        let width = spec.total.to_string().len();
        for (i, (img, _)) in synth_raw(&spec, cfg.seed, size).iter().enumerate() {
            write_pgm(&dir.join(format!("synth_{i:0width$}.pgm")), img)?;
        }
    }
    echo_beside(&a.out, &cfg)?;
    print_counts(&ds);
    Ok(())
}

fn cmd_train(a: TrainArgs) -> CliResult {
    let flags = Overrides {
        seed: a.seed,
        image_size: a.image_size,
        latent_dim: a.latent_dim,
        batch_size: a.batch_size,
        steps: a.steps,
        lr: a.lr,
        beta1: a.beta1,
        beta2: a.beta2,
        eps: a.eps,
        sample_every: a.sample_every,
        sample_count: a.sample_count,
        ..Default::default()
    };
    let mut cfg = RunConfig::resolve("train", a.config.as_deref(), &flags)?;
    cfg.set_path("data", &a.data);
    cfg.set_path("out", &a.out);
    let ds = ImageDataset::read_cache(&a.data)?;
    let size = *cfg.image_size.get_or_insert(ds.image_size());
    let gan = cfg.gan_config(size);

    create_dir(&a.out)?;
    let history_path = a.out.join("history.csv");
    let (mut trainer, mut history) = match &a.resume {
        Some(ckpt_path) => {
            cfg.set_path("resume", ckpt_path);
            let ckpt = Checkpoint::read(ckpt_path)?;
            let trainer = Trainer::from_checkpoint(gan, &ckpt).map_err(|e| e.with_path(ckpt_path))?;
            let mut history = match fs::read_to_string(&history_path) {
                Ok(text) => TrainHistory::from_csv(&text).map_err(|e| e.with_path(&history_path))?,
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => TrainHistory::default(),
                Err(e) => return Err(Error::io(&history_path, e).into()),
            };
            history.truncate_to(trainer.step());
            (trainer, history)
        }
        None => (Trainer::new(gan)?, TrainHistory::default()),
    };
    write_file(&a.out.join("config.json"), cfg.to_json())?;

    let (out, sample_count, sample_seed) = (a.out.clone(), cfg.sample_count, cfg.seed);
    let start = trainer.step();
    let new = trainer.train(&ds, |t, record| {
        if history_snapshot(t, record.step) {
            let grid = t.sample(sample_count, sample_seed)?;
            write_pgm(&out.join(format!("samples_{}.pgm", record.step)), &grid.image)?;
        }
        Ok(())
    })?;
    history.records.extend(new.records);
    write_file(&history_path, history.to_csv())?;
    trainer.checkpoint().write(&a.out.join("final.ckpt"))?;

    match history.records.last() {
        Some(r) if trainer.step() > start => println!(
            "trained steps {}..{}: d_loss {:.4} g_loss {:.4} D(x) {:.3} D(G(z)) {:.3}",
            start + 1,
            r.step,
            r.d_loss,
            r.g_loss,
            r.d_real_mean,
            r.d_fake_mean
        ),
        _ => println!("no training steps run (step {})", trainer.step()),
    }
    Ok(())
}

fn history_snapshot(t: &Trainer, step: u64) -> bool {
    let every = t.config().sample_every;
    every > 0 && step % every == 0
}

fn cmd_generate(a: GenerateArgs) -> CliResult {
    let flags = Overrides {
        n: a.n,
        seed: a.seed,
        ..Default::default()
    };
    let mut cfg = RunConfig::resolve("generate", a.config.as_deref(), &flags)?;
    cfg.set_path("ckpt", &a.ckpt);
    cfg.set_path("out", &a.out);
    let ckpt = Checkpoint::read(&a.ckpt)?;
    let generator = load_generator(&ckpt).map_err(|e| e.with_path(&a.ckpt))?;
    cfg.image_size = generator.output_shape().last().copied();
    let grid = sample_images(&generator, cfg.n, cfg.seed)?;
    write_pgm(&a.out, &grid.image)?;
    echo_beside(&a.out, &cfg)?;
    println!(
        "wrote {} samples as a {}x{} grid ({}x{} pixels)",
        cfg.n, grid.rows, grid.cols, grid.image.width, grid.image.height
    );
    Ok(())
}

#[derive(Serialize)]
struct ReportFile<'a> {
    #[serde(flatten)]
    report: &'a DistributionReport,
    config: &'a RunConfig,
}

fn cmd_evaluate(a: EvaluateArgs) -> CliResult {
    let flags = Overrides {
        samples: a.samples,
        seed: a.seed,
        bins: a.bins,
        ..Default::default()
    };
    let mut cfg = RunConfig::resolve("evaluate", a.config.as_deref(), &flags)?;
    cfg.set_path("data", &a.data);
    cfg.set_path("out", &a.out);
    let real = ImageDataset::read_cache(&a.data)?;
    cfg.image_size = Some(real.image_size());
    let generated = match (&a.ckpt, &a.generated) {
        (Some(ckpt_path), _) => {
            cfg.set_path("ckpt", ckpt_path);
            let ckpt = Checkpoint::read(ckpt_path)?;
            let generator = load_generator(&ckpt).map_err(|e| e.with_path(ckpt_path))?;
            generate(&generator, cfg.samples, cfg.seed)?
        }
        (None, Some(other)) => {
            cfg.set_path("generated", other);
            ImageDataset::read_cache(other)?.images().clone()
        }
        (None, None) => return Err(CliError::Usage("one of --ckpt or --generated is required".into())),
    };
    let report = compare_images(real.images(), &generated, cfg.bins)?;
    create_dir(&a.out)?;
    let json = serde_json::to_string_pretty(&ReportFile {
        report: &report,
        config: &cfg,
    })
    .expect("report serializes");
    write_file(&a.out.join("report.json"), json + "\n")?;
    write_file(&a.out.join("densities.csv"), report.densities_csv())?;
    write_file(&a.out.join("config.json"), cfg.to_json())?;
    println!(
        "overlap {:.6}  js_divergence {:.6}  wasserstein1 {:.6}",
        report.overlap, report.js_divergence, report.wasserstein1
    );
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> CliResult {
    let flags = Overrides {
        cases: a.cases,
        seed: a.seed,
        ..Default::default()
    };
    let cfg = RunConfig::resolve("gradcheck", a.config.as_deref(), &flags)?;
    let report = selfcheck::run(cfg.cases, cfg.seed)?;
    print!("{report}");
    match report.worst() {
        Some(w) => println!("worst: {} {} max rel err {:.3e}", w.family.name(), w.worst_case, w.worst_error),
        None => println!("no cases run"),
    }
    if report.passed() {
        println!("gradcheck passed (tolerance {:.0e})", report.tolerance);
        Ok(())
    } else {
        let w = report.worst().expect("a failing family exists");
        Err(CliError::Gradcheck(format!(
            "{} {}: max rel err {:.3e} >= {:.0e}",
            w.family.name(),
            w.worst_case,
            w.worst_error,
            report.tolerance
        )))
    }
}

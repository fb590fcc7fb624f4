//! The `gantsne` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 I/O or data error, 3 numerical
//! failure. Settings resolve as flags over `--config` JSON over defaults, and
//! every command writes a manifest of the resolved settings before it starts
//! computing.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::checkpoint;
use crate::compare::{ComparisonReport, KNN_K};
use crate::dataset::{
    filter_by_label, load_csv, load_idx, normalize, sample_n, to_csv_string, LabeledDataset, PixelRange,
    IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC,
};
use crate::error::Error;
use crate::gan::{generate, TrainConfig};
use crate::numerics::RngState;
use crate::render::{render_svg, ColorBy, PlotPoint};
use crate::run::{embedding_csv, kl_csv, train_all_digits, train_class, find_checkpoints, EmbeddedRow};
use crate::tsne::{optimize_with, initial_embedding, input_affinities, Embedding, TsneConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

const SAMPLE_STREAM: u64 = 1;
const SYNTHETIC_SAMPLE_STREAM: u64 = 2;
const KL_REPORT_EVERY: usize = 50;

#[derive(Debug, Parser)]
#[command(name = "gantsne", version, propagate_version = true)]
#[command(about = "Train MNIST GANs, generate synthetic digits and compare them with real data via t-SNE")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one GAN per digit class and write a run directory.
    Train(TrainArgs),
    /// Sample labeled synthetic digits from trained checkpoints into CSV.
    Generate(GenerateArgs),
    /// Embed a dataset with t-SNE.
    Embed(EmbedArgs),
    /// Embed real and synthetic samples jointly and report their overlap.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("which").required(true).args(["digit", "all_digits", "mixed"])))]
pub struct TrainArgs {
    /// CSV file, or IDX image and label files in either order.
    #[arg(long, required = true, num_args = 1..=2)]
    pub data: Vec<PathBuf>,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u8).range(0..=9))]
    pub digit: Option<u8>,
    /// Train class_0 .. class_9.
    #[arg(long)]
    pub all_digits: bool,
    /// Train a single unlabeled model on every image.
    #[arg(long)]
    pub mixed: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub snapshot_every: Option<usize>,
    #[arg(long)]
    pub snapshot_samples: Option<usize>,
    /// Also snapshot the untrained generator as epoch 0.
    #[arg(long)]
    pub snapshot_initial: bool,
    /// Cap on mini-batches per epoch.
    #[arg(long)]
    pub max_batches: Option<usize>,
    /// Worker threads for --all-digits.
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, short)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Checkpoint file or run directory.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TsneArgs {
    #[arg(long)]
    pub dims: Option<usize>,
    #[arg(long)]
    pub perplexity: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, short)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long, required = true, num_args = 1..=2)]
    pub data: Vec<PathBuf>,
    #[arg(long, value_parser = clap::value_parser!(u8).range(0..=9))]
    pub digit: Option<u8>,
    /// Embed a random subset of this size.
    #[arg(long)]
    pub sample: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub svg: Option<PathBuf>,
    /// Value of the source_tag column.
    #[arg(long, default_value = "data")]
    pub tag: String,
    #[command(flatten)]
    pub tsne: TsneArgs,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long, required = true, num_args = 1..=2)]
    pub real: Vec<PathBuf>,
    #[arg(long)]
    pub synthetic: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u8).range(0..=9))]
    pub digit: Option<u8>,
    #[arg(long)]
    pub n_real: Option<usize>,
    #[arg(long)]
    pub n_synth: Option<usize>,
    /// Writes <prefix>.csv, <prefix>.svg, <prefix>.report.json.
    #[arg(long)]
    pub out_prefix: PathBuf,
    #[command(flatten)]
    pub tsne: TsneArgs,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Run(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Run(Error::Numerical(_)) => EXIT_NUMERICAL,
            CliError::Run(_) => EXIT_DATA,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Run(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to re-run a command.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub inputs: Vec<InputDigest>,
    pub tool_version: String,
    /// Seconds since the Unix epoch.
    pub started_at: u64,
}

impl RunManifest {
    fn new(command: &str, config: impl Serialize, seed: u64, inputs: &[PathBuf]) -> CliResult<Self> {
        Ok(Self {
            command: command.to_string(),
            config: serde_json::to_value(config).expect("configs serialize"),
            seed,
            inputs: inputs
                .iter()
                .map(|p| Ok(InputDigest { path: p.clone(), sha256: sha256_file(p)? }))
                .collect::<CliResult<_>>()?,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started_at: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        })
    }

    fn write(&self, path: &Path) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        write_file(path, text + "\n")
    }
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    io::copy(&mut file, &mut hasher).map_err(|e| Error::io(path, e))?;
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e).into())
}

/// `path` with `suffix` appended to its file name.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(OsString::from).unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

/// `<out>.kl.csv` next to an embedding CSV, with the `.csv` dropped from `out`.
pub fn kl_path(out: &Path) -> PathBuf {
    if out.extension().is_some_and(|e| e == "csv") {
        out.with_extension("kl.csv")
    } else {
        sibling(out, ".kl.csv")
    }
}

fn read_magic(path: &Path) -> CliResult<Option<u32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(bytes.get(..4).map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]])))
}

/// One CSV path, or an IDX image file and an IDX label file in either order.
pub fn load_data(paths: &[PathBuf]) -> CliResult<LabeledDataset> {
    match paths {
        [csv] => {
            if read_magic(csv)? == Some(IDX_IMAGES_MAGIC) {
                return Err(CliError::Usage(format!(
                    "{} is an IDX image file; pass its label file as a second --data path",
                    csv.display()
                )));
            }
            Ok(load_csv(csv)?)
        }
        [a, b] => {
            if read_magic(a)? == Some(IDX_LABELS_MAGIC) && read_magic(b)? == Some(IDX_IMAGES_MAGIC) {
                Ok(load_idx(b, a)?)
            } else {
                Ok(load_idx(a, b)?)
            }
        }
        _ => Err(CliError::Usage("expected one CSV path or two IDX paths".into())),
    }
}

fn read_json<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
}

pub fn resolve_train_config(args: &TrainArgs) -> CliResult<TrainConfig> {
    let mut c: TrainConfig = read_json(args.config.as_deref())?;
    if let Some(v) = args.epochs {
        c.epochs = v;
    }
    if let Some(v) = args.batch_size {
        c.batch_size = v;
    }
    if let Some(v) = args.lr {
        c.learning_rate = v;
    }
    if let Some(v) = args.seed {
        c.seed = v;
    }
    if let Some(v) = args.snapshot_every {
        c.snapshot_every = v;
    }
    if let Some(v) = args.snapshot_samples {
        c.snapshot_samples = v;
    }
    if args.snapshot_initial {
        c.snapshot_initial = true;
    }
    if args.max_batches.is_some() {
        c.max_batches = args.max_batches;
    }
    c.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(c)
}

pub fn resolve_tsne_config(args: &TsneArgs) -> CliResult<TsneConfig> {
    let mut c: TsneConfig = read_json(args.config.as_deref())?;
    if let Some(v) = args.dims {
        c.out_dims = v;
    }
    if let Some(v) = args.perplexity {
        c.perplexity = v;
    }
    if let Some(v) = args.iterations {
        c.iterations = v;
    }
    if let Some(v) = args.lr {
        c.learning_rate = v;
    }
    if let Some(v) = args.seed {
        c.seed = v;
    }
    if !(2..=3).contains(&c.out_dims) {
        return Err(CliError::Usage(format!("--dims must be 2 or 3, got {}", c.out_dims)));
    }
    if !(c.perplexity > 1.0) || !(c.learning_rate > 0.0) {
        return Err(CliError::Usage("perplexity must exceed 1 and the learning rate must be positive".into()));
    }
    Ok(c)
}

type Progress = Mutex<Box<dyn Write + Send>>;

fn cmd_train(args: &TrainArgs, out: &Progress) -> CliResult<()> {
    let config = resolve_train_config(args)?;
    let raw = load_data(&args.data)?;
    #[derive(Serialize)]
    struct Resolved<'a> {
        #[serde(flatten)]
        train: &'a TrainConfig,
        digit: Option<u8>,
        all_digits: bool,
    }
    let resolved = Resolved {
        train: &config,
        digit: args.digit,
        all_digits: args.all_digits,
    };
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    RunManifest::new("train", &resolved, config.seed, &args.data)?.write(&args.out.join("manifest.json"))?;

    let progress = (!args.quiet).then_some(out);
    if args.all_digits {
        let workers = args
            .threads
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, usize::from));
        train_all_digits(&raw, &config, &args.out, workers, progress)?;
    } else {
        train_class(&raw, &config, args.digit, &args.out, progress)?;
    }
    Ok(())
}

fn cmd_generate(args: &GenerateArgs) -> CliResult<()> {
    let paths = find_checkpoints(&args.model)?;
    #[derive(Serialize)]
    struct Resolved<'a> {
        model: &'a Path,
        n: usize,
        seed: u64,
    }
    let resolved = Resolved {
        model: &args.model,
        n: args.n,
        seed: args.seed,
    };
    RunManifest::new("generate", &resolved, args.seed, &paths)?.write(&sibling(&args.out, ".manifest.json"))?;

    let mut models = paths.iter().map(checkpoint::load).collect::<Result<Vec<_>, _>>()?;
    models.sort_by_key(|m| m.class_label);
    let k = models.len();
    let mut text = String::new();
    for (i, model) in models.iter().enumerate() {
        let count = args.n / k + usize::from(i < args.n % k);
        let label = model.class_label.ok_or_else(|| {
            Error::Contract("checkpoint has no class label; only per-class models can generate labeled data".into())
        })?;
        let mut rng = RngState::new(args.seed.wrapping_add(u64::from(label)));
        text.push_str(&to_csv_string(&generate(model, count, &mut rng)?));
    }
    write_file(&args.out, text)
}

fn embed_and_report(
    x: &LabeledDataset,
    config: &TsneConfig,
    quiet: bool,
    out: &Progress,
) -> CliResult<Embedding> {
    config.validate(x.len())?;
    let p = input_affinities(x.images(), config.perplexity)?;
    let y0 = initial_embedding(x.len(), config.out_dims, config.seed);
    let mut report = |it: usize, kl: f64| {
        if !quiet && (it % KL_REPORT_EVERY == 0 || it == config.iterations) {
            let _ = writeln!(out.lock().unwrap(), "iteration {it}/{} KL={kl:.6}", config.iterations);
        }
    };
    Ok(optimize_with(&p, y0, config, &mut report)?)
}

fn maybe_sample(ds: LabeledDataset, n: Option<usize>, rng: &mut RngState) -> CliResult<LabeledDataset> {
    match n {
        Some(n) => Ok(sample_n(&ds, n, rng)?),
        None => Ok(ds),
    }
}

fn cmd_embed(args: &EmbedArgs, out: &Progress) -> CliResult<()> {
    let config = resolve_tsne_config(&args.tsne)?;
    if args.tag.contains([',', '\n', '\r']) {
        return Err(CliError::Usage("--tag must not contain commas or line breaks".into()));
    }
    #[derive(Serialize)]
    struct Resolved<'a> {
        #[serde(flatten)]
        tsne: &'a TsneConfig,
        digit: Option<u8>,
        sample: Option<usize>,
        tag: &'a str,
    }
    let resolved = Resolved {
        tsne: &config,
        digit: args.digit,
        sample: args.sample,
        tag: &args.tag,
    };
    RunManifest::new("embed", &resolved, config.seed, &args.data)?.write(&sibling(&args.out, ".manifest.json"))?;

    let mut ds = load_data(&args.data)?;
    if let Some(d) = args.digit {
        ds = filter_by_label(&ds, d)?;
    }
    let mut rng = RngState::new(config.seed).fork(SAMPLE_STREAM);
    let ds = normalize(&maybe_sample(ds, args.sample, &mut rng)?, PixelRange::Unit0_1);
    let emb = embed_and_report(&ds, &config, args.tsne.quiet, out)?;

    let rows: Vec<EmbeddedRow> = emb
        .points
        .row_iter()
        .zip(ds.labels())
        .map(|(c, &label)| EmbeddedRow {
            source: args.tag.clone(),
            label,
            coords: c.to_vec(),
        })
        .collect();
    write_file(&args.out, embedding_csv(&rows, config.out_dims))?;
    write_file(&kl_path(&args.out), kl_csv(&emb.kl_trace))?;
    if let Some(svg) = &args.svg {
        let points: Vec<PlotPoint> = rows
            .iter()
            .map(|r| PlotPoint {
                coords: r.coords.clone(),
                label: r.label,
                synthetic: false,
            })
            .collect();
        write_file(svg, render_svg(&points, ColorBy::Label))?;
    }
    Ok(())
}

fn cmd_compare(args: &CompareArgs, out: &Progress) -> CliResult<()> {
    let config = resolve_tsne_config(&args.tsne)?;
    #[derive(Serialize)]
    struct Resolved<'a> {
        #[serde(flatten)]
        tsne: &'a TsneConfig,
        digit: Option<u8>,
        n_real: Option<usize>,
        n_synth: Option<usize>,
    }
    let resolved = Resolved {
        tsne: &config,
        digit: args.digit,
        n_real: args.n_real,
        n_synth: args.n_synth,
    };
    let mut inputs = args.real.clone();
    inputs.push(args.synthetic.clone());
    let prefix = &args.out_prefix;
    RunManifest::new("compare", &resolved, config.seed, &inputs)?.write(&sibling(prefix, ".manifest.json"))?;

    let mut real = load_data(&args.real)?;
    let synthetic = load_csv(&args.synthetic)?;
    if let Some(d) = args.digit {
        real = filter_by_label(&real, d)?;
        if let Some(bad) = synthetic.labels().iter().find(|&&l| l != d) {
            return Err(Error::Consistency(format!(
                "synthetic data {} holds label {bad} but --digit is {d}",
                args.synthetic.display()
            ))
            .into());
        }
    }
    let base = RngState::new(config.seed);
    let real = maybe_sample(real, args.n_real, &mut base.fork(SAMPLE_STREAM))?;
    let synthetic = maybe_sample(synthetic, args.n_synth, &mut base.fork(SYNTHETIC_SAMPLE_STREAM))?;
    let n_real = real.len();
    let joint = normalize(&real, PixelRange::Unit0_1).concat(&normalize(&synthetic, PixelRange::Unit0_1))?;
    let emb = embed_and_report(&joint, &config, args.tsne.quiet, out)?;

    let rows: Vec<EmbeddedRow> = emb
        .points
        .row_iter()
        .zip(joint.labels())
        .enumerate()
        .map(|(i, (c, &label))| EmbeddedRow {
            source: if i < n_real { "real" } else { "synthetic" }.to_string(),
            label,
            coords: c.to_vec(),
        })
        .collect();
    let is_synth: Vec<bool> = (0..rows.len()).map(|i| i >= n_real).collect();
    let report = ComparisonReport::compute(&emb.points, &is_synth, KNN_K)?;

    write_file(&sibling(prefix, ".csv"), embedding_csv(&rows, config.out_dims))?;
    write_file(&sibling(prefix, ".kl.csv"), kl_csv(&emb.kl_trace))?;
    let points: Vec<PlotPoint> = rows
        .iter()
        .zip(&is_synth)
        .map(|(r, &synthetic)| PlotPoint {
            coords: r.coords.clone(),
            label: r.label,
            synthetic,
        })
        .collect();
    write_file(&sibling(prefix, ".svg"), render_svg(&points, ColorBy::Source))?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write_file(&sibling(prefix, ".report.json"), json + "\n")?;
    if !args.tsne.quiet {
        let _ = writeln!(
            out.lock().unwrap(),
            "overlap_ratio={:.4} knn_real_fraction={:.4}",
            report.overlap_ratio, report.knn_real_fraction
        );
    }
    Ok(())
}

pub fn execute(cli: &Cli, stdout: Box<dyn Write + Send>) -> CliResult<()> {
    let out: Progress = Mutex::new(stdout);
    match &cli.command {
        Command::Train(a) => cmd_train(a, &out),
        Command::Generate(a) => cmd_generate(a),
        Command::Embed(a) => cmd_embed(a, &out),
        Command::Compare(a) => cmd_compare(a, &out),
    }
}

/// Parses `args` (program name first), runs the command and returns the exit
/// code. Diagnostics go to `stderr`.
pub fn run<I, T>(args: I, stdout: Box<dyn Write + Send>, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let mut stdout = stdout;
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let _ = write!(stderr, "{}", e.render());
            return EXIT_USAGE;
        }
        Err(e) => {
            let _ = write!(stdout, "{}", e.render());
            let _ = stdout.flush();
            return EXIT_OK;
        }
    };
    match execute(&cli, stdout) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "gantsne: {e}");
            e.exit_code()
        }
    }
}

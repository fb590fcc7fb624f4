//! On-disk layout of training runs and embedding outputs.
//!
//! ```text
//! <run>/class_<d>/checkpoint.bin
//! <run>/class_<d>/history.csv          epoch,L_G,L_D,mean_D_real,mean_D_fake
//! <run>/class_<d>/snapshots/epoch_<k>.csv
//! <run>/class_<d>/snapshots/epoch_<k>.pgm
//! ```
//!
//! A model trained on mixed labels lives in `<run>/all/`; its snapshot CSVs
//! carry only the 784 pixel columns.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::checkpoint;
use crate::dataset::{filter_by_label, normalize, LabeledDataset, PixelRange};
use crate::error::{Error, Result};
use crate::gan::{train, EpochStats, GanModel, Snapshot, TrainConfig, TrainObserver};
use crate::numerics::Matrix;
use crate::render::mosaic_pgm;

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const HISTORY_FILE: &str = "history.csv";
pub const SNAPSHOT_DIR: &str = "snapshots";
pub const HISTORY_HEADER: &str = "epoch,L_G,L_D,mean_D_real,mean_D_fake";

pub fn model_dir(root: &Path, digit: Option<u8>) -> PathBuf {
    match digit {
        Some(d) => root.join(format!("class_{d}")),
        None => root.join("all"),
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn history_csv(history: &[EpochStats]) -> String {
    let mut s = String::from(HISTORY_HEADER);
    s.push('\n');
    for h in history {
        writeln!(
            s,
            "{},{},{},{},{}",
            h.epoch, h.gen_loss, h.disc_loss, h.mean_d_real, h.mean_d_fake
        )
        .unwrap();
    }
    s
}

/// Snapshot rows as CSV, label first when the class is known.
pub fn snapshot_csv(snapshot: &Snapshot, label: Option<u8>) -> String {
    let mut s = String::new();
    for row in snapshot.images.row_iter() {
        let mut first = true;
        if let Some(l) = label {
            write!(s, "{l}").unwrap();
            first = false;
        }
        for v in row {
            if !first {
                s.push(',');
            }
            write!(s, "{v}").unwrap();
            first = false;
        }
        s.push('\n');
    }
    s
}

/// Writes snapshots under a model directory and optionally echoes progress.
pub struct RunWriter<'a> {
    dir: PathBuf,
    progress: Option<&'a Mutex<Box<dyn std::io::Write + Send>>>,
    total_epochs: usize,
    label: Option<u8>,
}

impl<'a> RunWriter<'a> {
    pub fn new(dir: impl Into<PathBuf>, total_epochs: usize, label: Option<u8>) -> Result<Self> {
        let dir = dir.into();
        create_dir(&dir.join(SNAPSHOT_DIR))?;
        Ok(Self {
            dir,
            progress: None,
            total_epochs,
            label,
        })
    }

    pub fn with_progress(mut self, out: &'a Mutex<Box<dyn std::io::Write + Send>>) -> Self {
        self.progress = Some(out);
        self
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Checkpoint and history for a finished model.
    pub fn finish(&self, model: &GanModel) -> Result<()> {
        checkpoint::save(model, self.dir.join(CHECKPOINT_FILE))?;
        write(&self.dir.join(HISTORY_FILE), history_csv(&model.history))
    }
}

impl TrainObserver for RunWriter<'_> {
    fn on_epoch(&mut self, s: &EpochStats) -> Result<()> {
        if let Some(out) = self.progress {
            let tag = self.label.map_or_else(|| "all".to_string(), |d| format!("class {d}"));
            let mut out = out.lock().unwrap();
            // progress output is best effort
            let _ = writeln!(
                out,
                "{tag} epoch {}/{} L_D={:.4} L_G={:.4} D(x)={:.3} D(G(z))={:.3}",
                s.epoch, self.total_epochs, s.disc_loss, s.gen_loss, s.mean_d_real, s.mean_d_fake
            );
        }
        Ok(())
    }

    fn on_snapshot(&mut self, snapshot: &Snapshot, model: &GanModel) -> Result<()> {
        let base = self.dir.join(SNAPSHOT_DIR).join(format!("epoch_{}", snapshot.epoch));
        write(&base.with_extension("csv"), snapshot_csv(snapshot, model.class_label))?;
        write(&base.with_extension("pgm"), mosaic_pgm(&snapshot.images, &snapshot.mosaic))
    }
}

/// Trains one model on `digit` (or on everything) from raw data and writes
/// its run directory. The training seed is `config.seed + digit`.
pub fn train_class(
    raw: &LabeledDataset,
    config: &TrainConfig,
    digit: Option<u8>,
    root: &Path,
    progress: Option<&Mutex<Box<dyn std::io::Write + Send>>>,
) -> Result<GanModel> {
    let subset = match digit {
        Some(d) => filter_by_label(raw, d)?,
        None => raw.clone(),
    };
    let data = normalize(&subset, PixelRange::Sym1_1);
    let config = TrainConfig {
        seed: config.seed.wrapping_add(u64::from(digit.unwrap_or(0))),
        ..config.clone()
    };
    let mut writer = RunWriter::new(model_dir(root, digit), config.epochs, digit)?;
    if let Some(p) = progress {
        writer = writer.with_progress(p);
    }
    let model = train(&data, &config, &mut writer).map_err(|e| match (digit, e) {
        (Some(d), Error::Input(msg)) => Error::Input(format!("class {d}: {msg}")),
        (_, e) => e,
    })?;
    writer.finish(&model)?;
    Ok(model)
}

/// Trains the ten per-class models on up to `workers` threads.
pub fn train_all_digits(
    raw: &LabeledDataset,
    config: &TrainConfig,
    root: &Path,
    workers: usize,
    progress: Option<&Mutex<Box<dyn std::io::Write + Send>>>,
) -> Result<Vec<GanModel>> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<GanModel>>>> = Mutex::new((0..10).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers.clamp(1, 10) {
            scope.spawn(|| loop {
                let d = next.fetch_add(1, Ordering::Relaxed);
                if d >= 10 {
                    break;
                }
                let r = train_class(raw, config, Some(d as u8), root, progress);
                results.lock().unwrap()[d] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every class is trained"))
        .collect()
}

/// Finds checkpoints under a run directory (`class_<d>/checkpoint.bin`,
/// `all/checkpoint.bin` or `checkpoint.bin`), or accepts a checkpoint file.
pub fn find_checkpoints(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    if !path.is_dir() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such checkpoint or run directory"),
        ));
    }
    let mut found: Vec<PathBuf> = (0..10u8)
        .map(|d| model_dir(path, Some(d)).join(CHECKPOINT_FILE))
        .filter(|p| p.is_file())
        .collect();
    for extra in [model_dir(path, None).join(CHECKPOINT_FILE), path.join(CHECKPOINT_FILE)] {
        if found.is_empty() && extra.is_file() {
            found.push(extra);
        }
    }
    if found.is_empty() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "run directory holds no checkpoints"),
        ));
    }
    Ok(found)
}

/// One embedded row as written to CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedRow {
    pub source: String,
    pub label: u8,
    pub coords: Vec<f64>,
}

pub fn embedding_csv(rows: &[EmbeddedRow], dims: usize) -> String {
    let mut s = String::from("source_tag,label");
    for k in 1..=dims {
        write!(s, ",y{k}").unwrap();
    }
    s.push('\n');
    for r in rows {
        write!(s, "{},{}", r.source, r.label).unwrap();
        for v in &r.coords {
            write!(s, ",{v}").unwrap();
        }
        s.push('\n');
    }
    s
}

/// Inverse of [`embedding_csv`].
pub fn parse_embedding_csv(text: &str) -> Result<Vec<EmbeddedRow>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Input("empty embedding CSV".into()))?;
    let dims = header.split(',').count().saturating_sub(2);
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != dims + 2 {
                return Err(Error::Input(format!("embedding row {} has {} fields", i + 2, f.len())));
            }
            let bad = || Error::Input(format!("embedding row {} is not numeric", i + 2));
            Ok(EmbeddedRow {
                source: f[0].to_string(),
                label: f[1].parse().map_err(|_| bad())?,
                coords: f[2..]
                    .iter()
                    .map(|v| v.parse::<f64>().map_err(|_| bad()))
                    .collect::<Result<_>>()?,
            })
        })
        .collect()
}

pub fn kl_csv(trace: &[f64]) -> String {
    let mut s = String::from("iteration,kl\n");
    for (i, v) in trace.iter().enumerate() {
        writeln!(s, "{},{v}", i + 1).unwrap();
    }
    s
}

pub fn rows_to_matrix(rows: &[EmbeddedRow]) -> Result<Matrix> {
    Matrix::from_rows(&rows.iter().map(|r| r.coords.clone()).collect::<Vec<_>>())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedding_csv_round_trip() {
        let rows = vec![
            EmbeddedRow {
                source: "real".into(),
                label: 5,
                coords: vec![0.1, -3.25e-7, 12.0],
            },
            EmbeddedRow {
                source: "synthetic".into(),
                label: 5,
                coords: vec![1.0 / 3.0, 2.0, -0.0],
            },
        ];
        let text = embedding_csv(&rows, 3);
        assert!(text.starts_with("source_tag,label,y1,y2,y3\n"));
        assert_eq!(parse_embedding_csv(&text).unwrap(), rows);
    }

    #[test]
    fn history_layout() {
        let h = [EpochStats {
            epoch: 1,
            gen_loss: 0.5,
            disc_loss: 1.25,
            mean_d_real: 0.75,
            mean_d_fake: 0.25,
        }];
        assert_eq!(history_csv(&h), "epoch,L_G,L_D,mean_D_real,mean_D_fake\n1,0.5,1.25,0.75,0.25\n");
    }

    #[test]
    fn missing_checkpoint_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(find_checkpoints(&dir.path().join("nope")), Err(Error::Io { .. })));
        assert!(matches!(find_checkpoints(dir.path()), Err(Error::Io { .. })));
    }
}

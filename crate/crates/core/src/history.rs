//! The run archive: one directory per epoch holding every individual's
//! dataset and metadata, the fitnesses and the live subtype limits.
//!
//! ```text
//! root/
//!   manifest.json
//!   epoch_0/
//!     individual_0.csv
//!     individual_0.meta.json
//!     ...
//!     fitness.csv
//!     subtypes.json
//!     generation.json
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{format_real, parse_real, CsvDatasetError, Dataset, FitnessValue, Individual};
use crate::distributions::{DistributionInstance, FamilySpec, Interval, SubtypeState};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FITNESS_FILE: &str = "fitness.csv";
pub const SUBTYPES_FILE: &str = "subtypes.json";
pub const GENERATION_FILE: &str = "generation.json";

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("I/O error at {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("epoch {epoch} is incomplete: missing {file}")]
    IncompleteEpoch { epoch: usize, file: String },
    #[error("epoch {epoch} is not in the archive ({available} epochs recorded)")]
    EpochOutOfRange { epoch: usize, available: usize },
    #[error("archive at {0} contains no epochs")]
    Empty(PathBuf),
    #[error("corrupt archive file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ArchiveError + '_ {
    move |source| ArchiveError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn corrupt(path: &Path, reason: impl ToString) -> ArchiveError {
    ArchiveError::Corrupt {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

/// One epoch's population, fitnesses and search-space state.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRecord {
    pub epoch: usize,
    pub individuals: Vec<Individual>,
    pub fitnesses: Vec<FitnessValue>,
    pub subtype_state: SubtypeState,
    pub mutation_probability: f64,
}

/// Receives each generation as soon as it has been evaluated.
pub trait GenerationSink {
    fn record(&mut self, record: &GenerationRecord) -> Result<(), ArchiveError>;

    /// Called once with the last generation of the run.
    fn finish(&mut self, _last: &GenerationRecord) -> Result<(), ArchiveError> {
        Ok(())
    }
}

/// Keeps every generation in memory.
#[derive(Debug, Clone, Default)]
pub struct MemoryHistory {
    pub generations: Vec<GenerationRecord>,
}

impl GenerationSink for MemoryHistory {
    fn record(&mut self, record: &GenerationRecord) -> Result<(), ArchiveError> {
        self.generations.push(record.clone());
        Ok(())
    }
}

/// Fans a generation out to several sinks.
pub struct Tee<'a>(pub Vec<&'a mut dyn GenerationSink>);

impl GenerationSink for Tee<'_> {
    fn record(&mut self, record: &GenerationRecord) -> Result<(), ArchiveError> {
        self.0.iter_mut().try_for_each(|s| s.record(record))
    }

    fn finish(&mut self, last: &GenerationRecord) -> Result<(), ArchiveError> {
        self.0.iter_mut().try_for_each(|s| s.finish(last))
    }
}

/// Which epochs are written to disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "keep")]
pub enum Retention {
    #[default]
    All,
    /// Every `interval`-th epoch plus the final one.
    Every { interval: usize },
}

impl Retention {
    fn keeps(&self, epoch: usize) -> bool {
        match self {
            Retention::All => true,
            Retention::Every { interval } => *interval <= 1 || epoch.is_multiple_of(*interval),
        }
    }
}

/// Streams generations into an on-disk archive.
#[derive(Debug)]
pub struct Archive {
    root: PathBuf,
    retention: Retention,
    last_written: Option<usize>,
}

impl Archive {
    pub fn create(root: impl Into<PathBuf>, retention: Retention) -> Result<Self, ArchiveError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(io_err(&root))?;
        Ok(Archive {
            root,
            retention,
            last_written: None,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }
}

impl GenerationSink for Archive {
    fn record(&mut self, record: &GenerationRecord) -> Result<(), ArchiveError> {
        if self.retention.keeps(record.epoch) {
            write_generation(&self.root, record)?;
            self.last_written = Some(record.epoch);
        }
        Ok(())
    }

    fn finish(&mut self, last: &GenerationRecord) -> Result<(), ArchiveError> {
        if self.last_written != Some(last.epoch) {
            write_generation(&self.root, last)?;
            self.last_written = Some(last.epoch);
        }
        Ok(())
    }
}

pub fn epoch_dir(root: &Path, epoch: usize) -> PathBuf {
    root.join(format!("epoch_{epoch}"))
}

/// Writes `bytes` to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ArchiveError> {
    let tmp = path.with_extension(match path.extension() {
        Some(ext) => format!("{}.tmp", ext.to_string_lossy()),
        None => "tmp".into(),
    });
    {
        let file = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        let mut w = BufWriter::new(file);
        w.write_all(bytes).map_err(io_err(&tmp))?;
        w.flush().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

#[derive(Debug, Serialize, Deserialize)]
struct ColumnMeta {
    family: String,
    subtype_id: u32,
    parameters: BTreeMap<String, f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct IndividualMeta {
    columns: Vec<ColumnMeta>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GenerationInfo {
    epoch: usize,
    size: usize,
    mutation_probability: f64,
    /// `[n_rows, n_cols]` per individual.
    shapes: Vec<[usize; 2]>,
}

pub fn metadata_json(metadata: &[DistributionInstance]) -> String {
    let doc = IndividualMeta {
        columns: metadata
            .iter()
            .map(|m| ColumnMeta {
                family: m.family().name().to_string(),
                subtype_id: m.subtype_id(),
                parameters: m
                    .family()
                    .parameter_names()
                    .iter()
                    .cloned()
                    .zip(m.parameters().iter().copied())
                    .collect(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("metadata serialises")
}

fn to_csv_bytes(ds: &Dataset) -> Vec<u8> {
    let mut buf = Vec::new();
    ds.write_csv(&mut buf).expect("writing to memory");
    buf
}

/// Writes one epoch directory. Every file is written atomically.
pub fn write_generation(root: &Path, record: &GenerationRecord) -> Result<(), ArchiveError> {
    let dir = epoch_dir(root, record.epoch);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    for (i, ind) in record.individuals.iter().enumerate() {
        write_atomic(
            &dir.join(format!("individual_{i}.csv")),
            &to_csv_bytes(ind.dataset()),
        )?;
        write_atomic(
            &dir.join(format!("individual_{i}.meta.json")),
            metadata_json(ind.metadata()).as_bytes(),
        )?;
    }
    let mut fitness = String::from("individual_index,fitness\n");
    for (i, f) in record.fitnesses.iter().enumerate() {
        fitness.push_str(&format!("{i},{}\n", format_real(f.value())));
    }
    write_atomic(&dir.join(FITNESS_FILE), fitness.as_bytes())?;
    let subtypes = serde_json::to_string_pretty(&record.subtype_state).expect("subtypes serialise");
    write_atomic(&dir.join(SUBTYPES_FILE), subtypes.as_bytes())?;
    let info = GenerationInfo {
        epoch: record.epoch,
        size: record.individuals.len(),
        mutation_probability: record.mutation_probability,
        shapes: record
            .individuals
            .iter()
            .map(|i| [i.n_rows(), i.n_cols()])
            .collect(),
    };
    write_atomic(
        &dir.join(GENERATION_FILE),
        serde_json::to_string_pretty(&info)
            .expect("info serialises")
            .as_bytes(),
    )
}

/// Epoch indices present in the archive, ascending.
pub fn list_epochs(root: &Path) -> Result<Vec<usize>, ArchiveError> {
    let mut epochs = Vec::new();
    for entry in fs::read_dir(root).map_err(io_err(root))? {
        let entry = entry.map_err(io_err(root))?;
        let name = entry.file_name();
        if let Some(n) = name.to_str().and_then(|s| s.strip_prefix("epoch_")) {
            if let Ok(e) = n.parse::<usize>() {
                if entry.path().is_dir() {
                    epochs.push(e);
                }
            }
        }
    }
    epochs.sort_unstable();
    Ok(epochs)
}

fn read_file(dir: &Path, epoch: usize, name: &str) -> Result<String, ArchiveError> {
    let path = dir.join(name);
    match fs::read_to_string(&path) {
        Ok(s) => Ok(s),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Err(ArchiveError::IncompleteEpoch {
            epoch,
            file: name.to_string(),
        }),
        Err(e) => Err(ArchiveError::Io { path, source: e }),
    }
}

fn check_epoch(root: &Path, epoch: usize) -> Result<PathBuf, ArchiveError> {
    let dir = epoch_dir(root, epoch);
    if !dir.is_dir() {
        let available = list_epochs(root).map(|e| e.len()).unwrap_or(0);
        return Err(ArchiveError::EpochOutOfRange { epoch, available });
    }
    Ok(dir)
}

fn read_info(dir: &Path, epoch: usize) -> Result<GenerationInfo, ArchiveError> {
    let text = read_file(dir, epoch, GENERATION_FILE)?;
    serde_json::from_str(&text).map_err(|e| corrupt(&dir.join(GENERATION_FILE), e))
}

/// Fitness values of one epoch, in individual order.
pub fn load_fitnesses(root: &Path, epoch: usize) -> Result<Vec<FitnessValue>, ArchiveError> {
    let dir = check_epoch(root, epoch)?;
    parse_fitness(&dir, epoch)
}

fn parse_fitness(dir: &Path, epoch: usize) -> Result<Vec<FitnessValue>, ArchiveError> {
    let path = dir.join(FITNESS_FILE);
    let text = read_file(dir, epoch, FITNESS_FILE)?;
    let mut out = Vec::new();
    for (line_no, line) in text.lines().enumerate().skip(1) {
        let Some((idx, value)) = line.split_once(',') else {
            return Err(corrupt(&path, format!("line {} has no comma", line_no + 1)));
        };
        if idx.trim().parse::<usize>().ok() != Some(out.len()) {
            return Err(corrupt(
                &path,
                format!("line {} is out of order", line_no + 1),
            ));
        }
        let v =
            parse_real(value).ok_or_else(|| corrupt(&path, format!("bad fitness `{value}`")))?;
        out.push(FitnessValue::new(v));
    }
    Ok(out)
}

/// Reads one individual's dataset without its metadata.
pub fn load_dataset(root: &Path, epoch: usize, index: usize) -> Result<Dataset, ArchiveError> {
    let dir = check_epoch(root, epoch)?;
    read_dataset(&dir, epoch, index)
}

fn read_dataset(dir: &Path, epoch: usize, index: usize) -> Result<Dataset, ArchiveError> {
    let name = format!("individual_{index}.csv");
    let text = read_file(dir, epoch, &name)?;
    Dataset::read_csv(text.as_bytes()).map_err(|e: CsvDatasetError| corrupt(&dir.join(&name), e))
}

fn read_metadata(
    dir: &Path,
    epoch: usize,
    index: usize,
    families: &[Arc<FamilySpec>],
) -> Result<Vec<DistributionInstance>, ArchiveError> {
    let name = format!("individual_{index}.meta.json");
    let path = dir.join(&name);
    let text = read_file(dir, epoch, &name)?;
    let doc: IndividualMeta = serde_json::from_str(&text).map_err(|e| corrupt(&path, e))?;
    doc.columns
        .into_iter()
        .map(|c| {
            let family_index = families
                .iter()
                .position(|f| f.name() == c.family)
                .ok_or_else(|| corrupt(&path, format!("unknown family `{}`", c.family)))?;
            let family = &families[family_index];
            let params = family
                .parameter_names()
                .iter()
                .map(|p| {
                    c.parameters
                        .get(p)
                        .copied()
                        .ok_or_else(|| corrupt(&path, format!("missing parameter `{p}`")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(DistributionInstance::from_parts(
                Arc::clone(family),
                family_index,
                c.subtype_id,
                params,
            ))
        })
        .collect()
}

/// Reconstructs a full generation. `families` must be the run's families in
/// their configured order.
pub fn load_generation(
    root: &Path,
    epoch: usize,
    families: &[Arc<FamilySpec>],
) -> Result<GenerationRecord, ArchiveError> {
    let dir = check_epoch(root, epoch)?;
    let info = read_info(&dir, epoch)?;
    let fitnesses = parse_fitness(&dir, epoch)?;
    if fitnesses.len() != info.size {
        return Err(corrupt(
            &dir.join(FITNESS_FILE),
            format!(
                "{} fitnesses for {} individuals",
                fitnesses.len(),
                info.size
            ),
        ));
    }
    let subtypes_text = read_file(&dir, epoch, SUBTYPES_FILE)?;
    let subtype_state: SubtypeState =
        serde_json::from_str(&subtypes_text).map_err(|e| corrupt(&dir.join(SUBTYPES_FILE), e))?;
    let mut individuals = Vec::with_capacity(info.size);
    for i in 0..info.size {
        let dataset = read_dataset(&dir, epoch, i)?;
        let metadata = read_metadata(&dir, epoch, i, families)?;
        let ind = Individual::new(dataset, metadata)
            .map_err(|e| corrupt(&dir.join(format!("individual_{i}.meta.json")), e))?;
        individuals.push(ind);
    }
    Ok(GenerationRecord {
        epoch,
        individuals,
        fitnesses,
        subtype_state,
        mutation_probability: info.mutation_probability,
    })
}

/// Limits of one subtype in the serialised subtype state.
pub fn subtype_limits<'a>(
    state: &'a SubtypeState,
    family: &str,
    id: u32,
) -> Option<&'a BTreeMap<String, Interval>> {
    state.get(family).and_then(|f| f.get(&id))
}

/// Enough to rerun an experiment bit-identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub engine_version: String,
    pub seed: u64,
    pub fitness: FitnessDescriptor,
    /// The experiment configuration exactly as resolved by the caller.
    pub config: serde_json::Value,
    #[serde(default)]
    pub stop_reason: Option<crate::evolution::StopReason>,
    #[serde(default)]
    pub epochs_completed: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessDescriptor {
    pub name: String,
    pub parameters: serde_json::Value,
}

pub fn write_manifest(root: &Path, manifest: &RunManifest) -> Result<(), ArchiveError> {
    fs::create_dir_all(root).map_err(io_err(root))?;
    let text = serde_json::to_string_pretty(manifest).expect("manifest serialises");
    write_atomic(&root.join(MANIFEST_FILE), text.as_bytes())
}

pub fn read_manifest(root: &Path) -> Result<RunManifest, ArchiveError> {
    let path = root.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|e| corrupt(&path, e))
}

/// One row of the progression table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub epoch: usize,
    pub size: usize,
    /// Individuals with infinite fitness; they are excluded from the quantiles.
    pub n_infinite: usize,
    pub best: Option<f64>,
    pub lower_quartile: Option<f64>,
    pub median: Option<f64>,
    pub upper_quartile: Option<f64>,
    pub worst: Option<f64>,
    pub rows_min: usize,
    pub rows_median: f64,
    pub rows_max: usize,
    pub cols_min: usize,
    pub cols_median: f64,
    pub cols_max: usize,
    pub best_index: usize,
    pub median_index: usize,
    pub worst_index: usize,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Index of the best, median and worst individual by fitness (stable order).
pub fn representatives(fitnesses: &[FitnessValue]) -> (usize, usize, usize) {
    let mut order: Vec<usize> = (0..fitnesses.len()).collect();
    order.sort_by_key(|&i| fitnesses[i]);
    (
        order[0],
        order[(order.len() - 1) / 2],
        order[order.len() - 1],
    )
}

pub fn summarise_generation(
    epoch: usize,
    fitnesses: &[FitnessValue],
    shapes: &[[usize; 2]],
) -> SummaryRow {
    let mut finite: Vec<f64> = fitnesses
        .iter()
        .filter(|f| f.is_finite())
        .map(|f| f.value())
        .collect();
    finite.sort_by(f64::total_cmp);
    let q = |p: f64| (!finite.is_empty()).then(|| quantile(&finite, p));
    let mut rows: Vec<usize> = shapes.iter().map(|s| s[0]).collect();
    let mut cols: Vec<usize> = shapes.iter().map(|s| s[1]).collect();
    rows.sort_unstable();
    cols.sort_unstable();
    let med = |v: &[usize]| quantile(&v.iter().map(|x| *x as f64).collect::<Vec<_>>(), 0.5);
    let (best_index, median_index, worst_index) = representatives(fitnesses);
    SummaryRow {
        epoch,
        size: fitnesses.len(),
        n_infinite: fitnesses.len() - finite.len(),
        best: q(0.0),
        lower_quartile: q(0.25),
        median: q(0.5),
        upper_quartile: q(0.75),
        worst: q(1.0),
        rows_min: rows[0],
        rows_median: med(&rows),
        rows_max: rows[rows.len() - 1],
        cols_min: cols[0],
        cols_median: med(&cols),
        cols_max: cols[cols.len() - 1],
        best_index,
        median_index,
        worst_index,
    }
}

/// Per-epoch progression table for every epoch in the archive.
pub fn summarise(root: &Path) -> Result<Vec<SummaryRow>, ArchiveError> {
    let epochs = list_epochs(root)?;
    if epochs.is_empty() {
        return Err(ArchiveError::Empty(root.to_path_buf()));
    }
    epochs
        .into_iter()
        .map(|epoch| {
            let dir = epoch_dir(root, epoch);
            let info = read_info(&dir, epoch)?;
            let fitnesses = parse_fitness(&dir, epoch)?;
            if fitnesses.is_empty() || fitnesses.len() != info.shapes.len() {
                return Err(corrupt(
                    &dir.join(FITNESS_FILE),
                    "fitness count does not match population",
                ));
            }
            Ok(summarise_generation(epoch, &fitnesses, &info.shapes))
        })
        .collect()
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "epoch",
        "size",
        "n_infinite",
        "best",
        "lower_quartile",
        "median",
        "upper_quartile",
        "worst",
        "rows_min",
        "rows_median",
        "rows_max",
        "cols_min",
        "cols_median",
        "cols_max",
        "best_index",
        "median_index",
        "worst_index",
    ])?;
    let opt = |v: Option<f64>| v.map(format_real).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.epoch.to_string(),
            r.size.to_string(),
            r.n_infinite.to_string(),
            opt(r.best),
            opt(r.lower_quartile),
            opt(r.median),
            opt(r.upper_quartile),
            opt(r.worst),
            r.rows_min.to_string(),
            format_real(r.rows_median),
            r.rows_max.to_string(),
            r.cols_min.to_string(),
            format_real(r.cols_median),
            r.cols_max.to_string(),
            r.best_index.to_string(),
            r.median_index.to_string(),
            r.worst_index.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

//! The subcommands, as library functions so they can be driven from tests.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use edo_core::clustering::{inertia, silhouette, ClusteringFitness, DbscanResult, Partition};
use edo_core::dataset::{format_real, Dataset, FitnessValue};
use edo_core::evolution::{run, RunOutcome};
use edo_core::geometry::convexity;
use edo_core::history::{
    self, list_epochs, load_dataset, load_fitnesses, read_manifest, write_manifest, Archive,
    FitnessDescriptor, GenerationRecord, GenerationSink, RunManifest, Tee,
};
use serde::Serialize;

use crate::config::ExperimentConfig;

/// A command failure and the exit status it maps to.
#[derive(Debug)]
pub enum Failure {
    /// Bad arguments or configuration; exit status 1.
    Usage(anyhow::Error),
    /// Anything that went wrong while doing the work; exit status 2.
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Usage(e) | Failure::Runtime(e) => e,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.error())
    }
}

pub type CmdResult<T> = Result<T, Failure>;

fn usage<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Usage(e.into())
}

fn runtime<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Runtime(e.into())
}

pub const ENV_ROOT: &str = "EDO_ROOT";

/// `--root`, then the config's output root, then `EDO_ROOT`.
pub fn resolve_root(flag: Option<&Path>, config: Option<&Path>) -> CmdResult<PathBuf> {
    if let Some(p) = flag.or(config) {
        return Ok(p.to_path_buf());
    }
    std::env::var_os(ENV_ROOT)
        .map(PathBuf::from)
        .ok_or_else(|| {
            usage(anyhow!(
                "no archive root: pass --root, set output.root, or set {ENV_ROOT}"
            ))
        })
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub root: Option<PathBuf>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub dry_run: bool,
    /// Suppress per-epoch progress lines.
    pub quiet: bool,
}

/// Prints one line per epoch: epoch, best and median fitness, best shape.
struct Progress<'w> {
    out: &'w mut dyn Write,
}

impl GenerationSink for Progress<'_> {
    fn record(&mut self, record: &GenerationRecord) -> Result<(), history::ArchiveError> {
        let (best, median, _) = history::representatives(&record.fitnesses);
        let shape = &record.individuals[best];
        let _ = writeln!(
            self.out,
            "epoch {:>5}  best {:<24}  median {:<24}  shape {}x{}",
            record.epoch,
            record.fitnesses[best].to_string(),
            record.fitnesses[median].to_string(),
            shape.n_rows(),
            shape.n_cols()
        );
        Ok(())
    }
}

fn archive_has_content(root: &Path) -> bool {
    root.join(history::MANIFEST_FILE).exists()
        || list_epochs(root).map(|e| !e.is_empty()).unwrap_or(false)
}

/// Runs an experiment into its archive root. Returns `None` for a dry run.
pub fn cmd_run(
    config: &ExperimentConfig,
    opts: &RunOptions,
    out: &mut dyn Write,
) -> CmdResult<Option<RunOutcome>> {
    let mut config = config.clone();
    if let Some(seed) = opts.seed {
        config.seed = seed;
    }
    if let Some(w) = opts.workers {
        config.workers = w;
    }
    let edo = config.to_edo_config().map_err(usage)?;
    let root = resolve_root(opts.root.as_deref(), config.output.root.as_deref())?;
    if opts.dry_run {
        writeln!(
            out,
            "# resolved configuration; archive root {}",
            root.display()
        )
        .map_err(runtime)?;
        write!(out, "{}", config.to_toml()).map_err(runtime)?;
        return Ok(None);
    }
    if archive_has_content(&root) {
        return Err(usage(anyhow!(
            "{} already holds an archive; choose another root",
            root.display()
        )));
    }

    // neither the root nor the worker count affects results, so they are
    // left out and archives of the same experiment compare equal
    let mut recorded = config.clone();
    recorded.output.root = None;
    let mut recorded = serde_json::to_value(&recorded).map_err(runtime)?;
    if let Some(map) = recorded.as_object_mut() {
        map.remove("workers");
    }
    let mut manifest = RunManifest {
        engine_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: config.seed,
        fitness: fitness_descriptor(&config.fitness),
        config: recorded,
        stop_reason: None,
        epochs_completed: None,
    };
    write_manifest(&root, &manifest).map_err(runtime)?;

    let mut archive = Archive::create(&root, config.output.retention.into()).map_err(runtime)?;
    let mut sink = std::io::sink();
    let mut progress = Progress {
        out: if opts.quiet { &mut sink } else { out },
    };
    let outcome = {
        let mut tee = Tee(vec![&mut archive, &mut progress]);
        run(&edo, &config.fitness, &mut tee)
            .with_context(|| format!("run failed; partial archive kept at {}", root.display()))
            .map_err(runtime)?
    };
    manifest.stop_reason = Some(outcome.stop_reason);
    manifest.epochs_completed = Some(outcome.fitness_history.len() - 1);
    write_manifest(&root, &manifest).map_err(runtime)?;
    Ok(Some(outcome))
}

fn fitness_descriptor(f: &ClusteringFitness) -> FitnessDescriptor {
    let mut parameters = serde_json::to_value(f).expect("fitness serialises");
    if let Some(map) = parameters.as_object_mut() {
        map.remove("name");
    }
    FitnessDescriptor {
        name: f.name().to_string(),
        parameters,
    }
}

/// The fitness recorded in an archive's manifest, if it is a clustering one.
pub fn archived_fitness(root: &Path) -> CmdResult<Option<ClusteringFitness>> {
    let manifest = read_manifest(root).map_err(runtime)?;
    let mut value = manifest.fitness.parameters.clone();
    if let Some(map) = value.as_object_mut() {
        map.insert("name".into(), manifest.fitness.name.clone().into());
    }
    Ok(serde_json::from_value(value).ok())
}

fn sampled_epochs(root: &Path, interval: Option<usize>) -> CmdResult<Vec<usize>> {
    let epochs = list_epochs(root).map_err(runtime)?;
    if epochs.is_empty() {
        return Err(runtime(anyhow!("{} holds no epochs", root.display())));
    }
    Ok(match interval {
        None | Some(1) => epochs,
        Some(0) => return Err(usage(anyhow!("--interval must be at least 1"))),
        Some(k) => epochs.into_iter().filter(|e| e % k == 0).collect(),
    })
}

/// Writes the per-epoch progression table.
pub fn cmd_summarise(root: &Path, interval: Option<usize>, out: &mut dyn Write) -> CmdResult<()> {
    if interval == Some(0) {
        return Err(usage(anyhow!("--interval must be at least 1")));
    }
    let rows = history::summarise(root).map_err(runtime)?;
    let rows: Vec<_> = rows
        .into_iter()
        .filter(|r| interval.is_none_or(|k| r.epoch % k == 0))
        .collect();
    history::write_summary_csv(&rows, out).map_err(runtime)
}

/// Every point of every individual at the sampled epochs.
pub fn cmd_coverage(root: &Path, interval: Option<usize>, out: &mut dyn Write) -> CmdResult<usize> {
    let epochs = sampled_epochs(root, interval)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "individual", "x", "y"])
        .map_err(runtime)?;
    let mut rows = 0;
    for epoch in epochs {
        let n = load_fitnesses(root, epoch).map_err(runtime)?.len();
        for i in 0..n {
            let ds = load_dataset(root, epoch, i).map_err(runtime)?;
            if ds.n_cols() != 2 {
                return Err(runtime(anyhow!(
                    "coverage needs two-dimensional datasets; epoch {epoch} individual {i} has {} columns",
                    ds.n_cols()
                )));
            }
            for r in 0..ds.n_rows() {
                w.write_record([
                    epoch.to_string(),
                    i.to_string(),
                    format_real(ds.get(r, 0)),
                    format_real(ds.get(r, 1)),
                ])
                .map_err(runtime)?;
                rows += 1;
            }
        }
    }
    w.flush().map_err(runtime)?;
    Ok(rows)
}

/// Analysis of one exported individual.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Representative {
    pub role: &'static str,
    pub index: usize,
    pub fitness: FitnessValue,
    pub rows: usize,
    pub cols: usize,
    pub inertia: Option<f64>,
    pub silhouette: Option<f64>,
    pub dbscan_clusters: Option<usize>,
    pub dbscan_noise: Option<usize>,
    /// Mean per-cluster convexity; two-dimensional datasets only.
    pub kmeans_convexity: Option<f64>,
    pub dbscan_convexity: Option<f64>,
}

/// Convexity of each labelled group of a two-dimensional dataset.
pub fn cluster_convexities(x: &Dataset, labels: &[Option<usize>]) -> Vec<(usize, usize, f64)> {
    let k = labels.iter().flatten().max().map_or(0, |m| m + 1);
    (0..k)
        .filter_map(|c| {
            let pts: Vec<[f64; 2]> = (0..x.n_rows())
                .filter(|&i| labels[i] == Some(c))
                .map(|i| [x.get(i, 0), x.get(i, 1)])
                .collect();
            (!pts.is_empty()).then(|| (c, pts.len(), convexity(&pts)))
        })
        .collect()
}

fn mean(values: &[(usize, usize, f64)]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().map(|v| v.2).sum::<f64>() / values.len() as f64)
}

struct Analysis {
    summary: Representative,
    partition: Option<Partition>,
    dbscan: Option<DbscanResult>,
    kmeans_convexity: Vec<(usize, usize, f64)>,
    dbscan_convexity: Vec<(usize, usize, f64)>,
}

fn analyse(
    role: &'static str,
    index: usize,
    fitness: FitnessValue,
    x: &Dataset,
    f: Option<&ClusteringFitness>,
) -> Analysis {
    let mut summary = Representative {
        role,
        index,
        fitness,
        rows: x.n_rows(),
        cols: x.n_cols(),
        inertia: None,
        silhouette: None,
        dbscan_clusters: None,
        dbscan_noise: None,
        kmeans_convexity: None,
        dbscan_convexity: None,
    };
    let mut out = Analysis {
        summary: summary.clone(),
        partition: None,
        dbscan: None,
        kmeans_convexity: Vec::new(),
        dbscan_convexity: Vec::new(),
    };
    let Some(f) = f else { return out };
    let two_d = x.n_cols() == 2;
    if let Ok(p) = f.kmeans().fit(x) {
        summary.inertia = inertia(&p, x).ok();
        summary.silhouette = silhouette(&p.labels, x).ok();
        if two_d {
            let labels: Vec<Option<usize>> = p.labels.iter().map(|l| Some(*l)).collect();
            out.kmeans_convexity = cluster_convexities(x, &labels);
            summary.kmeans_convexity = mean(&out.kmeans_convexity);
        }
        out.partition = Some(p);
    }
    if let Some(db) = f.dbscan() {
        let r = db.fit(x);
        summary.dbscan_clusters = Some(r.n_clusters);
        summary.dbscan_noise = Some(r.n_noise());
        if two_d {
            out.dbscan_convexity = cluster_convexities(x, &r.labels);
            summary.dbscan_convexity = mean(&out.dbscan_convexity);
        }
        out.dbscan = Some(r);
    }
    out.summary = summary;
    out
}

fn opt(v: Option<f64>) -> String {
    v.map(format_real).unwrap_or_default()
}

fn write_file(path: &Path, bytes: &[u8]) -> CmdResult<()> {
    fs::write(path, bytes)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(runtime)
}

/// Exports the best, median and worst individuals of an epoch (default:
/// the last archived one) with their clustering analysis.
pub fn cmd_representatives(
    root: &Path,
    epoch: Option<usize>,
    out_dir: &Path,
) -> CmdResult<Vec<Representative>> {
    let epochs = list_epochs(root).map_err(runtime)?;
    let epoch = match epoch {
        Some(e) if epochs.contains(&e) => e,
        Some(e) => {
            return Err(runtime(anyhow!(
                "epoch {e} is not in the archive at {}",
                root.display()
            )))
        }
        None => *epochs
            .last()
            .ok_or_else(|| runtime(anyhow!("{} holds no epochs", root.display())))?,
    };
    let fitness = archived_fitness(root)?;
    let fitnesses = load_fitnesses(root, epoch).map_err(runtime)?;
    let (best, median, worst) = history::representatives(&fitnesses);
    fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))
        .map_err(runtime)?;

    let mut reports = Vec::new();
    for (role, index) in [("best", best), ("median", median), ("worst", worst)] {
        let x = load_dataset(root, epoch, index).map_err(runtime)?;
        let mut buf = Vec::new();
        x.write_csv(&mut buf).map_err(runtime)?;
        write_file(&out_dir.join(format!("{role}.csv")), &buf)?;
        let a = analyse(role, index, fitnesses[index], &x, fitness.as_ref());

        if let Some(p) = &a.partition {
            let mut w = csv::Writer::from_writer(Vec::new());
            let mut header = vec!["row".to_string(), "kmeans".to_string()];
            if a.dbscan.is_some() {
                header.push("dbscan".into());
            }
            w.write_record(&header).map_err(runtime)?;
            for (i, l) in p.labels.iter().enumerate() {
                let mut rec = vec![i.to_string(), l.to_string()];
                if let Some(d) = &a.dbscan {
                    rec.push(d.labels[i].map_or("noise".to_string(), |c| c.to_string()));
                }
                w.write_record(&rec).map_err(runtime)?;
            }
            write_file(
                &out_dir.join(format!("{role}.labels.csv")),
                &w.into_inner().map_err(|e| runtime(anyhow!("{e}")))?,
            )?;

            let mut w = csv::Writer::from_writer(Vec::new());
            let header: Vec<String> = std::iter::once("cluster".to_string())
                .chain((0..x.n_cols()).map(|j| format!("c{j}")))
                .collect();
            w.write_record(&header).map_err(runtime)?;
            for (c, centroid) in p.centroids.iter().flatten().enumerate() {
                let rec: Vec<String> = std::iter::once(c.to_string())
                    .chain(centroid.iter().map(|v| format_real(*v)))
                    .collect();
                w.write_record(&rec).map_err(runtime)?;
            }
            write_file(
                &out_dir.join(format!("{role}.centroids.csv")),
                &w.into_inner().map_err(|e| runtime(anyhow!("{e}")))?,
            )?;
        }

        if x.n_cols() == 2 && a.partition.is_some() {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["algorithm", "cluster", "size", "convexity"])
                .map_err(runtime)?;
            for (name, values) in [
                ("kmeans", &a.kmeans_convexity),
                ("dbscan", &a.dbscan_convexity),
            ] {
                for (c, size, v) in values {
                    w.write_record([
                        name.to_string(),
                        c.to_string(),
                        size.to_string(),
                        format_real(*v),
                    ])
                    .map_err(runtime)?;
                }
            }
            write_file(
                &out_dir.join(format!("{role}.convexity.csv")),
                &w.into_inner().map_err(|e| runtime(anyhow!("{e}")))?,
            )?;
        }
        reports.push(a.summary);
    }

    let two_d = reports.iter().all(|r| r.cols == 2) && fitness.is_some();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![
        "epoch",
        "role",
        "index",
        "fitness",
        "rows",
        "cols",
        "inertia",
        "silhouette",
        "dbscan_clusters",
        "dbscan_noise",
    ];
    if two_d {
        header.extend(["kmeans_convexity", "dbscan_convexity"]);
    }
    w.write_record(&header).map_err(runtime)?;
    for r in &reports {
        let mut rec = vec![
            epoch.to_string(),
            r.role.to_string(),
            r.index.to_string(),
            r.fitness.to_string(),
            r.rows.to_string(),
            r.cols.to_string(),
            opt(r.inertia),
            opt(r.silhouette),
            r.dbscan_clusters.map(|v| v.to_string()).unwrap_or_default(),
            r.dbscan_noise.map(|v| v.to_string()).unwrap_or_default(),
        ];
        if two_d {
            rec.push(opt(r.kmeans_convexity));
            rec.push(opt(r.dbscan_convexity));
        }
        w.write_record(&rec).map_err(runtime)?;
    }
    write_file(
        &out_dir.join("representatives.csv"),
        &w.into_inner().map_err(|e| runtime(anyhow!("{e}")))?,
    )?;
    Ok(reports)
}

/// Reads a config file, mapping failures to usage errors.
pub fn load_config(path: &Path) -> CmdResult<ExperimentConfig> {
    ExperimentConfig::load(path).map_err(usage)
}

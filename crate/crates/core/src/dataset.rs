//! Datasets, individuals and their shape limits.

use std::cmp::Ordering;
use std::fmt;
use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{choose_family, DistributionInstance, SearchSpace};
use crate::error::{ConfigError, DataError};

/// Rectangular, column-major matrix of reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    columns: Vec<Vec<f64>>,
    n_rows: usize,
}

impl Dataset {
    pub fn from_columns(columns: Vec<Vec<f64>>) -> Result<Self, DataError> {
        let n_rows = columns.first().ok_or(DataError::NoColumns)?.len();
        if n_rows == 0 {
            return Err(DataError::EmptyColumn);
        }
        for (column, c) in columns.iter().enumerate() {
            if c.len() != n_rows {
                return Err(DataError::Ragged {
                    column,
                    expected: n_rows,
                    found: c.len(),
                });
            }
        }
        Ok(Dataset { columns, n_rows })
    }

    /// Builds a dataset from rows of equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, DataError> {
        let n_cols = rows.first().ok_or(DataError::EmptyColumn)?.len();
        let mut columns = vec![Vec::with_capacity(rows.len()); n_cols];
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n_cols {
                return Err(DataError::Ragged {
                    column: i,
                    expected: n_cols,
                    found: row.len(),
                });
            }
            for (c, v) in columns.iter_mut().zip(row) {
                c.push(*v);
            }
        }
        Self::from_columns(columns)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.columns[col][row]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }

    /// Row-major copy of all values.
    pub fn to_row_major(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_rows * self.n_cols());
        for i in 0..self.n_rows {
            out.extend(self.columns.iter().map(|c| c[i]));
        }
        out
    }

    /// Writes the dataset as CSV with a `c0,c1,...` header. Values use the
    /// shortest decimal representation that parses back to the same bits.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record((0..self.n_cols()).map(|j| format!("c{j}")))?;
        for i in 0..self.n_rows {
            w.write_record(self.columns.iter().map(|c| format_real(c[i])))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, CsvDatasetError> {
        let mut r = csv::Reader::from_reader(reader);
        let n_cols = r.headers()?.len();
        let mut columns = vec![Vec::new(); n_cols];
        for record in r.records() {
            let record = record?;
            for (c, field) in columns.iter_mut().zip(record.iter()) {
                c.push(parse_real(field).ok_or_else(|| CsvDatasetError::Value(field.to_string()))?);
            }
        }
        Ok(Self::from_columns(columns)?)
    }

    pub(crate) fn columns_mut(&mut self) -> &mut Vec<Vec<f64>> {
        &mut self.columns
    }

    pub(crate) fn set_n_rows(&mut self, n: usize) {
        self.n_rows = n;
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CsvDatasetError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("unparseable value `{0}`")]
    Value(String),
    #[error(transparent)]
    Shape(#[from] DataError),
}

/// Shortest round-trip decimal; infinities are written as `inf` / `-inf`.
pub fn format_real(x: f64) -> String {
    if x == f64::INFINITY {
        "inf".into()
    } else if x == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        // `Display` for f64 is the shortest representation that round-trips.
        format!("{x}")
    }
}

pub fn parse_real(s: &str) -> Option<f64> {
    match s.trim() {
        "inf" | "+inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        other => other.parse().ok(),
    }
}

/// A dataset together with one distribution instance per column.
#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    dataset: Dataset,
    metadata: Vec<DistributionInstance>,
}

impl Individual {
    pub fn new(dataset: Dataset, metadata: Vec<DistributionInstance>) -> Result<Self, DataError> {
        if metadata.len() != dataset.n_cols() {
            return Err(DataError::MetadataMismatch {
                metadata: metadata.len(),
                columns: dataset.n_cols(),
            });
        }
        Ok(Individual { dataset, metadata })
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn metadata(&self) -> &[DistributionInstance] {
        &self.metadata
    }

    pub fn n_rows(&self) -> usize {
        self.dataset.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.dataset.n_cols()
    }

    /// Number of columns drawn from each family, indexed like the search space.
    pub fn family_counts(&self, n_families: usize) -> Vec<usize> {
        let mut counts = vec![0; n_families];
        for m in &self.metadata {
            counts[m.family_index()] += 1;
        }
        counts
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut Dataset, &mut Vec<DistributionInstance>) {
        (&mut self.dataset, &mut self.metadata)
    }

    pub(crate) fn from_parts_unchecked(
        dataset: Dataset,
        metadata: Vec<DistributionInstance>,
    ) -> Self {
        debug_assert_eq!(dataset.n_cols(), metadata.len());
        Individual { dataset, metadata }
    }
}

/// Inclusive limits on the number of rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct RowLimits {
    pub min: usize,
    pub max: usize,
}

impl From<[usize; 2]> for RowLimits {
    fn from([min, max]: [usize; 2]) -> Self {
        RowLimits { min, max }
    }
}

impl From<RowLimits> for [usize; 2] {
    fn from(r: RowLimits) -> Self {
        [r.min, r.max]
    }
}

impl RowLimits {
    pub fn new(min: usize, max: usize) -> Result<Self, ConfigError> {
        let r = RowLimits { min, max };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.min == 0 {
            return Err(ConfigError::field(
                "row_limits",
                "minimum must be at least 1",
            ));
        }
        if self.min > self.max {
            return Err(ConfigError::field("row_limits", "minimum exceeds maximum"));
        }
        Ok(())
    }

    pub fn contains(&self, n: usize) -> bool {
        self.min <= n && n <= self.max
    }
}

/// Column count bounds for one family; `max = None` is unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FamilyColumns {
    pub min: usize,
    #[serde(default)]
    pub max: Option<usize>,
}

/// Aggregate column limits plus optional per-family limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnLimits {
    pub min: usize,
    pub max: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_family: Option<Vec<FamilyColumns>>,
}

impl ColumnLimits {
    pub fn aggregate(min: usize, max: usize) -> Self {
        ColumnLimits {
            min,
            max,
            per_family: None,
        }
    }

    fn family_min(&self, j: usize) -> usize {
        self.per_family.as_ref().map_or(0, |p| p[j].min)
    }

    fn family_max(&self, j: usize) -> Option<usize> {
        self.per_family.as_ref().and_then(|p| p[j].max)
    }

    /// Validates against the search space and returns the feasible range of
    /// total column counts.
    pub fn feasible_range(&self, weights: &[f64]) -> Result<(usize, usize), ConfigError> {
        if self.min == 0 {
            return Err(ConfigError::field(
                "col_limits",
                "minimum must be at least 1",
            ));
        }
        if self.min > self.max {
            return Err(ConfigError::field("col_limits", "minimum exceeds maximum"));
        }
        let n = weights.len();
        if let Some(per) = &self.per_family {
            if per.len() != n {
                return Err(ConfigError::field(
                    "col_limits.per_family",
                    format!("{} entries for {} families", per.len(), n),
                ));
            }
            for (j, f) in per.iter().enumerate() {
                if f.max.is_some_and(|m| m < f.min) {
                    return Err(ConfigError::field(
                        format!("col_limits.per_family[{j}]"),
                        "minimum exceeds maximum",
                    ));
                }
            }
        }
        let mandatory: usize = (0..n).map(|j| self.family_min(j)).sum();
        let mut capacity = mandatory;
        for (j, w) in weights.iter().enumerate() {
            if *w > 0.0 {
                match self.family_max(j) {
                    Some(m) => capacity += m - self.family_min(j),
                    None => capacity = usize::MAX,
                }
            }
            if capacity == usize::MAX {
                break;
            }
        }
        let lo = self.min.max(mandatory);
        let hi = self.max.min(capacity);
        if lo > hi {
            return Err(ConfigError::InfeasibleColumns(format!(
                "need at least {lo} columns but at most {hi} can be drawn"
            )));
        }
        Ok((lo, hi))
    }

    /// Whether a column of `family` may be appended given current counts.
    pub fn can_add(&self, counts: &[usize], family: usize) -> bool {
        let total: usize = counts.iter().sum();
        total < self.max && self.family_max(family).is_none_or(|m| counts[family] < m)
    }

    /// Whether a column of `family` may be removed given current counts.
    pub fn can_remove(&self, counts: &[usize], family: usize) -> bool {
        let total: usize = counts.iter().sum();
        total > self.min && counts[family] > self.family_min(family)
    }

    pub fn admits(&self, counts: &[usize]) -> bool {
        let total: usize = counts.iter().sum();
        if total < self.min || total > self.max {
            return false;
        }
        counts
            .iter()
            .enumerate()
            .all(|(j, c)| *c >= self.family_min(j) && self.family_max(j).is_none_or(|m| *c <= m))
    }
}

/// A fitness score under minimisation; `+inf` is the worst value and NaN
/// is treated as `+inf`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FitnessValue(f64);

impl FitnessValue {
    pub const WORST: FitnessValue = FitnessValue(f64::INFINITY);

    pub fn new(value: f64) -> Self {
        if value.is_nan() {
            Self::WORST
        } else {
            FitnessValue(value)
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_finite(self) -> bool {
        self.0.is_finite()
    }
}

impl From<f64> for FitnessValue {
    fn from(v: f64) -> Self {
        FitnessValue::new(v)
    }
}

impl Eq for FitnessValue {}

impl PartialOrd for FitnessValue {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for FitnessValue {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl fmt::Display for FitnessValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_real(self.0))
    }
}

/// `n_rows` independent draws from `instance`.
pub fn fill_column<R: Rng + ?Sized>(
    instance: &DistributionInstance,
    n_rows: usize,
    rng: &mut R,
) -> Result<Vec<f64>, DataError> {
    if n_rows == 0 {
        return Err(DataError::EmptyColumn);
    }
    Ok((0..n_rows).map(|_| instance.sample(rng)).collect())
}

/// Picks a family for an extra column among those that can still take one.
pub(crate) fn choose_addable_family<R: Rng + ?Sized>(
    space: &SearchSpace,
    col_limits: &ColumnLimits,
    counts: &[usize],
    rng: &mut R,
) -> Option<usize> {
    let weights: Vec<f64> = space
        .weights()
        .iter()
        .enumerate()
        .map(|(j, w)| {
            if col_limits.can_add(counts, j) {
                *w
            } else {
                0.0
            }
        })
        .collect();
    if weights.iter().sum::<f64>() <= 0.0 {
        return None;
    }
    choose_family(space.families(), &weights, rng).ok()
}

/// Creates a random individual: a row count uniform over the row limits, a
/// column count uniform over the feasible range, then one freshly sampled
/// column per slot. Per-family minima are placed first.
pub fn create_individual<R: Rng + ?Sized>(
    row_limits: RowLimits,
    col_limits: &ColumnLimits,
    space: &mut SearchSpace,
    rng: &mut R,
) -> Result<Individual, ConfigError> {
    row_limits.validate()?;
    let (lo, hi) = col_limits.feasible_range(space.weights())?;
    let n_rows = rng.random_range(row_limits.min..=row_limits.max);
    let n_cols = rng.random_range(lo..=hi);

    let n_families = space.families().len();
    let mut counts = vec![0usize; n_families];
    let mut assignment = Vec::with_capacity(n_cols);
    for (j, count) in counts.iter_mut().enumerate() {
        *count = col_limits.family_min(j);
        assignment.extend(std::iter::repeat_n(j, *count));
    }
    while assignment.len() < n_cols {
        let j = choose_addable_family(space, col_limits, &counts, rng).ok_or_else(|| {
            ConfigError::InfeasibleColumns("no family can take another column".into())
        })?;
        assignment.push(j);
        counts[j] += 1;
    }

    let mut columns = Vec::with_capacity(n_cols);
    let mut metadata = Vec::with_capacity(n_cols);
    for family in assignment {
        let instance = space.new_instance(family, rng);
        columns.push(fill_column(&instance, n_rows, rng).expect("n_rows >= 1"));
        metadata.push(instance);
    }
    let dataset = Dataset::from_columns(columns).expect("rectangular by construction");
    Ok(Individual::from_parts_unchecked(dataset, metadata))
}

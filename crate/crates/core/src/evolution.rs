//! The evolutionary loop and its operators: truncation selection with lucky
//! individuals, subtype pruning and shrinkage, crossover and mutation.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{
    choose_addable_family, create_individual, fill_column, ColumnLimits, FitnessValue, Individual,
    RowLimits,
};
use crate::distributions::{validate_weights, FamilySpec, SearchSpace};
use crate::error::ConfigError;
use crate::history::{ArchiveError, GenerationRecord, GenerationSink};

/// The random number generator used throughout a run.
pub type EdoRng = ChaCha8Rng;

pub type FitnessError = Box<dyn std::error::Error + Send + Sync>;

/// A fitness function under minimisation.
///
/// Implementations must be pure: the same individual and the same `rng`
/// state give the same value. Every evaluation gets its own stream.
pub trait Fitness: Sync {
    fn evaluate(
        &self,
        individual: &Individual,
        rng: &mut EdoRng,
    ) -> Result<FitnessValue, FitnessError>;
}

impl<F> Fitness for F
where
    F: Fn(&Individual, &mut EdoRng) -> Result<FitnessValue, FitnessError> + Sync,
{
    fn evaluate(
        &self,
        individual: &Individual,
        rng: &mut EdoRng,
    ) -> Result<FitnessValue, FitnessError> {
        self(individual, rng)
    }
}

/// Decides whether to stop before the next epoch, given every epoch's fitnesses so far.
pub trait StoppingRule: fmt::Debug + Send + Sync {
    fn should_stop(&self, history: &[Vec<FitnessValue>]) -> bool;
}

/// Produces the mutation probability for the next epoch.
pub trait MutationSchedule: fmt::Debug + Send + Sync {
    fn next_probability(&self, epoch: usize, history: &[Vec<FitnessValue>], current: f64) -> f64;
}

/// Stops when the best fitness has not improved over the last `patience` epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoImprovement {
    pub patience: usize,
}

impl StoppingRule for NoImprovement {
    fn should_stop(&self, history: &[Vec<FitnessValue>]) -> bool {
        if history.len() <= self.patience {
            return false;
        }
        let best =
            |gen: &Vec<FitnessValue>| gen.iter().copied().min().unwrap_or(FitnessValue::WORST);
        let split = history.len() - self.patience;
        let before = history[..split]
            .iter()
            .map(best)
            .min()
            .unwrap_or(FitnessValue::WORST);
        let recent = history[split..]
            .iter()
            .map(best)
            .min()
            .unwrap_or(FitnessValue::WORST);
        recent >= before
    }
}

/// Multiplies the mutation probability by `factor` every epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultiplicativeDecay {
    pub factor: f64,
}

impl MutationSchedule for MultiplicativeDecay {
    fn next_probability(&self, _epoch: usize, _history: &[Vec<FitnessValue>], current: f64) -> f64 {
        current * self.factor
    }
}

/// Every parameter of a run.
#[derive(Debug, Clone)]
pub struct EdoConfig {
    pub population_size: usize,
    pub max_iter: usize,
    pub row_limits: RowLimits,
    pub col_limits: ColumnLimits,
    pub families: Vec<FamilySpec>,
    pub weights: Vec<f64>,
    pub best_prop: f64,
    pub lucky_prop: f64,
    pub mutation_prob: f64,
    pub shrinkage: Option<f64>,
    pub seed: u64,
    pub stopping: Option<Arc<dyn StoppingRule>>,
    pub mutation_schedule: Option<Arc<dyn MutationSchedule>>,
    /// Worker threads for fitness evaluation; 0 uses every core. Does not
    /// affect results.
    pub workers: usize,
}

/// `ceil(prop * n)`, with a small slack so that products such as `0.2 * 100`
/// are not pushed up by rounding.
pub fn proportion_count(prop: f64, n: usize) -> usize {
    let raw = prop * n as f64;
    let rounded = raw.round();
    if (raw - rounded).abs() < 1e-9 {
        rounded as usize
    } else {
        raw.ceil() as usize
    }
}

fn check_probability(field: &str, p: f64) -> Result<(), ConfigError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(ConfigError::field(field, format!("{p} is not in [0, 1]")))
    }
}

impl EdoConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.population_size == 0 {
            return Err(ConfigError::field(
                "size",
                "population size must be positive",
            ));
        }
        self.row_limits.validate()?;
        if self.families.is_empty() {
            return Err(ConfigError::field(
                "families",
                "at least one family is required",
            ));
        }
        validate_weights(self.families.len(), &self.weights)?;
        self.col_limits.feasible_range(&self.weights)?;
        if !(self.best_prop > 0.0 && self.best_prop <= 1.0) {
            return Err(ConfigError::field("best_prop", "must lie in (0, 1]"));
        }
        check_probability("lucky_prop", self.lucky_prop)?;
        check_probability("mutation_prob", self.mutation_prob)?;
        if let Some(s) = self.shrinkage {
            check_probability("shrinkage", s)?;
        }
        let n_best = proportion_count(self.best_prop, self.population_size);
        let n_lucky = proportion_count(self.lucky_prop, self.population_size);
        if n_best == 0 {
            return Err(ConfigError::field("best_prop", "selects no parents"));
        }
        if n_best + n_lucky > self.population_size {
            return Err(ConfigError::field(
                "lucky_prop",
                format!(
                    "{n_best} best plus {n_lucky} lucky parents exceed the population of {}",
                    self.population_size
                ),
            ));
        }
        Ok(())
    }
}

/// Individuals and their fitnesses, index-aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub individuals: Vec<Individual>,
    pub fitnesses: Vec<FitnessValue>,
}

/// Indices of the parents: the `ceil(bN)` fittest (ties broken by index),
/// then `ceil(lN)` drawn uniformly without replacement from the rest.
pub fn select_parent_indices<R: Rng + ?Sized>(
    fitnesses: &[FitnessValue],
    best_prop: f64,
    lucky_prop: f64,
    rng: &mut R,
) -> Vec<usize> {
    let n = fitnesses.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| fitnesses[i]);
    let n_best = proportion_count(best_prop, n).clamp(1, n);
    let mut parents = order[..n_best].to_vec();
    let rest = &order[n_best..];
    let n_lucky = proportion_count(lucky_prop, n).min(rest.len());
    if n_lucky > 0 {
        parents.extend(
            index::sample(rng, rest.len(), n_lucky)
                .into_iter()
                .map(|k| rest[k]),
        );
    }
    parents
}

pub fn select_parents<R: Rng + ?Sized>(
    population: &Population,
    best_prop: f64,
    lucky_prop: f64,
    rng: &mut R,
) -> Vec<Individual> {
    select_parent_indices(&population.fitnesses, best_prop, lucky_prop, rng)
        .into_iter()
        .map(|i| population.individuals[i].clone())
        .collect()
}

/// Retires every subtype that no parent column references.
pub fn prune_subtypes(parents: &[Individual], space: &mut SearchSpace) {
    let referenced: BTreeSet<(usize, u32)> = parents
        .iter()
        .flat_map(|p| {
            p.metadata()
                .iter()
                .map(|m| (m.family_index(), m.subtype_id()))
        })
        .collect();
    space.retain_subtypes(&referenced);
}

/// Uniform crossover of two datasets: each dimension comes from one parent,
/// and the columns are drawn without replacement from both parents' pool.
/// Long columns lose randomly chosen entries; short ones are topped up from
/// their own metadata.
pub fn crossover<R: Rng + ?Sized>(a: &Individual, b: &Individual, rng: &mut R) -> Individual {
    let n_rows = if rng.random_bool(0.5) {
        a.n_rows()
    } else {
        b.n_rows()
    };
    let n_cols = if rng.random_bool(0.5) {
        a.n_cols()
    } else {
        b.n_cols()
    };

    let pool: Vec<(&[f64], _)> = a
        .dataset()
        .columns()
        .iter()
        .zip(a.metadata())
        .chain(b.dataset().columns().iter().zip(b.metadata()))
        .map(|(c, m)| (c.as_slice(), m))
        .collect();

    let mut columns = Vec::with_capacity(n_cols);
    let mut metadata = Vec::with_capacity(n_cols);
    for k in index::sample(rng, pool.len(), n_cols) {
        let (source, meta) = pool[k];
        columns.push(resize_column(source, meta, n_rows, rng));
        metadata.push(meta.clone());
    }
    let dataset =
        crate::dataset::Dataset::from_columns(columns).expect("columns resized to n_rows");
    Individual::from_parts_unchecked(dataset, metadata)
}

fn resize_column<R: Rng + ?Sized>(
    source: &[f64],
    meta: &crate::distributions::DistributionInstance,
    n_rows: usize,
    rng: &mut R,
) -> Vec<f64> {
    use std::cmp::Ordering;
    match source.len().cmp(&n_rows) {
        Ordering::Equal => source.to_vec(),
        Ordering::Greater => {
            let mut keep = index::sample(rng, source.len(), n_rows).into_vec();
            keep.sort_unstable();
            keep.into_iter().map(|i| source[i]).collect()
        }
        Ordering::Less => {
            let mut col = source.to_vec();
            col.extend((source.len()..n_rows).map(|_| meta.sample(rng)));
            col
        }
    }
}

/// Restores per-family column limits after crossover by dropping random
/// surplus columns and adding fresh ones where a family is short. The
/// aggregate count is preserved whenever possible.
pub fn repair_columns<R: Rng + ?Sized>(
    individual: Individual,
    col_limits: &ColumnLimits,
    space: &mut SearchSpace,
    rng: &mut R,
) -> Individual {
    let n_families = space.families().len();
    let Some(per) = col_limits.per_family.clone() else {
        return individual;
    };
    let mut ind = individual;
    if col_limits.admits(&ind.family_counts(n_families)) {
        return ind;
    }
    let n_rows = ind.n_rows();
    let (dataset, metadata) = ind.parts_mut();
    // drop surplus columns of families over their maximum
    for (j, limit) in per.iter().enumerate() {
        let Some(max) = limit.max else { continue };
        loop {
            let cols: Vec<usize> = (0..metadata.len())
                .filter(|&c| metadata[c].family_index() == j)
                .collect();
            if cols.len() <= max {
                break;
            }
            let victim = cols[rng.random_range(0..cols.len())];
            metadata.remove(victim);
            dataset.columns_mut().remove(victim);
        }
    }
    let mut counts = vec![0usize; n_families];
    for m in metadata.iter() {
        counts[m.family_index()] += 1;
    }
    // fill families below their minimum, then the aggregate minimum
    for (j, limit) in per.iter().enumerate() {
        while counts[j] < limit.min {
            let inst = space.new_instance(j, rng);
            dataset
                .columns_mut()
                .push(fill_column(&inst, n_rows, rng).expect("n_rows >= 1"));
            metadata.push(inst);
            counts[j] += 1;
        }
    }
    while counts.iter().sum::<usize>() < col_limits.min {
        let Some(j) = choose_addable_family(space, col_limits, &counts, rng) else {
            break;
        };
        let inst = space.new_instance(j, rng);
        dataset
            .columns_mut()
            .push(fill_column(&inst, n_rows, rng).expect("n_rows >= 1"));
        metadata.push(inst);
        counts[j] += 1;
    }
    // too many columns overall: remove removable ones
    while counts.iter().sum::<usize>() > col_limits.max {
        let removable: Vec<usize> = (0..metadata.len())
            .filter(|&c| col_limits.can_remove(&counts, metadata[c].family_index()))
            .collect();
        if removable.is_empty() {
            break;
        }
        let victim = removable[rng.random_range(0..removable.len())];
        counts[metadata[victim].family_index()] -= 1;
        metadata.remove(victim);
        dataset.columns_mut().remove(victim);
    }
    ind
}

/// Applies each mutation in order, every one with probability `p_m`:
/// add a row, remove a row, add a column, remove a column, then resample
/// each metadata parameter and finally each entry. Shape changes that would
/// break the limits are skipped.
pub fn mutate<R: Rng + ?Sized>(
    individual: Individual,
    p_m: f64,
    row_limits: RowLimits,
    col_limits: &ColumnLimits,
    space: &mut SearchSpace,
    rng: &mut R,
) -> Individual {
    let mut ind = individual;
    let n_families = space.families().len();
    let (dataset, metadata) = ind.parts_mut();

    // add a row
    if rng.random::<f64>() < p_m && dataset.n_rows() < row_limits.max {
        let n = dataset.n_rows();
        for (col, meta) in dataset.columns_mut().iter_mut().zip(metadata.iter()) {
            col.push(meta.sample(rng));
        }
        dataset.set_n_rows(n + 1);
    }

    // remove a row
    if rng.random::<f64>() < p_m && dataset.n_rows() > row_limits.min {
        let n = dataset.n_rows();
        let row = rng.random_range(0..n);
        for col in dataset.columns_mut().iter_mut() {
            col.remove(row);
        }
        dataset.set_n_rows(n - 1);
    }

    let mut counts = vec![0usize; n_families];
    for m in metadata.iter() {
        counts[m.family_index()] += 1;
    }

    // add a column
    if rng.random::<f64>() < p_m {
        if let Some(j) = choose_addable_family(space, col_limits, &counts, rng) {
            let inst = space.new_instance(j, rng);
            let column = fill_column(&inst, dataset.n_rows(), rng).expect("n_rows >= 1");
            dataset.columns_mut().push(column);
            metadata.push(inst);
            counts[j] += 1;
        }
    }

    // remove a column
    if rng.random::<f64>() < p_m {
        let removable: Vec<usize> = (0..metadata.len())
            .filter(|&c| col_limits.can_remove(&counts, metadata[c].family_index()))
            .collect();
        if !removable.is_empty() {
            let victim = removable[rng.random_range(0..removable.len())];
            counts[metadata[victim].family_index()] -= 1;
            metadata.remove(victim);
            dataset.columns_mut().remove(victim);
        }
    }

    // metadata parameters
    for meta in metadata.iter_mut() {
        for p in 0..meta.parameters().len() {
            if rng.random::<f64>() < p_m {
                let limits = space.limits(meta.family_index(), meta.subtype_id())[p];
                meta.set_parameter(p, limits.sample(rng));
            }
        }
    }

    // entries
    for (col, meta) in dataset.columns_mut().iter_mut().zip(metadata.iter()) {
        for v in col.iter_mut() {
            if rng.random::<f64>() < p_m {
                *v = meta.sample(rng);
            }
        }
    }
    ind
}

/// Operator settings shared by the reproduction step.
#[derive(Debug, Clone, Copy)]
pub struct Reproduction<'a> {
    pub population_size: usize,
    pub row_limits: RowLimits,
    pub col_limits: &'a ColumnLimits,
    pub mutation_prob: f64,
}

/// The parents, unmodified, followed by mutated crossovers of parent pairs
/// drawn uniformly with replacement until the population is full.
pub fn create_new_population<R: Rng + ?Sized>(
    parents: &[Individual],
    settings: Reproduction<'_>,
    space: &mut SearchSpace,
    rng: &mut R,
) -> Vec<Individual> {
    assert!(!parents.is_empty(), "at least one parent is required");
    let mut next: Vec<Individual> = parents
        .iter()
        .take(settings.population_size)
        .cloned()
        .collect();
    while next.len() < settings.population_size {
        let a = &parents[rng.random_range(0..parents.len())];
        let b = &parents[rng.random_range(0..parents.len())];
        let child = crossover(a, b, rng);
        let child = repair_columns(child, settings.col_limits, space, rng);
        let child = mutate(
            child,
            settings.mutation_prob,
            settings.row_limits,
            settings.col_limits,
            space,
            rng,
        );
        next.push(child);
    }
    next
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIterations,
    StoppingRule,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("fitness evaluation failed at epoch {epoch}, individual {index}")]
    Fitness {
        epoch: usize,
        index: usize,
        #[source]
        source: FitnessError,
    },
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error("could not build the worker pool: {0}")]
    Workers(String),
}

/// Summary returned after a run; the full record went to the sink.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub stop_reason: StopReason,
    /// Fitnesses of every epoch, index-aligned with the recorded populations.
    pub fitness_history: Vec<Vec<FitnessValue>>,
    pub final_population: Population,
    pub final_subtypes: crate::distributions::SubtypeState,
}

impl RunOutcome {
    pub fn best_per_epoch(&self) -> Vec<FitnessValue> {
        self.fitness_history
            .iter()
            .map(|g| g.iter().copied().min().unwrap_or(FitnessValue::WORST))
            .collect()
    }
}

const EVAL_STREAM_SALT: u64 = 0x5eed_f17e_55e5_0001;

/// The rng stream handed to the fitness function for one evaluation.
pub fn evaluation_rng(seed: u64, epoch: usize, index: usize) -> EdoRng {
    let mut rng = EdoRng::seed_from_u64(seed ^ EVAL_STREAM_SALT);
    rng.set_stream(((epoch as u64) << 32) | index as u64);
    rng
}

fn evaluate<F: Fitness + ?Sized>(
    fitness: &F,
    individuals: &[Individual],
    skip: usize,
    seed: u64,
    epoch: usize,
    pool: &rayon::ThreadPool,
) -> Result<Vec<FitnessValue>, RunError> {
    let results: Vec<Result<FitnessValue, FitnessError>> = pool.install(|| {
        individuals[skip..]
            .par_iter()
            .enumerate()
            .map(|(k, ind)| {
                let mut rng = evaluation_rng(seed, epoch, skip + k);
                fitness.evaluate(ind, &mut rng)
            })
            .collect()
    });
    results
        .into_iter()
        .enumerate()
        .map(|(k, r)| {
            r.map_err(|source| RunError::Fitness {
                epoch,
                index: skip + k,
                source,
            })
        })
        .collect()
}

/// Runs the full loop and streams every generation to `sink`.
///
/// Epoch 0 is the initial population. Each later epoch selects parents,
/// prunes unused subtypes, optionally shrinks the remaining ones about the
/// parents, and breeds the next population. Parents carry their fitness
/// forward; only offspring are evaluated.
pub fn run<F: Fitness + ?Sized>(
    config: &EdoConfig,
    fitness: &F,
    sink: &mut dyn GenerationSink,
) -> Result<RunOutcome, RunError> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| RunError::Workers(e.to_string()))?;

    let mut space = SearchSpace::new(config.families.clone(), config.weights.clone())?;
    let mut rng = EdoRng::seed_from_u64(config.seed);
    let n = config.population_size;

    let mut individuals = (0..n)
        .map(|_| create_individual(config.row_limits, &config.col_limits, &mut space, &mut rng))
        .collect::<Result<Vec<_>, _>>()?;
    let mut fitnesses = evaluate(fitness, &individuals, 0, config.seed, 0, &pool)?;
    let mut mutation_prob = config.mutation_prob;

    let mut record = GenerationRecord {
        epoch: 0,
        individuals,
        fitnesses,
        subtype_state: space.snapshot(),
        mutation_probability: mutation_prob,
    };
    sink.record(&record)?;
    let mut history = vec![record.fitnesses.clone()];
    if let Some(schedule) = &config.mutation_schedule {
        mutation_prob = schedule
            .next_probability(0, &history, mutation_prob)
            .clamp(0.0, 1.0);
    }

    let mut stop_reason = StopReason::MaxIterations;
    for epoch in 1..=config.max_iter {
        if config
            .stopping
            .as_ref()
            .is_some_and(|s| s.should_stop(&history))
        {
            stop_reason = StopReason::StoppingRule;
            break;
        }
        let parent_idx = select_parent_indices(
            &record.fitnesses,
            config.best_prop,
            config.lucky_prop,
            &mut rng,
        );
        let parents: Vec<Individual> = parent_idx
            .iter()
            .map(|&i| record.individuals[i].clone())
            .collect();
        let parent_fitness: Vec<FitnessValue> =
            parent_idx.iter().map(|&i| record.fitnesses[i]).collect();

        prune_subtypes(&parents, &mut space);
        if let Some(s) = config.shrinkage {
            let t = u32::try_from(epoch).unwrap_or(u32::MAX);
            space.shrink(parents.iter().flat_map(|p| p.metadata()), s, t);
        }

        individuals = create_new_population(
            &parents,
            Reproduction {
                population_size: n,
                row_limits: config.row_limits,
                col_limits: &config.col_limits,
                mutation_prob,
            },
            &mut space,
            &mut rng,
        );
        let carried = parent_fitness.len().min(n);
        let offspring = evaluate(fitness, &individuals, carried, config.seed, epoch, &pool)?;
        fitnesses = parent_fitness[..carried].to_vec();
        fitnesses.extend(offspring);

        record = GenerationRecord {
            epoch,
            individuals,
            fitnesses,
            subtype_state: space.snapshot(),
            mutation_probability: mutation_prob,
        };
        sink.record(&record)?;
        history.push(record.fitnesses.clone());

        if let Some(schedule) = &config.mutation_schedule {
            mutation_prob = schedule
                .next_probability(epoch, &history, mutation_prob)
                .clamp(0.0, 1.0);
        }
    }
    sink.finish(&record)?;

    Ok(RunOutcome {
        stop_reason,
        fitness_history: history,
        final_subtypes: record.subtype_state,
        final_population: Population {
            individuals: record.individuals,
            fitnesses: record.fitnesses,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Dataset;
    use crate::distributions::{DistributionInstance, Interval};
    use crate::history::MemoryHistory;

    fn unit() -> Interval {
        Interval::new(0.0, 1.0).unwrap()
    }

    fn space(max_subtypes: usize) -> SearchSpace {
        SearchSpace::new(
            vec![FamilySpec::uniform(unit(), unit(), max_subtypes).unwrap()],
            vec![1.0],
        )
        .unwrap()
    }

    fn constant_individual(
        space: &SearchSpace,
        values: &[f64],
        rows: usize,
        subtype: u32,
    ) -> Individual {
        let fam = space.families()[0].clone();
        let columns = values.iter().map(|v| vec![*v; rows]).collect();
        let metadata = values
            .iter()
            .map(|v| DistributionInstance::from_parts(fam.clone(), 0, subtype, vec![*v, *v]))
            .collect();
        Individual::new(Dataset::from_columns(columns).unwrap(), metadata).unwrap()
    }

    fn fv(xs: &[f64]) -> Vec<FitnessValue> {
        xs.iter().copied().map(FitnessValue::new).collect()
    }

    #[test]
    fn truncation_takes_exact_best() {
        let fit: Vec<FitnessValue> = fv(&(0..100).rev().map(f64::from).collect::<Vec<_>>());
        let mut rng = EdoRng::seed_from_u64(0);
        let parents = select_parent_indices(&fit, 0.2, 0.0, &mut rng);
        assert_eq!(parents.len(), 20);
        let expected: Vec<usize> = (80..100).rev().collect();
        assert_eq!(parents, expected);
    }

    #[test]
    fn full_truncation_returns_everyone() {
        let fit = fv(&[3.0, 1.0, 2.0, 5.0, 4.0, 0.0, 9.0, 8.0, 7.0, 6.0]);
        let mut rng = EdoRng::seed_from_u64(0);
        let mut parents = select_parent_indices(&fit, 1.0, 0.0, &mut rng);
        assert_eq!(parents.len(), 10);
        parents.sort();
        assert_eq!(parents, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn lucky_parents_come_from_remainder() {
        // fitness i + 1 at index i
        let fit = fv(&(1..=10).map(f64::from).collect::<Vec<_>>());
        for seed in 0..50 {
            let mut rng = EdoRng::seed_from_u64(seed);
            let parents = select_parent_indices(&fit, 0.3, 0.2, &mut rng);
            assert_eq!(&parents[..3], &[0, 1, 2]);
            assert_eq!(parents.len(), 5);
            let lucky: BTreeSet<usize> = parents[3..].iter().copied().collect();
            assert_eq!(lucky.len(), 2);
            assert!(lucky.iter().all(|i| (3..10).contains(i)));
        }
    }

    #[test]
    fn ties_break_by_index() {
        let fit = fv(&[1.0, 0.0, 0.0, 1.0]);
        let mut rng = EdoRng::seed_from_u64(0);
        assert_eq!(select_parent_indices(&fit, 0.5, 0.0, &mut rng), vec![1, 2]);
    }

    #[test]
    fn proportions_round_up() {
        assert_eq!(proportion_count(0.2, 100), 20);
        assert_eq!(proportion_count(0.21, 100), 21);
        assert_eq!(proportion_count(0.01, 10), 1);
        assert_eq!(proportion_count(0.0, 10), 0);
    }

    #[test]
    fn pruning_retires_unreferenced() {
        let mut sp = space(3);
        let mut rng = EdoRng::seed_from_u64(0);
        while sp.live_subtypes(0).count() < 3 {
            sp.allocate_subtype(0, &mut rng);
        }
        let parents = vec![
            constant_individual(&sp, &[0.5], 3, 0),
            constant_individual(&sp, &[0.5], 3, 2),
        ];
        prune_subtypes(&parents, &mut sp);
        assert_eq!(sp.live_subtypes(0).collect::<Vec<_>>(), vec![0, 2]);
        prune_subtypes(&parents, &mut sp);
        assert_eq!(sp.live_subtypes(0).collect::<Vec<_>>(), vec![0, 2]);
    }

    #[test]
    fn unused_family_gets_fresh_subtype() {
        let mut sp = SearchSpace::new(
            vec![
                FamilySpec::uniform(unit(), unit(), 2).unwrap(),
                FamilySpec::normal(unit(), unit(), 2).unwrap(),
            ],
            vec![0.5, 0.5],
        )
        .unwrap();
        let mut rng = EdoRng::seed_from_u64(0);
        let a = sp.allocate_subtype(1, &mut rng).id;
        let parents = vec![constant_individual(&sp, &[0.5], 3, 0)];
        prune_subtypes(&parents, &mut sp);
        assert_eq!(sp.live_subtypes(1).count(), 0);
        let b = sp.allocate_subtype(1, &mut rng).id;
        assert!(b > a);
    }

    #[test]
    fn crossover_of_identical_parents_is_identity() {
        let sp = space(1);
        let p = constant_individual(&sp, &[0.25, 0.75], 6, 0);
        let mut rng = EdoRng::seed_from_u64(3);
        for _ in 0..20 {
            let child = crossover(&p, &p, &mut rng);
            assert_eq!(child.n_rows(), 6);
            assert_eq!(child.n_cols(), 2);
            for (col, meta) in child.dataset().columns().iter().zip(child.metadata()) {
                assert!(col.iter().all(|v| *v == meta.parameters()[0]));
            }
        }

        // a genuinely random parent crossed with itself
        let mut sp = space(1);
        let mut rng = EdoRng::seed_from_u64(5);
        let q = create_individual(
            RowLimits::new(4, 4).unwrap(),
            &ColumnLimits::aggregate(1, 1),
            &mut sp,
            &mut rng,
        )
        .unwrap();
        let child = crossover(&q, &q, &mut rng);
        assert_eq!(child, q);
    }

    #[test]
    fn crossover_row_choice_is_fair() {
        let sp = space(1);
        let a = constant_individual(&sp, &[0.1, 0.2], 3, 0);
        let b = constant_individual(&sp, &[0.3, 0.4], 100, 0);
        let mut rng = EdoRng::seed_from_u64(17);
        let short = (0..1000)
            .filter(|_| crossover(&a, &b, &mut rng).n_rows() == 3)
            .count();
        // binomial(1000, 1/2) 99% interval
        assert!((459..=541).contains(&short), "{short}");
    }

    #[test]
    fn crossover_extends_from_metadata() {
        let sp = space(1);
        let a = constant_individual(&sp, &[0.0], 5, 0);
        let b = constant_individual(&sp, &[1.0], 8, 0);
        let mut rng = EdoRng::seed_from_u64(0);
        let mut seen = false;
        for _ in 0..200 {
            let child = crossover(&a, &b, &mut rng);
            if child.n_rows() == 8 && child.metadata()[0].parameters()[0] == 0.0 {
                assert_eq!(child.dataset().column(0), &[0.0; 8]);
                seen = true;
            }
        }
        assert!(seen);
    }

    #[test]
    fn crossover_columns_come_from_parents() {
        let sp = space(1);
        let a = constant_individual(&sp, &[0.1, 0.2, 0.3], 4, 0);
        let b = constant_individual(&sp, &[0.6, 0.7], 9, 0);
        let mut rng = EdoRng::seed_from_u64(8);
        for _ in 0..200 {
            let child = crossover(&a, &b, &mut rng);
            assert!(child.n_cols() == 3 || child.n_cols() == 2);
            let mut seen = BTreeSet::new();
            for (col, meta) in child.dataset().columns().iter().zip(child.metadata()) {
                let v = meta.parameters()[0];
                assert!(col.iter().all(|x| *x == v));
                assert!(seen.insert(v.to_bits()), "column drawn twice");
            }
        }
    }

    #[test]
    fn zero_mutation_is_identity() {
        let mut sp = space(2);
        let mut rng = EdoRng::seed_from_u64(1);
        let ind = create_individual(
            RowLimits::new(3, 10).unwrap(),
            &ColumnLimits::aggregate(1, 4),
            &mut sp,
            &mut rng,
        )
        .unwrap();
        let out = mutate(
            ind.clone(),
            0.0,
            RowLimits::new(3, 10).unwrap(),
            &ColumnLimits::aggregate(1, 4),
            &mut sp,
            &mut rng,
        );
        assert_eq!(out, ind);
    }

    #[test]
    fn full_mutation_within_tight_limits() {
        let mut sp = space(1);
        let mut rng = EdoRng::seed_from_u64(2);
        let rows = RowLimits::new(5, 5).unwrap();
        let cols = ColumnLimits::aggregate(2, 2);
        let ind = create_individual(rows, &cols, &mut sp, &mut rng).unwrap();
        let out = mutate(ind.clone(), 1.0, rows, &cols, &mut sp, &mut rng);
        assert_eq!((out.n_rows(), out.n_cols()), (5, 2));
        for (a, b) in ind.metadata().iter().zip(out.metadata()) {
            for (x, y) in a.parameters().iter().zip(b.parameters()) {
                assert_ne!(x, y);
            }
        }
        for (a, b) in ind
            .dataset()
            .columns()
            .iter()
            .flatten()
            .zip(out.dataset().columns().iter().flatten())
        {
            assert_ne!(a, b);
        }
    }

    #[test]
    fn full_mutation_adds_then_removes_a_row() {
        let mut sp = space(1);
        let mut rng = EdoRng::seed_from_u64(4);
        let cols = ColumnLimits::aggregate(2, 2);
        let ind =
            create_individual(RowLimits::new(5, 5).unwrap(), &cols, &mut sp, &mut rng).unwrap();
        let out = mutate(
            ind.clone(),
            1.0,
            RowLimits::new(3, 10).unwrap(),
            &cols,
            &mut sp,
            &mut rng,
        );
        assert_eq!((out.n_rows(), out.n_cols()), (5, 2));
        assert_ne!(out.dataset(), ind.dataset());
    }

    #[test]
    fn mutation_respects_per_family_limits() {
        let mut sp = SearchSpace::new(
            vec![
                FamilySpec::uniform(unit(), unit(), 2).unwrap(),
                FamilySpec::normal(unit(), unit(), 2).unwrap(),
            ],
            vec![0.5, 0.5],
        )
        .unwrap();
        let cols = ColumnLimits {
            min: 2,
            max: 5,
            per_family: Some(vec![
                crate::dataset::FamilyColumns {
                    min: 1,
                    max: Some(2),
                },
                crate::dataset::FamilyColumns { min: 1, max: None },
            ]),
        };
        let rows = RowLimits::new(2, 6).unwrap();
        let mut rng = EdoRng::seed_from_u64(10);
        let mut ind = create_individual(rows, &cols, &mut sp, &mut rng).unwrap();
        for _ in 0..300 {
            ind = mutate(ind, 0.5, rows, &cols, &mut sp, &mut rng);
            assert!(cols.admits(&ind.family_counts(2)));
            assert!(rows.contains(ind.n_rows()));
            assert_eq!(ind.metadata().len(), ind.n_cols());
        }
    }

    #[test]
    fn repair_restores_family_limits() {
        let mut sp = SearchSpace::new(
            vec![
                FamilySpec::uniform(unit(), unit(), 2).unwrap(),
                FamilySpec::normal(unit(), unit(), 2).unwrap(),
            ],
            vec![0.5, 0.5],
        )
        .unwrap();
        let cols = ColumnLimits {
            min: 2,
            max: 2,
            per_family: Some(vec![
                crate::dataset::FamilyColumns {
                    min: 1,
                    max: Some(1),
                },
                crate::dataset::FamilyColumns {
                    min: 1,
                    max: Some(1),
                },
            ]),
        };
        let mut rng = EdoRng::seed_from_u64(0);
        let uni = sp.new_instance(0, &mut rng);
        let uni2 = sp.new_instance(0, &mut rng);
        let ds = Dataset::from_columns(vec![vec![0.1; 3], vec![0.2; 3]]).unwrap();
        let ind = Individual::new(ds, vec![uni, uni2]).unwrap();
        let fixed = repair_columns(ind, &cols, &mut sp, &mut rng);
        assert_eq!(fixed.family_counts(2), vec![1, 1]);
        assert_eq!(fixed.n_rows(), 3);
    }

    #[test]
    fn full_parent_set_is_next_population() {
        let mut sp = space(1);
        let mut rng = EdoRng::seed_from_u64(0);
        let cols = ColumnLimits::aggregate(2, 2);
        let parents: Vec<Individual> = (0..5)
            .map(|_| {
                create_individual(RowLimits::new(3, 9).unwrap(), &cols, &mut sp, &mut rng).unwrap()
            })
            .collect();
        let settings = Reproduction {
            population_size: 5,
            row_limits: RowLimits::new(3, 9).unwrap(),
            col_limits: &cols,
            mutation_prob: 0.5,
        };
        assert_eq!(
            create_new_population(&parents, settings, &mut sp, &mut rng),
            parents
        );
    }

    #[test]
    fn offspring_fill_remaining_slots() {
        let mut sp = space(1);
        let mut rng = EdoRng::seed_from_u64(0);
        let cols = ColumnLimits::aggregate(2, 2);
        let rows = RowLimits::new(3, 100).unwrap();
        let parents: Vec<Individual> = (0..20)
            .map(|_| create_individual(rows, &cols, &mut sp, &mut rng).unwrap())
            .collect();
        let settings = Reproduction {
            population_size: 100,
            row_limits: rows,
            col_limits: &cols,
            mutation_prob: 0.0,
        };
        let next = create_new_population(&parents, settings, &mut sp, &mut rng);
        assert_eq!(next.len(), 100);
        assert_eq!(&next[..20], parents.as_slice());
        // with no mutation every offspring column is a resized parent column
        for child in &next[20..] {
            assert!(parents.iter().any(|p| p.n_rows() == child.n_rows()));
            for meta in child.metadata() {
                assert!(parents.iter().any(|p| p.metadata().contains(meta)));
            }
        }
    }

    #[test]
    fn single_parent_without_mutation_is_cloned() {
        let mut sp = space(1);
        let mut rng = EdoRng::seed_from_u64(0);
        let cols = ColumnLimits::aggregate(2, 2);
        let rows = RowLimits::new(3, 7).unwrap();
        let parent = create_individual(rows, &cols, &mut sp, &mut rng).unwrap();
        let settings = Reproduction {
            population_size: 10,
            row_limits: rows,
            col_limits: &cols,
            mutation_prob: 0.0,
        };
        let next =
            create_new_population(std::slice::from_ref(&parent), settings, &mut sp, &mut rng);
        for child in next {
            // pooled columns come from the parent twice, so repeats are possible
            assert_eq!(child.n_rows(), parent.n_rows());
            for col in child.dataset().columns() {
                assert!(parent.dataset().columns().contains(col));
            }
        }
    }

    fn small_config(seed: u64, max_iter: usize) -> EdoConfig {
        EdoConfig {
            population_size: 12,
            max_iter,
            row_limits: RowLimits::new(3, 12).unwrap(),
            col_limits: ColumnLimits::aggregate(2, 2),
            families: vec![FamilySpec::uniform(unit(), unit(), 2).unwrap()],
            weights: vec![1.0],
            best_prop: 0.25,
            lucky_prop: 0.1,
            mutation_prob: 0.05,
            shrinkage: Some(0.9),
            seed,
            stopping: None,
            mutation_schedule: None,
            workers: 1,
        }
    }

    fn column_sum(ind: &Individual, _rng: &mut EdoRng) -> Result<FitnessValue, FitnessError> {
        Ok(FitnessValue::new(
            ind.dataset().columns().iter().flatten().sum(),
        ))
    }

    #[test]
    fn zero_iterations_records_initial_population() {
        let mut hist = MemoryHistory::default();
        let out = run(&small_config(0, 0), &column_sum, &mut hist).unwrap();
        assert_eq!(hist.generations.len(), 1);
        assert_eq!(out.fitness_history.len(), 1);
        assert_eq!(out.stop_reason, StopReason::MaxIterations);
    }

    #[test]
    fn runs_are_deterministic_and_elitist() {
        let mut h1 = MemoryHistory::default();
        let mut h2 = MemoryHistory::default();
        run(&small_config(7, 15), &column_sum, &mut h1).unwrap();
        let mut cfg = small_config(7, 15);
        cfg.workers = 3;
        run(&cfg, &column_sum, &mut h2).unwrap();
        assert_eq!(h1.generations, h2.generations);
        let best: Vec<_> = h1
            .generations
            .iter()
            .map(|g| g.fitnesses.iter().copied().min().unwrap())
            .collect();
        assert!(best.windows(2).all(|w| w[1] <= w[0]));
        for g in &h1.generations {
            assert_eq!(g.individuals.len(), 12);
            for ind in &g.individuals {
                assert!(cfg.row_limits.contains(ind.n_rows()));
                assert_eq!(ind.n_cols(), 2);
            }
        }
    }

    #[test]
    fn stopping_rule_ends_run() {
        #[derive(Debug)]
        struct AfterThree;
        impl StoppingRule for AfterThree {
            fn should_stop(&self, history: &[Vec<FitnessValue>]) -> bool {
                history.len() >= 3
            }
        }
        let mut cfg = small_config(1, 50);
        cfg.stopping = Some(Arc::new(AfterThree));
        let mut hist = MemoryHistory::default();
        let out = run(&cfg, &column_sum, &mut hist).unwrap();
        assert_eq!(hist.generations.len(), 3);
        assert_eq!(out.stop_reason, StopReason::StoppingRule);
    }

    #[test]
    fn decay_schedule_is_recorded() {
        let mut cfg = small_config(1, 3);
        cfg.mutation_schedule = Some(Arc::new(MultiplicativeDecay { factor: 0.5 }));
        let mut hist = MemoryHistory::default();
        run(&cfg, &column_sum, &mut hist).unwrap();
        let pms: Vec<f64> = hist
            .generations
            .iter()
            .map(|g| g.mutation_probability)
            .collect();
        assert_eq!(pms, vec![0.05, 0.025, 0.0125, 0.00625]);
    }

    #[test]
    fn no_improvement_rule() {
        let rule = NoImprovement { patience: 2 };
        let h = |xs: &[f64]| {
            xs.iter()
                .map(|x| vec![FitnessValue::new(*x)])
                .collect::<Vec<_>>()
        };
        assert!(!rule.should_stop(&h(&[3.0, 2.0])));
        assert!(!rule.should_stop(&h(&[3.0, 2.0, 1.0])));
        assert!(rule.should_stop(&h(&[3.0, 2.0, 2.0, 2.0])));
    }

    #[test]
    fn fitness_error_aborts_with_partial_history() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        let calls = AtomicUsize::new(0);
        let failing = |ind: &Individual, _rng: &mut EdoRng| -> Result<FitnessValue, FitnessError> {
            if calls.fetch_add(1, Ordering::SeqCst) >= 40 {
                Err("evaluation budget exhausted".into())
            } else {
                Ok(FitnessValue::new(ind.n_rows() as f64))
            }
        };
        // 12 initial evaluations, then 7 offspring per epoch
        let mut hist = MemoryHistory::default();
        match run(&small_config(3, 200), &failing, &mut hist) {
            Err(RunError::Fitness { epoch, .. }) => {
                assert_eq!(epoch, 5);
                assert_eq!(hist.generations.len(), 5);
            }
            other => panic!("expected fitness failure, got {other:?}"),
        }
    }

    #[test]
    fn invalid_parent_counts_rejected() {
        let mut cfg = small_config(0, 1);
        cfg.best_prop = 0.9;
        cfg.lucky_prop = 0.2;
        assert!(cfg.validate().is_err());
    }
}

//! Distribution families, subtypes and the per-column instances that
//! generate dataset values.
//!
//! A [`FamilySpec`] fixes the parameter names and their initial limits. Each
//! family owns a registry of subtypes: independent copies whose limits may
//! be narrowed during a run by [`shrink_interval`]. Column metadata is a
//! [`DistributionInstance`], a concrete parameter vector tied to one subtype.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// A closed real interval `[lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl From<[f64; 2]> for Interval {
    fn from([lower, upper]: [f64; 2]) -> Self {
        Interval { lower, upper }
    }
}

impl From<Interval> for [f64; 2] {
    fn from(i: Interval) -> Self {
        [i.lower, i.upper]
    }
}

impl Interval {
    pub fn new(lower: f64, upper: f64) -> Result<Self, ConfigError> {
        if !(lower.is_finite() && upper.is_finite()) {
            return Err(ConfigError::field(
                "limits",
                "interval bounds must be finite",
            ));
        }
        if lower > upper {
            return Err(ConfigError::field(
                "limits",
                format!("lower bound {lower} exceeds upper bound {upper}"),
            ));
        }
        Ok(Interval { lower, upper })
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }

    pub fn is_subset_of(&self, other: &Interval) -> bool {
        other.lower <= self.lower && self.upper <= other.upper
    }

    /// Uniform draw from the interval; a zero-width interval yields its bound.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.lower == self.upper {
            self.lower
        } else {
            rng.random_range(self.lower..=self.upper)
        }
    }
}

/// Draws a single value given a parameter vector.
///
/// Implementations must be pure in `params` and only consume randomness
/// from `rng`.
pub trait ColumnSampler: fmt::Debug + Send + Sync {
    fn sample(&self, params: &[f64], rng: &mut dyn RngCore) -> f64;

    /// Closed support for the given parameters, used for containment checks.
    fn support(&self, params: &[f64]) -> (f64, f64);
}

/// `U(a, b)` over `[min(a, b), max(a, b)]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformSampler;

impl ColumnSampler for UniformSampler {
    fn sample(&self, params: &[f64], rng: &mut dyn RngCore) -> f64 {
        let (lo, hi) = self.support(params);
        Interval {
            lower: lo,
            upper: hi,
        }
        .sample(rng)
    }

    fn support(&self, params: &[f64]) -> (f64, f64) {
        let (a, b) = (params[0], params[1]);
        (a.min(b), a.max(b))
    }
}

/// Gaussian with mean `params[0]` and standard deviation `params[1]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct NormalSampler;

impl ColumnSampler for NormalSampler {
    fn sample(&self, params: &[f64], rng: &mut dyn RngCore) -> f64 {
        let (mean, sd) = (params[0], params[1].abs());
        if sd == 0.0 {
            return mean;
        }
        // sd is finite and positive here
        rand_distr::Normal::new(mean, sd)
            .expect("finite standard deviation")
            .sample(rng)
    }

    fn support(&self, params: &[f64]) -> (f64, f64) {
        if params[1] == 0.0 {
            (params[0], params[0])
        } else {
            (f64::NEG_INFINITY, f64::INFINITY)
        }
    }
}

/// A distribution family with per-parameter limits.
#[derive(Debug, Clone)]
pub struct FamilySpec {
    name: String,
    parameter_names: Vec<String>,
    initial_limits: Vec<Interval>,
    max_subtypes: usize,
    sampler: Arc<dyn ColumnSampler>,
}

impl FamilySpec {
    pub fn new(
        name: impl Into<String>,
        parameter_names: Vec<String>,
        initial_limits: Vec<Interval>,
        max_subtypes: usize,
        sampler: Arc<dyn ColumnSampler>,
    ) -> Result<Self, ConfigError> {
        let name = name.into();
        if parameter_names.len() != initial_limits.len() {
            return Err(ConfigError::field(
                format!("families.{name}.limits"),
                format!(
                    "{} parameters but {} limit intervals",
                    parameter_names.len(),
                    initial_limits.len()
                ),
            ));
        }
        for interval in &initial_limits {
            Interval::new(interval.lower, interval.upper).map_err(|_| {
                ConfigError::field(format!("families.{name}.limits"), "invalid interval")
            })?;
        }
        if max_subtypes == 0 {
            return Err(ConfigError::field(
                format!("families.{name}.max_subtypes"),
                "must be at least 1",
            ));
        }
        Ok(FamilySpec {
            name,
            parameter_names,
            initial_limits,
            max_subtypes,
            sampler,
        })
    }

    /// Uniform family with parameters `a` and `b`.
    pub fn uniform(a: Interval, b: Interval, max_subtypes: usize) -> Result<Self, ConfigError> {
        Self::new(
            "uniform",
            vec!["a".into(), "b".into()],
            vec![a, b],
            max_subtypes,
            Arc::new(UniformSampler),
        )
    }

    /// Normal family with parameters `mean` and `std`.
    pub fn normal(mean: Interval, std: Interval, max_subtypes: usize) -> Result<Self, ConfigError> {
        if std.lower < 0.0 {
            return Err(ConfigError::field(
                "families.normal.limits.std",
                "standard deviation limits must be non-negative",
            ));
        }
        Self::new(
            "normal",
            vec!["mean".into(), "std".into()],
            vec![mean, std],
            max_subtypes,
            Arc::new(NormalSampler),
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn parameter_names(&self) -> &[String] {
        &self.parameter_names
    }

    pub fn initial_limits(&self) -> &[Interval] {
        &self.initial_limits
    }

    pub fn max_subtypes(&self) -> usize {
        self.max_subtypes
    }

    pub fn sampler(&self) -> &dyn ColumnSampler {
        self.sampler.as_ref()
    }

    pub fn parameter_index(&self, name: &str) -> Option<usize> {
        self.parameter_names.iter().position(|p| p == name)
    }
}

/// An independent copy of a family whose limits evolve over a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Subtype {
    pub family: usize,
    pub id: u32,
    pub limits: Vec<Interval>,
}

impl Subtype {
    /// Narrows each parameter's limits about the mean of its observed values.
    /// Parameters with no observations keep their limits.
    pub fn shrink(&mut self, observed: &[Vec<f64>], s: f64, t: u32) {
        for (limits, values) in self.limits.iter_mut().zip(observed) {
            if values.is_empty() {
                continue;
            }
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            *limits = shrink_interval(*limits, mean, s, t);
        }
    }
}

/// One step of the power-law contraction about `mean`:
/// `l' = max(l, mean - (u - l) s^t / 2)`, `u' = min(u, mean + (u - l) s^t / 2)`.
///
/// `mean` is clamped into `[l, u]` first so the result is never inverted.
pub fn shrink_interval(limits: Interval, mean: f64, s: f64, t: u32) -> Interval {
    let half = 0.5 * limits.width() * s.powi(t.min(i32::MAX as u32) as i32);
    let centre = mean.clamp(limits.lower, limits.upper);
    Interval {
        lower: limits.lower.max(centre - half),
        upper: limits.upper.min(centre + half),
    }
}

/// A concrete, parameterised distribution attached to one column.
#[derive(Debug, Clone)]
pub struct DistributionInstance {
    family: Arc<FamilySpec>,
    family_index: usize,
    subtype_id: u32,
    parameters: Vec<f64>,
}

impl PartialEq for DistributionInstance {
    fn eq(&self, other: &Self) -> bool {
        self.family_index == other.family_index
            && self.family.name == other.family.name
            && self.subtype_id == other.subtype_id
            && self.parameters == other.parameters
    }
}

impl DistributionInstance {
    pub fn from_parts(
        family: Arc<FamilySpec>,
        family_index: usize,
        subtype_id: u32,
        parameters: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(parameters.len(), family.parameter_names.len());
        DistributionInstance {
            family,
            family_index,
            subtype_id,
            parameters,
        }
    }

    pub fn family(&self) -> &FamilySpec {
        &self.family
    }

    pub fn family_index(&self) -> usize {
        self.family_index
    }

    pub fn subtype_id(&self) -> u32 {
        self.subtype_id
    }

    pub fn parameters(&self) -> &[f64] {
        &self.parameters
    }

    pub fn set_parameter(&mut self, index: usize, value: f64) {
        self.parameters[index] = value;
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        sample_value(self, rng)
    }

    pub fn support(&self) -> (f64, f64) {
        self.family.sampler.support(&self.parameters)
    }
}

/// Picks a family index with probability proportional to its weight.
pub fn choose_family<R: Rng + ?Sized>(
    families: &[Arc<FamilySpec>],
    weights: &[f64],
    rng: &mut R,
) -> Result<usize, ConfigError> {
    validate_weights(families.len(), weights)?;
    if families.len() == 1 {
        return Ok(0);
    }
    let dist =
        WeightedIndex::new(weights).map_err(|e| ConfigError::field("weights", e.to_string()))?;
    Ok(dist.sample(rng))
}

pub(crate) fn validate_weights(families: usize, weights: &[f64]) -> Result<(), ConfigError> {
    if weights.len() != families {
        return Err(ConfigError::WeightLength {
            weights: weights.len(),
            families,
        });
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(ConfigError::field(
            "weights",
            "entries must be finite and non-negative",
        ));
    }
    if weights.iter().sum::<f64>() <= 0.0 {
        return Err(ConfigError::field(
            "weights",
            "must have positive total mass",
        ));
    }
    Ok(())
}

/// Creates an instance of `subtype` with every parameter drawn uniformly
/// from its current limits.
pub fn new_instance<R: Rng + ?Sized>(
    family: &Arc<FamilySpec>,
    subtype: &Subtype,
    rng: &mut R,
) -> DistributionInstance {
    let parameters = subtype.limits.iter().map(|l| l.sample(rng)).collect();
    DistributionInstance {
        family: Arc::clone(family),
        family_index: subtype.family,
        subtype_id: subtype.id,
        parameters,
    }
}

pub fn sample_value<R: Rng + ?Sized>(instance: &DistributionInstance, rng: &mut R) -> f64 {
    let mut rng = rng;
    instance
        .family
        .sampler
        .sample(&instance.parameters, &mut rng)
}

#[derive(Debug, Clone, Default, PartialEq)]
struct SubtypeRegistry {
    live: BTreeMap<u32, Vec<Interval>>,
    next_id: u32,
}

/// Live subtype limits: family name -> subtype id -> parameter -> interval.
pub type SubtypeState = BTreeMap<String, BTreeMap<u32, BTreeMap<String, Interval>>>;

/// The mutable search space: families, their weights and subtype registries.
#[derive(Debug, Clone)]
pub struct SearchSpace {
    families: Vec<Arc<FamilySpec>>,
    weights: Vec<f64>,
    registries: Vec<SubtypeRegistry>,
}

impl SearchSpace {
    pub fn new(families: Vec<FamilySpec>, weights: Vec<f64>) -> Result<Self, ConfigError> {
        if families.is_empty() {
            return Err(ConfigError::field(
                "families",
                "at least one family is required",
            ));
        }
        validate_weights(families.len(), &weights)?;
        let mut names = BTreeSet::new();
        for f in &families {
            if !names.insert(f.name.clone()) {
                return Err(ConfigError::field(
                    "families",
                    format!("duplicate family name `{}`", f.name),
                ));
            }
        }
        let registries = vec![SubtypeRegistry::default(); families.len()];
        Ok(SearchSpace {
            families: families.into_iter().map(Arc::new).collect(),
            weights,
            registries,
        })
    }

    pub fn families(&self) -> &[Arc<FamilySpec>] {
        &self.families
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn family_index(&self, name: &str) -> Option<usize> {
        self.families.iter().position(|f| f.name == name)
    }

    pub fn live_subtypes(&self, family: usize) -> impl Iterator<Item = u32> + '_ {
        self.registries[family].live.keys().copied()
    }

    pub fn subtype(&self, family: usize, id: u32) -> Option<Subtype> {
        self.registries[family].live.get(&id).map(|limits| Subtype {
            family,
            id,
            limits: limits.clone(),
        })
    }

    /// Current limits of a subtype; retired subtypes fall back to the
    /// family's initial limits.
    pub fn limits(&self, family: usize, id: u32) -> &[Interval] {
        self.registries[family]
            .live
            .get(&id)
            .map(Vec::as_slice)
            .unwrap_or(&self.families[family].initial_limits)
    }

    /// Picks the subtype for a new column of `family`. Below the cap a fresh
    /// subtype is opened with probability `1 / (live + 1)`; otherwise an
    /// existing live subtype is chosen uniformly.
    pub fn allocate_subtype<R: Rng + ?Sized>(&mut self, family: usize, rng: &mut R) -> Subtype {
        let cap = self.families[family].max_subtypes;
        let initial = self.families[family].initial_limits.clone();
        let reg = &mut self.registries[family];
        let live = reg.live.len();
        let fresh = live < cap && (live == 0 || rng.random_range(0..=live) == 0);
        if fresh {
            let id = reg.next_id;
            reg.next_id += 1;
            reg.live.insert(id, initial.clone());
            return Subtype {
                family,
                id,
                limits: initial,
            };
        }
        let pick = rng.random_range(0..live);
        let (&id, limits) = reg.live.iter().nth(pick).expect("pick < live");
        Subtype {
            family,
            id,
            limits: limits.clone(),
        }
    }

    /// Allocates a subtype of `family` and draws an instance from it.
    pub fn new_instance<R: Rng + ?Sized>(
        &mut self,
        family: usize,
        rng: &mut R,
    ) -> DistributionInstance {
        let subtype = self.allocate_subtype(family, rng);
        new_instance(&self.families[family], &subtype, rng)
    }

    /// Retires every live subtype that is not in `referenced`
    /// (pairs of family index and subtype id).
    pub fn retain_subtypes(&mut self, referenced: &BTreeSet<(usize, u32)>) {
        for (family, reg) in self.registries.iter_mut().enumerate() {
            reg.live.retain(|id, _| referenced.contains(&(family, *id)));
        }
    }

    /// Shrinks every live subtype about the mean of the parameter values in
    /// `instances` that reference it. Subtypes without references are left alone.
    pub fn shrink<'a>(
        &mut self,
        instances: impl IntoIterator<Item = &'a DistributionInstance>,
        s: f64,
        t: u32,
    ) {
        let mut observed: BTreeMap<(usize, u32), Vec<Vec<f64>>> = BTreeMap::new();
        for inst in instances {
            let entry = observed
                .entry((inst.family_index, inst.subtype_id))
                .or_insert_with(|| vec![Vec::new(); inst.parameters.len()]);
            for (values, p) in entry.iter_mut().zip(&inst.parameters) {
                values.push(*p);
            }
        }
        for ((family, id), values) in observed {
            if let Some(limits) = self.registries[family].live.get_mut(&id) {
                let mut subtype = Subtype {
                    family,
                    id,
                    limits: std::mem::take(limits),
                };
                subtype.shrink(&values, s, t);
                *limits = subtype.limits;
            }
        }
    }

    pub fn snapshot(&self) -> SubtypeState {
        let mut state = SubtypeState::new();
        for (family, reg) in self.families.iter().zip(&self.registries) {
            let per_family = state.entry(family.name.clone()).or_default();
            for (id, limits) in &reg.live {
                let params = family
                    .parameter_names
                    .iter()
                    .cloned()
                    .zip(limits.iter().copied())
                    .collect();
                per_family.insert(*id, params);
            }
        }
        state
    }
}

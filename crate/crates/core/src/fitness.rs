//! Scalar fitness: a maximin objective score combined with the subjective
//! preference score. Lower is better throughout.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::architecture::{check_feasibility, derive_interfaces, Architecture, FeasibilityReport};
use crate::metrics::{compute_metrics, ErpWeights, MetricVector, Normalizer, ObjectiveVector, K};
use crate::model::AnalysisModel;
use crate::par::{self, Execution};
use crate::preferences::{Bounds, PreferenceStore, Subject};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitnessConfig {
    pub w_obj: f64,
    pub w_sub: f64,
}

impl Default for FitnessConfig {
    fn default() -> Self {
        Self { w_obj: 0.5, w_sub: 0.5 }
    }
}

impl FitnessConfig {
    pub fn is_valid(&self) -> bool {
        self.w_obj >= 0.0 && self.w_sub >= 0.0 && ((self.w_obj + self.w_sub) - 1.0).abs() < 1e-9
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitnessRecord {
    pub f_obj: f64,
    pub f_sub: Option<f64>,
    pub combined: f64,
    pub feasible: bool,
    pub violation_count: usize,
    pub removal_penalized: bool,
}

impl FitnessRecord {
    /// Applies the weighted sum, or the worst value for penalized solutions.
    pub fn new(
        f_obj: f64,
        f_sub: Option<f64>,
        feasibility: &FeasibilityReport,
        removal_penalized: bool,
        cfg: &FitnessConfig,
    ) -> Self {
        let combined = if !feasibility.feasible || removal_penalized {
            1.0
        } else {
            match f_sub {
                Some(s) => cfg.w_obj * f_obj + cfg.w_sub * s,
                None => f_obj,
            }
        };
        Self {
            f_obj,
            f_sub,
            combined: combined.clamp(0.0, 1.0),
            feasible: feasibility.feasible,
            violation_count: feasibility.violation_count(),
            removal_penalized,
        }
    }
}

/// Tournament/replacement order: lower combined fitness first, then feasible
/// before infeasible, fewer violations, lower objective score.
pub fn compare(a: &FitnessRecord, b: &FitnessRecord) -> Ordering {
    a.combined
        .total_cmp(&b.combined)
        .then_with(|| b.feasible.cmp(&a.feasible))
        .then_with(|| a.violation_count.cmp(&b.violation_count))
        .then_with(|| a.f_obj.total_cmp(&b.f_obj))
}

/// Unscaled maximin value of `s` against `reference`, skipping the entry at
/// `exclude` (the solution itself). `None` if nothing is left to compare with.
pub fn maximin_raw(s: &ObjectiveVector, reference: &[ObjectiveVector], exclude: Option<usize>) -> Option<f64> {
    reference
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != exclude)
        .map(|(_, z)| (0..K).map(|k| s.0[k] - z.0[k]).fold(f64::INFINITY, f64::min))
        .reduce(f64::max)
}

/// Maximin score scaled to `[0, 1]`; below 0.5 means non-dominated.
pub fn maximin(s: &ObjectiveVector, reference: &[ObjectiveVector], exclude: Option<usize>) -> f64 {
    maximin_raw(s, reference, exclude).map_or(0.0, |raw| ((1.0 + raw) / 2.0).clamp(0.0, 1.0))
}

/// Population-independent evaluation of one architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Assessment {
    pub metrics: MetricVector,
    pub objectives: ObjectiveVector,
    pub feasibility: FeasibilityReport,
    pub f_sub: Option<f64>,
}

/// Model constants needed to evaluate architectures.
#[derive(Clone, Copy, Debug)]
pub struct Evaluator<'m> {
    pub model: &'m AnalysisModel,
    pub weights: ErpWeights,
    pub normalizer: Normalizer,
    pub bounds: Bounds,
}

impl<'m> Evaluator<'m> {
    pub fn new(model: &'m AnalysisModel, weights: ErpWeights, bounds: Bounds) -> Self {
        Self { model, weights, normalizer: Normalizer::new(model, &weights, bounds.n_min), bounds }
    }

    pub fn assess(&self, arch: &Architecture, store: &PreferenceStore) -> Assessment {
        let metrics = compute_metrics(arch, self.model, &self.weights);
        let objectives = self.normalizer.normalize(&metrics);
        let feasibility = check_feasibility(arch, self.model);
        let f_sub = self.subjective(arch, &objectives, store);
        Assessment { metrics, objectives, feasibility, f_sub }
    }

    pub fn subjective(&self, arch: &Architecture, objectives: &ObjectiveVector, store: &PreferenceStore) -> Option<f64> {
        if store.is_empty() {
            return None;
        }
        let interfaces = derive_interfaces(arch, self.model);
        store.subjective_fitness(&Subject { architecture: arch, interfaces: &interfaces, objectives }, self.bounds)
    }
}

/// A member of the population or archive.
#[derive(Clone, Debug, PartialEq)]
pub struct Individual {
    pub id: u64,
    pub architecture: Architecture,
    pub assessment: Assessment,
    pub fitness: FitnessRecord,
    pub marked_for_removal: bool,
    pub preserved: bool,
    pub fingerprint: u64,
}

impl Individual {
    pub fn new(id: u64, architecture: Architecture, assessment: Assessment) -> Self {
        let fitness = FitnessRecord::new(0.0, assessment.f_sub, &assessment.feasibility, false, &FitnessConfig::default());
        let fingerprint = architecture.fingerprint();
        Self { id, architecture, assessment, fitness, marked_for_removal: false, preserved: false, fingerprint }
    }

    pub fn objectives(&self) -> &ObjectiveVector {
        &self.assessment.objectives
    }

    pub fn same_solution(&self, other: &Individual) -> bool {
        self.fingerprint == other.fingerprint && self.architecture.same_partition(&other.architecture)
    }

    /// Recomputes the fitness record against a reference set.
    pub fn rescore(&mut self, reference: &[ObjectiveVector], exclude: Option<usize>, cfg: &FitnessConfig) {
        let f_obj = maximin(&self.assessment.objectives, reference, exclude);
        self.fitness = FitnessRecord::new(
            f_obj,
            self.assessment.f_sub,
            &self.assessment.feasibility,
            self.fitness.removal_penalized,
            cfg,
        );
    }
}

/// Refreshes every fitness record with the population's own objective
/// vectors as the reference set.
pub fn evaluate_population(pop: &mut [Individual], cfg: &FitnessConfig, exec: Execution) {
    let reference: Vec<ObjectiveVector> = pop.iter().map(|i| i.assessment.objectives).collect();
    par::for_each_mut(exec, pop, |idx, ind| ind.rescore(&reference, Some(idx), cfg));
}

/// Scores outside members (archive) against the population, excluding a
/// population entry with the same id.
pub fn evaluate_against(members: &mut [Individual], pop: &[Individual], cfg: &FitnessConfig) {
    let reference: Vec<ObjectiveVector> = pop.iter().map(|i| i.assessment.objectives).collect();
    for m in members {
        let exclude = pop.iter().position(|p| p.id == m.id);
        m.rescore(&reference, exclude, cfg);
    }
}

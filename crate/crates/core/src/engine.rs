//! Steady-state evolutionary loop with scheduled interaction stops.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::architecture::{check_feasibility, random_architecture, Architecture, Component, Phenotype};
use crate::archive::{ArchiveConfig, TerritoryArchive};
use crate::error::{ConfigError, Error, ProtocolError};
use crate::fitness::{compare, evaluate_population, Evaluator, FitnessConfig, Individual};
use crate::interaction::{build_schedule, freeze, select_candidates, Candidate, CandidateSet, DecisionMaker, FeedbackBundle, InteractionSchedule};
use crate::metrics::{ErpWeights, MetricVector, Normalizer, ObjectiveVector, K};
use crate::model::AnalysisModel;
use crate::par::{self, Execution};
use crate::preferences::{Bounds, Preference, PreferenceStore};

const MAX_MUTATION_ATTEMPTS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MutationWeights {
    pub add: f64,
    pub remove: f64,
    pub merge: f64,
    pub split: f64,
    pub move_class: f64,
}

impl Default for MutationWeights {
    fn default() -> Self {
        Self { add: 0.2, remove: 0.1, merge: 0.1, split: 0.3, move_class: 0.3 }
    }
}

impl MutationWeights {
    pub fn weight(&self, op: MutationOp) -> f64 {
        match op {
            MutationOp::Add => self.add,
            MutationOp::Remove => self.remove,
            MutationOp::Merge => self.merge,
            MutationOp::Split => self.split,
            MutationOp::MoveClass => self.move_class,
        }
    }
}

/// Run parameters. Every field has a default, so a config file only needs
/// the values it changes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub population_size: usize,
    pub max_evaluations: usize,
    pub n_min: usize,
    pub n_max: usize,
    pub mutation_weights: MutationWeights,
    pub erp_weights: ErpWeights,
    pub fitness: FitnessConfig,
    pub archive: ArchiveConfig,
    /// Number of interaction stops (0 runs without interaction).
    pub interactions: usize,
    /// Solutions shown per stop.
    pub candidates: usize,
    pub seed: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            population_size: 150,
            max_evaluations: 24_000,
            n_min: 2,
            n_max: 6,
            mutation_weights: MutationWeights::default(),
            erp_weights: ErpWeights::default(),
            fitness: FitnessConfig::default(),
            archive: ArchiveConfig::default(),
            interactions: 3,
            candidates: 3,
            seed: 0,
        }
    }
}

impl EngineConfig {
    /// Generations afforded by the evaluation budget.
    pub fn generations(&self) -> usize {
        self.max_evaluations.saturating_sub(self.population_size) / 2
    }

    pub fn bounds(&self) -> Bounds {
        Bounds { n_min: self.n_min, n_max: self.n_max }
    }

    pub fn validate(&self, model: &AnalysisModel) -> Result<(), ConfigError> {
        let fail = |msg: String| Err(ConfigError::new(msg));
        if self.population_size < 2 {
            return fail(format!("population_size must be at least 2, got {}", self.population_size));
        }
        if self.max_evaluations < self.population_size {
            return fail(format!(
                "max_evaluations ({}) is below population_size ({})",
                self.max_evaluations, self.population_size
            ));
        }
        if self.n_min < 2 || self.n_max < self.n_min {
            return fail(format!("component bounds [{}, {}] are invalid", self.n_min, self.n_max));
        }
        if self.n_min > model.class_count() {
            return fail(format!("n_min ({}) exceeds the number of classes ({})", self.n_min, model.class_count()));
        }
        let w = &self.mutation_weights;
        let ws = [w.add, w.remove, w.merge, w.split, w.move_class];
        if ws.iter().any(|x| !(*x >= 0.0)) || ws.iter().sum::<f64>() <= 0.0 {
            return fail("mutation weights must be non-negative with a positive sum".into());
        }
        if !self.erp_weights.is_valid() {
            return fail("ERP weights must be non-negative".into());
        }
        if !self.fitness.is_valid() {
            return fail("fitness weights must be non-negative and sum to 1".into());
        }
        let a = &self.archive;
        if !(a.tau_final > 0.0 && a.tau_final <= a.tau_initial) || !(a.decrease > 0.0 && a.decrease <= 1.0) {
            return fail("territory parameters need 0 < tau_final <= tau_initial and 0 < decrease <= 1".into());
        }
        if self.interactions > 0 && self.candidates == 0 {
            return fail("at least one candidate must be shown per stop".into());
        }
        if self.candidates > self.population_size {
            return fail("more candidates per stop than individuals".into());
        }
        build_schedule(self.generations(), self.interactions)?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MutationOp {
    Add,
    Remove,
    Merge,
    Split,
    MoveClass,
}

impl MutationOp {
    pub const ALL: [MutationOp; 5] =
        [MutationOp::Add, MutationOp::Remove, MutationOp::Merge, MutationOp::Split, MutationOp::MoveClass];

    /// Whether the operation can run on `arch` and keep the count in bounds.
    pub fn applicable(self, arch: &Architecture, n_min: usize, n_max: usize) -> bool {
        let n = arch.len();
        let free: Vec<&Component> = arch.components().iter().filter(|c| !c.frozen).collect();
        let splittable = free.iter().any(|c| c.len() >= 2);
        match self {
            MutationOp::Add | MutationOp::Split => n < n_max && splittable,
            MutationOp::Remove | MutationOp::Merge => n > n_min && free.len() >= 2,
            MutationOp::MoveClass => free.len() >= 2 && splittable,
        }
    }

    /// Applies the transformation. The caller checks applicability first.
    pub fn apply<R: Rng + ?Sized>(self, arch: &Architecture, rng: &mut R) -> Architecture {
        let mut comps: Vec<Component> = arch.components().to_vec();
        let free: Vec<usize> = (0..comps.len()).filter(|&i| !comps[i].frozen).collect();
        let splittable: Vec<usize> = free.iter().copied().filter(|&i| comps[i].len() >= 2).collect();
        match self {
            MutationOp::Add => {
                let i = *splittable.choose(rng).expect("checked applicable");
                let mut classes = comps[i].classes().to_vec();
                let size = rng.random_range(1..classes.len());
                rand::seq::SliceRandom::shuffle(classes.as_mut_slice(), rng);
                let moved = classes.split_off(classes.len() - size);
                comps[i] = Component::new(classes);
                comps.push(Component::new(moved));
            }
            MutationOp::Split => {
                let i = *splittable.choose(rng).expect("checked applicable");
                let classes = comps[i].classes().to_vec();
                let (a, b) = loop {
                    let (a, b): (Vec<usize>, Vec<usize>) = classes.iter().partition(|_| rng.random_bool(0.5));
                    if !a.is_empty() && !b.is_empty() {
                        break (a, b);
                    }
                };
                comps[i] = Component::new(a);
                comps.push(Component::new(b));
            }
            MutationOp::Remove => {
                let i = *free.choose(rng).expect("checked applicable");
                let others: Vec<usize> = free.iter().copied().filter(|&j| j != i).collect();
                let mut groups: Vec<Vec<usize>> = others.iter().map(|&j| comps[j].classes().to_vec()).collect();
                let slots = groups.len();
                for &cl in comps[i].classes() {
                    groups[rng.random_range(0..slots)].push(cl);
                }
                for (slot, &j) in others.iter().enumerate() {
                    comps[j] = Component::new(std::mem::take(&mut groups[slot]));
                }
                comps.remove(i);
            }
            MutationOp::Merge => {
                let picked: Vec<usize> = free.choose_multiple(rng, 2).copied().collect();
                let (i, j) = (picked[0].min(picked[1]), picked[0].max(picked[1]));
                let mut union = comps[i].classes().to_vec();
                union.extend_from_slice(comps[j].classes());
                comps[i] = Component::new(union);
                comps.remove(j);
            }
            MutationOp::MoveClass => {
                let src = *splittable.choose(rng).expect("checked applicable");
                let targets: Vec<usize> = free.iter().copied().filter(|&j| j != src).collect();
                let dst = *targets.choose(rng).expect("checked applicable");
                let mut from = comps[src].classes().to_vec();
                let cl = from.remove(rng.random_range(0..from.len()));
                let mut to = comps[dst].classes().to_vec();
                to.push(cl);
                comps[src] = Component::new(from);
                comps[dst] = Component::new(to);
            }
        }
        Architecture::new(comps)
    }
}

/// Mutates `parent`, retrying with a fresh roulette spin until the mutant is
/// feasible and within the component bounds. Returns the parent unchanged
/// (and `None`) when every attempt fails.
pub fn mutate<R: Rng + ?Sized>(
    parent: &Architecture,
    model: &AnalysisModel,
    weights: &MutationWeights,
    n_min: usize,
    n_max: usize,
    rng: &mut R,
) -> (Architecture, Option<MutationOp>) {
    let ops: Vec<(MutationOp, f64)> = MutationOp::ALL
        .iter()
        .filter(|op| weights.weight(**op) > 0.0 && op.applicable(parent, n_min, n_max))
        .map(|op| (*op, weights.weight(*op)))
        .collect();
    let total: f64 = ops.iter().map(|(_, w)| w).sum();
    if ops.is_empty() {
        return (parent.clone(), None);
    }
    for _ in 0..MAX_MUTATION_ATTEMPTS {
        let mut spin = rng.random::<f64>() * total;
        let mut op = ops[ops.len() - 1].0;
        for (candidate, w) in &ops {
            if spin < *w {
                op = *candidate;
                break;
            }
            spin -= w;
        }
        let child = op.apply(parent, rng);
        let n = child.len();
        if n >= n_min && n <= n_max && check_feasibility(&child, model).feasible {
            return (child, Some(op));
        }
    }
    (parent.clone(), None)
}

/// Mean metric values of a set of individuals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetSummary {
    pub size: usize,
    pub raw: MetricVector,
    pub normalized: ObjectiveVector,
}

impl SetSummary {
    pub fn of<'a>(members: impl Iterator<Item = &'a Individual>) -> Option<Self> {
        let mut raw = [0.0; K];
        let mut norm = [0.0; K];
        let mut size = 0;
        for m in members {
            let r = &m.assessment.metrics;
            for (k, v) in [r.icd, r.erp, r.gcr].into_iter().enumerate() {
                raw[k] += v;
                norm[k] += m.assessment.objectives.0[k];
            }
            size += 1;
        }
        if size == 0 {
            return None;
        }
        let n = size as f64;
        Some(Self {
            size,
            raw: MetricVector { icd: raw[0] / n, erp: raw[1] / n, gcr: raw[2] / n },
            normalized: ObjectiveVector(norm.map(|v| v / n)),
        })
    }
}

/// One line of the per-generation statistics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    pub evaluations: usize,
    pub best_combined: f64,
    pub mean_combined: f64,
    pub feasible: usize,
    pub population: SetSummary,
    pub archive: Option<SetSummary>,
    pub archive_size: usize,
    pub component_histogram: BTreeMap<usize, usize>,
}

impl GenerationStats {
    /// Most frequent component count; ties go to the smaller count.
    pub fn modal_component_count(&self) -> usize {
        let mut best = (0, 0);
        for (&n, &count) in &self.component_histogram {
            if count > best.1 {
                best = (n, count);
            }
        }
        best.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchiveEntry {
    pub solution: u64,
    pub phenotype: Phenotype,
    pub metrics: MetricVector,
    pub objectives: ObjectiveVector,
    pub f_sub: Option<f64>,
    pub preserved: bool,
    pub region: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchiveSnapshot {
    pub generation: usize,
    pub evaluations: usize,
    pub territories: Vec<f64>,
    pub members: Vec<ArchiveEntry>,
}

impl ArchiveSnapshot {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("snapshot serializes")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineStatus {
    Running,
    AwaitingFeedback,
    Finished,
}

pub enum Progress {
    Awaiting(CandidateSet),
    Finished,
}

pub enum Tick {
    Generation(GenerationStats),
    Awaiting(CandidateSet),
    Finished,
}

/// What an applied bundle changed, for logging.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FeedbackOutcome {
    pub preferences: usize,
    pub archived: Vec<u64>,
    pub marked: Vec<u64>,
    pub frozen: Vec<u64>,
    pub stop_search: bool,
    pub reduced_region: Option<usize>,
}

pub struct Engine {
    model: Arc<AnalysisModel>,
    cfg: EngineConfig,
    normalizer: Normalizer,
    exec: Execution,
    rng: ChaCha8Rng,
    population: Vec<Individual>,
    archive: TerritoryArchive,
    store: PreferenceStore,
    schedule: InteractionSchedule,
    generation: usize,
    evaluations: usize,
    next_id: u64,
    next_stop: usize,
    pending: Option<CandidateSet>,
    stopped: bool,
    initial: GenerationStats,
}

impl Engine {
    /// Validates the configuration and builds the initial population and
    /// archive.
    pub fn new(model: Arc<AnalysisModel>, cfg: EngineConfig) -> Result<Self, ConfigError> {
        Self::with_execution(model, cfg, Execution::default())
    }

    pub fn with_execution(model: Arc<AnalysisModel>, cfg: EngineConfig, exec: Execution) -> Result<Self, ConfigError> {
        cfg.validate(&model)?;
        let schedule = build_schedule(cfg.generations(), cfg.interactions)?;
        let normalizer = Normalizer::new(&model, &cfg.erp_weights, cfg.n_min);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let archs = (0..cfg.population_size)
            .map(|_| random_architecture(&model, cfg.n_min, cfg.n_max, &mut rng))
            .collect::<Result<Vec<_>, _>>()?;
        let store = PreferenceStore::new();
        let evaluator = Evaluator { model: &model, weights: cfg.erp_weights, normalizer, bounds: cfg.bounds() };
        let assessments = par::map(exec, &archs, |a| evaluator.assess(a, &store));
        let mut population: Vec<Individual> = archs
            .into_iter()
            .zip(assessments)
            .enumerate()
            .map(|(i, (a, s))| Individual::new(i as u64, a, s))
            .collect();
        evaluate_population(&mut population, &cfg.fitness, exec);
        let mut engine = Self {
            archive: TerritoryArchive::new(cfg.archive),
            next_id: population.len() as u64,
            evaluations: population.len(),
            model,
            cfg,
            normalizer,
            exec,
            rng,
            population,
            store,
            schedule,
            generation: 0,
            next_stop: 0,
            pending: None,
            stopped: false,
            initial: empty_stats(),
        };
        engine.archive.update(&engine.population);
        engine.refresh_archive_fitness();
        engine.initial = engine.stats();
        Ok(engine)
    }

    pub fn model(&self) -> &AnalysisModel {
        &self.model
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn population(&self) -> &[Individual] {
        &self.population
    }

    pub fn archive(&self) -> &TerritoryArchive {
        &self.archive
    }

    pub fn preferences(&self) -> &PreferenceStore {
        &self.store
    }

    pub fn schedule(&self) -> &InteractionSchedule {
        &self.schedule
    }

    pub fn generation(&self) -> usize {
        self.generation
    }

    pub fn evaluations(&self) -> usize {
        self.evaluations
    }

    pub fn total_generations(&self) -> usize {
        self.schedule.generations
    }

    pub fn next_stop(&self) -> usize {
        self.next_stop
    }

    pub fn pending(&self) -> Option<&CandidateSet> {
        self.pending.as_ref()
    }

    /// Statistics of the population right after initialization.
    pub fn initial_stats(&self) -> &GenerationStats {
        &self.initial
    }

    pub fn status(&self) -> EngineStatus {
        if self.pending.is_some() {
            EngineStatus::AwaitingFeedback
        } else if self.is_finished() {
            EngineStatus::Finished
        } else {
            EngineStatus::Running
        }
    }

    pub fn is_finished(&self) -> bool {
        self.pending.is_none() && (self.stopped || self.generation >= self.schedule.generations)
    }

    fn evaluator(&self) -> Evaluator<'_> {
        Evaluator { model: &self.model, weights: self.cfg.erp_weights, normalizer: self.normalizer, bounds: self.cfg.bounds() }
    }

    /// Ends the run at the current generation. A pending stop is dropped.
    pub fn request_stop(&mut self) {
        self.stopped = true;
        self.pending = None;
    }

    fn tournament(&mut self, from_archive: bool) -> Architecture {
        let pool: Vec<&Individual> =
            if from_archive { self.archive.individuals().collect() } else { self.population.iter().collect() };
        let a = self.rng.random_range(0..pool.len());
        let b = self.rng.random_range(0..pool.len());
        let winner = match compare(&pool[a].fitness, &pool[b].fitness).then(a.cmp(&b)) {
            std::cmp::Ordering::Greater => b,
            _ => a,
        };
        pool[winner].architecture.clone()
    }

    /// One parent from the population and one from the archive (both from
    /// the population while the archive is empty).
    pub fn select_parents(&mut self) -> (Architecture, Architecture) {
        let first = self.tournament(false);
        let second = self.tournament(!self.archive.is_empty());
        (first, second)
    }

    /// Runs one generation: two offspring, replacement, archive update and
    /// fitness refresh.
    pub fn step_generation(&mut self) -> GenerationStats {
        let (p1, p2) = self.select_parents();
        let cfg = &self.cfg;
        let children: Vec<Architecture> = [p1, p2]
            .iter()
            .map(|p| mutate(p, &self.model, &cfg.mutation_weights, cfg.n_min, cfg.n_max, &mut self.rng).0)
            .collect();
        let evaluator = self.evaluator();
        let assessments = par::map(self.exec, &children, |a| evaluator.assess(a, &self.store));
        let reference: Vec<ObjectiveVector> = self.population.iter().map(|i| i.assessment.objectives).collect();
        let mut offspring: Vec<Individual> = Vec::with_capacity(2);
        for (arch, assessment) in children.into_iter().zip(assessments) {
            let mut child = Individual::new(self.next_id, arch, assessment);
            self.next_id += 1;
            child.rescore(&reference, None, &self.cfg.fitness);
            offspring.push(child);
        }
        self.evaluations += offspring.len();
        self.replace(offspring);
        evaluate_population(&mut self.population, &self.cfg.fitness, self.exec);
        self.archive.update(&self.population);
        self.refresh_archive_fitness();
        self.generation += 1;
        self.stats()
    }

    fn worst_first(&self, idx: &mut [usize]) {
        let pop = &self.population;
        idx.sort_by(|&a, &b| compare(&pop[b].fitness, &pop[a].fitness).then(b.cmp(&a)));
    }

    fn replace(&mut self, offspring: Vec<Individual>) {
        let mut offspring = offspring.into_iter();
        let mut marked: Vec<usize> =
            (0..self.population.len()).filter(|&i| self.population[i].marked_for_removal && !self.population[i].preserved).collect();
        self.worst_first(&mut marked);
        let mut replaced = Vec::new();
        for &i in marked.iter().take(2) {
            match offspring.next() {
                Some(child) => {
                    self.population[i] = child;
                    replaced.push(i);
                }
                None => break,
            }
        }
        for &i in marked.iter().skip(2) {
            self.population[i].fitness.removal_penalized = true;
        }
        for child in offspring {
            let mut candidates: Vec<usize> = (0..self.population.len())
                .filter(|&i| !self.population[i].preserved && !replaced.contains(&i))
                .collect();
            self.worst_first(&mut candidates);
            if let Some(&worst) = candidates.first() {
                if compare(&child.fitness, &self.population[worst].fitness).is_lt() {
                    self.population[worst] = child;
                    replaced.push(worst);
                }
            }
        }
    }

    fn refresh_archive_fitness(&mut self) {
        let reference: Vec<ObjectiveVector> = self.population.iter().map(|i| i.assessment.objectives).collect();
        let fitness = self.cfg.fitness;
        let ids: Vec<u64> = self.population.iter().map(|i| i.id).collect();
        for m in self.archive.members_mut() {
            let exclude = ids.iter().position(|&id| id == m.individual.id);
            m.individual.rescore(&reference, exclude, &fitness);
        }
    }

    pub fn stats(&self) -> GenerationStats {
        let combined: Vec<f64> = self.population.iter().map(|i| i.fitness.combined).collect();
        let mut histogram = BTreeMap::new();
        for i in &self.population {
            *histogram.entry(i.architecture.len()).or_insert(0) += 1;
        }
        GenerationStats {
            generation: self.generation,
            evaluations: self.evaluations,
            best_combined: combined.iter().cloned().fold(f64::INFINITY, f64::min),
            mean_combined: combined.iter().sum::<f64>() / combined.len() as f64,
            feasible: self.population.iter().filter(|i| i.assessment.feasibility.feasible).count(),
            population: SetSummary::of(self.population.iter()).expect("population is never empty"),
            archive: SetSummary::of(self.archive.individuals()),
            archive_size: self.archive.len(),
            component_histogram: histogram,
        }
    }

    /// Advances by one unit of work: opens a due stop, or runs one
    /// generation. Pending stops and finished runs are reported unchanged.
    pub fn tick(&mut self) -> Tick {
        if let Some(p) = &self.pending {
            return Tick::Awaiting(p.clone());
        }
        if self.is_finished() {
            return Tick::Finished;
        }
        if self.schedule.stops.get(self.next_stop) == Some(&self.generation) {
            let picked = select_candidates(&self.population, self.cfg.candidates, &mut self.rng);
            let candidates = picked.iter().map(|&i| Candidate::new(&self.population[i], &self.model)).collect();
            let set = CandidateSet { stop: self.next_stop, generation: self.generation, candidates };
            self.pending = Some(set.clone());
            return Tick::Awaiting(set);
        }
        Tick::Generation(self.step_generation())
    }

    /// Runs generations until the next scheduled stop or the end of the run.
    /// Every completed generation is reported to `on_generation`.
    pub fn advance(&mut self, on_generation: &mut dyn FnMut(&GenerationStats)) -> Progress {
        loop {
            match self.tick() {
                Tick::Generation(stats) => on_generation(&stats),
                Tick::Awaiting(set) => return Progress::Awaiting(set),
                Tick::Finished => return Progress::Finished,
            }
        }
    }

    /// Applies the decision maker's answer to the pending stop. Nothing
    /// changes when the bundle is rejected.
    pub fn submit(&mut self, bundle: &FeedbackBundle) -> Result<FeedbackOutcome, ProtocolError> {
        let shown = self.pending.as_ref().ok_or(ProtocolError::NotAwaiting)?;
        bundle.validate(shown)?;
        let prefs: Vec<Preference> = bundle.entries.iter().filter_map(|e| e.preference.clone()).collect();
        self.store.record_interaction(&prefs, &self.model, self.cfg.bounds())?;

        let mut outcome = FeedbackOutcome { preferences: prefs.iter().filter(|p| !p.is_none()).count(), ..Default::default() };
        for e in &bundle.entries {
            let Some(idx) = self.population.iter().position(|i| i.id == e.solution) else { continue };
            if !e.actions.freeze_components.is_empty() {
                let ind = &mut self.population[idx];
                ind.architecture = freeze(&ind.architecture, &e.actions.freeze_components);
                outcome.frozen.push(e.solution);
            }
            if e.actions.remove_from_population {
                self.population[idx].marked_for_removal = true;
                outcome.marked.push(e.solution);
            }
            if e.actions.add_to_archive {
                self.population[idx].preserved = true;
                self.archive.insert_user_selected(&self.population[idx]);
                outcome.archived.push(e.solution);
            }
        }
        outcome.stop_search = bundle.stop_requested();

        // the store changed: refresh subjective scores everywhere
        let evaluator = Evaluator {
            model: &self.model,
            weights: self.cfg.erp_weights,
            normalizer: self.normalizer,
            bounds: self.cfg.bounds(),
        };
        let store = &self.store;
        par::for_each_mut(self.exec, &mut self.population, |_, ind| {
            ind.assessment.f_sub = evaluator.subjective(&ind.architecture, &ind.assessment.objectives, store);
        });
        for m in self.archive.members_mut() {
            let ind = &mut m.individual;
            ind.assessment.f_sub = evaluator.subjective(&ind.architecture, &ind.assessment.objectives, store);
        }
        evaluate_population(&mut self.population, &self.cfg.fitness, self.exec);
        self.archive.update(&self.population);
        self.refresh_archive_fitness();
        outcome.reduced_region = self.archive.reduce_after_interaction();

        self.pending = None;
        self.next_stop += 1;
        if outcome.stop_search {
            self.stopped = true;
        }
        Ok(outcome)
    }

    /// Drives the run to completion, asking `dm` at every stop.
    pub fn run(
        &mut self,
        dm: &mut dyn DecisionMaker,
        on_generation: &mut dyn FnMut(&GenerationStats),
    ) -> Result<(), Error> {
        while let Progress::Awaiting(shown) = self.advance(on_generation) {
            let bundle = dm.decide(&shown, &self.model)?;
            self.submit(&bundle)?;
        }
        Ok(())
    }

    pub fn archive_snapshot(&self) -> ArchiveSnapshot {
        ArchiveSnapshot {
            generation: self.generation,
            evaluations: self.evaluations,
            territories: self.archive.regions().iter().map(|r| r.tau).collect(),
            members: self
                .archive
                .members()
                .iter()
                .map(|m| ArchiveEntry {
                    solution: m.individual.id,
                    phenotype: Phenotype::new(&m.individual.architecture, &self.model),
                    metrics: m.individual.assessment.metrics,
                    objectives: m.individual.assessment.objectives,
                    f_sub: m.individual.assessment.f_sub,
                    preserved: m.individual.preserved,
                    region: m.region,
                })
                .collect(),
        }
    }
}

fn empty_stats() -> GenerationStats {
    GenerationStats {
        generation: 0,
        evaluations: 0,
        best_combined: 0.0,
        mean_combined: 0.0,
        feasible: 0,
        population: SetSummary { size: 0, raw: MetricVector { icd: 0.0, erp: 0.0, gcr: 0.0 }, normalized: ObjectiveVector([0.0; K]) },
        archive: None,
        archive_size: 0,
        component_histogram: BTreeMap::new(),
    }
}

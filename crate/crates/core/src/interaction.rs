//! Interaction stops: when they happen, which solutions are shown, what the
//! decision maker can send back, and scripted stand-ins for a human.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::architecture::{Architecture, Phenotype};
use crate::error::{ConfigError, ProtocolError, ReplayError};
use crate::fitness::Individual;
use crate::metrics::{MetricVector, ObjectiveVector, K};
use crate::model::AnalysisModel;
use crate::preferences::{Preference, PreferenceKind};

const KMEANS_MAX_ITERATIONS: usize = 50;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionSchedule {
    pub interactions: usize,
    pub generations: usize,
    pub stops: Vec<usize>,
}

/// Spreads `h` stops evenly between `g/3` and `5g/6` (floored).
pub fn build_schedule(g: usize, h: usize) -> Result<InteractionSchedule, ConfigError> {
    if h == 0 {
        return Ok(InteractionSchedule { interactions: 0, generations: g, stops: Vec::new() });
    }
    if g < 6 {
        return Err(ConfigError::new(format!("at least 6 generations are needed for interactions, got {g}")));
    }
    let first = g / 3;
    let last = 5 * g / 6;
    if h == 1 {
        return Ok(InteractionSchedule { interactions: 1, generations: g, stops: vec![first] });
    }
    if h > last - first + 1 {
        return Err(ConfigError::new(format!(
            "{h} interactions do not fit between generations {first} and {last}"
        )));
    }
    let span = (last - first) as f64;
    let stops = (0..h).map(|i| first + (i as f64 * span / (h - 1) as f64).round() as usize).collect();
    Ok(InteractionSchedule { interactions: h, generations: g, stops })
}

/// One solution shown at a stop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub solution: u64,
    pub phenotype: Phenotype,
    pub metrics: MetricVector,
    pub objectives: ObjectiveVector,
    pub f_obj: f64,
    pub f_sub: Option<f64>,
}

impl Candidate {
    pub fn new(ind: &Individual, model: &AnalysisModel) -> Self {
        Self {
            solution: ind.id,
            phenotype: Phenotype::new(&ind.architecture, model),
            metrics: ind.assessment.metrics,
            objectives: ind.assessment.objectives,
            f_obj: ind.fitness.f_obj,
            f_sub: ind.assessment.f_sub,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub stop: usize,
    pub generation: usize,
    pub candidates: Vec<Candidate>,
}

impl CandidateSet {
    pub fn position(&self, solution: u64) -> Option<usize> {
        self.candidates.iter().position(|c| c.solution == solution)
    }
}

/// Lloyd's algorithm with k-means++ seeding. Returns the final centroids and
/// the cluster index of every point.
pub fn kmeans_pp<R: Rng + ?Sized>(points: &[ObjectiveVector], k: usize, rng: &mut R) -> (Vec<ObjectiveVector>, Vec<usize>) {
    assert!(k >= 1 && k <= points.len(), "k must lie in 1..=points");
    let mut centroids = vec![points[rng.random_range(0..points.len())]];
    let mut d2: Vec<f64> = points.iter().map(|p| p.l2_sq(&centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if *d > 0.0 && target < *d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            rng.random_range(0..points.len())
        };
        centroids.push(points[next]);
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(p.l2_sq(&points[next]));
        }
    }

    let mut assignment = vec![usize::MAX; points.len()];
    for _ in 0..KMEANS_MAX_ITERATIONS {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let c = nearest(p, &centroids);
            if assignment[i] != c {
                assignment[i] = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![[0.0; K]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignment) {
            counts[c] += 1;
            for j in 0..K {
                sums[c][j] += p.0[j];
            }
        }
        for c in 0..k {
            // an emptied cluster keeps its previous centroid
            if counts[c] > 0 {
                centroids[c] = ObjectiveVector(sums[c].map(|s| s / counts[c] as f64));
            }
        }
    }
    (centroids, assignment)
}

fn nearest(p: &ObjectiveVector, centroids: &[ObjectiveVector]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = p.l2_sq(centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best.0
}

/// Picks `m` population indices: `m - 1` cluster representatives plus the
/// member that best satisfies the preferences (lowest `f_sub`, or lowest
/// `f_obj` before any preference exists). Feasible, unmarked individuals are
/// preferred; others only fill in when too few remain.
pub fn select_candidates<R: Rng + ?Sized>(population: &[Individual], m: usize, rng: &mut R) -> Vec<usize> {
    let m = m.min(population.len());
    if m == 0 {
        return Vec::new();
    }
    let mut eligible: Vec<usize> = (0..population.len())
        .filter(|&i| population[i].assessment.feasibility.feasible && !population[i].marked_for_removal)
        .collect();
    if eligible.len() < m {
        let mut rest: Vec<usize> = (0..population.len()).filter(|i| !eligible.contains(i)).collect();
        rest.sort_by(|&a, &b| crate::fitness::compare(&population[a].fitness, &population[b].fitness).then(a.cmp(&b)));
        eligible.extend(rest.into_iter().take(m - eligible.len()));
    }

    let score = |i: usize| population[i].assessment.f_sub.unwrap_or(population[i].fitness.f_obj);
    let best = *eligible
        .iter()
        .min_by(|&&a, &&b| score(a).total_cmp(&score(b)).then(a.cmp(&b)))
        .expect("eligible is non-empty");

    let mut chosen: Vec<usize> = Vec::with_capacity(m);
    let is_taken = |chosen: &[usize], i: usize| {
        i == best || chosen.iter().any(|&c| c == i || population[c].same_solution(&population[i]))
            || population[best].same_solution(&population[i])
    };

    let pool: Vec<usize> = eligible.iter().copied().filter(|&i| i != best).collect();
    let k = m - 1;
    if k > 0 && !pool.is_empty() {
        let points: Vec<ObjectiveVector> = pool.iter().map(|&i| population[i].assessment.objectives).collect();
        let (centroids, assignment) = kmeans_pp(&points, k.min(points.len()), rng);
        for (c, centroid) in centroids.iter().enumerate() {
            let by_distance = |members: &mut Vec<usize>| {
                members.sort_by(|&a, &b| points[a].l2_sq(centroid).total_cmp(&points[b].l2_sq(centroid)).then(a.cmp(&b)))
            };
            let mut members: Vec<usize> = (0..pool.len()).filter(|&j| assignment[j] == c).collect();
            by_distance(&mut members);
            let mut pick = members.iter().map(|&j| pool[j]).find(|&i| !is_taken(&chosen, i));
            if pick.is_none() {
                let mut all: Vec<usize> = (0..pool.len()).collect();
                by_distance(&mut all);
                pick = all.iter().map(|&j| pool[j]).find(|&i| !is_taken(&chosen, i));
            }
            if let Some(i) = pick {
                chosen.push(i);
            }
        }
    }
    // fewer distinct solutions than slots: allow repeated partitions
    for &i in eligible.iter() {
        if chosen.len() >= k {
            break;
        }
        if i != best && !chosen.contains(&i) {
            chosen.push(i);
        }
    }
    chosen.push(best);
    chosen
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Actions {
    pub add_to_archive: bool,
    pub remove_from_population: bool,
    /// Indices into the candidate's component list.
    pub freeze_components: Vec<usize>,
    pub stop_search: bool,
}

impl Actions {
    pub fn is_empty(&self) -> bool {
        self == &Actions::default()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackEntry {
    pub solution: u64,
    #[serde(default)]
    pub preference: Option<Preference>,
    #[serde(default)]
    pub actions: Actions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackBundle {
    pub stop: usize,
    #[serde(default)]
    pub entries: Vec<FeedbackEntry>,
}

impl FeedbackBundle {
    pub fn empty(stop: usize) -> Self {
        Self { stop, entries: Vec::new() }
    }

    /// Structural checks against the candidate set shown at this stop.
    pub fn validate(&self, shown: &CandidateSet) -> Result<(), ProtocolError> {
        if self.stop != shown.stop {
            return Err(ProtocolError::WrongStop { expected: shown.stop, got: self.stop });
        }
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            let idx = shown.position(e.solution).ok_or(ProtocolError::UnknownSolution(e.solution))?;
            if !seen.insert(e.solution) {
                return Err(ProtocolError::DuplicateEntry(e.solution));
            }
            if e.actions.add_to_archive && e.actions.remove_from_population {
                return Err(ProtocolError::ConflictingActions(e.solution));
            }
            let n = shown.candidates[idx].phenotype.components.len();
            if let Some(&c) = e.actions.freeze_components.iter().find(|&&c| c >= n) {
                return Err(ProtocolError::UnknownComponent { solution: e.solution, component: c });
            }
        }
        Ok(())
    }

    pub fn stop_requested(&self) -> bool {
        self.entries.iter().any(|e| e.actions.stop_search)
    }
}

/// Anything that can answer an interaction stop.
pub trait DecisionMaker {
    fn decide(&mut self, shown: &CandidateSet, model: &AnalysisModel) -> Result<FeedbackBundle, ReplayError>;
}

fn default_likert() -> u8 {
    5
}

/// Deterministic stand-ins for a human decision maker.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScriptedPolicy {
    /// Answers "no preference" for every candidate.
    Noop,
    /// States a preferred number of components once per stop.
    FixedNc {
        n: usize,
        #[serde(default = "default_likert")]
        likert: u8,
        /// Also saves the best-satisfying candidate to the archive.
        #[serde(default)]
        archive_candidate: bool,
    },
    /// Steers towards a reference decomposition (groups of class ids): the
    /// first candidate carries its component count, the others ask for one
    /// reference group each, cycling through the groups across stops.
    TargetArchitecture {
        reference: Vec<Vec<String>>,
        #[serde(default = "default_likert")]
        likert: u8,
        #[serde(default)]
        archive_candidate: bool,
    },
    /// Feeds back previously recorded bundles, one per stop.
    Replay { bundles: Vec<FeedbackBundle> },
}

impl ScriptedPolicy {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

impl DecisionMaker for ScriptedPolicy {
    fn decide(&mut self, shown: &CandidateSet, _model: &AnalysisModel) -> Result<FeedbackBundle, ReplayError> {
        let stop = shown.stop;
        let archive_last = |entries: &mut Vec<FeedbackEntry>, enabled: bool| {
            if !enabled {
                return;
            }
            if let Some(last) = shown.candidates.last() {
                match entries.iter_mut().find(|e| e.solution == last.solution) {
                    Some(e) => e.actions.add_to_archive = true,
                    None => entries.push(FeedbackEntry {
                        solution: last.solution,
                        preference: None,
                        actions: Actions { add_to_archive: true, ..Default::default() },
                    }),
                }
            }
        };
        let bundle = match self {
            ScriptedPolicy::Noop => FeedbackBundle::empty(stop),
            ScriptedPolicy::FixedNc { n, likert, archive_candidate } => {
                let mut entries = Vec::new();
                if let Some(first) = shown.candidates.first() {
                    entries.push(FeedbackEntry {
                        solution: first.solution,
                        preference: Some(Preference::new(PreferenceKind::NumberOfComponents { n: *n }, *likert)),
                        actions: Actions::default(),
                    });
                }
                archive_last(&mut entries, *archive_candidate);
                FeedbackBundle { stop, entries }
            }
            ScriptedPolicy::TargetArchitecture { reference, likert, archive_candidate } => {
                let mut entries = Vec::new();
                let slots = shown.candidates.len().saturating_sub(1).max(1);
                for (i, c) in shown.candidates.iter().enumerate() {
                    let kind = if i == 0 {
                        PreferenceKind::NumberOfComponents { n: reference.len() }
                    } else if reference.is_empty() {
                        continue;
                    } else {
                        let group = &reference[(stop * slots + i - 1) % reference.len()];
                        PreferenceKind::BestComponent { classes: group.clone() }
                    };
                    entries.push(FeedbackEntry {
                        solution: c.solution,
                        preference: Some(Preference::new(kind, *likert)),
                        actions: Actions::default(),
                    });
                }
                archive_last(&mut entries, *archive_candidate);
                FeedbackBundle { stop, entries }
            }
            ScriptedPolicy::Replay { bundles } => {
                bundles.iter().find(|b| b.stop == stop).cloned().ok_or(ReplayError::MissingStop(stop))?
            }
        };
        Ok(bundle)
    }
}

/// Applies component freezing to a copy of `arch`.
pub fn freeze(arch: &Architecture, components: &[usize]) -> Architecture {
    let mut out = arch.clone();
    for (i, c) in out.components_mut().iter_mut().enumerate() {
        if components.contains(&i) {
            c.frozen = true;
        }
    }
    out
}

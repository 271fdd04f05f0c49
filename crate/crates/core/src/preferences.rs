//! Architectural preferences and their degree of achievement.
//!
//! A [`Preference`] is the wire form entered by a decision maker. Before it
//! can be evaluated it is resolved against the model (class ids and
//! operations become indices) and stored in a [`PreferenceStore`], which also
//! carries the per-interaction confidence weights.

use serde::{Deserialize, Serialize};

use crate::architecture::{Architecture, OperationRef, ProvidedInterface};
use crate::error::PreferenceError;
use crate::metrics::{ObjectiveVector, K};
use crate::model::AnalysisModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricId {
    Icd,
    Erp,
    Gcr,
}

impl MetricId {
    /// Objective coordinate holding this metric.
    pub fn index(self) -> usize {
        match self {
            MetricId::Icd => 0,
            MetricId::Erp => 1,
            MetricId::Gcr => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum PreferenceKind {
    None,
    BestComponent { classes: Vec<String> },
    WorstComponent { classes: Vec<String> },
    BestInterface { operations: Vec<OperationRef> },
    WorstInterface { operations: Vec<OperationRef> },
    NumberOfComponents { n: usize },
    /// Bounds are in normalized objective space.
    MetricInRange { metric: MetricId, min: f64, max: f64 },
    AspirationLevels { reference: [f64; K], weights: [f64; K] },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preference {
    #[serde(flatten)]
    pub kind: PreferenceKind,
    /// Likert confidence, 1..=5.
    pub confidence: u8,
}

impl Preference {
    pub fn new(kind: PreferenceKind, confidence: u8) -> Self {
        Self { kind, confidence }
    }

    pub fn none() -> Self {
        Self { kind: PreferenceKind::None, confidence: 1 }
    }

    pub fn is_none(&self) -> bool {
        matches!(self.kind, PreferenceKind::None)
    }

    /// Validates the payload against `model` and the component-count bounds.
    pub fn resolve(&self, model: &AnalysisModel, bounds: Bounds) -> Result<Criterion, PreferenceError> {
        if !(1..=5).contains(&self.confidence) {
            return Err(PreferenceError::Confidence(self.confidence));
        }
        let classes = |ids: &[String]| -> Result<Vec<usize>, PreferenceError> {
            if ids.is_empty() {
                return Err(PreferenceError::Payload("reference component has no classes".into()));
            }
            let mut out = ids
                .iter()
                .map(|id| model.class_idx(id).ok_or_else(|| PreferenceError::UnknownClass(id.clone())))
                .collect::<Result<Vec<_>, _>>()?;
            out.sort_unstable();
            out.dedup();
            Ok(out)
        };
        let operations = |ops: &[OperationRef]| -> Result<Vec<(usize, usize)>, PreferenceError> {
            if ops.is_empty() {
                return Err(PreferenceError::Payload("reference interface has no operations".into()));
            }
            let mut out = ops
                .iter()
                .map(|op| {
                    let unknown = || PreferenceError::UnknownOperation { class: op.class.clone(), method: op.method.clone() };
                    let c = model.class_idx(&op.class).ok_or_else(unknown)?;
                    let m = model.method_idx(c, &op.method).ok_or_else(unknown)?;
                    Ok((c, m))
                })
                .collect::<Result<Vec<_>, _>>()?;
            out.sort_unstable();
            out.dedup();
            Ok(out)
        };
        let in_unit = |x: f64| x.is_finite() && (0.0..=1.0).contains(&x);
        Ok(match &self.kind {
            PreferenceKind::None => Criterion::None,
            PreferenceKind::BestComponent { classes: c } => Criterion::BestComponent(classes(c)?),
            PreferenceKind::WorstComponent { classes: c } => Criterion::WorstComponent(classes(c)?),
            PreferenceKind::BestInterface { operations: o } => Criterion::BestInterface(operations(o)?),
            PreferenceKind::WorstInterface { operations: o } => Criterion::WorstInterface(operations(o)?),
            PreferenceKind::NumberOfComponents { n } => {
                if *n < bounds.n_min || *n > bounds.n_max {
                    return Err(PreferenceError::Payload(format!(
                        "preferred component count {n} outside [{}, {}]",
                        bounds.n_min, bounds.n_max
                    )));
                }
                Criterion::NumberOfComponents(*n)
            }
            PreferenceKind::MetricInRange { metric, min, max } => {
                if !(in_unit(*min) && in_unit(*max) && min < max) {
                    return Err(PreferenceError::Payload(format!("metric range [{min}, {max}] must satisfy 0 <= min < max <= 1")));
                }
                Criterion::MetricInRange { k: metric.index(), min: *min, max: *max }
            }
            PreferenceKind::AspirationLevels { reference, weights } => {
                if !reference.iter().all(|z| in_unit(*z)) {
                    return Err(PreferenceError::Payload("reference point must lie in [0, 1]".into()));
                }
                if !weights.iter().all(|w| w.is_finite() && *w >= 0.0) {
                    return Err(PreferenceError::Payload("aspiration weights must be non-negative".into()));
                }
                Criterion::AspirationLevels { reference: *reference, weights: *weights }
            }
        })
    }
}

/// Component-count limits set for the search.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bounds {
    pub n_min: usize,
    pub n_max: usize,
}

/// A preference resolved to model indices.
#[derive(Clone, Debug, PartialEq)]
pub enum Criterion {
    None,
    BestComponent(Vec<usize>),
    WorstComponent(Vec<usize>),
    BestInterface(Vec<(usize, usize)>),
    WorstInterface(Vec<(usize, usize)>),
    NumberOfComponents(usize),
    MetricInRange { k: usize, min: f64, max: f64 },
    AspirationLevels { reference: [f64; K], weights: [f64; K] },
}

/// What a preference is evaluated against.
#[derive(Clone, Copy, Debug)]
pub struct Subject<'a> {
    pub architecture: &'a Architecture,
    pub interfaces: &'a [ProvidedInterface],
    pub objectives: &'a ObjectiveVector,
}

/// Jaccard index of two sorted, deduplicated slices; two empty sets give 1.
pub fn jaccard<T: Ord>(a: &[T], b: &[T]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let (mut i, mut j, mut common) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                common += 1;
                i += 1;
                j += 1;
            }
        }
    }
    common as f64 / (a.len() + b.len() - common) as f64
}

fn best_component_similarity(arch: &Architecture, reference: &[usize]) -> f64 {
    arch.components().iter().map(|c| jaccard(c.classes(), reference)).fold(0.0, f64::max)
}

fn best_interface_similarity(interfaces: &[ProvidedInterface], reference: &[(usize, usize)]) -> Option<f64> {
    interfaces.iter().map(|i| jaccard(&i.operations, reference)).reduce(f64::max)
}

impl Criterion {
    /// Degree of achievement in `[0, 1]`; higher is better.
    pub fn achievement(&self, subject: &Subject<'_>, bounds: Bounds) -> f64 {
        let value = match self {
            Criterion::None => 0.0,
            Criterion::BestComponent(c) => best_component_similarity(subject.architecture, c),
            Criterion::WorstComponent(c) => 1.0 - best_component_similarity(subject.architecture, c),
            Criterion::BestInterface(ops) => best_interface_similarity(subject.interfaces, ops).unwrap_or(0.0),
            Criterion::WorstInterface(ops) => {
                best_interface_similarity(subject.interfaces, ops).map_or(1.0, |j| 1.0 - j)
            }
            Criterion::NumberOfComponents(target) => {
                component_count_achievement(subject.architecture.len(), *target, bounds)
            }
            Criterion::MetricInRange { k, min, max } => {
                let m = subject.objectives.0[*k];
                if m < *min || m > *max {
                    0.0
                } else {
                    let mid = (min + max) / 2.0;
                    1.0 - (m - mid).abs() / ((max - min) / 2.0)
                }
            }
            Criterion::AspirationLevels { reference, weights } => {
                let asf = (0..K)
                    .map(|k| weights[k] * (subject.objectives.0[k] - reference[k]))
                    .fold(f64::NEG_INFINITY, f64::max);
                if asf <= 0.0 {
                    1.0
                } else {
                    1.0 - asf
                }
            }
        };
        value.clamp(0.0, 1.0)
    }
}

fn component_count_achievement(n: usize, target: usize, bounds: Bounds) -> f64 {
    let (n, target, n_min, n_max) = (n as f64, target as f64, bounds.n_min as f64, bounds.n_max as f64);
    if n < target {
        (n - n_min) / (target - n_min)
    } else if n >= n_max {
        if n == target {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - (n - target) / (n_max - n)
    }
}

/// Convenience wrapper resolving and evaluating a preference in one call.
pub fn achievement(
    pref: &Preference,
    subject: &Subject<'_>,
    model: &AnalysisModel,
    bounds: Bounds,
) -> Result<f64, PreferenceError> {
    Ok(pref.resolve(model, bounds)?.achievement(subject, bounds))
}

/// Confidence weights of one interaction: each Likert value over their sum.
pub fn normalize_confidences(likert: &[u8]) -> Vec<f64> {
    let total: u32 = likert.iter().map(|&l| l as u32).sum();
    likert.iter().map(|&l| l as f64 / total as f64).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct StoredPreference {
    pub preference: Preference,
    pub criterion: Criterion,
    pub interaction: usize,
    pub weight: f64,
}

/// Preferences accumulated over all interactions. Append-only.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PreferenceStore {
    entries: Vec<StoredPreference>,
    interactions: usize,
}

impl PreferenceStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of stored (non-`none`) preferences.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[StoredPreference] {
        &self.entries
    }

    pub fn interactions(&self) -> usize {
        self.interactions
    }

    /// Records the preferences of one interaction. `none` entries are dropped;
    /// nothing is stored if any preference fails validation.
    pub fn record_interaction(
        &mut self,
        prefs: &[Preference],
        model: &AnalysisModel,
        bounds: Bounds,
    ) -> Result<(), PreferenceError> {
        let mut resolved = Vec::new();
        for p in prefs {
            let criterion = p.resolve(model, bounds)?;
            if !p.is_none() {
                resolved.push((p.clone(), criterion));
            }
        }
        let likert: Vec<u8> = resolved.iter().map(|(p, _)| p.confidence).collect();
        let weights = normalize_confidences(&likert);
        let interaction = self.interactions;
        self.entries.extend(resolved.into_iter().zip(weights).map(|((preference, criterion), weight)| {
            StoredPreference { preference, criterion, interaction, weight }
        }));
        self.interactions += 1;
        Ok(())
    }

    /// Subjective score (minimized, in `[0, 1]`), or `None` while no
    /// preference has been stored.
    pub fn subjective_fitness(&self, subject: &Subject<'_>, bounds: Bounds) -> Option<f64> {
        if self.entries.is_empty() {
            return None;
        }
        let total: f64 = self.entries.iter().map(|e| e.weight * e.criterion.achievement(subject, bounds)).sum();
        Some((1.0 - total / self.entries.len() as f64).clamp(0.0, 1.0))
    }
}

//! Territory-based archive.
//!
//! Each member owns a territory: an L1 ball around its objective vector whose
//! radius is the territory size of the member's preferred region. Newcomers
//! landing inside a territory are rejected unless they satisfy the stored
//! preferences better than the member they would displace. Solutions picked by
//! the decision maker are always accepted and never evicted.

use serde::{Deserialize, Serialize};

use crate::fitness::Individual;
use crate::metrics::{ObjectiveVector, K};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchiveConfig {
    /// Initial territory size.
    pub tau_initial: f64,
    /// Lower limit on territory sizes.
    pub tau_final: f64,
    /// Shrink factor applied after each interaction.
    pub decrease: f64,
}

impl Default for ArchiveConfig {
    fn default() -> Self {
        Self { tau_initial: 0.05, tau_final: 0.005, decrease: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub weights: [f64; K],
    pub tau: f64,
}

/// Region weight vectors: the three axes, the barycenter, the six
/// (2/3, 1/3, 0) permutations and the three (1/2, 1/2, 0) permutations.
pub fn region_weights() -> Vec<[f64; K]> {
    let (t, h) = (1.0 / 3.0, 0.5);
    vec![
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
        [t, t, t],
        [2.0 * t, t, 0.0],
        [2.0 * t, 0.0, t],
        [t, 2.0 * t, 0.0],
        [0.0, 2.0 * t, t],
        [t, 0.0, 2.0 * t],
        [0.0, t, 2.0 * t],
        [h, h, 0.0],
        [h, 0.0, h],
        [0.0, h, h],
    ]
}

/// Region minimizing the weighted Chebyshev value `max_k w_k * v_k`; ties go
/// to the lowest id.
pub fn preferred_region(v: &ObjectiveVector, regions: &[[f64; K]]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (r, w) in regions.iter().enumerate() {
        let value = (0..K).map(|k| w[k] * v.0[k]).fold(f64::NEG_INFINITY, f64::max);
        if value < best.1 {
            best = (r, value);
        }
    }
    best.0
}

#[derive(Clone, Debug, PartialEq)]
pub struct Member {
    pub individual: Individual,
    pub region: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TerritoryArchive {
    members: Vec<Member>,
    regions: Vec<Region>,
    weights: Vec<[f64; K]>,
    cfg: ArchiveConfig,
}

impl TerritoryArchive {
    pub fn new(cfg: ArchiveConfig) -> Self {
        let weights = region_weights();
        let regions = weights.iter().map(|w| Region { weights: *w, tau: cfg.tau_initial }).collect();
        Self { members: Vec::new(), regions, weights, cfg }
    }

    pub fn config(&self) -> &ArchiveConfig {
        &self.cfg
    }

    pub fn members(&self) -> &[Member] {
        &self.members
    }

    pub(crate) fn members_mut(&mut self) -> &mut [Member] {
        &mut self.members
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn individuals(&self) -> impl Iterator<Item = &Individual> {
        self.members.iter().map(|m| &m.individual)
    }

    pub fn contains(&self, ind: &Individual) -> bool {
        self.members.iter().any(|m| m.individual.same_solution(ind))
    }

    /// Runs the update for every population member not yet archived.
    /// Returns the number of accepted individuals.
    pub fn update(&mut self, population: &[Individual]) -> usize {
        population.iter().filter(|ind| self.consider(ind, false)).count()
    }

    /// Archives a solution picked by the decision maker.
    pub fn insert_user_selected(&mut self, ind: &Individual) -> bool {
        self.consider(ind, true)
    }

    /// Acceptance test for one individual; returns whether it was inserted.
    pub fn consider(&mut self, ind: &Individual, user_selected: bool) -> bool {
        if let Some(existing) = self.members.iter_mut().find(|m| m.individual.same_solution(ind)) {
            if user_selected {
                existing.individual.preserved = true;
            }
            return false;
        }
        let v = *ind.objectives();
        let region = preferred_region(&v, &self.weights);
        let territory = self.regions[region].tau;
        let closest = self
            .members
            .iter()
            .enumerate()
            .map(|(i, m)| (i, m.individual.objectives().l1(&v)))
            .fold(None, |best: Option<(usize, f64)>, (i, d)| match best {
                Some((_, bd)) if bd <= d => best,
                _ => Some((i, d)),
            });
        let distance = closest.map_or(f64::INFINITY, |(_, d)| d);

        let mut replaced = None;
        let accept = if user_selected {
            if distance < territory {
                self.regions[region].tau = distance.max(self.cfg.tau_final);
            }
            true
        } else if ind.assessment.feasibility.feasible && !self.is_dominated(&v) {
            if distance > territory {
                true
            } else {
                let (s, _) = closest.expect("a finite distance implies a closest member");
                let overlapping = self.overlapping_territories(&v);
                let member = &self.members[s].individual;
                if overlapping == 1 && !member.preserved && satisfies_better(ind, member) {
                    replaced = Some(s);
                    true
                } else {
                    false
                }
            }
        } else {
            false
        };
        if !accept {
            return false;
        }
        if let Some(s) = replaced {
            self.members.remove(s);
        }
        self.members.retain(|m| m.individual.preserved || !v.dominates(m.individual.objectives()));
        let mut individual = ind.clone();
        individual.preserved |= user_selected;
        individual.marked_for_removal = false;
        self.members.push(Member { individual, region });
        true
    }

    fn is_dominated(&self, v: &ObjectiveVector) -> bool {
        self.members.iter().any(|m| m.individual.objectives().dominates(v))
    }

    /// Number of members whose territory contains `v`.
    pub fn overlapping_territories(&self, v: &ObjectiveVector) -> usize {
        self.members
            .iter()
            .filter(|m| m.individual.objectives().l1(v) < self.regions[m.region].tau)
            .count()
    }

    /// Shrinks the territory of the region holding the member that best
    /// satisfies the preferences. No-op while nothing has a subjective score.
    pub fn reduce_after_interaction(&mut self) -> Option<usize> {
        let best = self
            .members
            .iter()
            .filter_map(|m| m.individual.assessment.f_sub.map(|f| (m.region, f)))
            .fold(None, |best: Option<(usize, f64)>, (r, f)| match best {
                Some((_, bf)) if bf <= f => best,
                _ => Some((r, f)),
            })?;
        let region = &mut self.regions[best.0];
        region.tau = (region.tau * self.cfg.decrease).max(self.cfg.tau_final);
        Some(best.0)
    }

    /// Checks the structural invariants; used by tests and debug assertions.
    pub fn check_invariants(&self) -> Result<(), String> {
        for r in &self.regions {
            if r.tau < self.cfg.tau_final - 1e-15 || r.tau > self.cfg.tau_initial + 1e-15 {
                return Err(format!("territory size {} outside [{}, {}]", r.tau, self.cfg.tau_final, self.cfg.tau_initial));
            }
        }
        for (i, a) in self.members.iter().enumerate() {
            for (j, b) in self.members.iter().enumerate() {
                if i != j
                    && !a.individual.preserved
                    && !b.individual.preserved
                    && a.individual.objectives().dominates(b.individual.objectives())
                {
                    return Err(format!("member {} dominates member {}", a.individual.id, b.individual.id));
                }
            }
        }
        Ok(())
    }
}

/// Strictly better preference satisfaction (lower subjective score). Without
/// subjective scores the two compare equal.
fn satisfies_better(ind: &Individual, member: &Individual) -> bool {
    matches!((ind.assessment.f_sub, member.assessment.f_sub), (Some(a), Some(b)) if a < b)
}

//! Candidate architectures: a partition of model classes into components,
//! plus the interfaces and feasibility report derived from it.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, BTreeSet};
use std::hash::{Hash, Hasher};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::model::AnalysisModel;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Component {
    classes: Vec<usize>,
    pub frozen: bool,
}

impl Component {
    pub fn new(mut classes: Vec<usize>) -> Self {
        classes.sort_unstable();
        classes.dedup();
        Self { classes, frozen: false }
    }

    /// Sorted class indices.
    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn contains(&self, class: usize) -> bool {
        self.classes.binary_search(&class).is_ok()
    }
}

/// A class-to-component partition. Components are kept in canonical order
/// (ascending smallest class index), so two architectures describing the
/// same partition compare equal.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Architecture {
    components: Vec<Component>,
}

impl Architecture {
    /// Builds an architecture from components, canonicalizing their order.
    /// Empty components are dropped.
    pub fn new(components: Vec<Component>) -> Self {
        let mut components: Vec<Component> = components.into_iter().filter(|c| !c.is_empty()).collect();
        components.sort_by_key(|c| c.classes[0]);
        Self { components }
    }

    pub fn from_groups(groups: Vec<Vec<usize>>) -> Self {
        Self::new(groups.into_iter().map(Component::new).collect())
    }

    /// Builds an architecture from groups of class ids.
    pub fn from_ids<S: AsRef<str>>(model: &AnalysisModel, groups: &[Vec<S>]) -> Result<Self, ConfigError> {
        let mut out = Vec::with_capacity(groups.len());
        for g in groups {
            let mut idx = Vec::with_capacity(g.len());
            for id in g {
                let id = id.as_ref();
                idx.push(model.class_idx(id).ok_or_else(|| ConfigError::new(format!("unknown class `{id}`")))?);
            }
            out.push(idx);
        }
        let arch = Self::from_groups(out);
        if !arch.is_partition_of(model) {
            return Err(ConfigError::new("groups do not partition the model classes"));
        }
        Ok(arch)
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub(crate) fn components_mut(&mut self) -> &mut [Component] {
        &mut self.components
    }

    /// Number of components.
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Component index of every class.
    pub fn assignment(&self, n_classes: usize) -> Vec<usize> {
        let mut out = vec![usize::MAX; n_classes];
        for (i, c) in self.components.iter().enumerate() {
            for &cl in &c.classes {
                out[cl] = i;
            }
        }
        out
    }

    /// True when every class of `model` sits in exactly one non-empty component.
    pub fn is_partition_of(&self, model: &AnalysisModel) -> bool {
        let mut seen = vec![false; model.class_count()];
        for c in &self.components {
            if c.is_empty() {
                return false;
            }
            for &cl in &c.classes {
                if cl >= seen.len() || seen[cl] {
                    return false;
                }
                seen[cl] = true;
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Same partition, ignoring frozen flags.
    pub fn same_partition(&self, other: &Architecture) -> bool {
        self.components.len() == other.components.len()
            && self.components.iter().zip(&other.components).all(|(a, b)| a.classes == b.classes)
    }

    /// Hash of the partition (frozen flags excluded).
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for c in &self.components {
            c.classes.hash(&mut h);
            usize::MAX.hash(&mut h);
        }
        h.finish()
    }

    pub fn class_ids(&self, model: &AnalysisModel) -> Vec<Vec<String>> {
        self.components
            .iter()
            .map(|c| c.classes.iter().map(|&i| model.class_id(i).to_string()).collect())
            .collect()
    }
}

/// Draws a random partition with a uniform component count in `[n_min, n_max]`.
/// Interface constraints are deliberately not enforced here.
pub fn random_architecture<R: Rng + ?Sized>(
    model: &AnalysisModel,
    n_min: usize,
    n_max: usize,
    rng: &mut R,
) -> Result<Architecture, ConfigError> {
    let total = model.class_count();
    if n_min < 2 {
        return Err(ConfigError::new(format!("n_min must be at least 2, got {n_min}")));
    }
    if n_max < n_min {
        return Err(ConfigError::new(format!("n_max ({n_max}) is below n_min ({n_min})")));
    }
    if n_min > total {
        return Err(ConfigError::new(format!("n_min ({n_min}) exceeds the number of classes ({total})")));
    }
    let n = rng.random_range(n_min..=n_max.min(total));
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(rng);
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (slot, &cl) in order.iter().enumerate() {
        let target = if slot < n { slot } else { rng.random_range(0..n) };
        groups[target].push(cl);
    }
    Ok(Architecture::from_groups(groups))
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct ProvidedInterface {
    pub provider: usize,
    /// Provider-side classes reached by consumers.
    pub exposed_classes: Vec<usize>,
    /// `(class, method)` index pairs of the public methods of `exposed_classes`.
    pub operations: Vec<(usize, usize)>,
    pub consumers: Vec<usize>,
}

/// Derives provided interfaces from navigable cross-component relationships.
/// Consumers reaching the same exposed class set share one interface.
pub fn derive_interfaces(arch: &Architecture, model: &AnalysisModel) -> Vec<ProvidedInterface> {
    let n = arch.len();
    let assign = arch.assignment(model.class_count());
    let mut reach: BTreeMap<(usize, usize), BTreeSet<usize>> = BTreeMap::new();
    for e in model.edges().iter().filter(|e| e.navigable) {
        let (consumer, provider) = (assign[e.source], assign[e.target]);
        // partial architectures leave some classes unassigned
        if consumer != provider && consumer < n && provider < n {
            reach.entry((provider, consumer)).or_default().insert(e.target);
        }
    }
    let mut grouped: BTreeMap<(usize, Vec<usize>), Vec<usize>> = BTreeMap::new();
    for ((provider, consumer), exposed) in reach {
        grouped.entry((provider, exposed.into_iter().collect())).or_default().push(consumer);
    }
    grouped
        .into_iter()
        .map(|((provider, exposed_classes), consumers)| {
            let operations = exposed_classes
                .iter()
                .flat_map(|&c| model.public_methods(c).iter().map(move |&m| (c, m)))
                .collect();
            ProvidedInterface { provider, exposed_classes, operations, consumers }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub feasible: bool,
    pub empty_component: usize,
    pub interfaceless_component: usize,
    pub mutual_provision_pair: usize,
}

impl FeasibilityReport {
    pub fn violation_count(&self) -> usize {
        self.empty_component + self.interfaceless_component + self.mutual_provision_pair
    }
}

/// Checks the interface constraints: every component takes part in at least
/// one interface, and no two components provide services to each other.
pub fn check_feasibility(arch: &Architecture, model: &AnalysisModel) -> FeasibilityReport {
    let n = arch.len();
    let assign = arch.assignment(model.class_count());
    let mut touched = vec![false; n];
    // provides[p * n + c]: p provides to c
    let mut provides = vec![false; n * n];
    for e in model.edges().iter().filter(|e| e.navigable) {
        let (consumer, provider) = (assign[e.source], assign[e.target]);
        // partial architectures leave some classes unassigned
        if consumer != provider && consumer < n && provider < n {
            touched[consumer] = true;
            touched[provider] = true;
            provides[provider * n + consumer] = true;
        }
    }
    let empty_component = arch.components().iter().filter(|c| c.is_empty()).count();
    let interfaceless_component = touched.iter().filter(|t| !**t).count();
    let mut mutual_provision_pair = 0;
    for i in 0..n {
        for j in i + 1..n {
            if provides[i * n + j] && provides[j * n + i] {
                mutual_provision_pair += 1;
            }
        }
    }
    let mut report = FeasibilityReport {
        feasible: false,
        empty_component,
        interfaceless_component,
        mutual_provision_pair,
    };
    report.feasible = report.violation_count() == 0;
    report
}

/// Number of connected groups among `classes`, linking classes by any
/// relationship with both endpoints inside the set.
pub fn connected_groups(classes: &[usize], model: &AnalysisModel) -> usize {
    let mut local = vec![usize::MAX; model.class_count()];
    for (i, &c) in classes.iter().enumerate() {
        local[c] = i;
    }
    let mut parent: Vec<usize> = (0..classes.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut groups = classes.len();
    for e in model.edges() {
        let (a, b) = (local[e.source], local[e.target]);
        if a == usize::MAX || b == usize::MAX {
            continue;
        }
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra] = rb;
            groups -= 1;
        }
    }
    groups
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperationRef {
    pub class: String,
    pub method: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentView {
    pub classes: Vec<String>,
    pub frozen: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterfaceView {
    pub provider: usize,
    pub exposed_classes: Vec<String>,
    pub operations: Vec<OperationRef>,
    pub consumers: Vec<usize>,
}

/// Serializable phenotype of an architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phenotype {
    pub components: Vec<ComponentView>,
    pub interfaces: Vec<InterfaceView>,
    pub feasibility: FeasibilityReport,
}

impl Phenotype {
    pub fn new(arch: &Architecture, model: &AnalysisModel) -> Self {
        let components = arch
            .components()
            .iter()
            .map(|c| ComponentView {
                classes: c.classes().iter().map(|&i| model.class_id(i).to_string()).collect(),
                frozen: c.frozen,
            })
            .collect();
        let interfaces = derive_interfaces(arch, model)
            .into_iter()
            .map(|pi| InterfaceView {
                provider: pi.provider,
                exposed_classes: pi.exposed_classes.iter().map(|&i| model.class_id(i).to_string()).collect(),
                operations: pi
                    .operations
                    .iter()
                    .map(|&(c, m)| OperationRef {
                        class: model.class_id(c).to_string(),
                        method: model.classes()[c].methods[m].name.clone(),
                    })
                    .collect(),
                consumers: pi.consumers,
            })
            .collect();
        Self { components, interfaces, feasibility: check_feasibility(arch, model) }
    }
}

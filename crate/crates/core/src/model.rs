//! Input class model: classes, public methods and typed relationships.
//!
//! Models are read from a strict JSON document and validated on construction.
//! Once built an [`AnalysisModel`] is immutable and keeps an index-based view of
//! its relationships that the rest of the crate works on.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::ModelError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Visibility {
    Public,
    Nonpublic,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodDef {
    pub name: String,
    pub visibility: Visibility,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassDef {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub methods: Vec<MethodDef>,
}

/// Relationship kinds: association, aggregation, composition, generalization
/// and dependency.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelKind {
    As,
    Ag,
    Co,
    Ge,
    De,
}

impl RelKind {
    pub const ALL: [RelKind; 5] = [RelKind::As, RelKind::Ag, RelKind::Co, RelKind::Ge, RelKind::De];

    pub fn as_str(self) -> &'static str {
        match self {
            RelKind::As => "as",
            RelKind::Ag => "ag",
            RelKind::Co => "co",
            RelKind::Ge => "ge",
            RelKind::De => "de",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Relationship {
    pub id: String,
    pub kind: RelKind,
    pub source: String,
    pub target: String,
    pub navigable: bool,
}

/// Index-resolved relationship used by metric and interface computations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Edge {
    pub kind: RelKind,
    pub source: usize,
    pub target: usize,
    pub navigable: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDocument {
    classes: Vec<ClassDef>,
    relationships: Vec<Relationship>,
}

#[derive(Serialize)]
struct ModelDocumentRef<'a> {
    classes: &'a [ClassDef],
    relationships: &'a [Relationship],
}

/// A validated class diagram.
#[derive(Clone, Debug)]
pub struct AnalysisModel {
    classes: Vec<ClassDef>,
    relationships: Vec<Relationship>,
    edges: Vec<Edge>,
    class_index: BTreeMap<String, usize>,
    public_methods: Vec<Vec<usize>>,
}

impl PartialEq for AnalysisModel {
    fn eq(&self, other: &Self) -> bool {
        self.classes == other.classes && self.relationships == other.relationships
    }
}

impl AnalysisModel {
    /// Builds a model, checking every structural invariant.
    pub fn new(classes: Vec<ClassDef>, relationships: Vec<Relationship>) -> Result<Self, ModelError> {
        if classes.len() < 2 {
            return Err(ModelError::TooFewClasses(classes.len()));
        }
        let mut class_index = BTreeMap::new();
        for (i, c) in classes.iter().enumerate() {
            if c.id.is_empty() {
                return Err(ModelError::EmptyField { what: "class id".into() });
            }
            if c.name.trim().is_empty() {
                return Err(ModelError::EmptyField { what: format!("name of class `{}`", c.id) });
            }
            if class_index.insert(c.id.clone(), i).is_some() {
                return Err(ModelError::DuplicateId(c.id.clone()));
            }
            let mut seen = BTreeSet::new();
            for m in &c.methods {
                if !seen.insert(m.name.as_str()) {
                    return Err(ModelError::DuplicateMethod { class: c.id.clone(), method: m.name.clone() });
                }
            }
        }

        let mut rel_ids = BTreeSet::new();
        let mut edges = Vec::with_capacity(relationships.len());
        for r in &relationships {
            if r.id.is_empty() {
                return Err(ModelError::EmptyField { what: "relationship id".into() });
            }
            if class_index.contains_key(&r.id) || !rel_ids.insert(r.id.as_str()) {
                return Err(ModelError::DuplicateId(r.id.clone()));
            }
            let resolve = |class: &str| {
                class_index.get(class).copied().ok_or_else(|| ModelError::DanglingReference {
                    relationship: r.id.clone(),
                    class: class.to_string(),
                })
            };
            let source = resolve(&r.source)?;
            let target = resolve(&r.target)?;
            match r.kind {
                RelKind::Ge if source == target => {
                    return Err(ModelError::SelfGeneralization(r.id.clone()));
                }
                RelKind::Ge if r.navigable => {
                    return Err(ModelError::Navigability { relationship: r.id.clone(), expected: false });
                }
                RelKind::De if !r.navigable => {
                    return Err(ModelError::Navigability { relationship: r.id.clone(), expected: true });
                }
                _ => {}
            }
            edges.push(Edge { kind: r.kind, source, target, navigable: r.navigable });
        }

        let public_methods = classes
            .iter()
            .map(|c| {
                c.methods
                    .iter()
                    .enumerate()
                    .filter(|(_, m)| m.visibility == Visibility::Public)
                    .map(|(i, _)| i)
                    .collect()
            })
            .collect();

        Ok(Self { classes, relationships, edges, class_index, public_methods })
    }

    pub fn classes(&self) -> &[ClassDef] {
        &self.classes
    }

    pub fn relationships(&self) -> &[Relationship] {
        &self.relationships
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Total number of classes.
    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn class_idx(&self, id: &str) -> Option<usize> {
        self.class_index.get(id).copied()
    }

    pub fn class_id(&self, idx: usize) -> &str {
        &self.classes[idx].id
    }

    /// Indices into `classes()[class].methods` of the public methods.
    pub fn public_methods(&self, class: usize) -> &[usize] {
        &self.public_methods[class]
    }

    pub fn method_idx(&self, class: usize, name: &str) -> Option<usize> {
        self.classes[class].methods.iter().position(|m| m.name == name)
    }

    /// Number of relationships that can turn into an interface.
    pub fn candidate_interface_count(&self) -> usize {
        self.relationships.iter().filter(|r| r.navigable).count()
    }

    pub fn kind_count(&self, kind: RelKind) -> usize {
        self.edges.iter().filter(|e| e.kind == kind).count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ModelDocumentRef {
            classes: &self.classes,
            relationships: &self.relationships,
        })
        .expect("model serialization is infallible")
    }
}

/// Parses and validates a model document.
pub fn parse_model(document: &[u8]) -> Result<AnalysisModel, ModelError> {
    let doc: ModelDocument = serde_json::from_slice(document).map_err(|e| ModelError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    AnalysisModel::new(doc.classes, doc.relationships)
}

/// Parameters of the synthetic model generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub n_classes: usize,
    #[serde(default)]
    pub associations: usize,
    #[serde(default)]
    pub aggregations: usize,
    #[serde(default)]
    pub compositions: usize,
    #[serde(default)]
    pub generalizations: usize,
    #[serde(default)]
    pub dependencies: usize,
    /// Probability that an as/ag/co relationship is navigable.
    pub navigability: f64,
    pub seed: u64,
}

impl GeneratorSpec {
    fn count(&self, kind: RelKind) -> usize {
        match kind {
            RelKind::As => self.associations,
            RelKind::Ag => self.aggregations,
            RelKind::Co => self.compositions,
            RelKind::Ge => self.generalizations,
            RelKind::De => self.dependencies,
        }
    }
}

const METHOD_STEMS: [&str; 8] = ["get", "set", "create", "update", "find", "list", "apply", "check"];

/// Generates a random model; a pure function of `spec`.
pub fn generate_model(spec: &GeneratorSpec) -> Result<AnalysisModel, ModelError> {
    if spec.n_classes < 2 {
        return Err(ModelError::Generation(format!("need at least 2 classes, got {}", spec.n_classes)));
    }
    if !(0.0..=1.0).contains(&spec.navigability) || spec.navigability.is_nan() {
        return Err(ModelError::Generation(format!(
            "navigability probability {} outside [0, 1]",
            spec.navigability
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let width = spec.n_classes.to_string().len();

    let classes: Vec<ClassDef> = (0..spec.n_classes)
        .map(|i| {
            let n_methods = rng.random_range(1..=3);
            let methods = (0..n_methods)
                .map(|m| MethodDef {
                    name: format!("{}{}", METHOD_STEMS[rng.random_range(0..METHOD_STEMS.len())], m),
                    visibility: if rng.random_bool(0.75) { Visibility::Public } else { Visibility::Nonpublic },
                })
                .collect();
            ClassDef { id: format!("C{i:0width$}"), name: format!("Class{i}"), methods }
        })
        .collect();

    let mut relationships = Vec::new();
    for kind in RelKind::ALL {
        for _ in 0..spec.count(kind) {
            let source = rng.random_range(0..spec.n_classes);
            let mut target = rng.random_range(0..spec.n_classes - 1);
            if target >= source {
                target += 1;
            }
            let navigable = match kind {
                RelKind::Ge => false,
                RelKind::De => true,
                _ => rng.random_bool(spec.navigability),
            };
            relationships.push(Relationship {
                id: String::new(),
                kind,
                source: classes[source].id.clone(),
                target: classes[target].id.clone(),
                navigable,
            });
        }
    }
    relationships.shuffle(&mut rng);
    let rwidth = relationships.len().max(1).to_string().len();
    for (i, r) in relationships.iter_mut().enumerate() {
        r.id = format!("R{i:0rwidth$}");
    }
    AnalysisModel::new(classes, relationships)
}

/// The bundled 14-class library-management model.
pub fn minilib() -> AnalysisModel {
    parse_model(MINILIB_JSON.as_bytes()).expect("bundled model is valid")
}

pub const MINILIB_JSON: &str = include_str!("../data/minilib.json");

/// Reference decomposition shipped with `minilib.json`, as class-id groups.
pub fn minilib_reference() -> Vec<Vec<&'static str>> {
    vec![
        vec!["Item", "Book", "Journal", "Catalog"],
        vec!["Person", "Member", "Librarian", "Account"],
        vec!["Loan", "Reservation", "FineCalculator"],
        vec!["Notifier", "EmailSender", "MessageTemplate"],
    ]
}

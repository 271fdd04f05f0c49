//! End-to-end acceptance checks, one line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so expensive run sets are
//! computed once and shared between criteria. Pass criterion numbers as
//! arguments to run a subset, e.g. `cargo test --test acceptance -- 1 8`.
//!
//! A failing criterion exits non-zero unless it is listed in
//! `KNOWN_DEVIATIONS`, in which case it is still reported as FAIL together
//! with the reason. Set `ACCEPTANCE_STRICT=1` to make those fatal too.

use std::collections::{BTreeSet, HashMap};
use std::io::BufReader;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use archdisc_core::architecture::{derive_interfaces, random_architecture, Architecture, OperationRef};
use archdisc_core::engine::{Engine, EngineConfig, Tick};
use archdisc_core::experiments::{run_engine, run_nsga2_record, RunRecord};
use archdisc_core::fitness::maximin_raw;
use archdisc_core::interaction::{build_schedule, DecisionMaker, ScriptedPolicy};
use archdisc_core::metrics::{compute_metrics, normalize, ErpWeights, ObjectiveVector};
use archdisc_core::model::{generate_model, minilib, minilib_reference, AnalysisModel, GeneratorSpec, RelKind};
use archdisc_core::par::{self, Execution};
use archdisc_core::preferences::{
    achievement, jaccard, normalize_confidences, Bounds, MetricId, Preference, PreferenceKind, PreferenceStore,
    Subject,
};
use archdisc_core::session::{read_events, replay, run_recorded, EventLog, RecordedSession, ReplayMode};

/// Criteria that fail for a documented, analysed reason, with the instances
/// the failure is confined to.
const KNOWN_DEVIATIONS: &[(usize, &[&str], &str)] = &[(
    5,
    &["minilib"],
    "minilib has only three distinct Pareto-optimal objective vectors; see the decisions ledger",
)];

struct Outcome {
    passed: bool,
    detail: String,
    /// Instances on which the check failed, when the criterion is per instance.
    failing: Vec<String>,
}

impl Outcome {
    fn new(passed: bool, detail: String) -> Self {
        Self { passed, detail, failing: Vec::new() }
    }
}

fn s1() -> GeneratorSpec {
    GeneratorSpec {
        n_classes: 30,
        associations: 25,
        aggregations: 5,
        compositions: 4,
        generalizations: 8,
        dependencies: 8,
        navigability: 0.6,
        seed: 11,
    }
}

fn s2() -> GeneratorSpec {
    GeneratorSpec {
        n_classes: 40,
        associations: 30,
        aggregations: 5,
        compositions: 5,
        generalizations: 12,
        dependencies: 8,
        navigability: 0.5,
        seed: 12,
    }
}

fn s3() -> GeneratorSpec {
    GeneratorSpec {
        n_classes: 20,
        associations: 16,
        aggregations: 3,
        compositions: 3,
        generalizations: 5,
        dependencies: 5,
        navigability: 0.6,
        seed: 13,
    }
}

fn synthetic(spec: GeneratorSpec) -> Arc<AnalysisModel> {
    Arc::new(generate_model(&spec).expect("generator spec is valid"))
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

// ---------------------------------------------------------------------------
// 1. metrics against a string-keyed reimplementation

struct NaiveMetrics {
    icd: f64,
    erp: f64,
    gcr: f64,
}

fn naive_metrics(model: &AnalysisModel, groups: &[Vec<String>], w: &ErpWeights) -> NaiveMetrics {
    let mut owner: HashMap<&str, usize> = HashMap::new();
    for (i, g) in groups.iter().enumerate() {
        for c in g {
            owner.insert(c.as_str(), i);
        }
    }
    let rels = model.relationships();
    let total = model.classes().len() as f64;
    let n = groups.len();

    let mut icd = 0.0;
    for (i, g) in groups.iter().enumerate() {
        let mut inside = 0usize;
        let mut outside = 0usize;
        for r in rels {
            let (a, b) = (owner[r.source.as_str()] == i, owner[r.target.as_str()] == i);
            if a && b {
                inside += 1;
            } else if a || b {
                outside += 1;
            }
        }
        if inside + outside > 0 {
            icd += (total - g.len() as f64) / total * (inside as f64 / (inside + outside) as f64);
        }
    }
    icd /= n as f64;

    let mut erp = 0.0;
    for r in rels {
        if owner[r.source.as_str()] == owner[r.target.as_str()] {
            continue;
        }
        erp += match r.kind {
            RelKind::Ge => w.w_ge,
            RelKind::De => 0.0,
            _ if r.navigable => 0.0,
            RelKind::As => w.w_as,
            RelKind::Ag => w.w_ag,
            RelKind::Co => w.w_co,
        };
    }

    let mut groups_total = 0usize;
    for g in groups {
        let members: BTreeSet<&str> = g.iter().map(String::as_str).collect();
        let mut seen: BTreeSet<&str> = BTreeSet::new();
        for start in &members {
            if seen.contains(start) {
                continue;
            }
            groups_total += 1;
            let mut stack = vec![*start];
            seen.insert(start);
            while let Some(c) = stack.pop() {
                for r in rels {
                    let next = if r.source == c {
                        r.target.as_str()
                    } else if r.target == c {
                        r.source.as_str()
                    } else {
                        continue;
                    };
                    if members.contains(next) && seen.insert(next) {
                        stack.push(next);
                    }
                }
            }
        }
    }
    NaiveMetrics { icd, erp, gcr: groups_total as f64 / n as f64 }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let w = ErpWeights::default();
    let (mut checked, mut worst) = (0usize, 0.0f64);
    for m in 0..20u64 {
        let n = rng.random_range(4..=15);
        let spec = GeneratorSpec {
            n_classes: n,
            associations: rng.random_range(0..=2 * n),
            aggregations: rng.random_range(0..=n / 2),
            compositions: rng.random_range(0..=n / 2),
            generalizations: rng.random_range(0..=n / 2),
            dependencies: rng.random_range(0..=n / 2),
            navigability: rng.random_range(0.0..=1.0),
            seed: 1000 + m,
        };
        let model = generate_model(&spec).unwrap();
        for _ in 0..10 {
            let arch = random_architecture(&model, 2, n.min(6), &mut rng).unwrap();
            let fast = compute_metrics(&arch, &model, &w);
            let slow = naive_metrics(&model, &arch.class_ids(&model), &w);
            worst = worst.max((fast.icd - slow.icd).abs()).max((fast.erp - slow.erp).abs()).max((fast.gcr - slow.gcr).abs());
            checked += 1;
        }
    }
    let elapsed = start.elapsed();
    Outcome::new(
        worst <= 1e-12 && elapsed < Duration::from_secs(10),
        format!("{checked} architectures, max abs diff {worst:.1e}, {}", secs(elapsed)),
    )
}

// ---------------------------------------------------------------------------
// 2. maximin sign against pairwise dominance

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (mut checked, mut mismatches) = (0usize, 0usize);
    let (mut neg, mut zero, mut pos) = (0usize, 0usize, 0usize);
    for p in 0..200 {
        let size = rng.random_range(2..=30);
        // half the populations sit on a coarse grid so ties and duplicates occur
        let coarse = p % 2 == 0;
        let pop: Vec<ObjectiveVector> = (0..size)
            .map(|_| {
                ObjectiveVector(std::array::from_fn(|_| {
                    if coarse {
                        rng.random_range(0..=4) as f64 / 4.0
                    } else {
                        rng.random_range(0.0..1.0)
                    }
                }))
            })
            .collect();
        for (i, s) in pop.iter().enumerate() {
            let raw = maximin_raw(s, &pop, Some(i)).expect("reference set is non-empty");
            let others = pop.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, z)| z);
            let mut strictly_better = false;
            let mut no_worse = false;
            for z in others {
                if (0..3).all(|k| z.0[k] < s.0[k]) {
                    strictly_better = true;
                }
                if (0..3).all(|k| z.0[k] <= s.0[k]) {
                    no_worse = true;
                }
            }
            let expected = if strictly_better { 1 } else if no_worse { 0 } else { -1 };
            let got = if raw.abs() <= 1e-12 { 0 } else if raw > 0.0 { 1 } else { -1 };
            match got {
                -1 => neg += 1,
                0 => zero += 1,
                _ => pos += 1,
            }
            if got != expected {
                mismatches += 1;
            }
            checked += 1;
        }
    }
    let elapsed = start.elapsed();
    Outcome::new(
        mismatches == 0 && elapsed < Duration::from_secs(10),
        format!(
            "{checked} individuals (<0: {neg}, =0: {zero}, >0: {pos}), {mismatches} mismatches, {}",
            secs(elapsed)
        ),
    )
}

// ---------------------------------------------------------------------------
// 3. preference ranges, fixtures and complementarity

fn random_preference(model: &AnalysisModel, bounds: Bounds, rng: &mut ChaCha8Rng) -> PreferenceKind {
    let ids: Vec<String> = model.classes().iter().map(|c| c.id.clone()).collect();
    let pick_classes = |rng: &mut ChaCha8Rng| -> Vec<String> {
        let k = rng.random_range(1..=ids.len().min(6));
        ids.choose_multiple(rng, k).cloned().collect()
    };
    let ops: Vec<OperationRef> = model
        .classes()
        .iter()
        .enumerate()
        .flat_map(|(i, c)| {
            model.public_methods(i).iter().map(move |&m| OperationRef { class: c.id.clone(), method: c.methods[m].name.clone() })
        })
        .collect();
    let unit = |rng: &mut ChaCha8Rng| rng.random_range(0.0..=1.0);
    match rng.random_range(0..8) {
        0 => PreferenceKind::None,
        1 => PreferenceKind::BestComponent { classes: pick_classes(rng) },
        2 => PreferenceKind::WorstComponent { classes: pick_classes(rng) },
        3 | 4 if ops.is_empty() => PreferenceKind::NumberOfComponents { n: bounds.n_min },
        3 => {
            let k = rng.random_range(1..=3);
            PreferenceKind::BestInterface { operations: ops.choose_multiple(rng, k).cloned().collect() }
        }
        4 => {
            let k = rng.random_range(1..=3);
            PreferenceKind::WorstInterface { operations: ops.choose_multiple(rng, k).cloned().collect() }
        }
        5 => PreferenceKind::NumberOfComponents { n: rng.random_range(bounds.n_min..=bounds.n_max) },
        6 => {
            let a: f64 = unit(rng);
            let b: f64 = unit(rng);
            let metric = *[MetricId::Icd, MetricId::Erp, MetricId::Gcr].choose(rng).unwrap();
            if a == b {
                PreferenceKind::MetricInRange { metric, min: 0.0, max: 1.0 }
            } else {
                PreferenceKind::MetricInRange { metric, min: a.min(b), max: a.max(b) }
            }
        }
        _ => PreferenceKind::AspirationLevels {
            reference: std::array::from_fn(|_| unit(rng)),
            weights: std::array::from_fn(|_| rng.random_range(0.0..=3.0)),
        },
    }
}

fn preference_fixtures() -> Vec<(&'static str, bool)> {
    let model = minilib();
    let w = ErpWeights::default();
    let bounds = Bounds { n_min: 2, n_max: 6 };
    let groups = minilib_reference();
    let arch = Architecture::from_ids(&model, &groups).unwrap();
    let interfaces = derive_interfaces(&arch, &model);
    let objectives = normalize(&compute_metrics(&arch, &model, &w), &model, &w, bounds.n_min);
    let subject = Subject { architecture: &arch, interfaces: &interfaces, objectives: &objectives };
    let ach = |kind: PreferenceKind| achievement(&Preference::new(kind, 3), &subject, &model, bounds).unwrap();
    let strings = |g: &[&str]| g.iter().map(|s| s.to_string()).collect::<Vec<_>>();

    let exact = ach(PreferenceKind::BestComponent { classes: strings(&groups[0]) });
    let n_equal = ach(PreferenceKind::NumberOfComponents { n: arch.len() });
    let m = objectives.0[1];
    let (lo, hi) = if m > 0.5 { (2.0 * m - 1.0, 1.0) } else { (0.0, 2.0 * m) };
    let mid = if hi > lo { ach(PreferenceKind::MetricInRange { metric: MetricId::Erp, min: lo, max: hi }) } else { 1.0 };

    // a partial architecture over C0..C3 shares nothing with {C5, C6}
    let partial = Architecture::from_groups(vec![vec![0, 1], vec![2, 3]]);
    let partial_if = derive_interfaces(&partial, &model);
    let partial_subject = Subject { architecture: &partial, interfaces: &partial_if, objectives: &objectives };
    let no_shared = achievement(
        &Preference::new(
            PreferenceKind::WorstComponent { classes: vec![model.class_id(5).to_string(), model.class_id(6).to_string()] },
            3,
        ),
        &partial_subject,
        &model,
        bounds,
    )
    .unwrap();

    let mut empty = PreferenceStore::new();
    let empty_fsub = empty.subjective_fitness(&subject, bounds);
    empty.record_interaction(&[Preference::new(PreferenceKind::BestComponent { classes: strings(&groups[0]) }, 2)], &model, bounds).unwrap();
    let one_fsub = empty.subjective_fitness(&subject, bounds);

    vec![
        ("jaccard identity", jaccard(&[1, 2, 3], &[1, 2, 3]) == 1.0),
        ("jaccard disjoint", jaccard(&[1, 2], &[3, 4]) == 0.0),
        ("jaccard {1,2,3} vs {2,3,4}", jaccard(&[1, 2, 3], &[2, 3, 4]) == 0.5),
        ("best component exact match", exact == 1.0),
        ("number of components n = n+", n_equal == 1.0),
        ("metric in range at midpoint", mid == 1.0),
        ("worst component with no shared class", no_shared == 1.0),
        ("empty store is undefined", empty_fsub.is_none()),
        ("single satisfied preference gives f_sub 0", one_fsub == Some(0.0)),
        ("single preference weight 1", normalize_confidences(&[3]) == vec![1.0]),
        ("likert 5,5,5 equal weights", normalize_confidences(&[5, 5, 5]).iter().all(|w| (w - 1.0 / 3.0).abs() < 1e-15)),
        ("likert 4,1 gives 0.8, 0.2", normalize_confidences(&[4, 1]) == vec![0.8, 0.2]),
    ]
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let w = ErpWeights::default();
    let bounds = Bounds { n_min: 2, n_max: 6 };
    let models: Vec<AnalysisModel> = std::iter::once(minilib())
        .chain((0..9u64).map(|s| {
            let n = 6 + s as usize * 2;
            generate_model(&GeneratorSpec {
                n_classes: n,
                associations: n,
                aggregations: 2,
                compositions: 2,
                generalizations: 2,
                dependencies: 3,
                navigability: 0.5,
                seed: 3000 + s,
            })
            .unwrap()
        }))
        .collect();
    let (mut out_of_range, mut complement_breaks) = (0usize, 0usize);
    let mut kinds = BTreeSet::new();
    for _ in 0..10_000 {
        let model = models.choose(&mut rng).unwrap();
        let arch = random_architecture(model, bounds.n_min, bounds.n_max, &mut rng).unwrap();
        let interfaces = derive_interfaces(&arch, model);
        let objectives = normalize(&compute_metrics(&arch, model, &w), model, &w, bounds.n_min);
        let subject = Subject { architecture: &arch, interfaces: &interfaces, objectives: &objectives };
        let kind = random_preference(model, bounds, &mut rng);
        let tag = serde_json::to_value(Preference::new(kind.clone(), 3)).unwrap()["kind"].as_str().unwrap().to_string();
        kinds.insert(tag);
        let a = achievement(&Preference::new(kind.clone(), rng.random_range(1..=5)), &subject, model, bounds).unwrap();
        if !(0.0..=1.0).contains(&a) {
            out_of_range += 1;
        }
        let mirrored = match kind {
            PreferenceKind::BestComponent { classes } => Some(PreferenceKind::WorstComponent { classes }),
            PreferenceKind::WorstComponent { classes } => Some(PreferenceKind::BestComponent { classes }),
            _ => None,
        };
        if let Some(m) = mirrored {
            let b = achievement(&Preference::new(m, 3), &subject, model, bounds).unwrap();
            if (a + b - 1.0).abs() > 1e-12 {
                complement_breaks += 1;
            }
        }
    }
    let fixtures = preference_fixtures();
    let failed: Vec<&str> = fixtures.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    let elapsed = start.elapsed();
    Outcome::new(
        out_of_range == 0 && complement_breaks == 0 && failed.is_empty() && kinds.len() == 8,
        format!(
            "10000 pairs over {} kinds, {out_of_range} out of range, {complement_breaks} complement breaks, {}/{} fixtures{}, {}",
            kinds.len(),
            fixtures.len() - failed.len(),
            fixtures.len(),
            if failed.is_empty() { String::new() } else { format!(" (failed: {})", failed.join("; ")) },
            secs(elapsed)
        ),
    )
}

// ---------------------------------------------------------------------------
// 4. archive invariants over full interactive runs

fn archive_violation(engine: &Engine, last_tau: &mut Vec<f64>) -> Option<String> {
    let archive = engine.archive();
    let members = archive.members();
    for a in members {
        for b in members {
            let (x, y) = (&a.individual, &b.individual);
            if x.id != y.id && !x.preserved && !y.preserved && x.objectives().dominates(y.objectives()) {
                return Some(format!("generation {}: {} dominates {}", engine.generation(), x.id, y.id));
            }
        }
    }
    let floor = archive.config().tau_final;
    let taus: Vec<f64> = archive.regions().iter().map(|r| r.tau).collect();
    for (r, (&now, &before)) in taus.iter().zip(last_tau.iter()).enumerate() {
        if now > before || now < floor {
            return Some(format!("generation {}: region {r} territory {before} -> {now}", engine.generation()));
        }
    }
    *last_tau = taus;
    None
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let instances = [("s1", synthetic(s1())), ("s2", synthetic(s2())), ("s3", synthetic(s3()))];
    let mut problems = Vec::new();
    let (mut generations, mut selected_total) = (0usize, 0usize);
    for (name, model) in &instances {
        for seed in 0..5 {
            let cfg = EngineConfig { seed, max_evaluations: 6000, ..Default::default() };
            let mut engine = Engine::new(model.clone(), cfg).unwrap();
            let mut policy = ScriptedPolicy::FixedNc { n: 4, likert: 5, archive_candidate: true };
            let mut taus: Vec<f64> = engine.archive().regions().iter().map(|r| r.tau).collect();
            // an equal solution already in the archive keeps its own id, so
            // selections are tracked by partition
            let mut selected: Vec<Architecture> = Vec::new();
            loop {
                match engine.tick() {
                    Tick::Generation(_) => generations += 1,
                    Tick::Awaiting(shown) => {
                        let bundle = policy.decide(&shown, engine.model()).unwrap();
                        let outcome = engine.submit(&bundle).unwrap();
                        for id in outcome.archived {
                            let ind = engine.population().iter().find(|i| i.id == id).unwrap();
                            selected.push(ind.architecture.clone());
                        }
                    }
                    Tick::Finished => break,
                }
                if let Some(v) = archive_violation(&engine, &mut taus) {
                    problems.push(format!("{name}/{seed}: {v}"));
                    break;
                }
            }
            for arch in &selected {
                let kept = engine
                    .archive()
                    .members()
                    .iter()
                    .any(|m| m.individual.preserved && m.individual.architecture.same_partition(arch));
                if !kept {
                    problems.push(format!("{name}/{seed}: a user-selected solution is missing at the end"));
                }
            }
            if selected.is_empty() {
                problems.push(format!("{name}/{seed}: policy selected nothing"));
            }
            selected_total += selected.len();
        }
    }
    Outcome::new(
        problems.is_empty(),
        format!(
            "15 runs, {generations} generations checked, {selected_total} user selections kept, {}{}",
            secs(start.elapsed()),
            problems.first().map(|p| format!("; first problem: {p}")).unwrap_or_default()
        ),
    )
}

// ---------------------------------------------------------------------------
// shared batch runs for 5, 6, 7 and 10

const TAUS: [f64; 3] = [0.01, 0.05, 0.1];
const SEEDS: u64 = 10;

struct TauStudy {
    name: &'static str,
    /// Per territory size, the batch runs for every seed.
    bmoea: Vec<Vec<RunRecord>>,
    elapsed: Duration,
}

fn batch(model: &Arc<AnalysisModel>, cfg: &EngineConfig, policy: Option<ScriptedPolicy>) -> Vec<RunRecord> {
    let seeds: Vec<u64> = (0..SEEDS).collect();
    par::map(Execution::default(), &seeds, |&seed| {
        let cfg = EngineConfig { seed, ..cfg.clone() };
        run_engine(model.clone(), cfg, policy.clone(), false, Execution::Sequential).unwrap().0
    })
}

fn instances() -> [(&'static str, Arc<AnalysisModel>); 3] {
    [("minilib", Arc::new(minilib())), ("s1", synthetic(s1())), ("s2", synthetic(s2()))]
}

/// Batch runs at the reduced 6000-evaluation budget for each territory size.
fn tau_studies() -> Vec<TauStudy> {
    instances()
        .into_iter()
        .map(|(name, model)| {
            let start = Instant::now();
            let bmoea = TAUS
                .iter()
                .map(|&tau| {
                    let mut cfg = EngineConfig { max_evaluations: 6000, ..Default::default() };
                    cfg.archive.tau_initial = tau;
                    batch(&model, &cfg, None)
                })
                .collect();
            TauStudy { name, bmoea, elapsed: start.elapsed() }
        })
        .collect()
}

struct Contrast {
    name: &'static str,
    bmoea: Vec<RunRecord>,
    nsga2: Vec<RunRecord>,
}

/// NSGA-II against the batch engine at the default budget.
fn contrasts() -> Vec<Contrast> {
    instances()
        .into_iter()
        .map(|(name, model)| {
            let bmoea = batch(&model, &EngineConfig::default(), None);
            let seeds: Vec<u64> = (0..SEEDS).collect();
            let nsga2 = par::map(Execution::default(), &seeds, |&seed| {
                let cfg = EngineConfig { seed, ..Default::default() };
                run_nsga2_record(&model, &cfg, Execution::Sequential).unwrap()
            });
            Contrast { name, bmoea, nsga2 }
        })
        .collect()
}

fn mean_archive(runs: &[RunRecord]) -> f64 {
    mean(runs.iter().map(|r| r.archive_size as f64))
}

fn criterion_5(studies: &[TauStudy]) -> Outcome {
    let mut parts = Vec::new();
    let mut failing = Vec::new();
    let elapsed: Duration = studies.iter().map(|s| s.elapsed).sum();
    for s in studies {
        let sizes: Vec<f64> = s.bmoea.iter().map(|r| mean_archive(r)).collect();
        let decreasing = sizes.windows(2).all(|w| w[0] > w[1]);
        if !decreasing {
            failing.push(s.name.to_string());
        }
        parts.push(format!(
            "{} {:.1}/{:.1}/{:.1}{}",
            s.name,
            sizes[0],
            sizes[1],
            sizes[2],
            if decreasing { "" } else { " (not decreasing)" }
        ));
    }
    let in_time = elapsed < Duration::from_secs(600);
    Outcome {
        passed: failing.is_empty() && in_time,
        detail: format!("mean archive size for tau0 0.01/0.05/0.1: {}; {}", parts.join(", "), secs(elapsed)),
        failing,
    }
}

fn criterion_7(contrasts: &[Contrast]) -> Outcome {
    let mut parts = Vec::new();
    let mut failing = Vec::new();
    for c in contrasts {
        let front = mean_archive(&c.nsga2);
        let archive = mean_archive(&c.bmoea);
        let hv_n = mean(c.nsga2.iter().map(|r| r.hv));
        let hv_b = mean(c.bmoea.iter().map(|r| r.hv));
        let ok = front >= 5.0 * archive && hv_n >= hv_b - 0.02;
        if !ok {
            failing.push(c.name.to_string());
        }
        parts.push(format!(
            "{} front {front:.1} vs archive {archive:.1}, HV {hv_n:.3} vs {hv_b:.3}{}",
            c.name,
            if ok { "" } else { " (fails)" }
        ));
    }
    Outcome { passed: failing.is_empty(), detail: parts.join("; "), failing }
}

struct ComponentStudy {
    bmoea: Vec<RunRecord>,
    guided: Vec<RunRecord>,
    elapsed: Duration,
}

fn component_study() -> ComponentStudy {
    let start = Instant::now();
    let model = Arc::new(minilib());
    let cfg = EngineConfig { n_min: 2, n_max: 6, interactions: 3, candidates: 3, ..Default::default() };
    let bmoea = batch(&model, &cfg, None);
    let guided = batch(&model, &cfg, Some(ScriptedPolicy::FixedNc { n: 4, likert: 5, archive_candidate: false }));
    ComponentStudy { bmoea, guided, elapsed: start.elapsed() }
}

fn criterion_6(study: &ComponentStudy) -> Outcome {
    let modes = |runs: &[RunRecord]| runs.iter().map(|r| r.modal_components.unwrap()).collect::<Vec<_>>();
    let guided = modes(&study.guided);
    let batch = modes(&study.bmoea);
    let hits = guided.iter().filter(|&&m| m == 4).count();
    let few = batch.iter().filter(|&&m| m <= 3).count();
    Outcome::new(
        hits >= 8 && few >= 8 && study.elapsed < Duration::from_secs(300),
        format!(
            "fixed_nc(4) modal = 4 in {hits}/10 {guided:?}; bMOEA modal <= 3 in {few}/10 {batch:?}; {}",
            secs(study.elapsed)
        ),
    )
}

fn criterion_10(study: &ComponentStudy) -> Outcome {
    let avg = |k: usize, initial: bool| {
        mean(study.bmoea.iter().map(|r| {
            let s = if initial { r.initial.as_ref() } else { r.final_population.as_ref() };
            s.unwrap().normalized.0[k]
        }))
    };
    let (erp0, erp1) = (avg(1, true), avg(1, false));
    let (gcr0, gcr1) = (avg(2, true), avg(2, false));
    Outcome::new(
        erp1 <= 0.5 * erp0 && gcr1 <= 0.5 * gcr0,
        format!("mean normalized ERP {erp0:.3} -> {erp1:.3}, GCR {gcr0:.3} -> {gcr1:.3}"),
    )
}

// ---------------------------------------------------------------------------
// 8. schedule arithmetic

fn criterion_8() -> Outcome {
    let fixed = build_schedule(12, 3).map(|s| s.stops).unwrap_or_default();
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut bad = Vec::new();
    for _ in 0..50 {
        let g = rng.random_range(6..=20_000);
        let span = 5 * g / 6 - g / 3 + 1;
        let h = rng.random_range(2..=span.min(12));
        let stops = build_schedule(g, h).unwrap().stops;
        if stops.len() != h || stops[0] != g / 3 || stops[h - 1] != 5 * g / 6 {
            bad.push(format!("g={g} H={h}: {stops:?}"));
        }
    }
    Outcome::new(
        fixed == vec![4, 7, 10] && bad.is_empty(),
        format!("build_schedule(12, 3) = {fixed:?}; {} of 50 random pairs wrong{}", bad.len(), bad.first().map(|b| format!(" ({b})")).unwrap_or_default()),
    )
}

// ---------------------------------------------------------------------------
// 9. record and replay

fn criterion_9() -> Outcome {
    let start = Instant::now();
    let model = Arc::new(minilib());
    let reference: Vec<Vec<String>> =
        minilib_reference().into_iter().map(|g| g.into_iter().map(String::from).collect()).collect();
    let policies = [
        ScriptedPolicy::FixedNc { n: 4, likert: 5, archive_candidate: true },
        ScriptedPolicy::TargetArchitecture { reference, likert: 4, archive_candidate: true },
    ];
    let dir = tempfile::tempdir().unwrap();
    let mut problems = Vec::new();
    let mut runs = 0;
    for (p, policy) in policies.iter().enumerate() {
        for seed in 0..5u64 {
            let cfg = EngineConfig { seed, ..Default::default() };
            let mut engine = Engine::new(model.clone(), cfg).unwrap();
            let path = dir.path().join(format!("session-{p}-{seed}.jsonl"));
            let mut log = EventLog::new(std::fs::File::create(&path).unwrap());
            run_recorded(&mut engine, &mut policy.clone(), &mut log).unwrap();
            drop(log);
            let recorded = engine.archive_snapshot().to_json();

            let events = read_events(BufReader::new(std::fs::File::open(&path).unwrap())).unwrap();
            let session = RecordedSession::from_events(&events).unwrap();
            let replayed = replay(&session, seed, ReplayMode::Strict, Execution::default(), &mut |_| {}).unwrap();
            if replayed.archive_snapshot().to_json() != recorded {
                problems.push(format!("policy {p} seed {seed}: archives differ"));
            }
            if session.bundles.len() != 3 {
                problems.push(format!("policy {p} seed {seed}: {} stops recorded", session.bundles.len()));
            }
            runs += 1;
        }
    }
    Outcome::new(
        problems.is_empty(),
        format!(
            "{runs} sessions replayed, {} mismatches, {}{}",
            problems.len(),
            secs(start.elapsed()),
            problems.first().map(|p| format!("; {p}")).unwrap_or_default()
        ),
    )
}

// ---------------------------------------------------------------------------

const NAMES: [&str; 10] = [
    "metric oracle equivalence",
    "maximin sign vs dominance",
    "preference range and fixtures",
    "archive invariants",
    "archive size decreases with territory size",
    "guided component count",
    "NSGA-II front vs archive",
    "schedule arithmetic",
    "record and replay",
    "ERP and GCR improvement",
];

fn main() {
    let selected: BTreeSet<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |c: usize| selected.is_empty() || selected.contains(&c);
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");

    let mut components: Option<ComponentStudy> = None;
    let mut unexpected = 0;
    let mut passed = 0;
    let mut run = 0;
    for c in 1..=10 {
        if !wanted(c) {
            continue;
        }
        let outcome = match c {
            1 => criterion_1(),
            2 => criterion_2(),
            3 => criterion_3(),
            4 => criterion_4(),
            5 => criterion_5(&tau_studies()),
            6 => criterion_6(components.get_or_insert_with(component_study)),
            7 => criterion_7(&contrasts()),
            8 => criterion_8(),
            9 => criterion_9(),
            _ => criterion_10(components.get_or_insert_with(component_study)),
        };
        run += 1;
        let known = KNOWN_DEVIATIONS.iter().find(|(id, instances, _)| {
            *id == c && !outcome.failing.is_empty() && outcome.failing.iter().all(|f| instances.contains(&f.as_str()))
        });
        let verdict = if outcome.passed { "PASS" } else { "FAIL" };
        println!("criterion {c:>2} {verdict}  {}: {}", NAMES[c - 1], outcome.detail);
        if outcome.passed {
            passed += 1;
        } else if let (Some((_, _, why)), false) = (known, strict) {
            println!("             known deviation: {why}");
        } else {
            unexpected += 1;
        }
    }
    println!("acceptance: {passed}/{run} criteria passed, {unexpected} unexpected failures");
    if unexpected > 0 {
        std::process::exit(1);
    }
}

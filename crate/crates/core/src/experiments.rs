//! Batch runs: quality indicators, the NSGA-II baseline and a seed-parallel
//! experiment driver that writes JSON and CSV reports.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::architecture::{check_feasibility, random_architecture, Architecture};
use crate::engine::{mutate, Engine, EngineConfig, GenerationStats, SetSummary};
use crate::error::{ConfigError, Error};
use crate::fitness::{Assessment, Evaluator};
use crate::interaction::ScriptedPolicy;
use crate::metrics::{Normalizer, ObjectiveVector, K};
use crate::model::{generate_model, minilib, parse_model, AnalysisModel, GeneratorSpec};
use crate::par::{self, Execution};
use crate::preferences::PreferenceStore;

/// Points of `front` not dominated by another point (duplicates kept once).
pub fn non_dominated(front: &[ObjectiveVector]) -> Vec<ObjectiveVector> {
    let mut out: Vec<ObjectiveVector> = Vec::new();
    for (i, p) in front.iter().enumerate() {
        let dominated = front.iter().enumerate().any(|(j, q)| j != i && q.dominates(p));
        if !dominated && !out.contains(p) {
            out.push(*p);
        }
    }
    out
}

/// Exact hypervolume of a minimization front in the unit cube, reference
/// point (1, 1, 1). Slices along the third objective and sums 2-D areas.
pub fn hypervolume(front: &[ObjectiveVector]) -> f64 {
    let mut pts: Vec<ObjectiveVector> = non_dominated(front)
        .into_iter()
        .filter(|p| p.0.iter().all(|v| *v < 1.0))
        .map(|p| ObjectiveVector(p.0.map(|v| v.max(0.0))))
        .collect();
    pts.sort_by(|a, b| a.0[2].total_cmp(&b.0[2]));
    let mut volume = 0.0;
    for i in 0..pts.len() {
        let next_z = if i + 1 < pts.len() { pts[i + 1].0[2] } else { 1.0 };
        let depth = next_z - pts[i].0[2];
        if depth > 0.0 {
            volume += area_2d(&pts[..=i]) * depth;
        }
    }
    volume
}

fn area_2d(pts: &[ObjectiveVector]) -> f64 {
    let mut xy: Vec<(f64, f64)> = pts.iter().map(|p| (p.0[0], p.0[1])).collect();
    xy.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut area = 0.0;
    let mut best_y = 1.0;
    for (i, &(x, y)) in xy.iter().enumerate() {
        best_y = f64::min(best_y, y);
        let next_x = xy.get(i + 1).map_or(1.0, |p| p.0);
        area += (next_x - x) * (1.0 - best_y);
    }
    area
}

/// Schott's spacing with rectilinear nearest-neighbour distances. `None`
/// for fewer than two points.
pub fn spacing(front: &[ObjectiveVector]) -> Option<f64> {
    if front.len() < 2 {
        return None;
    }
    let d: Vec<f64> = front
        .iter()
        .enumerate()
        .map(|(i, p)| {
            front.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, q)| p.l1(q)).fold(f64::INFINITY, f64::min)
        })
        .collect();
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    let var = d.iter().map(|x| (mean - x).powi(2)).sum::<f64>() / (d.len() - 1) as f64;
    Some(var.sqrt())
}

#[derive(Clone, Debug)]
struct NsgaMember {
    architecture: Architecture,
    assessment: Assessment,
    rank: usize,
    crowding: f64,
}

fn violations(a: &Assessment) -> usize {
    a.feasibility.violation_count()
}

/// Constrained domination: feasible beats infeasible, fewer violations beat
/// more, and feasible pairs compare by Pareto dominance.
fn constrained_dominates(a: &Assessment, b: &Assessment) -> bool {
    match (a.feasibility.feasible, b.feasibility.feasible) {
        (true, false) => true,
        (false, true) => false,
        (false, false) => violations(a) < violations(b),
        (true, true) => a.objectives.dominates(&b.objectives),
    }
}

/// Fast non-dominated sorting; returns the fronts as index lists.
pub fn fast_non_dominated_sort(items: &[Assessment]) -> Vec<Vec<usize>> {
    let n = items.len();
    let mut dominated_by: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut counts = vec![0usize; n];
    for p in 0..n {
        for q in 0..n {
            if p != q && constrained_dominates(&items[p], &items[q]) {
                dominated_by[p].push(q);
            } else if p != q && constrained_dominates(&items[q], &items[p]) {
                counts[p] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&p| counts[p] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &p in &current {
            for &q in &dominated_by[p] {
                counts[q] -= 1;
                if counts[q] == 0 {
                    next.push(q);
                }
            }
        }
        fronts.push(current);
        current = next;
    }
    fronts
}

/// Crowding distance of each member of one front (same order as `front`).
pub fn crowding_distance(points: &[ObjectiveVector]) -> Vec<f64> {
    let n = points.len();
    let mut dist = vec![0.0; n];
    if n <= 2 {
        return vec![f64::INFINITY; n];
    }
    for k in 0..K {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| points[a].0[k].total_cmp(&points[b].0[k]).then(a.cmp(&b)));
        let (lo, hi) = (points[idx[0]].0[k], points[idx[n - 1]].0[k]);
        dist[idx[0]] = f64::INFINITY;
        dist[idx[n - 1]] = f64::INFINITY;
        if hi > lo {
            for w in 1..n - 1 {
                dist[idx[w]] += (points[idx[w + 1]].0[k] - points[idx[w - 1]].0[k]) / (hi - lo);
            }
        }
    }
    dist
}

fn assign_rank_and_crowding(members: &mut [NsgaMember]) -> Vec<Vec<usize>> {
    let assessments: Vec<Assessment> = members.iter().map(|m| m.assessment.clone()).collect();
    let fronts = fast_non_dominated_sort(&assessments);
    for (rank, front) in fronts.iter().enumerate() {
        let pts: Vec<ObjectiveVector> = front.iter().map(|&i| members[i].assessment.objectives).collect();
        for (&i, d) in front.iter().zip(crowding_distance(&pts)) {
            members[i].rank = rank;
            members[i].crowding = d;
        }
    }
    fronts
}

fn crowded_better(a: &NsgaMember, b: &NsgaMember) -> bool {
    a.rank < b.rank || (a.rank == b.rank && a.crowding > b.crowding)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrontResult {
    pub architectures: Vec<Architecture>,
    pub objectives: Vec<ObjectiveVector>,
    pub evaluations: usize,
}

/// Generational NSGA-II over the same encoding and mutation operator. The
/// budget is the same evaluation count; variation is mutation only.
pub fn run_nsga2(model: &AnalysisModel, cfg: &EngineConfig, exec: Execution) -> Result<FrontResult, ConfigError> {
    cfg.validate(model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let evaluator = Evaluator {
        model,
        weights: cfg.erp_weights,
        normalizer: Normalizer::new(model, &cfg.erp_weights, cfg.n_min),
        bounds: cfg.bounds(),
    };
    let store = PreferenceStore::new();
    let archs = (0..cfg.population_size)
        .map(|_| random_architecture(model, cfg.n_min, cfg.n_max, &mut rng))
        .collect::<Result<Vec<_>, _>>()?;
    let assess = |archs: &[Architecture]| par::map(exec, archs, |a| evaluator.assess(a, &store));
    let mut pop: Vec<NsgaMember> = archs
        .iter()
        .cloned()
        .zip(assess(&archs))
        .map(|(architecture, assessment)| NsgaMember { architecture, assessment, rank: 0, crowding: 0.0 })
        .collect();
    assign_rank_and_crowding(&mut pop);
    let mut evaluations = pop.len();
    let n = cfg.population_size;
    while evaluations + n <= cfg.max_evaluations {
        let children: Vec<Architecture> = (0..n)
            .map(|_| {
                let a = rng.random_range(0..n);
                let b = rng.random_range(0..n);
                let parent = if crowded_better(&pop[b], &pop[a]) { &pop[b] } else { &pop[a] };
                mutate(&parent.architecture, model, &cfg.mutation_weights, cfg.n_min, cfg.n_max, &mut rng).0
            })
            .collect();
        let assessed = assess(&children);
        evaluations += children.len();
        pop.extend(
            children
                .into_iter()
                .zip(assessed)
                .map(|(architecture, assessment)| NsgaMember { architecture, assessment, rank: 0, crowding: 0.0 }),
        );
        let fronts = assign_rank_and_crowding(&mut pop);
        let mut keep: Vec<usize> = Vec::with_capacity(n);
        for front in fronts {
            if keep.len() + front.len() <= n {
                keep.extend(front);
            } else {
                let mut f = front;
                f.sort_by(|&a, &b| pop[b].crowding.total_cmp(&pop[a].crowding).then(a.cmp(&b)));
                keep.extend(f.into_iter().take(n - keep.len()));
                break;
            }
        }
        keep.sort_unstable();
        pop = keep.into_iter().map(|i| pop[i].clone()).collect();
        assign_rank_and_crowding(&mut pop);
    }
    let front: Vec<&NsgaMember> = pop.iter().filter(|m| m.rank == 0 && m.assessment.feasibility.feasible).collect();
    Ok(FrontResult {
        architectures: front.iter().map(|m| m.architecture.clone()).collect(),
        objectives: front.iter().map(|m| m.assessment.objectives).collect(),
        evaluations,
    })
}

/// Where an experiment instance comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InstanceSource {
    /// A model shipped with the library (`minilib`).
    Bundled(String),
    Path(PathBuf),
    Generate(GeneratorSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceSpec {
    pub name: String,
    pub source: InstanceSource,
}

impl InstanceSpec {
    pub fn load(&self, base: &Path) -> Result<AnalysisModel, Error> {
        match &self.source {
            InstanceSource::Bundled(name) if name == "minilib" => Ok(minilib()),
            InstanceSource::Bundled(name) => Err(ConfigError::new(format!("no bundled model named `{name}`")).into()),
            InstanceSource::Path(p) => {
                let path = base.join(p);
                let bytes = fs::read(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
                Ok(parse_model(&bytes)?)
            }
            InstanceSource::Generate(spec) => Ok(generate_model(spec)?),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "snake_case", deny_unknown_fields)]
pub enum AlgorithmSpec {
    Bmoea,
    Imoea { policy: ScriptedPolicy },
    Nsga2,
}

impl AlgorithmSpec {
    pub fn label(&self) -> &'static str {
        match self {
            AlgorithmSpec::Bmoea => "bmoea",
            AlgorithmSpec::Imoea { .. } => "imoea",
            AlgorithmSpec::Nsga2 => "nsga2",
        }
    }
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub instances: Vec<InstanceSpec>,
    pub algorithms: Vec<AlgorithmSpec>,
    /// Initial territory sizes to sweep; empty keeps the base config value.
    #[serde(default)]
    pub tau_values: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Base configuration; `seed` and the territory size are overridden.
    #[serde(default)]
    pub config: EngineConfig,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Wall-clock times make reports differ between identical runs.
    #[serde(default = "default_true")]
    pub record_runtime: bool,
    #[serde(default)]
    pub generation_logs: bool,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.seeds.is_empty() {
            return Err(ConfigError::new("an experiment needs at least one seed"));
        }
        if self.instances.is_empty() || self.algorithms.is_empty() {
            return Err(ConfigError::new("an experiment needs at least one instance and one algorithm"));
        }
        if self.tau_values.iter().any(|t| !(*t > 0.0)) {
            return Err(ConfigError::new("territory sizes must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub hv: f64,
    pub spacing: Option<f64>,
    /// Final archive size (front size for NSGA-II).
    pub archive_size: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub runtime_ms: Option<u64>,
    pub initial: Option<SetSummary>,
    #[serde(rename = "final")]
    pub final_population: Option<SetSummary>,
    pub modal_components: Option<usize>,
    #[serde(skip)]
    pub generations: Vec<GenerationStats>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() > 1 { (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
        Some(Self { mean, std })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigurationReport {
    pub instance: String,
    pub algorithm: String,
    pub tau_initial: Option<f64>,
    pub runs: Vec<RunRecord>,
    pub hv: Option<MeanStd>,
    pub spacing: Option<MeanStd>,
    pub archive_size: Option<MeanStd>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub configurations: Vec<ConfigurationReport>,
}

impl ExperimentReport {
    pub fn find(&self, instance: &str, algorithm: &str, tau: Option<f64>) -> Option<&ConfigurationReport> {
        self.configurations.iter().find(|c| c.instance == instance && c.algorithm == algorithm && c.tau_initial == tau)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["instance", "algorithm", "tau_initial", "seed", "hv", "spacing", "archive_size", "runtime_ms"])?;
        for c in &self.configurations {
            for r in &c.runs {
                w.write_record([
                    c.instance.clone(),
                    c.algorithm.clone(),
                    c.tau_initial.map(|t| t.to_string()).unwrap_or_default(),
                    r.seed.to_string(),
                    r.hv.to_string(),
                    r.spacing.map(|s| s.to_string()).unwrap_or_default(),
                    r.archive_size.to_string(),
                    r.runtime_ms.map(|t| t.to_string()).unwrap_or_default(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs the interactive or batch engine once and summarizes the final archive.
pub fn run_engine(
    model: Arc<AnalysisModel>,
    cfg: EngineConfig,
    policy: Option<ScriptedPolicy>,
    keep_generations: bool,
    exec: Execution,
) -> Result<(RunRecord, Engine), Error> {
    let start = Instant::now();
    let cfg = if policy.is_none() { EngineConfig { interactions: 0, ..cfg } } else { cfg };
    let seed = cfg.seed;
    let mut engine = Engine::with_execution(model, cfg, exec)?;
    let mut generations = Vec::new();
    let mut log = |s: &GenerationStats| {
        if keep_generations {
            generations.push(s.clone());
        }
    };
    match policy {
        Some(mut p) => engine.run(&mut p, &mut log)?,
        None => engine.run(&mut ScriptedPolicy::Noop, &mut log)?,
    }
    let front: Vec<ObjectiveVector> = engine
        .archive()
        .individuals()
        .filter(|i| i.assessment.feasibility.feasible)
        .map(|i| i.assessment.objectives)
        .collect();
    let last = engine.stats();
    let record = RunRecord {
        seed,
        hv: hypervolume(&front),
        spacing: spacing(&front),
        archive_size: engine.archive().len(),
        runtime_ms: Some(start.elapsed().as_millis() as u64),
        initial: Some(engine.initial_stats().population.clone()),
        modal_components: Some(last.modal_component_count()),
        final_population: Some(last.population),
        generations,
    };
    Ok((record, engine))
}

pub fn run_nsga2_record(model: &AnalysisModel, cfg: &EngineConfig, exec: Execution) -> Result<RunRecord, Error> {
    let start = Instant::now();
    let front = run_nsga2(model, cfg, exec)?;
    Ok(RunRecord {
        seed: cfg.seed,
        hv: hypervolume(&front.objectives),
        spacing: spacing(&front.objectives),
        archive_size: front.objectives.len(),
        runtime_ms: Some(start.elapsed().as_millis() as u64),
        initial: None,
        final_population: None,
        modal_components: None,
        generations: Vec::new(),
    })
}

struct Job {
    config_index: usize,
    instance: usize,
    algorithm: usize,
    tau: Option<f64>,
    seed: u64,
}

/// Runs every (instance, algorithm, territory size, seed) combination, seeds
/// in parallel, and writes `report.json` and `report.csv` when an output
/// directory is given. `base` resolves relative instance paths.
pub fn run_experiment(spec: &ExperimentSpec, base: &Path, exec: Execution) -> Result<ExperimentReport, Error> {
    spec.validate()?;
    let models: Vec<Arc<AnalysisModel>> =
        spec.instances.iter().map(|i| i.load(base).map(Arc::new)).collect::<Result<_, _>>()?;
    let mut configurations = Vec::new();
    let mut jobs = Vec::new();
    for (ii, inst) in spec.instances.iter().enumerate() {
        for (ai, alg) in spec.algorithms.iter().enumerate() {
            let taus: Vec<Option<f64>> = match alg {
                AlgorithmSpec::Nsga2 => vec![None],
                _ if spec.tau_values.is_empty() => vec![Some(spec.config.archive.tau_initial)],
                _ => spec.tau_values.iter().map(|t| Some(*t)).collect(),
            };
            for tau in taus {
                for &seed in &spec.seeds {
                    jobs.push(Job { config_index: configurations.len(), instance: ii, algorithm: ai, tau, seed });
                }
                configurations.push(ConfigurationReport {
                    instance: inst.name.clone(),
                    algorithm: alg.label().to_string(),
                    tau_initial: tau,
                    runs: Vec::new(),
                    hv: None,
                    spacing: None,
                    archive_size: None,
                });
            }
        }
    }

    let results = par::map(exec, &jobs, |job| -> Result<RunRecord, Error> {
        let model = models[job.instance].clone();
        let mut cfg = spec.config.clone();
        cfg.seed = job.seed;
        if let Some(t) = job.tau {
            cfg.archive.tau_initial = t;
            cfg.archive.tau_final = cfg.archive.tau_final.min(t);
        }
        let mut record = match &spec.algorithms[job.algorithm] {
            AlgorithmSpec::Bmoea => run_engine(model, cfg, None, spec.generation_logs, Execution::Sequential)?.0,
            AlgorithmSpec::Imoea { policy } => {
                run_engine(model, cfg, Some(policy.clone()), spec.generation_logs, Execution::Sequential)?.0
            }
            AlgorithmSpec::Nsga2 => run_nsga2_record(&model, &cfg, Execution::Sequential)?,
        };
        if !spec.record_runtime {
            record.runtime_ms = None;
        }
        Ok(record)
    });

    let mut logs: Vec<(String, Vec<GenerationStats>)> = Vec::new();
    for (job, result) in jobs.iter().zip(results) {
        let mut record = result?;
        let c = &mut configurations[job.config_index];
        if spec.generation_logs && !record.generations.is_empty() {
            let tau = job.tau.map(|t| format!("_tau{t}")).unwrap_or_default();
            logs.push((format!("{}_{}{}_seed{}.jsonl", c.instance, c.algorithm, tau, job.seed), std::mem::take(&mut record.generations)));
        }
        c.runs.push(record);
    }
    for c in &mut configurations {
        let col = |f: &dyn Fn(&RunRecord) -> Option<f64>| -> Vec<f64> { c.runs.iter().filter_map(f).collect() };
        c.hv = MeanStd::of(&col(&|r| Some(r.hv)));
        c.spacing = MeanStd::of(&col(&|r| r.spacing));
        c.archive_size = MeanStd::of(&col(&|r| Some(r.archive_size as f64)));
    }
    let report = ExperimentReport { configurations };

    if let Some(dir) = &spec.output_dir {
        let dir = base.join(dir);
        fs::create_dir_all(&dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        let json_path = dir.join("report.json");
        fs::write(&json_path, report.to_json()).map_err(|e| Error::io(format!("writing {}", json_path.display()), e))?;
        let csv_path = dir.join("report.csv");
        let file = fs::File::create(&csv_path).map_err(|e| Error::io(format!("creating {}", csv_path.display()), e))?;
        report.write_csv(file).map_err(|e| Error::io(format!("writing {}", csv_path.display()), std::io::Error::other(e)))?;
        for (name, gens) in logs {
            let path = dir.join("generations").join(name);
            fs::create_dir_all(path.parent().expect("has parent"))
                .map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
            let mut text = String::new();
            for g in gens {
                text.push_str(&serde_json::to_string(&g).expect("stats serialize"));
                text.push('\n');
            }
            fs::write(&path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        }
    }
    Ok(report)
}

/// Whether every member of `front` is feasible under `model`.
pub fn all_feasible(front: &[Architecture], model: &AnalysisModel) -> bool {
    front.iter().all(|a| check_feasibility(a, model).feasible)
}

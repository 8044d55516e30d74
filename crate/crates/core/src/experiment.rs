//! Batch experiments: condition grids over seeded scripted operators, run
//! logs, and the paired statistical report.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PlanError, ReportError};
use crate::metrics::{finalize_run, Condition, ControlMode, RunRecord};
use crate::operator::{OperatorConfig, ScriptedOperator};
use crate::sim::{SimConfig, Simulation};
use crate::stats::{median, summarize_boxplot, wilcoxon_signed_rank, PValueMethod};
use crate::world::{load_scenario_file, Scenario};

pub const RUNS_FILE: &str = "runs.jsonl";
pub const FAILURES_FILE: &str = "failures.jsonl";
pub const REPORT_FILE: &str = "report.csv";
pub const BOXPLOT_FILE: &str = "boxplot.csv";

/// Latency of a condition: a constant, or a per-run constant drawn uniformly
/// from a range using the run seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DelaySpec {
    Fixed(f64),
    Uniform { min: f64, max: f64 },
}

impl Default for DelaySpec {
    fn default() -> Self {
        DelaySpec::Fixed(0.0)
    }
}

impl DelaySpec {
    fn label(&self) -> Option<String> {
        match *self {
            DelaySpec::Fixed(0.0) => None,
            DelaySpec::Fixed(d) => Some(format!("delay_{d}")),
            DelaySpec::Uniform { min, max } => Some(format!("delay_{min}-{max}")),
        }
    }

    fn is_valid(&self) -> bool {
        match *self {
            DelaySpec::Fixed(d) => d >= 0.0 && d.is_finite(),
            DelaySpec::Uniform { min, max } => min >= 0.0 && max >= min && max.is_finite(),
        }
    }

    /// Delay used by the run with `seed`.
    pub fn resolve(&self, seed: u64) -> f64 {
        match *self {
            DelaySpec::Fixed(d) => d,
            DelaySpec::Uniform { min, max } if max > min => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6465_6c61_795f_7273);
                rng.random_range(min..=max)
            }
            DelaySpec::Uniform { min, .. } => min,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionSpec {
    #[serde(default)]
    pub label: Option<String>,
    pub mode: ControlMode,
    #[serde(default)]
    pub delay: DelaySpec,
    #[serde(default)]
    pub drift: f64,
}

impl ConditionSpec {
    pub fn label(&self) -> String {
        if let Some(l) = &self.label {
            return l.clone();
        }
        let mut parts = vec![self.mode.as_str().to_string()];
        parts.extend(self.delay.label());
        if self.drift != 0.0 {
            parts.push(format!("drift_{}", self.drift));
        }
        parts.join("_")
    }

    /// The undisturbed blended condition every other condition is tested against.
    pub fn is_baseline(&self) -> bool {
        self.mode == ControlMode::Bsc && self.delay == DelaySpec::Fixed(0.0) && self.drift == 0.0
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanFile {
    name: String,
    scenarios: Vec<String>,
    conditions: Vec<ConditionSpec>,
    #[serde(default)]
    seeds: Option<Vec<u64>>,
    #[serde(default)]
    repetitions: Option<u64>,
    #[serde(default)]
    base_seed: u64,
    #[serde(default)]
    order_seed: u64,
    #[serde(default)]
    output_dir: Option<String>,
    #[serde(default)]
    record_ticks: bool,
    #[serde(default)]
    sim: SimConfig,
    #[serde(default)]
    operator: OperatorConfig,
}

/// A validated plan with its scenarios loaded.
#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub name: String,
    pub scenarios: Vec<Scenario>,
    pub conditions: Vec<ConditionSpec>,
    pub seeds: Vec<u64>,
    pub order_seed: u64,
    pub output_dir: Option<PathBuf>,
    pub record_ticks: bool,
    /// Shared settings; mode, delay and drift are overridden per condition.
    pub sim: SimConfig,
    pub operator: OperatorConfig,
}

impl ExperimentPlan {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, PlanError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        Self::from_json(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Parses a plan; relative scenario and output paths resolve against `base`.
    pub fn from_json(json: &str, base: &Path) -> Result<Self, PlanError> {
        let file: PlanFile = serde_json::from_str(json)?;
        if file.conditions.is_empty() {
            return Err(PlanError::Invalid(
                "at least one condition is required".into(),
            ));
        }
        if file.scenarios.is_empty() {
            return Err(PlanError::Invalid(
                "at least one scenario is required".into(),
            ));
        }
        let seeds = match (file.seeds, file.repetitions) {
            (Some(_), Some(_)) => {
                return Err(PlanError::Invalid(
                    "give either `seeds` or `repetitions`, not both".into(),
                ))
            }
            (Some(s), None) => s,
            (None, Some(n)) => (0..n).map(|k| file.base_seed + k).collect(),
            (None, None) => {
                return Err(PlanError::Invalid(
                    "one of `seeds` or `repetitions` is required".into(),
                ))
            }
        };
        if seeds.is_empty() {
            return Err(PlanError::Invalid("at least one seed is required".into()));
        }
        if seeds.iter().collect::<HashSet<_>>().len() != seeds.len() {
            return Err(PlanError::Invalid("seeds must be distinct".into()));
        }
        let mut labels = HashSet::new();
        for (i, c) in file.conditions.iter().enumerate() {
            if !c.delay.is_valid() {
                return Err(PlanError::Invalid(format!(
                    "conditions[{i}].delay must be a non-negative value or range"
                )));
            }
            if !c.drift.is_finite() {
                return Err(PlanError::Invalid(format!(
                    "conditions[{i}].drift must be finite"
                )));
            }
            if !labels.insert(c.label()) {
                return Err(PlanError::Invalid(format!(
                    "duplicate condition label `{}`",
                    c.label()
                )));
            }
        }
        file.sim.validate().map_err(PlanError::Invalid)?;
        file.operator
            .validate(file.sim.limits.v_max)
            .map_err(PlanError::Invalid)?;
        let mut scenarios = Vec::new();
        let mut names = HashSet::new();
        for rel in &file.scenarios {
            let s = load_scenario_file(base.join(rel)).map_err(|source| PlanError::Scenario {
                path: rel.clone(),
                source,
            })?;
            if !names.insert(s.name.clone()) {
                return Err(PlanError::Invalid(format!(
                    "duplicate scenario name `{}`",
                    s.name
                )));
            }
            scenarios.push(s);
        }
        Ok(Self {
            name: file.name,
            scenarios,
            conditions: file.conditions,
            seeds,
            order_seed: file.order_seed,
            output_dir: file.output_dir.map(|d| base.join(d)),
            record_ticks: file.record_ticks,
            sim: file.sim,
            operator: file.operator,
        })
    }

    /// Cells in plan order: scenario, then condition, then seed.
    pub fn cells(&self) -> Vec<CellKey> {
        let mut out = Vec::new();
        for s in 0..self.scenarios.len() {
            for c in 0..self.conditions.len() {
                for k in 0..self.seeds.len() {
                    out.push(CellKey {
                        scenario: s,
                        condition: c,
                        seed: k,
                    });
                }
            }
        }
        out
    }

    /// Cells in the randomized execution order.
    pub fn shuffled_cells(&self) -> Vec<CellKey> {
        let mut cells = self.cells();
        cells.shuffle(&mut ChaCha8Rng::seed_from_u64(self.order_seed));
        cells
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellKey {
    pub scenario: usize,
    pub condition: usize,
    pub seed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub scenario: String,
    pub condition: String,
    pub seed: u64,
    pub error: String,
}

/// Runs a single cell to completion.
pub fn run_cell(plan: &ExperimentPlan, key: CellKey) -> Result<RunRecord, String> {
    let scenario = &plan.scenarios[key.scenario];
    let spec = &plan.conditions[key.condition];
    let seed = plan.seeds[key.seed];
    let delay = spec.delay.resolve(seed);
    let condition = Condition {
        label: spec.label(),
        mode: spec.mode,
        delay,
        drift: spec.drift,
        seed,
    };
    let config = SimConfig {
        mode: spec.mode,
        delay,
        drift: spec.drift,
        ..plan.sim.clone()
    };
    let operator = ScriptedOperator::new(scenario.route.clone(), plan.operator, seed);
    let mut sim = Simulation::new_seeded(scenario.clone(), config, Box::new(operator), seed)
        .map_err(|e| e.to_string())?;
    sim.run_to_end();
    Ok(finalize_run(
        sim.into_log(),
        scenario,
        &condition,
        plan.record_ticks,
    ))
}

#[derive(Debug, Clone, Default)]
pub struct BatchResult {
    /// Sorted by cell key, independent of execution order.
    pub records: Vec<RunRecord>,
    pub failures: Vec<CellFailure>,
}

/// Executes every cell, in randomized order, on up to `parallel` workers
/// (all cores when `None`). A failing cell is recorded and the batch continues.
pub fn execute(plan: &ExperimentPlan, parallel: Option<usize>) -> BatchResult {
    let order = plan.shuffled_cells();
    let work = || {
        order
            .par_iter()
            .enumerate()
            .map(|(pos, &key)| {
                let out = catch_unwind(AssertUnwindSafe(|| run_cell(plan, key)))
                    .unwrap_or_else(|p| Err(panic_message(p.as_ref())));
                (key, pos, out)
            })
            .collect::<Vec<_>>()
    };
    let mut results = match parallel {
        Some(n) if n > 0 => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(|pool| pool.install(work))
            .unwrap_or_else(|_| work()),
        _ => work(),
    };
    results.sort_by_key(|(key, _, _)| *key);
    let mut batch = BatchResult::default();
    for (key, pos, out) in results {
        match out {
            Ok(mut rec) => {
                rec.run_order = pos;
                batch.records.push(rec);
            }
            Err(error) => batch.failures.push(CellFailure {
                scenario: plan.scenarios[key.scenario].name.clone(),
                condition: plan.conditions[key.condition].label(),
                seed: plan.seeds[key.seed],
                error,
            }),
        }
    }
    batch
}

fn panic_message(p: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        format!("panicked: {s}")
    } else if let Some(s) = p.downcast_ref::<String>() {
        format!("panicked: {s}")
    } else {
        "panicked".to_string()
    }
}

/// Runs the plan and writes logs and the report into `out_dir`.
pub fn run_experiment(
    plan: &ExperimentPlan,
    parallel: Option<usize>,
    out_dir: &Path,
) -> Result<(BatchResult, Report), ReportError> {
    let batch = execute(plan, parallel);
    fs::create_dir_all(out_dir)?;
    write_jsonl(&out_dir.join(RUNS_FILE), &batch.records)?;
    let failures_path = out_dir.join(FAILURES_FILE);
    if batch.failures.is_empty() {
        if failures_path.exists() {
            fs::remove_file(&failures_path)?;
        }
    } else {
        write_jsonl(&failures_path, &batch.failures)?;
    }
    let report = build_report(&batch.records);
    report.write(out_dir)?;
    Ok((batch, report))
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), ReportError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_runs(path: &Path) -> Result<Vec<RunRecord>, ReportError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|source| ReportError::Parse {
                line: i + 1,
                source,
            })?,
        );
    }
    Ok(out)
}

/// Recomputes the report from an existing log directory.
pub fn analyze(dir: &Path) -> Result<Report, ReportError> {
    let records = read_runs(&dir.join(RUNS_FILE))?;
    let report = build_report(&records);
    report.write(dir)?;
    Ok(report)
}

pub const METRICS: [&str; 3] = ["time_to_completion", "odometric_distance", "true_distance"];

fn metric_value(r: &RunRecord, metric: &str) -> Option<f64> {
    match metric {
        "time_to_completion" => r.time_to_completion,
        "odometric_distance" => Some(r.odometric_distance),
        "true_distance" => Some(r.true_distance),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub scenario: String,
    pub metric: String,
    pub condition: String,
    /// Runs in the condition.
    pub n: usize,
    pub completed: usize,
    pub collisions: u64,
    /// Median over completed runs.
    pub median: Option<f64>,
    pub n_pairs: usize,
    /// Seeds dropped from the paired test because either run timed out.
    pub excluded_pairs: usize,
    pub p_vs_baseline: Option<f64>,
    pub method: Option<String>,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoxplotRow {
    pub scenario: String,
    pub metric: String,
    pub condition: String,
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    /// Semicolon separated.
    pub outliers: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub boxplots: Vec<BoxplotRow>,
}

impl Report {
    pub fn row(&self, scenario: &str, metric: &str, condition: &str) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.scenario == scenario && r.metric == metric && r.condition == condition)
    }

    pub fn write(&self, dir: &Path) -> Result<(), ReportError> {
        let mut w = csv::Writer::from_path(dir.join(REPORT_FILE))?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join(BOXPLOT_FILE))?;
        for r in &self.boxplots {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Paired comparison of `metric` between two conditions keyed by seed.
/// Returns `(n_pairs, excluded, p, method, note)`.
fn paired_test(
    runs: &BTreeMap<u64, &RunRecord>,
    base: &BTreeMap<u64, &RunRecord>,
    metric: &str,
) -> (usize, usize, Option<f64>, Option<PValueMethod>, String) {
    let mut a = Vec::new();
    let mut b = Vec::new();
    let mut excluded = 0;
    for (seed, r) in runs {
        let Some(q) = base.get(seed) else { continue };
        match (r.completed(), q.completed()) {
            (true, true) => {
                if let (Some(x), Some(y)) = (metric_value(r, metric), metric_value(q, metric)) {
                    a.push(x);
                    b.push(y);
                }
            }
            _ => excluded += 1,
        }
    }
    if a.len() < 2 {
        return (
            a.len(),
            excluded,
            None,
            None,
            "too few completed pairs for a test".into(),
        );
    }
    match wilcoxon_signed_rank(&a, &b) {
        Ok(w) => (
            a.len(),
            excluded,
            Some(w.p_two_sided),
            Some(w.method),
            String::new(),
        ),
        Err(e) => (a.len(), excluded, None, None, e.to_string()),
    }
}

/// Per-condition summaries and signed-rank tests against the undisturbed
/// blended condition of each scenario.
pub fn build_report(records: &[RunRecord]) -> Report {
    let mut report = Report::default();
    let mut scenarios: Vec<&str> = Vec::new();
    for r in records {
        if !scenarios.contains(&r.scenario.as_str()) {
            scenarios.push(&r.scenario);
        }
    }
    for scenario in scenarios {
        let in_scenario: Vec<&RunRecord> =
            records.iter().filter(|r| r.scenario == scenario).collect();
        let mut labels: Vec<&str> = Vec::new();
        for r in &in_scenario {
            if !labels.contains(&r.condition.label.as_str()) {
                labels.push(&r.condition.label);
            }
        }
        let by_seed = |label: &str| -> BTreeMap<u64, &RunRecord> {
            in_scenario
                .iter()
                .filter(|r| r.condition.label == label)
                .map(|r| (r.condition.seed, *r))
                .collect()
        };
        let baseline = labels.iter().copied().find(|l| {
            in_scenario
                .iter()
                .filter(|r| r.condition.label == *l)
                .all(|r| {
                    r.condition.mode == ControlMode::Bsc
                        && r.condition.delay == 0.0
                        && r.condition.drift == 0.0
                })
        });
        let base_runs = baseline.map(by_seed);
        for metric in METRICS {
            for &label in &labels {
                let runs = by_seed(label);
                let completed: Vec<f64> = runs
                    .values()
                    .filter(|r| r.completed())
                    .filter_map(|r| metric_value(r, metric))
                    .collect();
                let (n_pairs, excluded, p, method, note) = match (&base_runs, baseline) {
                    (Some(_), Some(b)) if b == label => (0, 0, None, None, "baseline".to_string()),
                    (Some(base), Some(_)) => paired_test(&runs, base, metric),
                    _ => (
                        0,
                        0,
                        None,
                        None,
                        "no undisturbed blended baseline".to_string(),
                    ),
                };
                if excluded > 0 {
                    log::warn!(
                        "{scenario}/{label}/{metric}: {excluded} pair(s) excluded for timeouts"
                    );
                }
                report.rows.push(ReportRow {
                    scenario: scenario.to_string(),
                    metric: metric.to_string(),
                    condition: label.to_string(),
                    n: runs.len(),
                    completed: runs.values().filter(|r| r.completed()).count(),
                    collisions: runs.values().map(|r| r.collision_count as u64).sum(),
                    median: median(&completed),
                    n_pairs,
                    excluded_pairs: excluded,
                    p_vs_baseline: p,
                    method: method.map(|m| m.as_str().to_string()),
                    note,
                });
                if let Ok(b) = summarize_boxplot(&completed) {
                    report.boxplots.push(BoxplotRow {
                        scenario: scenario.to_string(),
                        metric: metric.to_string(),
                        condition: label.to_string(),
                        n: b.n,
                        min: b.min,
                        q1: b.q1,
                        median: b.median,
                        q3: b.q3,
                        max: b.max,
                        whisker_low: b.whisker_low,
                        whisker_high: b.whisker_high,
                        outliers: b
                            .outliers
                            .iter()
                            .map(|v| v.to_string())
                            .collect::<Vec<_>>()
                            .join(";"),
                    });
                }
            }
        }
    }
    report
}

//! Monte Carlo harness: experiment plans, parallel replication, aggregation
//! and table rendering.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_path_to_error::Segment;

use crate::error::{Result, SdrError};
use crate::estimator::{EstimatorConfig, Method};
use crate::methods::estimate_ate;
use crate::rng::{derive_seed, StreamKey, StreamTag};
use crate::simulate::{draw_dataset, ScenarioConfig, TrueParams};

pub const DEFAULT_REPS: usize = 500;

/// One simulation design in a plan. The seed is derived from the plan's
/// master seed and the scenario's position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanScenario {
    pub name: String,
    pub n: usize,
    pub p: usize,
    #[serde(default = "default_rho")]
    pub rho: f64,
    pub s_theta: usize,
    pub s_beta: usize,
    #[serde(default = "default_r_squared")]
    pub r_squared: f64,
    #[serde(default)]
    pub heteroskedastic: bool,
}

fn default_rho() -> f64 {
    0.6
}

fn default_r_squared() -> f64 {
    0.5
}

fn default_reps() -> usize {
    DEFAULT_REPS
}

fn default_level() -> f64 {
    0.95
}

impl PlanScenario {
    pub fn config(&self, seed: u64) -> ScenarioConfig {
        ScenarioConfig {
            n: self.n,
            p: self.p,
            rho: self.rho,
            s_theta: self.s_theta,
            s_beta: self.s_beta,
            r_squared: self.r_squared,
            heteroskedastic: self.heteroskedastic,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub scenarios: Vec<PlanScenario>,
    pub methods: Vec<Method>,
    #[serde(default = "default_reps")]
    pub reps: usize,
    /// Confidence level; overrides `estimator.level`.
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default)]
    pub master_seed: u64,
    /// Worker thread cap; `None` uses every available core.
    #[serde(default)]
    pub parallelism: Option<usize>,
    #[serde(default)]
    pub estimator: EstimatorConfig,
}

fn schema(pointer: impl Into<String>, message: impl Into<String>) -> SdrError {
    SdrError::Schema {
        pointer: pointer.into(),
        message: message.into(),
    }
}

fn json_pointer(path: &serde_path_to_error::Path) -> String {
    let mut out = String::new();
    for segment in path.iter() {
        out.push('/');
        match segment {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}

/// Deserializes JSON, reporting failures with the JSON pointer of the
/// offending value.
pub fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let value = serde_path_to_error::deserialize(de).map_err(|err| {
        let pointer = json_pointer(err.path());
        schema(pointer, err.into_inner().to_string())
    })?;
    Ok(value)
}

impl ExperimentPlan {
    pub fn from_json(text: &str) -> Result<Self> {
        let plan: Self = parse_json(text)?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(schema("/reps", "reps must be ≥ 1"));
        }
        if self.methods.is_empty() {
            return Err(schema("/methods", "methods must be non-empty"));
        }
        let mut seen = HashSet::new();
        for (j, m) in self.methods.iter().enumerate() {
            if !seen.insert(*m) {
                return Err(schema(format!("/methods/{j}"), format!("method {m} is listed twice")));
            }
        }
        if self.scenarios.is_empty() {
            return Err(schema("/scenarios", "scenarios must be non-empty"));
        }
        let mut names = HashSet::new();
        for (s, scenario) in self.scenarios.iter().enumerate() {
            if !names.insert(scenario.name.as_str()) {
                return Err(schema(
                    format!("/scenarios/{s}/name"),
                    format!("scenario name {:?} is not unique", scenario.name),
                ));
            }
            scenario
                .config(0)
                .validate()
                .map_err(|e| schema(format!("/scenarios/{s}"), e.to_string()))?;
        }
        if self.parallelism == Some(0) {
            return Err(schema("/parallelism", "parallelism must be ≥ 1"));
        }
        self.estimator_config()
            .validate()
            .map_err(|e| schema("/estimator", e.to_string()))
    }

    pub fn estimator_config(&self) -> EstimatorConfig {
        EstimatorConfig {
            level: self.level,
            ..self.estimator.clone()
        }
    }

    pub fn scenario_seed(&self, index: usize) -> u64 {
        derive_seed(self.master_seed, index as u64)
    }
}

pub fn parse_plan(path: &Path) -> Result<ExperimentPlan> {
    ExperimentPlan::from_json(&std::fs::read_to_string(path)?)
}

/// Compact per-replication diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepDiagnostics {
    pub converged: bool,
    pub clamp_count: usize,
    pub resplits: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: u64,
    pub tau_hat: Option<f64>,
    pub v_hat: Option<f64>,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
    pub covered: Option<bool>,
    pub diagnostics: Option<RepDiagnostics>,
    /// Estimator failure; such replications are excluded from aggregates.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: Method,
    /// Replications that produced an estimate.
    pub completed: usize,
    pub failures: usize,
    pub mse: Option<f64>,
    pub cp: Option<f64>,
    pub mc_se_mse: Option<f64>,
    pub mc_se_cp: Option<f64>,
    pub bias: Option<f64>,
    /// Sample variance of the point estimates.
    pub var_tau_hat: Option<f64>,
    /// Mean of `V_hat / n`.
    pub mean_v_hat_over_n: Option<f64>,
    pub rep_records: Vec<RepRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub name: String,
    pub config: ScenarioConfig,
    pub tau_true: f64,
    pub methods: Vec<MethodResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub master_seed: u64,
    pub reps: usize,
    pub level: f64,
    pub scenarios: Vec<ScenarioResult>,
}

impl BenchResult {
    pub fn cell(&self, scenario: &str, method: Method) -> Option<&MethodResult> {
        self.scenarios
            .iter()
            .find(|s| s.name == scenario)?
            .methods
            .iter()
            .find(|m| m.method == method)
    }
}

fn run_replication(
    config: &ScenarioConfig,
    truth: &TrueParams,
    methods: &[Method],
    est: &EstimatorConfig,
    rep: u64,
) -> Vec<RepRecord> {
    let key = StreamKey::new(config.seed, rep);
    let data = match draw_dataset(config, truth, key) {
        Ok(d) => d,
        Err(err) => return methods.iter().map(|_| failed(rep, err.to_string())).collect(),
    };
    methods
        .iter()
        .map(|&method| {
            // every method sees the same fold split
            let mut rng = key.rng(StreamTag::FoldSplit);
            match estimate_ate(method, &data, est, &mut rng) {
                Ok(e) => {
                    let interval = e.interval();
                    RepRecord {
                        rep,
                        tau_hat: Some(e.tau_hat()),
                        v_hat: e.v_hat(),
                        ci_lower: interval.map(|c| c.0),
                        ci_upper: interval.map(|c| c.1),
                        covered: e.covers(truth.tau_true),
                        diagnostics: Some(RepDiagnostics {
                            converged: e.converged(),
                            clamp_count: e.clamp_count(),
                            resplits: e.resplits(),
                            warnings: e.warnings().to_vec(),
                        }),
                        error: None,
                    }
                }
                Err(err) => failed(rep, err.to_string()),
            }
        })
        .collect()
}

fn failed(rep: u64, error: String) -> RepRecord {
    RepRecord {
        rep,
        tau_hat: None,
        v_hat: None,
        ci_lower: None,
        ci_upper: None,
        covered: None,
        diagnostics: None,
        error: Some(error),
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Aggregates replication records in index order.
pub fn aggregate(method: Method, tau_true: f64, n: usize, rep_records: Vec<RepRecord>) -> MethodResult {
    let taus: Vec<f64> = rep_records.iter().filter_map(|r| r.tau_hat).collect();
    let sq: Vec<f64> = taus.iter().map(|t| (t - tau_true).powi(2)).collect();
    let covered: Vec<f64> = rep_records
        .iter()
        .filter_map(|r| r.covered.map(|c| f64::from(u8::from(c))))
        .collect();
    let vn: Vec<f64> = rep_records.iter().filter_map(|r| r.v_hat.map(|v| v / n as f64)).collect();
    let some = |ok: bool, f: &dyn Fn() -> f64| ok.then(f);
    let cp = some(!covered.is_empty(), &|| mean(&covered));
    MethodResult {
        method,
        completed: taus.len(),
        failures: rep_records.len() - taus.len(),
        mse: some(!sq.is_empty(), &|| mean(&sq)),
        cp,
        mc_se_mse: some(!sq.is_empty(), &|| sample_sd(&sq) / (sq.len() as f64).sqrt()),
        mc_se_cp: cp.map(|c| (c * (1.0 - c) / covered.len() as f64).sqrt()),
        bias: some(!taus.is_empty(), &|| mean(&taus) - tau_true),
        var_tau_hat: some(!taus.is_empty(), &|| sample_sd(&taus).powi(2)),
        mean_v_hat_over_n: some(!vn.is_empty(), &|| mean(&vn)),
        rep_records,
    }
}

/// Runs every (scenario, replication) pair on a pool of `plan.parallelism`
/// workers. Output depends only on the plan.
pub fn run_monte_carlo(plan: &ExperimentPlan) -> Result<BenchResult> {
    plan.validate()?;
    let est = plan.estimator_config();
    let mut designs = Vec::with_capacity(plan.scenarios.len());
    for (s, scenario) in plan.scenarios.iter().enumerate() {
        let config = scenario.config(plan.scenario_seed(s));
        let truth = TrueParams::build(config.p, config.rho, config.s_theta, config.s_beta, config.r_squared)?;
        designs.push((config, truth));
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(k) = plan.parallelism {
        builder = builder.num_threads(k);
    }
    let pool = builder
        .build()
        .map_err(|e| SdrError::invalid(format!("cannot start worker pool: {e}")))?;
    let reps = plan.reps as u64;
    let jobs: Vec<(usize, u64)> = (0..designs.len()).flat_map(|s| (0..reps).map(move |r| (s, r))).collect();
    let records: Vec<Vec<RepRecord>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(s, r)| run_replication(&designs[s].0, &designs[s].1, &plan.methods, &est, r))
            .collect()
    });

    let mut records = records.into_iter();
    let mut scenarios = Vec::with_capacity(designs.len());
    for (scenario, (config, truth)) in plan.scenarios.iter().zip(designs) {
        let mut per_method: Vec<Vec<RepRecord>> = vec![Vec::with_capacity(plan.reps); plan.methods.len()];
        for rep in records.by_ref().take(plan.reps) {
            for (slot, record) in per_method.iter_mut().zip(rep) {
                slot.push(record);
            }
        }
        let methods = plan
            .methods
            .iter()
            .zip(per_method)
            .map(|(&m, recs)| aggregate(m, truth.tau_true, config.n, recs))
            .collect();
        scenarios.push(ScenarioResult {
            name: scenario.name.clone(),
            config,
            tau_true: truth.tau_true,
            methods,
        });
    }
    Ok(BenchResult {
        master_seed: plan.master_seed,
        reps: plan.reps,
        level: plan.level,
        scenarios,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Markdown,
    Csv,
}

impl TableFormat {
    /// `.csv` selects CSV; anything else renders markdown.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => TableFormat::Csv,
            _ => TableFormat::Markdown,
        }
    }
}

fn fmt3(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| format!("{v:.3}"))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// One row per method, an MSE and a CP column per scenario, three decimals.
pub fn emit_table(result: &BenchResult, format: TableFormat) -> String {
    let mut methods: Vec<Method> = Vec::new();
    for s in &result.scenarios {
        for m in &s.methods {
            if !methods.contains(&m.method) {
                methods.push(m.method);
            }
        }
    }
    let cells = |m: Method| -> Vec<(String, String)> {
        result
            .scenarios
            .iter()
            .map(|s| {
                let r = s.methods.iter().find(|r| r.method == m);
                (fmt3(r.and_then(|r| r.mse)), fmt3(r.and_then(|r| r.cp)))
            })
            .collect()
    };
    let mut out = String::new();
    match format {
        TableFormat::Markdown => {
            out.push_str("| method |");
            for s in &result.scenarios {
                let _ = write!(out, " {0} MSE | {0} CP |", s.name);
            }
            out.push_str("\n|---|");
            out.push_str(&"---:|".repeat(2 * result.scenarios.len()));
            out.push('\n');
            for m in methods {
                let _ = write!(out, "| {} |", m.as_str().to_uppercase());
                for (mse, cp) in cells(m) {
                    let _ = write!(out, " {mse} | {cp} |");
                }
                out.push('\n');
            }
        }
        TableFormat::Csv => {
            out.push_str("method");
            for s in &result.scenarios {
                let _ = write!(out, ",{},{}", csv_field(&format!("{}_mse", s.name)), csv_field(&format!("{}_cp", s.name)));
            }
            out.push('\n');
            for m in methods {
                out.push_str(m.as_str());
                for (mse, cp) in cells(m) {
                    let _ = write!(out, ",{mse},{cp}");
                }
                out.push('\n');
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "scenarios": [{"name": "tiny", "n": 40, "p": 5, "s_theta": 2, "s_beta": 2}],
        "methods": ["sdr"],
        "reps": 10
    }"#;

    fn pointer_of(text: &str) -> (String, String) {
        match ExperimentPlan::from_json(text) {
            Err(SdrError::Schema { pointer, message }) => (pointer, message),
            other => panic!("expected a schema error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_plan_parses_with_defaults() {
        let plan = ExperimentPlan::from_json(MINIMAL).unwrap();
        assert_eq!(plan.reps, 10);
        assert_eq!(plan.methods, vec![Method::Sdr]);
        assert_eq!(plan.level, 0.95);
        assert_eq!(plan.scenarios[0].rho, 0.6);
        assert_eq!(plan.scenarios[0].r_squared, 0.5);
        assert!(!plan.scenarios[0].heteroskedastic);
    }

    #[test]
    fn zero_reps_rejected() {
        let (pointer, message) = pointer_of(&MINIMAL.replace("\"reps\": 10", "\"reps\": 0"));
        assert_eq!(pointer, "/reps");
        assert_eq!(message, "reps must be ≥ 1");
    }

    #[test]
    fn unknown_keys_reported_with_pointer() {
        let (pointer, message) = pointer_of(&MINIMAL.replace("\"s_beta\": 2", "\"s_beta\": 2, \"sbeta\": 3"));
        assert_eq!(pointer, "/scenarios/0/sbeta");
        assert!(message.contains("unknown field"), "{message}");
        let (pointer, _) = pointer_of(&MINIMAL.replace("\"reps\": 10", "\"reps\": 10, \"rep\": 3"));
        assert_eq!(pointer, "/rep");
    }

    #[test]
    fn type_errors_reported_with_pointer() {
        let (pointer, _) = pointer_of(&MINIMAL.replace("\"n\": 40", "\"n\": \"forty\""));
        assert_eq!(pointer, "/scenarios/0/n");
        let (pointer, _) = pointer_of(&MINIMAL.replace("[\"sdr\"]", "[\"sdr\", \"ols\"]"));
        assert_eq!(pointer, "/methods/1");
    }

    #[test]
    fn structural_invariants_enforced() {
        assert_eq!(pointer_of(&MINIMAL.replace("[\"sdr\"]", "[]")).0, "/methods");
        assert_eq!(pointer_of(&MINIMAL.replace("[\"sdr\"]", "[\"sdr\", \"sdr\"]")).0, "/methods/1");
        let twice = MINIMAL.replace(
            r#"{"name": "tiny", "n": 40, "p": 5, "s_theta": 2, "s_beta": 2}"#,
            r#"{"name": "tiny", "n": 40, "p": 5, "s_theta": 2, "s_beta": 2},
               {"name": "tiny", "n": 60, "p": 5, "s_theta": 2, "s_beta": 2}"#,
        );
        assert_eq!(pointer_of(&twice).0, "/scenarios/1/name");
        assert_eq!(pointer_of(&MINIMAL.replace("\"s_theta\": 2", "\"s_theta\": 9")).0, "/scenarios/0");
        assert_eq!(pointer_of(&MINIMAL.replace("\"reps\": 10", "\"reps\": 10, \"level\": 1.5")).0, "/estimator");
    }

    #[test]
    fn json_pointer_escapes_keys() {
        let text = r#"{"scenarios": [], "methods": ["sdr"], "a/b~c": 1}"#;
        assert_eq!(pointer_of(text).0, "/a~1b~0c");
    }

    fn record(rep: u64, tau: Option<f64>, covered: Option<bool>) -> RepRecord {
        RepRecord {
            rep,
            tau_hat: tau,
            v_hat: tau.map(|_| 2.0),
            ci_lower: None,
            ci_upper: None,
            covered,
            diagnostics: None,
            error: tau.is_none().then(|| "failed".to_string()),
        }
    }

    #[test]
    fn aggregate_by_hand() {
        let recs = vec![
            record(0, Some(0.5), Some(true)),
            record(1, None, None),
            record(2, Some(-1.0), Some(false)),
            record(3, Some(0.0), Some(true)),
        ];
        let r = aggregate(Method::Sdr, 0.0, 100, recs);
        assert_eq!(r.completed, 3);
        assert_eq!(r.failures, 1);
        let sq = [0.25, 1.0, 0.0];
        let mse: f64 = sq.iter().sum::<f64>() / 3.0;
        assert!((r.mse.unwrap() - mse).abs() < 1e-15);
        assert!((r.cp.unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let sd = (sq.iter().map(|s| (s - mse).powi(2)).sum::<f64>() / 2.0).sqrt();
        assert!((r.mc_se_mse.unwrap() - sd / 3f64.sqrt()).abs() < 1e-15);
        assert!((r.mc_se_cp.unwrap() - (2.0 / 9.0 / 3.0f64).sqrt()).abs() < 1e-15);
        assert!((r.mean_v_hat_over_n.unwrap() - 0.02).abs() < 1e-15);
        assert!((r.bias.unwrap() - (-0.5 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn single_replication_aggregate() {
        let r = aggregate(Method::Aipw, 0.0, 10, vec![record(0, Some(0.3), Some(false))]);
        assert!((r.mse.unwrap() - 0.09).abs() < 1e-15);
        assert_eq!(r.cp, Some(0.0));
        assert_eq!(r.mc_se_mse, Some(0.0));
        assert_eq!(r.mc_se_cp, Some(0.0));
    }

    #[test]
    fn markdown_cell_rounding() {
        let mut cell = aggregate(Method::Sdr, 0.0, 10, vec![record(0, Some(0.1), Some(true))]);
        cell.mse = Some(0.0415);
        cell.cp = Some(0.9521);
        let result = BenchResult {
            master_seed: 0,
            reps: 1,
            level: 0.95,
            scenarios: vec![ScenarioResult {
                name: "base".into(),
                config: ScenarioConfig::baseline(),
                tau_true: 0.0,
                methods: vec![cell],
            }],
        };
        let md = emit_table(&result, TableFormat::Markdown);
        assert!(md.contains("| SDR | 0.042 | 0.952 |"), "{md}");
        let csv = emit_table(&result, TableFormat::Csv);
        assert_eq!(csv, "method,base_mse,base_cp\nsdr,0.042,0.952\n");
    }

    #[test]
    fn table_format_from_extension() {
        assert_eq!(TableFormat::from_path(Path::new("t.CSV")), TableFormat::Csv);
        assert_eq!(TableFormat::from_path(Path::new("t.md")), TableFormat::Markdown);
        assert_eq!(TableFormat::from_path(Path::new("table")), TableFormat::Markdown);
    }
}

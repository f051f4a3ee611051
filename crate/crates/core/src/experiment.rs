//! Experiment drivers shared by the command line and the acceptance checks.

use std::time::Duration;

use log::info;
use serde::{Deserialize, Serialize};

use crate::dataio::{BenchRow, RunRecord};
use crate::error::{Error, Result};
use crate::flows::{add_noise, synthetic_flow, NoiseParams, SyntheticParams};
use crate::graph::{EdgeFlow, FlowNetwork};
use crate::metrics::{score_scope, MetricReport, Scope};
use crate::placement::{place, Algorithm, Budget, PlacementRequest, RecursiveRoute, SensorPlan};
use crate::prediction::{predict_flows, PredictionProblem, DEFAULT_LAMBDA};

/// Which flow drives sensor selection. Prediction always reads the true flow at the sensors
/// and is scored against the true flow.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectOn {
    Truth,
    Synthetic,
    Noisy,
}

impl SelectOn {
    pub fn name(self) -> &'static str {
        match self {
            SelectOn::Truth => "truth",
            SelectOn::Synthetic => "synthetic",
            SelectOn::Noisy => "noisy",
        }
    }
}

impl std::str::FromStr for SelectOn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "truth" => Ok(SelectOn::Truth),
            "synthetic" => Ok(SelectOn::Synthetic),
            "noisy" => Ok(SelectOn::Noisy),
            other => Err(Error::InvalidParameter(format!("unknown selection flow {other:?}"))),
        }
    }
}

/// A full run description; serialized next to the results so runs can be repeated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub network: String,
    pub network_path: Option<String>,
    pub flow_path: Option<String>,
    pub algorithms: Vec<Algorithm>,
    pub budgets: Vec<Budget>,
    pub seeds: Vec<u64>,
    pub lambda: f64,
    pub select_on: SelectOn,
    pub noise_ratios: Vec<f64>,
    pub synthetic: SyntheticParams,
    pub scopes: Vec<Scope>,
    pub time_limit_s: Option<f64>,
    pub route: RecursiveRoute,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: "place".into(),
            network: String::new(),
            network_path: None,
            flow_path: None,
            algorithms: vec![Algorithm::LazyRecursive],
            budgets: default_budgets(),
            seeds: vec![0],
            lambda: DEFAULT_LAMBDA,
            select_on: SelectOn::Truth,
            noise_ratios: vec![0.0],
            synthetic: SyntheticParams::default(),
            scopes: vec![Scope::All, Scope::Unlabeled],
            time_limit_s: None,
            route: RecursiveRoute::Node,
        }
    }
}

/// 1%, 2%, ..., 20% of the candidates.
pub fn default_budgets() -> Vec<Budget> {
    (1..=20).map(|p| Budget::Fraction(p as f64 / 100.0)).collect()
}

/// The flow placers see for a given selection mode.
pub fn selection_flow(
    net: &FlowNetwork,
    truth: &EdgeFlow,
    select_on: SelectOn,
    noise: NoiseParams,
    synthetic: SyntheticParams,
) -> Result<EdgeFlow> {
    match select_on {
        SelectOn::Truth => Ok(truth.clone()),
        SelectOn::Noisy => add_noise(truth, noise),
        SelectOn::Synthetic => synthetic_flow(&net.incidence(), synthetic),
    }
}

/// Prediction from the true flows at `sensors`.
pub fn predict_from_sensors(net: &FlowNetwork, truth: &EdgeFlow, sensors: &[usize], lambda: f64) -> Result<EdgeFlow> {
    let b = net.incidence();
    predict_flows(&PredictionProblem::from_flow(&b, sensors, truth, lambda)?)
}

pub fn evaluate_plan(
    net: &FlowNetwork,
    truth: &EdgeFlow,
    plan: &SensorPlan,
    lambda: f64,
    scopes: &[Scope],
) -> Result<Vec<MetricReport>> {
    let pred = predict_from_sensors(net, truth, &plan.sensors, lambda)?;
    scopes
        .iter()
        .map(|&scope| score_scope(pred.as_slice(), truth.as_slice(), &plan.sensors, scope))
        .collect()
}

/// One (algorithm, budget, seed) cell: select on `selection`, predict and score on `truth`.
#[allow(clippy::too_many_arguments)]
pub fn run_cell(
    net: &FlowNetwork,
    truth: &EdgeFlow,
    selection: &EdgeFlow,
    algorithm: Algorithm,
    budget: Budget,
    seed: u64,
    config: &RunConfig,
    noise_r: Option<f64>,
) -> Result<RunRecord> {
    let req = PlacementRequest::new(net, selection, budget, algorithm)
        .seed(seed)
        .lambda(config.lambda)
        .route(config.route)
        .time_limit(config.time_limit_s.map(Duration::from_secs_f64));
    let plan = place(&req)?;
    info!(
        "{} {} k={} seed={} in {:.1} ms",
        net.name(),
        algorithm,
        plan.sensors.len(),
        seed,
        plan.elapsed_ms
    );
    let reports = evaluate_plan(net, truth, &plan, config.lambda, &config.scopes)?;
    Ok(RunRecord {
        network: net.name().to_string(),
        seed,
        candidates: req.candidates.len(),
        select_on: config.select_on.name().to_string(),
        noise_r,
        plan,
        reports,
    })
}

/// Every (noise ratio, algorithm, budget, seed) cell of `config`. Noise ratios only matter
/// when selecting on noisy flows; the noise seed is the cell seed.
pub fn run_grid(net: &FlowNetwork, truth: &EdgeFlow, config: &RunConfig) -> Result<Vec<RunRecord>> {
    let ratios: Vec<Option<f64>> = match config.select_on {
        SelectOn::Noisy => config.noise_ratios.iter().map(|&r| Some(r)).collect(),
        _ => vec![None],
    };
    let mut records = Vec::new();
    for &r in &ratios {
        for &seed in &config.seeds {
            let selection = selection_flow(
                net,
                truth,
                config.select_on,
                NoiseParams {
                    r: r.unwrap_or(0.0),
                    seed,
                },
                config.synthetic,
            )?;
            for &algorithm in &config.algorithms {
                for &budget in &config.budgets {
                    records.push(run_cell(net, truth, &selection, algorithm, budget, seed, config, r)?);
                }
            }
        }
    }
    Ok(records)
}

/// Greedy in the three evaluation modes at one budget.
pub fn run_bench(
    net: &FlowNetwork,
    flow: &EdgeFlow,
    budget: Budget,
    modes: &[Algorithm],
    lambda: f64,
    time_limit: Option<Duration>,
    route: RecursiveRoute,
) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &mode in modes {
        let req = PlacementRequest::new(net, flow, budget, mode)
            .lambda(lambda)
            .time_limit(time_limit)
            .route(route)
            .full_trace(false);
        let k = budget.resolve(req.candidates.len())?;
        let plan = place(&req)?;
        info!(
            "bench {} {}: {} of {} picks in {:.1} ms, {} evaluations",
            net.name(),
            mode,
            plan.sensors.len(),
            k,
            plan.elapsed_ms,
            plan.evaluations
        );
        rows.push(BenchRow::from_plan(net.name(), k, &plan));
    }
    Ok(rows)
}

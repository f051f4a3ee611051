//! Sensor selection strategies.
//!
//! Every placer returns `k` distinct candidate edges in selection order together with the
//! squared target error after each pick. Ties are always broken towards the lowest edge id.

mod baselines;
mod bisection;
mod exhaustive;
mod greedy;
mod rrqr;

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::Ordering as AtomicOrdering;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{validate_ids, EdgeFlow, FlowNetwork, IncidenceMatrix};
use crate::prediction::{predict_flows, squared_error, OpCounter, OpCounts, PredictionProblem, DEFAULT_LAMBDA};

pub use bisection::recursive_bisection_order;
pub use exhaustive::EXHAUSTIVE_LIMIT;
pub use rrqr::{rrqr_order, RrqrSelection};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Greedy,
    LazyGreedy,
    LazyRecursive,
    Random,
    MaxFlow,
    RecursiveBisection,
    Rrqr,
    Exhaustive,
}

impl Algorithm {
    pub const ALL: [Algorithm; 8] = [
        Algorithm::Greedy,
        Algorithm::LazyGreedy,
        Algorithm::LazyRecursive,
        Algorithm::Random,
        Algorithm::MaxFlow,
        Algorithm::RecursiveBisection,
        Algorithm::Rrqr,
        Algorithm::Exhaustive,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Greedy => "greedy",
            Algorithm::LazyGreedy => "lazy_greedy",
            Algorithm::LazyRecursive => "lazy_recursive",
            Algorithm::Random => "random",
            Algorithm::MaxFlow => "max_flow",
            Algorithm::RecursiveBisection => "recursive_bisection",
            Algorithm::Rrqr => "rrqr",
            Algorithm::Exhaustive => "exhaustive",
        }
    }

    /// Whether the placer looks at flow values at all.
    pub fn uses_flows(self) -> bool {
        !matches!(
            self,
            Algorithm::Random | Algorithm::RecursiveBisection | Algorithm::Rrqr
        )
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace(['-', '+'], "_");
        let alg = match norm.as_str() {
            "greedy" | "brute" => Algorithm::Greedy,
            "lazy" | "lazy_greedy" => Algorithm::LazyGreedy,
            "lazy_recursive" | "recursive" => Algorithm::LazyRecursive,
            "random" => Algorithm::Random,
            "max_flow" | "maxflow" => Algorithm::MaxFlow,
            "rb" | "recursive_bisection" | "bisection" => Algorithm::RecursiveBisection,
            "rrqr" => Algorithm::Rrqr,
            "exhaustive" => Algorithm::Exhaustive,
            _ => return Err(Error::InvalidParameter(format!("unknown algorithm {s:?}"))),
        };
        Ok(alg)
    }
}

/// How the lazy recursive placer updates the prediction for one extra sensor: the rank-two
/// Woodbury correction of the edge-space Gram matrix, or the rank-one (rank-two at bridges)
/// correction of the node-space potential system. Both give the same predictor; the node
/// route stays accurate for tiny `lambda`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecursiveRoute {
    Edge,
    #[default]
    Node,
}

impl fmt::Display for RecursiveRoute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RecursiveRoute::Edge => "edge",
            RecursiveRoute::Node => "node",
        })
    }
}

impl FromStr for RecursiveRoute {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "edge" | "woodbury" => Ok(RecursiveRoute::Edge),
            "node" | "potential" => Ok(RecursiveRoute::Node),
            other => Err(Error::InvalidParameter(format!("unknown route {other:?}"))),
        }
    }
}

/// Number of sensors, absolute or as a fraction of the candidate set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Budget {
    Count(usize),
    Fraction(f64),
}

impl Budget {
    pub fn resolve(self, candidates: usize) -> Result<usize> {
        let k = match self {
            Budget::Count(k) => k,
            Budget::Fraction(frac) => {
                if !(frac > 0.0 && frac <= 1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "budget fraction {frac} outside (0, 1]"
                    )));
                }
                ((frac * candidates as f64).round() as usize).max(1)
            }
        };
        if k == 0 {
            return Err(Error::EmptyBudget);
        }
        if k > candidates {
            return Err(Error::BudgetTooLarge { k, candidates });
        }
        Ok(k)
    }
}

impl FromStr for Budget {
    type Err = Error;

    /// `"0.1"` and `"10%"` are fractions, `"25"` is a count.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::InvalidParameter(format!("bad budget {s:?}"));
        if let Some(pct) = s.strip_suffix('%') {
            let v: f64 = pct.trim().parse().map_err(|_| bad())?;
            return Ok(Budget::Fraction(v / 100.0));
        }
        if s.contains('.') || s.contains('e') {
            return Ok(Budget::Fraction(s.parse().map_err(|_| bad())?));
        }
        Ok(Budget::Count(s.parse().map_err(|_| bad())?))
    }
}

/// Everything a placer needs. Candidates and targets default to every edge.
#[derive(Clone, Debug)]
pub struct PlacementRequest<'a> {
    pub net: &'a FlowNetwork,
    /// Flow used to drive selection: ground truth or a proxy.
    pub reference: &'a EdgeFlow,
    pub candidates: Vec<usize>,
    pub targets: Vec<usize>,
    pub budget: Budget,
    pub lambda: f64,
    pub seed: u64,
    pub algorithm: Algorithm,
    pub time_limit: Option<Duration>,
    /// Record the error after every pick rather than only the last one.
    pub full_trace: bool,
    /// Incremental update used by the lazy recursive placer.
    pub route: RecursiveRoute,
}

impl<'a> PlacementRequest<'a> {
    pub fn new(net: &'a FlowNetwork, reference: &'a EdgeFlow, budget: Budget, algorithm: Algorithm) -> Self {
        let all: Vec<usize> = (0..net.edge_count()).collect();
        Self {
            net,
            reference,
            candidates: all.clone(),
            targets: all,
            budget,
            lambda: DEFAULT_LAMBDA,
            seed: 0,
            algorithm,
            time_limit: None,
            full_trace: true,
            route: RecursiveRoute::Node,
        }
    }

    pub fn candidates(mut self, ids: Vec<usize>) -> Self {
        self.candidates = ids;
        self
    }

    pub fn targets(mut self, ids: Vec<usize>) -> Self {
        self.targets = ids;
        self
    }

    pub fn lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn algorithm(mut self, algorithm: Algorithm) -> Self {
        self.algorithm = algorithm;
        self
    }

    pub fn time_limit(mut self, limit: Option<Duration>) -> Self {
        self.time_limit = limit;
        self
    }

    pub fn full_trace(mut self, on: bool) -> Self {
        self.full_trace = on;
        self
    }

    pub fn route(mut self, route: RecursiveRoute) -> Self {
        self.route = route;
        self
    }

    fn validate(&self) -> Result<usize> {
        let m = self.net.edge_count();
        self.reference.check_len(m)?;
        validate_ids(&self.candidates, m)?;
        validate_ids(&self.targets, m)?;
        crate::prediction::check_lambda(self.lambda)?;
        self.budget.resolve(self.candidates.len())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorPlan {
    pub algorithm: Algorithm,
    pub sensors: Vec<usize>,
    /// `||f_hat_T - f_T||^2` on the request targets after each pick (only the last one when
    /// full traces are off).
    pub error_trace: Vec<f64>,
    pub elapsed_ms: f64,
    /// Predictor evaluations performed while selecting.
    pub evaluations: usize,
    /// Set when a time limit stopped the search before `k` picks.
    pub truncated: bool,
    #[serde(default)]
    pub ops: OpCounts,
}

impl SensorPlan {
    pub fn final_error(&self) -> Option<f64> {
        self.error_trace.last().copied()
    }
}

/// Runs the requested placer.
pub fn place(req: &PlacementRequest<'_>) -> Result<SensorPlan> {
    let k = req.validate()?;
    let start = Instant::now();
    let mut plan = match req.algorithm {
        Algorithm::Greedy => greedy::greedy_place(req, k)?,
        Algorithm::LazyGreedy | Algorithm::LazyRecursive => greedy::lazy_greedy_place(req, k)?,
        Algorithm::Exhaustive => exhaustive::exhaustive_place(req, k)?,
        Algorithm::Random => baselines::with_trace(req, baselines::random_order(req, k))?,
        Algorithm::MaxFlow => baselines::with_trace(req, baselines::max_flow_order(req, k))?,
        Algorithm::RecursiveBisection => {
            baselines::with_trace(req, bisection::recursive_bisection_order(req.net, &req.candidates, k))?
        }
        Algorithm::Rrqr => {
            let sel = rrqr::rrqr_order(req.net, &req.candidates, k, req.seed);
            baselines::with_trace(req, sel.sensors)?
        }
    };
    plan.elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(plan)
}

/// Greedy objective: squared error on the targets of the prediction from a sensor set, with
/// sensor values read off the reference flow.
pub(crate) struct Objective<'a> {
    pub incidence: IncidenceMatrix,
    pub reference: &'a [f64],
    pub targets: &'a [usize],
    pub is_target: Vec<bool>,
    pub lambda: f64,
    /// One factorization and one solve per nontrivial from-scratch prediction.
    pub counter: OpCounter,
}

impl<'a> Objective<'a> {
    pub fn new(req: &'a PlacementRequest<'_>) -> Self {
        let mut is_target = vec![false; req.net.edge_count()];
        for &t in &req.targets {
            is_target[t] = true;
        }
        Self {
            incidence: req.net.incidence(),
            reference: req.reference.as_slice(),
            targets: &req.targets,
            is_target,
            lambda: req.lambda,
            counter: OpCounter::default(),
        }
    }

    /// From-scratch error of the sensor set.
    pub fn error(&self, sensors: &[usize]) -> Result<f64> {
        let observed: Vec<f64> = sensors.iter().map(|&s| self.reference[s]).collect();
        if sensors.len() < self.incidence.ncols() && observed.iter().any(|&v| v != 0.0) {
            self.counter.factorizations.fetch_add(1, AtomicOrdering::Relaxed);
            self.counter.solves.fetch_add(1, AtomicOrdering::Relaxed);
        }
        let problem = PredictionProblem::new(&self.incidence, sensors.to_vec(), observed, self.lambda)?;
        let pred = predict_flows(&problem)?;
        Ok(squared_error(pred.as_slice(), self.reference, self.targets))
    }
}

/// Rounds to ten significant digits so that two evaluation routes agreeing to ~1e-10 compare
/// equal and fall through to the edge-id tie-break.
pub(crate) fn snap(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let exp = x.abs().log10().floor() as i32 - 9;
    let scale = 10f64.powi(exp);
    (x / scale).round() * scale
}

/// Errors of every prefix of `sensors` (or just the full set), evaluated from scratch.
pub fn prefix_errors(req: &PlacementRequest<'_>, sensors: &[usize]) -> Result<Vec<f64>> {
    use rayon::prelude::*;
    let objective = Objective::new(req);
    if req.full_trace {
        (1..=sensors.len())
            .into_par_iter()
            .map(|len| objective.error(&sensors[..len]))
            .collect()
    } else if sensors.is_empty() {
        Ok(Vec::new())
    } else {
        Ok(vec![objective.error(sensors)?])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn budget_parsing_and_resolution() {
        assert_eq!("0.10".parse::<Budget>().unwrap(), Budget::Fraction(0.10));
        assert_eq!("10%".parse::<Budget>().unwrap(), Budget::Fraction(0.10));
        assert_eq!("7".parse::<Budget>().unwrap(), Budget::Count(7));
        assert_eq!(Budget::Fraction(0.1).resolve(914).unwrap(), 91);
        assert!(matches!(Budget::Count(5).resolve(4), Err(Error::BudgetTooLarge { .. })));
        assert!(Budget::Count(0).resolve(4).is_err());
        assert!(Budget::Fraction(1.5).resolve(4).is_err());
    }

    #[test]
    fn algorithm_names_round_trip() {
        for alg in Algorithm::ALL {
            assert_eq!(alg.name().parse::<Algorithm>().unwrap(), alg);
        }
        assert_eq!("lazy+recursive".parse::<Algorithm>().unwrap(), Algorithm::LazyRecursive);
        assert!("nope".parse::<Algorithm>().is_err());
    }

    #[test]
    fn snapping_merges_close_values() {
        assert_eq!(snap(1.000_000_000_01), snap(1.0));
        assert_ne!(snap(1.000_01), snap(1.0));
        assert_eq!(snap(0.0), 0.0);
    }

    #[test]
    fn every_placer_returns_k_distinct_candidates() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let net = instances::random_connected(&mut rng, 9, 20);
        let flow = EdgeFlow::new((0..20).map(|_| rng.random_range(0.0..30.0)).collect());
        let candidates: Vec<usize> = (0..20).filter(|e| e % 3 != 1).collect();
        for alg in Algorithm::ALL {
            let req = PlacementRequest::new(&net, &flow, Budget::Count(3), alg)
                .candidates(candidates.clone())
                .seed(5);
            let plan = place(&req).unwrap();
            assert_eq!(plan.sensors.len(), 3, "{alg}");
            let mut sorted = plan.sensors.clone();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(sorted.len(), 3, "{alg}");
            assert!(plan.sensors.iter().all(|s| candidates.contains(s)), "{alg}");
            assert_eq!(plan.error_trace.len(), 3, "{alg}");
            assert_eq!(place(&req).unwrap().sensors, plan.sensors, "{alg} not deterministic");
        }
    }

    #[test]
    fn rejects_oversized_budget() {
        let net = instances::triangle();
        let flow = EdgeFlow::new(vec![1.0, 2.0, 3.0]);
        for alg in Algorithm::ALL {
            let req = PlacementRequest::new(&net, &flow, Budget::Count(4), alg);
            assert!(matches!(place(&req), Err(Error::BudgetTooLarge { .. })));
        }
    }
}

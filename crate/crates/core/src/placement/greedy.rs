//! Greedy selection: brute force, lazy (CELF-style heap) and lazy with Woodbury evaluation.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::atomic::{AtomicBool, Ordering as AtomicOrdering};
use std::time::Instant;

use rayon::prelude::*;

use super::{snap, Algorithm, Objective, PlacementRequest, RecursiveRoute, SensorPlan};
use crate::error::Result;
use crate::graph::EdgeFlow;
use crate::potential::{build_potential_cache, PotentialCache};
use crate::prediction::{build_cache, OpCounts, PredictorCache};

/// Picks the candidate with the smallest error, lowest id on ties.
fn argmin(scored: impl Iterator<Item = (usize, f64)>) -> Option<(usize, f64)> {
    scored.min_by(|a, b| snap(a.1).total_cmp(&snap(b.1)).then(a.0.cmp(&b.0)))
}

struct Deadline {
    at: Option<Instant>,
    hit: AtomicBool,
}

impl Deadline {
    fn new(req: &PlacementRequest<'_>) -> Self {
        Self {
            at: req.time_limit.map(|d| Instant::now() + d),
            hit: AtomicBool::new(false),
        }
    }

    fn expired(&self) -> bool {
        if self.hit.load(AtomicOrdering::Relaxed) {
            return true;
        }
        match self.at {
            Some(at) if Instant::now() >= at => {
                self.hit.store(true, AtomicOrdering::Relaxed);
                true
            }
            _ => false,
        }
    }
}

/// Exhaustive per-step greedy: every remaining candidate is re-evaluated from scratch.
pub(super) fn greedy_place(req: &PlacementRequest<'_>, k: usize) -> Result<SensorPlan> {
    let objective = Objective::new(req);
    let deadline = Deadline::new(req);
    let mut sensors: Vec<usize> = Vec::with_capacity(k);
    let mut chosen = vec![false; req.net.edge_count()];
    let mut trace = Vec::with_capacity(k);
    let mut evaluations = 0;

    for _ in 0..k {
        if deadline.expired() {
            break;
        }
        let remaining: Vec<usize> = req.candidates.iter().copied().filter(|&c| !chosen[c]).collect();
        let scored: Vec<Option<(usize, f64)>> = remaining
            .par_iter()
            .map(|&c| {
                if deadline.expired() {
                    return Ok(None);
                }
                let mut trial = sensors.clone();
                trial.push(c);
                objective.error(&trial).map(|e| Some((c, e)))
            })
            .collect::<Result<_>>()?;
        evaluations += scored.iter().flatten().count();
        if deadline.expired() {
            break;
        }
        let (best, err) = argmin(scored.into_iter().flatten()).expect("k <= |C|");
        chosen[best] = true;
        sensors.push(best);
        trace.push(err);
    }

    Ok(SensorPlan {
        algorithm: Algorithm::Greedy,
        truncated: sensors.len() < k,
        sensors,
        error_trace: trace,
        elapsed_ms: 0.0,
        evaluations,
        ops: objective.counter.snapshot(),
    })
}

/// A candidate with the error reduction it offered when last evaluated. Reductions only
/// shrink as sensors are added when returns diminish, so a stale entry is an optimistic bound.
#[derive(Debug)]
struct HeapEntry {
    edge: usize,
    cached_error: f64,
    benefit: f64,
    stamp: usize,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for HeapEntry {}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapEntry {
    // BinaryHeap is a max-heap: the largest benefit, then lowest id, must compare greatest.
    fn cmp(&self, other: &Self) -> Ordering {
        snap(self.benefit)
            .total_cmp(&snap(other.benefit))
            .then(other.edge.cmp(&self.edge))
    }
}

/// How a single candidate's error is computed in the lazy loop.
/// The two incremental caches share this interface.
trait RemovalCache: Sized {
    fn targets(&self) -> &[usize];
    fn position(&self, edge: usize) -> Option<usize>;
    fn evaluate_removal(&self, j: usize, observed: f64) -> Result<Vec<f64>>;
    fn commit_removal(&self, j: usize, observed: f64) -> Result<Self>;
}

macro_rules! removal_cache {
    ($ty:ident) => {
        impl RemovalCache for $ty<'_> {
            fn targets(&self) -> &[usize] {
                $ty::targets(self)
            }
            fn position(&self, edge: usize) -> Option<usize> {
                $ty::position(self, edge)
            }
            fn evaluate_removal(&self, j: usize, observed: f64) -> Result<Vec<f64>> {
                $ty::evaluate_removal(self, j, observed)
            }
            fn commit_removal(&self, j: usize, observed: f64) -> Result<Self> {
                $ty::commit_removal(self, j, observed)
            }
        }
    };
}
removal_cache!(PredictorCache);
removal_cache!(PotentialCache);

fn removal_error<C: RemovalCache>(objective: &Objective<'_>, cache: &C, candidate: usize) -> Result<f64> {
    let j = cache.position(candidate).expect("candidate is unlabeled");
    let pred = cache.evaluate_removal(j, objective.reference[candidate])?;
    let err = cache
        .targets()
        .iter()
        .enumerate()
        .filter(|&(p, _)| p != j)
        .zip(&pred)
        .filter(|((_, &e), _)| objective.is_target[e])
        .map(|((_, &e), &v)| (v - objective.reference[e]).powi(2))
        .sum();
    Ok(err)
}

fn commit<C: RemovalCache>(objective: &Objective<'_>, cache: &mut C, candidate: usize) -> Result<()> {
    let j = cache.position(candidate).expect("candidate is unlabeled");
    *cache = cache.commit_removal(j, objective.reference[candidate])?;
    Ok(())
}

enum Evaluator<'r, 'b> {
    Scratch(&'r Objective<'r>),
    Edge(&'r Objective<'r>, PredictorCache<'b>),
    Node(&'r Objective<'r>, PotentialCache<'b>),
}

impl Evaluator<'_, '_> {
    fn error(&self, sensors: &[usize], candidate: usize) -> Result<f64> {
        match self {
            Evaluator::Scratch(objective) => {
                let mut trial = sensors.to_vec();
                trial.push(candidate);
                objective.error(&trial)
            }
            Evaluator::Edge(objective, cache) => removal_error(objective, cache, candidate),
            Evaluator::Node(objective, cache) => removal_error(objective, cache, candidate),
        }
    }

    fn commit(&mut self, candidate: usize) -> Result<()> {
        match self {
            Evaluator::Scratch(_) => Ok(()),
            Evaluator::Edge(objective, cache) => commit(objective, cache, candidate),
            Evaluator::Node(objective, cache) => commit(objective, cache, candidate),
        }
    }

    fn ops(&self) -> OpCounts {
        match self {
            Evaluator::Scratch(objective) => objective.counter.snapshot(),
            Evaluator::Edge(_, cache) => cache.counts(),
            Evaluator::Node(_, cache) => cache.counts(),
        }
    }
}

/// Lazy greedy. All candidates are scored once up front; afterwards only the heap top is
/// re-evaluated, and it is committed as soon as a freshly evaluated entry surfaces on top.
/// The objective is not submodular, so this can differ from brute-force greedy.
pub(super) fn lazy_greedy_place(req: &PlacementRequest<'_>, k: usize) -> Result<SensorPlan> {
    let objective = Objective::new(req);
    let incidence = objective.incidence.clone();
    let recursive = req.algorithm == Algorithm::LazyRecursive;
    let m = req.net.edge_count();
    let all: Vec<usize> = (0..m).collect();
    let mut evaluator = match (recursive, req.route) {
        (false, _) => Evaluator::Scratch(&objective),
        (true, RecursiveRoute::Edge) => Evaluator::Edge(
            &objective,
            build_cache(&incidence, &all, &EdgeFlow::zeros(m), req.lambda)?,
        ),
        (true, RecursiveRoute::Node) => Evaluator::Node(
            &objective,
            build_potential_cache(&incidence, &all, &EdgeFlow::zeros(m), req.lambda)?,
        ),
    };
    let deadline = Deadline::new(req);

    let mut sensors: Vec<usize> = Vec::with_capacity(k);
    let mut trace = Vec::with_capacity(k);
    // error of the current sensor set; with no sensors the prediction is zero
    let mut base: f64 = req.targets.iter().map(|&t| objective.reference[t].powi(2)).sum();
    let initial: Vec<HeapEntry> = req
        .candidates
        .par_iter()
        .map(|&c| {
            evaluator.error(&sensors, c).map(|cached_error| HeapEntry {
                edge: c,
                cached_error,
                benefit: base - cached_error,
                stamp: 0,
            })
        })
        .collect::<Result<_>>()?;
    let mut evaluations = initial.len();
    let mut heap: BinaryHeap<HeapEntry> = initial.into_iter().collect();

    for iteration in 0..k {
        if deadline.expired() {
            break;
        }
        loop {
            let mut top = heap.pop().expect("k <= |C|");
            if top.stamp == iteration {
                evaluator.commit(top.edge)?;
                sensors.push(top.edge);
                trace.push(top.cached_error);
                base = top.cached_error;
                break;
            }
            top.cached_error = evaluator.error(&sensors, top.edge)?;
            top.benefit = base - top.cached_error;
            top.stamp = iteration;
            evaluations += 1;
            heap.push(top);
        }
    }

    let ops = evaluator.ops();
    drop(evaluator);
    Ok(SensorPlan {
        algorithm: req.algorithm,
        truncated: sensors.len() < k,
        sensors,
        error_trace: trace,
        elapsed_ms: 0.0,
        evaluations,
        ops,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{place, Budget};
    use super::*;
    use crate::graph::EdgeFlow;
    use crate::instances;
    use crate::prediction::EDGE_SOLVES_PER_EVALUATION;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn triangle_selection_doubles_error() {
        let net = instances::triangle();
        let c = 3.0;
        let flow = EdgeFlow::new(vec![c, 0.0, 0.0]);
        let req = PlacementRequest::new(&net, &flow, Budget::Count(1), Algorithm::Greedy).candidates(vec![0]);
        let objective = Objective::new(&req);
        let before = objective.error(&[]).unwrap();
        let after = objective.error(&[0]).unwrap();
        assert!((before - c * c).abs() <= 1e-3 * c * c);
        assert!((after - 2.0 * c * c).abs() <= 1e-3 * c * c);
        let plan = place(&req).unwrap();
        assert!((plan.error_trace[0] - 2.0 * c * c).abs() <= 1e-3 * c * c);
    }

    #[test]
    fn each_greedy_pick_is_the_argmin() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let net = instances::random_connected(&mut rng, 8, 16);
        let flow = EdgeFlow::new((0..16).map(|_| rng.random_range(0.0..40.0)).collect());
        let req = PlacementRequest::new(&net, &flow, Budget::Count(2), Algorithm::Greedy);
        let plan = place(&req).unwrap();
        let objective = Objective::new(&req);
        for step in 0..2 {
            let prefix = &plan.sensors[..step];
            let best = (0..16)
                .filter(|c| !prefix.contains(c))
                .map(|c| {
                    let mut s = prefix.to_vec();
                    s.push(c);
                    (c, objective.error(&s).unwrap())
                })
                .min_by(|a, b| snap(a.1).total_cmp(&snap(b.1)).then(a.0.cmp(&b.0)))
                .unwrap();
            assert_eq!(best.0, plan.sensors[step]);
            assert!((best.1 - plan.error_trace[step]).abs() <= 1e-12 * (1.0 + best.1));
        }
        assert_eq!(plan.evaluations, 16 + 15);
    }

    #[test]
    fn lazy_matches_greedy_when_benefits_are_static() {
        // Disjoint single edges: each sensor only fixes its own edge, so benefits never change.
        let net = crate::graph::FlowNetwork::new("pairs", 8, [(0, 1), (2, 3), (4, 5), (6, 7)]).unwrap();
        let flow = EdgeFlow::new(vec![4.0, 9.0, 1.0, 6.0]);
        let greedy = place(&PlacementRequest::new(&net, &flow, Budget::Count(3), Algorithm::Greedy)).unwrap();
        for alg in [Algorithm::LazyGreedy, Algorithm::LazyRecursive] {
            let lazy = place(&PlacementRequest::new(&net, &flow, Budget::Count(3), alg)).unwrap();
            assert_eq!(lazy.sensors, greedy.sensors);
            assert!(lazy.evaluations < greedy.evaluations);
        }
        assert_eq!(greedy.sensors, vec![1, 3, 0]);
    }

    fn assert_lazy_variants_agree(lambda: f64, route: RecursiveRoute, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..10 {
            let n = rng.random_range(6..15);
            let m = rng.random_range(n..3 * n);
            let net = instances::random_connected(&mut rng, n, m);
            let flow = EdgeFlow::new((0..m).map(|_| rng.random_range(0.0..100.0)).collect());
            let k = (m / 4).max(1);
            let req = PlacementRequest::new(&net, &flow, Budget::Count(k), Algorithm::LazyGreedy)
                .lambda(lambda)
                .route(route);
            let lazy = place(&req).unwrap();
            let rec = place(&req.clone().algorithm(Algorithm::LazyRecursive)).unwrap();
            assert_eq!(lazy.sensors, rec.sensors);
            assert_eq!(lazy.evaluations, rec.evaluations);
            for (a, b) in lazy.error_trace.iter().zip(&rec.error_trace) {
                assert!((a - b).abs() <= 1e-8 * (1.0 + a.abs()), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn lazy_variants_agree_node_route() {
        assert_lazy_variants_agree(1e-6, RecursiveRoute::Node, 31);
        assert_lazy_variants_agree(1e-2, RecursiveRoute::Node, 32);
    }

    #[test]
    fn lazy_variants_agree_edge_route() {
        assert_lazy_variants_agree(1e-2, RecursiveRoute::Edge, 31);
    }

    #[test]
    fn recursive_mode_factorizes_once_per_commit() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = instances::random_connected(&mut rng, 10, 25);
        let flow = EdgeFlow::new((0..25).map(|_| rng.random_range(0.0..10.0)).collect());
        let req = PlacementRequest::new(&net, &flow, Budget::Count(4), Algorithm::LazyRecursive);
        // one initial factorization plus one per committed sensor
        let plan = place(&req).unwrap();
        assert_eq!(plan.ops.factorizations, 1 + 4);
        assert_eq!(plan.ops.fallbacks, 0);
        // one solve per candidate (two at bridges) plus one per factorization
        assert!(plan.ops.solves >= plan.evaluations + 5 && plan.ops.solves <= 2 * plan.evaluations + 5);

        let plan = place(&req.clone().route(RecursiveRoute::Edge).lambda(1e-2)).unwrap();
        assert_eq!(plan.ops.factorizations, 1 + 4);
        assert_eq!(plan.ops.fallbacks, 0);
        assert_eq!(plan.ops.solves, EDGE_SOLVES_PER_EVALUATION * plan.evaluations);
    }

    #[test]
    fn zero_time_limit_truncates() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = instances::random_connected(&mut rng, 10, 25);
        let flow = EdgeFlow::new(vec![1.0; 25]);
        let req = PlacementRequest::new(&net, &flow, Budget::Count(4), Algorithm::Greedy)
            .time_limit(Some(std::time::Duration::ZERO));
        let plan = place(&req).unwrap();
        assert!(plan.truncated);
        assert!(plan.sensors.len() < 4);
    }
}

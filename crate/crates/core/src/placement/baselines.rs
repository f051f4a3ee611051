use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{prefix_errors, PlacementRequest, SensorPlan};
use crate::error::Result;
use crate::prediction::OpCounts;

/// `k` candidates drawn uniformly without replacement.
pub(super) fn random_order(req: &PlacementRequest<'_>, k: usize) -> Vec<usize> {
    random_subset(&req.candidates, k, req.seed)
}

pub(crate) fn random_subset(candidates: &[usize], k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rand::seq::index::sample(&mut rng, candidates.len(), k)
        .into_iter()
        .map(|i| candidates[i])
        .collect()
}

/// The `k` candidates with the largest absolute reference flow, in descending order.
pub(super) fn max_flow_order(req: &PlacementRequest<'_>, k: usize) -> Vec<usize> {
    let flow = req.reference.as_slice();
    let mut order = req.candidates.clone();
    order.sort_by(|&a, &b| flow[b].abs().total_cmp(&flow[a].abs()).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Wraps a fixed selection order into a plan, scoring it from scratch.
pub(super) fn with_trace(req: &PlacementRequest<'_>, sensors: Vec<usize>) -> Result<SensorPlan> {
    let error_trace = prefix_errors(req, &sensors)?;
    Ok(SensorPlan {
        algorithm: req.algorithm,
        evaluations: error_trace.len(),
        error_trace,
        sensors,
        elapsed_ms: 0.0,
        truncated: false,
        ops: OpCounts::default(),
    })
}

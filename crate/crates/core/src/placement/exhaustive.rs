use itertools::Itertools;
use rayon::prelude::*;

use super::{prefix_errors, snap, Objective, PlacementRequest, SensorPlan};
use crate::error::{Error, Result};

/// Largest number of subsets exhaustive search will enumerate.
pub const EXHAUSTIVE_LIMIT: u128 = 1_000_000;

/// `n choose k`, saturating.
pub(crate) fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// Global minimizer over all `k`-subsets of the candidates. Ties go to the lexicographically
/// smallest subset of sorted ids.
pub(super) fn exhaustive_place(req: &PlacementRequest<'_>, k: usize) -> Result<SensorPlan> {
    let subsets = binomial(req.candidates.len(), k);
    if subsets > EXHAUSTIVE_LIMIT {
        return Err(Error::SearchTooLarge {
            subsets,
            limit: EXHAUSTIVE_LIMIT,
        });
    }
    let objective = Objective::new(req);
    let mut ids = req.candidates.clone();
    ids.sort_unstable();

    let best = ids
        .iter()
        .copied()
        .combinations(k)
        .par_bridge()
        .map(|subset| objective.error(&subset).map(|err| (snap(err), subset)))
        .try_reduce_with(|a, b| {
            let keep_a = a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)).is_le();
            Ok(if keep_a { a } else { b })
        })
        .transpose()?;
    let (_, sensors) = best.expect("at least one subset");

    let error_trace = prefix_errors(req, &sensors)?;
    Ok(SensorPlan {
        algorithm: req.algorithm,
        sensors,
        error_trace,
        elapsed_ms: 0.0,
        evaluations: subsets as usize,
        truncated: false,
        ops: objective.counter.snapshot(),
    })
}

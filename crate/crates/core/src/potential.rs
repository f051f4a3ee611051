//! Node-space recursive updater.
//!
//! Works on the potentials `x = M^{-1} B f_S^0` with `M = L_T + lambda^2 I + P`, where `P`
//! holds the normalized indicator blocks of the components of the `T` subgraph; the target
//! flows are `f_T = -X_T^T x`. Moving edge `e` from `T` to the sensors changes `M` by
//! `-b_e b_e^T` (Sherman-Morrison, one solve), and when `e` is a bridge of the `T` subgraph
//! the component splits, which adds `+u u^T` for the normalized split vector `u` (rank two,
//! two solves). Both stay well conditioned for tiny `lambda`, unlike the edge-space Gram
//! matrix whose cycle-space eigenvalues are `lambda^2`.

use std::sync::atomic::Ordering;
use std::sync::Arc;

use nalgebra::{DVector, Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::graph::{validate_ids, EdgeFlow, IncidenceMatrix};
use crate::prediction::{check_lambda, node_system, Factor, OpCounter, OpCounts};

/// Below this denominator (or above the matching 2x2 condition) an update falls back to a
/// direct solve.
const DENOMINATOR_FLOOR: f64 = 1e-10;
const CONDITION_LIMIT: f64 = 1e10;

#[derive(Clone, Debug)]
pub struct PotentialCache<'a> {
    incidence: &'a IncidenceMatrix,
    targets: Vec<usize>,
    position: Vec<usize>,
    sensor_padded: Vec<f64>,
    lambda: f64,
    factor: Factor,
    /// `M^{-1} B f_S^0`
    potentials: DVector<f64>,
    bridges: Bridges,
    counter: Arc<OpCounter>,
}

pub fn build_potential_cache<'a>(
    incidence: &'a IncidenceMatrix,
    targets: &[usize],
    sensor_padded: &EdgeFlow,
    lambda: f64,
) -> Result<PotentialCache<'a>> {
    PotentialCache::build(
        incidence,
        targets.to_vec(),
        sensor_padded.as_slice().to_vec(),
        lambda,
        Arc::default(),
    )
}

impl<'a> PotentialCache<'a> {
    fn build(
        incidence: &'a IncidenceMatrix,
        targets: Vec<usize>,
        mut sensor_padded: Vec<f64>,
        lambda: f64,
        counter: Arc<OpCounter>,
    ) -> Result<Self> {
        check_lambda(lambda)?;
        let m = incidence.ncols();
        if sensor_padded.len() != m {
            return Err(Error::LengthMismatch {
                expected: m,
                actual: sensor_padded.len(),
            });
        }
        validate_ids(&targets, m)?;
        let mut position = vec![usize::MAX; m];
        for (p, &e) in targets.iter().enumerate() {
            position[e] = p;
            sensor_padded[e] = 0.0;
        }
        let (system, components) = node_system(incidence, &targets, lambda);
        let factor = Factor::new(system)?;
        counter.factorizations.fetch_add(1, Ordering::Relaxed);
        let potentials = factor.solve(DVector::from_vec(incidence.apply(&sensor_padded)))?;
        counter.solves.fetch_add(1, Ordering::Relaxed);
        let bridges = Bridges::find(incidence, &targets, &components);
        Ok(Self {
            incidence,
            targets,
            position,
            sensor_padded,
            lambda,
            factor,
            potentials,
            bridges,
            counter,
        })
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn position(&self, edge: usize) -> Option<usize> {
        self.position.get(edge).copied().filter(|&p| p != usize::MAX)
    }

    pub fn counts(&self) -> OpCounts {
        self.counter.snapshot()
    }

    pub fn counter(&self) -> Arc<OpCounter> {
        Arc::clone(&self.counter)
    }

    /// Whether target position `j` is a bridge of the current target subgraph.
    pub fn is_bridge(&self, j: usize) -> bool {
        self.bridges.child[j].is_some()
    }

    fn check_index(&self, j: usize) -> Result<()> {
        if j < self.targets.len() {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange {
                index: j,
                len: self.targets.len(),
            })
        }
    }

    fn solve(&self, rhs: DVector<f64>) -> Result<DVector<f64>> {
        self.counter.solves.fetch_add(1, Ordering::Relaxed);
        self.factor.solve(rhs)
    }

    fn flows_from(&self, potentials: &DVector<f64>, skip: Option<usize>) -> Vec<f64> {
        self.targets
            .iter()
            .enumerate()
            .filter(|&(p, _)| Some(p) != skip)
            .map(|(_, &e)| -(potentials[self.incidence.head(e)] - potentials[self.incidence.tail(e)]))
            .collect()
    }

    /// Predicted flows on the current targets, in target order.
    pub fn predict_targets(&self) -> Vec<f64> {
        self.flows_from(&self.potentials, None)
    }

    /// Full-length prediction with sensor values in place.
    pub fn predict(&self) -> EdgeFlow {
        let mut full = self.sensor_padded.clone();
        for (&e, v) in self.targets.iter().zip(self.predict_targets()) {
            full[e] = v;
        }
        EdgeFlow::new(full)
    }

    /// Predicted flows on `T \ {T_j}` (in target order, `j` skipped) when `T_j` joins the
    /// sensors with value `observed`.
    pub fn evaluate_removal(&self, j: usize, observed: f64) -> Result<Vec<f64>> {
        self.check_index(j)?;
        let e = self.targets[j];
        let (head, tail) = (self.incidence.head(e), self.incidence.tail(e));
        let n = self.incidence.nrows();
        let diff = |v: &DVector<f64>| v[head] - v[tail];

        let mut b = DVector::zeros(n);
        b[head] = 1.0;
        b[tail] = -1.0;
        let y = self.solve(b)?;
        // M^{-1} r' with r' = r + observed b
        let base = &self.potentials + &y * observed;

        let x = match self.bridges.child[j] {
            None => {
                let denom = 1.0 - diff(&y);
                if denom.abs() < DENOMINATOR_FLOOR {
                    return self.removal_from_scratch(j, observed);
                }
                let beta = diff(&base) / denom;
                base + &y * beta
            }
            Some(child) => {
                let u = self.bridges.split_vector(child, n);
                let z = self.solve(u.clone())?;
                // capacitance diag(-1, 1) + [b u]^T M^{-1} [b u]
                let cap = Matrix2::new(-1.0 + diff(&y), diff(&z), u.dot(&y), 1.0 + u.dot(&z));
                let Some(inv) = cap.try_inverse() else {
                    return self.removal_from_scratch(j, observed);
                };
                let cond = cap.abs().column_sum().max() * inv.abs().column_sum().max();
                if !cond.is_finite() || cond > CONDITION_LIMIT {
                    return self.removal_from_scratch(j, observed);
                }
                let w = inv * Vector2::new(diff(&base), u.dot(&base));
                base - &y * w[0] - &z * w[1]
            }
        };
        Ok(self.flows_from(&x, Some(j)))
    }

    fn successor_parts(&self, j: usize, observed: f64) -> (Vec<usize>, Vec<f64>) {
        let mut targets = self.targets.clone();
        let e = targets.remove(j);
        let mut padded = self.sensor_padded.clone();
        padded[e] = observed;
        (targets, padded)
    }

    fn removal_from_scratch(&self, j: usize, observed: f64) -> Result<Vec<f64>> {
        self.counter.fallbacks.fetch_add(1, Ordering::Relaxed);
        let (targets, padded) = self.successor_parts(j, observed);
        let next = Self::build(self.incidence, targets, padded, self.lambda, Arc::clone(&self.counter))?;
        Ok(next.predict_targets())
    }

    /// New cache over `T \ {T_j}`, refactorized; `self` is unchanged.
    pub fn commit_removal(&self, j: usize, observed: f64) -> Result<PotentialCache<'a>> {
        self.check_index(j)?;
        let (targets, padded) = self.successor_parts(j, observed);
        Self::build(self.incidence, targets, padded, self.lambda, Arc::clone(&self.counter))
    }
}

/// Bridges of the target subgraph from a DFS forest. For a bridge, the side away from the DFS
/// root is the subtree of its child endpoint, i.e. the nodes visited in `tin[c]..tout[c]`.
#[derive(Clone, Debug)]
struct Bridges {
    /// Per target position: the child endpoint when the edge is a bridge.
    child: Vec<Option<usize>>,
    tin: Vec<usize>,
    tout: Vec<usize>,
    order: Vec<usize>,
    component: Vec<usize>,
    component_nodes: Vec<Vec<usize>>,
}

impl Bridges {
    fn find(b: &IncidenceMatrix, targets: &[usize], components: &[Vec<usize>]) -> Self {
        let n = b.nrows();
        let mut adjacency: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
        for (p, &e) in targets.iter().enumerate() {
            let (t, h) = (b.tail(e), b.head(e));
            adjacency[t].push((h, p));
            adjacency[h].push((t, p));
        }
        let mut component = vec![0; n];
        for (c, members) in components.iter().enumerate() {
            for &v in members {
                component[v] = c;
            }
        }

        let mut child = vec![None; targets.len()];
        let mut tin = vec![usize::MAX; n];
        let mut low = vec![0; n];
        let mut tout = vec![0; n];
        let mut order = Vec::with_capacity(n);
        // (node, edge position used to enter it, next adjacency index)
        let mut stack: Vec<(usize, usize, usize)> = Vec::new();
        for root in 0..n {
            if tin[root] != usize::MAX {
                continue;
            }
            tin[root] = order.len();
            low[root] = tin[root];
            order.push(root);
            stack.push((root, usize::MAX, 0));
            while let Some(top) = stack.last_mut() {
                let (v, via, next) = *top;
                top.2 += 1;
                if let Some(&(w, p)) = adjacency[v].get(next) {
                    if p == via {
                        continue;
                    }
                    if tin[w] == usize::MAX {
                        tin[w] = order.len();
                        low[w] = tin[w];
                        order.push(w);
                        stack.push((w, p, 0));
                    } else {
                        low[v] = low[v].min(tin[w]);
                    }
                } else {
                    stack.pop();
                    tout[v] = order.len();
                    if let Some(&(parent, _, _)) = stack.last() {
                        low[parent] = low[parent].min(low[v]);
                        if low[v] > tin[parent] {
                            child[via] = Some(v);
                        }
                    }
                }
            }
        }
        Self {
            child,
            tin,
            tout,
            order,
            component,
            component_nodes: components.to_vec(),
        }
    }

    /// Unit vector `1_A/|A| - 1_B/|B|` (normalized) for the split of `child`'s component into
    /// its DFS subtree `A` and the rest `B`.
    fn split_vector(&self, child: usize, n: usize) -> DVector<f64> {
        let subtree = &self.order[self.tin[child]..self.tout[child]];
        let whole = &self.component_nodes[self.component[child]];
        let a = subtree.len() as f64;
        let rest = (whole.len() - subtree.len()) as f64;
        let mut u = DVector::zeros(n);
        for &v in whole {
            u[v] = -1.0 / rest;
        }
        for &v in subtree {
            u[v] = 1.0 / a;
        }
        u /= (1.0 / a + 1.0 / rest).sqrt();
        u
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{complement, FlowNetwork};
    use crate::instances;
    use crate::prediction::{predict_flows, PredictionProblem};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn check_against_scratch(net: &FlowNetwork, f: &EdgeFlow, sensors: &[usize], lambda: f64, tol: f64) {
        let b = net.incidence();
        let m = net.edge_count();
        let targets = complement(m, sensors);
        let cache = build_potential_cache(&b, &targets, &f.padded(sensors), lambda).unwrap();

        let direct = predict_flows(&PredictionProblem::from_flow(&b, sensors, f, lambda).unwrap()).unwrap();
        for (v, &e) in cache.predict_targets().iter().zip(&targets) {
            assert!((v - direct[e]).abs() <= tol * (1.0 + direct[e].abs()));
        }
        for j in 0..targets.len() {
            let fast = cache.evaluate_removal(j, f[targets[j]]).unwrap();
            let mut s2 = sensors.to_vec();
            s2.push(targets[j]);
            let slow = predict_flows(&PredictionProblem::from_flow(&b, &s2, f, lambda).unwrap()).unwrap();
            let rest = targets.iter().filter(|&&e| e != targets[j]);
            for (v, &e) in fast.iter().zip(rest) {
                assert!(
                    (v - slow[e]).abs() <= tol * (1.0 + slow[e].abs()),
                    "j={j} bridge={} {v} vs {}",
                    cache.is_bridge(j),
                    slow[e]
                );
            }
        }
    }

    #[test]
    fn barbell_bridge_detected() {
        let net = instances::barbell();
        let b = net.incidence();
        let all: Vec<usize> = (0..7).collect();
        let cache = build_potential_cache(&b, &all, &EdgeFlow::zeros(7), 1e-6).unwrap();
        let bridges: Vec<usize> = (0..7).filter(|&j| cache.is_bridge(j)).collect();
        assert_eq!(bridges, vec![3]);
    }

    #[test]
    fn tree_edges_are_all_bridges() {
        let net = FlowNetwork::new("path", 4, [(0, 1), (2, 1), (2, 3)]).unwrap();
        let b = net.incidence();
        let cache = build_potential_cache(&b, &[0, 1, 2], &EdgeFlow::zeros(3), 1e-6).unwrap();
        assert!((0..3).all(|j| cache.is_bridge(j)));
    }

    #[test]
    fn parallel_edges_are_not_bridges() {
        let net = FlowNetwork::new("pair", 3, [(0, 1), (1, 0), (1, 2)]).unwrap();
        let b = net.incidence();
        let cache = build_potential_cache(&b, &[0, 1, 2], &EdgeFlow::zeros(3), 1e-6).unwrap();
        assert_eq!(
            (0..3).map(|j| cache.is_bridge(j)).collect::<Vec<_>>(),
            vec![false, false, true]
        );
    }

    #[test]
    fn triangle_removal_gives_constant_flow() {
        let net = instances::triangle();
        let b = net.incidence();
        let cache = build_potential_cache(&b, &[0, 1, 2], &EdgeFlow::zeros(3), 1e-6).unwrap();
        let pred = cache.evaluate_removal(0, 5.0).unwrap();
        for v in pred {
            assert!((v - 5.0).abs() < 1e-9);
        }
    }

    #[test]
    fn removals_match_scratch_at_small_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for round in 0..6 {
            let (n, m) = (8 + round, 10 + 3 * round);
            let net = instances::random_connected(&mut rng, n, m);
            let f = EdgeFlow::new((0..m).map(|_| rng.random_range(-20.0..20.0)).collect());
            let sensors: Vec<usize> = (0..m).filter(|_| rng.random_bool(0.3)).collect();
            check_against_scratch(&net, &f, &sensors, 1e-6, 1e-8);
            check_against_scratch(&net, &f, &sensors, 1e-2, 1e-8);
        }
    }

    #[test]
    fn removals_across_bridges_and_trees() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = instances::barbell();
        let f = EdgeFlow::new((0..7).map(|_| rng.random_range(-5.0..5.0)).collect());
        check_against_scratch(&net, &f, &[], 1e-6, 1e-8);
        check_against_scratch(&net, &f, &[0, 5], 1e-6, 1e-8);
        let tree = FlowNetwork::new("tree", 6, [(0, 1), (1, 2), (1, 3), (3, 4), (5, 3)]).unwrap();
        let f = EdgeFlow::new(vec![1.0, -2.0, 3.0, 0.5, 4.0]);
        check_against_scratch(&tree, &f, &[2], 1e-6, 1e-8);
    }

    #[test]
    fn one_solve_per_ordinary_removal() {
        let net = instances::triangle();
        let b = net.incidence();
        let cache = build_potential_cache(&b, &[0, 1, 2], &EdgeFlow::zeros(3), 1e-6).unwrap();
        let before = cache.counts();
        cache.evaluate_removal(1, 2.0).unwrap();
        let after = cache.counts();
        assert_eq!(after.solves - before.solves, 1);
        assert_eq!(after.factorizations, 1);
        assert_eq!(after.fallbacks, 0);
    }

    #[test]
    fn commit_matches_fresh_cache() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let net = instances::random_connected(&mut rng, 9, 16);
        let b = net.incidence();
        let f = EdgeFlow::new((0..16).map(|_| rng.random_range(0.0..9.0)).collect());
        let all: Vec<usize> = (0..16).collect();
        let cache = build_potential_cache(&b, &all, &EdgeFlow::zeros(16), 1e-6).unwrap();
        let next = cache.commit_removal(4, f[4]).unwrap();
        let fresh = build_potential_cache(&b, &complement(16, &[4]), &f.padded(&[4]), 1e-6).unwrap();
        assert_eq!(next.targets(), fresh.targets());
        for (a, b) in next.predict_targets().iter().zip(fresh.predict_targets()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(next.counts().factorizations, 2);
    }
}

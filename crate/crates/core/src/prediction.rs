//! Conservation-based flow inference.
//!
//! Given observed flows on a sensor set `S`, the unobserved flows on `T = E \ S` minimize
//! `||B(H_T f_T + f_S^0)||^2 + lambda^2 ||f_T||^2`, whose closed form is
//! `f_T = -(X_T^T X_T + lambda^2 I)^{-1} X_T^T B f_S^0` with `X_T = B H_T`.
//!
//! Two independent routes compute it:
//!
//! * [`predict_flows`] solves from scratch in node space through the push-through identity
//!   `(X^T X + l^2 I)^{-1} X^T = X^T (X X^T + l^2 I)^{-1}`. The per-component indicator
//!   vectors of the `T` subgraph are annihilated by `X^T`, so they are projected out of the
//!   right-hand side and replaced by a unit shift, which keeps the solve well conditioned even
//!   for tiny `lambda`.
//! * [`PredictorCache`] factorizes the edge-space Gram matrix once and evaluates the removal
//!   of any single target edge with a rank-two Woodbury correction, `O(|T|^2)` per candidate.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, LU};

use crate::error::{Error, Result};
use crate::graph::{complement, validate_ids, EdgeFlow, IncidenceMatrix};

/// Regularizer used throughout the experiments.
pub const DEFAULT_LAMBDA: f64 = 1e-6;

/// Above this 2x2 condition number the Woodbury step is abandoned for a direct solve.
const WOODBURY_CONDITION_LIMIT: f64 = 1e12;

/// Iterative refinement steps after the Woodbury solve. The correction cancels terms of size
/// `1 / lambda^2`; one step against the sparse reduced Gram matrix recovers the lost digits.
const REFINEMENT_STEPS: usize = 1;

/// Largest accepted `|r| / (|G| |x| + |b|)` for an updated solve before falling back.
const BACKWARD_ERROR_LIMIT: f64 = 1e-10;

/// Triangular solves per [`PredictorCache::evaluate_removal`] call.
pub const EDGE_SOLVES_PER_EVALUATION: usize = 2 + REFINEMENT_STEPS;

pub(crate) fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidLambda(lambda))
    }
}

/// Observed sensor flows plus the regularizer.
#[derive(Clone, Debug)]
pub struct PredictionProblem<'a> {
    incidence: &'a IncidenceMatrix,
    sensors: Vec<usize>,
    observed: Vec<f64>,
    lambda: f64,
}

impl<'a> PredictionProblem<'a> {
    pub fn new(incidence: &'a IncidenceMatrix, sensors: Vec<usize>, observed: Vec<f64>, lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        if sensors.len() != observed.len() {
            return Err(Error::LengthMismatch {
                expected: sensors.len(),
                actual: observed.len(),
            });
        }
        validate_ids(&sensors, incidence.ncols())?;
        Ok(Self {
            incidence,
            sensors,
            observed,
            lambda,
        })
    }

    /// Sensors read off a reference flow.
    pub fn from_flow(incidence: &'a IncidenceMatrix, sensors: &[usize], flow: &EdgeFlow, lambda: f64) -> Result<Self> {
        flow.check_len(incidence.ncols())?;
        Self::new(incidence, sensors.to_vec(), flow.gather(sensors), lambda)
    }

    pub fn sensors(&self) -> &[usize] {
        &self.sensors
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn solve(&self) -> Result<EdgeFlow> {
        predict_flows(self)
    }
}

/// Full-length prediction with sensor entries copied from the observations.
pub fn predict_flows(problem: &PredictionProblem<'_>) -> Result<EdgeFlow> {
    let b = problem.incidence;
    let m = b.ncols();
    let mut full = vec![0.0; m];
    for (&s, &v) in problem.sensors.iter().zip(&problem.observed) {
        full[s] = v;
    }
    let targets = complement(m, &problem.sensors);
    if targets.is_empty() || problem.observed.iter().all(|&v| v == 0.0) {
        return Ok(EdgeFlow::new(full));
    }

    let (system, components) = node_system(b, &targets, problem.lambda);
    let mut projected = DVector::from_vec(b.apply(&full));
    for members in &components {
        let mean = members.iter().map(|&v| projected[v]).sum::<f64>() / members.len() as f64;
        for &v in members {
            projected[v] -= mean;
        }
    }

    let potentials = Factor::new(system)?.solve(projected)?;
    for &e in &targets {
        full[e] = -(potentials[b.head(e)] - potentials[b.tail(e)]);
    }
    Ok(EdgeFlow::new(full))
}

/// `L_T + lambda^2 I + sum_K 1_K 1_K^T / |K|` over the components `K` of the `T` subgraph,
/// returned with those components.
pub(crate) fn node_system(b: &IncidenceMatrix, targets: &[usize], lambda: f64) -> (DMatrix<f64>, Vec<Vec<usize>>) {
    let n = b.nrows();
    let components = target_components(b, targets);
    let mut system = DMatrix::<f64>::zeros(n, n);
    for &e in targets {
        let (t, h) = (b.tail(e), b.head(e));
        system[(t, t)] += 1.0;
        system[(h, h)] += 1.0;
        system[(t, h)] -= 1.0;
        system[(h, t)] -= 1.0;
    }
    let shift = lambda * lambda;
    for i in 0..n {
        system[(i, i)] += shift;
    }
    for members in &components {
        let weight = 1.0 / members.len() as f64;
        for &v in members {
            for &u in members {
                system[(v, u)] += weight;
            }
        }
    }
    (system, components)
}

/// Node sets of the connected components of the subgraph spanned by `edges` (isolated nodes
/// form their own components).
pub(crate) fn target_components(b: &IncidenceMatrix, edges: &[usize]) -> Vec<Vec<usize>> {
    let n = b.nrows();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for &e in edges {
        let (a, c) = (find(&mut parent, b.tail(e)), find(&mut parent, b.head(e)));
        if a != c {
            parent[a] = c;
        }
    }
    let mut slot = vec![usize::MAX; n];
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for v in 0..n {
        let root = find(&mut parent, v);
        if slot[root] == usize::MAX {
            slot[root] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[root]].push(v);
    }
    groups
}

/// Squared error of `predicted` against `truth` over `scope`.
pub fn squared_error(predicted: &[f64], truth: &[f64], scope: &[usize]) -> f64 {
    scope.iter().map(|&e| (predicted[e] - truth[e]).powi(2)).sum()
}

/// Counts of the expensive linear-algebra operations, shared by a cache and its successors.
#[derive(Debug, Default)]
pub struct OpCounter {
    pub(crate) factorizations: AtomicUsize,
    pub(crate) solves: AtomicUsize,
    pub(crate) fallbacks: AtomicUsize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct OpCounts {
    pub factorizations: usize,
    pub solves: usize,
    pub fallbacks: usize,
}

impl OpCounter {
    pub fn snapshot(&self) -> OpCounts {
        OpCounts {
            factorizations: self.factorizations.load(Ordering::Relaxed),
            solves: self.solves.load(Ordering::Relaxed),
            fallbacks: self.fallbacks.load(Ordering::Relaxed),
        }
    }
}

/// Triangular factorization of a symmetric positive definite matrix. Cholesky is tried first;
/// when rounding pushes a pivot negative (tiny `lambda`) partial-pivoting LU takes over.
#[derive(Clone, Debug)]
pub(crate) enum Factor {
    Cholesky(Cholesky<f64, Dyn>),
    Lu(LU<f64, Dyn, Dyn>),
    Empty,
}

impl Factor {
    pub(crate) fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() == 0 {
            return Ok(Factor::Empty);
        }
        match Cholesky::new(matrix.clone()) {
            Some(c) => Ok(Factor::Cholesky(c)),
            None => {
                let lu = LU::new(matrix);
                if lu.is_invertible() {
                    Ok(Factor::Lu(lu))
                } else {
                    Err(Error::NotPositiveDefinite)
                }
            }
        }
    }

    pub(crate) fn solve(&self, mut rhs: DVector<f64>) -> Result<DVector<f64>> {
        match self {
            Factor::Cholesky(c) => c.solve_mut(&mut rhs),
            Factor::Lu(lu) => {
                if !lu.solve_mut(&mut rhs) {
                    return Err(Error::NotPositiveDefinite);
                }
            }
            Factor::Empty => {}
        }
        Ok(rhs)
    }

    pub(crate) fn reconstruct(&self) -> DMatrix<f64> {
        match self {
            Factor::Cholesky(c) => {
                let l = c.l();
                &l * l.transpose()
            }
            Factor::Lu(lu) => {
                let (p, l, u) = lu.clone().unpack();
                let mut a = l * u;
                p.inv_permute_rows(&mut a);
                a
            }
            Factor::Empty => DMatrix::zeros(0, 0),
        }
    }
}

/// The rank-two correction that isolates target position `index`:
/// `G + U V^T` equals `G` with the off-diagonal entries of row and column `index` zeroed.
#[derive(Clone, Debug)]
pub struct RemovalUpdate {
    pub index: usize,
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

impl RemovalUpdate {
    /// The `(t-1) x t` row selection dropping `index`.
    pub fn downsampling(&self) -> DMatrix<f64> {
        let t = self.u.nrows();
        let mut s = DMatrix::zeros(t.saturating_sub(1), t);
        for (row, col) in (0..t).filter(|&c| c != self.index).enumerate() {
            s[(row, col)] = 1.0;
        }
        s
    }
}

/// Factorized Gram matrix `G = X_T^T X_T + lambda^2 I` for the current target set.
///
/// Immutable once built: [`evaluate_removal`](Self::evaluate_removal) is a pure read and can be
/// called from many threads, [`commit_removal`](Self::commit_removal) returns a new cache.
#[derive(Clone, Debug)]
pub struct PredictorCache<'a> {
    incidence: &'a IncidenceMatrix,
    targets: Vec<usize>,
    position: Vec<usize>,
    incident: Vec<Vec<(usize, f64)>>,
    sensor_padded: Vec<f64>,
    divergence: Vec<f64>,
    lambda: f64,
    factor: Factor,
    counter: Arc<OpCounter>,
}

/// Factorizes `X_T^T X_T + lambda^2 I`. Entries of `sensor_padded` on `targets` are ignored.
pub fn build_cache<'a>(
    incidence: &'a IncidenceMatrix,
    targets: &[usize],
    sensor_padded: &EdgeFlow,
    lambda: f64,
) -> Result<PredictorCache<'a>> {
    PredictorCache::build(
        incidence,
        targets.to_vec(),
        sensor_padded.as_slice().to_vec(),
        lambda,
        Arc::default(),
    )
}

impl<'a> PredictorCache<'a> {
    fn build(
        incidence: &'a IncidenceMatrix,
        targets: Vec<usize>,
        mut sensor_padded: Vec<f64>,
        lambda: f64,
        counter: Arc<OpCounter>,
    ) -> Result<Self> {
        check_lambda(lambda)?;
        let (n, m) = incidence.shape();
        if sensor_padded.len() != m {
            return Err(Error::LengthMismatch {
                expected: m,
                actual: sensor_padded.len(),
            });
        }
        validate_ids(&targets, m)?;

        let mut position = vec![usize::MAX; m];
        let mut incident = vec![Vec::new(); n];
        for (p, &e) in targets.iter().enumerate() {
            position[e] = p;
            sensor_padded[e] = 0.0;
            incident[incidence.head(e)].push((p, 1.0));
            incident[incidence.tail(e)].push((p, -1.0));
        }
        let divergence = incidence.apply(&sensor_padded);
        let gram = incidence.gram(&targets, lambda * lambda);
        let factor = Factor::new(gram)?;
        if !targets.is_empty() {
            counter.factorizations.fetch_add(1, Ordering::Relaxed);
        }
        Ok(Self {
            incidence,
            targets,
            position,
            incident,
            sensor_padded,
            divergence,
            lambda,
            factor,
            counter,
        })
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Position of edge `edge` within the target list.
    pub fn position(&self, edge: usize) -> Option<usize> {
        match self.position.get(edge) {
            Some(&p) if p != usize::MAX => Some(p),
            _ => None,
        }
    }

    pub fn sensor_padded(&self) -> &[f64] {
        &self.sensor_padded
    }

    pub fn counts(&self) -> OpCounts {
        self.counter.snapshot()
    }

    pub fn counter(&self) -> Arc<OpCounter> {
        Arc::clone(&self.counter)
    }

    /// The Gram matrix, rebuilt from the incidence structure.
    pub fn gram(&self) -> DMatrix<f64> {
        self.incidence.gram(&self.targets, self.lambda * self.lambda)
    }

    /// `max |factor product - G| / max |G|`.
    pub fn factorization_residual(&self) -> f64 {
        let g = self.gram();
        if g.is_empty() {
            return 0.0;
        }
        (self.factor.reconstruct() - &g).amax() / g.amax()
    }

    /// `G^{-1} rhs` by forward and back substitution.
    pub fn solve_with_cache(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        if rhs.len() != self.targets.len() {
            return Err(Error::LengthMismatch {
                expected: self.targets.len(),
                actual: rhs.len(),
            });
        }
        self.solve_vec(DVector::from_column_slice(rhs)).map(|v| v.data.into())
    }

    fn solve_vec(&self, rhs: DVector<f64>) -> Result<DVector<f64>> {
        self.counter.solves.fetch_add(1, Ordering::Relaxed);
        self.factor.solve(rhs)
    }

    /// Prediction on the current targets, in target order.
    pub fn predict_targets(&self) -> Result<Vec<f64>> {
        let rhs = self.incidence.apply_transpose_on(&self.divergence, &self.targets);
        let mut x = self.solve_with_cache(&rhs)?;
        x.iter_mut().for_each(|v| *v = -*v);
        Ok(x)
    }

    /// Full-length prediction: sensors copied, targets solved.
    pub fn predict(&self) -> Result<EdgeFlow> {
        let mut full = self.sensor_padded.clone();
        for (&e, v) in self.targets.iter().zip(self.predict_targets()?) {
            full[e] = v;
        }
        Ok(EdgeFlow::new(full))
    }

    fn check_index(&self, j: usize) -> Result<()> {
        if j >= self.targets.len() {
            return Err(Error::IndexOutOfRange {
                index: j,
                len: self.targets.len(),
            });
        }
        Ok(())
    }

    /// Off-diagonal entries of column `j` of `G` as sparse `(position, value)` pairs.
    fn gram_column_offdiag(&self, j: usize) -> Vec<(usize, f64)> {
        let e = self.targets[j];
        let mut out = Vec::new();
        for (node, sj) in [(self.incidence.head(e), 1.0), (self.incidence.tail(e), -1.0)] {
            for &(p, sp) in &self.incident[node] {
                if p != j {
                    out.push((p, sj * sp));
                }
            }
        }
        out
    }

    /// Materializes `U`, `V` for target position `j`.
    pub fn removal_update(&self, j: usize) -> Result<RemovalUpdate> {
        self.check_index(j)?;
        let t = self.targets.len();
        let mut u = DMatrix::zeros(t, 2);
        let mut v = DMatrix::zeros(t, 2);
        u[(j, 0)] = 1.0;
        v[(j, 1)] = -1.0;
        for (p, g) in self.gram_column_offdiag(j) {
            u[(p, 1)] += g;
            v[(p, 0)] -= g;
        }
        Ok(RemovalUpdate { index: j, u, v })
    }

    /// Prediction on `T \ {T_j}` after moving `T_j` into the sensor set with flow `observed`,
    /// returned in target order with position `j` dropped.
    pub fn evaluate_removal(&self, j: usize, observed: f64) -> Result<Vec<f64>> {
        self.check_index(j)?;
        let t = self.targets.len();
        if t == 1 {
            return Ok(Vec::new());
        }
        let e = self.targets[j];
        let (head, tail) = (self.incidence.head(e), self.incidence.tail(e));

        // S_j^T X_{T'}^T B f_{S'}^0
        let mut rhs = DVector::zeros(t);
        for (p, &edge) in self.targets.iter().enumerate() {
            if p == j {
                continue;
            }
            let (h, tl) = (self.incidence.head(edge), self.incidence.tail(edge));
            let mut val = self.divergence[h] - self.divergence[tl];
            if h == head {
                val += observed;
            } else if h == tail {
                val -= observed;
            }
            if tl == head {
                val -= observed;
            } else if tl == tail {
                val += observed;
            }
            rhs[p] = val;
        }
        // Y = G^{-1} U with U = [e_j, g]; G^{-1} g = e_j - G_jj G^{-1} e_j since G e_j = g + G_jj e_j.
        let mut unit = DVector::zeros(t);
        unit[j] = 1.0;
        let y1 = self.solve_vec(unit)?;
        let diag = 2.0 + self.lambda * self.lambda;
        let mut y2 = &y1 * (-diag);
        y2[j] += 1.0;

        // V = [-g, -e_j]
        let g = self.gram_column_offdiag(j);
        let dot = |x: &DVector<f64>| g.iter().map(|&(p, w)| w * x[p]).sum::<f64>();
        let inner = nalgebra::Matrix2::new(1.0 - dot(&y1), -dot(&y2), -y1[j], 1.0 - y2[j]);
        let Some(inner_inv) = small_inverse(&inner) else {
            self.counter.fallbacks.fetch_add(1, Ordering::Relaxed);
            return self.removal_from_scratch(j, observed);
        };
        // (G + U V^T)^{-1} v
        let apply = |v: DVector<f64>| -> Result<DVector<f64>> {
            let w = self.solve_vec(v)?;
            let weights = inner_inv * nalgebra::Vector2::new(-dot(&w), -w[j]);
            Ok(&w - &y1 * weights[0] - &y2 * weights[1])
        };

        let mut x = apply(rhs.clone())?;
        for _ in 0..REFINEMENT_STEPS {
            let residual = &rhs - self.reduced_gram_times(j, &x);
            x += apply(residual)?;
        }
        // A near-singular capacitance can slip under the condition limit and still lose
        // every digit; a direct solve is backward stable, so judge the update the same way.
        let residual = (&rhs - self.reduced_gram_times(j, &x)).amax();
        let degree = self.incident.iter().map(Vec::len).max().unwrap_or(0);
        let gram_norm = 2.0 * degree as f64 + self.lambda * self.lambda;
        if residual > BACKWARD_ERROR_LIMIT * (gram_norm * x.amax() + rhs.amax()) {
            self.counter.fallbacks.fetch_add(1, Ordering::Relaxed);
            return self.removal_from_scratch(j, observed);
        }

        let out = (0..t).filter(|&p| p != j).map(|p| -x[p]).collect();
        Ok(out)
    }

    /// `G` with row and column `j` dropped, applied to `x` (entry `j` of the result is 0):
    /// `X'^T X' x + lambda^2 x` through the sparse incidence.
    fn reduced_gram_times(&self, j: usize, x: &DVector<f64>) -> DVector<f64> {
        let mut node = vec![0.0; self.incidence.nrows()];
        for (p, &e) in self.targets.iter().enumerate() {
            if p != j {
                node[self.incidence.head(e)] += x[p];
                node[self.incidence.tail(e)] -= x[p];
            }
        }
        let shift = self.lambda * self.lambda;
        let mut out = DVector::zeros(x.len());
        for (p, &e) in self.targets.iter().enumerate() {
            if p != j {
                out[p] = node[self.incidence.head(e)] - node[self.incidence.tail(e)] + shift * x[p];
            }
        }
        out
    }

    fn removal_from_scratch(&self, j: usize, observed: f64) -> Result<Vec<f64>> {
        let next = self.successor_parts(j, observed);
        let cache = PredictorCache::build(self.incidence, next.0, next.1, self.lambda, Arc::clone(&self.counter))?;
        cache.predict_targets()
    }

    fn successor_parts(&self, j: usize, observed: f64) -> (Vec<usize>, Vec<f64>) {
        let mut targets = self.targets.clone();
        let e = targets.remove(j);
        let mut padded = self.sensor_padded.clone();
        padded[e] = observed;
        (targets, padded)
    }

    /// New cache over `T \ {T_j}` with a fresh factorization; `self` is unchanged.
    pub fn commit_removal(&self, j: usize, observed: f64) -> Result<PredictorCache<'a>> {
        self.check_index(j)?;
        let (targets, padded) = self.successor_parts(j, observed);
        PredictorCache::build(self.incidence, targets, padded, self.lambda, Arc::clone(&self.counter))
    }
}

fn small_inverse(a: &nalgebra::Matrix2<f64>) -> Option<nalgebra::Matrix2<f64>> {
    let inv = a.try_inverse()?;
    let cond = a.abs().column_sum().max() * inv.abs().column_sum().max();
    if !cond.is_finite() || cond > WOODBURY_CONDITION_LIMIT {
        return None;
    }
    Some(inv)
}

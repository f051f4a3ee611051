//! Directed flow networks, their signed incidence matrix and edge-subset bookkeeping.
//!
//! Edge ids are positions in insertion order and are never renumbered. Parallel edges are
//! kept as distinct columns of the incidence matrix.
//!
//! Divergence is reported as `Bf`, i.e. inflow minus outflow per node. Only the squared norm
//! is consumed by the predictor, so the sign convention does not leak into any result.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A directed multigraph with a stable edge ordering.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowNetwork {
    name: String,
    node_count: usize,
    tails: Vec<usize>,
    heads: Vec<usize>,
}

impl FlowNetwork {
    /// Builds a network from `(tail, head)` pairs. Self-loops and out-of-range nodes are rejected.
    pub fn new(
        name: impl Into<String>,
        node_count: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut tails = Vec::new();
        let mut heads = Vec::new();
        for (edge, (tail, head)) in edges.into_iter().enumerate() {
            for node in [tail, head] {
                if node >= node_count {
                    return Err(Error::NodeOutOfRange { edge, node, node_count });
                }
            }
            if tail == head {
                return Err(Error::SelfLoop { edge, node: tail });
            }
            tails.push(tail);
            heads.push(head);
        }
        Ok(Self {
            name: name.into(),
            node_count,
            tails,
            heads,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.tails.len()
    }

    pub fn tail(&self, edge: usize) -> usize {
        self.tails[edge]
    }

    pub fn head(&self, edge: usize) -> usize {
        self.heads[edge]
    }

    pub fn edge(&self, edge: usize) -> (usize, usize) {
        (self.tails[edge], self.heads[edge])
    }

    pub fn edges(&self) -> impl ExactSizeIterator<Item = (usize, usize)> + '_ {
        self.tails.iter().copied().zip(self.heads.iter().copied())
    }

    pub fn incidence(&self) -> IncidenceMatrix {
        build_incidence(self)
    }

    /// Number of connected components of the undirected support graph.
    pub fn component_count(&self) -> usize {
        let mut parent: Vec<usize> = (0..self.node_count).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        let mut count = self.node_count;
        for (a, b) in self.edges() {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                parent[ra] = rb;
                count -= 1;
            }
        }
        count
    }

    /// Dimension of the cycle space, `m - n + c`.
    pub fn cycle_rank(&self) -> usize {
        self.edge_count() + self.component_count() - self.node_count
    }
}

/// Per-edge flow values aligned with a network's edge ids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeFlow(Vec<f64>);

impl EdgeFlow {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(m: usize) -> Self {
        Self(vec![0.0; m])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn check_len(&self, m: usize) -> Result<()> {
        if self.0.len() != m {
            return Err(Error::LengthMismatch {
                expected: m,
                actual: self.0.len(),
            });
        }
        Ok(())
    }

    /// `f_S^0`: the flow on `sensors`, zero elsewhere.
    pub fn padded(&self, sensors: &[usize]) -> EdgeFlow {
        let mut out = vec![0.0; self.0.len()];
        for &s in sensors {
            out[s] = self.0[s];
        }
        EdgeFlow(out)
    }

    pub fn gather(&self, ids: &[usize]) -> Vec<f64> {
        ids.iter().map(|&i| self.0[i]).collect()
    }
}

impl std::ops::Index<usize> for EdgeFlow {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl From<Vec<f64>> for EdgeFlow {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// The signed `n x m` incidence matrix: `+1` where an edge enters a node, `-1` where it leaves.
///
/// Stored by edge endpoints; dense materialization is available through [`to_dense`].
///
/// [`to_dense`]: IncidenceMatrix::to_dense
#[derive(Clone, Debug, PartialEq)]
pub struct IncidenceMatrix {
    node_count: usize,
    tails: Vec<usize>,
    heads: Vec<usize>,
}

pub fn build_incidence(net: &FlowNetwork) -> IncidenceMatrix {
    IncidenceMatrix {
        node_count: net.node_count,
        tails: net.tails.clone(),
        heads: net.heads.clone(),
    }
}

impl IncidenceMatrix {
    pub fn nrows(&self) -> usize {
        self.node_count
    }

    pub fn ncols(&self) -> usize {
        self.tails.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nrows(), self.ncols())
    }

    pub fn tail(&self, edge: usize) -> usize {
        self.tails[edge]
    }

    pub fn head(&self, edge: usize) -> usize {
        self.heads[edge]
    }

    pub fn get(&self, node: usize, edge: usize) -> f64 {
        if self.heads[edge] == node {
            1.0
        } else if self.tails[edge] == node {
            -1.0
        } else {
            0.0
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(self.nrows(), self.ncols());
        for j in 0..self.ncols() {
            b[(self.heads[j], j)] = 1.0;
            b[(self.tails[j], j)] = -1.0;
        }
        b
    }

    /// `B f` for a length-`m` vector.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        debug_assert_eq!(f.len(), self.ncols());
        let mut out = vec![0.0; self.node_count];
        for (j, &v) in f.iter().enumerate() {
            if v != 0.0 {
                out[self.heads[j]] += v;
                out[self.tails[j]] -= v;
            }
        }
        out
    }

    /// `(B^T d)_e` for the listed edges.
    pub fn apply_transpose_on(&self, d: &[f64], edges: &[usize]) -> Vec<f64> {
        edges.iter().map(|&e| d[self.heads[e]] - d[self.tails[e]]).collect()
    }

    /// Dense `B_T^T B_T + shift * I` for the columns in `edges`.
    pub fn gram(&self, edges: &[usize], shift: f64) -> DMatrix<f64> {
        let t = edges.len();
        let mut g = DMatrix::zeros(t, t);
        let mut incident: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.node_count];
        for (p, &e) in edges.iter().enumerate() {
            incident[self.heads[e]].push((p, 1.0));
            incident[self.tails[e]].push((p, -1.0));
        }
        for list in &incident {
            for &(p, sp) in list {
                for &(q, sq) in list {
                    g[(p, q)] += sp * sq;
                }
            }
        }
        for p in 0..t {
            g[(p, p)] += shift;
        }
        g
    }
}

/// Node divergence `Bf` (inflow minus outflow).
pub fn divergence(net: &FlowNetwork, f: &EdgeFlow) -> Result<Vec<f64>> {
    f.check_len(net.edge_count())?;
    Ok(build_incidence(net).apply(f.as_slice()))
}

/// Orients every undirected edge from its lower to its higher node id, keeping input order.
pub fn orient_undirected(name: impl Into<String>, node_count: usize, edges: &[(usize, usize)]) -> Result<FlowNetwork> {
    for (edge, &(a, b)) in edges.iter().enumerate() {
        if a == b {
            return Err(Error::SelfLoop { edge, node: a });
        }
    }
    FlowNetwork::new(name, node_count, edges.iter().map(|&(a, b)| (a.min(b), a.max(b))))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SubsetRole {
    Sensors,
    Targets,
    Candidates,
}

/// An ordered set of distinct edge ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeSubset {
    ids: Vec<usize>,
    role: SubsetRole,
}

impl EdgeSubset {
    pub fn new(ids: Vec<usize>, role: SubsetRole, m: usize) -> Result<Self> {
        validate_ids(&ids, m)?;
        Ok(Self { ids, role })
    }

    pub fn all(m: usize, role: SubsetRole) -> Self {
        Self {
            ids: (0..m).collect(),
            role,
        }
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn role(&self) -> SubsetRole {
        self.role
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

pub(crate) fn validate_ids(ids: &[usize], m: usize) -> Result<()> {
    let mut seen = vec![false; m];
    for &id in ids {
        if id >= m {
            return Err(Error::EdgeOutOfRange { id, len: m });
        }
        if std::mem::replace(&mut seen[id], true) {
            return Err(Error::DuplicateEdge(id));
        }
    }
    Ok(())
}

/// Edge ids in `0..m` not in `ids`, ascending.
pub fn complement(m: usize, ids: &[usize]) -> Vec<usize> {
    let mut mask = vec![true; m];
    for &i in ids {
        mask[i] = false;
    }
    (0..m).filter(|&i| mask[i]).collect()
}

/// The `m x |T|` 0/1 embedding of target coordinates into edge space.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SelectionMap {
    m: usize,
    targets: Vec<usize>,
}

pub fn selection_embedding(m: usize, targets: &[usize]) -> Result<SelectionMap> {
    validate_ids(targets, m)?;
    Ok(SelectionMap {
        m,
        targets: targets.to_vec(),
    })
}

impl SelectionMap {
    pub fn shape(&self) -> (usize, usize) {
        (self.m, self.targets.len())
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.m, self.targets.len());
        for (col, &row) in self.targets.iter().enumerate() {
            h[(row, col)] = 1.0;
        }
        h
    }

    /// `H_T f_T + f_S^0`.
    pub fn embed(&self, f_targets: &[f64], sensor_padded: &EdgeFlow) -> Result<EdgeFlow> {
        if f_targets.len() != self.targets.len() {
            return Err(Error::LengthMismatch {
                expected: self.targets.len(),
                actual: f_targets.len(),
            });
        }
        sensor_padded.check_len(self.m)?;
        let mut out = sensor_padded.as_slice().to_vec();
        for (&e, &v) in self.targets.iter().zip(f_targets) {
            out[e] += v;
        }
        Ok(EdgeFlow(out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cycle3() -> FlowNetwork {
        FlowNetwork::new("c3", 3, [(0, 1), (1, 2), (2, 0)]).unwrap()
    }

    #[test]
    fn single_edge_incidence() {
        let net = FlowNetwork::new("e", 2, [(0, 1)]).unwrap();
        let b = build_incidence(&net).to_dense();
        assert_eq!(b, DMatrix::from_row_slice(2, 1, &[-1.0, 1.0]));
    }

    #[test]
    fn cycle_incidence_columns() {
        let b = cycle3().incidence().to_dense();
        let expected = DMatrix::from_column_slice(3, 3, &[-1.0, 1.0, 0.0, 0.0, -1.0, 1.0, 1.0, 0.0, -1.0]);
        assert_eq!(b, expected);
    }

    #[test]
    fn divergence_examples() {
        let net = cycle3();
        let d = divergence(&net, &EdgeFlow::new(vec![1.0; 3])).unwrap();
        assert_eq!(d, vec![0.0; 3]);

        let e = FlowNetwork::new("e", 2, [(0, 1)]).unwrap();
        assert_eq!(divergence(&e, &EdgeFlow::new(vec![5.0])).unwrap(), vec![-5.0, 5.0]);

        // hub 0 with three spokes in and one out
        let star = FlowNetwork::new("star", 5, [(1, 0), (2, 0), (3, 0), (0, 4)]).unwrap();
        let d = divergence(&star, &EdgeFlow::new(vec![3.0, 4.0, 6.0, 10.0])).unwrap();
        assert_eq!(d[0], 3.0);

        assert!(matches!(
            divergence(&net, &EdgeFlow::new(vec![1.0; 2])),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn rejects_bad_edges() {
        assert!(matches!(
            FlowNetwork::new("x", 2, [(1, 1)]),
            Err(Error::SelfLoop { .. })
        ));
        assert!(matches!(
            FlowNetwork::new("x", 2, [(0, 2)]),
            Err(Error::NodeOutOfRange { .. })
        ));
    }

    #[test]
    fn orientation() {
        let net = orient_undirected("a", 2, &[(1, 0)]).unwrap();
        assert_eq!(net.edge(0), (0, 1));
        let net = orient_undirected("b", 3, &[(2, 1), (0, 2)]).unwrap();
        assert_eq!(net.edges().collect::<Vec<_>>(), vec![(1, 2), (0, 2)]);
        let net = orient_undirected("c", 3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        assert_eq!(net.edges().collect::<Vec<_>>(), vec![(0, 1), (1, 2), (0, 2)]);
        assert!(orient_undirected("d", 2, &[(1, 1)]).is_err());

        let again = orient_undirected("c", 3, &net.edges().collect::<Vec<_>>()).unwrap();
        assert_eq!(again, net);
    }

    #[test]
    fn selection_maps() {
        let h = selection_embedding(3, &[0, 2]).unwrap().to_dense();
        assert_eq!(h.shape(), (3, 2));
        assert_eq!(h[(0, 0)], 1.0);
        assert_eq!(h[(2, 1)], 1.0);
        assert_eq!(h.sum(), 2.0);

        assert_eq!(selection_embedding(2, &[]).unwrap().shape(), (2, 0));
        assert!(matches!(selection_embedding(3, &[1, 1]), Err(Error::DuplicateEdge(1))));
        assert!(matches!(
            selection_embedding(3, &[3]),
            Err(Error::EdgeOutOfRange { .. })
        ));
    }

    #[test]
    fn cycle_rank_counts_components() {
        assert_eq!(cycle3().cycle_rank(), 1);
        let forest = FlowNetwork::new("f", 4, [(0, 1), (2, 3)]).unwrap();
        assert_eq!(forest.component_count(), 2);
        assert_eq!(forest.cycle_rank(), 0);
    }

    #[test]
    fn gram_matches_dense_product() {
        let net = FlowNetwork::new("g", 4, [(0, 1), (1, 2), (2, 0), (2, 3), (0, 1)]).unwrap();
        let b = net.incidence();
        let cols = [4, 0, 3];
        let dense = b.to_dense().select_columns(cols.iter());
        let expected = dense.transpose() * &dense;
        assert_eq!(b.gram(&cols, 0.0), expected);
    }

    fn arb_network() -> impl Strategy<Value = FlowNetwork> {
        (2usize..12).prop_flat_map(|n| {
            prop::collection::vec((0..n, 0..n), 1..30).prop_map(move |pairs| {
                let edges: Vec<_> = pairs
                    .into_iter()
                    .map(|(a, b)| if a == b { (a, (a + 1) % n) } else { (a, b) })
                    .collect();
                FlowNetwork::new("p", n, edges).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn incidence_columns_sum_to_zero(net in arb_network()) {
            let b = net.incidence().to_dense();
            for col in b.column_iter() {
                prop_assert_eq!(col.sum(), 0.0);
                prop_assert_eq!(col.iter().filter(|v| **v != 0.0).count(), 2);
            }
        }

        #[test]
        fn embedding_reconstructs_flow(
            net in arb_network(),
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let m = net.edge_count();
            let f = EdgeFlow::new((0..m).map(|_| rng.random_range(-5.0..5.0)).collect());
            let sensors: Vec<usize> = (0..m).filter(|_| rng.random_bool(0.4)).collect();
            let targets = complement(m, &sensors);
            let h = selection_embedding(m, &targets).unwrap();
            let rebuilt = h.embed(&f.gather(&targets), &f.padded(&sensors)).unwrap();
            prop_assert_eq!(rebuilt, f);
        }

        #[test]
        fn circulations_have_zero_divergence(len in 2usize..10, value in -50.0f64..50.0) {
            let edges: Vec<_> = (0..len).map(|i| (i, (i + 1) % len)).collect();
            let net = FlowNetwork::new("ring", len + 1, edges.into_iter().chain([(len - 1, len)])).unwrap();
            let mut f = vec![value; len];
            f.push(0.0);
            let d = divergence(&net, &EdgeFlow::new(f)).unwrap();
            prop_assert!(d.iter().all(|v| *v == 0.0));
        }
    }
}

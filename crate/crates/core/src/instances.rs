//! Small instance generators used by tests, the benchmark harness and the acceptance suite.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{EdgeFlow, FlowNetwork};

/// Directed 3-cycle `0 -> 1 -> 2 -> 0`.
pub fn triangle() -> FlowNetwork {
    FlowNetwork::new("triangle", 3, [(0, 1), (1, 2), (2, 0)]).expect("valid triangle")
}

/// Two triangles `{0,1,2}` and `{3,4,5}` joined by the bridge `2 -> 3` (edge id 3).
pub fn barbell() -> FlowNetwork {
    FlowNetwork::new("barbell", 6, [(0, 1), (1, 2), (2, 0), (2, 3), (3, 4), (4, 5), (5, 3)]).expect("valid barbell")
}

/// A connected random multigraph: a random spanning tree plus extra random edges, each with a
/// random orientation. Requires `m >= n - 1` and `n >= 2`.
pub fn random_connected<R: Rng>(rng: &mut R, n: usize, m: usize) -> FlowNetwork {
    assert!(n >= 2 && m + 1 >= n, "need at least a spanning tree");
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut edges = Vec::with_capacity(m);
    for i in 1..n {
        let parent = order[rng.random_range(0..i)];
        edges.push((parent, order[i]));
    }
    while edges.len() < m {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a != b {
            edges.push((a, b));
        }
    }
    edges.shuffle(rng);
    let edges = edges
        .into_iter()
        .map(|(a, b)| if rng.random_bool(0.5) { (a, b) } else { (b, a) });
    FlowNetwork::new(format!("random-{n}-{m}"), n, edges).expect("valid random graph")
}

/// The subset-sum reduction gadget.
#[derive(Clone, Debug)]
pub struct ReductionInstance {
    pub net: FlowNetwork,
    pub flow: EdgeFlow,
    /// Edges `(x, t1)`, one per element of `X`, in input order.
    pub candidates: Vec<usize>,
    /// Edges `(z_i, t1)` carrying zero flow, usable as padding sensors.
    pub zero_edges: Vec<usize>,
    /// The single target edge `(t1, t2)`.
    pub target: usize,
}

/// Builds the gadget for `SUM(X, t)`: a vertex per element, hubs `t1`, `t2`, edges
/// `(x, t1)` with flow `x`, `(t1, t2)` with flow `t`, `(t2, x)` with flow `x`, and `|X|`
/// extra vertices feeding `t1` with zero flow.
pub fn subset_sum_reduction(xs: &[u64], total: u64) -> ReductionInstance {
    let k = xs.len();
    let (t1, t2) = (k, k + 1);
    let mut edges = Vec::new();
    let mut flow = Vec::new();
    let mut candidates = Vec::new();
    for (i, &x) in xs.iter().enumerate() {
        candidates.push(edges.len());
        edges.push((i, t1));
        flow.push(x as f64);
    }
    let target = edges.len();
    edges.push((t1, t2));
    flow.push(total as f64);
    for (i, &x) in xs.iter().enumerate() {
        edges.push((t2, i));
        flow.push(x as f64);
    }
    let mut zero_edges = Vec::new();
    for i in 0..k {
        zero_edges.push(edges.len());
        edges.push((k + 2 + i, t1));
        flow.push(0.0);
    }
    let net = FlowNetwork::new("subset-sum", 2 * k + 2, edges).expect("valid gadget");
    ReductionInstance {
        net,
        flow: EdgeFlow::new(flow),
        candidates,
        zero_edges,
        target,
    }
}

/// [`road_grid`] driven by a ChaCha8 stream seeded with `seed`.
pub fn seeded_road_grid(rows: usize, cols: usize, trips: usize, seed: u64) -> (FlowNetwork, EdgeFlow) {
    road_grid(&mut ChaCha8Rng::seed_from_u64(seed), rows, cols, trips)
}

/// A `rows x cols` street grid with a road in each direction between neighbours, loaded by
/// routing `trips` random origin-destination demands along BFS shortest paths. Produces a
/// road-like network whose flows are conserved except at trip endpoints.
pub fn road_grid<R: Rng>(rng: &mut R, rows: usize, cols: usize, trips: usize) -> (FlowNetwork, EdgeFlow) {
    let n = rows * cols;
    let id = |r: usize, c: usize| r * cols + c;
    let mut edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if c + 1 < cols {
                edges.push((id(r, c), id(r, c + 1)));
                edges.push((id(r, c + 1), id(r, c)));
            }
            if r + 1 < rows {
                edges.push((id(r, c), id(r + 1, c)));
                edges.push((id(r + 1, c), id(r, c)));
            }
        }
    }
    let mut out: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (e, &(a, b)) in edges.iter().enumerate() {
        out[a].push((b, e));
    }
    let mut flow = vec![0.0; edges.len()];
    for _ in 0..trips {
        let src = rng.random_range(0..n);
        let dst = rng.random_range(0..n);
        if src == dst {
            continue;
        }
        let demand = rng.random_range(10.0..500.0);
        let mut via = vec![usize::MAX; n];
        let mut seen = vec![false; n];
        seen[src] = true;
        let mut queue = VecDeque::from([src]);
        let mut order: Vec<usize> = Vec::new();
        while let Some(v) = queue.pop_front() {
            if v == dst {
                break;
            }
            order.clear();
            order.extend(0..out[v].len());
            order.shuffle(rng);
            for &i in &order {
                let (w, e) = out[v][i];
                if !seen[w] {
                    seen[w] = true;
                    via[w] = e;
                    queue.push_back(w);
                }
            }
        }
        let mut v = dst;
        while v != src {
            let e = via[v];
            flow[e] += demand;
            v = edges[e].0;
        }
    }
    let net = FlowNetwork::new(format!("grid-{rows}x{cols}"), n, edges).expect("valid grid");
    (net, EdgeFlow::new(flow))
}

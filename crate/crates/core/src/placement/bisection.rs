//! Flow-agnostic recursive spectral bisection.
//!
//! Parts are split by the sign of their Fiedler vector (positive entries on one side). After
//! every split the candidate edges crossing it are appended in id order. The largest pending
//! part is split next; disconnected parts fall apart into components without contributing edges.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::graph::FlowNetwork;
use crate::spectral::{fiedler_vector, laplacian};

pub fn recursive_bisection_order(net: &FlowNetwork, candidates: &[usize], k: usize) -> Vec<usize> {
    let n = net.node_count();
    let mut is_candidate = vec![false; net.edge_count()];
    for &c in candidates {
        is_candidate[c] = true;
    }
    let mut taken = vec![false; net.edge_count()];
    let mut order = Vec::with_capacity(k);

    // (size, smallest node reversed) so that ties go to the part holding the lower node id
    let mut pending: BinaryHeap<(usize, Reverse<usize>, Vec<usize>)> = BinaryHeap::new();
    let push = |pending: &mut BinaryHeap<_>, part: Vec<usize>| {
        if part.len() >= 2 {
            pending.push((part.len(), Reverse(part[0]), part));
        }
    };
    push(&mut pending, (0..n).collect());

    let mut local = vec![usize::MAX; n];
    while order.len() < k {
        let Some((_, _, part)) = pending.pop() else {
            break;
        };
        for (i, &v) in part.iter().enumerate() {
            local[v] = i;
        }
        let inner: Vec<usize> = (0..net.edge_count())
            .filter(|&e| {
                let (a, b) = net.edge(e);
                local[a] != usize::MAX && local[b] != usize::MAX
            })
            .collect();

        let components = components(
            part.len(),
            inner.iter().map(|&e| {
                let (a, b) = net.edge(e);
                (local[a], local[b])
            }),
        );
        if components.len() > 1 {
            for comp in components {
                push(&mut pending, comp.into_iter().map(|i| part[i]).collect());
            }
        } else {
            let lap = laplacian(
                part.len(),
                inner.iter().map(|&e| {
                    let (a, b) = net.edge(e);
                    (local[a], local[b])
                }),
            );
            let fiedler = fiedler_vector(&lap).expect("part has at least two nodes");
            let mut positive: Vec<bool> = fiedler.iter().map(|&x| x > 0.0).collect();
            if positive.iter().all(|&p| p) || positive.iter().all(|&p| !p) {
                // degenerate eigenvector: fall back to a median split
                let mut sorted = fiedler.clone();
                sorted.sort_by(f64::total_cmp);
                let median = sorted[sorted.len() / 2];
                positive = fiedler.iter().map(|&x| x >= median).collect();
            }
            for &e in &inner {
                let (a, b) = net.edge(e);
                if positive[local[a]] != positive[local[b]] && is_candidate[e] && !taken[e] {
                    taken[e] = true;
                    order.push(e);
                    if order.len() == k {
                        break;
                    }
                }
            }
            let (left, right): (Vec<usize>, Vec<usize>) = part.iter().partition(|&&v| positive[local[v]]);
            push(&mut pending, left);
            push(&mut pending, right);
        }
        for &v in &part {
            local[v] = usize::MAX;
        }
    }
    order
}

/// Connected components over local node ids, each sorted ascending.
fn components(n: usize, edges: impl Iterator<Item = (usize, usize)>) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (a, b) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for v in 0..n {
        let r = find(&mut parent, v);
        if slot[r] == usize::MAX {
            slot[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[r]].push(v);
    }
    groups
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;

    #[test]
    fn barbell_bridge_first() {
        let net = instances::barbell();
        let all: Vec<usize> = (0..net.edge_count()).collect();
        assert_eq!(recursive_bisection_order(&net, &all, 1), vec![3]);
    }

    #[test]
    fn complete_graph_cut_is_deterministic() {
        let edges = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];
        let net = FlowNetwork::new("k4", 4, edges).unwrap();
        let all: Vec<usize> = (0..6).collect();
        let first = recursive_bisection_order(&net, &all, 1);
        assert_eq!(first.len(), 1);
        assert_eq!(recursive_bisection_order(&net, &all, 1), first);
        let three = recursive_bisection_order(&net, &all, 3);
        assert_eq!(three[0], first[0]);
    }

    #[test]
    fn covers_every_candidate_eventually() {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(3);
        let net = instances::random_connected(&mut rng, 12, 30);
        let candidates: Vec<usize> = (0..30).filter(|e| e % 2 == 0).collect();
        let order = recursive_bisection_order(&net, &candidates, candidates.len());
        let mut sorted = order.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, candidates);
    }

    #[test]
    fn disconnected_input_is_split_into_components() {
        // two separate barbells: the first split is free, the bridges come first
        let mut edges: Vec<(usize, usize)> = instances::barbell().edges().collect();
        edges.extend(instances::barbell().edges().map(|(a, b)| (a + 6, b + 6)));
        let net = FlowNetwork::new("two", 12, edges).unwrap();
        let all: Vec<usize> = (0..14).collect();
        let order = recursive_bisection_order(&net, &all, 2);
        assert_eq!(order, vec![3, 10]);
    }
}

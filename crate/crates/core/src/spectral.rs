//! Singular structure of the incidence matrix and Laplacian eigenvectors.
//!
//! The right singular vectors of `B` split edge space into the cut space (nonzero singular
//! values, `n - c` of them for `c` components) and the cycle space (the null space of `B`).

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::graph::{FlowNetwork, IncidenceMatrix};

/// Entries at or below this magnitude are treated as zero when fixing eigenvector signs.
const SIGN_TOL: f64 = 1e-10;

/// Flips `v` so that its first entry of non-negligible magnitude is positive.
pub fn normalize_sign(v: &mut [f64]) {
    if let Some(first) = v.iter().find(|x| x.abs() > SIGN_TOL) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Right singular vectors of `B` with their singular values, descending. Values beyond the rank
/// are exact zeros, so there are always `m` of them.
#[derive(Clone, Debug)]
pub struct EdgeSpectrum {
    singular_values: Vec<f64>,
    vectors: DMatrix<f64>,
    rank: usize,
}

impl EdgeSpectrum {
    /// Eigendecomposition of `B^T B`. The rank is the combinatorial one, `n - c`.
    pub fn compute(net: &FlowNetwork) -> Self {
        let b = net.incidence();
        let rank = net.node_count() - net.component_count();
        Self::with_rank(&b, rank)
    }

    /// Same as [`compute`](Self::compute), with the rank taken from the components of `b`.
    pub fn from_incidence(b: &IncidenceMatrix) -> Self {
        let all: Vec<usize> = (0..b.ncols()).collect();
        let components = crate::prediction::target_components(b, &all).len();
        Self::with_rank(b, b.nrows() - components)
    }

    fn with_rank(b: &IncidenceMatrix, rank: usize) -> Self {
        let m = b.ncols();
        let all: Vec<usize> = (0..m).collect();
        let gram = b.gram(&all, 0.0);
        let eigen = SymmetricEigen::new(gram);
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&i, &j| eigen.eigenvalues[j].total_cmp(&eigen.eigenvalues[i]));

        let mut vectors = DMatrix::zeros(m, m);
        let mut singular_values = vec![0.0; m];
        for (col, &i) in order.iter().enumerate() {
            let mut v: Vec<f64> = eigen.eigenvectors.column(i).iter().copied().collect();
            normalize_sign(&mut v);
            vectors.set_column(col, &DVector::from_vec(v));
            if col < rank {
                singular_values[col] = eigen.eigenvalues[i].max(0.0).sqrt();
            }
        }
        Self {
            singular_values,
            vectors,
            rank,
        }
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn cycle_dimension(&self) -> usize {
        self.vectors.ncols() - self.rank
    }

    /// `V_R`: the leftmost `rank` columns.
    pub fn cut_basis(&self) -> DMatrix<f64> {
        self.vectors.columns(0, self.rank).into_owned()
    }

    /// `V_C`: the rightmost `m - rank` columns.
    pub fn cycle_basis(&self) -> DMatrix<f64> {
        self.vectors.columns(self.rank, self.cycle_dimension()).into_owned()
    }

    /// `||V_R^T f||`, the norm of the non-conserved part of `f`.
    pub fn cut_norm(&self, f: &[f64]) -> f64 {
        let f = DVector::from_column_slice(f);
        (self.vectors.columns(0, self.rank).transpose() * f).norm()
    }
}

/// Unnormalized Laplacian of an undirected graph given by node-pair edges (multiplicities add).
pub fn laplacian(node_count: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(node_count, node_count);
    for (a, b) in edges {
        l[(a, a)] += 1.0;
        l[(b, b)] += 1.0;
        l[(a, b)] -= 1.0;
        l[(b, a)] -= 1.0;
    }
    l
}

/// Eigenvector of the second-smallest Laplacian eigenvalue, sign-normalized.
/// Returns `None` for fewer than two nodes.
pub fn fiedler_vector(laplacian: &DMatrix<f64>) -> Option<Vec<f64>> {
    let n = laplacian.nrows();
    if n < 2 {
        return None;
    }
    let eigen = SymmetricEigen::new(laplacian.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eigen.eigenvalues[i].total_cmp(&eigen.eigenvalues[j]));
    let mut v: Vec<f64> = eigen.eigenvectors.column(order[1]).iter().copied().collect();
    normalize_sign(&mut v);
    Some(v)
}

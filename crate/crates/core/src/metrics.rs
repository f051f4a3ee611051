//! Prediction quality metrics and the cycle-basis reconstruction bound.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{complement, validate_ids, IncidenceMatrix};
use crate::spectral::EdgeSpectrum;

/// Which edges a report covers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    /// Every edge, sensors included (their predictions equal the truth).
    All,
    /// Only the edges without a sensor.
    Unlabeled,
    /// A caller-chosen edge set.
    Custom,
}

impl Scope {
    pub fn name(self) -> &'static str {
        match self {
            Scope::All => "all",
            Scope::Unlabeled => "unlabeled",
            Scope::Custom => "custom",
        }
    }

    /// The scored edge ids for a given sensor set.
    pub fn edges(self, m: usize, sensors: &[usize]) -> Vec<usize> {
        match self {
            Scope::Unlabeled => complement(m, sensors),
            Scope::All | Scope::Custom => (0..m).collect(),
        }
    }
}

impl std::fmt::Display for Scope {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "all" => Ok(Scope::All),
            "unlabeled" | "targets" => Ok(Scope::Unlabeled),
            other => Err(Error::InvalidParameter(format!("unknown scope {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Pearson correlation; `None` when either side has zero variance.
    pub corr: Option<f64>,
    pub mse: f64,
    pub mae: f64,
    /// Mean absolute percentage error over edges with nonzero true flow; `None` when there are
    /// none.
    pub mape: Option<f64>,
    pub mape_support: usize,
    pub max_err: f64,
    pub scope: Scope,
}

/// Scores `predicted` against `truth` on `edges`.
pub fn score(predicted: &[f64], truth: &[f64], edges: &[usize]) -> Result<MetricReport> {
    if predicted.len() != truth.len() {
        return Err(Error::LengthMismatch {
            expected: truth.len(),
            actual: predicted.len(),
        });
    }
    validate_ids(edges, truth.len())?;
    if edges.is_empty() {
        return Err(Error::InvalidParameter("empty scoring scope".into()));
    }
    let count = edges.len() as f64;
    let (mut sq, mut abs, mut max_err) = (0.0, 0.0, 0.0f64);
    let (mut ape, mut mape_support) = (0.0, 0usize);
    for &e in edges {
        let diff = truth[e] - predicted[e];
        sq += diff * diff;
        abs += diff.abs();
        max_err = max_err.max(diff.abs());
        if truth[e] != 0.0 {
            ape += (diff / truth[e]).abs();
            mape_support += 1;
        }
    }
    Ok(MetricReport {
        corr: correlation(edges.iter().map(|&e| (predicted[e], truth[e]))),
        mse: sq / count,
        mae: abs / count,
        mape: (mape_support > 0).then(|| ape / mape_support as f64),
        mape_support,
        max_err,
        scope: Scope::Custom,
    })
}

/// Scores a full prediction on the edges selected by `scope`.
pub fn score_scope(predicted: &[f64], truth: &[f64], sensors: &[usize], scope: Scope) -> Result<MetricReport> {
    let edges = scope.edges(truth.len(), sensors);
    let mut report = score(predicted, truth, &edges)?;
    report.scope = scope;
    Ok(report)
}

fn correlation(pairs: impl Iterator<Item = (f64, f64)> + Clone) -> Option<f64> {
    let n = pairs.clone().count() as f64;
    let (sx, sy) = pairs.clone().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (sx / n, sy / n);
    let (mut cov, mut vx, mut vy) = (0.0, 0.0, 0.0);
    for (x, y) in pairs {
        cov += (x - mx) * (y - my);
        vx += (x - mx) * (x - mx);
        vy += (y - my) * (y - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some((cov / (vx.sqrt() * vy.sqrt())).clamp(-1.0, 1.0))
}

/// Smallest singular value below which a sensor block counts as rank deficient.
const RANK_TOL: f64 = 1e-10;

/// `(1 / sigma_min(V_SC) + 1) ||V_R^T f||`: an upper bound on the reconstruction error from
/// sensors `S` when `|S|` equals the cycle-space dimension.
pub fn rrqr_bound(b: &IncidenceMatrix, sensors: &[usize], f: &[f64]) -> Result<f64> {
    rrqr_bound_with(&EdgeSpectrum::from_incidence(b), sensors, f)
}

pub fn rrqr_bound_with(spectrum: &EdgeSpectrum, sensors: &[usize], f: &[f64]) -> Result<f64> {
    let m = spectrum.vectors().nrows();
    if f.len() != m {
        return Err(Error::LengthMismatch {
            expected: m,
            actual: f.len(),
        });
    }
    validate_ids(sensors, m)?;
    let d = spectrum.cycle_dimension();
    if sensors.len() != d {
        return Err(Error::InvalidParameter(format!(
            "bound needs {d} sensors (the cycle-space dimension), got {}",
            sensors.len()
        )));
    }
    let sigma = sensor_block_sigma_min(spectrum, sensors);
    if sigma <= RANK_TOL {
        return Err(Error::RankDeficient(sigma));
    }
    Ok((1.0 / sigma + 1.0) * spectrum.cut_norm(f))
}

/// Smallest singular value of the cycle-basis rows picked by `sensors` (0 for an empty block).
pub fn sensor_block_sigma_min(spectrum: &EdgeSpectrum, sensors: &[usize]) -> f64 {
    let basis = spectrum.cycle_basis();
    if sensors.len() < basis.ncols() || basis.ncols() == 0 {
        return 0.0;
    }
    let block = DMatrix::from_fn(sensors.len(), basis.ncols(), |i, j| basis[(sensors[i], j)]);
    let sv: DVector<f64> = block.singular_values();
    sv.min()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{EdgeFlow, FlowNetwork};
    use crate::instances;
    use crate::prediction::{predict_flows, PredictionProblem};
    use proptest::prelude::*;

    #[test]
    fn exact_prediction() {
        let f = [1.0, -2.0, 7.0];
        let r = score(&f, &f, &[0, 1, 2]).unwrap();
        assert_eq!(r.corr, Some(1.0));
        assert_eq!((r.mse, r.mae, r.max_err), (0.0, 0.0, 0.0));
        assert_eq!(r.mape, Some(0.0));
    }

    #[test]
    fn hand_example() {
        let r = score(&[1.0, 2.0, 5.0], &[1.0, 2.0, 3.0], &[0, 1, 2]).unwrap();
        assert!((r.mse - 4.0 / 3.0).abs() < 1e-12);
        assert!((r.mae - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.max_err, 2.0);
        assert!((r.mape.unwrap() - 2.0 / 9.0).abs() < 1e-12);
        assert_eq!(r.mape_support, 3);
    }

    #[test]
    fn degenerate_inputs() {
        let r = score(&[1.0, 1.0], &[0.0, 2.0], &[0, 1]).unwrap();
        assert_eq!(r.corr, None);
        assert_eq!(r.mape_support, 1);
        assert!(score(&[1.0], &[1.0, 2.0], &[0]).is_err());
        assert!(score(&[1.0], &[1.0], &[]).is_err());
        let zero = score(&[1.0], &[0.0], &[0]).unwrap();
        assert_eq!(zero.mape, None);
    }

    #[test]
    fn scopes() {
        let truth = [1.0, 2.0, 3.0, 4.0];
        let pred = [1.0, 2.0, 0.0, 4.0];
        let all = score_scope(&pred, &truth, &[0, 1], Scope::All).unwrap();
        let unl = score_scope(&pred, &truth, &[0, 1], Scope::Unlabeled).unwrap();
        assert_eq!(all.scope, Scope::All);
        assert!((all.mse - 9.0 / 4.0).abs() < 1e-12);
        assert!((unl.mse - 9.0 / 2.0).abs() < 1e-12);
        assert_eq!("targets".parse::<Scope>().unwrap(), Scope::Unlabeled);
    }

    proptest! {
        #[test]
        fn reordering_is_invisible(pairs in prop::collection::vec((-50.0..50.0f64, -50.0..50.0f64), 2..30), seed in any::<u64>()) {
            let (pred, truth): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
            let ids: Vec<usize> = (0..pred.len()).collect();
            let mut perm = ids.clone();
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
            rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
            let p2: Vec<f64> = perm.iter().map(|&i| pred[i]).collect();
            let t2: Vec<f64> = perm.iter().map(|&i| truth[i]).collect();
            let a = score(&pred, &truth, &ids).unwrap();
            let b = score(&p2, &t2, &ids).unwrap();
            prop_assert!((a.mse - b.mse).abs() <= 1e-9 * (1.0 + a.mse));
            prop_assert!((a.mae - b.mae).abs() <= 1e-9 * (1.0 + a.mae));
            prop_assert_eq!(a.max_err, b.max_err);
            match (a.corr, b.corr) {
                (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-9),
                (x, y) => prop_assert_eq!(x, y),
            }
        }

        #[test]
        fn worse_predictions_never_score_better(
            pairs in prop::collection::vec((-50.0..50.0f64, -50.0..50.0f64), 1..30),
            extra in prop::collection::vec(0.0..10.0f64, 30),
        ) {
            let (pred, truth): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
            let worse: Vec<f64> = pred
                .iter()
                .zip(&truth)
                .zip(&extra)
                .map(|((p, t), x)| if p >= t { p + x } else { p - x })
                .collect();
            let ids: Vec<usize> = (0..pred.len()).collect();
            let a = score(&pred, &truth, &ids).unwrap();
            let b = score(&worse, &truth, &ids).unwrap();
            prop_assert!(b.mse >= a.mse - 1e-12);
            prop_assert!(b.mae >= a.mae - 1e-12);
            prop_assert!(b.max_err >= a.max_err);
        }
    }

    #[test]
    fn triangle_bound() {
        let net = instances::triangle();
        let spectrum = EdgeSpectrum::compute(&net);
        assert!((sensor_block_sigma_min(&spectrum, &[0]) - 1.0 / 3f64.sqrt()).abs() < 1e-12);
        let f = [2.0, 1.0, 0.5];
        let bound = rrqr_bound(&net.incidence(), &[0], &f).unwrap();
        let expected = (3f64.sqrt() + 1.0) * spectrum.cut_norm(&f);
        assert!((bound - expected).abs() < 1e-9);
    }

    #[test]
    fn circulation_has_zero_bound_and_exact_reconstruction() {
        let net = instances::triangle();
        let f = EdgeFlow::new(vec![4.0, 4.0, 4.0]);
        let bound = rrqr_bound(&net.incidence(), &[1], f.as_slice()).unwrap();
        assert!(bound < 1e-12);
        let b = net.incidence();
        let pred = predict_flows(&PredictionProblem::from_flow(&b, &[1], &f, 1e-6).unwrap()).unwrap();
        for (p, t) in pred.as_slice().iter().zip(f.as_slice()) {
            assert!((p - t).abs() < 1e-9);
        }
    }

    #[test]
    fn rank_deficient_blocks_are_flagged() {
        // two triangles sharing node 2: sensors on one triangle only cannot see the other cycle
        let net = FlowNetwork::new("bowtie", 5, [(0, 1), (1, 2), (2, 0), (2, 3), (3, 4), (4, 2)]).unwrap();
        let f = [1.0; 6];
        assert!(matches!(
            rrqr_bound(&net.incidence(), &[0, 1], &f),
            Err(Error::RankDeficient(_))
        ));
        assert!(rrqr_bound(&net.incidence(), &[0, 3], &f).is_ok());
        assert!(matches!(
            rrqr_bound(&net.incidence(), &[0], &f),
            Err(Error::InvalidParameter(_))
        ));
    }
}

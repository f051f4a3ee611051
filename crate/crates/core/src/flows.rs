//! Synthetic near-conserved flows and noisy flow estimates.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EdgeFlow, IncidenceMatrix};
use crate::spectral::EdgeSpectrum;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    /// Flow magnitude.
    pub b: f64,
    /// Non-conservation control: smaller values favour the cycle space more strongly.
    pub eps: f64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self { b: 20.0, eps: 0.1 }
    }
}

impl SyntheticParams {
    fn check(&self) -> Result<()> {
        if self.eps > 0.0 && self.eps.is_finite() && self.b.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "synthetic flow needs eps > 0 (got b={}, eps={})",
                self.b, self.eps
            )))
        }
    }
}

/// `f = sum_i b / (rho_i + eps) V_i` over all `m` right singular vectors of `B`, with
/// `rho_i = 0` beyond the rank. Cycle-space directions get the largest weight `b / eps`.
pub fn synthetic_flow(b: &IncidenceMatrix, params: SyntheticParams) -> Result<EdgeFlow> {
    params.check()?;
    Ok(synthetic_from_spectrum(&EdgeSpectrum::from_incidence(b), params))
}

/// The per-vector weights `b / (rho_i + eps)`.
pub fn synthetic_weights(spectrum: &EdgeSpectrum, params: SyntheticParams) -> Vec<f64> {
    spectrum
        .singular_values()
        .iter()
        .map(|rho| params.b / (rho + params.eps))
        .collect()
}

pub fn synthetic_from_spectrum(spectrum: &EdgeSpectrum, params: SyntheticParams) -> EdgeFlow {
    let weights = nalgebra::DVector::from_vec(synthetic_weights(spectrum, params));
    let f = spectrum.vectors() * weights;
    EdgeFlow::new(f.iter().copied().collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    /// Noise standard deviation as a multiple of the flow's standard deviation.
    pub r: f64,
    pub seed: u64,
}

/// Population standard deviation.
pub fn std_dev(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// `f_i + e_i` with `e_i ~ N(0, (r sigma)^2)` i.i.d., `sigma` the standard deviation of `f`.
pub fn add_noise(f: &EdgeFlow, params: NoiseParams) -> Result<EdgeFlow> {
    if !(params.r >= 0.0 && params.r.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "noise ratio {} must be >= 0",
            params.r
        )));
    }
    let scale = params.r * std_dev(f.as_slice());
    if scale == 0.0 {
        return Ok(f.clone());
    }
    let normal = Normal::new(0.0, scale).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    Ok(EdgeFlow::new(
        f.as_slice().iter().map(|v| v + normal.sample(&mut rng)).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::divergence;
    use crate::instances;

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn triangle_weights_and_ratio() {
        let net = instances::triangle();
        let spectrum = EdgeSpectrum::compute(&net);
        let w = synthetic_weights(&spectrum, SyntheticParams::default());
        let side = 20.0 / (3f64.sqrt() + 0.1);
        assert!((w[0] - side).abs() < 1e-9 && (w[1] - side).abs() < 1e-9);
        assert!((w[2] - 200.0).abs() < 1e-9);

        let f = synthetic_flow(&net.incidence(), SyntheticParams::default()).unwrap();
        let ratio = norm(&divergence(&net, &f).unwrap()) / norm(f.as_slice());
        // ||Bf|| = sqrt(6) side, ||f|| = sqrt(2 side^2 + 200^2)
        let expected = 6f64.sqrt() * side / (2.0 * side * side + 200.0 * 200.0).sqrt();
        assert!((ratio - expected).abs() < 1e-9);
        assert!((ratio - 0.1333).abs() < 1e-3);
    }

    #[test]
    fn zero_magnitude_gives_zero_flow() {
        let f = synthetic_flow(&instances::barbell().incidence(), SyntheticParams { b: 0.0, eps: 0.1 }).unwrap();
        assert!(f.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn eps_must_be_positive() {
        let b = instances::triangle().incidence();
        assert!(synthetic_flow(&b, SyntheticParams { b: 20.0, eps: 0.0 }).is_err());
        assert!(synthetic_flow(&b, SyntheticParams { b: 20.0, eps: -1.0 }).is_err());
    }

    #[test]
    fn random_graphs_are_near_conserved() {
        let mut rng = <ChaCha8Rng as SeedableRng>::seed_from_u64(17);
        for i in 0..20 {
            let n = 6 + i;
            let net = instances::random_connected(&mut rng, n, n + 3 + i);
            let f = synthetic_flow(&net.incidence(), SyntheticParams::default()).unwrap();
            let ratio = norm(&divergence(&net, &f).unwrap()) / norm(f.as_slice());
            assert!(ratio < 0.5, "{ratio}");
        }
    }

    #[test]
    fn zero_ratio_is_identity() {
        let f = EdgeFlow::new(vec![1.0, -4.0, 2.5]);
        assert_eq!(add_noise(&f, NoiseParams { r: 0.0, seed: 3 }).unwrap(), f);
        assert!(add_noise(&f, NoiseParams { r: -0.5, seed: 3 }).is_err());
    }

    #[test]
    fn noise_is_seeded() {
        let f = EdgeFlow::new((0..50).map(|i| i as f64).collect());
        let a = add_noise(&f, NoiseParams { r: 1.0, seed: 8 }).unwrap();
        let b = add_noise(&f, NoiseParams { r: 1.0, seed: 8 }).unwrap();
        let c = add_noise(&f, NoiseParams { r: 1.0, seed: 9 }).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn noise_scale_matches_flow_spread() {
        // alternating +-3 has sigma = 3
        let n = 100_000;
        let f = EdgeFlow::new((0..n).map(|i| if i % 2 == 0 { 3.0 } else { -3.0 }).collect());
        let noisy = add_noise(&f, NoiseParams { r: 1.0, seed: 1 }).unwrap();
        let noise: Vec<f64> = noisy.as_slice().iter().zip(f.as_slice()).map(|(a, b)| a - b).collect();
        let mean = noise.iter().sum::<f64>() / n as f64;
        let sd = std_dev(&noise);
        assert!((sd / 3.0 - 1.0).abs() < 0.02, "{sd}");
        // three standard errors of the mean
        assert!(mean.abs() < 3.0 * 3.0 / (n as f64).sqrt());
    }
}

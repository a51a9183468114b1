//! Friedman benchmark data with a controlled signal-to-noise ratio.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::DataMatrix;
use crate::error::{Error, Result};
use crate::prior::sample_normal;
use crate::sampler::chain_rng;

/// `10 sin(π x1 x2) + 20 (x3 - 0.5)² + 10 x4 + 5 x5`; extra coordinates are
/// ignored.
pub fn friedman(x: &[f64]) -> f64 {
    assert!(x.len() >= 5, "friedman needs at least 5 coordinates");
    10.0 * (PI * x[0] * x[1]).sin() + 20.0 * (x[2] - 0.5).powi(2) + 10.0 * x[3] + 5.0 * x[4]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub p: usize,
    /// Empirical signal variance over noise variance; infinity means no noise.
    pub snr: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.p < 5 {
            bad.push(format!("p ≥ 5 required, got {}", self.p));
        }
        if !(self.snr > 0.0) {
            bad.push(format!("snr must be > 0, got {}", self.snr));
        }
        if self.n < 2 {
            bad.push(format!("n >= 2 required, got {}", self.n));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub data: DataMatrix,
    /// Noise-free Friedman values per row.
    pub f_true: Vec<f64>,
    pub sigma_eps: f64,
}

fn population_variance(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
}

fn sample_rows<R: Rng + ?Sized>(rng: &mut R, n: usize, p: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..p).map(|_| rng.random::<f64>()).collect()).collect()
}

fn assemble<R: Rng + ?Sized>(rng: &mut R, rows: Vec<Vec<f64>>, f_true: Vec<f64>, sigma_eps: f64) -> Result<SyntheticData> {
    let y = f_true
        .iter()
        .map(|f| if sigma_eps > 0.0 { f + sample_normal(rng, 0.0, sigma_eps * sigma_eps) } else { *f })
        .collect();
    Ok(SyntheticData {
        data: DataMatrix::from_rows(&rows, y)?,
        f_true,
        sigma_eps,
    })
}

/// Rows uniform on `(0,1)^p`; noise variance set from the in-sample signal
/// variance so that `Var(f) / σ_ε² = snr` exactly on the generated rows.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = chain_rng(spec.seed, 0);
    let rows = sample_rows(&mut rng, spec.n, spec.p);
    let f_true: Vec<f64> = rows.iter().map(|r| friedman(r)).collect();
    let sigma_eps = if spec.snr.is_infinite() {
        0.0
    } else {
        (population_variance(&f_true) / spec.snr).sqrt()
    };
    assemble(&mut rng, rows, f_true, sigma_eps)
}

/// Independent rows from the same design with a given noise level, e.g. a
/// held-out set for a training sample made by [`generate`].
pub fn generate_with_noise(n: usize, p: usize, sigma_eps: f64, seed: u64) -> Result<SyntheticData> {
    if p < 5 {
        return Err(Error::Config(vec![format!("p ≥ 5 required, got {p}")]));
    }
    let mut rng = chain_rng(seed, 1);
    let rows = sample_rows(&mut rng, n, p);
    let f_true = rows.iter().map(|r| friedman(r)).collect();
    assemble(&mut rng, rows, f_true, sigma_eps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        assert!((friedman(&[0.5; 5]) - 14.571067811865476).abs() < 1e-12);
        assert!((friedman(&[0.0; 5]) - 5.0).abs() < 1e-12);
        assert!(friedman(&[1.0, 1.0, 0.5, 0.0, 0.0]).abs() < 1e-12);
        assert_eq!(friedman(&[0.5; 8]), friedman(&[0.5; 5]));
    }

    #[test]
    fn noise_free_limit() {
        let s = generate(&SyntheticSpec { n: 50, p: 6, snr: f64::INFINITY, seed: 3 }).unwrap();
        assert_eq!(s.data.y(), s.f_true.as_slice());
        assert_eq!(s.sigma_eps, 0.0);
    }

    #[test]
    fn snr_holds_in_sample() {
        let s = generate(&SyntheticSpec { n: 300, p: 5, snr: 5.0, seed: 4 }).unwrap();
        let ratio = population_variance(&s.f_true) / (s.sigma_eps * s.sigma_eps);
        assert!((ratio - 5.0).abs() < 1e-10);
    }

    #[test]
    fn signal_variance_matches_monte_carlo() {
        // 1e7-point Monte Carlo of the Friedman function on U(0,1)^5: 23.82
        let s = generate(&SyntheticSpec { n: 10_000, p: 10, snr: 5.0, seed: 11 }).unwrap();
        let v = population_variance(&s.f_true);
        assert!((v - 23.8).abs() < 1.0, "{v}");
    }

    #[test]
    fn deterministic_and_noise_columns_uncorrelated() {
        let spec = SyntheticSpec { n: 4000, p: 8, snr: 5.0, seed: 21 };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.data, b.data);
        let n = a.data.n() as f64;
        let fm = a.f_true.iter().sum::<f64>() / n;
        for j in 5..8 {
            let col = a.data.column(j);
            let cm = col.iter().sum::<f64>() / n;
            let cov: f64 = col.iter().zip(&a.f_true).map(|(x, f)| (x - cm) * (f - fm)).sum::<f64>() / n;
            let corr = cov / (population_variance(col).sqrt() * population_variance(&a.f_true).sqrt());
            // 4 standard errors of a null correlation
            assert!(corr.abs() < 4.0 / n.sqrt(), "column {j}: {corr}");
        }
    }

    #[test]
    fn small_p_rejected() {
        assert!(generate(&SyntheticSpec { n: 10, p: 4, snr: 5.0, seed: 0 }).is_err());
        assert!(generate_with_noise(10, 4, 1.0, 0).is_err());
    }
}

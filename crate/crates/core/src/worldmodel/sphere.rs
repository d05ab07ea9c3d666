use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{normalize, UnitEmbedding};
use crate::rng::StreamRng;

/// Continuous world: class means on the unit sphere, samples are
/// `normalize(mean_c + noise_scale * z)` with `z` standard normal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphereMixture {
    class_means: Vec<UnitEmbedding>,
    noise_scale: f64,
    prior: Vec<f64>,
}

impl SphereMixture {
    pub fn new(class_means: Vec<UnitEmbedding>, noise_scale: f64, prior: Vec<f64>) -> Result<Self> {
        if class_means.is_empty() {
            return Err(Error::InvalidArgument("no class means".into()));
        }
        let m = class_means[0].dim();
        if let Some(bad) = class_means.iter().find(|c| c.dim() != m) {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: bad.dim(),
            });
        }
        if !(noise_scale > 0.0) || !noise_scale.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "noise_scale must be positive, got {noise_scale}"
            )));
        }
        if prior.len() != class_means.len() {
            return Err(Error::PriorMismatch(format!(
                "prior has {} entries for {} classes",
                prior.len(),
                class_means.len()
            )));
        }
        if prior.iter().any(|p| !(*p > 0.0)) || (prior.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::PriorMismatch("prior must be positive and sum to 1".into()));
        }
        Ok(Self {
            class_means,
            noise_scale,
            prior,
        })
    }

    /// `classes` uniformly weighted random means in `dim` dimensions.
    pub fn random(classes: usize, dim: usize, noise_scale: f64, seed: u64) -> Result<Self> {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = crate::rng::substream(seed, 0);
        let means = (0..classes)
            .map(|_| {
                let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                normalize(&v)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(means, noise_scale, vec![1.0 / classes as f64; classes])
    }

    pub fn num_classes(&self) -> usize {
        self.class_means.len()
    }

    pub fn dim(&self) -> usize {
        self.class_means[0].dim()
    }

    pub fn noise_scale(&self) -> f64 {
        self.noise_scale
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    pub fn class_means(&self) -> &[UnitEmbedding] {
        &self.class_means
    }

    pub fn sample(&self, class: usize, rng: &mut StreamRng) -> Vec<f64> {
        use rand_distr::{Distribution, StandardNormal};
        let mean = self.class_means[class].coords();
        loop {
            let v: Vec<f64> = mean
                .iter()
                .map(|m| {
                    let z: f64 = StandardNormal.sample(rng);
                    m + self.noise_scale * z
                })
                .collect();
            // zero-norm draws have probability zero; resample rather than fail
            if let Ok(u) = normalize(&v) {
                return u.into_inner();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::norm;

    #[test]
    fn samples_are_unit_and_reproducible() {
        let w = SphereMixture::random(3, 5, 0.3, 4).unwrap();
        let mut a = crate::rng::substream(1, 0);
        let mut b = crate::rng::substream(1, 0);
        for c in 0..3 {
            let x = w.sample(c, &mut a);
            assert!((norm(&x) - 1.0).abs() < 1e-12);
            assert_eq!(x, w.sample(c, &mut b));
        }
    }

    #[test]
    fn rejects_bad_noise() {
        let w = SphereMixture::random(2, 3, 0.3, 4).unwrap();
        assert!(SphereMixture::new(w.class_means().to_vec(), 0.0, vec![0.5, 0.5]).is_err());
        assert!(SphereMixture::new(w.class_means().to_vec(), 0.1, vec![1.0]).is_err());
    }
}

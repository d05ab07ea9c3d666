//! Synthetic latent-class worlds and their samplers.

mod discrete;
mod format;
mod sampling;
mod sphere;

pub use discrete::{
    build_discrete, marginal, negative_dist, positive_dist, random_mixture, DiscreteClassMixture,
    MixtureConfig, MixtureTables, PRESETS, TABLE_TOLERANCE,
};
pub use format::{parse_mixture, write_mixture, MIXTURE_FORMAT_VERSION};
pub use sampling::{
    sample_sphere_triple, sample_triple, CdfTable, DiscreteSampler, LabeledPoint, NegativeMode,
    TripleConfig, TripleSample,
};
pub use sphere::SphereMixture;

use crate::rng::StreamRng;

/// A world that can hand out labelled views for training.
pub trait World: Sync {
    fn num_classes(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn prior(&self) -> &[f64];
    /// One view of latent class `class`: a fresh draw from `p(.|class)`.
    fn draw_view(&self, class: usize, rng: &mut StreamRng) -> Vec<f64>;

    fn draw_class(&self, rng: &mut StreamRng) -> usize {
        use rand::Rng;
        CdfTable::new(self.prior()).pick(rng.random())
    }
}

impl World for SphereMixture {
    fn num_classes(&self) -> usize {
        SphereMixture::num_classes(self)
    }
    fn input_dim(&self) -> usize {
        self.dim()
    }
    fn prior(&self) -> &[f64] {
        SphereMixture::prior(self)
    }
    fn draw_view(&self, class: usize, rng: &mut StreamRng) -> Vec<f64> {
        self.sample(class, rng)
    }
}

impl World for DiscreteClassMixture {
    fn num_classes(&self) -> usize {
        DiscreteClassMixture::num_classes(self)
    }
    fn input_dim(&self) -> usize {
        self.feature_dim()
    }
    fn prior(&self) -> &[f64] {
        DiscreteClassMixture::prior(self)
    }
    fn draw_view(&self, class: usize, rng: &mut StreamRng) -> Vec<f64> {
        use rand::Rng;
        let x = CdfTable::new(self.conditional(class)).pick(rng.random());
        self.points()[x].clone()
    }
}

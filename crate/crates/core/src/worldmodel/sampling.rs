use rand::Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;

use super::discrete::{class_negative_dist, marginal, DiscreteClassMixture};
use super::sphere::SphereMixture;
use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// Where the `u_i` come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NegativeMode {
    /// Unlabeled draws from the marginal `p`.
    Biased,
    /// Draws from the anchor's negative distribution `p-_x`.
    TrueNegatives,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TripleConfig {
    /// Number of `u_i`.
    pub negatives: usize,
    /// Number of `v_i`.
    pub positives: usize,
    pub mode: NegativeMode,
    /// Use `v_1 = x+` instead of a fresh positive draw.
    pub reuse_positive: bool,
}

/// One draw of `(x, x+, {u_i}, {v_i})`.
#[derive(Debug, Clone, PartialEq)]
pub struct TripleSample<T> {
    pub anchor: T,
    pub positive: T,
    /// `u_1..u_N`
    pub negatives: Vec<T>,
    /// `v_1..v_M`, drawn from the anchor's positive distribution.
    pub extra_positives: Vec<T>,
}

/// Inverse-CDF sampler; lets two distributions share one uniform draw.
#[derive(Debug, Clone)]
pub struct CdfTable {
    support: Vec<usize>,
    cumulative: Vec<f64>,
}

impl CdfTable {
    pub fn new(probs: &[f64]) -> Self {
        let mut support = Vec::new();
        let mut cumulative = Vec::new();
        let mut acc = 0.0;
        for (i, &p) in probs.iter().enumerate() {
            if p > 0.0 {
                acc += p;
                support.push(i);
                cumulative.push(acc);
            }
        }
        // guard the top bin against a row sum of 1 - ulp
        if let Some(last) = cumulative.last_mut() {
            *last = f64::INFINITY;
        }
        Self {
            support,
            cumulative,
        }
    }

    /// Index selected by a uniform draw `u` in `[0, 1)`.
    pub fn pick(&self, u: f64) -> usize {
        let k = self.cumulative.partition_point(|&c| c <= u);
        self.support[k.min(self.support.len() - 1)]
    }
}

fn alias(probs: &[f64]) -> WeightedAliasIndex<f64> {
    WeightedAliasIndex::new(probs.to_vec()).expect("validated probability table")
}

/// Precomputed samplers for a discrete mixture.
#[derive(Debug, Clone)]
pub struct DiscreteSampler {
    labels: Vec<usize>,
    marginal: WeightedAliasIndex<f64>,
    positive: Vec<WeightedAliasIndex<f64>>,
    negative: Vec<Option<WeightedAliasIndex<f64>>>,
    marginal_cdf: CdfTable,
    positive_cdf: Vec<CdfTable>,
    negative_cdf: Vec<Option<CdfTable>>,
}

impl DiscreteSampler {
    pub fn new(mix: &DiscreteClassMixture) -> Self {
        let k = mix.num_classes();
        let p = marginal(mix);
        let negatives: Vec<Option<Vec<f64>>> = (0..k)
            .map(|c| class_negative_dist(mix, c).ok())
            .collect();
        Self {
            labels: mix.labels().to_vec(),
            marginal: alias(&p),
            positive: (0..k).map(|c| alias(mix.conditional(c))).collect(),
            negative: negatives.iter().map(|n| n.as_deref().map(alias)).collect(),
            marginal_cdf: CdfTable::new(&p),
            positive_cdf: (0..k).map(|c| CdfTable::new(mix.conditional(c))).collect(),
            negative_cdf: negatives
                .iter()
                .map(|n| n.as_deref().map(CdfTable::new))
                .collect(),
        }
    }

    pub fn label(&self, x: usize) -> usize {
        self.labels[x]
    }

    pub fn draw_marginal(&self, rng: &mut StreamRng) -> usize {
        self.marginal.sample(rng)
    }

    pub fn draw_positive(&self, anchor: usize, rng: &mut StreamRng) -> usize {
        self.positive[self.labels[anchor]].sample(rng)
    }

    pub fn draw_negative(&self, anchor: usize, rng: &mut StreamRng) -> Result<usize> {
        let c = self.labels[anchor];
        self.negative[c]
            .as_ref()
            .map(|d| d.sample(rng))
            .ok_or(Error::DegenerateClass(c))
    }

    pub fn marginal_cdf(&self) -> &CdfTable {
        &self.marginal_cdf
    }

    pub fn positive_cdf(&self, anchor: usize) -> &CdfTable {
        &self.positive_cdf[self.labels[anchor]]
    }

    pub fn negative_cdf(&self, anchor: usize) -> Result<&CdfTable> {
        let c = self.labels[anchor];
        self.negative_cdf[c].as_ref().ok_or(Error::DegenerateClass(c))
    }

    /// Triple for a fixed anchor.
    pub fn triple_for_anchor(
        &self,
        anchor: usize,
        config: &TripleConfig,
        rng: &mut StreamRng,
    ) -> Result<TripleSample<usize>> {
        check_config(config)?;
        let positive = self.draw_positive(anchor, rng);
        let negatives = (0..config.negatives)
            .map(|_| match config.mode {
                NegativeMode::Biased => Ok(self.draw_marginal(rng)),
                NegativeMode::TrueNegatives => self.draw_negative(anchor, rng),
            })
            .collect::<Result<Vec<_>>>()?;
        let extra_positives = (0..config.positives)
            .map(|i| {
                if i == 0 && config.reuse_positive {
                    positive
                } else {
                    self.draw_positive(anchor, rng)
                }
            })
            .collect();
        Ok(TripleSample {
            anchor,
            positive,
            negatives,
            extra_positives,
        })
    }
}

fn check_config(config: &TripleConfig) -> Result<()> {
    if config.negatives == 0 {
        return Err(Error::EmptyNegatives);
    }
    if config.positives == 0 {
        return Err(Error::InvalidArgument("M must be at least 1".into()));
    }
    Ok(())
}

/// Draws `x ~ p` and then the rest of the triple.
pub fn sample_triple(
    sampler: &DiscreteSampler,
    config: &TripleConfig,
    rng: &mut StreamRng,
) -> Result<TripleSample<usize>> {
    let anchor = sampler.draw_marginal(rng);
    sampler.triple_for_anchor(anchor, config, rng)
}

/// Labeled feature vector drawn from a sphere mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPoint {
    pub class: usize,
    pub features: Vec<f64>,
}

fn draw_class(prior: &[f64], rng: &mut StreamRng) -> usize {
    let u: f64 = rng.random();
    CdfTable::new(prior).pick(u)
}

/// Triple from the continuous world; labels are carried with each point.
pub fn sample_sphere_triple(
    world: &SphereMixture,
    config: &TripleConfig,
    rng: &mut StreamRng,
) -> Result<TripleSample<LabeledPoint>> {
    check_config(config)?;
    let k = world.num_classes();
    let c = draw_class(world.prior(), rng);
    if config.mode == NegativeMode::TrueNegatives && k < 2 {
        return Err(Error::DegenerateClass(c));
    }
    let draw = |class: usize, rng: &mut StreamRng| LabeledPoint {
        class,
        features: world.sample(class, rng),
    };
    let anchor = draw(c, rng);
    let positive = draw(c, rng);
    let mut negatives = Vec::with_capacity(config.negatives);
    for _ in 0..config.negatives {
        let nc = match config.mode {
            NegativeMode::Biased => draw_class(world.prior(), rng),
            NegativeMode::TrueNegatives => {
                let mut masked = world.prior().to_vec();
                masked[c] = 0.0;
                let total: f64 = masked.iter().sum();
                masked.iter_mut().for_each(|p| *p /= total);
                draw_class(&masked, rng)
            }
        };
        negatives.push(draw(nc, rng));
    }
    let mut extra_positives = Vec::with_capacity(config.positives);
    for i in 0..config.positives {
        if i == 0 && config.reuse_positive {
            extra_positives.push(positive.clone());
        } else {
            extra_positives.push(draw(c, rng));
        }
    }
    Ok(TripleSample {
        anchor,
        positive,
        negatives,
        extra_positives,
    })
}

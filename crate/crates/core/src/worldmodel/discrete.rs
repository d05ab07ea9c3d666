use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// Row-sum and decomposition tolerance.
pub const TABLE_TOLERANCE: f64 = 1e-12;

/// Tables describing a discrete latent-class world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureTables {
    pub name: String,
    /// Input features, one row per point.
    pub points: Vec<Vec<f64>>,
    /// Latent class `h(x)` of each point.
    pub labels: Vec<usize>,
    /// `K x S` table of `p(x | c)`.
    pub conditionals: Vec<Vec<f64>>,
    /// Class prior over `K` classes.
    pub prior: Vec<f64>,
}

/// A finite world: points, deterministic labels, class conditionals and prior.
///
/// Supports are class-disjoint, so `p(x|c) > 0` only where `h(x) = c`. This
/// makes the positive distribution of an anchor `x` the conditional of its own
/// class and the negative distribution the prior-weighted mixture of the other
/// classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteClassMixture {
    name: String,
    points: Vec<Vec<f64>>,
    labels: Vec<usize>,
    conditionals: Vec<Vec<f64>>,
    prior: Vec<f64>,
    tau_plus: f64,
}

/// Named presets accepted by [`build_discrete`].
pub const PRESETS: &[&str] = &["two-point", "paper-uniform", "single-class"];

/// How to build a mixture.
#[derive(Debug, Clone, PartialEq)]
pub enum MixtureConfig {
    Preset(String),
    Tables(MixtureTables),
    /// Randomly drawn world with uniform prior; see [`random_mixture`].
    Random {
        points: usize,
        classes: usize,
        feature_dim: usize,
        seed: u64,
    },
}

pub fn build_discrete(config: &MixtureConfig) -> Result<DiscreteClassMixture> {
    match config {
        MixtureConfig::Preset(name) => preset(name),
        MixtureConfig::Tables(t) => DiscreteClassMixture::from_tables(t.clone()),
        MixtureConfig::Random {
            points,
            classes,
            feature_dim,
            seed,
        } => {
            let mut rng = crate::rng::substream(*seed, 0);
            random_mixture(*points, *classes, *feature_dim, &mut rng)
        }
    }
}

fn preset(name: &str) -> Result<DiscreteClassMixture> {
    match name {
        "two-point" => DiscreteClassMixture::from_tables(MixtureTables {
            name: name.into(),
            points: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            labels: vec![0, 1],
            conditionals: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            prior: vec![0.5, 0.5],
        }),
        "single-class" => DiscreteClassMixture::from_tables(MixtureTables {
            name: name.into(),
            points: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            labels: vec![0, 0],
            conditionals: vec![vec![0.5, 0.5]],
            prior: vec![1.0],
        }),
        "paper-uniform" => {
            // Ten equiprobable classes with two points each; fixed features so the
            // preset is reproducible without a seed.
            let k = 10;
            let mut rng = crate::rng::substream(0x5EED_0010, 0);
            let mut m = random_mixture(2 * k, k, 32, &mut rng)?;
            m.name = name.into();
            Ok(m)
        }
        other => Err(Error::InvalidArgument(format!(
            "unknown preset '{other}', expected one of {PRESETS:?}"
        ))),
    }
}

/// Random world with `classes` equiprobable classes over `points` points.
///
/// Points are assigned round-robin so every class has support; conditionals
/// within a class are normalised exponential draws, features are Gaussian.
pub fn random_mixture(
    points: usize,
    classes: usize,
    feature_dim: usize,
    rng: &mut StreamRng,
) -> Result<DiscreteClassMixture> {
    use rand::Rng;
    use rand_distr::{Distribution, Exp1, StandardNormal};

    if classes == 0 || points < classes {
        return Err(Error::InvalidArgument(format!(
            "need at least one point per class, got S={points}, K={classes}"
        )));
    }
    let mut labels: Vec<usize> = (0..points).map(|i| i % classes).collect();
    // shuffle labels so class membership is not tied to index order
    for i in (1..points).rev() {
        let j = rng.random_range(0..=i);
        labels.swap(i, j);
    }
    let mut conditionals = vec![vec![0.0; points]; classes];
    for (x, &c) in labels.iter().enumerate() {
        let w: f64 = Exp1.sample(rng);
        conditionals[c][x] = w + 1e-3;
    }
    for row in &mut conditionals {
        let total: f64 = row.iter().sum();
        for p in row.iter_mut() {
            *p /= total;
        }
    }
    let pts = (0..points)
        .map(|_| {
            (0..feature_dim)
                .map(|_| StandardNormal.sample(rng))
                .collect()
        })
        .collect();
    DiscreteClassMixture::from_tables(MixtureTables {
        name: format!("random-S{points}-K{classes}"),
        points: pts,
        labels,
        conditionals,
        prior: vec![1.0 / classes as f64; classes],
    })
}

impl DiscreteClassMixture {
    pub fn from_tables(t: MixtureTables) -> Result<Self> {
        let s = t.points.len();
        let k = t.conditionals.len();
        if s == 0 || k == 0 {
            return Err(Error::InvalidTable("empty point set or class table".into()));
        }
        if s < k {
            return Err(Error::InvalidTable(format!(
                "fewer points ({s}) than classes ({k})"
            )));
        }
        let m = t.points[0].len();
        if t.points.iter().any(|p| p.len() != m || p.iter().any(|x| !x.is_finite())) {
            return Err(Error::InvalidTable(
                "points must share one dimension and be finite".into(),
            ));
        }
        if t.labels.len() != s {
            return Err(Error::LabelMismatch(format!(
                "{} labels for {s} points",
                t.labels.len()
            )));
        }
        if let Some(&bad) = t.labels.iter().find(|&&c| c >= k) {
            return Err(Error::LabelMismatch(format!(
                "label {bad} out of range for {k} classes"
            )));
        }
        for (c, row) in t.conditionals.iter().enumerate() {
            if row.len() != s {
                return Err(Error::InvalidTable(format!(
                    "row {c} has {} entries, expected {s}",
                    row.len()
                )));
            }
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::InvalidTable(format!(
                    "row {c} has negative or non-finite entries"
                )));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > TABLE_TOLERANCE {
                return Err(Error::InvalidTable(format!("row {c} sums to {total}")));
            }
            for (x, &p) in row.iter().enumerate() {
                if p > 0.0 && t.labels[x] != c {
                    return Err(Error::LabelMismatch(format!(
                        "class {c} puts mass {p} on point {x} labelled {}",
                        t.labels[x]
                    )));
                }
            }
        }
        if t.prior.len() != k {
            return Err(Error::PriorMismatch(format!(
                "prior has {} entries for {k} classes",
                t.prior.len()
            )));
        }
        if t.prior.iter().any(|p| !p.is_finite() || *p <= 0.0) {
            return Err(Error::PriorMismatch(
                "prior entries must be positive and finite".into(),
            ));
        }
        let total: f64 = t.prior.iter().sum();
        if (total - 1.0).abs() > TABLE_TOLERANCE {
            return Err(Error::PriorMismatch(format!("prior sums to {total}")));
        }
        let tau_plus = t.prior.iter().map(|p| p * p).sum();
        Ok(Self {
            name: t.name,
            points: t.points,
            labels: t.labels,
            conditionals: t.conditionals,
            prior: t.prior,
            tau_plus,
        })
    }

    pub fn to_tables(&self) -> MixtureTables {
        MixtureTables {
            name: self.name.clone(),
            points: self.points.clone(),
            labels: self.labels.clone(),
            conditionals: self.conditionals.clone(),
            prior: self.prior.clone(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn num_points(&self) -> usize {
        self.points.len()
    }

    pub fn num_classes(&self) -> usize {
        self.conditionals.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, x: usize) -> usize {
        self.labels[x]
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    pub fn conditional(&self, class: usize) -> &[f64] {
        &self.conditionals[class]
    }

    pub fn is_uniform(&self) -> bool {
        let k = self.num_classes() as f64;
        self.prior
            .iter()
            .all(|p| (p - 1.0 / k).abs() <= TABLE_TOLERANCE)
    }

    /// Probability that a draw from `p` shares a random anchor's class,
    /// `sum_c rho(c)^2`. Equals `1/K` for a uniform prior.
    pub fn tau_plus(&self) -> f64 {
        self.tau_plus
    }

    pub fn tau_minus(&self) -> f64 {
        1.0 - self.tau_plus
    }

    /// Same-class probability for a specific anchor, `rho(h(x))`.
    pub fn anchor_tau_plus(&self, anchor: usize) -> f64 {
        self.prior[self.labels[anchor]]
    }

    fn check_anchor(&self, anchor: usize) -> Result<()> {
        if anchor >= self.num_points() {
            return Err(Error::InvalidArgument(format!(
                "anchor {anchor} out of range for {} points",
                self.num_points()
            )));
        }
        Ok(())
    }

    /// Class of the negative distribution for `class` is degenerate.
    pub fn negatives_defined(&self, class: usize) -> bool {
        1.0 - self.prior[class] > TABLE_TOLERANCE
    }
}

/// `p(x') = sum_c rho(c) p(x'|c)`.
pub fn marginal(mix: &DiscreteClassMixture) -> Vec<f64> {
    (0..mix.num_points())
        .map(|x| {
            let c = mix.labels[x];
            mix.prior[c] * mix.conditionals[c][x]
        })
        .collect()
}

/// `p+_x(x') = p(x' | h(x') = h(x))`.
pub fn positive_dist(mix: &DiscreteClassMixture, anchor: usize) -> Result<Vec<f64>> {
    mix.check_anchor(anchor)?;
    Ok(mix.conditionals[mix.labels[anchor]].clone())
}

/// `p-_x(x') = p(x' | h(x') != h(x))`.
pub fn negative_dist(mix: &DiscreteClassMixture, anchor: usize) -> Result<Vec<f64>> {
    mix.check_anchor(anchor)?;
    class_negative_dist(mix, mix.labels[anchor])
}

pub(crate) fn class_negative_dist(mix: &DiscreteClassMixture, class: usize) -> Result<Vec<f64>> {
    if !mix.negatives_defined(class) {
        return Err(Error::DegenerateClass(class));
    }
    let complement = 1.0 - mix.prior[class];
    Ok((0..mix.num_points())
        .map(|x| {
            let c = mix.labels[x];
            if c == class {
                0.0
            } else {
                mix.prior[c] * mix.conditionals[c][x] / complement
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn two_point() -> DiscreteClassMixture {
        build_discrete(&MixtureConfig::Preset("two-point".into())).unwrap()
    }

    #[test]
    fn two_point_preset() {
        let m = two_point();
        assert_eq!(marginal(&m), vec![0.5, 0.5]);
        assert_eq!(m.tau_plus(), 0.5);
        assert_eq!(positive_dist(&m, 0).unwrap(), vec![1.0, 0.0]);
        assert_eq!(negative_dist(&m, 0).unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn paper_uniform_preset_has_tau_plus_one_tenth() {
        let m = build_discrete(&MixtureConfig::Preset("paper-uniform".into())).unwrap();
        assert_eq!(m.num_classes(), 10);
        assert!((m.tau_plus() - 0.1).abs() < 1e-15);
        assert!(m.is_uniform());
        let again = build_discrete(&MixtureConfig::Preset("paper-uniform".into())).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn single_class_negatives_are_degenerate() {
        let m = build_discrete(&MixtureConfig::Preset("single-class".into())).unwrap();
        assert_eq!(negative_dist(&m, 0), Err(Error::DegenerateClass(0)));
        assert_eq!(marginal(&m), m.conditional(0).to_vec());
    }

    #[test]
    fn rejects_bad_tables() {
        let mut t = two_point().to_tables();
        t.conditionals[0] = vec![0.9, 0.0];
        assert!(matches!(
            DiscreteClassMixture::from_tables(t),
            Err(Error::InvalidTable(_))
        ));

        let mut t = two_point().to_tables();
        t.conditionals[0] = vec![0.5, 0.5];
        assert!(matches!(
            DiscreteClassMixture::from_tables(t),
            Err(Error::LabelMismatch(_))
        ));

        let mut t = two_point().to_tables();
        t.prior = vec![0.7, 0.7];
        assert!(matches!(
            DiscreteClassMixture::from_tables(t),
            Err(Error::PriorMismatch(_))
        ));

        let mut t = two_point().to_tables();
        t.prior = vec![1.0];
        assert!(matches!(
            DiscreteClassMixture::from_tables(t),
            Err(Error::PriorMismatch(_))
        ));
    }

    #[test]
    fn unknown_preset_is_an_error() {
        assert!(build_discrete(&MixtureConfig::Preset("nope".into())).is_err());
    }

    /// Decomposition identity by enumeration, including non-uniform priors where
    /// the anchor's own prior mass plays the role of tau+.
    #[test]
    fn decomposition_identity_holds_for_random_mixtures() {
        for seed in 0..50 {
            let mut rng = substream(seed, 1);
            let k = 2 + (seed as usize % 4);
            let mut m = random_mixture(k + 3, k, 3, &mut rng).unwrap();
            if seed % 2 == 1 {
                let mut t = m.to_tables();
                let raw: Vec<f64> = (0..k).map(|c| 1.0 + c as f64).collect();
                let total: f64 = raw.iter().sum();
                t.prior = raw.iter().map(|r| r / total).collect();
                m = DiscreteClassMixture::from_tables(t).unwrap();
            }
            let p = marginal(&m);
            assert!((p.iter().sum::<f64>() - 1.0).abs() <= TABLE_TOLERANCE);
            for x in 0..m.num_points() {
                let pos = positive_dist(&m, x).unwrap();
                let neg = negative_dist(&m, x).unwrap();
                let tp = m.anchor_tau_plus(x);
                for j in 0..m.num_points() {
                    let recon = tp * pos[j] + (1.0 - tp) * neg[j];
                    assert!((recon - p[j]).abs() <= TABLE_TOLERANCE);
                    let from_marginal = (p[j] - tp * pos[j]) / (1.0 - tp);
                    assert!((from_marginal - neg[j]).abs() <= TABLE_TOLERANCE);
                }
                assert!((neg.iter().sum::<f64>() - 1.0).abs() <= TABLE_TOLERANCE);
            }
        }
    }
}

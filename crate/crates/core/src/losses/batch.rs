//! SimCLR-style batches.
//!
//! A batch holds `B` anchors with two views each plus `M - 1` extra positive
//! views per anchor. Each of the `2B` views takes a turn as the anchor `x`:
//! its partner view is `x+`, the `2(B - 1)` views of the other anchors are the
//! `u_i`, and the positives `v` are the partner view followed by the extras.

use serde::{Deserialize, Serialize};

use super::point::{biased_role, debiased_role, FloorMode, RoleTerm};
use super::{LossKind, LossValue};
use crate::error::{Error, Result};
use crate::geometry::{dot, Matrix, UnitEmbedding};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchObjective {
    /// Every other-anchor view is a negative.
    Biased,
    /// Clamped correction of the biased denominator.
    Debiased,
    /// Only other-anchor views with a different label are negatives
    /// (supervised reference that needs the labels).
    Unbiased,
}

impl BatchObjective {
    pub fn name(self) -> &'static str {
        match self {
            BatchObjective::Biased => "biased",
            BatchObjective::Debiased => "debiased",
            BatchObjective::Unbiased => "unbiased",
        }
    }

    pub fn loss_kind(self) -> LossKind {
        match self {
            BatchObjective::Biased => LossKind::Biased,
            BatchObjective::Debiased => LossKind::DebiasedFin,
            BatchObjective::Unbiased => LossKind::Unbiased,
        }
    }
}

impl std::str::FromStr for BatchObjective {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "biased" => Ok(Self::Biased),
            "debiased" => Ok(Self::Debiased),
            "unbiased" => Ok(Self::Unbiased),
            other => Err(Error::InvalidArgument(format!(
                "unknown loss kind '{other}', expected biased|debiased|unbiased"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub objective: BatchObjective,
    pub tau_plus: f64,
    pub temperature: f64,
    /// Positive samples per anchor role, `M >= 1`.
    pub positives: usize,
    pub floor_mode: FloorMode,
}

impl LossSpec {
    pub fn new(objective: BatchObjective, tau_plus: f64, temperature: f64) -> Self {
        Self {
            objective,
            tau_plus,
            temperature,
            positives: 1,
            floor_mode: FloorMode::ExpFloor,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(0.0..1.0).contains(&self.tau_plus) {
            return Err(Error::InvalidArgument(format!(
                "tau_plus must lie in [0, 1), got {}",
                self.tau_plus
            )));
        }
        if self.positives == 0 {
            return Err(Error::InvalidArgument("M must be at least 1".into()));
        }
        Ok(())
    }
}

/// Views of `B` anchors.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewBatch<T> {
    pub first: Vec<T>,
    pub second: Vec<T>,
    /// `extra[b]` holds the `M - 1` additional positive views of anchor `b`.
    pub extra: Vec<Vec<T>>,
    pub labels: Vec<usize>,
}

impl<T> ViewBatch<T> {
    pub fn anchors(&self) -> usize {
        self.first.len()
    }

    pub fn extras_per_anchor(&self) -> usize {
        self.extra.first().map_or(0, Vec::len)
    }

    pub fn num_views(&self) -> usize {
        2 * self.anchors() + self.anchors() * self.extras_per_anchor()
    }

    /// Views in flat order: first views, second views, then extras anchor by anchor.
    pub fn flat(&self) -> Vec<&T> {
        self.first
            .iter()
            .chain(&self.second)
            .chain(self.extra.iter().flatten())
            .collect()
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> ViewBatch<U> {
        ViewBatch {
            first: self.first.iter().map(&mut f).collect(),
            second: self.second.iter().map(&mut f).collect(),
            extra: self
                .extra
                .iter()
                .map(|e| e.iter().map(&mut f).collect())
                .collect(),
            labels: self.labels.clone(),
        }
    }

    pub(crate) fn check(&self, spec: &LossSpec) -> Result<()> {
        let b = self.anchors();
        if b < 2 {
            return Err(Error::BatchTooSmall(b));
        }
        if self.second.len() != b || self.labels.len() != b || self.extra.len() != b {
            return Err(Error::InvalidArgument(
                "batch fields disagree on the number of anchors".into(),
            ));
        }
        let want = spec.positives - 1;
        if self.extra.iter().any(|e| e.len() != want) {
            return Err(Error::InvalidArgument(format!(
                "M = {} needs {want} extra positive views per anchor",
                spec.positives
            )));
        }
        Ok(())
    }
}

/// Index bookkeeping for one anchor role.
#[derive(Debug, Clone)]
pub(crate) struct Role {
    pub anchor: usize,
    pub positive: usize,
    pub negatives: Vec<usize>,
    pub positives_v: Vec<usize>,
}

pub(crate) fn roles<T>(batch: &ViewBatch<T>, objective: BatchObjective) -> Vec<Role> {
    let b = batch.anchors();
    let extras = batch.extras_per_anchor();
    let mut out = Vec::with_capacity(2 * b);
    for view in 0..2 {
        for a in 0..b {
            let anchor = view * b + a;
            let positive = (1 - view) * b + a;
            let negatives = (0..2 * b)
                .filter(|&j| j % b != a)
                .filter(|&j| objective != BatchObjective::Unbiased || batch.labels[j % b] != batch.labels[a])
                .collect();
            let mut positives_v = vec![positive];
            positives_v.extend((0..extras).map(|e| 2 * b + a * extras + e));
            out.push(Role {
                anchor,
                positive,
                negatives,
                positives_v,
            });
        }
    }
    out
}

/// Batch loss, per-role clamp flags and optionally `dL/ds_ij` over flat views.
#[derive(Debug, Clone)]
pub(crate) struct BatchEval {
    pub loss: f64,
    pub sim_grad: Option<Matrix>,
    pub floored: Vec<bool>,
}

pub(crate) fn evaluate_batch(
    batch: &ViewBatch<UnitEmbedding>,
    spec: &LossSpec,
    want_grad: bool,
) -> Result<BatchEval> {
    spec.validate()?;
    batch.check(spec)?;
    let views = batch.flat();
    let t = spec.temperature;
    let sim = |i: usize, j: usize| dot(views[i].coords(), views[j].coords()) / t;
    let roles = roles(batch, spec.objective);
    let nominal = (2 * (batch.anchors() - 1)) as f64;
    let mut sim_grad = want_grad.then(|| Matrix::zeros(views.len(), views.len()));
    let mut total = 0.0;
    let mut floored = Vec::with_capacity(roles.len());
    let scale = 1.0 / roles.len() as f64;
    for role in &roles {
        if role.negatives.is_empty() {
            return Err(Error::EmptyNegatives);
        }
        let pos = sim(role.anchor, role.positive);
        let negs: Vec<f64> = role.negatives.iter().map(|&j| sim(role.anchor, j)).collect();
        let term: RoleTerm = match spec.objective {
            BatchObjective::Biased => biased_role(pos, &negs, negs.len() as f64, want_grad),
            BatchObjective::Unbiased => biased_role(pos, &negs, nominal, want_grad),
            BatchObjective::Debiased => {
                let vs: Vec<f64> = role.positives_v.iter().map(|&j| sim(role.anchor, j)).collect();
                debiased_role(pos, &negs, &vs, spec.tau_plus, t, spec.floor_mode, want_grad)
            }
        };
        total += term.loss;
        floored.push(term.floored);
        if let Some(g) = sim_grad.as_mut() {
            g[(role.anchor, role.positive)] += scale * term.d_pos;
            for (&j, &d) in role.negatives.iter().zip(&term.d_neg) {
                g[(role.anchor, j)] += scale * d;
            }
            for (&j, &d) in role.positives_v.iter().zip(&term.d_v) {
                g[(role.anchor, j)] += scale * d;
            }
        }
    }
    Ok(BatchEval {
        loss: total * scale,
        sim_grad,
        floored,
    })
}

/// Mean loss over the `2B` anchor roles.
pub fn batch_loss(batch: &ViewBatch<UnitEmbedding>, spec: &LossSpec) -> Result<LossValue> {
    let eval = evaluate_batch(batch, spec, false)?;
    Ok(LossValue::new(eval.loss, spec.objective.loss_kind()))
}

/// Debiased batch loss with `N = 2(B - 1)`.
pub fn debiased_loss_batch(
    batch: &ViewBatch<UnitEmbedding>,
    tau_plus: f64,
    t: f64,
    positives: usize,
    floor_mode: FloorMode,
) -> Result<LossValue> {
    batch_loss(
        batch,
        &LossSpec {
            objective: BatchObjective::Debiased,
            tau_plus,
            temperature: t,
            positives,
            floor_mode,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{normalize, similarity, Similarity};
    use crate::losses::point::{biased_loss_point, debiased_loss_point};
    use rand::Rng;

    fn random_unit(rng: &mut crate::rng::StreamRng, d: usize) -> UnitEmbedding {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        normalize(&v).unwrap()
    }

    pub(crate) fn random_batch(seed: u64, b: usize, d: usize, extras: usize) -> ViewBatch<UnitEmbedding> {
        let mut rng = crate::rng::substream(seed, 0);
        ViewBatch {
            first: (0..b).map(|_| random_unit(&mut rng, d)).collect(),
            second: (0..b).map(|_| random_unit(&mut rng, d)).collect(),
            extra: (0..b)
                .map(|_| (0..extras).map(|_| random_unit(&mut rng, d)).collect())
                .collect(),
            labels: (0..b).map(|i| i % 3).collect(),
        }
    }

    #[test]
    fn identical_embeddings_give_log_three() {
        let e = normalize(&[1.0, 2.0]).unwrap();
        let batch = ViewBatch {
            first: vec![e.clone(), e.clone()],
            second: vec![e.clone(), e.clone()],
            extra: vec![vec![], vec![]],
            labels: vec![0, 1],
        };
        let l = debiased_loss_batch(&batch, 0.1, 0.5, 1, FloorMode::ExpFloor).unwrap();
        assert!((l.value - 3f64.ln()).abs() < 1e-14);
        assert!((l.value - 1.098_612).abs() < 1e-6);
    }

    #[test]
    fn small_batch_rejected() {
        let b = random_batch(1, 1, 3, 0);
        assert_eq!(
            debiased_loss_batch(&b, 0.1, 0.5, 1, FloorMode::ExpFloor),
            Err(Error::BatchTooSmall(1))
        );
    }

    #[test]
    fn tau_zero_matches_biased_batch() {
        for seed in 0..50 {
            let b = random_batch(seed, 4, 5, 0);
            let biased = batch_loss(&b, &LossSpec::new(BatchObjective::Biased, 0.0, 0.5)).unwrap();
            let deb = batch_loss(&b, &LossSpec::new(BatchObjective::Debiased, 0.0, 0.5)).unwrap();
            assert_eq!(biased.value, deb.value);
        }
    }

    /// Hand assembly of the 2B per-anchor losses for B = 3.
    #[test]
    fn matches_hand_assembled_point_losses() {
        let t = 0.5;
        let tau = 0.1;
        for seed in 0..20 {
            let batch = random_batch(seed, 3, 4, 1);
            let views: Vec<Vec<&UnitEmbedding>> = vec![
                batch.first.iter().collect(),
                batch.second.iter().collect(),
            ];
            let mut sum = 0.0;
            for view in 0..2 {
                for a in 0..3 {
                    let x = views[view][a];
                    let xp = views[1 - view][a];
                    let mut us: Vec<Similarity> = Vec::new();
                    for other in 0..3 {
                        if other != a {
                            us.push(similarity(x, views[0][other], t));
                            us.push(similarity(x, views[1][other], t));
                        }
                    }
                    let vs = vec![similarity(x, xp, t), similarity(x, &batch.extra[a][0], t)];
                    sum += debiased_loss_point(similarity(x, xp, t), &us, &vs, tau, t, FloorMode::ExpFloor)
                        .unwrap()
                        .value;
                }
            }
            let spec = LossSpec {
                positives: 2,
                ..LossSpec::new(BatchObjective::Debiased, tau, t)
            };
            let l = batch_loss(&batch, &spec).unwrap().value;
            assert!((l - sum / 6.0).abs() < 1e-12, "{l} vs {}", sum / 6.0);
        }
    }

    #[test]
    fn unbiased_uses_only_other_labels() {
        let batch = random_batch(3, 6, 4, 0);
        let rs = roles(&batch, BatchObjective::Unbiased);
        for r in &rs {
            let a = r.anchor % 6;
            assert!(r.negatives.iter().all(|&j| batch.labels[j % 6] != batch.labels[a]));
            assert_eq!(r.negatives.len(), 8);
        }
        // reference: biased point loss with Q fixed at 2(B-1)
        let t = 0.5;
        let l = batch_loss(&batch, &LossSpec::new(BatchObjective::Unbiased, 0.0, t)).unwrap();
        let flat = batch.flat();
        let mut sum = 0.0;
        for r in &rs {
            let pos = similarity(flat[r.anchor], flat[r.positive], t);
            let negs: Vec<Similarity> = r.negatives.iter().map(|&j| similarity(flat[r.anchor], flat[j], t)).collect();
            sum += biased_loss_point(pos, &negs, 10.0).unwrap().value;
        }
        assert!((l.value - sum / 12.0).abs() < 1e-12);
    }

    #[test]
    fn permutation_invariant() {
        let batch = random_batch(9, 5, 4, 1);
        let spec = LossSpec {
            positives: 2,
            ..LossSpec::new(BatchObjective::Debiased, 0.2, 0.5)
        };
        let perm = [3, 0, 4, 1, 2];
        let shuffled = ViewBatch {
            first: perm.iter().map(|&i| batch.first[i].clone()).collect(),
            second: perm.iter().map(|&i| batch.second[i].clone()).collect(),
            extra: perm.iter().map(|&i| batch.extra[i].clone()).collect(),
            labels: perm.iter().map(|&i| batch.labels[i]).collect(),
        };
        let a = batch_loss(&batch, &spec).unwrap().value;
        let b = batch_loss(&shuffled, &spec).unwrap().value;
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn wrong_extra_count_rejected() {
        let batch = random_batch(2, 3, 4, 0);
        let spec = LossSpec {
            positives: 2,
            ..LossSpec::new(BatchObjective::Debiased, 0.1, 0.5)
        };
        assert!(matches!(batch_loss(&batch, &spec), Err(Error::InvalidArgument(_))));
    }
}

//! Population losses over a discrete mixture, computed by exact enumeration.
//!
//! All routines take an [`EmbeddingTable`] with one embedding per mixture point.
//! Expectations over anchors and positives are finite sums. Expectations over
//! `N` i.i.d. negatives enumerate every multiset of support points with its
//! multinomial weight, so costs grow like `C(|support| + N - 1, N)` and are
//! guarded by an enumeration budget.

use rayon::prelude::*;

use super::point::log_sum_exp;
use super::{LossKind, LossValue};
use crate::error::{Error, Result};
use crate::geometry::{dot, EmbeddingTable};
use crate::summation::{cancelling_sum, compensated_sum, NeumaierSum};
use crate::worldmodel::{marginal, negative_dist, positive_dist, DiscreteClassMixture};

/// Default cap on enumerated terms.
pub const DEFAULT_ENUMERATION_BUDGET: u128 = 10_000_000;

/// Largest `N` accepted by [`binomial_oracle`].
pub const ORACLE_MAX_N: usize = 8;

/// Nonzero entries of a probability vector.
#[derive(Debug, Clone)]
struct Support {
    idx: Vec<usize>,
    prob: Vec<f64>,
}

impl Support {
    fn new(probs: &[f64]) -> Self {
        let (idx, prob) = probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(i, &p)| (i, p))
            .unzip();
        Self { idx, prob }
    }

    fn len(&self) -> usize {
        self.idx.len()
    }

    /// `E[e^{s(x, .)}]` under this distribution.
    fn mean_exp(&self, exp_row: &[f64]) -> f64 {
        compensated_sum(self.idx.iter().zip(&self.prob).map(|(&j, &p)| p * exp_row[j]))
    }
}

/// Visits every multiset of draws where group `g` contributes `count_g`
/// i.i.d. draws from `dist_g`, passing the multiset probability (multinomial
/// weight included) and the sum of `values` over its elements.
fn enumerate_multisets(groups: &[(&Support, usize)], values: &[f64], mut visit: impl FnMut(f64, f64)) {
    if groups.iter().any(|(d, c)| d.len() == 0 && *c > 0) {
        return;
    }
    struct Walk<'a, F> {
        groups: &'a [(&'a Support, usize)],
        values: &'a [f64],
        visit: F,
    }
    impl<F: FnMut(f64, f64)> Walk<'_, F> {
        fn step(&mut self, g: usize, pos: usize, remaining: usize, prob: f64, sum: f64) {
            if remaining == 0 {
                match self.groups.get(g + 1) {
                    Some(&(_, c)) => self.step(g + 1, 0, c, prob, sum),
                    None => (self.visit)(prob, sum),
                }
                return;
            }
            let (d, _) = self.groups[g];
            let (p, v) = (d.prob[pos], self.values[d.idx[pos]]);
            if pos + 1 == d.len() {
                let r = remaining as f64;
                self.step(g, pos, 0, prob * p.powi(remaining as i32), sum + r * v);
                return;
            }
            for k in 0..=remaining {
                let w = binomial(remaining, k) * p.powi(k as i32);
                self.step(g, pos + 1, remaining - k, prob * w, sum + k as f64 * v);
            }
        }
    }
    let Some(&(_, first)) = groups.first() else {
        visit(1.0, 0.0);
        return;
    };
    let mut walk = Walk { groups, values, visit };
    walk.step(0, 0, first, 1.0, 0.0);
}

/// Number of multisets of size `count` over `len` items.
fn multisets(len: usize, count: usize) -> u128 {
    if count == 0 {
        return 1;
    }
    if len == 0 {
        return 0;
    }
    // C(len + count - 1, count), exact in u128 for the sizes a budget admits
    let mut c: u128 = 1;
    for i in 0..count as u128 {
        c = c.saturating_mul(len as u128 + i) / (i + 1);
    }
    c
}

struct Prepared {
    /// `exp_sim[x][y] = e^{s(x, y)}`
    exp_sim: Vec<Vec<f64>>,
    marginal: Support,
    marginal_probs: Vec<f64>,
    positive: Vec<Support>,
}

fn prepare(table: &EmbeddingTable, mix: &DiscreteClassMixture) -> Result<Prepared> {
    let s = mix.num_points();
    if table.len() != s {
        return Err(Error::DimensionMismatch {
            expected: s,
            got: table.len(),
        });
    }
    let exp_sim = (0..s)
        .map(|x| (0..s).map(|y| table.similarity(x, y).value().exp()).collect())
        .collect();
    let marginal_probs = marginal(mix);
    let positive = (0..s)
        .map(|x| positive_dist(mix, x).map(|p| Support::new(&p)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Prepared {
        exp_sim,
        marginal: Support::new(&marginal_probs),
        marginal_probs,
        positive,
    })
}

fn check_budget(needed: u128, budget: u128) -> Result<()> {
    if needed > budget {
        return Err(Error::BudgetExceeded { needed, budget });
    }
    Ok(())
}

/// Sums `p(x) * per_anchor(x)` over the anchor support in a fixed order.
fn over_anchors(
    prep: &Prepared,
    per_anchor: impl Fn(usize) -> Result<f64> + Sync,
) -> Result<f64> {
    let terms = prep
        .marginal
        .idx
        .par_iter()
        .map(|&x| per_anchor(x).map(|v| prep.marginal_probs[x] * v))
        .collect::<Result<Vec<f64>>>()?;
    Ok(compensated_sum(terms))
}

/// `E_{x+}[ln(1 + w * mass / e^{s(x,x+)})]` for one anchor.
fn positive_average(prep: &Prepared, x: usize, w: f64, mass: f64) -> f64 {
    let pos = &prep.positive[x];
    let row = &prep.exp_sim[x];
    let mut acc = NeumaierSum::new();
    for (&j, &p) in pos.idx.iter().zip(&pos.prob) {
        acc.add(p * (w * mass / row[j]).ln_1p());
    }
    acc.value()
}

/// Exact finite-`N` loss with negatives from `p-_x` and weight `Q`.
pub fn unbiased_loss_exact(
    table: &EmbeddingTable,
    mix: &DiscreteClassMixture,
    n: usize,
    q: f64,
    budget: u128,
) -> Result<LossValue> {
    if n == 0 {
        return Err(Error::EmptyNegatives);
    }
    if !(q >= 0.0) || !q.is_finite() {
        return Err(Error::InvalidArgument(format!("Q must be nonnegative, got {q}")));
    }
    let prep = prepare(table, mix)?;
    let negatives = prep
        .marginal
        .idx
        .iter()
        .map(|&x| negative_dist(mix, x).map(|p| (x, Support::new(&p))))
        .collect::<Result<Vec<_>>>()?;
    let needed: u128 = negatives
        .iter()
        .map(|(x, neg)| prep.positive[*x].len() as u128 * multisets(neg.len(), n))
        .sum();
    check_budget(needed, budget)?;
    let w = q / n as f64;
    let by_anchor: std::collections::HashMap<usize, &Support> =
        negatives.iter().map(|(x, s)| (*x, s)).collect();
    let value = over_anchors(&prep, |x| {
        let neg = by_anchor[&x];
        let mut acc = NeumaierSum::new();
        enumerate_multisets(&[(neg, n)], &prep.exp_sim[x], |p, mass| {
            acc.add(p * positive_average(&prep, x, w, mass));
        });
        Ok(acc.value())
    })?;
    Ok(LossValue::new(value, LossKind::Unbiased))
}

fn tau_for(mix: &DiscreteClassMixture, x: usize, tau_override: Option<f64>) -> Result<f64> {
    let tau = tau_override.unwrap_or_else(|| mix.anchor_tau_plus(x));
    if !(0.0..1.0).contains(&tau) {
        return Err(Error::InvalidArgument(format!(
            "tau_plus must lie in [0, 1), got {tau}"
        )));
    }
    Ok(tau)
}

/// Large-`N` debiased loss
/// `E ln(1 + (Q/tau-)(E_p e^s - tau+ E_{p+} e^s) / e^{s+})`.
///
/// `tau_plus = None` uses each anchor's own class mass `rho(h(x))`, under which
/// the inner difference equals `tau- E_{p-} e^s`. A nonpositive inner
/// difference is reported, never clamped.
pub fn asymptotic_debiased_exact(
    table: &EmbeddingTable,
    mix: &DiscreteClassMixture,
    q: f64,
    tau_plus: Option<f64>,
) -> Result<LossValue> {
    if mix.num_classes() < 2 {
        return Err(Error::DegenerateClass(0));
    }
    let prep = prepare(table, mix)?;
    let value = over_anchors(&prep, |x| {
        let tau = tau_for(mix, x, tau_plus)?;
        let row = &prep.exp_sim[x];
        let diff = prep.marginal.mean_exp(row) - tau * prep.positive[x].mean_exp(row);
        if !(diff > 0.0) {
            return Err(Error::NegativeDenominator {
                anchor: x,
                value: diff,
            });
        }
        Ok(positive_average(&prep, x, q / (1.0 - tau), diff))
    })?;
    Ok(LossValue::new(value, LossKind::DebiasedAsym))
}

/// Large-`N` loss with negatives from `p-_x`: `E ln(1 + Q E_{p-} e^s / e^{s+})`.
pub fn asymptotic_unbiased_exact(
    table: &EmbeddingTable,
    mix: &DiscreteClassMixture,
    q: f64,
) -> Result<LossValue> {
    let prep = prepare(table, mix)?;
    let value = over_anchors(&prep, |x| {
        let neg = Support::new(&negative_dist(mix, x)?);
        Ok(positive_average(&prep, x, q, neg.mean_exp(&prep.exp_sim[x])))
    })?;
    Ok(LossValue::new(value, LossKind::Unbiased))
}

/// Large-`N` loss with negatives from `p`: `E ln(1 + Q E_p e^s / e^{s+})`.
pub fn asymptotic_biased_exact(
    table: &EmbeddingTable,
    mix: &DiscreteClassMixture,
    q: f64,
) -> Result<LossValue> {
    let prep = prepare(table, mix)?;
    let value = over_anchors(&prep, |x| {
        Ok(positive_average(&prep, x, q, prep.marginal.mean_exp(&prep.exp_sim[x])))
    })?;
    Ok(LossValue::new(value, LossKind::Biased))
}

/// `E_x[min(0, ln(E_{p+} e^s / E_{p-} e^s))]`.
pub fn class_contrast_gap(table: &EmbeddingTable, mix: &DiscreteClassMixture) -> Result<f64> {
    let prep = prepare(table, mix)?;
    over_anchors(&prep, |x| {
        let row = &prep.exp_sim[x];
        let neg = Support::new(&negative_dist(mix, x)?);
        let ratio = prep.positive[x].mean_exp(row) / neg.mean_exp(row);
        Ok(ratio.ln().min(0.0))
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleResult {
    pub value: LossValue,
    /// `sum |term| / |sum term|` of the alternating series.
    pub condition_number: f64,
    pub terms: usize,
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Inclusion-exclusion rewrite of the finite-`N` unbiased loss using only
/// draws from `p` and `p+_x`:
///
/// `(1/tau-)^N sum_k C(N,k) (-tau+)^k E[l | k negatives from p+_x, N-k from p]`
///
/// with `Q = N`. Each anchor uses its own `tau+ = rho(h(x))`, which makes the
/// identity exact for any prior.
pub fn binomial_oracle(
    table: &EmbeddingTable,
    mix: &DiscreteClassMixture,
    n: usize,
    budget: u128,
) -> Result<OracleResult> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "the oracle needs N >= 1 negatives".into(),
        ));
    }
    if n > ORACLE_MAX_N {
        return Err(Error::OracleRangeExceeded(n));
    }
    if mix.num_classes() < 2 {
        return Err(Error::DegenerateClass(0));
    }
    let prep = prepare(table, mix)?;
    let needed: u128 = prep
        .marginal
        .idx
        .iter()
        .map(|&x| {
            let pos = prep.positive[x].len();
            (0..=n)
                .map(|k| pos as u128 * multisets(pos, k) * multisets(prep.marginal.len(), n - k))
                .sum::<u128>()
        })
        .sum();
    check_budget(needed, budget)?;

    let per_anchor: Vec<Vec<f64>> = prep
        .marginal
        .idx
        .par_iter()
        .map(|&x| {
            let tau = mix.anchor_tau_plus(x);
            let scale = prep.marginal_probs[x] / (1.0 - tau).powi(n as i32);
            (0..=n)
                .map(|k| {
                    let groups = [(&prep.positive[x], k), (&prep.marginal, n - k)];
                    let mut acc = NeumaierSum::new();
                    enumerate_multisets(&groups, &prep.exp_sim[x], |p, mass| {
                        acc.add(p * positive_average(&prep, x, 1.0, mass));
                    });
                    scale * binomial(n, k) * (-tau).powi(k as i32) * acc.value()
                })
                .collect()
        })
        .collect();
    let terms: Vec<f64> = per_anchor.into_iter().flatten().collect();
    let (value, condition_number) = cancelling_sum(&terms);
    Ok(OracleResult {
        value: LossValue::new(value, LossKind::Oracle),
        condition_number,
        terms: terms.len(),
    })
}

/// Softmax loss of the mean classifier on a weighted labelled set.
///
/// Class means are `mu_c = sum_{y_i = c} w_i r_i / sum_{y_i = c} w_i`, logits
/// are `r.mu_c / t` over the classes present, and the loss is the
/// weight-averaged cross entropy.
pub fn mean_classifier_loss_dataset(
    reps: &[Vec<f64>],
    labels: &[usize],
    weights: Option<&[f64]>,
    t: f64,
) -> Result<LossValue> {
    if reps.len() != labels.len() || weights.is_some_and(|w| w.len() != reps.len()) {
        return Err(Error::InvalidArgument(
            "representations, labels and weights differ in length".into(),
        ));
    }
    let weight = |i: usize| weights.map_or(1.0, |w| w[i]);
    let mut classes: Vec<usize> = labels
        .iter()
        .enumerate()
        .filter(|&(i, _)| weight(i) > 0.0)
        .map(|(_, &c)| c)
        .collect();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::SingleClassData);
    }
    let d = reps[0].len();
    let means: Vec<Vec<f64>> = classes
        .iter()
        .map(|&c| {
            let mut mu = vec![NeumaierSum::new(); d];
            let mut total = NeumaierSum::new();
            for (i, r) in reps.iter().enumerate() {
                if labels[i] == c && weight(i) > 0.0 {
                    total.add(weight(i));
                    for (m, x) in mu.iter_mut().zip(r) {
                        m.add(weight(i) * x);
                    }
                }
            }
            let total = total.value();
            mu.iter().map(|m| m.value() / total).collect()
        })
        .collect();
    let mut loss = NeumaierSum::new();
    let mut total = NeumaierSum::new();
    for (i, r) in reps.iter().enumerate() {
        let w = weight(i);
        if w <= 0.0 {
            continue;
        }
        let logits: Vec<f64> = means.iter().map(|mu| dot(r, mu) / t).collect();
        let label = classes.binary_search(&labels[i]).expect("label collected above");
        loss.add(w * (log_sum_exp(&logits) - logits[label]));
        total.add(w);
    }
    Ok(LossValue::new(
        loss.value() / total.value(),
        LossKind::SupervisedMu,
    ))
}

fn table_reps(table: &EmbeddingTable) -> Vec<Vec<f64>> {
    table.embeddings().iter().map(|e| e.coords().to_vec()).collect()
}

/// Exact mean-classifier loss on the task made of every class of `mix`.
pub fn mean_classifier_loss(table: &EmbeddingTable, mix: &DiscreteClassMixture) -> Result<LossValue> {
    if table.len() != mix.num_points() {
        return Err(Error::DimensionMismatch {
            expected: mix.num_points(),
            got: table.len(),
        });
    }
    mean_classifier_loss_dataset(
        &table_reps(table),
        mix.labels(),
        Some(&marginal(mix)),
        table.temperature(),
    )
}

/// Exact mean-classifier loss on the sub-task restricted to `classes`.
pub fn mean_classifier_loss_on_task(
    table: &EmbeddingTable,
    mix: &DiscreteClassMixture,
    classes: &[usize],
) -> Result<LossValue> {
    let p = marginal(mix);
    let weights: Vec<f64> = (0..mix.num_points())
        .map(|x| if classes.contains(&mix.label(x)) { p[x] } else { 0.0 })
        .collect();
    mean_classifier_loss_dataset(
        &table_reps(table),
        mix.labels(),
        Some(&weights),
        table.temperature(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::normalize;
    use crate::rng::substream;
    use crate::worldmodel::{build_discrete, random_mixture, MixtureConfig};
    use rand::Rng;

    fn two_point() -> DiscreteClassMixture {
        build_discrete(&MixtureConfig::Preset("two-point".into())).unwrap()
    }

    pub(crate) fn random_table(s: usize, d: usize, t: f64, seed: u64) -> EmbeddingTable {
        let mut rng = substream(seed, 77);
        let e = (0..s)
            .map(|_| {
                let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
                normalize(&v).unwrap()
            })
            .collect();
        EmbeddingTable::new(e, t).unwrap()
    }

    /// Visits every ordered tuple `(j_1..j_n)` with `j_i ~ dists[i]`, passing the
    /// tuple probability and `sum_i values[j_i]`.
    fn enumerate_tuples(dists: &[&Support], values: &[f64], mut visit: impl FnMut(f64, f64)) {
        let n = dists.len();
        if dists.iter().any(|d| d.len() == 0) {
            return;
        }
        let mut pos = vec![0usize; n];
        let mut prob = vec![1.0; n + 1];
        let mut sum = vec![0.0; n + 1];
        let refresh = |from: usize, pos: &[usize], prob: &mut [f64], sum: &mut [f64]| {
            for i in from..n {
                let d = dists[i];
                prob[i + 1] = prob[i] * d.prob[pos[i]];
                sum[i + 1] = sum[i] + values[d.idx[pos[i]]];
            }
        };
        refresh(0, &pos, &mut prob, &mut sum);
        loop {
            visit(prob[n], sum[n]);
            // odometer increment from the last position
            let mut i = n;
            loop {
                if i == 0 {
                    return;
                }
                i -= 1;
                pos[i] += 1;
                if pos[i] < dists[i].len() {
                    break;
                }
                pos[i] = 0;
            }
            refresh(i, &pos, &mut prob, &mut sum);
        }
    }

    #[test]
    fn tuple_enumeration_covers_product_measure() {
        let a = Support::new(&[0.2, 0.0, 0.8]);
        let b = Support::new(&[0.5, 0.5, 0.0]);
        let mut total = 0.0;
        let mut count = 0;
        enumerate_tuples(&[&a, &b, &a], &[1.0, 10.0, 100.0], |p, _| {
            total += p;
            count += 1;
        });
        assert_eq!(count, 8);
        assert!((total - 1.0).abs() < 1e-15);
        let mut sums = Vec::new();
        enumerate_tuples(&[&a, &b], &[1.0, 10.0, 100.0], |_, s| sums.push(s));
        assert_eq!(sums, vec![2.0, 11.0, 101.0, 110.0]);
    }

    #[test]
    fn multisets_match_ordered_tuples() {
        let a = Support::new(&[0.2, 0.0, 0.5, 0.3]);
        let b = Support::new(&[0.0, 0.6, 0.4, 0.0]);
        let values = [0.3, 1.7, 2.2, 0.9];
        let f = |s: f64| (1.0 + s).ln() * s.sqrt();
        for (ca, cb) in [(0, 0), (1, 0), (0, 3), (2, 2), (4, 1)] {
            let mut dists = vec![&a; ca];
            dists.extend(std::iter::repeat_n(&b, cb));
            let (mut want, mut got, mut mass, mut count) = (0.0, 0.0, 0.0, 0u128);
            enumerate_tuples(&dists, &values, |p, s| want += p * f(s));
            enumerate_multisets(&[(&a, ca), (&b, cb)], &values, |p, s| {
                got += p * f(s);
                mass += p;
                count += 1;
            });
            assert!((want - got).abs() < 1e-14, "{ca},{cb}: {want} vs {got}");
            assert!((mass - 1.0).abs() < 1e-14);
            assert_eq!(count, multisets(3, ca) * multisets(2, cb));
        }
    }

    #[test]
    fn two_point_single_negative() {
        let mix = two_point();
        let table = EmbeddingTable::new(
            vec![normalize(&[1.0, 0.0]).unwrap(), normalize(&[0.0, 1.0]).unwrap()],
            1.0,
        )
        .unwrap();
        let l = unbiased_loss_exact(&table, &mix, 1, 1.0, DEFAULT_ENUMERATION_BUDGET).unwrap();
        let e = std::f64::consts::E;
        assert!((l.value - (-(e / (e + 1.0)).ln())).abs() < 1e-15);
    }

    #[test]
    fn constant_embedding_closed_forms() {
        let mut rng = substream(4, 0);
        let mix = random_mixture(9, 3, 2, &mut rng).unwrap();
        let table = EmbeddingTable::constant(9, 4, 1.0).unwrap();
        for n in 1..4 {
            let target = (1.0 + n as f64).ln();
            let u = unbiased_loss_exact(&table, &mix, n, n as f64, DEFAULT_ENUMERATION_BUDGET).unwrap();
            assert!((u.value - target).abs() < 1e-13);
            let a = asymptotic_debiased_exact(&table, &mix, n as f64, None).unwrap();
            assert!((a.value - target).abs() < 1e-13);
            let o = binomial_oracle(&table, &mix, n, DEFAULT_ENUMERATION_BUDGET).unwrap();
            assert!((o.value.value - target).abs() < 1e-12);
        }
        let q = 7.5;
        let a = asymptotic_debiased_exact(&table, &mix, q, Some(0.2)).unwrap();
        assert!((a.value - (1.0f64 + q).ln()).abs() < 1e-13);
        assert_eq!(class_contrast_gap(&table, &mix).unwrap(), 0.0);
    }

    #[test]
    fn budget_and_range_errors() {
        let mut rng = substream(5, 0);
        let mix = random_mixture(10, 2, 2, &mut rng).unwrap();
        let table = random_table(10, 3, 1.0, 1);
        assert!(matches!(
            unbiased_loss_exact(&table, &mix, 6, 6.0, 1000),
            Err(Error::BudgetExceeded { .. })
        ));
        assert_eq!(
            binomial_oracle(&table, &mix, 9, u128::MAX).unwrap_err(),
            Error::OracleRangeExceeded(9)
        );
        assert!(matches!(
            binomial_oracle(&table, &mix, 0, u128::MAX),
            Err(Error::InvalidArgument(_))
        ));
        let single = build_discrete(&MixtureConfig::Preset("single-class".into())).unwrap();
        let t2 = random_table(2, 3, 1.0, 1);
        assert!(matches!(
            unbiased_loss_exact(&t2, &single, 1, 1.0, 100),
            Err(Error::DegenerateClass(_))
        ));
    }

    #[test]
    fn oracle_n1_equals_true_negative_expectation() {
        let mix = two_point();
        let table = random_table(2, 3, 1.0, 9);
        let o = binomial_oracle(&table, &mix, 1, 1000).unwrap();
        let u = unbiased_loss_exact(&table, &mix, 1, 1.0, 1000).unwrap();
        assert!((o.value.value - u.value).abs() <= 1e-14 * u.value.abs());
    }

    #[test]
    fn oracle_matches_unbiased_on_random_mixture() {
        for seed in 0..5 {
            let mut rng = substream(seed, 3);
            let mix = random_mixture(8, 2 + seed as usize % 3, 2, &mut rng).unwrap();
            let table = random_table(8, 4, 1.0, seed);
            let o = binomial_oracle(&table, &mix, 4, DEFAULT_ENUMERATION_BUDGET).unwrap();
            let u = unbiased_loss_exact(&table, &mix, 4, 4.0, DEFAULT_ENUMERATION_BUDGET).unwrap();
            let rel = (o.value.value - u.value).abs() / u.value.abs();
            assert!(rel <= 1e-9, "seed {seed}: rel {rel}, cond {}", o.condition_number);
            assert!(o.condition_number >= 1.0);
        }
    }

    #[test]
    fn asymptotic_at_tau_zero_is_biased_population_form() {
        let mut rng = substream(6, 0);
        let mix = random_mixture(7, 3, 2, &mut rng).unwrap();
        let table = random_table(7, 3, 1.0, 6);
        let q = 5.0;
        let a = asymptotic_debiased_exact(&table, &mix, q, Some(0.0)).unwrap();
        // direct double sum, no shared helpers
        let p = marginal(&mix);
        let mut direct = 0.0;
        for x in 0..7 {
            let ep: f64 = (0..7).map(|y| p[y] * table.similarity(x, y).value().exp()).sum();
            let pos = mix.conditional(mix.label(x));
            for y in 0..7 {
                let sp = table.similarity(x, y).value();
                direct += p[x] * pos[y] * -(sp.exp() / (sp.exp() + q * ep)).ln();
            }
        }
        assert!((a.value - direct).abs() < 1e-13);
        let b = asymptotic_biased_exact(&table, &mix, q).unwrap();
        assert!((a.value - b.value).abs() < 1e-13);
    }

    #[test]
    fn true_tau_makes_debiased_equal_unbiased_limit() {
        let mut rng = substream(8, 0);
        let mix = random_mixture(9, 3, 2, &mut rng).unwrap();
        let table = random_table(9, 3, 1.0, 8);
        let a = asymptotic_debiased_exact(&table, &mix, 4.0, None).unwrap();
        let u = asymptotic_unbiased_exact(&table, &mix, 4.0).unwrap();
        assert!((a.value - u.value).abs() < 1e-13);
    }

    #[test]
    fn overcorrection_is_reported() {
        // tau+ close to 1 with positives much closer than negatives
        let mix = two_point();
        let table = EmbeddingTable::new(
            vec![normalize(&[1.0, 0.0]).unwrap(), normalize(&[-1.0, 0.0]).unwrap()],
            1.0,
        )
        .unwrap();
        assert!(matches!(
            asymptotic_debiased_exact(&table, &mix, 1.0, Some(0.9)),
            Err(Error::NegativeDenominator { .. })
        ));
    }

    #[test]
    fn mean_classifier_examples() {
        let mut rng = substream(10, 0);
        let mix = random_mixture(8, 4, 2, &mut rng).unwrap();
        let table = EmbeddingTable::constant(8, 3, 1.0).unwrap();
        let l = mean_classifier_loss(&table, &mix).unwrap();
        assert!((l.value - 4f64.ln()).abs() < 1e-14);

        // f(x) = one-hot of its class, which is also the class mean
        let sep = EmbeddingTable::new(
            (0..8)
                .map(|x| {
                    let mut v = vec![0.0; 4];
                    v[mix.label(x)] = 1.0;
                    normalize(&v).unwrap()
                })
                .collect(),
            1.0,
        )
        .unwrap();
        let l = mean_classifier_loss(&sep, &mix).unwrap();
        assert!(l.value < 4f64.ln());
        let e = std::f64::consts::E;
        assert!((l.value - (-(e / (e + 3.0)).ln())).abs() < 1e-14);

        let sub = mean_classifier_loss_on_task(&table, &mix, &[0, 2]).unwrap();
        assert!((sub.value - 2f64.ln()).abs() < 1e-14);
        assert_eq!(
            mean_classifier_loss_on_task(&table, &mix, &[1]),
            Err(Error::SingleClassData)
        );
    }

    /// Exact enumeration against a plain Monte Carlo average.
    #[test]
    fn unbiased_exact_matches_monte_carlo() {
        use crate::worldmodel::{DiscreteSampler, NegativeMode, TripleConfig};
        let mut rng = substream(12, 0);
        let mix = random_mixture(6, 2, 2, &mut rng).unwrap();
        let table = random_table(6, 3, 1.0, 12);
        let n = 3;
        let exact = unbiased_loss_exact(&table, &mix, n, n as f64, DEFAULT_ENUMERATION_BUDGET)
            .unwrap()
            .value;
        let sampler = DiscreteSampler::new(&mix);
        let cfg = TripleConfig {
            negatives: n,
            positives: 1,
            mode: NegativeMode::TrueNegatives,
            reuse_positive: true,
        };
        let draws = 200_000;
        let mut rng = substream(13, 0);
        let values: Vec<f64> = (0..draws)
            .map(|_| {
                let tr = crate::worldmodel::sample_triple(&sampler, &cfg, &mut rng).unwrap();
                let sp = table.similarity(tr.anchor, tr.positive).value();
                let mass: f64 = tr.negatives.iter().map(|&u| table.similarity(tr.anchor, u).value().exp()).sum();
                (mass / sp.exp()).ln_1p()
            })
            .collect();
        let (mean, se) = crate::summation::mean_and_stderr(&values);
        assert!((mean - exact).abs() <= 3.0 * se, "mc {mean} +- {se} vs exact {exact}");
    }
}

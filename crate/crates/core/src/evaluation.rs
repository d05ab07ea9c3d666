//! Downstream evaluation: linear probes on frozen representations and the
//! supervised-loss bound chain.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::geometry::{dot, EmbeddingTable, Matrix};
use crate::losses::point::log_sum_exp;
use crate::losses::asymptotic_debiased_exact;
pub use crate::losses::{mean_classifier_loss, mean_classifier_loss_dataset, mean_classifier_loss_on_task};
use crate::summation::NeumaierSum;
use crate::verification::BoundCertificate;
use crate::worldmodel::{marginal, DiscreteClassMixture};

/// Representations with labels and optional nonnegative sample weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledReps {
    pub reps: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub weights: Option<Vec<f64>>,
}

impl LabeledReps {
    pub fn new(reps: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self> {
        Self::weighted(reps, labels, None)
    }

    pub fn weighted(reps: Vec<Vec<f64>>, labels: Vec<usize>, weights: Option<Vec<f64>>) -> Result<Self> {
        if reps.len() != labels.len() || weights.as_ref().is_some_and(|w| w.len() != reps.len()) {
            return Err(Error::InvalidArgument(
                "representations, labels and weights differ in length".into(),
            ));
        }
        if let Some(d) = reps.first().map(Vec::len) {
            if let Some(bad) = reps.iter().find(|r| r.len() != d) {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: bad.len(),
                });
            }
        }
        if weights
            .as_ref()
            .is_some_and(|w| w.iter().any(|x| !(*x >= 0.0) || !x.is_finite()))
        {
            return Err(Error::InvalidArgument("weights must be finite and nonnegative".into()));
        }
        Ok(Self { reps, labels, weights })
    }

    /// Exact population data of a mixture: one row per point, weighted by `p`.
    pub fn from_table(table: &EmbeddingTable, mix: &DiscreteClassMixture) -> Result<Self> {
        Self::weighted(
            table.embeddings().iter().map(|e| e.coords().to_vec()).collect(),
            mix.labels().to_vec(),
            Some(marginal(mix)),
        )
    }

    fn weight(&self, i: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[i])
    }

    /// Sorted labels carrying positive weight.
    fn classes(&self) -> Vec<usize> {
        let mut c: Vec<usize> = (0..self.labels.len())
            .filter(|&i| self.weight(i) > 0.0)
            .map(|i| self.labels[i])
            .collect();
        c.sort_unstable();
        c.dedup();
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ProbeInit {
    /// Rows `mu_c / t`, the mean classifier.
    MeanClassifier,
    Zero,
    Weights(Matrix),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub max_iters: usize,
    /// Stop once the Frobenius norm of the gradient drops below this.
    pub grad_tol: f64,
    pub init: ProbeInit,
    /// Temperature of the mean-classifier initialisation.
    pub temperature: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            max_iters: 5000,
            grad_tol: 1e-8,
            init: ProbeInit::MeanClassifier,
            temperature: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    /// Fraction of the evaluation set (or the training set if none was
    /// given) whose argmax prediction is correct.
    pub accuracy: f64,
    /// Weighted softmax cross entropy on the training set.
    pub softmax_loss: f64,
    /// `K x d`, row `k` scores `classes[k]`.
    pub probe_weights: Matrix,
    pub classes: Vec<usize>,
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
}

struct Objective<'a> {
    data: &'a LabeledReps,
    classes: &'a [usize],
    total_weight: f64,
}

impl Objective<'_> {
    fn label_index(&self, i: usize) -> usize {
        self.classes
            .binary_search(&self.data.labels[i])
            .expect("weighted labels are in the class list")
    }

    fn loss_and_grad(&self, w: &Matrix) -> (f64, Matrix) {
        let mut grad = Matrix::zeros(w.rows(), w.cols());
        let mut loss = NeumaierSum::new();
        for (i, r) in self.data.reps.iter().enumerate() {
            let wi = self.data.weight(i);
            if wi <= 0.0 {
                continue;
            }
            let logits = w.matvec(r);
            let lse = log_sum_exp(&logits);
            let y = self.label_index(i);
            loss.add(wi * (lse - logits[y]));
            let scale = wi / self.total_weight;
            for (k, z) in logits.iter().enumerate() {
                let p = (z - lse).exp() - if k == y { 1.0 } else { 0.0 };
                for (g, x) in grad.row_mut(k).iter_mut().zip(r) {
                    *g += scale * p * x;
                }
            }
        }
        (loss.value() / self.total_weight, grad)
    }
}

fn class_means(data: &LabeledReps, classes: &[usize], t: f64) -> Matrix {
    let d = data.reps[0].len();
    let mut w = Matrix::zeros(classes.len(), d);
    for (k, &c) in classes.iter().enumerate() {
        let mut total = NeumaierSum::new();
        let mut mu = vec![NeumaierSum::new(); d];
        for (i, r) in data.reps.iter().enumerate() {
            let wi = data.weight(i);
            if data.labels[i] == c && wi > 0.0 {
                total.add(wi);
                for (m, x) in mu.iter_mut().zip(r) {
                    m.add(wi * x);
                }
            }
        }
        let total = total.value();
        for (o, m) in w.row_mut(k).iter_mut().zip(&mu) {
            *o = m.value() / total / t;
        }
    }
    w
}

/// Predicted label for each representation.
pub fn predict(weights: &Matrix, classes: &[usize], reps: &[Vec<f64>]) -> Vec<usize> {
    reps.iter()
        .map(|r| {
            let scores = weights.matvec(r);
            let best = scores
                .iter()
                .enumerate()
                .fold(0, |b, (k, &s)| if s > scores[b] { k } else { b });
            classes[best]
        })
        .collect()
}

/// Multinomial logistic regression without bias on frozen representations.
///
/// Full-batch gradient descent with step `1/L`, where
/// `L = 0.5 * weighted mean |r|^2` bounds the curvature, so the loss never
/// increases. The best iterate is returned; starting from the mean classifier
/// therefore gives a loss no larger than the mean classifier's.
pub fn linear_probe(train: &LabeledReps, eval: Option<&LabeledReps>, config: &ProbeConfig) -> Result<ProbeResult> {
    let classes = train.classes();
    if classes.len() < 2 {
        return Err(Error::SingleClassData);
    }
    if !(config.temperature > 0.0) {
        return Err(Error::InvalidArgument("probe temperature must be positive".into()));
    }
    let d = train.reps[0].len();
    let total_weight: f64 = (0..train.reps.len()).map(|i| train.weight(i)).sum();
    let obj = Objective {
        data: train,
        classes: &classes,
        total_weight,
    };
    let mut w = match &config.init {
        ProbeInit::MeanClassifier => class_means(train, &classes, config.temperature),
        ProbeInit::Zero => Matrix::zeros(classes.len(), d),
        ProbeInit::Weights(m) => {
            if m.rows() != classes.len() || m.cols() != d {
                return Err(Error::DimensionMismatch {
                    expected: classes.len() * d,
                    got: m.rows() * m.cols(),
                });
            }
            m.clone()
        }
    };
    let curvature = 0.5
        * (0..train.reps.len())
            .map(|i| train.weight(i) * dot(&train.reps[i], &train.reps[i]))
            .sum::<f64>()
        / total_weight;
    let step = if curvature > 0.0 { 1.0 / curvature } else { 0.0 };

    let (mut loss, mut grad) = obj.loss_and_grad(&w);
    let frob = |g: &Matrix| g.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut grad_norm = frob(&grad);
    let mut iterations = 0;
    while iterations < config.max_iters && grad_norm >= config.grad_tol && step > 0.0 {
        let mut next = w.clone();
        for (p, g) in next.as_mut_slice().iter_mut().zip(grad.as_slice()) {
            *p -= step * g;
        }
        let (next_loss, next_grad) = obj.loss_and_grad(&next);
        iterations += 1;
        if !(next_loss <= loss) {
            // only roundoff can get here; keep the best iterate
            break;
        }
        w = next;
        loss = next_loss;
        grad = next_grad;
        grad_norm = frob(&grad);
    }

    let scored = eval.unwrap_or(train);
    let predictions = predict(&w, &classes, &scored.reps);
    let mut correct = 0.0;
    let mut total = 0.0;
    for (i, p) in predictions.iter().enumerate() {
        let wi = scored.weight(i);
        total += wi;
        if *p == scored.labels[i] {
            correct += wi;
        }
    }
    Ok(ProbeResult {
        accuracy: if total > 0.0 { correct / total } else { 0.0 },
        softmax_loss: loss,
        probe_weights: w,
        classes,
        iterations,
        grad_norm,
        converged: grad_norm < config.grad_tol,
    })
}

/// Tolerance on the exact comparison in [`lemma4_chain_check`].
pub const LEMMA4_TOLERANCE: f64 = 1e-9;

/// Checks that the mean-classifier loss is at most the large-`N` debiased
/// loss with `Q = N`, both computed exactly. Requires `N >= K - 1`.
///
/// The metadata also carries a linear-probe value, which approximates the
/// best linear classifier's loss and should sit below the mean classifier,
/// and for `K > 3` the mean-classifier loss on the `K` cyclic three-class
/// sub-tasks. Neither affects `passed`.
pub fn lemma4_chain_check(table: &EmbeddingTable, mix: &DiscreteClassMixture, n: usize) -> Result<BoundCertificate> {
    let k = mix.num_classes();
    if n + 1 < k {
        return Err(Error::BoundPreconditionViolated(format!(
            "need N >= K - 1 = {}, got N = {n}",
            k.saturating_sub(1)
        )));
    }
    let lhs = mean_classifier_loss(table, mix)?.value;
    let rhs = asymptotic_debiased_exact(table, mix, n as f64, None)?.value;

    let data = LabeledReps::from_table(table, mix)?;
    let probe = linear_probe(
        &data,
        None,
        &ProbeConfig {
            max_iters: 2000,
            temperature: table.temperature(),
            ..ProbeConfig::default()
        },
    )?;

    let mut meta = BTreeMap::new();
    meta.insert("N".into(), json!(n));
    meta.insert("K".into(), json!(k));
    meta.insert("t".into(), json!(table.temperature()));
    meta.insert("mixture".into(), json!(mix.name()));
    meta.insert("abs_slack".into(), json!(LEMMA4_TOLERANCE));
    meta.insert("probe_loss_approx".into(), json!(probe.softmax_loss));
    meta.insert("probe_converged".into(), json!(probe.converged));
    if k > 3 {
        let sub: Vec<f64> = (0..k)
            .map(|c| mean_classifier_loss_on_task(table, mix, &[c, (c + 1) % k, (c + 2) % k]).map(|l| l.value))
            .collect::<Result<_>>()?;
        meta.insert("subtasks".into(), json!(sub.len()));
        meta.insert("subtask_mu_loss_mean".into(), json!(sub.iter().sum::<f64>() / sub.len() as f64));
    }
    Ok(BoundCertificate::new("lemma4", lhs, rhs, 0.0, 0, meta))
}

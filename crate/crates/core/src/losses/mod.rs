//! Contrastive objectives.
//!
//! * [`point`]: single-sample biased and debiased losses, the clamped
//!   negative-mass estimator and softmax cross entropy.
//! * [`batch`]: in-batch construction where every other view is a negative.
//! * [`exact`]: population values over a [`DiscreteClassMixture`] by
//!   enumeration, including the inclusion-exclusion oracle.
//!
//! [`DiscreteClassMixture`]: crate::worldmodel::DiscreteClassMixture

pub mod batch;
pub mod exact;
pub mod point;

use serde::{Deserialize, Serialize};

pub use batch::{batch_loss, debiased_loss_batch, BatchObjective, LossSpec, ViewBatch};
pub use exact::{
    asymptotic_biased_exact, asymptotic_debiased_exact, asymptotic_unbiased_exact,
    binomial_oracle, class_contrast_gap, mean_classifier_loss, mean_classifier_loss_dataset,
    mean_classifier_loss_on_task, unbiased_loss_exact, OracleResult, DEFAULT_ENUMERATION_BUDGET,
};
pub use point::{
    biased_loss_point, debiased_loss_point, g_estimator, softmax_ce, FloorMode, GEstimate,
};

/// Which objective a [`LossValue`] came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Biased,
    Unbiased,
    DebiasedFin,
    DebiasedAsym,
    Oracle,
    SupervisedMu,
    SoftmaxCe,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub value: f64,
    pub kind: LossKind,
}

impl LossValue {
    pub fn new(value: f64, kind: LossKind) -> Self {
        Self { value, kind }
    }
}

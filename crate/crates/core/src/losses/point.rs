use serde::{Deserialize, Serialize};

use super::{LossKind, LossValue};
use crate::error::{Error, Result};
use crate::geometry::Similarity;

/// Lower clamp on the negative-mass estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FloorMode {
    /// `e^{-1/t}`, the smallest value `E e^{f(x).f(x-)}` can take on the sphere.
    #[default]
    ExpFloor,
    /// `0`, for unnormalised features.
    ZeroFloor,
}

impl FloorMode {
    pub fn floor(self, t: f64) -> f64 {
        match self {
            FloorMode::ExpFloor => (-1.0 / t).exp(),
            FloorMode::ZeroFloor => 0.0,
        }
    }

    /// `ln` of the floor, `-inf` for the zero floor.
    fn log_floor(self, t: f64) -> f64 {
        match self {
            FloorMode::ExpFloor => -1.0 / t,
            FloorMode::ZeroFloor => f64::NEG_INFINITY,
        }
    }
}

/// Clamped estimate of the expected negative similarity mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GEstimate {
    pub value: f64,
    pub floored: bool,
    pub floor_used: f64,
}

fn check_tau(tau_plus: f64) -> Result<()> {
    if !(0.0..1.0).contains(&tau_plus) {
        return Err(Error::InvalidArgument(format!(
            "tau_plus must lie in [0, 1), got {tau_plus}"
        )));
    }
    Ok(())
}

/// `ln(d) + shift` written as `ln(1 + mass/ep)` whenever `ep` is representable,
/// which keeps tiny losses accurate.
fn role_loss(ep: f64, mass: f64, d: f64, shift: f64) -> f64 {
    if ep > 1e-300 {
        (mass / ep).ln_1p()
    } else {
        d.ln() + shift
    }
}

fn max_of(first: f64, rest: &[f64]) -> f64 {
    rest.iter().fold(first, |m, &s| m.max(s))
}

/// `g = max{ (mean e^{s_u} - tau+ mean e^{s_v}) / tau-, floor }`.
pub fn g_estimator(
    sims_u: &[Similarity],
    sims_v: &[Similarity],
    tau_plus: f64,
    t: f64,
    floor_mode: FloorMode,
) -> Result<GEstimate> {
    if sims_u.is_empty() {
        return Err(Error::EmptyNegatives);
    }
    if sims_v.is_empty() {
        return Err(Error::InvalidArgument("M must be at least 1".into()));
    }
    check_tau(tau_plus)?;
    let mean_u = sims_u.iter().map(|s| s.value().exp()).sum::<f64>() / sims_u.len() as f64;
    let mean_v = sims_v.iter().map(|s| s.value().exp()).sum::<f64>() / sims_v.len() as f64;
    let raw = (mean_u - tau_plus * mean_v) / (1.0 - tau_plus);
    let floor = floor_mode.floor(t);
    Ok(if raw <= floor {
        GEstimate {
            value: floor,
            floored: true,
            floor_used: floor,
        }
    } else {
        GEstimate {
            value: raw,
            floored: false,
            floor_used: floor,
        }
    })
}

/// Loss of one anchor role together with its partial derivatives with respect
/// to each similarity it reads.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct RoleTerm {
    pub loss: f64,
    pub d_pos: f64,
    pub d_neg: Vec<f64>,
    pub d_v: Vec<f64>,
    pub floored: bool,
}

/// `ln(e^p + (q/N) sum e^{s_i}) - p`, evaluated with max-subtraction.
pub(crate) fn biased_role(pos: f64, negs: &[f64], q: f64, grad: bool) -> RoleTerm {
    let m = max_of(pos, negs);
    let ep = (pos - m).exp();
    let en: Vec<f64> = negs.iter().map(|s| (s - m).exp()).collect();
    let w = q / negs.len() as f64;
    let mass = w * en.iter().sum::<f64>();
    let d = ep + mass;
    let loss = role_loss(ep, mass, d, m - pos);
    if !grad {
        return RoleTerm {
            loss,
            d_pos: 0.0,
            d_neg: Vec::new(),
            d_v: Vec::new(),
            floored: false,
        };
    }
    RoleTerm {
        loss,
        d_pos: ep / d - 1.0,
        d_neg: en.iter().map(|e| w * e / d).collect(),
        d_v: Vec::new(),
        floored: false,
    }
}

/// `ln(e^p + N g) - p` with `N g = max{(sum e^{s_u} - tau+ (N/M) sum e^{s_v}) / tau-, N floor}`.
///
/// The shift `m` uses the anchor's positive and unlabeled similarities only,
/// so at `tau+ = 0` the arithmetic coincides with [`biased_role`] at `q = N`.
pub(crate) fn debiased_role(
    pos: f64,
    us: &[f64],
    vs: &[f64],
    tau_plus: f64,
    t: f64,
    floor_mode: FloorMode,
    grad: bool,
) -> RoleTerm {
    let n = us.len() as f64;
    let ratio = n / vs.len() as f64;
    let tau_minus = 1.0 - tau_plus;
    let m = max_of(pos, us);
    let ep = (pos - m).exp();
    let eu: Vec<f64> = us.iter().map(|s| (s - m).exp()).collect();
    let ev: Vec<f64> = vs.iter().map(|s| (s - m).exp()).collect();
    let sum_u = eu.iter().sum::<f64>();
    let sum_v = ev.iter().sum::<f64>();
    let raw = (sum_u - tau_plus * ratio * sum_v) / tau_minus;
    let floor = n * (floor_mode.log_floor(t) - m).exp();
    let floored = raw <= floor;
    let mass = if floored { floor } else { raw };
    let d = ep + mass;
    let loss = role_loss(ep, mass, d, m - pos);
    if !grad {
        return RoleTerm {
            loss,
            d_pos: 0.0,
            d_neg: Vec::new(),
            d_v: Vec::new(),
            floored,
        };
    }
    let (d_neg, d_v) = if floored {
        (vec![0.0; us.len()], vec![0.0; vs.len()])
    } else {
        (
            eu.iter().map(|e| e / (tau_minus * d)).collect(),
            ev.iter()
                .map(|e| -(tau_plus * ratio * e) / (tau_minus * d))
                .collect(),
        )
    };
    RoleTerm {
        loss,
        d_pos: ep / d - 1.0,
        d_neg,
        d_v,
        floored,
    }
}

fn values(s: &[Similarity]) -> Vec<f64> {
    s.iter().map(|x| x.value()).collect()
}

/// `-ln[e^{s+} / (e^{s+} + (Q/N) sum e^{s_i})]`.
pub fn biased_loss_point(sim_pos: Similarity, sims_neg: &[Similarity], q: f64) -> Result<LossValue> {
    if sims_neg.is_empty() {
        return Err(Error::EmptyNegatives);
    }
    if !(q >= 0.0) || !q.is_finite() {
        return Err(Error::InvalidArgument(format!("Q must be nonnegative, got {q}")));
    }
    let term = biased_role(sim_pos.value(), &values(sims_neg), q, false);
    Ok(LossValue::new(term.loss, LossKind::Biased))
}

/// `-ln[e^{s+} / (e^{s+} + N g)]` with `g` from [`g_estimator`].
pub fn debiased_loss_point(
    sim_pos: Similarity,
    sims_u: &[Similarity],
    sims_v: &[Similarity],
    tau_plus: f64,
    t: f64,
    floor_mode: FloorMode,
) -> Result<LossValue> {
    if sims_u.is_empty() {
        return Err(Error::EmptyNegatives);
    }
    if sims_v.is_empty() {
        return Err(Error::InvalidArgument("M must be at least 1".into()));
    }
    check_tau(tau_plus)?;
    let term = debiased_role(
        sim_pos.value(),
        &values(sims_u),
        &values(sims_v),
        tau_plus,
        t,
        floor_mode,
        false,
    );
    Ok(LossValue::new(term.loss, LossKind::DebiasedFin))
}

/// `ln sum_k e^{z_k} - z_label`.
pub fn softmax_ce(logits: &[f64], label: usize) -> Result<LossValue> {
    if logits.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "softmax needs at least 2 classes, got {}",
            logits.len()
        )));
    }
    if label >= logits.len() {
        return Err(Error::InvalidArgument(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    Ok(LossValue::new(
        log_sum_exp(logits) - logits[label],
        LossKind::SoftmaxCe,
    ))
}

pub(crate) fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    m + z.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

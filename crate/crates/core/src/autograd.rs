//! Closed-form gradients of the batch losses through the encoder, and a
//! central-difference harness to check them.
//!
//! The chain is `params -> outputs v_i -> u_i = v_i/|v_i| -> s_ij = u_i.u_j/t
//! -> loss`. The loss layer supplies `dL/ds_ij`; on a floored estimator the
//! unlabeled and positive-sample similarities get a zero subgradient while the
//! positive-pair path is kept.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{normalize, normalize_backward, UnitEmbedding};
use crate::losses::batch::{evaluate_batch, BatchEval};
use crate::losses::{LossSpec, LossValue, ViewBatch};
use crate::training::EncoderParams;

fn collect_batch<T>(batch: ViewBatch<Result<T>>) -> Result<ViewBatch<T>> {
    Ok(ViewBatch {
        first: batch.first.into_iter().collect::<Result<_>>()?,
        second: batch.second.into_iter().collect::<Result<_>>()?,
        extra: batch
            .extra
            .into_iter()
            .map(|e| e.into_iter().collect::<Result<_>>())
            .collect::<Result<_>>()?,
        labels: batch.labels,
    })
}

fn check_inputs(params: &EncoderParams, batch: &ViewBatch<Vec<f64>>) -> Result<()> {
    for x in batch.flat() {
        if x.len() != params.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: params.input_dim(),
                got: x.len(),
            });
        }
    }
    Ok(())
}

/// Batch loss and the per-role clamp flags at `params`.
pub(crate) fn evaluate(
    params: &EncoderParams,
    batch: &ViewBatch<Vec<f64>>,
    spec: &LossSpec,
    want_grad: bool,
) -> Result<(BatchEval, ViewBatch<Vec<Vec<f64>>>, ViewBatch<UnitEmbedding>)> {
    check_inputs(params, batch)?;
    let acts = batch.map(|x| params.forward(x));
    let units = collect_batch(acts.map(|a| normalize(&a[a.len() - 1])))?;
    let eval = evaluate_batch(&units, spec, want_grad)?;
    Ok((eval, acts, units))
}

/// `dL/dv_i` for every flat view, where `v_i` is the unnormalised output.
pub(crate) fn output_grads(
    eval: &BatchEval,
    acts: &ViewBatch<Vec<Vec<f64>>>,
    units: &ViewBatch<UnitEmbedding>,
    t: f64,
) -> Vec<Vec<f64>> {
    let g = eval.sim_grad.as_ref().expect("gradient requested");
    let units = units.flat();
    let acts = acts.flat();
    let d = units[0].dim();
    (0..units.len())
        .map(|i| {
            let mut du = vec![0.0; d];
            for (j, u) in units.iter().enumerate() {
                let c = (g[(i, j)] + g[(j, i)]) / t;
                if c != 0.0 {
                    for (o, x) in du.iter_mut().zip(u.coords()) {
                        *o += c * x;
                    }
                }
            }
            let v = &acts[i][acts[i].len() - 1];
            normalize_backward(v, units[i].coords(), &du)
        })
        .collect()
}

/// Loss value with gradient and the per-role clamp flags.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: LossValue,
    pub grad: EncoderParams,
    pub floored: Vec<bool>,
}

/// Batch loss and its exact gradient with respect to every encoder weight.
pub fn loss_and_grad(
    params: &EncoderParams,
    batch: &ViewBatch<Vec<f64>>,
    spec: &LossSpec,
) -> Result<(LossValue, EncoderParams)> {
    let out = loss_grad_flags(params, batch, spec)?;
    Ok((out.loss, out.grad))
}

pub fn loss_grad_flags(
    params: &EncoderParams,
    batch: &ViewBatch<Vec<f64>>,
    spec: &LossSpec,
) -> Result<LossGrad> {
    let (eval, acts, units) = evaluate(params, batch, spec, true)?;
    let dv = output_grads(&eval, &acts, &units, spec.temperature);
    let mut grad = params.zeros_like();
    let layers = params.layers();
    let flat_acts = acts.flat();
    // accumulate in flat view order so results do not depend on scheduling
    for (a, top) in flat_acts.iter().zip(dv) {
        let mut delta = top;
        for l in (0..layers.len()).rev() {
            grad.layers_mut()[l].add_outer(1.0, &delta, &a[l]);
            if l > 0 {
                let back = layers[l].matvec_transposed(&delta);
                // a[l] = tanh(z_l), so dtanh = 1 - a^2
                delta = back
                    .iter()
                    .zip(&a[l])
                    .map(|(b, h)| b * (1.0 - h * h))
                    .collect();
            }
        }
    }
    Ok(LossGrad {
        loss: LossValue::new(eval.loss, spec.objective.loss_kind()),
        grad,
        floored: eval.floored,
    })
}

/// Analytic against central-difference gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientReport {
    pub analytic: EncoderParams,
    pub numeric: EncoderParams,
    /// `|a - n|_inf / (|n|_inf + 1e-12)` over the included coordinates.
    pub max_rel_err: f64,
    pub step: f64,
    /// Coordinates whose `+-step` probes land on different clamp branches.
    pub excluded: usize,
    pub coordinates: usize,
}

/// Central differences on every weight.
///
/// A coordinate is excluded when any anchor role changes its floored flag
/// between the two probes or the base point, since the loss has a kink there.
pub fn finite_diff_check(
    params: &EncoderParams,
    batch: &ViewBatch<Vec<f64>>,
    spec: &LossSpec,
    step: f64,
) -> Result<GradientReport> {
    if !(1e-8..=1e-3).contains(&step) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step must lie in [1e-8, 1e-3], got {step}"
        )));
    }
    let base = loss_grad_flags(params, batch, spec)?;
    let theta = params.flatten();
    let probe = |k: usize, h: f64| -> Result<(f64, Vec<bool>)> {
        let mut p = theta.clone();
        p[k] += h;
        let (eval, _, _) = evaluate(&params.with_flat(&p)?, batch, spec, false)?;
        Ok((eval.loss, eval.floored))
    };
    let mut numeric = vec![0.0; theta.len()];
    let mut included = vec![true; theta.len()];
    for k in 0..theta.len() {
        let (up, fu) = probe(k, step)?;
        let (down, fd) = probe(k, -step)?;
        numeric[k] = (up - down) / (2.0 * step);
        included[k] = fu == fd && fu == base.floored;
    }
    let analytic = base.grad.flatten();
    let mut diff: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for k in (0..theta.len()).filter(|&k| included[k]) {
        diff = diff.max((analytic[k] - numeric[k]).abs());
        scale = scale.max(numeric[k].abs());
    }
    Ok(GradientReport {
        numeric: params.with_flat(&numeric)?,
        analytic: base.grad,
        max_rel_err: diff / (scale + 1e-12),
        step,
        excluded: included.iter().filter(|&&i| !i).count(),
        coordinates: theta.len(),
    })
}

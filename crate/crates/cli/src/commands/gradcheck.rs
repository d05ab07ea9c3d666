//! `dcl gradcheck`: analytic gradients against central differences on a set
//! of small random encoders and batches.

use rand::Rng;
use serde_json::{json, Map};

use dcl_core::autograd::finite_diff_check;
use dcl_core::geometry::{dot, normalize, Matrix};
use dcl_core::losses::{BatchObjective, LossSpec, ViewBatch};
use dcl_core::rng::{substream, StreamRng};
use dcl_core::training::EncoderParams;

use super::GRADCHECK_HEADER;
use crate::config::Config;
use crate::error::{CliError, CliResult};
use crate::output::{csv, RunOutput};

const KEYS: &[&str] = &["configs", "step", "tolerance", "loss", "tau_plus", "temperature"];

pub fn allowed_keys() -> Vec<&'static str> {
    KEYS.to_vec()
}

struct Case {
    params: EncoderParams,
    batch: ViewBatch<Vec<f64>>,
    spec: LossSpec,
    hidden: Option<usize>,
}

fn vector(rng: &mut StreamRng, m: usize) -> Vec<f64> {
    (0..m).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Identity encoder in two dimensions with `tau_plus` placed exactly on the
/// clamp of the first anchor role, so nearby probes straddle the kink.
fn straddling_case(t: f64) -> CliResult<Case> {
    let batch = ViewBatch {
        first: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        second: vec![vec![1.0, 0.3], vec![0.3, 1.0]],
        extra: vec![vec![], vec![]],
        labels: vec![0, 1],
    };
    let flat: Vec<_> = batch.flat().into_iter().map(|x| normalize(x)).collect::<Result<_, _>>()?;
    let s = |i: usize, j: usize| dot(flat[i].coords(), flat[j].coords()) / t;
    // first view: negatives are views 1 and 3, the positive is view 2
    let sum_u = s(0, 1).exp() + s(0, 3).exp();
    let floor = 2.0 * (-1.0 / t).exp();
    let ev = 2.0 * s(0, 2).exp();
    let tau = (sum_u - floor) / (ev - floor);
    Ok(Case {
        params: EncoderParams::linear(Matrix::identity(2))?,
        batch,
        spec: LossSpec::new(BatchObjective::Debiased, tau, t),
        hidden: None,
    })
}

fn minimal_case(objective: BatchObjective, tau: f64, t: f64, rng: &mut StreamRng) -> CliResult<Case> {
    let params = EncoderParams::random(2, 2, None, rng)?;
    let batch = ViewBatch {
        first: (0..2).map(|_| vector(rng, 2)).collect(),
        second: (0..2).map(|_| vector(rng, 2)).collect(),
        extra: vec![vec![], vec![]],
        labels: vec![0, 1],
    };
    Ok(Case {
        params,
        batch,
        spec: LossSpec::new(objective, tau, t),
        hidden: None,
    })
}

fn random_case(objective: BatchObjective, tau: f64, t: f64, rng: &mut StreamRng) -> CliResult<Case> {
    let b = rng.random_range(2..=5);
    let m = rng.random_range(2..=6);
    let d = rng.random_range(2..=5);
    let hidden = rng.random_bool(0.5).then(|| rng.random_range(2..=6));
    let extras = rng.random_range(0..=2);
    let params = EncoderParams::random(m, d, hidden, rng)?;
    let batch = ViewBatch {
        first: (0..b).map(|_| vector(rng, m)).collect(),
        second: (0..b).map(|_| vector(rng, m)).collect(),
        extra: (0..b).map(|_| (0..extras).map(|_| vector(rng, m)).collect()).collect(),
        labels: (0..b).map(|i| i % 2).collect(),
    };
    Ok(Case {
        params,
        batch,
        spec: LossSpec {
            positives: extras + 1,
            ..LossSpec::new(objective, tau, t)
        },
        hidden,
    })
}

pub fn run(cfg: &Config, out: &std::path::Path) -> CliResult<bool> {
    cfg.check_keys("gradcheck", &allowed_keys())?;
    let seed = cfg.seed()?;
    let configs = cfg.get("configs", 20usize)?;
    let step = cfg.get("step", 1e-6f64)?;
    let tolerance = cfg.get("tolerance", 1e-5f64)?;
    let objectives = cfg.list(
        "loss",
        vec![BatchObjective::Biased, BatchObjective::Debiased, BatchObjective::Unbiased],
    )?;
    let tau = cfg.get("tau_plus", 0.1f64)?;
    let t = cfg.get("temperature", 0.5f64)?;
    if configs == 0 {
        return Err(CliError::config("configs must be at least 1"));
    }

    // config 0 straddles the clamp, the next ones are minimal two-dimensional
    // cases for each objective, the rest are random shapes
    let mut rows = Vec::with_capacity(configs);
    let mut failed = 0usize;
    let mut excluded_total = 0usize;
    for i in 0..configs {
        let mut rng = substream(seed, i as u64);
        let objective = objectives[i % objectives.len()];
        let case = if i == 0 {
            straddling_case(t)?
        } else if i <= objectives.len() {
            minimal_case(objectives[i - 1], tau, t, &mut rng)?
        } else {
            random_case(objective, tau, t, &mut rng)?
        };
        let report = finite_diff_check(&case.params, &case.batch, &case.spec, step)?;
        let ok = report.max_rel_err <= tolerance;
        failed += usize::from(!ok);
        excluded_total += report.excluded;
        rows.push(row![
            i,
            case.spec.objective.name(),
            case.params.input_dim(),
            case.params.output_dim(),
            case.hidden.map_or(String::new(), |h| h.to_string()),
            case.batch.anchors(),
            case.spec.positives,
            case.spec.tau_plus,
            report.max_rel_err,
            report.excluded,
            report.coordinates,
            ok,
        ]);
    }
    let mut output = RunOutput::create(out, cfg.get("time", false)?)?;
    output.write("gradcheck.csv", &csv(GRADCHECK_HEADER, &rows))?;
    let passed = failed == 0;
    let mut body = Map::new();
    body.insert("configs".into(), json!(configs));
    body.insert("failed".into(), json!(failed));
    body.insert("excluded_coordinates".into(), json!(excluded_total));
    body.insert("tolerance".into(), json!(tolerance));
    output.finish("gradcheck", cfg, passed, body)?;
    Ok(passed)
}

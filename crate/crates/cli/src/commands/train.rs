//! `dcl train`: contrastive training runs followed by a linear probe.

use rayon::prelude::*;
use serde_json::{json, Map};

use dcl_core::evaluation::{linear_probe, LabeledReps, ProbeConfig};
use dcl_core::losses::{BatchObjective, FloorMode, LossSpec};
use dcl_core::rng::substream;
use dcl_core::training::{encode_samples, train, Checkpoint, EncoderParams, Optimizer, TrainConfig, TrainingLog};

use super::{PROBE_HEADER, PROBE_STREAM, TRAIN_LOG_HEADER};
use crate::config::Config;
use crate::error::{CliError, CliResult};
use crate::output::{csv, RunOutput};
use crate::world::{build_world, WORLD_KEYS};

const KEYS: &[&str] = &[
    "loss",
    "tau_plus",
    "temperature",
    "positives",
    "floor",
    "batch_size",
    "epochs",
    "lr",
    "optimizer",
    "dataset_size",
    "output_dim",
    "hidden",
    "seeds",
    "probe_train",
    "probe_eval",
    "probe_iters",
    "checkpoints",
];

pub fn allowed_keys() -> Vec<&'static str> {
    [KEYS, WORLD_KEYS].concat()
}

pub fn parse_floor(cfg: &Config) -> CliResult<FloorMode> {
    let raw: String = cfg.get("floor", "exp".to_string())?;
    match raw.as_str() {
        "exp" => Ok(FloorMode::ExpFloor),
        "zero" => Ok(FloorMode::ZeroFloor),
        other => Err(CliError::config(format!("unknown floor '{other}', expected exp|zero"))),
    }
}

pub(crate) struct ProbeSettings {
    pub train: usize,
    pub eval: usize,
    pub config: ProbeConfig,
}

impl ProbeSettings {
    pub fn from_config(cfg: &Config) -> CliResult<Self> {
        Ok(Self {
            train: cfg.get("probe_train", 2000)?,
            eval: cfg.get("probe_eval", 2000)?,
            config: ProbeConfig {
                max_iters: cfg.get("probe_iters", 500)?,
                ..ProbeConfig::default()
            },
        })
    }

    /// Accuracy on held-out draws from the probe substream of `seed`.
    pub fn accuracy(&self, params: &EncoderParams, world: &dyn dcl_core::worldmodel::World, seed: u64) -> CliResult<f64> {
        let mut rng = substream(seed, PROBE_STREAM);
        let (reps, labels) = encode_samples(params, world, self.train, &mut rng)?;
        let train = LabeledReps::new(reps, labels)?;
        let (reps, labels) = encode_samples(params, world, self.eval, &mut rng)?;
        let eval = LabeledReps::new(reps, labels)?;
        Ok(linear_probe(&train, Some(&eval), &self.config)?.accuracy)
    }
}

pub(crate) fn run_stem(spec: &LossSpec, seed: u64) -> String {
    format!("{}_tau{}_seed{seed}", spec.objective.name(), spec.tau_plus)
}

struct RunResult {
    seed: u64,
    spec: LossSpec,
    params: EncoderParams,
    log: TrainingLog,
    accuracy: f64,
}

pub fn run(cfg: &Config, out: &std::path::Path) -> CliResult<bool> {
    cfg.check_keys("train", &allowed_keys())?;
    // fail on a missing dataset before any work
    cfg.require::<String>("dataset")?;
    let timed = cfg.get("time", false)?;
    let seeds = cfg.list("seeds", vec![cfg.seed()?])?;
    let objectives = cfg.list("loss", vec![BatchObjective::Debiased])?;
    let taus = cfg.list("tau_plus", vec![0.1f64])?;
    let base = LossSpec {
        positives: cfg.get("positives", 1)?,
        floor_mode: parse_floor(cfg)?,
        ..LossSpec::new(BatchObjective::Debiased, 0.0, cfg.get("temperature", 0.5)?)
    };
    let template = |spec: LossSpec, seed: u64| -> CliResult<TrainConfig> {
        let defaults = TrainConfig::new(spec, seed);
        let tc = TrainConfig {
            batch_size: cfg.get("batch_size", defaults.batch_size)?,
            epochs: cfg.get("epochs", defaults.epochs)?,
            learning_rate: cfg.get("lr", defaults.learning_rate)?,
            optimizer: cfg.get("optimizer", Optimizer::Adam)?,
            dataset_size: cfg.get("dataset_size", defaults.dataset_size)?,
            output_dim: cfg.get("output_dim", defaults.output_dim)?,
            hidden: cfg.opt("hidden")?,
            record_time: timed,
            ..defaults
        };
        tc.validate()?;
        Ok(tc)
    };
    let probe = ProbeSettings::from_config(cfg)?;

    // the debiased objective is swept over tau_plus; the others ignore it
    let mut runs = Vec::new();
    for &seed in &seeds {
        for &objective in &objectives {
            let swept: &[f64] = if objective == BatchObjective::Debiased { &taus } else { &[0.0] };
            for &tau_plus in swept {
                let spec = LossSpec {
                    objective,
                    tau_plus,
                    ..base
                };
                runs.push(template(spec, seed)?);
            }
        }
    }
    // build each world up front so config errors surface before training
    for tc in &runs {
        build_world(cfg, tc.seed)?;
    }

    let results: Vec<RunResult> = runs
        .par_iter()
        .map(|tc| -> CliResult<RunResult> {
            let world = build_world(cfg, tc.seed)?;
            let (params, log) = train(tc, world.as_world())?;
            let accuracy = probe.accuracy(&params, world.as_world(), tc.seed)?;
            Ok(RunResult {
                seed: tc.seed,
                spec: tc.loss,
                params,
                log,
                accuracy,
            })
        })
        .collect::<CliResult<_>>()?;

    let mut output = RunOutput::create(out, timed)?;
    let write_checkpoints = cfg.get("checkpoints", true)?;
    let mut probe_rows = Vec::new();
    let mut summaries = Vec::new();
    for r in &results {
        let stem = run_stem(&r.spec, r.seed);
        let rows: Vec<Vec<String>> = r
            .log
            .epochs
            .iter()
            .map(|e| row![e.epoch, e.loss, e.wall_ms])
            .collect();
        let log_name = format!("train_{stem}.csv");
        output.write(&log_name, &csv(TRAIN_LOG_HEADER, &rows))?;
        let mut summary = json!({
            "seed": r.seed,
            "loss_kind": r.spec.objective.name(),
            "tau_plus": r.spec.tau_plus,
            "initial_loss": r.log.initial_loss,
            "final_loss": r.log.final_loss(),
            "accuracy": r.accuracy,
            "log": log_name,
        });
        if write_checkpoints {
            let name = format!("checkpoint_{stem}.json");
            let ck = Checkpoint::new(r.params.clone(), cfg.hash()).with_loss(r.spec);
            output.write(&name, &(ck.to_json() + "\n"))?;
            summary["checkpoint"] = json!(name);
        }
        summaries.push(summary);
        probe_rows.push(row![r.seed, r.spec.objective.name(), r.spec.tau_plus, r.accuracy]);
    }
    output.write("probe.csv", &csv(PROBE_HEADER, &probe_rows))?;
    let mut body = Map::new();
    body.insert("runs".into(), json!(summaries));
    output.finish("train", cfg, true, body)?;
    Ok(true)
}

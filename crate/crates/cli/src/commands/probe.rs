//! `dcl probe`: linear probe of a saved encoder.

use std::path::PathBuf;

use serde_json::{json, Map};

use dcl_core::training::Checkpoint;

use super::train::ProbeSettings;
use super::PROBE_HEADER;
use crate::config::Config;
use crate::error::{CliError, CliResult};
use crate::output::{csv, RunOutput};
use crate::world::{build_world, WORLD_KEYS};

const KEYS: &[&str] = &["checkpoint", "probe_train", "probe_eval", "probe_iters"];

pub fn allowed_keys() -> Vec<&'static str> {
    [KEYS, WORLD_KEYS].concat()
}

pub fn run(cfg: &Config, out: &std::path::Path) -> CliResult<bool> {
    cfg.check_keys("probe", &allowed_keys())?;
    let seed = cfg.seed()?;
    let world = build_world(cfg, seed)?;
    let path: PathBuf = cfg.require("checkpoint")?;
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let ck = Checkpoint::from_json(&text)?;
    if ck.params.input_dim() != world.as_world().input_dim() {
        return Err(CliError::config(format!(
            "checkpoint expects inputs of dimension {}, dataset has {}",
            ck.params.input_dim(),
            world.as_world().input_dim()
        )));
    }
    let probe = ProbeSettings::from_config(cfg)?;
    let accuracy = probe.accuracy(&ck.params, world.as_world(), seed)?;
    let (kind, tau) = match &ck.loss {
        Some(spec) => (spec.objective.name().to_string(), spec.tau_plus.to_string()),
        None => ("unknown".to_string(), String::new()),
    };
    let mut output = RunOutput::create(out, cfg.get("time", false)?)?;
    output.write("probe.csv", &csv(PROBE_HEADER, &[row![seed, kind, tau, accuracy]]))?;
    let mut body = Map::new();
    body.insert("checkpoint_config_hash".into(), json!(ck.config_hash));
    body.insert("accuracy".into(), json!(accuracy));
    output.finish("probe", cfg, true, body)?;
    Ok(true)
}

//! Building worlds and embedding tables from config keys.

use std::path::Path;

use dcl_core::geometry::EmbeddingTable;
use dcl_core::rng::{derive_seed, substream};
use dcl_core::worldmodel::{
    build_discrete, parse_mixture, DiscreteClassMixture, MixtureConfig, SphereMixture, World, PRESETS,
};

use crate::config::Config;
use crate::error::{CliError, CliResult};

/// Keys read by [`build_world`].
pub const WORLD_KEYS: &[&str] = &[
    "dataset",
    "classes",
    "input_dim",
    "noise",
    "world_seed",
    "mixture",
    "points",
    "feature_dim",
];

/// Keys read by [`build_mixture`] and [`build_table`].
pub const TABLE_KEYS: &[&str] = &[
    "mixture",
    "points",
    "classes",
    "feature_dim",
    "embedding",
    "embed_dim",
    "temperature",
];

pub enum WorldChoice {
    Sphere(SphereMixture),
    Discrete(DiscreteClassMixture),
}

impl WorldChoice {
    pub fn as_world(&self) -> &dyn World {
        match self {
            WorldChoice::Sphere(w) => w,
            WorldChoice::Discrete(w) => w,
        }
    }
}

/// The world named by the required `dataset` key. A sphere world without an
/// explicit `world_seed` is drawn from `1000 + run_seed`.
pub fn build_world(cfg: &Config, run_seed: u64) -> CliResult<WorldChoice> {
    let dataset: String = cfg.require("dataset")?;
    match dataset.as_str() {
        "sphere" => {
            let classes = cfg.get("classes", 10usize)?;
            let dim = cfg.get("input_dim", 32usize)?;
            let noise = cfg.get("noise", 0.5f64)?;
            let seed = cfg.get("world_seed", 1000 + run_seed)?;
            Ok(WorldChoice::Sphere(SphereMixture::random(classes, dim, noise, seed)?))
        }
        "discrete" => Ok(WorldChoice::Discrete(build_mixture(cfg, 0)?)),
        other => Err(CliError::config(format!(
            "unknown dataset '{other}', expected sphere|discrete"
        ))),
    }
}

/// A preset name, `random`, or a path to a mixture file. Random mixtures
/// differ per `instance`.
pub fn build_mixture(cfg: &Config, instance: u64) -> CliResult<DiscreteClassMixture> {
    let name: String = cfg.get("mixture", "paper-uniform".to_string())?;
    if PRESETS.contains(&name.as_str()) {
        return Ok(build_discrete(&MixtureConfig::Preset(name))?);
    }
    if name == "random" {
        let config = MixtureConfig::Random {
            points: cfg.get("points", 12)?,
            classes: cfg.get("classes", 3)?,
            feature_dim: cfg.get("feature_dim", 4)?,
            seed: derive_seed(cfg.seed()?, instance),
        };
        return Ok(build_discrete(&config)?);
    }
    let path = Path::new(&name);
    if !path.exists() {
        return Err(CliError::config(format!(
            "mixture '{name}' is neither a preset ({}), 'random', nor an existing file",
            PRESETS.join(", ")
        )));
    }
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(parse_mixture(&text)?)
}

/// Embedding of every mixture point: `random` (uniform on the sphere, seeded
/// per instance) or `constant`.
pub fn build_table(cfg: &Config, mix: &DiscreteClassMixture, instance: u64) -> CliResult<EmbeddingTable> {
    let kind: String = cfg.get("embedding", "random".to_string())?;
    let dim = cfg.get("embed_dim", 8usize)?;
    let t = cfg.get("temperature", 1.0f64)?;
    let table = match kind.as_str() {
        "random" => {
            let mut rng = substream(derive_seed(cfg.seed()?, instance), 1);
            EmbeddingTable::random(mix.num_points(), dim, t, &mut rng)?
        }
        "constant" => EmbeddingTable::constant(mix.num_points(), dim, t)?,
        other => {
            return Err(CliError::config(format!(
                "unknown embedding '{other}', expected random|constant"
            )))
        }
    };
    Ok(table)
}

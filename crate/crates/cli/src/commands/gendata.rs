//! `dcl gen-data`: the world description and labelled samples from it.

use serde_json::{json, Map};

use dcl_core::rng::substream;
use dcl_core::worldmodel::{write_mixture, DiscreteSampler, World};

use super::SAMPLES_HEADER;
use crate::config::Config;
use crate::error::{CliError, CliResult};
use crate::output::{csv, RunOutput};
use crate::world::{build_world, WorldChoice, WORLD_KEYS};

pub fn allowed_keys() -> Vec<&'static str> {
    [WORLD_KEYS, &["samples"]].concat()
}

fn features(x: &[f64]) -> String {
    x.iter().map(f64::to_string).collect::<Vec<_>>().join(";")
}

pub fn run(cfg: &Config, out: &std::path::Path) -> CliResult<bool> {
    cfg.check_keys("gen-data", &allowed_keys())?;
    let seed = cfg.seed()?;
    let count = cfg.get("samples", 1000usize)?;
    if count == 0 {
        return Err(CliError::config("samples must be at least 1"));
    }
    let world = build_world(cfg, seed)?;
    let mut rng = substream(seed, 0);
    let mut output = RunOutput::create(out, cfg.get("time", false)?)?;
    let rows: Vec<Vec<String>> = match &world {
        WorldChoice::Discrete(mix) => {
            output.write("mixture.txt", &write_mixture(mix))?;
            let sampler = DiscreteSampler::new(mix);
            (0..count)
                .map(|i| {
                    let x = sampler.draw_marginal(&mut rng);
                    row![i, mix.label(x), x, features(&mix.points()[x])]
                })
                .collect()
        }
        WorldChoice::Sphere(sphere) => {
            let text = serde_json::to_string_pretty(sphere).expect("world serialises");
            output.write("world.json", &(text + "\n"))?;
            (0..count)
                .map(|i| {
                    let c = sphere.draw_class(&mut rng);
                    let x = sphere.draw_view(c, &mut rng);
                    row![i, c, "", features(&x)]
                })
                .collect()
        }
    };
    output.write("samples.csv", &csv(SAMPLES_HEADER, &rows))?;
    let mut body = Map::new();
    body.insert("samples".into(), json!(count));
    output.finish("gen-data", cfg, true, body)?;
    Ok(true)
}

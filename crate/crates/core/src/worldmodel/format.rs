//! Flat text format for discrete mixtures.
//!
//! ```text
//! # comment
//! version = 1
//! name = two-point
//! points = 1,0; 0,1
//! labels = 0, 1
//! conditionals = 1,0; 0,1
//! prior = 0.5, 0.5
//! ```
//!
//! Rows are separated by `;`, entries by `,`. Unknown keys are rejected.

use std::collections::BTreeMap;

use super::discrete::{DiscreteClassMixture, MixtureTables};
use crate::error::{Error, Result};

pub const MIXTURE_FORMAT_VERSION: u32 = 1;

const KEYS: &[&str] = &["version", "name", "points", "labels", "conditionals", "prior"];

fn parse_row(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("bad number '{}': {e}", x.trim())))
        })
        .collect()
}

fn parse_matrix(s: &str) -> Result<Vec<Vec<f64>>> {
    s.split(';').map(parse_row).collect()
}

fn join_row<T: std::fmt::Display>(row: &[T]) -> String {
    row.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn join_matrix(rows: &[Vec<f64>]) -> String {
    rows.iter().map(|r| join_row(r)).collect::<Vec<_>>().join("; ")
}

pub fn parse_mixture(text: &str) -> Result<DiscreteClassMixture> {
    let mut map = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("line {}: expected key = value", lineno + 1)))?;
        let k = k.trim();
        if !KEYS.contains(&k) {
            return Err(Error::Parse(format!("line {}: unknown key '{k}'", lineno + 1)));
        }
        if map.insert(k.to_string(), v.trim().to_string()).is_some() {
            return Err(Error::Parse(format!("duplicate key '{k}'")));
        }
    }
    let get = |k: &str| {
        map.get(k)
            .ok_or_else(|| Error::Parse(format!("missing key '{k}'")))
    };
    let version: u32 = get("version")?
        .parse()
        .map_err(|e| Error::Parse(format!("bad version: {e}")))?;
    if version != MIXTURE_FORMAT_VERSION {
        return Err(Error::Parse(format!(
            "mixture format version {version}, expected {MIXTURE_FORMAT_VERSION}"
        )));
    }
    let labels = get("labels")?
        .split(',')
        .map(|x| {
            x.trim()
                .parse::<usize>()
                .map_err(|e| Error::Parse(format!("bad label '{}': {e}", x.trim())))
        })
        .collect::<Result<Vec<_>>>()?;
    DiscreteClassMixture::from_tables(MixtureTables {
        name: map.get("name").cloned().unwrap_or_else(|| "file".into()),
        points: parse_matrix(get("points")?)?,
        labels,
        conditionals: parse_matrix(get("conditionals")?)?,
        prior: parse_row(get("prior")?)?,
    })
}

pub fn write_mixture(mix: &DiscreteClassMixture) -> String {
    let t = mix.to_tables();
    format!(
        "version = {MIXTURE_FORMAT_VERSION}\nname = {}\npoints = {}\nlabels = {}\nconditionals = {}\nprior = {}\n",
        t.name,
        join_matrix(&t.points),
        join_row(&t.labels),
        join_matrix(&t.conditionals),
        join_row(&t.prior),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worldmodel::discrete::random_mixture;
    use proptest::prelude::*;

    #[test]
    fn parses_documented_example() {
        let m = parse_mixture(
            "# two points\nversion = 1\nname = two-point\npoints = 1,0; 0,1\nlabels = 0, 1\nconditionals = 1,0; 0,1\nprior = 0.5, 0.5\n",
        )
        .unwrap();
        assert_eq!(m.num_points(), 2);
        assert_eq!(m.tau_plus(), 0.5);
    }

    #[test]
    fn rejects_unknown_keys_and_versions() {
        assert!(parse_mixture("version = 1\nfoo = 2\n").is_err());
        assert!(parse_mixture(
            "version = 2\npoints = 1,0\nlabels = 0\nconditionals = 1\nprior = 1\n"
        )
        .is_err());
    }

    proptest! {
        #[test]
        fn write_then_parse_is_identity(seed in 0u64..500, k in 1usize..5, extra in 0usize..4) {
            let mut rng = crate::rng::substream(seed, 0);
            let m = random_mixture(k + extra, k, 3, &mut rng).unwrap();
            let back = parse_mixture(&write_mixture(&m)).unwrap();
            prop_assert_eq!(m, back);
        }
    }
}

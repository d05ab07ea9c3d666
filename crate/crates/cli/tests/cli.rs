//! End-to-end runs of the `dcl` binary: exit codes, artifacts, headers and
//! reproducibility.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn dcl(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcl"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("dcl runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn golden_header(name: &str) -> String {
    let text = include_str!("golden/csv_headers.txt");
    text.lines()
        .find_map(|l| l.strip_prefix(name).and_then(|r| r.strip_prefix(' ')))
        .unwrap_or_else(|| panic!("no golden header for {name}"))
        .to_string()
}

fn first_line(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn read_dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.conf");
    fs::write(&p, text).unwrap();
    p
}

const SMALL_TRAIN: &str = "\
version = 1
dataset = sphere
classes = 4
input_dim = 8
loss = biased, debiased
tau_plus = 0, 0.05, 0.1
seeds = 0, 1
epochs = 2
dataset_size = 64
batch_size = 16
output_dim = 4
probe_train = 100
probe_eval = 100
";

#[test]
fn missing_dataset_exits_2_and_names_the_key() {
    let tmp = TempDir::new().unwrap();
    let o = dcl(&["train", "--set", "epochs=1"], tmp.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("'dataset'"), "{}", stderr(&o));
}

#[test]
fn unknown_key_exits_2() {
    let tmp = TempDir::new().unwrap();
    let o = dcl(&["train", "--set", "dataset=sphere", "--set", "learning_rate=1"], tmp.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("learning_rate"));
    let o = dcl(&["verify", "oracle", "--set", "epochs=3"], tmp.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn version_mismatch_and_malformed_config_exit_2() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "version = 2\ndataset = sphere\n");
    let o = dcl(&["train", "--config", cfg.to_str().unwrap()], &tmp.path().join("a"));
    assert_eq!(code(&o), 2);
    let cfg = write_config(tmp.path(), "dataset = sphere\n");
    let o = dcl(&["train", "--config", cfg.to_str().unwrap()], &tmp.path().join("b"));
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("version"));
    let o = dcl(&["gen-data", "--set", "dataset=torus"], &tmp.path().join("c"));
    assert_eq!(code(&o), 2);
    let o = dcl(&["probe", "--set", "dataset=sphere", "--set", "checkpoint=/nonexistent.json"], &tmp.path().join("d"));
    assert_eq!(code(&o), 2);
}

#[test]
fn bad_command_line_exits_2() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(&dcl(&["verify", "lemma9"], tmp.path())), 2);
    assert_eq!(code(&dcl(&["gradcheck", "--set", "noequals"], tmp.path())), 2);
    assert_eq!(code(&dcl(&["verify", "lemma1", "--grid"], tmp.path())), 2);
}

#[test]
fn oracle_default_passes() {
    let tmp = TempDir::new().unwrap();
    let o = dcl(&["verify", "oracle"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let certs = fs::read_to_string(tmp.path().join("certificates.jsonl")).unwrap();
    assert_eq!(certs.lines().count(), 50 * 6);
    for line in certs.lines() {
        let c: Value = serde_json::from_str(line).unwrap();
        for key in ["check", "lhs", "rhs", "stderr", "trials", "passed", "meta"] {
            assert!(c.get(key).is_some(), "missing {key}");
        }
        assert_eq!(c["passed"], true);
        assert!(c["meta"]["condition_number"].as_f64().unwrap() >= 1.0);
    }
}

#[test]
fn zeroed_rhs_fails_with_exit_1() {
    let tmp = TempDir::new().unwrap();
    let o = dcl(&["verify", "oracle", "--set", "instances=3", "--set", "rhs_scale=0"], tmp.path());
    assert_eq!(code(&o), 1);
    assert_eq!(report(tmp.path())["passed"], false);
    let o = dcl(&["verify", "lemma4", "--set", "rhs_scale=0"], &tmp.path().join("l4"));
    assert_eq!(code(&o), 1);
}

#[test]
fn thm3_grid_emits_one_certificate_per_cell() {
    let tmp = TempDir::new().unwrap();
    let o = dcl(
        &[
            "verify", "thm3", "--grid", "--set", "n=4,16,64", "--set", "m=4,16", "--set", "tau_plus=0.05,0.1",
            "--set", "trials=2000",
        ],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let certs = fs::read_to_string(tmp.path().join("certificates.jsonl")).unwrap();
    assert_eq!(certs.lines().count(), 3 * 2 * 2);
    let cells: std::collections::BTreeSet<(u64, u64, String)> = certs
        .lines()
        .map(|l| {
            let c: Value = serde_json::from_str(l).unwrap();
            let m = &c["meta"];
            (m["N"].as_u64().unwrap(), m["M"].as_u64().unwrap(), m["tau_plus"].to_string())
        })
        .collect();
    assert_eq!(cells.len(), 12);
    // without --grid the lists are zipped
    let o = dcl(&["verify", "thm3", "--set", "n=4,16", "--set", "m=4,16", "--set", "trials=2000"], &tmp.path().join("z"));
    assert_eq!(code(&o), 0);
    let certs = fs::read_to_string(tmp.path().join("z/certificates.jsonl")).unwrap();
    assert_eq!(certs.lines().count(), 2);
}

#[test]
fn lemma1_and_lemma4_defaults_pass() {
    let tmp = TempDir::new().unwrap();
    let o = dcl(&["verify", "lemma1", "--set", "trials=5000"], &tmp.path().join("l1"));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = dcl(&["verify", "lemma4"], &tmp.path().join("l4"));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn gradcheck_default_is_within_tolerance() {
    let tmp = TempDir::new().unwrap();
    let o = dcl(&["gradcheck"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let path = tmp.path().join("gradcheck.csv");
    assert_eq!(first_line(&path), golden_header("gradcheck"));
    let text = fs::read_to_string(&path).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 20);
    for r in &rows {
        assert!(r[col("max_rel_err")].parse::<f64>().unwrap() <= 1e-6, "{r:?}");
    }
    assert!(rows.iter().any(|r| r[col("output_dim")] == "2"));
    // the constructed clamp case is reported as excluded and still passes
    assert!(rows[0][col("excluded")].parse::<usize>().unwrap() > 0);
    assert_eq!(rows[0][col("passed")], "true");
}

#[test]
fn train_sweep_writes_one_probe_row_per_seed_and_tau() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), SMALL_TRAIN);
    let out = tmp.path().join("run");
    let o = dcl(&["train", "--config", cfg.to_str().unwrap()], &out);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let probe = fs::read_to_string(out.join("probe.csv")).unwrap();
    assert_eq!(first_line(&out.join("probe.csv")), golden_header("probe"));
    // per seed: one biased run and three debiased runs
    let rows: Vec<&str> = probe.lines().skip(1).collect();
    assert_eq!(rows.len(), 2 * 4);
    for seed in ["0", "1"] {
        for tau in ["0", "0.05", "0.1"] {
            let want = format!("{seed},debiased,{tau},");
            assert_eq!(rows.iter().filter(|r| r.starts_with(&want)).count(), 1, "{want}");
        }
    }
    let log = out.join("train_debiased_tau0.05_seed1.csv");
    assert_eq!(first_line(&log), golden_header("train_log"));
    assert_eq!(fs::read_to_string(&log).unwrap().lines().count(), 1 + 2);

    let rep = report(&out);
    assert_eq!(rep["seed"], 0);
    assert_eq!(rep["config_hash"].as_str().unwrap().len(), 64);
    for a in rep["artifacts"].as_array().unwrap() {
        assert!(out.join(a.as_str().unwrap()).exists(), "{a}");
    }

    // a saved encoder probes to the accuracy recorded for its run
    let ck = out.join("checkpoint_debiased_tau0.1_seed0.json");
    let o = dcl(
        &[
            "probe", "--config", cfg.to_str().unwrap(), "--set", "loss=", "--set", "tau_plus=", "--set", "seeds=",
            "--set", &format!("checkpoint={}", ck.display()),
        ],
        &tmp.path().join("probe"),
    );
    // train-only keys are rejected by probe
    assert_eq!(code(&o), 2);
    let probe_cfg = write_config(
        tmp.path(),
        &format!(
            "version = 1\ndataset = sphere\nclasses = 4\ninput_dim = 8\nprobe_train = 100\nprobe_eval = 100\ncheckpoint = {}\n",
            ck.display()
        ),
    );
    let o = dcl(&["probe", "--config", probe_cfg.to_str().unwrap()], &tmp.path().join("probe"));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let row = fs::read_to_string(tmp.path().join("probe/probe.csv")).unwrap();
    let trained = rows.iter().find(|r| r.starts_with("0,debiased,0.1,")).unwrap();
    assert_eq!(row.lines().nth(1).unwrap(), *trained);
}

#[test]
fn runs_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), SMALL_TRAIN);
    let cfg = cfg.to_str().unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec!["train", "--config", cfg],
        vec!["verify", "thm3", "--grid", "--set", "n=4,16", "--set", "m=4,16", "--set", "trials=2000"],
        vec!["verify", "lemma1", "--set", "trials=2000", "--set", "mixture=random", "--set", "instances=2"],
        vec!["verify", "rate", "--set", "sweep=4,16,64,400", "--set", "fixed=4000", "--set", "trials=2000"],
        vec!["gradcheck", "--seed", "5"],
        vec!["gen-data", "--set", "dataset=discrete", "--set", "samples=50"],
        vec!["gen-data", "--set", "dataset=sphere", "--set", "samples=50"],
    ];
    for (i, args) in cases.iter().enumerate() {
        let a = tmp.path().join(format!("{i}a"));
        let b = tmp.path().join(format!("{i}b"));
        let oa = dcl(args, &a);
        let ob = dcl(args, &b);
        assert_eq!(code(&oa), code(&ob));
        assert!(code(&oa) <= 1, "{args:?}: {}", stderr(&oa));
        assert_eq!(read_dir_bytes(&a), read_dir_bytes(&b), "{args:?}");
    }
}

#[test]
fn seed_flag_overrides_and_changes_results() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    dcl(&["gen-data", "--set", "dataset=discrete", "--set", "seed=3", "--seed", "4"], &a);
    dcl(&["gen-data", "--set", "dataset=discrete", "--seed", "4"], &b);
    assert_eq!(report(&a)["seed"], 4);
    assert_eq!(fs::read(a.join("samples.csv")).unwrap(), fs::read(b.join("samples.csv")).unwrap());
    let c = tmp.path().join("c");
    dcl(&["gen-data", "--set", "dataset=discrete", "--seed", "5"], &c);
    assert_ne!(fs::read(a.join("samples.csv")).unwrap(), fs::read(c.join("samples.csv")).unwrap());
}

#[test]
fn later_set_wins() {
    let tmp = TempDir::new().unwrap();
    let o = dcl(&["gen-data", "--set", "dataset=torus", "--set", "dataset=discrete"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(report(tmp.path())["config"]["dataset"], "discrete");
}

#[test]
fn gen_data_round_trips_the_mixture() {
    let tmp = TempDir::new().unwrap();
    let o = dcl(&["gen-data", "--set", "dataset=discrete", "--set", "mixture=two-point", "--set", "samples=20"], tmp.path());
    assert_eq!(code(&o), 0);
    let text = fs::read_to_string(tmp.path().join("mixture.txt")).unwrap();
    let mix = dcl_core::worldmodel::parse_mixture(&text).unwrap();
    assert_eq!(mix.num_points(), 2);
    assert_eq!(first_line(&tmp.path().join("samples.csv")), golden_header("samples"));
    // a generated mixture file can drive verification
    let path = tmp.path().join("mixture.txt");
    let o = dcl(
        &["verify", "lemma4", "--set", &format!("mixture={}", path.display()), "--set", "n=1"],
        &tmp.path().join("v"),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn rate_writes_grid_csv() {
    let tmp = TempDir::new().unwrap();
    let o = dcl(&["verify", "rate", "--set", "sweep=4,16,64,400", "--set", "fixed=4000", "--set", "trials=2000"], tmp.path());
    assert!(code(&o) <= 1, "{}", stderr(&o));
    assert_eq!(first_line(&tmp.path().join("rate.csv")), golden_header("rate"));
    assert_eq!(fs::read_to_string(tmp.path().join("rate.csv")).unwrap().lines().count(), 5);
    let certs = fs::read_to_string(tmp.path().join("certificates.jsonl")).unwrap();
    assert_eq!(certs.lines().count(), 2);
    // a grid that is too narrow is a config problem
    let o = dcl(&["verify", "rate", "--set", "sweep=4,8,16,32"], &tmp.path().join("bad"));
    assert_eq!(code(&o), 2);
}

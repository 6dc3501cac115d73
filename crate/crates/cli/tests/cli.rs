use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn datactl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_datactl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

const SMALL: &str = r#"{
    "schema_version": 1,
    "seed": 5,
    "system": {"id": "mass_spring"},
    "sampling": {"n_samples": 300},
    "epsilon": 0.1,
    "target": [0.0, 0.0],
    "method": "both",
    "snapshot_every": 50,
    "verify_probes": 3
}"#;

fn run(config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["--config", config.to_str().unwrap(), "--output-dir", out.to_str().unwrap()];
    args.extend(extra);
    args.push("run");
    datactl(&args)
}

fn file_hashes(manifest: &Value) -> Vec<(String, String)> {
    manifest["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| (f["path"].as_str().unwrap().to_string(), f["sha256"].as_str().unwrap().to_string()))
        .collect()
}

fn walk(root: &Path, dir: &Path, out: &mut Vec<String>) {
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            walk(root, &p, out);
        } else {
            let rel = p.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
            out.push(rel);
        }
    }
}

#[test]
fn identical_config_and_seed_reproduce_hashes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.json", SMALL);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(code(&run(&cfg, &a, &["--threads", "1"])), 0);
    assert_eq!(code(&run(&cfg, &b, &["--threads", "3"])), 0);
    let (ma, mb) = (read_json(&a.join("manifest.json")), read_json(&b.join("manifest.json")));
    assert_eq!(ma["status"], "complete");
    assert_eq!(file_hashes(&ma), file_hashes(&mb));

    let c = tmp.path().join("c");
    assert_eq!(code(&run(&cfg, &c, &["--seed", "6"])), 0);
    let mc = read_json(&c.join("manifest.json"));
    let dataset = |m: &Value| file_hashes(m).into_iter().find(|f| f.0 == "dataset.csv").unwrap();
    assert_ne!(dataset(&ma), dataset(&mc));
}

#[test]
fn manifest_lists_every_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.json", SMALL);
    let out = tmp.path().join("out");
    assert_eq!(code(&run(&cfg, &out, &[])), 0);
    let m = read_json(&out.join("manifest.json"));
    let mut listed: Vec<String> = file_hashes(&m).into_iter().map(|f| f.0).collect();
    let mut present = Vec::new();
    walk(&out, &out, &mut present);
    present.retain(|p| p != "manifest.json");
    listed.sort();
    present.sort();
    assert_eq!(listed, present);
    for f in [
        "config.json",
        "dataset.csv",
        "dataset.meta.json",
        "lipschitz.csv",
        "mecs/balls.csv",
        "mecs/controllable.csv",
        "mecs/run.meta.json",
        "mecs/snapshots.csv",
        "mecs/verify.csv",
        "ferf/controllable.csv",
        "ferf/distances.csv",
        "ferf/run.meta.json",
        "diff.json",
    ] {
        assert!(listed.iter().any(|p| p == f), "{f} missing");
    }
    let n = 300;
    let counters = &m["counters"];
    assert!(counters["ferf"]["L"].as_u64().unwrap() <= 2 * n + 1);
    assert!(counters["mecs"]["M"].as_u64().unwrap() >= 1);
    assert_eq!(counters["verify"]["probes"].as_u64().unwrap() % 3, 0);
    assert!(m["wall_time_s"]["mecs"].is_number());
    // wall time lives only in the manifest
    assert!(read_json(&out.join("mecs/run.meta.json")).get("wall_time_s").is_none());
    let diff = read_json(&out.join("diff.json"));
    let total: u64 = ["both", "mecs_only", "ferf_only", "neither"]
        .iter()
        .map(|k| diff[k].as_u64().unwrap())
        .sum();
    assert_eq!(total, n);
}

#[test]
fn failed_stage_marks_manifest_incomplete() {
    let tmp = tempfile::tempdir().unwrap();
    let body = r#"{
        "schema_version": 1,
        "system": {"id": "tunnel_diode", "params": {"C": 1e-310}},
        "sampling": {"n_samples": 50},
        "epsilon": 0.05,
        "target": "equ1"
    }"#;
    let cfg = write_config(tmp.path(), "bad.json", body);
    let out = tmp.path().join("out");
    let o = run(&cfg, &out, &[]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("stage `sample`"));
    let m = read_json(&out.join("manifest.json"));
    assert_eq!(m["status"], "incomplete");
    assert_eq!(m["failed_stage"], "sample");
    assert!(file_hashes(&m).iter().any(|f| f.0 == "config.json"));
}

#[test]
fn one_sample_dataset_gives_trivial_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = tmp.path().join("one.csv");
    std::fs::write(&ds, "x0,x1,u0,xn0,xn1\n0.5,0.5,0.1,0.4,0.45\n").unwrap();
    let dir = tmp.path().to_str().unwrap();
    let data = ds.to_str().unwrap();
    for sub in ["mecs", "ferf"] {
        let o = datactl(&["--output-dir", dir, sub, "--dataset", data, "--target", "-0.5,-0.5", "--epsilon", "0.1"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let meta = read_json(&tmp.path().join("run.meta.json"));
        match sub {
            "mecs" => assert_eq!(meta["M"], 1),
            _ => assert_eq!(meta["L"], 3),
        }
        assert_eq!(meta["n_controllable"], 0);
    }
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().to_str().unwrap();
    assert_eq!(code(&datactl(&["--help"])), 0);
    assert_eq!(code(&datactl(&["mecs", "--no-such-flag"])), 1);
    assert_eq!(code(&datactl(&["--output-dir", dir, "run"])), 1);
    let bad = write_config(tmp.path(), "v2.json", &SMALL.replace("\"schema_version\": 1", "\"schema_version\": 2"));
    assert_eq!(code(&datactl(&["--config", bad.to_str().unwrap(), "--output-dir", dir, "run"])), 1);
    let missing = tmp.path().join("missing.csv");
    let o = datactl(&["--output-dir", dir, "mecs", "--dataset", missing.to_str().unwrap(), "--target", "0,0", "--epsilon", "0.1"]);
    assert_eq!(code(&o), 2);
    let o = datactl(&["--output-dir", dir, "sample", "--system", "mass_spring", "--n-samples", "20"]);
    assert_eq!(code(&o), 0);
    let o = datactl(&["--output-dir", dir, "mecs", "--target", "equ2", "--epsilon", "0.1"]);
    assert_eq!(code(&o), 1, "mass-spring has no equ2");
}

#[test]
fn subcommands_write_documented_headers() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().to_str().unwrap();
    let ok = |args: &[&str]| {
        let mut full = vec!["--output-dir", dir, "--seed", "9"];
        full.extend(args);
        let o = datactl(&full);
        assert_eq!(code(&o), 0, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    };
    let header = |name: &str| {
        let text = std::fs::read_to_string(tmp.path().join(name)).unwrap();
        text.lines().next().unwrap().to_string()
    };
    ok(&["sample", "--system", "vanderpol", "--n-samples", "200"]);
    assert_eq!(header("dataset.csv"), "x0,x1,u0,xn0,xn1");
    ok(&["estimate-lipschitz", "--delta", "0.3", "--constraints-for", "0"]);
    assert_eq!(header("lipschitz.csv"), "index,L_x_hat,L_u_hat,n_neighbors,fallback");
    assert_eq!(header("constraints_0.csv"), "a,b,c");
    ok(&["mecs", "--target", "equ", "--epsilon", "0.1", "--lipschitz-file", &format!("{dir}/lipschitz.csv"), "--delta", "0.3"]);
    assert_eq!(header("balls.csv"), "node_id,c0,c1,radius,parent,via_sample,iteration,depth");
    assert_eq!(header("controllable.csv"), "index,controllable");
    ok(&["ferf", "--target", "0,0", "--epsilon", "0.1", "--distances"]);
    assert_eq!(header("distances.csv"), "index,hops");
    ok(&["doc-sweep", "--target", "0,0", "--epsilons", "0.05,0.1", "--method", "ferf"]);
    assert_eq!(header("sweep.csv"), "param,doc,n_controllable,n_total");
    ok(&["doc-map", "--epsilon", "0.1", "--steps", "3", "--method", "ferf"]);
    assert_eq!(header("heatmap.csv"), "tx0,tx1,doc");
    let rows = std::fs::read_to_string(tmp.path().join("heatmap.csv")).unwrap().lines().count();
    assert_eq!(rows, 10);
    assert_eq!(read_json(&tmp.path().join("heatmap.meta.json"))["steps"], 3);
    ok(&["verify", "--target", "equ", "--epsilon", "0.1", "--probes", "2"]);
    assert_eq!(header("verify.csv"), "node_id,probe,final_dist,pass");
}

#[test]
fn sweep_and_grid_configs() {
    let tmp = tempfile::tempdir().unwrap();
    let sweep = SMALL
        .replace("\"epsilon\": 0.1", "\"epsilon\": [0.05, 0.1, 0.2]")
        .replace("\"verify_probes\": 3", "\"verify_probes\": 0");
    let cfg = write_config(tmp.path(), "sweep.json", &sweep);
    let out = tmp.path().join("sweep");
    assert_eq!(code(&run(&cfg, &out, &[])), 0);
    for m in ["mecs", "ferf"] {
        let text = std::fs::read_to_string(out.join(m).join("sweep.csv")).unwrap();
        assert_eq!(text.lines().count(), 4);
        let docs: Vec<f64> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
        if m == "ferf" {
            assert!(docs.windows(2).all(|w| w[0] <= w[1]));
        }
    }
    let grid = SMALL.replace(
        "\"target\": [0.0, 0.0]",
        "\"target\": {\"grid\": {\"lower\": [-1, -1], \"upper\": [1, 1], \"steps\": 4}}",
    );
    let cfg = write_config(tmp.path(), "grid.json", &grid);
    let out = tmp.path().join("grid");
    assert_eq!(code(&run(&cfg, &out, &[])), 0);
    let text = std::fs::read_to_string(out.join("mecs/heatmap.csv")).unwrap();
    assert_eq!(text.lines().count(), 17);
}

//! End-to-end pipeline checks driven through the installed binary: reruns
//! with unchanged inputs hit the cache, independent runs with the same
//! config and seed produce byte-identical artifacts, and failures map to
//! the documented exit codes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
[input.synthetic]
blocks = 48
txs_per_block = 4
block_interval_secs = 21600
fee_per_tx = 500
fee_jitter = 400
seed = 11

[ledger]
top_n = 100

[forecast]
histories = [3]
horizons = [1]
"#;

const ALL_STAGES: [&str; 9] = [
    "ingest",
    "ledger",
    "graph",
    "centrality",
    "assetdist",
    "stability",
    "concentration",
    "features",
    "forecast",
];

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_decprof"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("spawn decprof");
    assert!(
        out.status.success(),
        "decprof {args:?} failed\nstdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Every file under `root`, keyed by relative path.
fn collect_files(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(dir: &Path, root: &Path, into: &mut BTreeMap<String, Vec<u8>>) {
        for entry in fs::read_dir(dir).expect("read_dir") {
            let path = entry.expect("dir entry").path();
            if path.is_dir() {
                walk(&path, root, into);
            } else {
                let rel = path
                    .strip_prefix(root)
                    .expect("under root")
                    .to_string_lossy()
                    .into_owned();
                into.insert(rel, fs::read(&path).expect("read file"));
            }
        }
    }
    let mut files = BTreeMap::new();
    walk(root, root, &mut files);
    files
}

#[test]
fn criterion_11_pipeline_determinism() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let cfg_path = tmp.path().join("config.toml");
    fs::write(&cfg_path, CONFIG).expect("write config");
    let cfg = cfg_path.to_str().expect("utf8 path");
    let dir_a = tmp.path().join("a");
    let dir_b = tmp.path().join("b");
    let a = dir_a.to_str().expect("utf8 path");
    let b = dir_b.to_str().expect("utf8 path");

    // Two fresh runs with identical config and seed, in different
    // directories, must produce byte-identical artifacts — including the
    // manifest and the rendered charts.
    run_ok(&["run", "--config", cfg, "--out-dir", a]);
    run_ok(&["plot", "--config", cfg, "--out-dir", a]);
    run_ok(&["run", "--config", cfg, "--out-dir", b]);
    run_ok(&["plot", "--config", cfg, "--out-dir", b]);
    let files_a = collect_files(&dir_a);
    let files_b = collect_files(&dir_b);
    assert_eq!(
        files_a.keys().collect::<Vec<_>>(),
        files_b.keys().collect::<Vec<_>>(),
        "the two runs produced different artifact sets"
    );
    for (rel, bytes) in &files_a {
        assert_eq!(
            bytes, &files_b[rel],
            "artifact {rel} differs between identically configured runs"
        );
    }

    // The run produced the full artifact tree and a populated manifest.
    for rel in [
        "manifest.json",
        "ingest/transactions.jsonl",
        "ingest/stats.json",
        "ledger/rankings.csv",
        "ledger/supply.csv",
        "graph/edges.csv",
        "graph/summary.csv",
        "centrality/daily.csv",
        "centrality/percentiles.csv",
        "centrality/dispersion.csv",
        "assetdist/curves.csv",
        "assetdist/deltas.csv",
        "assetdist/da.csv",
        "assetdist/phases.csv",
        "stability/stability.csv",
        "concentration/hhi.csv",
        "concentration/events.csv",
        "features/matrix.csv",
        "forecast/report.csv",
        "plots/supply.svg",
        "plots/hhi.svg",
        "plots/da.svg",
        "plots/dispersion.svg",
    ] {
        assert!(files_a.contains_key(rel), "missing artifact {rel}");
    }
    let manifest: serde_json::Value =
        serde_json::from_slice(&files_a["manifest.json"]).expect("parse manifest");
    let stages = manifest["stages"].as_object().expect("stages map");
    for stage in ALL_STAGES {
        let record = stages
            .get(stage)
            .unwrap_or_else(|| panic!("manifest missing stage {stage}"));
        assert!(record["key"].is_string());
        assert!(
            !record["outputs"].as_object().expect("outputs map").is_empty(),
            "stage {stage} recorded no outputs"
        );
    }
    let report = String::from_utf8(files_a["forecast/report.csv"].clone()).expect("utf8");
    assert!(report.lines().count() > 1, "forecast report has no data rows");

    // A rerun over an up-to-date directory reuses every cached stage and
    // leaves every byte unchanged.
    let rerun = run_ok(&["run", "--config", cfg, "--out-dir", a]);
    let stdout = String::from_utf8_lossy(&rerun.stdout);
    for stage in ALL_STAGES {
        assert!(
            stdout.contains(&format!("[{stage}] cached")),
            "rerun did not report stage {stage} as cached:\n{stdout}"
        );
    }
    assert!(
        !stdout.contains("running"),
        "rerun recomputed a stage:\n{stdout}"
    );
    assert_eq!(
        collect_files(&dir_a),
        files_a,
        "cached rerun modified artifacts"
    );

    // Corrupt input: the ingest stage fails with exit code 3, names the
    // stage, leaves a `.partial` marker, and no downstream artifacts.
    let corrupt = tmp.path().join("corrupt.jsonl");
    fs::write(&corrupt, "{\"txid\": \"truncated\"\n").expect("write corrupt input");
    let cfg_corrupt_path = tmp.path().join("corrupt.toml");
    fs::write(
        &cfg_corrupt_path,
        format!("[input]\npath = \"{}\"\n", corrupt.display()),
    )
    .expect("write corrupt config");
    let dir_c = tmp.path().join("c");
    let out = bin()
        .args([
            "run",
            "--config",
            cfg_corrupt_path.to_str().expect("utf8 path"),
            "--out-dir",
            dir_c.to_str().expect("utf8 path"),
        ])
        .output()
        .expect("spawn decprof");
    assert_eq!(
        out.status.code(),
        Some(3),
        "corrupt input should exit 3, stderr:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("stage ingest failed"),
        "stderr should name the failing stage:\n{stderr}"
    );
    assert!(
        dir_c.join("ingest.partial").exists(),
        "failed stage should leave a .partial marker"
    );
    assert!(
        !dir_c.join("ledger").exists(),
        "downstream stages must not run after a failure"
    );

    // Validation problems exit with code 2: a bad flag value, a bad config
    // value, and an unknown flag.
    let out = bin()
        .args(["run", "--config", cfg, "--out-dir", a, "--window", "bogus"])
        .output()
        .expect("spawn decprof");
    assert_eq!(out.status.code(), Some(2), "bad --window should exit 2");

    let cfg_bad_path = tmp.path().join("bad.toml");
    fs::write(&cfg_bad_path, "[ledger]\ntop_n = 0\n").expect("write bad config");
    let out = bin()
        .args([
            "run",
            "--config",
            cfg_bad_path.to_str().expect("utf8 path"),
            "--out-dir",
            a,
        ])
        .output()
        .expect("spawn decprof");
    assert_eq!(out.status.code(), Some(2), "invalid config should exit 2");

    let out = bin()
        .args(["run", "--no-such-flag"])
        .output()
        .expect("spawn decprof");
    assert_eq!(out.status.code(), Some(2), "unknown flag should exit 2");

    println!("ACCEPTANCE 11 pipeline-determinism: PASS");
}

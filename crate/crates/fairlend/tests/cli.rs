//! End-to-end subcommand tests driving the compiled binary.

use std::path::Path;
use std::process::{Command, Output};

fn fairlend(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fairlend"));
    cmd.args(args);
    cmd.env_remove("FAIRLEND_THREADS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "expected success, stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

/// The stderr envelope of a failed run, parsed.
fn error_kind(out: &Output) -> String {
    assert!(!out.status.success(), "expected failure");
    let stderr = String::from_utf8_lossy(&out.stderr);
    let envelope: serde_json::Value =
        serde_json::from_str(stderr.trim()).unwrap_or_else(|_| panic!("bad envelope: {stderr}"));
    envelope["error"]["kind"]
        .as_str()
        .expect("kind field")
        .to_string()
}

fn simulate_into(dir: &Path, n: usize, seed: u64) {
    let out = fairlend(
        &[
            "simulate",
            "--n",
            &n.to_string(),
            "--seed",
            &seed.to_string(),
            "--out",
            dir.to_str().unwrap(),
        ],
        &[],
    );
    assert_ok(&out);
    for file in ["data.csv", "schema.json", "hidden.csv"] {
        assert!(dir.join(file).is_file(), "missing {file}");
    }
}

#[test]
fn simulate_emits_the_three_files_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let d1 = dir.path().join("one");
    let d2 = dir.path().join("two");
    simulate_into(&d1, 500, 9);
    simulate_into(&d2, 500, 9);
    for file in ["data.csv", "schema.json", "hidden.csv"] {
        let a = std::fs::read(d1.join(file)).unwrap();
        let b = std::fs::read(d2.join(file)).unwrap();
        assert_eq!(a, b, "{file} must be byte-identical across runs");
    }
    // Hidden ground truth rows align one-to-one with the visible rows.
    let hidden = std::fs::read_to_string(d1.join("hidden.csv")).unwrap();
    assert_eq!(hidden.lines().count(), 501);
    assert!(hidden.starts_with("w,z\n"));
}

#[test]
fn screen_then_train_then_audit_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    simulate_into(&sim, 4000, 11);
    let data = sim.join("data.csv");
    let schema = sim.join("schema.json");

    let screen_dir = dir.path().join("screen");
    let out = fairlend(
        &[
            "screen",
            "--data",
            data.to_str().unwrap(),
            "--schema",
            schema.to_str().unwrap(),
            "--group-column",
            "a",
            "--group-level",
            "1",
            "--out",
            screen_dir.to_str().unwrap(),
        ],
        &[],
    );
    assert_ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        stdout.contains("DROP"),
        "screen table should mark proxies: {stdout}"
    );
    let screening = screen_dir.join("screening.json");
    assert!(screening.is_file() && screen_dir.join("positivity.json").is_file());

    // Unawareness without a screening report is the documented failure.
    let model_path = dir.path().join("model.json");
    let out = fairlend(
        &[
            "train",
            "--mode",
            "unawareness",
            "--schema",
            schema.to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
            "--out",
            model_path.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(error_kind(&out), "MissingScreeningReport");

    let params = dir.path().join("params.json");
    std::fs::write(
        &params,
        serde_json::json!({
            "num_trees": 20, "learning_rate": "3fb999999999999a", "max_leaves": 8,
            "min_samples_leaf": 10, "max_bins": 255, "l2_leaf_penalty": "3ff0000000000000",
            "seed": 0
        })
        .to_string(),
    )
    .unwrap();
    let out = fairlend(
        &[
            "train",
            "--mode",
            "unawareness",
            "--schema",
            schema.to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
            "--params",
            params.to_str().unwrap(),
            "--screening",
            screening.to_str().unwrap(),
            "--out",
            model_path.to_str().unwrap(),
        ],
        &[],
    );
    assert_ok(&out);

    let audit_path = dir.path().join("paired.json");
    let out = fairlend(
        &[
            "audit",
            "--model",
            model_path.to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
            "--schema",
            schema.to_str().unwrap(),
            "--out",
            audit_path.to_str().unwrap(),
        ],
        &[],
    );
    assert_ok(&out);
    let audit: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&audit_path).unwrap()).unwrap();
    assert_eq!(
        audit["max_abs_delta"].as_f64().unwrap(),
        0.0,
        "unawareness model must ignore the protected column"
    );
    assert!(audit["group_means"].as_array().unwrap().len() >= 2);
}

#[test]
fn experiment_and_report_render_the_same_table() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(
        &config,
        serde_json::json!({
            "source": { "kind": "scm", "spec": {}, "n_rows": 1200 },
            "params": {
                "awareness": { "num_trees": 15, "learning_rate": "3fb999999999999a",
                    "max_leaves": 8, "min_samples_leaf": 10, "max_bins": 255,
                    "l2_leaf_penalty": "3ff0000000000000", "seed": 0 },
                "unawareness": { "num_trees": 15, "learning_rate": "3fb999999999999a",
                    "max_leaves": 8, "min_samples_leaf": 10, "max_bins": 255,
                    "l2_leaf_penalty": "3ff0000000000000", "seed": 0 },
                "counterfactual": { "num_trees": 15, "learning_rate": "3fb999999999999a",
                    "max_leaves": 8, "min_samples_leaf": 10, "max_bins": 255,
                    "l2_leaf_penalty": "3ff0000000000000", "seed": 0 }
            },
            "seeds": [1, 2],
            "cv_folds": 0,
            "group_column": "a",
            "protected_level": "1",
            "reference_level": "0"
        })
        .to_string(),
    )
    .unwrap();
    let out_dir = dir.path().join("exp");
    let out = fairlend(
        &[
            "experiment",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ],
        &[],
    );
    assert_ok(&out);
    let report_txt = std::fs::read_to_string(out_dir.join("report.txt")).unwrap();
    assert!(report_txt.contains("counterfactual"), "{report_txt}");

    let out = fairlend(
        &[
            "report",
            "--result",
            out_dir.join("experiment.json").to_str().unwrap(),
        ],
        &[],
    );
    assert_ok(&out);
    assert_eq!(String::from_utf8_lossy(&out.stdout), report_txt);
}

#[test]
fn default_scm_spec_is_a_valid_spec_file() {
    // An empty JSON object deserializes to the default spec, and a spec
    // written by hand from the docs round-trips through simulate.
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(&spec, "{}").unwrap();
    let out_dir = dir.path().join("sim");
    let out = fairlend(
        &[
            "simulate",
            "--spec",
            spec.to_str().unwrap(),
            "--n",
            "100",
            "--seed",
            "1",
            "--out",
            out_dir.to_str().unwrap(),
        ],
        &[],
    );
    assert_ok(&out);

    let default_dir = dir.path().join("sim_default");
    simulate_into(&default_dir, 100, 1);
    assert_eq!(
        std::fs::read(out_dir.join("data.csv")).unwrap(),
        std::fs::read(default_dir.join("data.csv")).unwrap(),
        "explicit default spec equals omitted spec"
    );
}

#[test]
fn errors_come_back_as_json_envelopes() {
    let dir = tempfile::tempdir().unwrap();
    // Missing input file.
    let out = fairlend(
        &[
            "report",
            "--result",
            dir.path().join("nope.json").to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(error_kind(&out), "MissingInput");

    // Unparseable config.
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    let out = fairlend(
        &[
            "experiment",
            "--config",
            bad.to_str().unwrap(),
            "--out",
            dir.path().to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(error_kind(&out), "ConfigParse");

    // Unknown mode string.
    let out = fairlend(
        &[
            "train",
            "--mode",
            "oblivious",
            "--schema",
            bad.to_str().unwrap(),
            "--data",
            bad.to_str().unwrap(),
            "--out",
            bad.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(error_kind(&out), "ConfigParse");

    // Bad thread count env var.
    let out = fairlend(
        &["report", "--result", bad.to_str().unwrap()],
        &[("FAIRLEND_THREADS", "zero")],
    );
    assert_eq!(error_kind(&out), "ConfigParse");
}

#[test]
fn malformed_spec_is_rejected_with_its_module_kind() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    // Structurally valid JSON, semantically invalid distribution.
    std::fs::write(&spec, serde_json::json!({ "a_prior": 1.5 }).to_string()).unwrap();
    let out = fairlend(
        &[
            "simulate",
            "--spec",
            spec.to_str().unwrap(),
            "--n",
            "10",
            "--seed",
            "0",
            "--out",
            dir.path().join("x").to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(error_kind(&out), "InvalidSpec");
}

//! End-to-end checks of the command-line surface: every stage subcommand is
//! driven on a tiny synthetic dataset, and config validation failures exit
//! nonzero with actionable messages.

use std::path::Path;
use std::process::{Command, Output};

fn kex(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kex"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("kex runs")
}

fn assert_ok(out: &Output, what: &str) -> String {
    assert!(
        out.status.success(),
        "{what} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).to_string()
}

const DATASET: &str = "synthetic:classes=fruit+plum,train=40,test=60,seed=4,side=16";

#[test]
fn transforms_list_prints_the_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = assert_ok(&kex(&["transforms", "list"], dir.path()), "transforms list");
    for id in ["flip", "rot90", "rot270", "gaussian-noise", "color-jitter"] {
        assert!(out.contains(id), "table must mention {id}:\n{out}");
    }
    // severity-resolved view
    let resolved = assert_ok(
        &kex(&["transforms", "list", "--severity", "3"], dir.path()),
        "transforms list --severity",
    );
    assert!(resolved.contains("sigma="), "{resolved}");
}

#[test]
fn stagewise_pipeline_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    // embed into an explicit cache directory
    assert_ok(
        &kex(
            &["embed", "--dataset", DATASET, "--class", "fruit", "--encoder", "grad-hist-16", "--out", "emb"],
            d,
        ),
        "embed",
    );
    assert!(d.join("emb").read_dir().unwrap().count() >= 22, "11 sets, two files each");

    // rank reuses the cache
    let out = assert_ok(
        &kex(
            &[
                "rank", "--dataset", DATASET, "--class", "fruit", "--encoder", "grad-hist-16",
                "--cache", "emb", "--k", "2", "--out", "ranking.json",
            ],
            d,
        ),
        "rank",
    );
    assert!(out.contains("policy:"), "{out}");
    let ranking: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("ranking.json")).unwrap()).unwrap();
    assert_eq!(ranking["class_id"], "fruit");
    assert_eq!(ranking["entries"].as_array().unwrap().len(), 10);
    assert_eq!(ranking["policy"]["K"], 2);

    // protocols: ssa derived from the ranking, with an override
    std::fs::write(d.join("overrides.txt"), "fruit rot90 shifting\n").unwrap();
    for (setup, path) in [("sad", "sad.json"), ("spa", "spa.json"), ("ssa", "ssa.json")] {
        let mut args = vec![
            "build-protocol", "--setup", setup, "--dataset", DATASET, "--class", "fruit",
            "--seed", "7", "--out", path,
        ];
        if setup == "ssa" {
            args.extend(["--ranking", "ranking.json", "--overrides", "overrides.txt", "--k", "2"]);
        }
        assert_ok(&kex(&args, d), setup);
        assert!(d.join(path).is_file());
    }

    // train a tiny model from the ranking policy
    assert_ok(
        &kex(
            &[
                "train", "--dataset", DATASET, "--class", "fruit", "--policy", "ranking.json",
                "--epochs", "1", "--feature-dim", "16", "--batch-size", "8", "--k", "2",
                "--out", "fruit.ckpt",
            ],
            d,
        ),
        "train",
    );

    // score each manifest with the model, plus a raw-backend baseline
    for (manifest, scores) in [("sad.json", "sad.csv"), ("spa.json", "spa.csv"), ("ssa.json", "ssa.csv")] {
        assert_ok(
            &kex(
                &[
                    "score", "--dataset", DATASET, "--manifest", manifest, "--model", "fruit.ckpt",
                    "--out", scores,
                ],
                d,
            ),
            manifest,
        );
        let text = std::fs::read_to_string(d.join(scores)).unwrap();
        assert!(text.starts_with("sample_id,transform_id,true_label,decision_value,anomaly_score,binary_label"));
    }
    assert_ok(
        &kex(
            &[
                "score", "--dataset", DATASET, "--manifest", "sad.json", "--raw-backend",
                "grad-hist-16", "--out", "baseline.csv",
            ],
            d,
        ),
        "baseline score",
    );

    // eval all three setups into one report
    let out = assert_ok(
        &kex(
            &[
                "eval", "--scores", "sad.csv", "--manifest", "sad.json", "--scores", "spa.csv",
                "--manifest", "spa.json", "--scores", "ssa.csv", "--manifest", "ssa.json",
                "--encoder", "grad-hist-16", "--estimator", "sliced", "--out", "report.json",
            ],
            d,
        ),
        "eval",
    );
    assert!(out.contains("SAD") && out.contains("SPA") && out.contains("SSA"), "{out}");

    // render tables and backend histograms
    let out = assert_ok(
        &kex(
            &[
                "report", "--report", "report.json", "--out-dir", "reports", "--histograms",
                "--dataset", DATASET, "--class", "fruit", "--backend", "grad-hist-16",
                "--transforms", "identity,flip,rot90",
            ],
            d,
        ),
        "report",
    );
    assert!(out.contains("mean"), "{out}");
    assert!(d.join("reports/report.csv").is_file());
    assert!(d.join("reports/report.txt").is_file());
    assert!(d.join("reports/plots/fruit-rot90.svg").is_file());
    assert!(d.join("reports/plots/fruit-histograms.json").is_file());
}

#[test]
fn run_and_validate_configs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let config = format!(
        r#"
seed = 5
out_dir = "run-out"

[dataset]
locator = "{DATASET}"
classes = ["fruit"]

[encoder]
backend = "grad-hist-16"

[transport]
n_projections = 64

[train]
epochs = 1
batch_size = 8
k = 2
feature_dim = 16

[protocol]
setups = ["SAD", "SPA"]

[report]
histogram_transforms = []
"#
    );
    std::fs::write(d.join("config.toml"), &config).unwrap();
    assert_ok(&kex(&["validate", "--config", "config.toml"], d), "validate");
    let out = assert_ok(&kex(&["run", "--config", "config.toml"], d), "run");
    assert!(out.contains("mean AUROC"), "{out}");
    assert!(d.join("run-out/report.json").is_file());
    assert!(d.join("run-out/status.json").is_file());

    // K = 7 must fail validation with the bank-size message
    let bad = config.replace("k = 2", "k = 7");
    std::fs::write(d.join("bad.toml"), &bad).unwrap();
    let out = kex(&["validate", "--config", "bad.toml"], d);
    assert!(!out.status.success(), "bad config must fail validation");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("2K exceeds transform bank size"), "{stdout}");

    // temperature = 0 must fail too
    let bad = config.replace("[protocol]", "temperature = 0.0\n[protocol]");
    std::fs::write(d.join("bad2.toml"), &bad).unwrap();
    let out = kex(&["validate", "--config", "bad2.toml"], d);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("temperature"));
}

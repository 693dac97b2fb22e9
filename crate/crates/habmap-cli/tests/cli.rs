//! End-to-end tests of the `habmap` binary: exit codes, artifact layout,
//! append-only reruns, and the manifest audit trail.

use std::path::{Path, PathBuf};
use std::process::Command;

use tempfile::TempDir;

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

impl Run {
    fn ok(&self) -> &Self {
        assert_eq!(
            self.code, 0,
            "expected success\nstdout: {}\nstderr: {}",
            self.stdout, self.stderr
        );
        self
    }
}

fn habmap(config: &Path, args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_habmap"))
        .arg("--config")
        .arg(config)
        .args(args)
        .env_remove("HABMAP_CONFIG")
        .output()
        .expect("binary spawns");
    Run {
        code: out.status.code().expect("terminated by signal"),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

/// A configuration small enough that every stage finishes in well under a
/// second, but large enough that splits, folds, and the unlabeled sample
/// all succeed.
fn write_config(dir: &Path, extra: &str) -> (PathBuf, PathBuf) {
    let out = dir.join("out");
    let text = format!(
        "raster = {out}/synth_raster.msrs\n\
         annotations = {out}/annotations.csv\n\
         pretrain_annotations = {out}/coarse_annotations.csv\n\
         output_dir = {out}\n\
         synth_height = 96\n\
         synth_width = 96\n\
         synth_channels = 3\n\
         synth_classes = 4\n\
         synth_cell = 16\n\
         synth_points = 80\n\
         synth_coarse_points = 120\n\
         synth_imbalance = 1.0\n\
         synth_margin = 4\n\
         patch_size = 9\n\
         crop_max = 7\n\
         epochs = 3\n\
         pretrain_epochs = 2\n\
         batch_size = 16\n\
         learning_rate = 0.001\n\
         n_trees = 5\n\
         k_folds = 2\n\
         test_fraction = 0.3\n\
         tta_rounds = 2\n\
         pseudo_tta_rounds = 1\n\
         n_clusters = 4\n\
         unlabeled_count = 24\n\
         conv_widths = 4\n\
         map_stride = 3\n\
         map_tile = 32\n\
         seed = 7\n\
         {extra}",
        out = out.display()
    );
    let path = dir.join("config.txt");
    std::fs::write(&path, text).unwrap();
    (path, out)
}

fn manifest(out: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(out.join("manifest.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn stage_names(m: &serde_json::Value) -> Vec<String> {
    m["stages"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["stage"].as_str().unwrap().to_string())
        .collect()
}

#[test]
fn help_exits_zero_and_usage_errors_exit_one() {
    let dir = TempDir::new().unwrap();
    let (config, _) = write_config(dir.path(), "");

    assert_eq!(habmap(&config, &["--help"]).code, 0);
    assert_eq!(habmap(&config, &["--version"]).code, 0);

    // Unknown flags and missing required arguments are clap's usage errors.
    assert_eq!(habmap(&config, &["synth", "--bogus"]).code, 1);
    assert_eq!(habmap(&config, &["pretrain"]).code, 1);

    // Malformed --set and config validation failures are ours.
    assert_eq!(habmap(&config, &["--set", "epochs", "synth"]).code, 1);
    let run = habmap(&config, &["--set", "patch_size=8", "synth"]);
    assert_eq!(run.code, 1);
    assert!(run.stderr.contains("patch_size"), "stderr: {}", run.stderr);

    let run = habmap(&config, &["pipeline", "--attributes", "nope"]);
    assert_eq!(run.code, 1);
    assert!(
        run.stderr.contains("unknown model row") && run.stderr.contains("base"),
        "stderr should list the known rows: {}",
        run.stderr
    );
}

#[test]
fn missing_stage_inputs_exit_two_and_name_the_prior_stage() {
    let dir = TempDir::new().unwrap();
    let (config, _) = write_config(dir.path(), "");

    for (args, prior) in [
        (&["train-rf"][..], "ingest"),
        (&["split"][..], "ingest"),
        (&["distill"][..], "train-cnn"),
        (&["evaluate"][..], "ingest"),
        (&["predict-map"][..], "ingest"),
    ] {
        let run = habmap(&config, args);
        assert_eq!(run.code, 2, "{args:?} stderr: {}", run.stderr);
        assert!(
            run.stderr.contains(&format!("run `habmap {prior}` first")),
            "{args:?} should point at the {prior} stage: {}",
            run.stderr
        );
    }

    // Ingest before synth: the configured raster file does not exist yet.
    let run = habmap(&config, &["ingest"]);
    assert_eq!(run.code, 2, "stderr: {}", run.stderr);

    // A config that never names a raster is a usage problem instead.
    let bare = dir.path().join("bare.txt");
    std::fs::write(&bare, format!("output_dir = {}\n", dir.path().join("out2").display()))
        .unwrap();
    let run = habmap(&bare, &["ingest"]);
    assert_eq!(run.code, 1, "stderr: {}", run.stderr);
    assert!(run.stderr.contains("raster"), "stderr: {}", run.stderr);
}

#[test]
fn forest_chain_writes_artifacts_and_manifest() {
    let dir = TempDir::new().unwrap();
    let (config, out) = write_config(dir.path(), "");

    habmap(&config, &["synth"]).ok();
    habmap(&config, &["ingest"]).ok();
    habmap(&config, &["split"]).ok();
    habmap(&config, &["train-rf"]).ok();
    let eval = habmap(&config, &["evaluate"]);
    eval.ok();
    assert!(eval.stdout.contains("evaluate rf:"), "stdout: {}", eval.stdout);
    habmap(&config, &["predict-map"]).ok();
    habmap(&config, &["plot"]).ok();

    for name in [
        "synth_raster.msrs",
        "annotations.csv",
        "coarse_annotations.csv",
        "raster.msrs",
        "stats.csv",
        "patches.ptch",
        "classes.tsv",
        "skipped.csv",
        "split.txt",
        "fold_0.txt",
        "fold_1.txt",
        "rf.rfor",
        "metrics_rf.json",
        "curves_rf_pr.csv",
        "curves_rf_roc.csv",
        "comparison.csv",
        "map_class.msrs",
        "map_probabilities.msrs",
        "map_confidence.msrs",
        "metrics_rf_pr.svg",
        "metrics_rf_roc.svg",
        "metrics_rf_confusion.svg",
    ] {
        assert!(out.join(name).exists(), "missing artifact {name}");
    }

    let comparison = std::fs::read_to_string(out.join("comparison.csv")).unwrap();
    assert!(comparison.starts_with("model,accuracy,"), "got: {comparison}");
    assert!(comparison.lines().any(|l| l.starts_with("rf,")));

    let svg = std::fs::read_to_string(out.join("metrics_rf_pr.svg")).unwrap();
    assert!(svg.contains("<svg"), "plot output should be SVG");

    let m = manifest(&out);
    assert_eq!(
        stage_names(&m),
        ["synth", "ingest", "split", "train-rf", "evaluate", "predict-map", "plot"]
    );
    // Every recorded output carries a sha256 hash.
    for stage in m["stages"].as_array().unwrap() {
        for (name, hash) in stage["outputs"].as_object().unwrap() {
            let hash = hash.as_str().unwrap();
            assert_eq!(hash.len(), 64, "{name} hash: {hash}");
            assert!(hash.chars().all(|c| c.is_ascii_hexdigit()));
        }
    }
    // The split stage consumed the ingest outputs it depends on.
    let split_stage = &m["stages"][2];
    assert!(split_stage["inputs"].as_object().unwrap().len() >= 2);
}

#[test]
fn reruns_are_append_only_until_forced() {
    let dir = TempDir::new().unwrap();
    let (config, out) = write_config(dir.path(), "");

    habmap(&config, &["synth"]).ok();
    let first = manifest(&out);
    let first_hash = first["stages"][0]["outputs"]["synth_raster.msrs"].clone();

    let rerun = habmap(&config, &["synth"]);
    assert_eq!(rerun.code, 2, "stderr: {}", rerun.stderr);
    assert!(
        rerun.stderr.contains("already exists") && rerun.stderr.contains("--force"),
        "stderr: {}",
        rerun.stderr
    );

    habmap(&config, &["--force", "synth"]).ok();
    let second = manifest(&out);
    let stages = stage_names(&second);
    assert_eq!(stages, ["synth", "synth"], "records append, never rewrite");
    // Same seed, same bytes.
    assert_eq!(second["stages"][1]["outputs"]["synth_raster.msrs"], first_hash);
}

#[test]
fn the_environment_variable_supplies_the_config() {
    let dir = TempDir::new().unwrap();
    let (config, _) = write_config(dir.path(), "");

    // 12 points over 4 balanced classes lands exactly, with no rounding up.
    let out = Command::new(env!("CARGO_BIN_EXE_habmap"))
        .args(["--set", "synth_points=12", "synth"])
        .env("HABMAP_CONFIG", &config)
        .output()
        .expect("binary spawns");
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        stdout.contains("12 fine points"),
        "--set should override the env config: {stdout}"
    );
}

#[test]
fn the_base_pipeline_row_runs_end_to_end() {
    let dir = TempDir::new().unwrap();
    let (config, out) = write_config(dir.path(), "");

    habmap(&config, &["synth"]).ok();
    habmap(&config, &["pipeline", "--attributes", "base"]).ok();

    for name in
        ["rf.rfor", "cnn.nnet", "metrics_cnn.json", "metrics_ensemble.json", "map_class.msrs"]
    {
        assert!(out.join(name).exists(), "missing artifact {name}");
    }
    // The base row neither pretrains nor distills.
    assert!(!out.join("pretrained.nnet").exists());
    assert!(!out.join("student.nnet").exists());

    let m = manifest(&out);
    assert_eq!(stage_names(&m).last().map(String::as_str), Some("predict-map"));
}

#[test]
fn pretraining_distillation_and_cv_chain_together() {
    let dir = TempDir::new().unwrap();
    let (config, out) =
        write_config(dir.path(), "pretraining = coarse\nfreeze_conv = true\n");

    habmap(&config, &["synth"]).ok();
    habmap(&config, &["ingest"]).ok();
    habmap(&config, &["split"]).ok();
    habmap(&config, &["pretrain", "--mode", "coarse"]).ok();
    habmap(&config, &["train-cnn"]).ok();
    habmap(&config, &["distill"]).ok();
    let eval = habmap(&config, &["evaluate"]);
    eval.ok();
    // Without a forest there are no ensembles; with one there are two.
    assert!(eval.stdout.contains("evaluate cnn:"), "stdout: {}", eval.stdout);
    assert!(eval.stdout.contains("evaluate student:"), "stdout: {}", eval.stdout);

    for name in [
        "pretrained.nnet",
        "pretrain_log.csv",
        "pretrain_classes.tsv",
        "cnn.nnet",
        "train_log.csv",
        "student.nnet",
        "pseudo.plbs",
        "distill_log.csv",
        "metrics_cnn.json",
        "metrics_student.json",
    ] {
        assert!(out.join(name).exists(), "missing artifact {name}");
    }

    // The map prefers the distilled student.
    let map = habmap(&config, &["predict-map"]);
    map.ok();
    assert!(map.stdout.contains("network only"), "stdout: {}", map.stdout);

    let cv = habmap(&config, &["evaluate", "--cv"]);
    cv.ok();
    assert!(cv.stdout.contains("evaluate --cv ensemble:"), "stdout: {}", cv.stdout);
    for name in [
        "metrics_fold0_rf.json",
        "metrics_fold1_cnn.json",
        "aggregate_ensemble.json",
        "comparison_cv.csv",
    ] {
        assert!(out.join(name).exists(), "missing artifact {name}");
    }
    let agg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("aggregate_rf.json")).unwrap())
            .unwrap();
    assert_eq!(agg["n_folds"], 2);
}

#[test]
fn unsupervised_pretraining_writes_a_network() {
    let dir = TempDir::new().unwrap();
    let (config, out) = write_config(dir.path(), "");

    habmap(&config, &["synth"]).ok();
    habmap(&config, &["ingest"]).ok();
    let run = habmap(&config, &["pretrain", "--mode", "iic"]);
    run.ok();
    assert!(run.stdout.contains("pretrain (unsupervised)"), "stdout: {}", run.stdout);
    assert!(out.join("pretrained.nnet").exists());
    assert!(out.join("pretrain_log.csv").exists());
}

#[test]
fn divergent_training_is_a_numerical_failure() {
    let dir = TempDir::new().unwrap();
    let (config, _) = write_config(dir.path(), "");

    habmap(&config, &["synth"]).ok();
    habmap(&config, &["ingest"]).ok();
    habmap(&config, &["split"]).ok();
    let run = habmap(&config, &["--set", "learning_rate=1e30", "train-cnn"]);
    assert_eq!(run.code, 3, "stderr: {}", run.stderr);
    assert!(run.stderr.contains("non-finite"), "stderr: {}", run.stderr);
}

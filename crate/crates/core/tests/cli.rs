use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use hcs_contrast::batch_effect::{synthetic_labeled, SyntheticLabeledConfig};
use hcs_contrast::preprocess::fixture::{mixed_views_fixture, write_fixture};
use hcs_contrast::retrieval::{random_embeddings, PairedEmbeddings};
use hcs_contrast::toy_train::retrieval_csv;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hcs-contrast"))
        .args(args)
        .env("HCS_LOG", "info")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn config_hash(out: &Output) -> String {
    stdout(out)
        .lines()
        .find_map(|l| l.strip_prefix("config hash: "))
        .expect("hash printed")
        .to_string()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn loss_check_exit_codes() {
    let ok = run(&["loss-check"]);
    assert_eq!(code(&ok), 0, "{}", stderr(&ok));
    assert!(stdout(&ok).contains("PASS"));
    assert_eq!(config_hash(&ok).len(), 64);

    let cold = run(&["loss-check", "--tau", "0.01"]);
    assert_eq!(code(&cold), 0, "{}", stderr(&cold));

    let clip = run(&["loss-check", "--loss", "clip", "--n", "8"]);
    assert_eq!(code(&clip), 0, "{}", stderr(&clip));

    let single = run(&["loss-check", "--loss", "imm", "--m", "1"]);
    assert_eq!(code(&single), 2);
    assert!(stderr(&single).contains("intra term undefined"));

    let bad_step = run(&["loss-check", "--eps", "0.1"]);
    assert_eq!(code(&bad_step), 2);

    let unknown = run(&["loss-check", "--loss", "simclr"]);
    assert_eq!(code(&unknown), 2);
}

#[test]
fn config_file_and_flags_merge_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let toml_path = dir.path().join("check.toml");
    fs::write(&toml_path, "n = 3\n[loss_config]\ntau = 0.05\n").unwrap();
    let from_file = run(&["loss-check", "--config", p(&toml_path)]);
    let from_flags = run(&["loss-check", "--n", "3", "--tau", "0.05"]);
    assert_eq!(code(&from_file), 0);
    assert_eq!(config_hash(&from_file), config_hash(&from_flags));

    let overridden = run(&["loss-check", "--config", p(&toml_path), "--n", "5"]);
    assert!(stdout(&overridden).contains("n=5"));
    assert!(stdout(&overridden).contains("tau=0.05"));

    let json_path = dir.path().join("bad.json");
    fs::write(&json_path, r#"{"n": 3, "temperature": 1.0}"#).unwrap();
    let unknown = run(&["loss-check", "--config", p(&json_path)]);
    assert_eq!(code(&unknown), 2);
    assert!(stderr(&unknown).contains("temperature"));

    let missing = run(&["loss-check", "--config", p(&dir.path().join("none.toml"))]);
    assert_eq!(code(&missing), 2);
}

#[test]
fn preprocess_exit_codes_and_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in");
    let output = dir.path().join("out");
    write_fixture(&input, &mixed_views_fixture(40, 40), 3).unwrap();

    let first = run(&["preprocess", p(&input), p(&output), "--workers", "2"]);
    assert_eq!(code(&first), 0, "{}", stderr(&first));
    assert!(output.join("manifest.csv").exists());
    assert!(output.join("manifest.json").exists());
    assert!(output.join("compression_report.csv").exists());

    let again = run(&["preprocess", p(&input), p(&output)]);
    assert_eq!(code(&again), 0);
    assert!(stderr(&again).contains("0 converted"), "{}", stderr(&again));

    let missing = dir.path().join("does-not-exist");
    let absent = run(&["preprocess", p(&missing), p(&output)]);
    assert_eq!(code(&absent), 2);
    assert!(stderr(&absent).contains(p(&missing)));

    // A view without its last channel is skipped, which makes the run partial.
    fs::remove_file(input.join("source_1/batch_1/plate_1/A01/v1/ch4.tif")).unwrap();
    let partial = run(&["preprocess", p(&input), p(&dir.path().join("out2"))]);
    assert_eq!(code(&partial), 1, "{}", stderr(&partial));
}

#[test]
fn train_toy_artifacts_determinism_and_numeric_abort() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("toy.toml");
    fs::write(
        &cfg,
        "[data]\nn_compounds = 600\n[train]\nepochs = 4\nwarmup_epochs = 1\nbatch_size = 32\n",
    )
    .unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        let res = run(&[
            "train-toy",
            "--config",
            p(&cfg),
            "--loss",
            "emm",
            "--seed",
            "4",
            "--out",
            p(out),
        ]);
        assert_eq!(code(&res), 0, "{}", stderr(&res));
    }
    for name in [
        "loss_curve.csv",
        "embeddings_retrieval.csv",
        "embeddings_labeled.csv",
        "retrieval_report.csv",
        "batch_effect_report.csv",
        "run.json",
    ] {
        assert!(out_a.join(name).exists(), "{name} missing");
    }
    for name in ["loss_curve.csv", "embeddings_retrieval.csv"] {
        assert_eq!(fs::read(out_a.join(name)).unwrap(), fs::read(out_b.join(name)).unwrap());
    }
    let run_json: serde_json::Value = serde_json::from_slice(&fs::read(out_a.join("run.json")).unwrap()).unwrap();
    assert_eq!(run_json["train_seed"], 4);
    assert_eq!(run_json["config_hash"].as_str().unwrap().len(), 64);

    let hot = dir.path().join("hot.toml");
    fs::write(
        &hot,
        "[data]\nn_compounds = 100\n[train]\nepochs = 2\nwarmup_epochs = 1\n[train.loss]\ntau = 1e-310\n",
    )
    .unwrap();
    let abort = run(&["train-toy", "--config", p(&hot), "--loss", "clip"]);
    assert_eq!(code(&abort), 3, "{}", stderr(&abort));
    assert!(stderr(&abort).contains("epoch"), "{}", stderr(&abort));
}

#[test]
fn eval_retrieval_baselines_and_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let random = dir.path().join("random.csv");
    fs::write(&random, retrieval_csv(&random_embeddings(2000, 16, 5).unwrap())).unwrap();
    let res = run(&[
        "eval-retrieval",
        "--embeddings",
        p(&random),
        "--direction",
        "both",
        "--assert-random-baseline",
        "--out",
        p(&dir.path().join("rep")),
    ]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let csv = fs::read_to_string(dir.path().join("rep/retrieval_report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);

    let base = random_embeddings(500, 16, 6).unwrap();
    let oracle = PairedEmbeddings::aligned(base.ids().to_vec(), base.mol().clone(), base.mol().clone()).unwrap();
    let oracle_path = dir.path().join("oracle.csv");
    fs::write(&oracle_path, retrieval_csv(&oracle)).unwrap();
    let res = run(&["eval-retrieval", "--embeddings", p(&oracle_path), "--ks", "1,10"]);
    assert_eq!(code(&res), 0);
    let text = stdout(&res);
    assert!(text.contains("img2mol       1.000    1.000    1.000"), "{text}");
    let flagged = run(&[
        "eval-retrieval",
        "--embeddings",
        p(&oracle_path),
        "--assert-random-baseline",
    ]);
    assert_eq!(code(&flagged), 3);

    let malformed = dir.path().join("bad.csv");
    fs::write(&malformed, "id,modality,e0\na,mol,notanumber\n").unwrap();
    assert_eq!(code(&run(&["eval-retrieval", "--embeddings", p(&malformed)])), 2);
    assert_eq!(
        code(&run(&[
            "eval-retrieval",
            "--embeddings",
            p(&dir.path().join("none.csv"))
        ])),
        2
    );
}

fn g_values(out_dir: &Path) -> Vec<f64> {
    let text = fs::read_to_string(out_dir.join("batch_effect_report.csv")).unwrap();
    let row = text.lines().nth(1).unwrap();
    row.split(',').skip(2).map(|v| v.parse().unwrap()).collect()
}

#[test]
fn eval_batch_effect_fixtures() {
    let dir = tempfile::tempdir().unwrap();
    let clean = dir.path().join("clean.csv");
    synthetic_labeled(&SyntheticLabeledConfig::default())
        .unwrap()
        .write_csv(&clean)
        .unwrap();
    let out = dir.path().join("clean-report");
    let res = run(&["eval-batch-effect", "--embeddings", p(&clean), "--out", p(&out)]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    for g in g_values(&out) {
        assert!((0.95..=1.05).contains(&g), "G = {g}");
    }

    let shifted = dir.path().join("shifted.csv");
    synthetic_labeled(&SyntheticLabeledConfig {
        source_offset_sigma: 6.0,
        ..SyntheticLabeledConfig::default()
    })
    .unwrap()
    .write_csv(&shifted)
    .unwrap();
    let out = dir.path().join("shifted-report");
    let res = run(&["eval-batch-effect", "--embeddings", p(&shifted), "--out", p(&out)]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let g_nss = g_values(&out)[2];
    assert!(g_nss < 0.8, "G_NSS = {g_nss}");

    let single = dir.path().join("single.csv");
    synthetic_labeled(&SyntheticLabeledConfig {
        sources: 1,
        ..SyntheticLabeledConfig::default()
    })
    .unwrap()
    .write_csv(&single)
    .unwrap();
    let res = run(&["eval-batch-effect", "--embeddings", p(&single), "--modes", "nss"]);
    assert_eq!(code(&res), 2, "{}", stderr(&res));
}

#[test]
fn make_fixture_then_preprocess() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("fixture");
    let res = run(&["make-fixture", p(&input), "--size", "32"]);
    assert_eq!(code(&res), 0);
    assert!(stdout(&res).contains("165 TIFF planes"));
    let res = run(&[
        "preprocess",
        p(&input),
        p(&dir.path().join("out")),
        "--exclude-source",
        "source_2",
    ]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    assert!(stdout(&res).contains("2 wells"));
}

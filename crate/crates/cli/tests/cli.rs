//! Subcommand behavior: determinism, exit codes, file outputs, and the
//! config echo contract.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cyclevae"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn assert_code(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut entries: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect();
    entries.sort();
    entries
}

fn gen_corpus(dir: &Path, seed: u64, utts: usize, frames: usize) {
    let out = run(&[
        "gen",
        dir.to_str().unwrap(),
        "--seed",
        &seed.to_string(),
        "--utts",
        &utts.to_string(),
        "--frames",
        &frames.to_string(),
    ]);
    assert_code(&out, 0);
}

#[test]
fn gen_is_deterministic_and_validates_utts() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    gen_corpus(&a, 5, 3, 40);
    gen_corpus(&b, 5, 3, 40);
    assert_eq!(read_dir_bytes(&a), read_dir_bytes(&b));

    // n_utts below the minimum is a usage error
    let out = run(&["gen", dir.path().join("c").to_str().unwrap(), "--utts", "0"]);
    assert_code(&out, 1);
}

#[test]
fn stats_writes_two_speakers_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    gen_corpus(&corpus, 9, 2, 40);
    let stats = dir.path().join("stats.json");
    assert_code(&run(&["stats", corpus.to_str().unwrap(), "--out", stats.to_str().unwrap()]), 0);
    let first = std::fs::read(&stats).unwrap();
    let parsed: serde_json::Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(parsed["speakers"].as_object().unwrap().len(), 2);
    assert!(parsed["speakers"]["A"]["logf0_mean"].is_number());
    assert_code(&run(&["stats", corpus.to_str().unwrap(), "--out", stats.to_str().unwrap()]), 0);
    assert_eq!(std::fs::read(&stats).unwrap(), first);

    // empty directory is a data error
    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let out = run(&["stats", empty.to_str().unwrap(), "--out", stats.to_str().unwrap()]);
    assert_code(&out, 2);
}

fn quick_train(dir: &Path, mode: &str, out_name: &str, epochs: usize, seed: u64) -> Output {
    let corpus = dir.join("corpus");
    let stats = dir.join("stats.json");
    run(&[
        "train",
        "--corpus",
        corpus.to_str().unwrap(),
        "--stats",
        stats.to_str().unwrap(),
        "--out",
        dir.join(out_name).to_str().unwrap(),
        "--mode",
        mode,
        "--cycles",
        "1",
        "--latent-dim",
        "3",
        "--hidden",
        "6",
        "--batch-frames",
        "40",
        "--epochs",
        &epochs.to_string(),
        "--seed",
        &seed.to_string(),
        "--lr",
        "1e-3",
    ])
}

fn prepared_dir(seed: u64) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    gen_corpus(&corpus, seed, 3, 48);
    let stats = dir.path().join("stats.json");
    assert_code(
        &run(&["stats", corpus.to_str().unwrap(), "--out", stats.to_str().unwrap()]),
        0,
    );
    dir
}

#[test]
fn train_echoes_canonical_config_and_modes_differ() {
    let dir = prepared_dir(11);
    let out = quick_train(dir.path(), "cyclevae", "run_cyc", 2, 3);
    assert_code(&out, 0);
    let stdout = String::from_utf8(out.stdout).unwrap();
    let config_line = stdout
        .lines()
        .find(|l| l.starts_with('{'))
        .expect("config echo")
        .to_string();
    let parsed: serde_json::Value = serde_json::from_str(&config_line).unwrap();
    assert_eq!(parsed["mode"], "cyclevae");
    assert_eq!(parsed["cycles"], 1);

    // round-trip stability: the echoed line works verbatim as a config
    // file and re-echoes unchanged
    let echo_path = dir.path().join("echo.json");
    std::fs::write(&echo_path, &config_line).unwrap();
    let again = run(&["train", "--config", echo_path.to_str().unwrap()]);
    assert_code(&again, 0);
    let stdout = String::from_utf8(again.stdout).unwrap();
    let second = stdout.lines().find(|l| l.starts_with('{')).unwrap();
    assert_eq!(second, config_line);

    let out = quick_train(dir.path(), "vae", "run_vae", 2, 3);
    assert_code(&out, 0);
    let cyc = std::fs::read(dir.path().join("run_cyc/last.cvck")).unwrap();
    let vae = std::fs::read(dir.path().join("run_vae/last.cvck")).unwrap();
    assert_ne!(cyc, vae, "objectives must produce different checkpoints");
}

#[test]
fn train_defaults_follow_the_reference_settings() {
    let help = run(&["train", "--help"]);
    assert_code(&help, 0);
    let text = String::from_utf8(help.stdout).unwrap();
    assert!(text.contains("optimum: 3"), "cycles default documented");
    assert!(text.contains("optimum: 16"), "latent default documented");
    assert!(text.contains("1024"), "reference hidden size documented");
    assert!(text.contains("0.0001"), "reference learning rate documented");

    // defaults actually land in the merged config echo (run on a missing
    // corpus so it fails fast after the echo)
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "train",
        "--corpus",
        dir.path().join("nope").to_str().unwrap(),
        "--stats",
        dir.path().join("nope.json").to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_code(&out, 2);
    let stdout = String::from_utf8(out.stdout).unwrap();
    let parsed: serde_json::Value =
        serde_json::from_str(stdout.lines().find(|l| l.starts_with('{')).unwrap()).unwrap();
    assert_eq!(parsed["cycles"], 3);
    assert_eq!(parsed["latent_dim"], 16);
    assert_eq!(parsed["batch_frames"], 80);
    assert_eq!(parsed["learning_rate"], 1e-4);
    assert_eq!(parsed["epochs"], 180);
}

#[test]
fn config_file_merges_with_flag_overrides() {
    let dir = prepared_dir(13);
    let config_path = dir.path().join("run.json");
    std::fs::write(
        &config_path,
        serde_json::json!({
            "mode": "vae",
            "cycles": 1,
            "latent_dim": 3,
            "hidden": 6,
            "batch_frames": 40,
            "learning_rate": 1e-3,
            "epochs": 1,
            "dropout": 0.5,
            "seed": 5,
            "corpus_dir": dir.path().join("corpus"),
            "stats_path": dir.path().join("stats.json"),
            "out_dir": dir.path().join("from_file"),
        })
        .to_string(),
    )
    .unwrap();
    // flag overrides the file's epoch count
    let out = run(&[
        "train",
        "--config",
        config_path.to_str().unwrap(),
        "--epochs",
        "2",
    ]);
    assert_code(&out, 0);
    let stdout = String::from_utf8(out.stdout).unwrap();
    let parsed: serde_json::Value =
        serde_json::from_str(stdout.lines().find(|l| l.starts_with('{')).unwrap()).unwrap();
    assert_eq!(parsed["epochs"], 2);
    assert_eq!(parsed["mode"], "vae");
    let metrics = std::fs::read_to_string(dir.path().join("from_file/metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 2);
}

#[test]
fn convert_roundtrip_postfilter_and_determinism() {
    let dir = prepared_dir(17);
    assert_code(&quick_train(dir.path(), "cyclevae", "run", 2, 3), 0);
    let ckpt = dir.path().join("run/last.cvck");
    let input = dir.path().join("corpus/A_000.vcft");
    let plain = dir.path().join("plain.vcft");
    let again = dir.path().join("again.vcft");
    let filtered = dir.path().join("filtered.vcft");

    let convert = |output: &Path, postfilter: bool| {
        let mut args = vec![
            "convert",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--input",
            input.to_str().unwrap(),
            "--target",
            "B",
            "--output",
            output.to_str().unwrap(),
        ];
        if postfilter {
            args.push("--postfilter");
        }
        run(&args)
    };
    assert_code(&convert(&plain, false), 0);
    assert_code(&convert(&again, false), 0);
    assert_eq!(
        std::fs::read(&plain).unwrap(),
        std::fs::read(&again).unwrap(),
        "conversion must be deterministic"
    );
    assert_code(&convert(&filtered, true), 0);

    let original = cyclevae::features::read_features(&input).unwrap();
    let converted = cyclevae::features::read_features(&plain).unwrap();
    let postfiltered = cyclevae::features::read_features(&filtered).unwrap();
    assert_eq!(converted.frames(), original.frames());
    assert_eq!(converted.speaker_id, "B");
    // voiced flags pass through unchanged
    for t in 0..original.frames() {
        assert_eq!(converted.excitation[t][1], original.excitation[t][1]);
    }
    // the postfilter touches spectra only
    assert_eq!(postfiltered.excitation, converted.excitation);
    assert_ne!(postfiltered.spectra, converted.spectra);

    // unknown target speaker is a data error
    let out = run(&[
        "convert",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
        "--target",
        "Z",
        "--output",
        dir.path().join("z.vcft").to_str().unwrap(),
    ]);
    assert_code(&out, 2);
}

#[test]
fn eval_writes_report_with_declared_keys() {
    let dir = prepared_dir(19);
    assert_code(&quick_train(dir.path(), "cyclevae", "run", 2, 3), 0);
    let report_path = dir.path().join("report.json");
    let out = run(&[
        "eval",
        "--checkpoint",
        dir.path().join("run/last.cvck").to_str().unwrap(),
        "--corpus",
        dir.path().join("corpus").to_str().unwrap(),
        "--report",
        report_path.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    let aggregate = &report["aggregate"];
    assert!(aggregate["rec_mcd_db"].is_number());
    assert!(aggregate["cv_mcd_db"].is_number());
    assert!(aggregate["latent_cosine"].is_number());
    let utts = report["utterances"].as_array().unwrap();
    assert_eq!(utts.len(), 6);
    for u in utts {
        assert!(u["rec_mcd_db"].is_number());
        assert!(u["frames"].is_number());
    }
}

#[test]
fn eval_omits_converted_mcd_without_reference() {
    let dir = prepared_dir(23);
    assert_code(&quick_train(dir.path(), "cyclevae", "run", 2, 3), 0);
    // an unpaired corpus: drop every B file
    let lonely = dir.path().join("lonely");
    std::fs::create_dir(&lonely).unwrap();
    std::fs::copy(
        dir.path().join("corpus/A_000.vcft"),
        lonely.join("A_000.vcft"),
    )
    .unwrap();
    let report_path = dir.path().join("lonely.json");
    let out = run(&[
        "eval",
        "--checkpoint",
        dir.path().join("run/last.cvck").to_str().unwrap(),
        "--corpus",
        lonely.to_str().unwrap(),
        "--report",
        report_path.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert!(report["aggregate"].get("cv_mcd_db").is_none());
    let notes = report["notes"].as_array().unwrap();
    assert!(!notes.is_empty(), "omission must be noted");
}

#[test]
fn gradcheck_passes_on_the_default_probe() {
    let out = run(&["gradcheck", "--cycles", "1", "--frames", "3", "--hidden", "4", "--latent", "2"]);
    assert_code(&out, 0);
    let stdout = String::from_utf8(out.stdout).unwrap();
    let parsed: serde_json::Value =
        serde_json::from_str(stdout.lines().find(|l| l.starts_with('{')).unwrap()).unwrap();
    assert_eq!(parsed["pass"], true);

    // an unreachable tolerance exits with the numerical-failure code
    let out = run(&[
        "gradcheck",
        "--cycles",
        "1",
        "--frames",
        "2",
        "--hidden",
        "4",
        "--latent",
        "2",
        "--tolerance",
        "1e-300",
    ]);
    assert_code(&out, 3);
}

#[test]
fn unknown_flags_are_usage_errors() {
    let out = run(&["train", "--definitely-not-a-flag"]);
    assert_code(&out, 1);
    let out = run(&["gen", "/tmp/nowhere", "--utts", "not-a-number"]);
    assert_code(&out, 1);
}

//! End-to-end training-loop behavior: convergence on the synthetic task,
//! byte-level determinism, exact resume, and divergence handling.

use std::path::Path;

use cyclevae::features::{compute_stats, gen_synthetic_corpus, write_features, SynthesisSpec};
use cyclevae::net::NetConfig;
use cyclevae::trainer::{train, TrainConfig, TrainError, TrainMode, TrainingCheckpoint};

fn write_corpus(dir: &Path, seed: u64, utts: usize, frames: usize) {
    let corpus = gen_synthetic_corpus(&SynthesisSpec {
        seed,
        utterances_per_speaker: utts,
        frames_per_utterance: frames,
    })
    .unwrap();
    let corpus_dir = dir.join("corpus");
    std::fs::create_dir_all(&corpus_dir).unwrap();
    let mut counters = std::collections::BTreeMap::new();
    for utt in &corpus {
        let n = counters.entry(utt.speaker_id.clone()).or_insert(0usize);
        write_features(
            utt,
            &corpus_dir.join(format!("{}_{:03}.vcft", utt.speaker_id, n)),
        )
        .unwrap();
        *n += 1;
    }
    let stats = compute_stats(&corpus).unwrap();
    std::fs::write(dir.join("stats.json"), stats.to_json().unwrap()).unwrap();
}

fn desk_config(dir: &Path, out: &str) -> TrainConfig {
    TrainConfig {
        mode: TrainMode::CycleVae,
        cycles: 1,
        learning_rate: 1e-3,
        batch_frames: 40,
        epochs: 6,
        seed: 17,
        net: NetConfig {
            hidden_units: 8,
            latent_dim: 4,
            ..NetConfig::default()
        },
        corpus_dir: dir.join("corpus"),
        stats_path: dir.join("stats.json"),
        out_dir: dir.join(out),
        resume_from: None,
    }
}

#[test]
fn training_reduces_the_loss() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 23, 3, 60);
    let config = desk_config(dir.path(), "run");
    let outcome = train(&config).unwrap();
    let lines: Vec<String> = std::fs::read_to_string(&outcome.metrics_path)
        .unwrap()
        .lines()
        .map(String::from)
        .collect();
    assert_eq!(lines.len(), config.epochs);
    let first: serde_json::Value = serde_json::from_str(&lines[0]).unwrap();
    let last: serde_json::Value = serde_json::from_str(&lines[lines.len() - 1]).unwrap();
    let (f, l) = (
        first["train_loss"].as_f64().unwrap(),
        last["train_loss"].as_f64().unwrap(),
    );
    assert!(l < f, "loss should fall: first {f}, last {l}");
    assert!(outcome.last_checkpoint.exists());
    assert!(outcome.best_checkpoint.exists());
}

#[test]
fn identical_runs_produce_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 29, 3, 50);
    let mut c1 = desk_config(dir.path(), "run1");
    c1.epochs = 3;
    let mut c2 = desk_config(dir.path(), "run2");
    c2.epochs = 3;
    let o1 = train(&c1).unwrap();
    let o2 = train(&c2).unwrap();
    assert_eq!(
        std::fs::read(&o1.last_checkpoint).unwrap(),
        std::fs::read(&o2.last_checkpoint).unwrap()
    );
    assert_eq!(
        std::fs::read(&o1.metrics_path).unwrap(),
        std::fs::read(&o2.metrics_path).unwrap()
    );
}

#[test]
fn resume_matches_uninterrupted_run_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 31, 3, 50);

    let mut full = desk_config(dir.path(), "full");
    full.epochs = 5;
    let full_outcome = train(&full).unwrap();

    let mut head = desk_config(dir.path(), "head");
    head.epochs = 3;
    let head_outcome = train(&head).unwrap();

    let mut tail = desk_config(dir.path(), "tail");
    tail.epochs = 5;
    tail.resume_from = Some(head_outcome.last_checkpoint.clone());
    let tail_outcome = train(&tail).unwrap();

    assert_eq!(
        std::fs::read(&full_outcome.last_checkpoint).unwrap(),
        std::fs::read(&tail_outcome.last_checkpoint).unwrap(),
        "resumed checkpoint differs from the uninterrupted run"
    );

    // the resumed metrics are exactly the tail of the full run's metrics
    let full_lines: Vec<String> = std::fs::read_to_string(&full_outcome.metrics_path)
        .unwrap()
        .lines()
        .map(String::from)
        .collect();
    let tail_lines: Vec<String> = std::fs::read_to_string(&tail_outcome.metrics_path)
        .unwrap()
        .lines()
        .map(String::from)
        .collect();
    assert_eq!(tail_lines, full_lines[3..].to_vec());

    // the saved checkpoint reloads into the same state it came from
    let ckpt = TrainingCheckpoint::load(&full_outcome.last_checkpoint).unwrap();
    assert_eq!(ckpt.epoch, 5);
    assert_eq!(ckpt.seed, 17);
}

#[test]
fn resume_rejects_mismatched_config() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 37, 2, 40);
    let mut head = desk_config(dir.path(), "head");
    head.epochs = 1;
    let head_outcome = train(&head).unwrap();

    let mut tail = desk_config(dir.path(), "tail");
    tail.epochs = 2;
    tail.seed = 99; // different seed
    tail.resume_from = Some(head_outcome.last_checkpoint);
    assert!(matches!(
        train(&tail),
        Err(TrainError::ResumeMismatch(_))
    ));
}

/// Conversion accuracy comes from training: the same evaluation on the
/// untrained initialization scores clearly worse than the trained model.
#[test]
fn untrained_model_shows_no_conversion_improvement() {
    use cyclevae::eval::eval_corpus;
    use cyclevae::features::{load_corpus, CorpusStats};
    use cyclevae::trainer::{init_model_params, TrainingCheckpoint};

    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 47, 3, 60);
    let mut config = desk_config(dir.path(), "run");
    config.epochs = 8;
    let outcome = train(&config).unwrap();
    let corpus = load_corpus(&config.corpus_dir).unwrap();
    let stats = CorpusStats::from_json(
        &std::fs::read_to_string(&config.stats_path).unwrap(),
    )
    .unwrap();

    let untrained =
        init_model_params(config.net.clone(), &stats.feat_mean, &stats.feat_std, config.seed)
            .unwrap();
    let before = eval_corpus(&untrained, &stats, &corpus, false).unwrap();
    let trained = TrainingCheckpoint::load(&outcome.last_checkpoint).unwrap();
    let after = eval_corpus(&trained.params, &trained.stats, &corpus, false).unwrap();

    let (b, a) = (
        before.aggregate.cv_mcd_db.unwrap(),
        after.aggregate.cv_mcd_db.unwrap(),
    );
    assert!(a < b, "training should improve conversion: before {b}, after {a}");
    // cosine stays a valid similarity either way
    for report in [&before, &after] {
        let cos = report.aggregate.latent_cosine.unwrap();
        assert!((-1.0..=1.0).contains(&cos), "cosine {cos} out of range");
    }
}

#[test]
fn runaway_learning_rate_reports_divergence() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 41, 2, 40);
    let mut config = desk_config(dir.path(), "boom");
    config.learning_rate = 1e18;
    config.epochs = 4;
    match train(&config) {
        Err(TrainError::Divergence { epoch }) => assert!(epoch >= 1),
        other => panic!("expected divergence, got {other:?}"),
    }
}

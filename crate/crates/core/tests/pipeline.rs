use unicr_core::corpus::{generate_synthetic, parse_corpus, write_corpus, SynthConfig};
use unicr_core::eval::{evaluate, pool_size_sweep, EvalSettings};
use unicr_core::trainer::train;
use unicr_core::{Checkpoint, ContextMode, TaskKind, TrainConfig};

fn small_config() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        batch_size: 8,
        dim: 16,
        ..TrainConfig::default()
    }
}

#[test]
fn corpus_survives_jsonl_round_trip() {
    let corpus = generate_synthetic(&SynthConfig::small(), 7).unwrap();
    let mut buf = Vec::new();
    write_corpus(&corpus, &mut buf).unwrap();
    let back = parse_corpus(std::str::from_utf8(&buf).unwrap()).unwrap();
    assert_eq!(back.dialogues(), corpus.dialogues());
    assert_eq!(back.examples(), corpus.examples());
    for task in TaskKind::ALL {
        assert_eq!(back.pool(task).candidates(), corpus.pool(task).candidates());
    }
}

#[test]
fn training_beats_chance_on_held_out_examples() {
    let corpus = generate_synthetic(&SynthConfig::small(), 1).unwrap();
    let cfg = TrainConfig { epochs: 6, ..small_config() };
    let (ck, losses) = train(&corpus, &cfg).unwrap();
    assert!(losses.last().unwrap() < losses.first().unwrap());

    let (_, test) = corpus.split_examples(cfg.holdout);
    let settings = EvalSettings {
        task: TaskKind::Response,
        pool_size: 16,
        seed: 0,
        mode: cfg.mode,
    };
    let report = evaluate(&corpus, &ck.model, &test, &settings).unwrap();
    assert!(report.r_at_1 > 3.0 / 16.0, "R@1 {}", report.r_at_1);
    assert!(report.r_at_1 <= report.r_at_5 && report.mrr >= report.r_at_1);
}

#[test]
fn checkpoint_reload_gives_identical_reports() {
    let corpus = generate_synthetic(&SynthConfig::small(), 3).unwrap();
    let (ck, _) = train(&corpus, &small_config()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();

    let (_, test) = corpus.split_examples(0.1);
    let settings = EvalSettings {
        task: TaskKind::Persona,
        pool_size: 8,
        seed: 5,
        mode: ContextMode::Adaptive { k: 3 },
    };
    let a = pool_size_sweep(&corpus, &ck.model, &test, &settings, &[16, 8, 4, 2]).unwrap();
    let b = pool_size_sweep(&corpus, &back.model, &test, &settings, &[16, 8, 4, 2]).unwrap();
    assert_eq!(a, b);
    assert!(a.windows(2).all(|w| w[0].r_at_1 <= w[1].r_at_1 + 1e-12));
}

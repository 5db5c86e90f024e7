//! Two-stage training, its variants, checkpoints, and decoding on a tiny benchmark.

use proto_nmt::data::{generate_benchmark, BenchmarkSizes, GenerationRules, ParallelCorpus, Vocabulary, EOS};
use proto_nmt::model::{load_checkpoint, ModelConfig};
use proto_nmt::pipeline::{
    beam_search, greedy, load_run, run_mode, train_stage1, DecodeConfig, TrainMode, TrainingConfig, TrainingData,
    METRICS_HEADER,
};

struct Fixture {
    src_vocab: Vocabulary,
    tgt_vocab: Vocabulary,
    train: ParallelCorpus,
    dev: ParallelCorpus,
    cg: ParallelCorpus,
}

impl Fixture {
    fn new() -> Self {
        let sizes = BenchmarkSizes { train: 240, dev: 24, test: 8, cg_compounds: 6, contexts_per_compound: 2 };
        let b = generate_benchmark(&GenerationRules::default(), &sizes, 3).unwrap();
        let src_vocab = Vocabulary::build(b.train.sources(), 1).unwrap();
        let tgt_vocab = Vocabulary::build(b.train.targets(), 1).unwrap();
        let enc = |c| ParallelCorpus::encode(c, &src_vocab, &tgt_vocab);
        let (train, dev, cg) = (enc(&b.train), enc(&b.dev), enc(&b.cg_test));
        Self { src_vocab, tgt_vocab, train, dev, cg }
    }

    fn data(&self) -> TrainingData<'_> {
        TrainingData { train: &self.train, dev: &self.dev, src_vocab: &self.src_vocab, tgt_vocab: &self.tgt_vocab }
    }

    fn model(&self) -> ModelConfig {
        ModelConfig {
            d_model: 16,
            n_heads: 2,
            n_encoder_layers: 1,
            n_decoder_layers: 1,
            d_ff: 24,
            src_vocab: self.src_vocab.len(),
            tgt_vocab: self.tgt_vocab.len(),
            num_prototypes: 2,
            ..Default::default()
        }
    }

    fn training(&self, mode: TrainMode, epochs: usize) -> TrainingConfig {
        TrainingConfig { mode, epochs, warmup_epochs: 2, batch_size: 16, warmup_steps: 20, ..Default::default() }
    }
}

#[test]
fn training_loss_decreases() {
    let f = Fixture::new();
    let out = run_mode(f.data(), &f.model(), &f.training(TrainMode::Baseline, 5)).unwrap();
    let first = out.metrics.first().unwrap();
    let last = out.metrics.last().unwrap();
    assert!(last.train_loss < first.train_loss, "{} -> {}", first.train_loss, last.train_loss);
    assert!(last.dev_loss < first.dev_loss);
}

#[test]
fn zero_warmup_epochs_is_an_error() {
    let f = Fixture::new();
    let mut cfg = f.training(TrainMode::OnePass, 4);
    cfg.warmup_epochs = 0;
    assert!(train_stage1(f.data(), &f.model(), &cfg).is_err());
    assert!(run_mode(f.data(), &f.model(), &cfg).is_err());
    cfg.warmup_epochs = 4;
    assert!(run_mode(f.data(), &f.model(), &cfg).is_err(), "warm-up must leave stage-2 epochs");
}

#[test]
fn attachment_preserves_dev_loss_and_frozen_table() {
    let f = Fixture::new();
    let out = run_mode(f.data(), &f.model(), &f.training(TrainMode::OnePass, 4)).unwrap();
    let (warm, attached) = (out.warmup_dev_loss.unwrap(), out.attached_dev_loss.unwrap());
    assert!((warm - attached).abs() < 1e-4, "stage-1 {warm} vs attached {attached}");
    let (before, after) = out.table_checksums.unwrap();
    assert_eq!(before, after);
    assert_eq!(out.table.as_ref().unwrap().checksum(), before);
    let phases: Vec<&str> = out.metrics.iter().map(|m| m.phase.as_str()).collect();
    assert_eq!(phases, ["stage1", "stage1", "stage2", "stage2"]);
    assert_eq!(out.metrics.iter().map(|m| m.epoch).collect::<Vec<_>>(), [1, 2, 3, 4]);
}

#[test]
fn random_prototypes_are_trained() {
    let f = Fixture::new();
    let out = run_mode(f.data(), &f.model(), &f.training(TrainMode::RandomProto, 4)).unwrap();
    let (before, after) = out.table_checksums.unwrap();
    assert_ne!(before, after);
    assert!(out.table.is_none());
}

#[test]
fn two_pass_doubles_optimizer_epochs() {
    let f = Fixture::new();
    let one = run_mode(f.data(), &f.model(), &f.training(TrainMode::OnePass, 3)).unwrap();
    let two = run_mode(f.data(), &f.model(), &f.training(TrainMode::TwoPass, 3)).unwrap();
    assert_eq!(one.optimizer_epochs(), 3);
    assert_eq!(two.optimizer_epochs(), 6);
    let (before, after) = two.table_checksums.unwrap();
    assert_eq!(before, after);
}

#[test]
fn run_directory_round_trip() {
    let f = Fixture::new();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = f.training(TrainMode::OnePass, 3);
    cfg.checkpoint_dir = Some(dir.path().to_path_buf());
    let out = run_mode(f.data(), &f.model(), &cfg).unwrap();
    for name in ["stage1_epoch2.ckpt", "final.ckpt", "prototypes.bin", "metrics.csv", "timing.csv"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().next().unwrap(), METRICS_HEADER);
    assert_eq!(metrics.lines().count(), 4);
    let (model, table) = load_run(dir.path(), &f.src_vocab).unwrap();
    assert_eq!(model, out.model);
    assert_eq!(table.unwrap().checksum(), out.table.unwrap().checksum());
    let (_, meta) = load_checkpoint(&dir.path().join("final.ckpt")).unwrap();
    assert_eq!(meta["mode"], "one-pass");

    let other = Vocabulary::build([["zz", "yy"]], 1).unwrap();
    let err = load_run(dir.path(), &other).unwrap_err();
    assert!(err.is_incompatibility());
}

#[test]
fn beam_of_one_without_penalty_is_greedy() {
    let f = Fixture::new();
    let out = run_mode(f.data(), &f.model(), &f.training(TrainMode::OnePass, 3)).unwrap();
    let srcs: Vec<Vec<u32>> = f.cg.pairs.iter().map(|p| p.0.clone()).collect();
    let cfg = DecodeConfig { beam: 1, alpha: 0.0, max_len: 20 };
    let beam = beam_search(&out.model, out.table.as_ref(), &srcs, &cfg).unwrap();
    let greedy = greedy(&out.model, out.table.as_ref(), &srcs, 20).unwrap();
    assert_eq!(beam, greedy);
    assert!(beam.iter().all(|h| h.last() == Some(&EOS) && h.len() <= 20));
    let wide = beam_search(&out.model, out.table.as_ref(), &srcs, &DecodeConfig::default()).unwrap();
    assert_eq!(wide.len(), srcs.len());
}

#[test]
fn eos_is_forced_at_the_length_limit() {
    let f = Fixture::new();
    let out = run_mode(f.data(), &f.model(), &f.training(TrainMode::Baseline, 1)).unwrap();
    let srcs: Vec<Vec<u32>> = f.cg.pairs.iter().map(|p| p.0.clone()).collect();
    let one = beam_search(&out.model, None, &srcs, &DecodeConfig { beam: 3, alpha: 0.6, max_len: 1 }).unwrap();
    assert!(one.iter().all(|h| h == &[EOS]));
    let three = beam_search(&out.model, None, &srcs, &DecodeConfig { beam: 3, alpha: 0.6, max_len: 3 }).unwrap();
    assert!(three.iter().all(|h| h.len() <= 3 && h.last() == Some(&EOS)));
}

#[test]
fn reruns_are_identical() {
    let f = Fixture::new();
    let a = run_mode(f.data(), &f.model(), &f.training(TrainMode::OnePass, 3)).unwrap();
    let b = run_mode(f.data(), &f.model(), &f.training(TrainMode::OnePass, 3)).unwrap();
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(a.model, b.model);
}

//! Two-stage training (warm-up, prototype extraction, continued training),
//! its ablation variants, and decoding.

mod decode;
mod train;

pub use decode::{beam_search, best_hypothesis, greedy, length_penalized, DecodeConfig, Hypothesis};
pub use train::{evaluate_loss, Trainer};

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use crate::data::{ParallelCorpus, Vocabulary};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::model::{save_checkpoint, CountScope, Model, ModelConfig, PrototypeMode};
use crate::prototypes::{build_prototype_table, extract_representations, ExclusionPolicy, PrototypeTable};
use crate::tensor::AdamConfig;

pub const METRICS_HEADER: &str = "epoch,phase,train_loss,dev_loss,seconds";

/// Deterministic sub-seed for a named stochastic stage.
pub fn derive_seed(seed: u64, stage: &str, index: u64) -> u64 {
    // splitmix64 over the seed, a FNV-1a hash of the stage name, and the index
    let mut tag = 0xcbf2_9ce4_8422_2325u64;
    for b in stage.bytes() {
        tag = (tag ^ b as u64).wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = seed ^ tag.rotate_left(17) ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrainMode {
    Baseline,
    OnePass,
    TwoPass,
    RandomProto,
}

impl TrainMode {
    pub fn prototype_mode(self) -> PrototypeMode {
        match self {
            TrainMode::Baseline => PrototypeMode::Off,
            TrainMode::OnePass | TrainMode::TwoPass => PrototypeMode::ClusteredFrozen,
            TrainMode::RandomProto => PrototypeMode::RandomTrainable,
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainMode::Baseline => "baseline",
            TrainMode::OnePass => "one-pass",
            TrainMode::TwoPass => "two-pass",
            TrainMode::RandomProto => "random-proto",
        })
    }
}

impl FromStr for TrainMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Self::Baseline),
            "one-pass" => Ok(Self::OnePass),
            "two-pass" => Ok(Self::TwoPass),
            "random-proto" => Ok(Self::RandomProto),
            _ => Err(Error::config(format!("unknown training mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub epochs: usize,
    /// Epochs of plain training before prototypes are attached.
    pub warmup_epochs: usize,
    /// Sentences per batch.
    pub batch_size: usize,
    pub seed: u64,
    pub mode: TrainMode,
    pub checkpoint_dir: Option<PathBuf>,
    pub adam: AdamConfig,
    /// Learning-rate warm-up in optimizer steps.
    pub warmup_steps: u64,
    pub label_smoothing: f64,
    /// Minimum training frequency for a token to receive prototypes.
    pub min_freq: u64,
    /// Write measured wall-clock time into the metrics log instead of 0.
    pub log_wall_clock: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            warmup_epochs: 5,
            batch_size: 32,
            seed: 1,
            mode: TrainMode::OnePass,
            checkpoint_dir: None,
            adam: AdamConfig::default(),
            warmup_steps: 400,
            label_smoothing: 0.1,
            min_freq: 2,
            log_wall_clock: false,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 || self.batch_size < 1 {
            return Err(Error::config("epochs and batch_size must be >= 1"));
        }
        if matches!(self.mode, TrainMode::OnePass | TrainMode::RandomProto)
            && (self.warmup_epochs < 1 || self.warmup_epochs >= self.epochs)
        {
            return Err(Error::config(format!(
                "warm-up epochs must satisfy 1 <= N < {} in {} mode, got {}",
                self.epochs, self.mode, self.warmup_epochs
            )));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::config("label smoothing must be in [0, 1)"));
        }
        if self.min_freq < 1 {
            return Err(Error::config("min_freq must be >= 1"));
        }
        Ok(())
    }
}

/// Training and validation data with their vocabularies.
#[derive(Debug, Clone, Copy)]
pub struct TrainingData<'a> {
    pub train: &'a ParallelCorpus,
    pub dev: &'a ParallelCorpus,
    pub src_vocab: &'a Vocabulary,
    pub tgt_vocab: &'a Vocabulary,
}

impl TrainingData<'_> {
    fn check(&self, config: &ModelConfig) -> Result<()> {
        if config.src_vocab != self.src_vocab.len() || config.tgt_vocab != self.tgt_vocab.len() {
            return Err(Error::incompatible(format!(
                "model vocabularies {}/{} do not match data vocabularies {}/{}",
                config.src_vocab,
                config.tgt_vocab,
                self.src_vocab.len(),
                self.tgt_vocab.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    /// Global optimizer epoch, counted across all phases of a run.
    pub epoch: usize,
    pub phase: String,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub seconds: f64,
}

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in rows {
        out.push_str(&format!("{},{},{:.6},{:.6},{:.3}\n", r.epoch, r.phase, r.train_loss, r.dev_loss, r.seconds));
    }
    out
}

/// Where a prototype table must come from to be used with a model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lineage {
    pub vocab_checksum: String,
    pub model_checksum: String,
    pub corpus_checksum: String,
}

impl Lineage {
    pub fn of(model: &Model<f32>, data: &TrainingData<'_>) -> Self {
        Self {
            vocab_checksum: data.src_vocab.checksum(),
            model_checksum: model.params.checksum(CountScope::Base),
            corpus_checksum: data.train.checksum(),
        }
    }

    pub fn check(&self, table: &PrototypeTable) -> Result<()> {
        for (what, have, want) in [
            ("vocabulary", &table.vocab_checksum, &self.vocab_checksum),
            ("model", &table.model_checksum, &self.model_checksum),
            ("corpus", &table.corpus_checksum, &self.corpus_checksum),
        ] {
            if have != want {
                return Err(Error::incompatible(format!(
                    "prototype table {what} checksum {have} does not match {want}"
                )));
            }
        }
        Ok(())
    }
}

/// Progress of one training run across its phases.
struct Run<'a> {
    data: TrainingData<'a>,
    config: &'a TrainingConfig,
    metrics: Vec<MetricRow>,
    timings: Vec<(String, f64)>,
    epoch: usize,
}

/// Model snapshot with the lowest dev loss seen so far.
struct Best {
    model: Option<Model<f32>>,
    dev_loss: f64,
    epoch: usize,
}

impl Best {
    fn new() -> Self {
        Self { model: None, dev_loss: f64::INFINITY, epoch: 0 }
    }
}

impl<'a> Run<'a> {
    fn new(data: TrainingData<'a>, config: &'a TrainingConfig) -> Self {
        Self { data, config, metrics: Vec::new(), timings: Vec::new(), epoch: 0 }
    }

    fn dev_loss(&self, model: &Model<f32>, table: Option<&PrototypeTable>) -> Result<f64> {
        evaluate_loss(model, self.data.dev, table, self.config.batch_size, self.config.label_smoothing)
    }

    /// Train for `epochs` epochs, logging each one and tracking the best dev loss.
    fn train(
        &mut self,
        trainer: &mut Trainer,
        table: Option<&PrototypeTable>,
        epochs: usize,
        phase: &str,
        mut best: Option<&mut Best>,
    ) -> Result<f64> {
        let start = Instant::now();
        let mut dev = f64::NAN;
        for _ in 0..epochs {
            let t0 = Instant::now();
            self.epoch += 1;
            let train_loss = trainer.train_epoch(self.data.train, table, self.epoch as u64)?;
            dev = self.dev_loss(&trainer.model, table)?;
            let seconds = if self.config.log_wall_clock { t0.elapsed().as_secs_f64() } else { 0.0 };
            self.metrics.push(MetricRow { epoch: self.epoch, phase: phase.into(), train_loss, dev_loss: dev, seconds });
            if let Some(b) = best.as_deref_mut() {
                if dev < b.dev_loss {
                    *b = Best { model: Some(trainer.model.clone()), dev_loss: dev, epoch: self.epoch };
                }
            }
        }
        self.timings.push((phase.to_string(), start.elapsed().as_secs_f64()));
        Ok(dev)
    }

    fn fresh_model(&self, model_config: &ModelConfig) -> Result<Model<f32>> {
        self.data.check(model_config)?;
        Model::new(model_config.clone(), derive_seed(self.config.seed, "init", 0))
    }

    fn cluster(&mut self, base: &Model<f32>) -> Result<PrototypeTable> {
        let start = Instant::now();
        let c = self.config;
        let table = cluster_prototypes(base, &self.data, base.config.num_prototypes, c.min_freq, c.batch_size, c.seed)?;
        self.timings.push(("prototypes".into(), start.elapsed().as_secs_f64()));
        Ok(table)
    }

    fn checkpoint(&self, name: &str, model: &Model<f32>, table: Option<&PrototypeTable>, epoch: usize) -> Result<()> {
        let Some(dir) = &self.config.checkpoint_dir else { return Ok(()) };
        let mut meta = vec![
            ("mode".to_string(), self.config.mode.to_string()),
            ("epoch".to_string(), epoch.to_string()),
            ("seed".to_string(), self.config.seed.to_string()),
            ("src_vocab_checksum".to_string(), self.data.src_vocab.checksum()),
            ("tgt_vocab_checksum".to_string(), self.data.tgt_vocab.checksum()),
        ];
        if let Some(t) = table {
            meta.push(("prototype_checksum".to_string(), t.checksum()));
        }
        save_checkpoint(&dir.join(name), model, &meta)
    }
}

/// Extract `base`'s training-set representations and cluster them into a
/// `k`-prototype table stamped with the lineage of `base` and `data`.
pub fn cluster_prototypes(
    base: &Model<f32>,
    data: &TrainingData<'_>,
    k: usize,
    min_freq: u64,
    batch_size: usize,
    seed: u64,
) -> Result<PrototypeTable> {
    let policy = ExclusionPolicy::new(data.src_vocab, min_freq)?;
    let store = extract_representations(base, data.train, &policy, batch_size)?;
    let mut table = build_prototype_table(&store, k, derive_seed(seed, "kmeans", 0))?;
    let lineage = Lineage::of(base, data);
    table.vocab_checksum = lineage.vocab_checksum;
    table.model_checksum = lineage.model_checksum;
    table.corpus_checksum = lineage.corpus_checksum;
    Ok(table)
}

/// Plain training of a prototype-free model for `config.warmup_epochs` epochs.
pub fn train_stage1(
    data: TrainingData<'_>,
    model_config: &ModelConfig,
    config: &TrainingConfig,
) -> Result<(Trainer, Vec<MetricRow>)> {
    if config.warmup_epochs < 1 {
        return Err(Error::config("stage 1 needs at least one warm-up epoch"));
    }
    if model_config.prototype_mode != PrototypeMode::Off {
        return Err(Error::config("stage 1 trains a model without prototype attention"));
    }
    let mut run = Run::new(data, config);
    let mut trainer = Trainer::new(run.fresh_model(model_config)?, config);
    run.train(&mut trainer, None, config.warmup_epochs, "stage1", None)?;
    Ok((trainer, run.metrics))
}

/// Extend a baseline model with zero-output prototype attention. Base
/// parameters are preserved bitwise.
pub fn attach_prototype_attention(
    base: &Model<f32>,
    mode: PrototypeMode,
    num_prototypes: usize,
    prototype_tokens: Vec<bool>,
    seed: u64,
) -> Result<Model<f32>> {
    base.attach_prototype_attention(mode, num_prototypes, prototype_tokens, derive_seed(seed, "attach", 0))
}

/// Continue training an extended model for `epochs` epochs. In clustered
/// modes the table is a frozen input and must descend from `lineage`.
/// Logged epochs count from 1 within this call.
pub fn train_stage2(
    trainer: &mut Trainer,
    data: TrainingData<'_>,
    table: Option<&PrototypeTable>,
    lineage: &Lineage,
    config: &TrainingConfig,
    epochs: usize,
) -> Result<Vec<MetricRow>> {
    check_table(&trainer.model, table, lineage)?;
    let mut run = Run::new(data, config);
    run.train(trainer, table, epochs, "stage2", None)?;
    Ok(run.metrics)
}

fn check_table(model: &Model<f32>, table: Option<&PrototypeTable>, lineage: &Lineage) -> Result<()> {
    match (model.config.prototype_mode, table) {
        (PrototypeMode::ClusteredFrozen, Some(t)) => lineage.check(t),
        (PrototypeMode::ClusteredFrozen, None) => Err(Error::config("clustered prototype mode needs a table")),
        (_, Some(_)) => Err(Error::config("a prototype table is only used in clustered mode")),
        (_, None) => Ok(()),
    }
}

/// Result of [`run_mode`].
#[derive(Debug, Clone)]
pub struct RunOutput {
    /// Best-dev-loss model of the final phase.
    pub model: Model<f32>,
    /// Frozen prototypes for clustered modes.
    pub table: Option<PrototypeTable>,
    pub metrics: Vec<MetricRow>,
    /// Wall-clock seconds per phase.
    pub timings: Vec<(String, f64)>,
    pub best_epoch: usize,
    /// Dev loss at the end of the warm-up phase (one-pass and random-proto).
    pub warmup_dev_loss: Option<f64>,
    /// Dev loss of the extended model before any stage-2 update.
    pub attached_dev_loss: Option<f64>,
    /// Prototype-table checksum before and after stage 2, when a table is trained or frozen.
    pub table_checksums: Option<(String, String)>,
}

impl RunOutput {
    pub fn optimizer_epochs(&self) -> usize {
        self.metrics.len()
    }
}

fn trainable_table_checksum(model: &Model<f32>) -> Option<String> {
    model.prototype_table_param().map(|i| {
        let (_, p) = model.params.by_index(i);
        crate::checksum::short_hash(&p.value.data().iter().flat_map(|x| x.to_le_bytes()).collect::<Vec<u8>>())
    })
}

/// Run one full experiment in `config.mode`.
///
/// With a checkpoint directory, writes `stage1_epochN.ckpt` (when a warm-up
/// phase exists), `final.ckpt`, `prototypes.bin` (clustered modes),
/// `metrics.csv`, and `timing.csv`.
pub fn run_mode(data: TrainingData<'_>, model_config: &ModelConfig, config: &TrainingConfig) -> Result<RunOutput> {
    config.validate()?;
    let base_config = ModelConfig { prototype_mode: PrototypeMode::Off, ..model_config.clone() };
    let proto_mode = config.mode.prototype_mode();
    let mut run = Run::new(data, config);
    let mut best = Best::new();
    let mut out_table = None;
    let (mut warmup_dev_loss, mut attached_dev_loss, mut table_checksums) = (None, None, None);
    let policy = ExclusionPolicy::new(data.src_vocab, config.min_freq)?;

    match config.mode {
        TrainMode::Baseline => {
            let mut trainer = Trainer::new(run.fresh_model(&base_config)?, config);
            run.train(&mut trainer, None, config.epochs, "baseline", Some(&mut best))?;
        }
        TrainMode::OnePass | TrainMode::RandomProto => {
            let n = config.warmup_epochs;
            let mut trainer = Trainer::new(run.fresh_model(&base_config)?, config);
            warmup_dev_loss = Some(run.train(&mut trainer, None, n, "stage1", None)?);
            run.checkpoint(&format!("stage1_epoch{n}.ckpt"), &trainer.model, None, n)?;
            let table = if config.mode == TrainMode::OnePass { Some(run.cluster(&trainer.model)?) } else { None };
            let lineage = Lineage::of(&trainer.model, &data);
            let extended = attach_prototype_attention(
                &trainer.model,
                proto_mode,
                model_config.num_prototypes,
                policy.included_mask(),
                config.seed,
            )?;
            check_table(&extended, table.as_ref(), &lineage)?;
            attached_dev_loss = Some(run.dev_loss(&extended, table.as_ref())?);
            let before = table.as_ref().map(PrototypeTable::checksum).or_else(|| trainable_table_checksum(&extended));
            let mut trainer = trainer.extend(extended);
            run.train(&mut trainer, table.as_ref(), config.epochs - n, "stage2", Some(&mut best))?;
            let after =
                table.as_ref().map(PrototypeTable::checksum).or_else(|| trainable_table_checksum(&trainer.model));
            table_checksums = before.zip(after);
            out_table = table;
        }
        TrainMode::TwoPass => {
            let mut trainer = Trainer::new(run.fresh_model(&base_config)?, config);
            let mut base_best = Best::new();
            run.train(&mut trainer, None, config.epochs, "base", Some(&mut base_best))?;
            let converged = base_best.model.take().expect("at least one epoch");
            run.checkpoint("base.ckpt", &converged, None, base_best.epoch)?;
            let table = run.cluster(&converged)?;
            Lineage::of(&converged, &data).check(&table)?;
            let fresh = Model::new(
                ModelConfig { prototype_mode: proto_mode, ..model_config.clone() },
                derive_seed(config.seed, "init", 1),
            )?
            .with_prototype_tokens(policy.included_mask())?;
            let before = table.checksum();
            let mut trainer = Trainer::new(fresh, config);
            run.train(&mut trainer, Some(&table), config.epochs, "proto", Some(&mut best))?;
            table_checksums = Some((before, table.checksum()));
            out_table = Some(table);
        }
    }

    let model = best.model.take().expect("at least one epoch in the final phase");
    run.checkpoint("final.ckpt", &model, out_table.as_ref(), best.epoch)?;
    if let Some(dir) = &config.checkpoint_dir {
        if let Some(t) = &out_table {
            t.save(&dir.join("prototypes.bin"))?;
        }
        write_atomic(&dir.join("metrics.csv"), metrics_csv(&run.metrics).as_bytes())?;
        let mut timing = String::from("phase,seconds\n");
        for (phase, s) in &run.timings {
            timing.push_str(&format!("{phase},{s:.3}\n"));
        }
        write_atomic(&dir.join("timing.csv"), timing.as_bytes())?;
    }
    Ok(RunOutput {
        model,
        table: out_table,
        metrics: run.metrics,
        timings: run.timings,
        best_epoch: best.epoch,
        warmup_dev_loss,
        attached_dev_loss,
        table_checksums,
    })
}

/// Load a run directory's final model and, for clustered modes, its table.
pub fn load_run(dir: &Path, src_vocab: &Vocabulary) -> Result<(Model<f32>, Option<PrototypeTable>)> {
    let (model, meta) = crate::model::load_checkpoint(&dir.join("final.ckpt"))?;
    if meta.get("src_vocab_checksum").map(String::as_str) != Some(src_vocab.checksum().as_str()) {
        return Err(Error::incompatible("checkpoint was trained with a different source vocabulary"));
    }
    let table = if model.config.prototype_mode == PrototypeMode::ClusteredFrozen {
        let path = dir.join("prototypes.bin");
        if !path.exists() {
            return Err(Error::Io(std::io::Error::new(std::io::ErrorKind::NotFound, format!("{}", path.display()))));
        }
        let t = PrototypeTable::load(&path, &src_vocab.checksum(), model.config.d_model)?;
        if meta.get("prototype_checksum") != Some(&t.checksum()) {
            return Err(Error::incompatible("prototype table does not belong to this checkpoint"));
        }
        Some(t)
    } else {
        None
    };
    Ok((model, table))
}

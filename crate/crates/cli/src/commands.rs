use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use proto_nmt::data::{generate_benchmark, CompoundDictionary, ParallelCorpus, Split, TextCorpus, Vocabulary};
use proto_nmt::eval::{bleu_with, cter, write_reports, EvalReport};
use proto_nmt::io::write_atomic;
use proto_nmt::model::load_checkpoint;
use proto_nmt::pipeline::{beam_search, cluster_prototypes, load_run, run_mode, TrainMode, TrainingData};

use crate::config::RunConfig;

pub const SRC_VOCAB: &str = "src_vocab.txt";
pub const TGT_VOCAB: &str = "tgt_vocab.txt";
pub const COMPOUNDS: &str = "compounds.tsv";
pub const ABLATION_FILE: &str = "ablation_k.csv";
pub const RUN_SUMMARY: &str = "run_summary.kv";

/// Hypothesis file name for `split`.
pub fn hypothesis_file(split: Split) -> String {
    format!("hyp_{}", split.file_name().replace(".tsv", ".txt"))
}

fn echo_config(dir: &Path, command: &str, config: &RunConfig) -> Result<()> {
    let text = format!("command={command}\n{}", config.to_kv());
    Ok(write_atomic(&dir.join("resolved.kv"), text.as_bytes())?)
}

/// Dataset directory contents needed by the training and evaluation commands.
struct Dataset {
    src_vocab: Vocabulary,
    tgt_vocab: Vocabulary,
    dir: PathBuf,
}

impl Dataset {
    fn open(dir: &Path) -> Result<Self> {
        let load = |name: &str| {
            Vocabulary::load(&dir.join(name))
                .with_context(|| format!("loading {} (run gen-data first)", dir.join(name).display()))
        };
        Ok(Self { src_vocab: load(SRC_VOCAB)?, tgt_vocab: load(TGT_VOCAB)?, dir: dir.to_path_buf() })
    }

    fn text(&self, split: Split) -> Result<TextCorpus> {
        let path = self.dir.join(split.file_name());
        TextCorpus::load(split, &path).with_context(|| format!("loading {}", path.display()))
    }

    fn encoded(&self, split: Split) -> Result<ParallelCorpus> {
        Ok(ParallelCorpus::encode(&self.text(split)?, &self.src_vocab, &self.tgt_vocab))
    }

    fn dictionary(&self) -> Result<CompoundDictionary> {
        let path = self.dir.join(COMPOUNDS);
        CompoundDictionary::load(&path).with_context(|| format!("loading {}", path.display()))
    }
}

pub fn gen_data(config: &RunConfig) -> Result<()> {
    let dir = config.data_dir();
    let seed = config.seed()?;
    let rules = config.rules()?;
    let bench = generate_benchmark(&rules, &config.sizes()?, seed)?;
    bench.write(&dir, &rules, seed)?;
    let min_freq = config.get("vocab_min_freq")?;
    Vocabulary::build(bench.train.sources(), min_freq)?.save(&dir.join(SRC_VOCAB))?;
    Vocabulary::build(bench.train.targets(), min_freq)?.save(&dir.join(TGT_VOCAB))?;
    echo_config(&dir, "gen-data", config)?;
    println!(
        "wrote {} train / {} dev / {} test / {} cg-test pairs to {}",
        bench.train.len(),
        bench.dev.len(),
        bench.test.len(),
        bench.cg_test.len(),
        dir.display()
    );
    Ok(())
}

fn train_into(config: &RunConfig, data: &Dataset, run_dir: &Path) -> Result<()> {
    let train = data.encoded(Split::Train)?;
    let dev = data.encoded(Split::Dev)?;
    let model_config = config.model(data.src_vocab.len(), data.tgt_vocab.len())?;
    let training = config.training(Some(run_dir.to_path_buf()))?;
    fs::create_dir_all(run_dir)?;
    echo_config(run_dir, "train", config)?;
    let td = TrainingData { train: &train, dev: &dev, src_vocab: &data.src_vocab, tgt_vocab: &data.tgt_vocab };
    let out = run_mode(td, &model_config, &training)?;
    let mut summary =
        format!("mode={}\noptimizer_epochs={}\nbest_epoch={}\n", training.mode, out.optimizer_epochs(), out.best_epoch);
    if let Some((before, after)) = &out.table_checksums {
        let _ = write!(summary, "prototype_checksum_before={before}\nprototype_checksum_after={after}\n");
    }
    write_atomic(&run_dir.join(RUN_SUMMARY), summary.as_bytes())?;
    println!(
        "{}: {} optimizer epochs, best dev loss at epoch {}, run directory {}",
        training.mode,
        out.optimizer_epochs(),
        out.best_epoch,
        run_dir.display()
    );
    Ok(())
}

pub fn train(config: &RunConfig) -> Result<()> {
    train_into(config, &Dataset::open(&config.data_dir())?, &config.run_dir())
}

pub fn extract_protos(config: &RunConfig) -> Result<()> {
    let data = Dataset::open(&config.data_dir())?;
    let ckpt = match config.raw("checkpoint") {
        "" => config.run_dir().join("final.ckpt"),
        p => PathBuf::from(p),
    };
    let (model, meta) = load_checkpoint(&ckpt)?;
    if meta.get("src_vocab_checksum") != Some(&data.src_vocab.checksum()) {
        return Err(
            proto_nmt::Error::Incompatible("checkpoint was trained with a different source vocabulary".into()).into()
        );
    }
    let train = data.encoded(Split::Train)?;
    let dev = data.encoded(Split::Dev)?;
    let td = TrainingData { train: &train, dev: &dev, src_vocab: &data.src_vocab, tgt_vocab: &data.tgt_vocab };
    let k = config.get("num_prototypes")?;
    let table = cluster_prototypes(&model, &td, k, config.get("min_freq")?, config.get("batch_size")?, config.seed()?)?;
    let out = config.out_dir();
    fs::create_dir_all(&out)?;
    echo_config(&out, "extract-protos", config)?;
    table.save(&out.join("prototypes.bin"))?;
    println!("{} tokens x {k} prototypes, checksum {}", table.len(), table.checksum());
    Ok(())
}

fn decode_into(config: &RunConfig, data: &Dataset, run_dir: &Path, out_dir: &Path, split: Split) -> Result<PathBuf> {
    let (model, table) = load_run(run_dir, &data.src_vocab)?;
    let srcs: Vec<Vec<u32>> = data.encoded(split)?.pairs.into_iter().map(|(s, _)| s).collect();
    let hyps = beam_search(&model, table.as_ref(), &srcs, &config.decode()?)?;
    let mut text = String::new();
    for h in &hyps {
        text.push_str(&data.tgt_vocab.decode(h).join(" "));
        text.push('\n');
    }
    let path = out_dir.join(hypothesis_file(split));
    write_atomic(&path, text.as_bytes())?;
    Ok(path)
}

pub fn decode(config: &RunConfig) -> Result<()> {
    let data = Dataset::open(&config.data_dir())?;
    let out = config.out_dir();
    fs::create_dir_all(&out)?;
    echo_config(&out, "decode", config)?;
    let path = decode_into(config, &data, &config.run_dir(), &out, config.get("split")?)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn read_hypotheses(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {} (run decode first)", path.display()))?;
    Ok(text.lines().map(|l| l.split_whitespace().map(str::to_string).collect()).collect())
}

fn evaluate_split(config: &RunConfig, data: &Dataset, dir: &Path, model: &str, split: Split) -> Result<EvalReport> {
    let hyps = read_hypotheses(&dir.join(hypothesis_file(split)))?;
    let refs = data.text(split)?;
    if hyps.len() != refs.len() {
        return Err(proto_nmt::Error::Incompatible(format!(
            "{} hypotheses for {} {split} sentences",
            hyps.len(),
            refs.len()
        ))
        .into());
    }
    let references: Vec<Vec<String>> = refs.pairs.iter().map(|(_, t)| t.clone()).collect();
    let bleu = bleu_with(&hyps, &references, config.get("bleu_smoothing")?)?;
    let cter = if split == Split::CgTest { Some(cter(&hyps, &refs, &data.dictionary()?)?) } else { None };
    Ok(EvalReport { model: model.to_string(), split: split.to_string(), sentences: hyps.len(), bleu, cter })
}

/// `model_name`, else the mode recorded by `train` in the run directory, else the configured mode.
fn model_name(config: &RunConfig) -> String {
    match config.raw("model_name") {
        "" => fs::read_to_string(config.run_dir().join(RUN_SUMMARY))
            .ok()
            .and_then(|text| text.lines().find_map(|l| l.strip_prefix("mode=").map(str::to_string)))
            .unwrap_or_else(|| config.raw("mode").to_string()),
        name => name.to_string(),
    }
}

pub fn evaluate(config: &RunConfig) -> Result<()> {
    let data = Dataset::open(&config.data_dir())?;
    let out = config.out_dir();
    let splits: Vec<Split> = config.list("eval_splits")?;
    if splits.is_empty() {
        bail!("eval_splits is empty");
    }
    let name = model_name(config);
    let reports: Vec<EvalReport> =
        splits.iter().map(|&s| evaluate_split(config, &data, &out, &name, s)).collect::<Result<_>>()?;
    echo_config(&out, "evaluate", config)?;
    write_reports(&out, &reports)?;
    for r in &reports {
        match &r.cter {
            Some(c) => println!(
                "{} {}: BLEU {:.2}, CTER {:.2}%/{:.2}%",
                r.model,
                r.split,
                r.bleu,
                100.0 * c.instance_cter(),
                100.0 * c.aggregate_cter()
            ),
            None => println!("{} {}: BLEU {:.2}", r.model, r.split, r.bleu),
        }
    }
    Ok(())
}

pub fn ablate_k(config: &RunConfig) -> Result<()> {
    let data = Dataset::open(&config.data_dir())?;
    let ks: Vec<usize> = config.list("k_list")?;
    if ks.is_empty() {
        bail!("k_list is empty");
    }
    let proto_mode = config.mode()?;
    if proto_mode == TrainMode::Baseline {
        bail!("ablate-k needs a prototype mode; k=0 already runs the baseline");
    }
    let out = config.out_dir();
    fs::create_dir_all(&out)?;
    echo_config(&out, "ablate-k", config)?;
    let mut csv = String::from("k,mode,instance_cter,aggregate_cter,bleu\n");
    for k in ks {
        let mut run = config.clone();
        let mode = if k == 0 { TrainMode::Baseline } else { proto_mode };
        run.set("mode", &mode.to_string())?;
        if k > 0 {
            run.set("num_prototypes", &k.to_string())?;
        }
        let dir = out.join(format!("k{k}"));
        run.set("run_dir", &dir.to_string_lossy())?;
        run.set("out_dir", "")?;
        train_into(&run, &data, &dir)?;
        decode_into(&run, &data, &dir, &dir, Split::CgTest)?;
        let report = evaluate_split(&run, &data, &dir, &format!("k{k}"), Split::CgTest)?;
        write_reports(&dir, std::slice::from_ref(&report))?;
        let c = report.cter.as_ref().expect("cg-test has compounds");
        let _ = writeln!(csv, "{k},{mode},{:.6},{:.6},{:.4}", c.instance_cter(), c.aggregate_cter(), report.bleu);
        println!("k={k}: CTER {:.2}%/{:.2}%", 100.0 * c.instance_cter(), 100.0 * c.aggregate_cter());
    }
    write_atomic(&out.join(ABLATION_FILE), csv.as_bytes())?;
    Ok(())
}

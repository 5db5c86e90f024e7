use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{derive_seed, TrainingConfig};
use crate::data::{batchify, ParallelCorpus};
use crate::error::Result;
use crate::model::{Model, Phase};
use crate::prototypes::PrototypeTable;
use crate::tensor::{Adam, AdamState, Graph, LrSchedule};

/// Model plus optimizer state. The step counter survives attachment so the
/// learning-rate schedule continues across stages.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model<f32>,
    adam: Adam,
    state: AdamState<f32>,
    schedule: LrSchedule,
    smoothing: f64,
    batch_size: usize,
    seed: u64,
}

impl Trainer {
    pub fn new(model: Model<f32>, config: &TrainingConfig) -> Self {
        let state = AdamState::new(model.params.iter().map(|(_, p)| p.value.numel()));
        Self {
            model,
            adam: Adam::new(config.adam),
            state,
            schedule: LrSchedule::new(config.adam.lr, config.warmup_steps),
            smoothing: config.label_smoothing,
            batch_size: config.batch_size,
            seed: config.seed,
        }
    }

    /// Optimizer steps taken so far.
    pub fn step(&self) -> u64 {
        self.state.t
    }

    /// Swap in an extended model. Moments of parameters present in both
    /// models carry over; new parameters start from zero moments.
    pub fn extend(self, model: Model<f32>) -> Self {
        let mut state = AdamState::new(model.params.iter().map(|(_, p)| p.value.numel()));
        state.t = self.state.t;
        for (i, (name, _)) in model.params.iter().enumerate() {
            if let Some(j) = self.model.params.index_of(name) {
                state.m[i].clone_from(&self.state.m[j]);
                state.v[i].clone_from(&self.state.v[j]);
            }
        }
        Self { model, state, ..self }
    }

    /// One pass over `corpus` in a seed- and epoch-determined order.
    /// Returns the token-weighted mean training loss.
    pub fn train_epoch(&mut self, corpus: &ParallelCorpus, table: Option<&PrototypeTable>, epoch: u64) -> Result<f64> {
        let batches = batchify(corpus, self.batch_size, Some(derive_seed(self.seed, "shuffle", epoch)))?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, "dropout", epoch));
        let (mut total, mut tokens) = (0.0, 0usize);
        for batch in &batches {
            let mut g = Graph::new();
            let vars = self.model.bind(&mut g, true);
            let loss =
                self.model.batch_loss(&mut g, &vars, batch, table, &mut Phase::Train(&mut rng), self.smoothing)?;
            let n = batch.n_target_tokens();
            total += g.value(loss).data()[0] as f64 * n as f64;
            tokens += n;
            g.backward(loss)?;
            let zeros: Vec<Vec<f32>> = vars
                .iter()
                .map(|&v| if g.grad(v).is_some() { Vec::new() } else { vec![0.0; g.value(v).numel()] })
                .collect();
            let grads: Vec<Option<&[f32]>> =
                vars.iter().zip(&zeros).map(|(&v, z)| Some(g.grad(v).unwrap_or(z.as_slice()))).collect();
            let lr = self.schedule.lr(self.state.t + 1);
            let names: Vec<String> = self.model.params.iter().map(|(n, _)| n.to_string()).collect();
            let names: Vec<&str> = names.iter().map(String::as_str).collect();
            let mut slices: Vec<&mut [f32]> = self.model.params.iter_mut().map(|(_, p)| p.value.data_mut()).collect();
            self.adam.step(&mut self.state, &mut slices, &grads, &names, lr)?;
        }
        Ok(if tokens > 0 { total / tokens as f64 } else { 0.0 })
    }
}

/// Token-weighted mean loss of `model` on `corpus` with dropout disabled.
pub fn evaluate_loss(
    model: &Model<f32>,
    corpus: &ParallelCorpus,
    table: Option<&PrototypeTable>,
    batch_size: usize,
    smoothing: f64,
) -> Result<f64> {
    use rayon::prelude::*;
    let batches = batchify(corpus, batch_size, None)?;
    let parts: Vec<(f64, usize)> = batches
        .par_iter()
        .map(|b| {
            let mut g = Graph::new();
            let vars = model.bind(&mut g, false);
            let loss = model.batch_loss(&mut g, &vars, b, table, &mut Phase::Eval, smoothing)?;
            let n = b.n_target_tokens();
            Ok((g.value(loss).data()[0] as f64 * n as f64, n))
        })
        .collect::<Result<_>>()?;
    let (total, tokens) = parts.iter().fold((0.0, 0), |(t, n), &(a, b)| (t + a, n + b));
    Ok(if tokens > 0 { total / tokens as f64 } else { 0.0 })
}

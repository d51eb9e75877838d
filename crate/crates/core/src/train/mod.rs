//! Optimizer and training loop for the machine-ID classifier.

pub mod optim;

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, Tape};
use crate::checkpoint::{self, Checkpoint, CheckpointMeta};
use crate::error::{Error, Result};
use crate::network::{ClipInput, EstmModel};
use crate::real::{Precision, Real};
use crate::tensor::Tensor;

pub use optim::{adamw_step, clip_grad_norm, AdamW};

pub const METRICS_HEADER: &str = "epoch,loss,accuracy,seconds";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm limit; 0 turns clipping off.
    pub grad_clip: f64,
    pub seed: u64,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            epochs: 200,
            batch_size: 128,
            weight_decay: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: 5.0,
            seed: 0,
            precision: Precision::F32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if !(self.grad_clip >= 0.0) {
            return bad(format!("grad_clip must be non-negative, got {}", self.grad_clip));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> AdamW {
        AdamW {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }
}

/// Seeded generator for parameter initialization.
pub fn init_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Shuffling generator for `epoch`, independent of every other epoch so
/// a resumed run sees the same order as an uninterrupted one.
pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

/// Inputs with their class indices.
#[derive(Clone, Debug)]
pub struct TrainSet<T: Real> {
    pub inputs: Vec<ClipInput<T>>,
    pub labels: Vec<usize>,
}

impl<T: Real> TrainSet<T> {
    /// Requires every one of `classes` (at least 2) to have a clip.
    pub fn new(inputs: Vec<ClipInput<T>>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::Config("training set is empty".into()));
        }
        if inputs.len() != labels.len() {
            return Err(Error::Shape(format!("{} inputs but {} labels", inputs.len(), labels.len())));
        }
        if classes < 2 {
            return Err(Error::Config(format!("training needs at least 2 classes, got {classes}")));
        }
        let mut seen = vec![false; classes];
        for &l in &labels {
            *seen
                .get_mut(l)
                .ok_or_else(|| Error::Config(format!("label {l} out of range for {classes} classes")))? = true;
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(Error::Config(format!("class {missing} has no training clips")));
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    /// Mean per-clip loss over the epoch.
    pub loss: f64,
    /// Fraction of clips whose highest cosine hit the label.
    pub accuracy: f64,
    pub seconds: f64,
}

impl EpochStats {
    pub fn csv_row(&self) -> String {
        format!("{},{},{},{:.3}", self.epoch, self.loss, self.accuracy, self.seconds)
    }
}

/// Where a run writes its artifacts.
#[derive(Clone, Debug, Default)]
pub struct RunOutputs {
    pub metrics_csv: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Configuration echoed into every checkpoint.
    pub config: serde_json::Value,
}

struct SampleResult<T> {
    loss: f64,
    correct: bool,
    grads: Vec<(ParamId, Tensor<T>)>,
}

pub struct Trainer<'m, T: Real> {
    model: &'m EstmModel,
    store: ParamStore<T>,
    cfg: TrainConfig,
    epoch: usize,
    best_loss: f64,
}

impl<'m, T: Real> Trainer<'m, T> {
    pub fn new(model: &'m EstmModel, store: ParamStore<T>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            model,
            store,
            cfg,
            epoch: 0,
            best_loss: f64::INFINITY,
        })
    }

    /// Continues from a checkpoint's parameters, moments, step and epoch.
    pub fn resume(
        model: &'m EstmModel,
        mut store: ParamStore<T>,
        cfg: TrainConfig,
        ck: &Checkpoint,
        path: &Path,
    ) -> Result<Self> {
        ck.restore(&mut store, path)?;
        let mut t = Self::new(model, store, cfg)?;
        t.epoch = ck.meta.epoch;
        t.best_loss = ck.meta.loss;
        Ok(t)
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn into_store(self) -> ParamStore<T> {
        self.store
    }

    /// Completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best_loss
    }

    fn sample(&self, data: &TrainSet<T>, i: usize) -> Result<SampleResult<T>> {
        let mut tape = Tape::new();
        let label = data.labels[i];
        let (loss, fwd) = self.model.loss(&mut tape, &self.store, &data.inputs[i], label)?;
        let cos = tape.value(fwd.cos).data();
        let best = (0..cos.len()).max_by(|&a, &b| cos[a].as_f64().total_cmp(&cos[b].as_f64())).unwrap_or(0);
        let grads = tape.backward(loss);
        Ok(SampleResult {
            loss: tape.value(loss).data()[0].as_f64(),
            correct: best == label,
            grads: grads.params().map(|(id, g)| (id, g.clone())).collect(),
        })
    }

    /// Averages per-clip gradients of one batch and applies a clipped
    /// AdamW step. Clips run in parallel; the reduction is sequential in
    /// batch order so the result does not depend on scheduling.
    fn step(&mut self, data: &TrainSet<T>, batch: &[usize]) -> Result<(f64, usize)> {
        let results: Vec<Result<SampleResult<T>>> = batch.par_iter().map(|&i| self.sample(data, i)).collect();
        self.store.zero_grads();
        let (mut loss_sum, mut correct) = (0.0, 0);
        for r in results {
            let r = r?;
            loss_sum += r.loss;
            correct += r.correct as usize;
            for (id, g) in &r.grads {
                self.store.grad_mut(*id).add_assign(g);
            }
        }
        if !loss_sum.is_finite() {
            return Err(Error::Training(format!("non-finite loss at step {}", self.store.step() + 1)));
        }
        let inv = T::one() / T::of_usize(batch.len());
        let ids: Vec<ParamId> = self.store.ids().collect();
        for id in ids {
            self.store.grad_mut(id).scale_in_place(inv);
        }
        self.store.check_grads_finite()?;
        clip_grad_norm(&mut self.store, self.cfg.grad_clip);
        adamw_step(&mut self.store, &self.cfg.optimizer());
        self.store.check_values_finite()?;
        Ok((loss_sum, correct))
    }

    pub fn run_epoch(&mut self, data: &TrainSet<T>) -> Result<EpochStats> {
        let start = Instant::now();
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut epoch_rng(self.cfg.seed, self.epoch));
        let (mut loss_sum, mut correct) = (0.0, 0);
        for batch in order.chunks(self.cfg.batch_size) {
            let (l, c) = self.step(data, batch)?;
            loss_sum += l;
            correct += c;
        }
        self.epoch += 1;
        Ok(EpochStats {
            epoch: self.epoch,
            loss: loss_sum / data.len() as f64,
            accuracy: correct as f64 / data.len() as f64,
            seconds: start.elapsed().as_secs_f64(),
        })
    }

    pub fn meta(&self, loss: f64, config: &serde_json::Value) -> CheckpointMeta {
        CheckpointMeta {
            config: config.clone(),
            epoch: self.epoch,
            step: self.store.step(),
            loss,
            precision: T::PRECISION,
        }
    }

    /// Trains until `cfg.epochs` epochs are complete. Appends one CSV row
    /// per epoch and rewrites the checkpoint whenever the epoch loss is
    /// the best so far.
    pub fn fit(&mut self, data: &TrainSet<T>, out: &RunOutputs) -> Result<Vec<EpochStats>> {
        let mut log = match &out.metrics_csv {
            Some(p) => Some(open_metrics(p, self.epoch == 0)?),
            None => None,
        };
        let mut history = Vec::new();
        while self.epoch < self.cfg.epochs {
            let stats = self.run_epoch(data)?;
            log::info!(
                "epoch {} loss {:.5} accuracy {:.3} ({:.1}s)",
                stats.epoch,
                stats.loss,
                stats.accuracy,
                stats.seconds
            );
            if let (Some(f), Some(p)) = (log.as_mut(), &out.metrics_csv) {
                writeln!(f, "{}", stats.csv_row()).map_err(|e| Error::io(p, e))?;
            }
            if stats.loss < self.best_loss {
                self.best_loss = stats.loss;
                if let Some(p) = &out.checkpoint {
                    checkpoint::save(p, &self.store, &self.meta(stats.loss, &out.config))?;
                }
            }
            history.push(stats);
        }
        Ok(history)
    }
}

fn open_metrics(path: &Path, fresh: bool) -> Result<File> {
    if fresh {
        let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
        writeln!(f, "{METRICS_HEADER}").map_err(|e| Error::io(path, e))?;
        Ok(f)
    } else {
        OpenOptions::new().append(true).open(path).map_err(|e| Error::io(path, e))
    }
}

use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{adam_step, augment, deep_supervision_loss, AdamConfig, AdamState, AugmentConfig, LrSchedule, Sample};
use crate::arch::{commit_running_stats, ForwardCtx, Model};
use crate::error::{Error, Result};
use crate::geodata::argmax_classes;
use crate::params::{save_checkpoint, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub adam: AdamConfig,
    pub augment: Option<AugmentConfig>,
    pub seed: u64,
    pub ignore: Option<u8>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 2,
            schedule: LrSchedule::default(),
            adam: AdamConfig::default(),
            augment: None,
            seed: 0,
            ignore: Some(crate::geodata::IGNORE_LABEL),
        }
    }
}

/// One line of the metric log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
}

impl EpochRecord {
    /// `epoch,lr,train_loss,val_loss,val_acc` with empty fields when absent.
    pub fn log_line(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{}",
            self.epoch,
            self.lr,
            self.train_loss,
            opt(self.val_loss),
            opt(self.val_acc)
        )
    }
}

/// Model, parameters and optimizer state of a training run.
pub struct Trainer {
    pub model: Model,
    pub store: ParamStore,
    pub adam: AdamState,
    pub config: TrainConfig,
    /// Index of the next epoch to run.
    pub epoch: usize,
    pub best_val: Option<f64>,
}

fn batch_tensor(parts: Vec<&Tensor<f32>>) -> Result<Tensor<f32>> {
    let s = parts[0].shape().to_vec();
    let mut data = Vec::with_capacity(parts.len() * parts[0].numel());
    for p in &parts {
        if p.shape() != s.as_slice() {
            return Err(Error::Contract(format!("batch mixes shapes {:?} and {:?}", s, p.shape())));
        }
        data.extend_from_slice(p.data());
    }
    Tensor::new([parts.len(), s[1], s[2], s[3]], data)
}

type Batch = (Tensor<f32>, Option<Tensor<f32>>, Vec<u8>);

/// Stack samples into `(optical, aux, labels)` batches.
pub(crate) fn collate(samples: &[Sample], want_aux: bool) -> Result<Batch> {
    let optical = batch_tensor(samples.iter().map(|s| &s.optical).collect())?;
    let aux = if want_aux {
        let parts = samples
            .iter()
            .map(|s| s.aux.as_ref().ok_or_else(|| Error::Contract("sample lacks auxiliary planes".into())))
            .collect::<Result<Vec<_>>>()?;
        Some(batch_tensor(parts)?)
    } else {
        None
    };
    let labels = samples.iter().flat_map(|s| s.labels.iter().copied()).collect();
    Ok((optical, aux, labels))
}

/// `[start, end)` of each batch over `n` samples. A trailing single sample
/// joins the previous batch: training-mode batch norm needs two values per
/// channel, and the stride-32 stage of a 32-pixel crop has one per sample.
fn batch_bounds(n: usize, batch_size: usize) -> Vec<(usize, usize)> {
    let bs = batch_size.max(1);
    let mut v: Vec<(usize, usize)> = (0..n).step_by(bs).map(|a| (a, (a + bs).min(n))).collect();
    if bs > 1 && v.len() > 1 && n % bs == 1 {
        let (_, end) = v.pop().expect("two batches");
        v.last_mut().expect("one batch").1 = end;
    }
    v
}

impl Trainer {
    pub fn new(model: Model, store: ParamStore, config: TrainConfig) -> Self {
        Self {
            model,
            store,
            adam: AdamState::default(),
            config,
            epoch: 0,
            best_val: None,
        }
    }

    fn epoch_rng(&self, epoch: usize) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.config.seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }

    pub fn iters_per_epoch(&self, n: usize) -> usize {
        batch_bounds(n, self.config.batch_size).len()
    }

    /// Forward and backward one batch, then take an optimizer step. Returns the loss.
    pub fn step(&mut self, batch: &[Sample], lr: f64) -> Result<f64> {
        let (optical, aux, labels) = collate(batch, self.model.tag().uses_aux())?;
        let mut ctx = ForwardCtx::training(&self.store);
        let o = ctx.input(optical);
        let a = aux.map(|a| ctx.input(a));
        let out = self.model.forward(&mut ctx, o, a)?;
        let loss = deep_supervision_loss(&mut ctx.graph, &out.logits, &labels, self.config.ignore)?;
        ctx.graph.backward(loss)?;
        let value = ctx.graph.value(loss).item() as f64;
        let grads = ctx.param_grads();
        let stats = ctx.running_stats().to_vec();
        drop(ctx);
        adam_step(&mut self.store, &mut self.adam, &grads, lr, &self.config.adam)?;
        commit_running_stats(&mut self.store, &stats)?;
        Ok(value)
    }

    /// One pass over `data` in a seeded order. Returns the mean batch loss and
    /// the learning rate of the first iteration.
    pub fn train_epoch(&mut self, data: &[Sample]) -> Result<(f64, f64)> {
        if data.is_empty() {
            return Err(Error::DegenerateInput("training set is empty".into()));
        }
        let epoch = self.epoch;
        let mut rng = self.epoch_rng(epoch);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        let schedule = LrSchedule {
            iters_per_epoch: self.iters_per_epoch(data.len()),
            ..self.config.schedule
        };
        let mut total = 0.0;
        let mut first_lr = 0.0;
        let chunks: Vec<&[usize]> = batch_bounds(order.len(), self.config.batch_size)
            .into_iter()
            .map(|(a, b)| &order[a..b])
            .collect();
        for (it, idx) in chunks.iter().enumerate() {
            let batch = idx
                .iter()
                .map(|&i| match &self.config.augment {
                    Some(cfg) => augment(&data[i], &mut rng, cfg),
                    None => Ok(data[i].clone()),
                })
                .collect::<Result<Vec<_>>>()?;
            let lr = schedule.lr(epoch, it);
            if it == 0 {
                first_lr = lr;
            }
            total += self.step(&batch, lr)?;
        }
        self.epoch += 1;
        Ok((total / chunks.len() as f64, first_lr))
    }

    /// Mean deep-supervision loss and pixel accuracy with running statistics.
    pub fn evaluate(&self, data: &[Sample]) -> Result<(f64, f64)> {
        if data.is_empty() {
            return Err(Error::DegenerateInput("validation set is empty".into()));
        }
        let mut loss = 0.0;
        let (mut hit, mut seen) = (0usize, 0usize);
        for chunk in data.chunks(self.config.batch_size.max(1)) {
            let (optical, aux, labels) = collate(chunk, self.model.tag().uses_aux())?;
            let mut ctx = ForwardCtx::inference(&self.store);
            let o = ctx.input(optical);
            let a = aux.map(|a| ctx.input(a));
            let out = self.model.forward(&mut ctx, o, a)?;
            let l = deep_supervision_loss(&mut ctx.graph, &out.logits, &labels, self.config.ignore)?;
            loss += ctx.graph.value(l).item() as f64 * chunk.len() as f64;
            let pred = argmax_classes(ctx.graph.value(out.prediction()))?;
            for (p, g) in pred.iter().zip(&labels) {
                if Some(*g) != self.config.ignore {
                    seen += 1;
                    hit += usize::from(p == g);
                }
            }
        }
        Ok((loss / data.len() as f64, hit as f64 / seen.max(1) as f64))
    }

    /// Train for `epochs` more epochs. With `out_dir`, append each record to
    /// `metrics.log` and write `last.afck` every epoch and `best.afck` whenever
    /// the validation loss (training loss without validation data) improves.
    /// `on_epoch` returning `false` stops early.
    pub fn run(
        &mut self,
        train: &[Sample],
        val: Option<&[Sample]>,
        epochs: usize,
        out_dir: Option<&Path>,
        mut on_epoch: impl FnMut(&EpochRecord) -> bool,
    ) -> Result<Vec<EpochRecord>> {
        let mut history = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            let epoch = self.epoch;
            let (train_loss, lr) = self.train_epoch(train)?;
            let (val_loss, val_acc) = match val {
                Some(v) => {
                    let (l, a) = self.evaluate(v)?;
                    (Some(l), Some(a))
                }
                None => (None, None),
            };
            let rec = EpochRecord {
                epoch,
                lr,
                train_loss,
                val_loss,
                val_acc,
            };
            let score = val_loss.unwrap_or(train_loss);
            let improved = self.best_val.is_none_or(|b| score < b);
            if improved {
                self.best_val = Some(score);
            }
            if let Some(dir) = out_dir {
                let log = dir.join("metrics.log");
                let mut f = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&log)
                    .map_err(|e| Error::io(&log, e))?;
                writeln!(f, "{}", rec.log_line()).map_err(|e| Error::io(&log, e))?;
                let records = self.checkpoint_records();
                save_checkpoint(&dir.join("last.afck"), &records)?;
                if improved {
                    save_checkpoint(&dir.join("best.afck"), &records)?;
                }
            }
            let go_on = on_epoch(&rec);
            history.push(rec);
            if !go_on {
                break;
            }
        }
        Ok(history)
    }

    /// Parameters plus `@`-prefixed metadata: variant, epoch, best score and Adam state.
    pub fn checkpoint_records(&self) -> Vec<(String, Tensor<f32>)> {
        let mut r = self.model.checkpoint_records(&self.store);
        r.push(("@epoch".into(), Tensor::scalar(self.epoch as f32)));
        r.push(("@adam.t".into(), Tensor::scalar(self.adam.t as f32)));
        if let Some(b) = self.best_val {
            r.push(("@best".into(), Tensor::scalar(b as f32)));
        }
        for (name, _, t) in self.store.iter() {
            if let (Some(m), Some(v)) = (self.adam.m.get(name), self.adam.v.get(name)) {
                let f = |x: &Vec<f64>| Tensor::new(t.shape().to_vec(), x.iter().map(|&v| v as f32).collect()).expect("moment shape");
                r.push((format!("@adam.m.{name}"), f(m)));
                r.push((format!("@adam.v.{name}"), f(v)));
            }
        }
        r
    }

    /// Continue a run from checkpoint records written by [`Trainer::checkpoint_records`].
    pub fn resume(model: Model, records: &[(String, Tensor<f32>)], config: TrainConfig) -> Result<Self> {
        let store = model.load_store(records)?;
        let mut t = Self::new(model, store, config);
        for (name, v) in records {
            match name.as_str() {
                "@epoch" => t.epoch = v.item() as usize,
                "@adam.t" => t.adam.t = v.item() as u64,
                "@best" => t.best_val = Some(v.item() as f64),
                n => {
                    let as_f64 = || v.data().iter().map(|&x| x as f64).collect();
                    if let Some(p) = n.strip_prefix("@adam.m.") {
                        t.adam.m.insert(p.to_owned(), as_f64());
                    } else if let Some(p) = n.strip_prefix("@adam.v.") {
                        t.adam.v.insert(p.to_owned(), as_f64());
                    }
                }
            }
        }
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::batch_bounds;

    #[test]
    fn trailing_singleton_joins_previous_batch() {
        assert_eq!(batch_bounds(9, 4), vec![(0, 4), (4, 9)]);
        assert_eq!(batch_bounds(10, 4), vec![(0, 4), (4, 8), (8, 10)]);
        assert_eq!(batch_bounds(1, 4), vec![(0, 1)]);
        assert_eq!(batch_bounds(3, 1), vec![(0, 1), (1, 2), (2, 3)]);
    }
}

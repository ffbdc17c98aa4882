use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::model::{build_model, Model};
use crate::scalar::Scalar;
use crate::train::data::{make_batches, Batch, Batches, TrainStream};
use crate::train::optim::{AdamW, Optimizer};
use crate::train::schedule::lr_at;
use crate::train::{MetricsRow, TrainConfig};

/// Token-weighted mean cross-entropy over `batches`. Reads parameters only.
pub fn evaluate<S: Scalar>(model: &Model<S>, batches: &[Batch]) -> Result<f64> {
    let mut total = 0.0;
    let mut tokens = 0usize;
    for b in batches {
        let mut g = Graph::new();
        let l = model.loss(&mut g, &b.inputs, &b.targets, b.batch, b.seq)?;
        total += g.value(l).data()[0].as_f64() * b.tokens() as f64;
        tokens += b.tokens();
    }
    if tokens == 0 {
        return Err(Error::Empty("validation split"));
    }
    Ok(total / tokens as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

/// Owns the model, optimizer and batch stream of one run. Steps are
/// numbered from 1; step `s` uses `lr_at(s)`.
pub struct Trainer<'a, S: Scalar> {
    pub cfg: TrainConfig,
    pub model: Model<S>,
    pub opt: AdamW<S>,
    data: &'a Batches,
    stream: TrainStream<'a>,
    step: usize,
    tokens_seen: u64,
}

impl<'a, S: Scalar> Trainer<'a, S> {
    /// Prepares the windows for [`Trainer::new`].
    pub fn batches(cfg: &TrainConfig, ids: &[usize]) -> Result<Batches> {
        cfg.validate()?;
        if let Some(&bad) = ids.iter().find(|&&t| t >= cfg.model.vocab_size) {
            return Err(Error::Index {
                what: "token id",
                index: bad,
                bound: cfg.model.vocab_size,
            });
        }
        make_batches(ids, cfg.seq_len, cfg.batch_size, cfg.val_fraction, cfg.seed)
    }

    pub fn new(cfg: TrainConfig, data: &'a Batches) -> Result<Self> {
        cfg.validate()?;
        let model = build_model(&cfg.model)?;
        Ok(Self::with_model(cfg, model, data))
    }

    pub fn with_model(cfg: TrainConfig, model: Model<S>, data: &'a Batches) -> Self {
        let opt = AdamW::new(cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay);
        Self {
            cfg,
            model,
            opt,
            data,
            stream: data.train_stream(),
            step: 0,
            tokens_seen: 0,
        }
    }

    /// Steps completed so far.
    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn tokens_seen(&self) -> u64 {
        self.tokens_seen
    }

    pub fn epoch(&self) -> u64 {
        self.stream.epoch()
    }

    /// Forward, backward and update on the next batch. A non-finite loss
    /// aborts before any parameter changes.
    pub fn step(&mut self) -> Result<StepReport> {
        let step = self.step + 1;
        let batch = self.stream.next().expect("train stream is endless");
        let mut g = Graph::new();
        let l = self.model.loss(
            &mut g,
            &batch.inputs,
            &batch.targets,
            batch.batch,
            batch.seq,
        )?;
        let loss = g.value(l).data()[0].as_f64();
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step, loss });
        }
        self.model.store.zero_grad();
        g.backward(l, &mut self.model.store)?;
        drop(g);
        let lr = lr_at(step, &self.cfg);
        self.opt.step(&mut self.model.store, lr)?;
        self.step = step;
        self.tokens_seen += batch.tokens() as u64;
        Ok(StepReport { step, lr, loss })
    }

    pub fn validation_loss(&self) -> Result<f64> {
        evaluate(&self.model, &self.data.val_batches(self.cfg.batch_size))
    }

    /// Runs the remaining steps, handing a row to `log` every `log_every`
    /// steps and on the last step. Validation runs every `eval_every`
    /// steps and on the last step.
    pub fn run(&mut self, mut log: impl FnMut(&MetricsRow) -> Result<()>) -> Result<()> {
        while self.step < self.cfg.steps {
            let r = self.step()?;
            let last = r.step == self.cfg.steps;
            let eval = last || r.step % self.cfg.eval_every == 0;
            if eval || last || r.step % self.cfg.log_every == 0 {
                let val_loss = if eval {
                    Some(self.validation_loss()?)
                } else {
                    None
                };
                log(&MetricsRow {
                    step: r.step,
                    lr: r.lr,
                    train_loss: r.loss,
                    val_loss,
                    tokens_seen: self.tokens_seen,
                    wall_ms: None,
                })?;
            }
        }
        Ok(())
    }
}

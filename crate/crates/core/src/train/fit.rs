//! The training loop: deterministic shuffling, batched multi-task loss,
//! AdamW updates and per-epoch callbacks.

use std::fs::OpenOptions;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{KaleModel, PreparedRecord, BOS, EOS, PAD};
use crate::numeric::{BoundParams, LrGroup, ParamStore, Scalar, Tape, Tensor, Var};

use super::adamw::{clip_grad_norm, AdamW};
use super::checkpoint::Checkpoint;
use super::loss::{ce_sum, cma_loss, total_loss};
use super::schedule::lr_at;
use super::{TrainConfig, TrainError};

pub const LOSS_CSV_HEADER: &str = "step,l_ce,l_cma,l_total,lr_vision,lr_graph,lr_other";

/// One row of the loss history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub l_ce: f64,
    pub l_cma: f64,
    pub l_total: f64,
    pub lr_vision: f64,
    pub lr_graph: f64,
    pub lr_other: f64,
}

/// Writes `rows`, with a header unless appending to a non-empty file.
pub fn write_loss_csv(path: &Path, rows: &[StepLog], append: bool) -> Result<(), TrainError> {
    let io = |source| TrainError::Io {
        path: path.display().to_string(),
        source,
    };
    let existing = append && path.metadata().map(|m| m.len() > 0).unwrap_or(false);
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(path)
        .map_err(io)?;
    let mut w = csv::WriterBuilder::new().has_headers(!existing).from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(io)?;
    Ok(())
}

pub fn read_loss_csv(path: &Path) -> Result<Vec<StepLog>, TrainError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

/// Training state over a fixed set of prepared records. Every (record,
/// caption) pair is one sample.
pub struct Trainer<'m, T: Scalar> {
    pub model: &'m KaleModel,
    pub store: ParamStore<T>,
    pub opt: AdamW<T>,
    pub cfg: TrainConfig,
    pub seed: u64,
    pub step: u64,
    pub epoch: u64,
    /// Samples whose alignment loss fell back to the constant 1.
    pub degenerate_cma: u64,
    records: Vec<PreparedRecord>,
    samples: Vec<(usize, usize)>,
}

impl<'m, T: Scalar> Trainer<'m, T> {
    pub fn new(
        model: &'m KaleModel,
        store: ParamStore<T>,
        records: Vec<PreparedRecord>,
        cfg: TrainConfig,
        seed: u64,
    ) -> Result<Self, TrainError> {
        cfg.validate()?;
        let samples: Vec<(usize, usize)> = records
            .iter()
            .enumerate()
            .flat_map(|(i, r)| (0..r.captions.len()).map(move |c| (i, c)))
            .collect();
        if samples.is_empty() {
            return Err(TrainError::NoSamples);
        }
        let opt = AdamW::new(&store);
        Ok(Self {
            model,
            store,
            opt,
            cfg,
            seed,
            step: 0,
            epoch: 0,
            degenerate_cma: 0,
            records,
            samples,
        })
    }

    /// Continues from a checkpoint's parameters, moments and counters.
    pub fn resume(&mut self, ck: &Checkpoint) -> Result<(), TrainError> {
        ck.restore_params(&mut self.store)?;
        ck.restore_optimizer(&mut self.opt)?;
        self.step = ck.step;
        self.epoch = ck.epoch;
        Ok(())
    }

    pub fn records(&self) -> &[PreparedRecord] {
        &self.records
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.samples.len().div_ceil(self.cfg.batch_size) as u64
    }

    pub fn total_steps(&self) -> u64 {
        self.cfg.epochs * self.steps_per_epoch()
    }

    /// Sample order for `epoch`, a function of the seed and epoch only.
    pub fn epoch_order(&self, epoch: u64) -> Vec<(usize, usize)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (epoch + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut order = self.samples.clone();
        order.shuffle(&mut rng);
        order
    }

    pub fn lr(&self, step: u64, g: LrGroup) -> f64 {
        lr_at(step, g, &self.cfg, self.total_steps())
    }

    /// Builds `(l_total, l_ce, l_cma)` for a batch on `tape`. Without a
    /// graph branch the alignment term is the constant 0 and the total is
    /// the cross-entropy.
    pub fn batch_loss(
        &mut self,
        tape: &mut Tape<T>,
        p: &BoundParams,
        batch: &[(usize, usize)],
    ) -> Result<(Var, Var, Var), TrainError> {
        let model = self.model;
        let han = match &model.han {
            Some(h) => Some(h.forward(tape, p)?),
            None => None,
        };
        let ops = model.ops();
        let mut nll = Vec::with_capacity(batch.len());
        let mut tokens = 0;
        let mut cma = Vec::new();
        for &(ri, ci) in batch {
            let rec = &self.records[ri];
            let enc = model.encode(tape, p, han.as_ref(), rec)?;
            let caption = &rec.captions[ci];
            let mut prefix = Vec::with_capacity(caption.len() + 1);
            prefix.push(BOS);
            prefix.extend(caption);
            let mut targets = caption.clone();
            targets.push(EOS);
            let logits = model.decode_logits(tape, p, enc.fused, &prefix)?;
            let (s, n) = ce_sum(tape, logits, &targets, PAD)?;
            nll.push(s);
            tokens += n;
            if let (Some(proj), Some(vg)) = (model.cma_params(), enc.v_graph) {
                let vi = if self.cfg.cma_detach_image { tape.detach(enc.v_image) } else { enc.v_image };
                let c = cma_loss(tape, p, &ops, proj, vi, vg, &rec.slots.present())?;
                if c.degenerate {
                    self.degenerate_cma += 1;
                }
                cma.push(c.loss);
            }
        }
        let sum = |tape: &mut Tape<T>, vs: &[Var]| -> Result<Var, TrainError> {
            let mut acc = vs[0];
            for &v in &vs[1..] {
                acc = tape.add(acc, v)?;
            }
            Ok(acc)
        };
        let s = sum(tape, &nll)?;
        let l_ce = tape.scale(s, T::lit(1.0 / tokens.max(1) as f64));
        if cma.is_empty() {
            let zero = tape.constant(Tensor::scalar(T::zero()));
            return Ok((l_ce, l_ce, zero));
        }
        let s = sum(tape, &cma)?;
        let l_cma = tape.scale(s, T::lit(1.0 / cma.len() as f64));
        Ok((total_loss(tape, l_ce, l_cma, self.cfg.beta)?, l_ce, l_cma))
    }

    /// Forward, backward and one optimizer update on `batch`.
    pub fn train_step(&mut self, batch: &[(usize, usize)]) -> Result<StepLog, TrainError> {
        let mut tape = Tape::new();
        let p = self.store.bind(&mut tape);
        let (total, l_ce, l_cma) = self.batch_loss(&mut tape, &p, batch)?;
        let step = self.step + 1;
        let value = |v: Var| tape.value(v).item().as_f64();
        let (l_total, ce, cm) = (value(total), value(l_ce), value(l_cma));
        if !l_total.is_finite() {
            return Err(TrainError::NonFiniteLoss(step));
        }
        let mut grads = tape.backward(total)?;
        let mut g: Vec<Option<Tensor<T>>> = p.vars().iter().map(|&v| grads.take(v)).collect();
        if let Some(c) = self.cfg.grad_clip {
            clip_grad_norm(&mut g, c);
        }
        let rates = LrGroup::ALL.map(|grp| self.lr(step, grp));
        let adam = self.cfg.adamw();
        self.opt.step(&mut self.store, &g, |grp| rates[grp as usize], &adam)?;
        self.step = step;
        Ok(StepLog {
            step,
            l_ce: ce,
            l_cma: cm,
            l_total,
            lr_vision: rates[LrGroup::Vision as usize],
            lr_graph: rates[LrGroup::Graph as usize],
            lr_other: rates[LrGroup::Other as usize],
        })
    }

    pub fn run_epoch(&mut self) -> Result<Vec<StepLog>, TrainError> {
        let order = self.epoch_order(self.epoch);
        let mut logs = Vec::with_capacity(self.steps_per_epoch() as usize);
        for batch in order.chunks(self.cfg.batch_size) {
            logs.push(self.train_step(batch)?);
        }
        self.epoch += 1;
        Ok(logs)
    }

    /// Mean token cross-entropy over all samples with frozen parameters.
    pub fn evaluate_ce(&mut self) -> Result<f64, TrainError> {
        let mut tape = Tape::new();
        let p = self.store.bind_frozen(&mut tape);
        let all = self.samples.clone();
        let (_, l_ce, _) = self.batch_loss(&mut tape, &p, &all)?;
        Ok(tape.value(l_ce).item().as_f64())
    }
}

/// Runs epochs until `cfg.epochs` is reached, calling `on_epoch` after each
/// with that epoch's step logs.
pub fn fit<T: Scalar>(
    trainer: &mut Trainer<'_, T>,
    on_epoch: impl FnMut(&Trainer<'_, T>, &[StepLog]) -> Result<(), TrainError>,
) -> Result<Vec<StepLog>, TrainError> {
    let end = trainer.cfg.epochs;
    fit_until(trainer, end, on_epoch)
}

/// Like [`fit`] but stops after epoch `end` (capped at `cfg.epochs`); the
/// schedule still spans the configured run.
pub fn fit_until<T: Scalar>(
    trainer: &mut Trainer<'_, T>,
    end: u64,
    mut on_epoch: impl FnMut(&Trainer<'_, T>, &[StepLog]) -> Result<(), TrainError>,
) -> Result<Vec<StepLog>, TrainError> {
    let mut history = Vec::new();
    while trainer.epoch < end.min(trainer.cfg.epochs) {
        let logs = trainer.run_epoch()?;
        log::info!(
            "epoch {} step {} l_total {:.6}",
            trainer.epoch,
            trainer.step,
            logs.last().map_or(f64::NAN, |l| l.l_total)
        );
        on_epoch(trainer, &logs)?;
        history.extend(logs);
    }
    Ok(history)
}

//! Minibatch training with Adam, per-epoch dev evaluation, best-snapshot
//! selection and early stopping.

use std::time::Instant;

use mru_core::data::Dataset;
use mru_core::{Graph, Rng, Scalar};

use crate::adam::Adam;
use crate::bundle::{build_vocab, passage_idf, Instances, ModelBundle};
use crate::config::TrainConfig;
use crate::error::{HarnessError, Result};
use crate::evaluate::{dev_metric, predict, score};

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean training loss over the epoch, dropout on.
    pub loss: f64,
    pub dev_metric: f64,
    pub seconds: f64,
}

impl EpochLog {
    pub fn line(&self, metric: &str) -> String {
        format!(
            "epoch={} loss={:.6} dev_{metric}={:.6} seconds={:.2}",
            self.epoch, self.loss, self.dev_metric, self.seconds
        )
    }
}

pub struct TrainOutcome<T: Scalar> {
    /// Parameters of the best dev epoch.
    pub bundle: ModelBundle<T>,
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_metric: f64,
    /// Training records without a usable target.
    pub dropped: usize,
}

/// Loss of one instance; gradients are accumulated into the store.
fn instance_step<T: Scalar>(
    bundle: &mut ModelBundle<T>,
    insts: &Instances,
    i: usize,
    rng: &mut Rng,
) -> Result<f64> {
    let (loss, grads) = {
        let mut g = Graph::new(&bundle.store).training(true);
        let l = match insts {
            Instances::Mcq(v) => bundle.model.mcq_loss(&mut g, &v[i], rng)?,
            Instances::Span(v) => bundle.model.span_loss(&mut g, &v[i], rng)?,
        };
        let loss = g.scalar_value(l).as_f64();
        (loss, g.backward(l)?.into_params())
    };
    if !loss.is_finite() {
        return Err(HarnessError::config(
            "train",
            format!("loss became {loss} on instance {i}"),
        ));
    }
    bundle.store.accumulate(&grads);
    Ok(loss)
}

/// Trains on `train`, selecting by the dev metric. Vocabulary covers both
/// datasets; idf comes from the training passages. `log` receives one
/// `key=value` line per event.
pub fn train<T: Scalar>(
    config: TrainConfig,
    train: &Dataset,
    dev: &Dataset,
    log: &mut dyn FnMut(&str),
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    for (name, d) in [("train", train), ("dev", dev)] {
        if d.task() != config.task {
            return Err(HarnessError::config(
                "train",
                format!(
                    "{name} set holds {} records, model.task is {}",
                    d.task(),
                    config.task
                ),
            ));
        }
        if d.is_empty() {
            return Err(HarnessError::config(
                "train",
                format!("{name} set is empty"),
            ));
        }
    }
    let vocab = build_vocab(&[train, dev]);
    let idf = passage_idf(&vocab, train);
    let mut bundle = ModelBundle::<T>::init(config, vocab, idf)?;
    let (insts, dropped) = bundle.training_instances(train)?;
    if insts.is_empty() {
        return Err(HarnessError::config(
            "train",
            "no training record has a usable target",
        ));
    }
    let dev_insts = bundle.instances(dev)?;
    let metric = dev_metric(bundle.task());
    log(&format!(
        "train_records={} dropped={dropped} dev_records={} vocab={} parameters={} dtype={}",
        insts.len(),
        dev.len(),
        bundle.vocab.len(),
        bundle.store.num_elements(),
        T::DTYPE
    ));

    let base = Rng::new(bundle.config.seed);
    let mut shuffle_rng = base.fork(3);
    let mut dropout_rng = base.fork(4);
    let mut adam = Adam::new(bundle.config.lr);
    let mut order: Vec<usize> = (0..insts.len()).collect();
    let mut best_store = bundle.store.clone();
    let mut best = (0, f64::NEG_INFINITY);
    let mut epochs = Vec::new();
    let mut stale = 0;
    bundle.store.zero_grads();

    for epoch in 1..=bundle.config.epochs {
        let start = Instant::now();
        shuffle_rng.shuffle(&mut order);
        let mut total = 0.0;
        for batch in order.chunks(bundle.config.batch_size) {
            for &i in batch {
                total += instance_step(&mut bundle, &insts, i, &mut dropout_rng)?;
            }
            bundle.store.scale_grads(T::lit(1.0 / batch.len() as f64));
            adam.step(&mut bundle.store);
        }
        let report = score(&predict(&bundle, &dev_insts)?, dev)?;
        let entry = EpochLog {
            epoch,
            loss: total / insts.len() as f64,
            dev_metric: report.get(metric).expect("dev metric reported"),
            seconds: start.elapsed().as_secs_f64(),
        };
        log(&entry.line(metric));
        if entry.dev_metric > best.1 {
            best = (epoch, entry.dev_metric);
            best_store.copy_values_from(&bundle.store)?;
            stale = 0;
        } else {
            stale += 1;
        }
        epochs.push(entry);
        if stale >= bundle.config.patience {
            log(&format!(
                "early_stop epoch={epoch} patience={}",
                bundle.config.patience
            ));
            break;
        }
    }
    bundle.store.copy_values_from(&best_store)?;
    log(&format!(
        "best_epoch={} best_dev_{metric}={:.6}",
        best.0, best.1
    ));
    Ok(TrainOutcome {
        bundle,
        epochs,
        best_epoch: best.0,
        best_metric: best.1,
        dropped,
    })
}

//! End-to-end training behaviour on small synthetic sets.

use mru_core::data::{
    gen_mcq_synthetic, gen_span_synthetic, Dataset, McqSynthParams, SpanSynthParams, Task,
};
use mru_core::{EncoderKind, Graph, RangeSet, Rng};
use mru_harness::bundle::{build_vocab, passage_idf, Instances};
use mru_harness::evaluate::{evaluate, predict, score};
use mru_harness::{train, Adam, Checkpoint, ModelBundle, TrainConfig};

fn mcq_sets() -> (Dataset, Dataset) {
    let p = McqSynthParams {
        seed: 5,
        n: 48,
        len: 16,
        vocab_size: 40,
        gap: 3,
        num_options: 3,
    };
    let train = gen_mcq_synthetic(&p).unwrap();
    let dev = gen_mcq_synthetic(&McqSynthParams {
        seed: 6,
        n: 20,
        ..p
    })
    .unwrap();
    (Dataset::Mcq(train), Dataset::Mcq(dev))
}

fn span_sets() -> (Dataset, Dataset) {
    let p = SpanSynthParams {
        seed: 7,
        n: 40,
        len: 20,
        vocab_size: 40,
        gap: 3,
        answer_len: 2,
        structures: 2,
    };
    let train = gen_span_synthetic(&p).unwrap();
    let dev = gen_span_synthetic(&SpanSynthParams {
        seed: 8,
        n: 16,
        ..p
    })
    .unwrap();
    (Dataset::Span(train), Dataset::Span(dev))
}

fn config(task: Task, encoder: EncoderKind) -> TrainConfig {
    TrainConfig {
        task,
        encoder,
        dim: 8,
        embedding_dim: 8,
        frozen_embeddings: false,
        ranges: RangeSet::new(vec![1, 2, 4]).unwrap(),
        batch_size: 8,
        epochs: 3,
        lr: 3e-3,
        seed: 11,
        ..TrainConfig::default()
    }
}

#[test]
fn identical_runs_reproduce_losses_and_parameters() {
    let (tr, dev) = mcq_sets();
    let cfg = config(Task::Mcq, EncoderKind::SimpleMru);
    let a = train::<f32>(cfg.clone(), &tr, &dev, &mut |_| {}).unwrap();
    let b = train::<f32>(cfg.clone(), &tr, &dev, &mut |_| {}).unwrap();
    assert!((a.epochs[0].loss - b.epochs[0].loss).abs() < 1e-6);
    let losses =
        |o: &mru_harness::TrainOutcome<f32>| o.epochs.iter().map(|e| e.loss).collect::<Vec<_>>();
    assert_eq!(losses(&a), losses(&b));
    assert_eq!(
        a.bundle.checkpoint().to_bytes(),
        b.bundle.checkpoint().to_bytes()
    );

    let other = train::<f32>(TrainConfig { seed: 12, ..cfg }, &tr, &dev, &mut |_| {}).unwrap();
    assert_ne!(other.epochs[0].loss, a.epochs[0].loss);
}

#[test]
fn best_epoch_is_the_logged_maximum() {
    let (tr, dev) = span_sets();
    let mut lines = Vec::new();
    let out = train::<f64>(config(Task::Span, EncoderKind::Mru), &tr, &dev, &mut |l| {
        lines.push(l.to_string())
    })
    .unwrap();
    let best = out
        .epochs
        .iter()
        .map(|e| e.dev_metric)
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(out.best_metric, best);
    let first_best = out
        .epochs
        .iter()
        .find(|e| e.dev_metric == best)
        .unwrap()
        .epoch;
    assert_eq!(out.best_epoch, first_best);
    // the returned parameters are the best epoch's
    let report = evaluate(&out.bundle, &dev).unwrap();
    assert_eq!(report.get("f1"), Some(best));
    assert!(lines.iter().any(|l| l.starts_with("epoch=1 loss=")));
    assert!(lines.last().unwrap().starts_with("best_epoch="));
}

#[test]
fn early_stopping_respects_patience() {
    let (tr, dev) = mcq_sets();
    let cfg = TrainConfig {
        epochs: 30,
        patience: 1,
        lr: 1e-12,
        ..config(Task::Mcq, EncoderKind::None)
    };
    let out = train::<f64>(cfg, &tr, &dev, &mut |_| {}).unwrap();
    // a negligible learning rate leaves the dev metric where epoch 1 put it
    assert_eq!(out.epochs.len(), 2);
    assert_eq!(out.best_epoch, 1);
}

#[test]
fn checkpoint_round_trip_evaluates_identically() {
    let dir = tempfile::tempdir().unwrap();
    for (task, (tr, dev)) in [(Task::Mcq, mcq_sets()), (Task::Span, span_sets())] {
        let out = train::<f32>(config(task, EncoderKind::Mru), &tr, &dev, &mut |_| {}).unwrap();
        let before = evaluate(&out.bundle, &dev).unwrap();
        let path = dir.path().join(format!("{task}.ckpt"));
        out.bundle.checkpoint().save(&path).unwrap();
        let loaded =
            ModelBundle::<f32>::from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
        assert_eq!(evaluate(&loaded, &dev).unwrap(), before);
        assert_eq!(
            loaded.checkpoint().to_bytes(),
            out.bundle.checkpoint().to_bytes()
        );
        assert!(ModelBundle::<f64>::from_checkpoint(&Checkpoint::load(&path).unwrap()).is_err());
    }
}

#[test]
fn evaluation_is_repeatable_and_order_invariant() {
    let (tr, dev) = span_sets();
    let vocab = build_vocab(&[&tr, &dev]);
    let idf = passage_idf(&vocab, &tr);
    let bundle =
        ModelBundle::<f64>::init(config(Task::Span, EncoderKind::Mru), vocab, idf).unwrap();
    let first = evaluate(&bundle, &dev).unwrap();
    assert_eq!(evaluate(&bundle, &dev).unwrap(), first);

    let Dataset::Span(recs) = &dev else {
        unreachable!()
    };
    let reversed = Dataset::Span(recs.iter().rev().cloned().collect());
    let rev = evaluate(&bundle, &reversed).unwrap();
    for (k, v) in &first.metrics {
        assert!((rev.get(k).unwrap() - v).abs() < 1e-12, "{k}");
    }
}

#[test]
fn one_adam_step_lowers_the_loss_of_a_fixed_instance() {
    let (tr, dev) = mcq_sets();
    let vocab = build_vocab(&[&tr, &dev]);
    let idf = passage_idf(&vocab, &tr);
    let cfg = TrainConfig {
        dropout: 0.0,
        ..config(Task::Mcq, EncoderKind::Mru)
    };
    let mut bundle = ModelBundle::<f64>::init(cfg, vocab, idf).unwrap();
    let Instances::Mcq(insts) = bundle.instances(&tr).unwrap() else {
        unreachable!()
    };
    let loss = |b: &ModelBundle<f64>| {
        let mut g = Graph::new(&b.store);
        let l = b
            .model
            .mcq_loss(&mut g, &insts[0], &mut Rng::new(0))
            .unwrap();
        (g.scalar_value(l), g.backward(l).unwrap().into_params())
    };
    let (before, grads) = loss(&bundle);
    bundle.store.accumulate(&grads);
    Adam::new(1e-3).step(&mut bundle.store);
    let (after, _) = loss(&bundle);
    assert!(after < before, "{after} !< {before}");
}

#[test]
fn predictions_match_dataset_size_and_task() {
    let (tr, dev) = mcq_sets();
    let vocab = build_vocab(&[&tr, &dev]);
    let idf = passage_idf(&vocab, &tr);
    let bundle =
        ModelBundle::<f32>::init(config(Task::Mcq, EncoderKind::Lstm), vocab, idf).unwrap();
    let preds = predict(&bundle, &bundle.instances(&dev).unwrap()).unwrap();
    assert_eq!(score(&preds, &dev).unwrap().count, dev.len());
    let (span_tr, _) = span_sets();
    assert!(bundle.instances(&span_tr).is_err());
    assert!(score(&preds, &span_tr).is_err());
}

#[test]
fn mismatched_task_is_rejected_before_training() {
    let (tr, dev) = span_sets();
    assert!(train::<f32>(config(Task::Mcq, EncoderKind::Mru), &tr, &dev, &mut |_| {}).is_err());
}

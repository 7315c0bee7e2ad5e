//! Hand-computed and limiting-case oracles for tensor ops, MRU cells and
//! the recurrent baselines.

use mru_core::baselines::{gru_forward, lstm_forward, CellKind, RnnLayer, RnnParams};
use mru_core::mru::{
    contract_expand, fuse_gates, gates, recurrent_cell, recurrent_mru, simple_cell, simple_mru,
    MruParams,
};
use mru_core::{
    Encoder, EncoderKind, Error, Graph, MruConfig, MruLayer, MruVariant, RangeSet, Rng, SeqMask,
    Store64, Tensor, Var,
};

fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape, v).unwrap()
}

fn close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol, "index {i}: {x} vs {y}");
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[test]
fn matmul_hand_cases() {
    let mut g = Graph::<f64>::detached();
    let i2 = g.constant(Tensor::eye(2));
    let v = g.constant(t(&[2, 1], &[5.0, 7.0]));
    let out = g.matmul(i2, v).unwrap();
    assert_eq!(g.value(out).data(), &[5.0, 7.0]);
    let a = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let ones = g.constant(t(&[2, 1], &[1.0, 1.0]));
    let out = g.matmul(a, ones).unwrap();
    assert_eq!(g.value(out).data(), &[3.0, 7.0]);
    match g.matmul(a, a).and_then(|_| g.matmul(ones, ones)) {
        Err(Error::Shape { left, right, .. }) => {
            assert_eq!(left, vec![2, 1]);
            assert_eq!(right, vec![2, 1]);
        }
        other => panic!("expected a shape error, got {other:?}"),
    }
}

#[test]
fn pointwise_values_and_relu_kink() {
    let store = Store64::new();
    let mut g = Graph::new(&store);
    let x = g.variable(t(&[3], &[-1.0, 0.0, 2.0]));
    let r = g.relu(x);
    assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);
    let s = g.sigmoid(x);
    assert_eq!(g.value(s).data()[1], 0.5);
    let th = g.tanh(x);
    assert_eq!(g.value(th).data()[1], 0.0);
    let loss = g.sum_all(r).unwrap();
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.wrt(x).unwrap().data(), &[0.0, 0.0, 1.0]);
}

#[test]
fn softmax_hand_cases() {
    let mut g = Graph::<f64>::detached();
    let x = g.constant(t(&[1, 3], &[4.0, 4.0, 4.0]));
    let p = g.softmax(x, None).unwrap();
    close(g.value(p).data(), &[1.0 / 3.0; 3], 1e-15);
    let x = g.constant(t(&[1, 2], &[0.0, 2f64.ln()]));
    let p = g.softmax(x, None).unwrap();
    close(g.value(p).data(), &[1.0 / 3.0, 2.0 / 3.0], 1e-15);
    let x = g.constant(t(&[1, 2], &[1.0, 2.0]));
    assert!(matches!(
        g.softmax(x, Some(&[false, false])),
        Err(Error::FullyMasked { .. })
    ));
}

#[test]
fn segment_and_block_hand_cases() {
    let mut g = Graph::<f64>::detached();
    let x = g.constant(t(&[4, 1], &[1.0, 2.0, 3.0, 4.0]));
    let s = g.segment_sum(x, 2).unwrap();
    assert_eq!(g.value(s).data(), &[3.0, 7.0]);
    let x5 = g.constant(t(&[5, 1], &[1.0, 2.0, 3.0, 4.0, 5.0]));
    let s = g.segment_sum(x5, 2).unwrap();
    assert_eq!(g.value(s).data(), &[3.0, 7.0, 5.0]);
    let s = g.segment_sum(x5, 1).unwrap();
    assert_eq!(g.value(s).data(), g.value(x5).data());
    assert!(g.segment_sum(x5, 0).is_err());

    let ab = g.constant(t(&[2, 1], &[10.0, 20.0]));
    let r = g.block_repeat(ab, 2, 4).unwrap();
    assert_eq!(g.value(r).data(), &[10.0, 10.0, 20.0, 20.0]);
    let abc = g.constant(t(&[3, 1], &[10.0, 20.0, 30.0]));
    let r = g.block_repeat(abc, 2, 5).unwrap();
    assert_eq!(g.value(r).data(), &[10.0, 10.0, 20.0, 20.0, 30.0]);
    assert!(g.block_repeat(abc, 2, 4).is_err());
}

#[test]
fn reductions_and_loss_hand_cases() {
    let mut g = Graph::<f64>::detached();
    let x = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let s = g.sum_axis(x, 0).unwrap();
    assert_eq!(g.value(s).data(), &[4.0, 6.0]);
    let rows = g.constant(t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 100.0, 100.0]));
    let m = g.mean_axis(rows, 0, Some(&[true, true, false])).unwrap();
    assert_eq!(g.value(m).data(), &[2.0, 3.0]);
    let logits = g.constant(Tensor::zeros(&[1, 4]));
    let l = g.softmax_cross_entropy(logits, &[2], None).unwrap();
    assert!((g.scalar_value(l) - 4f64.ln()).abs() < 1e-15);
    let peaked = g.constant(t(&[1, 2], &[60.0, 0.0]));
    let l = g.softmax_cross_entropy(peaked, &[0], None).unwrap();
    assert!(g.scalar_value(l) < 1e-20);
    assert!(matches!(
        g.softmax_cross_entropy(logits, &[4], None),
        Err(Error::LabelOutOfRange {
            label: 4,
            classes: 4
        })
    ));
}

fn mru_store(variant: MruVariant, d: usize, k: usize, seed: u64) -> (Store64, MruParams) {
    let mut store = Store64::new();
    let p = MruParams::new(&mut store, "m", d, k, variant, &mut Rng::new(seed)).unwrap();
    (store, p)
}

#[test]
fn contract_expand_limits() {
    let (mut store, p) = mru_store(MruVariant::Simple, 3, 1, 1);
    store.set_value(p.contract[0].w, Tensor::eye(3)).unwrap();
    let x = t(
        &[4, 3],
        &[0.1, 0.2, 0.3, 1.0, 0.0, 2.0, 0.5, 0.5, 0.5, 3.0, 1.0, 0.0],
    );
    let mut g = Graph::new(&store);
    let xv = g.constant(x.clone());
    let id = contract_expand(&mut g, xv, 1, p.contract[0], false).unwrap();
    assert_eq!(g.value(id).data(), x.data());
    let one = contract_expand(&mut g, xv, 4, p.contract[0], false).unwrap();
    let v = g.value(one);
    for r in 1..4 {
        assert_eq!(v.row(r), v.row(0));
    }
    // ranges longer than the sequence are clamped
    let long = contract_expand(&mut g, xv, 25, p.contract[0], false).unwrap();
    assert_eq!(g.value(long).data(), g.value(one).data());
}

#[test]
fn fuse_gates_constant_collapse() {
    let (mut store, p) = mru_store(MruVariant::Simple, 2, 2, 2);
    for lin in [p.fuse_hidden, p.fuse_out] {
        let w = store.value(lin.w).clone().map(|_| 0.0);
        store.set_value(lin.w, w).unwrap();
    }
    store
        .set_value(p.fuse_out.b.unwrap(), t(&[2], &[0.7, -0.3]))
        .unwrap();
    let mut g = Graph::new(&store);
    let a = g.constant(Tensor::full(&[3, 2], 5.0));
    let b = g.constant(Tensor::full(&[3, 2], -2.0));
    let gl = fuse_gates(&mut g, &[a, b], &p.fuse_hidden, &p.fuse_out).unwrap();
    assert_eq!(g.value(gl).data(), &[0.7, 0.0, 0.7, 0.0, 0.7, 0.0]);
    assert!(fuse_gates(&mut g, &[a], &p.fuse_hidden, &p.fuse_out).is_err());
}

#[test]
fn blockwise_gates_match_fusing_expanded_views() {
    let (mut store, p) = mru_store(MruVariant::Simple, 3, 3, 9);
    let mut rng = Rng::new(10);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let v = rng.uniform_tensor(store.value(id).shape(), -1.0, 1.0);
        store.set_value(id, v).unwrap();
    }
    for bias_inside in [false, true] {
        let mut cfg = MruConfig::new(MruVariant::Simple, RangeSet::new(vec![1, 3, 4]).unwrap());
        cfg.bias_inside = bias_inside;
        let mut g = Graph::new(&store);
        let x = g.constant(rng.uniform_tensor(&[2, 11, 3], -1.0, 1.0));
        let fast = gates(&mut g, x, &p, &cfg).unwrap();
        let views: Vec<Var> = [1, 3, 4]
            .iter()
            .zip(&p.contract)
            .map(|(&r, &c)| contract_expand(&mut g, x, r, c, bias_inside).unwrap())
            .collect();
        let direct = fuse_gates(&mut g, &views, &p.fuse_hidden, &p.fuse_out).unwrap();
        close(g.value(fast).data(), g.value(direct).data(), 1e-12);
    }
}

#[test]
fn simple_cell_limits() {
    let mut g = Graph::<f64>::detached();
    let w = g.constant(t(&[2, 2], &[1.0, -2.0, 3.0, 0.5]));
    let z = g.constant(t(&[2, 2], &[-0.1, 0.2, 0.3, -0.4]));
    let open = g.constant(Tensor::full(&[2, 2], 800.0));
    let shut = g.constant(Tensor::full(&[2, 2], -800.0));
    let y = simple_cell(&mut g, open, w, z).unwrap();
    assert_eq!(g.value(y).data(), g.value(w).data());
    let y = simple_cell(&mut g, shut, w, z).unwrap();
    assert_eq!(g.value(y).data(), g.value(z).data());
}

#[test]
fn simple_mru_zero_fixed_point() {
    let (store, p) = mru_store(MruVariant::Simple, 4, 3, 3);
    let cfg = MruConfig::new(MruVariant::Simple, RangeSet::new(vec![1, 2, 4]).unwrap());
    let mut g = Graph::new(&store);
    let x = g.constant(Tensor::zeros(&[6, 4]));
    let y = simple_mru(&mut g, x, &p, &cfg).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn recurrent_cell_limits() {
    let mut g = Graph::<f64>::detached();
    let z = g.constant(t(&[3, 2], &[0.1, -0.2, 0.3, 0.4, -0.5, 0.6]));
    let ones = g.constant(Tensor::ones(&[3, 2]));
    let zeros = g.constant(Tensor::zeros(&[3, 2]));
    let c0 = g.constant(t(&[2], &[0.25, -0.75]));
    let carry = recurrent_cell(&mut g, ones, z, ones, Some(c0)).unwrap();
    assert_eq!(
        g.value(carry).data(),
        &[0.25, -0.75, 0.25, -0.75, 0.25, -0.75]
    );
    let fresh = recurrent_cell(&mut g, zeros, z, ones, Some(c0)).unwrap();
    assert_eq!(g.value(fresh).data(), g.value(z).data());
}

/// `d = 1`, `ℓ = 2`, ranges {1}; every weight a named constant, the
/// recurrence stepped by hand.
#[test]
fn recurrent_mru_scalar_oracle() {
    let (mut store, p) = mru_store(MruVariant::Recurrent, 1, 1, 4);
    let (wa, ba, f1, c1, f2, c2, wp, bp, wo, bo) =
        (0.8, 0.1, 1.5, -0.2, 0.9, 0.3, 1.2, 0.05, -0.7, 0.4);
    let og = p.out_gate.unwrap();
    for (id, v) in [
        (p.contract[0].w, wa),
        (p.contract[0].b, ba),
        (p.fuse_hidden.w, f1),
        (p.fuse_hidden.b.unwrap(), c1),
        (p.fuse_out.w, f2),
        (p.fuse_out.b.unwrap(), c2),
        (p.proj.w, wp),
        (p.proj.b.unwrap(), bp),
        (og.w, wo),
        (og.b.unwrap(), bo),
    ] {
        let shape = store.value(id).shape().to_vec();
        store.set_value(id, Tensor::full(&shape, v)).unwrap();
    }
    let xs = [0.6, -1.1];
    let relu = |v: f64| v.max(0.0);
    let mut c = 0.0;
    let mut want = Vec::new();
    for &x in &xs {
        let u = relu(wa * x) + ba;
        let gate = sigmoid(relu(f2 * relu(f1 * u + c1) + c2));
        let z = (wp * x).tanh() + bp;
        let o = sigmoid(wo * x + bo);
        c = gate * c + (1.0 - gate) * z;
        want.push(o * c);
    }
    let cfg = MruConfig::new(MruVariant::Recurrent, RangeSet::new(vec![1]).unwrap());
    let mut g = Graph::new(&store);
    let x = g.constant(t(&[2, 1], &xs));
    let h = recurrent_mru(&mut g, x, &p, &cfg, None).unwrap();
    close(g.value(h).data(), &want, 1e-15);
}

#[test]
fn mru_encode_padding_and_determinism() {
    for variant in [MruVariant::Simple, MruVariant::Recurrent] {
        let mut cfg = MruConfig::new(variant, RangeSet::new(vec![1, 2, 4]).unwrap());
        cfg.bidirectional = true;
        let build = || {
            let mut store = Store64::new();
            let layer = MruLayer::new(&mut store, "enc", 3, cfg.clone(), &mut Rng::new(5)).unwrap();
            (store, layer)
        };
        let (store, layer) = build();
        let x = Rng::new(6).uniform_tensor::<f64>(&[2, 5, 3], -1.0, 1.0);
        let mask = SeqMask::from_lengths(5, vec![5, 3]).unwrap();
        let mut g = Graph::new(&store);
        let xv = g.constant(x.clone());
        let y = layer.encode(&mut g, xv, &mask).unwrap();
        let width = layer.output_dim();
        let want_width = if variant == MruVariant::Recurrent {
            6
        } else {
            3
        };
        assert_eq!(g.shape(y), &[2, 5, want_width]);
        let out = g.value(y).clone();
        for tstep in 3..5 {
            let row = &out.data()[(5 + tstep) * width..][..width];
            assert!(row.iter().all(|&v| v == 0.0), "padded row {tstep} not zero");
        }
        let (store2, layer2) = build();
        let mut g2 = Graph::new(&store2);
        let xv2 = g2.constant(x);
        let y2 = layer2.encode(&mut g2, xv2, &mask).unwrap();
        assert_eq!(
            g2.value(y2).data(),
            out.data(),
            "{variant:?} not deterministic"
        );
    }
    assert!(matches!(
        SeqMask::from_flags(1, 3, &[true, false, true]),
        Err(Error::NonPrefixMask)
    ));
}

#[test]
fn lstm_zero_weights_emit_zero() {
    let mut store = Store64::new();
    let p = RnnParams::new(&mut store, "l", CellKind::Lstm, 3, 2, &mut Rng::new(1)).unwrap();
    assert_eq!(
        store.value(p.bias).data(),
        &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]
    );
    for id in [p.w_in, p.w_rec] {
        let z = store.value(id).clone().map(|_| 0.0);
        store.set_value(id, z).unwrap();
    }
    let mut g = Graph::new(&store);
    let x = g.constant(Tensor::zeros(&[4, 3]));
    let h = lstm_forward(&mut g, x, &SeqMask::full(1, 4), &p, None, None).unwrap();
    assert!(g.value(h).data().iter().all(|&v| v == 0.0));
}

#[test]
fn gru_zero_and_update_gate_limits() {
    let mut store = Store64::new();
    let p = RnnParams::new(&mut store, "g", CellKind::Gru, 2, 3, &mut Rng::new(2)).unwrap();
    for id in [p.w_in, p.w_rec] {
        let z = store.value(id).clone().map(|_| 0.0);
        store.set_value(id, z).unwrap();
    }
    let mut g = Graph::new(&store);
    let x = g.constant(Tensor::zeros(&[1, 4, 2]));
    let h = gru_forward(&mut g, x, &SeqMask::full(1, 4), &p, None).unwrap();
    assert!(g.value(h).data().iter().all(|&v| v == 0.0));

    // update gate bias saturated at 1: state never moves from h0
    let mut b = vec![0.0; 9];
    b[3..6].fill(800.0);
    store.set_value(p.bias, t(&[9], &b)).unwrap();
    let w = Rng::new(3).uniform_tensor(&[2, 9], -1.0, 1.0);
    store.set_value(p.w_in, w).unwrap();
    let mut g = Graph::new(&store);
    let x = g.constant(Rng::new(4).uniform_tensor(&[1, 4, 2], -1.0, 1.0));
    let h0 = g.constant(t(&[1, 3], &[0.3, -0.6, 0.9]));
    let h = gru_forward(&mut g, x, &SeqMask::full(1, 4), &p, Some(h0)).unwrap();
    assert_eq!(g.value(h).data(), [0.3, -0.6, 0.9].repeat(4).as_slice());
}

#[test]
fn bidirectional_palindrome_mirrors() {
    let mut store = Store64::new();
    let mut layer = RnnLayer::new(
        &mut store,
        "bi",
        CellKind::Lstm,
        2,
        3,
        true,
        &mut Rng::new(8),
    )
    .unwrap();
    layer.backward = Some(layer.forward);
    let rows = [
        [0.1, 0.5],
        [-0.4, 0.2],
        [0.9, -0.3],
        [-0.4, 0.2],
        [0.1, 0.5],
    ];
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    let mut g = Graph::new(&store);
    let x = g.constant(t(&[5, 2], &flat));
    let h = layer.encode(&mut g, x, &SeqMask::full(1, 5)).unwrap();
    assert_eq!(g.shape(h), &[5, 6]);
    let v = g.value(h);
    for s in 0..5 {
        assert_eq!(&v.row(s)[..3], &v.row(4 - s)[3..]);
    }
}

#[test]
fn padding_never_leaks_into_valid_positions() {
    let x = Rng::new(9).uniform_tensor::<f64>(&[4, 3], -1.0, 1.0);
    let mut padded = x.data().to_vec();
    padded.extend([7.0; 6]);
    let padded = t(&[1, 6, 3], &padded);
    for kind in EncoderKind::ALL {
        let mut store = Store64::new();
        let cfg = MruConfig::new(MruVariant::Recurrent, RangeSet::new(vec![1, 2]).unwrap());
        let enc = Encoder::new(&mut store, "e", kind, 4, &cfg, &mut Rng::new(10)).unwrap();
        let width = enc.output_dim();
        let run = |input: &Tensor<f64>, mask: &SeqMask| -> Vec<f64> {
            let widened = Rng::new(11).uniform_tensor::<f64>(&[3, 4], -1.0, 1.0);
            let mut g = Graph::new(&store);
            let xv = g.constant(input.clone());
            let w = g.constant(widened);
            let xv = g.matmul(xv, w).unwrap();
            let h = enc.encode(&mut g, xv, mask).unwrap();
            g.value(h).data().to_vec()
        };
        let short = run(
            &x.clone().reshape(&[1, 4, 3]).unwrap(),
            &SeqMask::full(1, 4),
        );
        let long = run(&padded, &SeqMask::from_lengths(6, vec![4]).unwrap());
        close(&long[..4 * width], &short, 1e-15);
        assert!(
            long[4 * width..].iter().all(|&v| v == 0.0),
            "{kind} leaks into padding"
        );
    }
}

#[test]
fn hybrid_stack_is_composition() {
    let mut store = Store64::new();
    let cfg = MruConfig::new(MruVariant::Recurrent, RangeSet::new(vec![1, 2]).unwrap());
    let enc = Encoder::new(
        &mut store,
        "h",
        EncoderKind::MruLstm,
        4,
        &cfg,
        &mut Rng::new(12),
    )
    .unwrap();
    let Encoder::MruLstm { rnn, mru } = &enc else {
        panic!("expected a hybrid stack")
    };
    assert_eq!(enc.output_dim(), 4);
    let layers = enc.layers();
    assert_eq!(layers[0].output, layers[1].input);
    let x = Rng::new(13).uniform_tensor::<f64>(&[6, 4], -1.0, 1.0);
    let mask = SeqMask::full(1, 6);
    let mut g = Graph::new(&store);
    let xv = g.constant(x);
    let whole = enc.encode(&mut g, xv, &mask).unwrap();
    let inner = rnn.encode(&mut g, xv, &mask).unwrap();
    let outer = mru.encode(&mut g, inner, &mask).unwrap();
    assert_eq!(g.value(whole).data(), g.value(outer).data());
}

#[test]
fn identity_encoder_adds_nothing() {
    let mut store = Store64::new();
    let cfg = MruConfig::new(MruVariant::Recurrent, RangeSet::default());
    let enc = Encoder::new(
        &mut store,
        "none",
        EncoderKind::None,
        3,
        &cfg,
        &mut Rng::new(0),
    )
    .unwrap();
    assert!(store.is_empty());
    let x = Rng::new(1).uniform_tensor::<f64>(&[1, 4, 3], -1.0, 1.0);
    let mut g = Graph::new(&store);
    let xv = g.constant(x.clone());
    let y = enc.encode(&mut g, xv, &SeqMask::full(1, 4)).unwrap();
    assert_eq!(g.value(y).data(), x.data());
    let y = enc
        .encode(&mut g, xv, &SeqMask::from_lengths(4, vec![2]).unwrap())
        .unwrap();
    assert_eq!(&g.value(y).data()[..6], &x.data()[..6]);
    assert!(g.value(y).data()[6..].iter().all(|&v| v == 0.0));
}

#[test]
fn unused_var_check() {
    // graph variables that never reach the loss get no gradient entry
    let mut g = Graph::<f64>::detached();
    let a: Var = g.variable(t(&[2], &[1.0, 2.0]));
    let b = g.variable(t(&[2], &[3.0, 4.0]));
    let l = g.sum_all(a).unwrap();
    let grads = g.backward(l).unwrap();
    assert_eq!(grads.wrt(a).unwrap().data(), &[1.0, 1.0]);
    assert!(grads.wrt(b).is_none());
}

#[test]
fn dropout_keeps_the_mean_and_is_off_at_inference() {
    let store = Store64::new();
    let x = Tensor::full(&[100_000], 1.0);
    let mut g = Graph::new(&store).training(true);
    let xv = g.constant(x.clone());
    let d = g.dropout(xv, 0.3, &mut Rng::new(4)).unwrap();
    let vals = g.value(d).data();
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    assert!((mean - 1.0).abs() < 0.02, "{mean}");
    let zeros = vals.iter().filter(|&&v| v == 0.0).count() as f64 / vals.len() as f64;
    assert!((zeros - 0.3).abs() < 0.01, "{zeros}");
    assert!(vals
        .iter()
        .all(|&v| v == 0.0 || (v - 1.0 / 0.7).abs() < 1e-12));

    let mut g = Graph::new(&store).training(false);
    let xv = g.constant(x.clone());
    let d = g.dropout(xv, 0.3, &mut Rng::new(4)).unwrap();
    assert_eq!(g.value(d).data(), x.data());
    assert!(g.dropout(xv, 1.0, &mut Rng::new(4)).is_err());
}

//! Randomised invariants of the tensor ops, the MRU cells, the span search
//! and the text metrics.

use mru_core::data::metrics::{bleu, f1, lcs_len, rouge_l, rouge_l_best_span};
use mru_core::model::best_span;
use mru_core::mru::{candidate, gates, recurrent_mru, simple_mru, MruParams};
use mru_core::{Graph, MruConfig, MruVariant, RangeSet, Rng, Store64, Tensor};
use proptest::prelude::*;

fn lcs_naive(a: &[u8], b: &[u8]) -> usize {
    // full table, no row reuse
    let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            t[i][j] = if a[i - 1] == b[j - 1] {
                t[i - 1][j - 1] + 1
            } else {
                t[i - 1][j].max(t[i][j - 1])
            };
        }
    }
    t[a.len()][b.len()]
}

fn words(ids: &[u8]) -> Vec<String> {
    ids.iter().map(|i| format!("w{i}")).collect()
}

fn tokens(max_len: usize) -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..6, 0..max_len)
}

fn mru_store(
    variant: MruVariant,
    ranges: &[usize],
    d: usize,
    seed: u64,
) -> (Store64, MruParams, MruConfig) {
    let cfg = MruConfig::new(variant, RangeSet::new(ranges.to_vec()).unwrap());
    let mut store = Store64::new();
    let mut rng = Rng::new(seed);
    let p = MruParams::new(&mut store, "mru", d, ranges.len(), variant, &mut rng).unwrap();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let v = rng.uniform_tensor(store.value(id).shape(), -1.0, 1.0);
        store.set_value(id, v).unwrap();
    }
    (store, p, cfg)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_are_distributions(
        vals in prop::collection::vec(-30.0f64..30.0, 12),
        keep in prop::collection::vec(any::<bool>(), 12),
        shift in -50.0f64..50.0,
    ) {
        let mut keep = keep;
        for r in 0..3 {
            keep[r * 4] = true;
        }
        let mut g = Graph::<f64>::detached();
        let x = g.constant(Tensor::new(&[3, 4], vals.clone()).unwrap());
        let p = g.softmax(x, Some(&keep)).unwrap();
        let xs = g.constant(Tensor::new(&[3, 4], vals.iter().map(|v| v + shift).collect()).unwrap());
        let ps = g.softmax(xs, Some(&keep)).unwrap();
        let (p, ps) = (g.value(p).data().to_vec(), g.value(ps).data().to_vec());
        for r in 0..3 {
            let row = &p[r * 4..][..4];
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for c in 0..4 {
                if !keep[r * 4 + c] {
                    prop_assert_eq!(row[c], 0.0);
                }
                prop_assert!((row[c] - ps[r * 4 + c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn segment_sum_preserves_mass_and_unit_range_is_identity(
        len in 1usize..12,
        r in 1usize..6,
        seed in any::<u64>(),
    ) {
        let x: Tensor<f64> = Rng::new(seed).uniform_tensor(&[2, len, 3], -1.0, 1.0);
        let mut g = Graph::<f64>::detached();
        let v = g.constant(x.clone());
        let s = g.segment_sum(v, r).unwrap();
        prop_assert_eq!(g.shape(s), &[2, len.div_ceil(r), 3]);
        prop_assert!((g.value(s).sum() - x.sum()).abs() < 1e-12);
        let s1 = g.segment_sum(v, 1).unwrap();
        let back = g.block_repeat(s1, 1, len).unwrap();
        prop_assert_eq!(g.value(back).data(), x.data());
        // block_repeat copies each block sum back to its positions
        let rep = g.block_repeat(s, r, len).unwrap();
        for t in 0..len {
            let blk = t / r;
            for c in 0..3 {
                prop_assert_eq!(g.value(rep).at(&[1, t, c]), g.value(s).at(&[1, blk, c]));
            }
        }
    }

    #[test]
    fn rng_streams_reproduce(seed in any::<u64>()) {
        let (mut a, mut b) = (Rng::new(seed), Rng::new(seed));
        for _ in 0..20 {
            prop_assert_eq!(a.unit().to_bits(), b.unit().to_bits());
            prop_assert_eq!(a.below(97), b.below(97));
        }
        let t1: Tensor<f32> = Rng::new(seed).glorot(5, 7);
        let t2: Tensor<f32> = Rng::new(seed).glorot(5, 7);
        prop_assert_eq!(t1, t2);
    }

    #[test]
    fn gates_are_constant_where_all_blocks_agree(
        len in 2usize..12,
        ranges in prop::sample::subsequence(vec![2usize, 3, 4, 5], 1..=3),
        seed in any::<u64>(),
    ) {
        let (store, p, cfg) = mru_store(MruVariant::Simple, &ranges, 4, seed);
        let x = Rng::new(seed ^ 1).uniform_tensor(&[len, 4], -1.0, 1.0);
        let mut g = Graph::new(&store);
        let v = g.constant(x);
        let gl = gates(&mut g, v, &p, &cfg).unwrap();
        let gv = g.value(gl);
        for t in 0..len {
            for u in 0..len {
                if cfg.ranges.clamped(len).all(|r| t / r == u / r) {
                    for (a, b) in gv.row(t).iter().zip(gv.row(u)) {
                        prop_assert!((a - b).abs() <= 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn simple_mru_is_a_convex_blend(len in 1usize..10, seed in any::<u64>()) {
        let (store, p, cfg) = mru_store(MruVariant::Simple, &[1, 2, 4], 3, seed);
        let x = Rng::new(seed ^ 2).uniform_tensor(&[len, 3], -2.0, 2.0);
        let mut g = Graph::new(&store);
        let v = g.constant(x.clone());
        let h = simple_mru(&mut g, v, &p, &cfg).unwrap();
        let z = candidate(&mut g, v, &p.proj, false).unwrap();
        let (h, z) = (g.value(h).data(), g.value(z).data());
        for ((&hv, &zv), &xv) in h.iter().zip(z).zip(x.data()) {
            prop_assert!(hv >= xv.min(zv) - 1e-12 && hv <= xv.max(zv) + 1e-12);
        }
    }

    #[test]
    fn recurrent_mru_is_bounded_by_its_candidates(len in 1usize..12, seed in any::<u64>()) {
        let (store, p, cfg) = mru_store(MruVariant::Recurrent, &[1, 3], 3, seed);
        let x = Rng::new(seed ^ 3).uniform_tensor(&[len, 3], -3.0, 3.0);
        let mut g = Graph::new(&store);
        let v = g.constant(x);
        let h = recurrent_mru(&mut g, v, &p, &cfg, None).unwrap();
        let z = candidate(&mut g, v, &p.proj, false).unwrap();
        let bound = g.value(z).max_abs();
        prop_assert!(g.value(h).max_abs() <= bound + 1e-12);
    }

    #[test]
    fn best_span_matches_exhaustive_search(
        ps in prop::collection::vec(0.0f64..1.0, 1..30),
        pe_seed in any::<u64>(),
        max_len in 1usize..8,
    ) {
        let mut rng = Rng::new(pe_seed);
        // coarse values make ties common
        let quant = |v: f64| (v * 4.0).round() / 4.0;
        let ps: Vec<f64> = ps.into_iter().map(quant).collect();
        let pe: Vec<f64> = (0..ps.len()).map(|_| quant(rng.unit())).collect();
        let mut best = None::<(f64, usize, usize)>;
        for s in 0..ps.len() {
            for e in s..ps.len() {
                if e - s < max_len && best.is_none_or(|(b, _, _)| ps[s] * pe[e] > b) {
                    best = Some((ps[s] * pe[e], s, e));
                }
            }
        }
        let (_, s, e) = best.unwrap();
        prop_assert_eq!(best_span(&ps, &pe, max_len), (s, e));
    }

    #[test]
    fn lcs_and_rouge_match_the_full_table(a in tokens(12), b in tokens(12)) {
        let (wa, wb) = (words(&a), words(&b));
        let l = lcs_naive(&a, &b);
        prop_assert_eq!(lcs_len(&wa, &wb), l);
        let expect = if a.is_empty() && b.is_empty() {
            1.0
        } else {
            2.0 * l as f64 / (a.len() + b.len()) as f64
        };
        prop_assert_eq!(rouge_l(&wa, &wb), expect);
    }

    #[test]
    fn rouge_best_span_matches_enumeration(p in tokens(20), r in tokens(5), max_len in 1usize..6) {
        prop_assume!(!p.is_empty() && !r.is_empty());
        let (wp, wr) = (words(&p), words(&r));
        let mut best = (0.0, 0, 0);
        for s in 0..p.len() {
            for e in s..p.len().min(s + max_len) {
                let score = rouge_l(&wp[s..=e], &wr);
                if score > best.0 {
                    best = (score, s, e);
                }
            }
        }
        let got = rouge_l_best_span(&wp, &wr, max_len);
        prop_assert_eq!((got.score, got.start, got.end), best);
        prop_assert_eq!(got.degenerate, best.0 == 0.0);
    }

    #[test]
    fn metrics_are_bounded_and_reflexive(a in tokens(10), b in tokens(10)) {
        let (wa, wb) = (words(&a), words(&b));
        for m in [f1(&wa, &wb), rouge_l(&wa, &wb), bleu(&wa, &wb, 4)] {
            prop_assert!((0.0..=1.0).contains(&m));
        }
        prop_assert_eq!(f1(&wa, &wa), 1.0);
        prop_assert_eq!(rouge_l(&wa, &wa), 1.0);
        if !a.is_empty() {
            prop_assert!((bleu(&wa, &wa, 4) - 1.0).abs() < 1e-12);
        }
    }
}

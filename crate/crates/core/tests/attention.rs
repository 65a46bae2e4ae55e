use courtcast::autodiff::{kernels, Tape};
use courtcast::models::graph::{gat_attention, gat_multihead, Edges, GatLayer};
use courtcast::models::transformer::Attention;
use courtcast::params::ParamStore;
use courtcast::Tensor;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn full(n: usize) -> Edges {
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    let dist = vec![1.0; pairs.len()];
    Edges::new(pairs, dist, n).unwrap()
}

/// Self loop plus a random subset of other nodes for every node.
fn random_edges(n: usize, rng: &mut ChaCha8Rng) -> Edges {
    use rand::Rng;
    let mut pairs = Vec::new();
    for i in 0..n {
        pairs.push((i, i));
        for j in 0..n {
            if j != i && rng.gen_bool(0.5) {
                pairs.push((i, j));
            }
        }
    }
    let dist = pairs.iter().map(|_| rng.gen_range(0.0..10.0)).collect();
    Edges::new(pairs, dist, n).unwrap()
}

fn gat(input: usize, output: usize, heads: usize, distance: bool, seed: u64) -> (ParamStore, GatLayer) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let layer = GatLayer::new(&mut store, "g", input, output, heads, 0.2, distance, &mut rng).unwrap();
    if distance {
        for t in store.tensors_mut() {
            if t.numel() == 1 {
                t.data_mut()[0] = -0.3;
            }
        }
    }
    (store, layer)
}

fn alphas(store: &ParamStore, layer: &GatLayer, h: &Tensor, edges: &Edges) -> Vec<Vec<f64>> {
    let mut tape = Tape::new();
    let p = store.bind(&mut tape, false);
    let x = tape.constant(h.clone());
    layer
        .heads
        .iter()
        .map(|head| {
            let (a, _) = gat_attention(&mut tape, &p, head, layer.slope, x, edges).unwrap();
            tape.value(a).data().to_vec()
        })
        .collect()
}

#[test]
fn gat_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n in 1..=11 {
        let (store, layer) = gat(5, 4, 3, n % 2 == 0, n as u64);
        let edges = random_edges(n, &mut rng);
        let h = Tensor::uniform(&[n, 5], 3.0, &mut rng);
        for a in alphas(&store, &layer, &h, &edges) {
            let mut sums = vec![0.0; n];
            for (&(i, _), v) in edges.pairs.iter().zip(&a) {
                sums[i] += v;
            }
            assert!(sums.iter().all(|s| (s - 1.0).abs() <= 1e-12), "{sums:?}");
        }
    }
}

#[test]
fn gat_three_node_example_matches_hand_computation() {
    let (store, layer) = gat(2, 3, 1, false, 4);
    let h = Tensor::matrix(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]]);
    // node 0 attends to {0, 1}, node 1 to {1, 2}, node 2 to {0, 1, 2}
    let pairs = vec![(0, 0), (0, 1), (1, 1), (1, 2), (2, 0), (2, 1), (2, 2)];
    let edges = Edges::new(pairs.clone(), vec![0.0; 7], 3).unwrap();
    let got = &alphas(&store, &layer, &h, &edges)[0];

    let head = &layer.heads[0];
    let (w, a1, a2) = (store.get(head.w), store.get(head.a_self), store.get(head.a_neigh));
    let wh: Vec<Vec<f64>> = (0..3)
        .map(|i| (0..3).map(|f| (0..2).map(|k| h.get(&[i, k]) * w.get(&[k, f])).sum()).collect())
        .collect();
    let leaky = |x: f64| if x > 0.0 { x } else { 0.2 * x };
    let score = |i: usize, j: usize| leaky((0..3).map(|f| a1.get(&[f, 0]) * wh[i][f] + a2.get(&[f, 0]) * wh[j][f]).sum());
    for (e, &(i, j)) in pairs.iter().enumerate() {
        let denom: f64 = pairs.iter().filter(|p| p.0 == i).map(|&(_, k)| score(i, k).exp()).sum();
        let want = score(i, j).exp() / denom;
        assert!((got[e] - want).abs() < 1e-12, "edge {i}->{j}: {} vs {want}", got[e]);
    }
}

#[test]
fn identical_nodes_attend_uniformly() {
    let (store, layer) = gat(4, 3, 2, false, 8);
    for n in [2, 3, 5, 11] {
        let h = Tensor::from_vec(&[n, 4], (0..n).flat_map(|_| [0.3, -1.2, 0.7, 2.0]).collect());
        for a in alphas(&store, &layer, &h, &full(n)) {
            assert!(a.iter().all(|&v| v == 1.0 / n as f64), "{a:?}");
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    let att = Attention::new(&mut store, "a", 6, 2, 3, &mut rng);
    let mut tape = Tape::new();
    let p = store.bind(&mut tape, false);
    let x = tape.constant(Tensor::from_vec(&[1, 4, 6], (0..4).flat_map(|_| [0.1, 0.2, -0.5, 1.0, 0.0, 3.0]).collect()));
    for (w, _) in att.weights(&mut tape, &p, x).unwrap() {
        assert!(tape.value(w).data().iter().all(|&v| v == 0.25));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gat_is_permutation_equivariant(n in 1usize..=11, seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (store, layer) = gat(4, 3, 2, seed % 2 == 0, seed);
        let edges = random_edges(n, &mut rng);
        let h = Tensor::uniform(&[n, 4], 2.0, &mut rng);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        // node i of the original graph is node perm[i] of the relabelled one
        let mut hp = Tensor::zeros(&[n, 4]);
        for i in 0..n {
            for f in 0..4 {
                hp.set(&[perm[i], f], h.get(&[i, f]));
            }
        }
        let pairs = edges.pairs.iter().map(|&(i, j)| (perm[i], perm[j])).collect();
        let edges_p = Edges::new(pairs, edges.distance.clone(), n).unwrap();
        let run = |x: &Tensor, e: &Edges| {
            let mut tape = Tape::new();
            let p = store.bind(&mut tape, false);
            let x = tape.constant(x.clone());
            let y = gat_multihead(&mut tape, &p, &layer, x, e).unwrap();
            tape.value(y).clone()
        };
        let (y, yp) = (run(&h, &edges), run(&hp, &edges_p));
        let a = alphas(&store, &layer, &h, &edges);
        let ap = alphas(&store, &layer, &hp, &edges_p);
        prop_assert_eq!(a, ap);
        let w = y.shape()[1];
        for i in 0..n {
            for f in 0..w {
                prop_assert_eq!(y.get(&[i, f]), yp.get(&[perm[i], f]));
            }
        }
    }

    #[test]
    fn attention_rows_sum_to_one(seed in 0u64..10_000, t in 1usize..9, heads in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let att = Attention::new(&mut store, "a", 8, heads, 4, &mut rng);
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let x = tape.constant(Tensor::uniform(&[2, t, 8], 3.0, &mut rng));
        for (w, _) in att.weights(&mut tape, &p, x).unwrap() {
            for row in tape.value(w).data().chunks(t) {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn softmax_ignores_a_shift(seed in 0u64..10_000, c in -50.0f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = Tensor::uniform(&[3, 5], 4.0, &mut rng);
        let a = kernels::softmax(&s).unwrap();
        let b = kernels::softmax(&s.map(|v| v + c)).unwrap();
        prop_assert!(a.max_abs_diff(&b) < 1e-12);
    }
}

#[test]
fn two_token_attention_matches_hand_computation() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut store = ParamStore::new();
    let (d, dk) = (4, 4);
    let att = Attention::new(&mut store, "a", d, 1, dk, &mut rng);
    let x = Tensor::uniform(&[1, 2, d], 1.0, &mut rng);
    let mut tape = Tape::new();
    let p = store.bind(&mut tape, false);
    let xv = tape.constant(x.clone());
    let (w, _) = att.weights(&mut tape, &p, xv).unwrap()[0];
    let got = tape.value(w).clone();
    let proj = |m: &Tensor, t: usize| -> Vec<f64> { (0..dk).map(|c| (0..d).map(|k| x.get(&[0, t, k]) * m.get(&[k, c])).sum()).collect() };
    let (wq, wk) = (store.get(att.w_q), store.get(att.w_k));
    for i in 0..2 {
        let q = proj(wq, i);
        let s: Vec<f64> = (0..2)
            .map(|j| q.iter().zip(proj(wk, j)).map(|(a, b)| a * b).sum::<f64>() / (dk as f64).sqrt())
            .collect();
        let z = s[0].exp() + s[1].exp();
        for j in 0..2 {
            assert!((got.get(&[0, i, j]) - s[j].exp() / z).abs() < 1e-12);
        }
    }
}

#[test]
fn opposite_query_and_key_scaling_cancels() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut store = ParamStore::new();
    let att = Attention::new(&mut store, "a", 6, 2, 3, &mut rng);
    let x = Tensor::uniform(&[2, 5, 6], 1.0, &mut rng);
    let weights = |store: &ParamStore| {
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let ws = att.weights(&mut tape, &p, xv).unwrap();
        ws.iter().map(|(w, _)| tape.value(*w).clone()).collect::<Vec<_>>()
    };
    let before = weights(&store);
    let mut scaled = store.clone();
    *scaled.get_mut(att.w_q) = scaled.get(att.w_q).map(|v| v * 4.0);
    *scaled.get_mut(att.w_k) = scaled.get(att.w_k).map(|v| v / 4.0);
    for (a, b) in before.iter().zip(weights(&scaled)) {
        assert!(a.max_abs_diff(&b) < 1e-12);
    }
}

use std::collections::BTreeMap;
use std::sync::Arc;

use cadgl_core::ddigraph::{build_message_graph, sample_negatives, split, DdiDataset, Edge, MessageGraph, PairExample};
use cadgl_core::encoder::{encode, graphnorm, lcp_forward, mcp_forward, ssgattn_forward, EncoderConfig, EncoderLayout, GraphNormParams};
use cadgl_core::fdcheck::finite_diff_check;
use cadgl_core::metrics::auroc;
use cadgl_core::objectives::{ce_loss, kl_loss, sample_edges, ss_loss, KlReduction};
use cadgl_core::synth::{synth_generate, SynthParams};
use cadgl_core::vgae::{latent_encode, reparameterize, LatentParams, Sampling};
use cadgl_core::{ParamStore, Segments, Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::new(&[rows, cols], (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Random partition of `0..n` into `k` (possibly empty) segments.
fn partition(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Segments {
    let mut lists = vec![Vec::new(); k];
    for i in 0..n {
        lists[rng.random_range(0..k)].push(i);
    }
    Segments::from_lists(&lists)
}

fn random_graph(rng: &mut ChaCha8Rng, n: usize, p: f64) -> MessageGraph {
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(p) {
                pairs.push((i, j));
            }
        }
    }
    MessageGraph::from_pairs(n, pairs).unwrap()
}

fn encoder_config(d_in: usize) -> EncoderConfig {
    EncoderConfig {
        d_in,
        d_hid: 4,
        d_out: 3,
        max_degree_bucket: 3,
        leaky_slope: 0.2,
        graphnorm_eps: 1e-5,
        use_lcp: true,
        use_mcp: true,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn composite_gradients_match_finite_differences(
        m in 1usize..5, k in 1usize..5, n in 1usize..5, seed in any::<u64>()
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let a = store.insert("a", tensor(&mut rng, m, k, -1.0, 1.0)).unwrap();
        let b = store.insert("b", tensor(&mut rng, k, n, -1.0, 1.0)).unwrap();
        let bias = store.insert("bias", tensor(&mut rng, 1, n + k, -1.0, 1.0)).unwrap();
        let mean_segs = Arc::new(partition(&mut rng, m, 3));
        let soft_segs = Arc::new(partition(&mut rng, m, 2));
        let labels: Arc<[f64]> = (0..m).map(|_| rng.random_range(0..2) as f64).collect();
        let f = move |t: &mut Tape, bd: &cadgl_core::Bound| {
            let y = t.matmul(bd.var(a), bd.var(b))?;
            let z = t.concat_cols(y, bd.var(a))?;
            let z = t.add_row_bias(z, bd.var(bias))?;
            let pooled = t.segment_mean(z, mean_segs.clone())?;
            let pooled = t.sigmoid(pooled);
            let summed = t.segment_sum(z, mean_segs.clone())?;
            let both = t.mul(pooled, summed)?;
            let unit = t.l2_normalize_rows(z)?;
            let scores = t.row_sum(unit)?;
            let attn = t.segment_softmax(scores, soft_segs.clone())?;
            let weighted = t.scale_rows(z, attn)?;
            let logits = t.row_sum(weighted)?;
            let ce = t.bce_with_logits(logits, labels.clone())?;
            let e = t.exp(both);
            let s = t.sum(e);
            let s = t.scale(s, 0.1);
            t.add(ce, s)
        };
        let report = finite_diff_check(f, &store, 1e-5, 1e-4, seed).unwrap();
        prop_assert!(report.pass, "{report:?}");
    }

    #[test]
    fn segment_softmax_normalises_and_ignores_shifts(
        seed in any::<u64>(), e in 1usize..30, shift in -50.0f64..50.0
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let segs = Arc::new(partition(&mut rng, e, 4));
        let scores = tensor(&mut rng, e, 1, -20.0, 20.0);
        let shifted = Tensor::new(&[e, 1], scores.data().iter().map(|v| v + shift).collect()).unwrap();
        let mut t = Tape::new();
        let s0 = t.constant(scores);
        let s1 = t.constant(shifted);
        let p0 = t.segment_softmax(s0, segs.clone()).unwrap();
        let p1 = t.segment_softmax(s1, segs.clone()).unwrap();
        for seg in segs.iter().filter(|s| !s.is_empty()) {
            let total: f64 = seg.iter().map(|&i| t.value(p0).data()[i]).sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
            for &i in seg {
                prop_assert!(t.value(p0).data()[i] > 0.0);
                prop_assert!((t.value(p0).data()[i] - t.value(p1).data()[i]).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn repeated_backward_is_bitwise_stable(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Tape::new();
        let w = t.param(tensor(&mut rng, 3, 4, -1.0, 1.0));
        let x = t.constant(tensor(&mut rng, 5, 3, -1.0, 1.0));
        let y = t.matmul(x, w).unwrap();
        let y = t.leaky_relu(y, 0.2);
        let root = t.sum(y);
        // every reachable node except the constant input carries a gradient
        let n_reachable = t.reachable(root).len() - 1;
        let first = t.backward(root).unwrap();
        let g1 = t.grad(w);
        t.zero_grads();
        let second = t.backward(root).unwrap();
        prop_assert_eq!(first.visited, n_reachable);
        prop_assert_eq!(first, second);
        prop_assert!(g1.data().iter().zip(t.grad(w).data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn attention_rows_sum_to_one(seed in any::<u64>(), n in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let graph = random_graph(&mut rng, n, 0.3);
        let mut store = ParamStore::new();
        let layout = EncoderLayout::init(&mut store, &encoder_config(3), &mut rng).unwrap();
        let mut t = Tape::new();
        let bound = store.bind_frozen(&mut t);
        let x = t.constant(tensor(&mut rng, n, 3, -2.0, 2.0));
        let out = encode(&mut t, x, &graph, &layout.bind(&bound)).unwrap();
        let alpha = t.value(out.attention);
        for seg in graph.attention_index().segments.iter() {
            let total: f64 = seg.iter().map(|&i| alpha.data()[i]).sum();
            prop_assert!((total - 1.0).abs() <= 1e-10);
        }
    }

    #[test]
    fn encoder_is_permutation_equivariant(seed in any::<u64>(), n in 2usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let graph = random_graph(&mut rng, n, 0.4);
        let x = tensor(&mut rng, n, 3, -1.0, 1.0);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        // node i becomes node perm[i]
        let permuted = MessageGraph::from_pairs(n, graph.edges().iter().map(|&(a, b)| (perm[a], perm[b]))).unwrap();
        let mut px = vec![0.0; n * 3];
        for i in 0..n {
            px[perm[i] * 3..perm[i] * 3 + 3].copy_from_slice(x.row(i));
        }
        let px = Tensor::new(&[n, 3], px).unwrap();
        let mut store = ParamStore::new();
        let layout = EncoderLayout::init(&mut store, &encoder_config(3), &mut rng).unwrap();
        let run = |g: &MessageGraph, feats: &Tensor| {
            let mut t = Tape::new();
            let b = store.bind_frozen(&mut t);
            let xv = t.constant(feats.clone());
            let out = encode(&mut t, xv, g, &layout.bind(&b)).unwrap();
            t.value(out.x_o).clone()
        };
        let (a, b) = (run(&graph, &x), run(&permuted, &px));
        for i in 0..n {
            for (u, v) in a.row(i).iter().zip(b.row(perm[i])) {
                prop_assert!((u - v).abs() <= 1e-9, "{u} vs {v}");
            }
        }
    }

    #[test]
    fn disconnected_node_leaves_message_passing_rows_unchanged(seed in any::<u64>(), n in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let graph = random_graph(&mut rng, n, 0.4);
        let bigger = MessageGraph::from_pairs(n + 1, graph.edges().iter().copied()).unwrap();
        let x = tensor(&mut rng, n + 1, 3, -1.0, 1.0);
        let small_x = Tensor::new(&[n, 3], x.data()[..n * 3].to_vec()).unwrap();
        let mut store = ParamStore::new();
        let layout = EncoderLayout::init(&mut store, &encoder_config(3), &mut rng).unwrap();
        // processors and attention only; GraphNorm pools statistics over every node
        let run = |g: &MessageGraph, feats: &Tensor| {
            let mut t = Tape::new();
            let b = store.bind_frozen(&mut t);
            let p = layout.bind(&b);
            let xv = t.constant(feats.clone());
            let l = lcp_forward(&mut t, xv, g, &p.lcp.as_ref().unwrap().0).unwrap();
            let m = mcp_forward(&mut t, xv, g, &p.mcp.as_ref().unwrap().0).unwrap();
            let h = t.concat_cols(l, m).unwrap();
            let out = ssgattn_forward(&mut t, h, g, &p.attn).unwrap();
            t.value(out.x_o).clone()
        };
        let (a, b) = (run(&graph, &small_x), run(&bigger, &x));
        for i in 0..n {
            for (u, v) in a.row(i).iter().zip(b.row(i)) {
                prop_assert!((u - v).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn graphnorm_at_init_standardises(seed in any::<u64>(), n in 2usize..40, d in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eps = 1e-5;
        let h = tensor(&mut rng, n, d, -5.0, 5.0);
        let mut t = Tape::new();
        let hv = t.constant(h.clone());
        let p = GraphNormParams {
            zeta: t.constant(Tensor::full(&[1, d], 1.0)),
            gamma: t.constant(Tensor::full(&[1, d], 1.0)),
            beta: t.constant(Tensor::zeros(&[1, d])),
            eps,
        };
        let out = graphnorm(&mut t, hv, &p).unwrap();
        let y = t.value(out);
        for c in 0..d {
            let col: Vec<f64> = (0..n).map(|r| y.get(r, c)).collect();
            let raw: Vec<f64> = (0..n).map(|r| h.get(r, c)).collect();
            let raw_mean = raw.iter().sum::<f64>() / n as f64;
            if raw.iter().all(|v| (v - raw_mean).abs() < 1e-3) {
                continue;
            }
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            prop_assert!(mean.abs() <= 1e-10);
            prop_assert!(var <= 1.0 + 1e-12 && var >= 1.0 - 10.0 * eps, "{var}");
        }
    }

    #[test]
    fn psi_removes_scale(seed in any::<u64>(), k in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = tensor(&mut rng, 3, 4, -1.0, 1.0);
        let f = tensor(&mut rng, 3, 2, -1.0, 1.0);
        let w_mu = tensor(&mut rng, 6, 3, -1.0, 1.0);
        let w_sigma = tensor(&mut rng, 6, 3, -1.0, 1.0);
        let scaled = |x: &Tensor| Tensor::new(x.shape(), x.data().iter().map(|v| v * k).collect()).unwrap();
        let run = |s: &Tensor, f: &Tensor| {
            let mut t = Tape::new();
            let p = LatentParams { w_mu: t.constant(w_mu.clone()), w_sigma: t.constant(w_sigma.clone()) };
            let sv = t.constant(s.clone());
            let fv = t.constant(f.clone());
            let (mu, ls) = latent_encode(&mut t, sv, fv, &p).unwrap();
            (t.value(mu).clone(), t.value(ls).clone())
        };
        let (m0, l0) = run(&s, &f);
        let (m1, l1) = run(&scaled(&s), &scaled(&f));
        for (a, b) in m0.data().iter().chain(l0.data()).zip(m1.data().iter().chain(l1.data())) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn ce_is_symmetric_under_label_flip(
        logits in prop::collection::vec(-30.0f64..30.0, 1..40), seed in any::<u64>()
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<f64> = logits.iter().map(|_| rng.random_range(0..2) as f64).collect();
        let flipped: Vec<f64> = labels.iter().map(|y| 1.0 - y).collect();
        let n = logits.len();
        let mut t = Tape::new();
        let z = t.constant(Tensor::new(&[n, 1], logits.clone()).unwrap());
        let nz = t.constant(Tensor::new(&[n, 1], logits.iter().map(|v| -v).collect()).unwrap());
        let a = ce_loss(&mut t, z, &labels).unwrap();
        let b = ce_loss(&mut t, nz, &flipped).unwrap();
        let (a, b) = (t.scalar(a).unwrap(), t.scalar(b).unwrap());
        prop_assert!(a >= 0.0);
        prop_assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn kl_is_positive_away_from_the_prior(
        mu in prop::collection::vec(-3.0f64..3.0, 6), ls in prop::collection::vec(-3.0f64..3.0, 6)
    ) {
        let at_prior = mu.iter().chain(&ls).all(|v| *v == 0.0);
        for r in [KlReduction::Sum, KlReduction::Mean] {
            let mut t = Tape::new();
            let m = t.constant(Tensor::new(&[2, 3], mu.clone()).unwrap());
            let l = t.constant(Tensor::new(&[2, 3], ls.clone()).unwrap());
            let kl = kl_loss(&mut t, m, l, r).unwrap();
            let v = t.scalar(kl).unwrap();
            prop_assert!(if at_prior { v == 0.0 } else { v > 0.0 }, "{v}");
        }
    }

    #[test]
    fn auroc_matches_pairwise_oracle(
        seed in any::<u64>(), n in 2usize..1000, levels in 2u32..50
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
        let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        labels[0] = 1;
        labels[1] = 0;
        let (mut twice_wins, mut pairs) = (0u64, 0u64);
        for i in (0..n).filter(|&i| labels[i] == 1) {
            for j in (0..n).filter(|&j| labels[j] == 0) {
                pairs += 1;
                twice_wins += match scores[i].partial_cmp(&scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 2,
                    std::cmp::Ordering::Equal => 1,
                    std::cmp::Ordering::Less => 0,
                };
            }
        }
        let oracle = twice_wins as f64 / (2 * pairs) as f64;
        prop_assert_eq!(auroc(&scores, &labels).unwrap(), Some(oracle));
    }

    #[test]
    fn ss_loss_matches_scalar_loop(seed in any::<u64>(), n in 2usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let graph = random_graph(&mut rng, n, 0.3);
        let proj = tensor(&mut rng, n, 3, -1.0, 1.0);
        let sample = sample_edges(&graph, 1.0, &mut rng).unwrap();
        prop_assume!(!sample.is_empty());
        let mut t = Tape::new();
        let pv = t.constant(proj.clone());
        let loss = ss_loss(&mut t, pv, &sample).unwrap();
        let mut total = 0.0;
        for (&(i, j), &y) in sample.pairs.iter().zip(&sample.labels) {
            let z: f64 = proj.row(i).iter().zip(proj.row(j)).map(|(a, b)| a * b).sum();
            let p = 1.0 / (1.0 + (-z).exp());
            total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        }
        let oracle = total / sample.len() as f64;
        prop_assert!((t.scalar(loss).unwrap() - oracle).abs() <= 1e-12);
    }

    #[test]
    fn split_is_a_partition(seed in any::<u64>(), n_edges in 3usize..200) {
        let edges: Vec<Edge> = (0..n_edges).map(|k| Edge { src: k % 17, dst: (k / 17 + k % 17 + 1) % 17, ty: k / 289 }).collect();
        let ds = DdiDataset::new(
            (0..17).map(|i| format!("D{i}")).collect(),
            vec!["t".into()],
            Tensor::zeros(&[17, 1]),
            edges,
        ).unwrap();
        let s = split(&ds, [0.6, 0.2, 0.2], seed).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.valid).chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n_edges).collect::<Vec<_>>());
        prop_assert!((s.train.len() as f64 - 0.6 * n_edges as f64).abs() <= 1.0);
        prop_assert!((s.valid.len() as f64 - 0.2 * n_edges as f64).abs() <= 1.0);
    }

    #[test]
    fn message_graph_is_symmetric_without_self_loops(seed in any::<u64>(), n in 1usize..15) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pairs: Vec<(usize, usize)> = (0..3 * n).map(|_| (rng.random_range(0..n), rng.random_range(0..n))).collect();
        let g = MessageGraph::from_pairs(n, pairs).unwrap();
        for i in 0..n {
            prop_assert!(!g.neighbors(i).contains(&i));
            prop_assert_eq!(g.degree(i), g.neighbors(i).len());
            for &j in g.neighbors(i) {
                prop_assert!(g.neighbors(j).contains(&i));
            }
        }
    }
}

#[test]
fn negatives_are_never_known_and_endpoints_are_uniform() {
    let ds = synth_generate(&SynthParams { n_drugs: 50, ..SynthParams::default() }).unwrap();
    let known = ds.positive_set();
    let edges: Vec<usize> = (0..ds.edges().len()).collect();
    let base = ds.positives(&edges);
    let positives: Vec<PairExample> = base.iter().cycle().take(10_000).copied().collect();
    let negatives = sample_negatives(&ds, &positives, 3).unwrap();
    assert_eq!(negatives.len(), positives.len());

    // Expected counts: each draw is uniform over the drugs that keep the
    // triple unknown on the side that was corrupted.
    let n = ds.n_drugs();
    let mut observed = vec![0.0; n];
    let mut expected = vec![0.0; n];
    for (p, q) in positives.iter().zip(&negatives) {
        assert_eq!(q.label, 0);
        assert!(!known.contains(q.d1, q.d2, q.t));
        let (corrupted, allowed): (usize, Vec<usize>) = if q.d1 == p.d1 {
            (q.d2, (0..n).filter(|&r| !known.contains(p.d1, r, p.t)).collect())
        } else {
            (q.d1, (0..n).filter(|&r| !known.contains(r, p.d2, p.t)).collect())
        };
        observed[corrupted] += 1.0;
        for r in &allowed {
            expected[*r] += 1.0 / allowed.len() as f64;
        }
    }
    let chi2: f64 = observed.iter().zip(&expected).map(|(o, e)| (o - e) * (o - e) / e).sum();
    let p_value = 1.0 - ChiSquared::new((n - 1) as f64).unwrap().cdf(chi2);
    assert!(p_value > 0.01, "chi2 {chi2}, p {p_value}");
}

#[test]
fn reparameterization_matches_gaussian_moments() {
    let n = 100_000;
    for (mu, ls) in [(0.0, 0.0), (0.7, -1.0)] {
        let mut t = Tape::new();
        let m = t.constant(Tensor::full(&[n, 1], mu));
        let l = t.constant(Tensor::full(&[n, 1], ls));
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let e = reparameterize(&mut t, m, l, Sampling::Train(&mut rng)).unwrap();
        let draws = t.value(e).data();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        let target_var = (0.5f64 * ls).exp().powi(2);
        assert!((mean - mu).abs() <= 0.02, "{mean}");
        assert!((var - target_var).abs() <= 0.02, "{var}");
    }
}

#[test]
fn message_graph_uses_training_edges_only() {
    let ds = synth_generate(&SynthParams { n_drugs: 40, ..SynthParams::default() }).unwrap();
    let s = split(&ds, [0.6, 0.2, 0.2], 1).unwrap();
    let g = build_message_graph(&ds, &s.train).unwrap();
    let mut train_pairs = BTreeMap::new();
    for &i in &s.train {
        let e = ds.edges()[i];
        if e.src != e.dst {
            train_pairs.insert((e.src.min(e.dst), e.src.max(e.dst)), ());
        }
    }
    assert_eq!(g.edges().len(), train_pairs.len());
    for &(a, b) in g.edges() {
        assert!(train_pairs.contains_key(&(a.min(b), a.max(b))));
    }
}

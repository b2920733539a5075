//! Graph matching network: a loop-level reference forward pass, end-to-end
//! gradients, and the invariants of the pair score.

mod common;

use astbridge::diff::Tape;
use astbridge::enhance::{UnifiedAst, UnifiedNode};
use astbridge::gmn::{encode_pair, encode_pair_on_tape, similarity, GmnConfig, GmnModel, GraphInput};
use astbridge::train::loss::CloneLossForm;
use common::gradcheck::{rel_err, rng};
use common::graphs::{graph, model, pair_loss, perturbed, random_graph, NUM_LABELS};
use rand::seq::SliceRandom;

mod reference {
    //! Direct transcription of the encoder with nested loops in f64.

    use super::*;
    use astbridge::diff::ParamSet;
    use astbridge::gmn::Vocab;

    type Mat = Vec<Vec<f64>>;

    fn p(params: &ParamSet<f64>, name: &str) -> Mat {
        let t = params.get(params.id_of(name).unwrap());
        (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
    }

    fn matmul(a: &Mat, b: &Mat) -> Mat {
        a.iter()
            .map(|row| (0..b[0].len()).map(|j| row.iter().enumerate().map(|(k, &x)| x * b[k][j]).sum()).collect())
            .collect()
    }

    fn add_bias(a: &mut Mat, b: &Mat) {
        for row in a.iter_mut() {
            for (x, y) in row.iter_mut().zip(&b[0]) {
                *x += y;
            }
        }
    }

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    fn softmax(v: &[f64]) -> Vec<f64> {
        let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|x| x / s).collect()
    }

    fn mean_rows(rows: &[&Vec<f64>], width: usize) -> Vec<f64> {
        let mut out = vec![0.0; width];
        for r in rows {
            for (o, x) in out.iter_mut().zip(r.iter()) {
                *o += x / rows.len() as f64;
            }
        }
        out
    }

    pub struct Output {
        pub v1: Vec<f64>,
        pub v2: Vec<f64>,
        pub attention: Vec<(Mat, Mat)>,
        pub pooling: (Vec<f64>, Vec<f64>),
    }

    fn init(params: &ParamSet<f64>, cfg: &GmnConfig, g: &UnifiedAst, vocab: &Vocab) -> Mat {
        let (e_type, e_attr) = (p(params, "e_type"), p(params, "e_attr"));
        let h: Mat = g
            .nodes
            .iter()
            .map(|n| {
                let rows: Vec<&Vec<f64>> = n.attr_tokens.iter().map(|t| &e_attr[vocab.id(t)]).collect();
                let mut h = e_type[n.universal_label_id].clone();
                h.extend(mean_rows(&rows, cfg.d_a));
                h
            })
            .collect();
        let mut a = matmul(&h, &p(params, "w1"));
        add_bias(&mut a, &p(params, "b1"));
        a.iter_mut().flatten().for_each(|x| *x = x.max(0.0));
        let mut b = matmul(&a, &p(params, "w2"));
        add_bias(&mut b, &p(params, "b2"));
        b.iter_mut().flatten().for_each(|x| *x = x.max(0.0));
        let (gain, bias) = (p(params, "ln_gain"), p(params, "ln_bias"));
        b.iter()
            .map(|row| {
                let n = row.len() as f64;
                let mean = row.iter().sum::<f64>() / n;
                let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
                row.iter()
                    .enumerate()
                    .map(|(j, x)| (x - mean) / (var + cfg.ln_eps).sqrt() * gain[0][j] + bias[0][j])
                    .collect()
            })
            .collect()
    }

    fn attend(params: &ParamSet<f64>, cfg: &GmnConfig, za: &Mat, zb: &Mat) -> (Mat, Mat) {
        let att = p(params, "att");
        let d = cfg.d();
        let alpha: Mat = za
            .iter()
            .map(|zi| {
                let left: f64 = (0..d).map(|k| att[k][0] * zi[k]).sum();
                let e: Vec<f64> = zb
                    .iter()
                    .map(|zj| {
                        let s = left + (0..d).map(|k| att[d + k][0] * zj[k]).sum::<f64>();
                        if s > 0.0 { s } else { cfg.leaky_slope * s }
                    })
                    .collect();
                softmax(&e)
            })
            .collect();
        let c = matmul(&alpha, zb);
        (alpha, c)
    }

    fn gru(params: &ParamSet<f64>, g: &UnifiedAst, z: &Mat, c: &Mat) -> Mat {
        let d = z[0].len();
        let adj = g.adjacency();
        let n: Mat = adj.iter().map(|nb| mean_rows(&nb.iter().map(|&j| &z[j]).collect::<Vec<_>>(), d)).collect();
        let u: Mat = z.iter().zip(c).map(|(a, b)| a.iter().chain(b).copied().collect()).collect();
        let gate = |x: &Mat, h: &Mat, w: &str, uu: &str, b: &str| {
            let mut s = matmul(x, &p(params, w));
            let t = matmul(h, &p(params, uu));
            for (r, tr) in s.iter_mut().zip(&t) {
                for (a, b) in r.iter_mut().zip(tr) {
                    *a += b;
                }
            }
            add_bias(&mut s, &p(params, b));
            s
        };
        let r = gate(&u, &n, "w_r", "u_r", "b_r");
        let zeta = gate(&u, &n, "w_z", "u_z", "b_z");
        let rn: Mat = r.iter().zip(&n).map(|(a, b)| a.iter().zip(b).map(|(x, y)| sigmoid(*x) * y).collect()).collect();
        let cand = gate(&u, &rn, "w_h", "u_h", "b_h");
        (0..z.len())
            .map(|i| (0..d).map(|k| n[i][k] + sigmoid(zeta[i][k]) * (cand[i][k].tanh() - n[i][k])).collect())
            .collect()
    }

    fn pool(params: &ParamSet<f64>, z: &Mat) -> (Vec<f64>, Vec<f64>) {
        let w = p(params, "pool");
        let s: Vec<f64> = matmul(z, &w).iter().map(|r| r[0]).collect();
        let gamma = softmax(&s);
        let d = z[0].len();
        let v = (0..d).map(|k| z.iter().zip(&gamma).map(|(r, g)| g * r[k]).sum()).collect();
        (gamma, v)
    }

    pub fn forward(params: &ParamSet<f64>, cfg: &GmnConfig, vocab: &Vocab, g1: &UnifiedAst, g2: &UnifiedAst) -> Output {
        let mut z1 = init(params, cfg, g1, vocab);
        let mut z2 = init(params, cfg, g2, vocab);
        let mut attention = Vec::new();
        for _ in 0..cfg.rounds {
            let (a12, c1) = attend(params, cfg, &z1, &z2);
            let (a21, c2) = attend(params, cfg, &z2, &z1);
            attention.push((a12, a21));
            let n1 = gru(params, g1, &z1, &c1);
            let n2 = gru(params, g2, &z2, &c2);
            z1 = n1;
            z2 = n2;
        }
        let (p1, v1) = pool(params, &z1);
        let (p2, v2) = pool(params, &z2);
        Output { v1, v2, attention, pooling: (p1, p2) }
    }
}

fn tiny(rounds: usize) -> GmnConfig {
    GmnConfig { d_t: 1, d_a: 1, hidden: 2, rounds, dropout: 0.1, ..GmnConfig::default() }
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn encoder_matches_loop_reference_at_width_two() {
    let mut r = rng(11);
    for case in 0..30 {
        let cfg = tiny(1 + case % 3);
        let m = perturbed(cfg.clone(), case as u64);
        let params = m.params.cast::<f64>();
        let g1 = random_graph(&mut r, "a", 6);
        let g2 = random_graph(&mut r, "b", 6);
        let expected = reference::forward(&params, &cfg, &m.vocab, &g1, &g2);
        let mut tape = Tape::<f64>::new();
        let i1 = GraphInput::<f64>::new(&g1, &m.vocab, NUM_LABELS).unwrap();
        let i2 = GraphInput::<f64>::new(&g2, &m.vocab, NUM_LABELS).unwrap();
        let vars = encode_pair_on_tape(&mut tape, &params, &m.ids, &cfg, &i1, &i2, false, 0).unwrap();
        assert!(close(tape.value(vars.v1).data(), &expected.v1, 1e-10), "case {case}: v1");
        assert!(close(tape.value(vars.v2).data(), &expected.v2, 1e-10), "case {case}: v2");
        assert!(close(tape.value(vars.pooling.0).data(), &expected.pooling.0, 1e-10));
        assert!(close(tape.value(vars.pooling.1).data(), &expected.pooling.1, 1e-10));
        for ((a12, a21), (e12, e21)) in vars.attention.iter().zip(&expected.attention) {
            assert!(close(tape.value(*a12).data(), &e12.concat(), 1e-10), "case {case}: attention 1→2");
            assert!(close(tape.value(*a21).data(), &e21.concat(), 1e-10), "case {case}: attention 2→1");
        }
    }
}

#[test]
fn single_node_partner_receives_full_attention() {
    let cfg = tiny(1);
    let m = perturbed(cfg, 3);
    let g1 = graph("a", &[1, 2, 3], &[vec!["alpha"], vec![], vec!["beta"]], &[(0, 1), (0, 2)]);
    let g2 = graph("b", &[4], &[vec!["gamma"]], &[]);
    let enc = encode_pair(&m, &GraphInput::new(&g1, &m.vocab, NUM_LABELS).unwrap(), &GraphInput::new(&g2, &m.vocab, NUM_LABELS).unwrap(), false, 0)
        .unwrap();
    assert!(enc.attention[0].0.data().iter().all(|&a| a == 1.0));
    assert_eq!(enc.pooling.1, vec![1.0]);
    // A lone node's pooled vector is its own state.
    assert_eq!(enc.v2, enc.node_states.1.row(0).to_vec());
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    let cfg = GmnConfig { d_t: 2, d_a: 2, hidden: 4, rounds: 2, dropout: 0.25, ..GmnConfig::default() };
    let g1 = graph("a", &[1, 2, 3], &[vec!["alpha"], vec!["beta", "gamma"], vec![]], &[(0, 1), (1, 2)]);
    let g2 = graph("b", &[3, 1, 5], &[vec!["delta"], vec![], vec!["alpha"]], &[(0, 1), (0, 2)]);
    let cases = [(1u8, CloneLossForm::Contrastive), (0, CloneLossForm::Contrastive), (0, CloneLossForm::CosineHinge { neg_margin: -0.9 })];
    for (seed, (label, form)) in cases.into_iter().enumerate() {
        let m = perturbed(cfg.clone(), 20 + seed as u64);
        let params = m.params.cast::<f64>();
        let i1 = GraphInput::<f64>::new(&g1, &m.vocab, NUM_LABELS).unwrap();
        let i2 = GraphInput::<f64>::new(&g2, &m.vocab, NUM_LABELS).unwrap();
        let (_, analytic) = pair_loss(&params, &m, &i1, &i2, label, form);
        let mut worst = 0.0f64;
        for id in params.ids() {
            for idx in 0..params.get(id).len() {
                let central = |h: f64| {
                    let mut plus = params.clone();
                    plus.get_mut(id).data_mut()[idx] += h;
                    let mut minus = params.clone();
                    minus.get_mut(id).data_mut()[idx] -= h;
                    (pair_loss(&plus, &m, &i1, &i2, label, form).0 - pair_loss(&minus, &m, &i1, &i2, label, form).0) / (2.0 * h)
                };
                let numeric = (4.0 * central(5e-4) - central(1e-3)) / 3.0;
                let a = analytic[id.index()].data()[idx];
                let e = rel_err(a, numeric);
                assert!(e < 1e-3, "{} [{idx}]: analytic {a:.6e} numeric {numeric:.6e}", params.name(id));
                worst = worst.max(e);
            }
        }
        assert!(worst < 1e-3);
    }
}

#[test]
fn self_similarity_is_one_and_score_is_symmetric() {
    let m = model(GmnConfig::default(), 1);
    let mut r = rng(99);
    let graphs: Vec<UnifiedAst> = (0..100).map(|i| random_graph(&mut r, &format!("g{i}"), 50)).collect();
    let inputs: Vec<GraphInput> = graphs.iter().map(|g| GraphInput::new(g, &m.vocab, NUM_LABELS).unwrap()).collect();
    for (i, a) in inputs.iter().enumerate() {
        let s = similarity(&m, a, a).unwrap();
        assert!((s - 1.0).abs() <= 1e-6, "graph {i}: sim(g, g) = {s}");
        let b = &inputs[(i * 37 + 11) % inputs.len()];
        let (ab, ba) = (similarity(&m, a, b).unwrap(), similarity(&m, b, a).unwrap());
        assert!((ab - ba).abs() <= 1e-6, "graph {i}: {ab} vs {ba}");
    }
}

#[test]
fn attention_rows_and_pooling_weights_sum_to_one() {
    let m = model(GmnConfig::default(), 2);
    let mut r = rng(5);
    for i in 0..25 {
        let g1 = random_graph(&mut r, "a", 50);
        let g2 = random_graph(&mut r, "b", 50);
        let enc = encode_pair(&m, &GraphInput::new(&g1, &m.vocab, NUM_LABELS).unwrap(), &GraphInput::new(&g2, &m.vocab, NUM_LABELS).unwrap(), true, i)
            .unwrap();
        assert_eq!(enc.attention.len(), m.config.rounds);
        for (a12, a21) in &enc.attention {
            assert_eq!(a12.shape(), (g1.len(), g2.len()));
            assert_eq!(a21.shape(), (g2.len(), g1.len()));
            for a in [a12, a21] {
                for row in 0..a.rows() {
                    let s: f64 = a.row(row).iter().map(|&x| f64::from(x)).sum();
                    assert!((s - 1.0).abs() < 1e-6, "attention row sums to {s}");
                }
            }
        }
        for p in [&enc.pooling.0, &enc.pooling.1] {
            let s: f64 = p.iter().map(|&x| f64::from(x)).sum();
            assert!((s - 1.0).abs() < 1e-6, "pooling sums to {s}");
            assert!(p.iter().all(|&x| x >= 0.0));
        }
    }
}

#[test]
fn node_order_does_not_change_the_score() {
    let m = model(GmnConfig::small(8), 4);
    let mut r = rng(8);
    for _ in 0..20 {
        let g1 = random_graph(&mut r, "a", 20);
        let g2 = random_graph(&mut r, "b", 20);
        let mut order: Vec<usize> = (0..g1.len()).collect();
        order.shuffle(&mut r);
        // Same graph with node ids relabeled and nodes stored in another order.
        let mut shuffled = g1.clone();
        shuffled.nodes = order.iter().map(|&i| UnifiedNode { id: order.iter().position(|&x| x == i).unwrap() + 100, ..g1.nodes[i].clone() }).collect();
        let new_id = |old: usize| order.iter().position(|&x| x == old).unwrap() + 100;
        let mut edges: Vec<(usize, usize)> = g1.edges.iter().map(|&(a, b)| (new_id(a).min(new_id(b)), new_id(a).max(new_id(b)))).collect();
        edges.sort_unstable();
        shuffled.edges = edges;
        let inp = |g: &UnifiedAst| GraphInput::new(g, &m.vocab, NUM_LABELS).unwrap();
        let s = similarity(&m, &inp(&g1), &inp(&g2)).unwrap();
        let t = similarity(&m, &inp(&shuffled), &inp(&g2)).unwrap();
        assert!((s - t).abs() < 1e-5, "{s} vs {t}");
    }
}

#[test]
fn dropout_acts_only_in_training_mode() {
    let m = model(GmnConfig::small(8), 6);
    let mut r = rng(2);
    let g1 = random_graph(&mut r, "a", 15);
    let g2 = random_graph(&mut r, "b", 15);
    let (i1, i2) = (GraphInput::new(&g1, &m.vocab, NUM_LABELS).unwrap(), GraphInput::new(&g2, &m.vocab, NUM_LABELS).unwrap());
    let eval_a = encode_pair(&m, &i1, &i2, false, 1).unwrap();
    let eval_b = encode_pair(&m, &i1, &i2, false, 2).unwrap();
    assert_eq!(eval_a.v1, eval_b.v1);
    let train_a = encode_pair(&m, &i1, &i2, true, 1).unwrap();
    let train_b = encode_pair(&m, &i1, &i2, true, 1).unwrap();
    let train_c = encode_pair(&m, &i1, &i2, true, 2).unwrap();
    assert_eq!(train_a.v1, train_b.v1);
    assert_ne!(train_a.v1, train_c.v1);
    assert_ne!(train_a.v1, eval_a.v1);
}

#[test]
fn checkpoint_round_trip_preserves_scores() {
    let m = perturbed(GmnConfig::small(4), 9);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    m.save(&path, "labels", None).unwrap();
    let (back, sidecar) = GmnModel::load(&path).unwrap();
    assert_eq!(back.params, m.params);
    assert_eq!(sidecar.config(), m.config);
    let mut r = rng(4);
    let g1 = random_graph(&mut r, "a", 10);
    let g2 = random_graph(&mut r, "b", 10);
    let inp = |mm: &GmnModel, g: &UnifiedAst| GraphInput::new(g, &mm.vocab, NUM_LABELS).unwrap();
    assert_eq!(similarity(&m, &inp(&m, &g1), &inp(&m, &g2)).unwrap(), similarity(&back, &inp(&back, &g1), &inp(&back, &g2)).unwrap());
}

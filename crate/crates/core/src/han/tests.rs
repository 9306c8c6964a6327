use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::corpus::ArtworkRecord;
use crate::embed::{HashingTextEmbedder, TextEmbedder};
use crate::graph::{MetaPath, NodeRef, NodeTable};
use crate::numeric::grad_check;
use crate::synthetic::random_graph;

fn t(rows: usize, cols: usize, data: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(&[rows, cols], data).unwrap()
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.2 * x
    }
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

/// Loop oracle for one head: returns (output rows, alpha per node).
fn head_oracle(h: &[Vec<f64>], lists: &[Vec<usize>], w: &[Vec<f64>], a: &[f64], act: bool) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let dp = w[0].len();
    let z: Vec<Vec<f64>> = h
        .iter()
        .map(|row| (0..dp).map(|c| (0..row.len()).map(|k| row[k] * w[k][c]).sum()).collect())
        .collect();
    let mut outs = Vec::new();
    let mut alphas = Vec::new();
    for (i, list) in lists.iter().enumerate() {
        let scores: Vec<f64> = list
            .iter()
            .map(|&j| {
                let s: f64 = (0..dp).map(|c| a[c] * z[i][c] + a[dp + c] * z[j][c]).sum();
                leaky(s)
            })
            .collect();
        let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let ex: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
        let sum: f64 = ex.iter().sum();
        let alpha: Vec<f64> = ex.iter().map(|e| e / sum).collect();
        let mut out = vec![0.0; dp];
        for (k, &j) in list.iter().enumerate() {
            for c in 0..dp {
                out[c] += alpha[k] * z[j][c];
            }
        }
        if act {
            out.iter_mut().for_each(|x| *x = elu(*x));
        }
        outs.push(out);
        alphas.push(alpha);
    }
    (outs, alphas)
}

fn run_head(h: &Tensor<f64>, nb: &Neighborhood, w: &Tensor<f64>, a: &Tensor<f64>, act: Activation) -> (Tensor<f64>, Tensor<f64>) {
    let mut tape = Tape::new();
    let (hv, wv, av) = (tape.constant(h.clone()), tape.constant(w.clone()), tape.constant(a.clone()));
    let (o, al) = attention_head(&mut tape, hv, nb, wv, av, 0.2, act).unwrap();
    (tape.value(o).clone(), tape.value(al).clone())
}

#[test]
fn self_loop_only_gives_unit_attention() {
    let nb = Neighborhood::from_lists(&[vec![], vec![]]);
    let (_, alpha) = run_head(&t(2, 2, &[1.0, 2.0, 3.0, 4.0]), &nb, &t(2, 1, &[1.0, -1.0]), &t(2, 1, &[0.3, 0.7]), Activation::Elu);
    assert_eq!(alpha.data(), &[1.0, 1.0]);
}

#[test]
fn identical_neighbours_split_evenly() {
    let nb = Neighborhood::from_lists(&[vec![1, 2], vec![], vec![]]);
    let h = t(3, 2, &[0.1, 0.9, 0.5, 0.5, 0.5, 0.5]);
    let (_, alpha) = run_head(&h, &nb, &t(2, 2, &[1.0, 0.2, -0.4, 1.0]), &t(4, 1, &[0.3, 0.7, -1.0, 2.0]), Activation::Elu);
    // slots of node 0 are (0, 1, 2); the two identical neighbours share weight
    assert!((alpha.data()[1] - alpha.data()[2]).abs() < 1e-15);
}

#[test]
fn line_graph_matches_hand_computation() {
    // 0 - 1 - 2 with self loops; W = I, a_left = (1, 0), a_right = (0, -1)
    let nb = Neighborhood::from_lists(&[vec![1], vec![0, 2], vec![1]]);
    let h = t(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
    let (out, alpha) = run_head(&h, &nb, &t(2, 2, &[1.0, 0.0, 0.0, 1.0]), &t(4, 1, &[1.0, 0.0, 0.0, -1.0]), Activation::Identity);
    // node 0: scores (1 + 0, 1 - 1) = (1, 0)
    let e = 1f64.exp();
    let a00 = e / (e + 1.0);
    // node 1: scores (0, -1, -1) -> leaky (0, -0.2, -0.2)
    let m = (-0.2f64).exp();
    let a10 = 1.0 / (1.0 + 2.0 * m);
    let a11 = m / (1.0 + 2.0 * m);
    let expected = [a00, 1.0 - a00, a10, a11, a11, 0.5, 0.5];
    for (x, y) in alpha.data().iter().zip(expected) {
        assert!((x - y).abs() < 1e-10, "{x} vs {y}");
    }
    assert!((out.get2(0, 0) - a00).abs() < 1e-10);
    assert!((out.get2(1, 1) - (a11 * 1.0 + a11 * 1.0)).abs() < 1e-10);
}

#[test]
fn single_self_loop_identity_is_projection() {
    let nb = Neighborhood::from_lists(&[vec![]]);
    let h = t(1, 3, &[0.5, -1.0, 2.0]);
    let w = t(3, 2, &[1.0, 2.0, 0.0, 1.0, -1.0, 0.5]);
    let (out, _) = run_head(&h, &nb, &w, &t(4, 1, &[1.0; 4]), Activation::Identity);
    assert_eq!(out.data(), &[0.5 - 2.0, 1.0 - 1.0 + 1.0]);
}

#[test]
fn random_head_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..5 {
        let (n, d, dp) = (6, 4, 3);
        let lists: Vec<Vec<usize>> = (0..n)
            .map(|i| (0..n).filter(|&j| j != i && rng.random_bool(0.4)).collect())
            .collect();
        let nb = Neighborhood::from_lists(&lists);
        let hrows: Vec<Vec<f64>> = (0..n).map(|_| rand_vec(&mut rng, d)).collect();
        let wrows: Vec<Vec<f64>> = (0..d).map(|_| rand_vec(&mut rng, dp)).collect();
        let a = rand_vec(&mut rng, 2 * dp);
        let full: Vec<Vec<usize>> = (0..n).map(|i| nb.of(i).to_vec()).collect();
        let (want_out, want_alpha) = head_oracle(&hrows, &full, &wrows, &a, true);
        let (out, alpha) = run_head(
            &Tensor::from_rows(&hrows).unwrap(),
            &nb,
            &Tensor::from_rows(&wrows).unwrap(),
            &t(2 * dp, 1, &a),
            Activation::Elu,
        );
        let flat: Vec<f64> = want_alpha.concat();
        for (x, y) in alpha.data().iter().zip(&flat) {
            assert!((x - y).abs() < 1e-10);
        }
        for i in 0..n {
            for c in 0..dp {
                assert!((out.get2(i, c) - want_out[i][c]).abs() < 1e-10);
            }
        }
    }
}

fn semantic_oracle(per_path: &[Vec<Vec<f64>>], w: &[Vec<f64>], b: &[f64], q: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let s = b.len();
    let scores: Vec<f64> = per_path
        .iter()
        .map(|rows| {
            let mut total = 0.0;
            for row in rows {
                for j in 0..s {
                    let pre: f64 = (0..row.len()).map(|k| row[k] * w[k][j]).sum::<f64>() + b[j];
                    total += q[j] * pre.tanh();
                }
            }
            total / rows.len() as f64
        })
        .collect();
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ex: Vec<f64> = scores.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = ex.iter().sum();
    let e: Vec<f64> = ex.iter().map(|x| x / z).collect();
    let n = per_path[0].len();
    let d = per_path[0][0].len();
    let mut v = vec![vec![0.0; d]; n];
    for (p, rows) in per_path.iter().enumerate() {
        for i in 0..n {
            for c in 0..d {
                v[i][c] += e[p] * rows[i][c];
            }
        }
    }
    (e, v)
}

fn run_semantic(per_path: &[Tensor<f64>], w: &Tensor<f64>, b: &Tensor<f64>, q: &Tensor<f64>) -> (Tensor<f64>, Tensor<f64>) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = per_path.iter().map(|p| tape.constant(p.clone())).collect();
    let (wv, bv, qv) = (tape.constant(w.clone()), tape.constant(b.clone()), tape.constant(q.clone()));
    let (e, v) = semantic_attention(&mut tape, &vars, wv, bv, qv).unwrap();
    (tape.value(e).clone(), tape.value(v).clone())
}

#[test]
fn semantic_attention_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (n, d, s) = (5, 4, 3);
    let paths: Vec<Vec<Vec<f64>>> = (0..3).map(|_| (0..n).map(|_| rand_vec(&mut rng, d)).collect()).collect();
    let w: Vec<Vec<f64>> = (0..d).map(|_| rand_vec(&mut rng, s)).collect();
    let b = rand_vec(&mut rng, s);
    let q = rand_vec(&mut rng, s);
    let (want_e, want_v) = semantic_oracle(&paths, &w, &b, &q);
    let tensors: Vec<_> = paths.iter().map(|p| Tensor::from_rows(p).unwrap()).collect();
    let (e, v) = run_semantic(&tensors, &Tensor::from_rows(&w).unwrap(), &Tensor::vector(b), &t(s, 1, &q));
    for (x, y) in e.data().iter().zip(&want_e) {
        assert!((x - y).abs() < 1e-10);
    }
    for i in 0..n {
        for c in 0..d {
            assert!((v.get2(i, c) - want_v[i][c]).abs() < 1e-10);
        }
    }
    assert!((e.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn semantic_special_cases() {
    let p = t(2, 2, &[0.3, -0.1, 0.8, 0.4]);
    let w = t(2, 2, &[1.0, 0.5, -0.5, 1.0]);
    let b = Tensor::vector(vec![0.1, 0.2]);
    let q = t(2, 1, &[1.0, -2.0]);
    let (e, v) = run_semantic(std::slice::from_ref(&p), &w, &b, &q);
    assert_eq!(e.data(), &[1.0]);
    assert_eq!(v.data(), p.data());
    let (e, _) = run_semantic(&[p.clone(), p], &w, &b, &q);
    assert_eq!(e.data(), &[0.5, 0.5]);
}

fn small_config(heads: usize, head_dim: usize) -> HanConfig {
    HanConfig {
        heads,
        head_dim,
        hidden: heads * head_dim,
        layers: 2,
        semantic_dim: 3,
        ..HanConfig::default()
    }
}

/// 2 artworks, 1 author, 2 types, 1 school; two meta-paths.
fn six_node_graph() -> HeteroGraph {
    let table = |labels: &[&str], emb: Vec<Vec<f64>>| NodeTable {
        dim: emb[0].len(),
        labels: labels.iter().map(|s| s.to_string()).collect(),
        embeddings: emb,
    };
    let mut tables: [NodeTable; 8] = Default::default();
    tables[NodeType::Artwork as usize] = table(&["a0", "a1"], vec![vec![0.2, -0.4, 0.9], vec![-0.7, 0.1, 0.3]]);
    tables[NodeType::Author as usize] = table(&["vermeer"], vec![vec![0.5, -0.25]]);
    tables[NodeType::Type as usize] = table(&["genre", "portrait"], vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
    tables[NodeType::School as usize] = table(&["Dutch"], vec![vec![1.0]]);
    let a = |i| NodeRef::new(NodeType::Artwork, i);
    let au = NodeRef::new(NodeType::Author, 0);
    let ty = |i| NodeRef::new(NodeType::Type, i);
    let sc = NodeRef::new(NodeType::School, 0);
    let edges = [
        (a(0), au),
        (a(1), au),
        (a(0), ty(0)),
        (a(1), ty(1)),
        (a(0), sc),
        (a(1), sc),
        (au, ty(0)),
        (au, ty(1)),
        (au, sc),
        (ty(0), sc),
        (ty(1), sc),
    ];
    let paths = vec![
        MetaPath::parse("Artwork-Author-Artwork").unwrap(),
        MetaPath::parse("Artwork-Type-Artwork").unwrap(),
    ];
    HeteroGraph::from_parts(tables, edges, paths, String::new())
}

fn encoder(graph: &HeteroGraph, cfg: HanConfig, seed: u64) -> (HanEncoder, ParamStore<f64>) {
    let mut store = ParamStore::new();
    let enc = HanEncoder::new(graph, cfg, &mut store, &mut Initializer::new(seed)).unwrap();
    (enc, store)
}

fn forward_values(enc: &HanEncoder, store: &ParamStore<f64>) -> (Tensor<f64>, Vec<Tensor<f64>>) {
    let mut tape = Tape::new();
    let bound = store.bind_frozen(&mut tape);
    let out = enc.forward(&mut tape, &bound).unwrap();
    (tape.value(out.v_all).clone(), out.semantic.iter().map(|e| tape.value(*e).clone()).collect())
}

#[test]
fn typewise_projection_matches_loop() {
    let g = six_node_graph();
    let (enc, store) = encoder(&g, small_config(2, 2), 3);
    let mut tape = Tape::new();
    let bound = store.bind_frozen(&mut tape);
    let h = enc.typewise_project(&mut tape, &bound).unwrap();
    let h = tape.value(h).clone();
    assert_eq!(h.shape(), &[6, 4]);
    for n in g.nodes() {
        let f = enc.type_ffn(n.ty).unwrap();
        let w = &store.get(f.w).tensor;
        let b = &store.get(f.b).tensor;
        let x = g.embedding(n);
        let y: Vec<f64> = (0..4).map(|c| (0..x.len()).map(|k| x[k] * w.get2(k, c)).sum::<f64>() + b.data()[c]).collect();
        let mean = y.iter().sum::<f64>() / 4.0;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        for c in 0..4 {
            let want = (y[c] - mean) / (var + 1e-5).sqrt();
            assert!((h.get2(g.global(n), c) - want).abs() < 1e-10);
        }
    }
}

#[test]
fn identity_projection_is_layer_norm() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(t(1, 2, &[3.0, 1.0]));
    let w = tape.constant(t(2, 2, &[1.0, 0.0, 0.0, 1.0]));
    let b = tape.constant(Tensor::zeros(&[2]));
    let y = tape.linear(x, w, b).unwrap();
    let g = tape.constant(Tensor::filled(&[2], 1.0));
    let z = tape.layer_norm(y, g, b, 0.0).unwrap();
    assert_eq!(tape.value(z).data(), &[1.0, -1.0]);
}

#[test]
fn encoder_attention_rows_and_weights_are_distributions() {
    for seed in 0..10 {
        let g = random_graph(30, seed);
        let (enc, store) = encoder(&g, small_config(2, 3), seed);
        let mut tape = Tape::new();
        let bound = store.bind_frozen(&mut tape);
        let out = enc.forward(&mut tape, &bound).unwrap();
        assert_eq!(tape.shape(out.v_all), &[g.num_nodes(), 6]);
        for (p, per_head) in out.attention[0].iter().enumerate() {
            let nb = &enc.neighborhoods()[p];
            for a in per_head {
                let alpha = tape.value(*a);
                for w in nb.offsets.windows(2) {
                    let s: f64 = alpha.data()[w[0]..w[1]].iter().sum();
                    assert!((s - 1.0).abs() < 1e-9);
                }
            }
        }
        for e in &out.semantic {
            let e = tape.value(*e);
            assert!(e.data().iter().all(|x| (0.0..=1.0).contains(x)));
            assert!((e.data().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn encoder_passes_grad_check() {
    let g = six_node_graph();
    let (enc, store) = encoder(&g, small_config(2, 2), 9);
    let tensors = store.tensors();
    let report = grad_check(
        |tape: &mut Tape<f64>, vars: &[Var]| -> Result<Var, HanError> {
            let bound = BoundParams::from_vars(vars.to_vec());
            let out = enc.forward(tape, &bound)?;
            let sq = tape.mul(out.v_all, out.v_all)?;
            let weights = tape.constant(Tensor::from_f64(&[6, 4], &(0..24).map(|i| 0.5 + (i % 5) as f64 * 0.3).collect::<Vec<_>>())?);
            let y = tape.mul(sq, weights)?;
            let y = tape.add(y, out.v_all)?;
            Ok(tape.sum_all(y))
        },
        &tensors,
        1e-6,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn permuting_storage_order_keeps_embeddings() {
    let g = six_node_graph();
    let (enc, store) = encoder(&g, small_config(2, 2), 4);
    let (v, _) = forward_values(&enc, &store);
    // reverse the artwork table and swap the two types
    let mut tables = g.tables().clone();
    tables[0].labels.reverse();
    tables[0].embeddings.reverse();
    tables[5].labels.reverse();
    tables[5].embeddings.reverse();
    let remap = |n: NodeRef| match n.ty {
        NodeType::Artwork | NodeType::Type => NodeRef::new(n.ty, 1 - n.index),
        _ => n,
    };
    let edges: Vec<_> = g.edges().iter().map(|e| (remap(e.a), remap(e.b))).collect();
    let h = HeteroGraph::from_parts(tables, edges, g.metapaths().to_vec(), String::new());
    let (enc2, _) = encoder(&h, small_config(2, 2), 4);
    let (v2, _) = forward_values(&enc2, &store);
    for n in g.nodes() {
        let m = remap(n);
        for c in 0..4 {
            assert!((v.get2(g.global(n), c) - v2.get2(h.global(m), c)).abs() < 1e-12);
        }
    }
}

fn record(author: &str, title: &str, type_: &str, school: &str) -> ArtworkRecord {
    let mut r = ArtworkRecord::bare("new", title);
    r.author = author.into();
    r.type_ = type_.into();
    r.school = school.into();
    r
}

#[test]
fn slots_use_nodes_and_fallbacks() {
    let g = six_node_graph();
    let text = HashingTextEmbedder { dim: 2, seed: 1 };
    let plan = plan_slots(&g, &text, &record("vermeer", "", "portrait", "Flemish"), 4);
    assert_eq!(plan.slots.len(), 10);
    assert_eq!(plan.slots[0], Slot::Node(g.global(NodeRef::new(NodeType::Author, 0))));
    assert_eq!(plan.slots[7], Slot::Node(g.global(NodeRef::new(NodeType::Type, 1))));
    assert_eq!(plan.slots[8], Slot::Zero);
    assert_eq!(plan.present().iter().filter(|p| **p).count(), 2);

    let plan = plan_slots(&g, &text, &record("Goya", "", "", ""), 4);
    assert_eq!(
        plan.slots[0],
        Slot::Fallback {
            ty: NodeType::Author,
            input: text.embed("Goya")
        }
    );
}

#[test]
fn fallback_slot_is_projected_provider_vector() {
    let g = six_node_graph();
    let (enc, store) = encoder(&g, small_config(2, 2), 2);
    let text = HashingTextEmbedder { dim: 2, seed: 1 };
    let plan = plan_slots(&g, &text, &record("Goya", "", "portrait", "Flemish"), 4);
    let mut tape = Tape::new();
    let bound = store.bind_frozen(&mut tape);
    let out = enc.forward(&mut tape, &bound).unwrap();
    let m = enc.slot_matrix(&mut tape, &bound, out.v_all, &plan).unwrap();
    let x = tape.constant(t(1, 2, &text.embed("Goya")));
    let direct = enc.project(&mut tape, &bound, NodeType::Author, x).unwrap();
    let (m, direct) = (tape.value(m).clone(), tape.value(direct).clone());
    assert_eq!(m.shape(), &[10, 4]);
    assert_eq!(m.row(0), direct.row(0));
    assert!(m.row(8).iter().all(|x| *x == 0.0));
    let v = tape.value(out.v_all);
    assert_eq!(m.row(7), v.row(g.global(NodeRef::new(NodeType::Type, 1))));
}

#[test]
fn config_validation() {
    assert!(HanConfig::default().validate().is_ok());
    let bad = HanConfig {
        hidden: 100,
        ..HanConfig::default()
    };
    assert!(bad.validate().is_err());
}

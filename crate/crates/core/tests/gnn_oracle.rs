#![allow(clippy::needless_range_loop)]

mod common;

use common::*;
use kragrec::embedding::{Embedder, HashEmbedder};
use kragrec::encoder::{GraphEncoder, Readout};
use kragrec::gnn::{forward, Aggregator, GnnWeights, LocalGraph};
use kragrec::indexing::{embed_kg_texts, index_kg};
use kragrec::kg::{ego_subgraph, KgBuilder};
use rand::seq::SliceRandom;
use rand::Rng;

fn max_abs_diff(a: &[f32], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, y)| (x as f64 - y).abs()).fold(0.0, f64::max)
}

#[test]
fn whole_graph_forward_matches_dense_reference() {
    for (seed, agg) in [(1, Aggregator::Attention), (2, Aggregator::Mean), (3, Aggregator::Attention)] {
        let mut r = rng(seed);
        let kg = random_kg(&mut r, 30, 3, 60);
        let e = HashEmbedder::new(16, 0, true);
        let (nodes, rels) = embed_kg_texts(&kg, &e).unwrap();
        let w = GnnWeights::seeded(small_gnn(2, 16, 16, 4, agg, seed)).unwrap();
        let got = forward(&w, &nodes, &rels, &LocalGraph::from_kg(&kg)).unwrap();
        let want = dense_forward(&w, &nodes, &rels, &kg_local_triples(&kg));
        for (l, (g, d)) in got.iter().zip(&want).enumerate() {
            for v in 0..kg.entity_count() {
                let diff = max_abs_diff(g.row(v), &d[v]);
                assert!(diff < 1e-5, "seed {seed} layer {} node {v}: {diff}", l + 1);
            }
        }
    }
}

#[test]
fn index_records_are_the_per_layer_states() {
    let mut r = rng(9);
    let kg = random_kg(&mut r, 25, 2, 40);
    let e = HashEmbedder::new(16, 3, true);
    let w = GnnWeights::seeded(small_gnn(3, 16, 8, 2, Aggregator::Attention, 5)).unwrap();
    let recs = index_kg(&kg, &e, &w).unwrap();
    let (nodes, rels) = embed_kg_texts(&kg, &e).unwrap();
    let want = dense_forward(&w, &nodes, &rels, &kg_local_triples(&kg));
    assert_eq!(recs.len(), 25 * 3);
    for rec in &recs {
        let d = &want[rec.key.layer as usize - 1][rec.key.center as usize];
        assert!(max_abs_diff(&rec.vector, d) < 1e-5, "{}", rec.key);
    }
}

#[test]
fn subgraph_encoding_matches_dense_reference() {
    let mut r = rng(21);
    let kg = random_kg(&mut r, 60, 3, 90);
    let e = HashEmbedder::new(16, 1, true);
    let w = GnnWeights::seeded(small_gnn(2, 16, 16, 4, Aggregator::Attention, 8)).unwrap();
    let enc = GraphEncoder::new(w.clone(), Readout::Mean);
    let (nodes, rels) = embed_kg_texts(&kg, &e).unwrap();
    for _ in 0..10 {
        let center = r.gen_range(0..60u32);
        let sg = ego_subgraph(&kg, center, r.gen_range(1..=2)).unwrap();
        let local = |id: u32| sg.nodes.iter().position(|&n| n == id).unwrap();
        let triples: Vec<_> = sg.edges.iter().map(|t| (local(t.head), t.relation, local(t.tail))).collect();
        let inputs: Vec<Vec<f32>> = sg.nodes.iter().map(|&n| nodes[n as usize].clone()).collect();
        let last = dense_forward(&w, &inputs, &rels, &triples).pop().unwrap();
        let mean: Vec<f64> = (0..16).map(|j| last.iter().map(|row| row[j]).sum::<f64>() / last.len() as f64).collect();
        let h = enc.encode_with(&sg, &nodes, &rels).unwrap();
        assert!(max_abs_diff(&h, &mean) < 1e-5);
        let h2 = enc.encode_subgraph(&kg, &sg, &e).unwrap();
        assert_eq!(h, h2);
    }
}

#[test]
fn single_node_identity_encoder_returns_projected_text() {
    let mut b = KgBuilder::new();
    b.entity("solo", "Blade Runner");
    let kg = b.build().0;
    let e = HashEmbedder::new(8, 0, true);
    let mut cfg = small_gnn(2, 8, 8, 1, Aggregator::Mean, 0);
    cfg.layer_norm = false;
    cfg.activation = kragrec::linalg::Activation::None;
    let enc = GraphEncoder::new(GnnWeights::identity(cfg).unwrap(), Readout::Mean);
    let sg = ego_subgraph(&kg, 0, 1).unwrap();
    assert_eq!(enc.encode_subgraph(&kg, &sg, &e).unwrap(), e.embed_text("Blade Runner").unwrap());
}

#[test]
fn relabeled_subgraph_encodes_identically() {
    let mut r = rng(33);
    let n = 20;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut r);
    let texts: Vec<String> = (0..n).map(|i| format!("entity text {i}")).collect();
    let edges: Vec<(usize, usize, usize)> = (0..35).map(|_| (r.gen_range(0..n), r.gen_range(0..2), r.gen_range(0..n))).collect();
    let build = |name: &dyn Fn(usize) -> String| {
        let mut b = KgBuilder::new();
        for (i, t) in texts.iter().enumerate() {
            b.entity(&name(i), t);
        }
        b.relation("r0", "directed by").relation("r1", "starring");
        for &(h, rel, t) in &edges {
            b.triple(&name(h), &format!("r{rel}"), &name(t));
        }
        b.build().0
    };
    let a = build(&|i| format!("n{i:02}"));
    let b = build(&|i| format!("n{:02}", perm[i]));
    let e = HashEmbedder::new(16, 0, true);
    let w = GnnWeights::seeded(small_gnn(2, 16, 16, 4, Aggregator::Attention, 4)).unwrap();
    let enc = GraphEncoder::new(w, Readout::Mean);
    for c in 0..n {
        let ca = a.entity_by_key(&format!("n{c:02}")).unwrap();
        let cb = b.entity_by_key(&format!("n{:02}", perm[c])).unwrap();
        let ha = enc.encode_subgraph(&a, &ego_subgraph(&a, ca, 2).unwrap(), &e).unwrap();
        let hb = enc.encode_subgraph(&b, &ego_subgraph(&b, cb, 2).unwrap(), &e).unwrap();
        let diff = ha.iter().zip(&hb).map(|(x, y)| (x - y).abs()).fold(0.0f32, f32::max);
        assert!(diff < 1e-5, "center {c}: {diff}");
    }
}

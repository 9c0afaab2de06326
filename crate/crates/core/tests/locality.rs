mod common;

use common::*;
use kragrec::embedding::{Embedder, HashEmbedder};
use kragrec::gnn::{Aggregator, GnnWeights};
use kragrec::indexing::{embed_kg_texts, index_with_embeddings};
use kragrec::kg::ego_subgraph;
use proptest::prelude::*;
use rand::Rng;

/// Perturbs one node's text and counts records that changed although the
/// node is farther than `layer` hops away.
fn locality_violations(seed: u64, n: usize) -> (usize, usize) {
    let mut r = rng(seed);
    let kg = random_kg(&mut r, n, 3, n * 2);
    let e = HashEmbedder::new(16, 0, true);
    let w = GnnWeights::seeded(small_gnn(3, 16, 16, 4, Aggregator::Attention, seed)).unwrap();
    let (mut nodes, rels) = embed_kg_texts(&kg, &e).unwrap();
    let before = index_with_embeddings(&kg, &nodes, &rels, &w).unwrap();
    let u = r.gen_range(0..n as u32);
    nodes[u as usize] = e.embed_text("an entirely different description").unwrap();
    let after = index_with_embeddings(&kg, &nodes, &rels, &w).unwrap();
    let dist = bfs(&kg, u, 3);
    let (mut violations, mut changed_near) = (0, 0);
    for (a, b) in before.iter().zip(&after) {
        assert_eq!(a.key, b.key);
        let near = dist.get(&a.key.center).is_some_and(|&d| d <= a.key.layer);
        if a.vector != b.vector {
            if near {
                changed_near += 1;
            } else {
                violations += 1;
            }
        }
    }
    (violations, changed_near)
}

#[test]
fn perturbation_stays_within_hop_field() {
    for seed in 0..10 {
        let (violations, changed) = locality_violations(seed, 80);
        assert_eq!(violations, 0, "seed {seed}");
        // the perturbed node's own records always move
        assert!(changed >= 3, "seed {seed}");
    }
}

#[test]
fn ego_network_matches_bfs_oracle() {
    let mut r = rng(50);
    for _ in 0..5 {
        let kg = random_kg(&mut r, 50, 2, 70);
        for c in 0..50u32 {
            for hop in 1..=3 {
                let sg = ego_subgraph(&kg, c, hop).unwrap();
                let want: Vec<u32> = bfs(&kg, c, hop).into_keys().collect();
                assert_eq!(sg.nodes, want);
                let induced: Vec<_> = kg.triples().iter().filter(|t| sg.contains(t.head) && sg.contains(t.tail)).copied().collect();
                assert_eq!(sg.edges, induced);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn ego_nodes_grow_with_hop(seed in 0u64..10_000, n in 2usize..40, c in 0usize..40) {
        let mut r = rng(seed);
        let kg = random_kg(&mut r, n, 2, n * 2);
        let c = (c % n) as u32;
        let mut prev = ego_subgraph(&kg, c, 1).unwrap().nodes;
        for hop in 2..=4 {
            let cur = ego_subgraph(&kg, c, hop).unwrap().nodes;
            prop_assert!(prev.iter().all(|x| cur.binary_search(x).is_ok()));
            prev = cur;
        }
    }
}

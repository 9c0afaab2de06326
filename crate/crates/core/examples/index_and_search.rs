//! Indexes every (entity, hop) subgraph of a toy KG and searches the store.

use kragrec::embedding::{Embedder, HashEmbedder};
use kragrec::encoder::textualize_subgraphs;
use kragrec::gnn::{Aggregator, GnnConfig, GnnWeights};
use kragrec::indexing::index_kg;
use kragrec::kg::{ego_subgraph, KgBuilder};
use kragrec::store::{Backend, Metric, VectorStore};

fn main() {
    let mut b = KgBuilder::new();
    b.entity("moonraker", "Moonraker")
        .entity("wood", "Christopher Wood")
        .entity("gilbert", "Lewis Gilbert")
        .entity("spy", "Spy Who Loved Me")
        .relation("writer", "film writer")
        .relation("director", "film director")
        .triple("moonraker", "writer", "wood")
        .triple("moonraker", "director", "gilbert")
        .triple("spy", "director", "gilbert")
        .triple("spy", "writer", "wood");
    let (kg, stats) = b.build();
    println!("{stats:?}");

    let embedder = HashEmbedder::new(32, 0, true);
    let gnn = GnnConfig { layers: 2, input_dim: 32, hidden: 32, heads: 4, aggregator: Aggregator::Attention, seed: 1, ..GnnConfig::default() };
    let weights = GnnWeights::seeded(gnn).expect("valid gnn config");
    let records = index_kg(&kg, &embedder, &weights).expect("index");
    println!("{} records ({} entities x {} hops)", records.len(), kg.entity_count(), 2);

    let store = VectorStore::new(32, Metric::Cosine, Backend::Exact);
    store.upsert(records).expect("upsert");

    let query = weights.project_input(&embedder.embed_text("Moonraker").expect("embed")).expect("project");
    for hit in store.topk(&query, 3, None).expect("search") {
        let sg = ego_subgraph(&kg, hit.key.center, hit.key.layer).expect("subgraph");
        let center = &kg.entity(hit.key.center).expect("entity").text;
        println!("{:.3} {center} hop {}: {}", hit.score, hit.key.layer, textualize_subgraphs(&kg, [&sg], 10));
    }
}

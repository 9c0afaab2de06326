//! Popularity-gated retrieval for one user: which history items trigger a
//! store lookup, what gets pooled, and what survives re-ranking.

use kragrec::embedding::HashEmbedder;
use kragrec::encoder::textualize_subgraphs;
use kragrec::eval::training_log;
use kragrec::gnn::{GnnConfig, GnnWeights};
use kragrec::indexing::index_kg;
use kragrec::kg::{compute_popularity, link_items};
use kragrec::retrieval::{RetrievalPolicyConfig, Retriever, UserHistory};
use kragrec::store::{Backend, Metric, VectorStore};
use kragrec::synth::{generate, SynthConfig};

fn main() {
    let data = generate(&SynthConfig { items: 150, entities: 600, triples: 2000, users: 30, seed: 3, ..SynthConfig::default() }).expect("synth");
    let kg = data.knowledge_graph();
    let mut items = data.item_table();
    link_items(&mut items, &kg).expect("link");
    let popularity = compute_popularity(&training_log(&data.interactions), &items);

    let embedder = HashEmbedder::new(32, 0, true);
    let weights = GnnWeights::seeded(GnnConfig { layers: 3, input_dim: 32, hidden: 32, seed: 3, ..GnnConfig::default() }).expect("gnn");
    let store = VectorStore::new(32, Metric::Cosine, Backend::Exact);
    store.upsert(index_kg(&kg, &embedder, &weights).expect("index")).expect("upsert");

    let policy = RetrievalPolicyConfig { p: 0.5, top_k: 2, top_n: 3, ..RetrievalPolicyConfig::default() };
    let retriever = Retriever { kg: &kg, items: &items, popularity: &popularity, store: &store, embedder: &embedder, index_weights: &weights, policy: &policy };

    let user = &data.interactions[0].user;
    let history: Vec<String> = data.interactions.iter().filter(|x| &x.user == user).map(|x| x.item.clone()).take(8).collect();
    let out = retriever.retrieve_for_history(&UserHistory { user: user.clone(), items: history }).expect("retrieve");
    for d in &out.decisions {
        println!("item {:>4}  percentile {:.3}  retrieve {}", d.item, d.percentile.unwrap_or(0.0), d.retrieve);
    }
    println!("{} lookups, {} pooled subgraphs", out.retrieval_calls(), out.pooled.len());

    let kept = retriever.rerank(&out.pooled, "Which of these films would this viewer enjoy next?").expect("rerank");
    let text = textualize_subgraphs(&kg, kept.iter().map(|k| &k.retrieved.subgraph), 8);
    println!("knowledge for the prompt:\n{text}");
}

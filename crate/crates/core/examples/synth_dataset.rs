//! Generates a small synthetic catalogue and reports how skewed it is.

use kragrec::eval::training_log;
use kragrec::kg::compute_popularity;
use kragrec::synth::{generate, SynthConfig};

fn main() {
    let cfg = SynthConfig { items: 200, entities: 1000, triples: 4000, users: 100, seed: 7, ..SynthConfig::default() };
    let data = generate(&cfg).expect("valid config");
    let kg = data.knowledge_graph();
    println!("{} entities, {} relations, {} triples", kg.entity_count(), kg.relations().len(), kg.triples().len());
    println!("{} items, {} interactions", data.items.len(), data.interactions.len());

    let items = data.item_table();
    let pop = compute_popularity(&training_log(&data.interactions), &items);
    let mut counts = pop.counts().to_vec();
    counts.sort_unstable_by(|a, b| b.cmp(a));
    let head: u64 = counts[..counts.len() / 5].iter().sum();
    let total: u64 = counts.iter().sum();
    println!("top 20% of items hold {:.1}% of training interactions", 100.0 * head as f64 / total as f64);

    for item in data.items.iter().take(3) {
        println!("  {} {:?}: {}", item.item_id, item.title, item.description);
    }
}

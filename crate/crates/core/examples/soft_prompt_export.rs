//! Encodes retrieved subgraphs with the graph encoder, projects them into
//! N soft-prompt tokens, and writes the export file.

use kragrec::embedding::HashEmbedder;
use kragrec::encoder::{build_soft_prompt, GraphEncoder, Projector, ProjectorConfig, Readout, SoftPrompt};
use kragrec::gnn::{GnnConfig, GnnWeights};
use kragrec::kg::{ego_subgraph, KgBuilder};

fn main() {
    let mut b = KgBuilder::new();
    b.entity("a", "Heat").entity("b", "Michael Mann").entity("c", "Collateral").entity("d", "crime film");
    b.relation("dir", "film director").relation("genre", "genre");
    b.triple("a", "dir", "b").triple("c", "dir", "b").triple("a", "genre", "d").triple("c", "genre", "d");
    let (kg, _) = b.build();

    let embedder = HashEmbedder::new(32, 0, true);
    let gnn = GnnWeights::seeded(GnnConfig { layers: 2, input_dim: 32, hidden: 32, seed: 9, ..GnnConfig::default() }).expect("gnn");
    let encoder = GraphEncoder::new(gnn, Readout::Mean);

    const N: usize = 5;
    let projector = Projector::seeded(N, encoder.hidden(), &ProjectorConfig { llm_dim: 64, hidden: 64, seed: 9, ..ProjectorConfig::default() }).expect("projector");

    // three retrieved subgraphs, best first; two slots stay padded
    let mut encoded = Vec::new();
    for (i, center) in [0u32, 2, 1].into_iter().enumerate() {
        let sg = ego_subgraph(&kg, center, 1).expect("subgraph");
        let h = encoder.encode_subgraph(&kg, &sg, &embedder).expect("encode");
        encoded.push((kragrec::indexing::SubgraphKey::new(center, 1), 1.0 - 0.1 * i as f32, h));
    }
    let sp = build_soft_prompt(&encoded, &projector).expect("soft prompt");
    println!("{} tokens x {} dims, mask {:?}", sp.n_tokens, sp.dim, sp.mask);

    let path = std::env::temp_dir().join("kragrec_example.ksp");
    sp.save(&path).expect("save");
    let back = SoftPrompt::load(&path).expect("load");
    assert_eq!(back, sp);
    println!("wrote {} ({} bytes), round trip exact", path.display(), std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0));
}

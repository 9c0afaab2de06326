//! The full pipeline on the shipped synthetic config: generate, index, and
//! run leave-one-out evaluation against a mock LLM. Artifacts go to a
//! temporary directory.

use kragrec::app::{cmd_evaluate, cmd_index, cmd_synth, format_report, LlmChoice, MockKind};
use kragrec::config::RunConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/synthetic.toml");
    let mut cfg = RunConfig::load(&config)?;
    let root = std::env::temp_dir().join("kragrec_example_run");
    cfg.paths.data = root.join("data");
    cfg.paths.artifacts = root.join("artifacts");

    let s = cmd_synth(&cfg)?;
    println!("synth: {} items, {} users, {} interactions", s.items, s.users, s.interactions);
    let i = cmd_index(&cfg)?;
    println!("index: {} records of dim {}", i.records, i.dim);
    let out = cmd_evaluate(&cfg, &LlmChoice::Mock(MockKind::Similarity))?;
    println!("{}", format_report(&out));
    println!("reports in {}", out.out_dir.display());
    Ok(())
}

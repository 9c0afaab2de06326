//! Talks to real embedding and chat endpoints. Set
//! `KRAGREC_EMBED_ENDPOINT` and/or `KRAGREC_LLM_ENDPOINT` (plus
//! `KRAGREC_LLM_MODEL`); bearer tokens come from `KRAGREC_EMBED_API_KEY`
//! and `KRAGREC_LLM_API_KEY`. Without endpoints the example only prints
//! the configuration it would use.

use kragrec::embedding::{Embedder, EmbedderConfig, EmbedderMode, RemoteEmbedder};
use kragrec::llm::{build_prompt, interpret, ChatClient, CompletionRequest, Domain, LanguageModel, LlmConfig};

fn main() {
    let embed = EmbedderConfig { mode: EmbedderMode::Remote, endpoint: std::env::var("KRAGREC_EMBED_ENDPOINT").ok(), ..EmbedderConfig::default() };
    match &embed.endpoint {
        Some(url) => {
            let e = RemoteEmbedder::from_config(&embed).expect("embedder config");
            match e.embed_text("Moonraker") {
                Ok(v) => println!("embedding from {url}: {} dims", v.len()),
                Err(err) => println!("embedding from {url} failed: {err}"),
            }
        }
        None => println!("no KRAGREC_EMBED_ENDPOINT; embedder would use {embed:?}"),
    }

    let llm = LlmConfig {
        endpoint: std::env::var("KRAGREC_LLM_ENDPOINT").ok(),
        model: std::env::var("KRAGREC_LLM_MODEL").unwrap_or_default(),
        rank_top: 3,
        ..LlmConfig::default()
    };
    let Some(url) = llm.endpoint.clone() else {
        println!("no KRAGREC_LLM_ENDPOINT; chat client would read its token from ${}", llm.api_key_env);
        return;
    };
    let client = ChatClient::from_config(&llm).expect("llm config");
    let history = vec!["Moonraker".to_string(), "Goldfinger".to_string()];
    let options = vec!["Dr. No".to_string(), "Notting Hill".to_string(), "Heat".to_string()];
    let prompt = build_prompt(&history, &options, options.len(), Domain::Movies, None).expect("prompt");
    match client.complete(&CompletionRequest { tag: "example", prompt: &prompt, soft_prompt: None }) {
        Ok(c) => println!("{url} answered {:?}; parsed {:?}", c.text, interpret(&c, &options).map(|d| d.ranking)),
        Err(err) => println!("{url} failed: {err}"),
    }
}

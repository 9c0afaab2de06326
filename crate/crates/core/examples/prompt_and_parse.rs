//! Renders a recommendation prompt, answers it with mock models and reads
//! the answers back as candidate rankings.

use kragrec::llm::{build_prompt, interpret, CompletionRequest, Domain, LanguageModel, MockLlm, MockPolicy};

fn main() {
    let history: Vec<String> = ["Moonraker", "Goldfinger", "Thunderball"].iter().map(|s| s.to_string()).collect();
    let options: Vec<String> = ["Dr. No", "Notting Hill", "Octopussy", "Heat"].iter().map(|s| s.to_string()).collect();
    let knowledge = "{Moonraker, film director, Lewis Gilbert} {Octopussy, film series, James Bond}";
    let prompt = build_prompt(&history, &options, options.len(), Domain::Movies, Some(knowledge)).expect("prompt");
    println!("{}\n", prompt.text);

    let models = [
        ("always first", MockLlm::new(MockPolicy::AlwaysFirst)),
        ("scripted", MockLlm::scripted([("u1", "I would pick Octopussy.")], "C")),
        ("numbered list", MockLlm::scripted([("u1", "1. C\n2. A\n3. D")], "A")),
    ];
    for (name, llm) in &models {
        let c = llm.complete(&CompletionRequest { tag: "u1", prompt: &prompt, soft_prompt: None }).expect("mock never fails");
        match interpret(&c, &options) {
            Ok(d) => {
                let ranked: Vec<&str> = d.ranking.iter().map(|&i| options[i].as_str()).collect();
                println!("{name:>13}: {:?} -> {ranked:?}", c.text);
            }
            Err(_) => println!("{name:>13}: {:?} -> unparseable", c.text),
        }
    }
}

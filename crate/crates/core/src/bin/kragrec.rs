use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kragrec::app::{self, AppError, LlmChoice, MockKind, Overrides, RetrieveTarget};

#[derive(Parser)]
#[command(name = "kragrec", version, about = "Knowledge-graph retrieval-augmented recommendation")]
struct Cli {
    #[arg(long, global = true, default_value = "kragrec.toml")]
    config: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Popularity percentile threshold.
    #[arg(long, global = true)]
    p: Option<f64>,
    #[arg(long, global = true)]
    top_k: Option<usize>,
    #[arg(long, global = true)]
    top_n: Option<usize>,
    /// Candidates per prompt.
    #[arg(long, global = true)]
    m: Option<usize>,
    /// always-first, similarity or scripted=PATH
    #[arg(long, global = true)]
    mock_llm: Option<MockKind>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset into the data directory.
    Synth,
    /// Build the subgraph vector store.
    Index,
    /// Show retrieval and re-ranking for one user or an explicit history.
    Retrieve {
        #[arg(long, conflicts_with = "history", required_unless_present = "history")]
        user: Option<String>,
        /// Comma-separated item ids, oldest first.
        #[arg(long, value_delimiter = ',')]
        history: Option<Vec<String>>,
    },
    /// Ask the LLM for one user's next item.
    Recommend {
        #[arg(long)]
        user: String,
    },
    /// Leave-one-out evaluation over all eligible users.
    Evaluate,
}

// Write errors (a closed pipe) are ignored rather than panicking.
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn print_json<T: serde::Serialize>(v: &T) {
    emit(&format!("{}\n", serde_json::to_string_pretty(v).expect("serializable")));
}

fn run(cli: Cli) -> Result<(), AppError> {
    let overrides = Overrides { seed: cli.seed, p: cli.p, top_k: cli.top_k, top_n: cli.top_n, m: cli.m };
    let cfg = app::load_config(&cli.config, &overrides)?;
    let llm = cli.mock_llm.map_or(LlmChoice::Remote, LlmChoice::Mock);
    match cli.command {
        Command::Synth => print_json(&app::cmd_synth(&cfg)?),
        Command::Index => print_json(&app::cmd_index(&cfg)?),
        Command::Retrieve { user, history } => {
            let target = match (user, history) {
                (Some(u), _) => RetrieveTarget::User(u),
                (None, Some(h)) => RetrieveTarget::History(h),
                (None, None) => unreachable!("clap requires one of them"),
            };
            print_json(&app::cmd_retrieve(&cfg, &target)?)
        }
        Command::Recommend { user } => print_json(&app::cmd_recommend(&cfg, &user, &llm)?),
        Command::Evaluate => {
            let out = app::cmd_evaluate(&cfg, &llm)?;
            emit(&app::format_report(&out));
            emit(&format!("reports written to {}\n", out.out_dir.display()));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

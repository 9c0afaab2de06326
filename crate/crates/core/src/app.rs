//! Subcommand implementations shared by the `kragrec` binary and the
//! examples: `synth`, `index`, `retrieve`, `recommend`, `evaluate`.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::embedding::{EmbedError, Embedder};
use crate::encoder::{textualize_subgraphs, EncodeError, GraphEncoder, Projector};
use crate::eval::{
    build_eval_instances, derive_seed, evaluate, hallucination_probe, sample_negatives, training_log, EvalError,
    EvalInstance, FictionalInjector, InstanceStats, MetricsReport, ProbeReport, TimingReport,
};
use crate::gnn::{GnnError, GnnWeights};
use crate::indexing::{index_kg, IndexError, SubgraphKey};
use crate::kg::{
    compute_popularity, link_items, load_attributes, load_interactions, load_items, load_triples, Interaction, ItemTable,
    KgError, KnowledgeGraph, LinkReport,
};
use crate::linalg::cosine;
use crate::llm::{
    build_prompt, ChatClient, LanguageModel, LlmError, LlmMode, MockLlm, MockPolicy, RecommendationPrompt, ScoreFn,
};
use crate::pipeline::{KRagRec, KRagRecParts, PipelineError};
use crate::retrieval::{ItemRetrieval, PolicyDecision, RetrievalError};
use crate::store::{StoreError, VectorStore};
use crate::synth::{generate, SynthError};

#[derive(Debug, Error)]
pub enum AppError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("remote service: {0}")]
    Remote(String),
}

impl AppError {
    /// 1 usage/config, 2 data, 3 remote service.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) | AppError::Usage(_) => 1,
            AppError::Data(_) => 2,
            AppError::Remote(_) => 3,
        }
    }
}

fn data<E: std::fmt::Display>(e: E) -> AppError {
    AppError::Data(e.to_string())
}

impl From<KgError> for AppError {
    fn from(e: KgError) -> Self {
        data(e)
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        data(e)
    }
}

impl From<EmbedError> for AppError {
    fn from(e: EmbedError) -> Self {
        match e {
            EmbedError::Config(_) => AppError::Usage(e.to_string()),
            EmbedError::Cache(_) => data(e),
            _ => AppError::Remote(e.to_string()),
        }
    }
}

impl From<LlmError> for AppError {
    fn from(e: LlmError) -> Self {
        if e.is_remote() {
            AppError::Remote(e.to_string())
        } else if matches!(e, LlmError::Audit(_)) {
            data(e)
        } else {
            AppError::Usage(e.to_string())
        }
    }
}

impl From<GnnError> for AppError {
    fn from(e: GnnError) -> Self {
        data(e)
    }
}

impl From<StoreError> for AppError {
    fn from(e: StoreError) -> Self {
        data(e)
    }
}

impl From<IndexError> for AppError {
    fn from(e: IndexError) -> Self {
        match e {
            IndexError::Embed(e) => e.into(),
            IndexError::Gnn(e) => e.into(),
        }
    }
}

impl From<RetrievalError> for AppError {
    fn from(e: RetrievalError) -> Self {
        match e {
            RetrievalError::Embed(e) => e.into(),
            other => data(other),
        }
    }
}

impl From<EncodeError> for AppError {
    fn from(e: EncodeError) -> Self {
        match e {
            EncodeError::Embed(e) => e.into(),
            other => data(other),
        }
    }
}

impl From<PipelineError> for AppError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Retrieval(e) => e.into(),
            PipelineError::Encode(e) => e.into(),
            PipelineError::Llm(e) => e.into(),
            PipelineError::Embed(e) => e.into(),
            PipelineError::Setup(m) => AppError::Usage(m),
        }
    }
}

impl From<EvalError> for AppError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Config(_) => AppError::Usage(e.to_string()),
            other => data(other),
        }
    }
}

impl From<SynthError> for AppError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Config(_) => AppError::Usage(e.to_string()),
            other => data(other),
        }
    }
}

/// Flag overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub p: Option<f64>,
    pub top_k: Option<usize>,
    pub top_n: Option<usize>,
    pub m: Option<usize>,
}

pub fn load_config(path: &Path, o: &Overrides) -> Result<RunConfig, AppError> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(p) = o.p {
        cfg.retrieval.p = p;
    }
    if let Some(k) = o.top_k {
        cfg.retrieval.top_k = k;
    }
    if let Some(n) = o.top_n {
        cfg.retrieval.top_n = n;
    }
    if let Some(m) = o.m {
        cfg.eval.m = m;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Which language model answers prompts.
#[derive(Debug, Clone, PartialEq)]
pub enum LlmChoice {
    Remote,
    Mock(MockKind),
}

#[derive(Debug, Clone, PartialEq)]
pub enum MockKind {
    AlwaysFirst,
    /// Ranks options by embedding similarity to the history and knowledge.
    Similarity,
    /// JSON object `{user: response}` read from a file.
    Scripted(PathBuf),
}

impl std::str::FromStr for MockKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "always-first" => Ok(MockKind::AlwaysFirst),
            "similarity" => Ok(MockKind::Similarity),
            _ => match s.strip_prefix("scripted=") {
                Some(p) if !p.is_empty() => Ok(MockKind::Scripted(PathBuf::from(p))),
                _ => Err(format!("unknown mock policy {s:?}; use always-first, similarity or scripted=PATH")),
            },
        }
    }
}

pub fn similarity_scores(embedder: Arc<dyn Embedder>) -> ScoreFn {
    Arc::new(move |p: &RecommendationPrompt, i: usize| {
        let mut context = p.history.join("; ");
        if let Some(k) = &p.knowledge {
            context.push_str("; ");
            context.push_str(k);
        }
        match (embedder.embed_text(&context), embedder.embed_text(&p.candidates[i])) {
            (Ok(a), Ok(b)) => cosine(&a, &b),
            _ => 0.0,
        }
    })
}

pub fn build_llm(cfg: &RunConfig, choice: &LlmChoice, embedder: Arc<dyn Embedder>) -> Result<Arc<dyn LanguageModel>, AppError> {
    Ok(match choice {
        LlmChoice::Remote => {
            if cfg.llm.endpoint.is_none() {
                return Err(AppError::Usage("llm.endpoint is not set; configure it or pass --mock-llm".into()));
            }
            Arc::new(ChatClient::from_config(&cfg.llm)?)
        }
        LlmChoice::Mock(MockKind::AlwaysFirst) => Arc::new(MockLlm::new(MockPolicy::AlwaysFirst)),
        LlmChoice::Mock(MockKind::Similarity) => Arc::new(MockLlm::new(MockPolicy::InjectedScores(similarity_scores(embedder)))),
        LlmChoice::Mock(MockKind::Scripted(path)) => {
            let text = fs::read_to_string(path).map_err(|e| AppError::Usage(format!("{}: {e}", path.display())))?;
            let map: std::collections::HashMap<String, String> =
                serde_json::from_str(&text).map_err(|e| AppError::Usage(format!("{}: {e}", path.display())))?;
            Arc::new(MockLlm::scripted(map, ""))
        }
    })
}

fn open(path: &Path) -> Result<BufReader<File>, AppError> {
    File::open(path).map(BufReader::new).map_err(|e| AppError::Data(format!("{}: {e}", path.display())))
}

#[derive(Debug)]
pub struct Dataset {
    pub kg: KnowledgeGraph,
    pub items: ItemTable,
    pub interactions: Vec<Interaction>,
    pub link: LinkReport,
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset, AppError> {
    let p = &cfg.paths;
    let ents = if p.entities().exists() { load_attributes(open(&p.entities())?)? } else { Default::default() };
    let rels = if p.relations().exists() { load_attributes(open(&p.relations())?)? } else { Default::default() };
    let (mut kg, _) = load_triples(open(&p.triples())?, &ents, &rels)?;
    let mut items = load_items(open(&p.items())?)?;
    let mut link = link_items(&mut items, &kg)?;
    if let Some(radius) = cfg.kg.item_radius {
        let seeds: Vec<u32> = items.iter().filter_map(|i| i.entity_id).collect();
        kg = kg.restrict_to_radius(&seeds, radius);
        link = link_items(&mut items, &kg)?;
        log::info!("kept {} entities within {radius} hops of items", kg.entity_count());
    }
    let interactions = load_interactions(open(&p.interactions())?)?;
    Ok(Dataset { kg, items, interactions, link })
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthSummary {
    pub dir: PathBuf,
    pub seed: u64,
    pub entities: usize,
    pub triples: usize,
    pub items: usize,
    pub users: usize,
    pub interactions: usize,
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<SynthSummary, AppError> {
    let sc = cfg.synth_config();
    let d = generate(&sc)?;
    d.write_dir(&cfg.paths.data)?;
    Ok(SynthSummary {
        dir: cfg.paths.data.clone(),
        seed: sc.seed,
        entities: d.entities.len(),
        triples: d.triples.len(),
        items: d.items.len(),
        users: sc.users,
        interactions: d.interactions.len(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct IndexSummary {
    pub entities: usize,
    pub relations: usize,
    pub triples: usize,
    pub layers: usize,
    pub records: usize,
    pub dim: usize,
    pub linked_items: usize,
    pub unlinked_items: usize,
    pub store: PathBuf,
    pub weights: PathBuf,
}

pub fn cmd_index(cfg: &RunConfig) -> Result<IndexSummary, AppError> {
    let ds = load_dataset(cfg)?;
    let embedder = cfg.embedder.build()?;
    fs::create_dir_all(&cfg.paths.artifacts)?;
    let weights = GnnWeights::load_or_seed(cfg.paths.index_weights(), &cfg.index_gnn())?;
    let records = index_kg(&ds.kg, embedder.as_ref(), &weights)?;
    let store = VectorStore::with_hnsw(cfg.index.hidden, cfg.store.metric, cfg.store.backend, cfg.store.hnsw);
    let n = store.upsert(records)?;
    store.save(cfg.paths.store())?;
    // Every weight file is materialized here so later subcommands only read.
    GnnWeights::load_or_seed(cfg.paths.encoder_weights(), &cfg.encoder_gnn())?;
    if cfg.llm.mode == LlmMode::SoftPromptExport {
        projector_load_or_seed(&cfg.paths.projector_weights(), cfg.retrieval.top_n, cfg.encoder.hidden, cfg)?;
    }
    Ok(IndexSummary {
        entities: ds.kg.entity_count(),
        relations: ds.kg.relations().len(),
        triples: ds.kg.triples().len(),
        layers: cfg.index.layers,
        records: n,
        dim: store.dim(),
        linked_items: ds.link.linked,
        unlinked_items: ds.link.unlinked.len(),
        store: cfg.paths.store(),
        weights: cfg.paths.index_weights(),
    })
}

fn projector_load_or_seed(path: &Path, n: usize, width: usize, cfg: &RunConfig) -> Result<Projector, AppError> {
    if path.exists() {
        let p = Projector::load(path)?;
        if p.n_tokens() != n || p.input_width() != n * width || p.llm_dim() != cfg.projector.llm_dim {
            return Err(AppError::Data(format!("projector at {} does not match the configured shape", path.display())));
        }
        return Ok(p);
    }
    let fresh = Projector::seeded(n, width, &cfg.projector_config())?;
    fresh.save(path)?;
    Ok(fresh)
}

/// Loaded artifacts plus the evaluation instances they serve.
pub struct Session {
    pub pipeline: KRagRec,
    pub instances: Vec<EvalInstance>,
    pub stats: InstanceStats,
}

pub fn open_session(cfg: &RunConfig, llm: &LlmChoice) -> Result<Session, AppError> {
    let ds = load_dataset(cfg)?;
    let embedder = cfg.embedder.build()?;
    let missing = |p: PathBuf| AppError::Data(format!("{} is missing; run `index` first", p.display()));
    if !cfg.paths.index_weights().exists() {
        return Err(missing(cfg.paths.index_weights()));
    }
    if !cfg.paths.store().exists() {
        return Err(missing(cfg.paths.store()));
    }
    let index_weights = GnnWeights::load(cfg.paths.index_weights())?;
    if index_weights.config() != &cfg.index_gnn() {
        return Err(AppError::Data("indexing weights do not match the config; rerun `index`".into()));
    }
    let store = VectorStore::load(cfg.paths.store())?;
    let (instances, stats) = build_eval_instances(&ds.interactions, &ds.items, cfg.eval.m, cfg.eval.history_len, cfg.eval_seed())?;
    let popularity = compute_popularity(&training_log(&ds.interactions), &ds.items);
    let encoder_weights = GnnWeights::load_or_seed(cfg.paths.encoder_weights(), &cfg.encoder_gnn())?;
    let projector = if cfg.llm.mode == LlmMode::SoftPromptExport {
        Some(projector_load_or_seed(&cfg.paths.projector_weights(), cfg.retrieval.top_n, cfg.encoder.hidden, cfg)?)
    } else {
        None
    };
    let model = build_llm(cfg, llm, embedder.clone())?;
    let pipeline = KRagRec::new(KRagRecParts {
        kg: ds.kg,
        items: ds.items,
        popularity,
        store,
        embedder,
        index_weights,
        encoder: GraphEncoder::new(encoder_weights, cfg.encoder.readout),
        projector,
        policy: cfg.retrieval.clone(),
        llm: model,
        llm_config: cfg.llm.clone(),
        soft_prompt_dir: (cfg.llm.mode == LlmMode::SoftPromptExport).then(|| cfg.paths.soft_prompts()),
    })?;
    Ok(Session { pipeline, instances, stats })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RetrieveTarget {
    User(String),
    History(Vec<String>),
}

#[derive(Debug, Clone, Serialize)]
pub struct PooledEntry {
    pub key: SubgraphKey,
    pub score: f32,
    pub source_item: String,
    pub nodes: usize,
    pub edges: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct KeptEntry {
    pub key: SubgraphKey,
    pub center: String,
    pub score: f32,
    pub rerank_score: f32,
    pub triples: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RetrieveTrace {
    pub user: String,
    pub history: Vec<String>,
    pub decisions: Vec<PolicyDecision>,
    pub per_item: Vec<ItemRetrieval>,
    pub pooled: Vec<PooledEntry>,
    pub kept: Vec<KeptEntry>,
}

fn instance_for(session: &Session, cfg: &RunConfig, target: &RetrieveTarget) -> Result<EvalInstance, AppError> {
    match target {
        RetrieveTarget::User(u) => session
            .instances
            .iter()
            .find(|i| &i.user == u)
            .cloned()
            .ok_or_else(|| AppError::Usage(format!("user {u:?} has no evaluation instance"))),
        RetrieveTarget::History(ids) => {
            let items = &session.pipeline.items;
            let history = ids
                .iter()
                .map(|id| {
                    items
                        .get(id)
                        .map(|it| crate::eval::Candidate { item_id: it.item_id.clone(), title: it.title.clone(), fictional: false })
                        .ok_or_else(|| AppError::Usage(format!("item {id:?} is not in the catalogue")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            if history.is_empty() {
                return Err(AppError::Usage("history is empty".into()));
            }
            let exclude = ids.iter().map(String::as_str).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.eval_seed(), "cli"));
            let candidates = sample_negatives(items, &exclude, cfg.eval.m, &mut rng)
                .ok_or_else(|| AppError::Data("catalogue too small for the candidate list".into()))?;
            Ok(EvalInstance { user: "cli".into(), history, candidates, target: 0 })
        }
    }
}

pub fn cmd_retrieve(cfg: &RunConfig, target: &RetrieveTarget) -> Result<RetrieveTrace, AppError> {
    let session = open_session(cfg, &LlmChoice::Mock(MockKind::AlwaysFirst))?;
    let inst = instance_for(&session, cfg, target)?;
    let p = &session.pipeline;
    let ids: Vec<String> = inst.history.iter().map(|c| c.item_id.clone()).collect();
    let titles: Vec<String> = inst.history.iter().map(|c| c.title.clone()).collect();
    let cands: Vec<String> = inst.candidates.iter().map(|c| c.title.clone()).collect();
    let prompt = build_prompt(&titles, &cands, cands.len(), cfg.llm.domain, None)?;
    let (pooled, ranked) = p.retrieve(&inst.user, &ids, &prompt.text)?;
    let kept = ranked
        .iter()
        .map(|r| KeptEntry {
            key: r.retrieved.key,
            center: p.kg.entity(r.retrieved.key.center).map(|e| e.text.clone()).unwrap_or_default(),
            score: r.retrieved.score,
            rerank_score: r.rerank_score,
            triples: textualize_subgraphs(&p.kg, [&r.retrieved.subgraph], cfg.llm.max_knowledge_triples)
                .lines()
                .map(str::to_owned)
                .collect(),
        })
        .collect();
    Ok(RetrieveTrace {
        user: inst.user.clone(),
        history: ids,
        decisions: pooled.decisions,
        per_item: pooled.per_item,
        pooled: pooled
            .pooled
            .iter()
            .map(|r| PooledEntry {
                key: r.key,
                score: r.score,
                source_item: r.source_item.clone(),
                nodes: r.subgraph.nodes.len(),
                edges: r.subgraph.edges.len(),
            })
            .collect(),
        kept,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RecommendOutput {
    pub user: String,
    pub prompt: String,
    pub response: String,
    pub choice: Option<String>,
    pub choice_title: Option<String>,
    pub ranking: Vec<String>,
    pub provenance: Option<crate::llm::Provenance>,
    pub held_out_target: String,
    pub correct: bool,
    pub kept: Vec<SubgraphKey>,
    pub soft_prompt: Option<PathBuf>,
}

pub fn cmd_recommend(cfg: &RunConfig, user: &str, llm: &LlmChoice) -> Result<RecommendOutput, AppError> {
    use crate::pipeline::Recommender;
    let session = open_session(cfg, llm)?;
    let inst = instance_for(&session, cfg, &RetrieveTarget::User(user.to_owned()))?;
    let rec = session.pipeline.recommend(&inst)?;
    let d = rec.distribution.as_ref();
    Ok(RecommendOutput {
        user: inst.user.clone(),
        prompt: rec.prompt.clone(),
        response: rec.response.clone(),
        choice: d.map(|d| crate::llm::label(d.top())),
        choice_title: d.map(|d| inst.candidates[d.top()].title.clone()),
        ranking: d.map(|d| d.ranking.iter().map(|&i| crate::llm::label(i)).collect()).unwrap_or_default(),
        provenance: d.map(|d| d.provenance),
        held_out_target: inst.target_item().title.clone(),
        correct: d.is_some_and(|d| d.top() == inst.target),
        kept: rec.kept.clone(),
        soft_prompt: rec.soft_prompt.clone(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct EvaluateOutput {
    pub metrics: MetricsReport,
    pub timing: TimingReport,
    pub probe: Option<ProbeReport>,
    pub stats: InstanceStats,
    pub out_dir: PathBuf,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), AppError> {
    let mut text = serde_json::to_string_pretty(value).map_err(data)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Writes `metrics.json` (deterministic), `timing.json` (wall-clock) and
/// `traces.jsonl` under `<artifacts>/eval`.
pub fn cmd_evaluate(cfg: &RunConfig, llm: &LlmChoice) -> Result<EvaluateOutput, AppError> {
    let session = open_session(cfg, llm)?;
    let mut instances = session.instances;
    if cfg.eval.max_instances > 0 {
        instances.truncate(cfg.eval.max_instances);
    }
    let result = evaluate(&instances, &session.pipeline, &cfg.eval.ks);
    let mut metrics = result.metrics;
    metrics.skipped_users = session.stats.skipped_short + session.stats.skipped_unknown;
    let probe = if cfg.eval.fictional_per_instance > 0 {
        let injector = FictionalInjector::new(cfg.eval.fictional_per_instance, derive_seed(cfg.seed, "fictional"));
        let r = hallucination_probe(&instances, &injector, &session.pipeline.items, Some(&session.pipeline.kg), &session.pipeline)?;
        metrics.hallucination_rate = Some(r.rate);
        Some(r)
    } else {
        None
    };
    let out_dir = cfg.paths.artifacts.join("eval");
    fs::create_dir_all(&out_dir)?;
    #[derive(Serialize)]
    struct MetricsFile<'a> {
        seed: u64,
        mode: LlmMode,
        llm: String,
        policy: &'a crate::retrieval::RetrievalPolicyConfig,
        m: usize,
        instance_stats: InstanceStats,
        metrics: &'a MetricsReport,
        probe: &'a Option<ProbeReport>,
    }
    write_json(
        &out_dir.join("metrics.json"),
        &MetricsFile {
            seed: cfg.seed,
            mode: cfg.llm.mode,
            llm: match llm {
                LlmChoice::Remote => format!("remote:{}", cfg.llm.model),
                LlmChoice::Mock(k) => format!("mock:{k:?}").to_lowercase(),
            },
            policy: &cfg.retrieval,
            m: cfg.eval.m,
            instance_stats: session.stats,
            metrics: &metrics,
            probe: &probe,
        },
    )?;
    write_json(&out_dir.join("timing.json"), &result.timing)?;
    let mut w = BufWriter::new(File::create(out_dir.join("traces.jsonl"))?);
    for t in &result.traces {
        serde_json::to_writer(&mut w, t).map_err(data)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(EvaluateOutput { metrics, timing: result.timing, probe, stats: session.stats, out_dir })
}

/// Human-readable summary of an evaluation.
pub fn format_report(out: &EvaluateOutput) -> String {
    let m = &out.metrics;
    let mut s = String::new();
    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_owned(), |x| format!("{x:.4}"));
    s.push_str(&format!("{:<22}{}\n", "instances", m.instances));
    s.push_str(&format!("{:<22}{}\n", "skipped users", m.skipped_users));
    s.push_str(&format!("{:<22}{:.4}\n", "ACC", m.acc));
    for r in &m.recall {
        s.push_str(&format!("{:<22}{}\n", format!("Recall@{}", r.k), fmt(r.value)));
    }
    s.push_str(&format!("{:<22}{}\n", "unparseable", m.unparseable));
    s.push_str(&format!("{:<22}{}\n", "failures", m.failures));
    s.push_str(&format!("{:<22}{}\n", "hallucination rate", fmt(m.hallucination_rate)));
    s.push_str(&format!("{:<22}{} ({:.1}% of history positions)\n", "retrieval calls", m.retrieval_calls, m.retrieval_rate * 100.0));
    let t = &out.timing;
    for (name, l) in [("retrieval", t.retrieval), ("encoding", t.encoding), ("llm", t.llm), ("total", t.total)] {
        s.push_str(&format!("{:<22}mean {:.3} ms  p95 {:.3} ms\n", format!("latency {name}"), l.mean_ms, l.p95_ms));
    }
    s
}

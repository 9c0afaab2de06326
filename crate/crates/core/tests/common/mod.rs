//! Oracles and fixtures shared by the integration tests. Everything here is
//! written independently of the library internals it checks: plain loops,
//! f64 arithmetic, no shared kernels.
#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::time::{Duration, Instant};

use kragrec::eval::EvalInstance;
use kragrec::gnn::{Aggregator, GnnConfig, GnnWeights};
use kragrec::indexing::SubgraphKey;
use kragrec::kg::{KgBuilder, KnowledgeGraph};
use kragrec::linalg::Activation;
use kragrec::llm::{build_prompt, interpret, CompletionRequest, Domain, LanguageModel};
use kragrec::pipeline::{PipelineError, Recommendation, Recommender, StageTimings};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

const WORDS: &[&str] = &[
    "amber", "basalt", "cedar", "delta", "ember", "fjord", "garnet", "harbor", "indigo", "juniper", "kestrel", "lagoon",
    "meadow", "nectar", "onyx", "prairie", "quartz", "raven", "sierra", "tundra", "umber", "violet", "willow", "zephyr",
];

/// Random KG with `n` entities `e000..`, `relations` relation types and
/// about `edges` distinct triples. Entity ids equal the numeric suffix.
pub fn random_kg(r: &mut ChaCha8Rng, n: usize, relations: usize, edges: usize) -> KnowledgeGraph {
    let mut b = KgBuilder::new();
    for i in 0..n {
        let text = format!("{} {} {i}", WORDS[r.gen_range(0..WORDS.len())], WORDS[r.gen_range(0..WORDS.len())]);
        b.entity(&format!("e{i:03}"), &text);
    }
    for k in 0..relations {
        b.relation(&format!("r{k}"), &format!("relation {}", WORDS[k % WORDS.len()]));
    }
    for _ in 0..edges {
        let h = r.gen_range(0..n);
        let t = r.gen_range(0..n);
        let rel = r.gen_range(0..relations);
        b.triple(&format!("e{h:03}"), &format!("r{rel}"), &format!("e{t:03}"));
    }
    let kg = b.build().0;
    assert_eq!(kg.entity_count(), n);
    kg
}

/// Breadth-first hop distances over the undirected view of the triples.
pub fn bfs(kg: &KnowledgeGraph, src: u32, max: u32) -> BTreeMap<u32, u32> {
    let mut adj: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
    for t in kg.triples() {
        adj.entry(t.head).or_default().insert(t.tail);
        adj.entry(t.tail).or_default().insert(t.head);
    }
    let mut dist = BTreeMap::from([(src, 0)]);
    let mut q = VecDeque::from([src]);
    while let Some(u) = q.pop_front() {
        let d = dist[&u];
        if d == max {
            continue;
        }
        for &v in adj.get(&u).into_iter().flatten() {
            if let std::collections::btree_map::Entry::Vacant(e) = dist.entry(v) {
                e.insert(d + 1);
                q.push_back(v);
            }
        }
    }
    dist
}

pub fn small_gnn(layers: usize, input_dim: usize, hidden: usize, heads: usize, aggregator: Aggregator, seed: u64) -> GnnConfig {
    GnnConfig { layers, input_dim, hidden, heads, aggregator, activation: Activation::Relu, layer_norm: true, seed }
}

fn mv(m: &kragrec::linalg::Matrix, x: &[f64]) -> Vec<f64> {
    (0..m.rows()).map(|i| m.row(i).iter().zip(x).map(|(&a, &b)| a as f64 * b).sum()).collect()
}

/// Dense reference forward pass. Nodes are `0..n`; `triples` are
/// `(head, relation, tail)` in local indices. For every ordered pair
/// `(o, m)` it scans all triples to collect the messages `o` receives:
/// one per triple where `o` is the head, plus one per non-loop triple
/// where `o` is the tail. Returns states after every layer.
pub fn dense_forward(
    w: &GnnWeights,
    inputs: &[Vec<f32>],
    relation_vectors: &[Vec<f32>],
    triples: &[(usize, u32, usize)],
) -> Vec<Vec<Vec<f64>>> {
    let cfg = w.config();
    let n = inputs.len();
    let h = cfg.hidden;
    let mut z: Vec<Vec<f64>> = inputs.iter().map(|x| mv(w.input_projection(), &x.iter().map(|&v| v as f64).collect::<Vec<_>>())).collect();
    let mut out = Vec::new();
    for layer in w.layers() {
        let mut next = vec![vec![0.0; h]; n];
        for o in 0..n {
            let mut msgs: Vec<Vec<f64>> = Vec::new();
            for m in 0..n {
                for &(hd, r, tl) in triples {
                    let hit = (hd == o && tl == m) || (tl == o && hd == m && hd != tl);
                    if hit {
                        let a = mv(&layer.w_nbr, &z[m]);
                        let rv: Vec<f64> = relation_vectors[r as usize].iter().map(|&v| v as f64).collect();
                        let b = mv(&layer.w_edge, &rv);
                        msgs.push(a.iter().zip(&b).map(|(x, y)| x + y).collect());
                    }
                }
            }
            let mut agg = vec![0.0; h];
            if !msgs.is_empty() {
                match cfg.aggregator {
                    Aggregator::Mean => {
                        for m in &msgs {
                            for (a, v) in agg.iter_mut().zip(m) {
                                *a += v / msgs.len() as f64;
                            }
                        }
                    }
                    Aggregator::Attention => {
                        let q = mv(&layer.w_self, &z[o]);
                        let dh = h / cfg.heads;
                        for head in 0..cfg.heads {
                            let s = head * dh..(head + 1) * dh;
                            let logits: Vec<f64> = msgs
                                .iter()
                                .map(|m| q[s.clone()].iter().zip(&m[s.clone()]).map(|(a, b)| a * b).sum::<f64>() / (dh as f64).sqrt())
                                .collect();
                            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                            let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
                            let tot: f64 = e.iter().sum();
                            for (m, ei) in msgs.iter().zip(&e) {
                                for j in s.clone() {
                                    agg[j] += ei / tot * m[j];
                                }
                            }
                        }
                    }
                }
            }
            let mut v: Vec<f64> = z[o].iter().zip(&agg).map(|(a, b)| a + b).collect();
            if cfg.activation == Activation::Relu {
                v.iter_mut().for_each(|x| *x = x.max(0.0));
            }
            if cfg.layer_norm {
                let mean = v.iter().sum::<f64>() / h as f64;
                let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / h as f64;
                v.iter_mut().for_each(|x| *x = (*x - mean) / (var + 1e-5).sqrt());
            }
            next[o] = v;
        }
        z = next;
        out.push(z.clone());
    }
    out
}

pub fn kg_local_triples(kg: &KnowledgeGraph) -> Vec<(usize, u32, usize)> {
    kg.triples().iter().map(|t| (t.head as usize, t.relation, t.tail as usize)).collect()
}

pub fn cosine64(a: &[f32], b: &[f32]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    let na: f64 = a.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        d / (na * nb)
    }
}

/// Full-scan cosine ranking, ties by ascending key.
pub fn brute_topk(rows: &[(SubgraphKey, Vec<f32>)], q: &[f32], k: usize) -> Vec<(SubgraphKey, f64)> {
    let mut all: Vec<(SubgraphKey, f64)> = rows.iter().map(|(key, v)| (*key, cosine64(q, v))).collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

pub fn random_vec(r: &mut ChaCha8Rng, d: usize) -> Vec<f32> {
    (0..d).map(|_| r.gen_range(-1.0f32..1.0)).collect()
}

/// Prompt, LLM call and answer parsing only; what the full pipeline does
/// in plain-text mode, minus the KG.
pub struct PromptOnly<L> {
    pub llm: L,
    pub domain: Domain,
}

impl<L: LanguageModel> Recommender for PromptOnly<L> {
    fn recommend(&self, inst: &EvalInstance) -> Result<Recommendation, PipelineError> {
        let hist: Vec<String> = inst.history.iter().map(|c| c.title.clone()).collect();
        let cands: Vec<String> = inst.candidates.iter().map(|c| c.title.clone()).collect();
        let prompt = build_prompt(&hist, &cands, cands.len(), self.domain, None)?;
        let c = self.llm.complete(&CompletionRequest { tag: &inst.user, prompt: &prompt, soft_prompt: None })?;
        Ok(Recommendation {
            prompt: prompt.text,
            distribution: interpret(&c, &cands).ok(),
            response: c.text,
            retrieval_calls: 0,
            history_positions: hist.len(),
            kept: Vec::new(),
            soft_prompt: None,
            timings: StageTimings::default(),
        })
    }
}

pub fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed())
}

use kragrec::embedding::HashEmbedder;
use kragrec::eval::training_log;
use kragrec::indexing::index_kg;
use kragrec::kg::{compute_popularity, link_items, ItemTable, Popularity};
use kragrec::retrieval::{RetrievalPolicyConfig, Retriever};
use kragrec::store::{Backend, Metric, VectorStore};
use kragrec::synth::{generate, SynthConfig, SynthDataset};

/// A small indexed synthetic catalogue.
pub struct World {
    pub data: SynthDataset,
    pub kg: KnowledgeGraph,
    pub items: ItemTable,
    pub popularity: Popularity,
    pub store: VectorStore,
    pub embedder: HashEmbedder,
    pub weights: GnnWeights,
}

pub fn small_synth(seed: u64) -> SynthConfig {
    SynthConfig { items: 120, entities: 500, triples: 1600, users: 40, seed, ..SynthConfig::default() }
}

impl World {
    pub fn build(config: &SynthConfig) -> World {
        let data = generate(config).unwrap();
        let kg = data.knowledge_graph();
        let mut items = data.item_table();
        link_items(&mut items, &kg).unwrap();
        let popularity = compute_popularity(&training_log(&data.interactions), &items);
        let embedder = HashEmbedder::new(32, 0, true);
        let weights = GnnWeights::seeded(small_gnn(3, 32, 32, 4, Aggregator::Attention, config.seed)).unwrap();
        let store = VectorStore::new(32, Metric::Cosine, Backend::Exact);
        store.upsert(index_kg(&kg, &embedder, &weights).unwrap()).unwrap();
        World { data, kg, items, popularity, store, embedder, weights }
    }

    pub fn retriever<'a>(&'a self, policy: &'a RetrievalPolicyConfig) -> Retriever<'a> {
        Retriever {
            kg: &self.kg,
            items: &self.items,
            popularity: &self.popularity,
            store: &self.store,
            embedder: &self.embedder,
            index_weights: &self.weights,
            policy,
        }
    }

    /// Every user's item sequence, oldest first.
    pub fn histories(&self) -> BTreeMap<String, Vec<String>> {
        let mut by: BTreeMap<String, Vec<(i64, String)>> = BTreeMap::new();
        for x in &self.data.interactions {
            by.entry(x.user.clone()).or_default().push((x.ts, x.item.clone()));
        }
        by.into_iter()
            .map(|(u, mut v)| {
                v.sort();
                (u, v.into_iter().map(|x| x.1).collect())
            })
            .collect()
    }
}

use kragrec::eval::Candidate;
use kragrec::llm::MockLlm;

/// One hand-checked row: target letter, scripted answer, and whether the
/// target lands in the top 1 / 3 / 5 of what the answer ranks.
pub struct OracleRow {
    pub target: char,
    pub response: &'static str,
    pub hit: [bool; 3],
}

const Y: bool = true;
const N: bool = false;

/// Twenty instances over eight options A-H. Worked out by hand:
/// top-1 hits 7, top-3 hits 11, top-5 hits 14, one unparseable answer,
/// eleven answers rank more than one option.
pub const ORACLE_ROWS: [OracleRow; 20] = [
    OracleRow { target: 'A', response: "A", hit: [Y, Y, Y] },
    OracleRow { target: 'B', response: "A", hit: [N, N, N] },
    OracleRow { target: 'C', response: "1. C\n2. A\n3. B\n4. D\n5. E", hit: [Y, Y, Y] },
    OracleRow { target: 'D', response: "1. A\n2. D\n3. B\n4. C\n5. E", hit: [N, Y, Y] },
    OracleRow { target: 'E', response: "1. A\n2. B\n3. E\n4. C\n5. D", hit: [N, Y, Y] },
    OracleRow { target: 'F', response: "1. A\n2. B\n3. C\n4. F\n5. D", hit: [N, N, Y] },
    OracleRow { target: 'G', response: "1. A\n2. B\n3. C\n4. D\n5. G", hit: [N, N, Y] },
    OracleRow { target: 'H', response: "1. A\n2. B\n3. C\n4. D\n5. E", hit: [N, N, N] },
    OracleRow { target: 'A', response: "Answer: B", hit: [N, N, N] },
    OracleRow { target: 'B', response: "Answer: B.", hit: [Y, Y, Y] },
    OracleRow { target: 'C', response: "no idea", hit: [N, N, N] },
    OracleRow { target: 'D', response: "D", hit: [Y, Y, Y] },
    OracleRow { target: 'A', response: "1. B\n2. C\n3. A", hit: [N, Y, Y] },
    OracleRow { target: 'B', response: "1. B", hit: [Y, Y, Y] },
    OracleRow { target: 'C', response: "1. H\n2. G\n3. F\n4. E\n5. C", hit: [N, N, Y] },
    OracleRow { target: 'D', response: "1. H\n2. G\n3. F\n4. E\n5. B\n6. D", hit: [N, N, N] },
    OracleRow { target: 'E', response: "E", hit: [Y, Y, Y] },
    OracleRow { target: 'F', response: "1. F\n2. A", hit: [Y, Y, Y] },
    OracleRow { target: 'G', response: "C", hit: [N, N, N] },
    OracleRow { target: 'H', response: "1. A\n2. H", hit: [N, Y, Y] },
];

/// ACC, Recall@3, Recall@5 as counted by hand from the rows above.
pub const ORACLE_EXPECTED: (f64, f64, f64) = (7.0 / 20.0, 11.0 / 20.0, 14.0 / 20.0);
pub const ORACLE_UNPARSEABLE: usize = 1;
pub const ORACLE_RANKED: usize = 11;

pub fn oracle_case() -> (Vec<EvalInstance>, MockLlm) {
    let mut instances = Vec::new();
    let mut script = Vec::new();
    for (i, row) in ORACLE_ROWS.iter().enumerate() {
        let user = format!("u{i:02}");
        let candidates = (0..8)
            .map(|j| Candidate { item_id: format!("{i}-{j}"), title: format!("Feature {i} number {j}"), fictional: false })
            .collect();
        instances.push(EvalInstance {
            user: user.clone(),
            history: vec![Candidate { item_id: "h".into(), title: "Seen Before".into(), fictional: false }],
            candidates,
            target: (row.target as u8 - b'A') as usize,
        });
        script.push((user, row.response));
    }
    (instances, MockLlm::scripted(script, "unparseable"))
}

pub const FRUITS: [&str; 8] = ["Apple", "Banana", "Cherry", "Damson", "Elderberry", "Fig", "Grape", "Huckleberry"];

/// Alphabetical position (1-based) of each instance's target; the mock
/// ranks options alphabetically, so this is the target's rank.
pub const ALPHA_RANKS: [usize; 20] = [1, 4, 2, 7, 3, 1, 5, 8, 2, 6, 1, 3, 4, 6, 2, 5, 1, 7, 3, 8];
/// Ranks equal to 1: 4; at most 3: 10; at most 5: 14.
pub const ALPHA_EXPECTED: (f64, f64, f64) = (4.0 / 20.0, 10.0 / 20.0, 14.0 / 20.0);

pub fn alphabetical_case(seed: u64) -> Vec<EvalInstance> {
    use rand::seq::SliceRandom;
    let mut r = rng(seed);
    ALPHA_RANKS
        .iter()
        .enumerate()
        .map(|(i, &rank)| {
            let mut titles: Vec<&str> = FRUITS.to_vec();
            titles.shuffle(&mut r);
            let target_title = FRUITS[rank - 1];
            EvalInstance {
                user: format!("a{i:02}"),
                history: vec![Candidate { item_id: "h".into(), title: "Orchard".into(), fictional: false }],
                target: titles.iter().position(|t| *t == target_title).unwrap(),
                candidates: titles.iter().map(|t| Candidate { item_id: t.to_string(), title: t.to_string(), fictional: false }).collect(),
            }
        })
        .collect()
}

/// Mock scoring each option by minus its alphabetical rank among the options.
pub fn alphabetical_mock() -> MockLlm {
    MockLlm::new(kragrec::llm::MockPolicy::InjectedScores(std::sync::Arc::new(|p: &kragrec::llm::RecommendationPrompt, i: usize| {
        -(p.candidates.iter().filter(|t| **t < p.candidates[i]).count() as f64)
    })))
}

use kragrec::eval::{build_eval_instances, FictionalInjector};

/// Twenty probe instances from a small synthetic catalogue plus a
/// scripted mock that picks a fictional option for exactly the first
/// `fictional` of them and a real option otherwise.
pub fn probe_case(world: &World, fictional: usize) -> (Vec<EvalInstance>, FictionalInjector, MockLlm) {
    let (mut instances, _) = build_eval_instances(&world.data.interactions, &world.items, 10, 10, 5).unwrap();
    instances.truncate(20);
    let injector = FictionalInjector::new(2, 77);
    let probed = injector.inject(&instances).unwrap();
    let script: Vec<(String, String)> = probed
        .iter()
        .enumerate()
        .map(|(i, inst)| {
            let pick = inst.candidates.iter().position(|c| c.fictional == (i < fictional)).unwrap();
            (inst.user.clone(), kragrec::llm::option_label(pick).to_string())
        })
        .collect();
    (instances, injector, MockLlm::scripted(script, "A"))
}

use kragrec::config::RunConfig;

/// The shipped synthetic config with data and artifacts under `dir`.
pub fn shipped_config(dir: &std::path::Path) -> RunConfig {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/synthetic.toml");
    let text = std::fs::read_to_string(path).unwrap();
    let mut cfg = RunConfig::from_toml(&text, &dir.join("run.toml")).unwrap();
    cfg.paths.data = dir.join("data");
    cfg.paths.artifacts = dir.join("artifacts");
    cfg
}

pub fn s(v: &[&str]) -> Vec<String> {
    v.iter().map(|x| x.to_string()).collect()
}

pub fn movie_history() -> Vec<String> {
    s(&[
        "History of the World: Part I",
        "Romancing the Stone",
        "Fast Times at Ridgemont High",
        "Good Morning, Vietnam",
        "Working Girl",
        "Cocoon",
        "Splash",
        "Pretty in Pink",
        "Terms of Endearment",
        "Bull Durham",
    ])
}

pub fn movie_options() -> Vec<String> {
    s(&[
        "Whole Nine Yards",
        "Hearts and Minds",
        "League of Their Own",
        "Raising Arizona",
        "Happy Gilmore",
        "Brokedown Palace",
        "Man Who Knew Too Much",
        "Light of Day",
        "Tin Drum",
        "Blair Witch Project",
        "Red Sorghum",
        "Flintstones in Viva Rock Vegas",
        "Anna",
        "Roger & Me",
        "Land and Freedom",
        "In Love and War",
        "Go West",
        "Kazaam",
        "Thieves",
        "Friends & Lovers",
    ])
}

// Reference movie prompt: ten history titles, twenty lettered options.
pub const MOVIE_GOLDEN: &str = concat!(
    "Below is an instruction that describes a task, paired with an input that provides further context. ",
    "Write a response that appropriately completes the request. ",
    "Instruction: Given the user's watching history, select a film that is most likely to interest the user from the options. ",
    "Watching history: {\"History of the World: Part I\", \"Romancing the Stone\", \"Fast Times at Ridgemont High\", ",
    "\"Good Morning, Vietnam\", \"Working Girl\", \"Cocoon\", \"Splash\", \"Pretty in Pink\", \"Terms of Endearment\", \"Bull Durham\"}. ",
    "Options: {A: \"Whole Nine Yards\", B: \"Hearts and Minds\", C: \"League of Their Own\", D: \"Raising Arizona\", ",
    "E: \"Happy Gilmore\", F: \"Brokedown Palace\", G: \"Man Who Knew Too Much\", H: \"Light of Day\", I: \"Tin Drum\", ",
    "J: \"Blair Witch Project\", K: \"Red Sorghum\", L: \"Flintstones in Viva Rock Vegas\", M: \"Anna\", N: \"Roger & Me\", ",
    "O: \"Land and Freedom\", P: \"In Love and War\", Q: \"Go West\", R: \"Kazaam\", S: \"Thieves\", T: \"Friends & Lovers\"}. ",
    "Select a movie from options A to T that the user is most likely to be interested in."
);

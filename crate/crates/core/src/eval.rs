//! Leave-one-out evaluation: instance construction, ACC / Recall@k,
//! the fictional-candidate hallucination probe, and stage timing.

use std::collections::{BTreeMap, HashSet};
use std::time::Duration;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::indexing::SubgraphKey;
use crate::kg::{Interaction, ItemTable, KnowledgeGraph};
use crate::llm::Provenance;
use crate::pipeline::{Recommendation, Recommender};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("user {user}: {needed} negatives needed but only {available} items are eligible")]
    NotEnoughNegatives { user: String, needed: usize, available: usize },
    #[error("fictional title {0:?} collides with a real item or KG entity")]
    FictionalCollision(String),
    #[error("invalid evaluation setting: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Candidates per instance, target included.
    pub m: usize,
    pub ks: Vec<usize>,
    /// History items shown before the target.
    pub history_len: usize,
    /// Fictional candidates injected per instance by the hallucination probe (0 = no probe).
    pub fictional_per_instance: usize,
    /// Evaluate at most this many instances (0 = all).
    pub max_instances: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { m: 20, ks: vec![3, 5], history_len: 10, fictional_per_instance: 0, max_instances: 0 }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.m < 2 || self.m > crate::llm::MAX_OPTIONS {
            return Err(EvalError::Config(format!("m = {} must lie in 2..={}", self.m, crate::llm::MAX_OPTIONS)));
        }
        if self.history_len == 0 {
            return Err(EvalError::Config("history_len must be at least 1".into()));
        }
        if self.ks.iter().any(|&k| k == 0 || k > self.m) {
            return Err(EvalError::Config(format!("every k must lie in 1..={}", self.m)));
        }
        if self.fictional_per_instance >= self.m {
            return Err(EvalError::Config("fictional_per_instance must leave room for the target".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub item_id: String,
    pub title: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub fictional: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalInstance {
    pub user: String,
    /// Oldest first.
    pub history: Vec<Candidate>,
    pub candidates: Vec<Candidate>,
    /// Position of the target in `candidates`.
    pub target: usize,
}

impl EvalInstance {
    pub fn target_item(&self) -> &Candidate {
        &self.candidates[self.target]
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceStats {
    pub users: usize,
    pub instances: usize,
    /// Users with fewer than `history_len + 1` interactions.
    pub skipped_short: usize,
    /// Users whose recent items are missing from the catalogue.
    pub skipped_unknown: usize,
}

/// Per-purpose RNG seed from the run seed and a label.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

fn user_sequences(interactions: &[Interaction]) -> BTreeMap<&str, Vec<&str>> {
    let mut by_user: BTreeMap<&str, Vec<&Interaction>> = BTreeMap::new();
    for x in interactions {
        by_user.entry(&x.user).or_default().push(x);
    }
    by_user
        .into_iter()
        .map(|(u, mut xs)| {
            xs.sort_by(|a, b| (a.ts, &a.item).cmp(&(b.ts, &b.item)));
            (u, xs.into_iter().map(|x| x.item.as_str()).collect())
        })
        .collect()
}

/// The log with each user's last interaction removed, i.e. what a model
/// may see without peeking at held-out targets.
pub fn training_log(interactions: &[Interaction]) -> Vec<Interaction> {
    let mut last: BTreeMap<&str, (i64, &str)> = BTreeMap::new();
    for x in interactions {
        let e = last.entry(&x.user).or_insert((x.ts, &x.item));
        if (x.ts, x.item.as_str()) > (e.0, e.1) {
            *e = (x.ts, &x.item);
        }
    }
    interactions
        .iter()
        .filter(|x| last.get(x.user.as_str()) != Some(&(x.ts, x.item.as_str())))
        .cloned()
        .collect()
}

fn candidate(items: &ItemTable, id: &str) -> Option<Candidate> {
    items.get(id).map(|it| Candidate { item_id: it.item_id.clone(), title: it.title.clone(), fictional: false })
}

/// Uniform sample of `count` catalogue items outside `exclude`, in
/// catalogue order of the sampled positions.
pub fn sample_negatives(
    items: &ItemTable,
    exclude: &HashSet<&str>,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<Candidate>> {
    let pool: Vec<&crate::kg::Item> = items.iter().filter(|it| !exclude.contains(it.item_id.as_str())).collect();
    if pool.len() < count {
        return None;
    }
    let mut picked = index::sample(rng, pool.len(), count).into_vec();
    picked.sort_unstable();
    Some(
        picked
            .into_iter()
            .map(|i| Candidate { item_id: pool[i].item_id.clone(), title: pool[i].title.clone(), fictional: false })
            .collect(),
    )
}

/// Leave-one-out instances: per user (ascending id), the last interaction is
/// the target and the `history_len` before it form the history. Negatives
/// are drawn uniformly from catalogue items the user never interacted with.
pub fn build_eval_instances(
    interactions: &[Interaction],
    items: &ItemTable,
    m: usize,
    history_len: usize,
    seed: u64,
) -> Result<(Vec<EvalInstance>, InstanceStats), EvalError> {
    if m < 1 || history_len < 1 {
        return Err(EvalError::Config("m and history_len must be positive".into()));
    }
    let mut stats = InstanceStats::default();
    let mut out = Vec::new();
    for (user, seq) in user_sequences(interactions) {
        stats.users += 1;
        if seq.len() < history_len + 1 {
            stats.skipped_short += 1;
            continue;
        }
        let target_id = seq[seq.len() - 1];
        let recent = &seq[seq.len() - 1 - history_len..seq.len() - 1];
        let (Some(target), Some(history)) = (
            candidate(items, target_id),
            recent.iter().map(|id| candidate(items, id)).collect::<Option<Vec<_>>>(),
        ) else {
            stats.skipped_unknown += 1;
            continue;
        };
        let exclude: HashSet<&str> = seq.iter().copied().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, user));
        let mut candidates = sample_negatives(items, &exclude, m - 1, &mut rng).ok_or_else(|| EvalError::NotEnoughNegatives {
            user: user.to_owned(),
            needed: m - 1,
            available: items.len().saturating_sub(exclude.len()),
        })?;
        candidates.push(target);
        candidates.shuffle(&mut rng);
        let target = candidates.iter().position(|c| c.item_id == target_id).expect("target inserted");
        out.push(EvalInstance { user: user.to_owned(), history, candidates, target });
    }
    stats.instances = out.len();
    Ok((out, stats))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecallAt {
    pub k: usize,
    /// Absent when no instance produced more than a top-1 answer.
    pub value: Option<f64>,
}

/// Outcome metrics; deterministic for deterministic pipelines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub instances: usize,
    pub acc: f64,
    pub recall: Vec<RecallAt>,
    /// Instances whose answer yielded a ranking beyond the top choice.
    pub ranked_instances: usize,
    pub unparseable: usize,
    pub failures: usize,
    pub provenance: BTreeMap<String, usize>,
    pub retrieval_calls: usize,
    /// Share of history positions that triggered a store query.
    pub retrieval_rate: f64,
    pub hallucination_rate: Option<f64>,
    pub skipped_users: usize,
}

impl MetricsReport {
    pub fn recall_at(&self, k: usize) -> Option<f64> {
        self.recall.iter().find(|r| r.k == k).and_then(|r| r.value)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean_ms: f64,
    pub p95_ms: f64,
}

impl LatencyStats {
    pub fn from_durations(ds: &[Duration]) -> Self {
        if ds.is_empty() {
            return LatencyStats::default();
        }
        let mut ms: Vec<f64> = ds.iter().map(|d| d.as_secs_f64() * 1e3).collect();
        ms.sort_by(f64::total_cmp);
        let mean = ms.iter().sum::<f64>() / ms.len() as f64;
        let rank = ((0.95 * ms.len() as f64).ceil() as usize).clamp(1, ms.len());
        LatencyStats { mean_ms: mean, p95_ms: ms[rank - 1] }
    }
}

/// Wall-clock per stage plus the retrieval-call counts the popularity
/// policy controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub instances: usize,
    pub retrieval: LatencyStats,
    pub encoding: LatencyStats,
    pub llm: LatencyStats,
    pub total: LatencyStats,
    pub retrieval_calls_total: usize,
    pub retrieval_calls_mean: f64,
    pub retrieval_calls_per_instance: Vec<usize>,
}

impl TimingReport {
    pub fn from_recommendations<'a, I: IntoIterator<Item = &'a Recommendation>>(recs: I) -> Self {
        let recs: Vec<&Recommendation> = recs.into_iter().collect();
        let pick = |f: fn(&Recommendation) -> Duration| recs.iter().map(|r| f(r)).collect::<Vec<_>>();
        let calls: Vec<usize> = recs.iter().map(|r| r.retrieval_calls).collect();
        let total_calls: usize = calls.iter().sum();
        TimingReport {
            instances: recs.len(),
            retrieval: LatencyStats::from_durations(&pick(|r| r.timings.retrieval)),
            encoding: LatencyStats::from_durations(&pick(|r| r.timings.encoding)),
            llm: LatencyStats::from_durations(&pick(|r| r.timings.llm)),
            total: LatencyStats::from_durations(&pick(|r| r.timings.retrieval + r.timings.encoding + r.timings.llm)),
            retrieval_calls_total: total_calls,
            retrieval_calls_mean: if recs.is_empty() { 0.0 } else { total_calls as f64 / recs.len() as f64 },
            retrieval_calls_per_instance: calls,
        }
    }
}

/// One line of the per-instance trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceTrace {
    pub user: String,
    pub target_item: String,
    pub target_index: usize,
    pub candidates: Vec<String>,
    pub top: Option<usize>,
    pub correct: bool,
    pub ranking: Vec<usize>,
    pub provenance: Option<Provenance>,
    pub retrieval_calls: usize,
    pub kept: Vec<SubgraphKey>,
    pub response: String,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub metrics: MetricsReport,
    pub timing: TimingReport,
    pub traces: Vec<InstanceTrace>,
}

fn provenance_name(p: Provenance) -> String {
    serde_json::to_value(p).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default()
}

/// Scores `instances` with `recommender`, concurrently. Unparseable answers
/// and pipeline failures count as misses; aggregation is order-independent.
pub fn evaluate(instances: &[EvalInstance], recommender: &dyn Recommender, ks: &[usize]) -> Evaluation {
    let results: Vec<_> = instances.par_iter().map(|inst| recommender.recommend(inst)).collect();
    let mut hits = 0usize;
    let mut topk = vec![0usize; ks.len()];
    let mut ranked = 0;
    let mut unparseable = 0;
    let mut failures = 0;
    let mut calls = 0;
    let mut positions = 0;
    let mut provenance: BTreeMap<String, usize> = BTreeMap::new();
    let mut traces = Vec::with_capacity(instances.len());
    let mut ok_recs = Vec::new();
    for (inst, res) in instances.iter().zip(&results) {
        let mut trace = InstanceTrace {
            user: inst.user.clone(),
            target_item: inst.target_item().item_id.clone(),
            target_index: inst.target,
            candidates: inst.candidates.iter().map(|c| c.item_id.clone()).collect(),
            top: None,
            correct: false,
            ranking: Vec::new(),
            provenance: None,
            retrieval_calls: 0,
            kept: Vec::new(),
            response: String::new(),
            error: None,
        };
        match res {
            Err(e) => {
                log::warn!("instance for user {} failed: {e}", inst.user);
                failures += 1;
                trace.error = Some(e.to_string());
            }
            Ok(rec) => {
                ok_recs.push(rec);
                calls += rec.retrieval_calls;
                positions += rec.history_positions;
                trace.retrieval_calls = rec.retrieval_calls;
                trace.kept = rec.kept.clone();
                trace.response = rec.response.clone();
                match &rec.distribution {
                    None => unparseable += 1,
                    Some(d) => {
                        *provenance.entry(provenance_name(d.provenance)).or_default() += 1;
                        trace.top = Some(d.top());
                        trace.ranking = d.ranking.clone();
                        trace.provenance = Some(d.provenance);
                        trace.correct = d.top() == inst.target;
                        if trace.correct {
                            hits += 1;
                        }
                        if d.is_ranked() {
                            ranked += 1;
                        }
                        for (slot, &k) in topk.iter_mut().zip(ks) {
                            if d.in_top_k(inst.target, k) {
                                *slot += 1;
                            }
                        }
                    }
                }
            }
        }
        traces.push(trace);
    }
    let n = instances.len();
    let frac = |x: usize| if n == 0 { 0.0 } else { x as f64 / n as f64 };
    let metrics = MetricsReport {
        instances: n,
        acc: frac(hits),
        recall: ks.iter().zip(&topk).map(|(&k, &c)| RecallAt { k, value: (ranked > 0).then(|| frac(c)) }).collect(),
        ranked_instances: ranked,
        unparseable,
        failures,
        provenance,
        retrieval_calls: calls,
        retrieval_rate: if positions == 0 { 0.0 } else { calls as f64 / positions as f64 },
        hallucination_rate: None,
        skipped_users: 0,
    };
    Evaluation { metrics, timing: TimingReport::from_recommendations(ok_recs), traces }
}

/// Runs the recommender sequentially, so stage timings are not inflated by
/// contention, and reports latencies and retrieval calls.
pub fn timing_report(recommender: &dyn Recommender, instances: &[EvalInstance]) -> TimingReport {
    let recs: Vec<Recommendation> = instances
        .iter()
        .filter_map(|i| recommender.recommend(i).map_err(|e| log::warn!("timing run for {} failed: {e}", i.user)).ok())
        .collect();
    TimingReport::from_recommendations(&recs)
}

/// Replaces negatives with invented titles.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FictionalInjector {
    pub titles: Vec<String>,
    pub per_instance: usize,
    /// Put the (first) fictional candidate at this option position.
    pub position: Option<usize>,
    pub seed: u64,
}

pub const DEFAULT_FICTIONAL_TITLES: &[&str] = &[
    "The Cartographer of Lost Tuesdays (1979)",
    "Mothwing Boulevard (1994)",
    "A Clockmaker in Vellmar (1962)",
    "Seven Lanterns for Odessa Vane (1988)",
    "The Brass Orchid Affair (1971)",
    "Quillon's Last Regatta (2003)",
    "Underneath the Copper Moons (1957)",
    "Harlequin Drift (1999)",
];

impl FictionalInjector {
    pub fn new(per_instance: usize, seed: u64) -> Self {
        FictionalInjector {
            titles: DEFAULT_FICTIONAL_TITLES.iter().map(|s| s.to_string()).collect(),
            per_instance,
            position: None,
            seed,
        }
    }

    /// Fails if any title matches a catalogue title or KG entity text.
    pub fn check(&self, items: &ItemTable, kg: Option<&KnowledgeGraph>) -> Result<(), EvalError> {
        let mut real: HashSet<String> = items.iter().map(|i| i.title.to_lowercase()).collect();
        if let Some(kg) = kg {
            real.extend(kg.entities().iter().map(|e| e.text.to_lowercase()));
        }
        for t in &self.titles {
            if real.contains(&t.to_lowercase()) {
                return Err(EvalError::FictionalCollision(t.clone()));
            }
        }
        Ok(())
    }

    pub fn inject(&self, instances: &[EvalInstance]) -> Result<Vec<EvalInstance>, EvalError> {
        if self.titles.len() < self.per_instance || self.per_instance == 0 {
            return Err(EvalError::Config(format!("{} fictional titles cannot fill {} slots", self.titles.len(), self.per_instance)));
        }
        instances
            .iter()
            .map(|inst| {
                let m = inst.candidates.len();
                if self.per_instance >= m || self.position.is_some_and(|p| p >= m) {
                    return Err(EvalError::Config(format!("cannot place fictional candidates among {m} options")));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &inst.user));
                let mut out = inst.clone();
                let negatives: Vec<usize> = (0..m).filter(|&i| i != inst.target).collect();
                let slots: Vec<usize> = index::sample(&mut rng, negatives.len(), self.per_instance)
                    .into_iter()
                    .map(|i| negatives[i])
                    .collect();
                let names = index::sample(&mut rng, self.titles.len(), self.per_instance).into_vec();
                for (j, (&slot, &name)) in slots.iter().zip(&names).enumerate() {
                    out.candidates[slot] = Candidate {
                        item_id: format!("fictional:{}", j + 1),
                        title: self.titles[name].clone(),
                        fictional: true,
                    };
                }
                if let Some(p) = self.position {
                    out.candidates.swap(p, slots[0]);
                    if out.target == p {
                        out.target = slots[0];
                    }
                }
                Ok(out)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub instances: usize,
    pub fictional_top1: usize,
    pub rate: f64,
}

/// Fraction of instances whose top choice is a fictional candidate.
pub fn hallucination_probe(
    instances: &[EvalInstance],
    injector: &FictionalInjector,
    items: &ItemTable,
    kg: Option<&KnowledgeGraph>,
    recommender: &dyn Recommender,
) -> Result<ProbeReport, EvalError> {
    injector.check(items, kg)?;
    let probed = injector.inject(instances)?;
    let picked = probed
        .par_iter()
        .filter(|inst| match recommender.recommend(inst) {
            Ok(Recommendation { distribution: Some(d), .. }) => inst.candidates[d.top()].fictional,
            Ok(_) => false,
            Err(e) => {
                log::warn!("probe instance for {} failed: {e}", inst.user);
                false
            }
        })
        .count();
    let n = probed.len();
    Ok(ProbeReport { instances: n, fictional_top1: picked, rate: if n == 0 { 0.0 } else { picked as f64 / n as f64 } })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::Item;

    fn catalogue(n: usize) -> ItemTable {
        ItemTable::new((1..=n).map(|i| Item::new(i.to_string(), format!("Title {i}"))).collect()).unwrap()
    }

    fn log(user: &str, items: &[usize]) -> Vec<Interaction> {
        items.iter().enumerate().map(|(t, i)| Interaction { user: user.into(), item: i.to_string(), ts: t as i64 }).collect()
    }

    #[test]
    fn eleven_interactions_give_ten_history_and_target() {
        let items = catalogue(40);
        let seq: Vec<usize> = (1..=11).collect();
        let (inst, stats) = build_eval_instances(&log("u", &seq), &items, 20, 10, 1).unwrap();
        assert_eq!(stats, InstanceStats { users: 1, instances: 1, skipped_short: 0, skipped_unknown: 0 });
        let i = &inst[0];
        assert_eq!(i.history.iter().map(|c| c.item_id.as_str()).collect::<Vec<_>>(), ["1", "2", "3", "4", "5", "6", "7", "8", "9", "10"]);
        assert_eq!(i.target_item().item_id, "11");
        assert_eq!(i.candidates.len(), 20);
    }

    #[test]
    fn short_users_skipped_and_counted() {
        let items = catalogue(40);
        let (inst, stats) = build_eval_instances(&log("u", &[1, 2, 3]), &items, 5, 10, 0).unwrap();
        assert!(inst.is_empty());
        assert_eq!(stats.skipped_short, 1);
    }

    #[test]
    fn too_few_negatives_is_error() {
        let items = catalogue(15);
        let seq: Vec<usize> = (1..=11).collect();
        assert!(matches!(build_eval_instances(&log("u", &seq), &items, 10, 10, 0), Err(EvalError::NotEnoughNegatives { .. })));
    }

    #[test]
    fn training_log_drops_last_per_user() {
        let mut l = log("a", &[1, 2, 3]);
        l.extend(log("b", &[4, 5]));
        let t = training_log(&l);
        assert_eq!(t.iter().map(|x| x.item.as_str()).collect::<Vec<_>>(), ["1", "2", "4"]);
    }

    #[test]
    fn p95_nearest_rank() {
        let ds: Vec<Duration> = (1..=20).map(Duration::from_millis).collect();
        let s = LatencyStats::from_durations(&ds);
        assert_eq!(s.p95_ms, 19.0);
        assert!((s.mean_ms - 10.5).abs() < 1e-9);
    }

    #[test]
    fn injection_keeps_target_and_size() {
        let items = catalogue(60);
        let seq: Vec<usize> = (1..=11).collect();
        let (inst, _) = build_eval_instances(&log("u", &seq), &items, 20, 10, 3).unwrap();
        let inj = FictionalInjector { position: Some(0), ..FictionalInjector::new(2, 9) };
        let out = inj.inject(&inst).unwrap();
        let o = &out[0];
        assert_eq!(o.candidates.len(), 20);
        assert!(o.candidates[0].fictional);
        assert_eq!(o.candidates.iter().filter(|c| c.fictional).count(), 2);
        assert_eq!(o.target_item().item_id, "11");
        inj.check(&items, None).unwrap();
    }
}

//! Small hierarchical navigable small-world graph over the rows of a
//! snapshot. Built deterministically from a seed and row order.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HnswParams {
    pub m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    pub seed: u64,
}

impl Default for HnswParams {
    fn default() -> Self {
        HnswParams { m: 16, ef_construction: 100, ef_search: 64, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Cand {
    sim: f64,
    id: u32,
}

impl Eq for Cand {}

impl Ord for Cand {
    fn cmp(&self, other: &Self) -> Ordering {
        self.sim.total_cmp(&other.sim).then_with(|| other.id.cmp(&self.id))
    }
}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Hnsw {
    params: HnswParams,
    /// `links[node][level]`
    links: Vec<Vec<Vec<u32>>>,
    entry: Option<u32>,
    top: usize,
}

impl Hnsw {
    /// Inserts rows `0..n` in order. `sim(a, b)` is the store metric.
    pub(crate) fn build(n: usize, params: HnswParams, sim: &dyn Fn(u32, u32) -> f64) -> Self {
        let mut h = Hnsw { params, links: Vec::with_capacity(n), entry: None, top: 0 };
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let ml = 1.0 / (params.m.max(2) as f64).ln();
        for i in 0..n as u32 {
            let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let level = ((-u.ln()) * ml).floor() as usize;
            h.insert(i, level.min(16), sim);
        }
        h
    }

    fn max_links(&self, level: usize) -> usize {
        if level == 0 {
            self.params.m * 2
        } else {
            self.params.m
        }
    }

    fn insert(&mut self, id: u32, level: usize, sim: &dyn Fn(u32, u32) -> f64) {
        self.links.push(vec![Vec::new(); level + 1]);
        let Some(mut ep) = self.entry else {
            self.entry = Some(id);
            self.top = level;
            return;
        };
        let score = |other: u32| sim(id, other);
        for l in (level + 1..=self.top).rev() {
            ep = self.greedy(ep, l, &score);
        }
        let mut eps = vec![ep];
        for l in (0..=level.min(self.top)).rev() {
            let found = self.search_layer(&eps, self.params.ef_construction, l, &score);
            let chosen: Vec<u32> = found.iter().take(self.params.m).map(|c| c.id).collect();
            self.links[id as usize][l] = chosen.clone();
            for &nb in &chosen {
                self.links[nb as usize][l].push(id);
                if self.links[nb as usize][l].len() > self.max_links(l) {
                    let mut list: Vec<Cand> = self.links[nb as usize][l]
                        .iter()
                        .map(|&x| Cand { sim: sim(nb, x), id: x })
                        .collect();
                    list.sort_by(|a, b| b.cmp(a));
                    list.truncate(self.max_links(l));
                    self.links[nb as usize][l] = list.into_iter().map(|c| c.id).collect();
                }
            }
            eps = found.iter().map(|c| c.id).collect();
        }
        if level > self.top {
            self.top = level;
            self.entry = Some(id);
        }
    }

    fn greedy(&self, mut ep: u32, level: usize, score: &dyn Fn(u32) -> f64) -> u32 {
        let mut best = score(ep);
        loop {
            let mut moved = false;
            for &nb in &self.links[ep as usize][level] {
                let s = score(nb);
                if s > best || (s == best && nb < ep) {
                    best = s;
                    ep = nb;
                    moved = true;
                }
            }
            if !moved {
                return ep;
            }
        }
    }

    /// Best-first search on one level; returns candidates best first.
    fn search_layer(&self, eps: &[u32], ef: usize, level: usize, score: &dyn Fn(u32) -> f64) -> Vec<Cand> {
        let mut visited: HashSet<u32> = eps.iter().copied().collect();
        let mut frontier: BinaryHeap<Cand> = BinaryHeap::new();
        let mut best: BinaryHeap<Reverse<Cand>> = BinaryHeap::new();
        for &e in eps {
            let c = Cand { sim: score(e), id: e };
            frontier.push(c);
            best.push(Reverse(c));
        }
        while best.len() > ef {
            best.pop();
        }
        while let Some(c) = frontier.pop() {
            let worst = best.peek().map(|r| r.0.sim).unwrap_or(f64::NEG_INFINITY);
            if c.sim < worst && best.len() >= ef {
                break;
            }
            for &nb in &self.links[c.id as usize][level] {
                if !visited.insert(nb) {
                    continue;
                }
                let s = score(nb);
                let worst = best.peek().map(|r| r.0.sim).unwrap_or(f64::NEG_INFINITY);
                if best.len() < ef || s > worst {
                    let cand = Cand { sim: s, id: nb };
                    frontier.push(cand);
                    best.push(Reverse(cand));
                    if best.len() > ef {
                        best.pop();
                    }
                }
            }
        }
        let mut out: Vec<Cand> = best.into_iter().map(|r| r.0).collect();
        out.sort_by(|a, b| b.cmp(a));
        out
    }

    /// Candidate rows for a query, best first, at most `ef` of them.
    pub(crate) fn search(&self, ef: usize, score: &dyn Fn(u32) -> f64) -> Vec<u32> {
        let Some(mut ep) = self.entry else {
            return Vec::new();
        };
        for l in (1..=self.top).rev() {
            ep = self.greedy(ep, l, score);
        }
        self.search_layer(&[ep], ef.max(self.params.ef_search), 0, score)
            .into_iter()
            .map(|c| c.id)
            .collect()
    }
}

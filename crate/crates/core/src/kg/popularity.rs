use std::io::BufRead;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::load::id_string;
use super::{ItemTable, KgError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub user: String,
    pub item: String,
    pub ts: i64,
}

/// Reads JSON-lines `{"user":…,"item":…,"ts":…}` and sorts by
/// `(ts, user, item)`; the sort is stable so equal keys keep file order.
pub fn load_interactions<R: BufRead>(source: R) -> Result<Vec<Interaction>, KgError> {
    #[derive(Deserialize)]
    struct Row {
        user: Value,
        item: Value,
        #[serde(default)]
        ts: i64,
    }
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| KgError::Parse { line: i + 1, message };
        let row: Row = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        out.push(Interaction {
            user: id_string(&row.user).ok_or_else(|| err("user must be a string or number".into()))?,
            item: id_string(&row.item).ok_or_else(|| err("item must be a string or number".into()))?,
            ts: row.ts,
        });
    }
    out.sort_by(|a, b| (a.ts, &a.user, &a.item).cmp(&(b.ts, &b.user, &b.item)));
    Ok(out)
}

/// Interaction counts per item and the rank-based percentile over them.
///
/// `percentile(i)` is the fraction of catalogue items whose count is
/// strictly smaller than item `i`'s, so tied items share the lower value.
#[derive(Debug, Clone)]
pub struct Popularity {
    counts: Vec<u64>,
    sorted: Vec<u64>,
    unknown: u64,
}

impl Popularity {
    /// Counts aligned with `ItemTable` positions.
    pub fn from_counts(counts: Vec<u64>) -> Self {
        let mut sorted = counts.clone();
        sorted.sort_unstable();
        Popularity { counts, sorted, unknown: 0 }
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Log entries whose item is not in the catalogue.
    pub fn unknown_interactions(&self) -> u64 {
        self.unknown
    }

    pub fn count_at(&self, position: usize) -> Option<u64> {
        self.counts.get(position).copied()
    }

    pub fn percentile_of_count(&self, count: u64) -> f64 {
        if self.sorted.is_empty() {
            return 0.0;
        }
        let below = self.sorted.partition_point(|&c| c < count);
        below as f64 / self.sorted.len() as f64
    }

    pub fn percentile_at(&self, position: usize) -> Option<f64> {
        self.count_at(position).map(|c| self.percentile_of_count(c))
    }

    pub fn percentile(&self, items: &ItemTable, item_id: &str) -> Option<f64> {
        items.position(item_id).and_then(|p| self.percentile_at(p))
    }
}

/// Counts occurrences of each catalogue item in `log`. Entries for items
/// outside the catalogue are tallied in a separate bucket that takes no
/// part in percentiles.
pub fn compute_popularity<'a, I>(log: I, items: &ItemTable) -> Popularity
where
    I: IntoIterator<Item = &'a Interaction>,
{
    let mut counts = vec![0u64; items.len()];
    let mut unknown = 0u64;
    for it in log {
        match items.position(&it.item) {
            Some(p) => counts[p] += 1,
            None => unknown += 1,
        }
    }
    if unknown > 0 {
        log::warn!("{unknown} interactions reference items outside the catalogue");
    }
    let mut pop = Popularity::from_counts(counts);
    pop.unknown = unknown;
    pop
}

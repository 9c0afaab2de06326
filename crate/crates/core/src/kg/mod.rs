//! Knowledge graph data model.
//!
//! Entities and relations receive dense surrogate ids assigned in sorted
//! key order, so two loads of the same facts in any line order
//! produce identical graphs. The graph is immutable once built.

mod items;
mod load;
mod popularity;
mod subgraph;

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use items::{link_items, load_items, Item, ItemTable, LinkReport};
pub use load::{load_attributes, load_triples, parse_triples, Attribute, LoadStats, RawTriple};
pub use popularity::{compute_popularity, load_interactions, Interaction, Popularity};
pub use subgraph::{ego_subgraph, Subgraph};

pub type EntityId = u32;
pub type RelationId = u32;

#[derive(Debug, Error)]
pub enum KgError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown entity id {0}")]
    EntityNotFound(EntityId),
    #[error("hop count must be at least 1")]
    ZeroHop,
    #[error("external id {external_id:?} is shared by entities {entities:?}")]
    AmbiguousLink { external_id: String, entities: Vec<EntityId> },
    #[error("duplicate item id {0:?}")]
    DuplicateItem(String),
}

/// A KG node. `key` is the name used in triple files; `external_id` is the
/// identifier items link against and defaults to `key`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub id: EntityId,
    pub key: String,
    pub external_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation {
    pub id: RelationId,
    pub external_id: String,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

/// One adjacency entry: the triple `triple` touches the owning node and
/// `neighbor` through `relation`. Self-loops appear once.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Incident {
    pub relation: RelationId,
    pub neighbor: EntityId,
    pub triple: u32,
}

#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    entities: Vec<Entity>,
    relations: Vec<Relation>,
    triples: Vec<Triple>,
    adjacency: Vec<Vec<Incident>>,
    by_key: HashMap<String, EntityId>,
    by_external: HashMap<String, Vec<EntityId>>,
}

impl KnowledgeGraph {
    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }

    /// Triples in ascending `(head, relation, tail)` order.
    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn contains(&self, id: EntityId) -> bool {
        (id as usize) < self.entities.len()
    }

    pub fn entity(&self, id: EntityId) -> Option<&Entity> {
        self.entities.get(id as usize)
    }

    pub fn relation(&self, id: RelationId) -> Option<&Relation> {
        self.relations.get(id as usize)
    }

    pub fn entity_by_key(&self, key: &str) -> Option<EntityId> {
        self.by_key.get(key).copied()
    }

    /// All entities carrying `external_id`, ascending.
    pub fn entities_by_external(&self, external_id: &str) -> &[EntityId] {
        self.by_external.get(external_id).map_or(&[], Vec::as_slice)
    }

    /// Incident triples of `id`, sorted by `(relation, neighbor)`.
    pub fn neighbors(&self, id: EntityId) -> &[Incident] {
        self.adjacency.get(id as usize).map_or(&[], Vec::as_slice)
    }

    pub fn degree(&self, id: EntityId) -> usize {
        self.neighbors(id).len()
    }

    /// Undirected hop distances from `source`, up to `max_hops`.
    pub fn distances_within(&self, source: EntityId, max_hops: u32) -> BTreeMap<EntityId, u32> {
        let mut dist = BTreeMap::new();
        if !self.contains(source) {
            return dist;
        }
        dist.insert(source, 0);
        let mut queue = VecDeque::from([source]);
        while let Some(node) = queue.pop_front() {
            let d = dist[&node];
            if d == max_hops {
                continue;
            }
            for inc in self.neighbors(node) {
                if let std::collections::btree_map::Entry::Vacant(e) = dist.entry(inc.neighbor) {
                    e.insert(d + 1);
                    queue.push_back(inc.neighbor);
                }
            }
        }
        dist
    }

    /// Keeps only entities within `radius` hops of any seed, with the
    /// triples induced on them. Ids are reassigned.
    pub fn restrict_to_radius(&self, seeds: &[EntityId], radius: u32) -> KnowledgeGraph {
        let mut keep = BTreeSet::new();
        let mut queue = VecDeque::new();
        let mut dist = HashMap::new();
        for &s in seeds.iter().filter(|&&s| self.contains(s)) {
            if dist.insert(s, 0u32).is_none() {
                keep.insert(s);
                queue.push_back(s);
            }
        }
        while let Some(node) = queue.pop_front() {
            let d = dist[&node];
            if d == radius {
                continue;
            }
            for inc in self.neighbors(node) {
                if let std::collections::hash_map::Entry::Vacant(e) = dist.entry(inc.neighbor) {
                    e.insert(d + 1);
                    keep.insert(inc.neighbor);
                    queue.push_back(inc.neighbor);
                }
            }
        }
        let mut b = KgBuilder::new();
        for &id in &keep {
            let e = &self.entities[id as usize];
            b.entity_with_external(&e.key, &e.external_id, &e.text);
        }
        for rel in &self.relations {
            b.relation(&rel.external_id, &rel.text);
        }
        for t in &self.triples {
            if keep.contains(&t.head) && keep.contains(&t.tail) {
                b.triple(
                    &self.entities[t.head as usize].key,
                    &self.relations[t.relation as usize].external_id,
                    &self.entities[t.tail as usize].key,
                );
            }
        }
        b.build().0
    }
}

#[derive(Debug, Default)]
struct EntityAttr {
    text: Option<String>,
    external_id: Option<String>,
}

/// Collects facts keyed by entity keys, then assigns dense ids on `build`.
#[derive(Debug, Default)]
pub struct KgBuilder {
    entity_text: BTreeMap<String, EntityAttr>,
    relation_text: BTreeMap<String, Option<String>>,
    triples: BTreeSet<(String, String, String)>,
    duplicates: usize,
}

/// What `KgBuilder::build` saw while assigning ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct BuildStats {
    pub entities: usize,
    pub relations: usize,
    pub triples: usize,
    pub duplicate_triples: usize,
    pub entities_missing_text: usize,
    pub relations_missing_text: usize,
}

impl KgBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declares an entity with its text attribute. Later calls overwrite.
    pub fn entity(&mut self, key: &str, text: &str) -> &mut Self {
        let attr = self.entity_text.entry(key.to_owned()).or_default();
        attr.text = Some(text.to_owned());
        self
    }

    pub fn entity_with_external(&mut self, key: &str, external_id: &str, text: &str) -> &mut Self {
        let attr = self.entity_text.entry(key.to_owned()).or_default();
        attr.text = Some(text.to_owned());
        attr.external_id = Some(external_id.to_owned());
        self
    }

    pub fn relation(&mut self, external_id: &str, text: &str) -> &mut Self {
        self.relation_text.insert(external_id.to_owned(), Some(text.to_owned()));
        self
    }

    pub fn triple(&mut self, head: &str, relation: &str, tail: &str) -> &mut Self {
        self.entity_text.entry(head.to_owned()).or_default();
        self.entity_text.entry(tail.to_owned()).or_default();
        self.relation_text.entry(relation.to_owned()).or_insert(None);
        if !self.triples.insert((head.to_owned(), relation.to_owned(), tail.to_owned())) {
            self.duplicates += 1;
        }
        self
    }

    pub fn build(self) -> (KnowledgeGraph, BuildStats) {
        let mut stats = BuildStats { duplicate_triples: self.duplicates, ..Default::default() };
        let mut entity_ids = HashMap::with_capacity(self.entity_text.len());
        let mut entities = Vec::with_capacity(self.entity_text.len());
        for (i, (key, attr)) in self.entity_text.into_iter().enumerate() {
            if attr.text.is_none() {
                stats.entities_missing_text += 1;
                log::warn!("entity {key:?} has no text attribute; using empty text");
            }
            entity_ids.insert(key.clone(), i as EntityId);
            entities.push(Entity {
                id: i as EntityId,
                external_id: attr.external_id.unwrap_or_else(|| key.clone()),
                key,
                text: attr.text.unwrap_or_default(),
            });
        }
        let mut relation_ids = HashMap::with_capacity(self.relation_text.len());
        let mut relations = Vec::with_capacity(self.relation_text.len());
        for (i, (ext, text)) in self.relation_text.into_iter().enumerate() {
            if text.is_none() {
                stats.relations_missing_text += 1;
                log::warn!("relation {ext:?} has no text attribute; using empty text");
            }
            relation_ids.insert(ext.clone(), i as RelationId);
            relations.push(Relation { id: i as RelationId, external_id: ext, text: text.unwrap_or_default() });
        }
        let mut triples: Vec<Triple> = self
            .triples
            .iter()
            .map(|(h, r, t)| Triple { head: entity_ids[h], relation: relation_ids[r], tail: entity_ids[t] })
            .collect();
        triples.sort_unstable();

        let mut adjacency: Vec<Vec<Incident>> = vec![Vec::new(); entities.len()];
        for (idx, t) in triples.iter().enumerate() {
            let idx = idx as u32;
            adjacency[t.head as usize].push(Incident { relation: t.relation, neighbor: t.tail, triple: idx });
            if t.head != t.tail {
                adjacency[t.tail as usize].push(Incident { relation: t.relation, neighbor: t.head, triple: idx });
            }
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }

        stats.entities = entities.len();
        stats.relations = relations.len();
        stats.triples = triples.len();
        let by_key = entities.iter().map(|e| (e.key.clone(), e.id)).collect();
        let mut by_external: HashMap<String, Vec<EntityId>> = HashMap::new();
        for e in &entities {
            by_external.entry(e.external_id.clone()).or_default().push(e.id);
        }
        let kg = KnowledgeGraph { entities, relations, triples, adjacency, by_key, by_external };
        (kg, stats)
    }
}

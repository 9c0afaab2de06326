use serde::{Deserialize, Serialize};

use super::{EntityId, KgError, KnowledgeGraph, Triple};

/// The `hop`-hop ego network of `center`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subgraph {
    pub center: EntityId,
    pub hop: u32,
    /// Ascending entity ids; always contains `center`.
    pub nodes: Vec<EntityId>,
    /// Induced triples, ascending.
    pub edges: Vec<Triple>,
}

impl Subgraph {
    pub fn contains(&self, id: EntityId) -> bool {
        self.nodes.binary_search(&id).is_ok()
    }
}

/// All entities within `hop` undirected steps of `center`, with every
/// triple whose endpoints are both inside.
pub fn ego_subgraph(kg: &KnowledgeGraph, center: EntityId, hop: u32) -> Result<Subgraph, KgError> {
    if !kg.contains(center) {
        return Err(KgError::EntityNotFound(center));
    }
    if hop == 0 {
        return Err(KgError::ZeroHop);
    }
    let nodes: Vec<EntityId> = kg.distances_within(center, hop).into_keys().collect();
    let mut triple_ids: Vec<u32> = Vec::new();
    for &n in &nodes {
        for inc in kg.neighbors(n) {
            if nodes.binary_search(&inc.neighbor).is_ok() {
                triple_ids.push(inc.triple);
            }
        }
    }
    triple_ids.sort_unstable();
    triple_ids.dedup();
    let all = kg.triples();
    let edges = triple_ids.into_iter().map(|i| all[i as usize]).collect();
    Ok(Subgraph { center, hop, nodes, edges })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::KgBuilder;

    #[test]
    fn isolated_node_is_alone() {
        let mut b = KgBuilder::new();
        b.entity("solo", "x").triple("a", "r", "b");
        let kg = b.build().0;
        let solo = kg.entity_by_key("solo").unwrap();
        let g = ego_subgraph(&kg, solo, 2).unwrap();
        assert_eq!(g.nodes, vec![solo]);
        assert!(g.edges.is_empty());
    }

    #[test]
    fn path_one_hop() {
        let mut b = KgBuilder::new();
        b.triple("a", "r", "b").triple("b", "r", "c");
        let kg = b.build().0;
        let [a, bb, c] = ["a", "b", "c"].map(|k| kg.entity_by_key(k).unwrap());
        let g = ego_subgraph(&kg, a, 1).unwrap();
        assert_eq!(g.nodes, vec![a, bb]);
        assert_eq!(g.edges.len(), 1);
        assert_eq!((g.edges[0].head, g.edges[0].tail), (a, bb));
        assert!(!g.contains(c));
    }

    #[test]
    fn errors() {
        let mut b = KgBuilder::new();
        b.triple("a", "r", "b");
        let kg = b.build().0;
        assert!(matches!(ego_subgraph(&kg, 99, 1), Err(KgError::EntityNotFound(99))));
        assert!(matches!(ego_subgraph(&kg, 0, 0), Err(KgError::ZeroHop)));
    }
}

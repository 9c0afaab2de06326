use std::collections::HashMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::load::id_string;
use super::{EntityId, KgError, KnowledgeGraph};

/// A recommendable item with its side information.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Item {
    pub item_id: String,
    pub title: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub external_id: Option<String>,
    #[serde(default)]
    pub entity_id: Option<EntityId>,
    #[serde(default)]
    pub popularity: u64,
}

impl Item {
    pub fn new(item_id: impl Into<String>, title: impl Into<String>) -> Self {
        Item {
            item_id: item_id.into(),
            title: title.into(),
            description: String::new(),
            external_id: None,
            entity_id: None,
            popularity: 0,
        }
    }
}

/// Items in file order with an id index.
#[derive(Debug, Clone, Default)]
pub struct ItemTable {
    items: Vec<Item>,
    index: HashMap<String, usize>,
}

impl ItemTable {
    pub fn new(items: Vec<Item>) -> Result<Self, KgError> {
        let mut index = HashMap::with_capacity(items.len());
        for (i, item) in items.iter().enumerate() {
            if index.insert(item.item_id.clone(), i).is_some() {
                return Err(KgError::DuplicateItem(item.item_id.clone()));
            }
        }
        Ok(ItemTable { items, index })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn get(&self, item_id: &str) -> Option<&Item> {
        self.index.get(item_id).map(|&i| &self.items[i])
    }

    pub fn position(&self, item_id: &str) -> Option<usize> {
        self.index.get(item_id).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Item> {
        self.items.iter()
    }

    pub(crate) fn items_mut(&mut self) -> &mut [Item] {
        &mut self.items
    }
}

/// Reads JSON-lines `{"id":…,"title":…,"description":…,"external_id":…}`.
pub fn load_items<R: BufRead>(source: R) -> Result<ItemTable, KgError> {
    #[derive(Deserialize)]
    struct Row {
        id: Value,
        title: String,
        #[serde(default)]
        description: String,
        #[serde(default)]
        external_id: Option<Value>,
    }
    let mut items = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Row = serde_json::from_str(&line)
            .map_err(|e| KgError::Parse { line: i + 1, message: e.to_string() })?;
        let item_id = id_string(&row.id)
            .ok_or_else(|| KgError::Parse { line: i + 1, message: "id must be a string or number".into() })?;
        items.push(Item {
            item_id,
            title: row.title,
            description: row.description,
            external_id: row.external_id.as_ref().and_then(id_string),
            entity_id: None,
            popularity: 0,
        });
    }
    ItemTable::new(items)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LinkReport {
    pub linked: usize,
    pub unlinked: Vec<String>,
}

/// Links items to KG entities by exact external id. Items without an
/// external id, or whose id is absent from the KG, are reported unlinked.
pub fn link_items(items: &mut ItemTable, kg: &KnowledgeGraph) -> Result<LinkReport, KgError> {
    let mut report = LinkReport::default();
    for item in items.items_mut() {
        item.entity_id = None;
        let Some(ext) = item.external_id.as_deref() else {
            report.unlinked.push(item.item_id.clone());
            continue;
        };
        match kg.entities_by_external(ext) {
            [] => report.unlinked.push(item.item_id.clone()),
            [one] => {
                item.entity_id = Some(*one);
                report.linked += 1;
            }
            many => {
                return Err(KgError::AmbiguousLink { external_id: ext.to_owned(), entities: many.to_vec() })
            }
        }
    }
    if !report.unlinked.is_empty() {
        log::warn!("{} of {} items have no KG entity", report.unlinked.len(), items.len());
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::KgBuilder;

    fn item(id: &str, ext: Option<&str>) -> Item {
        Item { external_id: ext.map(str::to_owned), ..Item::new(id, id) }
    }

    #[test]
    fn links_present_and_reports_absent() {
        let mut b = KgBuilder::new();
        b.triple("m.1", "r", "m.2");
        let kg = b.build().0;
        let mut items = ItemTable::new(vec![item("i1", Some("m.1")), item("i2", Some("m.9")), item("i3", None)]).unwrap();
        let report = link_items(&mut items, &kg).unwrap();
        assert_eq!(report.linked, 1);
        assert_eq!(report.unlinked, ["i2", "i3"]);
        assert_eq!(items.get("i1").unwrap().entity_id, kg.entity_by_key("m.1"));
    }

    #[test]
    fn shared_external_id_is_ambiguous() {
        let mut b = KgBuilder::new();
        b.entity_with_external("m.1", "tt01", "A").entity_with_external("m.2", "tt01", "B");
        let kg = b.build().0;
        let mut items = ItemTable::new(vec![item("i1", Some("tt01"))]).unwrap();
        let err = link_items(&mut items, &kg).unwrap_err();
        assert!(matches!(err, KgError::AmbiguousLink { ref entities, .. } if entities.len() == 2));
    }

    #[test]
    fn duplicate_item_ids_rejected() {
        assert!(ItemTable::new(vec![item("x", None), item("x", None)]).is_err());
    }

    #[test]
    fn items_file_parses() {
        let src = "{\"id\":1,\"title\":\"Matrix\",\"external_id\":\"m.1\"}\n{\"id\":\"2\",\"title\":\"Heat\",\"description\":\"crime\"}\n";
        let t = load_items(src.as_bytes()).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.get("1").unwrap().external_id.as_deref(), Some("m.1"));
        assert_eq!(t.get("2").unwrap().description, "crime");
    }
}

//! Triple and attribute file readers.
//!
//! Triple lines are either `head<TAB>relation<TAB>tail` or JSON objects
//! `{"h":…,"r":…,"t":…}`; the format is detected per line. Attribute files
//! are JSON-lines `{"id":…,"text":…}`. Ids may be JSON strings or numbers.

use std::collections::HashMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{BuildStats, KgBuilder, KgError, KnowledgeGraph};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawTriple {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LoadStats {
    pub lines: usize,
    #[serde(flatten)]
    pub build: BuildStats,
}

/// Renders a JSON scalar id as a string key.
pub(crate) fn id_string(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn parse_line(line: &str, lineno: usize) -> Result<RawTriple, KgError> {
    let err = |message: String| KgError::Parse { line: lineno, message };
    if line.starts_with('{') {
        let v: Value = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        let field = |k: &str| {
            v.get(k)
                .and_then(id_string)
                .ok_or_else(|| err(format!("missing or non-scalar field {k:?}")))
        };
        Ok(RawTriple { head: field("h")?, relation: field("r")?, tail: field("t")? })
    } else {
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 3 || parts.iter().any(|p| p.trim().is_empty()) {
            return Err(err(format!("expected 3 tab-separated fields, found {}", parts.len())));
        }
        Ok(RawTriple {
            head: parts[0].trim().to_owned(),
            relation: parts[1].trim().to_owned(),
            tail: parts[2].trim().to_owned(),
        })
    }
}

/// Parses a triple stream; blank lines are skipped. Line numbers are 1-based.
pub fn parse_triples<R: BufRead>(source: R) -> Result<(Vec<RawTriple>, usize), KgError> {
    let mut out = Vec::new();
    let mut lines = 0;
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() {
            continue;
        }
        lines += 1;
        out.push(parse_line(trimmed, i + 1)?);
    }
    Ok((out, lines))
}

/// One attribute row. `external_id` is only meaningful for entities.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Attribute {
    pub text: String,
    pub external_id: Option<String>,
}

impl From<&str> for Attribute {
    fn from(text: &str) -> Self {
        Attribute { text: text.to_owned(), external_id: None }
    }
}

/// Reads a JSON-lines attribute table `{"id":…,"text":…}` into `id → attribute`.
/// Entity rows may carry an `"external_id"` used for item linking.
pub fn load_attributes<R: BufRead>(source: R) -> Result<HashMap<String, Attribute>, KgError> {
    #[derive(Deserialize)]
    struct Row {
        id: Value,
        #[serde(default)]
        text: String,
        #[serde(default)]
        external_id: Option<Value>,
    }
    let mut map = HashMap::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Row = serde_json::from_str(&line)
            .map_err(|e| KgError::Parse { line: i + 1, message: e.to_string() })?;
        let id = id_string(&row.id)
            .ok_or_else(|| KgError::Parse { line: i + 1, message: "id must be a string or number".into() })?;
        let external_id = row.external_id.as_ref().and_then(id_string);
        map.insert(id, Attribute { text: row.text, external_id });
    }
    Ok(map)
}

/// Builds a graph from a triple stream plus entity and relation attribute
/// tables. Attribute rows for entities that appear in no triple become
/// isolated nodes; triple endpoints without a row get empty text.
pub fn load_triples<R: BufRead>(
    source: R,
    entity_attrs: &HashMap<String, Attribute>,
    relation_attrs: &HashMap<String, Attribute>,
) -> Result<(KnowledgeGraph, LoadStats), KgError> {
    let (raw, lines) = parse_triples(source)?;
    let mut b = KgBuilder::new();
    for (id, attr) in entity_attrs {
        match &attr.external_id {
            Some(ext) => b.entity_with_external(id, ext, &attr.text),
            None => b.entity(id, &attr.text),
        };
    }
    for (id, attr) in relation_attrs {
        b.relation(id, &attr.text);
    }
    for t in &raw {
        b.triple(&t.head, &t.relation, &t.tail);
    }
    let (kg, build) = b.build();
    log::info!(
        "loaded {} triples ({} duplicates dropped) over {} entities and {} relations",
        build.triples,
        build.duplicate_triples,
        build.entities,
        build.relations
    );
    Ok((kg, LoadStats { lines, build }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixed_formats_parse() {
        let src = "a\tr\tb\n{\"h\":1,\"r\":\"rel\",\"t\":\"x\"}\n\n";
        let (raw, lines) = parse_triples(src.as_bytes()).unwrap();
        assert_eq!(lines, 2);
        assert_eq!(raw[1], RawTriple { head: "1".into(), relation: "rel".into(), tail: "x".into() });
    }

    #[test]
    fn malformed_line_names_its_number() {
        let src = "a\tr\tb\nbroken line\nc\tr\td\n";
        match parse_triples(src.as_bytes()) {
            Err(KgError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn json_missing_field_is_error() {
        let err = parse_triples("{\"h\":\"a\",\"r\":\"b\"}".as_bytes()).unwrap_err();
        assert!(matches!(err, KgError::Parse { line: 1, .. }));
    }

    #[test]
    fn three_lines_with_duplicate() {
        let src = "a\tr\tb\nb\tr\tc\na\tr\tb\n";
        let mut ents = HashMap::new();
        ents.insert("a".to_owned(), Attribute::from("Alpha"));
        let (kg, stats) = load_triples(src.as_bytes(), &ents, &HashMap::new()).unwrap();
        assert_eq!(kg.triples().len(), 2);
        assert_eq!(stats.lines, 3);
        assert_eq!(stats.build.duplicate_triples, 1);
        assert_eq!(stats.build.entities_missing_text, 2);
        assert_eq!(kg.entity(kg.entity_by_key("a").unwrap()).unwrap().text, "Alpha");
        assert_eq!(kg.entity(kg.entity_by_key("b").unwrap()).unwrap().text, "");
    }

    #[test]
    fn attributes_accept_numeric_ids() {
        let src = "{\"id\":7,\"text\":\"seven\"}\n{\"id\":\"m.1\",\"text\":\"x\",\"external_id\":42}\n";
        let map = load_attributes(src.as_bytes()).unwrap();
        assert_eq!(map["7"].text, "seven");
        assert_eq!(map["m.1"].external_id.as_deref(), Some("42"));
    }
}

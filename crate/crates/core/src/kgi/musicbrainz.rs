//! MusicBrainz web service backend.
//!
//! Relationship types become relation ids (`member-of-band`, or
//! `member-of-band:reverse` for backward relationships). A few scalar
//! attributes (dates, country, type, ...) are exposed as relations to literal
//! entities. The entity type is kept in the entity description.

use std::collections::HashMap;
use std::sync::{Arc, LazyLock, Mutex};

use indexmap::IndexMap;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::transport::{HttpRequest, Transport};
use super::{
    Capabilities, CandidateEntity, Direction, ExpansionResult, KgError, KnowledgeGraph,
    RelationOffer, DEFAULT_MAX_EDGES,
};
use super::wikidata::WIKIDATA_SOURCE;
use crate::kg::{Edge, Entity, EntityId, RelationId, RelationType, SourceTag};

pub const MUSICBRAINZ_SOURCE: &str = "musicbrainz";
const REVERSE_SUFFIX: &str = ":reverse";

static MBID: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^[0-9a-f]{8}-[0-9a-f]{4}-[0-9a-f]{4}-[0-9a-f]{4}-[0-9a-f]{12}$").unwrap()
});

/// Types probed, in order, when an id's type is not yet known.
const PROBE_TYPES: &[&str] = &[
    "artist",
    "place",
    "event",
    "recording",
    "release",
    "release-group",
    "label",
    "work",
    "area",
];

const RELS: &str = "artist-rels+label-rels+place-rels+event-rels+recording-rels+release-rels\
                    +release-group-rels+work-rels+area-rels+url-rels";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MusicBrainzConfig {
    pub base_url: String,
    pub user_agent: String,
    pub requests_per_second: f64,
    pub max_edges: usize,
    /// Entity types queried by `search`.
    pub search_types: Vec<String>,
}

impl Default for MusicBrainzConfig {
    fn default() -> Self {
        Self {
            base_url: "https://musicbrainz.org/ws/2".into(),
            user_agent: concat!("kgtrav/", env!("CARGO_PKG_VERSION")).into(),
            requests_per_second: 1.0,
            max_edges: DEFAULT_MAX_EDGES,
            search_types: ["artist", "recording", "place", "event", "release"]
                .map(String::from)
                .to_vec(),
        }
    }
}

/// One outgoing fact of an entity document.
#[derive(Debug, Clone)]
struct Fact {
    relation: RelationType,
    target: Entity,
}

pub struct MusicBrainzKg {
    source: SourceTag,
    config: MusicBrainzConfig,
    transport: Arc<dyn Transport>,
    types: Mutex<HashMap<String, String>>,
    docs: Mutex<HashMap<String, Arc<Value>>>,
}

impl MusicBrainzKg {
    pub fn new(config: MusicBrainzConfig, transport: Arc<dyn Transport>) -> Self {
        Self {
            source: SourceTag::new(MUSICBRAINZ_SOURCE),
            config,
            transport,
            types: Mutex::new(HashMap::new()),
            docs: Mutex::new(HashMap::new()),
        }
    }

    pub fn config(&self) -> &MusicBrainzConfig {
        &self.config
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{path}", self.config.base_url.trim_end_matches('/'))
    }

    fn remember_type(&self, mbid: &str, kind: &str) {
        self.types
            .lock()
            .expect("type cache lock")
            .insert(mbid.to_string(), kind.to_string());
    }

    fn fetch_typed(&self, kind: &str, mbid: &str) -> Result<Value, KgError> {
        let mut inc = RELS.to_string();
        if matches!(kind, "recording" | "release" | "release-group") {
            inc.push_str("+artist-credits");
        }
        let request = HttpRequest::new("lookup", self.url(&format!("{kind}/{mbid}")))
            .param("inc", inc)
            .param("fmt", "json");
        let body = self.transport.get(&request)?;
        serde_json::from_str(&body).map_err(|e| KgError::Malformed(e.to_string()))
    }

    /// Entity document and its type, probing types when unknown.
    fn document(&self, mbid: &str) -> Result<Option<(String, Arc<Value>)>, KgError> {
        if !MBID.is_match(mbid) {
            return Ok(None);
        }
        let known = self.types.lock().expect("type cache lock").get(mbid).cloned();
        if let Some(doc) = self.docs.lock().expect("doc cache lock").get(mbid) {
            if let Some(kind) = &known {
                return Ok(Some((kind.clone(), doc.clone())));
            }
        }
        let candidates: Vec<&str> = match &known {
            Some(kind) => vec![kind.as_str()],
            None => PROBE_TYPES.to_vec(),
        };
        for kind in candidates {
            match self.fetch_typed(kind, mbid) {
                Ok(value) => {
                    let doc = Arc::new(value);
                    self.remember_type(mbid, kind);
                    self.docs
                        .lock()
                        .expect("doc cache lock")
                        .insert(mbid.to_string(), doc.clone());
                    return Ok(Some((kind.to_string(), doc)));
                }
                Err(KgError::UnknownEntity(_)) => continue,
                Err(e) => return Err(e),
            }
        }
        Ok(None)
    }

    fn entity_from(&self, kind: &str, value: &Value) -> Option<Entity> {
        let id = value.get("id")?.as_str()?;
        let label = value
            .get("name")
            .or_else(|| value.get("title"))
            .and_then(Value::as_str)
            .filter(|s| !s.is_empty())
            .unwrap_or(id);
        self.remember_type(id, kind);
        let description = match value.get("disambiguation").and_then(Value::as_str) {
            Some(d) if !d.is_empty() => format!("{kind}, {d}"),
            _ => kind.to_string(),
        };
        Some(Entity::new(EntityId::new(&self.source, id), label).with_description(description))
    }

    fn literal(&self, value: &str) -> Entity {
        Entity::new(EntityId::new(&self.source, value), value)
    }

    fn relation(&self, id: &str, label: &str) -> RelationType {
        RelationType::new(RelationId::new(&self.source, id), label)
    }

    fn facts(&self, kind: &str, doc: &Value) -> Vec<Fact> {
        let mut facts = Vec::new();
        let mut attr = |id: &str, label: &str, value: Option<&Value>| {
            let text = match value {
                Some(Value::String(s)) if !s.is_empty() => s.clone(),
                Some(Value::Number(n)) => n.to_string(),
                _ => return,
            };
            facts.push(Fact {
                relation: self.relation(id, label),
                target: self.literal(&text),
            });
        };
        attr("type", "type", doc.get("type"));
        attr("country", "country", doc.get("country"));
        attr("gender", "gender", doc.get("gender"));
        attr("begin-date", "begin date", doc.pointer("/life-span/begin"));
        attr("end-date", "end date", doc.pointer("/life-span/end"));
        attr("date", "date", doc.get("date"));
        attr("first-release-date", "first release date", doc.get("first-release-date"));
        attr("time", "time", doc.get("time"));
        attr("address", "address", doc.get("address"));
        attr("length-ms", "length in milliseconds", doc.get("length"));
        attr("status", "status", doc.get("status"));

        for (key, id, label) in [
            ("area", "area", "area"),
            ("begin-area", "begin-area", "begin area"),
            ("end-area", "end-area", "end area"),
        ] {
            if let Some(target) = doc.get(key).and_then(|v| self.entity_from("area", v)) {
                facts.push(Fact {
                    relation: self.relation(id, label),
                    target,
                });
            }
        }
        if matches!(kind, "recording" | "release" | "release-group") {
            for credit in doc
                .get("artist-credit")
                .and_then(Value::as_array)
                .into_iter()
                .flatten()
            {
                if let Some(target) = credit.get("artist").and_then(|a| self.entity_from("artist", a)) {
                    facts.push(Fact {
                        relation: self.relation("artist-credit", "artist credit"),
                        target,
                    });
                }
            }
        }
        for rel in doc
            .get("relations")
            .and_then(Value::as_array)
            .into_iter()
            .flatten()
        {
            let Some(rel_type) = rel.get("type").and_then(Value::as_str) else { continue };
            let Some(target_type) = rel.get("target-type").and_then(Value::as_str) else {
                continue;
            };
            if target_type == "url" {
                continue;
            }
            let Some(target) = rel
                .get(target_type.replace('-', "_").as_str())
                .or_else(|| rel.get(target_type))
                .and_then(|t| self.entity_from(target_type, t))
            else {
                continue;
            };
            let backward = rel.get("direction").and_then(Value::as_str) == Some("backward");
            let slug = rel_type.to_lowercase().replace(' ', "-");
            let relation = if backward {
                self.relation(&format!("{slug}{REVERSE_SUFFIX}"), &format!("{rel_type} (reverse)"))
            } else {
                self.relation(&slug, rel_type)
            };
            facts.push(Fact { relation, target });
        }
        facts
    }

    fn search_type(&self, kind: &str, mention: &str, limit: usize) -> Result<Vec<(f64, Entity)>, KgError> {
        let request = HttpRequest::new("search", self.url(kind))
            .param("query", mention)
            .param("limit", limit.to_string())
            .param("fmt", "json");
        let body = self.transport.get(&request)?;
        let value: Value = serde_json::from_str(&body).map_err(|e| KgError::Malformed(e.to_string()))?;
        let plural = format!("{kind}s");
        let hits = value
            .get(&plural)
            .and_then(Value::as_array)
            .ok_or_else(|| KgError::Malformed(format!("search response without `{plural}`")))?;
        Ok(hits
            .iter()
            .filter_map(|hit| {
                let score = hit.get("score").and_then(Value::as_f64).unwrap_or(0.0);
                Some((score, self.entity_from(kind, hit)?))
            })
            .collect())
    }
}

impl KnowledgeGraph for MusicBrainzKg {
    fn source(&self) -> &SourceTag {
        &self.source
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            sparql: false,
            inverse_edges: false,
            entity_linker: true,
        }
    }

    /// Searches every configured type and merges the hits by score.
    fn search(&self, mention: &str, limit: usize) -> Result<Vec<CandidateEntity>, KgError> {
        if mention.trim().is_empty() || limit == 0 {
            return Ok(Vec::new());
        }
        let mut hits = Vec::new();
        let mut last_error = None;
        for kind in &self.config.search_types {
            match self.search_type(kind, mention.trim(), limit) {
                Ok(found) => hits.extend(found),
                Err(e) => last_error = Some(e),
            }
        }
        if hits.is_empty() {
            if let Some(e) = last_error {
                return Err(e);
            }
        }
        // stable: equal scores keep type order
        hits.sort_by(|a, b| b.0.total_cmp(&a.0));
        Ok(hits
            .into_iter()
            .take(limit)
            .enumerate()
            .map(|(rank, (_, entity))| CandidateEntity {
                entity,
                rank: Some(rank as u32),
            })
            .collect())
    }

    fn lookup(&self, id: &EntityId) -> Result<Option<Entity>, KgError> {
        if id.source != self.source {
            return Ok(None);
        }
        Ok(self
            .document(&id.local_id)?
            .and_then(|(kind, doc)| self.entity_from(&kind, &doc)))
    }

    fn get_relations(&self, selected: &[EntityId]) -> Result<Vec<RelationOffer>, KgError> {
        let mut offers: IndexMap<RelationId, RelationType> = IndexMap::new();
        for id in selected {
            if id.source != self.source {
                return Err(KgError::UnknownEntity(id.to_string()));
            }
            let Some((kind, doc)) = self.document(&id.local_id)? else {
                return Err(KgError::UnknownEntity(id.to_string()));
            };
            for fact in self.facts(&kind, &doc) {
                offers.entry(fact.relation.id.clone()).or_insert(fact.relation);
            }
        }
        Ok(offers.into_values().map(RelationOffer::forward).collect())
    }

    fn get_edges(
        &self,
        selected: &[EntityId],
        relation: &RelationId,
        direction: Direction,
    ) -> Result<ExpansionResult, KgError> {
        if direction == Direction::Inverse {
            return Ok(ExpansionResult::empty_with_warning(
                "MusicBrainz relations are offered in both directions; inverse traversal is not used",
            ));
        }
        let mut result = ExpansionResult::default();
        let mut relation_type = None;
        'outer: for id in selected {
            if id.source != self.source {
                continue;
            }
            let Some((kind, doc)) = self.document(&id.local_id)? else { continue };
            for fact in self.facts(&kind, &doc) {
                if &fact.relation.id != relation {
                    continue;
                }
                let edge = Edge::new(id.clone(), relation.clone(), fact.target.id.clone());
                if result.edges.contains(&edge) {
                    continue;
                }
                if result.edges.len() == self.config.max_edges {
                    result.truncated = true;
                    break 'outer;
                }
                relation_type.get_or_insert(fact.relation);
                if !result.entities.iter().any(|e| e.id == fact.target.id) {
                    result.entities.push(fact.target);
                }
                result.edges.push(edge);
            }
        }
        match relation_type {
            Some(r) => result.relations.push(r),
            None => {
                result.warning = Some(format!(
                    "relation {} has no edges for the selected entities",
                    relation.local_id
                ))
            }
        }
        Ok(result)
    }

    /// Wikidata ids from the entity's url relationships.
    fn external_links(&self, id: &EntityId) -> Result<Vec<EntityId>, KgError> {
        if id.source != self.source {
            return Ok(Vec::new());
        }
        let Some((_, doc)) = self.document(&id.local_id)? else {
            return Ok(Vec::new());
        };
        let wikidata = SourceTag::new(WIKIDATA_SOURCE);
        Ok(doc
            .get("relations")
            .and_then(Value::as_array)
            .into_iter()
            .flatten()
            .filter(|rel| rel.get("type").and_then(Value::as_str) == Some("wikidata"))
            .filter_map(|rel| rel.pointer("/url/resource").and_then(Value::as_str))
            .filter_map(|url| url.rsplit('/').next())
            .filter(|qid| qid.starts_with('Q'))
            .map(|qid| EntityId::new(&wikidata, qid))
            .collect())
    }
}

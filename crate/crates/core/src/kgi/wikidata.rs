//! Wikidata backend: SPARQL for relations and edges, the MediaWiki API for
//! entity search and lookup.

use std::collections::HashSet;
use std::sync::{Arc, LazyLock};

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::transport::{HttpRequest, Transport};
use super::{
    Capabilities, CandidateEntity, Direction, ExpansionResult, KgError, KnowledgeGraph,
    RelationOffer, DEFAULT_MAX_EDGES,
};
use crate::kg::{Edge, Entity, EntityId, RelationId, RelationType, SourceTag};

pub const WIKIDATA_SOURCE: &str = "wikidata";
const ENTITY_PREFIX: &str = "http://www.wikidata.org/entity/";

static ITEM_ID: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^Q[1-9][0-9]*$").unwrap());
static PROPERTY_ID: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^P[1-9][0-9]*$").unwrap());

/// Wikidata properties holding MusicBrainz identifiers, with the MusicBrainz entity type.
const MUSICBRAINZ_ID_PROPERTIES: &[(&str, &str)] = &[
    ("P434", "artist"),
    ("P1004", "place"),
    ("P4404", "recording"),
    ("P5813", "release"),
    ("P6423", "event"),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WikidataConfig {
    pub sparql_endpoint: String,
    pub api_endpoint: String,
    pub language: String,
    pub inverse_edges: bool,
    pub include_external_ids: bool,
    pub max_edges: usize,
    /// Cap on offered relations per direction.
    pub max_relations: usize,
    pub requests_per_second: f64,
    pub user_agent: String,
}

impl Default for WikidataConfig {
    fn default() -> Self {
        Self {
            sparql_endpoint: "https://query.wikidata.org/sparql".into(),
            api_endpoint: "https://www.wikidata.org/w/api.php".into(),
            language: "en".into(),
            inverse_edges: false,
            include_external_ids: false,
            max_edges: DEFAULT_MAX_EDGES,
            max_relations: 200,
            requests_per_second: 5.0,
            user_agent: concat!("kgtrav/", env!("CARGO_PKG_VERSION")).into(),
        }
    }
}

pub struct WikidataKg {
    source: SourceTag,
    config: WikidataConfig,
    transport: Arc<dyn Transport>,
}

impl WikidataKg {
    pub fn new(config: WikidataConfig, transport: Arc<dyn Transport>) -> Self {
        Self {
            source: SourceTag::new(WIKIDATA_SOURCE),
            config,
            transport,
        }
    }

    pub fn config(&self) -> &WikidataConfig {
        &self.config
    }

    fn sparql(&self, query: String) -> Result<Vec<Binding>, KgError> {
        let request = HttpRequest::new("sparql", &self.config.sparql_endpoint)
            .param("query", query)
            .param("format", "json")
            .accept("application/sparql-results+json");
        let body = self.transport.get(&request)?;
        parse_bindings(&body)
    }

    fn api(&self, operation: &str, params: &[(&str, &str)]) -> Result<Value, KgError> {
        let mut request = HttpRequest::new(operation, &self.config.api_endpoint);
        for (k, v) in params {
            request = request.param(*k, *v);
        }
        let body = self.transport.get(&request.param("format", "json"))?;
        serde_json::from_str(&body).map_err(|e| KgError::Malformed(e.to_string()))
    }

    fn values_clause(&self, selected: &[EntityId]) -> Option<String> {
        let items: Vec<String> = selected
            .iter()
            .filter(|id| id.source == self.source && ITEM_ID.is_match(&id.local_id))
            .map(|id| format!("wd:{}", id.local_id))
            .collect();
        (!items.is_empty()).then(|| items.join(" "))
    }

    fn label_service(&self) -> String {
        format!(
            "SERVICE wikibase:label {{ bd:serviceParam wikibase:language \"{},en\". }}",
            self.config.language
        )
    }

    fn relations_query(&self, values: &str, direction: Direction) -> String {
        let pattern = match direction {
            Direction::Forward => "?sel ?direct ?other .",
            Direction::Inverse => "?other ?direct ?sel .",
        };
        let external = if self.config.include_external_ids {
            ""
        } else {
            "?p wikibase:propertyType ?ptype . FILTER(?ptype != wikibase:ExternalId)"
        };
        format!(
            "SELECT DISTINCT ?p ?pLabel WHERE {{ VALUES ?sel {{ {values} }} {pattern} \
             ?p wikibase:directClaim ?direct . {external} {} }} LIMIT {}",
            self.label_service(),
            self.config.max_relations
        )
    }

    fn edges_query(&self, values: &str, property: &str, direction: Direction) -> String {
        let pattern = match direction {
            Direction::Forward => format!("?sel wdt:{property} ?other ."),
            Direction::Inverse => format!("?other wdt:{property} ?sel ."),
        };
        format!(
            "SELECT ?sel ?other ?otherLabel ?otherDescription ?pLabel WHERE {{ \
             VALUES ?sel {{ {values} }} BIND(wd:{property} AS ?p) {pattern} {} }} LIMIT {}",
            self.label_service(),
            self.config.max_edges + 1
        )
    }

    fn query_relations(
        &self,
        values: &str,
        direction: Direction,
    ) -> Result<Vec<RelationType>, KgError> {
        let mut relations: Vec<RelationType> = self
            .sparql(self.relations_query(values, direction))?
            .iter()
            .filter_map(|row| {
                let id = row.entity_id("p")?;
                let label = row.literal("pLabel").unwrap_or(&id).to_string();
                Some(RelationType::new(RelationId::new(&self.source, id.clone()), label))
            })
            .collect();
        relations.sort_by_key(|r| numeric_id(&r.id.local_id));
        relations.dedup_by(|a, b| a.id == b.id);
        Ok(relations)
    }
}

fn numeric_id(id: &str) -> u64 {
    id[1..].parse().unwrap_or(u64::MAX)
}

#[derive(Debug, Default)]
struct Binding(serde_json::Map<String, Value>);

impl Binding {
    fn raw(&self, var: &str) -> Option<(&str, &str)> {
        let cell = self.0.get(var)?;
        Some((cell.get("type")?.as_str()?, cell.get("value")?.as_str()?))
    }

    fn literal(&self, var: &str) -> Option<&str> {
        self.raw(var).map(|(_, v)| v)
    }

    fn entity_id(&self, var: &str) -> Option<String> {
        match self.raw(var)? {
            ("uri", value) => value.strip_prefix(ENTITY_PREFIX).map(str::to_string),
            _ => None,
        }
    }
}

fn parse_bindings(body: &str) -> Result<Vec<Binding>, KgError> {
    let value: Value = serde_json::from_str(body).map_err(|e| KgError::Malformed(e.to_string()))?;
    let rows = value
        .pointer("/results/bindings")
        .and_then(Value::as_array)
        .ok_or_else(|| KgError::Malformed("SPARQL response without results.bindings".into()))?;
    Ok(rows
        .iter()
        .filter_map(|row| row.as_object().cloned().map(Binding))
        .collect())
}

/// Render a literal the way it should appear in prompts.
fn literal_label(value: &str) -> String {
    value
        .strip_suffix("T00:00:00Z")
        .unwrap_or(value)
        .to_string()
}

impl KnowledgeGraph for WikidataKg {
    fn source(&self) -> &SourceTag {
        &self.source
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            sparql: true,
            inverse_edges: self.config.inverse_edges,
            entity_linker: true,
        }
    }

    fn search(&self, mention: &str, limit: usize) -> Result<Vec<CandidateEntity>, KgError> {
        if mention.trim().is_empty() || limit == 0 {
            return Ok(Vec::new());
        }
        let limit = limit.to_string();
        let value = self.api(
            "search",
            &[
                ("action", "wbsearchentities"),
                ("search", mention.trim()),
                ("language", &self.config.language),
                ("type", "item"),
                ("limit", &limit),
            ],
        )?;
        let hits = value
            .get("search")
            .and_then(Value::as_array)
            .ok_or_else(|| KgError::Malformed("wbsearchentities without `search`".into()))?;
        Ok(hits
            .iter()
            .filter_map(|hit| {
                let id = hit.get("id")?.as_str()?;
                let label = hit
                    .get("label")
                    .and_then(Value::as_str)
                    .or_else(|| hit.pointer("/display/label/value").and_then(Value::as_str))
                    .unwrap_or(id);
                let mut entity = Entity::new(EntityId::new(&self.source, id), label);
                if let Some(d) = hit.get("description").and_then(Value::as_str) {
                    entity = entity.with_description(d);
                }
                Some(entity)
            })
            .enumerate()
            .map(|(rank, entity)| CandidateEntity {
                entity,
                rank: Some(rank as u32),
            })
            .collect())
    }

    fn lookup(&self, id: &EntityId) -> Result<Option<Entity>, KgError> {
        if id.source != self.source || !ITEM_ID.is_match(&id.local_id) {
            return Ok(None);
        }
        let languages = format!("{}|en", self.config.language);
        let value = self.api(
            "lookup",
            &[
                ("action", "wbgetentities"),
                ("ids", &id.local_id),
                ("props", "labels|descriptions"),
                ("languages", &languages),
            ],
        )?;
        let Some(item) = value.pointer(&format!("/entities/{}", id.local_id)) else {
            return Ok(None);
        };
        if item.get("missing").is_some() {
            return Ok(None);
        }
        let text = |field: &str| {
            [self.config.language.as_str(), "en"].iter().find_map(|lang| {
                item.pointer(&format!("/{field}/{lang}/value"))
                    .and_then(Value::as_str)
                    .map(str::to_string)
            })
        };
        let label = text("labels").unwrap_or_else(|| id.local_id.clone());
        let mut entity = Entity::new(id.clone(), label);
        if let Some(d) = text("descriptions") {
            entity = entity.with_description(d);
        }
        Ok(Some(entity))
    }

    fn get_relations(&self, selected: &[EntityId]) -> Result<Vec<RelationOffer>, KgError> {
        let Some(values) = self.values_clause(selected) else {
            return Ok(Vec::new());
        };
        let mut offers: Vec<RelationOffer> = self
            .query_relations(&values, Direction::Forward)?
            .into_iter()
            .map(RelationOffer::forward)
            .collect();
        if self.config.inverse_edges {
            offers.extend(
                self.query_relations(&values, Direction::Inverse)?
                    .into_iter()
                    .map(RelationOffer::inverse),
            );
        }
        Ok(offers)
    }

    fn get_edges(
        &self,
        selected: &[EntityId],
        relation: &RelationId,
        direction: Direction,
    ) -> Result<ExpansionResult, KgError> {
        if relation.source != self.source || !PROPERTY_ID.is_match(&relation.local_id) {
            return Ok(ExpansionResult::empty_with_warning(format!(
                "unknown relation {}",
                relation.local_id
            )));
        }
        if direction == Direction::Inverse && !self.config.inverse_edges {
            return Ok(ExpansionResult::empty_with_warning(format!(
                "inverse traversal of {} is disabled",
                relation.local_id
            )));
        }
        let Some(values) = self.values_clause(selected) else {
            return Ok(ExpansionResult::empty_with_warning(
                "no expandable Wikidata items selected",
            ));
        };
        let rows = self.sparql(self.edges_query(&values, &relation.local_id, direction))?;

        let mut result = ExpansionResult::default();
        let mut seen: HashSet<String> = HashSet::new();
        let mut relation_label = None;
        for row in &rows {
            let Some(anchor) = row.entity_id("sel") else { continue };
            let Some((kind, raw)) = row.raw("other") else { continue };
            if result.edges.len() == self.config.max_edges {
                result.truncated = true;
                break;
            }
            relation_label = relation_label.or_else(|| row.literal("pLabel").map(str::to_string));
            let other = match (kind, raw.strip_prefix(ENTITY_PREFIX)) {
                ("uri", Some(qid)) => {
                    let label = row.literal("otherLabel").unwrap_or(qid);
                    let mut entity = Entity::new(EntityId::new(&self.source, qid), label);
                    if let Some(d) = row.literal("otherDescription") {
                        entity = entity.with_description(d);
                    }
                    entity
                }
                // literals and non-entity IRIs are opaque labels
                _ => {
                    let label = literal_label(raw);
                    Entity::new(EntityId::new(&self.source, label.clone()), label)
                }
            };
            let anchor = EntityId::new(&self.source, anchor);
            let edge = match direction {
                Direction::Forward => Edge::new(anchor, relation.clone(), other.id.clone()),
                Direction::Inverse => Edge::new(other.id.clone(), relation.clone(), anchor),
            };
            if seen.insert(other.id.local_id.clone()) {
                result.entities.push(other);
            }
            if !result.edges.contains(&edge) {
                result.edges.push(edge);
            }
        }
        if result.edges.is_empty() {
            result.warning = Some(format!(
                "relation {} has no edges for the selected entities",
                relation.local_id
            ));
        } else {
            let label = relation_label.unwrap_or_else(|| relation.local_id.clone());
            result.relations = vec![RelationType::new(relation.clone(), label)];
        }
        Ok(result)
    }

    /// MusicBrainz ids recorded on the item.
    fn external_links(&self, id: &EntityId) -> Result<Vec<EntityId>, KgError> {
        if id.source != self.source || !ITEM_ID.is_match(&id.local_id) {
            return Ok(Vec::new());
        }
        let paths: Vec<String> = MUSICBRAINZ_ID_PROPERTIES
            .iter()
            .map(|(p, _)| format!("wdt:{p}"))
            .collect();
        let query = format!(
            "SELECT ?mbid WHERE {{ wd:{} {} ?mbid . }} LIMIT 5",
            id.local_id,
            paths.join("|")
        );
        let mb = SourceTag::new(super::musicbrainz::MUSICBRAINZ_SOURCE);
        Ok(self
            .sparql(query)?
            .iter()
            .filter_map(|row| row.literal("mbid"))
            .map(|mbid| EntityId::new(&mb, mbid))
            .collect())
    }
}

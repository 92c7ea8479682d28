//! In-memory triple store, loadable from a tab-separated triples file.
//!
//! File format, one fact per line (UTF-8, `#` comments and blank lines ignored):
//!
//! ```text
//! subject-id  subject-label  relation-id  relation-label  object-id  object-label  [subject-description  [object-description]]
//! ```

use std::collections::HashMap;
use std::path::Path;

use indexmap::{IndexMap, IndexSet};

use super::{
    Capabilities, CandidateEntity, Direction, ExpansionResult, KgError, KnowledgeGraph,
    RelationOffer, DEFAULT_MAX_EDGES,
};
use crate::kg::{Edge, Entity, EntityId, RelationId, RelationType, SourceTag};

#[derive(Debug, Clone)]
pub struct MemoryKg {
    source: SourceTag,
    entities: IndexMap<String, Entity>,
    relations: IndexMap<String, RelationType>,
    triples: IndexSet<(String, String, String)>,
    links: HashMap<String, Vec<EntityId>>,
    inverse_edges: bool,
    max_edges: usize,
}

#[derive(Debug)]
pub struct MemoryKgBuilder {
    kg: MemoryKg,
}

impl MemoryKgBuilder {
    /// Add or replace an entity.
    pub fn entity(mut self, id: &str, label: &str, description: Option<&str>) -> Self {
        self.kg.put_entity(id, label, description);
        self
    }

    pub fn relation(mut self, id: &str, label: &str) -> Self {
        self.kg.put_relation(id, label);
        self
    }

    /// Add a fact between already-declared entities and relation.
    ///
    /// Panics on undeclared ids; use the triples loader for untrusted input.
    pub fn edge(mut self, subject: &str, relation: &str, object: &str) -> Self {
        assert!(self.kg.entities.contains_key(subject), "unknown subject {subject}");
        assert!(self.kg.entities.contains_key(object), "unknown object {object}");
        assert!(self.kg.relations.contains_key(relation), "unknown relation {relation}");
        self.kg
            .triples
            .insert((subject.to_string(), relation.to_string(), object.to_string()));
        self
    }

    /// Explicit cross-graph link for [`KnowledgeGraph::external_links`].
    pub fn link(mut self, id: &str, foreign: EntityId) -> Self {
        self.kg.links.entry(id.to_string()).or_default().push(foreign);
        self
    }

    pub fn inverse_edges(mut self, enabled: bool) -> Self {
        self.kg.inverse_edges = enabled;
        self
    }

    pub fn max_edges(mut self, cap: usize) -> Self {
        self.kg.max_edges = cap;
        self
    }

    pub fn build(self) -> MemoryKg {
        self.kg
    }
}

impl MemoryKg {
    pub fn builder(source: impl AsRef<str>) -> MemoryKgBuilder {
        MemoryKgBuilder {
            kg: MemoryKg {
                source: SourceTag::new(source),
                entities: IndexMap::new(),
                relations: IndexMap::new(),
                triples: IndexSet::new(),
                links: HashMap::new(),
                inverse_edges: false,
                max_edges: DEFAULT_MAX_EDGES,
            },
        }
    }

    pub fn from_triples_file(source: impl AsRef<str>, path: impl AsRef<Path>) -> Result<Self, KgError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_triples(source, &text)
    }

    pub fn parse_triples(source: impl AsRef<str>, text: &str) -> Result<Self, KgError> {
        let mut kg = Self::builder(source).build();
        for (index, raw) in text.lines().enumerate() {
            let line = index + 1;
            let raw = raw.trim_end_matches('\r');
            if raw.trim().is_empty() || raw.trim_start().starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = raw.split('\t').map(str::trim).collect();
            if !(6..=8).contains(&fields.len()) {
                return Err(KgError::TriplesFormat {
                    line,
                    reason: format!("expected 6 to 8 tab-separated fields, found {}", fields.len()),
                });
            }
            if let Some(pos) = fields[..6].iter().position(|f| f.is_empty()) {
                return Err(KgError::TriplesFormat {
                    line,
                    reason: format!("field {} is empty", pos + 1),
                });
            }
            let description = |i: usize| fields.get(i).copied().filter(|d| !d.is_empty());
            kg.merge_entity(fields[0], fields[1], description(6));
            kg.merge_entity(fields[4], fields[5], description(7));
            kg.put_relation(fields[2], fields[3]);
            kg.triples
                .insert((fields[0].to_string(), fields[2].to_string(), fields[4].to_string()));
        }
        Ok(kg)
    }

    pub fn set_inverse_edges(&mut self, enabled: bool) {
        self.inverse_edges = enabled;
    }

    pub fn set_max_edges(&mut self, cap: usize) {
        self.max_edges = cap;
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    /// The stored facts as `(subject, relation, object)` local ids, in insertion order.
    pub fn triples(&self) -> impl Iterator<Item = (&str, &str, &str)> {
        self.triples
            .iter()
            .map(|(s, r, o)| (s.as_str(), r.as_str(), o.as_str()))
    }

    pub fn entity_ids(&self) -> impl Iterator<Item = EntityId> + '_ {
        self.entities.values().map(|e| e.id.clone())
    }

    pub fn relation_types(&self) -> impl Iterator<Item = &RelationType> {
        self.relations.values()
    }

    fn put_entity(&mut self, id: &str, label: &str, description: Option<&str>) {
        let mut entity = Entity::new(EntityId::new(&self.source, id), label);
        if let Some(d) = description {
            entity = entity.with_description(d);
        }
        self.entities.insert(id.to_string(), entity);
    }

    // keeps the first label, fills in a missing description
    fn merge_entity(&mut self, id: &str, label: &str, description: Option<&str>) {
        match self.entities.get_mut(id) {
            Some(existing) => {
                if existing.description.is_none() {
                    existing.description = description.map(str::to_string);
                }
            }
            None => self.put_entity(id, label, description),
        }
    }

    fn put_relation(&mut self, id: &str, label: &str) {
        self.relations
            .entry(id.to_string())
            .or_insert_with(|| RelationType::new(RelationId::new(&self.source, id), label));
    }

    fn local_ids<'a>(&self, selected: &'a [EntityId]) -> Result<Vec<&'a str>, KgError> {
        selected
            .iter()
            .map(|id| {
                if id.source == self.source && self.entities.contains_key(&id.local_id) {
                    Ok(id.local_id.as_str())
                } else {
                    Err(KgError::UnknownEntity(format!("{}:{}", id.source, id.local_id)))
                }
            })
            .collect()
    }
}

impl KnowledgeGraph for MemoryKg {
    fn source(&self) -> &SourceTag {
        &self.source
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            sparql: false,
            inverse_edges: self.inverse_edges,
            entity_linker: !self.links.is_empty(),
        }
    }

    /// Exact label matches first, then prefix, then substring; ties in insertion order.
    fn search(&self, mention: &str, limit: usize) -> Result<Vec<CandidateEntity>, KgError> {
        let needle = mention.trim().to_lowercase();
        if needle.is_empty() {
            return Ok(Vec::new());
        }
        let mut scored: Vec<(u8, usize, &Entity)> = self
            .entities
            .values()
            .enumerate()
            .filter_map(|(order, entity)| {
                let label = entity.label.to_lowercase();
                let tier = if label == needle || entity.id.local_id.to_lowercase() == needle {
                    0
                } else if label.starts_with(&needle) {
                    1
                } else if label.contains(&needle) {
                    2
                } else {
                    return None;
                };
                Some((tier, order, entity))
            })
            .collect();
        scored.sort_by_key(|(tier, order, _)| (*tier, *order));
        Ok(scored
            .into_iter()
            .take(limit)
            .enumerate()
            .map(|(rank, (_, _, entity))| CandidateEntity {
                entity: entity.clone(),
                rank: Some(rank as u32),
            })
            .collect())
    }

    fn lookup(&self, id: &EntityId) -> Result<Option<Entity>, KgError> {
        if id.source != self.source {
            return Ok(None);
        }
        Ok(self.entities.get(&id.local_id).cloned())
    }

    fn get_relations(&self, selected: &[EntityId]) -> Result<Vec<RelationOffer>, KgError> {
        let ids = self.local_ids(selected)?;
        let mut forward: IndexSet<&str> = IndexSet::new();
        let mut inverse: IndexSet<&str> = IndexSet::new();
        for (s, r, o) in &self.triples {
            if ids.contains(&s.as_str()) {
                forward.insert(r);
            }
            if self.inverse_edges && ids.contains(&o.as_str()) {
                inverse.insert(r);
            }
        }
        let offer = |id: &str| self.relations[id].clone();
        Ok(forward
            .into_iter()
            .map(|r| RelationOffer::forward(offer(r)))
            .chain(inverse.into_iter().map(|r| RelationOffer::inverse(offer(r))))
            .collect())
    }

    fn get_edges(
        &self,
        selected: &[EntityId],
        relation: &RelationId,
        direction: Direction,
    ) -> Result<ExpansionResult, KgError> {
        let ids = self.local_ids(selected)?;
        let Some(relation_type) = self
            .relations
            .get(&relation.local_id)
            .filter(|_| relation.source == self.source)
        else {
            return Ok(ExpansionResult::empty_with_warning(format!(
                "unknown relation {}",
                relation.local_id
            )));
        };
        if direction == Direction::Inverse && !self.inverse_edges {
            return Ok(ExpansionResult::empty_with_warning(format!(
                "inverse traversal of {} is disabled",
                relation.local_id
            )));
        }

        let mut result = ExpansionResult::default();
        let mut reached: IndexSet<&str> = IndexSet::new();
        for (s, r, o) in &self.triples {
            if r != &relation.local_id {
                continue;
            }
            let (anchor, other) = match direction {
                Direction::Forward => (s, o),
                Direction::Inverse => (o, s),
            };
            if !ids.contains(&anchor.as_str()) {
                continue;
            }
            if result.edges.len() == self.max_edges {
                result.truncated = true;
                break;
            }
            result.edges.push(Edge::new(
                EntityId::new(&self.source, s.as_str()),
                relation.clone(),
                EntityId::new(&self.source, o.as_str()),
            ));
            reached.insert(other);
        }
        if result.edges.is_empty() {
            result.warning = Some(format!(
                "relation {} has no edges for the selected entities",
                relation.local_id
            ));
            return Ok(result);
        }
        result.entities = reached
            .into_iter()
            .map(|id| self.entities[id].clone())
            .collect();
        result.relations = vec![relation_type.clone()];
        Ok(result)
    }

    fn external_links(&self, id: &EntityId) -> Result<Vec<EntityId>, KgError> {
        if id.source != self.source {
            return Ok(Vec::new());
        }
        Ok(self.links.get(&id.local_id).cloned().unwrap_or_default())
    }

    fn link_entity(&self, label: &str) -> Result<Option<Entity>, KgError> {
        let needle = label.trim().to_lowercase();
        if needle.is_empty() {
            return Ok(None);
        }
        if let Some(exact) = self.entities.values().find(|e| e.label.to_lowercase() == needle) {
            return Ok(Some(exact.clone()));
        }
        Ok(self.search(label, 1)?.into_iter().next().map(|c| c.entity))
    }
}

//! Local knowledge subgraph carried by every search node, plus the compact
//! YAML-like rendering placed into prompts.

use std::fmt;
use std::sync::Arc;

use indexmap::{IndexMap, IndexSet};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Name of the knowledge graph an identifier belongs to (`wikidata`, `musicbrainz`, ...).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SourceTag(Arc<str>);

impl SourceTag {
    pub fn new(name: impl AsRef<str>) -> Self {
        Self(Arc::from(name.as_ref()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SourceTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityId {
    pub source: SourceTag,
    pub local_id: String,
}

impl EntityId {
    pub fn new(source: &SourceTag, local_id: impl Into<String>) -> Self {
        Self {
            source: source.clone(),
            local_id: local_id.into(),
        }
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.local_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub id: EntityId,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

impl Entity {
    pub fn new(id: EntityId, label: impl Into<String>) -> Self {
        Self {
            id,
            label: label.into(),
            description: None,
        }
    }

    pub fn with_description(mut self, description: impl Into<String>) -> Self {
        let description = description.into();
        self.description = (!description.is_empty()).then_some(description);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationId {
    pub source: SourceTag,
    pub local_id: String,
}

impl RelationId {
    pub fn new(source: &SourceTag, local_id: impl Into<String>) -> Self {
        Self {
            source: source.clone(),
            local_id: local_id.into(),
        }
    }
}

impl fmt::Display for RelationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.local_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationType {
    pub id: RelationId,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inverse_label: Option<String>,
}

impl RelationType {
    pub fn new(id: RelationId, label: impl Into<String>) -> Self {
        Self {
            id,
            label: label.into(),
            inverse_label: None,
        }
    }

    pub fn with_inverse_label(mut self, inverse: impl Into<String>) -> Self {
        self.inverse_label = Some(inverse.into());
        self
    }
}

/// A directed fact `(subject, relation, object)`, always stored in canonical orientation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub subject: EntityId,
    pub relation: RelationId,
    pub object: EntityId,
}

impl Edge {
    pub fn new(subject: EntityId, relation: RelationId, object: EntityId) -> Self {
        Self {
            subject,
            relation,
            object,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("edge {subject} -{relation}-> {object} references unknown entity {missing}")]
    DanglingEntity {
        subject: String,
        relation: String,
        object: String,
        missing: String,
    },
    #[error("edge {subject} -{relation}-> {object} references unknown relation")]
    DanglingRelation {
        subject: String,
        relation: String,
        object: String,
    },
    #[error("entity id must be non-empty")]
    EmptyId,
    #[error("entity {0} has an empty label")]
    EmptyLabel(String),
}

/// Immutable working graph. Every update produces a new value via [`KgSubgraph::merge`].
///
/// `same_as` maps an alias id (usually from another knowledge graph) to the
/// canonical entity it was linked to. Aliases are rendered on the canonical's line.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KgSubgraph {
    entities: IndexMap<EntityId, Entity>,
    relations: IndexMap<RelationId, RelationType>,
    edges: IndexSet<Edge>,
    #[serde(default)]
    same_as: IndexMap<EntityId, EntityId>,
}

impl KgSubgraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn entities(&self) -> impl Iterator<Item = &Entity> {
        self.entities.values()
    }

    pub fn relations(&self) -> impl Iterator<Item = &RelationType> {
        self.relations.values()
    }

    pub fn edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.iter()
    }

    pub fn same_as_pairs(&self) -> impl Iterator<Item = (&EntityId, &EntityId)> {
        self.same_as.iter()
    }

    /// Resolve an id (canonical or alias) to the canonical entity.
    pub fn entity(&self, id: &EntityId) -> Option<&Entity> {
        let canonical = self.same_as.get(id).unwrap_or(id);
        self.entities.get(canonical)
    }

    pub fn contains_entity(&self, id: &EntityId) -> bool {
        self.entity(id).is_some()
    }

    pub fn canonical_id<'a>(&'a self, id: &'a EntityId) -> &'a EntityId {
        self.same_as.get(id).unwrap_or(id)
    }

    pub fn relation(&self, id: &RelationId) -> Option<&RelationType> {
        self.relations.get(id)
    }

    pub fn contains_edge(&self, edge: &Edge) -> bool {
        self.edges.contains(edge)
    }

    /// Aliases recorded for a canonical entity, in insertion order.
    pub fn aliases_of<'a>(&'a self, id: &'a EntityId) -> impl Iterator<Item = &'a EntityId> + 'a {
        self.same_as
            .iter()
            .filter(move |(_, canonical)| *canonical == id)
            .map(|(alias, _)| alias)
    }

    /// Every id (canonical first, then its aliases) that may be offered for selection.
    pub fn selectable_ids(&self) -> Vec<EntityId> {
        let mut ids = Vec::with_capacity(self.entities.len() + self.same_as.len());
        for id in self.entities.keys() {
            ids.push(id.clone());
            ids.extend(self.aliases_of(id).cloned());
        }
        ids
    }

    /// Union with new entities, relation types and edges.
    ///
    /// Entities already present keep their first-seen label and description.
    /// Edges may reference entities through alias ids.
    pub fn merge(
        &self,
        new_entities: &[Entity],
        new_relations: &[RelationType],
        new_edges: &[Edge],
    ) -> Result<Self, ModelError> {
        let mut next = self.clone();
        for entity in new_entities {
            if entity.id.local_id.is_empty() {
                return Err(ModelError::EmptyId);
            }
            if entity.label.is_empty() {
                return Err(ModelError::EmptyLabel(entity.id.local_id.clone()));
            }
            if next.same_as.contains_key(&entity.id) {
                continue;
            }
            next.entities
                .entry(entity.id.clone())
                .or_insert_with(|| entity.clone());
        }
        for relation in new_relations {
            next.relations
                .entry(relation.id.clone())
                .or_insert_with(|| relation.clone());
        }
        for edge in new_edges {
            for endpoint in [&edge.subject, &edge.object] {
                if !next.contains_entity(endpoint) {
                    return Err(ModelError::DanglingEntity {
                        subject: edge.subject.to_string(),
                        relation: edge.relation.to_string(),
                        object: edge.object.to_string(),
                        missing: endpoint.to_string(),
                    });
                }
            }
            if !next.relations.contains_key(&edge.relation) {
                return Err(ModelError::DanglingRelation {
                    subject: edge.subject.to_string(),
                    relation: edge.relation.to_string(),
                    object: edge.object.to_string(),
                });
            }
            next.edges.insert(edge.clone());
        }
        Ok(next)
    }

    /// Record that `alias` (typically from another KG) denotes the same thing as `canonical`.
    ///
    /// No-op when `alias` is already a canonical entity here or `canonical` is unknown.
    pub fn with_same_as(&self, canonical: &EntityId, alias: &EntityId) -> Self {
        let mut next = self.clone();
        let canonical = self.canonical_id(canonical).clone();
        if alias != &canonical
            && next.entities.contains_key(&canonical)
            && !next.entities.contains_key(alias)
        {
            next.same_as.entry(alias.clone()).or_insert(canonical);
        }
        next
    }

    /// Prompt rendering of the entity and edge sections.
    ///
    /// Edges are grouped by subject label, then relation label, in insertion order.
    /// Output always ends with a newline.
    pub fn render_yaml(&self) -> String {
        let mut out = String::from("Knowledge Graph Entities:\n");
        for entity in self.entities.values() {
            out.push_str("    ");
            out.push_str(&entity.id.local_id);
            for alias in self.aliases_of(&entity.id) {
                out.push_str(", ");
                out.push_str(&alias.local_id);
            }
            out.push_str(": ");
            out.push_str(&entity.label);
            if let Some(description) = &entity.description {
                out.push_str(" - ");
                out.push_str(description);
            }
            out.push('\n');
        }

        // subject label -> relation label -> object labels
        let mut groups: IndexMap<&str, IndexMap<&str, Vec<&str>>> = IndexMap::new();
        let mut ordered: Vec<(usize, &Edge)> = self
            .edges
            .iter()
            .map(|edge| {
                let rank = self
                    .entities
                    .get_index_of(self.canonical_id(&edge.subject))
                    .unwrap_or(usize::MAX);
                (rank, edge)
            })
            .collect();
        // stable: subjects by entity insertion order, edges by insertion order within
        ordered.sort_by_key(|(rank, _)| *rank);
        for (_, edge) in ordered {
            let (Some(subject), Some(object), Some(relation)) = (
                self.entity(&edge.subject),
                self.entity(&edge.object),
                self.relations.get(&edge.relation),
            ) else {
                continue;
            };
            groups
                .entry(subject.label.as_str())
                .or_default()
                .entry(relation.label.as_str())
                .or_default()
                .push(object.label.as_str());
        }

        out.push_str("Knowledge Graph Edges:\n");
        for (subject, relations) in groups {
            out.push_str("    ");
            out.push_str(subject);
            out.push_str(":\n");
            for (relation, objects) in relations {
                out.push_str("        ");
                out.push_str(relation);
                out.push_str(":\n");
                for object in objects {
                    out.push_str("            ");
                    out.push_str(object);
                    out.push('\n');
                }
            }
        }
        out
    }
}

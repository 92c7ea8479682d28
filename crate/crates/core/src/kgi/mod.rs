//! Access to external knowledge graphs.
//!
//! Every backend implements [`KnowledgeGraph`]: entity search (used by
//! [`initialize`]), relation discovery for a set of entities, and edge
//! expansion along one relation. [`Federation`] fans these calls out over
//! several backends and links entities across them.

mod federation;
mod init;
mod memory;
mod musicbrainz;
pub mod transport;
mod wikidata;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::{Edge, Entity, EntityId, RelationId, RelationType, SourceTag};

pub use federation::{Federation, Initialized, Partial};
pub use init::{
    extract_mentions, extraction_prompt, initialize, link_mention, linking_prompt,
    parse_candidate_choice, parse_mentions, CANDIDATE_LIMIT,
};
pub use memory::{MemoryKg, MemoryKgBuilder};
pub use musicbrainz::{MusicBrainzConfig, MusicBrainzKg};
pub use wikidata::{WikidataConfig, WikidataKg};

pub const DEFAULT_MAX_EDGES: usize = 100;

#[derive(Debug, Error)]
pub enum KgError {
    #[error("unknown entity {0}")]
    UnknownEntity(String),
    #[error("knowledge graph unreachable: {0}")]
    Unreachable(String),
    #[error("unexpected response from knowledge graph: {0}")]
    Malformed(String),
    #[error("invalid triples file line {line}: {reason}")]
    TriplesFormat { line: usize, reason: String },
    #[error("invalid backend configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("language model call failed during entity linking: {0}")]
    Llm(#[from] crate::llm::LlmError),
}

impl KgError {
    pub fn is_retryable(&self) -> bool {
        match self {
            KgError::Unreachable(_) => true,
            KgError::Llm(e) => e.is_retryable(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub sparql: bool,
    pub inverse_edges: bool,
    /// Backend can name ids of the same entity in other knowledge graphs.
    pub entity_linker: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateEntity {
    pub entity: Entity,
    /// Rank reported by the backend's search API (0 = best).
    pub rank: Option<u32>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Selected entities are the subjects.
    #[default]
    Forward,
    /// Selected entities are the objects.
    Inverse,
}

/// A relation type offered for expansion of some selected entities.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationOffer {
    pub relation: RelationType,
    #[serde(default)]
    pub direction: Direction,
}

impl RelationOffer {
    pub fn forward(relation: RelationType) -> Self {
        Self {
            relation,
            direction: Direction::Forward,
        }
    }

    pub fn inverse(relation: RelationType) -> Self {
        Self {
            relation,
            direction: Direction::Inverse,
        }
    }

    pub fn id(&self) -> &RelationId {
        &self.relation.id
    }

    /// The token the model is expected to copy back: `P25`, or `^P25` for the inverse.
    pub fn token(&self) -> String {
        match self.direction {
            Direction::Forward => self.relation.id.local_id.clone(),
            Direction::Inverse => format!("^{}", self.relation.id.local_id),
        }
    }

    pub fn phrase(&self) -> String {
        match self.direction {
            Direction::Forward => format!("has {}", self.relation.label),
            Direction::Inverse => self
                .relation
                .inverse_label
                .clone()
                .unwrap_or_else(|| format!("is {} of", self.relation.label)),
        }
    }
}

impl fmt::Display for RelationOffer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} - {}", self.token(), self.phrase())
    }
}

/// Edges and newly reached entities returned by one expansion.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExpansionResult {
    pub edges: Vec<Edge>,
    pub entities: Vec<Entity>,
    /// Relation types referenced by `edges`.
    pub relations: Vec<RelationType>,
    #[serde(default)]
    pub truncated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl ExpansionResult {
    pub fn empty_with_warning(warning: impl Into<String>) -> Self {
        Self {
            warning: Some(warning.into()),
            ..Self::default()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }
}

/// Contract every knowledge-graph backend implements.
pub trait KnowledgeGraph: Send + Sync {
    fn source(&self) -> &SourceTag;

    fn capabilities(&self) -> Capabilities;

    /// Candidates for a textual mention, best first.
    fn search(&self, mention: &str, limit: usize) -> Result<Vec<CandidateEntity>, KgError>;

    fn lookup(&self, id: &EntityId) -> Result<Option<Entity>, KgError>;

    /// Relation types the selected entities have edges for, de-duplicated.
    fn get_relations(&self, selected: &[EntityId]) -> Result<Vec<RelationOffer>, KgError>;

    /// Edges along `relation` for the selected entities. An unknown relation
    /// yields an empty result carrying a warning, never an error.
    fn get_edges(
        &self,
        selected: &[EntityId],
        relation: &RelationId,
        direction: Direction,
    ) -> Result<ExpansionResult, KgError>;

    /// Ids of the same entity in other knowledge graphs, when the backend knows them.
    fn external_links(&self, _id: &EntityId) -> Result<Vec<EntityId>, KgError> {
        Ok(Vec::new())
    }

    /// Best-effort match of a label from another graph into this one.
    fn link_entity(&self, label: &str) -> Result<Option<Entity>, KgError> {
        if label.trim().is_empty() {
            return Ok(None);
        }
        Ok(self
            .search(label, 1)?
            .into_iter()
            .next()
            .map(|candidate| candidate.entity))
    }
}

impl<T: KnowledgeGraph + ?Sized> KnowledgeGraph for std::sync::Arc<T> {
    fn source(&self) -> &SourceTag {
        (**self).source()
    }
    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }
    fn search(&self, mention: &str, limit: usize) -> Result<Vec<CandidateEntity>, KgError> {
        (**self).search(mention, limit)
    }
    fn lookup(&self, id: &EntityId) -> Result<Option<Entity>, KgError> {
        (**self).lookup(id)
    }
    fn get_relations(&self, selected: &[EntityId]) -> Result<Vec<RelationOffer>, KgError> {
        (**self).get_relations(selected)
    }
    fn get_edges(
        &self,
        selected: &[EntityId],
        relation: &RelationId,
        direction: Direction,
    ) -> Result<ExpansionResult, KgError> {
        (**self).get_edges(selected, relation, direction)
    }
    fn external_links(&self, id: &EntityId) -> Result<Vec<EntityId>, KgError> {
        (**self).external_links(id)
    }
    fn link_entity(&self, label: &str) -> Result<Option<Entity>, KgError> {
        (**self).link_entity(label)
    }
}

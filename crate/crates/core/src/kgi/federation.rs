//! Fan-out over several knowledge graphs with per-backend failure isolation
//! and cross-graph entity linking.

use std::collections::HashSet;
use std::sync::Arc;

use tracing::warn;

use super::{init, ExpansionResult, KgError, KnowledgeGraph, RelationOffer};
use crate::kg::{Entity, EntityId, KgSubgraph, ModelError, SourceTag};
use crate::llm::LlmBackend;

/// A value assembled despite some backends failing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Partial<T> {
    pub value: T,
    pub warnings: Vec<String>,
}

impl<T> Partial<T> {
    pub fn new(value: T) -> Self {
        Self {
            value,
            warnings: Vec::new(),
        }
    }
}

/// Output of [`Federation::multi_initialize`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Initialized {
    /// Canonical entities, in mention order.
    pub entities: Vec<Entity>,
    /// `(canonical, alias)` pairs for mentions linked in several graphs.
    pub same_as: Vec<(EntityId, EntityId)>,
    pub warnings: Vec<String>,
}

impl Initialized {
    pub fn subgraph(&self) -> Result<KgSubgraph, ModelError> {
        let mut graph = KgSubgraph::new().merge(&self.entities, &[], &[])?;
        for (canonical, alias) in &self.same_as {
            graph = graph.with_same_as(canonical, alias);
        }
        Ok(graph)
    }
}

#[derive(Clone)]
pub struct Federation {
    backends: Vec<Arc<dyn KnowledgeGraph>>,
    link_new_entities: bool,
}

impl std::fmt::Debug for Federation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let sources: Vec<_> = self.backends.iter().map(|b| b.source().as_str()).collect();
        f.debug_struct("Federation")
            .field("backends", &sources)
            .field("link_new_entities", &self.link_new_entities)
            .finish()
    }
}

impl Federation {
    pub fn new(backends: Vec<Arc<dyn KnowledgeGraph>>) -> Result<Self, KgError> {
        if backends.is_empty() {
            return Err(KgError::Config("at least one knowledge graph is required".into()));
        }
        let mut sources = HashSet::new();
        for backend in &backends {
            if !sources.insert(backend.source().clone()) {
                return Err(KgError::Config(format!(
                    "duplicate knowledge graph source {}",
                    backend.source()
                )));
            }
        }
        Ok(Self {
            backends,
            link_new_entities: true,
        })
    }

    pub fn single(backend: impl KnowledgeGraph + 'static) -> Self {
        Self::new(vec![Arc::new(backend)]).expect("one backend")
    }

    /// Toggle cross-graph linking of entities added by expansions.
    pub fn with_linking(mut self, enabled: bool) -> Self {
        self.link_new_entities = enabled;
        self
    }

    pub fn backends(&self) -> &[Arc<dyn KnowledgeGraph>] {
        &self.backends
    }

    pub fn backend(&self, source: &SourceTag) -> Option<&Arc<dyn KnowledgeGraph>> {
        self.backends.iter().find(|b| b.source() == source)
    }

    pub fn inverse_edges(&self) -> bool {
        self.backends.iter().any(|b| b.capabilities().inverse_edges)
    }

    /// Extract mentions once, then link each mention in every backend.
    ///
    /// Fails only when the extraction call fails or every backend fails.
    pub fn multi_initialize(
        &self,
        query: &str,
        llm: &dyn LlmBackend,
    ) -> Result<Initialized, KgError> {
        if query.trim().is_empty() {
            return Err(KgError::Config("initialize needs a non-empty query".into()));
        }
        let mentions = init::extract_mentions(query, llm)?;
        let mut out = Initialized::default();
        let mut seen: HashSet<EntityId> = HashSet::new();
        let mut failures = vec![0usize; self.backends.len()];
        let mut last_error = None;
        for mention in &mentions {
            let mut canonical: Option<EntityId> = None;
            for (i, backend) in self.backends.iter().enumerate() {
                match init::link_mention(backend.as_ref(), query, mention, llm) {
                    Ok(Some(entity)) => {
                        if !seen.insert(entity.id.clone()) {
                            canonical.get_or_insert(entity.id);
                            continue;
                        }
                        match &canonical {
                            None => {
                                canonical = Some(entity.id.clone());
                                out.entities.push(entity);
                            }
                            Some(c) => out.same_as.push((c.clone(), entity.id)),
                        }
                    }
                    Ok(None) => {}
                    Err(KgError::Llm(e)) => return Err(KgError::Llm(e)),
                    Err(e) => {
                        failures[i] += 1;
                        out.warnings
                            .push(format!("{}: linking {mention:?} failed: {e}", backend.source()));
                        last_error = Some(e);
                    }
                }
            }
        }
        if !mentions.is_empty() && failures.iter().all(|&f| f == mentions.len()) {
            return Err(last_error.expect("at least one failure"));
        }
        Ok(out)
    }

    /// Union of every backend's offers for the ids it owns, in backend order.
    pub fn multi_get_relations(&self, selected: &[EntityId]) -> Partial<Vec<RelationOffer>> {
        let mut out = Partial::new(Vec::new());
        let mut seen = HashSet::new();
        for backend in &self.backends {
            let own: Vec<EntityId> = selected
                .iter()
                .filter(|id| &id.source == backend.source())
                .cloned()
                .collect();
            if own.is_empty() {
                continue;
            }
            match backend.get_relations(&own) {
                Ok(offers) => {
                    for offer in offers {
                        if seen.insert((offer.id().clone(), offer.direction)) {
                            out.value.push(offer);
                        }
                    }
                }
                Err(e) => {
                    warn!(source = %backend.source(), error = %e, "get_relations failed");
                    out.warnings
                        .push(format!("{}: get_relations failed: {e}", backend.source()));
                }
            }
        }
        out
    }

    /// Expansion routed to the backend owning the relation.
    pub fn multi_get_edges(
        &self,
        selected: &[EntityId],
        offer: &RelationOffer,
    ) -> Partial<ExpansionResult> {
        let relation = offer.id();
        let Some(backend) = self.backend(&relation.source) else {
            return Partial::new(ExpansionResult::empty_with_warning(format!(
                "no knowledge graph for relation source {}",
                relation.source
            )));
        };
        let own: Vec<EntityId> = selected
            .iter()
            .filter(|id| id.source == relation.source)
            .cloned()
            .collect();
        match backend.get_edges(&own, relation, offer.direction) {
            Ok(result) => Partial::new(result),
            Err(e) => {
                warn!(source = %backend.source(), error = %e, "get_edges failed");
                Partial {
                    value: ExpansionResult::empty_with_warning(format!(
                        "{}: get_edges failed: {e}",
                        backend.source()
                    )),
                    warnings: vec![format!("{}: get_edges failed: {e}", backend.source())],
                }
            }
        }
    }

    /// Ids of `entity` in the other backends: explicit links first, label match otherwise.
    pub fn link_entity(&self, entity: &Entity) -> Partial<Vec<EntityId>> {
        let mut out = Partial::new(Vec::new());
        if self.backends.len() < 2 || is_literal(entity) {
            return out;
        }
        let explicit = match self.backend(&entity.id.source) {
            Some(origin) if origin.capabilities().entity_linker => {
                origin.external_links(&entity.id).unwrap_or_else(|e| {
                    out.warnings.push(format!(
                        "{}: external links for {} failed: {e}",
                        origin.source(),
                        entity.id
                    ));
                    Vec::new()
                })
            }
            _ => Vec::new(),
        };
        for backend in &self.backends {
            if backend.source() == &entity.id.source {
                continue;
            }
            if let Some(id) = explicit.iter().find(|id| &id.source == backend.source()) {
                out.value.push(id.clone());
                continue;
            }
            match backend.link_entity(&entity.label) {
                Ok(Some(found)) if &found.id.source == backend.source() => out.value.push(found.id),
                Ok(_) => {}
                Err(e) => out.warnings.push(format!(
                    "{}: linking {:?} failed: {e}",
                    backend.source(),
                    entity.label
                )),
            }
        }
        out
    }

    /// Merge an expansion into `graph`, linking each new entity across backends.
    ///
    /// A new entity whose link lands on an entity already in the graph becomes
    /// an alias of it; otherwise it is added as canonical with its links as aliases.
    pub fn absorb(
        &self,
        graph: &KgSubgraph,
        result: &ExpansionResult,
    ) -> Result<Partial<KgSubgraph>, ModelError> {
        let mut warnings = Vec::new();
        let mut next = graph.clone();
        let linking = self.link_new_entities && self.backends.len() > 1;
        let mut pending_aliases = Vec::new();
        let mut fresh = Vec::new();
        for entity in &result.entities {
            if next.contains_entity(&entity.id) {
                continue;
            }
            if !linking {
                fresh.push(entity.clone());
                continue;
            }
            let links = self.link_entity(entity);
            warnings.extend(links.warnings);
            match links.value.iter().find(|id| next.contains_entity(id)) {
                Some(existing) => {
                    let canonical = next.canonical_id(existing).clone();
                    next = next.with_same_as(&canonical, &entity.id);
                }
                None => {
                    fresh.push(entity.clone());
                    pending_aliases.extend(links.value.into_iter().map(|l| (entity.id.clone(), l)));
                }
            }
        }
        next = next.merge(&fresh, &result.relations, &result.edges)?;
        for (canonical, alias) in pending_aliases {
            if !next.contains_entity(&alias) {
                next = next.with_same_as(&canonical, &alias);
            }
        }
        Ok(Partial {
            value: next,
            warnings,
        })
    }
}

/// Literal values (dates, numbers) carry their value as id; they are never linked.
fn is_literal(entity: &Entity) -> bool {
    entity.id.local_id == entity.label
}

//! Action state machine: which actions the model may take in each state,
//! what each action does to the search state, and the prompt for each state.
//!
//! ```text
//! default --Think--> default
//! default --ExpandKG--> selecting-entities --SelectEntities--> selecting-relation
//! selecting-relation --SelectRelation--> default
//! default --Answer--> done
//! ```

mod parse;
mod prompt;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::kg::{EntityId, KgSubgraph};
use crate::kgi::{Federation, RelationOffer};

pub use parse::{parse_action, ParseError};
pub use prompt::{
    render_answer_evaluation, render_evaluation, render_prompt, render_trajectory, Prompt,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActionState {
    Default,
    SelectingEntities,
    SelectingRelation,
    Done,
}

impl ActionState {
    pub fn as_str(self) -> &'static str {
        match self {
            ActionState::Default => "default",
            ActionState::SelectingEntities => "selecting-entities",
            ActionState::SelectingRelation => "selecting-relation",
            ActionState::Done => "done",
        }
    }
}

impl fmt::Display for ActionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActionKind {
    Think,
    Answer,
    ExpandKg,
    SelectEntities,
    SelectRelation,
}

impl ActionKind {
    pub const ALL: [ActionKind; 5] = [
        ActionKind::Think,
        ActionKind::Answer,
        ActionKind::ExpandKg,
        ActionKind::SelectEntities,
        ActionKind::SelectRelation,
    ];

    /// Keyword used in trajectory lines.
    pub fn keyword(self) -> &'static str {
        match self {
            ActionKind::Think => "THINK",
            ActionKind::Answer => "ANSWER",
            ActionKind::ExpandKg => "EXPAND KG",
            ActionKind::SelectEntities => "SELECT ENTITIES",
            ActionKind::SelectRelation => "SELECT RELATION",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "kebab-case")]
pub enum Action {
    Think(String),
    Answer(String),
    ExpandKg(String),
    SelectEntities(Vec<EntityId>),
    SelectRelation(RelationOffer),
}

/// Equality used when de-duplicating sampled actions.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ActionKey {
    Text(ActionKind, String),
    Entities(Vec<EntityId>),
    Relation(crate::kg::RelationId, crate::kgi::Direction),
}

impl Action {
    pub fn kind(&self) -> ActionKind {
        match self {
            Action::Think(_) => ActionKind::Think,
            Action::Answer(_) => ActionKind::Answer,
            Action::ExpandKg(_) => ActionKind::ExpandKg,
            Action::SelectEntities(_) => ActionKind::SelectEntities,
            Action::SelectRelation(_) => ActionKind::SelectRelation,
        }
    }

    pub fn key(&self) -> ActionKey {
        match self {
            Action::Think(t) | Action::Answer(t) | Action::ExpandKg(t) => {
                let normalized = t.split_whitespace().collect::<Vec<_>>().join(" ");
                ActionKey::Text(self.kind(), normalized.to_lowercase())
            }
            Action::SelectEntities(ids) => {
                let mut ids = ids.clone();
                ids.sort();
                ids.dedup();
                ActionKey::Entities(ids)
            }
            Action::SelectRelation(offer) => ActionKey::Relation(offer.id().clone(), offer.direction),
        }
    }

    /// Payload as shown after the keyword.
    pub fn payload(&self) -> String {
        match self {
            Action::Think(t) | Action::Answer(t) | Action::ExpandKg(t) => t.clone(),
            Action::SelectEntities(ids) => ids
                .iter()
                .map(|id| id.local_id.as_str())
                .collect::<Vec<_>>()
                .join(", "),
            Action::SelectRelation(offer) => offer.to_string(),
        }
    }
}

/// Trajectory line, e.g. `SELECT RELATION: P25 - has mother`.
impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind().keyword(), self.payload())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "kebab-case")]
pub enum Phase {
    Default,
    SelectingEntities,
    SelectingRelation {
        /// Selected ids with their same-as aliases.
        selection: Vec<EntityId>,
        offered: Vec<RelationOffer>,
    },
    Done {
        answer: String,
    },
}

impl Phase {
    pub fn action_state(&self) -> ActionState {
        match self {
            Phase::Default => ActionState::Default,
            Phase::SelectingEntities => ActionState::SelectingEntities,
            Phase::SelectingRelation { .. } => ActionState::SelectingRelation,
            Phase::Done { .. } => ActionState::Done,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchState {
    pub query: Arc<str>,
    pub subgraph: Arc<KgSubgraph>,
    pub trajectory: Vec<Action>,
    pub phase: Phase,
}

impl SearchState {
    pub fn new(query: impl AsRef<str>, subgraph: KgSubgraph) -> Self {
        Self {
            query: Arc::from(query.as_ref()),
            subgraph: Arc::new(subgraph),
            trajectory: Vec::new(),
            phase: Phase::Default,
        }
    }

    pub fn action_state(&self) -> ActionState {
        self.phase.action_state()
    }

    pub fn is_done(&self) -> bool {
        matches!(self.phase, Phase::Done { .. })
    }

    pub fn answer(&self) -> Option<&str> {
        match &self.phase {
            Phase::Done { answer } => Some(answer),
            _ => None,
        }
    }

    pub fn selection(&self) -> Option<&[EntityId]> {
        match &self.phase {
            Phase::SelectingRelation { selection, .. } => Some(selection),
            _ => None,
        }
    }

    pub fn offered(&self) -> Option<&[RelationOffer]> {
        match &self.phase {
            Phase::SelectingRelation { offered, .. } => Some(offered),
            _ => None,
        }
    }

    fn advance(&self, action: Action, phase: Phase, subgraph: Option<KgSubgraph>) -> Self {
        let mut trajectory = self.trajectory.clone();
        trajectory.push(action);
        Self {
            query: self.query.clone(),
            subgraph: subgraph.map(Arc::new).unwrap_or_else(|| self.subgraph.clone()),
            trajectory,
            phase,
        }
    }
}

/// Actions the model may take. `forced` restricts the default state to answering.
pub fn legal_actions(state: ActionState, forced: bool) -> &'static [ActionKind] {
    match state {
        ActionState::Default if forced => &[ActionKind::Answer],
        ActionState::Default => &[ActionKind::Think, ActionKind::Answer, ActionKind::ExpandKg],
        ActionState::SelectingEntities => &[ActionKind::SelectEntities],
        ActionState::SelectingRelation => &[ActionKind::SelectRelation],
        ActionState::Done => &[],
    }
}

/// State reached by taking `kind` from `state`, ignoring side effects.
pub fn successor(state: ActionState, kind: ActionKind) -> Option<ActionState> {
    if !legal_actions(state, false).contains(&kind) {
        return None;
    }
    Some(match kind {
        ActionKind::Think => ActionState::Default,
        ActionKind::ExpandKg => ActionState::SelectingEntities,
        ActionKind::SelectEntities => ActionState::SelectingRelation,
        ActionKind::SelectRelation => ActionState::Default,
        ActionKind::Answer => ActionState::Done,
    })
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AsmError {
    #[error("{action:?} is not legal in state {state}")]
    IllegalAction { state: ActionState, action: ActionKind },
    #[error("no prompt for the done state")]
    NoPrompt,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transitioned {
    pub state: SearchState,
    pub warnings: Vec<String>,
}

/// Apply `action` to `state`. Knowledge-graph failures degrade into warnings.
pub fn transition(
    state: &SearchState,
    action: Action,
    kgs: &Federation,
) -> Result<Transitioned, AsmError> {
    let current = state.action_state();
    if successor(current, action.kind()).is_none() {
        return Err(AsmError::IllegalAction {
            state: current,
            action: action.kind(),
        });
    }
    let mut warnings = Vec::new();
    let next = match &action {
        Action::Think(_) => state.advance(action, Phase::Default, None),
        Action::ExpandKg(_) => state.advance(action, Phase::SelectingEntities, None),
        Action::Answer(answer) => {
            let answer = answer.clone();
            state.advance(action, Phase::Done { answer }, None)
        }
        Action::SelectEntities(ids) => {
            let selection = with_aliases(&state.subgraph, ids);
            let offers = kgs.multi_get_relations(&selection);
            warnings.extend(offers.warnings);
            if offers.value.is_empty() {
                warnings.push("no relations available for the selected entities".into());
                state.advance(action, Phase::Default, None)
            } else {
                state.advance(
                    action,
                    Phase::SelectingRelation {
                        selection,
                        offered: offers.value,
                    },
                    None,
                )
            }
        }
        Action::SelectRelation(offer) => {
            let selection = state.selection().unwrap_or_default();
            let expansion = kgs.multi_get_edges(selection, offer);
            warnings.extend(expansion.warnings);
            warnings.extend(expansion.value.warning.clone());
            let subgraph = match kgs.absorb(&state.subgraph, &expansion.value) {
                Ok(merged) => {
                    warnings.extend(merged.warnings);
                    Some(merged.value)
                }
                Err(e) => {
                    warn!(error = %e, "expansion could not be merged");
                    warnings.push(format!("expansion discarded: {e}"));
                    None
                }
            };
            state.advance(action, Phase::Default, subgraph)
        }
    };
    Ok(Transitioned {
        state: next,
        warnings,
    })
}

/// Each selected id followed by the other ids of the same entity.
fn with_aliases(graph: &KgSubgraph, ids: &[EntityId]) -> Vec<EntityId> {
    let mut out: Vec<EntityId> = Vec::new();
    for id in ids {
        let canonical = graph.canonical_id(id).clone();
        let mut group = vec![id.clone(), canonical.clone()];
        group.extend(graph.aliases_of(&canonical).cloned());
        for member in group {
            if !out.contains(&member) {
                out.push(member);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{Entity, SourceTag};
    use crate::kgi::MemoryKg;

    fn dylan_kg() -> MemoryKg {
        MemoryKg::builder("wikidata")
            .entity("Q392", "Bob Dylan", Some("American singer-songwriter"))
            .entity("Q62519478", "Beatrice Stone", None)
            .relation("P25", "mother")
            .edge("Q392", "P25", "Q62519478")
            .build()
    }

    fn seeded() -> SearchState {
        let wd = SourceTag::new("wikidata");
        let graph = KgSubgraph::new()
            .merge(
                &[Entity::new(EntityId::new(&wd, "Q392"), "Bob Dylan")
                    .with_description("American singer-songwriter")],
                &[],
                &[],
            )
            .unwrap();
        SearchState::new("Who is Bob Dylan's maternal grandmother?", graph)
    }

    #[test]
    fn successor_table() {
        use ActionKind::*;
        use ActionState::*;
        let mut table = Vec::new();
        for state in [Default, SelectingEntities, SelectingRelation, Done] {
            for kind in ActionKind::ALL {
                if let Some(next) = successor(state, kind) {
                    table.push((state, kind, next));
                }
            }
        }
        assert_eq!(
            table,
            [
                (Default, Think, Default),
                (Default, Answer, Done),
                (Default, ExpandKg, SelectingEntities),
                (SelectingEntities, SelectEntities, SelectingRelation),
                (SelectingRelation, SelectRelation, Default),
            ]
        );
        assert_eq!(legal_actions(Default, true), [Answer]);
    }

    #[test]
    fn expand_then_select_then_relation() {
        let fed = Federation::single(dylan_kg());
        let s0 = seeded();
        let s1 = transition(
            &s0,
            Action::ExpandKg("I should search for the mother of Bob Dylan".into()),
            &fed,
        )
        .unwrap()
        .state;
        assert_eq!(s1.action_state(), ActionState::SelectingEntities);
        assert_eq!(s1.trajectory.len(), 1);

        let q392 = EntityId::new(&SourceTag::new("wikidata"), "Q392");
        let s2 = transition(&s1, Action::SelectEntities(vec![q392.clone()]), &fed)
            .unwrap()
            .state;
        let offered = s2.offered().unwrap().to_vec();
        assert_eq!(offered[0].to_string(), "P25 - has mother");

        let done = transition(&s2, Action::SelectRelation(offered[0].clone()), &fed).unwrap();
        let s3 = done.state;
        assert!(done.warnings.is_empty());
        assert_eq!(s3.action_state(), ActionState::Default);
        assert!(s3.subgraph.render_yaml().contains("    Bob Dylan:\n        mother:\n            Beatrice Stone\n"));
        assert_eq!(s3.trajectory[2].to_string(), "SELECT RELATION: P25 - has mother");
    }

    #[test]
    fn hallucinated_relation_degrades() {
        let fed = Federation::single(dylan_kg());
        let wd = SourceTag::new("wikidata");
        let mut state = seeded();
        state.phase = Phase::SelectingRelation {
            selection: vec![EntityId::new(&wd, "Q392")],
            offered: Vec::new(),
        };
        let bogus = RelationOffer::forward(crate::kg::RelationType::new(
            crate::kg::RelationId::new(&wd, "P9999"),
            "nothing",
        ));
        let out = transition(&state, Action::SelectRelation(bogus), &fed).unwrap();
        assert_eq!(out.state.subgraph, state.subgraph);
        assert!(!out.warnings.is_empty());
    }

    #[test]
    fn answer_and_illegal() {
        let fed = Federation::single(dylan_kg());
        let s = seeded();
        let done = transition(&s, Action::Answer("Florence Sara Stone".into()), &fed)
            .unwrap()
            .state;
        assert_eq!(done.answer(), Some("Florence Sara Stone"));
        assert!(matches!(
            transition(&done, Action::Think("more".into()), &fed),
            Err(AsmError::IllegalAction { .. })
        ));
        assert!(transition(&s, Action::SelectEntities(vec![]), &fed).is_err());
    }

    #[test]
    fn action_keys_normalize() {
        let a = Action::Think("  I should   look ".into());
        let b = Action::Think("i should look".into());
        assert_eq!(a.key(), b.key());
        assert_ne!(a.key(), Action::ExpandKg("i should look".into()).key());
    }
}

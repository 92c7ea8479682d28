//! Serializable view of a finished search, and a DOT rendering of it.
//!
//! JSON schema (version 1):
//!
//! ```text
//! { schema_version: 1, query, config: SearchConfig,
//!   outcome: { answer, answer_node, value, stop, expansions, warnings },
//!   nodes: [ { id, parent, depth, state, action: {kind, payload} | null,
//!              action_text, value, explored, entities, edges, warnings,
//!              answer?, subgraph? } ] }
//! ```
//!
//! `subgraph` (the prompt rendering) is included for answer nodes only.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{SearchConfig, SearchOutcome, StopReason};
use crate::asm::{Action, ActionState};

pub const TREE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDump {
    pub id: usize,
    pub parent: Option<usize>,
    pub depth: usize,
    pub state: ActionState,
    pub action: Option<Action>,
    pub action_text: Option<String>,
    pub value: f64,
    pub explored: bool,
    pub entities: usize,
    pub edges: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subgraph: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeDump {
    pub answer: String,
    pub answer_node: Option<usize>,
    pub value: Option<f64>,
    pub stop: StopReason,
    pub expansions: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeDump {
    pub schema_version: u32,
    pub query: String,
    pub config: SearchConfig,
    pub outcome: OutcomeDump,
    pub nodes: Vec<NodeDump>,
}

impl TreeDump {
    pub fn from_outcome(outcome: &SearchOutcome) -> Self {
        let tree = &outcome.tree;
        let nodes = tree
            .nodes()
            .iter()
            .map(|n| NodeDump {
                id: n.id,
                parent: n.parent,
                depth: n.depth,
                state: n.state.action_state(),
                action: n.incoming_action.clone(),
                action_text: n.incoming_action.as_ref().map(ToString::to_string),
                value: n.value,
                explored: n.explored,
                entities: n.state.subgraph.entity_count(),
                edges: n.state.subgraph.edge_count(),
                warnings: n.warnings.clone(),
                answer: n.state.answer().map(str::to_string),
                subgraph: n.is_done().then(|| n.state.subgraph.render_yaml()),
            })
            .collect();
        Self {
            schema_version: TREE_SCHEMA_VERSION,
            query: tree.root().state.query.to_string(),
            config: tree.config().clone(),
            outcome: OutcomeDump {
                answer: outcome.answer.clone(),
                answer_node: outcome.answer_node,
                value: outcome.value,
                stop: outcome.stop,
                expansions: tree.expansions_used(),
                warnings: outcome.warnings.clone(),
            },
            nodes,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tree dump serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Graphviz rendering; the returned answer node is drawn bold.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph search {\n  node [shape=box, fontname=\"monospace\"];\n");
        for node in &self.nodes {
            let mut label = format!("#{} {} v={:.2}", node.id, node.state, node.value);
            if let Some(answer) = &node.answer {
                label.push_str(&format!("\\n{}", escape(&shorten(answer, 40))));
            }
            let style = if Some(node.id) == self.outcome.answer_node {
                ", style=bold, color=darkgreen"
            } else if node.state == ActionState::Done {
                ", color=gray40"
            } else if !node.explored {
                ", style=dashed"
            } else {
                ""
            };
            let _ = writeln!(out, "  n{} [label=\"{label}\"{style}];", node.id);
        }
        for node in &self.nodes {
            if let (Some(parent), Some(text)) = (node.parent, &node.action_text) {
                let _ = writeln!(
                    out,
                    "  n{parent} -> n{} [label=\"{}\"];",
                    node.id,
                    escape(&shorten(text, 48))
                );
            }
        }
        out.push_str("}\n");
        out
    }
}

fn shorten(text: &str, max: usize) -> String {
    if text.chars().count() <= max {
        text.to_string()
    } else {
        let mut s: String = text.chars().take(max - 3).collect();
        s.push_str("...");
        s
    }
}

fn escape(text: &str) -> String {
    text.replace('\\', "\\\\").replace('"', "\\\"").replace('\n', " ")
}

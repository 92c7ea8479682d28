use super::{legal_actions, ActionKind, AsmError, Phase, SearchState};
use crate::llm::PromptKind;

const HEADER: &str = include_str!("templates/header.txt");
const DEFAULT: &str = include_str!("templates/default.txt");
const MENU_THINK: &str = include_str!("templates/menu_think.txt");
const MENU_EXPAND: &str = include_str!("templates/menu_expand.txt");
const MENU_ANSWER: &str = include_str!("templates/menu_answer.txt");
const SELECTING_ENTITIES: &str = include_str!("templates/selecting_entities.txt");
const SELECTING_RELATION: &str = include_str!("templates/selecting_relation.txt");
const EVALUATE: &str = include_str!("templates/evaluate.txt");
const EVALUATE_ANSWER: &str = include_str!("templates/evaluate_answer.txt");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub kind: PromptKind,
    pub text: String,
}

/// Single-pass `{name}` substitution; substituted values are never rescanned.
fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() * 2);
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let after = &rest[start + 1..];
        let value = after.find('}').and_then(|end| {
            let name = &after[..end];
            values
                .iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| (*v, end))
        });
        match value {
            Some((v, end)) => {
                out.push_str(v);
                rest = &after[end + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

fn header(state: &SearchState) -> String {
    fill(
        HEADER,
        &[
            ("query", &state.query),
            ("subgraph", &state.subgraph.render_yaml()),
        ],
    )
}

/// One line per action, each newline-terminated.
pub fn render_trajectory(state: &SearchState) -> String {
    state
        .trajectory
        .iter()
        .map(|action| format!("{action}\n"))
        .collect()
}

fn menu(forced: bool) -> String {
    let legal = legal_actions(super::ActionState::Default, forced);
    [
        (ActionKind::Think, MENU_THINK),
        (ActionKind::ExpandKg, MENU_EXPAND),
        (ActionKind::Answer, MENU_ANSWER),
    ]
    .into_iter()
    .filter(|(kind, _)| legal.contains(kind))
    .map(|(_, text)| text)
        .collect::<Vec<_>>()
        .join("\n")
}

/// Prompt asking for the next action in the state's phase.
pub fn render_prompt(state: &SearchState, forced: bool) -> Result<Prompt, AsmError> {
    let header = header(state);
    let trajectory = render_trajectory(state);
    let (kind, text) = match &state.phase {
        Phase::Default => (
            PromptKind::Default,
            fill(
                DEFAULT,
                &[
                    ("header", &header),
                    ("trajectory", &trajectory),
                    ("actions", &menu(forced)),
                ],
            ),
        ),
        Phase::SelectingEntities => {
            let options = state
                .subgraph
                .selectable_ids()
                .iter()
                .map(|id| id.local_id.clone())
                .collect::<Vec<_>>()
                .join(", ");
            (
                PromptKind::SelectingEntities,
                fill(
                    SELECTING_ENTITIES,
                    &[
                        ("header", &header),
                        ("trajectory", &trajectory),
                        ("options", &options),
                    ],
                ),
            )
        }
        Phase::SelectingRelation { selection, offered } => {
            let selection = selection
                .iter()
                .map(|id| id.local_id.as_str())
                .collect::<Vec<_>>()
                .join(", ");
            let options: String = offered.iter().map(|o| format!("{o}\n")).collect();
            (
                PromptKind::SelectingRelation,
                fill(
                    SELECTING_RELATION,
                    &[
                        ("header", &header),
                        ("trajectory", &trajectory),
                        ("selection", &selection),
                        ("options", &options),
                    ],
                ),
            )
        }
        Phase::Done { .. } => return Err(AsmError::NoPrompt),
    };
    Ok(Prompt { kind, text })
}

/// Value prompt for a node that has not answered.
pub fn render_evaluation(state: &SearchState) -> Prompt {
    Prompt {
        kind: PromptKind::Evaluate,
        text: fill(
            EVALUATE,
            &[("header", &header(state)), ("trajectory", &render_trajectory(state))],
        ),
    }
}

/// Value prompt for an answer node. Without an answer the payload is empty.
pub fn render_answer_evaluation(state: &SearchState) -> Prompt {
    Prompt {
        kind: PromptKind::EvaluateAnswer,
        text: fill(
            EVALUATE_ANSWER,
            &[
                ("header", &header(state)),
                ("answer", state.answer().unwrap_or_default()),
            ],
        ),
    }
}

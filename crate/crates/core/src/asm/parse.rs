use std::sync::LazyLock;

use regex::Regex;
use thiserror::Error;

use super::{legal_actions, Action, ActionKind, ActionState, Phase, SearchState};
use crate::kg::EntityId;
use crate::kgi::RelationOffer;

const PREAMBLES: &[&str] = &[
    "So the next action should be:",
    "You have selected the following entities to expand:",
    "I suggest selecting property:",
];

static KEYWORD: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)^(THINK|EXPAND[_ ]KG|ANSWER|SELECT[_ ]ENTITIES|SELECT[_ ](?:PROPERTY|RELATION))\s*:",
    )
    .unwrap()
});

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("no action keyword in {excerpt:?}")]
    NoAction { excerpt: String },
    #[error("{kind:?} is not legal in state {state}")]
    Illegal { kind: ActionKind, state: ActionState },
    #[error("{0:?} without a payload")]
    EmptyPayload(ActionKind),
    #[error("no known entity id in {excerpt:?}")]
    NoKnownEntity { excerpt: String },
    #[error("no offered relation in {excerpt:?}")]
    NoOfferedRelation { excerpt: String },
    #[error("the done state takes no actions")]
    Done,
}

fn excerpt(text: &str) -> String {
    text.chars().take(80).collect()
}

fn keyword_kind(keyword: &str) -> ActionKind {
    let upper = keyword.to_ascii_uppercase().replace('_', " ");
    match upper.as_str() {
        "THINK" => ActionKind::Think,
        "ANSWER" => ActionKind::Answer,
        "EXPAND KG" => ActionKind::ExpandKg,
        "SELECT ENTITIES" => ActionKind::SelectEntities,
        _ => ActionKind::SelectRelation,
    }
}

fn strip_prefix_ignore_case<'a>(text: &'a str, prefix: &str) -> Option<&'a str> {
    let head = text.get(..prefix.len())?;
    head.eq_ignore_ascii_case(prefix).then(|| &text[prefix.len()..])
}

/// Drop list and emphasis markup and known preambles from the start of a line.
fn clean_line(line: &str) -> &str {
    let mut s = line.trim();
    loop {
        let before = s;
        s = s
            .trim_start_matches(['*', '#', '>', '`', '"', '\''])
            .trim_start();
        for preamble in PREAMBLES {
            if let Some(rest) = strip_prefix_ignore_case(s, preamble) {
                s = rest.trim_start();
            }
        }
        if s == before {
            return s;
        }
    }
}

fn is_id_char(c: char) -> bool {
    c.is_alphanumeric() || matches!(c, '-' | '_' | '^' | '/')
}

/// Byte offset of the first whole-token, ASCII-case-insensitive occurrence.
fn find_token(haystack: &str, needle: &str) -> Option<usize> {
    if needle.is_empty() {
        return None;
    }
    let hay = haystack.to_ascii_lowercase();
    let needle_lower = needle.to_ascii_lowercase();
    hay.match_indices(&needle_lower).map(|(i, _)| i).find(|&i| {
        let before = hay[..i].chars().next_back();
        let after = hay[i + needle_lower.len()..].chars().next();
        // a needle that itself starts or ends in an id character needs a boundary there
        let first = needle_lower.chars().next().unwrap();
        let last = needle_lower.chars().next_back().unwrap();
        (!is_id_char(first) || !before.is_some_and(is_id_char))
            && (!is_id_char(last) || !after.is_some_and(is_id_char))
    })
}

/// Index of the candidate occurring first in `text`; longer matches win ties.
fn earliest<'a>(text: &str, candidates: impl Iterator<Item = (usize, &'a str)>) -> Option<usize> {
    let mut best: Option<(usize, usize, usize)> = None;
    for (index, needle) in candidates {
        if let Some(pos) = find_token(text, needle) {
            let better = match best {
                None => true,
                Some((p, len, _)) => pos < p || (pos == p && needle.len() > len),
            };
            if better {
                best = Some((pos, needle.len(), index));
            }
        }
    }
    best.map(|(_, _, index)| index)
}

fn parse_entities(state: &SearchState, payload: &str) -> Result<Vec<EntityId>, ParseError> {
    let options = state.subgraph.selectable_ids();
    let mut found: Vec<(usize, EntityId)> = options
        .iter()
        .filter_map(|id| find_token(payload, &id.local_id).map(|pos| (pos, id.clone())))
        .collect();
    if found.is_empty() {
        found = state
            .subgraph
            .entities()
            .filter_map(|e| find_token(payload, &e.label).map(|pos| (pos, e.id.clone())))
            .collect();
    }
    found.sort_by_key(|(pos, _)| *pos);
    let mut ids: Vec<EntityId> = Vec::new();
    for (_, id) in found {
        if !ids.contains(&id) {
            ids.push(id);
        }
    }
    if ids.is_empty() {
        return Err(ParseError::NoKnownEntity {
            excerpt: excerpt(payload),
        });
    }
    Ok(ids)
}

fn parse_relation(offered: &[RelationOffer], payload: &str) -> Result<RelationOffer, ParseError> {
    let tokens: Vec<String> = offered.iter().map(RelationOffer::token).collect();
    let hit = earliest(payload, tokens.iter().map(String::as_str).enumerate()).or_else(|| {
        let phrases: Vec<String> = offered.iter().map(RelationOffer::phrase).collect();
        earliest(payload, phrases.iter().map(String::as_str).enumerate()).or_else(|| {
            earliest(
                payload,
                offered.iter().map(|o| o.relation.label.as_str()).enumerate(),
            )
        })
    });
    hit.map(|i| offered[i].clone())
        .ok_or_else(|| ParseError::NoOfferedRelation {
            excerpt: excerpt(payload),
        })
}

/// Parse a completion into an action legal for `state`.
pub fn parse_action(state: &SearchState, raw: &str, forced: bool) -> Result<Action, ParseError> {
    let current = state.action_state();
    if current == ActionState::Done {
        return Err(ParseError::Done);
    }
    let lines: Vec<&str> = raw.lines().map(clean_line).collect();
    let keyword_line = lines
        .iter()
        .enumerate()
        .find_map(|(i, line)| KEYWORD.captures(line).map(|c| (i, c)));

    let (kind, payload) = match keyword_line {
        Some((i, caps)) => {
            let kind = keyword_kind(&caps[1]);
            let first = &lines[i][caps[0].len()..];
            let mut parts = vec![first.trim()];
            for line in &lines[i + 1..] {
                if KEYWORD.is_match(line) {
                    break;
                }
                parts.push(line.trim());
            }
            (kind, join_nonempty(&parts))
        }
        None => match current {
            ActionState::SelectingEntities => (ActionKind::SelectEntities, join_nonempty(&lines)),
            ActionState::SelectingRelation => (ActionKind::SelectRelation, join_nonempty(&lines)),
            _ => {
                return Err(ParseError::NoAction {
                    excerpt: excerpt(raw.trim()),
                })
            }
        },
    };
    if !legal_actions(current, forced).contains(&kind) {
        return Err(ParseError::Illegal {
            kind,
            state: current,
        });
    }
    let payload = payload.trim_matches(|c: char| matches!(c, '`' | '"' | '*') || c.is_whitespace());
    if payload.is_empty() {
        return Err(ParseError::EmptyPayload(kind));
    }
    Ok(match kind {
        ActionKind::Think => Action::Think(payload.to_string()),
        ActionKind::Answer => Action::Answer(payload.to_string()),
        ActionKind::ExpandKg => Action::ExpandKg(payload.to_string()),
        ActionKind::SelectEntities => Action::SelectEntities(parse_entities(state, payload)?),
        ActionKind::SelectRelation => match &state.phase {
            Phase::SelectingRelation { offered, .. } => {
                Action::SelectRelation(parse_relation(offered, payload)?)
            }
            _ => unreachable!("legal only while selecting a relation"),
        },
    })
}

fn join_nonempty(parts: &[&str]) -> String {
    parts
        .iter()
        .filter(|p| !p.is_empty())
        .copied()
        .collect::<Vec<_>>()
        .join(" ")
}

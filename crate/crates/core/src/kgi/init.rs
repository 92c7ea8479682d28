//! Seeding the subgraph from a query: extract mentions with the model, search
//! each mention in the knowledge graph, let the model pick a candidate.

use std::collections::HashSet;

use tracing::debug;

use super::{CandidateEntity, KgError, KnowledgeGraph};
use crate::kg::Entity;
use crate::llm::{CompletionRequest, LlmBackend, PromptKind};

/// Candidates shown to the model per mention.
pub const CANDIDATE_LIMIT: usize = 5;

pub fn extraction_prompt(query: &str) -> String {
    format!(
        "Original Query: \n    {query}\n\n\
         Your current task is to extract the named entities mentioned in the above query \
         (people, places, organizations, works, events, and other specific things). \
         List each entity on its own line, exactly as written in the query. \
         If there are no entities, output NONE.\n\
         ENTITIES:"
    )
}

/// Mention strings from an extraction completion, de-duplicated case-insensitively.
pub fn parse_mentions(text: &str) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut mentions = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        let line = line.strip_prefix("ENTITIES:").unwrap_or(line);
        for part in line.split(';') {
            let mention = clean_mention(part);
            if mention.is_empty() || mention.eq_ignore_ascii_case("none") {
                continue;
            }
            if seen.insert(mention.to_lowercase()) {
                mentions.push(mention);
            }
        }
    }
    mentions
}

fn clean_mention(raw: &str) -> String {
    let mut s = raw.trim();
    s = s.trim_start_matches(['-', '*', '•']).trim_start();
    // "1. Bob Dylan" / "2) Bob Dylan"
    let digits = s.chars().take_while(char::is_ascii_digit).count();
    if digits > 0 {
        if let Some(rest) = s[digits..].strip_prefix(['.', ')']) {
            s = rest.trim_start();
        }
    }
    s.trim_matches(|c: char| c == '"' || c == '\'' || c == '`' || c.is_whitespace())
        .to_string()
}

pub fn extract_mentions(query: &str, llm: &dyn LlmBackend) -> Result<Vec<String>, KgError> {
    let request = CompletionRequest::new(PromptKind::ExtractEntities, extraction_prompt(query));
    let text = llm.complete(&request)?.swap_remove(0);
    Ok(parse_mentions(&text))
}

pub fn linking_prompt(query: &str, mention: &str, candidates: &[CandidateEntity]) -> String {
    let mut out = format!("Original Query: \n    {query}\n\nMention: {mention}\nCandidates:\n");
    for (i, candidate) in candidates.iter().enumerate() {
        let entity = &candidate.entity;
        out.push_str(&format!("{i}: {}: {}", entity.id.local_id, entity.label));
        if let Some(d) = &entity.description {
            out.push_str(" - ");
            out.push_str(d);
        }
        out.push('\n');
    }
    out.push_str(
        "\nYour current task is to select the candidate that the mention refers to in the query. \
         Output the number of the candidate, or NONE if no candidate matches.\n\
         CANDIDATE:",
    );
    out
}

/// Index chosen in a linking completion. `None` when the model declined.
/// Output naming neither a number nor a candidate id falls back to the first candidate.
pub fn parse_candidate_choice(text: &str, candidates: &[CandidateEntity]) -> Option<usize> {
    if candidates.is_empty() {
        return None;
    }
    let text = text.trim();
    let body = text.strip_prefix("CANDIDATE:").unwrap_or(text).trim_start();
    if body
        .get(..4)
        .is_some_and(|head| head.eq_ignore_ascii_case("none"))
    {
        return None;
    }
    for token in body.split(|c: char| !(c.is_alphanumeric() || c == '-' || c == '_')) {
        if token.is_empty() {
            continue;
        }
        if let Ok(i) = token.parse::<usize>() {
            if i < candidates.len() {
                return Some(i);
            }
        }
        if let Some(i) = candidates.iter().position(|c| c.entity.id.local_id == token) {
            return Some(i);
        }
    }
    debug!(output = %text, "unparseable candidate choice, taking the top candidate");
    Some(0)
}

/// Link one mention. No model call when the search yields nothing.
pub fn link_mention(
    kg: &dyn KnowledgeGraph,
    query: &str,
    mention: &str,
    llm: &dyn LlmBackend,
) -> Result<Option<Entity>, KgError> {
    let candidates = kg.search(mention, CANDIDATE_LIMIT)?;
    if candidates.is_empty() {
        return Ok(None);
    }
    let request = CompletionRequest::new(
        PromptKind::LinkEntity,
        linking_prompt(query, mention, &candidates),
    );
    let text = llm.complete(&request)?.swap_remove(0);
    Ok(parse_candidate_choice(&text, &candidates).map(|i| candidates[i].entity.clone()))
}

/// Entities of `kg` referenced by `query`, in mention order, de-duplicated.
pub fn initialize(
    kg: &dyn KnowledgeGraph,
    query: &str,
    llm: &dyn LlmBackend,
) -> Result<Vec<Entity>, KgError> {
    if query.trim().is_empty() {
        return Err(KgError::Config("initialize needs a non-empty query".into()));
    }
    let mut seen = HashSet::new();
    let mut entities = Vec::new();
    for mention in extract_mentions(query, llm)? {
        if let Some(entity) = link_mention(kg, query, &mention, llm)? {
            if seen.insert(entity.id.clone()) {
                entities.push(entity);
            }
        }
    }
    Ok(entities)
}

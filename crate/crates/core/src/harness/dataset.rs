//! Question files: a plain JSONL format, 2WikiMultiHop, and QALD.

use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use tracing::warn;

use crate::kg::{EntityId, SourceTag};
use crate::kgi::{KgError, KnowledgeGraph};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaRecord {
    pub id: String,
    pub question: String,
    pub gold_answers: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetFormat {
    /// `{"id", "question", "answers"}`, one object per line.
    SimpleJsonl,
    /// 2WikiMultiHop rows (`_id`, `question`, `answer`), as a JSON array or JSONL.
    TwoWiki,
    /// QALD JSON with SPARQL-results answers.
    Qald,
}

impl FromStr for DatasetFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "simple-jsonl" | "jsonl" => Ok(Self::SimpleJsonl),
            "2wiki" | "2wikimultihop" => Ok(Self::TwoWiki),
            "qald" => Ok(Self::Qald),
            other => Err(format!("unknown dataset format {other:?} (simple-jsonl, 2wiki, qald)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: {reason}")]
    Line { line: usize, reason: String },
    #[error("record {record}: {reason}")]
    Record { record: usize, reason: String },
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn load_dataset(path: impl AsRef<Path>, format: DatasetFormat) -> Result<Vec<QaRecord>, DatasetError> {
    let text = std::fs::read_to_string(path)?;
    parse_dataset(&text, format)
}

pub fn parse_dataset(text: &str, format: DatasetFormat) -> Result<Vec<QaRecord>, DatasetError> {
    match format {
        DatasetFormat::SimpleJsonl => parse_lines(text, simple_record),
        DatasetFormat::TwoWiki => {
            if text.trim_start().starts_with('[') {
                let rows: Vec<Value> =
                    serde_json::from_str(text).map_err(|e| DatasetError::Format(e.to_string()))?;
                rows.iter()
                    .enumerate()
                    .map(|(i, row)| {
                        two_wiki_record(row).map_err(|reason| DatasetError::Record { record: i, reason })
                    })
                    .collect()
            } else {
                parse_lines(text, two_wiki_record)
            }
        }
        DatasetFormat::Qald => parse_qald(text),
    }
}

fn parse_lines(
    text: &str,
    record: fn(&Value) -> Result<QaRecord, String>,
) -> Result<Vec<QaRecord>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fail = |reason: String| DatasetError::Line { line: i + 1, reason };
        let value: Value = serde_json::from_str(line).map_err(|e| fail(e.to_string()))?;
        out.push(record(&value).map_err(fail)?);
    }
    Ok(out)
}

fn text_field(value: &Value, keys: &[&str]) -> Option<String> {
    keys.iter().find_map(|k| match value.get(*k)? {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    })
}

fn checked(id: String, question: String, gold: Vec<String>) -> Result<QaRecord, String> {
    if question.trim().is_empty() {
        return Err("empty question".into());
    }
    let gold: Vec<String> = gold.into_iter().map(|g| g.trim().to_string()).collect();
    if gold.is_empty() || gold.iter().any(String::is_empty) {
        return Err("gold answers must be non-empty strings".into());
    }
    Ok(QaRecord {
        id,
        question,
        gold_answers: gold,
    })
}

fn simple_record(value: &Value) -> Result<QaRecord, String> {
    let id = text_field(value, &["id"]).ok_or("missing `id`")?;
    let question = text_field(value, &["question"]).ok_or("missing `question`")?;
    let gold = match value.get("answers") {
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| match v {
                Value::String(s) => Ok(s.clone()),
                Value::Number(n) => Ok(n.to_string()),
                _ => Err("`answers` entries must be strings".to_string()),
            })
            .collect::<Result<Vec<_>, _>>()?,
        Some(Value::String(s)) => vec![s.clone()],
        _ => return Err("missing `answers`".into()),
    };
    checked(id, question, gold)
}

fn two_wiki_record(value: &Value) -> Result<QaRecord, String> {
    let id = text_field(value, &["_id", "id"]).ok_or("missing `_id`")?;
    let question = text_field(value, &["question"]).ok_or("missing `question`")?;
    let answer = text_field(value, &["answer"]).ok_or("missing `answer`")?;
    checked(id, question, vec![answer])
}

const WIKIDATA_ENTITY: &str = "http://www.wikidata.org/entity/";

fn parse_qald(text: &str) -> Result<Vec<QaRecord>, DatasetError> {
    let value: Value = serde_json::from_str(text).map_err(|e| DatasetError::Format(e.to_string()))?;
    let questions = value
        .get("questions")
        .and_then(Value::as_array)
        .ok_or_else(|| DatasetError::Format("QALD file without `questions` array".into()))?;
    let mut out = Vec::new();
    for (i, q) in questions.iter().enumerate() {
        let fail = |reason: &str| DatasetError::Record {
            record: i,
            reason: reason.to_string(),
        };
        let id = text_field(q, &["id"]).ok_or_else(|| fail("missing `id`"))?;
        let question = q
            .get("question")
            .and_then(Value::as_array)
            .and_then(|qs| {
                let pick = |lang: Option<&str>| {
                    qs.iter().find(|e| {
                        lang.is_none_or(|l| e.get("language").and_then(Value::as_str) == Some(l))
                    })
                };
                pick(Some("en")).or_else(|| pick(None))
            })
            .and_then(|e| e.get("string").and_then(Value::as_str))
            .ok_or_else(|| fail("no question string"))?
            .to_string();
        let gold = qald_answers(q.get("answers").unwrap_or(&Value::Null));
        if gold.is_empty() {
            warn!(id = %id, "skipping QALD question without answers");
            continue;
        }
        out.push(checked(id, question, gold).map_err(|r| fail(&r))?);
    }
    Ok(out)
}

/// Flatten SPARQL result sets: entity URIs become QIDs, booleans "Yes"/"No".
fn qald_answers(answers: &Value) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for answer in answers.as_array().into_iter().flatten() {
        if let Some(b) = answer.get("boolean").and_then(Value::as_bool) {
            out.push(if b { "Yes" } else { "No" }.to_string());
            continue;
        }
        for binding in answer
            .pointer("/results/bindings")
            .and_then(Value::as_array)
            .into_iter()
            .flatten()
        {
            for cell in binding.as_object().into_iter().flat_map(|o| o.values()) {
                let Some(v) = cell.get("value").and_then(Value::as_str) else { continue };
                let v = v.strip_prefix(WIKIDATA_ENTITY).unwrap_or(v);
                let v = v.strip_suffix("T00:00:00Z").unwrap_or(v).trim();
                if !v.is_empty() && !out.iter().any(|o| o == v) {
                    out.push(v.to_string());
                }
            }
        }
    }
    out
}

/// Replace QID gold answers with their labels, where `kg` knows them.
pub fn resolve_labels(records: &mut [QaRecord], kg: &dyn KnowledgeGraph) -> Result<(), KgError> {
    let source: SourceTag = kg.source().clone();
    for record in records {
        for gold in &mut record.gold_answers {
            let is_qid = gold.len() > 1
                && gold.starts_with('Q')
                && gold[1..].bytes().all(|b| b.is_ascii_digit());
            if !is_qid {
                continue;
            }
            if let Some(entity) = kg.lookup(&EntityId::new(&source, gold.as_str()))? {
                *gold = entity.label;
            }
        }
    }
    Ok(())
}

/// Uniform subsample of `n` records, kept in file order.
pub fn subsample(records: &[QaRecord], n: usize, seed: u64) -> Vec<QaRecord> {
    if n >= records.len() {
        return records.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, records.len(), n).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| records[i].clone()).collect()
}

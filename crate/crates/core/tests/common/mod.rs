#![allow(dead_code)]

use std::path::PathBuf;

use kgtrav::asm::{transition, Action, SearchState};
use kgtrav::kg::{Entity, EntityId, KgSubgraph, SourceTag};
use kgtrav::kgi::{Federation, KnowledgeGraph, MemoryKg, RelationOffer};

pub const DYLAN_QUERY: &str = "Who is Bob Dylan's maternal grandmother?";

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn golden(name: &str) -> String {
    std::fs::read_to_string(fixture(&format!("golden/{name}.txt"))).expect("golden file")
}

pub fn wd() -> SourceTag {
    SourceTag::new("wikidata")
}

pub fn qid(id: &str) -> EntityId {
    EntityId::new(&wd(), id)
}

/// Beatrice Stone's outgoing relations in the order the selecting-relation golden lists them.
pub fn dylan_kg(with_grandmother: bool) -> MemoryKg {
    let mut b = MemoryKg::builder("wikidata")
        .entity("Q392", "Bob Dylan", Some("American singer-songwriter"))
        .entity("Q62519478", "Beatrice Stone", None)
        .entity("Q62519476", "Florence Sara Stone", None)
        .entity("Q5", "human", None)
        .entity("Q6581072", "female", None)
        .entity("Q30", "United States of America", None)
        .entity("Q4925477", "Beatrice", None)
        .relation("P25", "mother")
        .relation("P31", "instance of")
        .relation("P21", "sex of gender")
        .relation("P27", "country of citizenship")
        .relation("P735", "given name")
        .edge("Q392", "P25", "Q62519478");
    if with_grandmother {
        b = b.edge("Q62519478", "P25", "Q62519476");
    } else {
        b = b
            .edge("Q62519478", "P31", "Q5")
            .edge("Q62519478", "P21", "Q6581072")
            .edge("Q62519478", "P27", "Q30")
            .edge("Q62519478", "P735", "Q4925477");
    }
    b.build()
}

pub fn dylan_root() -> SearchState {
    let graph = KgSubgraph::new()
        .merge(
            &[Entity::new(qid("Q392"), "Bob Dylan").with_description("American singer-songwriter")],
            &[],
            &[],
        )
        .unwrap();
    SearchState::new(DYLAN_QUERY, graph)
}

pub fn step(state: &SearchState, action: Action, kgs: &Federation) -> SearchState {
    let next = transition(state, action, kgs).expect("legal transition");
    assert!(next.warnings.is_empty(), "unexpected warnings: {:?}", next.warnings);
    next.state
}

pub fn offer(state: &SearchState, token: &str) -> RelationOffer {
    state
        .offered()
        .expect("selecting-relation state")
        .iter()
        .find(|o| o.token() == token)
        .cloned()
        .unwrap_or_else(|| panic!("{token} not offered"))
}

/// The state shown in the default-state golden: one completed expansion.
pub fn dylan_after_first_hop(kgs: &Federation) -> SearchState {
    let s = step(&dylan_root(), Action::ExpandKg("I should search for the mother of Bob Dylan".into()), kgs);
    let s = step(&s, Action::SelectEntities(vec![qid("Q392")]), kgs);
    let p25 = offer(&s, "P25");
    step(&s, Action::SelectRelation(p25), kgs)
}

pub fn dylan_selecting_entities(kgs: &Federation) -> SearchState {
    step(
        &dylan_after_first_hop(kgs),
        Action::ExpandKg("I should search for the mother of Beatrice Stone".into()),
        kgs,
    )
}

pub fn dylan_selecting_relation(kgs: &Federation) -> SearchState {
    step(&dylan_selecting_entities(kgs), Action::SelectEntities(vec![qid("Q62519478")]), kgs)
}

pub fn dylan_answered(kgs: &Federation) -> SearchState {
    let s = dylan_selecting_relation(kgs);
    let p25 = offer(&s, "P25");
    let s = step(&s, Action::SelectRelation(p25), kgs);
    step(&s, Action::Answer("The answer is Florence Sara Stone.".into()), kgs)
}

pub fn federation(kg: impl KnowledgeGraph + 'static) -> Federation {
    Federation::single(kg)
}

/// Oracle backed by a closure over the request, for fixtures whose responses
/// depend on the trajectory shown in the prompt.
pub struct FnOracle<F>(pub F);

impl<F> kgtrav::llm::LlmBackend for FnOracle<F>
where
    F: Fn(&kgtrav::llm::CompletionRequest) -> Vec<String> + Send + Sync,
{
    fn complete(
        &self,
        request: &kgtrav::llm::CompletionRequest,
    ) -> Result<Vec<String>, kgtrav::llm::LlmError> {
        Ok((self.0)(request))
    }
}

/// Action lines listed under "Previous Actions" in a rendered prompt.
pub fn trajectory_of(prompt: &str) -> Vec<String> {
    let Some(start) = prompt.find("Previous Actions: \n") else {
        return Vec::new();
    };
    let rest = &prompt[start + "Previous Actions: \n".len()..];
    if rest.starts_with('\n') {
        return Vec::new();
    }
    let end = rest.find("\n\n").unwrap_or(rest.len());
    rest[..end].lines().map(str::to_string).collect()
}

/// The answer shown in an answer-evaluation prompt.
pub fn answer_of(prompt: &str) -> Option<&str> {
    let start = prompt.find("Provided answer: ")? + "Provided answer: ".len();
    let rest = &prompt[start..];
    Some(&rest[..rest.find('\n').unwrap_or(rest.len())])
}

/// Default-state prompt whose menu offers only ANSWER.
pub fn is_forced_prompt(prompt: &str) -> bool {
    !prompt.contains("'THINK'") && prompt.contains("'ANSWER'")
}

pub fn empty_federation() -> Federation {
    Federation::single(MemoryKg::builder("toy").build())
}

pub fn root(query: &str) -> SearchState {
    SearchState::new(query, KgSubgraph::new())
}

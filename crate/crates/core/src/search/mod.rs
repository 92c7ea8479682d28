//! Value-guided tree search over the action state machine.
//!
//! Each expansion picks the unexplored node with the highest value (deeper,
//! then newer nodes win ties), samples up to `k` distinct actions, applies them
//! and scores every child. The search stops at the first answer scoring above
//! `tau`, or when the expansion budget is spent.

mod dump;

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, info, warn};

use crate::asm::{
    self, parse_action, render_answer_evaluation, render_evaluation, render_prompt, Action,
    ActionState, AsmError, Phase, SearchState,
};
use crate::kgi::{Federation, KgError};
use crate::kg::ModelError;
use crate::llm::{CompletionRequest, LlmBackend, LlmError};

pub use dump::{NodeDump, OutcomeDump, TreeDump, TREE_SCHEMA_VERSION};

pub const NO_ANSWER: &str = "Cannot find answer";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    /// Branching factor.
    pub k: usize,
    /// Answer threshold.
    pub tau: f64,
    pub max_depth: usize,
    pub max_expansions: usize,
    pub action_temperature: f64,
    pub eval_temperature: f64,
    /// Samples drawn per kept action in the selecting states.
    pub oversample_factor: usize,
    /// Transition and score the children of one expansion concurrently.
    pub parallel_children: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            k: 3,
            tau: 0.8,
            max_depth: 7,
            max_expansions: 20,
            action_temperature: 1.0,
            eval_temperature: 0.0,
            oversample_factor: 2,
            parallel_children: false,
        }
    }
}

impl SearchConfig {
    /// Single-path configuration (`k = 1`).
    pub fn chain() -> Self {
        Self {
            k: 1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SearchError> {
        let bad = |what: &str| Err(SearchError::Config(what.to_string()));
        if self.k == 0 {
            return bad("k must be positive");
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad("tau must lie in [0, 1]");
        }
        if self.max_depth == 0 || self.max_expansions == 0 || self.oversample_factor == 0 {
            return bad("max_depth, max_expansions and oversample_factor must be positive");
        }
        if !(self.action_temperature >= 0.0 && self.eval_temperature >= 0.0) {
            return bad("temperatures must be non-negative");
        }
        Ok(())
    }

    /// `(n, temperature)` for an action request in `state`.
    pub fn sampling(&self, state: ActionState) -> (usize, f64) {
        if self.k == 1 {
            return (1, 0.0);
        }
        match state {
            ActionState::SelectingEntities | ActionState::SelectingRelation => {
                (self.k * self.oversample_factor, self.action_temperature)
            }
            _ => (self.k, self.action_temperature),
        }
    }
}

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("initialization failed: {0}")]
    Init(#[from] KgError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("invalid search configuration: {0}")]
    Config(String),
    #[error("root subgraph is invalid: {0}")]
    Model(#[from] ModelError),
    #[error(transparent)]
    Asm(#[from] AsmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Tree,
    /// `k` forced to 1.
    Chain,
    NoBacktrack,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: usize,
    pub parent: Option<usize>,
    pub state: SearchState,
    pub incoming_action: Option<Action>,
    pub value: f64,
    pub depth: usize,
    pub explored: bool,
    pub warnings: Vec<String>,
    pub children: Vec<usize>,
}

impl TreeNode {
    pub fn is_done(&self) -> bool {
        self.state.is_done()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTree {
    nodes: Vec<TreeNode>,
    answers: Vec<usize>,
    expansions_used: usize,
    config: SearchConfig,
}

impl SearchTree {
    pub fn new(root: SearchState, config: SearchConfig) -> Self {
        let root = TreeNode {
            id: 0,
            parent: None,
            state: root,
            incoming_action: None,
            value: 0.0,
            depth: 0,
            explored: false,
            warnings: Vec::new(),
            children: Vec::new(),
        };
        Self {
            nodes: vec![root],
            answers: Vec::new(),
            expansions_used: 0,
            config,
        }
    }

    pub fn config(&self) -> &SearchConfig {
        &self.config
    }

    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    pub fn node(&self, id: usize) -> Option<&TreeNode> {
        self.nodes.get(id)
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Answer node ids in creation order.
    pub fn answers(&self) -> &[usize] {
        &self.answers
    }

    pub fn expansions_used(&self) -> usize {
        self.expansions_used
    }

    /// Node ids from the root to `id`.
    pub fn path(&self, id: usize) -> Vec<usize> {
        let mut path = vec![id];
        let mut current = id;
        while let Some(parent) = self.nodes[current].parent {
            path.push(parent);
            current = parent;
        }
        path.reverse();
        path
    }

    /// The depth-1 ancestor of `id` (the root for the root).
    pub fn subtree_root(&self, id: usize) -> usize {
        self.path(id).get(1).copied().unwrap_or(0)
    }

    fn push(
        &mut self,
        parent: usize,
        state: SearchState,
        action: Action,
        value: f64,
        warnings: Vec<String>,
    ) -> usize {
        let id = self.nodes.len();
        let depth = self.nodes[parent].depth + 1;
        let done = state.is_done();
        self.nodes.push(TreeNode {
            id,
            parent: Some(parent),
            state,
            incoming_action: Some(action),
            value,
            depth,
            explored: false,
            warnings,
            children: Vec::new(),
        });
        self.nodes[parent].children.push(id);
        if done {
            self.answers.push(id);
        }
        id
    }

    /// Best answer: highest value, earliest node on ties.
    pub fn best_answer(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for &id in &self.answers {
            if best.is_none_or(|b| self.nodes[id].value > self.nodes[b].value) {
                best = Some(id);
            }
        }
        best
    }
}

/// Unexplored, unfinished node with the highest `(value, depth, id)`.
/// `within` restricts the choice to one depth-1 subtree.
pub fn choose_node(tree: &SearchTree, within: Option<usize>) -> Option<usize> {
    tree.nodes
        .iter()
        .filter(|n| !n.explored && !n.is_done())
        .filter(|n| within.is_none_or(|root| tree.subtree_root(n.id) == root))
        .max_by(|a, b| {
            a.value
                .total_cmp(&b.value)
                .then(a.depth.cmp(&b.depth))
                .then(a.id.cmp(&b.id))
        })
        .map(|n| n.id)
}

/// Actions sampled for one node.
#[derive(Debug, Clone, PartialEq)]
pub struct Sampled {
    pub actions: Vec<Action>,
    /// The actions were synthesized because no sample parsed.
    pub fallback: bool,
    pub warnings: Vec<String>,
}

/// Default-state nodes at or beyond `max_depth` may only answer.
pub fn is_forced(state: &SearchState, depth: usize, config: &SearchConfig) -> bool {
    state.action_state() == ActionState::Default && depth >= config.max_depth
}

pub fn sample_actions(
    state: &SearchState,
    depth: usize,
    llm: &dyn LlmBackend,
    config: &SearchConfig,
) -> Result<Sampled, SearchError> {
    let forced = is_forced(state, depth, config);
    let prompt = render_prompt(state, forced)?;
    let (n, temperature) = config.sampling(state.action_state());
    let request = CompletionRequest::new(prompt.kind, prompt.text)
        .samples(n)
        .temperature(temperature);
    let samples = llm.complete(&request)?;

    let mut keys = Vec::new();
    let mut actions = Vec::new();
    let mut warnings = Vec::new();
    for raw in &samples {
        match parse_action(state, raw, forced) {
            Ok(action) => {
                let key = action.key();
                if !keys.contains(&key) {
                    keys.push(key);
                    actions.push(action);
                }
            }
            Err(e) => {
                debug!(error = %e, "discarding unparseable sample");
                warnings.push(format!("discarded sample: {e}"));
            }
        }
        if actions.len() == config.k {
            break;
        }
    }
    if !actions.is_empty() {
        return Ok(Sampled {
            actions,
            fallback: false,
            warnings: Vec::new(),
        });
    }

    let fallback = match &state.phase {
        Phase::SelectingEntities => state
            .subgraph
            .selectable_ids()
            .into_iter()
            .next()
            .map(|id| Action::SelectEntities(vec![id])),
        Phase::SelectingRelation { offered, .. } => {
            offered.first().cloned().map(Action::SelectRelation)
        }
        Phase::Default if forced => {
            let text = samples
                .first()
                .map(|s| s.split_whitespace().collect::<Vec<_>>().join(" "))
                .filter(|s| !s.is_empty())
                .unwrap_or_else(|| NO_ANSWER.to_string());
            Some(Action::Answer(text))
        }
        _ => None,
    };
    if fallback.is_some() {
        warnings.push("no sample parsed; using the fallback action".into());
    } else {
        warnings.push("no sample parsed; node has no children".into());
    }
    warn!(state = %state.action_state(), samples = samples.len(), "no sample parsed");
    Ok(Sampled {
        actions: fallback.into_iter().collect(),
        fallback: true,
        warnings,
    })
}

static NUMBER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\d+(?:\.\d+)?|\.\d+").unwrap());

/// First (or last) decimal number in `text`, clamped to `[0, 1]`.
pub fn parse_value(text: &str, last: bool) -> Option<f64> {
    let mut numbers = NUMBER.find_iter(text).filter_map(|m| m.as_str().parse::<f64>().ok());
    let value = if last { numbers.last() } else { numbers.next() }?;
    Some(value.clamp(0.0, 1.0))
}

/// Score a freshly created node. Unparseable output scores 0 with a warning.
pub fn evaluate(
    state: &SearchState,
    llm: &dyn LlmBackend,
    config: &SearchConfig,
) -> Result<(f64, Option<String>), LlmError> {
    let done = state.is_done();
    let prompt = if done {
        render_answer_evaluation(state)
    } else {
        render_evaluation(state)
    };
    let request =
        CompletionRequest::new(prompt.kind, prompt.text).temperature(config.eval_temperature);
    let text = llm.complete(&request)?.swap_remove(0);
    Ok(match parse_value(&text, done) {
        Some(v) => (v, None),
        None => (0.0, Some(format!("unparseable value {:?}", excerpt(&text)))),
    })
}

fn excerpt(text: &str) -> String {
    text.chars().take(80).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    /// An answer scored above the threshold.
    Threshold,
    /// The expansion budget ran out.
    Budget,
    /// No unexplored node was left.
    Exhausted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub answer: String,
    pub answer_node: Option<usize>,
    pub value: Option<f64>,
    pub stop: StopReason,
    pub tree: SearchTree,
    pub warnings: Vec<String>,
}

struct Child {
    state: SearchState,
    action: Action,
    value: f64,
    warnings: Vec<String>,
}

fn make_child(
    parent: &SearchState,
    action: Action,
    fallback: bool,
    kgs: &Federation,
    llm: &dyn LlmBackend,
    config: &SearchConfig,
) -> Result<Child, SearchError> {
    let transitioned = asm::transition(parent, action.clone(), kgs)?;
    let mut warnings = transitioned.warnings;
    if fallback {
        warnings.push("fallback action".into());
    }
    let (value, warning) = evaluate(&transitioned.state, llm, config)?;
    warnings.extend(warning);
    Ok(Child {
        state: transitioned.state,
        action,
        value,
        warnings,
    })
}

/// Seed the root from the query, then search.
pub fn run_search(
    query: &str,
    kgs: &Federation,
    llm: &dyn LlmBackend,
    config: &SearchConfig,
) -> Result<SearchOutcome, SearchError> {
    run_mode(query, kgs, llm, config, Mode::Tree)
}

/// Like [`run_search`], but once an answer exists below some depth-1 node the
/// search never leaves that subtree.
pub fn run_search_no_backtrack(
    query: &str,
    kgs: &Federation,
    llm: &dyn LlmBackend,
    config: &SearchConfig,
) -> Result<SearchOutcome, SearchError> {
    run_mode(query, kgs, llm, config, Mode::NoBacktrack)
}

pub fn run_mode(
    query: &str,
    kgs: &Federation,
    llm: &dyn LlmBackend,
    config: &SearchConfig,
    mode: Mode,
) -> Result<SearchOutcome, SearchError> {
    config.validate()?;
    let init = kgs.multi_initialize(query, llm)?;
    let root = SearchState::new(query, init.subgraph()?);
    let mut outcome = search_from(root, kgs, llm, config, mode)?;
    let mut warnings = init.warnings;
    warnings.append(&mut outcome.warnings);
    outcome.warnings = warnings;
    Ok(outcome)
}

/// Search from an already seeded root state.
pub fn search_from(
    root: SearchState,
    kgs: &Federation,
    llm: &dyn LlmBackend,
    config: &SearchConfig,
    mode: Mode,
) -> Result<SearchOutcome, SearchError> {
    let config = match mode {
        Mode::Chain => SearchConfig {
            k: 1,
            ..config.clone()
        },
        _ => config.clone(),
    };
    config.validate()?;
    let mut tree = SearchTree::new(root, config.clone());
    let mut confined: Option<usize> = None;
    let mut stop = StopReason::Budget;

    'search: while tree.expansions_used < config.max_expansions {
        let Some(id) = choose_node(&tree, confined) else {
            stop = StopReason::Exhausted;
            break;
        };
        tree.nodes[id].explored = true;
        tree.expansions_used += 1;
        let parent = tree.nodes[id].state.clone();
        let depth = tree.nodes[id].depth;
        let sampled = sample_actions(&parent, depth, llm, &config)?;
        tree.nodes[id].warnings.extend(sampled.warnings.iter().cloned());
        debug!(node = id, depth, actions = sampled.actions.len(), "expanding");

        let children: Vec<Result<Child, SearchError>> = if config.parallel_children {
            std::thread::scope(|scope| {
                let handles: Vec<_> = sampled
                    .actions
                    .iter()
                    .map(|action| {
                        let parent = &parent;
                        let config = &config;
                        let fallback = sampled.fallback;
                        scope.spawn(move || {
                            make_child(parent, action.clone(), fallback, kgs, llm, config)
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("child worker panicked"))
                    .collect()
            })
        } else {
            sampled
                .actions
                .iter()
                .map(|a| make_child(&parent, a.clone(), sampled.fallback, kgs, llm, &config))
                .collect()
        };

        for child in children {
            let child = child?;
            let done = child.state.is_done();
            let value = child.value;
            let child_id = tree.push(id, child.state, child.action, value, child.warnings);
            if done {
                if mode == Mode::NoBacktrack && confined.is_none() {
                    confined = Some(tree.subtree_root(child_id));
                }
                if value > config.tau {
                    stop = StopReason::Threshold;
                    break 'search;
                }
            }
        }
    }

    let answer_node = tree.best_answer();
    let (answer, value) = match answer_node {
        Some(id) => {
            let node = &tree.nodes[id];
            (node.state.answer().unwrap_or(NO_ANSWER).to_string(), Some(node.value))
        }
        None => (NO_ANSWER.to_string(), None),
    };
    info!(
        nodes = tree.len(),
        expansions = tree.expansions_used,
        ?stop,
        answer = %answer,
        "search finished"
    );
    Ok(SearchOutcome {
        answer,
        answer_node,
        value,
        stop,
        tree,
        warnings: Vec::new(),
    })
}

//! Generation prompt rendering under a token budget.
//!
//! ```text
//! Context: Question: <q1> Answer: <a1> Question: <q2> Answer: <a2> Question: <query> Answer:
//! ```
//!
//! With no contexts the `Context:` prefix is omitted entirely.

use serde::{Deserialize, Serialize};

use crate::corpus::QaPair;
use crate::error::{Error, Result};
use crate::rerank::RankedContext;

pub const DEFAULT_TOKEN_BUDGET: usize = 512;

/// Counts tokens for budget enforcement.
pub trait TokenCounter: Send + Sync {
    fn count(&self, text: &str) -> Result<usize>;

    fn name(&self) -> String;
}

/// Default counter: whitespace-separated tokens.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceCounter;

impl TokenCounter for WhitespaceCounter {
    fn count(&self, text: &str) -> Result<usize> {
        Ok(text.split_whitespace().count())
    }

    fn name(&self) -> String {
        "whitespace".to_string()
    }
}

pub fn count_tokens(text: &str, counter: &dyn TokenCounter) -> Result<usize> {
    counter.count(text)
}

/// `Question: {question} Answer: {answer}`, verbatim.
pub fn render_context(qa: &QaPair) -> String {
    format!("Question: {} Answer: {}", qa.question, qa.answer)
}

/// Order in which contexts appear in the prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContextOrder {
    /// Rank 1 leftmost.
    #[default]
    BestFirst,
    WorstFirst,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub query: String,
    /// Kept contexts in rank order, regardless of [`ContextOrder`].
    pub contexts: Vec<RankedContext>,
    pub rendered: String,
    pub token_count: usize,
    pub dropped_contexts: usize,
}

impl PromptBundle {
    /// The rank-1 context, if any survived truncation.
    pub fn top_context(&self) -> Option<&RankedContext> {
        self.contexts.iter().min_by_key(|c| c.rank)
    }
}

/// Renders the prompt for already-rendered context strings.
pub fn render_prompt<S: AsRef<str>>(query: &str, rendered_contexts: &[S]) -> String {
    if rendered_contexts.is_empty() {
        return format!("Question: {query} Answer:");
    }
    let joined = rendered_contexts.iter().map(AsRef::as_ref).collect::<Vec<_>>().join(" ");
    format!("Context: {joined} Question: {query} Answer:")
}

fn render_in_order(query: &str, contexts: &[RankedContext], order: ContextOrder) -> String {
    let mut parts: Vec<String> = contexts.iter().map(|c| render_context(&c.qa)).collect();
    if order == ContextOrder::WorstFirst {
        parts.reverse();
    }
    render_prompt(query, &parts)
}

/// Renders `query` with as many of `contexts` as fit in `budget` tokens.
///
/// Contexts are sorted by rank; while over budget the lowest-ranked whole
/// context is dropped. Fails when even the context-free prompt does not fit.
pub fn assemble_prompt(
    query: &str,
    contexts: &[RankedContext],
    budget: usize,
    counter: &dyn TokenCounter,
    order: ContextOrder,
) -> Result<PromptBundle> {
    let bare = render_prompt::<&str>(query, &[]);
    let needed = counter.count(&bare)?;
    if needed > budget {
        return Err(Error::BudgetTooSmall { needed, budget });
    }
    let mut kept: Vec<RankedContext> = contexts.to_vec();
    kept.sort_by_key(|c| c.rank);
    let mut dropped = 0;
    loop {
        let rendered = render_in_order(query, &kept, order);
        let token_count = counter.count(&rendered)?;
        if token_count <= budget {
            return Ok(PromptBundle {
                query: query.to_string(),
                contexts: kept,
                rendered,
                token_count,
                dropped_contexts: dropped,
            });
        }
        // the bare prompt fits, so this terminates before `kept` runs dry
        kept.pop();
        dropped += 1;
    }
}

/// A prompt split back into its parts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedPrompt {
    pub contexts: Vec<(String, String)>,
    pub query: String,
}

/// Inverse of [`render_prompt`] for inputs whose text contains none of the
/// `Question: ` / ` Answer: ` markers.
pub fn parse_prompt(rendered: &str) -> Option<ParsedPrompt> {
    let body = rendered.strip_suffix(" Answer:")?;
    let Some(ctx) = body.strip_prefix("Context: ") else {
        let query = body.strip_prefix("Question: ")?;
        return Some(ParsedPrompt {
            contexts: Vec::new(),
            query: query.to_string(),
        });
    };
    let ctx = ctx.strip_prefix("Question: ")?;
    let mut segments: Vec<&str> = ctx.split(" Question: ").collect();
    let query = segments.pop()?.to_string();
    if segments.is_empty() {
        return None;
    }
    let contexts = segments
        .into_iter()
        .map(|seg| {
            let (q, a) = seg.split_once(" Answer: ")?;
            Some((q.to_string(), a.to_string()))
        })
        .collect::<Option<Vec<_>>>()?;
    Some(ParsedPrompt { contexts, query })
}

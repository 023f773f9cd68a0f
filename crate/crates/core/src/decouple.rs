//! Chain-of-thought query decoupling and the per-frame binary-choice prompts.
//!
//! The decoupling model is asked to finish with either a line containing only
//! `NO_DECOUPLE`, a bracketed comma-separated object list (entity strategy),
//! or a final question line (event strategy). Anything else degrades to the
//! direct strategy at the call site.

use std::sync::OnceLock;

use regex::Regex;

use crate::error::{QuotaError, Result};
use crate::model::{Clue, DecoupledQuery, Strategy};

/// Sentinel line meaning the query should be scored as-is.
pub const NO_DECOUPLE: &str = "NO_DECOUPLE";

const ANSWER_OPTIONS: &str = "A. Yes. B. No.";
const ANSWER_INSTRUCTION: &str = "Answer the letter directly.";

const ENTITY_PROMPT_HEAD: &str = "\
You help a video assistant decide which frames of a video matter for a user's question.
Decouple the question into the concrete physical objects a single frame would have to show.
Think step by step:
Step 1: Assess whether entity decoupling is necessary. If the question cannot be grounded in visible physical objects (for example it asks about audio, overall counts across the whole video, or abstract opinions), output a single line containing NO_DECOUPLE and stop.
Step 2: Transform the question into a structured object list that names the things a frame must show to help answer it.
Step 3: Refine the list by eliminating abstract concepts, actions, attributes and anything that is not a concrete physical entity. Keep short nouns only.
End your answer with the refined list on its own line, written as [object1, object2, ...].

Example
Question: What is the man holding while standing next to the red car?
Step 1: The question is about visible objects, decoupling is useful.
Step 2: [man, object in hand, red car]
Step 3: [man, car]

Example
Question: How many different songs are played in the video?
Step 1: The question is about audio, not visible objects.
NO_DECOUPLE

Question: ";

const EVENT_PROMPT_HEAD: &str = "\
You help a video assistant decide which frames of a video matter for a user's question.
Rewrite the question into one simple question that can be checked on a single frame.
Think step by step:
Step 1: Analyze the type of the original question (what, who, how, where, when, why).
Step 2: Identify the key elements to focus on, such as objects, actions, states and scenes.
Step 3: Formulate a simple, direct question asking whether a frame contains these key elements.
If no frame-level question can help, output a single line containing NO_DECOUPLE and stop.
End your answer with the simple question alone on its final line, ending with a question mark.

Example
Question: Why does the woman open the fridge?
Step 1: This is a why question about a motivation.
Step 2: Key elements: woman, fridge, opening action, items taken out.
Step 3: Is a woman opening a fridge or taking something out of it?

Question: ";

const PROMPT_TAIL: &str = "\nAnswer:";

/// Builds the decoupling request for the language model.
pub fn build_decouple_prompt(query: &str, strategy: Strategy) -> Result<String> {
    let query = query.trim();
    if query.is_empty() {
        return Err(QuotaError::EmptyQuery);
    }
    let head = match strategy {
        Strategy::EntityList => ENTITY_PROMPT_HEAD,
        Strategy::EventQuestion => EVENT_PROMPT_HEAD,
        Strategy::Direct => {
            return Err(QuotaError::Config(
                "the direct strategy needs no decoupling prompt".into(),
            ))
        }
    };
    Ok(format!("{head}{query}{PROMPT_TAIL}"))
}

fn step_label() -> &'static Regex {
    static LABEL: OnceLock<Regex> = OnceLock::new();
    LABEL.get_or_init(|| {
        Regex::new(r"(?i)^\s*(?:[-*]\s*)?(?:step\s*\d+\s*[:.)-]|(?:final\s+|simple\s+)?question\s*:|answer\s*:)\s*")
            .expect("static regex")
    })
}

fn has_sentinel(response: &str) -> bool {
    response.lines().any(|line| line.trim() == NO_DECOUPLE)
}

/// Items of the last `[...]` group, trimmed, unquoted, deduplicated in order.
fn last_bracketed_list(response: &str) -> Option<Vec<String>> {
    let close = response.rfind(']')?;
    let open = response[..close].rfind('[')?;
    let mut items: Vec<String> = Vec::new();
    for raw in response[open + 1..close].split(',') {
        let item = raw
            .trim()
            .trim_matches(|c| c == '"' || c == '\'' || c == '`')
            .trim();
        if !item.is_empty() && !items.iter().any(|seen| seen == item) {
            items.push(item.to_string());
        }
    }
    (!items.is_empty()).then_some(items)
}

fn last_question_line(response: &str) -> Option<String> {
    response
        .lines()
        .rev()
        .map(str::trim)
        .find(|line| line.ends_with('?'))
        .map(|line| step_label().replace(line, "").trim().to_string())
        .filter(|q| q.len() > 1)
}

/// Parses a decoupling response for the requested strategy.
///
/// Returns `UnparseableResponse` when there is neither a sentinel nor an
/// extractable list or question; callers fall back to [`DecoupledQuery::direct`].
pub fn parse_decouple_response(
    response: &str,
    strategy: Strategy,
    source_query: &str,
) -> Result<DecoupledQuery> {
    if has_sentinel(response) {
        return Ok(DecoupledQuery::direct(source_query));
    }
    match strategy {
        Strategy::Direct => Ok(DecoupledQuery::direct(source_query)),
        Strategy::EntityList => {
            let objects = last_bracketed_list(response).ok_or_else(|| {
                QuotaError::UnparseableResponse("no bracketed object list".into())
            })?;
            DecoupledQuery::entities(source_query, objects)
        }
        Strategy::EventQuestion => {
            let question = last_question_line(response)
                .ok_or_else(|| QuotaError::UnparseableResponse("no question line".into()))?;
            DecoupledQuery::event(source_query, question)
        }
    }
}

/// Result of decoupling with the fallback recorded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoupling {
    pub requested: Strategy,
    pub query: DecoupledQuery,
    /// Set when the requested strategy could not be honored.
    pub fallback: Option<String>,
}

/// Parses and degrades to the direct strategy on failure instead of erroring.
pub fn decouple_or_direct(response: &str, requested: Strategy, source_query: &str) -> Decoupling {
    match parse_decouple_response(response, requested, source_query) {
        Ok(query) => {
            let fallback = (requested != Strategy::Direct && query.strategy() == Strategy::Direct)
                .then(|| "model declined to decouple".to_string());
            Decoupling {
                requested,
                query,
                fallback,
            }
        }
        Err(e) => Decoupling {
            requested,
            query: DecoupledQuery::direct(source_query),
            fallback: Some(e.to_string()),
        },
    }
}

/// The binary-choice question sent to the scoring model with each frame.
pub fn build_frame_scoring_prompt(dq: &DecoupledQuery) -> String {
    let question = match dq.clue() {
        Clue::Direct => format!(
            "Question: Does this frame contain any information to answer the given query: {}?",
            dq.source_query()
        ),
        Clue::Event(q) => format!(
            "Question: Does this frame contain any information to answer the given query: {q}?"
        ),
        Clue::Entities(objects) => format!(
            "Question: Does the frame contain any objects of the following list: {}?",
            objects.join(", ")
        ),
    };
    format!("{question}\n{ANSWER_OPTIONS}\n{ANSWER_INSTRUCTION}")
}

//! Few-shot prompt construction, completion backends and SQL extraction.

mod backend;
mod extract;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use backend::{HttpBackend, HttpBackendConfig, StubBackend, WireFormat};
pub use extract::extract_sql;

use crate::mechgen::{ClauseTag, SeedExample};
use crate::schema::{render_create_statements, ColumnFilter, SchemaCatalog};
use crate::subschema::Subschema;

#[derive(Debug, Error, PartialEq)]
pub enum LlmError {
    #[error("prompt setting asks for {expected} examples, got {actual}")]
    Arity { expected: usize, actual: usize },
    #[error("invalid generation parameters: {0}")]
    InvalidParams(String),
    #[error("schema: {0}")]
    Schema(String),
    #[error("backend error{}: {message}", status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    Backend {
        message: String,
        status: Option<u16>,
        /// Whether retrying the same request may succeed.
        retryable: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bias {
    None,
    OrderBy,
    GroupBy,
}

impl Bias {
    pub fn clause(self) -> Option<ClauseTag> {
        match self {
            Bias::None => None,
            Bias::OrderBy => Some(ClauseTag::OrderBy),
            Bias::GroupBy => Some(ClauseTag::GroupBy),
        }
    }

    pub fn from_clause(tag: ClauseTag) -> Option<Bias> {
        match tag {
            ClauseTag::OrderBy => Some(Bias::OrderBy),
            ClauseTag::GroupBy | ClauseTag::Having => Some(Bias::GroupBy),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Bias::None => "none",
            Bias::OrderBy => "order_by",
            Bias::GroupBy => "group_by",
        }
    }
}

/// Number of worked examples and clause bias of a prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PromptSetting {
    pub shots: usize,
    pub bias: Bias,
}

impl PromptSetting {
    /// {0, 3} shots crossed with {none, order_by, group_by}.
    pub fn canonical() -> Vec<PromptSetting> {
        [0, 3]
            .into_iter()
            .flat_map(|shots| {
                [Bias::None, Bias::OrderBy, Bias::GroupBy].map(|bias| PromptSetting { shots, bias })
            })
            .collect()
    }

    pub fn label(&self) -> String {
        format!("{}-shot/{}", self.shots, self.bias.as_str())
    }
}

impl fmt::Display for PromptSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenParams {
    pub temperature: f64,
    pub top_p: f64,
    pub repetition_penalty: f64,
    pub n_completions: usize,
    pub max_tokens: usize,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            temperature: 0.8,
            top_p: 0.95,
            repetition_penalty: 1.05,
            n_completions: 5,
            max_tokens: 512,
        }
    }
}

impl GenParams {
    pub fn validate(&self) -> Result<(), LlmError> {
        let bad = |m: &str| Err(LlmError::InvalidParams(m.to_string()));
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be non-negative");
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return bad("top_p must be in (0, 1]");
        }
        if !(self.repetition_penalty >= 1.0 && self.repetition_penalty.is_finite()) {
            return bad("repetition_penalty must be at least 1");
        }
        if self.n_completions == 0 {
            return bad("n_completions must be at least 1");
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be at least 1");
        }
        Ok(())
    }
}

/// The configurable sentences of the prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptText {
    pub group_by_constraint: String,
    pub order_by_constraint: String,
}

impl Default for PromptText {
    fn default() -> Self {
        PromptText {
            group_by_constraint: "Whenever possible, please use a group by clause. Use operators for more complex groups."
                .into(),
            order_by_constraint: "Whenever possible, please use an order by clause.".into(),
        }
    }
}

impl PromptText {
    pub fn constraint(&self, bias: Bias) -> Option<&str> {
        match bias {
            Bias::None => None,
            Bias::GroupBy => Some(&self.group_by_constraint),
            Bias::OrderBy => Some(&self.order_by_constraint),
        }
    }
}

/// Prompt text for one subschema:
///
/// ```text
/// These tables have been created:
/// <CREATE statements>
/// Write an interesting and complicated SQL query that uses all of these tables:
/// <comma-separated table names>
/// [constraint sentence]
/// [These are some examples:
/// 1. <sql>
/// ...]
/// ```
pub fn build_prompt(
    subschema: &Subschema,
    catalog: &SchemaCatalog,
    setting: &PromptSetting,
    examples: &[SeedExample],
    column_filter: Option<&ColumnFilter>,
    text: &PromptText,
) -> Result<String, LlmError> {
    if examples.len() != setting.shots {
        return Err(LlmError::Arity {
            expected: setting.shots,
            actual: examples.len(),
        });
    }
    let tables: BTreeSet<String> = subschema.tables.iter().cloned().collect();
    // Filters for tables outside the subschema are irrelevant here.
    let filter: Option<ColumnFilter> = column_filter.map(|f| {
        f.iter()
            .filter(|(t, _)| tables.contains(*t))
            .map(|(t, c)| (t.clone(), c.clone()))
            .collect()
    });
    let creates = render_create_statements(catalog, Some(&tables), filter.as_ref())
        .map_err(|e| LlmError::Schema(e.to_string()))?;

    let mut prompt = String::from("These tables have been created:\n");
    for create in &creates {
        prompt.push_str(create);
        prompt.push('\n');
    }
    prompt.push_str(
        "Write an interesting and complicated SQL query that uses all of these tables:\n",
    );
    prompt.push_str(&subschema.tables.join(", "));
    prompt.push('\n');
    if let Some(constraint) = text.constraint(setting.bias) {
        prompt.push_str(constraint);
        prompt.push('\n');
    }
    if !examples.is_empty() {
        prompt.push_str("These are some examples:\n");
        for (i, e) in examples.iter().enumerate() {
            prompt.push_str(&format!("{}. {}\n", i + 1, e.sql.trim()));
        }
    }
    Ok(prompt)
}

/// Hash stored with every record derived from a prompt.
pub fn prompt_hash(prompt: &str) -> String {
    crate::rng::short_hash(prompt, 16)
}

/// A text-generation service.
pub trait LlmBackend: Send + Sync {
    /// Up to `params.n_completions` completions of `prompt`.
    fn complete(&self, prompt: &str, params: &GenParams) -> Result<Vec<String>, LlmError>;
    fn model_name(&self) -> &str;
}

pub fn generate_llm(
    prompt: &str,
    backend: &dyn LlmBackend,
    params: &GenParams,
) -> Result<Vec<String>, LlmError> {
    params.validate()?;
    let mut completions = backend.complete(prompt, params)?;
    completions.truncate(params.n_completions);
    Ok(completions)
}

/// Runs `prompts` with at most `max_in_flight` concurrent backend calls,
/// returning results in prompt order.
pub fn generate_many(
    prompts: &[String],
    backend: &dyn LlmBackend,
    params: &GenParams,
    max_in_flight: usize,
) -> Vec<Result<Vec<String>, LlmError>> {
    let width = max_in_flight.max(1);
    let mut results = Vec::with_capacity(prompts.len());
    for chunk in prompts.chunks(width) {
        std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|p| scope.spawn(move || generate_llm(p, backend, params)))
                .collect();
            for h in handles {
                results.push(h.join().unwrap_or_else(|_| {
                    Err(LlmError::Backend {
                        message: "backend call panicked".into(),
                        status: None,
                        retryable: false,
                    })
                }));
            }
        });
    }
    results
}

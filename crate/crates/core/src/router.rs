//! Multi-label routing of a question into required evidence types, with
//! confidence thresholding and a deterministic heuristic fallback. Routing
//! is total: the worst a gateway failure can do is degrade to the heuristic.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::fewshot::question_tokens;
use crate::llm_gateway::{extract_fenced_json, ChatRequest, LlmGateway};
use crate::schema_knowledge::SchemaKnowledge;

pub const ROUTING_SYSTEM_PROMPT: &str = include_str!("../assets/routing_system_v1.txt");
pub const DEFAULT_TAU: f64 = 0.5;

/// Arithmetic cue words that signal numeric reasoning.
pub const NUMERIC_CUES: &[&str] = &[
    "ratio",
    "percentage",
    "average",
    "difference",
    "per",
    "rate",
    "total",
    "rank",
    "top",
];

const STOPWORDS: &[&str] = &[
    "a", "all", "an", "and", "are", "as", "at", "be", "by", "did", "do", "does", "each", "find",
    "for", "from", "give", "how", "in", "is", "list", "many", "me", "much", "of", "on", "or",
    "out", "please", "show", "that", "the", "these", "this", "those", "to", "was", "were", "what",
    "which", "who", "whose", "with",
];

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum EvidenceType {
    NumericReasoning,
    DomainKnowledge,
    SynonymAlias,
    EnumValue,
}

impl EvidenceType {
    pub const ALL: [EvidenceType; 4] = [
        EvidenceType::NumericReasoning,
        EvidenceType::DomainKnowledge,
        EvidenceType::SynonymAlias,
        EvidenceType::EnumValue,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoutingSource {
    Llm,
    Heuristic,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoutingDecision {
    pub confidences: BTreeMap<EvidenceType, f64>,
    pub threshold: f64,
    pub labels: BTreeSet<EvidenceType>,
    pub source: RoutingSource,
}

impl RoutingDecision {
    /// Apply the inclusive threshold to a confidence map: confidences are
    /// clamped into [0, 1], missing types count as 0, and
    /// labels = { t : conf(t) >= tau }.
    pub fn from_confidences(
        raw: &BTreeMap<EvidenceType, f64>,
        tau: f64,
        source: RoutingSource,
    ) -> Self {
        let tau = tau.clamp(0.0, 1.0);
        let mut confidences = BTreeMap::new();
        for ty in EvidenceType::ALL {
            let value = raw.get(&ty).copied().unwrap_or(0.0);
            confidences.insert(ty, value.clamp(0.0, 1.0));
        }
        let labels = confidences
            .iter()
            .filter(|(_, conf)| **conf >= tau)
            .map(|(ty, _)| *ty)
            .collect();
        RoutingDecision {
            confidences,
            threshold: tau,
            labels,
            source,
        }
    }

    pub fn requires(&self, ty: EvidenceType) -> bool {
        self.labels.contains(&ty)
    }
}

/// Compact schema digest for the routing prompt: table names, column names,
/// and enumeration flags only.
pub fn routing_user_prompt(question: &str, sk: &SchemaKnowledge) -> String {
    let mut out = String::from("Schema:\n");
    for table in &sk.tables {
        let cols: Vec<String> = table
            .columns
            .iter()
            .map(|c| {
                if c.profile.is_enumeration {
                    format!("{} [enum]", c.name)
                } else {
                    c.name.clone()
                }
            })
            .collect();
        out.push_str(&format!("- {} ({})\n", table.name, cols.join(", ")));
    }
    out.push_str(&format!("\nQuestion: {question}\n"));
    out
}

#[derive(Deserialize)]
struct RawRouting {
    numeric: Option<f64>,
    domain: Option<f64>,
    synonym: Option<f64>,
    #[serde(rename = "enum")]
    enum_value: Option<f64>,
}

/// Route via the LLM, falling back to the heuristic whenever the reply is
/// missing or unparseable.
pub fn route(
    question: &str,
    sk: &SchemaKnowledge,
    gateway: &dyn LlmGateway,
    tau: f64,
) -> RoutingDecision {
    let request = ChatRequest::new(ROUTING_SYSTEM_PROMPT, routing_user_prompt(question, sk));
    let parsed = gateway
        .chat(&request)
        .ok()
        .and_then(|resp| extract_fenced_json(&resp.text))
        .and_then(|block| serde_json::from_str::<RawRouting>(&block).ok());
    match parsed {
        Some(raw) => {
            let mut confidences = BTreeMap::new();
            confidences.insert(
                EvidenceType::NumericReasoning,
                raw.numeric.unwrap_or(0.0),
            );
            confidences.insert(EvidenceType::DomainKnowledge, raw.domain.unwrap_or(0.0));
            confidences.insert(EvidenceType::SynonymAlias, raw.synonym.unwrap_or(0.0));
            confidences.insert(EvidenceType::EnumValue, raw.enum_value.unwrap_or(0.0));
            RoutingDecision::from_confidences(&confidences, tau, RoutingSource::Llm)
        }
        None => heuristic_route_with_tau(question, sk, tau),
    }
}

/// Does `phrase` occur as a consecutive run of tokens in `tokens`?
pub fn phrase_matches(tokens: &[String], phrase: &str) -> bool {
    let needle = question_tokens(phrase);
    if needle.is_empty() || needle.len() > tokens.len() {
        return false;
    }
    tokens.windows(needle.len()).any(|w| w == needle.as_slice())
}

fn identifier_tokens_flat(name: &str) -> Vec<String> {
    crate::profiler::similarity::identifier_tokens(name)
        .into_iter()
        .collect()
}

/// Deterministic rule-based routing with scores in {0, 1}.
///
/// - numeric: the question contains an arithmetic cue word;
/// - enum: a question phrase matches a glossary label or a top value of an
///   enumeration column;
/// - synonym: a question phrase matches a column alias that is not itself a
///   column name;
/// - domain: no content token of the question matches any column name,
///   alias, or sampled value.
pub fn heuristic_route(question: &str, sk: &SchemaKnowledge) -> RoutingDecision {
    heuristic_route_with_tau(question, sk, DEFAULT_TAU)
}

pub fn heuristic_route_with_tau(
    question: &str,
    sk: &SchemaKnowledge,
    tau: f64,
) -> RoutingDecision {
    let tokens = question_tokens(question);
    let token_set: BTreeSet<&String> = tokens.iter().collect();

    let numeric = NUMERIC_CUES
        .iter()
        .any(|cue| token_set.contains(&cue.to_string()));

    let mut enum_hit = false;
    let mut synonym_hit = false;
    let mut column_name_phrases: BTreeSet<String> = BTreeSet::new();
    for table in &sk.tables {
        for col in &table.columns {
            column_name_phrases.insert(identifier_tokens_flat(&col.name).join(" "));
        }
    }
    let mut matchable_tokens: BTreeSet<String> = BTreeSet::new();
    for table in &sk.tables {
        matchable_tokens.extend(identifier_tokens_flat(&table.name));
        for col in &table.columns {
            matchable_tokens.extend(identifier_tokens_flat(&col.name));
            for alias in &col.semantics.aliases {
                matchable_tokens.extend(question_tokens(alias));
            }
            for value in &col.profile.sample_values {
                if !value.is_null() {
                    matchable_tokens.extend(question_tokens(&value.render()));
                }
            }

            if col.profile.is_enumeration {
                let glossary_hit = col
                    .semantics
                    .enum_glossary
                    .iter()
                    .any(|(raw, label)| {
                        phrase_matches(&tokens, label) || phrase_matches(&tokens, raw)
                    });
                let value_hit = col
                    .profile
                    .top_values
                    .iter()
                    .any(|tv| phrase_matches(&tokens, &tv.0.render()));
                if glossary_hit || value_hit {
                    enum_hit = true;
                }
            }
            for alias in &col.semantics.aliases {
                let alias_phrase = question_tokens(alias).join(" ");
                if !alias_phrase.is_empty()
                    && phrase_matches(&tokens, alias)
                    && !column_name_phrases.contains(&alias_phrase)
                {
                    synonym_hit = true;
                }
            }
        }
    }

    let content_tokens: Vec<&String> = tokens
        .iter()
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
        .collect();
    let domain = !content_tokens.is_empty()
        && content_tokens
            .iter()
            .all(|t| !matchable_tokens.contains(t.as_str()));

    let mut confidences = BTreeMap::new();
    confidences.insert(
        EvidenceType::NumericReasoning,
        if numeric { 1.0 } else { 0.0 },
    );
    confidences.insert(EvidenceType::DomainKnowledge, if domain { 1.0 } else { 0.0 });
    confidences.insert(
        EvidenceType::SynonymAlias,
        if synonym_hit { 1.0 } else { 0.0 },
    );
    confidences.insert(EvidenceType::EnumValue, if enum_hit { 1.0 } else { 0.0 });
    RoutingDecision::from_confidences(&confidences, tau, RoutingSource::Heuristic)
}

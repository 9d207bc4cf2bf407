//! Substitute-evidence construction: join-path proposals, semantic
//! constraints, numeric templates, enum dictionaries, alias rewrites, and
//! few-shot logical completion, assembled into an ordered bundle and a
//! deterministic generation prompt.
//!
//! Every item is grounded: its referenced (table, column) pairs must exist
//! in the schema knowledge that produced it. Generators licensed by routing
//! labels run only when their label survived the threshold; schema
//! consistency runs whenever the question mentions at least two tables.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::fewshot::{
    question_tokens, render_fewshot_block, retrieve_for_db, FewShotEntry, FewShotLibrary,
};
use crate::llm_gateway::{ChatRequest, GatewayError, LlmGateway};
use crate::router::{phrase_matches, route, EvidenceType, RoutingDecision, NUMERIC_CUES};
use crate::schema_knowledge::{
    ColumnKnowledge, ColumnRef, EdgeSource, ForeignKeyEdge, SchemaKnowledge, TableKnowledge,
};

pub const CONSTRAINT_SYSTEM_PROMPT: &str = include_str!("../../assets/constraint_system_v1.txt");
pub const SQL_SYSTEM_PROMPT: &str = include_str!("../../assets/sql_system_v1.txt");
pub const PROMPT_TASK_INSTRUCTION: &str = include_str!("../../assets/prompt_task_v1.txt");

/// Per-item text budget; longer texts are cut at a sentence boundary.
pub const ITEM_TEXT_CAP: usize = 400;

#[derive(Debug, thiserror::Error)]
pub enum EvidenceError {
    #[error("unknown table `{0}` in join-path request")]
    UnknownTable(String),
}

#[derive(Debug, thiserror::Error)]
pub enum GenerateError {
    #[error("generation gateway failed: {0}")]
    Gateway(#[from] GatewayError),
    #[error("completion contained no SQL")]
    NoSqlFound,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum EvidenceKind {
    AliasMapping,
    SchemaConsistency,
    EnumDictionary,
    NumericTemplate,
    SemanticConstraint,
    DomainNote,
    LogicalCompletion,
}

/// Canonical bundle order: rewrites and join structure first, then value
/// dictionaries and numeric scaffolding, constraints, domain notes, and
/// retrieved logic last.
pub const KIND_ORDER: [EvidenceKind; 7] = [
    EvidenceKind::AliasMapping,
    EvidenceKind::SchemaConsistency,
    EvidenceKind::EnumDictionary,
    EvidenceKind::NumericTemplate,
    EvidenceKind::SemanticConstraint,
    EvidenceKind::DomainNote,
    EvidenceKind::LogicalCompletion,
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvidenceItem {
    pub kind: EvidenceKind,
    pub text: String,
    pub referenced: Vec<ColumnRef>,
    pub provenance: String,
}

impl EvidenceItem {
    fn new(kind: EvidenceKind, text: String, referenced: Vec<ColumnRef>, provenance: &str) -> Self {
        EvidenceItem {
            kind,
            text: truncate_at_sentence(&text, ITEM_TEXT_CAP),
            referenced,
            provenance: provenance.to_string(),
        }
    }

    pub fn grounded_in(&self, sk: &SchemaKnowledge) -> bool {
        self.referenced.iter().all(|r| sk.has_column(r))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceBundle {
    pub question: String,
    pub rewritten_question: Option<String>,
    pub items: Vec<EvidenceItem>,
    pub fewshot: Vec<FewShotEntry>,
}

impl EvidenceBundle {
    pub fn empty(question: &str) -> Self {
        EvidenceBundle {
            question: question.to_string(),
            rewritten_question: None,
            items: Vec::new(),
            fewshot: Vec::new(),
        }
    }

    pub fn final_question(&self) -> &str {
        self.rewritten_question.as_deref().unwrap_or(&self.question)
    }

    /// Canonical JSON form: few-shot entries appear as their ids.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "question": self.question,
            "rewritten_question": self.rewritten_question,
            "items": self.items,
            "fewshot": self.fewshot.iter().map(|e| e.id).collect::<Vec<_>>(),
        })
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(&self.to_json()).expect("bundle serializes");
        bytes.push(b'\n');
        bytes
    }
}

/// Cut at the last sentence boundary (`.` or `;`) within the cap, falling
/// back to a hard cut on the cap'th character.
fn truncate_at_sentence(text: &str, cap: usize) -> String {
    if text.chars().count() <= cap {
        return text.to_string();
    }
    let prefix: String = text.chars().take(cap).collect();
    match prefix.rfind(['.', ';']) {
        Some(boundary) => prefix[..=boundary].trim_end().to_string(),
        None => prefix.trim_end().to_string(),
    }
}

// ---------------------------------------------------------------------------
// Join paths and schema-consistency evidence
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct JoinPath {
    /// Table sequence from one endpoint to the other; length = edges + 1.
    pub tables: Vec<String>,
    pub edges: Vec<ForeignKeyEdge>,
}

impl JoinPath {
    pub fn endpoints(&self) -> (&str, &str) {
        (
            self.tables.first().map(String::as_str).unwrap_or(""),
            self.tables.last().map(String::as_str).unwrap_or(""),
        )
    }
}

#[derive(Debug, Default)]
pub struct JoinPathSearch {
    pub paths: Vec<JoinPath>,
    /// Table pairs with no connecting path in the FK graph.
    pub unreachable: Vec<(String, String)>,
}

fn edge_touches<'a>(edge: &'a ForeignKeyEdge, table: &str) -> Option<&'a str> {
    if edge.from.table == table {
        Some(&edge.to.table)
    } else if edge.to.table == table {
        Some(&edge.from.table)
    } else {
        None
    }
}

/// All simple paths from `at` to `goal` of exactly `budget` more edges.
fn simple_paths(
    sk: &SchemaKnowledge,
    at: &str,
    goal: &str,
    budget: usize,
    visited: &mut Vec<String>,
    edges: &mut Vec<ForeignKeyEdge>,
    out: &mut Vec<JoinPath>,
) {
    if at == goal {
        if edges.is_empty() {
            return; // trivial path only when budget was zero and at == goal
        }
        out.push(JoinPath {
            tables: visited.clone(),
            edges: edges.clone(),
        });
        return;
    }
    if budget == 0 {
        return;
    }
    for edge in &sk.fk_edges {
        let Some(next) = edge_touches(edge, at) else {
            continue;
        };
        if visited.iter().any(|t| t == next) {
            continue;
        }
        visited.push(next.to_string());
        edges.push(edge.clone());
        simple_paths(sk, next, goal, budget - 1, visited, edges, out);
        edges.pop();
        visited.pop();
    }
}

fn shortest_length(sk: &SchemaKnowledge, from: &str, to: &str) -> Option<usize> {
    use std::collections::VecDeque;
    let mut seen: BTreeSet<&str> = BTreeSet::new();
    let mut queue: VecDeque<(&str, usize)> = VecDeque::new();
    seen.insert(from);
    queue.push_back((from, 0));
    while let Some((at, depth)) = queue.pop_front() {
        if at == to {
            return Some(depth);
        }
        for edge in &sk.fk_edges {
            if let Some(next) = edge_touches(edge, at) {
                if seen.insert(next) {
                    queue.push_back((next, depth + 1));
                }
            }
        }
    }
    None
}

fn inferred_count(path: &JoinPath) -> usize {
    path.edges
        .iter()
        .filter(|e| e.source == EdgeSource::Inferred)
        .count()
}

fn path_sort_key(path: &JoinPath) -> (usize, Vec<String>, Vec<String>) {
    let edge_keys = path
        .edges
        .iter()
        .map(|e| format!("{}|{}", e.from, e.to))
        .collect();
    (inferred_count(path), path.tables.clone(), edge_keys)
}

/// Best connecting path for one table pair: shortest, preferring declared
/// edges over inferred at equal length, then lexicographic table order.
pub fn best_join_path(sk: &SchemaKnowledge, from: &str, to: &str) -> Option<JoinPath> {
    let length = shortest_length(sk, from, to)?;
    if length == 0 {
        return None;
    }
    let mut candidates = Vec::new();
    let mut visited = vec![from.to_string()];
    let mut edges = Vec::new();
    simple_paths(sk, from, to, length, &mut visited, &mut edges, &mut candidates);
    candidates.retain(|p| p.edges.len() == length);
    candidates.into_iter().min_by_key(path_sort_key)
}

/// Shortest simple join path for every unordered pair of the given tables.
pub fn find_join_paths(
    sk: &SchemaKnowledge,
    tables: &BTreeSet<String>,
) -> Result<JoinPathSearch, EvidenceError> {
    for name in tables {
        if sk.table(name).is_none() {
            return Err(EvidenceError::UnknownTable(name.clone()));
        }
    }
    let ordered: Vec<&String> = tables.iter().collect();
    let mut search = JoinPathSearch::default();
    for (i, a) in ordered.iter().enumerate() {
        for b in ordered.iter().skip(i + 1) {
            match best_join_path(sk, a, b) {
                Some(path) => search.paths.push(path),
                None => search.unreachable.push(((*a).clone(), (*b).clone())),
            }
        }
    }
    Ok(search)
}

fn hop_label(edge: &ForeignKeyEdge, next_table: &str) -> String {
    if edge.from.column == edge.to.column {
        edge.from.column.clone()
    } else if edge.to.table == next_table {
        format!("{} = {}", edge.from, edge.to)
    } else {
        format!("{} = {}", edge.to, edge.from)
    }
}

/// One schema-consistency item per path: "Table a is linked to b via k,
/// then to c via k2", referencing every join column on the way.
pub fn gen_schema_consistency(paths: &[JoinPath]) -> Vec<EvidenceItem> {
    let mut items = Vec::new();
    for path in paths {
        if path.edges.is_empty() {
            continue;
        }
        let mut text = format!(
            "Table {} is linked to {} via {}",
            path.tables[0],
            path.tables[1],
            hop_label(&path.edges[0], &path.tables[1])
        );
        for (i, edge) in path.edges.iter().enumerate().skip(1) {
            text.push_str(&format!(
                ", then to {} via {}",
                path.tables[i + 1],
                hop_label(edge, &path.tables[i + 1])
            ));
        }
        text.push('.');
        let mut referenced = Vec::new();
        for edge in &path.edges {
            referenced.push(edge.from.clone());
            referenced.push(edge.to.clone());
        }
        items.push(EvidenceItem::new(
            EvidenceKind::SchemaConsistency,
            text,
            referenced,
            "schema_consistency",
        ));
    }
    items
}

// ---------------------------------------------------------------------------
// Question/schema matching helpers
// ---------------------------------------------------------------------------

fn identifier_phrase(name: &str) -> String {
    crate::profiler::similarity::identifier_tokens(name)
        .into_iter()
        .collect::<Vec<_>>()
        .join(" ")
}

fn column_mentioned(tokens: &[String], column: &ColumnKnowledge) -> bool {
    if phrase_matches(tokens, &identifier_phrase(&column.name)) {
        return true;
    }
    column
        .semantics
        .aliases
        .iter()
        .any(|alias| phrase_matches(tokens, alias))
}

/// Tables mentioned by the question: the table's name, one of its column
/// names, or one of its aliases appears in the question.
pub fn mentioned_tables(question: &str, sk: &SchemaKnowledge) -> BTreeSet<String> {
    let tokens = question_tokens(question);
    let mut mentioned = BTreeSet::new();
    for table in &sk.tables {
        let by_name = phrase_matches(&tokens, &identifier_phrase(&table.name));
        let by_column = table.columns.iter().any(|c| column_mentioned(&tokens, c));
        if by_name || by_column {
            mentioned.insert(table.name.clone());
        }
    }
    mentioned
}

fn columns_with<'a>(
    sk: &'a SchemaKnowledge,
    mut pred: impl FnMut(&TableKnowledge, &ColumnKnowledge) -> bool,
) -> Vec<(&'a TableKnowledge, &'a ColumnKnowledge)> {
    let mut out = Vec::new();
    for table in &sk.tables {
        for column in &table.columns {
            if pred(table, column) {
                out.push((table, column));
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Semantic-constraint evidence
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum ConstraintOp {
    Gt,
    Ge,
    Lt,
    Le,
    Between(f64),
}

#[derive(Debug, Clone)]
struct RangeMention {
    op: ConstraintOp,
    value: f64,
    phrase: String,
}

fn parse_number(token: &str) -> Option<f64> {
    token.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Detect comparator + number mentions: "after 2020", "more than 50",
/// "at least 10", "between 3 and 7".
fn range_mentions(tokens: &[String]) -> Vec<RangeMention> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let t = tokens[i].as_str();
        let two = |op: ConstraintOp, at: usize| -> Option<(ConstraintOp, f64, usize, String)> {
            let v = parse_number(tokens.get(at)?)?;
            Some((op, v, at, format!("{} {}", tokens[at - 1], tokens[at])))
        };
        let hit = match t {
            "after" | "over" | "above" | "exceeding" | "beyond" => two(ConstraintOp::Gt, i + 1),
            "since" => two(ConstraintOp::Ge, i + 1),
            "before" | "below" | "under" => two(ConstraintOp::Lt, i + 1),
            "more" | "greater" | "larger" if tokens.get(i + 1).map(String::as_str) == Some("than") => {
                two(ConstraintOp::Gt, i + 2)
            }
            "less" | "fewer" | "smaller" if tokens.get(i + 1).map(String::as_str) == Some("than") => {
                two(ConstraintOp::Lt, i + 2)
            }
            "at" if tokens.get(i + 1).map(String::as_str) == Some("least") => {
                two(ConstraintOp::Ge, i + 2)
            }
            "at" if tokens.get(i + 1).map(String::as_str) == Some("most") => {
                two(ConstraintOp::Le, i + 2)
            }
            "between" => {
                let a = tokens.get(i + 1).and_then(|x| parse_number(x));
                let and = tokens.get(i + 2).map(String::as_str) == Some("and");
                let b = tokens.get(i + 3).and_then(|x| parse_number(x));
                match (a, and, b) {
                    (Some(a), true, Some(b)) => Some((
                        ConstraintOp::Between(b),
                        a,
                        i + 3,
                        format!("between {a} and {b}"),
                    )),
                    _ => None,
                }
            }
            _ => None,
        };
        if let Some((op, value, last, phrase)) = hit {
            out.push(RangeMention { op, value, phrase });
            i = last + 1;
        } else {
            i += 1;
        }
    }
    out
}

fn looks_like_year(v: f64) -> bool {
    v.fract() == 0.0 && (1900.0..=2100.0).contains(&v)
}

fn is_time_hinted(col: &ColumnKnowledge) -> bool {
    col.semantics
        .time_granularity_hint
        .as_deref()
        .is_some_and(|h| !h.trim().is_empty())
}

fn describe(table: &TableKnowledge, col: &ColumnKnowledge) -> String {
    if col.semantics.description.is_empty() {
        format!("values of {}.{}", table.name, col.name)
    } else {
        col.semantics.description.clone()
    }
}

fn condition_value(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        crate::values::format_real(v)
    }
}

fn constraint_stub(table: &TableKnowledge, col: &ColumnKnowledge, m: &RangeMention) -> String {
    let desc = describe(table, col);
    let name = &col.name;
    let value = condition_value(m.value);
    let integral = m.value.fract() == 0.0;
    match &m.op {
        ConstraintOp::Gt if is_time_hinted(col) && integral => format!(
            "Column {name} denotes {desc}; records with {name} > {value} correspond to {} and later.",
            m.value as i64 + 1
        ),
        ConstraintOp::Ge if is_time_hinted(col) && integral => format!(
            "Column {name} denotes {desc}; records with {name} >= {value} correspond to {value} and later."
        ),
        ConstraintOp::Lt if is_time_hinted(col) && integral => format!(
            "Column {name} denotes {desc}; records with {name} < {value} correspond to {} and earlier.",
            m.value as i64 - 1
        ),
        ConstraintOp::Le if is_time_hinted(col) && integral => format!(
            "Column {name} denotes {desc}; records with {name} <= {value} correspond to {value} and earlier."
        ),
        ConstraintOp::Between(hi) => format!(
            "Column {name} denotes {desc}; records satisfy {name} between {value} and {}.",
            condition_value(*hi)
        ),
        op => {
            let sym = match op {
                ConstraintOp::Gt => ">",
                ConstraintOp::Ge => ">=",
                ConstraintOp::Lt => "<",
                ConstraintOp::Le => "<=",
                ConstraintOp::Between(_) => unreachable!(),
            };
            match &col.profile.numeric_stats {
                Some(stats) => format!(
                    "Column {name} denotes {desc}; the condition {name} {sym} {value} applies \
                     (observed values range {} to {}).",
                    crate::values::format_real(stats.min),
                    crate::values::format_real(stats.max)
                ),
                None => format!(
                    "Column {name} denotes {desc}; the condition {name} {sym} {value} applies."
                ),
            }
        }
    }
}

/// Constraint sentences for time/range/category mentions grounded in a
/// column. The gateway may rephrase the stub; on failure the stub itself is
/// the sentence. Unmatched mentions produce warnings, never items.
pub fn gen_semantic_constraint(
    question: &str,
    sk: &SchemaKnowledge,
    gateway: &dyn LlmGateway,
) -> (Vec<EvidenceItem>, Vec<String>) {
    let tokens = question_tokens(question);
    let mut items = Vec::new();
    let mut warnings = Vec::new();

    for mention in range_mentions(&tokens) {
        // A column matches by explicit mention, or any time-hinted column
        // matches a year-like value.
        let explicit = columns_with(sk, |_, c| {
            column_mentioned(&tokens, c)
                && (c.profile.numeric_stats.is_some() || is_time_hinted(c))
        });
        let matched = if !explicit.is_empty() {
            explicit
        } else if looks_like_year(mention.value) {
            columns_with(sk, |_, c| is_time_hinted(c))
        } else {
            Vec::new()
        };
        if matched.is_empty() {
            warnings.push(format!(
                "range mention `{}` matched no column",
                mention.phrase
            ));
            continue;
        }
        for (table, col) in matched {
            let stub = constraint_stub(table, col, &mention);
            let request = ChatRequest::new(CONSTRAINT_SYSTEM_PROMPT, stub.clone());
            let text = match gateway.chat(&request) {
                Ok(resp) if !resp.text.trim().is_empty() => resp.text.trim().to_string(),
                _ => stub,
            };
            items.push(EvidenceItem::new(
                EvidenceKind::SemanticConstraint,
                text,
                vec![ColumnRef::new(&table.name, &col.name)],
                "semantic_constraint",
            ));
        }
    }

    // Category conditions: an enumeration column named in the question
    // together with one of its stored values or labels.
    for (table, col) in columns_with(sk, |_, c| c.profile.is_enumeration) {
        if !column_mentioned(&tokens, col) {
            continue;
        }
        let value_hit = col.profile.top_values.iter().find(|tv| {
            phrase_matches(&tokens, &tv.0.render())
        });
        let label_hit = col
            .semantics
            .enum_glossary
            .iter()
            .find(|(_, label)| phrase_matches(&tokens, label));
        let (raw, shown) = match (label_hit, value_hit) {
            (Some((raw, label)), _) => (raw.clone(), label.clone()),
            (None, Some(tv)) => (tv.0.render(), tv.0.render()),
            (None, None) => continue,
        };
        let text = format!(
            "Column {} denotes {}; '{shown}' is stored as {} = {raw}.",
            col.name,
            describe(table, col),
            col.name
        );
        items.push(EvidenceItem::new(
            EvidenceKind::SemanticConstraint,
            text,
            vec![ColumnRef::new(&table.name, &col.name)],
            "semantic_constraint",
        ));
    }

    (items, warnings)
}

// ---------------------------------------------------------------------------
// Numeric-template evidence
// ---------------------------------------------------------------------------

fn cue_hint(cue: &str) -> &'static str {
    match cue {
        "ratio" => "compute the ratio as CAST(matching count AS REAL) / total count",
        "percentage" => "compute the share and multiply by 100",
        "average" => "aggregate with AVG",
        "total" => "aggregate with SUM",
        "difference" => "subtract one aggregate from the other",
        "rank" | "top" => "order the aggregate and limit, or use a window function",
        _ => "aggregate per group and combine",
    }
}

/// One item naming the detected arithmetic cue, the candidate numeric
/// columns, and their profiled ranges.
pub fn gen_numeric_template(question: &str, sk: &SchemaKnowledge) -> Vec<EvidenceItem> {
    let tokens = question_tokens(question);
    let Some(cue) = tokens
        .iter()
        .find(|t| NUMERIC_CUES.contains(&t.as_str()))
        .cloned()
    else {
        return Vec::new();
    };
    let candidates = columns_with(sk, |_, c| {
        c.profile.numeric_stats.is_some() && column_mentioned(&tokens, c)
    });
    if candidates.is_empty() {
        return Vec::new();
    }
    let mut described = Vec::new();
    let mut referenced = Vec::new();
    for (table, col) in &candidates {
        let stats = col.profile.numeric_stats.as_ref().expect("numeric candidate");
        described.push(format!(
            "{}.{} (range {} to {}, quartiles {} / {} / {})",
            table.name,
            col.name,
            crate::values::format_real(stats.min),
            crate::values::format_real(stats.max),
            crate::values::format_real(stats.q25),
            crate::values::format_real(stats.q50),
            crate::values::format_real(stats.q75),
        ));
        referenced.push(ColumnRef::new(&table.name, &col.name));
    }
    let text = format!(
        "Numeric reasoning ({cue}): {}; candidate columns: {}.",
        cue_hint(&cue),
        described.join("; ")
    );
    vec![EvidenceItem::new(
        EvidenceKind::NumericTemplate,
        text,
        referenced,
        "numeric_template",
    )]
}

// ---------------------------------------------------------------------------
// Enum-dictionary evidence
// ---------------------------------------------------------------------------

/// Full value dictionaries for enumeration columns whose values or glossary
/// labels overlap the question.
pub fn gen_enum_dictionary(question: &str, sk: &SchemaKnowledge) -> Vec<EvidenceItem> {
    let tokens = question_tokens(question);
    let mut items = Vec::new();
    for (table, col) in columns_with(sk, |_, c| c.profile.is_enumeration) {
        let glossary = &col.semantics.enum_glossary;
        let overlap = glossary
            .iter()
            .any(|(raw, label)| phrase_matches(&tokens, label) || phrase_matches(&tokens, raw))
            || col
                .profile
                .top_values
                .iter()
                .any(|tv| phrase_matches(&tokens, &tv.0.render()));
        if !overlap {
            continue;
        }
        let text = if glossary.is_empty() {
            let values: Vec<String> =
                col.profile.top_values.iter().map(|tv| tv.0.render()).collect();
            format!(
                "Column {}.{} takes values: {}.",
                table.name,
                col.name,
                values.join(", ")
            )
        } else {
            let pairs: Vec<String> = glossary
                .iter()
                .map(|(raw, label)| format!("{raw} = {label}"))
                .collect();
            format!(
                "Column {}.{} enumerates coded values: {}.",
                table.name,
                col.name,
                pairs.join("; ")
            )
        };
        items.push(EvidenceItem::new(
            EvidenceKind::EnumDictionary,
            text,
            vec![ColumnRef::new(&table.name, &col.name)],
            "enum_dictionary",
        ));
    }
    items
}

// ---------------------------------------------------------------------------
// Alias rewriting
// ---------------------------------------------------------------------------

struct AliasTarget {
    alias_tokens: Vec<String>,
    alias: String,
    table: String,
    column: String,
}

/// Longest-match replacement of alias phrases by canonical column names.
/// Returns the rewritten question plus one mapping item per substituted
/// (alias, column) pair; the original question stays available upstream.
pub fn gen_alias_rewrite(question: &str, sk: &SchemaKnowledge) -> (String, Vec<EvidenceItem>) {
    let mut targets: Vec<AliasTarget> = Vec::new();
    for table in &sk.tables {
        for col in &table.columns {
            let name_phrase = identifier_phrase(&col.name);
            for alias in &col.semantics.aliases {
                let alias_tokens = question_tokens(alias);
                if alias_tokens.is_empty() || alias_tokens.join(" ") == name_phrase {
                    continue;
                }
                targets.push(AliasTarget {
                    alias_tokens,
                    alias: alias.clone(),
                    table: table.name.clone(),
                    column: col.name.clone(),
                });
            }
        }
    }
    // Longest alias first so overlapping aliases resolve to the longer one.
    targets.sort_by(|a, b| {
        b.alias_tokens
            .len()
            .cmp(&a.alias_tokens.len())
            .then_with(|| a.alias.cmp(&b.alias))
    });

    let spans = token_spans(question);
    let tokens: Vec<String> = spans.iter().map(|(t, _)| t.clone()).collect();
    let mut rewritten = String::new();
    let mut substituted: Vec<(String, String, String)> = Vec::new();
    let mut cursor = 0usize; // byte position in the original question
    let mut i = 0usize;
    while i < tokens.len() {
        let hit = targets.iter().find(|t| {
            i + t.alias_tokens.len() <= tokens.len()
                && tokens[i..i + t.alias_tokens.len()] == t.alias_tokens[..]
        });
        match hit {
            Some(target) => {
                let start = spans[i].1.start;
                let end = spans[i + target.alias_tokens.len() - 1].1.end;
                rewritten.push_str(&question[cursor..start]);
                rewritten.push_str(&target.column);
                cursor = end;
                if !substituted.iter().any(|(a, t, c)| {
                    a == &target.alias && t == &target.table && c == &target.column
                }) {
                    substituted.push((
                        target.alias.clone(),
                        target.table.clone(),
                        target.column.clone(),
                    ));
                }
                i += target.alias_tokens.len();
            }
            None => {
                i += 1;
            }
        }
    }
    rewritten.push_str(&question[cursor..]);

    let items = substituted
        .into_iter()
        .map(|(alias, table, column)| {
            EvidenceItem::new(
                EvidenceKind::AliasMapping,
                format!("'{alias}' refers to column {table}.{column}."),
                vec![ColumnRef::new(&table, &column)],
                "alias_rewrite",
            )
        })
        .collect();
    (rewritten, items)
}

/// Lowercased word tokens with their byte ranges in the original text.
fn token_spans(text: &str) -> Vec<(String, std::ops::Range<usize>)> {
    let mut spans = Vec::new();
    let mut start: Option<usize> = None;
    for (idx, ch) in text.char_indices() {
        if ch.is_alphanumeric() || ch == '%' {
            start.get_or_insert(idx);
        } else if let Some(s) = start.take() {
            spans.push((text[s..idx].to_lowercase(), s..idx));
        }
    }
    if let Some(s) = start {
        spans.push((text[s..].to_lowercase(), s..text.len()));
    }
    spans
}

// ---------------------------------------------------------------------------
// Logical-completion evidence
// ---------------------------------------------------------------------------

fn skeleton_features(skeleton: &str) -> Vec<&'static str> {
    let mut features = Vec::new();
    if skeleton.contains("( SELECT") {
        features.push("a subquery");
    }
    if skeleton.contains("RANK ( ) OVER") {
        features.push("a window function RANK() for ranking");
    } else if skeleton.contains("OVER") {
        features.push("a window function");
    }
    if skeleton.contains("GROUP BY") {
        features.push("grouping");
    }
    if skeleton.contains("ORDER BY") && skeleton.contains("LIMIT") {
        features.push("order-and-limit selection");
    }
    if skeleton.contains("JOIN") {
        features.push("a join");
    }
    features
}

/// Retrieve the top-k similar cases and summarize the best match's solution
/// skeleton. The retrieved entries travel with the bundle as the few-shot
/// block.
pub fn gen_logical_completion(
    lib: &FewShotLibrary,
    question: &str,
    k: usize,
    db_id: Option<&str>,
) -> (Vec<EvidenceItem>, Vec<FewShotEntry>) {
    let hits = retrieve_for_db(lib, question, k, db_id);
    let entries: Vec<FewShotEntry> = hits
        .iter()
        .filter_map(|h| crate::fewshot::entry_by_id(lib, h.id).cloned())
        .collect();
    let mut items = Vec::new();
    if let Some(best) = hits.first().filter(|h| h.score > 0.0) {
        if let Some(entry) = crate::fewshot::entry_by_id(lib, best.id) {
            let features = skeleton_features(&entry.sql_skeleton);
            let pattern = if features.is_empty() {
                "a direct single-block query".to_string()
            } else {
                features.join(", ")
            };
            let text = format!(
                "A similar solved case ('{}') uses {pattern}. Solution skeleton: {}",
                entry.normalized_question, entry.sql_skeleton
            );
            items.push(EvidenceItem::new(
                EvidenceKind::LogicalCompletion,
                text,
                Vec::new(),
                "logical_completion",
            ));
        }
    }
    (items, entries)
}

// ---------------------------------------------------------------------------
// Domain-knowledge provider (pluggable; default returns nothing)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct DomainDoc {
    pub text: String,
    pub referenced: Vec<ColumnRef>,
}

/// External domain-knowledge source consulted when routing asks for domain
/// evidence. The default provider returns no documents.
pub trait DomainProvider: Send + Sync {
    fn retrieve(&self, question: &str, sk: &SchemaKnowledge) -> Vec<DomainDoc>;
}

pub struct NoopDomainProvider;

impl DomainProvider for NoopDomainProvider {
    fn retrieve(&self, _question: &str, _sk: &SchemaKnowledge) -> Vec<DomainDoc> {
        Vec::new()
    }
}

// ---------------------------------------------------------------------------
// Orchestration
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct EvidenceBuild {
    pub bundle: EvidenceBundle,
    pub routing: RoutingDecision,
    /// Names of the generators that actually ran, for gate checks.
    pub invoked: Vec<&'static str>,
    pub warnings: Vec<String>,
}

/// Construct the evidence bundle for one question. Total: degraded
/// sub-generators contribute nothing but never abort the build.
pub fn build_evidence(
    question: &str,
    sk: &SchemaKnowledge,
    lib: &FewShotLibrary,
    gateway: &dyn LlmGateway,
    tau: f64,
    k: usize,
) -> EvidenceBundle {
    build_evidence_full(question, sk, lib, gateway, &NoopDomainProvider, tau, k).bundle
}

pub fn build_evidence_full(
    question: &str,
    sk: &SchemaKnowledge,
    lib: &FewShotLibrary,
    gateway: &dyn LlmGateway,
    provider: &dyn DomainProvider,
    tau: f64,
    k: usize,
) -> EvidenceBuild {
    let routing = route(question, sk, gateway, tau);
    let mut invoked = Vec::new();
    let mut warnings = Vec::new();
    let mut items: Vec<EvidenceItem> = Vec::new();

    // Alias rewriting first: later generators match on the rewritten text.
    let (working_question, rewritten) = if routing.requires(EvidenceType::SynonymAlias) {
        invoked.push("alias_rewrite");
        let (rewritten, alias_items) = gen_alias_rewrite(question, sk);
        items.extend(alias_items);
        let changed = rewritten != question;
        (
            rewritten.clone(),
            if changed { Some(rewritten) } else { None },
        )
    } else {
        (question.to_string(), None)
    };

    let mentioned = mentioned_tables(&working_question, sk);
    if mentioned.len() >= 2 {
        invoked.push("schema_consistency");
        if let Ok(search) = find_join_paths(sk, &mentioned) {
            items.extend(gen_schema_consistency(&search.paths));
            for (a, b) in search.unreachable {
                warnings.push(format!("no join path between `{a}` and `{b}`"));
            }
        }
    }

    if routing.requires(EvidenceType::EnumValue) {
        invoked.push("enum_dictionary");
        // Matched against the original question: glossary labels are surface
        // phrases that alias rewriting may have replaced.
        items.extend(gen_enum_dictionary(question, sk));
    }

    if routing.requires(EvidenceType::NumericReasoning) {
        invoked.push("numeric_template");
        items.extend(gen_numeric_template(&working_question, sk));
    }

    invoked.push("semantic_constraint");
    let (constraint_items, constraint_warnings) =
        gen_semantic_constraint(&working_question, sk, gateway);
    items.extend(constraint_items);
    warnings.extend(constraint_warnings);

    if routing.requires(EvidenceType::DomainKnowledge) {
        invoked.push("domain_provider");
        for doc in provider.retrieve(&working_question, sk) {
            let item = EvidenceItem::new(
                EvidenceKind::DomainNote,
                doc.text,
                doc.referenced,
                "domain_provider",
            );
            if item.grounded_in(sk) {
                items.push(item);
            } else {
                warnings.push("domain note dropped: references unknown schema elements".into());
            }
        }
    }

    let mut fewshot = Vec::new();
    if !lib.entries.is_empty() {
        invoked.push("logical_completion");
        let (completion_items, entries) =
            gen_logical_completion(lib, &working_question, k, Some(&sk.db_id));
        items.extend(completion_items);
        fewshot = entries;
    }

    // Canonical kind order; generation order is stable within a kind.
    items.sort_by_key(|item| {
        KIND_ORDER
            .iter()
            .position(|k| *k == item.kind)
            .expect("kind listed in canonical order")
    });
    debug_assert!(items.iter().all(|i| i.grounded_in(sk)));
    items.retain(|i| i.grounded_in(sk));

    EvidenceBuild {
        bundle: EvidenceBundle {
            question: question.to_string(),
            rewritten_question: rewritten,
            items,
            fewshot,
        },
        routing,
        invoked,
        warnings,
    }
}

// ---------------------------------------------------------------------------
// Prompt assembly and SQL generation
// ---------------------------------------------------------------------------

fn schema_section(question: &str, sk: &SchemaKnowledge) -> String {
    let mentioned = mentioned_tables(question, sk);
    let chosen: Vec<&TableKnowledge> = if mentioned.is_empty() {
        sk.tables.iter().collect()
    } else {
        sk.tables
            .iter()
            .filter(|t| mentioned.contains(&t.name))
            .collect()
    };
    chosen
        .iter()
        .map(|t| format!("{};", t.simplified_ddl))
        .collect::<Vec<_>>()
        .join("\n")
}

fn prompt_from_parts(
    question: &str,
    sk: &SchemaKnowledge,
    evidence_section: Option<String>,
    fewshot_block: Option<String>,
) -> String {
    let mut out = String::new();
    out.push_str(PROMPT_TASK_INSTRUCTION.trim_end());
    out.push_str("\n\nSchema:\n");
    out.push_str(&schema_section(question, sk));
    out.push('\n');
    if let Some(evidence) = evidence_section {
        out.push_str("\nEvidence:\n");
        out.push_str(&evidence);
        out.push('\n');
    }
    if let Some(block) = fewshot_block {
        if !block.is_empty() {
            out.push_str("\nExamples:\n");
            out.push_str(&block);
            out.push('\n');
        }
    }
    out.push_str(&format!("\nQuestion: {question}\nSQL:"));
    out
}

/// Fixed-template prompt: instruction, simplified DDL of the tables the
/// question mentions (all tables when none), the evidence items one per
/// line, the few-shot block, then the question.
pub fn assemble_prompt(question: &str, sk: &SchemaKnowledge, bundle: &EvidenceBundle) -> String {
    let evidence = if bundle.items.is_empty() {
        None
    } else {
        Some(
            bundle
                .items
                .iter()
                .map(|i| i.text.clone())
                .collect::<Vec<_>>()
                .join("\n"),
        )
    };
    let fewshot_refs: Vec<&FewShotEntry> = bundle.fewshot.iter().collect();
    let block = if fewshot_refs.is_empty() {
        None
    } else {
        Some(render_fewshot_block(&fewshot_refs))
    };
    prompt_from_parts(question, sk, evidence, block)
}

/// Benchmark prompt with a verbatim evidence string (gold evidence), or no
/// evidence section at all.
pub fn assemble_prompt_gold(
    question: &str,
    sk: &SchemaKnowledge,
    gold_evidence: Option<&str>,
) -> String {
    prompt_from_parts(
        question,
        sk,
        gold_evidence.map(str::to_string),
        None,
    )
}

/// Extract the SQL statement from a completion: first fenced code block,
/// else the first SELECT/WITH span up to a semicolon or end of text.
pub fn extract_sql(text: &str) -> Option<String> {
    let parts: Vec<&str> = text.split("```").collect();
    let mut i = 1;
    while i < parts.len() {
        let segment = parts[i];
        let body = match segment.find('\n') {
            Some(nl) => {
                let tag = segment[..nl].trim();
                if tag.is_empty()
                    || tag.eq_ignore_ascii_case("sql")
                    || tag.eq_ignore_ascii_case("sqlite")
                {
                    segment[nl + 1..].trim()
                } else {
                    segment.trim()
                }
            }
            None => segment.trim(),
        };
        if !body.is_empty() {
            return Some(body.to_string());
        }
        i += 2;
    }
    first_statement_span(text)
}

fn first_statement_span(text: &str) -> Option<String> {
    // ASCII lowering keeps byte offsets aligned with the original text.
    let lower = text.to_ascii_lowercase();
    let mut best: Option<usize> = None;
    for needle in ["select", "with"] {
        let mut from = 0;
        while let Some(pos) = lower[from..].find(needle) {
            let at = from + pos;
            let before_ok = at == 0
                || !lower[..at]
                    .chars()
                    .next_back()
                    .is_some_and(|c| c.is_alphanumeric() || c == '_');
            let after = at + needle.len();
            let after_ok = !lower[after..]
                .chars()
                .next()
                .is_some_and(|c| c.is_alphanumeric() || c == '_');
            if before_ok && after_ok {
                best = Some(best.map_or(at, |b| b.min(at)));
                break;
            }
            from = after;
        }
    }
    let start = best?;
    let rest = &text[start..];
    let end = rest.find(';').map(|p| p + 1).unwrap_or(rest.len());
    let span = rest[..end].trim();
    if span.is_empty() {
        None
    } else {
        Some(span.to_string())
    }
}

/// Send the assembled prompt and pull the SQL out of the completion. The
/// SQL is returned unvalidated; execution decides its fate.
pub fn generate_sql(gateway: &dyn LlmGateway, prompt: &str) -> Result<String, GenerateError> {
    let request = ChatRequest::new(SQL_SYSTEM_PROMPT, prompt);
    let response = gateway.chat(&request)?;
    extract_sql(&response.text).ok_or(GenerateError::NoSqlFound)
}

#[cfg(test)]
mod tests;

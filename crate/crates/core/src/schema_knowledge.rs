//! Database-side cached knowledge: structure, per-column profiles, induced
//! semantics, and the foreign-key graph, with a canonical JSON persistence
//! format.
//!
//! Values are immutable after construction and safe to share across threads.
//! `save` is a pure function of the value: stable key order, shortest
//! round-trip float rendering, RFC 3339 timestamps. One file per database,
//! named `<db_id>.knowledge.json`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::values::SqlValue;

/// A column is flagged as an enumeration when its sample has at most this
/// many distinct non-null values...
pub const ENUMERATION_DISTINCT_MAX: usize = 20;
/// ...and the stored top values cover at least this fraction of non-null
/// samples.
pub const ENUMERATION_COVERAGE_MIN: f64 = 0.95;
/// Inferred foreign-key edges must reach this name-similarity score.
pub const INFERRED_FK_MIN_SIMILARITY: f64 = 0.85;
/// At most this many (value, frequency) pairs are kept per column.
pub const TOP_VALUES_CAP: usize = 20;

#[derive(Debug, thiserror::Error)]
pub enum KnowledgeError {
    #[error("failed to {action} knowledge file {path}: {source}")]
    Io {
        action: &'static str,
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed knowledge file {path}: {message}")]
    Malformed { path: String, message: String },
    #[error("knowledge invariant violated: {0}")]
    Invariant(String),
}

/// RFC 3339 UTC timestamp, stored verbatim so files round-trip byte-exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Timestamp(String);

impl Timestamp {
    pub fn parse(s: &str) -> Result<Self, KnowledgeError> {
        chrono::DateTime::parse_from_rfc3339(s).map_err(|e| {
            KnowledgeError::Invariant(format!("created_at `{s}` is not RFC 3339: {e}"))
        })?;
        Ok(Timestamp(s.to_string()))
    }

    /// Fixed origin timestamp; the default for reproducible mining runs.
    pub fn epoch() -> Self {
        Timestamp("1970-01-01T00:00:00Z".to_string())
    }

    pub fn now() -> Self {
        let now = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
        Timestamp(now)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        Timestamp::parse(&raw).map_err(serde::de::Error::custom)
    }
}

/// One endpoint of a foreign-key edge.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ColumnRef {
    pub table: String,
    pub column: String,
}

impl ColumnRef {
    pub fn new(table: impl Into<String>, column: impl Into<String>) -> Self {
        ColumnRef {
            table: table.into(),
            column: column.into(),
        }
    }
}

impl std::fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}.{}", self.table, self.column)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeSource {
    Declared,
    Inferred,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForeignKeyEdge {
    pub from: ColumnRef,
    pub to: ColumnRef,
    pub source: EdgeSource,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub similarity: Option<f64>,
}

impl ForeignKeyEdge {
    pub fn declared(from: ColumnRef, to: ColumnRef) -> Self {
        ForeignKeyEdge {
            from,
            to,
            source: EdgeSource::Declared,
            similarity: None,
        }
    }

    pub fn inferred(from: ColumnRef, to: ColumnRef, similarity: f64) -> Self {
        ForeignKeyEdge {
            from,
            to,
            source: EdgeSource::Inferred,
            similarity: Some(similarity),
        }
    }

    /// Both endpoints as an unordered pair key.
    pub fn endpoints(&self) -> (&ColumnRef, &ColumnRef) {
        (&self.from, &self.to)
    }
}

/// Aggregate numeric statistics over the parseable values of a sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub variance: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
}

/// A sampled value together with its within-sample frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopValue(pub SqlValue, pub usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnProfile {
    pub sample_size: usize,
    pub null_fraction: f64,
    pub distinct_count_in_sample: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub numeric_stats: Option<NumericStats>,
    pub top_values: Vec<TopValue>,
    pub is_enumeration: bool,
    pub sample_values: Vec<SqlValue>,
    /// Set when the sample mixes storage classes (e.g. text in a numeric
    /// column); numeric stats then cover only the parseable values.
    pub mixed_types: bool,
}

impl ColumnProfile {
    /// Profile of a column with no sampled values.
    pub fn empty() -> Self {
        ColumnProfile {
            sample_size: 0,
            null_fraction: 0.0,
            distinct_count_in_sample: 0,
            numeric_stats: None,
            top_values: Vec::new(),
            is_enumeration: false,
            sample_values: Vec::new(),
            mixed_types: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ColumnSemantics {
    pub description: String,
    pub aliases: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub unit_hint: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub time_granularity_hint: Option<String>,
    pub enum_glossary: BTreeMap<String, String>,
}

impl ColumnSemantics {
    pub fn is_empty(&self) -> bool {
        self.description.is_empty()
            && self.aliases.is_empty()
            && self.unit_hint.is_none()
            && self.time_granularity_hint.is_none()
            && self.enum_glossary.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnKnowledge {
    pub name: String,
    pub declared_type: String,
    pub profile: ColumnProfile,
    pub semantics: ColumnSemantics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableKnowledge {
    pub name: String,
    pub simplified_ddl: String,
    pub row_count: u64,
    pub columns: Vec<ColumnKnowledge>,
    pub sample_rows: Vec<Vec<SqlValue>>,
}

impl TableKnowledge {
    pub fn column(&self, name: &str) -> Option<&ColumnKnowledge> {
        self.columns.iter().find(|c| c.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaKnowledge {
    pub db_id: String,
    pub tool_version: String,
    pub created_at: Timestamp,
    pub tables: Vec<TableKnowledge>,
    pub fk_edges: Vec<ForeignKeyEdge>,
}

impl SchemaKnowledge {
    pub fn new(db_id: impl Into<String>, created_at: Timestamp) -> Self {
        SchemaKnowledge {
            db_id: db_id.into(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            created_at,
            tables: Vec::new(),
            fk_edges: Vec::new(),
        }
    }

    pub fn table(&self, name: &str) -> Option<&TableKnowledge> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn has_column(&self, r: &ColumnRef) -> bool {
        self.table(&r.table)
            .map_or(false, |t| t.column(&r.column).is_some())
    }

    /// Check every type invariant; run on construction and on load.
    pub fn validate(&self) -> Result<(), KnowledgeError> {
        let mut names = BTreeSet::new();
        for table in &self.tables {
            if !names.insert(table.name.as_str()) {
                return Err(KnowledgeError::Invariant(format!(
                    "duplicate table name `{}`",
                    table.name
                )));
            }
            let mut cols = BTreeSet::new();
            for col in &table.columns {
                if !cols.insert(col.name.as_str()) {
                    return Err(KnowledgeError::Invariant(format!(
                        "duplicate column `{}` in table `{}`",
                        col.name, table.name
                    )));
                }
                validate_profile(&col.profile, &table.name, &col.name)?;
                validate_semantics(col, &table.name)?;
            }
        }
        for edge in &self.fk_edges {
            for end in [&edge.from, &edge.to] {
                if !self.has_column(end) {
                    return Err(KnowledgeError::Invariant(format!(
                        "foreign-key edge references missing column {end}"
                    )));
                }
            }
            match (edge.source, edge.similarity) {
                (EdgeSource::Declared, Some(_)) => {
                    return Err(KnowledgeError::Invariant(format!(
                        "declared edge {} -> {} must not carry a similarity",
                        edge.from, edge.to
                    )));
                }
                (EdgeSource::Inferred, None) => {
                    return Err(KnowledgeError::Invariant(format!(
                        "inferred edge {} -> {} is missing its similarity",
                        edge.from, edge.to
                    )));
                }
                (EdgeSource::Inferred, Some(s)) if s < INFERRED_FK_MIN_SIMILARITY => {
                    return Err(KnowledgeError::Invariant(format!(
                        "inferred edge {} -> {} has similarity {s} below threshold",
                        edge.from, edge.to
                    )));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

fn validate_profile(p: &ColumnProfile, table: &str, col: &str) -> Result<(), KnowledgeError> {
    let at = format!("{table}.{col}");
    if !(0.0..=1.0).contains(&p.null_fraction) {
        return Err(KnowledgeError::Invariant(format!(
            "{at}: null_fraction {} outside [0,1]",
            p.null_fraction
        )));
    }
    if p.distinct_count_in_sample > p.sample_size {
        return Err(KnowledgeError::Invariant(format!(
            "{at}: distinct count {} exceeds sample size {}",
            p.distinct_count_in_sample, p.sample_size
        )));
    }
    let top_total: usize = p.top_values.iter().map(|t| t.1).sum();
    if top_total > p.sample_size {
        return Err(KnowledgeError::Invariant(format!(
            "{at}: top-value frequencies sum to {top_total}, more than sample size {}",
            p.sample_size
        )));
    }
    if let Some(stats) = &p.numeric_stats {
        let ordered = stats.min <= stats.q25
            && stats.q25 <= stats.q50
            && stats.q50 <= stats.q75
            && stats.q75 <= stats.max;
        if !ordered {
            return Err(KnowledgeError::Invariant(format!(
                "{at}: numeric stats out of order (min {} q25 {} q50 {} q75 {} max {})",
                stats.min, stats.q25, stats.q50, stats.q75, stats.max
            )));
        }
    }
    if p.is_enumeration && p.distinct_count_in_sample > ENUMERATION_DISTINCT_MAX {
        return Err(KnowledgeError::Invariant(format!(
            "{at}: flagged as enumeration with {} distinct values",
            p.distinct_count_in_sample
        )));
    }
    Ok(())
}

fn validate_semantics(col: &ColumnKnowledge, table: &str) -> Result<(), KnowledgeError> {
    if col.semantics.enum_glossary.is_empty() {
        return Ok(());
    }
    let observed: BTreeSet<String> = col
        .profile
        .sample_values
        .iter()
        .filter(|v| !v.is_null())
        .map(SqlValue::render)
        .collect();
    for key in col.semantics.enum_glossary.keys() {
        if !observed.contains(key) {
            return Err(KnowledgeError::Invariant(format!(
                "{table}.{}: glossary key `{key}` never observed in samples",
                col.name
            )));
        }
    }
    Ok(())
}

/// Canonical bytes for a knowledge value. Pure: identical values always
/// produce identical bytes.
pub fn to_canonical_bytes(sk: &SchemaKnowledge) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(sk).expect("knowledge serializes");
    bytes.push(b'\n');
    bytes
}

pub fn save(sk: &SchemaKnowledge, path: &Path) -> Result<(), KnowledgeError> {
    sk.validate()?;
    fs::write(path, to_canonical_bytes(sk)).map_err(|source| KnowledgeError::Io {
        action: "write",
        path: path.display().to_string(),
        source,
    })
}

pub fn load(path: &Path) -> Result<SchemaKnowledge, KnowledgeError> {
    let raw = fs::read_to_string(path).map_err(|source| KnowledgeError::Io {
        action: "read",
        path: path.display().to_string(),
        source,
    })?;
    let sk: SchemaKnowledge =
        serde_json::from_str(&raw).map_err(|e| KnowledgeError::Malformed {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
    sk.validate()?;
    Ok(sk)
}

/// Conventional file name for a database's knowledge file.
pub fn knowledge_file_name(db_id: &str) -> String {
    format!("{db_id}.knowledge.json")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> SchemaKnowledge {
        let mut sk = SchemaKnowledge::new("shop", Timestamp::epoch());
        sk.tables.push(TableKnowledge {
            name: "customer".into(),
            simplified_ddl: "CREATE TABLE customer (customer_id INTEGER PRIMARY KEY, name TEXT)"
                .into(),
            row_count: 2,
            columns: vec![
                ColumnKnowledge {
                    name: "customer_id".into(),
                    declared_type: "INTEGER".into(),
                    profile: ColumnProfile {
                        sample_size: 2,
                        null_fraction: 0.0,
                        distinct_count_in_sample: 2,
                        numeric_stats: Some(NumericStats {
                            min: 1.0,
                            max: 2.0,
                            mean: 1.5,
                            variance: 0.25,
                            q25: 1.0,
                            q50: 1.0,
                            q75: 2.0,
                        }),
                        top_values: vec![
                            TopValue(SqlValue::Integer(1), 1),
                            TopValue(SqlValue::Integer(2), 1),
                        ],
                        is_enumeration: true,
                        sample_values: vec![SqlValue::Integer(1), SqlValue::Integer(2)],
                        mixed_types: false,
                    },
                    semantics: ColumnSemantics::default(),
                },
                ColumnKnowledge {
                    name: "name".into(),
                    declared_type: "TEXT".into(),
                    profile: ColumnProfile::empty(),
                    semantics: ColumnSemantics::default(),
                },
            ],
            sample_rows: vec![vec![SqlValue::Integer(1), SqlValue::Text("Ada".into())]],
        });
        sk.tables.push(TableKnowledge {
            name: "order".into(),
            simplified_ddl: "CREATE TABLE order (order_id INTEGER, customer_id INTEGER)".into(),
            row_count: 0,
            columns: vec![
                ColumnKnowledge {
                    name: "order_id".into(),
                    declared_type: "INTEGER".into(),
                    profile: ColumnProfile::empty(),
                    semantics: ColumnSemantics::default(),
                },
                ColumnKnowledge {
                    name: "customer_id".into(),
                    declared_type: "INTEGER".into(),
                    profile: ColumnProfile::empty(),
                    semantics: ColumnSemantics::default(),
                },
            ],
            sample_rows: Vec::new(),
        });
        sk.fk_edges.push(ForeignKeyEdge::declared(
            ColumnRef::new("order", "customer_id"),
            ColumnRef::new("customer", "customer_id"),
        ));
        sk
    }

    #[test]
    fn empty_knowledge_round_trips() {
        let sk = SchemaKnowledge::new("x", Timestamp::epoch());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(knowledge_file_name("x"));
        save(&sk, &path).unwrap();
        assert_eq!(load(&path).unwrap(), sk);
    }

    #[test]
    fn save_is_deterministic() {
        let sk = fixture();
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.knowledge.json");
        let b = dir.path().join("b.knowledge.json");
        save(&sk, &a).unwrap();
        save(&sk, &b).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    }

    #[test]
    fn declared_fk_survives_round_trip() {
        let sk = fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("shop.knowledge.json");
        save(&sk, &path).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(loaded.tables.len(), 2);
        assert_eq!(loaded.fk_edges.len(), 1);
        assert_eq!(loaded.fk_edges[0].source, EdgeSource::Declared);
        assert_eq!(loaded.fk_edges[0].similarity, None);
        assert_eq!(loaded, sk);
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let sk = fixture();
        let dir = tempfile::tempdir().unwrap();
        let first = dir.path().join("first.json");
        let second = dir.path().join("second.json");
        save(&sk, &first).unwrap();
        let loaded = load(&first).unwrap();
        save(&loaded, &second).unwrap();
        assert_eq!(fs::read(&first).unwrap(), fs::read(&second).unwrap());
    }

    #[test]
    fn duplicate_table_names_rejected() {
        let mut sk = fixture();
        let dup = sk.tables[0].clone();
        sk.tables.push(dup);
        let err = sk.validate().unwrap_err();
        assert!(matches!(err, KnowledgeError::Invariant(_)));

        // The same file-level rejection on load.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dup.json");
        fs::write(&path, serde_json::to_vec_pretty(&sk).unwrap()).unwrap();
        assert!(matches!(
            load(&path),
            Err(KnowledgeError::Invariant(_))
        ));
    }

    #[test]
    fn dangling_fk_rejected_on_load() {
        let mut sk = fixture();
        sk.fk_edges.push(ForeignKeyEdge::declared(
            ColumnRef::new("order", "ghost"),
            ColumnRef::new("customer", "customer_id"),
        ));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dangling.json");
        fs::write(&path, serde_json::to_vec_pretty(&sk).unwrap()).unwrap();
        assert!(matches!(load(&path), Err(KnowledgeError::Invariant(_))));
    }

    #[test]
    fn inferred_edge_requires_similarity() {
        let mut sk = fixture();
        sk.fk_edges[0].source = EdgeSource::Inferred;
        assert!(sk.validate().is_err());
        sk.fk_edges[0].similarity = Some(0.9);
        assert!(sk.validate().is_ok());
        sk.fk_edges[0].similarity = Some(0.5);
        assert!(sk.validate().is_err());
    }

    #[test]
    fn glossary_keys_must_be_observed() {
        let mut sk = fixture();
        sk.tables[0].columns[0]
            .semantics
            .enum_glossary
            .insert("99".into(), "ghost label".into());
        assert!(sk.validate().is_err());
        sk.tables[0].columns[0].semantics.enum_glossary.clear();
        sk.tables[0].columns[0]
            .semantics
            .enum_glossary
            .insert("1".into(), "first".into());
        assert!(sk.validate().is_ok());
    }

    #[test]
    fn missing_file_reports_path() {
        let err = load(Path::new("/nonexistent/never.knowledge.json")).unwrap_err();
        match err {
            KnowledgeError::Io { path, .. } => assert!(path.contains("never.knowledge.json")),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn top_level_key_order_is_canonical() {
        let sk = SchemaKnowledge::new("x", Timestamp::epoch());
        let json = String::from_utf8(to_canonical_bytes(&sk)).unwrap();
        let db = json.find("\"db_id\"").unwrap();
        let ver = json.find("\"tool_version\"").unwrap();
        let created = json.find("\"created_at\"").unwrap();
        let tables = json.find("\"tables\"").unwrap();
        let edges = json.find("\"fk_edges\"").unwrap();
        assert!(db < ver && ver < created && created < tables && tables < edges);
    }
}

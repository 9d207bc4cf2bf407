//! Offline schema mining: connect to a SQLite database read-only, extract
//! structure, sample column values distinct-first, compute profiles, induce
//! per-column semantics through the LLM gateway, and infer join edges.
//!
//! With a scripted mock gateway and a fixed seed the whole pipeline is a
//! pure function of the database bytes. Gateway failures degrade to empty
//! semantics with a recorded warning; mining never aborts on them.

pub mod similarity;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rusqlite::{Connection, OpenFlags};
use serde::Deserialize;

use crate::llm_gateway::{extract_fenced_json, ChatRequest, LlmGateway};
use crate::schema_knowledge::{
    ColumnKnowledge, ColumnProfile, ColumnRef, ColumnSemantics, ForeignKeyEdge, NumericStats,
    SchemaKnowledge, TableKnowledge, Timestamp, TopValue, ENUMERATION_COVERAGE_MIN,
    ENUMERATION_DISTINCT_MAX, INFERRED_FK_MIN_SIMILARITY, TOP_VALUES_CAP,
};
use crate::values::SqlValue;

pub const SEMANTICS_SYSTEM_PROMPT: &str = include_str!("../../assets/semantics_system_v1.txt");

#[derive(Debug, thiserror::Error)]
pub enum ProfileError {
    #[error("cannot open database {path}: {source}")]
    Open {
        path: String,
        #[source]
        source: rusqlite::Error,
    },
    #[error("database query failed: {0}")]
    Sql(#[from] rusqlite::Error),
    #[error("unknown table `{0}`")]
    UnknownTable(String),
    #[error("unknown column `{table}`.`{column}`")]
    UnknownColumn { table: String, column: String },
    #[error(transparent)]
    Knowledge(#[from] crate::schema_knowledge::KnowledgeError),
}

/// Read-only handle to a SQLite database file. No write statement is ever
/// issued through it; the connection itself is opened read-only.
pub struct DatabaseHandle {
    path: PathBuf,
    conn: Connection,
}

impl DatabaseHandle {
    pub fn open(path: &Path) -> Result<Self, ProfileError> {
        let conn = Connection::open_with_flags(
            path,
            OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX,
        )
        .map_err(|source| ProfileError::Open {
            path: path.display().to_string(),
            source,
        })?;
        Ok(DatabaseHandle {
            path: path.to_path_buf(),
            conn,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Database identifier: the file stem.
    pub fn db_id(&self) -> String {
        self.path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "db".to_string())
    }
}

/// Per-column sampling parameters. The strategy is fixed: all distinct
/// values first (frequency-descending), then repeat occurrences of the most
/// frequent values until `n` slots are filled.
#[derive(Debug, Clone)]
pub struct SamplingSpec {
    pub n: usize,
    pub seed: u64,
    /// Full GROUP BY frequency counting up to this many rows; larger tables
    /// fall back to a seeded reservoir.
    pub group_by_row_limit: u64,
    pub reservoir_size: usize,
}

impl Default for SamplingSpec {
    fn default() -> Self {
        SamplingSpec {
            n: 200,
            seed: 0,
            group_by_row_limit: 1_000_000,
            reservoir_size: 100_000,
        }
    }
}

impl SamplingSpec {
    pub fn with_n(n: usize) -> Self {
        SamplingSpec {
            n: n.max(1),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct MiningOptions {
    pub sampling: SamplingSpec,
    pub sample_rows_cap: usize,
    /// Stamp recorded in the knowledge file. Defaults to the fixed epoch so
    /// mining stays a pure function of the database bytes.
    pub created_at: Timestamp,
}

impl Default for MiningOptions {
    fn default() -> Self {
        MiningOptions {
            sampling: SamplingSpec::default(),
            sample_rows_cap: 3,
            created_at: Timestamp::epoch(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RawColumn {
    pub name: String,
    pub declared_type: String,
    pub pk_position: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RawTable {
    pub name: String,
    pub columns: Vec<RawColumn>,
    pub row_count: u64,
    pub simplified_ddl: String,
    pub sample_rows: Vec<Vec<SqlValue>>,
}

#[derive(Debug, Clone)]
pub struct RawStructure {
    pub tables: Vec<RawTable>,
    pub declared_edges: Vec<ForeignKeyEdge>,
}

/// Identifier as it appears in rendered DDL: bare when it is a plain
/// non-keyword name, double-quoted otherwise.
fn quote_ident(name: &str) -> String {
    let plain = !name.is_empty()
        && name
            .chars()
            .enumerate()
            .all(|(i, c)| c == '_' || c.is_ascii_alphabetic() || (i > 0 && c.is_ascii_digit()))
        && !crate::fewshot::skeleton::is_sql_keyword(name);
    if plain {
        name.to_string()
    } else {
        format!("\"{}\"", name.replace('"', "\"\""))
    }
}

/// Identifier for SQL issued to the database: always quoted.
fn q(name: &str) -> String {
    format!("\"{}\"", name.replace('"', "\"\""))
}

/// Extract tables, columns, declared foreign keys, row counts, simplified
/// DDL, and up to `sample_rows_cap` example rows per table. Tables are
/// reported in name order.
pub fn extract_structure(
    db: &DatabaseHandle,
    sample_rows_cap: usize,
) -> Result<RawStructure, ProfileError> {
    let mut table_names: Vec<String> = {
        let mut stmt = db.conn.prepare(
            "SELECT name FROM sqlite_master WHERE type = 'table' AND name NOT LIKE 'sqlite_%'",
        )?;
        let rows = stmt.query_map([], |row| row.get::<_, String>(0))?;
        rows.collect::<Result<_, _>>()?
    };
    table_names.sort();

    let mut tables = Vec::new();
    let mut declared_edges = Vec::new();
    for name in &table_names {
        let columns = read_columns(&db.conn, name)?;
        let row_count: u64 = db.conn.query_row(
            &format!("SELECT COUNT(*) FROM {}", q(name)),
            [],
            |r| r.get(0),
        )?;
        let fks = read_foreign_keys(&db.conn, name, &table_names)?;
        let simplified_ddl = render_simplified_ddl(name, &columns, &fks);
        let sample_rows = read_sample_rows(&db.conn, name, sample_rows_cap)?;
        declared_edges.extend(fks);
        tables.push(RawTable {
            name: name.clone(),
            columns,
            row_count,
            simplified_ddl,
            sample_rows,
        });
    }
    Ok(RawStructure {
        tables,
        declared_edges,
    })
}

fn read_columns(conn: &Connection, table: &str) -> Result<Vec<RawColumn>, ProfileError> {
    let mut stmt = conn.prepare(&format!("PRAGMA table_info({})", q(table)))?;
    let rows = stmt.query_map([], |row| {
        let name: String = row.get("name")?;
        let declared_type: String = row.get("type")?;
        let pk: i64 = row.get("pk")?;
        Ok(RawColumn {
            name,
            declared_type: declared_type.trim().to_string(),
            pk_position: if pk > 0 { Some(pk as usize) } else { None },
        })
    })?;
    Ok(rows.collect::<Result<_, _>>()?)
}

fn read_foreign_keys(
    conn: &Connection,
    table: &str,
    known_tables: &[String],
) -> Result<Vec<ForeignKeyEdge>, ProfileError> {
    let mut stmt = conn.prepare(&format!("PRAGMA foreign_key_list({})", q(table)))?;
    let raw: Vec<(String, String, Option<String>)> = stmt
        .query_map([], |row| {
            Ok((
                row.get::<_, String>("table")?,
                row.get::<_, String>("from")?,
                row.get::<_, Option<String>>("to")?,
            ))
        })?
        .collect::<Result<_, _>>()?;
    let mut edges = Vec::new();
    for (target, from_col, to_col) in raw {
        if !known_tables.iter().any(|t| t == &target) {
            continue; // dangling constraint in a noisy database
        }
        let to_col = match to_col {
            Some(c) => c,
            None => match primary_key_column(conn, &target)? {
                Some(c) => c,
                None => continue,
            },
        };
        edges.push(ForeignKeyEdge::declared(
            ColumnRef::new(table, from_col),
            ColumnRef::new(&target, to_col),
        ));
    }
    Ok(edges)
}

fn primary_key_column(conn: &Connection, table: &str) -> Result<Option<String>, ProfileError> {
    let cols = read_columns(conn, table)?;
    Ok(cols
        .iter()
        .filter(|c| c.pk_position.is_some())
        .min_by_key(|c| c.pk_position)
        .map(|c| c.name.clone()))
}

/// Render `CREATE TABLE name (col type [PRIMARY KEY], ..., FOREIGN KEY ...)`
/// with comments, defaults, collations, and index definitions stripped.
fn render_simplified_ddl(table: &str, columns: &[RawColumn], fks: &[ForeignKeyEdge]) -> String {
    let pk_count = columns.iter().filter(|c| c.pk_position.is_some()).count();
    let mut parts: Vec<String> = Vec::new();
    for col in columns {
        let mut piece = quote_ident(&col.name);
        if !col.declared_type.is_empty() {
            piece.push(' ');
            piece.push_str(&col.declared_type);
        }
        if pk_count == 1 && col.pk_position.is_some() {
            piece.push_str(" PRIMARY KEY");
        }
        parts.push(piece);
    }
    if pk_count > 1 {
        let mut pk_cols: Vec<&RawColumn> =
            columns.iter().filter(|c| c.pk_position.is_some()).collect();
        pk_cols.sort_by_key(|c| c.pk_position);
        let listed: Vec<String> = pk_cols.iter().map(|c| quote_ident(&c.name)).collect();
        parts.push(format!("PRIMARY KEY ({})", listed.join(", ")));
    }
    for fk in fks {
        parts.push(format!(
            "FOREIGN KEY ({}) REFERENCES {}({})",
            quote_ident(&fk.from.column),
            quote_ident(&fk.to.table),
            quote_ident(&fk.to.column)
        ));
    }
    format!("CREATE TABLE {} ({})", quote_ident(table), parts.join(", "))
}

fn read_sample_rows(
    conn: &Connection,
    table: &str,
    cap: usize,
) -> Result<Vec<Vec<SqlValue>>, ProfileError> {
    if cap == 0 {
        return Ok(Vec::new());
    }
    let mut stmt = conn.prepare(&format!(
        "SELECT * FROM {} LIMIT {cap}",
        q(table)
    ))?;
    let width = stmt.column_count();
    let rows = stmt.query_map([], |row| {
        let mut values = Vec::with_capacity(width);
        for i in 0..width {
            values.push(SqlValue::from(row.get::<_, rusqlite::types::Value>(i)?));
        }
        Ok(values)
    })?;
    Ok(rows.collect::<Result<_, _>>()?)
}

fn column_exists(db: &DatabaseHandle, table: &str, column: &str) -> Result<(), ProfileError> {
    let tables: Vec<String> = {
        let mut stmt = db.conn.prepare(
            "SELECT name FROM sqlite_master WHERE type = 'table' AND name NOT LIKE 'sqlite_%'",
        )?;
        let names = stmt
            .query_map([], |row| row.get(0))?
            .collect::<Result<_, _>>()?;
        names
    };
    if !tables.iter().any(|t| t == table) {
        return Err(ProfileError::UnknownTable(table.to_string()));
    }
    let cols = read_columns(&db.conn, table)?;
    if !cols.iter().any(|c| c.name == column) {
        return Err(ProfileError::UnknownColumn {
            table: table.to_string(),
            column: column.to_string(),
        });
    }
    Ok(())
}

/// Sample up to `spec.n` values from a column, distinct values first.
///
/// Every distinct value (NULL included, ordered after non-NULL at equal
/// frequency) appears once, most frequent first with ties broken by
/// ascending value; remaining slots are filled by further occurrences of
/// the most frequent values in the same order.
pub fn sample_column(
    db: &DatabaseHandle,
    table: &str,
    column: &str,
    spec: &SamplingSpec,
) -> Result<Vec<SqlValue>, ProfileError> {
    column_exists(db, table, column)?;
    let row_count: u64 = db.conn.query_row(
        &format!("SELECT COUNT(*) FROM {}", q(table)),
        [],
        |r| r.get(0),
    )?;
    let mut counted = if row_count <= spec.group_by_row_limit {
        count_by_group(db, table, column)?
    } else {
        count_by_reservoir(db, table, column, spec)?
    };
    counted.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp_total(&b.0)));

    let mut sample = Vec::new();
    for (value, _) in counted.iter().take(spec.n) {
        sample.push(value.clone());
    }
    let mut remaining = spec.n.saturating_sub(sample.len());
    if remaining > 0 {
        for (value, count) in &counted {
            if remaining == 0 {
                break;
            }
            let extra = (count - 1).min(remaining);
            for _ in 0..extra {
                sample.push(value.clone());
            }
            remaining -= extra;
        }
    }
    Ok(sample)
}

fn count_by_group(
    db: &DatabaseHandle,
    table: &str,
    column: &str,
) -> Result<Vec<(SqlValue, usize)>, ProfileError> {
    let sql = format!(
        "SELECT {col}, COUNT(*) FROM {tab} GROUP BY {col}",
        col = q(column),
        tab = q(table)
    );
    let mut stmt = db.conn.prepare(&sql)?;
    let rows = stmt.query_map([], |row| {
        Ok((
            SqlValue::from(row.get::<_, rusqlite::types::Value>(0)?),
            row.get::<_, i64>(1)? as usize,
        ))
    })?;
    Ok(rows.collect::<Result<_, _>>()?)
}

fn count_by_reservoir(
    db: &DatabaseHandle,
    table: &str,
    column: &str,
    spec: &SamplingSpec,
) -> Result<Vec<(SqlValue, usize)>, ProfileError> {
    let sql = format!(
        "SELECT {col} FROM {tab}",
        col = q(column),
        tab = q(table)
    );
    let mut stmt = db.conn.prepare(&sql)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut reservoir: Vec<SqlValue> = Vec::with_capacity(spec.reservoir_size);
    let mut seen = 0usize;
    let mut rows = stmt.query([])?;
    while let Some(row) = rows.next()? {
        let value = SqlValue::from(row.get::<_, rusqlite::types::Value>(0)?);
        if reservoir.len() < spec.reservoir_size {
            reservoir.push(value);
        } else {
            let j = rng.gen_range(0..=seen);
            if j < spec.reservoir_size {
                reservoir[j] = value;
            }
        }
        seen += 1;
    }
    reservoir.sort_by(|a, b| a.cmp_total(b));
    let mut counted: Vec<(SqlValue, usize)> = Vec::new();
    for value in reservoir {
        match counted.last_mut() {
            Some((last, count)) if last.cmp_total(&value).is_eq() => *count += 1,
            _ => counted.push((value, 1)),
        }
    }
    Ok(counted)
}

/// Compute a column profile over a sample. Total over any sample list:
/// empty samples yield the zero profile, NULLs count only toward the null
/// fraction, and numeric statistics cover exactly the values that parse as
/// numbers.
pub fn profile_column(samples: &[SqlValue]) -> ColumnProfile {
    if samples.is_empty() {
        return ColumnProfile::empty();
    }
    let sample_size = samples.len();
    let nulls = samples.iter().filter(|v| v.is_null()).count();
    let non_null: Vec<&SqlValue> = samples.iter().filter(|v| !v.is_null()).collect();

    let mut sorted = non_null.clone();
    sorted.sort_by(|a, b| a.cmp_total(b));
    let mut counts: Vec<(SqlValue, usize)> = Vec::new();
    for value in &sorted {
        match counts.last_mut() {
            Some((last, count)) if last.cmp_total(value).is_eq() => *count += 1,
            _ => counts.push(((*value).clone(), 1)),
        }
    }
    let distinct = counts.len();
    counts.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp_total(&b.0)));
    let top_values: Vec<TopValue> = counts
        .iter()
        .take(TOP_VALUES_CAP)
        .map(|(v, c)| TopValue(v.clone(), *c))
        .collect();

    let mut numbers: Vec<f64> = non_null.iter().filter_map(|v| v.as_number()).collect();
    let numeric_stats = if numbers.is_empty() {
        None
    } else {
        numbers.sort_by(f64::total_cmp);
        Some(numeric_summary(&numbers))
    };

    let top_coverage: usize = top_values.iter().map(|t| t.1).sum();
    let is_enumeration = !non_null.is_empty()
        && distinct <= ENUMERATION_DISTINCT_MAX
        && (top_coverage as f64) >= ENUMERATION_COVERAGE_MIN * non_null.len() as f64;

    let classes: BTreeSet<u8> = non_null
        .iter()
        .map(|v| match v {
            SqlValue::Integer(_) | SqlValue::Real(_) => 0u8,
            SqlValue::Text(_) => 1,
            SqlValue::Blob(_) => 2,
            SqlValue::Null => unreachable!("nulls filtered"),
        })
        .collect();

    ColumnProfile {
        sample_size,
        null_fraction: nulls as f64 / sample_size as f64,
        distinct_count_in_sample: distinct,
        numeric_stats,
        top_values,
        is_enumeration,
        sample_values: samples.to_vec(),
        mixed_types: classes.len() > 1,
    }
}

/// Lower-nearest-rank quantile over a sorted slice: the element at 1-based
/// rank `ceil(p * n)`, clamped to at least 1.
fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

fn numeric_summary(sorted: &[f64]) -> NumericStats {
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let variance = sorted.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    NumericStats {
        min: sorted[0],
        max: sorted[sorted.len() - 1],
        mean,
        variance,
        q25: nearest_rank(sorted, 0.25),
        q50: nearest_rank(sorted, 0.50),
        q75: nearest_rank(sorted, 0.75),
    }
}

/// Context handed to the LLM for semantic induction of one column.
#[derive(Debug, Clone)]
pub struct ColumnContext<'a> {
    pub db_id: &'a str,
    pub table: &'a str,
    pub column: &'a str,
    pub declared_type: &'a str,
    pub table_ddl: &'a str,
    pub profile: &'a ColumnProfile,
}

/// Deterministic user prompt for semantic induction; exposed so scripted
/// gateways can be keyed on the exact request.
pub fn semantics_user_prompt(ctx: &ColumnContext<'_>) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "Database: {}\nTable: {}\nColumn: {} ({})\n",
        ctx.db_id,
        ctx.table,
        ctx.column,
        if ctx.declared_type.is_empty() {
            "untyped"
        } else {
            ctx.declared_type
        }
    ));
    out.push_str(&format!("Structural context: {}\n", ctx.table_ddl));
    let p = ctx.profile;
    out.push_str(&format!(
        "Profile: sample_size={} null_fraction={} distinct={} enumeration={}\n",
        p.sample_size,
        crate::values::format_real(p.null_fraction),
        p.distinct_count_in_sample,
        p.is_enumeration
    ));
    if let Some(stats) = &p.numeric_stats {
        out.push_str(&format!(
            "Numeric: min={} max={} mean={} q25={} q50={} q75={}\n",
            crate::values::format_real(stats.min),
            crate::values::format_real(stats.max),
            crate::values::format_real(stats.mean),
            crate::values::format_real(stats.q25),
            crate::values::format_real(stats.q50),
            crate::values::format_real(stats.q75),
        ));
    }
    if !p.top_values.is_empty() {
        let tops: Vec<String> = p
            .top_values
            .iter()
            .map(|t| format!("{} (x{})", t.0.render(), t.1))
            .collect();
        out.push_str(&format!("Top values: {}\n", tops.join(", ")));
    }
    let shown: Vec<String> = p.sample_values.iter().take(20).map(|v| v.render()).collect();
    out.push_str(&format!("Sampled values: {}\n", shown.join(", ")));
    out
}

#[derive(Deserialize, Default)]
struct RawSemantics {
    #[serde(default)]
    description: String,
    #[serde(default)]
    aliases: Vec<String>,
    #[serde(default)]
    unit_hint: Option<String>,
    #[serde(default)]
    time_granularity_hint: Option<String>,
    #[serde(default)]
    enum_glossary: std::collections::BTreeMap<String, String>,
}

/// Induce column semantics through the gateway. Never fails: transport
/// errors and unparseable replies yield empty semantics plus a warning.
pub fn induce_semantics(
    gateway: &dyn LlmGateway,
    ctx: &ColumnContext<'_>,
) -> (ColumnSemantics, Option<String>) {
    let request = ChatRequest::new(SEMANTICS_SYSTEM_PROMPT, semantics_user_prompt(ctx));
    let at = format!("{}.{}", ctx.table, ctx.column);
    let reply = match gateway.chat(&request) {
        Ok(resp) => resp.text,
        Err(e) => {
            return (
                ColumnSemantics::default(),
                Some(format!("semantics for {at}: gateway failed: {e}")),
            )
        }
    };
    let parsed = extract_fenced_json(&reply)
        .and_then(|block| serde_json::from_str::<RawSemantics>(&block).ok());
    let raw = match parsed {
        Some(raw) => raw,
        None => {
            return (
                ColumnSemantics::default(),
                Some(format!("semantics for {at}: unparseable gateway reply")),
            )
        }
    };
    let observed: BTreeSet<String> = ctx
        .profile
        .sample_values
        .iter()
        .filter(|v| !v.is_null())
        .map(SqlValue::render)
        .collect();
    let enum_glossary = raw
        .enum_glossary
        .into_iter()
        .filter(|(key, _)| observed.contains(key))
        .collect();
    (
        ColumnSemantics {
            description: raw.description.trim().to_string(),
            aliases: raw.aliases.iter().map(|a| a.trim().to_string()).collect(),
            unit_hint: raw.unit_hint.filter(|s| !s.trim().is_empty()),
            time_granularity_hint: raw.time_granularity_hint.filter(|s| !s.trim().is_empty()),
            enum_glossary,
        },
        None,
    )
}

fn type_affinity(declared: &str) -> u8 {
    let upper = declared.to_uppercase();
    if upper.contains("INT") {
        return 0; // numeric
    }
    if upper.contains("CHAR") || upper.contains("CLOB") || upper.contains("TEXT") {
        return 1;
    }
    if upper.is_empty() || upper.contains("BLOB") {
        return 2;
    }
    if upper.contains("REAL") || upper.contains("FLOA") || upper.contains("DOUB") {
        return 0;
    }
    0 // NUMERIC affinity
}

fn types_compatible(a: &str, b: &str) -> bool {
    type_affinity(a) == type_affinity(b)
}

/// Propose join edges between columns of different tables: name similarity
/// at or above the threshold, compatible declared types, and no declared
/// edge already connecting the pair. At most one edge per unordered column
/// pair; endpoints ordered by (table, column).
pub fn infer_fk_edges(
    tables: &[TableKnowledge],
    declared: &[ForeignKeyEdge],
) -> Vec<ForeignKeyEdge> {
    let mut connected: BTreeSet<(ColumnRef, ColumnRef)> = BTreeSet::new();
    for edge in declared {
        let (a, b) = edge.endpoints();
        let key = if a <= b {
            (a.clone(), b.clone())
        } else {
            (b.clone(), a.clone())
        };
        connected.insert(key);
    }
    let mut edges = Vec::new();
    for (i, ta) in tables.iter().enumerate() {
        for tb in tables.iter().skip(i + 1) {
            for ca in &ta.columns {
                for cb in &tb.columns {
                    if !types_compatible(&ca.declared_type, &cb.declared_type) {
                        continue;
                    }
                    let from = ColumnRef::new(&ta.name, &ca.name);
                    let to = ColumnRef::new(&tb.name, &cb.name);
                    let key = if from <= to {
                        (from.clone(), to.clone())
                    } else {
                        (to.clone(), from.clone())
                    };
                    if connected.contains(&key) {
                        continue;
                    }
                    let score = similarity::name_similarity(&ca.name, &cb.name);
                    if score >= INFERRED_FK_MIN_SIMILARITY {
                        edges.push(ForeignKeyEdge::inferred(key.0, key.1, score));
                    }
                }
            }
        }
    }
    edges.sort_by(|a, b| (&a.from, &a.to).cmp(&(&b.from, &b.to)));
    edges
}

#[derive(Debug)]
pub struct MiningOutcome {
    pub knowledge: SchemaKnowledge,
    pub warnings: Vec<String>,
}

/// Full mining pass: extract, sample, profile, induce, infer.
pub fn mine_schema_knowledge(
    db: &DatabaseHandle,
    gateway: &dyn LlmGateway,
    options: &MiningOptions,
) -> Result<MiningOutcome, ProfileError> {
    let structure = extract_structure(db, options.sample_rows_cap)?;
    let db_id = db.db_id();
    let mut warnings = Vec::new();
    let mut tables = Vec::new();
    for raw in &structure.tables {
        let mut columns = Vec::new();
        for col in &raw.columns {
            let samples = sample_column(db, &raw.name, &col.name, &options.sampling)?;
            let profile = profile_column(&samples);
            let ctx = ColumnContext {
                db_id: &db_id,
                table: &raw.name,
                column: &col.name,
                declared_type: &col.declared_type,
                table_ddl: &raw.simplified_ddl,
                profile: &profile,
            };
            let (semantics, warning) = induce_semantics(gateway, &ctx);
            if let Some(w) = warning {
                warnings.push(w);
            }
            columns.push(ColumnKnowledge {
                name: col.name.clone(),
                declared_type: col.declared_type.clone(),
                profile,
                semantics,
            });
        }
        tables.push(TableKnowledge {
            name: raw.name.clone(),
            simplified_ddl: raw.simplified_ddl.clone(),
            row_count: raw.row_count,
            columns,
            sample_rows: raw.sample_rows.clone(),
        });
    }
    let inferred = infer_fk_edges(&tables, &structure.declared_edges);
    let mut fk_edges = structure.declared_edges;
    fk_edges.extend(inferred);

    let knowledge = SchemaKnowledge {
        db_id,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        created_at: options.created_at.clone(),
        tables,
        fk_edges,
    };
    knowledge.validate()?;
    Ok(MiningOutcome { knowledge, warnings })
}

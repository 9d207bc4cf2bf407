//! Few-shot QA library: normalized questions paired with SQL logical
//! skeletons, deduplicated and checked for schema compatibility, plus
//! lexical top-k retrieval over the library's own token statistics.

pub mod skeleton;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::llm_gateway::{ChatRequest, GatewayError, LlmGateway};
use crate::schema_knowledge::SchemaKnowledge;
use skeleton::skeletonize_sql;

pub const NORMALIZE_SYSTEM_PROMPT: &str = include_str!("../../assets/normalize_system_v1.txt");

#[derive(Debug, thiserror::Error)]
pub enum FewShotError {
    #[error("failed to {action} library file {path}: {source}")]
    Io {
        action: &'static str,
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed library file {path} at line {line}: {message}")]
    Malformed {
        path: String,
        line: usize,
        message: String,
    },
    #[error("malformed training file {path}: {message}")]
    BadTrainingFile { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotEntry {
    pub id: u64,
    pub db_id: String,
    pub raw_question: String,
    pub normalized_question: String,
    pub raw_sql: String,
    pub sql_skeleton: String,
    pub question_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityConfig {
    pub metric: String,
    pub default_k: usize,
    /// Prefer entries from the queried database, fall back to the whole
    /// library when fewer than k exist.
    pub same_db_first: bool,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        SimilarityConfig {
            metric: "tfidf_cosine".to_string(),
            default_k: 5,
            same_db_first: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FewShotLibrary {
    pub entries: Vec<FewShotEntry>,
    pub similarity_config: SimilarityConfig,
}

/// Deterministic question normalization: lowercase, punctuation stripped
/// (percent signs survive, they carry meaning in analytics questions),
/// whitespace collapsed. Idempotent.
pub fn normalize_question_offline(question: &str) -> String {
    let mut out = String::with_capacity(question.len());
    for ch in question.chars() {
        if ch.is_alphanumeric() || ch == '%' {
            out.extend(ch.to_lowercase());
        } else {
            out.push(' ');
        }
    }
    out.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Question tokens as used for fingerprints and retrieval.
pub fn question_tokens(text: &str) -> Vec<String> {
    normalize_question_offline(text)
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// Fingerprint of a question: SHA-256 over its normalized tokens. A pure
/// function of the normalized question.
pub fn question_fingerprint(normalized_question: &str) -> String {
    let mut hasher = Sha256::new();
    for token in question_tokens(normalized_question) {
        hasher.update((token.len() as u64).to_le_bytes());
        hasher.update(token.as_bytes());
    }
    hex::encode(hasher.finalize())
}

/// Normalize a question through the gateway, falling back to the offline
/// rule (with a warning) on any gateway failure.
pub fn normalize_question(gateway: &dyn LlmGateway, question: &str) -> (String, Option<String>) {
    let request = ChatRequest::new(NORMALIZE_SYSTEM_PROMPT, question);
    match gateway.chat(&request) {
        Ok(resp) => {
            let text = resp.text.trim();
            if text.is_empty() {
                (
                    normalize_question_offline(question),
                    Some("normalization returned empty text; offline fallback used".to_string()),
                )
            } else {
                (text.to_string(), None)
            }
        }
        Err(GatewayError::Unconfigured) => (normalize_question_offline(question), None),
        Err(e) => (
            normalize_question_offline(question),
            Some(format!("normalization gateway failed ({e}); offline fallback used")),
        ),
    }
}

/// A training pair in BIRD's `train.json` field naming.
#[derive(Debug, Clone, Deserialize)]
pub struct TrainPair {
    pub question: String,
    #[serde(rename = "SQL")]
    pub sql: String,
    pub db_id: String,
}

pub fn load_train_pairs(path: &Path) -> Result<Vec<TrainPair>, FewShotError> {
    let raw = fs::read_to_string(path).map_err(|source| FewShotError::Io {
        action: "read",
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&raw).map_err(|e| FewShotError::BadTrainingFile {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

#[derive(Debug, Clone)]
pub struct DroppedPair {
    pub input_index: usize,
    pub db_id: String,
    pub reason: String,
}

#[derive(Debug)]
pub struct LibraryBuild {
    pub library: FewShotLibrary,
    pub dropped: Vec<DroppedPair>,
    pub warnings: Vec<String>,
}

fn schema_compatible(sql: &str, sk: &SchemaKnowledge) -> Result<(), String> {
    let ids = skeleton::sql_identifiers(sql).map_err(|e| format!("untokenizable SQL: {e}"))?;
    let known_tables: BTreeSet<String> =
        sk.tables.iter().map(|t| t.name.to_lowercase()).collect();
    let known_columns: BTreeSet<String> = sk
        .tables
        .iter()
        .flat_map(|t| t.columns.iter().map(|c| c.name.to_lowercase()))
        .collect();
    for table in &ids.tables {
        if !known_tables.contains(table) {
            return Err(format!("schema-incompatible: unknown table `{table}`"));
        }
    }
    for column in &ids.columns {
        // Aliases leak into column position in expressions; both sets count.
        if !known_columns.contains(column) && !ids.aliases.contains(column) {
            return Err(format!("schema-incompatible: unknown column `{column}`"));
        }
    }
    Ok(())
}

/// Build the library: normalize and skeletonize every pair, drop pairs whose
/// SQL references schema elements absent from the corresponding knowledge,
/// dedup on (question fingerprint, skeleton) keeping the lowest id. Ids are
/// dense and assigned in input order, so rebuilding a library from its own
/// entries is a fixed point.
pub fn build_library(
    pairs: &[TrainPair],
    knowledge: &BTreeMap<String, SchemaKnowledge>,
    gateway: &dyn LlmGateway,
) -> LibraryBuild {
    let mut entries: Vec<FewShotEntry> = Vec::new();
    let mut seen: BTreeSet<(String, String)> = BTreeSet::new();
    let mut dropped = Vec::new();
    let mut warnings = Vec::new();

    for (index, pair) in pairs.iter().enumerate() {
        let sk = match knowledge.get(&pair.db_id) {
            Some(sk) => sk,
            None => {
                dropped.push(DroppedPair {
                    input_index: index,
                    db_id: pair.db_id.clone(),
                    reason: format!("no schema knowledge for db `{}`", pair.db_id),
                });
                continue;
            }
        };
        let sql_skeleton = match skeletonize_sql(&pair.sql) {
            Ok(s) => s,
            Err(e) => {
                dropped.push(DroppedPair {
                    input_index: index,
                    db_id: pair.db_id.clone(),
                    reason: format!("skeletonization failed: {e}"),
                });
                continue;
            }
        };
        if let Err(reason) = schema_compatible(&pair.sql, sk) {
            dropped.push(DroppedPair {
                input_index: index,
                db_id: pair.db_id.clone(),
                reason,
            });
            continue;
        }
        let (normalized_question, warning) = normalize_question(gateway, &pair.question);
        if let Some(w) = warning {
            warnings.push(format!("pair {index}: {w}"));
        }
        let fingerprint = question_fingerprint(&normalized_question);
        let key = (fingerprint.clone(), sql_skeleton.clone());
        if !seen.insert(key) {
            dropped.push(DroppedPair {
                input_index: index,
                db_id: pair.db_id.clone(),
                reason: "duplicate (question, skeleton)".to_string(),
            });
            continue;
        }
        entries.push(FewShotEntry {
            id: entries.len() as u64,
            db_id: pair.db_id.clone(),
            raw_question: pair.question.clone(),
            normalized_question,
            raw_sql: pair.sql.clone(),
            sql_skeleton,
            question_fingerprint: fingerprint,
        });
    }

    LibraryBuild {
        library: FewShotLibrary {
            entries,
            similarity_config: SimilarityConfig::default(),
        },
        dropped,
        warnings,
    }
}

/// An entry matched by retrieval, with its similarity score.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredEntry {
    pub id: u64,
    pub score: f64,
}

fn tf_map(tokens: &[String]) -> BTreeMap<String, f64> {
    let mut tf: BTreeMap<String, f64> = BTreeMap::new();
    for token in tokens {
        *tf.entry(token.clone()).or_insert(0.0) += 1.0;
    }
    tf
}

/// Library-wide inverse document frequencies under the smoothed law
/// ln((1 + N) / (1 + df)) + 1; tokens unseen in the library use df = 0.
struct IdfTable {
    idf: BTreeMap<String, f64>,
    n: f64,
}

impl IdfTable {
    fn build(entries: &[FewShotEntry]) -> Self {
        let n = entries.len() as f64;
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        for entry in entries {
            let unique: BTreeSet<String> = question_tokens(&entry.normalized_question)
                .into_iter()
                .collect();
            for token in unique {
                *df.entry(token).or_insert(0) += 1;
            }
        }
        let idf = df
            .into_iter()
            .map(|(token, df)| (token, ((1.0 + n) / (1.0 + df as f64)).ln() + 1.0))
            .collect();
        IdfTable { idf, n }
    }

    fn value(&self, token: &str) -> f64 {
        self.idf
            .get(token)
            .copied()
            .unwrap_or_else(|| (1.0 + self.n).ln() + 1.0)
    }

    fn vector(&self, text: &str) -> BTreeMap<String, f64> {
        tf_map(&question_tokens(text))
            .into_iter()
            .map(|(token, count)| {
                let w = count * self.value(&token);
                (token, w)
            })
            .collect()
    }
}

fn norm(vector: &BTreeMap<String, f64>) -> f64 {
    vector.values().map(|w| w * w).sum::<f64>().sqrt()
}

fn cosine(q: &BTreeMap<String, f64>, d: &BTreeMap<String, f64>, qn: f64, dn: f64) -> f64 {
    if qn == 0.0 || dn == 0.0 {
        return 0.0;
    }
    let mut dot = 0.0;
    for (token, qw) in q {
        if let Some(dw) = d.get(token) {
            dot += qw * dw;
        }
    }
    dot / (qn * dn)
}

/// Top-k most similar entries under TF-IDF cosine over normalized question
/// tokens. Sorted by score descending, ties broken by ascending id.
pub fn retrieve_similar(lib: &FewShotLibrary, question: &str, k: usize) -> Vec<ScoredEntry> {
    rank_entries(&lib.entries, question, k)
}

fn rank_entries(entries: &[FewShotEntry], question: &str, k: usize) -> Vec<ScoredEntry> {
    if entries.is_empty() || k == 0 {
        return Vec::new();
    }
    let idf = IdfTable::build(entries);
    let query_vec = idf.vector(question);
    let query_norm = norm(&query_vec);
    let mut scored: Vec<ScoredEntry> = entries
        .iter()
        .map(|entry| {
            let doc_vec = idf.vector(&entry.normalized_question);
            let doc_norm = norm(&doc_vec);
            ScoredEntry {
                id: entry.id,
                score: cosine(&query_vec, &doc_vec, query_norm, doc_norm),
            }
        })
        .collect();
    scored.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
    scored.truncate(k);
    scored
}

/// Retrieval preferring same-database entries, topping up from the rest of
/// the library when the database has fewer than k. Scores always come from
/// the library-wide statistics.
pub fn retrieve_for_db(
    lib: &FewShotLibrary,
    question: &str,
    k: usize,
    db_id: Option<&str>,
) -> Vec<ScoredEntry> {
    let db_id = match (lib.similarity_config.same_db_first, db_id) {
        (true, Some(db)) => db,
        _ => return retrieve_similar(lib, question, k),
    };
    let ranked = rank_entries(&lib.entries, question, lib.entries.len());
    let mut picked: Vec<ScoredEntry> = ranked
        .iter()
        .filter(|s| entry_by_id(lib, s.id).is_some_and(|e| e.db_id == db_id))
        .take(k)
        .cloned()
        .collect();
    for candidate in &ranked {
        if picked.len() >= k {
            break;
        }
        if picked.iter().all(|p| p.id != candidate.id) {
            picked.push(candidate.clone());
        }
    }
    picked
}

pub fn entry_by_id<'a>(lib: &'a FewShotLibrary, id: u64) -> Option<&'a FewShotEntry> {
    lib.entries.iter().find(|e| e.id == id)
}

/// Deterministic few-shot prompt block: question and SQL per entry, in
/// retrieval order.
pub fn render_fewshot_block(entries: &[&FewShotEntry]) -> String {
    let parts: Vec<String> = entries
        .iter()
        .map(|e| format!("Q: {}\nSQL: {}", e.normalized_question, e.raw_sql))
        .collect();
    parts.join("\n\n")
}

/// Save as line-delimited JSON, one entry per line in declaration order.
pub fn save_library(lib: &FewShotLibrary, path: &Path) -> Result<(), FewShotError> {
    let mut out = String::new();
    for entry in &lib.entries {
        out.push_str(&serde_json::to_string(entry).expect("entry serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|source| FewShotError::Io {
        action: "write",
        path: path.display().to_string(),
        source,
    })
}

pub fn load_library(path: &Path) -> Result<FewShotLibrary, FewShotError> {
    let raw = fs::read_to_string(path).map_err(|source| FewShotError::Io {
        action: "read",
        path: path.display().to_string(),
        source,
    })?;
    let mut entries = Vec::new();
    for (line_no, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: FewShotEntry =
            serde_json::from_str(line).map_err(|e| FewShotError::Malformed {
                path: path.display().to_string(),
                line: line_no + 1,
                message: e.to_string(),
            })?;
        entries.push(entry);
    }
    entries.sort_by_key(|e| e.id);
    Ok(FewShotLibrary {
        entries,
        similarity_config: SimilarityConfig::default(),
    })
}

//! Companion-agent toolkit for Text-to-SQL under missing evidence: offline
//! database knowledge mining, question routing, substitute-evidence
//! construction, and execution-accuracy benchmarking.
//!
//! Modules follow the pipeline:
//!
//! - [`profiler`] mines a SQLite database into a [`schema_knowledge`] file;
//! - [`fewshot`] builds and queries the solved-case library;
//! - [`router`] decides which evidence types a question needs;
//! - [`evidence`] constructs the evidence bundle and the generation prompt;
//! - [`bench`] loads BIRD-format datasets, executes SQL, and scores
//!   execution accuracy;
//! - [`llm_gateway`] is the single choke point for LLM traffic, with a
//!   deterministic scripted mock for offline runs.

pub mod bench;
pub mod evidence;
pub mod fewshot;
pub mod llm_gateway;
pub mod profiler;
pub mod router;
pub mod schema_knowledge;
pub mod values;

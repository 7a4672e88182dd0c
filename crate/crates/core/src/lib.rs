//! Autoformalization of competition mathematics into Lean 4 theorem statements.
//!
//! The crate is organised around the stages a problem goes through:
//!
//! - [`corpus`]: extracting problems from markdown and judge-assisted preprocessing
//!   (geometry filtering, subproblem splitting).
//! - [`llm`]: a provider-agnostic chat-completion gateway with retries, rate limiting,
//!   token accounting and a deterministic scripted backend.
//! - [`prompts`]: the prompt families and the parsers for model outputs.
//! - [`verify`]: Lean 4 REPL sessions over newline-delimited JSON and outcome classification.
//! - [`pipeline`]: translate, verify, backtranslate and check, with error-feedback rounds
//!   and a resumable JSONL run log.
//! - [`rating`]: five-dimension quality ratings of accepted statements.
//! - [`bench`]: pass@N benchmarking of external provers.
//! - [`report`]: pipeline statistics, classifier metrics and ablation tables.

pub mod bench;
pub mod config;
pub mod corpus;
pub mod jsonl;
pub mod llm;
pub mod pipeline;
pub mod prompts;
pub mod rating;
pub mod report;
pub mod verify;

mod par;

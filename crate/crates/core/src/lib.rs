//! Self-learning query suggestions for tool-calling RAG agents.
//!
//! Executed queries are labeled by answerability, stored as templated
//! examples in a similarity store, and used as dynamic few-shot examples
//! when suggesting answerable alternatives for failed queries.

pub mod domain;
pub mod prompts;
pub mod providers;
pub mod retrieval;
pub mod store;
pub mod templating;
pub mod labeling;
pub mod generation;
pub mod simulation;
pub mod evalharness;
pub mod config;
pub mod engine;
pub mod service;

//! Privacy-preserving, memory-augmented counseling chat agent.
//!
//! The request path lives in [`rag`]: user text is anonymized by [`privacy`],
//! matched against a therapist Q&A corpus in [`knowledge_base`], enriched with
//! [`memory`], sent through [`llm`], and restored before it is returned.
//! [`evaluation`] holds the measurement tools and [`service`] the HTTP API.

pub mod embedding;
pub mod evaluation;
pub mod knowledge_base;
pub mod llm;
pub mod memory;
pub mod privacy;
pub mod rag;
pub mod service;

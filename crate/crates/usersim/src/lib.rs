//! Toolkit for grounding LLM user simulators in real conversation data.
//!
//! The pipeline runs in stages: ingest and curate raw conversation logs
//! ([`corpus`]), build per-user behavioral profiles ([`profiling`]), render
//! persona prompts ([`persona`]), run simulated-user / agent dialogues
//! ([`simulation`]), audit simulation fidelity with a paired LLM judge
//! ([`pt3`]), compute deterministic behavioral statistics ([`metrics`]),
//! and stress-test task agents under persona injection ([`harness`]).
//! All LLM traffic goes through [`gateway`], which ships a deterministic
//! scripted provider so the whole pipeline runs offline.

pub mod corpus;
pub mod gateway;
pub mod harness;
pub mod metrics;
pub mod par;
pub mod persona;
pub mod pipeline;
pub mod profiling;
pub mod prompts;
pub mod pt3;
pub mod simulation;

//! Simulated searcher that answers clarifying questions on behalf of a hidden
//! information need, and the evaluation pipeline around it.
pub mod bridge;
pub mod conversation;
pub mod corpus;
pub mod decoding;
pub mod nlgmetrics;
pub mod promptcodec;
pub mod retrieval;
pub mod simulator;
pub mod stats;
pub mod text;

//! Instruction-speech corpus construction and spoken language understanding
//! scoring.

pub mod audio;
pub mod cli;
pub mod conditioning;
pub mod corpus;
pub mod filter;
pub mod ingest;
pub mod metrics;
pub mod taskio;
pub mod tts;

//! Engine for mixed human/AI teams working over one shared event timeline,
//! plus the tooling to code and analyse the resulting transcripts.

pub mod agent;
pub mod assets;
pub mod checklist;
pub mod cli;
pub mod clock;
pub mod coding;
pub mod gateway;
pub mod provider;
pub mod report;
pub mod session;
pub mod timeline;
pub mod transcript;

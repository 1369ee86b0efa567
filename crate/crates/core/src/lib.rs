//! Intent-driven management of a simulated multi-domain cloud.

pub mod assurance;
pub mod executor;
pub mod gateway;
pub mod llm;
pub mod oracle;
pub mod pipeline;
pub mod policy;
pub mod twin;

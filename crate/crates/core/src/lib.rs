pub mod agents;
pub mod engine;
pub mod games;
pub mod harness;
pub mod llm;
pub mod metrics;
pub mod textualizer;
pub mod vgdl;

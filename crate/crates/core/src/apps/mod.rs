//! The two applications: sparse NMF and exponentially regularized matrix
//! completion, with their PALM baselines and synthetic generators.

pub mod mcp;
pub mod nmf;
pub mod synth;

pub use mcp::{
    mcp_initial_point, mcp_run, mcp_run_from, mcp_surrogates, rmse, McpInstance, McpProblem, McpResult, McpRunOptions, McpVariant,
    PalmMcpProblem,
};
pub use nmf::{
    nmf_initial_point, sparse_nmf_run, sparse_nmf_run_from, NmfResult, NmfRunOptions, NmfVariant, SparseNmfInstance,
    SparseNmfProblem,
};
pub use synth::{synthesize_instances, synthesize_mcp, synthesize_nmf, Instance, McpSynthSpec, NmfSynthSpec, SynthKind};

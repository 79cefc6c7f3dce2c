//! Causal inference engine for path-dependent structural equation models:
//! mixed causal graphs, exact discrete kernels and the fixing operator,
//! identification of interventional distributions (fully observed, hidden
//! variable, and dynamic), counterfactual trajectory simulation, and
//! maximum-likelihood estimation.

pub mod estimate;
pub mod graph;
pub mod identify;
pub mod kernel;
pub mod model_file;
pub mod pdsem;
pub mod simulate;

pub use graph::{GraphError, MixedGraph, Relation, VertexId, VertexKind};
pub use identify::{
    CausalQuery, DbnModel, FunctionalExpr, IdentifyError, IdentifyResult,
};
pub use kernel::{KernelError, TabularKernel, VarSpec};
pub use pdsem::{
    Diagnostic, DiagnosticCode, Intervention, PdsemError, PdsemSpec, StateId, Statistic,
    Terminal, Trajectory, TransitionId,
};
pub use simulate::{SimConfig, SimError, TrajectorySummary};

//! Multi-view orthogonal projection regression.
//!
//! Modalities ordered along a dependency chain are de-correlated by fitting
//! reduced-rank links between them, projecting each modality off the fitted
//! link signal, and solving one penalized regression in which the link signal
//! enters as an unpenalized nuisance block. The crate also carries the
//! competitor methods, scenario simulators and evaluation metrics used to
//! compare them.

pub mod baselines;
pub mod error;
pub mod evaluation;
pub mod methods;
pub mod numerics;
pub mod penalized;
pub mod projection;
pub mod rrr;
pub mod simulation;

pub use error::{MvoprError, Result};
pub use evaluation::{
    dice, jaccard, loo_evaluate, ochiai, run_benchmark, selection_auc, stability_summary, BenchmarkTable, LambdaRule,
    SelectionReport, Stability,
};
pub use methods::{FittedSelection, MethodKind, SelectionMethod};
pub use numerics::{CovarianceKind, CovarianceSpec, DenseMatrix, RngStream, Vector};
pub use penalized::{PathOptions, PenaltyKind, PenaltySpec, RegularizationPath};
pub use projection::{transform_chain, ModalityChain, TransformedDesign};
pub use rrr::{fit_rrr, select_rank, RankGrid, RrrFit};
pub use simulation::{simulate_scenario, ScenarioConfig, ScenarioId, SimulatedDataset};

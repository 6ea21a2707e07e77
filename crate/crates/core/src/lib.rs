//! Aggregation graph neural networks and their stability to graph perturbations.
//!
//! The crate is organized bottom-up:
//!
//! - [`graph`]: shift operators, spectral tools and perturbation realization.
//! - [`datasets`]: MovieLens ingestion, Pearson similarity graphs, synthetic tasks.
//! - [`filters`]: polynomial filters, cyclic coefficient shifts, Lipschitz
//!   certification, circulant realization, Fréchet derivatives and bounds.
//! - [`model`]: aggregation operator, CNN stage and the full mapping, plus a
//!   selection-GNN baseline.
//! - [`training`]: smooth-L1 loss, Lipschitz penalties, backprop and Adam.
//! - [`stability`]: perturbation sweeps, bound checks and reports.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod datasets;
pub mod error;
pub mod filters;
pub mod graph;
pub mod model;
pub mod rng;
pub mod stability;
pub mod training;

pub use error::{Error, Result};
pub use filters::{LipschitzEstimate, Omega, PolyFilter, StabilityBound};
pub use graph::{
    Graph, GraphSignal, Matrix, PerturbationKind, PerturbationRealization, PerturbationSpec,
    SpectralDecomposition,
};
pub use model::{AggGnnModel, AggMatrix, CnnLayerSpec, FirstLayerMode, SelGnnModel};
pub use stability::{StabilityRecord, SweepConfig};
pub use training::{GradCheckReport, LossSpec, OptimizerState};

//! Multifidelity proper orthogonal decomposition.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptive;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod mfpod;
pub mod models;
pub mod pod;
pub mod snapshots;
pub mod solver;
pub mod space;
pub mod verify;

pub use adaptive::{mfpod_adaptive, AdaptiveOptions, AdaptiveTrace};
pub use error::{MfpodError, Result};
pub use estimator::{Allocation, VarianceProfile};
pub use mfpod::{build_operator, mfpod_fixed, MfBasis, MfOperator, MfpodOptions};
pub use models::{AdvDiffConfig, AdvDiffPair, AdvectionForm, Fidelity, FidelityPair};
pub use pod::{pod, pod_projection_error, PodResult};
pub use snapshots::{SnapshotHierarchy, SnapshotSet};
pub use space::{inner, orthonormalize, project, Basis, Metric, MetricKind};

//! Budget allocation, captured-energy scoring, persistence and study orchestration.

pub mod budget;
pub mod energy;
pub mod io;
pub mod study;

pub use budget::{allocate_budget, BudgetSplit, SplitPolicy};
pub use energy::{captured_energy, ReferenceSet};
pub use io::{read_snapshots, write_snapshots};
pub use study::{
    run_study, run_study_on, run_study_with_reference, DimensionPercentiles, RepeatRecord,
    StudyConfig, StudyReport, WeightMode,
};

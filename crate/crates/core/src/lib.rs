//! Monotone multi-stage causal estimation for budgeted incentive allocation.

pub mod allocate;
pub mod data;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod heads;
pub mod model;
pub mod modelfile;
pub mod tensor;
pub mod training;

pub use allocate::{allocate_bruteforce, allocate_greedy, roi, AllocationProblem, Assignment, AssignmentRow, RiderOptions};
pub use data::{Dataset, Example, Group};
pub use datagen::{emit_dataset, GenConfig, Generated, GroundTruth, TruthTable};
pub use error::{Error, Result};
pub use eval::{eligibility_check, evaluate, Eligibility, EligibilityOptions, EvalOptions, EvalReport};
pub use heads::{HeadHyper, HeadKind, TreatmentGrid};
pub use model::{MmceModel, ModelSpec, ResponseCurve, SchemeKind};
pub use training::{fit, EpochLog, Phase, TrainConfig};

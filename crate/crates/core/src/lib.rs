//! Quantile and mean decompositions of wage gaps into selection,
//! composition and structural effects, using a distribution-regression
//! control function for selection into work.

pub mod control;
pub mod counterfactual;
pub mod data;
pub mod distreg;
pub mod error;
pub mod inference;
pub mod logit;
pub mod math;
pub mod oracle;
pub mod outcome;
pub mod study;

pub use control::{estimate_control, ControlFit, ControlOptions};
pub use counterfactual::{
    decompose, decompose_mean, decompose_ratio, fit_group, DecompResult, GroupFit, GroupSpecs,
};
pub use data::{DesignSpec, MicroSample, Observation, Term, TrimRule};
pub use error::{Error, ErrorKind, Result};
pub use outcome::{fit_outcome, OutcomeFit, OutcomeOptions};

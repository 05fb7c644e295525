//! An explicit measure on a sparse infinite-dimensional space under which the
//! k-NN rule is not consistent.
//!
//! A tree of words `t` is embedded with hubs `yᵗ` and atoms `xᵗ`. Half the mass
//! sits on the atoms (label 1), half is diffuse along the branches (label 0).
//! Along the scheduled sample sizes `nᵢ`, almost every diffuse point ends up
//! voted 1 because the nearby atom is sampled more often than its branch.

mod mass;
mod sampler;
mod schedule;
mod sim;
mod tree;

use thiserror::Error;

use crate::knn::KnnError;

pub use mass::{atom_mass, ball_mass, BallMass};
pub use sampler::{sample_mu, Draw, Provenance};
pub use schedule::{
    delta_f64, derive_schedule, derive_schedule_with, gamma_f64, validate_schedule, DeltaRule, GammaRule, KRule, Mode,
    Schedule, StageBounds, Until, Violation,
};
pub use sim::{
    brute_force_stage_predictions, classify, representative, BruteForceComparison, predict_from_counts, structured_stage_predictions, structured_stage_sim,
    ShellClass, ShellLayout, StageSim, BRUTE_FORCE_LIMIT,
};
pub use tree::{AdversarialProblem, DirectionRange, GeometryConstants, NodeGeometry, PropertyReport, TreeWord};

#[derive(Debug, Error)]
pub enum AdversarialError {
    #[error("word of depth {depth} exceeds truncation depth {max}")]
    Depth { depth: usize, max: usize },
    #[error("letter {letter} at position {position} is outside 1..={bound}")]
    Letter { position: usize, letter: u64, bound: u64 },
    #[error("stage {stage} needs truncation depth at least {needed}, have {depth}")]
    Stage { stage: usize, needed: usize, depth: usize },
    #[error("branching sequence has {have} levels, truncation depth {depth} needs {needed}")]
    Branching { have: usize, needed: usize, depth: usize },
    #[error("overflow at stage {stage}: {quantity} exceeds the 64-bit range")]
    Overflow { stage: usize, quantity: &'static str },
    #[error("schedule violates constraints: {0:?}")]
    Invalid(Vec<Violation>),
    #[error("brute force is limited to n <= {limit}, got {n}")]
    BruteForceLimit { n: u64, limit: u64 },
    #[error("invalid geometry constants: {0}")]
    Constants(&'static str),
    #[error(transparent)]
    Knn(#[from] KnnError),
}

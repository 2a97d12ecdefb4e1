//! Prioritized kidney-exchange clearing.
//!
//! Profile weights are estimated from pairwise comparisons with the
//! Bradley-Terry model, used to break ties among maximum-cardinality cycle
//! packings, and evaluated in a daily pool simulation.

pub mod bt;
pub mod clearing;
pub mod cycles;
pub mod error;
pub mod experiment;
pub mod fixtures;
pub mod graph;
pub mod io;
pub mod sim;
pub mod weights;

pub use clearing::{clear, solve_max_cardinality, solve_prioritized, ClearingResult, Matching, Mode};
pub use cycles::{cycle_value, enumerate, CycleKind, ExchangeCycle};
pub use error::{Error, Result};
pub use graph::{blood_compatible, classify_pair, derive_edges, BloodClass, BloodType, CompatibilityGraph, Profile, Vertex};
pub use weights::{ProfileWeights, WeightVector};

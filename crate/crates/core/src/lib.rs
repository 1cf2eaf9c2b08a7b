//! Bi-level optimization with an editable knowledge model: simulators,
//! temperature control, a toy transformer editor, proposers and the loop
//! that ties them together.

pub mod controller;
pub mod domain;
pub mod editor;
pub mod error;
pub mod expr;
pub mod orchestrator;
pub mod proposer;
pub mod simulators;

pub use error::{Error, Result};

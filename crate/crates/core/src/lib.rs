//! Pulse-level simulation of a three-atom Rydberg parity gate: two control
//! atoms with a Rydberg level and a four-level target driven by a shaped
//! Raman pulse through a Rydberg-dressed intermediate state.
//!
//! Basis ordering: sites are `(c1, c2, target)` with the first site most
//! significant. Control levels are `0, 1, r`; target levels are `A, B, e, R`.
//! The computational state `|c1 c2 t>` has index `c1·12 + c2·4 + t`.

pub mod analysis;
pub mod circuits;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod model;
pub mod opalg;
pub mod output;

pub use error::{Error, Result};

//! Greedy approximation in finite-dimensional ℓ_p spaces.

pub mod algorithms;
pub mod bilinear;
pub mod dictionary;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod lp;
pub mod oracle;
pub mod rng;
pub mod space;
pub mod steps;

pub use dictionary::{Dictionary, TieRule};
pub use error::{GreedyError, Result};
pub use space::{DualFunctional, Element, SmoothnessParams, SpaceLp};

//! Reverse-mode gradients and the parameter store they feed.

pub mod gradcheck;
pub mod params;
pub mod tape;

pub use params::{ParamId, ParamStore};
pub use tape::{Gradients, ScanVars, Tape, Unary, Var, PAD};

//! Built-in game families and the strategy factories used with them.

pub mod ipd;
pub mod phase;
pub mod qlearn;
pub mod strategies;
pub mod td;

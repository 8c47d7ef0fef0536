//! Flow tables, rule actions and control applications modeled as affine
//! transformations, with congruence checking between service chains,
//! behavioral differencing, what-if evaluation of FLOW_MODs and
//! forwarding-loop detection by additive-inverse rule pairs.

pub mod actions;
pub mod analysis;
pub mod casestudy;
pub mod error;
pub mod headers;
pub mod nib;
pub mod properties;
pub mod random;
pub mod scenario;
pub mod tables;
pub mod transforms;

pub use error::{Error, Result};

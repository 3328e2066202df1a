pub mod cli;
pub mod economics;
pub mod error;
pub mod gadget;
pub mod harness;
pub mod lattice;
pub mod model;
pub mod oracle;
pub mod policy;
pub mod pricing;
pub mod seeds;
pub mod vocab;

pub use error::{Error, Result};

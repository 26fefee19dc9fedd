//! Reference simulator for directive-based accelerator data management.

pub mod diagnostics;
pub mod dsl;
pub mod memory;
pub mod policy;
pub mod reduction;
pub mod report;
pub mod runtime;
pub mod scenario;
pub mod sim;
pub mod types;

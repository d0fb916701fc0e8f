pub mod bootstrap;
pub mod cli;
pub mod data;
pub mod discrepancy;
pub mod error;
pub mod estimate;
pub mod matrices;
pub mod metrics;
pub mod moments;
pub mod optim;
pub mod params;
pub mod reference;
pub mod report;
pub mod simulate;
pub mod spec;

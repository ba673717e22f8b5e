pub mod catalog;
pub mod cli;
pub mod config;
pub mod index;
pub mod probe;
pub mod prompt;
pub mod report;
pub mod stats;
pub mod triples;

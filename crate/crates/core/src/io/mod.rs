//! File formats and the command-line driver.

pub mod cli;
pub mod problem_file;
pub mod report;
pub mod specs;

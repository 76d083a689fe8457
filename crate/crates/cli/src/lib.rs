//! Command-line front end: problem files, reports and subcommands.

mod app;
pub mod problem_file;
pub mod report;

pub use app::{run, EXIT_FAILED, EXIT_OK, EXIT_USAGE};

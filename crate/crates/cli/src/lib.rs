//! Command-line front end: argument parsing, CSV ingestion, and JSON/CSV
//! output for the `crpd` binary.

pub mod args;
pub mod io;
pub mod output;
pub mod run;

pub use args::Cli;
pub use io::{parse_csv, parse_csv_str, write_csv, IoError};
pub use run::{run, CliError, ErrorClass, THREADS_ENV};

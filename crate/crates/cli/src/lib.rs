//! Pipeline CLI library: run configuration, subcommand implementations, and
//! the exit-code mapping. The binary in `main.rs` is a thin clap wrapper so
//! integration tests can drive the same code paths in-process.

pub mod commands;
pub mod config;
pub mod out;

use specmae_core::Error;

/// 0 success, 2 configuration error, 3 data error, 4 numeric failure.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. }
        | Error::InvalidGroupCount { .. }
        | Error::Grid { .. }
        | Error::Window { .. }
        | Error::UndefinedScore => 2,
        Error::Io(_)
        | Error::Format(_)
        | Error::UnsupportedDtype(_)
        | Error::EmptyCube
        | Error::NoTiles { .. }
        | Error::DegenerateChannel(_)
        | Error::Shape(_)
        | Error::MissingWavelengths => 3,
        Error::Numeric(_) | Error::Trace => 4,
    }
}

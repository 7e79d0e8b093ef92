//! Command-line front end: phantom generation, training, prediction,
//! evaluation and volumetry.

pub mod commands;
pub mod config;

use microvolumetry::Error;

pub const EXIT_OK: u8 = 0;
pub const EXIT_ARGUMENT: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_DATA: u8 = 4;
pub const EXIT_DIVERGENCE: u8 = 5;

pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Argument(_) | Error::Config(_) => EXIT_ARGUMENT,
        Error::Io(_) => EXIT_IO,
        Error::Shape(_) | Error::Validation(_) | Error::Checkpoint { .. } | Error::Format { .. } => EXIT_DATA,
        Error::Divergence { .. } => EXIT_DIVERGENCE,
        Error::Internal(_) => 1,
    }
}

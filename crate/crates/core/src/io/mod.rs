//! File formats: JSON scene and uncertainty sidecar, binary PPM/PGM images
//! and CSV tables.

mod pnm;
mod scene_file;
mod tables;

pub use pnm::{read_pgm16, read_ppm, write_pgm16, write_ppm, PgmRange};
pub use scene_file::{
    load_scene, load_sidecar, read_json, save_scene, save_sidecar, to_json_string, write_json, UncertaintySidecar,
};
pub use tables::{
    read_scores, read_trace, write_active_report, write_active_summary, write_scores, write_trace,
};

use std::path::Path;

use crate::error::Error;

pub(crate) fn format_error(path: &Path, message: impl ToString) -> Error {
    Error::Format { path: path.display().to_string(), message: message.to_string() }
}

//! Diagnostics of the command line: a stable code, a one-line detail and
//! the process exit status.

use std::fmt;
use std::path::Path;

use terrapose_core::camera::CameraError;
use terrapose_core::features::FeatureError;
use terrapose_core::geofuse::FuseError;
use terrapose_core::orient::OrientError;
use terrapose_core::panorama::PanoramaError;
use terrapose_core::pepalp::PepAlpError;
use terrapose_core::terrain::TerrainError;
use terrapose_core::topdown::TopDownError;

use crate::formats::FormatError;

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: String,
    pub detail: String,
    pub exit: i32,
}

impl CliError {
    pub fn input(code: &str, detail: impl Into<String>) -> Self {
        Self {
            code: code.into(),
            detail: detail.into(),
            exit: EXIT_INPUT,
        }
    }

    pub fn numerical(code: &str, detail: impl Into<String>) -> Self {
        Self {
            code: code.into(),
            detail: detail.into(),
            exit: EXIT_NUMERICAL,
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        let code = if e.kind() == std::io::ErrorKind::NotFound {
            "FileNotFound"
        } else {
            "Io"
        };
        Self::input(code, format!("{}: {e}", path.display()))
    }

    /// Adds the offending file to the detail.
    pub fn in_file(mut self, path: &Path) -> Self {
        self.detail = format!("{}: {}", path.display(), self.detail);
        self
    }
}

/// `ERROR <code>: <detail>` on a single line.
impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let detail = self.detail.replace(['\n', '\r'], " ");
        write!(f, "ERROR {}: {}", self.code, detail)
    }
}

const NUMERICAL: [&str; 3] = ["NoConsensus", "Diverged", "SingularInnovation"];

macro_rules! from_module_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                let code = e.code();
                let exit = if NUMERICAL.contains(&code) { EXIT_NUMERICAL } else { EXIT_INPUT };
                Self { code: code.into(), detail: e.to_string(), exit }
            }
        }
    )*};
}

from_module_error!(
    FormatError,
    TerrainError,
    CameraError,
    PanoramaError,
    OrientError,
    PepAlpError,
    TopDownError,
    FeatureError,
    FuseError
);

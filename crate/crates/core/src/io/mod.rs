//! File formats and persistence.
//!
//! Traces and reports are CSV, the pattern map is versioned JSON, and the
//! metro topology and anchoring hints are small line-oriented text files.
//! Every writer replaces its target atomically.

mod map;
mod report;
mod text;
mod trace;
mod world;

use std::io::Write;
use std::path::Path;

use crate::error::IoError;

pub use map::{read_map, write_map, MAP_VERSION};
pub use report::{write_events_csv, write_report};
pub use text::{format_hints, format_topology, parse_hints, parse_topology, read_hints, read_topology, write_hints, write_topology};
pub use trace::{format_trace, parse_trace, read_trace, read_trace_dir, write_trace};
pub use world::{read_world, write_world, WorldDir};

/// Significant digits kept when writing floats to text.
pub const SIGNIFICANT_DIGITS: usize = 9;

/// Formats `x` with [`SIGNIFICANT_DIGITS`] significant digits, dropping
/// trailing zeros. Very large or small magnitudes use exponent notation.
pub fn format_float(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    if !(-5..SIGNIFICANT_DIGITS as i32).contains(&exp) {
        let s = format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x);
        let (mantissa, e) = s.split_once('e').unwrap_or((&s, "0"));
        return format!("{}e{e}", trim_zeros(mantissa));
    }
    let decimals = (SIGNIFICANT_DIGITS as i32 - 1 - exp).max(0) as usize;
    trim_zeros(&format!("{x:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Writes `bytes` to a temporary file next to `path` and renames it into
/// place, so a failed write never leaves a partial file at `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut builder = tempfile::Builder::new();
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        builder.permissions(std::fs::Permissions::from_mode(0o644));
    }
    let mut tmp = builder.tempfile_in(dir).map_err(|e| IoError::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| IoError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| IoError::io(path, e))?;
    tmp.persist(path).map_err(|e| IoError::io(path, e.error))?;
    Ok(())
}

pub(crate) fn read_text(path: &Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))
}

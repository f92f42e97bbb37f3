//! Simulator output directory.
//!
//! ```text
//! DIR/metro.txt        topology
//! DIR/world.json       latent tunnel profiles
//! DIR/truth.json       ground truth per trip, in trip order
//! DIR/hints.txt        anchoring hints
//! DIR/traces/*.csv     one recording per trip
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use super::{read_hints, read_text, read_trace, write_atomic, write_hints, write_topology, write_trace};
use crate::error::IoError;
use crate::model::SensorTrace;
use crate::sim::{GroundTruth, SyntheticWorld};

#[derive(Debug, Clone, PartialEq)]
pub struct WorldDir {
    pub world: SyntheticWorld,
    pub trips: Vec<(SensorTrace, GroundTruth)>,
    pub hints: Vec<(String, String)>,
}

fn json_bytes<T: serde::Serialize>(value: &T) -> Result<Vec<u8>, IoError> {
    let mut bytes = serde_json::to_vec(value).map_err(|e| IoError::Input(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    serde_json::from_str(&read_text(path)?).map_err(|e| IoError::Parse { path: path.into(), line: e.line(), msg: e.to_string() })
}

pub fn write_world(dir: &Path, data: &WorldDir) -> Result<(), IoError> {
    let traces = dir.join("traces");
    std::fs::create_dir_all(&traces).map_err(|e| IoError::io(&traces, e))?;
    write_topology(&data.world.metro, &dir.join("metro.txt"))?;
    write_atomic(&dir.join("world.json"), &json_bytes(&data.world)?)?;
    let truth: Vec<&GroundTruth> = data.trips.iter().map(|(_, t)| t).collect();
    write_atomic(&dir.join("truth.json"), &json_bytes(&truth)?)?;
    write_hints(&data.hints, &dir.join("hints.txt"))?;
    for (trace, _) in &data.trips {
        write_trace(trace, &traces.join(format!("{}.csv", trace.trip_id)))?;
    }
    Ok(())
}

/// Reads a directory written by [`write_world`]. Every truth entry needs its
/// trace; extra trace files are an error too.
pub fn read_world(dir: &Path) -> Result<WorldDir, IoError> {
    let world: SyntheticWorld = read_json(&dir.join("world.json"))?;
    let truth: Vec<GroundTruth> = read_json(&dir.join("truth.json"))?;
    let hints_path = dir.join("hints.txt");
    let hints = if hints_path.exists() { read_hints(&hints_path)? } else { Vec::new() };
    let traces = dir.join("traces");
    let mut files: BTreeMap<String, std::path::PathBuf> = BTreeMap::new();
    for entry in std::fs::read_dir(&traces).map_err(|e| IoError::io(&traces, e))? {
        let path = entry.map_err(|e| IoError::io(&traces, e))?.path();
        if path.extension().is_some_and(|x| x == "csv") {
            let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            files.insert(stem, path);
        }
    }
    let mut trips = Vec::with_capacity(truth.len());
    for t in truth {
        let path = files
            .remove(&t.trip_id)
            .ok_or_else(|| IoError::Input(format!("{}: no trace for trip {}", dir.display(), t.trip_id)))?;
        let trace = read_trace(&path)?;
        if trace.trip_id != t.trip_id {
            return Err(IoError::Input(format!("{}: holds trip {}", path.display(), trace.trip_id)));
        }
        trips.push((trace, t));
    }
    if let Some(extra) = files.keys().next() {
        return Err(IoError::Input(format!("{}: trace {extra} has no ground truth", dir.display())));
    }
    Ok(WorldDir { world, trips, hints })
}

//! Pattern map JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_text, write_atomic};
use crate::builder::{BuildStats, MapConfig, PatternMap, TunnelPattern};
use crate::error::IoError;
use crate::model::{MetroMap, TunnelKey};
use crate::signal::VarianceSeries;

pub const MAP_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct MapFile {
    version: u32,
    metro: MetroMap,
    tunnels: Vec<TunnelEntry>,
    build_stats: BuildStats,
    config: MapConfig,
}

#[derive(Serialize, Deserialize)]
struct TunnelEntry {
    from: String,
    to: String,
    members: usize,
    mag: VarianceSeries,
    baro: Option<VarianceSeries>,
}

#[derive(Deserialize)]
struct Probe {
    version: Option<u32>,
}

fn to_file(map: &PatternMap) -> MapFile {
    MapFile {
        version: MAP_VERSION,
        metro: map.metro.clone(),
        tunnels: map
            .tunnel_patterns
            .iter()
            .map(|(k, p)| TunnelEntry {
                from: k.from.clone(),
                to: k.to.clone(),
                members: p.members,
                mag: p.mag.clone(),
                baro: p.baro.clone(),
            })
            .collect(),
        build_stats: map.build_stats.clone(),
        config: map.config.clone(),
    }
}

pub fn write_map(map: &PatternMap, path: &Path) -> Result<(), IoError> {
    let mut bytes = serde_json::to_vec(&to_file(map)).map_err(|e| IoError::Input(e.to_string()))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_map(path: &Path) -> Result<PatternMap, IoError> {
    let text = read_text(path)?;
    let parse_err = |e: serde_json::Error| IoError::Parse { path: path.into(), line: e.line(), msg: e.to_string() };
    let probe: Probe = serde_json::from_str(&text).map_err(parse_err)?;
    match probe.version {
        None => return Err(IoError::Parse { path: path.into(), line: 1, msg: "missing `version` field".into() }),
        Some(v) if v != MAP_VERSION => {
            return Err(IoError::UnsupportedVersion { path: path.into(), found: v, expected: MAP_VERSION })
        }
        Some(_) => {}
    }
    let file: MapFile = serde_json::from_str(&text).map_err(parse_err)?;
    let mut tunnel_patterns = std::collections::BTreeMap::new();
    for t in file.tunnels {
        let key = TunnelKey::new(t.from, t.to);
        if !file.metro.has_tunnel(&key) {
            return Err(IoError::Input(format!("{}: tunnel {key} is not in the metro topology", path.display())));
        }
        tunnel_patterns.insert(key, TunnelPattern { mag: t.mag, baro: t.baro, members: t.members });
    }
    Ok(PatternMap { metro: file.metro, tunnel_patterns, build_stats: file.build_stats, config: file.config })
}

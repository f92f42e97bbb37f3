//! Topology and hint files.
//!
//! Topology: one `line <name>: A - B - C` per line. Hints: one
//! `node_id = station_id` per line. In both, lines starting with `#` and
//! blank lines are skipped.

use std::path::Path;

use super::{read_text, write_atomic};
use crate::error::IoError;
use crate::model::{Line, MetroMap};

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

pub fn parse_topology(text: &str, path: &Path) -> Result<MetroMap, IoError> {
    let err = |line: usize, msg: String| IoError::Parse { path: path.into(), line, msg };
    let mut lines = Vec::new();
    for (n, l) in content_lines(text) {
        let rest = l.strip_prefix("line ").ok_or_else(|| err(n, format!("expected `line <name>: ...`, got `{l}`")))?;
        let (name, stations) = rest.split_once(':').ok_or_else(|| err(n, "missing `:` after line name".into()))?;
        let name = name.trim();
        if name.is_empty() {
            return Err(err(n, "empty line name".into()));
        }
        let stations: Vec<String> = stations.split('-').map(|s| s.trim().to_string()).collect();
        if stations.iter().any(|s| s.is_empty()) {
            return Err(err(n, "empty station name".into()));
        }
        lines.push(Line { name: name.into(), stations });
    }
    if lines.is_empty() {
        return Err(err(text.lines().count(), "no lines defined".into()));
    }
    MetroMap::new(lines).map_err(|e| IoError::Input(format!("{}: {e}", path.display())))
}

pub fn format_topology(metro: &MetroMap) -> String {
    metro.lines.iter().map(|l| format!("line {}: {}\n", l.name, l.stations.join(" - "))).collect()
}

pub fn read_topology(path: &Path) -> Result<MetroMap, IoError> {
    parse_topology(&read_text(path)?, path)
}

pub fn write_topology(metro: &MetroMap, path: &Path) -> Result<(), IoError> {
    write_atomic(path, format_topology(metro).as_bytes())
}

pub fn parse_hints(text: &str, path: &Path) -> Result<Vec<(String, String)>, IoError> {
    content_lines(text)
        .map(|(n, l)| {
            let (node, station) = l
                .split_once('=')
                .ok_or_else(|| IoError::Parse { path: path.into(), line: n, msg: format!("expected `node = station`, got `{l}`") })?;
            let (node, station) = (node.trim(), station.trim());
            if node.is_empty() || station.is_empty() {
                return Err(IoError::Parse { path: path.into(), line: n, msg: "empty node or station".into() });
            }
            Ok((node.to_string(), station.to_string()))
        })
        .collect()
}

pub fn format_hints(hints: &[(String, String)]) -> String {
    hints.iter().map(|(n, s)| format!("{n} = {s}\n")).collect()
}

pub fn read_hints(path: &Path) -> Result<Vec<(String, String)>, IoError> {
    parse_hints(&read_text(path)?, path)
}

pub fn write_hints(hints: &[(String, String)], path: &Path) -> Result<(), IoError> {
    write_atomic(path, format_hints(hints).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::default_metro;

    fn p() -> &'static Path {
        Path::new("x.txt")
    }

    #[test]
    fn topology_round_trips() {
        let m = default_metro();
        assert_eq!(parse_topology(&format_topology(&m), p()).unwrap(), m);
    }

    #[test]
    fn topology_skips_comments() {
        let m = parse_topology("# demo\n\nline A: x - y - z\nline B : y - w\n", p()).unwrap();
        assert_eq!(m.lines.len(), 2);
        assert_eq!(m.transfer_stations().into_iter().collect::<Vec<_>>(), ["y"]);
    }

    #[test]
    fn topology_errors_name_the_line() {
        assert!(matches!(parse_topology("line A: x - y\nstation z\n", p()), Err(IoError::Parse { line: 2, .. })));
        assert!(matches!(parse_topology("line A: x -  - y\n", p()), Err(IoError::Parse { line: 1, .. })));
        assert!(matches!(parse_topology("line A: x\n", p()), Err(IoError::Input(_))));
    }

    #[test]
    fn hints_keep_hash_inside_node_ids() {
        let h = parse_hints("# from the labeler\ntrip0001#0 = S01\n", p()).unwrap();
        assert_eq!(h, vec![("trip0001#0".to_string(), "S01".to_string())]);
        assert_eq!(parse_hints(&format_hints(&h), p()).unwrap(), h);
        assert!(matches!(parse_hints("a b\n", p()), Err(IoError::Parse { line: 1, .. })));
    }
}

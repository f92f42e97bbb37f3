//! Sensor trace CSV.
//!
//! ```text
//! # trip_id = trip0001
//! # device_id = dev03
//! # accel_rate_hz = 5
//! # mag_rate_hz = 5
//! # baro_rate_hz = 3
//! # barometer = true
//! t,sensor,a,b,c
//! 0.2,ACC,0.01,-0.02,9.81
//! 0.2,MAG,21.5,-3.25,40.125
//! 0.333333333,BARO,1012.2,,
//! ```
//!
//! Records are written in time order; on equal times ACC precedes MAG
//! precedes BARO. `#` lines without `=` are comments.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{format_float, read_text, write_atomic};
use crate::error::IoError;
use crate::model::{validate_trace, AccelSample, BaroSample, MagSample, Rule, SensorTrace, Stream, Violation};

const HEADER: &str = "t,sensor,a,b,c";

pub fn format_trace(trace: &SensorTrace) -> String {
    let mut out = String::new();
    let meta = [
        ("trip_id", trace.trip_id.clone()),
        ("device_id", trace.device_id.clone()),
        ("accel_rate_hz", format_float(trace.accel_rate_hz)),
        ("mag_rate_hz", format_float(trace.mag_rate_hz)),
        ("baro_rate_hz", format_float(trace.baro_rate_hz)),
        ("barometer", trace.baro.is_some().to_string()),
    ];
    for (k, v) in meta {
        let _ = writeln!(out, "# {k} = {v}");
    }
    out.push_str(HEADER);
    out.push('\n');

    let mut rows: Vec<(f64, u8, usize)> = Vec::with_capacity(trace.accel.len() + trace.mag.len());
    rows.extend(trace.accel.iter().enumerate().map(|(i, s)| (s.t, 0, i)));
    rows.extend(trace.mag.iter().enumerate().map(|(i, s)| (s.t, 1, i)));
    rows.extend(trace.baro_samples().iter().enumerate().map(|(i, s)| (s.t, 2, i)));
    rows.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let f = format_float;
    for (_, kind, i) in rows {
        let _ = match kind {
            0 => {
                let s = &trace.accel[i];
                writeln!(out, "{},ACC,{},{},{}", f(s.t), f(s.x), f(s.y), f(s.z))
            }
            1 => {
                let s = &trace.mag[i];
                writeln!(out, "{},MAG,{},{},{}", f(s.t), f(s.x), f(s.y), f(s.z))
            }
            _ => {
                let s = &trace.baro_samples()[i];
                writeln!(out, "{},BARO,{},,", f(s.t), f(s.baro))
            }
        };
    }
    out
}

/// Writes a valid trace; invalid traces are refused with their violations.
pub fn write_trace(trace: &SensorTrace, path: &Path) -> Result<(), IoError> {
    let violations = validate_trace(trace);
    if !violations.is_empty() {
        return Err(IoError::Validation { path: path.into(), violations });
    }
    write_atomic(path, format_trace(trace).as_bytes())
}

pub fn read_trace(path: &Path) -> Result<SensorTrace, IoError> {
    parse_trace(&read_text(path)?, path)
}

/// Reads every `.csv` file in `dir`, in file-name order.
pub fn read_trace_dir(dir: &Path) -> Result<Vec<SensorTrace>, IoError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| IoError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    paths.iter().map(|p| read_trace(p)).collect()
}

/// Parses trace text; `path` only labels errors.
pub fn parse_trace(text: &str, path: &Path) -> Result<SensorTrace, IoError> {
    let err = |line: usize, msg: String| IoError::Parse { path: path.into(), line, msg };
    let mut meta: BTreeMap<String, (usize, String)> = BTreeMap::new();
    let mut header_line = None;
    let mut accel = Vec::new();
    let mut mag = Vec::new();
    let mut baro = Vec::new();
    let mut extra = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some((k, v)) = rest.split_once('=') {
                meta.insert(k.trim().to_string(), (n, v.trim().to_string()));
            }
            continue;
        }
        if header_line.is_none() {
            if line != HEADER {
                return Err(err(n, format!("expected header `{HEADER}`, got `{line}`")));
            }
            header_line = Some(n);
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 5 {
            return Err(err(n, format!("expected 5 fields, got {}", fields.len())));
        }
        let num = |k: usize| -> Result<f64, IoError> {
            fields[k].parse::<f64>().map_err(|_| err(n, format!("field {} is not a number: `{}`", k + 1, fields[k])))
        };
        let t = num(0)?;
        match fields[1] {
            "ACC" => accel.push(AccelSample::new(t, num(2)?, num(3)?, num(4)?)),
            "MAG" => {
                let (x, y, z) = (num(2)?, num(3)?, num(4)?);
                mag.push(MagSample::from_axes(t, x, y, z).unwrap_or(MagSample { t, x, y, z, m: f64::NAN }));
            }
            "BARO" => {
                if !fields[3].is_empty() || !fields[4].is_empty() {
                    extra.push(Violation { stream: Stream::Baro, index: baro.len(), rule: Rule::UnexpectedValue });
                }
                baro.push(BaroSample::new(t, num(2)?));
            }
            other => return Err(err(n, format!("unknown sensor `{other}`"))),
        }
    }

    let Some(header) = header_line else {
        return Err(err(text.lines().count(), "missing header line".into()));
    };
    let get = |k: &str| meta.get(k).map(|(n, v)| (*n, v.as_str())).ok_or_else(|| err(header, format!("missing metadata `{k}`")));
    let rate = |k: &str| -> Result<f64, IoError> {
        let (n, v) = get(k)?;
        v.parse().map_err(|_| err(n, format!("`{k}` is not a number: `{v}`")))
    };
    let has_baro = match meta.get("barometer") {
        Some((n, v)) => v.parse::<bool>().map_err(|_| err(*n, format!("`barometer` must be true or false, got `{v}`")))?,
        None => !baro.is_empty(),
    };
    if !has_baro && !baro.is_empty() {
        return Err(err(get("barometer")?.0, "BARO records in a trace declared without barometer".into()));
    }
    let trace = SensorTrace {
        trip_id: get("trip_id")?.1.to_string(),
        device_id: get("device_id")?.1.to_string(),
        accel,
        mag,
        baro: has_baro.then_some(baro),
        accel_rate_hz: rate("accel_rate_hz")?,
        mag_rate_hz: rate("mag_rate_hz")?,
        baro_rate_hz: rate("baro_rate_hz")?,
    };
    let mut violations = validate_trace(&trace);
    violations.extend(extra);
    violations.sort();
    if !violations.is_empty() {
        return Err(IoError::Validation { path: path.into(), violations });
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SensorTrace {
        SensorTrace {
            trip_id: "trip0001".into(),
            device_id: "dev03".into(),
            accel: vec![AccelSample::new(0.0, 0.1, -0.2, 9.81), AccelSample::new(0.2, 0.15, -0.25, 9.79)],
            mag: vec![
                MagSample::from_axes(0.0, 20.0, -3.0, 40.0).unwrap(),
                MagSample::from_axes(0.2, 21.0, -3.5, 39.0).unwrap(),
            ],
            baro: Some(vec![BaroSample::new(0.1, 1012.25)]),
            accel_rate_hz: 5.0,
            mag_rate_hz: 5.0,
            baro_rate_hz: 3.0,
        }
    }

    fn p() -> &'static Path {
        Path::new("t.csv")
    }

    #[test]
    fn records_interleave_by_time() {
        let text = format_trace(&sample());
        let kinds: Vec<&str> = text.lines().skip(7).map(|l| l.split(',').nth(1).unwrap()).collect();
        assert_eq!(kinds, ["ACC", "MAG", "BARO", "ACC", "MAG"]);
    }

    #[test]
    fn round_trip_preserves_values() {
        let t = sample();
        assert_eq!(parse_trace(&format_trace(&t), p()).unwrap(), t);
    }

    #[test]
    fn missing_barometer_round_trips_as_none() {
        let t = SensorTrace { baro: None, ..sample() };
        let back = parse_trace(&format_trace(&t), p()).unwrap();
        assert_eq!(back.baro, None);
    }

    #[test]
    fn short_record_reports_its_line() {
        let mut text = format_trace(&sample());
        text.push_str("abc,ACC,1,2\n");
        match parse_trace(&text, p()) {
            Err(IoError::Parse { line, .. }) => assert_eq!(line, 13),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_number_reports_its_line() {
        let text = format_trace(&sample()).replacen("9.81", "9,81x", 1);
        assert!(matches!(parse_trace(&text, p()), Err(IoError::Parse { line: 8, .. })));
    }

    #[test]
    fn populated_baro_fields_fail_validation() {
        let text = format_trace(&sample()).replace("1012.25,,", "1012.25,1,2");
        match parse_trace(&text, p()) {
            Err(IoError::Validation { violations, .. }) => {
                assert_eq!(violations, vec![Violation { stream: Stream::Baro, index: 0, rule: Rule::UnexpectedValue }]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unsorted_records_fail_validation() {
        let text = format_trace(&sample()).replacen("0.2,ACC", "0,ACC", 1);
        assert!(matches!(parse_trace(&text, p()), Err(IoError::Validation { .. })));
        let mut t = sample();
        t.accel.swap(0, 1);
        assert!(matches!(write_trace(&t, Path::new("/nonexistent/x.csv")), Err(IoError::Validation { .. })));
    }

    #[test]
    fn missing_metadata_is_a_parse_error() {
        let text = format_trace(&sample()).replace("# device_id = dev03\n", "");
        match parse_trace(&text, p()) {
            Err(IoError::Parse { msg, .. }) => assert!(msg.contains("device_id")),
            other => panic!("{other:?}"),
        }
    }
}

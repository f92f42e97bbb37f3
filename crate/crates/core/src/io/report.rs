//! Event and evaluation CSV tables.

use std::fmt::Write as _;
use std::path::Path;

use super::{format_float as f, write_atomic};
use crate::error::IoError;
use crate::eval::EvalReport;
use crate::model::{StopEvidence, TraceEvent, UserTrace};

/// One row per stop or running event.
pub fn write_events_csv(ut: &UserTrace, path: &Path) -> Result<(), IoError> {
    let mut out = String::from("kind,bt,et,evidence,mag_samples,baro_samples\n");
    for e in &ut.events {
        let _ = match e {
            TraceEvent::Stop(s) => {
                let ev = match s.evidence {
                    StopEvidence::BaroConfirmed => "baro",
                    StopEvidence::AccelOnly => "accel",
                };
                writeln!(out, "stop,{},{},{ev},,", f(s.bt), f(s.et))
            }
            TraceEvent::Running(r) => {
                writeln!(out, "running,{},{},,{},{}", f(r.bt), f(r.et), r.m_trace.len(), r.b_trace.len())
            }
        };
    }
    write_atomic(path, out.as_bytes())
}

fn max_label(max: usize) -> String {
    if max == usize::MAX {
        String::new()
    } else {
        max.to_string()
    }
}

/// Writes `detection.csv`, `localization.csv`, `coverage.csv`,
/// `separability.csv`, and `dtw_vs_mse.csv` into `dir`.
pub fn write_report(report: &EvalReport, dir: &Path) -> Result<(), IoError> {
    std::fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;

    let mut out = String::from("mode,min_tunnels,max_tunnels,trips,stations,detected,missed,false_stops,precision,recall\n");
    for r in &report.detection {
        let s = &r.score;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            if r.barometer { "barometer" } else { "accel-only" },
            r.min_tunnels,
            max_label(r.max_tunnels),
            r.trips,
            s.true_positives + s.false_negatives,
            s.true_positives,
            s.false_negatives,
            s.false_positives,
            f(s.precision()),
            f(s.recall())
        );
    }
    write_atomic(&dir.join("detection.csv"), out.as_bytes())?;

    let mut out = String::from("tunnels,trips,correct,accuracy\n");
    for b in &report.localization {
        let _ = writeln!(out, "{},{},{},{}", b.tunnels, b.trips, b.correct, f(b.accuracy()));
    }
    write_atomic(&dir.join("localization.csv"), out.as_bytes())?;

    let mut out = String::from("traces,coverage\n");
    for (i, c) in report.coverage.iter().enumerate() {
        let _ = writeln!(out, "{},{}", i + 1, f(*c));
    }
    write_atomic(&dir.join("coverage.csv"), out.as_bytes())?;

    let mut out = String::from("class,pairs,mean,p05,median,p95,below_threshold\n");
    for s in &report.separability {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            s.class,
            s.pairs,
            f(s.mean),
            f(s.p05),
            f(s.median),
            f(s.p95),
            f(s.below_threshold)
        );
    }
    write_atomic(&dir.join("separability.csv"), out.as_bytes())?;

    let mut out = String::from("pair,dtw,mse\n");
    for (i, r) in report.dtw_vs_mse.iter().enumerate() {
        let _ = writeln!(out, "{i},{},{}", f(r.dtw), f(r.mse));
    }
    write_atomic(&dir.join("dtw_vs_mse.csv"), out.as_bytes())
}

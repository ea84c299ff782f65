//! Newline-delimited corpus formats: events, candidates, and the shared
//! versioned header line.
//!
//! An event corpus starts with a single header record and then carries one
//! JSON event per line. Candidate files follow the same layout with one
//! record per event. Field order is fixed by the struct definitions, so a
//! given corpus serializes byte-identically across runs.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Result, RetinaError};
use crate::simulator::Event;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub format_version: u32,
    pub kind: String,
}

/// One reconstructed track hypothesis as written to a candidates file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub theta: f64,
    pub phi: f64,
    pub response: f64,
    pub cluster_size: u32,
    pub seed_id: u32,
}

/// Candidates for one event, keyed by the event's generation seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventCandidates {
    pub event_seed: u64,
    pub method: String,
    pub response_units: f64,
    pub candidates: Vec<CandidateRecord>,
}

fn parse_line<T: for<'de> Deserialize<'de>>(line: &str, lineno: usize) -> Result<T> {
    serde_json::from_str(line).map_err(|e| RetinaError::Parse {
        line: lineno,
        message: e.to_string(),
    })
}

fn check_header(line: &str, kind: &str) -> Result<()> {
    let header: Header = parse_line(line, 1)?;
    if header.format_version != FORMAT_VERSION {
        return Err(RetinaError::Parse {
            line: 1,
            message: format!(
                "unsupported format_version {} (expected {})",
                header.format_version, FORMAT_VERSION
            ),
        });
    }
    if header.kind != kind {
        return Err(RetinaError::Parse {
            line: 1,
            message: format!("unexpected corpus kind {:?} (expected {:?})", header.kind, kind),
        });
    }
    Ok(())
}

fn write_corpus<T: Serialize>(w: &mut impl Write, kind: &str, records: &[T]) -> Result<()> {
    let header = Header {
        format_version: FORMAT_VERSION,
        kind: kind.to_string(),
    };
    writeln!(w, "{}", serde_json::to_string(&header).expect("header serializes"))?;
    for r in records {
        writeln!(w, "{}", serde_json::to_string(r).expect("record serializes"))?;
    }
    Ok(())
}

fn read_corpus<T: for<'de> Deserialize<'de>>(r: &mut impl BufRead, kind: &str) -> Result<Vec<T>> {
    let mut lines = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if !line.trim().is_empty() {
            lines.push((i + 1, line));
        }
    }
    let Some((_, first)) = lines.first() else {
        return Err(RetinaError::Parse {
            line: 1,
            message: "empty corpus (missing header)".into(),
        });
    };
    check_header(first, kind)?;
    lines[1..]
        .iter()
        .map(|(no, l)| parse_line(l, *no))
        .collect()
}

pub fn write_events(w: &mut impl Write, events: &[Event]) -> Result<()> {
    write_corpus(w, "retina-events", events)
}

pub fn read_events(r: &mut impl BufRead) -> Result<Vec<Event>> {
    read_corpus(r, "retina-events")
}

pub fn write_candidates(w: &mut impl Write, per_event: &[EventCandidates]) -> Result<()> {
    write_corpus(w, "retina-candidates", per_event)
}

pub fn read_candidates(r: &mut impl BufRead) -> Result<Vec<EventCandidates>> {
    read_corpus(r, "retina-candidates")
}

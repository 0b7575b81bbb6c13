//! Line-oriented trace files.
//!
//! ```text
//! # crow-trace v1 entry=main
//! push 10
//! pop 10
//! result 30
//! ```

use std::io::{self, Write};

use thiserror::Error;

use super::{Event, Outcome, Trap};

const HEADER: &str = "# crow-trace v1 entry=";

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("malformed trace at line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceFile {
    pub entry: String,
    pub events: Vec<Event>,
    pub outcome: Outcome,
}

pub fn write_trace<W: Write>(mut w: W, entry: &str, events: &[Event], outcome: &Outcome) -> io::Result<()> {
    writeln!(w, "{HEADER}{entry}")?;
    for e in events {
        writeln!(w, "{e}")?;
    }
    writeln!(w, "{outcome}")?;
    w.flush()
}

pub fn read_trace(text: &str) -> Result<TraceFile, TraceError> {
    let bad = |line: usize, message: String| TraceError::Malformed { line, message };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or_else(|| bad(1, "empty file".into()))?;
    let entry = header
        .strip_prefix(HEADER)
        .ok_or_else(|| bad(1, format!("expected header {HEADER:?}")))?
        .to_string();
    let mut events = Vec::new();
    let mut outcome = None;
    for (n, line) in lines {
        if outcome.is_some() {
            if line.trim().is_empty() {
                continue;
            }
            return Err(bad(n, "content after terminator".into()));
        }
        let (word, rest) = line.split_once(' ').unwrap_or((line, ""));
        let value = || rest.parse::<i32>().map_err(|_| bad(n, format!("bad value {rest:?}")));
        match word {
            "push" => events.push(Event::Push(value()?)),
            "pop" => events.push(Event::Pop(value()?)),
            "result" if rest.is_empty() => outcome = Some(Outcome::Result(None)),
            "result" => outcome = Some(Outcome::Result(Some(value()?))),
            "trap" => {
                let t = Trap::from_name(rest).ok_or_else(|| bad(n, format!("unknown trap {rest:?}")))?;
                outcome = Some(Outcome::Trap(t));
            }
            "fuel-exhausted" if rest.is_empty() => outcome = Some(Outcome::FuelExhausted),
            _ => return Err(bad(n, format!("unexpected {line:?}"))),
        }
    }
    let outcome = outcome.ok_or_else(|| bad(text.lines().count() + 1, "missing terminator".into()))?;
    Ok(TraceFile { entry, events, outcome })
}

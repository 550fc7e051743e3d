//! Line-oriented spike event files.
//!
//! ```text
//! #SNNEVT1 n_inputs=<int> n_classes=<int>
//! S <label> <duration_ms>
//! E <neuron_id> <time_ms>
//! ...
//! ```
//!
//! Each `S` line opens a sample; its `E` lines follow until the next `S` or
//! end of file. Blank lines are ignored, anything else is an error.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &str = "#SNNEVT1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventHeader {
    pub n_inputs: usize,
    pub n_classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSample {
    /// `(neuron_id, time_ms)` in file order.
    pub events: Vec<(usize, f64)>,
    pub label: usize,
    pub duration: f64,
}

/// Streaming reader over the samples of an event file.
pub struct EventReader<R> {
    lines: std::io::Lines<R>,
    path: PathBuf,
    line_no: usize,
    header: EventHeader,
    pending: Option<(usize, f64)>,
    done: bool,
}

fn parse_err(path: &Path, line: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        reason: reason.into(),
    }
}

fn parse_header(path: &Path, line: &str) -> Result<EventHeader> {
    let mut parts = line.split_whitespace();
    if parts.next() != Some(MAGIC) {
        return Err(parse_err(path, 1, format!("expected `{MAGIC}` header")));
    }
    let (mut n_inputs, mut n_classes) = (None, None);
    for kv in parts {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| parse_err(path, 1, format!("malformed header field `{kv}`")))?;
        let v: usize = v
            .parse()
            .map_err(|_| parse_err(path, 1, format!("header field `{k}` is not an integer")))?;
        match k {
            "n_inputs" => n_inputs = Some(v),
            "n_classes" => n_classes = Some(v),
            _ => return Err(parse_err(path, 1, format!("unknown header field `{k}`"))),
        }
    }
    match (n_inputs, n_classes) {
        (Some(n_inputs), Some(n_classes)) if n_inputs > 0 && n_classes > 0 => Ok(EventHeader { n_inputs, n_classes }),
        _ => Err(parse_err(path, 1, "header needs positive n_inputs and n_classes")),
    }
}

fn non_negative(path: &Path, line: usize, what: &str, s: Option<&str>) -> Result<f64> {
    let v: f64 = s
        .ok_or_else(|| parse_err(path, line, format!("missing {what}")))?
        .parse()
        .map_err(|_| parse_err(path, line, format!("{what} is not a number")))?;
    if !(v.is_finite() && v >= 0.0) {
        return Err(parse_err(path, line, format!("{what} must be a non-negative decimal")));
    }
    Ok(v)
}

fn index(path: &Path, line: usize, what: &str, s: Option<&str>) -> Result<usize> {
    s.ok_or_else(|| parse_err(path, line, format!("missing {what}")))?
        .parse()
        .map_err(|_| parse_err(path, line, format!("{what} is not a non-negative integer")))
}

impl<R: BufRead> EventReader<R> {
    pub fn new(reader: R, path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let mut lines = reader.lines();
        let first = match lines.next() {
            Some(l) => l?,
            None => return Err(parse_err(&path, 1, "empty file")),
        };
        let header = parse_header(&path, first.trim())?;
        let mut r = Self {
            lines,
            path,
            line_no: 1,
            header,
            pending: None,
            done: false,
        };
        r.pending = r.next_sample_start()?;
        if r.pending.is_none() {
            return Err(parse_err(&r.path, r.line_no, "file contains no samples"));
        }
        Ok(r)
    }

    pub fn header(&self) -> EventHeader {
        self.header
    }

    /// Advances past blank lines to the next `S` record.
    fn next_sample_start(&mut self) -> Result<Option<(usize, f64)>> {
        for line in self.lines.by_ref() {
            self.line_no += 1;
            let line = line?;
            let mut parts = line.split_whitespace();
            match parts.next() {
                None => continue,
                Some("S") => return Ok(Some(self.sample_line(parts)?)),
                Some("E") => return Err(parse_err(&self.path, self.line_no, "event before any sample")),
                Some(other) => return Err(parse_err(&self.path, self.line_no, format!("unknown directive `{other}`"))),
            }
        }
        Ok(None)
    }

    fn sample_line<'a>(&self, mut parts: impl Iterator<Item = &'a str>) -> Result<(usize, f64)> {
        let label = index(&self.path, self.line_no, "label", parts.next())?;
        if label >= self.header.n_classes {
            return Err(parse_err(
                &self.path,
                self.line_no,
                format!("label {label} >= n_classes {}", self.header.n_classes),
            ));
        }
        let duration = non_negative(&self.path, self.line_no, "duration", parts.next())?;
        if parts.next().is_some() {
            return Err(parse_err(&self.path, self.line_no, "trailing fields"));
        }
        Ok((label, duration))
    }

    fn read_sample(&mut self, label: usize, duration: f64) -> Result<EventSample> {
        let mut events = Vec::new();
        self.pending = None;
        for line in self.lines.by_ref() {
            self.line_no += 1;
            let line = line?;
            let mut parts = line.split_whitespace();
            match parts.next() {
                None => continue,
                Some("E") => {
                    let id = index(&self.path, self.line_no, "neuron id", parts.next())?;
                    if id >= self.header.n_inputs {
                        return Err(parse_err(
                            &self.path,
                            self.line_no,
                            format!("neuron id {id} >= n_inputs {}", self.header.n_inputs),
                        ));
                    }
                    let t = non_negative(&self.path, self.line_no, "time", parts.next())?;
                    if t > duration {
                        return Err(parse_err(
                            &self.path,
                            self.line_no,
                            format!("event time {t} exceeds sample duration {duration}"),
                        ));
                    }
                    if parts.next().is_some() {
                        return Err(parse_err(&self.path, self.line_no, "trailing fields"));
                    }
                    events.push((id, t));
                }
                Some("S") => {
                    self.pending = Some(self.sample_line(parts)?);
                    break;
                }
                Some(other) => {
                    return Err(parse_err(&self.path, self.line_no, format!("unknown directive `{other}`")));
                }
            }
        }
        if self.pending.is_none() {
            self.done = true;
        }
        Ok(EventSample { events, label, duration })
    }
}

impl<R: BufRead> Iterator for EventReader<R> {
    type Item = Result<EventSample>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let (label, duration) = self.pending?;
        let r = self.read_sample(label, duration);
        if r.is_err() {
            self.done = true;
        }
        Some(r)
    }
}

pub fn open_events(path: &Path) -> Result<EventReader<BufReader<File>>> {
    EventReader::new(BufReader::new(File::open(path)?), path)
}

/// Reads a whole event file.
pub fn load_events(path: &Path) -> Result<(EventHeader, Vec<EventSample>)> {
    let reader = open_events(path)?;
    let header = reader.header();
    let samples = reader.collect::<Result<Vec<_>>>()?;
    Ok((header, samples))
}

pub fn write_events<W: Write>(mut w: W, header: EventHeader, samples: &[EventSample]) -> Result<()> {
    writeln!(w, "{MAGIC} n_inputs={} n_classes={}", header.n_inputs, header.n_classes)?;
    for s in samples {
        writeln!(w, "S {} {}", s.label, s.duration)?;
        for &(id, t) in &s.events {
            writeln!(w, "E {id} {t}")?;
        }
    }
    Ok(())
}

pub fn save_events(path: &Path, header: EventHeader, samples: &[EventSample]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_events(&mut w, header, samples)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn read(text: &str) -> Result<Vec<EventSample>> {
        EventReader::new(Cursor::new(text.to_string()), "mem.evt")?.collect()
    }

    #[test]
    fn parses_samples() {
        let s = read("#SNNEVT1 n_inputs=4 n_classes=2\nS 1 10.5\nE 0 0.25\nE 3 10.5\n\nS 0 3\n").unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].events, vec![(0, 0.25), (3, 10.5)]);
        assert_eq!(s[0].label, 1);
        assert!(s[1].events.is_empty());
    }

    #[test]
    fn round_trip() {
        let header = EventHeader { n_inputs: 5, n_classes: 3 };
        let samples = vec![
            EventSample { events: vec![(4, 0.1), (2, 7.0 / 3.0)], label: 2, duration: 9.75 },
            EventSample { events: vec![], label: 0, duration: 1.0 },
        ];
        let mut buf = Vec::new();
        write_events(&mut buf, header, &samples).unwrap();
        let back = read(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back, samples);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(read("").is_err());
        assert!(read("#SNNEVT1 n_inputs=4 n_classes=2\n").is_err());
        assert!(read("#SNNEVT2 n_inputs=4 n_classes=2\nS 0 1\n").is_err());
        let err = read("#SNNEVT1 n_inputs=4 n_classes=2\nS 0 5\nE 4 1.0\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(read("#SNNEVT1 n_inputs=4 n_classes=2\nS 0 5\nX 1 1.0\n").is_err());
        assert!(read("#SNNEVT1 n_inputs=4 n_classes=2\nE 1 1.0\n").is_err());
        assert!(read("#SNNEVT1 n_inputs=4 n_classes=2\nS 2 5\n").is_err());
        assert!(read("#SNNEVT1 n_inputs=4 n_classes=2\nS 0 5\nE 1 -1\n").is_err());
        assert!(read("#SNNEVT1 n_inputs=4 n_classes=2\nS 0 5\nE 1 6\n").is_err());
    }
}

//! Per-iteration training trace with lossless CSV persistence.

use crate::error::{Error, Result};
use std::fmt::Write as _;
use std::path::Path;

pub const TRACE_HEADER: &str = "k,loss,t,r,hard_fraction,M_min,M_max,lr";

/// One training iteration. `t` is the curriculum value after the update of
/// iteration `k`; `r` is the statistic that update consumed; `m_min`/`m_max`
/// bound the hard-pair gradient coefficients (1.0 when no pair was hard).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub k: u64,
    pub loss: f64,
    pub t: f64,
    pub r: f64,
    pub hard_fraction: f64,
    pub m_min: f64,
    pub m_max: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTrace {
    records: Vec<TraceRecord>,
}

impl TrainTrace {
    pub fn new() -> TrainTrace {
        TrainTrace::default()
    }

    pub fn push(&mut self, record: TraceRecord) {
        debug_assert!(self.records.last().is_none_or(|r| record.k > r.k));
        self.records.push(record);
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    /// Floats are rendered in shortest round-trip form, so parsing the CSV
    /// reproduces every record bit for bit.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from(TRACE_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.k, r.loss, r.t, r.r, r.hard_fraction, r.m_min, r.m_max, r.lr
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    pub fn parse_csv(text: &str) -> Result<TrainTrace> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, header)) if header == TRACE_HEADER => {}
            Some((_, header)) => {
                return Err(Error::CsvParse {
                    line: 1,
                    detail: format!("expected header {TRACE_HEADER:?}, found {header:?}"),
                })
            }
            None => {
                return Err(Error::CsvParse {
                    line: 1,
                    detail: "empty trace".into(),
                })
            }
        }
        let mut trace = TrainTrace::new();
        for (idx, line) in lines {
            let line_no = idx + 1;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 8 {
                return Err(Error::CsvParse {
                    line: line_no,
                    detail: format!("expected 8 fields, found {}", fields.len()),
                });
            }
            let parse_f = |s: &str, what: &str| -> Result<f64> {
                s.parse().map_err(|_| Error::CsvParse {
                    line: line_no,
                    detail: format!("{what}: not a float: {s}"),
                })
            };
            trace.push(TraceRecord {
                k: fields[0].parse().map_err(|_| Error::CsvParse {
                    line: line_no,
                    detail: format!("k: not an integer: {}", fields[0]),
                })?,
                loss: parse_f(fields[1], "loss")?,
                t: parse_f(fields[2], "t")?,
                r: parse_f(fields[3], "r")?,
                hard_fraction: parse_f(fields[4], "hard_fraction")?,
                m_min: parse_f(fields[5], "M_min")?,
                m_max: parse_f(fields[6], "M_max")?,
                lr: parse_f(fields[7], "lr")?,
            });
        }
        Ok(trace)
    }

    pub fn read_csv(path: &Path) -> Result<TrainTrace> {
        TrainTrace::parse_csv(&std::fs::read_to_string(path)?)
    }
}

//! Sample and report writers.
//!
//! Samples are one record per line. The first line of a samples file is a
//! header carrying the schema version and the layout:
//!
//! * JSONL: a JSON object with `"schema_version"`, `"n"`, `"q_layout"` and,
//!   for quotients, `"representative_shape"`. Each record then has the keys
//!   `index, chain, q, h_before, h_after, accepted[, representative]`.
//! * CSV: a `#` comment line with the same facts, then a column header row
//!   `index,chain,q_0_0,…,q_{n-1}_{n-1},h_before,h_after,accepted[,r_0_0,…]`.
//!
//! `q` is flattened row-major. Representatives are flattened column-major,
//! so a sphere sample is the unit vector itself. Floats are written with 17
//! significant digits; a non-finite energy is `null` in JSONL and `NaN` in
//! CSV.

use std::io::Write;

use nalgebra::DMatrix;

use super::config::{SampleFormat, SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::sampler::SampleRecord;

/// Shape of the records in a samples file.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleLayout {
    pub format: SampleFormat,
    pub n: usize,
    /// Distinguished columns for quotient runs.
    pub representative_columns: Option<usize>,
}

/// `x` with 17 significant digits, or `None` when not finite.
pub fn format_float(x: f64) -> Option<String> {
    x.is_finite().then(|| format!("{x:.16e}"))
}

fn json_float(x: f64) -> String {
    format_float(x).unwrap_or_else(|| "null".into())
}

fn csv_float(x: f64) -> String {
    format_float(x).unwrap_or_else(|| "NaN".into())
}

fn row_major(q: &DMatrix<f64>) -> impl Iterator<Item = f64> + '_ {
    (0..q.nrows()).flat_map(move |i| (0..q.ncols()).map(move |j| q[(i, j)]))
}

impl SampleLayout {
    pub fn header(&self) -> String {
        match self.format {
            SampleFormat::Jsonl => {
                let mut h = serde_json::json!({
                    "schema_version": SCHEMA_VERSION,
                    "record": "lie-hmc-sample",
                    "n": self.n,
                    "q_layout": "row_major",
                });
                if let Some(k) = self.representative_columns {
                    h["representative_shape"] = serde_json::json!([self.n, k]);
                    h["representative_layout"] = "column_major".into();
                }
                format!("{h}\n")
            }
            SampleFormat::Csv => {
                let mut line = format!(
                    "# lie-hmc-sample schema_version={SCHEMA_VERSION} n={} q_layout=row_major",
                    self.n
                );
                if let Some(k) = self.representative_columns {
                    line.push_str(&format!(" representative_shape={}x{k} representative_layout=column_major", self.n));
                }
                line.push('\n');
                let mut cols = vec!["index".to_string(), "chain".to_string()];
                for i in 0..self.n {
                    for j in 0..self.n {
                        cols.push(format!("q_{i}_{j}"));
                    }
                }
                cols.extend(["h_before", "h_after", "accepted"].map(String::from));
                if let Some(k) = self.representative_columns {
                    for j in 0..k {
                        for i in 0..self.n {
                            cols.push(format!("r_{i}_{j}"));
                        }
                    }
                }
                let mut w = csv::Writer::from_writer(Vec::new());
                w.write_record(&cols).expect("in-memory write");
                line.push_str(&String::from_utf8(w.into_inner().expect("flush to memory")).expect("ASCII"));
                line
            }
        }
    }
}

/// Streams records for one chain.
pub struct SampleWriter<W: Write> {
    layout: SampleLayout,
    inner: RecordSink<W>,
}

enum RecordSink<W: Write> {
    Jsonl(W),
    Csv(csv::Writer<W>),
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

impl<W: Write> SampleWriter<W> {
    /// A writer for records only; the header is written separately.
    pub fn new(layout: SampleLayout, out: W) -> Self {
        let inner = match layout.format {
            SampleFormat::Jsonl => RecordSink::Jsonl(out),
            SampleFormat::Csv => RecordSink::Csv(csv::WriterBuilder::new().has_headers(false).from_writer(out)),
        };
        Self { layout, inner }
    }

    pub fn write(&mut self, record: &SampleRecord, representative: Option<&DMatrix<f64>>) -> Result<()> {
        if representative.map(|r| r.ncols()) != self.layout.representative_columns {
            return Err(Error::Config("representative does not match the sample layout".into()));
        }
        match &mut self.inner {
            RecordSink::Jsonl(w) => {
                let q: Vec<String> = row_major(&record.q).map(json_float).collect();
                write!(
                    w,
                    "{{\"index\":{},\"chain\":{},\"q\":[{}],\"h_before\":{},\"h_after\":{},\"accepted\":{}",
                    record.index,
                    record.chain,
                    q.join(","),
                    json_float(record.h_before),
                    json_float(record.h_after),
                    record.accepted
                )?;
                if let Some(r) = representative {
                    let r: Vec<String> = r.iter().map(|x| json_float(*x)).collect();
                    write!(w, ",\"representative\":[{}]", r.join(","))?;
                }
                writeln!(w, "}}")?;
            }
            RecordSink::Csv(w) => {
                let mut row = vec![record.index.to_string(), record.chain.to_string()];
                row.extend(row_major(&record.q).map(csv_float));
                row.push(csv_float(record.h_before));
                row.push(csv_float(record.h_after));
                row.push(record.accepted.to_string());
                if let Some(r) = representative {
                    row.extend(r.iter().map(|x| csv_float(*x)));
                }
                w.write_record(&row).map_err(csv_error)?;
            }
        }
        Ok(())
    }

    pub fn finish(self) -> Result<W> {
        match self.inner {
            RecordSink::Jsonl(mut w) => {
                w.flush()?;
                Ok(w)
            }
            RecordSink::Csv(w) => w.into_inner().map_err(|e| Error::Io(e.into_error())),
        }
    }
}

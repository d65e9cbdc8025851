//! Appendable CSV files with a fixed header.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use binnet::MetricsRecord;
use serde::Serialize;

pub const METRICS_HEADER: &str = "epoch,learn_time_s,infer_time_per_image_s,train_acc,val_acc";
pub const BENCH_HEADER: &str = "kernel,size,reps,median_ns,p10_ns,p90_ns,checksum";

/// A CSV file opened for appending serialized rows.
pub struct CsvAppender {
    writer: csv::Writer<File>,
    rows: usize,
}

impl CsvAppender {
    /// Opens `path`, writing `header` if the file is new or empty and
    /// refusing files whose header differs.
    pub fn open(path: &Path, header: &str) -> Result<Self> {
        let existing = match std::fs::read_to_string(path) {
            Ok(text) => Some(text),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
            Err(e) => return Err(e).with_context(|| format!("reading {}", path.display())),
        };
        let mut rows = 0;
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .with_context(|| format!("opening {}", path.display()))?;
        match existing.as_deref() {
            None | Some("") => writeln!(file, "{header}")?,
            Some(text) => {
                let first = text.lines().next().unwrap_or("");
                if first != header {
                    bail!("{} has header {first:?}, expected {header:?}", path.display());
                }
                if !text.ends_with('\n') {
                    bail!("{} ends in a partial row", path.display());
                }
                rows = text.lines().count() - 1;
            }
        }
        let writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        Ok(Self { writer, rows })
    }

    /// Data rows in the file, including ones written through `self`.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Writes and flushes one row.
    pub fn append<T: Serialize>(&mut self, row: &T) -> Result<()> {
        self.writer.serialize(row)?;
        self.writer.flush()?;
        self.rows += 1;
        Ok(())
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let header = reader.headers()?.iter().collect::<Vec<_>>().join(",");
    if header != METRICS_HEADER {
        bail!("{} has header {header:?}, expected {METRICS_HEADER:?}", path.display());
    }
    reader
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("parsing {}", path.display()))
}

/// Rewrites `path` with only the rows for epochs `1..=epoch`, so a resumed
/// run can append the rest. A missing file becomes header-only. Returns the
/// number of rows kept.
pub fn truncate_metrics(path: &Path, epoch: usize) -> Result<usize> {
    let kept: Vec<MetricsRecord> = if path.exists() {
        read_metrics(path)?.into_iter().filter(|r| r.epoch <= epoch).collect()
    } else {
        Vec::new()
    };
    let tmp = path.with_extension("csv.tmp");
    {
        let mut file = File::create(&tmp).with_context(|| format!("writing {}", tmp.display()))?;
        writeln!(file, "{METRICS_HEADER}")?;
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        for r in &kept {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))?;
    Ok(kept.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use binnet::fastpath::{BenchResult, Kernel};

    fn record(epoch: usize) -> MetricsRecord {
        MetricsRecord {
            epoch,
            learn_time_s: 1.5,
            infer_time_per_image_s: 2.5e-5,
            train_acc: 0.1 * epoch as f64,
            val_acc: 1.0 / 3.0,
        }
    }

    #[test]
    fn headers_match_the_schemas() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let mut m = CsvAppender::open(&path, METRICS_HEADER).unwrap();
        m.append(&record(1)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "epoch,learn_time_s,infer_time_per_image_s,train_acc,val_acc\n1,1.5,0.000025,0.1,0.3333333333333333\n");

        let path = dir.path().join("b.csv");
        let mut b = CsvAppender::open(&path, BENCH_HEADER).unwrap();
        b.append(&BenchResult {
            kernel: Kernel::BinConv,
            size: 64,
            reps: 30,
            median_ns: 10,
            p10_ns: 9,
            p90_ns: 12,
            checksum: 0.5,
        })
        .unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "kernel,size,reps,median_ns,p10_ns,p90_ns,checksum\nbin_conv,64,30,10,9,12,0.5\n");
    }

    #[test]
    fn values_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let mut m = CsvAppender::open(&path, METRICS_HEADER).unwrap();
        let rows: Vec<_> = (1..=3).map(record).collect();
        for r in &rows {
            m.append(r).unwrap();
        }
        assert_eq!(read_metrics(&path).unwrap(), rows);
    }

    #[test]
    fn appending_continues_and_counts_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        CsvAppender::open(&path, METRICS_HEADER).unwrap().append(&record(1)).unwrap();
        let mut again = CsvAppender::open(&path, METRICS_HEADER).unwrap();
        assert_eq!(again.rows(), 1);
        again.append(&record(2)).unwrap();
        assert_eq!(again.rows(), 2);
        assert_eq!(read_metrics(&path).unwrap().len(), 2);
    }

    #[test]
    fn foreign_headers_are_refused() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(&path, "a,b\n1,2\n").unwrap();
        assert!(CsvAppender::open(&path, BENCH_HEADER).is_err());
        assert!(read_metrics(&path).is_err());
    }

    #[test]
    fn truncation_keeps_earlier_epochs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        assert_eq!(truncate_metrics(&path, 4).unwrap(), 0);
        assert_eq!(std::fs::read_to_string(&path).unwrap(), format!("{METRICS_HEADER}\n"));
        let mut m = CsvAppender::open(&path, METRICS_HEADER).unwrap();
        for e in 1..=4 {
            m.append(&record(e)).unwrap();
        }
        assert_eq!(truncate_metrics(&path, 2).unwrap(), 2);
        assert_eq!(read_metrics(&path).unwrap(), vec![record(1), record(2)]);
    }
}

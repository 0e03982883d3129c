//! Dataset ingestion and result emission.
//!
//! Dataset CSV: header `delta_p,R` or `delta_p,R,sigma_R`, `#` comment
//! lines, decimal point, UTF-8. Every output file is written to a
//! temporary file in the target directory and renamed into place.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::correlation::CorrelationCurve;
use crate::error::{Error, Result};
use crate::fitting::{DataPoint, Dataset, FitResult};

pub const DATASET_HEADER: [&str; 3] = ["delta_p", "R", "sigma_R"];

/// Parse a dataset from CSV text. An empty input or a header with no rows
/// yields an empty dataset.
pub fn parse_dataset<R: Read>(mut input: R, label: &str) -> Result<Dataset> {
    let mut text = String::new();
    input.read_to_string(&mut text)?;
    // `physical[i]` is the file line of the i-th kept line.
    let mut physical = Vec::new();
    let mut kept = String::with_capacity(text.len());
    for (i, line) in text.lines().enumerate() {
        let t = line.trim_start();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        physical.push(i as u64 + 1);
        kept.push_str(line);
        kept.push('\n');
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(kept.as_bytes());
    let mut columns = None;
    let mut points = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| remap_line(csv_error(e), &physical))?;
        let line = rec.position().map_or(0, |p| physical_line(&physical, p.line()));
        let Some(ncol) = columns else {
            let names: Vec<&str> = rec.iter().collect();
            if names.len() < 2 || names.len() > 3 || names[..] != DATASET_HEADER[..names.len()] {
                return Err(Error::Parse {
                    line,
                    message: format!("expected header `delta_p,R[,sigma_R]`, found `{}`", names.join(",")),
                });
            }
            columns = Some(names.len());
            continue;
        };
        if rec.len() != ncol {
            return Err(Error::Parse {
                line,
                message: format!("expected {ncol} fields, found {}", rec.len()),
            });
        }
        let field = |i: usize| -> Result<f64> {
            let s = &rec[i];
            s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::Parse {
                line,
                message: format!("{}: `{s}` is not a finite number", DATASET_HEADER[i]),
            })
        };
        let point = DataPoint {
            delta_p: field(0)?,
            r: field(1)?,
            sigma_r: if ncol == 3 { Some(field(2)?) } else { None },
        };
        if point.delta_p <= 0.0 {
            return Err(Error::Parse {
                line,
                message: format!("delta_p must be > 0, got {}", point.delta_p),
            });
        }
        if point.sigma_r.is_some_and(|s| s <= 0.0) {
            return Err(Error::Parse {
                line,
                message: "sigma_R must be > 0".into(),
            });
        }
        points.push(point);
    }
    let d = Dataset::new(points, label).map_err(|e| match e {
        Error::Domain(message) => Error::Parse { line: 0, message },
        other => other,
    })?;
    Ok(d)
}

fn physical_line(physical: &[u64], line: u64) -> u64 {
    line.checked_sub(1)
        .and_then(|i| physical.get(i as usize))
        .copied()
        .unwrap_or(line)
}

fn remap_line(e: Error, physical: &[u64]) -> Error {
    match e {
        Error::Parse { line, message } => Error::Parse {
            line: physical_line(physical, line),
            message,
        },
        other => other,
    }
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::Parse {
            line,
            message: format!("{kind:?}"),
        },
    }
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let label = path.file_stem().and_then(|s| s.to_str()).unwrap_or("").to_string();
    parse_dataset(File::open(path)?, &label)
}

pub fn write_dataset_to<W: Write>(out: W, data: &Dataset) -> Result<()> {
    let mut out = out;
    if !data.label.is_empty() {
        writeln!(out, "# {}", data.label.replace('\n', " "))?;
    }
    let with_sigma = data.has_uncertainties();
    let mut w = csv::Writer::from_writer(out);
    let header = if with_sigma { &DATASET_HEADER[..] } else { &DATASET_HEADER[..2] };
    w.write_record(header).map_err(csv_error)?;
    for p in data.points() {
        let mut row = vec![p.delta_p.to_string(), p.r.to_string()];
        if with_sigma {
            row.push(p.sigma_r.map_or_else(String::new, |s| s.to_string()));
        }
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Write via a temporary file in the same directory, then rename.
pub fn write_atomic<F>(path: &Path, body: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<&mut File>) -> Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        body(&mut w)?;
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    write_atomic(path, |w| write_dataset_to(w, data))
}

pub fn write_curve_csv<W: Write>(out: W, curve: &CorrelationCurve) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["delta_p", "R"]).map_err(csv_error)?;
    for (dp, r) in curve.delta_p.iter().zip(&curve.r) {
        w.write_record([dp.to_string(), r.to_string()]).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<W: Write, T: Serialize>(mut out: W, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| Error::Io(e.into()))?;
    writeln!(out)?;
    Ok(())
}

pub fn write_fit_json<W: Write>(out: W, result: &FitResult) -> Result<()> {
    write_json(out, result)
}

/// One row of an oracle verification report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReportRow {
    pub delta_p: f64,
    pub closed: f64,
    pub oracle: f64,
    pub err: f64,
    pub pass: bool,
}

/// Report sections, each introduced by a `# name` comment line.
pub fn write_oracle_report<W: Write>(mut out: W, sections: &[(&str, Vec<ReportRow>)]) -> Result<()> {
    writeln!(out, "delta_p,closed,oracle,err,pass")?;
    for (name, rows) in sections {
        writeln!(out, "# {name}")?;
        for r in rows {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.delta_p,
                r.closed,
                r.oracle,
                r.err,
                if r.pass { "PASS" } else { "FAIL" }
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_optional_column() {
        let text = "# digitized\ndelta_p,R,sigma_R\n0.5,-0.2,0.05\n# mid comment\n0.25, -0.4 ,0.1\n";
        let d = parse_dataset(text.as_bytes(), "t").unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.points()[0].delta_p, 0.25);
        assert_eq!(d.points()[0].sigma_r, Some(0.1));
    }

    #[test]
    fn header_only_and_empty_are_empty() {
        assert!(parse_dataset("# c\ndelta_p,R\n".as_bytes(), "").unwrap().is_empty());
        assert!(parse_dataset("".as_bytes(), "").unwrap().is_empty());
    }

    #[test]
    fn malformed_row_reports_line() {
        let text = "delta_p,R\n0.1,0.2\n0.2,abc\n";
        match parse_dataset(text.as_bytes(), "") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let wrong_header = "dp,R\n";
        assert!(matches!(parse_dataset(wrong_header.as_bytes(), ""), Err(Error::Parse { line: 1, .. })));
        let short = "delta_p,R\n0.1\n";
        assert!(matches!(parse_dataset(short.as_bytes(), ""), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn dataset_round_trip() {
        let d = Dataset::new(
            vec![DataPoint::new(0.1, -0.123456789012345), DataPoint::new(0.3, 1.0 / 3.0)],
            "lbl",
        )
        .unwrap();
        let mut buf = Vec::new();
        write_dataset_to(&mut buf, &d).unwrap();
        let back = parse_dataset(buf.as_slice(), "lbl").unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.txt");
        std::fs::write(&path, "old").unwrap();
        write_atomic(&path, |w| Ok(write!(w, "new")?)).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "new");
    }
}

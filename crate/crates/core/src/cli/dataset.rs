//! Dataset files: a `# stiefel n=<n> p=<p> N=<N>` line followed by one CSV
//! row per observation, the n x p matrix flattened column by column.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::stiefel::{orthonormality_error, StiefelPoint, ORTHO_TOL};

/// Rows further than this from orthonormal are rejected; closer ones are
/// re-orthonormalized with a warning.
pub const REPAIR_TOL: f64 = 1e-4;
/// Read tolerance; looser than the library default so that values printed
/// to a few fewer digits by other tools are still accepted as-is.
pub const READ_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub n: usize,
    pub p: usize,
    pub points: Vec<StiefelPoint>,
    pub warnings: Vec<String>,
}

fn parse_header(line: &str) -> Result<(usize, usize, Option<usize>)> {
    let rest = line
        .trim()
        .strip_prefix('#')
        .map(str::trim)
        .and_then(|s| s.strip_prefix("stiefel"))
        .ok_or_else(|| Error::Invalid(format!("expected a '# stiefel n=.. p=..' header, got {line:?}")))?;
    let (mut n, mut p, mut big_n) = (None, None, None);
    for tok in rest.split_whitespace() {
        let (k, v) = tok.split_once('=').ok_or_else(|| Error::Invalid(format!("bad header field {tok:?}")))?;
        let v: usize = v.parse().map_err(|_| Error::Invalid(format!("bad header value {tok:?}")))?;
        match k {
            "n" => n = Some(v),
            "p" => p = Some(v),
            "N" => big_n = Some(v),
            _ => return Err(Error::Invalid(format!("unknown header field {k:?}"))),
        }
    }
    match (n, p) {
        (Some(n), Some(p)) if p >= 1 && n >= p => Ok((n, p, big_n)),
        _ => Err(Error::Invalid(format!("header needs n >= p >= 1: {line:?}"))),
    }
}

pub fn read_dataset_from<R: Read>(input: R) -> Result<Dataset> {
    let mut lines = BufReader::new(input).lines();
    let header = lines.next().ok_or_else(|| Error::Invalid("empty dataset file".into()))??;
    let (n, p, declared) = parse_header(&header)?;
    let mut points = Vec::new();
    let mut warnings = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = i + 2;
        let vals = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::Invalid(format!("line {row}: {e}")))?;
        if vals.len() != n * p {
            return Err(Error::Shape(format!("line {row}: {} values, expected {}", vals.len(), n * p)));
        }
        let x = DMatrix::from_column_slice(n, p, &vals);
        let err = orthonormality_error(&x);
        let point = if err <= READ_TOL.max(ORTHO_TOL) {
            StiefelPoint::with_tolerance(x, READ_TOL.max(ORTHO_TOL))?
        } else if err <= REPAIR_TOL {
            let msg = format!("line {row}: re-orthonormalized (error {err:.2e})");
            log::warn!("{msg}");
            warnings.push(msg);
            StiefelPoint::orthonormalize(&x)?
        } else {
            return Err(Error::NotOrthonormal(format!("line {row}: orthonormality error {err:.2e}")));
        };
        points.push(point);
    }
    if let Some(k) = declared {
        if k != points.len() {
            return Err(Error::Invalid(format!("header declares N={k}, file has {} rows", points.len())));
        }
    }
    Ok(Dataset { n, p, points, warnings })
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let f = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_dataset_from(f)
}

/// Values are written in shortest round-trip form, so reading the file back
/// gives the same bits.
pub fn write_dataset_to<W: Write>(mut out: W, points: &[StiefelPoint]) -> Result<()> {
    let first = points.first().ok_or_else(|| Error::Invalid("no observations to write".into()))?;
    let (n, p) = (first.n(), first.p());
    writeln!(out, "# stiefel n={n} p={p} N={}", points.len())?;
    let mut line = String::new();
    for x in points {
        if (x.n(), x.p()) != (n, p) {
            return Err(Error::Shape("observations differ in shape".into()));
        }
        line.clear();
        for (k, v) in x.matrix().iter().enumerate() {
            if k > 0 {
                line.push(',');
            }
            line.push_str(&v.to_string());
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn write_dataset(path: &Path, points: &[StiefelPoint]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut w = std::io::BufWriter::new(f);
    write_dataset_to(&mut w, points)?;
    w.flush()?;
    Ok(())
}

//! On-disk formats. Floats are written with shortest round-trip formatting.
//!
//! Field file: one JSON header line `{"d","n","box_half_width","t"}`, then
//! `n^d` little-endian `f64` pairs `(re, im)` in row-major order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, GridSpec};
use crate::recover::Sinogram;
use crate::solver::EvolutionRecord;
use crate::sweep::SweepResult;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FieldHeader {
    d: usize,
    n: usize,
    box_half_width: f64,
    t: f64,
}

pub fn write_field_to<W: Write>(mut w: W, field: &Field) -> Result<()> {
    let g = field.grid;
    let header = FieldHeader { d: g.d(), n: g.n(), box_half_width: g.box_half_width(), t: field.t };
    let line = serde_json::to_string(&header).map_err(|e| Error::Format(e.to_string()))?;
    w.write_all(line.as_bytes())?;
    w.write_all(b"\n")?;
    let mut buf = Vec::with_capacity(16 * field.values.len());
    for z in &field.values {
        buf.extend_from_slice(&z.re.to_le_bytes());
        buf.extend_from_slice(&z.im.to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn read_field_from<R: Read>(r: R) -> Result<Field> {
    let mut r = BufReader::new(r);
    let mut line = String::new();
    r.read_line(&mut line)?;
    if !line.ends_with('\n') {
        return Err(Error::Format("header line is not newline-terminated".into()));
    }
    let h: FieldHeader = serde_json::from_str(line.trim_end()).map_err(|e| Error::Format(format!("header: {e}")))?;
    let grid = GridSpec::new(h.d, h.n, h.box_half_width).map_err(|e| Error::Format(e.to_string()))?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != 16 * grid.len() {
        return Err(Error::Format(format!("expected {} payload bytes, found {}", 16 * grid.len(), bytes.len())));
    }
    let f = |c: &[u8]| f64::from_le_bytes(c.try_into().expect("8-byte chunk"));
    let values = bytes.chunks_exact(16).map(|c| Complex64::new(f(&c[..8]), f(&c[8..]))).collect();
    Field::new(grid, h.t, values).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_field(path: &Path, field: &Field) -> Result<()> {
    write_field_to(BufWriter::new(File::create(path)?), field)
}

pub fn read_field(path: &Path) -> Result<Field> {
    read_field_from(File::open(path)?)
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{other:?}")),
    }
}

/// Rows are offsets, columns are angles; the header row carries the angles.
fn write_table<W: Write, T: ToString>(w: W, sino: &Sinogram, cell: impl Fn(usize, usize) -> T) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["offset".to_string()];
    header.extend(sino.angles.iter().map(|a| a.to_string()));
    out.write_record(&header).map_err(csv_err)?;
    for (j, b) in sino.offsets.iter().enumerate() {
        let mut row = vec![b.to_string()];
        row.extend((0..sino.angles.len()).map(|i| cell(i, j).to_string()));
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_sinogram(values: &Path, mask: &Path, sino: &Sinogram) -> Result<()> {
    write_table(BufWriter::new(File::create(values)?), sino, |i, j| sino.values[i][j])?;
    write_table(BufWriter::new(File::create(mask)?), sino, |i, j| u8::from(sino.mask[i][j]))
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::Format(format!("not a number: {s:?}")))
}

/// `(angles, offsets, cells[angle][offset])`.
fn read_table(path: &Path) -> Result<(Vec<f64>, Vec<f64>, Vec<Vec<f64>>)> {
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = rdr.headers().map_err(csv_err)?.clone();
    if header.get(0) != Some("offset") {
        return Err(Error::Format(format!("{}: first header cell must be \"offset\"", path.display())));
    }
    let angles = header.iter().skip(1).map(parse_f64).collect::<Result<Vec<_>>>()?;
    let mut offsets = Vec::new();
    let mut cells = vec![Vec::new(); angles.len()];
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != angles.len() + 1 {
            return Err(Error::Format(format!("{}: ragged row", path.display())));
        }
        offsets.push(parse_f64(&rec[0])?);
        for (col, v) in cells.iter_mut().zip(rec.iter().skip(1)) {
            col.push(parse_f64(v)?);
        }
    }
    Ok((angles, offsets, cells))
}

pub fn read_sinogram(values: &Path, mask: &Path) -> Result<Sinogram> {
    let (angles, offsets, vals) = read_table(values)?;
    let (a2, o2, m) = read_table(mask)?;
    if a2 != angles || o2 != offsets {
        return Err(Error::Format("mask axes differ from value axes".into()));
    }
    let mask = m.into_iter().map(|col| col.into_iter().map(|v| v != 0.0).collect()).collect();
    Ok(Sinogram { angles, offsets, values: vals, mask, failures: Vec::new() })
}

pub fn write_monitors(path: &Path, rec: &EvolutionRecord) -> Result<()> {
    let mut out = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    out.write_record(["t", "l2", "wiener", "sup"]).map_err(csv_err)?;
    for i in 0..rec.monitor_times.len() {
        out.write_record([rec.monitor_times[i], rec.l2[i], rec.wiener[i], rec.sup[i]].map(|v| v.to_string()))
            .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_sweep_csv(path: &Path, res: &SweepResult) -> Result<()> {
    let mut out = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    out.write_record(["epsilon", "error_sup", "error_wiener", "residual_norm", "runtime_s"]).map_err(csv_err)?;
    for p in &res.points {
        out.write_record([p.epsilon, p.error_sup, p.error_wiener, p.residual_norm, p.runtime_s].map(|v| v.to_string()))
            .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

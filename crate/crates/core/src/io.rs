//! File formats: NDJSON measure samples, codebook JSON, embedding, label
//! and benchmark CSVs.

use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{DiscreteMeasure, MeasureSample};
use crate::quantize::Codebook;
use crate::synth::{BenchRecord, BenchResult};
use crate::vectorize::Embedding;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleHeader {
    ambient_dim: usize,
    ball_radius: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<usize>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MeasureLine {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

fn parse_err(line: usize, e: impl std::fmt::Display) -> Error {
    Error::Parse { line, message: e.to_string() }
}

/// Reads a header line `{"ambient_dim", "ball_radius", "labels"?}` followed
/// by one `{"points", "weights"}` object per line. Blank lines are skipped.
pub fn read_sample<R: BufRead>(reader: R) -> Result<MeasureSample> {
    let mut header: Option<SampleHeader> = None;
    let mut measures = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let Some(h) = &header else {
            header = Some(serde_json::from_str(&line).map_err(|e| parse_err(lineno, e))?);
            continue;
        };
        let m: MeasureLine = serde_json::from_str(&line).map_err(|e| parse_err(lineno, e))?;
        if let Some(p) = m.points.iter().find(|p| p.len() != h.ambient_dim) {
            return Err(parse_err(
                lineno,
                format!("point of dimension {} in a {}-dimensional sample", p.len(), h.ambient_dim),
            ));
        }
        let measure = DiscreteMeasure::new(m.points, m.weights, h.ball_radius)
            .map_err(|e| parse_err(lineno, e))?;
        measures.push(measure);
    }
    let header = header.ok_or_else(|| parse_err(0, "missing header line"))?;
    if measures.is_empty() {
        return Err(Error::EmptySample);
    }
    MeasureSample::new(measures, header.labels)
}

pub fn write_sample<W: Write>(sample: &MeasureSample, mut w: W) -> Result<()> {
    let header = SampleHeader {
        ambient_dim: sample.dim(),
        ball_radius: sample.ball_radius(),
        labels: sample.labels().map(<[usize]>::to_vec),
    };
    serde_json::to_writer(&mut w, &header)?;
    writeln!(w)?;
    for m in sample.measures() {
        let line = MeasureLine {
            points: m.points().map(<[f64]>::to_vec).collect(),
            weights: m.weights().to_vec(),
        };
        serde_json::to_writer(&mut w, &line)?;
        writeln!(w)?;
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CodebookFile {
    ambient_dim: usize,
    ball_radius: f64,
    codepoints: Vec<Vec<f64>>,
}

pub fn read_codebook<R: Read>(reader: R) -> Result<Codebook> {
    let f: CodebookFile = serde_json::from_reader(reader)?;
    if let Some(c) = f.codepoints.iter().find(|c| c.len() != f.ambient_dim) {
        return Err(Error::DimensionMismatch { expected: f.ambient_dim, found: c.len() });
    }
    Codebook::new(f.codepoints, f.ball_radius)
}

pub fn write_codebook<W: Write>(cb: &Codebook, mut w: W) -> Result<()> {
    let f = CodebookFile { ambient_dim: cb.dim(), ball_radius: cb.ball_radius(), codepoints: cb.to_vecs() };
    serde_json::to_writer_pretty(&mut w, &f)?;
    writeln!(w)?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize, W: Write>(value: &T, mut w: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(())
}

/// 17 significant digits, enough to round-trip any `f64`.
fn full(x: f64) -> String {
    format!("{x:.16e}")
}

/// Header `v1,...,vk`, plus a trailing `label` column when labels are known.
pub fn write_embedding<W: Write>(e: &Embedding, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<String> = (1..=e.k()).map(|j| format!("v{j}")).collect();
    if e.labels.is_some() {
        header.push("label".into());
    }
    out.write_record(&header)?;
    for (i, row) in e.rows.iter().enumerate() {
        let mut rec: Vec<String> = row.iter().map(|&x| full(x)).collect();
        if let Some(labels) = &e.labels {
            rec.push(labels[i].to_string());
        }
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_embedding<R: Read>(reader: R) -> Result<Embedding> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers()?.clone();
    let label_col = header.iter().position(|h| h == "label");
    for (j, h) in header.iter().enumerate() {
        if Some(j) != label_col && !(h.starts_with('v') && h[1..].parse::<usize>().is_ok()) {
            return Err(parse_err(1, format!("unexpected column {h:?}")));
        }
    }
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let lineno = i + 2;
        let mut row = Vec::with_capacity(rec.len());
        for (j, field) in rec.iter().enumerate() {
            if Some(j) == label_col {
                labels.push(field.trim().parse::<usize>().map_err(|e| parse_err(lineno, e))?);
            } else {
                let x: f64 = field.trim().parse().map_err(|e| parse_err(lineno, e))?;
                if !x.is_finite() {
                    return Err(parse_err(lineno, "non-finite value"));
                }
                row.push(x);
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptySample);
    }
    Embedding::new(rows, label_col.map(|_| labels))
}

/// Single column `cluster`, one row per measure.
pub fn write_labels<W: Write>(labels: &[usize], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["cluster"])?;
    for l in labels {
        out.write_record([l.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a one-column label file; the header name is not checked.
pub fn read_labels<R: Read>(reader: R) -> Result<Vec<usize>> {
    let mut rdr = csv::Reader::from_reader(reader);
    if rdr.headers()?.len() != 1 {
        return Err(parse_err(1, "expected a single column"));
    }
    rdr.records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec?;
            rec[0].trim().parse::<usize>().map_err(|e| parse_err(i + 2, e))
        })
        .collect()
}

/// `method,sweep_name,sweep_value,rep,nmi,wall_ms`
pub fn write_results<W: Write>(records: &[BenchRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["method", "sweep_name", "sweep_value", "rep", "nmi", "wall_ms"])?;
    for r in records {
        out.write_record([
            r.method.name().to_string(),
            r.sweep_name.clone(),
            r.sweep_value.to_string(),
            r.rep.to_string(),
            r.nmi.to_string(),
            r.wall_ms.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// `method,sweep_name,sweep_value,reps,mean,ci95`
pub fn write_aggregate<W: Write>(results: &[BenchResult], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["method", "sweep_name", "sweep_value", "reps", "mean", "ci95"])?;
    for r in results {
        out.write_record([
            r.method.name().to_string(),
            r.sweep_name.clone(),
            r.sweep_value.to_string(),
            r.nmis.len().to_string(),
            r.mean.to_string(),
            r.ci95.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

//! On-disk formats: feature bundles, metrics, label tables, truth pairings and run reports.
//!
//! Binary files are little-endian. Feature bundles store `f32`, metrics `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::driver::IterationRecord;
use crate::error::{DgmError, Result};
use crate::eval::TruthPairing;
use crate::model::{Assignment, CameraGraph, CostMatrix, Metric, SoftLabelMatrix, Target, Tracklet};

pub const BUNDLE_MAGIC: [u8; 4] = *b"DGMF";
pub const METRIC_MAGIC: [u8; 4] = *b"DGMM";
pub const FORMAT_VERSION: u32 = 1;
/// Stored person id meaning "unknown".
pub const UNKNOWN_PERSON: u32 = u32::MAX;

// Upper bound on speculative allocation driven by header fields.
const PREALLOC_LIMIT: usize = 1 << 16;

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => DgmError::TruncatedFile,
        _ => DgmError::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32<R: Read>(r: &mut R) -> Result<f32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(f32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_header<R: Read>(r: &mut R, magic: [u8; 4]) -> Result<()> {
    let mut found = [0u8; 4];
    read_exact(r, &mut found)?;
    if found != magic {
        return Err(DgmError::BadMagic { expected: magic, found });
    }
    let version = read_u32(r)?;
    if version != FORMAT_VERSION {
        return Err(DgmError::VersionUnsupported(version));
    }
    Ok(())
}

fn expect_eof<R: Read>(r: &mut R) -> Result<()> {
    let mut probe = [0u8; 1];
    match r.read(&mut probe)? {
        0 => Ok(()),
        _ => Err(DgmError::Parse("trailing bytes after declared content".into())),
    }
}

fn to_u32(value: usize, what: &str) -> Result<u32> {
    u32::try_from(value).map_err(|_| DgmError::Parse(format!("{what} {value} does not fit in u32")))
}

pub fn write_bundle_to<W: Write>(graph: &CameraGraph, w: &mut W) -> Result<()> {
    let dim = graph.dim().unwrap_or(0);
    w.write_all(&BUNDLE_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&to_u32(graph.len(), "tracklet count")?.to_le_bytes())?;
    w.write_all(&to_u32(dim, "dimension")?.to_le_bytes())?;
    for t in graph.tracklets() {
        let pid = match t.person_id() {
            Some(UNKNOWN_PERSON) => {
                return Err(DgmError::Parse(format!("person id {UNKNOWN_PERSON} is reserved")));
            }
            Some(p) => p,
            None => UNKNOWN_PERSON,
        };
        w.write_all(&pid.to_le_bytes())?;
        w.write_all(&to_u32(t.len(), "frame count")?.to_le_bytes())?;
        for frame in t.frames() {
            for &x in frame.iter() {
                let v = x as f32;
                if !v.is_finite() {
                    return Err(DgmError::NonFinite("feature value outside f32 range"));
                }
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn read_bundle_from<R: Read>(r: &mut R) -> Result<CameraGraph> {
    read_header(r, BUNDLE_MAGIC)?;
    let count = read_u32(r)? as usize;
    let dim = read_u32(r)? as usize;
    if dim == 0 && count > 0 {
        return Err(DgmError::DimensionMismatch { expected: 1, found: 0 });
    }
    let mut tracklets = Vec::with_capacity(count.min(PREALLOC_LIMIT));
    for index in 0..count {
        let pid = read_u32(r)?;
        let frames_len = read_u32(r)? as usize;
        if frames_len == 0 {
            return Err(DgmError::EmptyTracklet(index));
        }
        let mut frames = Vec::with_capacity(frames_len.min(PREALLOC_LIMIT));
        for _ in 0..frames_len {
            let mut frame = DVector::zeros(dim);
            for x in frame.iter_mut() {
                *x = f64::from(read_f32(r)?);
            }
            frames.push(frame);
        }
        let person = (pid != UNKNOWN_PERSON).then_some(pid);
        tracklets.push(Tracklet::new(person, frames)?);
    }
    expect_eof(r)?;
    CameraGraph::new(tracklets)
}

pub fn write_bundle(graph: &CameraGraph, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_bundle_to(graph, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_bundle(path: &Path) -> Result<CameraGraph> {
    read_bundle_from(&mut BufReader::new(File::open(path)?))
}

pub fn write_metric_to<W: Write>(metric: &Metric, w: &mut W) -> Result<()> {
    let m = metric.matrix();
    w.write_all(&METRIC_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&to_u32(metric.dim(), "dimension")?.to_le_bytes())?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            w.write_all(&m[(i, j)].to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_metric_from<R: Read>(r: &mut R) -> Result<Metric> {
    read_header(r, METRIC_MAGIC)?;
    let dim = read_u32(r)? as usize;
    if dim == 0 {
        return Err(DgmError::DimensionMismatch { expected: 1, found: 0 });
    }
    let mut values = Vec::with_capacity(dim.saturating_mul(dim).min(PREALLOC_LIMIT));
    for _ in 0..dim.saturating_mul(dim) {
        values.push(read_f64(r)?);
    }
    expect_eof(r)?;
    Metric::new(DMatrix::from_row_slice(dim, dim, &values))
}

pub fn write_metric(metric: &Metric, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_metric_to(metric, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_metric(path: &Path) -> Result<Metric> {
    read_metric_from(&mut BufReader::new(File::open(path)?))
}

/// One line of a label table. `j = None` is the dummy column.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelRow {
    pub i: usize,
    pub j: Option<usize>,
    /// Hard assignment indicator.
    pub y: u8,
    pub cost: f64,
    pub soft_label: f64,
}

#[derive(Serialize, Deserialize)]
struct RawLabelRow {
    i: usize,
    j: i64,
    y: u8,
    cost: f64,
    soft_label: f64,
}

/// Every (i, j) cell in row-major order, plus one dummy row per unmatched tracklet.
///
/// Dummy rows carry the dummy cost and a soft label of zero.
pub fn label_rows(
    costs: &CostMatrix,
    assignment: &Assignment,
    labels: &SoftLabelMatrix,
    dummy_cost: f64,
) -> Result<Vec<LabelRow>> {
    if assignment.len() != costs.rows() || labels.labels().shape() != costs.matrix().shape() {
        return Err(DgmError::DimensionMismatch {
            expected: costs.rows(),
            found: assignment.len(),
        });
    }
    let mut rows = Vec::with_capacity(costs.rows() * (costs.cols() + 1));
    for i in 0..costs.rows() {
        for j in 0..costs.cols() {
            rows.push(LabelRow {
                i,
                j: Some(j),
                y: u8::from(assignment.is_matched(i, j)),
                cost: costs.get(i, j),
                soft_label: labels.get(i, j),
            });
        }
        if assignment.targets()[i].is_dummy() {
            rows.push(LabelRow {
                i,
                j: None,
                y: 1,
                cost: dummy_cost,
                soft_label: 0.0,
            });
        }
    }
    Ok(rows)
}

/// Rebuilds the hard assignment of a label table.
pub fn assignment_from_rows(rows: &[LabelRow], num_rows: usize, num_cols: usize) -> Result<Assignment> {
    let mut targets = vec![None; num_rows];
    for row in rows.iter().filter(|r| r.y == 1) {
        let slot = targets
            .get_mut(row.i)
            .ok_or_else(|| DgmError::InvalidAssignment(format!("row {} out of range", row.i)))?;
        if slot.is_some() {
            return Err(DgmError::InvalidAssignment(format!("row {} assigned twice", row.i)));
        }
        *slot = Some(row.j.map_or(Target::Dummy, Target::Column));
    }
    let targets = targets
        .into_iter()
        .enumerate()
        .map(|(i, t)| t.ok_or_else(|| DgmError::InvalidAssignment(format!("row {i} has no assignment"))))
        .collect::<Result<Vec<_>>>()?;
    Assignment::new(targets, num_cols)
}

/// Table shape implied by the indices present: (rows, columns).
pub fn label_table_shape(rows: &[LabelRow]) -> (usize, usize) {
    let m = rows.iter().map(|r| r.i + 1).max().unwrap_or(0);
    let n = rows.iter().filter_map(|r| r.j.map(|j| j + 1)).max().unwrap_or(0);
    (m, n)
}

pub fn write_labels_to<W: Write>(rows: &[LabelRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for row in rows {
        let j = match row.j {
            Some(j) => i64::try_from(j).map_err(|_| DgmError::Parse(format!("column {j} too large")))?,
            None => -1,
        };
        out.serialize(RawLabelRow {
            i: row.i,
            j,
            y: row.y,
            cost: row.cost,
            soft_label: row.soft_label,
        })?;
    }
    if rows.is_empty() {
        out.write_record(["i", "j", "y", "cost", "soft_label"])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_labels_from<R: Read>(r: R) -> Result<Vec<LabelRow>> {
    let mut input = csv::Reader::from_reader(r);
    let header = input.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["i", "j", "y", "cost", "soft_label"] {
        return Err(DgmError::Parse(format!("unexpected label header {header:?}")));
    }
    input
        .deserialize::<RawLabelRow>()
        .map(|raw| {
            let raw = raw?;
            let j = match raw.j {
                -1 => None,
                j if j >= 0 => Some(j as usize),
                j => return Err(DgmError::Parse(format!("invalid column index {j}"))),
            };
            if raw.y > 1 {
                return Err(DgmError::Parse(format!("hard label must be 0 or 1, got {}", raw.y)));
            }
            Ok(LabelRow {
                i: raw.i,
                j,
                y: raw.y,
                cost: raw.cost,
                soft_label: raw.soft_label,
            })
        })
        .collect()
}

pub fn write_labels(rows: &[LabelRow], path: &Path) -> Result<()> {
    write_labels_to(rows, File::create(path)?)
}

pub fn read_labels(path: &Path) -> Result<Vec<LabelRow>> {
    read_labels_from(File::open(path)?)
}

#[derive(Serialize, Deserialize)]
struct RawTruthRow {
    i: usize,
    j: i64,
}

/// Truth pairings as CSV `i,j`, one line per camera-A tracklet, `j = -1` for no partner.
pub fn write_truth_to<W: Write>(truth: &[Option<usize>], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for (i, j) in truth.iter().enumerate() {
        out.serialize(RawTruthRow {
            i,
            j: j.map_or(-1, |j| j as i64),
        })?;
    }
    if truth.is_empty() {
        out.write_record(["i", "j"])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_truth_from<R: Read>(r: R) -> Result<TruthPairing> {
    let mut input = csv::Reader::from_reader(r);
    let mut truth = Vec::new();
    for raw in input.deserialize::<RawTruthRow>() {
        let raw = raw?;
        if raw.i != truth.len() {
            return Err(DgmError::Parse(format!("truth rows out of order at i = {}", raw.i)));
        }
        truth.push(match raw.j {
            -1 => None,
            j if j >= 0 => Some(j as usize),
            j => return Err(DgmError::Parse(format!("invalid column index {j}"))),
        });
    }
    Ok(truth)
}

pub fn write_truth(truth: &[Option<usize>], path: &Path) -> Result<()> {
    write_truth_to(truth, File::create(path)?)
}

pub fn read_truth(path: &Path) -> Result<TruthPairing> {
    read_truth_from(File::open(path)?)
}

/// Scores attached to a report; absent fields were not computed by the producing command.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalSection {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f_score: Option<f64>,
    pub cmc: Vec<f64>,
    pub map: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    /// Echo of the parameters that produced the report.
    pub config: serde_json::Value,
    pub history: Vec<IterationRecord>,
    pub eval: EvalSection,
}

pub fn write_report_to<W: Write>(report: &Report, mut w: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, report)?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn read_report_from<R: Read>(r: R) -> Result<Report> {
    Ok(serde_json::from_reader(r)?)
}

pub fn write_report(report: &Report, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_report_to(report, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<Report> {
    read_report_from(BufReader::new(File::open(path)?))
}

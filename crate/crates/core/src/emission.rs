//! Emission matrices: per-frame phoneme log-posteriors plus boundary probabilities.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inventory::{PhonemeId, PhonemeInventory};

/// 16-byte magic at the start of every binary emission file.
pub const EMISSION_MAGIC: &[u8; 16] = b"DYSFLUXEMIT\0\0\0\0\0";

/// Row-sum tolerance applied to externally supplied emissions.
pub const ROW_SUM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct EmissionInput {
    frames: usize,
    n: usize,
    log_posteriors: Vec<f64>,
    boundary_probs: Vec<f64>,
    frame_duration: f64,
}

impl EmissionInput {
    /// `log_posteriors` is row-major `frames × n`. Only shapes and the frame
    /// duration are checked here; use [`validate_emission`] for content.
    pub fn new(n: usize, log_posteriors: Vec<f64>, boundary_probs: Vec<f64>, frame_duration: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Emission("zero phoneme columns".into()));
        }
        if log_posteriors.len() % n != 0 {
            return Err(Error::Shape(format!(
                "{} values is not a multiple of {n} columns",
                log_posteriors.len()
            )));
        }
        let frames = log_posteriors.len() / n;
        if boundary_probs.len() != frames {
            return Err(Error::Shape(format!(
                "{} boundary probabilities for {frames} frames",
                boundary_probs.len()
            )));
        }
        if !(frame_duration.is_finite() && frame_duration > 0.0) {
            return Err(Error::Emission(format!(
                "frame duration must be positive, got {frame_duration}"
            )));
        }
        Ok(Self {
            frames,
            n,
            log_posteriors,
            boundary_probs,
            frame_duration,
        })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>, boundary_probs: Vec<f64>, frame_duration: f64) -> Result<Self> {
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Shape("ragged emission rows".into()));
        }
        Self::new(n, rows.into_iter().flatten().collect(), boundary_probs, frame_duration)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn frame_duration(&self) -> f64 {
        self.frame_duration
    }

    pub fn duration_s(&self) -> f64 {
        self.frames as f64 * self.frame_duration
    }

    #[inline]
    pub fn row(&self, t: usize) -> &[f64] {
        &self.log_posteriors[t * self.n..(t + 1) * self.n]
    }

    #[inline]
    pub fn log_prob(&self, t: usize, p: PhonemeId) -> f64 {
        self.log_posteriors[t * self.n + p.index()]
    }

    pub fn boundary_probs(&self) -> &[f64] {
        &self.boundary_probs
    }

    pub fn log_posteriors(&self) -> &[f64] {
        &self.log_posteriors
    }

    /// Copy of frames `range`; frame indices restart at 0.
    pub fn slice(&self, range: Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.frames {
            return Err(Error::InvalidArgument(format!(
                "frame range {}..{} outside 0..{}",
                range.start, range.end, self.frames
            )));
        }
        Ok(Self {
            frames: range.len(),
            n: self.n,
            log_posteriors: self.log_posteriors[range.start * self.n..range.end * self.n].to_vec(),
            boundary_probs: self.boundary_probs[range].to_vec(),
            frame_duration: self.frame_duration,
        })
    }

    /// Adds `c` to every entry of frame `t`.
    pub fn shift_row(&mut self, t: usize, c: f64) {
        for v in &mut self.log_posteriors[t * self.n..(t + 1) * self.n] {
            *v += c;
        }
    }

    pub fn set_boundary(&mut self, t: usize, b: f64) {
        self.boundary_probs[t] = b;
    }

    pub fn argmax(&self, t: usize) -> PhonemeId {
        let mut best = 0;
        let row = self.row(t);
        for (k, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = k;
            }
        }
        PhonemeId(best as u16)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Shape { expected: usize, found: usize },
    NonFinite { frame: usize, phoneme: usize },
    RowSum { frame: usize, sum: f64 },
    BoundaryRange { frame: usize, value: f64 },
}

fn trim_float(x: f64) -> String {
    let s = format!("{x:.6}");
    let s = s.trim_end_matches('0');
    s.trim_end_matches('.').to_string()
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Shape { expected, found } => {
                write!(f, "expected {expected} phoneme columns, found {found}")
            }
            Violation::NonFinite { frame, phoneme } => {
                write!(f, "non-finite value at ({frame}, {phoneme})")
            }
            Violation::RowSum { frame, sum } => {
                write!(f, "row {frame} sum {} exceeds tolerance", trim_float(*sum))
            }
            Violation::BoundaryRange { frame, value } => {
                write!(f, "boundary probability {value} at frame {frame} outside [0, 1]")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_pass(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn messages(&self) -> Vec<String> {
        self.violations.iter().map(ToString::to_string).collect()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_pass() {
            Ok(())
        } else {
            Err(Error::Emission(self.messages().join("; ")))
        }
    }
}

/// Checks shape against the inventory, finiteness, row normalization and
/// boundary range. `-inf` entries are legal (zero probability).
pub fn validate_emission(e: &EmissionInput, inv: &PhonemeInventory) -> ValidationReport {
    validate_with_tolerance(e, inv, ROW_SUM_TOLERANCE)
}

pub fn validate_with_tolerance(e: &EmissionInput, inv: &PhonemeInventory, tol: f64) -> ValidationReport {
    let mut violations = Vec::new();
    if e.n() != inv.len() {
        violations.push(Violation::Shape {
            expected: inv.len(),
            found: e.n(),
        });
    }
    for t in 0..e.frames() {
        let mut finite = true;
        for (k, &v) in e.row(t).iter().enumerate() {
            if v.is_nan() || v == f64::INFINITY {
                violations.push(Violation::NonFinite { frame: t, phoneme: k });
                finite = false;
            }
        }
        if finite {
            let sum: f64 = e.row(t).iter().map(|v| v.exp()).sum();
            if (sum - 1.0).abs() > tol {
                violations.push(Violation::RowSum { frame: t, sum });
            }
        }
        let b = e.boundary_probs()[t];
        if !(0.0..=1.0).contains(&b) {
            violations.push(Violation::BoundaryRange { frame: t, value: b });
        }
    }
    ValidationReport { violations }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmissionHeader {
    pub t: usize,
    pub n: usize,
    pub frame_duration: f64,
    pub inventory_hash: String,
}

/// Binary layout: magic, u32-LE header length, JSON header, `t×n` f32-LE
/// log-posteriors (row-major), then `t` f32-LE boundary probabilities.
pub fn write_binary(path: &Path, e: &EmissionInput, inventory_hash: &str) -> Result<()> {
    let file = File::create(path).map_err(|err| Error::io(path, err))?;
    let mut w = BufWriter::new(file);
    encode_binary(&mut w, e, inventory_hash).map_err(|err| Error::io(path, err))?;
    w.flush().map_err(|err| Error::io(path, err))
}

pub fn encode_binary<W: Write>(w: &mut W, e: &EmissionInput, inventory_hash: &str) -> std::io::Result<()> {
    let header = EmissionHeader {
        t: e.frames(),
        n: e.n(),
        frame_duration: e.frame_duration(),
        inventory_hash: inventory_hash.to_string(),
    };
    let json = serde_json::to_vec(&header).map_err(std::io::Error::other)?;
    w.write_all(EMISSION_MAGIC)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for v in e.log_posteriors() {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    for v in e.boundary_probs() {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_binary(path: &Path) -> Result<(EmissionInput, EmissionHeader)> {
    let file = File::open(path).map_err(|err| Error::io(path, err))?;
    let mut r = BufReader::new(file);
    let bad = |reason: String| Error::EmissionFormat {
        path: path.to_path_buf(),
        reason,
    };
    let mut magic = [0u8; 16];
    r.read_exact(&mut magic)
        .map_err(|_| bad("truncated before magic".into()))?;
    if &magic != EMISSION_MAGIC {
        return Err(bad("bad magic".into()));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)
        .map_err(|_| bad("truncated header length".into()))?;
    let len = u32::from_le_bytes(len) as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json).map_err(|_| bad("truncated header".into()))?;
    let header: EmissionHeader = serde_json::from_slice(&json).map_err(|err| bad(format!("header: {err}")))?;
    let count = header
        .t
        .checked_mul(header.n)
        .ok_or_else(|| bad("header shape overflows".into()))?;
    let mut read_f32s = |k: usize, what: &str| -> Result<Vec<f64>> {
        let mut buf = vec![0u8; k * 4];
        r.read_exact(&mut buf).map_err(|_| bad(format!("truncated {what}")))?;
        Ok(buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect())
    };
    let logp = read_f32s(count, "log-posteriors")?;
    let bounds = read_f32s(header.t, "boundary probabilities")?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(|err| Error::io(path, err))?;
    if !rest.is_empty() {
        return Err(bad(format!("{} trailing bytes", rest.len())));
    }
    let e = EmissionInput::new(header.n, logp, bounds, header.frame_duration).map_err(|err| bad(err.to_string()))?;
    Ok((e, header))
}

/// CSV layout: header `frame_duration,boundary,<SYM1>,...,<SYMn>`, one row per frame.
pub fn write_csv(path: &Path, e: &EmissionInput, inv: &PhonemeInventory) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["frame_duration".to_string(), "boundary".to_string()];
    header.extend(inv.symbols().iter().cloned());
    w.write_record(&header)?;
    for t in 0..e.frames() {
        let mut rec = vec![e.frame_duration().to_string(), e.boundary_probs()[t].to_string()];
        rec.extend(e.row(t).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|err| Error::io(path, err))
}

pub fn read_csv(path: &Path, inv: &PhonemeInventory) -> Result<EmissionInput> {
    let bad = |reason: String| Error::EmissionFormat {
        path: path.to_path_buf(),
        reason,
    };
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.len() < 3 || &header[0] != "frame_duration" || &header[1] != "boundary" {
        return Err(bad("header must start with frame_duration,boundary".into()));
    }
    let labels: Vec<&str> = header.iter().skip(2).collect();
    if labels.len() != inv.len() || labels.iter().zip(inv.symbols()).any(|(a, b)| a != b) {
        return Err(bad("phoneme columns do not match the inventory order".into()));
    }
    let mut frame_duration = None;
    let mut logp = Vec::new();
    let mut bounds = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let parse = |s: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|_| bad(format!("row {i}: cannot parse `{s}`")))
        };
        let fd = parse(&rec[0])?;
        match frame_duration {
            None => frame_duration = Some(fd),
            Some(prev) if prev != fd => return Err(bad(format!("row {i}: frame_duration changes"))),
            Some(_) => {}
        }
        bounds.push(parse(&rec[1])?);
        for s in rec.iter().skip(2) {
            logp.push(parse(s)?);
        }
    }
    let fd = frame_duration.ok_or_else(|| bad("no frames".into()))?;
    EmissionInput::new(inv.len(), logp, bounds, fd).map_err(|err| bad(err.to_string()))
}

/// Reads either format: `.csv` by extension, anything else must carry the magic.
/// Binary files are checked against `inv`'s content hash.
pub fn load(path: &Path, inv: &PhonemeInventory) -> Result<EmissionInput> {
    if path.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")) {
        return read_csv(path, inv);
    }
    let (e, header) = read_binary(path)?;
    if header.inventory_hash != inv.content_hash() {
        return Err(Error::EmissionFormat {
            path: path.to_path_buf(),
            reason: "inventory hash does not match the configured inventory".into(),
        });
    }
    Ok(e)
}

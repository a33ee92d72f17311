//! Run-length phoneme alignments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inventory::{PhonemeId, PhonemeInventory};

/// One phoneme occupying frames `start..end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Segment {
    pub phoneme: PhonemeId,
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn new(phoneme: PhonemeId, start: usize, end: usize) -> Self {
        Self { phoneme, start, end }
    }

    pub fn frames(&self) -> usize {
        self.end - self.start
    }
}

/// Canonical run-length alignment: segments tile `0..total` with no gaps and
/// adjacent segments carry different labels.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentSegments {
    segments: Vec<Segment>,
    frame_duration: f64,
}

impl AlignmentSegments {
    /// Checks the canonical-form invariants. An empty list is allowed.
    pub fn new(segments: Vec<Segment>, frame_duration: f64) -> Result<Self> {
        if !(frame_duration.is_finite() && frame_duration > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "frame duration must be positive, got {frame_duration}"
            )));
        }
        let mut expected_start = 0;
        for (i, s) in segments.iter().enumerate() {
            if s.start != expected_start {
                return Err(Error::InvalidArgument(format!(
                    "segment {i} starts at {} but previous ends at {expected_start}",
                    s.start
                )));
            }
            if s.end <= s.start {
                return Err(Error::InvalidArgument(format!("segment {i} is empty")));
            }
            if i > 0 && segments[i - 1].phoneme == s.phoneme {
                return Err(Error::InvalidArgument(format!(
                    "segments {} and {i} carry the same label",
                    i - 1
                )));
            }
            expected_start = s.end;
        }
        Ok(Self {
            segments,
            frame_duration,
        })
    }

    /// Merges equal-label neighbours and drops empty segments. Input must be
    /// contiguous from frame 0.
    pub fn canonicalize(raw: &[Segment], frame_duration: f64) -> Result<Self> {
        let mut out: Vec<Segment> = Vec::with_capacity(raw.len());
        for s in raw.iter().filter(|s| s.end > s.start) {
            match out.last_mut() {
                Some(last) if last.phoneme == s.phoneme && last.end == s.start => last.end = s.end,
                _ => out.push(*s),
            }
        }
        Self::new(out, frame_duration)
    }

    /// Run-length encodes a per-frame labelling.
    pub fn from_frame_labels(labels: &[PhonemeId], frame_duration: f64) -> Result<Self> {
        let mut segs: Vec<Segment> = Vec::new();
        for (t, &p) in labels.iter().enumerate() {
            match segs.last_mut() {
                Some(last) if last.phoneme == p => last.end = t + 1,
                _ => segs.push(Segment::new(p, t, t + 1)),
            }
        }
        Self::new(segs, frame_duration)
    }

    /// Builds consecutive segments from `(label, frame count)` runs.
    pub fn from_runs(runs: &[(PhonemeId, usize)], frame_duration: f64) -> Result<Self> {
        let mut t = 0;
        let raw: Vec<Segment> = runs
            .iter()
            .map(|&(p, len)| {
                let s = Segment::new(p, t, t + len);
                t += len;
                s
            })
            .collect();
        Self::canonicalize(&raw, frame_duration)
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn frame_duration(&self) -> f64 {
        self.frame_duration
    }

    pub fn total_frames(&self) -> usize {
        self.segments.last().map_or(0, |s| s.end)
    }

    pub fn labels(&self) -> Vec<PhonemeId> {
        self.segments.iter().map(|s| s.phoneme).collect()
    }

    pub fn frame_labels(&self) -> Vec<PhonemeId> {
        let mut out = Vec::with_capacity(self.total_frames());
        for s in &self.segments {
            out.extend(std::iter::repeat(s.phoneme).take(s.frames()));
        }
        out
    }

    pub fn start_s(&self, i: usize) -> f64 {
        self.segments[i].start as f64 * self.frame_duration
    }

    pub fn end_s(&self, i: usize) -> f64 {
        self.segments[i].end as f64 * self.frame_duration
    }

    pub fn duration_s(&self, i: usize) -> f64 {
        self.segments[i].frames() as f64 * self.frame_duration
    }

    /// Shifts every segment by `offset` frames. The result no longer starts at
    /// 0, so it is returned as a plain vector.
    pub fn offset_segments(&self, offset: usize) -> Vec<Segment> {
        self.segments
            .iter()
            .map(|s| Segment::new(s.phoneme, s.start + offset, s.end + offset))
            .collect()
    }

    pub fn to_records(&self, inv: &PhonemeInventory) -> Vec<SegmentRecord> {
        (0..self.len())
            .map(|i| SegmentRecord {
                phoneme: inv.label(self.segments[i].phoneme).to_string(),
                start_s: round_s(self.start_s(i)),
                end_s: round_s(self.end_s(i)),
            })
            .collect()
    }

    /// Inverse of [`to_records`](Self::to_records); times are snapped to the
    /// nearest frame.
    pub fn from_records(records: &[SegmentRecord], inv: &PhonemeInventory, frame_duration: f64) -> Result<Self> {
        let raw = records
            .iter()
            .map(|r| {
                Ok(Segment::new(
                    inv.id(&r.phoneme)?,
                    (r.start_s / frame_duration).round() as usize,
                    (r.end_s / frame_duration).round() as usize,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(raw, frame_duration)
    }
}

/// Rounds seconds to 1e-4 for serialized output.
pub fn round_s(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

/// JSON form of one segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub phoneme: String,
    pub start_s: f64,
    pub end_s: f64,
}

//! 2D alignment between reference phonemes (rows) and decoded segments (columns).
//!
//! The non-monotonic view assigns every column to its most similar reference
//! row; the DTW view is the classical monotonic warping path over the same
//! similarity grid with cell cost `1 − similarity`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inventory::{PhonemeId, PhonemeInventory};
use crate::reference::ReferenceText;
use crate::segments::{AlignmentSegments, SegmentRecord};

/// Default similarity needed before a column is assigned to a row.
pub const DEFAULT_TAU_ASSIGN: f64 = 0.6;

const TIE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Alignment2D {
    reference: ReferenceText,
    segments: AlignmentSegments,
    similarity: Vec<f64>,
    assignment: Vec<Option<usize>>,
    sil_cols: Vec<bool>,
}

impl Alignment2D {
    /// Assembles a grid from an externally computed assignment. The
    /// similarity grid is always recomputed from the inventory.
    pub fn from_parts(
        reference: ReferenceText,
        segments: AlignmentSegments,
        assignment: Vec<Option<usize>>,
        inv: &PhonemeInventory,
    ) -> Result<Self> {
        if reference.is_empty() {
            return Err(Error::Empty("reference text"));
        }
        if segments.is_empty() {
            return Err(Error::Empty("decoded segments"));
        }
        if assignment.len() != segments.len() {
            return Err(Error::Shape(format!(
                "{} assignments for {} columns",
                assignment.len(),
                segments.len()
            )));
        }
        if let Some(bad) = assignment.iter().flatten().find(|&&r| r >= reference.len()) {
            return Err(Error::Shape(format!("assignment to missing row {bad}")));
        }
        let similarity = similarity_grid(reference.phonemes(), &segments.labels(), inv)?;
        let sil_cols = segments.labels().iter().map(|&p| inv.is_sil(p)).collect();
        Ok(Self {
            reference,
            segments,
            similarity,
            assignment,
            sil_cols,
        })
    }

    pub fn rows(&self) -> usize {
        self.reference.len()
    }

    pub fn cols(&self) -> usize {
        self.segments.len()
    }

    #[inline]
    pub fn sim(&self, row: usize, col: usize) -> f64 {
        self.similarity[row * self.cols() + col]
    }

    pub fn similarity(&self) -> &[f64] {
        &self.similarity
    }

    pub fn assignment(&self) -> &[Option<usize>] {
        &self.assignment
    }

    pub fn reference(&self) -> &ReferenceText {
        &self.reference
    }

    pub fn segments(&self) -> &AlignmentSegments {
        &self.segments
    }

    pub fn label(&self, col: usize) -> PhonemeId {
        self.segments.segments()[col].phoneme
    }

    pub fn is_sil(&self, col: usize) -> bool {
        self.sil_cols[col]
    }

    /// Best similarity over all rows for `col`.
    pub fn col_max(&self, col: usize) -> f64 {
        (0..self.rows()).map(|r| self.sim(r, col)).fold(0.0, f64::max)
    }

    /// Time span of column `col` in seconds.
    pub fn span_s(&self, col: usize) -> (f64, f64) {
        (self.segments.start_s(col), self.segments.end_s(col))
    }

    /// Monotonic DTW over this grid.
    pub fn dtw(&self) -> DtwPath {
        dtw_on_grid(&self.similarity, self.rows(), self.cols())
    }

    pub fn export(&self, inv: &PhonemeInventory, path: Option<&DtwPath>) -> Alignment2DExport {
        Alignment2DExport {
            ref_phonemes: self
                .reference
                .phonemes()
                .iter()
                .map(|&p| inv.label(p).to_string())
                .collect(),
            ref_words: self.reference.words().iter().map(|w| w.text.clone()).collect(),
            segments: self.segments.to_records(inv),
            rows: self.rows(),
            cols: self.cols(),
            similarity: self.similarity.clone(),
            assignment: self.assignment.clone(),
            dtw_path: path.map(|p| p.steps.iter().map(|&(r, c)| [r, c]).collect()),
        }
    }
}

/// Plot-ready JSON form of a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alignment2DExport {
    pub ref_phonemes: Vec<String>,
    pub ref_words: Vec<String>,
    pub segments: Vec<SegmentRecord>,
    pub rows: usize,
    pub cols: usize,
    /// Row-major `rows × cols`.
    pub similarity: Vec<f64>,
    pub assignment: Vec<Option<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dtw_path: Option<Vec<[usize; 2]>>,
}

pub fn similarity_grid(rows: &[PhonemeId], cols: &[PhonemeId], inv: &PhonemeInventory) -> Result<Vec<f64>> {
    for &p in rows.iter().chain(cols) {
        if p.index() >= inv.len() {
            return Err(Error::UnknownLabel(p.to_string()));
        }
    }
    let mut out = Vec::with_capacity(rows.len() * cols.len());
    for &r in rows {
        for &c in cols {
            out.push(inv.sim(r, c));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DtwPath {
    pub steps: Vec<(usize, usize)>,
    pub total_cost: f64,
}

impl DtwPath {
    /// Rows the path visits in column `col`, ascending.
    pub fn rows_for_col(&self, col: usize) -> Vec<usize> {
        self.steps.iter().filter(|s| s.1 == col).map(|s| s.0).collect()
    }

    /// Columns the path visits in row `row`, ascending.
    pub fn cols_for_row(&self, row: usize) -> Vec<usize> {
        self.steps.iter().filter(|s| s.0 == row).map(|s| s.1).collect()
    }

    /// Per-column `(first row, last row)` visited; the path covers every column.
    pub fn col_row_ranges(&self, cols: usize) -> Vec<(usize, usize)> {
        let mut out = vec![(usize::MAX, 0); cols];
        for &(r, c) in &self.steps {
            out[c].0 = out[c].0.min(r);
            out[c].1 = out[c].1.max(r);
        }
        out
    }
}

/// DTW with steps {down, right, diagonal} and cell cost `1 − sim`. Backtrace
/// ties prefer the diagonal predecessor, then the left one, then the one above.
pub fn dtw_on_grid(sim: &[f64], rows: usize, cols: usize) -> DtwPath {
    assert!(rows > 0 && cols > 0 && sim.len() == rows * cols);
    let cost = |i: usize, j: usize| 1.0 - sim[i * cols + j];
    let mut acc = vec![f64::INFINITY; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            let best_prev = if i == 0 && j == 0 {
                0.0
            } else {
                let diag = if i > 0 && j > 0 {
                    acc[(i - 1) * cols + j - 1]
                } else {
                    f64::INFINITY
                };
                let left = if j > 0 { acc[i * cols + j - 1] } else { f64::INFINITY };
                let up = if i > 0 { acc[(i - 1) * cols + j] } else { f64::INFINITY };
                diag.min(left).min(up)
            };
            acc[i * cols + j] = cost(i, j) + best_prev;
        }
    }
    let total_cost = acc[rows * cols - 1];
    let mut steps = vec![(rows - 1, cols - 1)];
    let (mut i, mut j) = (rows - 1, cols - 1);
    while i > 0 || j > 0 {
        let diag = if i > 0 && j > 0 {
            acc[(i - 1) * cols + j - 1]
        } else {
            f64::INFINITY
        };
        let left = if j > 0 { acc[i * cols + j - 1] } else { f64::INFINITY };
        let up = if i > 0 { acc[(i - 1) * cols + j] } else { f64::INFINITY };
        if diag <= left && diag <= up {
            i -= 1;
            j -= 1;
        } else if left <= up {
            j -= 1;
        } else {
            i -= 1;
        }
        steps.push((i, j));
    }
    steps.reverse();
    DtwPath { steps, total_cost }
}

/// DTW over the non-SIL columns only, with steps mapped back to grid columns.
/// SIL columns are left off the path. `None` when every column is SIL.
pub fn speech_dtw(a: &Alignment2D) -> Option<DtwPath> {
    let speech: Vec<usize> = (0..a.cols()).filter(|&c| !a.is_sil(c)).collect();
    if speech.is_empty() {
        return None;
    }
    let mut sim = Vec::with_capacity(a.rows() * speech.len());
    for r in 0..a.rows() {
        sim.extend(speech.iter().map(|&c| a.sim(r, c)));
    }
    let p = dtw_on_grid(&sim, a.rows(), speech.len());
    Some(DtwPath {
        steps: p.steps.into_iter().map(|(r, c)| (r, speech[c])).collect(),
        total_cost: p.total_cost,
    })
}

/// Fills the similarity grid and assigns each non-SIL column to its most
/// similar row when that similarity reaches `tau_assign`. Among equally
/// similar rows the one nearest the DTW path wins, then the lower row.
pub fn build_2d(
    reference: &ReferenceText,
    segments: &AlignmentSegments,
    inv: &PhonemeInventory,
    tau_assign: f64,
) -> Result<Alignment2D> {
    let mut a = Alignment2D::from_parts(reference.clone(), segments.clone(), vec![None; segments.len()], inv)?;
    let path = a.dtw();
    let ranges = path.col_row_ranges(a.cols());
    for col in 0..a.cols() {
        if a.is_sil(col) {
            continue;
        }
        let best = a.col_max(col);
        if best < tau_assign {
            continue;
        }
        let (lo, hi) = ranges[col];
        let distance = |r: usize| {
            if r < lo {
                lo - r
            } else {
                r.saturating_sub(hi)
            }
        };
        a.assignment[col] = (0..a.rows())
            .filter(|&r| a.sim(r, col) >= best - TIE_EPS)
            .min_by_key(|&r| (distance(r), r));
    }
    Ok(a)
}

/// DTW path between `reference` and `segments`.
pub fn dtw_align(reference: &ReferenceText, segments: &AlignmentSegments, inv: &PhonemeInventory) -> Result<DtwPath> {
    if reference.is_empty() {
        return Err(Error::Empty("reference text"));
    }
    if segments.is_empty() {
        return Err(Error::Empty("decoded segments"));
    }
    let sim = similarity_grid(reference.phonemes(), &segments.labels(), inv)?;
    Ok(dtw_on_grid(&sim, reference.len(), segments.len()))
}

/// `(start_s, end_s)` of decoded segment `col`.
pub fn segment_time_span(a: &Alignment2D, col: usize) -> Result<(f64, f64)> {
    if col >= a.cols() {
        return Err(Error::InvalidArgument(format!(
            "column {col} out of range (grid has {})",
            a.cols()
        )));
    }
    Ok(a.span_s(col))
}

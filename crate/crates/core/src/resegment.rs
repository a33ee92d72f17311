//! Smoothed re-segmentation and the recursive (URFA) word realignment.
//!
//! The non-monotonic grid is folded onto its DTW twin wherever the assigned
//! reference phoneme is close enough to the DTW phoneme. Columns folded this
//! way (or already agreeing with DTW) are *anchors*; only anchors delimit
//! words. Columns whose assignment disagrees with DTW below the threshold,
//! unassigned columns and SIL are carried along but never move a boundary.

use serde::{Deserialize, Serialize};

use crate::bigram::BigramLm;
use crate::config::Thresholds;
use crate::emission::EmissionInput;
use crate::error::{Error, Result};
use crate::grid::{build_2d, speech_dtw, Alignment2D, DtwPath};
use crate::inventory::PhonemeInventory;
use crate::reference::ReferenceText;
use crate::search::{decode_segment, viterbi_decode, SearchConfig};
use crate::segments::{round_s, AlignmentSegments, Segment};

/// Monotone row assignment over a grid. SIL columns stay unassigned.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotonicAlignment {
    pub grid: Alignment2D,
    /// Columns trusted to delimit words.
    pub anchored: Vec<bool>,
}

impl MonotonicAlignment {
    pub fn rows(&self) -> &[Option<usize>] {
        self.grid.assignment()
    }

    /// Assigned rows never decrease from left to right.
    pub fn is_monotonic(&self) -> bool {
        is_non_decreasing(self.grid.assignment())
    }
}

pub fn is_non_decreasing(rows: &[Option<usize>]) -> bool {
    let assigned: Vec<usize> = rows.iter().flatten().copied().collect();
    assigned.windows(2).all(|w| w[0] <= w[1])
}

/// Among the DTW rows covering `col`, the most similar one (ties → smaller).
pub fn dtw_row(a: &Alignment2D, path: &DtwPath, col: usize) -> Option<usize> {
    path.rows_for_col(col)
        .into_iter()
        .min_by(|&x, &y| (1.0 - a.sim(x, col)).total_cmp(&(1.0 - a.sim(y, col))).then(x.cmp(&y)))
}

/// Merges the non-monotonic assignment into the DTW path.
///
/// `path` must run from row 0 to the last row and visit every non-SIL column;
/// both the full grid DTW and [`merge_path`] qualify.
///
/// Per non-SIL column: an unassigned column takes its DTW row; an assigned
/// column takes its DTW row when the two reference phonemes are at least
/// `tau_merge` similar (an identical row always qualifies), becoming an anchor.
/// Otherwise the column keeps its own row clamped between its neighbours so
/// the result stays monotone. `a` is not modified.
pub fn smooth_merge(
    a: &Alignment2D,
    path: &DtwPath,
    tau_merge: f64,
    inv: &PhonemeInventory,
) -> Result<MonotonicAlignment> {
    let spans_rows = path.steps.first().map(|s| s.0) == Some(0) && path.steps.last().map(|s| s.0) == Some(a.rows() - 1);
    let covers = (0..a.cols()).all(|c| a.is_sil(c) || path.steps.iter().any(|s| s.1 == c));
    if !spans_rows || !covers || path.steps.iter().any(|s| s.1 >= a.cols()) {
        return Err(Error::Shape("DTW path does not span the grid".into()));
    }
    let refs = a.reference().phonemes();
    let cols = a.cols();
    // Some(row) for columns pinned to the DTW row, None for free ones.
    let mut fixed: Vec<Option<usize>> = vec![None; cols];
    let mut anchored = vec![false; cols];
    for col in 0..cols {
        if a.is_sil(col) {
            continue;
        }
        let d = dtw_row(a, path, col).expect("path covers every column");
        match a.assignment()[col] {
            None => fixed[col] = Some(d),
            Some(r) if r == d || inv.sim(refs[r], refs[d]) >= tau_merge => {
                fixed[col] = Some(d);
                anchored[col] = true;
            }
            Some(_) => {}
        }
    }
    let mut next_fixed = vec![a.rows() - 1; cols];
    let mut upcoming = a.rows() - 1;
    for col in (0..cols).rev() {
        next_fixed[col] = upcoming;
        if let Some(r) = fixed[col] {
            upcoming = r;
        }
    }
    let mut rows = vec![None; cols];
    let mut floor = 0;
    for col in 0..cols {
        if a.is_sil(col) {
            continue;
        }
        let r = match fixed[col] {
            Some(r) => r,
            None => {
                let own = a.assignment()[col].expect("free columns are assigned");
                own.clamp(floor, next_fixed[col].max(floor))
            }
        };
        let r = r.max(floor);
        floor = r;
        rows[col] = Some(r);
    }
    let grid = Alignment2D::from_parts(a.reference().clone(), a.segments().clone(), rows, inv)?;
    Ok(MonotonicAlignment { grid, anchored })
}

/// Path used for merging: DTW over speech columns, so leading or inner
/// silence cannot take a reference row away from the phoneme that follows.
pub fn merge_path(a: &Alignment2D) -> DtwPath {
    speech_dtw(a).unwrap_or_else(|| a.dtw())
}

#[derive(Debug, Clone, PartialEq)]
pub struct WordSpan {
    pub word_index: usize,
    pub word: String,
    pub start_frame: usize,
    pub end_frame: usize,
    pub start_s: f64,
    pub end_s: f64,
}

/// Time-ordered word spans. Words without anchored columns are listed in
/// `omitted` instead.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WordSegmentation {
    pub entries: Vec<WordSpan>,
    pub omitted: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordRecord {
    pub word_index: usize,
    pub word: String,
    pub start_s: f64,
    pub end_s: f64,
}

impl WordSegmentation {
    pub fn span_of(&self, word_index: usize) -> Option<&WordSpan> {
        self.entries.iter().find(|s| s.word_index == word_index)
    }

    pub fn to_records(&self) -> Vec<WordRecord> {
        self.entries
            .iter()
            .map(|s| WordRecord {
                word_index: s.word_index,
                word: s.word.clone(),
                start_s: round_s(s.start_s),
                end_s: round_s(s.end_s),
            })
            .collect()
    }

    /// Spans are ordered and disjoint.
    pub fn is_well_formed(&self) -> bool {
        self.entries
            .windows(2)
            .all(|w| w[0].end_frame <= w[1].start_frame && w[0].word_index < w[1].word_index)
            && self.entries.iter().all(|s| s.start_frame < s.end_frame)
    }
}

fn span(word_index: usize, word: &str, start_frame: usize, end_frame: usize, fd: f64) -> WordSpan {
    WordSpan {
        word_index,
        word: word.to_string(),
        start_frame,
        end_frame,
        start_s: start_frame as f64 * fd,
        end_s: end_frame as f64 * fd,
    }
}

/// Each word spans its first through last anchored column; inner SIL and
/// unanchored columns are absorbed, edge ones are not.
pub fn extract_word_boundaries(m: &MonotonicAlignment) -> WordSegmentation {
    let g = &m.grid;
    let reference = g.reference();
    let segs = g.segments().segments();
    let fd = g.segments().frame_duration();
    let mut first = vec![None; reference.num_words()];
    let mut last = vec![None; reference.num_words()];
    for col in 0..g.cols() {
        if !m.anchored[col] {
            continue;
        }
        let Some(row) = g.assignment()[col] else { continue };
        let w = reference.word_of(row);
        first[w].get_or_insert(col);
        last[w] = Some(col);
    }
    let mut out = WordSegmentation::default();
    for (w, word) in reference.words().iter().enumerate() {
        match (first[w], last[w]) {
            (Some(f), Some(l)) => out.entries.push(span(w, &word.text, segs[f].start, segs[l].end, fd)),
            _ => out.omitted.push(w),
        }
    }
    out
}

/// Everything computed at one recursion order.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderResult {
    pub order: usize,
    pub segments: AlignmentSegments,
    /// Non-monotonic grid; at order ≥ 1 the per-word grids side by side.
    pub grid: Alignment2D,
    pub monotonic: MonotonicAlignment,
    pub words: WordSegmentation,
    /// Global DTW path; only order 0 has one.
    pub dtw: Option<DtwPath>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecursionState {
    pub orders: Vec<OrderResult>,
}

impl RecursionState {
    pub fn order(&self) -> usize {
        self.orders.len() - 1
    }

    pub fn zero(&self) -> &OrderResult {
        &self.orders[0]
    }

    pub fn last(&self) -> &OrderResult {
        self.orders.last().expect("order 0 always exists")
    }
}

/// Decode, align, merge and segment the whole utterance.
pub fn zero_order(
    e: &EmissionInput,
    reference: &ReferenceText,
    lm: &BigramLm,
    inv: &PhonemeInventory,
    search: &SearchConfig,
    th: &Thresholds,
) -> Result<OrderResult> {
    let segments = viterbi_decode(e, lm, search)?;
    let grid = build_2d(reference, &segments, inv, th.tau_assign)?;
    let path = grid.dtw();
    let monotonic = smooth_merge(&grid, &merge_path(&grid), th.tau_merge, inv)?;
    let words = extract_word_boundaries(&monotonic);
    Ok(OrderResult {
        order: 0,
        segments,
        grid,
        monotonic,
        words,
        dtw: Some(path),
    })
}

struct Piece {
    segs: Vec<Segment>,
    assignment: Vec<Option<usize>>,
    rows: Vec<Option<usize>>,
    anchored: Vec<bool>,
}

/// Realigns every word span of `prev` against that word alone.
fn next_order(
    prev: &OrderResult,
    e: &EmissionInput,
    reference: &ReferenceText,
    lm: &BigramLm,
    inv: &PhonemeInventory,
    search: &SearchConfig,
    th: &Thresholds,
) -> Result<OrderResult> {
    let fd = e.frame_duration();
    let total = e.frames();
    let mut pieces: Vec<Piece> = Vec::new();
    let mut words = WordSegmentation {
        entries: Vec::new(),
        omitted: prev.words.omitted.clone(),
    };
    let mut cursor = 0;
    let gap = |range: std::ops::Range<usize>| -> Result<Piece> {
        let segs = decode_segment(e, range, lm, search)?;
        let n = segs.len();
        Ok(Piece {
            segs,
            assignment: vec![None; n],
            rows: vec![None; n],
            anchored: vec![false; n],
        })
    };
    for ws in &prev.words.entries {
        if ws.start_frame > cursor {
            pieces.push(gap(cursor..ws.start_frame)?);
        }
        cursor = ws.end_frame;
        if ws.end_frame <= ws.start_frame {
            words.entries.push(ws.clone());
            continue;
        }
        let abs = decode_segment(e, ws.start_frame..ws.end_frame, lm, search)?;
        let local: Vec<Segment> = abs
            .iter()
            .map(|s| Segment::new(s.phoneme, s.start - ws.start_frame, s.end - ws.start_frame))
            .collect();
        let local = AlignmentSegments::new(local, fd)?;
        let word_ref = reference.word_only(ws.word_index);
        let grid = build_2d(&word_ref, &local, inv, th.tau_assign)?;
        let mono = smooth_merge(&grid, &merge_path(&grid), th.tau_merge, inv)?;
        let found = extract_word_boundaries(&mono);
        match found.entries.first() {
            Some(s) => words.entries.push(span(
                ws.word_index,
                &ws.word,
                s.start_frame + ws.start_frame,
                s.end_frame + ws.start_frame,
                fd,
            )),
            None => words.entries.push(ws.clone()),
        }
        let offset = reference.rows_of(ws.word_index).start;
        pieces.push(Piece {
            segs: abs,
            assignment: grid.assignment().iter().map(|r| r.map(|r| r + offset)).collect(),
            rows: mono.rows().iter().map(|r| r.map(|r| r + offset)).collect(),
            anchored: mono.anchored.clone(),
        });
    }
    if cursor < total {
        pieces.push(gap(cursor..total)?);
    }

    // stitch, merging equal labels across piece edges
    let mut segs: Vec<Segment> = Vec::new();
    let mut assignment: Vec<Option<usize>> = Vec::new();
    let mut rows: Vec<Option<usize>> = Vec::new();
    let mut anchored: Vec<bool> = Vec::new();
    for p in pieces {
        for (k, s) in p.segs.into_iter().enumerate() {
            match segs.last_mut() {
                Some(last) if last.phoneme == s.phoneme => {
                    last.end = s.end;
                    let i = assignment.len() - 1;
                    if assignment[i].is_none() {
                        assignment[i] = p.assignment[k];
                    }
                    if rows[i].is_none() {
                        rows[i] = p.rows[k];
                    }
                    anchored[i] |= p.anchored[k];
                }
                _ => {
                    segs.push(s);
                    assignment.push(p.assignment[k]);
                    rows.push(p.rows[k]);
                    anchored.push(p.anchored[k]);
                }
            }
        }
    }
    let segments = AlignmentSegments::new(segs, fd)?;
    // gap columns have no row yet; give non-SIL ones the running row
    let mut floor = 0;
    for (col, s) in segments.segments().iter().enumerate() {
        match rows[col] {
            Some(r) => {
                rows[col] = Some(r.max(floor));
                floor = r.max(floor);
            }
            None if !inv.is_sil(s.phoneme) => rows[col] = Some(floor),
            None => {}
        }
    }
    let grid = Alignment2D::from_parts(reference.clone(), segments.clone(), assignment, inv)?;
    let mono_grid = Alignment2D::from_parts(reference.clone(), segments.clone(), rows, inv)?;
    Ok(OrderResult {
        order: prev.order + 1,
        segments,
        grid,
        monotonic: MonotonicAlignment {
            grid: mono_grid,
            anchored,
        },
        words,
        dtw: None,
    })
}

/// Runs orders `0..=max_order`. The decoder and its configuration stay fixed
/// across orders.
pub fn urfa_iterate(
    e: &EmissionInput,
    reference: &ReferenceText,
    lm: &BigramLm,
    inv: &PhonemeInventory,
    search: &SearchConfig,
    th: &Thresholds,
    max_order: usize,
) -> Result<RecursionState> {
    let mut orders = vec![zero_order(e, reference, lm, inv, search, th)?];
    for _ in 0..max_order {
        let prev = orders.last().expect("non-empty");
        let next = next_order(prev, e, reference, lm, inv, search, th)?;
        orders.push(next);
    }
    Ok(RecursionState { orders })
}

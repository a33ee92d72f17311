//! Template matching over the 2D grid and its DTW path.
//!
//! Phoneme level, per reference row (first matching template wins):
//! Missing > Replacement > Repetition > Insertion. Irregular pauses are
//! scanned independently over inner silences.
//!
//! Word level combines a projection of the grid onto the word axis
//! (repetition, replacement) with the text refresher, which compares an
//! external ASR hypothesis against the grid (insertion, missing).

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::Thresholds;
use crate::error::{Error, Result};
use crate::grid::{Alignment2D, DtwPath};
use crate::inventory::PhonemeInventory;
use crate::metrics::levenshtein_script;
use crate::reference::ReferenceText;
use crate::resegment::MonotonicAlignment;
use crate::segments::round_s;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Phoneme,
    Word,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventKind {
    Missing,
    Repetition,
    Insertion,
    Replacement,
    IrregularPause,
}

impl EventKind {
    pub const ALL: [EventKind; 5] = [
        EventKind::Missing,
        EventKind::Repetition,
        EventKind::Insertion,
        EventKind::Replacement,
        EventKind::IrregularPause,
    ];
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisfluencyEvent {
    pub level: Level,
    pub kind: EventKind,
    pub target: Option<String>,
    pub start_s: f64,
    pub end_s: f64,
    /// `[row, col]` grid cells that triggered the template.
    pub evidence: Vec<[usize; 2]>,
}

impl DisfluencyEvent {
    pub fn interval(&self) -> (f64, f64) {
        (self.start_s, self.end_s)
    }

    pub fn is_legal(&self) -> bool {
        self.start_s < self.end_s && !(self.level == Level::Word && self.kind == EventKind::IrregularPause)
    }

    pub fn record(&self, utterance_id: &str) -> EventRecord {
        EventRecord {
            utterance_id: utterance_id.to_string(),
            level: self.level,
            kind: self.kind,
            target: self.target.clone(),
            start_s: round_s(self.start_s),
            end_s: round_s(self.end_s),
            evidence: self.evidence.clone(),
        }
    }
}

/// Serialized event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub utterance_id: String,
    pub level: Level,
    pub kind: EventKind,
    pub target: Option<String>,
    pub start_s: f64,
    pub end_s: f64,
    #[serde(default)]
    pub evidence: Vec<[usize; 2]>,
}

impl EventRecord {
    pub fn into_event(self) -> DisfluencyEvent {
        DisfluencyEvent {
            level: self.level,
            kind: self.kind,
            target: self.target,
            start_s: self.start_s,
            end_s: self.end_s,
            evidence: self.evidence,
        }
    }
}

pub fn sort_events(events: &mut [DisfluencyEvent]) {
    events.sort_by(|a, b| {
        a.start_s
            .total_cmp(&b.start_s)
            .then(a.level.cmp(&b.level))
            .then(a.kind.cmp(&b.kind))
            .then(a.end_s.total_cmp(&b.end_s))
            .then(a.target.cmp(&b.target))
    });
}

/// Interval reported for a missing phoneme at time `point`.
pub fn missing_interval(point: f64, halfwidth: f64, total: f64) -> (f64, f64) {
    ((point - halfwidth).max(0.0), (point + halfwidth).min(total))
}

fn total_s(a: &Alignment2D) -> f64 {
    a.segments().total_frames() as f64 * a.segments().frame_duration()
}

fn cols_assigned_to(a: &Alignment2D, row: usize) -> Vec<usize> {
    (0..a.cols()).filter(|&c| a.assignment()[c] == Some(row)).collect()
}

fn contiguous_blocks(cols: &[usize]) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = Vec::new();
    for &c in cols {
        match out.last_mut() {
            Some(b) if b[b.len() - 1] + 1 == c => b.push(c),
            _ => out.push(vec![c]),
        }
    }
    out
}

fn span_of_cols(a: &Alignment2D, cols: &[usize]) -> (f64, f64) {
    (a.span_s(cols[0]).0, a.span_s(cols[cols.len() - 1]).1)
}

/// Where a row with no matched columns would have been spoken: the end of the
/// closest matched material before it, else the start of the closest matched
/// material after it.
fn missing_point(a: &Alignment2D, row: usize) -> f64 {
    let after = (row + 1..a.rows()).find_map(|r| cols_assigned_to(a, r).first().copied());
    for r in (0..row).rev() {
        let cols = cols_assigned_to(a, r);
        let Some(&last) = cols.last() else { continue };
        let c = after
            .and_then(|limit| cols.iter().copied().filter(|&c| c < limit).next_back())
            .unwrap_or(last);
        return a.span_s(c).1;
    }
    after.map_or(0.0, |c| a.span_s(c).0)
}

/// Phoneme-level templates over the non-monotonic grid `a` and its DTW path.
pub fn detect_phoneme(
    a: &Alignment2D,
    path: &DtwPath,
    inv: &PhonemeInventory,
    th: &Thresholds,
) -> Vec<DisfluencyEvent> {
    let tau = th.tau_match;
    let refs = a.reference().phonemes();
    let name = |row: usize| inv.label(refs[row]).to_string();
    let mut covered_by = vec![Vec::new(); a.cols()];
    for &(r, c) in &path.steps {
        covered_by[c].push(r);
    }
    let mut events = Vec::new();
    let mut flagged = vec![false; a.rows()];
    let mut repetition_rows: Vec<(usize, Vec<usize>)> = Vec::new();

    for i in 0..a.rows() {
        let assigned = cols_assigned_to(a, i);
        let dtw_cols = path.cols_for_row(i);
        if assigned.is_empty() {
            // path cells nobody else claims; cells shared with or assigned to
            // other rows are only passed through
            let exclusive: Vec<usize> = dtw_cols
                .iter()
                .copied()
                .filter(|&c| covered_by[c].iter().all(|&r| r == i) && a.assignment()[c].is_none())
                .collect();
            if exclusive.iter().any(|&c| a.sim(i, c) >= tau) {
                continue;
            }
            let weak: Vec<usize> = exclusive
                .iter()
                .copied()
                .filter(|&c| !a.is_sil(c) && a.col_max(c) < tau)
                .collect();
            let blocks = contiguous_blocks(&weak);
            flagged[i] = true;
            if let [block] = blocks.as_slice() {
                let (s, e) = span_of_cols(a, block);
                events.push(DisfluencyEvent {
                    level: Level::Phoneme,
                    kind: EventKind::Replacement,
                    target: Some(name(i)),
                    start_s: s,
                    end_s: e,
                    evidence: block.iter().map(|&c| [i, c]).collect(),
                });
            } else {
                let (s, e) = missing_interval(missing_point(a, i), th.missing_halfwidth_s, total_s(a));
                if s < e {
                    events.push(DisfluencyEvent {
                        level: Level::Phoneme,
                        kind: EventKind::Missing,
                        target: Some(name(i)),
                        start_s: s,
                        end_s: e,
                        evidence: dtw_cols.iter().map(|&c| [i, c]).collect(),
                    });
                }
            }
            continue;
        }
        let mut repeated: Vec<usize> = Vec::new();
        for (x, &c1) in assigned.iter().enumerate() {
            for &c2 in &assigned[x + 1..] {
                if c2 >= c1 + 2 && inv.sim(a.label(c1), a.label(c2)) >= tau {
                    repeated.push(c1);
                    repeated.push(c2);
                }
            }
        }
        if !repeated.is_empty() {
            repeated.sort_unstable();
            repeated.dedup();
            repetition_rows.push((i, repeated));
            flagged[i] = true;
        }
    }

    // consecutive repeated rows with overlapping column spans form one event
    let mut groups: Vec<(Vec<usize>, usize, usize, Vec<[usize; 2]>)> = Vec::new();
    for (row, cols) in repetition_rows {
        let (lo, hi) = (cols[0], cols[cols.len() - 1]);
        let cells = cols.iter().map(|&c| [row, c]);
        match groups.last_mut() {
            Some((rows, glo, ghi, ev)) if rows[rows.len() - 1] + 1 == row && lo <= *ghi && hi >= *glo => {
                rows.push(row);
                *glo = (*glo).min(lo);
                *ghi = (*ghi).max(hi);
                ev.extend(cells);
            }
            _ => groups.push((vec![row], lo, hi, cells.collect())),
        }
    }
    for (rows, lo, hi, evidence) in groups {
        let target = rows.iter().map(|&r| name(r)).collect::<Vec<_>>().join(" ");
        events.push(DisfluencyEvent {
            level: Level::Phoneme,
            kind: EventKind::Repetition,
            target: Some(target),
            start_s: a.span_s(lo).0,
            end_s: a.span_s(hi).1,
            evidence,
        });
    }

    // a matched path column whose immediate neighbour matches the same row
    // again outside the path
    for i in 0..a.rows() {
        if flagged[i] {
            continue;
        }
        let dtw_cols = path.cols_for_row(i);
        let mut extra: Vec<usize> = Vec::new();
        for &c in dtw_cols.iter().filter(|&&c| a.sim(i, c) >= tau) {
            for n in [c.checked_sub(1), Some(c + 1)].into_iter().flatten() {
                if n < a.cols()
                    && !dtw_cols.contains(&n)
                    && !a.is_sil(n)
                    && a.assignment()[n] == Some(i)
                    && a.sim(i, n) >= tau
                {
                    extra.push(n);
                }
            }
        }
        extra.sort_unstable();
        extra.dedup();
        for block in contiguous_blocks(&extra) {
            let (s, e) = span_of_cols(a, &block);
            events.push(DisfluencyEvent {
                level: Level::Phoneme,
                kind: EventKind::Insertion,
                target: Some(name(i)),
                start_s: s,
                end_s: e,
                evidence: block.iter().map(|&c| [i, c]).collect(),
            });
        }
    }

    let speech: Vec<usize> = (0..a.cols()).filter(|&c| !a.is_sil(c)).collect();
    if let (Some(&first), Some(&last)) = (speech.first(), speech.last()) {
        for c in first + 1..last {
            if !a.is_sil(c) {
                continue;
            }
            let (s, e) = a.span_s(c);
            if e - s >= th.pause_min_s - 1e-9 {
                events.push(DisfluencyEvent {
                    level: Level::Phoneme,
                    kind: EventKind::IrregularPause,
                    target: None,
                    start_s: s,
                    end_s: e,
                    evidence: covered_by[c].iter().map(|&r| [r, c]).collect(),
                });
            }
        }
    }
    sort_events(&mut events);
    events
}

// ---------------------------------------------------------------------------
// word level

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypWord {
    pub word: String,
    pub start_s: f64,
    pub end_s: f64,
}

/// Time-stamped words from an external recogniser.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AsrHypothesis {
    words: Vec<HypWord>,
}

impl AsrHypothesis {
    pub fn new(words: Vec<HypWord>) -> Result<Self> {
        for (i, w) in words.iter().enumerate() {
            if !(w.start_s <= w.end_s) {
                return Err(Error::InvalidArgument(format!(
                    "hypothesis word {i} ends before it starts"
                )));
            }
            if i > 0 && words[i - 1].end_s > w.start_s + 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "hypothesis words {} and {i} overlap",
                    i - 1
                )));
            }
        }
        Ok(Self { words })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let words: Vec<HypWord> = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        Self::new(words)
    }

    pub fn words(&self) -> &[HypWord] {
        &self.words
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WordStatus {
    Kept,
    Inserted,
    Deleted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptWord {
    pub word: String,
    pub start_s: f64,
    pub end_s: f64,
    pub status: WordStatus,
}

/// Hypothesis with inserted material spliced in and deletions marked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefreshedTranscript {
    pub words: Vec<TranscriptWord>,
    /// The hypothesis had no words.
    pub empty: bool,
}

impl RefreshedTranscript {
    /// Inserted material is shown as `+[phonemes]`, deleted words as `-word`.
    pub fn text(&self) -> String {
        self.words
            .iter()
            .map(|w| match w.status {
                WordStatus::Kept => w.word.clone(),
                WordStatus::Inserted => format!("+[{}]", w.word),
                WordStatus::Deleted => format!("-{}", w.word),
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextRefresh {
    pub events: Vec<DisfluencyEvent>,
    pub transcript: RefreshedTranscript,
}

fn overlaps(a: (f64, f64), b: (f64, f64)) -> bool {
    a.0 < b.1 && b.0 < a.1
}

/// Word insertions from unmatched speech and deletions from hypothesis words
/// the grid does not support.
pub fn text_refresh(
    a: &Alignment2D,
    hyp: &AsrHypothesis,
    reference: &ReferenceText,
    inv: &PhonemeInventory,
) -> TextRefresh {
    let mut events = Vec::new();
    let mut inserted: Vec<TranscriptWord> = Vec::new();

    let unmatched: Vec<usize> = (0..a.cols())
        .filter(|&c| !a.is_sil(c) && a.assignment()[c].is_none())
        .collect();
    for run in contiguous_blocks(&unmatched) {
        let (s, e) = span_of_cols(a, &run);
        let phones = run.iter().map(|&c| inv.label(a.label(c))).collect::<Vec<_>>().join(" ");
        events.push(DisfluencyEvent {
            level: Level::Word,
            kind: EventKind::Insertion,
            target: None,
            start_s: s,
            end_s: e,
            evidence: run.iter().map(|&c| [best_row(a, c), c]).collect(),
        });
        inserted.push(TranscriptWord {
            word: phones,
            start_s: s,
            end_s: e,
            status: WordStatus::Inserted,
        });
    }

    let ref_words: Vec<&str> = reference.words().iter().map(|w| w.text.as_str()).collect();
    let hyp_words: Vec<String> = hyp.words().iter().map(|w| w.word.to_lowercase()).collect();
    let hyp_refs: Vec<&str> = hyp_words.iter().map(String::as_str).collect();
    let counterpart = word_correspondence(&ref_words, &hyp_refs);

    let mut kept: Vec<TranscriptWord> = Vec::new();
    for (h, hw) in hyp.words().iter().enumerate() {
        let span = (hw.start_s, hw.end_s);
        let in_span = |c: usize| overlaps(a.span_s(c), span);
        let supported = match counterpart[h] {
            Some(w) => {
                let rows = reference.rows_of(w);
                (0..a.cols()).any(|c| in_span(c) && a.assignment()[c].is_some_and(|r| rows.contains(&r)))
            }
            None => (0..a.cols()).any(|c| in_span(c) && a.assignment()[c].is_some()),
        };
        let status = if supported {
            WordStatus::Kept
        } else {
            let target = counterpart[h].map_or(hw.word.to_lowercase(), |w| reference.words()[w].text.clone());
            if hw.start_s < hw.end_s {
                events.push(DisfluencyEvent {
                    level: Level::Word,
                    kind: EventKind::Missing,
                    target: Some(target),
                    start_s: hw.start_s,
                    end_s: hw.end_s,
                    evidence: Vec::new(),
                });
            }
            WordStatus::Deleted
        };
        kept.push(TranscriptWord {
            word: hw.word.clone(),
            start_s: hw.start_s,
            end_s: hw.end_s,
            status,
        });
    }

    let mut words: Vec<TranscriptWord> = kept;
    if !hyp.is_empty() {
        words.extend(inserted);
        words.sort_by(|x, y| x.start_s.total_cmp(&y.start_s).then(x.end_s.total_cmp(&y.end_s)));
    }
    sort_events(&mut events);
    TextRefresh {
        events,
        transcript: RefreshedTranscript {
            words,
            empty: hyp.is_empty(),
        },
    }
}

fn best_row(a: &Alignment2D, col: usize) -> usize {
    (0..a.rows())
        .max_by(|&x, &y| a.sim(x, col).total_cmp(&a.sim(y, col)).then(y.cmp(&x)))
        .unwrap_or(0)
}

/// For each hypothesis word, the reference word it lines up with under a
/// word-level edit alignment (matches and substitutions), if any.
fn word_correspondence(reference: &[&str], hyp: &[&str]) -> Vec<Option<usize>> {
    let mut out = vec![None; hyp.len()];
    for (r, h) in levenshtein_script(reference, hyp) {
        if let (Some(r), Some(h)) = (r, h) {
            out[h] = Some(r);
        }
    }
    out
}

/// One run of decoded columns attributed to a single reference word.
#[derive(Debug, Clone, PartialEq)]
struct Token {
    word: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
}

/// Projects assigned non-SIL columns onto the word axis. A new token starts
/// when the word changes or the row moves backwards inside the same word.
fn project_words(a: &Alignment2D) -> Vec<Token> {
    let reference = a.reference();
    let mut out: Vec<Token> = Vec::new();
    for c in 0..a.cols() {
        if a.is_sil(c) {
            continue;
        }
        let Some(r) = a.assignment()[c] else { continue };
        let w = reference.word_of(r);
        match out.last_mut() {
            Some(t) if t.word == w && r >= t.rows[t.rows.len() - 1] => {
                t.rows.push(r);
                t.cols.push(c);
            }
            _ => out.push(Token {
                word: w,
                rows: vec![r],
                cols: vec![c],
            }),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct WordDetection {
    /// Merged stream.
    pub events: Vec<DisfluencyEvent>,
    /// Events from the grid projection alone.
    pub projection: Vec<DisfluencyEvent>,
    /// Events from the text refresher alone.
    pub refresher: Vec<DisfluencyEvent>,
    pub transcript: Option<RefreshedTranscript>,
}

fn evidence_mass(a: &Alignment2D, ev: &DisfluencyEvent) -> f64 {
    ev.evidence
        .iter()
        .filter(|[r, c]| *r < a.rows() && *c < a.cols())
        .map(|&[r, c]| a.sim(r, c))
        .sum()
}

/// Word-level detection. Without a hypothesis only the projection templates run.
pub fn detect_word(
    m: &MonotonicAlignment,
    a: &Alignment2D,
    hyp: Option<&AsrHypothesis>,
    reference: &ReferenceText,
    inv: &PhonemeInventory,
) -> WordDetection {
    let mut projection = Vec::new();
    let tokens = project_words(a);

    let mut t = 0;
    while t < tokens.len() {
        let mut u = t + 1;
        while u < tokens.len() && tokens[u].word == tokens[t].word {
            u += 1;
        }
        if u - t >= 2 {
            let w = tokens[t].word;
            let rows = reference.rows_of(w);
            let complete = rows.clone().all(|r| tokens[t].rows.contains(&r));
            if complete {
                let cols: Vec<usize> = tokens[t..u].iter().flat_map(|k| k.cols.iter().copied()).collect();
                let first = cols[0];
                let last = cols[cols.len() - 1];
                projection.push(DisfluencyEvent {
                    level: Level::Word,
                    kind: EventKind::Repetition,
                    target: Some(reference.words()[w].text.clone()),
                    start_s: a.span_s(first).0,
                    end_s: a.span_s(last).1,
                    evidence: tokens[t..u]
                        .iter()
                        .flat_map(|k| k.rows.iter().zip(&k.cols).map(|(&r, &c)| [r, c]))
                        .collect(),
                });
            }
        }
        t = u;
    }

    for w in 0..reference.num_words() {
        let rows = reference.rows_of(w);
        if tokens.iter().any(|k| k.word == w) {
            continue;
        }
        let cols: Vec<usize> = (0..m.grid.cols())
            .filter(|&c| !m.grid.is_sil(c) && m.rows()[c].is_some_and(|r| rows.contains(&r)))
            .collect();
        if cols.is_empty() {
            continue;
        }
        let (s, e) = span_of_cols(a, &cols);
        projection.push(DisfluencyEvent {
            level: Level::Word,
            kind: EventKind::Replacement,
            target: Some(reference.words()[w].text.clone()),
            start_s: s,
            end_s: e,
            evidence: cols.iter().map(|&c| [m.rows()[c].unwrap(), c]).collect(),
        });
    }
    sort_events(&mut projection);

    let (refresher, transcript) = match hyp {
        Some(h) => {
            let tr = text_refresh(a, h, reference, inv);
            (tr.events, Some(tr.transcript))
        }
        None => (Vec::new(), None),
    };

    // overlapping events from the two sources: keep the better supported one
    let mut events = projection.clone();
    for r in &refresher {
        let clash: Vec<usize> = events
            .iter()
            .enumerate()
            .filter(|(_, p)| overlaps(p.interval(), r.interval()) && p.kind != r.kind)
            .map(|(i, _)| i)
            .collect();
        if clash.is_empty() {
            events.push(r.clone());
            continue;
        }
        let theirs: f64 = clash.iter().map(|&i| evidence_mass(a, &events[i])).sum();
        if evidence_mass(a, r) > theirs {
            for i in clash.into_iter().rev() {
                events.remove(i);
            }
            events.push(r.clone());
        }
    }
    sort_events(&mut events);
    WordDetection {
        events,
        projection,
        refresher,
        transcript,
    }
}

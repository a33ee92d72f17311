//! Boundary-aware Viterbi decoding of unconstrained phoneme alignments.
//!
//! A labelling `y` of the frames scores
//!
//! ```text
//!   Σ_t log P(y_t | t)
//! + Σ_{t: y_t ≠ y_{t-1}} lm_weight · log P_lm(y_t | y_{t-1}) + boundary_weight · log b_t
//! + Σ_{t: y_t = y_{t-1}} boundary_weight · log(1 − b_t)
//! ```
//!
//! with `b_t` clamped to `[1e-6, 1 − 1e-6]`. No reference text is consulted.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::bigram::BigramLm;
use crate::emission::EmissionInput;
use crate::error::{Error, Result};
use crate::inventory::PhonemeId;
use crate::segments::{AlignmentSegments, Segment};

pub const BOUNDARY_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub lm_weight: f64,
    pub boundary_weight: f64,
    pub min_segment_frames: usize,
    /// `None` keeps every state alive.
    pub beam_width: Option<usize>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            lm_weight: 0.3,
            boundary_weight: 1.0,
            min_segment_frames: 1,
            beam_width: None,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lm_weight >= 0.0 && self.lm_weight.is_finite()) {
            return Err(Error::InvalidArgument("lm_weight must be a nonnegative real".into()));
        }
        if !(self.boundary_weight >= 0.0 && self.boundary_weight.is_finite()) {
            return Err(Error::InvalidArgument(
                "boundary_weight must be a nonnegative real".into(),
            ));
        }
        if self.min_segment_frames == 0 {
            return Err(Error::InvalidArgument("min_segment_frames must be >= 1".into()));
        }
        if self.beam_width == Some(0) {
            return Err(Error::InvalidArgument("beam_width must be >= 1".into()));
        }
        Ok(())
    }
}

/// Score of moving from `prev` to `cur` at a frame whose boundary probability is `b`.
#[inline]
pub fn transition_score(lm: &BigramLm, cfg: &SearchConfig, prev: PhonemeId, cur: PhonemeId, b: f64) -> f64 {
    let b = b.clamp(BOUNDARY_EPS, 1.0 - BOUNDARY_EPS);
    if prev == cur {
        cfg.boundary_weight * (1.0 - b).ln()
    } else {
        let lm_term = if cfg.lm_weight == 0.0 {
            0.0
        } else {
            cfg.lm_weight * lm.log_prob(prev, cur)
        };
        lm_term + cfg.boundary_weight * b.ln()
    }
}

/// Score of a full per-frame labelling under the decoder's objective.
pub fn path_score(e: &EmissionInput, lm: &BigramLm, cfg: &SearchConfig, labels: &[PhonemeId]) -> f64 {
    let mut score = e.log_prob(0, labels[0]);
    for t in 1..labels.len() {
        score = score
            + transition_score(lm, cfg, labels[t - 1], labels[t], e.boundary_probs()[t])
            + e.log_prob(t, labels[t]);
    }
    score
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub segments: AlignmentSegments,
    /// Objective value of the best labelling (before any min-segment filtering).
    pub score: f64,
    /// Number of (previous state, next state) pairs scored.
    pub transitions: u64,
}

fn check_inputs(e: &EmissionInput, lm: &BigramLm, cfg: &SearchConfig) -> Result<()> {
    cfg.validate()?;
    if e.n() != lm.n() {
        return Err(Error::Shape(format!(
            "emission has {} phoneme columns, bigram model has {}",
            e.n(),
            lm.n()
        )));
    }
    if e.frames() == 0 {
        return Err(Error::Empty("emission"));
    }
    for t in 0..e.frames() {
        let row = e.row(t);
        if row.iter().any(|v| v.is_nan()) {
            return Err(Error::Emission(format!("NaN in frame {t}")));
        }
        if !row.iter().any(|v| v.is_finite()) {
            return Err(Error::DeadFrame(t));
        }
    }
    Ok(())
}

/// Decodes the best labelling. Ties: the final state goes to the lower
/// phoneme index; a predecessor tie prefers staying on the current phoneme,
/// then the lower index.
pub fn viterbi(e: &EmissionInput, lm: &BigramLm, cfg: &SearchConfig) -> Result<Decoded> {
    check_inputs(e, lm, cfg)?;
    let n = e.n();
    let frames = e.frames();
    let mut delta: Vec<f64> = e.row(0).to_vec();
    let mut next = vec![f64::NEG_INFINITY; n];
    let mut back = vec![0u16; frames * n];
    let mut active: Vec<usize> = (0..n).collect();
    let mut transitions = 0u64;

    if let Some(b) = cfg.beam_width {
        prune(&delta, &mut active, b);
    }

    for t in 1..frames {
        let b = e.boundary_probs()[t];
        let emit = e.row(t);
        for j in 0..n {
            let cur = PhonemeId(j as u16);
            let mut best = f64::NEG_INFINITY;
            let mut arg = usize::MAX;
            for &i in &active {
                transitions += 1;
                let s = delta[i] + transition_score(lm, cfg, PhonemeId(i as u16), cur, b);
                let better = if arg == usize::MAX {
                    true
                } else if s > best {
                    true
                } else if s == best {
                    // stay beats switch, then lower index (active is ascending)
                    i == j && arg != j
                } else {
                    false
                };
                if better {
                    best = s;
                    arg = i;
                }
            }
            next[j] = best + emit[j];
            back[t * n + j] = arg as u16;
        }
        std::mem::swap(&mut delta, &mut next);
        active.clear();
        active.extend(0..n);
        if let Some(bw) = cfg.beam_width {
            prune(&delta, &mut active, bw);
        }
    }

    let mut last = 0;
    for j in 1..n {
        if delta[j] > delta[last] {
            last = j;
        }
    }
    let score = delta[last];
    if score == f64::NEG_INFINITY {
        return Err(Error::Emission("every path has zero probability".into()));
    }
    let mut labels = vec![PhonemeId(0); frames];
    let mut state = last;
    for t in (0..frames).rev() {
        labels[t] = PhonemeId(state as u16);
        if t > 0 {
            state = back[t * n + state] as usize;
        }
    }
    let mut segments = AlignmentSegments::from_frame_labels(&labels, e.frame_duration())?;
    if cfg.min_segment_frames > 1 {
        segments = merge_short_segments(&segments, e, cfg.min_segment_frames)?;
    }
    Ok(Decoded {
        segments,
        score,
        transitions,
    })
}

/// Keeps the `width` best states alive (ties to the lower index).
fn prune(delta: &[f64], active: &mut Vec<usize>, width: usize) {
    if width >= delta.len() {
        return;
    }
    let mut order: Vec<usize> = (0..delta.len()).collect();
    order.sort_by(|&a, &b| delta[b].total_cmp(&delta[a]).then(a.cmp(&b)));
    order.truncate(width);
    order.sort_unstable();
    *active = order;
}

pub fn viterbi_decode(e: &EmissionInput, lm: &BigramLm, cfg: &SearchConfig) -> Result<AlignmentSegments> {
    Ok(viterbi(e, lm, cfg)?.segments)
}

/// Decodes frames `range` on their own. Returned segments carry absolute
/// frame indices and tile `range`.
pub fn decode_segment(
    e: &EmissionInput,
    range: Range<usize>,
    lm: &BigramLm,
    cfg: &SearchConfig,
) -> Result<Vec<Segment>> {
    if range.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "empty frame range {}..{}",
            range.start, range.end
        )));
    }
    let offset = range.start;
    let slice = e.slice(range)?;
    Ok(viterbi_decode(&slice, lm, cfg)?.offset_segments(offset))
}

/// Folds segments shorter than `min_frames` into whichever neighbour explains
/// their frames better (higher summed log-posterior; ties go left).
pub fn merge_short_segments(
    segs: &AlignmentSegments,
    e: &EmissionInput,
    min_frames: usize,
) -> Result<AlignmentSegments> {
    let mut cur: Vec<Segment> = segs.segments().to_vec();
    loop {
        if cur.len() <= 1 {
            break;
        }
        let Some(i) = (0..cur.len()).find(|&i| cur[i].frames() < min_frames) else {
            break;
        };
        let frames = cur[i].start..cur[i].end;
        let support = |p: PhonemeId| frames.clone().map(|t| e.log_prob(t, p)).sum::<f64>();
        let left = (i > 0).then(|| support(cur[i - 1].phoneme));
        let right = (i + 1 < cur.len()).then(|| support(cur[i + 1].phoneme));
        let into_left = match (left, right) {
            (Some(l), Some(r)) => l >= r,
            (Some(_), None) => true,
            _ => false,
        };
        if into_left {
            cur[i - 1].end = cur[i].end;
        } else {
            cur[i + 1].start = cur[i].start;
        }
        cur.remove(i);
        cur = AlignmentSegments::canonicalize(&cur, e.frame_duration())?
            .segments()
            .to_vec();
    }
    AlignmentSegments::new(cur, e.frame_duration())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ComplexityProbe {
    pub frames: usize,
    pub phonemes: usize,
    pub transitions: u64,
}

/// Runs the decoder on a synthetic `t × n` problem and reports how many
/// transitions it scored.
pub fn search_complexity_probe(t: usize, n: usize) -> Result<ComplexityProbe> {
    if t == 0 || n == 0 {
        return Err(Error::InvalidArgument("t and N must be >= 1".into()));
    }
    let mut logp = Vec::with_capacity(t * n);
    for f in 0..t {
        // peaked on a rotating label so the decode is not degenerate
        let hot = f % n;
        let (hi, lo) = if n == 1 {
            (1.0, 0.0)
        } else {
            (0.6, 0.4 / (n - 1) as f64)
        };
        logp.extend((0..n).map(|k| if k == hot { hi } else { lo }.ln()));
    }
    let e = EmissionInput::new(n, logp, vec![0.5; t], 0.01)?;
    let d = viterbi(&e, &BigramLm::uniform(n), &SearchConfig::default())?;
    Ok(ComplexityProbe {
        frames: t,
        phonemes: n,
        transitions: d.transitions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emission(rows: &[&[f64]], bounds: &[f64]) -> EmissionInput {
        let rows: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| {
                let z: f64 = r.iter().sum();
                r.iter().map(|p| (p / z).ln()).collect()
            })
            .collect();
        EmissionInput::from_rows(rows, bounds.to_vec(), 0.02).unwrap()
    }

    #[test]
    fn single_frame_is_argmax() {
        let e = emission(&[&[0.2, 0.5, 0.3]], &[0.5]);
        let segs = viterbi_decode(&e, &BigramLm::uniform(3), &SearchConfig::default()).unwrap();
        assert_eq!(segs.labels(), vec![PhonemeId(1)]);
        assert_eq!(segs.total_frames(), 1);
    }

    #[test]
    fn zero_weights_reduce_to_framewise_argmax() {
        let e = emission(
            &[&[0.6, 0.4], &[0.3, 0.7], &[0.8, 0.2], &[0.1, 0.9]],
            &[0.5, 0.01, 0.01, 0.01],
        );
        let cfg = SearchConfig {
            lm_weight: 0.0,
            boundary_weight: 0.0,
            ..SearchConfig::default()
        };
        let segs = viterbi_decode(&e, &BigramLm::uniform(2), &cfg).unwrap();
        let argmax: Vec<PhonemeId> = (0..4).map(|t| e.argmax(t)).collect();
        assert_eq!(segs.frame_labels(), argmax);
    }

    #[test]
    fn boundaries_hold_labels_together() {
        // frame 1 mildly prefers label 1, but switching costs two low-boundary jumps
        let e = emission(&[&[0.9, 0.1], &[0.45, 0.55], &[0.9, 0.1]], &[0.5, 0.05, 0.05]);
        let segs = viterbi_decode(&e, &BigramLm::uniform(2), &SearchConfig::default()).unwrap();
        assert_eq!(segs.labels(), vec![PhonemeId(0)]);
    }

    #[test]
    fn shape_mismatch_and_dead_frame() {
        let e = emission(&[&[0.5, 0.5]], &[0.5]);
        let err = viterbi_decode(&e, &BigramLm::uniform(3), &SearchConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));

        let dead = EmissionInput::from_rows(
            vec![vec![0.5f64.ln(), 0.5f64.ln()], vec![f64::NEG_INFINITY; 2]],
            vec![0.5, 0.5],
            0.02,
        )
        .unwrap();
        let err = viterbi_decode(&dead, &BigramLm::uniform(2), &SearchConfig::default()).unwrap_err();
        assert!(matches!(err, Error::DeadFrame(1)));
    }

    #[test]
    fn decode_segment_offsets_and_rejects_empty() {
        let e = emission(&[&[0.9, 0.1], &[0.9, 0.1], &[0.1, 0.9], &[0.1, 0.9]], &[0.5; 4]);
        let lm = BigramLm::uniform(2);
        let cfg = SearchConfig::default();
        let segs = decode_segment(&e, 2..4, &lm, &cfg).unwrap();
        assert_eq!(segs, vec![Segment::new(PhonemeId(1), 2, 4)]);
        let one = decode_segment(&e, 1..2, &lm, &cfg).unwrap();
        assert_eq!(one, vec![Segment::new(PhonemeId(0), 1, 2)]);
        assert!(decode_segment(&e, 2..2, &lm, &cfg).is_err());
        let full = decode_segment(&e, 0..4, &lm, &cfg).unwrap();
        assert_eq!(full, viterbi_decode(&e, &lm, &cfg).unwrap().segments().to_vec());
    }

    #[test]
    fn min_segment_filter_merges_blips() {
        let e = emission(
            &[&[0.9, 0.1], &[0.9, 0.1], &[0.4, 0.6], &[0.9, 0.1], &[0.9, 0.1]],
            &[0.5, 0.5, 0.99, 0.99, 0.5],
        );
        let lm = BigramLm::uniform(2);
        let loose = SearchConfig {
            lm_weight: 0.0,
            boundary_weight: 0.0,
            ..SearchConfig::default()
        };
        assert_eq!(viterbi_decode(&e, &lm, &loose).unwrap().len(), 3);
        let strict = SearchConfig {
            min_segment_frames: 2,
            ..loose
        };
        let segs = viterbi_decode(&e, &lm, &strict).unwrap();
        assert_eq!(segs.labels(), vec![PhonemeId(0)]);
    }

    #[test]
    fn complexity_counts() {
        assert_eq!(search_complexity_probe(1, 5).unwrap().transitions, 0);
        assert_eq!(search_complexity_probe(10, 4).unwrap().transitions, 144);
        assert_eq!(search_complexity_probe(100, 40).unwrap().transitions, 158_400);
    }

    #[test]
    fn beam_limits_work() {
        let e = emission(&[&[0.5, 0.3, 0.2][..]; 4], &[0.5; 4]);
        let cfg = SearchConfig {
            beam_width: Some(1),
            ..SearchConfig::default()
        };
        let d = viterbi(&e, &BigramLm::uniform(3), &cfg).unwrap();
        assert_eq!(d.transitions, 3 * 3);
        assert_eq!(d.segments.labels(), vec![PhonemeId(0)]);
        let bad = SearchConfig {
            beam_width: Some(0),
            ..SearchConfig::default()
        };
        assert!(viterbi(&e, &BigramLm::uniform(3), &bad).is_err());
    }
}

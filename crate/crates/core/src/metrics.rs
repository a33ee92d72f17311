//! Error rates, frame F1, interval IoU and the matching score.

use serde::{Deserialize, Serialize};

use crate::config::SubstitutionWeight;
use crate::error::{Error, Result};
use crate::segments::AlignmentSegments;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EditDurations {
    pub substitution_s: f64,
    pub deletion_s: f64,
    pub insertion_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EditOps {
    pub matches: usize,
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    /// Present only for duration-weighted alignments.
    pub durations: Option<EditDurations>,
}

impl EditOps {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Op {
    Match,
    Sub,
    Del,
    Ins,
}

/// Minimal-cost edit alignment under arbitrary costs. The backtrace prefers
/// match, then substitution, deletion, insertion among equal-cost moves.
fn weighted_script<T: PartialEq>(
    reference: &[T],
    hyp: &[T],
    sub: impl Fn(usize, usize) -> f64,
    del: impl Fn(usize) -> f64,
    ins: impl Fn(usize) -> f64,
) -> (f64, Vec<(Op, Option<usize>, Option<usize>)>) {
    let (n, m) = (reference.len(), hyp.len());
    let w = m + 1;
    let mut d = vec![0.0; (n + 1) * w];
    for i in 1..=n {
        d[i * w] = d[(i - 1) * w] + del(i - 1);
    }
    for j in 1..=m {
        d[j] = d[j - 1] + ins(j - 1);
    }
    for i in 1..=n {
        for j in 1..=m {
            let diag = d[(i - 1) * w + j - 1]
                + if reference[i - 1] == hyp[j - 1] {
                    0.0
                } else {
                    sub(i - 1, j - 1)
                };
            let up = d[(i - 1) * w + j] + del(i - 1);
            let left = d[i * w + j - 1] + ins(j - 1);
            d[i * w + j] = diag.min(up).min(left);
        }
    }
    let mut script = Vec::with_capacity(n + m);
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let same = reference[i - 1] == hyp[j - 1];
            let cost = if same { 0.0 } else { sub(i - 1, j - 1) };
            if d[(i - 1) * w + j - 1] + cost == here {
                script.push((if same { Op::Match } else { Op::Sub }, Some(i - 1), Some(j - 1)));
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && d[(i - 1) * w + j] + del(i - 1) == here {
            script.push((Op::Del, Some(i - 1), None));
            i -= 1;
        } else {
            script.push((Op::Ins, None, Some(j - 1)));
            j -= 1;
        }
    }
    script.reverse();
    (d[n * w + m], script)
}

/// Unit-cost edit script as `(reference index, hypothesis index)` pairs;
/// `None` on one side marks an insertion or deletion.
pub fn levenshtein_script<T: PartialEq>(reference: &[T], hyp: &[T]) -> Vec<(Option<usize>, Option<usize>)> {
    weighted_script(reference, hyp, |_, _| 1.0, |_| 1.0, |_| 1.0)
        .1
        .into_iter()
        .map(|(_, r, h)| (r, h))
        .collect()
}

fn count(script: &[(Op, Option<usize>, Option<usize>)]) -> EditOps {
    let mut ops = EditOps::default();
    for (op, _, _) in script {
        match op {
            Op::Match => ops.matches += 1,
            Op::Sub => ops.substitutions += 1,
            Op::Del => ops.deletions += 1,
            Op::Ins => ops.insertions += 1,
        }
    }
    ops
}

pub fn edit_ops<T: PartialEq>(reference: &[T], hyp: &[T]) -> EditOps {
    count(&weighted_script(reference, hyp, |_, _| 1.0, |_| 1.0, |_| 1.0).1)
}

/// Levenshtein distance over `|reference|`.
pub fn per<T: PartialEq>(reference: &[T], hyp: &[T]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::Empty("reference sequence"));
    }
    Ok(edit_ops(reference, hyp).errors() as f64 / reference.len() as f64)
}

/// Word error rate against a (possibly disfluent) target transcript.
pub fn iwer<S: AsRef<str>>(target: &[S], hyp: &[S]) -> Result<f64> {
    let t: Vec<&str> = target.iter().map(AsRef::as_ref).collect();
    let h: Vec<&str> = hyp.iter().map(AsRef::as_ref).collect();
    if t.is_empty() {
        return Err(Error::Empty("target transcript"));
    }
    per(&t, &h)
}

/// Duration-weighted edit alignment between two segmentations.
pub fn dper_ops(
    reference: &AlignmentSegments,
    hyp: &AlignmentSegments,
    weight: SubstitutionWeight,
) -> Result<(f64, EditOps)> {
    let total: f64 = (0..reference.len()).map(|i| reference.duration_s(i)).sum();
    if total <= 0.0 {
        return Err(Error::InvalidArgument("reference has zero total duration".into()));
    }
    let (rl, hl) = (reference.labels(), hyp.labels());
    let rd = |i: usize| reference.duration_s(i);
    let hd = |j: usize| hyp.duration_s(j);
    let sub = |i: usize, j: usize| match weight {
        SubstitutionWeight::Max => rd(i).max(hd(j)),
        SubstitutionWeight::HalfSum => (rd(i) + hd(j)) / 2.0,
    };
    let (cost, script) = weighted_script(&rl, &hl, sub, rd, hd);
    let mut ops = count(&script);
    let mut dur = EditDurations::default();
    for (op, r, h) in &script {
        match op {
            Op::Sub => dur.substitution_s += sub(r.unwrap(), h.unwrap()),
            Op::Del => dur.deletion_s += rd(r.unwrap()),
            Op::Ins => dur.insertion_s += hd(h.unwrap()),
            Op::Match => {}
        }
    }
    ops.durations = Some(dur);
    Ok((cost / total, ops))
}

pub fn dper(reference: &AlignmentSegments, hyp: &AlignmentSegments) -> Result<f64> {
    Ok(dper_ops(reference, hyp, SubstitutionWeight::Max)?.0)
}

/// `(micro F1, macro F1)` over per-frame labels. Micro pools every frame
/// decision, which for single-label frames equals accuracy; macro averages
/// per-class F1 over the classes present in the reference.
pub fn frame_f1<T: Ord + Copy>(reference: &[T], hyp: &[T]) -> Result<(f64, f64)> {
    if reference.len() != hyp.len() {
        return Err(Error::Shape(format!(
            "{} reference frames vs {} hypothesis frames",
            reference.len(),
            hyp.len()
        )));
    }
    if reference.is_empty() {
        return Err(Error::Empty("frame labels"));
    }
    let correct = reference.iter().zip(hyp).filter(|(r, h)| r == h).count();
    let micro = correct as f64 / reference.len() as f64;
    let mut classes: Vec<T> = reference.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut sum = 0.0;
    for &k in &classes {
        let tp = reference.iter().zip(hyp).filter(|(r, h)| **r == k && **h == k).count();
        let fp = reference.iter().zip(hyp).filter(|(r, h)| **r != k && **h == k).count();
        let fneg = reference.iter().zip(hyp).filter(|(r, h)| **r == k && **h != k).count();
        sum += f1_from_counts(tp, fp, fneg);
    }
    Ok((micro, sum / classes.len() as f64))
}

/// `2TP / (2TP + FP + FN)`; 1 when there is nothing to find and nothing found.
pub fn f1_from_counts(tp: usize, fp: usize, fneg: usize) -> f64 {
    let denom = 2 * tp + fp + fneg;
    if denom == 0 {
        1.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Intersection over union of two intervals; 0 when disjoint or both empty.
pub fn iou(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Detection threshold on IoU (strict).
pub const MATCH_IOU: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub f1: f64,
    /// `(pred index, gt index, iou)` of every accepted pair.
    pub pairs: Vec<(usize, usize, f64)>,
}

/// Greedy one-to-one matching of same-key intervals by descending IoU; a pair
/// counts only when IoU exceeds 0.5. Equal IoUs are taken in order of the
/// intervals themselves, so the result does not depend on list order.
pub fn matching_score<K: PartialEq>(pred: &[(K, (f64, f64))], gt: &[(K, (f64, f64))]) -> MatchReport {
    let mut cands = Vec::new();
    for (p, (pk, pi)) in pred.iter().enumerate() {
        for (g, (gk, gi)) in gt.iter().enumerate() {
            if pk == gk {
                let v = iou(*pi, *gi);
                if v > MATCH_IOU {
                    cands.push((p, g, v));
                }
            }
        }
    }
    let key = |(p, g): (usize, usize)| {
        let (a, b) = (pred[p].1, gt[g].1);
        [a.0, a.1, b.0, b.1]
    };
    cands.sort_by(|a, b| {
        b.2.total_cmp(&a.2)
            .then_with(|| {
                let (ka, kb) = (key((a.0, a.1)), key((b.0, b.1)));
                ka.iter()
                    .zip(&kb)
                    .fold(std::cmp::Ordering::Equal, |o, (x, y)| o.then(x.total_cmp(y)))
            })
            .then(a.0.cmp(&b.0))
            .then(a.1.cmp(&b.1))
    });
    let mut used_p = vec![false; pred.len()];
    let mut used_g = vec![false; gt.len()];
    let mut pairs = Vec::new();
    for (p, g, v) in cands {
        if !used_p[p] && !used_g[g] {
            used_p[p] = true;
            used_g[g] = true;
            pairs.push((p, g, v));
        }
    }
    let tp = pairs.len();
    let fp = pred.len() - tp;
    let fneg = gt.len() - tp;
    MatchReport {
        true_positives: tp,
        false_positives: fp,
        false_negatives: fneg,
        f1: f1_from_counts(tp, fp, fneg),
        pairs,
    }
}

/// Sums matching counts over many utterances and recomputes F1.
pub fn pool(reports: &[MatchReport]) -> MatchReport {
    let tp = reports.iter().map(|r| r.true_positives).sum();
    let fp = reports.iter().map(|r| r.false_positives).sum();
    let fneg = reports.iter().map(|r| r.false_negatives).sum();
    MatchReport {
        true_positives: tp,
        false_positives: fp,
        false_negatives: fneg,
        f1: f1_from_counts(tp, fp, fneg),
        pairs: Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inventory::PhonemeId;
    use proptest::prelude::*;

    fn segs(spec: &[(u16, usize)], fd: f64) -> AlignmentSegments {
        let runs: Vec<(PhonemeId, usize)> = spec.iter().map(|&(l, n)| (PhonemeId(l), n)).collect();
        AlignmentSegments::from_runs(&runs, fd).unwrap()
    }

    #[test]
    fn per_examples() {
        assert_eq!(per(&["K", "AE", "T"], &["K", "AE", "T"]).unwrap(), 0.0);
        assert!((per(&["K", "AE", "T"], &["K", "T"]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(per::<&str>(&[], &["K"]).is_err());
    }

    #[test]
    fn iwer_examples() {
        let t = ["you", "you", "wish", "it"];
        assert_eq!(iwer(&t, &t).unwrap(), 0.0);
        assert_eq!(iwer(&t, &["you", "you", "fish", "it"]).unwrap(), 0.25);
        assert!(iwer::<&str>(&[], &["a"]).is_err());
    }

    #[test]
    fn dper_single_deletion() {
        let r = segs(&[(1, 50), (2, 50)], 0.02);
        let h = segs(&[(1, 50)], 0.02);
        assert!((dper(&r, &h).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(dper(&r, &r).unwrap(), 0.0);
        let (_, ops) = dper_ops(&r, &h, SubstitutionWeight::Max).unwrap();
        assert_eq!(ops.deletions, 1);
        assert!((ops.durations.unwrap().deletion_s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dper_substitution_weights() {
        let r = segs(&[(1, 10)], 0.1);
        let h = segs(&[(2, 30)], 0.1);
        // max(1, 3) = 3 beats delete+insert = 4
        assert!((dper(&r, &h).unwrap() - 3.0).abs() < 1e-12);
        let (half, _) = dper_ops(&r, &h, SubstitutionWeight::HalfSum).unwrap();
        assert!((half - 2.0).abs() < 1e-12);
    }

    #[test]
    fn frame_f1_examples() {
        assert_eq!(frame_f1(&[1, 1, 2], &[1, 1, 2]).unwrap(), (1.0, 1.0));
        assert_eq!(frame_f1(&[1, 1, 1], &[2, 2, 2]).unwrap(), (0.0, 0.0));
        // ref a a a b, hyp a b a b: class a tp2 fn1; class b tp1 fp1
        let (micro, macro_) = frame_f1(&[0, 0, 0, 1], &[0, 1, 0, 1]).unwrap();
        assert_eq!(micro, 0.75);
        let fa = 2.0 * 2.0 / (2.0 * 2.0 + 0.0 + 1.0);
        let fb = 2.0 * 1.0 / (2.0 * 1.0 + 1.0 + 0.0);
        assert!((macro_ - (fa + fb) / 2.0).abs() < 1e-15);
        assert!(frame_f1(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn iou_examples() {
        assert_eq!(iou((0.0, 1.0), (0.0, 1.0)), 1.0);
        assert!((iou((0.0, 1.0), (0.5, 1.5)) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(iou((0.0, 1.0), (2.0, 3.0)), 0.0);
        assert_eq!(iou((1.0, 1.0), (1.0, 1.0)), 0.0);
    }

    #[test]
    fn matching_examples() {
        let gt = [("rep", (0.0, 1.0)), ("pause", (2.0, 3.0))];
        assert_eq!(matching_score(&gt, &gt).f1, 1.0);
        let half = matching_score(&gt[..1], &gt);
        assert_eq!(
            (half.true_positives, half.false_negatives, half.false_positives),
            (1, 1, 0)
        );
        assert!((half.f1 - 2.0 / 3.0).abs() < 1e-15);
        // same interval, different kind: no match
        let wrong = [("pause", (0.0, 1.0))];
        assert_eq!(matching_score(&wrong, &gt[..1]).true_positives, 0);
        // IoU of exactly 0.5 is not enough
        assert_eq!(
            matching_score(&[("rep", (0.0, 0.5))], &[("rep", (0.0, 1.0))]).true_positives,
            0
        );
        let none: [(&str, (f64, f64)); 0] = [];
        assert_eq!(matching_score(&none, &none).f1, 1.0);
        assert_eq!(matching_score(&none, &gt).f1, 0.0);
    }

    proptest! {
        #[test]
        fn iou_symmetric_bounded(a0 in 0.0f64..5.0, al in 0.0f64..3.0, b0 in 0.0f64..5.0, bl in 0.0f64..3.0) {
            let (a, b) = ((a0, a0 + al), (b0, b0 + bl));
            let v = iou(a, b);
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert_eq!(v, iou(b, a));
            if al > 0.0 {
                prop_assert_eq!(iou(a, a), 1.0);
            }
        }

        #[test]
        fn zero_on_identity(xs in prop::collection::vec((0u16..4, 1usize..5), 1..6)) {
            let s = segs(&xs, 0.02);
            prop_assert_eq!(dper(&s, &s).unwrap(), 0.0);
            prop_assert_eq!(per(&s.labels(), &s.labels()).unwrap(), 0.0);
        }

        #[test]
        fn matching_invariant_under_permutation(
            evs in prop::collection::vec((0u8..2, 0.0f64..4.0, 0.1f64..1.0), 0..5),
            gts in prop::collection::vec((0u8..2, 0.0f64..4.0, 0.1f64..1.0), 0..5),
        ) {
            let p: Vec<(u8, (f64, f64))> = evs.iter().map(|&(k, s, l)| (k, (s, s + l))).collect();
            let g: Vec<(u8, (f64, f64))> = gts.iter().map(|&(k, s, l)| (k, (s, s + l))).collect();
            let mut rp = p.clone();
            rp.reverse();
            prop_assert_eq!(matching_score(&p, &g).f1, matching_score(&rp, &g).f1);
        }
    }
}

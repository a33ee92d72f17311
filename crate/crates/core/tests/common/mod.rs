//! Brute-force oracles and shared fixtures. Nothing here calls into the
//! code under test except to build inputs.
#![allow(dead_code)]

use rand::Rng;

use dysflux_core::bigram::{estimate_bigram, lexicon_corpus, BigramLm};
use dysflux_core::emission::EmissionInput;
use dysflux_core::inventory::{PhonemeId, PhonemeInventory};
use dysflux_core::reference::Lexicon;
use dysflux_core::search::SearchConfig;
use dysflux_core::segments::AlignmentSegments;
use dysflux_core::simulate::{generate_corpus, CorpusSpec, DurationRange, InjectionSpec, SimUtterance};

// ---------------------------------------------------------------------------
// Viterbi

pub struct ViterbiCase {
    pub logp: Vec<Vec<f64>>,
    pub lm_log: Vec<Vec<f64>>,
    pub boundary: Vec<f64>,
    pub cfg: SearchConfig,
}

impl ViterbiCase {
    pub fn emission(&self) -> EmissionInput {
        EmissionInput::from_rows(self.logp.clone(), self.boundary.clone(), 0.01).unwrap()
    }

    pub fn lm(&self) -> BigramLm {
        let n = self.lm_log.len();
        BigramLm::from_log_matrix(n, self.lm_log.iter().flatten().copied().collect()).unwrap()
    }
}

fn log_normalize(w: &[f64]) -> Vec<f64> {
    let z: f64 = w.iter().sum();
    w.iter().map(|x| (x / z).ln()).collect()
}

/// Random instance. Every fourth one is degenerate (flat emissions, b = 0.5)
/// so that exact ties actually occur.
pub fn random_viterbi_case(rng: &mut impl Rng, idx: usize, t: usize, n: usize) -> ViterbiCase {
    let flat = idx % 4 == 3;
    let logp = (0..t)
        .map(|_| {
            if flat {
                vec![-(n as f64).ln(); n]
            } else {
                log_normalize(&(0..n).map(|_| rng.gen_range(0.01..1.0)).collect::<Vec<_>>())
            }
        })
        .collect();
    let lm_log = (0..n)
        .map(|_| {
            if flat {
                vec![-(n as f64).ln(); n]
            } else {
                log_normalize(&(0..n).map(|_| rng.gen_range(0.05..1.0)).collect::<Vec<_>>())
            }
        })
        .collect();
    let boundary = (0..t)
        .map(|_| match rng.gen_range(0..10) {
            _ if flat => 0.5,
            0 => 0.0,
            1 => 1.0,
            _ => rng.gen_range(0.0..1.0),
        })
        .collect();
    let cfg = SearchConfig {
        lm_weight: [0.0, 0.3, 1.0][idx % 3],
        boundary_weight: [1.0, 0.5, 0.0, 2.0][idx % 4],
        ..SearchConfig::default()
    };
    ViterbiCase {
        logp,
        lm_log,
        boundary,
        cfg,
    }
}

/// The decoder's objective, summed frame by frame from the left.
pub fn oracle_path_score(case: &ViterbiCase, labels: &[usize]) -> f64 {
    let (lw, bw) = (case.cfg.lm_weight, case.cfg.boundary_weight);
    let mut s = case.logp[0][labels[0]];
    for t in 1..labels.len() {
        let b = case.boundary[t].clamp(1e-6, 1.0 - 1e-6);
        let (p, c) = (labels[t - 1], labels[t]);
        let trans = if p == c {
            bw * (1.0 - b).ln()
        } else {
            lw * case.lm_log[p][c] + bw * b.ln()
        };
        s = s + trans + case.logp[t][c];
    }
    s
}

/// Best score and every labelling that reaches it.
pub fn brute_force_viterbi(case: &ViterbiCase) -> (f64, Vec<Vec<usize>>) {
    let t = case.logp.len();
    let n = case.logp[0].len();
    let total = n.pow(t as u32);
    let mut best = f64::NEG_INFINITY;
    let mut winners = Vec::new();
    let mut labels = vec![0usize; t];
    for mut code in 0..total {
        for slot in labels.iter_mut().rev() {
            *slot = code % n;
            code /= n;
        }
        let s = oracle_path_score(case, &labels);
        if s > best {
            best = s;
            winners.clear();
        }
        if s == best {
            winners.push(labels.clone());
        }
    }
    (best, winners)
}

pub fn frame_labels(segs: &AlignmentSegments) -> Vec<usize> {
    segs.frame_labels().iter().map(|p| p.index()).collect()
}

// ---------------------------------------------------------------------------
// DTW

/// Minimum over every monotone path from the top-left to the bottom-right
/// cell of the summed `1 − sim`, accumulated from the start of the path.
pub fn brute_force_dtw(sim: &[Vec<f64>]) -> f64 {
    fn walk(sim: &[Vec<f64>], i: usize, j: usize, acc: f64, best: &mut f64) {
        let acc = acc + (1.0 - sim[i][j]);
        let (r, c) = (sim.len(), sim[0].len());
        if i == r - 1 && j == c - 1 {
            *best = best.min(acc);
            return;
        }
        if i + 1 < r && j + 1 < c {
            walk(sim, i + 1, j + 1, acc, best);
        }
        if j + 1 < c {
            walk(sim, i, j + 1, acc, best);
        }
        if i + 1 < r {
            walk(sim, i + 1, j, acc, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(sim, 0, 0, 0.0, &mut best);
    best
}

// ---------------------------------------------------------------------------
// edit distances

/// Exhaustive minimum-cost edit script. `sub(i, j)` is charged only when the
/// labels differ; matches are free.
pub fn brute_force_edit(
    n: usize,
    m: usize,
    same: &dyn Fn(usize, usize) -> bool,
    sub: &dyn Fn(usize, usize) -> f64,
    del: &dyn Fn(usize) -> f64,
    ins: &dyn Fn(usize) -> f64,
) -> f64 {
    fn go(
        i: usize,
        j: usize,
        n: usize,
        m: usize,
        same: &dyn Fn(usize, usize) -> bool,
        sub: &dyn Fn(usize, usize) -> f64,
        del: &dyn Fn(usize) -> f64,
        ins: &dyn Fn(usize) -> f64,
    ) -> f64 {
        if i == n && j == m {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        if i < n && j < m {
            let c = if same(i, j) { 0.0 } else { sub(i, j) };
            best = best.min(c + go(i + 1, j + 1, n, m, same, sub, del, ins));
        }
        if i < n {
            best = best.min(del(i) + go(i + 1, j, n, m, same, sub, del, ins));
        }
        if j < m {
            best = best.min(ins(j) + go(i, j + 1, n, m, same, sub, del, ins));
        }
        best
    }
    go(0, 0, n, m, same, sub, del, ins)
}

pub fn brute_force_levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    brute_force_edit(a.len(), b.len(), &|i, j| a[i] == b[j], &|_, _| 1.0, &|_| 1.0, &|_| 1.0) as usize
}

/// Duration-weighted error rate with substitutions charged `max(d_ref, d_hyp)`.
pub fn brute_force_dper(r: &AlignmentSegments, h: &AlignmentSegments) -> f64 {
    let (rl, hl) = (r.labels(), h.labels());
    let cost = brute_force_edit(
        rl.len(),
        hl.len(),
        &|i, j| rl[i] == hl[j],
        &|i, j| r.duration_s(i).max(h.duration_s(j)),
        &|i| r.duration_s(i),
        &|j| h.duration_s(j),
    );
    let total: f64 = (0..r.len()).map(|i| r.duration_s(i)).sum();
    cost / total
}

/// Random canonical segmentation of up to `max_len` segments over the first
/// `alphabet` phonemes (no equal neighbours).
pub fn random_segments(rng: &mut impl Rng, max_len: usize, alphabet: u16) -> AlignmentSegments {
    let len = rng.gen_range(1..=max_len);
    let mut runs: Vec<(PhonemeId, usize)> = Vec::with_capacity(len);
    while runs.len() < len {
        let p = PhonemeId(rng.gen_range(0..alphabet));
        if runs.last().is_some_and(|r| r.0 == p) {
            continue;
        }
        runs.push((p, rng.gen_range(1..=6)));
    }
    AlignmentSegments::from_runs(&runs, 0.02).unwrap()
}

// ---------------------------------------------------------------------------
// synthetic corpus

/// The evaluation corpus: 200 utterances at seed 42. Blocks are drawn from
/// 0.3–0.6 s so every injected block clears the 0.25 s pause threshold.
pub fn corpus_spec(sigma: f64) -> CorpusSpec {
    CorpusSpec {
        sigma,
        seed: 42,
        injection: InjectionSpec {
            block_range: DurationRange::new(0.3, 0.6),
            ..InjectionSpec::default()
        },
        ..CorpusSpec::default()
    }
}

pub fn corpus(spec: &CorpusSpec, count: usize) -> Vec<SimUtterance> {
    generate_corpus(count, spec, &Lexicon::builtin(), &PhonemeInventory::arpabet()).unwrap()
}

/// The default LM: add-one bigrams over the bundled lexicon's spellings.
pub fn lexicon_lm(inv: &PhonemeInventory) -> BigramLm {
    estimate_bigram(&lexicon_corpus(&Lexicon::builtin(), inv).unwrap(), inv.len(), 1.0).unwrap()
}

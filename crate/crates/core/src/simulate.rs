//! Seeded disfluency injection at the alignment level and synthetic emissions.
//!
//! Clean utterances are built from lexicon words with sampled phoneme
//! durations. Injection walks the clean segments once; every segment gets at
//! most one injection and a segment directly after an injected one is left
//! alone, so injected spans never touch.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::detect::{missing_interval, DisfluencyEvent, EventKind, HypWord, Level};
use crate::emission::EmissionInput;
use crate::error::{Error, Result};
use crate::inventory::{PhonemeId, PhonemeInventory};
use crate::reference::{Lexicon, RefWord, ReferenceText};
use crate::resegment::{WordSegmentation, WordSpan};
use crate::segments::{AlignmentSegments, Segment};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DurationRange {
    pub min_s: f64,
    pub max_s: f64,
}

impl DurationRange {
    pub const fn new(min_s: f64, max_s: f64) -> Self {
        Self { min_s, max_s }
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !(self.min_s >= 0.0 && self.min_s <= self.max_s && self.max_s.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "{name}: need 0 <= min_s <= max_s, got {}..{}",
                self.min_s, self.max_s
            )));
        }
        Ok(())
    }

    /// Uniform draw converted to whole frames (at least one).
    fn frames(&self, rng: &mut impl Rng, frame_duration: f64) -> usize {
        let s = if self.max_s > self.min_s {
            rng.gen_range(self.min_s..=self.max_s)
        } else {
            self.min_s
        };
        ((s / frame_duration).round() as usize).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InjectionSpec {
    pub repetition: f64,
    pub prolongation: f64,
    pub block: f64,
    /// Dropping a phoneme; surfaces as a missing phoneme.
    pub deletion: f64,
    /// Extra copies per repetition.
    pub repetition_count: usize,
    /// Silence separating a repeated segment from its copy.
    pub repetition_gap: DurationRange,
    pub prolongation_range: DurationRange,
    pub block_range: DurationRange,
    /// Half-width of the interval labelled around a deleted phoneme.
    pub missing_halfwidth_s: f64,
    pub seed: u64,
}

impl Default for InjectionSpec {
    fn default() -> Self {
        Self {
            repetition: 0.08,
            prolongation: 0.08,
            block: 0.05,
            deletion: 0.04,
            repetition_count: 1,
            repetition_gap: DurationRange::new(0.04, 0.12),
            prolongation_range: DurationRange::new(0.1, 0.5),
            block_range: DurationRange::new(0.15, 0.6),
            missing_halfwidth_s: 0.1,
            seed: 0,
        }
    }
}

impl InjectionSpec {
    /// No injections at all.
    pub fn none() -> Self {
        Self {
            repetition: 0.0,
            prolongation: 0.0,
            block: 0.0,
            deletion: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("repetition", self.repetition),
            ("prolongation", self.prolongation),
            ("block", self.block),
            ("deletion", self.deletion),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::InvalidArgument(format!(
                    "{name} rate must be in [0, 1], got {r}"
                )));
            }
        }
        if self.repetition_count == 0 {
            return Err(Error::InvalidArgument("repetition_count must be >= 1".into()));
        }
        self.repetition_gap.validate("repetition_gap")?;
        self.prolongation_range.validate("prolongation_range")?;
        self.block_range.validate("block_range")?;
        if self.repetition_gap.min_s <= 0.0 {
            return Err(Error::InvalidArgument(
                "repetition_gap must be positive so the copy stays a separate segment".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectionKind {
    Repetition,
    Prolongation,
    Block,
    Deletion,
}

/// One applied injection. Frames refer to the disfluent alignment; for a
/// deletion they mark the (empty) position where the phoneme was removed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Injection {
    pub kind: InjectionKind,
    /// Index of the affected clean segment.
    pub clean_index: usize,
    pub phoneme: String,
    pub start_frame: usize,
    pub end_frame: usize,
    /// Frames the clean segment occupied (for undoing a deletion).
    pub clean_frames: usize,
}

/// Where a disfluent segment came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Clean(usize),
    /// Copy of clean segment `n`.
    Copy(usize),
    /// Inserted silence.
    Silence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub clean: AlignmentSegments,
    pub disfluent: AlignmentSegments,
    /// Detectable events: Repetition, IrregularPause (blocks), Missing (deletions).
    pub events: Vec<DisfluencyEvent>,
    /// Every applied injection, including prolongations.
    pub injections: Vec<Injection>,
    /// One entry per disfluent segment.
    pub origin: Vec<Origin>,
}

impl GroundTruth {
    /// Undoes every injection.
    pub fn reconstruct_clean(&self, inv: &PhonemeInventory) -> Result<AlignmentSegments> {
        let clean_len = self.clean.len();
        let mut frames: Vec<Option<(PhonemeId, usize)>> = vec![None; clean_len];
        for (k, o) in self.origin.iter().enumerate() {
            if let Origin::Clean(i) = *o {
                let s = self.disfluent.segments()[k];
                frames[i] = Some((s.phoneme, s.frames()));
            }
        }
        for inj in &self.injections {
            match inj.kind {
                InjectionKind::Prolongation => {
                    if let Some((_, f)) = frames[inj.clean_index].as_mut() {
                        *f -= inj.end_frame - inj.start_frame;
                    }
                }
                InjectionKind::Deletion => {
                    frames[inj.clean_index] = Some((inv.id(&inj.phoneme)?, inj.clean_frames));
                }
                _ => {}
            }
        }
        let runs = frames
            .into_iter()
            .enumerate()
            .map(|(i, f)| f.ok_or_else(|| Error::Shape(format!("clean segment {i} lost"))))
            .collect::<Result<Vec<_>>>()?;
        AlignmentSegments::from_runs(&runs, self.clean.frame_duration())
    }

    /// Word spans of the disfluent alignment. Clean non-SIL segments map
    /// one-to-one onto reference rows; copies belong to their source's word.
    pub fn word_segmentation(&self, reference: &ReferenceText, inv: &PhonemeInventory) -> Result<WordSegmentation> {
        let mut row_of = vec![None; self.clean.len()];
        let mut next = 0;
        for (i, s) in self.clean.segments().iter().enumerate() {
            if !inv.is_sil(s.phoneme) {
                row_of[i] = Some(next);
                next += 1;
            }
        }
        if next != reference.len() {
            return Err(Error::Shape(format!(
                "clean alignment has {next} phonemes, reference has {}",
                reference.len()
            )));
        }
        let fd = self.disfluent.frame_duration();
        let mut first = vec![None; reference.num_words()];
        let mut last = vec![0; reference.num_words()];
        for (k, o) in self.origin.iter().enumerate() {
            let i = match *o {
                Origin::Clean(i) | Origin::Copy(i) => i,
                Origin::Silence => continue,
            };
            let Some(row) = row_of[i] else { continue };
            let w = reference.word_of(row);
            let s = self.disfluent.segments()[k];
            first[w].get_or_insert(s.start);
            last[w] = s.end;
        }
        let mut out = WordSegmentation::default();
        for (w, word) in reference.words().iter().enumerate() {
            match first[w] {
                Some(start) => out.entries.push(WordSpan {
                    word_index: w,
                    word: word.text.clone(),
                    start_frame: start,
                    end_frame: last[w],
                    start_s: start as f64 * fd,
                    end_s: last[w] as f64 * fd,
                }),
                None => out.omitted.push(w),
            }
        }
        Ok(out)
    }

    /// A perfect recogniser's output: the reference words at their true spans.
    pub fn oracle_hypothesis(&self, reference: &ReferenceText, inv: &PhonemeInventory) -> Result<Vec<HypWord>> {
        Ok(self
            .word_segmentation(reference, inv)?
            .entries
            .into_iter()
            .map(|s| HypWord {
                word: s.word,
                start_s: s.start_s,
                end_s: s.end_s,
            })
            .collect())
    }
}

fn try_kind(rng: &mut impl Rng, spec: &InjectionSpec) -> Option<InjectionKind> {
    // one draw per kind, in a fixed order, so rates act independently
    let draws = [
        (InjectionKind::Repetition, spec.repetition),
        (InjectionKind::Prolongation, spec.prolongation),
        (InjectionKind::Block, spec.block),
        (InjectionKind::Deletion, spec.deletion),
    ];
    let mut chosen = None;
    for (kind, rate) in draws {
        let hit = rng.gen::<f64>() < rate;
        if hit && chosen.is_none() {
            chosen = Some(kind);
        }
    }
    chosen
}

/// Applies seeded injections to a canonical clean alignment.
pub fn inject(clean: &AlignmentSegments, spec: &InjectionSpec, inv: &PhonemeInventory) -> Result<GroundTruth> {
    spec.validate()?;
    if clean.is_empty() {
        return Err(Error::Empty("clean alignment"));
    }
    let fd = clean.frame_duration();
    let segs = clean.segments();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let sil = inv.sil();
    let mut out: Vec<(PhonemeId, usize, Origin)> = Vec::new();
    let mut injections = Vec::new();
    let mut events = Vec::new();
    let mut frame = 0;
    let mut skip_next = false;
    let mut pending_missing: Vec<(usize, usize)> = Vec::new(); // (injection index, frame)

    for (i, s) in segs.iter().enumerate() {
        let label = inv.label(s.phoneme).to_string();
        let speech = !inv.is_sil(s.phoneme);
        let kind = if speech && !skip_next {
            try_kind(&mut rng, spec)
        } else {
            None
        };
        let prev_speech = i > 0 && !inv.is_sil(segs[i - 1].phoneme);
        let next_speech = i + 1 < segs.len() && !inv.is_sil(segs[i + 1].phoneme);
        let kind = match kind {
            Some(InjectionKind::Block) if !prev_speech => None,
            Some(InjectionKind::Deletion)
                if !(prev_speech && next_speech && segs[i - 1].phoneme != segs[i + 1].phoneme) =>
            {
                None
            }
            k => k,
        };
        skip_next = kind.is_some();
        match kind {
            None => {
                out.push((s.phoneme, s.frames(), Origin::Clean(i)));
                frame += s.frames();
            }
            Some(InjectionKind::Repetition) => {
                let start = frame;
                out.push((s.phoneme, s.frames(), Origin::Clean(i)));
                frame += s.frames();
                let inj_start = frame;
                for _ in 0..spec.repetition_count {
                    let gap = spec.repetition_gap.frames(&mut rng, fd);
                    out.push((sil, gap, Origin::Silence));
                    out.push((s.phoneme, s.frames(), Origin::Copy(i)));
                    frame += gap + s.frames();
                }
                injections.push(Injection {
                    kind: InjectionKind::Repetition,
                    clean_index: i,
                    phoneme: label.clone(),
                    start_frame: inj_start,
                    end_frame: frame,
                    clean_frames: s.frames(),
                });
                events.push(DisfluencyEvent {
                    level: Level::Phoneme,
                    kind: EventKind::Repetition,
                    target: Some(label),
                    start_s: start as f64 * fd,
                    end_s: frame as f64 * fd,
                    evidence: Vec::new(),
                });
            }
            Some(InjectionKind::Prolongation) => {
                let extra = spec.prolongation_range.frames(&mut rng, fd);
                out.push((s.phoneme, s.frames() + extra, Origin::Clean(i)));
                frame += s.frames();
                injections.push(Injection {
                    kind: InjectionKind::Prolongation,
                    clean_index: i,
                    phoneme: label,
                    start_frame: frame,
                    end_frame: frame + extra,
                    clean_frames: s.frames(),
                });
                frame += extra;
            }
            Some(InjectionKind::Block) => {
                let len = spec.block_range.frames(&mut rng, fd);
                out.push((sil, len, Origin::Silence));
                injections.push(Injection {
                    kind: InjectionKind::Block,
                    clean_index: i,
                    phoneme: label,
                    start_frame: frame,
                    end_frame: frame + len,
                    clean_frames: s.frames(),
                });
                events.push(DisfluencyEvent {
                    level: Level::Phoneme,
                    kind: EventKind::IrregularPause,
                    target: None,
                    start_s: frame as f64 * fd,
                    end_s: (frame + len) as f64 * fd,
                    evidence: Vec::new(),
                });
                frame += len;
                out.push((s.phoneme, s.frames(), Origin::Clean(i)));
                frame += s.frames();
            }
            Some(InjectionKind::Deletion) => {
                pending_missing.push((injections.len(), frame));
                injections.push(Injection {
                    kind: InjectionKind::Deletion,
                    clean_index: i,
                    phoneme: label,
                    start_frame: frame,
                    end_frame: frame,
                    clean_frames: s.frames(),
                });
            }
        }
    }
    let total_s = frame as f64 * fd;
    for (k, f) in pending_missing {
        let (s, e) = missing_interval(f as f64 * fd, spec.missing_halfwidth_s, total_s);
        events.push(DisfluencyEvent {
            level: Level::Phoneme,
            kind: EventKind::Missing,
            target: Some(injections[k].phoneme.clone()),
            start_s: s,
            end_s: e,
            evidence: Vec::new(),
        });
    }
    crate::detect::sort_events(&mut events);

    let mut t = 0;
    let mut raw = Vec::with_capacity(out.len());
    let mut origin = Vec::with_capacity(out.len());
    for (p, n, o) in out {
        raw.push(Segment::new(p, t, t + n));
        origin.push(o);
        t += n;
    }
    let disfluent = AlignmentSegments::new(raw, fd)
        .map_err(|e| Error::InvalidArgument(format!("injection broke canonical form: {e}")))?;
    Ok(GroundTruth {
        clean: clean.clone(),
        disfluent,
        events,
        injections,
        origin,
    })
}

/// Standard deviation of logit noise per unit of `sigma`.
pub const LOGIT_NOISE_SCALE: f64 = 4.0;
/// Standard deviation of boundary noise per unit of `sigma`.
pub const BOUNDARY_NOISE_SCALE: f64 = 0.3;
pub const BOUNDARY_HIGH: f64 = 0.9;
pub const BOUNDARY_LOW: f64 = 0.1;

/// Per-frame posteriors peaked on the disfluent labels. Logits are
/// `κ·sim(label, k)` (SIL frames: `κ` on SIL only) plus Gaussian noise of
/// standard deviation `σ·LOGIT_NOISE_SCALE`, then log-softmax normalised.
pub fn synthesize_emission(
    gt: &GroundTruth,
    inv: &PhonemeInventory,
    kappa: f64,
    sigma: f64,
    seed: u64,
) -> Result<EmissionInput> {
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::InvalidArgument(format!("kappa must be > 0, got {kappa}")));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma must be >= 0, got {sigma}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = inv.len();
    let labels = gt.disfluent.frame_labels();
    let mut logp = Vec::with_capacity(labels.len() * n);
    let mut z = vec![0.0; n];
    for &y in &labels {
        for (k, zk) in z.iter_mut().enumerate() {
            let base = if inv.is_sil(y) {
                if k == y.index() {
                    kappa
                } else {
                    0.0
                }
            } else {
                kappa * inv.sim(y, PhonemeId(k as u16))
            };
            let noise = if sigma > 0.0 {
                {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    sigma * LOGIT_NOISE_SCALE * e
                }
            } else {
                0.0
            };
            *zk = base + noise;
        }
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        logp.extend(z.iter().map(|v| v - lse));
    }
    let mut bounds = vec![BOUNDARY_LOW; labels.len()];
    for s in gt.disfluent.segments() {
        bounds[s.start] = BOUNDARY_HIGH;
    }
    if sigma > 0.0 {
        for b in bounds.iter_mut() {
            let e: f64 = StandardNormal.sample(&mut rng);
            *b = (*b + sigma * BOUNDARY_NOISE_SCALE * e).clamp(0.02, 0.98);
        }
    }
    EmissionInput::new(n, logp, bounds, gt.disfluent.frame_duration())
}

/// Shape of a synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub injection: InjectionSpec,
    pub kappa: f64,
    pub sigma: f64,
    pub frame_duration: f64,
    pub min_words: usize,
    pub max_words: usize,
    pub phoneme_duration: DurationRange,
    pub edge_silence: DurationRange,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            injection: InjectionSpec::default(),
            kappa: 10.0,
            sigma: 0.0,
            frame_duration: 0.02,
            min_words: 3,
            max_words: 6,
            phoneme_duration: DurationRange::new(0.06, 0.16),
            edge_silence: DurationRange::new(0.2, 0.5),
            seed: 0,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        self.injection.validate()?;
        self.phoneme_duration.validate("phoneme_duration")?;
        self.edge_silence.validate("edge_silence")?;
        if self.min_words == 0 || self.min_words > self.max_words {
            return Err(Error::InvalidArgument("need 1 <= min_words <= max_words".into()));
        }
        if !(self.frame_duration > 0.0) {
            return Err(Error::InvalidArgument("frame_duration must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimUtterance {
    pub id: String,
    pub reference: ReferenceText,
    pub truth: GroundTruth,
    pub emission: EmissionInput,
}

/// Seed of utterance `index` under corpus seed `seed`.
pub fn utterance_seed(seed: u64, index: u64) -> u64 {
    seed ^ index
}

/// Random word sequence whose adjacent words never share a boundary phoneme
/// (so the clean alignment stays canonical without merging).
fn sample_words(rng: &mut impl Rng, lexicon: &Lexicon, inv: &PhonemeInventory, count: usize) -> Result<Vec<RefWord>> {
    let entries: Vec<(&String, &Vec<String>)> = lexicon.entries().collect();
    if entries.is_empty() {
        return Err(Error::Empty("lexicon"));
    }
    let mut words: Vec<RefWord> = Vec::with_capacity(count);
    while words.len() < count {
        let &(text, spelling) = entries.choose(rng).expect("non-empty");
        let phonemes = spelling.iter().map(|p| inv.id(p)).collect::<Result<Vec<_>>>()?;
        if phonemes.windows(2).any(|w| w[0] == w[1]) {
            continue;
        }
        if let Some(prev) = words.last() {
            if prev.phonemes.last() == phonemes.first() {
                continue;
            }
        }
        words.push(RefWord {
            text: text.clone(),
            phonemes,
        });
    }
    Ok(words)
}

/// Utterance `index` of the corpus described by `spec`.
pub fn generate_utterance(
    index: usize,
    spec: &CorpusSpec,
    lexicon: &Lexicon,
    inv: &PhonemeInventory,
) -> Result<SimUtterance> {
    let seed = utterance_seed(spec.seed, index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.gen_range(spec.min_words..=spec.max_words);
    let words = sample_words(&mut rng, lexicon, inv, count)?;
    let reference = ReferenceText::new(words, inv)?;
    let fd = spec.frame_duration;
    let mut runs = vec![(inv.sil(), spec.edge_silence.frames(&mut rng, fd))];
    for &p in reference.phonemes() {
        runs.push((p, spec.phoneme_duration.frames(&mut rng, fd)));
    }
    runs.push((inv.sil(), spec.edge_silence.frames(&mut rng, fd)));
    let clean = AlignmentSegments::from_runs(&runs, fd)?;
    let injection = InjectionSpec {
        seed: rng.gen(),
        ..spec.injection.clone()
    };
    let truth = inject(&clean, &injection, inv)?;
    let emission = synthesize_emission(&truth, inv, spec.kappa, spec.sigma, rng.gen())?;
    Ok(SimUtterance {
        id: format!("utt{index:05}"),
        reference,
        truth,
        emission,
    })
}

pub fn generate_corpus(
    count: usize,
    spec: &CorpusSpec,
    lexicon: &Lexicon,
    inv: &PhonemeInventory,
) -> Result<Vec<SimUtterance>> {
    spec.validate()?;
    (0..count).map(|i| generate_utterance(i, spec, lexicon, inv)).collect()
}

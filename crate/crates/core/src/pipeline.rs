//! Dataset-level orchestration: manifests, per-utterance artifacts and the
//! evaluation report.
//!
//! Output layout under `out/`:
//!
//! ```text
//! summary.json                      one status entry per utterance
//! <utt>/order_<k>/alignment.json    decoded segments
//! <utt>/order_<k>/alignment2d.json  grid, assignment, DTW path (order 0)
//! <utt>/order_<k>/words.json        word segmentation
//! <utt>/events.json                 phoneme + word events
//! <utt>/word_streams.json           raw word streams and refreshed transcript
//! report.json, ms_by_order.csv      written by `evaluate`
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tracing::{debug, info, warn};

use crate::bigram::{estimate_bigram, lexicon_corpus, BigramLm};
use crate::config::PipelineConfig;
use crate::detect::{
    detect_phoneme, detect_word, sort_events, AsrHypothesis, EventKind, EventRecord, HypWord, Level,
    RefreshedTranscript, WordStatus,
};
use crate::emission::{self, write_binary};
use crate::error::{Error, Result};
use crate::inventory::PhonemeInventory;
use crate::metrics::{dper_ops, edit_ops, iwer, matching_score, pool, MatchReport};
use crate::reference::{Lexicon, ReferenceText};
use crate::resegment::{urfa_iterate, WordRecord};
use crate::segments::{AlignmentSegments, SegmentRecord};
use crate::simulate::{generate_utterance, CorpusSpec};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const REPORT_FILE: &str = "report.json";
pub const PLOT_FILE: &str = "ms_by_order.csv";

/// One utterance of a dataset. Relative paths resolve against the manifest's
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub utterance_id: String,
    pub emission_path: PathBuf,
    /// Words looked up in the lexicon.
    #[serde(default)]
    pub reference_text: String,
    /// Space-separated phonemes treated as one word; takes precedence over
    /// `reference_text`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_phonemes: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clean_alignment_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disfluent_alignment_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub events_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub word_segmentation_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hypothesis_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub utterances: Vec<ManifestEntry>,
    #[serde(skip)]
    base: PathBuf,
}

impl Manifest {
    pub fn new(utterances: Vec<ManifestEntry>, base: impl Into<PathBuf>) -> Self {
        Self {
            utterances,
            base: base.into(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut m: Manifest = read_json(path)?;
        m.base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut seen = BTreeSet::new();
        for e in &m.utterances {
            if e.utterance_id.is_empty() || e.utterance_id.contains(['/', '\\']) || e.utterance_id.starts_with('.') {
                return Err(Error::InvalidArgument(format!("bad utterance id `{}`", e.utterance_id)));
            }
            if !seen.insert(e.utterance_id.clone()) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate utterance id `{}`",
                    e.utterance_id
                )));
            }
        }
        Ok(m)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn get(&self, id: &str) -> Option<&ManifestEntry> {
        self.utterances.iter().find(|e| e.utterance_id == id)
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::json(path, e))?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Inventory, lexicon and LM resolved from a config.
#[derive(Debug, Clone)]
pub struct Resources {
    pub inventory: PhonemeInventory,
    pub lexicon: Lexicon,
    pub lm: BigramLm,
}

impl Resources {
    pub fn load(cfg: &PipelineConfig) -> Result<Self> {
        let inventory = match &cfg.inventory_path {
            Some(p) => PhonemeInventory::load(p)?,
            None => PhonemeInventory::arpabet(),
        };
        let lexicon = match &cfg.lexicon_path {
            Some(p) => Lexicon::load(p)?,
            None => Lexicon::builtin(),
        };
        let lm = if let Some(p) = &cfg.lm_path {
            BigramLm::load(p, &inventory)?
        } else if let Some(p) = &cfg.lm_corpus_path {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let corpus = text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| inventory.parse_sequence(l))
                .collect::<Result<Vec<_>>>()?;
            estimate_bigram(&corpus, inventory.len(), cfg.lm_smoothing)?
        } else {
            estimate_bigram(
                &lexicon_corpus(&lexicon, &inventory)?,
                inventory.len(),
                cfg.lm_smoothing,
            )?
        };
        Ok(Self { inventory, lexicon, lm })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceStatus {
    pub utterance_id: String,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Input problem (`true`) rather than an internal fault.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_error: Option<bool>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunSummary {
    pub processed: usize,
    pub failed: usize,
    pub utterances: Vec<UtteranceStatus>,
}

impl RunSummary {
    pub fn has_internal_error(&self) -> bool {
        self.utterances.iter().any(|u| u.data_error == Some(false))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Align,
    Detect,
    Both,
}

/// Where hypotheses come from. `dir` holds `<utterance_id>.json` files and
/// overrides per-entry `hypothesis_path`.
#[derive(Debug, Clone, Default)]
pub struct HypSource {
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordStreams {
    pub projection: Vec<EventRecord>,
    pub refresher: Vec<EventRecord>,
    pub transcript: Option<RefreshedTranscript>,
    pub transcript_text: Option<String>,
}

fn reference_for(entry: &ManifestEntry, res: &Resources) -> Result<ReferenceText> {
    match &entry.reference_phonemes {
        Some(p) => ReferenceText::from_phonemes(p, &res.inventory),
        None => ReferenceText::from_text(&entry.reference_text, &res.lexicon, &res.inventory),
    }
}

fn order_dir(out: &Path, id: &str, k: usize) -> PathBuf {
    out.join(id).join(format!("order_{k}"))
}

fn process(
    entry: &ManifestEntry,
    manifest: &Manifest,
    res: &Resources,
    cfg: &PipelineConfig,
    stage: Stage,
    hyp: &HypSource,
    out: &Path,
) -> Result<Vec<String>> {
    let inv = &res.inventory;
    let mut warnings = Vec::new();
    let e = emission::load(&manifest.resolve(&entry.emission_path), inv)?;
    let reference = reference_for(entry, res)?;
    let max_order = if stage == Stage::Detect { 0 } else { cfg.max_order };
    let state = urfa_iterate(&e, &reference, &res.lm, inv, &cfg.search, &cfg.thresholds, max_order)?;
    let id = &entry.utterance_id;

    if stage != Stage::Detect {
        for o in &state.orders {
            let dir = order_dir(out, id, o.order);
            write_json(&dir.join("alignment.json"), &o.segments.to_records(inv))?;
            write_json(&dir.join("alignment2d.json"), &o.grid.export(inv, o.dtw.as_ref()))?;
            write_json(&dir.join("words.json"), &o.words.to_records())?;
        }
    }
    if stage == Stage::Align {
        return Ok(warnings);
    }

    let zero = state.zero();
    let path = zero.dtw.as_ref().expect("order 0 keeps its DTW path");
    let mut events = detect_phoneme(&zero.grid, path, inv, &cfg.thresholds);

    let hyp_path = match &hyp.dir {
        Some(dir) => Some(dir.join(format!("{id}.json"))),
        None => entry.hypothesis_path.as_ref().map(|p| manifest.resolve(p)),
    };
    let hypothesis = match hyp_path {
        Some(p) if p.is_file() => Some(AsrHypothesis::load(&p)?),
        Some(p) => {
            let msg = format!("hypothesis {} not found; phoneme-level output only", p.display());
            warn!(utterance = %id, "{msg}");
            warnings.push(msg);
            None
        }
        None => None,
    };
    let streams = match &hypothesis {
        Some(h) => {
            let wd = detect_word(&zero.monotonic, &zero.grid, Some(h), &reference, inv);
            events.extend(wd.events);
            WordStreams {
                projection: wd.projection.iter().map(|e| e.record(id)).collect(),
                refresher: wd.refresher.iter().map(|e| e.record(id)).collect(),
                transcript_text: wd.transcript.as_ref().map(RefreshedTranscript::text),
                transcript: wd.transcript,
            }
        }
        None => WordStreams {
            projection: Vec::new(),
            refresher: Vec::new(),
            transcript: None,
            transcript_text: None,
        },
    };
    sort_events(&mut events);
    let records: Vec<EventRecord> = events.iter().map(|e| e.record(id)).collect();
    write_json(&out.join(id).join("events.json"), &records)?;
    write_json(&out.join(id).join("word_streams.json"), &streams)?;
    Ok(warnings)
}

/// Runs `stage` over every manifest entry on `cfg.workers` threads. Failures
/// are recorded per utterance; the others still run.
pub fn run_stage(
    manifest: &Manifest,
    cfg: &PipelineConfig,
    stage: Stage,
    hyp: &HypSource,
    out: &Path,
) -> Result<RunSummary> {
    cfg.validate()?;
    let res = Resources::load(cfg)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;
    let mut statuses: Vec<UtteranceStatus> = pool.install(|| {
        manifest
            .utterances
            .par_iter()
            .map(|entry| {
                let id = entry.utterance_id.clone();
                debug!(utterance = %id, ?stage, "processing");
                match process(entry, manifest, &res, cfg, stage, hyp, out) {
                    Ok(warnings) => UtteranceStatus {
                        utterance_id: id,
                        ok: true,
                        error: None,
                        data_error: None,
                        warnings,
                    },
                    Err(err) => {
                        warn!(utterance = %id, "{err}");
                        UtteranceStatus {
                            utterance_id: id,
                            ok: false,
                            error: Some(err.to_string()),
                            data_error: Some(err.is_data_error()),
                            warnings: Vec::new(),
                        }
                    }
                }
            })
            .collect()
    });
    statuses.sort_by(|a, b| a.utterance_id.cmp(&b.utterance_id));
    let summary = RunSummary {
        processed: statuses.iter().filter(|s| s.ok).count(),
        failed: statuses.iter().filter(|s| !s.ok).count(),
        utterances: statuses,
    };
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    info!(processed = summary.processed, failed = summary.failed, "done");
    Ok(summary)
}

pub fn cmd_align(manifest: &Manifest, cfg: &PipelineConfig, out: &Path) -> Result<RunSummary> {
    run_stage(manifest, cfg, Stage::Align, &HypSource::default(), out)
}

pub fn cmd_detect(manifest: &Manifest, cfg: &PipelineConfig, hyp: &HypSource, out: &Path) -> Result<RunSummary> {
    run_stage(manifest, cfg, Stage::Detect, hyp, out)
}

/// Writes `count` simulated utterances under `out` and returns the manifest.
/// The corpus seed is `cfg.seed`; `manifest.json` is written last, so its
/// presence marks a complete dataset.
pub fn cmd_simulate(cfg: &PipelineConfig, count: usize, out: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let res = Resources::load(cfg)?;
    let inv = &res.inventory;
    let spec = CorpusSpec {
        seed: cfg.seed,
        ..cfg.simulation.clone()
    };
    spec.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_json(&out.join("corpus.json"), &spec)?;
    let hash = inv.content_hash();
    let mut entries = Vec::with_capacity(count);
    for i in 0..count {
        let u = generate_utterance(i, &spec, &res.lexicon, inv)?;
        let dir = out.join(&u.id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let rel = |name: &str| PathBuf::from(&u.id).join(name);
        write_binary(&dir.join("emission.bin"), &u.emission, &hash)?;
        write_json(&dir.join("clean.json"), &u.truth.clean.to_records(inv))?;
        write_json(&dir.join("disfluent.json"), &u.truth.disfluent.to_records(inv))?;
        let events: Vec<EventRecord> = u.truth.events.iter().map(|e| e.record(&u.id)).collect();
        write_json(&dir.join("events.json"), &events)?;
        let words = u.truth.word_segmentation(&u.reference, inv)?;
        write_json(&dir.join("words.json"), &words.to_records())?;
        write_json(&dir.join("hyp.json"), &u.truth.oracle_hypothesis(&u.reference, inv)?)?;
        entries.push(ManifestEntry {
            utterance_id: u.id.clone(),
            emission_path: rel("emission.bin"),
            reference_text: u.reference.text(),
            reference_phonemes: None,
            clean_alignment_path: Some(rel("clean.json")),
            disfluent_alignment_path: Some(rel("disfluent.json")),
            events_path: Some(rel("events.json")),
            word_segmentation_path: Some(rel("words.json")),
            hypothesis_path: Some(rel("hyp.json")),
        });
    }
    let manifest = Manifest::new(entries, out);
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

// ---------------------------------------------------------------------------
// evaluation

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fneg: usize,
    pub f1: f64,
}

impl From<&MatchReport> for Counts {
    fn from(r: &MatchReport) -> Self {
        Self {
            tp: r.true_positives,
            fp: r.false_positives,
            fneg: r.false_negatives,
            f1: r.f1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderScore {
    pub order: usize,
    #[serde(flatten)]
    pub counts: Counts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindScore {
    pub level: Level,
    pub kind: EventKind,
    #[serde(flatten)]
    pub counts: Counts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceReport {
    pub utterance_id: String,
    pub per: Option<f64>,
    pub dper: Option<f64>,
    pub events: Option<Counts>,
    pub iwer: Option<f64>,
    pub ms_by_order: Vec<OrderScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub utterances: usize,
    /// Pooled: total edits over total reference phonemes.
    pub per: Option<f64>,
    /// Pooled: total weighted edits over total reference duration.
    pub dper: Option<f64>,
    /// Event F1 over pooled counts of every kind.
    pub micro_f1: Option<f64>,
    /// Mean of per-kind pooled F1 over kinds seen in either set.
    pub macro_f1: Option<f64>,
    pub iwer: Option<f64>,
    /// Word-segmentation MS at the highest order evaluated.
    pub ms_f1: Option<f64>,
    pub events: Option<Counts>,
    pub per_kind: Vec<KindScore>,
    pub ms_by_order: Vec<OrderScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub aggregate: Aggregate,
    pub utterances: Vec<UtteranceReport>,
    /// Prediction directories with no ground-truth entry.
    pub skipped: Vec<String>,
}

type Keyed = Vec<((Level, EventKind), (f64, f64))>;

fn keyed(records: &[EventRecord]) -> Keyed {
    records
        .iter()
        .map(|r| ((r.level, r.kind), (r.start_s, r.end_s)))
        .collect()
}

fn word_keyed(records: &[WordRecord]) -> Vec<(usize, (f64, f64))> {
    records.iter().map(|r| (r.word_index, (r.start_s, r.end_s))).collect()
}

fn read_optional<T: DeserializeOwned + Default>(path: &Path) -> Result<T> {
    if path.is_file() {
        read_json(path)
    } else {
        Ok(T::default())
    }
}

fn prediction_ids(pred: &Path) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    if !pred.is_dir() {
        return Ok(ids);
    }
    for entry in fs::read_dir(pred).map_err(|e| Error::io(pred, e))? {
        let entry = entry.map_err(|e| Error::io(pred, e))?;
        let p = entry.path();
        let is_utt = p.join("events.json").is_file() || p.join("order_0").is_dir();
        if p.is_dir() && is_utt {
            ids.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    ids.sort();
    Ok(ids)
}

struct UttEval {
    report: UtteranceReport,
    per_counts: Option<(usize, usize)>,
    dper_sums: Option<(f64, f64)>,
    iwer_counts: Option<(usize, usize)>,
    kinds: Vec<((Level, EventKind), MatchReport)>,
    orders: Vec<MatchReport>,
}

fn evaluate_one(
    entry: &ManifestEntry,
    gt: &Manifest,
    pred: &Path,
    cfg: &PipelineConfig,
    res: &Resources,
    max_order: usize,
) -> Result<UttEval> {
    let inv = &res.inventory;
    let id = &entry.utterance_id;
    let udir = pred.join(id);
    let mut report = UtteranceReport {
        utterance_id: id.clone(),
        per: None,
        dper: None,
        events: None,
        iwer: None,
        ms_by_order: Vec::new(),
    };

    let mut per_counts = None;
    let mut dper_sums = None;
    if let Some(p) = &entry.disfluent_alignment_path {
        let gt_recs: Vec<SegmentRecord> = read_json(&gt.resolve(p))?;
        let pred_recs: Vec<SegmentRecord> = read_optional(&udir.join("order_0").join("alignment.json"))?;
        let fd = emission::load(&gt.resolve(&entry.emission_path), inv)?.frame_duration();
        let r = AlignmentSegments::from_records(&gt_recs, inv, fd)?;
        let rl = r.labels();
        let hl: Vec<_> = pred_recs.iter().map(|s| inv.id(&s.phoneme)).collect::<Result<_>>()?;
        let ops = edit_ops(&rl, &hl);
        per_counts = Some((ops.errors(), rl.len()));
        report.per = Some(ops.errors() as f64 / rl.len().max(1) as f64);
        let total: f64 = (0..r.len()).map(|i| r.duration_s(i)).sum();
        let (rate, cost) = if pred_recs.is_empty() {
            (1.0, total)
        } else {
            let h = AlignmentSegments::from_records(&pred_recs, inv, fd)?;
            let (rate, _) = dper_ops(&r, &h, cfg.substitution_weight)?;
            (rate, rate * total)
        };
        report.dper = Some(rate);
        dper_sums = Some((cost, total));
    }

    let mut kinds = Vec::new();
    if let Some(p) = &entry.events_path {
        let gt_events = keyed(&read_json::<Vec<EventRecord>>(&gt.resolve(p))?);
        let pred_events = keyed(&read_optional::<Vec<EventRecord>>(&udir.join("events.json"))?);
        let mut keys: Vec<(Level, EventKind)> = gt_events.iter().chain(&pred_events).map(|e| e.0).collect();
        keys.sort();
        keys.dedup();
        for k in keys {
            let sel =
                |v: &Keyed| -> Vec<(u8, (f64, f64))> { v.iter().filter(|e| e.0 == k).map(|e| (0, e.1)).collect() };
            kinds.push((k, matching_score(&sel(&pred_events), &sel(&gt_events))));
        }
        let all: Vec<MatchReport> = kinds.iter().map(|k| k.1.clone()).collect();
        report.events = Some(Counts::from(&pool(&all)));
    }

    let mut iwer_counts = None;
    if let Some(p) = &entry.hypothesis_path {
        let target: Vec<HypWord> = read_json(&gt.resolve(p))?;
        let streams: Option<WordStreams> = {
            let sp = udir.join("word_streams.json");
            if sp.is_file() {
                Some(read_json(&sp)?)
            } else {
                None
            }
        };
        let hyp: Vec<String> = streams
            .and_then(|s| s.transcript)
            .map(|t| {
                t.words
                    .into_iter()
                    .filter(|w| w.status != WordStatus::Deleted)
                    .map(|w| w.word)
                    .collect()
            })
            .unwrap_or_default();
        let target: Vec<String> = target.into_iter().map(|w| w.word).collect();
        if !target.is_empty() {
            let ops = edit_ops(&target, &hyp);
            iwer_counts = Some((ops.errors(), target.len()));
            report.iwer = Some(iwer(&target, &hyp)?);
        }
    }

    let mut orders = Vec::new();
    if let Some(p) = &entry.word_segmentation_path {
        let gt_words = word_keyed(&read_json::<Vec<WordRecord>>(&gt.resolve(p))?);
        for k in 0..=max_order {
            let pw = word_keyed(&read_optional::<Vec<WordRecord>>(
                &order_dir(pred, id, k).join("words.json"),
            )?);
            let m = matching_score(&pw, &gt_words);
            report.ms_by_order.push(OrderScore {
                order: k,
                counts: Counts::from(&m),
            });
            orders.push(m);
        }
    }

    Ok(UttEval {
        report,
        per_counts,
        dper_sums,
        iwer_counts,
        kinds,
        orders,
    })
}

/// Scores predictions under `pred` against the ground-truth manifest and
/// writes `report.json` and `ms_by_order.csv` into `pred`. Missing prediction
/// files count as empty predictions; prediction directories with no
/// ground-truth entry are listed as skipped.
pub fn cmd_evaluate(pred: &Path, gt: &Manifest, cfg: &PipelineConfig) -> Result<EvalReport> {
    let res = Resources::load(cfg)?;
    let mut max_order = cfg.max_order;
    while order_dir_exists(pred, gt, max_order + 1) {
        max_order += 1;
    }
    let evals = gt
        .utterances
        .iter()
        .map(|e| evaluate_one(e, gt, pred, cfg, &res, max_order))
        .collect::<Result<Vec<_>>>()?;
    let skipped: Vec<String> = prediction_ids(pred)?
        .into_iter()
        .filter(|id| gt.get(id).is_none())
        .collect();

    let ratio = |pairs: Vec<(f64, f64)>| -> Option<f64> {
        if pairs.is_empty() {
            return None;
        }
        let (num, den): (f64, f64) = pairs.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
        Some(if den > 0.0 { num / den } else { 0.0 })
    };
    let per = ratio(
        evals
            .iter()
            .filter_map(|e| e.per_counts)
            .map(|(a, b)| (a as f64, b as f64))
            .collect(),
    );
    let dper = ratio(evals.iter().filter_map(|e| e.dper_sums).collect());
    let iwer_agg = ratio(
        evals
            .iter()
            .filter_map(|e| e.iwer_counts)
            .map(|(a, b)| (a as f64, b as f64))
            .collect(),
    );

    let has_events = evals.iter().any(|e| e.report.events.is_some());
    let mut keys: Vec<(Level, EventKind)> = evals.iter().flat_map(|e| e.kinds.iter().map(|k| k.0)).collect();
    keys.sort();
    keys.dedup();
    let per_kind: Vec<KindScore> = keys
        .iter()
        .map(|&k| {
            let reps: Vec<MatchReport> = evals
                .iter()
                .flat_map(|e| e.kinds.iter().filter(|x| x.0 == k).map(|x| x.1.clone()))
                .collect();
            KindScore {
                level: k.0,
                kind: k.1,
                counts: Counts::from(&pool(&reps)),
            }
        })
        .collect();
    let events = has_events.then(|| {
        let all: Vec<MatchReport> = evals.iter().flat_map(|e| e.kinds.iter().map(|k| k.1.clone())).collect();
        Counts::from(&pool(&all))
    });
    let macro_f1 = has_events.then(|| {
        if per_kind.is_empty() {
            1.0
        } else {
            per_kind.iter().map(|k| k.counts.f1).sum::<f64>() / per_kind.len() as f64
        }
    });

    let has_words = evals.iter().any(|e| !e.orders.is_empty());
    let ms_by_order: Vec<OrderScore> = if has_words {
        (0..=max_order)
            .map(|k| {
                let reps: Vec<MatchReport> = evals.iter().filter_map(|e| e.orders.get(k).cloned()).collect();
                OrderScore {
                    order: k,
                    counts: Counts::from(&pool(&reps)),
                }
            })
            .collect()
    } else {
        Vec::new()
    };

    let report = EvalReport {
        aggregate: Aggregate {
            utterances: evals.len(),
            per,
            dper,
            micro_f1: events.map(|c| c.f1),
            macro_f1,
            iwer: iwer_agg,
            ms_f1: ms_by_order.last().map(|o| o.counts.f1),
            events,
            per_kind,
            ms_by_order: ms_by_order.clone(),
        },
        utterances: evals.into_iter().map(|e| e.report).collect(),
        skipped,
    };
    write_json(&pred.join(REPORT_FILE), &report)?;
    let csv_path = pred.join(PLOT_FILE);
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record(["order", "ms_f1", "tp", "fp", "fn"])?;
    for o in &ms_by_order {
        w.write_record([
            o.order.to_string(),
            format!("{:.6}", o.counts.f1),
            o.counts.tp.to_string(),
            o.counts.fp.to_string(),
            o.counts.fneg.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    Ok(report)
}

fn order_dir_exists(pred: &Path, gt: &Manifest, k: usize) -> bool {
    gt.utterances
        .iter()
        .any(|e| order_dir(pred, &e.utterance_id, k).is_dir())
}

/// Everything in one go. Without a manifest a corpus is simulated into
/// `out/data` first; evaluation runs when the manifest carries ground truth.
pub fn cmd_run(
    manifest: Option<&Manifest>,
    cfg: &PipelineConfig,
    count: usize,
    hyp: &HypSource,
    out: &Path,
) -> Result<(RunSummary, Option<EvalReport>)> {
    let simulated;
    let manifest = match manifest {
        Some(m) => m,
        None => {
            simulated = cmd_simulate(cfg, count, &out.join("data"))?;
            &simulated
        }
    };
    let pred = out.join("pred");
    let summary = run_stage(manifest, cfg, Stage::Both, hyp, &pred)?;
    let has_truth = manifest
        .utterances
        .iter()
        .any(|e| e.events_path.is_some() || e.word_segmentation_path.is_some() || e.disfluent_alignment_path.is_some());
    let report = if has_truth {
        Some(cmd_evaluate(&pred, manifest, cfg)?)
    } else {
        None
    };
    Ok((summary, report))
}

//! Disfluent speech alignment and detection.
//!
//! The crate consumes per-frame phoneme emissions produced by an upstream
//! acoustic model and turns them into:
//!
//! * a non-monotonic phoneme alignment (boundary-aware Viterbi with a bigram LM),
//! * a 2D alignment against the reference text plus its monotonic DTW twin,
//! * recursive word segmentation refined per word span,
//! * typed, time-stamped disfluency events at phoneme and word level.
//!
//! A seeded simulator and a metrics suite make the whole chain testable
//! without audio.

pub mod bigram;
pub mod config;
pub mod detect;
pub mod emission;
pub mod error;
pub mod grid;
pub mod inventory;
pub mod metrics;
pub mod pipeline;
pub mod reference;
pub mod resegment;
pub mod search;
pub mod segments;
pub mod simulate;

pub use error::{Error, Result};

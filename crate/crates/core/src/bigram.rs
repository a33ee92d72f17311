//! Add-k smoothed phoneme bigram model.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inventory::{PhonemeId, PhonemeInventory};
use crate::reference::Lexicon;

#[derive(Debug, Clone, PartialEq)]
pub struct BigramLm {
    n: usize,
    log_transition: Vec<f64>,
}

impl BigramLm {
    /// Row-major N×N natural-log matrix; each row must exponentiate to 1 within `1e-4`.
    pub fn from_log_matrix(n: usize, log_transition: Vec<f64>) -> Result<Self> {
        if n == 0 || log_transition.len() != n * n {
            return Err(Error::Shape(format!(
                "bigram matrix has {} entries for N={n}",
                log_transition.len()
            )));
        }
        for a in 0..n {
            let row = &log_transition[a * n..(a + 1) * n];
            if row.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
                return Err(Error::InvalidArgument(format!("bigram row {a} is not finite")));
            }
            let sum: f64 = row.iter().map(|v| v.exp()).sum();
            if (sum - 1.0).abs() > 1e-4 {
                return Err(Error::InvalidArgument(format!("bigram row {a} sums to {sum}")));
            }
        }
        Ok(Self { n, log_transition })
    }

    /// Uniform transitions, log(1/N) everywhere.
    pub fn uniform(n: usize) -> Self {
        Self {
            n,
            log_transition: vec![-(n as f64).ln(); n * n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn log_prob(&self, from: PhonemeId, to: PhonemeId) -> f64 {
        self.log_transition[from.index() * self.n + to.index()]
    }

    pub fn row(&self, from: PhonemeId) -> &[f64] {
        &self.log_transition[from.index() * self.n..(from.index() + 1) * self.n]
    }

    pub fn to_doc(&self, inv: &PhonemeInventory) -> BigramDoc {
        BigramDoc {
            symbols: inv.symbols().to_vec(),
            log_transition: self.log_transition.chunks(self.n).map(<[f64]>::to_vec).collect(),
        }
    }

    pub fn from_doc(doc: &BigramDoc, inv: &PhonemeInventory) -> Result<Self> {
        if doc.symbols != inv.symbols() {
            return Err(Error::Shape("bigram symbols differ from the inventory".into()));
        }
        if doc.log_transition.iter().any(|r| r.len() != doc.symbols.len()) {
            return Err(Error::Shape("bigram matrix is not square".into()));
        }
        Self::from_log_matrix(
            doc.symbols.len(),
            doc.log_transition.iter().flatten().copied().collect(),
        )
    }

    pub fn load(path: &Path, inv: &PhonemeInventory) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let doc: BigramDoc = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        Self::from_doc(&doc, inv)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BigramDoc {
    pub symbols: Vec<String>,
    pub log_transition: Vec<Vec<f64>>,
}

/// Add-k bigram estimate over `n` symbols. Each row is
/// `(count(a,b) + k) / (count(a,·) + k·n)`.
pub fn estimate_bigram(corpus: &[Vec<PhonemeId>], n: usize, k: f64) -> Result<BigramLm> {
    if corpus.is_empty() {
        return Err(Error::Empty("bigram corpus"));
    }
    if !(k > 0.0 && k.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "smoothing constant must be > 0, got {k}"
        )));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("empty symbol set".into()));
    }
    let mut counts = vec![0u64; n * n];
    for seq in corpus {
        for pair in seq.windows(2) {
            let (a, b) = (pair[0].index(), pair[1].index());
            if a >= n || b >= n {
                return Err(Error::UnknownLabel(format!("#{}", a.max(b))));
            }
            counts[a * n + b] += 1;
        }
    }
    let mut log_transition = vec![0.0; n * n];
    for a in 0..n {
        let row = &counts[a * n..(a + 1) * n];
        let total: u64 = row.iter().sum();
        let denom = total as f64 + k * n as f64;
        for b in 0..n {
            log_transition[a * n + b] = ((row[b] as f64 + k) / denom).ln();
        }
    }
    Ok(BigramLm { n, log_transition })
}

/// Training sequences from a lexicon: each spelling framed by SIL.
pub fn lexicon_corpus(lexicon: &Lexicon, inv: &PhonemeInventory) -> Result<Vec<Vec<PhonemeId>>> {
    lexicon
        .entries()
        .map(|(_, spelling)| {
            let mut seq = vec![inv.sil()];
            for p in spelling {
                seq.push(inv.id(p)?);
            }
            seq.push(inv.sil());
            Ok(seq)
        })
        .collect()
}

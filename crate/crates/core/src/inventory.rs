//! Phoneme inventory and articulatory embeddings.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const SIL: &str = "SIL";

/// Minimum embedding dimension accepted by [`PhonemeInventory::new`].
pub const MIN_FEATURE_DIM: usize = 8;

const ARPABET_TABLE: &str = include_str!("../data/arpabet_features.json");

/// Index of a phoneme inside its inventory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PhonemeId(pub u16);

impl PhonemeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for PhonemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Articulatory feature vector of one phoneme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhonemeEmbedding(pub Vec<f64>);

impl PhonemeEmbedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0.0)
    }

    /// Cosine similarity clamped to `[0, 1]`; zero vectors give 0.
    pub fn cosine(&self, other: &PhonemeEmbedding) -> f64 {
        let (na, nb) = (self.norm(), other.norm());
        if na == 0.0 || nb == 0.0 {
            return 0.0;
        }
        let dot: f64 = self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum();
        (dot / (na * nb)).clamp(0.0, 1.0)
    }
}

/// On-disk layout of an inventory: `symbols` plus a label → vector map.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InventoryDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dimensions: Vec<String>,
    pub symbols: Vec<String>,
    pub features: HashMap<String, Vec<f64>>,
}

/// Closed phoneme set with one embedding per label.
///
/// Similarities are precomputed into an N×N table at construction, so
/// lookups in the alignment hot loops are a single index.
#[derive(Debug, Clone)]
pub struct PhonemeInventory {
    symbols: Vec<String>,
    embeddings: Vec<PhonemeEmbedding>,
    index: HashMap<String, PhonemeId>,
    sil: PhonemeId,
    sim: Vec<f64>,
}

impl PartialEq for PhonemeInventory {
    fn eq(&self, other: &Self) -> bool {
        self.symbols == other.symbols && self.embeddings == other.embeddings
    }
}

impl PhonemeInventory {
    pub fn new(symbols: Vec<String>, embeddings: Vec<PhonemeEmbedding>) -> Result<Self> {
        if symbols.is_empty() {
            return Err(Error::Inventory("no symbols".into()));
        }
        if symbols.len() != embeddings.len() {
            return Err(Error::Inventory(format!(
                "{} symbols but {} feature vectors",
                symbols.len(),
                embeddings.len()
            )));
        }
        if symbols.len() > u16::MAX as usize {
            return Err(Error::Inventory("too many symbols".into()));
        }
        let dim = embeddings[0].dim();
        if dim < MIN_FEATURE_DIM {
            return Err(Error::Inventory(format!(
                "feature dimension {dim} is below {MIN_FEATURE_DIM}"
            )));
        }
        let mut index = HashMap::with_capacity(symbols.len());
        for (i, (sym, emb)) in symbols.iter().zip(&embeddings).enumerate() {
            if emb.dim() != dim {
                return Err(Error::Inventory(format!(
                    "`{sym}` has dimension {} (expected {dim})",
                    emb.dim()
                )));
            }
            if emb.0.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return Err(Error::Inventory(format!("`{sym}` has a feature outside [0, 1]")));
            }
            if sym == SIL {
                if !emb.is_zero() {
                    return Err(Error::Inventory("SIL must have the all-zeros vector".into()));
                }
            } else if emb.is_zero() {
                return Err(Error::Inventory(format!("`{sym}` has the all-zeros vector")));
            }
            if index.insert(sym.clone(), PhonemeId(i as u16)).is_some() {
                return Err(Error::Inventory(format!("duplicate label `{sym}`")));
            }
        }
        let sil = *index
            .get(SIL)
            .ok_or_else(|| Error::Inventory("SIL is missing".into()))?;

        let n = symbols.len();
        let mut sim = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                sim[a * n + b] = if a == b {
                    1.0
                } else if a == sil.index() || b == sil.index() {
                    0.0
                } else {
                    embeddings[a].cosine(&embeddings[b])
                };
            }
        }
        Ok(Self {
            symbols,
            embeddings,
            index,
            sil,
            sim,
        })
    }

    pub fn from_doc(doc: InventoryDoc) -> Result<Self> {
        let mut features = doc.features;
        let mut embeddings = Vec::with_capacity(doc.symbols.len());
        for sym in &doc.symbols {
            let v = features
                .remove(sym)
                .ok_or_else(|| Error::Inventory(format!("no features for `{sym}`")))?;
            embeddings.push(PhonemeEmbedding(v));
        }
        if let Some(extra) = features.keys().next() {
            return Err(Error::Inventory(format!("features given for unlisted `{extra}`")));
        }
        Self::new(doc.symbols, embeddings)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let doc: InventoryDoc = serde_json::from_str(s).map_err(|e| Error::json("<inventory>", e))?;
        Self::from_doc(doc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let doc: InventoryDoc = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        Self::from_doc(doc)
    }

    /// The shipped ARPABET table (39 phonemes plus SIL).
    pub fn arpabet() -> Self {
        Self::from_json_str(ARPABET_TABLE).expect("bundled feature table is valid")
    }

    pub fn to_doc(&self) -> InventoryDoc {
        InventoryDoc {
            version: None,
            dimensions: Vec::new(),
            symbols: self.symbols.clone(),
            features: self
                .symbols
                .iter()
                .cloned()
                .zip(self.embeddings.iter().map(|e| e.0.clone()))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings[0].dim()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn sil(&self) -> PhonemeId {
        self.sil
    }

    pub fn is_sil(&self, id: PhonemeId) -> bool {
        id == self.sil
    }

    pub fn id(&self, label: &str) -> Result<PhonemeId> {
        self.index
            .get(label)
            .copied()
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    pub fn label(&self, id: PhonemeId) -> &str {
        &self.symbols[id.index()]
    }

    pub fn embedding(&self, id: PhonemeId) -> &PhonemeEmbedding {
        &self.embeddings[id.index()]
    }

    pub fn ids(&self) -> impl Iterator<Item = PhonemeId> + '_ {
        (0..self.symbols.len()).map(|i| PhonemeId(i as u16))
    }

    /// Similarity by id. Self-similarity is 1, SIL against anything else is 0.
    #[inline]
    pub fn sim(&self, a: PhonemeId, b: PhonemeId) -> f64 {
        self.sim[a.index() * self.symbols.len() + b.index()]
    }

    pub fn similarity(&self, a: &str, b: &str) -> Result<f64> {
        Ok(self.sim(self.id(a)?, self.id(b)?))
    }

    pub fn parse_sequence(&self, text: &str) -> Result<Vec<PhonemeId>> {
        text.split_whitespace().map(|s| self.id(s)).collect()
    }

    /// Hex SHA-256 over symbols and feature bits, used to pin emission files
    /// to the inventory they were produced against.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for (sym, emb) in self.symbols.iter().zip(&self.embeddings) {
            h.update(sym.as_bytes());
            h.update([0u8]);
            for x in &emb.0 {
                h.update(x.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Cosine similarity between two labels of `inv`.
pub fn phoneme_similarity(a: &str, b: &str, inv: &PhonemeInventory) -> Result<f64> {
    inv.similarity(a, b)
}

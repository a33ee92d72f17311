//! Reference text: words with their phoneme spellings, plus the flat phoneme axis.

use std::collections::BTreeMap;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inventory::{PhonemeId, PhonemeInventory};

const BUILTIN_LEXICON: &str = include_str!("../data/lexicon.json");

/// Word → phoneme spelling. No grapheme-to-phoneme fallback.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lexicon {
    #[serde(default)]
    pub version: Option<u32>,
    pub words: BTreeMap<String, Vec<String>>,
}

impl Lexicon {
    pub fn builtin() -> Self {
        serde_json::from_str(BUILTIN_LEXICON).expect("bundled lexicon is valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    pub fn lookup(&self, word: &str) -> Result<&[String]> {
        self.words
            .get(&word.to_lowercase())
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownWord(word.to_string()))
    }

    pub fn entries(&self) -> impl Iterator<Item = (&String, &Vec<String>)> {
        self.words.iter()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefWord {
    pub text: String,
    pub phonemes: Vec<PhonemeId>,
}

/// Words plus the concatenated phoneme axis used as grid rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceText {
    words: Vec<RefWord>,
    flat: Vec<PhonemeId>,
    word_of: Vec<usize>,
    rows: Vec<Range<usize>>,
}

impl ReferenceText {
    pub fn new(words: Vec<RefWord>, inv: &PhonemeInventory) -> Result<Self> {
        let mut flat = Vec::new();
        let mut word_of = Vec::new();
        let mut rows = Vec::with_capacity(words.len());
        for (w, word) in words.iter().enumerate() {
            if word.phonemes.is_empty() {
                return Err(Error::InvalidArgument(format!("word `{}` has no phonemes", word.text)));
            }
            for &p in &word.phonemes {
                if p.index() >= inv.len() {
                    return Err(Error::UnknownLabel(p.to_string()));
                }
                if inv.is_sil(p) {
                    return Err(Error::InvalidArgument(format!("word `{}` spells SIL", word.text)));
                }
            }
            let start = flat.len();
            flat.extend_from_slice(&word.phonemes);
            word_of.extend(std::iter::repeat(w).take(word.phonemes.len()));
            rows.push(start..flat.len());
        }
        Ok(Self {
            words,
            flat,
            word_of,
            rows,
        })
    }

    /// `text` is whitespace-separated words, each looked up in `lexicon`.
    pub fn from_text(text: &str, lexicon: &Lexicon, inv: &PhonemeInventory) -> Result<Self> {
        let words = text
            .split_whitespace()
            .map(|w| {
                let phonemes = lexicon
                    .lookup(w)?
                    .iter()
                    .map(|p| inv.id(p))
                    .collect::<Result<Vec<_>>>()?;
                Ok(RefWord {
                    text: w.to_lowercase(),
                    phonemes,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(words, inv)
    }

    /// Single anonymous word spelled by `labels`; convenient for phoneme-only tests.
    pub fn from_phonemes(labels: &str, inv: &PhonemeInventory) -> Result<Self> {
        let phonemes = inv.parse_sequence(labels)?;
        Self::new(
            vec![RefWord {
                text: labels.to_string(),
                phonemes,
            }],
            inv,
        )
    }

    /// Reference restricted to word `w`.
    pub fn word_only(&self, w: usize) -> ReferenceText {
        let word = self.words[w].clone();
        let n = word.phonemes.len();
        ReferenceText {
            flat: word.phonemes.clone(),
            word_of: vec![0; n],
            rows: vec![0..n],
            words: vec![word],
        }
    }

    pub fn words(&self) -> &[RefWord] {
        &self.words
    }

    pub fn num_words(&self) -> usize {
        self.words.len()
    }

    pub fn phonemes(&self) -> &[PhonemeId] {
        &self.flat
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    /// Word index owning flat row `row`.
    pub fn word_of(&self, row: usize) -> usize {
        self.word_of[row]
    }

    /// Flat rows spelled by word `w`.
    pub fn rows_of(&self, w: usize) -> Range<usize> {
        self.rows[w].clone()
    }

    pub fn text(&self) -> String {
        self.words.iter().map(|w| w.text.as_str()).collect::<Vec<_>>().join(" ")
    }
}

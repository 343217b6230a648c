//! Text front end: phoneme inventory and grapheme-to-phoneme conversion.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ARPABET: [&str; 39] = [
    "AA", "AE", "AH", "AO", "AW", "AY", "B", "CH", "D", "DH", "EH", "ER", "EY", "F", "G", "HH", "IH", "IY", "JH",
    "K", "L", "M", "N", "NG", "OW", "OY", "P", "R", "S", "SH", "T", "TH", "UH", "UW", "V", "W", "Y", "Z", "ZH",
];

/// Short pause inserted for phrase punctuation.
pub const PAUSE: &str = "sp";

/// Ordered phoneme inventory; a symbol's position is its id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhonemeVocab {
    symbols: Vec<String>,
}

impl Default for PhonemeVocab {
    /// ARPAbet without stress marks plus the aligner's silence symbols.
    fn default() -> Self {
        let mut symbols: Vec<String> = vec!["<pad>".into(), "sil".into(), PAUSE.into(), "spn".into()];
        symbols.extend(ARPABET.iter().map(|s| s.to_string()));
        Self { symbols }
    }
}

impl PhonemeVocab {
    pub fn new(symbols: Vec<String>) -> Self {
        Self { symbols }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbol(&self, id: usize) -> Option<&str> {
        self.symbols.get(id).map(String::as_str)
    }

    /// Strips lexical stress digits ("AH0" → "AH"); silence symbols keep case.
    pub fn normalize(symbol: &str) -> String {
        let trimmed = symbol.trim();
        let lower = trimmed.to_ascii_lowercase();
        if matches!(lower.as_str(), "sil" | "sp" | "spn" | "") {
            return if lower.is_empty() { "sil".into() } else { lower };
        }
        trimmed.trim_end_matches(|c: char| c.is_ascii_digit()).to_ascii_uppercase()
    }

    pub fn id(&self, symbol: &str) -> Option<usize> {
        let norm = Self::normalize(symbol);
        self.symbols.iter().position(|s| *s == norm)
    }

    /// Maps every symbol; unknown symbols are all reported at once.
    pub fn encode<S: AsRef<str>>(&self, symbols: &[S]) -> Result<Vec<usize>> {
        let mut unknown = Vec::new();
        let ids: Vec<usize> = symbols
            .iter()
            .filter_map(|s| {
                let id = self.id(s.as_ref());
                if id.is_none() {
                    unknown.push(s.as_ref().to_string());
                }
                id
            })
            .collect();
        if unknown.is_empty() {
            Ok(ids)
        } else {
            Err(Error::UnknownPhoneme(unknown))
        }
    }
}

pub trait G2p: Send + Sync {
    fn phonemize(&self, text: &str) -> Result<Vec<String>>;
}

/// Dictionary lookup with per-letter fallback for out-of-dictionary words.
#[derive(Debug, Clone, Default)]
pub struct LexiconG2p {
    dictionary: HashMap<String, Vec<String>>,
}

impl LexiconG2p {
    pub fn new() -> Self {
        Self::default()
    }

    /// Loads a CMUdict-style file: `WORD  PH1 PH2 ...`; `;;;` lines are comments,
    /// alternate pronunciations `WORD(2)` are ignored.
    pub fn from_file(path: &Path) -> Result<Self> {
        let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut dictionary = HashMap::new();
        for line in content.lines() {
            if line.starts_with(";;;") || line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let Some(word) = parts.next() else { continue };
            if word.ends_with(')') {
                continue;
            }
            let phones: Vec<String> = parts.map(PhonemeVocab::normalize).collect();
            if !phones.is_empty() {
                dictionary.entry(word.to_lowercase()).or_insert(phones);
            }
        }
        Ok(Self { dictionary })
    }

    pub fn insert(&mut self, word: &str, phones: &[&str]) {
        self.dictionary
            .insert(word.to_lowercase(), phones.iter().map(|p| PhonemeVocab::normalize(p)).collect());
    }

    fn letter_phones(c: char) -> &'static [&'static str] {
        match c {
            'a' => &["AE"],
            'b' => &["B"],
            'c' => &["K"],
            'd' => &["D"],
            'e' => &["EH"],
            'f' => &["F"],
            'g' => &["G"],
            'h' => &["HH"],
            'i' => &["IH"],
            'j' => &["JH"],
            'k' => &["K"],
            'l' => &["L"],
            'm' => &["M"],
            'n' => &["N"],
            'o' => &["AA"],
            'p' => &["P"],
            'q' => &["K"],
            'r' => &["R"],
            's' => &["S"],
            't' => &["T"],
            'u' => &["AH"],
            'v' => &["V"],
            'w' => &["W"],
            'x' => &["K", "S"],
            'y' => &["Y"],
            'z' => &["Z"],
            _ => &[],
        }
    }

    fn digit_word(c: char) -> Option<&'static str> {
        const WORDS: [&str; 10] = ["zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine"];
        c.to_digit(10).map(|d| WORDS[d as usize])
    }

    fn word_phones(&self, word: &str, out: &mut Vec<String>) {
        if let Some(p) = self.dictionary.get(word) {
            out.extend(p.iter().cloned());
            return;
        }
        for c in word.chars() {
            out.extend(Self::letter_phones(c).iter().map(|s| s.to_string()));
        }
    }
}

impl G2p for LexiconG2p {
    fn phonemize(&self, text: &str) -> Result<Vec<String>> {
        let mut phones = Vec::new();
        let mut unmappable = Vec::new();
        for raw in text.split_whitespace() {
            let mut word = String::new();
            let mut bad = false;
            let mut pause_after = false;
            for c in raw.chars() {
                let lc = c.to_ascii_lowercase();
                if lc.is_ascii_lowercase() {
                    word.push(lc);
                } else if let Some(w) = Self::digit_word(c) {
                    if !word.is_empty() {
                        self.word_phones(&word, &mut phones);
                        word.clear();
                    }
                    self.word_phones(w, &mut phones);
                } else if matches!(c, ',' | ';' | ':') {
                    pause_after = true;
                } else if c == '\'' || c == '-' || c.is_ascii_punctuation() {
                    // apostrophes and hyphens stay inside the word; other punctuation is dropped
                } else {
                    bad = true;
                }
            }
            if bad {
                unmappable.push(raw.to_string());
                continue;
            }
            if !word.is_empty() {
                self.word_phones(&word, &mut phones);
            }
            if pause_after {
                phones.push(PAUSE.to_string());
            }
        }
        if !unmappable.is_empty() {
            return Err(Error::G2p(unmappable));
        }
        while phones.last().map(String::as_str) == Some(PAUSE) {
            phones.pop();
        }
        if phones.is_empty() {
            return Err(Error::G2p(vec![text.to_string()]));
        }
        Ok(phones)
    }
}

//! Character and word error rates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Normalization {
    pub lowercase: bool,
    pub strip_punctuation: bool,
    pub collapse_whitespace: bool,
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            lowercase: true,
            strip_punctuation: true,
            collapse_whitespace: true,
        }
    }
}

impl Normalization {
    pub fn apply(&self, text: &str) -> String {
        let mut s: String = if self.strip_punctuation {
            text.chars().filter(|c| !c.is_ascii_punctuation() && !is_unicode_punct(*c)).collect()
        } else {
            text.to_string()
        };
        if self.lowercase {
            s = s.to_lowercase();
        }
        if self.collapse_whitespace {
            s = s.split_whitespace().collect::<Vec<_>>().join(" ");
        }
        s
    }
}

fn is_unicode_punct(c: char) -> bool {
    matches!(c, '‘' | '’' | '“' | '”' | '…' | '–' | '—' | '¿' | '¡' | '«' | '»')
}

/// Unit-cost edit distance.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptPair {
    #[serde(default)]
    pub id: Option<String>,
    pub reference: String,
    pub hypothesis: String,
}

impl TranscriptPair {
    pub fn new(reference: impl Into<String>, hypothesis: impl Into<String>) -> Self {
        Self {
            id: None,
            reference: reference.into(),
            hypothesis: hypothesis.into(),
        }
    }
}

/// Edit count and reference length for one pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EditCount {
    pub edits: usize,
    pub reference_len: usize,
}

impl EditCount {
    pub fn rate(&self) -> f64 {
        self.edits as f64 / self.reference_len as f64
    }
}

fn normalized(pair: &TranscriptPair, norm: &Normalization) -> Result<(String, String)> {
    let r = norm.apply(&pair.reference);
    if r.is_empty() {
        return Err(Error::EmptyReference);
    }
    Ok((r, norm.apply(&pair.hypothesis)))
}

pub fn char_edits(pair: &TranscriptPair, norm: &Normalization) -> Result<EditCount> {
    let (r, h) = normalized(pair, norm)?;
    let r: Vec<char> = r.chars().collect();
    let h: Vec<char> = h.chars().collect();
    Ok(EditCount {
        edits: levenshtein(&r, &h),
        reference_len: r.len(),
    })
}

pub fn word_edits(pair: &TranscriptPair, norm: &Normalization) -> Result<EditCount> {
    let (r, h) = normalized(pair, norm)?;
    let r: Vec<&str> = r.split_whitespace().collect();
    let h: Vec<&str> = h.split_whitespace().collect();
    Ok(EditCount {
        edits: levenshtein(&r, &h),
        reference_len: r.len(),
    })
}

pub fn cer(pair: &TranscriptPair) -> Result<f64> {
    Ok(char_edits(pair, &Normalization::default())?.rate())
}

pub fn wer(pair: &TranscriptPair) -> Result<f64> {
    Ok(word_edits(pair, &Normalization::default())?.rate())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemScore {
    pub id: Option<String>,
    pub cer: f64,
    pub wer: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRateReport {
    pub items: Vec<ItemScore>,
    /// Mean of per-item rates.
    pub mean_cer: f64,
    pub mean_wer: f64,
    /// Total edits over total reference length.
    pub corpus_cer: f64,
    pub corpus_wer: f64,
}

pub fn score_transcripts(pairs: &[TranscriptPair], norm: &Normalization) -> Result<ErrorRateReport> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("no transcript pairs".into()));
    }
    let mut items = Vec::with_capacity(pairs.len());
    let (mut ce, mut cl, mut we, mut wl) = (0, 0, 0, 0);
    for p in pairs {
        let c = char_edits(p, norm)?;
        let w = word_edits(p, norm)?;
        ce += c.edits;
        cl += c.reference_len;
        we += w.edits;
        wl += w.reference_len;
        items.push(ItemScore {
            id: p.id.clone(),
            cer: c.rate(),
            wer: w.rate(),
        });
    }
    let n = items.len() as f64;
    Ok(ErrorRateReport {
        mean_cer: items.iter().map(|i| i.cer).sum::<f64>() / n,
        mean_wer: items.iter().map(|i| i.wer).sum::<f64>() / n,
        corpus_cer: ce as f64 / cl as f64,
        corpus_wer: we as f64 / wl as f64,
        items,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_examples() {
        assert_eq!(cer(&TranscriptPair::new("Same text.", "same text")).unwrap(), 0.0);
        let p = TranscriptPair::new("hello world", "hello word");
        assert_eq!(wer(&p).unwrap(), 0.5);
        assert!((cer(&p).unwrap() - 1.0 / 11.0).abs() < 1e-15);
        let empty = TranscriptPair::new("hello world", "");
        assert_eq!(wer(&empty).unwrap(), 1.0);
        assert_eq!(cer(&empty).unwrap(), 1.0);
        assert!(matches!(cer(&TranscriptPair::new(" ?! ", "x")), Err(Error::EmptyReference)));
    }

    #[test]
    fn normalization() {
        let n = Normalization::default();
        assert_eq!(n.apply("  Hello,   WORLD!  "), "hello world");
        assert_eq!(n.apply("don't"), "dont");
    }

    #[test]
    fn report_aggregates() {
        let pairs = vec![TranscriptPair::new("a b", "a b"), TranscriptPair::new("a b c d", "a x c d")];
        let r = score_transcripts(&pairs, &Normalization::default()).unwrap();
        assert_eq!(r.items.len(), 2);
        assert!((r.mean_wer - 0.125).abs() < 1e-15);
        assert!((r.corpus_wer - 1.0 / 6.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn rate_bounds(r in "[a-c ]{1,12}", h in "[a-c ]{0,12}") {
            let pair = TranscriptPair::new(r.clone(), h.clone());
            let n = Normalization::default();
            if n.apply(&r).is_empty() {
                prop_assert!(cer(&pair).is_err());
            } else {
                let c = char_edits(&pair, &n).unwrap();
                let hl = n.apply(&h).chars().count() as f64;
                prop_assert!(c.rate() <= 1f64.max(hl / c.reference_len as f64));
                prop_assert_eq!(c.edits == 0, n.apply(&r) == n.apply(&h));
                let w = word_edits(&pair, &n).unwrap();
                prop_assert_eq!(w.edits == 0, n.apply(&r) == n.apply(&h));
            }
        }
    }
}

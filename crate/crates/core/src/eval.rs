//! Word and character error rates.

use alloc::string::String;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("reference is empty after normalization")]
    EmptyReference,
}

/// Edit operations from a minimum-cost alignment.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ErrorBreakdown {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub ref_len: usize,
}

impl ErrorBreakdown {
    pub fn distance(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    /// `(S + D + I) / N`; may exceed 1.
    pub fn rate(&self) -> f64 {
        if self.ref_len == 0 {
            0.0
        } else {
            self.distance() as f64 / self.ref_len as f64
        }
    }
}

impl core::ops::Add for ErrorBreakdown {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            substitutions: self.substitutions + o.substitutions,
            deletions: self.deletions + o.deletions,
            insertions: self.insertions + o.insertions,
            ref_len: self.ref_len + o.ref_len,
        }
    }
}

impl core::iter::Sum for ErrorBreakdown {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), |a, b| a + b)
    }
}

/// Lowercases, drops punctuation other than apostrophes and collapses whitespace.
pub fn normalize_text(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for word in text.split_whitespace() {
        let cleaned: String = word
            .chars()
            .filter(|c| c.is_alphanumeric() || *c == '\'')
            .flat_map(char::to_lowercase)
            .collect();
        if cleaned.is_empty() {
            continue;
        }
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(&cleaned);
    }
    out
}

pub fn tokenize(text: &str) -> Vec<String> {
    normalize_text(text)
        .split(' ')
        .filter(|w| !w.is_empty())
        .map(String::from)
        .collect()
}

/// Levenshtein alignment with unit costs. The backtrace prefers substitution
/// (or match), then deletion, then insertion.
pub fn align<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> ErrorBreakdown {
    let (n, m) = (reference.len(), hypothesis.len());
    let width = m + 1;
    let mut d = alloc::vec![0usize; (n + 1) * width];
    for i in 0..=n {
        d[i * width] = i;
    }
    for (j, cell) in d.iter_mut().take(m + 1).enumerate() {
        *cell = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub =
                d[(i - 1) * width + j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            let del = d[(i - 1) * width + j] + 1;
            let ins = d[i * width + j - 1] + 1;
            d[i * width + j] = sub.min(del).min(ins);
        }
    }
    let mut out = ErrorBreakdown {
        ref_len: n,
        ..Default::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * width + j];
        if i > 0 && j > 0 {
            let mismatch = reference[i - 1] != hypothesis[j - 1];
            if here == d[(i - 1) * width + j - 1] + usize::from(mismatch) {
                out.substitutions += usize::from(mismatch);
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && here == d[(i - 1) * width + j] + 1 {
            out.deletions += 1;
            i -= 1;
        } else {
            out.insertions += 1;
            j -= 1;
        }
    }
    out
}

pub fn word_error_rate(reference: &str, hypothesis: &str) -> Result<ErrorBreakdown, EvalError> {
    let r = tokenize(reference);
    if r.is_empty() {
        return Err(EvalError::EmptyReference);
    }
    Ok(align(&r, &tokenize(hypothesis)))
}

/// Character-level rate over normalized text, spaces included.
pub fn char_error_rate(reference: &str, hypothesis: &str) -> Result<ErrorBreakdown, EvalError> {
    let r: Vec<char> = normalize_text(reference).chars().collect();
    if r.is_empty() {
        return Err(EvalError::EmptyReference);
    }
    let h: Vec<char> = normalize_text(hypothesis).chars().collect();
    Ok(align(&r, &h))
}

//! Transcript normalization, word error rate, and seeded corruption.

use rand::seq::IndexedRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Word list used for synthetic reference transcripts and substitutions.
pub const VOCABULARY: &[&str] = &[
    "the", "a", "and", "of", "to", "in", "is", "it", "that", "was", "for", "on", "are", "with", "as",
    "his", "they", "be", "at", "one", "have", "this", "from", "or", "had", "by", "word", "but",
    "what", "some", "we", "can", "out", "other", "were", "all", "there", "when", "up", "use",
    "your", "how", "said", "an", "each", "she", "which", "do", "their", "time", "if", "will",
    "way", "about", "many", "then", "them", "write", "would", "like", "so", "these", "her",
    "long", "make", "thing", "see", "him", "two", "has", "look", "more", "day", "could", "go",
    "come", "did", "number", "sound", "no", "most", "people", "my", "over", "know", "water",
    "than", "call", "first", "who", "may", "down", "side", "been", "now", "find", "any", "new",
    "work", "part", "take", "get", "place", "made", "live", "where", "after", "back", "little",
    "only", "round", "man", "year", "came", "show", "every", "good", "me", "give", "our",
    "under", "name", "very", "through", "just", "form", "sentence", "great", "think", "it's",
    "market", "seven", "nineteen", "percent", "company", "shares", "president", "don't",
];

/// Lowercase, drop everything but `[a-z0-9']` and whitespace, split.
pub fn normalize_text(raw: &str) -> Vec<String> {
    let cleaned: String = raw
        .chars()
        .flat_map(char::to_lowercase)
        .map(|c| if c.is_whitespace() { ' ' } else { c })
        .filter(|&c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '\'' || c == ' ')
        .collect();
    cleaned.split_whitespace().map(str::to_owned).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WerBreakdown {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub ref_len: usize,
    pub wer: f64,
}

impl WerBreakdown {
    pub fn edits(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }
}

/// Levenshtein distance over tokens with unit costs.
pub fn edit_distance<S: AsRef<str>, T: AsRef<str>>(a: &[S], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut curr = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        curr[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x.as_ref() != y.as_ref());
            curr[j + 1] = sub.min(prev[j + 1] + 1).min(curr[j] + 1);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// Word error rate from one minimal alignment.
///
/// The value is `(S + D + I) / |reference|` and is not clamped at 1. When
/// several alignments are optimal the backtrace prefers the diagonal
/// (match/substitution), then deletion, then insertion.
pub fn wer<S: AsRef<str>, T: AsRef<str>>(reference: &[S], hypothesis: &[T]) -> Result<WerBreakdown> {
    if reference.is_empty() {
        return Err(Error::EmptyReference);
    }
    let (n, m) = (reference.len(), hypothesis.len());
    let w = m + 1;
    let mut cost = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        cost[i * w] = i;
    }
    for j in 0..=m {
        cost[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let diff = usize::from(reference[i - 1].as_ref() != hypothesis[j - 1].as_ref());
            cost[i * w + j] = (cost[(i - 1) * w + j - 1] + diff)
                .min(cost[(i - 1) * w + j] + 1)
                .min(cost[i * w + j - 1] + 1);
        }
    }

    let (mut s, mut d, mut ins) = (0, 0, 0);
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = cost[i * w + j];
        if i > 0 && j > 0 {
            let diff = usize::from(reference[i - 1].as_ref() != hypothesis[j - 1].as_ref());
            if cost[(i - 1) * w + j - 1] + diff == here {
                s += diff;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && cost[(i - 1) * w + j] + 1 == here {
            d += 1;
            i -= 1;
        } else {
            ins += 1;
            j -= 1;
        }
    }
    Ok(WerBreakdown {
        substitutions: s,
        deletions: d,
        insertions: ins,
        ref_len: n,
        wer: (s + d + ins) as f64 / n as f64,
    })
}

/// Seeded corruption that stands in for an ASR hypothesis.
///
/// Each token independently is substituted with probability `0.6·rate`,
/// deleted with `0.2·rate`, or kept and followed by an inserted token with
/// `0.2·rate`. Substitutes and insertions are drawn from [`VOCABULARY`].
pub fn corrupt_transcript<S: AsRef<str>>(reference: &[S], rate: f64, seed: u64) -> Result<Vec<String>> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("corruption rate must lie in [0, 1], got {rate}")));
    }
    let mut rng = rng::seeded(rng::derive(seed, 0xC0_88));
    let mut out = Vec::with_capacity(reference.len() + 4);
    for tok in reference {
        let tok = tok.as_ref();
        let u: f64 = rng.random();
        if u < 0.6 * rate {
            out.push(random_word_except(&mut rng, tok));
        } else if u < 0.8 * rate {
            // deleted
        } else if u < rate {
            out.push(tok.to_owned());
            out.push(random_word_except(&mut rng, tok));
        } else {
            out.push(tok.to_owned());
        }
    }
    Ok(out)
}

fn random_word_except(rng: &mut rng::Rng, avoid: &str) -> String {
    loop {
        let w = VOCABULARY.choose(rng).expect("vocabulary is non-empty");
        if *w != avoid {
            return (*w).to_owned();
        }
    }
}

/// Seeded reference transcript with between `min_len` and `max_len` words.
pub fn random_transcript(seed: u64, min_len: usize, max_len: usize) -> Vec<String> {
    let mut rng = rng::seeded(rng::derive(seed, 0x7E47));
    let len = rng.random_range(min_len..=max_len.max(min_len));
    (0..len).map(|_| (*VOCABULARY.choose(&mut rng).unwrap()).to_owned()).collect()
}

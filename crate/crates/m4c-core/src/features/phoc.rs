//! Pyramidal Histogram of Characters.
//!
//! 604 bits: unigram occupancy of [a-z0-9] at pyramid levels 2,3,4,5
//! ((2+3+4+5) regions x 36 = 504), followed by level-2 occupancy of the 50
//! most frequent English bigrams (2 x 50 = 100).
//!
//! Character k of an n-character word occupies [k/n, (k+1)/n]; a bigram at k
//! occupies [k/n, (k+2)/n]. An item is assigned to region r of level l
//! (interval [r/l, (r+1)/l]) iff the overlap is at least half of
//! min(item occupancy length, region length); for words at least as long as
//! the level this reduces to the half-of-occupancy rule, and it keeps short
//! words (down to a single character) represented at every level.
//! Characters outside the alphabet are dropped before positions are computed;
//! input is lowercased first.

pub const PHOC_DIM: usize = 604;

const ALPHABET: &[u8; 36] = b"abcdefghijklmnopqrstuvwxyz0123456789";
const UNIGRAM_LEVELS: [usize; 4] = [2, 3, 4, 5];
const BIGRAM_LEVEL: usize = 2;

/// The 50 most frequent English bigrams, in layout order.
pub const BIGRAMS: [&str; 50] = [
    "th", "he", "in", "er", "an", "re", "es", "on", "st", "nt", "en", "at", "ed", "nd", "to",
    "or", "ea", "ti", "ar", "te", "ng", "al", "it", "as", "is", "ha", "et", "se", "ou", "of",
    "le", "sa", "ve", "ro", "ra", "ri", "hi", "ne", "me", "de", "co", "ta", "ec", "si", "ll",
    "so", "na", "li", "la", "el",
];

fn char_index(c: u8) -> Option<usize> {
    ALPHABET.iter().position(|&a| a == c)
}

fn bigram_index(b: &[u8; 2]) -> Option<usize> {
    BIGRAMS
        .iter()
        .position(|bg| bg.as_bytes() == b.as_slice())
}

/// Overlap-based region assignment shared by unigrams and bigrams.
///
/// Exact integer arithmetic over the rational interval endpoints: with
/// everything expressed in units of 1/(n*level), the item starting at
/// position k with `span` characters is [k*level, (k+span)*level] and region
/// r is [r*n, (r+1)*n], so the 50% boundary cases are decided exactly.
fn assigned(k: usize, span: usize, n: usize, level: usize, region: usize) -> bool {
    let item_lo = k * level;
    let item_hi = (k + span) * level;
    let reg_lo = region * n;
    let reg_hi = (region + 1) * n;
    let overlap = item_hi.min(reg_hi).saturating_sub(item_lo.max(reg_lo));
    2 * overlap >= (span * level).min(n)
}

/// Compute the 604-dimensional PHOC vector of a word.
pub fn phoc(text: &str) -> Vec<f64> {
    let mut out = vec![0.0; PHOC_DIM];
    let lowered = text.to_lowercase();
    let kept: Vec<u8> = lowered
        .bytes()
        .filter(|&b| char_index(b).is_some())
        .collect();
    let n = kept.len();
    if n == 0 {
        return out;
    }

    let mut level_offset = 0;
    for &level in &UNIGRAM_LEVELS {
        for (k, &c) in kept.iter().enumerate() {
            let ci = char_index(c).expect("filtered to alphabet");
            for region in 0..level {
                if assigned(k, 1, n, level, region) {
                    out[level_offset + region * 36 + ci] = 1.0;
                }
            }
        }
        level_offset += level * 36;
    }

    let bigram_base = level_offset; // 504
    for k in 0..n.saturating_sub(1) {
        let pair = [kept[k], kept[k + 1]];
        if let Some(bi) = bigram_index(&pair) {
            for region in 0..BIGRAM_LEVEL {
                if assigned(k, 2, n, BIGRAM_LEVEL, region) {
                    out[bigram_base + region * 50 + bi] = 1.0;
                }
            }
        }
    }
    out
}

/// Indices of the set bits, for inspection tooling.
pub fn phoc_set_indices(text: &str) -> Vec<usize> {
    phoc(text)
        .iter()
        .enumerate()
        .filter(|(_, &v)| v != 0.0)
        .map(|(i, _)| i)
        .collect()
}

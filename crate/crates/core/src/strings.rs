//! Character-level string primitives: tokens, alphabets, classical
//! Levenshtein distance with a deterministic optimal alignment, and
//! distance histograms over pair corpora.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::TokenPair;
use crate::error::{Error, Result};

/// Characters treated as apostrophes. They survive normalization because
/// elision marks are edit material in variant spellings.
pub const APOSTROPHES: [char; 4] = ['\'', '\u{2019}', '\u{2018}', '\u{02BC}'];

pub fn is_apostrophe(c: char) -> bool {
    APOSTROPHES.contains(&c)
}

/// A normalized word form: non-empty and free of whitespace.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Token(String);

impl Token {
    /// Wraps `text` as-is, checking the token invariants.
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.is_empty() {
            return Err(Error::InvalidToken {
                text,
                reason: "empty",
            });
        }
        if text.chars().any(char::is_whitespace) {
            return Err(Error::InvalidToken {
                text,
                reason: "contains whitespace",
            });
        }
        Ok(Token(text))
    }

    /// Normalizes raw text under `policy`, then validates it.
    pub fn normalized(raw: &str, policy: NormalizePolicy) -> Result<Self> {
        Token::new(normalize(raw, policy))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn chars(&self) -> Vec<char> {
        self.0.chars().collect()
    }

    pub fn char_len(&self) -> usize {
        self.0.chars().count()
    }

    pub fn to_lowercase(&self) -> Token {
        Token(self.0.to_lowercase())
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for Token {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        Token::new(s)
    }
}

impl From<Token> for String {
    fn from(t: Token) -> String {
        t.0
    }
}

impl AsRef<str> for Token {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

/// Per-corpus normalization switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct NormalizePolicy {
    pub preserve_case: bool,
}

impl NormalizePolicy {
    pub const CASE_FOLDED: NormalizePolicy = NormalizePolicy {
        preserve_case: false,
    };
}

/// Strips surrounding punctuation other than apostrophes and lowercases
/// unless the policy preserves case.
pub fn normalize(raw: &str, policy: NormalizePolicy) -> String {
    let trimmed = raw
        .trim()
        .trim_matches(|c: char| !c.is_alphanumeric() && !is_apostrophe(c));
    if policy.preserve_case {
        trimmed.to_string()
    } else {
        trimmed.to_lowercase()
    }
}

/// Character vocabulary with two reserved symbols.
///
/// Index 0 is the padding/boundary symbol and index 1 the unknown symbol;
/// ordinary characters follow in sorted order, so the symbol-to-index map
/// is a bijection onto `0..len()`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alphabet {
    chars: Vec<char>,
}

impl Alphabet {
    pub const PAD: usize = 0;
    pub const UNK: usize = 1;
    const RESERVED: usize = 2;

    pub fn from_chars(chars: impl IntoIterator<Item = char>) -> Self {
        let set: BTreeSet<char> = chars.into_iter().collect();
        Alphabet {
            chars: set.into_iter().collect(),
        }
    }

    pub fn from_tokens<'a>(tokens: impl IntoIterator<Item = &'a Token>) -> Self {
        Alphabet::from_chars(tokens.into_iter().flat_map(|t| t.as_str().chars()))
    }

    /// Rebuilds an alphabet from a stored character listing, which must be
    /// strictly increasing.
    pub fn from_listing(chars: Vec<char>) -> Result<Self> {
        if chars.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::AlphabetMismatch(
                "character listing is not strictly increasing".into(),
            ));
        }
        Ok(Alphabet { chars })
    }

    /// Number of symbols including the two reserved ones.
    pub fn len(&self) -> usize {
        self.chars.len() + Self::RESERVED
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Ordinary characters in index order (reserved symbols excluded).
    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn index(&self, c: char) -> usize {
        match self.chars.binary_search(&c) {
            Ok(pos) => pos + Self::RESERVED,
            Err(_) => Self::UNK,
        }
    }

    pub fn contains(&self, c: char) -> bool {
        self.chars.binary_search(&c).is_ok()
    }

    /// The character at `index`, or `None` for the reserved symbols.
    pub fn symbol(&self, index: usize) -> Option<char> {
        index
            .checked_sub(Self::RESERVED)
            .and_then(|i| self.chars.get(i).copied())
    }

    pub fn encode(&self, token: &Token) -> Vec<usize> {
        token.as_str().chars().map(|c| self.index(c)).collect()
    }
}

/// Classical unit-cost edit distance over unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    levenshtein_chars(&a, &b)
}

pub fn levenshtein_chars(a: &[char], b: &[char]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, &ca) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let up = row[j + 1];
            let cost = usize::from(ca != cb);
            row[j + 1] = (diag + cost).min(up + 1).min(row[j] + 1);
            diag = up;
        }
    }
    row[b.len()]
}

/// One step of an alignment. Positions index the source (`src`) and target
/// (`tgt`) strings in characters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignOp {
    Match { src: usize, tgt: usize, ch: char },
    Substitute { src: usize, tgt: usize, from: char, to: char },
    Delete { src: usize, ch: char },
    Insert { tgt: usize, ch: char },
}

impl AlignOp {
    pub fn is_edit(&self) -> bool {
        !matches!(self, AlignOp::Match { .. })
    }
}

/// One optimal alignment of `a` onto `b`.
///
/// The path is walked forward from the string starts; at each step the
/// first optimal move in the order match, substitute, delete, insert wins.
pub fn levenshtein_alignment(a: &str, b: &str) -> Vec<AlignOp> {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let (m, n) = (a.len(), b.len());
    let w = n + 1;
    // suffix[i][j] = distance between a[i..] and b[j..]
    let mut suffix = vec![0usize; (m + 1) * w];
    for i in (0..=m).rev() {
        for j in (0..=n).rev() {
            suffix[i * w + j] = if i == m {
                n - j
            } else if j == n {
                m - i
            } else {
                let cost = usize::from(a[i] != b[j]);
                (suffix[(i + 1) * w + j + 1] + cost)
                    .min(suffix[(i + 1) * w + j] + 1)
                    .min(suffix[i * w + j + 1] + 1)
            };
        }
    }

    let mut ops = Vec::with_capacity(m.max(n));
    let (mut i, mut j) = (0, 0);
    while i < m || j < n {
        let here = suffix[i * w + j];
        if i < m && j < n && a[i] == b[j] && suffix[(i + 1) * w + j + 1] == here {
            ops.push(AlignOp::Match {
                src: i,
                tgt: j,
                ch: a[i],
            });
            i += 1;
            j += 1;
        } else if i < m && j < n && a[i] != b[j] && suffix[(i + 1) * w + j + 1] + 1 == here {
            ops.push(AlignOp::Substitute {
                src: i,
                tgt: j,
                from: a[i],
                to: b[j],
            });
            i += 1;
            j += 1;
        } else if i < m && suffix[(i + 1) * w + j] + 1 == here {
            ops.push(AlignOp::Delete { src: i, ch: a[i] });
            i += 1;
        } else {
            ops.push(AlignOp::Insert { tgt: j, ch: b[j] });
            j += 1;
        }
    }
    ops
}

/// Replays an alignment over `a`, producing the target string.
pub fn apply_alignment(a: &str, ops: &[AlignOp]) -> String {
    let a: Vec<char> = a.chars().collect();
    let mut out = String::new();
    let mut cursor = 0;
    for op in ops {
        match *op {
            AlignOp::Match { src, ch, .. } => {
                debug_assert_eq!(a.get(src), Some(&ch));
                out.push(a[src]);
                cursor = src + 1;
            }
            AlignOp::Substitute { src, to, .. } => {
                debug_assert!(src < a.len());
                out.push(to);
                cursor = src + 1;
            }
            AlignOp::Delete { src, .. } => cursor = src + 1,
            AlignOp::Insert { ch, .. } => out.push(ch),
        }
    }
    debug_assert_eq!(cursor, a.len());
    out
}

/// Distance buckets 1, 2, 3 and 4+.
pub const LD_BUCKETS: [&str; 4] = ["1", "2", "3", "4+"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdHistogram {
    pub counts: [usize; 4],
    /// Number of bucketed pairs (distance at least 1).
    pub total: usize,
    /// Pairs at distance 0, kept out of the buckets.
    pub zero_distance: usize,
    /// Bucket shares in percent, rounded to one decimal.
    pub percentages: [f64; 4],
}

impl LdHistogram {
    pub fn from_distances(distances: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut counts = [0usize; 4];
        let mut zero_distance = 0;
        let mut seen = 0usize;
        for d in distances {
            seen += 1;
            match d {
                0 => zero_distance += 1,
                d => counts[d.min(4) - 1] += 1,
            }
        }
        if seen == 0 {
            return Err(Error::EmptyCorpus("no pairs to characterize"));
        }
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(Error::EmptyCorpus("every pair has distance 0"));
        }
        let percentages =
            counts.map(|c| (c as f64 / total as f64 * 1000.0).round() / 10.0);
        Ok(LdHistogram {
            counts,
            total,
            zero_distance,
            percentages,
        })
    }

    /// Table-style CSV: one header row and one data row.
    pub fn to_csv(&self, label: &str) -> String {
        let mut out = String::from("corpus,1LD%,2LD%,3LD%,4+LD%,pairs,zero_ld\n");
        out.push_str(&format!(
            "{},{:.1},{:.1},{:.1},{:.1},{},{}\n",
            label,
            self.percentages[0],
            self.percentages[1],
            self.percentages[2],
            self.percentages[3],
            self.total,
            self.zero_distance
        ));
        out
    }
}

/// Buckets the variant-to-standard distance of every pair.
pub fn ld_histogram(pairs: &[TokenPair]) -> Result<LdHistogram> {
    LdHistogram::from_distances(
        pairs
            .iter()
            .map(|p| levenshtein(p.variant.as_str(), p.standard.as_str())),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tok(s: &str) -> Token {
        Token::new(s).unwrap()
    }

    #[test]
    fn token_invariants() {
        assert!(Token::new("").is_err());
        assert!(Token::new("a b").is_err());
        assert!(Token::new("a\tb").is_err());
        assert_eq!(tok("afear'd").char_len(), 7);
    }

    #[test]
    fn normalization_keeps_apostrophes() {
        let p = NormalizePolicy::default();
        assert_eq!(normalize("\"'Fraid,", p), "'fraid");
        assert_eq!(normalize("mars'.", p), "mars'");
        assert_eq!(normalize("(Hello)!", p), "hello");
        assert_eq!(
            normalize("Hello", NormalizePolicy { preserve_case: true }),
            "Hello"
        );
        assert!(Token::normalized("...", p).is_err());
    }

    #[test]
    fn alphabet_reserved_symbols() {
        let a = Alphabet::from_tokens([&tok("cab"), &tok("bad")]);
        assert_eq!(a.len(), 6);
        assert_eq!(a.index('a'), 2);
        assert_eq!(a.index('d'), 5);
        assert_eq!(a.index('z'), Alphabet::UNK);
        assert_ne!(Alphabet::PAD, Alphabet::UNK);
        assert_eq!(a.symbol(Alphabet::PAD), None);
        for (i, &c) in a.chars().iter().enumerate() {
            assert_eq!(a.index(c), i + 2);
            assert_eq!(a.symbol(i + 2), Some(c));
        }
        assert!(Alphabet::from_listing(vec!['b', 'a']).is_err());
    }

    #[test]
    fn levenshtein_examples() {
        assert_eq!(levenshtein("abc", "abc"), 0);
        assert_eq!(levenshtein("kitten", "sitting"), 3);
        assert_eq!(levenshtein("a", ""), 1);
        assert_eq!(levenshtein("", "xyz"), 3);
    }

    #[test]
    fn alignment_examples() {
        assert_eq!(
            levenshtein_alignment("ab", "ab"),
            vec![
                AlignOp::Match { src: 0, tgt: 0, ch: 'a' },
                AlignOp::Match { src: 1, tgt: 1, ch: 'b' }
            ]
        );
        assert_eq!(
            levenshtein_alignment("a", "b"),
            vec![AlignOp::Substitute { src: 0, tgt: 0, from: 'a', to: 'b' }]
        );
        let ops = levenshtein_alignment("cat", "cart");
        assert_eq!(ops.iter().filter(|o| o.is_edit()).count(), 1);
        assert_eq!(ops[2], AlignOp::Insert { tgt: 2, ch: 'r' });
        assert_eq!(apply_alignment("cat", &ops), "cart");
    }

    #[test]
    fn alignment_prefers_substitution_over_indels() {
        // "ab" -> "ba": sub,sub and del,match,ins both cost 2
        let ops = levenshtein_alignment("ab", "ba");
        assert!(matches!(ops[0], AlignOp::Substitute { .. }));
        assert_eq!(apply_alignment("ab", &ops), "ba");
    }

    #[test]
    fn histogram_direct_count() {
        let h = LdHistogram::from_distances([1, 1, 2, 4]).unwrap();
        assert_eq!(h.percentages, [50.0, 25.0, 0.0, 25.0]);
        assert_eq!(h.total, 4);
        let h = LdHistogram::from_distances([0, 1, 7]).unwrap();
        assert_eq!(h.zero_distance, 1);
        assert_eq!(h.counts, [1, 0, 0, 1]);
        assert!(LdHistogram::from_distances([]).is_err());
        assert!(matches!(
            ld_histogram(&[]),
            Err(Error::EmptyCorpus(_))
        ));
    }
}

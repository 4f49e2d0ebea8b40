//! Pair corpora, lexicons, candidate extraction from raw text, and
//! train/validation/test splitting.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::strings::{is_apostrophe, NormalizePolicy, Token};

/// A variant word form paired with its standard form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenPair {
    pub variant: Token,
    pub standard: Token,
    pub context: Option<String>,
    pub source_id: Option<String>,
}

impl TokenPair {
    pub fn new(variant: Token, standard: Token) -> Self {
        TokenPair {
            variant,
            standard,
            context: None,
            source_id: None,
        }
    }
}

/// On-disk pair layouts. Both are UTF-8, tab separated, with a header row
/// naming the columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairFormat {
    /// `variant`, `standard`, `context`, `source_id`; the last two optional.
    GbTsv,
    /// Pre-flattened learner errors: `variant`, `standard`, optional
    /// `context` and `error_code`. When `error_code` is present only codes
    /// of the spelling class (starting with `S`) are kept.
    FceTsv,
}

impl FromStr for PairFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gb-tsv" => Ok(PairFormat::GbTsv),
            "fce-tsv" => Ok(PairFormat::FceTsv),
            other => Err(Error::Config(format!("unknown pair format {other:?}"))),
        }
    }
}

impl fmt::Display for PairFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PairFormat::GbTsv => "gb-tsv",
            PairFormat::FceTsv => "fce-tsv",
        })
    }
}

/// A row that was read but not turned into a pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reject {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedPairs {
    pub pairs: Vec<TokenPair>,
    pub rejects: Vec<Reject>,
}

impl LoadedPairs {
    pub fn rejects_tsv(&self) -> String {
        let mut out = String::from("line\treason\n");
        for r in &self.rejects {
            out.push_str(&format!("{}\t{}\n", r.line, r.reason));
        }
        out
    }
}

pub fn load_pairs(path: impl AsRef<Path>, format: PairFormat) -> Result<LoadedPairs> {
    load_pairs_with(path, format, NormalizePolicy::default())
}

pub fn load_pairs_with(
    path: impl AsRef<Path>,
    format: PairFormat,
    policy: NormalizePolicy,
) -> Result<LoadedPairs> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pairs(&bytes, format, policy, path)
}

/// Parses pair rows from raw bytes; `origin` is only used in errors.
pub fn parse_pairs(
    bytes: &[u8],
    format: PairFormat,
    policy: NormalizePolicy,
    origin: &Path,
) -> Result<LoadedPairs> {
    let mut lines = bytes
        .split(|&b| b == b'\n')
        .enumerate()
        .map(|(i, raw)| {
            let raw = raw.strip_suffix(b"\r").unwrap_or(raw);
            std::str::from_utf8(raw).map(|s| (i + 1, s)).map_err(|_| Error::Undecodable {
                path: origin.to_path_buf(),
                line: i + 1,
            })
        })
        .filter(|r| !matches!(r, Ok((_, s)) if s.trim().is_empty()));

    let (header_line, header) = match lines.next() {
        None => return Err(Error::EmptyFile { path: origin.to_path_buf() }),
        Some(r) => r?,
    };
    let columns: Vec<&str> = header.split('\t').map(str::trim).collect();
    let find = |name: &str| columns.iter().position(|c| *c == name);
    let require = |name: &str| {
        find(name).ok_or_else(|| Error::MissingColumn {
            path: origin.to_path_buf(),
            line: header_line,
            column: name.to_string(),
        })
    };
    let variant_col = require("variant")?;
    let standard_col = require("standard")?;
    let context_col = find("context");
    let source_col = match format {
        PairFormat::GbTsv => find("source_id"),
        PairFormat::FceTsv => None,
    };
    let code_col = match format {
        PairFormat::FceTsv => find("error_code"),
        PairFormat::GbTsv => None,
    };

    let mut pairs = Vec::new();
    let mut rejects = Vec::new();
    for row in lines {
        let (line, text) = row?;
        let fields: Vec<&str> = text.split('\t').collect();
        let field = |col: usize| -> Result<&str> {
            fields.get(col).copied().ok_or_else(|| Error::MissingColumn {
                path: origin.to_path_buf(),
                line,
                column: columns[col].to_string(),
            })
        };
        let raw_variant = field(variant_col)?;
        let raw_standard = field(standard_col)?;
        let optional = |col: Option<usize>| {
            col.and_then(|c| fields.get(c))
                .map(|s| s.trim())
                .filter(|s| !s.is_empty())
                .map(str::to_string)
        };
        if let Some(code) = optional(code_col) {
            if !code.starts_with('S') {
                rejects.push(Reject {
                    line,
                    reason: format!("error code {code} is not a spelling error"),
                });
                continue;
            }
        }
        let variant = match Token::normalized(raw_variant, policy) {
            Ok(t) => t,
            Err(e) => {
                rejects.push(Reject { line, reason: format!("variant: {e}") });
                continue;
            }
        };
        let standard = match Token::normalized(raw_standard, policy) {
            Ok(t) => t,
            Err(e) => {
                rejects.push(Reject { line, reason: format!("standard: {e}") });
                continue;
            }
        };
        if variant == standard {
            rejects.push(Reject {
                line,
                reason: "variant equals standard".into(),
            });
            continue;
        }
        pairs.push(TokenPair {
            variant,
            standard,
            context: optional(context_col),
            source_id: optional(source_col),
        });
    }
    log::debug!(
        "{}: loaded {} pairs, {} rejects",
        origin.display(),
        pairs.len(),
        rejects.len()
    );
    Ok(LoadedPairs { pairs, rejects })
}

fn clean_field(s: &str) -> String {
    s.replace(['\t', '\n', '\r'], " ")
}

/// Serializes pairs in the gb-tsv layout.
pub fn pairs_to_tsv(pairs: &[TokenPair]) -> String {
    let mut out = String::from("variant\tstandard\tcontext\tsource_id\n");
    for p in pairs {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            p.variant,
            p.standard,
            clean_field(p.context.as_deref().unwrap_or("")),
            clean_field(p.source_id.as_deref().unwrap_or(""))
        ));
    }
    out
}

pub fn write_pairs(path: impl AsRef<Path>, pairs: &[TokenPair]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, pairs_to_tsv(pairs)).map_err(|e| Error::io(path, e))
}

/// Sorted, deduplicated candidate standard forms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    name: String,
    tokens: Vec<Token>,
}

impl Lexicon {
    pub fn new(name: impl Into<String>, tokens: impl IntoIterator<Item = Token>) -> Self {
        let mut tokens: Vec<Token> = tokens.into_iter().collect();
        tokens.sort();
        tokens.dedup();
        Lexicon {
            name: name.into(),
            tokens,
        }
    }

    /// One token per line; lines that normalize to nothing are skipped.
    pub fn from_lines(name: impl Into<String>, text: &str, policy: NormalizePolicy) -> Self {
        Lexicon::new(
            name,
            text.lines().filter_map(|l| Token::normalized(l, policy).ok()),
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let text = String::from_utf8(bytes).map_err(|e| {
            let upto = &e.as_bytes()[..e.utf8_error().valid_up_to()];
            Error::Undecodable {
                path: path.to_path_buf(),
                line: upto.iter().filter(|&&b| b == b'\n').count() + 1,
            }
        })?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "lexicon".into());
        Ok(Lexicon::from_lines(name, &text, NormalizePolicy::default()))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn contains(&self, token: &Token) -> bool {
        self.tokens.binary_search(token).is_ok()
    }

    pub fn contains_str(&self, s: &str) -> bool {
        self.tokens
            .binary_search_by(|t| t.as_str().cmp(s))
            .is_ok()
    }

    /// Lowercased and deduplicated copy.
    pub fn case_folded(&self) -> Lexicon {
        Lexicon::new(self.name.clone(), self.tokens.iter().map(Token::to_lowercase))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(t.as_str());
            out.push('\n');
        }
        out
    }
}

/// A word from running text that may be an orthographic variant, with the
/// sentence it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub token: Token,
    pub sentence: String,
}

const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "st", "jr", "sr", "rev", "capt", "col", "gen", "lt", "messrs", "mme",
    "prof", "hon", "vs", "etc", "no", "vol", "ch",
];

/// Rule-based sentence splitter: a break follows `.`, `!` or `?` (plus any
/// closing quotes or brackets) when whitespace and then an uppercase letter
/// or opening quote come next, unless the word before the period is a
/// known abbreviation or a single letter.
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut sentences = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < chars.len() {
        if matches!(chars[i], '.' | '!' | '?') {
            let mut end = i + 1;
            while end < chars.len() && matches!(chars[end], '.' | '!' | '?' | '"' | '\'' | '\u{201D}' | '\u{2019}' | ')') {
                end += 1;
            }
            let mut k = end;
            while k < chars.len() && chars[k].is_whitespace() {
                k += 1;
            }
            let boundary = k > end
                && k < chars.len()
                && (chars[k].is_uppercase() || matches!(chars[k], '"' | '\'' | '\u{201C}' | '\u{2018}'));
            let abbreviation = chars[i] == '.' && {
                let word: String = chars[start..i]
                    .iter()
                    .rev()
                    .take_while(|c| c.is_alphabetic())
                    .collect::<Vec<_>>()
                    .into_iter()
                    .rev()
                    .collect();
                let lower = word.to_lowercase();
                word.chars().count() == 1 || ABBREVIATIONS.contains(&lower.as_str())
            };
            if boundary && !abbreviation {
                push_sentence(&mut sentences, &chars[start..end]);
                start = k;
                i = k;
                continue;
            }
            i = end;
            continue;
        }
        i += 1;
    }
    push_sentence(&mut sentences, &chars[start..]);
    sentences
}

fn push_sentence(out: &mut Vec<String>, chars: &[char]) {
    let s: String = chars.iter().collect();
    let s = s.split_whitespace().collect::<Vec<_>>().join(" ");
    if !s.is_empty() {
        out.push(s);
    }
}

/// Splits a sentence into word tokens: runs of alphanumerics with internal
/// apostrophes and hyphens. Leading/trailing apostrophes are kept unless
/// they wrap the whole word like quotation marks.
pub fn tokenize(sentence: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in sentence.split_whitespace() {
        let mut current = String::new();
        for c in chunk.chars() {
            if c.is_alphanumeric() || is_apostrophe(c) || c == '-' {
                current.push(c);
            } else if !current.is_empty() {
                out.push(std::mem::take(&mut current));
            }
        }
        if !current.is_empty() {
            out.push(current);
        }
    }
    out.into_iter()
        .filter_map(|t| {
            let t = t.trim_matches('-');
            let t = match (t.chars().next(), t.chars().last()) {
                (Some(a), Some(b)) if t.chars().count() > 2 && is_apostrophe(a) && is_apostrophe(b) => {
                    let mut cs = t.chars();
                    cs.next();
                    cs.next_back();
                    cs.as_str()
                }
                _ => t,
            };
            let t = t.trim_matches('-');
            t.chars().any(char::is_alphanumeric).then(|| t.to_string())
        })
        .collect()
}

/// Finds possible orthographic variants in running text.
///
/// A token is emitted when it has no digits, its lowercase form is not in
/// `lexicon`, and it is either all lowercase or capitalized only because it
/// opens its sentence.
pub fn extract_candidates(text: &str, lexicon: &Lexicon) -> Vec<Candidate> {
    let mut out = Vec::new();
    for sentence in split_sentences(text) {
        for (pos, word) in tokenize(&sentence).into_iter().enumerate() {
            if word.chars().any(|c| c.is_numeric()) {
                continue;
            }
            if word.chars().any(char::is_uppercase) && pos != 0 {
                continue;
            }
            let Ok(token) = Token::normalized(&word, NormalizePolicy::CASE_FOLDED) else {
                continue;
            };
            if lexicon.contains(&token) {
                continue;
            }
            out.push(Candidate {
                token,
                sentence: sentence.clone(),
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroupBy {
    Pair,
    VariantType,
}

impl FromStr for GroupBy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pair" => Ok(GroupBy::Pair),
            "variant" | "variant-type" => Ok(GroupBy::VariantType),
            other => Err(Error::Config(format!("unknown grouping {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub fractions: [f64; 3],
    pub seed: u64,
    pub group_by: GroupBy,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            fractions: [0.8, 0.1, 0.1],
            seed: 0,
            group_by: GroupBy::VariantType,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.fractions.iter().sum();
        if self.fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions {:?} must be in [0,1] and sum to 1",
                self.fractions
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Vec<TokenPair>,
    pub val: Vec<TokenPair>,
    pub test: Vec<TokenPair>,
}

/// Largest-remainder apportionment of `total` units over `fractions`;
/// ties go to the earlier split.
fn apportion(total: usize, fractions: &[f64; 3]) -> [usize; 3] {
    let quotas = fractions.map(|f| f * total as f64);
    let mut counts = quotas.map(|q| q.floor() as usize);
    let mut left = total - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &k in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[k] += 1;
        left -= 1;
    }
    // keep every split with a positive fraction non-empty when possible
    for k in 0..3 {
        if fractions[k] > 0.0 && counts[k] == 0 {
            let donor = (0..3).max_by_key(|&d| (counts[d], std::cmp::Reverse(d))).unwrap();
            if counts[donor] > 1 {
                counts[donor] -= 1;
                counts[k] += 1;
            }
        }
    }
    counts
}

/// Seeded partition into train/validation/test. With variant-type grouping
/// every pair sharing a variant lands in the same split.
pub fn split(pairs: &[TokenPair], spec: &SplitSpec) -> Result<Splits> {
    spec.validate()?;
    let mut groups: Vec<Vec<usize>> = match spec.group_by {
        GroupBy::Pair => (0..pairs.len()).map(|i| vec![i]).collect(),
        GroupBy::VariantType => {
            let mut by_variant: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (i, p) in pairs.iter().enumerate() {
                by_variant.entry(p.variant.as_str()).or_default().push(i);
            }
            by_variant.into_values().collect()
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    groups.shuffle(&mut rng);
    let counts = apportion(groups.len(), &spec.fractions);
    let mut parts: [Vec<TokenPair>; 3] = Default::default();
    let mut cursor = 0;
    for (k, &count) in counts.iter().enumerate() {
        for group in &groups[cursor..cursor + count] {
            parts[k].extend(group.iter().map(|&i| pairs[i].clone()));
        }
        cursor += count;
    }
    let [train, val, test] = parts;
    Ok(Splits { train, val, test })
}

//! Seeded rule-based spelling perturbations for building synthetic
//! variant/standard corpora.
//!
//! System A mimics eye-dialect respellings: vowel substitution, apostrophe
//! elision and consonant doubling. System B is a disjoint rule set in the
//! style of phonetic dialect writing: consonant shifts (th→d, v↔w, hard
//! c→k), vowel breaking and final cluster reduction.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Lexicon, TokenPair};
use crate::error::{Error, Result};
use crate::strings::Token;

/// The bundled list of 1,000 common English words.
pub fn bundled_lexicon() -> Lexicon {
    Lexicon::from_lines(
        "common-1k",
        include_str!("../data/lexicon_1k.txt"),
        crate::strings::NormalizePolicy::CASE_FOLDED,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleSystem {
    A,
    B,
}

/// Which rule systems a corpus draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Systems {
    /// System A only.
    Single,
    /// Each word is assigned to A or B at random.
    Two,
}

impl fmt::Display for Systems {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Systems::Single => "single",
            Systems::Two => "two",
        })
    }
}

impl FromStr for Systems {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Systems::Single),
            "two" => Ok(Systems::Two),
            other => Err(Error::Config(format!("unknown rule systems {other:?} (expected single or two)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    /// Number of distinct standard words to perturb.
    pub words: usize,
    pub seed: u64,
    pub systems: Systems,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            words: 500,
            seed: 0,
            systems: Systems::Single,
        }
    }
}

type Rule = fn(&[char], &mut ChaCha8Rng) -> Option<Vec<char>>;

const VOWELS: &[char] = &['a', 'e', 'i', 'o', 'u'];

fn is_vowel(c: char) -> bool {
    VOWELS.contains(&c)
}

fn pick<T: Copy>(items: &[T], rng: &mut ChaCha8Rng) -> Option<T> {
    items.choose(rng).copied()
}

fn vowel_substitution(w: &[char], rng: &mut ChaCha8Rng) -> Option<Vec<char>> {
    let k = pick(&(0..w.len()).filter(|&k| is_vowel(w[k])).collect::<Vec<_>>(), rng)?;
    let mut out = w.to_vec();
    out[k] = match w[k] {
        'a' => 'e',
        'e' => 'i',
        'i' => 'e',
        'o' => 'u',
        _ => 'o',
    };
    Some(out)
}

fn apostrophe_elision(w: &[char], rng: &mut ChaCha8Rng) -> Option<Vec<char>> {
    let n = w.len();
    if n >= 5 && w.ends_with(&['i', 'n', 'g']) {
        let mut out = w[..n - 1].to_vec();
        out.push('\'');
        return Some(out);
    }
    if n >= 4 && is_vowel(w[0]) && !is_vowel(w[1]) {
        return Some(std::iter::once('\'').chain(w[1..].iter().copied()).collect());
    }
    let k = pick(&(1..n.saturating_sub(1)).filter(|&k| is_vowel(w[k])).collect::<Vec<_>>(), rng)?;
    let mut out = w.to_vec();
    out[k] = '\'';
    Some(out)
}

fn consonant_doubling(w: &[char], rng: &mut ChaCha8Rng) -> Option<Vec<char>> {
    let k = pick(
        &(1..w.len())
            .filter(|&k| !is_vowel(w[k]) && !"hwxy".contains(w[k]) && is_vowel(w[k - 1]))
            .filter(|&k| w.get(k + 1) != Some(&w[k]) && w[k - 1] != w[k])
            .collect::<Vec<_>>(),
        rng,
    )?;
    let mut out = w.to_vec();
    out.insert(k, w[k]);
    Some(out)
}

fn consonant_shift(w: &[char], rng: &mut ChaCha8Rng) -> Option<Vec<char>> {
    let mut options: Vec<Vec<char>> = Vec::new();
    if let Some(k) = w.windows(2).position(|p| p == ['t', 'h']) {
        let mut out = w[..k].to_vec();
        out.push('d');
        out.extend_from_slice(&w[k + 2..]);
        options.push(out);
    }
    for (k, &c) in w.iter().enumerate() {
        let hard_c = c == 'c' && w.get(k + 1).is_none_or(|n| "aoulrt".contains(*n));
        let repl = match c {
            'v' => 'w',
            'w' => 'v',
            _ if hard_c => 'k',
            _ => continue,
        };
        let mut out = w.to_vec();
        out[k] = repl;
        options.push(out);
    }
    options.choose(rng).cloned()
}

fn vowel_breaking(w: &[char], rng: &mut ChaCha8Rng) -> Option<Vec<char>> {
    let n = w.len();
    let k = pick(
        &(0..n)
            .filter(|&k| matches!(w[k], 'a' | 'o') || (w[k] == 'e' && k + 1 < n))
            .collect::<Vec<_>>(),
        rng,
    )?;
    let glide = match w[k] {
        'a' => 'u',
        'o' => 'w',
        _ => 'a',
    };
    let mut out = w.to_vec();
    out.insert(k + 1, glide);
    Some(out)
}

fn cluster_reduction(w: &[char], _rng: &mut ChaCha8Rng) -> Option<Vec<char>> {
    let n = w.len();
    (n >= 4 && !is_vowel(w[n - 1]) && !is_vowel(w[n - 2]) && w[n - 1] != 'y').then(|| w[..n - 1].to_vec())
}

fn rules(system: RuleSystem) -> &'static [Rule] {
    match system {
        RuleSystem::A => &[vowel_substitution, apostrophe_elision, consonant_doubling],
        RuleSystem::B => &[consonant_shift, vowel_breaking, cluster_reduction],
    }
}

/// Applies one or two distinct rules of `system`; `None` if no rule
/// changes the word.
pub fn perturb(word: &Token, system: RuleSystem, rng: &mut ChaCha8Rng) -> Option<Token> {
    let original = word.chars();
    let want = rng.gen_range(1..=2);
    let mut order: Vec<Rule> = rules(system).to_vec();
    order.shuffle(rng);
    let mut current = original.clone();
    let mut applied = 0;
    for rule in order {
        if applied == want {
            break;
        }
        if let Some(next) = rule(&current, rng) {
            if next != current && !next.is_empty() {
                current = next;
                applied += 1;
            }
        }
    }
    if applied == 0 || current == original {
        return None;
    }
    Token::new(current.into_iter().collect::<String>()).ok()
}

/// Perturbs `cfg.words` distinct lexicon words (alphabetic, length ≥ 3)
/// into variant/standard pairs. The `source_id` records the rule system.
pub fn generate_pairs(lexicon: &Lexicon, cfg: &SyntheticConfig) -> Result<Vec<TokenPair>> {
    let mut pool: Vec<&Token> = lexicon
        .tokens()
        .iter()
        .filter(|t| t.char_len() >= 3 && t.as_str().chars().all(|c| c.is_ascii_lowercase()))
        .collect();
    if pool.len() < cfg.words {
        return Err(Error::Config(format!(
            "lexicon has {} usable words, {} requested",
            pool.len(),
            cfg.words
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    pool.shuffle(&mut rng);
    let mut pairs = Vec::with_capacity(cfg.words);
    for word in pool {
        if pairs.len() == cfg.words {
            break;
        }
        let system = match cfg.systems {
            Systems::Single => RuleSystem::A,
            Systems::Two if rng.gen_bool(0.5) => RuleSystem::A,
            Systems::Two => RuleSystem::B,
        };
        if let Some(variant) = perturb(word, system, &mut rng) {
            let mut pair = TokenPair::new(variant, word.clone());
            pair.source_id = Some(match system {
                RuleSystem::A => "synthetic-a".into(),
                RuleSystem::B => "synthetic-b".into(),
            });
            pairs.push(pair);
        }
    }
    if pairs.len() < cfg.words {
        return Err(Error::Config(format!(
            "only {} of {} words could be perturbed",
            pairs.len(),
            cfg.words
        )));
    }
    pairs.sort_by(|a, b| a.standard.cmp(&b.standard));
    Ok(pairs)
}

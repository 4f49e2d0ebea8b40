use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use orthopair::corpus::{extract_candidates, pairs_to_tsv, parse_pairs, split, GroupBy, Lexicon, PairFormat, SplitSpec};
use orthopair::evaluation::{classify_scores, mean_reciprocal_rank, pessimistic_rank};
use orthopair::lattice::{forward_backward, log_likelihood, viterbi, CostGrid, EditOp};
use orthopair::memoryless::em_fit_memoryless;
use orthopair::negatives::{generate_negatives, NegativeKind, NegativeStrategy};
use orthopair::strings::{levenshtein, LdHistogram, NormalizePolicy};
use orthopair::training::calibrate_threshold;
use orthopair::{Alphabet, Token, TokenPair};
use proptest::prelude::*;

fn tok(s: &str) -> Token {
    Token::new(s).unwrap()
}

fn word(alpha: &'static str, max: usize) -> impl Strategy<Value = String> {
    proptest::string::string_regex(&format!("[{alpha}]{{1,{max}}}")).unwrap()
}

/// Sum over every monotone path of the product of its move probabilities.
fn enumerate_paths(grid: &CostGrid, i: usize, j: usize) -> f64 {
    if i == 0 && j == 0 {
        return 1.0;
    }
    let mut total = 0.0;
    for op in EditOp::ALL {
        if op.defined_at(i, j) {
            let (pi, pj) = op.predecessor(i, j);
            total += grid.get(op, i, j).exp() * enumerate_paths(grid, pi, pj);
        }
    }
    total
}

fn best_path(grid: &CostGrid, i: usize, j: usize) -> f64 {
    if i == 0 && j == 0 {
        return 0.0;
    }
    EditOp::ALL
        .iter()
        .filter(|op| op.defined_at(i, j))
        .map(|&op| {
            let (pi, pj) = op.predecessor(i, j);
            grid.get(op, i, j) + best_path(grid, pi, pj)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

fn random_grid() -> impl Strategy<Value = CostGrid> {
    (0usize..=3, 0usize..=3)
        .prop_filter("non-empty lattice", |(m, n)| m + n > 0)
        .prop_flat_map(|(m, n)| {
            proptest::collection::vec(0.05f64..1.0, (m + 1) * (n + 1) * 3).prop_map(move |w| {
                CostGrid::from_fn(m, n, |op, i, j| {
                    let c = i * (n + 1) + j;
                    let total: f64 = w[c * 3..c * 3 + 3].iter().sum();
                    (w[c * 3 + op.index()] / total).ln()
                })
            })
        })
}

fn pair_corpus(max: usize) -> impl Strategy<Value = Vec<TokenPair>> {
    proptest::collection::vec((word("abcd", 5), word("abcd", 5)).prop_filter("distinct", |(a, b)| a != b), 1..max)
        .prop_map(|v| v.into_iter().map(|(a, b)| TokenPair::new(tok(&a), tok(&b))).collect())
}

proptest! {
    #[test]
    fn levenshtein_triangle_inequality(a in word("abcde", 8), b in word("abcde", 8), c in word("abcde", 8)) {
        prop_assert!(levenshtein(&a, &c) <= levenshtein(&a, &b) + levenshtein(&b, &c));
    }

    #[test]
    fn levenshtein_bounded_by_longer_string(a in word("abc", 8), b in word("abc", 8)) {
        prop_assert!(levenshtein(&a, &b) <= a.len().max(b.len()));
    }

    #[test]
    fn levenshtein_disjoint_alphabets_hit_the_bound(a in word("abc", 8), b in word("xyz", 8)) {
        prop_assert_eq!(levenshtein(&a, &b), a.len().max(b.len()));
    }

    #[test]
    fn histogram_percentages_recompute_from_counts(ds in proptest::collection::vec(0usize..7, 1..60)) {
        prop_assume!(ds.iter().any(|&d| d > 0));
        let h = LdHistogram::from_distances(ds.iter().copied()).unwrap();
        prop_assert_eq!(h.total, h.counts.iter().sum::<usize>());
        prop_assert_eq!(h.zero_distance, ds.iter().filter(|&&d| d == 0).count());
        for k in 0..4 {
            let expect = (h.counts[k] as f64 / h.total as f64 * 1000.0).round() / 10.0;
            prop_assert_eq!(h.percentages[k], expect);
        }
    }

    #[test]
    fn lattice_likelihood_matches_path_enumeration(grid in random_grid()) {
        let (m, n) = (grid.source_len(), grid.target_len());
        let ll = log_likelihood(&grid).unwrap();
        prop_assert!((ll.exp() - enumerate_paths(&grid, m, n)).abs() <= 1e-9);
    }

    #[test]
    fn viterbi_matches_exhaustive_best_path(grid in random_grid()) {
        let (m, n) = (grid.source_len(), grid.target_len());
        let (path, score) = viterbi(&grid).unwrap();
        prop_assert!((score - best_path(&grid, m, n)).abs() <= 1e-12);
        let path_score: f64 = path.iter().map(|s| grid.get(s.op, s.i, s.j)).sum();
        prop_assert!((path_score - score).abs() <= 1e-12);
        prop_assert_eq!(path.last().map(|s| (s.i, s.j)), Some((m, n)));
    }

    #[test]
    fn posterior_flow_is_conserved(grid in random_grid()) {
        let (m, n) = (grid.source_len(), grid.target_len());
        let fb = forward_backward(&grid).unwrap();
        for i in 0..=m {
            for j in 0..=n {
                let incoming: f64 = EditOp::ALL.iter().map(|&op| fb.posterior(op, i, j)).sum();
                let mut outgoing = 0.0;
                if i < m { outgoing += fb.posterior(EditOp::Delete, i + 1, j); }
                if j < n { outgoing += fb.posterior(EditOp::Insert, i, j + 1); }
                if i < m && j < n { outgoing += fb.posterior(EditOp::Substitute, i + 1, j + 1); }
                if (i, j) == (0, 0) {
                    prop_assert!((outgoing - 1.0).abs() <= 1e-9);
                } else if (i, j) == (m, n) {
                    prop_assert!((incoming - 1.0).abs() <= 1e-9);
                } else {
                    prop_assert!((incoming - outgoing).abs() <= 1e-9);
                }
            }
        }
    }

    #[test]
    fn threshold_is_never_beaten_by_grid_scan(scores in proptest::collection::vec((0.0f64..=1.0, any::<bool>()), 1..40)) {
        prop_assume!(scores.iter().any(|s| s.1));
        let (tau, f1) = calibrate_threshold(&scores).unwrap();
        prop_assert_eq!(classify_scores(&scores, tau).f1, f1);
        for k in 0..=1000 {
            prop_assert!(classify_scores(&scores, k as f64 * 1e-3).f1 <= f1 + 1e-12);
        }
    }

    #[test]
    fn higher_threshold_predicts_a_subset(scores in proptest::collection::vec((0.0f64..=1.0, any::<bool>()), 1..40), t1 in 0.0f64..1.0, t2 in 0.0f64..1.0) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let (a, b) = (classify_scores(&scores, lo), classify_scores(&scores, hi));
        prop_assert!(a.tp >= b.tp && a.fp >= b.fp);
        prop_assert_eq!(classify_scores(&scores, 0.0).fn_, 0);
    }

    #[test]
    fn mrr_invariant_under_monotone_transform(queries in proptest::collection::vec((proptest::collection::vec(-5.0f64..5.0, 1..20), any::<prop::sample::Index>()), 1..10)) {
        let ranks = |f: &dyn Fn(f64) -> f64| -> Vec<Option<usize>> {
            queries.iter().map(|(s, k)| {
                let t: Vec<f64> = s.iter().map(|&x| f(x)).collect();
                Some(pessimistic_rank(&t, t[k.index(t.len())]))
            }).collect()
        };
        let base = mean_reciprocal_rank(&ranks(&|x| x));
        prop_assert_eq!(base, mean_reciprocal_rank(&ranks(&|x| 3.0 * x - 1.0)));
        prop_assert_eq!(base, mean_reciprocal_rank(&ranks(&|x: f64| x.exp())));
        prop_assert_eq!(base, mean_reciprocal_rank(&ranks(&|x: f64| x.powi(3))));
    }

    #[test]
    fn adding_a_lowest_candidate_keeps_rank(scores in proptest::collection::vec(-5.0f64..5.0, 1..20), k in any::<prop::sample::Index>()) {
        let target = scores[k.index(scores.len())];
        let mut more = scores.clone();
        more.push(-10.0);
        prop_assert_eq!(pessimistic_rank(&scores, target), pessimistic_rank(&more, target));
    }

    #[test]
    fn pair_file_round_trips(pairs in pair_corpus(30)) {
        let text = pairs_to_tsv(&pairs);
        let loaded = parse_pairs(text.as_bytes(), PairFormat::GbTsv, NormalizePolicy::default(), Path::new("mem")).unwrap();
        prop_assert!(loaded.rejects.is_empty());
        prop_assert_eq!(loaded.pairs, pairs);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn splits_are_deterministic_and_disjoint(pairs in pair_corpus(40), seed in any::<u64>(), by_pair in any::<bool>()) {
        let spec = SplitSpec {
            seed,
            group_by: if by_pair { GroupBy::Pair } else { GroupBy::VariantType },
            ..SplitSpec::default()
        };
        let s1 = split(&pairs, &spec).unwrap();
        prop_assert_eq!(&s1, &split(&pairs, &spec).unwrap());
        prop_assert_eq!(s1.train.len() + s1.val.len() + s1.test.len(), pairs.len());
        let mut all: Vec<&TokenPair> = s1.train.iter().chain(&s1.val).chain(&s1.test).collect();
        let mut orig: Vec<&TokenPair> = pairs.iter().collect();
        let key = |p: &&TokenPair| (p.variant.clone(), p.standard.clone());
        all.sort_by_key(key);
        orig.sort_by_key(key);
        prop_assert_eq!(all, orig);
        if !by_pair {
            let variants = |v: &[TokenPair]| v.iter().map(|p| p.variant.clone()).collect::<BTreeSet<_>>();
            let (a, b, c) = (variants(&s1.train), variants(&s1.val), variants(&s1.test));
            prop_assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn em_likelihood_never_decreases(pairs in pair_corpus(20)) {
        let alphabet = Alphabet::from_chars("abcd".chars());
        let model = em_fit_memoryless(&pairs, alphabet, 6, 1e-6).unwrap();
        for w in model.history().windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-10, "{:?}", model.history());
        }
    }

    #[test]
    fn negatives_respect_exclusion_optimality_and_determinism(
        pairs in pair_corpus(10),
        kind in prop::sample::select(NegativeKind::ALL.to_vec()),
        n in 1usize..8,
        seed in any::<u64>(),
    ) {
        let lexicon = Lexicon::new("abcd", ["a", "b", "ab", "ba", "abc", "dab", "cab", "dd", "bad", "cad", "dcba", "aaaa", "bcd", "c", "d"].map(tok));
        let strategy = NegativeStrategy::new(kind, n, seed).unwrap();
        let set = generate_negatives(&pairs, &lexicon, strategy);
        let set = match set {
            Ok(s) => s,
            Err(_) => return Ok(()),
        };
        prop_assert_eq!(&set, &generate_negatives(&pairs, &lexicon, strategy).unwrap());
        for p in &pairs {
            let rows: Vec<&Token> = set.rows.iter().filter(|r| r.variant == p.variant).map(|r| &r.candidate).collect();
            prop_assert_eq!(rows.len(), n);
            let excluded: HashSet<String> = pairs.iter().filter(|q| q.variant == p.variant)
                .map(|q| q.standard.as_str().to_lowercase())
                .chain([p.variant.as_str().to_lowercase()]).collect();
            prop_assert!(rows.iter().all(|c| !excluded.contains(&c.as_str().to_lowercase())));
            if kind == NegativeKind::Ld {
                let worst = rows.iter().map(|c| levenshtein(p.variant.as_str(), c.as_str())).max().unwrap();
                let chosen: HashSet<&Token> = rows.iter().copied().collect();
                for t in lexicon.tokens() {
                    if !chosen.contains(t) && !excluded.contains(&t.as_str().to_lowercase()) {
                        prop_assert!(levenshtein(p.variant.as_str(), t.as_str()) >= worst);
                    }
                }
            }
        }
    }

    #[test]
    fn extraction_recalls_planted_variants(
        filler in proptest::collection::vec(prop::sample::select(vec!["the", "cat", "sat", "on", "a", "mat", "and", "dog"]), 3..30),
        planted in proptest::collection::vec(word("qxz", 6), 1..6),
        seed in any::<u64>(),
    ) {
        let lexicon = Lexicon::new("toy", ["the", "cat", "sat", "on", "a", "mat", "and", "dog"].map(tok));
        let mut words: Vec<String> = filler.iter().map(|s| s.to_string()).collect();
        for (k, p) in planted.iter().enumerate() {
            let at = (seed as usize).wrapping_add(k * 7) % (words.len() + 1);
            words.insert(at, p.clone());
        }
        words.push("42".into());
        words.push("Cat".into());
        let text = format!("{}.", words.join(" "));
        let found: HashSet<String> = extract_candidates(&text, &lexicon).into_iter().map(|c| c.token.to_string()).collect();
        for p in &planted {
            prop_assert!(found.contains(p), "{p} missing from {found:?}");
        }
        for f in &found {
            prop_assert!(!lexicon.contains_str(f) && !f.chars().any(char::is_numeric));
        }
    }
}

#[test]
fn long_improbable_lattices_stay_finite() {
    let grid = CostGrid::from_fn(64, 64, |_, _, _| (1e-30f64).ln());
    let fb = forward_backward(&grid).unwrap();
    assert!(fb.loglik.is_finite());
    assert!(fb.posteriors.iter().flatten().all(|p| p.is_finite()));
}

#[test]
fn variant_type_grouping_keeps_a_variant_together() {
    let mut pairs: Vec<TokenPair> = (0..12).map(|k| TokenPair::new(tok(&format!("w{k}")), tok("x"))).collect();
    for s in ["children", "chil'ren", "childer"] {
        pairs.push(TokenPair::new(tok("chillun"), tok(s)));
    }
    for seed in 0..20 {
        let s = split(&pairs, &SplitSpec { seed, ..SplitSpec::default() }).unwrap();
        let holders = [&s.train, &s.val, &s.test]
            .iter()
            .filter(|part| part.iter().any(|p| p.variant.as_str() == "chillun"))
            .count();
        assert_eq!(holders, 1);
    }
}

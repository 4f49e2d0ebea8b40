use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::{info, warn};
use orthopair::corpus::{
    self, extract_candidates, load_pairs, load_pairs_with, pairs_to_tsv, Lexicon, LoadedPairs, PairFormat, SplitSpec,
};
use orthopair::evaluation::{classify_pairs, rank_against_lexicon, score_examples, sweep_report, EvalReport};
use orthopair::negatives::{generate_negatives, negative_ld_report, NegativeKind, NegativeSet, NegativeStrategy};
use orthopair::neural::{Example, NeuralEditModel};
use orthopair::strings::{ld_histogram, NormalizePolicy};
use orthopair::synthetic::{bundled_lexicon, generate_pairs, SyntheticConfig};
use orthopair::training::{build_examples, TrainConfig, TrainReport, Trainer};
use orthopair::{Alphabet, Token, TokenPair};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::failure::Failure;
use crate::manifest::Output;
use crate::{
    CharacterizeArgs, EvaluateArgs, ExtractArgs, GenNegativesArgs, ModelArgs, RankArgs, ReportArgs, SplitArgs,
    SweepArgs, SynthArgs, TrainArgs,
};

fn config_of(args: &impl Serialize) -> serde_json::Value {
    serde_json::to_value(args).expect("arguments are serializable")
}

fn pairs_from(out: &mut Output, path: &Path, format: PairFormat) -> Result<LoadedPairs, Failure> {
    out.input(path)?;
    let loaded = load_pairs(path, format)?;
    info!("{}: {} pairs, {} rejected", path.display(), loaded.pairs.len(), loaded.rejects.len());
    if loaded.pairs.is_empty() {
        return Err(Failure::Data(format!("{}: no usable pairs", path.display())));
    }
    Ok(loaded)
}

fn lexicon_from(out: &mut Output, path: Option<&Path>) -> Result<Lexicon, Failure> {
    match path {
        Some(p) => {
            out.input(p)?;
            Ok(Lexicon::load(p)?)
        }
        None => Ok(bundled_lexicon()),
    }
}

fn train_config(m: &ModelArgs, seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: m.batch_size,
        validation_frequency: m.val_freq,
        patience: m.patience,
        max_epochs: m.max_epochs,
        seed,
        d_emb: m.emb_size,
        layers: m.layers,
        learning_rate: m.lr,
    }
}

fn alphabet_for<'a>(lexicon: &'a Lexicon, pairs: impl IntoIterator<Item = &'a TokenPair>) -> Alphabet {
    let mut tokens: Vec<&Token> = lexicon.tokens().iter().collect();
    for p in pairs {
        tokens.push(&p.variant);
        tokens.push(&p.standard);
    }
    Alphabet::from_tokens(tokens)
}

fn queries(pairs: &[TokenPair]) -> Vec<(Token, Token)> {
    let mut q: Vec<(Token, Token)> = pairs.iter().map(|p| (p.variant.clone(), p.standard.clone())).collect();
    q.sort();
    q.dedup();
    q
}

fn json_pretty(value: &impl Serialize) -> String {
    serde_json::to_string_pretty(value).expect("value is serializable") + "\n"
}

pub fn extract(a: ExtractArgs) -> Result<(), Failure> {
    let mut out = Output::new(&a.out.out, a.out.force, "extract", config_of(&a), Some(a.seed))?;
    let lexicon = lexicon_from(&mut out, a.lexicon.as_deref())?;
    let mut rows = Vec::new();
    for path in &a.corpus {
        out.input(path)?;
        let text = std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
        let source = path.file_name().map_or(String::new(), |f| f.to_string_lossy().into_owned());
        for c in extract_candidates(&text, &lexicon) {
            let sentence = c.sentence.replace(['\t', '\n', '\r'], " ");
            rows.push(format!("{}\t{sentence}\t{source}\n", c.token));
        }
    }
    if let Some(k) = a.sample.filter(|&k| k < rows.len()) {
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
        let mut keep = rand::seq::index::sample(&mut rng, rows.len(), k).into_vec();
        keep.sort_unstable();
        rows = keep.into_iter().map(|i| std::mem::take(&mut rows[i])).collect();
    }
    out.add("candidates.tsv", format!("candidate\tsentence\tsource\n{}", rows.concat()));
    out.commit()
}

pub fn characterize(a: CharacterizeArgs) -> Result<(), Failure> {
    let dir = a.out.clone().unwrap_or_default();
    let mut out = Output::new(&dir, a.force || a.out.is_none(), "characterize", config_of(&a), None)?;
    out.input(&a.corpus)?;
    let policy = NormalizePolicy {
        preserve_case: a.preserve_case,
    };
    let loaded = load_pairs_with(&a.corpus, a.format, policy)?;
    let hist = ld_histogram(&loaded.pairs)?;
    let label = a.corpus.file_stem().map_or("corpus".into(), |s| s.to_string_lossy().into_owned());
    let csv = hist.to_csv(&label);
    print!("{csv}");
    if a.out.is_some() {
        out.add("ld_histogram.csv", csv);
        out.add("rejects.tsv", loaded.rejects_tsv());
        out.commit()?;
    }
    Ok(())
}

pub fn gen_negatives(a: GenNegativesArgs) -> Result<(), Failure> {
    let mut out = Output::new(&a.out.out, a.out.force, "gen-negatives", config_of(&a), Some(a.seed))?;
    let loaded = pairs_from(&mut out, &a.corpus, a.format)?;
    let lexicon = lexicon_from(&mut out, a.lexicon.as_deref())?;
    let strategy = NegativeStrategy::new(a.strategy, a.n, a.seed)?;
    let set = generate_negatives(&loaded.pairs, &lexicon, strategy)?;
    out.add("negatives.tsv", set.to_tsv());
    out.add("negative_ld.csv", negative_ld_report(&BTreeMap::from([((a.strategy, a.n), set)])));
    out.commit()
}

pub fn split(a: SplitArgs) -> Result<(), Failure> {
    let mut out = Output::new(&a.out.out, a.out.force, "split", config_of(&a), Some(a.seed))?;
    let loaded = pairs_from(&mut out, &a.corpus, a.format)?;
    let spec = SplitSpec {
        fractions: [a.fractions[0], a.fractions[1], a.fractions[2]],
        seed: a.seed,
        group_by: a.group_by,
    };
    let splits = corpus::split(&loaded.pairs, &spec)?;
    out.add("train.tsv", pairs_to_tsv(&splits.train));
    out.add("val.tsv", pairs_to_tsv(&splits.val));
    out.add("test.tsv", pairs_to_tsv(&splits.test));
    out.add("rejects.tsv", loaded.rejects_tsv());
    out.commit()
}

struct CellResult {
    model: NeuralEditModel,
    report: TrainReport,
    train_negatives: NegativeSet,
    val_negatives: NegativeSet,
}

/// Generates negatives for both splits and trains. A numeric failure is
/// returned together with the trainer checkpoint taken before the failing
/// step.
fn train_cell(
    train_pairs: &[TokenPair],
    val_pairs: &[TokenPair],
    lexicon: &Lexicon,
    alphabet: Alphabet,
    strategy: NegativeStrategy,
    cfg: TrainConfig,
) -> Result<CellResult, (Failure, Option<String>)> {
    let train_negatives = generate_negatives(train_pairs, lexicon, strategy).map_err(|e| (e.into(), None))?;
    let val_negatives = generate_negatives(val_pairs, lexicon, strategy).map_err(|e| (e.into(), None))?;
    let train = build_examples(train_pairs, Some(&train_negatives));
    let val = build_examples(val_pairs, Some(&val_negatives));
    let model = NeuralEditModel::new(alphabet, cfg.model_config(), cfg.seed).map_err(|e| (e.into(), None))?;
    let mut trainer = Trainer::new(model, &train, &val, cfg).map_err(|e| (e.into(), None))?;
    loop {
        let before = trainer.checkpoint();
        match trainer.step() {
            Ok(true) => {}
            Ok(false) => break,
            Err(e) if e.is_numeric() => return Err((e.into(), Some(before.to_json()))),
            Err(e) => return Err((e.into(), None)),
        }
    }
    let (model, report) = trainer.finish().map_err(|e| (e.into(), None))?;
    Ok(CellResult {
        model,
        report,
        train_negatives,
        val_negatives,
    })
}

pub fn train(a: TrainArgs) -> Result<(), Failure> {
    let mut out = Output::new(&a.out.out, a.out.force, "train", config_of(&a), Some(a.seed))?;
    let train_pairs = pairs_from(&mut out, &a.train, a.format)?.pairs;
    let val_pairs = pairs_from(&mut out, &a.val, a.format)?.pairs;
    let lexicon = lexicon_from(&mut out, a.lexicon.as_deref())?;
    let cfg = train_config(&a.model, a.seed);
    cfg.validate()?;
    let strategy = NegativeStrategy::new(a.strategy, a.n, a.seed)?;
    let alphabet = alphabet_for(&lexicon, train_pairs.iter().chain(&val_pairs));
    out.add("config.json", json_pretty(&cfg));
    match train_cell(&train_pairs, &val_pairs, &lexicon, alphabet, strategy, cfg) {
        Ok(cell) => {
            out.add("model.nedm", cell.model.to_bytes());
            out.add("history.csv", cell.report.history_csv());
            out.add("summary.json", cell.report.summary_json());
            out.add("negatives_train.tsv", cell.train_negatives.to_tsv());
            out.add("negatives_val.tsv", cell.val_negatives.to_tsv());
            out.commit()
        }
        Err((failure, snapshot)) => {
            if let Some(json) = snapshot {
                out.add("divergence_checkpoint.json", json);
                out.commit()?;
            }
            Err(failure)
        }
    }
}

fn scores_tsv(examples: &[Example], scores: &[(f64, bool)]) -> String {
    let mut s = String::from("variant\tcandidate\tlabel\tp_match\n");
    for (e, (p, label)) in examples.iter().zip(scores) {
        s.push_str(&format!("{}\t{}\t{}\t{p:.9}\n", e.source, e.target, u8::from(*label)));
    }
    s
}

pub fn evaluate(a: EvaluateArgs) -> Result<(), Failure> {
    let mut out = Output::new(&a.out.out, a.out.force, "evaluate", config_of(&a), Some(a.seed))?;
    out.input(&a.model)?;
    let model = NeuralEditModel::load(&a.model)?;
    let test = pairs_from(&mut out, &a.test, a.format)?.pairs;
    let lexicon = lexicon_from(&mut out, a.lexicon.as_deref())?;
    let negatives = generate_negatives(&test, &lexicon, NegativeStrategy::new(a.strategy, a.n, a.seed)?)?;
    let examples = build_examples(&test, Some(&negatives));
    let scores = score_examples(&model, &examples)?;
    let report = EvalReport {
        classification: Some(classify_pairs(&model, &examples)?),
        ranking: None,
    };
    out.add("summary.csv", report.summary_csv());
    out.add("scores.tsv", scores_tsv(&examples, &scores));
    out.add("negatives_test.tsv", negatives.to_tsv());
    out.commit()
}

pub fn rank(a: RankArgs) -> Result<(), Failure> {
    let mut out = Output::new(&a.out.out, a.out.force, "rank", config_of(&a), None)?;
    out.input(&a.model)?;
    let model = NeuralEditModel::load(&a.model)?;
    let test = pairs_from(&mut out, &a.test, a.format)?.pairs;
    let lexicon = lexicon_from(&mut out, a.lexicon.as_deref())?;
    let report = EvalReport {
        classification: None,
        ranking: Some(rank_against_lexicon(&model, &queries(&test), &lexicon)?),
    };
    out.add("summary.csv", report.summary_csv());
    out.add("ranks.tsv", report.ranks_tsv());
    out.commit()
}

pub fn sweep(a: SweepArgs) -> Result<(), Failure> {
    let mut out = Output::new(&a.out.out, a.out.force, "sweep", config_of(&a), Some(a.seed))?;
    let loaded = pairs_from(&mut out, &a.corpus, a.format)?;
    let lexicon = lexicon_from(&mut out, a.lexicon.as_deref())?;
    let cfg = train_config(&a.model, a.seed);
    cfg.validate()?;
    let splits = corpus::split(
        &loaded.pairs,
        &SplitSpec {
            seed: a.seed,
            ..SplitSpec::default()
        },
    )?;
    out.add("splits/train.tsv", pairs_to_tsv(&splits.train));
    out.add("splits/val.tsv", pairs_to_tsv(&splits.val));
    out.add("splits/test.tsv", pairs_to_tsv(&splits.test));
    let alphabet = alphabet_for(&lexicon, loaded.pairs.iter());
    let test_queries = queries(&splits.test);

    let mut cells: Vec<(NegativeKind, usize)> = Vec::new();
    for &kind in &a.strategy {
        for &n in &a.n {
            if !cells.contains(&(kind, n)) {
                cells.push((kind, n));
            }
        }
    }
    type CellOutcome = Result<(CellResult, EvalReport, NegativeSet), (Failure, Option<String>)>;
    let outcomes: Vec<CellOutcome> = cells
        .par_iter()
        .map(|&(kind, n)| {
            let strategy = NegativeStrategy::new(kind, n, a.seed).map_err(|e| (e.into(), None))?;
            info!("sweep cell {kind} n={n}");
            let cell = train_cell(&splits.train, &splits.val, &lexicon, alphabet.clone(), strategy, cfg)?;
            let test_negatives = generate_negatives(&splits.test, &lexicon, strategy).map_err(|e| (e.into(), None))?;
            let examples = build_examples(&splits.test, Some(&test_negatives));
            let report = EvalReport {
                classification: Some(classify_pairs(&cell.model, &examples).map_err(|e| (e.into(), None))?),
                ranking: Some(rank_against_lexicon(&cell.model, &test_queries, &lexicon).map_err(|e| (e.into(), None))?),
            };
            Ok((cell, report, test_negatives))
        })
        .collect();

    let mut results = BTreeMap::new();
    let mut neg_sets = BTreeMap::new();
    let mut failures = String::from("strategy\tn\texit_code\terror\n");
    let mut worst: Option<Failure> = None;
    for ((kind, n), outcome) in cells.iter().zip(outcomes) {
        let dir = PathBuf::from("cells").join(format!("{kind}-{n}"));
        match outcome {
            Ok((cell, report, test_negatives)) => {
                out.add(dir.join("model.nedm"), cell.model.to_bytes());
                out.add(dir.join("history.csv"), cell.report.history_csv());
                out.add(dir.join("summary.json"), cell.report.summary_json());
                out.add(dir.join("eval.csv"), report.summary_csv());
                out.add(dir.join("ranks.tsv"), report.ranks_tsv());
                out.add(dir.join("negatives_test.tsv"), test_negatives.to_tsv());
                out.add(dir.join("negatives_val.tsv"), cell.val_negatives.to_tsv());
                out.add(dir.join("negatives_train.tsv"), cell.train_negatives.to_tsv());
                neg_sets.insert((*kind, *n), cell.train_negatives);
                results.insert((*kind, *n), report);
            }
            Err((failure, snapshot)) => {
                warn!("sweep cell {kind} n={n} failed: {failure}");
                if let Some(json) = snapshot {
                    out.add(dir.join("divergence_checkpoint.json"), json);
                }
                let message = failure.to_string().replace(['\t', '\n'], " ");
                failures.push_str(&format!("{kind}\t{n}\t{}\t{message}\n", failure.exit_code()));
                if worst.as_ref().is_none_or(|w| failure.exit_code() > w.exit_code()) {
                    worst = Some(failure);
                }
            }
        }
    }
    out.add("sweep.csv", sweep_report(&results));
    out.add("negative_ld.csv", negative_ld_report(&neg_sets));
    out.add("mrr_by_n.csv", mrr_by_n(&results));
    out.add("failures.tsv", failures);
    out.commit()?;
    match worst {
        Some(f) if f.exit_code() == 3 => Err(f),
        Some(f) => Err(Failure::Data(format!("sweep cell failed: {f}; see failures.tsv"))),
        None => Ok(()),
    }
}

fn mrr_by_n(results: &BTreeMap<(NegativeKind, usize), EvalReport>) -> String {
    let mut s = String::from("strategy,n,mrr\n");
    for ((kind, n), r) in results {
        if let Some(rank) = &r.ranking {
            s.push_str(&format!("{kind},{n},{:.6}\n", rank.mrr));
        }
    }
    s
}

/// (strategy, n) → (f1, mrr) as written in `sweep.csv`.
type SweepRows = BTreeMap<(NegativeKind, usize), (String, String)>;

fn read_sweep(path: &Path) -> Result<SweepRows, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some("strategy,n,f1,mrr") {
        return Err(Failure::Data(format!("{}: not a sweep table", path.display())));
    }
    let mut rows = BTreeMap::new();
    for (k, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Failure::Data(format!("{}:{}: malformed row", path.display(), k + 2));
        if f.len() != 4 {
            return Err(bad());
        }
        let kind: NegativeKind = f[0].parse().map_err(|_| bad())?;
        let n: usize = f[1].parse().map_err(|_| bad())?;
        rows.insert((kind, n), (f[2].to_string(), f[3].to_string()));
    }
    Ok(rows)
}

fn short(v: &str) -> String {
    v.parse::<f64>().map_or("-".into(), |x| format!("{x:.2}"))
}

pub fn report(a: ReportArgs) -> Result<(), Failure> {
    let mut out = Output::new(&a.out.out, a.out.force, "report", config_of(&a), None)?;
    let sweep_path = a.input.join("sweep.csv");
    out.input(&sweep_path)?;
    let rows = read_sweep(&sweep_path)?;
    let mut counts: Vec<usize> = rows.keys().map(|k| k.1).collect();
    counts.sort_unstable();
    counts.dedup();
    let mut table = String::from("strategy");
    for n in &counts {
        table.push_str(&format!("\tF n={n}\tMRR n={n}"));
    }
    table.push('\n');
    for kind in NegativeKind::ALL {
        if !rows.keys().any(|k| k.0 == kind) {
            continue;
        }
        table.push_str(kind.as_str());
        for n in &counts {
            let (f1, mrr) = rows.get(&(kind, *n)).map_or(("-".into(), "-".into()), |(f, m)| (short(f), short(m)));
            table.push_str(&format!("\t{f1}\t{mrr}"));
        }
        table.push('\n');
    }
    print!("{table}");
    out.add("table.tsv", table);
    for name in ["negative_ld.csv", "mrr_by_n.csv"] {
        let path = a.input.join(name);
        if path.exists() {
            out.input(&path)?;
            out.add(name, std::fs::read(&path).map_err(|e| Failure::io(&path, e))?);
        }
    }
    out.commit()
}

pub fn synth(a: SynthArgs) -> Result<(), Failure> {
    let mut out = Output::new(&a.out.out, a.out.force, "synth", config_of(&a), Some(a.seed))?;
    let lexicon = lexicon_from(&mut out, a.lexicon.as_deref())?;
    let cfg = SyntheticConfig {
        words: a.words,
        seed: a.seed,
        systems: a.systems,
    };
    let pairs = generate_pairs(&lexicon, &cfg)?;
    out.add("pairs.tsv", pairs_to_tsv(&pairs));
    out.commit()
}

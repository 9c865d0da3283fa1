//! Fisher's exact test and the word-level analyses of accepted versus
//! rejected suggestions.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rayon::prelude::*;
use serde::Serialize;
use statrs::function::factorial::ln_binomial;

use crate::classify::{self, mean_std, Dataset, Hyper, ModelKind};
use crate::corpus::Corpus;
use crate::detect::{coefficient_stats, fold_coefficients};
use crate::error::{Error, Result};

/// Tables with at most this many observations use exact rational arithmetic.
pub const EXACT_LIMIT: u64 = 100;
const TIE_SLACK: f64 = 1e-7;

const STOPWORD_TEXT: &str = include_str!("stopwords.txt");

pub fn default_stopwords() -> HashSet<String> {
    STOPWORD_TEXT.lines().map(str::trim).filter(|w| !w.is_empty()).map(String::from).collect()
}

/// Lowercases, keeps apostrophes only between letters or digits, turns all
/// other punctuation into spaces and splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.to_lowercase().chars().collect();
    let mut cleaned = String::with_capacity(chars.len());
    for (i, &c) in chars.iter().enumerate() {
        let keep = c.is_alphanumeric()
            || ((c == '\'' || c == '\u{2019}')
                && i > 0
                && chars[i - 1].is_alphanumeric()
                && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric()));
        cleaned.push(if c == '\u{2019}' && keep {
            '\''
        } else if keep {
            c
        } else {
            ' '
        });
    }
    cleaned.split_whitespace().map(String::from).collect()
}

/// Binary bag-of-words rows over a sorted vocabulary.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SuggestionMatrix {
    pub vocabulary: Vec<String>,
    /// Sorted vocabulary indices present in each suggestion.
    pub rows: Vec<Vec<usize>>,
    pub accepted: Vec<bool>,
}

impl SuggestionMatrix {
    /// Builds the matrix from word lists, dropping empty rows.
    pub fn from_words(docs: &[(Vec<String>, bool)]) -> Self {
        let vocab: BTreeSet<&str> = docs.iter().flat_map(|(w, _)| w.iter().map(String::as_str)).collect();
        let vocabulary: Vec<String> = vocab.into_iter().map(String::from).collect();
        let mut rows = Vec::new();
        let mut accepted = Vec::new();
        for (words, acc) in docs {
            let mut row: Vec<usize> = words
                .iter()
                .map(|w| vocabulary.binary_search(w).expect("word in vocabulary"))
                .collect();
            row.sort_unstable();
            row.dedup();
            if row.is_empty() {
                continue;
            }
            rows.push(row);
            accepted.push(*acc);
        }
        SuggestionMatrix { vocabulary, rows, accepted }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn word_index(&self, word: &str) -> Option<usize> {
        self.vocabulary.binary_search_by(|w| w.as_str().cmp(word)).ok()
    }

    /// Dense 0/1 features over `columns` (all words when `None`).
    pub fn dataset(&self, columns: Option<&[usize]>) -> Dataset {
        let all: Vec<usize>;
        let cols = match columns {
            Some(c) => c,
            None => {
                all = (0..self.vocabulary.len()).collect();
                &all
            }
        };
        let pos: BTreeMap<usize, usize> = cols.iter().enumerate().map(|(j, &c)| (c, j)).collect();
        let x = self
            .rows
            .iter()
            .map(|row| {
                let mut v = vec![0.0; cols.len()];
                for w in row {
                    if let Some(&j) = pos.get(w) {
                        v[j] = 1.0;
                    }
                }
                v
            })
            .collect();
        Dataset { x, y: self.accepted.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TokenizeReport {
    pub missing_text: usize,
    pub empty_rows: usize,
}

/// One row per annotated suggestion with text. Suggestions without text, or
/// whose words are all stopwords, are skipped and counted.
pub fn tokenize_suggestions(corpus: &Corpus, stopwords: &HashSet<String>) -> (SuggestionMatrix, TokenizeReport) {
    let mut report = TokenizeReport::default();
    let mut docs = Vec::new();
    for m in &corpus.meetings {
        for s in &m.suggestions {
            let Some(text) = m.acts[s.act_index].text.as_deref() else {
                log::warn!("meeting {}: suggestion at act {} has no text; skipped", m.id, s.act_index);
                report.missing_text += 1;
                continue;
            };
            let words: Vec<String> = tokenize(text).into_iter().filter(|w| !stopwords.contains(w)).collect();
            if words.is_empty() {
                report.empty_rows += 1;
                continue;
            }
            docs.push((words, s.accepted));
        }
    }
    (SuggestionMatrix::from_words(&docs), report)
}

fn binomial_big(n: u64, k: u64) -> BigInt {
    if k > n {
        return BigInt::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigInt::one();
    for i in 0..k {
        acc = acc * BigInt::from(n - i) / BigInt::from(i + 1);
    }
    acc
}

/// `C(K,k) C(N-K,n-k) / C(N,n)` as an exact rational; zero off the support.
pub fn hypergeom_pmf_exact(big_n: u64, big_k: u64, n: u64, k: u64) -> BigRational {
    if big_k > big_n || n > big_n || k > big_k || k > n || n - k > big_n - big_k {
        return BigRational::zero();
    }
    BigRational::new(
        binomial_big(big_k, k) * binomial_big(big_n - big_k, n - k),
        binomial_big(big_n, n),
    )
}

fn ln_pmf(big_n: u64, big_k: u64, n: u64, k: u64) -> f64 {
    ln_binomial(big_k, k) + ln_binomial(big_n - big_k, n - k) - ln_binomial(big_n, n)
}

/// Probability of drawing `k` marked items in `n` draws without replacement
/// from `N` items of which `K` are marked. Arguments outside the support
/// (including `K > N` or `n > N`) give 0.
pub fn hypergeom_pmf(big_n: u64, big_k: u64, n: u64, k: u64) -> f64 {
    if big_k > big_n || n > big_n || k > big_k || k > n || n - k > big_n - big_k {
        return 0.0;
    }
    if big_n <= EXACT_LIMIT {
        return hypergeom_pmf_exact(big_n, big_k, n, k).to_f64().unwrap_or(f64::NAN);
    }
    ln_pmf(big_n, big_k, n, k).exp()
}

/// `[[a, b], [c, d]]`: rows are with/without the feature, columns are
/// accepted/rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct ContingencyTable {
    pub a: u64,
    pub b: u64,
    pub c: u64,
    pub d: u64,
}

impl ContingencyTable {
    pub fn new(a: u64, b: u64, c: u64, d: u64) -> Self {
        ContingencyTable { a, b, c, d }
    }

    pub fn total(&self) -> u64 {
        self.a + self.b + self.c + self.d
    }

    /// (N, first row sum, first column sum).
    pub fn margins(&self) -> (u64, u64, u64) {
        (self.total(), self.a + self.b, self.a + self.c)
    }

    pub fn is_degenerate(&self) -> bool {
        self.a + self.b == 0 || self.c + self.d == 0 || self.a + self.c == 0 || self.b + self.d == 0
    }

    /// Range of `a` over tables sharing these margins.
    pub fn support(&self) -> (u64, u64) {
        let (n, r, c) = self.margins();
        ((r + c).saturating_sub(n), r.min(c))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FisherResult {
    pub table: ContingencyTable,
    pub p_two_sided: f64,
    /// Tail in the direction the observed `a` deviates from its expectation.
    pub p_one_sided: f64,
    pub p_less: f64,
    pub p_greater: f64,
    pub degenerate: bool,
}

/// Exact rational p-values (two-sided, less, greater) for small tables.
pub fn fisher_exact_rational(table: &ContingencyTable) -> (BigRational, BigRational, BigRational) {
    let (n, r, c) = table.margins();
    let (lo, hi) = table.support();
    let probs: Vec<BigRational> = (lo..=hi).map(|k| hypergeom_pmf_exact(n, r, c, k)).collect();
    let obs = &probs[(table.a - lo) as usize];
    let slack = BigRational::new(BigInt::from(10_000_001u64), BigInt::from(10_000_000u64));
    let cutoff = obs * slack;
    let mut two = BigRational::zero();
    let mut less = BigRational::zero();
    let mut greater = BigRational::zero();
    for (i, p) in probs.iter().enumerate() {
        let k = lo + i as u64;
        if *p <= cutoff {
            two += p;
        }
        if k <= table.a {
            less += p;
        }
        if k >= table.a {
            greater += p;
        }
    }
    (two, less, greater)
}

fn one_sided(table: &ContingencyTable, less: f64, greater: f64) -> f64 {
    let (n, r, c) = table.margins();
    // compare a with r·c/N without division
    let lhs = table.a as u128 * n as u128;
    let rhs = r as u128 * c as u128;
    match lhs.cmp(&rhs) {
        std::cmp::Ordering::Greater => greater,
        std::cmp::Ordering::Less => less,
        std::cmp::Ordering::Equal => less.min(greater),
    }
}

/// Fisher's exact test. The two-sided value sums every same-margin table
/// whose probability is at most the observed one (relative slack 1e-7).
/// Degenerate margins give p = 1 with `degenerate` set.
pub fn fisher_exact(table: &ContingencyTable) -> FisherResult {
    if table.is_degenerate() {
        return FisherResult {
            table: *table,
            p_two_sided: 1.0,
            p_one_sided: 1.0,
            p_less: 1.0,
            p_greater: 1.0,
            degenerate: true,
        };
    }
    let (two, less, greater) = if table.total() <= EXACT_LIMIT {
        let (t, l, g) = fisher_exact_rational(table);
        (t.to_f64().unwrap(), l.to_f64().unwrap(), g.to_f64().unwrap())
    } else {
        fisher_float(table)
    };
    let (two, less, greater) = (two.min(1.0), less.min(1.0), greater.min(1.0));
    FisherResult {
        table: *table,
        p_two_sided: two,
        p_one_sided: one_sided(table, less, greater),
        p_less: less,
        p_greater: greater,
        degenerate: false,
    }
}

fn fisher_float(table: &ContingencyTable) -> (f64, f64, f64) {
    let (n, r, c) = table.margins();
    let (lo, hi) = table.support();
    let logs: Vec<f64> = (lo..=hi).map(|k| ln_pmf(n, r, c, k)).collect();
    let obs = logs[(table.a - lo) as usize];
    // Scale by the observed probability so tiny tails do not underflow.
    let cutoff = (1.0 + TIE_SLACK).ln();
    let (mut two, mut less, mut greater) = (0.0, 0.0, 0.0);
    for (i, &l) in logs.iter().enumerate() {
        let k = lo + i as u64;
        let rel = (l - obs).exp();
        if l - obs <= cutoff {
            two += rel;
        }
        if k <= table.a {
            less += rel;
        }
        if k >= table.a {
            greater += rel;
        }
    }
    let scale = obs.exp();
    (two * scale, less * scale, greater * scale)
}

/// Contains-any-lexicon-word against accepted, over all suggestions.
pub fn aggregate_lexicon_test(matrix: &SuggestionMatrix, lexicon: &HashSet<String>) -> Result<FisherResult> {
    if matrix.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let marked: HashSet<usize> = lexicon.iter().filter_map(|w| matrix.word_index(w)).collect();
    let mut t = ContingencyTable::new(0, 0, 0, 0);
    for (row, &acc) in matrix.rows.iter().zip(&matrix.accepted) {
        let has = row.iter().any(|w| marked.contains(w));
        match (has, acc) {
            (true, true) => t.a += 1,
            (true, false) => t.b += 1,
            (false, true) => t.c += 1,
            (false, false) => t.d += 1,
        }
    }
    Ok(fisher_exact(&t))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    Persuasive,
    NonPersuasive,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::Persuasive => "persuasive",
            Direction::NonPersuasive => "non-persuasive",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WordScreenRow {
    pub word: String,
    /// One-sided Fisher p-value.
    pub p_value: f64,
    pub p_two_sided: f64,
    pub with_accepted: u64,
    pub with_total: u64,
    pub without_accepted: u64,
    pub without_total: u64,
    pub direction: Direction,
}

impl WordScreenRow {
    pub fn ratio_with(&self) -> f64 {
        self.with_accepted as f64 / self.with_total as f64
    }

    pub fn ratio_without(&self) -> f64 {
        self.without_accepted as f64 / self.without_total as f64
    }
}

/// Screening row for one word given its table.
pub fn screen_row(word: &str, table: &ContingencyTable) -> WordScreenRow {
    let f = fisher_exact(table);
    let with_total = table.a + table.b;
    let without_total = table.c + table.d;
    // a/(a+b) > c/(c+d), cross-multiplied
    let persuasive = (table.a as u128) * (without_total as u128) > (table.c as u128) * (with_total as u128);
    WordScreenRow {
        word: word.to_string(),
        p_value: f.p_one_sided,
        p_two_sided: f.p_two_sided,
        with_accepted: table.a,
        with_total,
        without_accepted: table.c,
        without_total,
        direction: if persuasive { Direction::Persuasive } else { Direction::NonPersuasive },
    }
}

/// Words whose one-sided p-value is at most `alpha`, most significant first
/// (ties alphabetical).
pub fn word_screen(matrix: &SuggestionMatrix, alpha: f64) -> Vec<WordScreenRow> {
    if alpha <= 0.0 || matrix.is_empty() {
        return Vec::new();
    }
    let total_acc = matrix.accepted.iter().filter(|&&a| a).count() as u64;
    let total = matrix.len() as u64;
    let mut with = vec![(0u64, 0u64); matrix.vocabulary.len()];
    for (row, &acc) in matrix.rows.iter().zip(&matrix.accepted) {
        for &w in row {
            with[w].0 += u64::from(acc);
            with[w].1 += 1;
        }
    }
    let mut out: Vec<WordScreenRow> = matrix
        .vocabulary
        .par_iter()
        .zip(with.par_iter())
        .filter_map(|(word, &(acc, n))| {
            let t = ContingencyTable::new(acc, n - acc, total_acc - acc, total - n - (total_acc - acc));
            let row = screen_row(word, &t);
            (row.p_value <= alpha).then_some(row)
        })
        .collect();
    out.sort_by(|x, y| x.p_value.total_cmp(&y.p_value).then_with(|| x.word.cmp(&y.word)));
    out
}

pub fn screen_csv(rows: &[WordScreenRow]) -> String {
    let mut s = String::from("word,p_value,accept_ratio_with,accept_ratio_without,direction\n");
    for r in rows {
        s.push_str(&format!(
            "{},{:.6e},{:.4} ({}/{}),{:.4} ({}/{}),{}\n",
            r.word,
            r.p_value,
            r.ratio_with(),
            r.with_accepted,
            r.with_total,
            r.ratio_without(),
            r.without_accepted,
            r.without_total,
            r.direction.name()
        ));
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WordCoefficient {
    pub word: String,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WordRanking {
    pub accuracy: f64,
    pub accuracy_std: f64,
    /// Sorted by mean coefficient, largest first.
    pub words: Vec<WordCoefficient>,
    /// Raw coefficient vectors per fold, in `columns` order.
    pub fold_coefficients: Vec<Vec<f64>>,
    pub columns: Vec<String>,
}

/// Linear SVM over the binary word features, evaluated by stratified folds.
/// `restrict` limits the features to the given words (unknown words are
/// ignored).
pub fn svm_word_ranking(
    matrix: &SuggestionMatrix,
    folds: usize,
    hyper: &Hyper,
    seed: u64,
    restrict: Option<&[String]>,
) -> Result<WordRanking> {
    let cols: Vec<usize> = match restrict {
        Some(words) => {
            let mut c: Vec<usize> = words.iter().filter_map(|w| matrix.word_index(w)).collect();
            c.sort_unstable();
            c.dedup();
            c
        }
        None => (0..matrix.vocabulary.len()).collect(),
    };
    if cols.is_empty() {
        return Err(Error::invalid("no features left to fit"));
    }
    let data = matrix.dataset(Some(&cols));
    let (results, _) = classify::run_folds(&data, ModelKind::LinearSvm, folds, hyper, seed)?;
    let coefs = fold_coefficients(&data, folds, hyper, seed)?;
    let (accuracy, accuracy_std) = mean_std(&results.iter().map(|r| r.accuracy).collect::<Vec<_>>());
    let columns: Vec<String> = cols.iter().map(|&c| matrix.vocabulary[c].clone()).collect();
    let mut words: Vec<WordCoefficient> = coefficient_stats(&coefs)
        .into_iter()
        .zip(&columns)
        .map(|((mean, std), w)| WordCoefficient { word: w.clone(), mean, std })
        .collect();
    words.sort_by(|a, b| b.mean.total_cmp(&a.mean).then_with(|| a.word.cmp(&b.word)));
    Ok(WordRanking { accuracy, accuracy_std, words, fold_coefficients: coefs, columns })
}

/// Screens words at `alpha` on the whole matrix, then fits on the survivors.
pub fn screen_then_fit(
    matrix: &SuggestionMatrix,
    alpha: f64,
    folds: usize,
    hyper: &Hyper,
    seed: u64,
) -> Result<WordRanking> {
    let kept: Vec<String> = word_screen(matrix, alpha).into_iter().map(|r| r.word).collect();
    svm_word_ranking(matrix, folds, hyper, seed, Some(&kept))
}

pub fn ranking_csv(r: &WordRanking) -> String {
    let mut s = String::from("word,coefficient,std\n");
    for w in &r.words {
        s.push_str(&format!("{},{:.6},{:.6}\n", w.word, w.mean, w.std));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_keeps_contractions() {
        assert_eq!(
            tokenize("Shouldn't we start with the most important parts?"),
            ["shouldn't", "we", "start", "with", "the", "most", "important", "parts"]
        );
        assert_eq!(tokenize("'quoted' -- dash,comma"), ["quoted", "dash", "comma"]);
        let stop = default_stopwords();
        assert!(stop.len() > 150);
        let kept: Vec<String> = tokenize("Shouldn't we start with the most important parts?")
            .into_iter()
            .filter(|w| !stop.contains(w))
            .collect();
        assert_eq!(kept, ["start", "important", "parts"]);
    }

    #[test]
    fn presence_is_binary() {
        let m = SuggestionMatrix::from_words(&[
            (vec!["b".into(), "a".into(), "b".into()], true),
            (vec![], false),
        ]);
        assert_eq!(m.vocabulary, ["a", "b"]);
        assert_eq!(m.rows, vec![vec![0, 1]]);
        assert_eq!(m.dataset(None).x, vec![vec![1.0, 1.0]]);
    }

    #[test]
    fn pmf_values() {
        assert!((hypergeom_pmf(4, 2, 2, 1) - 4.0 / 6.0).abs() < 1e-15);
        assert_eq!(hypergeom_pmf(10, 3, 4, 5), 0.0);
        assert_eq!(hypergeom_pmf(10, 3, 4, 4), 0.0);
        let s: f64 = (0..=10).map(|k| hypergeom_pmf(50, 20, 10, k)).sum();
        assert!((s - 1.0).abs() < 1e-12);
        let s: f64 = (0..=60).map(|k| hypergeom_pmf(500, 120, 60, k)).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fisher_small_tables() {
        let f = fisher_exact(&ContingencyTable::new(1, 0, 0, 1));
        assert_eq!(f.p_two_sided, 1.0);
        let f = fisher_exact(&ContingencyTable::new(10, 0, 0, 10));
        assert!((f.p_two_sided - 2.0 / 184_756.0).abs() < 1e-18);
        assert!((f.p_one_sided - 1.0 / 184_756.0).abs() < 1e-18);
        let f = fisher_exact(&ContingencyTable::new(3, 0, 4, 0));
        assert!(f.degenerate && f.p_two_sided == 1.0);
    }

    #[test]
    fn float_path_matches_rational_near_the_limit() {
        let t = ContingencyTable::new(30, 10, 25, 35);
        let (two, less, greater) = fisher_exact_rational(&t);
        let (ft, fl, fg) = fisher_float(&t);
        assert!((two.to_f64().unwrap() - ft).abs() < 1e-12);
        assert!((less.to_f64().unwrap() - fl).abs() < 1e-12);
        assert!((greater.to_f64().unwrap() - fg).abs() < 1e-12);
    }

    #[test]
    fn yeah_row() {
        let r = screen_row("yeah", &ContingencyTable::new(46, 0, 2069, 209));
        assert_eq!((r.with_accepted, r.with_total), (46, 46));
        assert_eq!((r.without_accepted, r.without_total), (2069, 2278));
        assert_eq!(r.direction, Direction::Persuasive);
        assert!((r.p_value - 0.012).abs() <= 0.002, "{}", r.p_value);
    }

    #[test]
    fn screen_drops_singletons_and_respects_alpha() {
        let mut docs: Vec<(Vec<String>, bool)> = (0..40).map(|i| (vec!["common".into()], i % 10 != 0)).collect();
        docs.push((vec!["rare".into(), "common".into()], true));
        let m = SuggestionMatrix::from_words(&docs);
        assert!(word_screen(&m, 0.05).iter().all(|r| r.word != "rare"));
        assert!(word_screen(&m, 0.0).is_empty());
    }

    #[test]
    fn lexicon_only_in_accepted() {
        let mut docs = Vec::new();
        for i in 0..100 {
            let acc = i < 50;
            let mut w = vec![format!("w{}", i % 7)];
            if acc {
                w.push("great".into());
            }
            docs.push((w, acc));
        }
        let m = SuggestionMatrix::from_words(&docs);
        let lex: HashSet<String> = ["great".to_string()].into();
        let f = aggregate_lexicon_test(&m, &lex).unwrap();
        assert_eq!(f.table, ContingencyTable::new(50, 0, 0, 50));
        assert!(f.p_two_sided < 1e-6);
        let disjoint: HashSet<String> = ["nothing".to_string()].into();
        assert!(aggregate_lexicon_test(&m, &disjoint).unwrap().degenerate);
    }
}

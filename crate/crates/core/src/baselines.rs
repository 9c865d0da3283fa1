//! Comparison models for template mining: a first-order Markov chain fit by
//! maximum likelihood, and a profile HMM whose per-match-state argmax gives a
//! fixed-length consensus string.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::{Alphabet, Sym};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MarkovChain {
    pub alphabet_len: usize,
    /// `counts[a][b]`: number of times `b` directly follows `a`.
    pub counts: Vec<Vec<u64>>,
    /// Row-normalized counts; `None` for labels never followed by anything.
    pub transition: Vec<Option<Vec<f64>>>,
}

impl MarkovChain {
    pub fn prob(&self, from: Sym, to: Sym) -> Option<f64> {
        self.transition[from.index()].as_ref().map(|r| r[to.index()])
    }

    pub fn total_bigrams(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Matrix as CSV; undefined rows are left blank.
    pub fn to_csv(&self, alphabet: &Alphabet) -> String {
        let mut out = String::from("from");
        for l in alphabet.labels() {
            let _ = write!(out, ",{l}");
        }
        out.push('\n');
        for (a, row) in self.transition.iter().enumerate() {
            out.push_str(alphabet.label(Sym(a as u16)).as_str());
            for b in 0..self.alphabet_len {
                match row {
                    Some(r) => {
                        let _ = write!(out, ",{}", r[b]);
                    }
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }

    /// Graphviz rendering with probability edge labels; zero-probability
    /// transitions are omitted.
    pub fn to_dot(&self, alphabet: &Alphabet) -> String {
        let mut out = String::from("digraph markov {\n");
        for l in alphabet.labels() {
            let _ = writeln!(out, "  \"{l}\";");
        }
        for (a, row) in self.transition.iter().enumerate() {
            let Some(row) = row else { continue };
            for (b, &p) in row.iter().enumerate() {
                if p > 0.0 {
                    let _ = writeln!(
                        out,
                        "  \"{}\" -> \"{}\" [label=\"{:.3}\"];",
                        alphabet.label(Sym(a as u16)),
                        alphabet.label(Sym(b as u16)),
                        p
                    );
                }
            }
        }
        out.push_str("}\n");
        out
    }
}

/// Maximum-likelihood transition estimates from bigram counts.
pub fn fit_markov(sequences: &[Vec<Sym>], alphabet_len: usize) -> Result<MarkovChain> {
    let mut counts = vec![vec![0u64; alphabet_len]; alphabet_len];
    for seq in sequences {
        for w in seq.windows(2) {
            if w[0].index() >= alphabet_len || w[1].index() >= alphabet_len {
                return Err(Error::invalid("label outside alphabet"));
            }
            counts[w[0].index()][w[1].index()] += 1;
        }
    }
    let transition: Vec<Option<Vec<f64>>> = counts
        .iter()
        .map(|row| {
            let total: u64 = row.iter().sum();
            (total > 0).then(|| row.iter().map(|&c| c as f64 / total as f64).collect())
        })
        .collect();
    if transition.iter().all(Option::is_none) {
        return Err(Error::Fit("no bigrams in the input sequences".into()));
    }
    Ok(MarkovChain {
        alphabet_len,
        counts,
        transition,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Transition {
    pub from: Sym,
    pub to: Sym,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopTransitions {
    pub transitions: Vec<Transition>,
    /// Set when fewer than `k` transitions carry probability mass.
    pub truncated: bool,
}

/// The `k` most probable defined transitions, ties broken by `(from, to)`.
/// Zero-probability entries are not transitions.
pub fn top_transitions(chain: &MarkovChain, k: usize) -> Result<TopTransitions> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let mut all: Vec<Transition> = chain
        .transition
        .iter()
        .enumerate()
        .filter_map(|(a, row)| row.as_ref().map(|r| (a, r)))
        .flat_map(|(a, r)| {
            r.iter().enumerate().filter(|(_, &p)| p > 0.0).map(move |(b, &p)| Transition {
                from: Sym(a as u16),
                to: Sym(b as u16),
                probability: p,
            })
        })
        .collect();
    all.sort_by(|x, y| {
        y.probability
            .total_cmp(&x.probability)
            .then(x.from.cmp(&y.from))
            .then(x.to.cmp(&y.to))
    });
    let truncated = all.len() < k;
    all.truncate(k);
    Ok(TopTransitions {
        transitions: all,
        truncated,
    })
}

/// Profile HMM with `length` match states, `length + 1` insert states and
/// `length` delete states between silent begin and end states.
///
/// Transition rows are indexed by column `k = 0..=length` (column 0 is the
/// begin state standing in for `M_0`) and ordered `[to M_{k+1}, to I_k, to
/// D_{k+1}]`; in the last column "to M" means "to end" and the delete entry
/// is unused (always 0).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileHmm {
    pub length: usize,
    pub alphabet_len: usize,
    pub pseudocount: f64,
    /// `match_emissions[k-1]` for match state `M_k`.
    pub match_emissions: Vec<Vec<f64>>,
    /// `insert_emissions[k]` for insert state `I_k`.
    pub insert_emissions: Vec<Vec<f64>>,
    pub match_transitions: Vec<[f64; 3]>,
    pub insert_transitions: Vec<[f64; 3]>,
    /// Entry 0 is unused (there is no `D_0`).
    pub delete_transitions: Vec<[f64; 3]>,
    /// Penalized log-likelihood after each EM iteration.
    pub objective_history: Vec<f64>,
    /// Plain data log-likelihood after each EM iteration.
    pub loglik_history: Vec<f64>,
}

// State numbering used by the dynamic programs, in column-major topological order.
#[derive(Clone, Copy)]
enum Kind {
    Begin,
    Match(usize),
    Insert(usize),
    Delete,
    End,
}

struct Layout {
    len: usize,
}

impl Layout {
    // Column k holds M_k (or Begin for k = 0), I_k, D_k (absent for k = 0).
    fn num_states(&self) -> usize {
        3 * (self.len + 1) + 1
    }
    fn m(&self, k: usize) -> usize {
        3 * k
    }
    fn i(&self, k: usize) -> usize {
        3 * k + 1
    }
    fn d(&self, k: usize) -> usize {
        3 * k + 2
    }
    fn end(&self) -> usize {
        3 * (self.len + 1)
    }
    fn kind(&self, s: usize) -> Option<Kind> {
        if s == self.end() {
            return Some(Kind::End);
        }
        let (k, r) = (s / 3, s % 3);
        match (k, r) {
            (0, 0) => Some(Kind::Begin),
            (0, 2) => None,
            (_, 0) => Some(Kind::Match(k)),
            (_, 1) => Some(Kind::Insert(k)),
            _ => Some(Kind::Delete),
        }
    }
}

const NEG_INF: f64 = f64::NEG_INFINITY;

fn lse(a: f64, b: f64) -> f64 {
    if a == NEG_INF {
        return b;
    }
    if b == NEG_INF {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

struct Edge {
    from: usize,
    to: usize,
    // (row kind 0=M/Begin,1=I,2=D; column; slot)
    param: (usize, usize, usize),
}

impl ProfileHmm {
    fn layout(&self) -> Layout {
        Layout { len: self.length }
    }

    fn edges(&self) -> Vec<Edge> {
        let lay = self.layout();
        let l = self.length;
        let mut e = Vec::new();
        for k in 0..=l {
            let sources = [(0usize, lay.m(k)), (1, lay.i(k)), (2, lay.d(k))];
            for (row, src) in sources {
                if row == 2 && k == 0 {
                    continue;
                }
                let to_m = if k == l { lay.end() } else { lay.m(k + 1) };
                e.push(Edge { from: src, to: to_m, param: (row, k, 0) });
                e.push(Edge { from: src, to: lay.i(k), param: (row, k, 1) });
                if k < l {
                    e.push(Edge { from: src, to: lay.d(k + 1), param: (row, k, 2) });
                }
            }
        }
        e
    }

    fn trans(&self, p: (usize, usize, usize)) -> f64 {
        let rows = match p.0 {
            0 => &self.match_transitions,
            1 => &self.insert_transitions,
            _ => &self.delete_transitions,
        };
        rows[p.1][p.2]
    }

    fn emission(&self, s: usize, x: Sym) -> Option<f64> {
        match self.layout().kind(s)? {
            Kind::Match(k) => Some(self.match_emissions[k - 1][x.index()]),
            Kind::Insert(k) => Some(self.insert_emissions[k][x.index()]),
            _ => None,
        }
    }

    fn is_emitting(&self, s: usize) -> bool {
        matches!(self.layout().kind(s), Some(Kind::Match(_)) | Some(Kind::Insert(_)))
    }

    /// Forward log-probabilities `f[i][s]` (i symbols consumed, in state s).
    fn forward(&self, seq: &[Sym], edges: &[Edge]) -> Vec<Vec<f64>> {
        let lay = self.layout();
        let ns = lay.num_states();
        let mut f = vec![vec![NEG_INF; ns]; seq.len() + 1];
        f[0][lay.m(0)] = 0.0;
        // edges are grouped by source column so a single ordered pass per
        // position respects silent-state dependencies.
        for i in 0..=seq.len() {
            if i > 0 {
                for e in edges.iter() {
                    if self.is_emitting(e.to) {
                        let src = f[i - 1][e.from];
                        if src > NEG_INF {
                            let w = self.trans(e.param).ln() + self.emission(e.to, seq[i - 1]).unwrap().ln();
                            f[i][e.to] = lse(f[i][e.to], src + w);
                        }
                    }
                }
            }
            for e in edges.iter() {
                if !self.is_emitting(e.to) {
                    let src = f[i][e.from];
                    if src > NEG_INF {
                        f[i][e.to] = lse(f[i][e.to], src + self.trans(e.param).ln());
                    }
                }
            }
        }
        f
    }

    fn backward(&self, seq: &[Sym], edges: &[Edge]) -> Vec<Vec<f64>> {
        let lay = self.layout();
        let ns = lay.num_states();
        let n = seq.len();
        let mut b = vec![vec![NEG_INF; ns]; n + 1];
        b[n][lay.end()] = 0.0;
        for i in (0..=n).rev() {
            // Edges into emitting states read row i+1, which is complete.
            // Edges into silent states read row i; walking edges in reverse
            // column order finalizes each silent target before its sources.
            for e in edges.iter().rev() {
                let w = if self.is_emitting(e.to) {
                    if i == n {
                        continue;
                    }
                    let t = b[i + 1][e.to];
                    if t == NEG_INF {
                        continue;
                    }
                    t + self.trans(e.param).ln() + self.emission(e.to, seq[i]).unwrap().ln()
                } else {
                    let t = b[i][e.to];
                    if t == NEG_INF {
                        continue;
                    }
                    t + self.trans(e.param).ln()
                };
                b[i][e.from] = lse(b[i][e.from], w);
            }
        }
        b
    }

    /// Log-probability of `seq` under the model.
    pub fn log_likelihood(&self, seq: &[Sym]) -> f64 {
        let edges = self.edges();
        let f = self.forward(seq, &edges);
        f[seq.len()][self.layout().end()]
    }

    fn log_prior(&self) -> f64 {
        let pc = self.pseudocount;
        let mut total = 0.0;
        let mut add = |v: &[f64]| {
            for &p in v {
                if p > 0.0 {
                    total += pc * p.ln();
                }
            }
        };
        for e in self.match_emissions.iter().chain(&self.insert_emissions) {
            add(e);
        }
        for (k, r) in self.match_transitions.iter().enumerate() {
            add(&r[..self.slots(k)]);
        }
        for (k, r) in self.insert_transitions.iter().enumerate() {
            add(&r[..self.slots(k)]);
        }
        for (k, r) in self.delete_transitions.iter().enumerate().skip(1) {
            add(&r[..self.slots(k)]);
        }
        total
    }

    fn slots(&self, k: usize) -> usize {
        if k == self.length {
            2
        } else {
            3
        }
    }
}

fn normalize(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
}

/// Fits a profile HMM by EM with pseudocounts added to every expected count.
///
/// Initial emissions come from spreading each sequence evenly over the match
/// states, blended with uniform and lightly jittered by `seed`.
pub fn fit_profile_hmm(
    sequences: &[Vec<Sym>],
    alphabet_len: usize,
    length: usize,
    pseudocount: f64,
    iterations: usize,
    seed: u64,
) -> Result<ProfileHmm> {
    if sequences.is_empty() || sequences.iter().all(|s| s.is_empty()) {
        return Err(Error::Fit("no sequences to fit".into()));
    }
    if length == 0 {
        return Err(Error::invalid("profile length must be at least 1"));
    }
    if !(pseudocount > 0.0 && pseudocount.is_finite()) {
        return Err(Error::invalid("pseudocount must be positive"));
    }
    if alphabet_len == 0 || sequences.iter().flatten().any(|s| s.index() >= alphabet_len) {
        return Err(Error::invalid("label outside alphabet"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = alphabet_len;

    let mut match_counts = vec![vec![0.0f64; a]; length];
    for seq in sequences.iter().filter(|s| !s.is_empty()) {
        for (j, s) in seq.iter().enumerate() {
            let k = j * length / seq.len();
            match_counts[k][s.index()] += 1.0 / sequences.len() as f64;
        }
    }
    let match_emissions = match_counts
        .iter()
        .map(|row| {
            let mut v: Vec<f64> = row
                .iter()
                .map(|&c| 0.5 * c + 0.5 / a as f64 + 0.01 * rng.random::<f64>() / a as f64 + pseudocount * 1e-3)
                .collect();
            normalize(&mut v);
            v
        })
        .collect();
    let insert_emissions = vec![vec![1.0 / a as f64; a]; length + 1];
    let row = |main: f64, k: usize| -> [f64; 3] {
        if k == length {
            [main, 1.0 - main, 0.0]
        } else {
            let rest = (1.0 - main) / 2.0;
            [main, rest, rest]
        }
    };
    let mut model = ProfileHmm {
        length,
        alphabet_len: a,
        pseudocount,
        match_emissions,
        insert_emissions,
        match_transitions: (0..=length).map(|k| row(0.9, k)).collect(),
        insert_transitions: (0..=length).map(|k| row(0.5, k)).collect(),
        delete_transitions: (0..=length).map(|k| row(0.5, k)).collect(),
        objective_history: Vec::new(),
        loglik_history: Vec::new(),
    };

    let lay = model.layout();
    for _ in 0..iterations {
        let edges = model.edges();
        let mut em_m = vec![vec![0.0; a]; length];
        let mut em_i = vec![vec![0.0; a]; length + 1];
        let mut tr = [
            vec![[0.0f64; 3]; length + 1],
            vec![[0.0f64; 3]; length + 1],
            vec![[0.0f64; 3]; length + 1],
        ];
        for seq in sequences {
            let f = model.forward(seq, &edges);
            let b = model.backward(seq, &edges);
            let total = f[seq.len()][lay.end()];
            if total == NEG_INF {
                continue;
            }
            for i in 1..=seq.len() {
                let x = seq[i - 1].index();
                for k in 1..=length {
                    let s = lay.m(k);
                    em_m[k - 1][x] += (f[i][s] + b[i][s] - total).exp();
                }
                for k in 0..=length {
                    let s = lay.i(k);
                    em_i[k][x] += (f[i][s] + b[i][s] - total).exp();
                }
            }
            for e in &edges {
                let t = model.trans(e.param).ln();
                let mut acc = 0.0;
                if model.is_emitting(e.to) {
                    for i in 0..seq.len() {
                        let em = model.emission(e.to, seq[i]).unwrap().ln();
                        acc += (f[i][e.from] + t + em + b[i + 1][e.to] - total).exp();
                    }
                } else {
                    for i in 0..=seq.len() {
                        acc += (f[i][e.from] + t + b[i][e.to] - total).exp();
                    }
                }
                tr[e.param.0][e.param.1][e.param.2] += acc;
            }
        }
        let smooth = |counts: &[f64]| -> Vec<f64> {
            let mut v: Vec<f64> = counts.iter().map(|c| c + pseudocount).collect();
            normalize(&mut v);
            v
        };
        model.match_emissions = em_m.iter().map(|r| smooth(r)).collect();
        model.insert_emissions = em_i.iter().map(|r| smooth(r)).collect();
        for (which, rows) in tr.iter().enumerate() {
            for k in 0..=length {
                if which == 2 && k == 0 {
                    continue;
                }
                let n = model.slots(k);
                let p = smooth(&rows[k][..n]);
                let mut out = [0.0; 3];
                out[..n].copy_from_slice(&p);
                match which {
                    0 => model.match_transitions[k] = out,
                    1 => model.insert_transitions[k] = out,
                    _ => model.delete_transitions[k] = out,
                }
            }
        }
        let ll: f64 = sequences.iter().map(|s| model.log_likelihood(s)).sum();
        model.loglik_history.push(ll);
        model.objective_history.push(ll + model.log_prior());
    }
    Ok(model)
}

/// Most likely label of each match state; ties go to the earlier label.
pub fn consensus_string(model: &ProfileHmm) -> Vec<Sym> {
    model
        .match_emissions
        .iter()
        .map(|row| {
            let mut best = 0;
            for (i, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = i;
                }
            }
            Sym(best as u16)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn syms(s: &str) -> Vec<Sym> {
        s.bytes().map(|b| Sym((b - b'A') as u16)).collect()
    }

    #[test]
    fn markov_alternating() {
        let c = fit_markov(&[syms("ABAB")], 2).unwrap();
        assert_eq!(c.counts, vec![vec![0, 2], vec![1, 0]]);
        assert_eq!(c.prob(Sym(0), Sym(1)), Some(1.0));
        assert_eq!(c.prob(Sym(1), Sym(0)), Some(1.0));
    }

    #[test]
    fn markov_undefined_rows() {
        let c = fit_markov(&[syms("AA")], 2).unwrap();
        assert_eq!(c.prob(Sym(0), Sym(0)), Some(1.0));
        assert_eq!(c.prob(Sym(1), Sym(0)), None);
        assert!(c.to_csv(&Alphabet::new(["A", "B"]).unwrap()).contains("\nB,,\n"));
    }

    #[test]
    fn markov_needs_bigrams() {
        assert!(matches!(fit_markov(&[syms("A"), vec![]], 2), Err(Error::Fit(_))));
    }

    #[test]
    fn top_transitions_ordering() {
        let c = fit_markov(&[syms("ABACAB")], 3).unwrap();
        // A→B 2/3, A→C 1/3, B→A 1, C→A 1
        let top = top_transitions(&c, 2).unwrap();
        let pairs: Vec<(Sym, Sym)> = top.transitions.iter().map(|t| (t.from, t.to)).collect();
        assert_eq!(pairs, vec![(Sym(1), Sym(0)), (Sym(2), Sym(0))]);
        assert!(!top.truncated);
        let all = top_transitions(&c, 10).unwrap();
        assert_eq!(all.transitions.len(), 4);
        assert!(all.truncated);
        let single = fit_markov(&[syms("AB")], 2).unwrap();
        let one = top_transitions(&single, 1).unwrap();
        assert_eq!(one.transitions[0].from, Sym(0));
        assert_eq!(one.transitions[0].to, Sym(1));
    }

    #[test]
    fn phmm_consensus_of_identical_sequences() {
        let seqs: Vec<Vec<Sym>> = (0..10).map(|_| vec![Sym(0), Sym(2), Sym(2)]).collect();
        let m = fit_profile_hmm(&seqs, 4, 3, 0.1, 20, 1).unwrap();
        assert_eq!(consensus_string(&m), vec![Sym(0), Sym(2), Sym(2)]);
    }

    #[test]
    fn phmm_singleton_fixed_point() {
        let s = syms("ABCDBA");
        let m = fit_profile_hmm(&[s.clone()], 4, s.len(), 0.01, 50, 3).unwrap();
        assert_eq!(consensus_string(&m), s);
    }

    #[test]
    fn phmm_prior_dominates() {
        let m = fit_profile_hmm(&[syms("ABCA"), syms("CAB")], 3, 3, 1e9, 3, 0).unwrap();
        for row in m.match_emissions.iter().chain(&m.insert_emissions) {
            for &p in row {
                assert!((p - 1.0 / 3.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn phmm_probabilities_normalized() {
        let m = fit_profile_hmm(&[syms("ABCAB"), syms("ACB"), syms("BBCA")], 3, 4, 0.5, 10, 2).unwrap();
        for row in m.match_emissions.iter().chain(&m.insert_emissions) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        for k in 0..=4 {
            let n = m.slots(k);
            assert!((m.match_transitions[k][..n].iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!((m.insert_transitions[k][..n].iter().sum::<f64>() - 1.0).abs() < 1e-9);
            if k > 0 {
                assert!((m.delete_transitions[k][..n].iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
        assert_eq!(consensus_string(&m).len(), 4);
    }

    #[test]
    fn phmm_likelihood_sums_to_one_over_short_strings() {
        // With a one-state profile the probability of all strings of length
        // 0..=N converges to 1 as N grows.
        let m = fit_profile_hmm(&[syms("AB")], 2, 1, 1.0, 2, 0).unwrap();
        let mut total = 0.0;
        let mut frontier: Vec<Vec<Sym>> = vec![vec![]];
        for _ in 0..=24 {
            total += frontier.iter().map(|s| m.log_likelihood(s).exp()).sum::<f64>();
            frontier = frontier
                .into_iter()
                .flat_map(|s| {
                    (0..2u16).map(move |c| {
                        let mut t = s.clone();
                        t.push(Sym(c));
                        t
                    })
                })
                .take(1 << 16)
                .collect();
            if frontier.len() >= 1 << 16 {
                break;
            }
        }
        assert!(total > 0.9 && total <= 1.0 + 1e-9, "{total}");
    }

    #[test]
    fn phmm_rejects_bad_input() {
        assert!(matches!(fit_profile_hmm(&[], 2, 2, 1.0, 1, 0), Err(Error::Fit(_))));
        assert!(fit_profile_hmm(&[syms("AB")], 2, 0, 1.0, 1, 0).is_err());
        assert!(fit_profile_hmm(&[syms("AB")], 2, 2, 0.0, 1, 0).is_err());
    }
}

//! Templates, their instantiations, the edit-distance loss and the
//! regularized mining objective.
//!
//! A template is a chain of labeled nodes `0 → 1 → … → n-1` plus a set of
//! backward edges `(from, to)` with `to < from`. An instantiation is any walk
//! of at least one node, starting and ending anywhere.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{Alphabet, Sym};
use crate::error::{Error, Result};

/// Default cap on instantiation length for [`enumerate_instantiations`].
pub const DEFAULT_ENUMERATION_CAP: usize = 12;

/// Default relative length window for [`LossMode::Windowed`].
pub const DEFAULT_WINDOW: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Template {
    nodes: Vec<Sym>,
    back_edges: BTreeSet<(usize, usize)>,
    // back_targets[v] lists `to` for every back edge leaving v, ascending.
    back_targets: Vec<Vec<usize>>,
}

impl Template {
    pub fn new(nodes: Vec<Sym>, back_edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let n = nodes.len();
        let mut set = BTreeSet::new();
        for (from, to) in back_edges {
            if from >= n || to >= from {
                return Err(Error::invalid(format!(
                    "back edge ({from}, {to}) invalid for {n} nodes"
                )));
            }
            if !set.insert((from, to)) {
                return Err(Error::invalid(format!("duplicate back edge ({from}, {to})")));
            }
        }
        Ok(Self::from_parts(nodes, set))
    }

    pub(crate) fn from_parts(nodes: Vec<Sym>, back_edges: BTreeSet<(usize, usize)>) -> Self {
        let mut back_targets = vec![Vec::new(); nodes.len()];
        for &(from, to) in &back_edges {
            back_targets[from].push(to);
        }
        Template {
            nodes,
            back_edges,
            back_targets,
        }
    }

    /// A forward chain with no back edges.
    pub fn chain(nodes: Vec<Sym>) -> Self {
        Self::from_parts(nodes, BTreeSet::new())
    }

    /// The template with no nodes. It only exists for counting; it has no
    /// instantiations and is rejected by the loss.
    pub fn empty() -> Self {
        Self::chain(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Sym] {
        &self.nodes
    }

    pub fn back_edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.back_edges
    }

    pub fn num_back_edges(&self) -> usize {
        self.back_edges.len()
    }

    pub fn satisfies_caps(&self, max_len: usize, max_back: usize) -> bool {
        self.len() <= max_len && self.num_back_edges() <= max_back
    }

    /// Nodes reachable in one step from `v`, ascending.
    ///
    /// # Panics
    /// If `v` is not a node index.
    pub fn successors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        assert!(v < self.len(), "node {v} out of range for {} nodes", self.len());
        let fwd = (v + 1 < self.len()).then_some(v + 1);
        self.back_targets[v].iter().copied().chain(fwd)
    }

    pub fn with_back_edge(&self, from: usize, to: usize) -> Result<Self> {
        let mut edges = self.back_edges.clone();
        edges.insert((from, to));
        Template::new(self.nodes.clone(), edges)
    }

    pub fn labels_of(&self, path: &[usize]) -> Vec<Sym> {
        path.iter().map(|&v| self.nodes[v]).collect()
    }

    pub fn to_json(&self, alphabet: &Alphabet) -> TemplateJson {
        TemplateJson {
            nodes: alphabet.decode(&self.nodes).into_iter().map(String::from).collect(),
            back_edges: self.back_edges.iter().map(|&(a, b)| [a, b]).collect(),
        }
    }

    pub fn from_json(json: &TemplateJson, alphabet: &Alphabet) -> Result<Self> {
        let nodes = alphabet.encode(&json.nodes)?;
        Template::new(nodes, json.back_edges.iter().map(|e| (e[0], e[1])))
    }

    /// Graphviz rendering: forward edges solid, backward edges dashed.
    pub fn to_dot(&self, alphabet: &Alphabet) -> String {
        let mut out = String::from("digraph template {\n  rankdir=LR;\n");
        for (i, &s) in self.nodes.iter().enumerate() {
            let _ = writeln!(out, "  n{i} [label=\"{}\"];", alphabet.label(s));
        }
        for i in 1..self.len() {
            let _ = writeln!(out, "  n{} -> n{i};", i - 1);
        }
        for &(from, to) in &self.back_edges {
            let _ = writeln!(out, "  n{from} -> n{to} [style=dashed];");
        }
        out.push_str("}\n");
        out
    }

    /// Every label sequence of 1..=`max_len` nodes this template can emit.
    pub fn language(&self, max_len: usize) -> BTreeSet<Vec<Sym>> {
        let mut out = BTreeSet::new();
        if self.is_empty() || max_len == 0 {
            return out;
        }
        // Frontier of (label sequence, end node), deduplicated per length.
        let mut frontier: HashSet<(Vec<Sym>, usize)> =
            (0..self.len()).map(|v| (vec![self.nodes[v]], v)).collect();
        for len in 1..=max_len {
            out.extend(frontier.iter().map(|(s, _)| s.clone()));
            if len == max_len {
                break;
            }
            let mut next = HashSet::new();
            for (seq, v) in &frontier {
                for u in self.successors(*v) {
                    let mut s = seq.clone();
                    s.push(self.nodes[u]);
                    next.insert((s, u));
                }
            }
            frontier = next;
        }
        out
    }

    /// Equal instantiation-label sets up to length `cap`.
    pub fn equivalent(&self, other: &Template, cap: usize) -> bool {
        self.language(cap) == other.language(cap)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateJson {
    pub nodes: Vec<String>,
    pub back_edges: Vec<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instantiation {
    pub path: Vec<usize>,
    pub labels: Vec<Sym>,
}

/// All walks with `min_len..=max_len` nodes, in lexicographic path order.
pub fn enumerate_instantiations(
    template: &Template,
    min_len: usize,
    max_len: usize,
) -> Result<Vec<Instantiation>> {
    enumerate_instantiations_capped(template, min_len, max_len, DEFAULT_ENUMERATION_CAP)
}

pub fn enumerate_instantiations_capped(
    template: &Template,
    min_len: usize,
    max_len: usize,
    cap: usize,
) -> Result<Vec<Instantiation>> {
    if min_len == 0 || min_len > max_len {
        return Err(Error::invalid("need 1 <= min_len <= max_len"));
    }
    if max_len > cap {
        return Err(Error::Refused(format!(
            "max_len {max_len} exceeds enumeration cap {cap}"
        )));
    }
    fn walk(t: &Template, path: &mut Vec<usize>, lo: usize, hi: usize, out: &mut Vec<Instantiation>) {
        if path.len() >= lo {
            out.push(Instantiation {
                labels: t.labels_of(path),
                path: path.clone(),
            });
        }
        if path.len() == hi {
            return;
        }
        let v = *path.last().unwrap();
        let mut next: Vec<usize> = t.successors(v).collect();
        next.sort_unstable();
        for u in next {
            path.push(u);
            walk(t, path, lo, hi, out);
            path.pop();
        }
    }
    let mut out = Vec::new();
    for start in 0..template.len() {
        walk(template, &mut vec![start], min_len, max_len, &mut out);
    }
    Ok(out)
}

/// Levenshtein distance with unit insertion, deletion and substitution costs.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossMode {
    /// Minimum over every instantiation length.
    Exact,
    /// Minimum over instantiations whose length is within `ceil(delta·|x|)`
    /// of the meeting length.
    Windowed { delta: f64 },
}

impl Default for LossMode {
    fn default() -> Self {
        LossMode::Exact
    }
}

/// Minimum edit distance between `seq` and any instantiation of `template`.
///
/// # Panics
/// If the template is empty.
pub fn loss(template: &Template, seq: &[Sym], mode: LossMode) -> usize {
    assert!(!template.is_empty(), "loss of an empty template is undefined");
    match mode {
        LossMode::Exact => exact_loss(template, seq),
        LossMode::Windowed { delta } => {
            let w = (delta.max(0.0) * seq.len() as f64).ceil() as usize;
            let lo = seq.len().saturating_sub(w).max(1);
            windowed_loss(template, seq, lo, (seq.len() + w).max(lo))
        }
    }
}

// Shortest path over (meeting position, template node) with unit costs for
// mismatch, skipped meeting symbols and extra template nodes.
fn exact_loss(t: &Template, seq: &[Sym]) -> usize {
    let n = t.len();
    let inf = usize::MAX / 4;
    // prev[v]: best cost with x[..i] consumed and the walk currently at v.
    let mut prev = vec![1usize; n];
    relax_layer(t, &mut prev);
    let mut cur = vec![inf; n];
    for (i, &x) in seq.iter().enumerate() {
        // Cost of not having started yet: all of x[..i] skipped.
        let unstarted = i;
        for v in 0..n {
            let mis = usize::from(t.nodes[v] != x);
            cur[v] = (unstarted + mis).min(prev[v] + 1);
        }
        for v in 0..n {
            let base = prev[v];
            for u in t.successors(v) {
                let c = base + usize::from(t.nodes[u] != x);
                if c < cur[u] {
                    cur[u] = c;
                }
            }
        }
        relax_layer(t, &mut cur);
        std::mem::swap(&mut prev, &mut cur);
    }
    prev.into_iter().min().unwrap()
}

// Within one meeting position, moving along an edge without consuming input
// costs 1. Forward edges go up in index, back edges down, so alternate sweeps
// converge quickly.
fn relax_layer(t: &Template, d: &mut [usize]) {
    loop {
        let mut changed = false;
        for v in 0..t.len() {
            let c = d[v] + 1;
            for u in t.successors(v) {
                if c < d[u] {
                    d[u] = c;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
}

// Edit-distance DP over walks, one layer per walk length.
fn windowed_loss(t: &Template, seq: &[Sym], min_len: usize, max_len: usize) -> usize {
    let n = t.len();
    let m = seq.len();
    let inf = usize::MAX / 4;
    // layer[v][i]: cost of aligning x[..i] to a walk of the current length ending at v.
    let mut layer: Vec<Vec<usize>> = vec![vec![inf; m + 1]; n];
    for (v, row) in layer.iter_mut().enumerate() {
        row[0] = 1;
        for i in 1..=m {
            let mis = usize::from(t.nodes[v] != seq[i - 1]);
            row[i] = (i - 1 + mis).min(i + 1).min(row[i - 1] + 1);
        }
    }
    let mut best = inf;
    let mut len = 1;
    loop {
        if len >= min_len {
            for row in &layer {
                best = best.min(row[m]);
            }
        }
        if len == max_len {
            break;
        }
        let mut next = vec![vec![inf; m + 1]; n];
        for v in 0..n {
            for u in t.successors(v) {
                let src = &layer[v];
                let dst = &mut next[u];
                for i in 0..=m {
                    let mut c = src[i] + 1;
                    if i > 0 {
                        c = c.min(src[i - 1] + usize::from(t.nodes[u] != seq[i - 1]));
                    }
                    if c < dst[i] {
                        dst[i] = c;
                    }
                }
            }
        }
        for row in &mut next {
            for i in 1..=m {
                if row[i - 1] + 1 < row[i] {
                    row[i] = row[i - 1] + 1;
                }
            }
        }
        layer = next;
        len += 1;
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveParams {
    /// Cost per template node.
    pub c1: f64,
    /// Cost per backward edge.
    pub c2: f64,
}

impl Default for ObjectiveParams {
    fn default() -> Self {
        ObjectiveParams { c1: 1.0, c2: 0.1 }
    }
}

/// Mean loss over the meetings.
pub fn empirical_risk(template: &Template, meetings: &[Vec<Sym>], mode: LossMode) -> Result<f64> {
    if meetings.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if template.is_empty() {
        return Err(Error::invalid("template must be nonempty"));
    }
    let total: usize = meetings.iter().map(|x| loss(template, x, mode)).sum();
    Ok(total as f64 / meetings.len() as f64)
}

/// Mean loss plus `c1·nodes + c2·back_edges`.
pub fn objective(
    template: &Template,
    meetings: &[Vec<Sym>],
    params: ObjectiveParams,
    mode: LossMode,
) -> Result<f64> {
    let risk = empirical_risk(template, meetings, mode)?;
    Ok(risk + params.c1 * template.len() as f64 + params.c2 * template.num_back_edges() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn syms(s: &str) -> Vec<Sym> {
        s.bytes().map(|b| Sym((b - b'A') as u16)).collect()
    }

    fn abc_cycle() -> Template {
        Template::new(syms("ABC"), [(2, 0)]).unwrap()
    }

    #[test]
    fn successors_follow_chain_and_back_edges() {
        let t = abc_cycle();
        assert_eq!(t.successors(2).collect::<Vec<_>>(), vec![0]);
        assert_eq!(t.successors(0).collect::<Vec<_>>(), vec![1]);
        let chain = Template::chain(syms("ABC"));
        assert_eq!(chain.successors(2).count(), 0);
    }

    #[test]
    #[should_panic]
    fn successors_out_of_range() {
        abc_cycle().successors(3).count();
    }

    #[test]
    fn rejects_bad_edges() {
        assert!(Template::new(syms("AB"), [(0, 1)]).is_err());
        assert!(Template::new(syms("AB"), [(1, 1)]).is_err());
        assert!(Template::new(syms("AB"), [(2, 0)]).is_err());
        assert!(Template::new(syms("AB"), [(1, 0), (1, 0)]).is_err());
    }

    #[test]
    fn enumerates_rotations() {
        let got: Vec<Vec<Sym>> = enumerate_instantiations(&abc_cycle(), 3, 3)
            .unwrap()
            .into_iter()
            .map(|i| i.labels)
            .collect();
        assert_eq!(got, vec![syms("ABC"), syms("BCA"), syms("CAB")]);
    }

    #[test]
    fn enumerates_short_chain() {
        let t = Template::chain(syms("AB"));
        let got: Vec<Vec<usize>> = enumerate_instantiations(&t, 1, 2)
            .unwrap()
            .into_iter()
            .map(|i| i.path)
            .collect();
        assert_eq!(got, vec![vec![0], vec![0, 1], vec![1]]);
        let single = Template::chain(syms("A"));
        assert_eq!(enumerate_instantiations(&single, 1, 1).unwrap().len(), 1);
    }

    #[test]
    fn enumeration_cap_refuses() {
        assert!(matches!(
            enumerate_instantiations(&abc_cycle(), 1, 13),
            Err(Error::Refused(_))
        ));
    }

    #[test]
    fn edit_distance_basics() {
        assert_eq!(edit_distance(&syms("ABC"), &syms("ABC")), 0);
        assert_eq!(edit_distance(&syms("AB"), &[]), 2);
        assert_eq!(edit_distance(&syms("ABC"), &syms("AXC")), 1);
        assert_eq!(edit_distance(b"kitten", b"sitting"), 3);
    }

    #[test]
    fn loss_of_exact_instantiations_is_zero() {
        let t = abc_cycle();
        for s in ["ABCABC", "BCABCA", "CAB", "A", "CABCABCA"] {
            assert_eq!(loss(&t, &syms(s), LossMode::Exact), 0, "{s}");
        }
        assert_eq!(loss(&t, &syms("ABCABC"), LossMode::Windowed { delta: 0.1 }), 0);
    }

    #[test]
    fn loss_with_one_substitution() {
        assert_eq!(loss(&abc_cycle(), &syms("AXC"), LossMode::Exact), 1);
    }

    #[test]
    fn empty_meeting_loss_is_one() {
        assert_eq!(loss(&abc_cycle(), &[], LossMode::Exact), 1);
        assert_eq!(loss(&abc_cycle(), &[], LossMode::Windowed { delta: 0.1 }), 1);
    }

    #[test]
    #[should_panic]
    fn empty_template_loss_panics() {
        loss(&Template::empty(), &syms("A"), LossMode::Exact);
    }

    #[test]
    fn windowed_never_below_exact() {
        // A 2-node chain cannot emit 6 symbols, so the window forces extra cost.
        let t = Template::chain(syms("AB"));
        let x = syms("ABABAB");
        let exact = loss(&t, &x, LossMode::Exact);
        let win = loss(&t, &x, LossMode::Windowed { delta: 0.1 });
        assert_eq!(exact, 4);
        assert!(win >= exact);
    }

    #[test]
    fn objective_of_cycle_corpus() {
        let meetings = vec![syms("ABCABC"), syms("CAB")];
        let f = objective(&abc_cycle(), &meetings, ObjectiveParams::default(), LossMode::Exact).unwrap();
        assert!((f - 3.1).abs() < 1e-12);
        let zero = ObjectiveParams { c1: 0.0, c2: 0.0 };
        let meetings = vec![syms("ABXABC"), syms("CB")];
        let f0 = objective(&abc_cycle(), &meetings, zero, LossMode::Exact).unwrap();
        let r = empirical_risk(&abc_cycle(), &meetings, LossMode::Exact).unwrap();
        assert_eq!(f0, r);
    }

    #[test]
    fn unused_back_edge_costs_exactly_c2() {
        let meetings = vec![syms("ABCABC"), syms("CAB")];
        let p = ObjectiveParams::default();
        let t = abc_cycle();
        let t2 = t.with_back_edge(1, 0).unwrap();
        let f = objective(&t, &meetings, p, LossMode::Exact).unwrap();
        let f2 = objective(&t2, &meetings, p, LossMode::Exact).unwrap();
        assert!((f2 - f - p.c2).abs() < 1e-12);
    }

    #[test]
    fn language_and_equivalence() {
        let t = abc_cycle();
        let lang = t.language(2);
        let expect: BTreeSet<Vec<Sym>> = ["A", "B", "C", "AB", "BC", "CA"].iter().map(|s| syms(s)).collect();
        assert_eq!(lang, expect);
        assert!(t.equivalent(&t.clone(), 8));
        // Same cycle written from another starting node.
        let rotated = Template::new(syms("BCA"), [(2, 0)]).unwrap();
        assert!(t.equivalent(&rotated, 8));
        assert!(!t.equivalent(&Template::chain(syms("ABC")), 8));
    }

    #[test]
    fn json_and_dot() {
        let a = Alphabet::new(["A", "B", "C"]).unwrap();
        let t = abc_cycle();
        let j = t.to_json(&a);
        assert_eq!(serde_json::to_string(&j).unwrap(), r#"{"nodes":["A","B","C"],"back_edges":[[2,0]]}"#);
        assert_eq!(Template::from_json(&j, &a).unwrap(), t);
        let dot = t.to_dot(&a);
        assert!(dot.contains("n2 -> n0 [style=dashed]"));
        assert!(dot.contains("n0 -> n1;"));
    }
}

//! Simulated annealing over templates.
//!
//! Moves are single edits of the template graph (insert a node, delete a
//! node, add a back edge, remove a back edge), each kind equally likely among
//! those feasible. The iteration counter advances only on acceptance; every
//! `k_restart` accepted steps the chain jumps back to the best template seen
//! and the temperature returns to `t0`.

use std::collections::{BTreeSet, HashMap};
use std::fmt::{self, Write as _};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Sym;
use crate::error::{Error, Result};
use crate::template::{objective, LossMode, ObjectiveParams, Template};

/// Language length used to decide whether two templates are equivalent.
pub const DEFAULT_EQUIVALENCE_CAP: usize = 8;

const CACHE_LIMIT: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnealConfig {
    pub t0: f64,
    pub cool: f64,
    pub k_restart: usize,
    pub max_accepted: usize,
    pub max_proposals: usize,
    pub max_len: usize,
    pub max_back: usize,
    pub params: ObjectiveParams,
    #[serde(skip, default)]
    pub loss_mode: LossMode,
    pub seed: u64,
}

impl Default for AnnealConfig {
    fn default() -> Self {
        AnnealConfig {
            t0: 1000.0,
            cool: 0.95,
            k_restart: 800,
            max_accepted: 4000,
            max_proposals: 40_000,
            max_len: 20,
            max_back: 5,
            params: ObjectiveParams::default(),
            loss_mode: LossMode::Exact,
            seed: 0,
        }
    }
}

impl AnnealConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t0 > 0.0 && self.t0.is_finite()) {
            return Err(Error::invalid("t0 must be positive"));
        }
        if !(self.cool > 0.0 && self.cool < 1.0) {
            return Err(Error::invalid("cool must lie in (0, 1)"));
        }
        if self.k_restart == 0 || self.max_accepted == 0 || self.max_proposals == 0 || self.max_len == 0 {
            return Err(Error::invalid("caps must be positive"));
        }
        if self.params.c1 < 0.0 || self.params.c2 < 0.0 {
            return Err(Error::invalid("objective weights must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MoveKind {
    InsertNode,
    DeleteNode,
    AddBackEdge,
    RemoveBackEdge,
}

impl MoveKind {
    pub const ALL: [MoveKind; 4] = [
        MoveKind::InsertNode,
        MoveKind::DeleteNode,
        MoveKind::AddBackEdge,
        MoveKind::RemoveBackEdge,
    ];

    fn feasible(self, t: &Template, max_len: usize, max_back: usize) -> bool {
        let n = t.len();
        let b = t.num_back_edges();
        match self {
            MoveKind::InsertNode => n < max_len,
            MoveKind::DeleteNode => n > 1,
            MoveKind::AddBackEdge => b < max_back && b < n * n.saturating_sub(1) / 2,
            MoveKind::RemoveBackEdge => b > 0,
        }
    }
}

impl fmt::Display for MoveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MoveKind::InsertNode => "insert-node",
            MoveKind::DeleteNode => "delete-node",
            MoveKind::AddBackEdge => "add-back-edge",
            MoveKind::RemoveBackEdge => "remove-back-edge",
        })
    }
}

/// Inserts a node labeled `label` so that it ends up at index `pos`.
pub fn insert_node(t: &Template, pos: usize, label: Sym) -> Template {
    let mut nodes = t.nodes().to_vec();
    nodes.insert(pos, label);
    let shift = |i: usize| if i >= pos { i + 1 } else { i };
    let edges = t.back_edges().iter().map(|&(a, b)| (shift(a), shift(b))).collect();
    Template::from_parts(nodes, edges)
}

/// Removes node `pos`, dropping its back edges and renumbering the rest.
pub fn delete_node(t: &Template, pos: usize) -> Template {
    let mut nodes = t.nodes().to_vec();
    nodes.remove(pos);
    let shift = |i: usize| if i > pos { i - 1 } else { i };
    let edges = t
        .back_edges()
        .iter()
        .filter(|&&(a, b)| a != pos && b != pos)
        .map(|&(a, b)| (shift(a), shift(b)))
        .collect();
    Template::from_parts(nodes, edges)
}

/// Draws a neighbor of `t`. Returns `None` only when no move kind is feasible.
pub fn propose_move<R: Rng>(
    t: &Template,
    alphabet_len: usize,
    max_len: usize,
    max_back: usize,
    rng: &mut R,
) -> Option<(Template, MoveKind)> {
    let kinds: Vec<MoveKind> = MoveKind::ALL
        .into_iter()
        .filter(|k| k.feasible(t, max_len, max_back))
        .collect();
    if kinds.is_empty() {
        return None;
    }
    let kind = kinds[rng.random_range(0..kinds.len())];
    let n = t.len();
    let next = match kind {
        MoveKind::InsertNode => {
            let pos = rng.random_range(0..=n);
            let label = Sym(rng.random_range(0..alphabet_len) as u16);
            insert_node(t, pos, label)
        }
        MoveKind::DeleteNode => delete_node(t, rng.random_range(0..n)),
        MoveKind::AddBackEdge => {
            let absent: Vec<(usize, usize)> = (1..n)
                .flat_map(|from| (0..from).map(move |to| (from, to)))
                .filter(|e| !t.back_edges().contains(e))
                .collect();
            let e = absent[rng.random_range(0..absent.len())];
            let mut edges = t.back_edges().clone();
            edges.insert(e);
            Template::from_parts(t.nodes().to_vec(), edges)
        }
        MoveKind::RemoveBackEdge => {
            let i = rng.random_range(0..t.num_back_edges());
            let e = *t.back_edges().iter().nth(i).unwrap();
            let mut edges: BTreeSet<_> = t.back_edges().clone();
            edges.remove(&e);
            Template::from_parts(t.nodes().to_vec(), edges)
        }
    };
    Some((next, kind))
}

/// Metropolis rule: improvements are always taken, otherwise accept when
/// `u < exp(-ΔF/T)` for a uniform draw `u`.
#[inline]
pub fn metropolis_accept(delta_f: f64, temperature: f64, u: f64) -> bool {
    delta_f < 0.0 || u < (-delta_f / temperature).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AcceptedMove {
    pub iteration: usize,
    pub kind: MoveKind,
    pub delta_f: f64,
    pub temperature: f64,
    pub best_f: f64,
    pub nodes: usize,
    pub back_edges: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnealTrace {
    pub initial_f: f64,
    pub accepted_moves: Vec<AcceptedMove>,
    pub restarts: Vec<usize>,
    pub proposals: usize,
    pub best_f: f64,
    pub best_template: Template,
}

impl AnnealTrace {
    /// CSV with one row per accepted move.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,kind,delta_f,temperature,best_f\n");
        for m in &self.accepted_moves {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                m.iteration, m.kind, m.delta_f, m.temperature, m.best_f
            );
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub kind: MoveKind,
    pub delta_f: f64,
    pub accepted: bool,
}

/// One annealing chain. [`Annealer::run`] drives the full schedule;
/// [`Annealer::step`] exposes a single proposal at a caller-chosen temperature.
pub struct Annealer<'a> {
    meetings: &'a [Vec<Sym>],
    alphabet_len: usize,
    config: AnnealConfig,
    rng: ChaCha8Rng,
    current: Template,
    current_f: f64,
    best: Template,
    best_f: f64,
    cache: HashMap<Template, f64>,
}

impl<'a> Annealer<'a> {
    pub fn new(meetings: &'a [Vec<Sym>], alphabet_len: usize, init: Template, config: AnnealConfig) -> Result<Self> {
        config.validate()?;
        if meetings.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        if init.is_empty() || !init.satisfies_caps(config.max_len, config.max_back) {
            return Err(Error::invalid("initial template must be nonempty and within caps"));
        }
        if alphabet_len == 0 || init.nodes().iter().any(|s| s.index() >= alphabet_len) {
            return Err(Error::invalid("initial template uses labels outside the alphabet"));
        }
        let f = objective(&init, meetings, config.params, config.loss_mode)?;
        Ok(Annealer {
            meetings,
            alphabet_len,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            best: init.clone(),
            current: init,
            current_f: f,
            best_f: f,
            cache: HashMap::new(),
        })
    }

    pub fn current(&self) -> (&Template, f64) {
        (&self.current, self.current_f)
    }

    pub fn best(&self) -> (&Template, f64) {
        (&self.best, self.best_f)
    }

    fn evaluate(&mut self, t: &Template) -> Result<f64> {
        if let Some(&f) = self.cache.get(t) {
            return Ok(f);
        }
        let f = objective(t, self.meetings, self.config.params, self.config.loss_mode)?;
        if self.cache.len() >= CACHE_LIMIT {
            self.cache.clear();
        }
        self.cache.insert(t.clone(), f);
        Ok(f)
    }

    /// Proposes one move and applies the Metropolis rule at `temperature`.
    pub fn step(&mut self, temperature: f64) -> Result<Option<StepOutcome>> {
        let Some((cand, kind)) = propose_move(
            &self.current,
            self.alphabet_len,
            self.config.max_len,
            self.config.max_back,
            &mut self.rng,
        ) else {
            return Ok(None);
        };
        let f = self.evaluate(&cand)?;
        let delta_f = f - self.current_f;
        let u: f64 = self.rng.random();
        let accepted = metropolis_accept(delta_f, temperature, u);
        if accepted {
            self.current = cand;
            self.current_f = f;
            if f < self.best_f {
                self.best_f = f;
                self.best = self.current.clone();
            }
        }
        Ok(Some(StepOutcome {
            kind,
            delta_f,
            accepted,
        }))
    }

    pub fn run(mut self) -> Result<(Template, AnnealTrace)> {
        let cfg = self.config;
        let initial_f = self.current_f;
        let mut moves = Vec::new();
        let mut restarts = Vec::new();
        let mut iter = 0usize;
        let mut since_restart = 0usize;
        let mut proposals = 0usize;
        let mut temperature = cfg.t0;
        while iter < cfg.max_accepted && proposals < cfg.max_proposals {
            if iter > 0 && iter % cfg.k_restart == 0 && restarts.last() != Some(&iter) {
                restarts.push(iter);
                since_restart = 0;
                temperature = cfg.t0;
                self.current = self.best.clone();
                self.current_f = self.best_f;
            }
            proposals += 1;
            let Some(out) = self.step(temperature)? else {
                break;
            };
            if out.accepted {
                iter += 1;
                since_restart += 1;
                moves.push(AcceptedMove {
                    iteration: iter,
                    kind: out.kind,
                    delta_f: out.delta_f,
                    temperature,
                    best_f: self.best_f,
                    nodes: self.current.len(),
                    back_edges: self.current.num_back_edges(),
                });
            }
            temperature = cfg.t0 * cfg.cool.powi(since_restart as i32);
            if temperature <= 0.0 {
                temperature = f64::MIN_POSITIVE;
            }
        }
        let trace = AnnealTrace {
            initial_f,
            accepted_moves: moves,
            restarts,
            proposals,
            best_f: self.best_f,
            best_template: self.best.clone(),
        };
        Ok((self.best, trace))
    }
}

/// Runs one annealing chain from `init`.
pub fn anneal(
    meetings: &[Vec<Sym>],
    alphabet_len: usize,
    init: Template,
    config: AnnealConfig,
) -> Result<(Template, AnnealTrace)> {
    Annealer::new(meetings, alphabet_len, init, config)?.run()
}

/// Seed for the run started from meeting `index`.
pub fn derive_seed(seed: u64, index: usize) -> u64 {
    // splitmix64 finalizer over the combined value
    let mut z = seed ^ (index as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Initial template for a start: the meeting truncated to `max_len` nodes.
pub fn initial_from_meeting(seq: &[Sym], max_len: usize) -> Template {
    if seq.is_empty() {
        return Template::chain(vec![Sym(0)]);
    }
    Template::chain(seq[..seq.len().min(max_len)].to_vec())
}

#[derive(Debug, Clone, PartialEq)]
pub struct StartResult {
    pub start_id: usize,
    pub template: Template,
    pub f: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusGroup {
    pub representative: Template,
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiStartReport {
    pub runs: Vec<StartResult>,
    pub groups: Vec<ConsensusGroup>,
    pub modal_group: usize,
    pub modal_frequency: f64,
}

impl MultiStartReport {
    /// Run with the lowest objective; ties go to the earlier start.
    pub fn best(&self) -> &StartResult {
        self.runs
            .iter()
            .min_by(|a, b| a.f.total_cmp(&b.f).then(a.start_id.cmp(&b.start_id)))
            .expect("at least one run")
    }

    pub fn modal(&self) -> &ConsensusGroup {
        &self.groups[self.modal_group]
    }
}

/// Groups templates with equal languages up to `cap`, in first-seen order.
pub fn group_equivalent(runs: &[StartResult], cap: usize) -> Vec<ConsensusGroup> {
    let mut groups: Vec<(BTreeSet<Vec<Sym>>, ConsensusGroup)> = Vec::new();
    for r in runs {
        let lang = r.template.language(cap);
        match groups.iter_mut().find(|(l, _)| *l == lang) {
            Some((_, g)) => g.members.push(r.start_id),
            None => groups.push((
                lang,
                ConsensusGroup {
                    representative: r.template.clone(),
                    members: vec![r.start_id],
                },
            )),
        }
    }
    groups.into_iter().map(|(_, g)| g).collect()
}

/// One annealing run per meeting (or per the first `starts` meetings),
/// each initialized from that meeting's truncated sequence.
pub fn multi_start(
    meetings: &[Vec<Sym>],
    alphabet_len: usize,
    config: AnnealConfig,
    starts: Option<usize>,
) -> Result<MultiStartReport> {
    if meetings.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let count = starts.unwrap_or(meetings.len()).min(meetings.len());
    if count == 0 {
        return Err(Error::invalid("need at least one start"));
    }
    let runs: Vec<StartResult> = (0..count)
        .into_par_iter()
        .map(|i| {
            let cfg = AnnealConfig {
                seed: derive_seed(config.seed, i),
                ..config
            };
            let init = initial_from_meeting(&meetings[i], cfg.max_len);
            let (template, trace) = anneal(meetings, alphabet_len, init, cfg)?;
            Ok(StartResult {
                start_id: i,
                template,
                f: trace.best_f,
            })
        })
        .collect::<Result<_>>()?;
    let groups = group_equivalent(&runs, DEFAULT_EQUIVALENCE_CAP);
    let modal_group = groups
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.members.len().cmp(&b.1.members.len()).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .unwrap();
    let modal_frequency = groups[modal_group].members.len() as f64 / runs.len() as f64;
    Ok(MultiStartReport {
        runs,
        groups,
        modal_group,
        modal_frequency,
    })
}

//! Corpus data model, JSON Lines format, sequence projection and synthetic
//! corpus generators with known ground truth.
//!
//! A corpus file starts with an alphabet header line followed by one meeting
//! per line:
//!
//! ```text
//! {"alphabet": ["SP", "SN", "AP", "AN"]}
//! {"id": "m1", "acts": [{"t": 0.0, "spk": "A", "act": "SP"}], "decision_windows": [[0.0, 0.0]]}
//! ```

use std::collections::{HashMap, HashSet};
use std::fmt;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::template::Template;

/// The six acts used for decision detection, in feature order.
pub const DECISION_ACTS: [&str; 6] = [
    "act-directive",
    "offer",
    "accept",
    "reject",
    "info-request",
    "information",
];

/// Social/assessment acts used for template mining.
pub const ASSESSMENT_ACTS: [&str; 4] = ["SP", "SN", "AP", "AN"];

/// Name of a dialogue act.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ActLabel(String);

impl ActLabel {
    pub fn new(name: impl Into<String>) -> Result<Self> {
        let name = name.into();
        if name.is_empty() {
            return Err(Error::invalid("act label must be nonempty"));
        }
        Ok(ActLabel(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for ActLabel {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        ActLabel::new(s)
    }
}

impl From<ActLabel> for String {
    fn from(l: ActLabel) -> String {
        l.0
    }
}

impl fmt::Display for ActLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Interned act label: an index into an [`Alphabet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Sym(pub u16);

impl Sym {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Ordered set of act labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alphabet {
    labels: Vec<ActLabel>,
    lookup: HashMap<String, Sym>,
}

impl Alphabet {
    pub fn new<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut labels = Vec::new();
        let mut lookup = HashMap::new();
        for name in names {
            let label = ActLabel::new(name)?;
            if lookup.contains_key(label.as_str()) {
                return Err(Error::invalid(format!("duplicate label {label}")));
            }
            if labels.len() >= u16::MAX as usize {
                return Err(Error::invalid("alphabet too large"));
            }
            lookup.insert(label.0.clone(), Sym(labels.len() as u16));
            labels.push(label);
        }
        if labels.is_empty() {
            return Err(Error::invalid("alphabet must contain at least one label"));
        }
        Ok(Alphabet { labels, lookup })
    }

    pub fn decision() -> Self {
        Alphabet::new(DECISION_ACTS).expect("static alphabet")
    }

    pub fn assessment() -> Self {
        Alphabet::new(ASSESSMENT_ACTS).expect("static alphabet")
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sym(&self, name: &str) -> Option<Sym> {
        self.lookup.get(name).copied()
    }

    pub fn label(&self, sym: Sym) -> &ActLabel {
        &self.labels[sym.index()]
    }

    pub fn labels(&self) -> &[ActLabel] {
        &self.labels
    }

    pub fn symbols(&self) -> impl Iterator<Item = Sym> + '_ {
        (0..self.labels.len()).map(|i| Sym(i as u16))
    }

    /// Maps names to symbols, failing on the first unknown name.
    pub fn encode<S: AsRef<str>>(&self, names: &[S]) -> Result<Vec<Sym>> {
        names
            .iter()
            .map(|n| {
                self.sym(n.as_ref())
                    .ok_or_else(|| Error::invalid(format!("unknown label {}", n.as_ref())))
            })
            .collect()
    }

    pub fn decode(&self, syms: &[Sym]) -> Vec<&str> {
        syms.iter().map(|&s| self.label(s).as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DialogueAct {
    pub time: f64,
    pub speaker: String,
    pub label: Sym,
    pub text: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Suggestion {
    pub act_index: usize,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Meeting {
    pub id: String,
    pub acts: Vec<DialogueAct>,
    pub decision_windows: Vec<(f64, f64)>,
    pub suggestions: Vec<Suggestion>,
}

impl Meeting {
    pub fn last_time(&self) -> f64 {
        self.acts.last().map_or(0.0, |a| a.time)
    }

    fn validate(&self, alphabet: &Alphabet) -> std::result::Result<(), String> {
        let mut prev = 0.0f64;
        for (i, act) in self.acts.iter().enumerate() {
            if !act.time.is_finite() {
                return Err(format!("act {i}: non-finite timestamp"));
            }
            if act.time < 0.0 {
                return Err(format!("act {i}: negative timestamp"));
            }
            if i > 0 && act.time < prev {
                return Err(format!("act {i}: timestamps must be nondecreasing"));
            }
            if act.label.index() >= alphabet.len() {
                return Err(format!("act {i}: label outside alphabet"));
            }
            prev = act.time;
        }
        let last = self.last_time();
        for &(t0, t1) in &self.decision_windows {
            if !(0.0 <= t0 && t0 <= t1 && t1 <= last) {
                return Err(format!(
                    "decision window [{t0}, {t1}] outside [0, {last}]"
                ));
            }
        }
        for s in &self.suggestions {
            if s.act_index >= self.acts.len() {
                return Err(format!("suggestion index {} out of range", s.act_index));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub alphabet: Alphabet,
    pub meetings: Vec<Meeting>,
}

impl Corpus {
    pub fn new(alphabet: Alphabet, meetings: Vec<Meeting>) -> Result<Self> {
        if meetings.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        for (i, m) in meetings.iter().enumerate() {
            m.validate(&alphabet)
                .map_err(|msg| Error::Schema { line: i + 2, msg })?;
        }
        Ok(Corpus { alphabet, meetings })
    }

    pub fn len(&self) -> usize {
        self.meetings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meetings.is_empty()
    }

    /// Projects every meeting with [`project_sequence`].
    pub fn sequences(&self, keep: &HashSet<Sym>, collapse: bool) -> Vec<Vec<Sym>> {
        self.meetings
            .iter()
            .map(|m| project_sequence(m, keep, collapse))
            .collect()
    }

    pub fn all_symbols(&self) -> HashSet<Sym> {
        self.alphabet.symbols().collect()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let header = HeaderRecord {
            alphabet: self.alphabet.labels().iter().map(|l| l.0.clone()).collect(),
        };
        out.push_str(&serde_json::to_string(&header).expect("serializable"));
        out.push('\n');
        for m in &self.meetings {
            let rec = MeetingRecord::from_meeting(m, &self.alphabet);
            out.push_str(&serde_json::to_string(&rec).expect("serializable"));
            out.push('\n');
        }
        out
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderRecord {
    alphabet: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct ActRecord {
    t: f64,
    spk: String,
    act: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct SuggestionRecord {
    i: usize,
    accepted: bool,
}

#[derive(Serialize, Deserialize)]
struct MeetingRecord {
    id: String,
    acts: Vec<ActRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    decision_windows: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    suggestions: Vec<SuggestionRecord>,
}

impl MeetingRecord {
    fn from_meeting(m: &Meeting, alphabet: &Alphabet) -> Self {
        MeetingRecord {
            id: m.id.clone(),
            acts: m
                .acts
                .iter()
                .map(|a| ActRecord {
                    t: a.time,
                    spk: a.speaker.clone(),
                    act: alphabet.label(a.label).0.clone(),
                    text: a.text.clone(),
                })
                .collect(),
            decision_windows: m.decision_windows.iter().map(|&(a, b)| [a, b]).collect(),
            suggestions: m
                .suggestions
                .iter()
                .map(|s| SuggestionRecord {
                    i: s.act_index,
                    accepted: s.accepted,
                })
                .collect(),
        }
    }

    fn into_meeting(self, alphabet: &Alphabet, line: usize) -> Result<Meeting> {
        let mut acts = Vec::with_capacity(self.acts.len());
        for a in self.acts {
            let label = alphabet.sym(&a.act).ok_or_else(|| Error::Schema {
                line,
                msg: format!("unknown label {:?}", a.act),
            })?;
            acts.push(DialogueAct {
                time: a.t,
                speaker: a.spk,
                label,
                text: a.text,
            });
        }
        let meeting = Meeting {
            id: self.id,
            acts,
            decision_windows: self.decision_windows.iter().map(|w| (w[0], w[1])).collect(),
            suggestions: self
                .suggestions
                .iter()
                .map(|s| Suggestion {
                    act_index: s.i,
                    accepted: s.accepted,
                })
                .collect(),
        };
        meeting
            .validate(alphabet)
            .map_err(|msg| Error::Schema { line, msg })?;
        Ok(meeting)
    }
}

/// Parses a JSONL corpus: alphabet header line, then one meeting per line.
/// Blank lines are ignored. Line numbers in errors are 1-based.
pub fn parse_corpus(text: &str) -> Result<Corpus> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());

    let (hline, header) = lines.next().ok_or(Error::EmptyCorpus)?;
    let header: HeaderRecord = serde_json::from_str(header).map_err(|e| Error::Parse {
        line: hline,
        msg: format!("expected alphabet header: {e}"),
    })?;
    let alphabet = Alphabet::new(header.alphabet).map_err(|e| Error::Schema {
        line: hline,
        msg: e.to_string(),
    })?;

    let mut meetings = Vec::new();
    for (line, l) in lines {
        let rec: MeetingRecord = serde_json::from_str(l).map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        meetings.push(rec.into_meeting(&alphabet, line)?);
    }
    if meetings.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(Corpus { alphabet, meetings })
}

/// Keeps only acts whose label is in `keep`, in order. With `collapse`, a
/// contiguous run of kept acts sharing both speaker and label becomes one act.
/// Runs broken by any other kept act are not merged.
pub fn project_sequence(meeting: &Meeting, keep: &HashSet<Sym>, collapse: bool) -> Vec<Sym> {
    let mut out = Vec::new();
    let mut last: Option<(&str, Sym)> = None;
    for act in meeting.acts.iter().filter(|a| keep.contains(&a.label)) {
        let key = (act.speaker.as_str(), act.label);
        if collapse && last == Some(key) {
            continue;
        }
        out.push(act.label);
        last = Some(key);
    }
    out
}

const SYNTH_SPEAKERS: [&str; 4] = ["A", "B", "C", "D"];

fn acts_from_labels(labels: &[Sym]) -> Vec<DialogueAct> {
    labels
        .iter()
        .enumerate()
        .map(|(i, &label)| DialogueAct {
            time: i as f64,
            // Cycling speakers keeps same-speaker collapsing a no-op.
            speaker: SYNTH_SPEAKERS[i % SYNTH_SPEAKERS.len()].to_string(),
            label,
            text: None,
        })
        .collect()
}

/// Samples a path of exactly `len` nodes uniformly among all such paths.
pub(crate) fn sample_instantiation<R: Rng>(
    template: &Template,
    len: usize,
    rng: &mut R,
) -> Option<Vec<usize>> {
    let n = template.len();
    if len == 0 || n == 0 {
        return None;
    }
    // weights[l][v] ∝ number of paths of l+1 nodes starting at v, rescaled per level.
    let mut weights = vec![vec![1.0f64; n]];
    for l in 1..len {
        let prev = &weights[l - 1];
        let mut cur: Vec<f64> = (0..n)
            .map(|v| template.successors(v).map(|u| prev[u]).sum())
            .collect();
        let max = cur.iter().cloned().fold(0.0, f64::max);
        if max == 0.0 {
            return None;
        }
        cur.iter_mut().for_each(|w| *w /= max);
        weights.push(cur);
    }
    let pick = |rng: &mut R, cands: &[(usize, f64)]| -> usize {
        let total: f64 = cands.iter().map(|c| c.1).sum();
        let mut r = rng.random::<f64>() * total;
        for &(v, w) in cands {
            if r < w {
                return v;
            }
            r -= w;
        }
        cands.iter().rev().find(|c| c.1 > 0.0).unwrap().0
    };
    let top = &weights[len - 1];
    let starts: Vec<(usize, f64)> = (0..n).map(|v| (v, top[v])).filter(|c| c.1 > 0.0).collect();
    if starts.is_empty() {
        return None;
    }
    let mut path = vec![pick(rng, &starts)];
    for l in (0..len - 1).rev() {
        let v = *path.last().unwrap();
        let cands: Vec<(usize, f64)> = template
            .successors(v)
            .map(|u| (u, weights[l][u]))
            .filter(|c| c.1 > 0.0)
            .collect();
        path.push(pick(rng, &cands));
    }
    Some(path)
}

/// Applies per-position edit noise: with probability `rate` a position is
/// substituted, preceded by an inserted label, or deleted (each equally likely).
pub(crate) fn add_edit_noise<R: Rng>(clean: &[Sym], alphabet_len: usize, rate: f64, rng: &mut R) -> Vec<Sym> {
    let mut out = Vec::with_capacity(clean.len() + clean.len() / 8);
    for &s in clean {
        if rng.random::<f64>() >= rate {
            out.push(s);
            continue;
        }
        match rng.random_range(0..3) {
            0 if alphabet_len > 1 => {
                let mut r = rng.random_range(0..alphabet_len - 1);
                if r >= s.index() {
                    r += 1;
                }
                out.push(Sym(r as u16));
            }
            0 => out.push(s),
            1 => {
                out.push(Sym(rng.random_range(0..alphabet_len) as u16));
                out.push(s);
            }
            _ => {}
        }
    }
    out
}

/// Generates meetings that follow `template` (over `alphabet`) with edit noise.
pub fn synth_template_corpus(
    template: &Template,
    alphabet: &Alphabet,
    m: usize,
    target_len: usize,
    noise_rate: f64,
    seed: u64,
) -> Result<Corpus> {
    if m == 0 {
        return Err(Error::EmptyCorpus);
    }
    if !(0.0..1.0).contains(&noise_rate) {
        return Err(Error::invalid("noise_rate must lie in [0, 1)"));
    }
    if template.is_empty() {
        return Err(Error::invalid("template must be nonempty"));
    }
    if template.nodes().iter().any(|s| s.index() >= alphabet.len()) {
        return Err(Error::invalid("template uses labels outside the alphabet"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut meetings = Vec::with_capacity(m);
    for i in 0..m {
        let path = sample_instantiation(template, target_len, &mut rng).ok_or_else(|| {
            Error::Generation(format!("template has no instantiation of length {target_len}"))
        })?;
        let clean: Vec<Sym> = path.iter().map(|&v| template.nodes()[v]).collect();
        let noisy = add_edit_noise(&clean, alphabet.len(), noise_rate, &mut rng);
        meetings.push(Meeting {
            id: format!("synth-{i:04}"),
            acts: acts_from_labels(&noisy),
            decision_windows: Vec::new(),
            suggestions: Vec::new(),
        });
    }
    Corpus::new(alphabet.clone(), meetings)
}

/// Windows per synthetic decision meeting; one of them holds the decision.
pub const DECISION_MEETING_WINDOWS: usize = 4;

fn check_rates(name: &str, rates: &[f64; 6]) -> Result<()> {
    if rates.iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(Error::invalid(format!("{name}: rates must be nonnegative")));
    }
    let total: f64 = rates.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("{name}: rates sum to {total}, not 1")));
    }
    Ok(())
}

fn draw_categorical<R: Rng>(rates: &[f64; 6], rng: &mut R) -> usize {
    let mut r = rng.random::<f64>();
    for (i, &p) in rates.iter().enumerate() {
        if r < p {
            return i;
        }
        r -= p;
    }
    rates.iter().rposition(|&p| p > 0.0).unwrap_or(5)
}

/// Generates meetings over [`DECISION_ACTS`], each made of
/// [`DECISION_MEETING_WINDOWS`] blocks of `window_size` acts, exactly one of
/// which is annotated as the decision window.
pub fn synth_decision_corpus(
    m: usize,
    window_size: usize,
    inside_rates: &[f64; 6],
    outside_rates: &[f64; 6],
    seed: u64,
) -> Result<Corpus> {
    check_rates("inside_rates", inside_rates)?;
    check_rates("outside_rates", outside_rates)?;
    if m == 0 {
        return Err(Error::EmptyCorpus);
    }
    if window_size == 0 {
        return Err(Error::invalid("window_size must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut meetings = Vec::with_capacity(m);
    for i in 0..m {
        let decision_block = rng.random_range(0..DECISION_MEETING_WINDOWS);
        let mut labels = Vec::with_capacity(window_size * DECISION_MEETING_WINDOWS);
        for block in 0..DECISION_MEETING_WINDOWS {
            let rates = if block == decision_block {
                inside_rates
            } else {
                outside_rates
            };
            for _ in 0..window_size {
                labels.push(Sym(draw_categorical(rates, &mut rng) as u16));
            }
        }
        let mut acts = acts_from_labels(&labels);
        for act in &mut acts {
            act.speaker = SYNTH_SPEAKERS.choose(&mut rng).unwrap().to_string();
        }
        let t0 = (decision_block * window_size) as f64;
        let t1 = ((decision_block + 1) * window_size - 1) as f64;
        meetings.push(Meeting {
            id: format!("decision-{i:04}"),
            acts,
            decision_windows: vec![(t0, t1)],
            suggestions: Vec::new(),
        });
    }
    Corpus::new(Alphabet::decision(), meetings)
}

//! Decision-time detection from bags of decision-relevant dialogue acts.

use serde::Serialize;

use crate::classify::{self, mean_std, Dataset, EvalMetrics, Hyper, Model, ModelKind};
use crate::corpus::{Alphabet, Corpus, Meeting, DECISION_ACTS};
use crate::error::{Error, Result};

pub const DEFAULT_WINDOW_SIZE: usize = 70;
pub const DEFAULT_FOLDS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TimeframeExample {
    /// Counts in [`DECISION_ACTS`] order.
    pub features: [u32; 6],
    pub label: bool,
}

/// Splits the decision-relevant acts of `meeting` into consecutive windows of
/// `window_size` acts. A trailing window is kept when it has at least half
/// as many acts. A window is positive when any of its act times lies inside
/// a decision window.
pub fn make_windows(meeting: &Meeting, alphabet: &Alphabet, window_size: usize) -> Result<Vec<TimeframeExample>> {
    if window_size == 0 {
        return Err(Error::invalid("window size must be positive"));
    }
    let slot: Vec<Option<usize>> = alphabet
        .labels()
        .iter()
        .map(|l| DECISION_ACTS.iter().position(|&d| d == l.as_str()))
        .collect();
    let relevant: Vec<(usize, f64)> = meeting
        .acts
        .iter()
        .filter_map(|a| slot[a.label.index()].map(|j| (j, a.time)))
        .collect();
    let mut out = Vec::new();
    for chunk in relevant.chunks(window_size) {
        if chunk.len() * 2 < window_size {
            break;
        }
        let mut features = [0u32; 6];
        for &(j, _) in chunk {
            features[j] += 1;
        }
        let label = chunk.iter().any(|&(_, t)| {
            meeting
                .decision_windows
                .iter()
                .any(|&(t0, t1)| t0 <= t && t <= t1)
        });
        out.push(TimeframeExample { features, label });
    }
    Ok(out)
}

pub fn corpus_windows(corpus: &Corpus, window_size: usize) -> Result<Vec<TimeframeExample>> {
    let mut out = Vec::new();
    for m in &corpus.meetings {
        out.extend(make_windows(m, &corpus.alphabet, window_size)?);
    }
    Ok(out)
}

pub fn to_dataset(examples: &[TimeframeExample]) -> Dataset {
    Dataset {
        x: examples
            .iter()
            .map(|e| e.features.iter().map(|&c| c as f64).collect())
            .collect(),
        y: examples.iter().map(|e| e.label).collect(),
    }
}

pub fn cross_validate(
    examples: &[TimeframeExample],
    kind: ModelKind,
    folds: usize,
    hyper: &Hyper,
    seed: u64,
) -> Result<EvalMetrics> {
    classify::cross_validate(&to_dataset(examples), kind, folds, hyper, seed)
}

/// One row per model, columns as in the usual results table.
pub fn metrics_csv(rows: &[EvalMetrics]) -> String {
    let mut s = String::from("method,auc,auc_std,precision,recall,f_measure\n");
    for m in rows {
        s.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            m.kind.name(),
            m.auc,
            m.auc_std,
            m.precision,
            m.recall,
            m.f_measure
        ));
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureRank {
    pub act: String,
    pub mean: f64,
    pub std: f64,
}

/// Per-fold coefficient vectors of the linear SVM (on standardized
/// features), in fold order.
pub fn fold_coefficients(data: &Dataset, folds: usize, hyper: &Hyper, seed: u64) -> Result<Vec<Vec<f64>>> {
    let (_, models) = classify::run_folds(data, ModelKind::LinearSvm, folds, hyper, seed)?;
    Ok(models
        .into_iter()
        .map(|m| match m {
            Model::Linear { weights, .. } => weights,
            _ => unreachable!("linear-svm fits a linear model"),
        })
        .collect())
}

pub(crate) fn coefficient_stats(coefs: &[Vec<f64>]) -> Vec<(f64, f64)> {
    let d = coefs.first().map_or(0, Vec::len);
    (0..d)
        .map(|j| mean_std(&coefs.iter().map(|w| w[j]).collect::<Vec<_>>()))
        .collect()
}

/// Acts ranked by mean fold coefficient, largest first.
pub fn rank_features(
    examples: &[TimeframeExample],
    folds: usize,
    hyper: &Hyper,
    seed: u64,
) -> Result<Vec<FeatureRank>> {
    let coefs = fold_coefficients(&to_dataset(examples), folds, hyper, seed)?;
    let mut out: Vec<FeatureRank> = coefficient_stats(&coefs)
        .into_iter()
        .zip(DECISION_ACTS)
        .map(|((mean, std), act)| FeatureRank { act: act.to_string(), mean, std })
        .collect();
    out.sort_by(|a, b| b.mean.total_cmp(&a.mean).then_with(|| a.act.cmp(&b.act)));
    Ok(out)
}

pub fn ranking_csv(ranks: &[FeatureRank]) -> String {
    let mut s = String::from("ranking,act,coefficient,std\n");
    for (i, r) in ranks.iter().enumerate() {
        s.push_str(&format!("{},{},{:.6},{:.6}\n", i + 1, r.act, r.mean, r.std));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synth_decision_corpus, DialogueAct, Sym};

    fn meeting_of(labels: &[u16], windows: Vec<(f64, f64)>) -> Meeting {
        Meeting {
            id: "m".into(),
            acts: labels
                .iter()
                .enumerate()
                .map(|(i, &l)| DialogueAct { time: i as f64, speaker: "A".into(), label: Sym(l), text: None })
                .collect(),
            decision_windows: windows,
            suggestions: vec![],
        }
    }

    #[test]
    fn counts_in_canonical_order() {
        // information, information, accept, offer, info-request, information
        let m = meeting_of(&[5, 5, 2, 1, 4, 5], vec![]);
        let w = make_windows(&m, &Alphabet::decision(), 6).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].features, [0, 1, 1, 0, 1, 3]);
        assert!(!w[0].label);
    }

    #[test]
    fn irrelevant_acts_are_dropped() {
        let alphabet = Alphabet::new(["information", "chit-chat", "accept"]).unwrap();
        let m = meeting_of(&[0, 1, 1, 2], vec![]);
        let w = make_windows(&m, &alphabet, 2).unwrap();
        assert_eq!(w[0].features, [0, 0, 1, 0, 0, 1]);
        let none = meeting_of(&[1, 1], vec![]);
        assert!(make_windows(&none, &alphabet, 2).unwrap().is_empty());
    }

    #[test]
    fn window_labels_and_partial_tail() {
        let labels: Vec<u16> = (0..70 * 3 + 35).map(|i| (i % 6) as u16).collect();
        let m = meeting_of(&labels, vec![(0.0, 69.0)]);
        let w = make_windows(&m, &Alphabet::decision(), 70).unwrap();
        assert_eq!(w.len(), 4);
        assert_eq!(w.iter().map(|e| e.label).collect::<Vec<_>>(), [true, false, false, false]);
        let short = meeting_of(&labels[..70 * 3 + 34], vec![]);
        assert_eq!(make_windows(&short, &Alphabet::decision(), 70).unwrap().len(), 3);
        assert!(w.iter().all(|e| e.features.iter().sum::<u32>() <= 70));
    }

    #[test]
    fn synthetic_prevalence_is_one_in_four() {
        let c = synth_decision_corpus(250, 70, &[1.0 / 6.0; 6], &[1.0 / 6.0; 6], 9).unwrap();
        let w = corpus_windows(&c, 70).unwrap();
        assert_eq!(w.len(), 1000);
        let p = w.iter().filter(|e| e.label).count() as f64 / 1000.0;
        assert!((p - 0.25).abs() <= 0.05, "{p}");
    }

    #[test]
    fn csv_headers() {
        assert!(ranking_csv(&[]).starts_with("ranking,act,coefficient,std"));
        assert!(metrics_csv(&[]).starts_with("method,auc,auc_std,precision,recall,f_measure"));
    }
}

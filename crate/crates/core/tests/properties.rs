use std::collections::{BTreeSet, HashSet};

use macropat::classify::auc;
use macropat::corpus::{parse_corpus, project_sequence, synth_template_corpus};
use macropat::generalization::{count_templates_exact, log_count_templates_logspace, risk_bound, BoundInputs};
use macropat::stats::{fisher_exact, hypergeom_pmf, ContingencyTable};
use macropat::template::{edit_distance, loss};
use macropat::wrapup::{fit_piecewise, ols};
use macropat::{Alphabet, Corpus, DialogueAct, LossMode, Meeting, Suggestion, Sym, Template};
use proptest::prelude::*;

fn seq(max: usize, k: u16) -> impl Strategy<Value = Vec<Sym>> {
    prop::collection::vec((0..k).prop_map(Sym), 0..=max)
}

fn template(max_nodes: usize, k: u16) -> impl Strategy<Value = Template> {
    (prop::collection::vec((0..k).prop_map(Sym), 1..=max_nodes), prop::collection::vec((0usize..64, 0usize..64), 0..3))
        .prop_map(|(nodes, raw)| {
            let n = nodes.len();
            let edges: BTreeSet<(usize, usize)> = if n < 2 {
                BTreeSet::new()
            } else {
                raw.into_iter()
                    .map(|(a, b)| {
                        let from = 1 + a % (n - 1);
                        (from, b % from)
                    })
                    .collect()
            };
            Template::new(nodes, edges).unwrap()
        })
}

fn meeting_strategy() -> impl Strategy<Value = Meeting> {
    (
        prop::collection::vec((0u16..4, 0usize..3, 0u32..5, prop::option::of("[a-z ,.']{0,12}")), 1..12),
        prop::collection::vec(any::<bool>(), 0..3),
    )
        .prop_map(|(raw, accepted)| {
            let mut t = 0.0;
            let acts: Vec<DialogueAct> = raw
                .into_iter()
                .map(|(label, spk, gap, text)| {
                    t += gap as f64 * 0.5;
                    DialogueAct { time: t, speaker: ["A", "B", "C"][spk].to_string(), label: Sym(label), text }
                })
                .collect();
            let last = acts.last().unwrap().time;
            let suggestions = accepted
                .into_iter()
                .enumerate()
                .filter(|(i, _)| *i < acts.len())
                .map(|(i, accepted)| Suggestion { act_index: i, accepted })
                .collect();
            Meeting { id: "m".into(), acts, decision_windows: vec![(0.0, last / 2.0)], suggestions }
        })
}

// Follows one random walk through the template.
fn walk(t: &Template, start: usize, choices: &[usize]) -> Vec<Sym> {
    let mut v = start % t.len();
    let mut out = vec![t.nodes()[v]];
    for &c in choices {
        let succ: Vec<usize> = t.successors(v).collect();
        if succ.is_empty() {
            break;
        }
        v = succ[c % succ.len()];
        out.push(t.nodes()[v]);
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 128, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn corpus_round_trip(meetings in prop::collection::vec(meeting_strategy(), 1..4)) {
        let c = Corpus::new(Alphabet::assessment(), meetings).unwrap();
        let parsed = parse_corpus(&c.to_jsonl()).unwrap();
        prop_assert_eq!(&parsed, &c);
        prop_assert_eq!(parsed.to_jsonl(), c.to_jsonl());
    }

    #[test]
    fn projection_is_idempotent(m in meeting_strategy(), keep in prop::collection::hash_set((0u16..4).prop_map(Sym), 0..4), collapse: bool) {
        let keep: HashSet<Sym> = keep;
        let once = project_sequence(&m, &keep, collapse);
        let mut kept: Vec<DialogueAct> = m.acts.iter().filter(|a| keep.contains(&a.label)).cloned().collect();
        if collapse {
            kept.dedup_by(|b, a| a.speaker == b.speaker && a.label == b.label);
        }
        let projected = Meeting { acts: kept, decision_windows: vec![], suggestions: vec![], ..m.clone() };
        prop_assert_eq!(project_sequence(&projected, &keep, collapse), once.clone());
        prop_assert!(once.iter().all(|s| keep.contains(s)));
    }

    #[test]
    fn edit_distance_is_a_metric(a in seq(9, 3), b in seq(9, 3), c in seq(9, 3)) {
        let ab = edit_distance(&a, &b);
        prop_assert_eq!(ab == 0, a == b);
        prop_assert_eq!(ab, edit_distance(&b, &a));
        prop_assert!(edit_distance(&a, &c) <= ab + edit_distance(&b, &c));
        prop_assert!(ab <= a.len().max(b.len()));
    }

    #[test]
    fn loss_bounded_by_any_witness(t in template(5, 3), x in seq(10, 3), start in 0usize..5, choices in prop::collection::vec(0usize..4, 0..10)) {
        let w = walk(&t, start, &choices);
        prop_assert!(loss(&t, &x, LossMode::Exact) <= edit_distance(&w, &x));
    }

    #[test]
    fn back_edges_never_increase_loss(t in template(5, 3), x in seq(10, 3), a in 0usize..64, b in 0usize..64) {
        prop_assume!(t.len() >= 2);
        let from = 1 + a % (t.len() - 1);
        prop_assume!(!t.back_edges().contains(&(from, b % from)));
        let bigger = t.with_back_edge(from, b % from).unwrap();
        prop_assert!(loss(&bigger, &x, LossMode::Exact) <= loss(&t, &x, LossMode::Exact));
    }

    #[test]
    fn windowed_loss_never_below_exact(t in template(4, 3), x in seq(10, 3), delta in 0.0f64..0.5) {
        let windowed = loss(&t, &x, LossMode::Windowed { delta });
        prop_assert!(windowed >= loss(&t, &x, LossMode::Exact));
    }

    #[test]
    fn auc_matches_pair_count(pairs in prop::collection::vec((0u8..6, any::<bool>()), 2..13), scale in 0.01f64..100.0) {
        let labels: Vec<bool> = pairs.iter().map(|p| p.1).collect();
        prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
        let scores: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
        let mut wins = 0.0;
        let mut total = 0.0;
        for (i, &si) in scores.iter().enumerate() {
            for (j, &sj) in scores.iter().enumerate() {
                if labels[i] && !labels[j] {
                    total += 1.0;
                    wins += if si > sj { 1.0 } else if si == sj { 0.5 } else { 0.0 };
                }
            }
        }
        let a = auc(&scores, &labels).unwrap();
        prop_assert!((a - wins / total).abs() < 1e-12);
        let scaled: Vec<f64> = scores.iter().map(|s| s * scale).collect();
        prop_assert_eq!(auc(&scaled, &labels).unwrap(), a);
    }

    #[test]
    fn hypergeometric_normalizes(n in 1u64..=200, kf in 0.0f64..=1.0, df in 0.0f64..=1.0) {
        let big_k = (kf * n as f64) as u64;
        let draws = (df * n as f64) as u64;
        let s: f64 = (0..=draws).map(|k| hypergeom_pmf(n, big_k, draws, k)).sum();
        prop_assert!((s - 1.0).abs() < 1e-12, "{}", s);
    }

    #[test]
    fn two_sided_at_least_one_sided(a in 0u64..80, b in 0u64..80, c in 0u64..80, d in 0u64..80) {
        let f = fisher_exact(&ContingencyTable::new(a, b, c, d));
        prop_assert!(f.p_two_sided >= f.p_one_sided - 1e-12);
        prop_assert!(f.p_two_sided <= 1.0 && f.p_one_sided > 0.0);
    }

    #[test]
    fn piecewise_fit_properties(pts in prop::collection::vec((0u32..40, -50i32..50), 4..20), shift in -20i32..20, rot in 0usize..20) {
        let pts: Vec<(f64, f64)> = pts.into_iter().map(|(x, y)| (x as f64, y as f64)).collect();
        let Ok(m) = fit_piecewise(&pts) else { return Ok(()); };
        prop_assert!(m.sse <= ols(&pts).2 + 1e-7);
        prop_assert!((m.sse_on(&pts) - m.sse).abs() < 1e-6);
        let shifted: Vec<(f64, f64)> = pts.iter().map(|&(x, y)| (x, y + shift as f64)).collect();
        let s = fit_piecewise(&shifted).unwrap();
        prop_assert_eq!(s.breakpoint, m.breakpoint);
        prop_assert!((s.left_intercept - m.left_intercept - shift as f64).abs() < 1e-7);
        prop_assert!((s.right_intercept - m.right_intercept - shift as f64).abs() < 1e-7);
        let mut rotated = pts.clone();
        let k = rot % rotated.len();
        rotated.rotate_left(k);
        prop_assert_eq!(fit_piecewise(&rotated).unwrap(), m);
    }

    #[test]
    fn log_count_agrees_with_exact(l in 0u64..12, b in 0u64..6, a in 1u64..12) {
        if let Some(c) = count_templates_exact(l, b, a) {
            let exact = (c as f64).ln();
            prop_assert!((log_count_templates_logspace(l, b, a) - exact).abs() <= 1e-12 * exact.max(1.0));
        }
    }

    #[test]
    fn bound_is_monotone(m in 1u64..1000, l in 1u64..8, b in 0u64..4, a in 1u64..8, delta in 0.001f64..0.5) {
        let base = BoundInputs { r_emp: 0.3, m, max_len: l, max_back: b, alphabet_size: a, delta, loss_scale: 1.0 };
        let r = risk_bound(&base).unwrap();
        let more_data = risk_bound(&BoundInputs { m: m + 1, ..base }).unwrap();
        let longer = risk_bound(&BoundInputs { max_len: l + 1, ..base }).unwrap();
        let more_back = risk_bound(&BoundInputs { max_back: b + 1, ..base }).unwrap();
        let bigger_alphabet = risk_bound(&BoundInputs { alphabet_size: a + 1, ..base }).unwrap();
        let surer = risk_bound(&BoundInputs { delta: delta / 2.0, ..base }).unwrap();
        prop_assert!(more_data <= r);
        prop_assert!(longer >= r && more_back >= r && bigger_alphabet >= r && surer >= r);
    }

    #[test]
    fn noiseless_synthesis_has_zero_loss(t in template(4, 4), seed in any::<u64>()) {
        let alphabet = Alphabet::assessment();
        let Ok(c) = synth_template_corpus(&t, &alphabet, 3, 12, 0.0, seed) else { return Ok(()); };
        for s in c.sequences(&c.all_symbols(), false) {
            prop_assert_eq!(loss(&t, &s, LossMode::Exact), 0);
        }
        prop_assert_eq!(synth_template_corpus(&t, &alphabet, 3, 12, 0.0, seed).unwrap(), c);
    }
}

use std::collections::HashSet;
use std::path::Path;

use serde::Serialize;
use serde_json::json;

use macropat::anneal::{multi_start, AnnealConfig};
use macropat::baselines::{consensus_string, fit_markov, fit_profile_hmm, top_transitions};
use macropat::classify::{Hyper, ModelKind};
use macropat::corpus::{synth_decision_corpus, synth_template_corpus};
use macropat::detect::{corpus_windows, cross_validate, metrics_csv, rank_features as rank_acts, ranking_csv};
use macropat::generalization::{count_templates_exact, formula_is_exact, log_count_templates, risk_bound, BoundInputs};
use macropat::stats::{
    aggregate_lexicon_test, default_stopwords, screen_csv, screen_then_fit, svm_word_ranking, tokenize_suggestions,
    word_screen, SuggestionMatrix,
};
use macropat::template::{empirical_risk, TemplateJson};
use macropat::wrapup::{extract_points, fit_csv, fit_piecewise, points_csv};
use macropat::{Alphabet, Corpus, LossMode, ObjectiveParams, Sym, Template};

use crate::run::{sha256_hex, CliError, Ctx};
use crate::{
    BoundArgs, DetectArgs, LossArg, MarkovArgs, MineArgs, PersuadeArgs, PhmmArgs, RankFeaturesArgs, ScreenWordsArgs,
    SequenceArgs, SynthDecisionArgs, SynthTemplateArgs, WrapupArgs,
};

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Invalid(msg.into())
}

fn emit_corpus(ctx: &mut Ctx, corpus: &Corpus) {
    let text = corpus.to_jsonl();
    ctx.corpus_digest = Some(sha256_hex(text.as_bytes()));
    ctx.emit("corpus.jsonl", text);
}

fn parse_back_edge(s: &str) -> Result<(usize, usize), CliError> {
    let (a, b) = s.split_once(':').ok_or_else(|| invalid(format!("back edge {s:?} is not from:to")))?;
    let parse = |x: &str| x.trim().parse::<usize>().map_err(|_| invalid(format!("back edge {s:?} is not from:to")));
    Ok((parse(a)?, parse(b)?))
}

pub fn synth_template(a: &SynthTemplateArgs, ctx: &mut Ctx) -> Result<(), CliError> {
    let alphabet = Alphabet::new(a.alphabet.iter().map(String::as_str))?;
    let template = match (&a.template, &a.nodes) {
        (Some(path), _) => {
            let text = ctx.read_input(path)?;
            let json: TemplateJson =
                serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            Template::from_json(&json, &alphabet)?
        }
        (None, Some(nodes)) => {
            let edges = a.back.iter().map(|s| parse_back_edge(s)).collect::<Result<Vec<_>, _>>()?;
            Template::new(alphabet.encode(nodes)?, edges)?
        }
        (None, None) => return Err(CliError::Usage("one of --nodes or --template is required".into())),
    };
    let corpus = synth_template_corpus(&template, &alphabet, a.m, a.length, a.noise, ctx.seed)?;
    emit_corpus(ctx, &corpus);
    ctx.emit_json("planted.json", &template.to_json(&alphabet));
    Ok(())
}

fn six(name: &str, v: &[f64]) -> Result<[f64; 6], CliError> {
    v.try_into().map_err(|_| invalid(format!("{name} needs 6 rates, got {}", v.len())))
}

pub fn synth_decision(a: &SynthDecisionArgs, ctx: &mut Ctx) -> Result<(), CliError> {
    let inside = six("inside", &a.inside)?;
    let outside = six("outside", &a.outside)?;
    let corpus = synth_decision_corpus(a.m, a.window_size, &inside, &outside, ctx.seed)?;
    emit_corpus(ctx, &corpus);
    Ok(())
}

fn sequences(s: &SequenceArgs, ctx: &mut Ctx) -> Result<(Corpus, Vec<Vec<Sym>>), CliError> {
    let corpus = ctx.load_corpus(s.corpus.as_deref())?;
    let keep: HashSet<Sym> = match &s.keep {
        Some(labels) => corpus.alphabet.encode(labels)?.into_iter().collect(),
        None => corpus.all_symbols(),
    };
    let seqs = corpus.sequences(&keep, !s.no_collapse);
    Ok((corpus, seqs))
}

#[derive(Serialize)]
struct MinedTemplate {
    template: TemplateJson,
    objective: f64,
    empirical_risk: f64,
    start_id: usize,
}

pub fn mine(a: &MineArgs, ctx: &mut Ctx) -> Result<(), CliError> {
    let (corpus, seqs) = sequences(&a.seqs, ctx)?;
    let starts = match a.restarts.as_str() {
        "per-meeting" => None,
        n => Some(n.parse::<usize>().map_err(|_| invalid(format!("--restarts {n:?}: expected per-meeting or a count")))?),
    };
    let loss_mode = match a.loss {
        LossArg::Exact => LossMode::Exact,
        LossArg::Windowed => LossMode::Windowed { delta: a.delta },
    };
    let config = AnnealConfig {
        t0: a.t0,
        cool: a.cool,
        k_restart: a.k_restart,
        max_accepted: a.max_accepted,
        max_proposals: a.max_proposals,
        max_len: a.max_len,
        max_back: a.max_back,
        params: ObjectiveParams { c1: a.c1, c2: a.c2 },
        loss_mode,
        seed: ctx.seed,
    };
    let report = multi_start(&seqs, corpus.alphabet.len(), config, starts)?;
    let groups = macropat::anneal::group_equivalent(&report.runs, a.equivalence_cap);
    let best = report.best();
    let alphabet = &corpus.alphabet;

    ctx.emit_json(
        "template.json",
        &MinedTemplate {
            template: best.template.to_json(alphabet),
            objective: best.f,
            empirical_risk: empirical_risk(&best.template, &seqs, loss_mode)?,
            start_id: best.start_id,
        },
    );
    ctx.emit("template.dot", best.template.to_dot(alphabet));

    let modal = (0..groups.len()).max_by(|&x, &y| groups[x].members.len().cmp(&groups[y].members.len()).then(y.cmp(&x)));
    let consensus = json!({
        "runs": report.runs.len(),
        "modal_group": modal,
        "groups": groups.iter().map(|g| json!({
            "template": g.representative.to_json(alphabet),
            "members": g.members,
            "frequency": g.members.len() as f64 / report.runs.len() as f64,
        })).collect::<Vec<_>>(),
    });
    ctx.emit_json("consensus.json", &consensus);

    let mut csv = String::from("start_id,objective,nodes,back_edges,group\n");
    for r in &report.runs {
        let g = groups.iter().position(|g| g.members.contains(&r.start_id)).expect("every run is grouped");
        csv.push_str(&format!("{},{},{},{},{}\n", r.start_id, r.f, r.template.len(), r.template.num_back_edges(), g));
    }
    ctx.emit("runs.csv", csv);
    Ok(())
}

fn required<T: Copy>(v: Option<T>, flag: &str) -> Result<T, CliError> {
    v.ok_or_else(|| CliError::Usage(format!("--{flag} is required")))
}

pub fn bound(a: &BoundArgs, ctx: &mut Ctx) -> Result<(), CliError> {
    let inputs = BoundInputs {
        r_emp: required(a.remp, "remp")?,
        m: required(a.m, "m")?,
        max_len: required(a.max_len, "L")?,
        max_back: required(a.max_back, "B")?,
        alphabet_size: required(a.alphabet, "alphabet")?,
        delta: required(a.delta, "delta")?,
        loss_scale: a.loss_scale,
    };
    let bound = risk_bound(&inputs)?;
    let exact = count_templates_exact(inputs.max_len, inputs.max_back, inputs.alphabet_size);
    ctx.emit_json(
        "bound.json",
        &json!({
            "inputs": inputs,
            // u128 does not fit a JSON number losslessly
            "count": exact.map(|c| c.to_string()),
            "log_count": log_count_templates(inputs.max_len, inputs.max_back, inputs.alphabet_size),
            "count_is_exact_class_size": formula_is_exact(inputs.max_len, inputs.max_back),
            "bound": bound,
        }),
    );
    Ok(())
}

fn decision_windows(
    ctx: &mut Ctx,
    corpus: Option<&Path>,
    window_size: usize,
) -> Result<Vec<macropat::detect::TimeframeExample>, CliError> {
    let corpus = ctx.load_corpus(corpus)?;
    Ok(corpus_windows(&corpus, window_size)?)
}

pub fn detect(a: &DetectArgs, ctx: &mut Ctx) -> Result<(), CliError> {
    let kinds = a.models.iter().map(|m| m.parse::<ModelKind>()).collect::<Result<Vec<_>, _>>()?;
    let windows = decision_windows(ctx, a.corpus.as_deref(), a.window_size)?;
    let hyper = Hyper { svm_lambda: a.svm_lambda, ..Hyper::default() };
    let rows = kinds
        .into_iter()
        .map(|k| cross_validate(&windows, k, a.folds, &hyper, ctx.seed))
        .collect::<Result<Vec<_>, _>>()?;
    ctx.emit("metrics.csv", metrics_csv(&rows));
    ctx.emit_json("metrics.json", &rows);
    Ok(())
}

pub fn rank_features(a: &RankFeaturesArgs, ctx: &mut Ctx) -> Result<(), CliError> {
    let windows = decision_windows(ctx, a.corpus.as_deref(), a.window_size)?;
    let ranks = rank_acts(&windows, a.folds, &Hyper { svm_lambda: a.svm_lambda, ..Hyper::default() }, ctx.seed)?;
    ctx.emit("ranking.csv", ranking_csv(&ranks));
    Ok(())
}

pub fn markov(a: &MarkovArgs, ctx: &mut Ctx) -> Result<(), CliError> {
    let (corpus, seqs) = sequences(&a.seqs, ctx)?;
    let chain = fit_markov(&seqs, corpus.alphabet.len())?;
    let top = top_transitions(&chain, a.top)?;
    if top.truncated {
        log::warn!("only {} transitions carry probability", top.transitions.len());
    }
    ctx.emit("transitions.csv", chain.to_csv(&corpus.alphabet));
    ctx.emit("markov.dot", chain.to_dot(&corpus.alphabet));
    let mut csv = String::from("from,to,probability\n");
    for t in &top.transitions {
        csv.push_str(&format!(
            "{},{},{}\n",
            corpus.alphabet.label(t.from).as_str(),
            corpus.alphabet.label(t.to).as_str(),
            t.probability
        ));
    }
    ctx.emit("top.csv", csv);
    Ok(())
}

pub fn phmm(a: &PhmmArgs, ctx: &mut Ctx) -> Result<(), CliError> {
    let (corpus, seqs) = sequences(&a.seqs, ctx)?;
    let length = match a.length {
        Some(l) => l,
        None => {
            let mut lens: Vec<usize> = seqs.iter().map(Vec::len).collect();
            lens.sort_unstable();
            lens.get(lens.len() / 2).copied().unwrap_or(1).max(1)
        }
    };
    let model = fit_profile_hmm(&seqs, corpus.alphabet.len(), length, a.pseudocount, a.iterations, ctx.seed)?;
    let consensus = consensus_string(&model);
    ctx.emit_json("phmm.json", &model);
    ctx.emit_json("consensus.json", &json!({ "length": length, "consensus": corpus.alphabet.decode(&consensus) }));
    Ok(())
}

pub fn wrapup(a: &WrapupArgs, ctx: &mut Ctx) -> Result<(), CliError> {
    let corpus = ctx.load_corpus(a.corpus.as_deref())?;
    let ex = extract_points(&corpus);
    let pts: Vec<(f64, f64)> = ex.points.iter().map(|p| (p.x, p.y)).collect();
    let model = fit_piecewise(&pts)?;
    let predictions: Vec<_> = a
        .at
        .iter()
        .map(|&x| {
            let p = model.predict(x);
            json!({ "x": x, "minutes": p.minutes, "floored": p.floored })
        })
        .collect();
    ctx.emit("points.csv", points_csv(&ex.points));
    ctx.emit("fit.csv", fit_csv(&model, &ex.points));
    ctx.emit_json(
        "model.json",
        &json!({
            "model": model,
            "points": ex.points.len(),
            "clamped": ex.points.iter().filter(|p| p.clamped).count(),
            "skipped": ex.skipped,
            "predictions": predictions,
        }),
    );
    Ok(())
}

fn word_list(ctx: &mut Ctx, path: &Path) -> Result<HashSet<String>, CliError> {
    Ok(ctx
        .read_input(path)?
        .lines()
        .map(|l| l.trim().to_lowercase())
        .filter(|l| !l.is_empty())
        .collect())
}

fn suggestion_matrix(ctx: &mut Ctx, corpus: Option<&Path>, stopwords: Option<&Path>) -> Result<SuggestionMatrix, CliError> {
    let corpus = ctx.load_corpus(corpus)?;
    let stop = match stopwords {
        Some(p) => word_list(ctx, p)?,
        None => default_stopwords(),
    };
    let (matrix, report) = tokenize_suggestions(&corpus, &stop);
    if report.missing_text + report.empty_rows > 0 {
        log::warn!(
            "{} suggestions without text, {} with only stopwords",
            report.missing_text,
            report.empty_rows
        );
    }
    Ok(matrix)
}

pub fn persuade(a: &PersuadeArgs, ctx: &mut Ctx) -> Result<(), CliError> {
    let lexicon_path = a.lexicon.as_deref().ok_or_else(|| CliError::Usage("--lexicon is required".into()))?;
    let matrix = suggestion_matrix(ctx, a.corpus.as_deref(), a.stopwords.as_deref())?;
    let lexicon = word_list(ctx, lexicon_path)?;
    let fisher = aggregate_lexicon_test(&matrix, &lexicon)?;
    let hyper = Hyper::default();
    let ranking = svm_word_ranking(&matrix, a.folds, &hyper, ctx.seed, None)?;
    ctx.emit_json("lexicon.json", &fisher);
    ctx.emit("words.csv", macropat::stats::ranking_csv(&ranking));
    let mut summary = json!({
        "suggestions": matrix.len(),
        "vocabulary": matrix.vocabulary.len(),
        "accuracy": ranking.accuracy,
        "accuracy_std": ranking.accuracy_std,
    });
    if let Some(alpha) = a.screen_alpha {
        let screened = screen_then_fit(&matrix, alpha, a.folds, &hyper, ctx.seed)?;
        summary["screened_accuracy"] = json!(screened.accuracy);
        summary["screened_accuracy_std"] = json!(screened.accuracy_std);
        ctx.emit("screened_words.csv", macropat::stats::ranking_csv(&screened));
    }
    ctx.emit_json("words.json", &summary);
    Ok(())
}

pub fn screen_words(a: &ScreenWordsArgs, ctx: &mut Ctx) -> Result<(), CliError> {
    let matrix = suggestion_matrix(ctx, a.corpus.as_deref(), a.stopwords.as_deref())?;
    ctx.emit("screen.csv", screen_csv(&word_screen(&matrix, a.alpha)));
    Ok(())
}

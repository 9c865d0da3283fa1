//! Small dense classifiers, the rank-based AUC and stratified k-fold
//! evaluation shared by decision detection and word ranking.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const VARIANCE_FLOOR: f64 = 1e-6;
const STRATIFY_ATTEMPTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    LinearSvm,
    Logistic,
    GaussianNb,
    Kmeans,
    EmGmm,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::LinearSvm,
        ModelKind::Logistic,
        ModelKind::GaussianNb,
        ModelKind::Kmeans,
        ModelKind::EmGmm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::LinearSvm => "linear-svm",
            ModelKind::Logistic => "logistic",
            ModelKind::GaussianNb => "gaussian-nb",
            ModelKind::Kmeans => "kmeans",
            ModelKind::EmGmm => "em-gmm",
        }
    }

    pub fn is_supervised(self) -> bool {
        matches!(self, ModelKind::LinearSvm | ModelKind::Logistic | ModelKind::GaussianNb)
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown model kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyper {
    pub svm_lambda: f64,
    pub svm_epochs: usize,
    pub logistic_lambda: f64,
    pub logistic_tol: f64,
    pub logistic_max_iter: usize,
    pub cluster_max_iter: usize,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            svm_lambda: 1.0,
            svm_epochs: 60,
            logistic_lambda: 1e-3,
            logistic_tol: 1e-8,
            logistic_max_iter: 20_000,
            cluster_max_iter: 200,
        }
    }
}

/// Labeled dense examples; `y[i]` is true for the positive class.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<bool>,
}

impl Dataset {
    pub fn new(x: Vec<Vec<f64>>, y: Vec<bool>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::invalid("feature and label counts differ"));
        }
        if let Some(d) = x.first().map(Vec::len) {
            if x.iter().any(|r| r.len() != d) {
                return Err(Error::invalid("ragged feature rows"));
            }
        }
        Ok(Dataset { x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }

    pub fn positives(&self) -> usize {
        self.y.iter().filter(|&&b| b).count()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: idx.iter().map(|&i| self.x[i].clone()).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
        }
    }

    pub fn flipped(&self) -> Dataset {
        Dataset {
            x: self.x.clone(),
            y: self.y.iter().map(|b| !b).collect(),
        }
    }
}

/// Per-feature centering and scaling estimated on training data.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &[Vec<f64>]) -> Self {
        let d = x.first().map_or(0, Vec::len);
        let n = x.len().max(1) as f64;
        let mut mean = vec![0.0; d];
        for r in x {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; d];
        for r in x {
            for j in 0..d {
                var[j] += (r[j] - mean[j]).powi(2) / n;
            }
        }
        let scale = var
            .into_iter()
            .map(|v| if v > 1e-12 { v.sqrt() } else { 1.0 })
            .collect();
        Standardizer { mean, scale }
    }

    pub fn apply(&self, r: &[f64]) -> Vec<f64> {
        r.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn ln_gauss(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + (x - mean).powi(2) / var)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GaussianNb {
    pub prior_pos: f64,
    /// Indexed `[class][feature]`, class 0 negative, class 1 positive.
    pub means: [Vec<f64>; 2],
    pub variances: [Vec<f64>; 2],
}

impl GaussianNb {
    /// `ln P(y=c) + Σ_j ln p(x_j | y=c)`.
    pub fn class_log_joint(&self, x: &[f64], class: usize) -> f64 {
        let prior = if class == 1 { self.prior_pos } else { 1.0 - self.prior_pos };
        prior.ln()
            + x.iter()
                .enumerate()
                .map(|(j, &v)| ln_gauss(v, self.means[class][j], self.variances[class][j]))
                .sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Clustering {
    pub std: Standardizer,
    pub centroids: [Vec<f64>; 2],
    pub variances: [Vec<f64>; 2],
    pub weights: [f64; 2],
    /// Which cluster is mapped to the positive label.
    pub positive: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum Model {
    Linear {
        kind: ModelKind,
        std: Standardizer,
        weights: Vec<f64>,
        bias: f64,
    },
    GaussianNb(GaussianNb),
    Kmeans(Clustering),
    EmGmm(Clustering),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Linear { kind, .. } => *kind,
            Model::GaussianNb(_) => ModelKind::GaussianNb,
            Model::Kmeans(_) => ModelKind::Kmeans,
            Model::EmGmm(_) => ModelKind::EmGmm,
        }
    }

    /// Ranking score; larger means more likely positive.
    ///
    /// * linear SVM: margin `w·x + b`
    /// * logistic: `P(y=1 | x)`
    /// * Gaussian NB: `ln(P(y=1) · Π_j p(x_j | y=1))`, the log of the
    ///   positive-class joint alone (a monotone transform, so ranks match)
    /// * k-means: squared distance to the negative centroid minus squared
    ///   distance to the positive one
    /// * EM-GMM: posterior of the positive component
    pub fn score(&self, x: &[f64]) -> f64 {
        match self {
            Model::Linear { kind, std, weights, bias } => {
                let z = dot(weights, &std.apply(x)) + bias;
                if *kind == ModelKind::Logistic {
                    sigmoid(z)
                } else {
                    z
                }
            }
            Model::GaussianNb(nb) => nb.class_log_joint(x, 1),
            Model::Kmeans(c) => {
                let z = c.std.apply(x);
                sq_dist(&z, &c.centroids[1 - c.positive]) - sq_dist(&z, &c.centroids[c.positive])
            }
            Model::EmGmm(c) => {
                let z = c.std.apply(x);
                gmm_posteriors(c, &z)[c.positive]
            }
        }
    }

    /// Hard decision: margin ≥ 0, probability ≥ 0.5, larger class joint, or
    /// nearest centroid.
    pub fn predict(&self, x: &[f64]) -> bool {
        match self {
            Model::Linear { kind, .. } => {
                let s = self.score(x);
                if *kind == ModelKind::Logistic {
                    s >= 0.5
                } else {
                    s >= 0.0
                }
            }
            Model::GaussianNb(nb) => nb.class_log_joint(x, 1) >= nb.class_log_joint(x, 0),
            Model::Kmeans(_) => self.score(x) > 0.0,
            Model::EmGmm(_) => self.score(x) >= 0.5,
        }
    }
}

fn require_both_classes(data: &Dataset) -> Result<()> {
    let p = data.positives();
    if p == 0 || p == data.len() {
        return Err(Error::Fit("training data must contain both classes".into()));
    }
    Ok(())
}

pub fn fit(kind: ModelKind, data: &Dataset, hyper: &Hyper, seed: u64) -> Result<Model> {
    if data.is_empty() {
        return Err(Error::Fit("no training examples".into()));
    }
    match kind {
        ModelKind::LinearSvm => {
            require_both_classes(data)?;
            let std = Standardizer::fit(&data.x);
            let z: Vec<Vec<f64>> = data.x.iter().map(|r| std.apply(r)).collect();
            let (weights, bias) = pegasos(&z, &data.y, hyper.svm_lambda, hyper.svm_epochs, seed);
            Ok(Model::Linear { kind, std, weights, bias })
        }
        ModelKind::Logistic => {
            require_both_classes(data)?;
            let std = Standardizer::fit(&data.x);
            let z: Vec<Vec<f64>> = data.x.iter().map(|r| std.apply(r)).collect();
            let (weights, bias) = logistic_gd(&z, &data.y, hyper);
            Ok(Model::Linear { kind, std, weights, bias })
        }
        ModelKind::GaussianNb => {
            require_both_classes(data)?;
            Ok(Model::GaussianNb(fit_nb(data)))
        }
        ModelKind::Kmeans => {
            let std = Standardizer::fit(&data.x);
            let z: Vec<Vec<f64>> = data.x.iter().map(|r| std.apply(r)).collect();
            let (centroids, assign) = kmeans2(&z, hyper.cluster_max_iter, seed);
            let positive = best_labeling(&assign, &data.y);
            let d = data.dim();
            Ok(Model::Kmeans(Clustering {
                std,
                centroids,
                variances: [vec![1.0; d], vec![1.0; d]],
                weights: [0.5, 0.5],
                positive,
            }))
        }
        ModelKind::EmGmm => {
            let std = Standardizer::fit(&data.x);
            let z: Vec<Vec<f64>> = data.x.iter().map(|r| std.apply(r)).collect();
            let mut c = fit_gmm(&z, hyper.cluster_max_iter, seed);
            c.std = std;
            let assign: Vec<usize> = z
                .iter()
                .map(|r| {
                    let p = gmm_posteriors(&c, r);
                    usize::from(p[1] > p[0])
                })
                .collect();
            c.positive = best_labeling(&assign, &data.y);
            Ok(Model::EmGmm(c))
        }
    }
}

/// Averaged Pegasos steps for the weights of the hinge loss with L2 penalty,
/// alternating with an exact minimization over the (unpenalized) bias after
/// every epoch.
fn pegasos(x: &[Vec<f64>], y: &[bool], lambda: f64, epochs: usize, seed: u64) -> (Vec<f64>, f64) {
    let d = x[0].len();
    let mut w = vec![0.0; d];
    let mut b = hinge_bias(x, y, &w);
    let mut avg = vec![0.0; d];
    let mut avg_count = 0.0;
    let mut order: Vec<usize> = (0..x.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = 0usize;
    for epoch in 0..epochs.max(1) {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let yi = if y[i] { 1.0 } else { -1.0 };
            let margin = yi * (dot(&w, &x[i]) + b);
            let shrink = 1.0 - eta * lambda;
            w.iter_mut().for_each(|v| *v *= shrink);
            if margin < 1.0 {
                for j in 0..d {
                    w[j] += eta * yi * x[i][j];
                }
            }
            if epoch >= epochs / 2 {
                avg_count += 1.0;
                for j in 0..d {
                    avg[j] += (w[j] - avg[j]) / avg_count;
                }
            }
        }
        b = hinge_bias(x, y, &w);
    }
    let bias = hinge_bias(x, y, &avg);
    (avg, bias)
}

/// The bias minimizing total hinge loss for fixed weights. The loss is
/// piecewise linear in `b` with a kink per example; the midpoint of the
/// minimizing interval is returned so negating every label negates `b`.
fn hinge_bias(x: &[Vec<f64>], y: &[bool], w: &[f64]) -> f64 {
    let mut kinks: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(r, &l)| {
            let s = dot(w, r);
            if l {
                1.0 - s
            } else {
                -1.0 - s
            }
        })
        .collect();
    kinks.sort_by(f64::total_cmp);
    // Slope is -(positives) left of every kink and rises by one at each.
    let mut slope = -(y.iter().filter(|&&l| l).count() as i64);
    for (i, &k) in kinks.iter().enumerate() {
        slope += 1;
        if slope > 0 {
            return k;
        }
        if slope == 0 {
            return match kinks.get(i + 1) {
                Some(&next) => (k + next) / 2.0,
                None => k,
            };
        }
    }
    kinks.last().copied().unwrap_or(0.0)
}

/// L2-regularized logistic regression by gradient descent with Armijo
/// backtracking; the bias is not penalized.
fn logistic_gd(x: &[Vec<f64>], y: &[bool], hyper: &Hyper) -> (Vec<f64>, f64) {
    let n = x.len() as f64;
    let d = x[0].len();
    let lambda = hyper.logistic_lambda;
    let sign: Vec<f64> = y.iter().map(|&b| if b { 1.0 } else { -1.0 }).collect();
    let objective = |w: &[f64], b: f64| -> f64 {
        let data: f64 = x
            .iter()
            .zip(&sign)
            .map(|(r, s)| {
                let m = s * (dot(w, r) + b);
                // ln(1 + e^{-m}) computed stably
                if m > 0.0 {
                    (-m).exp().ln_1p()
                } else {
                    -m + m.exp().ln_1p()
                }
            })
            .sum::<f64>()
            / n;
        data + 0.5 * lambda * dot(w, w)
    };
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut f = objective(&w, b);
    let mut step = 1.0;
    for _ in 0..hyper.logistic_max_iter {
        let mut gw: Vec<f64> = w.iter().map(|v| lambda * v).collect();
        let mut gb = 0.0;
        for (r, s) in x.iter().zip(&sign) {
            let m = s * (dot(&w, r) + b);
            let c = -s * sigmoid(-m) / n;
            for j in 0..d {
                gw[j] += c * r[j];
            }
            gb += c;
        }
        let gnorm2 = dot(&gw, &gw) + gb * gb;
        if gnorm2.sqrt() < hyper.logistic_tol {
            break;
        }
        step *= 2.0;
        loop {
            let nw: Vec<f64> = w.iter().zip(&gw).map(|(v, g)| v - step * g).collect();
            let nb = b - step * gb;
            let nf = objective(&nw, nb);
            if nf <= f - 0.5 * step * gnorm2 || step < 1e-12 {
                w = nw;
                b = nb;
                f = nf;
                break;
            }
            step *= 0.5;
        }
        if step < 1e-12 {
            break;
        }
    }
    (w, b)
}

fn fit_nb(data: &Dataset) -> GaussianNb {
    let d = data.dim();
    let mut means = [vec![0.0; d], vec![0.0; d]];
    let mut variances = [vec![0.0; d], vec![0.0; d]];
    let mut counts = [0.0f64; 2];
    for (r, &l) in data.x.iter().zip(&data.y) {
        let c = usize::from(l);
        counts[c] += 1.0;
        for j in 0..d {
            means[c][j] += r[j];
        }
    }
    for c in 0..2 {
        means[c].iter_mut().for_each(|m| *m /= counts[c]);
    }
    for (r, &l) in data.x.iter().zip(&data.y) {
        let c = usize::from(l);
        for j in 0..d {
            variances[c][j] += (r[j] - means[c][j]).powi(2);
        }
    }
    for c in 0..2 {
        variances[c]
            .iter_mut()
            .for_each(|v| *v = (*v / counts[c]).max(VARIANCE_FLOOR));
    }
    GaussianNb {
        prior_pos: counts[1] / data.len() as f64,
        means,
        variances,
    }
}

/// Cluster index (0 or 1) whose mapping to "positive" gives the higher
/// training accuracy; ties pick cluster 1.
fn best_labeling(assign: &[usize], y: &[bool]) -> usize {
    let agree = assign.iter().zip(y).filter(|(&a, &l)| (a == 1) == l).count();
    if agree * 2 >= assign.len() {
        1
    } else {
        0
    }
}

fn kmeans2(x: &[Vec<f64>], max_iter: usize, seed: u64) -> ([Vec<f64>; 2], Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = x.len();
    // k-means++ seeding
    let first = rng.random_range(0..n);
    let d2: Vec<f64> = x.iter().map(|r| sq_dist(r, &x[first])).collect();
    let total: f64 = d2.iter().sum();
    let second = if total > 0.0 {
        let mut r = rng.random::<f64>() * total;
        let mut pick = n - 1;
        for (i, &w) in d2.iter().enumerate() {
            if r < w {
                pick = i;
                break;
            }
            r -= w;
        }
        pick
    } else {
        (first + 1) % n
    };
    let mut c = [x[first].clone(), x[second].clone()];
    let mut assign = vec![usize::MAX; n];
    for _ in 0..max_iter.max(1) {
        let mut changed = false;
        for (i, r) in x.iter().enumerate() {
            let a = usize::from(sq_dist(r, &c[1]) < sq_dist(r, &c[0]));
            if assign[i] != a {
                assign[i] = a;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        for k in 0..2 {
            let members: Vec<&Vec<f64>> = x.iter().zip(&assign).filter(|(_, &a)| a == k).map(|(r, _)| r).collect();
            if members.is_empty() {
                continue;
            }
            let m = members.len() as f64;
            c[k] = (0..x[0].len()).map(|j| members.iter().map(|r| r[j]).sum::<f64>() / m).collect();
        }
    }
    (c, assign)
}

fn gmm_component_ll(c: &Clustering, z: &[f64], k: usize) -> f64 {
    c.weights[k].ln()
        + z.iter()
            .enumerate()
            .map(|(j, &v)| ln_gauss(v, c.centroids[k][j], c.variances[k][j]))
            .sum::<f64>()
}

fn gmm_posteriors(c: &Clustering, z: &[f64]) -> [f64; 2] {
    let a = gmm_component_ll(c, z, 0);
    let b = gmm_component_ll(c, z, 1);
    let m = a.max(b);
    let (ea, eb) = ((a - m).exp(), (b - m).exp());
    [ea / (ea + eb), eb / (ea + eb)]
}

/// Two diagonal Gaussians by EM, initialized from k-means.
fn fit_gmm(z: &[Vec<f64>], max_iter: usize, seed: u64) -> Clustering {
    let (centroids, assign) = kmeans2(z, max_iter, seed);
    let d = z[0].len();
    let n = z.len() as f64;
    let mut resp: Vec<[f64; 2]> = assign
        .iter()
        .map(|&a| if a == 1 { [0.0, 1.0] } else { [1.0, 0.0] })
        .collect();
    let mut c = Clustering {
        std: Standardizer { mean: vec![0.0; d], scale: vec![1.0; d] },
        centroids,
        variances: [vec![1.0; d], vec![1.0; d]],
        weights: [0.5, 0.5],
        positive: 1,
    };
    let mut prev_ll = f64::NEG_INFINITY;
    for _ in 0..max_iter.max(1) {
        // M step
        for k in 0..2 {
            let nk: f64 = resp.iter().map(|r| r[k]).sum::<f64>().max(1e-9);
            c.weights[k] = (nk / n).clamp(1e-9, 1.0 - 1e-9);
            for j in 0..d {
                let mean = z.iter().zip(&resp).map(|(r, p)| p[k] * r[j]).sum::<f64>() / nk;
                let var = z.iter().zip(&resp).map(|(r, p)| p[k] * (r[j] - mean).powi(2)).sum::<f64>() / nk;
                c.centroids[k][j] = mean;
                c.variances[k][j] = var.max(VARIANCE_FLOOR);
            }
        }
        // E step
        let mut ll = 0.0;
        for (r, p) in z.iter().zip(resp.iter_mut()) {
            let a = gmm_component_ll(&c, r, 0);
            let b = gmm_component_ll(&c, r, 1);
            let m = a.max(b);
            let s = (a - m).exp() + (b - m).exp();
            ll += m + s.ln();
            *p = [(a - m).exp() / s, (b - m).exp() / s];
        }
        if (ll - prev_ll).abs() < 1e-8 * ll.abs().max(1.0) {
            break;
        }
        prev_ll = ll;
    }
    c
}

/// Area under the ROC curve as the Mann–Whitney statistic with midranks.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::invalid("scores and labels differ in length"));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("AUC needs both classes".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their average
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            if labels[k] {
                rank_sum += mid;
            }
        }
        i = j + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// Assigns each example to one of `folds` folds, class by class, so every
/// fold gets a near-equal share of each label. Retries with derived seeds
/// until every test fold and every training split holds both classes.
pub fn stratified_folds(y: &[bool], folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::invalid("need at least 2 folds"));
    }
    if y.len() < folds {
        return Err(Error::invalid(format!("{} examples cannot fill {folds} folds", y.len())));
    }
    for attempt in 0..STRATIFY_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt as u64));
        // One shared permutation, dealt round-robin within each class, so the
        // assignment does not change when every label is flipped.
        let mut order: Vec<usize> = (0..y.len()).collect();
        order.shuffle(&mut rng);
        let mut fold_of = vec![0usize; y.len()];
        let mut dealt = [0usize; 2];
        for i in order {
            let c = usize::from(y[i]);
            fold_of[i] = dealt[c] % folds;
            dealt[c] += 1;
        }
        let ok = (0..folds).all(|f| {
            let (mut tp, mut tn, mut rp, mut rn) = (0, 0, 0, 0);
            for (i, &l) in y.iter().enumerate() {
                match (fold_of[i] == f, l) {
                    (true, true) => tp += 1,
                    (true, false) => tn += 1,
                    (false, true) => rp += 1,
                    (false, false) => rn += 1,
                }
            }
            tp > 0 && tn > 0 && rp > 0 && rn > 0
        });
        if ok {
            return Ok(fold_of);
        }
    }
    Err(Error::Stratification(STRATIFY_ATTEMPTS))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldResult {
    pub auc: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalMetrics {
    pub kind: ModelKind,
    pub auc: f64,
    pub auc_std: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub accuracy: f64,
    pub accuracy_std: f64,
    pub folds: Vec<FoldResult>,
}

pub(crate) fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Fits on each training split and evaluates on the held-out fold. AUC is
/// averaged over folds (sample standard deviation alongside); precision,
/// recall and F are computed from confusion counts pooled over all folds.
pub fn cross_validate(
    data: &Dataset,
    kind: ModelKind,
    folds: usize,
    hyper: &Hyper,
    seed: u64,
) -> Result<EvalMetrics> {
    let (results, _) = run_folds(data, kind, folds, hyper, seed)?;
    let aucs: Vec<f64> = results.iter().map(|r| r.auc).collect();
    let accs: Vec<f64> = results.iter().map(|r| r.accuracy).collect();
    let (auc_mean, auc_std) = mean_std(&aucs);
    let (acc_mean, acc_std) = mean_std(&accs);
    let tp: usize = results.iter().map(|r| r.tp).sum();
    let fp: usize = results.iter().map(|r| r.fp).sum();
    let fneg: usize = results.iter().map(|r| r.fn_).sum();
    let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
    let recall = if tp + fneg > 0 { tp as f64 / (tp + fneg) as f64 } else { 0.0 };
    let f_measure = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(EvalMetrics {
        kind,
        auc: auc_mean,
        auc_std,
        precision,
        recall,
        f_measure,
        accuracy: acc_mean,
        accuracy_std: acc_std,
        folds: results,
    })
}

/// Per-fold results plus the fitted models, in fold order.
pub fn run_folds(
    data: &Dataset,
    kind: ModelKind,
    folds: usize,
    hyper: &Hyper,
    seed: u64,
) -> Result<(Vec<FoldResult>, Vec<Model>)> {
    let fold_of = stratified_folds(&data.y, folds, seed)?;
    let out: Vec<(FoldResult, Model)> = (0..folds)
        .into_par_iter()
        .map(|f| {
            let train: Vec<usize> = (0..data.len()).filter(|&i| fold_of[i] != f).collect();
            let test: Vec<usize> = (0..data.len()).filter(|&i| fold_of[i] == f).collect();
            let model = fit(kind, &data.subset(&train), hyper, seed.wrapping_add(f as u64))?;
            let scores: Vec<f64> = test.iter().map(|&i| model.score(&data.x[i])).collect();
            let labels: Vec<bool> = test.iter().map(|&i| data.y[i]).collect();
            let (mut tp, mut fp, mut fneg, mut tn) = (0, 0, 0, 0);
            for &i in &test {
                match (model.predict(&data.x[i]), data.y[i]) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fneg += 1,
                    (false, false) => tn += 1,
                }
            }
            Ok((
                FoldResult {
                    auc: auc(&scores, &labels)?,
                    tp,
                    fp,
                    fn_: fneg,
                    tn,
                    accuracy: (tp + tn) as f64 / test.len() as f64,
                },
                model,
            ))
        })
        .collect::<Result<_>>()?;
    Ok(out.into_iter().unzip())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9, 0.8, 0.7, 0.6], &[true, true, false, false]).unwrap(), 1.0);
        assert_eq!(auc(&[1.0; 4], &[true, false, true, false]).unwrap(), 0.5);
        assert_eq!(auc(&[0.9, 0.8, 0.7, 0.6], &[true, false, true, false]).unwrap(), 0.75);
        assert!(matches!(auc(&[0.1, 0.2], &[true, true]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn logistic_separable_line() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        let y: Vec<bool> = (0..20).map(|i| i >= 10).collect();
        let d = Dataset::new(x.clone(), y.clone()).unwrap();
        let m = fit(ModelKind::Logistic, &d, &Hyper::default(), 0).unwrap();
        let s: Vec<f64> = x.iter().map(|r| m.score(r)).collect();
        assert_eq!(auc(&s, &y).unwrap(), 1.0);
        assert!(x.iter().zip(&y).all(|(r, &l)| m.predict(r) == l));
    }

    #[test]
    fn nb_parameters_closed_form() {
        let x = vec![vec![1.0], vec![3.0], vec![10.0], vec![14.0]];
        let y = vec![false, false, true, true];
        let m = fit(ModelKind::GaussianNb, &Dataset::new(x, y).unwrap(), &Hyper::default(), 0).unwrap();
        let Model::GaussianNb(nb) = m else { panic!() };
        assert_eq!(nb.prior_pos, 0.5);
        assert_eq!(nb.means[0], vec![2.0]);
        assert_eq!(nb.means[1], vec![12.0]);
        assert_eq!(nb.variances[0], vec![1.0]);
        assert_eq!(nb.variances[1], vec![4.0]);
    }

    #[test]
    fn nb_decision_is_argmax_of_class_joints() {
        let x = vec![vec![0.0, 1.0], vec![1.0, 0.5], vec![4.0, 3.0], vec![5.0, 2.0], vec![2.0, 2.0]];
        let y = vec![false, false, true, true, false];
        let m = fit(ModelKind::GaussianNb, &Dataset::new(x, y).unwrap(), &Hyper::default(), 0).unwrap();
        let Model::GaussianNb(nb) = &m else { panic!() };
        for probe in [[0.5, 0.7], [3.0, 2.5], [2.5, 1.0], [10.0, -3.0]] {
            let a = nb.class_log_joint(&probe, 1);
            let b = nb.class_log_joint(&probe, 0);
            assert_eq!(m.predict(&probe), a >= b);
            assert_eq!(m.score(&probe), a);
        }
    }

    #[test]
    fn single_class_rejected_for_supervised() {
        let d = Dataset::new(vec![vec![1.0], vec![2.0]], vec![true, true]).unwrap();
        for k in [ModelKind::LinearSvm, ModelKind::Logistic, ModelKind::GaussianNb] {
            assert!(matches!(fit(k, &d, &Hyper::default(), 0), Err(Error::Fit(_))));
        }
        assert!(fit(ModelKind::Kmeans, &d, &Hyper::default(), 0).is_ok());
    }

    #[test]
    fn svm_flip_negates_weights() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![(i % 7) as f64, (i * 3 % 11) as f64]).collect();
        let y: Vec<bool> = (0..40).map(|i| (i % 7) + (i * 3 % 11) > 8).collect();
        let d = Dataset::new(x, y).unwrap();
        let h = Hyper::default();
        let (Model::Linear { weights: a, bias: ba, .. }, Model::Linear { weights: b, bias: bb, .. }) =
            (fit(ModelKind::LinearSvm, &d, &h, 3).unwrap(), fit(ModelKind::LinearSvm, &d.flipped(), &h, 3).unwrap())
        else {
            panic!()
        };
        for (u, v) in a.iter().zip(&b) {
            assert!((u + v).abs() < 1e-12);
        }
        assert!((ba + bb).abs() < 1e-12);
    }

    #[test]
    fn hinge_bias_minimizes_loss() {
        let x: Vec<Vec<f64>> = [0.3, -1.2, 2.0, 0.1, -0.4, 1.5, 0.0].iter().map(|&v| vec![v]).collect();
        let y = vec![true, false, true, false, true, true, false];
        let w = [0.7];
        let total = |b: f64| -> f64 {
            x.iter()
                .zip(&y)
                .map(|(r, &l)| (1.0 - if l { 1.0 } else { -1.0 } * (w[0] * r[0] + b)).max(0.0))
                .sum()
        };
        let b = hinge_bias(&x, &y, &w);
        for k in -300..300 {
            assert!(total(b) <= total(k as f64 / 100.0) + 1e-12);
        }
        // zero weights: the bias alone predicts the majority class
        assert!(hinge_bias(&x, &y, &[0.0]) > 0.0);
    }

    #[test]
    fn clustering_separates_far_blobs() {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..30 {
            let t = i as f64 * 0.01;
            x.push(vec![t, -t]);
            y.push(false);
            x.push(vec![10.0 + t, 10.0 - t]);
            y.push(true);
        }
        let d = Dataset::new(x.clone(), y.clone()).unwrap();
        for k in [ModelKind::Kmeans, ModelKind::EmGmm] {
            let m = fit(k, &d, &Hyper::default(), 1).unwrap();
            let s: Vec<f64> = x.iter().map(|r| m.score(r)).collect();
            assert_eq!(auc(&s, &y).unwrap(), 1.0, "{k:?}");
            assert!(x.iter().zip(&y).all(|(r, &l)| m.predict(r) == l), "{k:?}");
        }
    }

    #[test]
    fn folds_are_stratified() {
        let y: Vec<bool> = (0..60).map(|i| i % 4 == 0).collect();
        let f = stratified_folds(&y, 15, 2).unwrap();
        for k in 0..15 {
            assert_eq!(f.iter().zip(&y).filter(|(&a, &l)| a == k && l).count(), 1);
            assert_eq!(f.iter().filter(|&&a| a == k).count(), 4);
        }
        let flipped: Vec<bool> = y.iter().map(|l| !l).collect();
        assert_eq!(stratified_folds(&flipped, 15, 2).unwrap(), f);
        assert!(matches!(stratified_folds(&[true, false, false], 3, 0), Err(Error::Stratification(_))));
    }
}

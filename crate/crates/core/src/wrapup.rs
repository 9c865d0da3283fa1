//! Wrap-up time against the time at which key decisions finish, fit by a
//! two-segment linear model.

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WrapupPoint {
    pub meeting: String,
    /// Minutes until the last decision window ends.
    pub x: f64,
    /// Minutes from then until the meeting's last act.
    pub y: f64,
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Extraction {
    pub points: Vec<WrapupPoint>,
    /// Ids of meetings without decision windows.
    pub skipped: Vec<String>,
}

pub fn extract_points(corpus: &Corpus) -> Extraction {
    let mut out = Extraction::default();
    for m in &corpus.meetings {
        let Some(end) = m.decision_windows.iter().map(|w| w.1).reduce(f64::max) else {
            log::warn!("meeting {} has no decision windows; skipped", m.id);
            out.skipped.push(m.id.clone());
            continue;
        };
        let x = end / 60.0;
        let raw = (m.last_time() - end) / 60.0;
        out.points.push(WrapupPoint {
            meeting: m.id.clone(),
            x,
            y: raw.max(0.0),
            clamped: raw < 0.0,
        });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseModel {
    pub breakpoint: f64,
    pub left_slope: f64,
    pub left_intercept: f64,
    pub right_slope: f64,
    pub right_intercept: f64,
    pub sse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub minutes: f64,
    pub floored: bool,
}

impl PiecewiseModel {
    /// The left segment applies up to and including the breakpoint.
    pub fn predict(&self, x: f64) -> Prediction {
        let raw = if x <= self.breakpoint {
            self.left_slope * x + self.left_intercept
        } else {
            self.right_slope * x + self.right_intercept
        };
        Prediction { minutes: raw.max(0.0), floored: raw < 0.0 }
    }

    pub fn sse_on(&self, points: &[(f64, f64)]) -> f64 {
        points
            .iter()
            .map(|&(x, y)| {
                let f = if x <= self.breakpoint {
                    self.left_slope * x + self.left_intercept
                } else {
                    self.right_slope * x + self.right_intercept
                };
                (y - f).powi(2)
            })
            .sum()
    }
}

pub fn predict_wrapup(model: &PiecewiseModel, x: f64) -> Prediction {
    model.predict(x)
}

/// Least-squares line through `pts`; returns (slope, intercept, sse).
/// With a single distinct x the slope is 0.
pub fn ols(pts: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let sse = pts.iter().map(|p| (p.1 - slope * p.0 - intercept).powi(2)).sum();
    (slope, intercept, sse)
}

/// Grid search over midpoints between consecutive distinct x values, with at
/// least two points on each side; independent OLS segments; the smallest
/// total SSE wins, earlier (smaller) breakpoints on ties.
pub fn fit_piecewise(points: &[(f64, f64)]) -> Result<PiecewiseModel> {
    if points.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
        return Err(Error::invalid("points must be finite"));
    }
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut best: Option<PiecewiseModel> = None;
    for split in 2..pts.len().saturating_sub(1) {
        if pts[split - 1].0 == pts[split].0 {
            continue;
        }
        let breakpoint = (pts[split - 1].0 + pts[split].0) / 2.0;
        let (ls, li, le) = ols(&pts[..split]);
        let (rs, ri, re) = ols(&pts[split..]);
        let sse = le + re;
        if best.is_none_or(|b| sse < b.sse) {
            best = Some(PiecewiseModel {
                breakpoint,
                left_slope: ls,
                left_intercept: li,
                right_slope: rs,
                right_intercept: ri,
                sse,
            });
        }
    }
    best.ok_or_else(|| Error::Fit("need at least 2 points on each side of some breakpoint".into()))
}

pub fn points_csv(points: &[WrapupPoint]) -> String {
    let mut s = String::from("meeting,x_minutes,y_minutes,clamped\n");
    for p in points {
        s.push_str(&format!("{},{},{},{}\n", p.meeting, p.x, p.y, p.clamped));
    }
    s
}

/// Plot-ready rows: each point with its fitted value.
pub fn fit_csv(model: &PiecewiseModel, points: &[WrapupPoint]) -> String {
    let mut s = String::from("x,y,y_hat\n");
    for p in points {
        s.push_str(&format!("{},{},{}\n", p.x, p.y, model.predict(p.x).minutes));
    }
    s
}

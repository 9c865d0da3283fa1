//! Size of the template class and the uniform risk bound built on it.
//!
//! The class of templates with at most `L` nodes and at most `B` backward
//! arrows over an alphabet of size `|Λ|` is counted (from above) by
//!
//! ```text
//! Σ_{n=0..L} |Λ|^n · Σ_{b=0..min(B,n)} C(n(n-1)/2, b)
//! ```
//!
//! and Hoeffding plus a union bound over that class gives, with probability
//! at least `1 - δ`, `R_true ≤ R_emp + sqrt((ln count + ln(1/δ)) / 2m)`.
//! Logarithms are natural throughout.

use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;

use crate::corpus::Sym;
use crate::error::{Error, Result};
use crate::template::Template;

/// Default ceiling on [`enumerate_templates`] output.
pub const DEFAULT_ENUMERATION_LIMIT: usize = 1_000_000;

fn lower_triangle(n: u64) -> u64 {
    n * n.saturating_sub(1) / 2
}

fn binomial_u128(a: u64, b: u64) -> Option<u128> {
    if b > a {
        return Some(0);
    }
    let b = b.min(a - b);
    let mut acc: u128 = 1;
    for i in 0..b {
        // acc * (a - i) is divisible by (i + 1) at every step.
        acc = acc.checked_mul((a - i) as u128)? / (i as u128 + 1);
    }
    Some(acc)
}

/// The class-size formula in exact integer arithmetic; `None` on overflow.
pub fn count_templates_exact(max_len: u64, max_back: u64, alphabet_size: u64) -> Option<u128> {
    let mut total: u128 = 0;
    let mut power: u128 = 1;
    for n in 0..=max_len {
        if n > 0 {
            power = power.checked_mul(alphabet_size as u128)?;
        }
        let mut arrows: u128 = 0;
        for b in 0..=max_back.min(n) {
            arrows = arrows.checked_add(binomial_u128(lower_triangle(n), b)?)?;
        }
        total = total.checked_add(power.checked_mul(arrows)?)?;
    }
    Some(total)
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Natural log of the class-size formula, computed entirely in log space.
pub fn log_count_templates_logspace(max_len: u64, max_back: u64, alphabet_size: u64) -> f64 {
    let ln_a = (alphabet_size as f64).ln();
    let mut outer = Vec::with_capacity(max_len as usize + 1);
    for n in 0..=max_len {
        if n > 0 && alphabet_size == 0 {
            break;
        }
        let slots = lower_triangle(n);
        let inner: Vec<f64> = (0..=max_back.min(n).min(slots))
            .map(|b| ln_binomial(slots, b))
            .collect();
        let labels = if n == 0 { 0.0 } else { n as f64 * ln_a };
        outer.push(labels + log_sum_exp(&inner));
    }
    log_sum_exp(&outer)
}

/// Natural log of the class-size formula. Uses exact integers while the
/// count stays at or below `exact_budget`, log space beyond that.
pub fn log_count_templates_with_budget(
    max_len: u64,
    max_back: u64,
    alphabet_size: u64,
    exact_budget: u128,
) -> f64 {
    match count_templates_exact(max_len, max_back, alphabet_size) {
        Some(c) if c <= exact_budget => (c as f64).ln(),
        _ => log_count_templates_logspace(max_len, max_back, alphabet_size),
    }
}

/// Natural log of the class-size formula (exact when it fits in 2^53).
pub fn log_count_templates(max_len: u64, max_back: u64, alphabet_size: u64) -> f64 {
    log_count_templates_with_budget(max_len, max_back, alphabet_size, 1u128 << 53)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub r_emp: f64,
    pub m: u64,
    pub max_len: u64,
    pub max_back: u64,
    pub alphabet_size: u64,
    pub delta: f64,
    /// Width of the loss range assumed by Hoeffding's inequality; 1 applies
    /// the bound exactly as the formula is printed.
    #[serde(default = "unit_scale")]
    pub loss_scale: f64,
}

fn unit_scale() -> f64 {
    1.0
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::invalid("m must be at least 1"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid("delta must lie in (0, 1)"));
        }
        if !(self.r_emp >= 0.0) {
            return Err(Error::invalid("r_emp must be nonnegative"));
        }
        if !(self.loss_scale > 0.0) {
            return Err(Error::invalid("loss_scale must be positive"));
        }
        Ok(())
    }
}

/// `R_emp + scale · sqrt((ln count + ln(1/δ)) / 2m)`.
pub fn risk_bound(inputs: &BoundInputs) -> Result<f64> {
    inputs.validate()?;
    let log_count = log_count_templates(inputs.max_len, inputs.max_back, inputs.alphabet_size);
    let slack = ((log_count + (1.0 / inputs.delta).ln()) / (2.0 * inputs.m as f64)).sqrt();
    Ok(inputs.r_emp + inputs.loss_scale * slack)
}

/// Whether the class-size formula equals the number of distinct templates.
/// The formula truncates the arrow count at `n`, while a template with `n`
/// nodes has `n(n-1)/2` arrow slots, so the two agree exactly when every
/// length has `min(B, n(n-1)/2) ≤ n`.
pub fn formula_is_exact(max_len: u64, max_back: u64) -> bool {
    (0..=max_len).all(|n| max_back.min(lower_triangle(n)) <= n)
}

/// Every nonempty template with at most `max_len` nodes and `max_back` back
/// edges. The empty template is not included; count it separately.
pub fn enumerate_templates(
    max_len: usize,
    max_back: usize,
    alphabet_size: usize,
    limit: usize,
) -> Result<Vec<Template>> {
    let mut expected: u128 = 0;
    for n in 1..=max_len as u64 {
        let labels = (alphabet_size as u128)
            .checked_pow(n as u32)
            .ok_or_else(|| Error::Refused("template count overflows".into()))?;
        let slots = lower_triangle(n);
        let arrows: u128 = (0..=(max_back as u64).min(slots))
            .map(|b| binomial_u128(slots, b).unwrap_or(u128::MAX))
            .fold(0u128, |a, x| a.saturating_add(x));
        expected = expected.saturating_add(labels.saturating_mul(arrows));
    }
    if expected > limit as u128 {
        return Err(Error::Refused(format!(
            "{expected} templates exceed the enumeration limit {limit}"
        )));
    }

    let mut out = Vec::with_capacity(expected as usize);
    for n in 1..=max_len {
        let slots: Vec<(usize, usize)> = (1..n).flat_map(|f| (0..f).map(move |t| (f, t))).collect();
        let mut edge_sets = Vec::new();
        subsets_up_to(&slots, max_back, 0, &mut Vec::new(), &mut edge_sets);
        let mut labels = vec![0usize; n];
        loop {
            let nodes: Vec<Sym> = labels.iter().map(|&l| Sym(l as u16)).collect();
            for edges in &edge_sets {
                out.push(Template::new(nodes.clone(), edges.iter().copied())?);
            }
            // odometer over label assignments
            let mut i = 0;
            while i < n {
                labels[i] += 1;
                if labels[i] < alphabet_size {
                    break;
                }
                labels[i] = 0;
                i += 1;
            }
            if i == n || alphabet_size == 0 {
                break;
            }
        }
    }
    Ok(out)
}

fn subsets_up_to(
    items: &[(usize, usize)],
    max: usize,
    start: usize,
    cur: &mut Vec<(usize, usize)>,
    out: &mut Vec<Vec<(usize, usize)>>,
) {
    out.push(cur.clone());
    if cur.len() == max {
        return;
    }
    for i in start..items.len() {
        cur.push(items[i]);
        subsets_up_to(items, max, i + 1, cur, out);
        cur.pop();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn small_counts() {
        assert_eq!(count_templates_exact(1, 0, 2), Some(3));
        assert_eq!(count_templates_exact(2, 1, 2), Some(11));
        assert_eq!(count_templates_exact(0, 5, 7), Some(1));
        assert_eq!(count_templates_exact(2, 2, 1), Some(4));
        assert!((log_count_templates(1, 0, 2) - 3f64.ln()).abs() < 1e-15);
        assert_eq!(log_count_templates(0, 3, 4), 0.0);
    }

    #[test]
    fn overflow_falls_back_to_logspace() {
        assert_eq!(count_templates_exact(200, 5, 10), None);
        let l = log_count_templates(200, 5, 10);
        assert!(l.is_finite() && l > 200.0 * 10f64.ln());
    }

    #[test]
    fn enumeration_matches_small_cases() {
        assert_eq!(enumerate_templates(1, 0, 2, 100).unwrap().len() + 1, 3);
        assert_eq!(enumerate_templates(2, 2, 1, 100).unwrap().len(), 3);
        assert_eq!(enumerate_templates(2, 1, 2, 100).unwrap().len() + 1, 11);
    }

    #[test]
    fn enumeration_is_distinct() {
        let all = enumerate_templates(3, 2, 2, 10_000).unwrap();
        let set: HashSet<_> = all.iter().cloned().collect();
        assert_eq!(set.len(), all.len());
        assert!(all.iter().all(|t| t.satisfies_caps(3, 2)));
    }

    #[test]
    fn enumeration_limit_refuses() {
        assert!(matches!(enumerate_templates(6, 2, 4, 1000), Err(Error::Refused(_))));
    }

    #[test]
    fn formula_undercounts_dense_arrows() {
        // n = 4 has 6 arrow slots but the formula stops at b = 4.
        assert!(!formula_is_exact(4, 5));
        let enumerated = enumerate_templates(4, 5, 1, 1000).unwrap().len() as u128 + 1;
        assert!(enumerated > count_templates_exact(4, 5, 1).unwrap());
        assert!(formula_is_exact(3, 2));
    }

    #[test]
    fn bound_validation() {
        let mut b = BoundInputs {
            r_emp: 0.5,
            m: 95,
            max_len: 3,
            max_back: 1,
            alphabet_size: 4,
            delta: 0.05,
            loss_scale: 1.0,
        };
        assert!(risk_bound(&b).is_ok());
        b.delta = 1.0;
        assert!(risk_bound(&b).is_err());
        b.delta = 0.05;
        b.m = 0;
        assert!(risk_bound(&b).is_err());
    }

    #[test]
    fn bound_tends_to_empirical_risk() {
        let b = BoundInputs {
            r_emp: 0.25,
            m: 1 << 40,
            max_len: 5,
            max_back: 2,
            alphabet_size: 4,
            delta: 0.05,
            loss_scale: 1.0,
        };
        assert!((risk_bound(&b).unwrap() - 0.25).abs() < 1e-5);
    }
}

//! Spearman rank correlation with an exact permutation p-value for small n.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Largest n for which the p-value is computed by full enumeration.
pub const EXACT_MAX_N: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum TieMethod {
    /// Tied values share the mean of their ranks.
    #[default]
    Average,
    /// Tied values are ranked in order of appearance.
    Ordinal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    /// Positive association: p = P(rho_perm >= rho).
    #[default]
    Greater,
    /// p = P(|rho_perm| >= |rho|).
    TwoSided,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PValueMethod {
    Exact,
    TApprox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SpearmanOptions {
    pub ties: TieMethod,
    pub alternative: Alternative,
    /// Use the t approximation even when exact enumeration is possible.
    pub force_t_approx: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub rho: f64,
    pub p_value: f64,
    pub n: usize,
    pub method: PValueMethod,
    pub alternative: Alternative,
    pub ties: TieMethod,
}

/// Ranks starting at 1, doubled so that average ranks stay integral.
fn doubled_ranks(values: &[f64], ties: TieMethod) -> Vec<i64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut ranks = vec![0i64; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        if ties == TieMethod::Average {
            while j + 1 < n && values[order[j + 1]] == values[order[i]] {
                j += 1;
            }
        }
        // positions i..=j (0-based) share rank (i + j) / 2 + 1
        let doubled = (i + j) as i64 + 2;
        for &k in &order[i..=j] {
            ranks[k] = doubled;
        }
        i = j + 1;
    }
    ranks
}

/// Ranks (1-based) with the chosen tie rule.
pub fn ranks(values: &[f64], ties: TieMethod) -> Vec<f64> {
    doubled_ranks(values, ties)
        .into_iter()
        .map(|r| r as f64 / 2.0)
        .collect()
}

fn centered(doubled: &[i64]) -> Vec<i64> {
    // mean doubled rank is n + 1
    let n = doubled.len() as i64;
    doubled.iter().map(|r| r - (n + 1)).collect()
}

fn dot(a: &[i64], b: &[i64]) -> i64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<CorrelationReport> {
    spearman_with(x, y, &SpearmanOptions::default())
}

pub fn spearman_with(x: &[f64], y: &[f64], opts: &SpearmanOptions) -> Result<CorrelationReport> {
    let n = x.len();
    if n != y.len() {
        return Err(Error::Config(format!("length mismatch: {} vs {}", n, y.len())));
    }
    if n < 3 {
        return Err(Error::Config(format!("spearman needs at least 3 pairs, got {n}")));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Data("spearman inputs must be finite".into()));
    }
    let cx = centered(&doubled_ranks(x, opts.ties));
    let cy = centered(&doubled_ranks(y, opts.ties));
    let sxx = dot(&cx, &cx);
    let syy = dot(&cy, &cy);
    if sxx == 0 || syy == 0 {
        return Err(Error::Data("spearman is undefined for a constant input".into()));
    }
    let observed = dot(&cx, &cy);
    let denom = ((sxx as f64) * (syy as f64)).sqrt();
    let rho = (observed as f64 / denom).clamp(-1.0, 1.0);

    let (p_value, method) = if n <= EXACT_MAX_N && !opts.force_t_approx {
        (exact_p(&cx, &cy, observed, opts.alternative), PValueMethod::Exact)
    } else {
        (t_approx_p(rho, n, opts.alternative), PValueMethod::TApprox)
    };
    Ok(CorrelationReport {
        rho,
        p_value,
        n,
        method,
        alternative: opts.alternative,
        ties: opts.ties,
    })
}

/// Fraction of all n! permutations of `cy` whose statistic is at least as
/// extreme as the observed one. Comparisons are exact integer arithmetic.
fn exact_p(cx: &[i64], cy: &[i64], observed: i64, alt: Alternative) -> f64 {
    let n = cy.len();
    let mut perm = cy.to_vec();
    let mut c = vec![0usize; n];
    let extreme = |d: i64| match alt {
        Alternative::Greater => d >= observed,
        Alternative::TwoSided => d.abs() >= observed.abs(),
    };
    let mut hits = u64::from(extreme(dot(cx, &perm)));
    let mut total = 1u64;
    // Heap's algorithm
    let mut i = 1;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            total += 1;
            hits += u64::from(extreme(dot(cx, &perm)));
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    hits as f64 / total as f64
}

fn t_approx_p(rho: f64, n: usize, alt: Alternative) -> f64 {
    let df = (n - 2) as f64;
    let dist = StudentsT::new(0.0, 1.0, df).expect("df >= 1");
    let p = if rho.abs() >= 1.0 {
        0.0
    } else {
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        match alt {
            Alternative::Greater => 1.0 - dist.cdf(t),
            Alternative::TwoSided => 2.0 * (1.0 - dist.cdf(t.abs())),
        }
    };
    // no permutation test can go below 1/n!
    p.clamp(1.0 / factorial(n), 1.0)
}

//! Paired significance tests: two-sided paired t-test and Wilcoxon
//! signed-rank test.

use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};

/// Largest sample size (after dropping zero differences) for which the
/// Wilcoxon null distribution is enumerated exactly.
pub const WILCOXON_EXACT_MAX: usize = 25;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WilcoxonMethod {
    Exact,
    Normal,
    /// All differences were zero.
    Degenerate,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairedTests {
    pub n: usize,
    pub mean_diff: f64,
    pub t_stat: f64,
    pub t_p: f64,
    /// Sum of ranks of positive differences.
    pub w_plus: f64,
    pub w_p: f64,
    pub w_method: WilcoxonMethod,
}

impl PairedTests {
    pub fn degenerate(&self) -> bool {
        self.w_method == WilcoxonMethod::Degenerate
    }

    /// Stars for the t-test p-value.
    pub fn stars(&self) -> &'static str {
        stars(self.t_p)
    }
}

/// `***` for p < 0.001, `**` for p < 0.01, `*` for p < 0.05, otherwise empty.
pub fn stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

fn diffs(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "paired samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::InvalidArgument(format!("paired tests need n >= 2, got {}", a.len())));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("paired samples contain non-finite values".into()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x - y).collect())
}

/// Two-sided paired t-test on `a - b`; returns `(t, p)`.
pub fn paired_t(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    let d = diffs(a, b)?;
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        return Ok(if mean == 0.0 {
            (0.0, 1.0)
        } else {
            (mean.signum() * f64::INFINITY, 0.0)
        });
    }
    let t = mean / (var / n).sqrt();
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok((t, (2.0 * dist.cdf(-t.abs())).min(1.0)))
}

/// Average ranks (1-based) of `v`; also returns the tie-group sizes.
fn rank_abs(v: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].abs().total_cmp(&v[j].abs()));
    let mut ranks = vec![0.0; v.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]].abs() == v[idx[i]].abs() {
            j += 1;
        }
        let avg = (i + j + 2) as f64 / 2.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        if j > i {
            ties.push(j - i + 1);
        }
        i = j + 1;
    }
    (ranks, ties)
}

/// Number of subsets of {1..n} with each rank sum, index = sum.
fn signed_rank_counts(n: usize) -> Vec<f64> {
    let max = n * (n + 1) / 2;
    let mut c = vec![0.0; max + 1];
    c[0] = 1.0;
    for k in 1..=n {
        for s in (k..=max).rev() {
            c[s] += c[s - k];
        }
    }
    c
}

/// Wilcoxon signed-rank test on `a - b` with zero differences dropped.
/// Returns `(W+, p, method)`.
pub fn wilcoxon(a: &[f64], b: &[f64]) -> Result<(f64, f64, WilcoxonMethod)> {
    let d: Vec<f64> = diffs(a, b)?.into_iter().filter(|&v| v != 0.0).collect();
    let n = d.len();
    if n == 0 {
        return Ok((0.0, 1.0, WilcoxonMethod::Degenerate));
    }
    let (ranks, ties) = rank_abs(&d);
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let total = (n * (n + 1) / 2) as f64;
    let w_min = w_plus.min(total - w_plus);

    if n <= WILCOXON_EXACT_MAX && ties.is_empty() {
        let counts = signed_rank_counts(n);
        let below: f64 = counts[..=(w_min as usize)].iter().sum();
        let p = (2.0 * below / 2f64.powi(n as i32)).min(1.0);
        return Ok((w_plus, p, WilcoxonMethod::Exact));
    }

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
    if var <= 0.0 {
        return Ok((w_plus, 1.0, WilcoxonMethod::Normal));
    }
    let z = (w_min - mean) / var.sqrt();
    let p = (2.0 * Normal::standard().cdf(z)).min(1.0);
    Ok((w_plus, p, WilcoxonMethod::Normal))
}

pub fn paired_tests(a: &[f64], b: &[f64]) -> Result<PairedTests> {
    let (t_stat, t_p) = paired_t(a, b)?;
    let (w_plus, w_p, w_method) = wilcoxon(a, b)?;
    let n = a.len();
    Ok(PairedTests {
        n,
        mean_diff: a.iter().zip(b).map(|(x, y)| x - y).sum::<f64>() / n as f64,
        t_stat,
        t_p,
        w_plus,
        w_p,
        w_method,
    })
}

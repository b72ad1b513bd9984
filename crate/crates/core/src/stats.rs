//! Pearson correlation and chi-square independence tests between runs.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_traits::{Float, FromPrimitive};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::Category;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("vectors have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least two observations, got {0}")]
    TooFew(usize),
    #[error("correlation undefined: both vectors are constant")]
    Undefined,
    #[error("contingency table must have at least two rows and two columns")]
    TableShape,
    #[error("contingency table rows have different lengths")]
    Ragged,
    #[error("row {0} of the contingency table sums to zero")]
    ZeroRow(usize),
    #[error("column {0} of the contingency table sums to zero")]
    ZeroColumn(usize),
    #[error("runs {0} and {1} share no questions")]
    Disjoint(String, String),
}

/// Sample Pearson correlation.
///
/// When exactly one vector is constant the covariance is zero and 0 is returned.
pub fn pearson<T: Float + FromPrimitive>(x: &[T], y: &[T]) -> Result<T, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 2 {
        return Err(StatsError::TooFew(n));
    }
    let nf = T::from_usize(n).expect("length fits scalar");
    let mx = x.iter().fold(T::zero(), |a, &v| a + v) / nf;
    let my = y.iter().fold(T::zero(), |a, &v| a + v) / nf;
    let (mut sxy, mut sxx, mut syy) = (T::zero(), T::zero(), T::zero());
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy = sxy + dx * dy;
        sxx = sxx + dx * dx;
        syy = syy + dy * dy;
    }
    match (sxx == T::zero(), syy == T::zero()) {
        (true, true) => Err(StatsError::Undefined),
        (true, false) | (false, true) => Ok(T::zero()),
        _ => {
            let r = sxy / (sxx * syy).sqrt();
            Ok(r.max(-T::one()).min(T::one()))
        }
    }
}

fn lit<T: FromPrimitive>(v: f64) -> T {
    T::from_f64(v).expect("constant fits scalar")
}

/// ln Γ(x) for x > 0 (Lanczos, g = 7).
pub fn ln_gamma<T: Float + FromPrimitive>(x: T) -> T {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_59,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    let half = lit::<T>(0.5);
    if x < half {
        // reflection
        let pi = lit::<T>(std::f64::consts::PI);
        return (pi / (pi * x).sin()).ln() - ln_gamma(T::one() - x);
    }
    let x = x - T::one();
    let mut acc = lit::<T>(COEF[0]);
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        acc = acc + lit::<T>(c) / (x + T::from_usize(i).unwrap());
    }
    let t = x + lit::<T>(7.5);
    lit::<T>(0.5 * (2.0 * std::f64::consts::PI).ln()) + (x + half) * t.ln() - t + acc.ln()
}

const MAX_ITER: usize = 10_000;

/// Regularized upper incomplete gamma Q(a, x).
pub fn gamma_q<T: Float + FromPrimitive>(a: T, x: T) -> T {
    assert!(a > T::zero(), "shape must be positive");
    if x <= T::zero() {
        return T::one();
    }
    if x < a + T::one() {
        T::one() - gamma_p_series(a, x)
    } else {
        gamma_q_continued_fraction(a, x)
    }
}

fn gamma_p_series<T: Float + FromPrimitive>(a: T, x: T) -> T {
    let eps = T::epsilon();
    let mut ap = a;
    let mut del = T::one() / a;
    let mut sum = del;
    for _ in 0..MAX_ITER {
        ap = ap + T::one();
        del = del * x / ap;
        sum = sum + del;
        if del.abs() < sum.abs() * eps {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

fn gamma_q_continued_fraction<T: Float + FromPrimitive>(a: T, x: T) -> T {
    let eps = T::epsilon();
    let tiny = T::min_positive_value() / eps;
    let mut b = x + T::one() - a;
    let mut c = T::one() / tiny;
    let mut d = T::one() / b;
    let mut h = d;
    for i in 1..MAX_ITER {
        let i = T::from_usize(i).unwrap();
        let an = -i * (i - a);
        b = b + lit::<T>(2.0);
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = T::one() / d;
        let delta = d * c;
        h = h * delta;
        if (delta - T::one()).abs() < eps {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

/// Survival function of the chi-square distribution.
pub fn chi_square_sf<T: Float + FromPrimitive>(chi2: T, dof: usize) -> T {
    let half = lit::<T>(0.5);
    gamma_q(T::from_usize(dof).unwrap() * half, chi2 * half)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquare<T> {
    pub chi2: T,
    pub dof: usize,
    pub p: T,
}

/// Pearson chi-square test of independence over a contingency table.
pub fn chi_square<T: Float + FromPrimitive>(table: &[Vec<u64>]) -> Result<ChiSquare<T>, StatsError> {
    let rows = table.len();
    let cols = table.first().map_or(0, Vec::len);
    if rows < 2 || cols < 2 {
        return Err(StatsError::TableShape);
    }
    if table.iter().any(|r| r.len() != cols) {
        return Err(StatsError::Ragged);
    }
    let row_sums: Vec<u64> = table.iter().map(|r| r.iter().sum()).collect();
    let col_sums: Vec<u64> = (0..cols).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    if let Some(i) = row_sums.iter().position(|&s| s == 0) {
        return Err(StatsError::ZeroRow(i));
    }
    if let Some(j) = col_sums.iter().position(|&s| s == 0) {
        return Err(StatsError::ZeroColumn(j));
    }
    let total = T::from_u64(row_sums.iter().sum()).unwrap();
    let mut chi2 = T::zero();
    for (i, row) in table.iter().enumerate() {
        for (j, &obs) in row.iter().enumerate() {
            let expected = T::from_u64(row_sums[i]).unwrap() * T::from_u64(col_sums[j]).unwrap() / total;
            let d = T::from_u64(obs).unwrap() - expected;
            chi2 = chi2 + d * d / expected;
        }
    }
    let dof = (rows - 1) * (cols - 1);
    Ok(ChiSquare {
        chi2,
        dof,
        p: chi_square_sf(chi2, dof),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Factor {
    ResponseCategory,
    BiasSign,
    ShiftDirection,
}

impl Factor {
    pub const ALL: [Factor; 3] = [Factor::ResponseCategory, Factor::BiasSign, Factor::ShiftDirection];

    pub fn label(self) -> &'static str {
        match self {
            Factor::ResponseCategory => "response-category",
            Factor::BiasSign => "bias-sign",
            Factor::ShiftDirection => "shift-direction",
        }
    }

    fn columns(self) -> Vec<String> {
        match self {
            Factor::ResponseCategory => Category::ALL.iter().map(|c| c.to_string()).collect(),
            Factor::BiasSign | Factor::ShiftDirection => {
                vec!["negative".into(), "zero".into(), "positive".into()]
            }
        }
    }
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Factor {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Factor::ALL
            .into_iter()
            .find(|f| f.label() == s)
            .ok_or_else(|| format!("unknown factor {s:?}"))
    }
}

/// The per-question vectors and response counts of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunVectors<T> {
    pub label: String,
    pub bias: BTreeMap<u32, T>,
    pub willingness: BTreeMap<u32, T>,
    /// Empty for initial-phase runs.
    pub shift: BTreeMap<u32, T>,
    /// Response counts indexed by [`Category::index`].
    pub categories: [u64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport<T> {
    pub pair: (String, String),
    pub r_bias: Option<T>,
    pub r_willingness: Option<T>,
    pub r_shift: Option<T>,
    /// Questions present in both runs.
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareReport<T> {
    pub pair: (String, String),
    pub factor: Factor,
    pub columns: Vec<String>,
    pub table: Vec<Vec<u64>>,
    /// Columns that are zero in both runs are left out of the test.
    pub dropped: Vec<String>,
    /// `None` when fewer than two non-empty columns remain.
    pub test: Option<ChiSquare<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison<T> {
    pub correlation: CorrelationReport<T>,
    pub chi_square: Vec<ChiSquareReport<T>>,
}

fn paired<T: Copy>(a: &BTreeMap<u32, T>, b: &BTreeMap<u32, T>) -> (Vec<T>, Vec<T>) {
    a.iter()
        .filter_map(|(id, &x)| b.get(id).map(|&y| (x, y)))
        .unzip()
}

fn correlate<T: Float + FromPrimitive>(a: &BTreeMap<u32, T>, b: &BTreeMap<u32, T>) -> Option<T> {
    let (x, y) = paired(a, b);
    pearson(&x, &y).ok()
}

fn sign_counts<T: Float>(values: &[T]) -> Vec<u64> {
    let mut c = vec![0u64; 3];
    for v in values {
        let i = if *v < T::zero() {
            0
        } else if *v == T::zero() {
            1
        } else {
            2
        };
        c[i] += 1;
    }
    c
}

/// Runs the chi-square test on the non-empty columns of a two-row table.
pub fn chi_square_report<T: Float + FromPrimitive>(
    pair: (String, String),
    factor: Factor,
    table: Vec<Vec<u64>>,
) -> ChiSquareReport<T> {
    let columns = factor.columns();
    let keep: Vec<usize> = (0..columns.len())
        .filter(|&j| table.iter().any(|r| r[j] > 0))
        .collect();
    let dropped = (0..columns.len())
        .filter(|j| !keep.contains(j))
        .map(|j| columns[j].clone())
        .collect();
    let reduced: Vec<Vec<u64>> = table
        .iter()
        .map(|r| keep.iter().map(|&j| r[j]).collect())
        .collect();
    let test = chi_square(&reduced).ok();
    ChiSquareReport {
        pair,
        factor,
        columns,
        table,
        dropped,
        test,
    }
}

/// Correlations on bias, willingness and shift plus chi-square tests on `factors`.
pub fn compare_runs<T: Float + FromPrimitive>(
    a: &RunVectors<T>,
    b: &RunVectors<T>,
    factors: &[Factor],
) -> Result<Comparison<T>, StatsError> {
    let (xa, xb) = paired(&a.bias, &b.bias);
    if xa.is_empty() {
        return Err(StatsError::Disjoint(a.label.clone(), b.label.clone()));
    }
    let pair = (a.label.clone(), b.label.clone());
    let correlation = CorrelationReport {
        pair: pair.clone(),
        r_bias: pearson(&xa, &xb).ok(),
        r_willingness: correlate(&a.willingness, &b.willingness),
        r_shift: correlate(&a.shift, &b.shift),
        n: xa.len(),
    };
    let mut chi = Vec::new();
    for factor in factors {
        let table = match factor {
            Factor::ResponseCategory => vec![a.categories.to_vec(), b.categories.to_vec()],
            Factor::BiasSign => vec![sign_counts(&xa), sign_counts(&xb)],
            Factor::ShiftDirection => {
                let (sa, sb) = paired(&a.shift, &b.shift);
                if sa.is_empty() {
                    continue;
                }
                vec![sign_counts(&sa), sign_counts(&sb)]
            }
        };
        chi.push(chi_square_report(pair.clone(), *factor, table));
    }
    Ok(Comparison {
        correlation,
        chi_square: chi,
    })
}

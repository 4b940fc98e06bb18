//! Rank correlation and multi-rater agreement, generic over the float type.

use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StatsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {need} observations, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("constant input: correlation undefined")]
    Constant,
    #[error("non-finite value in input")]
    NonFinite,
    #[error("row {row} sums to {got} raters, expected {expected}")]
    UnequalRaters { row: usize, expected: u64, got: u64 },
    #[error("chance agreement is 1: kappa undefined")]
    KappaUndefined,
    #[error("empty vote matrix")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport<T> {
    pub rho: T,
    pub n: usize,
}

fn cast<T: Float>(v: f64) -> T {
    T::from(v).expect("float conversion")
}

/// Average ranks (1-based); ties share the mean of their positions.
pub fn average_ranks<T: Float>(xs: &[T]) -> Vec<T> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).expect("finite input"));
    let mut ranks = vec![T::zero(); xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        // positions i..=j, 1-based mean
        let avg = cast::<T>((i + j) as f64 / 2.0 + 1.0);
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

pub fn pearson<T: Float>(x: &[T], y: &[T]) -> Result<T, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(StatsError::TooFew { need: 2, got: x.len() });
    }
    let n = cast::<T>(x.len() as f64);
    let mx = x.iter().fold(T::zero(), |a, &v| a + v) / n;
    let my = y.iter().fold(T::zero(), |a, &v| a + v) / n;
    let (mut sxy, mut sxx, mut syy) = (T::zero(), T::zero(), T::zero());
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy = sxy + dx * dy;
        sxx = sxx + dx * dx;
        syy = syy + dy * dy;
    }
    if sxx == T::zero() || syy == T::zero() {
        return Err(StatsError::Constant);
    }
    let r = sxy / (sxx.sqrt() * syy.sqrt());
    Ok(r.max(-T::one()).min(T::one()))
}

/// Spearman's ρ as the Pearson correlation of average ranks.
pub fn spearman<T: Float>(x: &[T], y: &[T]) -> Result<CorrelationReport<T>, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(StatsError::TooFew { need: 2, got: x.len() });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let rho = pearson(&average_ranks(x), &average_ranks(y))?;
    Ok(CorrelationReport { rho, n: x.len() })
}

/// Fleiss' κ for an items × categories matrix of rater counts.
pub fn fleiss_kappa<T: Float>(votes: &[Vec<u64>]) -> Result<T, StatsError> {
    let first = votes.first().ok_or(StatsError::Empty)?;
    let k = first.len();
    if k == 0 {
        return Err(StatsError::Empty);
    }
    let raters: u64 = first.iter().sum();
    if raters < 2 {
        return Err(StatsError::TooFew {
            need: 2,
            got: raters as usize,
        });
    }
    for (row, r) in votes.iter().enumerate() {
        let got: u64 = r.iter().sum();
        if r.len() != k || got != raters {
            return Err(StatsError::UnequalRaters {
                row,
                expected: raters,
                got,
            });
        }
    }
    let items = cast::<T>(votes.len() as f64);
    let n = cast::<T>(raters as f64);
    let mut column = vec![T::zero(); k];
    let mut p_bar = T::zero();
    for r in votes {
        let mut agree = T::zero();
        for (j, &c) in r.iter().enumerate() {
            let c = cast::<T>(c as f64);
            column[j] = column[j] + c;
            agree = agree + c * (c - T::one());
        }
        p_bar = p_bar + agree / (n * (n - T::one()));
    }
    p_bar = p_bar / items;
    let total = items * n;
    let p_e = column
        .iter()
        .map(|&c| {
            let p = c / total;
            p * p
        })
        .fold(T::zero(), |a, b| a + b);
    let denom = T::one() - p_e;
    if denom.abs() <= T::epsilon() {
        return Err(StatsError::KappaUndefined);
    }
    Ok((p_bar - p_e) / denom)
}

pub fn mean<T: Float>(xs: &[T]) -> Option<T> {
    if xs.is_empty() {
        return None;
    }
    Some(xs.iter().fold(T::zero(), |a, &b| a + b) / cast(xs.len() as f64))
}

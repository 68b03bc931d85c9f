//! Pair selection via the augmented Engle-Granger two-step cointegration
//! test: OLS hedge fit, ADF unit-root test with MacKinnon response-surface
//! p-values, and ranking of a candidate universe by p-value.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::marketdata::{align_pair, AssetSeries, DateRange};

#[derive(Debug, Error)]
pub enum PairSelectError {
    #[error("input series have different lengths")]
    LengthMismatch,
    #[error("regressor is constant")]
    DegenerateRegressor,
    #[error("series too short: {0} observations")]
    SeriesTooShort(usize),
    #[error("singular regression")]
    SingularRegression,
    #[error("need at least two assets, got {0}")]
    UniverseTooSmall(usize),
}

/// First-stage OLS fit y = alpha + beta * x.
#[derive(Debug, Clone, PartialEq)]
pub struct HedgeFit {
    pub alpha: f64,
    pub beta: f64,
    pub residuals: Vec<f64>,
}

/// ADF outcome on the hedge residuals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CointResult {
    pub statistic: f64,
    pub p_value: f64,
    pub lags: usize,
}

// ---------------------------------------------------------------------------
// Small dense least squares
// ---------------------------------------------------------------------------

struct OlsFit {
    coef: Vec<f64>,
    t_ratios: Vec<f64>,
}

/// Least squares of y on the given columns via normal equations with
/// Gauss-Jordan inversion. Small systems only.
fn ols(y: &[f64], cols: &[Vec<f64>]) -> Result<OlsFit, PairSelectError> {
    let n = y.len();
    let k = cols.len();
    if n <= k {
        return Err(PairSelectError::SingularRegression);
    }
    let mut xtx = vec![vec![0.0f64; k]; k];
    let mut xty = vec![0.0f64; k];
    for i in 0..k {
        for j in i..k {
            let s: f64 = (0..n).map(|r| cols[i][r] * cols[j][r]).sum();
            xtx[i][j] = s;
            xtx[j][i] = s;
        }
        xty[i] = (0..n).map(|r| cols[i][r] * y[r]).sum();
    }
    let inv = invert(&xtx)?;
    let coef: Vec<f64> = (0..k)
        .map(|i| (0..k).map(|j| inv[i][j] * xty[j]).sum())
        .collect();
    let mut rss = 0.0;
    for r in 0..n {
        let fit: f64 = (0..k).map(|i| coef[i] * cols[i][r]).sum();
        rss += (y[r] - fit).powi(2);
    }
    let s2 = rss / (n - k) as f64;
    let t_ratios = (0..k)
        .map(|i| {
            let se = (s2 * inv[i][i]).sqrt();
            if se > 0.0 {
                coef[i] / se
            } else {
                f64::INFINITY
            }
        })
        .collect();
    Ok(OlsFit { coef, t_ratios })
}

fn invert(m: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, PairSelectError> {
    let k = m.len();
    let scale: f64 = m
        .iter()
        .flat_map(|row| row.iter().map(|v| v.abs()))
        .fold(0.0, f64::max)
        .max(1.0);
    let mut a: Vec<Vec<f64>> = m
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..k).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..k {
        let piv = (col..k)
            .max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs()))
            .unwrap();
        if a[piv][col].abs() < 1e-12 * scale {
            return Err(PairSelectError::SingularRegression);
        }
        a.swap(col, piv);
        let d = a[col][col];
        for v in a[col].iter_mut() {
            *v /= d;
        }
        for r in 0..k {
            if r != col {
                let f = a[r][col];
                for c in 0..2 * k {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    Ok(a.into_iter().map(|row| row[k..].to_vec()).collect())
}

// ---------------------------------------------------------------------------
// MacKinnon response-surface p-values (constant case, N = 1 and N = 2)
// ---------------------------------------------------------------------------

mod mackinnon {
    // Coefficients for the constant-only tau surfaces, N = 1 (plain ADF)
    // and N = 2 (Engle-Granger residual test with a two-variable first stage).
    const TAU_MAX_C: [f64; 2] = [2.74, 0.92];
    const TAU_MIN_C: [f64; 2] = [-18.83, -18.86];
    const TAU_STAR_C: [f64; 2] = [-1.61, -2.62];
    // ascending powers
    const TAU_C_SMALLP: [[f64; 3]; 2] = [
        [2.1659, 1.4412, 3.8269e-2],
        [2.92, 1.5012, 3.9796e-2],
    ];
    const TAU_C_LARGEP: [[f64; 4]; 2] = [
        [1.7339, 9.3202e-1, -1.2745e-1, -1.0368e-2],
        [2.1945, 6.4695e-1, -2.9198e-1, -4.2377e-2],
    ];

    fn polyval_ascending(coeffs: &[f64], x: f64) -> f64 {
        coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    fn norm_cdf(x: f64) -> f64 {
        use statrs::distribution::{ContinuousCDF, Normal};
        Normal::new(0.0, 1.0).unwrap().cdf(x)
    }

    /// Asymptotic p-value for the ADF tau statistic, constant case,
    /// `n_vars` = 1 for a univariate test, 2 for two-variable cointegration.
    /// Clamped to [0.001, 0.999].
    pub fn p_value(stat: f64, n_vars: usize) -> f64 {
        let i = n_vars - 1;
        let raw = if stat > TAU_MAX_C[i] {
            1.0
        } else if stat < TAU_MIN_C[i] {
            0.0
        } else if stat <= TAU_STAR_C[i] {
            norm_cdf(polyval_ascending(&TAU_C_SMALLP[i], stat))
        } else {
            norm_cdf(polyval_ascending(&TAU_C_LARGEP[i], stat))
        };
        raw.clamp(0.001, 0.999)
    }
}

pub use mackinnon::p_value as mackinnon_p_value;

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Step 1 of Engle-Granger: least-squares intercept and hedge ratio.
pub fn ols_hedge(y: &[f64], x: &[f64]) -> Result<HedgeFit, PairSelectError> {
    if y.len() != x.len() {
        return Err(PairSelectError::LengthMismatch);
    }
    let n = y.len();
    if n < 3 {
        return Err(PairSelectError::SeriesTooShort(n));
    }
    let xm = x.iter().sum::<f64>() / n as f64;
    if x.iter().all(|&v| (v - xm).abs() < 1e-12 * xm.abs().max(1.0)) {
        return Err(PairSelectError::DegenerateRegressor);
    }
    let ones = vec![1.0; n];
    let fit = ols(y, &[ones, x.to_vec()])?;
    let (alpha, beta) = (fit.coef[0], fit.coef[1]);
    let residuals = y
        .iter()
        .zip(x)
        .map(|(&yi, &xi)| yi - alpha - beta * xi)
        .collect();
    Ok(HedgeFit { alpha, beta, residuals })
}

fn schwert_max_lags(n: usize) -> usize {
    let k = (12.0 * (n as f64 / 100.0).powf(0.25)).floor() as usize;
    k.min(n / 2 - 2)
}

struct AdfRegression {
    statistic: f64,
    lags: usize,
}

/// ADF regression of Δs_t on s_{t-1}, k lagged differences and optionally a
/// constant; returns the t-ratio of the s_{t-1} coefficient. Lag order starts
/// at the Schwert bound and longest lags are dropped while insignificant
/// (|t| < 1.645).
fn adf_statistic(
    series: &[f64],
    max_lags: Option<usize>,
    with_const: bool,
) -> Result<AdfRegression, PairSelectError> {
    let n = series.len();
    if n < 20 {
        return Err(PairSelectError::SeriesTooShort(n));
    }
    let diff: Vec<f64> = series.windows(2).map(|w| w[1] - w[0]).collect();
    let mut k = max_lags.unwrap_or_else(|| schwert_max_lags(n));
    loop {
        // rows t = k..diff.len()-1 in diff indexing (Δs_{t+1} regressed)
        let rows = diff.len() - k;
        let y: Vec<f64> = diff[k..].to_vec();
        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(k + 2);
        cols.push(series[k..n - 1].to_vec()); // s_{t-1}
        for lag in 1..=k {
            cols.push(diff[k - lag..diff.len() - lag].to_vec());
        }
        if with_const {
            cols.push(vec![1.0; rows]);
        }
        let fit = ols(&y, &cols)?;
        if k > 0 && fit.t_ratios[k].abs() < 1.645 {
            k -= 1;
            continue;
        }
        return Ok(AdfRegression { statistic: fit.t_ratios[0], lags: k });
    }
}

/// Augmented Dickey-Fuller test with a constant, no trend.
pub fn adf_test(series: &[f64], max_lags: Option<usize>) -> Result<CointResult, PairSelectError> {
    let reg = adf_statistic(series, max_lags, true)?;
    Ok(CointResult {
        statistic: reg.statistic,
        p_value: mackinnon::p_value(reg.statistic, 1),
        lags: reg.lags,
    })
}

/// Two-step Engle-Granger test on a pair of log-price series: OLS hedge fit,
/// then ADF (no constant) on the residuals with the two-variable p-value
/// surface. Returns the hedge fit alongside the test result.
pub fn engle_granger(x: &[f64], y: &[f64]) -> Result<(HedgeFit, CointResult), PairSelectError> {
    if x.len() != y.len() {
        return Err(PairSelectError::LengthMismatch);
    }
    if x.len() < 50 {
        return Err(PairSelectError::SeriesTooShort(x.len()));
    }
    let fit = ols_hedge(y, x)?;
    let scale = fit
        .residuals
        .iter()
        .map(|r| r * r)
        .sum::<f64>()
        / fit.residuals.len() as f64;
    let level = y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64;
    if scale < 1e-24 * level.max(1.0) {
        // perfect fit: residuals numerically zero, maximal evidence
        return Ok((fit, CointResult { statistic: -1e3, p_value: 0.001, lags: 0 }));
    }
    let reg = adf_statistic(&fit.residuals, None, false)?;
    let result = CointResult {
        statistic: reg.statistic,
        p_value: mackinnon::p_value(reg.statistic, 2),
        lags: reg.lags,
    };
    Ok((fit, result))
}

/// One ranked candidate pair. Symbols are lexicographically ordered; the
/// regression is y-on-x in that order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankedPair {
    pub symbol_x: String,
    pub symbol_y: String,
    pub beta: f64,
    pub result: CointResult,
}

#[derive(Debug, Clone, Default)]
pub struct RankOutcome {
    pub ranked: Vec<RankedPair>,
    pub skipped: Vec<String>,
}

/// Test every C(n,2) pair on log closes over `fit_range` and sort ascending
/// by p-value (ties by symbol names). Pairs failing preconditions are skipped
/// with a recorded warning.
pub fn rank_pairs(
    universe: &[AssetSeries],
    fit_range: &DateRange,
) -> Result<RankOutcome, PairSelectError> {
    if universe.len() < 2 {
        return Err(PairSelectError::UniverseTooSmall(universe.len()));
    }
    let mut combos = Vec::new();
    for i in 0..universe.len() {
        for j in i + 1..universe.len() {
            let (a, b) = if universe[i].symbol <= universe[j].symbol {
                (i, j)
            } else {
                (j, i)
            };
            combos.push((a, b));
        }
    }
    let evaluated: Vec<Result<RankedPair, String>> = combos
        .par_iter()
        .map(|&(a, b)| {
            let name = format!("{}-{}", universe[a].symbol, universe[b].symbol);
            let pair = align_pair(&universe[a], &universe[b])
                .map_err(|e| format!("{name}: {e}"))?;
            let (sidx, eidx) = pair.index_range(fit_range);
            let lx: Vec<f64> = pair.x.rows[sidx..eidx].iter().map(|r| r.close.ln()).collect();
            let ly: Vec<f64> = pair.y.rows[sidx..eidx].iter().map(|r| r.close.ln()).collect();
            let (fit, result) = engle_granger(&lx, &ly).map_err(|e| format!("{name}: {e}"))?;
            Ok(RankedPair {
                symbol_x: pair.x.symbol.clone(),
                symbol_y: pair.y.symbol.clone(),
                beta: fit.beta,
                result,
            })
        })
        .collect();
    let mut out = RankOutcome::default();
    for r in evaluated {
        match r {
            Ok(p) => out.ranked.push(p),
            Err(w) => out.skipped.push(w),
        }
    }
    out.ranked.sort_by(|a, b| {
        a.result
            .p_value
            .total_cmp(&b.result.p_value)
            .then_with(|| a.symbol_x.cmp(&b.symbol_x))
            .then_with(|| a.symbol_y.cmp(&b.symbol_y))
    });
    Ok(out)
}

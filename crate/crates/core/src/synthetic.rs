//! Deterministic synthetic market generators used by tests, verification and
//! the end-to-end fixture: a cointegrated pair with a mean-reverting
//! log-spread, and a noise-free alternating-spread pair.

use chrono::{Datelike, NaiveDate, Weekday};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::marketdata::{AssetSeries, EodRow, PairSeries};

/// Parameters of the cointegrated fixture: ln p^Y is a random walk and
/// ln p^X = ln p^Y + s_t where s_t is a stationary AR(1) (discretized
/// Ornstein-Uhlenbeck) spread.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuParams {
    pub days: usize,
    /// Daily volatility of the common random-walk component.
    pub rw_vol: f64,
    /// Mean-reversion rate; half-life = ln 2 / theta days.
    pub theta: f64,
    /// Innovation volatility of the spread.
    pub sigma: f64,
    /// Relative scale of the overnight open-vs-close gap.
    pub open_gap: f64,
    /// Log-scale volume noise.
    pub vol_noise: f64,
    pub start: NaiveDate,
}

impl Default for OuParams {
    fn default() -> Self {
        OuParams {
            days: 430,
            rw_vol: 0.01,
            theta: std::f64::consts::LN_2 / 10.0,
            sigma: 0.008,
            open_gap: 0.002,
            vol_noise: 0.1,
            start: NaiveDate::from_ymd_opt(2020, 1, 6).unwrap(),
        }
    }
}

/// The first `n` business days (Mon-Fri) on or after `start`.
pub fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d.succ_opt().unwrap();
    }
    out
}

fn rows_from_log_closes(
    dates: &[NaiveDate],
    log_closes: &[f64],
    params: &OuParams,
    rng: &mut ChaCha8Rng,
) -> Vec<EodRow> {
    log_closes
        .iter()
        .zip(dates)
        .map(|(&lc, &date)| {
            let close = lc.exp();
            let gap: f64 = rng.sample::<f64, _>(StandardNormal) * params.open_gap;
            let vol_noise: f64 = rng.sample::<f64, _>(StandardNormal) * params.vol_noise;
            EodRow {
                date,
                open: close * (1.0 + gap),
                close,
                volume: 1.0e6 * vol_noise.exp(),
            }
        })
        .collect()
}

/// Generate a cointegrated pair whose log-spread mean-reverts.
pub fn ou_pair(params: &OuParams, seed: u64) -> PairSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dates = business_days(params.start, params.days);
    let phi = (-params.theta).exp();
    let mut ln_y = 50.0f64.ln();
    let mut spread = 0.0;
    let mut ly = Vec::with_capacity(params.days);
    let mut lx = Vec::with_capacity(params.days);
    for _ in 0..params.days {
        ly.push(ln_y);
        lx.push(ln_y + spread);
        let ey: f64 = rng.sample(StandardNormal);
        let es: f64 = rng.sample(StandardNormal);
        ln_y += params.rw_vol * ey;
        spread = phi * spread + params.sigma * es;
    }
    let xr = rows_from_log_closes(&dates, &lx, params, &mut rng);
    let yr = rows_from_log_closes(&dates, &ly, params, &mut rng);
    PairSeries {
        x: AssetSeries::new("SYN_X", xr).unwrap(),
        y: AssetSeries::new("SYN_Y", yr).unwrap(),
    }
}

/// Noise-free learnability fixture: r^X - r^Y alternates exactly
/// +amplitude, -amplitude every day (both legs move half of it).
pub fn alternating_pair(days: usize, amplitude: f64) -> PairSeries {
    let start = NaiveDate::from_ymd_opt(2020, 1, 6).unwrap();
    let dates = business_days(start, days);
    let half = amplitude / 2.0;
    let mut px = 100.0;
    let mut py = 50.0;
    let mut xr = Vec::with_capacity(days);
    let mut yr = Vec::with_capacity(days);
    for (t, &date) in dates.iter().enumerate() {
        // deterministic but non-constant volume so every channel has variance
        let vol = 1.0e6 + 1.0e4 * ((t * 37) % 17) as f64;
        xr.push(EodRow { date, open: px, close: px, volume: vol });
        yr.push(EodRow { date, open: py, close: py, volume: vol + 500.0 });
        let sign = if t % 2 == 0 { 1.0 } else { -1.0 };
        px *= 1.0 + sign * half;
        py *= 1.0 - sign * half;
    }
    PairSeries {
        x: AssetSeries::new("ALT_X", xr).unwrap(),
        y: AssetSeries::new("ALT_Y", yr).unwrap(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::marketdata::simple_return;

    #[test]
    fn business_days_skip_weekends() {
        let days = business_days(NaiveDate::from_ymd_opt(2020, 1, 3).unwrap(), 5);
        // Fri 3rd, then Mon 6th .. Thu 9th
        assert_eq!(days[0], NaiveDate::from_ymd_opt(2020, 1, 3).unwrap());
        assert_eq!(days[1], NaiveDate::from_ymd_opt(2020, 1, 6).unwrap());
        assert_eq!(days.len(), 5);
        assert!(days.iter().all(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun)));
    }

    #[test]
    fn ou_pair_is_deterministic_and_sized() {
        let p = OuParams { days: 100, ..OuParams::default() };
        let a = ou_pair(&p, 3);
        let b = ou_pair(&p, 3);
        assert_eq!(a.len(), 100);
        assert_eq!(a.x.rows, b.x.rows);
        assert_eq!(a.y.rows, b.y.rows);
        let c = ou_pair(&p, 4);
        assert_ne!(a.x.rows, c.x.rows);
    }

    #[test]
    fn ou_spread_is_stationary_scale() {
        let p = OuParams { days: 2000, ..OuParams::default() };
        let pair = ou_pair(&p, 11);
        let spreads: Vec<f64> = pair
            .x
            .rows
            .iter()
            .zip(&pair.y.rows)
            .map(|(x, y)| x.close.ln() - y.close.ln())
            .collect();
        let mean = spreads.iter().sum::<f64>() / spreads.len() as f64;
        let var = spreads.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / spreads.len() as f64;
        let phi = (-p.theta).exp();
        let expect = p.sigma * p.sigma / (1.0 - phi * phi);
        // within a factor of two of the stationary variance
        assert!(var > expect / 2.0 && var < expect * 2.0, "var={var} expect={expect}");
    }

    #[test]
    fn alternating_pair_return_difference_is_exact() {
        let pair = alternating_pair(40, 0.005);
        for t in 1..40 {
            let rx = simple_return(&pair.x, t).unwrap();
            let ry = simple_return(&pair.y, t).unwrap();
            let sign = if (t - 1) % 2 == 0 { 1.0 } else { -1.0 };
            assert!((rx - ry - sign * 0.005).abs() < 1e-12);
        }
    }
}
